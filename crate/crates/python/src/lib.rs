//! Python bindings. Maps cross the boundary as nested lists (`list[list[int]]`
//! for labels, `list[list[float]]` for heatmaps and offsets).

use panedge::edgegen::{self, EdgeWidth, InstanceCenter, OffsetField};
use panedge::fusion::{self, FusionParams};
use panedge::label;
use panedge::metrics::{self, EvalOptions};
use panedge::numerics::{self, AdaSoftMaxParam, GradCheckConfig, Tensor3};
use panedge::synth::{self, SynthParams};
use panedge::tensor_io::{self, TensorData, TensorFile};
use panedge::{CategoryTaxonomy, Error, Grid};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::IoFailure { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid<T: Copy>(rows: Vec<Vec<T>>) -> PyResult<Grid<T>> {
    Grid::from_rows(&rows).map_err(to_py)
}

/// Category partition and label stride.
#[pyclass(name = "Taxonomy", module = "panedge_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTaxonomy {
    inner: CategoryTaxonomy,
}

#[pymethods]
impl PyTaxonomy {
    #[new]
    #[pyo3(signature = (num_categories, thing_categories, stuff_categories, instance_stride = 1000))]
    fn new(num_categories: u16, thing_categories: Vec<u16>, stuff_categories: Vec<u16>, instance_stride: u32) -> PyResult<Self> {
        CategoryTaxonomy::new(num_categories, thing_categories, stuff_categories, instance_stride)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// 19 categories: things 1-8, stuff 9-19, stride 1000.
    #[staticmethod]
    fn cityscapes() -> Self {
        Self { inner: CategoryTaxonomy::cityscapes() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CategoryTaxonomy::from_toml_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn num_categories(&self) -> u16 {
        self.inner.num_categories()
    }

    #[getter]
    fn stride(&self) -> u32 {
        self.inner.stride()
    }

    fn is_thing(&self, category: u16) -> bool {
        self.inner.is_thing(category)
    }

    fn is_stuff(&self, category: u16) -> bool {
        self.inner.is_stuff(category)
    }

    fn encode(&self, category: u16, instance_id: u32) -> PyResult<u32> {
        self.inner.encode(category, instance_id).map_err(to_py)
    }

    /// `(category, instance_id)`, or `None` for a non-edge pixel.
    fn decode(&self, label: u32) -> PyResult<Option<(u16, u32)>> {
        Ok(self.inner.decode(label).map_err(to_py)?.map(|l| (l.category, l.instance_id)))
    }

    fn __repr__(&self) -> String {
        format!("Taxonomy(num_categories={}, stride={})", self.inner.num_categories(), self.inner.stride())
    }
}

fn taxonomy_or_default(taxonomy: Option<PyRef<'_, PyTaxonomy>>) -> CategoryTaxonomy {
    taxonomy.map_or_else(CategoryTaxonomy::cityscapes, |t| t.inner.clone())
}

type Centers = Vec<(u16, u32, f64, f64)>;

fn centers_from_py(centers: Centers) -> Vec<InstanceCenter> {
    centers
        .into_iter()
        .map(|(category, instance_id, cy, cx)| InstanceCenter { category, instance_id, cy, cx })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (seg, radius = 2, taxonomy = None))]
fn panoptic_to_edges(seg: Vec<Vec<u32>>, radius: u32, taxonomy: Option<PyRef<'_, PyTaxonomy>>) -> PyResult<Vec<Vec<u32>>> {
    let width = EdgeWidth::new(radius).map_err(to_py)?;
    let edges = edgegen::panoptic_to_edges(&grid(seg)?, width, &taxonomy_or_default(taxonomy)).map_err(to_py)?;
    Ok(edges.rows())
}

/// `(category, instance_id, cy, cx)` for every thing instance, sorted by label.
#[pyfunction]
#[pyo3(signature = (edges, taxonomy = None))]
fn instance_centers(edges: Vec<Vec<u32>>, taxonomy: Option<PyRef<'_, PyTaxonomy>>) -> PyResult<Centers> {
    let centers = edgegen::instance_centers(&grid(edges)?, &taxonomy_or_default(taxonomy));
    Ok(centers.into_iter().map(|c| (c.category, c.instance_id, c.cy, c.cx)).collect())
}

#[pyfunction]
#[pyo3(signature = (centers, height, width, sigma = None))]
fn center_heatmap(centers: Centers, height: usize, width: usize, sigma: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let sigma = sigma.unwrap_or_else(|| edgegen::default_sigma(height, width));
    let heatmap = edgegen::make_center_heatmap(&centers_from_py(centers), height, width, sigma).map_err(to_py)?;
    Ok(heatmap.rows())
}

/// `(dy, dx)` offsets from each thing-edge pixel to its instance center.
#[pyfunction]
#[pyo3(signature = (edges, centers, taxonomy = None))]
fn offset_field(
    edges: Vec<Vec<u32>>,
    centers: Centers,
    taxonomy: Option<PyRef<'_, PyTaxonomy>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let field = edgegen::make_offset_field(&grid(edges)?, &centers_from_py(centers), &taxonomy_or_default(taxonomy))
        .map_err(to_py)?;
    Ok((field.dy.rows(), field.dx.rows()))
}

/// Edges, semantic map, centers, heatmap and offsets for a segmentation.
#[pyfunction]
#[pyo3(signature = (seg, radius = 2, sigma = None, taxonomy = None))]
fn make_targets<'py>(
    py: Python<'py>,
    seg: Vec<Vec<u32>>,
    radius: u32,
    sigma: Option<f64>,
    taxonomy: Option<PyRef<'_, PyTaxonomy>>,
) -> PyResult<Bound<'py, PyDict>> {
    let seg = grid(seg)?;
    let sigma = sigma.unwrap_or_else(|| edgegen::default_sigma(seg.height(), seg.width()));
    let width = EdgeWidth::new(radius).map_err(to_py)?;
    let t = edgegen::make_targets(&seg, width, sigma, &taxonomy_or_default(taxonomy)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("edges", t.edges.rows())?;
    out.set_item("semantic", t.semantic.rows())?;
    let centers: Centers = t.centers.iter().map(|c| (c.category, c.instance_id, c.cy, c.cx)).collect();
    out.set_item("centers", centers)?;
    out.set_item("heatmap", t.heatmap.rows())?;
    out.set_item("offsets_dy", t.offsets.dy.rows())?;
    out.set_item("offsets_dx", t.offsets.dx.rows())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (
    semantic, heatmap, offsets_dy, offsets_dx,
    center_threshold = FusionParams::DEFAULT_THRESHOLD,
    nms_window = FusionParams::DEFAULT_NMS_WINDOW,
    max_instances = FusionParams::DEFAULT_MAX_INSTANCES,
    taxonomy = None,
))]
#[allow(clippy::too_many_arguments)]
fn fuse_panoptic(
    semantic: Vec<Vec<u16>>,
    heatmap: Vec<Vec<f64>>,
    offsets_dy: Vec<Vec<f64>>,
    offsets_dx: Vec<Vec<f64>>,
    center_threshold: f64,
    nms_window: usize,
    max_instances: usize,
    taxonomy: Option<PyRef<'_, PyTaxonomy>>,
) -> PyResult<Vec<Vec<u32>>> {
    let params = FusionParams::new(center_threshold, nms_window, max_instances, taxonomy_or_default(taxonomy))
        .map_err(to_py)?;
    let offsets = OffsetField::new(grid(offsets_dy)?, grid(offsets_dx)?).map_err(to_py)?;
    let fused = fusion::fuse_panoptic(&grid(semantic)?, &grid(heatmap)?, &offsets, &params).map_err(to_py)?;
    Ok(fused.rows())
}

/// Edge PQ report as a dict (same layout as the CLI's JSON report).
#[pyfunction]
#[pyo3(signature = (pred, gt, threshold = metrics::DEFAULT_IOU_THRESHOLD, dilation = 0, taxonomy = None))]
fn edge_pq<'py>(
    py: Python<'py>,
    pred: Vec<Vec<u32>>,
    gt: Vec<Vec<u32>>,
    threshold: f64,
    dilation: usize,
    taxonomy: Option<PyRef<'_, PyTaxonomy>>,
) -> PyResult<Bound<'py, PyAny>> {
    let options = EvalOptions { threshold, dilation, ignore: None };
    let report = metrics::edge_pq(&grid(pred)?, &grid(gt)?, &taxonomy_or_default(taxonomy), &options).map_err(to_py)?;
    py.import("json")?.call_method1("loads", (report.to_json(),))
}

#[pyfunction]
#[pyo3(signature = (map, taxonomy = None))]
fn canonicalize_instance_ids(map: Vec<Vec<u32>>, taxonomy: Option<PyRef<'_, PyTaxonomy>>) -> PyResult<Vec<Vec<u32>>> {
    Ok(label::canonicalize_instance_ids(&grid(map)?, &taxonomy_or_default(taxonomy)).rows())
}

/// Human-readable violations; empty when the map is valid.
#[pyfunction]
#[pyo3(signature = (map, taxonomy = None))]
fn validate_map(map: Vec<Vec<u32>>, taxonomy: Option<PyRef<'_, PyTaxonomy>>) -> PyResult<Vec<String>> {
    let report = label::validate_map(&grid(map)?, &taxonomy_or_default(taxonomy));
    Ok(report.violations.iter().map(ToString::to_string).collect())
}

#[pyfunction]
#[pyo3(signature = (
    seed = 0, height = 64, width = 64, max_instances = 8, min_instance_size = 8,
    radius = 2, min_center_distance = None, taxonomy = None,
))]
#[allow(clippy::too_many_arguments)]
fn generate_scene(
    seed: u64,
    height: usize,
    width: usize,
    max_instances: usize,
    min_instance_size: usize,
    radius: u32,
    min_center_distance: Option<f64>,
    taxonomy: Option<PyRef<'_, PyTaxonomy>>,
) -> PyResult<Vec<Vec<u32>>> {
    let params = SynthParams {
        height,
        width,
        max_instances,
        min_instance_size,
        taxonomy: taxonomy_or_default(taxonomy),
        seed,
        edge_radius: radius,
        min_center_distance,
        ..SynthParams::default()
    };
    Ok(synth::generate_scene(&params).map_err(to_py)?.rows())
}

/// Softmax over the channel axis of `logits[c][y][x]` after dividing by `temperature`.
#[pyfunction]
#[pyo3(signature = (logits, temperature = 1.0))]
fn ada_softmax(logits: Vec<Vec<Vec<f64>>>, temperature: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let (c, h) = (logits.len(), logits.first().map_or(0, Vec::len));
    let w = logits.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let flat: Vec<f64> = logits.into_iter().flatten().flatten().collect();
    let t = Tensor3::from_vec(c, h, w, flat).map_err(to_py)?;
    let p = numerics::ada_softmax(&t, AdaSoftMaxParam::new(temperature).map_err(to_py)?);
    Ok((0..c).map(|ch| (0..h).map(|y| (0..w).map(|x| p.get(ch, y, x)).collect()).collect()).collect())
}

/// `[(suite, trials, max_relative_error, passed)]`.
#[pyfunction]
#[pyo3(signature = (trials = 100, tolerance = 1e-4, seed = 0))]
fn run_gradcheck(trials: usize, tolerance: f64, seed: u64) -> PyResult<Vec<(String, usize, f64, bool)>> {
    let report = numerics::run_gradcheck(&GradCheckConfig { trials, tolerance, seed }).map_err(to_py)?;
    Ok(report.suites.into_iter().map(|s| (s.name.to_string(), s.trials, s.max_relative_error, s.passed)).collect())
}

/// Reads a tensor file as `(dtype, dims, flat_values)` with dtype one of "u16", "f32", "u32".
#[pyfunction]
fn read_tensor(py: Python<'_>, path: &str) -> PyResult<(String, Vec<u32>, Py<PyAny>)> {
    let t = tensor_io::read_tensor(path).map_err(to_py)?;
    let dims = t.dims().to_vec();
    let (dtype, values) = match t.data() {
        TensorData::U16(v) => ("u16", v.clone().into_pyobject(py)?.into_any().unbind()),
        TensorData::F32(v) => ("f32", v.clone().into_pyobject(py)?.into_any().unbind()),
        TensorData::U32(v) => ("u32", v.clone().into_pyobject(py)?.into_any().unbind()),
    };
    Ok((dtype.to_string(), dims, values))
}

/// Writes flat row-major `values` with the given dtype ("u16", "f32" or "u32") and dims.
#[pyfunction]
fn write_tensor(path: &str, dtype: &str, dims: Vec<u32>, values: &Bound<'_, PyAny>) -> PyResult<()> {
    let data = match dtype {
        "u16" => TensorData::U16(values.extract()?),
        "f32" => TensorData::F32(values.extract()?),
        "u32" => TensorData::U32(values.extract()?),
        other => return Err(PyValueError::new_err(format!("unknown dtype {other:?}"))),
    };
    let tensor = TensorFile::new(dims, data).map_err(to_py)?;
    tensor_io::write_tensor(path, &tensor).map_err(to_py)
}

#[pymodule]
fn panedge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaxonomy>()?;
    m.add_function(wrap_pyfunction!(panoptic_to_edges, m)?)?;
    m.add_function(wrap_pyfunction!(instance_centers, m)?)?;
    m.add_function(wrap_pyfunction!(center_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(offset_field, m)?)?;
    m.add_function(wrap_pyfunction!(make_targets, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_panoptic, m)?)?;
    m.add_function(wrap_pyfunction!(edge_pq, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize_instance_ids, m)?)?;
    m.add_function(wrap_pyfunction!(validate_map, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(ada_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    Ok(())
}
