//! Synthetic panoptic scenes and controlled prediction perturbations.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; its output stream is fixed by the algorithm, so scenes are
//! identical on every platform for a given seed.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edgegen::{instance_centers, make_center_heatmap, panoptic_to_edges, CenterHeatmap, EdgeWidth, OffsetField};
use crate::error::{Error, Result};
use crate::fusion::{extract_centers, FusionParams};
use crate::grid::Grid;
use crate::label::{canonicalize_instance_ids, CategoryTaxonomy, PanopticSegMap, SemanticEdgeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub max_instances: usize,
    /// Smallest shape extent in pixels; also the fewest visible pixels an
    /// instance may keep after occlusion.
    pub min_instance_size: usize,
    pub shape_kinds: Vec<ShapeKind>,
    pub taxonomy: CategoryTaxonomy,
    pub seed: u64,
    /// Edge width the scene is meant for; drives the size and separation checks.
    pub edge_radius: u32,
    /// Minimum Euclidean distance between instance edge centroids.
    pub min_center_distance: Option<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            max_instances: 8,
            min_instance_size: 8,
            shape_kinds: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            taxonomy: CategoryTaxonomy::cityscapes(),
            seed: 0,
            edge_radius: 2,
            min_center_distance: None,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let infeasible = |msg: String| Err(Error::InfeasibleParams(msg));
        let r = self.edge_radius as usize;
        if r == 0 {
            return infeasible("edge radius must be at least 1".into());
        }
        if self.min_instance_size < 2 * (r + 1) {
            return infeasible(format!(
                "min instance size {} is below 2(r+1) = {}",
                self.min_instance_size,
                2 * (r + 1)
            ));
        }
        if self.height < 2 * self.min_instance_size || self.width < 2 * self.min_instance_size {
            return infeasible(format!(
                "canvas {}x{} cannot hold shapes of size {} with background around them",
                self.height, self.width, self.min_instance_size
            ));
        }
        if self.taxonomy.stuff_categories().next().is_none() {
            return infeasible("taxonomy has no stuff category for the background".into());
        }
        let things = self.taxonomy.thing_categories().count();
        if self.max_instances > 0 {
            if things == 0 {
                return infeasible("instances requested but taxonomy has no thing category".into());
            }
            if self.shape_kinds.is_empty() {
                return infeasible("no shape kinds enabled".into());
            }
        }
        if (self.max_instances as u64) * (things as u64) >= u64::from(self.taxonomy.stride()) {
            return infeasible("max_instances times thing-category count must stay below the stride".into());
        }
        if let Some(d) = self.min_center_distance {
            if !(d >= 0.0) || !d.is_finite() {
                return infeasible(format!("minimum center distance must be finite and >= 0, got {d}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    label: u32,
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
}

impl Shape {
    fn covers(&self, y: usize, x: usize) -> bool {
        if y < self.top || x < self.left || y >= self.top + self.rows || x >= self.left + self.cols {
            return false;
        }
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let ry = self.rows as f64 / 2.0;
                let rx = self.cols as f64 / 2.0;
                let dy = (y - self.top) as f64 + 0.5 - ry;
                let dx = (x - self.left) as f64 + 0.5 - rx;
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
        }
    }
}

fn render(background: &Grid<u32>, shapes: &[Shape]) -> Grid<u32> {
    let mut map = background.clone();
    for s in shapes {
        for y in s.top..s.top + s.rows {
            for x in s.left..s.left + s.cols {
                if s.covers(y, x) {
                    map.set(y, x, s.label);
                }
            }
        }
    }
    map
}

fn stuff_background(params: &SynthParams, rng: &mut ChaCha8Rng) -> Grid<u32> {
    let stuff: Vec<u16> = params.taxonomy.stuff_categories().collect();
    let bands = rng.random_range(1..=3usize).min(params.height);
    let mut cuts: Vec<usize> = Vec::new();
    while cuts.len() + 1 < bands {
        let c = rng.random_range(1..params.height);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut categories: Vec<u16> = Vec::with_capacity(bands);
    for _ in 0..bands {
        let mut c = *stuff.choose(rng).expect("stuff exists");
        if stuff.len() > 1 {
            while categories.last() == Some(&c) {
                c = *stuff.choose(rng).expect("stuff exists");
            }
        }
        categories.push(c);
    }
    let stride = params.taxonomy.stride();
    Grid::from_fn(params.height, params.width, |y, _| {
        let band = cuts.iter().filter(|&&c| y >= c).count();
        u32::from(categories[band]) * stride
    })
}

fn visible_counts(map: &Grid<u32>, shapes: &[Shape]) -> Vec<usize> {
    shapes
        .iter()
        .map(|s| map.as_slice().iter().filter(|&&l| l == s.label).count())
        .collect()
}

fn centers_separated(map: &PanopticSegMap, params: &SynthParams) -> Result<bool> {
    let Some(min_dist) = params.min_center_distance else { return Ok(true) };
    let edges = panoptic_to_edges(map, EdgeWidth::new(params.edge_radius)?, &params.taxonomy)?;
    let centers = instance_centers(&edges, &params.taxonomy);
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            let d = ((a.cy - b.cy).powi(2) + (a.cx - b.cx).powi(2)).sqrt();
            if d < min_dist {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Draws a random scene: 1 to 3 horizontal stuff bands under up to
/// `max_instances` rectangles and ellipses.
pub fn generate_scene(params: &SynthParams) -> Result<PanopticSegMap> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let background = stuff_background(params, &mut rng);
    if params.max_instances == 0 {
        return Ok(background);
    }
    let things: Vec<u16> = params.taxonomy.thing_categories().collect();
    let stride = params.taxonomy.stride();
    let target = rng.random_range(params.max_instances.div_ceil(2)..=params.max_instances);
    let max_extent = |side: usize| (side / 3).max(params.min_instance_size);
    let mut next_id = vec![0u32; usize::from(params.taxonomy.num_categories()) + 1];
    let mut shapes: Vec<Shape> = Vec::new();
    let mut map = background.clone();

    for _ in 0..target * 25 {
        if shapes.len() >= target {
            break;
        }
        let category = *things.choose(&mut rng).expect("things exist");
        let kind = *params.shape_kinds.choose(&mut rng).expect("kinds exist");
        let rows = rng.random_range(params.min_instance_size..=max_extent(params.height));
        let cols = rng.random_range(params.min_instance_size..=max_extent(params.width));
        let top = rng.random_range(0..=params.height - rows);
        let left = rng.random_range(0..=params.width - cols);
        let id = next_id[usize::from(category)] + 1;
        let shape = Shape { kind, label: u32::from(category) * stride + id, top, left, rows, cols };

        let mut candidate = shapes.clone();
        candidate.push(shape);
        let mut rendered = render(&background, &candidate);
        // drop instances that occlusion shrank below the minimum, then re-render
        loop {
            let counts = visible_counts(&rendered, &candidate);
            let keep: Vec<bool> = counts.iter().map(|&n| n >= params.min_instance_size).collect();
            if keep.iter().all(|&k| k) {
                break;
            }
            candidate = candidate.iter().zip(&keep).filter(|(_, &k)| k).map(|(s, _)| *s).collect();
            rendered = render(&background, &candidate);
        }
        if !candidate.iter().any(|s| s.label == shape.label) {
            continue;
        }
        if !centers_separated(&rendered, params)? {
            continue;
        }
        next_id[usize::from(category)] = id;
        shapes = candidate;
        map = rendered;
    }
    Ok(canonicalize_instance_ids(&map, &params.taxonomy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbParams {
    pub semantic_flip_rate: f64,
    /// Std of the Gaussian displacement applied to each heatmap peak, in pixels.
    pub center_jitter: f64,
    /// Std of the Gaussian noise added to thing-edge offsets, in pixels.
    pub offset_noise: f64,
    /// Gaussian sigma used to re-render a jittered heatmap.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self { semantic_flip_rate: 0.0, center_jitter: 0.0, offset_noise: 0.0, sigma: 1.0, seed: 0 }
    }
}

/// Degrades a ground-truth prediction triple.
///
/// Thing-edge pixels for the offset noise are taken from the unperturbed
/// semantic map. Heatmap peaks are found with the default fusion clustering.
pub fn perturb_prediction(
    semantic: &SemanticEdgeMap,
    heatmap: &CenterHeatmap,
    offsets: &OffsetField,
    params: &PerturbParams,
    taxonomy: &CategoryTaxonomy,
) -> Result<(SemanticEdgeMap, CenterHeatmap, OffsetField)> {
    semantic.check_shape(heatmap)?;
    semantic.check_shape(&offsets.dy)?;
    semantic.check_shape(&offsets.dx)?;
    let valid_rate = (0.0..=1.0).contains(&params.semantic_flip_rate);
    if !valid_rate || !(params.center_jitter >= 0.0) || !(params.offset_noise >= 0.0) {
        return Err(Error::InfeasibleParams(format!("perturbation magnitudes must be non-negative: {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let k = taxonomy.num_categories();

    let mut flipped = semantic.clone();
    if params.semantic_flip_rate > 0.0 && k > 1 {
        for c in flipped.as_mut_slice() {
            if *c != 0 && rng.random_bool(params.semantic_flip_rate) {
                // uniform over the other K - 1 categories
                let draw = rng.random_range(1..k);
                *c = if draw >= *c { draw + 1 } else { draw };
            }
        }
    }

    let new_heatmap = if params.center_jitter > 0.0 {
        let jitter = Normal::new(0.0, params.center_jitter).map_err(|e| Error::InfeasibleParams(e.to_string()))?;
        let peaks = extract_centers(heatmap, &FusionParams::with_taxonomy(taxonomy.clone()));
        let (h, w) = heatmap.shape();
        let moved: Vec<_> = peaks
            .iter()
            .map(|p| crate::edgegen::InstanceCenter {
                category: 0,
                instance_id: 0,
                cy: (p.row as f64 + jitter.sample(&mut rng)).clamp(0.0, (h - 1) as f64),
                cx: (p.col as f64 + jitter.sample(&mut rng)).clamp(0.0, (w - 1) as f64),
            })
            .collect();
        make_center_heatmap(&moved, h, w, params.sigma)?
    } else {
        heatmap.clone()
    };

    let mut new_offsets = offsets.clone();
    if params.offset_noise > 0.0 {
        let noise = Normal::new(0.0, params.offset_noise).map_err(|e| Error::InfeasibleParams(e.to_string()))?;
        for (row, col, c) in semantic.indexed() {
            if taxonomy.is_thing(c) {
                let (dy, dx) = new_offsets.at(row, col);
                new_offsets.dy.set(row, col, dy + noise.sample(&mut rng));
                new_offsets.dx.set(row, col, dx + noise.sample(&mut rng));
            }
        }
    }
    Ok((flipped, new_heatmap, new_offsets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edgegen::make_targets;
    use crate::label::{distinct_labels, validate_map};

    #[test]
    fn deterministic_in_seed() {
        let p = SynthParams { seed: 42, ..SynthParams::default() };
        assert_eq!(generate_scene(&p).unwrap(), generate_scene(&p).unwrap());
        let q = SynthParams { seed: 43, ..SynthParams::default() };
        assert_ne!(generate_scene(&p).unwrap(), generate_scene(&q).unwrap());
    }

    #[test]
    fn zero_instances_is_stuff_only() {
        let p = SynthParams { max_instances: 0, seed: 5, ..SynthParams::default() };
        let scene = generate_scene(&p).unwrap();
        assert!(scene.as_slice().iter().all(|&l| p.taxonomy.is_stuff((l / 1000) as u16) && l % 1000 == 0));
    }

    #[test]
    fn infeasible_params_rejected() {
        let small = SynthParams { height: 10, width: 10, ..SynthParams::default() };
        assert!(matches!(generate_scene(&small), Err(Error::InfeasibleParams(_))));
        let thin = SynthParams { min_instance_size: 5, edge_radius: 2, ..SynthParams::default() };
        assert!(generate_scene(&thin).is_err());
        let too_many = SynthParams { max_instances: 200, ..SynthParams::default() };
        assert!(generate_scene(&too_many).is_err());
    }

    #[test]
    fn scenes_contain_instances() {
        let p = SynthParams { seed: 7, ..SynthParams::default() };
        let scene = generate_scene(&p).unwrap();
        let things = distinct_labels(&scene).into_iter().filter(|&l| p.taxonomy.is_thing((l / 1000) as u16)).count();
        assert!(things >= 1);
    }

    #[test]
    fn generated_edges_validate() {
        for seed in 0..20 {
            let p = SynthParams { seed, ..SynthParams::default() };
            let scene = generate_scene(&p).unwrap();
            for r in [1, 2] {
                let edges = panoptic_to_edges(&scene, EdgeWidth::new(r).unwrap(), &p.taxonomy).unwrap();
                assert!(validate_map(&edges, &p.taxonomy).is_valid());
            }
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let p = SynthParams { seed: 11, ..SynthParams::default() };
        let scene = generate_scene(&p).unwrap();
        let t = make_targets(&scene, EdgeWidth::new(2).unwrap(), 1.0, &p.taxonomy).unwrap();
        let (s, h, o) =
            perturb_prediction(&t.semantic, &t.heatmap, &t.offsets, &PerturbParams::default(), &p.taxonomy).unwrap();
        assert_eq!((s, h, o), (t.semantic, t.heatmap, t.offsets));
    }

    #[test]
    fn full_flip_changes_every_edge_pixel() {
        let p = SynthParams { seed: 12, ..SynthParams::default() };
        let scene = generate_scene(&p).unwrap();
        let t = make_targets(&scene, EdgeWidth::new(1).unwrap(), 1.0, &p.taxonomy).unwrap();
        let params = PerturbParams { semantic_flip_rate: 1.0, ..PerturbParams::default() };
        let (s, _, _) = perturb_prediction(&t.semantic, &t.heatmap, &t.offsets, &params, &p.taxonomy).unwrap();
        for (a, b) in s.as_slice().iter().zip(t.semantic.as_slice()) {
            if *b == 0 {
                assert_eq!(*a, 0);
            } else {
                assert_ne!(a, b);
                assert!(p.taxonomy.contains(*a));
            }
        }
    }

    #[test]
    fn jitter_and_noise_are_seeded() {
        let p = SynthParams { seed: 13, ..SynthParams::default() };
        let scene = generate_scene(&p).unwrap();
        let t = make_targets(&scene, EdgeWidth::new(2).unwrap(), 1.0, &p.taxonomy).unwrap();
        let params = PerturbParams { center_jitter: 1.5, offset_noise: 2.0, seed: 3, ..PerturbParams::default() };
        let a = perturb_prediction(&t.semantic, &t.heatmap, &t.offsets, &params, &p.taxonomy).unwrap();
        let b = perturb_prediction(&t.semantic, &t.heatmap, &t.offsets, &params, &p.taxonomy).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, t.heatmap);
        assert_ne!(a.2, t.offsets);
        assert!(a.1.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        // stuff and non-edge offsets untouched
        for (row, col, c) in t.semantic.indexed() {
            if !p.taxonomy.is_thing(c) {
                assert_eq!(a.2.at(row, col), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn perturb_rejects_bad_inputs() {
        let s = Grid::filled(3, 3, 0u16);
        let h = Grid::filled(3, 4, 0.0);
        let o = OffsetField::zeros(3, 3);
        let tax = CategoryTaxonomy::cityscapes();
        assert!(perturb_prediction(&s, &h, &o, &PerturbParams::default(), &tax).is_err());
        let h = Grid::filled(3, 3, 0.0);
        let bad = PerturbParams { offset_noise: -1.0, ..PerturbParams::default() };
        assert!(perturb_prediction(&s, &h, &o, &bad, &tax).is_err());
    }
}
