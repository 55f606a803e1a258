//! Pipeline stages behind the `panedge` binary.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 validation failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use panedge::edgegen::{default_sigma, make_targets, panoptic_to_edges, instance_centers, make_center_heatmap, make_offset_field, EdgeWidth};
use panedge::fusion::{fuse_panoptic, FusionParams};
use panedge::label::{validate_map, ValidationReport};
use panedge::metrics::{edge_pq_stats, merge_stats, EvalOptions, PQReport};
use panedge::numerics::{ada_softmax, argmax_categories, run_gradcheck, AdaSoftMaxParam, GradCheckConfig};
use panedge::synth::{generate_scene, perturb_prediction, PerturbParams, SynthParams};
use panedge::tensor_io::{
    heatmap_to_tensor, label_map_to_tensor, offsets_to_tensor, read_tensor, semantic_to_tensor, tensor_to_heatmap,
    tensor_to_label_map, tensor_to_logits, tensor_to_offsets, tensor_to_semantic, write_label_pgm, write_tensor,
    write_visualization, DType,
};
use panedge::{CategoryTaxonomy, Error as CoreError, Grid};
use rayon::prelude::*;

#[derive(Debug, Parser)]
#[command(name = "panedge", version, about = "Panoptic edge ground truth, fusion and evaluation")]
pub struct Cli {
    /// Taxonomy file (TOML: num_categories, thing_categories, stuff_categories, instance_stride).
    /// Defaults to 19 categories, things 1-8, stuff 9-19, stride 1000.
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a panoptic segmentation tensor into panoptic edges.
    GtGen(GtGenArgs),
    /// Build center heatmap and offset targets from ground-truth edges.
    Targets(TargetsArgs),
    /// Fuse semantic edges, center heatmap and offsets into panoptic edges.
    Fuse(FuseArgs),
    /// Evaluate edge PQ/SQ/RQ of predictions against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene with its ground-truth targets.
    Synth(SynthArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GtGenArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub radius: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the edges as a 16-bit graymap.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    #[arg(long)]
    pub edges: PathBuf,
    /// Gaussian sigma in pixels; scaled from the image size when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out_heatmap: PathBuf,
    #[arg(long)]
    pub out_offsets: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Integer category map, or float (K+1) x H x W logits.
    #[arg(long)]
    pub semantic: PathBuf,
    #[arg(long)]
    pub heatmap: PathBuf,
    #[arg(long)]
    pub offsets: PathBuf,
    #[arg(long, default_value_t = FusionParams::DEFAULT_THRESHOLD)]
    pub center_threshold: f64,
    #[arg(long, default_value_t = FusionParams::DEFAULT_NMS_WINDOW)]
    pub nms_window: usize,
    #[arg(long, default_value_t = FusionParams::DEFAULT_MAX_INSTANCES)]
    pub max_instances: usize,
    /// Softmax temperature applied before the argmax when the semantic input is logits.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub temperature: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write a color-coded PNG of the fused labels.
    #[arg(long)]
    pub visualize: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction tensor, or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth tensor, or a directory matching `--pred` by file name.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Chebyshev dilation applied to segments before IoU.
    #[arg(long, default_value_t = 0)]
    pub dilation: usize,
    /// Integer mask tensor; nonzero pixels are ignored (single-pair mode only).
    #[arg(long)]
    pub ignore: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for color-coded PNGs of prediction and ground truth.
    #[arg(long)]
    pub visualize: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub max_instances: usize,
    #[arg(long, default_value_t = 8)]
    pub min_instance_size: usize,
    #[arg(long, default_value_t = 2)]
    pub radius: u32,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub min_center_distance: Option<f64>,
    /// Fraction of edge pixels whose category is flipped in the perturbed prediction.
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub center_jitter: Option<f64>,
    #[arg(long)]
    pub offset_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub perturb_seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failed stage with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::InvalidSegmentLabel { .. }
            | CoreError::MalformedLabel(_)
            | CoreError::StuffWithNonzeroInstance { .. }
            | CoreError::CategoryOutOfRange { .. }
            | CoreError::TaxonomyMismatch
            | CoreError::MissingCenter { .. }
            | CoreError::LabelOverflow(_) => 2,
            _ => 1,
        };
        Self { code, error: e.into() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn load_taxonomy(path: Option<&Path>) -> Outcome<CategoryTaxonomy> {
    match path {
        None => Ok(CategoryTaxonomy::cityscapes()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading taxonomy {}", p.display()))
                .map_err(Failure::usage)?;
            CategoryTaxonomy::from_toml_str(&text)
                .with_context(|| format!("parsing taxonomy {}", p.display()))
                .map_err(Failure::usage)
        }
    }
}

fn read_with_context(path: &Path) -> Outcome<panedge::tensor_io::TensorFile> {
    read_tensor(path).map_err(|e| Failure::usage(anyhow!(e).context(format!("reading {}", path.display()))))
}

fn write_with_context(path: &Path, tensor: &panedge::tensor_io::TensorFile) -> Outcome {
    write_tensor(path, tensor).map_err(|e| Failure::usage(anyhow!(e).context(format!("writing {}", path.display()))))
}

fn input<T>(path: &Path, result: panedge::Result<T>) -> Outcome<T> {
    result.map_err(|e| Failure::usage(anyhow!(e).context(format!("decoding {}", path.display()))))
}

fn check_valid(report: &ValidationReport, what: &str) -> Outcome {
    match report.violations.first() {
        None => Ok(()),
        Some(first) => Err(Failure::validation(anyhow!(
            "{what} failed validation: {first}{}",
            if report.violations.len() > 1 { format!(" (+{} more)", report.violations.len() - 1) } else { String::new() }
        ))),
    }
}

pub fn gt_gen(args: &GtGenArgs, taxonomy: &CategoryTaxonomy) -> Outcome {
    let width = EdgeWidth::new(args.radius).map_err(Failure::usage)?;
    let seg = input(&args.input, tensor_to_label_map(&read_with_context(&args.input)?))?;
    let edges = panoptic_to_edges(&seg, width, taxonomy)?;
    check_valid(&validate_map(&edges, taxonomy), "edge map")?;
    write_with_context(&args.out, &label_map_to_tensor(&edges)?)?;
    if let Some(pgm) = &args.pgm {
        write_label_pgm(pgm, &edges)?;
    }
    Ok(())
}

pub fn targets(args: &TargetsArgs, taxonomy: &CategoryTaxonomy) -> Outcome {
    let edges = input(&args.edges, tensor_to_label_map(&read_with_context(&args.edges)?))?;
    check_valid(&validate_map(&edges, taxonomy), "edge map")?;
    let sigma = args.sigma.unwrap_or_else(|| default_sigma(edges.height(), edges.width()));
    let centers = instance_centers(&edges, taxonomy);
    let heatmap = make_center_heatmap(&centers, edges.height(), edges.width(), sigma)?;
    let offsets = make_offset_field(&edges, &centers, taxonomy)?;
    write_with_context(&args.out_heatmap, &heatmap_to_tensor(&heatmap)?)?;
    write_with_context(&args.out_offsets, &offsets_to_tensor(&offsets)?)?;
    Ok(())
}

pub fn fuse(args: &FuseArgs, taxonomy: &CategoryTaxonomy) -> Outcome {
    let params = FusionParams::new(args.center_threshold, args.nms_window, args.max_instances, taxonomy.clone())
        .map_err(Failure::usage)?;
    let sem_tensor = read_with_context(&args.semantic)?;
    let semantic = if sem_tensor.dtype() == DType::F32 {
        let temperature = AdaSoftMaxParam::new(args.temperature).map_err(Failure::usage)?;
        let logits = input(&args.semantic, tensor_to_logits(&sem_tensor))?;
        argmax_categories(&ada_softmax(&logits, temperature))
    } else {
        input(&args.semantic, tensor_to_semantic(&sem_tensor))?
    };
    let heatmap = input(&args.heatmap, tensor_to_heatmap(&read_with_context(&args.heatmap)?))?;
    let offsets = input(&args.offsets, tensor_to_offsets(&read_with_context(&args.offsets)?))?;
    let fused = fuse_panoptic(&semantic, &heatmap, &offsets, &params)?;
    check_valid(&validate_map(&fused, taxonomy), "fused map")?;
    write_with_context(&args.out, &label_map_to_tensor(&fused)?)?;
    if let Some(viz) = &args.visualize {
        write_visualization(viz, &fused)?;
    }
    Ok(())
}

fn tensor_files(dir: &Path) -> Outcome<Vec<String>> {
    let mut names = Vec::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display())).map_err(Failure::usage)?;
    for entry in entries {
        let entry = entry.map_err(Failure::usage)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && name.ends_with(".tensor") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn load_pair(pred: &Path, gt: &Path) -> Outcome<(Grid<u32>, Grid<u32>)> {
    let p = input(pred, tensor_to_label_map(&read_with_context(pred)?))?;
    let g = input(gt, tensor_to_label_map(&read_with_context(gt)?))?;
    Ok((p, g))
}

/// Evaluates one pair or two directories and returns the aggregated report.
pub fn eval(args: &EvalArgs, taxonomy: &CategoryTaxonomy) -> Outcome<PQReport> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(Failure::usage(anyhow!("threshold must lie in (0, 1], got {}", args.threshold)));
    }
    let mut options = EvalOptions { threshold: args.threshold, dilation: args.dilation, ignore: None };
    let stats = if args.gt.is_dir() {
        if !args.pred.is_dir() {
            return Err(Failure::usage(anyhow!("--gt is a directory but --pred is not")));
        }
        if args.ignore.is_some() {
            return Err(Failure::usage(anyhow!("--ignore is only supported for a single pair")));
        }
        let names = tensor_files(&args.gt)?;
        let per_image: Vec<_> = names
            .par_iter()
            .map(|name| {
                let (p, g) = load_pair(&args.pred.join(name), &args.gt.join(name))?;
                edge_pq_stats(&p, &g, taxonomy, &options).map_err(Failure::from)
            })
            .collect::<Outcome<Vec<_>>>()?;
        merge_stats(&per_image)
    } else {
        let (p, g) = load_pair(&args.pred, &args.gt)?;
        if let Some(mask_path) = &args.ignore {
            let mask = input(mask_path, tensor_to_label_map(&read_with_context(mask_path)?))?;
            options.ignore = Some(mask.map(|v| v != 0));
        }
        if let Some(dir) = &args.visualize {
            fs::create_dir_all(dir).map_err(Failure::usage)?;
            write_visualization(dir.join("pred.png"), &p)?;
            write_visualization(dir.join("gt.png"), &g)?;
        }
        edge_pq_stats(&p, &g, taxonomy, &options)?
    };
    let report = PQReport::from_stats(&stats, taxonomy, args.threshold);
    fs::write(&args.report, report.to_json())
        .with_context(|| format!("writing {}", args.report.display()))
        .map_err(Failure::usage)?;
    Ok(report)
}

pub fn synth(args: &SynthArgs, taxonomy: &CategoryTaxonomy) -> Outcome {
    let params = SynthParams {
        height: args.height,
        width: args.width,
        max_instances: args.max_instances,
        min_instance_size: args.min_instance_size,
        taxonomy: taxonomy.clone(),
        seed: args.seed,
        edge_radius: args.radius,
        min_center_distance: args.min_center_distance,
        ..SynthParams::default()
    };
    let scene = generate_scene(&params).map_err(Failure::usage)?;
    let sigma = args.sigma.unwrap_or_else(|| default_sigma(args.height, args.width));
    let width = EdgeWidth::new(args.radius).map_err(Failure::usage)?;
    let t = make_targets(&scene, width, sigma, taxonomy)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(Failure::usage)?;
    let out = |name: &str| args.out_dir.join(name);
    write_with_context(&out("seg.tensor"), &label_map_to_tensor(&scene)?)?;
    write_with_context(&out("edges.tensor"), &label_map_to_tensor(&t.edges)?)?;
    write_with_context(&out("semantic.tensor"), &semantic_to_tensor(&t.semantic)?)?;
    write_with_context(&out("heatmap.tensor"), &heatmap_to_tensor(&t.heatmap)?)?;
    write_with_context(&out("offsets.tensor"), &offsets_to_tensor(&t.offsets)?)?;
    if args.flip_rate.is_some() || args.center_jitter.is_some() || args.offset_noise.is_some() {
        let perturb = PerturbParams {
            semantic_flip_rate: args.flip_rate.unwrap_or(0.0),
            center_jitter: args.center_jitter.unwrap_or(0.0),
            offset_noise: args.offset_noise.unwrap_or(0.0),
            sigma,
            seed: args.perturb_seed,
        };
        let (s, h, o) =
            perturb_prediction(&t.semantic, &t.heatmap, &t.offsets, &perturb, taxonomy).map_err(Failure::usage)?;
        write_with_context(&out("pred_semantic.tensor"), &semantic_to_tensor(&s)?)?;
        write_with_context(&out("pred_heatmap.tensor"), &heatmap_to_tensor(&h)?)?;
        write_with_context(&out("pred_offsets.tensor"), &offsets_to_tensor(&o)?)?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome<bool> {
    if !(args.tolerance > 0.0) {
        return Err(Failure::usage(anyhow!("tolerance must be positive, got {}", args.tolerance)));
    }
    if args.trials == 0 {
        return Err(Failure::usage(anyhow!("trials must be positive")));
    }
    let report = run_gradcheck(&GradCheckConfig { trials: args.trials, tolerance: args.tolerance, seed: args.seed })?;
    for s in &report.suites {
        println!(
            "{:<32} trials={} max_rel_err={:.3e} {}",
            s.name,
            s.trials,
            s.max_relative_error,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(report.all_passed())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Outcome {
    let taxonomy = load_taxonomy(cli.taxonomy.as_deref())?;
    match &cli.command {
        Command::GtGen(a) => gt_gen(a, &taxonomy),
        Command::Targets(a) => targets(a, &taxonomy),
        Command::Fuse(a) => fuse(a, &taxonomy),
        Command::Eval(a) => {
            let r = eval(a, &taxonomy)?;
            println!("overall pq={:.6} sq={:.6} rq={:.6}", r.pq, r.sq, r.rq);
            Ok(())
        }
        Command::Synth(a) => synth(a, &taxonomy),
        Command::Gradcheck(a) => {
            if gradcheck(a)? {
                Ok(())
            } else {
                Err(Failure::validation(anyhow!("gradient check exceeded tolerance {}", a.tolerance)))
            }
        }
    }
}
