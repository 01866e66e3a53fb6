use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use scene_eval::counting::SourceKind;
use scene_eval::io::{
    read_labels, read_raster, write_components_geojson, write_labels_csv, write_labels_geojson, write_raster,
};
use scene_eval::labels::{
    density_mask, rasterize_points, segmentation_mask, PointLabelSet, DEFAULT_FILTER_SIZE, DEFAULT_KERNEL_SIZE,
    DEFAULT_SIGMA_PX,
};
use scene_eval::matching::{MatchMode, DEFAULT_CUTOFF_M};
use scene_eval::report::{
    default_tau, evaluate_scene, extract_blobs, gridmetrics_scene, sweep_scene, write_gridmetrics_csv, write_json,
    write_report_csv, write_sweep_csv, Command, RunConfig, SceneInputs,
};
use scene_eval::synthgen::{generate, PredictionForm, SynthConfig};
use scene_eval::{Error, RasterKind, Result};

#[derive(Parser)]
#[command(
    name = "scene-eval",
    version,
    about = "Counting and localization metrics for blob predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Counting metrics per cell size plus localization at one cutoff.
    Evaluate(SceneArgs),
    /// Precision and recall over a range of cutoff distances.
    Sweep(SceneArgs),
    /// GMAE, GMAE/km2 and R2 for each cell size.
    Gridmetrics(SceneArgs),
    /// Density and segmentation training masks from point labels.
    Masks(MaskArgs),
    /// Synthetic scene, labels and prediction with known metrics.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Density,
    Segmentation,
}

impl From<KindArg> for SourceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Density => SourceKind::Density,
            KindArg::Segmentation => SourceKind::Segmentation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tif,
    Raw,
}

impl FormatArg {
    fn ext(self) -> &'static str {
        match self {
            FormatArg::Tif => "tif",
            FormatArg::Raw => "f32",
        }
    }
}

/// Comma-separated list of numbers.
#[derive(Clone)]
struct NumList(Vec<f64>);

fn parse_list(s: &str) -> std::result::Result<NumList, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect::<std::result::Result<_, _>>()
        .map(NumList)
}

fn parse_connectivity(s: &str) -> std::result::Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err("connectivity must be 4 or 8".into()),
    }
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long = "valid-mask")]
    valid_mask: Option<PathBuf>,
    /// Cutoff distance in meters.
    #[arg(long, default_value_t = DEFAULT_CUTOFF_M)]
    d: f64,
    /// Cutoff distances for `sweep`, comma separated.
    #[arg(long = "d-list", value_parser = parse_list)]
    d_list: Option<NumList>,
    /// Cell sizes in meters, comma separated.
    #[arg(long = "r-list", value_parser = parse_list)]
    r_list: Option<NumList>,
    /// Binarization threshold; defaults to 0.5 for segmentation and 0 for density.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: u8,
    #[arg(long = "prediction-kind", value_enum, default_value = "segmentation")]
    prediction_kind: KindArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Raster whose grid the masks are drawn on.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long = "kernel-size", default_value_t = DEFAULT_KERNEL_SIZE)]
    kernel_size: usize,
    /// Gaussian sigma in pixels.
    #[arg(long, default_value_t = DEFAULT_SIGMA_PX)]
    sigma: f64,
    #[arg(long = "filter-size", default_value_t = DEFAULT_FILTER_SIZE)]
    filter_size: usize,
    #[arg(long, value_enum, default_value = "tif")]
    format: FormatArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300.0)]
    width_m: f64,
    #[arg(long, default_value_t = 300.0)]
    height_m: f64,
    #[arg(long, default_value_t = 0.3)]
    resolution: f64,
    #[arg(long = "n-animals", default_value_t = 50)]
    n_animals: usize,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long = "blob-radius", default_value_t = 3)]
    blob_radius: usize,
    #[arg(long = "fp-rate", default_value_t = 0.0)]
    fp_rate: f64,
    #[arg(long = "fn-rate", default_value_t = 0.0)]
    fn_rate: f64,
    #[arg(long = "max-cutoff", default_value_t = 8.0)]
    max_cutoff: f64,
    #[arg(long, default_value_t = 0.0)]
    displacement: f64,
    #[arg(long = "prediction-kind", value_enum, default_value = "segmentation")]
    prediction_kind: KindArg,
    /// Cutoffs at which expected localization results are listed.
    #[arg(long = "d-list", value_parser = parse_list)]
    d_list: Option<NumList>,
    /// Cell sizes at which expected counting results are listed.
    #[arg(long = "r-list", value_parser = parse_list)]
    r_list: Option<NumList>,
    #[arg(long, value_enum, default_value = "tif")]
    format: FormatArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn scene_config(command: Command, a: &SceneArgs) -> RunConfig {
    let kind = SourceKind::from(a.prediction_kind);
    let mut rc = RunConfig::new(command, kind);
    rc.pred = Some(path_string(&a.pred));
    rc.labels = Some(path_string(&a.labels));
    rc.valid_mask = a.valid_mask.as_deref().map(path_string);
    rc.d = a.d;
    if let Some(d) = &a.d_list {
        rc.d_list = d.0.clone();
    }
    if let Some(r) = &a.r_list {
        rc.r_list = r.0.clone();
    }
    rc.tau = a.tau.unwrap_or(default_tau(kind));
    rc.connectivity = a.connectivity;
    rc.out = path_string(&a.out);
    rc.seed = a.seed;
    rc
}

fn load_scene(a: &SceneArgs, rc: &RunConfig) -> Result<SceneInputs> {
    let pred = read_raster(&a.pred, RasterKind::Density)?;
    let labels = read_labels(&a.labels, rc.d)?;
    let valid_mask = a
        .valid_mask
        .as_deref()
        .map(|p| read_raster(p, RasterKind::Validity))
        .transpose()?;
    Ok(SceneInputs {
        pred,
        labels,
        valid_mask,
    })
}

fn run_scene(command: Command, a: SceneArgs) -> Result<()> {
    let rc = scene_config(command, &a);
    rc.validate()?;
    let inputs = load_scene(&a, &rc)?;
    ensure_out(&a.out)?;
    match command {
        Command::Evaluate => {
            let report = evaluate_scene(&inputs, &rc)?;
            write_json(&a.out.join("report.json"), &report)?;
            write_report_csv(&a.out.join("report.csv"), &report)?;
            let blobs = extract_blobs(&inputs.pred, &rc)?;
            write_components_geojson(&a.out.join("components.geojson"), &blobs)?;
        }
        Command::Sweep => write_sweep_csv(&a.out.join("sweep.csv"), &sweep_scene(&inputs, &rc)?)?,
        Command::Gridmetrics => {
            write_gridmetrics_csv(&a.out.join("gridmetrics.csv"), &gridmetrics_scene(&inputs, &rc)?)?
        }
        Command::Masks | Command::Synth => unreachable!("not a scene command"),
    }
    Ok(())
}

fn run_masks(a: MaskArgs) -> Result<()> {
    let mut rc = RunConfig::new(Command::Masks, SourceKind::Density);
    rc.labels = Some(path_string(&a.labels));
    rc.scene = Some(path_string(&a.scene));
    rc.out = path_string(&a.out);
    let scene = read_raster(&a.scene, RasterKind::Panchromatic)?;
    let labels = read_labels(&a.labels, rc.d)?;
    let points = rasterize_points(&labels, *scene.georef(), scene.width(), scene.height())?;
    let density = density_mask(&points.raster, a.kernel_size, a.sigma)?;
    let seg = segmentation_mask(&points.raster, a.filter_size)?;
    ensure_out(&a.out)?;
    let ext = a.format.ext();
    write_raster(&a.out.join(format!("density.{ext}")), &density.raster)?;
    write_raster(&a.out.join(format!("segmentation.{ext}")), &seg.raster)?;
    let summary = json!({
        "config": rc,
        "kernel_size": density.kernel_size,
        "kernel_sigma_px": density.kernel_sigma,
        "filter_size": seg.filter_size,
        "n_labels": labels.len(),
        "collisions": points.collisions,
        "dropped": points.dropped,
        "density_mass": density.raster.total(),
        "truncated_mass": density.truncated_mass,
        "segmentation_pixels": seg.raster.count_positive(),
    });
    write_json(&a.out.join("masks.json"), &summary)
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        scene_size_m: (a.width_m, a.height_m),
        resolution_m: a.resolution,
        n_animals: a.n_animals,
        label_jitter_max_m: a.jitter,
        blob_radius_px: a.blob_radius,
        fp_rate: a.fp_rate,
        fn_rate: a.fn_rate,
        max_cutoff_m: a.max_cutoff,
        displacement_m: a.displacement,
        prediction: match a.prediction_kind {
            KindArg::Density => PredictionForm::Density,
            KindArg::Segmentation => PredictionForm::Segmentation,
        },
        seed: a.seed,
    };
    let mut rc = RunConfig::new(Command::Synth, a.prediction_kind.into());
    rc.out = path_string(&a.out);
    rc.seed = a.seed;
    if let Some(d) = a.d_list {
        rc.d_list = d.0;
    }
    if let Some(r) = a.r_list {
        rc.r_list = r.0;
    }
    rc.validate()?;

    let s = generate(&config)?;
    ensure_out(&a.out)?;
    let ext = a.format.ext();
    write_raster(&a.out.join(format!("scene.{ext}")), &s.scene)?;
    write_raster(&a.out.join(format!("prediction.{ext}")), &s.prediction)?;
    write_labels_csv(&a.out.join("labels.csv"), &s.labels)?;
    write_labels_geojson(&a.out.join("labels.geojson"), &s.labels)?;
    let truth = PointLabelSet::new(
        s.true_points.clone(),
        s.labels.noise_radius_d,
        s.labels.class_tag.clone(),
    )?;
    write_labels_csv(&a.out.join("truth.csv"), &truth)?;

    let matches: Vec<_> = rc
        .d_list
        .iter()
        .map(|&d| {
            json!({
                "d_m": d,
                "conservative": s.expected_match(MatchMode::Conservative, d),
                "optimistic": s.expected_match(MatchMode::Optimistic, d),
            })
        })
        .collect();
    let counting = rc
        .r_list
        .iter()
        .map(|&r| s.expected_counting(r))
        .collect::<Result<Vec<_>>>()?;
    let expected = json!({
        "config": rc,
        "synth": config,
        "n_true": s.true_points.len(),
        "missed": s.missed,
        "n_spurious": s.spurious.len(),
        "localization": matches,
        "counting": counting,
    });
    write_json(&a.out.join("expected.json"), &expected)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SCENE_EVAL_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::InvalidArgument(format!("SCENE_EVAL_THREADS must be a positive integer, got `{v}`"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::GeorefMismatch(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Cmd::Evaluate(a) => run_scene(Command::Evaluate, a),
        Cmd::Sweep(a) => run_scene(Command::Sweep, a),
        Cmd::Gridmetrics(a) => run_scene(Command::Gridmetrics, a),
        Cmd::Masks(a) => run_masks(a),
        Cmd::Synth(a) => run_synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
    }
}
