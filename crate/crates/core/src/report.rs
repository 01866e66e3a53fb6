//! Run configuration, end-to-end scene evaluation and report serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blobs::{connected_components, threshold_density, Connectivity, Labeling};
use crate::counting::{
    counts_from_density, counts_from_points, counts_from_segmentation, CellCounts, CountingReport, SourceKind,
    DEFAULT_R_LIST,
};
use crate::error::{Error, Result};
use crate::geo::{make_grid, Raster};
use crate::labels::PointLabelSet;
use crate::matching::{
    sensitivity_sweep, sweep_rows, LabelNeighborhoods, LocalizationReport, SweepRow, DEFAULT_CUTOFF_M, DEFAULT_D_SWEEP,
};

pub const TOOL_NAME: &str = "scene-eval";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Evaluate,
    Sweep,
    Gridmetrics,
    Masks,
    Synth,
}

/// Default binarization threshold for a prediction kind.
pub fn default_tau(kind: SourceKind) -> f64 {
    match kind {
        SourceKind::Segmentation => 0.5,
        SourceKind::Density => 0.0,
    }
}

/// Fully resolved settings of one invocation, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub pred: Option<String>,
    pub labels: Option<String>,
    pub valid_mask: Option<String>,
    /// Reference raster for mask generation.
    pub scene: Option<String>,
    pub d: f64,
    pub d_list: Vec<f64>,
    pub r_list: Vec<f64>,
    pub tau: f64,
    pub connectivity: u8,
    pub prediction_kind: SourceKind,
    pub out: String,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(command: Command, prediction_kind: SourceKind) -> Self {
        Self {
            command,
            pred: None,
            labels: None,
            valid_mask: None,
            scene: None,
            d: DEFAULT_CUTOFF_M,
            d_list: DEFAULT_D_SWEEP.to_vec(),
            r_list: DEFAULT_R_LIST.to_vec(),
            tau: default_tau(prediction_kind),
            connectivity: 8,
            prediction_kind,
            out: ".".into(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cutoff d must be positive, got {}",
                self.d
            )));
        }
        if self.r_list.is_empty() {
            return Err(Error::InvalidArgument("r list is empty".into()));
        }
        if let Some(r) = self.r_list.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidArgument(format!("cell sizes must be positive, got {r}")));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be non-negative, got {}",
                self.tau
            )));
        }
        Connectivity::from_neighbors(self.connectivity)?;
        Ok(())
    }
}

/// A loaded scene ready for evaluation.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub pred: Raster,
    pub labels: PointLabelSet,
    pub valid_mask: Option<Raster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub width: usize,
    pub height: usize,
    pub res_x: f64,
    pub res_y: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub prediction_mass: f64,
    pub n_components: usize,
    pub n_labels: usize,
    pub n_labels_outside_scene: usize,
    pub masked: bool,
}

/// Counting metrics at one cell size plus label bookkeeping for that grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    #[serde(flatten)]
    pub counting: CountingReport,
    /// Labels that fell outside every retained cell.
    pub labels_outside_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: InputSummary,
    pub counting: Vec<GridReport>,
    pub localization: LocalizationReport,
}

/// Row of a grid-metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetricsRow {
    pub r: f64,
    pub gmae: f64,
    pub gmae_per_km2: f64,
    pub r_squared: Option<f64>,
}

impl From<&GridReport> for GridMetricsRow {
    fn from(g: &GridReport) -> Self {
        Self {
            r: g.counting.cell_size_m,
            gmae: g.counting.gmae,
            gmae_per_km2: g.counting.gmae_per_km2,
            r_squared: g.counting.r_squared,
        }
    }
}

/// Binarizes the prediction and extracts blobs.
pub fn extract_blobs(pred: &Raster, config: &RunConfig) -> Result<Labeling> {
    let binary = threshold_density(pred, config.tau)?;
    connected_components(&binary, Connectivity::from_neighbors(config.connectivity)?)
}

/// Counting reports for every cell size in the config.
pub fn grid_reports(inputs: &SceneInputs, labeling: &Labeling, config: &RunConfig) -> Result<Vec<GridReport>> {
    config
        .r_list
        .iter()
        .map(|&r| {
            let grid = make_grid(&inputs.pred, r, inputs.valid_mask.as_ref())?;
            let (gt, outside) = counts_from_points(&inputs.labels, &grid);
            let pred = match config.prediction_kind {
                SourceKind::Density => counts_from_density(&inputs.pred, &grid)?,
                SourceKind::Segmentation => counts_from_segmentation(labeling.components(), &grid),
            };
            let counts = CellCounts::on_grid(gt, pred, config.prediction_kind, &grid)?;
            Ok(GridReport {
                counting: CountingReport::from_counts(&counts),
                labels_outside_grid: outside,
            })
        })
        .collect()
}

fn summarize(inputs: &SceneInputs, labeling: &Labeling) -> InputSummary {
    let g = inputs.pred.georef();
    InputSummary {
        width: inputs.pred.width(),
        height: inputs.pred.height(),
        res_x: g.res_x,
        res_y: g.res_y,
        origin_x: g.origin_x,
        origin_y: g.origin_y,
        prediction_mass: inputs.pred.total(),
        n_components: labeling.len(),
        n_labels: inputs.labels.len(),
        n_labels_outside_scene: inputs.labels.outside_scene(&inputs.pred).len(),
        masked: inputs.valid_mask.is_some(),
    }
}

/// Full counting and localization evaluation of one scene.
pub fn evaluate_scene(inputs: &SceneInputs, config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    if let Some(mask) = &inputs.valid_mask {
        inputs.pred.ensure_aligned(mask)?;
    }
    let labeling = extract_blobs(&inputs.pred, config)?;
    let counting = grid_reports(inputs, &labeling, config)?;
    let hood = LabelNeighborhoods::new(&labeling, &inputs.labels, config.d)?;
    let localization = LocalizationReport::from_graph(&hood.graph(config.d)?, config.d);
    Ok(EvaluationReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        inputs: summarize(inputs, &labeling),
        counting,
        localization,
    })
}

/// Precision/recall rows over the config's cutoff list.
pub fn sweep_scene(inputs: &SceneInputs, config: &RunConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let labeling = extract_blobs(&inputs.pred, config)?;
    Ok(sweep_rows(&sensitivity_sweep(
        &labeling,
        &inputs.labels,
        &config.d_list,
    )?))
}

/// Grid metric rows over the config's cell sizes.
pub fn gridmetrics_scene(inputs: &SceneInputs, config: &RunConfig) -> Result<Vec<GridMetricsRow>> {
    config.validate()?;
    if let Some(mask) = &inputs.valid_mask {
        inputs.pred.ensure_aligned(mask)?;
    }
    let labeling = extract_blobs(&inputs.pred, config)?;
    Ok(grid_reports(inputs, &labeling, config)?
        .iter()
        .map(GridMetricsRow::from)
        .collect())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("report serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_bytes(value)?).map_err(|e| Error::io(path, e))
}

fn write_csv_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let to_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SWEEP_COLUMNS: [&str; 8] = ["d_m", "mode", "tp", "fp", "fn", "precision", "recall", "f_score"];
pub const GRIDMETRICS_COLUMNS: [&str; 4] = ["r", "gmae", "gmae_per_km2", "r_squared"];

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv_rows(
        path,
        &SWEEP_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.d_m.to_string(),
                r.mode.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.r#fn.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f_score.to_string(),
            ]
        }),
    )
}

pub fn write_gridmetrics_csv(path: &Path, rows: &[GridMetricsRow]) -> Result<()> {
    write_csv_rows(
        path,
        &GRIDMETRICS_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.r.to_string(),
                r.gmae.to_string(),
                r.gmae_per_km2.to_string(),
                r.r_squared.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

/// Flat one-row-per-metric view of an evaluation report.
pub fn write_report_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut rows = Vec::new();
    for g in &report.counting {
        let c = &g.counting;
        let r = c.cell_size_m.to_string();
        rows.push(vec!["counting".into(), r.clone(), "gmae".into(), c.gmae.to_string()]);
        rows.push(vec![
            "counting".into(),
            r.clone(),
            "gmae_per_km2".into(),
            c.gmae_per_km2.to_string(),
        ]);
        rows.push(vec![
            "counting".into(),
            r,
            "r_squared".into(),
            c.r_squared.map(|v| v.to_string()).unwrap_or_default(),
        ]);
    }
    let loc = &report.localization;
    for m in [&loc.conservative, &loc.optimistic] {
        let mode = m.result.mode.to_string();
        let d = loc.cutoff_d.to_string();
        for (name, v) in [
            ("precision", m.scores.precision.to_string()),
            ("recall", m.scores.recall.to_string()),
            ("f_score", m.scores.f_score.to_string()),
            ("tp", m.result.tp.to_string()),
            ("fp", m.result.fp.to_string()),
            ("fn", m.result.r#fn.to_string()),
        ] {
            rows.push(vec![mode.clone(), d.clone(), name.into(), v]);
        }
    }
    write_csv_rows(path, &["section", "scale_m", "metric", "value"], rows)
}
