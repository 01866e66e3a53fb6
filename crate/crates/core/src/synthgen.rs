//! Synthetic scenes with known answers for every metric.
//!
//! Animals are placed at pixel centers with a minimum spacing large enough
//! that, for any cutoff in `[label_jitter_max_m, max_cutoff_m]`, each label
//! can only reach its own animal's blob. Under that construction the
//! localization outcome is pure bookkeeping: retained animals are true
//! positives, removed animals are false negatives and spurious blobs are
//! false positives, in both matching modes.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counting::{CellCounts, CountingReport, SourceKind};
use crate::error::{Error, Result};
use crate::geo::{make_grid, AffineGeoref, GridSpec, Raster, RasterKind, WorldPoint};
use crate::labels::{GaussianKernel, PointLabelSet, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_PX};
use crate::matching::{MatchMode, MatchResult};

/// Form of the synthetic model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionForm {
    /// Binary disks of `blob_radius_px` around each predicted animal.
    #[default]
    Segmentation,
    /// Unit-mass Gaussian kernels around each predicted animal.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Scene width and height in meters.
    pub scene_size_m: (f64, f64),
    pub resolution_m: f64,
    pub n_animals: usize,
    pub label_jitter_max_m: f64,
    pub blob_radius_px: usize,
    /// Spurious blobs as a fraction of `n_animals`.
    pub fp_rate: f64,
    /// Fraction of animals the prediction misses.
    pub fn_rate: f64,
    /// Largest cutoff for which expected match results are guaranteed.
    pub max_cutoff_m: f64,
    /// Shift applied to every predicted animal, in a random direction.
    pub displacement_m: f64,
    pub prediction: PredictionForm,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene_size_m: (300.0, 300.0),
            resolution_m: 0.3,
            n_animals: 50,
            label_jitter_max_m: 0.0,
            blob_radius_px: 3,
            fp_rate: 0.0,
            fn_rate: 0.0,
            max_cutoff_m: 8.0,
            displacement_m: 0.0,
            prediction: PredictionForm::Segmentation,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let (w, h) = self.scene_size_m;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !(positive(w) && positive(h) && positive(self.resolution_m)) {
            return Err(Error::InvalidArgument(format!(
                "scene size and resolution must be positive, got {:?} at {}",
                self.scene_size_m, self.resolution_m
            )));
        }
        if !(non_negative(self.label_jitter_max_m)
            && non_negative(self.max_cutoff_m)
            && non_negative(self.displacement_m))
        {
            return Err(Error::InvalidArgument("distances must be non-negative".into()));
        }
        if !(rate(self.fp_rate) && rate(self.fn_rate)) {
            return Err(Error::InvalidArgument(format!(
                "fp_rate and fn_rate must lie in [0, 1], got {} and {}",
                self.fp_rate, self.fn_rate
            )));
        }
        Ok(())
    }

    pub fn blob_radius_m(&self) -> f64 {
        self.blob_radius_px as f64 * self.resolution_m
    }

    /// Minimum center-to-center spacing enforced between any two blobs.
    pub fn min_separation_m(&self) -> f64 {
        2.0 * (self.blob_radius_m() + self.max_cutoff_m) + self.label_jitter_max_m + 2.0 * self.resolution_m
    }

    pub fn n_false_negatives(&self) -> usize {
        (self.fn_rate * self.n_animals as f64).round() as usize
    }

    pub fn n_false_positives(&self) -> usize {
        (self.fp_rate * self.n_animals as f64).round() as usize
    }
}

/// Generated scene plus the expectations implied by its construction.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    /// Panchromatic rendering of the animals.
    pub scene: Raster,
    pub true_points: Vec<WorldPoint>,
    pub labels: PointLabelSet,
    pub prediction: Raster,
    /// World centers of predicted blobs or kernels, in placement order.
    pub predicted_centers: Vec<WorldPoint>,
    /// Indices into `true_points` the prediction misses.
    pub missed: Vec<usize>,
    /// Centers of spurious predicted blobs.
    pub spurious: Vec<WorldPoint>,
}

/// Uniform bucket grid for separation checks.
struct SpacingIndex {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<WorldPoint>>,
}

impl SpacingIndex {
    fn new(width: f64, height: f64, cell: f64) -> Self {
        let cell = cell.max(1e-6);
        let cols = ((width / cell).ceil() as usize).max(1);
        let rows = ((height / cell).ceil() as usize).max(1);
        Self {
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn bucket(&self, x: f64, y: f64) -> (usize, usize) {
        (
            ((x / self.cell) as usize).min(self.cols - 1),
            ((y / self.cell) as usize).min(self.rows - 1),
        )
    }

    /// Whether `p` (in offset coordinates) is at least `sep` from every stored point.
    fn clear(&self, p: WorldPoint, sep: f64) -> bool {
        let (bc, br) = self.bucket(p.x, p.y);
        for r in br.saturating_sub(1)..=(br + 1).min(self.rows - 1) {
            for c in bc.saturating_sub(1)..=(bc + 1).min(self.cols - 1) {
                if self.buckets[r * self.cols + c].iter().any(|q| q.distance(&p) < sep) {
                    return false;
                }
            }
        }
        true
    }

    fn insert(&mut self, p: WorldPoint) {
        let (c, r) = self.bucket(p.x, p.y);
        self.buckets[r * self.cols + c].push(p);
    }
}

const PLACEMENT_ATTEMPTS_PER_POINT: usize = 2000;

/// Draws `count` pixel centers inside the margin, each at least `sep` from
/// every previously placed point.
#[allow(clippy::too_many_arguments)]
fn place_points(
    rng: &mut ChaCha8Rng,
    index: &mut SpacingIndex,
    width_px: usize,
    height_px: usize,
    margin_px: usize,
    res: f64,
    sep: f64,
    count: usize,
    what: &str,
) -> Result<Vec<(usize, usize)>> {
    if width_px <= 2 * margin_px || height_px <= 2 * margin_px {
        if count == 0 {
            return Ok(Vec::new());
        }
        return Err(Error::InfeasiblePlacement(format!(
            "scene of {width_px}x{height_px} px leaves no room inside a {margin_px} px margin"
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS_PER_POINT * count.max(1) {
            return Err(Error::InfeasiblePlacement(format!(
                "placed {} of {count} {what} with {sep:.2} m spacing; scene too dense",
                out.len()
            )));
        }
        let col = rng.random_range(margin_px..width_px - margin_px);
        let row = rng.random_range(margin_px..height_px - margin_px);
        let p = WorldPoint::new((col as f64 + 0.5) * res, (row as f64 + 0.5) * res);
        if index.clear(p, sep) {
            index.insert(p);
            out.push((col, row));
        }
    }
    Ok(out)
}

fn paint_disk(data: &mut [f64], width: usize, height: usize, col: usize, row: usize, radius: usize, value: f64) {
    let r = radius as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (c, rr) = (col as i64 + dx, row as i64 + dy);
            if c >= 0 && rr >= 0 && (c as usize) < width && (rr as usize) < height {
                data[rr as usize * width + c as usize] = value;
            }
        }
    }
}

fn uniform_in_disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    if radius == 0.0 {
        return (0.0, 0.0);
    }
    let rho = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    (rho * theta.cos(), rho * theta.sin())
}

/// Builds a synthetic scene. Identical configs give identical scenes.
pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let res = config.resolution_m;
    let width = (config.scene_size_m.0 / res).round().max(1.0) as usize;
    let height = (config.scene_size_m.1 / res).round().max(1.0) as usize;
    let georef = AffineGeoref::square(0.0, height as f64 * res, res)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let sep = config.min_separation_m();
    let jitter = config.label_jitter_max_m;
    let margin_m = config.blob_radius_m()
        + jitter
        + res
        + if config.prediction == PredictionForm::Density {
            (DEFAULT_KERNEL_SIZE / 2) as f64 * res
        } else {
            0.0
        };
    let margin_px = (margin_m / res).ceil() as usize;
    let mut index = SpacingIndex::new(width as f64 * res, height as f64 * res, sep);

    let animals_px = place_points(
        &mut rng,
        &mut index,
        width,
        height,
        margin_px,
        res,
        sep,
        config.n_animals,
        "animals",
    )?;
    let spurious_px = place_points(
        &mut rng,
        &mut index,
        width,
        height,
        margin_px,
        res,
        sep,
        config.n_false_positives(),
        "spurious blobs",
    )?;

    let center = |(c, r): (usize, usize)| georef.pixel_center(c, r);
    let true_points: Vec<WorldPoint> = animals_px.iter().copied().map(center).collect();

    let labels: Vec<WorldPoint> = true_points
        .iter()
        .map(|p| {
            let (dx, dy) = uniform_in_disk(&mut rng, jitter);
            WorldPoint::new(p.x + dx, p.y + dy)
        })
        .collect();

    let mut order: Vec<usize> = (0..config.n_animals).collect();
    order.shuffle(&mut rng);
    let mut missed: Vec<usize> = order[..config.n_false_negatives().min(config.n_animals)].to_vec();
    missed.sort_unstable();

    // predicted animal centers in pixel space, optionally displaced
    let mut predicted_px: Vec<(usize, usize)> = Vec::new();
    for (i, &(c, r)) in animals_px.iter().enumerate() {
        if missed.binary_search(&i).is_ok() {
            continue;
        }
        if config.displacement_m == 0.0 {
            predicted_px.push((c, r));
            continue;
        }
        let lo = margin_px as f64;
        let (hi_c, hi_r) = ((width - margin_px) as f64, (height - margin_px) as f64);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS_PER_POINT {
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let nc = c as f64 + config.displacement_m * theta.cos() / res;
            let nr = r as f64 + config.displacement_m * theta.sin() / res;
            if nc >= lo && nc < hi_c && nr >= lo && nr < hi_r {
                placed = Some((nc as usize, nr as usize));
                break;
            }
        }
        predicted_px.push(placed.ok_or_else(|| {
            Error::InfeasiblePlacement(format!(
                "cannot displace animal {i} by {} m inside the scene",
                config.displacement_m
            ))
        })?);
    }
    predicted_px.extend(spurious_px.iter().copied());

    let mut scene = vec![0.1; width * height];
    for &(c, r) in &animals_px {
        paint_disk(&mut scene, width, height, c, r, config.blob_radius_px, 0.9);
    }
    let scene = Raster::new(width, height, scene, georef, RasterKind::Panchromatic)?;

    let prediction = match config.prediction {
        PredictionForm::Segmentation => {
            let mut data = vec![0.0; width * height];
            for &(c, r) in &predicted_px {
                paint_disk(&mut data, width, height, c, r, config.blob_radius_px, 1.0);
            }
            Raster::new(width, height, data, georef, RasterKind::Binary)?
        }
        PredictionForm::Density => {
            // scatter kernels directly so coincident centers keep their full mass
            let kernel = GaussianKernel::new(DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_PX)?;
            let half = (DEFAULT_KERNEL_SIZE / 2) as i64;
            let mut data = vec![0.0; width * height];
            for &(c, r) in &predicted_px {
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (cc, rr) = (c as i64 + dx, r as i64 + dy);
                        data[rr as usize * width + cc as usize] += kernel.weight(dx, dy);
                    }
                }
            }
            Raster::new(width, height, data, georef, RasterKind::Density)?
        }
    };

    Ok(SynthScene {
        config: config.clone(),
        scene,
        true_points,
        labels: PointLabelSet::new(labels, jitter, "synthetic")?,
        prediction,
        predicted_centers: predicted_px.iter().copied().map(center).collect(),
        missed,
        spurious: spurious_px.iter().copied().map(center).collect(),
    })
}

impl SynthScene {
    /// Match outcome implied by the construction, for cutoffs where it is
    /// guaranteed; `None` otherwise.
    pub fn expected_match(&self, mode: MatchMode, d: f64) -> Option<MatchResult> {
        let c = &self.config;
        if c.displacement_m != 0.0 || c.prediction != PredictionForm::Segmentation {
            return None;
        }
        if d < c.label_jitter_max_m || d > c.max_cutoff_m {
            return None;
        }
        let n_missed = self.missed.len();
        Some(MatchResult {
            mode,
            cutoff_d: d,
            tp: c.n_animals - n_missed,
            fp: self.spurious.len(),
            r#fn: n_missed,
            pairs: Vec::new(),
        })
    }

    /// Expected per-cell counts on `grid`, by testing every point against
    /// every cell's bounds.
    pub fn expected_cell_counts(&self, grid: &GridSpec) -> Result<CellCounts> {
        let tally = |pts: &[WorldPoint]| -> Vec<f64> {
            grid.cells()
                .iter()
                .map(|cell| {
                    let b = &cell.bounds;
                    pts.iter()
                        .filter(|p| p.x >= b.min_x && p.x < b.max_x && p.y <= b.max_y && p.y > b.min_y)
                        .count() as f64
                })
                .collect()
        };
        let kind = match self.config.prediction {
            PredictionForm::Segmentation => SourceKind::Segmentation,
            PredictionForm::Density => SourceKind::Density,
        };
        CellCounts::on_grid(tally(&self.labels.points), tally(&self.predicted_centers), kind, grid)
    }

    pub fn expected_counting(&self, r: f64) -> Result<CountingReport> {
        let grid = make_grid(&self.scene, r, None)?;
        Ok(CountingReport::from_counts(&self.expected_cell_counts(&grid)?))
    }
}
