//! Scene-level counting metrics over a metric grid: GMAE, GMAE per km²,
//! gridded R², plus patch-level GAME.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blobs::Component;
use crate::error::{Error, Result};
use crate::geo::{GridSpec, Raster};
use crate::labels::PointLabelSet;

/// Figure-style default cell sizes (meters) for resolution sweeps.
pub const DEFAULT_R_LIST: [f64; 6] = [32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

/// How per-cell predicted counts were extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Density,
    Segmentation,
}

/// Ground-truth and predicted counts for each retained grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts {
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
    pub source_kind: SourceKind,
    pub cell_size_m: f64,
    pub n_partial: usize,
}

impl CellCounts {
    pub fn new(gt: Vec<f64>, pred: Vec<f64>, source_kind: SourceKind, cell_size_m: f64) -> Result<Self> {
        if gt.len() != pred.len() {
            return Err(Error::InvalidArgument(format!(
                "gt has {} cells but pred has {}",
                gt.len(),
                pred.len()
            )));
        }
        if gt.is_empty() {
            return Err(Error::InvalidArgument("counts need at least one cell".into()));
        }
        if let Some(v) = gt.iter().chain(&pred).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be finite and non-negative, got {v}"
            )));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        Ok(Self {
            gt,
            pred,
            source_kind,
            cell_size_m,
            n_partial: 0,
        })
    }

    /// Counts on `grid`, recording its partial-cell tally.
    pub fn on_grid(gt: Vec<f64>, pred: Vec<f64>, source_kind: SourceKind, grid: &GridSpec) -> Result<Self> {
        if gt.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} cells, got {}",
                grid.len(),
                gt.len()
            )));
        }
        let mut counts = Self::new(gt, pred, source_kind, grid.cell_size_m())?;
        counts.n_partial = grid.n_partial();
        Ok(counts)
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

fn ensure_on_grid(raster: &Raster, grid: &GridSpec) -> Result<()> {
    if (raster.width(), raster.height()) != grid.shape() || !raster.georef().aligned_with(grid.georef()) {
        return Err(Error::GeorefMismatch(format!(
            "raster {}x{} at {:?} does not match grid {:?} at {:?}",
            raster.width(),
            raster.height(),
            raster.georef(),
            grid.shape(),
            grid.georef()
        )));
    }
    Ok(())
}

/// Sums density pixels into the cell containing each pixel center.
///
/// Each grid row is reduced independently, always in pixel scan order, so the
/// result is bit-identical regardless of thread count.
pub fn counts_from_density(pred: &Raster, grid: &GridSpec) -> Result<Vec<f64>> {
    ensure_on_grid(pred, grid)?;
    let row_map = grid.pixel_row_map();
    let col_map = grid.pixel_col_map();
    let n_cols = grid.n_cols();
    let per_grid_row: Vec<Vec<f64>> = (0..grid.n_rows())
        .into_par_iter()
        .map(|grow| {
            let mut sums = vec![0.0; n_cols];
            for (prow, _) in row_map.iter().enumerate().filter(|(_, &g)| g == grow) {
                for (v, &gcol) in pred.row(prow).iter().zip(col_map) {
                    sums[gcol] += v;
                }
            }
            sums
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for (grow, sums) in per_grid_row.iter().enumerate() {
        for (gcol, &s) in sums.iter().enumerate() {
            if let Some(idx) = grid.lookup(grow, gcol) {
                out[idx] = s;
            }
        }
    }
    Ok(out)
}

/// Number of component centroids falling in each cell.
pub fn counts_from_segmentation(components: &[Component], grid: &GridSpec) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for comp in components {
        if let Some(idx) = grid.cell_of(comp.centroid_world) {
            out[idx] += 1.0;
        }
    }
    out
}

/// Number of labeled points in each cell, plus how many landed in no retained cell.
pub fn counts_from_points(labels: &PointLabelSet, grid: &GridSpec) -> (Vec<f64>, usize) {
    let mut out = vec![0.0; grid.len()];
    let mut outside = 0;
    for p in &labels.points {
        match grid.cell_of(*p) {
            Some(idx) => out[idx] += 1.0,
            None => outside += 1,
        }
    }
    (out, outside)
}

/// Gridded mean absolute error.
pub fn gmae(counts: &CellCounts) -> f64 {
    let total: f64 = counts
        .gt
        .iter()
        .zip(&counts.pred)
        .map(|(y, yhat)| (yhat - y).abs())
        .sum();
    total / counts.len() as f64
}

/// GMAE rescaled to errors per square kilometer of `r`-meter cells.
pub fn gmae_per_km2(gmae: f64, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument(format!("cell size must be positive, got {r}")));
    }
    Ok(gmae * 1_000_000.0 / (r * r))
}

/// Why R² could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RSquaredUndefined {
    TooFewCells,
    ZeroVariance,
}

/// Coefficient of determination of predicted against ground-truth cell counts.
pub fn r_squared(counts: &CellCounts) -> std::result::Result<f64, RSquaredUndefined> {
    if counts.len() < 2 {
        return Err(RSquaredUndefined::TooFewCells);
    }
    let mean = counts.gt.iter().sum::<f64>() / counts.len() as f64;
    let ss_tot: f64 = counts.gt.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(RSquaredUndefined::ZeroVariance);
    }
    let ss_res: f64 = counts
        .gt
        .iter()
        .zip(&counts.pred)
        .map(|(y, yhat)| (y - yhat).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Counting metrics at one grid resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub cell_size_m: f64,
    pub n_cells: usize,
    pub n_partial_cells: usize,
    pub source_kind: SourceKind,
    pub gmae: f64,
    pub gmae_per_km2: f64,
    pub r_squared: Option<f64>,
    pub r_squared_undefined: Option<RSquaredUndefined>,
    pub total_gt: f64,
    pub total_pred: f64,
}

impl CountingReport {
    pub fn from_counts(counts: &CellCounts) -> Self {
        let g = gmae(counts);
        let (r2, undefined) = match r_squared(counts) {
            Ok(v) => (Some(v), None),
            Err(why) => (None, Some(why)),
        };
        Self {
            cell_size_m: counts.cell_size_m,
            n_cells: counts.len(),
            n_partial_cells: counts.n_partial,
            source_kind: counts.source_kind,
            gmae: g,
            gmae_per_km2: g * 1_000_000.0 / (counts.cell_size_m * counts.cell_size_m),
            r_squared: r2,
            r_squared_undefined: undefined,
            total_gt: counts.gt.iter().sum(),
            total_pred: counts.pred.iter().sum(),
        }
    }
}

/// A square image patch with per-pixel ground-truth and predicted counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    gt: Vec<f64>,
    pred: Vec<f64>,
}

impl Patch {
    pub fn new(side: usize, gt: Vec<f64>, pred: Vec<f64>) -> Result<Self> {
        if side == 0 || gt.len() != side * side || pred.len() != side * side {
            return Err(Error::InvalidArgument(format!(
                "patch of side {side} needs {} values per map, got {} and {}",
                side * side,
                gt.len(),
                pred.len()
            )));
        }
        Ok(Self { side, gt, pred })
    }

    /// Builds count maps from point coordinates in `[0, side)²` patch pixels.
    pub fn from_points(side: usize, gt: &[(f64, f64)], pred: &[(f64, f64)]) -> Result<Self> {
        let burn = |pts: &[(f64, f64)]| -> Result<Vec<f64>> {
            let mut map = vec![0.0; side * side];
            for &(x, y) in pts {
                if !(x >= 0.0 && y >= 0.0 && x < side as f64 && y < side as f64) {
                    return Err(Error::InvalidArgument(format!(
                        "point ({x}, {y}) outside patch of side {side}"
                    )));
                }
                map[y as usize * side + x as usize] += 1.0;
            }
            Ok(map)
        };
        Self::new(side, burn(gt)?, burn(pred)?)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn gt(&self) -> &[f64] {
        &self.gt
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    /// Sum of absolute window errors over the `2^level × 2^level` quadtree split.
    fn window_error(&self, level: u32) -> Result<f64> {
        let per_axis = 1usize
            .checked_shl(level)
            .filter(|&n| n <= self.side && self.side.is_multiple_of(n))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "patch side {} cannot be split into 4^{level} windows",
                    self.side
                ))
            })?;
        let win = self.side / per_axis;
        let mut err = 0.0;
        for wy in 0..per_axis {
            for wx in 0..per_axis {
                let (mut g, mut p) = (0.0, 0.0);
                for y in wy * win..(wy + 1) * win {
                    let row = y * self.side;
                    for x in wx * win..(wx + 1) * win {
                        g += self.gt[row + x];
                        p += self.pred[row + x];
                    }
                }
                err += (p - g).abs();
            }
        }
        Ok(err)
    }
}

/// Grid average mean absolute error at quadtree level `level`.
pub fn game(dataset: &[Patch], level: u32) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("GAME needs at least one patch".into()));
    }
    let total = dataset.iter().map(|p| p.window_error(level)).sum::<Result<f64>>()?;
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobs::Component;
    use crate::geo::{make_grid, AffineGeoref, RasterKind, WorldPoint};
    use crate::labels::{density_mask, rasterize_points};
    use proptest::prelude::*;

    fn counts(gt: &[f64], pred: &[f64]) -> CellCounts {
        CellCounts::new(gt.to_vec(), pred.to_vec(), SourceKind::Density, 100.0).unwrap()
    }

    #[test]
    fn gmae_examples() {
        assert_eq!(gmae(&counts(&[3.0, 1.0], &[3.0, 1.0])), 0.0);
        assert_eq!(gmae(&counts(&[3.0, 1.0], &[1.0, 2.0])), 1.5);
        assert_eq!(gmae(&counts(&[17.0], &[12.5])), 4.5);
    }

    #[test]
    fn gmae_per_km2_examples() {
        assert!((gmae_per_km2(0.134, 100.0).unwrap() - 13.4).abs() < 1e-12);
        assert_eq!(gmae_per_km2(0.0, 37.0).unwrap(), 0.0);
        assert_eq!(gmae_per_km2(1.0, 1000.0).unwrap(), 1.0);
        assert!(gmae_per_km2(1.0, 0.0).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let gt = [4.0, 0.0, 2.0, 6.0];
        assert_eq!(r_squared(&counts(&gt, &gt)), Ok(1.0));
        assert!(r_squared(&counts(&gt, &[3.0; 4])).unwrap().abs() < 1e-12);
        let adversarial: Vec<f64> = gt.iter().map(|y| 6.0 - y).collect();
        assert!(r_squared(&counts(&gt, &adversarial)).unwrap() < 0.0);
        assert_eq!(
            r_squared(&counts(&[2.0, 2.0], &[1.0, 3.0])),
            Err(RSquaredUndefined::ZeroVariance)
        );
        assert_eq!(r_squared(&counts(&[2.0], &[1.0])), Err(RSquaredUndefined::TooFewCells));
    }

    #[test]
    fn cell_counts_validation() {
        assert!(CellCounts::new(vec![1.0], vec![], SourceKind::Density, 1.0).is_err());
        assert!(CellCounts::new(vec![-1.0], vec![0.0], SourceKind::Density, 1.0).is_err());
        assert!(CellCounts::new(vec![f64::NAN], vec![0.0], SourceKind::Density, 1.0).is_err());
        assert!(CellCounts::new(vec![], vec![], SourceKind::Density, 1.0).is_err());
    }

    #[test]
    fn report_normalizes_and_flags() {
        let r = CountingReport::from_counts(&counts(&[2.0, 2.0], &[1.0, 3.0]));
        assert_eq!(r.gmae, 1.0);
        assert_eq!(r.gmae_per_km2, 100.0);
        assert_eq!(r.r_squared, None);
        assert_eq!(r.r_squared_undefined, Some(RSquaredUndefined::ZeroVariance));
        assert_eq!((r.total_gt, r.total_pred), (4.0, 4.0));
    }

    fn scene(w: usize, h: usize, res: f64, kind: RasterKind, data: Vec<f64>) -> Raster {
        Raster::new(w, h, data, AffineGeoref::square(0.0, 0.0, res).unwrap(), kind).unwrap()
    }

    #[test]
    fn density_counts() {
        let zero = scene(50, 50, 1.0, RasterKind::Density, vec![0.0; 2500]);
        let grid = make_grid(&zero, 10.0, None).unwrap();
        assert!(counts_from_density(&zero, &grid).unwrap().iter().all(|&c| c == 0.0));

        // uniform 0.01 over one 100x100 px cell
        let uniform = scene(200, 100, 1.0, RasterKind::Density, vec![0.01; 20_000]);
        let grid = make_grid(&uniform, 100.0, None).unwrap();
        let c = counts_from_density(&uniform, &grid).unwrap();
        assert!((c[0] - 100.0).abs() < 1e-9 && (c[1] - 100.0).abs() < 1e-9);

        // one kernel in the middle of the top-left 20x20 cell
        let g = AffineGeoref::square(0.0, 0.0, 1.0).unwrap();
        let labels = PointLabelSet::new(vec![WorldPoint::new(10.5, -10.5)], 0.0, "").unwrap();
        let pts = rasterize_points(&labels, g, 40, 40).unwrap();
        let dens = density_mask(&pts.raster, 7, 1.5).unwrap().raster;
        let grid = make_grid(&dens, 20.0, None).unwrap();
        let c = counts_from_density(&dens, &grid).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn density_counts_reject_misaligned_grid() {
        let a = scene(20, 20, 1.0, RasterKind::Density, vec![0.0; 400]);
        let b = scene(20, 20, 0.5, RasterKind::Density, vec![0.0; 400]);
        let grid = make_grid(&a, 10.0, None).unwrap();
        assert!(matches!(counts_from_density(&b, &grid), Err(Error::GeorefMismatch(_))));
    }

    #[test]
    fn segmentation_counts() {
        let base = scene(100, 100, 1.0, RasterKind::Binary, vec![0.0; 10_000]);
        let grid = make_grid(&base, 50.0, None).unwrap();
        let g = *base.georef();
        assert!(counts_from_segmentation(&[], &grid).iter().all(|&c| c == 0.0));

        let comps: Vec<Component> = [(3, 3), (10, 20), (40, 40)]
            .iter()
            .enumerate()
            .map(|(i, &p)| Component::from_pixels(i, vec![p], &g).unwrap())
            .collect();
        assert_eq!(counts_from_segmentation(&comps, &grid), vec![3.0, 0.0, 0.0, 0.0]);

        // 10-px horizontal bar over columns 45..=54 on row 10: centroid x = 50.0 sits on
        // the shared edge and belongs to the right-hand cell
        let bar = Component::from_pixels(0, (45..55).map(|c| (c, 10)).collect(), &g).unwrap();
        assert_eq!(bar.centroid_world, WorldPoint::new(50.0, -10.5));
        assert_eq!(counts_from_segmentation(&[bar], &grid), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn game_examples() {
        // 4 objects in the top-left quadrant, one predicted per quadrant
        let gt = [(0.5, 0.5), (1.5, 0.5), (0.5, 1.5), (1.5, 1.5)];
        let pred = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)];
        let p = Patch::from_points(4, &gt, &pred).unwrap();
        assert_eq!(game(std::slice::from_ref(&p), 1).unwrap(), 6.0);
        assert_eq!(game(std::slice::from_ref(&p), 0).unwrap(), 0.0);
        let same = Patch::from_points(4, &gt, &gt).unwrap();
        assert_eq!(game(&[same], 2).unwrap(), 0.0);
        assert!(game(std::slice::from_ref(&p), 3).is_err());
        assert!(game(&[], 0).is_err());
        assert!(Patch::from_points(4, &[(4.0, 0.0)], &[]).is_err());
    }

    fn patch_dataset() -> impl Strategy<Value = Vec<Patch>> {
        prop::collection::vec(
            (prop::collection::vec(0u8..5, 64), prop::collection::vec(0u8..5, 64)).prop_map(|(g, p)| {
                Patch::new(
                    8,
                    g.into_iter().map(f64::from).collect(),
                    p.into_iter().map(f64::from).collect(),
                )
                .unwrap()
            }),
            1..6,
        )
    }

    proptest! {
        #[test]
        fn game_zero_is_mae(ds in patch_dataset()) {
            let mae = ds
                .iter()
                .map(|p| (p.pred.iter().sum::<f64>() - p.gt.iter().sum::<f64>()).abs())
                .sum::<f64>()
                / ds.len() as f64;
            prop_assert_eq!(game(&ds, 0).unwrap(), mae);
            // finer windows can only expose more error
            prop_assert!(game(&ds, 1).unwrap() >= game(&ds, 0).unwrap());
            prop_assert!(game(&ds, 2).unwrap() >= game(&ds, 1).unwrap());
        }

        #[test]
        fn r_squared_perfect_and_permutation(gt in prop::collection::vec(0.0f64..50.0, 2..40), seed in any::<u64>()) {
            let c = counts(&gt, &gt);
            if let Ok(v) = r_squared(&c) {
                prop_assert_eq!(v, 1.0);
            }
            let pred: Vec<f64> = gt.iter().map(|y| y * 0.7 + 3.0).collect();
            let mut idx: Vec<usize> = (0..gt.len()).collect();
            idx.rotate_left((seed as usize) % gt.len());
            let (pg, pp): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (gt[i], pred[i])).unzip();
            let a = r_squared(&counts(&gt, &pred));
            let b = r_squared(&counts(&pg, &pp));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn coarse_error_bounded_by_fine(errors in prop::collection::vec(-5.0f64..5.0, 16)) {
            // 4x4 fine cells merged into 2x2 coarse cells
            let gt: Vec<f64> = errors.iter().map(|_| 10.0).collect();
            let pred: Vec<f64> = errors.iter().map(|e| 10.0 + e).collect();
            let fine = counts(&gt, &pred);
            let merge = |v: &[f64]| -> Vec<f64> {
                (0..4)
                    .map(|q| {
                        let (qr, qc) = (q / 2, q % 2);
                        (0..4).map(|k| v[(qr * 2 + k / 2) * 4 + qc * 2 + k % 2]).sum()
                    })
                    .collect()
            };
            let coarse = counts(&merge(&gt), &merge(&pred));
            for q in 0..4 {
                let (qr, qc) = (q / 2, q % 2);
                let parts: Vec<f64> = (0..4).map(|k| errors[(qr * 2 + k / 2) * 4 + qc * 2 + k % 2]).collect();
                prop_assert!(parts.iter().sum::<f64>().abs() <= parts.iter().map(|e| e.abs()).sum::<f64>() + 1e-9);
            }
            prop_assert!(gmae(&coarse) <= gmae(&fine) * 4.0 + 1e-9);
        }

        #[test]
        fn density_counts_conserve_mass(
            w in 1usize..80, h in 1usize..80, r in 3.0f64..50.0,
            vals in prop::collection::vec(0.0f64..2.0, 6400),
        ) {
            let data = vals[..w * h].to_vec();
            let ras = scene(w, h, 0.7, RasterKind::Density, data);
            let grid = make_grid(&ras, r, None).unwrap();
            let c = counts_from_density(&ras, &grid).unwrap();
            prop_assert!((c.iter().sum::<f64>() - ras.total()).abs() < 1e-6);
        }
    }
}
