//! Georeferencing, raster containers and metric grids over scenes.
//!
//! World coordinates are planar meters in a projected CRS. Rasters are
//! axis-aligned and north-up: pixel column `i` grows east, pixel row `j`
//! grows south. Integer pixel coordinates address pixel corners, so the
//! center of pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (in pixels) applied when snapping a continuous pixel coordinate
/// to the pixel that contains it, so that corners produced by
/// [`AffineGeoref::pixel_to_world`] land back on the pixel they came from.
const SNAP_EPS_PX: f64 = 1e-9;

/// Tolerance used when comparing two georeferences for alignment.
const ALIGN_EPS_M: f64 = 1e-6;

/// A point in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// North-up affine transform between pixel and world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineGeoref {
    /// World x of the top-left raster corner.
    pub origin_x: f64,
    /// World y of the top-left raster corner.
    pub origin_y: f64,
    /// Meters per pixel along x.
    pub res_x: f64,
    /// Meters per pixel along y, applied downward.
    pub res_y: f64,
}

impl AffineGeoref {
    pub fn new(origin_x: f64, origin_y: f64, res_x: f64, res_y: f64) -> Result<Self> {
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "georef origin must be finite, got ({origin_x}, {origin_y})"
            )));
        }
        if !(res_x.is_finite() && res_x > 0.0 && res_y.is_finite() && res_y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "georef resolution must be positive, got ({res_x}, {res_y})"
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            res_x,
            res_y,
        })
    }

    /// Square pixels of `res` meters.
    pub fn square(origin_x: f64, origin_y: f64, res: f64) -> Result<Self> {
        Self::new(origin_x, origin_y, res, res)
    }

    /// Maps continuous pixel coordinates `(col, row)` to world coordinates.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> WorldPoint {
        WorldPoint {
            x: self.origin_x + col * self.res_x,
            y: self.origin_y - row * self.res_y,
        }
    }

    /// World position of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> WorldPoint {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Inverse of [`pixel_to_world`](Self::pixel_to_world), returning continuous pixel coordinates.
    pub fn world_to_pixel(&self, p: WorldPoint) -> (f64, f64) {
        ((p.x - self.origin_x) / self.res_x, (self.origin_y - p.y) / self.res_y)
    }

    /// Integer coordinates of the pixel containing `p`, which may lie off the raster.
    ///
    /// Pixels are half-open, `[i, i + 1)` along each axis.
    pub fn pixel_containing(&self, p: WorldPoint) -> (i64, i64) {
        let (u, v) = self.world_to_pixel(p);
        // absorb rounding in large projected coordinates
        let eps_u = SNAP_EPS_PX + 8.0 * f64::EPSILON * (p.x.abs() + self.origin_x.abs()) / self.res_x;
        let eps_v = SNAP_EPS_PX + 8.0 * f64::EPSILON * (p.y.abs() + self.origin_y.abs()) / self.res_y;
        ((u + eps_u).floor() as i64, (v + eps_v).floor() as i64)
    }

    /// True when the two transforms describe the same pixel lattice.
    pub fn aligned_with(&self, other: &AffineGeoref) -> bool {
        (self.origin_x - other.origin_x).abs() <= ALIGN_EPS_M
            && (self.origin_y - other.origin_y).abs() <= ALIGN_EPS_M
            && (self.res_x - other.res_x).abs() <= ALIGN_EPS_M * self.res_x
            && (self.res_y - other.res_y).abs() <= ALIGN_EPS_M * self.res_y
    }
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// What the values in a raster band mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterKind {
    Panchromatic,
    Density,
    Binary,
    Validity,
}

/// Single-band georeferenced raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
    georef: AffineGeoref,
    kind: RasterKind,
}

impl Raster {
    /// Builds a raster, checking the value domain implied by `kind`.
    pub fn new(width: usize, height: usize, data: Vec<f64>, georef: AffineGeoref, kind: RasterKind) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "expected {} values for a {width}x{height} raster, got {}",
                width * height,
                data.len()
            )));
        }
        for (idx, &v) in data.iter().enumerate() {
            let ok = match kind {
                RasterKind::Panchromatic => v.is_finite(),
                RasterKind::Density => v.is_finite() && v >= 0.0,
                RasterKind::Binary | RasterKind::Validity => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::InvalidRaster(format!(
                    "value {v} at pixel ({}, {}) is not allowed in a {kind:?} raster",
                    idx % width,
                    idx / width
                )));
            }
        }
        Ok(Self {
            width,
            height,
            data,
            georef,
            kind,
        })
    }

    pub fn zeros(width: usize, height: usize, georef: AffineGeoref, kind: RasterKind) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height], georef, kind)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn georef(&self) -> &AffineGeoref {
        &self.georef
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Sum of all pixel values in scan order.
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Reinterprets the band under a different kind, re-validating values.
    pub fn with_kind(self, kind: RasterKind) -> Result<Self> {
        Self::new(self.width, self.height, self.data, self.georef, kind)
    }

    /// World rectangle covered by the raster.
    pub fn extent(&self) -> Bounds {
        let g = &self.georef;
        Bounds {
            min_x: g.origin_x,
            max_x: g.origin_x + self.width as f64 * g.res_x,
            max_y: g.origin_y,
            min_y: g.origin_y - self.height as f64 * g.res_y,
        }
    }

    /// Whether the in-bounds pixel `(col, row)` exists, given signed coordinates.
    pub fn contains_pixel(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Fails unless every value is exactly 0 or 1.
    pub fn ensure_binary(&self) -> Result<()> {
        match self.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            None => Ok(()),
            Some(idx) => Err(Error::NotBinary {
                col: idx % self.width,
                row: idx / self.width,
                value: self.data[idx],
            }),
        }
    }

    /// Fails unless `other` shares this raster's shape and pixel lattice.
    pub fn ensure_aligned(&self, other: &Raster) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::GeorefMismatch(format!(
                "raster shapes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        if !self.georef.aligned_with(&other.georef) {
            return Err(Error::GeorefMismatch(format!(
                "georeferences differ: {:?} vs {:?}",
                self.georef, other.georef
            )));
        }
        Ok(())
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Interpolation used by [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Nearest,
    Bilinear,
}

impl Resampling {
    /// Bilinear for continuous bands, nearest for binary ones.
    pub fn for_kind(kind: RasterKind) -> Self {
        match kind {
            RasterKind::Binary | RasterKind::Validity => Resampling::Nearest,
            RasterKind::Panchromatic | RasterKind::Density => Resampling::Bilinear,
        }
    }
}

/// Resamples `src` onto a target pixel lattice. Target pixels whose centers
/// fall outside the source extent are set to zero.
pub fn resample(src: &Raster, target: AffineGeoref, width: usize, height: usize, method: Resampling) -> Result<Raster> {
    let mut out = vec![0.0; width * height];
    let (sw, sh) = (src.width as f64, src.height as f64);
    for row in 0..height {
        for col in 0..width {
            let (u, v) = src.georef.world_to_pixel(target.pixel_center(col, row));
            if u < 0.0 || v < 0.0 || u >= sw || v >= sh {
                continue;
            }
            out[row * width + col] = match method {
                Resampling::Nearest => src.get(u.floor() as usize, v.floor() as usize),
                Resampling::Bilinear => bilinear(src, u - 0.5, v - 0.5),
            };
        }
    }
    Raster::new(width, height, out, target, src.kind)
}

fn bilinear(src: &Raster, x: f64, y: f64) -> f64 {
    let max_c = (src.width - 1) as f64;
    let max_r = (src.height - 1) as f64;
    let x = x.clamp(0.0, max_c);
    let y = y.clamp(0.0, max_r);
    let (c0, r0) = (x.floor() as usize, y.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(src.width - 1), (r0 + 1).min(src.height - 1));
    let (fx, fy) = (x - c0 as f64, y - r0 as f64);
    let top = src.get(c0, r0) * (1.0 - fx) + src.get(c1, r0) * fx;
    let bottom = src.get(c0, r1) * (1.0 - fx) + src.get(c1, r1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// One `r × r` grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub bounds: Bounds,
    /// Cell truncated by the scene border.
    pub partial: bool,
    /// Pixels whose centers fall in the cell (restricted to valid pixels when masked).
    pub valid_px: usize,
}

/// A tiling of a scene into square cells of `cell_size_m` meters.
///
/// Cells are half-open in offset space: measured from the top-left corner,
/// cell `(row, col)` covers offsets `[col·r, (col+1)·r) × [row·r, (row+1)·r)`.
#[derive(Debug, Clone)]
pub struct GridSpec {
    cell_size_m: f64,
    cells: Vec<Cell>,
    georef: AffineGeoref,
    width: usize,
    height: usize,
    n_rows: usize,
    n_cols: usize,
    masked: bool,
    /// Maps `row * n_cols + col` to an index in `cells`.
    lookup: Vec<Option<usize>>,
    pixel_col_to_cell: Vec<usize>,
    pixel_row_to_cell: Vec<usize>,
}

impl GridSpec {
    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn georef(&self) -> &AffineGeoref {
        &self.georef
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_masked(&self) -> bool {
        self.masked
    }

    pub fn n_partial(&self) -> usize {
        self.cells.iter().filter(|c| c.partial).count()
    }

    /// Index of the retained cell containing world point `p`.
    pub fn cell_of(&self, p: WorldPoint) -> Option<usize> {
        let ox = p.x - self.georef.origin_x;
        let oy = self.georef.origin_y - p.y;
        let w = self.width as f64 * self.georef.res_x;
        let h = self.height as f64 * self.georef.res_y;
        if !(0.0..w).contains(&ox) || !(0.0..h).contains(&oy) {
            return None;
        }
        let col = ((ox / self.cell_size_m).floor() as usize).min(self.n_cols - 1);
        let row = ((oy / self.cell_size_m).floor() as usize).min(self.n_rows - 1);
        self.lookup[row * self.n_cols + col]
    }

    /// Index of the retained cell containing the center of pixel `(col, row)`.
    pub fn cell_of_pixel(&self, col: usize, row: usize) -> Option<usize> {
        self.lookup[self.pixel_row_to_cell[row] * self.n_cols + self.pixel_col_to_cell[col]]
    }

    /// Grid row owning each pixel row.
    pub(crate) fn pixel_row_map(&self) -> &[usize] {
        &self.pixel_row_to_cell
    }

    /// Grid column owning each pixel column.
    pub(crate) fn pixel_col_map(&self) -> &[usize] {
        &self.pixel_col_to_cell
    }

    pub(crate) fn lookup(&self, grid_row: usize, grid_col: usize) -> Option<usize> {
        self.lookup[grid_row * self.n_cols + grid_col]
    }
}

fn cells_along(extent_m: f64, r: f64) -> usize {
    ((extent_m / r) - 1e-9).ceil().max(1.0) as usize
}

/// Tiles `scene` with `r`-meter cells, dropping cells without any valid pixel
/// when `valid_mask` is given.
pub fn make_grid(scene: &Raster, r: f64, valid_mask: Option<&Raster>) -> Result<GridSpec> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument(format!("cell size must be positive, got {r}")));
    }
    if let Some(mask) = valid_mask {
        scene.ensure_aligned(mask)?;
        mask.ensure_binary()?;
    }
    let g = *scene.georef();
    let (width, height) = (scene.width(), scene.height());
    let extent_w = width as f64 * g.res_x;
    let extent_h = height as f64 * g.res_y;
    let n_cols = cells_along(extent_w, r);
    let n_rows = cells_along(extent_h, r);

    let to_cell = |i: usize, res: f64, n: usize| ((((i as f64 + 0.5) * res) / r).floor() as usize).min(n - 1);
    let pixel_col_to_cell: Vec<usize> = (0..width).map(|i| to_cell(i, g.res_x, n_cols)).collect();
    let pixel_row_to_cell: Vec<usize> = (0..height).map(|j| to_cell(j, g.res_y, n_rows)).collect();

    let mut valid_px = vec![0usize; n_rows * n_cols];
    for (row, &grow) in pixel_row_to_cell.iter().enumerate() {
        for col in 0..width {
            let counted = match valid_mask {
                Some(mask) => mask.get(col, row) == 1.0,
                None => true,
            };
            if counted {
                valid_px[grow * n_cols + pixel_col_to_cell[col]] += 1;
            }
        }
    }

    let mut cells = Vec::new();
    let mut lookup = vec![None; n_rows * n_cols];
    for row in 0..n_rows {
        for col in 0..n_cols {
            let idx = row * n_cols + col;
            if valid_mask.is_some() && valid_px[idx] == 0 {
                continue;
            }
            let x0 = col as f64 * r;
            let y0 = row as f64 * r;
            let x1 = (x0 + r).min(extent_w);
            let y1 = (y0 + r).min(extent_h);
            let partial = (x1 - x0) < r - 1e-9 || (y1 - y0) < r - 1e-9;
            lookup[idx] = Some(cells.len());
            cells.push(Cell {
                row,
                col,
                bounds: Bounds {
                    min_x: g.origin_x + x0,
                    max_x: g.origin_x + x1,
                    max_y: g.origin_y - y0,
                    min_y: g.origin_y - y1,
                },
                partial,
                valid_px: valid_px[idx],
            });
        }
    }

    Ok(GridSpec {
        cell_size_m: r,
        cells,
        georef: g,
        width,
        height,
        n_rows,
        n_cols,
        masked: valid_mask.is_some(),
        lookup,
        pixel_col_to_cell,
        pixel_row_to_cell,
    })
}
