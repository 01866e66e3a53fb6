//! Point labels and the density / segmentation masks derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{AffineGeoref, Raster, RasterKind, WorldPoint};

pub const DEFAULT_KERNEL_SIZE: usize = 7;
pub const DEFAULT_FILTER_SIZE: usize = 7;
pub const DEFAULT_SIGMA_PX: f64 = 1.5;

/// Animal locations annotated in world coordinates, each possibly displaced
/// from the animal by up to `noise_radius_d` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLabelSet {
    pub points: Vec<WorldPoint>,
    pub noise_radius_d: f64,
    pub class_tag: String,
}

impl PointLabelSet {
    pub fn new(points: Vec<WorldPoint>, noise_radius_d: f64, class_tag: impl Into<String>) -> Result<Self> {
        if !(noise_radius_d.is_finite() && noise_radius_d >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise radius must be non-negative, got {noise_radius_d}"
            )));
        }
        if let Some(p) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "label coordinates must be finite, got ({}, {})",
                p.x, p.y
            )));
        }
        Ok(Self {
            points,
            noise_radius_d,
            class_tag: class_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of points lying farther than `noise_radius_d` outside `scene`.
    pub fn outside_scene(&self, scene: &Raster) -> Vec<usize> {
        let ext = scene.extent();
        let d = self.noise_radius_d;
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.x < ext.min_x - d || p.x > ext.max_x + d || p.y < ext.min_y - d || p.y > ext.max_y + d)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Outcome of burning point labels into a binary mask.
#[derive(Debug, Clone)]
pub struct RasterizedPoints {
    pub raster: Raster,
    /// Points that landed on an already-set pixel.
    pub collisions: usize,
    /// Indices of points falling outside the raster.
    pub dropped: Vec<usize>,
}

/// Burns each label into the pixel containing it.
pub fn rasterize_points(
    labels: &PointLabelSet,
    georef: AffineGeoref,
    width: usize,
    height: usize,
) -> Result<RasterizedPoints> {
    let mut data = vec![0.0; width * height];
    let mut collisions = 0;
    let mut dropped = Vec::new();
    for (i, p) in labels.points.iter().enumerate() {
        let (col, row) = georef.pixel_containing(*p);
        if col < 0 || row < 0 || col as usize >= width || row as usize >= height {
            dropped.push(i);
            continue;
        }
        let idx = row as usize * width + col as usize;
        if data[idx] == 1.0 {
            collisions += 1;
        }
        data[idx] = 1.0;
    }
    Ok(RasterizedPoints {
        raster: Raster::new(width, height, data, georef, RasterKind::Binary)?,
        collisions,
        dropped,
    })
}

/// Square Gaussian kernel normalized to unit sum, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let half = (size / 2) as f64;
        let mut weights: Vec<f64> = (0..size * size)
            .map(|i| {
                let dx = (i % size) as f64 - half;
                let dy = (i / size) as f64 - half;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { size, sigma, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: i64, dy: i64) -> f64 {
        let half = (self.size / 2) as i64;
        self.weights[((dy + half) as usize) * self.size + (dx + half) as usize]
    }
}

/// Density training mask: point labels smeared by a normalized kernel.
#[derive(Debug, Clone)]
pub struct DensityMask {
    pub raster: Raster,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    /// Kernel mass lost off the raster edges.
    pub truncated_mass: f64,
}

/// Convolves a binary point mask with a normalized Gaussian kernel.
///
/// Kernels are truncated at the raster border without renormalization; the
/// lost mass is reported in [`DensityMask::truncated_mass`].
pub fn density_mask(point_raster: &Raster, kernel_size: usize, sigma: f64) -> Result<DensityMask> {
    point_raster.ensure_binary()?;
    let kernel = GaussianKernel::new(kernel_size, sigma)?;
    let (w, h) = (point_raster.width() as i64, point_raster.height() as i64);
    let half = (kernel_size / 2) as i64;
    let mut out = vec![0.0; point_raster.data().len()];
    let mut truncated = 0.0;
    for row in 0..h {
        for col in 0..w {
            if point_raster.get(col as usize, row as usize) == 0.0 {
                continue;
            }
            for dy in -half..=half {
                for dx in -half..=half {
                    let (c, r) = (col + dx, row + dy);
                    let weight = kernel.weight(dx, dy);
                    if c < 0 || r < 0 || c >= w || r >= h {
                        truncated += weight;
                    } else {
                        out[(r * w + c) as usize] += weight;
                    }
                }
            }
        }
    }
    Ok(DensityMask {
        raster: Raster::new(
            point_raster.width(),
            point_raster.height(),
            out,
            *point_raster.georef(),
            RasterKind::Density,
        )?,
        kernel_size,
        kernel_sigma: sigma,
        truncated_mass: truncated,
    })
}

/// Segmentation training mask: point labels dilated by a square filter.
#[derive(Debug, Clone)]
pub struct SegmentationMask {
    pub raster: Raster,
    pub filter_size: usize,
}

/// Square maximum filter (binary dilation) of side `filter_size`.
pub fn segmentation_mask(point_raster: &Raster, filter_size: usize) -> Result<SegmentationMask> {
    point_raster.ensure_binary()?;
    if filter_size == 0 || filter_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "filter size must be odd and positive, got {filter_size}"
        )));
    }
    let (w, h) = (point_raster.width(), point_raster.height());
    let half = filter_size / 2;
    // separable: max along rows, then along columns
    let mut horizontal = vec![0.0; w * h];
    for row in 0..h {
        let src = point_raster.row(row);
        for col in 0..w {
            let lo = col.saturating_sub(half);
            let hi = (col + half).min(w - 1);
            if src[lo..=hi].contains(&1.0) {
                horizontal[row * w + col] = 1.0;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        let lo = row.saturating_sub(half);
        let hi = (row + half).min(h - 1);
        for col in 0..w {
            if (lo..=hi).any(|r| horizontal[r * w + col] == 1.0) {
                out[row * w + col] = 1.0;
            }
        }
    }
    Ok(SegmentationMask {
        raster: Raster::new(w, h, out, *point_raster.georef(), RasterKind::Binary)?,
        filter_size,
    })
}
