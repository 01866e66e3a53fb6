//! Connected components ("blobs") of binary prediction rasters.
//!
//! Labeling is the classic two-pass union-find scheme. The raster is cut into
//! horizontal strips that are labeled independently (in parallel), then the
//! provisional labels are merged across strip seams and renumbered in raster
//! scan order, so the output does not depend on the strip layout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{AffineGeoref, Raster, RasterKind, WorldPoint};

/// Pixel adjacency used when grouping foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }

    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub min_col: usize,
    pub min_row: usize,
    pub max_col: usize,
    pub max_row: usize,
}

/// One connected blob of positive pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: usize,
    /// Member pixels `(col, row)` in scan order.
    pub pixels: Vec<(usize, usize)>,
    pub centroid_world: WorldPoint,
    pub area_px: usize,
    pub bbox: PixelRect,
}

impl Component {
    /// Builds a component from its pixels, computing centroid and bounding box.
    pub fn from_pixels(id: usize, mut pixels: Vec<(usize, usize)>, georef: &AffineGeoref) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("component must have at least one pixel".into()));
        }
        pixels.sort_by_key(|&(c, r)| (r, c));
        pixels.dedup();
        let mut bbox = PixelRect {
            min_col: usize::MAX,
            min_row: usize::MAX,
            max_col: 0,
            max_row: 0,
        };
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(c, r) in &pixels {
            bbox.min_col = bbox.min_col.min(c);
            bbox.max_col = bbox.max_col.max(c);
            bbox.min_row = bbox.min_row.min(r);
            bbox.max_row = bbox.max_row.max(r);
            sx += c as f64 + 0.5;
            sy += r as f64 + 0.5;
        }
        let n = pixels.len() as f64;
        Ok(Self {
            id,
            area_px: pixels.len(),
            centroid_world: georef.pixel_to_world(sx / n, sy / n),
            pixels,
            bbox,
        })
    }
}

/// Components of one raster together with the per-pixel label image
/// (0 = background, `id + 1` otherwise).
#[derive(Debug, Clone)]
pub struct Labeling {
    width: usize,
    height: usize,
    georef: AffineGeoref,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl Labeling {
    /// Assembles a labeling from hand-built components. Component ids are
    /// reassigned to their position in `components`.
    pub fn from_components(
        mut components: Vec<Component>,
        georef: AffineGeoref,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let mut labels = vec![0u32; width * height];
        for (i, comp) in components.iter_mut().enumerate() {
            comp.id = i;
            for &(c, r) in &comp.pixels {
                if c >= width || r >= height {
                    return Err(Error::InvalidArgument(format!(
                        "component {i} pixel ({c}, {r}) outside {width}x{height} raster"
                    )));
                }
                let slot = &mut labels[r * width + c];
                if *slot != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "pixel ({c}, {r}) claimed by components {} and {i}",
                        *slot - 1
                    )));
                }
                *slot = i as u32 + 1;
            }
        }
        Ok(Self {
            width,
            height,
            georef,
            labels,
            components,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn georef(&self) -> &AffineGeoref {
        &self.georef
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Component id at pixel `(col, row)`, if foreground.
    pub fn component_at(&self, col: usize, row: usize) -> Option<usize> {
        match self.labels[row * self.width + col] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    /// Label image as a raster (`id + 1` per pixel), for debugging exports.
    pub fn label_raster(&self) -> Result<Raster> {
        Raster::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l as f64).collect(),
            self.georef,
            RasterKind::Panchromatic,
        )
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone, Default)]
pub struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn push(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.size.push(1);
        id
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        ra
    }
}

/// Minimum strip height handed to a worker.
const MIN_STRIP_ROWS: usize = 64;

/// Labels one strip. Provisional labels are 1-based and local to the strip.
fn label_strip(raster: &Raster, row0: usize, out: &mut [u32], conn: Connectivity) -> DisjointSet {
    let w = raster.width();
    let rows = out.len() / w;
    let mut sets = DisjointSet::new(1); // slot 0 is background
    for r in 0..rows {
        let src = raster.row(row0 + r);
        for c in 0..w {
            if src[c] == 0.0 {
                continue;
            }
            let mut neighbors = [0u32; 4];
            neighbors[0] = if c > 0 { out[r * w + c - 1] } else { 0 };
            if r > 0 {
                let up = (r - 1) * w;
                neighbors[1] = out[up + c];
                if conn == Connectivity::Eight {
                    neighbors[2] = if c > 0 { out[up + c - 1] } else { 0 };
                    neighbors[3] = if c + 1 < w { out[up + c + 1] } else { 0 };
                }
            }
            let label = match neighbors.iter().copied().filter(|&l| l != 0).min() {
                None => sets.push(),
                Some(m) => {
                    for &l in neighbors.iter().filter(|&&l| l != 0 && l != m) {
                        sets.union(m, l);
                    }
                    m
                }
            };
            out[r * w + c] = label;
        }
    }
    sets
}

/// Groups positive pixels of a binary raster into connected components.
pub fn connected_components(pred: &Raster, conn: Connectivity) -> Result<Labeling> {
    let strip_rows = (pred.height() / (rayon::current_num_threads() * 4).max(1)).max(MIN_STRIP_ROWS);
    connected_components_with_strips(pred, conn, strip_rows)
}

/// Same as [`connected_components`] with an explicit strip height.
pub fn connected_components_with_strips(pred: &Raster, conn: Connectivity, strip_rows: usize) -> Result<Labeling> {
    pred.ensure_binary()?;
    let (w, h) = (pred.width(), pred.height());
    let strip_rows = strip_rows.max(1);
    let mut labels = vec![0u32; w * h];

    let strips: Vec<DisjointSet> = labels
        .par_chunks_mut(strip_rows * w)
        .enumerate()
        .map(|(s, chunk)| label_strip(pred, s * strip_rows, chunk, conn))
        .collect();

    // global provisional ids: strip offset + local label
    let mut offsets = Vec::with_capacity(strips.len());
    let mut total = 1usize;
    for s in &strips {
        offsets.push(total as u32 - 1);
        total += s.len() - 1;
    }
    let mut global = DisjointSet::new(total);
    for (s, mut sets) in strips.into_iter().enumerate() {
        for local in 1..sets.len() as u32 {
            let root = sets.find(local);
            if root != local {
                global.union(offsets[s] + local, offsets[s] + root);
            }
        }
    }
    for (s, chunk) in labels.chunks_mut(strip_rows * w).enumerate() {
        for l in chunk.iter_mut().filter(|l| **l != 0) {
            *l += offsets[s];
        }
    }
    // seams between strips
    for seam in (strip_rows..h).step_by(strip_rows) {
        let (up, down) = ((seam - 1) * w, seam * w);
        for c in 0..w {
            let b = labels[down + c];
            if b == 0 {
                continue;
            }
            let lo = if conn == Connectivity::Eight {
                c.saturating_sub(1)
            } else {
                c
            };
            let hi = if conn == Connectivity::Eight {
                (c + 1).min(w - 1)
            } else {
                c
            };
            for a in lo..=hi {
                let la = labels[up + a];
                if la != 0 {
                    global.union(la, b);
                }
            }
        }
    }

    // renumber roots in scan order and collect pixels
    let mut dense = vec![u32::MAX; total];
    let mut pixel_lists: Vec<Vec<(usize, usize)>> = Vec::new();
    for (idx, l) in labels.iter_mut().enumerate() {
        if *l == 0 {
            continue;
        }
        let root = global.find(*l) as usize;
        if dense[root] == u32::MAX {
            dense[root] = pixel_lists.len() as u32;
            pixel_lists.push(Vec::new());
        }
        let id = dense[root];
        pixel_lists[id as usize].push((idx % w, idx / w));
        *l = id + 1;
    }
    let georef = *pred.georef();
    let components = pixel_lists
        .into_par_iter()
        .enumerate()
        .map(|(id, px)| Component::from_pixels(id, px, &georef))
        .collect::<Result<Vec<_>>>()?;
    Ok(Labeling {
        width: w,
        height: h,
        georef,
        labels,
        components,
    })
}

/// Binarizes a raster: pixel = 1 iff value > `tau`.
pub fn threshold_density(pred: &Raster, tau: f64) -> Result<Raster> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {tau}"
        )));
    }
    let data = pred.data().iter().map(|&v| if v > tau { 1.0 } else { 0.0 }).collect();
    Raster::new(pred.width(), pred.height(), data, *pred.georef(), RasterKind::Binary)
}
