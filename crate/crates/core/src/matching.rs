//! Localization metrics: optimistic and conservative matching of predicted
//! blobs to point labels under a cutoff distance.
//!
//! A blob and a label are linked when the label lies within `d` meters of the
//! center of at least one blob pixel. Optimistic matching lets one blob
//! satisfy any number of labels. Conservative matching pairs blobs and labels
//! one-to-one through a maximum cardinality bipartite matching.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blobs::{Component, Labeling};
use crate::error::{Error, Result};
use crate::geo::{AffineGeoref, WorldPoint};
use crate::labels::PointLabelSet;

pub const DEFAULT_CUTOFF_M: f64 = 4.0;

/// Default cutoff sweep, 1 to 8 meters.
pub const DEFAULT_D_SWEEP: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

fn check_cutoff(d: f64) -> Result<()> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "cutoff distance must be non-negative, got {d}"
        )))
    }
}

/// Whether `label` lies within `d` meters of any pixel center of `component`.
pub fn intersects_within(component: &Component, label: WorldPoint, d: f64, georef: &AffineGeoref) -> bool {
    // bounding box of pixel centers, grown by d
    let lo = georef.pixel_center(component.bbox.min_col, component.bbox.max_row);
    let hi = georef.pixel_center(component.bbox.max_col, component.bbox.min_row);
    let dx = (lo.x - label.x).max(label.x - hi.x).max(0.0);
    let dy = (lo.y - label.y).max(label.y - hi.y).max(0.0);
    if dx.hypot(dy) > d + 1e-9 {
        return false;
    }
    component
        .pixels
        .iter()
        .any(|&(c, r)| georef.pixel_center(c, r).distance(&label) <= d)
}

/// Bipartite graph with components on the left and labels on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    n_left: usize,
    n_right: usize,
    adj: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    pub fn new(n_left: usize, n_right: usize) -> Self {
        Self {
            n_left,
            n_right,
            adj: vec![Vec::new(); n_left],
        }
    }

    /// Builds a graph from `(left, right)` edges; duplicates are ignored.
    pub fn from_edges(n_left: usize, n_right: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(n_left, n_right);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        for list in &mut g.adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u >= self.n_left || v >= self.n_right {
            return Err(Error::InvalidArgument(format!(
                "edge ({u}, {v}) outside a {}x{} bipartite graph",
                self.n_left, self.n_right
            )));
        }
        self.adj[u].push(v);
        Ok(())
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }
}

/// A matching, as `(left, right)` pairs sorted by left node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

const UNMATCHED: usize = usize::MAX;
const INF: usize = usize::MAX;

/// Maximum cardinality matching via Hopcroft-Karp, `O(E √V)`.
///
/// Layers are built by BFS from free left nodes and augmenting paths are found
/// by an explicit-stack DFS, so deep paths cannot overflow the call stack.
pub fn max_cardinality_matching(g: &BipartiteGraph) -> Matching {
    let mut match_left = vec![UNMATCHED; g.n_left];
    let mut match_right = vec![UNMATCHED; g.n_right];
    let mut dist = vec![INF; g.n_left];
    let mut cursor = vec![0usize; g.n_left];
    let mut queue = VecDeque::new();

    loop {
        // BFS layering
        queue.clear();
        for u in 0..g.n_left {
            if match_left[u] == UNMATCHED {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found_free = false;
        while let Some(u) = queue.pop_front() {
            for &v in &g.adj[u] {
                match match_right[v] {
                    UNMATCHED => found_free = true,
                    w if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    _ => {}
                }
            }
        }
        if !found_free {
            break;
        }

        // DFS along layers for a maximal set of vertex-disjoint shortest paths
        cursor.iter_mut().for_each(|c| *c = 0);
        let mut stack: Vec<usize> = Vec::new();
        let mut via: Vec<usize> = Vec::new();
        for root in 0..g.n_left {
            if match_left[root] != UNMATCHED || dist[root] != 0 {
                continue;
            }
            stack.clear();
            via.clear();
            stack.push(root);
            while let Some(&u) = stack.last() {
                if cursor[u] == g.adj[u].len() {
                    dist[u] = INF;
                    stack.pop();
                    via.pop();
                    continue;
                }
                let v = g.adj[u][cursor[u]];
                cursor[u] += 1;
                match match_right[v] {
                    UNMATCHED => {
                        via.push(v);
                        for (&l, &r) in stack.iter().zip(&via) {
                            match_left[l] = r;
                            match_right[r] = l;
                        }
                        // path used up; keep its nodes out of this phase
                        for &l in &stack {
                            dist[l] = INF;
                        }
                        break;
                    }
                    w if dist[w] != INF && dist[w] == dist[u] + 1 => {
                        via.push(v);
                        stack.push(w);
                    }
                    _ => {}
                }
            }
        }
    }

    Matching {
        pairs: match_left
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != UNMATCHED)
            .map(|(u, &v)| (u, v))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Optimistic,
    Conservative,
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchMode::Optimistic => "optimistic",
            MatchMode::Conservative => "conservative",
        })
    }
}

/// True/false positive and false negative accounting for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub mode: MatchMode,
    pub cutoff_d: f64,
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    /// `(component_id, label_index)` pairs; only populated in conservative mode.
    pub pairs: Vec<(usize, usize)>,
}

/// For each label, the components within the precomputed reach and the
/// minimum distance from the label to each of them.
#[derive(Debug, Clone)]
pub struct LabelNeighborhoods {
    reach: f64,
    n_components: usize,
    per_label: Vec<Vec<(usize, f64)>>,
}

impl LabelNeighborhoods {
    /// Scans a `reach`-meter window around every label on the label image.
    pub fn new(labeling: &Labeling, labels: &PointLabelSet, reach: f64) -> Result<Self> {
        check_cutoff(reach)?;
        let georef = *labeling.georef();
        let (w, h) = labeling.shape();
        let per_label = labels
            .points
            .par_iter()
            .map(|&p| {
                let mut found: Vec<(usize, f64)> = Vec::new();
                if labeling.is_empty() {
                    return found;
                }
                let (u, v) = georef.world_to_pixel(p);
                let (rx, ry) = (reach / georef.res_x + 1.0, reach / georef.res_y + 1.0);
                let c0 = (u - rx - 0.5).floor().max(0.0);
                let c1 = (u + rx - 0.5).ceil().min(w as f64 - 1.0);
                let r0 = (v - ry - 0.5).floor().max(0.0);
                let r1 = (v + ry - 0.5).ceil().min(h as f64 - 1.0);
                if c0 > c1 || r0 > r1 {
                    return found;
                }
                for row in r0 as usize..=r1 as usize {
                    for col in c0 as usize..=c1 as usize {
                        let Some(id) = labeling.component_at(col, row) else {
                            continue;
                        };
                        let dist = georef.pixel_center(col, row).distance(&p);
                        if dist > reach {
                            continue;
                        }
                        match found.iter_mut().find(|(c, _)| *c == id) {
                            Some(entry) => entry.1 = entry.1.min(dist),
                            None => found.push((id, dist)),
                        }
                    }
                }
                found.sort_by_key(|&(c, _)| c);
                found
            })
            .collect();
        Ok(Self {
            reach,
            n_components: labeling.len(),
            per_label,
        })
    }

    pub fn reach(&self) -> f64 {
        self.reach
    }

    pub fn n_labels(&self) -> usize {
        self.per_label.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Blob-label graph at cutoff `d`, which must not exceed the reach.
    pub fn graph(&self, d: f64) -> Result<BipartiteGraph> {
        check_cutoff(d)?;
        if d > self.reach {
            return Err(Error::InvalidArgument(format!(
                "cutoff {d} exceeds precomputed reach {}",
                self.reach
            )));
        }
        let mut g = BipartiteGraph::new(self.n_components, self.per_label.len());
        for (label, near) in self.per_label.iter().enumerate() {
            for &(comp, dist) in near {
                if dist <= d {
                    g.adj[comp].push(label);
                }
            }
        }
        Ok(g)
    }
}

/// Optimistic accounting on a blob-label graph.
pub fn optimistic_from_graph(g: &BipartiteGraph, d: f64) -> MatchResult {
    let mut label_hit = vec![false; g.n_right];
    let mut fp = 0;
    for u in 0..g.n_left {
        if g.adj[u].is_empty() {
            fp += 1;
        }
        for &v in &g.adj[u] {
            label_hit[v] = true;
        }
    }
    let tp = label_hit.iter().filter(|&&h| h).count();
    MatchResult {
        mode: MatchMode::Optimistic,
        cutoff_d: d,
        tp,
        fp,
        r#fn: g.n_right - tp,
        pairs: Vec::new(),
    }
}

/// Conservative accounting on a blob-label graph.
pub fn conservative_from_graph(g: &BipartiteGraph, d: f64) -> MatchResult {
    let m = max_cardinality_matching(g);
    let tp = m.len();
    MatchResult {
        mode: MatchMode::Conservative,
        cutoff_d: d,
        tp,
        fp: g.n_left - tp,
        r#fn: g.n_right - tp,
        pairs: m.pairs,
    }
}

/// Credits every label that any blob reaches within `d`.
pub fn optimistic_match(labeling: &Labeling, labels: &PointLabelSet, d: f64) -> Result<MatchResult> {
    let g = LabelNeighborhoods::new(labeling, labels, d)?.graph(d)?;
    Ok(optimistic_from_graph(&g, d))
}

/// One-to-one blob-label pairing via maximum cardinality matching.
pub fn conservative_match(labeling: &Labeling, labels: &PointLabelSet, d: f64) -> Result<MatchResult> {
    let g = LabelNeighborhoods::new(labeling, labels, d)?.graph(d)?;
    Ok(conservative_from_graph(&g, d))
}

/// Precision, recall and F-score for one accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Set when `tp + fp == 0`; precision reported as 0.
    pub precision_undefined: bool,
    /// Set when `tp + fn == 0`; recall reported as 0.
    pub recall_undefined: bool,
}

impl Scores {
    pub fn from_result(m: &MatchResult) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(m.tp, m.tp + m.fp);
        let recall = ratio(m.tp, m.tp + m.r#fn);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f_score,
            precision_undefined: m.tp + m.fp == 0,
            recall_undefined: m.tp + m.r#fn == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub result: MatchResult,
}

impl ModeReport {
    pub fn new(result: MatchResult) -> Self {
        Self {
            scores: Scores::from_result(&result),
            result,
        }
    }
}

/// Both accountings at one cutoff distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub cutoff_d: f64,
    pub n_components: usize,
    pub n_labels: usize,
    pub conservative: ModeReport,
    pub optimistic: ModeReport,
}

impl LocalizationReport {
    pub fn from_graph(g: &BipartiteGraph, d: f64) -> Self {
        Self {
            cutoff_d: d,
            n_components: g.n_left,
            n_labels: g.n_right,
            conservative: ModeReport::new(conservative_from_graph(g, d)),
            optimistic: ModeReport::new(optimistic_from_graph(g, d)),
        }
    }
}

pub fn localization_report(labeling: &Labeling, labels: &PointLabelSet, d: f64) -> Result<LocalizationReport> {
    let g = LabelNeighborhoods::new(labeling, labels, d)?.graph(d)?;
    Ok(LocalizationReport::from_graph(&g, d))
}

/// One row of a cutoff sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_m: f64,
    pub mode: MatchMode,
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl SweepRow {
    fn new(r: &ModeReport) -> Self {
        Self {
            d_m: r.result.cutoff_d,
            mode: r.result.mode,
            tp: r.result.tp,
            fp: r.result.fp,
            r#fn: r.result.r#fn,
            precision: r.scores.precision,
            recall: r.scores.recall,
            f_score: r.scores.f_score,
        }
    }
}

/// Localization reports for every cutoff in `d_values`.
pub fn sensitivity_sweep(
    labeling: &Labeling,
    labels: &PointLabelSet,
    d_values: &[f64],
) -> Result<Vec<LocalizationReport>> {
    if d_values.is_empty() {
        return Err(Error::InvalidArgument(
            "cutoff sweep needs at least one distance".into(),
        ));
    }
    for &d in d_values {
        check_cutoff(d)?;
    }
    let reach = d_values.iter().copied().fold(0.0, f64::max);
    let hood = LabelNeighborhoods::new(labeling, labels, reach)?;
    d_values
        .iter()
        .map(|&d| Ok(LocalizationReport::from_graph(&hood.graph(d)?, d)))
        .collect()
}

/// Flattens sweep reports into tidy rows, conservative first at each cutoff.
pub fn sweep_rows(reports: &[LocalizationReport]) -> Vec<SweepRow> {
    reports
        .iter()
        .flat_map(|r| [SweepRow::new(&r.conservative), SweepRow::new(&r.optimistic)])
        .collect()
}
