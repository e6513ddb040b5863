//! Fixed-width hyperspherical clustering and cluster-based anomaly scores.
//!
//! Nodes cluster their own context observations, share only
//! [`ClusterSummary`] values, and a merged global set scores every cluster by
//! its mean distance to the `k` nearest other centres (ICD).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub center: Vec<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    width: f64,
    dim: usize,
    clusters: Vec<ClusterSummary>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl ClusterSet {
    pub fn new(width: f64, dim: usize) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::argument("cluster width must be positive and finite"));
        }
        Ok(ClusterSet {
            width,
            dim,
            clusters: Vec::new(),
        })
    }

    pub fn from_clusters(width: f64, dim: usize, clusters: Vec<ClusterSummary>) -> Result<Self> {
        let mut set = ClusterSet::new(width, dim)?;
        for c in &clusters {
            Error::check_dim(dim, c.center.len())?;
            if c.count == 0 || c.center.iter().any(|v| !v.is_finite()) {
                return Err(Error::argument("clusters need a finite center and a positive count"));
            }
        }
        set.clusters = clusters;
        Ok(set)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clusters(&self) -> &[ClusterSummary] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.clusters.iter().map(|c| c.count).sum()
    }

    /// Index and distance of the nearest center; ties go to the lower index.
    pub fn nearest(&self, point: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            let d = dist(&c.center, point);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Single-pass insertion: join the nearest cluster if it lies within the
    /// width (running-mean center update), otherwise open a new cluster.
    pub fn insert(&mut self, point: &[f64]) -> Result<()> {
        Error::check_dim(self.dim, point.len())?;
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("non-finite point"));
        }
        match self.nearest(point) {
            Some((i, d)) if d <= self.width => {
                let c = &mut self.clusters[i];
                c.count += 1;
                let n = c.count as f64;
                for (m, x) in c.center.iter_mut().zip(point) {
                    *m += (x - *m) / n;
                }
            }
            _ => self.clusters.push(ClusterSummary {
                center: point.to_vec(),
                count: 1,
            }),
        }
        Ok(())
    }

    /// Numbers a node ships when sharing this set: `len * (dim + 1)`.
    pub fn payload_numbers(&self) -> usize {
        self.clusters.len() * (self.dim + 1)
    }

    /// Little-endian summary payload: per cluster `dim` f64 centre values
    /// followed by the count as u64.
    pub fn encode_summaries(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_numbers() * 8);
        for c in &self.clusters {
            for v in &c.center {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            out.extend_from_slice(&c.count.to_le_bytes());
        }
        out
    }

    pub fn decode_summaries(width: f64, dim: usize, bytes: &[u8]) -> Result<ClusterSet> {
        let stride = (dim + 1) * 8;
        if !bytes.len().is_multiple_of(stride) {
            return Err(Error::format(
                "summary payload length is not a multiple of the record size",
            ));
        }
        let word = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        let clusters = bytes
            .chunks(stride)
            .map(|rec| {
                let words: Vec<u64> = rec.chunks(8).map(word).collect();
                ClusterSummary {
                    center: words[..dim].iter().map(|w| f64::from_bits(*w)).collect(),
                    count: words[dim],
                }
            })
            .collect();
        ClusterSet::from_clusters(width, dim, clusters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyParams {
    /// Nearest-cluster count for the ICD.
    pub k: usize,
    /// Flag clusters whose ICD exceeds `mean + s * std`.
    pub deviation_multiplier: f64,
    /// Divisor for scores; `None` uses the mean ICD of the set (1.0 if zero).
    pub score_normalizer: Option<f64>,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        AnomalyParams {
            k: 3,
            deviation_multiplier: 2.0,
            score_normalizer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScore {
    pub icd: f64,
    pub score: f64,
    pub flagged: bool,
}

/// ICD-based scores for every cluster of `set`. Sets with at most `k`
/// clusters score zero everywhere.
pub fn local_anomaly_scores(set: &ClusterSet, params: &AnomalyParams) -> Vec<ClusterScore> {
    let n = set.len();
    let zero = ClusterScore {
        icd: 0.0,
        score: 0.0,
        flagged: false,
    };
    if params.k == 0 || n <= params.k {
        return vec![zero; n];
    }
    let centers: Vec<&[f64]> = set.clusters.iter().map(|c| c.center.as_slice()).collect();
    let mut row = Vec::with_capacity(n - 1);
    let icd: Vec<f64> = (0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| dist(centers[i], centers[j])));
            row.sort_by(f64::total_cmp);
            row[..params.k].iter().sum::<f64>() / params.k as f64
        })
        .collect();
    let mean = icd.iter().sum::<f64>() / n as f64;
    let var = icd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let threshold = mean + params.deviation_multiplier * var.sqrt();
    let normalizer = match params.score_normalizer {
        Some(v) => v,
        None if mean > 0.0 => mean,
        None => 1.0,
    };
    icd.into_iter()
        .map(|v| ClusterScore {
            icd: v,
            score: ((v - mean).max(0.0) / normalizer).clamp(0.0, 1.0),
            flagged: v > threshold,
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Neighbor {
    dist: f64,
    other: usize,
}

/// Pair ordering: smaller distance first, then lower (low, high) index pair.
fn pair_key(i: usize, nb: Neighbor) -> (f64, usize, usize) {
    (nb.dist, i.min(nb.other), i.max(nb.other))
}

fn key_less(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Merges local sets into a global one: repeatedly fuse the closest pair of
/// centres within the width (ties by lower index) into their count-weighted
/// mean until no pair qualifies.
pub fn merge_clusters(sets: &[ClusterSet]) -> Result<ClusterSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::argument("no cluster sets to merge"))?;
    let (width, dim) = (first.width, first.dim);
    for s in sets {
        if s.width != width {
            return Err(Error::argument(format!(
                "mixed cluster widths {} and {}",
                width, s.width
            )));
        }
        Error::check_dim(dim, s.dim)?;
    }
    let mut clusters: Vec<ClusterSummary> = sets.iter().flat_map(|s| s.clusters.iter().cloned()).collect();
    let n = clusters.len();
    let mut alive = vec![true; n];

    let nearest_of = |i: usize, clusters: &[ClusterSummary], alive: &[bool]| -> Option<Neighbor> {
        let mut best: Option<Neighbor> = None;
        for j in 0..clusters.len() {
            if j == i || !alive[j] {
                continue;
            }
            let d = dist(&clusters[i].center, &clusters[j].center);
            if best.is_none_or(|b| d < b.dist) {
                best = Some(Neighbor { dist: d, other: j });
            }
        }
        best
    };
    let mut nn: Vec<Option<Neighbor>> = (0..n).map(|i| nearest_of(i, &clusters, &alive)).collect();

    loop {
        let mut best: Option<(usize, Neighbor)> = None;
        for i in 0..n {
            if let (true, Some(nb)) = (alive[i], nn[i]) {
                if best.is_none_or(|(bi, bnb)| key_less(pair_key(i, nb), pair_key(bi, bnb))) {
                    best = Some((i, nb));
                }
            }
        }
        let Some((a, nb)) = best else { break };
        if nb.dist > width {
            break;
        }
        let (keep, gone) = (a.min(nb.other), a.max(nb.other));
        let (ck, cg) = (clusters[keep].count, clusters[gone].count);
        let total = ck + cg;
        let merged: Vec<f64> = clusters[keep]
            .center
            .iter()
            .zip(&clusters[gone].center)
            .map(|(x, y)| (x * ck as f64 + y * cg as f64) / total as f64)
            .collect();
        clusters[keep] = ClusterSummary {
            center: merged,
            count: total,
        };
        alive[gone] = false;
        nn[gone] = None;

        nn[keep] = nearest_of(keep, &clusters, &alive);
        for k in 0..n {
            if !alive[k] || k == keep {
                continue;
            }
            match nn[k] {
                Some(cur) if cur.other == keep || cur.other == gone => {
                    nn[k] = nearest_of(k, &clusters, &alive);
                }
                Some(cur) => {
                    let d = dist(&clusters[k].center, &clusters[keep].center);
                    if d < cur.dist || (d == cur.dist && keep < cur.other) {
                        nn[k] = Some(Neighbor { dist: d, other: keep });
                    }
                }
                None => nn[k] = nearest_of(k, &clusters, &alive),
            }
        }
    }

    let merged = clusters
        .into_iter()
        .zip(alive)
        .filter_map(|(c, a)| a.then_some(c))
        .collect();
    Ok(ClusterSet {
        width,
        dim,
        clusters: merged,
    })
}

/// Mean per-point anomaly of a device: each point takes the score of its
/// nearest global cluster, or 1 when no centre lies within the width.
pub fn device_anomaly(global: &ClusterSet, scores: &[ClusterScore], points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::argument("device has no points"));
    }
    Error::check_dim(global.len(), scores.len())?;
    let mut total = 0.0;
    for p in points {
        Error::check_dim(global.dim, p.len())?;
        total += match global.nearest(p) {
            Some((i, d)) if d <= global.width => scores[i].score,
            _ => 1.0,
        };
    }
    Ok(total / points.len() as f64)
}

/// Maps an anomaly score in [0, 1] to a trust contribution `1 - a`.
pub fn score_to_trust(a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::argument(format!("anomaly score {a} outside [0, 1]")));
    }
    Ok(1.0 - a)
}

/// Per-dimension running mean and variance (Welford) used to z-score
/// context features before clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStandardizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStandardizer {
    pub fn new(dim: usize) -> Self {
        RunningStandardizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Dimensions with zero spread are centred but not scaled.
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.m2)
            .map(|((v, m), s)| {
                let sd = if self.count > 1 {
                    (s / self.count as f64).sqrt()
                } else {
                    0.0
                };
                if sd > 0.0 {
                    (v - m) / sd
                } else {
                    v - m
                }
            })
            .collect()
    }
}
