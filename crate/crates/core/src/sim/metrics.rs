//! Per-round metrics, the delay model and series statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::config::{DelayParams, Topology};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Detection {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Detection {
    /// Confusion counts over `participants`, treating `flagged` as the
    /// positive prediction and `malicious` as ground truth.
    pub fn count(participants: &[u32], malicious: &BTreeSet<u32>, flagged: &BTreeSet<u32>) -> Self {
        let mut d = Detection::default();
        for id in participants {
            match (malicious.contains(id), flagged.contains(id)) {
                (true, true) => d.tp += 1,
                (true, false) => d.fn_ += 1,
                (false, true) => d.fp += 1,
                (false, false) => d.tn += 1,
            }
        }
        d
    }

    /// FP / (FP + TN), or `None` without honest participants.
    pub fn false_positive_rate(&self) -> Option<f64> {
        let honest = self.fp + self.tn;
        (honest > 0).then(|| self.fp as f64 / honest as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Held-out accuracy of the global model after this round.
    pub accuracy: f64,
    pub trust: Vec<f64>,
    pub discarded: BTreeSet<u32>,
    /// Devices acting maliciously this round, whether or not they survived.
    pub malicious: BTreeSet<u32>,
    pub detection: Detection,
    pub delay_s: f64,
    pub degenerate: bool,
    /// Numbers exchanged as cluster summaries this round.
    pub shared_numbers: usize,
}

/// What happened in a round, as far as the delay model cares.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundComposition {
    /// Training-set size of every device that trained and submitted.
    pub survivor_samples: Vec<usize>,
    pub accepted: usize,
    /// Context points clustered this round (0 when no refresh happened).
    pub points: usize,
    /// Local clusters shared for merging.
    pub clusters: usize,
    /// Devices whose trust was recomputed.
    pub devices: usize,
}

/// Simulated wall time of one round: the slowest device's training and
/// upload, then serial verification and mining, plus the clustering and
/// trust phases for the robust topology.
pub fn round_delay(params: &DelayParams, topology: Topology, round: &RoundComposition) -> f64 {
    let slowest = round
        .survivor_samples
        .iter()
        .map(|&n| n as f64 * params.t_train_per_sample + params.t_upload_per_update)
        .fold(0.0, f64::max);
    let mut delay = slowest + round.accepted as f64 * params.t_verify_per_update + params.t_mine_per_block;
    if topology == Topology::BflRobust {
        delay += round.points as f64 * params.t_cluster_per_point
            + round.clusters as f64 * params.t_merge_per_cluster
            + round.devices as f64 * params.t_trust_per_device;
    }
    delay
}

/// Mean per-round detection rate TP / (TP + FN), bucketed by the number of
/// malicious devices that round. Rounds with no malicious participant do not
/// contribute; buckets that never occur are absent.
pub fn detection_rate<'a>(rounds: impl IntoIterator<Item = &'a RoundMetrics>) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for m in rounds {
        let positives = m.detection.tp + m.detection.fn_;
        if m.malicious.is_empty() || positives == 0 {
            continue;
        }
        let e = acc.entry(m.malicious.len()).or_default();
        e.0 += m.detection.tp as f64 / positives as f64;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

/// Population standard deviation of round-over-round accuracy changes over
/// the last half of the run. Zero for runs too short to have a change.
pub fn oscillation(accuracies: &[f64]) -> f64 {
    let start = (accuracies.len() / 2).max(1);
    if accuracies.len() <= start {
        return 0.0;
    }
    let deltas: Vec<f64> = accuracies[start..]
        .iter()
        .zip(&accuracies[start - 1..])
        .map(|(now, prev)| now - prev)
        .collect();
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The metrics CSV. Floats use the shortest round-trip representation.
pub fn metrics_csv(rows: &[RoundMetrics], n_devices: usize) -> String {
    let mut out = String::from("round,accuracy,delay_s,degenerate,tp,fp,fn,tn,discarded");
    for i in 0..n_devices {
        let _ = write!(out, ",trust_{i}");
    }
    out.push('\n');
    for m in rows {
        let discarded: Vec<String> = m.discarded.iter().map(u32::to_string).collect();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.round,
            m.accuracy,
            m.delay_s,
            m.degenerate,
            m.detection.tp,
            m.detection.fp,
            m.detection.fn_,
            m.detection.tn,
            discarded.join(";")
        );
        for t in &m.trust {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
    }
    out
}
