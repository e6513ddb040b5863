//! Global model aggregation.
//!
//! [`aggregate_fedavg`] is the undefended baseline. [`aggregate_robust`]
//! screens updates by their distance to the coordinate-wise median, drops
//! low-trust devices and combines the survivors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::TrustMap;
use crate::params::ParamVector;

/// Consistency constant making the MAD an estimator of a normal sigma.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonMode {
    /// Flag any update farther than `epsilon` from the expected update.
    Absolute { epsilon: f64 },
    /// Flag distances above `median + theta * MAD`.
    RobustZ { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustParams {
    pub epsilon_mode: EpsilonMode,
    pub trust_threshold: f64,
    pub trust_weighted: bool,
}

impl Default for RobustParams {
    fn default() -> Self {
        RobustParams {
            epsilon_mode: EpsilonMode::RobustZ { theta: 3.0 },
            trust_threshold: 0.25,
            trust_weighted: true,
        }
    }
}

impl RobustParams {
    pub fn validate(&self) -> Result<()> {
        match self.epsilon_mode {
            EpsilonMode::Absolute { epsilon } if !(epsilon >= 0.0) => {
                return Err(Error::config("aggregation.epsilon_mode.epsilon", "must be nonnegative"));
            }
            EpsilonMode::RobustZ { theta } if !(theta > 0.0) => {
                return Err(Error::config("aggregation.epsilon_mode.theta", "must be positive"));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.trust_threshold) {
            return Err(Error::config("aggregation.trust_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Median of a nonempty slice; the mean of the two middle values for even
/// lengths. Reorders `values`.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn check_same_dims<'a>(updates: impl IntoIterator<Item = &'a ParamVector>) -> Result<usize> {
    let mut it = updates.into_iter();
    let dim = it.next().ok_or_else(|| Error::argument("no updates"))?.dim();
    for u in it {
        Error::check_dim(dim, u.dim())?;
    }
    Ok(dim)
}

fn coordinate_median(updates: &[&ParamVector]) -> Result<ParamVector> {
    let dim = check_same_dims(updates.iter().copied())?;
    let mut column = vec![0.0; updates.len()];
    let out = (0..dim)
        .map(|k| {
            for (slot, u) in column.iter_mut().zip(updates) {
                *slot = u[k];
            }
            median_in_place(&mut column)
        })
        .collect();
    Ok(ParamVector::from_vec(out))
}

/// Estimate of the expected update: the coordinate-wise median.
pub fn expected_update(updates: &[ParamVector]) -> Result<ParamVector> {
    coordinate_median(&updates.iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screening {
    pub distance: f64,
    pub flagged: bool,
}

/// Flags updates that sit far from the expected update.
pub fn screen_anomalies(updates: &[ParamVector], params: &RobustParams) -> Result<Vec<Screening>> {
    if updates.is_empty() {
        return Ok(Vec::new());
    }
    let center = expected_update(updates)?;
    let distances = updates
        .iter()
        .map(|u| u.distance(&center))
        .collect::<Result<Vec<_>>>()?;
    let threshold = match params.epsilon_mode {
        EpsilonMode::Absolute { epsilon } => epsilon,
        EpsilonMode::RobustZ { theta } => {
            let mut d = distances.clone();
            let med = median_in_place(&mut d);
            let mut dev: Vec<f64> = distances.iter().map(|x| (x - med).abs()).collect();
            let mad = MAD_SCALE * median_in_place(&mut dev);
            if mad > 0.0 {
                med + theta * mad
            } else {
                med * (1.0 + 1e-9)
            }
        }
    };
    Ok(distances
        .into_iter()
        .map(|distance| Screening {
            distance,
            flagged: distance > threshold,
        })
        .collect())
}

fn weighted_mean(updates: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let dim = check_same_dims(updates.iter().copied())?;
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; dim];
    for (u, w) in updates.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(u.as_slice()) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(ParamVector::from_vec(acc))
}

/// Weighted arithmetic mean of the updates; weights are normally shard sizes.
pub fn aggregate_fedavg(updates: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if updates.len() != weights.len() {
        return Err(Error::argument(format!(
            "{} updates but {} weights",
            updates.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::argument("weights must be positive and finite"));
    }
    weighted_mean(&updates.iter().collect::<Vec<_>>(), weights)
}

#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a> {
    pub device_id: u32,
    pub update: &'a ParamVector,
    pub shard_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutcome {
    pub aggregate: ParamVector,
    /// Flagged by screening or below the trust threshold.
    pub discarded: BTreeSet<u32>,
    pub flagged: BTreeSet<u32>,
    pub low_trust: BTreeSet<u32>,
    /// Every update was discarded; the aggregate is zero.
    pub degenerate: bool,
}

/// Robust aggregation over verified contributions.
///
/// Contributions are processed in ascending device id, so the result does not
/// depend on input order. With `trust_weighted`, survivors are averaged with
/// weight `(trust / max_trust) * shard_size`; the normalisation makes uniform
/// trust reproduce [`aggregate_fedavg`] bit for bit. Otherwise survivors are
/// combined by coordinate-wise median.
pub fn aggregate_robust(
    contributions: &[Contribution<'_>],
    trust: &TrustMap,
    params: &RobustParams,
) -> Result<RobustOutcome> {
    if contributions.is_empty() {
        return Err(Error::argument("no contributions"));
    }
    let mut sorted: Vec<Contribution<'_>> = contributions.to_vec();
    sorted.sort_by_key(|c| c.device_id);
    if sorted.windows(2).any(|w| w[0].device_id == w[1].device_id) {
        return Err(Error::argument("duplicate device id among contributions"));
    }
    let dim = check_same_dims(sorted.iter().map(|c| c.update))?;

    let trust_of = |id: u32| {
        trust
            .get(&id)
            .copied()
            .ok_or_else(|| Error::argument(format!("no trust value for device {id}")))
    };

    let updates: Vec<ParamVector> = sorted.iter().map(|c| c.update.clone()).collect();
    let screening = screen_anomalies(&updates, params)?;

    let mut flagged = BTreeSet::new();
    let mut low_trust = BTreeSet::new();
    let mut survivors = Vec::new();
    for (c, s) in sorted.iter().zip(&screening) {
        let t = trust_of(c.device_id)?;
        if s.flagged {
            flagged.insert(c.device_id);
        }
        if t < params.trust_threshold {
            low_trust.insert(c.device_id);
        }
        if !s.flagged && t >= params.trust_threshold {
            survivors.push((c, t));
        }
    }
    let discarded: BTreeSet<u32> = flagged.union(&low_trust).copied().collect();

    let combined = if survivors.is_empty() {
        None
    } else if params.trust_weighted {
        let max_t = survivors.iter().map(|(_, t)| *t).fold(0.0, f64::max);
        if max_t > 0.0 {
            let refs: Vec<&ParamVector> = survivors.iter().map(|(c, _)| c.update).collect();
            let weights: Vec<f64> = survivors
                .iter()
                .map(|(c, t)| (t / max_t) * c.shard_size as f64)
                .collect();
            if weights.iter().sum::<f64>() > 0.0 {
                Some(weighted_mean(&refs, &weights)?)
            } else {
                None
            }
        } else {
            None
        }
    } else {
        let refs: Vec<&ParamVector> = survivors.iter().map(|(c, _)| c.update).collect();
        Some(coordinate_median(&refs)?)
    };

    let degenerate = combined.is_none();
    Ok(RobustOutcome {
        aggregate: combined.unwrap_or_else(|| ParamVector::zeros(dim)),
        discarded,
        flagged,
        low_trust,
        degenerate,
    })
}
