//! Adversary and fault injection.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::trust::ContextShift;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    SignFlip,
    Scale { gamma: f64 },
    GaussianNoise { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    #[default]
    None,
    FixedSet {
        devices: Vec<u32>,
    },
    PerRoundRandom {
        min_k: usize,
        max_k: usize,
    },
}

fn default_kind() -> AttackKind {
    AttackKind::Scale { gamma: -5.0 }
}

fn default_shift() -> Option<ContextShift> {
    Some(ContextShift::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default = "default_kind")]
    pub kind: AttackKind,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default = "default_shift")]
    pub context_shift: Option<ContextShift>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: default_kind(),
            selection: Selection::None,
            context_shift: default_shift(),
        }
    }
}

impl AttackSpec {
    pub fn validate(&self, n_devices: usize) -> Result<()> {
        match &self.selection {
            Selection::None => {}
            Selection::FixedSet { devices } => {
                if let Some(d) = devices.iter().find(|d| **d as usize >= n_devices) {
                    return Err(Error::config(
                        "attack.selection.devices",
                        format!("device {d} out of range for {n_devices} devices"),
                    ));
                }
            }
            Selection::PerRoundRandom { min_k, max_k } => {
                if min_k > max_k || *max_k > n_devices {
                    return Err(Error::config("attack.selection", "need min_k <= max_k <= n_devices"));
                }
            }
        }
        match self.kind {
            AttackKind::Scale { gamma } if gamma == 0.0 || !gamma.is_finite() => {
                Err(Error::config("attack.kind.gamma", "must be finite and nonzero"))
            }
            AttackKind::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config("attack.kind.sigma", "must be finite and nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

/// The devices acting maliciously in `round`.
pub fn select_malicious(spec: &AttackSpec, n_devices: usize, rng: &mut ChaCha8Rng) -> BTreeSet<u32> {
    match &spec.selection {
        Selection::None => BTreeSet::new(),
        Selection::FixedSet { devices } => devices.iter().copied().collect(),
        Selection::PerRoundRandom { min_k, max_k } => {
            let k = rng.random_range(*min_k..=*max_k).min(n_devices);
            // partial Fisher-Yates: the first k slots are a uniform k-subset
            let mut ids: Vec<u32> = (0..n_devices as u32).collect();
            for i in 0..k {
                let j = rng.random_range(i..n_devices);
                ids.swap(i, j);
            }
            ids[..k].iter().copied().collect()
        }
    }
}

pub fn corrupt_update(update: &ParamVector, kind: &AttackKind, rng: &mut ChaCha8Rng) -> ParamVector {
    match *kind {
        AttackKind::SignFlip => update.scaled(-1.0),
        AttackKind::Scale { gamma } => update.scaled(gamma),
        AttackKind::GaussianNoise { sigma } => ParamVector::from_vec(
            update
                .as_slice()
                .iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + sigma * z
                })
                .collect(),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FailureSpec {
    pub device_dropout_prob: f64,
    /// Centralized topology only: the server is gone from this round on.
    pub server_failure_round: Option<u64>,
}

impl FailureSpec {
    pub fn validate(&self, centralized: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&self.device_dropout_prob) {
            return Err(Error::config("failure.device_dropout_prob", "must lie in [0, 1]"));
        }
        if self.server_failure_round.is_some() && !centralized {
            return Err(Error::config(
                "failure.server_failure_round",
                "only valid for the centralized_fedavg topology",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureOutcome {
    pub survivors: Vec<u32>,
    pub aggregator_alive: bool,
}

/// Drops each participant independently with the configured probability (in
/// the given order, one draw each) and reports whether a central aggregator
/// is still up. Decentralized topologies always have an aggregator.
pub fn apply_failures(
    round: u64,
    participants: &[u32],
    spec: &FailureSpec,
    centralized: bool,
    rng: &mut ChaCha8Rng,
) -> FailureOutcome {
    let survivors = participants
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= spec.device_dropout_prob)
        .collect();
    let aggregator_alive = !centralized || spec.server_failure_round.is_none_or(|r| round < r);
    FailureOutcome {
        survivors,
        aggregator_alive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{stream, Purpose};

    fn rng(round: u64) -> ChaCha8Rng {
        stream(17, crate::seed::GLOBAL, round, Purpose::Selection)
    }

    #[test]
    fn fixed_set_is_returned_verbatim() {
        let spec = AttackSpec {
            selection: Selection::FixedSet {
                devices: (0..10).collect(),
            },
            ..AttackSpec::default()
        };
        for r in 0..5 {
            assert_eq!(select_malicious(&spec, 100, &mut rng(r)), (0..10).collect());
        }
    }

    #[test]
    fn random_selection_sizes_stay_in_range() {
        let spec = AttackSpec {
            selection: Selection::PerRoundRandom { min_k: 1, max_k: 3 },
            ..AttackSpec::default()
        };
        let mut sizes = BTreeSet::new();
        for r in 0..20 {
            let s = select_malicious(&spec, 10, &mut rng(r));
            assert!((1..=3).contains(&s.len()));
            assert!(s.iter().all(|d| *d < 10));
            assert_eq!(s, select_malicious(&spec, 10, &mut rng(r)));
            sizes.insert(s.len());
        }
        assert!(sizes.len() > 1);
    }

    #[test]
    fn zero_k_selects_nobody() {
        let spec = AttackSpec {
            selection: Selection::PerRoundRandom { min_k: 0, max_k: 0 },
            ..AttackSpec::default()
        };
        assert!(select_malicious(&spec, 10, &mut rng(0)).is_empty());
    }

    #[test]
    fn corruption_kinds() {
        let mut r = rng(0);
        let u = ParamVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(
            corrupt_update(&u, &AttackKind::SignFlip, &mut r).as_slice(),
            &[-1.0, 2.0]
        );
        let small = ParamVector::from_vec(vec![0.1]);
        let scaled = corrupt_update(&small, &AttackKind::Scale { gamma: 10.0 }, &mut r);
        assert!((scaled[0] - 1.0).abs() < 1e-15);
        assert_eq!(corrupt_update(&u, &AttackKind::GaussianNoise { sigma: 0.0 }, &mut r), u);
    }

    #[test]
    fn dropout_extremes() {
        let ids: Vec<u32> = (0..8).collect();
        let keep = apply_failures(0, &ids, &FailureSpec::default(), false, &mut rng(0));
        assert_eq!(keep.survivors, ids);
        let all_gone = FailureSpec {
            device_dropout_prob: 1.0,
            ..Default::default()
        };
        assert!(apply_failures(0, &ids, &all_gone, false, &mut rng(0))
            .survivors
            .is_empty());
    }

    #[test]
    fn server_failure_only_hits_centralized_rounds_after_failure() {
        let spec = FailureSpec {
            device_dropout_prob: 0.0,
            server_failure_round: Some(5),
        };
        assert!(apply_failures(4, &[0], &spec, true, &mut rng(4)).aggregator_alive);
        assert!(!apply_failures(5, &[0], &spec, true, &mut rng(5)).aggregator_alive);
        assert!(apply_failures(9, &[0], &spec, false, &mut rng(9)).aggregator_alive);
        assert!(spec.validate(false).is_err());
        assert!(spec.validate(true).is_ok());
    }

    #[test]
    fn invalid_specs() {
        let bad = AttackSpec {
            kind: AttackKind::Scale { gamma: 0.0 },
            ..AttackSpec::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = AttackSpec {
            selection: Selection::PerRoundRandom { min_k: 3, max_k: 2 },
            ..AttackSpec::default()
        };
        assert!(bad.validate(10).is_err());
    }
}
