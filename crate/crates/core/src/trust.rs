//! Per-device trust: context collection, exponential-smoothing updates from
//! anomaly evidence, and the per-request access gate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of numeric features a [`ContextVector`] flattens to.
pub const CONTEXT_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub location_id: u32,
    pub device_posture: f64,
    pub network_latency_ms: f64,
    pub request_rate: f64,
    pub failed_auth_rate: f64,
    pub off_hours: bool,
}

impl ContextVector {
    pub fn features(&self) -> [f64; CONTEXT_DIM] {
        [
            self.location_id as f64,
            self.device_posture,
            self.network_latency_ms,
            self.request_rate,
            self.failed_auth_rate,
            if self.off_hours { 1.0 } else { 0.0 },
        ]
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.device_posture)
            && self.network_latency_ms >= 0.0
            && self.network_latency_ms.is_finite()
            && self.request_rate >= 0.0
            && self.request_rate.is_finite()
            && (0.0..=1.0).contains(&self.failed_auth_rate)
    }
}

/// Standard deviations of the Gaussian jitter around a device baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextNoise {
    pub posture: f64,
    pub latency_ms: f64,
    pub request_rate: f64,
    pub failed_auth: f64,
}

impl Default for ContextNoise {
    fn default() -> Self {
        ContextNoise {
            posture: 0.02,
            latency_ms: 4.0,
            request_rate: 0.08,
            failed_auth: 0.005,
        }
    }
}

impl ContextNoise {
    pub fn none() -> Self {
        ContextNoise {
            posture: 0.0,
            latency_ms: 0.0,
            request_rate: 0.0,
            failed_auth: 0.0,
        }
    }
}

/// Behavioural shift applied to a compromised device's context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextShift {
    pub failed_auth_add: f64,
    pub request_rate_mult: f64,
    pub latency_add_ms: f64,
    pub posture_add: f64,
    pub off_hours: bool,
}

impl Default for ContextShift {
    fn default() -> Self {
        ContextShift {
            failed_auth_add: 0.4,
            request_rate_mult: 3.0,
            latency_add_ms: 0.0,
            posture_add: 0.0,
            off_hours: false,
        }
    }
}

/// Draws a device's baseline behaviour.
pub fn sample_baseline(device_id: u32, n_locations: u32, rng: &mut ChaCha8Rng) -> ContextVector {
    ContextVector {
        location_id: device_id % n_locations.max(1),
        device_posture: rng.random_range(0.8..1.0),
        network_latency_ms: rng.random_range(20.0..60.0),
        request_rate: rng.random_range(0.5..1.5),
        failed_auth_rate: rng.random_range(0.0..0.03),
        off_hours: false,
    }
}

/// One context observation: the baseline plus Gaussian jitter, then the
/// attack shift when `overlay` is present. Fields are clamped to range.
pub fn collect_context(
    baseline: &ContextVector,
    noise: &ContextNoise,
    rng: &mut ChaCha8Rng,
    overlay: Option<&ContextShift>,
) -> ContextVector {
    let mut jitter = |sd: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        sd * z
    };
    let mut c = ContextVector {
        location_id: baseline.location_id,
        device_posture: (baseline.device_posture + jitter(noise.posture)).clamp(0.0, 1.0),
        network_latency_ms: (baseline.network_latency_ms + jitter(noise.latency_ms)).max(0.0),
        request_rate: (baseline.request_rate + jitter(noise.request_rate)).max(0.0),
        failed_auth_rate: (baseline.failed_auth_rate + jitter(noise.failed_auth)).clamp(0.0, 1.0),
        off_hours: baseline.off_hours,
    };
    if let Some(shift) = overlay {
        c.failed_auth_rate = (c.failed_auth_rate + shift.failed_auth_add).clamp(0.0, 1.0);
        c.request_rate = (c.request_rate * shift.request_rate_mult).max(0.0);
        c.network_latency_ms = (c.network_latency_ms + shift.latency_add_ms).max(0.0);
        c.device_posture = (c.device_posture + shift.posture_add).clamp(0.0, 1.0);
        c.off_hours |= shift.off_hours;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    /// Initial trust of every device.
    pub t0: f64,
    /// Smoothing weight of the newest evidence.
    pub alpha: f64,
    /// Access threshold: allow iff trust >= tau.
    pub tau: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            t0: 0.5,
            alpha: 0.3,
            tau: 0.25,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t0) {
            return Err(Error::config("trust.t0", "must lie in [0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("trust.alpha", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("trust.tau", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustEvent {
    pub round: u64,
    pub trust: f64,
    pub anomaly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRecord {
    pub device_id: u32,
    pub trust: f64,
    pub history: Vec<TrustEvent>,
}

impl TrustRecord {
    pub fn new(device_id: u32, params: &TrustParams) -> Self {
        TrustRecord {
            device_id,
            trust: params.t0,
            history: Vec::new(),
        }
    }
}

/// `trust' = (1 - alpha) * trust + alpha * (1 - a)`, clamped to [0, 1].
pub fn update_trust(record: &mut TrustRecord, round: u64, anomaly: f64, params: &TrustParams) -> Result<()> {
    if !(0.0..=1.0).contains(&anomaly) {
        return Err(Error::argument(format!("anomaly score {anomaly} outside [0, 1]")));
    }
    if record.history.last().is_some_and(|e| e.round >= round) {
        return Err(Error::argument(format!(
            "trust history for device {} already has round {}",
            record.device_id, round
        )));
    }
    let next = (1.0 - params.alpha) * record.trust + params.alpha * (1.0 - anomaly);
    record.trust = next.clamp(0.0, 1.0);
    record.history.push(TrustEvent {
        round,
        trust: record.trust,
        anomaly,
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Allow,
    Deny,
}

pub fn access_decision(record: &TrustRecord, params: &TrustParams) -> Access {
    if record.trust >= params.tau {
        Access::Allow
    } else {
        Access::Deny
    }
}
