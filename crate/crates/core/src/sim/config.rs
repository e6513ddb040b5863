//! Scenario configuration. Parsed from TOML; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::RobustParams;
use crate::attacks::{AttackSpec, FailureSpec};
use crate::clustering::AnomalyParams;
use crate::data::PartitionMode;
use crate::error::{Error, Result};
use crate::trust::{ContextNoise, TrustParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Ledger-backed FL with clustering-driven trust and robust aggregation.
    BflRobust,
    /// Ledger-backed FL with FedAvg over verified updates.
    BflPlain,
    /// Single aggregation server running FedAvg; subject to server failure.
    CentralizedFedavg,
}

impl Topology {
    pub fn is_centralized(self) -> bool {
        matches!(self, Topology::CentralizedFedavg)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::BflRobust => "bfl_robust",
            Topology::BflPlain => "bfl_plain",
            Topology::CentralizedFedavg => "centralized_fedavg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_separation: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Fraction held out for evaluation before partitioning.
    pub test_fraction: f64,
    pub partition: PartitionMode,
    pub shards_per_device: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            n_samples: 5000,
            n_features: 16,
            n_classes: 4,
            class_separation: 1.0,
            images: None,
            labels: None,
            test_fraction: 0.2,
            partition: PartitionMode::Iid,
            shards_per_device: 2,
        }
    }
}

/// Training hyper-parameters; per-device seeds are derived from the master
/// seed, so there is no seed key here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 5,
            batch_size: 10,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Fixed bound on update L2 norms. When absent the bound is
    /// `norm_multiplier` times the median norm of a clean warm-up round.
    pub max_update_norm: Option<f64>,
    pub norm_multiplier: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            max_update_norm: None,
            norm_multiplier: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Ledger,
    PointToPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalySection {
    #[serde(flatten)]
    pub params: AnomalyParams,
    /// Cluster radius in standardized context space.
    pub width: f64,
    /// Context observations each device collects per refresh.
    pub points_per_round: usize,
    pub n_locations: u32,
    pub transport: Transport,
    pub noise: ContextNoise,
}

impl Default for AnomalySection {
    fn default() -> Self {
        AnomalySection {
            params: AnomalyParams::default(),
            width: 1.0,
            points_per_round: 8,
            n_locations: 4,
            transport: Transport::Ledger,
            noise: ContextNoise::default(),
        }
    }
}

/// Per-phase costs in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayParams {
    pub t_train_per_sample: f64,
    pub t_upload_per_update: f64,
    pub t_verify_per_update: f64,
    pub t_mine_per_block: f64,
    pub t_cluster_per_point: f64,
    pub t_merge_per_cluster: f64,
    pub t_trust_per_device: f64,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            t_train_per_sample: 0.01,
            t_upload_per_update: 0.05,
            t_verify_per_update: 0.002,
            t_mine_per_block: 0.5,
            t_cluster_per_point: 0.0015,
            t_merge_per_cluster: 0.002,
            t_trust_per_device: 0.004,
        }
    }
}

impl DelayParams {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("t_train_per_sample", self.t_train_per_sample),
            ("t_upload_per_update", self.t_upload_per_update),
            ("t_verify_per_update", self.t_verify_per_update),
            ("t_mine_per_block", self.t_mine_per_block),
            ("t_cluster_per_point", self.t_cluster_per_point),
            ("t_merge_per_cluster", self.t_merge_per_cluster),
            ("t_trust_per_device", self.t_trust_per_device),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("delay.{name}"), "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

fn default_miners() -> u32 {
    2
}

fn default_interval() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub n_devices: usize,
    #[serde(default = "default_miners")]
    pub n_miners: u32,
    pub rounds: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Rounds between clustering/trust refreshes.
    #[serde(default = "default_interval")]
    pub periodic_interval: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub aggregation: RobustParams,
    #[serde(default)]
    pub anomaly: AnomalySection,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub failure: FailureSpec,
    #[serde(default)]
    pub delay: DelayParams,
}

impl ScenarioConfig {
    /// Defaults for everything but the three required keys.
    pub fn new(topology: Topology, n_devices: usize, rounds: u64) -> Self {
        ScenarioConfig {
            topology,
            n_devices,
            n_miners: default_miners(),
            rounds,
            master_seed: 0,
            periodic_interval: default_interval(),
            data: DataConfig::default(),
            train: TrainSection::default(),
            verify: VerifySection::default(),
            aggregation: RobustParams::default(),
            anomaly: AnomalySection::default(),
            trust: TrustParams::default(),
            attack: AttackSpec::default(),
            failure: FailureSpec::default(),
            delay: DelayParams::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::config("n_devices", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.n_miners == 0 && !self.topology.is_centralized() {
            return Err(Error::config("n_miners", "must be at least 1 for ledger topologies"));
        }
        if self.periodic_interval == 0 {
            return Err(Error::config("periodic_interval", "must be at least 1"));
        }
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                if d.n_features == 0 {
                    return Err(Error::config("data.n_features", "must be positive"));
                }
                if d.n_classes < 2 {
                    return Err(Error::config("data.n_classes", "must be at least 2"));
                }
                if d.n_samples < d.n_classes {
                    return Err(Error::config("data.n_samples", "must be at least n_classes"));
                }
                if !(d.class_separation > 0.0 && d.class_separation.is_finite()) {
                    return Err(Error::config("data.class_separation", "must be positive"));
                }
            }
            DataSource::Idx => {
                if d.images.is_none() {
                    return Err(Error::config("data.images", "required when source = \"idx\""));
                }
                if d.labels.is_none() {
                    return Err(Error::config("data.labels", "required when source = \"idx\""));
                }
            }
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::config("data.test_fraction", "must lie in [0, 1)"));
        }
        if d.shards_per_device == 0 {
            return Err(Error::config("data.shards_per_device", "must be positive"));
        }
        let t = &self.train;
        if t.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and nonnegative"));
        }
        if let Some(n) = self.verify.max_update_norm {
            if !(n > 0.0) {
                return Err(Error::config("verify.max_update_norm", "must be positive"));
            }
        }
        if !(self.verify.norm_multiplier > 0.0 && self.verify.norm_multiplier.is_finite()) {
            return Err(Error::config("verify.norm_multiplier", "must be positive"));
        }
        self.aggregation.validate()?;
        let a = &self.anomaly;
        if a.params.k == 0 {
            return Err(Error::config("anomaly.k", "must be positive"));
        }
        if !(a.params.deviation_multiplier >= 0.0) {
            return Err(Error::config("anomaly.deviation_multiplier", "must be nonnegative"));
        }
        if let Some(z) = a.params.score_normalizer {
            if !(z > 0.0) {
                return Err(Error::config("anomaly.score_normalizer", "must be positive"));
            }
        }
        if !(a.width > 0.0 && a.width.is_finite()) {
            return Err(Error::config("anomaly.width", "must be positive"));
        }
        if a.points_per_round == 0 {
            return Err(Error::config("anomaly.points_per_round", "must be positive"));
        }
        self.trust.validate()?;
        self.attack.validate(self.n_devices)?;
        self.failure.validate(self.topology.is_centralized())?;
        self.delay.validate()?;
        Ok(())
    }
}

/// Maps a TOML/serde error to a config error naming the offending key when
/// the message quotes one.
fn config_error(e: toml::de::Error) -> Error {
    let message = e.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    Error::Config { field, message }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "topology = \"bfl_robust\"\nn_devices = 4\nrounds = 2\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg, ScenarioConfig::new(Topology::BflRobust, 4, 2));
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = ScenarioConfig::from_toml_str("topology = \"bfl_plain\"\nrounds = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_devices"), "{err}");
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let err = ScenarioConfig::from_toml_str(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "bogus"), "{err}");
        let err = ScenarioConfig::from_toml_str(&format!("{MINIMAL}[trust]\nbeta = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }

    #[test]
    fn nested_sections_parse() {
        let text = format!(
            "{MINIMAL}\
[aggregation]\nepsilon_mode = {{ mode = \"absolute\", epsilon = 2.5 }}\n\
[attack]\nkind = {{ type = \"sign_flip\" }}\nselection = {{ type = \"per_round_random\", min_k = 1, max_k = 3 }}\n\
[anomaly]\nk = 2\nwidth = 0.5\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.anomaly.params.k, 2);
        assert_eq!(cfg.anomaly.width, 0.5);
        assert!(matches!(
            cfg.aggregation.epsilon_mode,
            crate::aggregation::EpsilonMode::Absolute { epsilon } if epsilon == 2.5
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ScenarioConfig::new(Topology::CentralizedFedavg, 7, 9);
        cfg.failure.server_failure_round = Some(3);
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn semantic_checks_name_fields() {
        let err =
            ScenarioConfig::from_toml_str(&format!("{MINIMAL}[failure]\nserver_failure_round = 2\n")).unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "failure.server_failure_round"));
        let err = ScenarioConfig::from_toml_str("topology = \"bfl_plain\"\nn_devices = 4\nrounds = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "rounds"));
    }
}
