use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ScenarioConfig, Topology, Transport};
use super::metrics::{metrics_csv, round_delay, Detection, RoundComposition, RoundMetrics};
use crate::aggregation::{aggregate_fedavg, aggregate_robust, median_in_place, Contribution};
use crate::attacks::{apply_failures, corrupt_update, select_malicious};
use crate::clustering::{device_anomaly, local_anomaly_scores, merge_clusters, ClusterSet, RunningStandardizer};
use crate::data::{gen_synthetic, load_idx, partition, train_test_split, Dataset, PartitionSpec, Sample};
use crate::error::{Error, Result};
use crate::ledger::{miner_for_round, verify_update, ChainState, Ledger, TrustMap, UpdateRecord, VerificationPolicy};
use crate::model::{accuracy, local_train, ModelShape, TrainConfig};
use crate::params::ParamVector;
use crate::seed::{derive_seed, stream, Purpose, GLOBAL};
use crate::trust::{collect_context, sample_baseline, update_trust, ContextVector, TrustRecord, CONTEXT_DIM};

/// Facts about a run that are not part of the input config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub n_train: usize,
    pub n_test: usize,
    pub param_dim: usize,
    /// Median update norm of the clean warm-up round, when it ran.
    pub warmup_median_norm: Option<f64>,
    /// Aggregation weights use trust after this round's update.
    pub trust_timing: String,
    pub summary_transport: Transport,
    pub rounds_completed: u64,
    pub blocks: usize,
}

/// Self-describing record of a run: every default is resolved in `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run: RunInfo,
    pub config: ScenarioConfig,
}

impl RunMetadata {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("metadata serialization is infallible")
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub metrics: Vec<RoundMetrics>,
    pub ledger: Ledger,
    pub metadata: RunMetadata,
}

impl ScenarioRun {
    pub fn accuracies(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.accuracy).collect()
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics, self.metadata.config.n_devices)
    }

    /// Writes `metrics.csv`, `ledger.export` and `metadata.toml` into `dir`,
    /// creating it if needed.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("ledger.export"), self.ledger.export())?;
        std::fs::write(dir.join("metadata.toml"), self.metadata.to_toml_string())?;
        Ok(())
    }
}

/// Simulation state between rounds.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    shape: ModelShape,
    shards: Vec<Vec<Sample>>,
    test: Vec<Sample>,
    baselines: Vec<ContextVector>,
    standardizer: RunningStandardizer,
    trust: Vec<TrustRecord>,
    ledger: Ledger,
    global: ParamVector,
    policy: VerificationPolicy,
    warmup_median_norm: Option<f64>,
    round: u64,
    clock: f64,
}

/// Per-device output of the training phase.
struct Submission {
    device_id: u32,
    samples: usize,
    update: ParamVector,
}

impl Simulation {
    /// Builds data, shards, baselines and the genesis state. When no fixed
    /// norm bound is configured, a clean warm-up round from the zero model
    /// sets it to `norm_multiplier` times the median update norm.
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mut cfg = config.clone();
        let master = cfg.master_seed;
        let dataset = load_dataset(&cfg)?;
        let shape = ModelShape::new(dataset.n_features, dataset.n_classes)?;
        let (train, test) = train_test_split(&dataset, cfg.data.test_fraction, master)?;
        if test.is_empty() {
            return Err(Error::config("data.test_fraction", "leaves no held-out samples"));
        }
        if train.len() < cfg.n_devices {
            return Err(Error::config("n_devices", "exceeds the number of training samples"));
        }
        let spec = PartitionSpec {
            mode: cfg.data.partition,
            shards_per_device: cfg.data.shards_per_device,
            seed: master,
        };
        let shards =
            partition(&train, cfg.n_devices, &spec).map_err(|e| Error::config("data.partition", e.to_string()))?;
        if shards.iter().any(Vec::is_empty) {
            return Err(Error::config(
                "data.shards_per_device",
                "leaves a device without samples",
            ));
        }

        let baselines = (0..cfg.n_devices as u32)
            .map(|d| {
                sample_baseline(
                    d,
                    cfg.anomaly.n_locations,
                    &mut stream(master, d as u64, 0, Purpose::Baseline),
                )
            })
            .collect();
        let trust = (0..cfg.n_devices as u32)
            .map(|d| TrustRecord::new(d, &cfg.trust))
            .collect();
        let global = ParamVector::zeros(shape.param_dim());

        let mut warmup_median_norm = None;
        let max_update_norm = match cfg.verify.max_update_norm {
            Some(bound) => bound,
            None => {
                let mut norms = shards
                    .par_iter()
                    .enumerate()
                    .map(|(d, shard)| {
                        let tc = train_config(&cfg, derive_seed(master, d as u64, 0, Purpose::Warmup));
                        local_train(&global, &shape, shard, &tc).map(|u| u.norm())
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let median = median_in_place(&mut norms);
                warmup_median_norm = Some(median);
                let bound = cfg.verify.norm_multiplier * median;
                if bound > 0.0 {
                    bound
                } else {
                    f64::MIN_POSITIVE
                }
            }
        };
        cfg.verify.max_update_norm = Some(max_update_norm);
        let policy = VerificationPolicy {
            expected_dim: shape.param_dim(),
            max_update_norm,
            allow_duplicate_per_round: false,
        };

        Ok(Simulation {
            cfg,
            shape,
            shards,
            test: test.samples,
            baselines,
            standardizer: RunningStandardizer::new(CONTEXT_DIM),
            trust,
            ledger: Ledger::new(),
            global,
            policy,
            warmup_median_norm,
            round: 0,
            clock: 0.0,
        })
    }

    /// The config with every default resolved.
    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn global_model(&self) -> &ParamVector {
        &self.global
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn trust(&self) -> &[TrustRecord] {
        &self.trust
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Executes one round and advances the state.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let r = self.round;
        let master = self.cfg.master_seed;
        let topology = self.cfg.topology;
        let n = self.cfg.n_devices;

        let malicious = select_malicious(&self.cfg.attack, n, &mut stream(master, GLOBAL, r, Purpose::Selection));
        let everyone: Vec<u32> = (0..n as u32).collect();
        let failure = apply_failures(
            r,
            &everyone,
            &self.cfg.failure,
            topology.is_centralized(),
            &mut stream(master, GLOBAL, r, Purpose::Dropout),
        );

        let mut composition = RoundComposition::default();
        let mut shared_numbers = 0;
        let mut snapshot = None;
        if topology == Topology::BflRobust && r.is_multiple_of(self.cfg.periodic_interval) {
            shared_numbers = self.refresh_trust(r, &malicious, &mut composition)?;
            snapshot = Some(self.trust_map());
        }

        let trainers: &[u32] = if failure.aggregator_alive {
            &failure.survivors
        } else {
            &[]
        };
        let submissions = self.train(r, trainers, &malicious)?;

        let mut state = ChainState::open_round(r);
        let mut accepted = Vec::new();
        let mut rejected = BTreeSet::new();
        for s in &submissions {
            let at =
                self.clock + s.samples as f64 * self.cfg.delay.t_train_per_sample + self.cfg.delay.t_upload_per_update;
            let record = UpdateRecord::new(s.device_id, r, s.update.clone(), at);
            if verify_update(&record, &self.policy, &state).is_accepted() {
                state.accepted_this_round.insert(s.device_id);
                accepted.push(record);
            } else {
                rejected.insert(s.device_id);
            }
        }
        let miner = if topology.is_centralized() {
            0
        } else {
            miner_for_round(r, self.cfg.n_miners)
        };
        self.ledger.mine_block(r, accepted, snapshot, miner)?;

        let (discarded, degenerate) = self.aggregate()?;

        let flagged: BTreeSet<u32> = rejected.union(&discarded).copied().collect();
        let participants: Vec<u32> = submissions.iter().map(|s| s.device_id).collect();
        let detection = Detection::count(&participants, &malicious, &flagged);
        let accuracy = accuracy(&self.global, &self.shape, &self.test)?;

        composition.survivor_samples = submissions.iter().map(|s| s.samples).collect();
        composition.accepted = self.ledger.tip().records.len();
        let delay_s = round_delay(&self.cfg.delay, topology, &composition);
        self.clock += delay_s;
        self.round += 1;

        Ok(RoundMetrics {
            round: r,
            accuracy,
            trust: self.trust.iter().map(|t| t.trust).collect(),
            discarded,
            malicious,
            detection,
            delay_s,
            degenerate,
            shared_numbers,
        })
    }

    fn trust_map(&self) -> TrustMap {
        self.trust.iter().map(|t| (t.device_id, t.trust)).collect()
    }

    /// Context collection, clustering, merging and the trust update. Returns
    /// the number of summary values exchanged.
    fn refresh_trust(
        &mut self,
        r: u64,
        malicious: &BTreeSet<u32>,
        composition: &mut RoundComposition,
    ) -> Result<usize> {
        let master = self.cfg.master_seed;
        let a = &self.cfg.anomaly;
        let shift = self.cfg.attack.context_shift.as_ref();
        let raw: Vec<Vec<[f64; CONTEXT_DIM]>> = self
            .baselines
            .par_iter()
            .enumerate()
            .map(|(d, base)| {
                let mut rng = stream(master, d as u64, r, Purpose::Context);
                let overlay = shift.filter(|_| malicious.contains(&(d as u32)));
                (0..a.points_per_round)
                    .map(|_| collect_context(base, &a.noise, &mut rng, overlay).features())
                    .collect()
            })
            .collect();
        for p in raw.iter().flatten() {
            self.standardizer.observe(p);
        }
        let standardizer = &self.standardizer;
        let points: Vec<Vec<Vec<f64>>> = raw
            .iter()
            .map(|dev| dev.iter().map(|p| standardizer.standardize(p)).collect())
            .collect();

        let width = a.width;
        let shared = points
            .par_iter()
            .map(|dev| {
                let mut local = ClusterSet::new(width, CONTEXT_DIM)?;
                for p in dev {
                    local.insert(p)?;
                }
                // summaries travel in their wire encoding whatever the transport
                ClusterSet::decode_summaries(width, CONTEXT_DIM, &local.encode_summaries())
            })
            .collect::<Result<Vec<ClusterSet>>>()?;
        let global = merge_clusters(&shared)?;
        let scores = local_anomaly_scores(&global, &a.params);
        let anomalies = points
            .par_iter()
            .map(|dev| device_anomaly(&global, &scores, dev))
            .collect::<Result<Vec<f64>>>()?;
        for (record, anomaly) in self.trust.iter_mut().zip(anomalies) {
            update_trust(record, r, anomaly, &self.cfg.trust)?;
        }

        composition.points = points.iter().map(Vec::len).sum();
        composition.clusters = shared.iter().map(ClusterSet::len).sum();
        composition.devices = self.trust.len();
        Ok(shared.iter().map(ClusterSet::payload_numbers).sum())
    }

    fn train(&self, r: u64, trainers: &[u32], malicious: &BTreeSet<u32>) -> Result<Vec<Submission>> {
        let master = self.cfg.master_seed;
        trainers
            .par_iter()
            .map(|&d| {
                let shard = &self.shards[d as usize];
                let tc = train_config(&self.cfg, derive_seed(master, d as u64, r, Purpose::Train));
                let mut update = local_train(&self.global, &self.shape, shard, &tc)?;
                if malicious.contains(&d) {
                    let mut rng = stream(master, d as u64, r, Purpose::Corruption);
                    update = corrupt_update(&update, &self.cfg.attack.kind, &mut rng);
                }
                Ok(Submission {
                    device_id: d,
                    samples: shard.len(),
                    update,
                })
            })
            .collect()
    }

    /// Aggregates the records of the block just mined and applies the result.
    /// Returns the discarded devices and whether the round was degenerate.
    fn aggregate(&mut self) -> Result<(BTreeSet<u32>, bool)> {
        let records = &self.ledger.tip().records;
        if records.is_empty() {
            return Ok((BTreeSet::new(), true));
        }
        let shard_size = |id: u32| self.shards[id as usize].len();
        match self.cfg.topology {
            Topology::BflRobust => {
                let trust = self.ledger.latest_trust(self.cfg.n_devices as u32, self.cfg.trust.t0);
                let contributions: Vec<Contribution<'_>> = records
                    .iter()
                    .map(|rec| Contribution {
                        device_id: rec.device_id,
                        update: &rec.update,
                        shard_size: shard_size(rec.device_id),
                    })
                    .collect();
                let outcome = aggregate_robust(&contributions, &trust, &self.cfg.aggregation)?;
                if !outcome.degenerate {
                    self.global.add_assign(&outcome.aggregate)?;
                }
                Ok((outcome.discarded, outcome.degenerate))
            }
            Topology::BflPlain | Topology::CentralizedFedavg => {
                let updates: Vec<ParamVector> = records.iter().map(|rec| rec.update.clone()).collect();
                let weights: Vec<f64> = records.iter().map(|rec| shard_size(rec.device_id) as f64).collect();
                let delta = aggregate_fedavg(&updates, &weights)?;
                self.global.add_assign(&delta)?;
                Ok((BTreeSet::new(), false))
            }
        }
    }

    fn metadata(&self) -> RunMetadata {
        RunMetadata {
            run: RunInfo {
                version: env!("CARGO_PKG_VERSION").to_string(),
                n_train: self.shards.iter().map(Vec::len).sum(),
                n_test: self.test.len(),
                param_dim: self.shape.param_dim(),
                warmup_median_norm: self.warmup_median_norm,
                trust_timing: "post_update".to_string(),
                summary_transport: self.cfg.anomaly.transport,
                rounds_completed: self.round,
                blocks: self.ledger.len(),
            },
            config: self.cfg.clone(),
        }
    }
}

fn train_config(cfg: &ScenarioConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        seed,
    }
}

fn load_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => gen_synthetic(
            d.n_samples,
            d.n_features,
            d.n_classes,
            d.class_separation,
            cfg.master_seed,
        ),
        DataSource::Idx => {
            let (Some(images), Some(labels)) = (&d.images, &d.labels) else {
                return Err(Error::config("data.images", "required when source = \"idx\""));
            };
            load_idx(images, labels)
        }
    }
}

/// Runs every round of a scenario on the current rayon pool.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    let mut sim = Simulation::new(config)?;
    let mut metrics = Vec::with_capacity(config.rounds as usize);
    for _ in 0..config.rounds {
        metrics.push(sim.run_round()?);
    }
    let metadata = sim.metadata();
    Ok(ScenarioRun {
        metrics,
        ledger: sim.ledger,
        metadata,
    })
}

/// [`run_scenario`] on a dedicated pool of `threads` workers. Output does not
/// depend on the worker count.
pub fn run_scenario_with_threads(config: &ScenarioConfig, threads: usize) -> Result<ScenarioRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::argument(format!("thread pool: {e}")))?;
    pool.install(|| run_scenario(config))
}
