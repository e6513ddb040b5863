//! Simulated ledger: smart-contract style verification of submitted updates,
//! round-robin mining, hash-chain validation and trust snapshots.
//!
//! # Canonical encoding
//!
//! All integers are little-endian, reals are IEEE-754 bit patterns (u64 LE).
//!
//! Record digest: SHA-256 over
//! `"ztrust.record.v1" | device_id u32 | round u64 | dim u64 | values f64*`.
//!
//! Block hash: SHA-256 over
//! `"ztrust.block.v1" | index u64 | prev_hash [32] | round u64 | n_records u64 |
//! (update_digest [32] | submitted_at f64)* | has_snapshot u8 |
//! [n u64 | (device_id u32 | trust f64)* in ascending id order] | miner_id u32`.
//!
//! Record digests commit to the update contents; the block hash commits to
//! the digests, so `validate_chain` recomputes both.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub type Hash32 = [u8; 32];

pub type TrustMap = BTreeMap<u32, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub device_id: u32,
    pub round: u64,
    pub update: ParamVector,
    #[serde(with = "hex::serde")]
    pub update_digest: Hash32,
    /// Simulated seconds since the start of the run.
    pub submitted_at: f64,
}

impl UpdateRecord {
    pub fn new(device_id: u32, round: u64, update: ParamVector, submitted_at: f64) -> Self {
        let update_digest = Self::digest_of(device_id, round, &update);
        UpdateRecord {
            device_id,
            round,
            update,
            update_digest,
            submitted_at,
        }
    }

    pub fn digest_of(device_id: u32, round: u64, update: &ParamVector) -> Hash32 {
        let mut buf = Vec::with_capacity(32 + 8 * update.dim());
        buf.extend_from_slice(b"ztrust.record.v1");
        buf.extend_from_slice(&device_id.to_le_bytes());
        buf.extend_from_slice(&round.to_le_bytes());
        update.write_canonical(&mut buf);
        Sha256::digest(&buf).into()
    }

    pub fn digest_is_valid(&self) -> bool {
        Self::digest_of(self.device_id, self.round, &self.update) == self.update_digest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    #[serde(with = "hex::serde")]
    pub prev_hash: Hash32,
    pub round: u64,
    pub records: Vec<UpdateRecord>,
    pub trust_snapshot: Option<TrustMap>,
    pub miner_id: u32,
    #[serde(with = "hex::serde")]
    pub block_hash: Hash32,
}

impl Block {
    pub fn compute_hash(&self) -> Hash32 {
        let mut h = Sha256::new();
        h.update(b"ztrust.block.v1");
        h.update(self.index.to_le_bytes());
        h.update(self.prev_hash);
        h.update(self.round.to_le_bytes());
        h.update((self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            h.update(r.update_digest);
            h.update(r.submitted_at.to_bits().to_le_bytes());
        }
        match &self.trust_snapshot {
            None => h.update([0u8]),
            Some(map) => {
                h.update([1u8]);
                h.update((map.len() as u64).to_le_bytes());
                for (id, t) in map {
                    h.update(id.to_le_bytes());
                    h.update(t.to_bits().to_le_bytes());
                }
            }
        }
        h.update(self.miner_id.to_le_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    pub expected_dim: usize,
    pub max_update_norm: f64,
    pub allow_duplicate_per_round: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Dim,
    Nonfinite,
    Norm,
    StaleRound,
    Duplicate,
    Digest,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::Dim => "dim",
            RejectReason::Nonfinite => "nonfinite",
            RejectReason::Norm => "norm",
            RejectReason::StaleRound => "stale_round",
            RejectReason::Duplicate => "duplicate",
            RejectReason::Digest => "digest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

/// What the contract may observe about the chain while a round is open.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainState {
    pub current_round: u64,
    pub accepted_this_round: BTreeSet<u32>,
}

impl ChainState {
    pub fn open_round(round: u64) -> Self {
        ChainState {
            current_round: round,
            accepted_this_round: BTreeSet::new(),
        }
    }
}

/// Runs every contract predicate. Checks are ordered so the reported reason
/// is the first failure in: dim, nonfinite, norm, stale_round, duplicate,
/// digest.
pub fn verify_update(record: &UpdateRecord, policy: &VerificationPolicy, state: &ChainState) -> Verdict {
    use RejectReason::*;
    if record.update.dim() != policy.expected_dim {
        return Verdict::Rejected(Dim);
    }
    if !record.update.is_finite() {
        return Verdict::Rejected(Nonfinite);
    }
    if !(record.update.norm() <= policy.max_update_norm) {
        return Verdict::Rejected(Norm);
    }
    if record.round != state.current_round {
        return Verdict::Rejected(StaleRound);
    }
    if !policy.allow_duplicate_per_round && state.accepted_this_round.contains(&record.device_id) {
        return Verdict::Rejected(Duplicate);
    }
    if !record.digest_is_valid() {
        return Verdict::Rejected(Digest);
    }
    Verdict::Accepted
}

pub fn miner_for_round(round: u64, n_miners: u32) -> u32 {
    (round % n_miners.max(1) as u64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainValidity {
    Valid,
    Invalid { first_bad_index: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    /// A chain holding only the genesis block (round 0, miner 0).
    pub fn new() -> Self {
        let mut genesis = Block {
            index: 0,
            prev_hash: [0u8; 32],
            round: 0,
            records: Vec::new(),
            trust_snapshot: None,
            miner_id: 0,
            block_hash: [0u8; 32],
        };
        genesis.block_hash = genesis.compute_hash();
        Ledger { blocks: vec![genesis] }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    /// Appends a block closing `round`. An empty record list is allowed.
    pub fn mine_block(
        &mut self,
        round: u64,
        records: Vec<UpdateRecord>,
        trust_snapshot: Option<TrustMap>,
        miner_id: u32,
    ) -> Result<&Block> {
        if let Some(map) = &trust_snapshot {
            check_trust_map(map)?;
        }
        let tip = self.tip();
        let mut block = Block {
            index: tip.index + 1,
            prev_hash: tip.block_hash,
            round,
            records,
            trust_snapshot,
            miner_id,
            block_hash: [0u8; 32],
        };
        block.block_hash = block.compute_hash();
        self.blocks.push(block);
        Ok(self.tip())
    }

    /// Records a trust table in a block of its own.
    pub fn store_trust(&mut self, round: u64, trust: TrustMap, miner_id: u32) -> Result<&Block> {
        self.mine_block(round, Vec::new(), Some(trust), miner_id)
    }

    /// Trust values from the highest-index block carrying a snapshot, with
    /// `t0` for devices it does not mention.
    pub fn latest_trust(&self, n_devices: u32, t0: f64) -> TrustMap {
        let mut out: TrustMap = (0..n_devices).map(|d| (d, t0)).collect();
        if let Some(map) = self.blocks.iter().rev().find_map(|b| b.trust_snapshot.as_ref()) {
            for (id, t) in map {
                out.insert(*id, *t);
            }
        }
        out
    }

    pub fn validate(&self) -> ChainValidity {
        validate_blocks(&self.blocks)
    }

    /// One JSON object per block, one block per line.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&serde_json::to_string(b).expect("block serialization is infallible"));
            out.push('\n');
        }
        out
    }

    /// Parses an export without validating it; call [`Ledger::validate`].
    pub fn import(text: &str) -> Result<Ledger> {
        let blocks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str::<Block>(l).map_err(|e| Error::format(format!("line {}: {e}", n + 1))))
            .collect::<Result<Vec<_>>>()?;
        if blocks.is_empty() {
            return Err(Error::format("ledger file holds no blocks"));
        }
        Ok(Ledger { blocks })
    }

    #[cfg(test)]
    pub(crate) fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}

fn check_trust_map(map: &TrustMap) -> Result<()> {
    for (id, t) in map {
        if !(0.0..=1.0).contains(t) {
            return Err(Error::argument(format!("trust {t} for device {id} outside [0, 1]")));
        }
    }
    Ok(())
}

pub fn validate_blocks(blocks: &[Block]) -> ChainValidity {
    let mut prev: Hash32 = [0u8; 32];
    for (pos, b) in blocks.iter().enumerate() {
        let ok = b.index == pos as u64
            && b.prev_hash == prev
            && b.records.iter().all(UpdateRecord::digest_is_valid)
            && b.compute_hash() == b.block_hash;
        if !ok {
            return ChainValidity::Invalid {
                first_bad_index: pos as u64,
            };
        }
        prev = b.block_hash;
    }
    ChainValidity::Valid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> VerificationPolicy {
        VerificationPolicy {
            expected_dim: 3,
            max_update_norm: 2.0,
            allow_duplicate_per_round: false,
        }
    }

    fn record(device: u32, round: u64, v: Vec<f64>) -> UpdateRecord {
        UpdateRecord::new(device, round, ParamVector::from_vec(v), 0.0)
    }

    fn chain(n_rounds: u64) -> Ledger {
        let mut l = Ledger::new();
        for r in 0..n_rounds {
            let recs = vec![
                record(0, r, vec![0.1, 0.2, r as f64]),
                record(1, r, vec![-0.1, 0.0, 0.5]),
            ];
            let snap: TrustMap = [(0, 0.5), (1, 0.25)].into_iter().collect();
            l.mine_block(r, recs, Some(snap), miner_for_round(r, 2)).unwrap();
        }
        l
    }

    #[test]
    fn zero_update_is_accepted() {
        let v = verify_update(&record(0, 4, vec![0.0; 3]), &policy(), &ChainState::open_round(4));
        assert_eq!(v, Verdict::Accepted);
    }

    #[test]
    fn each_predicate_has_its_reason() {
        let st = ChainState::open_round(1);
        let p = policy();
        assert_eq!(
            verify_update(&record(0, 1, vec![0.0; 2]), &p, &st),
            Verdict::Rejected(RejectReason::Dim)
        );
        assert_eq!(
            verify_update(&record(0, 1, vec![0.0, f64::NAN, 0.0]), &p, &st),
            Verdict::Rejected(RejectReason::Nonfinite)
        );
        assert_eq!(
            verify_update(&record(0, 0, vec![0.0; 3]), &p, &st),
            Verdict::Rejected(RejectReason::StaleRound)
        );
        let mut dup = st.clone();
        dup.accepted_this_round.insert(7);
        assert_eq!(
            verify_update(&record(7, 1, vec![0.0; 3]), &p, &dup),
            Verdict::Rejected(RejectReason::Duplicate)
        );
        let mut forged = record(0, 1, vec![0.0; 3]);
        forged.update.as_mut_slice()[0] = 0.5;
        assert_eq!(verify_update(&forged, &p, &st), Verdict::Rejected(RejectReason::Digest));
    }

    #[test]
    fn norm_bound_is_closed() {
        // (0, 2, 0) sits exactly on the bound; (1.8, 2.4, 0) has norm 1.5x the bound.
        let st = ChainState::open_round(0);
        let at = record(0, 0, vec![0.0, 2.0, 0.0]);
        assert_eq!(at.update.norm(), 2.0);
        assert_eq!(verify_update(&at, &policy(), &st), Verdict::Accepted);
        let over = record(0, 0, vec![1.8, 2.4, 0.0]);
        assert_eq!(
            verify_update(&over, &policy(), &st),
            Verdict::Rejected(RejectReason::Norm)
        );
    }

    #[test]
    fn verification_is_pure() {
        let st = ChainState::open_round(2);
        let r = record(3, 2, vec![0.5, 0.5, 0.5]);
        let first = verify_update(&r, &policy(), &st);
        for _ in 0..5 {
            assert_eq!(verify_update(&r, &policy(), &st), first);
        }
    }

    #[test]
    fn genesis_and_linkage() {
        let l = chain(2);
        assert_eq!(l.blocks()[0].index, 0);
        assert_eq!(l.blocks()[0].prev_hash, [0u8; 32]);
        assert_eq!(l.blocks()[2].prev_hash, l.blocks()[1].block_hash);
        assert_eq!(Ledger::new().validate(), ChainValidity::Valid);
    }

    #[test]
    fn miners_alternate() {
        let ids: Vec<u32> = (0..4).map(|r| miner_for_round(r, 2)).collect();
        assert_eq!(ids, vec![0, 1, 0, 1]);
        let l = chain(4);
        let mined: Vec<u32> = l.blocks()[1..].iter().map(|b| b.miner_id).collect();
        assert_eq!(mined, vec![0, 1, 0, 1]);
    }

    #[test]
    fn tampered_record_digest_is_located() {
        let mut l = chain(5);
        assert_eq!(l.validate(), ChainValidity::Valid);
        l.blocks_mut()[3].records[0].update_digest[5] ^= 0x01;
        assert_eq!(l.validate(), ChainValidity::Invalid { first_bad_index: 3 });
    }

    #[test]
    fn trust_snapshots_recency_and_defaults() {
        let mut l = Ledger::new();
        assert_eq!(
            l.latest_trust(3, 0.5),
            [(0, 0.5), (1, 0.5), (2, 0.5)].into_iter().collect()
        );
        l.store_trust(3, [(0, 0.9)].into_iter().collect(), 1).unwrap();
        l.mine_block(4, Vec::new(), None, 0).unwrap();
        l.store_trust(5, [(0, 0.1), (1, 0.2)].into_iter().collect(), 1).unwrap();
        assert_eq!(
            l.latest_trust(3, 0.5),
            [(0, 0.1), (1, 0.2), (2, 0.5)].into_iter().collect()
        );
    }

    #[test]
    fn out_of_range_trust_is_refused() {
        let mut l = Ledger::new();
        let err = l.store_trust(0, [(0, 1.2)].into_iter().collect(), 0);
        assert!(matches!(err, Err(Error::Argument(_))));
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn export_round_trips_bit_exactly() {
        let l = chain(3);
        let back = Ledger::import(&l.export()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.validate(), ChainValidity::Valid);
    }

    #[test]
    fn import_rejects_empty_and_garbage() {
        assert!(matches!(Ledger::import(""), Err(Error::Format(_))));
        assert!(matches!(Ledger::import("{not json"), Err(Error::Format(_))));
    }
}
