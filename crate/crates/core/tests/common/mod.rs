//! Independent reference implementations shared by the oracle suites.
#![allow(dead_code)]

use rand::{Rng, RngCore};
use ztrust_core::clustering::{ClusterSet, ClusterSummary};
use ztrust_core::ledger::{Block, TrustMap, UpdateRecord};
use ztrust_core::ParamVector;

pub fn median_sorted(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn coordinate_median_oracle(updates: &[Vec<f64>]) -> Vec<f64> {
    (0..updates[0].len())
        .map(|k| median_sorted(updates.iter().map(|u| u[k]).collect()))
        .collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distances to the coordinate median and robust-z flags.
pub fn screen_oracle(updates: &[Vec<f64>], theta: f64) -> Vec<(f64, bool)> {
    let center = coordinate_median_oracle(updates);
    let d: Vec<f64> = updates.iter().map(|u| euclid(u, &center)).collect();
    let med = median_sorted(d.clone());
    let mad = 1.4826 * median_sorted(d.iter().map(|x| (x - med).abs()).collect());
    d.iter()
        .map(|&x| {
            let flagged = if mad > 0.0 {
                x > med + theta * mad
            } else {
                x > med * (1.0 + 1e-9)
            };
            (x, flagged)
        })
        .collect()
}

/// Quadratic-per-step merge: fuse the closest pair (ties by lower index pair)
/// while it lies within the width.
pub fn merge_oracle(sets: &[ClusterSet]) -> Vec<ClusterSummary> {
    let width = sets[0].width();
    let mut cs: Vec<ClusterSummary> = sets.iter().flat_map(|s| s.clusters().to_vec()).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                let d = euclid(&cs[i].center, &cs[j].center);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        match best {
            Some((d, i, j)) if d <= width => {
                let (ci, cj) = (cs[i].count as f64, cs[j].count as f64);
                let center = cs[i]
                    .center
                    .iter()
                    .zip(&cs[j].center)
                    .map(|(a, b)| (a * ci + b * cj) / (ci + cj))
                    .collect();
                cs[i] = ClusterSummary {
                    center,
                    count: cs[i].count + cs[j].count,
                };
                cs.remove(j);
            }
            _ => return cs,
        }
    }
}

pub fn random_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_cluster_set(rng: &mut impl Rng, width: f64, dim: usize, points: usize) -> ClusterSet {
    let mut set = ClusterSet::new(width, dim).unwrap();
    for _ in 0..points {
        set.insert(&random_vec(rng, dim, 2.0)).unwrap();
    }
    set
}

/// Small ledger-shaped block list with records and snapshots, built through
/// the public mining API.
pub fn sample_ledger(rng: &mut impl Rng) -> ztrust_core::ledger::Ledger {
    let mut ledger = ztrust_core::ledger::Ledger::new();
    for round in 0..4u64 {
        let records = (0..3u32)
            .map(|d| {
                UpdateRecord::new(
                    d,
                    round,
                    ParamVector::from_vec(random_vec(rng, 5, 1.0)),
                    rng.random::<f64>(),
                )
            })
            .collect();
        let snapshot: Option<TrustMap> =
            (round % 2 == 0).then(|| (0..3u32).map(|d| (d, rng.random::<f64>())).collect());
        ledger.mine_block(round, records, snapshot, (round % 2) as u32).unwrap();
    }
    ledger
}

fn flip_u64(v: &mut u64, bit: u32) {
    *v ^= 1u64 << (bit % 64);
}

fn flip_f64(v: &mut f64, bit: u32) {
    *v = f64::from_bits(v.to_bits() ^ (1u64 << (bit % 64)));
}

fn flip_bytes(b: &mut [u8; 32], bit: u32) {
    let bit = bit as usize % 256;
    b[bit / 8] ^= 1 << (bit % 8);
}

/// Flips one bit of one hashed field of one block. Returns a label of what
/// was touched.
pub fn tamper_one_bit(blocks: &mut [Block], rng: &mut impl RngCore) -> String {
    let bi = (rng.next_u32() as usize) % blocks.len();
    let bit = rng.next_u32();
    let block = &mut blocks[bi];
    let has_records = !block.records.is_empty();
    let has_snapshot = block.trust_snapshot.as_ref().is_some_and(|m| !m.is_empty());
    loop {
        match rng.next_u32() % 10 {
            0 => {
                flip_u64(&mut block.index, bit);
                return format!("block {bi} index");
            }
            1 => {
                flip_bytes(&mut block.prev_hash, bit);
                return format!("block {bi} prev_hash");
            }
            2 => {
                flip_u64(&mut block.round, bit);
                return format!("block {bi} round");
            }
            3 => {
                block.miner_id ^= 1 << (bit % 32);
                return format!("block {bi} miner");
            }
            4 => {
                flip_bytes(&mut block.block_hash, bit);
                return format!("block {bi} hash");
            }
            5 if has_records => {
                let r = (rng.next_u32() as usize) % block.records.len();
                let rec = &mut block.records[r];
                let k = (rng.next_u32() as usize) % rec.update.dim();
                flip_f64(&mut rec.update.as_mut_slice()[k], bit);
                return format!("block {bi} record {r} update[{k}]");
            }
            6 if has_records => {
                let r = (rng.next_u32() as usize) % block.records.len();
                flip_bytes(&mut block.records[r].update_digest, bit);
                return format!("block {bi} record {r} digest");
            }
            7 if has_records => {
                let r = (rng.next_u32() as usize) % block.records.len();
                flip_f64(&mut block.records[r].submitted_at, bit);
                return format!("block {bi} record {r} submitted_at");
            }
            8 if has_records => {
                let r = (rng.next_u32() as usize) % block.records.len();
                let rec = &mut block.records[r];
                if rng.next_u32().is_multiple_of(2) {
                    rec.device_id ^= 1 << (bit % 32);
                } else {
                    flip_u64(&mut rec.round, bit);
                }
                return format!("block {bi} record {r} header");
            }
            9 if has_snapshot => {
                let map = block.trust_snapshot.as_mut().unwrap();
                let key = *map.keys().nth((rng.next_u32() as usize) % map.len()).unwrap();
                flip_f64(map.get_mut(&key).unwrap(), bit);
                return format!("block {bi} trust[{key}]");
            }
            _ => continue,
        }
    }
}

/// Sequential trust recurrence written out directly.
pub fn trust_recurrence(t0: f64, alpha: f64, anomalies: &[f64]) -> f64 {
    anomalies
        .iter()
        .fold(t0, |t, a| ((1.0 - alpha) * t + alpha * (1.0 - a)).clamp(0.0, 1.0))
}
