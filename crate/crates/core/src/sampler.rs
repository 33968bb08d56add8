//! Paired batch planning.
//!
//! A batch of size `B` holds `B/2` attacks followed by the mined live match of
//! each attack, in the same order. A nominal epoch draws half of the pair set
//! without replacement.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairmine::TrainPair;

/// Smallest batch (in samples) that leaves two samples per class.
pub const MIN_BATCH_SAMPLES: usize = 4;

/// One batch as ordered `(attack_id, live_id)` slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedBatchPlan {
    pub slots: Vec<(String, String)>,
}

impl PairedBatchPlan {
    /// Number of samples in the batch (two per slot).
    pub fn len(&self) -> usize {
        2 * self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn attacks(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(a, _)| a.as_str())
    }

    pub fn lives(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(_, l)| l.as_str())
    }

    /// All attacks, then their matched lives in the same order.
    pub fn flat_order(&self) -> Vec<&str> {
        self.attacks().chain(self.lives()).collect()
    }
}

/// Checks a batch size: even and at least [`MIN_BATCH_SAMPLES`].
pub fn validate_batch_size(batch_size: usize) -> Result<()> {
    if !batch_size.is_multiple_of(2) || batch_size < MIN_BATCH_SAMPLES {
        return Err(Error::Config(format!(
            "batch size must be even and >= {MIN_BATCH_SAMPLES}, got {batch_size}"
        )));
    }
    Ok(())
}

/// Number of batches [`plan_epoch`] emits for `n_pairs` pairs.
pub fn batches_per_epoch(n_pairs: usize, batch_size: usize) -> usize {
    let drawn = n_pairs.div_ceil(2);
    let per_batch = batch_size / 2;
    let full = drawn / per_batch;
    let rest = drawn % per_batch;
    full + usize::from(2 * rest >= MIN_BATCH_SAMPLES)
}

/// Draws `⌈|pairs| / 2⌉` pairs uniformly without replacement and cuts them
/// into batches of `batch_size / 2` pairs. A trailing batch is kept only if it
/// holds at least [`MIN_BATCH_SAMPLES`] samples.
pub fn plan_epoch(pairs: &[TrainPair], batch_size: usize, seed: u64) -> Result<Vec<PairedBatchPlan>> {
    validate_batch_size(batch_size)?;
    if pairs.is_empty() {
        return Err(Error::Domain("cannot plan an epoch over zero pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(pairs.len().div_ceil(2));
    let plans = order
        .chunks(batch_size / 2)
        .filter(|chunk| 2 * chunk.len() >= MIN_BATCH_SAMPLES)
        .map(|chunk| PairedBatchPlan {
            slots: chunk
                .iter()
                .map(|&i| (pairs[i].attack_id.clone(), pairs[i].live_id.clone()))
                .collect(),
        })
        .collect();
    Ok(plans)
}

/// How often each live id fills a live slot across the given plans.
pub fn oversampling_histogram<'a, I>(plans: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = &'a PairedBatchPlan>,
{
    let mut counts = BTreeMap::new();
    for plan in plans {
        for live in plan.lives() {
            *counts.entry(live.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Serialize)]
struct PlanRecord<'a> {
    epoch: usize,
    batch: usize,
    slots: &'a [(String, String)],
}

/// Appends one JSON line per batch, for reproducibility audits.
pub fn write_plan_dump(out: &mut impl Write, epoch: usize, plans: &[PairedBatchPlan]) -> Result<()> {
    for (batch, plan) in plans.iter().enumerate() {
        let rec = PlanRecord {
            epoch,
            batch,
            slots: &plan.slots,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<plan dump>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn pairs(n: usize, lives: usize) -> Vec<TrainPair> {
        (0..n)
            .map(|i| TrainPair {
                attack_id: format!("a{i:05}"),
                live_id: format!("l{:03}", i % lives),
                similarity: 0.95,
            })
            .collect()
    }

    #[test]
    fn sixteen_pairs_batch_eight() {
        let plans = plan_epoch(&pairs(16, 4), 8, 1).unwrap();
        assert_eq!(plans.len(), 2);
        assert!(plans.iter().all(|p| p.len() == 8));
    }

    #[test]
    fn challenge_sized_epoch_has_248_batches() {
        let plans = plan_epoch(&pairs(7918, 751), 32, 3).unwrap();
        assert_eq!(plans.len(), 248);
        assert_eq!(batches_per_epoch(7918, 32), 248);
        assert_eq!(plans.last().unwrap().len(), 14);
        assert_eq!(plans.iter().map(|p| p.slots.len()).sum::<usize>(), 3959);
    }

    #[test]
    fn plans_are_deterministic() {
        let p = pairs(100, 7);
        assert_eq!(plan_epoch(&p, 16, 9).unwrap(), plan_epoch(&p, 16, 9).unwrap());
        assert_ne!(plan_epoch(&p, 16, 9).unwrap(), plan_epoch(&p, 16, 10).unwrap());
    }

    #[test]
    fn batch_size_validation() {
        let p = pairs(10, 2);
        assert!(matches!(plan_epoch(&p, 7, 0), Err(Error::Config(_))));
        assert!(matches!(plan_epoch(&p, 2, 0), Err(Error::Config(_))));
        assert!(matches!(plan_epoch(&[], 8, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn trailing_single_pair_is_dropped() {
        // 10 pairs -> 5 drawn -> batches of 2 pairs: 2, 2, (1 dropped)
        let plans = plan_epoch(&pairs(10, 3), 4, 5).unwrap();
        assert_eq!(plans.len(), 2);
        assert_eq!(batches_per_epoch(10, 4), 2);
    }

    #[test]
    fn no_pair_repeats_within_an_epoch_and_lives_follow_attacks() {
        let p = pairs(301, 13);
        let lookup: std::collections::HashMap<_, _> =
            p.iter().map(|t| (t.attack_id.clone(), t.live_id.clone())).collect();
        let plans = plan_epoch(&p, 32, 77).unwrap();
        let mut seen = HashSet::new();
        for plan in &plans {
            let flat = plan.flat_order();
            let half = flat.len() / 2;
            for i in 0..half {
                assert_eq!(lookup[flat[i]], flat[half + i]);
                assert!(seen.insert(flat[i].to_string()));
            }
        }
    }

    #[test]
    fn single_live_fills_every_live_slot() {
        let p = pairs(40, 1);
        let plans = plan_epoch(&p, 8, 2).unwrap();
        let hist = oversampling_histogram(&plans);
        let total: usize = plans.iter().map(|pl| pl.slots.len()).sum();
        assert_eq!(hist.len(), 1);
        assert_eq!(hist["l000"], total);
        assert_eq!(total, plans.len() * 4);
    }

    #[test]
    fn plan_dump_is_jsonl() {
        let plans = plan_epoch(&pairs(8, 2), 4, 1).unwrap();
        let mut buf = Vec::new();
        write_plan_dump(&mut buf, 0, &plans).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), plans.len());
        assert!(text.starts_with("{\"epoch\":0,\"batch\":0,"));
    }
}
