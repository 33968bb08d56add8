//! Matches every attack to its most similar live sample and keeps the pairs
//! whose similarity clears a threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamodel::{AttackCategory, EmbeddingStore, Label, Sample};
use crate::error::{Error, Result};

/// An attack and its best-matching live sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub attack_id: String,
    pub live_id: String,
    pub similarity: f64,
}

/// Per-category sample counts before and after filtering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub tau_sim: f64,
    pub before: BTreeMap<AttackCategory, usize>,
    pub after: BTreeMap<AttackCategory, usize>,
    pub lives_before: usize,
    pub lives_retained: usize,
    pub total_before: usize,
    pub total_after: usize,
}

impl FilterReport {
    /// Plain-text table, one category per row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8} {:>8}", "category", "before", "after");
        for c in AttackCategory::ATTACKS {
            let before = self.before.get(&c).copied().unwrap_or(0);
            let after = self.after.get(&c).copied().unwrap_or(0);
            let after = if before > 0 && after == 0 {
                "--".to_string()
            } else {
                after.to_string()
            };
            let _ = writeln!(out, "{:<16} {:>8} {:>8}", c.as_str(), before, after);
        }
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8}",
            "live", self.lives_before, self.lives_retained
        );
        let _ = write!(
            out,
            "{:<16} {:>8} {:>8}  (tau_sim = {})",
            "attacks total", self.total_before, self.total_after, self.tau_sim
        );
        out
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
}

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`, evaluated in `f64` and clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine similarity of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity with a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn lookup<'a>(embeddings: &'a EmbeddingStore, id: &str) -> Result<&'a [f32]> {
    embeddings
        .get(id)
        .ok_or_else(|| Error::Integrity(format!("no embedding for sample {id:?}")))
}

/// Live sample with the highest similarity to the attack. Ties go to the
/// lexicographically smallest live id.
pub fn best_live_match<S: AsRef<str>>(
    attack_id: &str,
    embeddings: &EmbeddingStore,
    live_ids: &[S],
) -> Result<(String, f64)> {
    let attack = lookup(embeddings, attack_id)?;
    let lives = live_ids
        .iter()
        .map(|id| Ok((id.as_ref(), lookup(embeddings, id.as_ref())?)))
        .collect::<Result<Vec<_>>>()?;
    best_among(attack, &lives).map(|(id, s)| (id.to_string(), s))
}

fn best_among<'a>(attack: &[f32], lives: &[(&'a str, &[f32])]) -> Result<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for &(id, v) in lives {
        let s = cosine_similarity(attack, v)?;
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid <= id) => Some((bid, bs)),
            _ => Some((id, s)),
        };
    }
    best.ok_or_else(|| Error::Domain("no live samples to match against".into()))
}

/// Keeps every valid attack whose best live match has similarity strictly
/// greater than `tau_sim`. Pairs come back sorted by attack id.
pub fn filter_pairs(
    samples: &[Sample],
    embeddings: &EmbeddingStore,
    tau_sim: f64,
) -> Result<(Vec<TrainPair>, FilterReport)> {
    if !(-1.0..=1.0).contains(&tau_sim) {
        return Err(Error::Domain(format!("tau_sim must be in [-1, 1], got {tau_sim}")));
    }
    let valid: Vec<&Sample> = samples.iter().filter(|s| s.valid).collect();
    let lives = valid
        .iter()
        .filter(|s| s.label == Label::Live)
        .map(|s| Ok((s.id.as_str(), lookup(embeddings, &s.id)?)))
        .collect::<Result<Vec<_>>>()?;
    if lives.is_empty() {
        return Err(Error::Domain("no valid live samples to match against".into()));
    }
    let mut attacks: Vec<&Sample> = valid
        .iter()
        .copied()
        .filter(|s| s.label == Label::Attack)
        .collect();
    attacks.sort_by(|a, b| a.id.cmp(&b.id));

    let mut before: BTreeMap<AttackCategory, usize> =
        AttackCategory::ATTACKS.iter().map(|&c| (c, 0)).collect();
    let mut after = before.clone();
    let mut pairs = Vec::new();
    for a in attacks {
        *before.entry(a.category).or_default() += 1;
        let (live_id, similarity) = best_among(lookup(embeddings, &a.id)?, &lives)?;
        if similarity > tau_sim {
            *after.entry(a.category).or_default() += 1;
            pairs.push(TrainPair {
                attack_id: a.id.clone(),
                live_id: live_id.to_string(),
                similarity,
            });
        }
    }
    let retained: BTreeSet<&str> = pairs.iter().map(|p| p.live_id.as_str()).collect();
    let report = FilterReport {
        tau_sim,
        total_before: before.values().sum(),
        total_after: pairs.len(),
        before,
        after,
        lives_before: lives.len(),
        lives_retained: retained.len(),
    };
    Ok((pairs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn sample(id: &str, label: Label, category: AttackCategory) -> Sample {
        Sample {
            id: id.into(),
            identity: "p".into(),
            label,
            category,
            valid: true,
            image: Tensor::zeros(vec![1, 1, 3]),
        }
    }

    fn e(i: usize, dim: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cosine_cases() {
        let v = vec![0.3f32, -1.2, 2.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&e(0, 4), &e(1, 4)).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0, 0.0, 0.0], &e(0, 4)).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn best_match_cases() {
        let mut store = EmbeddingStore::new(3);
        store.insert("a", vec![1.0, 0.2, 0.0]).unwrap();
        store.insert("l1", vec![0.0, 1.0, 0.0]).unwrap();
        store.insert("l2", vec![1.0, 0.2, 0.0]).unwrap();
        store.insert("l3", vec![1.0, 0.2, 0.0]).unwrap();
        assert_eq!(best_live_match("a", &store, &["l1"]).unwrap().0, "l1");
        let (id, s) = best_live_match("a", &store, &["l1", "l3", "l2"]).unwrap();
        assert_eq!(id, "l2", "tie goes to the smaller id");
        assert_eq!(s, 1.0);
        let empty: [&str; 0] = [];
        assert!(matches!(
            best_live_match("a", &store, &empty),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn threshold_extremes_and_report_counts() {
        let samples = vec![
            sample("l1", Label::Live, AttackCategory::Live),
            sample("l2", Label::Live, AttackCategory::Live),
            sample("a1", Label::Attack, AttackCategory::PixelLevel),
            sample("a2", Label::Attack, AttackCategory::Replay),
            Sample {
                valid: false,
                ..sample("a3", Label::Attack, AttackCategory::Print)
            },
        ];
        let mut store = EmbeddingStore::new(3);
        store.insert("l1", vec![1.0, 0.0, 0.0]).unwrap();
        store.insert("l2", vec![0.0, 1.0, 0.0]).unwrap();
        store.insert("a1", vec![1.0, 0.1, 0.0]).unwrap();
        store.insert("a2", vec![0.0, 0.0, 1.0]).unwrap();
        store.insert("a3", vec![1.0, 0.0, 0.0]).unwrap();

        let (all, report) = filter_pairs(&samples, &store, -1.0).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(report.total_before, 2);
        assert_eq!(report.before[&AttackCategory::Print], 0);

        let (none, report) = filter_pairs(&samples, &store, 1.0).unwrap();
        assert!(none.is_empty());
        assert_eq!(report.total_before, 2);
        assert_eq!(report.after.values().sum::<usize>(), 0);

        let (some, report) = filter_pairs(&samples, &store, 0.9).unwrap();
        assert_eq!(some.len(), 1);
        assert_eq!(some[0].live_id, "l1");
        assert_eq!(report.after[&AttackCategory::Replay], 0);
        assert_eq!(report.lives_retained, 1);
        assert!(report.table().contains("--"));
    }

    #[test]
    fn no_lives_is_a_domain_error() {
        let samples = vec![sample("a1", Label::Attack, AttackCategory::PixelLevel)];
        let mut store = EmbeddingStore::new(2);
        store.insert("a1", vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            filter_pairs(&samples, &store, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn missing_embedding_is_an_integrity_error() {
        let samples = vec![
            sample("l1", Label::Live, AttackCategory::Live),
            sample("a1", Label::Attack, AttackCategory::PixelLevel),
        ];
        let mut store = EmbeddingStore::new(2);
        store.insert("l1", vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            filter_pairs(&samples, &store, 0.5),
            Err(Error::Integrity(_))
        ));
    }
}
