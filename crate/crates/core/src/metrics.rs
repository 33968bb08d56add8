//! Presentation-attack detection metrics.
//!
//! Live is the positive class and a score at or above the threshold predicts
//! live. Under that orientation a false positive is an attack accepted as
//! live, so `APCER = FP / (FP + TN)` and `BPCER = FN / (FN + TP)`.

use serde::{Deserialize, Serialize};

use crate::datamodel::Label;
use crate::error::{Error, Result};

/// Scores (higher means more live) with their ground-truth labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Domain("empty score set".into()));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite score {s}")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (lives, attacks) = (self.count(Label::Live), self.count(Label::Attack));
        if lives == 0 {
            return Err(Error::Domain("score set has no live samples".into()));
        }
        if attacks == 0 {
            return Err(Error::Domain("score set has no attack samples".into()));
        }
        Ok((lives, attacks))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Live accepted as live.
    pub tp: usize,
    /// Attack accepted as live.
    pub fp: usize,
    /// Attack rejected.
    pub tn: usize,
    /// Live rejected.
    pub fn_: usize,
}

impl Confusion {
    pub fn apcer(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }

    pub fn bpcer(&self) -> Option<f64> {
        let n = self.fn_ + self.tp;
        (n > 0).then(|| self.fn_ as f64 / n as f64)
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        (self.tp + self.tn) as f64 / n as f64
    }
}

/// Counts under the rule `score >= threshold ⇒ live`.
pub fn confusion_at(scores: &ScoreSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scores.scores.iter().zip(&scores.labels) {
        match (l, s >= threshold) {
            (Label::Live, true) => c.tp += 1,
            (Label::Live, false) => c.fn_ += 1,
            (Label::Attack, true) => c.fp += 1,
            (Label::Attack, false) => c.tn += 1,
        }
    }
    c
}

/// `(APCER, BPCER, ACER)` at a threshold.
pub fn acer_at(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64, f64)> {
    scores.require_both()?;
    let c = confusion_at(scores, threshold);
    let apcer = c.apcer().expect("attacks present");
    let bpcer = c.bpcer().expect("lives present");
    Ok((apcer, bpcer, (apcer + bpcer) / 2.0))
}

/// One operating point: rates when thresholding at `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// APCER: attacks accepted as live.
    pub far: f64,
    /// BPCER: lives rejected.
    pub frr: f64,
}

/// Operating points at every distinct score, plus one above the maximum
/// where everything is rejected. FAR is non-increasing along the sweep, FRR
/// non-decreasing.
pub fn operating_points(scores: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    let (n_live, n_attack) = scores.require_both()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]));

    // Walk thresholds upward; everything below the current threshold is rejected.
    let mut points = Vec::new();
    let (mut lives_below, mut attacks_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores.scores[order[i]];
        points.push(OperatingPoint {
            threshold: t,
            far: (n_attack - attacks_below) as f64 / n_attack as f64,
            frr: lives_below as f64 / n_live as f64,
        });
        while i < order.len() && scores.scores[order[i]] == t {
            match scores.labels[order[i]] {
                Label::Live => lives_below += 1,
                Label::Attack => attacks_below += 1,
            }
            i += 1;
        }
    }
    let max = scores.scores[order[order.len() - 1]];
    points.push(OperatingPoint {
        threshold: max + f64::EPSILON * max.abs().max(1.0),
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate and the threshold where it is reached.
///
/// Finds the adjacent pair of operating points where `FAR − FRR` changes sign
/// and interpolates both rates linearly to the crossing. An exact crossing at a
/// swept threshold is returned as is.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let points = operating_points(scores)?;
    let mut prev = points[0];
    for p in points {
        let d = p.far - p.frr;
        if d == 0.0 {
            return Ok((p.far, p.threshold));
        }
        if d < 0.0 {
            let dp = prev.far - prev.frr;
            let w = dp / (dp - d);
            let rate = prev.far + w * (p.far - prev.far);
            let threshold = prev.threshold + w * (p.threshold - prev.threshold);
            return Ok((rate, threshold));
        }
        prev = p;
    }
    unreachable!("the sweep always ends with FAR = 0 and FRR = 1")
}

/// Probability that a random live outscores a random attack, ties counting
/// one half.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (n_live, n_attack) = scores.require_both()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]));
    // Twice the number of (live, attack) wins, so ties stay integral.
    let mut doubled: u128 = 0;
    let mut attacks_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores.scores[order[i]];
        let (mut lives_here, mut attacks_here) = (0u128, 0u128);
        while i < order.len() && scores.scores[order[i]] == t {
            match scores.labels[order[i]] {
                Label::Live => lives_here += 1,
                Label::Attack => attacks_here += 1,
            }
            i += 1;
        }
        doubled += lives_here * (2 * attacks_below + attacks_here);
        attacks_below += attacks_here;
    }
    Ok(doubled as f64 / 2.0 / (n_live as f64 * n_attack as f64))
}

/// All metrics at one threshold, plus EER and AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub counts: Confusion,
}

pub fn evaluate(scores: &ScoreSet, threshold: f64) -> Result<EvalReport> {
    let (apcer, bpcer, acer) = acer_at(scores, threshold)?;
    let counts = confusion_at(scores, threshold);
    let (eer_value, eer_threshold) = eer(scores)?;
    Ok(EvalReport {
        threshold,
        apcer,
        bpcer,
        acer,
        eer: eer_value,
        eer_threshold,
        accuracy: counts.accuracy(),
        auc: auc(scores)?,
        counts,
    })
}

/// ROC polyline as `(FAR, 1 − FRR)` pairs, from `(1, 1)` down to `(0, 0)`.
pub fn roc_polyline(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    Ok(operating_points(scores)?
        .into_iter()
        .map(|p| (p.far, 1.0 - p.frr))
        .collect())
}
