use serde::Serialize;

use crate::error::{contract, Error, Result};

/// Scores with parallel binary labels (`true` = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        contract!(!scores.is_empty(), "no scores given");
        contract!(
            scores.len() == labels.len(),
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        );
        contract!(scores.iter().all(|s| s.is_finite()), "scores must be finite");
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

/// Distinct scores in descending order, with the positives and negatives
/// sharing each score.
pub(crate) fn descending_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if labels[i] {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, u64::from(labels[i]), u64::from(!labels[i]))),
        }
    }
    groups
}

/// Mann–Whitney form of the area under the ROC curve, from raw slices.
pub(crate) fn auroc_raw(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "AUROC needs both normal and anomalous samples".into(),
        ));
    }
    // twice the number of (positive > negative) pairs, ties counting one
    let mut twice = 0u128;
    let mut negatives_below = neg;
    for (_, p, n) in descending_groups(scores, labels) {
        negatives_below -= n;
        twice += 2 * u128::from(p) * u128::from(negatives_below) + u128::from(p) * u128::from(n);
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Probability that a random anomalous score exceeds a random normal one,
/// ties counted ½.
pub fn auroc(data: &LabeledScores) -> Result<f64> {
    auroc_raw(&data.scores, &data.labels)
}

/// Step-wise area under precision–recall: Σ (Rᵢ − Rᵢ₋₁)·Pᵢ over descending
/// distinct thresholds.
pub fn aupr(data: &LabeledScores) -> Result<f64> {
    let pos = data.positives() as u64;
    if pos == 0 {
        return Err(Error::Degenerate("AUPR needs anomalous samples".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (_, p, n) in descending_groups(&data.scores, &data.labels) {
        tp += p;
        fp += n;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Best F1 of the anomalous class and the smallest threshold reaching it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Max {
    pub score: f64,
    pub threshold: f64,
}

pub(crate) fn f1_max_raw(scores: &[f64], labels: &[bool]) -> Result<F1Max> {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    if pos == 0 {
        return Err(Error::Degenerate("F1 needs anomalous samples".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    // best F1 kept as the exact fraction 2·tp / (tp + fp + pos)
    let mut best: Option<(u64, u64, f64)> = None;
    for (s, p, n) in descending_groups(scores, labels) {
        tp += p;
        fp += n;
        let (num, den) = (2 * tp, tp + fp + pos);
        let better = match best {
            None => true,
            Some((bn, bd, _)) => u128::from(num) * u128::from(bd) >= u128::from(bn) * u128::from(den),
        };
        if better {
            best = Some((num, den, s));
        }
    }
    let (num, den, threshold) = best.expect("non-empty input");
    Ok(F1Max {
        score: num as f64 / den as f64,
        threshold,
    })
}

/// Maximum F1 over thresholds `score ≥ t` at every distinct score.
pub fn f1_max(data: &LabeledScores) -> Result<F1Max> {
    f1_max_raw(&data.scores, &data.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(scores: &[f64], labels: &[bool]) -> LabeledScores {
        LabeledScores::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    const A: bool = true;
    const N: bool = false;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&ls(&[0.2, 0.8], &[N, A])).unwrap(), 1.0);
        assert_eq!(auroc(&ls(&[0.5; 4], &[N, A, A, N])).unwrap(), 0.5);
        assert_eq!(auroc(&ls(&[0.9, 0.8, 0.7, 0.1], &[A, N, A, N])).unwrap(), 0.75);
        assert_eq!(auroc(&ls(&[0.1, 0.2], &[A, A])).unwrap_err().kind(), "degenerate_input");
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&ls(&[0.2, 0.8], &[N, A])).unwrap(), 1.0);
        assert_eq!(aupr(&ls(&[0.3, 0.9], &[A, N])).unwrap(), 0.5);
        assert_eq!(aupr(&ls(&[0.3, 0.9, 0.1], &[A, A, A])).unwrap(), 1.0);
        assert!(aupr(&ls(&[0.3], &[N])).is_err());
    }

    #[test]
    fn f1_examples() {
        let f = f1_max(&ls(&[0.9, 0.8, 0.7], &[A, N, A])).unwrap();
        assert!((f.score - 0.8).abs() < 1e-15);
        assert_eq!(f.threshold, 0.7);
        assert_eq!(
            f1_max(&ls(&[0.1, 0.9], &[N, A])).unwrap(),
            F1Max {
                score: 1.0,
                threshold: 0.9
            }
        );
        // F1 = 2/3 at both t = 0.9 and t = 0.6; the smaller threshold wins
        let tie = f1_max(&ls(&[0.9, 0.8, 0.7, 0.6], &[A, N, N, A])).unwrap();
        assert!((tie.score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tie.threshold, 0.6);
    }

    #[test]
    fn label_mismatch_is_a_contract_error() {
        assert!(LabeledScores::new(vec![0.1], vec![]).is_err());
        assert!(LabeledScores::new(vec![f64::NAN], vec![true]).is_err());
    }
}
