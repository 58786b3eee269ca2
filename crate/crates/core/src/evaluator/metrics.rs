//! Basic per-task metrics computed from predicted answers.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

/// Fraction of exact matches.
pub fn accuracy<T: Scalar>(pred: &[usize], truth: &[usize]) -> Result<T> {
    if pred.is_empty() {
        bail!(Metric, "accuracy of an empty prediction set");
    }
    if pred.len() != truth.len() {
        bail!(Metric, "{} predictions for {} targets", pred.len(), truth.len());
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(T::of_usize(hits) / T::of_usize(pred.len()))
}

/// Area under the ROC curve, i.e. the probability that a random positive
/// outscores a random negative. Tied pairs count one half.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    if scores.len() != labels.len() {
        bail!(Metric, "{} scores for {} labels", scores.len(), labels.len());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Metric, "NaN score");
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        bail!(Metric, "AUROC needs both classes ({n_pos} positives, {n_neg} negatives)");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Mann-Whitney U with mid-ranks for ties, counted in integer half-units.
    let mut pos_rank_x2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, midrank = (start + 1 + end) / 2
        let mid_x2 = (start + 1 + end) as u128;
        let pos_in_block = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        pos_rank_x2 += mid_x2 * pos_in_block;
        start = end;
    }
    let n_pos_u = n_pos as u128;
    let u_x2 = pos_rank_x2 - n_pos_u * (n_pos_u + 1);
    let denom = 2 * n_pos_u * n_neg as u128;
    Ok(T::of(u_x2 as f64) / T::of(denom as f64))
}

/// Fraction of positives scoring strictly above the `k`-th highest negative.
/// With fewer than `k` negatives every positive counts.
pub fn hits_at_k<T: Scalar>(pos: &[T], neg: &[T], k: usize) -> Result<T> {
    if k == 0 {
        bail!(Metric, "HITS@K needs K >= 1");
    }
    if pos.is_empty() {
        bail!(Metric, "HITS@K of an empty positive set");
    }
    if neg.len() < k {
        return Ok(T::one());
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let threshold = sorted[k - 1];
    let hits = pos.iter().filter(|&&p| p > threshold).count();
    Ok(T::of_usize(hits) / T::of_usize(pos.len()))
}

/// Basic metric used to fill a performance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BasicMetric {
    Accuracy,
    Auroc,
    HitsAt(usize),
}

impl BasicMetric {
    pub fn wants_scores(self) -> bool {
        !matches!(self, Self::Accuracy)
    }
}

impl fmt::Display for BasicMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Accuracy => f.write_str("accuracy"),
            Self::Auroc => f.write_str("auroc"),
            Self::HitsAt(k) => write!(f, "hits@{k}"),
        }
    }
}

impl FromStr for BasicMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "accuracy" | "acc" => Ok(Self::Accuracy),
            "auroc" | "auc" => Ok(Self::Auroc),
            _ => match lower.strip_prefix("hits@").map(str::parse) {
                Some(Ok(k)) if k > 0 => Ok(Self::HitsAt(k)),
                _ => bail!(Config, "unknown metric {s:?} (expected accuracy, auroc or hits@K)"),
            },
        }
    }
}

impl TryFrom<String> for BasicMetric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasicMetric> for String {
    fn from(m: BasicMetric) -> String {
        m.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy::<f64>(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy::<f64>(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy::<f64>(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert!(accuracy::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap(), 0.75);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn hits_examples() {
        assert_eq!(hits_at_k(&[0.8, 0.6], &[0.9, 0.7, 0.5], 2).unwrap(), 0.5);
        assert_eq!(hits_at_k(&[0.0], &[0.9], 5).unwrap(), 1.0);
        assert_eq!(hits_at_k(&[0.7], &[0.9, 0.7, 0.5], 2).unwrap(), 0.0);
        assert!(hits_at_k::<f64>(&[0.7], &[0.9], 0).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [BasicMetric::Accuracy, BasicMetric::Auroc, BasicMetric::HitsAt(50)] {
            assert_eq!(m.to_string().parse::<BasicMetric>().unwrap(), m);
        }
        assert!("hits@0".parse::<BasicMetric>().is_err());
    }

    proptest! {
        #[test]
        fn basic_metrics_ignore_query_order(
            data in proptest::collection::vec((0u8..4, any::<bool>()), 2..40),
            rot in 0usize..40,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 4.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let r = rot % data.len();
            let mut s2 = scores.clone();
            let mut l2 = labels.clone();
            s2.rotate_left(r);
            l2.rotate_left(r);
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&s2, &l2).unwrap());
        }
    }
}
