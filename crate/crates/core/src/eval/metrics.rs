//! Ranking metrics.

use crate::{Error, Result};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Computed from the rank sum in integer arithmetic (ranks are doubled so tie
/// averages stay integral), so the result is exactly the pairwise count
/// divided by the number of pairs.
pub fn compute_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension { what: "labels", expected: scores.len(), got: labels.len() });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Invalid(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the doubled average rank i+1+j.
        let shared = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += shared * positives;
        i = j;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Relative improvement over a reference AUC, in percent, measured against
/// the random-guess level of 0.5.
pub fn rela_impr(auc_measured: f64, auc_base: f64) -> Result<f64> {
    if auc_base == 0.5 {
        return Err(Error::DegenerateBase);
    }
    Ok(((auc_measured - 0.5) / (auc_base - 0.5) - 1.0) * 100.0)
}
