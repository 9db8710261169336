//! Ranking and calibration metrics.

use crate::error::{Error, Result};
use crate::train::bce_loss;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not binary")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("metric scores".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann–Whitney rank-sum statistic.
///
/// Tied scores share their average rank, which credits each tied
/// positive/negative pair with one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    // Ranks are 1-based; a tie group spanning ranks lo..=hi gets (lo + hi) / 2.
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        pos_rank_sum += avg_rank * positives as f64;
        start = end;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean binary cross-entropy of probabilities `scores` against `labels`.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("logloss of zero records".into()));
    }
    let total: f64 = scores.iter().zip(labels).map(|(&p, &y)| bce_loss(p, y)).sum();
    Ok(total / scores.len() as f64)
}
