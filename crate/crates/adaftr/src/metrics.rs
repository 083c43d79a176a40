//! Ranking metrics: AUC via the Mann-Whitney rank-sum with average ranks
//! for ties, and per-user grouped AUC (GAUC) with unit user weights.
//! Single-class user groups are skipped and counted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::datasets::{batch_iter, Dataset, Schema};
use crate::error::{Error, Result};
use crate::losses::{relatedness_label, total_loss};
use crate::model::{model_forward, ModelParams};

/// Evaluation summary for one dataset snapshot. Metric values are stored in
/// `[0, 1]`; callers multiply by 100 for percentage display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_ctr: Option<f64>,
    pub gauc_ctr: Option<f64>,
    pub auc_cvr: Option<f64>,
    pub gauc_cvr: Option<f64>,
    pub evaluated_users_ctr: usize,
    pub evaluated_users_cvr: usize,
    pub skipped_users_ctr: usize,
    pub skipped_users_cvr: usize,
    pub loss_ctr: f64,
    pub loss_cvr: f64,
    pub loss_rel: f64,
    pub records: usize,
}

impl MetricsReport {
    /// Copy with the four ranking metrics multiplied by 100.
    pub fn in_percent(&self) -> MetricsReport {
        let mut out = self.clone();
        for v in [&mut out.auc_ctr, &mut out.gauc_ctr, &mut out.auc_cvr, &mut out.gauc_cvr] {
            if let Some(x) = v.as_mut() {
                *x *= 100.0;
            }
        }
        out
    }
}

/// Average ranks (1-based) with ties sharing the mean of their rank span.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve. Equivalent to the probability that a positive
/// outranks a negative, counting ties as one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "auc length mismatch: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("auc scores contain non-finite values".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "auc undefined: {} positives, {} negatives",
            n_pos, n_neg
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l > 0.5)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Grouped AUC: mean of per-user AUC with unit weights. Users whose labels
/// are single-class are skipped; the skip count is returned alongside.
/// Errors if every user is skipped.
pub fn gauc(scores: &[f64], labels: &[f64], user_ids: &[u64]) -> Result<(f64, usize, usize)> {
    if scores.is_empty() {
        return Err(Error::Metric("gauc on empty input".into()));
    }
    if scores.len() != labels.len() || scores.len() != user_ids.len() {
        return Err(Error::Metric("gauc input length mismatch".into()));
    }
    // BTreeMap fixes the reduction order by user id
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &u) in user_ids.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for idxs in groups.values() {
        let s: Vec<f64> = idxs.iter().map(|&i| scores[i]).collect();
        let l: Vec<f64> = idxs.iter().map(|&i| labels[i]).collect();
        match auc(&s, &l) {
            Ok(a) => {
                sum += a;
                evaluated += 1;
            }
            Err(Error::Metric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(Error::Metric(format!(
            "gauc undefined: all {} users single-class",
            skipped
        )));
    }
    Ok((sum / evaluated as f64, evaluated, skipped))
}

/// Concatenated model predictions over a dataset, in stable record order.
pub struct Predictions {
    pub y_hat_ctr: Vec<f64>,
    pub y_hat_cvr: Vec<f64>,
    pub y_ctr: Vec<f64>,
    pub y_cvr: Vec<f64>,
    pub user_ids: Vec<u64>,
    pub loss_ctr: f64,
    pub loss_cvr: f64,
    pub loss_rel: f64,
}

/// Runs batched forward passes without updates and concatenates predictions.
pub fn predict(
    params: &ModelParams,
    schema: &Schema,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Predictions> {
    let n = dataset.records.len();
    let mut out = Predictions {
        y_hat_ctr: Vec::with_capacity(n),
        y_hat_cvr: Vec::with_capacity(n),
        y_ctr: Vec::with_capacity(n),
        y_cvr: Vec::with_capacity(n),
        user_ids: Vec::with_capacity(n),
        loss_ctr: 0.0,
        loss_cvr: 0.0,
        loss_rel: 0.0,
    };
    let mut seen = 0usize;
    for batch in batch_iter(dataset, cfg.batch_size, 0, false)? {
        let trace = model_forward(params, schema, &batch, cfg, None)?;
        let breakdown = total_loss(&trace, &batch, &cfg.loss, params, &[])?;
        let b = batch.y_ctr.len() as f64;
        out.loss_ctr += breakdown.l_ctr * b;
        out.loss_cvr += breakdown.l_cvr * b;
        out.loss_rel += breakdown.l_rel * b;
        out.y_hat_ctr.extend_from_slice(&trace.tower_ctr.y_hat);
        out.y_hat_cvr.extend_from_slice(&trace.tower_cvr.y_hat);
        out.y_ctr.extend_from_slice(&batch.y_ctr);
        out.y_cvr.extend_from_slice(&batch.y_cvr);
        out.user_ids.extend_from_slice(&batch.user_ids);
        seen += batch.y_ctr.len();
    }
    let nf = seen.max(1) as f64;
    out.loss_ctr /= nf;
    out.loss_cvr /= nf;
    out.loss_rel /= nf;
    let _ = relatedness_label(&out.y_ctr, &out.y_cvr);
    Ok(out)
}

/// Full evaluation pass. A metric that is undefined for one task (single
/// class) is reported as absent without aborting the other task.
pub fn evaluate(
    params: &ModelParams,
    schema: &Schema,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if dataset.records.is_empty() {
        return Err(Error::Metric("evaluate on empty dataset".into()));
    }
    let p = predict(params, schema, dataset, cfg)?;

    // optionally restrict the CVR population to clicked impressions
    let (cvr_scores, cvr_labels, cvr_users): (Vec<f64>, Vec<f64>, Vec<u64>) = if cfg
        .cvr_on_clicks_only
    {
        let mut s = Vec::new();
        let mut l = Vec::new();
        let mut u = Vec::new();
        for i in 0..p.y_ctr.len() {
            if p.y_ctr[i] > 0.5 {
                s.push(p.y_hat_cvr[i]);
                l.push(p.y_cvr[i]);
                u.push(p.user_ids[i]);
            }
        }
        (s, l, u)
    } else {
        (p.y_hat_cvr.clone(), p.y_cvr.clone(), p.user_ids.clone())
    };

    let auc_ctr = auc(&p.y_hat_ctr, &p.y_ctr).ok();
    let auc_cvr = auc(&cvr_scores, &cvr_labels).ok();
    let g_ctr = gauc(&p.y_hat_ctr, &p.y_ctr, &p.user_ids).ok();
    let g_cvr = if cvr_scores.is_empty() {
        None
    } else {
        gauc(&cvr_scores, &cvr_labels, &cvr_users).ok()
    };

    let total_users = {
        let mut u: Vec<u64> = p.user_ids.clone();
        u.sort_unstable();
        u.dedup();
        u.len()
    };
    let (gauc_ctr, evaluated_users_ctr, skipped_users_ctr) = match g_ctr {
        Some((g, e, s)) => (Some(g), e, s),
        None => (None, 0, total_users),
    };
    let cvr_total_users = {
        let mut u = cvr_users.clone();
        u.sort_unstable();
        u.dedup();
        u.len()
    };
    let (gauc_cvr, evaluated_users_cvr, skipped_users_cvr) = match g_cvr {
        Some((g, e, s)) => (Some(g), e, s),
        None => (None, 0, cvr_total_users),
    };

    Ok(MetricsReport {
        auc_ctr,
        gauc_ctr,
        auc_cvr,
        gauc_cvr,
        evaluated_users_ctr,
        evaluated_users_cvr,
        skipped_users_ctr,
        skipped_users_cvr,
        loss_ctr: p.loss_ctr,
        loss_cvr: p.loss_cvr,
        loss_rel: p.loss_rel,
        records: p.y_ctr.len(),
    })
}

/// O(n^2) pairwise-counting AUC, used as an independent oracle in tests.
#[doc(hidden)]
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l > 0.5)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l <= 0.5)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                acc += 1.0;
            } else if p == n {
                acc += 0.5;
            }
        }
    }
    Some(acc / (pos.len() * neg.len()) as f64)
}
