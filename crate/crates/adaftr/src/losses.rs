//! Training objectives: task BCE, regularization alignment, single-negative
//! contrast, in-batch InfoNCE with per-instance temperature, relatedness
//! supervision, temperature interpolation, and the combined objective.
//!
//! Backward companions return gradients with respect to the contrasted
//! representations; the temperature is a constant for those gradients except
//! in `learnable_scalar` mode, where the scalar receives the contrastive
//! gradient directly.

use crate::config::{AlignmentMode, LossConfig, RegKind, TemperatureMode};
use crate::datasets::Batch;
use crate::error::{Error, Result};
use crate::model::{AlignGrads, ForwardTrace, ModelParams};
use crate::numcore::{sigmoid, Tensor2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// All loss components of one batch. `l_align` is the configured alignment
/// loss (InfoNCE, single-negative contrast or regularization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ctr: f64,
    pub l_cvr: f64,
    pub l_rel: f64,
    pub l_align: f64,
    pub l_l2: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_ctr, self.l_cvr, self.l_rel, self.l_align, self.l_l2, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite component, for error reporting.
    pub fn offending_component(&self) -> Option<&'static str> {
        for (name, v) in [
            ("l_ctr", self.l_ctr),
            ("l_cvr", self.l_cvr),
            ("l_rel", self.l_rel),
            ("l_align", self.l_align),
            ("l_l2", self.l_l2),
        ] {
            if !v.is_finite() {
                return Some(name);
            }
        }
        None
    }
}

/// Mean binary cross-entropy. Predictions must already be clamped into (0, 1).
pub fn bce(y_hat: &[f64], y: &[f64]) -> f64 {
    let n = y_hat.len() as f64;
    y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / n
}

/// Mean squared or absolute elementwise difference, averaged over batch and width.
pub fn reg_align(h_ctr: &Tensor2, h_cvr: &Tensor2, kind: RegKind) -> Result<f64> {
    if h_ctr.rows() != h_cvr.rows() || h_ctr.cols() != h_cvr.cols() {
        return Err(Error::Dimension {
            op: "reg_align",
            detail: format!(
                "{}x{} vs {}x{}",
                h_ctr.rows(),
                h_ctr.cols(),
                h_cvr.rows(),
                h_cvr.cols()
            ),
        });
    }
    let n = (h_ctr.rows() * h_ctr.cols()) as f64;
    let sum: f64 = h_ctr
        .as_slice()
        .iter()
        .zip(h_cvr.as_slice())
        .map(|(&a, &b)| match kind {
            RegKind::Mse => (a - b) * (a - b),
            RegKind::Mae => (a - b).abs(),
        })
        .sum();
    Ok(sum / n)
}

fn reg_align_backward(h_ctr: &Tensor2, h_cvr: &Tensor2, kind: RegKind, scale: f64) -> (Tensor2, Tensor2) {
    let n = (h_ctr.rows() * h_ctr.cols()) as f64;
    let mut d_ctr = Tensor2::zeros(h_ctr.rows(), h_ctr.cols());
    let mut d_cvr = Tensor2::zeros(h_cvr.rows(), h_cvr.cols());
    for i in 0..h_ctr.as_slice().len() {
        let a = h_ctr.as_slice()[i];
        let b = h_cvr.as_slice()[i];
        let g = match kind {
            RegKind::Mse => 2.0 * (a - b) / n,
            RegKind::Mae => {
                if a > b {
                    1.0 / n
                } else if a < b {
                    -1.0 / n
                } else {
                    0.0
                }
            }
        } * scale;
        d_ctr.as_mut_slice()[i] = g;
        d_cvr.as_mut_slice()[i] = -g;
    }
    (d_ctr, d_cvr)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Single-negative contrast: mean of `-log sigmoid(s_pos - s_neg)` with the
/// negative drawn from the same batch. Zero for a batch of one, where no
/// in-batch negative exists.
pub fn scl(h_ctr: &Tensor2, h_cvr: &Tensor2, neg_idx: &[usize]) -> Result<f64> {
    let b = h_ctr.rows();
    if b <= 1 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for r in 0..b {
        let n = neg_idx[r];
        if n == r || n >= b {
            return Err(Error::Config(format!("invalid negative index {} for row {}", n, r)));
        }
        let diff = dot(h_ctr.row(r), h_cvr.row(r)) - dot(h_ctr.row(r), h_cvr.row(n));
        acc += -sigmoid(diff).ln();
    }
    Ok(acc / b as f64)
}

fn scl_backward(
    h_ctr: &Tensor2,
    h_cvr: &Tensor2,
    neg_idx: &[usize],
    scale: f64,
) -> (Tensor2, Tensor2) {
    let b = h_ctr.rows();
    let mut d_ctr = Tensor2::zeros(h_ctr.rows(), h_ctr.cols());
    let mut d_cvr = Tensor2::zeros(h_cvr.rows(), h_cvr.cols());
    if b <= 1 {
        return (d_ctr, d_cvr);
    }
    for r in 0..b {
        let n = neg_idx[r];
        let diff = dot(h_ctr.row(r), h_cvr.row(r)) - dot(h_ctr.row(r), h_cvr.row(n));
        let g = (sigmoid(diff) - 1.0) * scale / b as f64;
        for j in 0..h_ctr.cols() {
            d_ctr.row_mut(r)[j] += g * (h_cvr.get(r, j) - h_cvr.get(n, j));
            d_cvr.row_mut(r)[j] += g * h_ctr.get(r, j);
            d_cvr.row_mut(n)[j] -= g * h_ctr.get(r, j);
        }
    }
    (d_ctr, d_cvr)
}

/// In-batch InfoNCE with a per-instance temperature. For row `r` the
/// similarity `s_rr' = h_r_ctr . h_r'_cvr` and every logit in row `r` is
/// divided by `tau[r]`; the denominator includes the positive pair.
/// Computed with max-subtracted log-sum-exp; the mean over the batch is
/// returned.
pub fn infonce(h_ctr: &Tensor2, h_cvr: &Tensor2, tau: &[f64]) -> Result<f64> {
    let b = h_ctr.rows();
    if tau.iter().any(|&t| t <= 0.0) {
        return Err(Error::Config("infonce temperature must be > 0".into()));
    }
    let mut acc = 0.0;
    for r in 0..b {
        let logits: Vec<f64> = (0..b).map(|c| dot(h_ctr.row(r), h_cvr.row(c)) / tau[r]).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
        acc += lse - logits[r];
    }
    Ok(acc / b as f64)
}

/// Gradients of the InfoNCE mean w.r.t. both representation matrices, plus
/// the gradient on a shared scalar temperature (zero unless requested).
fn infonce_backward(
    h_ctr: &Tensor2,
    h_cvr: &Tensor2,
    tau: &[f64],
    scale: f64,
    want_tau_grad: bool,
) -> (Tensor2, Tensor2, f64) {
    let b = h_ctr.rows();
    let mut d_ctr = Tensor2::zeros(h_ctr.rows(), h_ctr.cols());
    let mut d_cvr = Tensor2::zeros(h_cvr.rows(), h_cvr.cols());
    let mut d_tau = 0.0;
    let bf = b as f64;
    for r in 0..b {
        let sims: Vec<f64> = (0..b).map(|c| dot(h_ctr.row(r), h_cvr.row(c))).collect();
        let logits: Vec<f64> = sims.iter().map(|&s| s / tau[r]).collect();
        let probs = crate::numcore::softmax(&logits);
        for c in 0..b {
            let d_logit = (probs[c] - f64::from(u8::from(c == r))) / bf * scale;
            let w = d_logit / tau[r];
            for j in 0..h_ctr.cols() {
                d_ctr.row_mut(r)[j] += w * h_cvr.get(c, j);
                d_cvr.row_mut(c)[j] += w * h_ctr.get(r, j);
            }
            if want_tau_grad {
                // d logit / d tau = -s / tau^2 for a shared scalar tau
                d_tau += d_logit * (-sims[c] / (tau[r] * tau[r]));
            }
        }
    }
    (d_ctr, d_cvr, d_tau)
}

/// `y_rel = 1` iff the click and conversion labels agree.
pub fn relatedness_label(y_ctr: &[f64], y_cvr: &[f64]) -> Vec<f64> {
    y_ctr
        .iter()
        .zip(y_cvr)
        .map(|(&a, &b)| f64::from(u8::from(a == b)))
        .collect()
}

/// Per-instance temperature. Adaptive mode interpolates linearly:
/// `tau_r = (tau_U - tau_L) * (1 - y_rel) + tau_L`.
pub fn temperature(y_rel: &[f64], cfg: &LossConfig, temp_scalar: f64) -> Result<Vec<f64>> {
    match cfg.temperature_mode {
        TemperatureMode::Adaptive => Ok(y_rel
            .iter()
            .map(|&y| (cfg.tau_upper - cfg.tau_lower) * (1.0 - y) + cfg.tau_lower)
            .collect()),
        TemperatureMode::Fixed => Ok(vec![cfg.fixed_tau; y_rel.len()]),
        TemperatureMode::LearnableScalar => {
            let t = temp_scalar.clamp(cfg.tau_lower, cfg.tau_upper);
            Ok(vec![t; y_rel.len()])
        }
    }
}

/// Deterministic per-step negative indices for the single-negative contrast:
/// uniform over the batch excluding the instance itself.
pub fn sample_negatives(batch_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch_size)
        .map(|r| {
            if batch_size <= 1 {
                0
            } else {
                let mut n = rng.gen_range(0..batch_size - 1);
                if n >= r {
                    n += 1;
                }
                n
            }
        })
        .collect()
}

fn alignment_loss(trace: &ForwardTrace, cfg: &LossConfig, neg_idx: &[usize]) -> Result<f64> {
    let (h_ctr, h_cvr) = trace.contrast_pair(cfg.contrast_layer);
    match cfg.alignment_mode {
        AlignmentMode::None => Ok(0.0),
        AlignmentMode::Reg => reg_align(h_ctr, h_cvr, cfg.reg_kind),
        AlignmentMode::Scl => scl(h_ctr, h_cvr, neg_idx),
        AlignmentMode::InfoNce => infonce(h_ctr, h_cvr, &trace.tau),
    }
}

/// Assembles every component of the training objective:
/// `L = L_ctr + L_cvr + alpha*L_rel + beta*L_align + lambda*L_l2`.
pub fn total_loss(
    trace: &ForwardTrace,
    batch: &Batch,
    cfg: &LossConfig,
    params: &ModelParams,
    neg_idx: &[usize],
) -> Result<LossBreakdown> {
    let l_ctr = bce(&trace.tower_ctr.y_hat, &batch.y_ctr);
    let l_cvr = bce(&trace.tower_cvr.y_hat, &batch.y_cvr);
    let y_rel = relatedness_label(&batch.y_ctr, &batch.y_cvr);
    let l_rel = bce(&trace.y_rel, &y_rel);
    let l_align = alignment_loss(trace, cfg, neg_idx)?;
    let l_l2 = params.l2_penalty();
    let l_total = l_ctr + l_cvr + cfg.alpha * l_rel + cfg.beta * l_align + cfg.lambda * l_l2;
    Ok(LossBreakdown { l_ctr, l_cvr, l_rel, l_align, l_l2, l_total })
}

/// Gradient of `beta * L_align` w.r.t. the contrast-layer representations,
/// plus the learnable-scalar temperature gradient when that mode is active.
/// Returns `None` when the alignment mode contributes no gradient.
pub fn align_backward(
    trace: &ForwardTrace,
    cfg: &LossConfig,
    neg_idx: &[usize],
) -> Result<(Option<AlignGrads>, f64)> {
    if cfg.alignment_mode == AlignmentMode::None || cfg.beta == 0.0 {
        return Ok((None, 0.0));
    }
    let (h_ctr, h_cvr) = trace.contrast_pair(cfg.contrast_layer);
    let (d_ctr, d_cvr, d_tau) = match cfg.alignment_mode {
        AlignmentMode::None => unreachable!(),
        AlignmentMode::Reg => {
            let (a, b) = reg_align_backward(h_ctr, h_cvr, cfg.reg_kind, cfg.beta);
            (a, b, 0.0)
        }
        AlignmentMode::Scl => {
            let (a, b) = scl_backward(h_ctr, h_cvr, neg_idx, cfg.beta);
            (a, b, 0.0)
        }
        AlignmentMode::InfoNce => {
            let want_tau = cfg.temperature_mode == TemperatureMode::LearnableScalar;
            infonce_backward(h_ctr, h_cvr, &trace.tau, cfg.beta, want_tau)
        }
    };
    Ok((
        Some(AlignGrads { layer: cfg.contrast_layer, d_h_ctr: d_ctr, d_h_cvr: d_cvr }),
        d_tau,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{clamp_prob, finite_diff_grad, rel_err};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn bce_known_values() {
        assert!((bce(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        let near_one = clamp_prob(1.0);
        assert!(bce(&[near_one], &[1.0]) < 2e-7);
    }

    #[test]
    fn bce_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y_hat: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..16).map(|_| f64::from(rng.gen::<bool>())).collect();
        let mut acc = 0.0;
        for i in 0..16 {
            acc += -(y[i] * y_hat[i].ln() + (1.0 - y[i]) * (1.0 - y_hat[i]).ln());
        }
        assert!((bce(&y_hat, &y) - acc / 16.0).abs() < 1e-12);
    }

    #[test]
    fn bce_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = clamp_prob(rng.gen());
            let y = f64::from(rng.gen::<bool>());
            assert!(bce(&[p], &[y]) >= 0.0);
        }
    }

    #[test]
    fn reg_align_values() {
        let a = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(reg_align(&a, &a, RegKind::Mse).unwrap(), 0.0);
        assert_eq!(reg_align(&a, &b, RegKind::Mse).unwrap(), 4.0);
        assert_eq!(reg_align(&a, &b, RegKind::Mae).unwrap(), 2.0);
    }

    #[test]
    fn reg_align_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 3, 4);
        let mut acc = 0.0;
        for i in 0..12 {
            acc += (a.as_slice()[i] - b.as_slice()[i]).powi(2);
        }
        assert!((reg_align(&a, &b, RegKind::Mse).unwrap() - acc / 12.0).abs() < 1e-12);
    }

    #[test]
    fn scl_equal_dots_is_ln2() {
        // all rows identical: positive and negative dot products coincide
        let h = Tensor2::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let loss = scl(&h, &h, &[1, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn scl_saturates_when_positive_dominates() {
        let h_ctr = Tensor2::from_rows(&[vec![10.0], vec![10.0]]).unwrap();
        let h_cvr = Tensor2::from_rows(&[vec![2.0], vec![0.0]]).unwrap();
        // row 0: pos 20, neg 0; row 1: pos 0, neg 20
        let loss_r0 = -sigmoid(20.0).ln();
        assert!(loss_r0 < 1e-8);
    }

    #[test]
    fn scl_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 4, 3);
        let neg = sample_negatives(4, 99);
        let mut acc = 0.0;
        for r in 0..4 {
            let pos: f64 = (0..3).map(|j| a.get(r, j) * b.get(r, j)).sum();
            let ngv: f64 = (0..3).map(|j| a.get(r, j) * b.get(neg[r], j)).sum();
            acc += -sigmoid(pos - ngv).ln();
        }
        assert!((scl(&a, &b, &neg).unwrap() - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn infonce_batch_of_one_is_zero() {
        let a = Tensor2::from_rows(&[vec![0.3, -0.4]]).unwrap();
        let b = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(infonce(&a, &b, &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn infonce_identical_rows_is_ln_b() {
        for b_size in [2usize, 4, 7] {
            let row = vec![0.7, -0.2, 0.1];
            let a = Tensor2::from_rows(&vec![row.clone(); b_size]).unwrap();
            let loss = infonce(&a, &a, &vec![0.3; b_size]).unwrap();
            assert!((loss - (b_size as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn infonce_matches_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 4, 3);
        let tau: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
        // direct two-loop log-sum-exp oracle
        let mut acc = 0.0;
        for r in 0..4 {
            let mut logits = Vec::new();
            for c in 0..4 {
                let s: f64 = (0..3).map(|j| a.get(r, j) * b.get(c, j)).sum();
                logits.push(s / tau[r]);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
            acc += lse - logits[r];
        }
        assert!((infonce(&a, &b, &tau).unwrap() - acc / 4.0).abs() < 1e-10);
    }

    #[test]
    fn infonce_rejects_nonpositive_tau() {
        let a = Tensor2::zeros(2, 2);
        assert!(infonce(&a, &a, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn infonce_per_instance_terms_nonnegative() {
        // positive pair is in the denominator, so lse >= positive logit
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let b_size = rng.gen_range(1..6);
            let a = rand_tensor(&mut rng, b_size, 3);
            let b = rand_tensor(&mut rng, b_size, 3);
            let tau: Vec<f64> = (0..b_size).map(|_| rng.gen_range(0.05..1.0)).collect();
            assert!(infonce(&a, &b, &tau).unwrap() >= 0.0);
        }
    }

    #[test]
    fn infonce_permutation_equivariance_uniform_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, 5, 3);
        let b = rand_tensor(&mut rng, 5, 3);
        let tau = vec![0.2; 5];
        let base = infonce(&a, &b, &tau).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let pa = Tensor2::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pb = Tensor2::from_rows(&perm.iter().map(|&i| b.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        assert!((infonce(&pa, &pb, &tau).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn infonce_backward_matches_finite_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_tensor(&mut rng, 3, 2);
        let b = rand_tensor(&mut rng, 3, 2);
        let tau: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (da, db, _) = infonce_backward(&a, &b, &tau, 1.0, false);
        let tau2 = tau.clone();
        let fd_a = finite_diff_grad(
            |x| infonce(&Tensor2::new(3, 2, x.to_vec()).unwrap(), &b, &tau2),
            a.as_slice(),
            1e-6,
        )
        .unwrap();
        for (x, y) in da.as_slice().iter().zip(&fd_a) {
            assert!(rel_err(*x, *y) < 1e-6, "{} vs {}", x, y);
        }
        let fd_b = finite_diff_grad(
            |x| infonce(&a, &Tensor2::new(3, 2, x.to_vec()).unwrap(), &tau2),
            b.as_slice(),
            1e-6,
        )
        .unwrap();
        for (x, y) in db.as_slice().iter().zip(&fd_b) {
            assert!(rel_err(*x, *y) < 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn infonce_scalar_tau_gradient_matches_finite_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 4, 3);
        let t0 = 0.4;
        let (_, _, d_tau) = infonce_backward(&a, &b, &vec![t0; 4], 1.0, true);
        let fd = finite_diff_grad(|x| infonce(&a, &b, &vec![x[0]; 4]), &[t0], 1e-6).unwrap();
        assert!(rel_err(d_tau, fd[0]) < 1e-6, "{} vs {}", d_tau, fd[0]);
    }

    #[test]
    fn scl_backward_matches_finite_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 4, 3);
        let neg = sample_negatives(4, 5);
        let (da, db) = scl_backward(&a, &b, &neg, 1.0);
        let fd_a = finite_diff_grad(
            |x| scl(&Tensor2::new(4, 3, x.to_vec()).unwrap(), &b, &neg),
            a.as_slice(),
            1e-6,
        )
        .unwrap();
        for (x, y) in da.as_slice().iter().zip(&fd_a) {
            assert!(rel_err(*x, *y) < 1e-6);
        }
        let fd_b = finite_diff_grad(
            |x| scl(&a, &Tensor2::new(4, 3, x.to_vec()).unwrap(), &neg),
            b.as_slice(),
            1e-6,
        )
        .unwrap();
        for (x, y) in db.as_slice().iter().zip(&fd_b) {
            assert!(rel_err(*x, *y) < 1e-6);
        }
    }

    #[test]
    fn reg_backward_matches_finite_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [RegKind::Mse, RegKind::Mae] {
            let a = rand_tensor(&mut rng, 3, 4);
            let b = rand_tensor(&mut rng, 3, 4);
            let (da, _) = reg_align_backward(&a, &b, kind, 1.0);
            let fd_a = finite_diff_grad(
                |x| reg_align(&Tensor2::new(3, 4, x.to_vec()).unwrap(), &b, kind),
                a.as_slice(),
                1e-6,
            )
            .unwrap();
            for (x, y) in da.as_slice().iter().zip(&fd_a) {
                assert!(rel_err(*x, *y) < 1e-5);
            }
        }
    }

    #[test]
    fn relatedness_label_truth_table() {
        assert_eq!(relatedness_label(&[1.0], &[1.0]), vec![1.0]);
        assert_eq!(relatedness_label(&[1.0], &[0.0]), vec![0.0]);
        assert_eq!(relatedness_label(&[0.0], &[0.0]), vec![1.0]);
        assert_eq!(relatedness_label(&[0.0], &[1.0]), vec![0.0]);
    }

    #[test]
    fn relatedness_label_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = f64::from(rng.gen::<bool>());
            let b = f64::from(rng.gen::<bool>());
            assert_eq!(relatedness_label(&[a], &[b]), relatedness_label(&[b], &[a]));
        }
    }

    #[test]
    fn temperature_endpoints_and_midpoint() {
        let cfg = LossConfig::default(); // tau in [0.05, 1]
        let tau = temperature(&[1.0, 0.0, 0.5], &cfg, 0.5).unwrap();
        assert_eq!(tau[0], 0.05);
        assert_eq!(tau[1], 1.0);
        assert!((tau[2] - 0.525).abs() < 1e-15);
    }

    #[test]
    fn temperature_strictly_decreasing_in_relatedness() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            if a == b {
                continue;
            }
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            let t = temperature(&[hi, lo], &cfg, 0.5).unwrap();
            assert!(t[0] < t[1]);
        }
    }

    #[test]
    fn temperature_fixed_and_learnable() {
        let mut cfg = LossConfig::default();
        cfg.temperature_mode = TemperatureMode::Fixed;
        cfg.fixed_tau = 0.3;
        assert_eq!(temperature(&[0.1, 0.9], &cfg, 0.5).unwrap(), vec![0.3, 0.3]);
        cfg.temperature_mode = TemperatureMode::LearnableScalar;
        // scalar clipped into [tau_lower, tau_upper]
        assert_eq!(temperature(&[0.5], &cfg, 3.0).unwrap(), vec![1.0]);
        assert_eq!(temperature(&[0.5], &cfg, 0.4).unwrap(), vec![0.4]);
    }

    #[test]
    fn negatives_never_self_and_deterministic() {
        for b in [2usize, 3, 17] {
            let n1 = sample_negatives(b, 7);
            let n2 = sample_negatives(b, 7);
            assert_eq!(n1, n2);
            for (r, &n) in n1.iter().enumerate() {
                assert_ne!(r, n);
                assert!(n < b);
            }
        }
    }
}
