//! Training loop with split parameter updates: the relatedness network is
//! driven only by the relatedness supervision loss, the base parameters by
//! the task, alignment and L2 losses. Both gradient sets are computed from
//! one shared forward trace before either update is applied.
//!
//! Also houses binary checkpoints and the finite-difference gradient-check
//! harness.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TemperatureMode, TrainConfig};
use crate::datasets::{batch_iter, Batch, Dataset, Schema};
use crate::error::{Error, Result};
use crate::losses::{align_backward, relatedness_label, sample_negatives, total_loss, LossBreakdown};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    init_params, model_backward_omega, model_backward_theta, model_forward, ModelParams,
    TEMP_SCALAR,
};
use crate::numcore::{adam_step, finite_diff_grad, rel_err, AdamHyper, AdamState, Tensor2};

/// One training-step log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// One evaluation log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Both gradient sets of one step, taken at the pre-update parameters.
pub struct StepGradients {
    pub theta: BTreeMap<String, Tensor2>,
    pub omega: BTreeMap<String, Tensor2>,
    pub loss: LossBreakdown,
}

fn derive_step_seed(seed: u64, global_step: usize) -> u64 {
    seed.wrapping_add((global_step as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f))
}

fn derive_epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d))
}

/// Computes the relatedness-group and base-group gradients from one forward
/// trace.
///
/// Base group (Theta): gradient of `L_ctr + L_cvr + beta*L_align +
/// lambda*L_l2`, with the per-instance temperature treated as a constant and
/// no path through the relatedness branch.
///
/// Relatedness group (Omega): gradient of `alpha*L_rel` with the shared
/// representations treated as constants.
pub fn compute_gradients(
    params: &ModelParams,
    schema: &Schema,
    cfg: &TrainConfig,
    batch: &Batch,
    step_seed: u64,
) -> Result<StepGradients> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Train("empty batch".into()));
    }
    let trace = model_forward(params, schema, batch, cfg, None)?;
    let neg_idx = sample_negatives(b, step_seed);
    let loss = total_loss(&trace, batch, &cfg.loss, params, &neg_idx)?;
    if !loss.is_finite() {
        let name = loss.offending_component().unwrap_or("l_total");
        return Err(Error::Train(format!("non-finite loss component {}", name)));
    }

    let bf = b as f64;
    let d_logit_ctr: Vec<f64> = trace
        .tower_ctr
        .y_hat
        .iter()
        .zip(&batch.y_ctr)
        .map(|(&p, &y)| (p - y) / bf)
        .collect();
    let d_logit_cvr: Vec<f64> = trace
        .tower_cvr
        .y_hat
        .iter()
        .zip(&batch.y_cvr)
        .map(|(&p, &y)| (p - y) / bf)
        .collect();

    let (align, mut d_temp_scalar) = align_backward(&trace, &cfg.loss, &neg_idx)?;
    if cfg.loss.temperature_mode == TemperatureMode::LearnableScalar {
        // clip subgradient: a scalar outside the temperature range is clamped
        // in the forward pass and receives no gradient
        let raw = params.temp_scalar();
        if raw < cfg.loss.tau_lower || raw > cfg.loss.tau_upper {
            d_temp_scalar = 0.0;
        }
    } else {
        d_temp_scalar = 0.0;
    }

    let grads = model_backward_theta(
        params,
        schema,
        &cfg.model,
        batch,
        &trace,
        &d_logit_ctr,
        &d_logit_cvr,
        align.as_ref(),
        d_temp_scalar,
    )?;

    // fold in the L2 term and densify: every base tensor gets a gradient
    let mut theta = BTreeMap::new();
    for name in params.theta_names() {
        let p = params.get(&name);
        let mut g = match grads.get(&name) {
            Some(t) => t.clone(),
            None => Tensor2::zeros(p.rows(), p.cols()),
        };
        for (gv, &pv) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *gv += cfg.loss.lambda * pv;
        }
        theta.insert(name, g);
    }

    let y_rel_label = relatedness_label(&batch.y_ctr, &batch.y_cvr);
    let d_logit_rel: Vec<f64> = trace
        .y_rel
        .iter()
        .zip(&y_rel_label)
        .map(|(&p, &y)| cfg.loss.alpha * (p - y) / bf)
        .collect();
    let omega_grads = model_backward_omega(params, &cfg.model, &trace, &d_logit_rel)?;
    let mut omega = BTreeMap::new();
    for name in params.omega_names() {
        let p = params.get(&name);
        let g = match omega_grads.get(&name) {
            Some(t) => t.clone(),
            None => Tensor2::zeros(p.rows(), p.cols()),
        };
        omega.insert(name, g);
    }

    Ok(StepGradients { theta, omega, loss })
}

/// Optimizer state: one Adam accumulator per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct OptState {
    pub adam: BTreeMap<String, AdamState>,
}

impl OptState {
    fn entry(&mut self, name: &str, len: usize) -> &mut AdamState {
        self.adam.entry(name.to_string()).or_insert_with(|| AdamState::new(len))
    }
}

/// One optimization step. Gradients for both groups are taken at the
/// pre-update parameter values; the update order cannot matter.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptState,
    schema: &Schema,
    cfg: &TrainConfig,
    batch: &Batch,
    step_seed: u64,
) -> Result<LossBreakdown> {
    let g = compute_gradients(params, schema, cfg, batch, step_seed)?;
    let hp = AdamHyper::with_lr(cfg.lr);
    for (name, grad) in g.theta.iter().chain(g.omega.iter()) {
        let state = opt.entry(name, grad.as_slice().len());
        let p = params.get_mut(name);
        adam_step(name, p.as_mut_slice(), grad.as_slice(), state, hp)?;
    }
    Ok(g.loss)
}

/// Runs the full training loop from freshly initialized parameters.
pub fn train(
    dataset: &Dataset,
    eval_dataset: Option<&Dataset>,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let params = init_params(&cfg.model, &dataset.schema)?;
    train_from(params, dataset, eval_dataset, cfg, log_path)
}

/// Training loop from given starting parameters (fresh init or warm start).
pub fn train_from(
    mut params: ModelParams,
    dataset: &Dataset,
    eval_dataset: Option<&Dataset>,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(Error::Train("training dataset is empty".into()));
    }
    let mut opt = OptState::default();
    let mut history = TrainHistory::default();
    let mut log = match log_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::Checkpoint {
            path: p.display().to_string(),
            msg: format!("cannot create log: {}", e),
        })?),
        None => None,
    };
    let write_line = |log: &mut Option<std::fs::File>, value: &serde_json::Value| -> Result<()> {
        if let Some(f) = log {
            writeln!(f, "{}", value)?;
        }
        Ok(())
    };

    let mut global_step = 0usize;
    let mut best_cvr_auc = f64::NEG_INFINITY;
    let mut evals_since_best = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let shuffle_seed = derive_epoch_seed(cfg.seed, epoch);
        for batch in batch_iter(dataset, cfg.batch_size, shuffle_seed, true)? {
            global_step += 1;
            let step_seed = derive_step_seed(cfg.seed, global_step);
            let loss = train_step(&mut params, &mut opt, &dataset.schema, cfg, &batch, step_seed)?;
            let record = StepRecord { step: global_step, epoch, loss };
            write_line(&mut log, &serde_json::to_value(&record)?)?;
            history.steps.push(record);
        }
        if let Some(path) = &cfg.checkpoint_path {
            save_checkpoint(&params, &cfg.model, path)?;
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            if let Some(eval_ds) = eval_dataset {
                let report = evaluate(&params, &eval_ds.schema, eval_ds, cfg)?;
                let record = EvalRecord { epoch, report };
                write_line(&mut log, &serde_json::to_value(&record)?)?;
                let cvr = record.report.auc_cvr.unwrap_or(f64::NEG_INFINITY);
                history.evals.push(record);
                if cvr > best_cvr_auc {
                    best_cvr_auc = cvr;
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if let Some(patience) = cfg.patience {
                        if evals_since_best >= patience {
                            break 'epochs;
                        }
                    }
                }
            }
        }
    }
    Ok((params, history))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ADFT";
const CHECKPOINT_VERSION: u32 = 1;
const CONFIG_ENTRY: &str = "__config__";

fn config_to_kv(cfg: &ModelConfig) -> String {
    let sizes = |v: &[usize]| {
        v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
    };
    let backbone = match cfg.backbone {
        crate::config::Backbone::SingleDnn => "single_dnn",
        crate::config::Backbone::SharedBottom => "shared_bottom",
        crate::config::Backbone::Mmoe => "mmoe",
    };
    let activation = match cfg.activation {
        crate::numcore::Activation::Relu => "relu",
        crate::numcore::Activation::Sigmoid => "sigmoid",
    };
    format!(
        "backbone={}\nembed_dim={}\nexpert_count={}\ntower_hidden_sizes={}\nrelatedness_hidden_sizes={}\nactivation={}\ninit_seed={}\n",
        backbone,
        cfg.embed_dim,
        cfg.expert_count,
        sizes(&cfg.tower_hidden_sizes),
        sizes(&cfg.relatedness_hidden_sizes),
        activation,
        cfg.init_seed
    )
}

fn config_from_kv(text: &str, path: &str) -> Result<ModelConfig> {
    let mut cfg = TrainConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint {
            path: path.to_string(),
            msg: format!("malformed config line '{}'", line),
        })?;
        cfg.apply_kv(k, v).map_err(|e| Error::Checkpoint {
            path: path.to_string(),
            msg: format!("bad config entry: {}", e),
        })?;
    }
    Ok(cfg.model)
}

/// Writes parameters and the model configuration to a binary checkpoint.
/// The format is byte-stable: little-endian throughout, tensors in sorted
/// name order, the configuration as a trailing text entry.
pub fn save_checkpoint(params: &ModelParams, cfg: &ModelConfig, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = params.names().count() as u32 + 1;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = config_to_kv(cfg);
    buf.extend_from_slice(&(CONFIG_ENTRY.len() as u32).to_le_bytes());
    buf.extend_from_slice(CONFIG_ENTRY.as_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    std::fs::write(path, &buf).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        msg: format!("write failed: {}", e),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint {
                path: self.path.clone(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint back into parameters plus the stored model config.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        msg: format!("read failed: {}", e),
    })?;
    let path_str = path.display().to_string();
    let mut r = Reader { buf: &bytes, pos: 0, path: path_str.clone() };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint { path: path_str, msg: "bad magic bytes".into() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            path: path_str,
            msg: format!("unsupported version {}", version),
        });
    }
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    let mut config = None;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Checkpoint {
            path: path_str.clone(),
            msg: "non-UTF-8 entry name".into(),
        })?;
        let rank = r.u32()? as usize;
        if name == CONFIG_ENTRY {
            let len = r.u32()? as usize;
            let text =
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint {
                    path: path_str.clone(),
                    msg: "non-UTF-8 config entry".into(),
                })?;
            config = Some(config_from_kv(&text, &path_str)?);
            continue;
        }
        if rank != 2 {
            return Err(Error::Checkpoint {
                path: path_str,
                msg: format!("unsupported rank {} for '{}'", rank, name),
            });
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let t = Tensor2::new(rows, cols, data).map_err(|e| Error::Checkpoint {
            path: path_str.clone(),
            msg: format!("bad tensor '{}': {}", name, e),
        })?;
        tensors.insert(name, t);
    }
    let config = config.ok_or_else(|| Error::Checkpoint {
        path: path_str.clone(),
        msg: "missing config entry".into(),
    })?;
    let mut params = init_params(&config, &dummy_schema_err(&config, &tensors, &path_str)?)?;
    for (name, t) in &tensors {
        if !params.contains(name) {
            return Err(Error::Checkpoint {
                path: path_str,
                msg: format!("unexpected parameter '{}'", name),
            });
        }
        let slot = params.get_mut(name);
        if slot.rows() != t.rows() || slot.cols() != t.cols() {
            return Err(Error::Checkpoint {
                path: path_str,
                msg: format!(
                    "shape mismatch for '{}': stored {}x{}, expected {}x{}",
                    name,
                    t.rows(),
                    t.cols(),
                    slot.rows(),
                    slot.cols()
                ),
            });
        }
        *slot = t.clone();
    }
    Ok((params, config))
}

/// Reconstructs a schema from the stored embedding tables so the parameter
/// set can be validated against the stored config.
fn dummy_schema_err(
    cfg: &ModelConfig,
    tensors: &BTreeMap<String, Tensor2>,
    path: &str,
) -> Result<Schema> {
    let prefix = match cfg.backbone {
        crate::config::Backbone::SingleDnn => "emb_ctr.",
        _ => "emb.",
    };
    let mut fields = Vec::new();
    for (name, t) in tensors {
        if let Some(field) = name.strip_prefix(prefix) {
            fields.push((field.to_string(), t.rows()));
        }
    }
    if fields.is_empty() {
        return Err(Error::Checkpoint {
            path: path.to_string(),
            msg: "no embedding tables found".into(),
        });
    }
    Schema::new(fields, true)
}

/// Reconstructs the field schema from the embedding tables of a loaded
/// parameter set. Field cardinality equals the table row count.
pub fn infer_schema(params: &ModelParams, cfg: &ModelConfig) -> Result<Schema> {
    let prefix = match cfg.backbone {
        crate::config::Backbone::SingleDnn => "emb_ctr.",
        _ => "emb.",
    };
    let mut fields = Vec::new();
    for (name, t) in params.iter() {
        if let Some(field) = name.strip_prefix(prefix) {
            fields.push((field.to_string(), t.rows()));
        }
    }
    if fields.is_empty() {
        return Err(Error::Config("no embedding tables in parameter set".into()));
    }
    Schema::new(fields, true)
}

/// Verifies that loaded parameters match what `init_params` would create for
/// this config and schema: same names, same shapes.
pub fn check_shapes(params: &ModelParams, cfg: &ModelConfig, schema: &Schema) -> Result<()> {
    let reference = init_params(cfg, schema)?;
    let got: Vec<&String> = params.names().collect();
    let want: Vec<&String> = reference.names().collect();
    if got != want {
        return Err(Error::Config(format!(
            "parameter set mismatch: checkpoint has {} tensors, config expects {}",
            got.len(),
            want.len()
        )));
    }
    for name in want {
        let a = params.get(name);
        let b = reference.get(name);
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::Config(format!(
                "shape mismatch for '{}': {}x{} vs expected {}x{}",
                name,
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
    }
    Ok(())
}

/// Per-group result of one gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub passed: bool,
}

const GRAD_CHECK_THRESHOLD: f64 = 1e-4;
const GRAD_CHECK_EPS: f64 = 1e-5;

/// Compares analytic gradients for every base tensor and the whole
/// relatedness group against central finite differences on a seeded
/// micro-batch. The temperature is held at its trace value while base
/// parameters are perturbed, matching the stop-gradient contract; the
/// learnable scalar is the one exception since the temperature is its
/// direct function.
pub fn grad_check(cfg: &TrainConfig, schema: &Schema, batch: &Batch) -> Result<GradCheckReport> {
    grad_check_inner(cfg, schema, batch, false)
}

/// Variant with a deliberately corrupted analytic gradient, used as a
/// negative control for the harness itself.
pub fn grad_check_broken(
    cfg: &TrainConfig,
    schema: &Schema,
    batch: &Batch,
) -> Result<GradCheckReport> {
    grad_check_inner(cfg, schema, batch, true)
}

fn grad_check_inner(
    cfg: &TrainConfig,
    schema: &Schema,
    batch: &Batch,
    corrupt: bool,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut params = init_params(&cfg.model, schema)?;
    let step_seed = derive_step_seed(cfg.seed, 1);
    let neg_idx = sample_negatives(batch.len(), step_seed);

    // ReLU is nondifferentiable at zero and fresh zero biases leave many
    // pre-activations within the finite-difference step of the kink. Jitter
    // the biases until every pre-activation clears a safety margin.
    let margin = 100.0 * GRAD_CHECK_EPS;
    for attempt in 0..64u64 {
        let trace = model_forward(&params, schema, batch, cfg, None)?;
        let min_abs = trace
            .expert_pre
            .iter()
            .chain(&trace.bottom_pre_ctr)
            .chain(&trace.bottom_pre_cvr)
            .chain(&trace.tower_ctr.pre)
            .chain(&trace.tower_cvr.pre)
            .chain(&trace.rel_pre)
            .flat_map(|t| t.as_slice())
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
        if min_abs > margin {
            break;
        }
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt ^ 0xb5ad));
        for (name, t) in params.iter_mut() {
            if name.ends_with(".b") {
                for v in t.as_mut_slice() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
    }

    let base_trace = model_forward(&params, schema, batch, cfg, None)?;
    let frozen_tau = base_trace.tau.clone();
    let mut analytic = compute_gradients(&params, schema, cfg, batch, step_seed)?;
    if corrupt {
        let first = analytic.theta.values_mut().next().expect("non-empty parameter set");
        first.as_mut_slice()[0] = first.as_mut_slice()[0] * 2.0 + 0.5;
    }

    let theta_objective = |p: &ModelParams, tau: Option<&[f64]>| -> Result<f64> {
        let trace = model_forward(p, schema, batch, cfg, tau)?;
        let l = total_loss(&trace, batch, &cfg.loss, p, &neg_idx)?;
        Ok(l.l_ctr + l.l_cvr + cfg.loss.beta * l.l_align + cfg.loss.lambda * l.l_l2)
    };
    let omega_objective = |p: &ModelParams| -> Result<f64> {
        let trace = model_forward(p, schema, batch, cfg, Some(&frozen_tau))?;
        let l = total_loss(&trace, batch, &cfg.loss, p, &neg_idx)?;
        Ok(cfg.loss.alpha * l.l_rel)
    };

    let mut groups = Vec::new();
    for (name, grad) in &analytic.theta {
        // the learnable scalar feeds the temperature directly; everything
        // else is checked with the temperature frozen
        let unfreeze =
            name == TEMP_SCALAR && cfg.loss.temperature_mode == TemperatureMode::LearnableScalar;
        let values = params.get(name).as_slice().to_vec();
        let fd = finite_diff_grad(
            |x| {
                let mut p = params.clone();
                p.get_mut(name).as_mut_slice().copy_from_slice(x);
                theta_objective(&p, if unfreeze { None } else { Some(&frozen_tau) })
            },
            &values,
            GRAD_CHECK_EPS,
        )?;
        let worst = grad
            .as_slice()
            .iter()
            .zip(&fd)
            .map(|(&a, &b)| rel_err(a, b))
            .fold(0.0, f64::max);
        groups.push(GroupCheck { group: name.clone(), max_rel_err: worst });
    }

    let mut omega_worst = 0.0f64;
    for (name, grad) in &analytic.omega {
        let values = params.get(name).as_slice().to_vec();
        let fd = finite_diff_grad(
            |x| {
                let mut p = params.clone();
                p.get_mut(name).as_mut_slice().copy_from_slice(x);
                omega_objective(&p)
            },
            &values,
            GRAD_CHECK_EPS,
        )?;
        for (&a, &b) in grad.as_slice().iter().zip(&fd) {
            omega_worst = omega_worst.max(rel_err(a, b));
        }
    }
    groups.push(GroupCheck { group: "omega".into(), max_rel_err: omega_worst });

    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_err,
        threshold: GRAD_CHECK_THRESHOLD,
        passed: max_rel_err < GRAD_CHECK_THRESHOLD,
    })
}
