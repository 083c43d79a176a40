//! Backbones (Single-DNN, Shared-Bottom, MMoE), task towers and the
//! relatedness prediction network, with exact analytic backward passes.
//!
//! Parameter partition: every tensor whose name starts with `rel.` belongs
//! to the relatedness group (Omega); everything else is a base parameter
//! (Theta). The two sets are disjoint and cover all parameters.

use crate::config::{Backbone, ModelConfig, TrainConfig};
use crate::datasets::{Batch, Schema};
use crate::error::{Error, Result};
use crate::numcore::{
    activation_backward, activation_forward, clamp_prob, embedding_backward, embedding_forward,
    linear_backward, linear_forward, sigmoid, softmax, Tensor2,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const TEMP_SCALAR: &str = "temp.scalar";
const OMEGA_PREFIX: &str = "rel.";

/// All learnable arrays, keyed by name. Iteration order is the sorted name
/// order, which fixes the deterministic reduction order everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor2>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> &Tensor2 {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{}'", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor2 {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter '{}'", name))
    }

    pub fn insert(&mut self, name: String, t: Tensor2) {
        self.tensors.insert(name, t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor2)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn is_omega(name: &str) -> bool {
        name.starts_with(OMEGA_PREFIX)
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.tensors.keys().filter(|n| !Self::is_omega(n)).cloned().collect()
    }

    pub fn omega_names(&self) -> Vec<String> {
        self.tensors.keys().filter(|n| Self::is_omega(n)).cloned().collect()
    }

    /// `0.5 * sum(theta^2)` over the base parameters only.
    pub fn l2_penalty(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|(n, _)| !Self::is_omega(n))
            .flat_map(|(_, t)| t.as_slice())
            .map(|&v| 0.5 * v * v)
            .sum()
    }

    /// Current value of the learnable temperature scalar.
    pub fn temp_scalar(&self) -> f64 {
        self.get(TEMP_SCALAR).get(0, 0)
    }
}

/// Gradients keyed like [`ModelParams`]; absent names mean zero gradient.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    pub tensors: BTreeMap<String, Tensor2>,
}

impl Grads {
    fn add_into(&mut self, name: &str, grad: Tensor2) {
        match self.tensors.get_mut(name) {
            Some(existing) => {
                for (a, b) in existing.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                    *a += b;
                }
            }
            None => {
                self.tensors.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.tensors.get(name)
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor2::new(rows, cols, data).expect("xavier shape")
}

fn embedding_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.gen_range(-0.05..0.05)).collect();
    Tensor2::new(rows, cols, data).expect("embedding shape")
}

fn mlp_layer_names(prefix: &str, l: usize) -> (String, String) {
    (format!("{}.l{}.w", prefix, l), format!("{}.l{}.b", prefix, l))
}

/// Draws all parameters for the configured architecture. Base parameters and
/// relatedness parameters come from separate seeded streams so the
/// relatedness network can be re-initialized independently.
pub fn init_params(cfg: &ModelConfig, schema: &Schema) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams { tensors: BTreeMap::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let e = cfg.embed_dim;
    let input_dim = schema.field_count() * e;
    let d = cfg.shared_output_dim();

    let add_embeddings = |params: &mut ModelParams, rng: &mut ChaCha8Rng, prefix: &str| {
        for (name, card) in &schema.fields {
            params.insert(format!("{}.{}", prefix, name), embedding_init(rng, *card, e));
        }
    };
    let add_linear = |params: &mut ModelParams, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize| {
        params.insert(format!("{}.w", name), xavier(rng, rows, cols));
        params.insert(format!("{}.b", name), Tensor2::zeros(1, cols));
    };

    match cfg.backbone {
        Backbone::SingleDnn => {
            // fully independent networks per task, embeddings included
            add_embeddings(&mut params, &mut rng, "emb_ctr");
            add_embeddings(&mut params, &mut rng, "emb_cvr");
            add_linear(&mut params, &mut rng, "bottom_ctr", input_dim, d);
            add_linear(&mut params, &mut rng, "bottom_cvr", input_dim, d);
        }
        Backbone::SharedBottom => {
            add_embeddings(&mut params, &mut rng, "emb");
            add_linear(&mut params, &mut rng, "bottom", input_dim, d);
        }
        Backbone::Mmoe => {
            add_embeddings(&mut params, &mut rng, "emb");
            for i in 0..cfg.expert_count {
                add_linear(&mut params, &mut rng, &format!("expert{}", i), input_dim, d);
            }
            add_linear(&mut params, &mut rng, "gate_ctr", input_dim, cfg.expert_count);
            add_linear(&mut params, &mut rng, "gate_cvr", input_dim, cfg.expert_count);
        }
    }

    for task in ["tower_ctr", "tower_cvr"] {
        let mut width = d;
        for (l, &h) in cfg.tower_hidden_sizes.iter().enumerate() {
            add_linear(&mut params, &mut rng, &format!("{}.l{}", task, l + 1), width, h);
            width = h;
        }
        add_linear(&mut params, &mut rng, &format!("{}.head", task), width, 1);
    }

    params.insert(TEMP_SCALAR.into(), Tensor2::new(1, 1, vec![0.5])?);

    reinit_omega(&mut params, cfg, cfg.init_seed);
    Ok(params)
}

/// Re-draws the relatedness network (Omega) from its own seed, leaving all
/// base parameters untouched. Also used by warm starts.
pub fn reinit_omega(params: &mut ModelParams, cfg: &ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut width = cfg.shared_output_dim();
    for (l, &h) in cfg.relatedness_hidden_sizes.iter().enumerate() {
        let (wn, bn) = mlp_layer_names("rel", l + 1);
        params.insert(wn, xavier(&mut rng, width, h));
        params.insert(bn, Tensor2::zeros(1, h));
        width = h;
    }
    params.insert("rel.head.w".into(), xavier(&mut rng, width, 1));
    params.insert("rel.head.b".into(), Tensor2::zeros(1, 1));
}

#[derive(Debug, Clone)]
pub struct TowerTrace {
    /// Pre-activation of each hidden layer, 1-based conceptually (index 0 = layer 1).
    pub pre: Vec<Tensor2>,
    /// Post-activation outputs h^(1..L).
    pub post: Vec<Tensor2>,
    pub head_logit: Vec<f64>,
    /// Clamped sigmoid of the head logit.
    pub y_hat: Vec<f64>,
}

/// Per-batch cached activations needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub emb_ctr: Tensor2,
    pub emb_cvr: Tensor2,
    pub expert_pre: Vec<Tensor2>,
    pub expert_out: Vec<Tensor2>,
    /// Gate probability rows (sum to 1), mmoe only.
    pub gate_ctr: Option<Tensor2>,
    pub gate_cvr: Option<Tensor2>,
    pub bottom_pre_ctr: Option<Tensor2>,
    pub bottom_pre_cvr: Option<Tensor2>,
    pub v_ctr: Tensor2,
    pub v_cvr: Tensor2,
    pub tower_ctr: TowerTrace,
    pub tower_cvr: TowerTrace,
    pub rel_input: Tensor2,
    pub rel_pre: Vec<Tensor2>,
    pub rel_post: Vec<Tensor2>,
    pub rel_head_logit: Vec<f64>,
    pub y_rel: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ForwardTrace {
    /// Contrast representations at the configured tower layer (1-based).
    pub fn contrast_pair(&self, layer: usize) -> (&Tensor2, &Tensor2) {
        (&self.tower_ctr.post[layer - 1], &self.tower_cvr.post[layer - 1])
    }
}

fn embedding_tables<'a>(params: &'a ModelParams, schema: &Schema, prefix: &str) -> Vec<&'a Tensor2> {
    schema
        .fields
        .iter()
        .map(|(name, _)| params.get(&format!("{}.{}", prefix, name)))
        .collect()
}

/// `v^task = sum_i softmax(gate(e))_i * expert_i(e)` plus the caches needed
/// to backprop through it.
fn mmoe_mix(gate_probs: &Tensor2, expert_out: &[Tensor2]) -> Tensor2 {
    let b = gate_probs.rows();
    let d = expert_out[0].cols();
    let mut v = Tensor2::zeros(b, d);
    for i in 0..b {
        let vi = v.row_mut(i);
        for (x, out) in expert_out.iter().enumerate() {
            let p = gate_probs.get(i, x);
            for (vj, &oj) in vi.iter_mut().zip(out.row(i)) {
                *vj += p * oj;
            }
        }
    }
    v
}

fn gate_forward(params: &ModelParams, emb: &Tensor2, name: &str) -> Result<Tensor2> {
    let logits = linear_forward(emb, params.get(&format!("{}.w", name)), params.get(&format!("{}.b", name)).as_slice())?;
    let mut probs = Tensor2::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = softmax(logits.row(i));
        probs.row_mut(i).copy_from_slice(&p);
    }
    Ok(probs)
}

fn tower_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    v: &Tensor2,
    task: &str,
) -> Result<TowerTrace> {
    let mut pre = Vec::with_capacity(cfg.tower_layers());
    let mut post = Vec::with_capacity(cfg.tower_layers());
    let mut h = v.clone();
    for l in 1..=cfg.tower_layers() {
        let (wn, bn) = mlp_layer_names(task, l);
        let z = linear_forward(&h, params.get(&wn), params.get(&bn).as_slice())?;
        h = activation_forward(cfg.activation, &z);
        pre.push(z);
        post.push(h.clone());
    }
    let logits = linear_forward(
        &h,
        params.get(&format!("{}.head.w", task)),
        params.get(&format!("{}.head.b", task)).as_slice(),
    )?;
    let head_logit: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, 0)).collect();
    let y_hat = head_logit.iter().map(|&z| clamp_prob(sigmoid(z))).collect();
    Ok(TowerTrace { pre, post, head_logit, y_hat })
}

fn rel_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    v_ctr: &Tensor2,
    v_cvr: &Tensor2,
) -> Result<(Tensor2, Vec<Tensor2>, Vec<Tensor2>, Vec<f64>, Vec<f64>)> {
    if v_ctr.cols() != v_cvr.cols() || v_ctr.rows() != v_cvr.rows() {
        return Err(Error::Dimension {
            op: "relatedness_forward",
            detail: format!(
                "v_ctr {}x{} vs v_cvr {}x{}",
                v_ctr.rows(),
                v_ctr.cols(),
                v_cvr.rows(),
                v_cvr.cols()
            ),
        });
    }
    let mut input = Tensor2::zeros(v_ctr.rows(), v_ctr.cols());
    for (o, (&a, &b)) in input
        .as_mut_slice()
        .iter_mut()
        .zip(v_ctr.as_slice().iter().zip(v_cvr.as_slice()))
    {
        *o = a * b;
    }
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut h = input.clone();
    for l in 1..=cfg.relatedness_hidden_sizes.len() {
        let (wn, bn) = mlp_layer_names("rel", l);
        let z = linear_forward(&h, params.get(&wn), params.get(&bn).as_slice())?;
        h = activation_forward(cfg.activation, &z);
        pre.push(z);
        post.push(h.clone());
    }
    let logits = linear_forward(&h, params.get("rel.head.w"), params.get("rel.head.b").as_slice())?;
    let head_logit: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, 0)).collect();
    let y_rel = head_logit.iter().map(|&z| clamp_prob(sigmoid(z))).collect();
    Ok((input, pre, post, head_logit, y_rel))
}

/// Shared layers only: returns `(v_ctr, v_cvr)` for the configured backbone.
pub fn shared_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    emb_ctr: &Tensor2,
    emb_cvr: &Tensor2,
) -> Result<(Tensor2, Tensor2)> {
    match cfg.backbone {
        Backbone::SingleDnn => {
            let p = linear_forward(emb_ctr, params.get("bottom_ctr.w"), params.get("bottom_ctr.b").as_slice())?;
            let q = linear_forward(emb_cvr, params.get("bottom_cvr.w"), params.get("bottom_cvr.b").as_slice())?;
            Ok((activation_forward(cfg.activation, &p), activation_forward(cfg.activation, &q)))
        }
        Backbone::SharedBottom => {
            let p = linear_forward(emb_ctr, params.get("bottom.w"), params.get("bottom.b").as_slice())?;
            let v = activation_forward(cfg.activation, &p);
            Ok((v.clone(), v))
        }
        Backbone::Mmoe => {
            let outs: Vec<Tensor2> = (0..cfg.expert_count)
                .map(|i| {
                    let z = linear_forward(
                        emb_ctr,
                        params.get(&format!("expert{}.w", i)),
                        params.get(&format!("expert{}.b", i)).as_slice(),
                    )?;
                    Ok(activation_forward(cfg.activation, &z))
                })
                .collect::<Result<_>>()?;
            let g1 = gate_forward(params, emb_ctr, "gate_ctr")?;
            let g2 = gate_forward(params, emb_ctr, "gate_cvr")?;
            Ok((mmoe_mix(&g1, &outs), mmoe_mix(&g2, &outs)))
        }
    }
}

/// Full forward pass: embedding lookup, shared layers, both towers, the
/// relatedness network and the per-instance temperature.
///
/// `frozen_tau` overrides the temperature vector; the gradient-check harness
/// uses it to hold the temperature constant while perturbing base parameters.
pub fn model_forward(
    params: &ModelParams,
    schema: &Schema,
    batch: &Batch,
    cfg: &TrainConfig,
    frozen_tau: Option<&[f64]>,
) -> Result<ForwardTrace> {
    let mcfg = &cfg.model;
    let names = schema.field_names();

    let (emb_ctr, emb_cvr) = match mcfg.backbone {
        Backbone::SingleDnn => {
            let t1 = embedding_tables(params, schema, "emb_ctr");
            let t2 = embedding_tables(params, schema, "emb_cvr");
            (
                embedding_forward(&t1, &batch.feature_ids, &names)?,
                embedding_forward(&t2, &batch.feature_ids, &names)?,
            )
        }
        _ => {
            let t = embedding_tables(params, schema, "emb");
            let e = embedding_forward(&t, &batch.feature_ids, &names)?;
            (e.clone(), e)
        }
    };

    let mut expert_pre = Vec::new();
    let mut expert_out = Vec::new();
    let mut gate_ctr = None;
    let mut gate_cvr = None;
    let mut bottom_pre_ctr = None;
    let mut bottom_pre_cvr = None;

    let (v_ctr, v_cvr) = match mcfg.backbone {
        Backbone::SingleDnn => {
            let p = linear_forward(&emb_ctr, params.get("bottom_ctr.w"), params.get("bottom_ctr.b").as_slice())?;
            let q = linear_forward(&emb_cvr, params.get("bottom_cvr.w"), params.get("bottom_cvr.b").as_slice())?;
            let v1 = activation_forward(mcfg.activation, &p);
            let v2 = activation_forward(mcfg.activation, &q);
            bottom_pre_ctr = Some(p);
            bottom_pre_cvr = Some(q);
            (v1, v2)
        }
        Backbone::SharedBottom => {
            let p = linear_forward(&emb_ctr, params.get("bottom.w"), params.get("bottom.b").as_slice())?;
            let v = activation_forward(mcfg.activation, &p);
            bottom_pre_ctr = Some(p);
            (v.clone(), v)
        }
        Backbone::Mmoe => {
            for i in 0..mcfg.expert_count {
                let z = linear_forward(
                    &emb_ctr,
                    params.get(&format!("expert{}.w", i)),
                    params.get(&format!("expert{}.b", i)).as_slice(),
                )?;
                expert_out.push(activation_forward(mcfg.activation, &z));
                expert_pre.push(z);
            }
            let g1 = gate_forward(params, &emb_ctr, "gate_ctr")?;
            let g2 = gate_forward(params, &emb_ctr, "gate_cvr")?;
            let v1 = mmoe_mix(&g1, &expert_out);
            let v2 = mmoe_mix(&g2, &expert_out);
            gate_ctr = Some(g1);
            gate_cvr = Some(g2);
            (v1, v2)
        }
    };

    let tower_ctr = tower_forward(params, mcfg, &v_ctr, "tower_ctr")?;
    let tower_cvr = tower_forward(params, mcfg, &v_cvr, "tower_cvr")?;
    let (rel_input, rel_pre, rel_post, rel_head_logit, y_rel) =
        rel_forward(params, mcfg, &v_ctr, &v_cvr)?;

    let tau = match frozen_tau {
        Some(t) => t.to_vec(),
        None => crate::losses::temperature(&y_rel, &cfg.loss, params.temp_scalar())?,
    };

    Ok(ForwardTrace {
        emb_ctr,
        emb_cvr,
        expert_pre,
        expert_out,
        gate_ctr,
        gate_cvr,
        bottom_pre_ctr,
        bottom_pre_cvr,
        v_ctr,
        v_cvr,
        tower_ctr,
        tower_cvr,
        rel_input,
        rel_pre,
        rel_post,
        rel_head_logit,
        y_rel,
        tau,
    })
}

/// Alignment-loss gradient at the contrast layer, for both tasks.
pub struct AlignGrads {
    pub layer: usize,
    pub d_h_ctr: Tensor2,
    pub d_h_cvr: Tensor2,
}

fn tower_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    trace: &TowerTrace,
    v: &Tensor2,
    task: &str,
    d_logit: &[f64],
    align: Option<(usize, &Tensor2)>,
    grads: &mut Grads,
) -> Result<Tensor2> {
    let layers = cfg.tower_layers();
    let b = v.rows();

    // head: logit = h_L . w + b
    let h_last = &trace.post[layers - 1];
    let d_logit_t = Tensor2::new(b, 1, d_logit.to_vec())?;
    let (mut d_post, gw, gb) =
        linear_backward(h_last, params.get(&format!("{}.head.w", task)), &d_logit_t)?;
    grads.add_into(&format!("{}.head.w", task), gw);
    grads.add_into(&format!("{}.head.b", task), Tensor2::new(1, 1, gb)?);

    for l in (1..=layers).rev() {
        if let Some((align_layer, d_h)) = align {
            if align_layer == l {
                for (a, &g) in d_post.as_mut_slice().iter_mut().zip(d_h.as_slice()) {
                    *a += g;
                }
            }
        }
        let d_pre = activation_backward(cfg.activation, &trace.pre[l - 1], &d_post)?;
        let input = if l == 1 { v } else { &trace.post[l - 2] };
        let (wn, bn) = mlp_layer_names(task, l);
        let (d_in, gw, gb) = linear_backward(input, params.get(&wn), &d_pre)?;
        let cols = gb.len();
        grads.add_into(&wn, gw);
        grads.add_into(&bn, Tensor2::new(1, cols, gb)?);
        d_post = d_in;
    }
    Ok(d_post) // gradient w.r.t. v
}

fn gate_backward(
    params: &ModelParams,
    emb: &Tensor2,
    probs: &Tensor2,
    d_probs_dot_experts: &Tensor2, // dL/d gate_prob[b][i]
    name: &str,
    grads: &mut Grads,
    d_emb: &mut Tensor2,
) -> Result<()> {
    // softmax backward per row
    let mut d_logits = Tensor2::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = d_probs_dot_experts.row(i);
        let dot: f64 = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
        let out = d_logits.row_mut(i);
        for j in 0..p.len() {
            out[j] = p[j] * (dp[j] - dot);
        }
    }
    let (d_in, gw, gb) = linear_backward(emb, params.get(&format!("{}.w", name)), &d_logits)?;
    let cols = gb.len();
    grads.add_into(&format!("{}.w", name), gw);
    grads.add_into(&format!("{}.b", name), Tensor2::new(1, cols, gb)?);
    for (a, &b) in d_emb.as_mut_slice().iter_mut().zip(d_in.as_slice()) {
        *a += b;
    }
    Ok(())
}

/// Backward pass over the base parameters (Theta): task heads, alignment
/// gradients at the contrast layer, towers, shared layers and embeddings.
/// The relatedness branch is excluded (stop-gradient at `v_ctr`/`v_cvr`),
/// and the temperature is treated as constant by construction: `tau` enters
/// only through the already-computed alignment gradients.
pub fn model_backward_theta(
    params: &ModelParams,
    schema: &Schema,
    cfg: &ModelConfig,
    batch: &Batch,
    trace: &ForwardTrace,
    d_logit_ctr: &[f64],
    d_logit_cvr: &[f64],
    align: Option<&AlignGrads>,
    d_temp_scalar: f64,
) -> Result<Grads> {
    let mut grads = Grads::default();
    let names = schema.field_names();

    let align_ctr = align.map(|a| (a.layer, &a.d_h_ctr));
    let align_cvr = align.map(|a| (a.layer, &a.d_h_cvr));
    let d_v_ctr = tower_backward(params, cfg, &trace.tower_ctr, &trace.v_ctr, "tower_ctr", d_logit_ctr, align_ctr, &mut grads)?;
    let d_v_cvr = tower_backward(params, cfg, &trace.tower_cvr, &trace.v_cvr, "tower_cvr", d_logit_cvr, align_cvr, &mut grads)?;

    match cfg.backbone {
        Backbone::SingleDnn => {
            for (task, d_v, pre, emb) in [
                ("ctr", &d_v_ctr, trace.bottom_pre_ctr.as_ref().unwrap(), &trace.emb_ctr),
                ("cvr", &d_v_cvr, trace.bottom_pre_cvr.as_ref().unwrap(), &trace.emb_cvr),
            ] {
                let d_pre = activation_backward(cfg.activation, pre, d_v)?;
                let wn = format!("bottom_{}.w", task);
                let (d_emb, gw, gb) = linear_backward(emb, params.get(&wn), &d_pre)?;
                let cols = gb.len();
                grads.add_into(&wn, gw);
                grads.add_into(&format!("bottom_{}.b", task), Tensor2::new(1, cols, gb)?);
                let tables = embedding_tables(params, schema, &format!("emb_{}", task));
                let table_grads = embedding_backward(&tables, &batch.feature_ids, &d_emb)?;
                for (f, g) in table_grads.into_iter().enumerate() {
                    grads.add_into(&format!("emb_{}.{}", task, names[f]), g);
                }
            }
        }
        Backbone::SharedBottom => {
            let mut d_v = d_v_ctr;
            for (a, &b) in d_v.as_mut_slice().iter_mut().zip(d_v_cvr.as_slice()) {
                *a += b;
            }
            let pre = trace.bottom_pre_ctr.as_ref().unwrap();
            let d_pre = activation_backward(cfg.activation, pre, &d_v)?;
            let (d_emb, gw, gb) = linear_backward(&trace.emb_ctr, params.get("bottom.w"), &d_pre)?;
            let cols = gb.len();
            grads.add_into("bottom.w", gw);
            grads.add_into("bottom.b", Tensor2::new(1, cols, gb)?);
            let tables = embedding_tables(params, schema, "emb");
            let table_grads = embedding_backward(&tables, &batch.feature_ids, &d_emb)?;
            for (f, g) in table_grads.into_iter().enumerate() {
                grads.add_into(&format!("emb.{}", names[f]), g);
            }
        }
        Backbone::Mmoe => {
            let b_rows = trace.emb_ctr.rows();
            let d = trace.v_ctr.cols();
            let k = cfg.expert_count;
            let mut d_emb = Tensor2::zeros(b_rows, trace.emb_ctr.cols());
            let mut d_expert_out = vec![Tensor2::zeros(b_rows, d); k];

            for (gate, d_v) in [
                (trace.gate_ctr.as_ref().unwrap(), &d_v_ctr),
                (trace.gate_cvr.as_ref().unwrap(), &d_v_cvr),
            ] {
                let mut d_gate = Tensor2::zeros(b_rows, k);
                for i in 0..b_rows {
                    let dv = d_v.row(i);
                    for (x, out) in trace.expert_out.iter().enumerate() {
                        let p = gate.get(i, x);
                        let o = out.row(i);
                        let mut dot = 0.0;
                        let dei = d_expert_out[x].row_mut(i);
                        for j in 0..d {
                            dei[j] += p * dv[j];
                            dot += dv[j] * o[j];
                        }
                        d_gate.set(i, x, dot);
                    }
                }
                let name = if std::ptr::eq(gate, trace.gate_ctr.as_ref().unwrap()) {
                    "gate_ctr"
                } else {
                    "gate_cvr"
                };
                gate_backward(params, &trace.emb_ctr, gate, &d_gate, name, &mut grads, &mut d_emb)?;
            }

            for (x, d_out) in d_expert_out.into_iter().enumerate() {
                let d_pre = activation_backward(cfg.activation, &trace.expert_pre[x], &d_out)?;
                let wn = format!("expert{}.w", x);
                let (d_in, gw, gb) = linear_backward(&trace.emb_ctr, params.get(&wn), &d_pre)?;
                let cols = gb.len();
                grads.add_into(&wn, gw);
                grads.add_into(&format!("expert{}.b", x), Tensor2::new(1, cols, gb)?);
                for (a, &v) in d_emb.as_mut_slice().iter_mut().zip(d_in.as_slice()) {
                    *a += v;
                }
            }

            let tables = embedding_tables(params, schema, "emb");
            let table_grads = embedding_backward(&tables, &batch.feature_ids, &d_emb)?;
            for (f, g) in table_grads.into_iter().enumerate() {
                grads.add_into(&format!("emb.{}", names[f]), g);
            }
        }
    }

    if d_temp_scalar != 0.0 {
        grads.add_into(TEMP_SCALAR, Tensor2::new(1, 1, vec![d_temp_scalar])?);
    }
    Ok(grads)
}

/// Backward pass over the relatedness parameters (Omega). The inputs
/// `v_ctr`/`v_cvr` are constants here: nothing propagates into Theta.
pub fn model_backward_omega(
    params: &ModelParams,
    cfg: &ModelConfig,
    trace: &ForwardTrace,
    d_logit_rel: &[f64],
) -> Result<Grads> {
    let mut grads = Grads::default();
    let layers = cfg.relatedness_hidden_sizes.len();
    let b = trace.rel_input.rows();
    let last = if layers == 0 { &trace.rel_input } else { &trace.rel_post[layers - 1] };
    let d_logit_t = Tensor2::new(b, 1, d_logit_rel.to_vec())?;
    let (mut d_post, gw, gb) = linear_backward(last, params.get("rel.head.w"), &d_logit_t)?;
    grads.add_into("rel.head.w", gw);
    grads.add_into("rel.head.b", Tensor2::new(1, 1, gb)?);
    for l in (1..=layers).rev() {
        let d_pre = activation_backward(cfg.activation, &trace.rel_pre[l - 1], &d_post)?;
        let input = if l == 1 { &trace.rel_input } else { &trace.rel_post[l - 2] };
        let (wn, bn) = mlp_layer_names("rel", l);
        let (d_in, gw, gb) = linear_backward(input, params.get(&wn), &d_pre)?;
        let cols = gb.len();
        grads.add_into(&wn, gw);
        grads.add_into(&bn, Tensor2::new(1, cols, gb)?);
        d_post = d_in;
    }
    Ok(grads)
}
