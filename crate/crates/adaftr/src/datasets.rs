//! Schema definition, CSV ingestion, synthetic correlated two-task data
//! generation, and deterministic batch iteration.
//!
//! On-disk formats:
//! - data CSV: header `user_id,y_click,y_conversion,f_<name>...`, one
//!   impression per row, LF line endings;
//! - schema sidecar: line-oriented `name=cardinality` plus `funnel=true|false`,
//!   `#` comments allowed.

use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Ordered categorical fields with cardinalities; defines embedding shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub fields: Vec<(String, usize)>,
    /// When set, records must satisfy `y_cvr <= y_ctr`.
    pub funnel_constraint: bool,
}

impl Schema {
    pub fn new(fields: Vec<(String, usize)>, funnel_constraint: bool) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, card) in &fields {
            if *card < 1 {
                return Err(Error::Config(format!("field '{}' has cardinality 0", name)));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate field name '{}'", name)));
            }
        }
        Ok(Self { fields, funnel_constraint })
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut fields = Vec::new();
        let mut funnel = true;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Data {
                line: lineno + 1,
                msg: format!("expected key=value, got '{}'", line),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "funnel" {
                funnel = value.parse().map_err(|_| Error::Data {
                    line: lineno + 1,
                    msg: format!("funnel must be true|false, got '{}'", value),
                })?;
            } else {
                let card: usize = value.parse().map_err(|_| Error::Data {
                    line: lineno + 1,
                    msg: format!("cardinality for '{}' is not an integer: '{}'", key, value),
                })?;
                fields.push((key.to_string(), card));
            }
        }
        Schema::new(fields, funnel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# adaftr schema")?;
        writeln!(out, "funnel={}", self.funnel_constraint)?;
        for (name, card) in &self.fields {
            writeln!(out, "{}={}", name, card)?;
        }
        Ok(())
    }
}

/// One logged impression: `r = <x, y_ctr, y_cvr>` plus the user id for GAUC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub user_id: u64,
    pub feature_ids: Vec<usize>,
    pub y_ctr: u8,
    pub y_cvr: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<ImpressionRecord>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<ImpressionRecord>) -> Result<Self> {
        let ds = Self { schema, records };
        for (i, rec) in ds.records.iter().enumerate() {
            ds.validate_record(rec, i + 2)?; // +2: header is line 1
        }
        Ok(ds)
    }

    fn validate_record(&self, rec: &ImpressionRecord, line: usize) -> Result<()> {
        if rec.feature_ids.len() != self.schema.field_count() {
            return Err(Error::Data {
                line,
                msg: format!(
                    "expected {} feature ids, got {}",
                    self.schema.field_count(),
                    rec.feature_ids.len()
                ),
            });
        }
        for (f, &id) in rec.feature_ids.iter().enumerate() {
            let (name, card) = &self.schema.fields[f];
            if id >= *card {
                return Err(Error::Data {
                    line,
                    msg: format!("feature id {} out of range for field '{}' (cardinality {})", id, name, card),
                });
            }
        }
        if rec.y_ctr > 1 || rec.y_cvr > 1 {
            return Err(Error::Data { line, msg: "labels must be 0 or 1".into() });
        }
        if self.schema.funnel_constraint && rec.y_cvr > rec.y_ctr {
            return Err(Error::Data {
                line,
                msg: "funnel violation: y_conversion=1 with y_click=0".into(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn expected_header(schema: &Schema) -> String {
    let mut cols = vec!["user_id".to_string(), "y_click".to_string(), "y_conversion".to_string()];
    cols.extend(schema.fields.iter().map(|(n, _)| format!("f_{}", n)));
    cols.join(",")
}

/// Loads a data CSV against a schema sidecar; every row is validated.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema = Schema::load(schema_path)?;
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::Data { line: 1, msg: "missing header row".into() })??;
    let expected = expected_header(&schema);
    if header.trim_end() != expected {
        return Err(Error::Data {
            line: 1,
            msg: format!("header mismatch: expected '{}', got '{}'", expected, header),
        });
    }
    let n_cols = 3 + schema.field_count();
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(Error::Data {
                line: lineno,
                msg: format!("expected {} columns, got {}", n_cols, cells.len()),
            });
        }
        let parse_u64 = |cell: &str, what: &str| -> Result<u64> {
            cell.trim().parse().map_err(|_| Error::Data {
                line: lineno,
                msg: format!("{} is not an integer: '{}'", what, cell),
            })
        };
        let user_id = parse_u64(cells[0], "user_id")?;
        let y_ctr = parse_u64(cells[1], "y_click")? as u8;
        let y_cvr = parse_u64(cells[2], "y_conversion")? as u8;
        let mut feature_ids = Vec::with_capacity(schema.field_count());
        for (f, cell) in cells[3..].iter().enumerate() {
            let id = parse_u64(cell, &format!("field '{}'", schema.fields[f].0))? as usize;
            feature_ids.push(id);
        }
        records.push(ImpressionRecord { user_id, feature_ids, y_ctr, y_cvr });
    }
    // re-validate with real line numbers
    let ds = Dataset { schema, records };
    for (i, rec) in ds.records.iter().enumerate() {
        ds.validate_record(rec, i + 2)?;
    }
    Ok(ds)
}

/// Writes a dataset back out in the same CSV layout [`load_csv`] reads.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", expected_header(&dataset.schema))?;
    for rec in &dataset.records {
        write!(out, "{},{},{}", rec.user_id, rec.y_ctr, rec.y_cvr)?;
        for id in &rec.feature_ids {
            write!(out, ",{}", id)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Configuration for the synthetic correlated two-task generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub records: usize,
    pub fields: usize,
    /// Shared cardinality for every generated field.
    pub cardinality: usize,
    pub users: usize,
    /// Width of the per-id latent effect vectors.
    pub latent_dim: usize,
    /// Correlation between the two latent task logits, in [-1, 1].
    pub rho: f64,
    pub ctr_rate: f64,
    pub cvr_rate: f64,
    pub funnel: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            records: 10_000,
            fields: 8,
            cardinality: 50,
            users: 200,
            latent_dim: 4,
            rho: 0.5,
            ctr_rate: 0.1,
            cvr_rate: 0.01,
            funnel: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [-1, 1], got {}", self.rho)));
        }
        for (name, rate) in [("ctr-rate", self.ctr_rate), ("cvr-rate", self.cvr_rate)] {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Config(format!("{} must be in (0, 1), got {}", name, rate)));
            }
        }
        if self.records == 0 || self.fields == 0 || self.cardinality == 0 || self.users == 0 {
            return Err(Error::Config("records, fields, cardinality and users must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent-dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let fields = (0..self.fields).map(|f| (format!("f{}", f), self.cardinality)).collect();
        Schema::new(fields, self.funnel).expect("generated schema is valid")
    }
}

/// Raw latent logits for one generated record, exposed for correlation checks.
#[derive(Debug, Clone, Copy)]
pub struct LatentLogits {
    pub ctr: f64,
    pub cvr: f64,
}

/// Finds `bias` such that `mean(sigmoid(logit + bias) * weight)` hits `target`.
fn calibrate_bias(logits: &[f64], weights: Option<&[f64]>, target: f64) -> f64 {
    let mean = |bias: f64| -> f64 {
        let mut acc = 0.0;
        for (i, &l) in logits.iter().enumerate() {
            let p = crate::numcore::sigmoid(l + bias);
            acc += match weights {
                Some(w) => p * w[i],
                None => p,
            };
        }
        acc / logits.len() as f64
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates a dataset of correlated click/conversion labels, fully
/// determined by the seed. Returns the dataset together with the raw latent
/// logits used for label sampling.
pub fn synth_generate_with_logits(cfg: &GenConfig, seed: u64) -> Result<(Dataset, Vec<LatentLogits>)> {
    cfg.validate()?;
    let schema = cfg.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // per-field, per-id latent effect vectors for the common, CTR-only and
    // CVR-only components; scaled so each summed logit has unit variance
    let scale = 1.0 / ((cfg.fields * cfg.latent_dim) as f64).sqrt();
    let mut effects = Vec::with_capacity(cfg.fields);
    for _ in 0..cfg.fields {
        let mut table = Vec::with_capacity(cfg.cardinality);
        for _ in 0..cfg.cardinality {
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                let v: f64 = rng.sample(rand_distr_standard_normal());
                v * scale
            };
            let common: f64 = (0..cfg.latent_dim).map(|_| draw(&mut rng)).sum();
            let ctr: f64 = (0..cfg.latent_dim).map(|_| draw(&mut rng)).sum();
            let cvr: f64 = (0..cfg.latent_dim).map(|_| draw(&mut rng)).sum();
            table.push((common, ctr, cvr));
        }
        effects.push(table);
    }

    let rho_abs = cfg.rho.abs();
    let (w_common, w_own) = (rho_abs.sqrt(), (1.0 - rho_abs).sqrt());
    let sign = if cfg.rho < 0.0 { -1.0 } else { 1.0 };

    let mut feature_ids = Vec::with_capacity(cfg.records);
    let mut user_ids = Vec::with_capacity(cfg.records);
    let mut logits = Vec::with_capacity(cfg.records);
    for _ in 0..cfg.records {
        let ids: Vec<usize> = (0..cfg.fields).map(|f| rng.gen_range(0..effects[f].len())).collect();
        let (mut u, mut a, mut b) = (0.0, 0.0, 0.0);
        for (f, &id) in ids.iter().enumerate() {
            let (c, x, y) = effects[f][id];
            u += c;
            a += x;
            b += y;
        }
        logits.push(LatentLogits {
            ctr: w_common * u + w_own * a,
            cvr: sign * w_common * u + w_own * b,
        });
        user_ids.push(rng.gen_range(0..cfg.users as u64));
        feature_ids.push(ids);
    }

    let ctr_logits: Vec<f64> = logits.iter().map(|l| l.ctr).collect();
    let cvr_logits: Vec<f64> = logits.iter().map(|l| l.cvr).collect();
    let bias_ctr = calibrate_bias(&ctr_logits, None, cfg.ctr_rate);
    let p_ctr: Vec<f64> = ctr_logits.iter().map(|&l| crate::numcore::sigmoid(l + bias_ctr)).collect();
    // with the funnel, the unconditional conversion rate is E[p_ctr * p_cvr]
    let bias_cvr = if cfg.funnel {
        calibrate_bias(&cvr_logits, Some(&p_ctr), cfg.cvr_rate)
    } else {
        calibrate_bias(&cvr_logits, None, cfg.cvr_rate)
    };

    let mut records = Vec::with_capacity(cfg.records);
    for i in 0..cfg.records {
        let y_ctr = u8::from(rng.gen::<f64>() < p_ctr[i]);
        let p_cvr = crate::numcore::sigmoid(cvr_logits[i] + bias_cvr);
        let mut y_cvr = u8::from(rng.gen::<f64>() < p_cvr);
        if cfg.funnel && y_ctr == 0 {
            y_cvr = 0;
        }
        records.push(ImpressionRecord {
            user_id: user_ids[i],
            feature_ids: feature_ids[i].clone(),
            y_ctr,
            y_cvr,
        });
    }
    Ok((Dataset { schema, records }, logits))
}

pub fn synth_generate(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    synth_generate_with_logits(cfg, seed).map(|(ds, _)| ds)
}

// Box-Muller draw; avoids pulling in rand_distr for one distribution.
fn rand_distr_standard_normal() -> StandardNormal {
    StandardNormal
}

struct StandardNormal;

impl rand::distributions::Distribution<f64> for StandardNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// One mini-batch in model-ready layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub user_ids: Vec<u64>,
    /// `feature_ids[i][f]` is the id of field `f` for record `i`.
    pub feature_ids: Vec<Vec<usize>>,
    pub y_ctr: Vec<f64>,
    pub y_cvr: Vec<f64>,
}

impl Batch {
    pub fn from_records(records: &[&ImpressionRecord]) -> Self {
        Self {
            user_ids: records.iter().map(|r| r.user_id).collect(),
            feature_ids: records.iter().map(|r| r.feature_ids.clone()).collect(),
            y_ctr: records.iter().map(|r| f64::from(r.y_ctr)).collect(),
            y_cvr: records.iter().map(|r| f64::from(r.y_cvr)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }
}

/// Deterministic one-epoch batch iterator; the final partial batch is kept.
pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(move |chunk| {
        let recs: Vec<&ImpressionRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();
        Batch::from_records(&recs)
    }).collect::<Vec<_>>().into_iter())
}
