//! A depth-one stand-in for the attitude network.
//!
//! Features are a binary occupancy grid of the projected wireframe inside
//! its bounding box. Two affine maps turn the grid into class logits `v` and
//! weight logits `w`, trained by minibatch SGD on the attitude losses.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::attitude::{
    gradient_agrees, losses, richardson, AttitudeCodebook, AttitudeConfig, AttitudeLabel,
    GradientCheckReport, ParamBlocks,
};
use crate::camera::{project_point, BoundingBox, PinholeCamera};
use crate::error::{Error, Result};
use crate::rng::{self, mix64, Domain};
use crate::rotations::Pose;
use crate::scene::Dataset;
use crate::wireframe::WireframeModel;

pub const EDGE_SAMPLES: usize = 32;
pub const DEFAULT_GRID: usize = 16;

/// Occupancy grid, row-major, rows along image `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub grid: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(grid: usize) -> Self {
        Self {
            grid,
            values: vec![0.0; grid * grid],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid + col]
    }

    pub fn occupied(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    fn mark(&mut self, bbox: &BoundingBox, u: f64, v: f64) {
        let g = self.grid as f64;
        let cell = |x: f64, lo: f64, size: f64| {
            ((g * (x - lo) / size).floor().max(0.0) as usize).min(self.grid - 1)
        };
        let col = cell(u, bbox.left, bbox.width());
        let row = cell(v, bbox.top, bbox.height());
        self.values[row * self.grid + col] = 1.0;
    }
}

/// Projects every vertex and `EDGE_SAMPLES` evenly spaced points per edge
/// (endpoints included) into a `grid × grid` partition of `bbox`. Points
/// outside the box land in the nearest border cell.
pub fn silhouette_features(
    cam: &PinholeCamera,
    pose: &Pose,
    model: &WireframeModel,
    bbox: &BoundingBox,
    grid: usize,
) -> Result<FeatureVector> {
    if grid == 0 {
        return Err(Error::invalid("grid size must be at least 1"));
    }
    bbox.ensure_area()?;
    let mut f = FeatureVector::zeros(grid);
    let verts = model.vertices();
    for x in verts {
        let p = project_point(cam, pose, x)?;
        f.mark(bbox, p.u, p.v);
    }
    for &(a, b) in model.edges() {
        for k in 0..EDGE_SAMPLES {
            let s = k as f64 / (EDGE_SAMPLES - 1) as f64;
            let x: Vector3<f64> = verts[a] + (verts[b] - verts[a]) * s;
            let p = project_point(cam, pose, &x)?;
            f.mark(bbox, p.u, p.v);
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub w_cls: DMatrix<f64>,
    pub b_cls: DVector<f64>,
    pub w_reg: DMatrix<f64>,
    pub b_reg: DVector<f64>,
    pub grid: usize,
    pub seed: u64,
    pub steps: u64,
    pub final_loss: f64,
}

impl ToyModel {
    pub fn zeros(m: usize, grid: usize) -> Self {
        let d = grid * grid;
        Self {
            w_cls: DMatrix::zeros(m, d),
            b_cls: DVector::zeros(m),
            w_reg: DMatrix::zeros(m, d),
            b_reg: DVector::zeros(m),
            grid,
            seed: 0,
            steps: 0,
            final_loss: f64::INFINITY,
        }
    }

    /// Weights `N(0, scale²)`, biases zero.
    pub fn random(m: usize, grid: usize, scale: f64, seed: u64) -> Result<Self> {
        let normal =
            Normal::new(0.0, scale).map_err(|e| Error::invalid(format!("init scale: {e}")))?;
        let mut rng = rng::stream(seed, Domain::Training, 0);
        let mut model = Self::zeros(m, grid);
        model.seed = seed;
        for x in model.w_cls.iter_mut().chain(model.w_reg.iter_mut()) {
            *x = normal.sample(&mut rng);
        }
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.b_cls.len()
    }

    pub fn feature_len(&self) -> usize {
        self.grid * self.grid
    }

    /// `v = W_cls f + b_cls`, `w = W_reg f + b_reg`.
    pub fn predict(&self, f: &FeatureVector) -> Result<(Vec<f64>, Vec<f64>)> {
        if f.values.len() != self.feature_len() {
            return Err(Error::invalid(format!(
                "feature length {} does not match model grid {}",
                f.values.len(),
                self.grid
            )));
        }
        let x = DVector::from_column_slice(&f.values);
        let v = &self.w_cls * &x + &self.b_cls;
        let w = &self.w_reg * &x + &self.b_reg;
        Ok((v.as_slice().to_vec(), w.as_slice().to_vec()))
    }

    /// Frobenius norm over both weight matrices (biases excluded).
    pub fn weight_norm(&self) -> f64 {
        (self.w_cls.norm_squared() + self.w_reg.norm_squared()).sqrt()
    }

    fn check(&self) -> Result<()> {
        let (m, d) = (self.m(), self.feature_len());
        let dims_ok =
            self.w_cls.shape() == (m, d) && self.w_reg.shape() == (m, d) && self.b_reg.len() == m;
        if !dims_ok {
            return Err(Error::invalid(
                "model parameter dimensions are inconsistent",
            ));
        }
        let all = self
            .w_cls
            .iter()
            .chain(self.b_cls.iter())
            .chain(self.w_reg.iter())
            .chain(self.b_reg.iter());
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// Header line then four blocks (`W_cls`, `b_cls`, `W_reg`, `b_reg`);
    /// matrices row by row, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# spnkit-toy-model m={} G={} seed={} steps={} final_loss={:e}\n",
            self.m(),
            self.grid,
            self.seed,
            self.steps,
            self.final_loss
        );
        let row = |out: &mut String, vals: &mut dyn Iterator<Item = &f64>| {
            let line: Vec<String> = vals.map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        };
        for (name, mat) in [("W_cls", &self.w_cls), ("W_reg", &self.w_reg)] {
            let _ = writeln!(out, "{name}");
            for r in mat.row_iter() {
                row(&mut out, &mut r.iter());
            }
            let bias = if name == "W_cls" {
                &self.b_cls
            } else {
                &self.b_reg
            };
            let _ = writeln!(out, "{}", if name == "W_cls" { "b_cls" } else { "b_reg" });
            row(&mut out, &mut bias.iter());
        }
        out
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "empty model file"))?;
        let mut fields = std::collections::HashMap::new();
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                fields.insert(k, v);
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(source, 1, format!("header lacks {k}=")))
        };
        let num_err = |k: &str| Error::parse(source, 1, format!("bad {k}= value"));
        let m: usize = get("m")?.parse().map_err(|_| num_err("m"))?;
        let grid: usize = get("G")?.parse().map_err(|_| num_err("G"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| num_err("seed"))?;
        let steps: u64 = get("steps")?.parse().map_err(|_| num_err("steps"))?;
        let final_loss: f64 = get("final_loss")?
            .parse()
            .map_err(|_| num_err("final_loss"))?;
        let d = grid * grid;

        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let (i, tag) = lines
                .next()
                .ok_or_else(|| Error::parse(source, 0, format!("missing block {name}")))?;
            if tag.trim() != name {
                return Err(Error::parse(
                    source,
                    i + 1,
                    format!("expected block {name}"),
                ));
            }
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (i, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(source, 0, format!("block {name} is short")))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(source, i + 1, "bad number"))?;
                if row.len() != cols {
                    return Err(Error::parse(
                        source,
                        i + 1,
                        format!("expected {cols} values"),
                    ));
                }
                vals.extend(row);
            }
            Ok(vals)
        };
        let w_cls = read_block("W_cls", m, d)?;
        let b_cls = read_block("b_cls", 1, m)?;
        let w_reg = read_block("W_reg", m, d)?;
        let b_reg = read_block("b_reg", 1, m)?;
        let model = Self {
            w_cls: DMatrix::from_row_slice(m, d, &w_cls),
            b_cls: DVector::from_vec(b_cls),
            w_reg: DMatrix::from_row_slice(m, d, &w_reg),
            b_reg: DVector::from_vec(b_reg),
            grid,
            seed,
            steps,
            final_loss,
        };
        model.check()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grid: usize,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_steps: u64,
    pub lambda: f64,
    pub mu: f64,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    /// Finite-difference check of the training gradient before training.
    pub self_test: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let att = AttitudeConfig::default();
        Self {
            grid: DEFAULT_GRID,
            epochs: 10,
            seed: 0,
            batch_size: 16,
            initial_lr: 0.003,
            lr_decay: 0.95,
            decay_steps: 1000,
            lambda: att.lambda,
            mu: att.mu,
            init_scale: 0.01,
            self_test: true,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.initial_lr * self.lr_decay.powi((step / self.decay_steps) as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.batch_size == 0 || self.decay_steps == 0 {
            return Err(Error::invalid(
                "grid, batch size and decay steps must be positive",
            ));
        }
        if !(self.initial_lr >= 0.0) || !(self.lr_decay > 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::invalid(
                "learning rate, decay and init scale must be non-negative",
            ));
        }
        Ok(())
    }
}

/// 80/20 split keyed on a hash of the scene id.
pub fn is_validation(id: u64) -> bool {
    mix64(id) % 5 == 0
}

/// Learning rate `lr(step) = 0.003 · 0.95^⌊step/1000⌋` under the default config.
pub fn learning_rate(step: u64) -> f64 {
    TrainConfig::default().learning_rate(step)
}

/// One labeled training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureVector,
    pub label: AttitudeLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub trace: Vec<EpochStats>,
}

/// Features for every record from its true pose and tight box.
pub fn dataset_examples(
    dataset: &Dataset,
    model: &WireframeModel,
    grid: usize,
) -> Result<Vec<Example>> {
    let cam = dataset.camera();
    dataset
        .records
        .par_iter()
        .map(|r| {
            Ok(Example {
                features: silhouette_features(cam, &r.pose, model, &r.bbox, grid)?,
                label: r.label.clone(),
            })
        })
        .collect()
}

struct Gradient {
    w_cls: DMatrix<f64>,
    b_cls: DVector<f64>,
    w_reg: DMatrix<f64>,
    b_reg: DVector<f64>,
}

/// Mean data loss over `batch` (no L2 term) and its gradient.
fn batch_data_loss(
    model: &ToyModel,
    batch: &[&Example],
    att: &AttitudeConfig,
) -> Result<(f64, Gradient)> {
    let (m, d) = (model.m(), model.feature_len());
    let mut g = Gradient {
        w_cls: DMatrix::zeros(m, d),
        b_cls: DVector::zeros(m),
        w_reg: DMatrix::zeros(m, d),
        b_reg: DVector::zeros(m),
    };
    let data_cfg = AttitudeConfig {
        lambda: 0.0,
        ..*att
    };
    let none = ParamBlocks { cls: &[], reg: &[] };
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let (v, w) = model.predict(&ex.features)?;
        let out = losses(&v, &w, &ex.label, none, &data_cfg)?;
        total += out.total;
        let dv = DVector::from_vec(out.total_grad_v()) * scale;
        let dw = DVector::from_vec(out.total_grad_w()) * scale;
        let f = DVector::from_column_slice(&ex.features.values);
        g.w_cls.ger(1.0, &dv, &f, 1.0);
        g.w_reg.ger(1.0, &dw, &f, 1.0);
        g.b_cls += dv;
        g.b_reg += dw;
    }
    Ok((total * scale, g))
}

fn l2_penalty(model: &ToyModel, att: &AttitudeConfig) -> f64 {
    att.lambda * (model.w_cls.norm_squared() + att.mu * model.w_reg.norm_squared())
}

/// Mean `L_total` over `examples` including the L2 term on the weights.
pub fn objective(model: &ToyModel, examples: &[Example], att: &AttitudeConfig) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(batch_data_loss(model, &refs, att)?.0 + l2_penalty(model, att))
}

/// Gradient of [`objective`] over a batch, L2 term included.
fn batch_gradient(
    model: &ToyModel,
    batch: &[&Example],
    att: &AttitudeConfig,
) -> Result<(f64, Gradient)> {
    let (loss, mut g) = batch_data_loss(model, batch, att)?;
    g.w_cls += &model.w_cls * (2.0 * att.lambda);
    g.w_reg += &model.w_reg * (2.0 * att.lambda * att.mu);
    Ok((loss + l2_penalty(model, att), g))
}

/// `grad` is the data-term gradient only. SGD step on it, then the exact
/// proximal step of the L2 term:
/// `W <- (W - lr g) / (1 + 2 lr λ)`. Stable for any `λ`, and a no-op at `lr = 0`.
fn sgd_step(model: &mut ToyModel, grad: &Gradient, lr: f64, att: &AttitudeConfig) {
    if lr == 0.0 {
        return;
    }
    let shrink_cls = 1.0 / (1.0 + 2.0 * lr * att.lambda);
    let shrink_reg = 1.0 / (1.0 + 2.0 * lr * att.lambda * att.mu);
    model
        .w_cls
        .zip_apply(&grad.w_cls, |w, g| *w = (*w - lr * g) * shrink_cls);
    model
        .w_reg
        .zip_apply(&grad.w_reg, |w, g| *w = (*w - lr * g) * shrink_reg);
    model.b_cls.zip_apply(&grad.b_cls, |b, g| *b -= lr * g);
    model.b_reg.zip_apply(&grad.b_reg, |b, g| *b -= lr * g);
}

/// Central finite differences of the batch objective on `probes` randomly
/// chosen parameters, against the analytic gradient.
pub fn check_training_gradient(
    model: &ToyModel,
    batch: &[Example],
    att: &AttitudeConfig,
    probes: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    let refs: Vec<&Example> = batch.iter().collect();
    let (_, g) = batch_gradient(model, &refs, att)?;
    let mut rng = rng::stream(seed, Domain::Training, u64::MAX);
    let (m, d) = (model.m(), model.feature_len());
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let block = probe % 4;
        let (r, c) = (rng.random_range(0..m), rng.random_range(0..d));
        let (analytic, theta, l2_weight) = match block {
            0 => (g.w_cls[(r, c)], model.w_cls[(r, c)], att.lambda),
            1 => (g.b_cls[r], model.b_cls[r], 0.0),
            2 => (g.w_reg[(r, c)], model.w_reg[(r, c)], att.lambda * att.mu),
            _ => (g.b_reg[r], model.b_reg[r], 0.0),
        };
        let data = richardson(
            |delta| {
                let mut p = model.clone();
                match block {
                    0 => p.w_cls[(r, c)] += delta,
                    1 => p.b_cls[r] += delta,
                    2 => p.w_reg[(r, c)] += delta,
                    _ => p.b_reg[r] += delta,
                }
                Ok([batch_data_loss(&p, &refs, att)?.0])
            },
            h,
        )?[0];
        // The L2 sum only changes in the probed coordinate; differencing that
        // term alone keeps a large penalty from swamping the data term.
        let l2 = richardson(|delta| Ok([l2_weight * (theta + delta).powi(2)]), h)?[0];
        let numeric = data + l2;
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if !gradient_agrees(analytic, numeric) {
            return Err(Error::GradientCheck(format!(
                "parameter block {block} ({r}, {c}): analytic {analytic:e} vs numeric {numeric:e}"
            )));
        }
        if scale > 0.0 {
            worst = worst.max(err / scale);
        }
    }
    Ok(GradientCheckReport {
        checked: probes,
        max_rel_error: worst,
    })
}

/// Minibatch SGD on the mean `L_total`. Training is single-threaded so a
/// fixed seed reproduces the parameters bit for bit.
pub fn train_toy(
    dataset: &Dataset,
    model: &WireframeModel,
    book: &AttitudeCodebook,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    dataset.check_codebook(book)?;
    let n = dataset.manifest.n;
    let att = AttitudeConfig {
        m: book.m(),
        n,
        lambda: cfg.lambda,
        mu: cfg.mu,
        ..Default::default()
    };
    att.validate()?;
    let examples = dataset_examples(dataset, model, cfg.grid)?;
    train_on_examples(
        &examples,
        dataset.records.iter().map(|r| r.id),
        book.m(),
        &att,
        cfg,
    )
}

/// The training loop over precomputed examples; `ids` decide the split.
pub fn train_on_examples(
    examples: &[Example],
    ids: impl IntoIterator<Item = u64>,
    m: usize,
    att: &AttitudeConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (ex, id) in examples.iter().zip(ids) {
        if is_validation(id) {
            val.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut toy = ToyModel::random(m, cfg.grid, cfg.init_scale, cfg.seed)?;

    if cfg.self_test {
        let micro: Vec<Example> = train.iter().take(5).cloned().collect();
        let report = check_training_gradient(&toy, &micro, att, 64, cfg.seed)?;
        debug!(
            "gradient self-test: {} probes, max rel error {:.2e}",
            report.checked, report.max_rel_error
        );
    }

    let stats = |toy: &ToyModel, epoch: usize, steps: u64| -> Result<EpochStats> {
        Ok(EpochStats {
            epoch,
            train_loss: objective(toy, &train, att)?,
            val_loss: if val.is_empty() {
                None
            } else {
                Some(objective(toy, &val, att)?)
            },
            steps,
        })
    };
    let mut trace = vec![stats(&toy, 0, 0)?];
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut shuffle = rng::stream(cfg.seed, Domain::Training, epoch as u64);
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (_, grad) = batch_data_loss(&toy, &batch, att)?;
            sgd_step(&mut toy, &grad, cfg.learning_rate(step), att);
            step += 1;
        }
        let s = stats(&toy, epoch, step)?;
        info!(
            "epoch {epoch}: train loss {:.6}, {} steps",
            s.train_loss, step
        );
        trace.push(s);
    }
    toy.check()?;
    toy.steps = step;
    toy.final_loss = trace.last().map(|s| s.train_loss).unwrap_or(f64::INFINITY);
    Ok(TrainOutcome { model: toy, trace })
}

pub fn trace_to_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,steps,train_loss,val_loss\n");
    for s in trace {
        let val = s.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{:e},{}", s.epoch, s.steps, s.train_loss, val);
    }
    out
}
