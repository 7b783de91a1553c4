//! Attitude classes: codebook, ground-truth labels, losses and decoding.
//!
//! The attitude space is discretized into `m` Haar-random classes. A label
//! marks the `n` classes nearest to the true attitude (uniform target `ṽ`)
//! and gives them relative weights `w̃` that shrink with angular distance.
//! Decoding picks the top-`n` classes of one logit vector and averages their
//! quaternions with the softmax of the other logit vector on that support.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rotations::{
    angular_distance, sample_uniform_rotations, weighted_average, UnitQuaternion,
};

/// Logit used for classes outside a label's support when labels are turned
/// into logits; keeps the softmax mass outside the support below 1e-9.
pub const LOGIT_FLOOR: f64 = -30.0;

const CODEBOOK_CONVENTION: &str = "subgroup-xyzw";

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeCodebook {
    quats: Vec<UnitQuaternion>,
    seed: u64,
}

impl AttitudeCodebook {
    pub fn generate(m: usize, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!(
                "codebook needs at least 2 classes, got {m}"
            )));
        }
        Ok(Self {
            quats: sample_uniform_rotations(m, seed)?,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.quats.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn quats(&self) -> &[UnitQuaternion] {
        &self.quats
    }

    pub fn get(&self, i: usize) -> Option<&UnitQuaternion> {
        self.quats.get(i)
    }

    /// Header line, then `index w x y z` rows with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# spnkit-codebook m={} seed={} convention={} order=wxyz\n",
            self.m(),
            self.seed,
            CODEBOOK_CONVENTION
        );
        for (i, q) in self.quats.iter().enumerate() {
            let [w, x, y, z] = q.to_array();
            let _ = writeln!(out, "{i} {w:.16e} {x:.16e} {y:.16e} {z:.16e}");
        }
        out
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "empty codebook"))?;
        let mut m = None;
        let mut seed = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("m", v)) => m = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("convention", v)) if v != CODEBOOK_CONVENTION => {
                    return Err(Error::parse(
                        source,
                        1,
                        format!("unsupported convention `{v}`"),
                    ))
                }
                _ => {}
            }
        }
        let (m, seed) = match (m, seed) {
            (Some(m), Some(s)) => (m, s),
            _ => return Err(Error::parse(source, 1, "header must carry m= and seed=")),
        };
        let mut quats = Vec::with_capacity(m);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::parse(source, i + 1, msg);
            if f.len() != 5 {
                return Err(bad("expected `index w x y z`"));
            }
            if f[0].parse::<usize>().ok() != Some(quats.len()) {
                return Err(bad("indices must run 0..m in order"));
            }
            let mut c = [0.0; 4];
            for (k, s) in f[1..].iter().enumerate() {
                c[k] = s.parse().map_err(|_| bad("bad component"))?;
            }
            quats.push(UnitQuaternion::from_unit_array(c).map_err(|e| bad(&e.to_string()))?);
        }
        if quats.len() != m {
            return Err(Error::parse(
                source,
                0,
                format!("header says m={m} but {} rows follow", quats.len()),
            ));
        }
        if m < 2 {
            return Err(Error::parse(source, 1, "codebook needs at least 2 classes"));
        }
        Ok(Self { quats, seed })
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

    /// SHA-256 of the serialized codebook, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn build_codebook(m: usize, seed: u64) -> Result<AttitudeCodebook> {
    AttitudeCodebook::generate(m, seed)
}

/// How target weights fall off with angular distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeightRule {
    /// `(1 - α/π²) / (n - Σ α/π²)`
    #[default]
    Literal,
    /// `(1 - (α/π)²) / (n - Σ (α/π)²)`
    SquaredRatio,
}

impl WeightRule {
    fn penalty(self, alpha: f64) -> f64 {
        match self {
            WeightRule::Literal => alpha / (PI * PI),
            WeightRule::SquaredRatio => (alpha / PI).powi(2),
        }
    }
}

pub fn target_weights(alphas: &[f64], rule: WeightRule) -> Vec<f64> {
    let n = alphas.len() as f64;
    let denom = n - alphas.iter().map(|a| rule.penalty(*a)).sum::<f64>();
    alphas
        .iter()
        .map(|a| (1.0 - rule.penalty(*a)) / denom)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeConfig {
    pub m: usize,
    pub n: usize,
    /// L2 strength.
    pub lambda: f64,
    /// Weight of the regression loss in the total.
    pub mu: f64,
    pub weight_rule: WeightRule,
}

impl Default for AttitudeConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            n: 5,
            lambda: 1e-4,
            mu: 1.0,
            weight_rule: WeightRule::Literal,
        }
    }
}

impl AttitudeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > self.m {
            return Err(Error::invalid(format!(
                "need 1 <= n <= m, got n={} m={}",
                self.n, self.m
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid("mu must be finite and positive"));
        }
        Ok(())
    }
}

/// Ground truth for one attitude: the `n` nearest classes, their distances
/// (ascending) and target weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeLabel {
    pub m: usize,
    pub omega: Vec<usize>,
    pub alphas: Vec<f64>,
    pub w_target: Vec<f64>,
}

impl AttitudeLabel {
    pub fn n(&self) -> usize {
        self.omega.len()
    }

    /// Dense `ṽ`: `1/n` on the support, zero elsewhere.
    pub fn v_target(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        let share = 1.0 / self.n() as f64;
        for &i in &self.omega {
            v[i] = share;
        }
        v
    }

    pub fn max_alpha(&self) -> f64 {
        self.alphas.iter().cloned().fold(0.0, f64::max)
    }

    /// The label written as logits: `log ṽ` and `log w̃` on the support,
    /// [`LOGIT_FLOOR`] elsewhere.
    pub fn as_logits(&self) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![LOGIT_FLOOR; self.m];
        let mut w = vec![LOGIT_FLOOR; self.m];
        let lv = (1.0 / self.n() as f64).ln();
        for (&i, wt) in self.omega.iter().zip(&self.w_target) {
            v[i] = lv;
            w[i] = wt.ln();
        }
        (v, w)
    }

    fn check(&self, m: usize, n: usize) -> Result<()> {
        if self.m != m || self.n() != n || self.alphas.len() != n || self.w_target.len() != n {
            return Err(Error::invalid(format!(
                "label (m={}, n={}) does not match config (m={m}, n={n})",
                self.m,
                self.n()
            )));
        }
        if self.omega.iter().any(|&i| i >= m) {
            return Err(Error::invalid("label index outside the codebook"));
        }
        Ok(())
    }
}

pub fn make_label(
    book: &AttitudeCodebook,
    q_true: &UnitQuaternion,
    n: usize,
) -> Result<AttitudeLabel> {
    make_label_with(book, q_true, n, WeightRule::Literal)
}

/// Nearest `n` classes by angular distance; ties go to the lower index.
pub fn make_label_with(
    book: &AttitudeCodebook,
    q_true: &UnitQuaternion,
    n: usize,
    rule: WeightRule,
) -> Result<AttitudeLabel> {
    if n < 1 || n > book.m() {
        return Err(Error::invalid(format!("n={n} outside 1..={}", book.m())));
    }
    let mut scored: Vec<(f64, usize)> = book
        .quats()
        .iter()
        .enumerate()
        .map(|(i, q)| (angular_distance(q, q_true), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, by_distance);
        scored.truncate(n);
    }
    scored.sort_by(by_distance);
    let alphas: Vec<f64> = scored.iter().map(|s| s.0).collect();
    Ok(AttitudeLabel {
        m: book.m(),
        omega: scored.iter().map(|s| s.1).collect(),
        w_target: target_weights(&alphas, rule),
        alphas,
    })
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let max = values.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax. With a support set, normalization runs over those
/// indices only and every other entry is zero.
pub fn softmax(x: &[f64], support: Option<&[usize]>) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let all: Vec<usize>;
    let idx = match support {
        Some(s) => s,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::invalid("softmax over an empty support"));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
        return Err(Error::invalid(format!("support index {bad} out of range")));
    }
    let max = idx.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; x.len()];
    let mut total = 0.0;
    for &i in idx {
        let e = (x[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in idx {
        out[i] /= total;
    }
    Ok(out)
}

/// The two parameter blocks regularized by the losses: the weights that
/// produce `v` and the weights that produce `w`.
#[derive(Debug, Clone, Copy)]
pub struct ParamBlocks<'a> {
    pub cls: &'a [f64],
    pub reg: &'a [f64],
}

/// Loss values and their analytic gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub class: f64,
    pub reg: f64,
    pub total: f64,
    /// `∂L_class/∂v`
    pub class_grad_v: Vec<f64>,
    /// `∂L_class/∂θ_cls`
    pub class_grad_theta: Vec<f64>,
    /// `∂L_reg/∂w`
    pub reg_grad_w: Vec<f64>,
    /// `∂L_reg/∂θ_reg`
    pub reg_grad_theta: Vec<f64>,
    mu: f64,
}

impl LossBreakdown {
    pub fn total_grad_v(&self) -> Vec<f64> {
        self.class_grad_v.clone()
    }

    pub fn total_grad_w(&self) -> Vec<f64> {
        self.reg_grad_w.iter().map(|g| self.mu * g).collect()
    }

    pub fn total_grad_theta_cls(&self) -> Vec<f64> {
        self.class_grad_theta.clone()
    }

    pub fn total_grad_theta_reg(&self) -> Vec<f64> {
        self.reg_grad_theta.iter().map(|g| self.mu * g).collect()
    }
}

/// `L_class = -Σ ṽ_j log σ(v)_j + λ‖θ_cls‖²`,
/// `L_reg = -Σ_{j∈Ω} w̃_j log softmax(w|Ω)_j + λ‖θ_reg‖²`,
/// `L_total = L_class + μ L_reg`.
pub fn losses(
    v: &[f64],
    w: &[f64],
    label: &AttitudeLabel,
    params: ParamBlocks<'_>,
    cfg: &AttitudeConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    label.check(cfg.m, cfg.n)?;
    if v.len() != cfg.m || w.len() != cfg.m {
        return Err(Error::invalid(format!(
            "logit lengths ({}, {}) do not match m={}",
            v.len(),
            w.len(),
            cfg.m
        )));
    }
    if v.iter()
        .chain(w)
        .chain(params.cls)
        .chain(params.reg)
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("loss input"));
    }

    let share = 1.0 / label.n() as f64;
    let lse_v = log_sum_exp(v.iter());
    let mut class = -label
        .omega
        .iter()
        .map(|&i| share * (v[i] - lse_v))
        .sum::<f64>();
    let mut class_grad_v: Vec<f64> = v.iter().map(|x| (x - lse_v).exp()).collect();
    for &i in &label.omega {
        class_grad_v[i] -= share;
    }

    let support_logits: Vec<f64> = label.omega.iter().map(|&i| w[i]).collect();
    let lse_w = log_sum_exp(support_logits.iter());
    let target_mass: f64 = label.w_target.iter().sum();
    let mut reg = 0.0;
    let mut reg_grad_w = vec![0.0; cfg.m];
    for ((&i, &wt), &logit) in label.omega.iter().zip(&label.w_target).zip(&support_logits) {
        reg -= wt * (logit - lse_w);
        reg_grad_w[i] = (logit - lse_w).exp() * target_mass - wt;
    }

    let l2 = |theta: &[f64]| theta.iter().map(|x| x * x).sum::<f64>();
    class += cfg.lambda * l2(params.cls);
    reg += cfg.lambda * l2(params.reg);
    let scaled = |theta: &[f64]| {
        theta
            .iter()
            .map(|x| 2.0 * cfg.lambda * x)
            .collect::<Vec<_>>()
    };

    Ok(LossBreakdown {
        class,
        reg,
        total: class + cfg.mu * reg,
        class_grad_v,
        class_grad_theta: scaled(params.cls),
        reg_grad_w,
        reg_grad_theta: scaled(params.reg),
        mu: cfg.mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Relative tolerance of the finite-difference gradient checks.
pub const GRAD_REL_TOL: f64 = 1e-5;
/// Absolute slack for gradients that are zero up to rounding.
pub const GRAD_ABS_FLOOR: f64 = 1e-9;

pub(crate) fn gradient_agrees(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= GRAD_REL_TOL * analytic.abs().max(numeric.abs()) + GRAD_ABS_FLOOR
}

/// Central finite differences of `L_class`, `L_reg` and `L_total` with
/// respect to every entry of `v`, `w`, `θ_cls` and `θ_reg`, on `instances`
/// random labels and logits.
/// Central difference extrapolated from steps `h` and `h/2`, for each output
/// of `f(delta)`. Truncation error is fourth order in `h`.
pub(crate) fn richardson<const K: usize>(
    mut f: impl FnMut(f64) -> Result<[f64; K]>,
    h: f64,
) -> Result<[f64; K]> {
    let mut central = |h: f64| -> Result<[f64; K]> {
        let (p, m) = (f(h)?, f(-h)?);
        Ok(std::array::from_fn(|k| (p[k] - m[k]) / (2.0 * h)))
    };
    let (coarse, fine) = (central(h)?, central(h / 2.0)?);
    Ok(std::array::from_fn(|k| (4.0 * fine[k] - coarse[k]) / 3.0))
}

pub fn check_loss_gradients(
    m: usize,
    n: usize,
    instances: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    use rand::Rng;
    let book = AttitudeCodebook::generate(m, seed)?;
    let cfg = AttitudeConfig {
        m,
        n,
        lambda: 0.01,
        mu: 0.7,
        ..Default::default()
    };
    let h = 1e-3;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = crate::rng::stream(seed, crate::rng::Domain::Harness, k as u64);
        let q = crate::rotations::draw_uniform_rotation(&mut rng);
        let label = make_label(&book, &q, n)?;
        let mut draw = |len: usize| {
            (0..len)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect::<Vec<f64>>()
        };
        let blocks = [draw(m), draw(m), draw(8), draw(8)];
        let eval = |b: &[Vec<f64>; 4]| {
            losses(
                &b[0],
                &b[1],
                &label,
                ParamBlocks {
                    cls: &b[2],
                    reg: &b[3],
                },
                &cfg,
            )
        };
        let base = eval(&blocks)?;
        let analytic: [[Vec<f64>; 4]; 3] = [
            [
                base.class_grad_v.clone(),
                vec![0.0; m],
                base.class_grad_theta.clone(),
                vec![0.0; 8],
            ],
            [
                vec![0.0; m],
                base.reg_grad_w.clone(),
                vec![0.0; 8],
                base.reg_grad_theta.clone(),
            ],
            [
                base.total_grad_v(),
                base.total_grad_w(),
                base.total_grad_theta_cls(),
                base.total_grad_theta_reg(),
            ],
        ];
        for (b, block) in blocks.iter().enumerate() {
            for i in 0..block.len() {
                let numeric = richardson(
                    |delta| {
                        let mut x = blocks.clone();
                        x[b][i] += delta;
                        let l = eval(&x)?;
                        Ok([l.class, l.reg, l.total])
                    },
                    h,
                )?;
                for (which, num) in numeric.iter().enumerate() {
                    let a = analytic[which][b][i];
                    if !gradient_agrees(a, *num) {
                        return Err(Error::GradientCheck(format!(
                            "instance {k}, loss {which}, block {b}, entry {i}: analytic {a:e} vs numeric {num:e}"
                        )));
                    }
                    let scale = a.abs().max(num.abs());
                    if scale > 0.0 {
                        worst = worst.max((a - num).abs() / scale);
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(GradientCheckReport {
        checked,
        max_rel_error: worst,
    })
}

/// Indices of the `n` largest entries, largest first; ties go to the lower index.
pub fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAttitude {
    pub q: UnitQuaternion,
    /// Selected classes, most probable first.
    pub omega: Vec<usize>,
    /// Averaging weights for `omega`, summing to one.
    pub gamma: Vec<f64>,
}

/// Top-`n` classes of `σ(v)` (same order as `v`), weights `softmax(w|Ω)`,
/// then the weighted quaternion average of the selected classes.
pub fn decode_attitude(
    v: &[f64],
    w: &[f64],
    book: &AttitudeCodebook,
    n: usize,
) -> Result<DecodedAttitude> {
    if v.len() != book.m() || w.len() != book.m() {
        return Err(Error::invalid(format!(
            "logit lengths ({}, {}) do not match codebook size {}",
            v.len(),
            w.len(),
            book.m()
        )));
    }
    if n < 1 || n > book.m() {
        return Err(Error::invalid(format!("n={n} outside 1..={}", book.m())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("class logits"));
    }
    let omega = top_n(v, n);
    let weights = softmax(w, Some(&omega))?;
    let gamma: Vec<f64> = omega.iter().map(|&i| weights[i]).collect();
    let quats: Vec<UnitQuaternion> = omega.iter().map(|&i| book.quats()[i]).collect();
    let q = weighted_average(&quats, &gamma)?;
    Ok(DecodedAttitude { q, omega, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use crate::rotations::draw_uniform_rotation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn random_label(
        book: &AttitudeCodebook,
        seed: u64,
        n: usize,
    ) -> (UnitQuaternion, AttitudeLabel) {
        let q = draw_uniform_rotation(&mut rng::stream(seed, Domain::Harness, 0));
        (q, make_label(book, &q, n).unwrap())
    }

    #[test]
    fn codebook_is_deterministic_and_round_trips() {
        let a = build_codebook(1000, 7).unwrap();
        let b = build_codebook(1000, 7).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.digest(), b.digest());
        let parsed = AttitudeCodebook::parse(&a.to_text(), &PathBuf::from("mem")).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(build_codebook(2, 99).unwrap().m(), 2);
        assert!(build_codebook(1, 99).is_err());
        assert!(a
            .to_text()
            .starts_with("# spnkit-codebook m=1000 seed=7 convention=subgroup-xyzw"));
    }

    #[test]
    fn codebook_classes_are_distinct() {
        let book = build_codebook(1000, 7).unwrap();
        let qs = book.quats();
        let mut min = f64::INFINITY;
        for i in 0..qs.len() {
            for j in (i + 1)..qs.len() {
                min = min.min(angular_distance(&qs[i], &qs[j]));
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn codebook_parse_errors() {
        let p = PathBuf::from("mem");
        assert!(AttitudeCodebook::parse("", &p).is_err());
        assert!(AttitudeCodebook::parse("# m=2 seed=1\n0 1 0 0 0\n", &p).is_err());
        assert!(AttitudeCodebook::parse("# m=2 seed=1\n0 1 0 0 0\n2 1 0 0 0\n", &p).is_err());
        assert!(AttitudeCodebook::parse("# m=2 seed=1\n0 1 0 0 0\n1 0 1 0 0\n", &p).is_ok());
    }

    #[test]
    fn label_on_a_class() {
        let book = build_codebook(64, 3).unwrap();
        let q = book.quats()[17];
        let l = make_label(&book, &q, 1).unwrap();
        assert_eq!(l.omega, vec![17]);
        assert!(l.alphas[0] < 1e-15);
        assert_relative_eq!(l.w_target[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weight_rule_fixtures() {
        let w = target_weights(&[0.4, 0.4], WeightRule::Literal);
        assert_eq!(w, vec![0.5, 0.5]);
        let w = target_weights(&[0.0, PI / 4.0], WeightRule::Literal);
        // α/π² = 1/(4π)
        let k = 1.0 / (4.0 * PI);
        assert_relative_eq!(w[0], 1.0 / (2.0 - k), epsilon = 1e-15);
        assert_relative_eq!(w[1], (1.0 - k) / (2.0 - k), epsilon = 1e-15);
        assert_relative_eq!(w[0], 0.52072, epsilon = 5e-6);
        assert_relative_eq!(w[1], 0.47928, epsilon = 5e-6);
        let s = target_weights(&[0.0, PI / 4.0], WeightRule::SquaredRatio);
        assert_relative_eq!(s[0], 1.0 / (2.0 - 1.0 / 16.0), epsilon = 1e-15);
    }

    #[test]
    fn label_invariants() {
        let book = build_codebook(1000, 1).unwrap();
        for seed in 0..50 {
            let (_, l) = random_label(&book, seed, 5);
            let v = l.v_target();
            assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_eq!(v.iter().filter(|x| **x == 0.2).count(), 5);
            assert!((l.w_target.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(l.w_target.iter().all(|w| *w > 0.0));
            for k in 1..5 {
                assert!(l.alphas[k - 1] <= l.alphas[k]);
                assert!(l.w_target[k - 1] >= l.w_target[k]);
            }
        }
    }

    #[test]
    fn nearest_class_matches_brute_force_scan() {
        let book = build_codebook(1000, 4).unwrap();
        let mut rng = rng::stream(8, Domain::Harness, 0);
        let (mut from_label, mut from_scan) = (0.0, 0.0);
        for _ in 0..1000 {
            let q = draw_uniform_rotation(&mut rng);
            from_label += make_label(&book, &q, 1).unwrap().alphas[0];
            from_scan += book
                .quats()
                .iter()
                .map(|c| {
                    let r1 = c.to_rotation_matrix().0;
                    let r2 = q.to_rotation_matrix().0;
                    (((r1.transpose() * r2).trace() - 1.0) / 2.0)
                        .clamp(-1.0, 1.0)
                        .acos()
                })
                .fold(f64::INFINITY, f64::min);
        }
        assert!((from_label - from_scan).abs() / from_scan < 0.05);
    }

    #[test]
    fn softmax_fixtures() {
        let s = softmax(&[2.0; 8], None).unwrap();
        assert!(s.iter().all(|x| (x - 0.125).abs() < 1e-15));
        let s = softmax(&[0.0, 3f64.ln(), 100.0], Some(&[0, 1])).unwrap();
        assert_relative_eq!(s[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.75, epsilon = 1e-15);
        assert_eq!(s[2], 0.0);
        assert!(softmax(&[1.0], Some(&[])).is_err());
        assert!(softmax(&[f64::NAN], None).is_err());
        assert!(softmax(&[1.0, 2.0], Some(&[2])).is_err());
        let big = softmax(&[1000.0, 999.0], None).unwrap();
        assert!(big.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn losses_at_their_targets() {
        let book = build_codebook(64, 2).unwrap();
        let cfg = AttitudeConfig {
            m: 64,
            n: 3,
            lambda: 0.0,
            ..Default::default()
        };
        let (_, l) = random_label(&book, 5, 3);
        // logits reproducing the targets exactly
        let mut v = vec![-1e3; 64];
        let mut w = vec![0.0; 64];
        for (&i, wt) in l.omega.iter().zip(&l.w_target) {
            v[i] = 0.0;
            w[i] = wt.ln();
        }
        let empty = ParamBlocks { cls: &[], reg: &[] };
        let out = losses(&v, &w, &l, empty, &cfg).unwrap();
        assert_relative_eq!(out.class, 3f64.ln(), epsilon = 1e-12);
        let entropy: f64 = -l.w_target.iter().map(|p| p * p.ln()).sum::<f64>();
        assert_relative_eq!(out.reg, entropy, epsilon = 1e-12);
        assert_relative_eq!(out.total, out.class + out.reg, epsilon = 1e-15);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let book = build_codebook(32, 6).unwrap();
        let (_, l) = random_label(&book, 13, 4);
        let cfg = AttitudeConfig {
            m: 32,
            n: 4,
            lambda: 0.05,
            mu: 0.7,
            ..Default::default()
        };
        let mut r = rng::stream(2, Domain::Harness, 1);
        let mut draw = |k: usize| {
            (0..k)
                .map(|_| rand::Rng::random_range(&mut r, -2.0..2.0))
                .collect::<Vec<f64>>()
        };
        let (v, w, tc, tr) = (draw(32), draw(32), draw(6), draw(5));
        let eval = |v: &[f64], w: &[f64], tc: &[f64], tr: &[f64]| {
            losses(v, w, &l, ParamBlocks { cls: tc, reg: tr }, &cfg).unwrap()
        };
        let base = eval(&v, &w, &tc, &tr);
        let h = 1e-6;
        let central = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        let bump = |x: &[f64], i: usize, d: f64| {
            let mut y = x.to_vec();
            y[i] += d;
            y
        };
        for i in 0..32 {
            let gv = central(&|d| eval(&bump(&v, i, d), &w, &tc, &tr).total);
            let gw = central(&|d| eval(&v, &bump(&w, i, d), &tc, &tr).total);
            assert!((gv - base.total_grad_v()[i]).abs() < 1e-7);
            assert!((gw - base.total_grad_w()[i]).abs() < 1e-7);
        }
        for i in 0..6 {
            let g = central(&|d| eval(&v, &w, &bump(&tc, i, d), &tr).total);
            assert!((g - base.total_grad_theta_cls()[i]).abs() < 1e-7);
        }
        for i in 0..5 {
            let g = central(&|d| eval(&v, &w, &tc, &bump(&tr, i, d)).total);
            assert!((g - base.total_grad_theta_reg()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn loss_gradient_suite_passes() {
        let rep = check_loss_gradients(16, 3, 3, 1).unwrap();
        assert_eq!(rep.checked, 3 * 3 * (16 + 16 + 8 + 8));
        assert!(rep.max_rel_error < 1e-5);
    }

    #[test]
    fn losses_reject_mismatch() {
        let book = build_codebook(64, 2).unwrap();
        let (_, l) = random_label(&book, 5, 3);
        let p = ParamBlocks { cls: &[], reg: &[] };
        let cfg = AttitudeConfig {
            m: 64,
            n: 4,
            ..Default::default()
        };
        assert!(losses(&[0.0; 64], &[0.0; 64], &l, p, &cfg).is_err());
        let cfg = AttitudeConfig {
            m: 64,
            n: 3,
            ..Default::default()
        };
        assert!(losses(&[0.0; 63], &[0.0; 64], &l, p, &cfg).is_err());
        assert!(losses(&[0.0; 64], &[0.0; 64], &l, p, &cfg).is_ok());
    }

    #[test]
    fn decode_single_and_pair() {
        let book = build_codebook(64, 2).unwrap();
        let mut v = vec![0.0; 64];
        v[9] = 50.0;
        let d = decode_attitude(&v, &vec![0.0; 64], &book, 1).unwrap();
        assert_eq!(d.omega, vec![9]);
        assert!(d.q.same_rotation(&book.quats()[9], 1e-7));

        v[30] = 50.0;
        let d = decode_attitude(&v, &vec![0.3; 64], &book, 2).unwrap();
        assert_eq!(d.omega, vec![9, 30]);
        assert_eq!(d.gamma, vec![0.5, 0.5]);
        let plain = weighted_average(&[book.quats()[9], book.quats()[30]], &[1.0, 1.0]).unwrap();
        assert!(d.q.same_rotation(&plain, 1e-12));
    }

    #[test]
    fn top_n_breaks_ties_by_index() {
        assert_eq!(top_n(&[1.0, 3.0, 3.0, 2.0, 3.0], 2), vec![1, 2]);
        assert_eq!(top_n(&[0.0; 4], 3), vec![0, 1, 2]);
    }

    #[test]
    fn decode_of_label_logits_within_label_radius() {
        let book = build_codebook(1000, 11).unwrap();
        for seed in 0..100 {
            let (q, l) = random_label(&book, seed, 5);
            let (v, w) = l.as_logits();
            let d = decode_attitude(&v, &w, &book, 5).unwrap();
            let mut sorted = d.omega.clone();
            sorted.sort();
            let mut truth = l.omega.clone();
            truth.sort();
            assert_eq!(sorted, truth);
            assert!(angular_distance(&d.q, &q) <= l.max_alpha());
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(x in proptest::collection::vec(-20.0..20.0f64, 1..12), c in -50.0..50.0f64) {
            let a = softmax(&x, None).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted, None).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn class_loss_bounded_by_target_entropy(v in proptest::collection::vec(-5.0..5.0f64, 16), seed in 0u64..1000) {
            let book = build_codebook(16, 1).unwrap();
            let (_, l) = random_label(&book, seed, 3);
            let cfg = AttitudeConfig { m: 16, n: 3, lambda: 0.0, ..Default::default() };
            let out = losses(&v, &v, &l, ParamBlocks { cls: &[], reg: &[] }, &cfg).unwrap();
            prop_assert!(out.class >= 3f64.ln() - 1e-12);
        }
    }
}
