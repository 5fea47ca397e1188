//! Distillation objectives. Every loss returns its value together with the
//! gradient with respect to the *student* logits; teacher and checkpoint
//! logits are constants.
//!
//! All KL-family losses use the tempered form
//! `T^2 * mean_x KL(softmax(z_teacher / T) || softmax(z_student / T))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::matrix::{argmax, Matrix};
use crate::nn::log_softmax_t;

/// Distillation method registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kl,
    Ls,
    Dkd,
    Mds,
    SelfDistill,
    Se2d,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Kl,
        Method::Ls,
        Method::Dkd,
        Method::Mds,
        Method::SelfDistill,
        Method::Se2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kl => "kl",
            Method::Ls => "ls",
            Method::Dkd => "dkd",
            Method::Mds => "mds",
            Method::SelfDistill => "self_distill",
            Method::Se2d => "se2d",
        }
    }

    /// Whether the method distills from the previous task's student as well.
    pub fn uses_checkpoint(self) -> bool {
        matches!(self, Method::SelfDistill | Method::Se2d)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                invalid(format!("unknown method '{s}', expected one of {}", names.join(", ")))
            })
    }
}

fn default_temperature() -> f64 {
    10.0
}
fn default_dkd_alpha() -> f64 {
    1.0
}
fn default_dkd_beta() -> f64 {
    8.0
}
fn default_mds_low_q() -> f64 {
    0.25
}
fn default_mds_high_q() -> f64 {
    0.75
}

/// A distillation method with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_dkd_alpha")]
    pub dkd_alpha: f64,
    #[serde(default = "default_dkd_beta")]
    pub dkd_beta: f64,
    #[serde(default = "default_mds_low_q")]
    pub mds_low_q: f64,
    #[serde(default = "default_mds_high_q")]
    pub mds_high_q: f64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            temperature: default_temperature(),
            dkd_alpha: default_dkd_alpha(),
            dkd_beta: default_dkd_beta(),
            mds_low_q: default_mds_low_q(),
            mds_high_q: default_mds_high_q(),
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.dkd_alpha < 0.0 || self.dkd_beta < 0.0 {
            return Err(invalid("dkd_alpha and dkd_beta must be nonnegative"));
        }
        check_band(self.mds_low_q, self.mds_high_q)
    }

    /// The loss against the current teacher for this method. Methods whose
    /// teacher term is plain KL (`kl`, `self_distill`, `se2d`) share it.
    pub fn teacher_loss(&self, student: &Matrix, teacher: &Matrix) -> Result<LossResult> {
        let t = self.temperature;
        match self.method {
            Method::Kl | Method::SelfDistill | Method::Se2d => kl_kd_loss(student, teacher, t),
            Method::Ls => ls_loss(student, teacher, t),
            Method::Dkd => dkd_loss(student, teacher, t, self.dkd_alpha, self.dkd_beta),
            Method::Mds => mds_loss(student, teacher, t, self.mds_low_q, self.mds_high_q),
        }
    }
}

/// Scalar loss and its gradient with respect to the student logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub dlogits: Matrix,
}

fn check_pair(student: &Matrix, teacher: &Matrix) -> Result<()> {
    if student.shape() != teacher.shape() {
        return Err(shape(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    Ok(())
}

fn check_band(low: f64, high: f64) -> Result<()> {
    if !(0.0 <= low && low < high && high <= 1.0) {
        return Err(invalid(format!(
            "quantile band must satisfy 0 <= low < high <= 1, got [{low}, {high}]"
        )));
    }
    Ok(())
}

/// Tempered KL distillation loss. An empty batch has loss 0.
pub fn kl_kd_loss(student: &Matrix, teacher: &Matrix, t: f64) -> Result<LossResult> {
    check_pair(student, teacher)?;
    let ls = log_softmax_t(student, t)?;
    let lt = log_softmax_t(teacher, t)?;
    let (b, c) = student.shape();
    let mut dlogits = Matrix::zeros(b, c);
    if b == 0 {
        return Ok(LossResult { loss: 0.0, dlogits });
    }
    let grad_scale = t / b as f64;
    let mut total = 0.0;
    for r in 0..b {
        let (ls_r, lt_r) = (ls.row(r), lt.row(r));
        let mut kl = 0.0;
        for (a, s) in lt_r.iter().zip(ls_r) {
            let p = a.exp();
            if p > 0.0 {
                kl += p * (a - s);
            }
        }
        total += kl.max(0.0);
        for ((g, a), s) in dlogits.row_mut(r).iter_mut().zip(lt_r).zip(ls_r) {
            *g = grad_scale * (s.exp() - a.exp());
        }
    }
    Ok(LossResult {
        loss: t * t * total / b as f64,
        dlogits,
    })
}

const LS_EPS: f64 = 1e-8;

/// Per-row z-score with population standard deviation,
/// `(z - mean) / sqrt(var + 1e-8)`. Constant rows map to zeros.
pub fn logit_standardize(logits: &Matrix) -> Matrix {
    standardize_with_scale(logits).0
}

fn standardize_with_scale(logits: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = logits.clone();
    let mut scales = Vec::with_capacity(out.rows());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = (var + LS_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) / s);
        scales.push(s);
    }
    (out, scales)
}

/// KL distillation on standardized student and teacher logits. The gradient
/// is propagated back through the student's standardization.
pub fn ls_loss(student: &Matrix, teacher: &Matrix, t: f64) -> Result<LossResult> {
    check_pair(student, teacher)?;
    let (ys, scales) = standardize_with_scale(student);
    let yt = logit_standardize(teacher);
    let inner = kl_kd_loss(&ys, &yt, t)?;
    let mut dlogits = inner.dlogits;
    let c = student.cols() as f64;
    for (r, s) in scales.iter().enumerate() {
        let y = ys.row(r);
        let g = dlogits.row_mut(r);
        let g_mean = g.iter().sum::<f64>() / c;
        let gy_mean = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c;
        for (gi, yi) in g.iter_mut().zip(y) {
            *gi = (*gi - g_mean - yi * gy_mean) / s;
        }
    }
    Ok(LossResult {
        loss: inner.loss,
        dlogits,
    })
}

/// Decoupled distillation with the teacher's argmax as target class:
/// `T^2 * mean(alpha * TCKD + beta * NCKD)`.
pub fn dkd_loss(
    student: &Matrix,
    teacher: &Matrix,
    t: f64,
    alpha: f64,
    beta: f64,
) -> Result<LossResult> {
    let betas = vec![beta; student.rows()];
    dkd_loss_weighted(student, teacher, t, alpha, &betas)
}

/// [`dkd_loss`] with a per-sample non-target weight.
pub fn dkd_loss_weighted(
    student: &Matrix,
    teacher: &Matrix,
    t: f64,
    alpha: f64,
    betas: &[f64],
) -> Result<LossResult> {
    check_pair(student, teacher)?;
    let (b, c) = student.shape();
    if betas.len() != b {
        return Err(shape(format!("{} beta weights for {b} rows", betas.len())));
    }
    if c < 2 {
        return Err(invalid("decoupled distillation needs at least two classes"));
    }
    let ls = log_softmax_t(student, t)?;
    let lt = log_softmax_t(teacher, t)?;
    let mut dlogits = Matrix::zeros(b, c);
    if b == 0 {
        return Ok(LossResult { loss: 0.0, dlogits });
    }
    let grad_scale = t / b as f64;
    let mut total = 0.0;
    for (r, &beta) in betas.iter().enumerate() {
        let target = argmax(teacher.row(r));
        let (ls_r, lt_r) = (ls.row(r), lt.row(r));
        let log_rest = |row: &[f64]| {
            let m = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
            let s: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(_, &v)| (v - m).exp())
                .sum();
            m + s.ln()
        };
        let (lp_s, lq_s) = (ls_r[target], log_rest(ls_r));
        let (lp_t, lq_t) = (lt_r[target], log_rest(lt_r));
        let (p_s, q_s, p_t, q_t) = (lp_s.exp(), lq_s.exp(), lp_t.exp(), lq_t.exp());

        let binary = |p: f64, lp: f64, ls: f64| if p > 0.0 { p * (lp - ls) } else { 0.0 };
        let tckd = (binary(p_t, lp_t, lp_s) + binary(q_t, lq_t, lq_s)).max(0.0);
        let mut nckd = 0.0;
        for j in (0..c).filter(|&j| j != target) {
            let a = lt_r[j] - lq_t;
            let s = ls_r[j] - lq_s;
            let p = a.exp();
            if p > 0.0 {
                nckd += p * (a - s);
            }
        }
        let nckd = nckd.max(0.0);
        total += alpha * tckd + beta * nckd;

        let g = dlogits.row_mut(r);
        for j in 0..c {
            let (tc, nc) = if j == target {
                (q_t * p_s - p_t * q_s, 0.0)
            } else {
                let p_hat_s = (ls_r[j] - lq_s).exp();
                let p_hat_t = (lt_r[j] - lq_t).exp();
                (p_t * ls_r[j].exp() - q_t * p_s * p_hat_s, p_hat_s - p_hat_t)
            };
            g[j] = grad_scale * (alpha * tc + beta * nc);
        }
    }
    Ok(LossResult {
        loss: t * t * total / b as f64,
        dlogits,
    })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(prob_row: &[f64]) -> Result<f64> {
    if let Some(bad) = prob_row.iter().find(|&&p| p < 0.0 || !p.is_finite()) {
        return Err(invalid(format!("probability entry {bad} is not a valid mass")));
    }
    Ok(entropy_unchecked(prob_row))
}

pub(crate) fn entropy_unchecked(prob_row: &[f64]) -> f64 {
    let h: f64 = prob_row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Per-row entropy of `softmax(logits / t)`.
pub fn tempered_entropies(logits: &Matrix, t: f64) -> Result<Vec<f64>> {
    let lp = log_softmax_t(logits, t)?;
    Ok(lp
        .iter_rows()
        .map(|row| {
            let h: f64 = row.iter().map(|&l| -l.exp() * l).filter(|v| v.is_finite()).sum();
            h.max(0.0)
        })
        .collect())
}

/// Linear-interpolation empirical quantile of already sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Keep-mask selecting samples of medium difficulty: those whose teacher
/// entropy lies inside the `[low_q, high_q]` empirical quantile band of the
/// batch (inclusive). At least one sample is always kept.
pub fn mds_filter(teacher: &Matrix, low_q: f64, high_q: f64, t: f64) -> Result<Vec<bool>> {
    check_band(low_q, high_q)?;
    if teacher.rows() == 0 {
        return Err(invalid("cannot filter an empty batch"));
    }
    let h = tempered_entropies(teacher, t)?;
    let mut sorted = h.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, low_q);
    let hi = quantile_sorted(&sorted, high_q);
    let mut mask: Vec<bool> = h.iter().map(|&v| v >= lo && v <= hi).collect();
    if !mask.iter().any(|&k| k) {
        // nearest to the band centre, lower entropy first on equal distance;
        // keyed on values only so the choice follows the samples, not their order
        let mid = 0.5 * (lo + hi);
        let key = |v: f64| ((v - mid).abs(), v);
        let best = h
            .iter()
            .map(|&v| key(v))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
            .expect("non-empty batch");
        for (k, &v) in mask.iter_mut().zip(&h) {
            *k = key(v) == best;
        }
    }
    Ok(mask)
}

/// Tempered KL restricted to the rows kept by [`mds_filter`]; dropped rows
/// get a zero gradient and the mean runs over kept rows only.
pub fn mds_loss(
    student: &Matrix,
    teacher: &Matrix,
    t: f64,
    low_q: f64,
    high_q: f64,
) -> Result<LossResult> {
    check_pair(student, teacher)?;
    let mask = mds_filter(teacher, low_q, high_q, t)?;
    masked_kl(student, teacher, t, &mask)
}

pub(crate) fn masked_kl(
    student: &Matrix,
    teacher: &Matrix,
    t: f64,
    mask: &[bool],
) -> Result<LossResult> {
    if mask.iter().all(|&k| k) {
        return kl_kd_loss(student, teacher, t);
    }
    let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let inner = kl_kd_loss(&student.select_rows(&kept), &teacher.select_rows(&kept), t)?;
    let mut dlogits = Matrix::zeros(student.rows(), student.cols());
    for (k, &i) in kept.iter().enumerate() {
        dlogits.row_mut(i).copy_from_slice(inner.dlogits.row(k));
    }
    Ok(LossResult {
        loss: inner.loss,
        dlogits,
    })
}

/// Combined teacher and checkpoint loss with separate gradients for the two
/// logit batches it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Se2dLoss {
    pub loss: f64,
    pub teacher_term: f64,
    pub checkpoint_term: f64,
    /// Gradient w.r.t. `student_all`.
    pub d_all: Matrix,
    /// Gradient w.r.t. `student_ext`.
    pub d_ext: Matrix,
}

/// Teacher distillation over a batch of the whole distillation set plus
/// distillation from the previous student over external samples only. The
/// two terms are summed without weights. An empty external batch leaves the
/// teacher term alone.
pub fn se2d_loss(
    student_all: &Matrix,
    teacher_all: &Matrix,
    student_ext: &Matrix,
    prev_student_ext: &Matrix,
    t: f64,
) -> Result<Se2dLoss> {
    check_pair(student_ext, prev_student_ext)?;
    if student_ext.rows() > 0 && student_ext.cols() != student_all.cols() {
        return Err(shape("external logits have a different class count"));
    }
    let teacher = kl_kd_loss(student_all, teacher_all, t)?;
    let ckpt = kl_kd_loss(student_ext, prev_student_ext, t)?;
    Ok(Se2dLoss {
        loss: teacher.loss + ckpt.loss,
        teacher_term: teacher.loss,
        checkpoint_term: ckpt.loss,
        d_all: teacher.dlogits,
        d_ext: ckpt.dlogits,
    })
}

/// Teacher distillation plus distillation from the previous student, both
/// over the same full batch.
pub fn self_distill_loss(
    student: &Matrix,
    teacher: &Matrix,
    prev_student: &Matrix,
    t: f64,
) -> Result<LossResult> {
    let a = kl_kd_loss(student, teacher, t)?;
    let b = kl_kd_loss(student, prev_student, t)?;
    let mut dlogits = a.dlogits;
    dlogits.add_assign(&b.dlogits)?;
    Ok(LossResult {
        loss: a.loss + b.loss,
        dlogits,
    })
}
