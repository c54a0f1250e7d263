//! Calibration objectives with analytic gradients.
//!
//! Every loss is the mean cross-entropy `-1/n sum_i sum_k target_ik log q_ik`
//! of a parametric map `q_i = softmax(f(z_i))` against aligned targets. One-hot
//! targets give the voted-label losses, annotator distributions give the soft
//! losses; the code paths are shared.

use crate::error::{Error, Result};
use crate::prob::{entropy_of, log_softmax_into, softmax_into, Distribution, LogitVector};

/// Row-major `n x K` copies of logits and targets.
#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub k: usize,
    pub n: usize,
    pub logits: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new(logits: &[LogitVector], targets: &[Distribution]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Input("calibration set is empty".into()));
        }
        if logits.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} logit rows but {} targets",
                logits.len(),
                targets.len()
            )));
        }
        let k = logits[0].k();
        if let Some(i) = logits.iter().position(|z| z.k() != k) {
            return Err(Error::Input(format!(
                "logit row {i} has {} classes, expected {k}",
                logits[i].k()
            )));
        }
        if let Some(i) = targets.iter().position(|t| t.k() != k) {
            return Err(Error::Input(format!(
                "target {i} has {} classes, expected {k}",
                targets[i].k()
            )));
        }
        Ok(Batch {
            k,
            n: logits.len(),
            logits: logits
                .iter()
                .flat_map(|z| z.values().iter().copied())
                .collect(),
            targets: targets
                .iter()
                .flat_map(|t| t.probs().iter().copied())
                .collect(),
        })
    }

    fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.k..(i + 1) * self.k;
        (&self.logits[r.clone()], &self.targets[r])
    }

    /// Mean target entropy: the floor any calibrator's loss can reach.
    pub fn mean_target_entropy(&self) -> f64 {
        (0..self.n).map(|i| entropy_of(self.row(i).1)).sum::<f64>() / self.n as f64
    }
}

/// Cross-entropy of `softmax(u)` against `target`; writes `softmax(u) - target`.
fn ce_with_residual(u: &[f64], target: &[f64], scratch: &mut [f64], residual: &mut [f64]) -> f64 {
    log_softmax_into(u, scratch);
    let mut loss = 0.0;
    for ((r, lq), t) in residual.iter_mut().zip(scratch.iter()).zip(target) {
        if *t > 0.0 {
            loss -= t * lq;
        }
        *r = lq.exp() - t;
    }
    loss
}

fn ce(u: &[f64], target: &[f64], scratch: &mut [f64]) -> f64 {
    log_softmax_into(u, scratch);
    -target
        .iter()
        .zip(scratch.iter())
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, lq)| t * lq)
        .sum::<f64>()
}

/// Single-temperature loss `T -> mean CE(softmax(z / T), target)`.
#[derive(Debug, Clone)]
pub struct TemperatureLoss {
    batch: Batch,
}

impl TemperatureLoss {
    pub fn new(logits: &[LogitVector], targets: &[Distribution]) -> Result<Self> {
        Ok(TemperatureLoss {
            batch: Batch::new(logits, targets)?,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        let b = &self.batch;
        let mut u = vec![0.0; b.k];
        let mut scratch = vec![0.0; b.k];
        let mut total = 0.0;
        for i in 0..b.n {
            let (z, target) = b.row(i);
            for (ui, zi) in u.iter_mut().zip(z) {
                *ui = zi / t;
            }
            total += ce(&u, target, &mut scratch);
        }
        total / b.n as f64
    }

    /// `dL/dT = mean_i (E_target[z_i] - E_q[z_i]) / T^2`.
    pub fn derivative(&self, t: f64) -> f64 {
        let b = &self.batch;
        let mut q = vec![0.0; b.k];
        let mut total = 0.0;
        for i in 0..b.n {
            let (z, target) = b.row(i);
            softmax_into(z, t, &mut q);
            let diff: f64 = z
                .iter()
                .zip(target)
                .zip(&q)
                .map(|((zk, tk), qk)| zk * (tk - qk))
                .sum();
            total += diff;
        }
        total / (b.n as f64 * t * t)
    }

    pub fn mean_target_entropy(&self) -> f64 {
        self.batch.mean_target_entropy()
    }
}

/// Diagonal affine loss over `[w_0..w_K, b_0..b_K]`, `q = softmax(w * z + b)`.
#[derive(Debug, Clone)]
pub struct DiagAffineLoss {
    batch: Batch,
}

impl DiagAffineLoss {
    pub fn new(logits: &[LogitVector], targets: &[Distribution]) -> Result<Self> {
        Ok(DiagAffineLoss {
            batch: Batch::new(logits, targets)?,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.batch.k
    }

    pub fn identity(&self) -> Vec<f64> {
        let k = self.batch.k;
        let mut p = vec![1.0; k];
        p.extend(std::iter::repeat_n(0.0, k));
        p
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.eval(params, None)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        self.eval(params, Some(&mut g));
        g
    }

    fn eval(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let b = &self.batch;
        let (w, bias) = params.split_at(b.k);
        let mut u = vec![0.0; b.k];
        let mut scratch = vec![0.0; b.k];
        let mut residual = vec![0.0; b.k];
        let mut total = 0.0;
        for i in 0..b.n {
            let (z, target) = b.row(i);
            for k in 0..b.k {
                u[k] = w[k] * z[k] + bias[k];
            }
            match grad.as_deref_mut() {
                Some(g) => {
                    total += ce_with_residual(&u, target, &mut scratch, &mut residual);
                    for k in 0..b.k {
                        g[k] += residual[k] * z[k];
                        g[b.k + k] += residual[k];
                    }
                }
                None => total += ce(&u, target, &mut scratch),
            }
        }
        let n = b.n as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v /= n);
        }
        total / n
    }

    pub fn mean_target_entropy(&self) -> f64 {
        self.batch.mean_target_entropy()
    }
}

/// Per-class temperature loss over `theta`, with `T_k = exp(theta_k)`.
#[derive(Debug, Clone)]
pub struct VectorScalingLoss {
    batch: Batch,
}

impl VectorScalingLoss {
    pub fn new(logits: &[LogitVector], targets: &[Distribution]) -> Result<Self> {
        Ok(VectorScalingLoss {
            batch: Batch::new(logits, targets)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.batch.k
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.eval(theta, None)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.eval(theta, Some(&mut g));
        g
    }

    fn eval(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let b = &self.batch;
        let inv_t: Vec<f64> = theta.iter().map(|v| (-v).exp()).collect();
        let mut u = vec![0.0; b.k];
        let mut scratch = vec![0.0; b.k];
        let mut residual = vec![0.0; b.k];
        let mut total = 0.0;
        for i in 0..b.n {
            let (z, target) = b.row(i);
            for k in 0..b.k {
                u[k] = z[k] * inv_t[k];
            }
            match grad.as_deref_mut() {
                Some(g) => {
                    total += ce_with_residual(&u, target, &mut scratch, &mut residual);
                    for k in 0..b.k {
                        g[k] -= residual[k] * u[k];
                    }
                }
                None => total += ce(&u, target, &mut scratch),
            }
        }
        let n = b.n as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v /= n);
        }
        total / n
    }

    pub fn mean_target_entropy(&self) -> f64 {
        self.batch.mean_target_entropy()
    }
}

/// Full affine loss over row-major `W` (K x K) followed by `b`, with the
/// off-diagonal and intercept penalty
/// `lambda * (sum_{i != j} W_ij^2 / (K (K - 1)) + sum_j b_j^2 / K)`.
#[derive(Debug, Clone)]
pub struct DirichletLoss {
    batch: Batch,
    lambda: f64,
}

impl DirichletLoss {
    pub fn new(logits: &[LogitVector], targets: &[Distribution], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "ODIR lambda must be non-negative, got {lambda}"
            )));
        }
        Ok(DirichletLoss {
            batch: Batch::new(logits, targets)?,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.batch.k * (self.batch.k + 1)
    }

    pub fn identity(&self) -> Vec<f64> {
        let k = self.batch.k;
        let mut p = vec![0.0; self.dim()];
        for i in 0..k {
            p[i * k + i] = 1.0;
        }
        p
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.eval(params, None)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        self.eval(params, Some(&mut g));
        g
    }

    /// Cross-entropy part only, without the ODIR penalty.
    pub fn data_loss(&self, params: &[f64]) -> f64 {
        DirichletLoss {
            batch: self.batch.clone(),
            lambda: 0.0,
        }
        .value(params)
    }

    fn eval(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let b = &self.batch;
        let k = b.k;
        let (w, bias) = params.split_at(k * k);
        let mut u = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        let mut residual = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..b.n {
            let (z, target) = b.row(i);
            for r in 0..k {
                u[r] = bias[r]
                    + w[r * k..(r + 1) * k]
                        .iter()
                        .zip(z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
            match grad.as_deref_mut() {
                Some(g) => {
                    total += ce_with_residual(&u, target, &mut scratch, &mut residual);
                    for r in 0..k {
                        for c in 0..k {
                            g[r * k + c] += residual[r] * z[c];
                        }
                        g[k * k + r] += residual[r];
                    }
                }
                None => total += ce(&u, target, &mut scratch),
            }
        }
        let n = b.n as f64;
        let mut loss = total / n;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v /= n);
        }
        if self.lambda > 0.0 {
            let off_scale = if k > 1 {
                self.lambda / (k * (k - 1)) as f64
            } else {
                0.0
            };
            let b_scale = self.lambda / k as f64;
            for r in 0..k {
                for c in 0..k {
                    if r != c {
                        let v = w[r * k + c];
                        loss += off_scale * v * v;
                        if let Some(g) = grad.as_deref_mut() {
                            g[r * k + c] += 2.0 * off_scale * v;
                        }
                    }
                }
                loss += b_scale * bias[r] * bias[r];
                if let Some(g) = grad.as_deref_mut() {
                    g[k * k + r] += 2.0 * b_scale * bias[r];
                }
            }
        }
        loss
    }

    pub fn mean_target_entropy(&self) -> f64 {
        self.batch.mean_target_entropy()
    }
}

/// Number of logit-derived features driving the adaptive temperature.
pub const ATS_FEATURES: usize = 4;

/// Minimum per-instance temperature of the adaptive map.
pub const ATS_FLOOR: f64 = 0.1;

/// `[max_k z_k, H(softmax(z)) / ln K, p_(1) - p_(2), p_(1)]`.
pub fn ats_features(z: &[f64]) -> [f64; ATS_FEATURES] {
    let k = z.len();
    let mut p = vec![0.0; k];
    softmax_into(z, 1.0, &mut p);
    let max_z = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in &p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    [
        max_z,
        entropy_of(&p) / (k as f64).ln(),
        first - second,
        first,
    ]
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-instance temperature `softplus(w . phi + b) + 0.1`.
pub fn ats_temperature(params: &[f64], phi: &[f64; ATS_FEATURES]) -> f64 {
    let a = params[ATS_FEATURES]
        + params[..ATS_FEATURES]
            .iter()
            .zip(phi)
            .map(|(w, f)| w * f)
            .sum::<f64>();
    softplus(a) + ATS_FLOOR
}

/// Bias that makes the adaptive temperature exactly 1 when `w = 0`.
pub fn ats_identity_bias() -> f64 {
    (1.0 - ATS_FLOOR).exp_m1().ln()
}

/// Voted-label NLL of `softmax(z_i / T_i)` plus `lambda * ||w||^2`, over
/// `[w_0..w_3, b]`.
#[derive(Debug, Clone)]
pub struct AtsLoss {
    k: usize,
    logits: Vec<f64>,
    labels: Vec<usize>,
    features: Vec<[f64; ATS_FEATURES]>,
    lambda: f64,
}

impl AtsLoss {
    pub fn new(logits: &[LogitVector], voted_labels: &[usize], lambda: f64) -> Result<Self> {
        if logits.is_empty() || logits.len() != voted_labels.len() {
            return Err(Error::Input(format!(
                "ATS needs aligned non-empty inputs, got {} logits / {} labels",
                logits.len(),
                voted_labels.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!(
                "ATS lambda must be non-negative, got {lambda}"
            )));
        }
        let k = logits[0].k();
        if logits.iter().any(|z| z.k() != k) || voted_labels.iter().any(|y| *y >= k) {
            return Err(Error::Input("ATS inputs disagree on class count".into()));
        }
        Ok(AtsLoss {
            k,
            logits: logits
                .iter()
                .flat_map(|z| z.values().iter().copied())
                .collect(),
            labels: voted_labels.to_vec(),
            features: logits.iter().map(|z| ats_features(z.values())).collect(),
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        ATS_FEATURES + 1
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        p[ATS_FEATURES] = ats_identity_bias();
        p
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.eval(params, None)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        self.eval(params, Some(&mut g));
        g
    }

    /// Per-instance temperatures on the fitted data.
    pub fn temperatures(&self, params: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .map(|phi| ats_temperature(params, phi))
            .collect()
    }

    fn eval(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let k = self.k;
        let n = self.labels.len();
        let mut u = vec![0.0; k];
        let mut lq = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..n {
            let z = &self.logits[i * k..(i + 1) * k];
            let phi = &self.features[i];
            let a = params[ATS_FEATURES]
                + params[..ATS_FEATURES]
                    .iter()
                    .zip(phi)
                    .map(|(w, f)| w * f)
                    .sum::<f64>();
            let t = softplus(a) + ATS_FLOOR;
            for (uk, zk) in u.iter_mut().zip(z) {
                *uk = zk / t;
            }
            log_softmax_into(&u, &mut lq);
            let y = self.labels[i];
            total -= lq[y];
            if let Some(g) = grad.as_deref_mut() {
                let expected_z: f64 = z.iter().zip(&lq).map(|(zk, l)| zk * l.exp()).sum();
                let dl_dt = (z[y] - expected_z) / (t * t);
                let dl_da = dl_dt * sigmoid(a);
                for j in 0..ATS_FEATURES {
                    g[j] += dl_da * phi[j];
                }
                g[ATS_FEATURES] += dl_da;
            }
        }
        let nf = n as f64;
        let penalty: f64 = self.lambda * params[..ATS_FEATURES].iter().map(|w| w * w).sum::<f64>();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v /= nf);
            for j in 0..ATS_FEATURES {
                g[j] += 2.0 * self.lambda * params[j];
            }
        }
        total / nf + penalty
    }
}
