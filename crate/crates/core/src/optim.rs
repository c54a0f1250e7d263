//! Deterministic minimizers, isotonic regression, and a finite-difference
//! gradient check.
//!
//! Scalar temperature fits run a bounded search over `ln T`: a coarse grid
//! locates the basin and Brent's method refines it. Multi-parameter fits use
//! limited-memory BFGS with Armijo backtracking by default; fixed learning-rate
//! Adam is available for reproducing first-order training protocols.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search window and stopping rule for [`minimize_scalar`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMinimizerConfig {
    pub lower: f64,
    pub upper: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ScalarMinimizerConfig {
    fn default() -> Self {
        ScalarMinimizerConfig {
            lower: 0.05,
            upper: 100.0,
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

impl ScalarMinimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower < self.upper && self.upper.is_finite()) {
            return Err(Error::Domain(format!(
                "scalar window must satisfy 0 < lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentAlgorithm {
    /// Limited-memory BFGS with backtracking line search.
    Lbfgs,
    /// Adam with a fixed learning rate.
    Adam,
}

/// Step budget and stopping rule for [`minimize_vector`].
///
/// `weight_decay` adds `weight_decay * ||x||^2` to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorMinimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub grad_tol: f64,
    pub loss_tol: f64,
    pub algorithm: DescentAlgorithm,
}

impl VectorMinimizerConfig {
    /// Diagonal and full affine fits (Platt, SoftPlatt, Dirichlet).
    pub fn affine() -> Self {
        VectorMinimizerConfig {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            steps: 2000,
            grad_tol: 1e-9,
            loss_tol: 1e-11,
            algorithm: DescentAlgorithm::Lbfgs,
        }
    }

    /// Per-class temperature fits.
    pub fn vector_scaling() -> Self {
        VectorMinimizerConfig {
            learning_rate: 0.05,
            ..Self::affine()
        }
    }

    /// Adaptive temperature fits; the loss carries its own l2 term.
    pub fn ats() -> Self {
        VectorMinimizerConfig {
            weight_decay: 0.0,
            ..Self::affine()
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_algorithm(mut self, algorithm: DescentAlgorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Domain("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Domain(format!(
                "learning_rate must be positive and weight_decay non-negative, got {} / {}",
                self.learning_rate, self.weight_decay
            )));
        }
        if !(self.grad_tol > 0.0) || !(self.loss_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a vector minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    /// Objective value including the weight-decay term.
    pub value: f64,
    pub iterations: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const GRID_POINTS: usize = 64;

/// Minimizes `objective` over `T` in `[cfg.lower, cfg.upper]`.
///
/// Returns `(argmin, min_value)`. The search runs in `ln T`, so the returned
/// point is accurate to `tol` relative to `T`.
pub fn minimize_scalar<F>(mut objective: F, cfg: &ScalarMinimizerConfig) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    cfg.validate()?;
    let (lo, hi) = (cfg.lower.ln(), cfg.upper.ln());
    let mut eval = |s: f64| -> Result<f64> {
        let t = s.exp();
        let v = objective(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Optimization {
                location: format!("T = {t}"),
                message: format!("objective returned {v}"),
            })
        }
    };

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let v = eval(lo + step * i as f64)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut a = lo + step * best.0.saturating_sub(1) as f64;
    let mut b = lo + step * (best.0 + 1).min(GRID_POINTS - 1) as f64;

    // Brent's method on [a, b].
    let mut x = lo + step * best.0 as f64;
    let mut fx = best.1;
    let (mut w, mut v) = (x, x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let sqrt_eps = f64::EPSILON.sqrt();
    for _ in 0..cfg.max_iters {
        let mid = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + cfg.tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x.exp(), fx))
}

/// Minimizes `objective + weight_decay * ||x||^2` from `init`.
///
/// Stops after `cfg.steps` iterations, when the gradient's max-norm drops
/// below `grad_tol`, or when one step changes the loss by less than
/// `loss_tol` (relative to `max(1, |loss|)`).
pub fn minimize_vector<F, G>(
    objective: F,
    gradient: G,
    init: &[f64],
    cfg: &VectorMinimizerConfig,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    cfg.validate()?;
    let wd = cfg.weight_decay;
    let eval = |x: &[f64], iteration: usize| -> Result<(f64, Vec<f64>)> {
        let mut f = objective(x);
        let mut g = gradient(x);
        if wd > 0.0 {
            f += wd * dot(x, x);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += 2.0 * wd * xi;
            }
        }
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization {
                location: format!("iteration {iteration}"),
                message: format!("non-finite loss or gradient (loss = {f})"),
            });
        }
        Ok((f, g))
    };
    match cfg.algorithm {
        DescentAlgorithm::Lbfgs => lbfgs(eval, init, cfg),
        DescentAlgorithm::Adam => adam(eval, init, cfg),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn loss_settled(prev: f64, next: f64, tol: f64) -> bool {
    (prev - next).abs() < tol * prev.abs().max(1.0)
}

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn lbfgs<E>(eval: E, init: &[f64], cfg: &VectorMinimizerConfig) -> Result<Minimum>
where
    E: Fn(&[f64], usize) -> Result<(f64, Vec<f64>)>,
{
    let n = init.len();
    let mut x = init.to_vec();
    let (mut f, mut g) = eval(&x, 0)?;
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(LBFGS_MEMORY);
    let mut iterations = 0;
    let mut candidate = vec![0.0; n];

    while iterations < cfg.steps {
        if max_abs(&g) < cfg.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        let initial_step = if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
            1.0
        } else {
            cfg.learning_rate.max(1.0 / max_abs(&g).max(1.0)).min(1.0)
        };
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = initial_step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((c, xi), di) in candidate.iter_mut().zip(&x).zip(&d) {
                *c = xi + step * di;
            }
            let (fc, gc) = eval(&candidate, iterations)?;
            if fc <= f + ARMIJO_C1 * step * slope {
                accepted = Some((fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = candidate.iter().zip(&x).map(|(c, xi)| c - xi).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).max(f64::MIN_POSITIVE) {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let settled = loss_settled(f, f_new, cfg.loss_tol);
        x.copy_from_slice(&candidate);
        f = f_new;
        g = g_new;
        if settled {
            break;
        }
    }
    Ok(Minimum {
        x,
        value: f,
        iterations,
    })
}

fn adam<E>(eval: E, init: &[f64], cfg: &VectorMinimizerConfig) -> Result<Minimum>
where
    E: Fn(&[f64], usize) -> Result<(f64, Vec<f64>)>,
{
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let n = init.len();
    let mut x = init.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut f, mut g) = eval(&x, 0)?;
    let mut iterations = 0;
    while iterations < cfg.steps {
        if max_abs(&g) < cfg.grad_tol {
            break;
        }
        iterations += 1;
        let bias1 = 1.0 - BETA1.powi(iterations as i32);
        let bias2 = 1.0 - BETA2.powi(iterations as i32);
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            x[i] -= cfg.learning_rate * (m[i] / bias1) / ((v[i] / bias2).sqrt() + EPS);
        }
        let (f_new, g_new) = eval(&x, iterations)?;
        let settled = loss_settled(f, f_new, cfg.loss_tol);
        f = f_new;
        g = g_new;
        if settled {
            break;
        }
    }
    Ok(Minimum {
        x,
        value: f,
        iterations,
    })
}

/// Weighted isotonic (non-decreasing) least-squares fit by pool adjacent violators.
pub fn pava(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Input("pava needs at least one value".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Input(format!(
            "pava: {} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Input(format!(
            "pava weights must be positive, got {w}"
        )));
    }

    // Each block: (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&y, &w) in values.iter().zip(weights) {
        let mut block = (y, w, 1usize);
        while let Some(&(mean, weight, len)) = blocks.last() {
            if mean <= block.0 {
                break;
            }
            blocks.pop();
            let total = weight + block.1;
            block = (
                (mean * weight + block.0 * block.1) / total,
                total,
                len + block.2,
            );
        }
        blocks.push(block);
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(mean, _, len)| std::iter::repeat_n(mean, len))
        .collect())
}

/// Largest relative deviation between `gradient` and central differences.
///
/// Each coordinate's error is `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn check_gradient<F, G>(objective: F, gradient: G, point: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = gradient(point);
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + eps;
        let up = objective(&probe);
        probe[i] = point[i] - eps;
        let down = objective(&probe);
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}
