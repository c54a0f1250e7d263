//! Probability vectors, logits and the elementary operations on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied before taking the log of a predicted probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`Distribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Input(format!(
                "distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((k, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::Input(format!(
                "distribution entry {k} = {p} is not a non-negative finite number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!(
                "distribution sums to {total}, expected 1"
            )));
        }
        Ok(Distribution(probs))
    }

    /// Wraps a vector already known to be on the simplex.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        Distribution(probs)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Input(format!(
                "uniform distribution needs K >= 2, got {k}"
            )));
        }
        Ok(Distribution(vec![1.0 / k as f64; k]))
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if k < 2 || class >= k {
            return Err(Error::Input(format!(
                "one-hot class {class} invalid for K = {k}"
            )));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Ok(Distribution(v))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|p| **p > 0.0).count() == 1
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Distribution::new(value)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Pre-softmax scores of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Input(format!(
                "logit vector needs K >= 2, got {}",
                z.len()
            )));
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("logit entry {k} is not finite")));
        }
        Ok(LogitVector(z))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        LogitVector::new(value)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(z: LogitVector) -> Self {
        z.0
    }
}

/// The raw annotator labels of one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AnnotationSet(Vec<usize>);

impl AnnotationSet {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input(
                "annotation set must hold at least one label".into(),
            ));
        }
        Ok(AnnotationSet(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for AnnotationSet {
    type Error = Error;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        AnnotationSet::new(value)
    }
}

impl From<AnnotationSet> for Vec<usize> {
    fn from(a: AnnotationSet) -> Self {
        a.0
    }
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Writes `softmax(z / t)` into `out` using max subtraction.
pub(crate) fn softmax_into(z: &[f64], t: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = ((v - max) / t).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log softmax(z)` for already-scaled logits.
pub(crate) fn log_softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Tempered softmax `softmax(z / t)`.
pub fn softmax_t(z: &LogitVector, t: f64) -> Result<Distribution> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    let mut out = vec![0.0; z.k()];
    softmax_into(z.values(), t, &mut out);
    Ok(Distribution(out))
}

pub fn softmax(z: &LogitVector) -> Distribution {
    let mut out = vec![0.0; z.k()];
    softmax_into(z.values(), 1.0, &mut out);
    Distribution(out)
}

/// Frequency vector of the annotations over `k` classes.
pub fn empirical_distribution(a: &AnnotationSet, k: usize) -> Result<Distribution> {
    if k < 2 {
        return Err(Error::Input(format!("K must be at least 2, got {k}")));
    }
    let mut counts = vec![0usize; k];
    for &label in a.labels() {
        if label >= k {
            return Err(Error::Input(format!(
                "annotation label {label} out of range for K = {k}"
            )));
        }
        counts[label] += 1;
    }
    let m = a.len() as f64;
    Ok(Distribution(
        counts.into_iter().map(|c| c as f64 / m).collect(),
    ))
}

pub fn voted_label(pi: &Distribution) -> usize {
    pi.argmax()
}

/// Shannon entropy in nats.
pub fn entropy(p: &Distribution) -> f64 {
    entropy_of(p.probs())
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// `KL(p || q)` in nats; `f64::INFINITY` when `q` misses mass that `p` has.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> f64 {
    assert_eq!(p.k(), q.k(), "kl_divergence: class count mismatch");
    let mut total = 0.0;
    for (pk, qk) in p.probs().iter().zip(q.probs()) {
        if *pk > 0.0 {
            if *qk <= 0.0 {
                return f64::INFINITY;
            }
            total += pk * (pk / qk).ln();
        }
    }
    total.max(0.0)
}

/// `-sum_k target_k log(max(q_k, floor))`.
pub fn cross_entropy(target: &[f64], q: &[f64]) -> f64 {
    -target
        .iter()
        .zip(q)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, qk)| t * qk.max(PROB_FLOOR).ln())
        .sum::<f64>()
}
