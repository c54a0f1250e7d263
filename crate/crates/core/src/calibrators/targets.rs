//! Calibration targets: one-hot voted labels, annotator distributions,
//! Monte Carlo annotation draws, and label-smoothed pseudo-targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::prob::{entropy_of, softmax_into, Distribution, LogitVector};

/// What supervision a target set was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    Annotator,
    McSamples,
    LabelSmoothGlobal,
    LabelSmoothFixed,
    LabelSmoothEntropy,
    LabelSmoothClasswise,
    OneHotVoted,
}

/// Target tag recorded on a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Voted,
    Soft,
    McSamples,
    PseudoSoft,
}

impl TargetSource {
    pub fn kind(self) -> TargetKind {
        match self {
            TargetSource::Annotator => TargetKind::Soft,
            TargetSource::McSamples => TargetKind::McSamples,
            TargetSource::OneHotVoted => TargetKind::Voted,
            TargetSource::LabelSmoothGlobal
            | TargetSource::LabelSmoothFixed
            | TargetSource::LabelSmoothEntropy
            | TargetSource::LabelSmoothClasswise => TargetKind::PseudoSoft,
        }
    }
}

/// Per-example target distributions aligned with a calibration slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetSet {
    pub targets: Vec<Distribution>,
    pub source: TargetSource,
}

impl SoftTargetSet {
    pub fn annotator(ds: &LogitDataset) -> Self {
        SoftTargetSet::annotator_from(ds.pi_hats())
    }

    pub fn annotator_from(targets: Vec<Distribution>) -> Self {
        SoftTargetSet {
            targets,
            source: TargetSource::Annotator,
        }
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        Ok(SoftTargetSet {
            targets: labels
                .iter()
                .map(|y| Distribution::one_hot(k, *y))
                .collect::<Result<_>>()?,
            source: TargetSource::OneHotVoted,
        })
    }

    pub fn voted(ds: &LogitDataset) -> Self {
        SoftTargetSet::one_hot(&ds.voted_labels(), ds.k()).expect("voted labels are in range")
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Draws `s` annotations per example, with replacement, from each example's
/// annotation pool and returns the draw frequencies.
///
/// The mean one-hot cross-entropy over the `n * s` pseudo-labeled instances
/// equals the soft cross-entropy against these frequencies, so the MC
/// objective can be evaluated without materializing the instances.
pub fn sample_mc_targets(ds: &LogitDataset, s: usize, seed: u64) -> Result<SoftTargetSet> {
    if s == 0 {
        return Err(Error::Input("MC sample count S must be at least 1".into()));
    }
    let k = ds.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = Vec::with_capacity(ds.len());
    for e in ds.examples() {
        let pool = e
            .annotations
            .as_ref()
            .ok_or_else(|| Error::Input(format!("example {} has no raw annotations", e.id)))?
            .labels();
        let mut counts = vec![0usize; k];
        for _ in 0..s {
            counts[pool[rng.random_range(0..pool.len())]] += 1;
        }
        targets.push(Distribution::from_vec_unchecked(
            counts.into_iter().map(|c| c as f64 / s as f64).collect(),
        ));
    }
    Ok(SoftTargetSet {
        targets,
        source: TargetSource::McSamples,
    })
}

/// How the smoothing weight of the pseudo-targets is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Smoothing {
    /// One weight: mean of `1 - p_hat[y*]` over the calibration set.
    Global,
    /// A constant weight.
    Fixed { epsilon: f64 },
    /// Per-example weight `H(p_hat) / ln K`.
    Entropy,
    /// Per-voted-class mean of `1 - p_hat[y*]`.
    Classwise,
}

impl Smoothing {
    fn source(self) -> TargetSource {
        match self {
            Smoothing::Global => TargetSource::LabelSmoothGlobal,
            Smoothing::Fixed { .. } => TargetSource::LabelSmoothFixed,
            Smoothing::Entropy => TargetSource::LabelSmoothEntropy,
            Smoothing::Classwise => TargetSource::LabelSmoothClasswise,
        }
    }
}

/// Smoothing weights actually used, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SmoothingDiagnostics {
    Global {
        epsilon: f64,
    },
    Fixed {
        epsilon: f64,
    },
    Entropy {
        mean: f64,
        min: f64,
        max: f64,
    },
    Classwise {
        per_class: Vec<f64>,
        global_fallback: f64,
        empty_classes: Vec<usize>,
    },
}

impl SmoothingDiagnostics {
    /// Average smoothing weight across the calibration set.
    pub fn mean_epsilon(&self) -> f64 {
        match self {
            SmoothingDiagnostics::Global { epsilon } | SmoothingDiagnostics::Fixed { epsilon } => {
                *epsilon
            }
            SmoothingDiagnostics::Entropy { mean, .. } => *mean,
            SmoothingDiagnostics::Classwise { per_class, .. } => {
                per_class.iter().sum::<f64>() / per_class.len() as f64
            }
        }
    }
}

/// Builds label-smoothed pseudo-targets `(1 - eps) e_{y*} + (eps / K) 1` from
/// the uncalibrated model's own confidences.
pub fn make_lsts_targets(
    logits: &[LogitVector],
    voted_labels: &[usize],
    smoothing: Smoothing,
) -> Result<(SoftTargetSet, SmoothingDiagnostics)> {
    if logits.is_empty() || logits.len() != voted_labels.len() {
        return Err(Error::Input(format!(
            "LS-TS needs aligned non-empty inputs, got {} logits / {} labels",
            logits.len(),
            voted_labels.len()
        )));
    }
    let k = logits[0].k();
    if logits.iter().any(|z| z.k() != k) {
        return Err(Error::Input("logit rows disagree on class count".into()));
    }
    if let Some(y) = voted_labels.iter().find(|y| **y >= k) {
        return Err(Error::Input(format!(
            "voted label {y} out of range for K = {k}"
        )));
    }
    let mut p = vec![0.0; k];
    let mut complement = Vec::with_capacity(logits.len());
    let mut norm_entropy = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(voted_labels) {
        softmax_into(z.values(), 1.0, &mut p);
        complement.push(1.0 - p[y]);
        norm_entropy.push(entropy_of(&p) / (k as f64).ln());
    }
    let global = complement.iter().sum::<f64>() / complement.len() as f64;

    let (eps, diagnostics): (Vec<f64>, SmoothingDiagnostics) = match smoothing {
        Smoothing::Global => (
            vec![global; logits.len()],
            SmoothingDiagnostics::Global { epsilon: global },
        ),
        Smoothing::Fixed { epsilon } => {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Domain(format!(
                    "smoothing epsilon must lie in [0, 1], got {epsilon}"
                )));
            }
            (
                vec![epsilon; logits.len()],
                SmoothingDiagnostics::Fixed { epsilon },
            )
        }
        Smoothing::Entropy => {
            let mean = norm_entropy.iter().sum::<f64>() / norm_entropy.len() as f64;
            let min = norm_entropy.iter().copied().fold(f64::INFINITY, f64::min);
            let max = norm_entropy
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            (
                norm_entropy.clone(),
                SmoothingDiagnostics::Entropy { mean, min, max },
            )
        }
        Smoothing::Classwise => {
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (c, &y) in complement.iter().zip(voted_labels) {
                sums[y] += c;
                counts[y] += 1;
            }
            let mut empty = Vec::new();
            let per_class: Vec<f64> = (0..k)
                .map(|c| {
                    if counts[c] == 0 {
                        empty.push(c);
                        global
                    } else {
                        sums[c] / counts[c] as f64
                    }
                })
                .collect();
            let eps = voted_labels.iter().map(|y| per_class[*y]).collect();
            (
                eps,
                SmoothingDiagnostics::Classwise {
                    per_class,
                    global_fallback: global,
                    empty_classes: empty,
                },
            )
        }
    };

    let targets = eps
        .iter()
        .zip(voted_labels)
        .map(|(e, &y)| {
            let e = e.clamp(0.0, 1.0);
            let mut t = vec![e / k as f64; k];
            t[y] += 1.0 - e;
            Distribution::from_vec_unchecked(t)
        })
        .collect();
    Ok((
        SoftTargetSet {
            targets,
            source: smoothing.source(),
        },
        diagnostics,
    ))
}
