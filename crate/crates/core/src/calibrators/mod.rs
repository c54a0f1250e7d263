//! Post-hoc calibrators behind one contract: fit on a calibration slice
//! against a [`SoftTargetSet`], then [`apply`] the fitted [`CalibratorModel`]
//! to logits.
//!
//! Voted-label and ambiguity-aware variants of a family share one fit
//! function; only the targets differ (one-hot voted labels, annotator
//! distributions, MC annotation draws, or label-smoothed pseudo-targets).

pub mod losses;
pub mod targets;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::hexfloat;
use crate::optim::{self, pava, ScalarMinimizerConfig, VectorMinimizerConfig};
use crate::prob::{argmax, cross_entropy, softmax_into, Distribution, LogitVector};

pub use losses::{
    ats_features, AtsLoss, DiagAffineLoss, DirichletLoss, TemperatureLoss, VectorScalingLoss,
};
pub use targets::{
    make_lsts_targets, sample_mc_targets, Smoothing, SmoothingDiagnostics, SoftTargetSet,
    TargetKind, TargetSource,
};

/// Schema version of the serialized model document.
pub const MODEL_VERSION: u32 = 1;

/// Default ODIR strength for full affine fits.
pub const DEFAULT_LAMBDA_ODIR: f64 = 1e-3;

/// Default l2 strength on the adaptive-temperature weights.
pub const DEFAULT_LAMBDA_ATS: f64 = 1e-3;

/// Kind-specific fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum CalibratorParams {
    Identity,
    Temperature {
        #[serde(with = "hexfloat::scalar")]
        t: f64,
    },
    VectorTemperature {
        #[serde(with = "hexfloat::vec")]
        t: Vec<f64>,
    },
    DiagAffine {
        #[serde(with = "hexfloat::vec")]
        w: Vec<f64>,
        #[serde(with = "hexfloat::vec")]
        b: Vec<f64>,
    },
    FullAffine {
        #[serde(with = "hexfloat::matrix")]
        w: Vec<Vec<f64>>,
        #[serde(with = "hexfloat::vec")]
        b: Vec<f64>,
    },
    Isotonic {
        #[serde(with = "hexfloat::vec")]
        thresholds: Vec<f64>,
        #[serde(with = "hexfloat::vec")]
        values: Vec<f64>,
    },
    Ats {
        #[serde(with = "hexfloat::vec")]
        w: Vec<f64>,
        #[serde(with = "hexfloat::scalar")]
        b: f64,
    },
}

impl CalibratorParams {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CalibratorParams::Identity => "identity",
            CalibratorParams::Temperature { .. } => "temperature",
            CalibratorParams::VectorTemperature { .. } => "vector_temperature",
            CalibratorParams::DiagAffine { .. } => "diag_affine",
            CalibratorParams::FullAffine { .. } => "full_affine",
            CalibratorParams::Isotonic { .. } => "isotonic",
            CalibratorParams::Ats { .. } => "ats",
        }
    }
}

/// A fitted calibration map.
///
/// Serializes to `{version, kind, params, K, fitted_on, config_digest}` with
/// every parameter written as an exact hexadecimal float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorModel {
    pub version: u32,
    #[serde(flatten)]
    pub params: CalibratorParams,
    #[serde(rename = "K")]
    pub k: usize,
    pub fitted_on: Option<TargetKind>,
    pub config_digest: String,
}

impl CalibratorModel {
    pub fn identity(k: usize) -> Self {
        CalibratorModel {
            version: MODEL_VERSION,
            params: CalibratorParams::Identity,
            k,
            fitted_on: None,
            config_digest: String::new(),
        }
    }

    fn fitted(k: usize, params: CalibratorParams, fitted_on: TargetKind) -> Self {
        CalibratorModel {
            version: MODEL_VERSION,
            params,
            k,
            fitted_on: Some(fitted_on),
            config_digest: String::new(),
        }
    }

    /// Records a digest of the configuration that produced this model.
    pub fn with_config_digest(mut self, config: &impl Serialize) -> Self {
        self.config_digest = digest_json(config);
        self
    }

    /// The global temperature, for temperature-kind models.
    pub fn temperature(&self) -> Option<f64> {
        match self.params {
            CalibratorParams::Temperature { t } => Some(t),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        let bad = |m: String| {
            Err(Error::Input(format!(
                "invalid {} model: {m}",
                self.params.kind_name()
            )))
        };
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if k < 2 {
            return bad(format!("K = {k}"));
        }
        match &self.params {
            CalibratorParams::Identity => {}
            CalibratorParams::Temperature { t } => {
                if !(*t > 0.0 && t.is_finite()) {
                    return bad(format!("temperature {t}"));
                }
            }
            CalibratorParams::VectorTemperature { t } => {
                if t.len() != k || t.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("per-class temperatures must be K positive values".into());
                }
            }
            CalibratorParams::DiagAffine { w, b } => {
                if w.len() != k || b.len() != k {
                    return bad("w and b must have K entries".into());
                }
            }
            CalibratorParams::FullAffine { w, b } => {
                if w.len() != k || w.iter().any(|r| r.len() != k) || b.len() != k {
                    return bad("W must be K x K and b length K".into());
                }
            }
            CalibratorParams::Isotonic { thresholds, values } => {
                if thresholds.is_empty() || thresholds.len() != values.len() {
                    return bad("thresholds and values must be non-empty and aligned".into());
                }
                if thresholds.windows(2).any(|p| p[0] > p[1])
                    || values.windows(2).any(|p| p[0] > p[1])
                {
                    return bad("thresholds and values must be non-decreasing".into());
                }
            }
            CalibratorParams::Ats { w, .. } => {
                if w.len() != losses::ATS_FEATURES {
                    return bad(format!("expected {} weights", losses::ATS_FEATURES));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: CalibratorModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }
}

pub(crate) fn digest_json(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn check_aligned(logits: &[LogitVector], targets: &SoftTargetSet) -> Result<usize> {
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
    Ok(logits[0].k())
}

/// Single temperature minimizing mean cross-entropy against `targets`.
///
/// Voted one-hot targets give standard temperature scaling, annotator
/// distributions the soft-label variant, label-smoothed targets LS-TS.
pub fn fit_temperature(
    logits: &[LogitVector],
    targets: &SoftTargetSet,
    cfg: &ScalarMinimizerConfig,
) -> Result<CalibratorModel> {
    let k = check_aligned(logits, targets)?;
    let loss = TemperatureLoss::new(logits, &targets.targets)?;
    let (t, _) = optim::minimize_scalar(|t| loss.value(t), cfg)?;
    Ok(CalibratorModel::fitted(
        k,
        CalibratorParams::Temperature { t },
        targets.source.kind(),
    ))
}

/// Temperature fitted on `s` sampled annotations per example.
pub fn fit_mcts(
    ds: &LogitDataset,
    s: usize,
    seed: u64,
    cfg: &ScalarMinimizerConfig,
) -> Result<CalibratorModel> {
    let targets = sample_mc_targets(ds, s, seed)?;
    fit_temperature(&ds.logits(), &targets, cfg)
}

/// Per-class weight and bias on logits, `softmax(w * z + b)`.
pub fn fit_diag_affine(
    logits: &[LogitVector],
    targets: &SoftTargetSet,
    cfg: &VectorMinimizerConfig,
) -> Result<CalibratorModel> {
    let k = check_aligned(logits, targets)?;
    let loss = DiagAffineLoss::new(logits, &targets.targets)?;
    let fit = optim::minimize_vector(
        |p| loss.value(p),
        |p| loss.gradient(p),
        &loss.identity(),
        cfg,
    )?;
    let (w, b) = fit.x.split_at(k);
    Ok(CalibratorModel::fitted(
        k,
        CalibratorParams::DiagAffine {
            w: w.to_vec(),
            b: b.to_vec(),
        },
        targets.source.kind(),
    ))
}

/// Per-class temperatures `z_k / T_k`, parameterized as `T_k = exp(theta_k)`.
pub fn fit_vector_scaling(
    logits: &[LogitVector],
    targets: &SoftTargetSet,
    cfg: &VectorMinimizerConfig,
) -> Result<CalibratorModel> {
    let k = check_aligned(logits, targets)?;
    let loss = VectorScalingLoss::new(logits, &targets.targets)?;
    let fit = optim::minimize_vector(|p| loss.value(p), |p| loss.gradient(p), &vec![0.0; k], cfg)?;
    Ok(CalibratorModel::fitted(
        k,
        CalibratorParams::VectorTemperature {
            t: fit.x.iter().map(|v| v.exp()).collect(),
        },
        targets.source.kind(),
    ))
}

/// Full affine map `softmax(W z + b)` with off-diagonal/intercept regularization.
pub fn fit_dirichlet(
    logits: &[LogitVector],
    targets: &SoftTargetSet,
    lambda_odir: f64,
    cfg: &VectorMinimizerConfig,
) -> Result<CalibratorModel> {
    let k = check_aligned(logits, targets)?;
    let loss = DirichletLoss::new(logits, &targets.targets, lambda_odir)?;
    let fit = optim::minimize_vector(
        |p| loss.value(p),
        |p| loss.gradient(p),
        &loss.identity(),
        cfg,
    )?;
    let (w, b) = fit.x.split_at(k * k);
    Ok(CalibratorModel::fitted(
        k,
        CalibratorParams::FullAffine {
            w: w.chunks(k).map(|r| r.to_vec()).collect(),
            b: b.to_vec(),
        },
        targets.source.kind(),
    ))
}

/// Monotone step map from top-class confidence to annotator mass on that class.
///
/// Tied confidences are pooled before the isotonic fit. Each stored threshold
/// is the smallest confidence of one pooled block.
pub fn fit_isotonic_soft(confidences: &[f64], pi_top: &[f64], k: usize) -> Result<CalibratorModel> {
    if confidences.len() != pi_top.len() {
        return Err(Error::Input(format!(
            "{} confidences but {} targets",
            confidences.len(),
            pi_top.len()
        )));
    }
    if confidences.len() < 2 {
        return Err(Error::Input("isotonic fit needs at least 2 points".into()));
    }
    let in_unit = |v: &f64| (0.0..=1.0).contains(v);
    if !confidences.iter().all(in_unit) || !pi_top.iter().all(in_unit) {
        return Err(Error::Input("isotonic inputs must lie in [0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));

    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        if xs.last() == Some(&confidences[i]) {
            *sums.last_mut().unwrap() += pi_top[i];
            *weights.last_mut().unwrap() += 1.0;
        } else {
            xs.push(confidences[i]);
            sums.push(pi_top[i]);
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();
    let fitted = pava(&means, &weights)?;

    let mut thresholds = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (x, v) in xs.into_iter().zip(fitted) {
        if values.last() != Some(&v) {
            thresholds.push(x);
            values.push(v);
        }
    }
    Ok(CalibratorModel::fitted(
        k,
        CalibratorParams::Isotonic { thresholds, values },
        TargetKind::Soft,
    ))
}

/// Isotonic fit on a calibration slice: model top-class confidence against
/// annotator mass on the model's predicted class.
pub fn fit_isotonic_soft_on(ds: &LogitDataset) -> Result<CalibratorModel> {
    let mut conf = Vec::with_capacity(ds.len());
    let mut target = Vec::with_capacity(ds.len());
    let mut p = vec![0.0; ds.k()];
    for e in ds.examples() {
        softmax_into(e.logits.values(), 1.0, &mut p);
        let c = argmax(&p);
        conf.push(p[c]);
        target.push(e.pi_hat.probs()[c]);
    }
    fit_isotonic_soft(&conf, &target, ds.k())
}

/// Adaptive per-instance temperature fitted with voted-label NLL.
pub fn fit_ats(
    logits: &[LogitVector],
    voted_labels: &[usize],
    lambda_l2: f64,
    cfg: &VectorMinimizerConfig,
) -> Result<CalibratorModel> {
    let loss = AtsLoss::new(logits, voted_labels, lambda_l2)?;
    let fit = optim::minimize_vector(
        |p| loss.value(p),
        |p| loss.gradient(p),
        &loss.identity(),
        cfg,
    )?;
    Ok(CalibratorModel::fitted(
        logits[0].k(),
        CalibratorParams::Ats {
            w: fit.x[..losses::ATS_FEATURES].to_vec(),
            b: fit.x[losses::ATS_FEATURES],
        },
        TargetKind::Voted,
    ))
}

/// Replaces the top-class probability with `new_top` and rescales the other
/// classes proportionally.
///
/// `new_top` is raised, if needed, so the top class keeps at least the mass
/// of the runner-up; the predicted class never changes.
pub fn replace_top_confidence(probs: &[f64], top: usize, new_top: f64) -> Vec<f64> {
    let k = probs.len();
    let old_rest = 1.0 - probs[top];
    let runner_up = probs
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != top)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max);
    let mut v = new_top.clamp(0.0, 1.0);
    let mut out = vec![0.0; k];
    if old_rest > 1e-15 {
        v = v.max(runner_up / (old_rest + runner_up));
        loop {
            let scale = (1.0 - v) / old_rest;
            for (c, (o, p)) in out.iter_mut().zip(probs).enumerate() {
                *o = if c == top { v } else { p * scale };
            }
            // Ties resolve to the lowest index, so the floor itself may lose.
            if argmax(&out) == top || v >= 1.0 {
                break;
            }
            v += (1.0 - v) * 1e-12 + f64::EPSILON;
        }
    } else {
        v = v.max(1.0 / k as f64 + 1e-12);
        let share = (1.0 - v) / (k - 1) as f64;
        for (c, o) in out.iter_mut().enumerate() {
            *o = if c == top { v } else { share };
        }
    }
    out
}

fn step_lookup(thresholds: &[f64], values: &[f64], x: f64) -> f64 {
    let idx = thresholds.partition_point(|t| *t <= x);
    values[idx.saturating_sub(1)]
}

/// Applies a fitted model to one logit vector.
pub fn apply(model: &CalibratorModel, z: &LogitVector) -> Result<Distribution> {
    let k = model.k;
    if z.k() != k {
        return Err(Error::Input(format!(
            "model expects K = {k}, logits have {}",
            z.k()
        )));
    }
    let zv = z.values();
    let mut out = vec![0.0; k];
    match &model.params {
        CalibratorParams::Identity => softmax_into(zv, 1.0, &mut out),
        CalibratorParams::Temperature { t } => softmax_into(zv, *t, &mut out),
        CalibratorParams::VectorTemperature { t } => {
            let u: Vec<f64> = zv.iter().zip(t).map(|(a, b)| a / b).collect();
            softmax_into(&u, 1.0, &mut out);
        }
        CalibratorParams::DiagAffine { w, b } => {
            let u: Vec<f64> = (0..k).map(|c| w[c] * zv[c] + b[c]).collect();
            softmax_into(&u, 1.0, &mut out);
        }
        CalibratorParams::FullAffine { w, b } => {
            let u: Vec<f64> = (0..k)
                .map(|r| b[r] + w[r].iter().zip(zv).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            softmax_into(&u, 1.0, &mut out);
        }
        CalibratorParams::Isotonic { thresholds, values } => {
            let mut p = vec![0.0; k];
            softmax_into(zv, 1.0, &mut p);
            let top = argmax(&p);
            out = replace_top_confidence(&p, top, step_lookup(thresholds, values, p[top]));
        }
        CalibratorParams::Ats { w, b } => {
            let phi = ats_features(zv);
            let mut params = w.clone();
            params.push(*b);
            let t = losses::ats_temperature(&params, &phi);
            softmax_into(zv, t, &mut out);
        }
    }
    Ok(Distribution::from_vec_unchecked(out))
}

/// Applies a model to every row.
pub fn apply_all(model: &CalibratorModel, logits: &[LogitVector]) -> Result<Vec<Distribution>> {
    logits.iter().map(|z| apply(model, z)).collect()
}

/// Mean cross-entropy of the calibrated predictions against `targets`
/// (no regularization terms).
pub fn calibration_loss(
    model: &CalibratorModel,
    logits: &[LogitVector],
    targets: &SoftTargetSet,
) -> Result<f64> {
    check_aligned(logits, targets)?;
    let mut total = 0.0;
    for (z, t) in logits.iter().zip(&targets.targets) {
        total += cross_entropy(t.probs(), apply(model, z)?.probs());
    }
    Ok(total / logits.len() as f64)
}
