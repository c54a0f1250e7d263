//! Executable checks of temperature ordering and entropy monotonicity on a benchmark report.

use serde::{Deserialize, Serialize};

use crate::calibrators::apply_all;
use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::harness::bench::{prepare_run, BenchmarkReport};
use crate::harness::config::{ExperimentConfig, MethodId};
use crate::metrics::{entropy_profile, spearman, EntropyBin};
use crate::prob::Distribution;

/// Largest |T_TS - T_SLTS| accepted as equal when every target is one-hot.
pub const DEGENERATE_GAP: f64 = 1e-6;

pub const DEGENERATE_LABEL: &str = "degenerate: no ambiguity";

/// Temperature ordering for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureOrdering {
    pub seed: u64,
    pub t_ts: Option<f64>,
    pub t_slts: Option<f64>,
    /// `T_TS < T_SLTS`, or a gap below [`DEGENERATE_GAP`] in the degenerate case.
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Entropy profile of temperature-scaled test predictions for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyMonotonicity {
    pub seed: u64,
    pub spearman: Option<f64>,
    pub passes: bool,
    pub bins: Vec<EntropyBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub temperature_ordering: Vec<TemperatureOrdering>,
    pub temperature_ordering_holds: bool,
    pub spearman_threshold: f64,
    pub entropy_monotonicity: Vec<EntropyMonotonicity>,
    pub entropy_monotonicity_holds: bool,
}

/// Spearman correlation of bin index against mean pointwise error.
pub fn entropy_spearman(
    probs: &[Distribution],
    pi: &[Distribution],
    n_bins: usize,
) -> Result<(f64, Vec<EntropyBin>)> {
    let bins = entropy_profile(probs, pi, n_bins)?;
    let index: Vec<f64> = (0..bins.len()).map(|i| i as f64).collect();
    let err: Vec<f64> = bins.iter().map(|b| b.mean_error).collect();
    Ok((spearman(&index, &err), bins))
}

fn ordering(
    seed: u64,
    t_ts: Option<f64>,
    t_slts: Option<f64>,
    degenerate: bool,
) -> TemperatureOrdering {
    let holds = match (t_ts, t_slts) {
        (Some(a), Some(b)) if degenerate => (a - b).abs() < DEGENERATE_GAP,
        (Some(a), Some(b)) => a < b,
        _ => false,
    };
    TemperatureOrdering {
        seed,
        t_ts,
        t_slts,
        holds,
        label: degenerate.then(|| DEGENERATE_LABEL.to_string()),
    }
}

fn monotonicity(
    report: &BenchmarkReport,
    ds: &LogitDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> EntropyMonotonicity {
    let outcome = (|| -> Result<(f64, Vec<EntropyBin>)> {
        let model = report
            .cell(MethodId::Ts, seed)
            .and_then(|c| c.model.as_ref())
            .ok_or_else(|| Error::Input(format!("no fitted TS model for seed {seed}")))?;
        let run = prepare_run(ds, cfg, seed)?;
        let probs = apply_all(model, &run.test.logits())?;
        entropy_spearman(&probs, &run.test.pi_hats(), cfg.entropy_bins)
    })();
    match outcome {
        Ok((rho, bins)) => EntropyMonotonicity {
            seed,
            spearman: rho.is_finite().then_some(rho),
            passes: rho >= cfg.spearman_threshold,
            bins,
            error: None,
        },
        Err(e) => EntropyMonotonicity {
            seed,
            spearman: None,
            passes: false,
            bins: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Checks `T_TS < T_SLTS` and the entropy monotonicity of TS error per seed.
///
/// `cfg` must be the configuration that produced `report`.
pub fn check_propositions(
    report: &BenchmarkReport,
    ds: &LogitDataset,
    cfg: &ExperimentConfig,
) -> Result<TheoryCheck> {
    for m in [MethodId::Ts, MethodId::Slts] {
        if !cfg.methods.contains(&m) {
            return Err(Error::Input(format!(
                "theory checks need method {m} in the benchmark"
            )));
        }
    }
    let degenerate = ds.is_unambiguous();
    let temperature_ordering: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let t = |m| report.cell(m, s).and_then(|c| c.temperature());
            ordering(s, t(MethodId::Ts), t(MethodId::Slts), degenerate)
        })
        .collect();
    let entropy_monotonicity: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&s| monotonicity(report, ds, cfg, s))
        .collect();
    Ok(TheoryCheck {
        temperature_ordering_holds: temperature_ordering.iter().all(|o| o.holds),
        temperature_ordering,
        spearman_threshold: cfg.spearman_threshold,
        entropy_monotonicity_holds: entropy_monotonicity.iter().all(|e| e.passes),
        entropy_monotonicity,
    })
}
