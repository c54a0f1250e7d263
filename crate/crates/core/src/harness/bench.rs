//! Benchmark grid: every (seed, method) cell is fitted on the calibration
//! split and evaluated on the test split with one shared label-draw table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotators::{annotate_dataset, isic_confusion, ConfusionMatrix};
use crate::calibrators::{
    apply_all, digest_json, fit_ats, fit_diag_affine, fit_dirichlet, fit_isotonic_soft_on,
    fit_mcts, fit_temperature, fit_vector_scaling, make_lsts_targets, CalibratorModel, Smoothing,
    SmoothingDiagnostics, SoftTargetSet,
};
use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MethodId, SeedAxis};
use crate::harness::io::dataset_digest;
use crate::harness::split::split;
use crate::metrics::{evaluate, McConfig, MetricsReport};
use crate::optim::{ScalarMinimizerConfig, VectorMinimizerConfig};
use crate::seeding;

const MCTS_TAG: u64 = 1;

/// Data for one run seed: the calibration and test slices plus derived seeds.
#[derive(Debug, Clone)]
pub struct RunData {
    pub seed: u64,
    pub data: LogitDataset,
    pub cal_indices: Vec<usize>,
    pub cal: LogitDataset,
    pub test: LogitDataset,
    pub mc_seed: u64,
    pub mcts_seed: u64,
}

/// `"isic"` or a confusion-matrix file.
pub fn load_confusion(source: &str) -> Result<ConfusionMatrix> {
    if source == "isic" {
        Ok(isic_confusion())
    } else {
        ConfusionMatrix::load(std::path::Path::new(source))
    }
}

/// Splits (and, on the annotation axis, re-annotates) for run seed `seed`.
pub fn prepare_run(ds: &LogitDataset, cfg: &ExperimentConfig, seed: u64) -> Result<RunData> {
    let (data, split_seed) = match cfg.seed_axis {
        SeedAxis::Split => (ds.clone(), seed),
        SeedAxis::Annotations => {
            let syn = cfg.synthetic.as_ref().ok_or_else(|| {
                Error::Input("annotation seed axis needs a synthetic source".into())
            })?;
            let c = load_confusion(&syn.confusion)?;
            (
                annotate_dataset(ds, &ds.voted_labels(), &c, syn.m, seed)?,
                cfg.split.seed,
            )
        }
    };
    // Stratify on the input's voted labels so the annotation axis keeps one partition.
    let partition = split(ds, cfg.split.cal_fraction, cfg.split.stratify, split_seed)?;
    let (cal, test) = partition.datasets(&data)?;
    Ok(RunData {
        seed,
        data,
        cal_indices: partition.cal,
        cal,
        test,
        mc_seed: seeding::derive(cfg.mc.seed, seed),
        mcts_seed: seeding::derive(seed, MCTS_TAG),
    })
}

/// A fitted model with method-specific diagnostics.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: CalibratorModel,
    pub smoothing: Option<SmoothingDiagnostics>,
}

/// Fits `method` on `cal`; the oracle fits on `test`.
pub fn fit_method(
    method: MethodId,
    cal: &LogitDataset,
    test: &LogitDataset,
    cfg: &ExperimentConfig,
    mcts_seed: u64,
) -> Result<Fitted> {
    let scalar = ScalarMinimizerConfig::default();
    let affine = VectorMinimizerConfig::affine();
    let logits = cal.logits();
    let voted = SoftTargetSet::voted(cal);
    let soft = SoftTargetSet::annotator(cal);
    let lsts = |smoothing| -> Result<Fitted> {
        let (targets, diag) = make_lsts_targets(&logits, &cal.voted_labels(), smoothing)?;
        Ok(Fitted {
            model: fit_temperature(&logits, &targets, &scalar)?,
            smoothing: Some(diag),
        })
    };
    let plain = |model: Result<CalibratorModel>| {
        model.map(|model| Fitted {
            model,
            smoothing: None,
        })
    };
    let fitted = match method {
        MethodId::Uncalibrated => plain(Ok(CalibratorModel::identity(cal.k()))),
        MethodId::Ts => plain(fit_temperature(&logits, &voted, &scalar)),
        MethodId::Ats => plain(fit_ats(
            &logits,
            &cal.voted_labels(),
            cfg.lambda_ats,
            &VectorMinimizerConfig::ats(),
        )),
        MethodId::Platt => plain(fit_diag_affine(&logits, &voted, &affine)),
        MethodId::DirichletHard => plain(fit_dirichlet(&logits, &voted, cfg.lambda_odir, &affine)),
        MethodId::Slts => plain(fit_temperature(&logits, &soft, &scalar)),
        MethodId::Mcts => plain(fit_mcts(cal, cfg.mcts_s, mcts_seed, &scalar)),
        MethodId::SoftPlatt => plain(fit_diag_affine(&logits, &soft, &affine)),
        MethodId::VectorScaling => plain(fit_vector_scaling(
            &logits,
            &soft,
            &VectorMinimizerConfig::vector_scaling(),
        )),
        MethodId::IrSoft => plain(fit_isotonic_soft_on(cal)),
        MethodId::DirichletSoft => plain(fit_dirichlet(&logits, &soft, cfg.lambda_odir, &affine)),
        MethodId::Lsts => lsts(Smoothing::Global),
        MethodId::LstsFixed => lsts(Smoothing::Fixed {
            epsilon: cfg.lsts_fixed_epsilon,
        }),
        MethodId::LstsEntropy => lsts(Smoothing::Entropy),
        MethodId::LstsClasswise => lsts(Smoothing::Classwise),
        MethodId::OracleTs => plain(fit_temperature(
            &test.logits(),
            &SoftTargetSet::annotator(test),
            &scalar,
        )),
    }?;
    Ok(Fitted {
        model: fitted.model.with_config_digest(cfg),
        ..fitted
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// One (method, seed) outcome: metrics and model, or an error record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: MethodId,
    pub seed: u64,
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CalibratorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl Cell {
    pub fn failed(method: MethodId, seed: u64, err: &Error) -> Self {
        Cell {
            method,
            seed,
            oracle: method.is_oracle(),
            metrics: None,
            model: None,
            smoothing: None,
            error: Some(err.into()),
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        self.model.as_ref().and_then(CalibratorModel::temperature)
    }
}

/// Fits and evaluates one cell; failures become error records.
pub fn run_cell(method: MethodId, run: &RunData, cfg: &ExperimentConfig) -> Cell {
    let outcome = (|| -> Result<(Fitted, MetricsReport)> {
        if method.needs_raw_annotations() && !run.cal.has_annotations() {
            return Err(Error::Input(format!(
                "method {method} needs raw annotations on every calibration example"
            )));
        }
        let fitted = fit_method(method, &run.cal, &run.test, cfg, run.mcts_seed)?;
        let probs = apply_all(&fitted.model, &run.test.logits())?;
        let mc = McConfig {
            s: cfg.mc.s,
            seed: run.mc_seed,
            b: cfg.bins,
        };
        let metrics = evaluate(
            &probs,
            &run.test.pi_hats(),
            &run.test.voted_labels(),
            fitted.model.temperature(),
            mc,
        )?;
        Ok((fitted, metrics))
    })();
    match outcome {
        Ok((fitted, metrics)) => Cell {
            method,
            seed: run.seed,
            oracle: method.is_oracle(),
            metrics: Some(metrics),
            model: Some(fitted.model),
            smoothing: fitted.smoothing,
            error: None,
        },
        Err(e) => Cell::failed(method, run.seed, &e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ece_true: f64,
    pub aece_true: f64,
    pub cwece_true: f64,
    pub ece_voted: f64,
    pub brier_soft: f64,
    pub nll_soft: f64,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

/// Mean and sample standard deviation over a method's successful cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: MethodId,
    pub oracle: bool,
    pub n_ok: usize,
    pub n_error: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<MetricSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(method: MethodId, cells: &[&Cell]) -> Aggregate {
    let ok: Vec<&MetricsReport> = cells.iter().filter_map(|c| c.metrics.as_ref()).collect();
    let mut agg = Aggregate {
        method,
        oracle: method.is_oracle(),
        n_ok: ok.len(),
        n_error: cells.len() - ok.len(),
        mean: None,
        std: None,
    };
    if ok.is_empty() {
        return agg;
    }
    let col = |f: fn(&MetricsReport) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
    let ts: Vec<f64> = ok.iter().filter_map(|m| m.t_fitted).collect();
    let t = (ts.len() == ok.len()).then(|| mean_std(&ts));
    let pairs = [
        col(|m| m.ece_true),
        col(|m| m.aece_true),
        col(|m| m.cwece_true),
        col(|m| m.ece_voted),
        col(|m| m.brier_soft),
        col(|m| m.nll_soft),
    ];
    let build = |pick: fn((f64, f64)) -> f64| MetricSummary {
        ece_true: pick(pairs[0]),
        aece_true: pick(pairs[1]),
        cwece_true: pick(pairs[2]),
        ece_voted: pick(pairs[3]),
        brier_soft: pick(pairs[4]),
        nll_soft: pick(pairs[5]),
        t: t.map(pick),
    };
    agg.mean = Some(build(|p| p.0));
    agg.std = Some(build(|p| p.1));
    agg
}

pub(crate) fn aggregate_all(methods: &[MethodId], cells: &[Cell]) -> Vec<Aggregate> {
    methods
        .iter()
        .map(|&m| {
            aggregate(
                m,
                &cells.iter().filter(|c| c.method == m).collect::<Vec<_>>(),
            )
        })
        .collect()
}

/// What is needed to rerun a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_digest: String,
    pub dataset_digest: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn new(ds: &LogitDataset, cfg: &ExperimentConfig) -> Self {
        Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: digest_json(cfg),
            dataset_digest: dataset_digest(ds),
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub provenance: Provenance,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchmarkReport {
    pub fn cell(&self, method: MethodId, seed: u64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.seed == seed)
    }

    pub fn aggregate(&self, method: MethodId) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

/// Prepares every seed, then runs all cells in parallel on the current
/// rayon pool; output order is seed-major, then method, as configured.
pub(crate) fn run_grid(
    cfg: &ExperimentConfig,
    methods: &[MethodId],
    prepare: impl Fn(u64) -> Result<RunData> + Sync,
) -> Vec<Cell> {
    let runs: Vec<(u64, Result<RunData>)> =
        cfg.seeds.par_iter().map(|&s| (s, prepare(s))).collect();
    let jobs: Vec<(usize, MethodId)> = (0..runs.len())
        .flat_map(|r| methods.iter().map(move |&m| (r, m)))
        .collect();
    jobs.par_iter()
        .map(|&(r, m)| match &runs[r] {
            (_, Ok(run)) => run_cell(m, run, cfg),
            (seed, Err(e)) => Cell::failed(m, *seed, e),
        })
        .collect()
}

/// Runs the configured methods over all seeds.
pub fn run_benchmark(ds: &LogitDataset, cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let cells = run_grid(cfg, &cfg.methods, |s| prepare_run(ds, cfg, s));
    Ok(BenchmarkReport {
        provenance: Provenance::new(ds, cfg),
        aggregates: aggregate_all(&cfg.methods, &cells),
        cells,
    })
}
