//! Sweeps over calibration-set size, annotation count and MCTS sample count.

use serde::{Deserialize, Serialize};

use crate::annotators::{subsample_dataset_with, SamplingMode};
use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::harness::bench::{
    aggregate_all, prepare_run, run_grid, Aggregate, Cell, Provenance, RunData,
};
use crate::harness::config::{AblationAxis, ExperimentConfig, MethodId};
use crate::harness::split::nested_subset;
use crate::seeding;

const CALSIZE_TAG: u64 = 11;
const ANNOTATIONS_TAG: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub value: f64,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub provenance: Provenance,
    pub axis: AblationAxis,
    pub sampling: SamplingMode,
    pub points: Vec<AblationPoint>,
}

fn whole(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Input(format!(
            "{what} must be a positive integer, got {value}"
        )))
    }
}

fn calsize_run(run: RunData, fraction: f64) -> Result<RunData> {
    let keep = nested_subset(
        &run.data,
        &run.cal_indices,
        fraction,
        seeding::derive(run.seed, CALSIZE_TAG),
    )?;
    let cal = run.data.subset(&keep)?;
    Ok(RunData {
        cal_indices: keep,
        cal,
        ..run
    })
}

fn annotations_run(run: RunData, m: usize, mode: SamplingMode) -> Result<RunData> {
    let cal = subsample_dataset_with(
        &run.cal,
        m,
        seeding::derive(run.seed, ANNOTATIONS_TAG),
        mode,
    )?;
    Ok(RunData { cal, ..run })
}

/// Runs the sweep named by `axis` (or the config's ablation block).
///
/// Only the calibration side is ablated; the test split and its label draws
/// match the unablated benchmark for the same seed.
pub fn run_ablation(
    ds: &LogitDataset,
    cfg: &ExperimentConfig,
    axis: AblationAxis,
) -> Result<AblationReport> {
    cfg.validate()?;
    let values = cfg.ablation_values(axis);
    let sampling = cfg
        .ablation
        .as_ref()
        .map(|a| a.sampling)
        .unwrap_or_default();
    match axis {
        AblationAxis::Calsize => {
            if let Some(f) = values.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(Error::Input(format!(
                    "calibration fraction {f} must lie in (0, 1]"
                )));
            }
        }
        AblationAxis::Annotations => {
            if !ds.has_annotations() {
                return Err(Error::Input(
                    "annotation sweep needs raw annotations on every example".into(),
                ));
            }
            for v in &values {
                whole(*v, "annotation count")?;
            }
        }
        AblationAxis::MctsS => {
            for v in &values {
                whole(*v, "MCTS sample count")?;
            }
        }
    }

    let mut points = Vec::with_capacity(values.len());
    for &value in &values {
        let (cfg_v, methods) = match axis {
            AblationAxis::MctsS => {
                let mut c = cfg.clone();
                c.mcts_s = whole(value, "MCTS sample count")?;
                (c, vec![MethodId::Mcts])
            }
            _ => (cfg.clone(), cfg.methods.clone()),
        };
        let cells = run_grid(&cfg_v, &methods, |seed| {
            let run = prepare_run(ds, &cfg_v, seed)?;
            match axis {
                AblationAxis::Calsize => calsize_run(run, value),
                AblationAxis::Annotations => annotations_run(run, value as usize, sampling),
                AblationAxis::MctsS => Ok(run),
            }
        });
        points.push(AblationPoint {
            value,
            aggregates: aggregate_all(&methods, &cells),
            cells,
        });
    }
    Ok(AblationReport {
        provenance: Provenance::new(ds, cfg),
        axis,
        sampling,
        points,
    })
}
