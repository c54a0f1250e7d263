use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotators::SamplingMode;
use crate::calibrators::{DEFAULT_LAMBDA_ATS, DEFAULT_LAMBDA_ODIR};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_BINS;

/// Every calibration method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Uncalibrated,
    Ts,
    Ats,
    Platt,
    DirichletHard,
    Slts,
    Mcts,
    SoftPlatt,
    VectorScaling,
    IrSoft,
    DirichletSoft,
    Lsts,
    LstsFixed,
    LstsEntropy,
    LstsClasswise,
    OracleTs,
}

impl MethodId {
    pub const ALL: [MethodId; 16] = [
        MethodId::Uncalibrated,
        MethodId::Ts,
        MethodId::Ats,
        MethodId::Platt,
        MethodId::DirichletHard,
        MethodId::Slts,
        MethodId::Mcts,
        MethodId::SoftPlatt,
        MethodId::VectorScaling,
        MethodId::IrSoft,
        MethodId::DirichletSoft,
        MethodId::Lsts,
        MethodId::LstsFixed,
        MethodId::LstsEntropy,
        MethodId::LstsClasswise,
        MethodId::OracleTs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Uncalibrated => "uncal",
            MethodId::Ts => "ts",
            MethodId::Ats => "ats",
            MethodId::Platt => "platt",
            MethodId::DirichletHard => "dirichlet-hard",
            MethodId::Slts => "slts",
            MethodId::Mcts => "mcts",
            MethodId::SoftPlatt => "softplatt",
            MethodId::VectorScaling => "vs",
            MethodId::IrSoft => "ir-soft",
            MethodId::DirichletSoft => "dirichlet-soft",
            MethodId::Lsts => "lsts",
            MethodId::LstsFixed => "lsts-fixed",
            MethodId::LstsEntropy => "lsts-entropy",
            MethodId::LstsClasswise => "lsts-classwise",
            MethodId::OracleTs => "oracle-ts",
        }
    }

    /// Fitted on the test split; a leakage reference, never a real method.
    pub fn is_oracle(self) -> bool {
        self == MethodId::OracleTs
    }

    pub fn needs_raw_annotations(self) -> bool {
        self == MethodId::Mcts
    }

    /// The member of this method's family fitted against `target`.
    pub fn with_target(self, target: Target) -> Result<MethodId> {
        use MethodId::*;
        let family = match self {
            Ts | Slts | Mcts => [Some(Ts), Some(Slts), Some(Mcts)],
            Platt | SoftPlatt => [Some(Platt), Some(SoftPlatt), None],
            DirichletHard | DirichletSoft => [Some(DirichletHard), Some(DirichletSoft), None],
            other => {
                return Err(Error::Input(format!(
                    "method {other} has a fixed target; --target does not apply"
                )))
            }
        };
        let idx = match target {
            Target::Voted => 0,
            Target::Soft => 1,
            Target::Mc => 2,
        };
        family[idx].ok_or_else(|| Error::Input(format!("method {self} has no {target} variant")))
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = MethodId::ALL.iter().map(|m| m.as_str()).collect();
                Error::Input(format!("unknown method {s:?}; known: {}", known.join(", ")))
            })
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Supervision a fit is run against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Voted,
    Soft,
    Mc,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Voted => "voted",
            Target::Soft => "soft",
            Target::Mc => "mc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    #[serde(rename = "S")]
    pub s: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub cal_fraction: f64,
    pub stratify: bool,
    pub seed: u64,
}

/// What the run seeds vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedAxis {
    /// Each seed draws a new calibration/test split.
    #[default]
    Split,
    /// The split is fixed; each seed redraws synthetic annotations.
    Annotations,
}

/// Synthetic annotation source for the annotation seed axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAnnotations {
    /// `"isic"` or a path to a confusion-matrix file.
    pub confusion: String,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    Calsize,
    Annotations,
    MctsS,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calsize" => Ok(AblationAxis::Calsize),
            "annotations" => Ok(AblationAxis::Annotations),
            "mcts-s" => Ok(AblationAxis::MctsS),
            other => Err(Error::Input(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            AblationAxis::Calsize => vec![0.05, 0.1, 0.25, 0.5, 1.0],
            AblationAxis::Annotations => vec![1.0, 3.0, 5.0, 10.0, 25.0, 50.0],
            AblationAxis::MctsS => vec![1.0, 5.0, 10.0, 25.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    pub axis: AblationAxis,
    #[serde(default)]
    pub values: Vec<f64>,
    /// Relation of annotation subsamples across counts.
    #[serde(default)]
    pub sampling: SamplingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Resolved against the config file's directory when relative.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub methods: Vec<MethodId>,
    pub mc: McSettings,
    pub bins: usize,
    pub split: SplitSettings,
    pub seeds: Vec<u64>,
    pub seed_axis: SeedAxis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticAnnotations>,
    #[serde(rename = "mcts_S")]
    pub mcts_s: usize,
    pub lambda_odir: f64,
    pub lambda_ats: f64,
    pub lsts_fixed_epsilon: f64,
    pub entropy_bins: usize,
    pub spearman_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            methods: vec![
                MethodId::Uncalibrated,
                MethodId::Ts,
                MethodId::Slts,
                MethodId::Mcts,
                MethodId::Lsts,
            ],
            mc: McSettings { s: 100, seed: 0 },
            bins: DEFAULT_BINS,
            split: SplitSettings {
                cal_fraction: 0.5,
                stratify: true,
                seed: 42,
            },
            seeds: vec![42],
            seed_axis: SeedAxis::Split,
            synthetic: None,
            mcts_s: 1,
            lambda_odir: DEFAULT_LAMBDA_ODIR,
            lambda_ats: DEFAULT_LAMBDA_ATS,
            lsts_fixed_epsilon: 0.1,
            entropy_bins: 10,
            spearman_threshold: 0.9,
            ablation: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds requested".into());
        }
        if self.mc.s == 0 || self.mcts_s == 0 {
            return bad("S must be at least 1".into());
        }
        if self.bins == 0 {
            return bad("bin count must be at least 1".into());
        }
        if !(self.split.cal_fraction > 0.0 && self.split.cal_fraction < 1.0) {
            return bad(format!(
                "cal_fraction {} must lie in (0, 1)",
                self.split.cal_fraction
            ));
        }
        if self.entropy_bins < 2 {
            return bad("entropy_bins must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.lsts_fixed_epsilon) {
            return bad(format!(
                "lsts_fixed_epsilon {} must lie in [0, 1]",
                self.lsts_fixed_epsilon
            ));
        }
        if self.lambda_odir < 0.0 || self.lambda_ats < 0.0 {
            return bad("regularization weights must be non-negative".into());
        }
        if self.seed_axis == SeedAxis::Annotations && self.synthetic.is_none() {
            return bad("seed_axis = annotations needs a synthetic annotation source".into());
        }
        if let Some(s) = &self.synthetic {
            if s.m == 0 {
                return bad("synthetic m must be at least 1".into());
            }
        }
        if let Some(a) = &self.ablation {
            let ok = |v: &f64| match a.axis {
                AblationAxis::Calsize => *v > 0.0 && *v <= 1.0,
                AblationAxis::Annotations | AblationAxis::MctsS => *v >= 1.0 && v.fract() == 0.0,
            };
            if let Some(v) = a.values.iter().find(|v| !ok(v)) {
                return bad(format!("ablation value {v} invalid for the chosen axis"));
            }
        }
        Ok(())
    }

    pub fn ablation_values(&self, axis: AblationAxis) -> Vec<f64> {
        match &self.ablation {
            Some(a) if a.axis == axis && !a.values.is_empty() => a.values.clone(),
            _ => axis.default_values(),
        }
    }
}
