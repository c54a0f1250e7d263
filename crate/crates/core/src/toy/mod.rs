//! Three-cluster Gaussian experiment showing that voted-label calibration
//! can lower voted ECE while raising ECE against the annotator distribution.
//!
//! Clusters 0 and 2 are unambiguous. The middle cluster has
//! `pi = [0, 0.7, 0.3]`, so its voted label is always 1.

pub mod mlp;

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::calibrators::{
    apply_all, fit_diag_affine, fit_temperature, replace_top_confidence, CalibratorModel,
    SoftTargetSet,
};
use crate::error::{Error, Result};
use crate::metrics::{ece_binned, ece_true, ece_voted, BinScheme, McConfig};
use crate::optim::{ScalarMinimizerConfig, VectorMinimizerConfig};
use crate::prob::{Distribution, LogitVector};
use crate::seeding;
use mlp::Mlp;

pub const K: usize = 3;
pub const AMBIGUOUS_CLUSTER: usize = 1;

struct Cluster {
    mean: [f64; 2],
    /// Per-axis variances.
    var: [f64; 2],
    pi: [f64; K],
}

const CLUSTERS: [Cluster; 3] = [
    Cluster {
        mean: [-3.2, 1.1],
        var: [0.60, 0.45],
        pi: [1.0, 0.0, 0.0],
    },
    Cluster {
        mean: [0.0, 0.0],
        var: [1.15, 0.75],
        pi: [0.0, 0.70, 0.30],
    },
    Cluster {
        mean: [3.2, -1.1],
        var: [0.60, 0.45],
        pi: [0.0, 0.0, 1.0],
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySeeds {
    pub data: u64,
    pub labels: u64,
    pub training: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_per_cluster: usize,
    pub seeds: ToySeeds,
    pub mlp: MlpConfig,
    pub splits: SplitFractions,
    pub histogram_bins: usize,
    pub mc: McConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_per_cluster: 2000,
            seeds: ToySeeds {
                data: 0,
                labels: 1,
                training: 2,
            },
            mlp: MlpConfig {
                hidden: 64,
                layers: 2,
                epochs: 200,
                learning_rate: 0.1,
            },
            splits: SplitFractions {
                train: 0.6,
                cal: 0.2,
                test: 0.2,
            },
            histogram_bins: 15,
            mc: McConfig::default(),
        }
    }
}

impl ToyConfig {
    /// Same configuration with every seed derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = ToySeeds {
            data: seeding::derive(seed, 0),
            labels: seeding::derive(seed, 1),
            training: seeding::derive(seed, 2),
        };
        self.mc.seed = seeding::derive(seed, 3);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.splits;
        if [s.train, s.cal, s.test]
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
            || (s.train + s.cal + s.test - 1.0).abs() > 1e-9
        {
            return Err(Error::Input(format!(
                "split fractions {}/{}/{} must be in [0, 1] and sum to 1",
                s.train, s.cal, s.test
            )));
        }
        if self.mlp.hidden == 0 || self.mlp.layers == 0 {
            return Err(Error::Input(
                "network needs at least one hidden layer of width >= 1".into(),
            ));
        }
        if !(self.mlp.learning_rate > 0.0 && self.mlp.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate {} must be positive",
                self.mlp.learning_rate
            )));
        }
        if self.histogram_bins == 0 || self.mc.b == 0 || self.mc.s == 0 {
            return Err(Error::Input(
                "bin and draw counts must be at least 1".into(),
            ));
        }
        let min_split = s.cal.min(s.test).min(s.train) * self.n_per_cluster as f64;
        if min_split < 1.0 {
            return Err(Error::Input(format!(
                "n_per_cluster = {} leaves an empty split",
                self.n_per_cluster
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Cal,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint {
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub train_label: usize,
    pub voted_label: usize,
    pub split: Split,
}

impl ToyPoint {
    pub fn pi(&self) -> Distribution {
        Distribution::new(CLUSTERS[self.cluster].pi.to_vec()).expect("cluster pi is a distribution")
    }
}

/// Samples the three clusters, one drawn label per point, and a per-cluster
/// train/cal/test assignment.
pub fn generate_toy(cfg: &ToyConfig) -> Result<Vec<ToyPoint>> {
    cfg.validate()?;
    let n = cfg.n_per_cluster;
    let n_train = (cfg.splits.train * n as f64).round() as usize;
    let n_cal = (cfg.splits.cal * n as f64).round() as usize;
    let mut points = Vec::with_capacity(3 * n);
    for (c, cluster) in CLUSTERS.iter().enumerate() {
        let mut pos = seeding::stream(cfg.seeds.data, c as u64);
        let mut lab = seeding::stream(cfg.seeds.labels, c as u64);
        let label_dist =
            rand_distr::weighted::WeightedIndex::new(cluster.pi).expect("cluster pi is valid");
        let axes = [
            Normal::new(cluster.mean[0], cluster.var[0].sqrt()).expect("finite"),
            Normal::new(cluster.mean[1], cluster.var[1].sqrt()).expect("finite"),
        ];
        let voted = crate::prob::argmax(&cluster.pi);
        for i in 0..n {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_cal {
                Split::Cal
            } else {
                Split::Test
            };
            points.push(ToyPoint {
                x: axes[0].sample(&mut pos),
                y: axes[1].sample(&mut pos),
                cluster: c,
                train_label: label_dist.sample(&mut lab),
                voted_label: voted,
                split,
            });
        }
    }
    Ok(points)
}

/// Training outcome and held-out logits.
#[derive(Debug, Clone)]
pub struct TrainedToy {
    pub cal: Vec<LogitVector>,
    pub test: Vec<LogitVector>,
    pub final_loss: f64,
    pub clear_train_accuracy: f64,
}

fn features(points: &[&ToyPoint]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn to_logits(rows: Vec<Vec<f64>>) -> Result<Vec<LogitVector>> {
    rows.into_iter().map(LogitVector::new).collect()
}

fn accuracy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(z, y)| crate::prob::argmax(z) == **y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains the network on voted labels of the training split.
pub fn train_toy_mlp(points: &[ToyPoint], cfg: &ToyConfig) -> Result<TrainedToy> {
    cfg.validate()?;
    let select = |s: Split| points.iter().filter(|p| p.split == s).collect::<Vec<_>>();
    let (train, cal, test) = (
        select(Split::Train),
        select(Split::Cal),
        select(Split::Test),
    );
    let x = features(&train);
    let y: Vec<usize> = train.iter().map(|p| p.voted_label).collect();
    let mut rng = seeding::stream(cfg.seeds.training, 0);
    let mut net = Mlp::new(2, cfg.mlp.hidden, cfg.mlp.layers, K, &mut rng);
    let final_loss = net.train(&x, &y, cfg.mlp.epochs, cfg.mlp.learning_rate)?;

    let clear: Vec<&ToyPoint> = train
        .iter()
        .copied()
        .filter(|p| p.cluster != AMBIGUOUS_CLUSTER)
        .collect();
    let clear_labels: Vec<usize> = clear.iter().map(|p| p.voted_label).collect();
    let clear_train_accuracy = accuracy(&net.logits(&features(&clear)), &clear_labels);
    Ok(TrainedToy {
        cal: to_logits(net.logits(&features(&cal)))?,
        test: to_logits(net.logits(&features(&test)))?,
        final_loss,
        clear_train_accuracy,
    })
}

/// Equal-width bins over top-class confidence, each mapped to its
/// training accuracy; empty bins map to their center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBinning {
    pub values: Vec<f64>,
}

impl HistogramBinning {
    pub fn fit(confidences: &[f64], correct: &[bool], b: usize) -> Result<Self> {
        let (_, bins) = ece_binned(confidences, correct, b, BinScheme::EqualWidth)?;
        let values = bins
            .bins
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if s.count == 0 {
                    (j as f64 + 0.5) / b as f64
                } else {
                    s.mean_accuracy
                }
            })
            .collect();
        Ok(HistogramBinning { values })
    }

    pub fn map(&self, confidence: f64) -> f64 {
        let b = self.values.len();
        self.values[((confidence * b as f64).floor() as usize).min(b - 1)]
    }

    /// Replaces the top-class confidence, rescaling the rest.
    pub fn apply(&self, p: &Distribution) -> Distribution {
        let top = p.argmax();
        let out = replace_top_confidence(p.probs(), top, self.map(p.probs()[top]));
        Distribution::from_vec_unchecked(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMethodResult {
    pub method: String,
    pub ece_voted: f64,
    pub ece_true: f64,
    pub ece_true_ambiguous: f64,
    pub ece_true_clear: f64,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDiagnostics {
    pub final_train_loss: f64,
    pub clear_train_accuracy: f64,
    pub clear_test_accuracy: f64,
    pub ambiguous_mean_confidence: f64,
    pub n_cal: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub version: String,
    pub config: ToyConfig,
    pub methods: Vec<ToyMethodResult>,
    pub diagnostics: ToyDiagnostics,
}

impl ToyReport {
    pub fn method(&self, name: &str) -> Option<&ToyMethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Toy experiment\n\n");
        s.push_str("| method | ECE voted (%) | ECE true (%) | ECE true ambiguous (%) | ECE true clear (%) | T |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for m in &self.methods {
            let t = m.t.map_or("-".to_string(), |t| format!("{t:.3}"));
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
                m.method,
                100.0 * m.ece_voted,
                100.0 * m.ece_true,
                100.0 * m.ece_true_ambiguous,
                100.0 * m.ece_true_clear,
                t
            ));
        }
        let d = &self.diagnostics;
        s.push_str(&format!(
            "\nClear-cluster train accuracy {:.4}, test accuracy {:.4}; ambiguous-cluster mean confidence {:.4}; cal n = {}, test n = {}.\n",
            d.clear_train_accuracy, d.clear_test_accuracy, d.ambiguous_mean_confidence, d.n_cal, d.n_test
        ));
        s
    }
}

/// Writes `x,y,cluster,train_label,voted_label` rows.
pub fn write_points_csv(points: &[ToyPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "cluster", "train_label", "voted_label"])
        .map_err(|e| Error::Input(e.to_string()))?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.cluster.to_string(),
            p.train_label.to_string(),
            p.voted_label.to_string(),
        ])
        .map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<points>"), e))
}

/// Generates data, trains on voted labels, fits voted-label calibrators
/// (TS, Platt, histogram binning) and soft-label TS, and evaluates each on
/// the test split, overall and per cluster type.
pub fn run_toy_experiment(cfg: &ToyConfig) -> Result<(ToyReport, Vec<ToyPoint>)> {
    let points = generate_toy(cfg)?;
    let trained = train_toy_mlp(&points, cfg)?;
    let cal: Vec<&ToyPoint> = points.iter().filter(|p| p.split == Split::Cal).collect();
    let test: Vec<&ToyPoint> = points.iter().filter(|p| p.split == Split::Test).collect();

    let cal_voted: Vec<usize> = cal.iter().map(|p| p.voted_label).collect();
    let voted_targets = SoftTargetSet::one_hot(&cal_voted, K)?;
    let soft_targets = SoftTargetSet::annotator_from(cal.iter().map(|p| p.pi()).collect());
    let scalar = ScalarMinimizerConfig::default();
    let ts = fit_temperature(&trained.cal, &voted_targets, &scalar)?;
    let platt = fit_diag_affine(
        &trained.cal,
        &voted_targets,
        &VectorMinimizerConfig::affine(),
    )?;
    let slts = fit_temperature(&trained.cal, &soft_targets, &scalar)?;
    let cal_probs = apply_all(&CalibratorModel::identity(K), &trained.cal)?;
    let (cal_conf, cal_correct): (Vec<f64>, Vec<bool>) = cal_probs
        .iter()
        .zip(&cal_voted)
        .map(|(p, y)| (p.probs()[p.argmax()], p.argmax() == *y))
        .unzip();
    let hist = HistogramBinning::fit(&cal_conf, &cal_correct, cfg.histogram_bins)?;

    let test_pi: Vec<Distribution> = test.iter().map(|p| p.pi()).collect();
    let test_voted: Vec<usize> = test.iter().map(|p| p.voted_label).collect();
    let ambiguous: Vec<usize> = (0..test.len())
        .filter(|&i| test[i].cluster == AMBIGUOUS_CLUSTER)
        .collect();
    let clear: Vec<usize> = (0..test.len())
        .filter(|&i| test[i].cluster != AMBIGUOUS_CLUSTER)
        .collect();
    let mc = cfg.mc;
    let evaluate =
        |method: &str, probs: Vec<Distribution>, t: Option<f64>| -> Result<ToyMethodResult> {
            let pick = |idx: &[usize], v: &[Distribution]| {
                idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>()
            };
            let stratum = |idx: &[usize]| {
                ece_true(
                    &pick(idx, &probs),
                    &pick(idx, &test_pi),
                    mc.s,
                    mc.seed,
                    mc.b,
                    BinScheme::EqualWidth,
                )
            };
            Ok(ToyMethodResult {
                method: method.to_string(),
                ece_voted: ece_voted(&probs, &test_voted, mc.b, BinScheme::EqualWidth)?.0,
                ece_true: ece_true(&probs, &test_pi, mc.s, mc.seed, mc.b, BinScheme::EqualWidth)?,
                ece_true_ambiguous: stratum(&ambiguous)?,
                ece_true_clear: stratum(&clear)?,
                t,
            })
        };
    let uncal = apply_all(&CalibratorModel::identity(K), &trained.test)?;
    let hist_probs = uncal.iter().map(|p| hist.apply(p)).collect();
    let methods = vec![
        evaluate("uncalibrated", uncal.clone(), None)?,
        evaluate("ts", apply_all(&ts, &trained.test)?, ts.temperature())?,
        evaluate("platt", apply_all(&platt, &trained.test)?, None)?,
        evaluate("histogram", hist_probs, None)?,
        evaluate("slts", apply_all(&slts, &trained.test)?, slts.temperature())?,
    ];

    let clear_test_accuracy = clear
        .iter()
        .filter(|&&i| uncal[i].argmax() == test_voted[i])
        .count() as f64
        / clear.len().max(1) as f64;
    let ambiguous_mean_confidence =
        ambiguous.iter().map(|&i| uncal[i].probs()[1]).sum::<f64>() / ambiguous.len().max(1) as f64;
    let report = ToyReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        methods,
        diagnostics: ToyDiagnostics {
            final_train_loss: trained.final_loss,
            clear_train_accuracy: trained.clear_train_accuracy,
            clear_test_accuracy,
            ambiguous_mean_confidence,
            n_cal: cal.len(),
            n_test: test.len(),
        },
    };
    Ok((report, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            n_per_cluster: 300,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn generated_labels() {
        let cfg = ToyConfig::default();
        let pts = generate_toy(&cfg).unwrap();
        assert_eq!(pts.len(), 6000);
        assert!(pts
            .iter()
            .filter(|p| p.cluster == 1)
            .all(|p| p.voted_label == 1));
        assert!(pts
            .iter()
            .filter(|p| p.cluster == 0)
            .all(|p| p.pi().probs() == [1.0, 0.0, 0.0]));
        let middle: Vec<&ToyPoint> = pts.iter().filter(|p| p.cluster == 1).collect();
        let frac =
            middle.iter().filter(|p| p.train_label == 2).count() as f64 / middle.len() as f64;
        let sigma = (0.3f64 * 0.7 / middle.len() as f64).sqrt();
        assert!((frac - 0.3).abs() < 3.0 * sigma, "{frac}");
        assert_eq!(pts.iter().filter(|p| p.split == Split::Cal).count(), 1200);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_toy(&small()).unwrap(),
            generate_toy(&small()).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.splits.test = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.mlp.hidden = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn histogram_binning_examples() {
        let h = HistogramBinning::fit(&[0.2, 0.5, 0.9], &[true, false, true], 1).unwrap();
        assert!((h.map(0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.map(1.0) - 2.0 / 3.0).abs() < 1e-15);

        let conf = vec![1.0; 10];
        let correct: Vec<bool> = (0..10).map(|i| i < 7).collect();
        let h = HistogramBinning::fit(&conf, &correct, 15).unwrap();
        assert!((h.map(1.0) - 0.7).abs() < 1e-15);
        assert!((h.map(0.5) - 0.5 / 15.0 - 7.0 / 15.0).abs() < 1e-12);

        let p = Distribution::new(vec![0.8, 0.15, 0.05]).unwrap();
        let out = h.apply(&Distribution::new(vec![0.0, 1.0, 0.0]).unwrap());
        assert!((out.probs()[1] - 0.7).abs() < 1e-15);
        let moved = HistogramBinning {
            values: vec![0.6; 15],
        }
        .apply(&p);
        assert!((moved.probs()[0] - 0.6).abs() < 1e-15);
        assert!((moved.probs()[1] / moved.probs()[2] - 3.0).abs() < 1e-12);
    }

    /// Accuracy of the density-argmax rule on the clear training points.
    fn bayes_clear_accuracy(points: &[ToyPoint]) -> f64 {
        let log_density = |p: &ToyPoint, c: &Cluster| -> f64 {
            (0..2)
                .map(|a| {
                    let v = [p.x, p.y][a] - c.mean[a];
                    -0.5 * v * v / c.var[a] - 0.5 * c.var[a].ln()
                })
                .sum()
        };
        let clear: Vec<&ToyPoint> = points
            .iter()
            .filter(|p| p.split == Split::Train && p.cluster != AMBIGUOUS_CLUSTER)
            .collect();
        let hits = clear
            .iter()
            .filter(|p| {
                let scores: Vec<f64> = CLUSTERS.iter().map(|c| log_density(p, c)).collect();
                crate::prob::argmax(&scores) == p.cluster
            })
            .count();
        hits as f64 / clear.len() as f64
    }

    #[test]
    fn training_is_deterministic_and_nearly_bayes_optimal_on_clear_clusters() {
        let cfg = ToyConfig {
            n_per_cluster: 600,
            ..ToyConfig::default()
        };
        let pts = generate_toy(&cfg).unwrap();
        let a = train_toy_mlp(&pts, &cfg).unwrap();
        let b = train_toy_mlp(&pts, &cfg).unwrap();
        assert_eq!(a.test, b.test);
        let bayes = bayes_clear_accuracy(&pts);
        assert!(
            a.clear_train_accuracy >= bayes - 0.01,
            "{} vs {bayes}",
            a.clear_train_accuracy
        );
    }

    #[test]
    fn points_csv_has_header_and_rows() {
        let pts = generate_toy(&small()).unwrap();
        let mut buf = Vec::new();
        write_points_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,cluster,train_label,voted_label\n"));
        assert_eq!(text.lines().count(), pts.len() + 1);
    }
}
