//! Calibration metrics against sampled annotator labels and soft targets.
//!
//! True-label metrics average over `S` label draws `y ~ pi(x)`. One draw
//! table per `(S, seed)` is shared by every metric in a report so that the
//! columns of a row are computed on identical samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{argmax, cross_entropy, entropy_of, Distribution};

/// Bin count used throughout reports.
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
    pub gap: f64,
}

/// Per-bin statistics behind a reliability diagram.
///
/// Empty bins have zero count and contribute nothing to the ECE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub scheme: BinScheme,
    pub edges: Vec<f64>,
    pub bins: Vec<BinStats>,
}

impl ReliabilityBins {
    /// `sum_b (n_b / n) * gap_b`.
    pub fn weighted_gap(&self) -> f64 {
        let n: usize = self.bins.iter().map(|b| b.count).sum();
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n as f64 * b.gap)
            .sum()
    }
}

/// Bin membership of each example, plus edges.
struct Binning {
    members: Vec<Vec<usize>>,
    edges: Vec<f64>,
}

fn check_confidences(confidences: &[f64]) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::Input("no examples to bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Input(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

fn assign_bins(confidences: &[f64], b: usize, scheme: BinScheme) -> Result<Binning> {
    if b == 0 {
        return Err(Error::Input("bin count must be at least 1".into()));
    }
    check_confidences(confidences)?;
    let mut members = vec![Vec::new(); b];
    let edges = match scheme {
        BinScheme::EqualWidth => {
            for (i, c) in confidences.iter().enumerate() {
                let bin = ((c * b as f64).floor() as usize).min(b - 1);
                members[bin].push(i);
            }
            (0..=b).map(|j| j as f64 / b as f64).collect()
        }
        BinScheme::EqualMass => {
            let n = confidences.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| confidences[i].total_cmp(&confidences[j]).then(i.cmp(&j)));
            let (base, rem) = (n / b, n % b);
            let mut edges = vec![0.0; b + 1];
            edges[b] = 1.0;
            let mut start = 0;
            for (j, bin) in members.iter_mut().enumerate() {
                let size = base + usize::from(j < rem);
                *bin = order[start..start + size].to_vec();
                if j > 0 {
                    edges[j] = bin.first().map_or(edges[j - 1], |&i| confidences[i]);
                }
                start += size;
            }
            edges
        }
    };
    Ok(Binning { members, edges })
}

fn bin_stats(
    binning: &Binning,
    confidences: &[f64],
    correct: &[bool],
    scheme: BinScheme,
) -> (f64, ReliabilityBins) {
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    let bins = binning
        .members
        .iter()
        .map(|m| {
            if m.is_empty() {
                return BinStats {
                    count: 0,
                    mean_confidence: 0.0,
                    mean_accuracy: 0.0,
                    gap: 0.0,
                };
            }
            let count = m.len();
            let conf = m.iter().map(|&i| confidences[i]).sum::<f64>() / count as f64;
            let acc = m.iter().filter(|&&i| correct[i]).count() as f64 / count as f64;
            let gap = (conf - acc).abs();
            ece += count as f64 / n * gap;
            BinStats {
                count,
                mean_confidence: conf,
                mean_accuracy: acc,
                gap,
            }
        })
        .collect();
    (
        ece,
        ReliabilityBins {
            scheme,
            edges: binning.edges.clone(),
            bins,
        },
    )
}

/// Binned expected calibration error of top-class confidences.
pub fn ece_binned(
    confidences: &[f64],
    correct: &[bool],
    b: usize,
    scheme: BinScheme,
) -> Result<(f64, ReliabilityBins)> {
    if confidences.len() != correct.len() {
        return Err(Error::Input(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    let binning = assign_bins(confidences, b, scheme)?;
    Ok(bin_stats(&binning, confidences, correct, scheme))
}

/// Sampled labels `labels[s][i] ~ pi_i`, one row per draw.
///
/// Draw `s` uses its own ChaCha stream of `seed`, so rows do not depend on
/// scheduling or on how many draws are requested.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDraws {
    pub s: usize,
    pub seed: u64,
    labels: Vec<Vec<usize>>,
}

impl LabelDraws {
    pub fn sample(pi: &[Distribution], s: usize, seed: u64) -> Result<Self> {
        if s == 0 {
            return Err(Error::Input(
                "number of label draws must be at least 1".into(),
            ));
        }
        let samplers = pi
            .iter()
            .map(|p| {
                WeightedIndex::new(p.probs())
                    .map_err(|e| Error::Input(format!("bad distribution: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..s)
            .into_par_iter()
            .map(|d| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(d as u64);
                samplers.iter().map(|w| w.sample(&mut rng)).collect()
            })
            .collect();
        Ok(LabelDraws { s, seed, labels })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }
}

fn top_predictions(probs: &[Distribution]) -> (Vec<usize>, Vec<f64>) {
    probs
        .iter()
        .map(|p| {
            let c = p.argmax();
            (c, p.probs()[c])
        })
        .unzip()
}

fn check_aligned(probs: &[Distribution], n: usize) -> Result<()> {
    if probs.len() != n {
        return Err(Error::Input(format!(
            "{} predictions but {n} targets",
            probs.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Input("no examples".into()));
    }
    Ok(())
}

/// Per-draw top-label ECE against sampled labels.
pub fn ece_true_draws(
    probs: &[Distribution],
    draws: &LabelDraws,
    b: usize,
    scheme: BinScheme,
) -> Result<Vec<f64>> {
    check_aligned(probs, draws.n())?;
    let (pred, conf) = top_predictions(probs);
    let binning = assign_bins(&conf, b, scheme)?;
    Ok(draws
        .labels
        .par_iter()
        .map(|row| {
            let correct: Vec<bool> = pred.iter().zip(row).map(|(p, y)| p == y).collect();
            bin_stats(&binning, &conf, &correct, scheme).0
        })
        .collect())
}

/// Running mean; exact when every value is equal.
fn mean(v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .fold(0.0, |m, (i, x)| m + (x - m) / (i + 1) as f64)
}

/// Top-label ECE averaged over `s` label draws from `pi`.
pub fn ece_true(
    probs: &[Distribution],
    pi: &[Distribution],
    s: usize,
    seed: u64,
    b: usize,
    scheme: BinScheme,
) -> Result<f64> {
    check_aligned(probs, pi.len())?;
    let draws = LabelDraws::sample(pi, s, seed)?;
    Ok(mean(&ece_true_draws(probs, &draws, b, scheme)?))
}

/// Reliability statistics averaged over draws.
///
/// Bin membership depends only on confidences. Accuracy is the mean over
/// draws and the gap is the mean per-draw gap, so the weighted gap equals
/// the true-label ECE.
pub fn reliability_true(
    probs: &[Distribution],
    draws: &LabelDraws,
    b: usize,
    scheme: BinScheme,
) -> Result<ReliabilityBins> {
    check_aligned(probs, draws.n())?;
    let (pred, conf) = top_predictions(probs);
    let binning = assign_bins(&conf, b, scheme)?;
    let per_draw: Vec<ReliabilityBins> = draws
        .labels
        .par_iter()
        .map(|row| {
            let correct: Vec<bool> = pred.iter().zip(row).map(|(p, y)| p == y).collect();
            bin_stats(&binning, &conf, &correct, scheme).1
        })
        .collect();
    let s = per_draw.len() as f64;
    let mut out = per_draw[0].clone();
    for (j, bin) in out.bins.iter_mut().enumerate() {
        bin.mean_accuracy = per_draw
            .iter()
            .map(|r| r.bins[j].mean_accuracy)
            .sum::<f64>()
            / s;
        bin.gap = per_draw.iter().map(|r| r.bins[j].gap).sum::<f64>() / s;
    }
    Ok(out)
}

/// Classwise ECE for each draw: per class, equal-width bins over `p_k`
/// against the frequency of sampled label `k`, averaged over classes.
pub fn cwece_true_draws(probs: &[Distribution], draws: &LabelDraws, b: usize) -> Result<Vec<f64>> {
    check_aligned(probs, draws.n())?;
    let k = probs[0].k();
    let per_class: Vec<(Vec<f64>, Binning)> = (0..k)
        .map(|c| {
            let conf: Vec<f64> = probs.iter().map(|p| p.probs()[c]).collect();
            let binning = assign_bins(&conf, b, BinScheme::EqualWidth)?;
            Ok((conf, binning))
        })
        .collect::<Result<_>>()?;
    Ok(draws
        .labels
        .par_iter()
        .map(|row| {
            let total: f64 = per_class
                .iter()
                .enumerate()
                .map(|(c, (conf, binning))| {
                    let hit: Vec<bool> = row.iter().map(|y| *y == c).collect();
                    bin_stats(binning, conf, &hit, BinScheme::EqualWidth).0
                })
                .sum();
            total / k as f64
        })
        .collect())
}

pub fn cwece_true(
    probs: &[Distribution],
    pi: &[Distribution],
    s: usize,
    seed: u64,
    b: usize,
) -> Result<f64> {
    check_aligned(probs, pi.len())?;
    let draws = LabelDraws::sample(pi, s, seed)?;
    Ok(mean(&cwece_true_draws(probs, &draws, b)?))
}

/// Top-label ECE against fixed (voted) labels.
pub fn ece_voted(
    probs: &[Distribution],
    labels: &[usize],
    b: usize,
    scheme: BinScheme,
) -> Result<(f64, ReliabilityBins)> {
    check_aligned(probs, labels.len())?;
    let (pred, conf) = top_predictions(probs);
    let correct: Vec<bool> = pred.iter().zip(labels).map(|(p, y)| p == y).collect();
    ece_binned(&conf, &correct, b, scheme)
}

/// Squared distance `||p - pi||^2`.
pub fn brier_soft(p: &Distribution, pi: &Distribution) -> f64 {
    p.probs()
        .iter()
        .zip(pi.probs())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `-sum_k pi_k log p_k` with the probability floor.
pub fn nll_soft(p: &Distribution, pi: &Distribution) -> f64 {
    cross_entropy(pi.probs(), p.probs())
}

pub fn mean_brier_soft(probs: &[Distribution], pi: &[Distribution]) -> Result<f64> {
    check_aligned(probs, pi.len())?;
    Ok(probs
        .iter()
        .zip(pi)
        .map(|(p, t)| brier_soft(p, t))
        .sum::<f64>()
        / probs.len() as f64)
}

pub fn mean_nll_soft(probs: &[Distribution], pi: &[Distribution]) -> Result<f64> {
    check_aligned(probs, pi.len())?;
    Ok(probs
        .iter()
        .zip(pi)
        .map(|(p, t)| nll_soft(p, t))
        .sum::<f64>()
        / probs.len() as f64)
}

/// `|p_c - pi_c|` where `c` is the model's predicted class.
pub fn pointwise_true_error(p: &Distribution, pi: &Distribution) -> f64 {
    let c = p.argmax();
    (p.probs()[c] - pi.probs()[c]).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyBin {
    pub bin_center: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub count: usize,
}

/// Pointwise true error grouped by normalized annotator entropy.
///
/// Bins hold about `n / n_bins` examples each but never split tied entropy
/// values, so fewer bins may come back. `bin_center` is the mean normalized
/// entropy of the bin; `std_error` is the sample std over `sqrt(count)`.
pub fn entropy_profile(
    probs: &[Distribution],
    pi: &[Distribution],
    n_bins: usize,
) -> Result<Vec<EntropyBin>> {
    check_aligned(probs, pi.len())?;
    if n_bins < 2 {
        return Err(Error::Input(format!(
            "entropy profile needs at least 2 bins, got {n_bins}"
        )));
    }
    let n = probs.len();
    if n < n_bins {
        return Err(Error::Input(format!(
            "{n} examples cannot fill {n_bins} bins"
        )));
    }
    let log_k = (pi[0].k() as f64).ln();
    let h: Vec<f64> = pi.iter().map(|p| entropy_of(p.probs()) / log_k).collect();
    let err: Vec<f64> = probs
        .iter()
        .zip(pi)
        .map(|(p, t)| pointwise_true_error(p, t))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| h[i].total_cmp(&h[j]).then(i.cmp(&j)));

    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..=n_bins {
        let mut end = (j * n).div_ceil(n_bins).max(start);
        while end > 0 && end < n && h[order[end]] == h[order[end - 1]] {
            end += 1;
        }
        if end > start {
            let idx = &order[start..end];
            let count = idx.len() as f64;
            let center = idx.iter().map(|&i| h[i]).sum::<f64>() / count;
            let m = idx.iter().map(|&i| err[i]).sum::<f64>() / count;
            let std_error = if idx.len() > 1 {
                let var = idx.iter().map(|&i| (err[i] - m).powi(2)).sum::<f64>() / (count - 1.0);
                var.sqrt() / count.sqrt()
            } else {
                0.0
            };
            out.push(EntropyBin {
                bin_center: center,
                mean_error: m,
                std_error,
                count: idx.len(),
            });
        }
        start = end;
    }
    Ok(out)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j - 1) as f64 / 2.0 + 1.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
///
/// NaN when either input is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs aligned inputs");
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return f64::NAN;
    }
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    #[serde(rename = "S")]
    pub s: usize,
    pub seed: u64,
    #[serde(rename = "B")]
    pub b: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            s: 100,
            seed: 0,
            b: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ece_true: f64,
    pub aece_true: f64,
    pub cwece_true: f64,
    pub ece_voted: f64,
    pub brier_soft: f64,
    pub nll_soft: f64,
    #[serde(rename = "T_fitted")]
    pub t_fitted: Option<f64>,
    pub reliability: ReliabilityBins,
    pub mc_config: McConfig,
}

/// Every report metric on one prediction set, sharing one draw table.
pub fn evaluate(
    probs: &[Distribution],
    pi: &[Distribution],
    voted: &[usize],
    t_fitted: Option<f64>,
    mc: McConfig,
) -> Result<MetricsReport> {
    check_aligned(probs, pi.len())?;
    let draws = LabelDraws::sample(pi, mc.s, mc.seed)?;
    let reliability = reliability_true(probs, &draws, mc.b, BinScheme::EqualWidth)?;
    Ok(MetricsReport {
        ece_true: mean(&ece_true_draws(probs, &draws, mc.b, BinScheme::EqualWidth)?),
        aece_true: mean(&ece_true_draws(probs, &draws, mc.b, BinScheme::EqualMass)?),
        cwece_true: mean(&cwece_true_draws(probs, &draws, mc.b)?),
        ece_voted: ece_voted(probs, voted, mc.b, BinScheme::EqualWidth)?.0,
        brier_soft: mean_brier_soft(probs, pi)?,
        nll_soft: mean_nll_soft(probs, pi)?,
        t_fitted,
        reliability,
        mc_config: mc,
    })
}

/// Top-class confidence of each prediction.
pub fn top_confidences(probs: &[Distribution]) -> Vec<f64> {
    probs.iter().map(|p| p.probs()[argmax(p.probs())]).collect()
}
