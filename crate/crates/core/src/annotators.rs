//! Class-conditional synthetic annotators.
//!
//! Each annotation is an independent draw from the confusion-matrix row of
//! the example's consensus class. All synthetic annotators share one matrix.

use std::path::Path;

use rand::seq::index;
use rand_distr::{weighted::WeightedIndex, Distribution as _};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledExample, LogitDataset};
use crate::error::{Error, Result};
use crate::prob::AnnotationSet;
use crate::seeding;

pub const CONFUSION_FORMAT_VERSION: u32 = 1;

/// Row-stochastic `K x K` matrix; `rows[i][j]` is the probability that an
/// annotator labels an example of consensus class `i` as class `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfusionFile", into = "ConfusionFile")]
pub struct ConfusionMatrix {
    k: usize,
    rows: Vec<Vec<f64>>,
    class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ConfusionFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    class_names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ConfusionFile> for ConfusionMatrix {
    type Error = Error;

    fn try_from(f: ConfusionFile) -> Result<Self> {
        if f.version != CONFUSION_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported confusion matrix version {}",
                f.version
            )));
        }
        if f.rows.len() != f.k {
            return Err(Error::Input(format!(
                "K = {} but {} rows",
                f.k,
                f.rows.len()
            )));
        }
        ConfusionMatrix::new(f.rows, f.class_names)
    }
}

impl From<ConfusionMatrix> for ConfusionFile {
    fn from(c: ConfusionMatrix) -> Self {
        ConfusionFile {
            version: CONFUSION_FORMAT_VERSION,
            k: c.k,
            class_names: c.class_names,
            rows: c.rows,
        }
    }
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<Vec<f64>>, class_names: Vec<String>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::Input(format!(
                "confusion matrix needs K >= 2, got {k}"
            )));
        }
        if class_names.len() != k {
            return Err(Error::Input(format!(
                "{} class names for K = {k}",
                class_names.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Input(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Input(format!("row {i} has invalid entry {v}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!("row {i} sums to {total}, expected 1")));
            }
        }
        Ok(ConfusionMatrix {
            k,
            rows,
            class_names,
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        let rows = (0..k)
            .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        ConfusionMatrix::new(rows, (0..k).map(|i| format!("class_{i}")).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.k).map(|i| self.rows[i][i]).sum::<f64>() / self.k as f64
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub const ISIC_CLASSES: [&str; 8] = ["MEL", "NV", "BCC", "AK", "BKL", "DF", "VL", "SCC"];

const ISIC_ROWS: [[f64; 8]; 8] = [
    [0.73, 0.14, 0.02, 0.03, 0.08, 0.00, 0.00, 0.00],
    [0.15, 0.76, 0.01, 0.01, 0.06, 0.01, 0.00, 0.00],
    [0.02, 0.01, 0.81, 0.05, 0.07, 0.01, 0.01, 0.02],
    [0.03, 0.01, 0.04, 0.65, 0.11, 0.00, 0.00, 0.16],
    [0.12, 0.05, 0.03, 0.10, 0.62, 0.00, 0.00, 0.08],
    [0.01, 0.02, 0.02, 0.01, 0.02, 0.87, 0.03, 0.02],
    [0.00, 0.01, 0.02, 0.01, 0.01, 0.02, 0.91, 0.02],
    [0.01, 0.01, 0.03, 0.18, 0.09, 0.00, 0.01, 0.67],
];

/// Clinician-informed inter-reader confusion for the eight ISIC 2019
/// diagnostic classes.
pub fn isic_confusion() -> ConfusionMatrix {
    ConfusionMatrix::new(
        ISIC_ROWS.iter().map(|r| r.to_vec()).collect(),
        ISIC_CLASSES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("preset is row-stochastic")
}

/// How annotation draws relate across different annotation counts `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Fresh draws for every `m`.
    #[default]
    Resample,
    /// The first `m` draws are shared by every larger `m`.
    Nested,
}

/// `m` annotations per example drawn from `c.rows[consensus[i]]`.
///
/// Example `i` uses its own stream so its draws do not depend on other
/// examples.
pub fn sample_annotations(
    consensus: &[usize],
    c: &ConfusionMatrix,
    m: usize,
    seed: u64,
) -> Result<Vec<AnnotationSet>> {
    sample_annotations_with(consensus, c, m, seed, SamplingMode::default())
}

pub fn sample_annotations_with(
    consensus: &[usize],
    c: &ConfusionMatrix,
    m: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<AnnotationSet>> {
    if m == 0 {
        return Err(Error::Input("annotation count must be at least 1".into()));
    }
    if let Some(y) = consensus.iter().find(|y| **y >= c.k) {
        return Err(Error::Input(format!(
            "consensus class {y} out of range for K = {}",
            c.k
        )));
    }
    let rows: Vec<WeightedIndex<f64>> = c
        .rows
        .iter()
        .map(|r| WeightedIndex::new(r).expect("validated row"))
        .collect();
    let key = match mode {
        SamplingMode::Resample => seeding::derive(seed, m as u64),
        SamplingMode::Nested => seed,
    };
    consensus
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut rng = seeding::stream(key, i as u64);
            AnnotationSet::new((0..m).map(|_| rows[y].sample(&mut rng)).collect())
        })
        .collect()
}

/// Uniform subsample of `m_new` labels without replacement.
pub fn subsample_annotations(a: &AnnotationSet, m_new: usize, seed: u64) -> Result<AnnotationSet> {
    subsample_with(a, m_new, &mut seeding::stream(seed, 0))
}

fn subsample_with(
    a: &AnnotationSet,
    m_new: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<AnnotationSet> {
    if m_new == 0 || m_new > a.len() {
        return Err(Error::Input(format!(
            "cannot keep {m_new} of {} annotations",
            a.len()
        )));
    }
    let labels = a.labels();
    AnnotationSet::new(
        index::sample(rng, a.len(), m_new)
            .iter()
            .map(|i| labels[i])
            .collect(),
    )
}

/// Keeps `m_new` annotations per example and recomputes pi and voted labels.
pub fn subsample_dataset(ds: &LogitDataset, m_new: usize, seed: u64) -> Result<LogitDataset> {
    subsample_dataset_with(ds, m_new, seed, SamplingMode::default())
}

/// As [`subsample_dataset`]. In nested mode each example's pool is permuted
/// once per seed and the first `m_new` labels are kept, so smaller
/// subsamples are contained in larger ones.
pub fn subsample_dataset_with(
    ds: &LogitDataset,
    m_new: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<LogitDataset> {
    let key = match mode {
        SamplingMode::Resample => seeding::derive(seed, m_new as u64),
        SamplingMode::Nested => seed,
    };
    let examples =
        ds.examples()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let a = e.annotations.as_ref().ok_or_else(|| {
                    Error::Input(format!("example {} has no raw annotations", e.id))
                })?;
                let mut rng = seeding::stream(key, i as u64);
                let kept = match mode {
                    SamplingMode::Resample => subsample_with(a, m_new, &mut rng),
                    SamplingMode::Nested => subsample_with(a, a.len(), &mut rng).and_then(|perm| {
                        if m_new == 0 || m_new > a.len() {
                            return Err(Error::Input(format!(
                                "cannot keep {m_new} of {} annotations",
                                a.len()
                            )));
                        }
                        AnnotationSet::new(perm.labels()[..m_new].to_vec())
                    }),
                }
                .map_err(|err| Error::Input(format!("example {}: {err}", e.id)))?;
                LabeledExample::new(e.id.clone(), e.logits.clone(), Some(kept), None)
            })
            .collect::<Result<Vec<_>>>()?;
    LogitDataset::new(ds.k(), examples, ds.class_names().map(<[String]>::to_vec))
}

/// Replaces every example's supervision with synthetic annotations drawn
/// around `consensus`.
pub fn annotate_dataset(
    ds: &LogitDataset,
    consensus: &[usize],
    c: &ConfusionMatrix,
    m: usize,
    seed: u64,
) -> Result<LogitDataset> {
    annotate_dataset_with(ds, consensus, c, m, seed, SamplingMode::default())
}

pub fn annotate_dataset_with(
    ds: &LogitDataset,
    consensus: &[usize],
    c: &ConfusionMatrix,
    m: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<LogitDataset> {
    if c.k != ds.k() {
        return Err(Error::Input(format!(
            "confusion K = {} but dataset K = {}",
            c.k,
            ds.k()
        )));
    }
    if consensus.len() != ds.len() {
        return Err(Error::Input(format!(
            "{} consensus labels for {} examples",
            consensus.len(),
            ds.len()
        )));
    }
    let sets = sample_annotations_with(consensus, c, m, seed, mode)?;
    let examples = ds
        .examples()
        .iter()
        .zip(sets)
        .map(|(e, a)| LabeledExample::new(e.id.clone(), e.logits.clone(), Some(a), None))
        .collect::<Result<Vec<_>>>()?;
    let names = ds
        .class_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| c.class_names.clone());
    LogitDataset::new(ds.k(), examples, Some(names))
}
