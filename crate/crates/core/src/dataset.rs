//! Labeled logit datasets: cached classifier outputs with annotator supervision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{empirical_distribution, softmax, AnnotationSet, Distribution, LogitVector};

/// One cached prediction together with its annotator supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub logits: LogitVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<AnnotationSet>,
    pub pi_hat: Distribution,
    pub voted_label: usize,
}

impl LabeledExample {
    /// Builds an example from annotations, a distribution, or both.
    ///
    /// When both are given they must agree within `1e-9`; the voted label is
    /// the argmax of the distribution with lowest-index tie-break.
    pub fn new(
        id: impl Into<String>,
        logits: LogitVector,
        annotations: Option<AnnotationSet>,
        pi_hat: Option<Distribution>,
    ) -> Result<Self> {
        let id = id.into();
        let k = logits.k();
        let pi_hat = match (&annotations, pi_hat) {
            (None, None) => {
                return Err(Error::Input(format!(
                    "example {id}: needs annotations or pi"
                )))
            }
            (Some(a), None) => empirical_distribution(a, k)
                .map_err(|e| Error::Input(format!("example {id}: {e}")))?,
            (None, Some(p)) => p,
            (Some(a), Some(p)) => {
                let emp = empirical_distribution(a, k)
                    .map_err(|e| Error::Input(format!("example {id}: {e}")))?;
                if p.k() != k {
                    return Err(Error::Input(format!(
                        "example {id}: pi has {} classes, logits have {k}",
                        p.k()
                    )));
                }
                let gap = emp
                    .probs()
                    .iter()
                    .zip(p.probs())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if gap > 1e-9 {
                    return Err(Error::Input(format!(
                        "example {id}: pi disagrees with annotation frequencies (max gap {gap:.3e})"
                    )));
                }
                p
            }
        };
        if pi_hat.k() != k {
            return Err(Error::Input(format!(
                "example {id}: pi has {} classes, logits have {k}",
                pi_hat.k()
            )));
        }
        let voted_label = pi_hat.argmax();
        Ok(LabeledExample {
            id,
            logits,
            annotations,
            pi_hat,
            voted_label,
        })
    }

    pub fn k(&self) -> usize {
        self.logits.k()
    }

    /// Uncalibrated model probabilities.
    pub fn probs(&self) -> Distribution {
        softmax(&self.logits)
    }
}

/// A non-empty collection of examples sharing one class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitDataset {
    k: usize,
    examples: Vec<LabeledExample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

impl LogitDataset {
    pub fn new(
        k: usize,
        examples: Vec<LabeledExample>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Input(format!("K must be at least 2, got {k}")));
        }
        if examples.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if let Some(e) = examples.iter().find(|e| e.k() != k) {
            return Err(Error::Input(format!(
                "example {} has {} logits, dataset K = {k}",
                e.id,
                e.k()
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != k {
                return Err(Error::Input(format!(
                    "{} class names for K = {k}",
                    names.len()
                )));
            }
        }
        Ok(LogitDataset {
            k,
            examples,
            class_names,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn has_annotations(&self) -> bool {
        self.examples.iter().all(|e| e.annotations.is_some())
    }

    /// Sub-dataset holding the given example indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        LogitDataset::new(self.k, examples, self.class_names.clone())
    }

    pub fn logits(&self) -> Vec<LogitVector> {
        self.examples.iter().map(|e| e.logits.clone()).collect()
    }

    pub fn pi_hats(&self) -> Vec<Distribution> {
        self.examples.iter().map(|e| e.pi_hat.clone()).collect()
    }

    pub fn voted_labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.voted_label).collect()
    }

    /// True when no example carries annotator disagreement.
    pub fn is_unambiguous(&self) -> bool {
        self.examples.iter().all(|e| e.pi_hat.is_one_hot())
    }
}
