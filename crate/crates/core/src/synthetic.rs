//! Seeded synthetic logit datasets with a known miscalibration.

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution as _, StandardNormal};

use crate::dataset::{LabeledExample, LogitDataset};
use crate::error::Result;
use crate::prob::{softmax_t, AnnotationSet, Distribution, LogitVector};
use crate::seeding;

/// `n` logit vectors with i.i.d. `N(0, scale^2)` entries.
pub fn gaussian_logits(n: usize, k: usize, scale: f64, seed: u64) -> Result<Vec<LogitVector>> {
    let mut rng = seeding::stream(seed, 0);
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..k)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    scale * e
                })
                .collect();
            LogitVector::new(z)
        })
        .collect()
}

/// How the supervision of each example relates to `softmax(z / T*)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    /// `pi` is exactly `softmax(z / T*)`.
    Exact,
    /// `m` annotations drawn from `softmax(z / T*)`.
    Annotations(usize),
    /// One label drawn from `softmax(z / T*)`, stored as a one-hot `pi`.
    SingleLabel,
}

/// Dataset whose annotator distribution is the model's own softmax at
/// temperature `t_star`, so the ideal calibrating temperature is `t_star`.
pub fn tempered_dataset(
    logits: &[LogitVector],
    t_star: f64,
    supervision: Supervision,
    seed: u64,
) -> Result<LogitDataset> {
    let k = logits.first().map_or(2, LogitVector::k);
    let examples = logits
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let pi = softmax_t(z, t_star)?;
            let mut rng = seeding::stream(seed, i as u64);
            let (annotations, pi) = match supervision {
                Supervision::Exact => (None, Some(pi)),
                Supervision::Annotations(m) => (Some(draw(&pi, m, &mut rng)?), None),
                Supervision::SingleLabel => {
                    let y = draw(&pi, 1, &mut rng)?.labels()[0];
                    (None, Some(Distribution::one_hot(k, y)?))
                }
            };
            LabeledExample::new(format!("s{i}"), z.clone(), annotations, pi)
        })
        .collect::<Result<Vec<_>>>()?;
    LogitDataset::new(k, examples, None)
}

fn draw(pi: &Distribution, m: usize, rng: &mut impl Rng) -> Result<AnnotationSet> {
    let w = WeightedIndex::new(pi.probs()).expect("a distribution has positive mass");
    AnnotationSet::new((0..m).map(|_| w.sample(rng)).collect())
}
