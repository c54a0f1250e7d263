//! Seeded, optionally stratified calibration/test partitions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::seeding;

/// Sorted example indices of each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    pub fn datasets(&self, ds: &LogitDataset) -> Result<(LogitDataset, LogitDataset)> {
        Ok((ds.subset(&self.cal)?, ds.subset(&self.test)?))
    }
}

/// Calibration share of a stratum of `n`: `floor(fraction * n + 0.5)`,
/// kept within `[1, n - 1]`.
fn cal_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n - 1)
}

fn strata(ds: &LogitDataset, stratify: bool) -> Vec<Vec<usize>> {
    if !stratify {
        return vec![(0..ds.len()).collect()];
    }
    let mut groups = vec![Vec::new(); ds.k()];
    for (i, e) in ds.examples().iter().enumerate() {
        groups[e.voted_label].push(i);
    }
    groups
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "calibration fraction {fraction} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Shuffles each voted-label class with its own stream and sends the first
/// `floor(fraction * n_c + 0.5)` members to calibration.
pub fn split_stratified(ds: &LogitDataset, cal_fraction: f64, seed: u64) -> Result<Partition> {
    split(ds, cal_fraction, true, seed)
}

pub fn split(ds: &LogitDataset, cal_fraction: f64, stratify: bool, seed: u64) -> Result<Partition> {
    check_fraction(cal_fraction)?;
    let mut cal = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in strata(ds, stratify).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} has {} example(s); at least 2 are needed",
                members.len()
            )));
        }
        members.shuffle(&mut seeding::stream(seed, c as u64));
        let n_cal = cal_count(members.len(), cal_fraction);
        cal.extend_from_slice(&members[..n_cal]);
        test.extend_from_slice(&members[n_cal..]);
    }
    cal.sort_unstable();
    test.sort_unstable();
    Ok(Partition { cal, test })
}

/// Stratified subset of `indices` keeping about `fraction` of each class.
///
/// For a fixed seed, the subset at a smaller fraction is contained in the
/// subset at any larger one; fraction 1 returns every index.
pub fn nested_subset(
    ds: &LogitDataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Split(format!(
            "subset fraction {fraction} must lie in (0, 1]"
        )));
    }
    let mut groups = vec![Vec::new(); ds.k()];
    for &i in indices {
        groups[ds.examples()[i].voted_label].push(i);
    }
    let mut out = Vec::new();
    for (c, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.sort_unstable();
        members.shuffle(&mut seeding::stream(seed, c as u64));
        let keep =
            ((fraction * members.len() as f64 + 0.5).floor() as usize).clamp(1, members.len());
        out.extend_from_slice(&members[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}
