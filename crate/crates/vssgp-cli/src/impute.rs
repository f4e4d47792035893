//! Imputation benchmark construction: remove contiguous segments from a
//! series and reconstruct them from the predictive mean.

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssgp::Dataset;

const SEGMENT_STREAM: u64 = 11;
const MAX_ATTEMPTS: usize = 10_000;

/// A train/test split of a series by removed segments.
#[derive(Debug, Clone)]
pub struct ImputationTask {
    /// (start index, length) per removed segment, sorted by start.
    pub segments: Vec<(usize, usize)>,
    /// True where the point stays in the training set.
    pub train_mask: Vec<bool>,
    /// True where the point is held out (complement of `train_mask`).
    pub test_mask: Vec<bool>,
    pub seed: u64,
}

impl ImputationTask {
    pub fn train_indices(&self) -> Vec<usize> {
        mask_indices(&self.train_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Draw `n_segments` disjoint segments of `seg_length` points by rejection
/// sampling from the seeded generator.
pub fn make_imputation_task(
    series: &Dataset,
    n_segments: usize,
    seg_length: usize,
    seed: u64,
) -> Result<ImputationTask> {
    let n = series.num_points();
    if n_segments > 0 && seg_length == 0 {
        bail!("segment length must be positive");
    }
    if n_segments * seg_length >= n.div_ceil(2) {
        bail!(
            "removing {n_segments} segments of {seg_length} points exceeds half of the {n}-point series"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SEGMENT_STREAM);
    let mut segments: Vec<(usize, usize)> = Vec::with_capacity(n_segments);
    let mut attempts = 0;
    while segments.len() < n_segments {
        if attempts >= MAX_ATTEMPTS {
            bail!(
                "could not place {n_segments} disjoint segments of length {seg_length} in {n} points after {MAX_ATTEMPTS} attempts"
            );
        }
        attempts += 1;
        let start = rng.gen_range(0..=(n - seg_length));
        let overlaps = segments
            .iter()
            .any(|&(s, l)| start < s + l && s < start + seg_length);
        if !overlaps {
            segments.push((start, seg_length));
        }
    }
    segments.sort_unstable();
    let mut train_mask = vec![true; n];
    for &(s, l) in &segments {
        for m in train_mask.iter_mut().skip(s).take(l) {
            *m = false;
        }
    }
    let test_mask: Vec<bool> = train_mask.iter().map(|m| !m).collect();
    Ok(ImputationTask {
        segments,
        train_mask,
        test_mask,
        seed,
    })
}
