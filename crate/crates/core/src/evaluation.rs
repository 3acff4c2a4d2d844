//! Retraining oracles, the Linear Datamodeling Score, and label-noise
//! detection.
//!
//! LDS measures the test cross-entropy `ℓ(z_test; θ⋆(S_j))` of models retrained on random
//! subsets `S_j` and correlates it (Spearman, over `j`) with the additive
//! prediction `Σ_{i∈S_j} τ_i`. Removing `z_i` changes the test loss by about
//! `−(1/n) I(z_i, z_test)`, so loss-influence scores `τ = I` are expected to
//! correlate positively.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::model::{self, MlpSpec, ModelError, ModelParams, TrainConfig};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("subsampling rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("subset of a {n}-point dataset at rate {alpha} would be empty")]
    EmptySubset { n: usize, alpha: f64 },
    #[error("at least {required} subsets are required, got {found}")]
    TooFewSubsets { required: usize, found: usize },
    #[error("rank correlation needs two equal-length series of at least 2 values (got {0} and {1})")]
    SeriesLength(usize, usize),
    #[error("rank correlation is undefined for a constant series")]
    ConstantSeries,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("mask selects no examples")]
    EmptyMask,
    #[error("corruption fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("label corruption needs at least two classes")]
    SingleClass,
    #[error("inspection budget must lie in (0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("ranking is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("corruption spec refers to index {index} but the dataset has {len} examples")]
    FlipOutOfRange { index: usize, len: usize },
    #[error("example {index} has label {found}, the corruption spec expects {expected}")]
    FlipMismatch { index: usize, expected: usize, found: usize },
    #[error("{scores} score vectors for {tests} test points")]
    ScoreCount { scores: usize, tests: usize },
    #[error("score vector has length {found}, expected {expected}")]
    ScoreLength { expected: usize, found: usize },
}

/// Train on the masked examples only, from the same initialization seed as
/// the full model.
pub fn retrain_subset(
    spec: &MlpSpec,
    data: &Dataset,
    mask: &[bool],
    config: &TrainConfig,
) -> Result<ModelParams, EvaluationError> {
    if !mask.iter().any(|&m| m) {
        return Err(EvaluationError::EmptyMask);
    }
    let subset = data.select_mask(mask)?;
    Ok(model::train(spec, &subset, config)?)
}

/// Exact leave-one-out oracle: retrain without example `index`.
pub fn retrain_without(
    spec: &MlpSpec,
    data: &Dataset,
    index: usize,
    config: &TrainConfig,
) -> Result<ModelParams, EvaluationError> {
    Ok(model::train(spec, &data.without(index)?, config)?)
}

/// Number of examples in each LDS subset: `⌈α·n⌉`.
pub fn subset_size(n: usize, alpha: f64) -> Result<usize, EvaluationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvaluationError::InvalidRate(alpha));
    }
    let k = (alpha * n as f64).ceil() as usize;
    if k == 0 || n == 0 {
        return Err(EvaluationError::EmptySubset { n, alpha });
    }
    Ok(k.min(n))
}

/// `m` masks over `n` points, each with exactly `⌈α·n⌉` entries chosen
/// without replacement. Mask `j` depends only on `(seed, j)`.
pub fn sample_subsets(n: usize, alpha: f64, m: usize, seed: u64) -> Result<Vec<Vec<bool>>, EvaluationError> {
    let k = subset_size(n, alpha)?;
    Ok((0..m)
        .map(|j| {
            let mut mask = vec![false; n];
            for i in index::sample(&mut rng::stream(seed, j as u64), n, k) {
                mask[i] = true;
            }
            mask
        })
        .collect())
}

/// Fractional ranks (1-based; ties share the mean rank).
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let mean = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvaluationError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvaluationError::ConstantSeries);
    }
    // sqrt(fl(s·s)) == s, so identical rankings give exactly ±1.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvaluationError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvaluationError::SeriesLength(xs.len(), ys.len()));
    }
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(EvaluationError::NonFinite(i % xs.len()));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// A model retrained on one random subset, with its losses on the LDS test points.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRun {
    pub index: usize,
    pub mask: Vec<bool>,
    /// Training seed (shared by every subset).
    pub seed: u64,
    pub params: ModelParams,
    /// `losses[t]` is the cross-entropy on the `t`-th LDS test point.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdsConfig {
    /// Number of random subsets `M`.
    pub subsets: usize,
    /// Subsampling rate `α`.
    pub alpha: f64,
    /// Seed for the subset masks.
    pub seed: u64,
    /// Number of held-out points to average over.
    pub test_samples: usize,
    /// Seed for choosing the test points.
    #[serde(default)]
    pub test_seed: u64,
}

impl Default for LdsConfig {
    fn default() -> Self {
        Self {
            subsets: 100,
            alpha: 0.5,
            seed: 0,
            test_samples: 64,
            test_seed: 1,
        }
    }
}

impl LdsConfig {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if self.subsets < 2 {
            return Err(EvaluationError::TooFewSubsets {
                required: 2,
                found: self.subsets,
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EvaluationError::InvalidRate(self.alpha));
        }
        Ok(())
    }
}

/// Ascending indices of `count` test points drawn without replacement
/// (all of them if `count ≥ n`).
pub fn sample_test_points(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut picked = index::sample(&mut rng::seeded(seed), n, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Retrain one subset and record its test losses.
pub fn run_subset(
    spec: &MlpSpec,
    train: &Dataset,
    tests: &Dataset,
    index: usize,
    mask: Vec<bool>,
    config: &TrainConfig,
) -> Result<SubsetRun, EvaluationError> {
    let params = retrain_subset(spec, train, &mask, config)?;
    let losses = tests
        .iter()
        .map(|z| model::data_loss(&params, z))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(EvaluationError::NonFinite(i));
    }
    Ok(SubsetRun {
        index,
        mask,
        seed: config.seed,
        params,
        losses,
    })
}

/// Retrain every subset of `lds` (in parallel; results ordered by subset index).
pub fn run_subsets(
    spec: &MlpSpec,
    train: &Dataset,
    tests: &Dataset,
    lds: &LdsConfig,
    config: &TrainConfig,
) -> Result<Vec<SubsetRun>, EvaluationError> {
    lds.validate()?;
    let masks = sample_subsets(train.len(), lds.alpha, lds.subsets, lds.seed)?;
    masks
        .into_par_iter()
        .enumerate()
        .map(|(j, mask)| run_subset(spec, train, tests, j, mask, config))
        .collect()
}

/// Additive prediction `Σ_{i∈S} τ_i`, summed in index order.
pub fn subset_prediction(tau: &[f64], mask: &[bool]) -> f64 {
    tau.iter().zip(mask).filter(|(_, m)| **m).map(|(t, _)| t).sum()
}

/// Spearman correlation over subsets between measured test loss and the
/// additive prediction, for test point `test` (its slot in `SubsetRun::losses`).
pub fn lds_per_sample(tau: &[f64], runs: &[SubsetRun], test: usize) -> Result<f64, EvaluationError> {
    if runs.len() < 2 {
        return Err(EvaluationError::TooFewSubsets {
            required: 2,
            found: runs.len(),
        });
    }
    let mut measured = Vec::with_capacity(runs.len());
    let mut predicted = Vec::with_capacity(runs.len());
    for run in runs {
        if run.mask.len() != tau.len() {
            return Err(EvaluationError::ScoreLength {
                expected: run.mask.len(),
                found: tau.len(),
            });
        }
        measured.push(run.losses[test]);
        predicted.push(subset_prediction(tau, &run.mask));
    }
    spearman(&measured, &predicted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsReport {
    pub per_test: Vec<f64>,
    pub mean: f64,
}

/// Mean LDS over test points; `scores[t]` holds `τ` for test slot `t`.
pub fn lds(scores: &[Vec<f64>], runs: &[SubsetRun]) -> Result<LdsReport, EvaluationError> {
    let tests = runs.first().map_or(0, |r| r.losses.len());
    if scores.len() != tests {
        return Err(EvaluationError::ScoreCount {
            scores: scores.len(),
            tests,
        });
    }
    let per_test = scores
        .iter()
        .enumerate()
        .map(|(t, tau)| lds_per_sample(tau, runs, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = per_test.iter().sum::<f64>() / per_test.len().max(1) as f64;
    Ok(LdsReport { per_test, mean })
}

/// Independent standard-normal scores, a null attribution for LDS.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFlip {
    pub index: usize,
    pub original: usize,
    pub corrupted: usize,
}

/// Ground truth of an injected label corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub fraction: f64,
    pub seed: u64,
    /// Sorted by index.
    pub flips: Vec<LabelFlip>,
}

impl CorruptionSpec {
    pub fn is_corrupted(&self, index: usize) -> bool {
        self.flips.binary_search_by_key(&index, |f| f.index).is_ok()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.flips.iter().map(|f| f.index).collect()
    }

    /// Undo the flips on a corrupted dataset.
    pub fn restore(&self, corrupted: &Dataset) -> Result<Dataset, EvaluationError> {
        let mut examples = corrupted.examples().to_vec();
        for f in &self.flips {
            let z = examples.get_mut(f.index).ok_or(EvaluationError::FlipOutOfRange {
                index: f.index,
                len: corrupted.len(),
            })?;
            if z.label != f.corrupted {
                return Err(EvaluationError::FlipMismatch {
                    index: f.index,
                    expected: f.corrupted,
                    found: z.label,
                });
            }
            z.label = f.original;
        }
        Ok(Dataset::new(examples, corrupted.dim(), corrupted.classes())?)
    }
}

/// Flip `⌊fraction·n⌋` labels, each to a uniformly chosen different class.
pub fn corrupt_labels(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, CorruptionSpec), EvaluationError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvaluationError::InvalidFraction(fraction));
    }
    let classes = data.classes();
    if classes < 2 {
        return Err(EvaluationError::SingleClass);
    }
    let n = data.len();
    let count = (fraction * n as f64).floor() as usize;
    let mut r = rng::seeded(seed);
    let mut chosen = index::sample(&mut r, n, count).into_vec();
    chosen.sort_unstable();
    let mut examples = data.examples().to_vec();
    let mut flips = Vec::with_capacity(count);
    for i in chosen {
        let original = examples[i].label;
        let draw = r.random_range(0..classes - 1);
        let corrupted = if draw >= original { draw + 1 } else { draw };
        examples[i].label = corrupted;
        flips.push(LabelFlip {
            index: i,
            original,
            corrupted,
        });
    }
    let spec = CorruptionSpec { fraction, seed, flips };
    Ok((Dataset::new(examples, data.dim(), classes)?, spec))
}

/// Examples inspected under budget `β`: `⌈β·n⌉`.
pub fn inspection_count(n: usize, budget: f64) -> usize {
    // Guard against 0.1·n landing a hair above an integer.
    ((budget * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Recall of the corrupted set among the top `⌈β·n⌉` ranked examples.
pub fn detection_curve(
    ranking: &[usize],
    spec: &CorruptionSpec,
    budgets: &[f64],
) -> Result<Vec<(f64, f64)>, EvaluationError> {
    let n = ranking.len();
    let mut seen = vec![false; n];
    for &i in ranking {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(EvaluationError::NotPermutation(n));
        }
    }
    if let Some(f) = spec.flips.iter().find(|f| f.index >= n) {
        return Err(EvaluationError::FlipOutOfRange { index: f.index, len: n });
    }
    let total = spec.flips.len();
    budgets
        .iter()
        .map(|&b| {
            if !(b > 0.0 && b <= 1.0) {
                return Err(EvaluationError::InvalidBudget(b));
            }
            let k = inspection_count(n, b).min(n);
            let hits = ranking[..k].iter().filter(|&&i| spec.is_corrupted(i)).count();
            let recall = if total == 0 { 1.0 } else { hits as f64 / total as f64 };
            Ok((b, recall))
        })
        .collect()
}
