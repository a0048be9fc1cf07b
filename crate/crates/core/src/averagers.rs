//! Baseline averaging strategies over a checkpoint window.
//!
//! All averages accumulate left-to-right in ascending step order so results
//! are bit-reproducible; `uniform_average` is literally `apply_mask` with
//! the all-ones mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::WeightVector;
use crate::rng::{stream, CounterRng};
use crate::trajectory::{Checkpoint, TrajectoryWindow};

/// Binary selection mask over a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(bits: Vec<bool>) -> Self {
        BinaryMask { bits }
    }

    pub fn all_ones(k: usize) -> Self {
        BinaryMask { bits: vec![true; k] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn selected_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// How an averaged weight vector was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    Uniform,
    Swa { start_fraction: f64, every: u64 },
    Ema { decay: f64, every: u64 },
    Lawa { mask: BinaryMask },
    Random { mask: BinaryMask, seed: u64 },
    Sewa { mask: BinaryMask },
    Masked { mask: BinaryMask },
}

/// An averaged model plus the recipe that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedWeights {
    pub weights: WeightVector,
    pub provenance: Provenance,
}

fn masked_mean(checkpoints: &[Checkpoint], mask: &BinaryMask) -> Result<WeightVector> {
    if mask.len() != checkpoints.len() {
        return Err(Error::MaskLength {
            mask: mask.len(),
            window: checkpoints.len(),
        });
    }
    let selected = mask.selected_count();
    if selected == 0 {
        return Err(Error::DegenerateMask);
    }
    let dim = checkpoints[0].weights.dim();
    let mut acc = WeightVector::zeros(dim);
    for (ckpt, &keep) in checkpoints.iter().zip(mask.bits()) {
        if keep {
            acc.axpy(1.0, &ckpt.weights);
        }
    }
    acc.scale(1.0 / selected as f64);
    Ok(acc)
}

/// Mean of the selected checkpoints: (1/K) sum over mask=1, K = ones count.
pub fn apply_mask(window: &TrajectoryWindow, mask: &BinaryMask) -> Result<AveragedWeights> {
    let weights = masked_mean(window.checkpoints(), mask)?;
    Ok(AveragedWeights {
        weights,
        provenance: Provenance::Masked { mask: mask.clone() },
    })
}

/// Uniform mean of the whole window (the all-ones mask).
pub fn uniform_average(window: &TrajectoryWindow) -> Result<AveragedWeights> {
    let weights = masked_mean(window.checkpoints(), &BinaryMask::all_ones(window.len()))?;
    Ok(AveragedWeights {
        weights,
        provenance: Provenance::Uniform,
    })
}

/// Exponential moving average along a checkpoint stream.
///
/// Initialized to the first checkpoint; thereafter every stream position
/// that is a positive multiple of `every` folds in as
/// `ema <- decay * ema + (1 - decay) * w`.
pub fn ema_average(stream: &[Checkpoint], decay: f64, every: u64) -> Result<AveragedWeights> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Config(format!("ema decay {decay} must be in [0, 1)")));
    }
    if every == 0 {
        return Err(Error::Config("ema cadence must be >= 1".into()));
    }
    let mut ema = stream[0].weights.clone();
    for (j, ckpt) in stream.iter().enumerate().skip(1) {
        if j as u64 % every == 0 {
            ema.scale(decay);
            ema.axpy(1.0 - decay, &ckpt.weights);
        }
    }
    Ok(AveragedWeights {
        weights: ema,
        provenance: Provenance::Ema { decay, every },
    })
}

/// Equal-interval selection: 0-based indices `ceil(k*j/K) - 1` for j = 1..K.
/// Always includes the last index k-1.
pub fn lawa_select(k: usize, budget: usize) -> Result<BinaryMask> {
    if budget == 0 {
        return Err(Error::Config("selection budget must be >= 1".into()));
    }
    if budget > k {
        return Err(Error::BudgetTooLarge { budget, window: k });
    }
    let mut bits = vec![false; k];
    for j in 1..=budget {
        let idx = (k * j).div_ceil(budget) - 1;
        bits[idx] = true;
    }
    Ok(BinaryMask { bits })
}

/// Uniformly random K-subset (partial Fisher-Yates), deterministic per seed.
pub fn random_select(k: usize, budget: usize, seed: u64) -> Result<BinaryMask> {
    if budget == 0 {
        return Err(Error::Config("selection budget must be >= 1".into()));
    }
    if budget > k {
        return Err(Error::BudgetTooLarge { budget, window: k });
    }
    let rng = CounterRng::new(seed, stream::SUBSET, 0);
    let mut idx: Vec<usize> = (0..k).collect();
    for i in 0..budget {
        let j = i + rng.below(i as u64, k - i);
        idx.swap(i, j);
    }
    let mut bits = vec![false; k];
    for &i in &idx[..budget] {
        bits[i] = true;
    }
    Ok(BinaryMask { bits })
}

/// Uniform average of checkpoints whose step is at least
/// `floor(start_fraction * T_final)`, thinned to every `every`-th qualifier.
pub fn swa_average(stream: &[Checkpoint], start_fraction: f64, every: u64) -> Result<AveragedWeights> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    if !(0.0..=1.0).contains(&start_fraction) {
        return Err(Error::Config(format!(
            "swa start_fraction {start_fraction} must be in [0, 1]"
        )));
    }
    if every == 0 {
        return Err(Error::Config("swa cadence must be >= 1".into()));
    }
    let t_final = stream.last().unwrap().step;
    let threshold = (start_fraction * t_final as f64).floor() as u64;
    let qualifying: Vec<&Checkpoint> = stream.iter().filter(|c| c.step >= threshold).collect();
    if qualifying.is_empty() {
        return Err(Error::Config(format!(
            "no checkpoint at step >= {threshold} for swa"
        )));
    }
    let dim = qualifying[0].weights.dim();
    let mut acc = WeightVector::zeros(dim);
    let mut count = 0usize;
    for (i, ckpt) in qualifying.iter().enumerate() {
        if i as u64 % every == 0 {
            acc.axpy(1.0, &ckpt.weights);
            count += 1;
        }
    }
    acc.scale(1.0 / count as f64);
    Ok(AveragedWeights {
        weights: acc,
        provenance: Provenance::Swa {
            start_fraction,
            every,
        },
    })
}
