//! Learning which checkpoints to average.
//!
//! Selecting a K-subset of the window to average is a discrete problem, so
//! it is relaxed in two stages: each mask bit becomes an independent
//! Bernoulli variable with probability `s_i` (the optimization variable,
//! constrained to the budgeted box `{eps <= s <= 1-eps, sum(s) <= K}`), and
//! each Bernoulli sample is replaced by a tempered Gumbel-softmax draw
//!
//! ```text
//! m~_i = sigmoid(((log s_i + g_i1) - (log(1-s_i) + g_i0)) / t),
//! g = -log(-log u),  u ~ Uniform(0,1)
//! ```
//!
//! which is continuous in `s`, so the Monte Carlo objective (mean loss of
//! the relaxed average over M draws) has an exact pathwise gradient. A
//! score-function (REINFORCE) estimator over discrete masks is provided for
//! comparison, along with a full 2^k enumeration of the expected loss that
//! serves as ground truth at small k.
//!
//! `optimize_mask` runs projected gradient descent on `s` and reads off the
//! final mask from the K largest probabilities.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::averagers::BinaryMask;
use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, loss_only, DatasetSplit, MlpSpec, WeightVector};
use crate::rng::{stream, CounterRng};
use crate::trajectory::TrajectoryWindow;

/// Default clamp margin keeping probabilities strictly interior.
pub const DEFAULT_EPS: f64 = 1e-6;
/// Floor on the relaxed-average normalizer.
pub const EPS_NORM: f64 = 1e-12;
/// Enumeration refuses beyond this window length (2^k terms).
pub const ENUMERATION_LIMIT: usize = 20;

/// Per-checkpoint selection probabilities under an L1 budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProbs {
    s: Vec<f64>,
    budget: usize,
    eps: f64,
}

impl MaskProbs {
    /// Validates the interior constraint `eps <= s_i <= 1 - eps`.
    pub fn new(s: Vec<f64>, budget: usize, eps: f64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Config("budget K must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&eps) || eps == 0.0 {
            return Err(Error::Config(format!("eps {eps} must be in (0, 0.5)")));
        }
        if let Some((i, &v)) = s
            .iter()
            .enumerate()
            .find(|(_, &v)| !v.is_finite() || v < eps || v > 1.0 - eps)
        {
            return Err(Error::Config(format!(
                "s[{i}] = {v} outside [{eps}, {}]",
                1.0 - eps
            )));
        }
        Ok(MaskProbs { s, budget, eps })
    }

    pub fn probs(&self) -> &[f64] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

/// The uniform and Gumbel variates behind one relaxed mask: entry `i` holds
/// `(u_{i,0}, u_{i,1})` and the derived `(g_{i,0}, g_{i,1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelDraws {
    u_pairs: Vec<(f64, f64)>,
    g_pairs: Vec<(f64, f64)>,
}

/// One standard Gumbel draw: `u` on the open unit interval from the counter
/// generator keyed by `seed`, and `g = -log(-log u)`.
pub fn gumbel_sample(seed: u64, index: u64) -> (f64, f64) {
    let u = CounterRng::new(seed, stream::GUMBEL, 0).open01(index);
    (u, gumbel_from_uniform(u))
}

/// The sampling identity `g = -log(-log u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

impl GumbelDraws {
    /// Draw `k` pairs; entry `i` consumes indices `2i` (0-side) and `2i+1`
    /// (1-side) of the stream keyed by `seed`.
    pub fn sample(seed: u64, k: usize) -> Self {
        let mut u_pairs = Vec::with_capacity(k);
        let mut g_pairs = Vec::with_capacity(k);
        for i in 0..k {
            let (u0, g0) = gumbel_sample(seed, 2 * i as u64);
            let (u1, g1) = gumbel_sample(seed, 2 * i as u64 + 1);
            u_pairs.push((u0, u1));
            g_pairs.push((g0, g1));
        }
        GumbelDraws { u_pairs, g_pairs }
    }

    /// Build from explicit Gumbel values (tests and replay); u recovered
    /// through the inverse of the sampling identity.
    pub fn from_g_pairs(g_pairs: Vec<(f64, f64)>) -> Self {
        let u_pairs = g_pairs
            .iter()
            .map(|&(g0, g1)| ((-(-g0).exp()).exp(), (-(-g1).exp()).exp()))
            .collect();
        GumbelDraws { u_pairs, g_pairs }
    }

    pub fn len(&self) -> usize {
        self.g_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_pairs.is_empty()
    }

    pub fn u_pairs(&self) -> &[(f64, f64)] {
        &self.u_pairs
    }

    pub fn g_pairs(&self) -> &[(f64, f64)] {
        &self.g_pairs
    }
}

/// A tempered continuous mask sample, tied to the draws that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedMask {
    pub m_tilde: Vec<f64>,
    pub temperature: f64,
    pub draws: GumbelDraws,
}

/// Temperature schedule for the relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TempSchedule {
    Constant { t: f64 },
    /// `max(t_min, t0 * factor^iter)`.
    Geometric { t0: f64, t_min: f64, factor: f64 },
}

impl TempSchedule {
    pub fn value_at(&self, iteration: usize) -> f64 {
        match *self {
            TempSchedule::Constant { t } => t,
            TempSchedule::Geometric { t0, t_min, factor } => {
                (t0 * factor.powi(iteration as i32)).max(t_min)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TempSchedule::Constant { t } => t > 0.0 && t.is_finite(),
            TempSchedule::Geometric { t0, t_min, factor } => {
                t0 > 0.0 && t_min > 0.0 && factor > 0.0 && factor <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("temperature schedule {self:?} invalid")))
        }
    }
}

impl Default for TempSchedule {
    fn default() -> Self {
        TempSchedule::Geometric {
            t0: 1.0,
            t_min: 0.1,
            factor: 0.95,
        }
    }
}

/// Configuration of the mask-learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsConfig {
    #[serde(default)]
    pub temperature: TempSchedule,
    /// Monte Carlo samples per objective/gradient evaluation.
    pub mc_samples: usize,
    pub step_size: f64,
    pub iterations: usize,
    pub budget: usize,
    pub seed: u64,
    /// Evaluate the loss on the first `eval_batch` rows (0 = whole split).
    #[serde(default)]
    pub eval_batch: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl GsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be >= 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget K must be >= 1".into()));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step_size {} must be > 0",
                self.step_size
            )));
        }
        if !(0.0..0.5).contains(&self.eps) || self.eps == 0.0 {
            return Err(Error::Config(format!("eps {} must be in (0, 0.5)", self.eps)));
        }
        self.temperature.validate()
    }
}

/// One optimizer step in the recorded history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub temperature: f64,
    pub objective: f64,
    pub s: Vec<f64>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Tempered relaxation of the Bernoulli mask: the two-category softmax with
/// logits `(log(1-s_i) + g_{i,0}, log s_i + g_{i,1})`, reduced to a sigmoid
/// of the logit gap for numerical stability.
pub fn gs_relax(s: &MaskProbs, draws: &GumbelDraws, t: f64) -> Result<RelaxedMask> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::Config(format!("temperature {t} must be > 0")));
    }
    if draws.len() != s.len() {
        return Err(Error::MaskLength {
            mask: draws.len(),
            window: s.len(),
        });
    }
    let m_tilde = s
        .probs()
        .iter()
        .zip(draws.g_pairs())
        .map(|(&si, &(g0, g1))| {
            let gap = (si.ln() + g1) - ((1.0 - si).ln() + g0);
            stable_sigmoid(gap / t)
        })
        .collect();
    Ok(RelaxedMask {
        m_tilde,
        temperature: t,
        draws: draws.clone(),
    })
}

/// Normalized soft average: `sum_i m~_i w_i / max(sum_i m~_i, EPS_NORM)`.
///
/// Normalizing by the realized mass (instead of the budget K) keeps the
/// result inside the checkpoints' convex hull for every draw and makes the
/// hard-mask endpoint coincide with [`crate::averagers::apply_mask`].
pub fn relaxed_average(window: &TrajectoryWindow, relaxed: &RelaxedMask) -> Result<WeightVector> {
    if relaxed.m_tilde.len() != window.len() {
        return Err(Error::MaskLength {
            mask: relaxed.m_tilde.len(),
            window: window.len(),
        });
    }
    let denom = relaxed.m_tilde.iter().sum::<f64>().max(EPS_NORM);
    let mut acc = WeightVector::zeros(window.dim());
    for (ckpt, &m) in window.checkpoints().iter().zip(&relaxed.m_tilde) {
        acc.axpy(m, &ckpt.weights);
    }
    acc.scale(1.0 / denom);
    Ok(acc)
}

fn derive_seed(seed: u64, stream_id: u64, index: u64) -> u64 {
    CounterRng::new(seed, stream_id, index).at(0)
}

fn eval_subset(data: &DatasetSplit, eval_batch: usize) -> Result<DatasetSplit> {
    if eval_batch > 0 && eval_batch < data.len() {
        data.head(eval_batch)
    } else {
        Ok(data.clone())
    }
}

struct McEval {
    objective: f64,
    grad: Option<Vec<f64>>,
}

/// Shared Monte Carlo evaluation. Sample `m` draws its Gumbel pairs from the
/// seed derived as `(seed, GUMBEL, m)`; the reduction runs in ascending
/// sample order so results do not depend on evaluation strategy.
fn mc_eval(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
    mc_samples: usize,
    t: f64,
    seed: u64,
    want_grad: bool,
) -> Result<McEval> {
    let k = window.len();
    if s.len() != k {
        return Err(Error::MaskLength {
            mask: s.len(),
            window: k,
        });
    }
    let mut obj_sum = 0.0;
    let mut grad_sum = vec![0.0; k];
    for m in 0..mc_samples {
        let draws = GumbelDraws::sample(derive_seed(seed, stream::GUMBEL, m as u64), k);
        let relaxed = gs_relax(s, &draws, t)?;
        let raw_mass: f64 = relaxed.m_tilde.iter().sum();
        let w_avg = relaxed_average(window, &relaxed)?;
        if !want_grad {
            obj_sum += loss_only(&w_avg, spec, data)?;
            continue;
        }
        let (loss, gw) = loss_and_grad(&w_avg, spec, data)?;
        obj_sum += loss;
        let dot_avg = gw.dot(&w_avg);
        for (i, ckpt) in window.checkpoints().iter().enumerate() {
            let mi = relaxed.m_tilde[i];
            // dL/dm~_i through the normalized average
            let dl_dm = if raw_mass > EPS_NORM {
                (gw.dot(&ckpt.weights) - dot_avg) / raw_mass
            } else {
                // normalizer pinned at the floor: w = sum(m~ w)/EPS_NORM
                gw.dot(&ckpt.weights) / EPS_NORM
            };
            // dm~_i/ds_i for the tempered sigmoid
            let si = s.probs()[i];
            let dm_ds = mi * (1.0 - mi) / t * (1.0 / si + 1.0 / (1.0 - si));
            grad_sum[i] += dl_dm * dm_ds;
        }
    }
    let inv = 1.0 / mc_samples as f64;
    Ok(McEval {
        objective: obj_sum * inv,
        grad: want_grad.then(|| grad_sum.iter().map(|g| g * inv).collect()),
    })
}

/// Monte Carlo estimate of the relaxed objective at `s`: mean over
/// `cfg.mc_samples` draws of the loss of the relaxed average, evaluated on
/// the first `cfg.eval_batch` rows of `data` (all rows when 0), at the
/// schedule's initial temperature. Deterministic in every argument.
pub fn objective_mc(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
    cfg: &GsConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let subset = eval_subset(data, cfg.eval_batch)?;
    let t = cfg.temperature.value_at(0);
    Ok(mc_eval(s, window, spec, &subset, cfg.mc_samples, t, seed, false)?.objective)
}

/// Exact pathwise gradient of [`objective_mc`] (identical draws): per sample
/// the chain  dL/dw -> dw/dm~_i = (w_i - w(m~)) / sum(m~) -> dm~_i/ds_i =
/// m~_i (1 - m~_i) (1/t)(1/s_i + 1/(1-s_i)),  averaged over the M samples.
pub fn objective_grad(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
    cfg: &GsConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let subset = eval_subset(data, cfg.eval_batch)?;
    let t = cfg.temperature.value_at(0);
    Ok(mc_eval(s, window, spec, &subset, cfg.mc_samples, t, seed, true)?
        .grad
        .unwrap())
}

/// Discrete mask bits for one Bernoulli sample of `p(m|s)`.
fn bernoulli_bits(s: &MaskProbs, seed: u64) -> Vec<bool> {
    let rng = CounterRng::new(seed, stream::BERNOULLI, 0);
    s.probs()
        .iter()
        .enumerate()
        .map(|(i, &si)| rng.open01(i as u64) < si)
        .collect()
}

/// Sample a hard mask `m_i ~ Bern(s_i)` (the inference-time alternative to
/// top-K extraction). May select nothing; callers decide the fallback.
pub fn bernoulli_mask(s: &MaskProbs, seed: u64) -> BinaryMask {
    BinaryMask::new(bernoulli_bits(s, seed))
}

/// Hard-mask average with the documented degenerate fallback: an all-zero
/// mask maps to the last checkpoint.
fn hard_mask_average(window: &TrajectoryWindow, bits: &[bool]) -> WeightVector {
    let selected = bits.iter().filter(|&&b| b).count();
    if selected == 0 {
        return window.checkpoints().last().unwrap().weights.clone();
    }
    let mut acc = WeightVector::zeros(window.dim());
    for (ckpt, &b) in window.checkpoints().iter().zip(bits) {
        if b {
            acc.axpy(1.0, &ckpt.weights);
        }
    }
    acc.scale(1.0 / selected as f64);
    acc
}

/// Score-function (REINFORCE) gradient estimate of the expected loss:
/// `(1/M) sum_m L(w(m)) * grad_s log p(m|s)` over discrete Bernoulli masks,
/// with `d log p / d s_i = m_i/s_i - (1-m_i)/(1-s_i)`. Unbiased but
/// high-variance; kept for comparison against the pathwise estimator.
pub fn pge_grad(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be >= 1".into()));
    }
    let k = window.len();
    if s.len() != k {
        return Err(Error::MaskLength {
            mask: s.len(),
            window: k,
        });
    }
    let mut grad_sum = vec![0.0; k];
    for m in 0..mc_samples {
        let bits = bernoulli_bits(s, derive_seed(seed, stream::BERNOULLI, m as u64));
        let w_m = hard_mask_average(window, &bits);
        let loss = loss_only(&w_m, spec, data)?;
        for i in 0..k {
            let si = s.probs()[i];
            let score = if bits[i] { 1.0 / si } else { -1.0 / (1.0 - si) };
            grad_sum[i] += loss * score;
        }
    }
    let inv = 1.0 / mc_samples as f64;
    Ok(grad_sum.iter().map(|g| g * inv).collect())
}

/// Exact expected loss over all 2^k masks:
/// `sum_m prod_i s_i^{m_i} (1-s_i)^{1-m_i} * L(w(m))`, with the all-zero
/// mask falling back to the last checkpoint. Refuses k beyond
/// [`ENUMERATION_LIMIT`].
pub fn exact_expected_loss(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
) -> Result<f64> {
    let k = window.len();
    if s.len() != k {
        return Err(Error::MaskLength {
            mask: s.len(),
            window: k,
        });
    }
    if k > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            k,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut total = 0.0;
    let mut bits = vec![false; k];
    for pattern in 0u64..(1u64 << k) {
        let mut prob = 1.0;
        for (i, bit) in bits.iter_mut().enumerate() {
            *bit = pattern >> i & 1 == 1;
            prob *= if *bit { s.probs()[i] } else { 1.0 - s.probs()[i] };
        }
        let w_m = hard_mask_average(window, &bits);
        total += prob * loss_only(&w_m, spec, data)?;
    }
    Ok(total)
}

/// Exact gradient of the enumerated expected loss (ground truth for the
/// estimators at small k): `d/ds_i sum_m p(m|s) L(w(m))`.
pub fn exact_expected_loss_grad(
    s: &MaskProbs,
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
) -> Result<Vec<f64>> {
    let k = window.len();
    if k > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            k,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut grad = vec![0.0; k];
    let mut bits = vec![false; k];
    for pattern in 0u64..(1u64 << k) {
        let mut prob = 1.0;
        for (i, bit) in bits.iter_mut().enumerate() {
            *bit = pattern >> i & 1 == 1;
            prob *= if *bit { s.probs()[i] } else { 1.0 - s.probs()[i] };
        }
        let w_m = hard_mask_average(window, &bits);
        let loss = loss_only(&w_m, spec, data)?;
        for i in 0..k {
            let si = s.probs()[i];
            let score = if bits[i] { 1.0 / si } else { -1.0 / (1.0 - si) };
            grad[i] += prob * loss * score;
        }
    }
    Ok(grad)
}

/// Euclidean projection onto `{eps <= s_i <= 1-eps, sum(s) <= K}`: clamp to
/// the box; if the sum still exceeds K, shift by the bisected lambda >= 0
/// with `sum_i clamp(s_i - lambda) = K`. Idempotent.
pub fn project_feasible(raw: &[f64], budget: usize, eps: f64) -> Result<MaskProbs> {
    if budget == 0 {
        return Err(Error::Config("budget K must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&eps) || eps == 0.0 {
        return Err(Error::Config(format!("eps {eps} must be in (0, 0.5)")));
    }
    if let Some((i, &v)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Config(format!("raw s[{i}] = {v} not finite")));
    }
    let k = raw.len();
    let floor = k as f64 * eps;
    let budget_f = budget as f64;
    if floor > budget_f {
        return Err(Error::InfeasibleProjection {
            floor,
            budget: budget_f,
        });
    }
    let hi_clamp = 1.0 - eps;
    let clamp_sum =
        |lambda: f64| -> f64 { raw.iter().map(|&v| (v - lambda).clamp(eps, hi_clamp)).sum() };
    let mut lambda = 0.0;
    if clamp_sum(0.0) > budget_f {
        let mut lo = 0.0;
        let mut hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - eps;
        debug_assert!(clamp_sum(hi) <= budget_f);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if clamp_sum(mid) > budget_f {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lambda = hi;
    }
    let s = raw
        .iter()
        .map(|&v| (v - lambda).clamp(eps, hi_clamp))
        .collect();
    MaskProbs::new(s, budget, eps)
}

/// Ones at the K largest probabilities; ties break toward the smaller index.
pub fn extract_topk(s: &MaskProbs, budget: usize) -> Result<BinaryMask> {
    let k = s.len();
    if budget > k {
        return Err(Error::BudgetTooLarge { budget, window: k });
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        s.probs()[b]
            .partial_cmp(&s.probs()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut bits = vec![false; k];
    for &i in &order[..budget] {
        bits[i] = true;
    }
    Ok(BinaryMask::new(bits))
}

/// Projected gradient descent on the selection probabilities.
///
/// Starts at `s_i = min(K/k, 1-eps)` (budget-matching in expectation),
/// records `(iteration, temperature, objective, s)` before each update, and
/// stops after `cfg.iterations` steps or when the projected update moves no
/// coordinate by more than 1e-8.
pub fn optimize_mask(
    window: &TrajectoryWindow,
    spec: &MlpSpec,
    data: &DatasetSplit,
    cfg: &GsConfig,
) -> Result<(Vec<IterationRecord>, MaskProbs)> {
    cfg.validate()?;
    let k = window.len();
    if cfg.budget > k {
        return Err(Error::BudgetTooLarge {
            budget: cfg.budget,
            window: k,
        });
    }
    let subset = eval_subset(data, cfg.eval_batch)?;
    let init = (cfg.budget as f64 / k as f64).clamp(cfg.eps, 1.0 - cfg.eps);
    let mut s = MaskProbs::new(vec![init; k], cfg.budget, cfg.eps)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let t = cfg.temperature.value_at(iteration);
        let iter_seed = derive_seed(cfg.seed, stream::ITER, iteration as u64);
        let eval = mc_eval(&s, window, spec, &subset, cfg.mc_samples, t, iter_seed, true)?;
        let grad = eval.grad.unwrap();
        history.push(IterationRecord {
            iteration,
            temperature: t,
            objective: eval.objective,
            s: s.probs().to_vec(),
        });
        let raw: Vec<f64> = s
            .probs()
            .iter()
            .zip(&grad)
            .map(|(&si, &gi)| si - cfg.step_size * gi)
            .collect();
        let next = project_feasible(&raw, cfg.budget, cfg.eps)?;
        let delta = s
            .probs()
            .iter()
            .zip(next.probs())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        s = next;
        if delta < 1e-8 {
            break;
        }
    }
    Ok((history, s))
}

/// Write the optimization history as CSV with 17-significant-digit floats:
/// `iteration,temperature,objective,s_0,...,s_{k-1}`.
pub fn write_history_csv(history: &[IterationRecord], out: &mut impl Write) -> Result<()> {
    let k = history.first().map_or(0, |r| r.s.len());
    write!(out, "iteration,temperature,objective")?;
    for i in 0..k {
        write!(out, ",s_{i}")?;
    }
    writeln!(out)?;
    for rec in history {
        write!(
            out,
            "{},{:.16e},{:.16e}",
            rec.iteration, rec.temperature, rec.objective
        )?;
        for v in &rec.s {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
