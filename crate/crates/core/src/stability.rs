//! Generalization-bound calculators and empirical stability probes.
//!
//! The calculators evaluate the closed-form uniform-stability bounds for
//! averaged SGD outputs:
//!
//! - convex, constant rate a <= 2/b:  `2 a L^2 s (T - k/2) / n`
//! - non-convex, rate a <= c/T:
//!   `(1 + 1/(cb)) / (n-1) * (2 c s L^2 (1 + k e^{cb}) / k)^{k/(cb+k)} * T^{cb/(cb+k)}`
//!   together with the trade-off point `t0` that the bound optimizes over.
//!
//! The probes measure what the bounds assume: `expansiveness_probe` tracks
//! the per-step growth factor of the distance between coupled gradient
//! iterates, and `divergence_probe` tracks the window-averaged parameter
//! divergence between SGD runs on two datasets differing in one sample,
//! driven by a shared sample-index sequence.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    loss_and_grad, loss_and_grad_subset, mlp_init, Activation, DatasetSplit, LossKind, MlpSpec,
    WeightVector,
};
use crate::rng::{stream, CounterRng};
use crate::trajectory::{sgd_batch_indices, LrSchedule, SgdConfig};

/// Constants feeding the closed-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Step size.
    pub alpha: f64,
    /// Lipschitz constant of the loss.
    pub lipschitz: f64,
    /// Smoothness constant.
    pub smoothness: f64,
    /// Step-size numerator in the non-convex regime (alpha = c/T).
    pub c: f64,
    /// Dataset size.
    pub n: u64,
    /// Iterations.
    pub steps: u64,
    /// Window length.
    pub window: u64,
    /// Supremum of the selection probabilities over the window.
    pub s: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("alpha", self.alpha),
            ("lipschitz", self.lipschitz),
            ("smoothness", self.smoothness),
            ("c", self.c),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Config(format!("s = {} must be in [0, 1]", self.s)));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be >= 2".into()));
        }
        if self.window == 0 || self.steps == 0 {
            return Err(Error::Config("T and k must be >= 1".into()));
        }
        if self.window > self.steps {
            return Err(Error::Config(format!(
                "window k = {} exceeds steps T = {}",
                self.window, self.steps
            )));
        }
        Ok(())
    }

    /// Whether alpha satisfies the convex-regime step bound a <= 2/b.
    pub fn convex_step_ok(&self) -> bool {
        self.alpha <= 2.0 / self.smoothness
    }
}

/// log(1 + k * e^x) without overflow.
fn ln1p_k_exp(k: f64, x: f64) -> f64 {
    // log(1 + e^(x + ln k)) = max(y, 0) + ln(1 + e^{-|y|}), y = x + ln k
    let y = x + k.ln();
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

/// Convex-regime stability bound: `2 a L^2 s (T - k/2) / n`.
pub fn convex_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    Ok(2.0 * b.alpha * b.lipschitz * b.lipschitz * b.s * (b.steps as f64 - b.window as f64 / 2.0)
        / b.n as f64)
}

/// `q log(base) + p log T` for the non-convex closed forms, where
/// `base = 2 c s L^2 (1 + k e^{cb}) / k`, `q = k/(cb+k)`, `p = cb/(cb+k)`.
fn nonconvex_log_core(b: &BoundInputs) -> f64 {
    let cb = b.c * b.smoothness;
    let k = b.window as f64;
    let q = k / (cb + k);
    let p = cb / (cb + k);
    let ln_base = (2.0 * b.c * b.s * b.lipschitz * b.lipschitz).ln() + ln1p_k_exp(k, cb) - k.ln();
    q * ln_base + p * (b.steps as f64).ln()
}

/// Non-convex stability bound, evaluated in log space.
pub fn nonconvex_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    if b.s == 0.0 {
        return Ok(0.0);
    }
    let cb = b.c * b.smoothness;
    let prefactor = (1.0 + 1.0 / cb) / (b.n as f64 - 1.0);
    let value = prefactor * nonconvex_log_core(b).exp();
    if !value.is_finite() {
        return Err(Error::BoundOverflow {
            term: "exp(q*log(base) + p*log(T))".into(),
        });
    }
    Ok(value)
}

/// The crossover point the non-convex bound optimizes over:
/// `t0 = (2 c s L^2 (1 + k e^{cb}) / k)^{k/(cb+k)} * T^{cb/(cb+k)}`.
pub fn optimal_t0(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    if b.s == 0.0 {
        return Ok(0.0);
    }
    let value = nonconvex_log_core(b).exp();
    if !value.is_finite() {
        return Err(Error::BoundOverflow {
            term: "exp(q*log(base) + p*log(T))".into(),
        });
    }
    Ok(value)
}

/// The trade-off objective that `t0` minimizes:
/// `g(t) = t/n + (2 s L^2 (1 + k e^{cb}) / ((n-1) b)) * (T/t)^{cb/k}`.
pub fn t0_objective(b: &BoundInputs, t: f64) -> f64 {
    let cb = b.c * b.smoothness;
    let k = b.window as f64;
    let ln_a = (2.0 * b.s * b.lipschitz * b.lipschitz).ln() + ln1p_k_exp(k, cb)
        - (b.n as f64 - 1.0).ln()
        - b.smoothness.ln();
    t / b.n as f64 + (ln_a + cb / k * ((b.steps as f64).ln() - t.ln())).exp()
}

/// Grid minimizer of [`t0_objective`] over `points` log-spaced values in
/// `[t0/10, 10 t0]`; the numerical cross-check for [`optimal_t0`].
pub fn optimal_t0_grid(b: &BoundInputs, points: usize) -> Result<f64> {
    let t0 = optimal_t0(b)?;
    if t0 == 0.0 {
        return Ok(0.0);
    }
    let lo = (t0 / 10.0).ln();
    let hi = (t0 * 10.0).ln();
    let mut best_t = t0;
    let mut best_val = f64::INFINITY;
    for i in 0..points {
        let t = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        let v = t0_objective(b, t);
        if v < best_val {
            best_val = v;
            best_t = t;
        }
    }
    Ok(best_t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Convex,
    NonConvex,
}

/// One comparison-table row. Convex rows carry the published form (written
/// with L) and the theorem form (with L^2); non-convex rows carry the order
/// value `T^e / n` and its exponent `e`, except the selective row which
/// carries the full closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub setting: Setting,
    pub algorithm: String,
    pub formula: String,
    pub value: Option<f64>,
    pub value_l2: Option<f64>,
    pub t_exponent: Option<f64>,
}

/// Side-by-side bounds for SGD / SWA / FWA / EMA / SeWA in both regimes.
pub fn bounds_table(b: &BoundInputs) -> Result<Vec<BoundRow>> {
    b.validate()?;
    let (a, l, s) = (b.alpha, b.lipschitz, b.s);
    let (t, k, n) = (b.steps as f64, b.window as f64, b.n as f64);
    let cb = b.c * b.smoothness;
    let mut rows = Vec::new();

    let convex = |rows: &mut Vec<BoundRow>, alg: &str, formula: &str, v: f64, v2: f64| {
        rows.push(BoundRow {
            setting: Setting::Convex,
            algorithm: alg.into(),
            formula: formula.into(),
            value: Some(v),
            value_l2: Some(v2),
            t_exponent: None,
        });
    };
    convex(&mut rows, "sgd", "2aLT/n", 2.0 * a * l * t / n, 2.0 * a * l * l * t / n);
    convex(&mut rows, "swa", "aLT/n", a * l * t / n, a * l * l * t / n);
    convex(
        &mut rows,
        "fwa",
        "2aL(T-k/2)/n",
        2.0 * a * l * (t - k / 2.0) / n,
        2.0 * a * l * l * (t - k / 2.0) / n,
    );
    rows.push(BoundRow {
        setting: Setting::Convex,
        algorithm: "ema".into(),
        formula: "-".into(),
        value: None,
        value_l2: None,
        t_exponent: None,
    });
    convex(
        &mut rows,
        "sewa",
        "2aLs(T-k/2)/n",
        2.0 * a * l * s * (t - k / 2.0) / n,
        2.0 * a * l * l * s * (t - k / 2.0) / n,
    );

    let order = |rows: &mut Vec<BoundRow>, alg: &str, formula: &str, e: f64| {
        rows.push(BoundRow {
            setting: Setting::NonConvex,
            algorithm: alg.into(),
            formula: formula.into(),
            value: Some(t.powf(e) / n),
            value_l2: None,
            t_exponent: Some(e),
        });
    };
    order(&mut rows, "sgd", "O(T^(cb/(1+cb))/n)", cb / (1.0 + cb));
    order(&mut rows, "swa", "O(T^(cb/(2+cb))/n)", cb / (2.0 + cb));
    order(&mut rows, "fwa", "O(T^(cb/(k+cb))/n)", cb / (k + cb));
    rows.push(BoundRow {
        setting: Setting::NonConvex,
        algorithm: "ema".into(),
        formula: "-".into(),
        value: None,
        value_l2: None,
        t_exponent: None,
    });
    rows.push(BoundRow {
        setting: Setting::NonConvex,
        algorithm: "sewa".into(),
        formula: "(1+1/(cb))/(n-1) * (2csL^2(1+k e^cb)/k)^(k/(cb+k)) * T^(cb/(cb+k))".into(),
        value: Some(nonconvex_bound(b)?),
        value_l2: None,
        t_exponent: Some(cb / (k + cb)),
    });
    Ok(rows)
}

/// Plain-text rendering of [`bounds_table`], one block per setting.
pub fn render_bounds_table(rows: &[BoundRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12}{:<10}{:<46}{:>14}{:>16}\n",
        "setting", "algorithm", "bound", "value", "value(L^2)"
    ));
    for row in rows {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
        out.push_str(&format!(
            "{:<12}{:<10}{:<46}{:>14}{:>16}\n",
            match row.setting {
                Setting::Convex => "convex",
                Setting::NonConvex => "non-convex",
            },
            row.algorithm,
            row.formula,
            fmt_opt(row.value),
            fmt_opt(row.value_l2),
        ));
    }
    out
}

/// CSV rendering of [`bounds_table`].
pub fn write_bounds_csv(rows: &[BoundRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "setting,algorithm,formula,value,value_l2,t_exponent")?;
    for row in rows {
        let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        writeln!(
            out,
            "{},{},\"{}\",{},{},{}",
            match row.setting {
                Setting::Convex => "convex",
                Setting::NonConvex => "non_convex",
            },
            row.algorithm,
            row.formula,
            fmt_opt(row.value),
            fmt_opt(row.value_l2),
            fmt_opt(row.t_exponent),
        )?;
    }
    Ok(())
}

/// Smoothness of the mean logistic loss of a single linear layer *with a
/// bias*: the per-sample Hessian is `s(1-s) [x;1][x;1]^T`, so the constant
/// is `(max_i ||x_i||^2 + 1) / 4`.
pub fn logistic_smoothness(data: &DatasetSplit) -> f64 {
    (data.max_feature_norm().powi(2) + 1.0) / 4.0
}

/// Gradient-norm (Lipschitz) bound for the same model:
/// `||grad l|| = sigma * ||[x;1]|| <= sqrt(max ||x||^2 + 1)`.
pub fn logistic_lipschitz(data: &DatasetSplit) -> f64 {
    (data.max_feature_norm().powi(2) + 1.0).sqrt()
}

/// Per-step measurements plus the matching theoretical ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub series: Vec<(u64, f64)>,
    pub max: f64,
    pub mean: f64,
    pub bound_value: Option<f64>,
}

impl ProbeResult {
    fn from_series(series: Vec<(u64, f64)>, bound_value: Option<f64>) -> Self {
        let max = series.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        let mean = series.iter().map(|&(_, v)| v).sum::<f64>() / series.len().max(1) as f64;
        ProbeResult {
            series,
            max,
            mean,
            bound_value,
        }
    }
}

/// CSV rendering of a probe series: `step,value`.
pub fn write_series_csv(result: &ProbeResult, out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,value")?;
    for &(step, value) in &result.series {
        writeln!(out, "{step},{value:.16e}")?;
    }
    Ok(())
}

/// The objective a probe runs gradient descent on.
#[derive(Debug, Clone)]
pub enum ProbeProblem {
    /// `F(w) = (b/2) ||w||^2`: gradient `b w`, smoothness exactly `b`.
    ConvexQuadratic { beta: f64, dim: usize },
    /// Full-batch logistic loss of a single linear layer; smoothness
    /// estimated as `max_i ||x_i||^2 / 4`.
    ConvexLogistic { data: DatasetSplit },
    /// Full-batch loss of an arbitrary network; curvature estimated
    /// empirically from Hessian-vector probes along the coupled run.
    NonConvexMlp { spec: MlpSpec, data: DatasetSplit },
}

impl ProbeProblem {
    fn dim(&self) -> usize {
        match self {
            ProbeProblem::ConvexQuadratic { dim, .. } => *dim,
            ProbeProblem::ConvexLogistic { data } => data.feature_dim() + 1,
            ProbeProblem::NonConvexMlp { spec, .. } => spec.param_count(),
        }
    }

    fn logistic_spec(data: &DatasetSplit) -> MlpSpec {
        MlpSpec::new(
            vec![data.feature_dim(), 1],
            Activation::Identity,
            LossKind::LogisticBinary,
        )
        .expect("single linear logistic layer")
    }

    fn gradient(&self, w: &WeightVector) -> Result<WeightVector> {
        match self {
            ProbeProblem::ConvexQuadratic { beta, .. } => {
                let mut g = w.clone();
                g.scale(*beta);
                Ok(g)
            }
            ProbeProblem::ConvexLogistic { data } => {
                let spec = Self::logistic_spec(data);
                Ok(loss_and_grad(w, &spec, data)?.1)
            }
            ProbeProblem::NonConvexMlp { spec, data } => Ok(loss_and_grad(w, spec, data)?.1),
        }
    }

    /// Known or estimated smoothness constant, where one exists a priori.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            ProbeProblem::ConvexQuadratic { beta, .. } => Some(*beta),
            ProbeProblem::ConvexLogistic { data } => Some(logistic_smoothness(data)),
            ProbeProblem::NonConvexMlp { .. } => None,
        }
    }

    fn is_convex(&self) -> bool {
        !matches!(self, ProbeProblem::NonConvexMlp { .. })
    }
}

/// Largest curvature seen over finite-difference Hessian-vector probes.
///
/// Each probe evaluates `||grad F(w + h v) - grad F(w)|| / (h ||v||)`. The
/// probe set mixes random directions at the given base points with the
/// exact secants between consecutive point pairs (h spanning the whole
/// segment), so the estimate dominates the curvature realized along them.
pub fn empirical_smoothness(
    problem: &ProbeProblem,
    base_points: &[(WeightVector, WeightVector)],
    random_probes: usize,
    seed: u64,
) -> Result<f64> {
    let dim = problem.dim();
    let rng = CounterRng::new(seed, stream::PROBE, 7);
    let mut best: f64 = 0.0;
    // secant probes across each coupled pair
    for (w, w2) in base_points {
        let sep = w.l2_distance(w2);
        if sep == 0.0 {
            continue;
        }
        let g = problem.gradient(w)?;
        let g2 = problem.gradient(w2)?;
        best = best.max(g.l2_distance(&g2) / sep);
    }
    // random small-step probes around interpolated points
    let h = 1e-5;
    for p in 0..random_probes {
        let pair = &base_points[p % base_points.len()];
        let lam = rng.open01(3 * p as u64);
        let mut point = pair.0.clone();
        point.scale(1.0 - lam);
        point.axpy(lam, &pair.1);
        let mut dir = WeightVector::zeros(dim);
        for (j, v) in dir.as_mut_slice().iter_mut().enumerate() {
            *v = rng.gaussian((3 * p as u64 + 1) * dim as u64 + j as u64);
        }
        let norm = dir.l2_norm();
        if norm == 0.0 {
            continue;
        }
        dir.scale(1.0 / norm);
        let mut fwd = point.clone();
        fwd.axpy(h, &dir);
        let mut bwd = point.clone();
        bwd.axpy(-h, &dir);
        let gf = problem.gradient(&fwd)?;
        let gb = problem.gradient(&bwd)?;
        best = best.max(gf.l2_distance(&gb) / (2.0 * h));
    }
    Ok(best)
}

/// Run paired full-gradient descent from nearby starts and record the
/// per-step expansion ratio `||w_{t+1} - w'_{t+1}|| / ||w_t - w'_t||`.
///
/// `bound_value` is the matching ceiling: 1 for convex problems with
/// `a <= 2/b`, `1 + a b` otherwise, with `b` taken from the problem (exact
/// for the quadratic, estimated from the data for logistic, and from
/// Hessian-vector probes along the coupled run for the network).
pub fn expansiveness_probe(
    problem: &ProbeProblem,
    alpha: f64,
    steps: u64,
    seed: u64,
) -> Result<ProbeResult> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha = {alpha} must be > 0")));
    }
    let dim = problem.dim();
    let rng = CounterRng::new(seed, stream::PROBE, 0);
    let mut w = match problem {
        ProbeProblem::NonConvexMlp { spec, .. } => mlp_init(spec, seed),
        _ => {
            let mut v = WeightVector::zeros(dim);
            for (j, x) in v.as_mut_slice().iter_mut().enumerate() {
                *x = rng.uniform(j as u64, -1.0, 1.0);
            }
            v
        }
    };
    let mut w2 = w.clone();
    for (j, x) in w2.as_mut_slice().iter_mut().enumerate() {
        *x += rng.uniform(dim as u64 + j as u64, -1e-3, 1e-3);
    }
    if w.l2_distance(&w2) == 0.0 {
        return Err(Error::ZeroSeparation);
    }

    let mut series = Vec::with_capacity(steps as usize);
    let mut pairs = Vec::new();
    for t in 0..steps {
        let before = w.l2_distance(&w2);
        if before == 0.0 {
            break;
        }
        pairs.push((w.clone(), w2.clone()));
        let g = problem.gradient(&w)?;
        let g2 = problem.gradient(&w2)?;
        w.axpy(-alpha, &g);
        w2.axpy(-alpha, &g2);
        let after = w.l2_distance(&w2);
        series.push((t + 1, after / before));
    }
    if series.is_empty() {
        return Err(Error::ZeroSeparation);
    }

    let bound_value = match problem.smoothness() {
        Some(beta) => {
            if problem.is_convex() && alpha <= 2.0 / beta {
                Some(1.0)
            } else {
                Some(1.0 + alpha * beta)
            }
        }
        None => {
            let beta_hat = empirical_smoothness(problem, &pairs, 1000, seed)?;
            Some(1.0 + alpha * beta_hat)
        }
    };
    Ok(ProbeResult::from_series(series, bound_value))
}

/// A replacement for one dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOverride {
    pub features: Vec<f64>,
    #[serde(default)]
    pub label_class: Option<usize>,
    #[serde(default)]
    pub label_value: Option<f64>,
}

/// Coupled-trajectory divergence: train on `data` and on a copy with row
/// `perturb_index` replaced, sharing the sample-index sequence, and record
/// the trailing-window mean parameter distance
/// `(1/k) sum over the last k steps of ||w_i - w'_i||`
/// at every capture point once k steps exist.
///
/// For a single-linear-layer logistic model at a constant rate the result
/// carries the ceiling `(2 a L / n)(T - k/2)` with `L = max_i ||x_i||`.
pub fn divergence_probe(
    spec: &MlpSpec,
    data: &DatasetSplit,
    perturb_index: usize,
    replacement: &SampleOverride,
    cfg: &SgdConfig,
    k: usize,
) -> Result<ProbeResult> {
    spec.validate()?;
    cfg.validate()?;
    if k == 0 || (k as u64) > cfg.steps {
        return Err(Error::Config(format!(
            "window k = {k} must be in [1, T = {}]",
            cfg.steps
        )));
    }
    if perturb_index >= data.len() {
        return Err(Error::Config(format!(
            "perturb_index {perturb_index} out of range (n = {})",
            data.len()
        )));
    }
    let mut data2 = data.clone();
    data2.replace_sample(
        perturb_index,
        &replacement.features,
        replacement.label_class,
        replacement.label_value,
    )?;

    let mut w = mlp_init(spec, cfg.seed);
    let mut w2 = w.clone();
    let mut norms: VecDeque<f64> = VecDeque::with_capacity(k);
    let mut series = Vec::new();
    for t in 0..cfg.steps {
        let idx = sgd_batch_indices(cfg.seed, t, cfg.batch_size, data.len());
        let (_, g) = loss_and_grad_subset(&w, spec, data, &idx)?;
        let (_, g2) = loss_and_grad_subset(&w2, spec, &data2, &idx)?;
        let rate = cfg.lr_schedule.rate_at(t, cfg.steps);
        w.axpy(-rate, &g);
        w2.axpy(-rate, &g2);
        if norms.len() == k {
            norms.pop_front();
        }
        norms.push_back(w.l2_distance(&w2));
        let step = t + 1;
        if (step % cfg.capture_every == 0 || step == cfg.steps) && norms.len() == k {
            series.push((step, norms.iter().sum::<f64>() / k as f64));
        }
    }

    let bound_value = match (&spec.loss_kind, spec.num_layers(), &cfg.lr_schedule) {
        (LossKind::LogisticBinary, 1, LrSchedule::Constant { alpha }) => {
            let lipschitz = logistic_lipschitz(data);
            Some(
                2.0 * alpha * lipschitz / data.len() as f64
                    * (cfg.steps as f64 - k as f64 / 2.0),
            )
        }
        _ => None,
    };
    Ok(ProbeResult::from_series(series, bound_value))
}
