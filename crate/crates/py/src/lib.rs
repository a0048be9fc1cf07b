//! Python bindings: thin wrappers over the core types and operations.
//!
//! Build the cdylib and import it as `sewa_py` (see python/smoke_test.py,
//! which copies the shared object next to itself and imports it).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sewa_core::averagers;
use sewa_core::bench;
use sewa_core::error::Error;
use sewa_core::nn;
use sewa_core::sewa as mask_opt;
use sewa_core::stability;
use sewa_core::trajectory;

fn to_py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_activation(name: &str) -> PyResult<nn::Activation> {
    match name {
        "relu" => Ok(nn::Activation::Relu),
        "tanh" => Ok(nn::Activation::Tanh),
        "identity" => Ok(nn::Activation::Identity),
        other => Err(PyValueError::new_err(format!("unknown activation '{other}'"))),
    }
}

fn parse_loss(name: &str) -> PyResult<nn::LossKind> {
    match name {
        "cross_entropy_softmax" => Ok(nn::LossKind::CrossEntropySoftmax),
        "mse" => Ok(nn::LossKind::Mse),
        "logistic_binary" => Ok(nn::LossKind::LogisticBinary),
        other => Err(PyValueError::new_err(format!("unknown loss '{other}'"))),
    }
}

/// Network architecture: layer widths, hidden activation, loss kind.
#[pyclass(name = "MlpSpec", from_py_object)]
#[derive(Clone)]
struct PyMlpSpec {
    inner: nn::MlpSpec,
}

#[pymethods]
impl PyMlpSpec {
    #[new]
    fn new(layer_sizes: Vec<usize>, activation: &str, loss_kind: &str) -> PyResult<Self> {
        let inner = nn::MlpSpec::new(layer_sizes, parse_activation(activation)?, parse_loss(loss_kind)?)
            .map_err(to_py_err)?;
        Ok(PyMlpSpec { inner })
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes.clone()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "MlpSpec(layer_sizes={:?}, activation={:?}, loss_kind={:?})",
            self.inner.layer_sizes, self.inner.activation, self.inner.loss_kind
        )
    }
}

/// A dataset split (features row-major, class or value labels).
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: nn::DatasetSplit,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_classes(features: Vec<f64>, labels: Vec<usize>, p: usize) -> PyResult<Self> {
        let n = labels.len();
        let inner = nn::DatasetSplit::new(features, nn::Labels::Classes(labels), n, p)
            .map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn from_values(features: Vec<f64>, labels: Vec<f64>, p: usize) -> PyResult<Self> {
        let n = labels.len();
        let inner =
            nn::DatasetSplit::new(features, nn::Labels::Values(labels), n, p).map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn max_feature_norm(&self) -> f64 {
        self.inner.max_feature_norm()
    }
}

/// Gaussian blob classification data; returns (train, test).
#[pyfunction]
#[pyo3(signature = (n, p, classes, noise, seed))]
fn gen_blobs(n: usize, p: usize, classes: usize, noise: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
    let (train, test) = bench::gen_dataset(&bench::DatasetSpec::Blobs {
        n,
        p,
        classes,
        noise,
        seed,
    })
    .map_err(to_py_err)?;
    Ok((PyDataset { inner: train }, PyDataset { inner: test }))
}

/// Two interleaved noisy spirals; returns (train, test).
#[pyfunction]
fn gen_spirals(n: usize, noise: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
    let (train, test) =
        bench::gen_dataset(&bench::DatasetSpec::Spirals { n, noise, seed }).map_err(to_py_err)?;
    Ok((PyDataset { inner: train }, PyDataset { inner: test }))
}

/// Deterministic initialization (uniform Glorot weights, zero biases).
#[pyfunction]
fn mlp_init(spec: &PyMlpSpec, seed: u64) -> Vec<f64> {
    nn::mlp_init(&spec.inner, seed).into_values()
}

/// Batch logits (no final activation).
#[pyfunction]
fn mlp_forward(weights: Vec<f64>, spec: &PyMlpSpec, x_batch: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
    let w = nn::WeightVector::from_values(weights).map_err(to_py_err)?;
    nn::mlp_forward(&w, &spec.inner, &x_batch, batch).map_err(to_py_err)
}

/// Mean loss and exact gradient over the split.
#[pyfunction]
fn loss_and_grad(weights: Vec<f64>, spec: &PyMlpSpec, data: &PyDataset) -> PyResult<(f64, Vec<f64>)> {
    let w = nn::WeightVector::from_values(weights).map_err(to_py_err)?;
    let (loss, grad) = nn::loss_and_grad(&w, &spec.inner, &data.inner).map_err(to_py_err)?;
    Ok((loss, grad.into_values()))
}

/// Mean loss plus classification accuracy (None for regression).
#[pyfunction]
fn evaluate(weights: Vec<f64>, spec: &PyMlpSpec, data: &PyDataset) -> PyResult<(f64, Option<f64>)> {
    let w = nn::WeightVector::from_values(weights).map_err(to_py_err)?;
    nn::eval_metrics(&w, &spec.inner, &data.inner).map_err(to_py_err)
}

/// The trailing checkpoint window of a training run.
#[pyclass(name = "Window", from_py_object)]
#[derive(Clone)]
struct PyWindow {
    inner: trajectory::TrajectoryWindow,
}

#[pymethods]
impl PyWindow {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn steps(&self) -> Vec<u64> {
        self.inner.checkpoints().iter().map(|c| c.step).collect()
    }

    #[getter]
    fn train_losses(&self) -> Vec<f64> {
        self.inner.checkpoints().iter().map(|c| c.train_loss).collect()
    }

    fn weights(&self, index: usize) -> PyResult<Vec<f64>> {
        self.inner
            .checkpoints()
            .get(index)
            .map(|c| c.weights.as_slice().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        trajectory::save_window(&self.inner, std::path::Path::new(path)).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = trajectory::load_window(std::path::Path::new(path)).map_err(to_py_err)?;
        Ok(PyWindow { inner })
    }
}

/// Plain-SGD training with checkpoint capture; returns
/// `(final_weights, window)` where the window keeps the last `window_k`
/// captured checkpoints.
#[pyfunction]
#[pyo3(signature = (spec, data, steps, alpha, batch_size, seed, capture_every, window_k))]
#[allow(clippy::too_many_arguments)]
fn sgd_train(
    spec: &PyMlpSpec,
    data: &PyDataset,
    steps: u64,
    alpha: f64,
    batch_size: usize,
    seed: u64,
    capture_every: u64,
    window_k: usize,
) -> PyResult<(Vec<f64>, PyWindow)> {
    let cfg = trajectory::SgdConfig {
        steps,
        lr_schedule: trajectory::LrSchedule::Constant { alpha },
        batch_size,
        seed,
        capture_every,
    };
    let (final_w, stream) = trajectory::sgd_train(&spec.inner, &data.inner, &cfg).map_err(to_py_err)?;
    let window = trajectory::window_collect(&stream, window_k).map_err(to_py_err)?;
    Ok((final_w.into_values(), PyWindow { inner: window }))
}

/// Mean of the checkpoints selected by a binary mask.
#[pyfunction]
fn apply_mask(window: &PyWindow, mask: Vec<bool>) -> PyResult<Vec<f64>> {
    let avg = averagers::apply_mask(&window.inner, &averagers::BinaryMask::new(mask))
        .map_err(to_py_err)?;
    Ok(avg.weights.into_values())
}

/// Uniform mean of the whole window.
#[pyfunction]
fn uniform_average(window: &PyWindow) -> PyResult<Vec<f64>> {
    Ok(averagers::uniform_average(&window.inner)
        .map_err(to_py_err)?
        .weights
        .into_values())
}

/// Exponential moving average along the window's checkpoints.
#[pyfunction]
fn ema_average(window: &PyWindow, decay: f64, every: u64) -> PyResult<Vec<f64>> {
    Ok(averagers::ema_average(window.inner.checkpoints(), decay, every)
        .map_err(to_py_err)?
        .weights
        .into_values())
}

/// Tail average of checkpoints past `start_fraction` of the final step.
#[pyfunction]
fn swa_average(window: &PyWindow, start_fraction: f64, every: u64) -> PyResult<Vec<f64>> {
    Ok(
        averagers::swa_average(window.inner.checkpoints(), start_fraction, every)
            .map_err(to_py_err)?
            .weights
            .into_values(),
    )
}

/// Equal-interval selection mask.
#[pyfunction]
fn lawa_select(k: usize, budget: usize) -> PyResult<Vec<bool>> {
    Ok(averagers::lawa_select(k, budget)
        .map_err(to_py_err)?
        .bits()
        .to_vec())
}

/// Uniformly random K-subset mask, deterministic per seed.
#[pyfunction]
fn random_select(k: usize, budget: usize, seed: u64) -> PyResult<Vec<bool>> {
    Ok(averagers::random_select(k, budget, seed)
        .map_err(to_py_err)?
        .bits()
        .to_vec())
}

/// One standard Gumbel draw `(u, g)` with `g = -log(-log u)`.
#[pyfunction]
fn gumbel_sample(seed: u64, index: u64) -> (f64, f64) {
    mask_opt::gumbel_sample(seed, index)
}

fn gs_config(
    budget: usize,
    mc_samples: usize,
    step_size: f64,
    iterations: usize,
    seed: u64,
    temperature: f64,
    eval_batch: usize,
) -> mask_opt::GsConfig {
    mask_opt::GsConfig {
        temperature: if temperature > 0.0 {
            mask_opt::TempSchedule::Constant { t: temperature }
        } else {
            mask_opt::TempSchedule::default()
        },
        mc_samples,
        step_size,
        iterations,
        budget,
        seed,
        eval_batch,
        eps: mask_opt::DEFAULT_EPS,
    }
}

/// Monte Carlo estimate of the relaxed selection objective at `s`.
#[pyfunction]
#[pyo3(signature = (s, budget, window, spec, data, mc_samples, temperature, seed))]
#[allow(clippy::too_many_arguments)]
fn objective_mc(
    s: Vec<f64>,
    budget: usize,
    window: &PyWindow,
    spec: &PyMlpSpec,
    data: &PyDataset,
    mc_samples: usize,
    temperature: f64,
    seed: u64,
) -> PyResult<f64> {
    let probs = mask_opt::MaskProbs::new(s, budget, mask_opt::DEFAULT_EPS).map_err(to_py_err)?;
    let cfg = gs_config(budget, mc_samples, 0.1, 1, seed, temperature, 0);
    mask_opt::objective_mc(&probs, &window.inner, &spec.inner, &data.inner, &cfg, seed)
        .map_err(to_py_err)
}

/// Exact expected loss by 2^k enumeration (k <= 20).
#[pyfunction]
fn exact_expected_loss(
    s: Vec<f64>,
    budget: usize,
    window: &PyWindow,
    spec: &PyMlpSpec,
    data: &PyDataset,
) -> PyResult<f64> {
    let probs = mask_opt::MaskProbs::new(s, budget, mask_opt::DEFAULT_EPS).map_err(to_py_err)?;
    mask_opt::exact_expected_loss(&probs, &window.inner, &spec.inner, &data.inner)
        .map_err(to_py_err)
}

/// Euclidean projection onto `{eps <= s <= 1-eps, sum(s) <= K}`.
#[pyfunction]
fn project_feasible(raw: Vec<f64>, budget: usize) -> PyResult<Vec<f64>> {
    Ok(
        mask_opt::project_feasible(&raw, budget, mask_opt::DEFAULT_EPS)
            .map_err(to_py_err)?
            .probs()
            .to_vec(),
    )
}

/// Learn selection probabilities by projected gradient descent on the
/// Gumbel-softmax relaxation; returns `(history, probs, mask)` where
/// history rows are `(iteration, temperature, objective)`.
#[pyfunction]
#[pyo3(signature = (window, spec, data, budget, mc_samples=8, step_size=0.1, iterations=150, seed=0, temperature=0.0, eval_batch=0))]
#[allow(clippy::too_many_arguments)]
fn optimize_mask(
    window: &PyWindow,
    spec: &PyMlpSpec,
    data: &PyDataset,
    budget: usize,
    mc_samples: usize,
    step_size: f64,
    iterations: usize,
    seed: u64,
    temperature: f64,
    eval_batch: usize,
) -> PyResult<(Vec<(usize, f64, f64)>, Vec<f64>, Vec<bool>)> {
    let cfg = gs_config(budget, mc_samples, step_size, iterations, seed, temperature, eval_batch);
    let (history, probs) =
        mask_opt::optimize_mask(&window.inner, &spec.inner, &data.inner, &cfg).map_err(to_py_err)?;
    let mask = mask_opt::extract_topk(&probs, budget).map_err(to_py_err)?;
    Ok((
        history
            .iter()
            .map(|r| (r.iteration, r.temperature, r.objective))
            .collect(),
        probs.probs().to_vec(),
        mask.bits().to_vec(),
    ))
}

fn bound_inputs(
    alpha: f64,
    lipschitz: f64,
    beta: f64,
    c: f64,
    n: u64,
    steps: u64,
    window: u64,
    s: f64,
) -> stability::BoundInputs {
    stability::BoundInputs {
        alpha,
        lipschitz,
        smoothness: beta,
        c,
        n,
        steps,
        window,
        s,
    }
}

/// Convex-regime stability bound `2 a L^2 s (T - k/2) / n`.
#[pyfunction]
#[pyo3(signature = (alpha, lipschitz, beta, c, n, steps, window, s))]
#[allow(clippy::too_many_arguments)]
fn convex_bound(
    alpha: f64,
    lipschitz: f64,
    beta: f64,
    c: f64,
    n: u64,
    steps: u64,
    window: u64,
    s: f64,
) -> PyResult<f64> {
    stability::convex_bound(&bound_inputs(alpha, lipschitz, beta, c, n, steps, window, s))
        .map_err(to_py_err)
}

/// Non-convex-regime stability bound (evaluated in log space).
#[pyfunction]
#[pyo3(signature = (alpha, lipschitz, beta, c, n, steps, window, s))]
#[allow(clippy::too_many_arguments)]
fn nonconvex_bound(
    alpha: f64,
    lipschitz: f64,
    beta: f64,
    c: f64,
    n: u64,
    steps: u64,
    window: u64,
    s: f64,
) -> PyResult<f64> {
    stability::nonconvex_bound(&bound_inputs(alpha, lipschitz, beta, c, n, steps, window, s))
        .map_err(to_py_err)
}

/// The crossover point optimizing the non-convex trade-off.
#[pyfunction]
#[pyo3(signature = (alpha, lipschitz, beta, c, n, steps, window, s))]
#[allow(clippy::too_many_arguments)]
fn optimal_t0(
    alpha: f64,
    lipschitz: f64,
    beta: f64,
    c: f64,
    n: u64,
    steps: u64,
    window: u64,
    s: f64,
) -> PyResult<f64> {
    stability::optimal_t0(&bound_inputs(alpha, lipschitz, beta, c, n, steps, window, s))
        .map_err(to_py_err)
}

/// Paired gradient-descent expansiveness probe on a quadratic objective;
/// returns `(max_ratio, bound)`.
#[pyfunction]
fn expansiveness_quadratic(beta: f64, dim: usize, alpha: f64, steps: u64, seed: u64) -> PyResult<(f64, f64)> {
    let result = stability::expansiveness_probe(
        &stability::ProbeProblem::ConvexQuadratic { beta, dim },
        alpha,
        steps,
        seed,
    )
    .map_err(to_py_err)?;
    Ok((result.max, result.bound_value.unwrap_or(f64::NAN)))
}

/// Run a full experiment from a JSON config string; returns
/// `(summary_csv_path, failed_seed_count)`.
#[pyfunction]
fn run_experiment_json(config_json: &str) -> PyResult<(String, usize)> {
    let cfg: bench::ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let output = bench::run_experiment(&cfg).map_err(to_py_err)?;
    Ok((
        output.summary_csv.display().to_string(),
        output.failures.len(),
    ))
}

#[pymodule]
fn sewa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlpSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyWindow>()?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(gen_spirals, m)?)?;
    m.add_function(wrap_pyfunction!(mlp_init, m)?)?;
    m.add_function(wrap_pyfunction!(mlp_forward, m)?)?;
    m.add_function(wrap_pyfunction!(loss_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sgd_train, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_average, m)?)?;
    m.add_function(wrap_pyfunction!(ema_average, m)?)?;
    m.add_function(wrap_pyfunction!(swa_average, m)?)?;
    m.add_function(wrap_pyfunction!(lawa_select, m)?)?;
    m.add_function(wrap_pyfunction!(random_select, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_sample, m)?)?;
    m.add_function(wrap_pyfunction!(objective_mc, m)?)?;
    m.add_function(wrap_pyfunction!(exact_expected_loss, m)?)?;
    m.add_function(wrap_pyfunction!(project_feasible, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_mask, m)?)?;
    m.add_function(wrap_pyfunction!(convex_bound, m)?)?;
    m.add_function(wrap_pyfunction!(nonconvex_bound, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_t0, m)?)?;
    m.add_function(wrap_pyfunction!(expansiveness_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    Ok(())
}
