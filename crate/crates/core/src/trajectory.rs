//! SGD training with checkpoint capture and bit-exact persistence.
//!
//! The driver applies plain SGD steps (uniform-with-replacement sampling,
//! one gradient step per iteration) and records a checkpoint every
//! `capture_every` steps plus one at the final step. Sample indices at step
//! t come from a counter generator keyed by `(seed, t)`, so the index
//! sequence is independent of capture cadence and reproducible in isolation
//! via [`sgd_batch_indices`].
//!
//! Window directory layout:
//!
//! ```text
//! manifest.json      {"version":1,"dim":d,"k":k,"steps":[..],"train_losses":[..],"files":[..]}
//! ckpt_000000.bin    "SEWACKPT" | u32 LE version=1 | u64 LE step | u64 LE dim | dim x f64 LE
//! ```
//!
//! All multi-byte integers little-endian, no padding; the float payload is
//! written and read as raw IEEE-754 bits so round-trips are exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{loss_and_grad_subset, loss_only, mlp_init, DatasetSplit, MlpSpec, WeightVector};
use crate::rng::{stream, CounterRng};

const MAGIC: &[u8; 8] = b"SEWACKPT";
const FORMAT_VERSION: u32 = 1;
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { alpha: f64 },
    /// Constant at `alpha_max` until `start_step`, then cosine-annealed so
    /// the final update uses exactly `alpha_min`.
    Cosine {
        alpha_max: f64,
        alpha_min: f64,
        start_step: u64,
    },
}

impl LrSchedule {
    /// Rate used by update `t` (0-based; update t produces w_{t+1}).
    pub fn rate_at(&self, t: u64, total_steps: u64) -> f64 {
        match *self {
            LrSchedule::Constant { alpha } => alpha,
            LrSchedule::Cosine {
                alpha_max,
                alpha_min,
                start_step,
            } => {
                if t < start_step {
                    alpha_max
                } else {
                    let span = total_steps.saturating_sub(1).saturating_sub(start_step).max(1);
                    let progress = (t - start_step) as f64 / span as f64;
                    alpha_min + 0.5 * (alpha_max - alpha_min) * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }

    fn validate(&self, total_steps: u64) -> Result<()> {
        match *self {
            LrSchedule::Constant { alpha } => {
                if alpha < 0.0 || !alpha.is_finite() {
                    return Err(Error::Config(format!("constant rate {alpha} must be >= 0")));
                }
            }
            LrSchedule::Cosine {
                alpha_max,
                alpha_min,
                start_step,
            } => {
                if !(alpha_max >= alpha_min && alpha_min >= 0.0) || !alpha_max.is_finite() {
                    return Err(Error::Config(format!(
                        "cosine schedule needs alpha_max >= alpha_min >= 0 (got {alpha_max}, {alpha_min})"
                    )));
                }
                if start_step >= total_steps {
                    return Err(Error::Config(format!(
                        "cosine start_step {start_step} must be < steps {total_steps}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// SGD run configuration. Sampling is uniform with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub steps: u64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    pub capture_every: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.capture_every == 0 {
            return Err(Error::Config("capture_every must be >= 1".into()));
        }
        self.lr_schedule.validate(self.steps)
    }

    /// Number of checkpoints a full run will capture.
    pub fn capture_count(&self) -> u64 {
        let regular = self.steps / self.capture_every;
        if self.steps % self.capture_every == 0 {
            regular
        } else {
            regular + 1
        }
    }
}

/// One captured model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub weights: WeightVector,
    pub train_loss: f64,
}

/// The trailing window of captured checkpoints: at most `k`, step-ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    checkpoints: Vec<Checkpoint>,
    k: usize,
}

impl TrajectoryWindow {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn dim(&self) -> usize {
        self.checkpoints.first().map_or(0, |c| c.weights.dim())
    }

    /// Build from an explicit checkpoint list (validating the invariants).
    pub fn from_checkpoints(checkpoints: Vec<Checkpoint>, k: usize) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::EmptyStream);
        }
        if checkpoints.len() > k {
            return Err(Error::Config(format!(
                "{} checkpoints exceed window capacity k={k}",
                checkpoints.len()
            )));
        }
        let dim = checkpoints[0].weights.dim();
        for pair in checkpoints.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::Config(format!(
                    "checkpoint steps must strictly increase ({} then {})",
                    pair[0].step, pair[1].step
                )));
            }
        }
        if let Some(c) = checkpoints.iter().find(|c| c.weights.dim() != dim) {
            return Err(Error::Config(format!(
                "checkpoint at step {} has dim {} != {}",
                c.step,
                c.weights.dim(),
                dim
            )));
        }
        Ok(TrajectoryWindow { checkpoints, k })
    }
}

/// Sample indices used by update `t`: `batch_size` uniform-with-replacement
/// draws from `[0, n)`, a pure function of `(seed, t)`.
pub fn sgd_batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let rng = CounterRng::new(seed, stream::SAMPLE, step);
    (0..batch_size).map(|j| rng.below(j as u64, n)).collect()
}

/// Run SGD for `cfg.steps` updates, returning the final weights and the
/// captured checkpoint stream. Deterministic in `(spec, data, cfg)`.
///
/// Weights start at `mlp_init(spec, cfg.seed)`. A checkpoint is captured
/// after every `capture_every`-th update and always after the last one; its
/// `train_loss` is the full-batch loss at that point. Training aborts with
/// [`Error::Diverged`] if any batch or full-batch loss exceeds 1e12 (or
/// turns non-finite).
pub fn sgd_train(
    spec: &MlpSpec,
    data: &DatasetSplit,
    cfg: &SgdConfig,
) -> Result<(WeightVector, Vec<Checkpoint>)> {
    spec.validate()?;
    cfg.validate()?;
    let mut w = mlp_init(spec, cfg.seed);
    let mut stream_out = Vec::with_capacity(cfg.capture_count() as usize);
    for t in 0..cfg.steps {
        let indices = sgd_batch_indices(cfg.seed, t, cfg.batch_size, data.len());
        let (batch_loss, grad) = loss_and_grad_subset(&w, spec, data, &indices).map_err(|e| match e {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("step {t}: {context}"),
            },
            other => other,
        })?;
        if !batch_loss.is_finite() || batch_loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step: t,
                loss: batch_loss,
            });
        }
        let rate = cfg.lr_schedule.rate_at(t, cfg.steps);
        w.axpy(-rate, &grad);

        let step = t + 1;
        if step % cfg.capture_every == 0 || step == cfg.steps {
            let train_loss = loss_only(&w, spec, data)?;
            if !train_loss.is_finite() || train_loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    step,
                    loss: train_loss,
                });
            }
            stream_out.push(Checkpoint {
                step,
                weights: w.clone(),
                train_loss,
            });
        }
    }
    Ok((w, stream_out))
}

/// Keep the last `min(k, len)` checkpoints of a stream, in order.
pub fn window_collect(stream: &[Checkpoint], k: usize) -> Result<TrajectoryWindow> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    if k == 0 {
        return Err(Error::Config("window length k must be >= 1".into()));
    }
    let start = stream.len().saturating_sub(k);
    TrajectoryWindow::from_checkpoints(stream[start..].to_vec(), k)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    dim: usize,
    k: usize,
    steps: Vec<u64>,
    train_losses: Vec<f64>,
    files: Vec<String>,
}

fn write_checkpoint_file(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    save_weights_file(path, &ckpt.weights, ckpt.step)
}

/// Write a bare weight vector in the checkpoint binary format.
pub fn save_weights_file(path: &Path, weights: &WeightVector, step: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 + 8 + 8 + weights.dim() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(weights.dim() as u64).to_le_bytes());
    for v in weights.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

/// Read a weight file written by [`save_weights_file`] (or any checkpoint
/// payload), returning `(step, weights)`.
pub fn load_weights_file(path: &Path) -> Result<(u64, WeightVector)> {
    let (step, values) = read_checkpoint_file(path)?;
    Ok((step, WeightVector::from_values(values)?))
}

fn read_checkpoint_file(path: &Path) -> Result<(u64, Vec<f64>)> {
    let name = path.display().to_string();
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 8 + 4 + 8 + 8];
    let got = read_up_to(&mut file, &mut header)?;
    if got < 8 || &header[..8] != MAGIC {
        return Err(Error::BadMagic { path: name });
    }
    if got < header.len() {
        return Err(Error::Truncated {
            path: name,
            expected: header.len(),
            found: got,
        });
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion { path: name, version });
    }
    let step = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let dim = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; dim * 8];
    let got = read_up_to(&mut file, &mut payload)?;
    if got < payload.len() {
        return Err(Error::Truncated {
            path: name,
            expected: dim * 8,
            found: got,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((step, values))
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Write then rename, so readers never observe a partial file.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Persist a window into `dir` (created if missing).
pub fn save_window(window: &TrajectoryWindow, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(window.len());
    for (i, ckpt) in window.checkpoints().iter().enumerate() {
        let file = format!("ckpt_{i:06}.bin");
        write_checkpoint_file(&dir.join(&file), ckpt)?;
        files.push(file);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dim: window.dim(),
        k: window.capacity(),
        steps: window.checkpoints().iter().map(|c| c.step).collect(),
        train_losses: window.checkpoints().iter().map(|c| c.train_loss).collect(),
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    atomic_write(&dir.join("manifest.json"), &json)
}

/// Load a window previously written by [`save_window`]. Round-trips are
/// bit-exact, including float payloads.
pub fn load_window(dir: &Path) -> Result<TrajectoryWindow> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::BadVersion {
            path: manifest_path.display().to_string(),
            version: manifest.version,
        });
    }
    if manifest.steps.len() != manifest.files.len()
        || manifest.train_losses.len() != manifest.files.len()
    {
        return Err(Error::ManifestMismatch {
            path: manifest_path.display().to_string(),
            detail: format!(
                "steps/train_losses/files lengths disagree ({}/{}/{})",
                manifest.steps.len(),
                manifest.train_losses.len(),
                manifest.files.len()
            ),
        });
    }
    let mut checkpoints = Vec::with_capacity(manifest.files.len());
    for (i, file) in manifest.files.iter().enumerate() {
        let path = dir.join(file);
        let (step, values) = read_checkpoint_file(&path)?;
        if values.len() != manifest.dim {
            return Err(Error::ManifestMismatch {
                path: path.display().to_string(),
                detail: format!(
                    "payload holds {} floats but manifest dim is {}",
                    values.len(),
                    manifest.dim
                ),
            });
        }
        if step != manifest.steps[i] {
            return Err(Error::ManifestMismatch {
                path: path.display().to_string(),
                detail: format!("file step {step} != manifest step {}", manifest.steps[i]),
            });
        }
        checkpoints.push(Checkpoint {
            step,
            // bypass the finite check: persistence must round-trip raw bits
            weights: WeightVector::from_values(values).map_err(|_| Error::ManifestMismatch {
                path: path.display().to_string(),
                detail: "non-finite weight payload".into(),
            })?,
            train_loss: manifest.train_losses[i],
        });
    }
    TrajectoryWindow::from_checkpoints(checkpoints, manifest.k)
}
