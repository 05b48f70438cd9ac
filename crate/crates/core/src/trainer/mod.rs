//! Optimisation loop, checkpoints, ablations and latency benchmarking.
//!
//! Every random choice is derived from `run.seed`: weight init, the per-epoch
//! shuffle and the per-sample augmentation draw (keyed by epoch and
//! position). Nothing depends on wall time or on how many epochs ran in this
//! process, so resuming from an epoch checkpoint replays the remaining
//! epochs bit-for-bit.

mod ablation;
mod adam;
mod bench;
mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{run_ablation_suite, AblationReport, AblationRow};
pub use adam::Adam;
pub use bench::{benchmark_inference, BenchReport, BENCH_REPETITIONS, BENCH_WARMUP};
pub use config::{AblationFlags, ConfigError, DataConfig, OptimConfig, RunConfig, TrainConfig};

use crate::autograd::Graph;
use crate::dataset::{augment, load_dataset, read_manifest, split_dataset, DatasetError, Frame};
use crate::image::Image;
use crate::losses::{
    align_loss_var, cycle_loss_var, scene_loss_var, total_loss_var, LossBreakdown, LossWeights, SsimConfig,
};
use crate::metrics::{self, MetricError};
use crate::model::checkpoint::{self, CheckpointError, TrainingInfo};
use crate::model::{Domain, ModelError, SasNet};
use crate::seed::derive;
use crate::tensor::{Real, Tensor};

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5bf1;
const STREAM_AUGMENT: u64 = 0xa06;
const STREAM_SPLIT: u64 = 0x5b17;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("the training split is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(
        "training diverged at epoch {epoch}, step {step}: total={} scene={} cycle={} align={} (non-finite {what})",
        breakdown.total, breakdown.scene, breakdown.cycle, breakdown.align
    )]
    Diverged {
        epoch: usize,
        step: u64,
        what: &'static str,
        breakdown: Box<LossBreakdown>,
    },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Frames of each split.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
    pub test: Vec<Frame>,
}

impl TrainData {
    /// Uses the manifest's splits when present, otherwise a seeded split.
    pub fn load(data: &DataConfig, seed: u64) -> Result<Self, TrainError> {
        let frames = load_dataset(&data.root, data.layout)?;
        let ids: Vec<String> = match read_manifest(&data.root)? {
            Some(m) if !m.splits.train.is_empty() => {
                return Ok(Self::from_ids(frames, &m.splits.train, &m.splits.val, &m.splits.test));
            }
            _ => frames.iter().map(|f| f.frame_id.clone()).collect(),
        };
        let split = split_dataset(&ids, data.split_ratios, derive(seed, STREAM_SPLIT))?;
        Ok(Self::from_ids(
            frames,
            &split.train_ids,
            &split.val_ids,
            &split.test_ids,
        ))
    }

    fn from_ids(frames: Vec<Frame>, train: &[String], val: &[String], test: &[String]) -> Self {
        let pick = |ids: &[String]| -> Vec<Frame> {
            ids.iter()
                .filter_map(|id| frames.iter().find(|f| &f.frame_id == id).cloned())
                .collect()
        };
        Self {
            train: pick(train),
            val: pick(val),
            test: pick(test),
        }
    }
}

/// Weights, optimizer moments and counters. The random stream is a pure
/// function of `(seed, epoch, position)` so it needs no stored state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: SasNet<f32>,
    pub adam: Adam,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_ncc: Option<f64>,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        let net = SasNet::new(config.effective_model(), derive(config.run.seed, STREAM_INIT))?;
        let o = &config.optim;
        let adam = Adam::new(net.params(), o.lr, o.beta1, o.beta2, o.eps);
        Ok(Self {
            net,
            adam,
            step: 0,
            epoch: 0,
            best_val_ncc: None,
        })
    }

    fn training_info(&self, config: &TrainConfig) -> TrainingInfo {
        TrainingInfo {
            step: self.step,
            epoch: self.epoch,
            loss_weights: config.effective_weights(),
            ablation: config.ablation,
            seed: config.run.seed,
            best_val_ncc: self.best_val_ncc,
        }
    }

    /// Writes `blob`, its sidecar and the optimizer moments next to it.
    pub fn save(&self, blob: &Path, config: &TrainConfig) -> Result<(), TrainError> {
        checkpoint::save_checkpoint(blob, &self.net, self.training_info(config))?;
        let (m, v) = self.adam.moments();
        let names = self.net.params().names();
        let mut named: Vec<(String, &Tensor<f32>)> = Vec::with_capacity(2 * names.len());
        for (n, t) in names.iter().zip(m) {
            named.push((format!("m.{n}"), t));
        }
        for (n, t) in names.iter().zip(v) {
            named.push((format!("v.{n}"), t));
        }
        let refs: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::write_blob(&moments_path(blob), &refs)?;
        Ok(())
    }

    /// Restores a state written by [`TrainState::save`]. Missing moments
    /// restart the optimizer from zero.
    pub fn load(blob: &Path, config: &TrainConfig) -> Result<Self, TrainError> {
        let (net, meta) = checkpoint::load_checkpoint(blob)?;
        if *net.config() != config.effective_model() {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint model {:?} differs from configured {:?}",
                net.config(),
                config.effective_model()
            ))
            .into());
        }
        let o = &config.optim;
        let mut adam = Adam::new(net.params(), o.lr, o.beta1, o.beta2, o.eps);
        let mpath = moments_path(blob);
        if mpath.exists() {
            let tensors = checkpoint::read_blob(&mpath)?;
            let half = tensors.len() / 2;
            let (m, v): (Vec<_>, Vec<_>) = tensors.into_iter().enumerate().partition(|(i, _)| *i < half);
            adam.restore(
                meta.training.step,
                m.into_iter().map(|(_, (_, t))| t).collect(),
                v.into_iter().map(|(_, (_, t))| t).collect(),
            )
            .map_err(CheckpointError::Incompatible)?;
        } else {
            log::warn!("no optimizer moments at {}; restarting Adam", mpath.display());
        }
        Ok(Self {
            net,
            adam,
            step: meta.training.step,
            epoch: meta.training.epoch,
            best_val_ncc: meta.training.best_val_ncc,
        })
    }
}

pub fn moments_path(blob: &Path) -> PathBuf {
    blob.with_extension("adam")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_scene: f64,
    pub mean_cycle: f64,
    pub mean_align: f64,
    pub val_ncc: Option<f64>,
    pub val_ssim: Option<f64>,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
    pub is_best: bool,
}

/// One line of the JSON-lines metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Epoch(EpochSummary),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Records produced by this call (a resumed run holds only new ones).
    pub log: Vec<LogRecord>,
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub log_path: PathBuf,
}

pub fn checkpoint_dir(config: &TrainConfig) -> PathBuf {
    config.run.out_dir.join("checkpoints")
}

pub fn metrics_log_path(config: &TrainConfig) -> PathBuf {
    config.run.out_dir.join("metrics.jsonl")
}

/// Stacks the halves of a batch into `[n, 1, h, w/2]` tensors.
pub fn batch_tensors<T: Real>(frames: &[Frame]) -> (Tensor<T>, Tensor<T>) {
    let odd: Vec<&Image> = frames.iter().map(|f| &f.odd_half).collect();
    let even: Vec<&Image> = frames.iter().map(|f| &f.even_half).collect();
    (Image::batch_to_tensor(&odd), Image::batch_to_tensor(&even))
}

/// Gradients aligned with `ParamStore::tensors`.
pub type Grads<T> = Vec<Tensor<T>>;

/// Loss of one batch and, when `with_grads`, the parameter gradients.
pub fn batch_loss<T: Real>(
    net: &SasNet<T>,
    frames: &[Frame],
    weights: &LossWeights,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Grads<T>>), ModelError> {
    let (odd, even) = batch_tensors(frames);
    let mut g = Graph::new();
    let p = net.bind(&mut g, with_grads);
    let xo = g.input(odd);
    let xe = g.input(even);
    let c = net.cross_render(&mut g, &p, xo, xe, false)?;
    let recon_odd = net.synthesize(&mut g, &p, c.s_odd, c.a_odd)?;
    let recon_even = net.synthesize(&mut g, &p, c.s_even, c.a_even)?;
    let scene = scene_loss_var(&mut g, c.s_odd, c.s_even, weights.lambda_cos);
    let cycle = cycle_loss_var(
        &mut g,
        xo,
        xe,
        recon_odd,
        recon_even,
        weights.lambda_ssim,
        &SsimConfig::default(),
    );
    let align = align_loss_var(&mut g, c.even_to_odd, xo, weights.lambda_ncc, weights.lambda_grad);
    let (vars, breakdown) = total_loss_var(&mut g, scene, cycle, align, weights);
    if !with_grads {
        return Ok((breakdown, None));
    }
    let mut grads = g.backward(vars.total);
    let out =
        p.0.iter()
            .zip(net.params().tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
    Ok((breakdown, Some(out)))
}

/// One optimizer update on `frames`. Aborts before touching the weights if
/// the loss or any gradient is not finite.
pub fn train_step(
    state: &mut TrainState,
    frames: &[Frame],
    weights: &LossWeights,
) -> Result<LossBreakdown, TrainError> {
    let (breakdown, grads) = batch_loss(&state.net, frames, weights, true)?;
    let grads = grads.expect("requested");
    let diverged = |what| TrainError::Diverged {
        epoch: state.epoch + 1,
        step: state.step + 1,
        what,
        breakdown: Box::new(breakdown.clone()),
    };
    if !breakdown.total.is_finite() {
        return Err(diverged("loss"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(diverged("gradient"));
    }
    state.adam.update(state.net.params_mut(), &grads);
    state.step += 1;
    Ok(breakdown)
}

/// Mean NCC and SSIM of `G(E_S(even), E_A(odd))` against the odd half.
pub fn validate(net: &SasNet<f32>, frames: &[Frame]) -> Result<Option<(f64, f64)>, TrainError> {
    if frames.is_empty() {
        return Ok(None);
    }
    let mut ncc = Vec::with_capacity(frames.len());
    let mut ssim = Vec::with_capacity(frames.len());
    for f in frames {
        let out = net.register(&f.odd_half, &f.even_half)?;
        if let Ok(v) = metrics::ncc(&out, &f.odd_half) {
            ncc.push(v);
        }
        ssim.push(metrics::ssim(&out, &f.odd_half)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(Some((mean(&ncc), mean(&ssim))))
}

/// Training order of epoch `epoch` (1-based).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(
        derive(seed, STREAM_SHUFFLE),
        epoch as u64,
    )));
    order
}

/// Augmentation seed of the sample at `position` in epoch `epoch`.
pub fn augment_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    derive(derive(derive(seed, STREAM_AUGMENT), epoch as u64), position as u64)
}

struct Logger {
    out: BufWriter<File>,
    path: PathBuf,
    records: Vec<LogRecord>,
}

impl Logger {
    fn open(path: PathBuf, append: bool) -> Result<Self, TrainError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
            records: Vec::new(),
        })
    }

    fn push(&mut self, record: LogRecord) -> Result<(), TrainError> {
        let line = serde_json::to_string(&record).expect("log record serializes");
        writeln!(self.out, "{line}").map_err(io_err(&self.path))?;
        self.records.push(record);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Reads a JSON-lines metrics log.
pub fn read_metrics_log(path: &Path) -> Result<Vec<LogRecord>, TrainError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| TrainError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}

/// Runs `config.optim.epochs` epochs (minus those already completed by a
/// resumed state) over `data.train`.
///
/// Per step: augment each frame, split into halves, encode both halves,
/// re-render the even scene under the odd appearance and each half under its
/// own, then take one Adam step on the weighted total. Every step's
/// breakdown goes to `out_dir/metrics.jsonl`; each epoch appends a summary,
/// updates `checkpoints/last.sasw` and, on the configured cadence, writes
/// `checkpoints/epoch_NNNN.sasw`. The best validation NCC is kept as
/// `checkpoints/best.sasw`.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ck_dir = checkpoint_dir(config);
    let last = ck_dir.join("last.sasw");
    let resume_from = match &config.run.resume {
        Some(p) => Some(p.clone()),
        None if config.run.auto_resume && last.exists() => Some(last.clone()),
        None => None,
    };
    let mut state = match &resume_from {
        Some(p) => {
            log::info!("resuming from {}", p.display());
            TrainState::load(p, config)?
        }
        None => TrainState::new(config)?,
    };
    let log_path = metrics_log_path(config);
    let mut logger = Logger::open(log_path.clone(), resume_from.is_some())?;
    let weights = config.effective_weights();
    let best = ck_dir.join("best.sasw");
    let mut best_checkpoint = best.exists().then(|| best.clone()).filter(|_| resume_from.is_some());
    let mut checkpoints = Vec::new();
    let mut epochs = Vec::new();
    let batch = config.optim.batch_size;
    let seed = config.run.seed;

    while state.epoch < config.optim.epochs {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let order = epoch_order(seed, epoch, data.train.len());
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for (b, chunk) in order.chunks(batch).enumerate() {
            if config.run.max_steps_per_epoch.is_some_and(|m| steps >= m) {
                break;
            }
            let frames: Vec<Frame> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    augment(
                        &data.train[i],
                        augment_seed(seed, epoch, b * batch + k),
                        &config.data.augment,
                    )
                })
                .collect();
            let loss = train_step(&mut state, &frames, &weights)?;
            for (s, v) in sums.iter_mut().zip([loss.total, loss.scene, loss.cycle, loss.align]) {
                *s += v;
            }
            steps += 1;
            logger.push(LogRecord::Step {
                epoch,
                step: state.step,
                loss,
            })?;
        }
        state.epoch = epoch;
        let val = validate(&state.net, &data.val)?;
        let is_best = match (val, state.best_val_ncc) {
            (Some((ncc, _)), Some(b)) => ncc > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if is_best {
            state.best_val_ncc = val.map(|v| v.0);
            state.save(&best, config)?;
            best_checkpoint = Some(best.clone());
        }
        let mut written = None;
        if epoch % config.run.checkpoint_every == 0 || epoch == config.optim.epochs {
            let p = ck_dir.join(format!("epoch_{epoch:04}.sasw"));
            state.save(&p, config)?;
            checkpoints.push(p.clone());
            written = Some(p);
        }
        state.save(&last, config)?;
        let n = steps.max(1) as f64;
        let summary = EpochSummary {
            epoch,
            steps,
            mean_total: sums[0] / n,
            mean_scene: sums[1] / n,
            mean_cycle: sums[2] / n,
            mean_align: sums[3] / n,
            val_ncc: val.map(|v| v.0),
            val_ssim: val.map(|v| v.1),
            seconds: started.elapsed().as_secs_f64(),
            checkpoint: written,
            is_best,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, val NCC {}, val SSIM {} ({:.1}s)",
            config.optim.epochs,
            summary.mean_total,
            summary.val_ncc.map_or("n/a".into(), |v| format!("{v:.4}")),
            summary.val_ssim.map_or("n/a".into(), |v| format!("{v:.4}")),
            summary.seconds
        );
        logger.push(LogRecord::Epoch(summary.clone()))?;
        logger.flush()?;
        epochs.push(summary);
    }
    logger.flush()?;
    if !last.exists() {
        state.save(&last, config)?;
    }
    Ok(TrainOutcome {
        state,
        log: logger.records,
        epochs,
        checkpoints,
        last_checkpoint: last,
        best_checkpoint,
        log_path,
    })
}

/// Euclidean distance between the odd-domain appearance codes of two images.
pub fn appearance_distance(net: &SasNet<f32>, a: &Image, b: &Image) -> f64 {
    let ca = net.appearance_code(a, Domain::Odd);
    let cb = net.appearance_code(b, Domain::Odd);
    ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AugmentConfig, FrameSource};
    use crate::model::ModelConfig;
    use crate::scan_sim::SimulationPlan;

    pub(crate) fn tiny_config(out: &Path) -> TrainConfig {
        let mut c = TrainConfig {
            model: ModelConfig {
                c_s: 4,
                c_a: 4,
                base_channels: 4,
                levels: 2,
                appearance_channels: 2,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        c.optim.epochs = 2;
        c.optim.batch_size = 2;
        c.optim.lr = 1e-3;
        c.run.out_dir = out.to_path_buf();
        c
    }

    pub(crate) fn tiny_frames(n: usize, seed: u64) -> Vec<Frame> {
        let mut plan = SimulationPlan::desk_scale(seed);
        plan.height = 16;
        plan.width = 32;
        plan.vessel_count = 2;
        (0..n)
            .map(|i| {
                let (_, pair) = plan.frame(i).unwrap();
                Frame::new(format!("f{i}"), pair.interleaved, FrameSource::Synthetic).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_epochs_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        let data = TrainData {
            train: tiny_frames(8, 1),
            val: tiny_frames(2, 2),
            test: vec![],
        };
        let out = train(&c, &data).unwrap();
        assert_eq!(out.epochs.len(), 2);
        assert!(out.checkpoints.len() >= 2);
        assert!(out
            .checkpoints
            .iter()
            .all(|p| p.exists() && checkpoint::sidecar_path(p).exists()));
        let log = read_metrics_log(&out.log_path).unwrap();
        assert_eq!(log, out.log);
        let summaries = log.iter().filter(|r| matches!(r, LogRecord::Epoch(_))).count();
        assert_eq!(summaries, 2);
        let steps = log.iter().filter(|r| matches!(r, LogRecord::Step { .. })).count();
        assert_eq!(steps, 8);
        for r in &log {
            if let LogRecord::Step { loss, .. } = r {
                assert_eq!(loss.total, loss.recomputed_total());
            }
        }
        assert!(out.best_checkpoint.is_some());
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        assert!(matches!(
            train(&c, &TrainData::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn drop_align_excluded_from_total() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(dir.path());
        c.optim.epochs = 1;
        c.ablation.drop_align = true;
        let data = TrainData {
            train: tiny_frames(4, 3),
            ..TrainData::default()
        };
        let out = train(&c, &data).unwrap();
        for r in &out.log {
            if let LogRecord::Step { loss, .. } = r {
                assert_eq!(loss.lambda_align, 0.0);
                assert!(loss.align > 0.0);
                assert_eq!(loss.total, 1.0 * loss.scene + 0.5 * loss.cycle);
            }
        }
    }

    #[test]
    fn divergence_guard_leaves_weights_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        let mut state = TrainState::new(&c).unwrap();
        let before = state.net.params().clone();
        let mut frames = tiny_frames(1, 4);
        frames[0].odd_half.data_mut()[0] = f64::NAN;
        let err = train_step(&mut state, &frames, &c.effective_weights()).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
        assert!(err.to_string().contains("diverged"));
        assert_eq!(state.net.params(), &before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn resume_replays_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(&dir.path().join("a"));
        c.optim.epochs = 2;
        c.data.augment = AugmentConfig::default();
        let data = TrainData {
            train: tiny_frames(4, 5),
            ..TrainData::default()
        };
        let full = train(&c, &data).unwrap();

        let mut first = c.clone();
        first.run.out_dir = dir.path().join("b");
        first.optim.epochs = 1;
        let half = train(&first, &data).unwrap();
        let mut second = first.clone();
        second.optim.epochs = 2;
        second.run.resume = Some(half.checkpoints[0].clone());
        let resumed = train(&second, &data).unwrap();

        let tail = |log: &[LogRecord]| -> Vec<f64> {
            log.iter()
                .filter_map(|r| match r {
                    LogRecord::Step { epoch: 2, loss, .. } => Some(loss.total),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(tail(&full.log), tail(&resumed.log));
        assert_eq!(full.state.net.params(), resumed.state.net.params());
        // the resumed log appends to the first run's file
        let on_disk = read_metrics_log(&resumed.log_path).unwrap();
        assert_eq!(on_disk.len(), half.log.len() + resumed.log.len());
    }

    #[test]
    fn auto_resume_skips_finished_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(dir.path());
        c.optim.epochs = 1;
        let data = TrainData {
            train: tiny_frames(2, 6),
            ..TrainData::default()
        };
        let a = train(&c, &data).unwrap();
        c.run.auto_resume = true;
        let b = train(&c, &data).unwrap();
        assert!(b.epochs.is_empty());
        assert_eq!(a.state.net.params(), b.state.net.params());
    }

    #[test]
    fn log_record_json_shape() {
        let r = LogRecord::Step {
            epoch: 1,
            step: 3,
            loss: LossBreakdown::default(),
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in [
            "kind",
            "epoch",
            "step",
            "scene",
            "cycle",
            "align",
            "total",
            "scene_cos",
            "align_grad",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["kind"], "step");
    }
}
