//! Self-supervised training: reconstruct each slice from its neighbour by
//! weight-and-copy through the learned affinity and minimise the mean
//! absolute reconstruction error with ADAM.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_backward, attend, WindowSpec};
use crate::edge_profile::{compute_edge_profile, EdgeProfileMap, ProfileConfig};
use crate::error::{Error, Result};
use crate::io::load_volume;
use crate::network::{
    adam_step, save_checkpoint, AdamState, FeatureMap, GradientSet, InputMode, Network, NetworkConfig,
};
use crate::scalar::Real;
use crate::volume::{SlicePlane, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// SVL1 files making up the training corpus.
    pub corpus: Vec<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub window: WindowSpec,
    pub profile: ProfileConfig,
    pub net: NetworkConfig,
    /// Slices are resized to this (height, width) before anything else.
    pub resize: Option<[usize; 2]>,
    pub rng_seed: u64,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            epochs: 3,
            batch_size: 10,
            initial_lr: 1e-4,
            window: WindowSpec::default(),
            profile: ProfileConfig::default(),
            net: NetworkConfig::desk(),
            resize: Some([32, 32]),
            rng_seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if let Some([h, w]) = self.resize {
            if h < 2 || w < 2 {
                return Err(Error::Config("resize target must be at least 2x2".into()));
            }
        }
        self.net.validate()?;
        if self.net.input_mode == InputMode::EdgeProfile {
            self.profile.validate()?;
            self.net.check_profile(&self.profile)?;
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`: halved at every epoch boundary.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_lr / 2f64.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub source: SlicePlane,
    pub target: SlicePlane,
    pub volume: usize,
    /// Depth index of `source`; `target` is `slice + 1`.
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<SlicePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub steps: usize,
    pub wall_clock_seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Draws `count` adjacent pairs: a volume uniformly, then one of its `D-1`
/// adjacent positions uniformly.
pub fn sample_adjacent_pairs<R: Rng>(corpus: &[Vec<SlicePlane>], count: usize, rng: &mut R) -> Result<PairBatch> {
    if corpus.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    if let Some(i) = corpus.iter().position(|v| v.len() < 2) {
        return Err(Error::Config(format!("corpus volume {i} has fewer than 2 slices")));
    }
    let pairs = (0..count)
        .map(|_| {
            let volume = rng.gen_range(0..corpus.len());
            let slice = rng.gen_range(0..corpus[volume].len() - 1);
            SlicePair {
                source: corpus[volume][slice].clone(),
                target: corpus[volume][slice + 1].clone(),
                volume,
                slice,
            }
        })
        .collect();
    Ok(PairBatch { pairs })
}

/// Network input for a slice: the centred, scaled edge profile, or the raw
/// intensity.
pub fn network_input<T: Real>(
    slice: &SlicePlane,
    net: &NetworkConfig,
    profile: &ProfileConfig,
) -> Result<EdgeProfileMap<T>> {
    match net.input_mode {
        InputMode::EdgeProfile => {
            let mut m: EdgeProfileMap<T> = compute_edge_profile(slice, profile)?;
            let (gain, c) = (T::of(net.profile_gain), T::of(m.channels as f64));
            for v in &mut m.values {
                *v = gain * (*v * c - T::one());
            }
            Ok(m)
        }
        InputMode::Intensity => Ok(EdgeProfileMap::from_intensity(slice)),
    }
}

/// Mean absolute error of reconstructing `target` from `source`, and its
/// gradient through both network passes and the attention.
pub fn reconstruction_loss<T: Real>(
    net: &Network<T>,
    source: &SlicePlane,
    target: &SlicePlane,
    profile: &ProfileConfig,
    win: WindowSpec,
) -> Result<(T, GradientSet<T>)> {
    if source.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "pair slices differ: {:?} vs {:?}",
            source.dims(),
            target.dims()
        )));
    }
    let cfg = net.config();
    let (key, key_tape) = net.forward_with_tape(&network_input::<T>(source, cfg, profile)?)?;
    let (query, query_tape) = net.forward_with_tape(&network_input::<T>(target, cfg, profile)?)?;
    let field: Vec<T> = source.values.iter().map(|&v| T::of(v as f64)).collect();
    let tape = attend(&key, &query, win, &field)?;

    let n = T::of(target.len() as f64);
    let mut loss = T::zero();
    let mut upstream = Vec::with_capacity(target.len());
    for (&rec, &t) in tape.output.iter().zip(&target.values) {
        let diff = rec - T::of(t as f64);
        loss += diff.abs();
        let s = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        upstream.push(s / n);
    }
    loss = loss / n;

    let (g_key, g_query) = affinity_backward(&tape, &upstream)?;
    let mut grads = net.backward(&key_tape, &g_key)?;
    grads.add_assign(&net.backward(&query_tape, &g_query)?)?;
    Ok((loss, grads))
}

/// Loss only, without gradients.
pub fn reconstruction_error<T: Real>(
    net: &Network<T>,
    source: &SlicePlane,
    target: &SlicePlane,
    profile: &ProfileConfig,
    win: WindowSpec,
) -> Result<T> {
    let cfg = net.config();
    let key: FeatureMap<T> = net.forward(&network_input(source, cfg, profile)?)?;
    let query = net.forward(&network_input(target, cfg, profile)?)?;
    let field: Vec<T> = source.values.iter().map(|&v| T::of(v as f64)).collect();
    let tape = attend(&key, &query, win, &field)?;
    let total: T = tape
        .output
        .iter()
        .zip(&target.values)
        .map(|(&r, &t)| (r - T::of(t as f64)).abs())
        .sum();
    Ok(total / T::of(target.len() as f64))
}

/// Splits volumes into (optionally resized) slice stacks.
pub fn prepare_corpus(volumes: &[Volume], resize: Option<[usize; 2]>) -> Result<Vec<Vec<SlicePlane>>> {
    volumes
        .iter()
        .map(|v| {
            v.slices()
                .map(|s| match resize {
                    Some([h, w]) => s.resize_bilinear(h, w),
                    None => Ok(s),
                })
                .collect()
        })
        .collect()
}

/// Result of an in-memory training run.
pub struct Trained {
    pub network: Network<f32>,
    pub adam: AdamState<f32>,
    pub report: TrainReport,
}

/// Trains on in-memory volumes. `on_epoch` runs after each epoch with the
/// 0-based epoch index and the current state (used for checkpointing).
pub fn train_on_volumes(
    cfg: &TrainConfig,
    volumes: &[Volume],
    mut on_epoch: impl FnMut(usize, &Network<f32>, &AdamState<f32>) -> Result<()>,
) -> Result<Trained> {
    cfg.validate()?;
    let start = Instant::now();
    let corpus = prepare_corpus(volumes, cfg.resize)?;
    let mut net = Network::<f32>::init(cfg.net.clone())?;
    let mut adam = AdamState::new(&net, Default::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let pairs_per_epoch: usize = corpus.iter().map(|v| v.len().saturating_sub(1)).sum();

    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        lr_trace: Vec::new(),
        steps: 0,
        wall_clock_seconds: 0.0,
        checkpoint: None,
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        adam.set_learning_rate(lr);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut remaining = pairs_per_epoch;
        while remaining > 0 {
            let n = remaining.min(cfg.batch_size);
            remaining -= n;
            let batch = sample_adjacent_pairs(&corpus, n, &mut rng)?;
            let results: Vec<Result<(f32, GradientSet<f32>)>> = batch
                .pairs
                .par_iter()
                .map(|p| reconstruction_loss(&net, &p.source, &p.target, &cfg.profile, cfg.window))
                .collect();
            // reduce in sample order so the sum is schedule-independent
            let mut total = GradientSet::zeros_like(&net);
            for (pair, r) in batch.pairs.iter().zip(results) {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss on volume {} slices {}-{}",
                        pair.volume,
                        pair.slice,
                        pair.slice + 1
                    )));
                }
                loss_sum += loss as f64;
                total.add_assign(&g)?;
            }
            seen += n;
            total.scale(1.0 / n as f32);
            adam_step(&mut net, &total, &mut adam)?;
            report.steps += 1;
        }
        let mean = loss_sum / seen.max(1) as f64;
        eprintln!("epoch={} loss={mean:.6} lr={lr:e}", epoch + 1);
        report.epoch_losses.push(mean);
        report.lr_trace.push(lr);
        on_epoch(epoch, &net, &adam)?;
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(Trained {
        network: net,
        adam,
        report,
    })
}

/// Loads the corpus from disk, trains, and writes checkpoints to `out` at
/// the configured cadence and after the last epoch.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<Trained> {
    if cfg.corpus.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    let volumes = cfg.corpus.iter().map(load_volume).collect::<Result<Vec<_>>>()?;
    let last = cfg.epochs.saturating_sub(1);
    let mut trained = train_on_volumes(cfg, &volumes, |epoch, net, adam| {
        if let Some(path) = out {
            let due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
            if due || epoch == last {
                save_checkpoint(net, Some(adam), &cfg.profile, path)?;
            }
        }
        Ok(())
    })?;
    trained.report.checkpoint = out.map(Path::to_path_buf);
    Ok(trained)
}
