//! Mask propagation from a single annotated slice through a whole volume.
//!
//! Each step builds the affinity from the current slice (keys) to the next
//! (queries), transports the current mask through it, binarizes, and
//! optionally verifies every proposed pixel against the running foreground
//! and surrounding-band mean intensities. The two sweep directions carry
//! their own statistics and run independently.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::{apply_affinity, compute_affinity, AffinityMatrix, WindowSpec};
use crate::edge_profile::ProfileConfig;
use crate::error::{Error, Result};
use crate::network::{FeatureMap, InputMode, Network};
use crate::trainer::network_input;
use crate::volume::{MaskPlane, MaskVolume, SlicePlane, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateOptions {
    pub threshold: f64,
    pub verification: bool,
    pub dilation_radius: usize,
    pub stop_on_empty: bool,
    pub window: WindowSpec,
    pub edge_profile: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            verification: true,
            dilation_radius: 7,
            stop_on_empty: true,
            window: WindowSpec::default(),
            edge_profile: true,
        }
    }
}

impl PropagateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} is not in (0, 1)", self.threshold)));
        }
        if self.dilation_radius == 0 {
            return Err(Error::Config("dilation radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean intensity inside the mask (`p`) and in the band around it (`n`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub p: f64,
    pub n: f64,
    pub positive_count: usize,
    pub negative_count: usize,
}

impl RegionStats {
    /// `None` when either region is empty.
    pub fn compute(mask: &MaskPlane, slice: &SlicePlane, dilation_radius: usize) -> Option<Self> {
        let ring = dilate_mask(mask, dilation_radius);
        let (mut sp, mut sn, mut np, mut nn) = (0.0, 0.0, 0usize, 0usize);
        for ((&m, &d), &v) in mask.bits().iter().zip(ring.bits()).zip(&slice.values) {
            if m != 0 {
                sp += v as f64;
                np += 1;
            } else if d != 0 {
                sn += v as f64;
                nn += 1;
            }
        }
        (np > 0 && nn > 0).then(|| Self {
            p: sp / np as f64,
            n: sn / nn as f64,
            positive_count: np,
            negative_count: nn,
        })
    }
}

/// Binary dilation with a `(2·radius+1)²` square structuring element,
/// done as a row pass followed by a column pass.
pub fn dilate_mask(m: &MaskPlane, radius: usize) -> MaskPlane {
    let (h, w) = m.dims();
    let sweep = |len: usize, get: &dyn Fn(usize) -> bool| -> Vec<bool> {
        // running count of set pixels within ±radius
        let mut out = vec![false; len];
        let mut count = 0usize;
        for i in 0..len.min(radius) {
            count += get(i) as usize;
        }
        for (i, o) in out.iter_mut().enumerate() {
            if i + radius < len {
                count += get(i + radius) as usize;
            }
            if i > radius {
                count -= get(i - radius - 1) as usize;
            }
            *o = count > 0;
        }
        out
    };
    let mut rows = MaskPlane::empty(h, w);
    for y in 0..h {
        let r = sweep(w, &|x| m.get(y, x));
        for (x, on) in r.into_iter().enumerate() {
            rows.set(y, x, on);
        }
    }
    let mut out = MaskPlane::empty(h, w);
    for x in 0..w {
        let c = sweep(h, &|y| rows.get(y, x));
        for (y, on) in c.into_iter().enumerate() {
            out.set(y, x, on);
        }
    }
    out
}

/// Keeps a proposed pixel only if its intensity is strictly closer to the
/// foreground mean than to the surrounding-band mean.
pub fn verify_mask(proposed: &MaskPlane, next_slice: &SlicePlane, stats: &RegionStats) -> MaskPlane {
    let bits = proposed
        .bits()
        .iter()
        .zip(&next_slice.values)
        .map(|(&m, &v)| {
            let v = v as f64;
            (m != 0 && (v - stats.p).abs() < (v - stats.n).abs()) as u8
        })
        .collect();
    MaskPlane::new(proposed.height, proposed.width, bits).expect("binary by construction")
}

/// Source of slice-to-slice affinities.
pub trait CorrespondenceProvider: Sync {
    type Embedding: Send + Sync;

    fn embed(&self, slice: &SlicePlane) -> Result<Self::Embedding>;

    /// Affinity whose rows index `target` pixels and whose windows range over `source`.
    fn affinity(
        &self,
        source: &Self::Embedding,
        target: &Self::Embedding,
        window: WindowSpec,
    ) -> Result<AffinityMatrix<f32>>;
}

/// The trained network as a correspondence provider.
#[derive(Debug, Clone)]
pub struct NetworkProvider {
    network: Network<f32>,
    profile: ProfileConfig,
}

impl NetworkProvider {
    /// Fails with a configuration mismatch when the requested input mode
    /// (`edge_profile`) or the profile's channel count does not match the
    /// network.
    pub fn new(network: Network<f32>, profile: ProfileConfig, edge_profile: bool) -> Result<Self> {
        let mode = network.config().input_mode;
        match (mode, edge_profile) {
            (InputMode::EdgeProfile, false) => {
                return Err(Error::ConfigMismatch(
                    "edge profile disabled but the checkpoint was trained on edge profiles".into(),
                ))
            }
            (InputMode::Intensity, true) => {
                return Err(Error::ConfigMismatch(
                    "edge profile enabled but the checkpoint was trained on raw intensity".into(),
                ))
            }
            _ => {}
        }
        if mode == InputMode::EdgeProfile {
            profile.validate()?;
            network.config().check_profile(&profile)?;
        }
        Ok(Self { network, profile })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.network
    }
}

impl CorrespondenceProvider for NetworkProvider {
    type Embedding = FeatureMap<f32>;

    fn embed(&self, slice: &SlicePlane) -> Result<FeatureMap<f32>> {
        let input = network_input(slice, self.network.config(), &self.profile)?;
        self.network.forward(&input)
    }

    fn affinity(
        &self,
        source: &FeatureMap<f32>,
        target: &FeatureMap<f32>,
        window: WindowSpec,
    ) -> Result<AffinityMatrix<f32>> {
        compute_affinity(source, target, window)
    }
}

/// Every row selects its own pixel: masks are copied unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProvider;

/// Every row spreads equally over its in-bounds window.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformProvider;

impl CorrespondenceProvider for IdentityProvider {
    type Embedding = (usize, usize);

    fn embed(&self, slice: &SlicePlane) -> Result<(usize, usize)> {
        Ok(slice.dims())
    }

    fn affinity(&self, _: &(usize, usize), target: &(usize, usize), window: WindowSpec) -> Result<AffinityMatrix<f32>> {
        Ok(AffinityMatrix::identity(target.0, target.1, window))
    }
}

impl CorrespondenceProvider for UniformProvider {
    type Embedding = (usize, usize);

    fn embed(&self, slice: &SlicePlane) -> Result<(usize, usize)> {
        Ok(slice.dims())
    }

    fn affinity(&self, _: &(usize, usize), target: &(usize, usize), window: WindowSpec) -> Result<AffinityMatrix<f32>> {
        Ok(AffinityMatrix::uniform(target.0, target.1, window))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub mask: MaskPlane,
    /// Maximum of the soft (pre-threshold) propagated mask.
    pub soft_max: f32,
    /// Statistics of the new mask on the new slice.
    pub stats: Option<RegionStats>,
}

fn step_with_embeddings<P: CorrespondenceProvider>(
    provider: &P,
    source: &P::Embedding,
    target: &P::Embedding,
    next_slice: &SlicePlane,
    mask: &MaskPlane,
    stats: Option<&RegionStats>,
    opts: &PropagateOptions,
) -> Result<StepOutput> {
    let aff = provider.affinity(source, target, opts.window)?;
    if aff.dims() != mask.dims() || next_slice.dims() != mask.dims() {
        return Err(Error::ShapeMismatch("affinity, mask and slice dims differ".into()));
    }
    let soft = apply_affinity(&aff, &mask.to_field())?;
    let soft_max = soft.iter().copied().fold(0.0f32, f32::max);
    let t = opts.threshold as f32;
    let bits = soft.iter().map(|&s| (s >= t) as u8).collect();
    let mut next = MaskPlane::new(mask.height, mask.width, bits)?;
    if opts.verification {
        if let Some(st) = stats {
            next = verify_mask(&next, next_slice, st);
        }
    }
    let stats = RegionStats::compute(&next, next_slice, opts.dilation_radius);
    Ok(StepOutput {
        mask: next,
        soft_max,
        stats,
    })
}

/// One propagation step from `slice` (with `mask`) to `next_slice`.
/// `stats` are those of `mask` on `slice`; verification is skipped when
/// they are undefined.
pub fn propagate_step<P: CorrespondenceProvider>(
    provider: &P,
    slice: &SlicePlane,
    next_slice: &SlicePlane,
    mask: &MaskPlane,
    stats: Option<&RegionStats>,
    opts: &PropagateOptions,
) -> Result<StepOutput> {
    opts.validate()?;
    let source = provider.embed(slice)?;
    let target = provider.embed(next_slice)?;
    step_with_embeddings(provider, &source, &target, next_slice, mask, stats, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub masks: MaskVolume,
    pub seed_index: usize,
    /// Soft-mask maximum per slice (1 at the seed, 0 where never reached).
    pub soft_max: Vec<f32>,
    pub stats: Vec<Option<RegionStats>>,
    /// First slice found empty in each direction, if a sweep stopped.
    pub stopped_forward: Option<usize>,
    pub stopped_backward: Option<usize>,
    /// Wall-clock seconds spent producing each slice.
    pub slice_seconds: Vec<f64>,
    pub total_seconds: f64,
}

/// JSON sidecar written next to propagated masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSummary {
    pub seed_index: usize,
    pub depth: usize,
    pub stopped_forward: Option<usize>,
    pub stopped_backward: Option<usize>,
    pub soft_max: Vec<f32>,
    pub stats: Vec<Option<RegionStats>>,
    pub slice_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub slices_per_second: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice_per_slice: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_dice: Option<f64>,
}

impl PropagationResult {
    pub fn summary(&self, groundtruth: Option<&MaskVolume>) -> Result<PropagationSummary> {
        let (dice_per_slice, volume_dice) = match groundtruth {
            Some(gt) => {
                let per = self
                    .masks
                    .planes()
                    .iter()
                    .zip(gt.planes())
                    .map(|(a, b)| crate::metrics::dice(a, b))
                    .collect::<Result<Vec<_>>>()?;
                (Some(per), Some(crate::metrics::dice(&self.masks, gt)?))
            }
            None => (None, None),
        };
        let depth = self.masks.depth();
        Ok(PropagationSummary {
            seed_index: self.seed_index,
            depth,
            stopped_forward: self.stopped_forward,
            stopped_backward: self.stopped_backward,
            soft_max: self.soft_max.clone(),
            stats: self.stats.clone(),
            slice_seconds: self.slice_seconds.clone(),
            total_seconds: self.total_seconds,
            slices_per_second: if self.total_seconds > 0.0 {
                depth as f64 / self.total_seconds
            } else {
                f64::INFINITY
            },
            dice_per_slice,
            volume_dice,
        })
    }
}

struct Sweep {
    /// (slice index, mask, soft max, stats, seconds)
    steps: Vec<(usize, MaskPlane, f32, Option<RegionStats>, f64)>,
    stopped: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn sweep<P: CorrespondenceProvider>(
    provider: &P,
    volume: &Volume,
    seed_index: usize,
    seed_embedding: &P::Embedding,
    seed_mask: &MaskPlane,
    seed_stats: Option<RegionStats>,
    forward: bool,
    opts: &PropagateOptions,
    progress: &(dyn Fn() + Sync),
) -> Result<Sweep> {
    let indices: Vec<usize> = if forward {
        (seed_index + 1..volume.depth()).collect()
    } else {
        (0..seed_index).rev().collect()
    };
    let mut out = Sweep {
        steps: Vec::with_capacity(indices.len()),
        stopped: None,
    };
    let mut prev_emb: Option<P::Embedding> = None;
    let mut mask = seed_mask.clone();
    let mut stats = seed_stats;
    for &k in &indices {
        let t0 = Instant::now();
        if out.stopped.is_some() {
            let empty = MaskPlane::empty(mask.height, mask.width);
            out.steps.push((k, empty, 0.0, None, 0.0));
            progress();
            continue;
        }
        let next = volume.extract_slice(k)?;
        let target = provider.embed(&next)?;
        let source = prev_emb.as_ref().unwrap_or(seed_embedding);
        let step = step_with_embeddings(provider, source, &target, &next, &mask, stats.as_ref(), opts)?;
        prev_emb = Some(target);
        if step.mask.is_empty() && opts.stop_on_empty {
            out.stopped = Some(k);
        }
        mask = step.mask.clone();
        stats = step.stats;
        out.steps
            .push((k, step.mask, step.soft_max, step.stats, t0.elapsed().as_secs_f64()));
        progress();
    }
    Ok(out)
}

pub fn propagate_volume<P: CorrespondenceProvider>(
    provider: &P,
    volume: &Volume,
    seed_mask: &MaskPlane,
    seed_index: usize,
    opts: &PropagateOptions,
) -> Result<PropagationResult> {
    propagate_volume_with_progress(provider, volume, seed_mask, seed_index, opts, &|_| {})
}

/// As [`propagate_volume`], calling `progress(done)` with the number of
/// finished slices (seed included) after each one.
pub fn propagate_volume_with_progress<P: CorrespondenceProvider>(
    provider: &P,
    volume: &Volume,
    seed_mask: &MaskPlane,
    seed_index: usize,
    opts: &PropagateOptions,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<PropagationResult> {
    opts.validate()?;
    let (h, w, d) = volume.dims();
    if seed_index >= d {
        return Err(Error::IndexOutOfRange {
            index: seed_index,
            len: d,
        });
    }
    if seed_mask.dims() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "seed mask {:?} does not match slice {:?}",
            seed_mask.dims(),
            (h, w)
        )));
    }
    if seed_mask.is_empty() {
        return Err(Error::Seed("seed mask is empty".into()));
    }
    let start = Instant::now();
    let done = std::sync::atomic::AtomicUsize::new(1);
    let tick = || {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        progress(n);
    };
    progress(1);

    let seed_slice = volume.extract_slice(seed_index)?;
    let seed_embedding = provider.embed(&seed_slice)?;
    let seed_stats = RegionStats::compute(seed_mask, &seed_slice, opts.dilation_radius);
    let seed_seconds = start.elapsed().as_secs_f64();

    let (fwd, bwd) = rayon::join(
        || {
            sweep(
                provider,
                volume,
                seed_index,
                &seed_embedding,
                seed_mask,
                seed_stats,
                true,
                opts,
                &tick,
            )
        },
        || {
            sweep(
                provider,
                volume,
                seed_index,
                &seed_embedding,
                seed_mask,
                seed_stats,
                false,
                opts,
                &tick,
            )
        },
    );
    let (fwd, bwd) = (fwd?, bwd?);

    let mut masks = MaskVolume::empty(h, w, d);
    let mut soft_max = vec![0.0; d];
    let mut stats = vec![None; d];
    let mut slice_seconds = vec![0.0; d];
    masks.set_plane(seed_index, seed_mask.clone())?;
    soft_max[seed_index] = 1.0;
    stats[seed_index] = seed_stats;
    slice_seconds[seed_index] = seed_seconds;
    for (k, m, s, st, secs) in fwd.steps.into_iter().chain(bwd.steps) {
        masks.set_plane(k, m)?;
        soft_max[k] = s;
        stats[k] = st;
        slice_seconds[k] = secs;
    }
    Ok(PropagationResult {
        masks,
        seed_index,
        soft_max,
        stats,
        stopped_forward: fwd.stopped,
        stopped_backward: bwd.stopped,
        slice_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
