//! Correspondence network: a stride-1 residual convolution stack mapping a
//! per-pixel input profile to a per-pixel embedding. The same network
//! produces keys (source slice) and queries (target slice).
//!
//! Layout: `stem` conv + ReLU, then `residual_block_count` basic blocks
//! (`conv-ReLU-conv`, add the block input, ReLU), then a linear 1×1 `head`
//! to `embedding_channels`. All convolutions are zero-padded so spatial
//! dimensions are preserved.

mod adam;
mod checkpoint;
mod conv;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge_profile::{EdgeProfileMap, ProfileConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;
use conv::ConvScratch;

/// What the network consumes per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Softmax edge profile with d·s channels.
    #[default]
    EdgeProfile,
    /// Raw normalized intensity, one channel.
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_mode: InputMode,
    pub input_channels: usize,
    /// Edge-profile input is fed as `profile_gain · (d·s · g − 1)`, which is
    /// zero on flat regions. Ignored for intensity input.
    pub profile_gain: f64,
    pub base_filters: usize,
    pub residual_block_count: usize,
    pub kernel_size: usize,
    pub embedding_channels: usize,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_mode: InputMode::EdgeProfile,
            input_channels: 24,
            profile_gain: 2.0,
            base_filters: 16,
            residual_block_count: 4,
            kernel_size: 3,
            embedding_channels: 16,
            rng_seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Two residual blocks; what the tests and the small training runs use.
    pub fn desk() -> Self {
        Self {
            residual_block_count: 2,
            ..Self::default()
        }
    }

    /// Approximation of an 18-layer residual network kept at stride 1
    /// everywhere (8 basic blocks at constant width).
    pub fn resnet18_stride1() -> Self {
        Self {
            residual_block_count: 8,
            ..Self::default()
        }
    }

    /// Config for an intensity-input network (edge profile switched off).
    pub fn for_intensity(mut self) -> Self {
        self.input_mode = InputMode::Intensity;
        self.input_channels = 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0
            || self.base_filters == 0
            || self.residual_block_count == 0
            || self.embedding_channels == 0
            || self.kernel_size == 0
        {
            return Err(Error::Config("network counts must all be >= 1".into()));
        }
        if !(self.profile_gain > 0.0 && self.profile_gain.is_finite()) {
            return Err(Error::Config("profile_gain must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_mode == InputMode::Intensity && self.input_channels != 1 {
            return Err(Error::Config("intensity input has exactly one channel".into()));
        }
        Ok(())
    }

    /// Checks that profiles produced under `profile` fit this network.
    pub fn check_profile(&self, profile: &ProfileConfig) -> Result<()> {
        if self.input_mode == InputMode::EdgeProfile && profile.channels() != self.input_channels {
            return Err(Error::ConfigMismatch(format!(
                "network expects {} input channels but the edge profile has d·s = {}",
                self.input_channels,
                profile.channels()
            )));
        }
        Ok(())
    }

    /// (in, out, kernel) for every conv in declaration order.
    fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let f = self.base_filters;
        let k = self.kernel_size;
        let mut v = vec![(self.input_channels, f, k)];
        for _ in 0..self.residual_block_count {
            v.push((f, f, k));
            v.push((f, f, k));
        }
        v.push((f, self.embedding_channels, 1));
        v
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut v = vec!["stem".to_string()];
        for b in 0..self.residual_block_count {
            v.push(format!("block{b}.conv1"));
            v.push(format!("block{b}.conv2"));
        }
        v.push("head".into());
        v
    }

    /// Parameter tensor names and shapes in declaration order.
    pub fn tensor_table(&self) -> Vec<(String, Vec<usize>)> {
        self.layer_names()
            .into_iter()
            .zip(self.layer_shapes())
            .flat_map(|(name, (i, o, k))| {
                [
                    (format!("{name}.weight"), vec![o, i, k, k]),
                    (format!("{name}.bias"), vec![o]),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Per-pixel embedding, pixel-major (`values[p * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![T::zero(); height * width * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// One gradient tensor per parameter tensor, declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            tensors: net.params().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len()
            || self.tensors.iter().zip(&other.tensors).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("gradient sets differ in shape".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    layers: Vec<ConvLayer<T>>,
}

/// Activations recorded by [`Network::forward_with_tape`]; channel-planar.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    height: usize,
    width: usize,
    input: Vec<T>,
    /// Post-ReLU block inputs: `acts[0]` after the stem, `acts[b+1]` after block b.
    acts: Vec<Vec<T>>,
    /// Post-ReLU hidden activations inside each block.
    hidden: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Sign pattern of every ReLU output, for finite-difference checks that
    /// need to detect kink crossings.
    pub fn relu_pattern(&self) -> Vec<bool>
    where
        T: Real,
    {
        self.acts
            .iter()
            .chain(&self.hidden)
            .flat_map(|a| a.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn to_planar<T: Real>(values: &[T], hw: usize, channels: usize) -> Vec<T> {
    let mut out = vec![T::zero(); values.len()];
    for p in 0..hw {
        for c in 0..channels {
            out[c * hw + p] = values[p * channels + c];
        }
    }
    out
}

fn to_interleaved<T: Real>(planar: &[T], hw: usize, channels: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planar.len()];
    for c in 0..channels {
        for p in 0..hw {
            out[p * channels + c] = planar[c * hw + p];
        }
    }
    out
}

impl<T: Real> Network<T> {
    /// Kaiming-uniform fan-in init (`U(-√(6/fan_in), √(6/fan_in))`, variance
    /// `2/fan_in`) from a ChaCha stream seeded with `rng_seed`; zero biases.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| {
                let mut layer = ConvLayer::zeros(i, o, k);
                let bound = (6.0 / layer.fan_in() as f64).sqrt();
                for w in &mut layer.weight {
                    *w = T::of(rng.gen_range(-bound..bound));
                }
                layer
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// All-zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| ConvLayer::zeros(i, o, k))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Vec::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    weight: l.weight.iter().map(|w| U::of(w.to_f64().unwrap())).collect(),
                    bias: l.bias.iter().map(|w| U::of(w.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    pub(crate) fn from_parts(config: NetworkConfig, tensors: Vec<Vec<T>>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let slots: Vec<&mut Vec<T>> = net.params_mut().collect();
        if slots.len() != tensors.len() {
            return Err(Error::ShapeMismatch("tensor count differs from config".into()));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.len() != t.len() {
                return Err(Error::ShapeMismatch("tensor size differs from config".into()));
            }
            *slot = t;
        }
        Ok(net)
    }

    fn check_input(&self, profile: &EdgeProfileMap<T>) -> Result<()> {
        if profile.channels != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels, profile.channels
            )));
        }
        Ok(())
    }

    fn run(&self, profile: &EdgeProfileMap<T>, mut tape: Option<&mut Tape<T>>) -> Result<FeatureMap<T>> {
        self.check_input(profile)?;
        let (h, w) = (profile.height, profile.width);
        let hw = h * w;
        let mut scratch = ConvScratch::default();
        let input = to_planar(&profile.values, hw, profile.channels);

        let mut act = conv::forward(&self.layers[0], &input, h, w, &mut scratch);
        relu_in_place(&mut act);
        if let Some(t) = tape.as_deref_mut() {
            t.input = input;
            t.acts.push(act.clone());
        }
        for b in 0..self.config.residual_block_count {
            let mut hidden = conv::forward(&self.layers[1 + 2 * b], &act, h, w, &mut scratch);
            relu_in_place(&mut hidden);
            let mut out = conv::forward(&self.layers[2 + 2 * b], &hidden, h, w, &mut scratch);
            for (o, a) in out.iter_mut().zip(&act) {
                *o += *a;
            }
            relu_in_place(&mut out);
            if let Some(t) = tape.as_deref_mut() {
                t.hidden.push(hidden);
                t.acts.push(out.clone());
            }
            act = out;
        }
        let head = self.layers.last().expect("head layer");
        let emb = conv::forward(head, &act, h, w, &mut scratch);
        Ok(FeatureMap {
            height: h,
            width: w,
            channels: head.out_channels,
            values: to_interleaved(&emb, hw, head.out_channels),
        })
    }

    pub fn forward(&self, profile: &EdgeProfileMap<T>) -> Result<FeatureMap<T>> {
        self.run(profile, None)
    }

    pub fn forward_with_tape(&self, profile: &EdgeProfileMap<T>) -> Result<(FeatureMap<T>, Tape<T>)> {
        let mut tape = Tape {
            height: profile.height,
            width: profile.width,
            input: Vec::new(),
            acts: Vec::new(),
            hidden: Vec::new(),
        };
        let out = self.run(profile, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Reverse-mode gradients of `⟨upstream, forward(input)⟩` w.r.t. every
    /// parameter, using the activations in `tape`.
    pub fn backward(&self, tape: &Tape<T>, upstream: &FeatureMap<T>) -> Result<GradientSet<T>> {
        let (h, w) = tape.dims();
        let blocks = self.config.residual_block_count;
        if tape.acts.len() != blocks + 1 || tape.hidden.len() != blocks {
            return Err(Error::ShapeMismatch("tape does not match network depth".into()));
        }
        if upstream.dims() != (h, w, self.config.embedding_channels) {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dims(),
                (h, w, self.config.embedding_channels)
            )));
        }
        let hw = h * w;
        let mut grads = GradientSet::zeros_like(self);
        let mut scratch = ConvScratch::default();
        let n = self.layers.len();

        let g_out = to_planar(&upstream.values, hw, upstream.channels);
        let (gw, gb) = split_pair(&mut grads.tensors, n - 1);
        let mut g_act = conv::backward(
            &self.layers[n - 1],
            &tape.acts[blocks],
            &g_out,
            h,
            w,
            gw,
            gb,
            true,
            &mut scratch,
        )
        .expect("input gradient requested");

        for b in (0..blocks).rev() {
            // through the block's output ReLU
            for (g, a) in g_act.iter_mut().zip(&tape.acts[b + 1]) {
                if *a <= T::zero() {
                    *g = T::zero();
                }
            }
            let (gw, gb) = split_pair(&mut grads.tensors, 2 + 2 * b);
            let mut g_hidden = conv::backward(
                &self.layers[2 + 2 * b],
                &tape.hidden[b],
                &g_act,
                h,
                w,
                gw,
                gb,
                true,
                &mut scratch,
            )
            .expect("input gradient requested");
            for (g, a) in g_hidden.iter_mut().zip(&tape.hidden[b]) {
                if *a <= T::zero() {
                    *g = T::zero();
                }
            }
            let (gw, gb) = split_pair(&mut grads.tensors, 1 + 2 * b);
            let g_in = conv::backward(
                &self.layers[1 + 2 * b],
                &tape.acts[b],
                &g_hidden,
                h,
                w,
                gw,
                gb,
                true,
                &mut scratch,
            )
            .expect("input gradient requested");
            // skip connection
            for (g, x) in g_act.iter_mut().zip(g_in) {
                *g += x;
            }
        }
        for (g, a) in g_act.iter_mut().zip(&tape.acts[0]) {
            if *a <= T::zero() {
                *g = T::zero();
            }
        }
        let (gw, gb) = split_pair(&mut grads.tensors, 0);
        conv::backward(&self.layers[0], &tape.input, &g_act, h, w, gw, gb, false, &mut scratch);
        Ok(grads)
    }
}

/// Mutable (weight, bias) gradient slots of layer `i`.
fn split_pair<T>(tensors: &mut [Vec<T>], layer: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = tensors[2 * layer..2 * layer + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
