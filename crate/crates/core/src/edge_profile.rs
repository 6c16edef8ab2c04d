//! Edge-profile bottleneck: each pixel's intensity is replaced by a softmax
//! over signed directional derivatives taken at several scales, so the
//! network sees edge structure rather than raw intensity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::SlicePlane;

/// Eight compass steps ordered counter-clockwise (in x-right, y-down image
/// coordinates a quarter turn maps direction `j` to `j + 2`).
pub const COMPASS_DIRECTIONS: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Unit steps as (dx, dy).
    pub directions: Vec<(i32, i32)>,
    /// Pixel offset per scale, strictly increasing.
    pub offsets: Vec<usize>,
    pub temperature: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            directions: COMPASS_DIRECTIONS.to_vec(),
            offsets: vec![1, 2, 4],
            temperature: 1.0,
        }
    }
}

impl ProfileConfig {
    pub fn direction_count(&self) -> usize {
        self.directions.len()
    }

    pub fn scale_count(&self) -> usize {
        self.offsets.len()
    }

    /// d·s
    pub fn channels(&self) -> usize {
        self.directions.len() * self.offsets.len()
    }

    /// Channel index of (scale, direction).
    pub fn channel(&self, scale: usize, direction: usize) -> usize {
        scale * self.directions.len() + direction
    }

    pub fn max_offset(&self) -> usize {
        self.offsets.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.len() < 2 {
            return Err(Error::Config("edge profile needs at least 2 directions".into()));
        }
        if self.offsets.is_empty() {
            return Err(Error::Config("edge profile needs at least 1 scale".into()));
        }
        if self.offsets[0] == 0 || self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "offsets must be strictly increasing positive integers".into(),
            ));
        }
        if self.directions.iter().any(|&(dx, dy)| dx == 0 && dy == 0) {
            return Err(Error::Config("zero direction step".into()));
        }
        for (i, a) in self.directions.iter().enumerate() {
            if self.directions[i + 1..].contains(a) {
                return Err(Error::Config(format!("duplicate direction {a:?}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pixel simplex over d·s channels, pixel-major (`values[p * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfileMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T: Real> EdgeProfileMap<T> {
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let p = y * self.width + x;
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    /// Single-channel map holding raw intensities, used when the bottleneck
    /// is switched off.
    pub fn from_intensity(slice: &SlicePlane) -> Self {
        Self {
            height: slice.height,
            width: slice.width,
            channels: 1,
            values: slice.values.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }
}

pub fn compute_edge_profile<T: Real>(slice: &SlicePlane, cfg: &ProfileConfig) -> Result<EdgeProfileMap<T>> {
    cfg.validate()?;
    let need = cfg.max_offset() + 1;
    let (h, w) = slice.dims();
    if h < need || w < need {
        return Err(Error::Dimension(format!(
            "slice {h}x{w} is smaller than {need}x{need} required by offset {}",
            cfg.max_offset()
        )));
    }
    let ch = cfg.channels();
    let inv_t = 1.0 / cfg.temperature;
    // (dx, dy, 1/(k·|u|)) per channel
    let taps: Vec<(isize, isize, f64)> = cfg
        .offsets
        .iter()
        .flat_map(|&k| {
            cfg.directions.iter().map(move |&(dx, dy)| {
                let norm = ((dx * dx + dy * dy) as f64).sqrt() * k as f64;
                (dx as isize * k as isize, dy as isize * k as isize, 1.0 / norm)
            })
        })
        .collect();
    let mut values = vec![T::zero(); h * w * ch];
    let mut logits = vec![0.0f64; ch];
    for y in 0..h {
        for x in 0..w {
            let centre = slice.at(y, x) as f64;
            let mut top = f64::NEG_INFINITY;
            for (l, &(dx, dy, scale)) in logits.iter_mut().zip(&taps) {
                let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                *l = (slice.at(ny, nx) as f64 - centre) * scale * inv_t;
                top = top.max(*l);
            }
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - top).exp();
                total += *l;
            }
            let out = &mut values[(y * w + x) * ch..(y * w + x + 1) * ch];
            for (o, l) in out.iter_mut().zip(&logits) {
                *o = T::of(l / total);
            }
        }
    }
    Ok(EdgeProfileMap {
        height: h,
        width: w,
        channels: ch,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_slice(h: usize, w: usize, seed: u64) -> SlicePlane {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SlicePlane::new(h, w, (0..h * w).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn constant_slice_is_uniform() {
        let cfg = ProfileConfig::default();
        let p: EdgeProfileMap<f64> = compute_edge_profile(&SlicePlane::filled(8, 8, 0.37), &cfg).unwrap();
        assert_eq!(p.channels, 24);
        assert!(p.values.iter().all(|&v| (v - 1.0 / 24.0).abs() < 1e-12));
    }

    #[test]
    fn vertical_step_edge_prefers_plus_x() {
        let cfg = ProfileConfig::default();
        let s = SlicePlane::new(8, 8, (0..64).map(|i| if i % 8 >= 4 { 1.0 } else { 0.0 }).collect()).unwrap();
        let p: EdgeProfileMap<f64> = compute_edge_profile(&s, &cfg).unwrap();
        let plus_x = cfg.channel(0, 0);
        let plus_y = cfg.channel(0, 6);
        let minus_y = cfg.channel(0, 2);
        for y in 0..8 {
            // column 3 is the dark side of the edge; +x looks across it
            let px = p.pixel(y, 3);
            assert!(px[plus_x] > px[plus_y] && px[plus_x] > px[minus_y]);
            // hand-computed: logits are 1 for +x (k=1), 1/√2 for the two
            // +x diagonals at k=1, 1/2, 1/(2√2) at k=2, 1/4, 1/(4√2) at k=4,
            // and 0 elsewhere
            let r2 = std::f64::consts::SQRT_2;
            let pos = [
                1.0,
                1.0 / r2,
                1.0 / r2,
                0.5,
                0.5 / r2,
                0.5 / r2,
                0.25,
                0.25 / r2,
                0.25 / r2,
            ];
            let z: f64 = pos.iter().map(|l: &f64| l.exp()).sum::<f64>() + 15.0;
            assert!((px[plus_x] - 1.0f64.exp() / z).abs() < 1e-12);
            assert!((px[plus_y] - 1.0 / z).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_slice_rejected() {
        let cfg = ProfileConfig::default();
        let r = compute_edge_profile::<f32>(&SlicePlane::filled(4, 8, 0.0), &cfg);
        assert!(matches!(r, Err(Error::Dimension(_))));
        assert!(compute_edge_profile::<f32>(&SlicePlane::filled(5, 5, 0.0), &cfg).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProfileConfig::default();
        cfg.offsets = vec![2, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = ProfileConfig::default();
        cfg.directions = vec![(1, 0), (1, 0)];
        assert!(cfg.validate().is_err());
        let mut cfg = ProfileConfig::default();
        cfg.directions = vec![(1, 0)];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scaling_changes_profile() {
        let cfg = ProfileConfig::default();
        let s = SlicePlane::new(8, 8, (0..64).map(|i| if i % 8 >= 4 { 0.5 } else { 0.0 }).collect()).unwrap();
        let scaled = SlicePlane::new(8, 8, s.values.iter().map(|v| v * 2.0).collect()).unwrap();
        let a: EdgeProfileMap<f64> = compute_edge_profile(&s, &cfg).unwrap();
        let b: EdgeProfileMap<f64> = compute_edge_profile(&scaled, &cfg).unwrap();
        assert!(a.pixel(0, 3)[0] < b.pixel(0, 3)[0]);
    }

    fn rot90(s: &SlicePlane) -> SlicePlane {
        // quarter turn: (x, y) -> (y, n-1-x) for a square image
        let n = s.height;
        let mut out = SlicePlane::filled(n, n, 0.0);
        for y in 0..n {
            for x in 0..n {
                out.values[(n - 1 - x) * n + y] = s.at(y, x);
            }
        }
        out
    }

    #[test]
    fn quarter_turn_equivariance() {
        let cfg = ProfileConfig::default();
        let n = 9;
        for seed in 0..5 {
            let s = random_slice(n, n, seed);
            let r = rot90(&s);
            let ps: EdgeProfileMap<f64> = compute_edge_profile(&s, &cfg).unwrap();
            let pr: EdgeProfileMap<f64> = compute_edge_profile(&r, &cfg).unwrap();
            for y in 0..n {
                for x in 0..n {
                    let a = ps.pixel(y, x);
                    let b = pr.pixel(n - 1 - x, y);
                    for sc in 0..3 {
                        for dir in 0..8 {
                            let ca = cfg.channel(sc, dir);
                            let cb = cfg.channel(sc, (dir + 2) % 8);
                            assert!((a[ca] - b[cb]).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn simplex_and_shift_invariance(seed in 0u64..1000, shift in -5.0f32..5.0) {
            let cfg = ProfileConfig::default();
            let s = random_slice(7, 9, seed);
            let shifted = SlicePlane::new(7, 9, s.values.iter().map(|v| v + shift).collect()).unwrap();
            let a: EdgeProfileMap<f32> = compute_edge_profile(&s, &cfg).unwrap();
            let b: EdgeProfileMap<f32> = compute_edge_profile(&shifted, &cfg).unwrap();
            for px in a.values.chunks(24) {
                prop_assert!(px.iter().all(|&v| v >= 0.0));
                prop_assert!((px.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
