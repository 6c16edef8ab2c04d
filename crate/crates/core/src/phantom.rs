//! Deterministic synthetic phantoms with exact ground truth.
//!
//! The structure of interest (SOI) is an elliptical cross-section whose
//! centre follows a smooth path across slices and whose radii are modulated
//! sinusoidally. Centres live on the half-pixel grid so the rasterized
//! support is point-symmetric about the centre; the raster centroid then
//! equals the centre exactly, and per-slice centre steps never exceed the
//! drift amplitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskPlane, MaskVolume, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorSpec {
    /// Intensity band of the distractor body.
    pub band: [f32; 2],
    /// Distractor semi-axis as a fraction of the SOI's mean semi-axis.
    pub size: f64,
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self {
            band: [0.2, 0.3],
            size: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub rng_seed: u64,
    /// Total ellipsoids: the SOI plus `ellipsoid_count - 1` clutter bodies.
    pub ellipsoid_count: usize,
    /// Upper bound on the SOI centre step between adjacent slices, in pixels.
    pub drift_amplitude: f64,
    /// Relative amplitude of the sinusoidal radius modulation.
    pub radius_modulation: f64,
    /// Base SOI semi-axis range as fractions of `min(height, width)`.
    pub soi_radius: [f64; 2],
    pub foreground_band: [f32; 2],
    pub background_band: [f32; 2],
    /// Require the foreground and background bands to be disjoint.
    pub separate_bands: bool,
    pub noise_sigma: f32,
    /// Shrink the SOI like a true ellipsoid so it vanishes at both ends.
    pub vanish_at_ends: bool,
    pub distractor: Option<DistractorSpec>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            depth: 16,
            rng_seed: 0,
            ellipsoid_count: 3,
            drift_amplitude: 1.0,
            radius_modulation: 0.15,
            soi_radius: [0.16, 0.24],
            foreground_band: [0.7, 1.0],
            background_band: [0.0, 0.3],
            separate_bands: true,
            noise_sigma: 0.02,
            vanish_at_ends: false,
            distractor: None,
        }
    }
}

fn band_ok(b: [f32; 2]) -> bool {
    b[0].is_finite() && b[1].is_finite() && 0.0 <= b[0] && b[0] <= b[1] && b[1] <= 1.0
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.depth < 2 {
            return Err(Error::Spec("dims must be at least 2x2x2".into()));
        }
        if self.ellipsoid_count == 0 {
            return Err(Error::Spec("ellipsoid_count must be at least 1".into()));
        }
        if !(self.drift_amplitude >= 0.0 && self.drift_amplitude.is_finite()) {
            return Err(Error::Spec("drift_amplitude must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.radius_modulation) {
            return Err(Error::Spec("radius_modulation must lie in [0, 1)".into()));
        }
        if !(self.soi_radius[0] > 0.0 && self.soi_radius[0] <= self.soi_radius[1]) {
            return Err(Error::Spec("soi_radius must be an increasing positive range".into()));
        }
        for (name, b) in [
            ("foreground_band", self.foreground_band),
            ("background_band", self.background_band),
        ] {
            if !band_ok(b) {
                return Err(Error::Spec(format!("{name} must be an ordered sub-range of [0,1]")));
            }
        }
        if self.separate_bands {
            let (f, b) = (self.foreground_band, self.background_band);
            if f[0] <= b[1] && b[0] <= f[1] {
                return Err(Error::Spec("foreground and background bands overlap".into()));
            }
        }
        if let Some(d) = &self.distractor {
            if !band_ok(d.band) || d.size <= 0.0 {
                return Err(Error::Spec("invalid distractor".into()));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    #[inline]
    fn contains(&self, y: f64, x: f64) -> bool {
        if self.a <= 0.0 || self.b <= 0.0 {
            return false;
        }
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Smooth texture in [0, 1] from a few random plane waves.
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<[f64; 5]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                let freq = rng.gen_range(0.15..0.5);
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                [
                    freq * dir.cos(),
                    freq * dir.sin(),
                    rng.gen_range(0.0..0.1),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.5..1.0),
                ]
            })
            .collect();
        Self { waves }
    }

    fn at(&self, y: f64, x: f64, z: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w[4]).sum();
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w[4] * (w[0] * x + w[1] * y + w[2] * z + w[3]).sin())
            .sum();
        0.5 + 0.5 * s / total
    }
}

fn round_half(v: f64) -> f64 {
    (v * 2.0).round() / 2.0
}

/// Per-slice centre offsets on the half-pixel grid, each step of norm at
/// most `amplitude`, following a slowly turning heading.
fn drift_path(depth: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let reach = (amplitude * 2.0).floor() as i64;
    let mut steps = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let (dx, dy) = (i as f64 / 2.0, j as f64 / 2.0);
            if (dx * dx + dy * dy).sqrt() <= amplitude + 1e-12 {
                steps.push((dx, dy));
            }
        }
    }
    let heading0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let turn = rng.gen_range(-0.3..0.3);
    let mut pos = (0.0, 0.0);
    let mut path = vec![pos];
    for z in 1..depth {
        let h = heading0 + turn * z as f64;
        let want = (amplitude * h.cos(), amplitude * h.sin());
        let best = steps
            .iter()
            .copied()
            .min_by(|p, q| {
                let dp = (p.0 - want.0).powi(2) + (p.1 - want.1).powi(2);
                let dq = (q.0 - want.0).powi(2) + (q.1 - want.1).powi(2);
                dp.total_cmp(&dq)
            })
            .unwrap_or((0.0, 0.0));
        pos = (pos.0 + best.0, pos.1 + best.1);
        path.push(pos);
    }
    path
}

/// Generates the volume and its ground-truth SOI masks.
pub fn synth_generate(spec: &PhantomSpec) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let (h, w, d) = (spec.height, spec.width, spec.depth);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let min_dim = h.min(w) as f64;
    let a0 = rng.gen_range(spec.soi_radius[0]..=spec.soi_radius[1]) * min_dim;
    let b0 = rng.gen_range(spec.soi_radius[0]..=spec.soi_radius[1]) * min_dim;
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let period = rng.gen_range(0.5..2.0) * d as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let path = drift_path(d, spec.drift_amplitude, &mut rng);

    let bound = a0.max(b0) * (1.0 + spec.radius_modulation);
    let (min_x, max_x) = path
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = path
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let cx0 = round_half((w as f64 - 1.0) / 2.0 - (min_x + max_x) / 2.0);
    let cy0 = round_half((h as f64 - 1.0) / 2.0 - (min_y + max_y) / 2.0);
    if cx0 + min_x - bound < 0.0
        || cx0 + max_x + bound > w as f64 - 1.0
        || cy0 + min_y - bound < 0.0
        || cy0 + max_y + bound > h as f64 - 1.0
    {
        return Err(Error::Spec(format!(
            "SOI (radius up to {bound:.1}px, drift extent {:.1}x{:.1}px) does not fit in {h}x{w}",
            max_x - min_x,
            max_y - min_y
        )));
    }

    let zc = (d as f64 - 1.0) / 2.0;
    let az = zc * 0.9;
    let soi_at = |z: usize| {
        let m = 1.0 + spec.radius_modulation * (std::f64::consts::TAU * z as f64 / period + phase).sin();
        let taper = if spec.vanish_at_ends {
            (1.0 - ((z as f64 - zc) / az).powi(2)).max(0.0).sqrt()
        } else {
            1.0
        };
        Ellipse {
            cx: cx0 + path[z].0,
            cy: cy0 + path[z].1,
            a: a0 * m * taper,
            b: b0 * m * taper,
            angle,
        }
    };

    // Clutter bodies sit in scene coordinates and move with the SOI.
    let mid = soi_at(d / 2);
    let mut clutter = Vec::new();
    for _ in 1..spec.ellipsoid_count {
        for _attempt in 0..32 {
            let r = rng.gen_range(0.08..0.16) * min_dim;
            let e = Ellipse {
                cx: rng.gen_range(0.0..w as f64),
                cy: rng.gen_range(0.0..h as f64),
                a: r,
                b: r * rng.gen_range(0.6..1.0),
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let gap = ((e.cx - mid.cx).powi(2) + (e.cy - mid.cy).powi(2)).sqrt();
            if gap > bound + r + 2.0 {
                let level = rng.gen_range(0.0..1.0);
                clutter.push((e, level));
                break;
            }
        }
    }
    let distractor = spec.distractor.as_ref().map(|ds| {
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        (ds.clone(), dir)
    });

    let tex_fg = Texture::random(&mut rng);
    let tex_bg = Texture::random(&mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0) as f64).expect("finite sigma");
    let lerp = |band: [f32; 2], t: f64| band[0] as f64 + (band[1] - band[0]) as f64 * t;

    let mut voxels = Vec::with_capacity(h * w * d);
    let mut planes = Vec::with_capacity(d);
    for (z, &(ox, oy)) in path.iter().enumerate().take(d) {
        let soi = soi_at(z);
        let zf = z as f64;
        let distractor_body = distractor.as_ref().map(|(ds, dir)| {
            let mean_r = (soi.a + soi.b) / 2.0;
            let r = mean_r.max(1.0) * ds.size;
            // touching: centre at the SOI rim plus the distractor radius, minus overlap
            let reach = ray_extent(&soi, *dir) + r - 1.0;
            (
                Ellipse {
                    cx: soi.cx + reach * dir.cos(),
                    cy: soi.cy + reach * dir.sin(),
                    a: r,
                    b: r,
                    angle: 0.0,
                },
                ds.band,
            )
        });
        let mut mask = MaskPlane::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                // scene coordinates follow the drift
                let (sy, sx) = (yf - oy, xf - ox);
                let mut v = lerp(spec.background_band, tex_bg.at(sy, sx, zf));
                for (e, level) in &clutter {
                    if e.contains(sy, sx) {
                        let t = 0.5 * level + 0.5 * tex_bg.at(sx, sy, zf);
                        v = lerp(spec.background_band, t);
                    }
                }
                if let Some((e, band)) = &distractor_body {
                    if e.contains(yf, xf) {
                        v = lerp(*band, tex_bg.at(sx, sy, zf));
                    }
                }
                if soi.contains(yf, xf) {
                    v = lerp(spec.foreground_band, tex_fg.at(sy, sx, zf));
                    mask.set(y, x, true);
                }
                if spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                voxels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        planes.push(mask);
    }
    Ok((Volume::new(h, w, d, voxels)?, MaskVolume::from_planes(planes)?))
}

/// Distance from the ellipse centre to its boundary along `dir`.
fn ray_extent(e: &Ellipse, dir: f64) -> f64 {
    let rel = dir - e.angle;
    let (s, c) = rel.sin_cos();
    1.0 / ((c / e.a).powi(2) + (s / e.b).powi(2)).sqrt()
}
