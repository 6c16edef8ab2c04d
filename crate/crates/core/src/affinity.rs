//! Local-window attention between a key map (source slice) and a query map
//! (target slice), and the weight-and-copy that transports a scalar field
//! through it.
//!
//! Row `u` of the affinity holds a softmax over `⟨q(u), k(v)⟩` for `v` in the
//! `(2r+1)²` window centred on `u`'s own coordinate in the key map. Window
//! entries that fall outside the image are excluded from the softmax and
//! stored as exact zeros. Storage is banded: `H·W × δ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FeatureMap;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub radius: usize,
}

impl Default for WindowSpec {
    /// 15×15 window.
    fn default() -> Self {
        Self { radius: 7 }
    }
}

impl WindowSpec {
    pub fn new(radius: usize) -> Self {
        Self { radius }
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// δ, entries per row.
    pub fn size(&self) -> usize {
        self.side() * self.side()
    }

    /// (dy, dx) of window entry `j`.
    #[inline]
    pub fn offset(&self, j: usize) -> (isize, isize) {
        let s = self.side();
        let r = self.radius as isize;
        ((j / s) as isize - r, (j % s) as isize - r)
    }

    /// Window index of the centre entry.
    pub fn centre(&self) -> usize {
        self.size() / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    pub height: usize,
    pub width: usize,
    pub window: WindowSpec,
    /// `weights[u * δ + j]`
    pub weights: Vec<T>,
    /// In-bounds flag per entry, same layout as `weights`.
    pub valid: Vec<bool>,
}

impl<T: Real> AffinityMatrix<T> {
    pub fn row(&self, u: usize) -> &[T] {
        let d = self.window.size();
        &self.weights[u * d..(u + 1) * d]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Builds a matrix from per-row weights given as a function of
    /// (row pixel, window entry); invalid entries are forced to zero.
    /// Used for stub correspondence providers.
    pub fn from_fn(
        height: usize,
        width: usize,
        window: WindowSpec,
        mut f: impl FnMut(usize, usize, &[bool]) -> Vec<T>,
    ) -> Self {
        let d = window.size();
        let mut weights = Vec::with_capacity(height * width * d);
        let mut valid = Vec::with_capacity(height * width * d);
        for y in 0..height {
            for x in 0..width {
                let row_valid: Vec<bool> = (0..d)
                    .map(|j| in_bounds(y, x, window.offset(j), height, width).is_some())
                    .collect();
                let row = f(y * width + x, d, &row_valid);
                weights.extend(
                    row.into_iter()
                        .zip(&row_valid)
                        .map(|(w, &ok)| if ok { w } else { T::zero() }),
                );
                valid.extend(row_valid);
            }
        }
        Self {
            height,
            width,
            window,
            weights,
            valid,
        }
    }

    /// Each row selects its own centre pixel.
    pub fn identity(height: usize, width: usize, window: WindowSpec) -> Self {
        let c = window.centre();
        Self::from_fn(height, width, window, |_, d, _| {
            (0..d).map(|j| if j == c { T::one() } else { T::zero() }).collect()
        })
    }

    /// Equal weight on every in-bounds window entry.
    pub fn uniform(height: usize, width: usize, window: WindowSpec) -> Self {
        Self::from_fn(height, width, window, |_, _, valid| {
            let n = valid.iter().filter(|v| **v).count();
            valid
                .iter()
                .map(|&v| if v { T::one() / T::of(n as f64) } else { T::zero() })
                .collect()
        })
    }
}

#[inline]
fn in_bounds(y: usize, x: usize, (dy, dx): (isize, isize), h: usize, w: usize) -> Option<usize> {
    let sy = y as isize + dy;
    let sx = x as isize + dx;
    (sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize).then(|| sy as usize * w + sx as usize)
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // independent lanes so the loop vectorizes
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

pub fn compute_affinity<T: Real>(
    key: &FeatureMap<T>,
    query: &FeatureMap<T>,
    win: WindowSpec,
) -> Result<AffinityMatrix<T>> {
    if key.dims() != query.dims() {
        return Err(Error::ShapeMismatch(format!(
            "key {:?} and query {:?} differ",
            key.dims(),
            query.dims()
        )));
    }
    let (h, w, c) = key.dims();
    let d = win.size();
    let r = win.radius as isize;
    let side = win.side();
    let mut weights = vec![T::zero(); h * w * d];
    let mut valid = vec![false; h * w * d];

    // one image row of queries per task
    weights
        .par_chunks_mut(w * d)
        .zip(valid.par_chunks_mut(w * d))
        .enumerate()
        .for_each(|(y, (wrow, vrow))| {
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = (y as isize + r).min(h as isize - 1) as usize;
            for x in 0..w {
                let q = &query.values[(y * w + x) * c..][..c];
                let out = &mut wrow[x * d..(x + 1) * d];
                let ok = &mut vrow[x * d..(x + 1) * d];
                let x0 = (x as isize - r).max(0) as usize;
                let x1 = (x as isize + r).min(w as isize - 1) as usize;
                let mut top = T::neg_infinity();
                for ky in y0..=y1 {
                    let jy = (ky as isize - y as isize + r) as usize * side;
                    let krow = &key.values[ky * w * c..(ky + 1) * w * c];
                    for kx in x0..=x1 {
                        let j = jy + (kx as isize - x as isize + r) as usize;
                        let logit = dot(q, &krow[kx * c..(kx + 1) * c]);
                        out[j] = logit;
                        ok[j] = true;
                        if logit > top {
                            top = logit;
                        }
                    }
                }
                let mut total = T::zero();
                for (o, &v) in out.iter_mut().zip(ok.iter()) {
                    if v {
                        *o = (*o - top).exp();
                        total += *o;
                    }
                }
                let inv = T::one() / total;
                for (o, &v) in out.iter_mut().zip(ok.iter()) {
                    if v {
                        *o *= inv;
                    }
                }
            }
        });
    Ok(AffinityMatrix {
        height: h,
        width: w,
        window: win,
        weights,
        valid,
    })
}

/// `out(u) = Σ_v A(u, v) · field(v)`.
pub fn apply_affinity<T: Real>(aff: &AffinityMatrix<T>, field: &[T]) -> Result<Vec<T>> {
    let (h, w) = aff.dims();
    if field.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "field has {} values, affinity is {h}x{w}",
            field.len()
        )));
    }
    let d = aff.window.size();
    let win = aff.window;
    let mut out = vec![T::zero(); h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, orow)| {
        for (x, o) in orow.iter_mut().enumerate() {
            let u = y * w + x;
            let row = &aff.weights[u * d..(u + 1) * d];
            let mut s = T::zero();
            for (j, &a) in row.iter().enumerate() {
                if aff.valid[u * d + j] {
                    let v = in_bounds(y, x, win.offset(j), h, w).expect("valid entry in bounds");
                    s += a * field[v];
                }
            }
            *o = s;
        }
    });
    Ok(out)
}

/// Everything the backward pass of attention + weight-and-copy needs.
#[derive(Debug, Clone)]
pub struct AttentionTape<T> {
    pub key: FeatureMap<T>,
    pub query: FeatureMap<T>,
    pub affinity: AffinityMatrix<T>,
    pub field: Vec<T>,
    pub output: Vec<T>,
}

/// Affinity followed by weight-and-copy, keeping a tape for the backward pass.
pub fn attend<T: Real>(
    key: &FeatureMap<T>,
    query: &FeatureMap<T>,
    win: WindowSpec,
    field: &[T],
) -> Result<AttentionTape<T>> {
    let affinity = compute_affinity(key, query, win)?;
    let output = apply_affinity(&affinity, field)?;
    Ok(AttentionTape {
        key: key.clone(),
        query: query.clone(),
        affinity,
        field: field.to_vec(),
        output,
    })
}

/// Gradients of `⟨upstream, output⟩` with respect to the key and query maps.
pub fn affinity_backward<T: Real>(tape: &AttentionTape<T>, upstream: &[T]) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let (h, w, c) = tape.key.dims();
    if upstream.len() != h * w || tape.output.len() != h * w || tape.affinity.dims() != (h, w) {
        return Err(Error::ShapeMismatch(
            "upstream gradient does not match the attention tape".into(),
        ));
    }
    let win = tape.affinity.window;
    let d = win.size();
    let mut g_key = FeatureMap::zeros(h, w, c);
    let mut g_query = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let u = y * w + x;
            let g = upstream[u];
            if g.is_zero() {
                continue;
            }
            let out_u = tape.output[u];
            let q = tape.query.pixel(u);
            for j in 0..d {
                if !tape.affinity.valid[u * d + j] {
                    continue;
                }
                let v = in_bounds(y, x, win.offset(j), h, w).expect("valid entry in bounds");
                // softmax Jacobian: A·g·(field(v) - out(u))
                let dl = tape.affinity.weights[u * d + j] * g * (tape.field[v] - out_u);
                if dl.is_zero() {
                    continue;
                }
                let k = &tape.key.values[v * c..(v + 1) * c];
                for (gq, kv) in g_query.values[u * c..(u + 1) * c].iter_mut().zip(k) {
                    *gq += dl * *kv;
                }
                for (gk, qv) in g_key.values[v * c..(v + 1) * c].iter_mut().zip(q) {
                    *gk += dl * *qv;
                }
            }
        }
    }
    Ok((g_key, g_query))
}
