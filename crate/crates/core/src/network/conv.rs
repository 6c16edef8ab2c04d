//! Same-padded stride-1 2D convolution via im2col + GEMM on channel-planar
//! buffers (`x[c * H·W + y * W + x]`).

use super::ConvLayer;
use crate::scalar::Real;

#[derive(Default)]
pub(super) struct ConvScratch<T> {
    col: Vec<T>,
    out: Vec<T>,
}

/// Target element count of one im2col strip.
const STRIP_ELEMS: usize = 1 << 17;

/// `col[(ci·k·k + ky·k + kx) · HW + p] = x[ci][p + (ky - pad, kx - pad)]`, zero outside.
fn im2col<T: Real>(input: &[T], channels: usize, h: usize, w: usize, k: usize, col: &mut Vec<T>) {
    im2col_rows(input, channels, h, w, k, 0..h, col)
}

/// [`im2col`] restricted to output rows `rows`; columns index pixels of the strip.
fn im2col_rows<T: Real>(
    input: &[T],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    rows: std::ops::Range<usize>,
    col: &mut Vec<T>,
) {
    let hw = h * w;
    let sw = rows.len() * w;
    let pad = (k / 2) as isize;
    col.clear();
    col.resize(channels * k * k * sw, T::zero());
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut col[((c * k + ky) * k + kx) * sw..][..sw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for (i, y) in rows.clone().enumerate() {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[i * w..][..w];
                    let sx0 = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&src[sx0..sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`].
fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let sx0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + sx0..][..x_hi - x_lo];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

pub(super) fn forward<T: Real>(
    layer: &ConvLayer<T>,
    input: &[T],
    h: usize,
    w: usize,
    scratch: &mut ConvScratch<T>,
) -> Vec<T> {
    let hw = h * w;
    let kdim = layer.fan_in();
    let co = layer.out_channels;
    let mut out = Vec::with_capacity(co * hw);
    for &b in &layer.bias {
        out.extend(std::iter::repeat_n(b, hw));
    }
    if layer.kernel == 1 {
        T::gemm(co, kdim, hw, &layer.weight, false, input, false, T::one(), &mut out);
        return out;
    }
    // strips of rows keep the column buffer cache-sized
    let strip = (STRIP_ELEMS / (kdim * w)).clamp(1, h);
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + strip).min(h);
        let sw = (y1 - y0) * w;
        im2col_rows(input, layer.in_channels, h, w, layer.kernel, y0..y1, &mut scratch.col);
        scratch.out.clear();
        scratch.out.resize(co * sw, T::zero());
        T::gemm(
            co,
            kdim,
            sw,
            &layer.weight,
            false,
            &scratch.col,
            false,
            T::zero(),
            &mut scratch.out,
        );
        for (o, part) in out.chunks_mut(hw).zip(scratch.out.chunks(sw)) {
            for (d, s) in o[y0 * w..y1 * w].iter_mut().zip(part) {
                *d += *s;
            }
        }
        y0 = y1;
    }
    out
}

/// Accumulates weight/bias gradients and optionally returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    layer: &ConvLayer<T>,
    input: &[T],
    g_out: &[T],
    h: usize,
    w: usize,
    g_weight: &mut [T],
    g_bias: &mut [T],
    want_input: bool,
    scratch: &mut ConvScratch<T>,
) -> Option<Vec<T>> {
    let hw = h * w;
    let kdim = layer.fan_in();
    for (gb, row) in g_bias.iter_mut().zip(g_out.chunks(hw)) {
        *gb += row.iter().copied().sum::<T>();
    }
    let col: &[T] = if layer.kernel == 1 {
        input
    } else {
        im2col(input, layer.in_channels, h, w, layer.kernel, &mut scratch.col);
        &scratch.col
    };
    // dW (co × K) += gOut (co × HW) · colᵀ
    T::gemm(
        layer.out_channels,
        hw,
        kdim,
        g_out,
        false,
        col,
        true,
        T::one(),
        g_weight,
    );
    if !want_input {
        return None;
    }
    // dcol (K × HW) = Wᵀ · gOut
    let mut dcol = vec![T::zero(); kdim * hw];
    T::gemm(
        kdim,
        layer.out_channels,
        hw,
        &layer.weight,
        true,
        g_out,
        false,
        T::zero(),
        &mut dcol,
    );
    if layer.kernel == 1 {
        return Some(dcol);
    }
    let mut g_in = vec![T::zero(); layer.in_channels * hw];
    col2im(&dcol, layer.in_channels, h, w, layer.kernel, &mut g_in);
    Some(g_in)
}
