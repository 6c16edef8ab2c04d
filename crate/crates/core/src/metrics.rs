//! Overlap metrics.

use crate::error::{Error, Result};
use crate::volume::{MaskPlane, MaskVolume};

/// Anything that can be viewed as a flat binary voxel buffer with a shape.
pub trait BinaryMask {
    fn shape(&self) -> (usize, usize, usize);
    fn for_each_plane<'a>(&'a self, f: &mut dyn FnMut(&'a [u8]));
}

impl BinaryMask for MaskPlane {
    fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }

    fn for_each_plane<'a>(&'a self, f: &mut dyn FnMut(&'a [u8])) {
        f(self.bits())
    }
}

impl BinaryMask for MaskVolume {
    fn shape(&self) -> (usize, usize, usize) {
        self.dims()
    }

    fn for_each_plane<'a>(&'a self, f: &mut dyn FnMut(&'a [u8])) {
        for p in self.planes() {
            f(p.bits())
        }
    }
}

/// Dice overlap on a 0-100 scale. Two empty masks agree perfectly (100).
pub fn dice<M: BinaryMask>(a: &M, b: &M) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dice of {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut pa = Vec::new();
    a.for_each_plane(&mut |p| pa.push(p));
    let mut pb = Vec::new();
    b.for_each_plane(&mut |p| pb.push(p));
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (x, y) in pa.iter().zip(&pb) {
        for (&u, &v) in x.iter().zip(y.iter()) {
            let (u, v) = (u != 0, v != 0);
            inter += (u && v) as u64;
            na += u as u64;
            nb += v as u64;
        }
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(200.0 * inter as f64 / (na + nb) as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
