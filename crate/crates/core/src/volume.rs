//! Volume, slice and mask containers.
//!
//! Voxels are stored x-fastest, then y, then z, so slice `k` is the
//! contiguous run `[k·H·W, (k+1)·H·W)` in row-major (y, x) order.
//! Propagation always runs along the depth (z) axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    height: usize,
    width: usize,
    depth: usize,
    voxels: Vec<f32>,
    /// Voxel spacing in millimetres (x, y, z). Metadata only.
    pub spacing: [f32; 3],
    /// Raw intensity range the voxels were normalized from.
    pub raw_range: (f32, f32),
}

impl Volume {
    /// Builds a volume from voxels already in `[0, 1]`.
    pub fn new(height: usize, width: usize, depth: usize, voxels: Vec<f32>) -> Result<Self> {
        if height < 2 || width < 2 || depth < 2 {
            return Err(Error::Dimension(format!(
                "volume dims must be at least 2x2x2, got {height}x{width}x{depth}"
            )));
        }
        if voxels.len() != height * width * depth {
            return Err(Error::ShapeMismatch(format!(
                "expected {} voxels, got {}",
                height * width * depth,
                voxels.len()
            )));
        }
        if let Some((i, v)) = voxels
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Data(format!("voxel {i} = {v} is not a finite value in [0,1]")));
        }
        Ok(Self {
            height,
            width,
            depth,
            voxels,
            spacing: [1.0; 3],
            raw_range: (0.0, 1.0),
        })
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn slice_values(&self, index: usize) -> Result<&[f32]> {
        if index >= self.depth {
            return Err(Error::IndexOutOfRange { index, len: self.depth });
        }
        let n = self.slice_len();
        Ok(&self.voxels[index * n..(index + 1) * n])
    }

    /// Copies out the plane at depth `index`.
    pub fn extract_slice(&self, index: usize) -> Result<SlicePlane> {
        let values = self.slice_values(index)?.to_vec();
        Ok(SlicePlane {
            height: self.height,
            width: self.width,
            values,
        })
    }

    pub fn slices(&self) -> impl Iterator<Item = SlicePlane> + '_ {
        self.voxels.chunks(self.slice_len()).map(|c| SlicePlane {
            height: self.height,
            width: self.width,
            values: c.to_vec(),
        })
    }

    /// Rebuilds a volume from a stack of equally sized planes.
    pub fn from_slices(planes: &[SlicePlane]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::Dimension("no slices".into()))?;
        let mut voxels = Vec::with_capacity(first.len() * planes.len());
        for p in planes {
            if p.dims() != first.dims() {
                return Err(Error::ShapeMismatch("slices differ in size".into()));
            }
            voxels.extend_from_slice(&p.values);
        }
        Self::new(first.height, first.width, planes.len(), voxels)
    }
}

/// Linear min-max map of raw intensities onto `[0, 1]`.
pub fn normalize_intensity(height: usize, width: usize, depth: usize, raw: &[f32]) -> Result<Volume> {
    if raw.len() != height * width * depth {
        return Err(Error::ShapeMismatch(format!(
            "expected {} raw values, got {}",
            height * width * depth,
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("raw value {i} is not finite")));
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    if hi <= lo {
        return Err(Error::DegenerateRange(lo));
    }
    let span = hi - lo;
    let voxels = raw
        .iter()
        .map(|&v| (((v as f64 - lo) / span) as f32).clamp(0.0, 1.0))
        .collect();
    let mut vol = Volume::new(height, width, depth, voxels)?;
    vol.raw_range = (lo as f32, hi as f32);
    Ok(vol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlane {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SlicePlane {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("slice values must be finite".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling with corner-aligned sample positions.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<SlicePlane> {
        if out_h < 2 || out_w < 2 {
            return Err(Error::Dimension(format!(
                "resize target must be at least 2x2, got {out_h}x{out_w}"
            )));
        }
        if (out_h, out_w) == self.dims() {
            return Ok(self.clone());
        }
        let scale = |n_in: usize, n_out: usize| {
            if n_in > 1 {
                (n_in - 1) as f64 / (n_out - 1) as f64
            } else {
                0.0
            }
        };
        let sy = scale(self.height, out_h);
        let sx = scale(self.width, out_w);
        let mut values = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = (fy.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = (fx.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.at(y0, x0) as f64 * (1.0 - tx) + self.at(y0, x1) as f64 * tx;
                let bot = self.at(y1, x0) as f64 * (1.0 - tx) + self.at(y1, x1) as f64 * tx;
                values.push((top * (1.0 - ty) + bot * ty) as f32);
            }
        }
        Ok(SlicePlane {
            height: out_h,
            width: out_w,
            values,
        })
    }
}

/// Binary mask for one slice, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskPlane {
    pub height: usize,
    pub width: usize,
    bits: Vec<u8>,
}

impl MaskPlane {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                bits.len()
            )));
        }
        if let Some(v) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Data(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self { height, width, bits }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Mask as a 0/1 scalar field.
    pub fn to_field(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }

    /// Centroid as (y, x), `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sy / n as f64, sx / n as f64))
    }

    pub fn is_subset_of(&self, other: &MaskPlane) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| a == 0 || b != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    height: usize,
    width: usize,
    planes: Vec<MaskPlane>,
}

impl MaskVolume {
    pub fn empty(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            planes: vec![MaskPlane::empty(height, width); depth],
        }
    }

    pub fn from_planes(planes: Vec<MaskPlane>) -> Result<Self> {
        let (height, width) = planes
            .first()
            .map(MaskPlane::dims)
            .ok_or_else(|| Error::Dimension("mask volume needs at least one plane".into()))?;
        if planes.iter().any(|p| p.dims() != (height, width)) {
            return Err(Error::ShapeMismatch("mask planes differ in size".into()));
        }
        Ok(Self { height, width, planes })
    }

    /// Builds from voxel bytes in x, y, z order.
    pub fn from_bits(height: usize, width: usize, depth: usize, bits: &[u8]) -> Result<Self> {
        if bits.len() != height * width * depth || depth == 0 {
            return Err(Error::ShapeMismatch(format!(
                "mask volume {height}x{width}x{depth} needs {} values, got {}",
                height * width * depth,
                bits.len()
            )));
        }
        let planes = bits
            .chunks(height * width)
            .map(|c| MaskPlane::new(height, width, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { height, width, planes })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.planes.len())
    }

    pub fn depth(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[MaskPlane] {
        &self.planes
    }

    pub fn plane(&self, index: usize) -> Result<&MaskPlane> {
        self.planes.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.planes.len(),
        })
    }

    pub fn set_plane(&mut self, index: usize, plane: MaskPlane) -> Result<()> {
        if plane.dims() != (self.height, self.width) {
            return Err(Error::ShapeMismatch("plane dims differ from volume".into()));
        }
        let len = self.planes.len();
        *self
            .planes
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { index, len })? = plane;
        Ok(())
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.planes.iter().flat_map(|p| p.bits().iter().copied()).collect()
    }

    pub fn count(&self) -> usize {
        self.planes.iter().map(MaskPlane::count).sum()
    }
}
