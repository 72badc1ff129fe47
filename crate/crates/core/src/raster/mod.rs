//! Shared raster containers (images, masks, features, depth, instances) and
//! the elementary image operations every other module builds on.
//!
//! Mask polarity is fixed across the whole crate: 1 = static/keep,
//! 0 = transient/suppress.

pub mod io;
mod ops;
mod ssim;

pub use ops::{dilate_transient, l1_residual, l1_residual_map, minmax_normalize, psnr};
pub use ssim::{
    ssim, ssim_and_backward, ssim_and_backward_cached, ssim_backward, ssim_gt_cache, SsimGtCache,
    SsimOutput, SSIM_WINDOW,
};

use thiserror::Error;

/// Errors produced by raster containers and operations.
#[derive(Debug, Error)]
pub enum RasterError {
    #[error("shape mismatch: {context} expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ShapeMismatch {
        context: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("image {w}x{h} smaller than the {win}x{win} filter window")]
    WindowTooLarge { w: usize, h: usize, win: usize },
    #[error("non-finite value at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("mask is not binary at pixel ({x}, {y}): {value}")]
    NotBinary { x: usize, y: usize, value: f64 },
    #[error("instance {id} is empty")]
    EmptyInstance { id: u32 },
    #[error("instance {id} pixel ({x}, {y}) outside {w}x{h} bounds")]
    InstanceOutOfBounds { id: u32, x: usize, y: usize, w: usize, h: usize },
    #[error("feature dimension mismatch: {expected} vs {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
}

fn check_dims(
    context: &'static str,
    (ew, eh): (usize, usize),
    (gw, gh): (usize, usize),
) -> Result<(), RasterError> {
    if (ew, eh) != (gw, gh) {
        return Err(RasterError::ShapeMismatch {
            context,
            expected_w: ew,
            expected_h: eh,
            got_w: gw,
            got_h: gh,
        });
    }
    Ok(())
}

/// RGB image with unit-interval channel values, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` values in `[0, 1]`, pixel-interleaved RGB.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Per-channel clamp to the unit interval.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Per-pixel scalar raster in `[0, 1]`. Keep polarity: 1 keeps the pixel,
/// 0 suppresses it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl MaskMap {
    pub fn new(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn all_keep(width: usize, height: usize) -> Self {
        Self::new(width, height, 1.0)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Threshold into a strict {0, 1} mask; values >= `t` become 1.
    pub fn binarized(&self, t: f64) -> MaskMap {
        MaskMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn is_binary(&self) -> Result<(), RasterError> {
        for (i, &v) in self.data.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(RasterError::NotBinary {
                    x: i % self.width,
                    y: i / self.width,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// Dense per-pixel feature vectors, row-major with `dim` interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize) -> Self {
        assert!(dim >= 1, "feature dim must be >= 1");
        Self { width, height, dim, data: vec![0.0; width * height * dim] }
    }

    #[inline]
    pub fn vector(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn vector_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn validate_finite(&self) -> Result<(), RasterError> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let p = i / self.dim;
                return Err(RasterError::NonFinite { x: p % self.width, y: p / self.width });
            }
        }
        Ok(())
    }
}

/// Per-pixel depth with a validity flag (invalid where nothing rendered).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.data[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        let i = y * self.width + x;
        self.data[i] = depth;
        self.valid[i] = true;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// (min, max) over valid pixels, if any are valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            if self.valid[i] {
                let (lo, hi) = range.get_or_insert((v, v));
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        range
    }
}

/// One object-level pixel set proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    /// Linear pixel indices (`y * width + x`), unique and in bounds.
    pub pixels: Vec<u32>,
}

/// A set of (possibly overlapping) object-level instance proposals for one view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceSet {
    pub width: usize,
    pub height: usize,
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, instances: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        let n = (self.width * self.height) as u32;
        for inst in &self.instances {
            if inst.pixels.is_empty() {
                return Err(RasterError::EmptyInstance { id: inst.id });
            }
            for &p in &inst.pixels {
                if p >= n {
                    return Err(RasterError::InstanceOutOfBounds {
                        id: inst.id,
                        x: (p as usize) % self.width.max(1),
                        y: (p as usize) / self.width.max(1),
                        w: self.width,
                        h: self.height,
                    });
                }
            }
        }
        Ok(())
    }

    /// Keep-polarity mask that suppresses the union of the given instance ids.
    pub fn suppression_mask(&self, ids: &[u32]) -> MaskMap {
        let mut mask = MaskMap::all_keep(self.width, self.height);
        for inst in &self.instances {
            if ids.contains(&inst.id) {
                for &p in &inst.pixels {
                    mask.data[p as usize] = 0.0;
                }
            }
        }
        mask
    }
}

/// Generic scalar raster helper used for residuals and similarity maps.
pub type ScalarRaster = MaskMap;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_binarize_and_validate() {
        let mut m = MaskMap::new(2, 2, 0.0);
        m.set(1, 1, 0.7);
        assert!(m.is_binary().is_err());
        let b = m.binarized(0.5);
        assert!(b.is_binary().is_ok());
        assert_eq!(b.get(1, 1), 1.0);
        assert_eq!(b.get(0, 0), 0.0);
    }

    #[test]
    fn instance_bounds_checked() {
        let set = InstanceSet {
            width: 4,
            height: 4,
            instances: vec![Instance { id: 0, pixels: vec![16] }],
        };
        assert!(matches!(set.validate(), Err(RasterError::InstanceOutOfBounds { .. })));
    }

    #[test]
    fn depth_valid_range_ignores_invalid() {
        let mut d = DepthMap::invalid(2, 1);
        assert_eq!(d.valid_range(), None);
        d.set(0, 0, 3.0);
        d.set(1, 0, 5.0);
        assert_eq!(d.valid_range(), Some((3.0, 5.0)));
    }
}
