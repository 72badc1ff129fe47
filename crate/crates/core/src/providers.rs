//! Pluggable sources for dense features, instance proposals and monocular
//! depth: one deterministic built-in stand-in each, plus ingestion of real
//! model exports from disk.
//!
//! Ingestion layout, relative to the configured directory:
//! - features: `feat_XXXX.ras1` per view
//! - depth: `depth_XXXX.ras1` per view (two channels: depth, validity)
//! - instances: `view_XXXX/inst_XXX.png`, binary PNGs where white marks the
//!   instance pixels
//!
//! Every provider is a pure function of (view, config, seed): replaying a
//! provider yields bit-identical rasters.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::{
    io as rio, DepthMap, FeatureMap, Image, Instance, InstanceSet, MaskMap, RasterError,
    ScalarRaster,
};
use crate::scenegen::ViewFrame;

/// Feature dimension of the built-in extractor: RGB blurred at three scales
/// plus gradient magnitude at two.
pub const BUILTIN_FEATURE_DIM: usize = 11;

const BLUR_SIGMAS: [f64; 3] = [1.0, 2.0, 4.0];
const GRAD_SIGMAS: [f64; 2] = [1.0, 2.0];

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("unknown instance mode {0:?} (expected gt-objects or residual-cc)")]
    UnknownInstanceMode(String),
    #[error("residual-cc instances need a residual raster")]
    MissingResidual,
    #[error("view {view}: {source}")]
    Io {
        view: usize,
        #[source]
        source: rio::RasterIoError,
    },
    #[error("view {view}: ingest directory {dir} has no instance masks")]
    EmptyInstanceDir { view: usize, dir: PathBuf },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Where each provider gets its rasters from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Builtin,
    Ingest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceMode {
    /// Ground-truth object proposals from the dataset (the honest analog of
    /// a segmenter that finds every object).
    GtObjects,
    /// Threshold the residual at its 90th percentile, 8-connected components,
    /// drop components under 16 px.
    ResidualCc,
}

impl InstanceMode {
    pub fn parse(s: &str) -> Result<Self, ProviderError> {
        match s {
            "gt-objects" => Ok(Self::GtObjects),
            "residual-cc" => Ok(Self::ResidualCc),
            other => Err(ProviderError::UnknownInstanceMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Builtin(InstanceMode),
    Ingest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DepthSource {
    /// Ground-truth static depth plus seeded gaussian noise with standard
    /// deviation `noise_sigma` times the valid depth range.
    Builtin { noise_sigma: f64 },
    Ingest(PathBuf),
}

/// The configured provider triple for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSet {
    pub features: FeatureSource,
    pub instances: InstanceSource,
    pub depth: DepthSource,
    pub seed: u64,
}

impl ProviderSet {
    pub fn builtin(seed: u64) -> Self {
        Self {
            features: FeatureSource::Builtin,
            instances: InstanceSource::Builtin(InstanceMode::GtObjects),
            depth: DepthSource::Builtin { noise_sigma: 0.02 },
            seed,
        }
    }

    /// Fills the provider cache slots of every view. Write-once: already
    /// primed views are left untouched.
    pub fn prime(&self, views: &mut [ViewFrame]) -> Result<(), ProviderError> {
        for view in views.iter_mut() {
            let wrap = |source: rio::RasterIoError| ProviderError::Io { view: view.view_id, source };
            if view.features.is_none() {
                let features = match &self.features {
                    FeatureSource::Builtin => builtin_features(&view.gt_image),
                    FeatureSource::Ingest(dir) => {
                        let path = dir.join(format!("feat_{:04}.ras1", view.view_id));
                        let f = rio::read_features_ras1(&path, view.camera.width, view.camera.height)
                            .map_err(wrap)?;
                        f.validate_finite()?;
                        f
                    }
                };
                view.features = Some(features);
            }
            let wrap = |source: rio::RasterIoError| ProviderError::Io { view: view.view_id, source };
            if view.provider_depth.is_none() {
                let depth = match &self.depth {
                    DepthSource::Builtin { noise_sigma } => {
                        builtin_depth(view, *noise_sigma, self.seed)
                    }
                    DepthSource::Ingest(dir) => {
                        let path = dir.join(format!("depth_{:04}.ras1", view.view_id));
                        rio::read_depth_ras1(&path, view.camera.width, view.camera.height)
                            .map_err(wrap)?
                    }
                };
                view.provider_depth = Some(depth);
            }
            if view.provider_instances.is_none() {
                let instances = match &self.instances {
                    InstanceSource::Builtin(InstanceMode::GtObjects) => {
                        builtin_instances(view, None, InstanceMode::GtObjects)?
                    }
                    // Residual-driven proposals are recomputed per screening
                    // round; nothing to prime.
                    InstanceSource::Builtin(InstanceMode::ResidualCc) => continue,
                    InstanceSource::Ingest(dir) => ingest_instances(dir, view)?,
                };
                view.provider_instances = Some(instances);
            }
        }
        Ok(())
    }

    /// Instance proposals for one view. `residual` is required only in
    /// residual-cc mode, which re-segments from the current residual.
    pub fn instances_for(
        &self,
        view: &ViewFrame,
        residual: Option<&ScalarRaster>,
    ) -> Result<InstanceSet, ProviderError> {
        match &self.instances {
            InstanceSource::Builtin(InstanceMode::ResidualCc) => {
                builtin_instances(view, residual, InstanceMode::ResidualCc)
            }
            _ => Ok(view
                .provider_instances
                .clone()
                .expect("instances primed before use")),
        }
    }

    /// Features of a rendered image. The builtin extractor runs directly;
    /// an ingest source reads `feat_render_XXXX.ras1` exported next to the
    /// ground-truth feature files.
    pub fn features_for_render(
        &self,
        view_id: usize,
        render: &Image,
    ) -> Result<FeatureMap, ProviderError> {
        match &self.features {
            FeatureSource::Builtin => Ok(builtin_features(render)),
            FeatureSource::Ingest(dir) => {
                let path = dir.join(format!("feat_render_{view_id:04}.ras1"));
                let f = rio::read_features_ras1(&path, render.width, render.height)
                    .map_err(|source| ProviderError::Io { view: view_id, source })?;
                f.validate_finite()?;
                Ok(f)
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Separable gaussian blur of one plane with reflect padding.
fn blur_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                acc += k * plane[y * w + reflect(x as i64 + t as i64 - r, w as i64)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                acc += k * tmp[reflect(y as i64 + t as i64 - r, h as i64) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Built-in feature stand-in: per pixel, RGB blurred at sigma 1/2/4 (nine
/// dims) followed by blurred-luminance gradient magnitude at sigma 1/2.
pub fn builtin_features(image: &Image) -> FeatureMap {
    let (w, h) = image.dims();
    let planes: Vec<Vec<f64>> =
        (0..3).map(|c| image.data.iter().skip(c).step_by(3).copied().collect()).collect();

    let mut out = FeatureMap::new(w, h, BUILTIN_FEATURE_DIM);
    let mut blurred_lum: Vec<Vec<f64>> = Vec::new();
    for (si, &sigma) in BLUR_SIGMAS.iter().enumerate() {
        let kernel = gaussian_kernel(sigma);
        let mut lum = vec![0.0; w * h];
        for (c, plane) in planes.iter().enumerate() {
            let blurred = blur_plane(plane, w, h, &kernel);
            for i in 0..w * h {
                out.data[i * BUILTIN_FEATURE_DIM + si * 3 + c] = blurred[i];
                lum[i] += blurred[i] / 3.0;
            }
        }
        blurred_lum.push(lum);
    }
    for (gi, &sigma) in GRAD_SIGMAS.iter().enumerate() {
        let lum = &blurred_lum[BLUR_SIGMAS.iter().position(|&s| s == sigma).unwrap()];
        for y in 0..h {
            for x in 0..w {
                let xm = lum[y * w + reflect(x as i64 - 1, w as i64)];
                let xp = lum[y * w + reflect(x as i64 + 1, w as i64)];
                let ym = lum[reflect(y as i64 - 1, h as i64) * w + x];
                let yp = lum[reflect(y as i64 + 1, h as i64) * w + x];
                let gx = (xp - xm) * 0.5;
                let gy = (yp - ym) * 0.5;
                out.data[(y * w + x) * BUILTIN_FEATURE_DIM + 9 + gi] =
                    (gx * gx + gy * gy).sqrt();
            }
        }
    }
    out
}

/// Pixel-wise cosine similarity with the zero-vector guard: 1 when both
/// vectors are zero, 0 when exactly one is.
pub fn cosine_map(a: &FeatureMap, b: &FeatureMap) -> Result<ScalarRaster, RasterError> {
    if a.dims() != b.dims() {
        return Err(RasterError::ShapeMismatch {
            context: "cosine_map",
            expected_w: a.width,
            expected_h: a.height,
            got_w: b.width,
            got_h: b.height,
        });
    }
    if a.dim != b.dim {
        return Err(RasterError::FeatureDimMismatch { expected: a.dim, got: b.dim });
    }
    let mut out = MaskMap::new(a.width, a.height, 0.0);
    for y in 0..a.height {
        for x in 0..a.width {
            let va = a.vector(x, y);
            let vb = b.vector(x, y);
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (p, q) in va.iter().zip(vb) {
                dot += p * q;
                na += p * p;
                nb += q * q;
            }
            let v = if na == 0.0 && nb == 0.0 {
                1.0
            } else if na == 0.0 || nb == 0.0 {
                0.0
            } else if va == vb {
                // Exact identity, kept free of rounding so downstream
                // normalization sees a truly constant map.
                1.0
            } else {
                (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
            };
            out.set(x, y, v);
        }
    }
    Ok(out)
}

/// Built-in instance proposals; see [`InstanceMode`].
pub fn builtin_instances(
    view: &ViewFrame,
    residual: Option<&ScalarRaster>,
    mode: InstanceMode,
) -> Result<InstanceSet, ProviderError> {
    match mode {
        InstanceMode::GtObjects => Ok(view.gt_instances.clone()),
        InstanceMode::ResidualCc => {
            let residual = residual.ok_or(ProviderError::MissingResidual)?;
            Ok(residual_components(residual))
        }
    }
}

const RESIDUAL_CC_PERCENTILE: f64 = 0.9;
const RESIDUAL_CC_MIN_PIXELS: usize = 16;

/// Nearest-rank percentile: smallest value with at least `p * n` values at
/// or below it.
pub(crate) fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn residual_components(residual: &ScalarRaster) -> InstanceSet {
    let (w, h) = (residual.width, residual.height);
    let threshold = percentile(&residual.data, RESIDUAL_CC_PERCENTILE);
    let hot: Vec<bool> = residual.data.iter().map(|&v| v > threshold).collect();
    let mut seen = vec![false; w * h];
    let mut set = InstanceSet::new(w, h);
    let mut next_id = 0u32;
    for start in 0..w * h {
        if !hot[start] || seen[start] {
            continue;
        }
        // 8-connected flood fill.
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        seen[start] = true;
        while let Some(p) = stack.pop() {
            pixels.push(p as u32);
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let np = (ny as usize) * w + nx as usize;
                    if hot[np] && !seen[np] {
                        seen[np] = true;
                        stack.push(np);
                    }
                }
            }
        }
        if pixels.len() >= RESIDUAL_CC_MIN_PIXELS {
            pixels.sort_unstable();
            set.instances.push(Instance { id: next_id, pixels });
            next_id += 1;
        }
    }
    set
}

/// Built-in depth stand-in: ground-truth static depth plus seeded gaussian
/// noise scaled to the valid depth range. Invalid pixels propagate.
pub fn builtin_depth(view: &ViewFrame, noise_sigma: f64, seed: u64) -> DepthMap {
    let gt = &view.gt_static_depth;
    let mut out = gt.clone();
    if noise_sigma == 0.0 {
        return out;
    }
    let range = gt.valid_range().map(|(lo, hi)| hi - lo).unwrap_or(0.0);
    let std = noise_sigma * range;
    if std == 0.0 {
        return out;
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ 0xD3_97_00_00u64.wrapping_add(view.view_id as u64 * 7919));
    for i in 0..out.data.len() {
        // Box-Muller; drawn for every pixel so validity does not shift the
        // stream.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if out.valid[i] {
            out.data[i] = (out.data[i] + std * z).max(0.0);
        }
    }
    out
}

fn ingest_instances(dir: &Path, view: &ViewFrame) -> Result<InstanceSet, ProviderError> {
    let vdir = dir.join(format!("view_{:04}", view.view_id));
    let (w, h) = (view.camera.width, view.camera.height);
    let mut set = InstanceSet::new(w, h);
    let mut id = 0u32;
    loop {
        let path = vdir.join(format!("inst_{id:03}.png"));
        if !path.exists() {
            break;
        }
        let mask =
            rio::read_mask_png(&path).map_err(|source| ProviderError::Io { view: view.view_id, source })?;
        if mask.dims() != (w, h) {
            return Err(ProviderError::Io {
                view: view.view_id,
                source: rio::RasterIoError::DimMismatch {
                    path,
                    expected_w: w,
                    expected_h: h,
                    expected_c: 1,
                    got_w: mask.width,
                    got_h: mask.height,
                    got_c: 1,
                },
            });
        }
        let pixels: Vec<u32> = mask
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i as u32)
            .collect();
        if !pixels.is_empty() {
            set.instances.push(Instance { id, pixels });
        }
        id += 1;
    }
    if set.instances.is_empty() {
        return Err(ProviderError::EmptyInstanceDir { view: view.view_id, dir: vdir });
    }
    Ok(set)
}
