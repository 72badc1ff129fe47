//! Differentiable 2.5D Gaussian splatting: anisotropic 2D splats with a
//! scalar sort depth, rendered through similarity-transform cameras with
//! front-to-back alpha compositing.
//!
//! The world-to-screen map is a 2D similarity transform, so the screen-space
//! covariance is an exact conjugation of the world covariance rather than an
//! affine approximation. Compositing, masked losses and depth residuals keep
//! their usual form while every gradient stays hand-verifiable.

mod densify;
pub mod io;
mod render;

pub use densify::DensifyConfig;
pub use render::{
    backward, cutoff_margin, render, render_grouped, Gradients, RenderCache, RenderOutput,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("gaussian {index} has a non-finite parameter ({field})")]
    NonFiniteParam { index: usize, field: &'static str },
    #[error("stale render cache: scene changed since render (generation {scene} vs cache {cache})")]
    StaleCache { scene: u64, cache: u64 },
    #[error("gradient shape mismatch: scene has {scene} gaussians, gradients cover {grads}")]
    GradientShape { scene: usize, grads: usize },
    #[error("upstream gradient raster is {got} values, expected {expected}")]
    UpstreamShape { expected: usize, got: usize },
}

/// Number of optimizable scalars per gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 10;

/// Offsets into the per-gaussian parameter block.
pub mod param {
    pub const MU_X: usize = 0;
    pub const MU_Y: usize = 1;
    pub const LOG_SX: usize = 2;
    pub const LOG_SY: usize = 3;
    pub const THETA: usize = 4;
    pub const OPACITY: usize = 5;
    pub const COLOR_R: usize = 6;
    pub const COLOR_G: usize = 7;
    pub const COLOR_B: usize = 8;
    pub const DEPTH: usize = 9;
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat primitive. The covariance is parameterized as
/// `R(theta) * diag(exp(2*log_sx), exp(2*log_sy)) * R(theta)^T`; opacity and
/// color live in logit space; `depth` is a positive scalar used only for
/// sorting and depth rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    pub log_scale: [f64; 2],
    pub theta: f64,
    pub opacity_logit: f64,
    pub color_logit: [f64; 3],
    pub depth: f64,
}

impl Gaussian2D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn color(&self) -> [f64; 3] {
        [
            sigmoid(self.color_logit[0]),
            sigmoid(self.color_logit[1]),
            sigmoid(self.color_logit[2]),
        ]
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    /// World-space covariance as (xx, xy, yy).
    pub fn covariance(&self) -> [f64; 3] {
        let (sx2, sy2) = ((2.0 * self.log_scale[0]).exp(), (2.0 * self.log_scale[1]).exp());
        let (c, s) = (self.theta.cos(), self.theta.sin());
        [
            c * c * sx2 + s * s * sy2,
            c * s * (sx2 - sy2),
            s * s * sx2 + c * c * sy2,
        ]
    }

    fn check_finite(&self, index: usize) -> Result<(), SplatError> {
        let checks: [(&'static str, f64); 10] = [
            ("mu.x", self.mu[0]),
            ("mu.y", self.mu[1]),
            ("log_sx", self.log_scale[0]),
            ("log_sy", self.log_scale[1]),
            ("theta", self.theta),
            ("opacity_logit", self.opacity_logit),
            ("color.r", self.color_logit[0]),
            ("color.g", self.color_logit[1]),
            ("color.b", self.color_logit[2]),
            ("depth", self.depth),
        ];
        for (field, v) in checks {
            if !v.is_finite() {
                return Err(SplatError::NonFiniteParam { index, field });
            }
        }
        Ok(())
    }

    fn write_params(&self, out: &mut [f64]) {
        out[param::MU_X] = self.mu[0];
        out[param::MU_Y] = self.mu[1];
        out[param::LOG_SX] = self.log_scale[0];
        out[param::LOG_SY] = self.log_scale[1];
        out[param::THETA] = self.theta;
        out[param::OPACITY] = self.opacity_logit;
        out[param::COLOR_R] = self.color_logit[0];
        out[param::COLOR_G] = self.color_logit[1];
        out[param::COLOR_B] = self.color_logit[2];
        out[param::DEPTH] = self.depth;
    }

    fn read_params(buf: &[f64]) -> Self {
        Gaussian2D {
            mu: [buf[param::MU_X], buf[param::MU_Y]],
            log_scale: [buf[param::LOG_SX], buf[param::LOG_SY]],
            theta: buf[param::THETA],
            opacity_logit: buf[param::OPACITY],
            color_logit: [buf[param::COLOR_R], buf[param::COLOR_G], buf[param::COLOR_B]],
            depth: buf[param::DEPTH],
        }
    }
}

/// One training view: a window into the world plane described by an origin,
/// a rotation and a world-units-per-pixel scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewCamera {
    /// World position of the screen-space origin (corner of pixel (0, 0)).
    pub origin: [f64; 2],
    /// Rotation of the camera window, radians.
    pub rotation: f64,
    /// World units per pixel, > 0.
    pub pixel_scale: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewCamera {
    #[inline]
    pub fn world_to_screen(&self, w: [f64; 2]) -> [f64; 2] {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let dx = w[0] - self.origin[0];
        let dy = w[1] - self.origin[1];
        // R(-rotation) * (w - origin) / pixel_scale
        [(c * dx + s * dy) / self.pixel_scale, (-s * dx + c * dy) / self.pixel_scale]
    }

    #[inline]
    pub fn screen_to_world(&self, s: [f64; 2]) -> [f64; 2] {
        let (c, sn) = (self.rotation.cos(), self.rotation.sin());
        let x = s[0] * self.pixel_scale;
        let y = s[1] * self.pixel_scale;
        [self.origin[0] + c * x - sn * y, self.origin[1] + sn * x + c * y]
    }

    /// Row-major world-to-screen linear map (without the translation).
    #[inline]
    pub(crate) fn linear(&self) -> [f64; 4] {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let inv = 1.0 / self.pixel_scale;
        [c * inv, s * inv, -s * inv, c * inv]
    }
}

/// Per-parameter-group Adam learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLearningRates {
    pub mu: f64,
    pub scale: f64,
    pub theta: f64,
    pub opacity: f64,
    pub color: f64,
    pub depth: f64,
}

impl GroupLearningRates {
    fn for_offset(&self, offset: usize) -> f64 {
        match offset {
            param::MU_X | param::MU_Y => self.mu,
            param::LOG_SX | param::LOG_SY => self.scale,
            param::THETA => self.theta,
            param::OPACITY => self.opacity,
            param::COLOR_R | param::COLOR_G | param::COLOR_B => self.color,
            param::DEPTH => self.depth,
            _ => unreachable!(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// The optimizable splat collection plus optimizer moments and the
/// densification accumulators. All mutation goes through methods that bump
/// the generation counter so stale render caches are detectable.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian2D>,
    ids: Vec<u64>,
    next_id: u64,
    generation: u64,
    /// Adam first moments, `len = n * PARAMS_PER_GAUSSIAN`.
    moment1: Vec<f64>,
    /// Adam second moments.
    moment2: Vec<f64>,
    /// Adam step counter (shared across parameters).
    adam_step_count: u64,
    /// Accumulated screen-space positional gradient magnitudes.
    grad_accum: Vec<f64>,
    /// Number of renders in which each gaussian contributed.
    hit_count: Vec<u32>,
}

impl GaussianScene {
    pub fn new() -> Self {
        Self {
            gaussians: Vec::new(),
            ids: Vec::new(),
            next_id: 0,
            generation: 0,
            moment1: Vec::new(),
            moment2: Vec::new(),
            adam_step_count: 0,
            grad_accum: Vec::new(),
            hit_count: Vec::new(),
        }
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian2D>) -> Self {
        let mut scene = Self::new();
        for g in gaussians {
            scene.push(g);
        }
        scene
    }

    pub fn push(&mut self, g: Gaussian2D) {
        self.gaussians.push(g);
        self.ids.push(self.next_id);
        self.next_id += 1;
        self.moment1.extend_from_slice(&[0.0; PARAMS_PER_GAUSSIAN]);
        self.moment2.extend_from_slice(&[0.0; PARAMS_PER_GAUSSIAN]);
        self.grad_accum.push(0.0);
        self.hit_count.push(0);
        self.generation += 1;
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian2D] {
        &self.gaussians
    }

    /// Mutable access; invalidates outstanding render caches.
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian2D] {
        self.generation += 1;
        &mut self.gaussians
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam_step_count
    }

    pub(crate) fn moments(&self) -> (&[f64], &[f64]) {
        (&self.moment1, &self.moment2)
    }

    pub(crate) fn densify_stats(&self) -> (&[f64], &[u32]) {
        (&self.grad_accum, &self.hit_count)
    }

    pub(crate) fn restore_state(
        &mut self,
        moment1: Vec<f64>,
        moment2: Vec<f64>,
        step: u64,
        grad_accum: Vec<f64>,
        hit_count: Vec<u32>,
    ) {
        assert_eq!(moment1.len(), self.len() * PARAMS_PER_GAUSSIAN);
        assert_eq!(moment2.len(), self.len() * PARAMS_PER_GAUSSIAN);
        assert_eq!(grad_accum.len(), self.len());
        assert_eq!(hit_count.len(), self.len());
        self.moment1 = moment1;
        self.moment2 = moment2;
        self.adam_step_count = step;
        self.grad_accum = grad_accum;
        self.hit_count = hit_count;
        self.generation += 1;
    }

    pub fn validate_finite(&self) -> Result<(), SplatError> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.check_finite(i)?;
        }
        Ok(())
    }

    /// Depth ordering with ties broken by primitive id.
    pub(crate) fn depth_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.gaussians.len()).collect();
        order.sort_by(|&a, &b| {
            self.gaussians[a]
                .depth
                .partial_cmp(&self.gaussians[b].depth)
                .expect("depths are finite")
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    /// Folds one backward pass into the densification accumulators.
    pub fn accumulate_densify_stats(&mut self, grads: &Gradients) {
        assert_eq!(grads.screen_pos_norm.len(), self.len());
        for i in 0..self.len() {
            if grads.touched[i] {
                self.grad_accum[i] += grads.screen_pos_norm[i];
                self.hit_count[i] += 1;
            }
        }
        // Accumulator-only update: render caches stay valid.
    }

    /// Standard Adam update with bias correction, one shared step counter.
    pub fn adam_step(
        &mut self,
        grads: &Gradients,
        lrs: &GroupLearningRates,
    ) -> Result<(), SplatError> {
        let n = self.len();
        if grads.params.len() != n * PARAMS_PER_GAUSSIAN {
            return Err(SplatError::GradientShape {
                scene: n,
                grads: grads.params.len() / PARAMS_PER_GAUSSIAN,
            });
        }
        self.adam_step_count += 1;
        let t = self.adam_step_count as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        let mut params = vec![0.0; PARAMS_PER_GAUSSIAN];
        for i in 0..n {
            self.gaussians[i].write_params(&mut params);
            for k in 0..PARAMS_PER_GAUSSIAN {
                let idx = i * PARAMS_PER_GAUSSIAN + k;
                let g = grads.params[idx];
                self.moment1[idx] = ADAM_BETA1 * self.moment1[idx] + (1.0 - ADAM_BETA1) * g;
                self.moment2[idx] = ADAM_BETA2 * self.moment2[idx] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = self.moment1[idx] / bias1;
                let v_hat = self.moment2[idx] / bias2;
                params[k] -= lrs.for_offset(k) * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            self.gaussians[i] = Gaussian2D::read_params(&params);
        }
        self.generation += 1;
        Ok(())
    }

    /// Clamps log scales so recovered scales stay inside `(min, max]` and
    /// depth stays positive.
    pub fn clamp_parameters(&mut self, min_scale: f64, max_scale: f64, min_depth: f64) {
        let (lo, hi) = (min_scale.ln(), max_scale.ln());
        for g in &mut self.gaussians {
            g.log_scale[0] = g.log_scale[0].clamp(lo, hi);
            g.log_scale[1] = g.log_scale[1].clamp(lo, hi);
            g.depth = g.depth.max(min_depth);
        }
        self.generation += 1;
    }
}

impl Default for GaussianScene {
    fn default() -> Self {
        Self::new()
    }
}
