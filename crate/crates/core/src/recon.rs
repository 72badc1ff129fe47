//! Shared reconstruction-training machinery: the masked photometric loss
//! with its analytic image gradient, the masked depth term, and random scene
//! initialization. Both training stages and every ablation row build on
//! these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::providers::ProviderError;
use crate::raster::{
    ssim_and_backward_cached, ssim_gt_cache, DepthMap, Image, MaskMap, RasterError, SsimGtCache,
};
use crate::splat::{inverse_sigmoid, Gaussian2D, GaussianScene, SplatError};

/// Errors shared by both training stages.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iteration}, training aborted")]
    Divergence { iteration: usize },
    #[error("adaptive threshold needs a positive iteration horizon")]
    ZeroHorizon,
    #[error("view {0} has no pseudo prior")]
    MissingPrior(usize),
    #[error(transparent)]
    Splat(#[from] SplatError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Loss value plus the gradient with respect to the rendered image.
pub struct PhotometricLoss {
    pub total: f64,
    pub l1_term: f64,
    pub dssim_term: f64,
    /// `d(total)/d(render)`, pixel-interleaved RGB.
    pub d_image: Vec<f64>,
}

/// Masked reconstruction loss
/// `(1 - w) * mean(M . L1) + w * mean(M . D-SSIM)`, means over all pixels so
/// an all-keep mask reproduces the unmasked loss exactly.
pub fn masked_photometric_loss(
    gt: &Image,
    render: &Image,
    keep: &MaskMap,
    lambda_dssim: f64,
) -> Result<PhotometricLoss, RasterError> {
    masked_photometric_loss_cached(gt, &ssim_gt_cache(gt), render, keep, lambda_dssim)
}

/// [`masked_photometric_loss`] with the reference-side SSIM moments
/// precomputed once per view; training loops hit this every iteration.
pub fn masked_photometric_loss_cached(
    gt: &Image,
    gt_ssim: &SsimGtCache,
    render: &Image,
    keep: &MaskMap,
    lambda_dssim: f64,
) -> Result<PhotometricLoss, RasterError> {
    let n_px = gt.width * gt.height;
    let inv_px = 1.0 / n_px as f64;

    let mut l1_term = 0.0;
    let mut d_image = vec![0.0; n_px * 3];
    for i in 0..n_px {
        let m = keep.data[i];
        for c in 0..3 {
            let diff = render.data[i * 3 + c] - gt.data[i * 3 + c];
            l1_term += m * diff.abs() / 3.0 * inv_px;
            d_image[i * 3 + c] = (1.0 - lambda_dssim) * m * diff.signum() / 3.0 * inv_px;
        }
    }

    // d(D-SSIM)/d(ssim) = -1/2, weighted by the mask and the pixel mean.
    let mut upstream = MaskMap::new(gt.width, gt.height, 0.0);
    for i in 0..n_px {
        upstream.data[i] = -lambda_dssim * keep.data[i] * 0.5 * inv_px;
    }
    let (ssim_out, ssim_grad) = ssim_and_backward_cached(gt_ssim, render, &upstream)?;
    let mut dssim_term = 0.0;
    for i in 0..n_px {
        dssim_term += keep.data[i] * (1.0 - ssim_out.map.data[i]) * 0.5 * inv_px;
    }
    for (g, s) in d_image.iter_mut().zip(&ssim_grad) {
        *g += s;
    }

    Ok(PhotometricLoss {
        total: (1.0 - lambda_dssim) * l1_term + lambda_dssim * dssim_term,
        l1_term,
        dssim_term,
        d_image,
    })
}

/// Masked depth regularizer `w * mean(M . |D_render - D_provider|)` over
/// pixels where both depths are valid, normalized by the full pixel count.
/// Returns the loss and `d(loss)/d(D_render)`.
pub fn masked_depth_loss(
    render_depth: &DepthMap,
    provider_depth: &DepthMap,
    keep: &MaskMap,
    lambda_depth: f64,
) -> (f64, Vec<f64>) {
    let n_px = render_depth.width * render_depth.height;
    let inv_px = 1.0 / n_px as f64;
    let mut loss = 0.0;
    let mut d_depth = vec![0.0; n_px];
    if lambda_depth == 0.0 {
        return (0.0, d_depth);
    }
    for i in 0..n_px {
        if !(render_depth.valid[i] && provider_depth.valid[i]) {
            continue;
        }
        let m = keep.data[i];
        let diff = render_depth.data[i] - provider_depth.data[i];
        loss += lambda_depth * m * diff.abs() * inv_px;
        d_depth[i] = lambda_depth * m * diff.signum() * inv_px;
    }
    (loss, d_depth)
}

/// Random scene initialization over a world window: mid-gray colors, low
/// opacity, scales sized to tile the window at the requested count.
pub fn init_scene(
    world: [f64; 2],
    count: usize,
    depth_band: (f64, f64),
    seed: u64,
) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1217);
    let base_scale = (world[0] * world[1] / count as f64).sqrt() * 0.5;
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        gaussians.push(Gaussian2D {
            mu: [rng.gen_range(0.0..world[0]), rng.gen_range(0.0..world[1])],
            log_scale: [
                (base_scale * rng.gen_range(0.7..1.3)).ln(),
                (base_scale * rng.gen_range(0.7..1.3)).ln(),
            ],
            theta: rng.gen_range(-1.5..1.5),
            opacity_logit: inverse_sigmoid(0.1),
            color_logit: [0.0, 0.0, 0.0],
            depth: rng.gen_range(depth_band.0..depth_band.1),
        });
    }
    GaussianScene::from_gaussians(gaussians)
}
