//! Stage one: conservative reconstruction that exposes failures.
//!
//! Training runs the masked photometric loss while instance-level residual
//! screening periodically marks object proposals whose mean residual exceeds
//! an adaptive, time-decaying threshold. The threshold starts conservative
//! (under-fitted static regions are not over-masked) and tightens as the
//! reconstruction improves, so view-inconsistent content surfaces as
//! suppressed, unfitted regions by the end of the pass.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::providers::ProviderSet;
use crate::raster::{
    l1_residual_map, ssim_gt_cache, Image, Instance, InstanceSet, MaskMap, RasterError,
    ScalarRaster,
};
use crate::recon::{init_scene, masked_photometric_loss_cached, TrainError};
use crate::scenegen::ViewFrame;
use crate::splat::{backward, render, DensifyConfig, GaussianScene, GroupLearningRates};

/// Spatially averaged residual over one instance.
pub fn instance_residual(residual: &ScalarRaster, instance: &Instance) -> Result<f64, RasterError> {
    if instance.pixels.is_empty() {
        return Err(RasterError::EmptyInstance { id: instance.id });
    }
    let sum: f64 = instance.pixels.iter().map(|&p| residual.data[p as usize]).sum();
    Ok(sum / instance.pixels.len() as f64)
}

/// Population mean and standard deviation over every pixel.
pub fn image_stats(residual: &ScalarRaster) -> (f64, f64) {
    let n = residual.data.len() as f64;
    let mean = residual.data.iter().sum::<f64>() / n;
    let var = residual.data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Adaptive screening threshold
/// `mu + (1 + lambda_local * (t_max - t) / t_max) * sigma`.
pub fn adaptive_threshold(
    mu: f64,
    sigma: f64,
    t: usize,
    t_max: usize,
    lambda_local: f64,
) -> Result<f64, TrainError> {
    if t_max == 0 {
        return Err(TrainError::ZeroHorizon);
    }
    let decay = (t_max - t.min(t_max)) as f64 / t_max as f64;
    Ok(mu + (1.0 + lambda_local * decay) * sigma)
}

/// Screening outcome for one view.
#[derive(Debug, Clone)]
pub struct ViewScreening {
    pub keep_mask: MaskMap,
    /// Ids of instances flagged transient this round.
    pub flagged: Vec<u32>,
    pub mu: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl ViewScreening {
    fn all_keep(width: usize, height: usize) -> Self {
        Self {
            keep_mask: MaskMap::all_keep(width, height),
            flagged: Vec::new(),
            mu: 0.0,
            sigma: 0.0,
            threshold: 0.0,
        }
    }
}

/// Screening bookkeeping across the whole pass.
#[derive(Debug, Clone)]
pub struct ScreeningState {
    pub t: usize,
    pub t_max: usize,
    pub lambda_local: f64,
    pub views: Vec<ViewScreening>,
}

impl ScreeningState {
    pub fn new(t_max: usize, lambda_local: f64, views: &[ViewFrame]) -> Self {
        Self {
            t: 0,
            t_max,
            lambda_local,
            views: views
                .iter()
                .map(|v| ViewScreening::all_keep(v.camera.width, v.camera.height))
                .collect(),
        }
    }
}

/// Flags every instance whose mean residual exceeds the adaptive threshold
/// and returns the keep mask suppressing their union. An empty instance set
/// keeps everything.
pub fn screen_instances(
    instances: &InstanceSet,
    residual: &ScalarRaster,
    t: usize,
    t_max: usize,
    lambda_local: f64,
) -> Result<ViewScreening, TrainError> {
    let (mu, sigma) = image_stats(residual);
    let threshold = adaptive_threshold(mu, sigma, t, t_max, lambda_local)?;
    let mut flagged = Vec::new();
    for instance in &instances.instances {
        if instance_residual(residual, instance)? > threshold {
            flagged.push(instance.id);
        }
    }
    let keep_mask = instances.suppression_mask(&flagged);
    Ok(ViewScreening { keep_mask, flagged, mu, sigma, threshold })
}

/// One stats row per training iteration; screening columns show the latest
/// round for the iteration's view.
#[derive(Debug, Clone)]
pub struct Stage1Stats {
    pub iteration: usize,
    pub view: usize,
    pub loss: f64,
    pub mu: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub flagged: usize,
}

pub struct Stage1Output {
    pub scene: GaussianScene,
    /// Final render of every view.
    pub renders: Vec<Image>,
    /// Final keep mask of every view (all-keep when screening is off).
    pub keep_masks: Vec<MaskMap>,
    pub stats: Vec<Stage1Stats>,
}

pub(crate) fn learning_rates(config: &RunConfig) -> GroupLearningRates {
    GroupLearningRates {
        mu: config.lr_mu,
        scale: config.lr_scale,
        theta: config.lr_theta,
        opacity: config.lr_opacity,
        color: config.lr_color,
        depth: config.lr_depth,
    }
}

pub(crate) fn densify_config(config: &RunConfig) -> DensifyConfig {
    DensifyConfig {
        grad_threshold: config.densify_grad_threshold,
        size_threshold: config.densify_size_threshold,
        opacity_floor: config.opacity_floor,
        max_gaussians: config.max_gaussians,
    }
}

/// Runs the failure-exposure pass. Views must be primed by the provider set
/// beforehand; screening re-renders every view each round, which never
/// touches the optimization state or the view-order generator, so a run with
/// screening that flags nothing is bitwise identical to one without
/// screening.
pub fn train_stage1(
    views: &[ViewFrame],
    providers: &ProviderSet,
    config: &RunConfig,
) -> Result<Stage1Output, TrainError> {
    let world = config.scene_spec().world_size();
    let mut scene = init_scene(world, config.init_gaussians, (4.0, 9.0), config.seed);
    let lrs = learning_rates(config);
    let densify = densify_config(config);
    let t_max = config.stage1_iters;

    let mut state = ScreeningState::new(t_max, config.lambda_local, views);
    let mut stats = Vec::with_capacity(t_max);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51E1);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let gt_ssim: Vec<_> = views.iter().map(|v| ssim_gt_cache(&v.gt_image)).collect();

    for it in 0..t_max {
        if config.stage1_masking && it % config.k_screen == 0 {
            state.t = it;
            for (vi, view) in views.iter().enumerate() {
                let out = render(&scene, &view.camera)?;
                let residual = l1_residual_map(&view.gt_image, &out.image)?;
                let instances = providers.instances_for(view, Some(&residual))?;
                state.views[vi] =
                    screen_instances(&instances, &residual, it, t_max, config.lambda_local)?;
            }
        }

        if it % views.len() == 0 {
            order.shuffle(&mut rng);
        }
        let vi = order[it % views.len()];
        let view = &views[vi];

        let out = render(&scene, &view.camera)?;
        let loss = masked_photometric_loss_cached(
            &view.gt_image,
            &gt_ssim[vi],
            &out.image,
            &state.views[vi].keep_mask,
            config.lambda_dssim,
        )?;
        if !loss.total.is_finite() {
            return Err(TrainError::Divergence { iteration: it });
        }
        let zero_depth = vec![0.0; view.camera.width * view.camera.height];
        let grads = backward(&scene, &out.cache, &loss.d_image, &zero_depth)?;
        scene.accumulate_densify_stats(&grads);
        scene.adam_step(&grads, &lrs)?;
        scene.clamp_parameters(config.min_scale, config.max_scale(), 0.1);

        if it >= config.stage1_densify_from
            && it < config.stage1_densify_until
            && (it - config.stage1_densify_from) % config.stage1_densify_interval == 0
        {
            scene.densify_and_prune(&densify);
        }

        let vs = &state.views[vi];
        stats.push(Stage1Stats {
            iteration: it,
            view: vi,
            loss: loss.total,
            mu: vs.mu,
            sigma: vs.sigma,
            threshold: vs.threshold,
            flagged: vs.flagged.len(),
        });
    }

    let mut renders = Vec::with_capacity(views.len());
    for view in views {
        renders.push(render(&scene, &view.camera)?.image);
    }
    let keep_masks = state.views.into_iter().map(|v| v.keep_mask).collect();

    Ok(Stage1Output { scene, renders, keep_masks, stats })
}
