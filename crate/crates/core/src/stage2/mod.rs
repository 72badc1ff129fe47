//! Stage two: prior-guided reconstruction with online mask refinement.
//!
//! The scene trains under the masked reconstruction loss using the mask
//! predictor's soft output (or the pseudo-masks directly, or no mask at all,
//! depending on configuration) plus a masked depth regularizer. The mask
//! predictor trains under its own objective with its own optimizer:
//! an exponentially decaying pull toward the pseudo-masks, plus residual-
//! bound and feature-consistency self-supervision whose weight rises to one
//! by the densification point. Mask gradients never reach gaussian
//! parameters and reconstruction gradients never reach the predictor.

pub mod mlp;

pub use mlp::{predict_mask, MaskMlp};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{MaskMode, RunConfig};
use crate::priorbuild::PseudoPrior;
use crate::providers::{builtin_features, cosine_map, percentile};
use crate::raster::{
    l1_residual_map, ssim_gt_cache, DepthMap, FeatureMap, Image, MaskMap, ScalarRaster,
};
use crate::recon::{
    init_scene, masked_depth_loss, masked_photometric_loss_cached, TrainError,
};
use crate::scenegen::ViewFrame;
use crate::splat::{backward, render, GaussianScene};
use crate::stage1::{densify_config, learning_rates};

/// Schedule constants for one stage-two run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Schedule {
    pub t_max: usize,
    pub t_densify: usize,
    pub beta_prior: f64,
    pub beta_robustness: f64,
    pub lambda_prior: f64,
    pub lambda_robust: f64,
    pub lambda_reg: f64,
    pub lambda_depth: f64,
    /// Densification window, half-open.
    pub densify_window: (usize, usize),
    pub densify_interval: usize,
}

impl Stage2Schedule {
    pub fn from_config(config: &RunConfig) -> Self {
        // Without delayed densification the window follows the standard
        // early-start backbone schedule instead.
        let densify_window = if config.delayed_densification {
            (config.stage2_densify_from, config.stage2_densify_until)
        } else {
            (config.stage1_densify_from, config.stage2_iters / 2)
        };
        Self {
            t_max: config.stage2_iters,
            t_densify: config.t_densify,
            beta_prior: config.beta_prior,
            beta_robustness: config.beta_robustness,
            lambda_prior: config.lambda_prior,
            lambda_robust: config.lambda_robust,
            lambda_reg: config.lambda_reg,
            lambda_depth: config.lambda_depth,
            densify_window,
            densify_interval: config.stage2_densify_interval,
        }
    }

    /// Prior-supervision weight `exp(-t / beta_prior)`.
    pub fn prior_weight(&self, t: usize) -> f64 {
        (-(t as f64) / self.beta_prior).exp()
    }

    /// Self-consistency weight `exp(-max(0, T_densify - t) / beta_robustness)`;
    /// reaches one at the densification point.
    pub fn robust_weight(&self, t: usize) -> f64 {
        robust_weight(t, self.t_densify, self.beta_robustness)
    }
}

pub fn robust_weight(t: usize, t_densify: usize, beta_robustness: f64) -> f64 {
    let remaining = t_densify.saturating_sub(t) as f64;
    (-remaining / beta_robustness).exp()
}

/// Decayed pull of the predicted mask toward the pseudo-mask prior.
pub fn prior_loss(mask: &MaskMap, pseudo: &MaskMap, t: usize, beta_prior: f64) -> f64 {
    let weight = (-(t as f64) / beta_prior).exp();
    let mean: f64 = mask
        .data
        .iter()
        .zip(&pseudo.data)
        .map(|(m, p)| (p - m).abs())
        .sum::<f64>()
        / mask.data.len() as f64;
    weight * mean
}

/// Per-pixel must-keep (U) and may-keep (L) bounds from residual percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBounds {
    pub must_keep: Vec<f64>,
    pub may_keep: Vec<f64>,
}

/// `U = 1` where the residual is at or below the lower percentile, `L = 0`
/// strictly above the upper percentile. Ties resolve toward keep, so a
/// constant raster yields `U = L = 1` everywhere.
pub fn residual_bounds(l1: &ScalarRaster, q_lower: f64, q_upper: f64) -> ResidualBounds {
    let lo = percentile(&l1.data, q_lower);
    let hi = percentile(&l1.data, q_upper);
    let must_keep = l1.data.iter().map(|&v| if v <= lo { 1.0 } else { 0.0 }).collect();
    let may_keep = l1.data.iter().map(|&v| if v > hi { 0.0 } else { 1.0 }).collect();
    ResidualBounds { must_keep, may_keep }
}

/// Mean hinge penalty `max(U - M, 0) + max(M - L, 0)`.
pub fn res_loss(mask: &MaskMap, bounds: &ResidualBounds) -> f64 {
    let mut total = 0.0;
    for i in 0..mask.data.len() {
        let m = mask.data[i];
        total += (bounds.must_keep[i] - m).max(0.0) + (m - bounds.may_keep[i]).max(0.0);
    }
    total / mask.data.len() as f64
}

/// Feature-consistency target `max(2 cos(f, f') - 1, 0)`.
pub fn cos_mask(f_gt: &FeatureMap, f_render: &FeatureMap) -> Result<ScalarRaster, TrainError> {
    let cos = cosine_map(f_gt, f_render)?;
    Ok(MaskMap {
        width: cos.width,
        height: cos.height,
        data: cos.data.iter().map(|&c| (2.0 * c - 1.0).max(0.0)).collect(),
    })
}

/// Mean absolute gap to the feature-consistency target.
pub fn cos_loss(mask: &MaskMap, m_cos: &ScalarRaster) -> f64 {
    mask.data
        .iter()
        .zip(&m_cos.data)
        .map(|(m, c)| (c - m).abs())
        .sum::<f64>()
        / mask.data.len() as f64
}

/// Mask-predictor objective value and its per-pixel gradient.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    pub total: f64,
    pub prior: f64,
    pub res: f64,
    pub cos: f64,
    pub reg: f64,
    pub prior_weight: f64,
    pub robust_weight: f64,
    /// `d(total)/d(mask)` per pixel.
    pub d_mask: Vec<f64>,
}

/// Combines the predictor losses:
/// `lambda_robust * w_rob * (L_cos + L_res) + lambda_prior * L_prior + L_reg`
/// with `L_reg = lambda_reg * mean(1 - M)` biasing masks toward keep.
pub fn mlp_objective(
    mask: &MaskMap,
    pseudo: &MaskMap,
    bounds: &ResidualBounds,
    m_cos: &ScalarRaster,
    schedule: &Stage2Schedule,
    t: usize,
) -> MlpObjective {
    let n = mask.data.len();
    let inv = 1.0 / n as f64;
    let w_prior = schedule.prior_weight(t);
    let w_robust = schedule.robust_weight(t);

    let mut prior_term = 0.0;
    let mut res_term = 0.0;
    let mut cos_term = 0.0;
    let mut reg_term = 0.0;
    let mut d_mask = vec![0.0; n];
    for i in 0..n {
        let m = mask.data[i];
        let mut g = 0.0;

        let pd = m - pseudo.data[i];
        prior_term += pd.abs() * inv;
        if pd != 0.0 {
            g += schedule.lambda_prior * w_prior * pd.signum() * inv;
        }

        let under = bounds.must_keep[i] - m;
        let over = m - bounds.may_keep[i];
        if under > 0.0 {
            res_term += under * inv;
            g -= schedule.lambda_robust * w_robust * inv;
        }
        if over > 0.0 {
            res_term += over * inv;
            g += schedule.lambda_robust * w_robust * inv;
        }

        let cd = m - m_cos.data[i];
        cos_term += cd.abs() * inv;
        if cd != 0.0 {
            g += schedule.lambda_robust * w_robust * cd.signum() * inv;
        }

        reg_term += (1.0 - m) * inv;
        g -= schedule.lambda_reg * inv;

        d_mask[i] = g;
    }
    let prior = w_prior * prior_term;
    let robust = w_robust * (cos_term + res_term);
    let reg = schedule.lambda_reg * reg_term;
    MlpObjective {
        total: schedule.lambda_robust * robust + schedule.lambda_prior * prior + reg,
        prior,
        res: res_term,
        cos: cos_term,
        reg,
        prior_weight: w_prior,
        robust_weight: w_robust,
        d_mask,
    }
}

/// Depth residual input `|provider - rendered| / range`, clamped to the unit
/// interval and zero wherever either depth is invalid.
pub fn depth_residual_input(
    rendered: &DepthMap,
    provider: &DepthMap,
    provider_range: f64,
) -> ScalarRaster {
    let n = rendered.width * rendered.height;
    let range = if provider_range > 0.0 { provider_range } else { 1.0 };
    let mut out = MaskMap::new(rendered.width, rendered.height, 0.0);
    for i in 0..n {
        if rendered.valid[i] && provider.valid[i] {
            out.data[i] = ((provider.data[i] - rendered.data[i]).abs() / range).clamp(0.0, 1.0);
        }
    }
    out
}

/// One stats row per iteration.
#[derive(Debug, Clone)]
pub struct Stage2Stats {
    pub iteration: usize,
    pub view: usize,
    pub recon_loss: f64,
    pub depth_loss: f64,
    pub mlp_loss: f64,
    pub prior_loss: f64,
    pub res_loss: f64,
    pub cos_loss: f64,
    pub prior_weight: f64,
    pub robust_weight: f64,
    /// Binarized-mask IoU against ground truth, refreshed on the screening
    /// cadence; carried forward between refreshes.
    pub mask_iou: f64,
}

pub struct Stage2Output {
    pub scene: GaussianScene,
    pub mlp: Option<MaskMlp>,
    /// Final soft masks per view (all-keep when masking is off).
    pub masks: Vec<MaskMap>,
    pub renders: Vec<Image>,
    pub render_depths: Vec<DepthMap>,
    pub stats: Vec<Stage2Stats>,
}

/// Runs the prior-guided second pass. `priors` must cover every view in
/// `mlp` and `pseudo` mask modes; views must be primed.
pub fn train_stage2(
    views: &[ViewFrame],
    priors: &[PseudoPrior],
    start_scene: Option<GaussianScene>,
    config: &RunConfig,
) -> Result<Stage2Output, TrainError> {
    let schedule = Stage2Schedule::from_config(config);
    let world = config.scene_spec().world_size();
    let mut scene = match start_scene {
        Some(scene) if config.warm_start => scene,
        _ => init_scene(world, config.init_gaussians, (4.0, 9.0), config.seed ^ 0x52),
    };
    let lrs = learning_rates(config);
    let densify = densify_config(config);

    let needs_priors = matches!(config.stage2_mask_mode, MaskMode::Mlp | MaskMode::Pseudo);
    let prior_for = |view_id: usize| -> Result<&PseudoPrior, TrainError> {
        priors
            .iter()
            .find(|p| p.view_id == view_id)
            .ok_or(TrainError::MissingPrior(view_id))
    };
    if needs_priors {
        for view in views {
            prior_for(view.view_id)?;
        }
    }

    // Per-view caches: provider depth range, gt features for the
    // self-consistency term (always the builtin extractor so they can be
    // recomputed against renders online), render features and their age.
    let mut depth_ranges = Vec::with_capacity(views.len());
    let mut gt_cos_features: Vec<Option<FeatureMap>> = vec![None; views.len()];
    let mut render_features: Vec<Option<(usize, FeatureMap)>> = vec![None; views.len()];
    for view in views {
        let provider_depth =
            view.provider_depth.as_ref().expect("depth provider primed before stage two");
        depth_ranges.push(provider_depth.valid_range().map(|(lo, hi)| hi - lo).unwrap_or(0.0));
    }

    let mut mlp = match config.stage2_mask_mode {
        MaskMode::Mlp => {
            let dim = views[0]
                .features
                .as_ref()
                .expect("features primed before stage two")
                .dim;
            Some(MaskMlp::new(dim + 1, config.seed ^ 0x3A2))
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x52E2);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let gt_ssim: Vec<_> = views.iter().map(|v| ssim_gt_cache(&v.gt_image)).collect();
    let mut stats = Vec::with_capacity(schedule.t_max);
    let mut last_iou = vec![f64::NAN; views.len()];

    for t in 0..schedule.t_max {
        if t % views.len() == 0 {
            order.shuffle(&mut rng);
        }
        let vi = order[t % views.len()];
        let view = &views[vi];
        let n_px = view.camera.width * view.camera.height;

        let out = render(&scene, &view.camera)?;
        let provider_depth = view.provider_depth.as_ref().unwrap();
        let d_input = depth_residual_input(&out.depth, provider_depth, depth_ranges[vi]);

        // Mask for this iteration's reconstruction loss. Soft masks from the
        // predictor are used as-is; binarization happens only in evaluation.
        let (mask, acts) = match config.stage2_mask_mode {
            MaskMode::Mlp => {
                let mlp_ref = mlp.as_ref().unwrap();
                let features = view.features.as_ref().unwrap();
                let (mask, acts) = predict_mask(mlp_ref, features, &d_input);
                (mask, Some(acts))
            }
            MaskMode::Pseudo => (prior_for(view.view_id)?.mask.clone(), None),
            MaskMode::Off => (MaskMap::all_keep(view.camera.width, view.camera.height), None),
        };

        let photo = masked_photometric_loss_cached(
            &view.gt_image,
            &gt_ssim[vi],
            &out.image,
            &mask,
            config.lambda_dssim,
        )?;
        let (depth_loss, d_depth) =
            masked_depth_loss(&out.depth, provider_depth, &mask, schedule.lambda_depth);
        let recon_total = photo.total + depth_loss;
        if !recon_total.is_finite() {
            return Err(TrainError::Divergence { iteration: t });
        }

        let grads = backward(&scene, &out.cache, &photo.d_image, &d_depth)?;
        scene.accumulate_densify_stats(&grads);
        scene.adam_step(&grads, &lrs)?;
        scene.clamp_parameters(config.min_scale, config.max_scale(), 0.1);

        let (from, until) = schedule.densify_window;
        if t >= from && t < until && (t - from) % schedule.densify_interval == 0 {
            scene.densify_and_prune(&densify);
        }

        // Predictor update, decoupled from the scene step.
        let mut objective: Option<MlpObjective> = None;
        if let (Some(mlp_ref), Some(acts)) = (mlp.as_mut(), acts) {
            let l1 = l1_residual_map(&view.gt_image, &out.image)?;
            let bounds = residual_bounds(&l1, config.q_lower, config.q_upper);

            if gt_cos_features[vi].is_none() {
                gt_cos_features[vi] = Some(builtin_features(&view.gt_image));
            }
            let refresh = match &render_features[vi] {
                Some((age, _)) => t - *age >= config.k_feat,
                None => true,
            };
            if refresh {
                render_features[vi] = Some((t, builtin_features(&out.image)));
            }
            let m_cos =
                cos_mask(gt_cos_features[vi].as_ref().unwrap(), &render_features[vi].as_ref().unwrap().1)?;

            let pseudo = &prior_for(view.view_id)?.mask;
            let obj = mlp_objective(&mask, pseudo, &bounds, &m_cos, &schedule, t);

            let subset: Option<Vec<usize>> = if config.mlp_pixel_batch > 0
                && config.mlp_pixel_batch < n_px
            {
                // Seeded per-iteration subset; gradient scaled to stay an
                // unbiased estimate of the full-image mean.
                let mut subset_rng =
                    ChaCha8Rng::seed_from_u64(config.seed ^ 0xBA7C ^ (t as u64) << 16);
                let mut rows: Vec<usize> = (0..n_px).collect();
                rows.partial_shuffle(&mut subset_rng, config.mlp_pixel_batch);
                rows.truncate(config.mlp_pixel_batch);
                Some(rows)
            } else {
                None
            };
            let scale = subset
                .as_ref()
                .map(|s| n_px as f64 / s.len() as f64)
                .unwrap_or(1.0);
            let d_mask: Vec<f64> = obj.d_mask.iter().map(|g| g * scale).collect();
            let grads = mlp_ref.backward(&acts, &d_mask, subset.as_deref());
            mlp_ref.adam_step(&grads, config.mlp_lr);
            objective = Some(obj);
        }

        if t % config.k_screen == 0 {
            let binarized = mask.binarized(0.5);
            if let Ok(m) = crate::evalkit::mask_metrics(&binarized, &view.gt_transient_mask) {
                last_iou[vi] = m.iou;
            }
        }

        let obj = objective.unwrap_or(MlpObjective {
            total: 0.0,
            prior: 0.0,
            res: 0.0,
            cos: 0.0,
            reg: 0.0,
            prior_weight: schedule.prior_weight(t),
            robust_weight: schedule.robust_weight(t),
            d_mask: Vec::new(),
        });
        stats.push(Stage2Stats {
            iteration: t,
            view: vi,
            recon_loss: photo.total,
            depth_loss,
            mlp_loss: obj.total,
            prior_loss: obj.prior,
            res_loss: obj.res,
            cos_loss: obj.cos,
            prior_weight: obj.prior_weight,
            robust_weight: obj.robust_weight,
            mask_iou: last_iou[vi],
        });
    }

    // Final rasters per view.
    let mut masks = Vec::with_capacity(views.len());
    let mut renders = Vec::with_capacity(views.len());
    let mut render_depths = Vec::with_capacity(views.len());
    for (vi, view) in views.iter().enumerate() {
        let out = render(&scene, &view.camera)?;
        let mask = match config.stage2_mask_mode {
            MaskMode::Mlp => {
                let provider_depth = view.provider_depth.as_ref().unwrap();
                let d_input = depth_residual_input(&out.depth, provider_depth, depth_ranges[vi]);
                predict_mask(mlp.as_ref().unwrap(), view.features.as_ref().unwrap(), &d_input).0
            }
            MaskMode::Pseudo => prior_for(view.view_id)?.mask.clone(),
            MaskMode::Off => MaskMap::all_keep(view.camera.width, view.camera.height),
        };
        masks.push(mask);
        renders.push(out.image);
        render_depths.push(out.depth);
    }

    Ok(Stage2Output { scene, mlp, masks, renders, render_depths, stats })
}
