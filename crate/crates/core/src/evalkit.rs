//! Quantitative evaluation: mask-quality metrics with the transient class
//! positive, stratified transient/static image metrics, the instance-snapped
//! refinement of predicted masks, and the module ablation grid.

use thiserror::Error;

use crate::config::{MaskMode, RunConfig};
use crate::priorbuild::{filter_instances, instance_stats, PseudoPrior};
use crate::raster::{
    dilate_transient, psnr, ssim, Image, InstanceSet, MaskMap, RasterError, ScalarRaster,
};
use crate::recon::TrainError;
use crate::scenegen::ViewFrame;
use crate::stage2::train_stage2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("unknown ablation toggle {0:?}")]
    UnknownToggle(String),
    #[error("ablation row {row:?} combines {a} and {b}")]
    ConflictingToggles { row: String, a: &'static str, b: &'static str },
    #[error("ablation row {row:?}: {source}")]
    RowFailed {
        row: String,
        #[source]
        source: TrainError,
    },
}

/// Confusion-based mask quality; the transient class (mask value 0) is the
/// positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Scores a predicted binary keep mask against the ground-truth keep mask.
///
/// Zero-denominator conventions: precision, recall and IoU are 1 when
/// neither side has positives and 0 when exactly one side is empty.
pub fn mask_metrics(pred: &MaskMap, gt: &MaskMap) -> Result<MaskMetrics, RasterError> {
    if pred.dims() != gt.dims() {
        return Err(RasterError::ShapeMismatch {
            context: "mask_metrics",
            expected_w: gt.width,
            expected_h: gt.height,
            got_w: pred.width,
            got_h: pred.height,
        });
    }
    pred.is_binary()?;
    gt.is_binary()?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (p, g) in pred.data.iter().zip(&gt.data) {
        // Keep polarity inverts: positive = transient = 0.
        match (*p == 0.0, *g == 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let total = (tp + fp + tn + fn_) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let pred_empty = tp + fp == 0;
    let gt_empty = tp + fn_ == 0;
    let (precision, recall, iou) = if pred_empty && gt_empty {
        (1.0, 1.0, 1.0)
    } else if pred_empty || gt_empty {
        (0.0, 0.0, 0.0)
    } else {
        (
            tp as f64 / (tp + fp) as f64,
            tp as f64 / (tp + fn_) as f64,
            tp as f64 / (tp + fp + fn_) as f64,
        )
    };
    Ok(MaskMetrics { accuracy, precision, recall, iou })
}

/// PSNR/SSIM restricted to a pixel region; `None` when the region is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub pixels: usize,
}

/// Image metrics inside the ground-truth transient region and outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratifiedEntry {
    pub inside: Option<RegionMetrics>,
    pub outside: Option<RegionMetrics>,
}

fn region_metrics(
    render: &Image,
    reference: &Image,
    ssim_map: &ScalarRaster,
    select: impl Fn(usize) -> bool,
) -> Option<RegionMetrics> {
    let mut mse = 0.0;
    let mut ssim_sum = 0.0;
    let mut count = 0usize;
    for i in 0..render.width * render.height {
        if !select(i) {
            continue;
        }
        for c in 0..3 {
            let d = render.data[i * 3 + c] - reference.data[i * 3 + c];
            mse += d * d;
        }
        ssim_sum += ssim_map.data[i];
        count += 1;
    }
    if count == 0 {
        return None;
    }
    mse /= (count * 3) as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Some(RegionMetrics { psnr, ssim: ssim_sum / count as f64, pixels: count })
}

/// Region-stratified comparison of a render against the clean static
/// reference. SSIM is the masked average of the full-image per-pixel map.
pub fn stratified_metrics(
    render: &Image,
    clean_static: &Image,
    gt_transient_mask: &MaskMap,
) -> Result<StratifiedEntry, RasterError> {
    let ssim_out = ssim(clean_static, render)?;
    let inside = region_metrics(render, clean_static, &ssim_out.map, |i| {
        gt_transient_mask.data[i] == 0.0
    });
    let outside = region_metrics(render, clean_static, &ssim_out.map, |i| {
        gt_transient_mask.data[i] != 0.0
    });
    Ok(StratifiedEntry { inside, outside })
}

/// Instance-snapped refinement of a predicted soft mask: the prediction is
/// treated as the feature-consistency map inside the usual mask-filtering
/// step (per-instance means, dual thresholds, dilation).
pub fn refine_predicted_mask(
    predicted: &MaskMap,
    instances: &InstanceSet,
    l1: &ScalarRaster,
    tau_keep: f64,
    tau_l1: f64,
    dilation_radius: u32,
) -> Result<MaskMap, RasterError> {
    let mut stats = Vec::with_capacity(instances.instances.len());
    for instance in &instances.instances {
        let (mean_keep, mean_l1) = instance_stats(predicted, l1, instance)?;
        stats.push((instance.id, mean_keep, mean_l1));
    }
    let retained = filter_instances(&stats, tau_keep, tau_l1);
    let union = instances.suppression_mask(&retained);
    dilate_transient(&union, dilation_radius)
}

/// The named rows mirroring the module-comparison protocol.
pub fn default_ablation_rows() -> Vec<&'static str> {
    vec![
        "base",
        "base+pm",
        "dd",
        "dd+pm",
        "dd+mlp-norobust",
        "dd+mlp-noprior",
        "dd+mlp",
        "dd+mlp+depthreg",
    ]
}

/// Translates a '+'-separated toggle row into a run configuration. Every row
/// starts from masking off, standard densification and no depth term, then
/// applies its toggles.
pub fn ablation_config(base: &RunConfig, row: &str) -> Result<RunConfig, EvalError> {
    let mut config = base.clone();
    config.stage2_mask_mode = MaskMode::Off;
    config.delayed_densification = false;
    config.lambda_depth = 0.0;
    let mut mask_toggle: Option<&'static str> = None;
    let mut set_mask = |mode: MaskMode, name: &'static str, config: &mut RunConfig| {
        if let Some(prev) = mask_toggle {
            return Err(EvalError::ConflictingToggles { row: row.to_string(), a: prev, b: name });
        }
        mask_toggle = Some(name);
        config.stage2_mask_mode = mode;
        Ok(())
    };
    for toggle in row.split('+') {
        match toggle.trim() {
            "base" => {}
            "pm" => set_mask(MaskMode::Pseudo, "pm", &mut config)?,
            "mlp" => set_mask(MaskMode::Mlp, "mlp", &mut config)?,
            "mlp-noprior" => {
                set_mask(MaskMode::Mlp, "mlp-noprior", &mut config)?;
                config.lambda_prior = 0.0;
            }
            "mlp-norobust" => {
                set_mask(MaskMode::Mlp, "mlp-norobust", &mut config)?;
                config.lambda_robust = 0.0;
            }
            "dd" => config.delayed_densification = true,
            "depthreg" => config.lambda_depth = base.lambda_depth,
            other => return Err(EvalError::UnknownToggle(other.to_string())),
        }
    }
    Ok(config)
}

/// One evaluated ablation configuration.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    /// Mean PSNR of the final renders against the clean static references.
    pub psnr: f64,
    /// Mean SSIM against the clean static references.
    pub ssim: f64,
    /// Binarized final-mask quality; absent when the row trains unmasked.
    pub mask: Option<MaskMetrics>,
}

/// Runs every named configuration with the shared seed and scores it
/// against the clean static references.
pub fn ablation_grid(
    views: &[ViewFrame],
    priors: &[PseudoPrior],
    base: &RunConfig,
    rows: &[&str],
) -> Result<Vec<AblationRow>, EvalError> {
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let config = ablation_config(base, row)?;
        let run = train_stage2(views, priors, None, &config)
            .map_err(|source| EvalError::RowFailed { row: row.to_string(), source })?;
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        let mut mask_acc = [0.0; 4];
        for (vi, view) in views.iter().enumerate() {
            psnr_sum += psnr(&view.clean_static, &run.renders[vi])?;
            ssim_sum += ssim(&view.clean_static, &run.renders[vi])?.mean;
            if config.stage2_mask_mode != MaskMode::Off {
                let m = mask_metrics(&run.masks[vi].binarized(0.5), &view.gt_transient_mask)?;
                mask_acc[0] += m.accuracy;
                mask_acc[1] += m.precision;
                mask_acc[2] += m.recall;
                mask_acc[3] += m.iou;
            }
        }
        let n = views.len() as f64;
        out.push(AblationRow {
            name: row.to_string(),
            psnr: psnr_sum / n,
            ssim: ssim_sum / n,
            mask: (config.stage2_mask_mode != MaskMode::Off).then(|| MaskMetrics {
                accuracy: mask_acc[0] / n,
                precision: mask_acc[1] / n,
                recall: mask_acc[2] / n,
                iou: mask_acc[3] / n,
            }),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary_mask(seed: u64, w: usize, h: usize, p: f64) -> MaskMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MaskMap {
            width: w,
            height: h,
            data: (0..w * h).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 }).collect(),
        }
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let gt = random_binary_mask(1, 8, 8, 0.3);
        let m = mask_metrics(&gt, &gt).unwrap();
        assert_eq!(m, MaskMetrics { accuracy: 1.0, precision: 1.0, recall: 1.0, iou: 1.0 });
    }

    #[test]
    fn all_keep_prediction_has_zero_recall() {
        let gt = random_binary_mask(2, 8, 8, 0.3);
        let pred = MaskMap::all_keep(8, 8);
        let m = mask_metrics(&pred, &gt).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.iou, 0.0);
    }

    #[test]
    fn both_empty_scores_ones() {
        let keep = MaskMap::all_keep(4, 4);
        let m = mask_metrics(&keep, &keep).unwrap();
        assert_eq!(m, MaskMetrics { accuracy: 1.0, precision: 1.0, recall: 1.0, iou: 1.0 });
    }

    #[test]
    fn metrics_match_confusion_oracle() {
        let gt = random_binary_mask(3, 12, 9, 0.4);
        let pred = random_binary_mask(4, 12, 9, 0.35);
        let m = mask_metrics(&pred, &gt).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..12 * 9 {
            let p = pred.data[i] == 0.0;
            let g = gt.data[i] == 0.0;
            match (p, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        assert!((m.accuracy - (tp + tn) / (12.0 * 9.0)).abs() < 1e-12);
        assert!((m.precision - tp / (tp + fp)).abs() < 1e-12);
        assert!((m.recall - tp / (tp + fn_)).abs() < 1e-12);
        assert!((m.iou - tp / (tp + fp + fn_)).abs() < 1e-12);
        // Identity: IoU = 1 / (1/precision + 1/recall - 1).
        let from_pr = 1.0 / (1.0 / m.precision + 1.0 / m.recall - 1.0);
        assert!((m.iou - from_pr).abs() < 1e-12);
    }

    #[test]
    fn rejects_soft_masks() {
        let soft = MaskMap::new(4, 4, 0.5);
        let gt = MaskMap::all_keep(4, 4);
        assert!(mask_metrics(&soft, &gt).is_err());
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        for v in &mut img.data {
            *v = rng.gen();
        }
        img
    }

    #[test]
    fn exact_render_gives_infinite_psnr_both_regions() {
        let img = random_image(5, 16, 16);
        let mask = random_binary_mask(6, 16, 16, 0.4);
        let s = stratified_metrics(&img, &img, &mask).unwrap();
        assert!(s.inside.unwrap().psnr.is_infinite());
        assert!(s.outside.unwrap().psnr.is_infinite());
    }

    #[test]
    fn corruption_inside_leaves_outside_psnr_alone() {
        let clean = random_image(7, 16, 16);
        let mask = random_binary_mask(8, 16, 16, 0.3);
        let mut corrupted = clean.clone();
        for i in 0..16 * 16 {
            if mask.data[i] == 0.0 {
                for c in 0..3 {
                    corrupted.data[i * 3 + c] = 1.0 - corrupted.data[i * 3 + c];
                }
            }
        }
        let s = stratified_metrics(&corrupted, &clean, &mask).unwrap();
        assert!(s.outside.unwrap().psnr.is_infinite(), "outside pixels untouched");
        assert!(s.inside.unwrap().psnr.is_finite());
    }

    #[test]
    fn stratified_pixel_counts_sum_to_total() {
        let clean = random_image(9, 16, 12);
        let render = random_image(10, 16, 12);
        let mask = random_binary_mask(11, 16, 12, 0.25);
        let s = stratified_metrics(&render, &clean, &mask).unwrap();
        let total = s.inside.map_or(0, |r| r.pixels) + s.outside.map_or(0, |r| r.pixels);
        assert_eq!(total, 16 * 12);
    }

    #[test]
    fn stratified_region_means_match_masked_loop() {
        let clean = random_image(12, 16, 16);
        let render = random_image(13, 16, 16);
        let mask = random_binary_mask(14, 16, 16, 0.4);
        let s = stratified_metrics(&render, &clean, &mask).unwrap();
        let mut mse = 0.0;
        let mut n = 0.0;
        for i in 0..16 * 16 {
            if mask.data[i] == 0.0 {
                for c in 0..3 {
                    let d = render.data[i * 3 + c] - clean.data[i * 3 + c];
                    mse += d * d;
                }
                n += 3.0;
            }
        }
        let expect = 10.0 * (n / mse).log10();
        assert!((s.inside.unwrap().psnr - expect).abs() < 1e-9);
    }

    #[test]
    fn empty_region_is_absent() {
        let img = random_image(15, 16, 16);
        let keep = MaskMap::all_keep(16, 16);
        let s = stratified_metrics(&img, &img, &keep).unwrap();
        assert!(s.inside.is_none());
        assert!(s.outside.is_some());
    }

    #[test]
    fn refine_binary_instance_aligned_mask_is_fixed_point() {
        // A mask that already equals the union of some instances, with a
        // residual consistent with it, survives a dilation-0 refinement
        // unchanged.
        let mut set = InstanceSet::new(8, 8);
        set.instances.push(Instance { id: 0, pixels: (0..8).collect() });
        set.instances.push(Instance { id: 1, pixels: (32..48).collect() });
        let mut mask = MaskMap::all_keep(8, 8);
        let mut l1 = MaskMap::new(8, 8, 0.0);
        for p in 32..48 {
            mask.data[p] = 0.0;
            l1.data[p] = 0.4;
        }
        let refined = refine_predicted_mask(&mask, &set, &l1, 0.5, 0.05, 0).unwrap();
        assert_eq!(refined.data, mask.data);
    }

    #[test]
    fn refine_empty_instance_set_keeps_everything() {
        let set = InstanceSet::new(8, 8);
        let mask = random_binary_mask(16, 8, 8, 0.5);
        let l1 = MaskMap::new(8, 8, 0.5);
        let refined = refine_predicted_mask(&mask, &set, &l1, 0.5, 0.05, 2).unwrap();
        assert!(refined.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ablation_toggles_parse() {
        let base = RunConfig::desk();
        let c = ablation_config(&base, "base").unwrap();
        assert_eq!(c.stage2_mask_mode, MaskMode::Off);
        assert!(!c.delayed_densification);
        assert_eq!(c.lambda_depth, 0.0);

        let c = ablation_config(&base, "dd+mlp+depthreg").unwrap();
        assert_eq!(c.stage2_mask_mode, MaskMode::Mlp);
        assert!(c.delayed_densification);
        assert_eq!(c.lambda_depth, base.lambda_depth);

        let c = ablation_config(&base, "dd+mlp-noprior").unwrap();
        assert_eq!(c.lambda_prior, 0.0);
        let c = ablation_config(&base, "dd+mlp-norobust").unwrap();
        assert_eq!(c.lambda_robust, 0.0);

        assert!(matches!(
            ablation_config(&base, "dd+warp"),
            Err(EvalError::UnknownToggle(t)) if t == "warp"
        ));
        assert!(matches!(
            ablation_config(&base, "pm+mlp"),
            Err(EvalError::ConflictingToggles { .. })
        ));
    }

    #[test]
    fn single_row_grid_is_deterministic() {
        use crate::providers::ProviderSet;
        use crate::scenegen::generate;
        let mut config = RunConfig::desk();
        config.seed = 500;
        config.views = 4;
        config.image_width = 32;
        config.image_height = 24;
        config.static_objects = 4;
        config.transients_per_view = 1;
        config.stage2_iters = 120;
        config.init_gaussians = 32;
        config.max_gaussians = 100;
        let (mut views, _) = generate(&config.scene_spec()).unwrap();
        let providers = ProviderSet::builtin(config.seed);
        providers.prime(&mut views).unwrap();
        let priors: Vec<PseudoPrior> = views
            .iter()
            .map(|v| PseudoPrior {
                view_id: v.view_id,
                mask: v.gt_transient_mask.clone(),
                table: Vec::new(),
                tau_sim: config.tau_sim,
                tau_l1: config.tau_l1,
                dilation_radius: 1,
            })
            .collect();
        let rows = ["base", "base+pm"];
        let a = ablation_grid(&views, &priors, &config, &rows).unwrap();
        let b = ablation_grid(&views, &priors, &config, &rows).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.psnr, y.psnr);
            assert_eq!(x.ssim, y.ssim);
        }
        assert!(a[0].mask.is_none());
        assert!(a[1].mask.is_some());
    }

    #[test]
    fn refine_snaps_noisy_mask_to_instances() {
        // Noisy per-pixel prediction over a clear instance: refinement
        // recovers the exact instance support.
        let mut set = InstanceSet::new(16, 16);
        let inst_pixels: Vec<u32> = (0..256u32).filter(|p| (p % 16) < 5 && (p / 16) < 5).collect();
        set.instances.push(Instance { id: 0, pixels: inst_pixels.clone() });
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pred = MaskMap::all_keep(16, 16);
        let mut l1 = MaskMap::new(16, 16, 0.01);
        for &p in &inst_pixels {
            // 80% of instance pixels predicted transient, plus residual there.
            if rng.gen::<f64>() < 0.8 {
                pred.data[p as usize] = 0.0;
            }
            l1.data[p as usize] = 0.3;
        }
        // A few false positives outside.
        for p in [200usize, 220, 240] {
            pred.data[p] = 0.0;
        }
        let refined = refine_predicted_mask(&pred, &set, &l1, 0.5, 0.05, 0).unwrap();
        for p in 0..256u32 {
            let expect = if inst_pixels.contains(&p) { 0.0 } else { 1.0 };
            assert_eq!(refined.data[p as usize], expect, "pixel {p}");
        }
    }
}
