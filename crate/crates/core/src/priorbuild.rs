//! Consolidates first-pass failures into object-level pseudo-mask priors:
//! feature cosine similarity between ground truth and render, per-instance
//! photometric and consistency statistics, dual-threshold retention and a
//! slight dilation. Retained regions are deliberately high-recall; over-
//! masking static content costs some supervision, letting transients leak
//! into geometry costs the reconstruction.

use thiserror::Error;

use crate::config::RunConfig;
use crate::providers::{cosine_map, ProviderError, ProviderSet};
use crate::raster::{
    dilate_transient, l1_residual_map, minmax_normalize, FeatureMap, Image, Instance, MaskMap,
    RasterError, ScalarRaster,
};
use crate::scenegen::ViewFrame;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("view {view}: {source}")]
    View {
        view: usize,
        #[source]
        source: ProviderError,
    },
    #[error("view {view}: features not primed")]
    MissingFeatures { view: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Per-instance retention record.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: u32,
    /// Mean normalized feature similarity over the instance.
    pub mu_m: f64,
    /// Mean photometric residual over the instance.
    pub l1_m: f64,
    pub retained: bool,
}

/// The per-view pseudo-mask prior with its provenance table.
#[derive(Debug, Clone)]
pub struct PseudoPrior {
    pub view_id: usize,
    /// Binary keep-polarity mask; 0 marks retained (transient) regions.
    pub mask: MaskMap,
    pub table: Vec<InstanceRecord>,
    pub tau_sim: f64,
    pub tau_l1: f64,
    pub dilation_radius: u32,
}

/// Pixel-wise feature cosine similarity and its min-max normalization.
pub fn similarity_map(
    f_gt: &FeatureMap,
    f_render: &FeatureMap,
) -> Result<(ScalarRaster, ScalarRaster), RasterError> {
    let s = cosine_map(f_gt, f_render)?;
    let s_hat = minmax_normalize(&s)?;
    Ok((s, s_hat))
}

/// Means of the normalized similarity and the photometric residual over one
/// instance.
pub fn instance_stats(
    s_hat: &ScalarRaster,
    l1: &ScalarRaster,
    instance: &Instance,
) -> Result<(f64, f64), RasterError> {
    if instance.pixels.is_empty() {
        return Err(RasterError::EmptyInstance { id: instance.id });
    }
    let inv = 1.0 / instance.pixels.len() as f64;
    let mut mu_m = 0.0;
    let mut l1_m = 0.0;
    for &p in &instance.pixels {
        mu_m += s_hat.data[p as usize] * inv;
        l1_m += l1.data[p as usize] * inv;
    }
    Ok((mu_m, l1_m))
}

/// Dual-threshold retention: an instance becomes a transient prior when it
/// simultaneously shows low feature consistency and high photometric error.
/// Boundary equality retains.
pub fn filter_instances(records: &[(u32, f64, f64)], tau_sim: f64, tau_l1: f64) -> Vec<u32> {
    records
        .iter()
        .filter(|(_, mu_m, l1_m)| *mu_m <= tau_sim && *l1_m >= tau_l1)
        .map(|(id, _, _)| *id)
        .collect()
}

/// Builds the pseudo-mask prior for one view from its first-pass render.
pub fn build_view_prior(
    view: &ViewFrame,
    render: &Image,
    providers: &ProviderSet,
    config: &RunConfig,
) -> Result<PseudoPrior, PriorError> {
    let f_gt = view
        .features
        .as_ref()
        .ok_or(PriorError::MissingFeatures { view: view.view_id })?;
    let f_render = providers
        .features_for_render(view.view_id, render)
        .map_err(|source| PriorError::View { view: view.view_id, source })?;
    let (_, s_hat) = similarity_map(f_gt, &f_render)?;
    let l1 = l1_residual_map(&view.gt_image, render)?;
    let instances = providers
        .instances_for(view, Some(&l1))
        .map_err(|source| PriorError::View { view: view.view_id, source })?;

    let mut stats = Vec::with_capacity(instances.instances.len());
    for instance in &instances.instances {
        let (mu_m, l1_m) = instance_stats(&s_hat, &l1, instance)?;
        stats.push((instance.id, mu_m, l1_m));
    }
    let retained = filter_instances(&stats, config.tau_sim, config.tau_l1);
    let table = stats
        .iter()
        .map(|&(id, mu_m, l1_m)| InstanceRecord { id, mu_m, l1_m, retained: retained.contains(&id) })
        .collect();

    let union = instances.suppression_mask(&retained);
    let mask = dilate_transient(&union, config.dilation_radius as u32)?;
    Ok(PseudoPrior {
        view_id: view.view_id,
        mask,
        table,
        tau_sim: config.tau_sim,
        tau_l1: config.tau_l1,
        dilation_radius: config.dilation_radius as u32,
    })
}

/// Builds priors for every view from the matching first-pass renders.
pub fn build_pseudo_priors(
    views: &[ViewFrame],
    renders: &[Image],
    providers: &ProviderSet,
    config: &RunConfig,
) -> Result<Vec<PseudoPrior>, PriorError> {
    assert_eq!(views.len(), renders.len(), "one render per view");
    views
        .iter()
        .zip(renders)
        .map(|(view, render)| build_view_prior(view, render, providers, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
        use crate::scenegen::{generate, SceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_features_give_constant_half() {
        let mut f = FeatureMap::new(6, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in &mut f.data {
            *v = rng.gen_range(0.1..1.0);
        }
        let (s, s_hat) = similarity_map(&f, &f).unwrap();
        assert!(s.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(s_hat.data.iter().all(|&v| v == 0.5), "constant map normalizes to 0.5");
    }

    #[test]
    fn opposite_pixel_maps_to_zero() {
        let mut a = FeatureMap::new(4, 1, 2);
        let mut b = FeatureMap::new(4, 1, 2);
        for x in 0..4 {
            a.vector_mut(x, 0).copy_from_slice(&[1.0, 0.0]);
            b.vector_mut(x, 0).copy_from_slice(&[1.0, 0.0]);
        }
        b.vector_mut(2, 0).copy_from_slice(&[-1.0, 0.0]);
        let (_, s_hat) = similarity_map(&a, &b).unwrap();
        assert_eq!(s_hat.get(2, 0), 0.0);
        for x in [0, 1, 3] {
            assert_eq!(s_hat.get(x, 0), 1.0);
        }
    }

    #[test]
    fn similarity_matches_dot_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = FeatureMap::new(5, 5, 4);
        let mut b = FeatureMap::new(5, 5, 4);
        for v in a.data.iter_mut().chain(b.data.iter_mut()) {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (s, _) = similarity_map(&a, &b).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let va = a.vector(x, y);
                let vb = b.vector(x, y);
                let dot: f64 = va.iter().zip(vb).map(|(p, q)| p * q).sum();
                let na: f64 = va.iter().map(|p| p * p).sum::<f64>().sqrt();
                let nb: f64 = vb.iter().map(|q| q * q).sum::<f64>().sqrt();
                assert!((s.get(x, y) - dot / (na * nb)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn instance_stats_trivial_and_oracle() {
        let s_hat = MaskMap::new(4, 2, 0.4);
        let l1 = MaskMap::new(4, 2, 0.08);
        let inst = Instance { id: 0, pixels: vec![0, 3, 5] };
        let (mu, l) = instance_stats(&s_hat, &l1, &inst).unwrap();
        assert!((mu - 0.4).abs() < 1e-15 && (l - 0.08).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s_hat = MaskMap { width: 6, height: 6, data: (0..36).map(|_| rng.gen()).collect() };
        let l1 = MaskMap { width: 6, height: 6, data: (0..36).map(|_| rng.gen()).collect() };
        let pixels: Vec<u32> = (0..36).filter(|_| rng.gen::<f64>() < 0.5).collect();
        let inst = Instance { id: 1, pixels: pixels.clone() };
        let (mu, l) = instance_stats(&s_hat, &l1, &inst).unwrap();
        let n = pixels.len() as f64;
        let mu_expect: f64 = pixels.iter().map(|&p| s_hat.data[p as usize]).sum::<f64>() / n;
        let l_expect: f64 = pixels.iter().map(|&p| l1.data[p as usize]).sum::<f64>() / n;
        assert!((mu - mu_expect).abs() < 1e-12);
        assert!((l - l_expect).abs() < 1e-12);
    }

    #[test]
    fn reference_threshold_examples() {
        let records = vec![(0u32, 0.70, 0.06), (1, 0.80, 0.06), (2, 0.70, 0.04)];
        let retained = filter_instances(&records, 0.75, 0.05);
        assert_eq!(retained, vec![0], "similarity too high and residual too low must drop");
        // Boundary equality retains.
        let boundary = vec![(5u32, 0.75, 0.05)];
        assert_eq!(filter_instances(&boundary, 0.75, 0.05), vec![5]);
    }

    #[test]
    fn filtering_is_monotone_in_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records: Vec<(u32, f64, f64)> =
            (0..32).map(|id| (id, rng.gen(), rng.gen::<f64>() * 0.2)).collect();
        let base = filter_instances(&records, 0.5, 0.08);
        let looser_sim = filter_instances(&records, 0.6, 0.08);
        let looser_l1 = filter_instances(&records, 0.5, 0.05);
        for id in &base {
            assert!(looser_sim.contains(id), "raising tau_sim must not drop {id}");
            assert!(looser_l1.contains(id), "lowering tau_l1 must not drop {id}");
        }
    }

    fn mini_views(seed: u64, transients: usize) -> Vec<ViewFrame> {
        let spec = SceneSpec {
            view_count: 3,
            image_width: 48,
            image_height: 36,
            static_objects: 4,
            transients_per_view: transients,
            ..SceneSpec::desk_default(seed)
        };
        let (mut views, _) = generate(&spec).unwrap();
        let providers = ProviderSet::builtin(seed);
        providers.prime(&mut views).unwrap();
        views
    }

    fn mini_config() -> RunConfig {
        let mut c = RunConfig::desk();
        c.image_width = 48;
        c.image_height = 36;
        c
    }

    #[test]
    fn perfect_renders_keep_everything() {
        // Rendering the gt image itself: no residual, no retention.
        let views = mini_views(21, 0);
        let providers = ProviderSet::builtin(21);
        let renders: Vec<Image> = views.iter().map(|v| v.gt_image.clone()).collect();
        let priors = build_pseudo_priors(&views, &renders, &providers, &mini_config()).unwrap();
        for prior in &priors {
            assert!(prior.mask.data.iter().all(|&v| v == 1.0));
            assert!(prior.table.iter().all(|r| !r.retained));
        }
    }

    #[test]
    fn clean_static_renders_flag_transients() {
        // The ideal stage-one outcome: renders equal the clean static image,
        // so transient instances show high residual and low similarity.
        let views = mini_views(22, 1);
        let providers = ProviderSet::builtin(22);
        let renders: Vec<Image> = views.iter().map(|v| v.clean_static.clone()).collect();
        let priors = build_pseudo_priors(&views, &renders, &providers, &mini_config()).unwrap();
        for (view, prior) in views.iter().zip(&priors) {
            let has_transient = view.gt_transient_mask.data.iter().any(|&v| v == 0.0);
            if !has_transient {
                continue;
            }
            let retained: Vec<u32> =
                prior.table.iter().filter(|r| r.retained).map(|r| r.id).collect();
            assert!(!retained.is_empty(), "view {} retained nothing", view.view_id);
            // Every suppressed gt pixel is suppressed in the prior.
            for (i, &keep) in view.gt_transient_mask.data.iter().enumerate() {
                if keep == 0.0 {
                    assert_eq!(prior.mask.data[i], 0.0, "pixel {i} must be suppressed");
                }
            }
        }
    }

    #[test]
    fn dilation_grows_the_transient_region() {
        let views = mini_views(23, 1);
        let providers = ProviderSet::builtin(23);
        let renders: Vec<Image> = views.iter().map(|v| v.clean_static.clone()).collect();
        let mut cfg0 = mini_config();
        cfg0.dilation_radius = 0;
        let mut cfg2 = mini_config();
        cfg2.dilation_radius = 2;
        let p0 = build_pseudo_priors(&views, &renders, &providers, &cfg0).unwrap();
        let p2 = build_pseudo_priors(&views, &renders, &providers, &cfg2).unwrap();
        for (a, b) in p0.iter().zip(&p2) {
            for (v0, v2) in a.mask.data.iter().zip(&b.mask.data) {
                assert!(v2 <= v0, "radius-2 transient region must be a superset");
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let views = mini_views(24, 1);
        let providers = ProviderSet::builtin(24);
        let renders: Vec<Image> = views.iter().map(|v| v.clean_static.clone()).collect();
        let a = build_pseudo_priors(&views, &renders, &providers, &mini_config()).unwrap();
        let b = build_pseudo_priors(&views, &renders, &providers, &mini_config()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mask.data, y.mask.data);
            assert_eq!(x.table, y.table);
        }
    }
}
