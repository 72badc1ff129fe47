// Calibration probe: full desk-profile pipeline with timings, quality
// numbers and scene-size trajectories, printed for tuning.
use std::time::Instant;

use priorsplat_core::config::RunConfig;
use priorsplat_core::evalkit::{ablation_config, mask_metrics, refine_predicted_mask, stratified_metrics};
use priorsplat_core::priorbuild::build_pseudo_priors;
use priorsplat_core::providers::ProviderSet;
use priorsplat_core::raster::{l1_residual_map, psnr};
use priorsplat_core::scenegen::{generate, read_dataset, write_dataset};
use priorsplat_core::stage1::train_stage1;
use priorsplat_core::stage2::train_stage2;

fn main() {
    let config = RunConfig::desk();
    let t0 = Instant::now();
    // Round-trip through disk so images carry the same 8-bit quantization
    // the real pipeline trains on.
    let tmp = std::env::temp_dir().join("priorsplat_probe_dataset");
    let (views_mem, static_scene) = generate(&config.scene_spec()).unwrap();
    write_dataset(&tmp, &views_mem, &static_scene).unwrap();
    let (mut views, _) = read_dataset(&tmp).unwrap();
    let providers = ProviderSet::builtin(config.seed);
    providers.prime(&mut views).unwrap();
    println!("generate+prime: {:.1?}", t0.elapsed());

    let t1 = Instant::now();
    let s1 = train_stage1(&views, &providers, &config).unwrap();
    println!("stage1: {:.1?}, scene {} gaussians", t1.elapsed(), s1.scene.len());
    let mut psnr_clean = 0.0;
    for (r, v) in s1.renders.iter().zip(&views) {
        psnr_clean += psnr(&v.clean_static, r).unwrap();
    }
    println!("stage1 psnr vs clean: {:.2} dB", psnr_clean / views.len() as f64);

    let t2 = Instant::now();
    let priors = build_pseudo_priors(&views, &s1.renders, &providers, &config).unwrap();
    let mut pm = [0.0; 4];
    for (p, v) in priors.iter().zip(&views) {
        let m = mask_metrics(&p.mask, &v.gt_transient_mask).unwrap();
        pm[0] += m.accuracy;
        pm[1] += m.precision;
        pm[2] += m.recall;
        pm[3] += m.iou;
    }
    let n = views.len() as f64;
    println!(
        "priors: {:.1?}, acc={:.3} prec={:.3} recall={:.3} iou={:.3}",
        t2.elapsed(),
        pm[0] / n,
        pm[1] / n,
        pm[2] / n,
        pm[3] / n
    );

    let t3 = Instant::now();
    let s2 = train_stage2(&views, &priors, None, &config).unwrap();
    println!("stage2: {:.1?}, scene {} gaussians", t3.elapsed(), s2.scene.len());

    let mut psnr2 = 0.0;
    let mut raw = [0.0; 4];
    let mut refined_m = [0.0; 4];
    let mut inside = (0.0, 0usize);
    let mut outside = (0.0, 0usize);
    let mut sweep: std::collections::BTreeMap<(u64, u32), [f64; 4]> = Default::default();
    for (vi, v) in views.iter().enumerate() {
        psnr2 += psnr(&v.clean_static, &s2.renders[vi]).unwrap();
        let m = mask_metrics(&s2.masks[vi].binarized(0.5), &v.gt_transient_mask).unwrap();
        raw[0] += m.accuracy;
        raw[1] += m.precision;
        raw[2] += m.recall;
        raw[3] += m.iou;
        let l1 = l1_residual_map(&v.gt_image, &s2.renders[vi]).unwrap();
        let inst = providers.instances_for(v, Some(&l1)).unwrap();
        let rm = refine_predicted_mask(&s2.masks[vi], &inst, &l1, 0.5, config.tau_l1, 0).unwrap();
        let m = mask_metrics(&rm, &v.gt_transient_mask).unwrap();
        refined_m[0] += m.accuracy;
        refined_m[1] += m.precision;
        refined_m[2] += m.recall;
        refined_m[3] += m.iou;
        for (tau, radius) in [(0.5, 1u32), (0.6, 0), (0.75, 0), (0.75, 1)] {
            let rm = refine_predicted_mask(&s2.masks[vi], &inst, &l1, tau, config.tau_l1, radius).unwrap();
            let m = mask_metrics(&rm, &v.gt_transient_mask).unwrap();
            sweep.entry((tau.to_bits(), radius)).and_modify(|e: &mut [f64; 4]| {
                e[0] += m.accuracy;
                e[1] += m.precision;
                e[2] += m.recall;
                e[3] += m.iou;
            }).or_insert([m.accuracy, m.precision, m.recall, m.iou]);
        }
        let s = stratified_metrics(&s2.renders[vi], &v.clean_static, &v.gt_transient_mask).unwrap();
        if let Some(r) = s.inside {
            inside.0 += r.psnr;
            inside.1 += 1;
        }
        if let Some(r) = s.outside {
            outside.0 += r.psnr;
            outside.1 += 1;
        }
    }
    println!("stage2 psnr vs clean: {:.2} dB", psnr2 / n);
    println!(
        "raw mask:     acc={:.3} prec={:.3} recall={:.3} iou={:.3}",
        raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n
    );
    println!(
        "refined mask: acc={:.3} prec={:.3} recall={:.3} iou={:.3}",
        refined_m[0] / n, refined_m[1] / n, refined_m[2] / n, refined_m[3] / n
    );
    println!(
        "stage2 stratified: inside {:.2} dB, outside {:.2} dB",
        inside.0 / inside.1 as f64,
        outside.0 / outside.1 as f64
    );
    for ((tau_bits, radius), m) in &sweep {
        println!(
            "  refine sweep tau={:.2} r={radius}: acc={:.3} prec={:.3} recall={:.3} iou={:.3}",
            f64::from_bits(*tau_bits), m[0] / n, m[1] / n, m[2] / n, m[3] / n
        );
    }

    // Base (unmasked, standard densification) for the ordering checks.
    let t4 = Instant::now();
    let base_cfg = ablation_config(&config, "base").unwrap();
    let base = train_stage2(&views, &priors, None, &base_cfg).unwrap();
    let mut base_psnr = 0.0;
    let mut base_inside = (0.0, 0usize);
    let mut base_outside = (0.0, 0usize);
    for (vi, v) in views.iter().enumerate() {
        base_psnr += psnr(&v.clean_static, &base.renders[vi]).unwrap();
        let s = stratified_metrics(&base.renders[vi], &v.clean_static, &v.gt_transient_mask).unwrap();
        if let Some(r) = s.inside {
            base_inside.0 += r.psnr;
            base_inside.1 += 1;
        }
        if let Some(r) = s.outside {
            base_outside.0 += r.psnr;
            base_outside.1 += 1;
        }
    }
    println!(
        "base: {:.1?}, {} gaussians, psnr {:.2} dB, inside {:.2} dB, outside {:.2} dB",
        t4.elapsed(),
        base.scene.len(),
        base_psnr / n,
        base_inside.0 / base_inside.1 as f64,
        base_outside.0 / base_outside.1 as f64
    );

    let t5 = Instant::now();
    let pm_cfg = ablation_config(&config, "base+pm").unwrap();
    let pm_run = train_stage2(&views, &priors, None, &pm_cfg).unwrap();
    let mut pm_psnr = 0.0;
    for (vi, v) in views.iter().enumerate() {
        pm_psnr += psnr(&v.clean_static, &pm_run.renders[vi]).unwrap();
    }
    println!("base+pm: {:.1?}, psnr {:.2} dB", t5.elapsed(), pm_psnr / n);

    let t6 = Instant::now();
    let ddpm_cfg = ablation_config(&config, "dd+pm").unwrap();
    let ddpm = train_stage2(&views, &priors, None, &ddpm_cfg).unwrap();
    let mut ddpm_psnr = 0.0;
    for (vi, v) in views.iter().enumerate() {
        ddpm_psnr += psnr(&v.clean_static, &ddpm.renders[vi]).unwrap();
    }
    println!("dd+pm: {:.1?}, psnr {:.2} dB", t6.elapsed(), ddpm_psnr / n);

    let t7 = Instant::now();
    let ddmlp_cfg = ablation_config(&config, "dd+mlp").unwrap();
    let ddmlp = train_stage2(&views, &priors, None, &ddmlp_cfg).unwrap();
    let mut ddmlp_psnr = 0.0;
    for (vi, v) in views.iter().enumerate() {
        ddmlp_psnr += psnr(&v.clean_static, &ddmlp.renders[vi]).unwrap();
    }
    println!("dd+mlp: {:.1?}, psnr {:.2} dB", t7.elapsed(), ddmlp_psnr / n);

    println!("total: {:.1?}", t0.elapsed());
}
