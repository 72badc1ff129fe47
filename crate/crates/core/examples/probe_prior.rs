// Calibration probe: pseudo-mask quality on desk-scale data when stage one
// is idealized (renders equal the clean static images). Upper bound for the
// end-to-end numbers.
use priorsplat_core::config::RunConfig;
use priorsplat_core::evalkit::mask_metrics;
use priorsplat_core::priorbuild::build_view_prior;
use priorsplat_core::providers::ProviderSet;
use priorsplat_core::scenegen::generate;

fn main() {
    let c = RunConfig::desk();
    let (mut views, _) = generate(&c.scene_spec()).unwrap();
    let providers = ProviderSet::builtin(c.seed);
    providers.prime(&mut views).unwrap();

    let mut worst_iou = f64::INFINITY;
    let mut worst_recall = f64::INFINITY;
    let (mut iou_sum, mut rec_sum, mut prec_sum) = (0.0, 0.0, 0.0);
    for view in &views {
        let render = view.clean_static.clone();
        let prior = build_view_prior(view, &render, &providers, &c).unwrap();
        let m = mask_metrics(&prior.mask, &view.gt_transient_mask).unwrap();
        iou_sum += m.iou;
        rec_sum += m.recall;
        prec_sum += m.precision;
        worst_iou = worst_iou.min(m.iou);
        worst_recall = worst_recall.min(m.recall);
        if m.iou < 0.8 || m.recall < 0.9 {
            println!(
                "view {:2}: iou={:.3} recall={:.3} precision={:.3}  <-- below target",
                view.view_id, m.iou, m.recall, m.precision
            );
            for r in &prior.table {
                let inst =
                    view.gt_instances.instances.iter().find(|i| i.id == r.id).unwrap();
                let overlap = inst
                    .pixels
                    .iter()
                    .filter(|&&p| view.gt_transient_mask.data[p as usize] == 0.0)
                    .count() as f64
                    / inst.pixels.len() as f64;
                println!(
                    "   inst {:2} ({:4} px, {:3.0}% transient): mu_m={:.3} l1_m={:.3} retained={}",
                    r.id,
                    inst.pixels.len(),
                    overlap * 100.0,
                    r.mu_m,
                    r.l1_m,
                    r.retained
                );
            }
        }
    }
    let n = views.len() as f64;
    println!(
        "mean iou={:.3} recall={:.3} precision={:.3} | worst iou={:.3} worst recall={:.3}",
        iou_sum / n,
        rec_sum / n,
        prec_sum / n,
        worst_iou,
        worst_recall
    );
}
