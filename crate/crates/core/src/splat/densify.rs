//! Clone/split/prune scene maintenance driven by accumulated positional
//! gradients, with optimizer state kept aligned through every edit.

use super::{Gaussian2D, GaussianScene, PARAMS_PER_GAUSSIAN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    /// Mean screen-space positional gradient above which a gaussian densifies.
    pub grad_threshold: f64,
    /// World-space scale separating clone (small) from split (large).
    pub size_threshold: f64,
    /// Opacity below which a gaussian is pruned.
    pub opacity_floor: f64,
    /// Hard cap on primitive count; clone/split are skipped at the cap.
    pub max_gaussians: usize,
}

/// What one maintenance pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

const SPLIT_SCALE_DIVISOR: f64 = 1.6;
const SPLIT_OFFSET_SIGMA: f64 = 0.5;

impl GaussianScene {
    /// Clones small high-gradient gaussians in place, splits large ones into
    /// two children (scales divided by 1.6, means offset +-0.5 sigma along
    /// the major axis), prunes low-opacity gaussians and resets the
    /// densification accumulators.
    pub fn densify_and_prune(&mut self, cfg: &DensifyConfig) -> DensifyReport {
        let mut report = DensifyReport::default();
        let n = self.len();
        let mut remove = vec![false; n];
        let mut additions: Vec<Gaussian2D> = Vec::new();

        for i in 0..n {
            let hits = self.hit_count[i];
            if hits == 0 {
                continue;
            }
            let mean_grad = self.grad_accum[i] / hits as f64;
            if mean_grad <= cfg.grad_threshold {
                continue;
            }
            if self.gaussians.len() + additions.len() >= cfg.max_gaussians {
                break;
            }
            let g = self.gaussians[i];
            let scales = g.scales();
            let s_max = scales[0].max(scales[1]);
            if s_max <= cfg.size_threshold {
                additions.push(g);
                report.cloned += 1;
            } else {
                let (c, s) = (g.theta.cos(), g.theta.sin());
                let axis = if scales[0] >= scales[1] { [c, s] } else { [-s, c] };
                let shrink = SPLIT_SCALE_DIVISOR.ln();
                for sign in [1.0, -1.0] {
                    let mut child = g;
                    child.mu[0] += sign * SPLIT_OFFSET_SIGMA * s_max * axis[0];
                    child.mu[1] += sign * SPLIT_OFFSET_SIGMA * s_max * axis[1];
                    child.log_scale[0] -= shrink;
                    child.log_scale[1] -= shrink;
                    additions.push(child);
                }
                remove[i] = true;
                report.split += 1;
            }
        }

        for (i, g) in self.gaussians.iter().enumerate() {
            if !remove[i] && g.opacity() < cfg.opacity_floor {
                remove[i] = true;
                report.pruned += 1;
            }
        }

        // Compact surviving rows, then append additions with fresh state.
        let mut gaussians = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let mut m1 = Vec::with_capacity(n * PARAMS_PER_GAUSSIAN);
        let mut m2 = Vec::with_capacity(n * PARAMS_PER_GAUSSIAN);
        for i in 0..n {
            if remove[i] {
                continue;
            }
            gaussians.push(self.gaussians[i]);
            ids.push(self.ids[i]);
            m1.extend_from_slice(&self.moment1[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN]);
            m2.extend_from_slice(&self.moment2[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN]);
        }
        for g in additions {
            gaussians.push(g);
            ids.push(self.next_id);
            self.next_id += 1;
            m1.extend_from_slice(&[0.0; PARAMS_PER_GAUSSIAN]);
            m2.extend_from_slice(&[0.0; PARAMS_PER_GAUSSIAN]);
        }

        let count = gaussians.len();
        self.gaussians = gaussians;
        self.ids = ids;
        self.moment1 = m1;
        self.moment2 = m2;
        self.grad_accum = vec![0.0; count];
        self.hit_count = vec![0; count];
        self.generation += 1;
        report
    }
}
