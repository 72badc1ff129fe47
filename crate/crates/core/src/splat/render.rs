//! Forward splatting and the analytic backward pass.
//!
//! Forward: gaussians are sorted by increasing depth (ties by id) and
//! composited front to back with `alpha_k = min(0.99, opacity_k * g_k)`,
//! `g = exp(-0.5 * d^T Sigma'^-1 d)`. Contributions with `g < 1/255` are
//! skipped, a 0.5 gray background is composited behind everything, and depth
//! is the transmittance-weighted average (invalid below an accumulated alpha
//! of 1e-4).
//!
//! Backward recomputes the same traversal; suffix sums against the cached
//! per-pixel totals make the pass front-to-back as well, so accumulation
//! order is deterministic.

use crate::raster::{DepthMap, Image, MaskMap, ScalarRaster};

use super::{param, GaussianScene, SplatError, ViewCamera, PARAMS_PER_GAUSSIAN};

/// Background gray composited behind all splats.
pub const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];
/// Alpha is clamped here to keep transmittance gradients finite.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Accumulated-alpha floor below which rendered depth is invalid.
pub const DEPTH_ALPHA_MIN: f64 = 1e-4;
/// Density cutoff `g >= 1/255` expressed on the quadratic form.
const Q_CUTOFF: f64 = 11.090354888959125; // 2 * ln(255)
const MAHALANOBIS_RADIUS: f64 = 3.4; // slightly beyond sqrt(Q_CUTOFF)

/// Screen-space footprint of one gaussian, precomputed per render.
#[derive(Debug, Clone)]
struct ScreenGaussian {
    /// Projected mean, pixels.
    mu: [f64; 2],
    /// Inverse screen covariance (xx, xy, yy).
    inv_cov: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    /// Inclusive pixel bbox, None when fully off-screen.
    bbox: Option<(usize, usize, usize, usize)>,
}

/// Sorted contribution cache returned by [`render`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct RenderCache {
    generation: u64,
    camera: ViewCamera,
    order: Vec<usize>,
    screen: Vec<ScreenGaussian>,
    /// Foreground color sum per pixel (before background compositing).
    fg_rgb: Vec<[f64; 3]>,
    /// Final transmittance per pixel.
    trans_final: Vec<f64>,
    /// Accumulated alpha per pixel.
    alpha_acc: Vec<f64>,
    /// Depth numerator per pixel.
    depth_num: Vec<f64>,
}

/// Rendered rasters plus the backward cache.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub depth: DepthMap,
    /// Accumulated foreground alpha per pixel.
    pub alpha: ScalarRaster,
    pub cache: RenderCache,
}

impl RenderCache {
    /// Per-pixel transmittance left for the background, linear layout.
    pub fn final_transmittance(&self) -> &[f64] {
        &self.trans_final
    }
}

/// Distance of the closest per-pixel quadratic form to the density cutoff,
/// minimized over every gaussian and covered pixel. The renderer's hard
/// `g < 1/255` skip is a genuine discontinuity; finite-difference gradient
/// checks use this margin to sample scenes that keep every contribution
/// safely on one side of it.
pub fn cutoff_margin(scene: &GaussianScene, camera: &ViewCamera) -> f64 {
    let mut margin = f64::INFINITY;
    for g in scene.gaussians() {
        let sg = project(g, camera);
        let Some((x0, x1, y0, y1)) = sg.bbox else { continue };
        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let dx = px - sg.mu[0];
                let dy = py - sg.mu[1];
                let q = sg.inv_cov[0] * dx * dx
                    + 2.0 * sg.inv_cov[1] * dx * dy
                    + sg.inv_cov[2] * dy * dy;
                margin = margin.min((q - Q_CUTOFF).abs());
            }
        }
    }
    margin
}

/// Per-parameter gradients plus densification bookkeeping.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// `len = n * PARAMS_PER_GAUSSIAN`, layout per [`param`].
    pub params: Vec<f64>,
    /// Norm of the screen-space positional gradient per gaussian.
    pub screen_pos_norm: Vec<f64>,
    /// Whether the gaussian contributed to any pixel.
    pub touched: Vec<bool>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![0.0; n * PARAMS_PER_GAUSSIAN],
            screen_pos_norm: vec![0.0; n],
            touched: vec![false; n],
        }
    }
}

fn project(g: &super::Gaussian2D, camera: &ViewCamera) -> ScreenGaussian {
    let mu = camera.world_to_screen(g.mu);
    let l = camera.linear();
    let cov = g.covariance();
    // Sigma' = L * Sigma * L^T
    let c00 = l[0] * cov[0] + l[1] * cov[1];
    let c01 = l[0] * cov[1] + l[1] * cov[2];
    let c10 = l[2] * cov[0] + l[3] * cov[1];
    let c11 = l[2] * cov[1] + l[3] * cov[2];
    let sxx = c00 * l[0] + c01 * l[1];
    let sxy = c00 * l[2] + c01 * l[3];
    let syy = c10 * l[2] + c11 * l[3];
    let det = sxx * syy - sxy * sxy;
    let inv_cov = [syy / det, -sxy / det, sxx / det];

    let scales = g.scales();
    let radius = MAHALANOBIS_RADIUS * scales[0].max(scales[1]) / camera.pixel_scale;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let x0 = (mu[0] - radius).floor().max(0.0);
    let x1 = (mu[0] + radius).ceil().min(w - 1.0);
    let y0 = (mu[1] - radius).floor().max(0.0);
    let y1 = (mu[1] + radius).ceil().min(h - 1.0);
    let bbox = if x0 > x1 || y0 > y1 || (mu[0] + radius) < 0.0 || (mu[1] + radius) < 0.0 {
        None
    } else {
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    };
    ScreenGaussian { mu, inv_cov, opacity: g.opacity(), color: g.color(), depth: g.depth, bbox }
}

/// Renders the scene through `camera`. An empty scene produces the
/// background, an all-invalid depth map and zero alpha.
pub fn render(scene: &GaussianScene, camera: &ViewCamera) -> Result<RenderOutput, SplatError> {
    Ok(render_impl(scene, camera, None)?.0)
}

/// Like [`render`], additionally returning the alpha-weighted contribution
/// raster of each gaussian group. `groups[i]` assigns gaussian `i` to one of
/// `n_groups` contribution buckets.
pub fn render_grouped(
    scene: &GaussianScene,
    camera: &ViewCamera,
    groups: &[u32],
    n_groups: usize,
) -> Result<(RenderOutput, Vec<ScalarRaster>), SplatError> {
    assert_eq!(groups.len(), scene.len(), "one group per gaussian");
    let (out, contrib) = render_impl(scene, camera, Some((groups, n_groups)))?;
    Ok((out, contrib))
}

fn render_impl(
    scene: &GaussianScene,
    camera: &ViewCamera,
    groups: Option<(&[u32], usize)>,
) -> Result<(RenderOutput, Vec<ScalarRaster>), SplatError> {
    scene.validate_finite()?;
    let (w, h) = (camera.width, camera.height);
    let n_px = w * h;
    let order = scene.depth_order();
    let screen: Vec<ScreenGaussian> =
        scene.gaussians().iter().map(|g| project(g, camera)).collect();

    let mut fg_rgb = vec![[0.0; 3]; n_px];
    let mut trans = vec![1.0; n_px];
    let mut alpha_acc = vec![0.0; n_px];
    let mut depth_num = vec![0.0; n_px];
    let mut group_contrib: Vec<ScalarRaster> = match groups {
        Some((_, n)) => (0..n).map(|_| MaskMap::new(w, h, 0.0)).collect(),
        None => Vec::new(),
    };

    for &gi in &order {
        let sg = &screen[gi];
        let Some((x0, x1, y0, y1)) = sg.bbox else { continue };
        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let dx = px - sg.mu[0];
                let dy = py - sg.mu[1];
                let q = sg.inv_cov[0] * dx * dx
                    + 2.0 * sg.inv_cov[1] * dx * dy
                    + sg.inv_cov[2] * dy * dy;
                if q > Q_CUTOFF {
                    continue;
                }
                let g = (-0.5 * q).exp();
                let alpha = (sg.opacity * g).min(ALPHA_CLAMP);
                let i = y * w + x;
                let t = trans[i];
                let weight = alpha * t;
                fg_rgb[i][0] += sg.color[0] * weight;
                fg_rgb[i][1] += sg.color[1] * weight;
                fg_rgb[i][2] += sg.color[2] * weight;
                depth_num[i] += sg.depth * weight;
                alpha_acc[i] += weight;
                trans[i] = t * (1.0 - alpha);
                if let Some((assignment, _)) = groups {
                    group_contrib[assignment[gi] as usize].data[i] += weight;
                }
            }
        }
    }

    let mut image = Image::new(w, h);
    let mut depth = DepthMap::invalid(w, h);
    let mut alpha = MaskMap::new(w, h, 0.0);
    for i in 0..n_px {
        let t = trans[i];
        image.data[i * 3] = fg_rgb[i][0] + t * BACKGROUND[0];
        image.data[i * 3 + 1] = fg_rgb[i][1] + t * BACKGROUND[1];
        image.data[i * 3 + 2] = fg_rgb[i][2] + t * BACKGROUND[2];
        alpha.data[i] = alpha_acc[i];
        if alpha_acc[i] >= DEPTH_ALPHA_MIN {
            depth.data[i] = depth_num[i] / alpha_acc[i];
            depth.valid[i] = true;
        }
    }

    let output = RenderOutput {
        image,
        depth,
        alpha,
        cache: RenderCache {
            generation: scene.generation(),
            camera: *camera,
            order,
            screen,
            fg_rgb,
            trans_final: trans,
            alpha_acc,
            depth_num,
        },
    };
    Ok((output, group_contrib))
}

/// Backpropagates `d_image` (pixel-interleaved RGB, `w*h*3`) and `d_depth`
/// (`w*h`, ignored on invalid-depth pixels) to every gaussian parameter.
pub fn backward(
    scene: &GaussianScene,
    cache: &RenderCache,
    d_image: &[f64],
    d_depth: &[f64],
) -> Result<Gradients, SplatError> {
    if cache.generation != scene.generation() {
        return Err(SplatError::StaleCache {
            scene: scene.generation(),
            cache: cache.generation,
        });
    }
    let (w, h) = (cache.camera.width, cache.camera.height);
    let n_px = w * h;
    if d_image.len() != n_px * 3 {
        return Err(SplatError::UpstreamShape { expected: n_px * 3, got: d_image.len() });
    }
    if d_depth.len() != n_px {
        return Err(SplatError::UpstreamShape { expected: n_px, got: d_depth.len() });
    }

    let n = scene.len();
    let mut grads = Gradients::zeros(n);

    // Upstream gradients on the depth ratio D = num / acc, zero where invalid.
    let mut d_num = vec![0.0; n_px];
    let mut d_acc = vec![0.0; n_px];
    for i in 0..n_px {
        let acc = cache.alpha_acc[i];
        if acc >= DEPTH_ALPHA_MIN && d_depth[i] != 0.0 {
            d_num[i] = d_depth[i] / acc;
            d_acc[i] = -d_depth[i] * cache.depth_num[i] / (acc * acc);
        }
    }

    // Running front-to-back state, mirrored from the forward pass.
    let mut trans = vec![1.0; n_px];
    let mut acc_rgb = vec![[0.0; 3]; n_px];
    let mut acc_num = vec![0.0; n_px];
    let mut acc_alpha = vec![0.0; n_px];

    let linear = cache.camera.linear();

    for &gi in &cache.order {
        let sg = &cache.screen[gi];
        let Some((x0, x1, y0, y1)) = sg.bbox else { continue };
        let mut g_mu_s = [0.0; 2];
        let mut g_inv = [0.0; 3]; // gradient on (a00, a01, a11) of the full matrix
        let mut g_opacity = 0.0;
        let mut g_color = [0.0; 3];
        let mut g_depth_param = 0.0;
        let mut touched = false;

        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let dx = px - sg.mu[0];
                let dy = py - sg.mu[1];
                let q = sg.inv_cov[0] * dx * dx
                    + 2.0 * sg.inv_cov[1] * dx * dy
                    + sg.inv_cov[2] * dy * dy;
                if q > Q_CUTOFF {
                    continue;
                }
                let g = (-0.5 * q).exp();
                let raw_alpha = sg.opacity * g;
                let clamped = raw_alpha >= ALPHA_CLAMP;
                let alpha = raw_alpha.min(ALPHA_CLAMP);
                let i = y * w + x;
                let t = trans[i];
                let weight = alpha * t;
                touched = true;

                let du = &d_image[i * 3..i * 3 + 3];

                // Color path: C += color * alpha * T.
                for c in 0..3 {
                    g_color[c] += du[c] * weight;
                }
                // Depth numerator path: num += depth * alpha * T.
                g_depth_param += d_num[i] * weight;

                // Advance running sums before forming the suffix.
                for c in 0..3 {
                    acc_rgb[i][c] += sg.color[c] * weight;
                }
                acc_num[i] += sg.depth * weight;
                acc_alpha[i] += weight;
                let t_next = t * (1.0 - alpha);
                trans[i] = t_next;

                // d(loss)/d(alpha): own contribution minus everything behind
                // (later gaussians and the background) scaled by 1/(1-alpha).
                let inv_one_minus = 1.0 / (1.0 - alpha);
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    let suffix =
                        cache.fg_rgb[i][c] - acc_rgb[i][c] + cache.trans_final[i] * BACKGROUND[c];
                    d_alpha += du[c] * (sg.color[c] * t - suffix * inv_one_minus);
                }
                let suffix_num = cache.depth_num[i] - acc_num[i];
                d_alpha += d_num[i] * (sg.depth * t - suffix_num * inv_one_minus);
                let suffix_alpha = cache.alpha_acc[i] - acc_alpha[i];
                d_alpha += d_acc[i] * (t - suffix_alpha * inv_one_minus);

                if clamped {
                    continue; // alpha saturated: no gradient into opacity or density
                }
                g_opacity += d_alpha * g;
                let d_g = d_alpha * sg.opacity;
                // g = exp(-q/2): dq/dmu' = -2 * A * d, dg/dmu' = g * A * d.
                let ax = sg.inv_cov[0] * dx + sg.inv_cov[1] * dy;
                let ay = sg.inv_cov[1] * dx + sg.inv_cov[2] * dy;
                g_mu_s[0] += d_g * g * ax;
                g_mu_s[1] += d_g * g * ay;
                // Full-matrix gradient on A; both off-diagonals share d_g*dx*dy.
                let scale = -0.5 * d_g * g;
                g_inv[0] += scale * dx * dx;
                g_inv[1] += scale * dx * dy;
                g_inv[2] += scale * dy * dy;
            }
        }

        if !touched {
            continue;
        }
        grads.touched[gi] = true;
        grads.screen_pos_norm[gi] = (g_mu_s[0] * g_mu_s[0] + g_mu_s[1] * g_mu_s[1]).sqrt();

        let gsl = &mut grads.params[gi * PARAMS_PER_GAUSSIAN..(gi + 1) * PARAMS_PER_GAUSSIAN];
        let gaussian = &scene.gaussians()[gi];

        // mu' = L (mu - origin)  =>  d/dmu = L^T d/dmu'.
        gsl[param::MU_X] += linear[0] * g_mu_s[0] + linear[2] * g_mu_s[1];
        gsl[param::MU_Y] += linear[1] * g_mu_s[0] + linear[3] * g_mu_s[1];

        // A = Sigma'^-1: dL/dSigma' = -A Gbar A, then Sigma' = L Sigma L^T
        // gives dL/dSigma = L^T dL/dSigma' L.
        let a = sg.inv_cov;
        let gb = [[g_inv[0], g_inv[1]], [g_inv[1], g_inv[2]]];
        let am = [[a[0], a[1]], [a[1], a[2]]];
        let mut dsp = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += am[r][k] * gb[k][l] * am[l][c];
                    }
                }
                dsp[r][c] = -acc;
            }
        }
        let lm = [[linear[0], linear[1]], [linear[2], linear[3]]];
        let mut dsigma = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += lm[k][r] * dsp[k][l] * lm[l][c];
                    }
                }
                dsigma[r][c] = acc;
            }
        }

        // Sigma = R diag(e^{2lsx}, e^{2lsy}) R^T.
        let (ct, st) = (gaussian.theta.cos(), gaussian.theta.sin());
        let rot = [[ct, -st], [st, ct]];
        let drot = [[-st, -ct], [ct, -st]];
        let (sx2, sy2) =
            ((2.0 * gaussian.log_scale[0]).exp(), (2.0 * gaussian.log_scale[1]).exp());
        let frob = |m: &[[f64; 2]; 2]| {
            dsigma[0][0] * m[0][0]
                + dsigma[0][1] * m[0][1]
                + dsigma[1][0] * m[1][0]
                + dsigma[1][1] * m[1][1]
        };
        // dSigma/dlog_sx = R diag(2 sx2, 0) R^T, same shape for log_sy.
        let dsx = outer_rdr(&rot, [2.0 * sx2, 0.0]);
        let dsy = outer_rdr(&rot, [0.0, 2.0 * sy2]);
        gsl[param::LOG_SX] += frob(&dsx);
        gsl[param::LOG_SY] += frob(&dsy);
        // dSigma/dtheta = R' D R^T + R D R'^T.
        let dtheta = add(&mul_rdr(&drot, [sx2, sy2], &rot), &mul_rdr(&rot, [sx2, sy2], &drot));
        gsl[param::THETA] += frob(&dtheta);

        // Sigmoid reparameterizations.
        let o = sg.opacity;
        gsl[param::OPACITY] += g_opacity * o * (1.0 - o);
        for c in 0..3 {
            let col = sg.color[c];
            gsl[param::COLOR_R + c] += g_color[c] * col * (1.0 - col);
        }
        gsl[param::DEPTH] += g_depth_param;
    }

    Ok(grads)
}

/// `R diag(d) R^T` for symmetric factors sharing the same rotation.
fn outer_rdr(r: &[[f64; 2]; 2], d: [f64; 2]) -> [[f64; 2]; 2] {
    mul_rdr(r, d, r)
}

/// `A diag(d) B^T`.
fn mul_rdr(a: &[[f64; 2]; 2], d: [f64; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * d[0] * b[c][0] + a[r][1] * d[1] * b[c][1];
        }
    }
    out
}

fn add(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][c] + b[r][c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{inverse_sigmoid, Gaussian2D};
    use rand::{Rng, SeedableRng};

    fn camera16() -> ViewCamera {
        ViewCamera {
            origin: [0.0, 0.0],
            rotation: 0.0,
            pixel_scale: 1.0,
            width: 16,
            height: 16,
        }
    }

    fn random_scene(rng: &mut impl Rng, n: usize) -> GaussianScene {
        let mut gaussians = Vec::new();
        for _ in 0..n {
            gaussians.push(Gaussian2D {
                mu: [rng.gen_range(3.0..13.0), rng.gen_range(3.0..13.0)],
                log_scale: [rng.gen_range(0.3f64..1.8).ln(), rng.gen_range(0.3f64..1.8).ln()],
                theta: rng.gen_range(-1.5..1.5),
                opacity_logit: rng.gen_range(-1.5..1.5),
                color_logit: [
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                ],
                depth: rng.gen_range(1.0..9.0),
            });
        }
        GaussianScene::from_gaussians(gaussians)
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = GaussianScene::new();
        let out = render(&scene, &camera16()).unwrap();
        assert!(out.image.data.iter().all(|&v| v == 0.5));
        assert!(out.depth.valid.iter().all(|&v| !v));
        assert!(out.alpha.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opaque_gaussian_dominates_center_pixel() {
        let g = Gaussian2D {
            mu: [8.5, 8.5], // center of pixel (8, 8)
            log_scale: [3.0f64.ln(), 3.0f64.ln()],
            theta: 0.0,
            opacity_logit: 8.0, // opacity ~ 0.99966, clamped to 0.99 in compositing
            color_logit: [inverse_sigmoid(0.9), inverse_sigmoid(0.2), inverse_sigmoid(0.6)],
            depth: 1.0,
        };
        let scene = GaussianScene::from_gaussians(vec![g]);
        let out = render(&scene, &camera16()).unwrap();
        let px = out.image.pixel(8, 8);
        for (got, want) in px.iter().zip([0.9, 0.2, 0.6]) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
        assert!((out.depth.get(8, 8).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_opacity_matches_empty_scene() {
        let g = Gaussian2D {
            mu: [8.0, 8.0],
            log_scale: [1.0, 1.0],
            theta: 0.3,
            opacity_logit: -60.0, // sigmoid underflows to 0
            color_logit: [2.0, 2.0, 2.0],
            depth: 1.0,
        };
        let scene = GaussianScene::from_gaussians(vec![g]);
        let empty = GaussianScene::new();
        let a = render(&scene, &camera16()).unwrap();
        let b = render(&empty, &camera16()).unwrap();
        assert_eq!(a.image.data, b.image.data);
    }

    #[test]
    fn two_gaussian_compositing_matches_closed_form() {
        let mk = |depth: f64, opacity: f64, color: f64| Gaussian2D {
            mu: [8.5, 8.5],
            log_scale: [4.0f64.ln(), 4.0f64.ln()],
            theta: 0.0,
            opacity_logit: inverse_sigmoid(opacity),
            color_logit: [inverse_sigmoid(color); 3],
            depth,
        };
        let front = mk(1.0, 0.6, 0.8);
        let back = mk(2.0, 0.7, 0.3);
        let scene = GaussianScene::from_gaussians(vec![back, front]); // storage order reversed
        let out = render(&scene, &camera16()).unwrap();

        // Closed-form two-term compositing at the shared center pixel, where
        // the density g = 1 exactly.
        let (a1, c1) = (0.6, 0.8);
        let (a2, c2) = (0.7, 0.3);
        let expect = c1 * a1 + c2 * a2 * (1.0 - a1) + 0.5 * (1.0 - a1) * (1.0 - a2);
        let got = out.image.pixel(8, 8)[0];
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");

        let expect_depth =
            (1.0 * a1 + 2.0 * a2 * (1.0 - a1)) / (a1 + a2 * (1.0 - a1));
        assert!((out.depth.get(8, 8).unwrap() - expect_depth).abs() < 1e-9);
    }

    #[test]
    fn non_finite_parameter_is_reported_with_index() {
        let mut g = Gaussian2D {
            mu: [1.0, 1.0],
            log_scale: [0.0, 0.0],
            theta: 0.0,
            opacity_logit: 0.0,
            color_logit: [0.0; 3],
            depth: 1.0,
        };
        g.theta = f64::NAN;
        let scene = GaussianScene::from_gaussians(vec![g.clone(), g]);
        match render(&scene, &camera16()) {
            Err(SplatError::NonFiniteParam { index: 0, field: "theta" }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn compositing_conserves_unity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let scene = random_scene(&mut rng, 8);
            let out = render(&scene, &camera16()).unwrap();
            for i in 0..16 * 16 {
                let total = out.cache.trans_final[i] + out.alpha.data[i];
                assert!((total - 1.0).abs() < 1e-6, "conservation broke: {total}");
            }
        }
    }

    #[test]
    fn storage_order_does_not_change_render() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let scene = random_scene(&mut rng, 6);
        let mut reversed: Vec<Gaussian2D> = scene.gaussians().to_vec();
        reversed.reverse();
        let scene_rev = GaussianScene::from_gaussians(reversed);
        let a = render(&scene, &camera16()).unwrap();
        let b = render(&scene_rev, &camera16()).unwrap();
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let scene = random_scene(&mut rng, 5);
        let out = render(&scene, &camera16()).unwrap();
        let grads =
            backward(&scene, &out.cache, &vec![0.0; 16 * 16 * 3], &vec![0.0; 16 * 16]).unwrap();
        assert!(grads.params.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let mut scene = random_scene(&mut rng, 3);
        let out = render(&scene, &camera16()).unwrap();
        scene.gaussians_mut()[0].mu[0] += 0.5;
        let err = backward(&scene, &out.cache, &vec![0.0; 16 * 16 * 3], &vec![0.0; 16 * 16]);
        assert!(matches!(err, Err(SplatError::StaleCache { .. })));
    }

    /// Scalar probe loss `sum(U . image) + sum(V . depth)` for gradient checks.
    fn probe_loss(scene: &GaussianScene, cam: &ViewCamera, u: &[f64], v: &[f64]) -> f64 {
        let out = render(scene, cam).unwrap();
        let mut loss = 0.0;
        for (a, b) in out.image.data.iter().zip(u) {
            loss += a * b;
        }
        for i in 0..v.len() {
            if out.depth.valid[i] {
                loss += out.depth.data[i] * v[i];
            }
        }
        loss
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let cam = camera16();
        let scene = random_scene(&mut rng, 5);
        let out = render(&scene, &cam).unwrap();

        let u: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Depth probe only where depth is comfortably valid in the base render,
        // to stay clear of the validity threshold discontinuity.
        let v: Vec<f64> = (0..16 * 16)
            .map(|i| {
                if out.cache.alpha_acc[i] > 10.0 * DEPTH_ALPHA_MIN {
                    rng.gen_range(-0.2..0.2)
                } else {
                    0.0
                }
            })
            .collect();

        let grads = backward(&scene, &out.cache, &u, &v).unwrap();
        let h = 1e-4;
        let max_grad = grads.params.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = (1e-4 * max_grad).max(1e-8);

        for gi in 0..scene.len() {
            for k in 0..PARAMS_PER_GAUSSIAN {
                let mut plus = scene.clone();
                let mut buf = vec![0.0; PARAMS_PER_GAUSSIAN];
                plus.gaussians_mut()[gi].write_params(&mut buf);
                buf[k] += h;
                plus.gaussians_mut()[gi] = Gaussian2D::read_params(&buf);
                let up = probe_loss(&plus, &cam, &u, &v);

                let mut minus = scene.clone();
                minus.gaussians_mut()[gi].write_params(&mut buf);
                buf[k] -= h;
                minus.gaussians_mut()[gi] = Gaussian2D::read_params(&buf);
                let down = probe_loss(&minus, &cam, &u, &v);

                let fd = (up - down) / (2.0 * h);
                let analytic = grads.params[gi * PARAMS_PER_GAUSSIAN + k];
                let denom = analytic.abs().max(fd.abs()).max(floor);
                assert!(
                    (analytic - fd).abs() / denom < 1e-3,
                    "gaussian {gi} param {k}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn opacity_gradient_signs_reduce_l1_loss() {
        // A dark gaussian over a bright background with dark ground truth:
        // raising its opacity must lower the L1 loss, so the opacity gradient
        // of that loss is negative.
        let g = Gaussian2D {
            mu: [8.5, 8.5],
            log_scale: [3.0f64.ln(), 3.0f64.ln()],
            theta: 0.0,
            opacity_logit: inverse_sigmoid(0.4),
            color_logit: [inverse_sigmoid(0.05); 3],
            depth: 1.0,
        };
        let scene = GaussianScene::from_gaussians(vec![g]);
        let cam = camera16();
        let out = render(&scene, &cam).unwrap();
        // Ground truth: dark everywhere. dL1/drender = sign(render - gt) > 0.
        let d_image: Vec<f64> = out.image.data.iter().map(|&r| (r - 0.05).signum()).collect();
        let grads = backward(&scene, &out.cache, &d_image, &vec![0.0; 16 * 16]).unwrap();
        assert!(
            grads.params[param::OPACITY] < 0.0,
            "opacity gradient should be negative, got {}",
            grads.params[param::OPACITY]
        );
    }
}
