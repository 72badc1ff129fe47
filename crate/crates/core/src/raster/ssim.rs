//! SSIM with an 11x11 Gaussian window (sigma 1.5) on unit dynamic range,
//! plus the analytic gradient of the per-pixel map needed by the masked
//! D-SSIM training loss. Borders use reflect padding.

use super::{check_dims, Image, MaskMap, RasterError, ScalarRaster};

/// Window side length.
pub const SSIM_WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Mean SSIM plus the per-pixel map (average of the three channel maps).
#[derive(Debug, Clone)]
pub struct SsimOutput {
    pub mean: f64,
    pub map: ScalarRaster,
}

fn window_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = (i as i64 - r) as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    // Reflect without repeating the border sample: -1 -> 1, n -> n - 2.
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Separable convolution of one scalar plane with the SSIM window.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - r, w as i64);
                acc += k * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + t as i64 - r, h as i64);
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of [`blur`]: scatters through the reflection map, so border
/// pixels that feed several window taps receive all of their contributions.
fn blur_adjoint(upstream: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    // Forward order is horizontal then vertical; the adjoint reverses it.
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = upstream[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (t, &k) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + t as i64 - r, h as i64);
                tmp[sy * w + x] += k * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (t, &k) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - r, w as i64);
                out[y * w + sx] += k * g;
            }
        }
    }
    out
}

fn extract_channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

fn check_window(img: &Image) -> Result<(), RasterError> {
    if img.width < SSIM_WINDOW || img.height < SSIM_WINDOW {
        return Err(RasterError::WindowTooLarge {
            w: img.width,
            h: img.height,
            win: SSIM_WINDOW,
        });
    }
    Ok(())
}

struct ChannelMoments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxy: Vec<f64>,
}

/// Precomputed reference-image moments, reusable across the many renders
/// compared against one ground-truth view during training.
#[derive(Debug, Clone)]
pub struct SsimGtCache {
    width: usize,
    height: usize,
    /// Per channel: raw plane, blurred plane, blurred squared plane.
    channels: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

/// Builds the reference-side moment cache for [`ssim_and_backward_cached`].
pub fn ssim_gt_cache(gt: &Image) -> SsimGtCache {
    let kernel = window_kernel();
    let (w, h) = gt.dims();
    let channels = (0..3)
        .map(|c| {
            let y = extract_channel(gt, c);
            let mu_y = blur(&y, w, h, &kernel);
            let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
            let m2y = blur(&y2, w, h, &kernel);
            (y, mu_y, m2y)
        })
        .collect();
    SsimGtCache { width: w, height: h, channels }
}

fn channel_moments_cached(
    x: &[f64],
    gt: &(Vec<f64>, Vec<f64>, Vec<f64>),
    w: usize,
    h: usize,
) -> ChannelMoments {
    let kernel = window_kernel();
    let (y, mu_y_ref, m2y) = gt;
    let mu_x = blur(x, w, h, &kernel);
    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let m2x = blur(&x2, w, h, &kernel);
    let mxy = blur(&xy, w, h, &kernel);
    let n = w * h;
    let mu_y = mu_y_ref.clone();
    let mut sx = vec![0.0; n];
    let mut sy = vec![0.0; n];
    let mut sxy = vec![0.0; n];
    for i in 0..n {
        sx[i] = m2x[i] - mu_x[i] * mu_x[i];
        sy[i] = m2y[i] - mu_y[i] * mu_y[i];
        sxy[i] = mxy[i] - mu_x[i] * mu_y[i];
    }
    ChannelMoments { mu_x, mu_y, sx, sy, sxy }
}

fn channel_moments(x: &[f64], y: &[f64], w: usize, h: usize) -> ChannelMoments {
    let kernel = window_kernel();
    let mu_y = blur(y, w, h, &kernel);
    let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
    let m2y = blur(&y2, w, h, &kernel);
    channel_moments_cached(x, &(y.to_vec(), mu_y, m2y), w, h)
}

#[inline]
fn ssim_terms(m: &ChannelMoments, i: usize) -> (f64, f64, f64, f64, f64) {
    let a1 = 2.0 * m.mu_x[i] * m.mu_y[i] + C1;
    let a2 = 2.0 * m.sxy[i] + C2;
    let b1 = m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + C1;
    let b2 = m.sx[i] + m.sy[i] + C2;
    (a1, a2, b1, b2, (a1 * a2) / (b1 * b2))
}

/// Mean SSIM and the per-pixel SSIM map. D-SSIM is `(1 - SSIM) / 2`.
pub fn ssim(gt: &Image, render: &Image) -> Result<SsimOutput, RasterError> {
    check_dims("ssim", gt.dims(), render.dims())?;
    check_window(gt)?;
    let (w, h) = gt.dims();
    let mut map = MaskMap::new(w, h, 0.0);
    for c in 0..3 {
        let y = extract_channel(gt, c);
        let x = extract_channel(render, c);
        let m = channel_moments(&x, &y, w, h);
        for i in 0..w * h {
            map.data[i] += ssim_terms(&m, i).4 / 3.0;
        }
    }
    let mean = map.data.iter().sum::<f64>() / map.data.len() as f64;
    Ok(SsimOutput { mean, map })
}

/// Gradient of `sum_p upstream[p] * ssim_map[p]` with respect to the render.
///
/// `upstream` is the per-pixel weight on the averaged SSIM map; the returned
/// buffer is `dL/drender`, pixel-interleaved RGB like [`Image::data`].
pub fn ssim_backward(
    gt: &Image,
    render: &Image,
    upstream: &ScalarRaster,
) -> Result<Vec<f64>, RasterError> {
    Ok(ssim_and_backward(gt, render, upstream)?.1)
}

/// Fused forward + backward: one moment computation serves both the SSIM map
/// and the gradient of `sum_p upstream[p] * ssim_map[p]`.
pub fn ssim_and_backward(
    gt: &Image,
    render: &Image,
    upstream: &ScalarRaster,
) -> Result<(SsimOutput, Vec<f64>), RasterError> {
    ssim_and_backward_cached(&ssim_gt_cache(gt), render, upstream)
}

/// [`ssim_and_backward`] against a precomputed reference cache.
pub fn ssim_and_backward_cached(
    gt: &SsimGtCache,
    render: &Image,
    upstream: &ScalarRaster,
) -> Result<(SsimOutput, Vec<f64>), RasterError> {
    check_dims("ssim_backward", (gt.width, gt.height), render.dims())?;
    check_dims("ssim_backward upstream", (gt.width, gt.height), upstream.dims())?;
    check_window(render)?;
    let (w, h) = render.dims();
    let n = w * h;
    let kernel = window_kernel();
    let mut map = MaskMap::new(w, h, 0.0);
    let mut grad = vec![0.0; n * 3];
    for c in 0..3 {
        let y = &gt.channels[c].0;
        let x = extract_channel(render, c);
        let m = channel_moments_cached(&x, &gt.channels[c], w, h);
        // Channel map contributes 1/3 of the averaged map.
        let mut f_mu = vec![0.0; n];
        let mut f_s = vec![0.0; n];
        let mut f_xy = vec![0.0; n];
        for i in 0..n {
            let (a1, a2, b1, b2, s) = ssim_terms(&m, i);
            map.data[i] += s / 3.0;
            let u = upstream.data[i] / 3.0;
            let d_mu = 2.0 * m.mu_y[i] * a2 / (b1 * b2) - 2.0 * m.mu_x[i] * s / b1;
            let d_sx = -s / b2;
            let d_sxy = 2.0 * a1 / (b1 * b2);
            // Total derivative through mu_x also reaches sx and sxy.
            f_mu[i] = u * (d_mu - 2.0 * m.mu_x[i] * d_sx - m.mu_y[i] * d_sxy);
            f_s[i] = u * d_sx;
            f_xy[i] = u * d_sxy;
        }
        let g_mu = blur_adjoint(&f_mu, w, h, &kernel);
        let g_s = blur_adjoint(&f_s, w, h, &kernel);
        let g_xy = blur_adjoint(&f_xy, w, h, &kernel);
        for i in 0..n {
            grad[i * 3 + c] = g_mu[i] + 2.0 * x[i] * g_s[i] + y[i] * g_xy[i];
        }
    }
    let mean = map.data.iter().sum::<f64>() / map.data.len() as f64;
    Ok((SsimOutput { mean, map }, grad))
}
