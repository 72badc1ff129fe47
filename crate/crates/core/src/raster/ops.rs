//! Elementary raster operations: residuals, PSNR, dilation, normalization.

use super::{check_dims, Image, MaskMap, RasterError, ScalarRaster};

/// Per-pixel mean absolute channel difference, values in `[0, 1]`.
pub fn l1_residual_map(gt: &Image, render: &Image) -> Result<ScalarRaster, RasterError> {
    check_dims("l1_residual", gt.dims(), render.dims())?;
    let mut out = MaskMap::new(gt.width, gt.height, 0.0);
    for (i, o) in out.data.iter_mut().enumerate() {
        let a = &gt.data[i * 3..i * 3 + 3];
        let b = &render.data[i * 3..i * 3 + 3];
        *o = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
    }
    Ok(out)
}

/// Scalar mean of [`l1_residual_map`] over all pixels.
pub fn l1_residual(gt: &Image, render: &Image) -> Result<f64, RasterError> {
    let map = l1_residual_map(gt, render)?;
    Ok(map.data.iter().sum::<f64>() / map.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB on unit dynamic range. `f64::INFINITY`
/// is the sentinel for an exact match.
pub fn psnr(gt: &Image, render: &Image) -> Result<f64, RasterError> {
    check_dims("psnr", gt.dims(), render.dims())?;
    let mut mse = 0.0;
    for (a, b) in gt.data.iter().zip(&render.data) {
        let d = a - b;
        mse += d * d;
    }
    mse /= gt.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Morphological dilation of the transient (0) region of a binary keep mask
/// with a square structuring element of side `2 * radius + 1`. Equivalently,
/// erosion of the keep region.
pub fn dilate_transient(mask: &MaskMap, radius: u32) -> Result<MaskMap, RasterError> {
    mask.is_binary()?;
    if radius == 0 {
        return Ok(mask.clone());
    }
    let r = radius as i64;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.data[(y * w + x) as usize] != 0.0 {
                continue;
            }
            // Transient source pixel: stamp its neighborhood.
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x + dx;
                    if nx >= 0 && nx < w {
                        out.data[(ny * w + nx) as usize] = 0.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Min-max normalization to `[0, 1]`. A constant raster maps to all 0.5.
pub fn minmax_normalize(raster: &ScalarRaster) -> Result<ScalarRaster, RasterError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in raster.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(RasterError::NonFinite {
                x: i % raster.width,
                y: i / raster.width,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = raster.clone();
    if hi == lo {
        out.data.fill(0.5);
    } else {
        let inv = 1.0 / (hi - lo);
        for v in &mut out.data {
            *v = (*v - lo) * inv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for v in &mut img.data {
            *v = rng.gen::<f64>();
        }
        img
    }

    #[test]
    fn l1_identical_is_zero() {
        let img = Image::filled(4, 3, [0.2, 0.5, 0.9]);
        let map = l1_residual_map(&img, &img).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_extreme_is_one() {
        let a = Image::filled(4, 3, [1.0, 1.0, 1.0]);
        let b = Image::filled(4, 3, [0.0, 0.0, 0.0]);
        let map = l1_residual_map(&a, &b).unwrap();
        assert!(map.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l1_matches_scalar_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = random_image(&mut rng, 4, 4);
        let b = random_image(&mut rng, 4, 4);
        let map = l1_residual_map(&a, &b).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let pa = a.pixel(x, y);
                let pb = b.pixel(x, y);
                let expect = ((pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs()
                    + (pa[2] - pb[2]).abs())
                    / 3.0;
                assert!((map.get(x, y) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l1_shape_mismatch_errors() {
        let a = Image::new(4, 4);
        let b = Image::new(3, 4);
        assert!(matches!(l1_residual_map(&a, &b), Err(RasterError::ShapeMismatch { .. })));
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = Image::filled(5, 5, [0.3, 0.3, 0.3]);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn psnr_analytic_20db() {
        // Constant offset of 0.1 in every channel: MSE = 0.01, PSNR = 20 dB.
        let a = Image::filled(8, 8, [0.5, 0.5, 0.5]);
        let b = Image::filled(8, 8, [0.6, 0.6, 0.6]);
        let db = psnr(&a, &b).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "psnr = {db}");
    }

    #[test]
    fn psnr_matches_scalar_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let mut mse = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let pa = a.pixel(x, y);
                let pb = b.pixel(x, y);
                for c in 0..3 {
                    mse += (pa[c] - pb[c]) * (pa[c] - pb[c]);
                }
            }
        }
        mse /= 8.0 * 8.0 * 3.0;
        let expect = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut m = MaskMap::all_keep(5, 5);
        m.set(2, 2, 0.0);
        assert_eq!(dilate_transient(&m, 0).unwrap(), m);
    }

    #[test]
    fn dilate_single_pixel_makes_block() {
        let mut m = MaskMap::all_keep(5, 5);
        m.set(2, 2, 0.0);
        let d = dilate_transient(&m, 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let in_block = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(d.get(x, y), if in_block { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn dilate_matches_double_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut m = MaskMap::all_keep(9, 7);
        for v in &mut m.data {
            if rng.gen::<f64>() < 0.2 {
                *v = 0.0;
            }
        }
        let d = dilate_transient(&m, 2).unwrap();
        for y in 0..7i64 {
            for x in 0..9i64 {
                let mut any_transient = false;
                for dy in -2..=2i64 {
                    for dx in -2..=2i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && nx < 9 && ny >= 0 && ny < 7 {
                            any_transient |= m.get(nx as usize, ny as usize) == 0.0;
                        }
                    }
                }
                assert_eq!(d.get(x as usize, y as usize), if any_transient { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn dilate_rejects_soft_masks() {
        let m = MaskMap::new(3, 3, 0.4);
        assert!(matches!(dilate_transient(&m, 1), Err(RasterError::NotBinary { .. })));
    }

    #[test]
    fn minmax_basic_and_tie_rule() {
        let r = MaskMap { width: 3, height: 1, data: vec![0.0, 5.0, 10.0] };
        let n = minmax_normalize(&r).unwrap();
        assert_eq!(n.data, vec![0.0, 0.5, 1.0]);

        let c = MaskMap::new(4, 4, 3.7);
        let n = minmax_normalize(&c).unwrap();
        assert!(n.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn minmax_rejects_nan() {
        let r = MaskMap { width: 2, height: 1, data: vec![0.0, f64::NAN] };
        assert!(matches!(minmax_normalize(&r), Err(RasterError::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn minmax_hits_zero_and_one(values in proptest::collection::vec(-100.0f64..100.0, 2..64)) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let r = MaskMap { width: values.len(), height: 1, data: values };
            let n = minmax_normalize(&r).unwrap();
            let lo = n.data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = n.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lo - 0.0).abs() < 1e-12);
            prop_assert!((hi - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dilate_is_monotone(seed in 0u64..256, r1 in 0u32..3, r2 in 0u32..3) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = MaskMap::all_keep(8, 6);
            for v in &mut m.data {
                if rand::Rng::gen::<f64>(&mut rng) < 0.25 { *v = 0.0; }
            }
            let big = dilate_transient(&m, r1.max(r2)).unwrap();
            let once = dilate_transient(&m, r1).unwrap();
            let twice = dilate_transient(&once, r2).unwrap();
            // dilate(r1) then dilate(r2) covers at least dilate(max(r1, r2)).
            for (a, b) in twice.data.iter().zip(&big.data) {
                prop_assert!(*a <= *b);
            }
            // Transient region never shrinks.
            for (a, b) in once.data.iter().zip(&m.data) {
                prop_assert!(*a <= *b);
            }
        }
    }
}
