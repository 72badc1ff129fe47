//! Raster persistence: the portable "RAS1" float container and 8-bit PNG
//! import/export for images and masks.
//!
//! RAS1 layout: magic bytes `RAS1`, then little-endian u32 width, height,
//! channels, dtype tag (0 = f32), followed by the row-major little-endian
//! payload. Depth maps use two channels (depth, validity); instance sets use
//! one binary plane per instance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{DepthMap, FeatureMap, Image, Instance, InstanceSet, MaskMap, ScalarRaster};

const MAGIC: &[u8; 4] = b"RAS1";
const DTYPE_F32: u32 = 0;

#[derive(Debug, Error)]
pub enum RasterIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected RAS1")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported dtype tag {tag}")]
    UnsupportedDtype { path: PathBuf, tag: u32 },
    #[error("{path}: truncated payload, expected {expected} values")]
    Truncated { path: PathBuf, expected: usize },
    #[error("{path}: dimension mismatch, expected {expected_w}x{expected_h}x{expected_c}, got {got_w}x{got_h}x{got_c}")]
    DimMismatch {
        path: PathBuf,
        expected_w: usize,
        expected_h: usize,
        expected_c: usize,
        got_w: usize,
        got_h: usize,
        got_c: usize,
    },
    #[error("{path}: non-finite payload value at index {index}")]
    NonFinite { path: PathBuf, index: usize },
    #[error("{path}: mask value {value} is not binary (expected 0 or 255)")]
    NonBinaryMask { path: PathBuf, value: u8 },
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterIoError + '_ {
    move |source| RasterIoError::Io { path: path.to_path_buf(), source }
}

/// Raw decoded RAS1 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Ras1 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub fn write_ras1(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f64],
) -> Result<(), RasterIoError> {
    assert_eq!(data.len(), width * height * channels, "payload length mismatch");
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(io_err(path))?;
    for v in [width as u32, height as u32, channels as u32, DTYPE_F32] {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ras1(path: &Path) -> Result<Ras1, RasterIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(RasterIoError::BadMagic { path: path.to_path_buf() });
    }
    let mut u32buf = [0u8; 4];
    let mut header = [0u32; 4];
    for h in &mut header {
        r.read_exact(&mut u32buf).map_err(io_err(path))?;
        *h = u32::from_le_bytes(u32buf);
    }
    let [width, height, channels, dtype] = header;
    if dtype != DTYPE_F32 {
        return Err(RasterIoError::UnsupportedDtype { path: path.to_path_buf(), tag: dtype });
    }
    let expected = width as usize * height as usize * channels as usize;
    let mut payload = vec![0u8; expected * 4];
    r.read_exact(&mut payload)
        .map_err(|_| RasterIoError::Truncated { path: path.to_path_buf(), expected })?;
    let mut data = Vec::with_capacity(expected);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(RasterIoError::NonFinite { path: path.to_path_buf(), index: i });
        }
        data.push(v);
    }
    Ok(Ras1 { width: width as usize, height: height as usize, channels: channels as usize, data })
}

fn expect_dims(
    path: &Path,
    ras: &Ras1,
    w: usize,
    h: usize,
    c: Option<usize>,
) -> Result<(), RasterIoError> {
    let c_ok = c.map_or(true, |c| c == ras.channels);
    if ras.width != w || ras.height != h || !c_ok {
        return Err(RasterIoError::DimMismatch {
            path: path.to_path_buf(),
            expected_w: w,
            expected_h: h,
            expected_c: c.unwrap_or(ras.channels),
            got_w: ras.width,
            got_h: ras.height,
            got_c: ras.channels,
        });
    }
    Ok(())
}

pub fn write_image_ras1(path: &Path, img: &Image) -> Result<(), RasterIoError> {
    write_ras1(path, img.width, img.height, 3, &img.data)
}

pub fn read_image_ras1(path: &Path, w: usize, h: usize) -> Result<Image, RasterIoError> {
    let ras = read_ras1(path)?;
    expect_dims(path, &ras, w, h, Some(3))?;
    Ok(Image { width: w, height: h, data: ras.data })
}

pub fn write_scalar_ras1(path: &Path, raster: &ScalarRaster) -> Result<(), RasterIoError> {
    write_ras1(path, raster.width, raster.height, 1, &raster.data)
}

pub fn read_scalar_ras1(path: &Path, w: usize, h: usize) -> Result<ScalarRaster, RasterIoError> {
    let ras = read_ras1(path)?;
    expect_dims(path, &ras, w, h, Some(1))?;
    Ok(MaskMap { width: w, height: h, data: ras.data })
}

pub fn write_features_ras1(path: &Path, features: &FeatureMap) -> Result<(), RasterIoError> {
    write_ras1(path, features.width, features.height, features.dim, &features.data)
}

pub fn read_features_ras1(path: &Path, w: usize, h: usize) -> Result<FeatureMap, RasterIoError> {
    let ras = read_ras1(path)?;
    expect_dims(path, &ras, w, h, None)?;
    Ok(FeatureMap { width: w, height: h, dim: ras.channels, data: ras.data })
}

pub fn write_depth_ras1(path: &Path, depth: &DepthMap) -> Result<(), RasterIoError> {
    let n = depth.width * depth.height;
    let mut data = Vec::with_capacity(n * 2);
    for i in 0..n {
        data.push(depth.data[i]);
        data.push(if depth.valid[i] { 1.0 } else { 0.0 });
    }
    write_ras1(path, depth.width, depth.height, 2, &data)
}

pub fn read_depth_ras1(path: &Path, w: usize, h: usize) -> Result<DepthMap, RasterIoError> {
    let ras = read_ras1(path)?;
    expect_dims(path, &ras, w, h, Some(2))?;
    let n = w * h;
    let mut depth = DepthMap::invalid(w, h);
    for i in 0..n {
        depth.data[i] = ras.data[i * 2];
        depth.valid[i] = ras.data[i * 2 + 1] != 0.0;
    }
    Ok(depth)
}

/// Instances stored as one-hot planes, one binary channel per instance in id
/// order. Ids are re-issued densely on read.
pub fn write_instances_ras1(path: &Path, set: &InstanceSet) -> Result<(), RasterIoError> {
    let n = set.width * set.height;
    let c = set.instances.len();
    let mut data = vec![0.0; n * c];
    for (k, inst) in set.instances.iter().enumerate() {
        for &p in &inst.pixels {
            data[p as usize * c + k] = 1.0;
        }
    }
    write_ras1(path, set.width, set.height, c, &data)
}

pub fn read_instances_ras1(path: &Path, w: usize, h: usize) -> Result<InstanceSet, RasterIoError> {
    let ras = read_ras1(path)?;
    expect_dims(path, &ras, w, h, None)?;
    let c = ras.channels;
    let mut instances: Vec<Instance> =
        (0..c as u32).map(|id| Instance { id, pixels: Vec::new() }).collect();
    for p in 0..w * h {
        for k in 0..c {
            if ras.data[p * c + k] != 0.0 {
                instances[k].pixels.push(p as u32);
            }
        }
    }
    Ok(InstanceSet { width: w, height: h, instances })
}

/// 8-bit RGB PNG export; values are clamped then quantized with rounding.
pub fn write_image_png(path: &Path, img: &Image) -> Result<(), RasterIoError> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
    }
    buf.save(path).map_err(|source| RasterIoError::Png { path: path.to_path_buf(), source })
}

pub fn read_image_png(path: &Path) -> Result<Image, RasterIoError> {
    let decoded = image::open(path)
        .map_err(|source| RasterIoError::Png { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = decoded.get_pixel(x as u32, y as u32);
            img.set_pixel(x, y, [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]);
        }
    }
    Ok(img)
}

/// Binary keep mask as 8-bit grayscale PNG: 255 = keep, 0 = transient.
pub fn write_mask_png(path: &Path, mask: &MaskMap) -> Result<(), RasterIoError> {
    let mut buf = image::GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let v = if mask.get(x, y) >= 0.5 { 255u8 } else { 0u8 };
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|source| RasterIoError::Png { path: path.to_path_buf(), source })
}

/// Reads a binary mask PNG, rejecting gray values other than 0 and 255.
pub fn read_mask_png(path: &Path) -> Result<MaskMap, RasterIoError> {
    let decoded = image::open(path)
        .map_err(|source| RasterIoError::Png { path: path.to_path_buf(), source })?
        .into_luma8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut mask = MaskMap::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = decoded.get_pixel(x as u32, y as u32)[0];
            match v {
                255 => mask.set(x, y, 1.0),
                0 => {}
                other => {
                    return Err(RasterIoError::NonBinaryMask {
                        path: path.to_path_buf(),
                        value: other,
                    })
                }
            }
        }
    }
    Ok(mask)
}

/// Soft probability map as grayscale PNG (rounded to 8 bits).
pub fn write_soft_mask_png(path: &Path, mask: &MaskMap) -> Result<(), RasterIoError> {
    let mut buf = image::GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let v = (mask.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|source| RasterIoError::Png { path: path.to_path_buf(), source })
}
