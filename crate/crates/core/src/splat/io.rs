//! GS2D checkpoint format.
//!
//! Layout: magic `GS2D`, little-endian u32 count, then per gaussian the ten
//! f32 parameters in declaration order (mu, cov params, opacity logit, color
//! logits, depth). An optional optimizer section follows under its own magic
//! `GSOP`: u32 Adam step count, then per gaussian ten first moments, ten
//! second moments, the accumulated positional gradient and a u32 hit count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Gaussian2D, GaussianScene, PARAMS_PER_GAUSSIAN};

const MAGIC: &[u8; 4] = b"GS2D";
const OPT_MAGIC: &[u8; 4] = b"GSOP";

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected GS2D")]
    BadMagic { path: PathBuf },
    #[error("{path}: bad optimizer section magic, expected GSOP")]
    BadOptimizerMagic { path: PathBuf },
    #[error("{path}: truncated checkpoint")]
    Truncated { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneIoError + '_ {
    move |source| SceneIoError::Io { path: path.to_path_buf(), source }
}

pub fn write_scene(
    path: &Path,
    scene: &GaussianScene,
    include_optimizer: bool,
) -> Result<(), SceneIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&(scene.len() as u32).to_le_bytes()).map_err(io_err(path))?;
    let mut buf = vec![0.0f64; PARAMS_PER_GAUSSIAN];
    for g in scene.gaussians() {
        g.write_params(&mut buf);
        for &v in &buf {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err(path))?;
        }
    }
    if include_optimizer {
        w.write_all(OPT_MAGIC).map_err(io_err(path))?;
        w.write_all(&(scene.adam_step_count() as u32).to_le_bytes()).map_err(io_err(path))?;
        let (m1, m2) = scene.moments();
        let (accum, hits) = scene.densify_stats();
        for i in 0..scene.len() {
            for k in 0..PARAMS_PER_GAUSSIAN {
                let v = m1[i * PARAMS_PER_GAUSSIAN + k] as f32;
                w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
            }
            for k in 0..PARAMS_PER_GAUSSIAN {
                let v = m2[i * PARAMS_PER_GAUSSIAN + k] as f32;
                w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
            }
            w.write_all(&(accum[i] as f32).to_le_bytes()).map_err(io_err(path))?;
            w.write_all(&hits[i].to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_scene(path: &Path) -> Result<GaussianScene, SceneIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(SceneIoError::BadMagic { path: path.to_path_buf() });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let trunc = || SceneIoError::Truncated { path: path.to_path_buf() };
    let read_f32 = |r: &mut BufReader<File>| -> Result<f64, SceneIoError> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| trunc())?;
        Ok(f32::from_le_bytes(b) as f64)
    };

    let mut scene = GaussianScene::new();
    let mut buf = vec![0.0f64; PARAMS_PER_GAUSSIAN];
    for _ in 0..count {
        for v in buf.iter_mut() {
            *v = read_f32(&mut r)?;
        }
        scene.push(Gaussian2D::read_params(&buf));
    }

    // Optional optimizer section.
    let mut opt_magic = [0u8; 4];
    match r.read_exact(&mut opt_magic) {
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(scene),
        Err(e) => return Err(SceneIoError::Io { path: path.to_path_buf(), source: e }),
        Ok(()) => {}
    }
    if &opt_magic != OPT_MAGIC {
        return Err(SceneIoError::BadOptimizerMagic { path: path.to_path_buf() });
    }
    r.read_exact(&mut u32buf).map_err(|_| trunc())?;
    let step = u32::from_le_bytes(u32buf) as u64;
    let mut m1 = vec![0.0; count * PARAMS_PER_GAUSSIAN];
    let mut m2 = vec![0.0; count * PARAMS_PER_GAUSSIAN];
    let mut accum = vec![0.0; count];
    let mut hits = vec![0u32; count];
    for i in 0..count {
        for k in 0..PARAMS_PER_GAUSSIAN {
            m1[i * PARAMS_PER_GAUSSIAN + k] = read_f32(&mut r)?;
        }
        for k in 0..PARAMS_PER_GAUSSIAN {
            m2[i * PARAMS_PER_GAUSSIAN + k] = read_f32(&mut r)?;
        }
        accum[i] = read_f32(&mut r)?;
        r.read_exact(&mut u32buf).map_err(|_| trunc())?;
        hits[i] = u32::from_le_bytes(u32buf);
    }
    scene.restore_state(m1, m2, step, accum, hits);
    Ok(scene)
}
