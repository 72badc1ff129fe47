//! The per-pixel mask predictor: a fully connected [in -> 32 -> 32 -> 1]
//! network with ReLU hidden layers and a sigmoid output, trained by its own
//! Adam optimizer. Forward and backward passes are written out by hand; the
//! output bias starts at +2 so fresh masks begin near keep.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::{FeatureMap, MaskMap, ScalarRaster};

pub const HIDDEN: usize = 32;
const OUTPUT_BIAS_INIT: f64 = 2.0;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MlpIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected MLP1")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated")]
    Truncated { path: PathBuf },
}

/// Parameter layout inside the flat vector: w1 (HIDDEN x in), b1, w2
/// (HIDDEN x HIDDEN), b2, w3 (1 x HIDDEN), b3.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMlp {
    pub in_dim: usize,
    params: Vec<f64>,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step: u64,
}

fn param_count(in_dim: usize) -> usize {
    HIDDEN * in_dim + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN + 1
}

struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
    w3: std::ops::Range<usize>,
    b3: usize,
}

fn layout(in_dim: usize) -> Layout {
    let w1 = 0..HIDDEN * in_dim;
    let b1 = w1.end..w1.end + HIDDEN;
    let w2 = b1.end..b1.end + HIDDEN * HIDDEN;
    let b2 = w2.end..w2.end + HIDDEN;
    let w3 = b2.end..b2.end + HIDDEN;
    let b3 = w3.end;
    Layout { w1, b1, w2, b2, w3, b3 }
}

/// Hidden activations cached by the batched forward pass.
pub struct MlpActivations {
    pub inputs: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub output: Vec<f64>,
    pub pixels: usize,
}

impl MaskMlp {
    /// Fan-in uniform initialization from a seeded generator; zero biases
    /// except the +2 output bias.
    pub fn new(in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3713);
        let n = param_count(in_dim);
        let l = layout(in_dim);
        let mut params = vec![0.0; n];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in range {
                params[i] = rng.gen_range(-bound..bound);
            }
        };
        fill(l.w1.clone(), in_dim, &mut params);
        fill(l.w2.clone(), HIDDEN, &mut params);
        fill(l.w3.clone(), HIDDEN, &mut params);
        params[l.b3] = OUTPUT_BIAS_INIT;
        Self { in_dim, params, moment1: vec![0.0; n], moment2: vec![0.0; n], step: 0 }
    }

    /// All-zero weights and biases (output at exactly 0.5); test hook.
    pub fn zeroed(in_dim: usize) -> Self {
        let n = param_count(in_dim);
        Self {
            in_dim,
            params: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            step: 0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Batched forward over `pixels` rows of packed inputs.
    pub fn forward(&self, inputs: Vec<f64>) -> MlpActivations {
        let pixels = inputs.len() / self.in_dim;
        let l = layout(self.in_dim);
        let w1 = &self.params[l.w1.clone()];
        let b1 = &self.params[l.b1.clone()];
        let w2 = &self.params[l.w2.clone()];
        let b2 = &self.params[l.b2.clone()];
        let w3 = &self.params[l.w3.clone()];
        let b3 = self.params[l.b3];

        let mut h1 = vec![0.0; pixels * HIDDEN];
        let mut h2 = vec![0.0; pixels * HIDDEN];
        let mut output = vec![0.0; pixels];
        for p in 0..pixels {
            let x = &inputs[p * self.in_dim..(p + 1) * self.in_dim];
            let h1p = &mut h1[p * HIDDEN..(p + 1) * HIDDEN];
            for (j, h) in h1p.iter_mut().enumerate() {
                let row = &w1[j * self.in_dim..(j + 1) * self.in_dim];
                let mut acc = b1[j];
                for (w, v) in row.iter().zip(x) {
                    acc += w * v;
                }
                *h = acc.max(0.0);
            }
            let h2p = &mut h2[p * HIDDEN..(p + 1) * HIDDEN];
            let h1p = &h1[p * HIDDEN..(p + 1) * HIDDEN];
            for (j, h) in h2p.iter_mut().enumerate() {
                let row = &w2[j * HIDDEN..(j + 1) * HIDDEN];
                let mut acc = b2[j];
                for (w, v) in row.iter().zip(h1p) {
                    acc += w * v;
                }
                *h = acc.max(0.0);
            }
            let mut acc = b3;
            for (w, v) in w3.iter().zip(&h2[p * HIDDEN..(p + 1) * HIDDEN]) {
                acc += w * v;
            }
            output[p] = 1.0 / (1.0 + (-acc).exp());
        }
        MlpActivations { inputs, h1, h2, output, pixels }
    }

    /// Gradient of `sum_p d_output[p] * output[p]` with respect to every
    /// parameter. `subset` optionally restricts the sum to given pixel rows.
    pub fn backward(
        &self,
        acts: &MlpActivations,
        d_output: &[f64],
        subset: Option<&[usize]>,
    ) -> Vec<f64> {
        assert_eq!(d_output.len(), acts.pixels);
        let l = layout(self.in_dim);
        let w2 = &self.params[l.w2.clone()];
        let w3 = &self.params[l.w3.clone()];
        let mut grads = vec![0.0; self.params.len()];

        let run = |p: usize, grads: &mut Vec<f64>| {
            let m = acts.output[p];
            let dz3 = d_output[p] * m * (1.0 - m);
            if dz3 == 0.0 {
                return;
            }
            let h1p = &acts.h1[p * HIDDEN..(p + 1) * HIDDEN];
            let h2p = &acts.h2[p * HIDDEN..(p + 1) * HIDDEN];
            let x = &acts.inputs[p * self.in_dim..(p + 1) * self.in_dim];

            grads[l.b3] += dz3;
            let mut dz2 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                grads[l.w3.start + j] += dz3 * h2p[j];
                if h2p[j] > 0.0 {
                    dz2[j] = dz3 * w3[j];
                }
            }
            let mut dz1 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                if dz2[j] == 0.0 {
                    continue;
                }
                grads[l.b2.start + j] += dz2[j];
                let row = l.w2.start + j * HIDDEN;
                for k in 0..HIDDEN {
                    grads[row + k] += dz2[j] * h1p[k];
                    if h1p[k] > 0.0 {
                        dz1[k] += dz2[j] * w2[j * HIDDEN + k];
                    }
                }
            }
            for j in 0..HIDDEN {
                if dz1[j] == 0.0 {
                    continue;
                }
                grads[l.b1.start + j] += dz1[j];
                let row = l.w1.start + j * self.in_dim;
                for (k, v) in x.iter().enumerate() {
                    grads[row + k] += dz1[j] * v;
                }
            }
        };

        match subset {
            Some(rows) => {
                for &p in rows {
                    run(p, &mut grads);
                }
            }
            None => {
                for p in 0..acts.pixels {
                    run(p, &mut grads);
                }
            }
        }
        grads
    }

    /// Standard Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &[f64], lr: f64) {
        assert_eq!(grads.len(), self.params.len());
        self.step += 1;
        let bias1 = 1.0 - BETA1.powi(self.step as i32);
        let bias2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..self.params.len() {
            let g = grads[i];
            self.moment1[i] = BETA1 * self.moment1[i] + (1.0 - BETA1) * g;
            self.moment2[i] = BETA2 * self.moment2[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.moment1[i] / bias1;
            let v_hat = self.moment2[i] / bias2;
            self.params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }

    /// Writes `MLP1`, the layer dimensions, then the f32 weights.
    pub fn write(&self, path: &Path) -> Result<(), MlpIoError> {
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        file.write_all(b"MLP1").map_err(err)?;
        let dims = [self.in_dim as u32, HIDDEN as u32, HIDDEN as u32, 1u32];
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        file.write_all(&(dims.len() as u32).to_le_bytes()).map_err(err)?;
        for d in dims {
            let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
            file.write_all(&d.to_le_bytes()).map_err(err)?;
        }
        for &p in &self.params {
            let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
            file.write_all(&(p as f32).to_le_bytes()).map_err(err)?;
        }
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        file.flush().map_err(err)
    }

    pub fn read(path: &Path) -> Result<Self, MlpIoError> {
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(err)?);
        let mut magic = [0u8; 4];
        let err = |source| MlpIoError::Io { path: path.to_path_buf(), source };
        file.read_exact(&mut magic).map_err(err)?;
        if &magic != b"MLP1" {
            return Err(MlpIoError::BadMagic { path: path.to_path_buf() });
        }
        let trunc = || MlpIoError::Truncated { path: path.to_path_buf() };
        let mut u32buf = [0u8; 4];
        file.read_exact(&mut u32buf).map_err(|_| trunc())?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            file.read_exact(&mut u32buf).map_err(|_| trunc())?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let in_dim = dims[0];
        let mut mlp = Self::zeroed(in_dim);
        for p in mlp.params.iter_mut() {
            file.read_exact(&mut u32buf).map_err(|_| trunc())?;
            *p = f32::from_le_bytes(u32buf) as f64;
        }
        Ok(mlp)
    }
}

/// Packs per-pixel MLP inputs: cached view features plus the depth residual.
pub fn pack_inputs(features: &FeatureMap, depth_residual: &ScalarRaster) -> Vec<f64> {
    let n = features.width * features.height;
    let dim = features.dim + 1;
    let mut inputs = vec![0.0; n * dim];
    for p in 0..n {
        let dst = &mut inputs[p * dim..(p + 1) * dim];
        dst[..features.dim]
            .copy_from_slice(&features.data[p * features.dim..(p + 1) * features.dim]);
        dst[features.dim] = depth_residual.data[p];
    }
    inputs
}

/// Per-pixel forward pass over a full view.
pub fn predict_mask(
    mlp: &MaskMlp,
    features: &FeatureMap,
    depth_residual: &ScalarRaster,
) -> (MaskMap, MlpActivations) {
    assert_eq!(features.dims(), depth_residual.dims(), "aligned rasters");
    assert_eq!(mlp.in_dim, features.dim + 1, "feature dim plus depth residual");
    let acts = mlp.forward(pack_inputs(features, depth_residual));
    let mask = MaskMap {
        width: features.width,
        height: features.height,
        data: acts.output.clone(),
    };
    (mask, acts)
}
