use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Intensity, 3x3 mean, 3x3 standard deviation, x and y in `[-1, 1]`.
pub const N_FEATURES: usize = 5;
pub const N_CLASSES: usize = 2;

/// Per-pixel features as an `|Ω| x 5` matrix. Border pixels use the
/// in-frame part of their neighbourhood.
pub fn pixel_features(image: &[f64], width: usize, height: usize) -> Result<Tensor> {
    if image.len() != width * height {
        return Err(Error::Shape {
            op: "pixel_features",
            detail: format!("{} pixels for a {width}x{height} image", image.len()),
        });
    }
    let norm = |v: usize, n: usize| if n > 1 { 2.0 * v as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(image.len() * N_FEATURES);
    for row in 0..height {
        for col in 0..width {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for r in row.saturating_sub(1)..=(row + 1).min(height - 1) {
                for c in col.saturating_sub(1)..=(col + 1).min(width - 1) {
                    let v = image[r * width + c];
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            data.extend([image[row * width + col], mean, var.sqrt(), norm(col, width), norm(row, height)]);
        }
    }
    Tensor::matrix(width * height, N_FEATURES, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            temperature: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Shapes of `[W1, b1, W2, b2]`.
    pub fn param_shapes(&self) -> [Vec<usize>; 4] {
        [
            vec![N_FEATURES, self.hidden],
            vec![self.hidden],
            vec![self.hidden, N_CLASSES],
            vec![N_CLASSES],
        ]
    }
}

/// Two-layer perceptron shared by every pixel: `softmax(T (relu(x W1 + b1) W2 + b2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelModel {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
}

impl PixelModel {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        // Stream 1 keeps initialization independent of the shuffling stream.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let fan_in = [N_FEATURES, N_FEATURES, config.hidden, config.hidden];
        let params = config
            .param_shapes()
            .into_iter()
            .zip(fan_in)
            .map(|(shape, fan)| {
                let bound = 1.0 / (fan as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config.param_shapes().into_iter().map(Tensor::zeros).collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if params.len() != 4 || params.iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::Shape {
                op: "PixelModel::from_params",
                detail: format!(
                    "expected {expected:?}, got {:?}",
                    params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
                ),
            });
        }
        Ok(Self { config, params })
    }

    /// Record the softmax map `S` (`|Ω| x 2`) on a tape.
    pub fn forward(config: &ModelConfig, tape: &mut Tape, params: &[Var], features: Var) -> Result<Var> {
        let h = tape.matmul(features, params[0])?;
        let h = tape.add_row(h, params[1])?;
        let h = tape.relu(h)?;
        let z = tape.matmul(h, params[2])?;
        let z = tape.add_row(z, params[3])?;
        tape.softmax_rows(z, config.temperature)
    }

    /// `S` without recording, as an `|Ω| x 2` matrix.
    pub fn probabilities(&self, features: &Tensor) -> Result<Tensor> {
        let Some((n, N_FEATURES)) = features.dims2() else {
            return Err(Error::Shape {
                op: "PixelModel::probabilities",
                detail: format!("features of shape {:?}", features.shape()),
            });
        };
        let hidden = self.config.hidden;
        let (w1, b1, w2, b2) = (self.params[0].data(), self.params[1].data(), self.params[2].data(), self.params[3].data());
        let mut out = vec![0.0; n * N_CLASSES];
        let mut h = vec![0.0; hidden];
        let mut z = [0.0; N_CLASSES];
        for (x, s) in features.data().chunks_exact(N_FEATURES).zip(out.chunks_exact_mut(N_CLASSES)) {
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * w1[i * hidden + j];
                }
                *hj = (acc + b1[j]).max(0.0);
            }
            for (k, zk) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, hj) in h.iter().enumerate() {
                    acc += hj * w2[j * N_CLASSES + k];
                }
                *zk = acc + b2[k];
            }
            softmax_row(&z, self.config.temperature, s);
        }
        Tensor::matrix(n, N_CLASSES, out)
    }
}

/// Argmax mask (foreground = class 1, ties to background) and the softmax map.
pub fn predict_from_features(model: &PixelModel, features: &Tensor) -> Result<(Vec<bool>, Tensor)> {
    let s = model.probabilities(features)?;
    let mask = s.data().chunks_exact(N_CLASSES).map(|p| p[1] > p[0]).collect();
    Ok((mask, s))
}

pub fn predict_mask(model: &PixelModel, image: &[f64], width: usize, height: usize) -> Result<(Vec<bool>, Tensor)> {
    predict_from_features(model, &pixel_features(image, width, height)?)
}
