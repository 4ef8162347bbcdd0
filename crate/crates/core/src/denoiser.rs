//! A two-layer convolutional noise predictor with hand-derived gradients.
//!
//! ```text
//! a[h, p] = b1[h] + temb[t] + cemb[c, h] + pos[h, p] + sum_k w1[h, k] * x[p + k]
//! z[h, p] = tanh(a[h, p])
//! out[p]  = b2 + sum_h sum_k w2[h, k] * z[h, p + k]
//! ```
//!
//! Both convolutions are 3x3 cross-correlations, so every output pixel sees
//! exactly the 5x5 input neighbourhood around it. With zero padding, pixels
//! within two pixels of the border have truncated receptive fields.
//!
//! Flat parameter order (the layout of [`GradientVector`] and of checkpoints):
//!
//! | block  | shape            | init                       |
//! |--------|------------------|----------------------------|
//! | `w1`   | `H x 3 x 3`      | U(-1/3, 1/3)               |
//! | `b1`   | `H`              | U(-1/3, 1/3)               |
//! | `temb` | `T`              | U(-1/3, 1/3)               |
//! | `cemb` | `(V + 1) x H`    | U(-1/3, 1/3), row V = null |
//! | `pos`  | `H x height x width` | 0                      |
//! | `w2`   | `H x 3 x 3`      | U(-1/sqrt(9H), 1/sqrt(9H)) |
//! | `b2`   | `1`              | U(-1/sqrt(9H), 1/sqrt(9H)) |
//!
//! `pos` is a per-pixel hidden bias. It starts at zero, so a freshly
//! initialised model is translation-equivariant away from the border.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    forward_noise, squared_error, Condition, DiffusionError, LatentImage, NoiseSchedule, Result,
};
use crate::seed;

const NONE: usize = usize::MAX;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DI3PODN1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zero,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub width: usize,
    pub height: usize,
    pub hidden: usize,
    pub num_timesteps: usize,
    /// Number of real condition tokens; the null token is stored after them.
    pub vocab_size: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl DenoiserConfig {
    pub fn small(
        width: usize,
        height: usize,
        hidden: usize,
        num_timesteps: usize,
        vocab_size: usize,
    ) -> Self {
        Self {
            width,
            height,
            hidden,
            num_timesteps,
            vocab_size,
            padding: Padding::Zero,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + 9 * h;
        let temb = b1 + h;
        let cemb = temb + self.num_timesteps;
        let pos = cemb + (self.vocab_size + 1) * h;
        let w2 = pos + h * self.width * self.height;
        let b2 = w2 + 9 * h;
        ParamLayout {
            w1,
            b1,
            temb,
            cemb,
            pos,
            w2,
            b2,
            len: b2 + 1,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub w1: usize,
    pub b1: usize,
    pub temb: usize,
    pub cemb: usize,
    pub pos: usize,
    pub w2: usize,
    pub b2: usize,
    pub len: usize,
}

/// Flat gradient aligned with the denoiser's parameter ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &GradientVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &GradientVector) -> GradientVector {
        GradientVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub t: usize,
    pub cond_row: usize,
    /// `tanh` activations, `hidden x pixels`.
    pub z: Vec<f64>,
    pub out: LatentImage,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: Vec<f64>,
    neighbours: Vec<[usize; 9]>,
}

impl PartialEq for Denoiser {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

fn neighbour_table(cfg: &DenoiserConfig) -> Vec<[usize; 9]> {
    let (w, h) = (cfg.width as isize, cfg.height as isize);
    let mut table = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..h {
        for x in 0..w {
            let mut row = [NONE; 9];
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let k = ((dy + 1) * 3 + (dx + 1)) as usize;
                    let (nx, ny) = (x + dx, y + dy);
                    row[k] = match cfg.padding {
                        Padding::Zero => {
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                NONE
                            } else {
                                (ny * w + nx) as usize
                            }
                        }
                        Padding::Periodic => (ny.rem_euclid(h) * w + nx.rem_euclid(w)) as usize,
                    };
                }
            }
            table.push(row);
        }
    }
    table
}

impl Denoiser {
    pub fn from_params(config: DenoiserConfig, params: Vec<f64>) -> Result<Self> {
        let len = config.layout().len;
        if params.len() != len {
            return Err(DiffusionError::Config(format!(
                "expected {len} parameters, got {}",
                params.len()
            )));
        }
        if config.width == 0 || config.height == 0 || config.hidden == 0 || config.num_timesteps == 0
        {
            return Err(DiffusionError::Config("all dimensions must be > 0".into()));
        }
        Ok(Self {
            neighbours: neighbour_table(&config),
            config,
            params,
        })
    }

    pub fn zeros(config: DenoiserConfig) -> Self {
        let len = config.layout().len;
        Self::from_params(config, vec![0.0; len]).expect("consistent zero model")
    }

    /// Uniform fan-in initialisation, deterministic in `seed`.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let l = config.layout();
        let mut rng = seed::rng_from(seed, &[0xde_a1]);
        let mut params = vec![0.0; l.len];
        let s1 = 1.0 / 3.0;
        let s2 = 1.0 / ((9 * config.hidden) as f64).sqrt();
        for v in &mut params[l.w1..l.pos] {
            *v = rng.random_range(-s1..s1);
        }
        for v in &mut params[l.w2..l.len] {
            *v = rng.random_range(-s2..s2);
        }
        Self::from_params(config, params).expect("consistent init")
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> ParamLayout {
        self.config.layout()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.config.width, self.config.height)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn check_condition(&self, c: Condition) -> Result<()> {
        if !c.null && c.token as usize >= self.config.vocab_size {
            return Err(DiffusionError::InvalidCondition {
                token: c.token,
                vocab: self.config.vocab_size as u32,
            });
        }
        Ok(())
    }

    fn cond_row(&self, c: Condition) -> usize {
        if c.null {
            self.config.vocab_size
        } else {
            c.token as usize
        }
    }

    fn check_inputs(&self, x: &LatentImage, t: usize, c: Condition) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(DiffusionError::ShapeMismatch {
                expected: self.shape(),
                got: x.shape(),
            });
        }
        if t == 0 || t > self.config.num_timesteps {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.config.num_timesteps,
            });
        }
        self.check_condition(c)
    }

    /// Forward pass keeping hidden activations.
    pub fn forward(&self, x: &LatentImage, t: usize, c: Condition) -> Result<ForwardCache> {
        self.check_inputs(x, t, c)?;
        let l = self.layout();
        let p = &self.params;
        let hidden = self.config.hidden;
        let n = x.values.len();
        let cond_row = self.cond_row(c);
        let mut z = vec![0.0; hidden * n];
        for h in 0..hidden {
            let w1 = &p[l.w1 + 9 * h..l.w1 + 9 * h + 9];
            let bias = p[l.b1 + h] + p[l.temb + t - 1] + p[l.cemb + cond_row * hidden + h];
            let pos = &p[l.pos + h * n..l.pos + (h + 1) * n];
            let zh = &mut z[h * n..(h + 1) * n];
            for (q, nb) in self.neighbours.iter().enumerate() {
                let mut a = bias + pos[q];
                for k in 0..9 {
                    if nb[k] != NONE {
                        a += w1[k] * x.values[nb[k]];
                    }
                }
                zh[q] = a.tanh();
            }
        }
        let mut out = vec![p[l.b2]; n];
        for h in 0..hidden {
            let w2 = &p[l.w2 + 9 * h..l.w2 + 9 * h + 9];
            let zh = &z[h * n..(h + 1) * n];
            for (q, nb) in self.neighbours.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..9 {
                    if nb[k] != NONE {
                        acc += w2[k] * zh[nb[k]];
                    }
                }
                out[q] += acc;
            }
        }
        Ok(ForwardCache {
            t,
            cond_row,
            z,
            out: LatentImage {
                width: x.width,
                height: x.height,
                values: out,
            },
        })
    }

    /// `eps_theta(x_t, t, c)`.
    pub fn predict_eps(&self, x_t: &LatentImage, t: usize, c: Condition) -> Result<LatentImage> {
        Ok(self.forward(x_t, t, c)?.out)
    }

    /// Backpropagate output-pixel sensitivities `dout` into `grad`.
    fn backward_into(
        &self,
        x: &LatentImage,
        cache: &ForwardCache,
        dout: &[f64],
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let p = &self.params;
        let hidden = self.config.hidden;
        let n = dout.len();
        grad[l.b2] += dout.iter().sum::<f64>();
        let mut da = vec![0.0; n];
        for h in 0..hidden {
            let w2 = &p[l.w2 + 9 * h..l.w2 + 9 * h + 9];
            let zh = &cache.z[h * n..(h + 1) * n];
            da.iter_mut().for_each(|v| *v = 0.0);
            for (q, nb) in self.neighbours.iter().enumerate() {
                let g = dout[q];
                if g == 0.0 {
                    continue;
                }
                for k in 0..9 {
                    let r = nb[k];
                    if r != NONE {
                        grad[l.w2 + 9 * h + k] += g * zh[r];
                        da[r] += w2[k] * g;
                    }
                }
            }
            let mut sum_da = 0.0;
            for r in 0..n {
                let d = da[r] * (1.0 - zh[r] * zh[r]);
                da[r] = d;
                sum_da += d;
                grad[l.pos + h * n + r] += d;
            }
            grad[l.b1 + h] += sum_da;
            grad[l.temb + cache.t - 1] += sum_da;
            grad[l.cemb + cache.cond_row * hidden + h] += sum_da;
            for (q, nb) in self.neighbours.iter().enumerate() {
                let d = da[q];
                if d == 0.0 {
                    continue;
                }
                for k in 0..9 {
                    if nb[k] != NONE {
                        grad[l.w1 + 9 * h + k] += d * x.values[nb[k]];
                    }
                }
            }
        }
    }

    /// Loss `||eps - eps_theta(x_t)||^2` and its parameter gradient, given `x_t`.
    pub fn loss_grad_at(
        &self,
        x_t: &LatentImage,
        t: usize,
        eps: &LatentImage,
        c: Condition,
    ) -> Result<(f64, GradientVector)> {
        x_t.check_same_shape(eps)?;
        let cache = self.forward(x_t, t, c)?;
        let loss = squared_error(eps, &cache.out)?;
        let dout: Vec<f64> = cache
            .out
            .values
            .iter()
            .zip(&eps.values)
            .map(|(o, e)| 2.0 * (o - e))
            .collect();
        let mut grad = vec![0.0; self.num_params()];
        self.backward_into(x_t, &cache, &dout, &mut grad);
        Ok((loss, GradientVector(grad)))
    }

    /// DDPM loss at `(x0, t, eps, c)` together with its analytic gradient.
    pub fn loss_grad(
        &self,
        x0: &LatentImage,
        t: usize,
        eps: &LatentImage,
        c: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<(f64, GradientVector)> {
        let noisy = forward_noise(x0, t, eps, schedule)?;
        self.loss_grad_at(&noisy.x_t, t, eps, c)
    }

    /// Gradient of the single-pixel term `(eps_p - eps_theta(x_t)_p)^2`.
    /// Summed over every pixel this reproduces [`Denoiser::loss_grad_at`].
    pub fn per_pixel_grad_contribution(
        &self,
        x_t: &LatentImage,
        t: usize,
        eps: &LatentImage,
        c: Condition,
        pixel: (usize, usize),
    ) -> Result<GradientVector> {
        x_t.check_same_shape(eps)?;
        let cache = self.forward(x_t, t, c)?;
        let mut grad = vec![0.0; self.num_params()];
        self.pixel_grad_into(x_t, &cache, eps, pixel, &mut grad)?;
        Ok(GradientVector(grad))
    }

    /// Writes the single-pixel gradient into `grad` (which must be zeroed by
    /// the caller). Only parameters inside the pixel's receptive field are
    /// touched, in a fixed order, so identical local inputs give bitwise
    /// identical contributions.
    pub fn pixel_grad_into(
        &self,
        x: &LatentImage,
        cache: &ForwardCache,
        eps: &LatentImage,
        (px, py): (usize, usize),
        grad: &mut [f64],
    ) -> Result<()> {
        let (w, h) = self.shape();
        if px >= w || py >= h {
            return Err(DiffusionError::PixelOutOfBounds {
                x: px,
                y: py,
                width: w,
                height: h,
            });
        }
        let l = self.layout();
        let prm = &self.params;
        let hidden = self.config.hidden;
        let n = w * h;
        let p = py * w + px;
        let g = 2.0 * (cache.out.values[p] - eps.values[p]);
        grad[l.b2] += g;
        let nb = self.neighbours[p];
        for hh in 0..hidden {
            let zh = &cache.z[hh * n..(hh + 1) * n];
            let mut sum_da = 0.0;
            for k in 0..9 {
                let q = nb[k];
                if q == NONE {
                    continue;
                }
                grad[l.w2 + 9 * hh + k] += g * zh[q];
                let d = prm[l.w2 + 9 * hh + k] * g * (1.0 - zh[q] * zh[q]);
                sum_da += d;
                grad[l.pos + hh * n + q] += d;
                let nq = &self.neighbours[q];
                for j in 0..9 {
                    if nq[j] != NONE {
                        grad[l.w1 + 9 * hh + j] += d * x.values[nq[j]];
                    }
                }
            }
            grad[l.b1 + hh] += sum_da;
            grad[l.temb + cache.t - 1] += sum_da;
            grad[l.cemb + cache.cond_row * hidden + hh] += sum_da;
        }
        Ok(())
    }

    /// Little-endian checkpoint bytes:
    ///
    /// ```text
    /// magic  "DI3PODN1"                     8 bytes
    /// u32    version (1)
    /// u32    width, height, hidden, num_timesteps, vocab_size
    /// u8     padding (0 = zero, 1 = periodic), 3 reserved zero bytes
    /// u64    parameter count
    /// f64    parameters in flat order
    /// ```
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(48 + 8 * self.params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.width, c.height, c.hidden, c.num_timesteps, c.vocab_size] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let pad = match c.padding {
            Padding::Zero => 0u8,
            Padding::Periodic => 1u8,
        };
        buf.extend_from_slice(&[pad, 0, 0, 0]);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| DiffusionError::Config(format!("bad checkpoint: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("magic"));
        }
        let mut u32s = [0u32; 6];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != CHECKPOINT_VERSION {
            return Err(bad("version"));
        }
        let mut pad = [0u8; 4];
        r.read_exact(&mut pad).map_err(|_| bad("truncated header"))?;
        let padding = match pad[0] {
            0 => Padding::Zero,
            1 => Padding::Periodic,
            _ => return Err(bad("padding")),
        };
        let mut cnt = [0u8; 8];
        r.read_exact(&mut cnt).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(cnt) as usize;
        if r.len() != count * 8 {
            return Err(bad("parameter payload length"));
        }
        let params = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let config = DenoiserConfig {
            width: u32s[1] as usize,
            height: u32s[2] as usize,
            hidden: u32s[3] as usize,
            num_timesteps: u32s[4] as usize,
            vocab_size: u32s[5] as usize,
            padding,
        };
        Self::from_params(config, params)
    }

    /// Writes `path` (binary) and `path.json` (hyperparameter sidecar).
    pub fn save_checkpoint(&self, path: &Path, extra: serde_json::Value) -> std::io::Result<()> {
        let sidecar = serde_json::json!({
            "format": "di3po-denoiser",
            "version": CHECKPOINT_VERSION,
            "config": self.config,
            "layout": self.layout(),
            "param_count": self.params.len(),
            "extra": extra,
        });
        crate::fsutil::write_atomic(path, &self.to_checkpoint_bytes())?;
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        crate::fsutil::write_atomic(&sidecar_path(path), &json)
    }

    pub fn load_checkpoint(path: &Path) -> std::io::Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
