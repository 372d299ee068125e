//! The beta-VAE: one-hidden-layer tanh encoder and decoder, Gaussian latent
//! code with a log-variance head, Bernoulli (sigmoid) outputs.
//!
//! Parameters are stored as `f32`, the precision of checkpoint files, so a
//! saved model reproduces the in-memory one bit for bit. Every forward and
//! backward computation widens to `f64`.
//!
//! Matrix layouts are row-major with the input dimension as rows:
//!
//! | tensor     | shape | role                        |
//! |------------|-------|-----------------------------|
//! | `w1`       | D x H | input to encoder hidden     |
//! | `b1`       | H     |                             |
//! | `w_mu`     | H x Z | hidden to latent mean       |
//! | `b_mu`     | Z     |                             |
//! | `w_logvar` | H x Z | hidden to latent log-variance |
//! | `b_logvar` | Z     |                             |
//! | `v1`       | Z x H | latent to decoder hidden    |
//! | `c1`       | H     |                             |
//! | `v_out`    | H x D | decoder hidden to output    |
//! | `c_out`    | D     |                             |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Probabilities are kept within `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Names of the parameter tensors in their fixed serialization order.
pub const TENSOR_NAMES: [&str; 10] = [
    "W1", "b1", "W_mu", "b_mu", "W_logvar", "b_logvar", "V1", "c1", "V_out", "c_out",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Result<Self> {
        let dims = Self {
            input_dim,
            hidden_dim,
            latent_dim,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// (rows, cols) of each tensor, in [`TENSOR_NAMES`] order; vectors have one row.
    pub fn shapes(&self) -> [(usize, usize); 10] {
        let (d, h, z) = (self.input_dim, self.hidden_dim, self.latent_dim);
        [(d, h), (1, h), (h, z), (1, z), (h, z), (1, z), (z, h), (1, h), (h, d), (1, d)]
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// One value per model parameter, grouped into the ten tensors.
///
/// Used with `f32` for the parameters themselves and `f64` for gradients
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors<T> {
    dims: ModelDims,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w_mu: Vec<T>,
    pub b_mu: Vec<T>,
    pub w_logvar: Vec<T>,
    pub b_logvar: Vec<T>,
    pub v1: Vec<T>,
    pub c1: Vec<T>,
    pub v_out: Vec<T>,
    pub c_out: Vec<T>,
}

pub type ModelParameters = Tensors<f32>;
pub type Gradients = Tensors<f64>;

impl<T: Copy + Default> Tensors<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        let [s0, s1, s2, s3, s4, s5, s6, s7, s8, s9] = dims.shapes().map(|(r, c)| vec![T::default(); r * c]);
        Self {
            dims,
            w1: s0,
            b1: s1,
            w_mu: s2,
            b_mu: s3,
            w_logvar: s4,
            b_logvar: s5,
            v1: s6,
            c1: s7,
            v_out: s8,
            c_out: s9,
        }
    }

    /// Builds from tensors given in [`TENSOR_NAMES`] order.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Vec<T>>) -> Result<Self> {
        check_len("tensor count", 10, tensors.len())?;
        for (t, (r, c)) in tensors.iter().zip(dims.shapes()) {
            check_len("tensor length", r * c, t.len())?;
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        Ok(Self {
            dims,
            w1: next(),
            b1: next(),
            w_mu: next(),
            b_mu: next(),
            w_logvar: next(),
            b_logvar: next(),
            v1: next(),
            c1: next(),
            v_out: next(),
            c_out: next(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[T]; 10] {
        [
            &self.w1,
            &self.b1,
            &self.w_mu,
            &self.b_mu,
            &self.w_logvar,
            &self.b_logvar,
            &self.v1,
            &self.c1,
            &self.v_out,
            &self.c_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 10] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_logvar,
            &mut self.b_logvar,
            &mut self.v1,
            &mut self.c1,
            &mut self.v_out,
            &mut self.c_out,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shapes_match(&self, dims: ModelDims) -> bool {
        self.tensors()
            .iter()
            .zip(dims.shapes())
            .all(|(t, (r, c))| t.len() == r * c)
    }
}

impl Gradients {
    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * scale;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gaussian posterior parameters for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentCode {
    pub fn latent_dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.logvar.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.logvar).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_bce: f64,
    pub kl: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon_bce.is_finite() && self.kl.is_finite()
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`ModelParameters::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: ModelDims,
    hidden: Vec<f64>,
    code: LatentCode,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    z: Vec<f64>,
    dec_hidden: Vec<f64>,
    probs: Vec<f64>,
    beta: f64,
}

impl ForwardCache {
    pub fn code(&self) -> &LatentCode {
        &self.code
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn sigmoid(v: f64) -> f64 {
    let p = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `out[c] += sum_r input[r] * m[r * cols + c]`, skipping zero inputs.
fn accumulate_rows<T: Copy + Into<f64>>(input: &[T], m: &[f32], out: &mut [f64]) {
    let cols = out.len();
    for (r, &v) in input.iter().enumerate() {
        let v: f64 = v.into();
        if v == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += v * f64::from(w);
        }
    }
}

fn bias(b: &[f32]) -> Vec<f64> {
    b.iter().map(|&v| f64::from(v)).collect()
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence(code: &LatentCode) -> f64 {
    0.5 * code
        .mu
        .iter()
        .zip(&code.logvar)
        .map(|(m, lv)| m * m + (lv.exp_m1() - lv).max(0.0))
        .sum::<f64>()
}

/// Binary cross-entropy summed over cells; probabilities are clamped to
/// `[PROB_EPS, 1 - PROB_EPS]` first.
pub fn bce<T: Copy + Into<f64>>(probs: &[f64], target: &[T]) -> Result<f64> {
    check_len("bce target", probs.len(), target.len())?;
    Ok(probs
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y: f64 = y.into();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize(code: &LatentCode, noise: &[f64]) -> Result<Vec<f64>> {
    check_len("noise", code.latent_dim(), noise.len())?;
    Ok(code
        .mu
        .iter()
        .zip(&code.logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

impl ModelParameters {
    /// Glorot-uniform weights, zero biases, reproducible from `seed`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims);
        let shapes = dims.shapes();
        for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
            let (rows, cols) = shapes[i];
            if rows == 1 {
                continue;
            }
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for w in tensor.iter_mut() {
                *w = rng.random_range(-bound..bound) as f32;
            }
        }
        params
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn encode_hidden<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<(Vec<f64>, LatentCode)> {
        let d = self.dims;
        check_len("encoder input", d.input_dim, x.len())?;
        let mut hidden = bias(&self.b1);
        accumulate_rows(x, &self.w1, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut mu = bias(&self.b_mu);
        accumulate_rows(&hidden, &self.w_mu, &mut mu);
        let mut logvar = bias(&self.b_logvar);
        accumulate_rows(&hidden, &self.w_logvar, &mut logvar);
        Ok((hidden, LatentCode { mu, logvar }))
    }

    /// Posterior mean and log-variance of a window.
    pub fn encode<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<LatentCode> {
        self.encode_hidden(x).map(|(_, code)| code)
    }

    fn decode_hidden(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("latent vector", self.dims.latent_dim, z.len())?;
        let mut hidden = bias(&self.c1);
        accumulate_rows(z, &self.v1, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = bias(&self.c_out);
        accumulate_rows(&hidden, &self.v_out, &mut out);
        out.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok((hidden, out))
    }

    /// Per-cell probabilities of the output window, within `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decode_hidden(z).map(|(_, p)| p)
    }

    /// Negative ELBO for predicting `y` from `x` with one latent sample.
    pub fn elbo_loss<T: Copy + Into<f64>, U: Copy + Into<f64>>(
        &self,
        x: &[T],
        y: &[U],
        beta: f64,
        noise: &[f64],
    ) -> Result<(LossBreakdown, ForwardCache)> {
        check_len("target", self.dims.input_dim, y.len())?;
        let (hidden, code) = self.encode_hidden(x)?;
        let z = reparameterize(&code, noise)?;
        let (dec_hidden, probs) = self.decode_hidden(&z)?;
        let recon_bce = bce(&probs, y)?;
        let kl = kl_divergence(&code);
        let loss = LossBreakdown {
            total: recon_bce + beta * kl,
            recon_bce,
            kl,
            beta,
        };
        let cache = ForwardCache {
            dims: self.dims,
            sigma: code.sigma(),
            hidden,
            code,
            noise: noise.to_vec(),
            z,
            dec_hidden,
            probs,
            beta,
        };
        Ok((loss, cache))
    }

    /// Exact gradients of the loss computed by [`elbo_loss`](Self::elbo_loss).
    pub fn backward<T: Copy + Into<f64>, U: Copy + Into<f64>>(
        &self,
        x: &[T],
        y: &[U],
        cache: &ForwardCache,
    ) -> Result<Gradients> {
        let mut grads = Gradients::zeros(self.dims);
        self.backward_into(x, y, cache, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale` times the gradient to `grads`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_into<T: Copy + Into<f64>, U: Copy + Into<f64>>(
        &self,
        x: &[T],
        y: &[U],
        cache: &ForwardCache,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        let ModelDims {
            input_dim: d,
            hidden_dim: h,
            latent_dim: zd,
        } = self.dims;
        if cache.dims != self.dims
            || cache.hidden.len() != h
            || cache.probs.len() != d
            || cache.z.len() != zd
            || !grads.shapes_match(self.dims)
        {
            return Err(Error::StaleCache);
        }
        check_len("encoder input", d, x.len())?;
        check_len("target", d, y.len())?;

        // output logits; saturated (clamped) cells have zero slope
        let d_out: Vec<f64> = cache
            .probs
            .iter()
            .zip(y)
            .map(|(&p, &t)| {
                if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                    0.0
                } else {
                    scale * (p - t.into())
                }
            })
            .collect();

        for (g, &v) in grads.c_out.iter_mut().zip(&d_out) {
            *g += v;
        }
        let mut d_dec_hidden = vec![0.0; h];
        for j in 0..h {
            let gj = cache.dec_hidden[j];
            let w_row = &self.v_out[j * d..(j + 1) * d];
            let g_row = &mut grads.v_out[j * d..(j + 1) * d];
            let mut acc = 0.0;
            for i in 0..d {
                g_row[i] += gj * d_out[i];
                acc += f64::from(w_row[i]) * d_out[i];
            }
            d_dec_hidden[j] = acc * (1.0 - gj * gj);
        }

        for (g, &v) in grads.c1.iter_mut().zip(&d_dec_hidden) {
            *g += v;
        }
        let mut d_z = vec![0.0; zd];
        for k in 0..zd {
            let zk = cache.z[k];
            let w_row = &self.v1[k * h..(k + 1) * h];
            let g_row = &mut grads.v1[k * h..(k + 1) * h];
            let mut acc = 0.0;
            for j in 0..h {
                g_row[j] += zk * d_dec_hidden[j];
                acc += f64::from(w_row[j]) * d_dec_hidden[j];
            }
            d_z[k] = acc;
        }

        let beta = cache.beta;
        let code = &cache.code;
        let d_mu: Vec<f64> = (0..zd).map(|k| d_z[k] + scale * beta * code.mu[k]).collect();
        let d_logvar: Vec<f64> = (0..zd)
            .map(|k| {
                0.5 * d_z[k] * cache.noise[k] * cache.sigma[k]
                    + scale * beta * 0.5 * code.logvar[k].exp_m1()
            })
            .collect();

        for k in 0..zd {
            grads.b_mu[k] += d_mu[k];
            grads.b_logvar[k] += d_logvar[k];
        }
        let mut d_hidden = vec![0.0; h];
        for j in 0..h {
            let hj = cache.hidden[j];
            let mut acc = 0.0;
            for k in 0..zd {
                grads.w_mu[j * zd + k] += hj * d_mu[k];
                grads.w_logvar[j * zd + k] += hj * d_logvar[k];
                acc += f64::from(self.w_mu[j * zd + k]) * d_mu[k]
                    + f64::from(self.w_logvar[j * zd + k]) * d_logvar[k];
            }
            d_hidden[j] = acc * (1.0 - hj * hj);
        }

        for (g, &v) in grads.b1.iter_mut().zip(&d_hidden) {
            *g += v;
        }
        for (i, &xi) in x.iter().enumerate() {
            let xi: f64 = xi.into();
            if xi == 0.0 {
                continue;
            }
            for (g, &v) in grads.w1[i * h..(i + 1) * h].iter_mut().zip(&d_hidden) {
                *g += xi * v;
            }
        }
        Ok(())
    }
}
