//! The eigen-guided pull/push loss and an NT-Xent baseline.
//!
//! Similarities are dot products of unit rows. Both ordered pairs of every
//! couple are summed and the total is divided by `B(B−1)`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossHyper {
    pub lambda: f64,
    pub tau: f64,
    /// Affinity smoothing. Unrelated to the kernel bandwidth.
    pub sigma: f64,
    pub margin: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            lambda: 4.0,
            tau: 0.075,
            sigma: 0.5,
            margin: 0.2,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.tau, self.sigma]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Parameter(format!(
                "need lambda, tau, sigma > 0 and margin in [0, 1), got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `(max − w_i)/(max − min)`; all zeros when the batch is constant.
pub fn normalize_weights(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return vec![0.0; w.len()];
    }
    w.iter().map(|x| (max - x) / (max - min)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityBatch {
    pub w_hat: Vec<f64>,
    pub s: Array2<f64>,
}

pub fn stress_affinity(w_hat: &[f64], sigma: f64) -> AffinityBatch {
    let b = w_hat.len();
    let s = Array2::from_shape_fn((b, b), |(i, j)| {
        (-(w_hat[i] - w_hat[j]).abs() / sigma).exp()
    });
    AffinityBatch {
        w_hat: w_hat.to_vec(),
        s,
    }
}

/// `S_ij = (1 + cos(x_i, x_j))/2` from raw series; zero rows count as cos 0.
pub fn cosine_affinity(x: ArrayView2<f64>) -> Array2<f64> {
    let mut u = x.to_owned();
    crate::util::normalize_rows(&mut u);
    let mut s = u.dot(&u.t()).mapv(|c| (1.0 + c.clamp(-1.0, 1.0)) / 2.0);
    s.diag_mut().fill(1.0);
    s
}

pub fn pull_loss(sim: &Array2<f64>, s: &Array2<f64>, tau: f64) -> f64 {
    off_diagonal_sum(sim, |i, j, c| s[[i, j]] * (1.0 + (1.0 - c) / tau).ln())
}

pub fn push_loss(sim: &Array2<f64>, s: &Array2<f64>, lambda: f64, margin: f64) -> f64 {
    off_diagonal_sum(sim, |i, j, c| {
        lambda * (1.0 - s[[i, j]]) * (c - margin).max(0.0)
    })
}

fn off_diagonal_sum(sim: &Array2<f64>, f: impl Fn(usize, usize, f64) -> f64) -> f64 {
    let b = sim.nrows();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                total += f(i, j, sim[[i, j]]);
            }
        }
    }
    total
}

fn check_batch(z: &Array2<f64>) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::Contract(format!(
            "loss needs a batch of at least 2, got {}",
            z.nrows()
        )));
    }
    for (i, r) in z.rows().into_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "embedding row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Loss and `dL/dz` for eigen weights of the batch.
pub fn eigencl_loss(
    z: &Array2<f64>,
    w_batch: &[f64],
    hyper: &LossHyper,
) -> Result<(f64, Array2<f64>)> {
    if w_batch.len() != z.nrows() {
        return Err(Error::Contract(format!(
            "{} weights for {} embeddings",
            w_batch.len(),
            z.nrows()
        )));
    }
    let aff = stress_affinity(&normalize_weights(w_batch), hyper.sigma);
    eigencl_loss_with_affinity(z, &aff.s, hyper)
}

/// Same loss with an externally supplied affinity matrix.
pub fn eigencl_loss_with_affinity(
    z: &Array2<f64>,
    s: &Array2<f64>,
    hyper: &LossHyper,
) -> Result<(f64, Array2<f64>)> {
    check_batch(z)?;
    if s.dim() != (z.nrows(), z.nrows()) {
        return Err(Error::Contract(format!(
            "affinity is {:?} for a batch of {}",
            s.dim(),
            z.nrows()
        )));
    }
    Ok(pair_loss_grad(z, s, hyper))
}

/// Unchecked core: similarities are raw dot products, so the gradient is exact
/// for any `z`, normalized or not.
pub fn pair_loss_grad(z: &Array2<f64>, s: &Array2<f64>, hyper: &LossHyper) -> (f64, Array2<f64>) {
    let b = z.nrows();
    let sim = z.dot(&z.t());
    let norm = (b * (b - 1)) as f64;
    let loss =
        (pull_loss(&sim, s, hyper.tau) + push_loss(&sim, s, hyper.lambda, hyper.margin)) / norm;
    let mut g = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let c = sim[[i, j]];
            let sij = s[[i, j]];
            let mut d = -sij / (hyper.tau + 1.0 - c);
            if c > hyper.margin {
                d += hyper.lambda * (1.0 - sij);
            }
            g[[i, j]] = d;
        }
    }
    // L depends on c_ij = z_i·z_j through both ordered pairs.
    let sym = &g + &g.t();
    (loss, sym.dot(z) / norm)
}

/// NT-Xent over the 2B views `[z_a; z_b]`, positives at offset B.
pub fn ntxent_loss(
    z_a: &Array2<f64>,
    z_b: &Array2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if z_a.dim() != z_b.dim() {
        return Err(Error::Contract(format!(
            "view shapes differ: {:?} vs {:?}",
            z_a.dim(),
            z_b.dim()
        )));
    }
    if z_a.nrows() < 2 {
        return Err(Error::Contract(format!(
            "NT-Xent needs a batch of at least 2, got {}",
            z_a.nrows()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    check_batch(z_a)?;
    check_batch(z_b)?;
    Ok(ntxent_core(z_a, z_b, tau))
}

pub fn ntxent_core(
    z_a: &Array2<f64>,
    z_b: &Array2<f64>,
    tau: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let b = z_a.nrows();
    let n = 2 * b;
    let v = ndarray::concatenate(ndarray::Axis(0), &[z_a.view(), z_b.view()]).unwrap();
    let logits = v.dot(&v.t()) / tau;
    let mut coef = Array2::zeros((n, n));
    let mut loss = 0.0;
    for k in 0..n {
        let pos = (k + b) % n;
        let max = (0..n)
            .filter(|&l| l != k)
            .map(|l| logits[[k, l]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&l| l != k)
            .map(|l| (logits[[k, l]] - max).exp())
            .sum();
        loss += -(logits[[k, pos]] - max) + denom.ln();
        for l in (0..n).filter(|&l| l != k) {
            let p = (logits[[k, l]] - max).exp() / denom;
            coef[[k, l]] = p - if l == pos { 1.0 } else { 0.0 };
        }
    }
    let scale = 1.0 / (n as f64 * tau);
    let grad = (&coef + &coef.t()).dot(&v) * scale;
    let ga = grad.slice(ndarray::s![..b, ..]).to_owned();
    let gb = grad.slice(ndarray::s![b.., ..]).to_owned();
    (loss / n as f64, ga, gb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Additive Gaussian jitter sd.
    pub jitter_sd: f64,
    /// Temporal stretch factors are drawn from `1 ± scale`.
    pub scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jitter_sd: 0.02,
            scale: 0.05,
        }
    }
}

/// One augmented view: each series is resampled at stretched dates (held at
/// the ends) and jittered.
pub fn augment(
    x: &Array2<f64>,
    dates: &[u32],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let t = x.ncols();
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        let f = 1.0 + cfg.scale * (2.0 * rng.random::<f64>() - 1.0);
        for j in 0..t {
            let v = interpolate(dates, x.row(i).as_slice().unwrap(), dates[j] as f64 * f);
            let z: f64 = rng.sample(StandardNormal);
            out[[i, j]] = v + cfg.jitter_sd * z;
        }
    }
    out
}

fn interpolate(dates: &[u32], values: &[f64], day: f64) -> f64 {
    if day <= dates[0] as f64 {
        return values[0];
    }
    for k in 1..dates.len() {
        let (d0, d1) = (dates[k - 1] as f64, dates[k] as f64);
        if day <= d1 {
            return values[k - 1] + (values[k] - values[k - 1]) * (day - d0) / (d1 - d0);
        }
    }
    values[values.len() - 1]
}
