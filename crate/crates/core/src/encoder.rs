//! Feed-forward encoder with batch-norm + LeakyReLU blocks and an L2-normalized
//! output, with hand-written backpropagation.
//!
//! Each block is `Linear → BatchNorm → LeakyReLU`; the final block is the
//! projection head. Train mode normalizes with batch statistics, eval mode
//! with running statistics.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "eigencl-encoder/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The raw NDRE series.
    #[default]
    Raw,
    /// Raw series followed by its first differences.
    WithDifferences,
}

impl FeatureMode {
    pub fn width(self, t: usize) -> usize {
        match self {
            FeatureMode::Raw => t,
            FeatureMode::WithDifferences => 2 * t - 1,
        }
    }

    pub fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            FeatureMode::Raw => x.clone(),
            FeatureMode::WithDifferences => {
                let t = x.ncols();
                Array2::from_shape_fn((x.nrows(), 2 * t - 1), |(i, j)| {
                    if j < t {
                        x[[i, j]]
                    } else {
                        let k = j - t + 1;
                        x[[i, k]] - x[[i, k - 1]]
                    }
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    /// Weight of the newest batch in the running statistics.
    pub bn_momentum: f64,
    pub features: FeatureMode,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 5,
            hidden_dims: vec![64, 64],
            embed_dim: 32,
            leaky_slope: 0.01,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            features: FeatureMode::Raw,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope {} not in (0, 1)",
                self.leaky_slope
            )));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("bn_epsilon must be > 0".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("bn_momentum must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.embed_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// out × in.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<Layer>,
    /// Bumped on every parameter update; ties caches to a parameter state.
    #[serde(skip)]
    generation: u64,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_act: Array2<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Activations saved by a train-mode forward pass.
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
    unnormalized: Array2<f64>,
    z: Array2<f64>,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &Array2<f64> {
        &self.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Same order as [`Encoder::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for g in &self.layers {
            v.extend(g.weight.iter());
            v.extend(g.bias.iter());
            v.extend(g.gamma.iter());
            v.extend(g.beta.iter());
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
            a.gamma += &b.gamma;
            a.beta += &b.beta;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    encoder: Encoder,
}

impl Encoder {
    /// Glorot-uniform weights, zero biases, unit scale, zero shift.
    pub fn init(config: &EncoderConfig) -> Result<Encoder> {
        config.validate()?;
        let mut rng = util::rng(config.seed);
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::zeros(fan_out),
                    gamma: Array1::ones(fan_out),
                    beta: Array1::zeros(fan_out),
                    running_mean: Array1::zeros(fan_out),
                    running_var: Array1::ones(fan_out),
                }
            })
            .collect();
        Ok(Encoder {
            config: config.clone(),
            layers,
            generation: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Config(format!(
                "encoder expects {} input features, got {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.config.leaky_slope * v
        }
    }

    /// Train-mode forward without touching running statistics.
    pub fn forward_train_pure(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let b = x.nrows();
        if b < 2 {
            return Err(Error::Contract(format!(
                "train-mode batch needs at least 2 rows, got {b}"
            )));
        }
        let eps = self.config.bn_epsilon;
        let mut a = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = a.dot(&layer.weight.t()) + &layer.bias;
            let mean = h.mean_axis(Axis(0)).unwrap();
            let centered = &h - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
            let xhat = &centered * &inv_std;
            let pre_act = &xhat * &layer.gamma + &layer.beta;
            let out = pre_act.mapv(|v| self.leaky(v));
            caches.push(LayerCache {
                input: a,
                xhat,
                inv_std,
                pre_act,
                mean,
                var,
            });
            a = out;
        }
        let mut z = a.clone();
        util::normalize_rows(&mut z);
        Ok((
            z.clone(),
            ForwardCache {
                generation: self.generation,
                layers: caches,
                unnormalized: a,
                z,
            },
        ))
    }

    /// Train-mode forward; also folds the batch statistics into the running ones.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        let (z, cache) = self.forward_train_pure(x)?;
        let m = self.config.bn_momentum;
        let b = x.nrows() as f64;
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers) {
            let unbiased = &c.var * (b / (b - 1.0));
            layer.running_mean = &layer.running_mean * (1.0 - m) + &c.mean * m;
            layer.running_var = &layer.running_var * (1.0 - m) + unbiased * m;
        }
        Ok((z, cache))
    }

    /// Eval-mode forward: a pure per-row function of the parameters.
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let eps = self.config.bn_epsilon;
        let mut a = x.clone();
        for layer in &self.layers {
            let h = a.dot(&layer.weight.t()) + &layer.bias;
            let scale = &layer.gamma / &layer.running_var.mapv(|v| (v + eps).sqrt());
            let y = (h - &layer.running_mean) * &scale + &layer.beta;
            a = y.mapv(|v| self.leaky(v));
        }
        util::normalize_rows(&mut a);
        Ok(a)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_z: &Array2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::Contract(
                "forward cache is stale for these parameters".into(),
            ));
        }
        if grad_z.dim() != cache.z.dim() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match embeddings {:?}",
                grad_z.dim(),
                cache.z.dim()
            )));
        }
        let b = grad_z.nrows() as f64;
        // Through z = u / ‖u‖.
        let mut da = Array2::zeros(grad_z.dim());
        for i in 0..grad_z.nrows() {
            let u = cache.unnormalized.row(i);
            let r = u.dot(&u).sqrt();
            if r > 0.0 {
                let z = cache.z.row(i);
                let g = grad_z.row(i);
                let proj = z.dot(&g);
                da.row_mut(i).assign(&((&g - &(proj * &z)) / r));
            }
        }
        let slope = self.config.leaky_slope;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let mut dy = da;
            ndarray::Zip::from(&mut dy)
                .and(&c.pre_act)
                .for_each(|d, &p| {
                    if p <= 0.0 {
                        *d *= slope;
                    }
                });
            let dgamma = (&dy * &c.xhat).sum_axis(Axis(0));
            let dbeta = dy.sum_axis(Axis(0));
            let dxhat = &dy * &layer.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let dh = (&dxhat * b - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat)) * &(&c.inv_std / b);
            let dw = dh.t().dot(&c.input);
            let db = dh.sum_axis(Axis(0));
            da = dh.dot(&layer.weight);
            grads.push(LayerGrads {
                weight: dw,
                bias: db,
                gamma: dgamma,
                beta: dbeta,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.gamma.len() + l.beta.len())
            .sum()
    }

    /// Trainable parameters in a fixed order (per layer: weight, bias, gamma, beta).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
            v.extend(l.gamma.iter());
            v.extend(l.beta.iter());
        }
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for arr in [
                l.weight.as_slice_mut().unwrap(),
                l.bias.as_slice_mut().unwrap(),
                l.gamma.as_slice_mut().unwrap(),
                l.beta.as_slice_mut().unwrap(),
            ] {
                arr.iter_mut().for_each(|x| *x = it.next().unwrap());
            }
        }
        self.generation += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            [&l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var]
                .iter()
                .all(|a| a.iter().all(|x| x.is_finite()))
                && l.weight.iter().all(|x| x.is_finite())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            encoder: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Encoder> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format '{}', expected '{CHECKPOINT_FORMAT}'",
                c.format
            )));
        }
        c.encoder.config.validate()?;
        let widths = c.encoder.config.widths();
        let ok = c.encoder.layers.len() + 1 == widths.len()
            && c.encoder
                .layers
                .iter()
                .zip(widths.windows(2))
                .all(|(l, w)| {
                    l.weight.dim() == (w[1], w[0])
                        && [&l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var]
                            .iter()
                            .all(|a| a.len() == w[1])
                });
        if !ok || !c.encoder.is_finite() {
            return Err(Error::Format(
                "checkpoint parameters inconsistent with its config".into(),
            ));
        }
        Ok(c.encoder)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Encoder> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Encoder::from_json(&text)
    }

    /// Hex sha256 of the checkpoint serialization.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(util::sha256_hex(self.to_json()?.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(hidden: Vec<usize>, d: usize, seed: u64) -> Encoder {
        Encoder::init(&EncoderConfig {
            input_dim: 4,
            hidden_dims: hidden,
            embed_dim: d,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn batch(b: usize, t: usize, seed: u64) -> Array2<f64> {
        let mut r = util::rng(seed);
        Array2::from_shape_fn((b, t), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn init_deterministic_and_shaped() {
        assert_eq!(small(vec![6], 3, 1), small(vec![6], 3, 1));
        let e = small(vec![], 3, 1);
        assert_eq!(e.layers.len(), 1);
        assert_eq!(e.layers[0].weight.dim(), (3, 4));
        assert!(e.layers[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn unit_rows_and_purity() {
        let mut e = small(vec![8, 8], 5, 2);
        let x = batch(7, 4, 3);
        let (z, _) = e.forward_train(&x).unwrap();
        for r in z.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
        let a = e.embed(&x).unwrap();
        assert_eq!(a, e.embed(&x).unwrap());
        for r in a.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_embeddings_are_signs() {
        let e = small(vec![4], 1, 3);
        let z = e.embed(&batch(6, 4, 1)).unwrap();
        assert!(z.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn duplicate_rows_duplicate_outputs() {
        let e = small(vec![8], 4, 5);
        let mut x = batch(4, 4, 6);
        let r0 = x.row(0).to_owned();
        x.row_mut(3).assign(&r0);
        let z = e.embed(&x).unwrap();
        assert_eq!(z.row(0), z.row(3));
    }

    #[test]
    fn train_batch_of_one_rejected() {
        let mut e = small(vec![], 2, 1);
        assert!(matches!(
            e.forward_train(&batch(1, 4, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn train_forward_permutation_equivariant() {
        let e = small(vec![8], 4, 5);
        let x = batch(5, 4, 9);
        let perm = [3, 0, 4, 1, 2];
        let px = Array2::from_shape_fn((5, 4), |(i, j)| x[[perm[i], j]]);
        let (z, _) = e.forward_train_pure(&x).unwrap();
        let (pz, _) = e.forward_train_pure(&px).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..4 {
                assert!((pz[[i, j]] - z[[p, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_linear_in_upstream() {
        let e = small(vec![6], 3, 4);
        let x = batch(5, 4, 2);
        let (_, cache) = e.forward_train_pure(&x).unwrap();
        let zero = e.backward(&cache, &Array2::zeros((5, 3))).unwrap();
        assert!(zero.flat().iter().all(|g| *g == 0.0));
        let g = batch(5, 3, 8);
        let one = e.backward(&cache, &g).unwrap().flat();
        let two = e.backward(&cache, &(&g * 2.0)).unwrap().flat();
        for (a, b) in one.iter().zip(&two) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut e = small(vec![6], 3, 4);
        let x = batch(5, 4, 2);
        let (_, cache) = e.forward_train(&x).unwrap();
        let p = e.flat_params();
        e.set_flat_params(&p).unwrap();
        assert!(matches!(
            e.backward(&cache, &Array2::zeros((5, 3))),
            Err(Error::Contract(_))
        ));
        let (_, cache) = e.forward_train(&x).unwrap();
        assert!(matches!(
            e.backward(&cache, &Array2::zeros((4, 3))),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn finite_difference_three_sample_batch() {
        let e = small(vec![5], 3, 11);
        let x = batch(3, 4, 12);
        let g = batch(3, 3, 13);
        let loss = |enc: &Encoder| (enc.forward_train_pure(&x).unwrap().0 * &g).sum();
        let (_, cache) = e.forward_train_pure(&x).unwrap();
        let analytic = e.backward(&cache, &g).unwrap().flat();
        let p0 = e.flat_params();
        let mut probe = e.clone();
        let mut numeric = Vec::with_capacity(p0.len());
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += 1e-5;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe);
            p[i] -= 2e-5;
            probe.set_flat_params(&p).unwrap();
            numeric.push((up - loss(&probe)) / 2e-5);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
    }

    #[test]
    fn checkpoint_round_trip_exact() {
        let mut e = small(vec![7], 3, 21);
        e.forward_train(&batch(6, 4, 1)).unwrap();
        let back = Encoder::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back.layers, e.layers);
        assert_eq!(back.config, e.config);
        let bad = e.to_json().unwrap().replace(CHECKPOINT_FORMAT, "other/9");
        assert!(matches!(Encoder::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn differences_feature_width() {
        let x = ndarray::array![[0.5, 0.4, 0.1]];
        let f = FeatureMode::WithDifferences.apply(&x);
        assert_eq!(f.ncols(), FeatureMode::WithDifferences.width(3));
        assert!((f[[0, 3]] + 0.1).abs() < 1e-12 && (f[[0, 4]] + 0.3).abs() < 1e-12);
    }
}
