//! Mini-batch training, frozen-model embedding, and the hyperparameter grid.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering;
use crate::data::Dataset;
use crate::encoder::{Encoder, EncoderConfig, Gradients};
use crate::objective::{self, AugmentConfig, LossHyper};
use crate::optim::{Optimizer, OptimizerKind};
use crate::spectral::StressWeights;
use crate::util;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Eigencl,
    /// Same pull/push loss with affinity from raw-series cosine similarity.
    CosineAblation,
    Ntxent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub eigen_component: usize,
    pub loss: LossHyper,
    /// Stop after this many epochs without a `min_delta` improvement; 0 disables.
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub ntxent_tau: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 7,
            loss_kind: LossKind::Eigencl,
            eigen_component: 0,
            loss: LossHyper::default(),
            early_stop_patience: 5,
            early_stop_min_delta: 1e-5,
            ntxent_tau: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if !(self.ntxent_tau > 0.0) {
            return Err(Error::Config("ntxent_tau must be > 0".into()));
        }
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Affinity for a batch, given the dataset row indices in the batch.
pub type AffinityFn<'a> = dyn Fn(&[usize]) -> Array2<f64> + 'a;

fn features(dataset: &Dataset, cfg: &EncoderConfig) -> Result<Array2<f64>> {
    let f = cfg.features.apply(&dataset.matrix());
    if f.ncols() != cfg.input_dim {
        return Err(Error::Config(format!(
            "encoder input_dim {} but dataset yields {} features",
            cfg.input_dim,
            f.ncols()
        )));
    }
    Ok(f)
}

pub fn train(
    dataset: &Dataset,
    weights: &StressWeights,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(Encoder, TrainHistory)> {
    if weights.w.len() != dataset.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} series",
            weights.w.len(),
            dataset.len()
        )));
    }
    if weights.source_component != config.eigen_component {
        return Err(Error::Config(format!(
            "weights come from component {}, config asks for {}",
            weights.source_component, config.eigen_component
        )));
    }
    match config.loss_kind {
        LossKind::Eigencl => {
            let sigma = config.loss.sigma;
            let w = &weights.w;
            let aff = move |idx: &[usize]| {
                let wb: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
                objective::stress_affinity(&objective::normalize_weights(&wb), sigma).s
            };
            train_with_affinity(dataset, encoder_config, config, &aff)
        }
        LossKind::CosineAblation => {
            let raw = dataset.matrix();
            let aff =
                move |idx: &[usize]| objective::cosine_affinity(raw.select(Axis(0), idx).view());
            train_with_affinity(dataset, encoder_config, config, &aff)
        }
        LossKind::Ntxent => run(dataset, encoder_config, config, None),
    }
}

/// Pull/push training with any affinity source. `loss_kind` is ignored.
pub fn train_with_affinity(
    dataset: &Dataset,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    affinity: &AffinityFn<'_>,
) -> Result<(Encoder, TrainHistory)> {
    run(dataset, encoder_config, config, Some(affinity))
}

fn run(
    dataset: &Dataset,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    affinity: Option<&AffinityFn<'_>>,
) -> Result<(Encoder, TrainHistory)> {
    config.validate()?;
    let x = features(dataset, encoder_config)?;
    let raw = dataset.matrix();
    let n = dataset.len();
    if config.batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {n}",
            config.batch_size
        )));
    }
    let mut enc = Encoder::init(encoder_config)?;
    let mut history = TrainHistory::default();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, enc.n_params());
    let mut shuffle_rng = util::rng(util::derive_seed(config.seed, 1));
    let mut aug_rng = util::rng(util::derive_seed(config.seed, 2));
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut stall = 0;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        let mut norms = Vec::new();
        // Trailing partial batch is dropped; the shuffle changes it every epoch.
        for (bi, idx) in order.chunks_exact(config.batch_size).enumerate() {
            let last_good = enc.clone();
            let (loss, grads) = match affinity {
                Some(aff) => {
                    let xb = x.select(Axis(0), idx);
                    let (z, cache) = enc.forward_train(&xb)?;
                    let (loss, gz) = objective::pair_loss_grad(&z, &aff(idx), &config.loss);
                    (loss, enc.backward(&cache, &gz)?)
                }
                None => {
                    let rb = raw.select(Axis(0), idx);
                    let va =
                        objective::augment(&rb, dataset.dates(), &config.augment, &mut aug_rng);
                    let vb =
                        objective::augment(&rb, dataset.dates(), &config.augment, &mut aug_rng);
                    let fa = encoder_config.features.apply(&va);
                    let fb = encoder_config.features.apply(&vb);
                    let (za, ca) = enc.forward_train(&fa)?;
                    let (zb, cb) = enc.forward_train(&fb)?;
                    let (loss, ga, gb) = objective::ntxent_core(&za, &zb, config.ntxent_tau);
                    let mut g: Gradients = enc.backward(&ca, &ga)?;
                    g.add_assign(&enc.backward(&cb, &gb)?);
                    (loss, g)
                }
            };
            let flat = grads.flat();
            if !loss.is_finite() || flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    last_good: Box::new(last_good),
                });
            }
            let mut p = enc.flat_params();
            opt.step(&mut p, &flat);
            enc.set_flat_params(&p)?;
            losses.push(loss);
            norms.push(flat.iter().map(|g| g * g).sum::<f64>().sqrt());
        }
        let mean_loss = util::mean(&losses);
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss,
            grad_norm: util::mean(&norms),
            seconds: start.elapsed().as_secs_f64(),
        });
        if mean_loss < best - config.early_stop_min_delta {
            best = mean_loss;
            stall = 0;
        } else {
            stall += 1;
            if config.early_stop_patience > 0 && stall >= config.early_stop_patience {
                log::info!("early stop after epoch {}", epoch + 1);
                break;
            }
        }
    }
    Ok((enc, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub z: Array2<f64>,
    pub patch_ids: Vec<String>,
}

/// Eval-mode embeddings for every patch, in dataset order.
pub fn embed_dataset(encoder: &Encoder, dataset: &Dataset) -> Result<EmbeddingBatch> {
    let x = features(dataset, &encoder.config)?;
    let mut z = Array2::zeros((x.nrows(), encoder.embed_dim()));
    let mut row = 0;
    for chunk in x.axis_chunks_iter(Axis(0), 1024) {
        let e = encoder.embed(&chunk.to_owned())?;
        z.slice_mut(ndarray::s![row..row + e.nrows(), ..])
            .assign(&e);
        row += e.nrows();
    }
    Ok(EmbeddingBatch {
        z,
        patch_ids: dataset.patch_ids(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Silhouette,
    Dbi,
    Chi,
    /// Mean rank over silhouette, DBI, CHI and the embedding/series distance correlation.
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub margin: Vec<f64>,
    pub metric: SelectionMetric,
    pub clusters: usize,
    pub restarts: usize,
    pub holdout_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambda: vec![1.0, 2.0, 4.0, 6.0],
            tau: vec![0.05, 0.075, 0.1, 0.15],
            sigma: vec![0.3, 0.5, 0.7, 1.0],
            margin: vec![0.1, 0.2, 0.3],
            metric: SelectionMetric::Silhouette,
            clusters: 4,
            restarts: 10,
            holdout_fraction: 0.3,
        }
    }
}

impl GridSpec {
    /// 2×2×2×2 corner of the full grid, for quick runs.
    pub fn small() -> Self {
        GridSpec {
            lambda: vec![2.0, 4.0],
            tau: vec![0.075, 0.1],
            sigma: vec![0.5, 1.0],
            margin: vec![0.2, 0.3],
            ..GridSpec::default()
        }
    }

    pub fn cells(&self) -> Vec<LossHyper> {
        let mut out = Vec::new();
        for &lambda in &self.lambda {
            for &tau in &self.tau {
                for &sigma in &self.sigma {
                    for &margin in &self.margin {
                        out.push(LossHyper {
                            lambda,
                            tau,
                            sigma,
                            margin,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [&self.lambda, &self.tau, &self.sigma, &self.margin];
        if lists.iter().any(|l| l.is_empty()) {
            return Err(Error::Config(
                "every grid axis needs at least one value".into(),
            ));
        }
        if lists.iter().any(|l| l.iter().any(|v| !(*v > 0.0))) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub index: usize,
    pub hyper: LossHyper,
    pub seed: u64,
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
    /// Correlation of pairwise embedding distances with raw-series distances.
    pub distance_correlation: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub metric: SelectionMetric,
    pub cells: Vec<GridCell>,
    /// Cell indices, best first; failed cells last.
    pub ranking: Vec<usize>,
}

fn distance_correlation(z: &Array2<f64>, raw: &Array2<f64>) -> Result<f64> {
    let m = z.nrows().min(300);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..m {
        for j in i + 1..m {
            a.push(util::dist(z.row(i), z.row(j)));
            b.push(util::dist(raw.row(i), raw.row(j)));
        }
    }
    util::pearson(&a, &b)
}

fn evaluate_cell(
    train_set: &Dataset,
    train_w: &StressWeights,
    held: &Dataset,
    grid: &GridSpec,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    cell: &mut GridCell,
) -> Result<()> {
    let (enc, hist) = train(train_set, train_w, enc_cfg, cfg)?;
    cell.final_loss = hist.final_loss();
    let z = embed_dataset(&enc, held)?.z;
    let model = clustering::kmeans(&z, grid.clusters, cell.seed, grid.restarts)?;
    let v = clustering::validity(&z, &model.labels)?;
    cell.silhouette = Some(v.silhouette);
    cell.dbi = Some(v.davies_bouldin);
    cell.chi = Some(v.calinski_harabasz);
    cell.distance_correlation = distance_correlation(&z, &held.matrix()).ok();
    Ok(())
}

/// Trains one model per grid cell on a 70/30 split and ranks the cells.
pub fn grid_search(
    dataset: &Dataset,
    weights: &StressWeights,
    grid: &GridSpec,
    encoder_config: &EncoderConfig,
    base: &TrainConfig,
) -> Result<GridResult> {
    grid.validate()?;
    let n = dataset.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut util::rng(util::derive_seed(base.seed, 0x5917)));
    let n_held = ((n as f64) * grid.holdout_fraction).round() as usize;
    let (held_idx, train_idx) = idx.split_at(n_held);
    let train_set = dataset.subset(train_idx)?;
    let held = dataset.subset(held_idx)?;
    let train_w = StressWeights {
        w: train_idx.iter().map(|&i| weights.w[i]).collect(),
        source_component: weights.source_component,
    };
    let mut cells = Vec::new();
    for (index, hyper) in grid.cells().into_iter().enumerate() {
        let seed = util::derive_seed(base.seed, index as u64);
        let cfg = TrainConfig {
            loss: hyper,
            seed,
            batch_size: base.batch_size.min(train_set.len()),
            ..base.clone()
        };
        let enc_cfg = EncoderConfig {
            seed,
            ..encoder_config.clone()
        };
        let mut cell = GridCell {
            index,
            hyper,
            seed,
            silhouette: None,
            dbi: None,
            chi: None,
            distance_correlation: None,
            final_loss: None,
            error: None,
        };
        if let Err(e) = evaluate_cell(&train_set, &train_w, &held, grid, &enc_cfg, &cfg, &mut cell)
        {
            log::warn!("grid cell {index} failed: {e}");
            cell.error = Some(e.to_string());
        }
        cells.push(cell);
    }
    let ranking = rank_cells(&cells, grid.metric);
    Ok(GridResult {
        metric: grid.metric,
        cells,
        ranking,
    })
}

fn ranks(values: &[f64], higher_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if higher_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut r = vec![0.0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos as f64;
    }
    r
}

fn rank_cells(cells: &[GridCell], metric: SelectionMetric) -> Vec<usize> {
    let ok: Vec<&GridCell> = cells.iter().filter(|c| c.error.is_none()).collect();
    let sil: Vec<f64> = ok.iter().map(|c| c.silhouette.unwrap()).collect();
    let dbi: Vec<f64> = ok.iter().map(|c| c.dbi.unwrap()).collect();
    let chi: Vec<f64> = ok.iter().map(|c| c.chi.unwrap()).collect();
    let cor: Vec<f64> = ok
        .iter()
        .map(|c| c.distance_correlation.unwrap_or(f64::NEG_INFINITY))
        .collect();
    // Lower score is better.
    let score: Vec<f64> = match metric {
        SelectionMetric::Silhouette => sil.iter().map(|v| -v).collect(),
        SelectionMetric::Dbi => dbi.clone(),
        SelectionMetric::Chi => chi.iter().map(|v| -v).collect(),
        SelectionMetric::Composite => {
            let (a, b, c, d) = (
                ranks(&sil, true),
                ranks(&dbi, false),
                ranks(&chi, true),
                ranks(&cor, true),
            );
            (0..ok.len())
                .map(|i| (a[i] + b[i] + c[i] + d[i]) / 4.0)
                .collect()
        }
    };
    let mut order: Vec<usize> = (0..ok.len()).collect();
    order.sort_by(|&a, &b| {
        score[a]
            .total_cmp(&score[b])
            .then(dbi[a].total_cmp(&dbi[b]))
            .then(
                ok[a]
                    .final_loss
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&ok[b].final_loss.unwrap_or(f64::INFINITY)),
            )
            .then(ok[a].index.cmp(&ok[b].index))
    });
    let mut ranking: Vec<usize> = order.iter().map(|&i| ok[i].index).collect();
    ranking.extend(cells.iter().filter(|c| c.error.is_some()).map(|c| c.index));
    ranking
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SynthConfig};
    use crate::spectral::{self, GammaPolicy};

    fn corpus(n: usize, noise: f64) -> (Dataset, StressWeights) {
        let d = synthesize(&SynthConfig {
            n_patches: n,
            noise_sd: noise,
            ..Default::default()
        })
        .unwrap();
        let w = spectral::analyze(&d, GammaPolicy::Median, 1, 0)
            .unwrap()
            .weights;
        (d, w)
    }

    fn small_enc() -> EncoderConfig {
        EncoderConfig {
            hidden_dims: vec![16],
            embed_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (d, w) = corpus(40, 0.02);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 16,
            ..Default::default()
        };
        let (enc, h) = train(&d, &w, &small_enc(), &cfg).unwrap();
        assert_eq!(enc, Encoder::init(&small_enc()).unwrap());
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (d, w) = corpus(40, 0.02);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.0,
            ..Default::default()
        };
        let (enc, _) = train(&d, &w, &small_enc(), &cfg).unwrap();
        assert_eq!(
            enc.flat_params(),
            Encoder::init(&small_enc()).unwrap().flat_params()
        );
    }

    #[test]
    fn deterministic_checkpoints() {
        let (d, w) = corpus(64, 0.02);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        for kind in [
            LossKind::Eigencl,
            LossKind::CosineAblation,
            LossKind::Ntxent,
        ] {
            let cfg = TrainConfig {
                loss_kind: kind,
                ..cfg.clone()
            };
            let a = train(&d, &w, &small_enc(), &cfg).unwrap().0;
            let b = train(&d, &w, &small_enc(), &cfg).unwrap().0;
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        }
    }

    #[test]
    fn loss_decreases_on_clean_corpus() {
        let (d, w) = corpus(800, 0.01);
        let cfg = TrainConfig {
            epochs: 30,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (_, h) = train(&d, &w, &EncoderConfig::default(), &cfg).unwrap();
        assert_eq!(h.epochs.len(), 30);
        assert!(h.epochs[29].mean_loss < h.epochs[0].mean_loss);
    }

    #[test]
    fn ablation_path_reproduces_eigen_losses() {
        let (d, w) = corpus(64, 0.02);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (a, ha) = train(&d, &w, &small_enc(), &cfg).unwrap();
        let sigma = cfg.loss.sigma;
        let forced = |idx: &[usize]| {
            let wb: Vec<f64> = idx.iter().map(|&i| w.w[i]).collect();
            objective::stress_affinity(&objective::normalize_weights(&wb), sigma).s
        };
        let ab_cfg = TrainConfig {
            loss_kind: LossKind::CosineAblation,
            ..cfg
        };
        let (b, hb) = train_with_affinity(&d, &small_enc(), &ab_cfg, &forced).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let la: Vec<f64> = ha.epochs.iter().map(|e| e.mean_loss).collect();
        let lb: Vec<f64> = hb.epochs.iter().map(|e| e.mean_loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn lower_component_trains() {
        let d = synthesize(&SynthConfig {
            n_patches: 64,
            ..Default::default()
        })
        .unwrap();
        let w = spectral::analyze(&d, GammaPolicy::Median, 2, 1)
            .unwrap()
            .weights;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            eigen_component: 1,
            ..Default::default()
        };
        assert!(train(&d, &w, &small_enc(), &cfg).is_ok());
        let cfg = TrainConfig {
            eigen_component: 0,
            ..cfg
        };
        assert!(matches!(
            train(&d, &w, &small_enc(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn embedding_is_batch_independent() {
        let (d, w) = corpus(100, 0.02);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            ..Default::default()
        };
        let (enc, _) = train(&d, &w, &small_enc(), &cfg).unwrap();
        let all = embed_dataset(&enc, &d).unwrap();
        assert_eq!(all.z.nrows(), 100);
        let first: Vec<usize> = (0..37).collect();
        let rest: Vec<usize> = (37..100).collect();
        let a = embed_dataset(&enc, &d.subset(&first).unwrap()).unwrap().z;
        let b = embed_dataset(&enc, &d.subset(&rest).unwrap()).unwrap().z;
        let joined = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        assert_eq!(joined, all.z);
    }

    #[test]
    fn duplicates_embed_identically() {
        let (d, _) = corpus(4, 0.02);
        let dup = d.subset(&[0, 0, 0]);
        assert!(dup.is_err());
        let enc = Encoder::init(&small_enc()).unwrap();
        let s = &d.series()[0];
        let copies: Vec<_> = (0..3)
            .map(|i| {
                crate::data::NdreSeries::new(format!("c{i}"), s.values.clone(), s.dates.clone())
                    .unwrap()
            })
            .collect();
        let z = embed_dataset(&enc, &Dataset::new(copies, None).unwrap())
            .unwrap()
            .z;
        assert_eq!(z.row(0), z.row(2));
    }

    #[test]
    fn embed_dimension_mismatch() {
        let (d, _) = corpus(10, 0.02);
        let enc = Encoder::init(&EncoderConfig {
            input_dim: 7,
            ..small_enc()
        })
        .unwrap();
        assert!(matches!(embed_dataset(&enc, &d), Err(Error::Config(_))));
    }

    #[test]
    fn single_cell_grid_and_failure_isolation() {
        let (d, w) = corpus(120, 0.02);
        let base = TrainConfig {
            epochs: 2,
            batch_size: 32,
            ..Default::default()
        };
        let grid = GridSpec {
            lambda: vec![4.0],
            tau: vec![0.075],
            sigma: vec![0.5],
            margin: vec![0.2],
            restarts: 2,
            ..Default::default()
        };
        let r = grid_search(&d, &w, &grid, &small_enc(), &base).unwrap();
        assert_eq!(r.ranking, vec![0]);
        assert!(r.cells[0].silhouette.is_some());
        // A margin of 1.5 is invalid; that cell fails, the other still runs.
        let grid = GridSpec {
            margin: vec![1.5, 0.2],
            ..grid
        };
        let r = grid_search(&d, &w, &grid, &small_enc(), &base).unwrap();
        assert!(r.cells[0].error.is_some());
        assert!(r.cells[1].error.is_none());
        assert_eq!(r.ranking, vec![1, 0]);
    }

    #[test]
    fn ranking_tie_breaks() {
        let mk = |index, sil: f64, dbi: f64, loss: f64| GridCell {
            index,
            hyper: LossHyper::default(),
            seed: 0,
            silhouette: Some(sil),
            dbi: Some(dbi),
            chi: Some(1.0),
            distance_correlation: Some(0.5),
            final_loss: Some(loss),
            error: None,
        };
        let cells = vec![
            mk(0, 0.5, 0.4, 1.0),
            mk(1, 0.5, 0.3, 1.0),
            mk(2, 0.5, 0.3, 0.9),
            mk(3, 0.6, 0.9, 2.0),
        ];
        assert_eq!(
            rank_cells(&cells, SelectionMetric::Silhouette),
            vec![3, 2, 1, 0]
        );
        assert_eq!(rank_cells(&cells, SelectionMetric::Dbi), vec![2, 1, 0, 3]);
    }
}
