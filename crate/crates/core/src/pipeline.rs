//! Step functions shared by the CLI and by whole-pipeline runs.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::classify::{self, ClassMetrics, LogRegConfig};
use crate::analysis::detection::{self, LeadTimeReport};
use crate::analysis::staging::{self, StageThresholds};
use crate::analysis::stats::{self, PValueMethod, StatReport};
use crate::analysis::transfer::FrozenModel;
use crate::clustering::{self, AriInterval, ClusterModel, ElbowResult, ValidityReport};
use crate::data::{Dataset, Stage};
use crate::encoder::{Encoder, EncoderConfig};
use crate::spectral::{self, GammaPolicy, SpectralSummary};
use crate::trainer::{self, TrainConfig, TrainHistory};
use crate::util;
use crate::{Error, Result};

/// Number of clusters, or `"elbow"` to choose it from the inertia curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KChoice {
    Fixed(usize),
    Auto(AutoK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoK {
    Elbow,
}

impl Default for KChoice {
    fn default() -> Self {
        KChoice::Fixed(4)
    }
}

impl std::str::FromStr for KChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<KChoice> {
        if s.eq_ignore_ascii_case("elbow") {
            return Ok(KChoice::Auto(AutoK::Elbow));
        }
        s.parse::<usize>().map(KChoice::Fixed).map_err(|_| {
            Error::Config(format!(
                "k must be a positive integer or 'elbow', got '{s}'"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: KChoice,
    pub k_max: usize,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: KChoice::default(),
            k_max: 8,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StagingMode {
    /// Midpoints between sorted cluster means.
    #[default]
    Centroid,
    /// The fixed standard cut points.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub k_neighbors: usize,
    pub train_fraction: f64,
    pub logreg: LogRegConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            k_neighbors: classify::DEFAULT_K_NEIGHBORS,
            train_fraction: 0.7,
            logreg: LogRegConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub p_method: PValueMethod,
    pub permutations: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            p_method: PValueMethod::FDistribution,
            permutations: stats::DEFAULT_PERMUTATIONS,
        }
    }
}

/// Everything a full run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub gamma: GammaPolicy,
    pub spectrum_components: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub clustering: ClusterConfig,
    pub staging: StagingMode,
    pub crossing_threshold: f64,
    pub classify: ClassifyConfig,
    pub stats: StatsConfig,
    pub bootstrap_resamples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            gamma: GammaPolicy::Median,
            spectrum_components: 10,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            clustering: ClusterConfig::default(),
            staging: StagingMode::Centroid,
            crossing_threshold: detection::DEFAULT_CROSSING_THRESHOLD,
            classify: ClassifyConfig::default(),
            stats: StatsConfig::default(),
            bootstrap_resamples: 1000,
        }
    }
}

/// Seed streams derived from the global seed.
pub mod streams {
    pub const ENCODER: u64 = 10;
    pub const TRAIN: u64 = 11;
    pub const KMEANS: u64 = 12;
    pub const SPLIT: u64 = 13;
    pub const STATS: u64 = 14;
    pub const BOOTSTRAP: u64 = 15;
}

impl PipelineConfig {
    /// Copies the global seed into every sub-config and sizes the encoder
    /// input for series of length `n_dates`.
    pub fn resolved(&self, n_dates: usize) -> PipelineConfig {
        let mut c = self.clone();
        c.encoder.seed = util::derive_seed(self.seed, streams::ENCODER);
        c.encoder.input_dim = c.encoder.features.width(n_dates);
        c.train.seed = util::derive_seed(self.seed, streams::TRAIN);
        c
    }
}

pub fn spectral_step(dataset: &Dataset, cfg: &PipelineConfig) -> Result<SpectralSummary> {
    let k = cfg.spectrum_components.max(cfg.train.eigen_component + 1);
    spectral::analyze(dataset, cfg.gamma, k, cfg.train.eigen_component)
}

pub fn cluster_step(
    z: &Array2<f64>,
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<(ClusterModel, Option<ElbowResult>)> {
    let seed = util::derive_seed(seed, streams::KMEANS);
    match cfg.k {
        KChoice::Fixed(k) => Ok((clustering::kmeans(z, k, seed, cfg.restarts)?, None)),
        KChoice::Auto(AutoK::Elbow) => {
            let e = clustering::elbow(z, cfg.k_max, seed, cfg.restarts)?;
            if e.low_confidence {
                log::warn!(
                    "elbow at k = {} has low curvature; choice is uncertain",
                    e.k
                );
            }
            Ok((clustering::kmeans(z, e.k, seed, cfg.restarts)?, Some(e)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staging {
    pub mode: StagingMode,
    pub thresholds: StageThresholds,
    pub cluster_mean_ndre: Vec<f64>,
    pub cluster_stages: Vec<Stage>,
    pub stress_clusters: Vec<usize>,
}

pub fn staging_step(
    dataset: &Dataset,
    labels: &[usize],
    k: usize,
    mode: StagingMode,
) -> Result<Staging> {
    let means = staging::cluster_mean_ndre(dataset, labels, k)?;
    let thresholds = match mode {
        StagingMode::Centroid => staging::thresholds_from_centroids(&means)?,
        StagingMode::Fixed => StageThresholds::standard(),
    };
    Ok(Staging {
        mode,
        cluster_stages: means.iter().map(|&m| thresholds.stage(m)).collect(),
        stress_clusters: detection::stress_clusters(&means, &thresholds),
        cluster_mean_ndre: means,
        thresholds,
    })
}

pub fn stats_step(
    dataset: &Dataset,
    labels: &[usize],
    k: usize,
    cfg: &StatsConfig,
    seed: u64,
) -> Result<StatReport> {
    let groups = stats::group_by_label(&dataset.mean_ndre(), labels, k)?;
    stats::stat_report(
        &groups,
        cfg.p_method,
        cfg.permutations,
        util::derive_seed(seed, streams::STATS),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n_train: usize,
    pub n_test: usize,
    pub k_neighbors: usize,
    pub knn: ClassMetrics,
    pub logreg: ClassMetrics,
    /// Stage order of the confusion matrix rows and columns.
    pub classes: Vec<Stage>,
}

/// Seeded train/test split; stage labels come from NDRE staging.
pub fn classify_step(
    z: &Array2<f64>,
    stages: &[Stage],
    cfg: &ClassifyConfig,
    seed: u64,
) -> Result<ClassificationReport> {
    if z.nrows() != stages.len() {
        return Err(Error::Contract(
            "one stage per embedding is required".into(),
        ));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must be in (0, 1)".into()));
    }
    let n = z.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut util::rng(util::derive_seed(seed, streams::SPLIT)));
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "split of {n} items leaves an empty side"
        )));
    }
    let (tr, te) = idx.split_at(n_train);
    let y: Vec<usize> = stages.iter().map(|s| s.index()).collect();
    let (xtr, xte) = (z.select(Axis(0), tr), z.select(Axis(0), te));
    let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = te.iter().map(|&i| y[i]).collect();
    let knn_pred = classify::knn_classify(&xtr, &ytr, &xte, cfg.k_neighbors)?;
    let model = classify::logreg_train(&xtr, &ytr, 4, &cfg.logreg)?;
    let lr_pred = model.predict(&xte)?;
    Ok(ClassificationReport {
        n_train,
        n_test: te.len(),
        k_neighbors: cfg.k_neighbors,
        knn: classify::class_metrics(&yte, &knn_pred, 4)?,
        logreg: classify::class_metrics(&yte, &lr_pred, 4)?,
        classes: Stage::ALL.to_vec(),
    })
}

/// Results of a full in-domain run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: PipelineConfig,
    pub spectral: SpectralSummary,
    pub encoder: Encoder,
    pub history: TrainHistory,
    pub embeddings: Array2<f64>,
    pub clusters: ClusterModel,
    pub elbow: Option<ElbowResult>,
    pub validity: ValidityReport,
    pub staging: Staging,
    pub stages: Vec<Stage>,
    /// ARI of cluster labels against per-patch NDRE stages.
    pub ari: AriInterval,
    pub stats: StatReport,
    pub detection: LeadTimeReport,
    pub classification: ClassificationReport,
}

impl RunOutput {
    pub fn frozen(&self) -> FrozenModel<'_> {
        FrozenModel {
            encoder: &self.encoder,
            clusters: &self.clusters,
            thresholds: self.staging.thresholds,
            cluster_mean_ndre: &self.staging.cluster_mean_ndre,
        }
    }
}

pub fn ari_step(
    labels: &[usize],
    stages: &[Stage],
    resamples: usize,
    seed: u64,
) -> Result<AriInterval> {
    let s: Vec<usize> = stages.iter().map(|s| s.index()).collect();
    clustering::ari_bootstrap_ci(
        labels,
        &s,
        resamples,
        util::derive_seed(seed, streams::BOOTSTRAP),
    )
}

pub fn run(dataset: &Dataset, config: &PipelineConfig) -> Result<RunOutput> {
    let cfg = config.resolved(dataset.n_dates());
    let spectral = spectral_step(dataset, &cfg)?;
    let (encoder, history) = trainer::train(dataset, &spectral.weights, &cfg.encoder, &cfg.train)?;
    let embeddings = trainer::embed_dataset(&encoder, dataset)?.z;
    let (clusters, elbow) = cluster_step(&embeddings, &cfg.clustering, cfg.seed)?;
    let validity = clustering::validity(&embeddings, &clusters.labels)?;
    let staging = staging_step(dataset, &clusters.labels, clusters.k, cfg.staging)?;
    let stages = detection::patch_stages(dataset, &staging.thresholds);
    let ari = ari_step(&clusters.labels, &stages, cfg.bootstrap_resamples, cfg.seed)?;
    let stats = stats_step(dataset, &clusters.labels, clusters.k, &cfg.stats, cfg.seed)?;
    let days = detection::detection_days(&encoder, &clusters, &staging.stress_clusters, dataset)?;
    let detection = detection::lead_time_report(
        dataset,
        &stages,
        &clusters.labels,
        &days,
        cfg.crossing_threshold,
    )?;
    let classification = classify_step(&embeddings, &stages, &cfg.classify, cfg.seed)?;
    Ok(RunOutput {
        config: cfg,
        spectral,
        encoder,
        history,
        embeddings,
        clusters,
        elbow,
        validity,
        staging,
        stages,
        ari,
        stats,
        detection,
        classification,
    })
}
