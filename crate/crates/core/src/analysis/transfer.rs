//! Applying a frozen encoder and frozen centroids to a new dataset.

use serde::{Deserialize, Serialize};

use crate::analysis::detection::{self, LeadTimeReport, LeadTimeSummary};
use crate::analysis::staging::StageThresholds;
use crate::clustering::{self, ClusterModel};
use crate::data::{Dataset, Stage};
use crate::encoder::Encoder;
use crate::trainer;
use crate::util;
use crate::{Error, Result};

/// Everything fixed at training time.
#[derive(Debug, Clone, Copy)]
pub struct FrozenModel<'a> {
    pub encoder: &'a Encoder,
    pub clusters: &'a ClusterModel,
    pub thresholds: StageThresholds,
    /// Mean NDRE of each cluster on the training data.
    pub cluster_mean_ndre: &'a [f64],
}

impl FrozenModel<'_> {
    pub fn fingerprint(&self) -> Result<String> {
        let clusters = serde_json::to_vec(self.clusters)?;
        let extra = serde_json::to_vec(&(self.thresholds, self.cluster_mean_ndre))?;
        let joined = format!(
            "{}:{}:{}",
            self.encoder.fingerprint()?,
            util::sha256_hex(&clusters),
            util::sha256_hex(&extra)
        );
        Ok(util::sha256_hex(joined.as_bytes()))
    }

    /// Stage each cluster stands for, from its training mean NDRE.
    pub fn cluster_stages(&self) -> Vec<Stage> {
        self.cluster_mean_ndre
            .iter()
            .map(|&m| self.thresholds.stage(m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub n_patches: usize,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    /// ARI between assigned clusters and per-patch NDRE stages.
    pub ari_cluster_vs_stage: f64,
    /// Share of patches whose cluster's stage equals their own NDRE stage.
    pub stage_agreement: f64,
    pub lead: LeadTimeSummary,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub report: TransferReport,
    pub labels: Vec<usize>,
    pub detection: LeadTimeReport,
}

pub fn transfer_evaluate(
    model: &FrozenModel<'_>,
    dataset: &Dataset,
    crossing_threshold: f64,
) -> Result<TransferOutcome> {
    let input = model.encoder.input_dim();
    let width = model.encoder.config.features.width(dataset.n_dates());
    if width != input {
        return Err(Error::Config(format!(
            "dataset has {} dates ({width} features) but the model expects {input} features",
            dataset.n_dates()
        )));
    }
    if model.cluster_mean_ndre.len() != model.clusters.k {
        return Err(Error::Contract(
            "one training mean NDRE per cluster is required".into(),
        ));
    }
    let before = model.fingerprint()?;
    let z = trainer::embed_dataset(model.encoder, dataset)?.z;
    let labels = model.clusters.predict(&z)?;
    let v = clustering::validity(&z, &labels)?;
    let stages = detection::patch_stages(dataset, &model.thresholds);
    let stage_idx: Vec<usize> = stages.iter().map(|s| s.index()).collect();
    let cluster_stage = model.cluster_stages();
    let agree = labels
        .iter()
        .zip(&stages)
        .filter(|(&l, &s)| cluster_stage[l] == s)
        .count();
    let stress = detection::stress_clusters(model.cluster_mean_ndre, &model.thresholds);
    let days = detection::detection_days(model.encoder, model.clusters, &stress, dataset)?;
    let lead = detection::lead_time_report(dataset, &stages, &labels, &days, crossing_threshold)?;
    let after = model.fingerprint()?;
    if before != after {
        return Err(Error::Contract(
            "frozen model changed during evaluation".into(),
        ));
    }
    Ok(TransferOutcome {
        report: TransferReport {
            n_patches: dataset.len(),
            silhouette: v.silhouette,
            davies_bouldin: v.davies_bouldin,
            calinski_harabasz: v.calinski_harabasz,
            ari_cluster_vs_stage: clustering::adjusted_rand_index(&labels, &stage_idx)?,
            stage_agreement: agree as f64 / dataset.len() as f64,
            lead: lead.summary.clone(),
            fingerprint_before: before,
            fingerprint_after: after,
        },
        labels,
        detection: lead,
    })
}
