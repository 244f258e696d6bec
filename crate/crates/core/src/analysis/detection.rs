//! Threshold crossings, prefix-based early detection and lead times.
//!
//! A patch is detected at the shortest prefix whose padded embedding falls in
//! a stress cluster and stays there for every longer prefix. Prefixes are
//! padded to full width by holding the last observed value.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::staging::StageThresholds;
use crate::clustering::ClusterModel;
use crate::data::{Dataset, NdreSeries, Stage};
use crate::encoder::Encoder;
use crate::trainer;
use crate::{Error, Result};

pub const DEFAULT_CROSSING_THRESHOLD: f64 = 0.40;
pub const HISTOGRAM_BIN_DAYS: f64 = 5.0;

/// First day the piecewise-linear interpolant falls to `threshold` or below.
pub fn crossing_day(series: &NdreSeries, threshold: f64) -> Option<f64> {
    let (v, d) = (&series.values, &series.dates);
    if v[0] <= threshold {
        return Some(d[0] as f64);
    }
    for i in 1..v.len() {
        if v[i] <= threshold {
            let (v0, v1) = (v[i - 1], v[i]);
            let (d0, d1) = (d[i - 1] as f64, d[i] as f64);
            return Some(d0 + (v0 - threshold) / (v0 - v1) * (d1 - d0));
        }
    }
    None
}

/// Clusters whose member mean NDRE stages as Moderate or Severe.
pub fn stress_clusters(cluster_mean_ndre: &[f64], thresholds: &StageThresholds) -> Vec<usize> {
    cluster_mean_ndre
        .iter()
        .enumerate()
        .filter(|(_, &m)| thresholds.stage(m).is_stressed())
        .map(|(c, _)| c)
        .collect()
}

/// Prefix of length `t` padded with its last value.
pub fn padded_prefix(values: &[f64], t: usize) -> Vec<f64> {
    let last = values[t - 1];
    values[..t]
        .iter()
        .copied()
        .chain(std::iter::repeat_n(last, values.len() - t))
        .collect()
}

/// Earliest persistent stress assignment, given the cluster of each prefix
/// length 2..=T in order.
pub fn persistent_onset(in_stress: &[bool]) -> Option<usize> {
    let mut first = None;
    for (i, &s) in in_stress.iter().enumerate().rev() {
        if !s {
            break;
        }
        first = Some(i);
    }
    first
}

/// Detection day for every patch, in dataset order.
pub fn detection_days(
    encoder: &Encoder,
    clusters: &ClusterModel,
    stress: &[usize],
    dataset: &Dataset,
) -> Result<Vec<Option<f64>>> {
    let t = dataset.n_dates();
    if t < 2 {
        return Err(Error::Contract("detection needs at least two dates".into()));
    }
    let per = t - 1;
    let rows: Vec<Vec<f64>> = dataset
        .series()
        .iter()
        .flat_map(|s| (2..=t).map(move |len| padded_prefix(&s.values, len)))
        .collect();
    let series: Vec<NdreSeries> = rows
        .into_iter()
        .enumerate()
        .map(|(i, v)| NdreSeries::new(format!("p{i}"), v, dataset.dates().to_vec()))
        .collect::<Result<_>>()?;
    let prefixes = Dataset::new(series, None)?;
    let z = trainer::embed_dataset(encoder, &prefixes)?.z;
    let assigned = clusters.predict(&z)?;
    let dates = dataset.dates();
    Ok(assigned
        .chunks(per)
        .map(|a| {
            let flags: Vec<bool> = a.iter().map(|c| stress.contains(c)).collect();
            // flags[i] is prefix length i + 2, whose last date is dates[i + 1].
            persistent_onset(&flags).map(|i| dates[i + 1] as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub patch_id: String,
    pub stage: Stage,
    pub cluster: usize,
    pub detection_day: Option<f64>,
    pub crossing_day: Option<f64>,
    pub lead_days: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeSummary {
    pub threshold: f64,
    pub n_patches: usize,
    pub n_crossing: usize,
    pub n_detected: usize,
    pub n_with_lead: usize,
    pub n_early: usize,
    /// Absent when no patch crosses the threshold.
    pub fraction_early: Option<f64>,
    pub mean_lead_days: Option<f64>,
    pub max_lead_days: Option<f64>,
    pub no_stress_events: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTimeReport {
    pub rows: Vec<DetectionRow>,
    pub summary: LeadTimeSummary,
    pub histogram: Vec<HistogramBin>,
}

pub fn lead_time_report(
    dataset: &Dataset,
    stages: &[Stage],
    clusters: &[usize],
    detection: &[Option<f64>],
    threshold: f64,
) -> Result<LeadTimeReport> {
    let n = dataset.len();
    if stages.len() != n || clusters.len() != n || detection.len() != n {
        return Err(Error::Contract("per-patch inputs differ in length".into()));
    }
    let rows: Vec<DetectionRow> = dataset
        .series()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let crossing = crossing_day(s, threshold);
            DetectionRow {
                patch_id: s.patch_id.clone(),
                stage: stages[i],
                cluster: clusters[i],
                detection_day: detection[i],
                crossing_day: crossing,
                lead_days: crossing.zip(detection[i]).map(|(c, d)| c - d),
            }
        })
        .collect();
    let leads: Vec<f64> = rows.iter().filter_map(|r| r.lead_days).collect();
    let n_crossing = rows.iter().filter(|r| r.crossing_day.is_some()).count();
    let n_early = leads.iter().filter(|&&l| l > 0.0).count();
    let summary = LeadTimeSummary {
        threshold,
        n_patches: n,
        n_crossing,
        n_detected: rows.iter().filter(|r| r.detection_day.is_some()).count(),
        n_with_lead: leads.len(),
        n_early,
        fraction_early: (n_crossing > 0).then(|| n_early as f64 / n_crossing as f64),
        mean_lead_days: (!leads.is_empty()).then(|| crate::util::mean(&leads)),
        max_lead_days: leads.iter().copied().reduce(f64::max),
        no_stress_events: n_crossing == 0,
    };
    Ok(LeadTimeReport {
        histogram: histogram(&leads, HISTOGRAM_BIN_DAYS),
        rows,
        summary,
    })
}

/// Contiguous bins `[lo, lo + width)` aligned to multiples of `width`.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let bin = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| bin(v)).min().unwrap();
    let hi = values.iter().map(|&v| bin(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(bin(v) - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let b = (lo + i as i64) as f64;
            HistogramBin {
                bin_lo: b * width,
                bin_hi: (b + 1.0) * width,
                count,
            }
        })
        .collect()
}

/// Stage of each patch from its own mean NDRE.
pub fn patch_stages(dataset: &Dataset, thresholds: &StageThresholds) -> Vec<Stage> {
    dataset
        .mean_ndre()
        .into_iter()
        .map(|m| thresholds.stage(m))
        .collect()
}

/// Full detection pass: embed prefixes, find detections and crossings, summarize.
pub fn run_detection(
    encoder: &Encoder,
    clusters: &ClusterModel,
    labels: &[usize],
    cluster_mean_ndre: &[f64],
    thresholds: &StageThresholds,
    dataset: &Dataset,
    crossing_threshold: f64,
) -> Result<LeadTimeReport> {
    let stress = stress_clusters(cluster_mean_ndre, thresholds);
    let detection = detection_days(encoder, clusters, &stress, dataset)?;
    lead_time_report(
        dataset,
        &patch_stages(dataset, thresholds),
        labels,
        &detection,
        crossing_threshold,
    )
}

/// Row matrix of prefixes for one series; exposed for inspection tools.
pub fn prefix_matrix(series: &NdreSeries) -> Array2<f64> {
    let t = series.values.len();
    let mut m = Array2::zeros((t.saturating_sub(1), t));
    for (r, len) in (2..=t).enumerate() {
        for (c, v) in padded_prefix(&series.values, len).into_iter().enumerate() {
            m[[r, c]] = v;
        }
    }
    m
}
