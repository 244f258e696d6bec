//! NDRE stress staging and per-cluster temporal profiles.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Stage};
use crate::{Error, Result};

/// Ordered cut points (severe/moderate, moderate/mild, mild/healthy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct StageThresholds([f64; 3]);

impl StageThresholds {
    pub fn new(cuts: [f64; 3]) -> Result<Self> {
        let inside = cuts.iter().all(|c| *c > -1.0 && *c < 1.0);
        if !inside || !(cuts[0] < cuts[1] && cuts[1] < cuts[2]) {
            return Err(Error::Parameter(format!(
                "thresholds must be strictly increasing inside (-1, 1), got {cuts:?}"
            )));
        }
        Ok(StageThresholds(cuts))
    }

    /// Fixed cut points 0.3221 / 0.4789 / 0.5591 between severe, moderate, mild and healthy.
    pub fn standard() -> Self {
        StageThresholds([0.3221, 0.4789, 0.5591])
    }

    pub fn cuts(&self) -> [f64; 3] {
        self.0
    }

    /// Thresholds sit on the healthier side of each boundary.
    pub fn stage(&self, mean_ndre: f64) -> Stage {
        let [t1, t2, t3] = self.0;
        if mean_ndre >= t3 {
            Stage::Healthy
        } else if mean_ndre >= t2 {
            Stage::Mild
        } else if mean_ndre >= t1 {
            Stage::Moderate
        } else {
            Stage::Severe
        }
    }
}

impl TryFrom<[f64; 3]> for StageThresholds {
    type Error = Error;
    fn try_from(c: [f64; 3]) -> Result<Self> {
        StageThresholds::new(c)
    }
}

impl From<StageThresholds> for [f64; 3] {
    fn from(t: StageThresholds) -> [f64; 3] {
        t.0
    }
}

pub fn stage(mean_ndre: f64, thresholds: &StageThresholds) -> Stage {
    thresholds.stage(mean_ndre)
}

/// Midpoints between consecutive sorted cluster means.
pub fn thresholds_from_centroids(cluster_mean_ndre: &[f64]) -> Result<StageThresholds> {
    if cluster_mean_ndre.len() != 4 {
        return Err(Error::Parameter(format!(
            "staging requires exactly four regimes, got {} clusters",
            cluster_mean_ndre.len()
        )));
    }
    let mut m = cluster_mean_ndre.to_vec();
    m.sort_by(f64::total_cmp);
    if m.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter(format!(
            "degenerate cluster means {cluster_mean_ndre:?}: duplicates cannot be separated"
        )));
    }
    StageThresholds::new([
        (m[0] + m[1]) / 2.0,
        (m[1] + m[2]) / 2.0,
        (m[2] + m[3]) / 2.0,
    ])
}

/// Mean NDRE of the members of each cluster, indexed by cluster id.
pub fn cluster_mean_ndre(dataset: &Dataset, labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let means = dataset.mean_ndre();
    let mut sum = vec![0.0; k];
    let mut n = vec![0usize; k];
    for (&l, m) in labels.iter().zip(&means) {
        sum[l] += m;
        n[l] += 1;
    }
    if let Some(c) = n.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!("cluster {c} is empty")));
    }
    Ok(sum.iter().zip(&n).map(|(s, &c)| s / c as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    pub mean: Vec<f64>,
    /// 1.96 standard errors per date; zero for singleton clusters.
    pub half_width: Vec<f64>,
    pub singleton: bool,
}

pub fn cluster_profiles(dataset: &Dataset, labels: &[usize]) -> Result<Vec<ClusterProfile>> {
    if labels.len() != dataset.len() {
        return Err(Error::Contract(format!(
            "{} labels for {} series",
            labels.len(),
            dataset.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let t = dataset.n_dates();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&[f64]> = dataset
            .series()
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(s, _)| s.values.as_slice())
            .collect();
        let n = members.len();
        if n == 0 {
            return Err(Error::Contract(format!("cluster {c} is empty")));
        }
        let mut mean = vec![0.0; t];
        let mut half_width = vec![0.0; t];
        for j in 0..t {
            let m = members.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            mean[j] = m;
            if n > 1 {
                let var = members.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                half_width[j] = 1.96 * var.sqrt() / (n as f64).sqrt();
            }
        }
        out.push(ClusterProfile {
            cluster: c,
            size: n,
            mean,
            half_width,
            singleton: n == 1,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NdreSeries;
    use proptest::prelude::*;

    #[test]
    fn midpoints() {
        let t = thresholds_from_centroids(&[0.60, 0.28, 0.52, 0.42]).unwrap();
        let want = [0.35, 0.47, 0.56];
        for (a, b) in t.cuts().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(thresholds_from_centroids(&[0.1, 0.2, 0.3, 0.3]).is_err());
        assert!(thresholds_from_centroids(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn standard_bands() {
        let t = StageThresholds::standard();
        assert_eq!(t.stage(0.60), Stage::Healthy);
        assert_eq!(t.stage(0.40), Stage::Moderate);
        assert_eq!(t.stage(0.5591), Stage::Healthy);
        assert_eq!(t.stage(0.4789), Stage::Mild);
        assert_eq!(t.stage(0.3221), Stage::Moderate);
        assert_eq!(t.stage(0.3), Stage::Severe);
    }

    proptest! {
        #[test]
        fn staging_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let t = StageThresholds::standard();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.stage(hi) <= t.stage(lo));
        }
    }

    fn ds(rows: &[[f64; 2]]) -> Dataset {
        let s = rows
            .iter()
            .enumerate()
            .map(|(i, r)| NdreSeries::new(format!("s{i}"), r.to_vec(), vec![0, 10]).unwrap())
            .collect();
        Dataset::new(s, None).unwrap()
    }

    #[test]
    fn profile_half_width() {
        let d = ds(&[[0.4, 0.5], [0.6, 0.5], [0.2, 0.2]]);
        let p = cluster_profiles(&d, &[0, 0, 1]).unwrap();
        assert!((p[0].mean[0] - 0.5).abs() < 1e-12);
        assert!((p[0].half_width[0] - 0.196).abs() < 1e-12);
        assert_eq!(p[0].half_width[1], 0.0);
        assert!(p[1].singleton);
        assert_eq!(p[1].half_width, vec![0.0, 0.0]);
    }
}
