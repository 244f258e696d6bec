//! k-means with k-means++ seeding, the elbow rule, and cluster validity
//! metrics (silhouette, Davies–Bouldin, Calinski–Harabasz, ARI).

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util;
use crate::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
}

impl ClusterModel {
    pub fn nearest(&self, x: ArrayView1<f64>) -> usize {
        nearest_centroid(&self.centroids, x).0
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.centroids.ncols() {
            return Err(Error::Config(format!(
                "points have {} dims, centroids {}",
                x.ncols(),
                self.centroids.ncols()
            )));
        }
        Ok(x.rows().into_iter().map(|r| self.nearest(r)).collect())
    }
}

/// Lowest index wins distance ties.
fn nearest_centroid(c: &Array2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, row) in c.rows().into_iter().enumerate() {
        let d = util::sq_dist(row, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut c = Array2::zeros((k, x.ncols()));
    c.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| util::sq_dist(r, c.row(0)))
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        c.row_mut(j).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(util::sq_dist(r, c.row(j)));
        }
    }
    c
}

/// One Lloyd run; returns the model and the inertia after every assignment.
pub fn lloyd(x: &Array2<f64>, k: usize, seed: u64) -> Result<(ClusterModel, Vec<f64>)> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k must be in 1..={n}, got {k}")));
    }
    let mut rng = util::rng(seed);
    let mut centroids = plus_plus(x, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut d2 = vec![0.0; n];
        for (i, r) in x.rows().into_iter().enumerate() {
            let (j, d) = nearest_centroid(&centroids, r);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            d2[i] = d;
            inertia += d;
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(labels[i]);
            row += &r;
            counts[labels[i]] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids
                    .row_mut(j)
                    .assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // Reseed at the point farthest from its centroid.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                    .unwrap();
                taken[far] = true;
                centroids.row_mut(j).assign(&x.row(far));
            }
        }
    }
    let inertia = *trace.last().unwrap();
    Ok((
        ClusterModel {
            centroids,
            labels,
            inertia,
            k,
            seed,
        },
        trace,
    ))
}

/// Best of `restarts` Lloyd runs by inertia.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    if restarts == 0 {
        return Err(Error::Parameter("restarts must be >= 1".into()));
    }
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts {
        let (m, _) = lloyd(x, k, util::derive_seed(seed, r as u64))?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    let mut best = best.unwrap();
    best.seed = seed;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElbowResult {
    pub k: usize,
    /// Inertia for k = 1..=k_max.
    pub inertias: Vec<f64>,
    pub low_confidence: bool,
}

/// Picks the interior k of maximum curvature `y'' / (1 + y'^2)^1.5`, with k
/// and inertia both rescaled to unit range so the answer does not depend on
/// the units of either axis. The flag compares the raw second difference
/// at the chosen k with the total inertia drop.
pub fn elbow(x: &Array2<f64>, k_max: usize, seed: u64, restarts: usize) -> Result<ElbowResult> {
    if k_max < 3 {
        return Err(Error::Parameter(format!("k_max must be >= 3, got {k_max}")));
    }
    let k_max = k_max.min(x.nrows());
    if k_max < 3 {
        return Err(Error::Parameter("elbow needs at least 3 points".into()));
    }
    let inertias = (1..=k_max)
        .map(|k| kmeans(x, k, seed, restarts).map(|m| m.inertia))
        .collect::<Result<Vec<_>>>()?;
    let (k, low_confidence) = elbow_choice(&inertias);
    Ok(ElbowResult {
        k,
        low_confidence,
        inertias,
    })
}

/// The selection rule of [`elbow`] on an inertia curve for k = 1, 2, ...
pub fn elbow_choice(inertias: &[f64]) -> (usize, bool) {
    let n = inertias.len();
    assert!(n >= 3, "elbow needs inertias for at least k = 1..3");
    let last = inertias[n - 1];
    let drop = inertias[0] - last;
    let y: Vec<f64> = inertias
        .iter()
        .map(|v| if drop > 0.0 { (v - last) / drop } else { 0.0 })
        .collect();
    let h = 1.0 / (n - 1) as f64;
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..n - 1 {
        let d1 = (y[i + 1] - y[i - 1]) / (2.0 * h);
        let d2 = (y[i - 1] - 2.0 * y[i] + y[i + 1]) / (h * h);
        let kappa = d2 / (1.0 + d1 * d1).powf(1.5);
        if kappa > best.1 {
            best = (i, kappa);
        }
    }
    let i = best.0;
    let raw = inertias[i - 1] - 2.0 * inertias[i] + inertias[i + 1];
    (i + 1, raw <= 0.05 * drop)
}

/// Dense cluster ids `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn check_labels(x: &Array2<f64>, labels: &[usize]) -> Result<(Vec<usize>, usize)> {
    if labels.len() != x.nrows() {
        return Err(Error::Contract(format!(
            "{} labels for {} points",
            labels.len(),
            x.nrows()
        )));
    }
    let (l, k) = compact(labels);
    if k < 2 {
        return Err(Error::MetricUndefined(
            "validity metrics need at least 2 clusters".into(),
        ));
    }
    Ok((l, k))
}

fn centroids_of(x: &Array2<f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::zeros((k, x.ncols()));
    let mut n = vec![0usize; k];
    for (r, &l) in x.rows().into_iter().zip(labels) {
        let mut row = c.row_mut(l);
        row += &r;
        n[l] += 1;
    }
    for j in 0..k {
        let mut row = c.row_mut(j);
        row /= n[j] as f64;
    }
    (c, n)
}

pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_labels(x, labels)?;
    let n = x.nrows();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += util::dist(x.row(i), x.row(j));
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

pub fn davies_bouldin(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_labels(x, labels)?;
    let (c, n) = centroids_of(x, &labels, k);
    let mut s = vec![0.0; k];
    for (r, &l) in x.rows().into_iter().zip(&labels) {
        s[l] += util::dist(r, c.row(l));
    }
    for j in 0..k {
        s[j] /= n[j] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| {
                let d = util::dist(c.row(i), c.row(j));
                if d > 0.0 {
                    (s[i] + s[j]) / d
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        total += worst;
    }
    Ok(total / k as f64)
}

pub fn calinski_harabasz(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_labels(x, labels)?;
    let n = x.nrows();
    let (c, sizes) = centroids_of(x, &labels, k);
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let between: f64 = (0..k)
        .map(|j| sizes[j] as f64 * util::sq_dist(c.row(j), mean.view()))
        .sum();
    let within: f64 = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(r, &l)| util::sq_dist(r, c.row(l)))
        .sum();
    if k == n || within == 0.0 {
        return Ok(if between > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

pub fn validity(x: &Array2<f64>, labels: &[usize]) -> Result<ValidityReport> {
    Ok(ValidityReport {
        silhouette: silhouette(x, labels)?,
        davies_bouldin: davies_bouldin(x, labels)?,
        calinski_harabasz: calinski_harabasz(x, labels)?,
    })
}

fn comb2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "label lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("ARI needs at least 2 samples".into()));
    }
    let (a, ka) = compact(a);
    let (b, kb) = compact(b);
    let mut table = vec![0usize; ka * kb];
    for (x, y) in a.iter().zip(&b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| comb2(c)).sum();
    let rows: f64 = (0..ka)
        .map(|i| comb2(table[i * kb..(i + 1) * kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|j| comb2((0..ka).map(|i| table[i * kb + j]).sum()))
        .sum();
    let expected = rows * cols / comb2(a.len());
    let max = (rows + cols) / 2.0;
    if max == expected {
        // Only reachable when both partitions are the same trivial partition.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AriInterval {
    pub ari: f64,
    pub lo: f64,
    pub hi: f64,
}

/// ARI with a 95% percentile-bootstrap interval over sample indices.
pub fn ari_bootstrap_ci(
    a: &[usize],
    b: &[usize],
    resamples: usize,
    seed: u64,
) -> Result<AriInterval> {
    let ari = adjusted_rand_index(a, b)?;
    if resamples == 0 {
        return Ok(AriInterval {
            ari,
            lo: ari,
            hi: ari,
        });
    }
    let n = a.len();
    let mut rng = util::rng(seed);
    let mut stats = Vec::with_capacity(resamples);
    let (mut ra, mut rb) = (vec![0; n], vec![0; n]);
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            ra[i] = a[j];
            rb[i] = b[j];
        }
        stats.push(adjusted_rand_index(&ra, &rb)?);
    }
    stats.sort_by(f64::total_cmp);
    Ok(AriInterval {
        ari,
        lo: util::percentile_sorted(&stats, 0.025),
        hi: util::percentile_sorted(&stats, 0.975),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn line() -> Array2<f64> {
        array![[0.0], [0.1], [10.0], [10.1]]
    }

    #[test]
    fn two_pairs_hand_values() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        let m = kmeans(&x, 2, 1, 10).unwrap();
        assert_eq!(m.labels[0], m.labels[1]);
        assert_eq!(m.labels[2], m.labels[3]);
        assert_ne!(m.labels[0], m.labels[2]);
        assert!((m.inertia - 0.01).abs() < 1e-12);
        let c0 = m.centroids.row(m.labels[0]);
        assert!((c0[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn trivial_cluster_counts() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        assert_eq!(kmeans(&x, 3, 0, 3).unwrap().inertia, 0.0);
        let one = kmeans(&x, 1, 0, 1).unwrap();
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let tv: f64 = x
            .rows()
            .into_iter()
            .map(|r| util::sq_dist(r, mean.view()))
            .sum();
        assert!((one.inertia - tv).abs() < 1e-12);
        assert!(matches!(kmeans(&x, 4, 0, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn line_metric_values() {
        let x = line();
        let l = [0, 0, 1, 1];
        let s = silhouette(&x, &l).unwrap();
        let per = [
            1.0 - 0.1 / 10.05,
            1.0 - 0.1 / 9.95,
            1.0 - 0.1 / 9.95,
            1.0 - 0.1 / 10.05,
        ];
        assert!((s - per.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!((s - 0.98997).abs() < 1e-4);
        assert!((davies_bouldin(&x, &l).unwrap() - 0.01).abs() < 1e-12);
        assert!((calinski_harabasz(&x, &l).unwrap() - 20000.0).abs() < 1e-6);
        assert!(matches!(
            silhouette(&x, &[0, 0, 0, 0]),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn ari_examples() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        assert_eq!(
            adjusted_rand_index(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(),
            0.0
        );
        assert!(
            (adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap() - 4.0 / 7.0).abs() < 1e-12
        );
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn bootstrap_deterministic() {
        let a: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let b: Vec<usize> = (0..60)
            .map(|i| if i % 7 == 0 { 0 } else { i % 3 })
            .collect();
        let x = ari_bootstrap_ci(&a, &b, 200, 5).unwrap();
        assert_eq!(x, ari_bootstrap_ci(&a, &b, 200, 5).unwrap());
        assert!(x.lo <= x.ari + 0.05 && x.ari <= x.hi + 0.05 && x.lo <= x.hi);
    }

    fn blobs(seed: u64) -> Array2<f64> {
        let mut r = util::rng(seed);
        let centers = [
            [4.0, 0.0, 0.0, 0.0],
            [0.0, 4.0, 0.0, 0.0],
            [0.0, 0.0, 4.0, 0.0],
            [0.0, 0.0, 0.0, 4.0],
        ];
        Array2::from_shape_fn((80, 4), |(i, j)| {
            centers[i % 4][j] + 0.2 * (r.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn elbow_finds_four_blobs() {
        let e = elbow(&blobs(3), 8, 1, 5).unwrap();
        assert_eq!(e.k, 4);
        assert!(!e.low_confidence);
        assert_eq!(e.inertias.len(), 8);
    }

    #[test]
    fn elbow_boundary_and_uniform() {
        let e = elbow(&blobs(4), 3, 1, 3).unwrap();
        assert_eq!(e.k, 2);
        let mut r = util::rng(8);
        // Eight equal blobs on the vertices of a regular simplex: every merge
        // costs the same, so inertia falls linearly and no k stands out.
        let u = Array2::from_shape_fn((160, 8), |(i, j)| {
            f64::from(u8::from(i % 8 == j)) + 0.01 * (r.random::<f64>() - 0.5)
        });
        let e = elbow(&u, 8, 1, 5).unwrap();
        assert!(e.low_confidence, "{e:?}");
    }

    #[test]
    fn elbow_curvature_resists_unbalanced_clusters() {
        // Embedding inertias from a 64/12/12/12 corpus. The first merge is so
        // costly that the raw second difference would peak at k = 2.
        let curve = [
            971.93, 365.49, 174.71, 4.2722, 3.0084, 2.4069, 2.0122, 1.8357,
        ];
        assert_eq!(elbow_choice(&curve), (4, false));
        let raw: Vec<f64> = curve.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
        assert!(raw[0] > raw[2]);
        assert_eq!(elbow_choice(&[3.0, 2.0, 1.0]), (2, true));
        assert_eq!(elbow_choice(&[1.0, 1.0, 1.0, 1.0]), (2, true));
    }

    #[test]
    fn tight_blobs_silhouette() {
        let x = blobs(5);
        let l: Vec<usize> = (0..80).map(|i| i % 4).collect();
        assert!(silhouette(&x, &l).unwrap() > 0.9);
        let mut r = util::rng(2);
        let one = Array2::from_shape_fn((20, 2), |_| r.random::<f64>());
        let rand_l: Vec<usize> = (0..20).map(|_| r.random_range(0..2)).collect();
        assert!(silhouette(&one, &rand_l).unwrap().abs() < 0.2);
    }

    #[test]
    fn merged_duplicate_clusters_have_large_dbi() {
        let x = array![[0.0], [0.1], [0.2], [0.3], [5.0], [5.2]];
        // Two overlapping groups split arbitrarily and a far group.
        assert!(davies_bouldin(&x, &[0, 1, 0, 1, 2, 2]).unwrap() > 1.0);
    }

    #[test]
    fn lloyd_inertia_non_increasing() {
        let mut r = util::rng(9);
        for s in 0..20 {
            let x = Array2::from_shape_fn((60, 3), |_| r.random::<f64>());
            let (_, trace) = lloyd(&x, 5, s).unwrap();
            assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{trace:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn label_permutation_and_rotation(seed in 0u64..10_000) {
            let mut r = util::rng(seed);
            let x = Array2::from_shape_fn((12, 2), |_| r.random::<f64>());
            let l: Vec<usize> = (0..12).map(|i| if i < 3 { i } else { r.random_range(0..3) }).collect();
            let pl: Vec<usize> = l.iter().map(|v| (v + 1) % 3).collect();
            let (c, s) = (0.7f64.cos(), 0.7f64.sin());
            let rx = x.dot(&array![[c, -s], [s, c]]);
            let a = validity(&x, &l).unwrap();
            for b in [validity(&x, &pl).unwrap(), validity(&rx, &l).unwrap()] {
                prop_assert!((a.silhouette - b.silhouette).abs() < 1e-9);
                prop_assert!((a.davies_bouldin - b.davies_bouldin).abs() < 1e-9);
                prop_assert!((a.calinski_harabasz - b.calinski_harabasz).abs() < 1e-9 * a.calinski_harabasz.max(1.0));
            }
            let other: Vec<usize> = (0..12).map(|_| r.random_range(0..4)).collect();
            prop_assert_eq!(adjusted_rand_index(&l, &other).unwrap(), adjusted_rand_index(&other, &l).unwrap());
        }

        #[test]
        fn duplicating_points_keeps_silhouette(seed in 0u64..10_000) {
            let mut r = util::rng(seed);
            let x = Array2::from_shape_fn((10, 2), |_| r.random::<f64>());
            let l: Vec<usize> = (0..10).map(|i| i % 3).collect();
            let xx = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
            let ll: Vec<usize> = l.iter().chain(&l).copied().collect();
            let a = silhouette(&x, &l).unwrap();
            let b = silhouette(&xx, &ll).unwrap();
            // Each copy gains a zero-distance neighbour, so a(i) can only shrink
            // while b(i) is unchanged.
            prop_assert!(b >= a - 1e-12, "{} vs {}", a, b);
        }
    }
}
