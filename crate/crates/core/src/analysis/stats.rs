//! One-way ANOVA and Tukey–Kramer comparisons with permutation p-values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::util;
use crate::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    #[default]
    FDistribution,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub a: usize,
    pub b: usize,
    /// mean(a) − mean(b)
    pub mean_diff: f64,
    pub q: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub anova_f: f64,
    pub anova_p: f64,
    pub p_method: PValueMethod,
    pub group_sizes: Vec<usize>,
    pub group_means: Vec<f64>,
    pub pairwise: Vec<PairwiseRow>,
    pub permutations: usize,
}

fn check(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::Contract(format!(
            "group {i} has {} samples; need at least 2",
            g.len()
        )));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    Ok(())
}

struct Anova {
    f: f64,
    ssw: f64,
    means: Vec<f64>,
    sizes: Vec<usize>,
}

impl Anova {
    fn df_within(&self) -> f64 {
        (self.sizes.iter().sum::<usize>() - self.sizes.len()) as f64
    }

    fn msw(&self) -> f64 {
        self.ssw / self.df_within()
    }
}

/// `values` are grouped by `labels` into `k` groups; every group is nonempty.
fn anova_labeled(values: &[f64], labels: &[usize], k: usize) -> Anova {
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (&v, &l) in values.iter().zip(labels) {
        sums[l] += v;
        sizes[l] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let grand = util::mean(values);
    let ssb: f64 = means
        .iter()
        .zip(&sizes)
        .map(|(m, &n)| n as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = values
        .iter()
        .zip(labels)
        .map(|(v, &l)| (v - means[l]).powi(2))
        .sum();
    let df_b = (k - 1) as f64;
    let df_w = (values.len() - k) as f64;
    let f = if ssw == 0.0 {
        if ssb == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ssb / df_b) / (ssw / df_w)
    };
    Anova {
        f,
        ssw,
        means,
        sizes,
    }
}

/// Permuted statistics within this relative distance of the observed one
/// count as ties; the same partition summed in another order differs by ulps.
const TIE_TOLERANCE: f64 = 1e-9;

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - TIE_TOLERANCE * observed.abs()
}

fn flatten(groups: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (g, vals) in groups.iter().enumerate() {
        values.extend_from_slice(vals);
        labels.extend(std::iter::repeat_n(g, vals.len()));
    }
    (values, labels)
}

fn f_pvalue(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if f == 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.sf(f).clamp(0.0, 1.0))
}

/// Returns (F, p). Zero within- and between-group variance gives F = 0, p = 1;
/// zero within-group variance alone gives F = ∞, p = 0.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    check(groups)?;
    let (values, labels) = flatten(groups);
    let a = anova_labeled(&values, &labels, groups.len());
    let p = f_pvalue(a.f, (groups.len() - 1) as f64, a.df_within())?;
    Ok((a.f, p))
}

/// Permutation p-value `(1 + #{F* ≥ F}) / (1 + R)` over seeded label shuffles.
pub fn anova_permutation(
    groups: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check(groups)?;
    let (values, mut labels) = flatten(groups);
    let k = groups.len();
    let f = anova_labeled(&values, &labels, k).f;
    let mut rng = util::rng(seed);
    let mut hits = 0usize;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if at_least(anova_labeled(&values, &labels, k).f, f) {
            hits += 1;
        }
    }
    Ok((f, (1 + hits) as f64 / (1 + permutations) as f64))
}

/// Pooled-variance two-sample t statistic.
pub fn two_sample_t(a: &[f64], b: &[f64]) -> Result<f64> {
    check(&[a.to_vec(), b.to_vec()])?;
    let (ma, mb) = (util::mean(a), util::mean(b));
    let ss: f64 = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
        + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = ss / (na + nb - 2.0);
    Ok((ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt())
}

fn q_stat(diff: f64, msw: f64, na: usize, nb: usize) -> f64 {
    let d = diff.abs();
    if d == 0.0 {
        return 0.0;
    }
    let se = (msw / 2.0 * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    if se == 0.0 {
        f64::INFINITY
    } else {
        d / se
    }
}

fn pair_qs(a: &Anova) -> Vec<f64> {
    let k = a.means.len();
    let msw = a.msw();
    let mut qs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            qs.push(q_stat(a.means[i] - a.means[j], msw, a.sizes[i], a.sizes[j]));
        }
    }
    qs
}

/// Tukey–Kramer pairwise comparisons. Each pair's p-value is the share of
/// label shuffles whose largest studentized range reaches that pair's q.
pub fn tukey_hsd(groups: &[Vec<f64>], permutations: usize, seed: u64) -> Result<Vec<PairwiseRow>> {
    check(groups)?;
    let k = groups.len();
    let (values, mut labels) = flatten(groups);
    let observed = anova_labeled(&values, &labels, k);
    let q_obs = pair_qs(&observed);
    let mut max_q = Vec::with_capacity(permutations);
    let mut rng = util::rng(seed);
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        let a = anova_labeled(&values, &labels, k);
        max_q.push(pair_qs(&a).into_iter().fold(0.0, f64::max));
    }
    let mut rows = Vec::new();
    let mut idx = 0;
    for i in 0..k {
        for j in i + 1..k {
            let q = q_obs[idx];
            idx += 1;
            let hits = max_q.iter().filter(|&&m| at_least(m, q)).count();
            rows.push(PairwiseRow {
                a: i,
                b: j,
                mean_diff: observed.means[i] - observed.means[j],
                q,
                p: (1 + hits) as f64 / (1 + permutations) as f64,
            });
        }
    }
    Ok(rows)
}

pub fn stat_report(
    groups: &[Vec<f64>],
    method: PValueMethod,
    permutations: usize,
    seed: u64,
) -> Result<StatReport> {
    check(groups)?;
    let (anova_f, anova_p) = match method {
        PValueMethod::FDistribution => anova_oneway(groups)?,
        PValueMethod::Permutation => {
            anova_permutation(groups, permutations, util::derive_seed(seed, 1))?
        }
    };
    let pairwise = tukey_hsd(groups, permutations, util::derive_seed(seed, 2))?;
    Ok(StatReport {
        anova_f,
        anova_p,
        p_method: method,
        group_sizes: groups.iter().map(Vec::len).collect(),
        group_means: groups.iter().map(|g| util::mean(g)).collect(),
        pairwise,
        permutations,
    })
}

/// Splits per-item values into per-cluster groups.
pub fn group_by_label(values: &[f64], labels: &[usize], k: usize) -> Result<Vec<Vec<f64>>> {
    if values.len() != labels.len() {
        return Err(Error::Contract("values and labels differ in length".into()));
    }
    let mut groups = vec![Vec::new(); k];
    for (&v, &l) in values.iter().zip(labels) {
        if l >= k {
            return Err(Error::Contract(format!(
                "label {l} out of range for k = {k}"
            )));
        }
        groups[l].push(v);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_anova() {
        let (f, p) = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
        assert!((f - 1.5).abs() < 1e-12);
        // F(1, 4) survival at 1.5
        assert!((p - 0.287_864_134_726_690_7).abs() < 1e-9, "{p}");
    }

    #[test]
    fn degenerate_variances() {
        assert_eq!(
            anova_oneway(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            (f64::INFINITY, 0.0)
        );
        assert_eq!(
            anova_oneway(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap(),
            (0.0, 1.0)
        );
    }

    #[test]
    fn identical_groups() {
        let g = vec![vec![1.0, 2.0, 3.0]; 3];
        let (f, p) = anova_oneway(&g).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(p, 1.0);
        for row in tukey_hsd(&g, 200, 1).unwrap() {
            assert_eq!(row.mean_diff, 0.0);
            assert_eq!(row.p, 1.0);
        }
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(
            anova_oneway(&[vec![1.0, 2.0]]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            anova_oneway(&[vec![1.0, 2.0], vec![3.0]]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            tukey_hsd(&[vec![1.0], vec![3.0, 4.0]], 10, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pairwise_covers_all_pairs() {
        let g: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64, i as f64 + 0.5, i as f64 + 0.2])
            .collect();
        let rows = tukey_hsd(&g, 100, 3).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.a < r.b));
    }

    #[test]
    fn two_group_tukey_matches_exact_permutation_test() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.4];
        let b = [0.6, 0.8, 0.7, 1.2, 0.5];
        let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        let t_obs = two_sample_t(&a, &b).unwrap().abs();
        // Enumerate all 252 splits of the pooled sample.
        let (mut hits, mut total) = (0, 0);
        for mask in 0u32..1024 {
            if mask.count_ones() != 5 {
                continue;
            }
            let (ga, gb): (Vec<_>, Vec<_>) = (0..10).partition(|&i| mask & (1 << i) != 0);
            let xa: Vec<f64> = ga.iter().map(|&i| pooled[i]).collect();
            let xb: Vec<f64> = gb.iter().map(|&i| pooled[i]).collect();
            total += 1;
            if two_sample_t(&xa, &xb).unwrap().abs() >= t_obs - 1e-12 {
                hits += 1;
            }
        }
        assert_eq!(total, 252);
        let exact = hits as f64 / total as f64;
        let rows = tukey_hsd(&[a.to_vec(), b.to_vec()], DEFAULT_PERMUTATIONS, 11).unwrap();
        assert!((rows[0].p - exact).abs() < 0.01, "{} vs {exact}", rows[0].p);
    }

    #[test]
    fn separated_groups_are_significant() {
        let g: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..30).map(|j| i as f64 + 0.01 * (j % 7) as f64).collect())
            .collect();
        let r = stat_report(&g, PValueMethod::FDistribution, 2000, 5).unwrap();
        assert!(r.anova_p < 1e-6);
        assert!(r.pairwise.iter().all(|row| row.p < 0.01));
        let r = stat_report(&g, PValueMethod::Permutation, 500, 5).unwrap();
        assert!((r.anova_p - 1.0 / 501.0).abs() < 1e-15);
    }

    #[test]
    fn grouping() {
        let g = group_by_label(&[1.0, 2.0, 3.0], &[1, 0, 1], 2).unwrap();
        assert_eq!(g, vec![vec![2.0], vec![1.0, 3.0]]);
        assert!(group_by_label(&[1.0], &[2], 2).is_err());
    }

    proptest! {
        #[test]
        fn f_is_squared_t(
            a in prop::collection::vec(-5.0f64..5.0, 2..12),
            b in prop::collection::vec(-5.0f64..5.0, 2..12),
        ) {
            let t = two_sample_t(&a, &b).unwrap();
            prop_assume!(t.is_finite());
            let (f, _) = anova_oneway(&[a, b]).unwrap();
            prop_assert!((f - t * t).abs() <= 1e-9 * f.max(1.0), "{} vs {}", f, t * t);
        }
    }
}
