//! RBF similarity over raw series, leading eigenpairs by block power
//! iteration, and the stress weights read off the principal eigenvector.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::util;
use crate::{Error, Result};

/// Dense kernels above this size are refused rather than allocated.
pub const MAX_KERNEL_N: usize = 20_000;
pub const MAX_ITERATIONS: usize = 10_000;
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: Array2<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum GammaPolicy {
    /// γ = 1/(2·median²) over pairwise series distances.
    #[default]
    Median,
    Fixed(f64),
}

impl GammaPolicy {
    pub fn resolve(&self, x: &Array2<f64>) -> Result<f64> {
        match *self {
            GammaPolicy::Median => Ok(median_heuristic_gamma(x)),
            GammaPolicy::Fixed(g) if g > 0.0 && g.is_finite() => Ok(g),
            GammaPolicy::Fixed(g) => {
                Err(Error::Parameter(format!("gamma must be positive, got {g}")))
            }
        }
    }
}

/// Falls back to γ = 1 when every series is identical (median distance 0).
pub fn median_heuristic_gamma(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(util::dist(x.row(i), x.row(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let mut median = *m;
    if d.len() % 2 == 0 {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        median = 0.5 * (median + lower);
    }
    if median > 0.0 {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

pub fn rbf_matrix(dataset: &Dataset, gamma: f64) -> Result<KernelMatrix> {
    rbf_from_rows(&dataset.matrix(), gamma)
}

pub fn rbf_from_rows(x: &Array2<f64>, gamma: f64) -> Result<KernelMatrix> {
    let n = x.nrows();
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if n < 2 {
        return Err(Error::Parameter("kernel needs at least 2 series".into()));
    }
    if n > MAX_KERNEL_N {
        return Err(Error::Parameter(format!(
            "dense kernel limited to {MAX_KERNEL_N} series, got {n}"
        )));
    }
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in i + 1..n {
            let v = (-gamma * util::sq_dist(x.row(i), x.row(j))).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(KernelMatrix { entries: k, gamma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// N×k, one unit eigenvector per column.
    pub eigenvectors: Array2<f64>,
    /// Sum of the diagonal of the source matrix.
    pub trace: f64,
}

impl EigenBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, f64> {
        self.eigenvectors.column(i)
    }
}

pub fn eigen_decompose(kernel: &KernelMatrix, k: usize) -> Result<EigenBasis> {
    symmetric_top_k(&kernel.entries, k)
}

/// Gram–Schmidt (two passes) of `v` against the first `upto` columns of `q`.
fn orthogonalize(v: &mut Array1<f64>, q: &Array2<f64>, upto: usize) {
    for _ in 0..2 {
        for j in 0..upto {
            let u = q.column(j);
            let c = u.dot(v);
            v.scaled_add(-c, &u);
        }
    }
}

/// Orthonormalizes the columns of `y` in place. Columns that collapse (the
/// range of the matrix is exhausted) are replaced by seeded random directions.
fn orthonormalize(y: &mut Array2<f64>, scale: f64, stream: &mut u64) -> Result<()> {
    let (n, m) = y.dim();
    for j in 0..m {
        let mut v = y.column(j).to_owned();
        orthogonalize(&mut v, y, j);
        let mut norm = v.dot(&v).sqrt();
        let mut tries = 0;
        while norm <= 1e-12 * scale.max(1.0) {
            if tries == 8 {
                return Err(Error::Numerical(
                    "could not complete an orthonormal basis".into(),
                ));
            }
            *stream += 1;
            let mut rng = util::rng(util::derive_seed(0xe16e, *stream));
            v = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
            orthogonalize(&mut v, y, j);
            norm = v.dot(&v).sqrt();
            tries += 1;
        }
        y.column_mut(j).assign(&(v / norm));
    }
    Ok(())
}

/// Cyclic Jacobi eigen-solver for a small symmetric matrix. Returns
/// eigenvalues descending and eigenvectors as columns.
pub fn jacobi_eigen(h: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let m = h.nrows();
    let mut a = h.clone();
    let mut v = Array2::<f64>::eye(m);
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..100 {
        let off: f64 = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..m {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Top-k eigenpairs of a symmetric positive semidefinite matrix by block
/// power iteration with a Rayleigh–Ritz step each round. A few extra columns
/// speed up convergence of the k-th pair; with k = N one round is exact.
pub fn symmetric_top_k(a: &Array2<f64>, k: usize) -> Result<EigenBasis> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Contract(format!(
            "matrix is {}x{}, not square",
            n,
            a.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k must be in 1..={n}, got {k}")));
    }
    let trace = a.diag().sum();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = (k + k.clamp(2, 8)).min(n);
    let mut stream = 0u64;
    let mut rng = util::rng(util::derive_seed(0xe16e, 0));
    let mut q = Array2::from_shape_fn((n, m), |(_, j)| {
        if j == 0 {
            1.0 / (n as f64).sqrt()
        } else {
            rng.random::<f64>() - 0.5
        }
    });
    orthonormalize(&mut q, 1.0, &mut stream)?;
    let mut worst = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let y = a.dot(&q);
        let mut h = q.t().dot(&y);
        h = (&h + &h.t()) * 0.5;
        let (theta, w) = jacobi_eigen(&h);
        let v = q.dot(&w);
        let av = y.dot(&w);
        let tol = RESIDUAL_TOL * theta[0].abs().max(f64::MIN_POSITIVE);
        worst = (0..k)
            .map(|i| {
                let r = &av.column(i) - &(theta[i] * &v.column(i));
                r.dot(&r).sqrt()
            })
            .fold(0.0, f64::max);
        if worst <= tol {
            return Ok(EigenBasis {
                eigenvalues: theta[..k].to_vec(),
                eigenvectors: v.slice(ndarray::s![.., ..k]).to_owned(),
                trace,
            });
        }
        q = av;
        orthonormalize(&mut q, scale, &mut stream)?;
    }
    Err(Error::Numerical(format!(
        "top {k} eigenpairs did not converge in {MAX_ITERATIONS} iterations (residual {worst:e})"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressWeights {
    pub w: Vec<f64>,
    pub source_component: usize,
}

/// Orients a vector so its entries sum positive; on a zero sum the first
/// nonzero entry is made positive.
pub fn fix_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let flip = if sum.abs() > 1e-10 * l1 {
        sum < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn stress_weights(basis: &EigenBasis, component: usize) -> Result<StressWeights> {
    if component >= basis.k() {
        return Err(Error::Parameter(format!(
            "component {component} not in basis of size {}",
            basis.k()
        )));
    }
    let mut w = basis.vector(component).to_vec();
    fix_sign(&mut w);
    Ok(StressWeights {
        w,
        source_component: component,
    })
}

pub fn explained_variance_ratio(basis: &EigenBasis) -> Vec<f64> {
    basis
        .eigenvalues
        .iter()
        .map(|l| (l / basis.trace).clamp(0.0, 1.0))
        .collect()
}

pub fn weight_ndre_correlation(weights: &StressWeights, dataset: &Dataset) -> Result<f64> {
    if weights.w.len() != dataset.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} series",
            weights.w.len(),
            dataset.len()
        )));
    }
    util::pearson(&weights.w, &dataset.mean_ndre())
}

/// Everything the eigen step produces for one dataset.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub gamma: f64,
    pub basis: EigenBasis,
    pub weights: StressWeights,
    pub explained: Vec<f64>,
    pub correlation: f64,
}

pub fn analyze(
    dataset: &Dataset,
    gamma: GammaPolicy,
    k: usize,
    component: usize,
) -> Result<SpectralSummary> {
    let x = dataset.matrix();
    let g = gamma.resolve(&x)?;
    let kernel = rbf_from_rows(&x, g)?;
    let basis = eigen_decompose(&kernel, k.min(dataset.len()).max(component + 1))?;
    let weights = stress_weights(&basis, component)?;
    let explained = explained_variance_ratio(&basis);
    let correlation = weight_ndre_correlation(&weights, dataset).unwrap_or(f64::NAN);
    Ok(SpectralSummary {
        gamma: g,
        basis,
        weights,
        explained,
        correlation,
    })
}

/// Frobenius norm of `A − Σ λ v vᵀ` relative to ‖A‖.
pub fn reconstruction_error(a: &Array2<f64>, basis: &EigenBasis) -> f64 {
    let mut r = a.clone();
    for (i, l) in basis.eigenvalues.iter().enumerate() {
        let v = basis.vector(i).insert_axis(Axis(1));
        r -= &(*l * v.dot(&v.t()));
    }
    (r.iter().map(|x| x * x).sum::<f64>() / a.iter().map(|x| x * x).sum::<f64>()).sqrt()
}
