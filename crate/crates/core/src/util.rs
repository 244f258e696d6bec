//! Small numeric helpers shared across modules.

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// splitmix64 finalizer; decorrelates derived seeds.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream seed for `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(mix64(base) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::MetricUndefined(
            "correlation needs at least 3 points".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::MetricUndefined(
            "correlation undefined for zero-variance input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Row-wise L2 normalization. Zero rows stay zero.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Column-mean matrix: centered copy and the mean vector.
pub fn center_columns(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let mut c = x.clone();
    for mut row in c.rows_mut() {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    (c, means)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_value() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.5]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12);
    }

    #[test]
    fn pearson_sign_and_degenerate() {
        let x = [0.2, 0.5, 0.9, 0.4];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&x, &[1.0; 4]),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&s, 0.5), 2.0);
        assert!((percentile_sorted(&s, 0.125) - 0.5).abs() < 1e-15);
    }
}
