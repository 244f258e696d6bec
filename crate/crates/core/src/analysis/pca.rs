//! Two-component PCA of embeddings for plotting.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::spectral;
use crate::util;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// N×2 scores.
    pub coords: Array2<f64>,
    pub explained_ratio: [f64; 2],
    pub method: String,
}

/// Projects onto the top two eigenvectors of the sample covariance. Each
/// axis is oriented so its loadings sum positive.
pub fn pca_2d(z: &Array2<f64>) -> Result<Projection> {
    if z.nrows() < 2 || z.ncols() < 2 {
        return Err(Error::Contract(format!(
            "PCA needs at least 2x2 input, got {:?}",
            z.dim()
        )));
    }
    let (c, _) = util::center_columns(z);
    let cov = c.t().dot(&c) / (z.nrows() - 1) as f64;
    let basis = spectral::symmetric_top_k(&cov, 2)?;
    let mut axes = Array2::zeros((z.ncols(), 2));
    for j in 0..2 {
        let mut v = basis.vector(j).to_vec();
        spectral::fix_sign(&mut v);
        axes.column_mut(j).assign(&ndarray::Array1::from(v));
    }
    let ratio = |l: f64| {
        if basis.trace > 0.0 {
            l / basis.trace
        } else {
            0.0
        }
    };
    Ok(Projection {
        coords: c.dot(&axes),
        explained_ratio: [ratio(basis.eigenvalues[0]), ratio(basis.eigenvalues[1])],
        method: "pca".into(),
    })
}
