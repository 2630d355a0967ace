//! Principal component analysis via eigendecomposition of the B×B sample
//! covariance matrix (bands are few hundred at most, so this beats a full
//! SVD of the n×B data matrix).

use crate::error::{Error, Result};
use crate::numerics::eig::eig_sym_dense;
use crate::numerics::mat::Mat;

#[derive(Debug, Clone)]
pub struct Pca {
    /// n×m projected coordinates, (rows - mean)·basis.
    pub scores: Mat,
    /// B×m orthonormal basis; each column's largest-magnitude entry is
    /// positive.
    pub basis: Mat,
    /// Non-increasing component variances.
    pub explained_variance: Vec<f64>,
    /// Column means of the input.
    pub mean: Vec<f64>,
}

pub fn pca(rows: &Mat, n_components: usize) -> Result<Pca> {
    let (n, b) = (rows.rows, rows.cols);
    if n < 2 {
        return Err(Error::param("pca requires at least 2 rows"));
    }
    if n_components == 0 || n_components > n.min(b) {
        return Err(Error::param(format!(
            "n_components={n_components} must lie in 1..=min(n={n}, dims={b})"
        )));
    }

    let mut mean = vec![0.0; b];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(rows.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // sample covariance, upper triangle then mirrored
    let mut cov = Mat::zeros(b, b);
    for r in 0..n {
        let row = rows.row(r);
        for i in 0..b {
            let ci = row[i] - mean[i];
            for j in i..b {
                let v = cov.at(i, j) + ci * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..b {
        for j in i..b {
            let v = cov.at(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }

    let pairs = eig_sym_dense(&cov, n_components)?;
    // covariance eigenvalues are >= 0 up to roundoff, so the |λ| ordering of
    // eig_sym_dense is the variance ordering
    let explained_variance: Vec<f64> = pairs.values.iter().map(|&v| v.max(0.0)).collect();
    let basis = pairs.vectors;

    let mut scores = Mat::zeros(n, n_components);
    for r in 0..n {
        let row = rows.row(r);
        for c in 0..n_components {
            let mut s = 0.0;
            for i in 0..b {
                s += (row[i] - mean[i]) * basis.at(i, c);
            }
            scores.set(r, c, s);
        }
    }

    Ok(Pca {
        scores,
        basis,
        explained_variance,
        mean,
    })
}
