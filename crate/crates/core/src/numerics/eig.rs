//! Symmetric eigendecomposition: cyclic Jacobi for dense matrices and
//! Lanczos with full reorthogonalization for sparse ones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::mat::{dot, norm, Mat};
use crate::numerics::sparse::SparseSym;

/// Top-m eigenpairs, values sorted by descending |λ|; vectors are the
/// orthonormal columns of `vectors`, aligned with `values`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenPairs {
    pub fn vector(&self, m: usize) -> Vec<f64> {
        self.vectors.col(m)
    }
}

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Full Jacobi eigendecomposition of a dense symmetric matrix.
/// Returns unsorted (diag, V) with A·V = V·diag.
fn jacobi(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows;
    let mut a = a.clone();
    let mut v = Mat::identity(n);
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.at(p, q) * a.at(p, q);
            }
        }
        if off.sqrt() <= 1e-14 * fro {
            let diag = (0..n).map(|i| a.at(i, i)).collect();
            return Ok((diag, v));
        }

        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::numeric(format!(
        "Jacobi eigendecomposition did not converge in {JACOBI_MAX_SWEEPS} sweeps (n={n})"
    )))
}

/// Flip each column so its largest-magnitude entry is positive
/// (first occurrence wins on magnitude ties).
fn fix_signs(vectors: &mut Mat) {
    for c in 0..vectors.cols {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for r in 0..vectors.rows {
            let v = vectors.at(r, c).abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if vectors.at(best, c) < 0.0 {
            for r in 0..vectors.rows {
                let v = vectors.at(r, c);
                vectors.set(r, c, -v);
            }
        }
    }
}

/// Order eigenpairs by descending |λ|, ties by descending λ then position.
fn order_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(values[b].total_cmp(&values[a]))
            .then(a.cmp(&b))
    });
    idx
}

/// Top-m eigenpairs of a dense symmetric matrix by |λ|.
pub fn eig_sym_dense(a: &Mat, m: usize) -> Result<EigenPairs> {
    if a.rows != a.cols {
        return Err(Error::contract("eig_sym requires a square matrix"));
    }
    if m > a.rows {
        return Err(Error::param(format!(
            "requested {m} eigenpairs from a {}x{} matrix",
            a.rows, a.rows
        )));
    }
    if a.asymmetry() > SYMMETRY_TOL {
        return Err(Error::contract(format!(
            "matrix is not symmetric (max |A - A^T| = {:.3e})",
            a.asymmetry()
        )));
    }

    let (diag, v) = jacobi(a)?;
    let order = order_by_magnitude(&diag);
    let n = a.rows;
    let mut values = Vec::with_capacity(m);
    let mut vectors = Mat::zeros(n, m);
    for (out_c, &src_c) in order.iter().take(m).enumerate() {
        values.push(diag[src_c]);
        for r in 0..n {
            vectors.set(r, out_c, v.at(r, src_c));
        }
    }
    fix_signs(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

fn seeded_unit_vector(n: usize, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_E16E ^ salt);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nv = norm(&v);
    if nv > 0.0 {
        for x in v.iter_mut() {
            *x /= nv;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt keep the basis orthonormal to
    // machine precision
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            for (wi, qi) in w.iter_mut().zip(q.iter()) {
                *wi -= c * qi;
            }
        }
    }
}

/// Top-m eigenpairs of a sparse symmetric matrix by |λ|, via Lanczos with
/// full reorthogonalization and deterministic seeded start vectors. Fails
/// (rather than truncating) if residuals do not reach tolerance within
/// 10·n matrix-vector products.
pub fn eig_sym_sparse(a: &SparseSym, m: usize) -> Result<EigenPairs> {
    let n = a.n;
    if m > n {
        return Err(Error::param(format!(
            "requested {m} eigenpairs from a {n}x{n} matrix"
        )));
    }
    if m == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: Mat::zeros(n, 0),
        });
    }

    let scale = a.frobenius_norm().max(1.0);
    let res_tol = 1e-10 * scale;
    let max_matvecs = 10 * n.max(1);
    let mut matvecs = 0usize;
    let mut restarts = 0u64;

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut q = seeded_unit_vector(n, 0);
    basis.push(q.clone());
    // tridiagonal entries are kept only as a convergence heuristic; the
    // projected matrix is re-solved densely on the accumulated basis
    loop {
        let mut w = a.matvec(&q);
        matvecs += 1;
        orthogonalize(&mut w, &basis);
        let beta = norm(&w);

        let grown = if beta > 1e-12 * scale && basis.len() < n {
            for x in w.iter_mut() {
                *x /= beta;
            }
            basis.push(w.clone());
            q = w;
            true
        } else if basis.len() < n {
            // invariant subspace hit; restart with a fresh direction
            restarts += 1;
            let mut fresh = seeded_unit_vector(n, restarts);
            orthogonalize(&mut fresh, &basis);
            let fn_ = norm(&fresh);
            if fn_ <= 1e-12 {
                // numerically full basis
                false
            } else {
                for x in fresh.iter_mut() {
                    *x /= fn_;
                }
                basis.push(fresh.clone());
                q = fresh;
                true
            }
        } else {
            false
        };

        let k = basis.len();
        let exhausted = !grown || k >= n;
        // check convergence periodically or when the space cannot grow
        if exhausted || (k >= m && k % 8 == 0) {
            if let Some(pairs) = try_extract(a, &basis, m, res_tol, &mut matvecs)? {
                return Ok(pairs);
            }
            if exhausted {
                return Err(Error::numeric(format!(
                    "Lanczos failed to reach residual {res_tol:.3e} with an exhausted basis (n={n})"
                )));
            }
        }
        if matvecs > max_matvecs {
            return Err(Error::numeric(format!(
                "Lanczos did not converge within {max_matvecs} matrix-vector products (n={n})"
            )));
        }
    }
}

/// Rayleigh-Ritz on the current basis; returns pairs if the top-m residuals
/// meet tolerance.
fn try_extract(
    a: &SparseSym,
    basis: &[Vec<f64>],
    m: usize,
    res_tol: f64,
    matvecs: &mut usize,
) -> Result<Option<EigenPairs>> {
    let k = basis.len();
    if k < m {
        return Ok(None);
    }
    let n = a.n;

    // T = Q^T A Q on the accumulated basis
    let mut aq: Vec<Vec<f64>> = Vec::with_capacity(k);
    for qv in basis {
        aq.push(a.matvec(qv));
        *matvecs += 1;
    }
    let mut t = Mat::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = dot(&basis[i], &aq[j]);
            t.set(i, j, v);
            t.set(j, i, v);
        }
    }
    let (tvals, tvecs) = jacobi(&t)?;
    let order = order_by_magnitude(&tvals);

    let mut values = Vec::with_capacity(m);
    let mut vectors = Mat::zeros(n, m);
    for (out_c, &src) in order.iter().take(m).enumerate() {
        let lambda = tvals[src];
        let mut v = vec![0.0; n];
        for (i, qv) in basis.iter().enumerate() {
            let c = tvecs.at(i, src);
            for (vi, qi) in v.iter_mut().zip(qv.iter()) {
                *vi += c * qi;
            }
        }
        let nv = norm(&v);
        if nv == 0.0 {
            return Ok(None);
        }
        for x in v.iter_mut() {
            *x /= nv;
        }
        // exact residual ‖Av − λv‖
        let av = a.matvec(&v);
        *matvecs += 1;
        let res: f64 = av
            .iter()
            .zip(v.iter())
            .map(|(&avi, &vi)| {
                let r = avi - lambda * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        if res > res_tol {
            return Ok(None);
        }
        values.push(lambda);
        for r in 0..n {
            vectors.set(r, out_c, v[r]);
        }
    }
    fix_signs(&mut vectors);
    Ok(Some(EigenPairs { values, vectors }))
}
