//! Symmetric eigensolvers used by LDA, PCA, and the Fisher-ratio metric.

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
/// `vectors` holds one eigenvector per row, each with the sign convention
/// that its first component of magnitude > 1e-12 is positive.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn fix_sign(v: &mut [f64]) {
    for &x in v.iter() {
        if x.abs() > 1e-12 {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Cyclic Jacobi rotation method. Converges to machine precision for the
/// modest dimensions used here (a few hundred at most).
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            context: "symmetric_eigen",
            expected: n,
            got: a.cols(),
        });
    }
    let mut m = a.clone();
    // symmetrize to guard against round-off in the caller
    for r in 0..n {
        for c in (r + 1)..n {
            let s = 0.5 * (m.get(r, c) + m.get(c, r));
            m.set(r, c, s);
            m.set(c, r, s);
        }
    }
    let mut v = Matrix::identity(n);
    let scale: f64 = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1.0);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m.get(r, c).abs();
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).partial_cmp(&m.get(i, i)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (row, &i) in order.iter().enumerate() {
        let mut vec_i: Vec<f64> = (0..n).map(|k| v.get(k, i)).collect();
        fix_sign(&mut vec_i);
        for (k, &x) in vec_i.iter().enumerate() {
            vectors.set(row, k, x);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower-triangular Cholesky factor of an SPD matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            context: "cholesky",
            expected: n,
            got: a.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Singular { dimension: i });
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.get(i, k) * x[k];
        }
        x[i] = sum / l.get(i, i);
    }
    x
}

fn solve_lower_transpose(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l.get(k, i) * x[k];
        }
        x[i] = sum / l.get(i, i);
    }
    x
}

/// Solves the symmetric generalized eigenproblem S_b w = λ S_w w for SPD S_w
/// by whitening: with S_w = L Lᵀ, the problem reduces to the ordinary
/// symmetric eigenproblem for L⁻¹ S_b L⁻ᵀ, and w = L⁻ᵀ u.
///
/// Returns (eigenvalues descending, eigenvectors as rows, sign-fixed).
pub fn generalized_eigen(s_b: &Matrix, s_w: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = s_w.rows();
    if s_b.rows() != n || s_b.cols() != n || s_w.cols() != n {
        return Err(Error::Shape {
            context: "generalized_eigen",
            expected: n,
            got: s_b.rows(),
        });
    }
    let l = cholesky(s_w)?;
    // M = L⁻¹ S_b L⁻ᵀ, built column by column.
    let mut m = Matrix::zeros(n, n);
    for c in 0..n {
        let col: Vec<f64> = (0..n).map(|r| s_b.get(r, c)).collect();
        let y = solve_lower(&l, &col);
        for r in 0..n {
            m.set(r, c, y[r]);
        }
    }
    let mt = m.transpose();
    let mut whitened = Matrix::zeros(n, n);
    for c in 0..n {
        let col: Vec<f64> = (0..n).map(|r| mt.get(r, c)).collect();
        let y = solve_lower(&l, &col);
        for r in 0..n {
            whitened.set(r, c, y[r]);
        }
    }
    let eig = symmetric_eigen(&whitened)?;
    let mut vectors = Matrix::zeros(n, n);
    for i in 0..n {
        let u: Vec<f64> = eig.vectors.row(i).to_vec();
        let mut w = solve_lower_transpose(&l, &u);
        fix_sign(&mut w);
        for (k, &x) in w.iter().enumerate() {
            vectors.set(i, k, x);
        }
    }
    Ok((eig.values, vectors))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its
/// eigendecomposition; eigenvalues below `rel_tol · λ_max` are dropped.
pub fn pinv_psd(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let eig = symmetric_eigen(a)?;
    let n = a.rows();
    let lmax = eig.values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * lmax.max(f64::MIN_POSITIVE);
    let mut out = Matrix::zeros(n, n);
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam <= cutoff {
            continue;
        }
        let v = eig.vectors.row(i);
        for r in 0..n {
            for c in 0..n {
                let cur = out.get(r, c);
                out.set(r, c, cur + v[r] * v[c] / lam);
            }
        }
    }
    Ok(out)
}
