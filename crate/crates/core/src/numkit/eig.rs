use super::{orthonormalize_columns, Matrix};
use crate::error::{CoreError, Result};

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back in descending order. Each eigenvector is signed so
/// that its largest-magnitude component is positive (first such index on
/// ties), which makes downstream projections reproducible.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let (n, m) = a.shape();
    if n != m {
        return Err(CoreError::Dimension(format!(
            "eigendecomposition needs a square matrix, got {n}x{m}"
        )));
    }
    let scale = a.max_abs();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                return Err(CoreError::Shape(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    // work on the symmetrized copy
    let mut w = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let frob: f64 = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();

    let tiny = f64::EPSILON * 1e-3 * frob;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                let diag = (w[(p, p)] * w[(q, q)]).abs().sqrt();
                if apq.abs() <= tiny || apq.abs() <= 0.5 * f64::EPSILON * diag {
                    w[(p, q)] = 0.0;
                    w[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let tau = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| w[(y, y)].total_cmp(&w[(x, x)]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&i| w[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for c in 0..n {
        fix_sign(&mut vectors, c);
    }
    Ok(SymEig { values, vectors })
}

/// Applies the Jacobi rotation `J(p, q, θ)` as `w ← Jᵀ w J`, `v ← v J`.
fn rotate(w: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = w.rows();
    for k in 0..n {
        let wkp = w[(k, p)];
        let wkq = w[(k, q)];
        w[(k, p)] = c * wkp - s * wkq;
        w[(k, q)] = s * wkp + c * wkq;
    }
    for k in 0..n {
        let wpk = w[(p, k)];
        let wqk = w[(q, k)];
        w[(p, k)] = c * wpk - s * wqk;
        w[(q, k)] = s * wpk + c * wqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn fix_sign(m: &mut Matrix, col: usize) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for r in 0..m.rows() {
        let a = m[(r, col)].abs();
        if a > best_abs {
            best_abs = a;
            best = r;
        }
    }
    if m[(best, col)] < 0.0 {
        for r in 0..m.rows() {
            m[(r, col)] = -m[(r, col)];
        }
    }
}

/// Top-`k` eigenpairs of the uncentered covariance `(1/n) Σ g_j g_jᵀ` of the
/// `n` columns of `gradients` (a `D × n` matrix), computed through the
/// `n × n` Gram matrix so the `D × D` covariance is never formed.
///
/// Returns a `D × k` matrix with orthonormal columns and the `k` leading
/// eigenvalues in descending order.
pub fn gram_topk(gradients: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let (p, values, _) = gram_topk_with_spectrum(gradients, k)?;
    Ok((p, values))
}

/// [`gram_topk`] that also returns the full Gram spectrum (all `n`
/// eigenvalues, descending, unclipped).
pub fn gram_topk_with_spectrum(gradients: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let (d, n) = gradients.shape();
    if k == 0 || k > n {
        return Err(CoreError::Config(format!(
            "subspace dimension {k} must be in 1..={n}"
        )));
    }
    if n > d {
        return Err(CoreError::Config(format!(
            "{n} gradient samples exceed the parameter dimension {d}"
        )));
    }
    if !gradients.is_finite() {
        return Err(CoreError::Shape("non-finite gradient entries".into()));
    }
    if gradients.max_abs() == 0.0 {
        return Err(CoreError::DegenerateSpectrum("all gradients are zero".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut gram = gradients.tr_matmul(gradients)?;
    for x in 0..n {
        for y in 0..n {
            gram[(x, y)] *= inv_n;
        }
    }
    // exact symmetry for the Jacobi check
    for x in 0..n {
        for y in 0..x {
            let s = 0.5 * (gram[(x, y)] + gram[(y, x)]);
            gram[(x, y)] = s;
            gram[(y, x)] = s;
        }
    }
    let eig = sym_eig(&gram)?;
    let coeffs = eig.vectors.leading_columns(k);
    let mut directions = gradients.matmul(&coeffs)?;
    let lead = eig.values[0].max(0.0);
    let mut values = Vec::with_capacity(k);
    for j in 0..k {
        let lambda = eig.values[j].max(0.0);
        values.push(lambda);
        let norm = directions.col_norm(j);
        // directions for numerically-null eigenvalues are rebuilt below
        if lambda <= 1e-14 * lead || norm == 0.0 {
            for r in 0..d {
                directions[(r, j)] = 0.0;
            }
        }
    }
    orthonormalize_columns(&mut directions, 1e-12);
    for j in 0..k {
        fix_sign(&mut directions, j);
    }
    Ok((directions, values, eig.values))
}
