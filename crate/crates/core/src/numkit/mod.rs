//! Dense linear algebra, seeded random streams, Sobol points and scalar
//! Gaussian helpers shared by the rest of the crate.

mod eig;
mod matrix;
mod normal;
mod rng;
mod sobol;

pub use eig::{gram_topk, gram_topk_with_spectrum, sym_eig, SymEig};
pub use matrix::Matrix;
pub use normal::{std_normal_cdf, std_normal_pdf};
pub use rng::SeededRng;
pub use sobol::{sobol, SOBOL_MAX_DIM};

/// Modified Gram-Schmidt on the columns of `m`, in place. Columns whose
/// residual norm falls below `tol` are replaced by the first coordinate axis
/// that still has a residual, so the result always has orthonormal columns.
pub fn orthonormalize_columns(m: &mut Matrix, tol: f64) {
    let (rows, cols) = (m.rows(), m.cols());
    let mut axis = 0usize;
    for j in 0..cols {
        // two passes of MGS keep orthogonality at machine precision
        for _ in 0..2 {
            for p in 0..j {
                let dot: f64 = (0..rows).map(|r| m[(r, p)] * m[(r, j)]).sum();
                for r in 0..rows {
                    let v = m[(r, p)];
                    m[(r, j)] -= dot * v;
                }
            }
        }
        let mut norm = m.col_norm(j);
        while norm <= tol && axis < rows {
            for r in 0..rows {
                m[(r, j)] = if r == axis { 1.0 } else { 0.0 };
            }
            axis += 1;
            for _ in 0..2 {
                for p in 0..j {
                    let dot: f64 = (0..rows).map(|r| m[(r, p)] * m[(r, j)]).sum();
                    for r in 0..rows {
                        let v = m[(r, p)];
                        m[(r, j)] -= dot * v;
                    }
                }
            }
            norm = m.col_norm(j);
        }
        for r in 0..rows {
            m[(r, j)] /= norm;
        }
    }
}
