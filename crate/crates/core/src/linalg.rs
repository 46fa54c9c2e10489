//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Smallest eigenvalue of the symmetric part `(M + Mᵀ)/2`.
pub fn sym_min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn sym_max_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Solves `a x = b`, rejecting matrices whose smallest singular value falls
/// below `rel_tol` times the largest one.
pub fn solve_checked(a: &Mat, b: &Vector, rel_tol: f64) -> Result<Vector> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Contract(format!(
            "solve: {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(Vector::zeros(0));
    }
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > rel_tol * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::numeric(format!(
            "singular system (sigma_min = {smin:.3e}, sigma_max = {smax:.3e})"
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::numeric("LU solve failed"))
}

/// Minimum-norm solution of `a x = b` through the SVD pseudo-inverse.
///
/// Fails when `b` has a component outside the range of `a` larger than
/// `consistency_tol * (1 + |b|)`.
pub fn pinv_solve(a: &Mat, b: &Vector, consistency_tol: f64) -> Result<Vector> {
    if a.nrows() == 0 {
        return Ok(Vector::zeros(a.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-10 * (a.nrows().max(a.ncols()) as f64);
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::numeric(format!("pseudo-inverse failed: {e}")))?;
    let residual = (a * &x - b).norm();
    if residual > consistency_tol * (1.0 + b.norm()) {
        return Err(Error::numeric(format!(
            "inconsistent singular system: residual {residual:.3e} after pseudo-inverse"
        )));
    }
    Ok(x)
}

/// Boolean matrix product on adjacency patterns.
fn bool_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut out = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    out[i][j] |= b[k][j];
                }
            }
        }
    }
    out
}

/// Whether every state reaches every other state through positive entries.
pub fn is_irreducible(p: &Mat) -> bool {
    let n = p.nrows();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if p[(i, j)] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Primitivity test: some power of the support pattern is all-positive.
/// Wielandt's bound `(n-1)^2 + 1` caps the exponent.
pub fn is_primitive(p: &Mat) -> bool {
    let n = p.nrows();
    if n == 0 {
        return false;
    }
    let pattern: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| p[(i, j)] > 0.0).collect())
        .collect();
    let wielandt = (n - 1) * (n - 1) + 1;
    // Square until the exponent covers the bound; positivity is monotone in
    // the exponent once reached for primitive matrices.
    let mut power = pattern.clone();
    let mut exp = 1usize;
    while exp < wielandt {
        power = bool_mul(&power, &power);
        exp *= 2;
    }
    power.iter().all(|row| row.iter().all(|&x| x))
}

pub fn outer(a: &Vector, b: &Vector) -> Mat {
    a * b.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitivity_classifies_small_chains() {
        let identity = Mat::identity(2, 2);
        assert!(!is_irreducible(&identity));
        assert!(!is_primitive(&identity));

        let swap = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(is_irreducible(&swap));
        assert!(!is_primitive(&swap));

        let lazy = Mat::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        assert!(is_primitive(&lazy));
    }

    #[test]
    fn wielandt_extremal_matrix_is_primitive() {
        // Cycle 0->1->2->0 plus shortcut 2->1: exponent (n-1)^2+1 = 5.
        let mut p = Mat::zeros(3, 3);
        p[(0, 1)] = 1.0;
        p[(1, 2)] = 1.0;
        p[(2, 0)] = 0.5;
        p[(2, 1)] = 0.5;
        assert!(is_primitive(&p));
    }

    #[test]
    fn pinv_rejects_inconsistent_rhs() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let good = Vector::from_vec(vec![2.0, 0.0]);
        let x = pinv_solve(&a, &good, 1e-9).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        let bad = Vector::from_vec(vec![2.0, 1.0]);
        assert!(pinv_solve(&a, &bad, 1e-9).is_err());
    }

    #[test]
    fn solve_checked_rejects_singular() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(solve_checked(&a, &Vector::from_vec(vec![1.0, 1.0]), 1e-12).is_err());
    }
}
