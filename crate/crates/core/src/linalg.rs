//! Small dense linear-algebra helpers shared by the filter, the bound ODEs and the NLP.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix (the input is symmetrized first).
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenpair with the smallest eigenvalue of a symmetric matrix.
pub fn min_eigenpair(m: &Matrix) -> (f64, Vector) {
    let eig = symmetrize(m).symmetric_eigen();
    let (idx, val) =
        eig.eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Number of entries in the lower triangle of an `n × n` matrix.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packs the upper triangle (row-major) of a symmetric matrix.
pub fn pack_upper(m: &Matrix, out: &mut [f64]) {
    let n = m.nrows();
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            out[idx] = m[(i, j)];
            idx += 1;
        }
    }
}

/// Rebuilds a lower-triangular factor from its row-major lower-triangle entries.
pub fn unpack_lower(n: usize, packed: &[f64]) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = packed[idx];
            idx += 1;
        }
    }
    l
}

/// Writes the row-major lower triangle of `l`.
pub fn pack_lower(l: &Matrix, out: &mut [f64]) {
    let n = l.nrows();
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            out[idx] = l[(i, j)];
            idx += 1;
        }
    }
}

/// Cholesky factor of a PSD matrix with every diagonal entry at least `floor`.
///
/// Falls back to an eigenvalue-clamped reconstruction when the plain factorization fails.
pub fn cholesky_floored(m: &Matrix, floor: f64) -> Matrix {
    let sym = symmetrize(m);
    let mut l = match sym.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let n = sym.nrows();
            let eig = sym.symmetric_eigen();
            let clamped = eig.eigenvalues.map(|v| v.max(floor * floor));
            let rebuilt =
                &eig.eigenvectors * Matrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            symmetrize(&rebuilt)
                .cholesky()
                .map(|c| c.l())
                .unwrap_or_else(|| Matrix::identity(n, n) * floor)
        }
    };
    for i in 0..l.nrows() {
        if l[(i, i)] < floor {
            l[(i, i)] = floor;
        }
    }
    l
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Pairwise summation of a slice; the result depends only on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_round_trip() {
        let l = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 2.0, 3.0, 0.0, 4.0, 5.0, 6.0]);
        let mut packed = vec![0.0; tri_len(3)];
        pack_lower(&l, &mut packed);
        assert_eq!(packed, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unpack_lower(3, &packed), l);
    }

    #[test]
    fn floored_cholesky_repairs_indefinite_input() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let l = cholesky_floored(&m, 1e-8);
        assert!(l[(1, 1)] >= 1e-8);
        assert!((l[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_for_small_inputs() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 4950.0);
    }
}
