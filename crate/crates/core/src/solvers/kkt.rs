//! Dense equality-constrained least squares through the KKT system. Only for
//! tests and small instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RowWeight};

/// Minimizes `sum_finite w_i (F_i y - g_i)^2` subject to `F_c y = g_c`.
///
/// Redundant constraint rows are reduced to an orthonormal basis of their row
/// space first; rows outside that space must be consistent.
pub fn kkt_solve_oracle(f: &Matrix, g: &[f64], weights: &[RowWeight]) -> Result<Vec<f64>> {
    let (rows, n) = (f.rows(), f.cols());
    if g.len() != rows || weights.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{rows} rows, {} rhs entries, {} weights",
            g.len(),
            weights.len()
        )));
    }
    for w in weights {
        w.validate()?;
    }
    let row = |i: usize| DVector::from_column_slice(f.row(i));

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut cons = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        match w {
            RowWeight::Finite(w) => {
                let r = row(i);
                h += &r * r.transpose() * *w;
                rhs += r * (*w * g[i]);
            }
            RowWeight::Constraint => cons.push(i),
        }
    }

    // Constraint row space: the eigenvectors of C C' with non-negligible
    // eigenvalues span it through C'u. An orthonormal basis Q of that span
    // comes from a QR of C'U, and the targets solve min |C Q y - g_c|.
    // nalgebra's SVD is avoided: it loses accuracy on some rank-deficient
    // inputs (a row that is a scaled copy of another, for one).
    let (basis, targets) = if cons.is_empty() {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    } else {
        let c = DMatrix::from_fn(cons.len(), n, |i, j| f[(cons[i], j)]);
        let gc = DVector::from_iterator(cons.len(), cons.iter().map(|&i| g[i]));
        let eig = (&c * c.transpose()).symmetric_eigen();
        let lmax = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let keep: Vec<usize> = (0..cons.len()).filter(|&k| eig.eigenvalues[k] > 1e-14 * lmax).collect();
        let q = (c.transpose() * eig.eigenvectors.select_columns(&keep)).qr().q();
        let m = (&c * &q).qr();
        let targets = m
            .r()
            .solve_upper_triangular(&(m.q().transpose() * &gc))
            .ok_or(Error::SingularKkt)?;
        let basis = q.transpose();
        // consistency: projection of g_c onto the column space must reproduce it
        let fitted = &c * (basis.transpose() * &targets);
        let residual = (&fitted - &gc).amax();
        if residual > 1e-9 * gc.amax().max(1.0) {
            return Err(Error::InfeasibleConstraint { residual });
        }
        (basis, targets)
    };

    let k = basis.nrows();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    kkt.view_mut((n, 0), (k, n)).copy_from(&basis);
    kkt.view_mut((0, n), (n, k)).copy_from(&basis.transpose());
    let mut b = DVector::zeros(n + k);
    b.rows_mut(0, n).copy_from(&rhs);
    b.rows_mut(n, k).copy_from(&targets);

    let scale = kkt.amax().max(1.0);
    let sol = kkt.clone().full_piv_lu().solve(&b).ok_or(Error::SingularKkt)?;
    let check = (&kkt * &sol - &b).amax();
    if !sol.iter().all(|v| v.is_finite()) || check > 1e-8 * scale * b.amax().max(1.0) {
        return Err(Error::SingularKkt);
    }
    // the reduced Hessian must be nonsingular for a unique minimizer
    let svd = kkt.singular_values();
    if svd.min() <= 1e-13 * svd.max() {
        return Err(Error::SingularKkt);
    }
    Ok(sol.rows(0, n).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_constraint() {
        let f = Matrix::from_rows(&[&[1.0]]);
        let y = kkt_solve_oracle(&f, &[3.0], &[RowWeight::Constraint]).unwrap();
        assert_abs_diff_eq!(y[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fully_constrained_pair() {
        // columns (y, s): cost (2y)^2, y - 3s = 0, s = 1
        let f = Matrix::from_rows(&[&[2.0, 0.0], &[1.0, -3.0], &[0.0, 1.0]]);
        let w = [RowWeight::Finite(1.0), RowWeight::Constraint, RowWeight::Constraint];
        let y = kkt_solve_oracle(&f, &[0.0, 0.0, 1.0], &w).unwrap();
        assert_abs_diff_eq!(y[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn redundant_constraints_are_fine() {
        let f = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let y = kkt_solve_oracle(&f, &[1.5, 3.0], &[RowWeight::Constraint, RowWeight::Constraint]).unwrap();
        assert_abs_diff_eq!(y[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_constraints() {
        let f = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let r = kkt_solve_oracle(&f, &[1.0, 2.0], &[RowWeight::Constraint, RowWeight::Constraint]);
        assert!(matches!(r, Err(Error::InfeasibleConstraint { .. })));
    }

    #[test]
    fn unbounded_direction_is_singular() {
        let f = Matrix::from_rows(&[&[1.0, 0.0]]);
        assert_eq!(kkt_solve_oracle(&f, &[1.0], &[RowWeight::Finite(1.0)]), Err(Error::SingularKkt));
    }

    #[test]
    fn wide_redundant_constraints() {
        // two copies of a 2-row block over 5 columns plus one more row
        let a = [[0.0136, 0.0, 0.0, -0.456, 0.118], [-0.642, 0.0, 0.0, 0.0349, 0.404]];
        let truth = [0.3, -1.0, 2.0, 0.7, -0.4];
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for s in [1.0, 1.2054] {
            rows.extend(a.iter().map(|r| r.iter().map(|v| v * s).collect()));
        }
        rows.push(vec![0.0, 0.5, 0.78, 0.0, 0.0]);
        let g: Vec<f64> = rows.iter().map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum()).collect();
        let mut all_g = g.clone();
        let mut w = vec![RowWeight::Constraint; rows.len()];
        // unit priors keep the minimizer unique
        let mut full: Vec<Vec<f64>> = rows.clone();
        for j in 0..5 {
            let mut e = vec![0.0; 5];
            e[j] = 1.0;
            full.push(e);
            all_g.push(0.0);
            w.push(RowWeight::Finite(1.0));
        }
        let refs: Vec<&[f64]> = full.iter().map(Vec::as_slice).collect();
        let f = Matrix::from_rows(&refs);
        let y = kkt_solve_oracle(&f, &all_g, &w).unwrap();
        for (r, gi) in rows.iter().zip(&g) {
            let lhs: f64 = r.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(lhs, gi, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_average() {
        let f = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let y = kkt_solve_oracle(&f, &[0.0, 4.0], &[RowWeight::Finite(1.0), RowWeight::Finite(3.0)]).unwrap();
        assert_abs_diff_eq!(y[0], 3.0, epsilon = 1e-12);
    }
}
