//! Small dense solvers for the normal equations of the restricted fit.

use nalgebra::{DMatrix, DVector};

/// Outcome of a Cholesky factorisation of a symmetrically scaled Gram matrix.
pub(crate) enum SpdSolve {
    Solved(DVector<f64>),
    /// Columns whose scaled pivot collapsed below tolerance.
    Deficient(Vec<usize>),
}

const PIVOT_TOL: f64 = 1e-11;

/// Solves `gram * x = rhs` for a symmetric positive (semi)definite matrix.
///
/// The matrix is Jacobi-scaled to unit diagonal before factorisation so the
/// pivot tolerance is relative. One step of iterative refinement is applied.
pub(crate) fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> SpdSolve {
    let k = gram.nrows();
    let mut deficient = Vec::new();
    let scale: Vec<f64> = (0..k)
        .map(|i| {
            let d = gram[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for (i, s) in scale.iter().enumerate() {
        if *s == 0.0 {
            deficient.push(i);
        }
    }
    if !deficient.is_empty() {
        return SpdSolve::Deficient(deficient);
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] * scale[i] * scale[j]);

    // Lower-triangular Cholesky factor, row by row.
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = scaled[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= PIVOT_TOL {
            deficient.push(j);
            // keep factoring so every collapsed pivot gets reported
            l[(j, j)] = 1.0;
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..k {
            let mut s = scaled[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    if !deficient.is_empty() {
        return SpdSolve::Deficient(deficient);
    }

    let solve_scaled = |b: &DVector<f64>| -> DVector<f64> {
        // forward then backward substitution
        let mut y = DVector::<f64>::zeros(k);
        for i in 0..k {
            let mut s = b[i];
            for p in 0..i {
                s -= l[(i, p)] * y[p];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = DVector::<f64>::zeros(k);
        for i in (0..k).rev() {
            let mut s = y[i];
            for p in (i + 1)..k {
                s -= l[(p, i)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        x
    };

    let b_scaled = DVector::from_fn(k, |i, _| rhs[i] * scale[i]);
    let mut z = solve_scaled(&b_scaled);
    let resid = &b_scaled - &scaled * &z;
    z += solve_scaled(&resid);
    SpdSolve::Solved(DVector::from_fn(k, |i, _| z[i] * scale[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x;
        match solve_spd(&a, &b) {
            SpdSolve::Solved(got) => assert!((got - x).amax() < 1e-13),
            SpdSolve::Deficient(_) => panic!("unexpected deficiency"),
        }
    }

    #[test]
    fn reports_dependent_column() {
        // third column = first + second
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 3.0],
        );
        let g = x.transpose() * &x;
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        match solve_spd(&g, &b) {
            SpdSolve::Deficient(cols) => assert_eq!(cols, vec![2]),
            SpdSolve::Solved(_) => panic!("expected deficiency"),
        }
    }
}
