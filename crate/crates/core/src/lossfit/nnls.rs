use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Result of `min ||A x - b||` subject to `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// `A^T (A x - b)`; zero on positive entries, nonnegative on zero ones.
    pub gradient: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl NnlsSolution {
    /// Largest violation of the optimality conditions.
    pub fn kkt_violation(&self) -> f64 {
        self.x
            .iter()
            .zip(self.gradient.iter())
            .map(|(&x, &g)| if x > 0.0 { g.abs() } else { (-g).max(0.0) })
            .fold(0.0, f64::max)
    }
}

/// Unconstrained least squares on a subset of columns via SVD.
fn subset_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    let tol = f64::EPSILON * (a.nrows().max(cols.len()) as f64) * svd.singular_values.max();
    svd.solve(b, tol).expect("U and V were computed")
}

/// Lawson-Hanson active-set NNLS. Columns are scaled to unit norm
/// internally; all-zero columns get a zero coefficient.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has {} rows, matrix has {m}",
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite entries in least-squares problem".into(),
        ));
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut scaled = a.clone();
    for (j, &c) in norms.iter().enumerate() {
        if c > 0.0 {
            scaled.column_mut(j).unscale_mut(c);
        }
    }
    let usable: Vec<bool> = norms.iter().map(|&c| c > 0.0).collect();
    let tol = 10.0 * f64::EPSILON * (m.max(n) as f64) * b.norm().max(f64::MIN_POSITIVE);

    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;
    let max_iter = 30 * (n + 1);
    loop {
        let w = scaled.tr_mul(&(b - &scaled * &x));
        let candidate = (0..n)
            .filter(|&j| !passive[j] && usable[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NonConvergence {
                    residual: (&scaled * &x - b).norm(),
                    tolerance: tol,
                });
            }
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let s_p = subset_lstsq(&scaled, b, &cols);
            if s_p.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = s_p[k];
                }
                break;
            }
            // Step toward s until the first passive coefficient hits zero.
            let mut alpha = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    let denom = x[c] - s_p[k];
                    let a = if denom > 0.0 { x[c] / denom } else { 0.0 };
                    alpha = alpha.min(a);
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += alpha * (s_p[k] - x[c]);
                if x[c] <= tol {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }

    for (j, &c) in norms.iter().enumerate() {
        if c > 0.0 {
            x[j] /= c;
        }
    }
    let r = a * &x - b;
    let gradient = a.tr_mul(&r);
    Ok(NnlsSolution {
        residual_norm: r.norm(),
        x,
        gradient,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Best feasible stationary point over every subset of free columns.
    fn exhaustive(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let n = a.ncols();
        let mut best = b.norm();
        for mask in 1u32..(1 << n) {
            let cols: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
            let s = subset_lstsq(a, b, &cols);
            if s.iter().all(|&v| v >= 0.0) {
                let mut x = DVector::zeros(n);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = s[k];
                }
                best = best.min((a * x - b).norm());
            }
        }
        best
    }

    #[test]
    fn unconstrained_solution_when_positive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = nnls(&a, &b).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
        assert!(s.residual_norm < 1e-12);
    }

    #[test]
    fn negative_direction_clamps_to_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let s = nnls(&a, &b).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
        assert!(s.gradient[0] > 0.0);
    }

    #[test]
    fn zero_column_gets_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let s = nnls(&a, &b).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_terminate() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 3.0, 3.0]);
        let s = nnls(&a, &b).unwrap();
        assert!(s.residual_norm < 1e-12);
        assert!(s.kkt_violation() < 1e-10);
    }

    #[test]
    fn badly_scaled_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1e5, 1.0, 3e5, 1.0, 7e5, 1.0]);
        let truth = [1.6e-11, 3.3e-7];
        let b = DVector::from_iterator(3, (0..3).map(|i| a[(i, 0)] * truth[0] + truth[1]));
        let s = nnls(&a, &b).unwrap();
        assert!((s.x[0] / truth[0] - 1.0).abs() < 1e-9);
        assert!((s.x[1] / truth[1] - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(
            m in 1usize..7,
            n in 1usize..4,
            seed in prop::collection::vec(-1.0f64..1.0, 7 * 3 + 7),
        ) {
            let a = DMatrix::from_fn(m, n, |i, j| seed[i * 3 + j]);
            let b = DVector::from_fn(m, |i, _| seed[21 + i]);
            let s = nnls(&a, &b).unwrap();
            prop_assert!(s.x.iter().all(|&v| v >= 0.0));
            prop_assert!(s.kkt_violation() < 1e-10, "kkt {}", s.kkt_violation());
            prop_assert!((s.residual_norm - exhaustive(&a, &b)).abs() < 1e-10);
        }
    }
}
