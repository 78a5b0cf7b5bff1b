use crate::error::{Error, Result};

use super::tensor::l2_norm;

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True residual `‖A·x − b‖₂` at return.
    pub residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// `apply_a(v, out)` must write `A·v` into `out`. On success the returned
/// solution satisfies `‖A·x − b‖₂ ≤ tol·max(1, ‖b‖₂)`, checked against the
/// recomputed residual rather than the recurrence.
pub fn cg_solve<F>(apply_a: F, b: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(tol > 0.0) {
        return Err(Error::Input(format!("cg tolerance must be positive, got {tol}")));
    }
    let n = b.len();
    let threshold = tol * l2_norm(b).max(1.0);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
        apply_a(x, ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        l2_norm(r)
    };

    let mut rnorm = l2_norm(&r);
    loop {
        if rnorm <= threshold {
            // Confirm against the explicit residual; restart from it if the
            // recurrence drifted.
            rnorm = true_residual(&x, &mut r, &mut ap);
            if rnorm <= threshold {
                return Ok(CgSolution { x, iterations, residual: rnorm });
            }
        }
        let mut p = r.clone();
        let mut rr = rnorm * rnorm;
        while rnorm > threshold {
            if iterations >= max_iter {
                let residual = true_residual(&x, &mut r, &mut ap);
                return Err(Error::Convergence { solver: "cg_solve", iterations, residual });
            }
            apply_a(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                let residual = true_residual(&x, &mut r, &mut ap);
                return Err(Error::Convergence { solver: "cg_solve", iterations, residual });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            let rr_next: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_next / rr;
            rr = rr_next;
            rnorm = rr.sqrt();
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_step() {
        let b = vec![1.0, -2.0, 3.5];
        let sol = cg_solve(|v, out| out.copy_from_slice(v), &b, 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, b);
    }

    #[test]
    fn diagonal_inverse() {
        let b = vec![1.0; 5];
        let sol = cg_solve(
            |v, out| {
                for i in 0..5 {
                    out[i] = (i + 1) as f64 * v[i];
                }
            },
            &b,
            1e-13,
            50,
        )
        .unwrap();
        for (i, x) in sol.x.iter().enumerate() {
            assert!((x - 1.0 / (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let sol = cg_solve(|v, out| out.copy_from_slice(v), &[0.0; 4], 1e-10, 5).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, vec![0.0; 4]);
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let b = vec![1.0; 10];
        let laplace = |v: &[f64], out: &mut [f64]| {
            for i in 0..10 {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i < 9 { v[i + 1] } else { 0.0 };
                out[i] = 2.0 * v[i] - l - r;
            }
        };
        match cg_solve(laplace, &b, 1e-14, 2) {
            Err(Error::Convergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        assert!(cg_solve(|v, o| o.copy_from_slice(v), &[1.0], 0.0, 3).is_err());
    }
}
