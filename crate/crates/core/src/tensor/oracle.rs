//! Numerical oracles: central finite differences and dense determinants.
//! These never touch the tape, so they check it independently.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function,
/// `(f(x + εe_i) − f(x − εe_i)) / (2ε)` per coordinate. The step actually
/// representable in `T` is used as the denominator.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain {
            op: "finite_diff_grad",
            reason: "eps must be positive",
        });
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let up = orig + T::of(eps);
        let down = orig - T::of(eps);
        probe.data_mut()[i] = up;
        let fp = f(&probe)?;
        probe.data_mut()[i] = down;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad",
            });
        }
        out.push(T::of((fp - fm) / (up.f64() - down.f64())));
    }
    Tensor::new(x.shape(), out)
}

/// Central-difference Jacobian of a tensor-valued map; row `r` holds the
/// partial derivatives of output element `r`.
pub fn finite_diff_jacobian<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Vec<Vec<f64>>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<Vec<f64>>,
{
    let n = x.numel();
    let mut probe = x.clone();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let orig = x.data()[i];
        let up = orig + T::of(eps);
        let down = orig - T::of(eps);
        probe.data_mut()[i] = up;
        let fp = f(&probe)?;
        probe.data_mut()[i] = down;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let h = up.f64() - down.f64();
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / h)
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok((0..m)
        .map(|r| cols.iter().map(|c| c[r]).collect())
        .collect())
}

/// `log|det A|` by LU with partial pivoting. Returns `-inf` for singular input.
pub fn log_abs_det(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap_or(k);
        if a[p][k] == 0.0 {
            return f64::NEG_INFINITY;
        }
        a.swap(k, p);
        acc += a[k][k].abs().ln();
        for i in k + 1..n {
            let factor = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= factor * a[k][j];
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_of_squares() {
        let x = Tensor::<f64>::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-3).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-4);
        assert!((g.data()[1] - 4.0).abs() < 1e-4);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let x = Tensor::<f64>::new([1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|_| Ok(4.2), &x, 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_sum_of_exp_at_zero() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v.exp()).sum()), &x, 1e-3).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn non_finite_function_rejected() {
        let x = Tensor::<f64>::zeros([1, 1, 1, 1]);
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-3).is_err());
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn determinant_of_known_matrices() {
        let a = vec![vec![2.0, 0.0], vec![0.0, 3.0]];
        assert!((log_abs_det(&a) - 6f64.ln()).abs() < 1e-12);
        let b = vec![vec![0.0, 1.0], vec![-4.0, 0.0]];
        assert!((log_abs_det(&b) - 4f64.ln()).abs() < 1e-12);
        let s = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert_eq!(log_abs_det(&s), f64::NEG_INFINITY);
    }
}
