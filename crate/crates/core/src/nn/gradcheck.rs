use super::dense::Dense;

/// Central differences `(f(x+h·e) − f(x−h·e)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Dense) -> f64, x: &Dense, h: f64) -> Dense {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Dense::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest `|a − n| / max(1, |a|)` over paired entries.
pub fn max_relative_error(analytic: &Dense, numeric: &Dense) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Dense::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
        let g = finite_diff_grad(|m| m.as_slice().iter().sum(), &x, 1e-4);
        assert!(g.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn square_at_three() {
        let x = Dense::from_vec(1, 1, vec![3.0]).unwrap();
        let g = finite_diff_grad(|m| m.get(0, 0).powi(2), &x, 1e-4);
        assert!((g.get(0, 0) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Dense::from_vec(2, 1, vec![0.3, -0.1]).unwrap();
        let g = finite_diff_grad(|_| 5.0, &x, 1e-4);
        assert_eq!(g, Dense::zeros(2, 1));
    }
}
