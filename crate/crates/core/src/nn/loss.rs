use super::dense::dot;
use crate::error::{shape_err, Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inner-product projection head. Returns the raw logit.
pub fn proj_head(t: &[f64], z: &[f64]) -> Result<f64> {
    if t.len() != z.len() {
        return Err(shape_err(
            "proj_head",
            format!("token widths {} and {}", t.len(), z.len()),
        ));
    }
    Ok(dot(t, z))
}

/// Binary cross-entropy on a logit. Returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits(logit: f64, target: u8) -> Result<(f64, f64)> {
    if !logit.is_finite() {
        return Err(Error::NonFinite(format!("logit {logit}")));
    }
    let y = f64::from(target.min(1));
    // softplus(x) - y*x, with softplus(x) = max(x,0) + ln(1 + e^{-|x|})
    let loss = logit.max(0.0) - y * logit + (-logit.abs()).exp().ln_1p();
    Ok((loss, sigmoid(logit) - y))
}

/// Softmax cross-entropy over `logits` for class `target`.
/// Returns `(loss, dloss/dlogits)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class {target} with {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn head_examples() {
        assert_eq!(proj_head(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(proj_head(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(proj_head(&[0.5, -2.0], &[2.0, 0.25]).unwrap(), 0.5);
        assert!(proj_head(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_at_zero() {
        let (l, g) = bce_with_logits(0.0, 1).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert_eq!(g, -0.5);
        let (l, g) = bce_with_logits(0.0, 0).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert_eq!(g, 0.5);
    }

    #[test]
    fn bce_saturation_and_errors() {
        assert!(bce_with_logits(30.0, 1).unwrap().0 < 1e-12);
        assert!(bce_with_logits(-30.0, 0).unwrap().0 < 1e-12);
        assert!((bce_with_logits(-800.0, 1).unwrap().0 - 800.0).abs() < 1e-9);
        assert!(bce_with_logits(f64::NAN, 1).is_err());
        assert!(bce_with_logits(f64::INFINITY, 0).is_err());
    }

    #[test]
    fn bce_gradient_matches_difference_quotient() {
        for &x in &[-3.0, -0.2, 0.7, 4.0] {
            for t in [0u8, 1] {
                let h = 1e-6;
                let fd = (bce_with_logits(x + h, t).unwrap().0 - bce_with_logits(x - h, t).unwrap().0) / (2.0 * h);
                assert!((fd - bce_with_logits(x, t).unwrap().1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_uniform() {
        let (l, g) = softmax_xent(&[0.0, 0.0], 1).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        assert!(softmax_xent(&[0.0, 0.0], 2).is_err());
    }
}
