//! Numerically stable scalar functions and the two output heads.

/// Logistic function in a branch-stable form.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Two-class probabilities of a linear head `w h + b`, `w` row-major 2 x d.
pub fn softmax_head(h: &[f64], w: &[f64], b: &[f64]) -> [f64; 2] {
    let d = h.len();
    assert_eq!(w.len(), 2 * d, "softmax head weight must be 2 x d");
    assert_eq!(b.len(), 2);
    let z0 = b[0] + dot(&w[..d], h);
    let z1 = b[1] + dot(&w[d..], h);
    // p1 = sigmoid(z1 - z0) keeps the pair summing to one to rounding
    let p1 = sigmoid(z1 - z0);
    [1.0 - p1, p1]
}

/// Probability of a single sigmoid output `sigmoid(row . h + bias)`.
pub fn sigmoid_head(h: &[f64], row: &[f64], bias: f64) -> f64 {
    assert_eq!(h.len(), row.len());
    sigmoid(bias + dot(row, h))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn softmax_head_symmetry() {
        let h = [0.3, -1.2, 4.0];
        assert_eq!(softmax_head(&h, &[0.0; 6], &[0.0; 2]), [0.5, 0.5]);
        // equal logits regardless of magnitude
        let w = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert_eq!(softmax_head(&h, &w, &[7.0, 7.0]), [0.5, 0.5]);
    }

    #[test]
    fn softmax_head_matches_exp_normalize() {
        let mut r = rng::seeded(11);
        for _ in 0..200 {
            let d = r.random_range(1..8);
            let h: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..2 * d).map(|_| r.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            let p = softmax_head(&h, &w, &b);
            // independent evaluation: plain exponentials and normalization
            let z0: f64 = b[0] + (0..d).map(|k| w[k] * h[k]).sum::<f64>();
            let z1: f64 = b[1] + (0..d).map(|k| w[d + k] * h[k]).sum::<f64>();
            let (e0, e1) = (z0.exp(), z1.exp());
            assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-12);
            assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-12);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn sigmoid_head_values() {
        assert_eq!(sigmoid_head(&[0.0, 0.0], &[1.0, 1.0], 0.0), 0.5);
        let big = sigmoid_head(&[1.0], &[800.0], 0.0);
        assert!(big >= 1.0 - 1e-9 && big.is_finite());
        let small = sigmoid_head(&[1.0], &[-800.0], 0.0);
        assert!((0.0..1e-9).contains(&small));
        let mut r = rng::seeded(12);
        for _ in 0..200 {
            let z: f64 = r.random_range(-30.0..30.0);
            assert!((sigmoid(z) - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
