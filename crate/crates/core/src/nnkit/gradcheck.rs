//! Central finite-difference check of analytic gradients.

use super::params::{Grads, ParamStore};
use crate::Result;

/// Gradients whose magnitudes are both below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// Block and offset of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` with `(f(θ + eps) - f(θ - eps)) / 2eps` for every
/// parameter entry.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &Grads,
    eps: f64,
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheck> {
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in params.ids() {
        for k in 0..params.get(id).data.len() {
            let x = params.get(id).data[k];
            probe.get_mut(id).data[k] = x + eps;
            let up = f(&probe)?;
            probe.get_mut(id).data[k] = x - eps;
            let down = f(&probe)?;
            probe.get_mut(id).data[k] = x;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id)[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            if rel > report.max_relative_error || rel.is_nan() {
                report.max_relative_error = rel;
                report.worst = Some((params.get(id).name.clone(), k));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::Tape;

    #[test]
    fn catches_a_wrong_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", 2, 2, vec![0.3, -0.2, 0.5, 0.1]);
        let b = store.add("b", 1, 2, vec![0.0, 0.1]);
        let loss = |p: &ParamStore| {
            let mut t = Tape::new(p);
            let x = t.constant(vec![1.0, -2.0]);
            let z = t.affine(w, b, x);
            let l = t.softmax_xent(z, 1);
            (t.scalar(l), t.backward(l))
        };
        let (_, grads) = loss(&store);
        let ok = check_gradients(&store, &grads, 1e-5, |p| Ok(loss(p).0)).unwrap();
        assert!(ok.max_relative_error < 1e-7, "{ok:?}");
        assert_eq!(ok.checked, 6);

        let mut wrong = grads.clone();
        wrong.scale(1.01);
        let bad = check_gradients(&store, &wrong, 1e-5, |p| Ok(loss(p).0)).unwrap();
        assert!(bad.max_relative_error > 5e-3);
        assert!(bad.worst.is_some());
    }
}
