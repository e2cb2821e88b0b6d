use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .blocks()
                .iter()
                .map(|b| vec![0.0; b.data.len()])
                .collect()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters are left untouched when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        assert_eq!(
            self.m.len(),
            params.blocks().len(),
            "optimizer state does not match parameters"
        );
        for (id, g) in params.ids().zip(grads.blocks()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    block: params.get(id).name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads.blocks()[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let data = &mut params.get_mut(id).data;
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", 1, 1, vec![x]);
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParamStore::new();
        p.add("w", 2, 2, vec![0.5, -1.0, 2.0, 3.0]);
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::default());
        let g = Grads::zeros_like(&p);
        for _ in 0..5 {
            s.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = scalar_store(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&p, cfg);
        let mut g = Grads::zeros_like(&p);
        g.get_mut(crate::nnkit::ParamId(0))[0] = 1.0;
        s.step(&mut p, &g).unwrap();
        // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
        let m_hat: f64 = 0.1 / (1.0 - 0.9);
        let v_hat: f64 = 0.001 / (1.0 - 0.999);
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.blocks()[0].data[0] - expected).abs() < 1e-15);
        assert!((p.blocks()[0].data[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar_store(1.0);
        p.add("second", 1, 2, vec![0.0, 0.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut g = Grads::zeros_like(&p);
        g.get_mut(crate::nnkit::ParamId(1))[1] = f64::INFINITY;
        match s.step(&mut p, &g) {
            Err(Error::Numeric { block }) => assert_eq!(block, "second"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut p = scalar_store(3.0);
            let mut s = AdamState::new(&p, AdamConfig::default());
            let mut traj = Vec::new();
            for _ in 0..50 {
                let x = p.blocks()[0].data[0];
                let mut g = Grads::zeros_like(&p);
                g.get_mut(crate::nnkit::ParamId(0))[0] = 2.0 * x;
                s.step(&mut p, &g).unwrap();
                traj.push(p.blocks()[0].data[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
