use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moments, one buffer per parameter array in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Params>(config: AdamWConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.flatten().into_iter().map(|v| vec![0.0; v.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One AdamW update with decoupled weight decay:
    /// `p -= lr * wd * p`, then `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Nothing is modified when any gradient entry is non-finite.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let mut grad_bufs = Vec::new();
        let mut bad = None;
        grads.visit("", &mut |p| {
            if bad.is_none() && p.data.iter().any(|g| !g.is_finite()) {
                bad = Some(p.name.to_string());
            }
            grad_bufs.push(p.data.to_vec());
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }
        if grad_bufs.len() != self.first_moment.len()
            || grad_bufs
                .iter()
                .zip(&self.first_moment)
                .any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::Shape("gradient layout differs from optimizer state".into()));
        }

        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut idx = 0;
        let (ms, vs) = (&mut self.first_moment, &mut self.second_moment);
        params.visit_mut("", &mut |_, data| {
            let (m, v, g) = (&mut ms[idx], &mut vs[idx], &grad_bufs[idx]);
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * weight_decay * data[j];
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

/// Linear ramp from 0 to `peak_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
}

impl WarmupSchedule {
    pub fn new(warmup_steps: usize, total_steps: usize, peak_lr: f64) -> Result<Self> {
        if total_steps == 0 || warmup_steps > total_steps || !(peak_lr > 0.0) {
            return Err(Error::Config(format!(
                "invalid schedule: warmup {warmup_steps}, total {total_steps}, peak {peak_lr}"
            )));
        }
        Ok(Self {
            warmup_steps,
            total_steps,
            peak_lr,
        })
    }

    /// Warmup covering `fraction` of `total_steps`, rounded down.
    pub fn with_warmup_fraction(total_steps: usize, fraction: f64, peak_lr: f64) -> Result<Self> {
        let warmup = (fraction.clamp(0.0, 1.0) * total_steps as f64).floor() as usize;
        Self::new(warmup, total_steps, peak_lr)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            self.peak_lr * step as f64 / self.warmup_steps as f64
        } else if self.total_steps == self.warmup_steps {
            self.peak_lr
        } else {
            self.peak_lr * (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = array![1.0, -2.0, 3.0];
        let g = Array1::zeros(3);
        let mut st = OptimizerState::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        for _ in 0..5 {
            st.step(&mut p, &g, 0.1).unwrap();
        }
        assert_eq!(p, array![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_unit_sized() {
        let mut p = array![1.0];
        let mut st = OptimizerState::new(
            AdamWConfig {
                weight_decay: 0.0,
                eps: 0.0,
                ..Default::default()
            },
            &p,
        );
        st.step(&mut p, &array![1.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay() {
        let mut p = array![2.0, -4.0];
        let g = Array1::zeros(2);
        let mut st = OptimizerState::new(
            AdamWConfig {
                weight_decay: 0.5,
                ..Default::default()
            },
            &p,
        );
        st.step(&mut p, &g, 0.1).unwrap();
        assert!((p[0] - 2.0 * 0.95).abs() < 1e-15);
        st.step(&mut p, &g, 0.1).unwrap();
        assert!((p[1] + 4.0 * 0.95 * 0.95).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = crate::nn::Dense::zeros(2, 2);
        let mut g = p.zeros_like();
        g.bias[1] = f64::NAN;
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        match st.step(&mut p, &g, 0.1).unwrap_err() {
            Error::NonFiniteGradient(name) => assert_eq!(name, "bias"),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(st.step, 0);
    }

    #[test]
    fn schedule_shape() {
        let s = WarmupSchedule::new(100, 1100, 2.0).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(50), 1.0);
        assert_eq!(s.lr_at(100), 2.0);
        assert!((s.lr_at(600) - 1.0).abs() < 1e-15);
        assert_eq!(s.lr_at(1100), 0.0);
        let peaks = (0..=1100).filter(|&i| s.lr_at(i) == 2.0).count();
        assert_eq!(peaks, 1);

        let no_warm = WarmupSchedule::new(0, 10, 1.0).unwrap();
        assert_eq!(no_warm.lr_at(0), 1.0);
        assert!(WarmupSchedule::new(11, 10, 1.0).is_err());
    }

    #[test]
    fn schedule_is_continuous() {
        let s = WarmupSchedule::new(7, 53, 0.3).unwrap();
        let max_jump = (1..=53)
            .map(|i| (s.lr_at(i) - s.lr_at(i - 1)).abs())
            .fold(0.0, f64::max);
        assert!(max_jump <= 0.3 / 7.0 + 1e-15);
    }
}
