use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|s| (Array2::zeros(s), Array2::zeros(s)))
            .unzip();
        Self { m, v, t: 0 }
    }

    /// Number of steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. A `None` gradient leaves the parameter
/// (and its moments) untouched.
pub fn adam_step(
    params: &mut [&mut Array2<f64>],
    grads: &[Option<&Array2<f64>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            lhs: (params.len(), 0),
            rhs: (state.m.len(), grads.len()),
        });
    }
    for (i, p) in params.iter().enumerate() {
        let g_shape = grads[i].map(|g| g.dim()).unwrap_or(p.dim());
        if p.dim() != state.m[i].dim() || g_shape != p.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: p.dim(),
                rhs: g_shape,
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);

    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        Zip::from(&mut **p)
            .and(&mut state.m[i])
            .and(&mut state.v[i])
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = array![[1.0, -2.0], [3.0, 0.5]];
        let before = p.clone();
        let g = Array2::zeros((2, 2));
        let mut st = AdamState::new([(2, 2)]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Some(&g)], &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = array![[0.0]];
        let g = array![[1.0]];
        let mut st = AdamState::new([(1, 1)]);
        adam_step(&mut [&mut p], &[Some(&g)], &mut st, &AdamConfig::default()).unwrap();
        assert!((p[[0, 0]] + 1e-3).abs() < 1e-9, "{}", p[[0, 0]]);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        // f(x) = x²/2, f'(x) = x. Reference recurrence written out by hand.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = array![[1.0]];
        let mut st = AdamState::new([(1, 1)]);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = p.clone();
            adam_step(&mut [&mut p], &[Some(&g)], &mut st, &cfg).unwrap();
            m = 0.9 * m + 0.1 * x;
            v = 0.999 * v + 0.001 * x * x;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p[[0, 0]] - x).abs() < 1e-14);
            assert!(p[[0, 0]].abs() < prev);
            prev = p[[0, 0]].abs();
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Array2::zeros((2, 2));
        let g = Array2::zeros((2, 3));
        let mut st = AdamState::new([(2, 2)]);
        assert!(adam_step(&mut [&mut p], &[Some(&g)], &mut st, &AdamConfig::default()).is_err());
    }
}
