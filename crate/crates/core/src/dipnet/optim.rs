use crate::error::{Error, Result};

/// Cosine-annealed learning rate `lr0 · ½(1 + cos(π t / T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::Parameter(format!(
            "cosine schedule needs 0 <= t <= T with T >= 1, got t={t}, T={total}"
        )));
    }
    if t == total {
        return Ok(0.0);
    }
    let x = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr0 * 0.5 * (1.0 + x.cos()))
}

/// Moment estimates and hyperparameters of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, betas: (f64, f64), eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: betas.0,
            beta2: betas.1,
            eps,
        }
    }

    pub fn with_defaults(n: usize) -> Self {
        Self::new(n, (0.9, 0.999), 1e-8)
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 400, 5e-4).unwrap(), 5e-4);
        assert!((cosine_lr(200, 400, 5e-4).unwrap() - 2.5e-4).abs() < 1e-19);
        assert_eq!(cosine_lr(400, 400, 5e-4).unwrap(), 0.0);
        assert!(cosine_lr(401, 400, 5e-4).is_err());
        assert!(cosine_lr(0, 0, 5e-4).is_err());
    }

    #[test]
    fn schedule_monotone() {
        let mut prev = f64::INFINITY;
        for t in 0..=37 {
            let lr = cosine_lr(t, 37, 1.0).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut p = vec![1.5, -2.0];
        let mut st = AdamState::with_defaults(2);
        st.m = vec![0.2, 0.0];
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.0).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert!((st.m[0] - 0.18).abs() < 1e-16);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState::with_defaults(3);
        adam_step(&mut p, &[1.0, 1.0, 1.0], &mut st, 1e-3).unwrap();
        for v in p {
            assert!((v + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        }
    }

    #[test]
    fn two_steps_by_hand() {
        // g1 = 2, g2 = -1, lr = 0.1
        // m1 = 0.2, v1 = 0.004, m̂1 = 2, v̂1 = 4 → Δ1 = -0.1·2/(2+1e-8)
        // m2 = 0.18 - 0.1 = 0.08, v2 = 0.003996 + 0.001 = 0.004996
        // m̂2 = 0.08/0.19, v̂2 = 0.004996/0.001999
        let mut p = vec![1.0];
        let mut st = AdamState::with_defaults(1);
        adam_step(&mut p, &[2.0], &mut st, 0.1).unwrap();
        adam_step(&mut p, &[-1.0], &mut st, 0.1).unwrap();
        let d1 = 0.1 * 2.0 / (2.0 + 1e-8);
        let m2: f64 = 0.9 * 0.2 + 0.1 * -1.0;
        let v2: f64 = 0.999 * 0.004 + 0.001 * 1.0;
        let mh = m2 / (1.0 - 0.9f64 * 0.9);
        let vh = v2 / (1.0 - 0.999f64 * 0.999);
        let d2 = 0.1 * mh / (vh.sqrt() + 1e-8);
        let want = 1.0 - d1 - d2;
        assert!((p[0] - want).abs() <= 1e-15, "{} vs {}", p[0], want);
    }
}
