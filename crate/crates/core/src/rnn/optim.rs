use crate::rnn::lstm::{Gradients, LstmParams};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;
/// Gradients are rescaled to at most this global L2 norm before each update.
pub const CLIP_NORM: f64 = 5.0;

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: LstmParams,
    pub v: LstmParams,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: &LstmParams, seed: u64) -> Self {
        TrainState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            seed,
        }
    }
}

/// Scales `g` in place so its global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = g
        .slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for s in g.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// One bias-corrected adaptive-moment update with gradient clipping.
pub fn optimizer_step(state: &mut TrainState, params: &mut LstmParams, grads: &Gradients, lr: f64) {
    assert!(
        params.same_shape(grads) && params.same_shape(&state.m),
        "optimizer shapes disagree"
    );
    let mut g = grads.clone();
    clip_global_norm(&mut g, CLIP_NORM);
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let groups = params
        .slices_mut()
        .into_iter()
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
        .zip(g.slices());
    for (((p, m), v), g) in groups {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = LstmParams::zeros(2, 3, 2);
        p.w_ih.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let before = p.clone();
        let mut s = TrainState::new(&p, 0);
        optimizer_step(&mut s, &mut p, &before.zeros_like(), 0.01);
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = LstmParams::zeros(1, 1, 1);
        let mut g = p.zeros_like();
        g.b_out[0] = 0.3;
        g.b[0] = -0.02;
        let mut s = TrainState::new(&p, 0);
        let lr = 0.01;
        let mut last = (0.0, 0.0);
        for _ in 0..500 {
            let (b_out, b0) = (p.b_out[0], p.b[0]);
            optimizer_step(&mut s, &mut p, &g, lr);
            last = (p.b_out[0] - b_out, p.b[0] - b0);
        }
        // m_hat -> g, v_hat -> g², so each step -> -lr * sign(g)
        assert!((last.0 + lr).abs() < 1e-6, "{}", last.0);
        assert!((last.1 - lr).abs() < 1e-6, "{}", last.1);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = LstmParams::zeros(1, 1, 2);
        g.b_out = vec![30.0, 40.0];
        let before = clip_global_norm(&mut g, CLIP_NORM);
        assert_eq!(before, 50.0);
        let after: f64 = g.b_out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
        assert!((g.b_out[0] - 3.0).abs() < 1e-12);
    }
}
