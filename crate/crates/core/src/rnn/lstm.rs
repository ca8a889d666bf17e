use rand::Rng;

use crate::error::{Error, Result};

/// Gate blocks per hidden unit, stacked in the order input, forget, cell, output.
pub const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// `4H x D`, row-major.
    pub w_ih: Vec<f64>,
    /// `4H x H`, row-major.
    pub w_hh: Vec<f64>,
    /// `4H`.
    pub b: Vec<f64>,
    /// `C x H`, row-major.
    pub w_out: Vec<f64>,
    /// `C`.
    pub b_out: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = LstmParams;

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        LstmParams {
            input_dim,
            hidden,
            classes,
            w_ih: vec![0.0; GATES * hidden * input_dim],
            w_hh: vec![0.0; GATES * hidden * hidden],
            b: vec![0.0; GATES * hidden],
            w_out: vec![0.0; classes * hidden],
            b_out: vec![0.0; classes],
        }
    }

    /// Uniform `(-1/sqrt(H), 1/sqrt(H))` gate weights, forget bias 1, zero head.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input_dim, hidden, classes);
        let k = 1.0 / (hidden as f64).sqrt();
        for w in p.w_ih.iter_mut().chain(p.w_hh.iter_mut()) {
            *w = rng.random_range(-k..k);
        }
        p.b[hidden..2 * hidden].fill(1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_dim, self.hidden, self.classes)
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> [&[f64]; 5] {
        [&self.w_ih, &self.w_hh, &self.b, &self.w_out, &self.b_out]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn same_shape(&self, o: &LstmParams) -> bool {
        self.input_dim == o.input_dim && self.hidden == o.hidden && self.classes == o.classes
    }

    /// Checks buffer lengths against `(D, H, C)` and that every entry is finite.
    pub fn check(&self) -> Result<()> {
        let (d, h, c) = (self.input_dim, self.hidden, self.classes);
        let expect = [GATES * h * d, GATES * h * h, GATES * h, c * h, c];
        for (s, n) in self.slices().iter().zip(expect) {
            if s.len() != n {
                return Err(Error::Shape(format!(
                    "parameter buffer of length {} for D={d} H={h} C={c}",
                    s.len()
                )));
            }
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Elementwise `self += o`.
    pub fn accumulate(&mut self, o: &LstmParams) {
        for (a, b) in self.slices_mut().into_iter().zip(o.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One time step. `gates` receives the activated `[i, f, g, o]` blocks.
fn step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64], gates: &mut [f64], c_out: &mut [f64], h_out: &mut [f64]) {
    let (d, hs) = (p.input_dim, p.hidden);
    for r in 0..GATES * hs {
        gates[r] = dot(&p.w_ih[r * d..(r + 1) * d], x) + dot(&p.w_hh[r * hs..(r + 1) * hs], h) + p.b[r];
    }
    for j in 0..hs {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hs + j]);
        let g = gates[2 * hs + j].tanh();
        let o = sigmoid(gates[3 * hs + j]);
        gates[j] = i;
        gates[hs + j] = f;
        gates[2 * hs + j] = g;
        gates[3 * hs + j] = o;
        c_out[j] = f * c[j] + i * g;
        h_out[j] = o * c_out[j].tanh();
    }
}

fn check_input(p: &LstmParams, x: &[f64]) -> Result<()> {
    if x.len() != p.input_dim {
        return Err(Error::Shape(format!(
            "input of width {} for input_dim {}",
            x.len(),
            p.input_dim
        )));
    }
    Ok(())
}

/// A single LSTM step from state `(h, c)`; returns `(h', c')`.
pub fn cell_forward(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(p, x)?;
    if h.len() != p.hidden || c.len() != p.hidden {
        return Err(Error::Shape(format!(
            "state of width {}/{} for hidden {}",
            h.len(),
            c.len(),
            p.hidden
        )));
    }
    let mut gates = vec![0.0; GATES * p.hidden];
    let mut c_out = vec![0.0; p.hidden];
    let mut h_out = vec![0.0; p.hidden];
    step(p, x, h, c, &mut gates, &mut c_out, &mut h_out);
    Ok((h_out, c_out))
}

fn head(p: &LstmParams, h: &[f64]) -> Vec<f64> {
    (0..p.classes)
        .map(|k| dot(&p.w_out[k * p.hidden..(k + 1) * p.hidden], h) + p.b_out[k])
        .collect()
}

/// Softmax probabilities and log-sum-exp of the logits.
fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), m + s.ln())
}

/// Runs the window from a zero state and returns class probabilities.
pub fn sequence_forward<R: AsRef<[f64]>>(p: &LstmParams, window: &[R]) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    let hs = p.hidden;
    let mut gates = vec![0.0; GATES * hs];
    let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
    let (mut h2, mut c2) = (vec![0.0; hs], vec![0.0; hs]);
    for x in window {
        let x = x.as_ref();
        check_input(p, x)?;
        step(p, x, &h, &c, &mut gates, &mut c2, &mut h2);
        std::mem::swap(&mut h, &mut h2);
        std::mem::swap(&mut c, &mut c2);
    }
    Ok(softmax(&head(p, &h)).0)
}

/// One weighted, labelled training sequence.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, R> {
    pub window: &'a [R],
    pub class: usize,
    pub weight: f64,
}

/// Activations kept from the forward pass for backpropagation.
struct Trace {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl Trace {
    fn new() -> Self {
        Trace {
            gates: Vec::new(),
            c: Vec::new(),
            h: Vec::new(),
        }
    }

    fn reset(&mut self, steps: usize, hs: usize) {
        // index 0 of c and h holds the zero initial state
        self.gates.clear();
        self.gates.resize(steps * GATES * hs, 0.0);
        self.c.clear();
        self.c.resize((steps + 1) * hs, 0.0);
        self.h.clear();
        self.h.resize((steps + 1) * hs, 0.0);
    }
}

/// Weighted mean cross-entropy and its exact gradient via full BPTT.
pub fn loss_and_grads<R: AsRef<[f64]>>(p: &LstmParams, batch: &[Example<'_, R>]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let total_weight: f64 = batch.iter().map(|e| e.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::InvalidArgument(
            "batch weights must sum to a positive value".into(),
        ));
    }
    let hs = p.hidden;
    let d = p.input_dim;
    let mut grads = p.zeros_like();
    let mut trace = Trace::new();
    let mut loss = 0.0;

    let mut dh = vec![0.0; hs];
    let mut dc = vec![0.0; hs];
    let mut dh_prev = vec![0.0; hs];
    let mut da = vec![0.0; GATES * hs];

    for (idx, ex) in batch.iter().enumerate() {
        if ex.class >= p.classes {
            return Err(Error::InvalidArgument(format!(
                "class {} at batch element {idx} out of range",
                ex.class
            )));
        }
        let steps = ex.window.len();
        if steps == 0 {
            return Err(Error::InvalidArgument(format!("empty window at batch element {idx}")));
        }
        trace.reset(steps, hs);
        for (t, x) in ex.window.iter().enumerate() {
            let x = x.as_ref();
            check_input(p, x)?;
            let (h_prev, h_rest) = trace.h.split_at_mut((t + 1) * hs);
            let (c_prev, c_rest) = trace.c.split_at_mut((t + 1) * hs);
            step(
                p,
                x,
                &h_prev[t * hs..],
                &c_prev[t * hs..],
                &mut trace.gates[t * GATES * hs..(t + 1) * GATES * hs],
                &mut c_rest[..hs],
                &mut h_rest[..hs],
            );
        }
        let h_last = &trace.h[steps * hs..];
        let logits = head(p, h_last);
        let (probs, lse) = softmax(&logits);
        let nll = lse - logits[ex.class];
        let contrib = ex.weight * nll;
        if !contrib.is_finite() {
            return Err(Error::NonFiniteLoss { index: idx });
        }
        loss += contrib;

        let scale = ex.weight / total_weight;
        dh.fill(0.0);
        for k in 0..p.classes {
            let dz = (probs[k] - if k == ex.class { 1.0 } else { 0.0 }) * scale;
            grads.b_out[k] += dz;
            axpy(dz, h_last, &mut grads.w_out[k * hs..(k + 1) * hs]);
            axpy(dz, &p.w_out[k * hs..(k + 1) * hs], &mut dh);
        }
        dc.fill(0.0);

        for t in (0..steps).rev() {
            let g = &trace.gates[t * GATES * hs..(t + 1) * GATES * hs];
            let c_prev = &trace.c[t * hs..(t + 1) * hs];
            let c_cur = &trace.c[(t + 1) * hs..(t + 2) * hs];
            for j in 0..hs {
                let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                let tc = c_cur[j].tanh();
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                let d_i = dcj * gg;
                let d_g = dcj * i;
                let d_f = dcj * c_prev[j];
                dc[j] = dcj * f;
                da[j] = d_i * i * (1.0 - i);
                da[hs + j] = d_f * f * (1.0 - f);
                da[2 * hs + j] = d_g * (1.0 - gg * gg);
                da[3 * hs + j] = d_o * o * (1.0 - o);
            }
            let x = ex.window[t].as_ref();
            let h_prev = &trace.h[t * hs..(t + 1) * hs];
            dh_prev.fill(0.0);
            for r in 0..GATES * hs {
                let a = da[r];
                grads.b[r] += a;
                axpy(a, x, &mut grads.w_ih[r * d..(r + 1) * d]);
                axpy(a, h_prev, &mut grads.w_hh[r * hs..(r + 1) * hs]);
                axpy(a, &p.w_hh[r * hs..(r + 1) * hs], &mut dh_prev);
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }
    Ok((loss / total_weight, grads))
}
