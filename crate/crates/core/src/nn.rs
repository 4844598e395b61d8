//! The fixed-architecture predictor: three hidden layers with ReLU after
//! the first two, a sigmoid scalar head. Supports forward evaluation,
//! reverse-mode weight gradients of the BCE loss, input-directional
//! derivatives by forward-tangent propagation, weight gradients of
//! tangent-valued penalties (reverse over forward), and Adam.
//!
//! Everything runs in f64; the gradient-check tolerances are not
//! achievable in single precision.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream_rng, Stream};
use crate::textio::{fmt_g17, read_to_string, write_string};
use rand::Rng;
use std::path::Path;

/// Default hidden width from the reference architecture.
pub const HIDDEN_WIDTH: usize = 200;

/// BCE probability clamp; keeps log() finite for interpolated labels
/// at the boundary.
pub const BCE_CLAMP: f64 = 1e-7;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weights and biases of the four linear layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub w4: Matrix,
    pub b4: Vec<f64>,
}

impl MlpModel {
    /// Standard 200-wide model, seeded uniform fan-in initialization.
    pub fn new(input_width: usize, seed: u64) -> Self {
        Self::with_hidden(input_width, HIDDEN_WIDTH, seed)
    }

    /// Narrow variant for tests; the layer structure never changes.
    pub fn with_hidden(input_width: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::WeightInit);
        let mut init = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let w1 = init(input_width, hidden, input_width);
        let b1 = init(1, hidden, input_width).data;
        let w2 = init(hidden, hidden, hidden);
        let b2 = init(1, hidden, hidden).data;
        let w3 = init(hidden, hidden, hidden);
        let b3 = init(1, hidden, hidden).data;
        let w4 = init(hidden, 1, hidden);
        let b4 = init(1, 1, hidden).data;
        MlpModel { w1, b1, w2, b2, w3, b3, w4, b4 }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.cols
    }

    fn params(&self) -> [(&Matrix, &Vec<f64>); 4] {
        [(&self.w1, &self.b1), (&self.w2, &self.b2), (&self.w3, &self.b3), (&self.w4, &self.b4)]
    }

    /// Flat parameter view in a fixed order (w1,b1,w2,b2,w3,b3,w4,b4).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.params() {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn unflatten_into(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (w, b) in [
            (&mut self.w1, &mut self.b1),
            (&mut self.w2, &mut self.b2),
            (&mut self.w3, &mut self.b3),
            (&mut self.w4, &mut self.b4),
        ] {
            let nw = w.data.len();
            w.data.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        debug_assert_eq!(at, flat.len());
    }

    /// Text checkpoint with a shape header; 17-significant-digit values
    /// give a bit-exact round trip.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("mlp {} {}\n", self.input_width(), self.hidden_width());
        for v in self.flatten() {
            out.push_str(&fmt_g17(v));
            out.push('\n');
        }
        write_string(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty checkpoint".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (input_width, hidden) = match fields.as_slice() {
            ["mlp", iw, h] => (
                iw.parse::<usize>().map_err(|_| perr(1, "bad input width".into()))?,
                h.parse::<usize>().map_err(|_| perr(1, "bad hidden width".into()))?,
            ),
            _ => return Err(perr(1, format!("bad checkpoint header `{header}`"))),
        };
        let mut model = MlpModel::with_hidden(input_width, hidden, 0);
        let expected = model.flatten().len();
        let mut flat = Vec::with_capacity(expected);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            flat.push(
                line.parse::<f64>()
                    .map_err(|_| perr(i + 1, format!("bad parameter `{line}`")))?,
            );
        }
        if flat.len() != expected {
            return Err(perr(0, format!("expected {expected} parameters, found {}", flat.len())));
        }
        model.unflatten_into(&flat);
        Ok(model)
    }
}

/// Forward activations cached for the reverse pass.
struct ForwardTrace {
    z1: Matrix,
    a1: Matrix,
    z2: Matrix,
    a2: Matrix,
    z3: Matrix,
    /// Scalar head pre-activation per row.
    z4: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_trace(m: &MlpModel, x: &Matrix) -> ForwardTrace {
    let mut z1 = x.matmul(&m.w1);
    z1.add_row_bias(&m.b1);
    let mut a1 = z1.clone();
    a1.map_inplace(|v| v.max(0.0));
    let mut z2 = a1.matmul(&m.w2);
    z2.add_row_bias(&m.b2);
    let mut a2 = z2.clone();
    a2.map_inplace(|v| v.max(0.0));
    let mut z3 = a2.matmul(&m.w3);
    z3.add_row_bias(&m.b3);
    let z4m = z3.matmul(&m.w4);
    let z4: Vec<f64> = z4m.data.iter().map(|v| v + m.b4[0]).collect();
    let probs = z4.iter().map(|&z| sigmoid(z)).collect();
    ForwardTrace { z1, a1, z2, a2, z3, z4, probs }
}

/// Batch forward pass; outputs lie strictly inside (0, 1).
pub fn forward(m: &MlpModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols != m.input_width() {
        return Err(Error::Shape {
            expected: format!("batch with {} columns", m.input_width()),
            found: format!("{} columns", x.cols),
        });
    }
    Ok(forward_trace(m, x).probs)
}

/// Mean binary cross-entropy with fractional targets allowed; the
/// probabilities are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before logs.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(probs.len(), targets.len());
    assert!(!probs.is_empty());
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(targets.iter()) {
        let pc = p.max(BCE_CLAMP).min(1.0 - BCE_CLAMP);
        sum -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    sum / probs.len() as f64
}

/// Per-parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub w4: Matrix,
    pub b4: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(m: &MlpModel) -> Self {
        Gradients {
            w1: Matrix::zeros(m.w1.rows, m.w1.cols),
            b1: vec![0.0; m.b1.len()],
            w2: Matrix::zeros(m.w2.rows, m.w2.cols),
            b2: vec![0.0; m.b2.len()],
            w3: Matrix::zeros(m.w3.rows, m.w3.cols),
            b3: vec![0.0; m.b3.len()],
            w4: Matrix::zeros(m.w4.rows, m.w4.cols),
            b4: vec![0.0; m.b4.len()],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in [
            (&self.w1, &self.b1),
            (&self.w2, &self.b2),
            (&self.w3, &self.b3),
            (&self.w4, &self.b4),
        ] {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in [
            (&mut self.w1, &mut self.b1),
            (&mut self.w2, &mut self.b2),
            (&mut self.w3, &mut self.b3),
            (&mut self.w4, &mut self.b4),
        ] {
            w.map_inplace(|v| v * c);
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.w1.add_assign(&other.w1);
        self.w2.add_assign(&other.w2);
        self.w3.add_assign(&other.w3);
        self.w4.add_assign(&other.w4);
        for (b, o) in [
            (&mut self.b1, &other.b1),
            (&mut self.b2, &other.b2),
            (&mut self.b3, &other.b3),
            (&mut self.b4, &other.b4),
        ] {
            for (v, &x) in b.iter_mut().zip(o.iter()) {
                *v += x;
            }
        }
    }
}

/// Shared reverse pass from a per-row head-gradient dL/dz4.
fn backprop_from_head(m: &MlpModel, x: &Matrix, trace: &ForwardTrace, dz4: &[f64]) -> Gradients {
    let n = x.rows;
    let dz4m = Matrix::from_vec(n, 1, dz4.to_vec());
    let mut g = Gradients::zeros_like(m);

    g.w4 = trace.z3.matmul_tn(&dz4m);
    g.b4 = vec![dz4.iter().sum()];
    // w4 is hidden x 1, so its transpose reuses the same data as 1 x hidden
    let w4_row = Matrix::from_vec(1, m.w4.rows, m.w4.data.clone());
    let dz3 = dz4m.matmul(&w4_row);
    g.w3 = trace.a2.matmul_tn(&dz3);
    g.b3 = dz3.col_sums();
    let mut da2 = dz3.matmul_nt(&m.w3);
    // relu mask from z2
    let mut mask2 = trace.z2.clone();
    mask2.map_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    da2.mul_mask(&mask2);
    let dz2 = da2;
    g.w2 = trace.a1.matmul_tn(&dz2);
    g.b2 = dz2.col_sums();
    let mut da1 = dz2.matmul_nt(&m.w2);
    let mut mask1 = trace.z1.clone();
    mask1.map_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    da1.mul_mask(&mask1);
    let dz1 = da1;
    g.w1 = x.matmul_tn(&dz1);
    g.b1 = dz1.col_sums();
    g
}

/// Exact gradients of `bce_loss(forward(m, x), targets)` with respect to
/// every parameter. Rows whose probability sits at the clamp boundary
/// contribute zero, matching the clamped loss.
pub fn backward(m: &MlpModel, x: &Matrix, targets: &[f64]) -> Result<Gradients> {
    backward_with_loss(m, x, targets).map(|(_, g)| g)
}

/// [`backward`] plus the loss value from the same forward pass.
pub fn backward_with_loss(m: &MlpModel, x: &Matrix, targets: &[f64]) -> Result<(f64, Gradients)> {
    if x.cols != m.input_width() {
        return Err(Error::Shape {
            expected: format!("batch with {} columns", m.input_width()),
            found: format!("{} columns", x.cols),
        });
    }
    assert_eq!(x.rows, targets.len());
    let trace = forward_trace(m, x);
    let n = x.rows as f64;
    let dz4: Vec<f64> = trace
        .probs
        .iter()
        .zip(targets.iter())
        .map(|(&p, &y)| {
            if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                0.0
            } else {
                (p - y) / n
            }
        })
        .collect();
    let loss = bce_loss(&trace.probs, targets);
    let grads = backprop_from_head(m, x, &trace, &dz4);
    Ok((loss, grads))
}

/// Forward pass with a tangent direction propagated alongside every
/// activation. The input tangent equals the supplied direction exactly.
pub struct TangentBundle {
    trace: ForwardTrace,
    pub t1: Matrix,
    pub t_a1: Matrix,
    pub t2: Matrix,
    pub t_a2: Matrix,
    pub t3: Matrix,
    pub t4: Vec<f64>,
    /// Directional derivative of the sigmoid output per row.
    pub output_tangent: Vec<f64>,
}

impl TangentBundle {
    pub fn probs(&self) -> &[f64] {
        &self.trace.probs
    }
}

/// Propagates direction rows `d` through the network alongside `x`;
/// the ReLU tangent uses the subgradient 1{pre-activation > 0}.
pub fn forward_tangent(m: &MlpModel, x: &Matrix, d: &Matrix) -> Result<TangentBundle> {
    if x.cols != m.input_width() || d.rows != x.rows || d.cols != x.cols {
        return Err(Error::Shape {
            expected: format!("{}x{} input and direction", x.rows, m.input_width()),
            found: format!("{}x{} and {}x{}", x.rows, x.cols, d.rows, d.cols),
        });
    }
    let trace = forward_trace(m, x);
    let t1 = d.matmul(&m.w1);
    let mut t_a1 = t1.clone();
    for (t, &z) in t_a1.data.iter_mut().zip(trace.z1.data.iter()) {
        if z <= 0.0 {
            *t = 0.0;
        }
    }
    let t2 = t_a1.matmul(&m.w2);
    let mut t_a2 = t2.clone();
    for (t, &z) in t_a2.data.iter_mut().zip(trace.z2.data.iter()) {
        if z <= 0.0 {
            *t = 0.0;
        }
    }
    let t3 = t_a2.matmul(&m.w3);
    let t4: Vec<f64> = t3.matmul(&m.w4).data;
    let output_tangent: Vec<f64> = t4
        .iter()
        .zip(trace.z4.iter())
        .map(|(&tz, &z)| {
            let s = sigmoid(z);
            s * (1.0 - s) * tz
        })
        .collect();
    Ok(TangentBundle { trace, t1, t_a1, t2, t_a2, t3, t4, output_tangent })
}

/// Row i of the result is the inner product of the output gradient at
/// x_i with direction d_i.
pub fn input_jvp(m: &MlpModel, x: &Matrix, d: &Matrix) -> Result<Vec<f64>> {
    Ok(forward_tangent(m, x, d)?.output_tangent)
}

/// Weight gradients of the scalar `sum_i coeffs[i] * output_tangent[i]`,
/// computed by reverse-mode through the forward-tangent pass. The ReLU
/// second derivative is treated as zero almost everywhere. Fairness
/// penalties reduce to this form: the penalty modules supply per-row
/// coefficients, and any label terms are weight-constants.
pub fn penalty_backward(
    m: &MlpModel,
    x: &Matrix,
    d: &Matrix,
    coeffs: &[f64],
) -> Result<Gradients> {
    let bundle = forward_tangent(m, x, d)?;
    assert_eq!(coeffs.len(), x.rows);
    let trace = &bundle.trace;
    let n = x.rows;

    // head: J_i = s'(z4_i) * t4_i with s' = s(1-s), s'' = s'(1-2s)
    let mut dz4 = vec![0.0; n];
    let mut dt4 = vec![0.0; n];
    for i in 0..n {
        let s = sigmoid(trace.z4[i]);
        let sp = s * (1.0 - s);
        let spp = sp * (1.0 - 2.0 * s);
        dz4[i] = coeffs[i] * spp * bundle.t4[i];
        dt4[i] = coeffs[i] * sp;
    }

    let dz4m = Matrix::from_vec(n, 1, dz4);
    let dt4m = Matrix::from_vec(n, 1, dt4);
    let mut g = Gradients::zeros_like(m);

    // layer 4: z4 = z3 w4 + b4, t4 = t3 w4
    g.w4 = trace.z3.matmul_tn(&dz4m);
    g.w4.add_assign(&bundle.t3.matmul_tn(&dt4m));
    g.b4 = vec![dz4m.data.iter().sum()];
    let w4_row = Matrix::from_vec(1, m.w4.rows, m.w4.data.clone());
    let dz3 = dz4m.matmul(&w4_row);
    let dt3 = dt4m.matmul(&w4_row);

    // layer 3: z3 = a2 w3 + b3, t3 = t_a2 w3
    g.w3 = trace.a2.matmul_tn(&dz3);
    g.w3.add_assign(&bundle.t_a2.matmul_tn(&dt3));
    g.b3 = dz3.col_sums();
    let mut da2 = dz3.matmul_nt(&m.w3);
    let mut dt_a2 = dt3.matmul_nt(&m.w3);

    // relu at layer 2: a2 = r2.z2, t_a2 = r2.t2 (r2 constant a.e.)
    let mut mask2 = trace.z2.clone();
    mask2.map_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    da2.mul_mask(&mask2);
    dt_a2.mul_mask(&mask2);
    let dz2 = da2;
    let dt2 = dt_a2;

    // layer 2: z2 = a1 w2 + b2, t2 = t_a1 w2
    g.w2 = trace.a1.matmul_tn(&dz2);
    g.w2.add_assign(&bundle.t_a1.matmul_tn(&dt2));
    g.b2 = dz2.col_sums();
    let mut da1 = dz2.matmul_nt(&m.w2);
    let mut dt_a1 = dt2.matmul_nt(&m.w2);

    // relu at layer 1
    let mut mask1 = trace.z1.clone();
    mask1.map_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    da1.mul_mask(&mask1);
    dt_a1.mul_mask(&mask1);
    let dz1 = da1;
    let dt1 = dt_a1;

    // layer 1: z1 = x w1 + b1, t1 = d w1
    g.w1 = x.matmul_tn(&dz1);
    g.w1.add_assign(&d.matmul_tn(&dt1));
    g.b1 = dz1.col_sums();
    Ok(g)
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// Reference defaults: lr 0.001, beta 0.9/0.999, eps 1e-8.
    pub fn new(model: &MlpModel) -> Self {
        Self::with_learning_rate(model, 0.001)
    }

    pub fn with_learning_rate(model: &MlpModel, learning_rate: f64) -> Self {
        let n = model.flatten().len();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(model: &mut MlpModel, state: &mut AdamState, grads: &Gradients) {
    let g = grads.flatten();
    let mut theta = model.flatten();
    assert_eq!(g.len(), theta.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..g.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    model.unflatten_into(&theta);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(input: usize, hidden: usize, seed: u64) -> MlpModel {
        MlpModel::with_hidden(input, hidden, seed)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, Stream::DataGen);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    #[test]
    fn zero_model_outputs_half() {
        let mut m = tiny_model(3, 4, 0);
        let zeros = vec![0.0; m.flatten().len()];
        m.unflatten_into(&zeros);
        let x = random_batch(5, 3, 1);
        for p in forward(&m, &x).unwrap() {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn rows_are_independent_of_batching() {
        let m = tiny_model(4, 6, 2);
        let x = random_batch(7, 4, 3);
        let all = forward(&m, &x).unwrap();
        for r in 0..7 {
            let single = Matrix::from_vec(1, 4, x.row(r).to_vec());
            assert_eq!(forward(&m, &single).unwrap()[0], all[r]);
        }
    }

    #[test]
    fn two_neuron_closed_form() {
        // 1 input, hidden width 1: f(x) = sigmoid(w4*(w3*relu2(w2*relu1(w1*x+b1)+b2)+b3)+b4)
        let mut m = tiny_model(1, 1, 0);
        m.unflatten_into(&[2.0, 0.5, -1.5, 0.25, 1.2, -0.3, 0.8, 0.1]);
        let x: f64 = 0.7;
        let z1 = 2.0 * x + 0.5;
        let a1 = z1.max(0.0);
        let z2 = -1.5 * a1 + 0.25;
        let a2 = z2.max(0.0);
        let z3 = 1.2 * a2 - 0.3;
        let z4 = 0.8 * z3 + 0.1;
        let expect = sigmoid(z4);
        let got = forward(&m, &Matrix::from_vec(1, 1, vec![x])).unwrap()[0];
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn bce_analytic_and_clamped() {
        let loss = bce_loss(&[0.5], &[0.5]);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        // boundary probability vs opposite label: finite, no NaN
        let hard = bce_loss(&[BCE_CLAMP / 2.0], &[1.0]);
        assert!(hard.is_finite());
        assert!(hard > 10.0);
    }

    #[test]
    fn bce_matches_scalar_loop_oracle() {
        let mut rng = stream_rng(4, Stream::DataGen);
        let probs: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let targets: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let got = bce_loss(&probs, &targets);
        let mut oracle = 0.0;
        for i in 0..64 {
            let p = probs[i].max(BCE_CLAMP).min(1.0 - BCE_CLAMP);
            oracle += -(targets[i] * p.ln() + (1.0 - targets[i]) * (1.0 - p).ln());
        }
        oracle /= 64.0;
        assert!((got - oracle).abs() < 1e-12);
    }

    /// Central finite difference of a scalar function of the flattened
    /// parameters.
    fn fd_gradient(
        m: &MlpModel,
        h: f64,
        f: impl Fn(&MlpModel) -> f64,
    ) -> Vec<f64> {
        let theta = m.flatten();
        let mut grad = vec![0.0; theta.len()];
        let mut probe = m.clone();
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            probe.unflatten_into(&plus);
            let fp = f(&probe);
            let mut minus = theta.clone();
            minus[i] -= h;
            probe.unflatten_into(&minus);
            let fm = f(&probe);
            grad[i] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(&a, &n)| {
                let scale = a.abs().max(n.abs()).max(1e-6);
                (a - n).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let m = tiny_model(3, 5, seed);
            let x = random_batch(6, 3, seed + 100);
            let mut rng = stream_rng(seed + 200, Stream::DataGen);
            let targets: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let analytic = backward(&m, &x, &targets).unwrap().flatten();
            let numeric = fd_gradient(&m, 1e-5, |probe| {
                bce_loss(&forward(probe, &x).unwrap(), &targets)
            });
            assert!(
                max_rel_err(&analytic, &numeric) <= 1e-4,
                "seed {seed}: rel err {}",
                max_rel_err(&analytic, &numeric)
            );
        }
    }

    #[test]
    fn gradient_is_zero_at_the_all_half_stationary_point() {
        let mut m = tiny_model(2, 3, 0);
        let zeros = vec![0.0; m.flatten().len()];
        m.unflatten_into(&zeros);
        let x = random_batch(4, 2, 5);
        let g = backward(&m, &x, &[0.5, 0.5, 0.5, 0.5]).unwrap().flatten();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-10, "norm {norm}");
    }

    #[test]
    fn batch_mean_gradient_is_mean_of_per_sample_gradients() {
        let m = tiny_model(3, 4, 7);
        let x = random_batch(5, 3, 8);
        let targets = [1.0, 0.0, 1.0, 0.25, 0.75];
        let full = backward(&m, &x, &targets).unwrap().flatten();
        let mut acc = vec![0.0; full.len()];
        for r in 0..5 {
            let xr = Matrix::from_vec(1, 3, x.row(r).to_vec());
            let gr = backward(&m, &xr, &targets[r..r + 1]).unwrap().flatten();
            for (a, g) in acc.iter_mut().zip(gr.iter()) {
                *a += g / 5.0;
            }
        }
        for (&a, &f) in acc.iter().zip(full.iter()) {
            assert!((a - f).abs() <= 1e-12);
        }
    }

    /// Rejects inputs whose pre-activations sit within `margin` of a
    /// ReLU kink at x or at x +- h*dir.
    fn away_from_kinks(m: &MlpModel, x: &Matrix, d: &Matrix, h: f64, margin: f64) -> bool {
        for scale in [-1.0, 0.0, 1.0] {
            let mut shifted = x.clone();
            for (s, &dd) in shifted.data.iter_mut().zip(d.data.iter()) {
                *s += scale * h * dd;
            }
            let trace = forward_trace(m, &shifted);
            if trace.z1.data.iter().chain(trace.z2.data.iter()).any(|z| z.abs() < margin) {
                return false;
            }
        }
        true
    }

    #[test]
    fn jvp_zero_direction_and_linearity() {
        let m = tiny_model(4, 5, 9);
        let x = random_batch(6, 4, 10);
        let zeros = Matrix::zeros(6, 4);
        assert!(input_jvp(&m, &x, &zeros).unwrap().iter().all(|&t| t == 0.0));
        let d1 = random_batch(6, 4, 11);
        let d2 = random_batch(6, 4, 12);
        let mut sum = d1.clone();
        sum.add_assign(&d2);
        let j1 = input_jvp(&m, &x, &d1).unwrap();
        let j2 = input_jvp(&m, &x, &d2).unwrap();
        let js = input_jvp(&m, &x, &sum).unwrap();
        for i in 0..6 {
            assert!((js[i] - (j1[i] + j2[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn jvp_matches_finite_differences_away_from_kinks() {
        let h = 1e-5;
        let mut accepted = 0;
        let mut seed = 0u64;
        while accepted < 30 {
            seed += 1;
            let m = tiny_model(3, 5, seed);
            let x = random_batch(4, 3, seed + 300);
            let d = random_batch(4, 3, seed + 600);
            if !away_from_kinks(&m, &x, &d, h, 1e-4) {
                continue;
            }
            accepted += 1;
            let jvp = input_jvp(&m, &x, &d).unwrap();
            for r in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                for c in 0..3 {
                    xp.data[r * 3 + c] += h * d.data[r * 3 + c];
                    xm.data[r * 3 + c] -= h * d.data[r * 3 + c];
                }
                let fp = forward(&m, &xp).unwrap()[r];
                let fm = forward(&m, &xm).unwrap()[r];
                let numeric = (fp - fm) / (2.0 * h);
                assert!(
                    (jvp[r] - numeric).abs() <= 1e-6,
                    "seed {seed} row {r}: {} vs {}",
                    jvp[r],
                    numeric
                );
            }
        }
    }

    #[test]
    fn penalty_backward_matches_finite_differences() {
        let h = 1e-5;
        let mut accepted = 0;
        let mut seed = 1000u64;
        while accepted < 20 {
            seed += 1;
            let m = tiny_model(3, 4, seed);
            let x = random_batch(5, 3, seed + 1);
            let d = random_batch(5, 3, seed + 2);
            if !away_from_kinks(&m, &x, &d, h, 1e-3) {
                continue;
            }
            accepted += 1;
            let mut rng = stream_rng(seed + 3, Stream::DataGen);
            let coeffs: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = penalty_backward(&m, &x, &d, &coeffs).unwrap().flatten();
            let numeric = fd_gradient(&m, h, |probe| {
                input_jvp(probe, &x, &d)
                    .unwrap()
                    .iter()
                    .zip(coeffs.iter())
                    .map(|(&j, &c)| c * j)
                    .sum()
            });
            let err = max_rel_err(&analytic, &numeric);
            assert!(err <= 1e-3, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn constant_head_model_has_zero_penalty_gradient_for_head_bias() {
        // zero the weights feeding the head: gradient wrt input vanishes
        let mut m = tiny_model(3, 4, 4);
        m.w4.map_inplace(|_| 0.0);
        let x = random_batch(5, 3, 6);
        let d = random_batch(5, 3, 7);
        let jvp = input_jvp(&m, &x, &d).unwrap();
        assert!(jvp.iter().all(|&t| t == 0.0));
        let g = penalty_backward(&m, &x, &d, &[1.0; 5]).unwrap();
        assert_eq!(g.b4[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut m = tiny_model(2, 3, 1);
        let before = m.flatten();
        let mut state = AdamState::new(&m);
        let g = Gradients::zeros_like(&m);
        adam_step(&mut m, &mut state, &g);
        assert_eq!(m.flatten(), before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        // from zero state, one update is -lr * g / (|g| + eps')
        let mut m = tiny_model(1, 1, 0);
        let theta0 = m.flatten();
        let mut state = AdamState::new(&m);
        let mut g = Gradients::zeros_like(&m);
        g.w1.data[0] = 0.37;
        adam_step(&mut m, &mut state, &g);
        let theta1 = m.flatten();
        let delta = theta1[0] - theta0[0];
        // m_hat = g, v_hat = g^2, update = -lr*g/(|g|+eps)
        let expect = -0.001 * 0.37 / (0.37 + 1e-8);
        assert!((delta - expect).abs() < 1e-12);
        assert_eq!(theta1[1..], theta0[1..]);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // minimize (theta - 3)^2 via the w1 slot of a 1x1 model
        let mut m = tiny_model(1, 1, 2);
        let mut state = AdamState::with_learning_rate(&m, 0.05);
        for _ in 0..500 {
            let theta = m.flatten();
            let mut g = Gradients::zeros_like(&m);
            g.w1.data[0] = 2.0 * (theta[0] - 3.0);
            adam_step(&mut m, &mut state, &g);
        }
        assert!((m.flatten()[0] - 3.0).abs() <= 1e-3);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = MlpModel::new(12, 99);
        let b = MlpModel::new(12, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = tiny_model(5, 7, 3);
        let dir = std::env::temp_dir().join("mcfair_ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.txt");
        m.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        for (a, b) in m.flatten().iter().zip(back.flatten().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
