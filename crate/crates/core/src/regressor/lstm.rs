use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Default layer widths: six stacked LSTM layers narrowing from 512 to 16.
pub const DEFAULT_WIDTHS: [usize; 6] = [512, 256, 128, 64, 32, 16];

/// Stacked LSTM with a flatten + dense sigmoid head.
///
/// All parameters live in one flat vector. Layer `k` with input size `d`
/// and hidden size `h` stores, in order, the input weights (`4h x d`), the
/// recurrent weights (`4h x h`) and the bias (`4h`), each gate block in
/// `i, f, g, o` order. The dense head follows: `L * h_last` weights over the
/// time-major flattened last-layer sequence, then one bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmStack {
    widths: Vec<usize>,
    steps: usize,
    features: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    input: usize,
    hidden: usize,
    offset: usize,
}

impl LayerShape {
    fn w_in(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + 4 * self.hidden * self.input
    }
    fn w_rec(&self) -> std::ops::Range<usize> {
        let s = self.w_in().end;
        s..s + 4 * self.hidden * self.hidden
    }
    fn bias(&self) -> std::ops::Range<usize> {
        let s = self.w_rec().end;
        s..s + 4 * self.hidden
    }
    fn len(&self) -> usize {
        4 * ((self.input + self.hidden) * self.hidden + self.hidden)
    }
}

/// Parameters of one LSTM layer: `4((d_in + h)h + h)`.
pub fn lstm_layer_params(input: usize, hidden: usize) -> usize {
    4 * ((input + hidden) * hidden + hidden)
}

/// Per-layer parameter counts followed by the dense head's count.
pub fn layer_param_counts(widths: &[usize], steps: usize, features: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(widths.len() + 1);
    let mut d_in = features;
    for &h in widths {
        counts.push(lstm_layer_params(d_in, h));
        d_in = h;
    }
    counts.push(steps * widths.last().copied().unwrap_or(0) + 1);
    counts
}

pub fn param_count(widths: &[usize], steps: usize, features: usize) -> usize {
    layer_param_counts(widths, steps, features).iter().sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `y`, computed stably.
pub(crate) fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct ForwardCache {
    /// Per layer: post-activation gates `L x 4h`, cell states and hidden
    /// states `L x h`.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    pub(crate) logit: f64,
}

impl LstmStack {
    /// Builds a model with weights uniform in `±1/sqrt(fan_in)`, forget-gate
    /// biases at 1 and all other biases at 0.
    pub fn new(widths: &[usize], steps: usize, features: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(widths, steps, features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..model.widths.len() {
            let s = model.layer(k);
            let a = 1.0 / (s.input as f64).sqrt();
            for w in &mut model.params[s.w_in()] {
                *w = rng.random_range(-a..=a);
            }
            let a = 1.0 / (s.hidden as f64).sqrt();
            for w in &mut model.params[s.w_rec()] {
                *w = rng.random_range(-a..=a);
            }
            let b = s.bias();
            model.params[b.start + s.hidden..b.start + 2 * s.hidden].fill(1.0);
        }
        let dense = model.dense_range();
        let a = 1.0 / ((dense.len() - 1) as f64).sqrt();
        for w in &mut model.params[dense.start..dense.end - 1] {
            *w = rng.random_range(-a..=a);
        }
        Ok(model)
    }

    /// A model with every weight and bias set to zero.
    pub fn zeros(widths: &[usize], steps: usize, features: usize) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(usage(format!("layer widths must be non-empty and positive, got {widths:?}")));
        }
        if steps == 0 || features == 0 {
            return Err(usage("window length and feature count must be positive"));
        }
        Ok(Self {
            widths: widths.to_vec(),
            steps,
            features,
            params: vec![0.0; param_count(widths, steps, features)],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        param_count(&self.widths, self.steps, self.features)
    }

    /// Named parameter tensors in storage order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for k in 0..self.widths.len() {
            let s = self.layer(k);
            out.push((format!("lstm{k}.w_in"), &self.params[s.w_in()]));
            out.push((format!("lstm{k}.w_rec"), &self.params[s.w_rec()]));
            out.push((format!("lstm{k}.bias"), &self.params[s.bias()]));
        }
        let d = self.dense_range();
        out.push(("dense.weight".into(), &self.params[d.start..d.end - 1]));
        out.push(("dense.bias".into(), &self.params[d.end - 1..d.end]));
        out
    }

    fn layer(&self, k: usize) -> LayerShape {
        let mut offset = 0;
        let mut input = self.features;
        for &h in &self.widths[..k] {
            offset += lstm_layer_params(input, h);
            input = h;
        }
        LayerShape { input, hidden: self.widths[k], offset }
    }

    fn dense_range(&self) -> std::ops::Range<usize> {
        let last = self.layer(self.widths.len() - 1);
        let start = last.offset + last.len();
        start..start + self.steps * last.hidden + 1
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.steps * self.features {
            return Err(usage(format!(
                "window has {} values, model expects {} x {}",
                x.len(),
                self.steps,
                self.features
            )));
        }
        Ok(())
    }

    /// Alarm probability for one flattened `L x M` window.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(sigmoid(self.forward_cached(x).logit))
    }

    /// Probabilities for a batch of windows; each is evaluated independently.
    pub fn forward_batch<'a>(&self, windows: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
        windows.into_iter().map(|x| self.forward(x)).collect()
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let steps = self.steps;
        let n_layers = self.widths.len();
        let mut cache = ForwardCache {
            gates: Vec::with_capacity(n_layers),
            cells: Vec::with_capacity(n_layers),
            hidden: Vec::with_capacity(n_layers),
            logit: 0.0,
        };
        for k in 0..n_layers {
            let s = self.layer(k);
            let h = s.hidden;
            let input: &[f64] = if k == 0 { x } else { &cache.hidden[k - 1] };
            let w_in = &self.params[s.w_in()];
            let w_rec = &self.params[s.w_rec()];
            let bias = &self.params[s.bias()];
            let mut gates = vec![0.0; steps * 4 * h];
            let mut cells = vec![0.0; steps * h];
            let mut hid = vec![0.0; steps * h];
            for t in 0..steps {
                let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                z.copy_from_slice(bias);
                mat_vec_acc(z, w_in, &input[t * s.input..(t + 1) * s.input]);
                if t > 0 {
                    mat_vec_acc(z, w_rec, &hid[(t - 1) * h..t * h]);
                }
                for j in 0..h {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[h + j]);
                    let g_g = z[2 * h + j].tanh();
                    let o_g = sigmoid(z[3 * h + j]);
                    z[j] = i_g;
                    z[h + j] = f_g;
                    z[2 * h + j] = g_g;
                    z[3 * h + j] = o_g;
                    let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                    let c = f_g * c_prev + i_g * g_g;
                    cells[t * h + j] = c;
                    hid[t * h + j] = o_g * c.tanh();
                }
            }
            cache.gates.push(gates);
            cache.cells.push(cells);
            cache.hidden.push(hid);
        }
        let d = self.dense_range();
        let w = &self.params[d.start..d.end - 1];
        let top = &cache.hidden[n_layers - 1];
        cache.logit = self.params[d.end - 1] + dot(w, top);
        cache
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logit`.
    pub(crate) fn backward(&self, x: &[f64], cache: &ForwardCache, dlogit: f64, grad: &mut [f64]) {
        let steps = self.steps;
        let n_layers = self.widths.len();
        let d = self.dense_range();
        let top = &cache.hidden[n_layers - 1];
        for (g, &hv) in grad[d.start..d.end - 1].iter_mut().zip(top) {
            *g += dlogit * hv;
        }
        grad[d.end - 1] += dlogit;
        let mut dh_out: Vec<f64> = self.params[d.start..d.end - 1].iter().map(|w| w * dlogit).collect();

        for k in (0..n_layers).rev() {
            let s = self.layer(k);
            let h = s.hidden;
            let input: &[f64] = if k == 0 { x } else { &cache.hidden[k - 1] };
            let gates = &cache.gates[k];
            let cells = &cache.cells[k];
            let hid = &cache.hidden[k];
            let w_in = &self.params[s.w_in()];
            let w_rec = &self.params[s.w_rec()];
            let need_dx = k > 0;
            let mut dx = if need_dx { vec![0.0; steps * s.input] } else { Vec::new() };
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            for t in (0..steps).rev() {
                let gt = &gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    let (i_g, f_g, g_g, o_g) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                    let c = cells[t * h + j];
                    let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                    let tc = c.tanh();
                    let dh = dh_out[t * h + j] + dh_next[j];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                    dc_next[j] = dc * f_g;
                    dz[j] = dc * g_g * i_g * (1.0 - i_g);
                    dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dz[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
                }
                let x_t = &input[t * s.input..(t + 1) * s.input];
                outer_acc(&mut grad[s.w_in()], &dz, x_t);
                if t > 0 {
                    outer_acc(&mut grad[s.w_rec()], &dz, &hid[(t - 1) * h..t * h]);
                }
                for (g, &v) in grad[s.bias()].iter_mut().zip(&dz) {
                    *g += v;
                }
                if need_dx {
                    mat_t_vec_acc(&mut dx[t * s.input..(t + 1) * s.input], w_in, &dz);
                }
                dh_next.fill(0.0);
                mat_t_vec_acc(&mut dh_next, w_rec, &dz);
            }
            dh_out = dx;
        }
    }

    /// Loss and gradient for a single window with target `y`.
    pub fn loss_and_gradient(&self, x: &[f64], y: f64) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let cache = self.forward_cached(x);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(x, &cache, sigmoid(cache.logit) - y, &mut grad);
        Ok((bce_with_logit(cache.logit, y), grad))
    }

    pub fn loss(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_input(x)?;
        Ok(bce_with_logit(self.forward_cached(x).logit, y))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for row-major `W` of shape `out.len() x x.len()`.
fn mat_vec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += W^T v` for row-major `W` of shape `v.len() x out.len()`.
fn mat_t_vec_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * vr;
        }
    }
}

/// `G += u v^T`.
fn outer_acc(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (gv, &vv) in g[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *gv += ur * vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts() {
        let counts = layer_param_counts(&DEFAULT_WIDTHS, 12, 136);
        assert_eq!(counts, vec![1_329_152, 787_456, 197_120, 49_408, 12_416, 3_136, 193]);
        assert_eq!(param_count(&DEFAULT_WIDTHS, 12, 136), 2_378_881);
        assert_eq!(lstm_layer_params(136, 512), 1_329_152);
    }

    #[test]
    fn small_stack_count() {
        // 4((4+5)5+5) + 4((5+3)3+3) + (3*3+1)
        let expected = 4 * ((4 + 5) * 5 + 5) + 4 * ((5 + 3) * 3 + 3) + (3 * 3 + 1);
        assert_eq!(expected, 318);
        let m = LstmStack::new(&[5, 3], 3, 4, 1).unwrap();
        assert_eq!(m.count_params(), 318);
        let enumerated: usize = m.tensors().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(enumerated, m.params().len());
        assert_eq!(enumerated, 318);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = LstmStack::new(&[4, 2], 3, 5, 42).unwrap();
        let b = LstmStack::new(&[4, 2], 3, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = LstmStack::new(&[4, 2], 3, 5, 43).unwrap();
        assert_ne!(a, c);
        let s = a.layer(0);
        let bias = &a.params()[s.bias()];
        assert_eq!(&bias[..4], &[0.0; 4]);
        assert_eq!(&bias[4..8], &[1.0; 4]);
        assert!(a.params()[s.w_in()].iter().all(|w| w.abs() <= 1.0 / 5f64.sqrt()));
        assert!(LstmStack::new(&[4, 0], 3, 5, 1).is_err());
        assert!(LstmStack::new(&[], 3, 5, 1).is_err());
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = LstmStack::zeros(&[3, 2], 4, 2).unwrap();
        for x in [[0.0; 8], [1.0; 8], [-7.5; 8]] {
            assert_eq!(m.forward(&x).unwrap(), 0.5);
        }
        assert!(m.forward(&[0.0; 7]).is_err());
    }

    #[test]
    fn hand_computed_cell() {
        // L=2, M=1, one unit. Gate pre-activations z = w_in*x + w_rec*h + b.
        let mut m = LstmStack::zeros(&[1], 2, 1).unwrap();
        let (w_in, w_rec, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.7], [0.05, 1.0, -0.1, 0.2]);
        let p = m.params_mut();
        p[0..4].copy_from_slice(&w_in);
        p[4..8].copy_from_slice(&w_rec);
        p[8..12].copy_from_slice(&b);
        p[12..15].copy_from_slice(&[0.9, -1.3, 0.25]);
        let x = [0.7, -1.2];

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0, 0.0);
        let mut hs = Vec::new();
        for &xt in &x {
            let z: Vec<f64> = (0..4).map(|g| w_in[g] * xt + w_rec[g] * h + b[g]).collect();
            let (i, f, g, o) = (sig(z[0]), sig(z[1]), z[2].tanh(), sig(z[3]));
            c = f * c + i * g;
            h = o * c.tanh();
            hs.push(h);
        }
        let expected = sig(0.9 * hs[0] - 1.3 * hs[1] + 0.25);
        assert!((m.forward(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_model_dense_bias_gradient() {
        let m = LstmStack::zeros(&[2], 3, 2).unwrap();
        for y in [0.0, 1.0] {
            let (_, g) = m.loss_and_gradient(&[0.3; 6], y).unwrap();
            assert_eq!(*g.last().unwrap(), 0.5 - y);
        }
    }

    #[test]
    fn stable_bce() {
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 0.0).is_finite());
        assert!(bce_with_logit(-800.0, 1.0).is_finite());
        assert!(bce_with_logit(-800.0, 0.0) < 1e-300);
    }
}
