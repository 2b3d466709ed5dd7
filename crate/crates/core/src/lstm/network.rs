//! Parameter tensors, the forward recurrence and its backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::LstmHyperparams;

/// Logit magnitude beyond which the head saturates. Keeps the output
/// strictly inside (0, 1) in f64.
pub(crate) const LOGIT_LIMIT: f64 = 30.0;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Weights of one LSTM layer. Gate rows are stacked as
/// `[input; forget; cell; output]`, each `hidden_dim` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl Params {
    pub fn zeros(hp: &LstmHyperparams) -> Self {
        let h = hp.hidden_dim;
        let layers = (0..hp.num_layers)
            .map(|l| {
                let input = if l == 0 { hp.embed_dim } else { h };
                LayerParams {
                    w_input: Tensor::zeros(4 * h, input),
                    w_hidden: Tensor::zeros(4 * h, h),
                    bias: Tensor::zeros(4 * h, 1),
                }
            })
            .collect();
        Self {
            embedding: Tensor::zeros(hp.charset.size(), hp.embed_dim),
            layers,
            head_weight: Tensor::zeros(1, h),
            head_bias: Tensor::zeros(1, 1),
        }
    }

    /// Uniform(±1/√hidden) gate weights, forget-gate bias 1, uniform(±1)
    /// embeddings, zero head bias.
    pub fn init(hp: &LstmHyperparams, rng: &mut impl Rng) -> Self {
        let h = hp.hidden_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let embedding = Tensor::uniform(hp.charset.size(), hp.embed_dim, 1.0, rng);
        let layers = (0..hp.num_layers)
            .map(|l| {
                let input = if l == 0 { hp.embed_dim } else { h };
                let mut bias = Tensor::zeros(4 * h, 1);
                bias.data[h..2 * h].fill(1.0);
                LayerParams {
                    w_input: Tensor::uniform(4 * h, input, bound, rng),
                    w_hidden: Tensor::uniform(4 * h, h, bound, rng),
                    bias,
                }
            })
            .collect();
        Self {
            embedding,
            layers,
            head_weight: Tensor::uniform(1, h, bound, rng),
            head_bias: Tensor::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        Self {
            embedding: z(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_input: z(&l.w_input),
                    w_hidden: z(&l.w_hidden),
                    bias: z(&l.bias),
                })
                .collect(),
            head_weight: z(&self.head_weight),
            head_bias: z(&self.head_bias),
        }
    }

    /// Named tensors in persistence order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_owned(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w_input"), &layer.w_input));
            out.push((format!("layer{l}.w_hidden"), &layer.w_hidden));
            out.push((format!("layer{l}.bias"), &layer.bias));
        }
        out.push(("head.weight".to_owned(), &self.head_weight));
        out.push(("head.bias".to_owned(), &self.head_bias));
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.w_input);
            out.push(&mut layer.w_hidden);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Params, alpha: f64) {
        let others = other.tensors();
        for (t, (_, o)) in self.tensors_mut().into_iter().zip(others) {
            for (v, g) in t.data.iter_mut().zip(&o.data) {
                *v += alpha * g;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Four independent partial sums, so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Values kept from one cell step for the backward pass.
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i; f; g; o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn cell_step(layer: &LayerParams, x: Vec<f64>, h_prev: Vec<f64>, c_prev: Vec<f64>) -> StepCache {
    let hd = h_prev.len();
    let mut gates = layer.bias.data.clone();
    for (r, z) in gates.iter_mut().enumerate() {
        *z += dot(layer.w_input.row(r), &x) + dot(layer.w_hidden.row(r), &h_prev);
    }
    for (r, z) in gates.iter_mut().enumerate() {
        *z = if (2 * hd..3 * hd).contains(&r) {
            z.tanh()
        } else {
            sigmoid(*z)
        };
    }
    let (i, rest) = gates.split_at(hd);
    let (f, rest) = rest.split_at(hd);
    let (g, o) = rest.split_at(hd);
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        x,
        h_prev,
        c_prev,
        gates,
        tanh_c,
        c,
        h,
    }
}

pub(crate) struct ForwardPass {
    steps: Vec<Vec<StepCache>>,
    /// Dropout masks on the inputs of layers 1.., indexed `[layer][t]`.
    masks: Vec<Vec<Vec<f64>>>,
    logit: f64,
    pub output: f64,
}

/// Runs the network over `seq`. Dropout masks are drawn from `dropout_rng`
/// when it is given and the dropout rate is positive.
pub(crate) fn forward(
    params: &Params,
    hp: &LstmHyperparams,
    seq: &[usize],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> ForwardPass {
    let hd = hp.hidden_dim;
    let keep = 1.0 - hp.dropout_rate;
    let mut inputs: Vec<Vec<f64>> = seq.iter().map(|&i| params.embedding.row(i).to_vec()).collect();
    let mut steps = Vec::with_capacity(params.layers.len());
    let mut masks = Vec::with_capacity(params.layers.len());

    for (l, layer) in params.layers.iter().enumerate() {
        let mut layer_masks = Vec::new();
        if let (true, Some(rng)) = (l > 0 && hp.dropout_rate > 0.0, dropout_rng.as_deref_mut()) {
            for x in inputs.iter_mut() {
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                layer_masks.push(mask);
            }
        }
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut layer_steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let step = cell_step(layer, x, h, c);
            h = step.h.clone();
            c = step.c.clone();
            layer_steps.push(step);
        }
        inputs = layer_steps.iter().map(|s| s.h.clone()).collect();
        steps.push(layer_steps);
        masks.push(layer_masks);
    }

    let top = inputs.last().expect("sequence is non-empty");
    let raw = dot(params.head_weight.row(0), top) + params.head_bias.data[0];
    let logit = raw.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    ForwardPass {
        steps,
        masks,
        logit: raw,
        output: sigmoid(logit),
    }
}

/// Squared error of `pass` against `target` and its gradient with respect to
/// every parameter, by backpropagation through time.
pub(crate) fn backward(params: &Params, seq: &[usize], pass: &ForwardPass, target: f64) -> (f64, Params) {
    let mut grads = params.zeros_like();
    let y = pass.output;
    let loss = (y - target).powi(2);
    let dlogit = if pass.logit.abs() > LOGIT_LIMIT {
        0.0
    } else {
        2.0 * (y - target) * y * (1.0 - y)
    };

    let top_steps = pass.steps.last().expect("at least one layer");
    let t_len = top_steps.len();
    let h_top = &top_steps[t_len - 1].h;
    axpy(dlogit, h_top, grads.head_weight.row_mut(0));
    grads.head_bias.data[0] += dlogit;

    let hd = h_top.len();
    // Gradient arriving at each step's hidden output from the layer above.
    let mut dh_above = vec![vec![0.0; hd]; t_len];
    axpy(dlogit, params.head_weight.row(0), &mut dh_above[t_len - 1]);

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let lg = &mut grads.layers[l];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        let mut dx_all = vec![Vec::new(); t_len];

        for t in (0..t_len).rev() {
            let s = &pass.steps[l][t];
            for k in 0..hd {
                let (i, f, g, o) = (s.gates[k], s.gates[hd + k], s.gates[2 * hd + k], s.gates[3 * hd + k]);
                let dh = dh_above[t][k] + dh_next[k];
                let d_o = dh * s.tanh_c[k];
                let dc = dc_next[k] + dh * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                dz[k] = dc * g * i * (1.0 - i);
                dz[hd + k] = dc * s.c_prev[k] * f * (1.0 - f);
                dz[2 * hd + k] = dc * i * (1.0 - g * g);
                dz[3 * hd + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let mut dx = vec![0.0; s.x.len()];
            dh_next.fill(0.0);
            for (r, &d) in dz.iter().enumerate() {
                lg.bias.data[r] += d;
                if d == 0.0 {
                    continue;
                }
                axpy(d, &s.x, lg.w_input.row_mut(r));
                axpy(d, &s.h_prev, lg.w_hidden.row_mut(r));
                axpy(d, layer.w_input.row(r), &mut dx);
                axpy(d, layer.w_hidden.row(r), &mut dh_next);
            }
            dx_all[t] = dx;
        }

        if l > 0 {
            if let Some(masks) = pass.masks.get(l).filter(|m| !m.is_empty()) {
                for (dx, mask) in dx_all.iter_mut().zip(masks) {
                    dx.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                }
            }
            dh_above = dx_all;
        } else {
            for (&idx, dx) in seq.iter().zip(&dx_all) {
                axpy(1.0, dx, grads.embedding.row_mut(idx));
            }
        }
    }
    (loss, grads)
}
