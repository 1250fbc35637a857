use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels;
use crate::params::ParamBundle;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => kernels::sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

/// Layer widths (input first, output last) and the hidden nonlinearity.
/// The final layer is always linear.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self { widths, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidSpec(format!("mlp needs at least 2 widths, got {:?}", self.widths)));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidSpec(format!("mlp widths must be >= 1: {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
}

impl LstmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::InvalidSpec(format!("lstm widths must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn lookup(bundle: &ParamBundle, name: &str, shape: &[usize]) -> Result<usize> {
    let idx = bundle.index_of(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
    if bundle.tensor(idx).shape() != shape {
        return Err(Error::Shape(format!(
            "`{name}` has shape {:?}, expected {shape:?}",
            bundle.tensor(idx).shape()
        )));
    }
    Ok(idx)
}

/// Multilayer perceptron bound to parameter slots `{prefix}.l{i}.weight` and
/// `{prefix}.l{i}.bias` of a bundle.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Appends freshly initialized parameters to `bundle`: fan-in scaled
    /// uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, prefix: &str, bundle: &mut ParamBundle, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = bundle.push(format!("{prefix}.l{i}.weight"), uniform_tensor(rng, &[fan_out, fan_in], bound))?;
            let b = bundle.push(format!("{prefix}.l{i}.bias"), Tensor::zeros(&[fan_out]))?;
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    /// Resolves an existing set of parameters, checking every shape.
    pub fn bind(spec: MlpSpec, prefix: &str, bundle: &ParamBundle) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, pair) in spec.widths.windows(2).enumerate() {
            let w = lookup(bundle, &format!("{prefix}.l{i}.weight"), &[pair[1], pair[0]])?;
            let b = lookup(bundle, &format!("{prefix}.l{i}.bias"), &[pair[1]])?;
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// `(weight, bias)` bundle indices per layer.
    pub fn layer_params(&self) -> &[(usize, usize)] {
        &self.layers
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, params: &ParamBundle, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.expect_matrix("mlp input")?;
        if cols != self.spec.input() {
            return Err(Error::Shape(format!("mlp input width {cols}, expected {}", self.spec.input())));
        }
        let mut cur = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (li, &(w, b)) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.spec.widths[li], self.spec.widths[li + 1]);
            let mut out = vec![0.0; rows * fan_out];
            kernels::linear_forward(
                &cur,
                rows,
                params.tensor(w).data(),
                fan_out,
                fan_in,
                Some(params.tensor(b).data()),
                &mut out,
            );
            if li != last {
                for v in &mut out {
                    *v = self.spec.activation.apply(*v);
                }
            }
            cur = out;
        }
        Tensor::matrix(rows, self.spec.output(), cur)
    }

    /// Single-sample forward pass without shape checks beyond debug asserts.
    pub fn forward_row(&self, params: &ParamBundle, x: &[f64]) -> Vec<f64> {
        self.forward_row_from(params, 0, x.to_vec())
    }

    /// Continues a single-sample pass whose layers before `start` are done;
    /// `x` is the (pre-activation) output of layer `start - 1`, or the raw
    /// input when `start == 0`.
    pub fn forward_row_from(&self, params: &ParamBundle, start: usize, x: Vec<f64>) -> Vec<f64> {
        let mut cur = x;
        let last = self.layers.len() - 1;
        if start > 0 {
            for v in &mut cur {
                *v = self.spec.activation.apply(*v);
            }
        }
        for li in start..self.layers.len() {
            let (w, b) = self.layers[li];
            let (fan_in, fan_out) = (self.spec.widths[li], self.spec.widths[li + 1]);
            let mut out = vec![0.0; fan_out];
            kernels::linear_forward(
                &cur,
                1,
                params.tensor(w).data(),
                fan_out,
                fan_in,
                Some(params.tensor(b).data()),
                &mut out,
            );
            if li != last {
                for v in &mut out {
                    *v = self.spec.activation.apply(*v);
                }
            }
            cur = out;
        }
        cur
    }

    /// Records the forward pass on the tape.
    pub fn trace(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        let last = self.layers.len() - 1;
        for (li, &(w, b)) in self.layers.iter().enumerate() {
            let (wn, bn) = (g.param(w), g.param(b));
            cur = g.linear(cur, wn, Some(bn))?;
            if li != last {
                cur = g.activation(cur, self.spec.activation);
            }
        }
        Ok(cur)
    }
}

/// Hidden and cell state of a batch of LSTM sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Standard LSTM (gate order input, forget, candidate, output) bound to
/// `{prefix}.w_ih`, `{prefix}.w_hh`, `{prefix}.bias`.
#[derive(Clone, Debug)]
pub struct Lstm {
    spec: LstmSpec,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

impl Lstm {
    /// Fan-in scaled uniform weights, zero biases except +1 on the forget gate.
    pub fn init<R: Rng + ?Sized>(spec: LstmSpec, prefix: &str, bundle: &mut ParamBundle, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (i, h) = (spec.input, spec.hidden);
        let w_ih = bundle.push(format!("{prefix}.w_ih"), uniform_tensor(rng, &[4 * h, i], 1.0 / (i as f64).sqrt()))?;
        let w_hh = bundle.push(format!("{prefix}.w_hh"), uniform_tensor(rng, &[4 * h, h], 1.0 / (h as f64).sqrt()))?;
        let mut b = Tensor::zeros(&[4 * h]);
        b.data_mut()[h..2 * h].fill(1.0);
        let bias = bundle.push(format!("{prefix}.bias"), b)?;
        Ok(Self { spec, w_ih, w_hh, bias })
    }

    pub fn bind(spec: LstmSpec, prefix: &str, bundle: &ParamBundle) -> Result<Self> {
        spec.validate()?;
        let (i, h) = (spec.input, spec.hidden);
        Ok(Self {
            spec,
            w_ih: lookup(bundle, &format!("{prefix}.w_ih"), &[4 * h, i])?,
            w_hh: lookup(bundle, &format!("{prefix}.w_hh"), &[4 * h, h])?,
            bias: lookup(bundle, &format!("{prefix}.bias"), &[4 * h])?,
        })
    }

    pub fn spec(&self) -> LstmSpec {
        self.spec
    }

    pub fn zero_state(&self, rows: usize) -> LstmState {
        LstmState { h: Tensor::zeros(&[rows, self.spec.hidden]), c: Tensor::zeros(&[rows, self.spec.hidden]) }
    }

    /// One recurrence step for a batch.
    pub fn step(&self, params: &ParamBundle, state: &LstmState, x: &Tensor) -> Result<LstmState> {
        let (rows, cols) = x.expect_matrix("lstm input")?;
        if cols != self.spec.input {
            return Err(Error::Shape(format!("lstm input width {cols}, expected {}", self.spec.input)));
        }
        if state.h.rows() != rows {
            return Err(Error::Shape(format!("lstm state has {} rows, input {rows}", state.h.rows())));
        }
        let hd = self.spec.hidden;
        let mut h = Vec::with_capacity(rows * hd);
        let mut c = Vec::with_capacity(rows * hd);
        for r in 0..rows {
            let mut pre = self.recurrent_preactivation(params, state.h.row(r));
            self.add_input(params, x.row(r), &mut pre);
            let (hr, cr) = Self::cell(hd, &pre, state.c.row(r));
            h.extend(hr);
            c.extend(cr);
        }
        Ok(LstmState { h: Tensor::matrix(rows, hd, h)?, c: Tensor::matrix(rows, hd, c)? })
    }

    /// `W_hh h + b`, the part of the gate preactivation that does not depend
    /// on the current input.
    pub fn recurrent_preactivation(&self, params: &ParamBundle, h: &[f64]) -> Vec<f64> {
        let hd = self.spec.hidden;
        let mut pre = vec![0.0; 4 * hd];
        kernels::linear_forward(h, 1, params.tensor(self.w_hh).data(), 4 * hd, hd, Some(params.tensor(self.bias).data()), &mut pre);
        pre
    }

    /// Adds `W_ih x` to a gate preactivation.
    pub fn add_input(&self, params: &ParamBundle, x: &[f64], pre: &mut [f64]) {
        let w = params.tensor(self.w_ih).data();
        let i = self.spec.input;
        for (o, p) in pre.iter_mut().enumerate() {
            *p += kernels::dot(x, &w[o * i..(o + 1) * i]);
        }
    }

    /// Applies the gate nonlinearities to a preactivation; returns `(h, c)`.
    pub fn cell(hd: usize, pre: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for j in 0..hd {
            let ig = kernels::sigmoid(pre[j]);
            let fg = kernels::sigmoid(pre[hd + j]);
            let gg = pre[2 * hd + j].tanh();
            let og = kernels::sigmoid(pre[3 * hd + j]);
            c[j] = fg * c_prev[j] + ig * gg;
            h[j] = og * c[j].tanh();
        }
        (h, c)
    }

    /// Runs the sequence from a zero state and returns the final hidden state
    /// (rows x hidden).
    pub fn forward(&self, params: &ParamBundle, seq: &[Tensor]) -> Result<Tensor> {
        let first = seq.first().ok_or(Error::EmptySequence)?;
        let mut state = self.zero_state(first.rows());
        for x in seq {
            state = self.step(params, &state, x)?;
        }
        Ok(state.h)
    }

    pub fn trace(&self, g: &mut Graph<'_>, seq: &[NodeId]) -> Result<NodeId> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let hd = self.spec.hidden;
        let (w_ih, w_hh, bias) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        let mut state: Option<(NodeId, NodeId)> = None;
        for &x in seq {
            let mut pre = g.linear(x, w_ih, Some(bias))?;
            if let Some((h, _)) = state {
                let rec = g.linear(h, w_hh, None)?;
                pre = g.add(pre, rec)?;
            }
            let i = g.slice_cols(pre, 0, hd)?;
            let i = g.sigmoid(i);
            let gc = g.slice_cols(pre, 2 * hd, 3 * hd)?;
            let gc = g.tanh(gc);
            let o = g.slice_cols(pre, 3 * hd, 4 * hd)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, gc)?;
            if let Some((_, c_prev)) = state {
                let f = g.slice_cols(pre, hd, 2 * hd)?;
                let f = g.sigmoid(f);
                let keep = g.mul(f, c_prev)?;
                c = g.add(keep, c)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            state = Some((h, c));
        }
        Ok(state.unwrap().0)
    }
}
