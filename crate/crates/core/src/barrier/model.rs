use diffcomp::{kernels, Activation, Graph, Lstm, LstmSpec, Mlp, MlpSpec, NodeId, ParamBundle, Tensor};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsKind, EgoState};
use crate::observe::{ObstacleHistory, RelativeState};
use crate::seed;
use crate::{Error, Result};

/// Translation-free ego features fed to the ego encoder.
///
/// Position never enters, so the barrier depends on world coordinates only
/// through relative obstacle states.
pub fn ego_features(x: &EgoState) -> Vec<f64> {
    let c = &x.components;
    match x.kind {
        DynamicsKind::SingleIntegrator => vec![1.0],
        DynamicsKind::DoubleIntegrator => vec![c[2], c[3]],
        DynamicsKind::Dubins => vec![c[2], c[3].cos(), c[3].sin()],
        DynamicsKind::Bicycle => vec![c[2].cos(), c[2].sin(), c[3]],
    }
}

pub fn ego_feature_dim(kind: DynamicsKind) -> usize {
    match kind {
        DynamicsKind::SingleIntegrator => 1,
        DynamicsKind::DoubleIntegrator => 2,
        _ => 3,
    }
}

/// Margin, class-K slope and time step of the barrier conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierHyper {
    pub gamma: f64,
    pub kappa: f64,
    pub dt: f64,
}

impl Default for BarrierHyper {
    fn default() -> Self {
        Self { gamma: 0.01, kappa: 0.1, dt: 0.1 }
    }
}

impl BarrierHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.kappa > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidInput("gamma, kappa and dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierArch {
    pub kind: DynamicsKind,
    /// History length.
    pub k: usize,
    pub lstm_hidden: usize,
    /// Ego-encoder layer widths after the input (last one is its output).
    pub ego_widths: Vec<usize>,
    /// Hidden widths of the head; a scalar output layer follows.
    pub head_hidden: Vec<usize>,
    pub activation: String,
}

impl BarrierArch {
    pub fn new(kind: DynamicsKind) -> Self {
        Self {
            kind,
            k: 5,
            lstm_hidden: 64,
            ego_widths: vec![64, 64],
            head_hidden: vec![128, 128],
            activation: Activation::Tanh.name().into(),
        }
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::from_name(&self.activation)
            .ok_or_else(|| Error::InvalidInput(format!("unknown activation {:?}", self.activation)))
    }

    fn ego_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![ego_feature_dim(self.kind)];
        w.extend_from_slice(&self.ego_widths);
        Ok(MlpSpec::new(w, self.activation()?)?)
    }

    fn head_spec(&self) -> Result<MlpSpec> {
        let enc_out = *self.ego_widths.last().ok_or_else(|| Error::InvalidInput("empty ego encoder".into()))?;
        let mut w = vec![self.lstm_hidden + enc_out];
        w.extend_from_slice(&self.head_hidden);
        w.push(1);
        Ok(MlpSpec::new(w, self.activation()?)?)
    }

    fn lstm_spec(&self) -> LstmSpec {
        LstmSpec { input: RelativeState::DIM, hidden: self.lstm_hidden }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("history length k must be at least 1".into()));
        }
        if self.head_hidden.is_empty() {
            return Err(Error::InvalidInput("head needs at least one hidden layer".into()));
        }
        self.ego_spec()?;
        self.head_spec()?;
        self.lstm_spec().validate()?;
        Ok(())
    }
}

/// LSTM state after all but the newest history entry, plus that state's
/// recurrent gate preactivation. Lets many candidate successors that share
/// the older entries be scored with one cell step each.
#[derive(Clone, Debug)]
pub struct HistoryPrefix {
    pub c: Vec<f64>,
    pub pre: Vec<f64>,
}

/// B(x, h) = head(concat(lstm(h), ego_encoder(x))).
#[derive(Clone, Debug)]
pub struct BarrierModel {
    pub arch: BarrierArch,
    pub hyper: BarrierHyper,
    pub params: ParamBundle,
    lstm: Lstm,
    ego: Mlp,
    head: Mlp,
}

impl BarrierModel {
    pub fn new(arch: BarrierArch, hyper: BarrierHyper, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        hyper.validate()?;
        let mut rng = seed::rng(seed_value);
        let mut params = ParamBundle::new();
        let lstm = Lstm::init(arch.lstm_spec(), "lstm", &mut params, &mut rng)?;
        let ego = Mlp::init(arch.ego_spec()?, "ego", &mut params, &mut rng)?;
        let head = Mlp::init(arch.head_spec()?, "head", &mut params, &mut rng)?;
        Ok(Self { arch, hyper, params, lstm, ego, head })
    }

    /// Rebinds an existing parameter bundle, validating every shape.
    pub fn from_params(arch: BarrierArch, hyper: BarrierHyper, params: ParamBundle) -> Result<Self> {
        arch.validate()?;
        hyper.validate()?;
        let lstm = Lstm::bind(arch.lstm_spec(), "lstm", &params)?;
        let ego = Mlp::bind(arch.ego_spec()?, "ego", &params)?;
        let head = Mlp::bind(arch.head_spec()?, "head", &params)?;
        Ok(Self { arch, hyper, params, lstm, ego, head })
    }

    pub fn lstm(&self) -> &Lstm {
        &self.lstm
    }

    pub fn ego_encoder(&self) -> &Mlp {
        &self.ego
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    fn check(&self, x: &EgoState, h: &ObstacleHistory) -> Result<()> {
        if x.kind != self.arch.kind {
            return Err(Error::KindMismatch { expected: self.arch.kind.name(), got: x.kind.name() });
        }
        if h.k() != self.arch.k {
            return Err(Error::InvalidInput(format!("history length {}, model expects {}", h.k(), self.arch.k)));
        }
        Ok(())
    }

    /// Scalar barrier value.
    pub fn value(&self, x: &EgoState, h: &ObstacleHistory) -> Result<f64> {
        self.check(x, h)?;
        let prefix = self.prefix(&h.steps()[..h.k() - 1]);
        let ego = self.head_ego_part(x);
        Ok(self.value_from_parts(&prefix, &h.last(), &ego))
    }

    /// Runs the LSTM over `steps` from a zero state.
    pub fn prefix(&self, steps: &[RelativeState]) -> HistoryPrefix {
        let hd = self.arch.lstm_hidden;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for s in steps {
            let mut pre = self.lstm.recurrent_preactivation(&self.params, &h);
            self.lstm.add_input(&self.params, &s.to_array(), &mut pre);
            (h, c) = Lstm::cell(hd, &pre, &c);
        }
        let pre = self.lstm.recurrent_preactivation(&self.params, &h);
        HistoryPrefix { c, pre }
    }

    /// First head layer's contribution from the ego encoding, bias included.
    pub fn head_ego_part(&self, x: &EgoState) -> Vec<f64> {
        let enc = self.ego.forward_row(&self.params, &ego_features(x));
        let (w, b) = self.head.layer_params()[0];
        let w = self.params.tensor(w).data();
        let b = self.params.tensor(b).data();
        let hd = self.arch.lstm_hidden;
        let in_w = hd + enc.len();
        (0..b.len()).map(|o| b[o] + kernels::dot(&w[o * in_w + hd..(o + 1) * in_w], &enc)).collect()
    }

    /// Finishes B given the history prefix, newest relative state and ego part.
    pub fn value_from_parts(&self, prefix: &HistoryPrefix, last: &RelativeState, ego_part: &[f64]) -> f64 {
        let hd = self.arch.lstm_hidden;
        let mut pre = prefix.pre.clone();
        self.lstm.add_input(&self.params, &last.to_array(), &mut pre);
        let (h, _) = Lstm::cell(hd, &pre, &prefix.c);
        let (w, _) = self.head.layer_params()[0];
        let w = self.params.tensor(w).data();
        let in_w = w.len() / ego_part.len();
        let z: Vec<f64> = (0..ego_part.len()).map(|o| ego_part[o] + kernels::dot(&w[o * in_w..o * in_w + hd], &h)).collect();
        self.head.forward_row_from(&self.params, 1, z)[0]
    }

    /// Records B for a batch of `(x, h)` on the tape; returns an `[n x 1]` node.
    pub fn trace(&self, g: &mut Graph<'_>, xs: &[&EgoState], hs: &[&ObstacleHistory]) -> Result<NodeId> {
        if xs.len() != hs.len() || xs.is_empty() {
            return Err(Error::InvalidInput("barrier batch needs equal, non-zero numbers of states and histories".into()));
        }
        for (x, h) in xs.iter().zip(hs) {
            self.check(x, h)?;
        }
        let k = self.arch.k;
        let seq: Vec<NodeId> = (0..k)
            .map(|t| {
                let rows: Vec<[f64; 4]> = hs.iter().map(|h| h.steps()[t].to_array()).collect();
                Tensor::from_rows(&rows).map(|m| g.input(m))
            })
            .collect::<std::result::Result<_, _>>()?;
        let hid = self.lstm.trace(g, &seq)?;
        let feats: Vec<Vec<f64>> = xs.iter().map(|x| ego_features(x)).collect();
        let fx = g.input(Tensor::from_rows(&feats)?);
        let enc = self.ego.trace(g, fx)?;
        let d = g.concat_cols(&[hid, enc])?;
        Ok(self.head.trace(g, d)?)
    }
}
