//! Ego-robot dynamics: the four analytic vector fields, forward-Euler
//! stepping, control boxes, and the learned surrogate.

mod learned;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Vec2};
use crate::seed;
use crate::{Error, Result};

pub use learned::{fit_dynamics, input_width as learned_input_width, step_learned, FitConfig, LearnedDynamics, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    SingleIntegrator,
    DoubleIntegrator,
    Dubins,
    Bicycle,
}

impl DynamicsKind {
    pub const ALL: [DynamicsKind; 4] = [
        DynamicsKind::SingleIntegrator,
        DynamicsKind::DoubleIntegrator,
        DynamicsKind::Dubins,
        DynamicsKind::Bicycle,
    ];

    pub fn state_dim(self) -> usize {
        match self {
            DynamicsKind::SingleIntegrator => 2,
            _ => 4,
        }
    }

    pub fn control_dim(self) -> usize {
        2
    }

    /// State components that are angles and must stay wrapped.
    pub fn angle_components(self) -> &'static [usize] {
        match self {
            DynamicsKind::Dubins => &[3],
            DynamicsKind::Bicycle => &[2],
            _ => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DynamicsKind::SingleIntegrator => "single_integrator",
            DynamicsKind::DoubleIntegrator => "double_integrator",
            DynamicsKind::Dubins => "dubins",
            DynamicsKind::Bicycle => "bicycle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Column labels for the state vector.
    pub fn state_labels(self) -> &'static [&'static str] {
        match self {
            DynamicsKind::SingleIntegrator => &["px", "py"],
            DynamicsKind::DoubleIntegrator => &["px", "py", "vx", "vy"],
            DynamicsKind::Dubins => &["px", "py", "v", "theta"],
            DynamicsKind::Bicycle => &["px", "py", "theta", "delta"],
        }
    }

    pub fn from_state_labels(labels: &[&str]) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.state_labels() == labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub kind: DynamicsKind,
    pub components: Vec<f64>,
}

impl EgoState {
    pub fn new(kind: DynamicsKind, components: Vec<f64>) -> Result<Self> {
        if components.len() != kind.state_dim() {
            return Err(Error::InvalidInput(format!(
                "{} state needs {} components, got {}",
                kind.name(),
                kind.state_dim(),
                components.len()
            )));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ego state".into()));
        }
        let mut s = Self { kind, components };
        for &i in kind.angle_components() {
            s.components[i] = wrap_angle(s.components[i]);
        }
        Ok(s)
    }

    /// At rest at `position`, facing `heading`.
    pub fn at_rest(kind: DynamicsKind, position: Vec2, heading: f64) -> Self {
        let components = match kind {
            DynamicsKind::SingleIntegrator => vec![position.x, position.y],
            DynamicsKind::DoubleIntegrator => vec![position.x, position.y, 0.0, 0.0],
            DynamicsKind::Dubins => vec![position.x, position.y, 0.0, wrap_angle(heading)],
            DynamicsKind::Bicycle => vec![position.x, position.y, wrap_angle(heading), 0.0],
        };
        Self { kind, components }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.components[0], self.components[1])
    }

    /// Planar velocity when the state carries it.
    pub fn state_velocity(&self) -> Option<Vec2> {
        let c = &self.components;
        match self.kind {
            DynamicsKind::DoubleIntegrator => Some(Vec2::new(c[2], c[3])),
            DynamicsKind::Dubins => Some(Vec2::from_angle(c[3]) * c[2]),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    /// Same state shifted rigidly in the plane.
    pub fn translated(&self, d: Vec2) -> Self {
        let mut s = self.clone();
        s.components[0] += d.x;
        s.components[1] += d.y;
        s
    }
}

/// Planar ego velocity used for relative observations: the state's own
/// velocity when it has one, else the finite difference from `prev`.
pub fn planar_velocity(prev: Option<&EgoState>, cur: &EgoState, dt: f64) -> Vec2 {
    if let Some(v) = cur.state_velocity() {
        return v;
    }
    match prev {
        Some(p) => (cur.position() - p.position()) / dt,
        None => Vec2::ZERO,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub kind: DynamicsKind,
    pub components: Vec<f64>,
}

impl Control {
    pub fn new(kind: DynamicsKind, components: Vec<f64>) -> Result<Self> {
        if components.len() != kind.control_dim() {
            return Err(Error::InvalidInput(format!(
                "{} control needs {} components, got {}",
                kind.name(),
                kind.control_dim(),
                components.len()
            )));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("control".into()));
        }
        Ok(Self { kind, components })
    }

    pub fn zero(kind: DynamicsKind) -> Self {
        Self { kind, components: vec![0.0; kind.control_dim()] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("control bounds need lower <= upper per component".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn default_for(kind: DynamicsKind) -> Self {
        let (lower, upper) = match kind {
            DynamicsKind::SingleIntegrator | DynamicsKind::DoubleIntegrator => {
                (vec![-1.0, -1.0], vec![1.0, 1.0])
            }
            DynamicsKind::Dubins => (vec![-0.5, -1.0], vec![0.5, 1.0]),
            DynamicsKind::Bicycle => (vec![0.0, -1.0], vec![1.0, 1.0]),
        };
        Self { lower, upper }
    }

    pub fn contains(&self, u: &Control) -> bool {
        u.components.len() == self.lower.len()
            && u.components.iter().enumerate().all(|(i, &c)| c >= self.lower[i] && c <= self.upper[i])
    }

    pub fn clamp(&self, u: &mut Control) {
        for (i, c) in u.components.iter_mut().enumerate() {
            *c = c.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub bicycle_length: f64,
    pub dubins_speed_min: f64,
    pub dubins_speed_max: f64,
    pub bicycle_steer_max: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { bicycle_length: 1.0, dubins_speed_min: 0.0, dubins_speed_max: 1.5, bicycle_steer_max: 0.6 }
    }
}

fn check_kinds(x: &EgoState, u: &Control) -> Result<()> {
    if x.kind != u.kind {
        return Err(Error::KindMismatch { expected: x.kind.name(), got: u.kind.name() });
    }
    if x.components.len() != x.kind.state_dim() || u.components.len() != u.kind.control_dim() {
        return Err(Error::InvalidInput("state or control has the wrong number of components".into()));
    }
    Ok(())
}

/// Continuous-time vector field f(x, u).
pub fn vector_field(x: &EgoState, u: &Control, p: &DynamicsParams) -> Result<Vec<f64>> {
    check_kinds(x, u)?;
    let s = &x.components;
    let a = &u.components;
    Ok(match x.kind {
        DynamicsKind::SingleIntegrator => vec![a[0], a[1]],
        DynamicsKind::DoubleIntegrator => vec![s[2], s[3], a[0], a[1]],
        DynamicsKind::Dubins => {
            let (v, th) = (s[2], s[3]);
            vec![v * th.cos(), v * th.sin(), a[0], a[1]]
        }
        DynamicsKind::Bicycle => {
            let (th, delta) = (s[2], s[3]);
            let (v, l) = (a[0], p.bicycle_length);
            vec![th.cos() / l * v, th.sin() / l * v, delta.tan() / l * v, a[1]]
        }
    })
}

/// Forward-Euler integration without saturation or wrapping.
pub fn euler_raw(x: &EgoState, u: &Control, dt: f64, p: &DynamicsParams) -> Result<Vec<f64>> {
    let f = vector_field(x, u, p)?;
    Ok(x.components.iter().zip(&f).map(|(s, d)| s + d * dt).collect())
}

/// Applies the state saturations and angle wrapping of `kind`.
pub fn normalize_state(kind: DynamicsKind, c: &mut [f64], p: &DynamicsParams) {
    match kind {
        DynamicsKind::Dubins => c[2] = c[2].clamp(p.dubins_speed_min, p.dubins_speed_max),
        DynamicsKind::Bicycle => c[3] = c[3].clamp(-p.bicycle_steer_max, p.bicycle_steer_max),
        _ => {}
    }
    for &i in kind.angle_components() {
        c[i] = wrap_angle(c[i]);
    }
}

/// One forward-Euler step of the true dynamics.
pub fn step_true(x: &EgoState, u: &Control, dt: f64, p: &DynamicsParams) -> Result<EgoState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !x.is_finite() || u.components.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("step input".into()));
    }
    let mut c = euler_raw(x, u, dt, p)?;
    normalize_state(x.kind, &mut c, p);
    Ok(EgoState { kind: x.kind, components: c })
}

/// `l` i.i.d. uniform draws from the bounds box.
pub fn sample_controls(kind: DynamicsKind, bounds: &ControlBounds, l: usize, rng_seed: u64) -> Vec<Control> {
    let mut rng = seed::rng(rng_seed);
    sample_controls_with(kind, bounds, l, &mut rng)
}

pub fn sample_controls_with(kind: DynamicsKind, bounds: &ControlBounds, l: usize, rng: &mut impl Rng) -> Vec<Control> {
    (0..l)
        .map(|_| {
            let components = bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect();
            Control { kind, components }
        })
        .collect()
}

/// One-step ego predictor: the true field or a learned surrogate.
pub trait EgoPredictor: Send + Sync {
    fn kind(&self) -> DynamicsKind;
    fn predict(&self, x: &EgoState, u: &Control) -> Result<EgoState>;
}

/// Position after holding `u` for a second step from `next = predict(x, u)`.
/// Under Euler integration an acceleration or turn-rate input reaches the
/// position only on that second step, so candidates are ranked here.
pub fn held_position(predictor: &dyn EgoPredictor, next: &EgoState, u: &Control) -> Result<Vec2> {
    Ok(predictor.predict(next, u)?.position())
}

/// Where the ego would be `lookahead` seconds after `next` at its planar
/// velocity there. Ranks candidates by the velocity they induce, which a
/// learned model predicts far more accurately than a small position change.
pub fn projected_position(x: &EgoState, next: &EgoState, dt: f64, lookahead: f64) -> Vec2 {
    next.position() + planar_velocity(Some(x), next, dt) * lookahead
}

#[derive(Clone, Copy, Debug)]
pub struct TrueDynamics {
    pub kind: DynamicsKind,
    pub params: DynamicsParams,
    pub dt: f64,
}

impl TrueDynamics {
    pub fn new(kind: DynamicsKind, dt: f64) -> Self {
        Self { kind, params: DynamicsParams::default(), dt }
    }
}

impl EgoPredictor for TrueDynamics {
    fn kind(&self) -> DynamicsKind {
        self.kind
    }

    fn predict(&self, x: &EgoState, u: &Control) -> Result<EgoState> {
        step_true(x, u, self.dt, &self.params)
    }
}
