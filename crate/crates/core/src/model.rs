//! State space, transition-rate families and local fields.
//!
//! Positions live on the circle `[0, 2π)` unless a graphon family says
//! otherwise. A [`RateFamily`] maps `(to, position, from, field)` to a
//! nonnegative jump intensity; self-transitions always have rate zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::Network;

/// Index of a state inside a [`StateSpace`].
pub type State = usize;

/// Susceptible state of the SIS model.
pub const SUSCEPTIBLE: State = 0;
/// Infected state of the SIS model.
pub const INFECTED: State = 1;

/// Finite, ordered set of node states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "state space needs at least two states, got {}",
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[i + 1..].contains(a) {
                return Err(Error::InvalidInput(format!("duplicate state label {a:?}")));
            }
        }
        Ok(StateSpace { labels })
    }

    /// The two-state `[S, I]` space.
    pub fn sis() -> Self {
        StateSpace {
            labels: vec!["S".into(), "I".into()],
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: State) -> &str {
        &self.labels[state]
    }

    pub fn index_of(&self, label: &str) -> Option<State> {
        self.labels.iter().position(|l| l == label)
    }

    /// All ordered pairs `(from, to)` with `from != to`, row-major.
    pub fn channels(&self) -> Vec<(State, State)> {
        let n = self.size();
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect()
    }
}

/// Declared bounds of a rate family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    /// `c_f`: lower bound on off-diagonal rates.
    pub lower: f64,
    /// `C_f`: upper bound on off-diagonal rates over the admissible field range.
    pub upper: f64,
    /// Lipschitz constant in `(position, field)`.
    pub lipschitz: f64,
    /// Whether `lower > 0` actually holds on the admissible domain. The SIS
    /// infection rate vanishes when no neighbour is infected, so it is `false` there.
    pub bounded_below: bool,
}

/// Transition intensities `f_(to)(position, from, field)`.
pub trait RateFamily: Send + Sync {
    fn states(&self) -> &StateSpace;

    /// Rate of the jump `from -> to` for a node at `position` seeing `field`.
    /// Must return exactly `0.0` when `to == from`.
    fn rate(&self, to: State, position: f64, from: State, field: &[f64]) -> f64;

    fn bounds(&self) -> RateBounds;

    /// Total exit rate out of `from`.
    fn exit_rate(&self, position: f64, from: State, field: &[f64]) -> f64 {
        (0..self.states().size())
            .filter(|&to| to != from)
            .map(|to| self.rate(to, position, from, field))
            .sum()
    }
}

/// Infection coefficient `beta` and recovery rate `alpha` of the SIS model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisParams {
    pub beta: f64,
    pub alpha: f64,
}

impl SisParams {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        // beta = 0 is the pure-recovery model used as a reference case.
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be nonnegative, got {beta}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        Ok(SisParams { beta, alpha })
    }
}

/// SIS rates: `S -> I` at `beta * w_I`, `I -> S` at `alpha`.
#[derive(Debug, Clone)]
pub struct SisRates {
    params: SisParams,
    states: StateSpace,
    field_bound: f64,
}

impl SisRates {
    pub fn params(&self) -> SisParams {
        self.params
    }

    /// Sets the largest `|w_I|` used to report `C_f` (default 1).
    pub fn with_field_bound(mut self, bound: f64) -> Self {
        self.field_bound = bound.abs();
        self
    }
}

/// Builds the SIS rate family.
pub fn sis_rates(params: SisParams) -> SisRates {
    SisRates {
        params,
        states: StateSpace::sis(),
        field_bound: 1.0,
    }
}

impl RateFamily for SisRates {
    fn states(&self) -> &StateSpace {
        &self.states
    }

    fn rate(&self, to: State, _position: f64, from: State, field: &[f64]) -> f64 {
        match (from, to) {
            (SUSCEPTIBLE, INFECTED) => self.params.beta * field[INFECTED],
            (INFECTED, SUSCEPTIBLE) => self.params.alpha,
            _ => 0.0,
        }
    }

    fn bounds(&self) -> RateBounds {
        let p = self.params;
        RateBounds {
            lower: 0.0,
            upper: p.alpha.max(p.beta * self.field_bound),
            lipschitz: p.beta,
            bounded_below: false,
        }
    }
}

/// Field-independent rates given by a full matrix `rates[from][to]`.
/// Mostly useful as a reference model in tests.
#[derive(Debug, Clone)]
pub struct ConstantRates {
    states: StateSpace,
    rates: Vec<Vec<f64>>,
}

impl ConstantRates {
    pub fn new(states: StateSpace, rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.size();
        if rates.len() != n || rates.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("rate matrix must be {n}x{n}")));
        }
        for (a, row) in rates.iter().enumerate() {
            for (b, &r) in row.iter().enumerate() {
                if a != b && !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "rate {a}->{b} = {r} is not a finite nonnegative number"
                    )));
                }
            }
        }
        Ok(ConstantRates { states, rates })
    }
}

impl RateFamily for ConstantRates {
    fn states(&self) -> &StateSpace {
        &self.states
    }

    fn rate(&self, to: State, _position: f64, from: State, _field: &[f64]) -> f64 {
        if to == from {
            0.0
        } else {
            self.rates[from][to]
        }
    }

    fn bounds(&self) -> RateBounds {
        let off = self.states.channels().into_iter().map(|(a, b)| self.rates[a][b]);
        let (lo, hi) = off.fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        RateBounds {
            lower: lo,
            upper: hi,
            lipschitz: 0.0,
            bounded_below: lo > 0.0,
        }
    }
}

/// Per-state field `w = (w_ζ)_ζ` seen by one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVector(pub Vec<f64>);

impl FieldVector {
    pub fn zeros(n_states: usize) -> Self {
        FieldVector(vec![0.0; n_states])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Field of node `node`: `w_β = φ_N⁻¹ Σ_k J^{jk} χ{σ^k = β}`.
pub fn local_field(node: usize, network: &Network, config: &[State], n_states: usize) -> Result<FieldVector> {
    if node >= network.n() {
        return Err(Error::IndexOutOfRange {
            index: node,
            len: network.n(),
        });
    }
    if config.len() != network.n() {
        return Err(Error::InvalidInput(format!(
            "configuration has {} entries, network has {} nodes",
            config.len(),
            network.n()
        )));
    }
    let mut counts = vec![0_i64; n_states];
    for &(k, weight) in network.row(node) {
        counts[config[k]] += weight as i64;
    }
    let scale = network.phi().recip();
    Ok(FieldVector(counts.into_iter().map(|c| c as f64 * scale).collect()))
}

/// Geodesic distance on the circle `[0, 2π)`.
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let d = (a - b).rem_euclid(tau);
    d.min(tau - d)
}
