//! Large-N density equation on a spatial grid.
//!
//! Integrates
//! `∂_t ν(α, θ) = Σ_{β≠α} [f_α(θ, β, w_t(θ)) ν(β, θ) − f_β(θ, α, w_t(θ)) ν(α, θ)]`
//! with `w_{t,ζ}(θ) = ∫ 𝒥(θ, ζ') ν_t(ζ, ζ') κ(dζ')`, using classical RK4 in
//! time and the grid quadrature in space. The flux densities
//! `p_{α→β}(θ, t) = f_β(θ, α, w_t(θ)) ν_t(α, θ)` are recorded at every node.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{KernelMatrix, SpatialGrid};
use crate::model::{FieldVector, RateFamily, SisParams, State, StateSpace, INFECTED, SUSCEPTIBLE};

/// Largest per-site drift of `Σ_α ν` tolerated by [`evolve`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

/// `ν[t_n][α][i]` on a uniform time grid `t_n = n Δt`, `n = 0..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    pub steps: usize,
    pub dt: f64,
    pub n_states: usize,
    pub m: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(steps: usize, dt: f64, n_states: usize, m: usize) -> Self {
        DensityField {
            steps,
            dt,
            n_states,
            m,
            values: vec![0.0; (steps + 1) * n_states * m],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// `ν(α, ·)` at time node `n`.
    pub fn slice(&self, n: usize, state: State) -> &[f64] {
        let o = (n * self.n_states + state) * self.m;
        &self.values[o..o + self.m]
    }

    pub fn slice_mut(&mut self, n: usize, state: State) -> &mut [f64] {
        let o = (n * self.n_states + state) * self.m;
        &mut self.values[o..o + self.m]
    }

    /// All states at time node `n`, as `[α][i]`.
    pub fn snapshot(&self, n: usize) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|a| self.slice(n, a).to_vec()).collect()
    }

    /// Builds an SIS field from `s[n][i]` (infected share `1 − s`).
    pub fn from_susceptible(s: &[Vec<f64>], dt: f64) -> Self {
        let m = s[0].len();
        let mut f = DensityField::zeros(s.len() - 1, dt, 2, m);
        for (n, row) in s.iter().enumerate() {
            f.slice_mut(n, SUSCEPTIBLE).copy_from_slice(row);
            for (o, v) in f.slice_mut(n, INFECTED).iter_mut().zip(row) {
                *o = 1.0 - v;
            }
        }
        f
    }

    /// `s[n][i]` of an SIS field.
    pub fn susceptible(&self) -> Vec<Vec<f64>> {
        (0..=self.steps).map(|n| self.slice(n, SUSCEPTIBLE).to_vec()).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV `t,alpha,theta,value`, writing every `stride`-th time node.
    pub fn write_csv<W: Write>(
        &self,
        states: &StateSpace,
        grid: &SpatialGrid,
        stride: usize,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "t,alpha,theta,value")?;
        for n in (0..=self.steps).step_by(stride.max(1)) {
            for a in 0..self.n_states {
                for (i, v) in self.slice(n, a).iter().enumerate() {
                    writeln!(out, "{},{},{},{v}", self.time(n), states.label(a), grid.nodes()[i])?;
                }
            }
        }
        Ok(())
    }
}

/// Flux densities `p_{α→β}[t_n][i]` for every off-diagonal channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitFlux {
    pub channels: Vec<(State, State)>,
    pub steps: usize,
    pub dt: f64,
    pub m: usize,
    values: Vec<f64>,
}

impl LimitFlux {
    pub fn zeros(channels: Vec<(State, State)>, steps: usize, dt: f64, m: usize) -> Self {
        let len = channels.len() * (steps + 1) * m;
        LimitFlux {
            channels,
            steps,
            dt,
            m,
            values: vec![0.0; len],
        }
    }

    pub fn channel_index(&self, from: State, to: State) -> Option<usize> {
        self.channels.iter().position(|&c| c == (from, to))
    }

    pub fn slice(&self, channel: usize, n: usize) -> &[f64] {
        let o = (channel * (self.steps + 1) + n) * self.m;
        &self.values[o..o + self.m]
    }

    pub fn slice_mut(&mut self, channel: usize, n: usize) -> &mut [f64] {
        let o = (channel * (self.steps + 1) + n) * self.m;
        &mut self.values[o..o + self.m]
    }

    /// Multiplies channel `c` by `factor` on time nodes `times` and grid nodes `nodes`.
    pub fn scale_patch(
        &mut self,
        channel: usize,
        times: std::ops::Range<usize>,
        nodes: std::ops::Range<usize>,
        factor: f64,
    ) {
        for n in times {
            for v in &mut self.slice_mut(channel, n)[nodes.clone()] {
                *v *= factor;
            }
        }
    }

    /// CSV `t,channel,theta,value`, writing every `stride`-th time node.
    pub fn write_csv<W: Write>(
        &self,
        states: &StateSpace,
        grid: &SpatialGrid,
        stride: usize,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "t,channel,theta,value")?;
        for n in (0..=self.steps).step_by(stride.max(1)) {
            for (c, &(a, b)) in self.channels.iter().enumerate() {
                for (i, v) in self.slice(c, n).iter().enumerate() {
                    writeln!(
                        out,
                        "{},{}->{},{},{v}",
                        n as f64 * self.dt,
                        states.label(a),
                        states.label(b),
                        grid.nodes()[i]
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// `w_α(θ_i) = Σ_k weights_k 𝒥(θ_i, θ_k) ν(α, θ_k)` for every grid node.
pub fn field_from_density(kernel: &KernelMatrix, density: &[Vec<f64>]) -> Vec<FieldVector> {
    let m = kernel.size();
    let mut per_state = vec![vec![0.0; m]; density.len()];
    for (out, nu) in per_state.iter_mut().zip(density) {
        kernel.apply(nu, out);
    }
    (0..m)
        .map(|i| FieldVector(per_state.iter().map(|w| w[i]).collect()))
        .collect()
}

struct Rhs<'a> {
    grid: &'a SpatialGrid,
    kernel: &'a KernelMatrix,
    rates: &'a dyn RateFamily,
    n_states: usize,
    m: usize,
    fields: Vec<Vec<f64>>,
}

impl Rhs<'_> {
    fn compute_fields(&mut self, nu: &[f64]) {
        for a in 0..self.n_states {
            self.kernel
                .apply(&nu[a * self.m..(a + 1) * self.m], &mut self.fields[a]);
        }
    }

    /// `out = dν/dt` at state `nu` (flattened `[α][i]`); optionally records fluxes `[c][i]`.
    fn eval(&mut self, nu: &[f64], out: &mut [f64], mut flux: Option<&mut [Vec<f64>]>, channels: &[(State, State)]) {
        self.compute_fields(nu);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut w = vec![0.0; self.n_states];
        for i in 0..self.m {
            for (a, wa) in w.iter_mut().enumerate() {
                *wa = self.fields[a][i];
            }
            let theta = self.grid.nodes()[i];
            for (c, &(from, to)) in channels.iter().enumerate() {
                let p = self.rates.rate(to, theta, from, &w) * nu[from * self.m + i];
                out[from * self.m + i] -= p;
                out[to * self.m + i] += p;
                if let Some(f) = flux.as_deref_mut() {
                    f[c][i] = p;
                }
            }
        }
    }
}

/// Integrates the density equation on `[0, horizon]` with `steps` RK4 steps.
///
/// `nu0[α][i]` must satisfy `Σ_α nu0[α][i] = 1`. Fails if that per-site sum
/// drifts by more than [`NORMALIZATION_TOLERANCE`].
pub fn evolve(
    grid: &SpatialGrid,
    kernel: &KernelMatrix,
    rates: &dyn RateFamily,
    nu0: &[Vec<f64>],
    horizon: f64,
    steps: usize,
) -> Result<(DensityField, LimitFlux)> {
    let n_states = rates.states().size();
    let m = grid.len();
    if nu0.len() != n_states || nu0.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidInput(format!("initial density must be {n_states} x {m}")));
    }
    if kernel.size() != m {
        return Err(Error::InvalidInput("kernel matrix does not match the grid".into()));
    }
    if !(horizon > 0.0 && steps > 0) {
        return Err(Error::InvalidInput(
            "need a positive horizon and at least one step".into(),
        ));
    }
    for i in 0..m {
        let total: f64 = nu0.iter().map(|v| v[i]).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "initial density sums to {total} at node {i}"
            )));
        }
    }
    let dt = horizon / steps as f64;
    let channels = rates.states().channels();
    let mut rhs = Rhs {
        grid,
        kernel,
        rates,
        n_states,
        m,
        fields: vec![vec![0.0; m]; n_states],
    };
    let mut density = DensityField::zeros(steps, dt, n_states, m);
    let mut flux = LimitFlux::zeros(channels.clone(), steps, dt, m);

    let len = n_states * m;
    let mut nu: Vec<f64> = nu0.concat();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut tmp = vec![0.0; len];
    let mut rec = vec![vec![0.0; m]; channels.len()];

    for n in 0..=steps {
        for a in 0..n_states {
            density.slice_mut(n, a).copy_from_slice(&nu[a * m..(a + 1) * m]);
        }
        rhs.eval(&nu, &mut k1, Some(&mut rec), &channels);
        for (c, r) in rec.iter().enumerate() {
            flux.slice_mut(c, n).copy_from_slice(r);
        }
        for i in 0..m {
            let total: f64 = (0..n_states).map(|a| nu[a * m + i]).sum();
            let drift = (total - 1.0).abs();
            if drift > NORMALIZATION_TOLERANCE {
                return Err(Error::NormalizationDrift {
                    time: n as f64 * dt,
                    drift,
                });
            }
        }
        if n == steps {
            break;
        }
        for (t, (x, k)) in tmp.iter_mut().zip(nu.iter().zip(&k1)) {
            *t = x + 0.5 * dt * k;
        }
        rhs.eval(&tmp, &mut k2, None, &channels);
        for (t, (x, k)) in tmp.iter_mut().zip(nu.iter().zip(&k2)) {
            *t = x + 0.5 * dt * k;
        }
        rhs.eval(&tmp, &mut k3, None, &channels);
        for (t, (x, k)) in tmp.iter_mut().zip(nu.iter().zip(&k3)) {
            *t = x + dt * k;
        }
        rhs.eval(&tmp, &mut k4, None, &channels);
        for (idx, x) in nu.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
    }
    Ok((density, flux))
}

/// Largest `|ν(α, θ_i, T) − ν(α, θ_i, 0) − ∫_0^T Σ_{β≠α} (p_{β→α} − p_{α→β}) dt|`,
/// with the time integral taken by the trapezoidal rule on the recorded nodes.
pub fn flux_balance_defect(density: &DensityField, flux: &LimitFlux) -> f64 {
    let m = density.m;
    let steps = density.steps;
    let mut worst = 0.0_f64;
    for a in 0..density.n_states {
        for i in 0..m {
            let mut integral = 0.0;
            for n in 0..=steps {
                let w = if n == 0 || n == steps { 0.5 } else { 1.0 };
                let mut net = 0.0;
                for (c, &(from, to)) in flux.channels.iter().enumerate() {
                    if to == a {
                        net += flux.slice(c, n)[i];
                    }
                    if from == a {
                        net -= flux.slice(c, n)[i];
                    }
                }
                integral += w * net * density.dt;
            }
            let change = density.slice(steps, a)[i] - density.slice(0, a)[i];
            worst = worst.max((change - integral).abs());
        }
    }
    worst
}

/// Infection pressure `k(θ_i) = ∫ 𝒥(θ_i, θ')(1 − s(θ')) dθ'`.
pub fn infection_pressure(kernel: &KernelMatrix, s: &[f64]) -> Vec<f64> {
    let infected: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
    let mut out = vec![0.0; s.len()];
    kernel.apply(&infected, &mut out);
    out
}

/// SIS drift `−β s k(θ) + α (1 − s)`.
pub fn sis_drift(kernel: &KernelMatrix, params: SisParams, s: &[f64]) -> Vec<f64> {
    infection_pressure(kernel, s)
        .iter()
        .zip(s)
        .map(|(k, s)| -params.beta * s * k + params.alpha * (1.0 - s))
        .collect()
}

/// Largest stationary infected profile, by monotone fixed-point iteration
/// `i ← β k(i) / (α + β k(i))` started from `i ≡ 1`. Returns `s = 1 − i`.
/// Requires a nonnegative kernel.
pub fn endemic_equilibrium(kernel: &KernelMatrix, params: SisParams) -> Vec<f64> {
    let m = kernel.size();
    let mut infected = vec![1.0; m];
    let mut k = vec![0.0; m];
    for _ in 0..100_000 {
        kernel.apply(&infected, &mut k);
        let mut change = 0.0_f64;
        for (i, kv) in infected.iter_mut().zip(&k) {
            let next = params.beta * kv / (params.alpha + params.beta * kv);
            change = change.max((next - *i).abs());
            *i = next;
        }
        if change < 1e-15 {
            break;
        }
    }
    infected.iter().map(|i| 1.0 - i).collect()
}

/// `[s, 1 − s]` as a two-state density.
pub fn sis_density(s: &[f64]) -> Vec<Vec<f64>> {
    vec![s.to_vec(), s.iter().map(|v| 1.0 - v).collect()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::{GraphonFamily, GraphonSpec};
    use crate::model::{sis_rates, ConstantRates};

    fn constant_kernel(grid: &SpatialGrid, j0: f64) -> KernelMatrix {
        KernelMatrix::from_fn(|_, _| j0, grid)
    }

    #[test]
    fn constant_kernel_field() {
        let grid = SpatialGrid::circle(16);
        let k = constant_kernel(&grid, 0.7);
        let fields = field_from_density(&k, &sis_density(&[0.6; 16]));
        for f in fields {
            assert!((f.0[INFECTED] - 0.7 * 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_zero_kernel_field_vanishes() {
        let grid = SpatialGrid::circle(32);
        let k = KernelMatrix::from_fn(|a, b| (a - b).cos(), &grid);
        for f in field_from_density(&k, &sis_density(&[0.25; 32])) {
            assert!(f.0[INFECTED].abs() < 1e-15);
        }
    }

    #[test]
    fn field_quadrature_converges() {
        // smooth periodic but not a trig polynomial: the error drops
        // rapidly with M; compare against a much finer grid as reference
        let spec = GraphonSpec::new(GraphonFamily::InhomogeneousCircle {
            mean: 1.0,
            amplitude: 0.5,
        })
        .unwrap();
        let kernel_fn = |a: f64, b: f64| spec.eval(a, b) * (0.3 * (a - b).sin()).exp();
        let nu = |x: f64| 0.5 + 0.3 * (x.sin()).tanh();
        let theta = 0.9;
        let at = |m: usize| {
            let g = SpatialGrid::circle(m);
            g.nodes()
                .iter()
                .zip(g.weights())
                .map(|(&y, w)| w * kernel_fn(theta, y) * nu(y))
                .sum::<f64>()
        };
        let reference = at(4096);
        let e8 = (at(8) - reference).abs();
        let e16 = (at(16) - reference).abs();
        assert!(e16 < e8 / 4.0, "{e8} -> {e16}");
        assert!(e16 < 1e-4);
    }

    fn logistic_infected(t: f64, i0: f64, beta_j: f64, alpha: f64) -> f64 {
        // di/dt = i (β J₀ − α − β J₀ i)
        let r = beta_j - alpha;
        let cap = r / beta_j;
        cap / (1.0 + (cap / i0 - 1.0) * (-r * t).exp())
    }

    #[test]
    fn constant_kernel_matches_logistic_solution() {
        let (beta, alpha, j0, s0) = (2.0, 1.0, 1.5, 0.9);
        let grid = SpatialGrid::circle(8);
        let k = constant_kernel(&grid, j0);
        let rates = sis_rates(SisParams::new(beta, alpha).unwrap());
        let (density, flux) = evolve(&grid, &k, &rates, &sis_density(&[s0; 8]), 10.0, 2000).unwrap();
        for n in [0, 500, 1000, 2000] {
            let t = density.time(n);
            let exact = 1.0 - logistic_infected(t, 1.0 - s0, beta * j0, alpha);
            for v in density.slice(n, SUSCEPTIBLE) {
                assert!((v - exact).abs() < 1e-10, "t = {t}: {v} vs {exact}");
            }
        }
        // approaches s* = α / (β J₀)
        let s_star = alpha / (beta * j0);
        assert!((density.slice(2000, SUSCEPTIBLE)[3] - s_star).abs() < 1e-3);
        let si = flux.channel_index(SUSCEPTIBLE, INFECTED).unwrap();
        let s = density.slice(1000, SUSCEPTIBLE)[0];
        assert!((flux.slice(si, 1000)[0] - beta * j0 * (1.0 - s) * s).abs() < 1e-14);
    }

    #[test]
    fn disease_free_state_is_stationary() {
        let grid = SpatialGrid::circle(12);
        let spec = GraphonSpec::new(GraphonFamily::InhomogeneousCircle {
            mean: 1.0,
            amplitude: 0.5,
        })
        .unwrap();
        let k = KernelMatrix::new(&spec, &grid);
        let rates = sis_rates(SisParams::new(2.0, 1.0).unwrap());
        let (density, _) = evolve(&grid, &k, &rates, &sis_density(&[1.0; 12]), 5.0, 100).unwrap();
        for n in 0..=100 {
            assert!(density.slice(n, SUSCEPTIBLE).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn pure_recovery_closed_form() {
        let grid = SpatialGrid::circle(10);
        let k = constant_kernel(&grid, 1.0);
        let rates = sis_rates(SisParams::new(0.0, 0.8).unwrap());
        let s0: Vec<f64> = grid.nodes().iter().map(|x| 0.5 + 0.3 * x.cos()).collect();
        let (density, _) = evolve(&grid, &k, &rates, &sis_density(&s0), 3.0, 600).unwrap();
        for n in [100, 600] {
            let t = density.time(n);
            for (v, s0) in density.slice(n, SUSCEPTIBLE).iter().zip(&s0) {
                let exact = 1.0 - (1.0 - s0) * (-0.8 * t).exp();
                assert!((v - exact).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn three_state_mass_conservation_and_flux_identity() {
        let states = StateSpace::new(["a", "b", "c"]).unwrap();
        let rates = ConstantRates::new(
            states,
            vec![vec![0.0, 0.7, 0.3], vec![0.2, 0.0, 0.5], vec![1.0, 0.4, 0.0]],
        )
        .unwrap();
        let grid = SpatialGrid::circle(6);
        let k = constant_kernel(&grid, 1.0);
        let nu0 = vec![vec![0.5; 6], vec![0.3; 6], vec![0.2; 6]];
        let mut defects = Vec::new();
        for steps in [50, 100, 200] {
            let (density, flux) = evolve(&grid, &k, &rates, &nu0, 2.0, steps).unwrap();
            for n in 0..=steps {
                for i in 0..6 {
                    let total: f64 = (0..3).map(|a| density.slice(n, a)[i]).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
            defects.push(flux_balance_defect(&density, &flux));
        }
        // trapezoid quadrature of the recorded fluxes: second order
        assert!(
            defects[1] < defects[0] / 3.5 && defects[2] < defects[1] / 3.5,
            "{defects:?}"
        );
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (beta, alpha, j0) = (2.0, 1.0, 1.0);
        let grid = SpatialGrid::circle(2);
        let k = constant_kernel(&grid, j0);
        let rates = sis_rates(SisParams::new(beta, alpha).unwrap());
        let exact = 1.0 - logistic_infected(4.0, 0.05, beta * j0, alpha);
        let err = |steps| {
            let (d, _) = evolve(&grid, &k, &rates, &sis_density(&[0.95; 2]), 4.0, steps).unwrap();
            (d.slice(steps, SUSCEPTIBLE)[0] - exact).abs()
        };
        let (e1, e2) = (err(20), err(40));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "observed order {order}");
    }

    #[test]
    fn rejects_unnormalized_initial_density() {
        let grid = SpatialGrid::circle(4);
        let k = constant_kernel(&grid, 1.0);
        let rates = sis_rates(SisParams::new(1.0, 1.0).unwrap());
        let bad = vec![vec![0.5; 4], vec![0.6; 4]];
        assert!(evolve(&grid, &k, &rates, &bad, 1.0, 10).is_err());
    }

    #[test]
    fn endemic_equilibrium_constant_kernel() {
        let grid = SpatialGrid::circle(8);
        let k = constant_kernel(&grid, 1.0);
        let s = endemic_equilibrium(&k, SisParams::new(2.0, 1.0).unwrap());
        assert!(s.iter().all(|v| (v - 0.5).abs() < 1e-12));
        let drift = sis_drift(&k, SisParams::new(2.0, 1.0).unwrap(), &s);
        assert!(drift.iter().all(|d| d.abs() < 1e-12));
    }
}
