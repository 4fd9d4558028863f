//! Rate functions: the Poisson entropy `ℓ`, the uncoupled functional `I`,
//! the coupled functional `G` on flux densities, the contracted cost
//! `L_t(r, w)` and the closed-form SIS Lagrangian.
//!
//! Space is integrated once against `κ = ρ dθ` (the grid weights), time by
//! the trapezoidal rule on the recorded nodes.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{KernelMatrix, SpatialGrid};
use crate::meanfield::{infection_pressure, DensityField, LimitFlux};
use crate::model::{FieldVector, RateFamily, SisParams};

/// Floor applied to intensities inside logarithms.
pub const EPS_S: f64 = 1e-8;

/// Tolerance for the reconstructed density leaving `[0, 1]`.
pub const DENSITY_TOLERANCE: f64 = 1e-6;

/// A rate-function value. `Infinite` is a sentinel: it never enters
/// floating-point arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RateValue {
    Finite(f64),
    Infinite { location: String },
}

impl RateValue {
    pub fn infinite(location: impl Into<String>) -> Self {
        RateValue::Infinite {
            location: location.into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite { .. } => None,
        }
    }

    /// The finite value, or an `Infeasible` error naming the location.
    pub fn into_result(self) -> Result<f64> {
        match self {
            RateValue::Finite(v) => Ok(v),
            RateValue::Infinite { location } => Err(Error::Infeasible(format!("infinite rate at {location}"))),
        }
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateValue::Finite(v) => write!(f, "{v}"),
            RateValue::Infinite { location } => write!(f, "+inf ({location})"),
        }
    }
}

/// `ℓ(1 + d)` without cancellation for small `d`.
fn ell_unchecked(a: f64) -> f64 {
    if a == 0.0 {
        return 1.0;
    }
    let d = a - 1.0;
    if d.abs() < 1e-2 {
        // Σ_{n≥2} (−d)^n / (n(n−1))
        let mut term = d * d;
        let mut sum = 0.0;
        for n in 2..12 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * term / (n * (n - 1)) as f64;
            term *= d;
        }
        sum
    } else {
        a * a.ln() - a + 1.0
    }
}

/// `ℓ(a) = a log a − a + 1`, with `ℓ(0) = 1`.
pub fn ell(a: f64) -> Result<f64> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidInput(format!("ℓ needs a finite a ≥ 0, got {a}")));
    }
    Ok(ell_unchecked(a))
}

/// Relative entropy density `r ℓ(x / r) = x log(x/r) − x + r` of a flux `x`
/// against an intensity `r`. `None` when `r = 0 < x`.
fn entropy(x: f64, r: f64) -> Option<f64> {
    if x <= 0.0 {
        return Some(r.max(0.0));
    }
    if r <= 0.0 {
        return None;
    }
    let r_log = r.max(EPS_S);
    if r_log == r {
        Some(r * ell_unchecked(x / r))
    } else {
        Some(x * (x / r_log).ln() - x + r)
    }
}

fn trapezoid_weight(n: usize, steps: usize) -> f64 {
    if n == 0 || n == steps {
        0.5
    } else {
        1.0
    }
}

/// Uncoupled rate `Σ_{α≠β} ∫∫ ℓ(p_{α→β}) ρ dt dx`.
pub fn rate_i(flux: &LimitFlux, grid: &SpatialGrid) -> Result<f64> {
    if flux.m != grid.len() {
        return Err(Error::InvalidInput("flux does not match the grid".into()));
    }
    let mut total = 0.0;
    for c in 0..flux.channels.len() {
        for n in 0..=flux.steps {
            let tw = trapezoid_weight(n, flux.steps) * flux.dt;
            for (p, w) in flux.slice(c, n).iter().zip(grid.weights()) {
                total += tw * w * ell(*p)?;
            }
        }
    }
    Ok(total)
}

/// Reconstructs `ν_t` from `ν₀` and the fluxes (cumulative trapezoid in time).
pub fn reconstruct_density(flux: &LimitFlux, nu0: &[Vec<f64>]) -> Result<DensityField> {
    let n_states = nu0.len();
    let m = flux.m;
    if nu0.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidInput(
            "initial density does not match the flux grid".into(),
        ));
    }
    if flux
        .channels
        .iter()
        .any(|&(a, b)| a >= n_states || b >= n_states || a == b)
    {
        return Err(Error::InvalidInput("flux channels do not match the state space".into()));
    }
    let mut density = DensityField::zeros(flux.steps, flux.dt, n_states, m);
    for (a, v) in nu0.iter().enumerate() {
        density.slice_mut(0, a).copy_from_slice(v);
    }
    let net = |n: usize, a: usize, i: usize| -> f64 {
        let mut s = 0.0;
        for (c, &(from, to)) in flux.channels.iter().enumerate() {
            if to == a {
                s += flux.slice(c, n)[i];
            }
            if from == a {
                s -= flux.slice(c, n)[i];
            }
        }
        s
    };
    for n in 1..=flux.steps {
        for a in 0..n_states {
            for i in 0..m {
                let prev = density.slice(n - 1, a)[i];
                let step = 0.5 * flux.dt * (net(n - 1, a, i) + net(n, a, i));
                density.slice_mut(n, a)[i] = prev + step;
            }
        }
    }
    Ok(density)
}

/// Coupled rate `G`: `Σ ∫∫ λ ℓ(p/λ) κ(dx) dt` with `λ_{(α,β)} = f_β(x, α, w_t(x)) ν_t(α, x)`,
/// where `ν` and `w` are rebuilt from the fluxes and `ν₀`.
pub fn rate_g(
    flux: &LimitFlux,
    nu0: &[Vec<f64>],
    grid: &SpatialGrid,
    kernel: &KernelMatrix,
    rates: &dyn RateFamily,
) -> Result<RateValue> {
    let n_states = rates.states().size();
    if nu0.len() != n_states || flux.m != grid.len() || kernel.size() != grid.len() {
        return Err(Error::InvalidInput(
            "flux, density, grid and kernel sizes disagree".into(),
        ));
    }
    if flux.channels.iter().any(|&(a, b)| a == b) {
        return Err(Error::InvalidInput("diagonal flux channel".into()));
    }
    for c in 0..flux.channels.len() {
        for n in 0..=flux.steps {
            if flux.slice(c, n).iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "flux density must be finite and nonnegative (channel {c}, step {n})"
                )));
            }
        }
    }
    let density = reconstruct_density(flux, nu0)?;
    let m = grid.len();
    let mut fields = vec![vec![0.0; m]; n_states];
    let mut w = vec![0.0; n_states];
    let mut total = 0.0;
    for n in 0..=flux.steps {
        for a in 0..n_states {
            let nu = density.slice(n, a);
            if let Some(i) = nu
                .iter()
                .position(|v| *v < -DENSITY_TOLERANCE || *v > 1.0 + DENSITY_TOLERANCE)
            {
                return Ok(RateValue::infinite(format!(
                    "reconstructed density {} at t = {}, node {i}, state {a}",
                    nu[i],
                    density.time(n)
                )));
            }
            kernel.apply(nu, &mut fields[a]);
        }
        let tw = trapezoid_weight(n, flux.steps) * flux.dt;
        for i in 0..m {
            for (a, wa) in w.iter_mut().enumerate() {
                *wa = fields[a][i];
            }
            let theta = grid.nodes()[i];
            for (c, &(from, to)) in flux.channels.iter().enumerate() {
                let lambda = rates.rate(to, theta, from, &w) * density.slice(n, from)[i].max(0.0);
                let p = flux.slice(c, n)[i];
                match entropy(p, lambda) {
                    Some(v) => total += tw * grid.weights()[i] * v,
                    None => {
                        return Ok(RateValue::infinite(format!(
                            "zero intensity with flux {p} on channel {from}->{to} at t = {}, node {i}",
                            density.time(n)
                        )))
                    }
                }
            }
        }
    }
    Ok(RateValue::Finite(total))
}

/// The nonnegative root of `a² + a ṡ − α λ (1 − s) = 0`.
pub fn sis_a(sdot: f64, s: f64, lambda: f64, alpha: f64) -> f64 {
    let c = alpha * lambda * (1.0 - s);
    if c <= 0.0 {
        return (-sdot).max(0.0);
    }
    let root = (sdot * sdot + 4.0 * c).sqrt();
    if sdot > 0.0 {
        2.0 * c / (sdot + root)
    } else {
        0.5 * (root - sdot)
    }
}

/// `L_θ(ṡ, s) = inf { λ ℓ(a/λ) + α(1−s) ℓ(b/(α(1−s))) : b − a = ṡ, a, b ≥ 0 }`,
/// attained at `a = A_θ(ṡ, s)`.
pub fn sis_lagrangian(sdot: f64, s: f64, lambda: f64, alpha: f64) -> RateValue {
    let recovery = alpha * (1.0 - s);
    let a = sis_a(sdot, s, lambda, alpha);
    // b = ṡ + a; c / a avoids cancellation when ṡ ≈ −a
    let b = if a > 0.0 {
        (lambda * recovery / a).max(0.0)
    } else {
        (sdot + a).max(0.0)
    };
    match (entropy(a, lambda), entropy(b, recovery)) {
        (Some(x), Some(y)) => RateValue::Finite(x + y),
        (None, _) => RateValue::infinite(format!("infection flux {a} with zero intensity")),
        (_, None) => RateValue::infinite(format!("recovery flux {b} with zero intensity")),
    }
}

/// `λ_θ(s) = β s(θ) ∫ 𝒥(θ, θ')(1 − s(θ')) κ(dθ')` on every grid node.
pub fn sis_lambda(kernel: &KernelMatrix, params: SisParams, s: &[f64]) -> Vec<f64> {
    infection_pressure(kernel, s)
        .iter()
        .zip(s)
        .map(|(k, s)| params.beta * s * k)
        .collect()
}

/// `∂_t s` on every node: centered in the interior, one-sided second order at the ends.
pub fn time_derivative(s: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    let k = s.len();
    if k < 3 {
        return Err(Error::InvalidInput("need at least three time nodes".into()));
    }
    let m = s[0].len();
    let mut out = vec![vec![0.0; m]; k];
    for i in 0..m {
        out[0][i] = (-3.0 * s[0][i] + 4.0 * s[1][i] - s[2][i]) / (2.0 * dt);
        out[k - 1][i] = (3.0 * s[k - 1][i] - 4.0 * s[k - 2][i] + s[k - 3][i]) / (2.0 * dt);
        for n in 1..k - 1 {
            out[n][i] = (s[n + 1][i] - s[n - 1][i]) / (2.0 * dt);
        }
    }
    Ok(out)
}

/// `H_T(s) = ∫₀ᵀ ∫ L_θ(ṡ, s) κ(dθ) dt` for an SIS path (state 0 = susceptible).
pub fn sis_action(
    path: &DensityField,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
) -> Result<RateValue> {
    if path.m != grid.len() || kernel.size() != grid.len() {
        return Err(Error::InvalidInput("path, grid and kernel sizes disagree".into()));
    }
    let s = path.susceptible();
    if s.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("path values must lie in [0, 1]".into()));
    }
    let sdot = time_derivative(&s, path.dt)?;
    let mut total = 0.0;
    for n in 0..=path.steps {
        let lambda = sis_lambda(kernel, params, &s[n]);
        let tw = trapezoid_weight(n, path.steps) * path.dt;
        for i in 0..grid.len() {
            match sis_lagrangian(sdot[n][i], s[n][i], lambda[i], params.alpha) {
                RateValue::Finite(v) => total += tw * grid.weights()[i] * v,
                RateValue::Infinite { location } => {
                    return Ok(RateValue::infinite(format!(
                        "t = {}, node {i}: {location}",
                        path.time(n)
                    )))
                }
            }
        }
    }
    Ok(RateValue::Finite(total))
}

/// Minimizes `Σ_{α≠β} λ_{αβ} ℓ(q_{αβ}/λ_{αβ})` over `q ≥ 0` with net inflow `r`
/// at a single site. Newton ascent on the concave dual
/// `D(φ) = Σ λ_{αβ}(1 − e^{φ_β − φ_α}) + Σ φ_ζ r_ζ`, whose maximizer gives
/// `q_{αβ} = λ_{αβ} e^{φ_β − φ_α}`. Returns `None` if the constraint cannot
/// be met with finite cost.
pub fn contracted_site(lambda: &[Vec<f64>], r: &[f64]) -> Option<(f64, Vec<Vec<f64>>)> {
    let n = r.len();
    let q_of = |phi: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        if a == b || lambda[a][b] <= 0.0 {
                            0.0
                        } else {
                            lambda[a][b] * (phi[b] - phi[a]).exp()
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let dual = |phi: &[f64]| -> f64 {
        let q = q_of(phi);
        let mut d = 0.0;
        for a in 0..n {
            for b in 0..n {
                d += lambda[a][b].max(0.0) - q[a][b];
            }
            d += phi[a] * r[a];
        }
        d
    };
    let residual = |q: &[Vec<f64>]| -> Vec<f64> {
        (0..n)
            .map(|z| {
                let inflow: f64 = (0..n).map(|a| q[a][z]).sum();
                let outflow: f64 = q[z].iter().sum();
                r[z] - (inflow - outflow)
            })
            .collect()
    };
    let scale = 1.0 + r.iter().map(|v| v.abs()).sum::<f64>() + lambda.iter().flatten().sum::<f64>();
    // φ_0 = 0 fixes the gauge; unknowns are φ_1..φ_{n−1}
    let mut phi = vec![0.0; n];
    let mut converged = false;
    for _ in 0..200 {
        let q = q_of(&phi);
        let g = residual(&q);
        if g.iter().skip(1).all(|v| v.abs() <= 1e-14 * scale) {
            converged = true;
            break;
        }
        // −Hessian: weighted graph Laplacian with weights q_{ab} + q_{ba}
        let dim = n - 1;
        let mut h = vec![vec![0.0; dim]; dim];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let wgt = q[a][b];
                if a > 0 {
                    h[a - 1][a - 1] += wgt;
                    if b > 0 {
                        h[a - 1][b - 1] -= wgt;
                    }
                }
                if b > 0 {
                    h[b - 1][b - 1] += wgt;
                    if a > 0 {
                        h[b - 1][a - 1] -= wgt;
                    }
                }
            }
        }
        let rhs: Vec<f64> = g[1..].to_vec();
        let step = solve_spd(h, rhs)?;
        let base = dual(&phi);
        let slope: f64 = step.iter().zip(&g[1..]).map(|(s, g)| s * g).sum();
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain(phi[1..].iter().zip(&step).map(|(p, s)| p + t * s))
                .collect();
            let value = dual(&trial);
            if value.is_finite() && value >= base + 1e-4 * t * slope - 1e-15 * base.abs() {
                phi = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
        if phi.iter().any(|p| p.abs() > 200.0) {
            return None;
        }
    }
    if !converged {
        let q = q_of(&phi);
        if residual(&q).iter().any(|v| v.abs() > 1e-9 * scale) {
            return None;
        }
    }
    let q = q_of(&phi);
    let mut cost = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                cost += entropy(q[a][b], lambda[a][b].max(0.0))?;
            }
        }
    }
    Some((cost, q))
}

/// Cholesky solve; `None` if the matrix is singular.
fn solve_spd(mut h: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = h[j][j];
        for k in 0..j {
            d -= h[j][k] * h[j][k];
        }
        if !(d > 1e-300) {
            return None;
        }
        let d = d.sqrt();
        h[j][j] = d;
        for i in j + 1..n {
            let mut v = h[i][j];
            for k in 0..j {
                v -= h[i][k] * h[j][k];
            }
            h[i][j] = v / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= h[i][k] * b[k];
        }
        b[i] /= h[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= h[k][i] * b[k];
        }
        b[i] /= h[i][i];
    }
    Some(b)
}

/// Contracted cost `∫ inf_{q ∈ Q(r)} Σ λ_{αβ} ℓ(q_{αβ}/λ_{αβ}) κ(dx)` with
/// `λ_{αβ}(x) = f_β(x, α, w(x)) ν(α, x)`.
///
/// `r[ζ][i]` is the prescribed net inflow into state `ζ` at node `i`,
/// `nu[α][i]` the density and `w[i]` the field at node `i`.
pub fn contracted_l(
    r: &[Vec<f64>],
    nu: &[Vec<f64>],
    w: &[FieldVector],
    grid: &SpatialGrid,
    rates: &dyn RateFamily,
) -> Result<RateValue> {
    let n_states = rates.states().size();
    let m = grid.len();
    if r.len() != n_states || nu.len() != n_states || w.len() != m || r.iter().chain(nu).any(|v| v.len() != m) {
        return Err(Error::InvalidInput("r, ν, w and grid sizes disagree".into()));
    }
    let mut total = 0.0;
    for i in 0..m {
        let ri: Vec<f64> = r.iter().map(|v| v[i]).collect();
        let sum: f64 = ri.iter().sum();
        let scale: f64 = ri.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if sum.abs() > 1e-10 * scale {
            return Err(Error::Infeasible(format!(
                "r does not conserve mass at node {i}: Σ r = {sum}"
            )));
        }
        let theta = grid.nodes()[i];
        let lambda: Vec<Vec<f64>> = (0..n_states)
            .map(|a| {
                (0..n_states)
                    .map(|b| {
                        if a == b {
                            0.0
                        } else {
                            rates.rate(b, theta, a, &w[i].0) * nu[a][i]
                        }
                    })
                    .collect()
            })
            .collect();
        match contracted_site(&lambda, &ri) {
            Some((cost, _)) => total += grid.weights()[i] * cost,
            None => {
                return Ok(RateValue::infinite(format!(
                    "node {i}: no finite-cost flux for r = {ri:?}"
                )))
            }
        }
    }
    Ok(RateValue::Finite(total))
}

/// `ln P(Poisson(mean) ≥ k)`, summed in log space.
pub fn poisson_upper_tail_ln(mean: f64, k: u64) -> Result<f64> {
    if !(mean > 0.0) {
        return Err(Error::InvalidInput("Poisson mean must be positive".into()));
    }
    let ln_mean = mean.ln();
    // ln k! by cumulative sums; terms beyond the mode decay geometrically
    let ln_fact_k: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
    let mut terms = Vec::new();
    let mut ln_term = -mean + k as f64 * ln_mean - ln_fact_k;
    let mut j = k;
    let mut peak = ln_term;
    loop {
        terms.push(ln_term);
        peak = peak.max(ln_term);
        j += 1;
        ln_term += ln_mean - (j as f64).ln();
        if (j as f64) > mean && ln_term < peak - 60.0 {
            break;
        }
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    Ok(peak + sum.ln())
}

/// `N⁻¹ ln P(N⁻¹ Σ_{j≤N} X_j ≥ a)` for i.i.d. unit-rate Poisson counts on `[0, 1]`.
pub fn poisson_ldp_slope(n: u64, a: f64) -> Result<f64> {
    let threshold = (a * n as f64).ceil() as u64;
    Ok(poisson_upper_tail_ln(n as f64, threshold)? / n as f64)
}
