//! Most-likely SIS transition paths between pinned endpoints.
//!
//! The unknowns are `s[n][i]`, `n = 1..K−1`, on a uniform time grid. The
//! minimized objective is the midpoint-rule action
//! `S = Δt Σ_n Σ_i w_i L_i((s^{n+1} − s^n)/Δt, (s^n + s^{n+1})/2)`, whose
//! gradient is `w_i (p^{n−1} − p^n) + (Δt/2) w_i (G^{n−1} + G^n)` with
//! `p = ∂L/∂ṡ`. The Euler–Lagrange residual is a check on the result, not
//! the solve.

mod lbfgs;
pub mod operators;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{KernelMatrix, SpatialGrid};
use crate::meanfield::endemic_equilibrium;
use crate::model::{circle_distance, SisParams};
use crate::rate_function::{sis_lagrangian, sis_lambda, EPS_S};

pub use lbfgs::{minimize as lbfgs_minimize, LbfgsOptions, LbfgsOutcome};
pub use operators::{
    check_formulas, el_frechet, el_operators, el_partials, ElFormulas, ElOperators, Formula, FormulaCheck,
    FormulaReport, NonlocalBlock, SdotBlock,
};

/// Named endpoint profiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EndpointPreset {
    Equilibrium,
    Uniform(f64),
    /// `s* − depth · exp(−d(θ, center)² / (2 width²))`
    Bump {
        center: f64,
        width: f64,
        depth: f64,
    },
}

impl EndpointPreset {
    /// Parses `equilibrium`, `uniform:c` or `bump:center,width,depth`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidInput(format!("endpoint preset {text:?}: {why}"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad("expected a number"));
        match text.split_once(':') {
            None if text.trim() == "equilibrium" => Ok(EndpointPreset::Equilibrium),
            Some(("uniform", c)) => Ok(EndpointPreset::Uniform(num(c)?)),
            Some(("bump", args)) => {
                let parts: Vec<&str> = args.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad("bump needs center,width,depth"));
                }
                let (center, width, depth) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
                if !(width > 0.0) {
                    return Err(bad("width must be positive"));
                }
                Ok(EndpointPreset::Bump { center, width, depth })
            }
            _ => Err(bad("expected equilibrium, uniform:c or bump:center,width,depth")),
        }
    }

    pub fn profile(&self, grid: &SpatialGrid, kernel: &KernelMatrix, params: SisParams) -> Vec<f64> {
        match *self {
            EndpointPreset::Equilibrium => endemic_equilibrium(kernel, params),
            EndpointPreset::Uniform(c) => vec![c; grid.len()],
            EndpointPreset::Bump { center, width, depth } => endemic_equilibrium(kernel, params)
                .iter()
                .zip(grid.nodes())
                .map(|(s, &x)| {
                    let d = circle_distance(x, center);
                    s - depth * (-d * d / (2.0 * width * width)).exp()
                })
                .collect(),
        }
    }
}

/// Pinned endpoints on a `K`-interval time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathProblem {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub horizon: f64,
    pub intervals: usize,
}

impl PathProblem {
    pub fn new(start: Vec<f64>, end: Vec<f64>, horizon: f64, intervals: usize) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(Error::InvalidInput(
                "endpoints must be nonempty and of equal length".into(),
            ));
        }
        if let Some(v) = start.iter().chain(&end).find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidInput(format!("endpoint value {v} outside (0, 1)")));
        }
        if !(horizon > 0.0) || intervals < 2 {
            return Err(Error::InvalidInput(
                "need a positive horizon and at least two time intervals".into(),
            ));
        }
        Ok(PathProblem {
            start,
            end,
            horizon,
            intervals,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn m(&self) -> usize {
        self.start.len()
    }

    /// Straight line between the endpoints.
    pub fn linear_guess(&self) -> Vec<Vec<f64>> {
        (0..=self.intervals)
            .map(|n| {
                let t = n as f64 / self.intervals as f64;
                self.start
                    .iter()
                    .zip(&self.end)
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect()
            })
            .collect()
    }

    /// Same endpoints on `intervals` time steps.
    pub fn with_intervals(&self, intervals: usize) -> Result<Self> {
        PathProblem::new(self.start.clone(), self.end.clone(), self.horizon, intervals)
    }
}

/// Midpoint action of a full path (endpoints included). `None` if infinite.
pub fn discrete_action(
    path: &[Vec<f64>],
    dt: f64,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
) -> Option<f64> {
    let m = grid.len();
    let mut total = 0.0;
    let mut mid = vec![0.0; m];
    for n in 0..path.len() - 1 {
        for i in 0..m {
            mid[i] = 0.5 * (path[n][i] + path[n + 1][i]);
        }
        let lambda = sis_lambda(kernel, params, &mid);
        for i in 0..m {
            let v = (path[n + 1][i] - path[n][i]) / dt;
            total += dt * grid.weights()[i] * sis_lagrangian(v, mid[i], lambda[i], params.alpha).finite()?;
        }
    }
    Some(total)
}

struct ActionEval<'a> {
    params: SisParams,
    kernel: &'a KernelMatrix,
    grid: &'a SpatialGrid,
    formulas: &'a ElFormulas,
    dt: f64,
}

impl ActionEval<'_> {
    /// `(S, ∂S/∂s^n_i)` for interior unknowns; `None` if infinite or degenerate.
    fn eval(&self, path: &[Vec<f64>]) -> Option<(f64, Vec<Vec<f64>>)> {
        let m = self.grid.len();
        let k = path.len() - 1;
        let w = self.grid.weights();
        let alpha = self.params.alpha;
        let mut total = 0.0;
        let mut p = vec![vec![0.0; m]; k];
        let mut g = vec![vec![0.0; m]; k];
        let mut mid = vec![0.0; m];
        let mut v = vec![0.0; m];
        let (mut ms, mut ns) = (vec![0.0; m], vec![0.0; m]);
        for n in 0..k {
            for i in 0..m {
                mid[i] = 0.5 * (path[n][i] + path[n + 1][i]);
                v[i] = (path[n + 1][i] - path[n][i]) / self.dt;
            }
            let lambda = sis_lambda(self.kernel, self.params, &mid);
            for i in 0..m {
                total += self.dt * w[i] * sis_lagrangian(v[i], mid[i], lambda[i], alpha).finite()?;
                p[n][i] = self.formulas.dl(v[i], mid[i], lambda[i], alpha)?;
                ms[i] = self.formulas.m(v[i], mid[i], lambda[i], alpha)?;
                ns[i] = self.formulas.n(v[i], mid[i], lambda[i], alpha)?;
            }
            g[n] = if self.formulas.uses_oracle(Formula::G) {
                operators::fd_g(self.kernel, self.grid, self.params, &v, &mid)
            } else {
                operators::assemble_g(self.kernel, self.grid, self.params, &mid, &ms, &ns)
            };
        }
        let grad = (1..k)
            .map(|n| {
                (0..m)
                    .map(|i| w[i] * (p[n - 1][i] - p[n][i]) + 0.5 * self.dt * w[i] * (g[n - 1][i] + g[n][i]))
                    .collect()
            })
            .collect();
        Some((total, grad))
    }
}

impl ActionEval<'_> {
    /// Applies the inverse of the time-Laplacian part of the Hessian,
    /// `w_i (c^{n−1}_i (v^n − v^{n−1}) − c^n_i (v^{n+1} − v^n)) / Δt` with
    /// `c = ∂²L/∂ṡ²` at each slice midpoint: one tridiagonal solve per node.
    fn precondition(&self, path: &[Vec<f64>], v: &mut [f64]) {
        let m = self.grid.len();
        let k = path.len() - 1;
        let mut c = vec![vec![0.0; m]; k];
        let mut mid = vec![0.0; m];
        for n in 0..k {
            for i in 0..m {
                mid[i] = 0.5 * (path[n][i] + path[n + 1][i]);
            }
            let lambda = sis_lambda(self.kernel, self.params, &mid);
            for i in 0..m {
                let sdot = (path[n + 1][i] - path[n][i]) / self.dt;
                let q = sdot * sdot + 4.0 * self.params.alpha * lambda[i] * (1.0 - mid[i]);
                c[n][i] = 1.0 / q.max(EPS_S).sqrt();
            }
        }
        let unknowns = k - 1;
        let (mut sub, mut diag, mut rhs) = (vec![0.0; unknowns], vec![0.0; unknowns], vec![0.0; unknowns]);
        for i in 0..m {
            let w = self.grid.weights()[i] / self.dt;
            for j in 0..unknowns {
                // unknown j is time node j + 1, between slices j and j + 1
                diag[j] = w * (c[j][i] + c[j + 1][i]);
                sub[j] = -w * c[j][i];
                rhs[j] = v[j * m + i];
            }
            // Thomas algorithm
            for j in 1..unknowns {
                let factor = sub[j] / diag[j - 1];
                diag[j] -= factor * sub[j];
                rhs[j] -= factor * rhs[j - 1];
            }
            rhs[unknowns - 1] /= diag[unknowns - 1];
            for j in (0..unknowns - 1).rev() {
                rhs[j] = (rhs[j] - sub[j + 1] * rhs[j + 1]) / diag[j];
            }
            for j in 0..unknowns {
                v[j * m + i] = rhs[j];
            }
        }
    }
}

fn flatten_interior(path: &[Vec<f64>]) -> Vec<f64> {
    path[1..path.len() - 1].concat()
}

fn rebuild(problem: &PathProblem, x: &[f64]) -> Vec<Vec<f64>> {
    let m = problem.m();
    let mut path = Vec::with_capacity(problem.intervals + 1);
    path.push(problem.start.clone());
    path.extend(x.chunks(m).map(|c| c.to_vec()));
    path.push(problem.end.clone());
    path
}

/// Lower bound on the gradient scale used by the stopping rule.
pub const GRAD_SCALE_FLOOR: f64 = 1e-6;

/// Initial path for the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum InitialGuess {
    #[default]
    Linear,
    Path(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Stop when the normalized gradient sup-norm falls to `tol_grad` times its initial value.
    pub tol_grad: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub initial: InitialGuess,
    /// Solve on successively halved time grids first and interpolate up.
    pub warm_start: bool,
    pub formulas: ElFormulas,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            tol_grad: 1e-6,
            max_iters: 20_000,
            memory: 20,
            initial: InitialGuess::Linear,
            warm_start: false,
            formulas: ElFormulas::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionResult {
    /// `s[n][i]`, `n = 0..=K`.
    pub path: Vec<Vec<f64>>,
    pub dt: f64,
    /// Midpoint-rule action of `path`.
    pub action: f64,
    /// Sup-norm of `∂S/∂s^n_i / (Δt w_i)` at the returned path.
    pub grad_norm: f64,
    /// The same statistic at the initial guess.
    pub grad_scale: f64,
    pub iters: usize,
    pub converged: bool,
    pub descent_fallbacks: usize,
    /// Action after each accepted step.
    pub history: Vec<f64>,
}

/// Midpoint-action gradient at `path`, normalized by `Δt w_i`.
pub fn normalized_gradient(
    path: &[Vec<f64>],
    dt: f64,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
    formulas: &ElFormulas,
) -> Result<Vec<Vec<f64>>> {
    let eval = ActionEval {
        params,
        kernel,
        grid,
        formulas,
        dt,
    };
    let (_, g) = eval
        .eval(path)
        .ok_or_else(|| Error::Infeasible("action is infinite or degenerate on this path".into()))?;
    Ok(g.iter()
        .map(|row| row.iter().zip(grid.weights()).map(|(v, w)| v / (dt * w)).collect())
        .collect())
}

/// Raw gradient `∂S/∂s^n_i` for the interior nodes.
pub fn action_gradient(
    path: &[Vec<f64>],
    dt: f64,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
    formulas: &ElFormulas,
) -> Result<Vec<Vec<f64>>> {
    let eval = ActionEval {
        params,
        kernel,
        grid,
        formulas,
        dt,
    };
    eval.eval(path)
        .map(|(_, g)| g)
        .ok_or_else(|| Error::Infeasible("action is infinite or degenerate on this path".into()))
}

fn sup_norm(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Linear interpolation of a path onto a grid with twice the intervals.
fn refine_in_time(path: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * path.len() - 1);
    for n in 0..path.len() - 1 {
        out.push(path[n].clone());
        out.push(path[n].iter().zip(&path[n + 1]).map(|(a, b)| 0.5 * (a + b)).collect());
    }
    out.push(path[path.len() - 1].clone());
    out
}

/// Locally minimizes the midpoint action with the endpoints pinned.
pub fn minimize_action(
    problem: &PathProblem,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
    opts: &MinimizeOptions,
) -> Result<ActionResult> {
    if grid.len() != problem.m() || kernel.size() != grid.len() {
        return Err(Error::InvalidInput("endpoints, grid and kernel sizes disagree".into()));
    }
    let mut initial = match &opts.initial {
        InitialGuess::Linear => problem.linear_guess(),
        InitialGuess::Path(p) => {
            if p.len() != problem.intervals + 1 || p.iter().any(|r| r.len() != problem.m()) {
                return Err(Error::InvalidInput("initial path has the wrong shape".into()));
            }
            p.clone()
        }
    };
    if opts.warm_start && opts.initial == InitialGuess::Linear && problem.intervals % 2 == 0 && problem.intervals >= 32
    {
        let coarse = problem.with_intervals(problem.intervals / 2)?;
        let coarse_opts = MinimizeOptions {
            tol_grad: opts.tol_grad * 10.0,
            ..opts.clone()
        };
        if let Ok(res) = minimize_action(&coarse, params, kernel, grid, &coarse_opts) {
            initial = refine_in_time(&res.path);
            initial[0] = problem.start.clone();
            initial[problem.intervals] = problem.end.clone();
        }
    }

    let dt = problem.dt();
    let eval = ActionEval {
        params,
        kernel,
        grid,
        formulas: &opts.formulas,
        dt,
    };
    // the stopping scale is taken at the straight line, so warm starts do not tighten it
    let line = problem.linear_guess();
    let (_, g_line) = eval
        .eval(&line)
        .ok_or_else(|| Error::Infeasible("action is infinite at the straight-line guess".into()))?;
    if eval.eval(&initial).is_none() {
        return Err(Error::Infeasible("action is infinite at the initial guess".into()));
    }
    let m = problem.m();
    let weights = grid.weights().to_vec();
    let normalized_sup = |g: &[f64]| -> f64 {
        g.iter()
            .enumerate()
            .fold(0.0, |acc, (idx, v)| acc.max((v / (dt * weights[idx % m])).abs()))
    };
    // floored so that an already-stationary line does not demand a gradient below roundoff
    let scale = normalized_sup(&g_line.concat()).max(GRAD_SCALE_FLOOR);
    let outcome = lbfgs_minimize(
        flatten_interior(&initial),
        |x| {
            let path = rebuild(problem, x);
            eval.eval(&path).map(|(f, g)| (f, g.concat()))
        },
        |_, g| normalized_sup(g),
        Some(&mut |x: &[f64], v: &mut [f64]| eval.precondition(&rebuild(problem, x), v)),
        LbfgsOptions {
            memory: opts.memory,
            max_iters: opts.max_iters,
            tol: opts.tol_grad * scale,
            lower: EPS_S,
            upper: 1.0 - EPS_S,
        },
    )
    .ok_or_else(|| Error::Infeasible("action is infinite at the initial guess".into()))?;
    Ok(ActionResult {
        path: rebuild(problem, &outcome.x),
        dt,
        action: outcome.f,
        grad_norm: outcome.measure,
        grad_scale: scale,
        iters: outcome.iters,
        converged: outcome.converged,
        descent_fallbacks: outcome.descent_fallbacks,
        history: outcome.history,
    })
}

/// `s̈ ∂²L/∂ṡ² + O_θ − G_θ` on interior time nodes (row `n − 1` holds node `n`),
/// with centered differences for `ṡ` and `s̈`.
pub fn el_residual(
    path: &[Vec<f64>],
    dt: f64,
    params: SisParams,
    kernel: &KernelMatrix,
    grid: &SpatialGrid,
    formulas: &ElFormulas,
) -> Result<Vec<Vec<f64>>> {
    if path.len() < 3 {
        return Err(Error::InvalidInput("need at least three time nodes".into()));
    }
    let m = grid.len();
    (1..path.len() - 1)
        .map(|n| {
            let sdot: Vec<f64> = (0..m).map(|i| (path[n + 1][i] - path[n - 1][i]) / (2.0 * dt)).collect();
            let sddot: Vec<f64> = (0..m)
                .map(|i| (path[n + 1][i] - 2.0 * path[n][i] + path[n - 1][i]) / (dt * dt))
                .collect();
            let ops = el_operators(&sdot, &path[n], params, kernel, grid, formulas)?;
            Ok((0..m)
                .map(|i| sddot[i] * ops.d2l_dsdot2[i] + ops.o[i] - ops.g[i])
                .collect())
        })
        .collect()
}

/// Smallest `∂²L/∂ṡ²` over interior nodes of a path.
pub fn min_curvature(
    path: &[Vec<f64>],
    dt: f64,
    params: SisParams,
    kernel: &KernelMatrix,
    formulas: &ElFormulas,
) -> Result<f64> {
    let m = path[0].len();
    let mut least = f64::INFINITY;
    for n in 1..path.len() - 1 {
        let sdot: Vec<f64> = (0..m).map(|i| (path[n + 1][i] - path[n - 1][i]) / (2.0 * dt)).collect();
        let block = el_partials(&sdot, &path[n], params, kernel, formulas)?;
        least = block.d2l_dsdot2.iter().fold(least, |a, b| a.min(*b));
    }
    Ok(least)
}

/// Summary written next to a computed path.
#[derive(Debug, Clone, Serialize)]
pub struct ActionDiagnostics {
    pub action: f64,
    pub grad_norm: f64,
    pub el_residual_max: f64,
    pub iters: usize,
    pub converged: bool,
    pub formula_discrepancies: Vec<String>,
}

impl ActionDiagnostics {
    pub fn new(result: &ActionResult, residual: &[Vec<f64>], report: &FormulaReport) -> Self {
        ActionDiagnostics {
            action: result.action,
            grad_norm: result.grad_norm,
            el_residual_max: sup_norm(residual),
            iters: result.iters,
            converged: result.converged,
            formula_discrepancies: report.discrepancies(),
        }
    }
}

/// CSV `t,theta,s`.
pub fn write_path_csv<W: Write>(path: &[Vec<f64>], dt: f64, grid: &SpatialGrid, mut out: W) -> Result<()> {
    writeln!(out, "t,theta,s")?;
    for (n, row) in path.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            writeln!(out, "{},{},{v}", n as f64 * dt, grid.nodes()[i])?;
        }
    }
    Ok(())
}

/// CSV `t,theta,residual` for interior nodes.
pub fn write_residual_csv<W: Write>(residual: &[Vec<f64>], dt: f64, grid: &SpatialGrid, mut out: W) -> Result<()> {
    writeln!(out, "t,theta,residual")?;
    for (n, row) in residual.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            writeln!(out, "{},{},{v}", (n + 1) as f64 * dt, grid.nodes()[i])?;
        }
    }
    Ok(())
}
