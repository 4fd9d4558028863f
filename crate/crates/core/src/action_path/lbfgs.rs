//! Box-projected L-BFGS with Armijo backtracking and a steepest-descent fallback.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `measure(gradient) ≤ tol`.
    pub tol: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub measure: f64,
    pub iters: usize,
    pub converged: bool,
    /// Iterations where the quasi-Newton direction was abandoned for −g.
    pub descent_fallbacks: usize,
    /// Objective after every accepted step (first entry: start).
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]^n`. `eval` returns `None`
/// where the objective is infinite; `measure` maps a gradient to the
/// stopping statistic. `precondition(x, v)` overwrites `v` with `P(x)⁻¹ v`
/// for an SPD approximation `P` of the Hessian; it seeds the two-loop
/// recursion in place of the usual scalar scaling.
pub fn minimize(
    x0: Vec<f64>,
    mut eval: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    measure: impl Fn(&[f64], &[f64]) -> f64,
    mut precondition: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    opts: LbfgsOptions,
) -> Option<LbfgsOutcome> {
    let project = |v: f64| v.clamp(opts.lower, opts.upper);
    let mut x: Vec<f64> = x0.into_iter().map(project).collect();
    let (mut f, mut g) = eval(&x)?;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = vec![f];
    let mut fallbacks = 0;
    let mut iters = 0;
    let mut current = measure(&x, &g);
    while iters < opts.max_iters && current > opts.tol {
        iters += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some(p) = precondition.as_mut() {
            p(&x, &mut d);
        } else if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = dot(&g, &g).sqrt();
            d.iter_mut().for_each(|v| *v /= gn.max(1e-300));
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                // steepest descent, scaled like the previous step
                fallbacks += 1;
                mem.clear();
                d = g.iter().map(|v| -v).collect();
                if let Some(p) = precondition.as_mut() {
                    p(&x, &mut d);
                } else {
                    let gn = dot(&g, &g).sqrt();
                    d.iter_mut().for_each(|v| *v /= gn.max(1e-300));
                }
            }
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| project(xi + t * di)).collect();
                let step_slope: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                if let Some((ft, gt)) = eval(&trial) {
                    if ft <= f + 1e-4 * step_slope.min(0.0) && ft <= f {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        current = measure(&x, &g);
    }
    Some(LbfgsOutcome {
        converged: current <= opts.tol,
        x,
        f,
        measure: current,
        iters,
        descent_fallbacks: fallbacks,
        history,
    })
}
