use serde::Serialize;
use serde_json::json;

use graphon_ldp::action_path::{
    el_residual, min_curvature, minimize_action, write_path_csv, write_residual_csv, ActionDiagnostics, ElFormulas,
    EndpointPreset, MinimizeOptions, PathProblem,
};
use graphon_ldp::compare::{compare_sweep, CompareSetup, InfectedProfile};
use graphon_ldp::graphon::{sample_network, write_network, Domain, EdgeSplit};
use graphon_ldp::grid::{Bins, KernelMatrix, SpatialGrid};
use graphon_ldp::meanfield::{evolve, flux_balance_defect, sis_density};
use graphon_ldp::model::{sis_rates, StateSpace, SUSCEPTIBLE};
use graphon_ldp::rate_function::{ell, poisson_ldp_slope, rate_g, rate_i, reconstruct_density, sis_action, RateValue};
use graphon_ldp::simulator::{
    conservation_defect, occupation_series, replica_seed, sample_sis_initial, simulate as run_simulation,
    write_occupation_csv,
};

use crate::config::ExperimentConfig;
use crate::output::{entry, OutputDir, SummaryEntry};
use crate::CliError;

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    summary: Vec<SummaryEntry>,
    details: serde_json::Value,
}

fn report(
    out: &mut OutputDir,
    command: &str,
    cfg: &ExperimentConfig,
    summary: Vec<SummaryEntry>,
    details: serde_json::Value,
) -> Result<(), CliError> {
    out.write_json(
        "report.json",
        &Report {
            command,
            config: cfg,
            summary,
            details,
        },
    )
}

fn circle_only(cfg: &ExperimentConfig, what: &str) -> Result<(), CliError> {
    if cfg.spec()?.domain() != Domain::Circle {
        return Err(CliError::Config(format!(
            "{what} needs a graphon on the circle (got {})",
            cfg.graphon.family
        )));
    }
    Ok(())
}

/// Output stride so that CSVs carry at most about 200 time rows.
fn stride(steps: usize) -> usize {
    steps.div_ceil(200).max(1)
}

fn finite_or_inf(v: &RateValue) -> f64 {
    v.finite().unwrap_or(f64::INFINITY)
}

pub fn sample(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let n = cfg.graphon.n;
    let network = sample_network(&spec, n, cfg.phi(n), &EdgeSplit::FromKernel, cfg.run.seed)?;
    out.write("network.txt", |w| Ok(write_network(&network, w)?))?;
    let mean_degree = 2.0 * network.edge_count() as f64 / n as f64;
    report(
        out,
        "sample",
        cfg,
        vec![entry("mean_degree", mean_degree, n, 0.0, None)],
        json!({ "n": n, "phi": network.phi(), "edges": network.edge_count(), "max_degree": network.max_degree() }),
    )
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let n = cfg.graphon.n;
    let seed = cfg.run.seed;
    let network = sample_network(&spec, n, cfg.phi(n), &EdgeSplit::FromKernel, seed)?;
    let init = sample_sis_initial(network.positions(), |x| cfg.infected_at(x), replica_seed(seed, 1));
    let traj = run_simulation(
        &network,
        &sis_rates(cfg.params()),
        &init,
        cfg.grid.horizon,
        replica_seed(seed, 2),
    )?;
    let bins = Bins::new(spec.domain(), cfg.grid.m);
    let snaps = ((cfg.grid.horizon / cfg.simulate.snapshot_dt).round() as usize).max(1);
    let times: Vec<f64> = (0..=snaps)
        .map(|k| cfg.grid.horizon * k as f64 / snaps as f64)
        .collect();
    let series = occupation_series(&traj, &times, &bins)?;
    let mut defect = 0;
    for &t in &times {
        defect = defect.max(conservation_defect(&traj, &bins, t)?);
    }
    out.write("trajectory.jsonl", |w| Ok(traj.write_jsonl(w)?))?;
    out.write("occupation.csv", |w| {
        Ok(write_occupation_csv(&traj.states, &series, w)?)
    })?;
    let final_infected = series
        .last()
        .map(|s| s.counts[1].iter().sum::<u64>() as f64 / n as f64)
        .unwrap_or(0.0);
    let summary = vec![
        entry(
            "conservation_defect",
            defect as f64,
            cfg.grid.m,
            cfg.simulate.snapshot_dt,
            Some(0.0),
        ),
        entry(
            "final_infected_fraction",
            final_infected,
            cfg.grid.m,
            cfg.simulate.snapshot_dt,
            None,
        ),
    ];
    report(
        out,
        "simulate",
        cfg,
        summary,
        json!({ "events": traj.events.len(), "n": n, "phi": network.phi() }),
    )?;
    if defect != 0 {
        return Err(CliError::Numerical(format!(
            "flux–occupation identity violated by {defect}"
        )));
    }
    Ok(())
}

struct MeanField {
    grid: SpatialGrid,
    kernel: KernelMatrix,
    nu0: Vec<Vec<f64>>,
    steps: usize,
}

fn mean_field_setup(cfg: &ExperimentConfig, what: &str) -> Result<MeanField, CliError> {
    circle_only(cfg, what)?;
    let grid = SpatialGrid::circle(cfg.grid.m);
    let kernel = KernelMatrix::new(&cfg.spec()?, &grid);
    let s0: Vec<f64> = grid.nodes().iter().map(|&x| 1.0 - cfg.infected_at(x)).collect();
    Ok(MeanField {
        nu0: sis_density(&s0),
        grid,
        kernel,
        steps: cfg.steps(),
    })
}

pub fn meanfield(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let mf = mean_field_setup(cfg, "meanfield")?;
    let (density, flux) = evolve(
        &mf.grid,
        &mf.kernel,
        &sis_rates(cfg.params()),
        &mf.nu0,
        cfg.grid.horizon,
        mf.steps,
    )?;
    let states = StateSpace::sis();
    let every = stride(mf.steps);
    out.write("density.csv", |w| Ok(density.write_csv(&states, &mf.grid, every, w)?))?;
    out.write("flux.csv", |w| Ok(flux.write_csv(&states, &mf.grid, every, w)?))?;
    let last = density.slice(mf.steps, SUSCEPTIBLE);
    let mean_s = mf.grid.integrate(last);
    let summary = vec![
        entry(
            "flux_balance_defect",
            flux_balance_defect(&density, &flux),
            cfg.grid.m,
            density.dt,
            None,
        ),
        entry("min_density", density.min_value(), cfg.grid.m, density.dt, Some(0.0)),
        entry("final_mean_susceptible", mean_s, cfg.grid.m, density.dt, None),
    ];
    report(
        out,
        "meanfield",
        cfg,
        summary,
        json!({ "steps": mf.steps, "csv_stride": every }),
    )
}

pub fn compare(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    if cfg.compare.sizes.is_empty() {
        return Err(CliError::Config("compare.sizes must not be empty".into()));
    }
    let substeps = ((cfg.compare.snapshot_dt / cfg.grid.dt).round() as usize).max(1);
    let setup = CompareSetup {
        spec: cfg.spec()?,
        params: cfg.params(),
        phi_exponent: cfg.graphon.phi_exponent,
        bins: cfg.grid.m,
        horizon: cfg.grid.horizon,
        snapshot_dt: cfg.compare.snapshot_dt,
        replicas: cfg.run.replicas,
        seed: cfg.run.seed,
        initial: InfectedProfile {
            base: cfg.model.init_base,
            amplitude: cfg.model.init_amplitude,
        },
        nodes_per_bin: cfg.compare.nodes_per_bin,
        substeps,
    };
    let points = compare_sweep(&setup, &cfg.compare.sizes)?;
    out.write("compare.csv", |w| {
        writeln!(w, "n,phi,replica,deviation")?;
        for p in &points {
            for (r, d) in p.deviations.iter().enumerate() {
                writeln!(w, "{},{},{r},{d}", p.n, p.phi)?;
            }
        }
        Ok(())
    })?;
    let dt = cfg.compare.snapshot_dt / substeps as f64;
    let mut summary = Vec::new();
    for p in &points {
        summary.push(entry(
            &format!("median_deviation_n{}", p.n),
            p.median_deviation,
            cfg.grid.m,
            dt,
            None,
        ));
        summary.push(entry(
            &format!("conservation_defect_n{}", p.n),
            p.max_conservation_defect as f64,
            cfg.grid.m,
            dt,
            Some(0.0),
        ));
    }
    let nonincreasing = points
        .windows(2)
        .all(|w| w[1].median_deviation <= w[0].median_deviation);
    let details = json!({
        "points": points.iter().map(|p| json!({
            "n": p.n,
            "phi": p.phi,
            "median_deviation": p.median_deviation,
            "median_density_deviation": p.median_density_deviation,
            "max_conservation_defect": p.max_conservation_defect,
        })).collect::<Vec<_>>(),
        "median_nonincreasing_in_n": nonincreasing,
    });
    report(out, "compare", cfg, summary, details)?;
    if let Some(p) = points.iter().find(|p| p.max_conservation_defect != 0) {
        return Err(CliError::Numerical(format!(
            "flux–occupation identity violated at N = {}",
            p.n
        )));
    }
    Ok(())
}

pub fn rate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let mf = mean_field_setup(cfg, "rate")?;
    let params = cfg.params();
    let rates = sis_rates(params);
    let (_, mut flux) = evolve(&mf.grid, &mf.kernel, &rates, &mf.nu0, cfg.grid.horizon, mf.steps)?;
    let r = &cfg.rate;
    let frac = |f: f64, len: usize| ((f.clamp(0.0, 1.0) * len as f64).round() as usize).min(len);
    let times = frac(r.perturb_time[0], mf.steps + 1)..frac(r.perturb_time[1], mf.steps + 1);
    let nodes = frac(r.perturb_space[0], cfg.grid.m)..frac(r.perturb_space[1], cfg.grid.m);
    if r.perturb_factor != 1.0 {
        if !(r.perturb_factor >= 0.0) {
            return Err(CliError::Config("rate.perturb_factor must be nonnegative".into()));
        }
        let channel = flux.channel_index(0, 1).expect("S->I channel");
        flux.scale_patch(channel, times.clone(), nodes.clone(), r.perturb_factor);
    }
    let g = rate_g(&flux, &mf.nu0, &mf.grid, &mf.kernel, &rates)?;
    let uncoupled = rate_i(&flux, &mf.grid)?;
    let density = reconstruct_density(&flux, &mf.nu0)?;
    let h = sis_action(&density, params, &mf.kernel, &mf.grid)?;
    let dt = flux.dt;
    let tol = if r.perturb_factor == 1.0 { Some(1e-4) } else { None };
    let summary = vec![
        entry("rate_G", finite_or_inf(&g), cfg.grid.m, dt, tol),
        entry("sis_action", finite_or_inf(&h), cfg.grid.m, dt, tol),
        entry("rate_I", uncoupled, cfg.grid.m, dt, None),
    ];
    let details = json!({
        "rate_G": g,
        "sis_action": h,
        "perturbation": { "factor": r.perturb_factor, "steps": [times.start, times.end], "nodes": [nodes.start, nodes.end] },
    });
    report(out, "rate", cfg, summary, details)
}

pub fn action(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    circle_only(cfg, "action")?;
    let start = EndpointPreset::parse(&cfg.action.start).map_err(|e| CliError::Config(format!("action.start: {e}")))?;
    let end = EndpointPreset::parse(&cfg.action.end).map_err(|e| CliError::Config(format!("action.end: {e}")))?;
    let params = cfg.params();
    let grid = SpatialGrid::circle(cfg.grid.m);
    let kernel = KernelMatrix::new(&cfg.spec()?, &grid);
    let problem = PathProblem::new(
        start.profile(&grid, &kernel, params),
        end.profile(&grid, &kernel, params),
        cfg.grid.horizon,
        cfg.grid.k,
    )?;
    let (formulas, formula_report) = ElFormulas::checked(cfg.action.formula_samples.max(1), cfg.run.seed);
    let opts = MinimizeOptions {
        tol_grad: cfg.action.tol_grad,
        max_iters: cfg.action.max_iters,
        memory: cfg.action.memory,
        warm_start: cfg.action.warm_start,
        formulas,
        ..MinimizeOptions::default()
    };
    let result = minimize_action(&problem, params, &kernel, &grid, &opts)?;
    let residual = el_residual(&result.path, result.dt, params, &kernel, &grid, &opts.formulas)?;
    let curvature = min_curvature(&result.path, result.dt, params, &kernel, &opts.formulas)?;
    let diagnostics = ActionDiagnostics::new(&result, &residual, &formula_report);
    out.write("path.csv", |w| Ok(write_path_csv(&result.path, result.dt, &grid, w)?))?;
    out.write("el_residual.csv", |w| {
        Ok(write_residual_csv(&residual, result.dt, &grid, w)?)
    })?;
    out.write_json(
        "diagnostics.json",
        &json!({
            "diagnostics": diagnostics,
            "grad_scale": result.grad_scale,
            "min_d2l_dsdot2": curvature,
            "descent_fallbacks": result.descent_fallbacks,
            "formula_checks": formula_report.checks,
            "history": result.history,
        }),
    )?;
    let summary = vec![
        entry("action", result.action, cfg.grid.m, result.dt, None),
        entry(
            "grad_norm",
            result.grad_norm,
            cfg.grid.m,
            result.dt,
            Some(cfg.action.tol_grad * result.grad_scale),
        ),
        entry(
            "el_residual_max",
            diagnostics.el_residual_max,
            cfg.grid.m,
            result.dt,
            None,
        ),
        entry("min_d2l_dsdot2", curvature, cfg.grid.m, result.dt, None),
    ];
    report(
        out,
        "action",
        cfg,
        summary,
        json!({ "iters": result.iters, "converged": result.converged }),
    )?;
    if !result.converged {
        return Err(CliError::Numerical(format!(
            "action minimization did not converge in {} iterations (gradient {:.3e}, target {:.3e})",
            result.iters,
            result.grad_norm,
            cfg.action.tol_grad * result.grad_scale
        )));
    }
    Ok(())
}

pub fn ldp_check(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let a = cfg.ldp.a;
    if !(a > 1.0 && a.is_finite()) {
        return Err(CliError::Config(format!("ldp.a must exceed 1, got {a}")));
    }
    if cfg.ldp.sizes.is_empty() || cfg.ldp.sizes.contains(&0) {
        return Err(CliError::Config("ldp.sizes must be nonempty and positive".into()));
    }
    let limit = -ell(a)?;
    let slopes: Vec<(u64, f64)> = cfg
        .ldp
        .sizes
        .iter()
        .map(|&n| Ok((n, poisson_ldp_slope(n, a)?)))
        .collect::<Result<_, graphon_ldp::Error>>()?;
    out.write("ldp.csv", |w| {
        writeln!(w, "n,slope,limit,error")?;
        for (n, s) in &slopes {
            writeln!(w, "{n},{s},{limit},{}", (s - limit).abs())?;
        }
        Ok(())
    })?;
    let summary = slopes
        .iter()
        .map(|(n, s)| entry(&format!("slope_n{n}"), *s, *n as usize, 0.0, None))
        .chain(std::iter::once(entry("limit", limit, 0, 0.0, None)))
        .collect();
    report(out, "ldp-check", cfg, summary, json!({ "a": a }))
}
