//! Finite-N SIS simulations against the density equation.
//!
//! For each network size, replicas resample the network and the initial
//! condition, simulate exactly, and record the sup over bins, states and
//! snapshot times of `|N⁻¹ count − ∫_bin ν dμ_Rie|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::{sample_network, Domain, EdgeSplit, GraphonSpec};
use crate::grid::{Bins, KernelMatrix, SpatialGrid};
use crate::meanfield::{evolve, sis_density};
use crate::model::{sis_rates, SisParams};
use crate::simulator::{conservation_defect, occupation_series, replica_seed, sample_sis_initial, simulate};

/// Initial infected probability `base + amplitude · cos θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectedProfile {
    pub base: f64,
    pub amplitude: f64,
}

impl InfectedProfile {
    pub fn at(&self, theta: f64) -> f64 {
        self.base + self.amplitude * theta.cos()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base - self.amplitude.abs() < 0.0 || self.base + self.amplitude.abs() > 1.0 {
            return Err(Error::InvalidInput(format!(
                "initial infected profile {} ± {} leaves [0, 1]",
                self.base, self.amplitude
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSetup {
    pub spec: GraphonSpec,
    pub params: SisParams,
    /// `φ_N = N^phi_exponent`
    pub phi_exponent: f64,
    pub bins: usize,
    pub horizon: f64,
    pub snapshot_dt: f64,
    pub replicas: usize,
    pub seed: u64,
    pub initial: InfectedProfile,
    /// Quadrature nodes per bin for the density equation.
    pub nodes_per_bin: usize,
    /// RK4 steps per snapshot interval.
    pub substeps: usize,
}

impl CompareSetup {
    pub fn validate(&self) -> Result<()> {
        if self.spec.domain() != Domain::Circle {
            return Err(Error::InvalidInput("comparison needs a graphon on the circle".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidInput("replicas must be at least 1".into()));
        }
        if self.bins == 0 || self.nodes_per_bin == 0 || self.substeps == 0 {
            return Err(Error::InvalidInput(
                "bins, nodes_per_bin and substeps must be positive".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.snapshot_dt > 0.0 && self.snapshot_dt <= self.horizon) {
            return Err(Error::InvalidInput("need 0 < snapshot_dt ≤ horizon".into()));
        }
        if !(self.phi_exponent > 0.0 && self.phi_exponent <= 1.0) {
            return Err(Error::InvalidInput("phi exponent must lie in (0, 1]".into()));
        }
        self.initial.validate()
    }

    pub fn snapshots(&self) -> usize {
        (self.horizon / self.snapshot_dt).round() as usize
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let k = self.snapshots();
        (0..=k)
            .map(|i| (i as f64 * self.snapshot_dt).min(self.horizon))
            .collect()
    }

    pub fn phi(&self, n: usize) -> f64 {
        (n as f64).powf(self.phi_exponent)
    }
}

/// Density-equation bin masses `[snapshot][state][bin]`.
pub fn mean_field_bin_masses(setup: &CompareSetup) -> Result<Vec<Vec<Vec<f64>>>> {
    setup.validate()?;
    let grid = SpatialGrid::circle_midpoints(setup.bins * setup.nodes_per_bin);
    let kernel = KernelMatrix::new(&setup.spec, &grid);
    let infected: Vec<f64> = grid.nodes().iter().map(|&x| setup.initial.at(x)).collect();
    let s0: Vec<f64> = infected.iter().map(|i| 1.0 - i).collect();
    let snaps = setup.snapshots();
    let steps = snaps * setup.substeps;
    let (density, _) = evolve(
        &grid,
        &kernel,
        &sis_rates(setup.params),
        &sis_density(&s0),
        setup.horizon,
        steps,
    )?;
    Ok((0..=snaps)
        .map(|k| {
            (0..2)
                .map(|a| {
                    let nu = density.slice(k * setup.substeps, a);
                    (0..setup.bins)
                        .map(|b| {
                            (b * setup.nodes_per_bin..(b + 1) * setup.nodes_per_bin)
                                .map(|i| grid.weights()[i] * nu[i])
                                .sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaOutcome {
    /// Sup over snapshots, states and bins of the bin-mass deviation.
    pub deviation: f64,
    /// Same in per-bin fractions (count / nodes in bin vs bin average of ν).
    pub density_deviation: f64,
    /// Largest flux–occupation identity violation (integer; 0 expected).
    pub conservation_defect: i64,
    pub events: usize,
}

/// One replica at network size `n`.
pub fn run_replica(
    setup: &CompareSetup,
    mean_field: &[Vec<Vec<f64>>],
    n: usize,
    replica: usize,
) -> Result<ReplicaOutcome> {
    let seed = replica_seed(
        setup.seed ^ (n as u64).wrapping_mul(0xA24B_AED4_963E_E407),
        replica as u64,
    );
    let network = sample_network(&setup.spec, n, setup.phi(n), &EdgeSplit::FromKernel, seed)?;
    let init = sample_sis_initial(network.positions(), |x| setup.initial.at(x), replica_seed(seed, 1));
    let traj = simulate(
        &network,
        &sis_rates(setup.params),
        &init,
        setup.horizon,
        replica_seed(seed, 2),
    )?;
    let bins = Bins::circle(setup.bins);
    let times = setup.snapshot_times();
    let series = occupation_series(&traj, &times, &bins)?;
    let mut per_bin = vec![0u64; setup.bins];
    for &x in network.positions() {
        per_bin[bins.bin_of(x)] += 1;
    }
    let bin_mass = 1.0 / setup.bins as f64;
    let mut deviation = 0.0_f64;
    let mut density_deviation = 0.0_f64;
    for (snap, mf) in series.iter().zip(mean_field) {
        for a in 0..2 {
            for b in 0..setup.bins {
                deviation = deviation.max((snap.mass(a, b) - mf[a][b]).abs());
                if per_bin[b] > 0 {
                    let frac = snap.counts[a][b] as f64 / per_bin[b] as f64;
                    density_deviation = density_deviation.max((frac - mf[a][b] / bin_mass).abs());
                }
            }
        }
    }
    let mut defect = 0;
    for &t in &times {
        defect = defect.max(conservation_defect(&traj, &bins, t)?);
    }
    Ok(ReplicaOutcome {
        deviation,
        density_deviation,
        conservation_defect: defect,
        events: traj.events.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub phi: f64,
    pub deviations: Vec<f64>,
    pub median_deviation: f64,
    pub median_density_deviation: f64,
    pub max_conservation_defect: i64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Runs every replica at every size (replicas in parallel).
pub fn compare_sweep(setup: &CompareSetup, sizes: &[usize]) -> Result<Vec<SweepPoint>> {
    setup.validate()?;
    if sizes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidInput("network sizes must be at least 2".into()));
    }
    let mf = mean_field_bin_masses(setup)?;
    sizes
        .iter()
        .map(|&n| {
            let outcomes: Vec<ReplicaOutcome> = (0..setup.replicas)
                .into_par_iter()
                .map(|r| run_replica(setup, &mf, n, r))
                .collect::<Result<_>>()?;
            let deviations: Vec<f64> = outcomes.iter().map(|o| o.deviation).collect();
            let density: Vec<f64> = outcomes.iter().map(|o| o.density_deviation).collect();
            Ok(SweepPoint {
                n,
                phi: setup.phi(n),
                median_deviation: median(&deviations),
                median_density_deviation: median(&density),
                max_conservation_defect: outcomes.iter().map(|o| o.conservation_defect).max().unwrap_or(0),
                deviations,
            })
        })
        .collect()
}
