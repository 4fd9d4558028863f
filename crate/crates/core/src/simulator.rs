//! Exact event-driven simulation of the network jump process.
//!
//! Rates only change when a node flips, so between events every node's
//! exit rate is constant and the Doob–Gillespie scheme (exponential clock on
//! the total rate, then a categorical draw of node and channel) is exact.
//! Fields are kept as integer sums `Σ_k J^{jk} χ{σ^k = β}`; a flip of `k`
//! touches only the rows that contain `k`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphon::Network;
use crate::grid::Bins;
use crate::model::{RateFamily, State, StateSpace, INFECTED, SUSCEPTIBLE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub node: usize,
    pub from: State,
    pub to: State,
}

/// Event log of one realisation on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub events: Vec<Event>,
    pub initial_config: Vec<State>,
    pub horizon: f64,
    pub positions: Vec<f64>,
    pub states: StateSpace,
}

impl TrajectoryRecord {
    pub fn n(&self) -> usize {
        self.initial_config.len()
    }

    /// Configuration right after all events with `t <= time`.
    pub fn config_at(&self, time: f64) -> Vec<State> {
        let mut config = self.initial_config.clone();
        for e in self.events.iter().take_while(|e| e.t <= time) {
            config[e.node] = e.to;
        }
        config
    }

    /// Writes one JSON object `{t, j, from, to}` per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            t: f64,
            j: usize,
            from: &'a str,
            to: &'a str,
        }
        for e in &self.events {
            let line = Line {
                t: e.t,
                j: e.node,
                from: self.states.label(e.from),
                to: self.states.label(e.to),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Binary sum tree over node rates. Parents are recomputed from children on
/// every update, so no rounding drift accumulates.
struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    fn new(values: &[f64]) -> Self {
        let leaves = values.len().next_power_of_two().max(1);
        let mut tree = vec![0.0; 2 * leaves];
        tree[leaves..leaves + values.len()].copy_from_slice(values);
        for i in (1..leaves).rev() {
            tree[i] = tree[2 * i] + tree[2 * i + 1];
        }
        SumTree { leaves, tree }
    }

    fn total(&self) -> f64 {
        self.tree[1]
    }

    fn set(&mut self, index: usize, value: f64) {
        let mut i = index + self.leaves;
        self.tree[i] = value;
        while i > 1 {
            i /= 2;
            self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1];
        }
    }

    /// Leaf `i` with `Σ_{l<i} v_l <= target < Σ_{l<=i} v_l`, skipping zero leaves.
    fn find(&self, mut target: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.tree[2 * i];
            if (target < left && left > 0.0) || self.tree[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                target -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

fn checked_rate(rate: f64, node: usize, time: f64) -> Result<f64> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(rate)
    } else {
        Err(Error::RateOverflow { node, time, rate })
    }
}

/// Samples one trajectory on `[0, horizon]`. Deterministic given `seed`.
pub fn simulate(
    network: &Network,
    rates: &dyn RateFamily,
    init: &[State],
    horizon: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let n = network.n();
    let n_states = rates.states().size();
    if init.len() != n {
        return Err(Error::InvalidInput(format!(
            "initial configuration has {} entries, network has {n} nodes",
            init.len()
        )));
    }
    if let Some(&bad) = init.iter().find(|&&s| s >= n_states) {
        return Err(Error::InvalidInput(format!(
            "state index {bad} outside the state space"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }

    let positions = network.positions();
    let inv_phi = network.phi().recip();
    let in_neighbors = network.in_neighbors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = init.to_vec();

    let mut counts = vec![0_i64; n * n_states];
    for j in 0..n {
        for &(k, w) in network.row(j) {
            counts[j * n_states + config[k]] += w as i64;
        }
    }
    let mut field = vec![0.0; n_states];
    let node_rate = |j: usize, config: &[State], counts: &[i64], field: &mut [f64], t: f64| -> Result<f64> {
        for (f, c) in field.iter_mut().zip(&counts[j * n_states..(j + 1) * n_states]) {
            *f = *c as f64 * inv_phi;
        }
        checked_rate(rates.exit_rate(positions[j], config[j], field), j, t)
    };
    let mut initial_rates = Vec::with_capacity(n);
    for j in 0..n {
        initial_rates.push(node_rate(j, &config, &counts, &mut field, 0.0)?);
    }
    let mut tree = SumTree::new(&initial_rates);

    let mut events = Vec::new();
    let mut t = 0.0;
    let mut channel_rates = vec![0.0; n_states];
    loop {
        let total = tree.total();
        if total <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(&mut rng);
        t += wait / total;
        if t > horizon {
            break;
        }
        let j = tree.find(rng.random::<f64>() * total);
        let from = config[j];
        for (f, c) in field.iter_mut().zip(&counts[j * n_states..(j + 1) * n_states]) {
            *f = *c as f64 * inv_phi;
        }
        let mut sum = 0.0;
        for (to, r) in channel_rates.iter_mut().enumerate() {
            *r = if to == from {
                0.0
            } else {
                rates.rate(to, positions[j], from, &field)
            };
            sum += *r;
        }
        let mut target = rng.random::<f64>() * sum;
        let mut to = from;
        for (b, &r) in channel_rates.iter().enumerate() {
            if r > 0.0 {
                to = b;
                if target < r {
                    break;
                }
                target -= r;
            }
        }
        debug_assert_ne!(to, from);

        events.push(Event { t, node: j, from, to });
        config[j] = to;
        for &(i, w) in &in_neighbors[j] {
            counts[i * n_states + from] -= w as i64;
            counts[i * n_states + to] += w as i64;
            let r = node_rate(i, &config, &counts, &mut field, t)?;
            tree.set(i, r);
        }
        let r = node_rate(j, &config, &counts, &mut field, t)?;
        tree.set(j, r);
    }

    Ok(TrajectoryRecord {
        events,
        initial_config: init.to_vec(),
        horizon,
        positions: positions.to_vec(),
        states: rates.states().clone(),
    })
}

/// Independent per-node draws: node `j` starts in state `s` with
/// probability `profile(x^j)[s]`.
pub fn sample_initial(positions: &[f64], profile: impl Fn(f64) -> Vec<f64>, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positions
        .iter()
        .map(|&x| {
            let p = profile(x);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (s, ps) in p.iter().enumerate() {
                acc += ps;
                if u < acc {
                    return s;
                }
            }
            p.len() - 1
        })
        .collect()
}

/// SIS initial condition: infected with probability `infected(x^j)`.
pub fn sample_sis_initial(positions: &[f64], infected: impl Fn(f64) -> f64, seed: u64) -> Vec<State> {
    sample_initial(
        positions,
        |x| {
            let p = infected(x).clamp(0.0, 1.0);
            let mut v = vec![0.0; 2];
            v[SUSCEPTIBLE] = 1.0 - p;
            v[INFECTED] = p;
            v
        },
        seed,
    )
}

/// Seed for replica `replica` of a run seeded with `seed` (splitmix64 mix).
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    let mut z = seed ^ replica.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Space-time atoms of the empirical reaction flux, each of mass `1/N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalFlux {
    pub n: usize,
    pub channels: Vec<(State, State)>,
    /// `atoms[c]` holds `(x^j, t)` for every event on channel `channels[c]`.
    pub atoms: Vec<Vec<(f64, f64)>>,
}

impl EmpiricalFlux {
    pub fn channel_index(&self, from: State, to: State) -> Option<usize> {
        self.channels.iter().position(|&c| c == (from, to))
    }

    /// Event counts on `channel` in bin `b` with time in `[t_lo, t_hi]`.
    pub fn count(&self, channel: usize, bins: &Bins, b: usize, t_lo: f64, t_hi: f64) -> u64 {
        self.atoms[channel]
            .iter()
            .filter(|&&(x, t)| t >= t_lo && t <= t_hi && bins.bin_of(x) == b)
            .count() as u64
    }

    /// `μ̂^N_{α→β}(bin × [t_lo, t_hi])`.
    pub fn mass(&self, channel: usize, bins: &Bins, b: usize, t_lo: f64, t_hi: f64) -> f64 {
        self.count(channel, bins, b, t_lo, t_hi) as f64 / self.n as f64
    }

    /// Per-bin counts over `[0, t]` for every channel: `[channel][bin]`.
    pub fn binned_counts(&self, bins: &Bins, t: f64) -> Vec<Vec<u64>> {
        self.atoms
            .iter()
            .map(|atoms| {
                let mut c = vec![0u64; bins.count];
                for &(x, s) in atoms {
                    if s <= t {
                        c[bins.bin_of(x)] += 1;
                    }
                }
                c
            })
            .collect()
    }

    /// CSV rows `channel,bin,t_lo,t_hi,mass` over a uniform time partition.
    pub fn write_csv<W: Write>(
        &self,
        states: &StateSpace,
        bins: &Bins,
        windows: &[(f64, f64)],
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "channel,bin,t_lo,t_hi,mass")?;
        for (c, &(a, b)) in self.channels.iter().enumerate() {
            let name = format!("{}->{}", states.label(a), states.label(b));
            for &(lo, hi) in windows {
                let mut counts = vec![0u64; bins.count];
                for &(x, t) in &self.atoms[c] {
                    // half-open windows, closed on the final one
                    if t >= lo && (t < hi || (hi == windows.last().unwrap().1 && t <= hi)) {
                        counts[bins.bin_of(x)] += 1;
                    }
                }
                for (bin, n) in counts.iter().enumerate() {
                    writeln!(out, "{name},{bin},{lo},{hi},{}", *n as f64 / self.n as f64)?;
                }
            }
        }
        Ok(())
    }
}

/// One atom per event, on channel `(from, to)`.
pub fn extract_flux(traj: &TrajectoryRecord) -> EmpiricalFlux {
    let channels = traj.states.channels();
    let mut atoms = vec![Vec::new(); channels.len()];
    for e in &traj.events {
        let c = channels
            .iter()
            .position(|&c| c == (e.from, e.to))
            .expect("event channel");
        atoms[c].push((traj.positions[e.node], e.t));
    }
    EmpiricalFlux {
        n: traj.n(),
        channels,
        atoms,
    }
}

/// `ν̂^N_t` restricted to a bin partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalOccupation {
    pub t: f64,
    pub n: usize,
    /// `counts[α][bin]`.
    pub counts: Vec<Vec<u64>>,
}

impl EmpiricalOccupation {
    /// `N⁻¹ · count`.
    pub fn mass(&self, state: State, bin: usize) -> f64 {
        self.counts[state][bin] as f64 / self.n as f64
    }

    pub fn masses(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / self.n as f64).collect())
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.iter().flatten().sum::<u64>() as f64 / self.n as f64
    }
}

fn histogram(positions: &[f64], config: &[State], n_states: usize, bins: &Bins) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; bins.count]; n_states];
    for (&x, &s) in positions.iter().zip(config) {
        counts[s][bins.bin_of(x)] += 1;
    }
    counts
}

/// Replays the event log up to `t`.
pub fn occupation_at(traj: &TrajectoryRecord, t: f64, bins: &Bins) -> Result<EmpiricalOccupation> {
    if !(0.0..=traj.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange {
            time: t,
            horizon: traj.horizon,
        });
    }
    Ok(EmpiricalOccupation {
        t,
        n: traj.n(),
        counts: histogram(&traj.positions, &traj.config_at(t), traj.states.size(), bins),
    })
}

/// Occupations at increasing times in one pass over the log.
pub fn occupation_series(traj: &TrajectoryRecord, times: &[f64], bins: &Bins) -> Result<Vec<EmpiricalOccupation>> {
    let n_states = traj.states.size();
    let mut counts = histogram(&traj.positions, &traj.initial_config, n_states, bins);
    let mut next = 0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=traj.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                time: t,
                horizon: traj.horizon,
            });
        }
        if out.last().is_some_and(|o: &EmpiricalOccupation| o.t > t) {
            return Err(Error::InvalidInput("occupation times must be nondecreasing".into()));
        }
        while next < traj.events.len() && traj.events[next].t <= t {
            let e = traj.events[next];
            let b = bins.bin_of(traj.positions[e.node]);
            counts[e.from][b] -= 1;
            counts[e.to][b] += 1;
            next += 1;
        }
        out.push(EmpiricalOccupation {
            t,
            n: traj.n(),
            counts: counts.clone(),
        });
    }
    Ok(out)
}

/// Largest integer violation of
/// `count_t(α, bin) − count_0(α, bin) = Σ_{β≠α} [n_{β→α} − n_{α→β}](bin × [0, t])`
/// over all states and bins. Zero for every valid trajectory.
pub fn conservation_defect(traj: &TrajectoryRecord, bins: &Bins, t: f64) -> Result<i64> {
    let start = occupation_at(traj, 0.0, bins)?;
    let end = occupation_at(traj, t, bins)?;
    let flux = extract_flux(traj);
    let moved = flux.binned_counts(bins, t);
    let mut worst = 0_i64;
    for a in 0..traj.states.size() {
        for b in 0..bins.count {
            let mut net = 0_i64;
            for (c, &(from, to)) in flux.channels.iter().enumerate() {
                if to == a {
                    net += moved[c][b] as i64;
                }
                if from == a {
                    net -= moved[c][b] as i64;
                }
            }
            let lhs = end.counts[a][b] as i64 - start.counts[a][b] as i64;
            worst = worst.max((lhs - net).abs());
        }
    }
    Ok(worst)
}

/// CSV rows `channel,bin,t_lo,t_hi,mass` for occupation snapshots
/// (`channel` is the state label, `t_lo = t_hi = t`).
pub fn write_occupation_csv<W: Write>(
    states: &StateSpace,
    snapshots: &[EmpiricalOccupation],
    mut out: W,
) -> Result<()> {
    writeln!(out, "channel,bin,t_lo,t_hi,mass")?;
    for snap in snapshots {
        for (a, row) in snap.counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{b},{},{},{}",
                    states.label(a),
                    snap.t,
                    snap.t,
                    c as f64 / snap.n as f64
                )?;
            }
        }
    }
    Ok(())
}
