//! Connectivity kernels, W-random network sampling and the graphon
//! convergence diagnostic.
//!
//! Sparsity convention: `phi` is the degree scale. An ordered pair `(j, k)`,
//! `j != k`, carries `J^{jk} = +1` with probability `(phi / N) p_+(x^j, x^k)`
//! and `-1` with probability `(phi / N) p_-(x^j, x^k)`, so that
//! `phi⁻¹ Σ_k J^{jk} g(x^k)` approximates `N⁻¹ Σ_k 𝒥(x^j, x^k) g(x^k)`.
//! `phi = N` turns the kernel itself into an edge probability.

mod format;

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::circle_distance;

pub use format::{read_network, write_network};

/// Spatial domain of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// `[0, 2π)` with the wrap-around metric.
    Circle,
    /// `(0, 1]` with the absolute-value metric.
    UnitInterval,
}

impl Domain {
    pub fn distance(self, a: f64, b: f64) -> f64 {
        match self {
            Domain::Circle => circle_distance(a, b),
            Domain::UnitInterval => (a - b).abs(),
        }
    }

    /// Canonical node positions: `2πj/N` (j = 0..N) on the circle,
    /// `j/N` (j = 1..=N) on the unit interval.
    pub fn canonical_positions(self, n: usize) -> Vec<f64> {
        match self {
            Domain::Circle => (0..n).map(|j| TAU * j as f64 / n as f64).collect(),
            Domain::UnitInterval => (1..=n).map(|j| j as f64 / n as f64).collect(),
        }
    }
}

/// Parametric kernel families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GraphonFamily {
    /// `𝒥 ≡ value`.
    Constant { value: f64 },
    /// `𝒥(θ, θ') = mean + amplitude·cos(θ − θ')` on the circle.
    InhomogeneousCircle { mean: f64, amplitude: f64 },
    /// `𝒥(x, y) = (1 − β)² (x y)^{−β}` on `(0, 1]`, `0 < β < γ < 1`.
    /// `gamma` is validated but plays no further role.
    PowerLaw { beta: f64, gamma: f64 },
    /// Ring surrogate of a rewired lattice: `near` within circle distance
    /// `radius`, `far` outside.
    SmallWorld { near: f64, far: f64, radius: f64 },
}

impl GraphonFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            GraphonFamily::Constant { .. } => "constant",
            GraphonFamily::InhomogeneousCircle { .. } => "inhomogeneous-circle",
            GraphonFamily::PowerLaw { .. } => "power-law",
            GraphonFamily::SmallWorld { .. } => "small-world",
        }
    }
}

/// A connectivity kernel together with its sampling symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphonSpec {
    #[serde(flatten)]
    pub family: GraphonFamily,
    #[serde(default = "default_symmetric")]
    pub symmetric: bool,
}

fn default_symmetric() -> bool {
    true
}

/// Result of the dense-grid spot checks on a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelCheck {
    pub max_abs: f64,
    pub bound: f64,
    pub max_lipschitz_ratio: f64,
    pub bounded_ok: bool,
    pub lipschitz_ok: bool,
    /// Families that are not expected to satisfy the Lipschitz hypothesis.
    pub lipschitz_exempt: bool,
}

impl GraphonSpec {
    pub fn new(family: GraphonFamily) -> Result<Self> {
        let spec = GraphonSpec {
            family,
            symmetric: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match self.family {
            GraphonFamily::Constant { value } if !value.is_finite() => bad(format!("constant kernel value {value}")),
            GraphonFamily::InhomogeneousCircle { mean, amplitude } if !(mean.is_finite() && amplitude.is_finite()) => {
                bad("inhomogeneous-circle parameters must be finite".into())
            }
            GraphonFamily::PowerLaw { beta, gamma } if !(0.0 < beta && beta < gamma && gamma < 1.0) => bad(format!(
                "power-law needs 0 < beta < gamma < 1, got beta = {beta}, gamma = {gamma}"
            )),
            GraphonFamily::SmallWorld { near, far, radius }
                if !(near.is_finite() && far.is_finite() && radius > 0.0 && radius <= std::f64::consts::PI) =>
            {
                bad(format!(
                    "small-world needs finite levels and 0 < radius <= π, got radius = {radius}"
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn domain(&self) -> Domain {
        match self.family {
            GraphonFamily::PowerLaw { .. } => Domain::UnitInterval,
            _ => Domain::Circle,
        }
    }

    pub fn tag(&self) -> &'static str {
        self.family.tag()
    }

    /// `𝒥(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self.family {
            GraphonFamily::Constant { value } => value,
            GraphonFamily::InhomogeneousCircle { mean, amplitude } => mean + amplitude * (x - y).cos(),
            GraphonFamily::PowerLaw { beta, .. } => (1.0 - beta).powi(2) * (x * y).powf(-beta),
            GraphonFamily::SmallWorld { near, far, radius } => {
                if circle_distance(x, y) <= radius {
                    near
                } else {
                    far
                }
            }
        }
    }

    /// `C_𝒥 = sup |𝒥|`; infinite for the power-law family.
    pub fn bound(&self) -> f64 {
        match self.family {
            GraphonFamily::Constant { value } => value.abs(),
            GraphonFamily::InhomogeneousCircle { mean, amplitude } => mean.abs() + amplitude.abs(),
            GraphonFamily::PowerLaw { .. } => f64::INFINITY,
            GraphonFamily::SmallWorld { near, far, .. } => near.abs().max(far.abs()),
        }
    }

    /// The power-law kernel is unbounded at the origin and the small-world
    /// kernel jumps at `radius`.
    pub fn lipschitz_exempt(&self) -> bool {
        matches!(
            self.family,
            GraphonFamily::PowerLaw { .. } | GraphonFamily::SmallWorld { .. }
        )
    }

    /// Spot-checks `|𝒥| <= C_𝒥` and the Lipschitz constant on an `n x n` grid.
    pub fn check(&self, n: usize) -> KernelCheck {
        let domain = self.domain();
        let pts = domain.canonical_positions(n.max(2));
        let mut max_abs = 0.0_f64;
        let mut max_ratio = 0.0_f64;
        for (a, &x) in pts.iter().enumerate() {
            for (b, &y) in pts.iter().enumerate() {
                let v = self.eval(x, y);
                max_abs = max_abs.max(v.abs());
                let y_next = pts[(b + 1) % pts.len()];
                let x_next = pts[(a + 1) % pts.len()];
                let dy = domain.distance(y, y_next);
                let dx = domain.distance(x, x_next);
                if dy > 0.0 {
                    max_ratio = max_ratio.max((self.eval(x, y_next) - v).abs() / dy);
                }
                if dx > 0.0 {
                    max_ratio = max_ratio.max((self.eval(x_next, y) - v).abs() / dx);
                }
            }
        }
        let bound = self.bound();
        // the grid ratio underestimates the derivative by at most a factor ~1 + O(h²)
        let lipschitz_ok = max_ratio <= bound * (1.0 + 1e-9);
        KernelCheck {
            max_abs,
            bound,
            max_lipschitz_ratio: max_ratio,
            bounded_ok: max_abs <= bound * (1.0 + 1e-12),
            lipschitz_ok,
            lipschitz_exempt: self.lipschitz_exempt(),
        }
    }
}

type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// How a signed kernel splits into positive and negative edge probabilities.
#[derive(Clone, Default)]
pub enum EdgeSplit {
    /// `p_+ = max(𝒥, 0)`, `p_- = max(−𝒥, 0)`.
    #[default]
    FromKernel,
    Custom {
        positive: PairFn,
        negative: PairFn,
    },
}

impl std::fmt::Debug for EdgeSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeSplit::FromKernel => f.write_str("FromKernel"),
            EdgeSplit::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl EdgeSplit {
    pub fn custom(
        positive: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        negative: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        EdgeSplit::Custom {
            positive: Arc::new(positive),
            negative: Arc::new(negative),
        }
    }

    fn probabilities(&self, spec: &GraphonSpec, x: f64, y: f64) -> (f64, f64) {
        match self {
            EdgeSplit::FromKernel => {
                let v = spec.eval(x, y);
                (v.max(0.0), (-v).max(0.0))
            }
            EdgeSplit::Custom { positive, negative } => (positive(x, y), negative(x, y)),
        }
    }
}

/// A sampled sparse signed network. Rows are stored in CSR form sorted by
/// column; `row(j)` lists `(k, J^{jk})` for nonzero couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    positions: Vec<f64>,
    row_ptr: Vec<usize>,
    entries: Vec<(usize, i8)>,
    phi: f64,
    seed: u64,
    family: String,
}

impl Network {
    /// Builds a network from explicit `(j, k, J^{jk})` triples.
    pub fn from_edges(
        positions: Vec<f64>,
        mut edges: Vec<(usize, usize, i8)>,
        phi: f64,
        seed: u64,
        family: impl Into<String>,
    ) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("network needs N >= 2, got {n}")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidInput(format!("phi must be positive, got {phi}")));
        }
        edges.retain(|e| e.2 != 0);
        edges.sort_unstable_by_key(|e| (e.0, e.1));
        edges.dedup_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut entries = Vec::with_capacity(edges.len());
        for &(j, k, w) in &edges {
            if j >= n || k >= n {
                return Err(Error::IndexOutOfRange {
                    index: j.max(k),
                    len: n,
                });
            }
            if !(-1..=1).contains(&w) {
                return Err(Error::InvalidInput(format!(
                    "coupling {w} at ({j}, {k}) is not in {{-1, 0, 1}}"
                )));
            }
            row_ptr[j + 1] += 1;
            entries.push((k, w));
        }
        for j in 0..n {
            row_ptr[j + 1] += row_ptr[j];
        }
        Ok(Network {
            n,
            positions,
            row_ptr,
            entries,
            phi,
            seed,
            family: family.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn row(&self, j: usize) -> &[(usize, i8)] {
        &self.entries[self.row_ptr[j]..self.row_ptr[j + 1]]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.row_ptr[j + 1] - self.row_ptr[j]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|j| self.degree(j)).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.entries.len()
    }

    /// All `(j, k, J^{jk})` triples in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        (0..self.n).flat_map(move |j| self.row(j).iter().map(move |&(k, w)| (j, k, w)))
    }

    /// `J^{jk}`, zero when absent.
    pub fn coupling(&self, j: usize, k: usize) -> i8 {
        let row = self.row(j);
        row.binary_search_by_key(&k, |e| e.0).map(|i| row[i].1).unwrap_or(0)
    }

    /// Transposed adjacency: for each `k`, the `(j, J^{jk})` with `J^{jk} != 0`.
    pub fn in_neighbors(&self) -> Vec<Vec<(usize, i8)>> {
        let mut cols = vec![Vec::new(); self.n];
        for (j, k, w) in self.edges() {
            cols[k].push((j, w));
        }
        cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(j, k, w)| self.coupling(k, j) == w)
    }
}

/// Samples a W-random network at the canonical positions of `spec`'s domain.
/// Self-loops are never drawn.
pub fn sample_network(spec: &GraphonSpec, n: usize, phi: f64, split: &EdgeSplit, seed: u64) -> Result<Network> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::InvalidInput(format!("N must be at least 2, got {n}")));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidInput(format!("phi must be positive, got {phi}")));
    }
    let positions = spec.domain().canonical_positions(n);
    let scale = phi / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();

    let draw = |j: usize, k: usize, rng: &mut ChaCha8Rng| -> Result<i8> {
        let (pp, pm) = split.probabilities(spec, positions[j], positions[k]);
        let (pp, pm) = (scale * pp, scale * pm);
        if !(pp >= 0.0 && pm >= 0.0) {
            return Err(Error::InvalidInput(format!("negative edge probability at ({j}, {k})")));
        }
        if pp + pm > 1.0 {
            return Err(Error::ProbabilityOverflow {
                j,
                k,
                probability: pp + pm,
            });
        }
        let u: f64 = rng.random();
        Ok(if u < pp {
            1
        } else if u < pp + pm {
            -1
        } else {
            0
        })
    };

    for j in 0..n {
        if spec.symmetric {
            for k in (j + 1)..n {
                let w = draw(j, k, &mut rng)?;
                if w != 0 {
                    edges.push((j, k, w));
                    edges.push((k, j, w));
                }
            }
        } else {
            for k in (0..n).filter(|&k| k != j) {
                let w = draw(j, k, &mut rng)?;
                if w != 0 {
                    edges.push((j, k, w));
                }
            }
        }
    }
    Network::from_edges(positions, edges, phi, seed, spec.tag())
}

/// Per-node discrepancy between the rescaled adjacency and the kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceDiagnostic {
    /// `η^j = sup_{α ∈ {−1,0,1}^N} |Σ_k ((N/φ) J^{jk} − 𝒥(x^j, x^k)) α^k|`.
    pub eta: Vec<f64>,
    /// `N⁻¹ Σ_j η^j`.
    pub mean_eta: f64,
    /// Same sum for uniformly random `α`, averaged over the trials.
    pub fixed_sign_eta: Vec<f64>,
    pub mean_fixed_sign_eta: f64,
}

/// Computes `η^j` exactly: `α^k = sign(...)` attains the supremum, so `η^j`
/// is the ℓ¹ norm of the row discrepancy. `trials` random sign vectors give
/// the typical (fixed-configuration) discrepancy alongside.
pub fn eta_diagnostic(network: &Network, spec: &GraphonSpec, trials: usize, seed: u64) -> ConvergenceDiagnostic {
    let n = network.n();
    let x = network.positions();
    let rescale = n as f64 / network.phi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<Vec<f64>> = (0..trials)
        .map(|_| (0..n).map(|_| rng.random_range(-1_i32..=1) as f64).collect())
        .collect();

    let mut eta = vec![0.0; n];
    let mut fixed = vec![0.0; n];
    let mut row = vec![0.0; n];
    for j in 0..n {
        for (k, r) in row.iter_mut().enumerate() {
            *r = -spec.eval(x[j], x[k]);
        }
        for &(k, w) in network.row(j) {
            row[k] += rescale * w as f64;
        }
        eta[j] = row.iter().map(|d| d.abs()).sum();
        if trials > 0 {
            fixed[j] = signs
                .iter()
                .map(|a| a.iter().zip(&row).map(|(a, d)| a * d).sum::<f64>().abs())
                .sum::<f64>()
                / trials as f64;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    ConvergenceDiagnostic {
        mean_eta: mean(&eta),
        mean_fixed_sign_eta: mean(&fixed),
        eta,
        fixed_sign_eta: fixed,
    }
}

/// `|Σ_k ((N/φ) J^{jk} − 𝒥(x^j, x^k)) α^k|` for a given sign vector.
pub fn signed_discrepancy(network: &Network, spec: &GraphonSpec, j: usize, signs: &[f64]) -> f64 {
    let n = network.n();
    let x = network.positions();
    let rescale = n as f64 / network.phi();
    let mut sum: f64 = (0..n).map(|k| -spec.eval(x[j], x[k]) * signs[k]).sum();
    for &(k, w) in network.row(j) {
        sum += rescale * w as f64 * signs[k];
    }
    sum.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(mean: f64, amplitude: f64) -> GraphonSpec {
        GraphonSpec::new(GraphonFamily::InhomogeneousCircle { mean, amplitude }).unwrap()
    }

    #[test]
    fn constant_kernel_edge_density_is_binomial() {
        let j0 = 0.3;
        let spec = GraphonSpec::new(GraphonFamily::Constant { value: j0 }).unwrap();
        let n = 400;
        let net = sample_network(&spec, n, n as f64, &EdgeSplit::FromKernel, 11).unwrap();
        let pairs = (n * (n - 1) / 2) as f64;
        let present = net.edge_count() as f64 / 2.0;
        let density = present / pairs;
        let sigma = (j0 * (1.0 - j0) / pairs).sqrt();
        assert!(
            (density - j0).abs() <= 3.0 * sigma,
            "density {density}, 3σ = {}",
            3.0 * sigma
        );
        assert!(net.is_symmetric());
    }

    #[test]
    fn zero_split_gives_empty_graph() {
        let spec = circle(1.0, 0.5);
        let split = EdgeSplit::custom(|_, _| 0.0, |_, _| 0.0);
        let net = sample_network(&spec, 50, 10.0, &split, 1).unwrap();
        assert_eq!(net.edge_count(), 0);
    }

    #[test]
    fn probability_overflow_names_the_pair() {
        let spec = GraphonSpec::new(GraphonFamily::Constant { value: 2.0 }).unwrap();
        match sample_network(&spec, 10, 10.0, &EdgeSplit::FromKernel, 0) {
            Err(Error::ProbabilityOverflow { j, k, probability }) => {
                assert_eq!((j, k), (0, 1));
                assert!((probability - 2.0).abs() < 1e-12);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn signed_couplings_follow_split() {
        let spec = GraphonSpec {
            family: GraphonFamily::Constant { value: 0.0 },
            symmetric: false,
        };
        let split = EdgeSplit::custom(|_, _| 0.2, |_, _| 0.5);
        let n = 300;
        let net = sample_network(&spec, n, n as f64, &split, 5).unwrap();
        let (mut plus, mut minus) = (0usize, 0usize);
        for (_, _, w) in net.edges() {
            if w > 0 {
                plus += 1
            } else {
                minus += 1
            }
        }
        let pairs = (n * (n - 1)) as f64;
        for (count, p) in [(plus, 0.2), (minus, 0.5)] {
            let sd = (p * (1.0 - p) / pairs).sqrt();
            assert!((count as f64 / pairs - p).abs() < 4.0 * sd);
        }
        assert!(!net.is_symmetric());
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = circle(1.0, 0.5);
        let a = sample_network(&spec, 200, 40.0, &EdgeSplit::FromKernel, 99).unwrap();
        let b = sample_network(&spec, 200, 40.0, &EdgeSplit::FromKernel, 99).unwrap();
        let c = sample_network(&spec, 200, 40.0, &EdgeSplit::FromKernel, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn max_degree_within_margin() {
        let spec = circle(1.0, 0.5);
        let n = 2000;
        let phi = (n as f64).powf(0.7);
        let net = sample_network(&spec, n, phi, &EdgeSplit::FromKernel, 3).unwrap();
        let c = spec.bound();
        assert!((net.max_degree() as f64) <= 3.0 * c * phi);
    }

    #[test]
    fn power_law_degree_profile() {
        let beta = 0.25;
        let spec = GraphonSpec::new(GraphonFamily::PowerLaw { beta, gamma: 0.5 }).unwrap();
        let n = 2000;
        let phi = 0.02 * n as f64;
        let net = sample_network(&spec, n, phi, &EdgeSplit::FromKernel, 17).unwrap();
        // mean degree over ten position blocks, then a log-log slope fit
        let blocks = 10;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for b in 0..blocks {
            let range = (b * n / blocks)..((b + 1) * n / blocks);
            let len = range.len() as f64;
            let mean_x: f64 = range.clone().map(|j| net.positions()[j]).map(f64::ln).sum::<f64>() / len;
            let mean_deg: f64 = range.map(|j| net.degree(j) as f64).sum::<f64>() / len;
            xs.push(mean_x);
            ys.push(mean_deg.ln());
        }
        let mx = xs.iter().sum::<f64>() / blocks as f64;
        let my = ys.iter().sum::<f64>() / blocks as f64;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + beta).abs() < 0.05, "fitted slope {slope}");
    }

    #[test]
    fn power_law_parameter_domain() {
        assert!(GraphonSpec::new(GraphonFamily::PowerLaw { beta: 1.2, gamma: 0.5 }).is_err());
        assert!(GraphonSpec::new(GraphonFamily::PowerLaw { beta: 0.6, gamma: 0.5 }).is_err());
        assert!(GraphonSpec::new(GraphonFamily::PowerLaw { beta: 0.3, gamma: 0.5 }).is_ok());
    }

    #[test]
    fn kernel_checks() {
        let c = circle(1.0, 0.5).check(128);
        assert!(c.bounded_ok && c.lipschitz_ok && !c.lipschitz_exempt);
        let sw = GraphonSpec::new(GraphonFamily::SmallWorld {
            near: 0.9,
            far: 0.1,
            radius: 0.5,
        })
        .unwrap()
        .check(128);
        assert!(sw.bounded_ok && sw.lipschitz_exempt);
        let pl = GraphonSpec::new(GraphonFamily::PowerLaw { beta: 0.3, gamma: 0.5 })
            .unwrap()
            .check(64);
        assert!(pl.lipschitz_exempt && pl.bound.is_infinite());
    }

    #[test]
    fn eta_exact_cases() {
        // complete graph at phi = N reproduces 𝒥 ≡ 1 exactly
        let n = 30;
        let positions = Domain::Circle.canonical_positions(n);
        let edges: Vec<_> = (0..n).flat_map(|j| (0..n).map(move |k| (j, k, 1i8))).collect();
        let full = Network::from_edges(positions.clone(), edges, n as f64, 0, "constant").unwrap();
        let one = GraphonSpec::new(GraphonFamily::Constant { value: 1.0 }).unwrap();
        let d = eta_diagnostic(&full, &one, 2, 0);
        assert!(d.eta.iter().all(|&e| e.abs() < 1e-12));

        let j0 = 0.4;
        let empty = Network::from_edges(positions, vec![], 5.0, 0, "constant").unwrap();
        let spec = GraphonSpec::new(GraphonFamily::Constant { value: j0 }).unwrap();
        let d = eta_diagnostic(&empty, &spec, 1, 0);
        for e in d.eta {
            assert!((e - n as f64 * j0).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_trick_attains_supremum() {
        let spec = circle(1.0, 0.5);
        let net = sample_network(&spec, 120, 30.0, &EdgeSplit::FromKernel, 8).unwrap();
        let d = eta_diagnostic(&net, &spec, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let signs: Vec<f64> = (0..120).map(|_| rng.random_range(-1_i32..=1) as f64).collect();
            let j = rng.random_range(0..120);
            assert!(signed_discrepancy(&net, &spec, j, &signs) <= d.eta[j] + 1e-9);
        }
    }

    #[test]
    fn eta_matches_its_expectation() {
        // E|(N/φ)J − 𝒥| = 2𝒥(1 − φ𝒥/N) per pair for a Bernoulli(φ𝒥/N) coupling
        let spec = circle(1.0, 0.5);
        let n = 800;
        let phi = (n as f64).powf(0.7);
        let net = sample_network(&spec, n, phi, &EdgeSplit::FromKernel, 21).unwrap();
        let d = eta_diagnostic(&net, &spec, 0, 0);
        let x = net.positions();
        let q = phi / n as f64;
        let mut expected = 0.0;
        for j in 0..n {
            for k in 0..n {
                let v = spec.eval(x[j], x[k]);
                expected += if j == k { v } else { 2.0 * v * (1.0 - q * v) };
            }
        }
        expected /= n as f64;
        assert!(
            (d.mean_eta - expected).abs() / expected < 0.02,
            "{} vs {expected}",
            d.mean_eta
        );
    }

    #[test]
    fn fixed_sign_discrepancy_decreases_with_n() {
        let spec = circle(1.0, 0.5);
        let mut last = f64::INFINITY;
        for n in [500, 1000, 2000] {
            let phi = (n as f64).powf(0.7);
            let net = sample_network(&spec, n, phi, &EdgeSplit::FromKernel, 7).unwrap();
            let d = eta_diagnostic(&net, &spec, 3, 1);
            let normalized = d.mean_fixed_sign_eta / n as f64;
            assert!(normalized < last, "N = {n}: {normalized} !< {last}");
            last = normalized;
        }
    }
}
