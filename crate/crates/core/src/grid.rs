//! Quadrature grids and spatial bins on the circle.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::graphon::{Domain, GraphonSpec};

/// Quadrature nodes for `κ = ρ dμ_Rie` with `μ_Rie` normalized to mass 1.
/// `weights` already include the density, so `Σ_i weights_i = κ(E)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl SpatialGrid {
    /// Periodic trapezoidal rule: `θ_i = 2π i / M`, weights `1/M`, uniform density.
    pub fn circle(m: usize) -> Self {
        Self::circle_shifted(m, 0.0)
    }

    /// Nodes at the bin centres `2π (i + 1/2) / M`.
    pub fn circle_midpoints(m: usize) -> Self {
        Self::circle_shifted(m, 0.5)
    }

    fn circle_shifted(m: usize, shift: f64) -> Self {
        assert!(m > 0, "grid needs at least one node");
        SpatialGrid {
            nodes: (0..m).map(|i| TAU * (i as f64 + shift) / m as f64).collect(),
            weights: vec![1.0 / m as f64; m],
            density: vec![1.0; m],
        }
    }

    /// Periodic grid with a non-uniform density; weights are `ρ_i / M`.
    pub fn circle_with_density(m: usize, density: impl Fn(f64) -> f64) -> Self {
        let mut g = Self::circle(m);
        g.density = g.nodes.iter().map(|&x| density(x)).collect();
        g.weights = g.density.iter().map(|r| r / m as f64).collect();
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// `Σ_i weights_i f_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Dense `𝒥(θ_i, θ_k)` on a grid, pre-multiplied by the quadrature weights
/// so that `apply` computes `Σ_k w_k 𝒥(θ_i, θ_k) v_k`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    m: usize,
    raw: Vec<f64>,
    weighted: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(spec: &GraphonSpec, grid: &SpatialGrid) -> Self {
        Self::from_fn(|x, y| spec.eval(x, y), grid)
    }

    pub fn from_fn(kernel: impl Fn(f64, f64) -> f64, grid: &SpatialGrid) -> Self {
        let m = grid.len();
        let mut raw = vec![0.0; m * m];
        let mut weighted = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let v = kernel(grid.nodes[i], grid.nodes[k]);
                raw[i * m + k] = v;
                weighted[i * m + k] = v * grid.weights[k];
            }
        }
        KernelMatrix { m, raw, weighted }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// `𝒥(θ_i, θ_k)`.
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.raw[i * self.m + k]
    }

    /// `out_i = Σ_k w_k 𝒥(θ_i, θ_k) v_k`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weighted[i * self.m..(i + 1) * self.m];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `out_k = Σ_i w_i 𝒥(θ_i, θ_k) v_i` (integration over the first argument).
    pub fn apply_transpose(&self, grid: &SpatialGrid, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.m {
            let wi = grid.weights[i] * v[i];
            let row = &self.raw[i * self.m..(i + 1) * self.m];
            for (o, j) in out.iter_mut().zip(row) {
                *o += wi * j;
            }
        }
    }
}

/// Uniform partition of a domain into `m` bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bins {
    pub domain: Domain,
    pub count: usize,
}

impl Bins {
    pub fn new(domain: Domain, count: usize) -> Self {
        assert!(count > 0, "need at least one bin");
        Bins { domain, count }
    }

    pub fn circle(count: usize) -> Self {
        Self::new(Domain::Circle, count)
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let frac = match self.domain {
            Domain::Circle => x.rem_euclid(TAU) / TAU,
            // (0, 1]: the right endpoint belongs to the last bin
            Domain::UnitInterval => x.clamp(0.0, 1.0),
        };
        ((frac * self.count as f64) as usize).min(self.count - 1)
    }

    /// `[lo, hi)` of bin `b` in domain coordinates.
    pub fn edges(&self, b: usize) -> (f64, f64) {
        let span = match self.domain {
            Domain::Circle => TAU,
            Domain::UnitInterval => 1.0,
        };
        let w = span / self.count as f64;
        (b as f64 * w, (b + 1) as f64 * w)
    }
}
