//! Uniform grids, nodal functions and nodal measures.
//!
//! Measures carry their quadrature weights, so the duality pairing is a
//! plain dot product and the transpose identity holds exactly.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    n_nodes: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidGrid(format!(
                "n_nodes = {n_nodes}, at least 2 required"
            )));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_nodes,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_nodes).map(|i| self.node(i)))
    }

    /// Trapezoid weights: `dx` inside, `dx/2` at both ends.
    pub fn trapezoid_weights(&self) -> Array1<f64> {
        let dx = self.dx();
        let mut w = Array1::from_elem(self.n_nodes, dx);
        w[0] = 0.5 * dx;
        w[self.n_nodes - 1] = 0.5 * dx;
        w
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let r = ((x - self.x_min) / self.dx()).round();
        r.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    /// Node indices whose coordinate lies in `[a, b]` (with a tiny slack).
    pub fn indices_in(&self, a: f64, b: f64) -> std::ops::RangeInclusive<usize> {
        let tol = 1e-9 * self.dx();
        let lo = ((a - self.x_min - tol) / self.dx()).ceil().max(0.0) as usize;
        let hi_f = ((b - self.x_min + tol) / self.dx()).floor();
        if hi_f < 0.0 {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        let hi = (hi_f as usize).min(self.n_nodes - 1);
        lo..=hi
    }

    /// Linear interpolation of nodal values at `x`, constant beyond the ends.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (j, w) = self.locate(x);
        if w == 0.0 {
            values[j]
        } else {
            (1.0 - w) * values[j] + w * values[j + 1]
        }
    }

    /// Cell containing `x` as `(j, w)` with `x ≈ (1-w) x_j + w x_{j+1}`;
    /// points outside the grid snap to the nearest end with `w = 0`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let r = (x - self.x_min) / self.dx();
        let last = self.n_nodes - 1;
        if r <= 0.0 {
            return (0, 0.0);
        }
        if r >= last as f64 {
            return (last, 0.0);
        }
        let j = r.floor() as usize;
        let w = r - j as f64;
        if j >= last {
            (last, 0.0)
        } else {
            (j, w)
        }
    }

    pub fn check_same(&self, other: &SpaceGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.n_nodes,
                found: other.n_nodes,
                x_min: self.x_min,
                x_max: self.x_max,
            })
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n_nodes {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.n_nodes,
                found: len,
                x_min: self.x_min,
                x_max: self.x_max,
            })
        }
    }
}

/// Nodal values `f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFunction {
    pub grid: SpaceGrid,
    pub values: Array1<f64>,
}

impl DiscreteFunction {
    pub fn new(grid: SpaceGrid, values: Array1<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: SpaceGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().mapv(f);
        Self { grid, values }
    }

    pub fn constant(grid: SpaceGrid, c: f64) -> Self {
        Self {
            grid,
            values: Array1::from_elem(grid.n_nodes(), c),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: &self.values * c,
        }
    }
}

/// Nodal masses with quadrature weights folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub grid: SpaceGrid,
    pub masses: Array1<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: SpaceGrid, masses: Array1<f64>) -> Result<Self> {
        grid.check_len(masses.len())?;
        if masses.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                context: "measure masses".into(),
            });
        }
        Ok(Self { grid, masses })
    }

    pub fn zero(grid: SpaceGrid) -> Self {
        Self {
            grid,
            masses: Array1::zeros(grid.n_nodes()),
        }
    }

    /// Unit point mass at node `j`.
    pub fn dirac(grid: SpaceGrid, j: usize) -> Result<Self> {
        if j >= grid.n_nodes() {
            return Err(invalid("dirac node", format!("{j} out of range")));
        }
        let mut m = Self::zero(grid);
        m.masses[j] = 1.0;
        Ok(m)
    }

    /// Measure with density `rho` (nodal values) via trapezoid weights.
    pub fn from_density(density: &DiscreteFunction) -> Self {
        Self {
            grid: density.grid,
            masses: &density.values * &density.grid.trapezoid_weights(),
        }
    }

    /// Discrete Lebesgue measure on the grid.
    pub fn lebesgue(grid: SpaceGrid) -> Self {
        Self {
            grid,
            masses: grid.trapezoid_weights(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            masses: &self.masses * c,
        }
    }
}

/// Lyapunov weights `(V, ψ)` with `0 < ψ ≤ V`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    pub v: DiscreteFunction,
    pub psi: DiscreteFunction,
}

impl WeightPair {
    pub fn new(v: DiscreteFunction, psi: DiscreteFunction) -> Result<Self> {
        v.grid.check_same(&psi.grid)?;
        for (i, (&vi, &pi)) in v.values.iter().zip(psi.values.iter()).enumerate() {
            if !(pi > 0.0) {
                return Err(Error::Positivity(format!("psi[{i}] = {pi} is not > 0")));
            }
            if !(vi >= pi) {
                return Err(Error::Positivity(format!(
                    "psi[{i}] = {pi} exceeds V[{i}] = {vi}"
                )));
            }
        }
        Ok(Self { v, psi })
    }

    /// Rescales an arbitrary positive `psi` so that `max psi/V = 1`.
    pub fn normalized(v: DiscreteFunction, psi: DiscreteFunction) -> Result<Self> {
        v.grid.check_same(&psi.grid)?;
        let peak = psi
            .values
            .iter()
            .zip(v.values.iter())
            .map(|(p, v)| p / v)
            .fold(0.0, f64::max);
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Positivity(
                "psi has no positive finite values".into(),
            ));
        }
        let mut psi = psi.scaled(1.0 / peak);
        // Rounding in the division may push one ratio a hair above 1.
        psi.values.zip_mut_with(&v.values, |p, &vi| *p = p.min(vi));
        Self::new(v, psi)
    }
}

/// `⟨μ, f⟩ = Σ μ_i f_i`.
pub fn pairing(mu: &DiscreteMeasure, f: &DiscreteFunction) -> Result<f64> {
    mu.grid.check_same(&f.grid)?;
    Ok(mu.masses.dot(&f.values))
}

/// `‖μ‖_{M(V)} = Σ |μ_i| V_i`.
pub fn weighted_tv_norm(mu: &DiscreteMeasure, v: &DiscreteFunction) -> Result<f64> {
    mu.grid.check_same(&v.grid)?;
    Ok(mu
        .masses
        .iter()
        .zip(v.values.iter())
        .map(|(m, w)| m.abs() * w)
        .sum())
}

/// `‖f‖_{B(V)} = max |f_i| / V_i`.
pub fn weighted_sup_norm(f: &DiscreteFunction, v: &DiscreteFunction) -> Result<f64> {
    f.grid.check_same(&v.grid)?;
    Ok(f.values
        .iter()
        .zip(v.values.iter())
        .map(|(x, w)| x.abs() / w)
        .fold(0.0, f64::max))
}
