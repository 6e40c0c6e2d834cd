//! Growth-fragmentation with affine periodic rates
//! `g(t,x) = g₀(t) + g₁(t)x`, `β(t,x) = β₀(t) + β₁(t)x` and dual generator
//! `𝓛_t f = g f' + β ∫₀¹ κ(z) f(z·) dz − β f`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::floquet::power_iterate;
use crate::measure_space::{DiscreteFunction, SpaceGrid};
use crate::propagator::{
    assemble, assemble_steps, step_dual, DualGenerator, Method, Propagator, SparseOperator,
    StepScheme,
};
use crate::selection_mutation::interval_weights;

/// `value(t) = mean + sin_amp · sin(2πt/T + sin_phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCoefficient {
    pub mean: f64,
    #[serde(default)]
    pub sin_amp: f64,
    #[serde(default)]
    pub sin_phase: f64,
    pub period: f64,
}

impl PeriodicCoefficient {
    pub fn constant(mean: f64, period: f64) -> Self {
        Self {
            mean,
            sin_amp: 0.0,
            sin_phase: 0.0,
            period,
        }
    }

    pub fn sinusoid(mean: f64, sin_amp: f64, period: f64) -> Self {
        Self {
            mean,
            sin_amp,
            sin_phase: 0.0,
            period,
        }
    }

    fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn value(&self, t: f64) -> f64 {
        self.mean + self.sin_amp * (self.omega() * t + self.sin_phase).sin()
    }

    pub fn max(&self) -> f64 {
        self.mean + self.sin_amp.abs()
    }

    pub fn min(&self) -> f64 {
        self.mean - self.sin_amp.abs()
    }

    pub fn is_constant(&self) -> bool {
        self.sin_amp == 0.0
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.sin_amp == 0.0
    }

    /// `∫_a^b value`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let w = self.omega();
        let osc = if self.sin_amp == 0.0 {
            0.0
        } else {
            -self.sin_amp / w * ((w * b + self.sin_phase).cos() - (w * a + self.sin_phase).cos())
        };
        self.mean * (b - a) + osc
    }
}

/// Daughter-size density `κ` on `[0, 1]` with `∫ z κ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FragmentationDistribution {
    /// `κ ≡ 2`.
    UniformBinary,
    /// `κ(z) = κ_floor + c_b z(1 − z)` with `c_b` fixed by `η₁ = 1`.
    FloorPlusBump { kappa_floor: f64 },
}

impl FragmentationDistribution {
    pub fn validate(&self) -> Result<()> {
        if let FragmentationDistribution::FloorPlusBump { kappa_floor } = *self {
            if !(kappa_floor > 0.0 && kappa_floor <= 2.0) {
                return Err(invalid(
                    "kappa.kappa_floor",
                    format!("must lie in (0, 2] so that c_b ≥ 0, got {kappa_floor}"),
                ));
            }
        }
        Ok(())
    }

    /// Bump coefficient solving `κ_floor/2 + c_b/12 = 1`.
    pub fn bump_coefficient(&self) -> f64 {
        match *self {
            FragmentationDistribution::UniformBinary => 0.0,
            FragmentationDistribution::FloorPlusBump { kappa_floor } => {
                12.0 * (1.0 - 0.5 * kappa_floor)
            }
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            FragmentationDistribution::UniformBinary => 2.0,
            FragmentationDistribution::FloorPlusBump { kappa_floor } => {
                kappa_floor + self.bump_coefficient() * z * (1.0 - z)
            }
        }
    }

    /// `κ̲ = min κ`.
    pub fn floor(&self) -> f64 {
        match *self {
            FragmentationDistribution::UniformBinary => 2.0,
            FragmentationDistribution::FloorPlusBump { kappa_floor } => kappa_floor,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }
}

/// `η_k = ∫₀¹ z^k κ(z) dz`, exact for the polynomial catalog.
pub fn kappa_moment(kappa: &FragmentationDistribution, k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(invalid("k", format!("moment order must be ≥ 0, got {k}")));
    }
    Ok(match *kappa {
        FragmentationDistribution::UniformBinary => 2.0 / (k + 1.0),
        FragmentationDistribution::FloorPlusBump { kappa_floor } => {
            let cb = kappa.bump_coefficient();
            kappa_floor / (k + 1.0) + cb * (1.0 / (k + 2.0) - 1.0 / (k + 3.0))
        }
    })
}

/// Coefficient bundle of the growth-fragmentation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFParams {
    pub g0: PeriodicCoefficient,
    pub g1: PeriodicCoefficient,
    pub b0: PeriodicCoefficient,
    pub b1: PeriodicCoefficient,
    pub kappa: FragmentationDistribution,
    #[serde(default = "default_alpha")]
    pub alpha_weight: f64,
    #[serde(default = "default_floor")]
    pub c_floor: f64,
    #[serde(default = "default_mz")]
    pub mz: usize,
}

fn default_alpha() -> f64 {
    2.0
}
fn default_floor() -> f64 {
    0.1
}
fn default_mz() -> usize {
    64
}

impl GFParams {
    /// Affine-rate coefficients with constant or sinusoidal entries and defaults elsewhere.
    pub fn new(
        g0: PeriodicCoefficient,
        g1: PeriodicCoefficient,
        b0: PeriodicCoefficient,
        b1: PeriodicCoefficient,
        kappa: FragmentationDistribution,
    ) -> Self {
        Self {
            g0,
            g1,
            b0,
            b1,
            kappa,
            alpha_weight: default_alpha(),
            c_floor: default_floor(),
            mz: default_mz(),
        }
    }

    pub fn period(&self) -> f64 {
        self.g0.period
    }

    /// Every violated constraint for these parameters on `grid`.
    pub fn violations(&self, grid: &SpaceGrid) -> Vec<Error> {
        let mut out = Vec::new();
        let per = self.g0.period;
        for (name, c) in [
            ("g0", self.g0),
            ("g1", self.g1),
            ("b0", self.b0),
            ("b1", self.b1),
        ] {
            if !(c.period > 0.0) {
                out.push(invalid(&format!("{name}.period"), "must be > 0"));
            } else if (c.period - per).abs() > 1e-12 * per {
                out.push(invalid(
                    &format!("{name}.period"),
                    format!("all coefficients must share period {per}, got {}", c.period),
                ));
            }
            if !(c.mean.is_finite() && c.sin_amp.is_finite() && c.sin_phase.is_finite()) {
                out.push(invalid(name, "non-finite coefficient"));
            }
        }
        if !(self.c_floor > 0.0) {
            out.push(invalid(
                "c_floor",
                format!("must be > 0, got {}", self.c_floor),
            ));
        }
        if self.g0.min() < self.c_floor {
            out.push(invalid(
                "g0 positivity floor",
                format!(
                    "mean − |sin_amp| = {} is below c_floor = {}",
                    self.g0.min(),
                    self.c_floor
                ),
            ));
        }
        if self.b1.min() < self.c_floor {
            out.push(invalid(
                "b1 positivity floor",
                format!(
                    "mean − |sin_amp| = {} is below c_floor = {}",
                    self.b1.min(),
                    self.c_floor
                ),
            ));
        }
        if self.b0.min() < 0.0 {
            out.push(invalid("b0", "fragmentation rate offset must stay ≥ 0"));
        }
        if self.g0.min() + self.g1.min().min(0.0) * grid.x_max() <= 0.0 {
            out.push(invalid(
                "g1",
                "growth rate g0 + g1 x must stay > 0 on the grid",
            ));
        }
        if !(self.alpha_weight > 1.0) {
            out.push(invalid(
                "alpha_weight",
                format!("must be > 1, got {}", self.alpha_weight),
            ));
        }
        if self.mz < 2 {
            out.push(invalid("mz", "at least 2 quadrature nodes"));
        }
        if grid.x_min() != 0.0 {
            out.push(Error::InvalidGrid(format!(
                "growth-fragmentation grid must start at 0, got {}",
                grid.x_min()
            )));
        }
        if let Err(e) = self.kappa.validate() {
            out.push(e);
        }
        out
    }
}

/// Growth-fragmentation model on `[0, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GFModel {
    pub params: GFParams,
    pub grid: SpaceGrid,
    eta0: f64,
    /// `Σ_m w_m κ(z_m) f(z_m x_i)` as interpolation weights per row.
    frag_rows: Vec<Vec<(usize, f64)>>,
    /// `V(x_max + Δx) / V(x_max)` for the boundary closure.
    boundary_ratio: f64,
}

impl GFModel {
    pub fn new(params: GFParams, grid: SpaceGrid) -> Result<Self> {
        if let Some(e) = params.violations(&grid).into_iter().next() {
            return Err(e);
        }
        let mz = params.mz;
        let h = 1.0 / (mz - 1) as f64;
        let frag_rows = (0..grid.n_nodes())
            .map(|i| {
                let x = grid.node(i);
                let mut row = Vec::with_capacity(2 * mz);
                for m in 0..mz {
                    let z = m as f64 * h;
                    let w = if m == 0 || m == mz - 1 { 0.5 * h } else { h };
                    let c = w * params.kappa.value(z);
                    let (j, theta) = grid.locate(z * x);
                    row.push((j, c * (1.0 - theta)));
                    if theta > 0.0 {
                        row.push((j + 1, c * theta));
                    }
                }
                row
            })
            .collect();
        let v = |x: f64| 1.0 + x.powf(params.alpha_weight);
        let xm = grid.x_max();
        let boundary_ratio = v(xm + grid.dx()) / v(xm);
        let eta0 = kappa_moment(&params.kappa, 0.0)?;
        Ok(Self {
            params,
            grid,
            eta0,
            frag_rows,
            boundary_ratio,
        })
    }

    pub fn period(&self) -> f64 {
        self.params.period()
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn growth(&self, t: f64, x: f64) -> f64 {
        self.params.g0.value(t) + self.params.g1.value(t) * x
    }

    pub fn fragmentation_rate(&self, t: f64, x: f64) -> f64 {
        self.params.b0.value(t) + self.params.b1.value(t) * x
    }

    /// `V(x) = 1 + x^α` on the grid.
    pub fn weight(&self) -> DiscreteFunction {
        let a = self.params.alpha_weight;
        DiscreteFunction::from_fn(self.grid, |x| 1.0 + x.powf(a))
    }

    /// Same model with all coefficients frozen to constants.
    pub fn with_params(&self, params: GFParams) -> Result<Self> {
        Self::new(params, self.grid)
    }
}

impl DualGenerator for GFModel {
    fn grid(&self) -> SpaceGrid {
        self.grid
    }

    fn generator(&self, t: f64) -> SparseOperator {
        let n = self.grid.n_nodes();
        let inv_dx = 1.0 / self.grid.dx();
        let (g0, g1) = (self.params.g0.value(t), self.params.g1.value(t));
        let (b0, b1) = (self.params.b0.value(t), self.params.b1.value(t));
        let rows = (0..n)
            .map(|i| {
                let x = self.grid.node(i);
                let g = g0 + g1 * x;
                let beta = b0 + b1 * x;
                let mut r: Vec<(usize, f64)> = self.frag_rows[i]
                    .iter()
                    .map(|&(j, w)| (j, beta * w))
                    .collect();
                r.push((i, -beta));
                if i + 1 < n {
                    r.push((i, -g * inv_dx));
                    r.push((i + 1, g * inv_dx));
                } else {
                    r.push((i, g * inv_dx * (self.boundary_ratio - 1.0)));
                }
                r
            })
            .collect();
        SparseOperator::from_rows(rows)
    }

    fn cfl_bound(&self) -> f64 {
        let p = &self.params;
        let xm = self.grid.x_max();
        let g_sup = p.g0.max() + p.g1.max().max(0.0) * xm;
        let b_sup = p.b0.max() + p.b1.max().max(0.0) * xm;
        1.0 / (g_sup / self.grid.dx() + b_sup)
    }

    fn period(&self) -> Option<f64> {
        let p = &self.params;
        if p.g0.is_constant() && p.g1.is_constant() && p.b0.is_constant() && p.b1.is_constant() {
            None
        } else {
            Some(p.period())
        }
    }
}

pub fn generator_apply_gf(
    model: &GFModel,
    f: &DiscreteFunction,
    t: f64,
) -> Result<DiscreteFunction> {
    model.grid.check_same(&f.grid)?;
    let v = model
        .generator(t)
        .apply(f.values.as_slice().expect("contiguous"));
    DiscreteFunction::new(model.grid, Array1::from(v))
}

pub fn step_dual_gf(
    model: &GFModel,
    f: &DiscreteFunction,
    t: f64,
    dt: f64,
    method: Method,
) -> Result<DiscreteFunction> {
    step_dual(model, f, t, dt, method)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Forward characteristic `X_{s,t}(x)` of `Ẋ = g₀ + g₁X`.
pub fn characteristic_flow(model: &GFModel, s: f64, t: f64, x: f64) -> f64 {
    flow_of(&model.params.g0, &model.params.g1, s, t, x)
}

pub(crate) fn flow_of(
    g0: &PeriodicCoefficient,
    g1: &PeriodicCoefficient,
    s: f64,
    t: f64,
    x: f64,
) -> f64 {
    let carry = x * g1.integral(s, t).exp();
    let source = if g1.is_zero() {
        g0.integral(s, t)
    } else if g0.is_constant() && g1.is_constant() {
        let k = g1.mean;
        g0.mean * ((k * (t - s)).exp() - 1.0) / k
    } else {
        adaptive_simpson(
            &|tau| g0.value(tau) * g1.integral(tau, t).exp(),
            s,
            t,
            1e-13,
        )
    };
    carry + source
}

/// `A(t)` of the affine ansatz `φ_t(x) = m_{−t} + n_{−t} x`.
pub fn floquet_matrix(model: &GFModel, t: f64) -> Matrix2<f64> {
    let p = &model.params;
    let e = model.eta0 - 1.0;
    Matrix2::new(
        p.b0.value(-t) * e,
        p.g0.value(-t),
        p.b1.value(-t) * e,
        p.g1.value(-t),
    )
}

fn rk4_step(a: &dyn Fn(f64) -> Matrix2<f64>, t: f64, h: f64, y: &Matrix2<f64>) -> Matrix2<f64> {
    let k1 = a(t) * y;
    let k2 = a(t + 0.5 * h) * (y + k1 * (0.5 * h));
    let k3 = a(t + 0.5 * h) * (y + k2 * (0.5 * h));
    let k4 = a(t + h) * (y + k3 * h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// RK4 fundamental solution `Ξ_t` of `Ẏ = A(t) Y`, `Y(0) = I`, on `[0, T]`.
#[derive(Clone)]
pub struct Monodromy {
    pub period: f64,
    pub n_steps: usize,
    nodes: Vec<Matrix2<f64>>,
    a: std::sync::Arc<dyn Fn(f64) -> Matrix2<f64> + Send + Sync>,
}

impl std::fmt::Debug for Monodromy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Monodromy")
            .field("period", &self.period)
            .field("n_steps", &self.n_steps)
            .field("xi_t", &self.xi_period())
            .finish()
    }
}

impl Monodromy {
    pub fn integrate(
        a: impl Fn(f64) -> Matrix2<f64> + Send + Sync + 'static,
        period: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if n_steps < 4 {
            return Err(invalid("n_steps", "at least 4 RK4 steps"));
        }
        let h = period / n_steps as f64;
        let mut nodes = Vec::with_capacity(n_steps + 1);
        let mut y = Matrix2::identity();
        nodes.push(y);
        for k in 0..n_steps {
            y = rk4_step(&a, k as f64 * h, h, &y);
            nodes.push(y);
        }
        Ok(Self {
            period,
            n_steps,
            nodes,
            a: std::sync::Arc::new(a),
        })
    }

    pub fn xi_period(&self) -> Matrix2<f64> {
        self.nodes[self.n_steps]
    }

    /// `Ξ_t` for `t ∈ [0, T]`, one extra RK4 substep from the node below.
    pub fn at(&self, t: f64) -> Matrix2<f64> {
        let h = self.period / self.n_steps as f64;
        let t = t.clamp(0.0, self.period);
        let k = ((t / h).floor() as usize).min(self.n_steps);
        let rest = t - k as f64 * h;
        if rest <= 0.0 {
            return self.nodes[k];
        }
        rk4_step(&*self.a, k as f64 * h, rest, &self.nodes[k])
    }
}

pub fn monodromy(model: &GFModel, n_steps: usize) -> Result<Monodromy> {
    let m = model.clone();
    Monodromy::integrate(move |t| floquet_matrix(&m, t), model.period(), n_steps)
}

/// Perron eigenvalue `Λ` and eigenvector `(u₀, v₀)`, `u₀ + v₀ = 1`, of a
/// positive 2×2 matrix.
pub fn perron_2x2(m: &Matrix2<f64>) -> Result<(f64, f64, f64)> {
    if m.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Positivity(format!(
            "monodromy must be entrywise positive, got {m}"
        )));
    }
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc < 0.0 {
        return Err(Error::Positivity("complex dominant root".into()));
    }
    let sq = disc.sqrt();
    let lam = 0.5 * (a + d + sq);
    // (b, Λ − a) with Λ − a = (d − a + sq)/2 written without cancellation.
    let second = if d - a >= 0.0 {
        0.5 * (d - a + sq)
    } else {
        2.0 * b * c / (a - d + sq)
    };
    let (u, v) = (b, second);
    let sum = u + v;
    Ok((lam, u / sum, v / sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerronFloquet {
    pub big_lambda: f64,
    pub lambda_f: f64,
    pub u0: f64,
    pub v0: f64,
}

/// Affine Floquet family from the monodromy route.
#[derive(Debug, Clone)]
pub struct AffineFloquet {
    pub mono: Monodromy,
    pub perron: PerronFloquet,
}

impl AffineFloquet {
    pub fn new(model: &GFModel, n_steps: usize) -> Result<Self> {
        let mono = monodromy(model, n_steps)?;
        let (big_lambda, u0, v0) = perron_2x2(&mono.xi_period())?;
        let perron = PerronFloquet {
            big_lambda,
            lambda_f: big_lambda.ln() / model.period(),
            u0,
            v0,
        };
        Ok(Self { mono, perron })
    }

    /// `(u_t, v_t) = e^{−λ_F t} Ξ_t (u₀, v₀)`, extended periodically.
    pub fn uv(&self, t: f64) -> (f64, f64) {
        let per = self.mono.period;
        let tr = t.rem_euclid(per);
        let w = self.mono.at(tr) * Vector2::new(self.perron.u0, self.perron.v0);
        let d = (-self.perron.lambda_f * tr).exp();
        (d * w[0], d * w[1])
    }

    /// `h_s(x) = u_{−s} + v_{−s} x`.
    pub fn h(&self, s: f64, x: f64) -> f64 {
        let (u, v) = self.uv(-s);
        u + v * x
    }
}

pub fn perron_floquet(model: &GFModel, n_steps: usize) -> Result<PerronFloquet> {
    Ok(AffineFloquet::new(model, n_steps)?.perron)
}

pub fn floquet_h(model: &GFModel, s: f64, x: f64, n_steps: usize) -> Result<f64> {
    Ok(AffineFloquet::new(model, n_steps)?.h(s, x))
}

/// Doeblin minorization `M_{s,t} f ≥ c_st ⟨ν, f⟩` on `[0, R]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeblinCertificate {
    pub c_st: f64,
    pub nu_support: (f64, f64),
    pub a1: f64,
    pub a2: f64,
    pub b_sup: f64,
    /// `ratio − 1`.
    pub margin: f64,
    /// `min P_ij / (c_st ⟨ν, e_j⟩)` over `j` with `⟨ν, e_j⟩ > 0`.
    pub ratio: f64,
    pub pass: bool,
}

/// Candidate constants `(c_st, a1, a2, B, ν interval)` without verification.
#[allow(clippy::type_complexity)]
pub fn doeblin_constants(
    model: &GFModel,
    s: f64,
    t: f64,
    r: f64,
) -> Result<(f64, f64, f64, f64, (f64, f64))> {
    if !(t > s) {
        return Err(Error::TimeOrder { s, t });
    }
    if !(r > 0.0) {
        return Err(invalid("R", "small-set radius must be > 0"));
    }
    let ns = 9;
    let mut a1 = f64::INFINITY;
    let mut a2: f64 = 0.0;
    for it in 0..ns {
        // Sub-intervals [τ, t] with τ in the first half of [s, t].
        let tau = s + 0.5 * (t - s) * it as f64 / (ns - 1) as f64;
        for ix in 0..ns {
            let x = r * ix as f64 / (ns - 1) as f64;
            let ratio = characteristic_flow(model, tau, t, x) / characteristic_flow(model, s, t, x);
            a1 = a1.min(ratio);
            a2 = a2.max(ratio);
        }
    }
    let b_sup = (0..=64)
        .map(|k| {
            let tp = s + (t - s) * k as f64 / 64.0;
            model.params.b0.value(tp).max(0.0)
                + model.params.b1.value(tp).max(0.0) * characteristic_flow(model, s, tp, r)
        })
        .fold(0.0, f64::max);
    let kappa_floor = model.params.kappa.floor();
    let c_st = (t - s) / (a2 * characteristic_flow(model, s, t, r))
        * ((s - t) * b_sup).exp()
        * kappa_floor
        * model.params.c_floor;
    let x0 = characteristic_flow(model, s, t, 0.0);
    Ok((c_st, a1, a2, b_sup, (a1 * x0, x0)))
}

pub fn doeblin_certificate_gf(
    model: &GFModel,
    s: f64,
    t: f64,
    r: f64,
    scheme: &StepScheme,
) -> Result<DoeblinCertificate> {
    let (c_st, a1, a2, b_sup, (lo, hi)) = doeblin_constants(model, s, t, r)?;
    let p = assemble(model, s, t, scheme)?;
    let nu = interval_weights(&model.grid, lo, hi);
    let mut nu_mass = vec![0.0; model.grid.n_nodes()];
    for (j, w) in nu {
        nu_mass[j] += w;
    }
    let rows = model.grid.indices_in(0.0, r);
    let mut ratio = f64::INFINITY;
    for i in rows {
        for (j, &m) in nu_mass.iter().enumerate() {
            let rhs = c_st * m;
            if rhs > 0.0 {
                ratio = ratio.min(p.matrix[[i, j]] / rhs);
            }
        }
    }
    let margin = ratio - 1.0;
    Ok(DoeblinCertificate {
        c_st,
        nu_support: (lo, hi),
        a1,
        a2,
        b_sup,
        margin,
        ratio,
        pass: margin >= 0.0,
    })
}

/// Comparison `λ̄(g₀) ≤ λ_F ≤ λ(ḡ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GabrielBounds {
    pub lam_bar_g0: f64,
    pub lam_g0_bar: f64,
    pub lambda_f: f64,
    /// `|λ(ḡ₀)| measured two ways`: propagator route vs monodromy route.
    pub allowance: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
    pub holds: bool,
}

/// Growth rate of the autonomous model with `g₀ ≡ c` from the assembled
/// propagator over `T_ref = 10 / λ-scale`.
pub fn constant_growth_rate(model: &GFModel, c: f64, scheme: &StepScheme) -> Result<f64> {
    let p = &model.params;
    let per = p.period();
    let frozen = GFParams {
        g0: PeriodicCoefficient::constant(c, per),
        ..p.clone()
    };
    let m = model.with_params(frozen)?;
    let scale = (c * p.b1.mean * (m.eta0 - 1.0)).abs().sqrt().max(1e-3);
    let t_ref = 10.0 / scale;
    // Autonomous: M_{0,T_ref} = (M_{0,T_ref/8})^8 with identical steps.
    let piece = t_ref / 8.0;
    let n = scheme.steps_for(&m, piece);
    let base = assemble_steps(&m, 0.0, piece, n, scheme.method)?;
    let mut mat: Array2<f64> = base.matrix.clone();
    for _ in 0..3 {
        mat = mat.dot(&mat);
    }
    let prop = Propagator::from_matrix(m.grid, 0.0, t_ref, mat)?;
    let eig = power_iterate(&prop, &m.weight(), 1e-10, 100_000)?;
    Ok(eig.big_lambda.ln() / t_ref)
}

pub fn gabriel_bounds(
    model: &GFModel,
    scheme: &StepScheme,
    n_samples: usize,
    mono_steps: usize,
) -> Result<GabrielBounds> {
    let p = &model.params;
    if !p.g1.is_zero() || !p.b0.is_zero() || !p.b1.is_constant() || !p.kappa.is_symmetric() {
        return Err(Error::ModelShape(
            "comparison needs g1 ≡ 0, b0 ≡ 0, constant b1 and symmetric kappa".into(),
        ));
    }
    let per = p.period();
    let ns = n_samples.max(2);
    let mut cache: Vec<(u64, f64)> = Vec::new();
    let mut lam_of = |c: f64| -> Result<f64> {
        if let Some(&(_, v)) = cache.iter().find(|(k, _)| *k == c.to_bits()) {
            return Ok(v);
        }
        let v = constant_growth_rate(model, c, scheme)?;
        cache.push((c.to_bits(), v));
        Ok(v)
    };
    // Periodic trapezoid: equal weights on equally spaced samples.
    let mut acc = 0.0;
    for k in 0..ns {
        acc += lam_of(p.g0.value(per * k as f64 / ns as f64))?;
    }
    let lam_bar_g0 = acc / ns as f64;
    let g0_bar = p.g0.integral(0.0, per) / per;
    let lam_g0_bar = lam_of(g0_bar)?;

    let lambda_f = perron_floquet(model, mono_steps)?.lambda_f;
    let frozen = GFParams {
        g0: PeriodicCoefficient::constant(g0_bar, per),
        ..p.clone()
    };
    let mono_bar = perron_floquet(&model.with_params(frozen)?, mono_steps)?.lambda_f;
    let allowance = (lam_g0_bar - mono_bar).abs();
    let tol = 1e-6 + allowance;
    let lower_margin = lambda_f + tol - lam_bar_g0;
    let upper_margin = lam_g0_bar + tol - lambda_f;
    Ok(GabrielBounds {
        lam_bar_g0,
        lam_g0_bar,
        lambda_f,
        allowance,
        lower_margin,
        upper_margin,
        holds: lower_margin >= 0.0 && upper_margin >= 0.0,
    })
}
