//! Drifted selection-mutation model
//! `∂_t u + ∂_x u = ∫ u(y) Q(y, dx) + a(t, x) u` and its dual generator
//! `𝓛_t f = f' + a(t, ·) f + ∫ f(y) Q(·, dy)`.

use std::f64::consts::PI;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure_space::{DiscreteFunction, SpaceGrid, WeightPair};
use crate::propagator::{
    evolve_dual, step_dual, DualGenerator, Method, SparseOperator, StepScheme,
};

/// Periodic fitness `a(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitnessField {
    /// `a = −sqrt(|x + sin t|)`, period `2π`.
    SqrtShift,
    /// `a = A0 − A1 |x − φ sin(2πt/T)|^p`.
    PowerConfine {
        a0: f64,
        a1: f64,
        p: f64,
        phi: f64,
        period: f64,
    },
    /// Constant fitness. Not confining; useful for degenerate checks.
    Constant { value: f64, period: f64 },
}

impl FitnessField {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FitnessField::SqrtShift => Ok(()),
            FitnessField::PowerConfine {
                a0,
                a1,
                p,
                phi,
                period,
            } => {
                if !(a1 > 0.0) {
                    return Err(invalid("fitness.a1", format!("must be > 0, got {a1}")));
                }
                if !(p >= 1.0) {
                    return Err(invalid("fitness.p", format!("must be ≥ 1, got {p}")));
                }
                if !(period > 0.0) {
                    return Err(invalid("fitness.period", "must be > 0"));
                }
                if !(a0.is_finite() && phi.is_finite()) {
                    return Err(invalid("fitness", "a0 and phi must be finite"));
                }
                Ok(())
            }
            FitnessField::Constant { value, period } => {
                if !value.is_finite() || !(period > 0.0) {
                    return Err(invalid("fitness", "constant value finite, period > 0"));
                }
                Ok(())
            }
        }
    }

    pub fn period(&self) -> f64 {
        match *self {
            FitnessField::SqrtShift => 2.0 * PI,
            FitnessField::PowerConfine { period, .. } => period,
            FitnessField::Constant { period, .. } => period,
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        match *self {
            FitnessField::SqrtShift => -(x + t.sin()).abs().sqrt(),
            FitnessField::PowerConfine {
                a0,
                a1,
                p,
                phi,
                period,
            } => a0 - a1 * (x - phi * (2.0 * PI * t / period).sin()).abs().powf(p),
            FitnessField::Constant { value, .. } => value,
        }
    }

    /// Lower envelope `a̲(x) = inf_t a(t, x)`.
    pub fn lower(&self, x: f64) -> f64 {
        match *self {
            FitnessField::SqrtShift => -(x.abs() + 1.0).sqrt(),
            FitnessField::PowerConfine { a0, a1, p, phi, .. } => {
                a0 - a1 * (x.abs() + phi.abs()).powf(p)
            }
            FitnessField::Constant { value, .. } => value,
        }
    }

    /// Upper envelope `ā(x) = sup_t a(t, x)`.
    pub fn upper(&self, x: f64) -> f64 {
        match *self {
            FitnessField::SqrtShift => -(x.abs() - 1.0).max(0.0).sqrt(),
            FitnessField::PowerConfine { a0, a1, p, phi, .. } => {
                a0 - a1 * (x.abs() - phi.abs()).max(0.0).powf(p)
            }
            FitnessField::Constant { value, .. } => value,
        }
    }

    /// `A = sup_x ā(x)`.
    pub fn sup_upper(&self) -> f64 {
        match *self {
            FitnessField::SqrtShift => 0.0,
            FitnessField::PowerConfine { a0, .. } => a0,
            FitnessField::Constant { value, .. } => value,
        }
    }

    /// `inf_{(−x0, x0)} a̲`; both envelopes are even and monotone in `|x|`.
    pub fn inf_lower_on(&self, x0: f64) -> f64 {
        self.lower(x0)
    }

    /// Smallest `r ≥ 0` with `ā(x) ≤ level` whenever `|x| ≥ r`.
    pub fn confinement_radius(&self, level: f64) -> f64 {
        match *self {
            FitnessField::SqrtShift => {
                if level >= 0.0 {
                    0.0
                } else {
                    1.0 + level * level
                }
            }
            FitnessField::PowerConfine { a0, a1, p, phi, .. } => {
                if level >= a0 {
                    0.0
                } else {
                    phi.abs() + ((a0 - level) / a1).powf(1.0 / p)
                }
            }
            FitnessField::Constant { value, .. } => {
                if level >= value {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Mutation kernel with window support `|y − x| ≤ ε_Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutationKernel {
    /// `Q(x, dy) = q 𝟙_{|y−x| ≤ ε} dy`.
    UniformWindow { q: f64, eps: f64 },
    /// `Q(x, dy) = (κ_lo + κ_hi e^{−|x|}) 𝟙_{|y−x| ≤ ε} dy`.
    DecayingUniform { k_lo: f64, k_hi: f64, eps: f64 },
}

impl MutationKernel {
    /// `q = 0` is accepted as the degenerate zero kernel.
    pub fn validate(&self) -> Result<()> {
        match *self {
            MutationKernel::UniformWindow { q, eps } => {
                if !(q >= 0.0 && q.is_finite()) {
                    return Err(invalid("kernel.q", format!("must be ≥ 0, got {q}")));
                }
                if !(eps > 0.0) {
                    return Err(invalid("kernel.eps", format!("must be > 0, got {eps}")));
                }
            }
            MutationKernel::DecayingUniform { k_lo, k_hi, eps } => {
                if !(k_lo > 0.0) {
                    return Err(invalid("kernel.k_lo", format!("must be > 0, got {k_lo}")));
                }
                if !(k_hi >= 0.0) {
                    return Err(invalid("kernel.k_hi", format!("must be ≥ 0, got {k_hi}")));
                }
                if !(eps > 0.0) {
                    return Err(invalid("kernel.eps", format!("must be > 0, got {eps}")));
                }
            }
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        match *self {
            MutationKernel::UniformWindow { eps, .. } => eps,
            MutationKernel::DecayingUniform { eps, .. } => eps,
        }
    }

    /// Density level of `Q(x, ·)` on its window.
    pub fn amplitude(&self, x: f64) -> f64 {
        match *self {
            MutationKernel::UniformWindow { q, .. } => q,
            MutationKernel::DecayingUniform { k_lo, k_hi, .. } => k_lo + k_hi * (-x.abs()).exp(),
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        if (y - x).abs() <= self.eps() {
            self.amplitude(x)
        } else {
            0.0
        }
    }

    /// Minorization level `κ₀`.
    pub fn kappa0(&self) -> f64 {
        match *self {
            MutationKernel::UniformWindow { q, .. } => q,
            MutationKernel::DecayingUniform { k_lo, .. } => k_lo,
        }
    }

    /// `Q̂ = sup_x Q(x, ℝ)`.
    pub fn q_hat(&self) -> f64 {
        match *self {
            MutationKernel::UniformWindow { q, eps } => 2.0 * q * eps,
            MutationKernel::DecayingUniform { k_lo, k_hi, eps } => 2.0 * eps * (k_lo + k_hi),
        }
    }
}

/// Weights `w_j` with `∫_{lo}^{hi} f̃ = Σ w_j f_j`, where `f̃` is the
/// piecewise-linear interpolant extended by constants beyond the grid.
pub(crate) fn interval_weights(grid: &SpaceGrid, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let n = grid.n_nodes();
    let dx = grid.dx();
    let mut w = Vec::new();
    if hi <= lo {
        return w;
    }
    let (x0, xn) = (grid.x_min(), grid.x_max());
    if lo < x0 {
        w.push((0, x0.min(hi) - lo));
    }
    if hi > xn {
        w.push((n - 1, hi - xn.max(lo)));
    }
    let a = lo.max(x0);
    let b = hi.min(xn);
    if b > a {
        let j0 = (((a - x0) / dx).floor() as usize).min(n - 2);
        let j1 = (((b - x0) / dx).ceil() as usize).clamp(1, n - 1);
        for j in j0..j1 {
            let cl = grid.node(j).max(a);
            let cr = grid.node(j + 1).min(b);
            if cr <= cl {
                continue;
            }
            let xi = (0.5 * (cl + cr) - grid.node(j)) / dx;
            let len = cr - cl;
            w.push((j, len * (1.0 - xi)));
            w.push((j + 1, len * xi));
        }
    }
    w
}

/// Selection-mutation model on a symmetric truncated grid `[−L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SMModel {
    pub fitness: FitnessField,
    pub kernel: MutationKernel,
    pub grid: SpaceGrid,
    kernel_rows: Vec<Vec<(usize, f64)>>,
}

impl SMModel {
    pub fn new(fitness: FitnessField, kernel: MutationKernel, grid: SpaceGrid) -> Result<Self> {
        fitness.validate()?;
        kernel.validate()?;
        let l = grid.x_max();
        if (grid.x_min() + l).abs() > 1e-12 * l.abs().max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "selection-mutation grid must be symmetric, got [{}, {}]",
                grid.x_min(),
                l
            )));
        }
        let eps = kernel.eps();
        let kernel_rows = (0..grid.n_nodes())
            .map(|i| {
                let x = grid.node(i);
                let amp = kernel.amplitude(x);
                interval_weights(&grid, x - eps, x + eps)
                    .into_iter()
                    .map(|(j, w)| (j, amp * w))
                    .filter(|&(_, w)| w != 0.0)
                    .collect()
            })
            .collect();
        Ok(Self {
            fitness,
            kernel,
            grid,
            kernel_rows,
        })
    }

    pub fn period(&self) -> f64 {
        self.fitness.period()
    }

    pub fn half_width(&self) -> f64 {
        self.grid.x_max()
    }

    fn build_generator(&self, fit: impl Fn(f64) -> f64) -> SparseOperator {
        let n = self.grid.n_nodes();
        let inv_dx = 1.0 / self.grid.dx();
        let rows = (0..n)
            .map(|i| {
                let mut r = self.kernel_rows[i].clone();
                r.push((i, fit(self.grid.node(i))));
                if i + 1 < n {
                    r.push((i, -inv_dx));
                    r.push((i + 1, inv_dx));
                }
                r
            })
            .collect();
        SparseOperator::from_rows(rows)
    }

    fn reaction_floor(&self, lower: impl Fn(f64) -> f64) -> f64 {
        (0..self.grid.n_nodes())
            .map(|i| lower(self.grid.node(i)))
            .fold(f64::INFINITY, f64::min)
    }

    /// The autonomous comparison model with `a` replaced by `a̲`.
    pub fn lower_envelope(&self) -> LowerEnvelopeSM<'_> {
        LowerEnvelopeSM { model: self }
    }
}

impl DualGenerator for SMModel {
    fn grid(&self) -> SpaceGrid {
        self.grid
    }

    fn generator(&self, t: f64) -> SparseOperator {
        self.build_generator(|x| self.fitness.value(t, x))
    }

    fn cfl_bound(&self) -> f64 {
        let floor = self.reaction_floor(|x| self.fitness.lower(x));
        1.0 / (1.0 / self.grid.dx() + (-floor).max(0.0))
    }

    fn period(&self) -> Option<f64> {
        Some(self.fitness.period())
    }
}

/// Generator `𝓛̄ f = f' + a̲ f + ∫ f dQ`.
pub struct LowerEnvelopeSM<'a> {
    model: &'a SMModel,
}

impl DualGenerator for LowerEnvelopeSM<'_> {
    fn grid(&self) -> SpaceGrid {
        self.model.grid
    }

    fn generator(&self, _t: f64) -> SparseOperator {
        self.model.build_generator(|x| self.model.fitness.lower(x))
    }

    fn cfl_bound(&self) -> f64 {
        self.model.cfl_bound()
    }

    fn period(&self) -> Option<f64> {
        None
    }
}

/// `(𝓛_t f)_i` on the model grid.
pub fn generator_apply_sm(
    model: &SMModel,
    f: &DiscreteFunction,
    t: f64,
) -> Result<DiscreteFunction> {
    model.grid.check_same(&f.grid)?;
    let v = model
        .generator(t)
        .apply(f.values.as_slice().expect("contiguous"));
    DiscreteFunction::new(model.grid, Array1::from(v))
}

/// One explicit dual step from `t` to `t − dt`.
pub fn step_dual_sm(
    model: &SMModel,
    f: &DiscreteFunction,
    t: f64,
    dt: f64,
    method: Method,
) -> Result<DiscreteFunction> {
    step_dual(model, f, t, dt, method)
}

/// Largest strip length `ε` with `ε e^{ε max(A,0)} Q̂ ≤ 1/2`.
pub fn duhamel_strip_width(model: &SMModel) -> f64 {
    let q_hat = model.kernel.q_hat();
    if q_hat == 0.0 {
        return f64::INFINITY;
    }
    let a = model.fitness.sup_upper().max(0.0);
    let phi = |e: f64| e * (e * a).exp() * q_hat;
    let (mut lo, mut hi) = (0.0, 0.5 / q_hat);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) <= 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `M_{s,t} f` from the Duhamel fixed point, solved strip by strip from
/// `t` backwards on a space-time grid with time step at most `Δx`.
pub fn duhamel_iterate_sm(
    model: &SMModel,
    f: &DiscreteFunction,
    s: f64,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DiscreteFunction> {
    model.grid.check_same(&f.grid)?;
    if t < s {
        return Err(Error::TimeOrder { s, t });
    }
    if t == s {
        return Ok(f.clone());
    }
    let grid = model.grid;
    let n = grid.n_nodes();
    let len = t - s;
    let strip = duhamel_strip_width(model);
    let k_total = ((len / grid.dx()).ceil() as usize)
        .max(if strip.is_finite() {
            (len / strip).ceil() as usize
        } else {
            1
        })
        .max(1);
    let delta = len / k_total as f64;
    let block = if strip.is_finite() {
        ((strip / delta).floor() as usize).max(1)
    } else {
        k_total
    };
    let tau = |k: usize| s + k as f64 * delta;
    let nodes = grid.nodes();

    let mut g: Vec<f64> = f.values.to_vec();
    let mut end = k_total;
    while end > 0 {
        let start = end.saturating_sub(block);
        let m = end - start;
        // growth[k][m'] = exp(∫_{τ_k}^{τ_m} a along x_i + τ' − τ_k), m' = m − k.
        let mut growth: Vec<Vec<Vec<f64>>> = Vec::with_capacity(m);
        for k in start..end {
            let mut per_m = Vec::with_capacity(end - k + 1);
            let mut acc = vec![0.0; n];
            per_m.push(vec![1.0; n]);
            for mm in (k + 1)..=end {
                let (ta, tb) = (tau(mm - 1), tau(mm));
                for (i, a) in acc.iter_mut().enumerate() {
                    let x = nodes[i];
                    let fa = model.fitness.value(ta, x + ta - tau(k));
                    let fb = model.fitness.value(tb, x + tb - tau(k));
                    *a += 0.5 * delta * (fa + fb);
                }
                per_m.push(acc.iter().map(|v| v.exp()).collect());
            }
            growth.push(per_m);
        }
        let free: Vec<Vec<f64>> = (start..end)
            .map(|k| {
                let shift = tau(end) - tau(k);
                let gr = &growth[k - start][end - k];
                (0..n)
                    .map(|i| grid.interpolate(&g, nodes[i] + shift) * gr[i])
                    .collect()
            })
            .collect();

        // psi[k − start] for k in start..=end, the last slot is fixed to g.
        let mut psi: Vec<Vec<f64>> = vec![g.clone(); m + 1];
        let mut prev_change = f64::INFINITY;
        let mut converged = false;
        for it in 0..max_iter {
            let q_psi: Vec<Vec<f64>> = psi.iter().map(|p| apply_kernel(model, p)).collect();
            let mut change: f64 = 0.0;
            let mut new_psi = psi.clone();
            for k in start..end {
                let mut out = free[k - start].clone();
                for mm in k..=end {
                    let w = if mm == k || mm == end {
                        0.5 * delta
                    } else {
                        delta
                    };
                    let shift = tau(mm) - tau(k);
                    let gr = &growth[k - start][mm - k];
                    let qv = &q_psi[mm - start];
                    for i in 0..n {
                        out[i] += w * gr[i] * grid.interpolate(qv, nodes[i] + shift);
                    }
                }
                for (a, b) in out.iter().zip(&psi[k - start]) {
                    change = change.max((a - b).abs());
                }
                new_psi[k - start] = out;
            }
            psi = new_psi;
            if !change.is_finite() {
                return Err(Error::NonFinite {
                    context: "Duhamel iteration".into(),
                });
            }
            if change < tol {
                converged = true;
                break;
            }
            if it >= 2 && prev_change.is_finite() && change >= prev_change {
                return Err(Error::NonContraction {
                    ratio: change / prev_change,
                });
            }
            prev_change = change;
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                residual: prev_change,
            });
        }
        g = psi[0].clone();
        end = start;
    }
    DiscreteFunction::new(grid, Array1::from(g))
}

fn apply_kernel(model: &SMModel, f: &[f64]) -> Vec<f64> {
    model
        .kernel_rows
        .iter()
        .map(|row| row.iter().map(|&(j, w)| w * f[j]).sum())
        .collect()
}

/// `ψ₀(x) = (1 − (x/x₀)²)² 𝟙_{[−x₀, x₀]}`.
pub fn psi0_bump(grid: SpaceGrid, x0: f64) -> DiscreteFunction {
    DiscreteFunction::from_fn(grid, |x| {
        if x.abs() <= x0 {
            let r = x / x0;
            (1.0 - r * r).powi(2)
        } else {
            0.0
        }
    })
}

/// `(V, ψ)` with `V ≡ 1` and `ψ = M̄_T ψ₀` rescaled to `max ψ = 1`.
pub fn lyapunov_pair_sm(model: &SMModel, x0: f64, scheme: &StepScheme) -> Result<WeightPair> {
    let l = model.half_width();
    if !(x0 > 0.0 && x0 < l) {
        return Err(invalid("x0", format!("must lie in (0, {l}), got {x0}")));
    }
    let psi0 = psi0_bump(model.grid, x0);
    let lower = model.lower_envelope();
    let psi = evolve_dual(&lower, &psi0, 0.0, model.period(), scheme)?;
    WeightPair::normalized(DiscreteFunction::constant(model.grid, 1.0), psi)
}

/// Candidate drift constants and their grid verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    pub beta_drift: f64,
    pub alpha0: f64,
    pub theta0: f64,
    pub r0: f64,
    /// `min_i (𝓛̄ψ₀)_i − beta_drift ψ₀_i` over interior nodes.
    pub psi0_margin: f64,
    /// `min (alpha0 V + theta0 ψ₀ − 𝓛_s V)` over nodes and sampled `s`.
    pub v_margin: f64,
    pub holds: bool,
}

pub fn drift_constants_sm(model: &SMModel, pair: &WeightPair, x0: f64) -> Result<DriftConstants> {
    model.grid.check_same(&pair.v.grid)?;
    let kappa0 = model.kernel.kappa0();
    let eps = model.kernel.eps();
    let q_hat = model.kernel.q_hat();
    let beta_drift = -30.0 / (kappa0 * eps.powi(3)) + model.fitness.inf_lower_on(x0);
    let alpha0 = beta_drift - 1.0;
    let theta0 = 4.0 * (model.fitness.sup_upper() + q_hat);
    let r0 = model.fitness.confinement_radius(-q_hat + alpha0);

    let n = model.grid.n_nodes();
    let psi0 = psi0_bump(model.grid, x0);
    let lpsi = model
        .lower_envelope()
        .generator(0.0)
        .apply(psi0.values.as_slice().expect("contiguous"));
    let psi0_margin = (1..n - 1)
        .map(|i| lpsi[i] - beta_drift * psi0.values[i])
        .fold(f64::INFINITY, f64::min);

    let per = model.period();
    let v = pair.v.values.as_slice().expect("contiguous");
    let mut v_margin = f64::INFINITY;
    for s in [0.0, 0.25 * per, 0.5 * per, 0.75 * per] {
        let lv = model.generator(s).apply(v);
        for i in 0..n {
            v_margin = v_margin.min(alpha0 * v[i] + theta0 * psi0.values[i] - lv[i]);
        }
    }
    Ok(DriftConstants {
        beta_drift,
        alpha0,
        theta0,
        r0,
        psi0_margin,
        v_margin,
        holds: psi0_margin >= 0.0 && v_margin >= 0.0,
    })
}

/// `η* = min_{[y1,y2]} M_{s,t} 𝟙_{[x1,x2]}`.
#[allow(clippy::too_many_arguments)]
pub fn minorization_window_sm(
    model: &SMModel,
    s: f64,
    t: f64,
    x: (f64, f64),
    y: (f64, f64),
    scheme: &StepScheme,
) -> Result<f64> {
    if !(t > s) {
        return Err(Error::TimeOrder { s, t });
    }
    let (x1, x2) = x;
    let (y1, y2) = y;
    let ys = model.grid.indices_in(y1, y2);
    if !(x1 < x2) || model.grid.indices_in(x1, x2).is_empty() || ys.is_empty() {
        return Err(invalid("window", "empty interval"));
    }
    let ind = DiscreteFunction::from_fn(model.grid, |z| {
        if z >= x1 - 1e-12 && z <= x2 + 1e-12 {
            1.0
        } else {
            0.0
        }
    });
    let out = evolve_dual(model, &ind, s, t, scheme)?;
    Ok(ys.map(|i| out.values[i]).fold(f64::INFINITY, f64::min))
}

/// Smallest grid-valid `C₁` with `Q(x+α, y) ≤ C₁ Q(x, y)` for sampled
/// `α ∈ [0, T]`; `None` when some pair has `Q(x, y) = 0 < Q(x+α, y)`.
pub fn shift_domination_constant(model: &SMModel, n_alpha: usize) -> Option<f64> {
    let per = model.period();
    let nodes = model.grid.nodes();
    let mut c1: f64 = 1.0;
    for k in 0..=n_alpha.max(1) {
        let alpha = per * k as f64 / n_alpha.max(1) as f64;
        for &x in nodes.iter() {
            for &y in nodes.iter() {
                let shifted = model.kernel.density(x + alpha, y);
                let base = model.kernel.density(x, y);
                if shifted > 0.0 {
                    if base == 0.0 {
                        return None;
                    }
                    c1 = c1.max(shifted / base);
                }
            }
        }
    }
    Some(c1)
}

/// Sampled estimate of `C_R` in
/// `∫₀ᵗ a(τ+α, x+τ) dτ ≤ C_R + ∫₀ᵗ a(τ, x+τ) dτ` over
/// `t, α ∈ [0, T]`, `x ∈ [−R, R]`.
pub fn drift_shift_constant(model: &SMModel, r: f64, n_samples: usize) -> f64 {
    let per = model.period();
    let m = n_samples.max(2);
    let quad = |alpha: f64, x: f64, t: f64| {
        let k = 64;
        let h = t / k as f64;
        (0..=k)
            .map(|j| {
                let tau = j as f64 * h;
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                w * model.fitness.value(tau + alpha, x + tau)
            })
            .sum::<f64>()
            * h
    };
    let mut c: f64 = 0.0;
    for it in 1..=m {
        let t = per * it as f64 / m as f64;
        for ix in 0..=m {
            let x = -r + 2.0 * r * ix as f64 / m as f64;
            let base = quad(0.0, x, t);
            for ia in 0..=m {
                let alpha = per * ia as f64 / m as f64;
                c = c.max(quad(alpha, x, t) - base);
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::assemble;

    fn sqrt_model(n: usize, l: f64, q: f64, eps: f64) -> SMModel {
        SMModel::new(
            FitnessField::SqrtShift,
            MutationKernel::UniformWindow { q, eps },
            SpaceGrid::new(-l, l, n).unwrap(),
        )
        .unwrap()
    }

    fn inert_model(n: usize) -> SMModel {
        SMModel::new(
            FitnessField::Constant {
                value: 0.0,
                period: 1.0,
            },
            MutationKernel::UniformWindow { q: 0.0, eps: 1.0 },
            SpaceGrid::new(-2.0, 2.0, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn fitness_is_periodic_and_enveloped() {
        let fields = [
            FitnessField::SqrtShift,
            FitnessField::PowerConfine {
                a0: 1.0,
                a1: 0.5,
                p: 2.0,
                phi: 0.7,
                period: 3.0,
            },
        ];
        for f in &fields {
            let per = f.period();
            for i in 0..40 {
                let t = 0.37 * i as f64;
                let x = -5.0 + 0.25 * i as f64;
                assert!((f.value(t + per, x) - f.value(t, x)).abs() < 1e-12);
                assert!(f.lower(x) <= f.value(t, x) + 1e-15);
                assert!(f.value(t, x) <= f.upper(x) + 1e-15);
                assert!(f.upper(x) <= f.sup_upper());
            }
        }
    }

    #[test]
    fn confinement_radius_matches_envelope() {
        let f = FitnessField::SqrtShift;
        let r = f.confinement_radius(-3.0);
        assert!((f.upper(r) + 3.0).abs() < 1e-12);
        assert!(f.upper(r + 0.5) < -3.0);
        assert!(FitnessField::PowerConfine {
            a0: 0.0,
            a1: 1.0,
            p: 1.0,
            phi: 0.0,
            period: 1.0
        }
        .validate()
        .is_ok());
        assert!(FitnessField::PowerConfine {
            a0: 0.0,
            a1: 0.0,
            p: 1.0,
            phi: 0.0,
            period: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn window_weights_integrate_constants_exactly() {
        let g = SpaceGrid::new(-3.0, 3.0, 61).unwrap();
        for &(lo, hi) in &[(-1.03, 0.77), (-4.0, -2.5), (2.2, 5.0), (-0.5, -0.5)] {
            let total: f64 = interval_weights(&g, lo, hi).iter().map(|w| w.1).sum();
            assert!((total - (hi - lo).max(0.0)).abs() < 1e-13);
        }
        let lin: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x - 1.0).collect();
        let v: f64 = interval_weights(&g, -1.03, 0.77)
            .iter()
            .map(|&(j, w)| w * lin[j])
            .sum();
        let exact = (0.77f64.powi(2) - 0.77) - (1.03f64.powi(2) + 1.03);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn generator_examples() {
        let m = inert_model(41);
        let x = DiscreteFunction::from_fn(m.grid, |x| x);
        let lx = generator_apply_sm(&m, &x, 0.3).unwrap();
        for i in 0..40 {
            assert!((lx.values[i] - 1.0).abs() < 1e-12);
        }
        let zero = DiscreteFunction::constant(m.grid, 0.0);
        assert_eq!(generator_apply_sm(&m, &zero, 0.0).unwrap(), zero);

        let (q, eps) = (0.7, 1.0);
        let m = sqrt_model(201, 10.0, q, eps);
        let one = DiscreteFunction::constant(m.grid, 1.0);
        let t = 1.1;
        let l1 = generator_apply_sm(&m, &one, t).unwrap();
        for i in 0..201 {
            let x = m.grid.node(i);
            let expect = m.fitness.value(t, x) + 2.0 * q * eps;
            assert!((l1.values[i] - expect).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn transport_step_shifts_exactly() {
        let m = inert_model(41);
        let dx = m.grid.dx();
        let mut f = DiscreteFunction::from_fn(m.grid, |x| (x * 1.7).sin());
        let orig = f.clone();
        for k in 0..3 {
            f = step_dual_sm(&m, &f, 1.0 - k as f64 * dx, dx, Method::Euler).unwrap();
        }
        for i in 0..37 {
            assert!((f.values[i] - orig.values[i + 3]).abs() < 1e-12);
        }
        assert!(matches!(
            step_dual_sm(&m, &f, 0.0, 1.5 * dx, Method::Euler),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn nonnegative_functions_stay_nonnegative() {
        let m = sqrt_model(161, 8.0, 1.0, 1.0);
        let mut f = psi0_bump(m.grid, 3.0);
        let dt = 0.9 * m.cfl_bound();
        for k in 0..50 {
            f = step_dual_sm(&m, &f, 5.0 - k as f64 * dt, dt, Method::Heun).unwrap();
            assert!(f.min() >= -1e-12);
        }
    }

    #[test]
    fn duhamel_without_kernel_is_free_transport() {
        let g = SpaceGrid::new(-4.0, 4.0, 81).unwrap();
        let m = SMModel::new(
            FitnessField::SqrtShift,
            MutationKernel::UniformWindow { q: 0.0, eps: 1.0 },
            g,
        )
        .unwrap();
        let f = DiscreteFunction::from_fn(g, |x| 0.5 * x + 3.0);
        let (s, t) = (0.2, 1.0);
        let psi = duhamel_iterate_sm(&m, &f, s, t, 1e-13, 5).unwrap();
        // Oracle: trapezoid in time on the same step, exact linear f.
        let k = ((t - s) / g.dx()).ceil() as usize;
        let h = (t - s) / k as f64;
        for i in 0..60 {
            let x = g.node(i);
            let integral: f64 = (0..=k)
                .map(|j| {
                    let tau = s + j as f64 * h;
                    let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                    w * m.fitness.value(tau, x + tau - s)
                })
                .sum::<f64>()
                * h;
            let expect = (0.5 * (x + t - s) + 3.0) * integral.exp();
            assert!((psi.values[i] - expect).abs() < 1e-12, "node {i}");
        }
        let zm = sqrt_model(41, 4.0, 1.0, 1.0);
        let zero = DiscreteFunction::constant(zm.grid, 0.0);
        let z = duhamel_iterate_sm(&zm, &zero, 0.0, 1.0, 1e-12, 50).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duhamel_matches_stepping_under_refinement() {
        let f = |x: f64| (-(x * x) / 4.0).exp();
        let mut errs = Vec::new();
        for &n in &[81usize, 161, 321] {
            let m = sqrt_model(n, 8.0, 0.5, 1.0);
            let g = m.grid;
            let fd = DiscreteFunction::from_fn(g, f);
            let duh = duhamel_iterate_sm(&m, &fd, 0.0, 1.0, 1e-12, 200).unwrap();
            let scheme = StepScheme::euler(1.0);
            let p = assemble(&m, 0.0, 1.0, &scheme).unwrap();
            let stp = p.apply_dual(&fd).unwrap();
            let inner = g.indices_in(-4.0, 4.0);
            let scale = inner
                .clone()
                .map(|i| duh.values[i].abs())
                .fold(0.0, f64::max);
            let err = inner
                .map(|i| (duh.values[i] - stp.values[i]).abs())
                .fold(0.0, f64::max)
                / scale;
            errs.push(err);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 0.05, "{errs:?}");
    }

    #[test]
    fn bump_closed_form() {
        let g = SpaceGrid::new(-8.0, 8.0, 17).unwrap();
        let b = psi0_bump(g, 4.0);
        assert_eq!(b.values[8], 1.0);
        assert_eq!(b.values[4], 0.0);
        assert_eq!(b.values[12], 0.0);
        let x0: f64 = 6.0;
        let g = SpaceGrid::new(-x0 / 2f64.sqrt(), x0 / 2f64.sqrt(), 3).unwrap();
        let b = psi0_bump(g, x0);
        assert!((b.values[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_pair_is_positive() {
        let m = sqrt_model(401, 20.0, 1.0, 1.0);
        let scheme = StepScheme::euler(0.1);
        let pair = lyapunov_pair_sm(&m, 6.0, &scheme).unwrap();
        assert!(pair.psi.min() > 0.0);
        assert!((pair.psi.max() - 1.0).abs() < 1e-15);
        assert!(lyapunov_pair_sm(&m, 25.0, &scheme).is_err());
    }

    #[test]
    fn drift_constants_formulas() {
        let m = sqrt_model(401, 20.0, 1.0, 1.0);
        let pair = lyapunov_pair_sm(&m, 6.0, &StepScheme::euler(0.1)).unwrap();
        let d = drift_constants_sm(&m, &pair, 6.0).unwrap();
        assert!((d.beta_drift - (-30.0 - 7f64.sqrt())).abs() < 1e-12);
        assert!((d.theta0 - 8.0).abs() < 1e-12);
        assert!((d.alpha0 - d.beta_drift + 1.0).abs() < 1e-12);
        assert!(d.psi0_margin >= 0.0);
        // With alpha0 ≈ −33.6 the V-drift inequality would need a ≤ −35.6
        // somewhere inside ±20, but a ≥ −√21 there.
        assert!(d.v_margin < 0.0);
        assert!(!d.holds);
        assert!(d.r0 > 1000.0);
    }

    #[test]
    fn minorization_window_examples() {
        let inert = inert_model(81);
        let scheme = StepScheme::euler(0.05);
        let eta =
            minorization_window_sm(&inert, 0.0, 1.0, (-2.0, 2.0), (-2.0, 2.0), &scheme).unwrap();
        assert_eq!(eta, 1.0);

        let m = sqrt_model(401, 10.0, 1.0, 1.0);
        let dt = 0.9 * m.cfl_bound();
        let short = minorization_window_sm(&m, 0.0, dt, (0.0, 1.0), (-3.0, -2.0), &scheme).unwrap();
        assert!(short < 1e-8);

        let (s, t) = (0.0, 1.0);
        let eta = minorization_window_sm(&m, s, t, (-1.0, 2.0), (-2.0, 1.0), &scheme).unwrap();
        let lower = (0..=100)
            .map(|k| m.fitness.lower(-2.0 + 0.04 * k as f64))
            .fold(f64::INFINITY, f64::min);
        assert!(eta >= ((t - s) * lower).exp(), "{eta}");
        assert!(minorization_window_sm(&m, s, t, (1.0, 1.0), (0.0, 1.0), &scheme).is_err());
    }

    #[test]
    fn window_kernels_have_no_shift_constant() {
        let m = sqrt_model(41, 4.0, 1.0, 1.0);
        assert_eq!(shift_domination_constant(&m, 8), None);
        assert!(drift_shift_constant(&m, 2.0, 6) >= 0.0);
    }
}
