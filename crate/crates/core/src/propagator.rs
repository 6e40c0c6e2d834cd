//! Dense propagator matrices approximating `M_{s,t}` and their assembly from
//! a model's discrete dual generator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure_space::{DiscreteFunction, DiscreteMeasure, SpaceGrid};

/// Entries in `[-CLAMP_THRESHOLD, 0)` are rounded to zero and counted.
pub const CLAMP_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Heun,
}

/// Time-stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScheme {
    pub dt_max: f64,
    pub method: Method,
    pub cfl_safety: f64,
}

impl StepScheme {
    pub fn new(dt_max: f64, method: Method, cfl_safety: f64) -> Result<Self> {
        if !(dt_max > 0.0 && dt_max.is_finite()) {
            return Err(invalid("dt_max", format!("must be > 0, got {dt_max}")));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(invalid(
                "cfl_safety",
                format!("must lie in (0, 1], got {cfl_safety}"),
            ));
        }
        Ok(Self {
            dt_max,
            method,
            cfl_safety,
        })
    }

    pub fn euler(dt_max: f64) -> Self {
        Self {
            dt_max,
            method: Method::Euler,
            cfl_safety: 0.9,
        }
    }

    /// Largest admissible step for `model`.
    pub fn dt_cap<G: DualGenerator + ?Sized>(&self, model: &G) -> f64 {
        self.dt_max.min(self.cfl_safety * model.cfl_bound())
    }

    /// Step count for an interval of length `len`; depends on `len` only.
    pub fn steps_for<G: DualGenerator + ?Sized>(&self, model: &G, len: f64) -> usize {
        if len <= 0.0 {
            return 0;
        }
        let r = len / self.dt_cap(model);
        ((r * (1.0 - 1e-12)).ceil() as usize).max(1)
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(c, v)| v * f[c]).sum())
            .collect()
    }

    /// `I + dt·self`.
    pub fn euler_step(&self, dt: f64) -> Self {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(c, v)| (c, dt * v)).collect();
                r.push((i, 1.0));
                r
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn min_value(&self) -> f64 {
        self.vals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `out = self · p` for row-major dense `p` (n × m).
    fn mul_dense(&self, p: &[f64], m: usize, out: &mut [f64]) {
        for i in 0..self.n {
            let orow = &mut out[i * m..(i + 1) * m];
            orow.fill(0.0);
            for (c, v) in self.row(i) {
                let prow = &p[c * m..(c + 1) * m];
                for (o, x) in orow.iter_mut().zip(prow) {
                    *o += v * x;
                }
            }
        }
    }
}

/// A model that exposes its discrete dual generator `𝓛_t`.
pub trait DualGenerator {
    fn grid(&self) -> SpaceGrid;
    /// Discrete `𝓛_t` including boundary closure.
    fn generator(&self, t: f64) -> SparseOperator;
    /// Uniform-in-time step bound keeping `I + dt·𝓛_t` entrywise nonnegative.
    fn cfl_bound(&self) -> f64;
    /// Coefficient period, `None` for autonomous models.
    fn period(&self) -> Option<f64>;
}

impl<G: DualGenerator + ?Sized> DualGenerator for &G {
    fn grid(&self) -> SpaceGrid {
        (**self).grid()
    }
    fn generator(&self, t: f64) -> SparseOperator {
        (**self).generator(t)
    }
    fn cfl_bound(&self) -> f64 {
        (**self).cfl_bound()
    }
    fn period(&self) -> Option<f64> {
        (**self).period()
    }
}

/// One explicit step of the backward dual evolution from `t` to `t - dt`.
pub fn step_dual<G: DualGenerator + ?Sized>(
    model: &G,
    f: &DiscreteFunction,
    t: f64,
    dt: f64,
    method: Method,
) -> Result<DiscreteFunction> {
    model.grid().check_same(&f.grid)?;
    let bound = model.cfl_bound();
    if dt < 0.0 || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    if dt == 0.0 {
        return Ok(f.clone());
    }
    let x = f.values.as_slice().expect("contiguous");
    let l1 = model.generator(t);
    let k1 = l1.apply(x);
    let values: Vec<f64> = match method {
        Method::Euler => x.iter().zip(&k1).map(|(a, b)| a + dt * b).collect(),
        Method::Heun => {
            let pred: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
            let k2 = model.generator(t - dt).apply(&pred);
            x.iter()
                .zip(k1.iter().zip(&k2))
                .map(|(a, (b, c))| a + 0.5 * dt * (b + c))
                .collect()
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("dual step at t = {t}"),
        });
    }
    DiscreteFunction::new(f.grid, Array1::from(values))
}

/// `M_{s,t} f` by stepping a single vector with the same step sequence
/// [`assemble`] would use.
pub fn evolve_dual<G: DualGenerator + ?Sized>(
    model: &G,
    f: &DiscreteFunction,
    s: f64,
    t: f64,
    scheme: &StepScheme,
) -> Result<DiscreteFunction> {
    if t < s {
        return Err(Error::TimeOrder { s, t });
    }
    let n_steps = scheme.steps_for(model, t - s);
    if n_steps == 0 {
        return Ok(f.clone());
    }
    let dt = (t - s) / n_steps as f64;
    let base = match model.period() {
        Some(per) => s.rem_euclid(per),
        None => s,
    };
    let mut g = f.clone();
    for k in (1..=n_steps).rev() {
        g = step_dual(model, &g, base + k as f64 * dt, dt, scheme.method)?;
    }
    Ok(g)
}

/// Dense nonnegative matrix approximating `M_{s,t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub grid: SpaceGrid,
    pub s: f64,
    pub t: f64,
    pub matrix: Array2<f64>,
    /// Entries in `[-1e-12, 0)` rounded to zero during assembly.
    pub clamp_count: usize,
}

impl Propagator {
    pub fn identity(grid: SpaceGrid, s: f64) -> Self {
        Self {
            grid,
            s,
            t: s,
            matrix: Array2::eye(grid.n_nodes()),
            clamp_count: 0,
        }
    }

    pub fn from_matrix(grid: SpaceGrid, s: f64, t: f64, matrix: Array2<f64>) -> Result<Self> {
        if t < s {
            return Err(Error::TimeOrder { s, t });
        }
        let n = grid.n_nodes();
        if matrix.dim() != (n, n) {
            return Err(Error::GridMismatch {
                expected: n,
                found: matrix.nrows(),
                x_min: grid.x_min(),
                x_max: grid.x_max(),
            });
        }
        let mut p = Self {
            grid,
            s,
            t,
            matrix,
            clamp_count: 0,
        };
        p.sanitize()?;
        Ok(p)
    }

    fn sanitize(&mut self) -> Result<()> {
        let n = self.grid.n_nodes();
        let mut clamped = 0;
        for ((i, j), v) in self.matrix.indexed_iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("propagator entry ({i}, {j}) on [{}, {}]", self.s, self.t),
                });
            }
            if *v < 0.0 {
                if *v < -CLAMP_THRESHOLD {
                    return Err(Error::NegativeEntry {
                        value: *v,
                        row: i,
                        col: j,
                    });
                }
                *v = 0.0;
                clamped += 1;
            }
        }
        debug_assert!(n > 0);
        self.clamp_count += clamped;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn apply_dual(&self, f: &DiscreteFunction) -> Result<DiscreteFunction> {
        self.grid.check_same(&f.grid)?;
        Ok(DiscreteFunction {
            grid: self.grid,
            values: self.matrix.dot(&f.values),
        })
    }

    pub fn push_forward(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        self.grid.check_same(&mu.grid)?;
        Ok(DiscreteMeasure {
            grid: self.grid,
            masses: mu.masses.dot(&self.matrix),
        })
    }

    /// Multiplies all entries by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            matrix: &self.matrix * c,
            ..self.clone()
        }
    }

    /// Rows as CSV: header `n,s,t`, then the header values, then `n` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,s,t\n");
        let _ = writeln!(
            out,
            "{},{},{}",
            self.n(),
            fmt_sig15(self.s),
            fmt_sig15(self.t)
        );
        for row in self.matrix.rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt_sig15(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(grid: SpaceGrid, text: &str) -> Result<Self> {
        let bad = |m: &str| invalid("propagator csv", m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("n,s,t") {
            return Err(bad("missing `n,s,t` header"));
        }
        let head: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("missing header values"))?
            .split(',')
            .collect();
        if head.len() != 3 {
            return Err(bad("header row must have 3 fields"));
        }
        let n: usize = head[0].parse().map_err(|_| bad("bad n"))?;
        let s: f64 = head[1].parse().map_err(|_| bad("bad s"))?;
        let t: f64 = head[2].parse().map_err(|_| bad("bad t"))?;
        grid.check_len(n)?;
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            let line = lines.next().ok_or_else(|| bad("too few rows"))?;
            let vals: Vec<f64> = line
                .split(',')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("unparsable entry"))?;
            if vals.len() != n {
                return Err(bad("row length mismatch"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Self::from_matrix(grid, s, t, m)
    }
}

/// Formats with 15 significant digits.
pub fn fmt_sig15(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.14e}")
}

/// `M_{s,u} M_{u,t} = M_{s,t}` as a matrix product.
pub fn compose(p1: &Propagator, p2: &Propagator) -> Result<Propagator> {
    p1.grid.check_same(&p2.grid)?;
    let scale = 1.0f64.max(p1.t.abs());
    if (p1.t - p2.s).abs() > 1e-12 * scale {
        return Err(Error::TimeMismatch {
            first_end: p1.t,
            second_start: p2.s,
        });
    }
    Ok(Propagator {
        grid: p1.grid,
        s: p1.s,
        t: p2.t,
        matrix: p1.matrix.dot(&p2.matrix),
        clamp_count: p1.clamp_count + p2.clamp_count,
    })
}

/// Assembles `M_{s,t}` with the step count derived from `t - s` alone.
pub fn assemble<G: DualGenerator + ?Sized>(
    model: &G,
    s: f64,
    t: f64,
    scheme: &StepScheme,
) -> Result<Propagator> {
    if t < s {
        return Err(Error::TimeOrder { s, t });
    }
    let n_steps = scheme.steps_for(model, t - s);
    assemble_steps(model, s, t, n_steps, scheme.method)
}

/// Assembles `M_{s,t}` with exactly `n_steps` uniform steps.
///
/// Step times are measured from `s` reduced modulo the model period, so
/// shifting `[s, t]` by whole periods reproduces the same arithmetic.
pub fn assemble_steps<G: DualGenerator + ?Sized>(
    model: &G,
    s: f64,
    t: f64,
    n_steps: usize,
    method: Method,
) -> Result<Propagator> {
    assemble_steps_visit(model, s, t, n_steps, method, |_, _| {})
}

/// As [`assemble_steps`], calling `visit(k, m)` after each step with the
/// row-major buffer `m` of the intermediate `M_{s + k·dt, t}`, `k` descending.
pub fn assemble_steps_visit<G: DualGenerator + ?Sized>(
    model: &G,
    s: f64,
    t: f64,
    n_steps: usize,
    method: Method,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Propagator> {
    if t < s {
        return Err(Error::TimeOrder { s, t });
    }
    let grid = model.grid();
    let n = grid.n_nodes();
    if n_steps == 0 || t == s {
        return Ok(Propagator {
            grid,
            s,
            t,
            matrix: Array2::eye(n),
            clamp_count: 0,
        });
    }
    let dt = (t - s) / n_steps as f64;
    let bound = model.cfl_bound();
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    let base = match model.period() {
        Some(per) => s.rem_euclid(per),
        None => s,
    };

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = 1.0;
    }
    let mut next = vec![0.0; n * n];
    let mut tmp = match method {
        Method::Heun => vec![0.0; n * n],
        Method::Euler => Vec::new(),
    };
    // P ← S_τ P while stepping τ from t down to s.
    for k in (1..=n_steps).rev() {
        let tau = base + k as f64 * dt;
        let s1 = model.generator(tau).euler_step(dt);
        match method {
            Method::Euler => {
                s1.mul_dense(&p, n, &mut next);
            }
            Method::Heun => {
                s1.mul_dense(&p, n, &mut tmp);
                let s2 = model.generator(tau - dt).euler_step(dt);
                s2.mul_dense(&tmp, n, &mut next);
                for (o, x) in next.iter_mut().zip(&p) {
                    *o = 0.5 * (*o + x);
                }
            }
        }
        std::mem::swap(&mut p, &mut next);
        visit(k - 1, &p);
    }
    let matrix = Array2::from_shape_vec((n, n), p).expect("square buffer");
    let mut prop = Propagator {
        grid,
        s,
        t,
        matrix,
        clamp_count: 0,
    };
    prop.sanitize()?;
    #[cfg(debug_assertions)]
    debug_check_duality(&prop);
    Ok(prop)
}

#[cfg(debug_assertions)]
fn debug_check_duality(p: &Propagator) {
    let n = p.n();
    let f = Array1::from_iter((0..n).map(|i| (1.3 * i as f64 + 0.7).sin()));
    let mu = Array1::from_iter((0..n).map(|i| (0.9 * i as f64).cos()));
    let a = mu.dot(&p.matrix).dot(&f);
    let b = mu.dot(&p.matrix.dot(&f));
    let scale = mu.mapv(f64::abs).dot(&p.matrix.dot(&f.mapv(f64::abs)));
    debug_assert!(
        (a - b).abs() <= 1e-12 * scale.max(1.0),
        "transpose duality broken: {a} vs {b}"
    );
}

/// Source of propagators `M_{a,b}` on demand.
pub trait PropagatorProvider {
    fn grid(&self) -> SpaceGrid;
    fn propagator(&self, a: f64, b: f64) -> Result<Arc<Propagator>>;
}

/// Provider on a fixed time lattice `k·dt` with `dt = cycle / steps_per_cycle`.
///
/// All propagators share the same step sequence, so products of
/// neighbouring pieces reproduce the directly assembled matrix up to
/// rounding. Results are cached by lattice offset modulo the cycle,
/// which is exact for models periodic with that cycle (and for
/// autonomous models with any cycle).
pub struct LatticeProvider<G> {
    model: G,
    method: Method,
    cycle: f64,
    steps_per_cycle: usize,
    cache: Mutex<HashMap<(i64, i64), Arc<Propagator>>>,
}

impl<G: DualGenerator> LatticeProvider<G> {
    pub fn new(model: G, method: Method, cycle: f64, steps_per_cycle: usize) -> Result<Self> {
        if !(cycle > 0.0) || steps_per_cycle == 0 {
            return Err(invalid("lattice", "cycle and step count must be positive"));
        }
        let dt = cycle / steps_per_cycle as f64;
        if dt > model.cfl_bound() * (1.0 + 1e-12) {
            return Err(Error::Cfl {
                dt,
                bound: model.cfl_bound(),
            });
        }
        if let Some(per) = model.period() {
            if (per - cycle).abs() > 1e-12 * per {
                return Err(invalid(
                    "lattice cycle",
                    format!("must equal the model period {per}, got {cycle}"),
                ));
            }
        }
        Ok(Self {
            model,
            method,
            cycle,
            steps_per_cycle,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Lattice whose step respects `scheme` and puts `granularity`
    /// equally spaced sample times in each cycle.
    pub fn from_scheme(
        model: G,
        scheme: &StepScheme,
        cycle: f64,
        granularity: usize,
    ) -> Result<Self> {
        let g = granularity.max(1);
        let per_piece = scheme.steps_for(&model, cycle / g as f64);
        Self::new(model, scheme.method, cycle, per_piece * g)
    }

    pub fn model(&self) -> &G {
        &self.model
    }

    pub fn dt(&self) -> f64 {
        self.cycle / self.steps_per_cycle as f64
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    pub fn steps_per_cycle(&self) -> usize {
        self.steps_per_cycle
    }

    pub fn method(&self) -> Method {
        self.method
    }

    fn lattice_index(&self, a: f64) -> Result<i64> {
        let r = a / self.dt();
        let k = r.round();
        if (r - k).abs() > 1e-6 {
            return Err(invalid(
                "lattice time",
                format!("{a} is not a multiple of the step {}", self.dt()),
            ));
        }
        Ok(k as i64)
    }
}

impl<G: DualGenerator> PropagatorProvider for LatticeProvider<G> {
    fn grid(&self) -> SpaceGrid {
        self.model.grid()
    }

    fn propagator(&self, a: f64, b: f64) -> Result<Arc<Propagator>> {
        if b < a {
            return Err(Error::TimeOrder { s: a, t: b });
        }
        let ia = self.lattice_index(a)?;
        let ib = self.lattice_index(b)?;
        let per = self.steps_per_cycle as i64;
        let key = (ia.rem_euclid(per), ib - ia);
        if let Some(p) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::new(Propagator {
                s: a,
                t: b,
                ..(**p).clone()
            }));
        }
        let dt = self.dt();
        let s0 = key.0 as f64 * dt;
        let t0 = s0 + key.1 as f64 * dt;
        let mut p = assemble_steps(&self.model, s0, t0, key.1 as usize, self.method)?;
        p.s = a;
        p.t = b;
        let p = Arc::new(p);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&p));
        Ok(p)
    }
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// `𝓛f = c·D⁺f` with zero-gradient closure.
    pub struct Transport {
        pub grid: SpaceGrid,
        pub speed: f64,
    }

    impl DualGenerator for Transport {
        fn grid(&self) -> SpaceGrid {
            self.grid
        }
        fn generator(&self, _t: f64) -> SparseOperator {
            let n = self.grid.n_nodes();
            let c = self.speed / self.grid.dx();
            SparseOperator::from_rows(
                (0..n)
                    .map(|i| {
                        if i + 1 < n {
                            vec![(i, -c), (i + 1, c)]
                        } else {
                            vec![]
                        }
                    })
                    .collect(),
            )
        }
        fn cfl_bound(&self) -> f64 {
            if self.speed == 0.0 {
                f64::INFINITY
            } else {
                self.grid.dx() / self.speed
            }
        }
        fn period(&self) -> Option<f64> {
            None
        }
    }
}
