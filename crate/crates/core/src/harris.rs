//! Grid certificates for the Harris-type assumptions on assembled
//! propagators, and the exact sin-model semiflow.
//!
//! Every constant is the tightest value valid on the grid, so the defining
//! inequality holds by construction; margins re-evaluate it as a check.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::floquet::fit_line;
use crate::measure_space::{DiscreteFunction, DiscreteMeasure, SpaceGrid, WeightPair};
use crate::propagator::{assemble_steps_visit, LatticeProvider, Propagator, PropagatorProvider};
use crate::selection_mutation::{interval_weights, SMModel};

/// Log-slope tolerance per iterate for the finite-horizon trend tests.
pub const TREND_SLOPE_TOL: f64 = 1e-4;

/// Relative outward rounding applied to certified constants so that
/// re-evaluated margins are not spoiled by the last few ulps.
const ROUND: f64 = 1e-13;

fn round_up(x: f64) -> f64 {
    x * (1.0 + ROUND)
}

fn round_down(x: f64) -> f64 {
    x * (1.0 - ROUND)
}

/// Node interval `[i_lo, i_hi]` standing for `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallSet {
    pub grid: SpaceGrid,
    pub i_lo: usize,
    pub i_hi: usize,
}

impl SmallSet {
    pub fn new(grid: SpaceGrid, i_lo: usize, i_hi: usize) -> Result<Self> {
        if i_lo > i_hi || i_hi >= grid.n_nodes() {
            return Err(invalid(
                "small set",
                format!(
                    "need i_lo ≤ i_hi < {}, got [{i_lo}, {i_hi}]",
                    grid.n_nodes()
                ),
            ));
        }
        Ok(Self { grid, i_lo, i_hi })
    }

    /// Nodes lying in `[a, b]`.
    pub fn from_interval(grid: SpaceGrid, a: f64, b: f64) -> Result<Self> {
        let r = grid.indices_in(a, b);
        if r.is_empty() {
            return Err(invalid("small set", format!("no node in [{a}, {b}]")));
        }
        Self::new(grid, *r.start(), *r.end())
    }

    pub fn indices(&self) -> RangeInclusive<usize> {
        self.i_lo..=self.i_hi
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.i_lo..=self.i_hi).contains(&i)
    }

    pub fn len(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.grid.node(self.i_lo), self.grid.node(self.i_hi))
    }

    /// `sup_K V/ψ`.
    pub fn sup_v_over_psi(&self, pair: &WeightPair) -> f64 {
        self.indices()
            .map(|i| pair.v.values[i] / pair.psi.values[i])
            .fold(0.0, f64::max)
    }
}

/// Probability weights supported on `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorizationMeasure {
    pub set: SmallSet,
    pub weights: Array1<f64>,
}

impl MinorizationMeasure {
    pub fn new(set: SmallSet, weights: Array1<f64>) -> Result<Self> {
        set.grid.check_len(weights.len())?;
        for (j, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(
                    "nu",
                    format!("weight {j} = {w} must be finite and ≥ 0"),
                ));
            }
            if w > 0.0 && !set.contains(j) {
                return Err(invalid("nu", format!("node {j} carries mass outside K")));
            }
        }
        let total = weights.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("nu", format!("total mass {total} is not 1")));
        }
        Ok(Self { set, weights })
    }

    /// Normalized grid Lebesgue measure on `K`.
    pub fn uniform_on(set: SmallSet) -> Result<Self> {
        let (a, b) = set.interval();
        if set.len() == 1 {
            let mut w = Array1::zeros(set.grid.n_nodes());
            w[set.i_lo] = 1.0;
            return Self::new(set, w);
        }
        Self::window(set, a, b)
    }

    /// Normalized Lebesgue measure on `[lo, hi] ∩ K`.
    pub fn window(set: SmallSet, lo: f64, hi: f64) -> Result<Self> {
        let (a, b) = set.interval();
        let mut w = Array1::zeros(set.grid.n_nodes());
        for (j, m) in interval_weights(&set.grid, lo.max(a), hi.min(b)) {
            if set.contains(j) {
                w[j] += m;
            }
        }
        let total = w.sum();
        if !(total > 0.0) {
            return Err(invalid("nu", format!("window [{lo}, {hi}] misses K")));
        }
        w /= total;
        Self::new(set, w)
    }

    pub fn as_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            grid: self.set.grid,
            masses: self.weights.clone(),
        }
    }

    fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
    }
}

/// One named check with its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub constants: BTreeMap<String, f64>,
    pub margin: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckRecord {
    fn new(check: &str, constants: &[(&str, f64)], margin: f64, pass: bool) -> Self {
        Self {
            check: check.to_string(),
            constants: constants.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            margin,
            pass,
            note: None,
        }
    }

    fn with_note(mut self, note: &str) -> Self {
        self.note = Some(note.to_string());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarrisReport {
    pub checks: Vec<CheckRecord>,
    pub verdict: bool,
}

impl HarrisReport {
    pub fn push(&mut self, rec: CheckRecord) {
        self.checks.push(rec);
        self.verdict = self.checks.iter().all(|c| c.pass);
    }

    pub fn get(&self, check: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.check == check)
    }

    /// Aligned text table, one row per check.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 4]> = self
            .checks
            .iter()
            .map(|c| {
                let consts = c
                    .constants
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.6e}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                [
                    c.check.clone(),
                    format!("{:.3e}", c.margin),
                    if c.pass { "pass" } else { "FAIL" }.to_string(),
                    consts,
                ]
            })
            .collect();
        let head = ["check", "margin", "verdict", "constants"];
        let mut w = head.map(|h| h.chars().count());
        for r in &rows {
            for k in 0..3 {
                w[k] = w[k].max(r[k].chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, r: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:<w2$}  {}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = w[0],
                w1 = w[1],
                w2 = w[2]
            );
        };
        line(&mut out, head);
        for r in &rows {
            line(&mut out, [&r[0], &r[1], &r[2], &r[3]]);
        }
        let _ = writeln!(
            out,
            "overall: {}",
            if self.verdict { "pass" } else { "FAIL" }
        );
        out
    }
}

fn check_pair(p_grid: &SpaceGrid, pair: &WeightPair) -> Result<()> {
    p_grid.check_same(&pair.v.grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1Record {
    pub alpha: f64,
    pub theta: f64,
    /// `min_i (αV + θ𝟙_Kψ − PV)_i / V_i`.
    pub margin: f64,
    pub pass: bool,
}

fn drift_constants(pv: &Array1<f64>, pair: &WeightPair, k: &SmallSet) -> A1Record {
    let v = &pair.v.values;
    let psi = &pair.psi.values;
    let n = v.len();
    let alpha = round_up(
        (0..n)
            .filter(|&i| !k.contains(i))
            .map(|i| pv[i] / v[i])
            .fold(0.0, f64::max),
    );
    let theta = round_up(
        k.indices()
            .map(|i| (pv[i] - alpha * v[i]) / psi[i])
            .fold(0.0, f64::max),
    );
    let margin = (0..n)
        .map(|i| {
            let ind = if k.contains(i) { theta * psi[i] } else { 0.0 };
            (alpha * v[i] + ind - pv[i]) / v[i]
        })
        .fold(f64::INFINITY, f64::min);
    A1Record {
        alpha,
        theta,
        margin,
        pass: alpha < 1.0 && margin >= -1e-12,
    }
}

/// `P V ≤ αV + θ𝟙_K ψ`.
pub fn check_a1(p: &Propagator, pair: &WeightPair, k: &SmallSet) -> Result<A1Record> {
    check_pair(&p.grid, pair)?;
    Ok(drift_constants(&p.matrix.dot(&pair.v.values), pair, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2Record {
    pub beta: f64,
    /// `min_i (Pψ − βψ)_i / ψ_i`.
    pub margin: f64,
    pub pass: bool,
}

fn growth_constant(ppsi: &Array1<f64>, psi: &Array1<f64>, alpha: f64) -> A2Record {
    let beta = round_down(
        ppsi.iter()
            .zip(psi.iter())
            .map(|(a, b)| a / b)
            .fold(f64::INFINITY, f64::min),
    );
    let margin = ppsi
        .iter()
        .zip(psi.iter())
        .map(|(a, b)| (a - beta * b) / b)
        .fold(f64::INFINITY, f64::min);
    A2Record {
        beta,
        margin,
        pass: beta > alpha && margin >= -1e-12,
    }
}

/// `P ψ ≥ β ψ`; passes when `β` exceeds the paired drift `alpha`.
pub fn check_a2(p: &Propagator, pair: &WeightPair, alpha: f64) -> Result<A2Record> {
    check_pair(&p.grid, pair)?;
    Ok(growth_constant(
        &p.matrix.dot(&pair.psi.values),
        &pair.psi.values,
        alpha,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A3Record {
    pub c: f64,
    /// `min (P_ij ψ_j − c (Pψ)_i ν_j) / ((Pψ)_i ν_j)` over `i ∈ K`, `ν_j > 0`.
    pub margin: f64,
    pub pass: bool,
}

/// `inf_K P(fψ)/Pψ ≥ c⟨ν, f⟩`, certified on indicator basis functions.
pub fn check_a3(
    p: &Propagator,
    pair: &WeightPair,
    k: &SmallSet,
    nu: &MinorizationMeasure,
) -> Result<A3Record> {
    check_pair(&p.grid, pair)?;
    let psi = &pair.psi.values;
    let ppsi = p.matrix.dot(psi);
    let mut c = f64::INFINITY;
    for i in k.indices() {
        if !(ppsi[i] > 0.0) {
            return Err(Error::Positivity(format!(
                "(Pψ)[{i}] = {} is not > 0",
                ppsi[i]
            )));
        }
        for (j, w) in nu.support() {
            c = c.min(p.matrix[[i, j]] * psi[j] / (ppsi[i] * w));
        }
    }
    let c = round_down(c);
    let mut margin = f64::INFINITY;
    for i in k.indices() {
        for (j, w) in nu.support() {
            let rhs = c * ppsi[i] * w;
            margin = margin.min((p.matrix[[i, j]] * psi[j] - rhs) / (ppsi[i] * w));
        }
    }
    Ok(A3Record {
        c,
        margin,
        pass: c > 0.0 && margin >= -1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A4Record {
    pub d: f64,
    /// `⟨ν, Pⁿψ/ψ⟩ / max_K Pⁿψ/ψ` for `n = 1..n_max`.
    pub ratios: Vec<f64>,
    /// Log-slope over the second half of the range.
    pub slope: f64,
    pub pass: bool,
}

/// Least-squares slope of `ln r_n` against `n` over `n ≥ n_max/2`.
pub fn trend_slope(ratios: &[f64]) -> f64 {
    let n_max = ratios.len();
    let start = (n_max / 2).max(1) - 1;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..n_max)
        .map(|k| ((k + 1) as f64, ratios[k].ln()))
        .unzip();
    if xs.len() < 2 {
        return 0.0;
    }
    fit_line(&xs, &ys).1
}

/// `⟨ν, Pⁿψ/ψ⟩ ≥ d sup_K Pⁿψ/ψ` for `n ≤ n_max`, with a trend test.
pub fn check_a4(
    p_period: &Propagator,
    pair: &WeightPair,
    k: &SmallSet,
    nu: &MinorizationMeasure,
    n_max: usize,
) -> Result<A4Record> {
    check_pair(&p_period.grid, pair)?;
    if n_max < 1 {
        return Err(invalid("n_max", "at least one iterate"));
    }
    let psi = &pair.psi.values;
    let mut f = psi.clone();
    let mut ratios = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        f = p_period.matrix.dot(&f);
        // Ratios are scale free; renormalize against overflow.
        let top = f.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::Positivity("Pⁿψ vanished".into()));
        }
        f /= top;
        let num: f64 = nu.support().map(|(j, w)| w * f[j] / psi[j]).sum();
        let den = k.indices().map(|i| f[i] / psi[i]).fold(0.0, f64::max);
        ratios.push(num / den);
    }
    let d = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let slope = trend_slope(&ratios);
    Ok(A4Record {
        d,
        slope,
        pass: d > 0.0 && slope >= -TREND_SLOPE_TOL,
        ratios,
    })
}

/// A1–A4 on `P_k` (and its powers for A4).
pub fn check_a_suite(
    p_k: &Propagator,
    pair: &WeightPair,
    k: &SmallSet,
    nu: &MinorizationMeasure,
    n_max: usize,
) -> Result<HarrisReport> {
    let a1 = check_a1(p_k, pair, k)?;
    let a2 = check_a2(p_k, pair, a1.alpha)?;
    let a3 = check_a3(p_k, pair, k, nu)?;
    let a4 = check_a4(p_k, pair, k, nu, n_max)?;
    let mut rep = HarrisReport::default();
    rep.push(CheckRecord::new(
        "A1",
        &[("alpha", a1.alpha), ("theta", a1.theta)],
        a1.margin,
        a1.pass,
    ));
    rep.push(CheckRecord::new(
        "A2",
        &[("beta", a2.beta)],
        a2.margin,
        a2.pass,
    ));
    rep.push(CheckRecord::new(
        "A3",
        &[("c_A3", a3.c)],
        a3.margin,
        a3.pass,
    ));
    rep.push(
        CheckRecord::new(
            "A4",
            &[("d_A4", a4.d), ("log_slope", a4.slope)],
            a4.d,
            a4.pass,
        )
        .with_note("finite-horizon trend test"),
    );
    Ok(rep)
}

/// `M_{a,b} f` through consecutive provider pieces of length `h`.
fn chain_apply<P: PropagatorProvider + ?Sized>(
    provider: &P,
    f: &Array1<f64>,
    a: f64,
    n_pieces: usize,
    h: f64,
) -> Result<Array1<f64>> {
    let mut v = f.clone();
    for k in (0..n_pieces).rev() {
        let p = provider.propagator(a + k as f64 * h, a + (k + 1) as f64 * h)?;
        v = p.matrix.dot(&v);
    }
    Ok(v)
}

/// Sampling of the B-suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSuiteParams {
    pub s0: f64,
    pub tau: f64,
    pub n_max: usize,
    /// Number of sample times in `[s₀, s₀ + τ)`; piece length is `τ / time_samples`.
    pub time_samples: usize,
}

/// B0–B4 from provider pieces. B5 needs a model and lives in [`check_b5_sm`].
pub fn check_b_suite<P: PropagatorProvider + ?Sized>(
    provider: &P,
    pair: &WeightPair,
    k: &SmallSet,
    nu: &MinorizationMeasure,
    params: &BSuiteParams,
) -> Result<HarrisReport> {
    check_pair(&provider.grid(), pair)?;
    let BSuiteParams {
        s0,
        tau,
        n_max,
        time_samples: m,
    } = *params;
    if !(tau > 0.0) || m == 0 || n_max < 2 {
        return Err(invalid(
            "B-suite",
            "need tau > 0, time_samples ≥ 1, n_max ≥ 2",
        ));
    }
    let h = tau / m as f64;
    let v = &pair.v.values;
    let psi = &pair.psi.values;
    let nn = v.len();
    let mut rep = HarrisReport::default();

    // B0 over all sample pairs s₀ ≤ s ≤ t ≤ s₀ + 2τ.
    let mut up: f64 = 0.0;
    let mut low = f64::INFINITY;
    for b in 1..=2 * m {
        let mut mv = v.clone();
        let mut mp = psi.clone();
        for a in (0..b).rev() {
            let p = provider.propagator(s0 + a as f64 * h, s0 + (a + 1) as f64 * h)?;
            mv = p.matrix.dot(&mv);
            mp = p.matrix.dot(&mp);
            for i in 0..nn {
                up = up.max(mv[i] / v[i]);
                low = low.min(mp[i] / psi[i]);
            }
        }
    }
    let sup_k = k.sup_v_over_psi(pair);
    rep.push(
        CheckRecord::new(
            "B0",
            &[
                ("mv_over_v_max", up),
                ("mpsi_over_psi_min", low),
                ("sup_K_v_over_psi", sup_k),
            ],
            low,
            up.is_finite() && low > 0.0 && sup_k.is_finite(),
        )
        .with_note("sampled pairs on the piece lattice"),
    );

    // B1/B2 at each sample start; B3 at s₀.
    let mut alpha: f64 = 0.0;
    let mut theta: f64 = 0.0;
    let mut m1 = f64::INFINITY;
    let mut beta = f64::INFINITY;
    let mut m2 = f64::INFINITY;
    for j in 0..m {
        let s = s0 + j as f64 * h;
        let pv = chain_apply(provider, v, s, m, h)?;
        let pp = chain_apply(provider, psi, s, m, h)?;
        let a1 = drift_constants(&pv, pair, k);
        alpha = alpha.max(a1.alpha);
        theta = theta.max(a1.theta);
        let a2 = growth_constant(&pp, psi, 0.0);
        beta = beta.min(a2.beta);
        // Margins against the sample-wise maxima.
        for i in 0..nn {
            let ind = if k.contains(i) { theta * psi[i] } else { 0.0 };
            m1 = m1.min((alpha * v[i] + ind - pv[i]) / v[i]);
        }
        m2 = m2.min(a2.margin);
    }
    // Re-verify with the final (α, θ, β) over all samples.
    for j in 0..m {
        let s = s0 + j as f64 * h;
        let pv = chain_apply(provider, v, s, m, h)?;
        let pp = chain_apply(provider, psi, s, m, h)?;
        for i in 0..nn {
            let ind = if k.contains(i) { theta * psi[i] } else { 0.0 };
            m1 = m1.min((alpha * v[i] + ind - pv[i]) / v[i]);
            m2 = m2.min((pp[i] - beta * psi[i]) / psi[i]);
        }
    }
    let ordered = beta > alpha && alpha > 0.0;
    rep.push(CheckRecord::new(
        "B1",
        &[("alpha", alpha), ("theta", theta)],
        m1,
        m1 >= -1e-12 && ordered,
    ));
    rep.push(CheckRecord::new(
        "B2",
        &[("beta", beta), ("beta_minus_alpha", beta - alpha)],
        m2,
        m2 >= -1e-12 && ordered,
    ));

    let p_tau = provider.propagator(s0, s0 + tau)?;
    let b3 = check_a3(&p_tau, pair, k, nu)?;
    rep.push(CheckRecord::new(
        "B3",
        &[("c_B3", b3.c)],
        b3.margin,
        b3.pass,
    ));

    // B4: ratio M_{s₀,s₀+nτ}ψ / M_{s,s+nτ}ψ on K.
    let mut chains: Vec<(Array1<f64>, f64)> = (0..m).map(|_| (psi.clone(), 0.0)).collect();
    let mut series = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        for (j, (f, log_scale)) in chains.iter_mut().enumerate() {
            let s = s0 + j as f64 * h;
            let mut g = chain_apply(provider, f, s, m, h)?;
            let top = g.iter().copied().fold(0.0, f64::max);
            if !(top > 0.0) {
                return Err(Error::Positivity("M_{s,s+nτ}ψ vanished".into()));
            }
            g /= top;
            *log_scale += top.ln();
            *f = g;
        }
        let (ref f0, l0) = chains[0];
        let mut r: f64 = 0.0;
        for (f, l) in &chains {
            for i in k.indices() {
                r = r.max((l0 - l).exp() * f0[i] / f[i]);
            }
        }
        series.push(r);
    }
    let c_b4 = series.iter().copied().fold(0.0, f64::max);
    let slope = trend_slope(&series);
    rep.push(
        CheckRecord::new(
            "B4",
            &[("C_B4", c_b4), ("log_slope", slope)],
            TREND_SLOPE_TOL - slope,
            c_b4.is_finite() && slope <= TREND_SLOPE_TOL,
        )
        .with_note("finite-horizon trend test"),
    );
    Ok(rep)
}

/// B4 ratio series alone (max over sampled `s` and `K` per `n`).
pub fn b4_series<P: PropagatorProvider + ?Sized>(
    provider: &P,
    pair: &WeightPair,
    k: &SmallSet,
    params: &BSuiteParams,
) -> Result<Vec<f64>> {
    let nu = MinorizationMeasure::uniform_on(*k)?;
    let rep = check_b_suite_b4_only(provider, pair, k, &nu, params)?;
    Ok(rep)
}

fn check_b_suite_b4_only<P: PropagatorProvider + ?Sized>(
    provider: &P,
    pair: &WeightPair,
    k: &SmallSet,
    _nu: &MinorizationMeasure,
    params: &BSuiteParams,
) -> Result<Vec<f64>> {
    let m = params.time_samples.max(1);
    let h = params.tau / m as f64;
    let psi = &pair.psi.values;
    let mut chains: Vec<(Array1<f64>, f64)> = (0..m).map(|_| (psi.clone(), 0.0)).collect();
    let mut series = Vec::with_capacity(params.n_max);
    for _ in 0..params.n_max {
        for (j, (f, log_scale)) in chains.iter_mut().enumerate() {
            let s = params.s0 + j as f64 * h;
            let mut g = chain_apply(provider, f, s, m, h)?;
            let top = g.iter().copied().fold(0.0, f64::max);
            g /= top;
            *log_scale += top.ln();
            *f = g;
        }
        let (ref f0, l0) = chains[0];
        let mut r: f64 = 0.0;
        for (f, l) in &chains {
            for i in k.indices() {
                r = r.max((l0 - l).exp() * f0[i] / f[i]);
            }
        }
        series.push(r);
    }
    Ok(series)
}

/// Probability measure `σ_{x,y}` on `[s₀, s₀+τ]` with its constant.
#[derive(Debug, Clone, PartialEq)]
pub enum B5Sigma {
    /// `σ = δ_t`.
    Point { t: f64, c: f64 },
    /// Density sampled on uniform nodes of its support, normalized.
    Density {
        c: f64,
        nodes: Vec<f64>,
        density: Vec<f64>,
    },
}

impl B5Sigma {
    pub fn c(&self) -> f64 {
        match self {
            B5Sigma::Point { c, .. } | B5Sigma::Density { c, .. } => *c,
        }
    }

    /// Density at `u` (linear between nodes, zero outside the support).
    pub fn density(&self, u: f64) -> f64 {
        match self {
            B5Sigma::Point { .. } => 0.0,
            B5Sigma::Density { nodes, density, .. } => {
                let (a, b) = (nodes[0], nodes[nodes.len() - 1]);
                if u < a || u > b {
                    return 0.0;
                }
                let h = (b - a) / (nodes.len() - 1) as f64;
                let r = (u - a) / h;
                let j = (r.floor() as usize).min(nodes.len() - 2);
                let w = r - j as f64;
                density[j] * (1.0 - w) + density[j + 1] * w
            }
        }
    }
}

/// `exp ∫_{τ₀}^{τ₁} a(τ', z + τ' − τ₀) dτ'` by composite Simpson.
fn path_weight(model: &SMModel, tau0: f64, tau1: f64, z: f64) -> f64 {
    if tau1 <= tau0 {
        return 1.0;
    }
    let n = 32;
    let h = (tau1 - tau0) / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let tau = tau0 + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * model.fitness.value(tau, z + tau - tau0);
    }
    (acc * h / 3.0).exp()
}

fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

/// Depth-0 or depth-1 member of the induction families.
///
/// Depth 1: mutate once at `τ` from the characteristic of `x`, then ride the
/// characteristic that reaches `y` at time `u`. The density is
/// `g(u) = κ₀ ∫_s^u E(s,τ; x) E(τ,u; y−u+τ) dτ` on the `u`-window
/// `|y − u − x + s| < ε`, and `c = ∫ g`.
pub fn b5_sigma(model: &SMModel, x: f64, y: f64, s0: f64, tau: f64, depth: u32) -> Result<B5Sigma> {
    let t = s0 + tau;
    match depth {
        0 => {
            if (y - (x + tau)).abs() > 1e-12 * (1.0 + y.abs()) {
                return Err(Error::Inapplicable(format!(
                    "depth 0 needs y = x + τ, got x = {x}, y = {y}, τ = {tau}"
                )));
            }
            Ok(B5Sigma::Point {
                t,
                c: path_weight(model, s0, t, x),
            })
        }
        1 => {
            let eps = model.kernel.eps();
            let lo = (s0 + y - x - eps).max(s0);
            let hi = (s0 + y - x + eps).min(t);
            if !(hi > lo) {
                return Err(Error::Inapplicable(format!(
                    "no mutation time links x = {x} to y = {y} within one jump"
                )));
            }
            let kappa0 = model.kernel.kappa0();
            let nu = 128;
            let hu = (hi - lo) / nu as f64;
            let nodes: Vec<f64> = (0..=nu).map(|k| lo + k as f64 * hu).collect();
            let raw: Vec<f64> = nodes
                .iter()
                .map(|&u| {
                    if u <= s0 {
                        return 0.0;
                    }
                    let nt = 32;
                    let ht = (u - s0) / nt as f64;
                    let wts = simpson_weights(nt, ht);
                    kappa0
                        * (0..=nt)
                            .map(|k| {
                                let tt = s0 + k as f64 * ht;
                                wts[k]
                                    * path_weight(model, s0, tt, x)
                                    * path_weight(model, tt, u, y - u + tt)
                            })
                            .sum::<f64>()
                })
                .collect();
            let c: f64 = simpson_weights(nu, hu)
                .iter()
                .zip(&raw)
                .map(|(w, g)| w * g)
                .sum();
            if !(c > 0.0) {
                return Err(Error::Positivity("depth-1 constant vanished".into()));
            }
            Ok(B5Sigma::Density {
                c,
                nodes,
                density: raw.iter().map(|g| g / c).collect(),
            })
        }
        _ => Err(Error::Unsupported(format!(
            "induction depth {depth}; only 0 and 1 are implemented"
        ))),
    }
}

/// B5 on hat basis functions for sampled `x, y ∈ K`.
///
/// `u`-integrals use the lattice of `provider`, with the sampled density
/// renormalized to unit mass on that lattice.
pub fn check_b5_sm(
    provider: &LatticeProvider<SMModel>,
    pair: &WeightPair,
    k: &SmallSet,
    s0: f64,
    tau: f64,
    n_points: usize,
    depth: u32,
) -> Result<CheckRecord> {
    let model = provider.model();
    let grid = model.grid;
    check_pair(&grid, pair)?;
    let n = grid.n_nodes();
    let dt = provider.dt();
    let n_steps = (tau / dt).round() as usize;
    if ((n_steps as f64) * dt - tau).abs() > 1e-9 * tau {
        return Err(invalid("tau", "must be a whole number of lattice steps"));
    }
    let t = s0 + tau;
    let m = n_points.max(1);
    let pts: Vec<usize> = if m == 1 || k.len() == 1 {
        vec![(k.i_lo + k.i_hi) / 2]
    } else {
        (0..m)
            .map(|a| k.i_lo + (a * (k.len() - 1)) / (m - 1))
            .collect()
    };
    let mut ys = pts.clone();
    ys.dedup();

    // Rows y of every intermediate M_{u,t} from a single backward sweep.
    let mut rows: Vec<Vec<Array1<f64>>> = vec![Vec::new(); n_steps + 1];
    rows[n_steps] = ys
        .iter()
        .map(|&y| {
            let mut e = Array1::zeros(n);
            e[y] = 1.0;
            e
        })
        .collect();
    let full = assemble_steps_visit(model, s0, t, n_steps, provider.method(), |kk, buf| {
        rows[kk] = ys
            .iter()
            .map(|&y| Array1::from(buf[y * n..(y + 1) * n].to_vec()))
            .collect();
    })?;
    let psi = &pair.psi.values;

    let mut d_min = f64::INFINITY;
    let mut rel_margin = f64::INFINITY;
    let mut c_min = f64::INFINITY;
    for &xi in &pts {
        for (yk, &yi) in ys.iter().enumerate() {
            let sigma = b5_sigma(model, grid.node(xi), grid.node(yi), s0, tau, depth)?;
            // Lattice weights of σ.
            let weights: Vec<(usize, f64)> = match &sigma {
                B5Sigma::Point { .. } => vec![(n_steps, 1.0)],
                B5Sigma::Density { .. } => {
                    let mut w: Vec<(usize, f64)> = (0..=n_steps)
                        .map(|kk| {
                            let u = s0 + kk as f64 * dt;
                            let tw = if kk == 0 || kk == n_steps { 0.5 } else { 1.0 };
                            (kk, tw * dt * sigma.density(u))
                        })
                        .filter(|&(_, w)| w > 0.0)
                        .collect();
                    let tot: f64 = w.iter().map(|p| p.1).sum();
                    if !(tot > 0.0) {
                        return Err(Error::Inapplicable(
                            "σ support narrower than the time lattice".into(),
                        ));
                    }
                    for p in &mut w {
                        p.1 /= tot;
                    }
                    w
                }
            };
            let mut rhs = Array1::<f64>::zeros(n);
            for &(kk, w) in &weights {
                rhs.scaled_add(w / psi[yi], &rows[kk][yk]);
            }
            let lhs = full.matrix.row(xi).mapv(|v| v / psi[xi]);
            let d_theory = sigma.c() * psi[yi] / psi[xi];
            c_min = c_min.min(sigma.c());
            let mut d_xy = f64::INFINITY;
            for j in 0..n {
                if rhs[j] > 0.0 {
                    d_xy = d_xy.min(lhs[j] / rhs[j]);
                }
            }
            d_min = d_min.min(d_xy);
            rel_margin = rel_margin.min(d_xy / d_theory - 1.0);
        }
    }
    Ok(CheckRecord::new(
        "B5",
        &[
            ("d_B5", d_min),
            ("c_xy_min", c_min),
            ("depth", depth as f64),
        ],
        rel_margin,
        d_min > 0.0 && rel_margin >= 0.0,
    )
    .with_note("hat basis; margin = min d_found/d_candidate − 1"))
}

/// Exact semiflow `M_{s,t}f(x) = f(x + t − s) e^{(t−s) sin(x − s)}` at a point.
pub fn sin_model_point(s: f64, t: f64, f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    f(x + t - s) * ((t - s) * (x - s).sin()).exp()
}

/// `M_{s,t} f` at the grid nodes.
pub fn sin_model_exact(
    grid: SpaceGrid,
    s: f64,
    t: f64,
    f: &dyn Fn(f64) -> f64,
) -> DiscreteFunction {
    DiscreteFunction::from_fn(grid, |x| sin_model_point(s, t, f, x))
}

/// `e^{kT (sin(x−s) − sin(x−u))}`.
pub fn sin_b4_ratio(x: f64, s: f64, u: f64, k: u32, period: f64) -> f64 {
    (k as f64 * period * ((x - s).sin() - (x - u).sin())).exp()
}

/// Grid matrix of the sin semiflow: linear interpolation at `x + t − s`.
///
/// With `wrap` the shifted point is reduced modulo the grid length (exact for
/// test functions with that period); otherwise values beyond the grid are
/// extended as constants.
pub fn sin_model_propagator(grid: SpaceGrid, s: f64, t: f64, wrap: bool) -> Result<Propagator> {
    if t < s {
        return Err(Error::TimeOrder { s, t });
    }
    let n = grid.n_nodes();
    let len = grid.x_max() - grid.x_min();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let x = grid.node(i);
        let w = ((t - s) * (x - s).sin()).exp();
        let mut y = x + t - s;
        if wrap {
            y = grid.x_min() + (y - grid.x_min()).rem_euclid(len);
        }
        let (j, th) = grid.locate(y);
        m[[i, j]] += w * (1.0 - th);
        if th > 0.0 {
            m[[i, j + 1]] += w * th;
        }
    }
    Propagator::from_matrix(grid, s, t, m)
}

/// Provider for the sin semiflow.
#[derive(Debug, Clone, Copy)]
pub struct SinModelProvider {
    pub grid: SpaceGrid,
    pub wrap: bool,
}

impl PropagatorProvider for SinModelProvider {
    fn grid(&self) -> SpaceGrid {
        self.grid
    }

    fn propagator(&self, a: f64, b: f64) -> Result<Arc<Propagator>> {
        Ok(Arc::new(sin_model_propagator(self.grid, a, b, self.wrap)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{Method, StepScheme};
    use crate::selection_mutation::{FitnessField, MutationKernel};
    use ndarray::array;
    use std::f64::consts::PI;

    fn grid(n: usize) -> SpaceGrid {
        SpaceGrid::new(0.0, 1.0, n).unwrap()
    }

    fn ones(g: SpaceGrid) -> WeightPair {
        WeightPair::new(
            DiscreteFunction::constant(g, 1.0),
            DiscreteFunction::constant(g, 1.0),
        )
        .unwrap()
    }

    fn prop(g: SpaceGrid, m: Array2<f64>) -> Propagator {
        Propagator::from_matrix(g, 0.0, 1.0, m).unwrap()
    }

    /// Deterministic pseudo-random values in `[0, 1)`.
    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn a1_a2_on_multiples_of_identity() {
        let g = grid(5);
        let pair = WeightPair::new(
            DiscreteFunction::from_fn(g, |x| 1.0 + x),
            DiscreteFunction::from_fn(g, |x| 0.5 + 0.2 * x),
        )
        .unwrap();
        let k = SmallSet::new(g, 1, 2).unwrap();
        let p = prop(g, Array2::eye(5) * 0.6);
        let a1 = check_a1(&p, &pair, &k).unwrap();
        assert!((a1.alpha - 0.6).abs() < 1e-12 && a1.theta == 0.0 && a1.pass);
        let a2 = check_a2(&p, &pair, 0.5).unwrap();
        assert!((a2.beta - 0.6).abs() < 1e-12 && a2.pass);
        let id = prop(g, Array2::eye(5));
        assert!(!check_a1(&id, &pair, &k).unwrap().pass);
        // Scaling ψ leaves β unchanged.
        let pair2 = WeightPair::new(pair.v.clone(), pair.psi.scaled(0.5)).unwrap();
        let m = array![
            [0.5, 0.2, 0.1, 0.0, 0.0],
            [0.1, 0.6, 0.2, 0.1, 0.0],
            [0.0, 0.3, 0.4, 0.2, 0.1],
            [0.0, 0.1, 0.2, 0.5, 0.3],
            [0.1, 0.0, 0.1, 0.3, 0.6]
        ];
        let p = prop(g, m);
        let b1 = check_a2(&p, &pair, 0.0).unwrap().beta;
        let b2 = check_a2(&p, &pair2, 0.0).unwrap().beta;
        assert!((b1 - b2).abs() < 1e-14);
        let t1 = check_a1(&p, &pair, &k).unwrap().theta;
        let t2 = check_a1(&p, &pair2, &k).unwrap().theta;
        assert!((t2 - 2.0 * t1).abs() < 1e-12);
    }

    #[test]
    fn a3_rank_one_and_identity() {
        let g = grid(4);
        let pair = ones(g);
        let k = SmallSet::new(g, 1, 2).unwrap();
        let row = array![0.0, 0.3, 0.7, 0.0];
        let mut m = Array2::zeros((4, 4));
        for i in 0..4 {
            m.row_mut(i).assign(&row);
        }
        let nu = MinorizationMeasure::new(k, row.clone()).unwrap();
        let a3 = check_a3(&prop(g, m), &pair, &k, &nu).unwrap();
        assert!((a3.c - 1.0).abs() < 1e-12 && a3.pass);
        let nu = MinorizationMeasure::uniform_on(k).unwrap();
        let a3 = check_a3(&prop(g, Array2::eye(4)), &pair, &k, &nu).unwrap();
        assert_eq!(a3.c, 0.0);
        assert!(!a3.pass);
    }

    #[test]
    fn a3_certifies_random_functions() {
        let g = grid(6);
        let mut seed = 7;
        let m = Array2::from_shape_fn((6, 6), |_| 0.1 + lcg(&mut seed));
        let p = prop(g, m);
        let pair = WeightPair::normalized(
            DiscreteFunction::from_fn(g, |x| 1.0 + x * x),
            DiscreteFunction::from_fn(g, |x| 1.0 + 0.5 * x),
        )
        .unwrap();
        let k = SmallSet::new(g, 1, 4).unwrap();
        let nu = MinorizationMeasure::uniform_on(k).unwrap();
        let a3 = check_a3(&p, &pair, &k, &nu).unwrap();
        assert!(a3.pass);
        let ppsi = p.matrix.dot(&pair.psi.values);
        for _ in 0..20 {
            let f = Array1::from_shape_fn(6, |_| lcg(&mut seed));
            let pf = p.matrix.dot(&(&f * &pair.psi.values));
            let lhs = k
                .indices()
                .map(|i| pf[i] / ppsi[i])
                .fold(f64::INFINITY, f64::min);
            let rhs = a3.c * nu.weights.dot(&f);
            assert!(lhs >= rhs * (1.0 - 1e-12));
        }
    }

    #[test]
    fn a4_identity_and_eigen_cases() {
        let g = grid(4);
        let pair = ones(g);
        let k = SmallSet::new(g, 0, 3).unwrap();
        let nu = MinorizationMeasure::uniform_on(k).unwrap();
        let a4 = check_a4(&prop(g, Array2::eye(4)), &pair, &k, &nu, 6).unwrap();
        assert!((a4.d - 1.0).abs() < 1e-15 && a4.pass);
        let a4 = check_a4(&prop(g, Array2::eye(4) * 3.0), &pair, &k, &nu, 6).unwrap();
        assert!((a4.d - 1.0).abs() < 1e-14 && a4.slope.abs() < 1e-12);
    }

    #[test]
    fn sin_ratio_examples() {
        assert_eq!(sin_b4_ratio(0.3, 1.0, 1.0, 5, 2.0 * PI), 1.0);
        let r = sin_b4_ratio(PI / 2.0, 0.0, PI, 1, 2.0 * PI);
        assert!((r / (4.0 * PI).exp() - 1.0).abs() < 1e-12);
        let q1 =
            sin_b4_ratio(0.7, 0.1, 2.0, 3, 2.0 * PI) / sin_b4_ratio(0.7, 0.1, 2.0, 2, 2.0 * PI);
        let q2 =
            sin_b4_ratio(0.7, 0.1, 2.0, 6, 2.0 * PI) / sin_b4_ratio(0.7, 0.1, 2.0, 5, 2.0 * PI);
        assert!((q1 / q2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sin_composition_matches_ratio() {
        let per = 2.0 * PI;
        let psi = |_: f64| 1.0;
        let compose = |s: f64, k: u32, x: f64| {
            let mut f: Box<dyn Fn(f64) -> f64> = Box::new(psi);
            for j in (0..k).rev() {
                let a = s + j as f64 * per;
                let prev = f;
                f = Box::new(move |z| sin_model_point(a, a + per, &*prev, z));
            }
            f(x)
        };
        for k in 1..=8u32 {
            for &(x, s, u) in &[(0.4, 0.0, 1.0), (2.0, 0.5, 3.0)] {
                let r = compose(s, k, x) / compose(u, k, x);
                let exact = sin_b4_ratio(x, s, u, k, per);
                assert!((r / exact - 1.0).abs() < 1e-10, "k={k}: {r} vs {exact}");
            }
        }
    }

    #[test]
    fn sin_matrix_matches_closed_form_on_node_shifts() {
        let g = SpaceGrid::new(0.0, 2.0 * PI, 33).unwrap();
        let f = |x: f64| 2.0 + x.cos();
        let fv = DiscreteFunction::from_fn(g, f);
        for &(s, t) in &[(0.0, PI / 4.0), (0.3, 0.3 + 3.0 * PI / 2.0)] {
            let p = sin_model_propagator(g, s, t, true).unwrap();
            let got = p.matrix.dot(&fv.values);
            let exact = sin_model_exact(g, s, t, &f);
            for i in 0..g.n_nodes() {
                assert!((got[i] - exact.values[i]).abs() < 1e-10 * exact.values[i].abs());
            }
        }
    }

    #[test]
    fn sin_model_fails_b4_and_a4() {
        let g = SpaceGrid::new(0.0, 2.0 * PI, 33).unwrap();
        let prov = SinModelProvider {
            grid: g,
            wrap: true,
        };
        let pair = ones(g);
        let k = SmallSet::from_interval(g, 0.5, 2.5).unwrap();
        let nu = MinorizationMeasure::uniform_on(k).unwrap();
        let params = BSuiteParams {
            s0: 0.0,
            tau: 2.0 * PI,
            n_max: 6,
            time_samples: 4,
        };
        let rep = check_b_suite(&prov, &pair, &k, &nu, &params).unwrap();
        let b4 = rep.get("B4").unwrap();
        assert!(
            !b4.pass && b4.constants["log_slope"] > 0.0,
            "{}",
            rep.to_table()
        );
        assert!(!rep.verdict);
        let p = prov.propagator(0.0, 2.0 * PI).unwrap();
        let a4 = check_a4(&p, &pair, &k, &nu, 6).unwrap();
        assert!(!a4.pass && a4.slope < 0.0);
    }

    #[test]
    fn autonomous_b4_ratio_is_one() {
        let g = grid(5);
        let m = array![
            [0.5, 0.2, 0.1, 0.0, 0.0],
            [0.1, 0.6, 0.2, 0.1, 0.0],
            [0.0, 0.3, 0.4, 0.2, 0.1],
            [0.0, 0.1, 0.2, 0.5, 0.3],
            [0.1, 0.0, 0.1, 0.3, 0.6]
        ];
        struct Auto(Propagator);
        impl PropagatorProvider for Auto {
            fn grid(&self) -> SpaceGrid {
                self.0.grid
            }
            fn propagator(&self, a: f64, b: f64) -> Result<Arc<Propagator>> {
                Ok(Arc::new(Propagator {
                    s: a,
                    t: b,
                    ..self.0.clone()
                }))
            }
        }
        let prov = Auto(prop(g, m));
        let pair = ones(g);
        let k = SmallSet::new(g, 1, 3).unwrap();
        let params = BSuiteParams {
            s0: 0.0,
            tau: 1.0,
            n_max: 4,
            time_samples: 1,
        };
        let series = b4_series(&prov, &pair, &k, &params).unwrap();
        assert!(series.iter().all(|r| (r - 1.0).abs() < 1e-14));
    }

    #[test]
    fn small_set_and_measure_validation() {
        let g = grid(11);
        assert!(SmallSet::new(g, 4, 3).is_err());
        let k = SmallSet::from_interval(g, 0.25, 0.55).unwrap();
        assert_eq!((k.i_lo, k.i_hi), (3, 5));
        let nu = MinorizationMeasure::uniform_on(k).unwrap();
        assert!((nu.weights.sum() - 1.0).abs() < 1e-12);
        assert!(nu
            .weights
            .iter()
            .enumerate()
            .all(|(j, &w)| w == 0.0 || k.contains(j)));
        let mut w = Array1::zeros(11);
        w[0] = 1.0;
        assert!(MinorizationMeasure::new(k, w).is_err());
    }

    fn sm_model() -> SMModel {
        let g = SpaceGrid::new(-6.0, 6.0, 241).unwrap();
        SMModel::new(
            FitnessField::PowerConfine {
                a0: 1.0,
                a1: 0.5,
                p: 2.0,
                phi: 0.5,
                period: 1.0,
            },
            MutationKernel::UniformWindow { q: 0.5, eps: 1.0 },
            g,
        )
        .unwrap()
    }

    #[test]
    fn sigma_depths() {
        let m = SMModel::new(
            FitnessField::Constant {
                value: 0.0,
                period: 1.0,
            },
            MutationKernel::UniformWindow { q: 0.0, eps: 1.0 },
            SpaceGrid::new(-3.0, 3.0, 61).unwrap(),
        )
        .unwrap();
        let s = b5_sigma(&m, 0.2, 1.2, 0.0, 1.0, 0).unwrap();
        assert_eq!(s, B5Sigma::Point { t: 1.0, c: 1.0 });
        assert!(b5_sigma(&m, 0.2, 0.5, 0.0, 1.0, 0).is_err());
        assert!(matches!(
            b5_sigma(&m, 0.0, 0.0, 0.0, 1.0, 2),
            Err(Error::Unsupported(_))
        ));

        let m = sm_model();
        let s = b5_sigma(&m, -0.3, 0.2, 0.0, 1.0, 1).unwrap();
        if let B5Sigma::Density { nodes, density, c } = &s {
            assert!(*c > 0.0);
            let h = nodes[1] - nodes[0];
            let mass: f64 = simpson_weights(nodes.len() - 1, h)
                .iter()
                .zip(density)
                .map(|(w, d)| w * d)
                .sum();
            assert!((mass - 1.0).abs() < 1e-12);
        } else {
            panic!("expected a density");
        }
    }

    #[test]
    fn b5_depth_one_holds_on_grid() {
        let m = sm_model();
        let scheme = StepScheme::new(1.0, Method::Euler, 0.9).unwrap();
        let prov = LatticeProvider::from_scheme(m, &scheme, 1.0, 4).unwrap();
        let psi = DiscreteFunction::from_fn(prov.grid(), |x| (-x * x / 4.0).exp());
        let pair =
            WeightPair::normalized(DiscreteFunction::constant(prov.grid(), 1.0), psi).unwrap();
        let k = SmallSet::from_interval(prov.grid(), -0.4, 0.4).unwrap();
        let rec = check_b5_sm(&prov, &pair, &k, 0.0, 1.0, 3, 1).unwrap();
        assert!(rec.pass, "{rec:?}");
    }

    #[test]
    fn table_lists_every_check() {
        let mut rep = HarrisReport::default();
        rep.push(CheckRecord::new("A1", &[("alpha", 0.5)], 0.0, true));
        rep.push(CheckRecord::new("A2", &[("beta", 0.4)], -1.0, false));
        let t = rep.to_table();
        assert!(t.contains("A1") && t.contains("FAIL") && t.contains("overall: FAIL"));
        assert!(!rep.verdict);
    }
}
