//! Period-map eigenelements, their extension to a periodic Floquet family,
//! and empirical decay-rate estimation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure_space::{
    pairing, weighted_sup_norm, weighted_tv_norm, DiscreteFunction, DiscreteMeasure,
};
use crate::propagator::{Propagator, PropagatorProvider};

/// `(Λ, h, γ)` with `‖h‖_{B(V)} = ⟨γ, h⟩ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMapEigen {
    pub big_lambda: f64,
    pub h: DiscreteFunction,
    pub gamma: DiscreteMeasure,
    /// `‖Ph − Λh‖_{B(V)}`.
    pub residual: f64,
    pub iterations: usize,
}

fn normalize_fn(f: &DiscreteFunction, v: &DiscreteFunction) -> Result<(DiscreteFunction, f64)> {
    let n = weighted_sup_norm(f, v)?;
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Positivity(format!("iterate collapsed (norm {n})")));
    }
    Ok((f.scaled(1.0 / n), n))
}

fn normalize_measure(mu: &DiscreteMeasure, v: &DiscreteFunction) -> Result<(DiscreteMeasure, f64)> {
    let n = weighted_tv_norm(mu, v)?;
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Positivity(format!(
            "measure iterate collapsed (norm {n})"
        )));
    }
    Ok((mu.scaled(1.0 / n), n))
}

/// Power iteration on one period map, started from `V`.
pub fn power_iterate(
    p: &Propagator,
    v: &DiscreteFunction,
    tol: f64,
    max_iter: usize,
) -> Result<PeriodMapEigen> {
    p.grid.check_same(&v.grid)?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    if v.min() <= 0.0 {
        return Err(Error::Positivity("weight V must be > 0".into()));
    }
    let (mut f, _) = normalize_fn(v, v)?;
    let mut lam = 0.0;
    let mut change = f64::INFINITY;
    let mut it_h = 0;
    while it_h < max_iter {
        it_h += 1;
        let (next, n) = normalize_fn(&p.apply_dual(&f)?, v)?;
        let diff = DiscreteFunction {
            grid: v.grid,
            values: &next.values - &f.values,
        };
        change = weighted_sup_norm(&diff, v)?;
        f = next;
        lam = n;
        if change < tol {
            break;
        }
    }
    if change >= tol {
        return Err(Error::NoConvergence {
            iterations: it_h,
            residual: change,
        });
    }

    let mut mu = DiscreteMeasure {
        grid: v.grid,
        masses: &v.grid.trapezoid_weights() / &v.values,
    };
    mu = normalize_measure(&mu, v)?.0;
    let mut change_g = f64::INFINITY;
    let mut it_g = 0;
    while it_g < max_iter {
        it_g += 1;
        let (next, _) = normalize_measure(&p.push_forward(&mu)?, v)?;
        let diff = DiscreteMeasure {
            grid: v.grid,
            masses: &next.masses - &mu.masses,
        };
        change_g = weighted_tv_norm(&diff, v)?;
        mu = next;
        if change_g < tol {
            break;
        }
    }
    if change_g >= tol {
        return Err(Error::NoConvergence {
            iterations: it_g,
            residual: change_g,
        });
    }
    let pair = pairing(&mu, &f)?;
    if !(pair > 0.0) {
        return Err(Error::Positivity(format!("⟨γ, h⟩ = {pair}")));
    }
    let gamma = mu.scaled(1.0 / pair);
    if let Some((i, &x)) = f.values.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::Positivity(format!(
            "eigenfunction h[{i}] = {x} is not > 0"
        )));
    }
    let ph = p.apply_dual(&f)?;
    let res = DiscreteFunction {
        grid: v.grid,
        values: &ph.values - &(&f.values * lam),
    };
    Ok(PeriodMapEigen {
        big_lambda: lam,
        residual: weighted_sup_norm(&res, v)?,
        h: f,
        gamma,
        iterations: it_h.max(it_g),
    })
}

/// Samples of `(h_t, γ_t)` on `t_k = s₀ + kT/(n−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetFamily {
    pub lambda_f: f64,
    pub s0: f64,
    pub period: f64,
    pub times: Vec<f64>,
    pub h_samples: Vec<DiscreteFunction>,
    pub gamma_samples: Vec<DiscreteMeasure>,
    /// `‖h_t‖_{B(V)}` before normalization. The eigen-identities hold for the
    /// unnormalized family, so `⟨μ, h_s⟩ γ_t` needs the factor `a_s / a_t`.
    pub h_norms: Vec<f64>,
    pub v: DiscreteFunction,
}

impl FloquetFamily {
    /// Index of the sample nearest to `t` after periodic wrap.
    pub fn sample_index(&self, t: f64) -> usize {
        let m = self.times.len() - 1;
        let step = self.period / m as f64;
        let tau = (t - self.s0).rem_euclid(self.period);
        (tau / step).round() as usize % m
    }

    pub fn h_at(&self, t: f64) -> &DiscreteFunction {
        &self.h_samples[self.sample_index(t)]
    }

    pub fn gamma_at(&self, t: f64) -> &DiscreteMeasure {
        &self.gamma_samples[self.sample_index(t)]
    }

    pub fn h_norm_at(&self, t: f64) -> f64 {
        self.h_norms[self.sample_index(t)]
    }

    /// `‖h_{s₀+T} − h_{s₀}‖_{B(V)}` and `‖γ_{s₀+T} − γ_{s₀}‖_{M(V)}`.
    pub fn endpoint_mismatch(&self) -> Result<(f64, f64)> {
        let last = self.times.len() - 1;
        let dh = DiscreteFunction {
            grid: self.v.grid,
            values: &self.h_samples[last].values - &self.h_samples[0].values,
        };
        let dg = DiscreteMeasure {
            grid: self.v.grid,
            masses: &self.gamma_samples[last].masses - &self.gamma_samples[0].masses,
        };
        Ok((
            weighted_sup_norm(&dh, &self.v)?,
            weighted_tv_norm(&dg, &self.v)?,
        ))
    }
}

/// Pushes `h` backward from `s₀ + T` and `γ` forward from `s₀`, with the
/// `e^{−λ_F Δ}` discount, then normalizes every sample.
pub fn extend_family<P: PropagatorProvider + ?Sized>(
    provider: &P,
    eig: &PeriodMapEigen,
    v: &DiscreteFunction,
    s0: f64,
    period: f64,
    n_samples: usize,
) -> Result<FloquetFamily> {
    if n_samples < 2 {
        return Err(invalid("n_samples", "at least 2 family samples"));
    }
    if !(period > 0.0) {
        return Err(invalid("period", "must be > 0"));
    }
    let lambda_f = eig.big_lambda.ln() / period;
    let m = n_samples - 1;
    let times: Vec<f64> = (0..=m).map(|k| s0 + period * k as f64 / m as f64).collect();

    let mut h_raw = vec![eig.h.clone(); n_samples];
    for k in (0..m).rev() {
        let p = provider.propagator(times[k], times[k + 1])?;
        let d = (-lambda_f * (times[k + 1] - times[k])).exp();
        h_raw[k] = p.apply_dual(&h_raw[k + 1])?.scaled(d);
    }
    let mut g_raw = vec![eig.gamma.clone(); n_samples];
    for k in 0..m {
        let p = provider.propagator(times[k], times[k + 1])?;
        let d = (-lambda_f * (times[k + 1] - times[k])).exp();
        g_raw[k + 1] = p.push_forward(&g_raw[k])?.scaled(d);
    }

    let mut h_samples = Vec::with_capacity(n_samples);
    let mut gamma_samples = Vec::with_capacity(n_samples);
    let mut h_norms = Vec::with_capacity(n_samples);
    for (h, g) in h_raw.iter().zip(g_raw.iter()) {
        let (h, a) = normalize_fn(h, v)?;
        h_norms.push(a);
        let pair = pairing(g, &h)?;
        if !(pair > 0.0) {
            return Err(Error::Positivity(format!("⟨γ_t, h_t⟩ = {pair}")));
        }
        gamma_samples.push(g.scaled(1.0 / pair));
        h_samples.push(h);
    }
    Ok(FloquetFamily {
        lambda_f,
        s0,
        period,
        times,
        h_samples,
        gamma_samples,
        h_norms,
        v: v.clone(),
    })
}

/// Distances below `NOISE_FLOOR_REL · max d` sit at the eigen-solver's
/// accuracy and are kept out of the fit.
pub const NOISE_FLOOR_REL: f64 = 1e-8;
pub const CONVERGED_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub t: f64,
    pub distance: f64,
    /// `distance / ‖μ₀‖_{M(V)}`.
    pub rescaled_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub c_hat: f64,
    /// `+∞` when every distance is below `CONVERGED_FLOOR`.
    pub omega_hat: f64,
    pub already_converged: bool,
    pub distances: Vec<DistancePoint>,
    /// Indices of the points used by the fit.
    pub fit_window: Vec<usize>,
    /// `e^{−λ_F(t−s)} μ₀ M_{s,t}` at the horizon, rescaled so `⟨·, h_t⟩ = 1`.
    pub final_profile: DiscreteMeasure,
}

impl ConvergenceRecord {
    /// Post-transient distances above the noise floor never increase.
    pub fn monotone_after_transient(&self) -> bool {
        self.fit_window
            .windows(2)
            .all(|w| self.distances[w[1]].distance <= self.distances[w[0]].distance)
    }
}

/// Least-squares line through `(x, y)`: `(intercept, slope)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

pub fn convergence_rate<P: PropagatorProvider + ?Sized>(
    provider: &P,
    family: &FloquetFamily,
    mu0: &DiscreteMeasure,
    s: f64,
    horizon: f64,
    n_checkpoints: usize,
) -> Result<ConvergenceRecord> {
    if n_checkpoints < 2 {
        return Err(invalid("n_checkpoints", "at least 2 checkpoints"));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be > 0"));
    }
    let v = &family.v;
    let norm0 = weighted_tv_norm(mu0, v)?;
    if !(norm0 > 0.0) {
        return Err(invalid("mu0", "initial measure must be nonzero"));
    }
    let mass = pairing(mu0, family.h_at(s))? * family.h_norm_at(s);
    let lam = family.lambda_f;
    let mut mu = mu0.clone();
    let mut prev = s;
    let mut distances = Vec::with_capacity(n_checkpoints);
    for k in 1..=n_checkpoints {
        let t = s + horizon * k as f64 / n_checkpoints as f64;
        let p = provider.propagator(prev, t)?;
        mu = p.push_forward(&mu)?.scaled((-lam * (t - prev)).exp());
        prev = t;
        let target = family.gamma_at(t).scaled(mass / family.h_norm_at(t));
        let diff = DiscreteMeasure {
            grid: v.grid,
            masses: &mu.masses - &target.masses,
        };
        let d = weighted_tv_norm(&diff, v)?;
        distances.push(DistancePoint {
            t,
            distance: d,
            rescaled_distance: d / norm0,
        });
    }
    let final_pair = pairing(&mu, family.h_at(prev))?;
    let final_profile = if final_pair > 0.0 {
        mu.scaled(1.0 / final_pair)
    } else {
        mu.clone()
    };

    let cut = n_checkpoints / 5;
    let d_max = distances.iter().map(|p| p.distance).fold(0.0, f64::max);
    let floor = (NOISE_FLOOR_REL * d_max).max(CONVERGED_FLOOR);
    let fit_window: Vec<usize> = (cut..n_checkpoints)
        .filter(|&i| distances[i].distance >= floor)
        .collect();
    if d_max < CONVERGED_FLOOR || fit_window.len() < 2 {
        return Ok(ConvergenceRecord {
            c_hat: d_max,
            omega_hat: f64::INFINITY,
            already_converged: true,
            distances,
            fit_window,
            final_profile,
        });
    }
    let xs: Vec<f64> = fit_window.iter().map(|&i| distances[i].t - s).collect();
    let ys: Vec<f64> = fit_window
        .iter()
        .map(|&i| distances[i].distance.ln())
        .collect();
    let (icpt, slope) = fit_line(&xs, &ys);
    Ok(ConvergenceRecord {
        c_hat: icpt.exp(),
        omega_hat: -slope,
        already_converged: false,
        distances,
        fit_window,
        final_profile,
    })
}
