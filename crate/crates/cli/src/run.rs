//! Experiment dispatch and artifact persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use floquet_core::growth_fragmentation::{
    doeblin_certificate_gf, doeblin_constants, gabriel_bounds, AffineFloquet, GFModel,
};
use floquet_core::harris::{
    b4_series, check_a4, check_b5_sm, sin_b4_ratio, sin_model_point, BSuiteParams, SinModelProvider,
};
use floquet_core::propagator::fmt_sig15;
use floquet_core::selection_mutation::{lyapunov_pair_sm, SMModel};
use floquet_core::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::*;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(#[from] floquet_core::Error),
}

pub type RunResult<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    #[serde(with = "nullable")]
    pub value: f64,
    pub pass: bool,
}

/// Exponential fit `d(t) ≈ c_hat e^{−omega_hat (t − s)}` of a distance series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub s: f64,
    #[serde(with = "nullable")]
    pub c_hat: f64,
    /// Null when the series was already converged.
    #[serde(with = "nullable")]
    pub omega_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub wall_time_s: f64,
    /// Artifact name to file name, relative to the report directory.
    pub outputs: BTreeMap<String, String>,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harris: Option<HarrisReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fits: BTreeMap<String, Fit>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn summary(&self) -> String {
        let w = self
            .verdicts
            .iter()
            .map(|v| v.criterion.chars().count())
            .max()
            .unwrap_or(0);
        let mut s = String::new();
        for v in &self.verdicts {
            let pad = w - v.criterion.chars().count();
            s += &format!(
                "  {}{}  {:>12.5e}  {}\n",
                v.criterion,
                " ".repeat(pad),
                v.value,
                if v.pass { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

/// Non-finite floats as JSON null.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// First 12 hex digits of the SHA-256 of the canonical config JSON.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn run_dir(cfg: &ScenarioConfig, out_root: &Path) -> PathBuf {
    let name: String = cfg
        .name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    out_root.join(format!("{name}-{}", config_hash(cfg)))
}

struct Artifacts {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
    verdicts: Vec<Verdict>,
    harris: Option<HarrisReport>,
    fits: BTreeMap<String, Fit>,
}

fn num(x: f64) -> String {
    fmt_sig15(x)
}

impl Artifacts {
    fn write(&mut self, name: &str, file: &str, body: &str) -> RunResult<()> {
        let path = self.dir.join(file);
        fs::write(&path, body).map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.outputs.insert(name.to_string(), file.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> RunResult<()> {
        let mut body = header.join(",");
        body.push('\n');
        for r in rows {
            body += &r.join(",");
            body.push('\n');
        }
        self.write(name, &format!("{name}.csv"), &body)
    }

    fn verdict(&mut self, criterion: impl Into<String>, value: f64, pass: bool) {
        self.verdicts.push(Verdict {
            criterion: criterion.into(),
            value,
            pass,
        });
    }

    fn harris(&mut self, rep: HarrisReport) -> RunResult<()> {
        for c in &rep.checks {
            self.verdict(c.check.clone(), c.margin, c.pass);
        }
        let rows: Vec<Vec<String>> = rep
            .checks
            .iter()
            .map(|c| vec![c.check.clone(), num(c.margin), c.pass.to_string()])
            .collect();
        self.csv("harris_checks", &hdr(&["check", "margin", "pass"]), &rows)?;
        self.harris = Some(rep);
        Ok(())
    }
}

fn hdr(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn grid_of(cfg: &ScenarioConfig) -> RunResult<SpaceGrid> {
    Ok(SpaceGrid::new(
        cfg.grid.x_min,
        cfg.grid.x_max,
        cfg.grid.n_nodes,
    )?)
}

fn scheme_of(cfg: &ScenarioConfig) -> RunResult<StepScheme> {
    let s = cfg.scheme;
    Ok(StepScheme::new(s.dt_max, s.method, s.cfl_safety)?)
}

enum Model {
    Gf(GFModel),
    Sm(SMModel),
    Sin { grid: SpaceGrid, period: f64 },
}

fn build(cfg: &ScenarioConfig) -> RunResult<Model> {
    let grid = grid_of(cfg)?;
    Ok(match &cfg.model {
        ModelConfig::GrowthFragmentation(p) => Model::Gf(GFModel::new(p.clone(), grid)?),
        ModelConfig::SelectionMutation { fitness, kernel } => {
            Model::Sm(SMModel::new(fitness.clone(), kernel.clone(), grid)?)
        }
        ModelConfig::SinExact { period } => Model::Sin {
            grid,
            period: *period,
        },
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Runs the experiment, writes its artifacts under `out_root` and returns the report.
pub fn run(cfg: &ScenarioConfig, out_root: &Path) -> RunResult<(RunReport, PathBuf)> {
    let t0 = Instant::now();
    let dir = run_dir(cfg, out_root);
    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut art = Artifacts {
        dir: dir.clone(),
        outputs: BTreeMap::new(),
        verdicts: Vec::new(),
        harris: None,
        fits: BTreeMap::new(),
    };
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    art.write("config", "config.json", &echo)?;

    let model = build(cfg)?;
    let sch = scheme_of(cfg)?;
    match (&cfg.experiment, model) {
        (ExperimentConfig::Floquet(k), Model::Gf(m)) => floquet_gf(m, &sch, k, &mut art)?,
        (ExperimentConfig::Floquet(k), Model::Sm(m)) => {
            let v = DiscreteFunction::constant(m.grid, 1.0);
            let per = m.period();
            let lam = floquet_family(m, v, per, &sch, k, &mut art)?;
            art.csv("eigen", &hdr(&["lambda_F_powerit"]), &[vec![num(lam)]])?;
            if let Some(e) = k.expected_lambda_f {
                art.verdict("lambda_F", lam, (lam - e).abs() <= k.expected_tol);
            }
        }
        (ExperimentConfig::HarrisA(k), Model::Gf(m)) => {
            let per = m.period() * k.k as f64;
            let p = assemble(&m, 0.0, per, &sch)?;
            let v = m.weight();
            let eig = power_iterate(&p, &v, k.tol, k.max_iter)?;
            let pair = WeightPair::normalized(v, eig.h)?;
            let set = SmallSet::from_interval(m.grid, k.small_set[0], k.small_set[1])?;
            let nu = nu_of(&k.nu, set, Some((&m, per)))?;
            harris_a(&p, &pair, &set, &nu, k.n_max, &mut art)?;
        }
        (ExperimentConfig::HarrisA(k), Model::Sm(m)) => {
            let per = m.period() * k.k as f64;
            let p = assemble(&m, 0.0, per, &sch)?;
            let pair = lyapunov_pair_sm(&m, k.x0, &sch)?;
            let set = SmallSet::from_interval(m.grid, k.small_set[0], k.small_set[1])?;
            let nu = nu_of(&k.nu, set, None)?;
            harris_a(&p, &pair, &set, &nu, k.n_max, &mut art)?;
        }
        (ExperimentConfig::HarrisB(k), Model::Gf(m)) => {
            let per = m.period();
            let prov = LatticeProvider::from_scheme(m.clone(), &sch, per, k.time_samples)?;
            let v = m.weight();
            let p = prov.propagator(k.s0, k.s0 + per)?;
            let eig = power_iterate(&p, &v, k.tol, k.max_iter)?;
            let pair = WeightPair::normalized(v, eig.h)?;
            let set = SmallSet::from_interval(m.grid, k.small_set[0], k.small_set[1])?;
            let nu = nu_of(&k.nu, set, Some((&m, k.tau.unwrap_or(per))))?;
            let params = b_params(k, per);
            let rep = check_b_suite(&prov, &pair, &set, &nu, &params)?;
            b4_trend(&prov, &pair, &set, &params, &mut art)?;
            art.harris(rep)?;
        }
        (ExperimentConfig::HarrisB(k), Model::Sm(m)) => {
            let per = m.period();
            let pair = lyapunov_pair_sm(&m, k.x0, &sch)?;
            let prov = LatticeProvider::from_scheme(m, &sch, per, k.time_samples)?;
            let set = SmallSet::from_interval(prov.grid(), k.small_set[0], k.small_set[1])?;
            let nu = nu_of(&k.nu, set, None)?;
            let params = b_params(k, per);
            let mut rep = check_b_suite(&prov, &pair, &set, &nu, &params)?;
            rep.push(check_b5_sm(
                &prov,
                &pair,
                &set,
                params.s0,
                params.tau,
                k.b5_points,
                k.b5_depth,
            )?);
            b4_trend(&prov, &pair, &set, &params, &mut art)?;
            art.harris(rep)?;
        }
        (ExperimentConfig::Convergence(k), Model::Gf(m)) => {
            let v = m.weight();
            let per = m.period();
            convergence(m, v, per, &sch, k, &mut art)?;
        }
        (ExperimentConfig::Convergence(k), Model::Sm(m)) => {
            let v = DiscreteFunction::constant(m.grid, 1.0);
            let per = m.period();
            convergence(m, v, per, &sch, k, &mut art)?;
        }
        (ExperimentConfig::Gabriel(k), Model::Gf(m)) => gabriel(&m, &sch, k, &mut art)?,
        (ExperimentConfig::Doeblin(k), Model::Gf(m)) => doeblin(&m, &sch, k, &mut art)?,
        (ExperimentConfig::CounterexampleB4(k), Model::Sin { grid, period }) => {
            counterexample(grid, period, k, &mut art)?
        }
        (e, _) => {
            return Err(floquet_core::Error::Unsupported(format!(
                "experiment {} on model {}",
                e.kind(),
                cfg.model.kind()
            ))
            .into())
        }
    }

    let report = RunReport {
        name: cfg.name.clone(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        wall_time_s: t0.elapsed().as_secs_f64(),
        outputs: art.outputs,
        verdicts: art.verdicts,
        harris: art.harris,
        fits: art.fits,
    };
    let path = dir.join("report.json");
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(&path, body).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok((report, path))
}

fn b_params(k: &HarrisBKnobs, per: f64) -> BSuiteParams {
    BSuiteParams {
        s0: k.s0,
        tau: k.tau.unwrap_or(per),
        n_max: k.n_max,
        time_samples: k.time_samples,
    }
}

fn nu_of(
    nu: &NuConfig,
    set: SmallSet,
    gf: Option<(&GFModel, f64)>,
) -> RunResult<MinorizationMeasure> {
    Ok(match *nu {
        NuConfig::Uniform => MinorizationMeasure::uniform_on(set)?,
        NuConfig::Window { lo, hi } => MinorizationMeasure::window(set, lo, hi)?,
        NuConfig::Doeblin => {
            let (m, t) = gf.ok_or_else(|| {
                floquet_core::Error::Unsupported(
                    "doeblin window outside growth-fragmentation".into(),
                )
            })?;
            let (_, hi_k) = set.interval();
            let (_, _, _, _, (lo, hi)) = doeblin_constants(m, 0.0, t, hi_k)?;
            MinorizationMeasure::window(set, lo, hi)?
        }
    })
}

/// Power iteration plus family over one period; returns the power-iteration `λ_F`.
fn floquet_family<G: DualGenerator>(
    model: G,
    v: DiscreteFunction,
    per: f64,
    sch: &StepScheme,
    k: &FloquetKnobs,
    art: &mut Artifacts,
) -> RunResult<f64> {
    let grid = v.grid;
    let prov = LatticeProvider::from_scheme(model, sch, per, k.n_samples - 1)?;
    let eig = power_iterate(&*prov.propagator(0.0, per)?, &v, k.tol, k.max_iter)?;
    let fam = extend_family(&prov, &eig, &v, 0.0, per, k.n_samples)?;
    let (dh, dg) = fam.endpoint_mismatch()?;
    art.verdict(
        "power iteration residual",
        eig.residual,
        eig.residual <= 1e-10,
    );
    art.verdict("h endpoint mismatch", dh, dh <= 1e-8);
    art.verdict("gamma endpoint mismatch", dg, dg <= 1e-6);

    let mut head = vec!["x".to_string()];
    head.extend(fam.times.iter().map(|t| format!("t={}", num(*t))));
    let rows = |col: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<String>> {
        (0..grid.n_nodes())
            .map(|i| {
                let mut r = vec![num(grid.node(i))];
                r.extend((0..fam.times.len()).map(|j| num(col(j, i))));
                r
            })
            .collect()
    };
    art.csv("h_family", &head, &rows(&|j, i| fam.h_samples[j].values[i]))?;
    art.csv(
        "gamma_family",
        &head,
        &rows(&|j, i| fam.gamma_samples[j].masses[i]),
    )?;
    Ok(fam.lambda_f)
}

fn floquet_gf(
    m: GFModel,
    sch: &StepScheme,
    k: &FloquetKnobs,
    art: &mut Artifacts,
) -> RunResult<()> {
    let per = m.period();
    let af = AffineFloquet::new(&m, k.mono_steps)?;
    let mono = af.perron.lambda_f;
    let grid = m.grid;
    let lam = floquet_family(m.clone(), m.weight(), per, sch, k, art)?;
    let gap = (mono - lam).abs();
    art.csv(
        "eigen",
        &hdr(&["lambda_F_monodromy", "lambda_F_powerit", "gap"]),
        &[vec![num(mono), num(lam), num(gap)]],
    )?;
    art.verdict("lambda_F route gap", gap, gap <= k.cross_tol);
    if let Some(e) = k.expected_lambda_f {
        art.verdict("lambda_F", mono, (mono - e).abs() <= k.expected_tol);
    }
    // Affine monodromy profile, normalized at the origin.
    let h0 = af.h(0.0, 0.0);
    let rows: Vec<Vec<String>> = (0..grid.n_nodes())
        .map(|i| {
            let x = grid.node(i);
            vec![num(x), num(af.h(0.0, x) / h0)]
        })
        .collect();
    art.csv("h_monodromy", &hdr(&["x", "h_0"]), &rows)
}

fn harris_a(
    p: &Propagator,
    pair: &WeightPair,
    set: &SmallSet,
    nu: &MinorizationMeasure,
    n_max: usize,
    art: &mut Artifacts,
) -> RunResult<()> {
    let rep = check_a_suite(p, pair, set, nu, n_max)?;
    let a4 = check_a4(p, pair, set, nu, n_max)?;
    let rows: Vec<Vec<String>> = a4
        .ratios
        .iter()
        .enumerate()
        .map(|(i, r)| vec![(i + 1).to_string(), num(*r)])
        .collect();
    art.csv("a4_ratios", &hdr(&["n", "ratio"]), &rows)?;
    art.harris(rep)
}

fn b4_trend<P: PropagatorProvider + ?Sized>(
    prov: &P,
    pair: &WeightPair,
    set: &SmallSet,
    params: &BSuiteParams,
    art: &mut Artifacts,
) -> RunResult<()> {
    let series = b4_series(prov, pair, set, params)?;
    let rows: Vec<Vec<String>> = series
        .iter()
        .enumerate()
        .map(|(i, c)| vec![(i + 1).to_string(), num(*c)])
        .collect();
    art.csv("b4_trend", &hdr(&["n", "C_B4"]), &rows)
}

fn convergence<G: DualGenerator>(
    model: G,
    v: DiscreteFunction,
    per: f64,
    sch: &StepScheme,
    k: &ConvergenceKnobs,
    art: &mut Artifacts,
) -> RunResult<()> {
    let grid = v.grid;
    let gran = lcm(k.n_samples - 1, k.checkpoints_per_period);
    let prov = LatticeProvider::from_scheme(model, sch, per, gran)?;
    let eig = power_iterate(&*prov.propagator(0.0, per)?, &v, k.tol, k.max_iter)?;
    let fam = extend_family(&prov, &eig, &v, 0.0, per, k.n_samples)?;
    let horizon = k.horizon_periods as f64 * per;
    let n_cp = k.horizon_periods * k.checkpoints_per_period;
    let mut profiles = Vec::new();
    for (idx, &x) in k.diracs.iter().enumerate() {
        let mu = DiscreteMeasure::dirac(grid, grid.nearest_index(x))?;
        let rec = convergence_rate(&prov, &fam, &mu, 0.0, horizon, n_cp)?;
        let name = format!("distances_{idx}");
        let rows: Vec<Vec<String>> = rec
            .distances
            .iter()
            .map(|d| vec![num(d.t), num(d.distance), num(d.rescaled_distance)])
            .collect();
        art.csv(&name, &hdr(&["t", "distance", "rescaled_distance"]), &rows)?;
        art.fits.insert(
            name,
            Fit {
                s: 0.0,
                c_hat: rec.c_hat,
                omega_hat: rec.omega_hat,
            },
        );
        art.verdict(
            format!("omega_hat > 0 (x0={x})"),
            rec.omega_hat,
            rec.omega_hat > 0.0,
        );
        let mono = rec.monotone_after_transient();
        art.verdict(
            format!("monotone after transient (x0={x})"),
            f64::from(u8::from(mono)),
            mono,
        );
        profiles.push(rec.final_profile);
    }
    let mut spread: f64 = 0.0;
    for a in 0..profiles.len() {
        for b in a + 1..profiles.len() {
            let diff = DiscreteMeasure::new(grid, &profiles[a].masses - &profiles[b].masses)?;
            spread = spread.max(weighted_tv_norm(&diff, &v)?);
        }
    }
    if profiles.len() > 1 {
        art.verdict(
            "final profile spread (weighted TV)",
            spread,
            spread <= k.profile_tol,
        );
    }
    let mut head = vec!["x".to_string()];
    head.extend((0..profiles.len()).map(|i| format!("profile_{i}")));
    let rows: Vec<Vec<String>> = (0..grid.n_nodes())
        .map(|i| {
            let mut r = vec![num(grid.node(i))];
            r.extend(profiles.iter().map(|p| num(p.masses[i])));
            r
        })
        .collect();
    art.csv("final_profiles", &head, &rows)
}

fn gabriel(m: &GFModel, sch: &StepScheme, k: &GabrielKnobs, art: &mut Artifacts) -> RunResult<()> {
    let b = gabriel_bounds(m, sch, k.n_samples, k.mono_steps)?;
    art.csv(
        "gabriel",
        &hdr(&[
            "lam_bar_g0",
            "lam_g0_bar",
            "lambda_F",
            "allowance",
            "lower_margin",
            "upper_margin",
        ]),
        &[vec![
            num(b.lam_bar_g0),
            num(b.lam_g0_bar),
            num(b.lambda_f),
            num(b.allowance),
            num(b.lower_margin),
            num(b.upper_margin),
        ]],
    )?;
    let floor = -1e-6 - b.allowance;
    art.verdict(
        "gabriel lower margin",
        b.lower_margin,
        b.lower_margin >= floor,
    );
    art.verdict(
        "gabriel upper margin",
        b.upper_margin,
        b.upper_margin >= floor,
    );
    if m.params.g0.is_constant() {
        let vals = [b.lam_bar_g0, b.lam_g0_bar, b.lambda_f];
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        art.verdict(
            "gabriel collapse spread",
            hi - lo,
            hi - lo <= k.collapse_tol,
        );
    }
    Ok(())
}

fn doeblin(m: &GFModel, sch: &StepScheme, k: &DoeblinKnobs, art: &mut Artifacts) -> RunResult<()> {
    let mut rows = Vec::new();
    let mut c = Vec::new();
    for &h in &k.durations {
        let cert = doeblin_certificate_gf(m, k.s, k.s + h, k.r, sch)?;
        art.verdict(format!("doeblin margin (t-s={h})"), cert.margin, cert.pass);
        rows.push(vec![
            num(h),
            num(cert.c_st),
            num(cert.a1),
            num(cert.a2),
            num(cert.b_sup),
            num(cert.ratio),
            num(cert.margin),
        ]);
        c.push((h, cert.c_st));
    }
    art.csv(
        "doeblin",
        &hdr(&["t_minus_s", "c_st", "a1", "a2", "b_sup", "ratio", "margin"]),
        &rows,
    )?;
    if c.len() >= 2 {
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (h1, c1) = c[0];
        let (h2, c2) = c[1];
        let dev = (c2 / c1) / (h2 / h1) - 1.0;
        art.verdict("doeblin linear scaling", dev, dev.abs() <= k.scaling_tol);
    }
    Ok(())
}

/// `k`-fold composition of the exact period map applied to `𝟙`.
fn composed(s: f64, k: u32, x: f64, per: f64) -> f64 {
    let mut f: Box<dyn Fn(f64) -> f64> = Box::new(|_| 1.0);
    for j in (0..k).rev() {
        let a = s + j as f64 * per;
        let prev = f;
        f = Box::new(move |z| sin_model_point(a, a + per, &*prev, z));
    }
    f(x)
}

fn counterexample(
    grid: SpaceGrid,
    per: f64,
    k: &CounterexampleKnobs,
    art: &mut Artifacts,
) -> RunResult<()> {
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for kk in 1..=k.k_max {
        for &[x, s, u] in &k.triples {
            let r = composed(s, kk, x, per) / composed(u, kk, x, per);
            let exact = sin_b4_ratio(x, s, u, kk, per);
            let err = (r / exact - 1.0).abs();
            worst = worst.max(err);
            rows.push(vec![
                kk.to_string(),
                num(x),
                num(s),
                num(u),
                num(r),
                num(exact),
                num(err),
            ]);
        }
    }
    art.csv(
        "b4_ratio_check",
        &hdr(&["k", "x", "s", "u", "composed", "closed_form", "rel_err"]),
        &rows,
    )?;
    art.verdict(
        "sin_b4_ratio vs composed semiflow",
        worst,
        worst <= k.ratio_tol,
    );

    let prov = SinModelProvider { grid, wrap: true };
    let one = DiscreteFunction::constant(grid, 1.0);
    let pair = WeightPair::new(one.clone(), one)?;
    let set = SmallSet::from_interval(grid, k.small_set[0], k.small_set[1])?;
    let nu = MinorizationMeasure::uniform_on(set)?;
    let params = BSuiteParams {
        s0: 0.0,
        tau: per,
        n_max: k.n_max,
        time_samples: k.time_samples,
    };
    b4_trend(&prov, &pair, &set, &params, art)?;
    let rep = check_b_suite(&prov, &pair, &set, &nu, &params)?;
    let b4 = rep.get("B4").expect("B-suite has B4").clone();
    let a4 = check_a4(&*prov.propagator(0.0, per)?, &pair, &set, &nu, k.n_max)?;
    art.verdict("B4", b4.constants["log_slope"], b4.pass);
    art.verdict("A4", a4.slope, a4.pass);
    let rows: Vec<Vec<String>> = rep
        .checks
        .iter()
        .map(|c| vec![c.check.clone(), num(c.margin), c.pass.to_string()])
        .collect();
    art.csv("harris_checks", &hdr(&["check", "margin", "pass"]), &rows)?;
    art.harris = Some(rep);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcm_of_lattice_needs() {
        assert_eq!(lcm(4, 4), 4);
        assert_eq!(lcm(8, 6), 24);
        assert_eq!(lcm(1, 5), 5);
    }

    #[test]
    fn nullable_round_trip() {
        let v = Verdict {
            criterion: "x".into(),
            value: f64::INFINITY,
            pass: true,
        };
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("null"));
        let back: Verdict = serde_json::from_str(&s).unwrap();
        assert!(back.value.is_nan());
    }

    #[test]
    fn hash_is_stable_and_short() {
        let cfg = crate::config::parse_config_str(
            r#"{"model": {"kind": "sin_exact"}, "grid": {"x_min": 0, "x_max": 6.283185307179586, "n_nodes": 65},
                "experiment": {"kind": "counterexample_b4"}}"#,
            "t",
        )
        .unwrap();
        let h = config_hash(&cfg);
        assert_eq!(h.len(), 12);
        assert_eq!(h, config_hash(&cfg.clone()));
    }
}
