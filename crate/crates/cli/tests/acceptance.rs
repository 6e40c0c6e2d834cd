//! Acceptance criteria 1–10, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use floquet_cli::{parse_config, run};
use floquet_core::growth_fragmentation::{
    doeblin_certificate_gf, doeblin_constants, floquet_h, gabriel_bounds, kappa_moment,
    perron_floquet, FragmentationDistribution, PeriodicCoefficient,
};
use floquet_core::harris::*;
use floquet_core::selection_mutation::{lyapunov_pair_sm, FitnessField, MutationKernel, SMModel};
use floquet_core::*;
use ndarray::Array1;

fn gf(n: usize, x_max: f64, g0_amp: f64, b1_amp: f64, kappa: FragmentationDistribution) -> GFModel {
    let p = GFParams::new(
        PeriodicCoefficient::sinusoid(1.0, g0_amp, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::sinusoid(1.0, b1_amp, 1.0),
        kappa,
    );
    GFModel::new(p, SpaceGrid::new(0.0, x_max, n).unwrap()).unwrap()
}

fn bump() -> FragmentationDistribution {
    FragmentationDistribution::FloorPlusBump { kappa_floor: 1.0 }
}

fn sm(n: usize) -> SMModel {
    SMModel::new(
        FitnessField::PowerConfine {
            a0: 1.0,
            a1: 1.0,
            p: 2.0,
            phi: 0.5,
            period: 1.0,
        },
        MutationKernel::UniformWindow { q: 0.2, eps: 4.0 },
        SpaceGrid::new(-6.0, 6.0, n).unwrap(),
    )
    .unwrap()
}

fn euler() -> StepScheme {
    StepScheme::new(1.0, Method::Euler, 0.9).unwrap()
}

fn heun() -> StepScheme {
    StepScheme::new(1.0, Method::Heun, 0.9).unwrap()
}

/// Each criterion returns `(pass, detail)`.
type Outcome = (bool, String);
type Check = (&'static str, fn() -> Outcome);

fn c1_constant_eigenpair() -> Outcome {
    // A ≡ [[0,1],[1,0]]: eigenvalues ±1, Perron vector (1,1), so Λ = e,
    // λ_F = 1 and h ∝ 1 + x.
    let m = gf(81, 8.0, 0.0, 0.0, FragmentationDistribution::UniformBinary);
    let pf = perron_floquet(&m, 400).unwrap();
    let lam_err = (pf.lambda_f - 1.0).abs();
    let big_err = (pf.big_lambda - 1f64.exp()).abs();
    let mut h_dev: f64 = 0.0;
    for s in [0.0, 0.25, 0.7] {
        let h0 = floquet_h(&m, s, 0.0, 400).unwrap();
        for x in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let r = floquet_h(&m, s, x, 400).unwrap() / h0;
            h_dev = h_dev.max((r / (1.0 + x) - 1.0).abs());
        }
    }
    (
        lam_err <= 1e-8 && big_err <= 1e-8 * 1f64.exp() && h_dev <= 1e-8,
        format!("|λ_F−1| = {lam_err:.2e}, h deviation from 1+x = {h_dev:.2e}"),
    )
}

fn route_gap(n: usize) -> f64 {
    let m = gf(n, 8.0, 0.3, 0.3, FragmentationDistribution::UniformBinary);
    let mono = perron_floquet(&m, 4000).unwrap().lambda_f;
    let p = assemble(&m, 0.0, 1.0, &heun()).unwrap();
    let eig = power_iterate(&p, &m.weight(), 1e-12, 200_000).unwrap();
    (eig.big_lambda.ln() - mono).abs()
}

fn c2_route_agreement() -> Outcome {
    let gaps: Vec<f64> = [201, 401, 801].iter().map(|&n| route_gap(n)).collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    (
        gaps[2] <= 5e-3 && ratios.iter().all(|&r| r >= 2.0),
        format!(
            "gaps {:.3e} {:.3e} {:.3e} at 201/401/801 nodes, ratios {ratios:.2?}",
            gaps[0], gaps[1], gaps[2]
        ),
    )
}

fn c3_family_periodicity() -> Outcome {
    let m = gf(121, 12.0, 0.3, 0.3, bump());
    let prov = LatticeProvider::from_scheme(m.clone(), &euler(), 1.0, 8).unwrap();
    let v = m.weight();
    let eig = power_iterate(&prov.propagator(0.0, 1.0).unwrap(), &v, 1e-13, 200_000).unwrap();
    let fam = extend_family(&prov, &eig, &v, 0.0, 1.0, 9).unwrap();
    let (dh, dg) = fam.endpoint_mismatch().unwrap();
    (
        eig.residual <= 1e-10 && dh <= 1e-8 && dg <= 1e-6,
        format!(
            "residual {:.1e}, h mismatch {dh:.1e}, γ mismatch {dg:.1e}",
            eig.residual
        ),
    )
}

fn diracs<G: DualGenerator>(
    prov: &LatticeProvider<G>,
    v: &DiscreteFunction,
    xs: [f64; 2],
) -> (bool, f64, f64) {
    let g = prov.grid();
    let eig = power_iterate(&prov.propagator(0.0, 1.0).unwrap(), v, 1e-12, 200_000).unwrap();
    let fam = extend_family(prov, &eig, v, 0.0, 1.0, 5).unwrap();
    let mut ok = true;
    let mut omega = f64::INFINITY;
    let mut prof = Vec::new();
    for x in xs {
        let mu = DiscreteMeasure::dirac(g, g.nearest_index(x)).unwrap();
        let rec = convergence_rate(prov, &fam, &mu, 0.0, 15.0, 60).unwrap();
        ok &= rec.omega_hat > 0.0 && rec.monotone_after_transient();
        omega = omega.min(rec.omega_hat);
        prof.push(rec.final_profile);
    }
    let diff = DiscreteMeasure::new(g, &prof[0].masses - &prof[1].masses).unwrap();
    let tv = weighted_tv_norm(&diff, v).unwrap();
    (ok && tv <= 1e-4, omega, tv)
}

fn c4_convergence() -> Outcome {
    let m = gf(401, 16.0, 0.3, 0.3, bump());
    let prov = LatticeProvider::from_scheme(m.clone(), &euler(), 1.0, 4).unwrap();
    let (ok_gf, w_gf, tv_gf) = diracs(&prov, &m.weight(), [1.0, 4.0]);
    let s = sm(241);
    let v = DiscreteFunction::constant(s.grid, 1.0);
    let prov = LatticeProvider::from_scheme(s, &euler(), 1.0, 4).unwrap();
    let (ok_sm, w_sm, tv_sm) = diracs(&prov, &v, [-1.0, 1.0]);
    (
        ok_gf && ok_sm,
        format!("GF ω̂ {w_gf:.3} TV {tv_gf:.1e}; SM ω̂ {w_sm:.3} TV {tv_sm:.1e}"),
    )
}

fn composed(s: f64, k: u32, x: f64, per: f64) -> f64 {
    // Iterate the closed-form semiflow on 𝟙, one period at a time.
    let mut f: Box<dyn Fn(f64) -> f64> = Box::new(|_| 1.0);
    for j in (0..k).rev() {
        let a = s + j as f64 * per;
        let prev = f;
        f = Box::new(move |z| prev(z + per) * (per * (z - a).sin()).exp());
    }
    f(x)
}

fn c5_counterexample() -> Outcome {
    let per = 2.0 * PI;
    let mut worst: f64 = 0.0;
    for k in 1..=8 {
        for (x, s, u) in [
            (0.4, 0.0, 1.0),
            (2.0, 0.5, 3.0),
            (PI / 2.0, 0.0, PI),
            (5.0, 1.2, 0.3),
        ] {
            let r = composed(s, k, x, per) / composed(u, k, x, per);
            worst = worst.max((r / sin_b4_ratio(x, s, u, k, per) - 1.0).abs());
        }
    }
    let g = SpaceGrid::new(0.0, per, 65).unwrap();
    let prov = SinModelProvider {
        grid: g,
        wrap: true,
    };
    let one = DiscreteFunction::constant(g, 1.0);
    let pair = WeightPair::new(one.clone(), one).unwrap();
    let k = SmallSet::from_interval(g, 0.5, 2.5).unwrap();
    let nu = MinorizationMeasure::uniform_on(k).unwrap();
    let params = BSuiteParams {
        s0: 0.0,
        tau: per,
        n_max: 6,
        time_samples: 8,
    };
    let rep = check_b_suite(&prov, &pair, &k, &nu, &params).unwrap();
    let b4 = rep.get("B4").unwrap();
    let slope = b4.constants["log_slope"];
    let a4 = check_a4(&prov.propagator(0.0, per).unwrap(), &pair, &k, &nu, 6).unwrap();
    (
        worst <= 1e-10 && !b4.pass && slope > 0.0 && !a4.pass,
        format!(
            "ratio error {worst:.1e}, B4 pass = {} (log-slope {slope:.3}), A4 pass = {}",
            b4.pass, a4.pass
        ),
    )
}

fn c6_harris() -> Outcome {
    let m = gf(601, 24.0, 0.3, 0.3, bump());
    let p = assemble(&m, 0.0, 1.0, &euler()).unwrap();
    let v = DiscreteFunction::from_fn(m.grid, |x| 1.0 + x * x);
    let eig = power_iterate(&p, &v, 1e-12, 100_000).unwrap();
    let pair = WeightPair::normalized(v, eig.h).unwrap();
    let k = SmallSet::from_interval(m.grid, 0.0, 6.0).unwrap();
    let (_, _, _, _, (lo, hi)) = doeblin_constants(&m, 0.0, 1.0, 6.0).unwrap();
    let nu = MinorizationMeasure::window(k, lo, hi).unwrap();
    let a = check_a_suite(&p, &pair, &k, &nu, 10).unwrap();
    let alpha = a.get("A1").unwrap().constants["alpha"];
    let beta = a.get("A2").unwrap().constants["beta"];
    let c = a.get("A3").unwrap().constants["c_A3"];
    let d = a.get("A4").unwrap().constants["d_A4"];
    let a_ok = a.verdict && alpha < 1.0 && 1.0 < beta && c > 0.0 && d >= 0.9;

    let s = sm(241);
    let pair = lyapunov_pair_sm(&s, 2.0, &euler()).unwrap();
    let prov = LatticeProvider::from_scheme(s, &euler(), 1.0, 4).unwrap();
    let k = SmallSet::from_interval(prov.grid(), -2.2, 1.3).unwrap();
    let nu = MinorizationMeasure::uniform_on(k).unwrap();
    let params = BSuiteParams {
        s0: 0.0,
        tau: 1.0,
        n_max: 8,
        time_samples: 4,
    };
    let mut b = check_b_suite(&prov, &pair, &k, &nu, &params).unwrap();
    b.push(check_b5_sm(&prov, &pair, &k, 0.0, 1.0, 5, 1).unwrap());
    let min_margin = b
        .checks
        .iter()
        .map(|c| c.margin)
        .fold(f64::INFINITY, f64::min);
    let names: Vec<&str> = b.checks.iter().map(|c| c.check.as_str()).collect();
    let b_ok = b.verdict && min_margin >= 0.0 && names == ["B0", "B1", "B2", "B3", "B4", "B5"];
    (
        a_ok && b_ok,
        format!(
            "GF α {alpha:.3} β {beta:.3} c {c:.3} d {d:.3}; SM B0–B5 min margin {min_margin:.1e}"
        ),
    )
}

fn c7_doeblin() -> Outcome {
    let m = gf(601, 24.0, 0.3, 0.3, bump());
    let mut p = m.params.clone();
    p.mz = 256;
    let m = m.with_params(p).unwrap();
    let mut ok = true;
    let mut c = Vec::new();
    let mut min_margin = f64::INFINITY;
    for h in [1.0, 0.01, 0.005] {
        let cert = doeblin_certificate_gf(&m, 0.0, h, 6.0, &euler()).unwrap();
        ok &= cert.pass && cert.margin >= 0.0;
        min_margin = min_margin.min(cert.margin);
        c.push(cert.c_st);
    }
    let factor = c[1] / c[2];
    (
        ok && (factor / 2.0 - 1.0).abs() <= 0.05,
        format!("min margin {min_margin:.2}, c(0.01)/c(0.005) = {factor:.3}"),
    )
}

fn gabriel_model(amp: f64) -> GFModel {
    let p = GFParams::new(
        PeriodicCoefficient::sinusoid(1.0, amp, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::constant(1.0, 1.0),
        FragmentationDistribution::UniformBinary,
    );
    GFModel::new(p, SpaceGrid::new(0.0, 8.0, 201).unwrap()).unwrap()
}

fn c8_gabriel() -> Outcome {
    let b = gabriel_bounds(&gabriel_model(0.5), &heun(), 16, 2000).unwrap();
    let floor = -1e-6 - b.allowance;
    let bracket = b.lower_margin >= floor && b.upper_margin >= floor;
    let z = gabriel_bounds(&gabriel_model(0.0), &heun(), 16, 2000).unwrap();
    let vals = [z.lam_bar_g0, z.lam_g0_bar, z.lambda_f];
    let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - vals.iter().cloned().fold(f64::INFINITY, f64::min);
    (
        bracket && spread <= 5e-3,
        format!(
            "{:.4} ≤ {:.4} ≤ {:.4} (allowance {:.1e}); flat spread {spread:.1e}",
            b.lam_bar_g0, b.lambda_f, b.lam_g0_bar, b.allowance
        ),
    )
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Composite Simpson rule on `[0, 1]`.
fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

fn split_error(method: Method, dt: f64, reference: &Propagator) -> f64 {
    let m = gf(41, 4.0, 0.3, 0.3, bump());
    let sch = StepScheme::new(dt, method, 0.9).unwrap();
    let split = compose(
        &assemble(&m, 0.0, 0.375, &sch).unwrap(),
        &assemble(&m, 0.375, 1.0, &sch).unwrap(),
    )
    .unwrap();
    (&split.matrix - &reference.matrix)
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn c9_structural() -> Outcome {
    let mut notes = Vec::new();
    // Duality.
    let props = [
        assemble(&gf(81, 8.0, 0.3, 0.3, bump()), 0.1, 0.6, &euler()).unwrap(),
        assemble(&sm(81), 0.2, 0.7, &heun()).unwrap(),
    ];
    let mut rng = Lcg(7);
    let mut dual_err: f64 = 0.0;
    for p in &props {
        for _ in 0..20 {
            let mu = DiscreteMeasure::new(p.grid, Array1::from_shape_fn(81, |_| rng.next() - 0.5))
                .unwrap();
            let f = DiscreteFunction::new(
                p.grid,
                Array1::from_shape_fn(81, |_| 2.0 * rng.next() - 1.0),
            )
            .unwrap();
            let lhs = pairing(&p.push_forward(&mu).unwrap(), &f).unwrap();
            let rhs = pairing(&mu, &p.apply_dual(&f).unwrap()).unwrap();
            dual_err = dual_err.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    let dual_ok = dual_err <= 1e-12;
    notes.push(format!("duality {dual_err:.1e}"));
    // Clamps.
    let mut clamps = 0;
    for sch in [euler(), heun()] {
        clamps += assemble(&gf(121, 12.0, 0.5, 0.5, bump()), 0.0, 1.0, &sch)
            .unwrap()
            .clamp_count;
        clamps += assemble(&sm(121), 0.0, 1.0, &sch).unwrap().clamp_count;
    }
    notes.push(format!("clamps {clamps}"));
    // Composition order against a fine reference.
    let m = gf(41, 4.0, 0.3, 0.3, bump());
    let mut order_ok = true;
    for (method, lo, hi) in [(Method::Euler, 1.6, 2.5), (Method::Heun, 3.2, 5.0)] {
        let r = assemble(
            &m,
            0.0,
            1.0,
            &StepScheme::new(0.02 / 64.0, method, 0.9).unwrap(),
        )
        .unwrap();
        let e: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| split_error(method, dt, &r))
            .collect();
        let q: Vec<f64> = e.windows(2).map(|w| w[0] / w[1]).collect();
        order_ok &= q.iter().all(|x| (lo..=hi).contains(x));
        notes.push(format!("{method:?} ratios {q:.2?}"));
    }
    // Moments by quadrature of the densities.
    let catalog = [
        FragmentationDistribution::UniformBinary,
        FragmentationDistribution::FloorPlusBump { kappa_floor: 0.25 },
        FragmentationDistribution::FloorPlusBump { kappa_floor: 1.0 },
        FragmentationDistribution::FloorPlusBump { kappa_floor: 2.0 },
    ];
    let mut eta_ok = true;
    for k in &catalog {
        let eta1 = simpson(|z| z * k.value(z), 2000);
        eta_ok &=
            (eta1 - 1.0).abs() <= 1e-12 && (kappa_moment(k, 1.0).unwrap() - 1.0).abs() <= 1e-12;
        for a in [1.5, 2.0, 3.0] {
            eta_ok &= simpson(|z| z.powf(a) * k.value(z), 2000) < 1.0
                && kappa_moment(k, a).unwrap() < 1.0;
        }
    }
    notes.push(format!("η checks {}", if eta_ok { "ok" } else { "bad" }));
    (
        dual_ok && clamps == 0 && order_ok && eta_ok,
        notes.join(", "),
    )
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("floquet-acceptance-{}", std::process::id()));
    let mut files: Vec<PathBuf> = fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut ok = !files.is_empty();
    let mut n_csv = 0;
    for f in &files {
        let cfg = parse_config(f).unwrap();
        let (_, a) = run(&cfg, &root.join("a")).unwrap();
        let (_, b) = run(&cfg, &root.join("b")).unwrap();
        let (ca, cb) = (
            csv_bytes(a.parent().unwrap()),
            csv_bytes(b.parent().unwrap()),
        );
        n_csv += ca.len();
        ok &= !ca.is_empty() && ca == cb;
    }
    let _ = fs::remove_dir_all(&root);
    (
        ok,
        format!(
            "{} scenarios, {n_csv} CSV files byte-identical",
            files.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Check; 10] = [
        ("constant-coefficient GF eigenpair", c1_constant_eigenpair),
        ("cross-route eigenvalue agreement", c2_route_agreement),
        ("Floquet family periodicity", c3_family_periodicity),
        ("exponential convergence", c4_convergence),
        ("B4 counterexample", c5_counterexample),
        ("Harris certificates", c6_harris),
        ("Doeblin certificate", c7_doeblin),
        ("Gabriel comparison", c8_gabriel),
        ("structural invariants", c9_structural),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "[{}] criterion {}: {name}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1
        );
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
