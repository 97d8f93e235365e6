//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecohydro::aggregates::{measure, probability_view, IdentityReport, IdentitySuite};
use ecohydro::analysis::{fit_modes, growth_rate, spectrum};
use ecohydro::cli::{self, CliError, RunMode, Scenario};
use ecohydro::espace::{divergence, integrate, Field, Rank, RiskGrid};
use ecohydro::hydro::{evolve, ConstraintId, CouplingSet, HydroState, Mode, StepConfig};
use ecohydro::kinetic::{deposit, Ensemble};
use ecohydro::odesys::{check_constraints, integrate_ode_sampled, ClosedForm, Level, LinearSystem};

const OSCILLATION: &str = include_str!("../../../scenarios/oscillation.cfg");
const LEVEL_C: &str = include_str!("../../../scenarios/level_c.cfg");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(elapsed: Duration, limit: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    if secs < limit {
        Ok(format!("{detail}; {secs:.2} s"))
    } else {
        Err(format!("{detail}; took {secs:.2} s, limit {limit} s"))
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mode_spectrum() -> Outcome {
    let start = Instant::now();
    let k = CouplingSet {
        c: -1.0,
        d: 1.0,
        c_e: 0.5,
        d_e: 0.5,
        ..Default::default()
    };
    let sys = LinearSystem::build(&k, Level::A).map_err(|e| e.to_string())?;
    let ev = sys.eigenvalues();
    let mut worst = 0.0f64;
    for want in [
        Complex::new(0.0, 1.0),
        Complex::new(0.0, -1.0),
        Complex::new(0.5, 0.0),
        Complex::new(-0.5, 0.0),
    ] {
        let d = ev.iter().map(|z| (z - want).norm()).fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    if worst > 1e-10 {
        return Err(format!("eigenvalue distance {worst:.3e} exceeds 1e-10"));
    }
    within(
        start.elapsed(),
        1.0,
        format!("±i and ±0.5 found, worst distance {worst:.1e}"),
    )
}

fn magnitude(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.2..1.5)
}

fn random_couplings(rng: &mut ChaCha8Rng) -> CouplingSet {
    loop {
        let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let opposite = |rng: &mut ChaCha8Rng| {
            let s = sign(rng);
            (s * magnitude(rng), -s * magnitude(rng))
        };
        let same = |rng: &mut ChaCha8Rng| {
            let s = sign(rng);
            (s * magnitude(rng), s * magnitude(rng))
        };
        let (c, d) = opposite(rng);
        let (c_e, d_e) = same(rng);
        let (c_pe, d_pe) = opposite(rng);
        let (c_v, d_v) = opposite(rng);
        let (c_vu, d_vu) = same(rng);
        let (c_xv, d_xv) = same(rng);
        let k = CouplingSet {
            a: rng.random_range(-1.0..1.0),
            b: rng.random_range(-1.0..1.0),
            c,
            d,
            c_e,
            d_e,
            c_pe,
            d_pe,
            c_v,
            d_v,
            c_vu,
            d_vu,
            c_xv,
            d_xv,
        };
        if check_constraints(&k).all_passed() {
            return k;
        }
    }
}

fn closed_form_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let levels = [Level::A, Level::B, Level::C, Level::Combined];
    for trial in 0..20 {
        let k = random_couplings(&mut rng);
        let level = levels[trial % levels.len()];
        let sys = LinearSystem::build(&k, level).map_err(|e| e.to_string())?;
        let y0: Vec<f64> = (0..sys.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let traj = integrate_ode_sampled(&sys, &y0, 1e-3, 10_000, 10).map_err(|e| e.to_string())?;
        if traj.truncated_at.is_some() {
            return Err(format!("trial {trial}: integration overflowed"));
        }
        let form = ClosedForm::new(&sys, &y0).map_err(|e| e.to_string())?;
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let exact = form.eval(*t);
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = y.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(err / scale);
        }
    }
    if worst > 1e-6 {
        return Err(format!("max relative deviation {worst:.3e} exceeds 1e-6"));
    }
    within(
        start.elapsed(),
        30.0,
        format!("20 coupling sets, max relative deviation {worst:.2e}"),
    )
}

fn shape_couplings() -> CouplingSet {
    Scenario::parse(LEVEL_C).expect("bundled scenario").couplings
}

fn shape_residual(k: &CouplingSet, level: Level, column: &str, freqs: &[f64], rates: &[f64]) -> Result<f64, String> {
    let sys = LinearSystem::build(k, level).map_err(|e| e.to_string())?;
    let y0: Vec<f64> = (0..sys.size())
        .map(|i| 0.3 + ((i * 7 + 3) % 11) as f64 / 11.0)
        .collect();
    let form = ClosedForm::new(&sys, &y0).map_err(|e| e.to_string())?;
    let idx = sys.index(column).ok_or_else(|| format!("{column} missing"))?;
    let times: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
    let series: Vec<f64> = times.iter().map(|&t| form.eval(t)[idx]).collect();
    let fit = fit_modes(&times, &series, freqs, rates).map_err(|e| e.to_string())?;
    Ok(fit.residual)
}

fn solution_shapes() -> Outcome {
    let k = shape_couplings();
    let w = k.omega().unwrap();
    let ge = k.gamma_e().unwrap();
    let wpe = k.omega_pe().unwrap();
    let wv = k.omega_v().unwrap();
    let gvu = k.gamma_vu().unwrap();
    let gxv = k.gamma_xv().unwrap();
    let a = shape_residual(&k, Level::A, "A", &[w], &[ge])?;
    let xa = shape_residual(&k, Level::B, "XA", &[w, wpe, wv], &[ge])?;
    let x2a = shape_residual(&k, Level::C, "X2A", &[w, wpe], &[ge, gvu, gxv])?;
    let detail = format!("residuals A {a:.2e} (<1e-8), XA {xa:.2e} (<1e-7), X2A {x2a:.2e} (<1e-6)");
    check(a < 1e-8 && xa < 1e-7 && x2a < 1e-6, detail)
}

fn identity_run(cells: usize, dt: f64, steps: usize) -> Result<IdentityReport, String> {
    let g = Arc::new(RiskGrid::uniform(&[1.0], &[cells]).map_err(|e| e.to_string())?);
    let bump = |c: f64, x: f64| (-(x - c).powi(2) / 0.02).exp();
    let a = Field::scalar_from_fn(&g, |x| 0.2 + bump(0.4, x[0]));
    let b = Field::scalar_from_fn(&g, |x| 0.2 + bump(0.6, x[0]));
    let pa = Field::vector_from_fn(&g, |x, out| out[0] = 0.3 * bump(0.4, x[0]));
    let pb = Field::vector_from_fn(&g, |x, out| out[0] = -0.2 * bump(0.6, x[0]));
    let s0 = HydroState::new(a, b, pa, pb, Mode::Hierarchy).map_err(|e| e.to_string())?;
    let k = CouplingSet {
        a: 0.5,
        b: 0.3,
        c: -1.0,
        d: 1.0,
        c_e: 0.2,
        d_e: 0.2,
        ..Default::default()
    };
    let cfl = s0.max_speed() * dt * cells as f64;
    if cfl > 0.5 {
        return Err(format!("initial Courant number {cfl:.3} exceeds 0.5"));
    }
    let mut suite = IdentitySuite::new(k);
    evolve(s0, &k, &StepConfig::new(dt, Mode::Hierarchy), steps, 1, |s| {
        suite.observe(s)
    })
    .map_err(|e| e.to_string())?;
    Ok(suite.report())
}

fn identity_suite() -> Outcome {
    let start = Instant::now();
    let coarse = identity_run(256, 0.004, 100)?;
    let fine = identity_run(512, 0.002, 200)?;
    let h = 1.0 / 256.0 + 0.004;
    let mut parts = Vec::new();
    let mut ok = true;
    for (c, f) in coarse.entries.iter().zip(&fine.entries) {
        let constant = c.residual / h;
        let ratio = c.residual / f.residual;
        ok &= constant <= 10.0 && (1.6..=2.4).contains(&ratio);
        parts.push(format!(
            "{} C={constant:.2} ratio={ratio:.2}",
            c.name.split_whitespace().nth(1).unwrap_or("")
        ));
    }
    let detail = format!(
        "C = residual/(Δx+Δt) ≤ 10 and ratio in [1.6, 2.4]: {}",
        parts.join(", ")
    );
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), 60.0, detail)
}

fn gauss_theorem() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let dim = 1 + trial % 3;
        let cells: Vec<usize> = (0..dim)
            .map(|_| rng.random_range(2..if dim == 1 { 400 } else { 40 }))
            .collect();
        let bounds: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..3.0)).collect();
        let g = Arc::new(RiskGrid::uniform(&bounds, &cells).map_err(|e| e.to_string())?);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let values: Vec<f64> = (0..g.cell_count() * dim)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        let flux = Field::from_values(&g, Rank::Vector, values).map_err(|e| e.to_string())?;
        let total = integrate(&divergence(&flux)).abs();
        worst = worst.max(total / flux.max_abs());
    }
    if worst > 1e-12 {
        return Err(format!("|∫div| / max|vA| reached {worst:.3e}"));
    }
    within(
        start.elapsed(),
        5.0,
        format!("50 fields in 1-3 dimensions, worst ratio {worst:.2e}"),
    )
}

fn frequency_recovery() -> Outcome {
    let s = Scenario::parse(OSCILLATION).map_err(|e| e.to_string())?;
    let out = cli::simulate(&s, None).map_err(|e| e.to_string())?;
    let times = out.series.times();
    let a = out.series.column("A", 0).ok_or("A missing")?;
    let ea = out.series.column("EA", 0).ok_or("EA missing")?;
    let spec = spectrum(&times, &a).map_err(|e| e.to_string())?;
    let f = spec.dominant().ok_or("no spectral peak")?;
    let target = s.couplings.omega().unwrap() / (2.0 * std::f64::consts::PI);
    let ferr = (f - target).abs() / target;
    let g = growth_rate(&times, &ea).map_err(|e| e.to_string())?;
    let ge = s.couplings.gamma_e().unwrap();
    let gerr = (g - ge).abs() / ge;
    check(
        ferr < 0.02 && gerr < 0.01,
        format!(
            "peak {f:.6} vs {target:.6} ({:.2}%), growth {g:.6} vs {ge} ({:.2}%)",
            100.0 * ferr,
            100.0 * gerr
        ),
    )
}

fn deposit_error(g: &Arc<RiskGrid>, n: usize, seed: u64) -> Result<(f64, f64), String> {
    let density = |x: &[f64]| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // dyadic weights keep every partial sum exact
    let w = 2f64.powi(-17);
    let e = Ensemble::sample(g, n, density, 1.5, |_| vec![0.0], 0.0, &[w], vec!["a".into()], &mut rng);
    let total = n as f64 * w;
    let (d, _) = deposit(&e, g, 0).map_err(|e| e.to_string())?;
    let cells = g.cell_count();
    let h = 1.0 / cells as f64;
    let mut err2 = 0.0;
    for i in 0..cells {
        let (lo, hi) = (i as f64 * h, (i + 1) as f64 * h);
        let k = 2.0 * std::f64::consts::PI;
        let exact = 1.0 + 0.5 * ((k * hi).sin() - (k * lo).sin()) / (k * h);
        err2 += (d.values()[i] / total - exact).powi(2) * h;
    }
    let mass_gap = (integrate(&d) - e.total(0)).abs();
    Ok((err2.sqrt(), mass_gap))
}

fn kinetic_convergence() -> Outcome {
    let g = Arc::new(RiskGrid::uniform(&[1.0], &[32]).map_err(|e| e.to_string())?);
    let mut errs = Vec::new();
    let mut mass = 0.0f64;
    for (i, n) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let mut sum = 0.0;
        for seed in 0..8 {
            let (e, m) = deposit_error(&g, n, 100 * i as u64 + seed)?;
            sum += e;
            mass = mass.max(m);
        }
        errs.push(sum / 8.0);
    }
    let expect = 10f64.sqrt();
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    let ok = [r1, r2].iter().all(|r| (expect / 2.0..=expect * 2.0).contains(r)) && mass == 0.0;
    check(
        ok,
        format!(
            "L2 errors {:.3e}, {:.3e}, {:.3e}; ratios {r1:.2}, {r2:.2} (√10 ≈ 3.16); mass gap {mass:.1e}",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn moment_sanity() -> Outcome {
    let mut s = Scenario::parse(OSCILLATION).map_err(|e| e.to_string())?;
    s.steps = 800;
    s.particles = 20_000;
    let mut states = 0usize;
    let mut worst_sigma = f64::INFINITY;
    let mut worst_prob = 0.0f64;
    let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut failure = None;
    for mode in [RunMode::Hierarchy, RunMode::SelfConsistent, RunMode::KineticInit] {
        s.mode = mode;
        let hydro = mode.hydro_mode().unwrap();
        let s0 = cli::initial_state(&s, hydro).map_err(|e| e.to_string())?;
        let cfg = StepConfig::new(s.dt, hydro);
        let xmax = s.bounds[0];
        evolve(s0, &s.couplings, &cfg, s.steps, 1, |st| {
            states += 1;
            let r = measure(st);
            for side in ["X", "Y"] {
                if let Some(x) = r.scalar(side) {
                    x_range = (x_range.0.min(x), x_range.1.max(x));
                    if !(0.0..=xmax).contains(&x) {
                        failure = Some(format!("{mode}: {side} = {x} at t = {}", st.time));
                    }
                }
            }
            if let Some(v) = r.scalar("sigma2") {
                worst_sigma = worst_sigma.min(v);
            }
            for f in [st.a(), st.b()] {
                if let Ok(p) = probability_view(f) {
                    worst_prob = worst_prob.max((integrate(&p) - 1.0).abs());
                }
            }
        })
        .map_err(|e| e.to_string())?;
    }
    if let Some(f) = failure {
        return Err(f);
    }
    check(
        worst_sigma >= -1e-12 && worst_prob <= 1e-12,
        format!(
            "{states} states over 3 modes: X, Y in [{:.4}, {:.4}], min σ² {worst_sigma:.3e}, probability mass error {worst_prob:.1e}",
            x_range.0, x_range.1
        ),
    )
}

fn constraint_gate() -> Outcome {
    let base = "couplings.c = -1\ncouplings.d = 1\ncouplings.c_e = 0.5\ncouplings.d_e = 0.5\n\
                couplings.c_pe = -1\ncouplings.d_pe = 1\ncouplings.c_v = -1\ncouplings.d_v = 1\n\
                couplings.c_vu = 0.1\ncouplings.d_vu = 0.1\ncouplings.c_xv = 0.1\ncouplings.d_xv = 0.1\n\
                time.dt = 0.001\ntime.steps = 10\nrun.mode = ode-only\node.level = combined\n";
    let cases = [
        ("couplings.c = 1\n", ConstraintId::Omega),
        ("couplings.d_e = -0.5\n", ConstraintId::GammaE),
        ("couplings.c_vu = 1\ncouplings.d_vu = 1\n", ConstraintId::GammaEOverVu),
        (
            "couplings.c_xv = 0.5\ncouplings.d_xv = 0.5\n",
            ConstraintId::GammaEOverXv,
        ),
    ];
    let ok_scenario = Scenario::parse(base).map_err(|e| e.to_string())?;
    if cli::validate(&ok_scenario).1.is_err() {
        return Err("baseline couplings rejected".into());
    }
    let mut named = Vec::new();
    for (patch, id) in cases {
        let text = patch_config(base, patch);
        let s = Scenario::parse(&text).map_err(|e| e.to_string())?;
        let (report, result) = cli::validate(&s);
        match result {
            Err(CliError::Constraint(r)) if r.failed(id) => {}
            other => return Err(format!("{id}: expected a named failure, got {other:?}")),
        }
        let violated = report.lines().find(|l| l.starts_with("violated:")).unwrap_or("");
        if !violated.contains(id.name()) {
            return Err(format!("{id}: report does not name the failure:\n{report}"));
        }
        named.push(id.name());
    }
    Ok(format!("rejected with named failure: {}", named.join("; ")))
}

fn patch_config(base: &str, patch: &str) -> String {
    let keys: Vec<&str> = patch
        .lines()
        .filter_map(|l| l.split('=').next())
        .map(str::trim)
        .collect();
    let mut text: String = base
        .lines()
        .filter(|l| !keys.contains(&l.split('=').next().unwrap_or("").trim()))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(patch);
    text
}

fn performance() -> Outcome {
    let mut s = Scenario::parse(OSCILLATION).map_err(|e| e.to_string())?;
    s.cells = vec![512];
    s.dt = 0.001;
    let s0 = cli::initial_state(&s, Mode::Hierarchy).map_err(|e| e.to_string())?;
    if s0.fields().len() != 14 {
        return Err(format!("hierarchy state has {} fields", s0.fields().len()));
    }
    let cfg = StepConfig::new(s.dt, Mode::Hierarchy);
    let start = Instant::now();
    evolve(s0, &s.couplings, &cfg, 10_000, 100, |_| {}).map_err(|e| e.to_string())?;
    let pde = start.elapsed().as_secs_f64();

    let c = Scenario::parse(LEVEL_C).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = cli::simulate(&c, None).map_err(|e| e.to_string())?;
    let ode = start.elapsed().as_secs_f64();
    if out.series.len() != 1001 {
        return Err(format!("ode-only run recorded {} samples", out.series.len()));
    }
    check(
        pde < 10.0 && ode < 5.0,
        format!("hierarchy 512 cells × 1e4 steps {pde:.2} s (<10), ode-only level C × 1e6 steps {ode:.2} s (<5)"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("mode spectrum, level A", mode_spectrum),
        ("closed form vs integrator", closed_form_oracle),
        ("solution-shape reproduction", solution_shapes),
        ("aggregate-identity suite", identity_suite),
        ("discrete Gauss theorem", gauss_theorem),
        ("frequency recovery", frequency_recovery),
        ("kinetic convergence", kinetic_convergence),
        ("moment sanity", moment_sanity),
        ("constraint gate", constraint_gate),
        ("performance floor", performance),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
