//! Scenario-driven pipelines behind the `ecohydro` binary.

pub mod scenario;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregates::{measure, AggregateSeries, IdentityReport, IdentitySuite};
use crate::analysis::{fit_modes, growth_rate, spectrum};
use crate::espace::{integrate, Field, RiskGrid};
use crate::hydro::snapshot::Snapshot;
use crate::hydro::{step, ConstraintReport, FieldId, HydroError, HydroState, Mode, StepConfig};
use crate::kinetic::{deposit, Ensemble};
use crate::odesys::{integrate_ode_sampled, modes, ClosedForm, LinearSystem, OdeError};

pub use scenario::{Bump, RunMode, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("constraint violation:\n{0}")]
    Constraint(ConstraintReport),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::Io(_) => 1,
            CliError::Constraint(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn ode_error(e: OdeError) -> CliError {
    match e {
        OdeError::Constraint(r) => CliError::Constraint(r),
        OdeError::MissingAggregate(_) | OdeError::Invalid(_) | OdeError::Dimension { .. } => {
            CliError::Config(e.to_string())
        }
        OdeError::StepTooLarge { .. } => CliError::Numerical(e.to_string()),
    }
}

pub fn grid(s: &Scenario) -> Result<Arc<RiskGrid>, CliError> {
    RiskGrid::uniform(&s.bounds, &s.cells)
        .map(Arc::new)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Initial fields: Gaussian bumps over a resting background, the bumps moving
/// with the configured velocities; or
/// a deposited agent ensemble in kinetic-init mode.
pub fn initial_state(s: &Scenario, mode: Mode) -> Result<HydroState, CliError> {
    let g = grid(s)?;
    let (a, pa, b, pb) = if s.mode == RunMode::KineticInit {
        let ensemble = initial_ensemble(s, &g)?;
        if ensemble.arity() < 2 {
            return Err(CliError::Config(
                "ensemble needs two variables (Assets, Revenue)".into(),
            ));
        }
        let (a, pa) = deposit(&ensemble, &g, 0).map_err(|e| CliError::Config(e.to_string()))?;
        let (b, pb) = deposit(&ensemble, &g, 1).map_err(|e| CliError::Config(e.to_string()))?;
        (a, pa, b, pb)
    } else {
        let a = Field::scalar_from_fn(&g, |x| s.init_a.eval(x));
        let b = Field::scalar_from_fn(&g, |x| s.init_b.eval(x));
        let pa = Field::vector_from_fn(&g, |x, out| {
            let rho = s.init_a.moving(x);
            out.iter_mut().zip(&s.v).for_each(|(o, v)| *o = rho * v);
        });
        let pb = Field::vector_from_fn(&g, |x, out| {
            let rho = s.init_b.moving(x);
            out.iter_mut().zip(&s.u).for_each(|(o, u)| *o = rho * u);
        });
        (a, pa, b, pb)
    };
    HydroState::new(a, b, pa, pb, mode).map_err(|e| CliError::Config(e.to_string()))
}

/// Reads `init.ensemble`, or samples `kinetic.particles` agents per side
/// from the initial bumps with the scenario seed.
/// Mean agent velocity reproducing the analytic impulse `moving(x) * v`.
fn moving_velocity(bump: &Bump, v: &[f64], x: &[f64]) -> Vec<f64> {
    let rho = bump.eval(x);
    let share = if rho > 0.0 { bump.moving(x) / rho } else { 0.0 };
    v.iter().map(|c| c * share).collect()
}

pub fn initial_ensemble(s: &Scenario, g: &Arc<RiskGrid>) -> Result<Ensemble, CliError> {
    if let Some(path) = &s.ensemble {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "ensemble file {} does not exist",
                path.display()
            )));
        }
        return Ensemble::read(path, s.dim()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let names = vec!["A".to_string(), "B".to_string()];
    let n = s.particles;
    let mass_a = integrate(&Field::scalar_from_fn(g, |x| s.init_a.eval(x)));
    let mass_b = integrate(&Field::scalar_from_fn(g, |x| s.init_b.eval(x)));
    let assets = Ensemble::sample(
        g,
        n,
        |x| s.init_a.eval(x),
        s.init_a.peak(),
        |x| moving_velocity(&s.init_a, &s.v, x),
        s.velocity_spread,
        &[mass_a / n as f64, 0.0],
        names.clone(),
        &mut rng,
    );
    let revenue = Ensemble::sample(
        g,
        n,
        |x| s.init_b.eval(x),
        s.init_b.peak(),
        |x| moving_velocity(&s.init_b, &s.u, x),
        s.velocity_spread,
        &[0.0, mass_b / n as f64],
        names,
        &mut rng,
    );
    assets.merged(&revenue).map_err(|e| CliError::Config(e.to_string()))
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: AggregateSeries,
    pub summary: String,
    pub final_state: Option<HydroState>,
    pub identities: Option<IdentityReport>,
    /// Matrix listing of the ode-only pipeline.
    pub system: Option<String>,
}

/// Runs the scenario, writing snapshots under `out/snapshots` when `out`
/// is given.
pub fn simulate(s: &Scenario, out: Option<&Path>) -> Result<RunOutput, CliError> {
    match s.mode.hydro_mode() {
        Some(mode) => simulate_pde(s, mode, out),
        None => simulate_ode(s),
    }
}

/// `∫|EA − A|v|²| / ∫A|v|²`; zero when the kinetic energy vanishes.
pub fn closure_gap(state: &HydroState) -> f64 {
    let field = state.field(FieldId::EA);
    let diag = state.diagnostic(FieldId::EA);
    let mut gap = field.clone().into_owned();
    gap.axpy(-1.0, &diag);
    let abs = Field::from_values(gap.grid(), gap.rank(), gap.values().iter().map(|v| v.abs()).collect())
        .expect("same layout");
    let norm = integrate(&diag);
    if norm > 0.0 {
        integrate(&abs) / norm
    } else {
        integrate(&abs)
    }
}

fn hydro_failure(e: HydroError, n: usize) -> CliError {
    match e {
        HydroError::Config(m) => CliError::Config(m),
        other => CliError::Numerical(format!("step {n}: {other}")),
    }
}

fn simulate_pde(s: &Scenario, mode: Mode, out: Option<&Path>) -> Result<RunOutput, CliError> {
    let mut state = initial_state(s, mode)?;
    let cfg = StepConfig {
        dt: s.dt,
        cfl_limit: s.cfl,
        mode,
        negativity_tolerance: s.negativity_tolerance,
    };
    let snap_dir = out.map(|o| o.join("snapshots"));
    if let Some(d) = &snap_dir {
        if s.snapshot_every > 0 || s.final_snapshot {
            fs::create_dir_all(d)?;
        }
    }
    let write_snapshot = |state: &HydroState, name: &str| -> io::Result<()> {
        match &snap_dir {
            Some(d) => fs::write(d.join(name), Snapshot::from_state(state, true).to_text()),
            None => Ok(()),
        }
    };
    let mut series = AggregateSeries::new();
    let mut suite = s.identities.then(|| IdentitySuite::new(s.couplings));
    let mut gap = (0.0f64, 0.0f64);
    let mut observe = |state: &HydroState, n: usize, series: &mut AggregateSeries| -> Result<(), CliError> {
        if let Some(suite) = suite.as_mut() {
            suite.observe(state);
        }
        if n.is_multiple_of(s.stride) {
            series
                .push(measure(state))
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            if mode == Mode::Hierarchy {
                let g = closure_gap(state);
                gap = (gap.0.max(g), g);
            }
        }
        if s.snapshot_every > 0 && n.is_multiple_of(s.snapshot_every) {
            write_snapshot(state, &format!("snapshot_{n:08}.txt"))?;
        }
        Ok(())
    };
    observe(&state, 0, &mut series)?;
    for n in 1..=s.steps {
        state = step(&state, &s.couplings, &cfg).map_err(|e| hydro_failure(e, n))?;
        state.time = n as f64 * s.dt;
        observe(&state, n, &mut series)?;
    }
    if s.final_snapshot {
        write_snapshot(&state, "final.txt")?;
    }
    let identities = suite.map(|x| x.report());
    let mut summary = header(s);
    summary_analysis(s, &series, &mut summary);
    if let Some(r) = &identities {
        let _ = write!(summary, "\n{r}");
    }
    if mode == Mode::Hierarchy {
        let _ = writeln!(
            summary,
            "\nclosure gap ∫|EA − A|v|²| / ∫A|v|²: max {:.6e}, final {:.6e}",
            gap.0, gap.1
        );
    }
    final_values(&series, &mut summary);
    Ok(RunOutput {
        series,
        summary,
        final_state: Some(state),
        identities,
        system: None,
    })
}

fn simulate_ode(s: &Scenario) -> Result<RunOutput, CliError> {
    let state = initial_state(s, Mode::Hierarchy)?;
    let sys = LinearSystem::build_for(&s.couplings, s.level, s.dim(), s.override_constraints).map_err(ode_error)?;
    let y0 = sys.state_from_record(&measure(&state)).map_err(ode_error)?;
    let traj = integrate_ode_sampled(&sys, &y0, s.dt, s.steps, s.stride).map_err(ode_error)?;
    let mut series = AggregateSeries::new();
    for (t, y) in traj.times.iter().zip(&traj.states) {
        series
            .push(sys.record(*t, y))
            .map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    let mut summary = header(s);
    if let Some(step) = traj.truncated_at {
        let _ = writeln!(
            summary,
            "\ntrajectory truncated: non-finite state at step {step} (t = {})",
            step as f64 * s.dt
        );
    }
    let form = ClosedForm::new(&sys, &y0).map_err(ode_error)?;
    if let (Some(t), Some(y)) = (traj.times.last(), traj.states.last()) {
        let exact = form.eval(*t);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let dev = y.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        let _ = writeln!(
            summary,
            "\nclosed form ({} route) vs integrator at t = {t}: max relative deviation {dev:.3e}",
            if form.is_modal() { "modal" } else { "matrix exponential" }
        );
    }
    summary_analysis(s, &series, &mut summary);
    final_values(&series, &mut summary);
    Ok(RunOutput {
        series,
        summary,
        final_state: None,
        identities: None,
        system: Some(sys.dump()),
    })
}

/// All eight inequalities, marking those the scenario's level does not use
/// as `n/a`, followed by the verdict over the level's set.
fn constraint_text(s: &Scenario) -> (String, ConstraintReport) {
    let full = s.couplings.check();
    let report = s.couplings.check_only(s.level.constraints());
    let mut out = format!(
        "constraints (level {} uses {} of {}):\n",
        s.level,
        report.checks.len(),
        full.checks.len()
    );
    for check in &full.checks {
        let status = match (report.checks.iter().any(|c| c.id == check.id), check.passed) {
            (_, true) => "pass",
            (true, false) => "FAIL",
            (false, false) => "n/a",
        };
        let _ = writeln!(out, "{status:<5} {:<24} value = {}", check.id.name(), check.value);
    }
    if report.all_passed() {
        out.push_str("all constraints satisfied\n");
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.id.name()).collect();
        let _ = writeln!(out, "violated: {}", names.join("; "));
    }
    (out, report)
}

fn header(s: &Scenario) -> String {
    let mut out = String::new();
    let join = |v: Vec<String>| v.join(",");
    let _ = writeln!(out, "mode: {}", s.mode);
    let _ = writeln!(
        out,
        "grid: dim={} cells={} bounds={}",
        s.dim(),
        join(s.cells.iter().map(|c| c.to_string()).collect()),
        join(s.bounds.iter().map(|b| b.to_string()).collect())
    );
    let _ = writeln!(
        out,
        "time: dt={} steps={} stride={} seed={}",
        s.dt, s.steps, s.stride, s.seed
    );
    let _ = write!(out, "\n{}", constraint_text(s).0);
    let sys = LinearSystem::build_for(&s.couplings, s.level, 1, true).expect("override build");
    let _ = write!(out, "level {} modes:\n{}", s.level, modes(&sys));
    out
}

fn summary_analysis(s: &Scenario, series: &AggregateSeries, out: &mut String) {
    let t = series.times();
    let k = &s.couplings;
    let Some(a) = series.column("A", 0) else {
        return;
    };
    let _ = writeln!(out, "\nanalysis of A(t):");
    match (k.omega(), k.gamma_e()) {
        (Some(w), Some(g)) => match fit_modes(&t, &a, &[w], &[g]) {
            Ok(fit) => {
                let _ = writeln!(
                    out,
                    "fit on {{1, cos ωt, sin ωt, e^(±γ_e t)}} (ω = {w}, γ_e = {g}):\n{fit}"
                );
                let _ = writeln!(out, "fit residual A: {:.3e}", fit.residual);
            }
            Err(e) => {
                let _ = writeln!(out, "fit skipped: {e}");
            }
        },
        _ => {
            let _ = writeln!(out, "fit skipped: ω or γ_e undefined for these couplings");
        }
    }
    shape_fit(
        series,
        "XA",
        &[k.omega(), k.omega_pe(), k.omega_v()],
        &[k.gamma_e()],
        out,
    );
    shape_fit(
        series,
        "X2A",
        &[k.omega(), k.omega_pe()],
        &[k.gamma_e(), k.gamma_vu(), k.gamma_xv()],
        out,
    );
    match spectrum(&t, &a) {
        Ok(sp) => match sp.dominant() {
            Some(f) => {
                let theory = k.omega().map(|w| format!("{:.6}", w / (2.0 * std::f64::consts::PI)));
                let _ = writeln!(
                    out,
                    "dominant frequency: {f:.6} cycles per unit time (ω/2π = {}; resolution {:.3e})",
                    theory.as_deref().unwrap_or("undefined"),
                    sp.resolution
                );
            }
            None => {
                let _ = writeln!(out, "dominant frequency: none");
            }
        },
        Err(e) => {
            let _ = writeln!(out, "spectrum skipped: {e}");
        }
    }
    if let Some(ea) = series.column("EA", 0) {
        match growth_rate(&t, &ea) {
            Ok(r) => {
                let theory = k.gamma_e().map(|g| g.to_string());
                let _ = writeln!(
                    out,
                    "growth rate of EA: {r:.6} (γ_e = {})",
                    theory.as_deref().unwrap_or("undefined")
                );
            }
            Err(e) => {
                let _ = writeln!(out, "growth rate of EA skipped: {e}");
            }
        }
    }
}

/// Mode-basis fit of a mean-risk aggregate, skipped when the column is
/// absent or a mode is undefined or repeated.
fn shape_fit(series: &AggregateSeries, column: &str, freqs: &[Option<f64>], rates: &[Option<f64>], out: &mut String) {
    let Some(y) = series.column(column, 0) else {
        return;
    };
    let (Some(freqs), Some(rates)) = (
        freqs.iter().copied().collect::<Option<Vec<f64>>>(),
        rates.iter().copied().collect::<Option<Vec<f64>>>(),
    ) else {
        let _ = writeln!(out, "fit of {column} skipped: a mode is undefined for these couplings");
        return;
    };
    match fit_modes(&series.times(), &y, &freqs, &rates) {
        Ok(fit) => {
            let _ = writeln!(out, "fit of {column} on its mode basis:\n{fit}");
            let _ = writeln!(out, "fit residual {column}: {:.3e}", fit.residual);
        }
        Err(e) => {
            let _ = writeln!(out, "fit of {column} skipped: {e}");
        }
    }
}

fn final_values(series: &AggregateSeries, out: &mut String) {
    let Some(last) = series.records().last() else {
        return;
    };
    let _ = writeln!(out, "\nfinal aggregates at t = {}:", last.t);
    for name in ["A", "B", "XPA", "YPB", "EA", "EB", "X", "Y", "sigma2"] {
        match last.get(name) {
            Some(v) => {
                let vals: Vec<String> = v.iter().map(|x| format!("{x:.10e}")).collect();
                let _ = writeln!(out, "  {name:<7} {}", vals.join(" "));
            }
            None => {
                let _ = writeln!(out, "  {name:<7} absent");
            }
        }
    }
}

/// Runs the scenario and writes `aggregates.csv`, `summary.txt`, snapshots
/// and (ode-only) `system.txt` under `out`.
pub fn run(s: &Scenario, out: &Path) -> Result<RunOutput, CliError> {
    fs::create_dir_all(out)?;
    let result = simulate(s, Some(out))?;
    fs::write(out.join("aggregates.csv"), result.series.to_csv())?;
    fs::write(out.join("summary.txt"), &result.summary)?;
    if let Some(sys) = &result.system {
        fs::write(out.join("system.txt"), sys)?;
    }
    Ok(result)
}

/// Constraint report plus scenario lint, without simulating.
pub fn validate(s: &Scenario) -> (String, Result<(), CliError>) {
    let (mut out, report) = constraint_text(s);
    let mut problems = Vec::new();
    if let Some(p) = &s.ensemble {
        if !p.exists() {
            problems.push(format!("ensemble file {} does not exist", p.display()));
        }
    }
    match s.mode.hydro_mode() {
        Some(mode) => match initial_state(s, mode) {
            Ok(state) => {
                let max_dt = state.max_stable_dt(s.cfl);
                if s.dt > max_dt {
                    problems.push(format!("dt = {} exceeds the initial CFL limit {max_dt:.6e}", s.dt));
                }
            }
            Err(e) => problems.push(e.to_string()),
        },
        None => {
            let sys = LinearSystem::build_for(&s.couplings, s.level, s.dim(), true).expect("override build");
            let product = s.dt * sys.spectral_radius();
            if product > 0.1 {
                problems.push(format!("dt * spectral radius = {product:.4} exceeds 0.1"));
            }
        }
    }
    if problems.is_empty() {
        out.push_str("scenario lint: ok\n");
    } else {
        out.push_str("scenario lint:\n");
        for p in &problems {
            let _ = writeln!(out, "  {p}");
        }
    }
    let result = if !report.all_passed() {
        Err(CliError::Constraint(report))
    } else if !problems.is_empty() {
        Err(CliError::Config(problems.join("; ")))
    } else {
        Ok(())
    };
    (out, result)
}

/// Per-aggregate deviation of one PDE run from the ODE prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub label: String,
    /// `max_t |pde − ode| / max_t |ode|`.
    pub relative: f64,
}

/// Hierarchy-mode PDE against the ODE system of the scenario's level, at
/// the scenario resolution and one refinement (cells and dt halved).
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub coarse: Vec<Deviation>,
    pub fine: Vec<Deviation>,
    /// Closure gap per sample `(t, ∫|EA_hierarchy − (A|v|²)_self-consistent|)`.
    pub closure_gap: Option<Vec<(f64, f64)>>,
}

fn deviations(s: &Scenario) -> Result<Vec<Deviation>, CliError> {
    let mut pde = s.clone();
    pde.mode = RunMode::Hierarchy;
    pde.identities = false;
    pde.final_snapshot = false;
    pde.snapshot_every = 0;
    let pde_run = simulate(&pde, None)?;
    let state = initial_state(&pde, Mode::Hierarchy)?;
    let sys = LinearSystem::build_for(&s.couplings, s.level, s.dim(), true).map_err(ode_error)?;
    let y0 = sys.state_from_record(&measure(&state)).map_err(ode_error)?;
    let form = ClosedForm::new(&sys, &y0).map_err(ode_error)?;
    let records = pde_run.series.records();
    let mut out = Vec::new();
    for (i, label) in sys.labels.iter().enumerate() {
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for r in records {
            let exact = form.eval(r.t)[i];
            let got = sys
                .state_from_record(r)
                .map_err(ode_error)?
                .get(i)
                .copied()
                .unwrap_or(f64::NAN);
            err = err.max((got - exact).abs());
            scale = scale.max(exact.abs());
        }
        out.push(Deviation {
            label: label.clone(),
            relative: if scale > 0.0 { err / scale } else { err },
        });
    }
    Ok(out)
}

pub fn compare(s: &Scenario) -> Result<Comparison, CliError> {
    let coarse = deviations(s)?;
    let mut refined = s.clone();
    refined.cells = s.cells.iter().map(|c| 2 * c).collect();
    refined.dt = s.dt / 2.0;
    refined.steps = 2 * s.steps;
    refined.stride = 2 * s.stride;
    let fine = deviations(&refined)?;
    let closure_gap = if s.mode == RunMode::SelfConsistent {
        let mut h = s.clone();
        h.mode = RunMode::Hierarchy;
        h.identities = false;
        h.final_snapshot = false;
        let mut hs = initial_state(&h, Mode::Hierarchy)?;
        let mut ss = initial_state(s, Mode::SelfConsistent)?;
        let hc = StepConfig {
            dt: s.dt,
            cfl_limit: s.cfl,
            mode: Mode::Hierarchy,
            negativity_tolerance: s.negativity_tolerance,
        };
        let sc = StepConfig {
            mode: Mode::SelfConsistent,
            ..hc
        };
        let gap = |h: &HydroState, s: &HydroState| {
            let mut d = h.field(FieldId::EA).into_owned();
            d.axpy(-1.0, &s.diagnostic(FieldId::EA));
            d.values().iter().map(|v| v.abs()).sum::<f64>() * d.grid().cell_volume()
        };
        let mut series = vec![(0.0, gap(&hs, &ss))];
        for n in 1..=s.steps {
            hs = step(&hs, &s.couplings, &hc).map_err(|e| hydro_failure(e, n))?;
            ss = step(&ss, &s.couplings, &sc).map_err(|e| hydro_failure(e, n))?;
            if n % s.stride == 0 {
                series.push((n as f64 * s.dt, gap(&hs, &ss)));
            }
        }
        Some(series)
    } else {
        None
    };
    Ok(Comparison {
        coarse,
        fine,
        closure_gap,
    })
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "hierarchy PDE vs ODE: max relative deviation per aggregate")?;
        writeln!(f, "{:<8} {:>14} {:>14} {:>8}", "label", "coarse", "refined", "ratio")?;
        for (c, r) in self.coarse.iter().zip(&self.fine) {
            let ratio = if r.relative > 0.0 {
                format!("{:.3}", c.relative / r.relative)
            } else {
                "-".to_string()
            };
            writeln!(
                f,
                "{:<8} {:>14.6e} {:>14.6e} {:>8}",
                c.label, c.relative, r.relative, ratio
            )?;
        }
        if let Some(gap) = &self.closure_gap {
            writeln!(f, "\nclosure gap ∫|EA_hierarchy − A|v|²_self-consistent|:")?;
            let max = gap.iter().fold(0.0f64, |m, g| m.max(g.1));
            if let (Some(first), Some(last)) = (gap.first(), gap.last()) {
                writeln!(f, "  t = {}: {:.6e}", first.0, first.1)?;
                writeln!(f, "  t = {}: {:.6e}", last.0, last.1)?;
            }
            writeln!(f, "  max {max:.6e}")?;
        }
        Ok(())
    }
}

/// Spectrum, growth rate and optional mode fit of one CSV column.
pub fn analyze(
    csv: &str,
    column: &str,
    component: usize,
    frequencies: &[f64],
    rates: &[f64],
) -> Result<String, CliError> {
    let series = AggregateSeries::from_csv(csv).map_err(|e| CliError::Config(e.to_string()))?;
    let values = series
        .column(column, component)
        .ok_or_else(|| CliError::Config(format!("column {column} (component {}) is absent", component + 1)))?;
    let t = series.times();
    let mut out = format!("column {column}, {} samples\n", values.len());
    match spectrum(&t, &values) {
        Ok(sp) => {
            let _ = writeln!(out, "trend rate removed: {}", sp.trend_rate);
            let _ = writeln!(out, "peaks (cycles per unit time, smoothed power):");
            for p in sp.peaks.iter().take(5) {
                let _ = writeln!(out, "  {:.6} {:.6e}", p.frequency, p.power);
            }
            let _ = writeln!(out, "median power {:.6e}", sp.median_power);
        }
        Err(e) => {
            let _ = writeln!(out, "spectrum skipped: {e}");
        }
    }
    match growth_rate(&t, &values) {
        Ok(r) => {
            let _ = writeln!(out, "growth rate: {r:.6}");
        }
        Err(e) => {
            let _ = writeln!(out, "growth rate skipped: {e}");
        }
    }
    if !frequencies.is_empty() || !rates.is_empty() {
        let fit = fit_modes(&t, &values, frequencies, rates).map_err(|e| CliError::Config(e.to_string()))?;
        let _ = write!(out, "fit:\n{fit}");
    }
    Ok(out)
}
