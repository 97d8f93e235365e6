//! Reduced linear systems `y' = M y` for the aggregates, with closed-form
//! solutions and mode analysis.
//!
//! The matrix is assembled from [`EQUATIONS`], a single table listing every
//! nonzero coefficient with the identity it comes from, so the audit listing
//! and the matrix can never disagree.

use std::fmt::{self, Write as _};

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::aggregates::{column_index, AggregateRecord, Kind, COLUMNS};
use crate::hydro::{ConstraintId, ConstraintReport, CouplingSet};

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("coupling constraints violated:\n{0}")]
    Constraint(ConstraintReport),
    #[error("dt * spectral radius = {product} exceeds the accuracy guard 0.1 (dt = {dt})")]
    StepTooLarge { dt: f64, product: f64 },
    #[error("state has {got} entries, system has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("initial aggregate {0} is not available")]
    MissingAggregate(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Which block of aggregates a system tracks.
///
/// `A` holds `[A, B, XPA, YPB, EA, EB]`; `B` adds the mean-risk block; `C`
/// adds the mean-square block to `A`; `Combined` holds all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    A,
    B,
    C,
    Combined,
}

impl Level {
    pub fn parse(s: &str) -> Option<Level> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Level::A),
            "b" => Some(Level::B),
            "c" => Some(Level::C),
            "combined" | "all" => Some(Level::Combined),
            _ => None,
        }
    }

    fn blocks(self) -> &'static [Block] {
        match self {
            Level::A => &[Block::A],
            Level::B => &[Block::A, Block::B],
            Level::C => &[Block::A, Block::C],
            Level::Combined => &[Block::A, Block::B, Block::C],
        }
    }

    /// Constraints the level's modes depend on.
    pub fn constraints(self) -> &'static [ConstraintId] {
        use ConstraintId::*;
        match self {
            Level::A => &[Omega, GammaE],
            Level::B => &[Omega, GammaE, OmegaPe, OmegaV],
            Level::C => &[Omega, GammaE, OmegaPe, GammaVu, GammaXv, GammaEOverVu, GammaEOverXv],
            Level::Combined => &ConstraintId::ALL,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::A => "A",
            Level::B => "B",
            Level::C => "C",
            Level::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    A,
    B,
    C,
}

const BLOCK_A: [&str; 6] = ["A", "B", "XPA", "YPB", "EA", "EB"];
const BLOCK_B: [&str; 12] = [
    "XA", "YB", "PA", "PB", "XP", "YP", "XE", "YE", "PEA", "PEB", "VXPA", "UYPB",
];
const BLOCK_C: [&str; 12] = [
    "X2A", "Y2B", "XPAX2", "YPBY2", "X2EA", "Y2EB", "XPEA", "YPEB", "V4A", "U4B", "XVA", "YUB",
];

/// Coefficient of one matrix entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coef {
    One,
    Two,
    Coupling(&'static str),
}

impl Coef {
    fn value(self, k: &CouplingSet) -> f64 {
        match self {
            Coef::One => 1.0,
            Coef::Two => 2.0,
            Coef::Coupling(name) => k.get(name).expect("coupling names in the table are valid"),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Coef::One => "1",
            Coef::Two => "2",
            Coef::Coupling(name) => name,
        }
    }
}

/// `d/dt row += coef * column`.
#[derive(Debug, Clone, Copy)]
pub struct Equation {
    pub row: &'static str,
    pub column: &'static str,
    pub coef: Coef,
    pub source: &'static str,
}

const fn eq(row: &'static str, column: &'static str, coef: Coef, source: &'static str) -> Equation {
    Equation {
        row,
        column,
        coef,
        source,
    }
}

use Coef::{Coupling as K, One, Two};

/// Every nonzero coefficient of the reduced systems.
pub const EQUATIONS: [Equation; 50] = [
    // aggregate Assets and Revenue
    eq("A", "YPB", K("a"), "mass balance"),
    eq("B", "XPA", K("b"), "mass balance"),
    eq("XPA", "EA", One, "impulse balance"),
    eq("XPA", "YPB", K("c"), "impulse balance"),
    eq("YPB", "EB", One, "impulse balance"),
    eq("YPB", "XPA", K("d"), "impulse balance"),
    eq("EA", "EB", K("c_e"), "energy exchange"),
    eq("EB", "EA", K("d_e"), "energy exchange"),
    // mean risks, one copy per axis
    eq("XA", "PA", One, "mean-risk drift"),
    eq("XA", "YP", K("a"), "mean-risk drift"),
    eq("YB", "PB", One, "mean-risk drift"),
    eq("YB", "XP", K("b"), "mean-risk drift"),
    eq("PA", "PB", K("c"), "impulse exchange"),
    eq("PB", "PA", K("d"), "impulse exchange"),
    eq("XP", "XE", One, "risk-weighted impulse"),
    eq("XP", "VXPA", One, "risk-weighted impulse"),
    eq("XP", "YP", K("c"), "risk-weighted impulse"),
    eq("YP", "YE", One, "risk-weighted impulse"),
    eq("YP", "UYPB", One, "risk-weighted impulse"),
    eq("YP", "XP", K("d"), "risk-weighted impulse"),
    eq("XE", "PEA", One, "risk-weighted energy"),
    eq("XE", "YE", K("c_e"), "risk-weighted energy"),
    eq("YE", "PEB", One, "risk-weighted energy"),
    eq("YE", "XE", K("d_e"), "risk-weighted energy"),
    eq("PEA", "PEB", K("c_pe"), "energy-flow exchange"),
    eq("PEB", "PEA", K("d_pe"), "energy-flow exchange"),
    eq("VXPA", "UYPB", K("c_v"), "velocity-flux exchange"),
    eq("UYPB", "VXPA", K("d_v"), "velocity-flux exchange"),
    // mean square risks
    eq("X2A", "XPA", Two, "square-risk drift"),
    eq("X2A", "YPBY2", K("a"), "square-risk drift"),
    eq("Y2B", "YPB", Two, "square-risk drift"),
    eq("Y2B", "XPAX2", K("b"), "square-risk drift"),
    eq("XPAX2", "X2EA", One, "square-weighted impulse"),
    eq("XPAX2", "XVA", Two, "square-weighted impulse"),
    eq("XPAX2", "YPBY2", K("c"), "square-weighted impulse"),
    eq("YPBY2", "Y2EB", One, "square-weighted impulse"),
    eq("YPBY2", "YUB", Two, "square-weighted impulse"),
    eq("YPBY2", "XPAX2", K("d"), "square-weighted impulse"),
    eq("X2EA", "XPEA", Two, "square-weighted energy"),
    eq("X2EA", "Y2EB", K("c_e"), "square-weighted energy"),
    eq("Y2EB", "YPEB", Two, "square-weighted energy"),
    eq("Y2EB", "X2EA", K("d_e"), "square-weighted energy"),
    eq("XPEA", "V4A", One, "energy-flow moment"),
    eq("XPEA", "YPEB", K("c_pe"), "energy-flow moment"),
    eq("YPEB", "U4B", One, "energy-flow moment"),
    eq("YPEB", "XPEA", K("d_pe"), "energy-flow moment"),
    eq("V4A", "U4B", K("c_vu"), "fourth-power exchange"),
    eq("U4B", "V4A", K("d_vu"), "fourth-power exchange"),
    eq("XVA", "YUB", K("c_xv"), "velocity-risk exchange"),
    eq("YUB", "XVA", K("d_xv"), "velocity-risk exchange"),
];

fn block_of(name: &str) -> Block {
    if BLOCK_A.contains(&name) {
        Block::A
    } else if BLOCK_B.contains(&name) {
        Block::B
    } else {
        Block::C
    }
}

/// One assembled matrix entry with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub row: String,
    pub column: String,
    pub coef: &'static str,
    pub value: f64,
    pub source: &'static str,
}

/// Constant-coefficient system `y' = M y` over labeled aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub labels: Vec<String>,
    pub matrix: DMatrix<f64>,
    pub level: Level,
    pub dim: usize,
    pub couplings: CouplingSet,
    pub audit: Vec<AuditEntry>,
}

fn component_label(name: &str, k: usize, dim: usize) -> String {
    if dim == 1 {
        name.to_string()
    } else {
        format!("{name}_{}", k + 1)
    }
}

impl LinearSystem {
    /// Builds the one-axis system after checking the level's constraints.
    pub fn build(couplings: &CouplingSet, level: Level) -> Result<Self, OdeError> {
        Self::build_for(couplings, level, 1, false)
    }

    /// Builds without the constraint check (exploratory runs).
    pub fn build_unchecked(couplings: &CouplingSet, level: Level) -> Self {
        Self::build_for(couplings, level, 1, true).expect("override skips the only failure")
    }

    /// Builds for `dim` risk axes; the mean-risk block is copied per axis.
    pub fn build_for(
        couplings: &CouplingSet,
        level: Level,
        dim: usize,
        override_constraints: bool,
    ) -> Result<Self, OdeError> {
        if dim == 0 {
            return Err(OdeError::Invalid("dimension must be at least 1".into()));
        }
        if !override_constraints {
            let report = couplings.check_only(level.constraints());
            if !report.all_passed() {
                return Err(OdeError::Constraint(report));
            }
        }
        let blocks = level.blocks();
        let mut labels = Vec::new();
        for &block in blocks {
            match block {
                Block::A => labels.extend(BLOCK_A.iter().map(|s| s.to_string())),
                Block::B => {
                    for name in BLOCK_B {
                        labels.extend((0..dim).map(|k| component_label(name, k, dim)));
                    }
                }
                Block::C => labels.extend(BLOCK_C.iter().map(|s| s.to_string())),
            }
        }
        let n = labels.len();
        let index = |label: &str| labels.iter().position(|l| l == label);
        let mut matrix = DMatrix::zeros(n, n);
        let mut audit = Vec::new();
        for e in EQUATIONS.iter().filter(|e| blocks.contains(&block_of(e.row))) {
            let copies = if block_of(e.row) == Block::B { dim } else { 1 };
            for k in 0..copies {
                let (row, col) = if copies == 1 {
                    (e.row.to_string(), e.column.to_string())
                } else {
                    (component_label(e.row, k, dim), component_label(e.column, k, dim))
                };
                let (i, j) = (index(&row).expect("row label"), index(&col).expect("column label"));
                let value = e.coef.value(couplings);
                matrix[(i, j)] += value;
                audit.push(AuditEntry {
                    row,
                    column: col,
                    coef: e.coef.label(),
                    value,
                    source: e.source,
                });
            }
        }
        Ok(LinearSystem {
            labels,
            matrix,
            level,
            dim,
            couplings: *couplings,
            audit,
        })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Row of the matrix by label.
    pub fn row(&self, label: &str) -> Option<Vec<f64>> {
        self.index(label).map(|i| self.matrix.row(i).iter().copied().collect())
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(y)).iter().copied().collect()
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        if self.size() == 0 {
            return Vec::new();
        }
        self.matrix.clone().complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Initial state read from measured aggregates.
    pub fn state_from_record(&self, record: &AggregateRecord) -> Result<Vec<f64>, OdeError> {
        self.labels
            .iter()
            .map(|label| {
                let (name, k) = split_label(label);
                record
                    .get(name)
                    .and_then(|v| v.get(k).copied())
                    .ok_or_else(|| OdeError::MissingAggregate(label.clone()))
            })
            .collect()
    }

    /// Record holding the tracked aggregates (others absent), with mean
    /// risks derived where their inputs are present.
    pub fn record(&self, t: f64, y: &[f64]) -> AggregateRecord {
        let mut r = AggregateRecord::empty(t, self.dim);
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        for (label, &value) in self.labels.iter().zip(y) {
            let (name, k) = split_label(label);
            let col = column_index(name).expect("system labels are aggregate columns");
            let width = match COLUMNS[col].1 {
                Kind::Scalar => 1,
                Kind::Vector => self.dim,
            };
            let slot = match pending.iter().position(|(c, _)| *c == col) {
                Some(p) => p,
                None => {
                    pending.push((col, vec![0.0; width]));
                    pending.len() - 1
                }
            };
            pending[slot].1[k] = value;
        }
        for (col, values) in pending {
            r.set(COLUMNS[col].0, values);
        }
        r.derive_mean_risks();
        r
    }

    /// Aligned matrix listing followed by the coefficient table.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# level {} system, {} states", self.level, self.size());
        let width = self.labels.iter().map(String::len).max().unwrap_or(1).max(9);
        let _ = write!(out, "{:>width$}", "");
        for l in &self.labels {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(out, "{l:>width$}");
            for j in 0..self.size() {
                let v = self.matrix[(i, j)];
                if v == 0.0 {
                    let _ = write!(out, " {:>width$}", "0");
                } else {
                    let _ = write!(out, " {v:>width$.4}");
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\n# d/dt row += coef * column");
        for e in &self.audit {
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:<5} {:>12.6} {}",
                e.row, e.column, e.coef, e.value, e.source
            );
        }
        out
    }
}

fn split_label(label: &str) -> (&str, usize) {
    match label.rsplit_once('_') {
        Some((name, k)) if column_index(name).is_some() => match k.parse::<usize>() {
            Ok(k) if k >= 1 => (name, k - 1),
            _ => (label, 0),
        },
        _ => (label, 0),
    }
}

/// Numerical trajectory from the fourth-order Runge-Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Step at which a non-finite value stopped the integration.
    pub truncated_at: Option<usize>,
}

/// Sparse row form of `M` used by the integrator.
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    fn new(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, v)| v * y[j]).sum();
        }
    }
}

/// Integrates with classical RK4, recording every step.
pub fn integrate_ode(sys: &LinearSystem, y0: &[f64], dt: f64, steps: usize) -> Result<Trajectory, OdeError> {
    integrate_ode_sampled(sys, y0, dt, steps, 1)
}

/// Integrates with classical RK4, recording the initial state and every
/// `stride`-th step.
pub fn integrate_ode_sampled(
    sys: &LinearSystem,
    y0: &[f64],
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Trajectory, OdeError> {
    if y0.len() != sys.size() {
        return Err(OdeError::Dimension {
            expected: sys.size(),
            got: y0.len(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(OdeError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let product = dt * sys.spectral_radius();
    if product > 0.1 {
        return Err(OdeError::StepTooLarge { dt, product });
    }
    let stride = stride.max(1);
    let m = SparseRows::new(&sys.matrix);
    let n = sys.size();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![y.clone()],
        truncated_at: None,
    };
    for step in 1..=steps {
        m.apply(&y, &mut k1);
        axpy_into(&y, 0.5 * dt, &k1, &mut tmp);
        m.apply(&tmp, &mut k2);
        axpy_into(&y, 0.5 * dt, &k2, &mut tmp);
        m.apply(&tmp, &mut k3);
        axpy_into(&y, dt, &k3, &mut tmp);
        m.apply(&tmp, &mut k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            traj.truncated_at = Some(step);
            break;
        }
        if step % stride == 0 {
            traj.times.push(step as f64 * dt);
            traj.states.push(y.clone());
        }
    }
    Ok(traj)
}

fn axpy_into(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for i in 0..y.len() {
        out[i] = y[i] + a * x[i];
    }
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigenvalue cluster: mean value and multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen {
    pub value: Complex<f64>,
    pub multiplicity: usize,
}

fn cluster(values: &[Complex<f64>], tol: f64) -> Vec<(Complex<f64>, Vec<usize>)> {
    let mut clusters: Vec<(Complex<f64>, Vec<usize>)> = Vec::new();
    for (i, &z) in values.iter().enumerate() {
        match clusters.iter_mut().find(|(c, _)| (*c - z).norm() <= tol) {
            Some((c, members)) => {
                members.push(i);
                let k = members.len() as f64;
                *c = (*c * (k - 1.0) + z) / k;
            }
            None => clusters.push((z, vec![i])),
        }
    }
    clusters
}

/// Closed-form solution `y(t) = exp(M t) y0`.
///
/// When `M` has a full set of eigenvectors the solution is a sum of modes
/// `c_k e^{λ_k t} v_k`. Defective or badly conditioned spectra fall back to
/// the Padé matrix exponential.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    y0: Vec<f64>,
    matrix: DMatrix<f64>,
    modes: Option<Modal>,
}

#[derive(Debug, Clone)]
struct Modal {
    eigenvalues: Vec<Complex<f64>>,
    /// Column `k` is eigenvector `k` scaled by its coefficient.
    weighted: DMatrix<Complex<f64>>,
}

impl ClosedForm {
    pub fn new(sys: &LinearSystem, y0: &[f64]) -> Result<Self, OdeError> {
        if y0.len() != sys.size() {
            return Err(OdeError::Dimension {
                expected: sys.size(),
                got: y0.len(),
            });
        }
        Ok(Self {
            y0: y0.to_vec(),
            matrix: sys.matrix.clone(),
            modes: modal_decomposition(&sys.matrix, y0),
        })
    }

    /// Whether the modal (eigenvector) route is in use.
    pub fn is_modal(&self) -> bool {
        self.modes.is_some()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        if t == 0.0 {
            return self.y0.clone();
        }
        match &self.modes {
            Some(m) => {
                let n = self.y0.len();
                let mut out = vec![0.0; n];
                for (k, &lambda) in m.eigenvalues.iter().enumerate() {
                    let e = (lambda * t).exp();
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += (m.weighted[(i, k)] * e).re;
                    }
                }
                out
            }
            None => {
                let y = expm(&(&self.matrix * t)) * DVector::from_column_slice(&self.y0);
                y.iter().copied().collect()
            }
        }
    }

    /// Modal terms of one state entry: `(λ, amplitude)` with the entry equal
    /// to `Re Σ amplitude e^{λ t}`. `None` on the fallback route.
    pub fn terms(&self, index: usize) -> Option<Vec<(Complex<f64>, Complex<f64>)>> {
        let m = self.modes.as_ref()?;
        Some(
            m.eigenvalues
                .iter()
                .enumerate()
                .map(|(k, &l)| (l, m.weighted[(index, k)]))
                .collect(),
        )
    }
}

/// Convenience wrapper: `exp(M t) y0`.
pub fn closed_form(sys: &LinearSystem, y0: &[f64], t: f64) -> Result<Vec<f64>, OdeError> {
    Ok(ClosedForm::new(sys, y0)?.eval(t))
}

fn modal_decomposition(m: &DMatrix<f64>, y0: &[f64]) -> Option<Modal> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let scale = m.amax().max(1.0);
    let values: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    let mc: DMatrix<Complex<f64>> = m.map(|v| Complex::new(v, 0.0));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors: Vec<DVector<Complex<f64>>> = Vec::with_capacity(n);
    for (center, members) in cluster(&values, 1e-6 * scale) {
        let shifted = &mc - DMatrix::<Complex<f64>>::identity(n, n) * center;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.as_ref()?;
        let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] < 1e-8 * scale).collect();
        if null.len() != members.len() {
            return None;
        }
        for i in null {
            eigenvalues.push(center);
            vectors.push(v_t.row(i).adjoint());
        }
    }
    let v = DMatrix::from_columns(&vectors);
    let sv = v.clone().svd(false, false).singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if !(smin > 0.0) || smax / smin > 1e10 {
        return None;
    }
    let rhs = DVector::from_iterator(n, y0.iter().map(|&v| Complex::new(v, 0.0)));
    let coeffs = v.clone().lu().solve(&rhs)?;
    let recon = &v * &coeffs;
    let ynorm = y0.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    if recon
        .iter()
        .zip(y0)
        .any(|(r, &y)| (r.re - y).abs() > 1e-10 * ynorm.max(1.0) || r.im.abs() > 1e-8 * ynorm.max(1.0))
    {
        return None;
    }
    let mut weighted = v;
    for (k, c) in coeffs.iter().enumerate() {
        let mut col = weighted.column_mut(k);
        col *= *c;
    }
    Some(Modal { eigenvalues, weighted })
}

/// A frequency or growth increment predicted by the couplings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalMode {
    pub name: &'static str,
    pub value: f64,
    pub oscillatory: bool,
    pub found: bool,
}

/// Spectrum of a system matched against its predicted modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub eigenvalues: Vec<Eigen>,
    pub theoretical: Vec<TheoreticalMode>,
}

impl ModeSet {
    pub fn all_found(&self) -> bool {
        self.theoretical.iter().all(|m| m.found)
    }

    pub fn contains(&self, z: Complex<f64>, tol: f64) -> bool {
        self.eigenvalues.iter().any(|e| (e.value - z).norm() <= tol)
    }
}

impl fmt::Display for ModeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eigenvalues:")?;
        for e in &self.eigenvalues {
            writeln!(f, "  {:+.10} {:+.10}i  (x{})", e.value.re, e.value.im, e.multiplicity)?;
        }
        writeln!(f, "theoretical modes:")?;
        for m in &self.theoretical {
            writeln!(
                f,
                "  {:<6} = {:.10} {:<12} {}",
                m.name,
                m.value,
                if m.oscillatory { "(frequency)" } else { "(increment)" },
                if m.found { "found" } else { "MISSING" }
            )?;
        }
        Ok(())
    }
}

/// Tolerance for matching predicted modes against eigenvalues.
pub const MODE_TOL: f64 = 1e-9;

pub fn modes(sys: &LinearSystem) -> ModeSet {
    let values = sys.eigenvalues();
    let scale = sys.matrix.amax().max(1.0);
    let mut eigenvalues: Vec<Eigen> = cluster(&values, 1e-6 * scale)
        .into_iter()
        .map(|(value, members)| Eigen {
            value,
            multiplicity: members.len(),
        })
        .collect();
    eigenvalues.sort_by(|a, b| {
        (a.value.re, a.value.im)
            .partial_cmp(&(b.value.re, b.value.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let k = &sys.couplings;
    let candidates: [(&'static str, Option<f64>, bool, ConstraintId); 6] = [
        ("ω", k.omega(), true, ConstraintId::Omega),
        ("γ_e", k.gamma_e(), false, ConstraintId::GammaE),
        ("ω_pe", k.omega_pe(), true, ConstraintId::OmegaPe),
        ("ω_v", k.omega_v(), true, ConstraintId::OmegaV),
        ("γ_vu", k.gamma_vu(), false, ConstraintId::GammaVu),
        ("γ_xv", k.gamma_xv(), false, ConstraintId::GammaXv),
    ];
    let relevant = sys.level.constraints();
    let theoretical = candidates
        .iter()
        .filter(|(_, _, _, id)| relevant.contains(id))
        .filter_map(|&(name, value, oscillatory, _)| {
            let value = value?;
            let tol = MODE_TOL * value.max(1.0);
            let found = values.iter().any(|z| {
                if oscillatory {
                    z.re.abs() <= tol && (z.im.abs() - value).abs() <= tol
                } else {
                    z.im.abs() <= tol && (z.re.abs() - value).abs() <= tol
                }
            });
            Some(TheoreticalMode {
                name,
                value,
                oscillatory,
                found,
            })
        })
        .collect();
    ModeSet {
        eigenvalues,
        theoretical,
    }
}

/// Evaluates every coupling constraint.
pub fn check_constraints(couplings: &CouplingSet) -> ConstraintReport {
    couplings.check()
}

/// Coefficients of `A(t) = c1 + c2 cos ωt + c3 sin ωt + c4 e^{γt} + c5 e^{-γt}`.
pub type AssetsShape = [f64; 5];

/// The five Assets coefficients computed directly from the initial
/// aggregates `[A, B, XPA, YPB, EA, EB]` by solving the level-A equations
/// block by block. Requires `cd < 0` and `c_e d_e > 0`.
pub fn assets_shape_from_initial(k: &CouplingSet, y0: &[f64; 6]) -> Option<AssetsShape> {
    let omega = k.omega()?;
    let gamma = k.gamma_e()?;
    let [a0, _b0, xpa0, ypb0, ea0, eb0] = *y0;
    // EA = α+ e^{γt} + α- e^{-γt}, EB = β+ e^{γt} + β- e^{-γt}
    let alpha_p = 0.5 * (ea0 + k.c_e * eb0 / gamma);
    let alpha_m = 0.5 * (ea0 - k.c_e * eb0 / gamma);
    let beta_p = 0.5 * (eb0 + k.d_e * ea0 / gamma);
    let beta_m = 0.5 * (eb0 - k.d_e * ea0 / gamma);
    // particular YPB response q e^{λt} to the energy forcing
    let denom = gamma * gamma + omega * omega;
    let q_p = (gamma * beta_p + k.d * alpha_p) / denom;
    let q_m = (-gamma * beta_m + k.d * alpha_m) / denom;
    // homogeneous YPB = C1 cos ωt + C2 sin ωt
    let c1 = ypb0 - q_p - q_m;
    let ypb_rate0 = eb0 + k.d * xpa0;
    let c2 = (ypb_rate0 - gamma * q_p + gamma * q_m) / omega;
    // A = A0 + a ∫ YPB
    Some([
        a0 + k.a * (c2 / omega - q_p / gamma + q_m / gamma),
        -k.a * c2 / omega,
        k.a * c1 / omega,
        k.a * q_p / gamma,
        -k.a * q_m / gamma,
    ])
}

/// The same five coefficients read off the modal decomposition.
pub fn assets_shape_from_modes(sys: &LinearSystem, form: &ClosedForm) -> Option<AssetsShape> {
    let k = &sys.couplings;
    let omega = k.omega()?;
    let gamma = k.gamma_e()?;
    let terms = form.terms(sys.index("A")?)?;
    let tol = 1e-6 * sys.matrix.amax().max(1.0);
    let mut out = [0.0; 5];
    for (lambda, amp) in terms {
        if lambda.norm() <= tol {
            out[0] += amp.re;
        } else if lambda.re.abs() <= tol && (lambda.im.abs() - omega).abs() <= tol {
            // Re(amp e^{iθ}) = amp.re cos θ - amp.im sin θ, θ = ±ωt
            out[1] += amp.re;
            out[2] -= amp.im * lambda.im.signum();
        } else if lambda.im.abs() <= tol && (lambda.re - gamma).abs() <= tol {
            out[3] += amp.re;
        } else if lambda.im.abs() <= tol && (lambda.re + gamma).abs() <= tol {
            out[4] += amp.re;
        } else if amp.norm() > 1e-12 {
            return None;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_a_couplings() -> CouplingSet {
        CouplingSet {
            a: 1.0,
            b: 0.5,
            c: -1.0,
            d: 1.0,
            c_e: 0.5,
            d_e: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn equation_table_rows_exist() {
        for e in &EQUATIONS {
            assert!(column_index(e.row).is_some(), "{}", e.row);
            assert!(column_index(e.column).is_some(), "{}", e.column);
            assert_eq!(
                block_of(e.row) == Block::B,
                block_of(e.column) == Block::B,
                "{} <- {}",
                e.row,
                e.column
            );
        }
    }

    #[test]
    fn level_sizes() {
        let k = CouplingSet::default();
        assert_eq!(LinearSystem::build_unchecked(&k, Level::A).size(), 6);
        assert_eq!(LinearSystem::build_unchecked(&k, Level::B).size(), 18);
        assert_eq!(LinearSystem::build_unchecked(&k, Level::C).size(), 18);
        assert_eq!(LinearSystem::build_unchecked(&k, Level::Combined).size(), 30);
        let two = LinearSystem::build_for(&k, Level::Combined, 2, true).unwrap();
        assert_eq!(two.size(), 42);
        assert!(two.index("PEA_2").is_some());
    }

    #[test]
    fn level_a_rows() {
        let k = CouplingSet {
            a: 0.0,
            b: 0.0,
            ..level_a_couplings()
        };
        let sys = LinearSystem::build(&k, Level::A).unwrap();
        assert_eq!(sys.row("A").unwrap(), vec![0.0; 6]);
        assert_eq!(sys.row("B").unwrap(), vec![0.0; 6]);
        let full = LinearSystem::build(&level_a_couplings(), Level::A).unwrap();
        assert_eq!(full.row("XPA").unwrap(), vec![0.0, 0.0, 0.0, -1.0, 1.0, 0.0]);
        assert_eq!(full.row("A").unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_oscillation_spectrum() {
        let k = CouplingSet {
            c: -1.0,
            d: 1.0,
            ..Default::default()
        };
        let sys = LinearSystem::build_unchecked(&k, Level::A);
        let mut ev = sys.eigenvalues();
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ev[0] - Complex::new(0.0, -1.0)).norm() < 1e-12);
        assert!((ev[5] - Complex::new(0.0, 1.0)).norm() < 1e-12);
        for z in &ev[1..5] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn constraint_refusal_names_inequality() {
        let k = CouplingSet {
            c: 1.0,
            d: 1.0,
            ..level_a_couplings()
        };
        match LinearSystem::build(&k, Level::A) {
            Err(OdeError::Constraint(r)) => assert!(r.failed(ConstraintId::Omega)),
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(LinearSystem::build_for(&k, Level::A, 1, true).is_ok());
    }

    #[test]
    fn modes_examples() {
        let k = CouplingSet {
            c: -4.0,
            d: 1.0,
            c_e: 1.0,
            d_e: 1.0,
            ..Default::default()
        };
        let m = modes(&LinearSystem::build(&k, Level::A).unwrap());
        assert!(m.contains(Complex::new(0.0, 2.0), 1e-9));
        assert!(m.contains(Complex::new(0.0, -2.0), 1e-9));
        assert!(m.all_found(), "{m}");

        let k = CouplingSet {
            c_vu: 1.0,
            d_vu: 4.0,
            ..Default::default()
        };
        let m = modes(&LinearSystem::build_unchecked(&k, Level::C));
        assert!(m.contains(Complex::new(2.0, 0.0), 1e-9));
        assert!(m.contains(Complex::new(-2.0, 0.0), 1e-9));

        let m = modes(&LinearSystem::build_unchecked(&CouplingSet::default(), Level::Combined));
        assert_eq!(m.eigenvalues.len(), 1);
        assert!(m.eigenvalues[0].value.norm() < 1e-12);
        assert_eq!(m.eigenvalues[0].multiplicity, 30);
    }

    #[test]
    fn zero_matrix_trajectory_is_constant() {
        let sys = LinearSystem::build_unchecked(&CouplingSet::default(), Level::A);
        let y0 = [1.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        let traj = integrate_ode(&sys, &y0, 0.1, 20).unwrap();
        // XPA' = EA = 0 here, so everything stays put
        for s in &traj.states {
            assert_eq!(s.as_slice(), &y0);
        }
    }

    #[test]
    fn energy_block_grows_exponentially() {
        let k = CouplingSet {
            c_e: 0.25,
            d_e: 0.25,
            ..Default::default()
        };
        let sys = LinearSystem::build_unchecked(&k, Level::A);
        // growing eigenvector of [[0, c_e], [d_e, 0]] is (1, 1)
        let y0 = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let traj = integrate_ode(&sys, &y0, 0.01, 500).unwrap();
        let ea = traj.states.last().unwrap()[4];
        let want = (0.25f64 * 5.0).exp();
        assert!((ea - want).abs() < 1e-8 * want, "{ea} vs {want}");
    }

    #[test]
    fn step_guard_and_overflow() {
        let k = CouplingSet {
            c_e: 100.0,
            d_e: 100.0,
            ..Default::default()
        };
        let sys = LinearSystem::build_unchecked(&k, Level::A);
        let y0 = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        assert!(matches!(
            integrate_ode(&sys, &y0, 0.01, 10),
            Err(OdeError::StepTooLarge { .. })
        ));
        let traj = integrate_ode_sampled(&sys, &y0, 1e-3, 1_000_000, 1000).unwrap();
        let step = traj.truncated_at.expect("growth must overflow");
        assert!(step < 1_000_000);
        assert!(traj.states.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn closed_form_identity_at_zero() {
        let sys = LinearSystem::build(&level_a_couplings(), Level::A).unwrap();
        let y0 = [1.0, 0.5, 0.1, -0.2, 0.3, 0.4];
        assert_eq!(closed_form(&sys, &y0, 0.0).unwrap(), y0.to_vec());
    }

    #[test]
    fn defective_spectrum_uses_fallback() {
        // c = d = 0: XPA' = EA with EA constant gives a linear-in-t term
        let sys = LinearSystem::build_unchecked(&CouplingSet::default(), Level::A);
        let y0 = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        let form = ClosedForm::new(&sys, &y0).unwrap();
        assert!(!form.is_modal());
        let y = form.eval(3.0);
        assert!((y[2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn expm_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&(m * 2.5));
        assert!((e[(0, 0)] - 2.5f64.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - 2.5f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn modal_route_matches_pade() {
        let k = CouplingSet {
            a: 0.3,
            b: -0.2,
            c: -1.0,
            d: 1.3,
            c_e: 0.4,
            d_e: 0.6,
            c_pe: -0.7,
            d_pe: 2.0,
            c_v: -1.5,
            d_v: 1.9,
            c_vu: 0.2,
            d_vu: 0.3,
            c_xv: 0.1,
            d_xv: 0.5,
        };
        let sys = LinearSystem::build(&k, Level::Combined).unwrap();
        let y0: Vec<f64> = (0..sys.size())
            .map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4)
            .collect();
        let form = ClosedForm::new(&sys, &y0).unwrap();
        assert!(form.is_modal());
        for t in [0.5, 3.0, 7.5] {
            let a = form.eval(t);
            let b: Vec<f64> = (expm(&(&sys.matrix * t)) * DVector::from_column_slice(&y0))
                .iter()
                .copied()
                .collect();
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-11 * scale, "t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn assets_coefficients_agree_between_routes() {
        let k = level_a_couplings();
        let sys = LinearSystem::build(&k, Level::A).unwrap();
        let y0 = [1.0, 0.8, 0.05, -0.1, 0.2, 0.15];
        let form = ClosedForm::new(&sys, &y0).unwrap();
        let direct = assets_shape_from_initial(&k, &y0).unwrap();
        let modal = assets_shape_from_modes(&sys, &form).unwrap();
        for (x, y) in direct.iter().zip(&modal) {
            assert!((x - y).abs() < 1e-9, "{direct:?} vs {modal:?}");
        }
        let (w, g) = (k.omega().unwrap(), k.gamma_e().unwrap());
        for t in [0.0, 1.0, 4.0] {
            let shape = direct[0]
                + direct[1] * (w * t).cos()
                + direct[2] * (w * t).sin()
                + direct[3] * (g * t).exp()
                + direct[4] * (-g * t).exp();
            assert!((shape - form.eval(t)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn record_round_trip_through_labels() {
        let k = level_a_couplings();
        let sys = LinearSystem::build_for(&k, Level::Combined, 2, true).unwrap();
        let y: Vec<f64> = (0..sys.size()).map(|i| 1.0 + i as f64).collect();
        let rec = sys.record(0.0, &y);
        assert_eq!(sys.state_from_record(&rec).unwrap(), y);
        assert!(rec.get("X").is_some());
        let small = LinearSystem::build(&k, Level::A).unwrap().record(0.0, &[1.0; 6]);
        assert!(small.get("XA").is_none());
        assert!(matches!(
            sys.state_from_record(&small),
            Err(OdeError::MissingAggregate(_))
        ));
    }

    #[test]
    fn dump_lists_coefficients() {
        let sys = LinearSystem::build(&level_a_couplings(), Level::A).unwrap();
        let text = sys.dump();
        assert!(text.contains("impulse balance"));
        assert!(text.contains("XPA"));
        assert_eq!(sys.audit.len(), 8);
    }
}
