//! Whole-economy aggregates and risk moments of a field state.
//!
//! Every aggregate is an integral over the risk space. Records store them by
//! canonical column name; vector aggregates keep all `n` components.

use std::fmt::Write as _;

use thiserror::Error;

use crate::espace::{dot, first_moment, integrate, integrate_components, second_moment, Field, Rank};
use crate::hydro::{CouplingSet, FieldId, HydroState};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("total mass is {0}; no probability view exists")]
    ZeroMass(f64),
    #[error("record times must increase strictly: {previous} then {next}")]
    NonIncreasing { previous: f64, next: f64 },
    #[error("sampling interval {got} differs from {expected}")]
    NonUniform { expected: f64, got: f64 },
    #[error("record dimension {got} differs from series dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Whether a column carries one value or one per risk axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Scalar,
    Vector,
}

/// Canonical column order (after `t`).
pub const COLUMNS: [(&str, Kind); 34] = [
    ("A", Kind::Scalar),
    ("B", Kind::Scalar),
    ("XPA", Kind::Scalar),
    ("YPB", Kind::Scalar),
    ("EA", Kind::Scalar),
    ("EB", Kind::Scalar),
    ("PA", Kind::Vector),
    ("PB", Kind::Vector),
    ("XP", Kind::Vector),
    ("YP", Kind::Vector),
    ("XE", Kind::Vector),
    ("YE", Kind::Vector),
    ("VXPA", Kind::Vector),
    ("UYPB", Kind::Vector),
    ("PEA", Kind::Vector),
    ("PEB", Kind::Vector),
    ("XA", Kind::Vector),
    ("YB", Kind::Vector),
    ("X2A", Kind::Scalar),
    ("Y2B", Kind::Scalar),
    ("XPAX2", Kind::Scalar),
    ("YPBY2", Kind::Scalar),
    ("X2EA", Kind::Scalar),
    ("Y2EB", Kind::Scalar),
    ("XVA", Kind::Scalar),
    ("YUB", Kind::Scalar),
    ("XPEA", Kind::Scalar),
    ("YPEB", Kind::Scalar),
    ("V4A", Kind::Scalar),
    ("U4B", Kind::Scalar),
    ("X", Kind::Vector),
    ("Y", Kind::Vector),
    ("X2", Kind::Scalar),
    ("sigma2", Kind::Scalar),
];

/// Columns that are linear functionals of the fields.
pub const LINEAR_COLUMNS: [&str; 18] = [
    "A", "B", "XPA", "YPB", "PA", "PB", "XP", "YP", "XA", "YB", "X2A", "Y2B", "XPAX2", "YPBY2", "XE", "YE", "X2EA",
    "Y2EB",
];

pub fn column_index(name: &str) -> Option<usize> {
    COLUMNS.iter().position(|(n, _)| *n == name)
}

/// Aggregates at one instant. Missing entries are "absent" (undefined mean
/// risks, or quantities a reduced system does not track).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub t: f64,
    dim: usize,
    values: Vec<Option<Vec<f64>>>,
}

impl AggregateRecord {
    pub fn empty(t: f64, dim: usize) -> Self {
        Self {
            t,
            dim,
            values: vec![None; COLUMNS.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.values[column_index(name)?].as_deref()
    }

    /// Scalar column, or the first component of a vector one.
    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.get(name).map(|v| v[0])
    }

    pub fn set(&mut self, name: &str, value: Vec<f64>) {
        let i = column_index(name).unwrap_or_else(|| panic!("unknown aggregate column {name}"));
        let width = match COLUMNS[i].1 {
            Kind::Scalar => 1,
            Kind::Vector => self.dim,
        };
        assert_eq!(value.len(), width, "column {name} needs {width} values");
        self.values[i] = Some(value);
    }

    pub fn clear(&mut self, name: &str) {
        if let Some(i) = column_index(name) {
            self.values[i] = None;
        }
    }

    /// Fills `X, Y, X2, sigma2` from `XA, YB, X2A, A, B` where the masses
    /// are positive; otherwise marks them absent.
    pub fn derive_mean_risks(&mut self) {
        let a = self.scalar("A");
        let b = self.scalar("B");
        let positive = |m: Option<f64>| m.filter(|&m| m > MIN_MASS);
        match (positive(a), self.get("XA").map(<[f64]>::to_vec)) {
            (Some(a), Some(xa)) => self.set("X", xa.iter().map(|v| v / a).collect()),
            _ => self.clear("X"),
        }
        match (positive(b), self.get("YB").map(<[f64]>::to_vec)) {
            (Some(b), Some(yb)) => self.set("Y", yb.iter().map(|v| v / b).collect()),
            _ => self.clear("Y"),
        }
        match (positive(a), self.scalar("X2A")) {
            (Some(a), Some(x2a)) => {
                let x2 = x2a / a;
                self.set("X2", vec![x2]);
                match self.get("X").map(|x| dot(x, x)) {
                    Some(xx) => self.set("sigma2", vec![x2 - xx]),
                    None => self.clear("sigma2"),
                }
            }
            _ => {
                self.clear("X2");
                self.clear("sigma2");
            }
        }
    }

    /// Values in CSV order, one entry per emitted cell.
    pub fn row(&self) -> Vec<Option<f64>> {
        let mut out = vec![Some(self.t)];
        for ((_, kind), value) in COLUMNS.iter().zip(&self.values) {
            let width = match kind {
                Kind::Scalar => 1,
                Kind::Vector => self.dim,
            };
            match value {
                Some(v) => out.extend(v.iter().map(|&x| Some(x))),
                None => out.extend(std::iter::repeat_n(None, width)),
            }
        }
        out
    }
}

/// Masses at or below this are treated as an empty economy.
pub const MIN_MASS: f64 = 1e-300;

/// Header row for a risk space of dimension `dim`. Vector columns expand to
/// `NAME_1..NAME_n` when `dim > 1`.
pub fn csv_header(dim: usize) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    for (name, kind) in COLUMNS {
        match (kind, dim) {
            (Kind::Vector, d) if d > 1 => out.extend((1..=d).map(|k| format!("{name}_{k}"))),
            _ => out.push(name.to_string()),
        }
    }
    out
}

/// Measures every aggregate of a state. Closure aggregates come from the
/// evolved closure fields in hierarchy mode and from their algebraic
/// values otherwise.
pub fn measure(state: &HydroState) -> AggregateRecord {
    let grid = state.grid();
    let dim = grid.dim();
    let mut r = AggregateRecord::empty(state.time, dim);
    let a = state.a();
    let b = state.b();
    let ea = state.field(FieldId::EA);
    let eb = state.field(FieldId::EB);
    let pea = state.field(FieldId::PEA);
    let peb = state.field(FieldId::PEB);

    r.set("A", vec![integrate(a)]);
    r.set("B", vec![integrate(b)]);
    r.set("XPA", vec![position_dot_integral(state.pa(), 0)]);
    r.set("YPB", vec![position_dot_integral(state.pb(), 0)]);
    r.set("EA", vec![integrate(&ea)]);
    r.set("EB", vec![integrate(&eb)]);
    r.set("PA", integrate_components(state.pa()));
    r.set("PB", integrate_components(state.pb()));
    r.set("XP", position_weighted_dot(state.pa()));
    r.set("YP", position_weighted_dot(state.pb()));
    r.set("XE", first_moment(&ea));
    r.set("YE", first_moment(&eb));
    r.set("VXPA", integrate_components(&state.field(FieldId::VXPA)));
    r.set("UYPB", integrate_components(&state.field(FieldId::UYPB)));
    r.set("PEA", integrate_components(&pea));
    r.set("PEB", integrate_components(&peb));
    r.set("XA", first_moment(a));
    r.set("YB", first_moment(b));
    r.set("X2A", vec![second_moment(a)]);
    r.set("Y2B", vec![second_moment(b)]);
    r.set("XPAX2", vec![position_dot_integral(state.pa(), 2)]);
    r.set("YPBY2", vec![position_dot_integral(state.pb(), 2)]);
    r.set("X2EA", vec![second_moment(&ea)]);
    r.set("Y2EB", vec![second_moment(&eb)]);
    r.set("XVA", vec![integrate(&state.field(FieldId::XVA))]);
    r.set("YUB", vec![integrate(&state.field(FieldId::YUB))]);
    r.set("XPEA", vec![position_dot_integral(&pea, 0)]);
    r.set("YPEB", vec![position_dot_integral(&peb, 0)]);
    r.set("V4A", vec![integrate(&state.field(FieldId::V4A))]);
    r.set("U4B", vec![integrate(&state.field(FieldId::U4B))]);
    r.derive_mean_risks();
    r
}

/// `∫ |x|^power (x·F) dx` for a vector field `F`.
fn position_dot_integral(f: &Field, power: i32) -> f64 {
    assert_eq!(f.rank(), Rank::Vector);
    let grid = f.grid();
    (0..grid.cell_count())
        .map(|cell| {
            let x = grid.center(cell);
            let xf = dot(x, f.at(cell));
            if power == 0 {
                xf
            } else {
                dot(x, x).powi(power / 2) * xf
            }
        })
        .sum::<f64>()
        * grid.cell_volume()
}

/// `∫ x (x·F) dx`.
fn position_weighted_dot(f: &Field) -> Vec<f64> {
    let grid = f.grid();
    let mut out = vec![0.0; grid.dim()];
    for cell in 0..grid.cell_count() {
        let x = grid.center(cell);
        let xf = dot(x, f.at(cell));
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi * xf;
        }
    }
    let vol = grid.cell_volume();
    out.iter_mut().for_each(|o| *o *= vol);
    out
}

/// `A / ∫A`.
pub fn probability_view(density: &Field) -> Result<Field, AggregateError> {
    let mass = integrate(density);
    if !(mass > MIN_MASS) || !mass.is_finite() {
        return Err(AggregateError::ZeroMass(mass));
    }
    Ok(density.scaled(1.0 / mass))
}

/// Records with strictly increasing, uniformly spaced times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateSeries {
    records: Vec<AggregateRecord>,
}

/// Relative tolerance on the sampling interval.
const UNIFORM_TOL: f64 = 1e-6;

impl AggregateSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: AggregateRecord) -> Result<(), AggregateError> {
        if let Some(last) = self.records.last() {
            if record.dim != last.dim {
                return Err(AggregateError::Dimension {
                    expected: last.dim,
                    got: record.dim,
                });
            }
            if record.t <= last.t {
                return Err(AggregateError::NonIncreasing {
                    previous: last.t,
                    next: record.t,
                });
            }
            if self.records.len() >= 2 {
                let expected = self.records[1].t - self.records[0].t;
                let got = record.t - last.t;
                if (got - expected).abs() > UNIFORM_TOL * expected.abs().max(f64::MIN_POSITIVE) {
                    return Err(AggregateError::NonUniform { expected, got });
                }
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[AggregateRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(1, |r| r.dim)
    }

    /// Sampling interval, if at least two records exist.
    pub fn interval(&self) -> Option<f64> {
        (self.records.len() >= 2).then(|| self.records[1].t - self.records[0].t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// One component of a column over time; `None` if any sample is absent.
    pub fn column(&self, name: &str, component: usize) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.get(name).and_then(|v| v.get(component).copied()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_header(self.dim()).join(","));
        out.push('\n');
        for r in &self.records {
            let cells: Vec<String> = r
                .row()
                .into_iter()
                .map(|v| v.map_or_else(String::new, |x| format!("{x}")))
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Parses CSV produced by [`AggregateSeries::to_csv`].
    pub fn from_csv(text: &str) -> Result<AggregateSeries, AggregateError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(AggregateError::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let dim = (1..=16)
            .find(|&d| csv_header(d).iter().map(String::as_str).eq(names.iter().copied()))
            .ok_or(AggregateError::Csv {
                line: 1,
                message: "header does not match the canonical column list".into(),
            })?;
        let mut series = AggregateSeries::new();
        for (lineno, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != names.len() {
                return Err(AggregateError::Csv {
                    line: lineno + 1,
                    message: format!("expected {} cells, found {}", names.len(), cells.len()),
                });
            }
            let parse = |s: &str| -> Result<Option<f64>, AggregateError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| AggregateError::Csv {
                        line: lineno + 1,
                        message: format!("not a number: {s:?}"),
                    })
                }
            };
            let t = parse(cells[0])?.ok_or(AggregateError::Csv {
                line: lineno + 1,
                message: "missing time".into(),
            })?;
            let mut record = AggregateRecord::empty(t, dim);
            let mut pos = 1;
            for (i, (_, kind)) in COLUMNS.iter().enumerate() {
                let width = match kind {
                    Kind::Scalar => 1,
                    Kind::Vector => dim,
                };
                let vals = cells[pos..pos + width]
                    .iter()
                    .map(|c| parse(c))
                    .collect::<Result<Vec<_>, _>>()?;
                pos += width;
                if vals.iter().all(Option::is_some) {
                    record.values[i] = Some(vals.into_iter().flatten().collect());
                }
            }
            series.push(record)?;
        }
        Ok(series)
    }
}

/// Identities linking the time derivative of an aggregate to other
/// aggregates; each holds exactly for the continuous equations with closed
/// walls. The energy term of the flux identity is `∫A|v|²` from the fields.
pub const IDENTITY_NAMES: [&str; 6] = [
    "(i)   dA/dt = a YPB",
    "(i)   dB/dt = b XPA",
    "(ii)  dXPA/dt = ∫A|v|² + c YPB",
    "(iii) dPA/dt = c PB",
    "(iv)  dXA/dt = PA + a YP",
    "(v)   dX2A/dt = 2 XPA + a YPBY2",
];

/// Left-hand aggregates and right-hand rates of every identity.
fn identity_terms(state: &HydroState, k: &CouplingSet) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let r = measure(state);
    let s = |name: &str| r.scalar(name).unwrap_or(0.0);
    let v = |name: &str| r.get(name).map(<[f64]>::to_vec).unwrap_or_default();
    let kinetic = integrate(&state.diagnostic(FieldId::EA));
    let combine = |x: Vec<f64>, alpha: f64, y: Vec<f64>| x.iter().zip(&y).map(|(p, q)| p + alpha * q).collect();
    let q = vec![
        vec![s("A")],
        vec![s("B")],
        vec![s("XPA")],
        v("PA"),
        v("XA"),
        vec![s("X2A")],
    ];
    let rates = vec![
        vec![k.a * s("YPB")],
        vec![k.b * s("XPA")],
        vec![kinetic + k.c * s("YPB")],
        v("PB").iter().map(|p| k.c * p).collect(),
        combine(v("PA"), k.a, v("YP")),
        vec![2.0 * s("XPA") + k.a * s("YPBY2")],
    ];
    (q, rates)
}

/// Accumulates forward-difference residuals of the identities over a run.
/// Feed it every step; each pair of consecutive states gives one sample.
/// Time, identity aggregates and identity rates at one sample.
type Sample = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct IdentitySuite {
    couplings: CouplingSet,
    last: Option<Sample>,
    start: Option<f64>,
    max_error: [f64; 6],
    max_rate: [f64; 6],
    max_value: [f64; 6],
    samples: usize,
}

impl IdentitySuite {
    pub fn new(couplings: CouplingSet) -> Self {
        Self {
            couplings,
            last: None,
            start: None,
            max_error: [0.0; 6],
            max_rate: [0.0; 6],
            max_value: [0.0; 6],
            samples: 0,
        }
    }

    pub fn observe(&mut self, state: &HydroState) {
        let (q, rates) = identity_terms(state, &self.couplings);
        let t = state.time;
        self.start.get_or_insert(t);
        for i in 0..6 {
            for (&qv, &rv) in q[i].iter().zip(&rates[i]) {
                self.max_value[i] = self.max_value[i].max(qv.abs());
                self.max_rate[i] = self.max_rate[i].max(rv.abs());
            }
        }
        if let Some((t0, q0, r0)) = self.last.take() {
            let dt = t - t0;
            if dt > 0.0 {
                for i in 0..6 {
                    for ((&a, &b), &r) in q0[i].iter().zip(&q[i]).zip(&r0[i]) {
                        let fd = (b - a) / dt;
                        self.max_error[i] = self.max_error[i].max((fd - r).abs());
                    }
                }
                self.samples += 1;
            }
        }
        self.last = Some((t, q, rates));
    }

    /// Residuals scaled by `max(max|rate|, max|aggregate| / duration)`.
    pub fn report(&self) -> IdentityReport {
        let span = match (self.start, &self.last) {
            (Some(s), Some((t, _, _))) if *t > s => t - s,
            _ => 1.0,
        };
        let entries = (0..6)
            .map(|i| {
                let scale = self.max_rate[i].max(self.max_value[i] / span);
                IdentityResidual {
                    name: IDENTITY_NAMES[i],
                    absolute: self.max_error[i],
                    residual: if scale > 0.0 { self.max_error[i] / scale } else { 0.0 },
                }
            })
            .collect();
        IdentityReport {
            entries,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResidual {
    pub name: &'static str,
    /// Largest `|Δq/Δt − rate|` over the run.
    pub absolute: f64,
    /// `absolute` over the identity's rate scale.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub entries: Vec<IdentityResidual>,
    pub samples: usize,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.residual))
    }
}

impl std::fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "aggregate identities ({} step samples):", self.samples)?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<32} residual {:.3e} (absolute {:.3e})",
                e.name, e.residual, e.absolute
            )?;
        }
        Ok(())
    }
}
