//! Time integration of the coupled density/impulse system and its closure
//! hierarchy.
//!
//! Every field obeys `∂f/∂t + ∇·(w f) = k g`, where `w` is the Assets
//! velocity `v = PA/A` for Assets-side fields and the Revenue velocity
//! `u = PB/B` for Revenue-side fields, and `g` is the conjugate partner
//! field. The two densities are the exception: their sources are
//! `a x·PB` and `b x·PA`.
//!
//! In [`Mode::Hierarchy`] the closure fields (energies, energy impulses,
//! fourth-order and quadratic-flux fields) are evolved by their own
//! equations. In [`Mode::SelfConsistent`] only `A, B, PA, PB` evolve and the
//! closure fields are evaluated algebraically from them when asked for.

pub mod couplings;
pub mod snapshot;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::espace::{add_transport_tendency, dot, Field, Rank, RiskGrid, SpaceError};
use crate::kinetic::fill_velocity;

pub use couplings::{ConstraintCheck, ConstraintId, ConstraintReport, CouplingSet, COUPLING_NAMES};

#[derive(Debug, Error)]
pub enum HydroError {
    #[error("dt = {dt} violates the CFL limit (largest admissible dt is {max_dt})")]
    Cfl { dt: f64, max_dt: f64 },
    #[error("field {field} became non-finite at t = {time}")]
    NonFinite { field: FieldId, time: f64 },
    #[error("density-role field {field} reached {min} (peak {peak}) at t = {time}")]
    Negative {
        field: FieldId,
        min: f64,
        peak: f64,
        time: f64,
    },
    #[error("field {field} is missing from a {mode} state")]
    MissingField { field: FieldId, mode: Mode },
    #[error("field {field} must be a {expected} field")]
    FieldRank { field: FieldId, expected: &'static str },
    #[error("invalid step configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Hierarchy,
    SelfConsistent,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Hierarchy => "hierarchy",
            Mode::SelfConsistent => "self-consistent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Assets,
    Revenue,
}

/// Identifiers of every evolved field, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    A,
    B,
    PA,
    PB,
    EA,
    EB,
    PEA,
    PEB,
    VXPA,
    UYPB,
    V4A,
    U4B,
    XVA,
    YUB,
}

impl FieldId {
    pub const PRIMARY: [FieldId; 4] = [FieldId::A, FieldId::B, FieldId::PA, FieldId::PB];
    pub const ALL: [FieldId; 14] = [
        FieldId::A,
        FieldId::B,
        FieldId::PA,
        FieldId::PB,
        FieldId::EA,
        FieldId::EB,
        FieldId::PEA,
        FieldId::PEB,
        FieldId::VXPA,
        FieldId::UYPB,
        FieldId::V4A,
        FieldId::U4B,
        FieldId::XVA,
        FieldId::YUB,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldId::A => "A",
            FieldId::B => "B",
            FieldId::PA => "PA",
            FieldId::PB => "PB",
            FieldId::EA => "EA",
            FieldId::EB => "EB",
            FieldId::PEA => "PEA",
            FieldId::PEB => "PEB",
            FieldId::VXPA => "VXPA",
            FieldId::UYPB => "UYPB",
            FieldId::V4A => "V4A",
            FieldId::U4B => "U4B",
            FieldId::XVA => "XVA",
            FieldId::YUB => "YUB",
        }
    }

    pub fn from_name(name: &str) -> Option<FieldId> {
        FieldId::ALL.into_iter().find(|id| id.name() == name)
    }

    pub fn rank(self) -> Rank {
        match self {
            FieldId::PA | FieldId::PB | FieldId::PEA | FieldId::PEB | FieldId::VXPA | FieldId::UYPB => Rank::Vector,
            _ => Rank::Scalar,
        }
    }

    pub fn side(self) -> Side {
        if self.index().is_multiple_of(2) {
            Side::Assets
        } else {
            Side::Revenue
        }
    }

    /// The conjugate field driving this one's source.
    pub fn partner(self) -> FieldId {
        FieldId::ALL[self.index() ^ 1]
    }

    /// Fields required to stay nonnegative.
    pub fn is_density(self) -> bool {
        matches!(
            self,
            FieldId::A
                | FieldId::B
                | FieldId::EA
                | FieldId::EB
                | FieldId::V4A
                | FieldId::U4B
                | FieldId::XVA
                | FieldId::YUB
        )
    }

    /// Source coefficient: `a` for A (times `x·PB`), `c` for PA, and so on.
    pub fn coupling(self, k: &CouplingSet) -> f64 {
        match self {
            FieldId::A => k.a,
            FieldId::B => k.b,
            FieldId::PA => k.c,
            FieldId::PB => k.d,
            FieldId::EA => k.c_e,
            FieldId::EB => k.d_e,
            FieldId::PEA => k.c_pe,
            FieldId::PEB => k.d_pe,
            FieldId::VXPA => k.c_v,
            FieldId::UYPB => k.d_v,
            FieldId::V4A => k.c_vu,
            FieldId::U4B => k.d_vu,
            FieldId::XVA => k.c_xv,
            FieldId::YUB => k.d_xv,
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All coupled fields at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroState {
    pub time: f64,
    grid: Arc<RiskGrid>,
    /// Four primary fields, followed by the ten closure fields in hierarchy mode.
    fields: Vec<Field>,
}

impl HydroState {
    /// Builds a state from the primary fields. In hierarchy mode the closure
    /// fields start equal to their self-consistent values.
    pub fn new(a: Field, b: Field, pa: Field, pb: Field, mode: Mode) -> Result<Self, HydroError> {
        let grid = Arc::clone(a.grid());
        let primaries = [a, b, pa, pb];
        for (id, f) in FieldId::PRIMARY.iter().zip(&primaries) {
            check_field(&grid, *id, f)?;
        }
        let mut state = HydroState {
            time: 0.0,
            grid,
            fields: primaries.into(),
        };
        if mode == Mode::Hierarchy {
            state = state.into_mode(Mode::Hierarchy);
        }
        Ok(state)
    }

    /// Builds a state from an explicit list of fields (four primaries, or
    /// all fourteen for hierarchy mode) in [`FieldId::ALL`] order.
    pub fn from_fields(time: f64, fields: Vec<Field>) -> Result<Self, HydroError> {
        if fields.len() != 4 && fields.len() != FieldId::ALL.len() {
            return Err(HydroError::Config(format!(
                "a state holds 4 or 14 fields, got {}",
                fields.len()
            )));
        }
        let grid = Arc::clone(fields[0].grid());
        for (id, f) in FieldId::ALL.iter().zip(&fields) {
            check_field(&grid, *id, f)?;
        }
        Ok(HydroState { time, grid, fields })
    }

    pub fn grid(&self) -> &Arc<RiskGrid> {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        if self.fields.len() == FieldId::ALL.len() {
            Mode::Hierarchy
        } else {
            Mode::SelfConsistent
        }
    }

    /// Identifiers of the fields this state evolves.
    pub fn evolved(&self) -> &'static [FieldId] {
        &FieldId::ALL[..self.fields.len()]
    }

    /// An evolved field, or `None` for closure fields in self-consistent mode.
    pub fn get(&self, id: FieldId) -> Option<&Field> {
        self.fields.get(id.index())
    }

    pub fn get_mut(&mut self, id: FieldId) -> Option<&mut Field> {
        self.fields.get_mut(id.index())
    }

    pub fn a(&self) -> &Field {
        &self.fields[0]
    }

    pub fn b(&self) -> &Field {
        &self.fields[1]
    }

    pub fn pa(&self) -> &Field {
        &self.fields[2]
    }

    pub fn pb(&self) -> &Field {
        &self.fields[3]
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Evolved field if present, otherwise its algebraic value
    /// (`EA = A|v|²`, `PEA = v EA`, `VXPA = v (x·PA)`, `V4A = A|v|⁴`,
    /// `XVA = (x·v)² A`, and the Revenue analogues with `u`).
    pub fn field(&self, id: FieldId) -> Cow<'_, Field> {
        match self.get(id) {
            Some(f) => Cow::Borrowed(f),
            None => Cow::Owned(self.diagnostic(id)),
        }
    }

    /// Velocity of one side, `v = PA/max(A, ε)` or `u = PB/max(B, ε)`.
    pub fn velocity(&self, side: Side) -> Field {
        let (rho, p) = match side {
            Side::Assets => (self.a(), self.pa()),
            Side::Revenue => (self.b(), self.pb()),
        };
        let mut out = Field::zeros(&self.grid, Rank::Vector);
        side_velocity(rho.values(), p.values(), self.grid.dim(), out.values_mut());
        out
    }

    /// Algebraic value of any field from the primary fields.
    pub fn diagnostic(&self, id: FieldId) -> Field {
        if let Some(i) = FieldId::PRIMARY.iter().position(|&p| p == id) {
            return self.fields[i].clone();
        }
        let side = id.side();
        let (rho, p) = match side {
            Side::Assets => (self.a(), self.pa()),
            Side::Revenue => (self.b(), self.pb()),
        };
        let vel = self.velocity(side);
        let grid = &self.grid;
        let dim = grid.dim();
        let mut out = Field::zeros(grid, id.rank());
        let values = out.values_mut();
        for cell in 0..grid.cell_count() {
            let w = vel.at(cell);
            let x = grid.center(cell);
            let rho = rho.values()[cell];
            let w2 = dot(w, w);
            match id {
                FieldId::EA | FieldId::EB => values[cell] = rho * w2,
                FieldId::V4A | FieldId::U4B => values[cell] = rho * w2 * w2,
                FieldId::XVA | FieldId::YUB => values[cell] = dot(x, w).powi(2) * rho,
                FieldId::PEA | FieldId::PEB => {
                    for k in 0..dim {
                        values[cell * dim + k] = w[k] * rho * w2;
                    }
                }
                FieldId::VXPA | FieldId::UYPB => {
                    let xp = dot(x, p.at(cell));
                    for k in 0..dim {
                        values[cell * dim + k] = w[k] * xp;
                    }
                }
                _ => unreachable!("primary fields handled above"),
            }
        }
        out
    }

    /// Converts between modes. Entering hierarchy mode initializes the
    /// closure fields self-consistently; leaving it drops them.
    pub fn into_mode(mut self, mode: Mode) -> HydroState {
        match (self.mode(), mode) {
            (Mode::SelfConsistent, Mode::Hierarchy) => {
                let closure: Vec<Field> = FieldId::ALL[4..].iter().map(|&id| self.diagnostic(id)).collect();
                self.fields.extend(closure);
            }
            (Mode::Hierarchy, Mode::SelfConsistent) => self.fields.truncate(4),
            _ => {}
        }
        self
    }

    /// Largest speed `max(|v|, |u|)` over all cells.
    pub fn max_speed(&self) -> f64 {
        let mut top = 0.0f64;
        for side in [Side::Assets, Side::Revenue] {
            let vel = self.velocity(side);
            for cell in 0..self.grid.cell_count() {
                top = top.max(vel.norm_squared_at(cell).sqrt());
            }
        }
        top
    }

    /// Largest `dt` satisfying `dt max|w| / min spacing <= cfl_limit`.
    pub fn max_stable_dt(&self, cfl_limit: f64) -> f64 {
        let speed = self.max_speed();
        if speed == 0.0 {
            f64::INFINITY
        } else {
            cfl_limit * self.grid.min_spacing() / speed
        }
    }

    /// Fieldwise sum of two states on the same grid and in the same mode.
    pub fn add(&self, other: &HydroState) -> Result<HydroState, HydroError> {
        if !self.grid.as_ref().eq(other.grid.as_ref()) {
            return Err(SpaceError::GridMismatch.into());
        }
        if self.mode() != other.mode() {
            return Err(HydroError::Config("cannot add states in different modes".into()));
        }
        let mut out = self.clone();
        for (f, g) in out.fields.iter_mut().zip(&other.fields) {
            f.axpy(1.0, g);
        }
        Ok(out)
    }
}

fn check_field(grid: &Arc<RiskGrid>, id: FieldId, f: &Field) -> Result<(), HydroError> {
    if f.grid().as_ref() != grid.as_ref() {
        return Err(SpaceError::GridMismatch.into());
    }
    if f.rank() != id.rank() {
        return Err(HydroError::FieldRank {
            field: id,
            expected: id.rank().name(),
        });
    }
    Ok(())
}

/// Vacuum threshold for one density: `1e-12 * max(max density, 1)`.
fn vacuum_epsilon(rho: &[f64]) -> f64 {
    1e-12 * rho.iter().copied().fold(1.0, f64::max)
}

/// Velocity of one side; cells with density below the vacuum threshold do
/// not move.
fn side_velocity(rho: &[f64], p: &[f64], dim: usize, out: &mut [f64]) {
    let eps = vacuum_epsilon(rho);
    fill_velocity(rho, p, dim, eps, out);
    for (cell, &r) in rho.iter().enumerate() {
        if r < eps {
            out[cell * dim..(cell + 1) * dim].iter_mut().for_each(|w| *w = 0.0);
        }
    }
}

/// Source field of every evolved field.
pub fn source_terms(state: &HydroState, couplings: &CouplingSet) -> Vec<(FieldId, Field)> {
    state
        .evolved()
        .iter()
        .map(|&id| {
            let mut out = Field::zeros(&state.grid, id.rank());
            add_source(id, &state.fields, &state.grid, couplings, out.values_mut());
            (id, out)
        })
        .collect()
}

fn add_source(id: FieldId, fields: &[Field], grid: &RiskGrid, couplings: &CouplingSet, out: &mut [f64]) {
    let k = id.coupling(couplings);
    if k == 0.0 {
        return;
    }
    match id {
        FieldId::A | FieldId::B => {
            // A is driven by the Revenue impulse PB, B by the Assets impulse PA
            let partner = fields[id.index() ^ 3].values();
            let dim = grid.dim();
            for (cell, o) in out.iter_mut().enumerate() {
                *o += k * dot(grid.center(cell), &partner[cell * dim..(cell + 1) * dim]);
            }
        }
        _ => {
            let partner = fields[id.partner().index()].values();
            for (o, g) in out.iter_mut().zip(partner) {
                *o += k * g;
            }
        }
    }
}

/// `-∇·(v f)` with split upwind face fluxes and closed walls.
pub fn advect(f: &Field, velocity: &Field) -> Field {
    assert!(f.same_grid(velocity), "advect: fields on different grids");
    assert_eq!(velocity.rank(), Rank::Vector, "advect: velocity must be a vector field");
    let mut out = Field::zeros(f.grid(), f.rank());
    add_transport_tendency(
        f.values(),
        f.components(),
        velocity.values(),
        f.grid(),
        out.values_mut(),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub cfl_limit: f64,
    pub mode: Mode,
    /// Density-role fields may dip to `-tol * peak` before the step fails;
    /// `None` disables the check.
    pub negativity_tolerance: Option<f64>,
}

impl StepConfig {
    pub fn new(dt: f64, mode: Mode) -> Self {
        Self {
            dt,
            cfl_limit: 0.5,
            mode,
            negativity_tolerance: Some(1e-6),
        }
    }

    fn validate(&self) -> Result<(), HydroError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(HydroError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.cfl_limit > 0.0 && self.cfl_limit <= 1.0) {
            return Err(HydroError::Config(format!(
                "cfl limit must lie in (0, 1], got {}",
                self.cfl_limit
            )));
        }
        Ok(())
    }
}

/// Per-field tendencies `-∇·(w f) + source`.
fn tendencies(fields: &[Field], grid: &RiskGrid, couplings: &CouplingSet) -> Vec<Vec<f64>> {
    let dim = grid.dim();
    let mut v = vec![0.0; grid.cell_count() * dim];
    let mut u = vec![0.0; grid.cell_count() * dim];
    side_velocity(fields[0].values(), fields[2].values(), dim, &mut v);
    side_velocity(fields[1].values(), fields[3].values(), dim, &mut u);
    FieldId::ALL[..fields.len()]
        .iter()
        .zip(fields)
        .map(|(&id, f)| {
            let mut out = vec![0.0; f.values().len()];
            add_source(id, fields, grid, couplings, &mut out);
            let w = match id.side() {
                Side::Assets => &v,
                Side::Revenue => &u,
            };
            add_transport_tendency(f.values(), f.components(), w, grid, &mut out);
            out
        })
        .collect()
}

fn advanced(base: &[Field], rates: &[Vec<f64>], dt: f64) -> Vec<Field> {
    base.iter()
        .zip(rates)
        .map(|(f, r)| {
            let mut g = f.clone();
            for (y, k) in g.values_mut().iter_mut().zip(r) {
                *y += dt * k;
            }
            g
        })
        .collect()
}

/// Advances every evolved field by one explicit midpoint step.
pub fn step(state: &HydroState, couplings: &CouplingSet, cfg: &StepConfig) -> Result<HydroState, HydroError> {
    cfg.validate()?;
    let start = state.clone().into_mode(cfg.mode);
    let max_dt = start.max_stable_dt(cfg.cfl_limit);
    if cfg.dt > max_dt * (1.0 + 1e-12) {
        return Err(HydroError::Cfl { dt: cfg.dt, max_dt });
    }
    let grid = Arc::clone(&start.grid);
    let k1 = tendencies(&start.fields, &grid, couplings);
    let half = advanced(&start.fields, &k1, 0.5 * cfg.dt);
    let k2 = tendencies(&half, &grid, couplings);
    let next = HydroState {
        time: start.time + cfg.dt,
        grid,
        fields: advanced(&start.fields, &k2, cfg.dt),
    };
    next.check_health(cfg.negativity_tolerance)?;
    Ok(next)
}

impl HydroState {
    fn check_health(&self, negativity_tolerance: Option<f64>) -> Result<(), HydroError> {
        for (&id, f) in self.evolved().iter().zip(&self.fields) {
            if !f.is_finite() {
                return Err(HydroError::NonFinite {
                    field: id,
                    time: self.time,
                });
            }
            if let (Some(tol), true) = (negativity_tolerance, id.is_density()) {
                let peak = f.max_abs();
                let min = f.min_value();
                if min < -tol * peak {
                    return Err(HydroError::Negative {
                        field: id,
                        min,
                        peak,
                        time: self.time,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Runs `steps` steps, calling `observe` on the initial state and after
/// every `stride`-th step.
pub fn evolve(
    initial: HydroState,
    couplings: &CouplingSet,
    cfg: &StepConfig,
    steps: usize,
    stride: usize,
    mut observe: impl FnMut(&HydroState),
) -> Result<HydroState, HydroError> {
    let stride = stride.max(1);
    let mut state = initial.into_mode(cfg.mode);
    observe(&state);
    for n in 1..=steps {
        state = step(&state, couplings, cfg)?;
        if n % stride == 0 {
            observe(&state);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::espace::integrate;

    fn grid(cells: usize) -> Arc<RiskGrid> {
        Arc::new(RiskGrid::uniform(&[1.0], &[cells]).unwrap())
    }

    fn bump(g: &Arc<RiskGrid>, center: f64, width: f64, amp: f64) -> Field {
        Field::scalar_from_fn(g, |x| amp * (-(x[0] - center).powi(2) / (2.0 * width * width)).exp())
    }

    fn moving(g: &Arc<RiskGrid>, rho: &Field, v: f64) -> Field {
        Field::from_values(g, Rank::Vector, rho.values().iter().map(|r| r * v).collect()).unwrap()
    }

    fn state(g: &Arc<RiskGrid>, v: f64, u: f64, mode: Mode) -> HydroState {
        let a = bump(g, 0.45, 0.08, 1.0);
        let b = bump(g, 0.55, 0.08, 0.5);
        let pa = moving(g, &a, v);
        let pb = moving(g, &b, u);
        HydroState::new(a, b, pa, pb, mode).unwrap()
    }

    #[test]
    fn partner_table_is_symmetric() {
        for id in FieldId::ALL {
            assert_eq!(id.partner().partner(), id);
            assert_ne!(id.side(), id.partner().side());
            assert_eq!(id.rank(), id.partner().rank());
            assert_eq!(FieldId::from_name(id.name()), Some(id));
        }
    }

    #[test]
    fn zero_couplings_give_zero_sources() {
        let g = grid(16);
        let s = state(&g, 0.2, -0.1, Mode::Hierarchy);
        for (_, f) in source_terms(&s, &CouplingSet::default()) {
            assert!(f.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn density_source_is_a_x_dot_pb() {
        let g = grid(10);
        let one = Field::scalar_from_fn(&g, |_| 1.0);
        let three = Field::scalar_from_fn(&g, |_| 3.0);
        let pb = Field::vector_from_fn(&g, |_, out| out[0] = 1.0);
        let s = HydroState::new(
            one.clone(),
            three,
            Field::zeros(&g, Rank::Vector),
            pb,
            Mode::SelfConsistent,
        )
        .unwrap();
        let k = CouplingSet {
            a: 2.0,
            ..Default::default()
        };
        let src = source_terms(&s, &k);
        let src_a = &src[0].1;
        for cell in 0..10 {
            assert!((src_a.values()[cell] - 2.0 * g.center(cell)[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn impulse_source_scalar_multiple() {
        let g = grid(4);
        let one = Field::scalar_from_fn(&g, |_| 1.0);
        let mut pa = Field::zeros(&g, Rank::Vector);
        pa.values_mut()[2] = 3.0;
        let s = HydroState::new(
            one.clone(),
            one,
            pa,
            Field::zeros(&g, Rank::Vector),
            Mode::SelfConsistent,
        )
        .unwrap();
        let k = CouplingSet {
            d: -1.0,
            ..Default::default()
        };
        let src = source_terms(&s, &k);
        assert_eq!(src[3].0, FieldId::PB);
        assert_eq!(src[3].1.values(), &[0.0, 0.0, -3.0, 0.0]);
    }

    #[test]
    fn advect_zero_velocity_and_conservation() {
        let g = grid(40);
        let f = bump(&g, 0.3, 0.05, 1.0);
        let zero = Field::zeros(&g, Rank::Vector);
        assert!(advect(&f, &zero).values().iter().all(|&v| v == 0.0));
        let v = Field::vector_from_fn(&g, |_, out| out[0] = 0.8);
        assert!(integrate(&advect(&f, &v)).abs() < 1e-13);
    }

    #[test]
    fn static_state_is_a_fixed_point() {
        let g = grid(32);
        let s0 = state(&g, 0.0, 0.0, Mode::Hierarchy);
        let cfg = StepConfig::new(0.01, Mode::Hierarchy);
        let end = evolve(s0.clone(), &CouplingSet::default(), &cfg, 50, 1, |_| {}).unwrap();
        assert_eq!(end.fields(), s0.fields());
    }

    #[test]
    fn pure_transport_conserves_mass() {
        let g = grid(64);
        let s0 = state(&g, 0.3, -0.2, Mode::Hierarchy);
        let mass0 = integrate(s0.a());
        let dt = s0.max_stable_dt(0.5);
        let mut cfg = StepConfig::new(dt, Mode::Hierarchy);
        cfg.cfl_limit = 0.5;
        let end = evolve(s0, &CouplingSet::default(), &cfg, 200, 1, |_| {}).unwrap();
        assert!((integrate(end.a()) - mass0).abs() < 1e-13 * mass0);
    }

    #[test]
    fn cfl_violation_refused() {
        let g = grid(32);
        let s0 = state(&g, 1.0, 1.0, Mode::SelfConsistent);
        let dt = 2.0 * s0.max_stable_dt(0.5);
        let err = step(&s0, &CouplingSet::default(), &StepConfig::new(dt, Mode::SelfConsistent)).unwrap_err();
        match err {
            HydroError::Cfl { dt: got, max_dt } => {
                assert_eq!(got, dt);
                assert!(max_dt < dt);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn hierarchy_initialized_self_consistently() {
        let g = grid(24);
        let s = state(&g, 0.2, -0.3, Mode::Hierarchy);
        for id in &FieldId::ALL[4..] {
            assert_eq!(s.get(*id).unwrap(), &s.diagnostic(*id));
        }
        let sc = s.clone().into_mode(Mode::SelfConsistent);
        assert_eq!(sc.mode(), Mode::SelfConsistent);
        assert!(sc.get(FieldId::EA).is_none());
        assert_eq!(sc.field(FieldId::EA).as_ref(), s.get(FieldId::EA).unwrap());
    }

    #[test]
    fn diagnostics_on_uniform_flow() {
        let g = grid(8);
        let s = state(&g, 0.5, 0.0, Mode::SelfConsistent);
        let ea = s.diagnostic(FieldId::EA);
        let v4 = s.diagnostic(FieldId::V4A);
        let xva = s.diagnostic(FieldId::XVA);
        for cell in 0..8 {
            let a = s.a().values()[cell];
            let x = g.center(cell)[0];
            assert!((ea.values()[cell] - 0.25 * a).abs() < 1e-14);
            assert!((v4.values()[cell] - 0.0625 * a).abs() < 1e-14);
            assert!((xva.values()[cell] - (0.5 * x).powi(2) * a).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_source_uses_partner() {
        let g = grid(8);
        let s = state(&g, 0.1, 0.2, Mode::Hierarchy);
        let k = CouplingSet {
            c_e: 0.5,
            d_e: 2.0,
            ..Default::default()
        };
        let src = source_terms(&s, &k);
        let eb = s.get(FieldId::EB).unwrap();
        let ea = s.get(FieldId::EA).unwrap();
        assert_eq!(src[FieldId::EA.index()].1, eb.scaled(0.5));
        assert_eq!(src[FieldId::EB.index()].1, ea.scaled(2.0));
    }

    #[test]
    fn negativity_reported() {
        let g = grid(16);
        let a = bump(&g, 0.5, 0.05, 1.0);
        let b = Field::scalar_from_fn(&g, |_| 1.0);
        let pb = Field::vector_from_fn(&g, |_, out| out[0] = -10.0);
        let s0 = HydroState::new(a, b, Field::zeros(&g, Rank::Vector), pb, Mode::SelfConsistent).unwrap();
        let k = CouplingSet {
            a: 100.0,
            ..Default::default()
        };
        let cfg = StepConfig::new(0.001, Mode::SelfConsistent);
        let err = evolve(s0, &k, &cfg, 1000, 1, |_| {}).unwrap_err();
        assert!(matches!(err, HydroError::Negative { field: FieldId::A, .. }), "{err}");
    }
}
