//! Bounded risk-rating space, its uniform grid and the discrete calculus on it.
//!
//! Values are cell-centered. Quadratures use the midpoint rule, and the
//! divergence is a finite-volume difference of face fluxes with zero flux
//! through every outer wall, so the sum of any divergence over the grid
//! telescopes to zero.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("risk domain needs at least one axis")]
    NoAxes,
    #[error("upper bound of axis {axis} must be finite and positive, got {value}")]
    BadBound { axis: usize, value: f64 },
    #[error("grid has {got} axes but domain has {expected}")]
    AxisCount { expected: usize, got: usize },
    #[error("axis {axis} needs at least one cell")]
    EmptyAxis { axis: usize },
    #[error("field needs {expected} values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("expected a {expected} field")]
    Rank { expected: &'static str },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// The box `0 < x_i < X_i` of risk coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskDomain {
    upper_bounds: Vec<f64>,
}

impl RiskDomain {
    pub fn new(upper_bounds: Vec<f64>) -> Result<Self, SpaceError> {
        if upper_bounds.is_empty() {
            return Err(SpaceError::NoAxes);
        }
        for (axis, &value) in upper_bounds.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(SpaceError::BadBound { axis, value });
            }
        }
        Ok(Self { upper_bounds })
    }

    pub fn unit(dim: usize) -> Result<Self, SpaceError> {
        Self::new(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.upper_bounds.len()
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper_bounds
    }

    /// Strict interior test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.upper_bounds)
                .all(|(&xi, &bound)| xi > 0.0 && xi < bound)
    }

    pub fn volume(&self) -> f64 {
        self.upper_bounds.iter().product()
    }
}

/// Uniform Cartesian discretization of a [`RiskDomain`].
///
/// Cells are stored in row-major order with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskGrid {
    domain: RiskDomain,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    centers: Vec<f64>,
}

impl RiskGrid {
    pub fn new(domain: RiskDomain, cells_per_axis: Vec<usize>) -> Result<Self, SpaceError> {
        if cells_per_axis.len() != domain.dim() {
            return Err(SpaceError::AxisCount {
                expected: domain.dim(),
                got: cells_per_axis.len(),
            });
        }
        if let Some(axis) = cells_per_axis.iter().position(|&c| c == 0) {
            return Err(SpaceError::EmptyAxis { axis });
        }
        let dim = domain.dim();
        let spacing: Vec<f64> = domain
            .upper_bounds()
            .iter()
            .zip(&cells_per_axis)
            .map(|(&bound, &c)| bound / c as f64)
            .collect();
        let mut strides = vec![1usize; dim];
        for axis in (0..dim.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * cells_per_axis[axis + 1];
        }
        let total: usize = cells_per_axis.iter().product();
        let mut centers = Vec::with_capacity(total * dim);
        for cell in 0..total {
            for axis in 0..dim {
                let i = (cell / strides[axis]) % cells_per_axis[axis];
                centers.push((i as f64 + 0.5) * spacing[axis]);
            }
        }
        Ok(Self {
            domain,
            cells: cells_per_axis,
            spacing,
            strides,
            centers,
        })
    }

    /// Grid on `[0, X_1] x ... x [0, X_n]`.
    pub fn uniform(upper_bounds: &[f64], cells_per_axis: &[usize]) -> Result<Self, SpaceError> {
        Self::new(RiskDomain::new(upper_bounds.to_vec())?, cells_per_axis.to_vec())
    }

    pub fn domain(&self) -> &RiskDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.centers.len() / self.dim()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Index of `cell` along `axis`.
    pub fn axis_index(&self, cell: usize, axis: usize) -> usize {
        (cell / self.strides[axis]) % self.cells[axis]
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        let dim = self.dim();
        &self.centers[cell * dim..(cell + 1) * dim]
    }

    /// Flat cell owning `x`, or `None` when `x` lies outside the open box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut cell = 0;
        for (axis, xa) in x.iter().enumerate().take(self.dim()) {
            let i = ((xa / self.spacing[axis]) as usize).min(self.cells[axis] - 1);
            cell += i * self.strides[axis];
        }
        Some(cell)
    }
}

/// Number of components carried per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
        }
    }
}

/// A scalar or vector quantity sampled once per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<RiskGrid>,
    rank: Rank,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<RiskGrid>, rank: Rank) -> Self {
        let len = grid.cell_count() * rank.components(grid.dim());
        Self {
            grid: Arc::clone(grid),
            rank,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(grid: &Arc<RiskGrid>, rank: Rank, values: Vec<f64>) -> Result<Self, SpaceError> {
        let expected = grid.cell_count() * rank.components(grid.dim());
        if values.len() != expected {
            return Err(SpaceError::ValueCount {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            grid: Arc::clone(grid),
            rank,
            values,
        })
    }

    /// Scalar field sampled at cell centers.
    pub fn scalar_from_fn(grid: &Arc<RiskGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.cell_count()).map(|cell| f(grid.center(cell))).collect();
        Self {
            grid: Arc::clone(grid),
            rank: Rank::Scalar,
            values,
        }
    }

    /// Vector field sampled at cell centers; `f` writes the n components.
    pub fn vector_from_fn(grid: &Arc<RiskGrid>, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let dim = grid.dim();
        let mut values = vec![0.0; grid.cell_count() * dim];
        for (cell, out) in values.chunks_exact_mut(dim).enumerate() {
            f(grid.center(cell), out);
        }
        Self {
            grid: Arc::clone(grid),
            rank: Rank::Vector,
            values,
        }
    }

    pub fn grid(&self) -> &Arc<RiskGrid> {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.rank.components(self.grid.dim())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Components stored for one cell.
    pub fn at(&self, cell: usize) -> &[f64] {
        let k = self.components();
        &self.values[cell * k..(cell + 1) * k]
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `self += alpha * other`; panics if layouts differ.
    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        assert_eq!(self.values.len(), other.values.len(), "field layout mismatch");
        for (y, x) in self.values.iter_mut().zip(&other.values) {
            *y += alpha * x;
        }
    }

    /// Per-cell magnitude of a vector field (identity on scalars' absolute value).
    pub fn norm_squared_at(&self, cell: usize) -> f64 {
        self.at(cell).iter().map(|v| v * v).sum()
    }

    /// Per-cell `x . F` for a vector field.
    pub fn dot_position(&self) -> Result<Field, SpaceError> {
        if self.rank != Rank::Vector {
            return Err(SpaceError::Rank { expected: "vector" });
        }
        let grid = &self.grid;
        Ok(Field::scalar_from_fn_indexed(grid, |cell| {
            dot(grid.center(cell), self.at(cell))
        }))
    }

    fn scalar_from_fn_indexed(grid: &Arc<RiskGrid>, f: impl Fn(usize) -> f64) -> Self {
        Self {
            grid: Arc::clone(grid),
            rank: Rank::Scalar,
            values: (0..grid.cell_count()).map(f).collect(),
        }
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn require_scalar(f: &Field) {
    assert_eq!(f.rank, Rank::Scalar, "expected a scalar field");
}

/// Midpoint-rule integral of a scalar field.
pub fn integrate(f: &Field) -> f64 {
    require_scalar(f);
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Componentwise integral of a field of any rank.
pub fn integrate_components(f: &Field) -> Vec<f64> {
    let k = f.components();
    let mut sums = vec![0.0; k];
    for chunk in f.values.chunks_exact(k) {
        for (s, v) in sums.iter_mut().zip(chunk) {
            *s += v;
        }
    }
    let vol = f.grid.cell_volume();
    sums.iter_mut().for_each(|s| *s *= vol);
    sums
}

/// `∫ x f dx`, one entry per axis.
pub fn first_moment(f: &Field) -> Vec<f64> {
    require_scalar(f);
    let grid = &f.grid;
    let mut out = vec![0.0; grid.dim()];
    for (cell, &value) in f.values.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(grid.center(cell)) {
            *o += x * value;
        }
    }
    let vol = grid.cell_volume();
    out.iter_mut().for_each(|o| *o *= vol);
    out
}

/// `∫ |x|² f dx`.
pub fn second_moment(f: &Field) -> f64 {
    require_scalar(f);
    let grid = &f.grid;
    f.values
        .iter()
        .enumerate()
        .map(|(cell, &value)| dot(grid.center(cell), grid.center(cell)) * value)
        .sum::<f64>()
        * grid.cell_volume()
}

/// Finite-volume divergence of a vector field.
///
/// The flux through the face between cells `L` and `R` along axis `k` is
/// `max(F_k(L), 0) + min(F_k(R), 0)`; the outer walls carry no flux.
pub fn divergence(field: &Field) -> Field {
    assert_eq!(field.rank, Rank::Vector, "divergence needs a vector field");
    let grid = &field.grid;
    let dim = grid.dim();
    let mut out = vec![0.0; grid.cell_count()];
    for_each_face(grid, |axis, left, right| {
        let flux = field.values[left * dim + axis].max(0.0) + field.values[right * dim + axis].min(0.0);
        let per_len = flux / grid.spacing[axis];
        out[left] += per_len;
        out[right] -= per_len;
    });
    Field {
        grid: Arc::clone(grid),
        rank: Rank::Scalar,
        values: out,
    }
}

/// Adds `-∇·(v f)` to `out`, with split upwind face fluxes
/// `v⁺(L) f(L) + v⁻(R) f(R)` and closed walls.
///
/// `f` may be scalar or vector; each of its components is carried by `v`.
pub(crate) fn add_transport_tendency(f: &[f64], comps: usize, velocity: &[f64], grid: &RiskGrid, out: &mut [f64]) {
    let dim = grid.dim();
    for_each_face(grid, |axis, left, right| {
        let vl = velocity[left * dim + axis].max(0.0);
        let vr = velocity[right * dim + axis].min(0.0);
        if vl == 0.0 && vr == 0.0 {
            return;
        }
        let inv_h = 1.0 / grid.spacing[axis];
        for c in 0..comps {
            let flux = (vl * f[left * comps + c] + vr * f[right * comps + c]) * inv_h;
            out[left * comps + c] -= flux;
            out[right * comps + c] += flux;
        }
    });
}

/// Visits every interior face once as `(axis, left cell, right cell)`.
pub(crate) fn for_each_face(grid: &RiskGrid, mut visit: impl FnMut(usize, usize, usize)) {
    let n = grid.cell_count();
    for axis in 0..grid.dim() {
        let stride = grid.strides[axis];
        let last = grid.cells[axis] - 1;
        for cell in 0..n {
            if grid.axis_index(cell, axis) < last {
                visit(axis, cell, cell + stride);
            }
        }
    }
}
