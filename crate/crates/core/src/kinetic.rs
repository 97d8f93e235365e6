//! Agent ensemble on the risk space and its deposition onto the grid.
//!
//! Each agent carries a position (its risk ratings), a velocity (risk drift)
//! and a list of additive variables. Depositing one variable bins the agents
//! into cells, giving a density and an impulse field whose ratio is the
//! mass-weighted mean velocity of the cell.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::espace::{Field, Rank, RiskGrid};

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("particle {index} at {position:?} lies outside the risk domain")]
    OutsideDomain { index: usize, position: Vec<f64> },
    #[error("particle {index} has {got} variables, ensemble arity is {expected}")]
    Arity { index: usize, expected: usize, got: usize },
    #[error("particle {index} has a {what} of dimension {got}, grid dimension is {expected}")]
    Dimension {
        index: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variable index {index} out of range for arity {arity}")]
    VariableIndex { index: usize, arity: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EParticle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub variables: Vec<f64>,
}

/// `u v`, the impulse an agent carries for one of its variables.
pub fn particle_impulse(u: f64, velocity: &[f64]) -> Vec<f64> {
    velocity.iter().map(|v| u * v).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<EParticle>,
    pub variable_names: Vec<String>,
}

impl Ensemble {
    pub fn new(variable_names: Vec<String>) -> Self {
        Self {
            particles: Vec::new(),
            variable_names,
        }
    }

    pub fn arity(&self) -> usize {
        self.variable_names.len()
    }

    pub fn push(&mut self, particle: EParticle) -> Result<(), KineticError> {
        if particle.variables.len() != self.arity() {
            return Err(KineticError::Arity {
                index: self.particles.len(),
                expected: self.arity(),
                got: particle.variables.len(),
            });
        }
        self.particles.push(particle);
        Ok(())
    }

    /// Sum of one variable over all agents.
    pub fn total(&self, variable: usize) -> f64 {
        self.particles.iter().map(|p| p.variables[variable]).sum()
    }

    /// Concatenation of two ensembles with the same variable layout.
    pub fn merged(&self, other: &Ensemble) -> Result<Ensemble, KineticError> {
        let mut out = self.clone();
        for p in &other.particles {
            out.push(p.clone())?;
        }
        Ok(out)
    }

    /// Reads the plain-text snapshot format: one agent per line,
    /// `x1 .. xn v1 .. vn u1 .. ul`, `#` starts a comment.
    pub fn parse(text: &str, dim: usize) -> Result<Ensemble, KineticError> {
        let mut ensemble: Option<Ensemble> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| KineticError::Parse {
                        line: lineno + 1,
                        message: format!("not a number: {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() <= 2 * dim {
                return Err(KineticError::Parse {
                    line: lineno + 1,
                    message: format!("expected more than {} values, got {}", 2 * dim, values.len()),
                });
            }
            let arity = values.len() - 2 * dim;
            let ens = ensemble.get_or_insert_with(|| Ensemble::new((1..=arity).map(|i| format!("u{i}")).collect()));
            if arity != ens.arity() {
                return Err(KineticError::Parse {
                    line: lineno + 1,
                    message: format!("expected {} variables, got {arity}", ens.arity()),
                });
            }
            ens.particles.push(EParticle {
                position: values[..dim].to_vec(),
                velocity: values[dim..2 * dim].to_vec(),
                variables: values[2 * dim..].to_vec(),
            });
        }
        Ok(ensemble.unwrap_or_default())
    }

    pub fn read(path: &Path, dim: usize) -> Result<Ensemble, KineticError> {
        Self::parse(&std::fs::read_to_string(path)?, dim)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# x.. v.. {}", self.variable_names.join(" "));
        for p in &self.particles {
            let line: Vec<String> = p
                .position
                .iter()
                .chain(&p.velocity)
                .chain(&p.variables)
                .map(|v| format!("{v:e}"))
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Draws `count` agents whose positions follow `density` by rejection
    /// sampling against `density_max`. Every agent receives `weights` as its
    /// variables and `velocity(x) + spread * N(0, 1)` per component.
    #[allow(clippy::too_many_arguments)]
    pub fn sample<R: Rng + ?Sized>(
        grid: &RiskGrid,
        count: usize,
        density: impl Fn(&[f64]) -> f64,
        density_max: f64,
        velocity: impl Fn(&[f64]) -> Vec<f64>,
        spread: f64,
        weights: &[f64],
        variable_names: Vec<String>,
        rng: &mut R,
    ) -> Ensemble {
        let bounds = grid.domain().upper_bounds();
        let mut ensemble = Ensemble::new(variable_names);
        let mut x = vec![0.0; bounds.len()];
        while ensemble.particles.len() < count {
            for (xi, &b) in x.iter_mut().zip(bounds) {
                *xi = rng.random::<f64>() * b;
            }
            if !grid.domain().contains(&x) {
                continue;
            }
            if rng.random::<f64>() * density_max > density(&x) {
                continue;
            }
            let mut v = velocity(&x);
            for vi in v.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *vi += spread * z;
            }
            ensemble.particles.push(EParticle {
                position: x.clone(),
                velocity: v,
                variables: weights.to_vec(),
            });
        }
        ensemble
    }
}

/// Bins one variable of the ensemble into a density and an impulse field.
///
/// Each agent belongs to exactly one cell, so the integral of the density is
/// the ensemble total of the variable.
pub fn deposit(ensemble: &Ensemble, grid: &Arc<RiskGrid>, variable: usize) -> Result<(Field, Field), KineticError> {
    if variable >= ensemble.arity() {
        return Err(KineticError::VariableIndex {
            index: variable,
            arity: ensemble.arity(),
        });
    }
    let dim = grid.dim();
    let mut density = vec![0.0; grid.cell_count()];
    let mut impulse = vec![0.0; grid.cell_count() * dim];
    for (index, p) in ensemble.particles.iter().enumerate() {
        for (what, len) in [("position", p.position.len()), ("velocity", p.velocity.len())] {
            if len != dim {
                return Err(KineticError::Dimension {
                    index,
                    what,
                    expected: dim,
                    got: len,
                });
            }
        }
        if p.variables.len() != ensemble.arity() {
            return Err(KineticError::Arity {
                index,
                expected: ensemble.arity(),
                got: p.variables.len(),
            });
        }
        let cell = grid.locate(&p.position).ok_or_else(|| KineticError::OutsideDomain {
            index,
            position: p.position.clone(),
        })?;
        let u = p.variables[variable];
        density[cell] += u;
        for (acc, v) in impulse[cell * dim..(cell + 1) * dim].iter_mut().zip(&p.velocity) {
            *acc += u * v;
        }
    }
    let inv_vol = 1.0 / grid.cell_volume();
    density.iter_mut().for_each(|d| *d *= inv_vol);
    impulse.iter_mut().for_each(|d| *d *= inv_vol);
    Ok((
        Field::from_values(grid, Rank::Scalar, density).expect("layout"),
        Field::from_values(grid, Rank::Vector, impulse).expect("layout"),
    ))
}

/// Default vacuum threshold: `1e-12 * max(max density, 1)`.
pub fn default_epsilon(density: &Field) -> f64 {
    let peak = density.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1e-12 * peak.max(1.0)
}

/// `v = P / max(U, eps)` per cell. Cells with `U <= eps` whose impulse is
/// also below `eps * max|P|` get zero velocity.
pub fn velocity_field(density: &Field, impulse: &Field, epsilon: f64) -> Field {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut out = Field::zeros(density.grid(), Rank::Vector);
    fill_velocity(
        density.values(),
        impulse.values(),
        density.grid().dim(),
        epsilon,
        out.values_mut(),
    );
    out
}

pub(crate) fn fill_velocity(density: &[f64], impulse: &[f64], dim: usize, epsilon: f64, out: &mut [f64]) {
    let impulse_cut = epsilon * impulse.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    for (cell, &rho) in density.iter().enumerate() {
        let p = &impulse[cell * dim..(cell + 1) * dim];
        let v = &mut out[cell * dim..(cell + 1) * dim];
        if rho <= epsilon && p.iter().all(|pi| pi.abs() <= impulse_cut) {
            v.iter_mut().for_each(|vi| *vi = 0.0);
            continue;
        }
        let inv = 1.0 / rho.max(epsilon);
        for (vi, pi) in v.iter_mut().zip(p) {
            *vi = pi * inv;
        }
    }
}
