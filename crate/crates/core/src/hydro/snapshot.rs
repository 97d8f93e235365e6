//! Plain-text field snapshots.
//!
//! ```text
//! # t=0.5 dim=1 cells=4 bounds=1 fields=A:scalar,PA:vector
//! 0 1.0 0.2
//! 1 ...
//! ```
//!
//! One row per cell: the flat cell index, then every field's components in
//! header order.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::espace::{Field, Rank, RiskGrid, SpaceError};

use super::{FieldId, HydroState};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Hydro(#[from] super::HydroError),
}

/// Named fields on one grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub grid: Arc<RiskGrid>,
    pub fields: Vec<(String, Field)>,
}

impl Snapshot {
    /// Every evolved field of the state, plus the self-consistent closure
    /// diagnostics when `with_diagnostics` is set and the state does not
    /// evolve them.
    pub fn from_state(state: &HydroState, with_diagnostics: bool) -> Snapshot {
        let ids: &[FieldId] = if with_diagnostics {
            &FieldId::ALL
        } else {
            state.evolved()
        };
        Snapshot {
            time: state.time,
            grid: Arc::clone(state.grid()),
            fields: ids
                .iter()
                .map(|&id| (id.name().to_string(), state.field(id).into_owned()))
                .collect(),
        }
    }

    /// Rebuilds a state from a snapshot holding the 4 primary or all 14 fields.
    pub fn to_state(&self) -> Result<HydroState, SnapshotError> {
        let count = if self.fields.len() >= FieldId::ALL.len() { 14 } else { 4 };
        let mut ordered = Vec::with_capacity(count);
        for id in &FieldId::ALL[..count] {
            let field = self
                .fields
                .iter()
                .find(|(name, _)| name == id.name())
                .map(|(_, f)| f.clone())
                .ok_or_else(|| SnapshotError::Parse {
                    line: 1,
                    message: format!("snapshot lacks field {id}"),
                })?;
            ordered.push(field);
        }
        Ok(HydroState::from_fields(self.time, ordered)?)
    }

    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# t={} dim={} cells={} bounds={} fields={}",
            self.time,
            g.dim(),
            join(g.cells_per_axis().iter().map(|c| c.to_string()).collect()),
            join(g.domain().upper_bounds().iter().map(|b| b.to_string()).collect()),
            join(
                self.fields
                    .iter()
                    .map(|(name, f)| format!("{name}:{}", f.rank().name()))
                    .collect()
            ),
        );
        for cell in 0..g.cell_count() {
            out.push_str(&cell.to_string());
            for (_, f) in &self.fields {
                for v in f.at(cell) {
                    let _ = write!(out, " {v:e}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Snapshot, SnapshotError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty snapshot"))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| perr(1, "header must start with '#'"))?;
        let mut time = None;
        let mut dim = None;
        let mut cells = None;
        let mut bounds = None;
        let mut specs = None;
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| perr(1, &format!("malformed header entry {token:?}")))?;
            match key {
                "t" => time = Some(num::<f64>(1, value)?),
                "dim" => dim = Some(num::<usize>(1, value)?),
                "cells" => cells = Some(list::<usize>(value)?),
                "bounds" => bounds = Some(list::<f64>(value)?),
                "fields" => {
                    let mut out = Vec::new();
                    for spec in value.split(',').filter(|s| !s.is_empty()) {
                        let (name, rank) = spec
                            .split_once(':')
                            .ok_or_else(|| perr(1, &format!("field spec {spec:?} lacks a rank")))?;
                        let rank = match rank {
                            "scalar" => Rank::Scalar,
                            "vector" => Rank::Vector,
                            other => return Err(perr(1, &format!("unknown rank {other:?}"))),
                        };
                        out.push((name.to_string(), rank));
                    }
                    specs = Some(out);
                }
                other => return Err(perr(1, &format!("unknown header key {other:?}"))),
            }
        }
        let missing = |what: &str| perr(1, &format!("header lacks {what}"));
        let time = time.ok_or_else(|| missing("t"))?;
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let cells = cells.ok_or_else(|| missing("cells"))?;
        let bounds = bounds.ok_or_else(|| missing("bounds"))?;
        let specs = specs.ok_or_else(|| missing("fields"))?;
        if cells.len() != dim || bounds.len() != dim {
            return Err(perr(1, "cells/bounds disagree with dim"));
        }
        let grid = Arc::new(RiskGrid::uniform(&bounds, &cells)?);
        let widths: Vec<usize> = specs.iter().map(|(_, r)| r.components(dim)).collect();
        let row_len: usize = widths.iter().sum();
        let mut columns: Vec<Vec<f64>> = widths
            .iter()
            .map(|w| Vec::with_capacity(w * grid.cell_count()))
            .collect();
        let mut seen = 0usize;
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let index: usize = num(lineno + 1, tokens.next().unwrap_or(""))?;
            if index != seen {
                return Err(perr(lineno + 1, &format!("expected cell {seen}, found {index}")));
            }
            let values = tokens
                .map(|t| num::<f64>(lineno + 1, t))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != row_len {
                return Err(perr(
                    lineno + 1,
                    &format!("expected {row_len} values, found {}", values.len()),
                ));
            }
            let mut offset = 0;
            for (col, &w) in columns.iter_mut().zip(&widths) {
                col.extend_from_slice(&values[offset..offset + w]);
                offset += w;
            }
            seen += 1;
        }
        if seen != grid.cell_count() {
            return Err(perr(
                text.lines().count(),
                &format!("expected {} cells, found {seen}", grid.cell_count()),
            ));
        }
        let fields = specs
            .into_iter()
            .zip(columns)
            .map(|((name, rank), values)| Ok((name, Field::from_values(&grid, rank, values)?)))
            .collect::<Result<Vec<_>, SnapshotError>>()?;
        Ok(Snapshot { time, grid, fields })
    }
}

fn perr(line: usize, message: &str) -> SnapshotError {
    SnapshotError::Parse {
        line,
        message: message.to_string(),
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, SnapshotError> {
    s.parse().map_err(|_| perr(line, &format!("cannot parse {s:?}")))
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, SnapshotError> {
    s.split(',').map(|t| num(1, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::Mode;

    fn sample_state(cells: &[usize]) -> HydroState {
        let bounds = vec![1.0; cells.len()];
        let g = Arc::new(RiskGrid::uniform(&bounds, cells).unwrap());
        let a = Field::scalar_from_fn(&g, |x| 1.0 + x[0]);
        let b = Field::scalar_from_fn(&g, |x| 2.0 - x[0]);
        let pa = Field::vector_from_fn(&g, |x, out| out.iter_mut().for_each(|o| *o = 0.1 * x[0]));
        let pb = Field::vector_from_fn(&g, |x, out| out.iter_mut().for_each(|o| *o = -0.3 * x[0]));
        HydroState::new(a, b, pa, pb, Mode::Hierarchy).unwrap()
    }

    #[test]
    fn header_layout() {
        let s = sample_state(&[3]);
        let text = Snapshot::from_state(&s, false).to_text();
        let header = text.lines().next().unwrap();
        assert!(
            header.starts_with("# t=0 dim=1 cells=3 bounds=1 fields=A:scalar,B:scalar,PA:vector,PB:vector,EA:scalar")
        );
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("0 "));
    }

    #[test]
    fn state_round_trip_two_dimensions() {
        let s = sample_state(&[3, 4]);
        let snap = Snapshot::from_state(&s, false);
        let back = Snapshot::parse(&snap.to_text()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.to_state().unwrap(), s);
    }

    #[test]
    fn malformed_rows_report_line() {
        let s = sample_state(&[2]);
        let text = Snapshot::from_state(&s.into_mode(Mode::SelfConsistent), false).to_text();
        let broken = text.replace("\n1 ", "\n1 zz ");
        assert!(matches!(
            Snapshot::parse(&broken),
            Err(SnapshotError::Parse { line: 3, .. })
        ));
        let short: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(Snapshot::parse(&short).is_err());
    }
}
