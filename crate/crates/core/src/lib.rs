//! Hydrodynamic-like simulator for an economy of agents on a bounded
//! risk-rating space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregates;
pub mod analysis;
pub mod cli;
pub mod espace;
pub mod hydro;
pub mod kinetic;
pub mod odesys;
