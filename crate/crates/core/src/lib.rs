//! Numerical laboratory for quasilinear elliptic systems in divergence form:
//! structure-condition certification of coefficient tensors, finite element
//! solves with frozen-coefficient iteration, and the level-set machinery
//! (superlevel energy estimates, excess decay, iteration lemma) used to
//! certify local boundedness of solutions at mesh scale.

pub mod analysis;
pub mod cli;
pub mod coefficients;
pub mod degiorgi;
pub mod error;
pub mod field;
pub mod mesh;
pub mod report;
pub mod solver;
