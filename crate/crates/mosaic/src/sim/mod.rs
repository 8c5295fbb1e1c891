//! Circuit simulation: DC operating point, DC sweep, transient, and
//! small-signal AC analysis via modified nodal analysis.
//!
//! The MNA unknowns are the non-ground node voltages followed by the
//! branch currents of the voltage sources. Nonlinear solves run
//! Newton-Raphson with companion-model stamps; a permanent 1e-12 S
//! drain-source conductance on every MOSFET keeps ideal square-law
//! circuits (zero output conductance when lambda is 0) regular without
//! disturbing linear networks. When plain Newton fails, the solver falls
//! back to gmin stepping (extra node-to-ground conductance, 1e-3 down to
//! 1e-12 S by decades, then annealed away) and source stepping (0 to
//! 100% in ten ramps).
//!
//! One solver instance owns one mutable workspace; distinct circuits can
//! be solved concurrently, a single solve is single-threaded.

mod ac;
mod device;
mod linalg;
mod solver;
mod transient;

pub use ac::ac_gain;
pub use device::{device_current, DeviceState, Region};
pub use solver::{dc_sweep, quasi_static_sweep, solve_op, OpSolution, SweepResult};
pub use transient::{transient, Waveform};

use thiserror::Error;

use crate::netlist::NetlistError;

/// Convergence: max node-voltage delta below this, volts.
pub const VTOL: f64 = 1e-6;
/// Convergence: max KCL residual below this, amperes.
pub const ITOL: f64 = 1e-9;
/// Permanent node-to-ground conductance floor, siemens.
pub const GMIN: f64 = 1e-12;
/// Newton update clamp per node per iteration, volts.
pub const DAMP_V: f64 = 0.5;
/// Iteration budget per Newton attempt.
pub const MAX_NEWTON_ITERS: usize = 200;

/// Simulation failures. The display texts are exactly what the design
/// loop forwards to the generator as repair feedback.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("circuit contains unflattened subcircuit instances; flatten before solving")]
    Unflattened,
    #[error("floating node or degenerate topology: node(s) {} have fewer than two element connections", .0.join(", "))]
    FloatingNode(Vec<String>),
    #[error("floating node or degenerate topology: singular system near \"{0}\"")]
    Singular(String),
    #[error("operating point did not converge: last residual {residual:.3e} A after gmin and source stepping")]
    NoConvergence { residual: f64 },
    #[error("unknown source \"{0}\"")]
    UnknownSource(String),
    #[error("{0}")]
    BadRequest(String),
}
