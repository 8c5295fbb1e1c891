//! Small-signal AC analysis at a single frequency.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::netlist::{normalize_node, Circuit};

use super::linalg::lu_solve;
use super::solver::Engine;
use super::SimError;

/// Linearize the circuit at its DC operating point and solve one complex
/// MNA system at `frequency_hz`, driving the sources named in
/// `excitation` with the given phasor magnitudes.
///
/// Returns the output node's phasor. The excitation map is taken as the
/// unit stimulus, so conventions are baked into it: a single-ended gain
/// uses `{vin: 1.0}`, a differential-mode gain `{vinp: +0.5, vinn: -0.5}`
/// (one volt of differential drive), and a common-mode gain `{vinp: 1.0,
/// vinn: 1.0}`. By linearity, scaling the map scales the phasor.
pub fn ac_gain(
    circuit: &Circuit,
    excitation: &BTreeMap<String, Complex64>,
    output: &str,
    frequency_hz: f64,
) -> Result<Complex64, SimError> {
    if frequency_hz <= 0.0 {
        return Err(SimError::BadRequest(format!(
            "AC frequency must be positive, got {frequency_hz}"
        )));
    }
    let mut eng = Engine::new(circuit)?;
    let op = eng.solve_homotopy(None)?;
    if !op.converged {
        return Err(SimError::NoConvergence {
            residual: op.residual,
        });
    }
    let out = normalize_node(output);
    if out == crate::netlist::GROUND {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let Some(&out_ix) = eng.node_ix.get(&out) else {
        return Err(SimError::BadRequest(format!(
            "output node \"{output}\" does not exist in the circuit"
        )));
    };

    let normalized: BTreeMap<String, Complex64> = excitation
        .iter()
        .map(|(k, v)| (k.to_ascii_lowercase(), *v))
        .collect();
    let omega = 2.0 * std::f64::consts::PI * frequency_hz;
    let (a, rhs) = eng.assemble_ac(&op.x, omega, &normalized);
    let x = lu_solve(&a, &rhs).map_err(|_| {
        SimError::Singular(format!("AC system at {frequency_hz} Hz"))
    })?;
    Ok(x[out_ix])
}
