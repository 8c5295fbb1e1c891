//! Stage 2b: every MOSFET must be active at the operating point.

use crate::netlist::Polarity;
use crate::report::{Stage, StageReport};
use crate::sim::OpSolution;

/// Tolerance on the active-region inequalities. Ideal square-law circuits
/// routinely bias a device exactly onto a region boundary, so the check
/// forgives up to one millivolt.
pub const OP_CHECK_MARGIN_V: f64 = 1e-3;

/// Pass iff every MOSFET satisfies `Vgs > Vth` and `Vds > Vgs - Vth`
/// (polarity-reflected for PMOS), each within [`OP_CHECK_MARGIN_V`].
/// Failures name the device, its region, and the violated inequality
/// with numeric values.
pub fn check_operating_points(op: &OpSolution) -> StageReport {
    let mut findings = Vec::new();
    for dev in &op.devices {
        // Reflect PMOS onto NMOS conventions: overdrive quantities are
        // then non-negative when the device is properly on.
        let (vgs, vds, vth) = match dev.polarity {
            Polarity::Nmos => (dev.vgs, dev.vds, dev.vto),
            Polarity::Pmos => (-dev.vgs, -dev.vds, -dev.vto),
        };
        if vgs <= vth - OP_CHECK_MARGIN_V {
            findings.push(format!(
                "MOSFET {} is not conducting ({}): Vgs = {:.3} V must exceed Vth = {:.3} V.",
                dev.element_name, dev.region, vgs, vth
            ));
        } else if vds <= (vgs - vth) - OP_CHECK_MARGIN_V {
            findings.push(format!(
                "MOSFET {} is not in saturation ({}): Vds = {:.3} V must exceed Vgs - Vth = {:.3} V.",
                dev.element_name,
                dev.region,
                vds,
                vgs - vth
            ));
        }
    }
    if findings.is_empty() {
        StageReport::passed(Stage::OpCheck)
    } else {
        StageReport::failed(Stage::OpCheck, findings)
    }
}
