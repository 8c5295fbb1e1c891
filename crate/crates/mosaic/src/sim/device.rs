//! Level-1 MOSFET evaluation (square-law model with optional
//! channel-length modulation).
//!
//! For an NMOS with `vdsat = vgs - vto`:
//!
//! ```text
//! cutoff      vgs <= vto         id = 0
//! triode      vds <  vdsat       id = kp·(w/l)·[(vgs-vto)·vds - vds²/2]·(1+λ·vds)
//! saturation  vds >= vdsat       id = (kp/2)·(w/l)·(vgs-vto)²·(1+λ·vds)
//! ```
//!
//! `gm = ∂id/∂vgs` and `gds = ∂id/∂vds` are the exact analytic partial
//! derivatives of the same piecewise form, which is C¹ across both region
//! boundaries. Negative `vds` is handled by evaluating the device with
//! drain and source roles swapped, keeping the current continuous through
//! `vds = 0`. A PMOS is evaluated with all voltages and the current
//! negated.

use crate::netlist::{DeviceModel, Polarity};

/// MOSFET operating region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Cutoff,
    Triode,
    Saturation,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Region::Cutoff => "cutoff",
            Region::Triode => "triode",
            Region::Saturation => "saturation",
        };
        f.write_str(s)
    }
}

/// Snapshot of one MOSFET at an operating point.
///
/// `vgs` and `vds` are the raw terminal voltages. `id` is the conduction
/// current, oriented so that normal forward operation is positive for both
/// polarities (drain→source for NMOS, source→drain for PMOS). `gm` and
/// `gds` are non-negative small-signal conductances for both polarities.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeviceState {
    pub element_name: String,
    pub polarity: Polarity,
    pub region: Region,
    pub id: f64,
    pub vgs: f64,
    pub vds: f64,
    pub gm: f64,
    pub gds: f64,
    /// Threshold voltage of the model, carried along for operating-point
    /// checks.
    pub vto: f64,
}

/// Evaluation result used by the solver: `i_drain` is the signed current
/// into the drain terminal (negative for a conducting PMOS).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linearization {
    pub i_drain: f64,
    pub gm: f64,
    pub gds: f64,
    pub region: Region,
}

/// Evaluate a MOSFET at the given terminal voltages.
///
/// Standalone evaluations leave `element_name` empty; the solver fills it
/// in when it builds an operating point.
pub fn device_current(model: &DeviceModel, w: f64, l: f64, vgs: f64, vds: f64) -> DeviceState {
    let lin = linearize(model, w, l, vgs, vds);
    let id = match model.polarity {
        Polarity::Nmos => lin.i_drain,
        Polarity::Pmos => -lin.i_drain,
    };
    DeviceState {
        element_name: String::new(),
        polarity: model.polarity,
        region: lin.region,
        id,
        vgs,
        vds,
        gm: lin.gm,
        gds: lin.gds,
        vto: model.vto,
    }
}

pub(crate) fn linearize(model: &DeviceModel, w: f64, l: f64, vgs: f64, vds: f64) -> Linearization {
    let wl = w / l;
    match model.polarity {
        Polarity::Nmos => eval_signed(model.kp, model.vto, model.lambda, wl, vgs, vds),
        Polarity::Pmos => {
            // Reflect to an equivalent NMOS, then negate the current. The
            // conductances are invariant under the double sign flip.
            let n = eval_signed(model.kp, -model.vto, model.lambda, wl, -vgs, -vds);
            Linearization {
                i_drain: -n.i_drain,
                gm: n.gm,
                gds: n.gds,
                region: n.region,
            }
        }
    }
}

/// NMOS-form evaluation valid for either sign of `vds`.
fn eval_signed(kp: f64, vto: f64, lambda: f64, wl: f64, vgs: f64, vds: f64) -> Linearization {
    if vds >= 0.0 {
        eval_forward(kp, vto, lambda, wl, vgs, vds)
    } else {
        // Swap drain and source: the gate-source voltage of the swapped
        // device is vgd = vgs - vds, and its vds is -vds.
        let f = eval_forward(kp, vto, lambda, wl, vgs - vds, -vds);
        Linearization {
            i_drain: -f.i_drain,
            gm: -f.gm,
            gds: f.gm + f.gds,
            region: f.region,
        }
    }
}

fn eval_forward(kp: f64, vto: f64, lambda: f64, wl: f64, vgs: f64, vds: f64) -> Linearization {
    let vov = vgs - vto;
    if vov <= 0.0 {
        return Linearization {
            i_drain: 0.0,
            gm: 0.0,
            gds: 0.0,
            region: Region::Cutoff,
        };
    }
    let clm = 1.0 + lambda * vds;
    if vds < vov {
        let shape = vov * vds - 0.5 * vds * vds;
        Linearization {
            i_drain: kp * wl * shape * clm,
            gm: kp * wl * vds * clm,
            gds: kp * wl * ((vov - vds) * clm + shape * lambda),
            region: Region::Triode,
        }
    } else {
        let base = 0.5 * kp * wl * vov * vov;
        Linearization {
            i_drain: base * clm,
            gm: kp * wl * vov * clm,
            gds: base * lambda,
            region: Region::Saturation,
        }
    }
}
