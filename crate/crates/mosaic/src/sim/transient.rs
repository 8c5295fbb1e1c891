//! Fixed-step transient analysis with trapezoidal capacitor companions.
//!
//! The initial condition is the DC operating point with time-varying
//! sources held at their t=0 values. Each grid step runs a Newton solve
//! warm-started from the previous instant; a step that refuses to
//! converge is retried with halved substeps down to `tstep/64`, and if
//! that still fails the waveform is returned truncated with a diagnostic.

use std::collections::BTreeMap;

use crate::netlist::{Circuit, GROUND};

use super::solver::Engine;
use super::SimError;

/// Sampled node voltages on a uniform time grid starting at t=0.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Waveform {
    pub time_s: Vec<f64>,
    pub signals: BTreeMap<String, Vec<f64>>,
    /// Set when integration stopped early; explains where and why.
    pub truncation: Option<String>,
}

impl Waveform {
    pub fn signal(&self, node: &str) -> Option<&[f64]> {
        self.signals
            .get(&crate::netlist::normalize_node(node))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }
}

/// Integrate the circuit from t=0 to `tstop` at fixed `tstep`.
pub fn transient(circuit: &Circuit, tstep: f64, tstop: f64) -> Result<Waveform, SimError> {
    if tstep <= 0.0 {
        return Err(SimError::BadRequest(format!(
            "tstep must be positive, got {tstep}"
        )));
    }
    if tstop < 10.0 * tstep {
        return Err(SimError::BadRequest(format!(
            "tstop ({tstop}) must cover at least ten steps of {tstep}"
        )));
    }

    let mut eng = Engine::new(circuit)?;
    eng.time = Some(0.0);
    let init = eng.solve_homotopy(None)?;
    if !init.converged {
        return Err(SimError::NoConvergence {
            residual: init.residual,
        });
    }
    for k in 0..eng.caps.len() {
        let c = &eng.caps[k];
        let v = Engine::v_at(&init.x, c.a) - Engine::v_at(&init.x, c.b);
        eng.cap_hist[k] = (v, 0.0);
    }

    let steps = ((tstop / tstep) + 1e-9).floor() as usize;
    let mut wave = Waveform {
        time_s: Vec::with_capacity(steps + 1),
        signals: BTreeMap::new(),
        truncation: None,
    };
    wave.signals.insert(GROUND.to_string(), Vec::new());
    for name in &eng.node_names {
        wave.signals.insert(name.clone(), Vec::new());
    }
    let record = |eng: &Engine, wave: &mut Waveform, t: f64, x: &[f64]| {
        wave.time_s.push(t);
        wave.signals.get_mut(GROUND).unwrap().push(0.0);
        for (i, name) in eng.node_names.iter().enumerate() {
            wave.signals.get_mut(name).unwrap().push(x[i]);
        }
    };
    record(&eng, &mut wave, 0.0, &init.x);

    let min_h = tstep / 64.0;
    let mut x = init.x;
    'grid: for k in 1..=steps {
        let t_target = k as f64 * tstep;
        let mut t_now = (k - 1) as f64 * tstep;
        let mut h = tstep;
        // the tail below a millionth of a step is rounding debris from
        // t_now accumulation, not a real integration interval
        while t_target - t_now > 1e-6 * tstep {
            h = h.min(t_target - t_now);
            eng.cap_h = Some(h);
            eng.time = Some(t_now + h);
            let attempt = eng.newton(Some(&x))?;
            if attempt.converged {
                for i in 0..eng.caps.len() {
                    let c = &eng.caps[i];
                    let geq = 2.0 * c.farads / h;
                    let v_new = Engine::v_at(&attempt.x, c.a) - Engine::v_at(&attempt.x, c.b);
                    let (v_prev, i_prev) = eng.cap_hist[i];
                    eng.cap_hist[i] = (v_new, geq * (v_new - v_prev) - i_prev);
                }
                x = attempt.x;
                t_now += h;
            } else {
                h /= 2.0;
                if h < min_h {
                    wave.truncation = Some(format!(
                        "transient step did not converge at t = {:.6e} s even at tstep/64; waveform truncated ({} of {} samples)",
                        t_now, wave.time_s.len(), steps + 1
                    ));
                    break 'grid;
                }
            }
        }
        if wave.truncation.is_some() {
            break;
        }
        record(&eng, &mut wave, t_target, &x);
    }
    Ok(wave)
}
