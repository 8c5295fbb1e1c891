//! Stage 4: per-circuit-type functional checks.
//!
//! Each check applies a stipulated stimulus, measures the output, and
//! asserts that circuit type's criteria. Measurement analytics are
//! factored into standalone assessment functions so they can be verified
//! on synthetic waveforms, independent of any simulation.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::netlist::{normalize_node, Circuit, Device, SourceSpec, Waveshape, GROUND};
use crate::report::{Stage, StageReport};
use crate::sim::{ac_gain, quasi_static_sweep, solve_op, transient, OpSolution, Waveform};
use crate::tasks::{CircuitType, TaskSpec};

use super::signal::{find_peaks, linear_fit, period_stats};
use super::{InverterPolarity, VerifyOptions};

/// Gains are measured at this frequency.
pub const FUNC_AC_FREQ_HZ: f64 = 100.0;
/// "Nonzero gain" floor: anything below a microvolt per volt counts as no
/// signal path.
pub const GAIN_FLOOR: f64 = 1e-6;
/// "Conducting" floor for drain currents.
pub const ID_FLOOR: f64 = 1e-12;
/// Oscillator and VCO transients: 10 ms at 1 us.
pub const OSC_TSTEP_S: f64 = 1e-6;
pub const OSC_TSTOP_S: f64 = 10e-3;
/// Integrator/differentiator transients: 5 ms at 1 us, driven by a 1 kHz,
/// 1 V-amplitude stimulus centered at Vdd/2.
pub const WAVE_TSTEP_S: f64 = 1e-6;
pub const WAVE_TSTOP_S: f64 = 5e-3;
pub const STIM_FREQ_HZ: f64 = 1000.0;
pub const STIM_AMPLITUDE_V: f64 = 1.0;
/// PLL: 20 us at 1 ns against a 10 MHz 0/5 V pulse reference.
pub const PLL_TSTEP_S: f64 = 1e-9;
pub const PLL_TSTOP_S: f64 = 20e-6;
pub const PLL_REF_HZ: f64 = 10e6;
/// Leading fraction of a waveform discarded as startup transient when
/// measuring frequencies.
pub const STARTUP_DISCARD: f64 = 0.2;
pub const VCO_CONTROL_V: [f64; 3] = [0.7, 0.8, 0.85];
pub const VCO_MIN_PERIOD_DIFF_S: f64 = 1e-6;
pub const SCHMITT_STEP_V: f64 = 0.01;
pub const SCHMITT_MIN_HYSTERESIS_V: f64 = 0.05;
pub const EPSILON_LIMIT: f64 = 0.2;

/// One assessment verdict: criteria findings plus the numbers measured.
#[derive(Debug, Clone, Default)]
pub struct Assessment {
    pub findings: Vec<String>,
    pub measurements: BTreeMap<String, f64>,
}

impl Assessment {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }

    fn measure(&mut self, name: &str, value: f64) {
        self.measurements.insert(name.to_string(), value);
    }

    fn into_report(self) -> StageReport {
        let mut report = if self.findings.is_empty() {
            StageReport::passed(Stage::Function)
        } else {
            StageReport::failed(Stage::Function, self.findings)
        };
        report.measurements.extend(self.measurements);
        report
    }
}

fn fail(findings: Vec<String>) -> StageReport {
    StageReport::failed(Stage::Function, findings)
}

/// Dispatch the functional check for the task's circuit type. The circuit
/// is expected flattened with bias substitutions already applied.
pub fn run_function_check(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    match task.circuit_type {
        CircuitType::Amplifier => check_amplifier(circuit, task, opts),
        CircuitType::CurrentMirror => check_current_mirror(circuit, task),
        CircuitType::Inverter => check_inverter(circuit, task, opts),
        CircuitType::Opamp => check_opamp(circuit, task, opts),
        CircuitType::Oscillator => check_oscillator(circuit, task),
        CircuitType::Integrator => check_integrator(circuit, task, opts),
        CircuitType::Differentiator => check_differentiator(circuit, task, opts),
        CircuitType::Adder => check_adder(circuit, task),
        CircuitType::Subtractor => check_subtractor(circuit, task, opts),
        CircuitType::SchmittTrigger => check_schmitt(circuit, task, opts),
        CircuitType::Vco => check_vco(circuit, task),
        CircuitType::Pll => check_pll(circuit, task),
    }
}

// ---------------------------------------------------------------------
// shared helpers

fn driver_name(circuit: &Circuit, node: &str) -> Result<String, StageReport> {
    circuit
        .voltage_source_at(node)
        .map(|el| el.name.clone())
        .ok_or_else(|| {
            fail(vec![format!(
                "No voltage source drives node {node}; the check cannot apply its stimulus."
            )])
        })
}

fn source_dc(circuit: &Circuit, name: &str) -> f64 {
    match circuit.element(name).map(|el| &el.device) {
        Some(Device::VoltageSource(s)) | Some(Device::CurrentSource(s)) => s.dc,
        _ => 0.0,
    }
}

fn with_source_waveform(circuit: &Circuit, source: &str, shape: Waveshape) -> Circuit {
    let mut c = circuit.clone();
    let dc = shape.value_at(0.0);
    c.set_source_spec(
        source,
        SourceSpec {
            dc,
            waveform: Some(shape),
        },
    );
    c
}

fn every_mosfet_conducts(op: &OpSolution) -> Vec<String> {
    op.devices
        .iter()
        .filter(|d| d.id <= ID_FLOOR)
        .map(|d| {
            format!(
                "MOSFET {} carries no drain current (Id = {:.3e} A, {}); every transistor must conduct (Id > 0).",
                d.element_name, d.id, d.region
            )
        })
        .collect()
}

fn unit_excitation(source: &str) -> BTreeMap<String, Complex64> {
    let mut m = BTreeMap::new();
    m.insert(source.to_string(), Complex64::new(1.0, 0.0));
    m
}

fn db(x: f64) -> f64 {
    20.0 * x.max(1e-15).log10()
}

/// Peak-detection prominence for a measured waveform: a tenth of its
/// peak-to-peak range, floored at 0.1 uV.
pub fn waveform_prominence(signal: &[f64]) -> f64 {
    let hi = signal.iter().copied().fold(f64::MIN, f64::max);
    let lo = signal.iter().copied().fold(f64::MAX, f64::min);
    (0.1 * (hi - lo)).max(1e-7)
}

/// True when some MOSFET sits on an input-to-output signal path: it has
/// one terminal reachable from the input and one that reaches the output,
/// where reachability treats every element as connecting its nodes and
/// never expands through ground. Circuits that fail this are purely
/// passive between the two nodes.
pub fn mosfet_on_signal_path(circuit: &Circuit, input: &str, output: &str) -> bool {
    let reach = |start: &str| -> BTreeSet<String> {
        let start = normalize_node(start);
        let mut seen = BTreeSet::new();
        let mut queue = vec![start];
        while let Some(node) = queue.pop() {
            if !seen.insert(node.clone()) || node == GROUND {
                continue;
            }
            for el in &circuit.elements {
                if el.nodes.contains(&node) {
                    for other in &el.nodes {
                        if !seen.contains(other) {
                            queue.push(other.clone());
                        }
                    }
                }
            }
        }
        seen
    };
    let from_input = reach(input);
    let from_output = reach(output);
    circuit.mosfets().any(|m| {
        m.nodes.iter().any(|n| from_input.contains(n))
            && m.nodes.iter().any(|n| from_output.contains(n))
    })
}

/// Mean output period after discarding the leading startup fraction.
fn measured_period(wave: &Waveform, node: &str) -> Result<f64, String> {
    let Some(signal) = wave.signal(node) else {
        return Err(format!("output node {node} is missing from the waveform"));
    };
    let cut = (wave.time_s.len() as f64 * STARTUP_DISCARD) as usize;
    let tail = &signal[cut..];
    let times = &wave.time_s[cut..];
    let peaks = find_peaks(tail, waveform_prominence(tail));
    let peak_times: Vec<f64> = peaks.iter().map(|&i| times[i]).collect();
    period_stats(&peak_times)
        .map(|s| s.mean_period)
        .map_err(|e| e.to_string())
}

fn simulate(circuit: &Circuit, tstep: f64, tstop: f64) -> Result<Waveform, StageReport> {
    match transient(circuit, tstep, tstop) {
        Ok(wave) => {
            if let Some(note) = &wave.truncation {
                Err(fail(vec![note.clone()]))
            } else {
                Ok(wave)
            }
        }
        Err(e) => Err(fail(vec![e.to_string()])),
    }
}

// ---------------------------------------------------------------------
// Amplifier: nonzero gain at 100 Hz and every device conducting.

fn check_amplifier(circuit: &Circuit, task: &TaskSpec, _opts: &VerifyOptions) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["Amplifier task has no input node.".to_string()]),
    };
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let op = match solve_op(circuit) {
        Ok(op) => op,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let mut a = Assessment::default();
    a.findings.extend(every_mosfet_conducts(&op));
    let min_id = op.devices.iter().map(|d| d.id).fold(f64::MAX, f64::min);
    if min_id.is_finite() {
        a.measure("min_id_amps", min_id);
    }
    match ac_gain(circuit, &unit_excitation(&source), task.primary_output(), FUNC_AC_FREQ_HZ) {
        Ok(gain) => {
            a.measure("gain_db", db(gain.norm()));
            a.measure("gain_re", gain.re);
            a.measure("gain_im", gain.im);
            if gain.norm() <= GAIN_FLOOR {
                a.findings.push(format!(
                    "Gain |Av| = {:.3e} at {} Hz is below the measurable floor; the output does not follow the input.",
                    gain.norm(),
                    FUNC_AC_FREQ_HZ
                ));
            }
        }
        Err(e) => a.findings.push(e.to_string()),
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// CurrentMirror: output device keeps its current flat across load steps.

fn check_current_mirror(circuit: &Circuit, task: &TaskSpec) -> StageReport {
    let output = normalize_node(task.primary_output());
    let load = circuit.elements.iter().find_map(|el| {
        matches!(el.device, Device::Resistor { .. })
            .then(|| el.nodes.contains(&output).then(|| el.name.clone()))
            .flatten()
    });
    let Some(load) = load else {
        return fail(vec![format!(
            "No load resistor is connected to the output node {}; the check adjusts a resistive load.",
            task.primary_output()
        )]);
    };
    let out_device = circuit
        .mosfets()
        .find(|m| m.nodes[0] == output)
        .or_else(|| circuit.mosfets().find(|m| m.nodes.contains(&output)))
        .map(|m| m.name.clone());
    let Some(out_device) = out_device else {
        return fail(vec![format!(
            "No MOSFET drives the output node {}; a current mirror needs an output transistor.",
            task.primary_output()
        )]);
    };

    let mut a = Assessment::default();
    let mut currents = Vec::new();
    for step in 0..=9 {
        let ohms = 100.0 + 100.0 * step as f64;
        let mut variant = circuit.clone();
        for el in &mut variant.elements {
            if el.name == load {
                el.device = Device::Resistor { ohms };
            }
        }
        match solve_op(&variant) {
            Ok(op) => {
                if step == 0 {
                    a.findings.extend(every_mosfet_conducts(&op));
                    if let Some(d) = op.device(&out_device) {
                        a.measure("id_amps", d.id);
                    }
                }
                match op.device(&out_device) {
                    Some(d) => currents.push(d.id),
                    None => {
                        return fail(vec![format!(
                            "Output device {out_device} disappeared from the solution."
                        )])
                    }
                }
            }
            Err(e) => {
                return fail(vec![format!(
                    "Load sweep failed at R = {ohms} ohm: {e}"
                )])
            }
        }
    }
    let min_delta = currents
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::MAX, f64::min);
    a.measure("min_delta_id_amps", min_delta);
    if min_delta >= 1e-5 {
        a.findings.push(format!(
            "Output current is not constant: the smallest change between adjacent load steps is {min_delta:.3e} A as R steps 100 to 1000 ohm (need < 1e-5 A on at least one interval)."
        ));
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// Inverter: endpoint levels and a bounded transition jump.

fn check_inverter(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["Inverter task has no input node.".to_string()]),
    };
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let steps = (opts.vdd / 0.05).round() as usize;
    let values: Vec<f64> = (0..=steps).map(|k| k as f64 * 0.05).collect();
    let points = match quasi_static_sweep(circuit, &source, &values) {
        Ok(p) => p,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let output = task.primary_output();
    let mut vouts = Vec::with_capacity(points.len());
    for (vin, op) in &points {
        if !op.converged {
            return fail(vec![format!(
                "The transfer-curve sweep did not converge at Vin = {vin:.2} V."
            )]);
        }
        match op.voltage(output) {
            Some(v) => vouts.push(v),
            None => return fail(vec![format!("Output node {output} is missing.")]),
        }
    }
    let mid = opts.vdd / 2.0;
    let first = vouts[0];
    let last = *vouts.last().unwrap();
    let max_step = vouts
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0f64, f64::max);

    let mut a = Assessment::default();
    a.measure("vout_at_zero_v", first);
    a.measure("vout_at_vdd_v", last);
    a.measure("max_step_v", max_step);
    match opts.inverter_polarity {
        InverterPolarity::Verbatim => {
            if first > mid {
                a.findings.push(format!(
                    "Vout = {first:.3} V at Vin = 0; the check requires Vout <= {mid:.1} V."
                ));
            }
            if last < mid {
                a.findings.push(format!(
                    "Vout = {last:.3} V at Vin = Vdd; the check requires Vout >= {mid:.1} V."
                ));
            }
        }
        InverterPolarity::Either => {
            let rises = first <= mid && last >= mid;
            let falls = first >= mid && last <= mid;
            if !rises && !falls {
                a.findings.push(format!(
                    "Vout moves from {first:.3} V to {last:.3} V across the sweep without straddling Vdd/2 in either direction."
                ));
            }
        }
    }
    if max_step > 1.0 {
        a.findings.push(format!(
            "Output jumps {max_step:.3} V between adjacent sweep samples (limit 1.0 V); the transfer curve is too abrupt."
        ));
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// Opamp: conducting devices, nonzero differential gain, and
// differential > common mode at 100 Hz.

fn check_opamp(circuit: &Circuit, task: &TaskSpec, _opts: &VerifyOptions) -> StageReport {
    let signal_inputs = task.signal_inputs();
    if signal_inputs.len() < 2 {
        return fail(vec![
            "Opamp checks need two signal inputs (non-inverting and inverting).".to_string(),
        ]);
    }
    let d1 = match driver_name(circuit, signal_inputs[0]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let d2 = match driver_name(circuit, signal_inputs[1]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let op = match solve_op(circuit) {
        Ok(op) => op,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let mut a = Assessment::default();
    a.findings.extend(every_mosfet_conducts(&op));

    let output = task.primary_output();
    let mut dm = BTreeMap::new();
    dm.insert(d1.clone(), Complex64::new(0.5, 0.0));
    dm.insert(d2.clone(), Complex64::new(-0.5, 0.0));
    let mut cm = BTreeMap::new();
    cm.insert(d1.clone(), Complex64::new(1.0, 0.0));
    cm.insert(d2.clone(), Complex64::new(1.0, 0.0));

    let adm = ac_gain(circuit, &dm, output, FUNC_AC_FREQ_HZ);
    let acm = ac_gain(circuit, &cm, output, FUNC_AC_FREQ_HZ);
    match (adm, acm) {
        (Ok(adm), Ok(acm)) => {
            a.measure("gain_db", db(adm.norm()));
            a.measure("common_mode_gain_db", db(acm.norm()));
            if adm.norm() <= GAIN_FLOOR {
                a.findings.push(format!(
                    "Differential-mode gain |Adm| = {:.3e} at {} Hz is below the measurable floor.",
                    adm.norm(),
                    FUNC_AC_FREQ_HZ
                ));
            } else if adm.norm() <= acm.norm() {
                a.findings.push(format!(
                    "Differential-mode gain ({:.2} dB) does not exceed common-mode gain ({:.2} dB) at {} Hz.",
                    db(adm.norm()),
                    db(acm.norm()),
                    FUNC_AC_FREQ_HZ
                ));
            }
        }
        (Err(e), _) | (_, Err(e)) => a.findings.push(e.to_string()),
    }
    // per-input phase, recorded for the tool library
    for (idx, drv) in [&d1, &d2].into_iter().enumerate() {
        if let Ok(g) = ac_gain(circuit, &unit_excitation(drv), output, FUNC_AC_FREQ_HZ) {
            a.measure(&format!("gain_in{}_re", idx + 1), g.re);
        }
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// Oscillator: enough peaks, visible amplitude, steady period.

/// Assess a candidate oscillation record. Pure analytics: peaks N > 3,
/// amplitude > 1e-6 V, and period variability <= 20%.
pub fn assess_oscillator(time_s: &[f64], signal: &[f64]) -> Assessment {
    let mut a = Assessment::default();
    let hi = signal.iter().copied().fold(f64::MIN, f64::max);
    let lo = signal.iter().copied().fold(f64::MAX, f64::min);
    let amplitude = (hi - lo) / 2.0;
    a.measure("amplitude_v", amplitude);
    let peaks = find_peaks(signal, waveform_prominence(signal));
    a.measure("peak_count", peaks.len() as f64);
    if peaks.len() <= 3 {
        a.findings.push(format!(
            "Only {} oscillation peaks detected (need more than 3); the circuit does not sustain oscillation.",
            peaks.len()
        ));
    }
    if amplitude <= 1e-6 {
        a.findings.push(format!(
            "Oscillation amplitude {amplitude:.3e} V is below the 1e-6 V threshold."
        ));
    }
    let peak_times: Vec<f64> = peaks.iter().map(|&i| time_s[i]).collect();
    match period_stats(&peak_times) {
        Ok(stats) => {
            a.measure("period_s", stats.mean_period);
            a.measure("period_variability", stats.variability);
            if stats.variability > 0.20 {
                a.findings.push(format!(
                    "Oscillation period variability {:.1}% exceeds 20%; the oscillation is not steady.",
                    stats.variability * 100.0
                ));
            }
        }
        Err(e) => {
            if peaks.len() > 3 {
                a.findings.push(e.to_string());
            }
        }
    }
    a
}

fn check_oscillator(circuit: &Circuit, task: &TaskSpec) -> StageReport {
    let wave = match simulate(circuit, OSC_TSTEP_S, OSC_TSTOP_S) {
        Ok(w) => w,
        Err(r) => return r,
    };
    let output = task.primary_output();
    let Some(signal) = wave.signal(output) else {
        return fail(vec![format!("Output node {output} is missing.")]);
    };
    assess_oscillator(&wave.time_s, signal).into_report()
}

// ---------------------------------------------------------------------
// Integrator: square wave in, triangle out with the expected slope.

/// Assess an integrator output driven by a square wave: more than two
/// peaks, and a post-startup rising edge whose linear fit has R² > 0.9
/// and slope within 30% of `expected_slope`.
pub fn assess_integrator(time_s: &[f64], signal: &[f64], expected_slope: f64) -> Assessment {
    let mut a = Assessment::default();
    a.measure("expected_slope_v_per_s", expected_slope);
    let prominence = waveform_prominence(signal);
    let peaks = find_peaks(signal, prominence);
    let negated: Vec<f64> = signal.iter().map(|v| -v).collect();
    let troughs = find_peaks(&negated, prominence);
    a.measure("peak_count", peaks.len() as f64);
    if peaks.len() <= 2 {
        a.findings.push(format!(
            "Only {} peaks in the output wave (need more than 2); the output is not a steady triangle.",
            peaks.len()
        ));
        return a;
    }
    let settle = 1.0 / STIM_FREQ_HZ;
    let edge = troughs.iter().find_map(|&t| {
        if time_s[t] < settle {
            return None;
        }
        let p = peaks.iter().copied().find(|&p| p > t)?;
        Some((t, p))
    });
    let Some((t0, t1)) = edge else {
        a.findings.push(
            "No rising edge found after the first stimulus period; cannot fit the triangle slope."
                .to_string(),
        );
        return a;
    };
    // trim the rounded corners: fit the middle 80% of the edge
    let span = t1 - t0;
    let (f0, f1) = (t0 + span / 10, t1 - span / 10);
    if f1 - f0 < 2 {
        a.findings.push("The rising edge is too short to fit.".to_string());
        return a;
    }
    let fit = match linear_fit(&time_s[f0..=f1], &signal[f0..=f1]) {
        Ok(f) => f,
        Err(e) => {
            a.findings.push(e.to_string());
            return a;
        }
    };
    a.measure("slope_v_per_s", fit.slope);
    a.measure("r_squared", fit.r_squared);
    if fit.r_squared <= 0.9 {
        a.findings.push(format!(
            "The rising edge is not linear: R² = {:.3} (need > 0.9); the output is not a triangle wave.",
            fit.r_squared
        ));
    }
    let err = (fit.slope.abs() - expected_slope).abs() / expected_slope;
    a.measure("slope_error", err);
    if err > 0.3 {
        a.findings.push(format!(
            "Triangle slope {:.3e} V/s deviates {:.0}% from the expected Vstep/(R1*Cf) = {:.3e} V/s (limit 30%).",
            fit.slope.abs(),
            err * 100.0,
            expected_slope
        ));
    }
    a
}

/// Locate the task-named input resistor and feedback capacitor: elements
/// literally named `R1`/`Cf` win, otherwise the first resistor on the
/// input node and the first capacitor on the output node.
fn integrator_parts(circuit: &Circuit, input: &str, output: &str) -> Result<(f64, f64), String> {
    let input = normalize_node(input);
    let output = normalize_node(output);
    let r1 = circuit
        .element("r1")
        .and_then(|el| match el.device {
            Device::Resistor { ohms } => Some(ohms),
            _ => None,
        })
        .or_else(|| {
            circuit.elements.iter().find_map(|el| match el.device {
                Device::Resistor { ohms } if el.nodes.contains(&input) => Some(ohms),
                _ => None,
            })
        })
        .ok_or_else(|| format!("no input resistor R1 found on node {input}"))?;
    let cf = circuit
        .element("cf")
        .and_then(|el| match el.device {
            Device::Capacitor { farads } => Some(farads),
            _ => None,
        })
        .or_else(|| {
            circuit.elements.iter().find_map(|el| match el.device {
                Device::Capacitor { farads } if el.nodes.contains(&output) => Some(farads),
                _ => None,
            })
        })
        .ok_or_else(|| format!("no feedback capacitor Cf found on node {output}"))?;
    Ok((r1, cf))
}

fn check_integrator(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["Integrator task has no input node.".to_string()]),
    };
    let output = task.primary_output().to_string();
    if !mosfet_on_signal_path(circuit, &input, &output) {
        return fail(vec![
            "The circuit is a passive integrator: no MOSFET sits on the input-to-output signal path; use an active (op-amp) topology.".to_string(),
        ]);
    }
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let (r1, cf) = match integrator_parts(circuit, &input, &output) {
        Ok(parts) => parts,
        Err(msg) => return fail(vec![msg]),
    };
    let v0 = opts.vdd / 2.0;
    // starts at the center, so the integrator begins regulated instead of
    // wound up against a rail
    let square = Waveshape::Square {
        center: v0,
        amplitude: STIM_AMPLITUDE_V,
        frequency_hz: STIM_FREQ_HZ,
    };
    let driven = with_source_waveform(circuit, &source, square);
    let wave = match simulate(&driven, WAVE_TSTEP_S, WAVE_TSTOP_S) {
        Ok(w) => w,
        Err(r) => return r,
    };
    let Some(signal) = wave.signal(&output) else {
        return fail(vec![format!("Output node {output} is missing.")]);
    };
    let expected_slope = STIM_AMPLITUDE_V / (r1 * cf);
    assess_integrator(&wave.time_s, signal, expected_slope).into_report()
}

// ---------------------------------------------------------------------
// Differentiator: triangle in, square out, symmetric about the bias.

/// Assess a differentiator output driven by a triangle wave centered at
/// `v0`: peaks exist, the square's highs and lows sit symmetrically about
/// `v0` (within 10% of their mean excursion), and both excursions reach
/// at least 90% of `expected_amplitude`.
pub fn assess_differentiator(
    time_s: &[f64],
    signal: &[f64],
    v0: f64,
    expected_amplitude: f64,
) -> Assessment {
    let mut a = Assessment::default();
    a.measure("expected_amplitude_v", expected_amplitude);
    let prominence = waveform_prominence(signal);
    let settle = 1.0 / STIM_FREQ_HZ;
    let start = time_s.iter().position(|&t| t >= settle).unwrap_or(0);
    let tail = &signal[start..];
    let peaks = find_peaks(tail, prominence);
    let negated: Vec<f64> = tail.iter().map(|v| -v).collect();
    let troughs = find_peaks(&negated, prominence);
    a.measure("peak_count", peaks.len() as f64);
    if peaks.is_empty() {
        a.findings.push("No peaks detected in the output (need N > 0).".to_string());
        return a;
    }
    if troughs.is_empty() {
        a.findings.push("No troughs detected in the output.".to_string());
        return a;
    }
    let v_peak = peaks.iter().map(|&i| tail[i]).sum::<f64>() / peaks.len() as f64;
    let v_trough = troughs.iter().map(|&i| tail[i]).sum::<f64>() / troughs.len() as f64;
    let up = v_peak - v0;
    let down = v0 - v_trough;
    a.measure("peak_excursion_v", up);
    a.measure("trough_excursion_v", down);
    if up <= 0.0 || down <= 0.0 {
        a.findings.push(format!(
            "The output does not swing around the base voltage {v0:.2} V (peak {v_peak:.3} V, trough {v_trough:.3} V)."
        ));
        return a;
    }
    let asym = (up - down).abs() / ((up + down) / 2.0);
    a.measure("asymmetry", asym);
    if asym > 0.1 {
        a.findings.push(format!(
            "Peak/trough excursions are asymmetric about {v0:.2} V: {up:.3} V up vs {down:.3} V down ({:.0}% mismatch, limit 10%).",
            asym * 100.0
        ));
    }
    if up < 0.9 * expected_amplitude || down < 0.9 * expected_amplitude {
        a.findings.push(format!(
            "Square-wave fidelity: excursions ({up:.3} V up, {down:.3} V down) fall short of 90% of the expected Rf*C1*dVin/dt = {expected_amplitude:.3} V."
        ));
    }
    a
}

fn differentiator_parts(circuit: &Circuit, input: &str, output: &str) -> Result<(f64, f64), String> {
    let input = normalize_node(input);
    let output = normalize_node(output);
    let c1 = circuit
        .element("c1")
        .and_then(|el| match el.device {
            Device::Capacitor { farads } => Some(farads),
            _ => None,
        })
        .or_else(|| {
            circuit.elements.iter().find_map(|el| match el.device {
                Device::Capacitor { farads } if el.nodes.contains(&input) => Some(farads),
                _ => None,
            })
        })
        .ok_or_else(|| format!("no input capacitor C1 found on node {input}"))?;
    let rf = circuit
        .element("rf")
        .and_then(|el| match el.device {
            Device::Resistor { ohms } => Some(ohms),
            _ => None,
        })
        .or_else(|| {
            circuit.elements.iter().find_map(|el| match el.device {
                Device::Resistor { ohms } if el.nodes.contains(&output) => Some(ohms),
                _ => None,
            })
        })
        .ok_or_else(|| format!("no feedback resistor Rf found on node {output}"))?;
    Ok((c1, rf))
}

fn check_differentiator(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["Differentiator task has no input node.".to_string()]),
    };
    let output = task.primary_output().to_string();
    if !mosfet_on_signal_path(circuit, &input, &output) {
        return fail(vec![
            "The circuit is a passive differentiator: no MOSFET sits on the input-to-output signal path; use an active (op-amp) topology.".to_string(),
        ]);
    }
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let (c1, rf) = match differentiator_parts(circuit, &input, &output) {
        Ok(parts) => parts,
        Err(msg) => return fail(vec![msg]),
    };
    let v0 = opts.vdd / 2.0;
    let triangle = Waveshape::Triangle {
        center: v0,
        amplitude: STIM_AMPLITUDE_V,
        frequency_hz: STIM_FREQ_HZ,
    };
    let driven = with_source_waveform(circuit, &source, triangle);
    let wave = match simulate(&driven, WAVE_TSTEP_S, WAVE_TSTOP_S) {
        Ok(w) => w,
        Err(r) => return r,
    };
    let Some(signal) = wave.signal(&output) else {
        return fail(vec![format!("Output node {output} is missing.")]);
    };
    // triangle slews 2A per half period: |dVin/dt| = 4·A·f
    let slope = 4.0 * STIM_AMPLITUDE_V * STIM_FREQ_HZ;
    let expected = rf * c1 * slope;
    assess_differentiator(&wave.time_s, signal, v0, expected).into_report()
}

// ---------------------------------------------------------------------
// Adder / Subtractor: swept-input error ratios.

/// Error ratio of an adder sample: |(Vout + (Vin1+Vin2)) / (Vin1+Vin2)|.
pub fn adder_epsilon(vin1: f64, vin2: f64, vout: f64) -> f64 {
    ((vout + (vin1 + vin2)) / (vin1 + vin2)).abs()
}

/// Error ratio of a subtractor sample: |(Vout - (Vin2-Vin1)) / (Vin2-Vin1)|.
pub fn subtractor_epsilon(vin1: f64, vin2: f64, vout: f64) -> f64 {
    ((vout - (vin2 - vin1)) / (vin2 - vin1)).abs()
}

fn check_adder(circuit: &Circuit, task: &TaskSpec) -> StageReport {
    if task.input_nodes.len() < 2 {
        return fail(vec!["Adder tasks need two input nodes.".to_string()]);
    }
    let d1 = match driver_name(circuit, &task.input_nodes[0]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let d2 = match driver_name(circuit, &task.input_nodes[1]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let v0 = source_dc(circuit, &d1);
    let vin2 = source_dc(circuit, &d2);
    let values: Vec<f64> = (0..=10).map(|k| v0 + 0.05 * k as f64).collect();
    let points = match quasi_static_sweep(circuit, &d1, &values) {
        Ok(p) => p,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let output = task.primary_output();
    let mut a = Assessment::default();
    let mut max_eps: f64 = 0.0;
    for (vin1, op) in &points {
        if !op.converged {
            return fail(vec![format!(
                "Adder sweep did not converge at Vin1 = {vin1:.2} V."
            )]);
        }
        let Some(vout) = op.voltage(output) else {
            return fail(vec![format!("Output node {output} is missing.")]);
        };
        let eps = adder_epsilon(*vin1, vin2, vout);
        if eps > max_eps {
            max_eps = eps;
        }
        if eps > EPSILON_LIMIT && a.findings.is_empty() {
            a.findings.push(format!(
                "Adder error ε = {eps:.3} at Vin1 = {vin1:.2} V exceeds {EPSILON_LIMIT} (Vout = {vout:.3} V, expected -(Vin1+Vin2) = {:.3} V).",
                -(vin1 + vin2)
            ));
        }
    }
    a.measure("max_epsilon", max_eps);
    a.into_report()
}

fn check_subtractor(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    if task.input_nodes.len() < 2 {
        return fail(vec!["Subtractor tasks need two input nodes.".to_string()]);
    }
    let d1 = match driver_name(circuit, &task.input_nodes[0]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let d2 = match driver_name(circuit, &task.input_nodes[1]) {
        Ok(s) => s,
        Err(r) => return r,
    };
    // base voltage V0 = Vdd/2: Vin2 pinned at 2*V0, Vin1 swept around it
    let two_v0 = opts.vdd;
    let mut pinned = circuit.clone();
    pinned.set_source_dc(&d2, two_v0);
    let values: Vec<f64> = (0..=10)
        .map(|k| two_v0 - 2.25 + 0.05 * k as f64)
        .collect();
    let points = match quasi_static_sweep(&pinned, &d1, &values) {
        Ok(p) => p,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let output = task.primary_output();
    let mut a = Assessment::default();
    let mut max_eps: f64 = 0.0;
    for (vin1, op) in &points {
        if !op.converged {
            return fail(vec![format!(
                "Subtractor sweep did not converge at Vin1 = {vin1:.2} V."
            )]);
        }
        let Some(vout) = op.voltage(output) else {
            return fail(vec![format!("Output node {output} is missing.")]);
        };
        let eps = subtractor_epsilon(*vin1, two_v0, vout);
        if eps > max_eps {
            max_eps = eps;
        }
        if eps > EPSILON_LIMIT && a.findings.is_empty() {
            a.findings.push(format!(
                "Subtractor error ε = {eps:.3} at Vin1 = {vin1:.2} V exceeds {EPSILON_LIMIT} (Vout = {vout:.3} V, expected Vin2-Vin1 = {:.3} V).",
                two_v0 - vin1
            ));
        }
    }
    a.measure("max_epsilon", max_eps);
    a.into_report()
}

// ---------------------------------------------------------------------
// Schmitt trigger: hysteresis via quasi-static up/down continuation.

fn crossing(values: &[(f64, f64)], level: f64) -> Option<f64> {
    for w in values.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if (y0 - level) == 0.0 {
            return Some(x0);
        }
        if (y0 - level) * (y1 - level) < 0.0 {
            return Some(x0 + (x1 - x0) * (level - y0) / (y1 - y0));
        }
    }
    None
}

fn monotone(values: &[f64]) -> bool {
    let tol = 1e-6;
    values.windows(2).all(|w| w[1] >= w[0] - tol)
        || values.windows(2).all(|w| w[1] <= w[0] + tol)
}

fn check_schmitt(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["Schmitt-trigger task has no input node.".to_string()]),
    };
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let steps = (opts.vdd / SCHMITT_STEP_V).round() as usize;
    let up: Vec<f64> = (0..=steps).map(|k| k as f64 * SCHMITT_STEP_V).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    let mut all = up.clone();
    all.extend(&down);
    // one continuation pass 0 → Vdd → 0 so the state carries through the turn
    let points = match quasi_static_sweep(circuit, &source, &all) {
        Ok(p) => p,
        Err(e) => return fail(vec![e.to_string()]),
    };
    let output = task.primary_output();
    // Right at a switching fold the old solution branch ceases to exist,
    // so isolated non-converged points are expected; the crossing search
    // brackets the snap from the converged neighbors. Widespread
    // non-convergence is still a failure.
    let dead = points.iter().filter(|(_, op)| !op.converged).count();
    if dead * 10 > points.len() {
        return fail(vec![format!(
            "The hysteresis sweep failed to converge at {dead} of {} points; the circuit has no stable quasi-static response.",
            points.len()
        )]);
    }
    let mut up_track = Vec::new();
    let mut down_track = Vec::new();
    for (idx, (vin, op)) in points.iter().enumerate() {
        if !op.converged {
            continue;
        }
        let Some(v) = op.voltage(output) else {
            return fail(vec![format!("Output node {output} is missing.")]);
        };
        if idx < up.len() {
            up_track.push((*vin, v));
        } else {
            down_track.push((*vin, v));
        }
    }
    let (up_track, down_track) = (up_track.as_slice(), down_track.as_slice());
    let mid = opts.vdd / 2.0;
    let cross_up = crossing(up_track, mid);
    let cross_down = crossing(down_track, mid);

    let mut a = Assessment::default();
    if cross_up.is_none() && cross_down.is_none() {
        a.findings.push(format!(
            "Vout never crosses Vdd/2 = {mid:.2} V while Vin sweeps 0 to {0} V and back to 0.",
            opts.vdd
        ));
        return a.into_report();
    }
    match (cross_up, cross_down) {
        (Some(vu), Some(vd)) => {
            let hysteresis = (vu - vd).abs();
            a.measure("vin_high_v", vu);
            a.measure("vin_low_v", vd);
            a.measure("hysteresis_v", hysteresis);
            if hysteresis <= SCHMITT_MIN_HYSTERESIS_V {
                a.findings.push(format!(
                    "Hysteresis |Vin,high - Vin,low| = {hysteresis:.4} V does not exceed {SCHMITT_MIN_HYSTERESIS_V} V (up-going {vu:.3} V, down-going {vd:.3} V)."
                ));
            }
        }
        _ => {
            a.findings.push(
                "Vout crosses Vdd/2 in only one sweep direction; the thresholds cannot be compared.".to_string(),
            );
        }
    }
    let up_v: Vec<f64> = up_track.iter().map(|(_, v)| *v).collect();
    let down_v: Vec<f64> = down_track.iter().map(|(_, v)| *v).collect();
    if !monotone(&up_v) {
        a.findings.push("Vout is not monotonic during the upward sweep.".to_string());
    }
    if !monotone(&down_v) {
        a.findings.push("Vout is not monotonic during the downward sweep.".to_string());
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// VCO: output period must track the control voltage.

fn check_vco(circuit: &Circuit, task: &TaskSpec) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["VCO task has no input node.".to_string()]),
    };
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let output = task.primary_output().to_string();
    let mut a = Assessment::default();
    let mut periods = Vec::new();
    for &vctl in &VCO_CONTROL_V {
        let mut variant = circuit.clone();
        variant.set_source_dc(&source, vctl);
        let wave = match simulate(&variant, OSC_TSTEP_S, OSC_TSTOP_S) {
            Ok(w) => w,
            Err(r) => return r,
        };
        match measured_period(&wave, &output) {
            Ok(t) => {
                a.measure(&format!("period_at_{vctl:.2}v_s"), t);
                periods.push(t);
            }
            Err(e) => {
                return fail(vec![format!(
                    "No sustained oscillation at Vin = {vctl} V: {e}"
                )]);
            }
        }
    }
    let pairs = [(0, 1), (1, 2), (0, 2)];
    for (i, j) in pairs {
        let diff = (periods[i] - periods[j]).abs();
        if diff <= VCO_MIN_PERIOD_DIFF_S {
            a.findings.push(format!(
                "Output periods at Vin = {} V and {} V differ by only {diff:.3e} s (need > 1e-6 s); the frequency does not track the control voltage.",
                VCO_CONTROL_V[i], VCO_CONTROL_V[j]
            ));
        }
    }
    a.into_report()
}

// ---------------------------------------------------------------------
// PLL: output frequency locks to the 10 MHz reference.

fn check_pll(circuit: &Circuit, task: &TaskSpec) -> StageReport {
    let input = match task.input_nodes.first() {
        Some(n) => n.clone(),
        None => return fail(vec!["PLL task has no reference clock input.".to_string()]),
    };
    let source = match driver_name(circuit, &input) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let period = 1.0 / PLL_REF_HZ;
    let reference = Waveshape::Pulse {
        v1: 0.0,
        v2: 5.0,
        delay_s: 0.0,
        rise_s: 1e-9,
        fall_s: 1e-9,
        width_s: period / 2.0 - 1e-9,
        period_s: period,
    };
    let driven = with_source_waveform(circuit, &source, reference);
    let wave = match simulate(&driven, PLL_TSTEP_S, PLL_TSTOP_S) {
        Ok(w) => w,
        Err(r) => return r,
    };
    let output = task.primary_output();
    let mut a = Assessment::default();
    match measured_period(&wave, output) {
        Ok(t) => {
            let f_out = 1.0 / t;
            let deviation = (f_out - PLL_REF_HZ).abs() / PLL_REF_HZ;
            a.measure("f_out_hz", f_out);
            a.measure("frequency_deviation", deviation);
            if deviation > 0.05 {
                a.findings.push(format!(
                    "Output frequency {f_out:.4e} Hz deviates {:.1}% from the 10 MHz reference (limit 5%).",
                    deviation * 100.0
                ));
            }
        }
        Err(e) => {
            a.findings.push(format!(
                "The output does not toggle against the 10 MHz reference: {e}"
            ));
        }
    }
    a.into_report()
}

// ---------------------------------------------------------------------
