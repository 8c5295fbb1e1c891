//! Stage 3: DC sweep check with bias substitution.
//!
//! The designated input sweeps 0 → Vdd; the stage passes when the output
//! responds at all, and on pass it rebiases the input at the sweep point
//! whose output lies closest to Vdd/2, which is what the later functional
//! checks run from.

use crate::netlist::{Circuit, Device};
use crate::report::{Stage, StageReport};
use crate::sim::quasi_static_sweep;
use crate::tasks::TaskSpec;

use super::VerifyOptions;

/// Sweep granularity, volts.
pub const SWEEP_STEP_V: f64 = 0.05;
/// Minimum output range for "the output varies", volts.
pub const MIN_OUTPUT_RANGE_V: f64 = 1e-3;

/// Result of the sweep stage: the verdict, the circuit to carry into the
/// function check (rebias applied on pass), and the substitution made.
#[derive(Debug, Clone)]
pub struct DcSweepCheck {
    pub report: StageReport,
    pub circuit: Circuit,
    pub substitution: Option<(String, f64)>,
}

pub fn run_dc_sweep_check(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> DcSweepCheck {
    let unchanged = |report: StageReport| DcSweepCheck {
        report,
        circuit: circuit.clone(),
        substitution: None,
    };

    // Find the input to sweep: the first task input driven by a voltage
    // source. Tasks without one (current-driven or autonomous circuits)
    // skip this stage.
    let mut sweep_source: Option<(String, String)> = None;
    let mut current_input = false;
    for input in &task.input_nodes {
        if let Some(el) = circuit.voltage_source_at(input) {
            sweep_source = Some((input.clone(), el.name.clone()));
            break;
        }
        let n = crate::netlist::normalize_node(input);
        if circuit
            .elements
            .iter()
            .any(|el| matches!(el.device, Device::CurrentSource(_)) && el.nodes.contains(&n))
        {
            current_input = true;
        }
    }
    let (input_node, source_name) = match sweep_source {
        Some(pair) => pair,
        None => {
            if task.input_nodes.is_empty() {
                let mut report = StageReport::passed(Stage::DcSweep);
                report.feedback = "skipped: the task has no input nodes to sweep".to_string();
                return unchanged(report);
            }
            if current_input {
                let mut report = StageReport::passed(Stage::DcSweep);
                report.feedback =
                    "skipped: the input is current-driven, so there is no voltage to sweep"
                        .to_string();
                return unchanged(report);
            }
            return unchanged(StageReport::failed(
                Stage::DcSweep,
                vec![format!(
                    "No voltage source drives input node {}; connect the input with a V card so it can be swept.",
                    task.input_nodes[0]
                )],
            ));
        }
    };

    let steps = (opts.vdd / SWEEP_STEP_V).round() as usize;
    let values: Vec<f64> = (0..=steps).map(|k| k as f64 * SWEEP_STEP_V).collect();
    let points = match quasi_static_sweep(circuit, &source_name, &values) {
        Ok(p) => p,
        Err(err) => {
            return unchanged(StageReport::failed(Stage::DcSweep, vec![err.to_string()]));
        }
    };

    let output = task.primary_output().to_string();
    let observed: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, op)| op.converged)
        .filter_map(|(vin, op)| op.voltage(&output).map(|v| (*vin, v)))
        .collect();
    if observed.is_empty() {
        return unchanged(StageReport::failed(
            Stage::DcSweep,
            vec![format!(
                "The DC sweep of {} from 0 to {} V did not converge at any point; the bias network is likely broken.",
                input_node, opts.vdd
            )],
        ));
    }

    let lo = observed.iter().map(|(_, v)| *v).fold(f64::MAX, f64::min);
    let hi = observed.iter().map(|(_, v)| *v).fold(f64::MIN, f64::max);
    let range = hi - lo;
    if range <= MIN_OUTPUT_RANGE_V {
        return unchanged(StageReport::failed(
            Stage::DcSweep,
            vec![format!(
                "Output {} does not respond to input {}: it spans only {:.6} V while {} sweeps 0 to {} V; check the signal path.",
                output, input_node, range, input_node, opts.vdd
            )],
        ));
    }

    // Rebias at the point whose output is closest to Vdd/2; scanning in
    // ascending input order breaks ties toward the lower voltage.
    let target = opts.vdd / 2.0;
    let mut best = observed[0];
    for &(vin, vout) in &observed {
        if (vout - target).abs() < (best.1 - target).abs() {
            best = (vin, vout);
        }
    }
    let mut rebias = circuit.clone();
    rebias.set_source_dc(&source_name, best.0);
    let report = StageReport::passed(Stage::DcSweep)
        .with_measurement("output_range_v", range)
        .with_measurement("substituted_input_v", best.0)
        .with_measurement("output_at_substituted_v", best.1);
    DcSweepCheck {
        report,
        circuit: rebias,
        substitution: Some((source_name, best.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;
    use crate::tasks::benchmark_task;

    #[test]
    fn disconnected_output_fails_with_both_node_names() {
        let task = benchmark_task(1).unwrap();
        let c = parse_netlist(
            "\
Vin Vin 0 1
Rin Vin 0 1k
Vq q 0 2
Rq q Vout 1k
Rg Vout 0 1k
",
        )
        .unwrap();
        let out = run_dc_sweep_check(&c, &task, &VerifyOptions::default());
        assert!(!out.report.passed);
        assert!(out.report.feedback.contains("Vout"), "{}", out.report.feedback);
        assert!(out.report.feedback.contains("Vin"), "{}", out.report.feedback);
    }

    #[test]
    fn inverter_rebias_lands_nearest_mid_rail() {
        let task = benchmark_task(6).unwrap();
        let c = parse_netlist(
            "\
.model nm nmos level=1 kp=100u vto=0.5
Vdd vdd 0 5
Vin Vin 0 0
M1 Vout Vin 0 0 nm w=10u l=1u
RD vdd Vout 10k
",
        )
        .unwrap();
        let out = run_dc_sweep_check(&c, &task, &VerifyOptions::default());
        assert!(out.report.passed, "{}", out.report.feedback);
        let (src, vstar) = out.substitution.clone().unwrap();
        assert_eq!(src, "vin");
        // brute-force: recompute every grid point and confirm optimality
        let values: Vec<f64> = (0..=100).map(|k| k as f64 * 0.05).collect();
        let points = quasi_static_sweep(&c, "vin", &values).unwrap();
        let best = points
            .iter()
            .filter(|(_, op)| op.converged)
            .map(|(vin, op)| (*vin, op.voltage("vout").unwrap()))
            .min_by(|a, b| {
                (a.1 - 2.5).abs().partial_cmp(&(b.1 - 2.5).abs()).unwrap()
            })
            .unwrap();
        assert_eq!(vstar, best.0);
        // the rebias circuit carries the substituted DC value
        let el = out.circuit.element("vin").unwrap();
        match &el.device {
            crate::netlist::Device::VoltageSource(s) => assert_eq!(s.dc, vstar),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn current_input_task_skips() {
        let task = benchmark_task(12).unwrap();
        let c = parse_netlist(
            "\
.model nm nmos level=1 kp=100u vto=0.5
Vdd vdd 0 5
Iref vdd Iref 0.5m
M1 Iref Iref 0 0 nm w=10u l=1u
M2 Iout Iref 0 0 nm w=10u l=1u
RL vdd Iout 100
",
        )
        .unwrap();
        let out = run_dc_sweep_check(&c, &task, &VerifyOptions::default());
        assert!(out.report.passed);
        assert!(out.report.feedback.contains("skipped"), "{}", out.report.feedback);
        assert!(out.substitution.is_none());
    }

    #[test]
    fn oscillator_task_skips() {
        let task = benchmark_task(16).unwrap();
        let c = parse_netlist("V1 a 0 5\nR1 a Vout 1k\nR2 Vout 0 1k\n").unwrap();
        let out = run_dc_sweep_check(&c, &task, &VerifyOptions::default());
        assert!(out.report.passed);
        assert!(out.report.feedback.contains("no input"), "{}", out.report.feedback);
    }
}
