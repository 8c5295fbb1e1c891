//! The staged verification flow.
//!
//! A design runs through four stages in fixed order, stopping at the
//! first failure:
//!
//! 1. **requirement**: the task's input/output nodes exist and its
//!    structural rules hold ([`crate::netlist::check_requirements`]).
//! 2. **op_check**: the circuit simulates (no floating nodes), and every
//!    MOSFET is active: `Vgs > Vth` and `Vds > Vgs - Vth`.
//! 3. **dc_sweep**: the output responds as the input sweeps 0 to Vdd; on
//!    pass, the input is rebiased at the sweep point whose output sits
//!    closest to Vdd/2.
//! 4. **function**: the circuit type's own criteria, from amplifier gain
//!    to PLL lock.
//!
//! Every failure produces feedback text meant to be handed back to the
//! design agent verbatim.

mod dc_check;
mod function;
mod op_check;
mod signal;

pub use dc_check::{run_dc_sweep_check, DcSweepCheck, MIN_OUTPUT_RANGE_V, SWEEP_STEP_V};
pub use function::{
    adder_epsilon, assess_differentiator, assess_integrator, assess_oscillator,
    mosfet_on_signal_path, run_function_check, subtractor_epsilon, waveform_prominence,
    Assessment, EPSILON_LIMIT, FUNC_AC_FREQ_HZ, GAIN_FLOOR,
};
pub use op_check::{check_operating_points, OP_CHECK_MARGIN_V};
pub use signal::{find_peaks, linear_fit, period_stats, LinearFit, PeriodStats, SignalError};

use crate::netlist::{check_requirements, Circuit};
use crate::report::{Stage, StageReport, VerificationOutcome};
use crate::sim::solve_op;
use crate::tasks::TaskSpec;

/// How strictly the inverter endpoint criteria are read.
///
/// `Verbatim` applies the criteria table exactly as written (`Vout <=
/// Vdd/2` at `Vin = 0`, `Vout >= Vdd/2` at `Vin = Vdd`), which a
/// conventional inverting transfer curve fails; `Either` accepts either
/// polarity. The default is verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverterPolarity {
    #[default]
    Verbatim,
    Either,
}

/// Knobs shared by the whole pipeline.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Supply rail, volts.
    pub vdd: f64,
    /// Composite runs with a populated tool library require at least one
    /// subcircuit instance at stage 1.
    pub tools_active: bool,
    pub inverter_polarity: InverterPolarity,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            vdd: 5.0,
            tools_active: false,
            inverter_polarity: InverterPolarity::default(),
        }
    }
}

/// Run the full four-stage pipeline on a parsed circuit.
pub fn verify_circuit(circuit: &Circuit, task: &TaskSpec, opts: &VerifyOptions) -> VerificationOutcome {
    let mut outcome = VerificationOutcome {
        task_id: task.id,
        stages: Vec::new(),
        final_pass: false,
        bias_substitutions: Default::default(),
    };

    let stage1 = check_requirements(circuit, task, opts.tools_active);
    let ok = stage1.passed;
    outcome.stages.push(stage1);
    if !ok {
        return outcome;
    }

    // Stage 2: simulate and check operating points. Structural expansion
    // failures count as simulation failures here.
    let flat = match circuit.flatten() {
        Ok(flat) => flat,
        Err(err) => {
            outcome
                .stages
                .push(StageReport::failed(Stage::OpCheck, vec![err.to_string()]));
            return outcome;
        }
    };
    let stage2 = match solve_op(&flat) {
        Ok(op) => check_operating_points(&op),
        Err(err) => StageReport::failed(Stage::OpCheck, vec![err.to_string()]),
    };
    let ok = stage2.passed;
    outcome.stages.push(stage2);
    if !ok {
        return outcome;
    }

    let sweep = run_dc_sweep_check(&flat, task, opts);
    let ok = sweep.report.passed;
    outcome.stages.push(sweep.report);
    if let Some((source, value)) = sweep.substitution {
        outcome.bias_substitutions.insert(source, value);
    }
    if !ok {
        return outcome;
    }

    let stage4 = run_function_check(&sweep.circuit, task, opts);
    let ok = stage4.passed;
    outcome.stages.push(stage4);
    outcome.final_pass = ok;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;
    use crate::report::Stage;
    use crate::tasks::benchmark_task;

    const TASK1_AMP: &str = "\
* common-source amplifier, R load
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
.end
";

    #[test]
    fn task1_amplifier_passes_all_four_stages() {
        let circuit = parse_netlist(TASK1_AMP).unwrap();
        let task = benchmark_task(1).unwrap();
        let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
        for stage in &outcome.stages {
            assert!(stage.passed, "stage {} failed: {}", stage.stage, stage.feedback);
        }
        assert!(outcome.final_pass);
        assert_eq!(outcome.stages.len(), 4);
        // gm*RD = 100u*5*(1.5-0.5)*10k = 5 => about 14 dB at the mid-rail bias
        let gain_db = outcome.stages[3].measurements["gain_db"];
        assert!((gain_db - 13.98).abs() < 0.05, "gain {gain_db} dB");
        assert!((outcome.bias_substitutions["vin"] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn stages_stop_at_first_failure() {
        let circuit = parse_netlist("Vin Vin 0 1\nR1 Vin 0 1k\n").unwrap();
        let task = benchmark_task(1).unwrap();
        let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
        assert_eq!(outcome.stages.len(), 1);
        assert_eq!(outcome.stages[0].stage, Stage::Requirement);
        assert!(!outcome.final_pass);
    }

    #[test]
    fn floating_node_fails_stage_two_with_diagnostic() {
        let text = "\
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
Rdangle lonely Vquiet 1k
Rdangle2 Vquiet 0 1k
";
        let circuit = parse_netlist(text).unwrap();
        let task = benchmark_task(1).unwrap();
        let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
        assert_eq!(outcome.stages.len(), 2);
        assert!(!outcome.stages[1].passed);
        assert!(
            outcome.stages[1].feedback.contains("lonely"),
            "{}",
            outcome.stages[1].feedback
        );
    }
}
