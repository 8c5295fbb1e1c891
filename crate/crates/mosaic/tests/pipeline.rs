//! Cross-module integration checks over the fixture corpus: format
//! round-trips, conservation at solved operating points, subcircuit
//! equivalence, and the staged pipeline's ordering contract.

use mosaic::checks::{verify_circuit, VerifyOptions};
use mosaic::netlist::parse_netlist;
use mosaic::report::Stage;
use mosaic::sim::solve_op;
use mosaic::tasks::benchmark_task;

const CORPUS: &[(&str, &str)] = &[
    ("task01_amp.sp", include_str!("fixtures/task01_amp.sp")),
    ("task01_amp_shorted.sp", include_str!("fixtures/task01_amp_shorted.sp")),
    ("task06_follower.sp", include_str!("fixtures/task06_follower.sp")),
    ("task06_nmos_inverter.sp", include_str!("fixtures/task06_nmos_inverter.sp")),
    ("task08_mirror.sp", include_str!("fixtures/task08_mirror.sp")),
    ("task08_mirror_triode.sp", include_str!("fixtures/task08_mirror_triode.sp")),
    ("task11_opamp.sp", include_str!("fixtures/task11_opamp.sp")),
    ("task11_opamp_dead_tail.sp", include_str!("fixtures/task11_opamp_dead_tail.sp")),
    ("task16_rc_oscillator.sp", include_str!("fixtures/task16_rc_oscillator.sp")),
    ("task16_rc_oscillator_latched.sp", include_str!("fixtures/task16_rc_oscillator_latched.sp")),
    ("task18_integrator.sp", include_str!("fixtures/task18_integrator.sp")),
    ("task18_integrator_passive.sp", include_str!("fixtures/task18_integrator_passive.sp")),
    ("task19_differentiator.sp", include_str!("fixtures/task19_differentiator.sp")),
    ("task19_differentiator_passive.sp", include_str!("fixtures/task19_differentiator_passive.sp")),
    ("task20_adder.sp", include_str!("fixtures/task20_adder.sp")),
    ("task20_adder_lowgain.sp", include_str!("fixtures/task20_adder_lowgain.sp")),
    ("task21_subtractor.sp", include_str!("fixtures/task21_subtractor.sp")),
    ("task21_subtractor_skewed.sp", include_str!("fixtures/task21_subtractor_skewed.sp")),
    ("task22_schmitt.sp", include_str!("fixtures/task22_schmitt.sp")),
    ("task22_plain_inverter.sp", include_str!("fixtures/task22_plain_inverter.sp")),
    ("task23_vco.sp", include_str!("fixtures/task23_vco.sp")),
    ("task23_vco_fixed_bias.sp", include_str!("fixtures/task23_vco_fixed_bias.sp")),
    ("task24_pll.sp", include_str!("fixtures/task24_pll.sp")),
    ("task24_pll_stuck.sp", include_str!("fixtures/task24_pll_stuck.sp")),
];

#[test]
fn corpus_netlists_round_trip() {
    for (name, text) in CORPUS {
        let parsed = parse_netlist(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let rendered = parsed.to_netlist();
        let reparsed = parse_netlist(&rendered)
            .unwrap_or_else(|e| panic!("{name} re-parse: {e}\n{rendered}"));
        assert_eq!(parsed, reparsed, "{name} round trip");
    }
}

#[test]
fn flatten_is_idempotent_across_corpus() {
    for (name, text) in CORPUS {
        let flat = parse_netlist(text).unwrap().flatten().unwrap();
        let again = flat.flatten().unwrap();
        assert_eq!(flat, again, "{name}");
    }
}

#[test]
fn solved_operating_points_conserve_current() {
    // net current at every node, summed over true element currents,
    // stays under the solver tolerance for every fixture that solves
    for (name, text) in CORPUS {
        let flat = parse_netlist(text).unwrap().flatten().unwrap();
        let Ok(op) = solve_op(&flat) else { continue };
        assert!(op.converged);
        let residual = kcl_residual(&flat, &op);
        assert!(residual < 1e-9, "{name}: residual {residual:.3e} A");
    }
}

/// Independent conservation audit: recompute each element's current from
/// the solved voltages and sum per node.
fn kcl_residual(circuit: &mosaic::netlist::Circuit, op: &mosaic::sim::OpSolution) -> f64 {
    use mosaic::netlist::Device;
    use std::collections::BTreeMap;
    let v = |node: &str| op.node_voltages[node];
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut flow = |a: &str, b: &str, i: f64| {
        *sums.entry(a.to_string()).or_default() += i;
        *sums.entry(b.to_string()).or_default() -= i;
    };
    for el in &circuit.elements {
        match &el.device {
            Device::Resistor { ohms } => {
                let i = (v(&el.nodes[0]) - v(&el.nodes[1])) / ohms;
                flow(&el.nodes[0], &el.nodes[1], i);
            }
            Device::Capacitor { .. } => {}
            Device::VoltageSource(_) => {
                flow(&el.nodes[0], &el.nodes[1], op.branch_currents[&el.name]);
            }
            Device::CurrentSource(spec) => flow(&el.nodes[0], &el.nodes[1], spec.dc),
            Device::Mosfet { .. } => {
                let d = op.device(&el.name).unwrap();
                let signed = match d.polarity {
                    mosaic::netlist::Polarity::Nmos => d.id,
                    mosaic::netlist::Polarity::Pmos => -d.id,
                };
                flow(&el.nodes[0], &el.nodes[2], signed);
            }
            Device::Instance { .. } => unreachable!("corpus is flattened"),
        }
    }
    sums.remove("0");
    sums.values().fold(0.0f64, |acc, s| acc.max(s.abs()))
}

#[test]
fn subcircuit_instance_matches_hand_inlined_circuit() {
    // a linear tool used through an instance must solve identically to
    // the same elements written inline
    let with_tool = parse_netlist(
        "\
.subckt attenuator in out
R1 in out 3k
R2 out 0 1k
.ends
V1 top 0 8
Xa top mid attenuator
Rload mid 0 1meg
",
    )
    .unwrap()
    .flatten()
    .unwrap();
    let by_hand = parse_netlist(
        "\
V1 top 0 8
R1 top mid 3k
R2 mid 0 1k
Rload mid 0 1meg
",
    )
    .unwrap();
    let a = solve_op(&with_tool).unwrap();
    let b = solve_op(&by_hand).unwrap();
    for node in ["top", "mid"] {
        let (va, vb) = (a.voltage(node).unwrap(), b.voltage(node).unwrap());
        assert!((va - vb).abs() < 1e-9, "{node}: {va} vs {vb}");
    }
}

#[test]
fn stage_list_is_always_a_prefix_of_the_fixed_order() {
    let order = [Stage::Requirement, Stage::OpCheck, Stage::DcSweep, Stage::Function];
    let cases: [(u32, &str); 4] = [
        (1, include_str!("fixtures/task01_amp.sp")),
        // fails at stage 1: no Vout anywhere
        (1, "Vin Vin 0 1\nR1 Vin 0 1k\n"),
        // fails at stage 2: dangling node
        (1, "\
.model nm nmos level=1 kp=100u vto=0.5
Vdd Vdd 0 5
Vin Vin 0 0.9
M1 Vout Vin 0 0 nm w=5u l=1u
RD Vdd Vout 10k
Ra lonely q 1k
Rb q 0 1k
"),
        // fails at stage 4: shorted load kills the gain
        (1, include_str!("fixtures/task01_amp_shorted.sp")),
    ];
    for (task_id, text) in cases {
        let task = benchmark_task(task_id).unwrap();
        let circuit = parse_netlist(text).unwrap();
        let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
        assert!(outcome.stages.len() <= order.len());
        for (stage, expect) in outcome.stages.iter().zip(order) {
            assert_eq!(stage.stage, expect);
        }
        // a failure ends the list
        if let Some(pos) = outcome.stages.iter().position(|s| !s.passed) {
            assert_eq!(pos, outcome.stages.len() - 1);
            assert!(!outcome.final_pass);
        }
    }
}

#[test]
fn check_reports_are_byte_identical_across_runs() {
    let task = benchmark_task(1).unwrap();
    let circuit = parse_netlist(include_str!("fixtures/task01_amp.sp")).unwrap();
    let run = || {
        let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
        serde_json::to_string(&outcome).unwrap()
    };
    assert_eq!(run(), run());
}
