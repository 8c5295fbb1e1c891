//! Stage 1 of the verification flow: structural requirements.
//!
//! Beyond the presence of the task's input and output nodes, a small
//! per-task predicate table enforces whatever the task description pins
//! down structurally. The rules are deliberately conservative presence
//! checks, never topology isomorphism.

use crate::netlist::{normalize_node, Circuit, Device, Polarity};
use crate::report::{Stage, StageReport};
use crate::tasks::TaskSpec;

/// Check a parsed (not necessarily flattened) circuit against the task's
/// structural requirements. Failures are reported, never raised; the
/// feedback names each missing node or violated rule in one sentence.
///
/// `tools_active` marks a composite run with a populated tool library, in
/// which case the design is expected to instantiate at least one
/// subcircuit.
pub fn check_requirements(circuit: &Circuit, task: &TaskSpec, tools_active: bool) -> StageReport {
    let mut findings = Vec::new();
    let nodes = circuit.nodes();

    for node in task.input_nodes.iter() {
        if !nodes.contains(&normalize_node(node)) {
            findings.push(format!("Required input node {node} is missing from the circuit."));
        }
    }
    for node in task.output_nodes.iter() {
        if !nodes.contains(&normalize_node(node)) {
            findings.push(format!("Required output node {node} is missing from the circuit."));
        }
    }

    let wants_resistor = {
        let d = task.description.to_ascii_lowercase();
        d.contains("resistive load") || d.contains("resistor")
    };
    if wants_resistor
        && !circuit
            .elements
            .iter()
            .any(|el| matches!(el.device, Device::Resistor { .. }))
    {
        findings.push("The task calls for a resistive load, but the circuit contains no resistor.".to_string());
    }

    if task.description.to_ascii_lowercase().contains("capacitor")
        && !circuit
            .elements
            .iter()
            .any(|el| matches!(el.device, Device::Capacitor { .. }))
    {
        findings.push("The task calls for a capacitor, but the circuit contains none.".to_string());
    }

    // Task 4: the input signal must drive a MOSFET source terminal.
    if task.id == 4 {
        let vin = normalize_node("Vin");
        let on_source = circuit.mosfets().any(|m| m.nodes.get(2) == Some(&vin));
        if nodes.contains(&vin) && !on_source {
            findings.push(
                "The input signal Vin must be applied at the source terminal of a MOSFET, but no MOSFET source connects to Vin.".to_string(),
            );
        }
    }

    // Task 7: exactly one NMOS and one PMOS.
    if task.id == 7 {
        let (mut nmos, mut pmos) = (0, 0);
        for m in circuit.mosfets() {
            if let Device::Mosfet { model, .. } = &m.device {
                match circuit.models.get(model).map(|mm| mm.polarity) {
                    Some(Polarity::Nmos) => nmos += 1,
                    Some(Polarity::Pmos) => pmos += 1,
                    None => {}
                }
            }
        }
        if nmos != 1 || pmos != 1 {
            findings.push(format!(
                "The task requires exactly 1 NMOS and 1 PMOS transistor; found {nmos} NMOS and {pmos} PMOS."
            ));
        }
    }

    if task.composite && tools_active && !circuit.has_instances() {
        findings.push(
            "Composite designs should reuse the provided library subcircuits, but the netlist contains no subcircuit instance.".to_string(),
        );
    }

    if findings.is_empty() {
        StageReport::passed(Stage::Requirement)
    } else {
        StageReport::failed(Stage::Requirement, findings)
    }
}
