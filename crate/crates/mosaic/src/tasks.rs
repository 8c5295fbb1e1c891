//! The built-in benchmark: 24 analog design tasks spanning twelve circuit
//! types, from a one-transistor amplifier to a phase-locked loop.
//!
//! Tasks 1-15 are basic circuits; 16-24 are composite circuits expected to
//! reuse archived subcircuit tools. Difficulty reflects component count and
//! connection complexity.

/// Circuit categories; each carries its own functional-correctness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CircuitType {
    Amplifier,
    CurrentMirror,
    Inverter,
    Opamp,
    Oscillator,
    Integrator,
    Differentiator,
    Adder,
    Subtractor,
    SchmittTrigger,
    Vco,
    Pll,
}

impl std::fmt::Display for CircuitType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl CircuitType {
    pub fn name(&self) -> &'static str {
        match self {
            CircuitType::Amplifier => "Amplifier",
            CircuitType::CurrentMirror => "CurrentMirror",
            CircuitType::Inverter => "Inverter",
            CircuitType::Opamp => "Opamp",
            CircuitType::Oscillator => "Oscillator",
            CircuitType::Integrator => "Integrator",
            CircuitType::Differentiator => "Differentiator",
            CircuitType::Adder => "Adder",
            CircuitType::Subtractor => "Subtractor",
            CircuitType::SchmittTrigger => "SchmittTrigger",
            CircuitType::Vco => "VCO",
            CircuitType::Pll => "PLL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

/// One benchmark task: what to design, its I/O contract, and whether it is
/// expected to be built from library subcircuits.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaskSpec {
    pub id: u32,
    pub circuit_type: CircuitType,
    pub description: String,
    pub input_nodes: Vec<String>,
    pub output_nodes: Vec<String>,
    pub composite: bool,
    pub difficulty: Difficulty,
}

impl TaskSpec {
    /// The measurement output: the last listed output node.
    pub fn primary_output(&self) -> &str {
        self.output_nodes.last().map(String::as_str).unwrap_or("")
    }

    /// Input nodes excluding bias inputs (`Vbias`, `Vbias1`, ...); these
    /// are the signal inputs a tool built from this task exposes.
    pub fn signal_inputs(&self) -> Vec<&str> {
        self.input_nodes
            .iter()
            .map(String::as_str)
            .filter(|n| !n.to_ascii_lowercase().starts_with("vbias"))
            .collect()
    }
}

fn task(
    id: u32,
    circuit_type: CircuitType,
    description: &str,
    inputs: &[&str],
    outputs: &[&str],
    composite: bool,
    difficulty: Difficulty,
) -> TaskSpec {
    TaskSpec {
        id,
        circuit_type,
        description: description.to_string(),
        input_nodes: inputs.iter().map(|s| s.to_string()).collect(),
        output_nodes: outputs.iter().map(|s| s.to_string()).collect(),
        composite,
        difficulty,
    }
}

/// All 24 benchmark tasks, in id order.
pub fn benchmark_tasks() -> Vec<TaskSpec> {
    use CircuitType::*;
    use Difficulty::*;
    vec![
        task(1, Amplifier, "a single-stage common-source amplifier with resistive load R", &["Vin"], &["Vout"], false, Easy),
        task(2, Amplifier, "a three-stage amplifier with single input and output (each stage is common-source with resistive load)", &["Vin"], &["Vout"], false, Easy),
        task(3, Amplifier, "a common-drain amplifier (a.k.a. a source follower) with resistive load R (output Vout at the source)", &["Vin"], &["Vout"], false, Easy),
        task(4, Amplifier, "a single-stage common-gate amplifier with resistive load R (input signal Vin must be applied at the source terminal)", &["Vin", "Vbias"], &["Vout"], false, Easy),
        task(5, Amplifier, "a single-stage cascode amplifier with two NMOS transistors provides a single-ended output through a resistive load R", &["Vin", "Vbias"], &["Vout"], false, Easy),
        task(6, Inverter, "a NMOS inverter with resistive load R", &["Vin"], &["Vout"], false, Easy),
        task(7, Inverter, "a logical inverter with 1 NMOS and 1 PMOS", &["Vin"], &["Vout"], false, Easy),
        task(8, CurrentMirror, "a simple NMOS constant current source with resistive load R", &["Vbias"], &["Vout"], false, Easy),
        task(9, Amplifier, "a single-stage amplifier (common-source with PMOS diode-connected load (gate and drain are shorted))", &["Vin"], &["Vout"], false, Medium),
        task(10, Amplifier, "a two-stage amplifier with a Miller compensation capacitor", &["Vin"], &["Vout"], false, Medium),
        task(11, Opamp, "a differential opamp with an active PMOS current mirror load, a tail current source, and two outputs", &["Vinp", "Vinn", "Vbias"], &["Voutp", "Vout"], false, Medium),
        task(12, CurrentMirror, "A cascode current mirror with 4 mosfets (2 stacked at input side with diode-connected, 2 stacked at output side), reference current source input Iref (connected to Vdd) and resistive load R", &["Iref"], &["Iout"], false, Medium),
        task(13, Opamp, "a single-stage differential common-source opamp with dual resistive loads, tail current, and a single output", &["Vinp", "Vinn"], &["Vout"], false, Medium),
        task(14, Opamp, "a two-stage differential opamp (first stage: common-source with an active load and a tail current, second stage: common-source with an active load)", &["Vinp", "Vinn", "Vbias1", "Vbias2", "Vbias3"], &["Voutp", "Vout"], false, Hard),
        task(15, Opamp, "a single-stage telescopic cascode opamp with two outputs (4 nmos as cascode input pair, 4 pmos as cascode loads, and 1 tail current)", &["Vinp", "Vinn", "Vbias1", "Vbias2", "Vbias3", "Vbias4"], &["Voutp", "Vout"], false, Hard),
        task(16, Oscillator, "an RC phase-shift oscillator", &[], &["Vout"], true, Hard),
        task(17, Oscillator, "a Wien Bridge oscillator", &[], &["Vout"], true, Hard),
        task(18, Integrator, "an Opamp integrator with resistor R1 and capacitor Cf", &["Vin"], &["Vout"], true, Hard),
        task(19, Differentiator, "an Opamp differentiator with resistor Rf and capacitor C1", &["Vin"], &["Vout"], true, Hard),
        task(20, Adder, "an Opamp adder to make Vout=-(Vin1+Vin2)", &["Vin1", "Vin2"], &["Vout"], true, Hard),
        task(21, Subtractor, "an Op-amp subtractor to make Vout=Vin2-Vin1", &["Vin1", "Vin2"], &["Vout"], true, Hard),
        task(22, SchmittTrigger, "a non-inverting Schmitt trigger with positive feedback op-amp", &["Vin"], &["Vout"], true, Hard),
        task(23, Vco, "a voltage-controlled oscillator", &["Vin"], &["Vout"], true, Hard),
        task(24, Pll, "a phase-locked loop", &["CLK_ref"], &["CLK_p"], true, Hard),
    ]
}

/// Look up a benchmark task by id (1..=24).
pub fn benchmark_task(id: u32) -> Option<TaskSpec> {
    benchmark_tasks().into_iter().find(|t| t.id == id)
}
