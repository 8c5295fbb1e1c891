//! The circuit tool library: verified basic designs archived as reusable
//! subcircuits with their measured specifications.
//!
//! Each entry packages a task's winning netlist as a subcircuit whose
//! ports are the task's signal inputs plus its primary output; supplies
//! and bias sources stay inside, so a caller just instantiates the tool
//! and drives the signal ports. Retrieval is generator-mediated: the
//! library renders a specification table, a text generator picks entry
//! ids, and the chosen tools are expanded into call snippets for the
//! composite design prompt.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::netlist::{
    normalize_node, parse_netlist, Circuit, Device, Element, NetlistError, SubcircuitDef,
};
use crate::report::{Stage, VerificationOutcome};
use crate::tasks::{CircuitType, TaskSpec};

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("composite designs are not archived; only basic circuits become tools")]
    CompositeRejected,
    #[error("cannot archive an unverified design (final_pass is false)")]
    NotVerified,
    #[error("library io: {0}")]
    Io(#[from] std::io::Error),
    #[error("library file corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// An archived subcircuit tool with its measured specifications.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToolEntry {
    pub task_id: u32,
    pub circuit_type: String,
    /// Gain (or differential-mode gain) in dB; absent for types without
    /// a gain figure, rendered as "NA".
    pub gain_db: Option<f64>,
    pub common_mode_gain_db: Option<f64>,
    pub num_inputs: usize,
    pub num_outputs: usize,
    /// "inverting" / "non-inverting", comma-joined per input.
    pub phase_relation: String,
    /// Signal inputs first, then outputs.
    pub ports: Vec<String>,
    pub subckt: SubcircuitDef,
    /// Ready-to-paste declaration and instantiation lines.
    pub call_snippet: String,
}

impl ToolEntry {
    pub fn input_ports(&self) -> &[String] {
        &self.ports[..self.num_inputs]
    }

    pub fn output_ports(&self) -> &[String] {
        &self.ports[self.num_inputs..]
    }
}

/// The archive: at most one entry per task, best design kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolLibrary {
    pub entries: BTreeMap<u32, ToolEntry>,
    pub persistence_path: Option<PathBuf>,
}

impl ToolLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_path(path: impl Into<PathBuf>) -> Self {
        ToolLibrary {
            entries: BTreeMap::new(),
            persistence_path: Some(path.into()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, task_id: u32) -> Option<&ToolEntry> {
        self.entries.get(&task_id)
    }

    /// Subcircuit definitions for injection into composite netlists.
    pub fn subckt_defs(&self) -> impl Iterator<Item = &SubcircuitDef> {
        self.entries.values().map(|e| &e.subckt)
    }

    pub fn save(&self) -> Result<(), LibraryError> {
        if let Some(path) = &self.persistence_path {
            save_to(path, self)?;
        }
        Ok(())
    }
}

/// Derive the tool name for a task: circuit type plus task id.
pub fn tool_name(task: &TaskSpec) -> String {
    format!("{}{}", task.circuit_type.name(), task.id)
}

/// Archive a verified basic design, keeping the better entry when one
/// already exists: higher gain wins for Amplifier/Opamp tools, and the
/// first verified design is kept for types without a gain figure.
/// Persists when the library has a backing path.
pub fn archive_design(
    lib: &mut ToolLibrary,
    task: &TaskSpec,
    circuit: &Circuit,
    outcome: &VerificationOutcome,
) -> Result<bool, LibraryError> {
    if task.composite {
        return Err(LibraryError::CompositeRejected);
    }
    if !outcome.final_pass {
        return Err(LibraryError::NotVerified);
    }
    let entry = build_entry(task, circuit, outcome);
    let replace = match lib.entries.get(&task.id) {
        None => true,
        Some(existing) => match (entry.gain_db, existing.gain_db) {
            (Some(new), Some(old)) => new > old,
            _ => false,
        },
    };
    if replace {
        lib.entries.insert(task.id, entry);
        lib.save()?;
    }
    Ok(replace)
}

fn build_entry(task: &TaskSpec, circuit: &Circuit, outcome: &VerificationOutcome) -> ToolEntry {
    let function = outcome
        .stages
        .iter()
        .find(|s| s.stage == Stage::Function)
        .cloned();
    let measurements = function.map(|f| f.measurements).unwrap_or_default();

    let signal_inputs: Vec<String> = task.signal_inputs().iter().map(|s| s.to_string()).collect();
    let mut ports = signal_inputs.clone();
    ports.push(task.primary_output().to_string());
    let num_inputs = signal_inputs.len();

    let has_gain = matches!(task.circuit_type, CircuitType::Amplifier | CircuitType::Opamp);
    let gain_db = has_gain.then(|| measurements.get("gain_db").copied()).flatten();
    let common_mode_gain_db = measurements.get("common_mode_gain_db").copied();

    let phase_relation = if num_inputs == 2 {
        let p1 = measurements.get("gain_in1_re").copied().unwrap_or(1.0);
        let p2 = measurements.get("gain_in2_re").copied().unwrap_or(-1.0);
        format!("{}, {}", phase_word(p1), phase_word(p2))
    } else if has_gain {
        phase_word(measurements.get("gain_re").copied().unwrap_or(-1.0)).to_string()
    } else {
        "NA".to_string()
    };

    let subckt = circuit_to_subckt(circuit, &tool_name(task), &ports);
    let call_snippet = call_snippet_for(&subckt);
    ToolEntry {
        task_id: task.id,
        circuit_type: task.circuit_type.name().to_string(),
        gain_db,
        common_mode_gain_db,
        num_inputs,
        num_outputs: ports.len() - num_inputs,
        phase_relation,
        ports,
        subckt,
        call_snippet,
    }
}

fn phase_word(re: f64) -> &'static str {
    if re < 0.0 {
        "inverting"
    } else {
        "non-inverting"
    }
}

/// Package a verified circuit as a subcircuit: ports are the given nodes,
/// sources driving the input ports are dropped (the caller provides the
/// signal), and everything else, supplies and bias sources included,
/// moves inside.
fn circuit_to_subckt(circuit: &Circuit, name: &str, ports: &[String]) -> SubcircuitDef {
    let port_set: Vec<String> = ports.iter().map(|p| normalize_node(p)).collect();
    let inputs: Vec<String> = port_set[..port_set.len().saturating_sub(1)].to_vec();
    let elements: Vec<Element> = circuit
        .elements
        .iter()
        .filter(|el| {
            let drives_input = matches!(
                el.device,
                Device::VoltageSource(_) | Device::CurrentSource(_)
            ) && el.nodes.iter().any(|n| inputs.contains(n));
            !drives_input
        })
        .cloned()
        .collect();
    SubcircuitDef {
        name: name.to_ascii_lowercase(),
        ports: port_set,
        elements,
        models: circuit.models.values().cloned().collect(),
    }
}

/// The specification table handed to the generator during retrieval.
pub fn render_library_table(lib: &ToolLibrary) -> String {
    let mut out = String::from(
        "Id | Circuit Type | Gain/Differential-mode gain (dB) | Common-mode gain (dB) | Input | Output\n",
    );
    for entry in lib.entries.values() {
        let gain = entry
            .gain_db
            .map(|g| format!("{g:.2}"))
            .unwrap_or_else(|| "NA".to_string());
        let cmg = entry
            .common_mode_gain_db
            .map(|g| format!("{g:.2}"))
            .unwrap_or_else(|| "NA".to_string());
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {} | {}",
            entry.task_id,
            entry.circuit_type,
            gain,
            cmg,
            entry.input_ports().join(", "),
            entry.output_ports().join(", "),
        );
    }
    out
}

/// Declaration and instantiation lines for one tool.
fn call_snippet_for(subckt: &SubcircuitDef) -> String {
    format!(
        "* declare the subcircuit (definition provided by the library)\n\
         .subckt {name} {ports}\n\
         * ... body supplied automatically ...\n\
         .ends\n\
         * create a subcircuit instance\n\
         X1 {ports} {name}",
        name = subckt.name,
        ports = subckt.ports.join(" ")
    )
}

/// The CALL_INFO block of the composite design prompt: per tool, its
/// declaration and instance lines in port order.
pub fn render_call_info(entries: &[&ToolEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        let _ = writeln!(out, "{}", entry.call_snippet);
    }
    out
}

/// The NOTE block of the composite design prompt: input polarity labels,
/// the 2.5 V operating level, and the oscillator-specific advice.
pub fn render_note_info(entries: &[&ToolEntry], task: &TaskSpec) -> String {
    let mut out = String::new();
    for entry in entries {
        let name = &entry.subckt.name;
        if entry.num_inputs == 2 {
            let labels: Vec<&str> = entry.phase_relation.split(", ").collect();
            let ins = entry.input_ports();
            for (port, label) in ins.iter().zip(&labels) {
                let _ = writeln!(out, "The {port} of {name} is the {label} input.");
            }
            let _ = writeln!(
                out,
                "The DC operating voltage for {} is 2.5 V.",
                ins.join("/")
            );
        } else if entry.num_inputs == 1 {
            let _ = writeln!(
                out,
                "The {} to {} phase of {name} is {}.",
                entry.input_ports()[0],
                entry.output_ports()[0],
                entry.phase_relation
            );
            let _ = writeln!(
                out,
                "The DC operating voltage for {} is 2.5 V.",
                entry.input_ports()[0]
            );
        }
    }
    if task.circuit_type == CircuitType::Oscillator {
        out.push_str(
            "Due to the operational range of the op-amp being 0 to 5V, please connect the nodes that were originally grounded to a 2.5V DC power source.\n",
        );
        out.push_str("Please increase the gain as much as possible to maintain oscillation.\n");
    }
    out
}

/// Extract the ids of the subcircuits a generator reply selects: the last
/// bracketed integer list in the text, e.g. `[3, 5]`.
pub fn parse_selection(reply: &str) -> Option<Vec<u32>> {
    let bytes = reply.as_bytes();
    let mut best: Option<Vec<u32>> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(end) = reply[i + 1..].find(']') {
                let inner = &reply[i + 1..i + 1 + end];
                let parsed: Result<Vec<u32>, _> = inner
                    .split(',')
                    .map(|s| s.trim().parse::<u32>())
                    .collect();
                if let Ok(ids) = parsed {
                    if !inner.trim().is_empty() {
                        best = Some(ids);
                    }
                }
                i += end + 1;
            }
        }
        i += 1;
    }
    best
}

/// Outcome of a retrieval round.
#[derive(Debug, Clone)]
pub struct ToolSelection {
    /// Entries chosen, in reply order, unknown ids dropped.
    pub ids: Vec<u32>,
    /// Ids the generator named that are not in the library.
    pub dropped: Vec<u32>,
    /// No parsable list was found in the reply.
    pub retrieval_failed: bool,
    pub raw_reply: String,
}

/// Ask the generator which tools to use for a composite task. The prompt
/// is the retrieval template with the library table and task substituted;
/// an unparsable reply yields an empty selection flagged as a retrieval
/// failure.
pub fn select_tools(
    lib: &ToolLibrary,
    task: &TaskSpec,
    generator: &mut dyn crate::agent::Generator,
) -> Result<ToolSelection, crate::agent::GeneratorError> {
    let messages = crate::agent::build_retrieval_prompt(lib, task);
    let raw_reply = generator.send(&messages)?;
    Ok(match parse_selection(&raw_reply) {
        Some(ids) => {
            let (known, dropped): (Vec<u32>, Vec<u32>) =
                ids.into_iter().partition(|id| lib.entries.contains_key(id));
            ToolSelection {
                ids: known,
                dropped,
                retrieval_failed: false,
                raw_reply,
            }
        }
        None => ToolSelection {
            ids: Vec::new(),
            dropped: Vec::new(),
            retrieval_failed: true,
            raw_reply,
        },
    })
}

// ---------------------------------------------------------------------
// persistence: a human-readable file of metadata blocks plus netlists

pub fn save_to(path: &Path, lib: &ToolLibrary) -> Result<(), LibraryError> {
    let mut out = String::from("* circuit tool library\n");
    for entry in lib.entries.values() {
        out.push_str("#--- entry\n");
        let _ = writeln!(out, "task_id: {}", entry.task_id);
        let _ = writeln!(out, "circuit_type: {}", entry.circuit_type);
        if let Some(g) = entry.gain_db {
            let _ = writeln!(out, "gain_db: {g}");
        }
        if let Some(g) = entry.common_mode_gain_db {
            let _ = writeln!(out, "common_mode_gain_db: {g}");
        }
        let _ = writeln!(out, "num_inputs: {}", entry.num_inputs);
        let _ = writeln!(out, "num_outputs: {}", entry.num_outputs);
        let _ = writeln!(out, "phase_relation: {}", entry.phase_relation);
        let _ = writeln!(out, "ports: {}", entry.ports.join(", "));
        out.push_str("netlist:\n");
        let mut sub = Circuit::default();
        sub.subckts.insert(entry.subckt.name.clone(), entry.subckt.clone());
        out.push_str(&sub.to_netlist());
        out.push_str("#--- end\n");
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_from(path: &Path) -> Result<ToolLibrary, LibraryError> {
    let text = std::fs::read_to_string(path)?;
    let mut lib = ToolLibrary::with_path(path);
    for block in text.split("#--- entry").skip(1) {
        let block = block
            .split("#--- end")
            .next()
            .ok_or_else(|| LibraryError::Corrupt("missing end marker".into()))?;
        let (meta, netlist) = block
            .split_once("netlist:\n")
            .ok_or_else(|| LibraryError::Corrupt("missing netlist section".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once(':') {
                fields.insert(k.trim(), v.trim());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| LibraryError::Corrupt(format!("missing field {k}")))
        };
        let task_id: u32 = get("task_id")?
            .parse()
            .map_err(|_| LibraryError::Corrupt("bad task_id".into()))?;
        let parsed = parse_netlist(netlist)?;
        let subckt = parsed
            .subckts
            .values()
            .next()
            .cloned()
            .ok_or_else(|| LibraryError::Corrupt("entry netlist has no .subckt".into()))?;
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| LibraryError::Corrupt(format!("bad float {s}")))
        };
        let entry = ToolEntry {
            task_id,
            circuit_type: get("circuit_type")?.to_string(),
            gain_db: fields.get("gain_db").map(|s| parse_f64(s)).transpose()?,
            common_mode_gain_db: fields
                .get("common_mode_gain_db")
                .map(|s| parse_f64(s))
                .transpose()?,
            num_inputs: get("num_inputs")?
                .parse()
                .map_err(|_| LibraryError::Corrupt("bad num_inputs".into()))?,
            num_outputs: get("num_outputs")?
                .parse()
                .map_err(|_| LibraryError::Corrupt("bad num_outputs".into()))?,
            phase_relation: get("phase_relation")?.to_string(),
            ports: get("ports")?.split(", ").map(|s| s.to_string()).collect(),
            call_snippet: call_snippet_for(&subckt),
            subckt,
        };
        lib.entries.insert(task_id, entry);
    }
    Ok(lib)
}
