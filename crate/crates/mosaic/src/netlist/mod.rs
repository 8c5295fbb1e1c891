//! SPICE-subset netlists: parsing, validation, serialization, and
//! subcircuit flattening.
//!
//! The accepted card set is exactly:
//!
//! ```text
//! * comment
//! R<name> n+ n- value                    resistor
//! C<name> n+ n- value                    capacitor
//! V<name> n+ n- [dc] value [SIN|PULSE]   voltage source
//! I<name> n+ n- [dc] value [SIN|PULSE]   current source
//! M<name> d g s b model w=.. l=..        MOSFET (level-1 model)
//! X<name> n1 .. nk subckt_name           subcircuit instance
//! .model <name> nmos|pmos [level=1] kp=.. vto=.. [lambda=..]
//! .subckt <name> p1 .. pk / .ends        subcircuit definition
//! .end                                   end of netlist (optional)
//! ```
//!
//! Node and element identifiers are case-insensitive; `0` and `gnd` both
//! name the ground node. Anything outside this card set is a parse error
//! that names the line, so the text can be handed back to a design agent
//! unchanged.
//!
//! A classic SPICE deck treats its first line as a title. This parser does
//! not: every line is a card, and the title is taken from the first comment
//! line if one exists.

mod flatten;
mod parse;
mod requirements;

pub use parse::{format_value, parse_netlist, parse_netlist_partial, parse_value};
pub use requirements::check_requirements;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

/// Canonical name of the ground node.
pub const GROUND: &str = "0";

/// Normalize a node name: identifiers are case-insensitive, and `gnd`
/// is an alias for ground.
pub fn normalize_node(raw: &str) -> String {
    let lower = raw.to_ascii_lowercase();
    if lower == "gnd" {
        GROUND.to_string()
    } else {
        lower
    }
}

/// Errors produced while parsing, resolving, or flattening a netlist.
///
/// Display texts carry line numbers and the offending text where
/// available; they are forwarded verbatim as repair feedback.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetlistError {
    #[error("empty netlist: no cards found")]
    Empty,
    #[error("line {line}: {reason}: \"{text}\"")]
    Card {
        line: usize,
        text: String,
        reason: String,
    },
    #[error("line {line}: duplicate element name \"{name}\"")]
    DuplicateElement { line: usize, name: String },
    #[error("malformed value \"{token}\": {reason}")]
    Value { token: String, reason: String },
    #[error("unresolved references:\n{}", .0.join("\n"))]
    Unresolved(Vec<String>),
    #[error("subcircuit \"{0}\" is recursive or nested deeper than {MAX_FLATTEN_DEPTH} levels")]
    RecursiveSubcircuit(String),
    #[error(
        "instance \"{instance}\" passes {got} nodes to subcircuit \"{subckt}\" which has {expected} ports"
    )]
    PortArity {
        instance: String,
        subckt: String,
        expected: usize,
        got: usize,
    },
    #[error("model \"{0}\" is defined more than once with different parameters")]
    ModelCollision(String),
}

/// Maximum subcircuit instantiation depth accepted by [`Circuit::flatten`].
pub const MAX_FLATTEN_DEPTH: usize = 8;

/// MOSFET polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Polarity {
    Nmos,
    Pmos,
}

/// A level-1 MOSFET model card.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeviceModel {
    pub name: String,
    pub polarity: Polarity,
    /// Transconductance parameter, A/V².
    pub kp: f64,
    /// Threshold voltage, V. Conventionally >= 0 for NMOS, <= 0 for PMOS.
    pub vto: f64,
    /// Channel-length modulation, 1/V. Zero when the card omits it.
    pub lambda: f64,
}

/// Time-dependent source waveforms.
///
/// Beyond the classic `SIN` and `PULSE` functions, `SQUARE` and
/// `TRIANGLE` describe symmetric waves that sit exactly at their center
/// value at t = 0, which is what a stimulus "centered at V0" needs under
/// the rule that transient initial conditions evaluate sources at t = 0.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Waveshape {
    /// `SIN(offset amplitude frequency)`
    Sin {
        offset: f64,
        amplitude: f64,
        frequency_hz: f64,
    },
    /// `PULSE(v1 v2 delay rise fall width period)`
    Pulse {
        v1: f64,
        v2: f64,
        delay_s: f64,
        rise_s: f64,
        fall_s: f64,
        width_s: f64,
        period_s: f64,
    },
    /// `SQUARE(center amplitude frequency)`: center + A·sgn(sin(2πft))
    Square {
        center: f64,
        amplitude: f64,
        frequency_hz: f64,
    },
    /// `TRIANGLE(center amplitude frequency)`: rises from the center
    /// first, peaks at a quarter period
    Triangle {
        center: f64,
        amplitude: f64,
        frequency_hz: f64,
    },
}

impl Waveshape {
    /// Instantaneous value at time `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            Waveshape::Sin {
                offset,
                amplitude,
                frequency_hz,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * frequency_hz * t).sin(),
            Waveshape::Pulse {
                v1,
                v2,
                delay_s,
                rise_s,
                fall_s,
                width_s,
                period_s,
            } => {
                if t < delay_s {
                    return v1;
                }
                let tp = (t - delay_s) % period_s;
                if tp < rise_s {
                    v1 + (v2 - v1) * tp / rise_s
                } else if tp < rise_s + width_s {
                    v2
                } else if tp < rise_s + width_s + fall_s {
                    v2 + (v1 - v2) * (tp - rise_s - width_s) / fall_s
                } else {
                    v1
                }
            }
            Waveshape::Square {
                center,
                amplitude,
                frequency_hz,
            } => {
                let p = (t * frequency_hz).fract();
                if p == 0.0 {
                    center
                } else if p < 0.5 {
                    center + amplitude
                } else {
                    center - amplitude
                }
            }
            Waveshape::Triangle {
                center,
                amplitude,
                frequency_hz,
            } => {
                let p = (t * frequency_hz).fract();
                let unit = if p < 0.25 {
                    4.0 * p
                } else if p < 0.75 {
                    2.0 - 4.0 * p
                } else {
                    4.0 * p - 4.0
                };
                center + amplitude * unit
            }
        }
    }
}

/// DC value plus an optional time-dependent waveform for V and I sources.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SourceSpec {
    pub dc: f64,
    pub waveform: Option<Waveshape>,
}

impl SourceSpec {
    pub fn dc(value: f64) -> Self {
        SourceSpec {
            dc: value,
            waveform: None,
        }
    }

    /// Source value at time `t`. `None` means static analysis: the DC value.
    pub fn value_at(&self, t: Option<f64>) -> f64 {
        match (t, &self.waveform) {
            (Some(t), Some(w)) => w.value_at(t),
            _ => self.dc,
        }
    }
}

/// The device behind an element card.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Device {
    Resistor { ohms: f64 },
    Capacitor { farads: f64 },
    VoltageSource(SourceSpec),
    CurrentSource(SourceSpec),
    Mosfet { model: String, width_m: f64, length_m: f64 },
    Instance { subckt: String },
}

/// One element card: a named device attached to an ordered node list.
///
/// Node counts: 2 for R/C/V/I, exactly 4 for MOSFETs in drain, gate,
/// source, bulk order, and the instantiated subcircuit's port count for
/// instances.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Element {
    pub name: String,
    pub nodes: Vec<String>,
    pub device: Device,
}

impl Element {
    pub fn is_mosfet(&self) -> bool {
        matches!(self.device, Device::Mosfet { .. })
    }

    pub fn is_instance(&self) -> bool {
        matches!(self.device, Device::Instance { .. })
    }
}

/// A named, port-parameterized netlist fragment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubcircuitDef {
    pub name: String,
    pub ports: Vec<String>,
    pub elements: Vec<Element>,
    pub models: Vec<DeviceModel>,
}

/// A parsed netlist: elements in source order, model and subcircuit
/// definitions, and the node set they imply.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Circuit {
    pub title: String,
    pub elements: Vec<Element>,
    pub models: BTreeMap<String, DeviceModel>,
    pub subckts: BTreeMap<String, SubcircuitDef>,
}

impl Circuit {
    /// The set of node names referenced by the elements, ground included.
    pub fn nodes(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = BTreeSet::new();
        set.insert(GROUND.to_string());
        for el in &self.elements {
            for n in &el.nodes {
                set.insert(n.clone());
            }
        }
        set
    }

    pub fn has_node(&self, name: &str) -> bool {
        let n = normalize_node(name);
        n == GROUND || self.elements.iter().any(|el| el.nodes.contains(&n))
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        let n = name.to_ascii_lowercase();
        self.elements.iter().find(|el| el.name == n)
    }

    pub fn mosfets(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|el| el.is_mosfet())
    }

    pub fn has_instances(&self) -> bool {
        self.elements.iter().any(|el| el.is_instance())
    }

    /// First voltage source with a terminal on `node`, searching in
    /// element order.
    pub fn voltage_source_at(&self, node: &str) -> Option<&Element> {
        let n = normalize_node(node);
        self.elements.iter().find(|el| {
            matches!(el.device, Device::VoltageSource(_)) && el.nodes.contains(&n)
        })
    }

    /// Replace the DC value of the named source, leaving any waveform
    /// untouched. Returns false when the source does not exist.
    pub fn set_source_dc(&mut self, source: &str, value: f64) -> bool {
        let name = source.to_ascii_lowercase();
        for el in &mut self.elements {
            if el.name == name {
                match &mut el.device {
                    Device::VoltageSource(spec) | Device::CurrentSource(spec) => {
                        spec.dc = value;
                        return true;
                    }
                    _ => return false,
                }
            }
        }
        false
    }

    /// Replace the whole source spec (DC and waveform) of the named source.
    pub fn set_source_spec(&mut self, source: &str, spec: SourceSpec) -> bool {
        let name = source.to_ascii_lowercase();
        for el in &mut self.elements {
            if el.name == name {
                match &mut el.device {
                    Device::VoltageSource(s) | Device::CurrentSource(s) => {
                        *s = spec;
                        return true;
                    }
                    _ => return false,
                }
            }
        }
        false
    }

    /// Check that every model and subcircuit reference resolves, reporting
    /// all failures at once.
    pub fn resolve(&self) -> Result<(), NetlistError> {
        let mut failures = Vec::new();
        for el in &self.elements {
            match &el.device {
                Device::Mosfet { model, .. } => {
                    if !self.models.contains_key(model) {
                        failures.push(format!(
                            "element \"{}\" references undefined model \"{}\"",
                            el.name, model
                        ));
                    }
                }
                Device::Instance { subckt } if !self.subckts.contains_key(subckt) => {
                    failures.push(format!(
                        "instance \"{}\" references undefined subcircuit \"{}\"",
                        el.name, subckt
                    ));
                }
                _ => {}
            }
        }
        for def in self.subckts.values() {
            for el in &def.elements {
                if let Device::Mosfet { model, .. } = &el.device {
                    let local = def.models.iter().any(|m| &m.name == model);
                    if !local && !self.models.contains_key(model) {
                        failures.push(format!(
                            "element \"{}\" in subcircuit \"{}\" references undefined model \"{}\"",
                            el.name, def.name, model
                        ));
                    }
                }
                match &el.device {
                    Device::Instance { subckt } if !self.subckts.contains_key(subckt) => {
                        failures.push(format!(
                            "instance \"{}\" in subcircuit \"{}\" references undefined subcircuit \"{}\"",
                            el.name, def.name, subckt
                        ));
                    }
                    _ => {}
                }
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(NetlistError::Unresolved(failures))
        }
    }

    /// Expand every subcircuit instance. See the module docs of
    /// [`flatten`](crate::netlist) for the renaming scheme.
    pub fn flatten(&self) -> Result<Circuit, NetlistError> {
        flatten::flatten(self)
    }

    /// Render the circuit back to netlist text, one card per line.
    pub fn to_netlist(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&format!("* {}\n", self.title));
        }
        for model in self.models.values() {
            out.push_str(&render_model(model));
            out.push('\n');
        }
        for def in self.subckts.values() {
            out.push_str(&render_subckt(def));
        }
        for el in &self.elements {
            out.push_str(&render_element(el));
            out.push('\n');
        }
        out.push_str(".end\n");
        out
    }
}

fn render_model(m: &DeviceModel) -> String {
    let pol = match m.polarity {
        Polarity::Nmos => "nmos",
        Polarity::Pmos => "pmos",
    };
    let mut s = format!(
        ".model {} {} level=1 kp={} vto={}",
        m.name,
        pol,
        format_value(m.kp),
        format_value(m.vto)
    );
    if m.lambda != 0.0 {
        s.push_str(&format!(" lambda={}", format_value(m.lambda)));
    }
    s
}

fn render_subckt(def: &SubcircuitDef) -> String {
    let mut out = format!(".subckt {} {}\n", def.name, def.ports.join(" "));
    for model in &def.models {
        out.push_str(&render_model(model));
        out.push('\n');
    }
    for el in &def.elements {
        out.push_str(&render_element(el));
        out.push('\n');
    }
    out.push_str(".ends\n");
    out
}

fn render_element(el: &Element) -> String {
    let nodes = el.nodes.join(" ");
    match &el.device {
        Device::Resistor { ohms } => format!("{} {} {}", el.name, nodes, format_value(*ohms)),
        Device::Capacitor { farads } => format!("{} {} {}", el.name, nodes, format_value(*farads)),
        Device::VoltageSource(spec) | Device::CurrentSource(spec) => {
            let mut s = format!("{} {} dc {}", el.name, nodes, format_value(spec.dc));
            match &spec.waveform {
                Some(Waveshape::Sin {
                    offset,
                    amplitude,
                    frequency_hz,
                }) => s.push_str(&format!(
                    " sin({} {} {})",
                    format_value(*offset),
                    format_value(*amplitude),
                    format_value(*frequency_hz)
                )),
                Some(Waveshape::Pulse {
                    v1,
                    v2,
                    delay_s,
                    rise_s,
                    fall_s,
                    width_s,
                    period_s,
                }) => s.push_str(&format!(
                    " pulse({} {} {} {} {} {} {})",
                    format_value(*v1),
                    format_value(*v2),
                    format_value(*delay_s),
                    format_value(*rise_s),
                    format_value(*fall_s),
                    format_value(*width_s),
                    format_value(*period_s)
                )),
                Some(Waveshape::Square {
                    center,
                    amplitude,
                    frequency_hz,
                }) => s.push_str(&format!(
                    " square({} {} {})",
                    format_value(*center),
                    format_value(*amplitude),
                    format_value(*frequency_hz)
                )),
                Some(Waveshape::Triangle {
                    center,
                    amplitude,
                    frequency_hz,
                }) => s.push_str(&format!(
                    " triangle({} {} {})",
                    format_value(*center),
                    format_value(*amplitude),
                    format_value(*frequency_hz)
                )),
                None => {}
            }
            s
        }
        Device::Mosfet {
            model,
            width_m,
            length_m,
        } => format!(
            "{} {} {} w={} l={}",
            el.name,
            nodes,
            model,
            format_value(*width_m),
            format_value(*length_m)
        ),
        Device::Instance { subckt } => format!("{} {} {}", el.name, nodes, subckt),
    }
}
