//! Netlist text parsing: engineering-notation values and element cards.

use std::collections::BTreeMap;

use super::{
    normalize_node, Circuit, Device, DeviceModel, Element, NetlistError, Polarity, SourceSpec,
    SubcircuitDef, Waveshape,
};

/// Parse a SPICE value token: a number with an optional engineering
/// suffix (`f p n u m k meg g`, case-insensitive) and optional trailing
/// unit letters, e.g. `10k`, `2.5meg`, `100nF`, `470ohm`.
pub fn parse_value(token: &str) -> Result<f64, NetlistError> {
    let err = |reason: &str| NetlistError::Value {
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let t = token.trim();
    if t.is_empty() {
        return Err(err("empty token"));
    }
    // Longest prefix that parses as a float.
    let bytes = t.as_bytes();
    let mut end = 0;
    let mut seen_digit = false;
    let mut i = 0;
    if bytes[i] == b'+' || bytes[i] == b'-' {
        i += 1;
    }
    while i < bytes.len() {
        match bytes[i] {
            b'0'..=b'9' => {
                seen_digit = true;
                i += 1;
            }
            b'.' => i += 1,
            b'e' | b'E' => {
                // Exponent only if followed by a digit (optionally signed);
                // otherwise the `e` starts a suffix/unit.
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() && seen_digit {
                    i = j + 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                break;
            }
            _ => break,
        }
    }
    end = end.max(i);
    if !seen_digit {
        return Err(err("no digits"));
    }
    let mantissa_str = &t[..end];
    let mantissa: f64 = mantissa_str.parse().map_err(|_| err("unparseable number"))?;
    let rest = t[end..].to_ascii_lowercase();
    if rest.is_empty() {
        return Ok(mantissa);
    }
    if !rest.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(err("garbage after number"));
    }
    let (exp, tail): (i32, &str) = if let Some(tail) = rest.strip_prefix("meg") {
        (6, tail)
    } else {
        match rest.as_bytes()[0] {
            b'f' => (-15, &rest[1..]),
            b'p' => (-12, &rest[1..]),
            b'n' => (-9, &rest[1..]),
            b'u' => (-6, &rest[1..]),
            b'm' => (-3, &rest[1..]),
            b'k' => (3, &rest[1..]),
            b'g' => (9, &rest[1..]),
            // No suffix: the whole rest is a unit (ohm, v, a, hz, ...).
            _ => (0, rest.as_str()),
        }
    };
    if !tail.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(err("garbage after suffix"));
    }
    if exp == 0 {
        return Ok(mantissa);
    }
    // Fold the suffix into the decimal string so `100n` parses to the
    // exact same double as the literal `100e-9`.
    if !mantissa_str.contains(['e', 'E']) {
        if let Ok(v) = format!("{mantissa_str}e{exp}").parse() {
            return Ok(v);
        }
    }
    Ok(mantissa * 10f64.powi(exp))
}

/// Render a value in lowercase engineering notation such that
/// `parse_value(format_value(x)) == x` exactly.
///
/// A suffix is used only when the rendered form parses back bit-exactly;
/// otherwise the plain shortest decimal representation is emitted.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.1..1000.0).contains(&a) {
        return format!("{v}");
    }
    const SCALES: [(f64, &str); 8] = [
        (1e9, "g"),
        (1e6, "meg"),
        (1e3, "k"),
        (1e-3, "m"),
        (1e-6, "u"),
        (1e-9, "n"),
        (1e-12, "p"),
        (1e-15, "f"),
    ];
    for (scale, suffix) in SCALES {
        let m = v / scale;
        if (1.0..1000.0).contains(&m.abs()) {
            let candidate = format!("{m}{suffix}");
            if parse_value(&candidate) == Ok(v) {
                return candidate;
            }
        }
    }
    let fallback = format!("{v:e}");
    debug_assert_eq!(parse_value(&fallback), Ok(v));
    fallback
}

/// Parse the given netlist text into a [`Circuit`].
///
/// Element order follows source order, node names are normalized, and
/// model/subcircuit references are checked in a resolve pass that reports
/// every failure at once.
pub fn parse_netlist(text: &str) -> Result<Circuit, NetlistError> {
    let circuit = parse_netlist_partial(text)?;
    circuit.resolve()?;
    Ok(circuit)
}

/// Parse without the resolve pass, for callers that inject externally
/// defined subcircuits (the tool library) before resolving.
pub fn parse_netlist_partial(text: &str) -> Result<Circuit, NetlistError> {
    let mut circuit = Circuit::default();
    let mut sub: Option<SubcircuitDef> = None;
    let mut saw_card = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('*') {
            if circuit.title.is_empty() {
                circuit.title = comment.trim().to_string();
            }
            continue;
        }
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        let head = tokens[0].to_ascii_lowercase();
        let card_err = |reason: String| NetlistError::Card {
            line: line_no,
            text: line.to_string(),
            reason,
        };

        if head == ".end" {
            break;
        }
        if head == ".ends" {
            match sub.take() {
                Some(def) => {
                    if circuit.subckts.contains_key(&def.name) {
                        return Err(card_err(format!(
                            "subcircuit \"{}\" defined twice",
                            def.name
                        )));
                    }
                    circuit.subckts.insert(def.name.clone(), def);
                }
                None => return Err(card_err(".ends without matching .subckt".into())),
            }
            continue;
        }
        if head == ".subckt" {
            if sub.is_some() {
                return Err(card_err(
                    "nested .subckt definitions are not supported".into(),
                ));
            }
            if tokens.len() < 3 {
                return Err(card_err(".subckt needs a name and at least one port".into()));
            }
            sub = Some(SubcircuitDef {
                name: tokens[1].to_ascii_lowercase(),
                ports: tokens[2..].iter().map(|t| normalize_node(t)).collect(),
                elements: Vec::new(),
                models: Vec::new(),
            });
            saw_card = true;
            continue;
        }
        if head == ".model" {
            let model = parse_model(&tokens, &card_err)?;
            match &mut sub {
                Some(def) => def.models.push(model),
                None => {
                    if let Some(prev) = circuit.models.get(&model.name) {
                        if *prev != model {
                            return Err(NetlistError::ModelCollision(model.name));
                        }
                    } else {
                        circuit.models.insert(model.name.clone(), model);
                    }
                }
            }
            saw_card = true;
            continue;
        }
        if head.starts_with('.') {
            return Err(card_err(format!("unknown directive \"{}\"", tokens[0])));
        }

        let element = parse_element(&tokens, &card_err)?;
        let scope: &mut Vec<Element> = match &mut sub {
            Some(def) => &mut def.elements,
            None => &mut circuit.elements,
        };
        if scope.iter().any(|el| el.name == element.name) {
            return Err(NetlistError::DuplicateElement {
                line: line_no,
                name: element.name,
            });
        }
        scope.push(element);
        saw_card = true;
    }

    if let Some(def) = sub {
        return Err(NetlistError::Card {
            line: text.lines().count(),
            text: format!(".subckt {}", def.name),
            reason: "missing .ends".to_string(),
        });
    }
    if !saw_card {
        return Err(NetlistError::Empty);
    }
    Ok(circuit)
}

/// Split a card into tokens, making `(` and `)` their own separators so
/// `SIN(2.5 1 1k)` and `SIN (2.5 1 1k)` tokenize identically. Parameter
/// assignments keep their `=` (`w=50u`).
fn tokenize(line: &str) -> Vec<String> {
    line.replace(['(', ')', ','], " ")
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

fn parse_model(
    tokens: &[String],
    card_err: &dyn Fn(String) -> NetlistError,
) -> Result<DeviceModel, NetlistError> {
    if tokens.len() < 3 {
        return Err(card_err(".model needs a name and a type".into()));
    }
    let name = tokens[1].to_ascii_lowercase();
    let polarity = match tokens[2].to_ascii_lowercase().as_str() {
        "nmos" => Polarity::Nmos,
        "pmos" => Polarity::Pmos,
        other => return Err(card_err(format!("unsupported model type \"{other}\""))),
    };
    let mut kp = None;
    let mut vto = None;
    let mut lambda = 0.0;
    for tok in &tokens[3..] {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| card_err(format!("expected key=value, got \"{tok}\"")))?;
        let v = parse_value(value)?;
        match key.to_ascii_lowercase().as_str() {
            "level" => {
                if v != 1.0 {
                    return Err(card_err(format!("only level=1 models are supported, got level={v}")));
                }
            }
            "kp" => kp = Some(v),
            "vto" => vto = Some(v),
            "lambda" => lambda = v,
            other => return Err(card_err(format!("unknown model parameter \"{other}\""))),
        }
    }
    let kp = kp.ok_or_else(|| card_err("model is missing kp=".into()))?;
    let vto = vto.ok_or_else(|| card_err("model is missing vto=".into()))?;
    if kp <= 0.0 {
        return Err(card_err(format!("kp must be positive, got {kp}")));
    }
    if lambda < 0.0 {
        return Err(card_err(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(DeviceModel {
        name,
        polarity,
        kp,
        vto,
        lambda,
    })
}

fn parse_element(
    tokens: &[String],
    card_err: &dyn Fn(String) -> NetlistError,
) -> Result<Element, NetlistError> {
    let name = tokens[0].to_ascii_lowercase();
    let kind = name.chars().next().unwrap();
    match kind {
        'r' | 'c' => {
            if tokens.len() != 4 {
                return Err(card_err(format!(
                    "{} card needs exactly: name n+ n- value",
                    kind.to_ascii_uppercase()
                )));
            }
            let value = parse_value(&tokens[3])?;
            let device = if kind == 'r' {
                if value <= 0.0 {
                    return Err(card_err(format!("resistor value must be > 0, got {value}")));
                }
                Device::Resistor { ohms: value }
            } else {
                if value < 0.0 {
                    return Err(card_err(format!("capacitor value must be >= 0, got {value}")));
                }
                Device::Capacitor { farads: value }
            };
            Ok(Element {
                name,
                nodes: vec![normalize_node(&tokens[1]), normalize_node(&tokens[2])],
                device,
            })
        }
        'v' | 'i' => {
            if tokens.len() < 4 {
                return Err(card_err("source card needs: name n+ n- [dc] value [SIN|PULSE]".into()));
            }
            let spec = parse_source_spec(&tokens[3..], card_err)?;
            let device = if kind == 'v' {
                Device::VoltageSource(spec)
            } else {
                Device::CurrentSource(spec)
            };
            Ok(Element {
                name,
                nodes: vec![normalize_node(&tokens[1]), normalize_node(&tokens[2])],
                device,
            })
        }
        'm' => {
            if tokens.len() != 8 {
                return Err(card_err(
                    "MOSFET card needs exactly: name drain gate source bulk model w=.. l=..".into(),
                ));
            }
            let mut width = None;
            let mut length = None;
            for tok in &tokens[6..8] {
                let (key, value) = tok
                    .split_once('=')
                    .ok_or_else(|| card_err(format!("expected w=/l= assignment, got \"{tok}\"")))?;
                let v = parse_value(value)?;
                match key.to_ascii_lowercase().as_str() {
                    "w" => width = Some(v),
                    "l" => length = Some(v),
                    other => return Err(card_err(format!("unknown MOSFET parameter \"{other}\""))),
                }
            }
            let width_m = width.ok_or_else(|| card_err("MOSFET is missing w=".into()))?;
            let length_m = length.ok_or_else(|| card_err("MOSFET is missing l=".into()))?;
            if width_m <= 0.0 || length_m <= 0.0 {
                return Err(card_err("MOSFET w and l must be positive".into()));
            }
            Ok(Element {
                name,
                nodes: tokens[1..5].iter().map(|t| normalize_node(t)).collect(),
                device: Device::Mosfet {
                    model: tokens[5].to_ascii_lowercase(),
                    width_m,
                    length_m,
                },
            })
        }
        'x' => {
            if tokens.len() < 3 {
                return Err(card_err("instance card needs: name n1 .. nk subckt_name".into()));
            }
            let subckt = tokens[tokens.len() - 1].to_ascii_lowercase();
            Ok(Element {
                name,
                nodes: tokens[1..tokens.len() - 1]
                    .iter()
                    .map(|t| normalize_node(t))
                    .collect(),
                device: Device::Instance { subckt },
            })
        }
        other => Err(card_err(format!("unknown card type \"{other}\""))),
    }
}

fn parse_source_spec(
    tokens: &[String],
    card_err: &dyn Fn(String) -> NetlistError,
) -> Result<SourceSpec, NetlistError> {
    let mut i = 0;
    let mut dc: Option<f64> = None;
    if tokens[i].eq_ignore_ascii_case("dc") {
        i += 1;
        if i >= tokens.len() {
            return Err(card_err("dc keyword without a value".into()));
        }
    }
    if i < tokens.len() {
        if let Ok(v) = parse_value(&tokens[i]) {
            dc = Some(v);
            i += 1;
        }
    }
    let waveform = if i < tokens.len() {
        let func = tokens[i].to_ascii_lowercase();
        let args: Vec<f64> = tokens[i + 1..]
            .iter()
            .map(|t| parse_value(t))
            .collect::<Result<_, _>>()?;
        match func.as_str() {
            "sin" => {
                if args.len() != 3 {
                    return Err(card_err("SIN needs (offset amplitude frequency)".into()));
                }
                if args[2] <= 0.0 {
                    return Err(card_err(format!("SIN frequency must be > 0, got {}", args[2])));
                }
                Some(Waveshape::Sin {
                    offset: args[0],
                    amplitude: args[1],
                    frequency_hz: args[2],
                })
            }
            "pulse" => {
                if args.len() != 7 {
                    return Err(card_err(
                        "PULSE needs (v1 v2 delay rise fall width period)".into(),
                    ));
                }
                let (rise, fall, width, period) = (args[3], args[4], args[5], args[6]);
                if rise < 0.0 || fall < 0.0 || width < 0.0 {
                    return Err(card_err("PULSE rise, fall and width must be >= 0".into()));
                }
                if period <= width {
                    return Err(card_err(format!(
                        "PULSE period ({period}) must exceed width ({width})"
                    )));
                }
                Some(Waveshape::Pulse {
                    v1: args[0],
                    v2: args[1],
                    delay_s: args[2],
                    rise_s: rise,
                    fall_s: fall,
                    width_s: width,
                    period_s: period,
                })
            }
            "square" | "triangle" => {
                if args.len() != 3 {
                    return Err(card_err(format!(
                        "{} needs (center amplitude frequency)",
                        func.to_uppercase()
                    )));
                }
                if args[2] <= 0.0 {
                    return Err(card_err(format!(
                        "{} frequency must be > 0, got {}",
                        func.to_uppercase(),
                        args[2]
                    )));
                }
                if func == "square" {
                    Some(Waveshape::Square {
                        center: args[0],
                        amplitude: args[1],
                        frequency_hz: args[2],
                    })
                } else {
                    Some(Waveshape::Triangle {
                        center: args[0],
                        amplitude: args[1],
                        frequency_hz: args[2],
                    })
                }
            }
            other => return Err(card_err(format!("unknown source function \"{other}\""))),
        }
    } else {
        None
    };
    let dc = match (dc, &waveform) {
        (Some(v), _) => v,
        // With no explicit DC value, a waveform source rests at its t=0 value.
        (None, Some(w)) => w.value_at(0.0),
        (None, None) => return Err(card_err("source card has no value".into())),
    };
    Ok(SourceSpec { dc, waveform })
}
