//! Subcircuit expansion.
//!
//! Instances are expanded breadth-first until none remain. Internal nodes
//! of an instance `xop` are renamed `xop.<local>`, port nodes alias the
//! caller's nodes, and ground is global. Expanded element names carry the
//! device letter up front so a flattened circuit still serializes to valid
//! cards: `m1` inside `xop` becomes `m.xop.m1`. Subcircuit-local models
//! merge into the global model map; two definitions under one name must be
//! identical.

use super::{Circuit, Device, Element, NetlistError, GROUND, MAX_FLATTEN_DEPTH};

pub fn flatten(circuit: &Circuit) -> Result<Circuit, NetlistError> {
    let mut flat = circuit.clone();
    let mut depth = 0;
    while flat.has_instances() {
        depth += 1;
        if depth > MAX_FLATTEN_DEPTH {
            let name = flat
                .elements
                .iter()
                .find_map(|el| match &el.device {
                    Device::Instance { subckt } => Some(subckt.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            return Err(NetlistError::RecursiveSubcircuit(name));
        }
        flat = expand_once(&flat)?;
    }
    flat.subckts.clear();
    Ok(flat)
}

fn expand_once(circuit: &Circuit) -> Result<Circuit, NetlistError> {
    let mut out = Circuit {
        title: circuit.title.clone(),
        elements: Vec::new(),
        models: circuit.models.clone(),
        subckts: circuit.subckts.clone(),
    };
    for el in &circuit.elements {
        let Device::Instance { subckt } = &el.device else {
            out.elements.push(el.clone());
            continue;
        };
        let def = circuit
            .subckts
            .get(subckt)
            .ok_or_else(|| NetlistError::Unresolved(vec![format!(
                "instance \"{}\" references undefined subcircuit \"{}\"",
                el.name, subckt
            )]))?;
        if def.ports.len() != el.nodes.len() {
            return Err(NetlistError::PortArity {
                instance: el.name.clone(),
                subckt: subckt.clone(),
                expected: def.ports.len(),
                got: el.nodes.len(),
            });
        }
        for model in &def.models {
            if let Some(prev) = out.models.get(&model.name) {
                if prev != model {
                    return Err(NetlistError::ModelCollision(model.name.clone()));
                }
            } else {
                out.models.insert(model.name.clone(), model.clone());
            }
        }
        // Instances created by a previous expansion pass are already
        // prefixed "x.<path>"; reuse the bare path so names do not pile
        // up kind letters across nesting levels.
        let inst_path = el.name.strip_prefix("x.").unwrap_or(&el.name).to_string();
        let map_node = |node: &str| -> String {
            if node == GROUND {
                return GROUND.to_string();
            }
            match def.ports.iter().position(|p| p == node) {
                Some(i) => el.nodes[i].clone(),
                None => format!("{inst_path}.{node}"),
            }
        };
        for inner in &def.elements {
            let kind_letter = inner.name.chars().next().unwrap_or('x');
            out.elements.push(Element {
                name: format!("{kind_letter}.{inst_path}.{inner_name}", inner_name = inner.name),
                nodes: inner.nodes.iter().map(|n| map_node(n)).collect(),
                device: inner.device.clone(),
            });
        }
    }
    Ok(out)
}
