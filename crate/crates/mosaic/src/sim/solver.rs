//! MNA assembly and the Newton-Raphson operating-point solver.

use std::collections::BTreeMap;

use crate::netlist::{Circuit, Device, DeviceModel, GROUND};

use super::device::{linearize, DeviceState};
use super::linalg::{lu_solve, Dense};
use super::{SimError, DAMP_V, GMIN, ITOL, MAX_NEWTON_ITERS, VTOL};

/// A solved DC operating point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpSolution {
    /// Node voltages, ground included.
    pub node_voltages: BTreeMap<String, f64>,
    /// Branch currents by source name. For voltage sources this is the
    /// MNA branch unknown (positive into the + terminal); for current
    /// sources it is the source value.
    pub branch_currents: BTreeMap<String, f64>,
    pub devices: Vec<DeviceState>,
    pub converged: bool,
    pub iterations: usize,
}

impl OpSolution {
    pub fn voltage(&self, node: &str) -> Option<f64> {
        self.node_voltages
            .get(&crate::netlist::normalize_node(node))
            .copied()
    }

    pub fn device(&self, name: &str) -> Option<&DeviceState> {
        let n = name.to_ascii_lowercase();
        self.devices.iter().find(|d| d.element_name == n)
    }
}

/// One DC sweep: operating points at strictly increasing input values.
/// Points that failed to converge keep their last Newton iterate and are
/// flagged `converged: false`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepResult {
    pub swept_source: String,
    pub points: Vec<(f64, OpSolution)>,
}

pub(crate) struct MosRef {
    pub name: String,
    pub model: DeviceModel,
    pub w: f64,
    pub l: f64,
    pub d: Option<usize>,
    pub g: Option<usize>,
    pub s: Option<usize>,
}

pub(crate) struct CapRef {
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub farads: f64,
}

struct VsrcRef {
    name: String,
    a: Option<usize>,
    b: Option<usize>,
    spec_ix: usize, // element index for value lookup
}

struct IsrcRef {
    name: String,
    a: Option<usize>,
    b: Option<usize>,
    spec_ix: usize,
}

struct ResRef {
    a: Option<usize>,
    b: Option<usize>,
    g: f64,
}

pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// The reusable solve workspace for one flattened circuit.
pub(crate) struct Engine<'c> {
    circuit: &'c Circuit,
    pub node_names: Vec<String>,
    pub node_ix: BTreeMap<String, usize>,
    pub n: usize,
    pub nm: usize,
    resistors: Vec<ResRef>,
    pub caps: Vec<CapRef>,
    vsrcs: Vec<VsrcRef>,
    isrcs: Vec<IsrcRef>,
    mosfets: Vec<MosRef>,
    /// Nodes carrying the permanent conductance floor: those touched by a
    /// MOSFET drain or source terminal. Ideal square-law devices have zero
    /// output conductance in saturation (lambda = 0), so these nodes would
    /// otherwise go singular; purely linear nodes stay exact.
    gmin_nodes: Vec<usize>,
    /// Time at which waveform sources are evaluated; `None` = DC values.
    pub time: Option<f64>,
    /// Trapezoidal companion step and per-capacitor history (v, i).
    pub cap_h: Option<f64>,
    pub cap_hist: Vec<(f64, f64)>,
    src_scale: f64,
    extra_gmin: f64,
    /// When set, the stepping conductance pulls nodes toward this state
    /// instead of ground: implicit-Euler pseudo-transient continuation.
    anchor: Option<Vec<f64>>,
    override_dc: BTreeMap<String, f64>,
}

impl<'c> Engine<'c> {
    pub fn new(circuit: &'c Circuit) -> Result<Self, SimError> {
        if circuit.has_instances() {
            return Err(SimError::Unflattened);
        }
        circuit.resolve()?;

        // Structural floating-node scan: every non-ground node needs at
        // least two element terminal connections to be solvable.
        let mut touch: BTreeMap<&str, usize> = BTreeMap::new();
        for el in &circuit.elements {
            for node in &el.nodes {
                if node != GROUND {
                    *touch.entry(node.as_str()).or_insert(0) += 1;
                }
            }
        }
        let floating: Vec<String> = touch
            .iter()
            .filter(|(_, &c)| c < 2)
            .map(|(n, _)| n.to_string())
            .collect();
        if !floating.is_empty() {
            return Err(SimError::FloatingNode(floating));
        }

        let mut node_names: Vec<String> = touch.keys().map(|s| s.to_string()).collect();
        node_names.sort();
        let node_ix: BTreeMap<String, usize> = node_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let ix = |name: &str| -> Option<usize> {
            if name == GROUND {
                None
            } else {
                Some(node_ix[name])
            }
        };

        let mut resistors = Vec::new();
        let mut caps = Vec::new();
        let mut vsrcs = Vec::new();
        let mut isrcs = Vec::new();
        let mut mosfets = Vec::new();
        for (spec_ix, el) in circuit.elements.iter().enumerate() {
            match &el.device {
                Device::Resistor { ohms } => resistors.push(ResRef {
                    a: ix(&el.nodes[0]),
                    b: ix(&el.nodes[1]),
                    g: 1.0 / ohms,
                }),
                Device::Capacitor { farads } => caps.push(CapRef {
                    a: ix(&el.nodes[0]),
                    b: ix(&el.nodes[1]),
                    farads: *farads,
                }),
                Device::VoltageSource(_) => vsrcs.push(VsrcRef {
                    name: el.name.clone(),
                    a: ix(&el.nodes[0]),
                    b: ix(&el.nodes[1]),
                    spec_ix,
                }),
                Device::CurrentSource(_) => isrcs.push(IsrcRef {
                    name: el.name.clone(),
                    a: ix(&el.nodes[0]),
                    b: ix(&el.nodes[1]),
                    spec_ix,
                }),
                Device::Mosfet {
                    model,
                    width_m,
                    length_m,
                } => mosfets.push(MosRef {
                    name: el.name.clone(),
                    model: circuit.models[model].clone(),
                    w: *width_m,
                    l: *length_m,
                    d: ix(&el.nodes[0]),
                    g: ix(&el.nodes[1]),
                    s: ix(&el.nodes[2]),
                }),
                Device::Instance { .. } => unreachable!("checked above"),
            }
        }

        let mut gmin_flags = vec![false; node_names.len()];
        for m in &mosfets {
            if let Some(d) = m.d {
                gmin_flags[d] = true;
            }
            if let Some(s) = m.s {
                gmin_flags[s] = true;
            }
        }
        let gmin_nodes: Vec<usize> = (0..node_names.len()).filter(|&i| gmin_flags[i]).collect();

        let n = node_names.len();
        let nm = n + vsrcs.len();
        let cap_count = caps.len();
        Ok(Engine {
            circuit,
            node_names,
            node_ix,
            n,
            nm,
            resistors,
            caps,
            vsrcs,
            isrcs,
            mosfets,
            gmin_nodes,
            time: None,
            cap_h: None,
            cap_hist: vec![(0.0, 0.0); cap_count],
            src_scale: 1.0,
            extra_gmin: 0.0,
            anchor: None,
            override_dc: BTreeMap::new(),
        })
    }

    pub fn set_override(&mut self, source: &str, value: f64) {
        self.override_dc.insert(source.to_ascii_lowercase(), value);
    }

    fn source_value(&self, name: &str, spec_ix: usize) -> f64 {
        let base = match self.override_dc.get(name) {
            Some(v) => *v,
            None => match &self.circuit.elements[spec_ix].device {
                Device::VoltageSource(s) | Device::CurrentSource(s) => s.value_at(self.time),
                _ => unreachable!(),
            },
        };
        base * self.src_scale
    }

    pub(crate) fn v_at(x: &[f64], ix: Option<usize>) -> f64 {
        ix.map_or(0.0, |i| x[i])
    }

    /// Complex small-signal system at the operating point `x_op`:
    /// MOSFETs become their (gm, gds) linearizations, capacitors jωC
    /// admittances, and the excitation map assigns AC magnitudes to
    /// sources (everything else is quiet).
    pub(crate) fn assemble_ac(
        &self,
        x_op: &[f64],
        omega: f64,
        excitation: &BTreeMap<String, num_complex::Complex64>,
    ) -> (Dense<num_complex::Complex64>, Vec<num_complex::Complex64>) {
        use num_complex::Complex64 as C;
        let zero = C::new(0.0, 0.0);
        let mut a = Dense::zeros(self.nm);
        let mut rhs = vec![zero; self.nm];
        for &i in &self.gmin_nodes {
            a.add(i, i, C::new(GMIN, 0.0));
        }
        let stamp_y = |a: &mut Dense<C>, p: Option<usize>, q: Option<usize>, y: C| {
            if let Some(i) = p {
                a.add(i, i, y);
                if let Some(j) = q {
                    a.add(i, j, -y);
                }
            }
            if let Some(j) = q {
                a.add(j, j, y);
                if let Some(i) = p {
                    a.add(j, i, -y);
                }
            }
        };
        for r in &self.resistors {
            stamp_y(&mut a, r.a, r.b, C::new(r.g, 0.0));
        }
        for c in &self.caps {
            stamp_y(&mut a, c.a, c.b, C::new(0.0, omega * c.farads));
        }
        for (k, v) in self.vsrcs.iter().enumerate() {
            let row = self.n + k;
            if let Some(i) = v.a {
                a.add(row, i, C::new(1.0, 0.0));
                a.add(i, row, C::new(1.0, 0.0));
            }
            if let Some(j) = v.b {
                a.add(row, j, C::new(-1.0, 0.0));
                a.add(j, row, C::new(-1.0, 0.0));
            }
            rhs[row] = excitation.get(&v.name).copied().unwrap_or(zero);
        }
        for s in &self.isrcs {
            let j0 = excitation.get(&s.name).copied().unwrap_or(zero);
            if let Some(i) = s.a {
                rhs[i] -= j0;
            }
            if let Some(j) = s.b {
                rhs[j] += j0;
            }
        }
        for m in &self.mosfets {
            let vd = Self::v_at(x_op, m.d);
            let vg = Self::v_at(x_op, m.g);
            let vs = Self::v_at(x_op, m.s);
            let lin = linearize(&m.model, m.w, m.l, vg - vs, vd - vs);
            let gm = C::new(lin.gm, 0.0);
            let gds = C::new(lin.gds, 0.0);
            if let Some(d) = m.d {
                a.add(d, d, gds);
                if let Some(g) = m.g {
                    a.add(d, g, gm);
                }
                if let Some(s) = m.s {
                    a.add(d, s, -(gm + gds));
                }
            }
            if let Some(s) = m.s {
                a.add(s, s, gm + gds);
                if let Some(d) = m.d {
                    a.add(s, d, -gds);
                }
                if let Some(g) = m.g {
                    a.add(s, g, -gm);
                }
            }
        }
        (a, rhs)
    }

    fn assemble(&self, x: &[f64]) -> (Dense<f64>, Vec<f64>) {
        let mut a = Dense::zeros(self.nm);
        let mut rhs = vec![0.0; self.nm];
        for &i in &self.gmin_nodes {
            a.add(i, i, GMIN);
        }
        // The homotopy's extra conductance loads every node, pulling
        // toward ground (gmin stepping) or toward an anchor state
        // (pseudo-transient); it anneals back to zero by the last step.
        if self.extra_gmin > 0.0 {
            for i in 0..self.n {
                a.add(i, i, self.extra_gmin);
            }
            if let Some(anchor) = &self.anchor {
                for i in 0..self.n {
                    rhs[i] += self.extra_gmin * anchor[i];
                }
            }
        }
        let stamp_g = |a: &mut Dense<f64>, p: Option<usize>, q: Option<usize>, g: f64| {
            if let Some(i) = p {
                a.add(i, i, g);
                if let Some(j) = q {
                    a.add(i, j, -g);
                }
            }
            if let Some(j) = q {
                a.add(j, j, g);
                if let Some(i) = p {
                    a.add(j, i, -g);
                }
            }
        };
        for r in &self.resistors {
            stamp_g(&mut a, r.a, r.b, r.g);
        }
        if let Some(h) = self.cap_h {
            for (c, &(v_prev, i_prev)) in self.caps.iter().zip(&self.cap_hist) {
                let geq = 2.0 * c.farads / h;
                stamp_g(&mut a, c.a, c.b, geq);
                let ieq = geq * v_prev + i_prev;
                if let Some(i) = c.a {
                    rhs[i] += ieq;
                }
                if let Some(j) = c.b {
                    rhs[j] -= ieq;
                }
            }
        }
        for (k, v) in self.vsrcs.iter().enumerate() {
            let row = self.n + k;
            if let Some(i) = v.a {
                a.add(row, i, 1.0);
                a.add(i, row, 1.0);
            }
            if let Some(j) = v.b {
                a.add(row, j, -1.0);
                a.add(j, row, -1.0);
            }
            rhs[row] = self.source_value(&v.name, v.spec_ix);
        }
        for s in &self.isrcs {
            let j0 = self.source_value(&s.name, s.spec_ix);
            if let Some(i) = s.a {
                rhs[i] -= j0;
            }
            if let Some(j) = s.b {
                rhs[j] += j0;
            }
        }
        for m in &self.mosfets {
            let vd = Self::v_at(x, m.d);
            let vg = Self::v_at(x, m.g);
            let vs = Self::v_at(x, m.s);
            let lin = linearize(&m.model, m.w, m.l, vg - vs, vd - vs);
            let ieq = lin.i_drain - lin.gm * (vg - vs) - lin.gds * (vd - vs);
            if let Some(d) = m.d {
                a.add(d, d, lin.gds);
                if let Some(g) = m.g {
                    a.add(d, g, lin.gm);
                }
                if let Some(s) = m.s {
                    a.add(d, s, -(lin.gm + lin.gds));
                }
                rhs[d] -= ieq;
            }
            if let Some(s) = m.s {
                a.add(s, s, lin.gm + lin.gds);
                if let Some(d) = m.d {
                    a.add(s, d, -lin.gds);
                }
                if let Some(g) = m.g {
                    a.add(s, g, -lin.gm);
                }
                rhs[s] += ieq;
            }
        }
        (a, rhs)
    }

    /// True KCL residual at `x`: the largest net current into any node,
    /// with devices evaluated nonlinearly.
    fn kcl_residual(&self, x: &[f64]) -> f64 {
        let r = self.kcl_residual_vector(x);
        r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn kcl_residual_vector(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for &i in &self.gmin_nodes {
            r[i] += GMIN * x[i];
        }
        if self.extra_gmin > 0.0 {
            match &self.anchor {
                Some(anchor) => {
                    for i in 0..self.n {
                        r[i] += self.extra_gmin * (x[i] - anchor[i]);
                    }
                }
                None => {
                    for i in 0..self.n {
                        r[i] += self.extra_gmin * x[i];
                    }
                }
            }
        }
        let flow = |r: &mut Vec<f64>, p: Option<usize>, q: Option<usize>, i: f64| {
            if let Some(ix) = p {
                r[ix] += i;
            }
            if let Some(ix) = q {
                r[ix] -= i;
            }
        };
        for res in &self.resistors {
            let i = (Self::v_at(x, res.a) - Self::v_at(x, res.b)) * res.g;
            flow(&mut r, res.a, res.b, i);
        }
        if let Some(h) = self.cap_h {
            for (c, &(v_prev, i_prev)) in self.caps.iter().zip(&self.cap_hist) {
                let geq = 2.0 * c.farads / h;
                let v = Self::v_at(x, c.a) - Self::v_at(x, c.b);
                let i = geq * (v - v_prev) - i_prev;
                flow(&mut r, c.a, c.b, i);
            }
        }
        for (k, v) in self.vsrcs.iter().enumerate() {
            flow(&mut r, v.a, v.b, x[self.n + k]);
        }
        for s in &self.isrcs {
            flow(&mut r, s.a, s.b, self.source_value(&s.name, s.spec_ix));
        }
        for m in &self.mosfets {
            let vd = Self::v_at(x, m.d);
            let vg = Self::v_at(x, m.g);
            let vs = Self::v_at(x, m.s);
            let lin = linearize(&m.model, m.w, m.l, vg - vs, vd - vs);
            flow(&mut r, m.d, m.s, lin.i_drain);
        }
        r
    }

    fn unknown_name(&self, col: usize) -> String {
        if col < self.n {
            self.node_names[col].clone()
        } else {
            self.vsrcs[col - self.n].name.clone()
        }
    }

    /// One Newton attempt. Linear circuits finish in a single iteration.
    /// Updates after the first iteration are clamped to ±0.5 V per node.
    pub fn newton(&self, x0: Option<&[f64]>) -> Result<NewtonOutcome, SimError> {
        let mut x = x0.map_or_else(|| vec![0.0; self.nm], |v| v.to_vec());
        if self.mosfets.is_empty() {
            let (a, rhs) = self.assemble(&x);
            let xn = lu_solve(&a, &rhs)
                .map_err(|col| SimError::Singular(self.unknown_name(col)))?;
            let residual = self.kcl_residual(&xn);
            return Ok(NewtonOutcome {
                x: xn,
                iterations: 1,
                converged: residual < ITOL,
                residual,
            });
        }
        let mut residual = f64::INFINITY;
        for iter in 1..=MAX_NEWTON_ITERS {
            let (a, rhs) = self.assemble(&x);
            let xn = lu_solve(&a, &rhs)
                .map_err(|col| SimError::Singular(self.unknown_name(col)))?;
            let mut delta = 0.0f64;
            for i in 0..self.nm {
                let mut step = xn[i] - x[i];
                if i < self.n {
                    if iter > 1 {
                        step = step.clamp(-DAMP_V, DAMP_V);
                    }
                    delta = delta.max(step.abs());
                }
                x[i] += step;
            }
            residual = self.kcl_residual(&x);
            if std::env::var_os("MOSAIC_DEBUG_NEWTON").is_some() {
                let r = self.kcl_residual_vector(&x);
                let (worst, val) = r
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .map(|(i, v)| (self.node_names[i].clone(), *v))
                    .unwrap_or_default();
                eprintln!(
                    "  iter {iter}: delta={delta:.3e} residual={residual:.3e} worst={worst} ({val:.3e})"
                );
            }
            if delta < VTOL && residual < ITOL {
                return Ok(NewtonOutcome {
                    x,
                    iterations: iter,
                    converged: true,
                    residual,
                });
            }
            if !residual.is_finite() {
                break;
            }
        }
        Ok(NewtonOutcome {
            x,
            iterations: MAX_NEWTON_ITERS,
            converged: false,
            residual,
        })
    }

    /// Newton with the homotopy schedule: plain, then gmin stepping
    /// (1e-3 → 1e-12 by decades, annealed away at the end), then source
    /// stepping (10% ramps). The stepping chains start from the caller's
    /// warm state when one is given, which is what carries a quasi-static
    /// sweep through fold points.
    pub fn solve_homotopy(&mut self, x0: Option<&[f64]>) -> Result<NewtonOutcome, SimError> {
        let plain = self.newton(x0)?;
        if plain.converged {
            return Ok(plain);
        }

        // Pseudo-transient continuation: when a warm start exists (a sweep
        // crossing a fold, typically), march implicit-Euler steps of the
        // node dynamics with the load anchored at the previous state, so
        // the iterate follows the physically reachable branch.
        if let Some(start) = x0 {
            let mut anchor = start.to_vec();
            let mut ok = true;
            'levels: for exp in 3..=12 {
                let g = 10f64.powi(-exp);
                // march until stationary at this load before annealing;
                // folds slow the flow down, so one step is rarely enough
                for _ in 0..8 {
                    self.extra_gmin = g;
                    self.anchor = Some(anchor.clone());
                    let out = self.newton(Some(&anchor));
                    self.anchor = None;
                    self.extra_gmin = 0.0;
                    match out {
                        Ok(o) if o.converged => {
                            let moved = o
                                .x
                                .iter()
                                .zip(&anchor)
                                .take(self.n)
                                .map(|(a, b)| (a - b).abs())
                                .fold(0.0f64, f64::max);
                            anchor = o.x;
                            if moved < VTOL {
                                continue 'levels;
                            }
                        }
                        _ => {
                            ok = false;
                            break 'levels;
                        }
                    }
                }
            }
            if ok {
                let finish = self.newton(Some(&anchor))?;
                if finish.converged {
                    return Ok(finish);
                }
            }
        }

        let mut warm: Option<Vec<f64>> = x0.map(|v| v.to_vec());
        let mut ok = true;
        for exp in 3..=12 {
            self.extra_gmin = 10f64.powi(-exp);
            let out = self.newton(warm.as_deref());
            self.extra_gmin = 0.0;
            match out {
                Ok(o) if o.converged => warm = Some(o.x),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            // Anneal the stepping conductance away entirely.
            let finish = self.newton(warm.as_deref())?;
            if finish.converged {
                return Ok(finish);
            }
        }

        let mut warm: Option<Vec<f64>> = x0.map(|v| v.to_vec());
        let mut ok = true;
        let mut last: Option<NewtonOutcome> = None;
        for ramp in 1..=10 {
            self.src_scale = ramp as f64 / 10.0;
            let out = self.newton(warm.as_deref());
            self.src_scale = 1.0;
            match out {
                Ok(o) if o.converged => {
                    warm = Some(o.x.clone());
                    last = Some(o);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            if let Some(o) = last {
                return Ok(o);
            }
        }

        // A stale warm start can trap Newton between solution branches
        // (quasi-static sweeps crossing a fold); a cold start is a
        // different, deterministic path.
        if x0.is_some() {
            let cold = self.newton(None)?;
            if cold.converged {
                return Ok(cold);
            }
            let mut warm: Option<Vec<f64>> = None;
            let mut ok = true;
            for exp in 3..=12 {
                self.extra_gmin = 10f64.powi(-exp);
                let out = self.newton(warm.as_deref());
                self.extra_gmin = 0.0;
                match out {
                    Ok(o) if o.converged => warm = Some(o.x),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let finish = self.newton(warm.as_deref())?;
                if finish.converged {
                    return Ok(finish);
                }
            }
        }
        Ok(plain)
    }

    /// Package a solution vector as an [`OpSolution`].
    pub fn op_solution(&self, out: &NewtonOutcome) -> OpSolution {
        let x = &out.x;
        let mut node_voltages = BTreeMap::new();
        node_voltages.insert(GROUND.to_string(), 0.0);
        for (name, &i) in &self.node_ix {
            node_voltages.insert(name.clone(), x[i]);
        }
        let mut branch_currents = BTreeMap::new();
        for (k, v) in self.vsrcs.iter().enumerate() {
            branch_currents.insert(v.name.clone(), x[self.n + k]);
        }
        for s in &self.isrcs {
            branch_currents.insert(s.name.clone(), self.source_value(&s.name, s.spec_ix));
        }
        let devices = self
            .mosfets
            .iter()
            .map(|m| {
                let vd = Self::v_at(x, m.d);
                let vg = Self::v_at(x, m.g);
                let vs = Self::v_at(x, m.s);
                let mut st = super::device::device_current(&m.model, m.w, m.l, vg - vs, vd - vs);
                st.element_name = m.name.clone();
                st
            })
            .collect();
        OpSolution {
            node_voltages,
            branch_currents,
            devices,
            converged: out.converged,
            iterations: out.iterations,
        }
    }
}

/// Solve the DC operating point of a flattened circuit.
///
/// Converged means the largest node-voltage update fell below 1e-6 V and
/// the largest KCL residual below 1e-9 A. Non-convergence after the
/// homotopy schedule is an error whose text carries the last residual.
pub fn solve_op(circuit: &Circuit) -> Result<OpSolution, SimError> {
    let mut eng = Engine::new(circuit)?;
    let out = eng.solve_homotopy(None)?;
    if !out.converged {
        return Err(SimError::NoConvergence {
            residual: out.residual,
        });
    }
    Ok(eng.op_solution(&out))
}

/// Sweep a voltage source across `[start, stop]` in `step` increments,
/// warm-starting each point from the previous solution.
pub fn dc_sweep(
    circuit: &Circuit,
    source: &str,
    start: f64,
    stop: f64,
    step: f64,
) -> Result<SweepResult, SimError> {
    if step <= 0.0 {
        return Err(SimError::BadRequest(format!(
            "sweep step must be positive, got {step}"
        )));
    }
    if start >= stop {
        return Err(SimError::BadRequest(format!(
            "sweep start ({start}) must be below stop ({stop})"
        )));
    }
    let name = source.to_ascii_lowercase();
    let is_vsrc = circuit
        .element(&name)
        .map(|el| matches!(el.device, Device::VoltageSource(_)))
        .unwrap_or(false);
    if !is_vsrc {
        return Err(SimError::UnknownSource(source.to_string()));
    }
    let mut values = Vec::new();
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    for k in 0..=count {
        values.push(start + k as f64 * step);
    }
    let points = quasi_static_sweep(circuit, &name, &values)?;
    Ok(SweepResult {
        swept_source: name,
        points,
    })
}

/// Solve a sequence of operating points for arbitrary source values,
/// carrying the solution forward as the next warm start. Non-converged
/// points are flagged, not fatal; structural errors abort.
pub fn quasi_static_sweep(
    circuit: &Circuit,
    source: &str,
    values: &[f64],
) -> Result<Vec<(f64, OpSolution)>, SimError> {
    let mut eng = Engine::new(circuit)?;
    let name = source.to_ascii_lowercase();
    let mut warm: Option<Vec<f64>> = None;
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        eng.set_override(&name, v);
        let out = eng.solve_homotopy(warm.as_deref())?;
        if out.converged {
            warm = Some(out.x.clone());
        }
        points.push((v, eng.op_solution(&out)));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;

    #[test]
    fn symmetric_divider_is_exact() {
        let c = parse_netlist("V1 in 0 5\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
        let op = solve_op(&c).unwrap();
        assert!(op.converged);
        assert_eq!(op.iterations, 1);
        assert!((op.voltage("mid").unwrap() - 2.5).abs() < 1e-9);
        assert!((op.voltage("in").unwrap() - 5.0).abs() < 1e-12);
        // branch current: 2k total, 2.5 mA into the + terminal means the
        // source delivers -2.5 mA by the SPICE sign convention
        assert!((op.branch_currents["v1"] + 2.5e-3).abs() < 1e-9);
    }

    #[test]
    fn floating_node_is_named() {
        let c = parse_netlist("V1 in 0 5\nR1 in mid 1k\nR2 in 0 1k\n").unwrap();
        let err = solve_op(&c).unwrap_err();
        match &err {
            SimError::FloatingNode(nodes) => assert_eq!(nodes, &["mid".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("floating node"));
    }

    #[test]
    fn divider_sweep_is_linear() {
        let c = parse_netlist("V1 in 0 0\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
        let sweep = dc_sweep(&c, "V1", 0.0, 5.0, 1.0).unwrap();
        let mids: Vec<f64> = sweep
            .points
            .iter()
            .map(|(_, op)| op.voltage("mid").unwrap())
            .collect();
        let expect = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        for (got, want) in mids.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn sweep_rejects_bad_grid() {
        let c = parse_netlist("V1 in 0 0\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
        assert!(matches!(
            dc_sweep(&c, "V1", 0.0, 5.0, 0.0),
            Err(SimError::BadRequest(_))
        ));
        assert!(matches!(
            dc_sweep(&c, "R1", 0.0, 5.0, 1.0),
            Err(SimError::UnknownSource(_))
        ));
    }

    #[test]
    fn nmos_inverter_output_monotone_non_increasing() {
        let c = parse_netlist(
            "\
.model nm nmos level=1 kp=100u vto=0.5
Vdd vdd 0 5
Vin vin 0 0
M1 vout vin 0 0 nm w=10u l=1u
RD vdd vout 10k
",
        )
        .unwrap();
        let sweep = dc_sweep(&c, "vin", 0.0, 5.0, 0.05).unwrap();
        let vouts: Vec<f64> = sweep
            .points
            .iter()
            .map(|(_, op)| op.voltage("vout").unwrap())
            .collect();
        assert!(sweep.points.iter().all(|(_, op)| op.converged));
        for w in vouts.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "non-monotone: {} -> {}", w[0], w[1]);
        }
        assert!(vouts[0] > 4.99);
        assert!(*vouts.last().unwrap() < 0.2);
    }

    #[test]
    fn two_stage_fixture_converges_with_all_devices_conducting_bias() {
        // current-source-loaded stage with matched saturation currents:
        // the solver has to walk the degenerate node to the region edge
        let c = parse_netlist(
            "\
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
.model pmos_model pmos level=1 kp=50e-6 vto=-0.5
Vdd Vdd 0 5.0
Vin Vin 0 1.0
Vbias Vbias 0 4.0
M1 Drain1 Vin 0 0 nmos_model w=50e-6 l=1e-6
M2 Drain1 Vbias Vdd Vdd pmos_model w=100e-6 l=1e-6
M3 Vout Drain1 0 0 nmos_model w=100e-6 l=1e-6
R1 Vout Vdd 1k
",
        )
        .unwrap();
        let op = solve_op(&c).unwrap();
        assert!(op.converged);
        let d1 = op.voltage("drain1").unwrap();
        assert!((d1 - 0.5).abs() < 1e-3, "drain1 = {d1}");
        let m1 = op.device("m1").unwrap();
        let m2 = op.device("m2").unwrap();
        assert!(m1.id > 1e-4, "m1 id = {}", m1.id);
        assert!(m2.id > 1e-4, "m2 id = {}", m2.id);
    }

    #[test]
    fn kcl_holds_at_convergence() {
        let c = parse_netlist(
            "\
.model nm nmos level=1 kp=100u vto=0.5
Vdd vdd 0 5
Vin vin 0 1.2
M1 vout vin 0 0 nm w=10u l=1u
RD vdd vout 10k
",
        )
        .unwrap();
        let op = solve_op(&c).unwrap();
        // net current at vout: through RD vs into M1
        let i_r = (op.voltage("vdd").unwrap() - op.voltage("vout").unwrap()) / 10e3;
        let i_m = op.device("m1").unwrap().id;
        assert!((i_r - i_m).abs() < 1e-9, "KCL residual {}", (i_r - i_m).abs());
    }
}
