//! Domain types for the multi-phase network graph and ingestion of feeder
//! description files.
//!
//! A feeder is a graph of buses connected by series elements. Series elements
//! are partitioned into transmission lines / transformers (modeled by a series
//! impedance matrix) and SVR edges (modeled by ideal gain matrices, see
//! [`crate::svrgain`]). Buses carry shunt admittances, constant-power loads,
//! and optionally a distributed-generation spec. Every quantity is stored in
//! per unit after ingestion; missing phases are handled by indexing all
//! vectors and matrices by the set of phases present at the bus or edge.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

use crate::svrgain::{SvrSpec, SvrType, SvrVariant};

/// One of the three phases `a`, `b`, `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Cyclic right shift over the full phase set: á = b, b́ = c, ć = a.
    pub fn right(self) -> Phase {
        match self {
            Phase::A => Phase::B,
            Phase::B => Phase::C,
            Phase::C => Phase::A,
        }
    }

    /// Cyclic left shift over the full phase set: à = c, b̀ = a, c̀ = b.
    pub fn left(self) -> Phase {
        match self {
            Phase::A => Phase::C,
            Phase::B => Phase::A,
            Phase::C => Phase::B,
        }
    }

    fn bit(self) -> u8 {
        match self {
            Phase::A => 1,
            Phase::B => 2,
            Phase::C => 4,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Non-empty subset of `{a, b, c}`, with right/left shift maps restricted to
/// the present phases (each is a bijection on the present set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseMask(u8);

impl PhaseMask {
    pub const ABC: PhaseMask = PhaseMask(7);

    pub fn new(phases: &[Phase]) -> Result<PhaseMask, NetError> {
        let mut bits = 0u8;
        for p in phases {
            bits |= p.bit();
        }
        if bits == 0 {
            return Err(NetError::Schema("phase mask must be non-empty".into()));
        }
        Ok(PhaseMask(bits))
    }

    /// Parses strings like `"abc"`, `"bc"`, `"a"`.
    pub fn parse(s: &str) -> Result<PhaseMask, NetError> {
        let mut bits = 0u8;
        for ch in s.chars() {
            bits |= match ch {
                'a' | 'A' => 1,
                'b' | 'B' => 2,
                'c' | 'C' => 4,
                _ => return Err(NetError::Schema(format!("invalid phase letter '{ch}'"))),
            };
        }
        if bits == 0 {
            return Err(NetError::Schema("phase mask must be non-empty".into()));
        }
        Ok(PhaseMask(bits))
    }

    pub fn contains(&self, p: Phase) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        false // a PhaseMask cannot be constructed empty
    }

    /// Present phases in `a, b, c` order.
    pub fn iter(&self) -> impl Iterator<Item = Phase> + '_ {
        Phase::ALL.into_iter().filter(|p| self.contains(*p))
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.iter().collect()
    }

    /// Local index of a present phase within this mask (phases in a,b,c order).
    pub fn index_of(&self, p: Phase) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        Some(self.iter().take_while(|q| *q != p).count())
    }

    pub fn intersect(&self, other: PhaseMask) -> Option<PhaseMask> {
        let bits = self.0 & other.0;
        if bits == 0 {
            None
        } else {
            Some(PhaseMask(bits))
        }
    }

    pub fn is_subset_of(&self, other: PhaseMask) -> bool {
        self.0 & other.0 == self.0
    }

    /// Right shift restricted to present phases: the next present phase in
    /// cyclic `a → b → c → a` order. A bijection on the present set.
    pub fn right_shift(&self, p: Phase) -> Phase {
        debug_assert!(self.contains(p));
        let mut q = p.right();
        while !self.contains(q) {
            q = q.right();
        }
        q
    }

    /// Left shift restricted to present phases (inverse of [`right_shift`](Self::right_shift)).
    pub fn left_shift(&self, p: Phase) -> Phase {
        debug_assert!(self.contains(p));
        let mut q = p.left();
        while !self.contains(q) {
            q = q.left();
        }
        q
    }
}

impl fmt::Display for PhaseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

/// Distributed-generation spec: apparent-power capacity and maximum power
/// factor of an inverter-based source.
#[derive(Debug, Clone, PartialEq)]
pub struct DgSpec {
    /// Per-phase apparent-power capacity in per unit.
    pub s_max: f64,
    /// Maximum power factor (capacitive or inductive), in `(0, 1]`.
    pub power_factor: f64,
}

/// A network bus: shunt elements plus constant-power load and optional DG.
#[derive(Debug, Clone)]
pub struct Bus {
    /// Dense internal index; bus 0 is the slack.
    pub id: usize,
    /// Identifier from the feeder file, kept for reporting.
    pub ext_id: u64,
    pub phases: PhaseMask,
    /// Shunt admittance matrix in per unit over the present phases.
    pub shunt_y: DMatrix<Complex64>,
    /// Constant-power load consumption in per unit over the present phases
    /// (positive = consumption).
    pub load_s: DVector<Complex64>,
    pub dg: Option<DgSpec>,
}

/// A transmission line or transformer edge modeled by its series impedance.
#[derive(Debug, Clone)]
pub struct LineEdge {
    /// Upstream bus (nearer the slack after orientation normalization).
    pub from: usize,
    pub to: usize,
    pub phases: PhaseMask,
    /// Series impedance in per unit over `phases`.
    pub z: DMatrix<Complex64>,
}

/// An SVR edge: `from` is the primary, `to` the secondary.
#[derive(Debug, Clone)]
pub struct SvrEdge {
    pub from: usize,
    pub to: usize,
    /// Regulated phases: intersection of the endpoint masks (wye SVRs may be
    /// reduced-phase; delta SVRs require all three phases).
    pub phases: PhaseMask,
    pub spec: SvrSpec,
}

/// A validated multi-phase feeder, all quantities in per unit.
#[derive(Debug, Clone)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<LineEdge>,
    pub svrs: Vec<SvrEdge>,
    /// Fixed slack phasor over the slack bus phases.
    pub slack_voltage: DVector<Complex64>,
    pub v_min: f64,
    pub v_max: f64,
}

/// Reference to an edge of either kind, oriented upstream → downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRef {
    Line(usize),
    Svr(usize),
}

/// Breadth-first edge ordering rooted at the slack bus.
#[derive(Debug, Clone)]
pub struct RadialOrder {
    /// Tree edges in visit order; each edge's upstream endpoint is visited
    /// before its downstream endpoint.
    pub edges: Vec<(EdgeRef, usize, usize)>,
    /// True iff the graph is a tree (`|E| = |N| - 1`, no cycles).
    pub radial: bool,
    /// Parent edge of each non-slack bus (index into `edges`).
    pub parent: Vec<Option<usize>>,
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("phase mismatch: {0}")]
    PhaseMismatch(String),
    #[error("units error: {0}")]
    Units(String),
    #[error("cycle detected but strict radiality was requested")]
    Cycle,
    #[error("network is not connected: bus {0} unreachable from slack")]
    Disconnected(u64),
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_edges(&self) -> usize {
        self.lines.len() + self.svrs.len()
    }

    /// Per-bus net constant-power injections when every bus consumes exactly
    /// its specified load (the default, DG-free operating set).
    pub fn load_injections(&self) -> Vec<DVector<Complex64>> {
        self.buses.iter().map(|b| -&b.load_s).collect()
    }

    pub fn edge_endpoints(&self, e: EdgeRef) -> (usize, usize) {
        match e {
            EdgeRef::Line(i) => (self.lines[i].from, self.lines[i].to),
            EdgeRef::Svr(i) => (self.svrs[i].from, self.svrs[i].to),
        }
    }

    pub fn edge_phases(&self, e: EdgeRef) -> PhaseMask {
        match e {
            EdgeRef::Line(i) => self.lines[i].phases,
            EdgeRef::Svr(i) => self.svrs[i].phases,
        }
    }
}

/// Breadth-first edge ordering from the slack bus.
///
/// Every returned edge has its upstream endpoint visited first. When `strict`
/// is set, a cycle (any non-tree edge) is an error; otherwise the extra edges
/// are appended at the end, oriented as stored, and `radial` is false.
pub fn radial_order(network: &Network, strict: bool) -> Result<RadialOrder, NetError> {
    let n = network.n_buses();
    let mut adj: Vec<Vec<(EdgeRef, usize)>> = vec![Vec::new(); n];
    for (i, l) in network.lines.iter().enumerate() {
        adj[l.from].push((EdgeRef::Line(i), l.to));
        adj[l.to].push((EdgeRef::Line(i), l.from));
    }
    for (i, s) in network.svrs.iter().enumerate() {
        adj[s.from].push((EdgeRef::Svr(i), s.to));
        adj[s.to].push((EdgeRef::Svr(i), s.from));
    }

    let mut visited = vec![false; n];
    let mut edge_used = vec![false; network.n_edges()];
    let edge_slot = |e: EdgeRef| match e {
        EdgeRef::Line(i) => i,
        EdgeRef::Svr(i) => network.lines.len() + i,
    };

    let mut order = Vec::with_capacity(n.saturating_sub(1));
    let mut parent = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    visited[0] = true;
    queue.push_back(0usize);
    while let Some(u) = queue.pop_front() {
        for &(e, v) in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                edge_used[edge_slot(e)] = true;
                parent[v] = Some(order.len());
                order.push((e, u, v));
                queue.push_back(v);
            }
        }
    }

    if let Some(b) = (0..n).find(|&b| !visited[b]) {
        return Err(NetError::Disconnected(network.buses[b].ext_id));
    }

    let radial = order.len() == network.n_edges();
    if !radial {
        if strict {
            return Err(NetError::Cycle);
        }
        for (i, l) in network.lines.iter().enumerate() {
            if !edge_used[i] {
                order.push((EdgeRef::Line(i), l.from, l.to));
            }
        }
        for (i, s) in network.svrs.iter().enumerate() {
            if !edge_used[network.lines.len() + i] {
                order.push((EdgeRef::Svr(i), s.from, s.to));
            }
        }
    }

    Ok(RadialOrder {
        edges: order,
        radial,
        parent,
    })
}

// ---------------------------------------------------------------------------
// Feeder file schema
// ---------------------------------------------------------------------------

/// Complex scalar as `[re, im]`.
type C2 = [f64; 2];

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum LoadUnits {
    /// Loads already in per unit.
    #[default]
    Pu,
    /// Loads in kW + j·kvar; divided by `base.s_base_kva`.
    Kva,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ZUnits {
    #[default]
    Pu,
    Ohm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseSpec {
    pub s_base_kva: f64,
    /// Line-to-line kV base per voltage region.
    #[serde(default)]
    pub v_base_kv: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusFileSpec {
    pub id: u64,
    pub phases: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    /// Row-major shunt admittance over the declared phases, per unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shunt_y: Option<Vec<Vec<C2>>>,
    /// Constant-power load per phase (units per `load_units`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_s: Option<Vec<C2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dg: Option<DgFileSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgFileSpec {
    pub smax: f64,
    pub pf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineFileSpec {
    pub from: u64,
    pub to: u64,
    /// Row-major impedance matrix over the intersection of endpoint phases.
    pub z: Vec<Vec<C2>>,
    #[serde(default)]
    pub units: ZUnits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvrFileSpec {
    pub from: u64,
    pub to: u64,
    #[serde(rename = "type")]
    pub svr_type: String,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub gang: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<Vec<f64>>,
}

fn default_variant() -> String {
    "B".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlackFileSpec {
    pub bus: u64,
    /// Phasors over the slack bus phases, per unit.
    pub voltage: Vec<C2>,
}

/// On-disk feeder document. One document per feeder, JSON encoded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseSpec>,
    #[serde(default)]
    pub load_units: LoadUnits,
    pub buses: Vec<BusFileSpec>,
    #[serde(default)]
    pub lines: Vec<LineFileSpec>,
    #[serde(default)]
    pub svrs: Vec<SvrFileSpec>,
    pub slack: SlackFileSpec,
    pub v_min: f64,
    pub v_max: f64,
}

fn c(x: C2) -> Complex64 {
    Complex64::new(x[0], x[1])
}

fn matrix_from_rows(rows: &[Vec<C2>], dim: usize, what: &str) -> Result<DMatrix<Complex64>, NetError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(NetError::Schema(format!(
            "{what}: expected a {dim}x{dim} matrix, got {} rows",
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let v = c(*e);
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(NetError::Schema(format!("{what}: non-finite entry")));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Parses and validates a feeder document, converting every quantity to per
/// unit. Buses are renumbered so that the slack bus gets index 0; the original
/// ids are retained in [`Bus::ext_id`]. Line edges are reoriented so the
/// upstream endpoint comes first; SVR primaries must already be upstream.
pub fn parse_feeder(text: &str) -> Result<Network, NetError> {
    let file: FeederFile =
        serde_json::from_str(text).map_err(|e| NetError::Schema(e.to_string()))?;
    parse_feeder_file(&file)
}

pub fn parse_feeder_file(file: &FeederFile) -> Result<Network, NetError> {
    if !(file.v_min > 0.0 && file.v_min <= file.v_max) {
        return Err(NetError::Schema("require 0 < v_min <= v_max".into()));
    }

    // Map external ids to dense indices with the slack first.
    let mut ext_ids: Vec<u64> = Vec::with_capacity(file.buses.len());
    ext_ids.push(file.slack.bus);
    for b in &file.buses {
        if b.id != file.slack.bus {
            ext_ids.push(b.id);
        }
    }
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (i, id) in ext_ids.iter().enumerate() {
        if index.insert(*id, i).is_some() {
            return Err(NetError::Schema(format!("duplicate bus id {id}")));
        }
    }
    if !index.contains_key(&file.slack.bus) || !file.buses.iter().any(|b| b.id == file.slack.bus) {
        return Err(NetError::Schema(format!(
            "slack bus {} not declared",
            file.slack.bus
        )));
    }

    let s_base = file.base.as_ref().map(|b| b.s_base_kva);

    let mut buses: Vec<Option<Bus>> = vec![None; ext_ids.len()];
    let mut regions: Vec<Option<String>> = vec![None; ext_ids.len()];
    for b in &file.buses {
        let id = index[&b.id];
        let phases = PhaseMask::parse(&b.phases)?;
        let p = phases.len();

        let shunt_y = match &b.shunt_y {
            Some(rows) => matrix_from_rows(rows, p, &format!("bus {} shunt_y", b.id))?,
            None => DMatrix::zeros(p, p),
        };

        let mut load_s = DVector::zeros(p);
        if let Some(ls) = &b.load_s {
            if ls.len() != p {
                return Err(NetError::Schema(format!(
                    "bus {}: load_s has {} entries for {p} phases",
                    b.id,
                    ls.len()
                )));
            }
            for (k, e) in ls.iter().enumerate() {
                let v = c(*e);
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(NetError::Schema(format!("bus {}: non-finite load", b.id)));
                }
                load_s[k] = v;
            }
            if file.load_units == LoadUnits::Kva {
                let s = s_base.ok_or_else(|| {
                    NetError::Units("load_units is kva but no base block given".into())
                })?;
                load_s /= Complex64::new(s, 0.0);
            }
        }

        let dg = match &b.dg {
            Some(d) => {
                if d.smax < 0.0 || !(d.pf > 0.0 && d.pf <= 1.0) {
                    return Err(NetError::Schema(format!(
                        "bus {}: dg requires smax >= 0 and pf in (0, 1]",
                        b.id
                    )));
                }
                Some(DgSpec {
                    s_max: d.smax,
                    power_factor: d.pf,
                })
            }
            None => None,
        };

        regions[id] = b.region.clone();
        buses[id] = Some(Bus {
            id,
            ext_id: b.id,
            phases,
            shunt_y,
            load_s,
            dg,
        });
    }
    let buses: Vec<Bus> = buses
        .into_iter()
        .map(|b| b.expect("every index is populated"))
        .collect();

    // Slack phasor over the slack bus phases.
    let slack_phases = buses[0].phases;
    if file.slack.voltage.len() != slack_phases.len() {
        return Err(NetError::Schema(format!(
            "slack voltage has {} phasors for {} phases",
            file.slack.voltage.len(),
            slack_phases.len()
        )));
    }
    let slack_voltage = DVector::from_iterator(
        slack_phases.len(),
        file.slack.voltage.iter().map(|e| c(*e)),
    );

    let lookup = |id: u64, what: &str| -> Result<usize, NetError> {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| NetError::Schema(format!("{what} references unknown bus {id}")))
    };

    let mut lines = Vec::with_capacity(file.lines.len());
    for l in &file.lines {
        let from = lookup(l.from, "line")?;
        let to = lookup(l.to, "line")?;
        if from == to {
            return Err(NetError::Schema(format!("line {}-{} is a self loop", l.from, l.to)));
        }
        let phases = buses[from]
            .phases
            .intersect(buses[to].phases)
            .ok_or_else(|| {
                NetError::PhaseMismatch(format!(
                    "line {}-{}: endpoints share no phase",
                    l.from, l.to
                ))
            })?;
        let mut z = matrix_from_rows(&l.z, phases.len(), &format!("line {}-{} z", l.from, l.to))?;
        if l.units == ZUnits::Ohm {
            let base = file
                .base
                .as_ref()
                .ok_or_else(|| NetError::Units("ohmic line but no base block given".into()))?;
            let region = regions[to]
                .as_ref()
                .or(regions[from].as_ref())
                .ok_or_else(|| {
                    NetError::Units(format!(
                        "line {}-{} in ohms but endpoint buses declare no region",
                        l.from, l.to
                    ))
                })?;
            let kv = base.v_base_kv.get(region).ok_or_else(|| {
                NetError::Units(format!("no voltage base for region '{region}'"))
            })?;
            // Z_base = V_LN^2 / S_base with the full power base applied per phase.
            let z_base = kv * kv * 1000.0 / (3.0 * base.s_base_kva);
            z /= Complex64::new(z_base, 0.0);
        }
        lines.push(LineEdge {
            from,
            to,
            phases,
            z,
        });
    }

    let mut svrs = Vec::with_capacity(file.svrs.len());
    for s in &file.svrs {
        let from = lookup(s.from, "svr")?;
        let to = lookup(s.to, "svr")?;
        let svr_type = match s.svr_type.as_str() {
            "wye" => SvrType::Wye,
            "closed_delta" => SvrType::ClosedDelta,
            "open_delta" => SvrType::OpenDelta,
            other => {
                return Err(NetError::Schema(format!("unknown svr type '{other}'")));
            }
        };
        let variant = match s.variant.as_str() {
            "A" | "a" => SvrVariant::A,
            "B" | "b" => SvrVariant::B,
            other => return Err(NetError::Schema(format!("unknown svr variant '{other}'"))),
        };
        let phases = buses[from]
            .phases
            .intersect(buses[to].phases)
            .ok_or_else(|| {
                NetError::PhaseMismatch(format!(
                    "svr {}-{}: endpoints share no phase",
                    s.from, s.to
                ))
            })?;
        if svr_type != SvrType::Wye && phases != PhaseMask::ABC {
            return Err(NetError::PhaseMismatch(format!(
                "svr {}-{}: {svr_type:?} requires all three phases, found {phases}",
                s.from, s.to
            )));
        }
        let spec = SvrSpec::new(
            svr_type,
            variant,
            s.gang,
            phases,
            s.r_min.clone(),
            s.r_max.clone(),
        )
        .map_err(|e| NetError::Schema(format!("svr {}-{}: {e}", s.from, s.to)))?;
        svrs.push(SvrEdge {
            from,
            to,
            phases,
            spec,
        });
    }

    let mut network = Network {
        buses,
        lines,
        svrs,
        slack_voltage,
        v_min: file.v_min,
        v_max: file.v_max,
    };
    normalize_orientation(&mut network)?;
    validate(&network)?;
    Ok(network)
}

/// Reorients line edges so the upstream endpoint (per BFS from the slack)
/// comes first. SVR edges keep their primary/secondary roles and must have
/// the primary upstream on the BFS tree.
fn normalize_orientation(network: &mut Network) -> Result<(), NetError> {
    let order = radial_order(network, false)?;
    for (e, up, _down) in &order.edges {
        match *e {
            EdgeRef::Line(i) => {
                if network.lines[i].from != *up {
                    let l = &mut network.lines[i];
                    std::mem::swap(&mut l.from, &mut l.to);
                    // Z over the shared phase set is orientation independent.
                }
            }
            EdgeRef::Svr(i) => {
                if network.svrs[i].from != *up {
                    return Err(NetError::Schema(format!(
                        "svr {}-{}: primary must be on the slack side",
                        network.buses[network.svrs[i].from].ext_id,
                        network.buses[network.svrs[i].to].ext_id
                    )));
                }
            }
        }
    }
    Ok(())
}

fn validate(network: &Network) -> Result<(), NetError> {
    for l in &network.lines {
        let down = &network.buses[l.to];
        if !down.phases.is_subset_of(l.phases) {
            return Err(NetError::PhaseMismatch(format!(
                "bus {} has phases {} but its supply line carries only {}",
                down.ext_id, down.phases, l.phases
            )));
        }
    }
    for s in &network.svrs {
        let down = &network.buses[s.to];
        if !down.phases.is_subset_of(s.phases) {
            return Err(NetError::PhaseMismatch(format!(
                "bus {} has phases {} but its supply svr regulates only {}",
                down.ext_id, down.phases, s.phases
            )));
        }
    }
    Ok(())
}

/// Serializes a network back to the feeder document form (all per unit).
/// Re-parsing the result reproduces the network field by field.
pub fn to_feeder_file(network: &Network) -> FeederFile {
    let bus_spec = |b: &Bus| {
        let p = b.phases.len();
        let shunt_nonzero = b.shunt_y.iter().any(|v| v.norm() > 0.0);
        BusFileSpec {
            id: b.ext_id,
            phases: b.phases.to_string(),
            region: None,
            shunt_y: shunt_nonzero.then(|| {
                (0..p)
                    .map(|i| (0..p).map(|j| [b.shunt_y[(i, j)].re, b.shunt_y[(i, j)].im]).collect())
                    .collect()
            }),
            load_s: b
                .load_s
                .iter()
                .any(|v| v.norm() > 0.0)
                .then(|| b.load_s.iter().map(|v| [v.re, v.im]).collect()),
            dg: b.dg.as_ref().map(|d| DgFileSpec {
                smax: d.s_max,
                pf: d.power_factor,
            }),
        }
    };
    FeederFile {
        base: None,
        load_units: LoadUnits::Pu,
        buses: network.buses.iter().map(bus_spec).collect(),
        lines: network
            .lines
            .iter()
            .map(|l| LineFileSpec {
                from: network.buses[l.from].ext_id,
                to: network.buses[l.to].ext_id,
                z: (0..l.phases.len())
                    .map(|i| {
                        (0..l.phases.len())
                            .map(|j| [l.z[(i, j)].re, l.z[(i, j)].im])
                            .collect()
                    })
                    .collect(),
                units: ZUnits::Pu,
            })
            .collect(),
        svrs: network
            .svrs
            .iter()
            .map(|s| SvrFileSpec {
                from: network.buses[s.from].ext_id,
                to: network.buses[s.to].ext_id,
                svr_type: match s.spec.svr_type {
                    SvrType::Wye => "wye".into(),
                    SvrType::ClosedDelta => "closed_delta".into(),
                    SvrType::OpenDelta => "open_delta".into(),
                },
                variant: match s.spec.variant {
                    SvrVariant::A => "A".into(),
                    SvrVariant::B => "B".into(),
                },
                gang: s.spec.gang,
                r_min: Some(s.spec.r_min.clone()),
                r_max: Some(s.spec.r_max.clone()),
            })
            .collect(),
        slack: SlackFileSpec {
            bus: network.buses[0].ext_id,
            voltage: network.slack_voltage.iter().map(|v| [v.re, v.im]).collect(),
        },
        v_min: network.v_min,
        v_max: network.v_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_json() -> String {
        r#"{
            "buses": [
                {"id": 0, "phases": "abc"},
                {"id": 1, "phases": "abc", "load_s": [[0.1, 0.05], [0.1, 0.05], [0.1, 0.05]]}
            ],
            "lines": [
                {"from": 0, "to": 1, "z": [
                    [[0.01, 0.03], [0.0, 0.01], [0.0, 0.01]],
                    [[0.0, 0.01], [0.01, 0.03], [0.0, 0.01]],
                    [[0.0, 0.01], [0.0, 0.01], [0.01, 0.03]]
                ]}
            ],
            "slack": {"bus": 0, "voltage": [[1.0, 0.0], [-0.5, -0.8660254037844386], [-0.5, 0.8660254037844386]]},
            "v_min": 0.9, "v_max": 1.1
        }"#
        .to_string()
    }

    #[test]
    fn shift_maps_are_bijections() {
        for bits in 1u8..8 {
            let mask = PhaseMask(bits);
            let present = mask.phases();
            let rights: Vec<Phase> = present.iter().map(|&p| mask.right_shift(p)).collect();
            let mut sorted = rights.clone();
            sorted.sort();
            assert_eq!(sorted, present, "right shift must permute {mask}");
            for &p in &present {
                assert_eq!(mask.left_shift(mask.right_shift(p)), p);
            }
        }
    }

    #[test]
    fn parses_minimal_two_bus_feeder() {
        let net = parse_feeder(&two_bus_json()).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.lines.len(), 1);
        assert_eq!(net.svrs.len(), 0);
        assert_eq!(net.buses[1].load_s[0], Complex64::new(0.1, 0.05));
    }

    #[test]
    fn open_delta_on_two_phase_bus_is_rejected() {
        let json = r#"{
            "buses": [
                {"id": 0, "phases": "abc"},
                {"id": 1, "phases": "ac"}
            ],
            "svrs": [{"from": 0, "to": 1, "type": "open_delta"}],
            "slack": {"bus": 0, "voltage": [[1,0],[-0.5,-0.866],[-0.5,0.866]]},
            "v_min": 0.9, "v_max": 1.1
        }"#;
        match parse_feeder(json) {
            Err(NetError::PhaseMismatch(_)) => {}
            other => panic!("expected PhaseMismatch, got {other:?}"),
        }
    }

    #[test]
    fn dangling_bus_reference_is_rejected() {
        let json = two_bus_json().replace(r#""to": 1"#, r#""to": 7"#);
        assert!(matches!(parse_feeder(&json), Err(NetError::Schema(_))));
    }

    #[test]
    fn radial_order_on_path() {
        let json = r#"{
            "buses": [
                {"id": 0, "phases": "a"}, {"id": 1, "phases": "a"},
                {"id": 2, "phases": "a"}, {"id": 3, "phases": "a"}
            ],
            "lines": [
                {"from": 0, "to": 1, "z": [[[0.01, 0.02]]]},
                {"from": 1, "to": 2, "z": [[[0.01, 0.02]]]},
                {"from": 2, "to": 3, "z": [[[0.01, 0.02]]]}
            ],
            "slack": {"bus": 0, "voltage": [[1, 0]]},
            "v_min": 0.9, "v_max": 1.1
        }"#;
        let net = parse_feeder(json).unwrap();
        let order = radial_order(&net, true).unwrap();
        assert!(order.radial);
        let pairs: Vec<(usize, usize)> = order.edges.iter().map(|(_, u, v)| (*u, *v)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn cycle_is_flagged_and_strict_errors() {
        let json = r#"{
            "buses": [
                {"id": 0, "phases": "a"}, {"id": 1, "phases": "a"},
                {"id": 2, "phases": "a"}, {"id": 3, "phases": "a"}
            ],
            "lines": [
                {"from": 0, "to": 1, "z": [[[0.01, 0.02]]]},
                {"from": 1, "to": 2, "z": [[[0.01, 0.02]]]},
                {"from": 2, "to": 3, "z": [[[0.01, 0.02]]]},
                {"from": 1, "to": 3, "z": [[[0.01, 0.02]]]}
            ],
            "slack": {"bus": 0, "voltage": [[1, 0]]},
            "v_min": 0.9, "v_max": 1.1
        }"#;
        let net = parse_feeder(json).unwrap();
        assert!(!radial_order(&net, false).unwrap().radial);
        assert!(matches!(radial_order(&net, true), Err(NetError::Cycle)));
    }

    #[test]
    fn radial_order_visits_every_bus_once() {
        let net = parse_feeder(&two_bus_json()).unwrap();
        let order = radial_order(&net, true).unwrap();
        let mut seen = vec![false; net.n_buses()];
        seen[0] = true;
        for (_, _, v) in &order.edges {
            assert!(!seen[*v], "bus visited twice");
            seen[*v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn feeder_round_trip_is_identity() {
        let net = parse_feeder(&two_bus_json()).unwrap();
        let text = serde_json::to_string(&to_feeder_file(&net)).unwrap();
        let net2 = parse_feeder(&text).unwrap();
        assert_eq!(net.n_buses(), net2.n_buses());
        for (a, b) in net.buses.iter().zip(&net2.buses) {
            assert_eq!(a.ext_id, b.ext_id);
            assert_eq!(a.phases, b.phases);
            assert_eq!(a.load_s, b.load_s);
            assert_eq!(a.shunt_y, b.shunt_y);
        }
        for (a, b) in net.lines.iter().zip(&net2.lines) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            assert_eq!(a.z, b.z);
        }
        assert_eq!(net.slack_voltage, net2.slack_voltage);
        assert_eq!((net.v_min, net.v_max), (net2.v_min, net2.v_max));
    }
}
