//! Symbolic circuit notation.
//!
//! A circuit expression is a whitespace-separated list of operations such as
//! `A^{a1 b2} C_{b2 a3}^{a5}`. Superscripts are outputs and subscripts are
//! inputs. A label is a type name followed by a positive integer; a label id
//! that occurs once as an output and once as an input denotes a wire.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WiringError};

/// A named wire type with Hilbert-space dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemType {
    pub name: String,
    pub dim: usize,
}

impl SystemType {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("system dimension must be at least 1".into()));
        }
        Ok(Self { name: name.into(), dim })
    }

    /// Number of fiducial elements, one per real dimension of the Hermitian operators.
    pub fn fiducial_count(&self) -> usize {
        self.dim * self.dim
    }
}

/// Mapping from type names to dimensions, read from `name dim` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeRegistry {
    types: BTreeMap<String, usize>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ty: SystemType) {
        self.types.insert(ty.name, ty.dim);
    }

    pub fn get(&self, name: &str) -> Option<SystemType> {
        self.types.get(name).map(|&dim| SystemType { name: name.to_string(), dim })
    }

    pub fn iter(&self) -> impl Iterator<Item = SystemType> + '_ {
        self.types.iter().map(|(n, &d)| SystemType { name: n.clone(), dim: d })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reg = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("line {}: expected `name dim`", lineno + 1)));
            };
            if !name.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(Error::Format(format!("line {}: bad type name {name:?}", lineno + 1)));
            }
            let dim: usize = dim
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad dimension {dim:?}", lineno + 1)))?;
            reg.insert(SystemType::new(name, dim)?);
        }
        Ok(reg)
    }

    pub fn to_text(&self) -> String {
        self.types.iter().map(|(n, d)| format!("{n} {d}\n")).collect()
    }
}

/// A typed wire label such as `a1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WireLabel {
    pub sys: String,
    pub id: u32,
}

impl WireLabel {
    pub fn new(sys: impl Into<String>, id: u32) -> Self {
        Self { sys: sys.into(), id }
    }
}

impl fmt::Display for WireLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sys, self.id)
    }
}

impl FromStr for WireLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (sys, digits) = s.split_at(split);
        let bad = || Error::Format(format!("bad wire label {s:?}"));
        if sys.is_empty() || !sys.chars().all(|c| c.is_ascii_alphabetic()) || digits.is_empty() {
            return Err(bad());
        }
        let id: u32 = digits.parse().map_err(|_| bad())?;
        if id == 0 {
            return Err(bad());
        }
        Ok(Self::new(sys, id))
    }
}

impl Serialize for WireLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WireLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One operation instance with ordered input and output labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperationDecl {
    pub name: String,
    pub inputs: Vec<WireLabel>,
    pub outputs: Vec<WireLabel>,
}

impl OperationDecl {
    pub fn new(name: impl Into<String>, inputs: Vec<WireLabel>, outputs: Vec<WireLabel>) -> Self {
        Self { name: name.into(), inputs, outputs }
    }

    fn min_id(&self) -> u32 {
        self.inputs.iter().chain(&self.outputs).map(|l| l.id).min().unwrap_or(0)
    }
}

impl fmt::Display for OperationDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |ls: &[WireLabel]| ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ");
        f.write_str(&self.name)?;
        if !self.inputs.is_empty() {
            write!(f, "_{{{}}}", join(&self.inputs))?;
        }
        if !self.outputs.is_empty() {
            write!(f, "^{{{}}}", join(&self.outputs))?;
        }
        Ok(())
    }
}

/// An internal wire from output slot `output_slot` of `producer` to input
/// slot `input_slot` of `consumer` (indices into `CircuitFragment::ops`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Wire {
    pub label: WireLabel,
    pub producer: usize,
    pub output_slot: usize,
    pub consumer: usize,
    pub input_slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragmentKind {
    Circuit,
    Preparation,
    Result,
    /// Open inputs and outputs, with every open output downstream of some open input.
    Transformation,
    General,
}

/// A validated, wired collection of operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitFragment {
    pub ops: Vec<OperationDecl>,
    pub open_inputs: Vec<WireLabel>,
    pub open_outputs: Vec<WireLabel>,
    pub wires: Vec<Wire>,
    pub kind: FragmentKind,
}

impl CircuitFragment {
    /// Validates the wiring rules and builds the fragment. Operations are
    /// stored sorted by name and then smallest label id, so the input order
    /// is irrelevant.
    pub fn new(mut ops: Vec<OperationDecl>) -> Result<Self> {
        ops.sort_by(|a, b| (&a.name, a.min_id()).cmp(&(&b.name, b.min_id())));
        Self::validated(ops)
    }

    fn validated(ops: Vec<OperationDecl>) -> Result<Self> {
        // (op, slot) for each role, keyed by label id
        #[derive(Default)]
        struct Ends {
            sys: Vec<String>,
            outs: Vec<(usize, usize)>,
            ins: Vec<(usize, usize)>,
        }
        let mut ends: BTreeMap<u32, Ends> = BTreeMap::new();
        for (k, op) in ops.iter().enumerate() {
            for (slot, l) in op.outputs.iter().enumerate() {
                let e = ends.entry(l.id).or_default();
                e.sys.push(l.sys.clone());
                e.outs.push((k, slot));
            }
            for (slot, l) in op.inputs.iter().enumerate() {
                let e = ends.entry(l.id).or_default();
                e.sys.push(l.sys.clone());
                e.ins.push((k, slot));
            }
        }

        for (&id, e) in &ends {
            if let Some(other) = e.sys.iter().find(|s| **s != e.sys[0]) {
                return Err(WiringError::TypeMismatch { id, first: e.sys[0].clone(), second: other.clone() }.into());
            }
        }
        for (&id, e) in &ends {
            if e.outs.len() > 1 || e.ins.len() > 1 {
                return Err(WiringError::OneWireViolation { label: WireLabel::new(e.sys[0].clone(), id) }.into());
            }
        }

        let mut wires = Vec::new();
        let mut open_inputs = Vec::new();
        let mut open_outputs = Vec::new();
        for (&id, e) in &ends {
            let label = WireLabel::new(e.sys[0].clone(), id);
            match (e.outs.first(), e.ins.first()) {
                (Some(&(p, ps)), Some(&(c, cs))) => {
                    if p == c {
                        let name = ops[p].name.clone();
                        return Err(WiringError::ClosedLoop { cycle: vec![name.clone(), name] }.into());
                    }
                    wires.push(Wire { label, producer: p, output_slot: ps, consumer: c, input_slot: cs });
                }
                (Some(_), None) => open_outputs.push(label),
                (None, Some(_)) => open_inputs.push(label),
                (None, None) => unreachable!(),
            }
        }

        if let Some(cycle) = find_cycle(ops.len(), &wires) {
            let cycle = cycle.into_iter().map(|k| ops[k].name.clone()).collect();
            return Err(WiringError::ClosedLoop { cycle }.into());
        }

        let mut frag = Self { ops, open_inputs, open_outputs, wires, kind: FragmentKind::Circuit };
        frag.kind = frag.classify();
        Ok(frag)
    }

    fn classify(&self) -> FragmentKind {
        match (self.open_inputs.is_empty(), self.open_outputs.is_empty()) {
            (true, true) => FragmentKind::Circuit,
            (true, false) => FragmentKind::Preparation,
            (false, true) => FragmentKind::Result,
            (false, false) => {
                let causal = causal_structure(self);
                let fed = self
                    .open_outputs
                    .iter()
                    .all(|o| {
                        let p = self.producer_of(o).unwrap();
                        self.open_inputs.iter().any(|i| {
                            let c = self.consumer_of(i).unwrap();
                            c == p || causal.op_reach[c].contains(&p)
                        })
                    });
                if fed {
                    FragmentKind::Transformation
                } else {
                    FragmentKind::General
                }
            }
        }
    }

    pub fn empty() -> Self {
        Self {
            ops: Vec::new(),
            open_inputs: Vec::new(),
            open_outputs: Vec::new(),
            wires: Vec::new(),
            kind: FragmentKind::Circuit,
        }
    }

    pub fn is_circuit(&self) -> bool {
        self.kind == FragmentKind::Circuit
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| o.name == name)
    }

    /// Index of the operation that outputs `label`.
    pub fn producer_of(&self, label: &WireLabel) -> Option<usize> {
        self.ops.iter().position(|o| o.outputs.contains(label))
    }

    /// Index of the operation that takes `label` as input.
    pub fn consumer_of(&self, label: &WireLabel) -> Option<usize> {
        self.ops.iter().position(|o| o.inputs.contains(label))
    }

    /// Immediate successors of each operation.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.ops.len()];
        for w in &self.wires {
            if !succ[w.producer].contains(&w.consumer) {
                succ[w.producer].push(w.consumer);
            }
        }
        succ
    }

    pub fn max_label_id(&self) -> u32 {
        self.ops
            .iter()
            .flat_map(|o| o.inputs.iter().chain(&o.outputs))
            .map(|l| l.id)
            .max()
            .unwrap_or(0)
    }

    /// Canonical form: operations sorted by name then smallest label id, and
    /// label ids renumbered from 1 in order of first occurrence.
    pub fn canonicalize(&self) -> Self {
        let mut ops = self.ops.clone();
        for _ in 0..=ops.len() {
            let renumbered = renumber(&ops);
            let mut resorted = renumbered.clone();
            resorted.sort_by(|a, b| (&a.name, a.min_id()).cmp(&(&b.name, b.min_id())));
            if resorted == renumbered {
                ops = renumbered;
                break;
            }
            ops = resorted;
        }
        Self::validated(ops).expect("renumbering preserves validity")
    }
}

fn renumber(ops: &[OperationDecl]) -> Vec<OperationDecl> {
    let mut map: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 1;
    let mut fresh = |id: u32| {
        *map.entry(id).or_insert_with(|| {
            next += 1;
            next - 1
        })
    };
    ops.iter()
        .map(|op| {
            let inputs = op.inputs.iter().map(|l| WireLabel::new(l.sys.clone(), fresh(l.id))).collect();
            let outputs = op.outputs.iter().map(|l| WireLabel::new(l.sys.clone(), fresh(l.id))).collect();
            OperationDecl::new(op.name.clone(), inputs, outputs)
        })
        .collect()
}

fn find_cycle(n: usize, wires: &[Wire]) -> Option<Vec<usize>> {
    let mut succ = vec![Vec::new(); n];
    for w in wires {
        succ[w.producer].push(w.consumer);
    }
    for s in &mut succ {
        s.sort_unstable();
        s.dedup();
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();

    fn visit(v: usize, succ: &[Vec<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in &succ[v] {
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).unwrap();
                let mut cycle = stack[start..].to_vec();
                cycle.push(w);
                return Some(cycle);
            }
            if state[w] == 0 {
                if let Some(c) = visit(w, succ, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }

    (0..n).find_map(|v| if state[v] == 0 { visit(v, &succ, &mut state, &mut stack) } else { None })
}

impl fmt::Display for CircuitFragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, op) in self.ops.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for CircuitFragment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_circuit(s)
    }
}

/// Parses circuit notation into a validated fragment.
pub fn parse_circuit(text: &str) -> Result<CircuitFragment> {
    let ops = Parser { src: text.as_bytes(), pos: 0 }.ops()?;
    CircuitFragment::new(ops)
}

/// Prints the canonical form of `frag`.
pub fn print_circuit(frag: &CircuitFragment) -> String {
    frag.canonicalize().to_string()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Syntax { position: self.pos, expected: expected.to_string() })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn ops(mut self) -> Result<Vec<OperationDecl>> {
        let mut ops = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Ok(ops),
                Some(c) if c.is_ascii_alphabetic() => ops.push(self.op()?),
                Some(_) => return self.err("operation name"),
            }
        }
    }

    fn op(&mut self) -> Result<OperationDecl> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        let mut inputs = None;
        let mut outputs = None;
        loop {
            match self.peek() {
                Some(b'^') => {
                    if outputs.is_some() {
                        return self.err("at most one superscript block");
                    }
                    self.pos += 1;
                    outputs = Some(self.block()?);
                }
                Some(b'_') => {
                    if inputs.is_some() {
                        return self.err("at most one subscript block");
                    }
                    self.pos += 1;
                    inputs = Some(self.block()?);
                }
                None => break,
                Some(c) if c.is_ascii_whitespace() || c.is_ascii_alphabetic() => break,
                Some(_) => return self.err("`^{`, `_{`, whitespace or operation name"),
            }
        }
        Ok(OperationDecl::new(name, inputs.unwrap_or_default(), outputs.unwrap_or_default()))
    }

    fn block(&mut self) -> Result<Vec<WireLabel>> {
        if self.peek() != Some(b'{') {
            return self.err("`{`");
        }
        self.pos += 1;
        let mut labels = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'}') if !labels.is_empty() => {
                    self.pos += 1;
                    return Ok(labels);
                }
                Some(c) if c.is_ascii_alphabetic() => labels.push(self.label()?),
                _ if labels.is_empty() => return self.err("wire label"),
                _ => return self.err("wire label or `}`"),
            }
        }
    }

    fn label(&mut self) -> Result<WireLabel> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        let sys = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        let digits = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if digits == self.pos {
            return self.err("integer after type name");
        }
        let text = std::str::from_utf8(&self.src[digits..self.pos]).unwrap();
        match text.parse::<u32>() {
            Ok(id) if id > 0 => Ok(WireLabel::new(sys, id)),
            _ => {
                self.pos = digits;
                self.err("positive integer label")
            }
        }
    }
}

/// Reachability from output labels to input labels: `(x, y)` is present when
/// a directed path of at least one wire leads from the operation producing
/// `x` to the operation consuming `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalStructure {
    pub reaches: BTreeSet<(WireLabel, WireLabel)>,
    /// `op_reach[k]` holds every operation strictly downstream of op `k`.
    pub op_reach: Vec<BTreeSet<usize>>,
}

impl CausalStructure {
    pub fn reaches(&self, output: &WireLabel, input: &WireLabel) -> bool {
        self.reaches.contains(&(output.clone(), input.clone()))
    }

    /// The relation restricted to open outputs and open inputs of `frag`.
    pub fn open_relation(&self, frag: &CircuitFragment) -> BTreeSet<(WireLabel, WireLabel)> {
        self.reaches
            .iter()
            .filter(|(o, i)| frag.open_outputs.contains(o) && frag.open_inputs.contains(i))
            .cloned()
            .collect()
    }
}

pub fn causal_structure(frag: &CircuitFragment) -> CausalStructure {
    let n = frag.ops.len();
    let succ = frag.successors();
    let order = topological_order(n, &succ);
    let mut op_reach = vec![BTreeSet::new(); n];
    for &v in order.iter().rev() {
        let mut r = BTreeSet::new();
        for &w in &succ[v] {
            r.insert(w);
            r.extend(op_reach[w].iter().copied());
        }
        op_reach[v] = r;
    }
    let mut reaches = BTreeSet::new();
    for (p, op) in frag.ops.iter().enumerate() {
        for out in &op.outputs {
            for &c in &op_reach[p] {
                for inp in &frag.ops[c].inputs {
                    reaches.insert((out.clone(), inp.clone()));
                }
            }
        }
    }
    CausalStructure { reaches, op_reach }
}

fn topological_order(n: usize, succ: &[Vec<usize>]) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &w in s {
            indeg[w] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert(w);
            }
        }
    }
    order
}

/// An identity transformation inserted in `layer` to carry `label` across
/// a layer it neither starts nor ends in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padding {
    pub label: WireLabel,
    pub layer: usize,
}

/// An ordered partition of a fragment's operations into time steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Foliation {
    pub layers: Vec<Vec<usize>>,
    pub paddings: Vec<Padding>,
}

impl Foliation {
    fn from_depths(frag: &CircuitFragment, depth: &[usize]) -> Self {
        let nlayers = depth.iter().map(|d| d + 1).max().unwrap_or(0);
        let mut layers = vec![Vec::new(); nlayers];
        for (k, &d) in depth.iter().enumerate() {
            layers[d].push(k);
        }
        let mut paddings = Vec::new();
        for w in &frag.wires {
            for layer in depth[w.producer] + 1..depth[w.consumer] {
                paddings.push(Padding { label: w.label.clone(), layer });
            }
        }
        paddings.sort_by(|a, b| (a.layer, &a.label.id).cmp(&(b.layer, &b.label.id)));
        Self { layers, paddings }
    }

    pub fn layer_of(&self, op: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&op))
    }

    pub fn paddings_in(&self, layer: usize) -> impl Iterator<Item = &Padding> {
        self.paddings.iter().filter(move |p| p.layer == layer)
    }

    /// Renders layers as `[A B] [C D | I_d] ...` using operation names.
    pub fn describe(&self, frag: &CircuitFragment) -> Vec<String> {
        (0..self.layers.len())
            .map(|k| {
                let mut parts: Vec<String> = self.layers[k].iter().map(|&o| frag.ops[o].name.clone()).collect();
                parts.extend(self.paddings_in(k).map(|p| format!("I[{}]", p.label)));
                parts.join(" ")
            })
            .collect()
    }
}

/// Earliest-layer foliation: each operation sits at its longest-path depth from the sources.
pub fn foliate(frag: &CircuitFragment) -> Foliation {
    let n = frag.ops.len();
    let succ = frag.successors();
    let mut depth = vec![0usize; n];
    for v in topological_order(n, &succ) {
        for &w in &succ[v] {
            depth[w] = depth[w].max(depth[v] + 1);
        }
    }
    Foliation::from_depths(frag, &depth)
}

/// Latest-layer foliation: every operation is pushed as late as the sinks allow.
pub fn foliate_latest(frag: &CircuitFragment) -> Foliation {
    let n = frag.ops.len();
    let succ = frag.successors();
    let order = topological_order(n, &succ);
    let mut height = vec![0usize; n];
    for &v in order.iter().rev() {
        for &w in &succ[v] {
            height[v] = height[v].max(height[w] + 1);
        }
    }
    let total = height.iter().map(|h| h + 1).max().unwrap_or(0);
    let depth: Vec<usize> = height.iter().map(|h| total - 1 - h).collect();
    Foliation::from_depths(frag, &depth)
}
