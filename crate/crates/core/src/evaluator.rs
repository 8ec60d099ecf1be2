//! Binding circuits to operators and computing probabilities, both by the
//! circuit trace and by evolving a state through a foliation.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{random_physical, strides, CMatrix, LabeledOperator, Role, Slot};
use crate::notation::{foliate, CircuitFragment, Foliation, OperationDecl, SystemType, TypeRegistry, WireLabel};
use crate::optensor::{circuit_trace, execute_plan, input_transpose, is_physical, plan_contraction, ContractionPlan};

/// Operators by operation name. Several instances of one name share an operator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding {
    ops: BTreeMap<String, LabeledOperator>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, op: LabeledOperator) {
        self.ops.insert(name.into(), op);
    }

    pub fn get(&self, name: &str) -> Option<&LabeledOperator> {
        self.ops.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LabeledOperator)> {
        self.ops.iter()
    }

    /// Checks every bound slot against the registered dimension of its type.
    pub fn check_types(&self, registry: &TypeRegistry) -> Result<()> {
        for (name, op) in &self.ops {
            for s in op.slots() {
                match registry.get(&s.label.sys) {
                    Some(t) if t.dim == s.dim => {}
                    Some(t) => {
                        return Err(Error::DimMismatch(format!("{name}: slot {} has dimension {}, type {} has {}", s.label, s.dim, t.name, t.dim)))
                    }
                    None => return Err(Error::SignatureMismatch(format!("{name}: type {} is not registered", s.label.sys))),
                }
            }
        }
        Ok(())
    }

    /// The bound operators of `frag`, relabelled to its wiring, in `frag.ops` order.
    pub fn bind(&self, frag: &CircuitFragment) -> Result<Vec<LabeledOperator>> {
        frag.ops
            .iter()
            .map(|decl| {
                let op = self.ops.get(&decl.name).ok_or_else(|| Error::UnboundOperation(decl.name.clone()))?;
                unify(decl, op)
            })
            .collect()
    }

    /// Names of bound operations in `frag` that fail the physicality test.
    pub fn nonphysical(&self, frag: &CircuitFragment, eps: f64) -> Result<Vec<String>> {
        let mut names: Vec<String> = frag.ops.iter().map(|d| d.name.clone()).collect();
        names.dedup();
        let mut out = Vec::new();
        for name in names {
            let op = self.ops.get(&name).ok_or_else(|| Error::UnboundOperation(name.clone()))?;
            if !is_physical(op, eps).physical && !out.contains(&name) {
                out.push(name);
            }
        }
        Ok(out)
    }
}

/// Relabels an operator to an operation's labels, matching inputs and
/// outputs by position within each role.
pub fn unify(decl: &OperationDecl, op: &LabeledOperator) -> Result<LabeledOperator> {
    let ins = op.labels_with_role(Role::Input);
    let outs = op.labels_with_role(Role::Output);
    if ins.len() != decl.inputs.len() || outs.len() != decl.outputs.len() {
        return Err(Error::SignatureMismatch(format!(
            "{} has {} inputs and {} outputs, bound operator has {} and {}",
            decl.name,
            decl.inputs.len(),
            decl.outputs.len(),
            ins.len(),
            outs.len()
        )));
    }
    let mut map: BTreeMap<u32, WireLabel> = BTreeMap::new();
    for (from, to) in ins.iter().zip(&decl.inputs).chain(outs.iter().zip(&decl.outputs)) {
        if from.sys != to.sys {
            return Err(Error::SignatureMismatch(format!("{}: slot {to} bound to operator slot {from} of another type", decl.name)));
        }
        map.insert(from.id, to.clone());
    }
    op.relabeled(|s| map[&s.label.id].clone())
}

fn require_circuit(frag: &CircuitFragment) -> Result<()> {
    if frag.is_circuit() {
        Ok(())
    } else {
        Err(Error::SignatureMismatch("probabilities are only defined for circuits with no open ports".into()))
    }
}

/// Circuit probability by contracting all bound operators.
pub fn probability(frag: &CircuitFragment, b: &Binding) -> Result<f64> {
    Ok(probability_with_plan(frag, b)?.0)
}

/// Probability together with the contraction plan used.
pub fn probability_with_plan(frag: &CircuitFragment, b: &Binding) -> Result<(f64, ContractionPlan)> {
    require_circuit(frag)?;
    let ops = b.bind(frag)?;
    let plan = plan_contraction(&ops)?;
    let value = execute_plan(&ops, &plan)?.value();
    Ok((value, plan))
}

/// Operator of a fragment: internal wires contracted, open labels kept.
pub fn fragment_operator(frag: &CircuitFragment, b: &Binding) -> Result<LabeledOperator> {
    circuit_trace(&b.bind(frag)?)
}

/// Unnormalised state on the wires currently in flight.
struct State {
    slots: Vec<(WireLabel, usize)>,
    matrix: CMatrix,
}

impl State {
    /// Applies the map with Choi matrix `choi` on (inputs, outputs) to the
    /// subsystems `inputs`, acting as the identity on the rest.
    fn apply(&mut self, inputs: &[WireLabel], outputs: &[(WireLabel, usize)], choi: &CMatrix) -> Result<()> {
        let positions: Vec<usize> = inputs
            .iter()
            .map(|l| self.slots.iter().position(|s| s.0.id == l.id).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect::<Result<_>>()?;
        let rest: Vec<usize> = (0..self.slots.len()).filter(|p| !positions.contains(p)).collect();
        let dims: Vec<usize> = self.slots.iter().map(|s| s.1).collect();
        let st = strides(&dims);
        let offs = |sel: &[usize]| crate::linalg::offsets(&dims, &st, sel);
        let (ro, io) = (offs(&rest), offs(&positions));
        let (dr, di) = (ro.len(), io.len());
        let d_out: usize = outputs.iter().map(|o| o.1).product();
        debug_assert_eq!(choi.nrows(), di * d_out);

        let mut next = CMatrix::zeros(dr * d_out, dr * d_out);
        for r in 0..dr {
            for r2 in 0..dr {
                for i in 0..di {
                    for i2 in 0..di {
                        let rho = self.matrix[(ro[r] + io[i], ro[r2] + io[i2])];
                        if rho == Complex64::default() {
                            continue;
                        }
                        for o in 0..d_out {
                            for o2 in 0..d_out {
                                next[(r * d_out + o, r2 * d_out + o2)] += rho * choi[(i * d_out + o, i2 * d_out + o2)];
                            }
                        }
                    }
                }
            }
        }
        let mut slots: Vec<(WireLabel, usize)> = rest.iter().map(|&p| self.slots[p].clone()).collect();
        slots.extend(outputs.iter().cloned());
        self.slots = slots;
        self.matrix = next;
        Ok(())
    }
}

type Ports = Vec<(WireLabel, usize)>;

/// Choi matrix of a bound operator, ordered (inputs, outputs).
fn choi_of(op: &LabeledOperator) -> Result<(Vec<WireLabel>, Ports, CMatrix)> {
    let ins = op.labels_with_role(Role::Input);
    let outs: Ports = op.slots_with_role(Role::Output).into_iter().map(|s| (s.label, s.dim)).collect();
    let mut order = ins.clone();
    order.extend(outs.iter().map(|o| o.0.clone()));
    let j = input_transpose(op).permuted(&order)?;
    Ok((ins, outs, j.into_matrix()))
}

/// Circuit probability by evolving a state through the earliest foliation.
pub fn probability_foliated(frag: &CircuitFragment, b: &Binding) -> Result<f64> {
    probability_foliated_with(frag, b, &foliate(frag))
}

/// State evolution through a given foliation. Each operator acts as a map
/// from its inputs to its outputs; wires that skip a layer are carried by
/// explicit identity maps.
pub fn probability_foliated_with(frag: &CircuitFragment, b: &Binding, fol: &Foliation) -> Result<f64> {
    require_circuit(frag)?;
    let ops = b.bind(frag)?;
    let mut state = State { slots: Vec::new(), matrix: CMatrix::identity(1, 1) };
    for (k, layer) in fol.layers.iter().enumerate() {
        for &o in layer {
            let (ins, outs, choi) = choi_of(&ops[o])?;
            state.apply(&ins, &outs, &choi)?;
        }
        for pad in fol.paddings_in(k) {
            let dim = state
                .slots
                .iter()
                .find(|s| s.0.id == pad.label.id)
                .map(|s| s.1)
                .ok_or_else(|| Error::UnknownLabel(pad.label.clone()))?;
            let carried = WireLabel::new(pad.label.sys.clone(), u32::MAX);
            let (ins, _, choi) = choi_of(&LabeledOperator::wire(pad.label.clone(), carried, dim))?;
            state.apply(&ins, &[(pad.label.clone(), dim)], &choi)?;
        }
    }
    if !state.slots.is_empty() {
        return Err(Error::ShapeMismatch("state evolution left open wires".into()));
    }
    Ok(state.matrix[(0, 0)].re)
}

/// A real linear combination of circuits.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitExpression {
    pub terms: Vec<(f64, CircuitFragment)>,
}

/// Linear extension of the probability to combinations of circuits.
pub fn p_function(expr: &CircuitExpression, b: &Binding) -> Result<f64> {
    let mut total = 0.0;
    for (k, (coef, frag)) in expr.terms.iter().enumerate() {
        if !frag.is_circuit() {
            return Err(Error::NonCircuitTerm(k));
        }
        total += coef * probability(frag, b)?;
    }
    Ok(total)
}

/// Relative tolerance of the proportionality test.
pub const LOCALITY_EPS: f64 = 1e-8;

/// The ratio `r` with `A = r B` for the two fragment operators, if they are
/// proportional within `eps` relative to the largest entry of `A`.
pub fn formalism_locality_ratio(frag_a: &CircuitFragment, frag_b: &CircuitFragment, b: &Binding, eps: f64) -> Result<Option<f64>> {
    let a = fragment_operator(frag_a, b)?;
    let bo = fragment_operator(frag_b, b)?;
    proportionality(&a, &bo, eps)
}

pub fn proportionality(a: &LabeledOperator, b: &LabeledOperator, eps: f64) -> Result<Option<f64>> {
    let b = b.aligned_to(a).map_err(|_| Error::SignatureMismatch("fragments have different open ports".into()))?;
    let bb = b.frobenius_inner(&b)?;
    if b.max_abs_entry() == 0.0 || bb == 0.0 {
        return Err(Error::ZeroFragment);
    }
    let r = b.frobenius_inner(a)? / bb;
    let residual = a.max_abs_diff(&b.scaled(r))?;
    Ok((residual <= eps * a.max_abs_entry()).then_some(r))
}

/// A preparation feeding the open inputs of a fragment and a result
/// absorbing its open outputs, joined by an ancilla wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub preparation: LabeledOperator,
    pub result: LabeledOperator,
}

pub fn random_completion<R: Rng + ?Sized>(frag_op: &LabeledOperator, ancilla_dim: usize, rng: &mut R) -> Completion {
    let anc = WireLabel::new("g", frag_op.labels().map(|l| l.id).max().unwrap_or(0) + 1);
    let mut prep_out: Vec<Slot> = frag_op.slots_with_role(Role::Input).into_iter().map(|s| Slot { role: Role::Output, ..s }).collect();
    prep_out.push(Slot::output(anc.clone(), ancilla_dim));
    let mut res_in: Vec<Slot> = frag_op.slots_with_role(Role::Output).into_iter().map(|s| Slot { role: Role::Input, ..s }).collect();
    res_in.push(Slot::input(anc, ancilla_dim));
    Completion { preparation: random_physical(vec![], prep_out, true, rng), result: random_physical(res_in, vec![], false, rng) }
}

/// Probability of a fragment operator closed by a completion.
pub fn completed_probability(frag_op: &LabeledOperator, c: &Completion) -> Result<f64> {
    Ok(circuit_trace(&[c.preparation.clone(), frag_op.clone(), c.result.clone()])?.value())
}

/// Shape of random circuits.
#[derive(Debug, Clone)]
pub struct RandomCircuitConfig {
    pub max_ops: usize,
    pub types: Vec<SystemType>,
    /// Upper bound on input and on output slots per operation.
    pub max_slots: usize,
}

impl Default for RandomCircuitConfig {
    fn default() -> Self {
        RandomCircuitConfig {
            max_ops: 8,
            types: vec![SystemType::new("a", 2).unwrap(), SystemType::new("b", 3).unwrap()],
            max_slots: 2,
        }
    }
}

/// A random circuit with random physical operators bound to every operation.
pub fn random_circuit<R: Rng + ?Sized>(cfg: &RandomCircuitConfig, rng: &mut R) -> (CircuitFragment, Binding) {
    let target = rng.random_range(2..=cfg.max_ops.max(2));
    let m = cfg.max_slots.max(1);
    let mut pool: Ports = Vec::new();
    let mut decls: Vec<(Ports, Ports)> = Vec::new();
    let mut next_id = 1;
    let closers = |pool: usize| pool.div_ceil(m);
    while decls.len() + 1 + closers(pool.len()) < target || decls.is_empty() {
        let n_in = if decls.is_empty() { 0 } else { rng.random_range(0..=m.min(pool.len())) };
        let mut n_out = rng.random_range(usize::from(n_in == 0)..=m);
        while n_out > usize::from(n_in == 0) && decls.len() + 1 + closers(pool.len() - n_in + n_out) > target {
            n_out -= 1;
        }
        let mut ins = Vec::new();
        for _ in 0..n_in {
            ins.push(pool.swap_remove(rng.random_range(0..pool.len())));
        }
        let mut outs = Vec::new();
        for _ in 0..n_out {
            let t = &cfg.types[rng.random_range(0..cfg.types.len())];
            outs.push((WireLabel::new(t.name.clone(), next_id), t.dim));
            next_id += 1;
        }
        pool.extend(outs.iter().cloned());
        decls.push((ins, outs));
    }
    while !pool.is_empty() {
        let take = m.min(pool.len());
        let ins: Vec<_> = pool.drain(..take).collect();
        decls.push((ins, Vec::new()));
    }
    let mut binding = Binding::new();
    let mut ops = Vec::new();
    for (k, (ins, outs)) in decls.into_iter().enumerate() {
        let name = format!("O{}", k + 1);
        let in_slots = ins.iter().map(|(l, d)| Slot::input(l.clone(), *d)).collect();
        let out_slots = outs.iter().map(|(l, d)| Slot::output(l.clone(), *d)).collect();
        let complete = rng.random_bool(0.5);
        binding.insert(name.clone(), random_physical(in_slots, out_slots, complete, rng));
        ops.push(OperationDecl::new(name, ins.into_iter().map(|x| x.0).collect(), outs.into_iter().map(|x| x.0).collect()));
    }
    (CircuitFragment::new(ops).expect("generated circuits are well formed"), binding)
}
