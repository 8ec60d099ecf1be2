//! Circuit-trace contraction and physicality of operator tensors.
//!
//! Wiring an output label of one operator to the same input label of another
//! means multiplying the two operators in that subspace and tracing it out:
//! for operators `A` on `X (x) S` and `B` on `S (x) Y`,
//! `(A B)[(x,y),(x',y')] = sum_{s,s'} A[(x,s),(x',s')] B[(s',y),(s,y')]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, haar_state, offsets, partial_trace, partial_transpose, rng_from_seed, strides, tensor_product, total_dim,
    CMatrix, CVector, LabeledOperator, Role, Slot,
};
use crate::notation::{foliate, CircuitFragment, Foliation, WireLabel};

/// Default tolerance on physicality margins.
pub const PHYSICAL_EPS: f64 = 1e-9;

/// Checks that every label id occurs at most once per role, with one type and dimension.
pub fn check_labels(ops: &[LabeledOperator]) -> Result<()> {
    let mut seen: BTreeMap<u32, (Option<&Slot>, Option<&Slot>)> = BTreeMap::new();
    for op in ops {
        for s in op.slots() {
            let e = seen.entry(s.label.id).or_default();
            let (mine, other) = match s.role {
                Role::Output => (&mut e.0, e.1),
                Role::Input => (&mut e.1, e.0),
            };
            if mine.is_some() {
                return Err(Error::LabelArity { label: s.label.clone(), role: s.role.as_str() });
            }
            if let Some(o) = other {
                if o.label.sys != s.label.sys {
                    return Err(Error::SignatureMismatch(format!("wire {} joins {} to {}", s.label.id, o.label, s.label)));
                }
                if o.dim != s.dim {
                    return Err(Error::DimMismatch(format!("wire {} has dimensions {} and {}", s.label, o.dim, s.dim)));
                }
            }
            *mine = Some(s);
        }
    }
    Ok(())
}

/// Contracts every label shared by `a` and `b`. Remaining slots of `a` come
/// first, followed by those of `b`. Without shared labels this is the tensor product.
pub fn contract_pair(a: &LabeledOperator, b: &LabeledOperator) -> Result<LabeledOperator> {
    let mut a_shared = Vec::new();
    let mut b_shared = Vec::new();
    for (pa, sa) in a.slots().iter().enumerate() {
        if let Some(pb) = b.slots().iter().position(|sb| sb.label.id == sa.label.id) {
            let sb = &b.slots()[pb];
            if sa.role == sb.role {
                return Err(Error::LabelArity { label: sa.label.clone(), role: sa.role.as_str() });
            }
            if sa.label.sys != sb.label.sys {
                return Err(Error::SignatureMismatch(format!("wire {} joins {} to {}", sa.label.id, sa.label, sb.label)));
            }
            if sa.dim != sb.dim {
                return Err(Error::DimMismatch(format!("wire {} has dimensions {} and {}", sa.label, sa.dim, sb.dim)));
            }
            a_shared.push(pa);
            b_shared.push(pb);
        }
    }
    if a_shared.is_empty() {
        return tensor_product(a, b);
    }
    let a_keep: Vec<usize> = (0..a.slots().len()).filter(|p| !a_shared.contains(p)).collect();
    let b_keep: Vec<usize> = (0..b.slots().len()).filter(|p| !b_shared.contains(p)).collect();

    let a_dims: Vec<usize> = a.slots().iter().map(|s| s.dim).collect();
    let b_dims: Vec<usize> = b.slots().iter().map(|s| s.dim).collect();
    let (a_st, b_st) = (strides(&a_dims), strides(&b_dims));
    let oak = offsets(&a_dims, &a_st, &a_keep);
    let oas = offsets(&a_dims, &a_st, &a_shared);
    let obk = offsets(&b_dims, &b_st, &b_keep);
    let obs = offsets(&b_dims, &b_st, &b_shared);
    let (da, db, ds) = (oak.len(), obk.len(), oas.len());

    let am = a.matrix();
    let bm = b.matrix();
    let x = CMatrix::from_fn(da * da, ds * ds, |r, c| {
        let (i, i2) = (r / da, r % da);
        let (s, s2) = (c / ds, c % ds);
        am[(oak[i] + oas[s], oak[i2] + oas[s2])]
    });
    let y = CMatrix::from_fn(ds * ds, db * db, |r, c| {
        let (s, s2) = (r / ds, r % ds);
        let (j, j2) = (c / db, c % db);
        bm[(obs[s2] + obk[j], obs[s] + obk[j2])]
    });
    let z = x * y;
    let mut m = CMatrix::zeros(da * db, da * db);
    for i in 0..da {
        for i2 in 0..da {
            for j in 0..db {
                for j2 in 0..db {
                    m[(i * db + j, i2 * db + j2)] = z[(i * da + i2, j * db + j2)];
                }
            }
        }
    }
    let mut slots: Vec<Slot> = a_keep.iter().map(|&p| a.slots()[p].clone()).collect();
    slots.extend(b_keep.iter().map(|&p| b.slots()[p].clone()));
    Ok(LabeledOperator::from_raw(slots, m))
}

/// One pairwise step. Operands are numbered `0..n` for the inputs and
/// `n + k` for the result of step `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionStep {
    pub left: usize,
    pub right: usize,
    pub labels: Vec<WireLabel>,
    pub result_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionPlan {
    pub inputs: usize,
    pub steps: Vec<ContractionStep>,
    pub peak_dim: usize,
}

impl fmt::Display for ContractionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            let labels: Vec<String> = s.labels.iter().map(|l| l.to_string()).collect();
            writeln!(f, "contract {} {} over [{}] -> dim {}", s.left, s.right, labels.join(", "), s.result_dim)?;
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Shape {
    id: usize,
    slots: Vec<(u32, WireLabel, usize)>,
}

impl Shape {
    fn dim(&self) -> usize {
        self.slots.iter().map(|s| s.2).product()
    }

    fn shared(&self, other: &Shape) -> Vec<WireLabel> {
        self.slots.iter().filter(|s| other.slots.iter().any(|o| o.0 == s.0)).map(|s| s.1.clone()).collect()
    }

    fn merge(&self, other: &Shape, id: usize) -> Shape {
        let keep = |a: &Shape, b: &Shape| {
            a.slots.iter().filter(|s| !b.slots.iter().any(|o| o.0 == s.0)).cloned().collect::<Vec<_>>()
        };
        let mut slots = keep(self, other);
        slots.extend(keep(other, self));
        Shape { id, slots }
    }
}

fn shapes(ops: &[LabeledOperator]) -> Vec<Shape> {
    ops.iter()
        .enumerate()
        .map(|(id, op)| Shape { id, slots: op.slots().iter().map(|s| (s.label.id, s.label.clone(), s.dim)).collect() })
        .collect()
}

fn finish_plan(inputs: usize, initial: &[Shape], steps: Vec<ContractionStep>) -> ContractionPlan {
    let peak = initial.iter().map(Shape::dim).chain(steps.iter().map(|s| s.result_dim)).max().unwrap_or(1);
    ContractionPlan { inputs, steps, peak_dim: peak }
}

/// Greedy plan: repeatedly contract the pair of operands sharing labels whose
/// result is smallest, ties going to the lowest operand ids. Operands that
/// share nothing are combined by tensor products at the end.
pub fn plan_contraction(ops: &[LabeledOperator]) -> Result<ContractionPlan> {
    check_labels(ops)?;
    let initial = shapes(ops);
    let mut live = initial.clone();
    let mut next = ops.len();
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(usize, (usize, usize), usize, usize)> = None;
        for i in 0..live.len() {
            for j in i + 1..live.len() {
                if live[i].shared(&live[j]).is_empty() {
                    continue;
                }
                let dim = live[i].merge(&live[j], 0).dim();
                let key = (dim, (live[i].id.min(live[j].id), live[i].id.max(live[j].id)));
                if best.as_ref().is_none_or(|b| (b.0, b.1) > key) {
                    best = Some((key.0, key.1, i, j));
                }
            }
        }
        let Some((dim, _, i, j)) = best else { break };
        let (a, b) = (live[i].clone(), live[j].clone());
        steps.push(ContractionStep { left: a.id, right: b.id, labels: a.shared(&b), result_dim: dim });
        let merged = a.merge(&b, next);
        next += 1;
        live.remove(j);
        live[i] = merged;
    }
    while live.len() > 1 {
        let a = live.remove(0);
        let b = live.remove(0);
        let merged = a.merge(&b, next);
        next += 1;
        steps.push(ContractionStep { left: a.id, right: b.id, labels: Vec::new(), result_dim: merged.dim() });
        live.insert(0, merged);
    }
    Ok(finish_plan(ops.len(), &initial, steps))
}

/// Plan that folds the operands strictly left to right.
pub fn left_to_right_plan(ops: &[LabeledOperator]) -> Result<ContractionPlan> {
    check_labels(ops)?;
    let initial = shapes(ops);
    let mut steps = Vec::new();
    let mut acc = match initial.first() {
        Some(s) => s.clone(),
        None => return Ok(finish_plan(0, &initial, steps)),
    };
    for (k, s) in initial.iter().enumerate().skip(1) {
        let merged = acc.merge(s, ops.len() + k - 1);
        steps.push(ContractionStep { left: acc.id, right: s.id, labels: acc.shared(s), result_dim: merged.dim() });
        acc = merged;
    }
    Ok(finish_plan(ops.len(), &initial, steps))
}

pub fn execute_plan(ops: &[LabeledOperator], plan: &ContractionPlan) -> Result<LabeledOperator> {
    if plan.inputs != ops.len() {
        return Err(Error::ShapeMismatch(format!("plan for {} operands applied to {}", plan.inputs, ops.len())));
    }
    let mut pool: Vec<Option<LabeledOperator>> = ops.iter().cloned().map(Some).collect();
    for step in &plan.steps {
        let a = pool[step.left].take().ok_or_else(|| Error::ShapeMismatch("operand used twice".into()))?;
        let b = pool[step.right].take().ok_or_else(|| Error::ShapeMismatch("operand used twice".into()))?;
        pool.push(Some(contract_pair(&a, &b)?));
    }
    let mut rest = pool.into_iter().flatten();
    let out = rest.next().unwrap_or_else(|| LabeledOperator::scalar(1.0));
    if rest.next().is_some() {
        return Err(Error::ShapeMismatch("plan leaves more than one operand".into()));
    }
    Ok(out)
}

/// Contracts all repeated labels of `ops`. When nothing stays open the result is 1x1.
pub fn circuit_trace(ops: &[LabeledOperator]) -> Result<LabeledOperator> {
    let plan = plan_contraction(ops)?;
    execute_plan(ops, &plan)
}

/// Partial transpose over all input slots.
pub fn input_transpose(op: &LabeledOperator) -> LabeledOperator {
    partial_transpose(op, &op.labels_with_role(Role::Input)).expect("labels belong to the operator")
}

/// Partial trace over all output slots: an operator on the inputs.
pub fn output_trace(op: &LabeledOperator) -> LabeledOperator {
    partial_trace(op, &op.labels_with_role(Role::Output)).expect("labels belong to the operator")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalityReport {
    /// Smallest eigenvalue of the input transpose.
    pub positivity_margin: f64,
    /// Largest eigenvalue of the output trace minus the identity.
    pub trace_margin: f64,
    pub physical: bool,
}

pub fn is_physical(op: &LabeledOperator, eps: f64) -> PhysicalityReport {
    let positivity_margin = eigh(input_transpose(op).matrix()).0[0];
    let t = output_trace(op);
    let d = t.dim();
    let deficit = t.matrix() - CMatrix::identity(d, d);
    let trace_margin = *eigh(&deficit).0.last().unwrap();
    PhysicalityReport { positivity_margin, trace_margin, physical: positivity_margin >= -eps && trace_margin <= eps }
}

fn fresh_id(op: &LabeledOperator) -> u32 {
    op.labels().map(|l| l.id).max().unwrap_or(0) + 1
}

/// Input dimension of an operator, product over input slots.
pub fn input_dim(op: &LabeledOperator) -> usize {
    total_dim(&op.slots_with_role(Role::Input))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub pass: bool,
    /// Smallest value of prep-op-result over the samples.
    pub min_value: f64,
    /// Largest value of prep-op-identity over the samples.
    pub max_trace_value: f64,
}

/// The ancilla dimensions `{1, N_in, N_in^2}` with duplicates removed.
pub fn default_ancilla_dims(op: &LabeledOperator) -> Vec<usize> {
    let n = input_dim(op);
    let mut v = vec![1, n, n * n];
    v.dedup();
    v
}

/// Monte-Carlo check of the defining conditions: rank-one preparations on
/// the inputs plus an ancilla and rank-one results on the outputs plus the
/// same ancilla must give values in `[0, 1]`.
pub fn sandwich_check(op: &LabeledOperator, ancilla_dims: &[usize], samples: usize, seed: u64, eps: f64) -> Result<SandwichReport> {
    let mut rng = rng_from_seed(seed);
    let anc = WireLabel::new("g", fresh_id(op));
    let ins: Vec<Slot> = op.slots_with_role(Role::Input).into_iter().map(|s| Slot { role: Role::Output, ..s }).collect();
    let outs: Vec<Slot> = op.slots_with_role(Role::Output).into_iter().map(|s| Slot { role: Role::Input, ..s }).collect();
    let mut min_value = f64::INFINITY;
    let mut max_trace_value = f64::NEG_INFINITY;
    for &g in ancilla_dims {
        let mut prep_slots = ins.clone();
        prep_slots.push(Slot::output(anc.clone(), g));
        let mut res_slots = outs.clone();
        res_slots.push(Slot::input(anc.clone(), g));
        let identity = LabeledOperator::identity(res_slots.clone());
        let plan = plan_contraction(&[
            LabeledOperator::zero(prep_slots.clone()),
            op.clone(),
            LabeledOperator::zero(res_slots.clone()),
        ])?;
        for _ in 0..samples {
            let prep = LabeledOperator::projector(prep_slots.clone(), &haar_state(total_dim(&prep_slots), &mut rng))?;
            let res = LabeledOperator::projector(res_slots.clone(), &haar_state(total_dim(&res_slots), &mut rng))?;
            let triple = [prep, op.clone(), res];
            min_value = min_value.min(execute_plan(&triple, &plan)?.value());
            let [prep, op2, _] = triple;
            let t = execute_plan(&[prep, op2, identity.clone()], &plan)?.value();
            max_trace_value = max_trace_value.max(t);
        }
    }
    Ok(SandwichReport { pass: min_value >= -eps && max_trace_value <= 1.0 + eps, min_value, max_trace_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessKind {
    /// The input transpose has a negative eigenvalue.
    Positivity,
    /// The output trace exceeds the identity.
    Trace,
}

/// A preparation and result that, wired around the operator, give a value outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub kind: WitnessKind,
    pub preparation: LabeledOperator,
    pub result: LabeledOperator,
    pub value: f64,
}

impl Witness {
    /// The witness circuit in notation form, with the operator named `op_name`.
    pub fn circuit_text(&self, op: &LabeledOperator, op_name: &str) -> String {
        let join = |ls: Vec<WireLabel>| ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ");
        let port = |ls: Vec<WireLabel>, mark: char| if ls.is_empty() { String::new() } else { format!("{mark}{{{}}}", join(ls)) };
        format!(
            "W{} {op_name}{}{} V{}",
            port(self.preparation.labels_with_role(Role::Output), '^'),
            port(op.labels_with_role(Role::Input), '_'),
            port(op.labels_with_role(Role::Output), '^'),
            port(self.result.labels_with_role(Role::Input), '_'),
        )
    }
}

/// Builds a concrete witness of non-physicality.
///
/// For a negative input transpose with eigenvector `v`, the preparation is a
/// maximally entangled state between the inputs and an ancilla copy of them
/// and the result is `|v><v|` read on (outputs, ancilla); the circuit value is
/// `lambda_min / N_in`. For an output trace above the identity, the
/// preparation is the offending eigenprojector and the result is the identity.
pub fn witness_nonphysical(op: &LabeledOperator, eps: f64) -> Result<Witness> {
    let report = is_physical(op, eps);
    if report.physical {
        return Err(Error::NotApplicable);
    }
    let ins = op.slots_with_role(Role::Input);
    let outs = op.slots_with_role(Role::Output);
    let d_in = total_dim(&ins);
    let d_out = total_dim(&outs);
    let (preparation, result, kind) = if report.positivity_margin < -eps {
        let mut order: Vec<WireLabel> = ins.iter().map(|s| s.label.clone()).collect();
        order.extend(outs.iter().map(|s| s.label.clone()));
        let j = input_transpose(op).permuted(&order)?;
        let (_, vecs) = eigh(j.matrix());
        let v = vecs.column(0);

        let anc = WireLabel::new("g", fresh_id(op));
        let mut prep_slots: Vec<Slot> = ins.iter().map(|s| Slot { role: Role::Output, ..s.clone() }).collect();
        prep_slots.push(Slot::output(anc.clone(), d_in));
        let mut a = CVector::zeros(d_in * d_in);
        for i in 0..d_in {
            a[i * d_in + i] = Complex64::new(1.0, 0.0);
        }
        let prep = LabeledOperator::projector(prep_slots, &a)?;

        let mut res_slots: Vec<Slot> = outs.iter().map(|s| Slot { role: Role::Input, ..s.clone() }).collect();
        res_slots.push(Slot::input(anc, d_in));
        let c = CVector::from_fn(d_out * d_in, |r, _| v[(r % d_in) * d_out + r / d_in]);
        let res = LabeledOperator::projector(res_slots, &c)?;
        (prep, res, WitnessKind::Positivity)
    } else {
        let t = output_trace(op);
        let (_, vecs) = eigh(t.matrix());
        let u: CVector = vecs.column(d_in - 1).into_owned();
        let prep_slots: Vec<Slot> = ins.iter().map(|s| Slot { role: Role::Output, ..s.clone() }).collect();
        let prep = LabeledOperator::projector(prep_slots, &u)?;
        let res = LabeledOperator::identity(outs.iter().map(|s| Slot { role: Role::Input, ..s.clone() }).collect());
        (prep, res, WitnessKind::Trace)
    };
    let value = circuit_trace(&[preparation.clone(), op.clone(), result.clone()])?.value();
    Ok(Witness { kind, preparation, result, value })
}

/// True when every operator has positive input transpose and the output
/// traces sum to the identity on the inputs (max-entry within `eps`).
pub fn is_complete_set(ops: &[LabeledOperator], eps: f64) -> Result<bool> {
    let Some(first) = ops.first() else {
        return Err(Error::SignatureMismatch("empty operator set".into()));
    };
    let mut sum: Option<LabeledOperator> = None;
    let mut positive = true;
    for op in ops {
        let same = op.slots().len() == first.slots().len()
            && op.slots().iter().all(|s| first.slot(&s.label).is_some_and(|f| f.role == s.role && f.dim == s.dim));
        if !same {
            return Err(Error::SignatureMismatch("operators in a complete set must share labels, roles and dimensions".into()));
        }
        positive &= eigh(input_transpose(op).matrix()).0[0] >= -eps;
        let t = output_trace(op);
        sum = Some(match sum {
            None => t,
            Some(s) => s.add(&t)?,
        });
    }
    let sum = sum.unwrap();
    let d = sum.dim();
    let dev = (sum.matrix() - CMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(positive && dev <= eps)
}

/// Conjugates each slot listed in `unitaries` by its unitary. Applying the
/// same unitary to both ends of every wire leaves closed circuits unchanged.
pub fn transform(op: &LabeledOperator, unitaries: &BTreeMap<WireLabel, CMatrix>) -> Result<LabeledOperator> {
    let mut u = CMatrix::identity(1, 1);
    for s in op.slots() {
        let factor = match unitaries.get(&s.label) {
            Some(m) => {
                if m.nrows() != s.dim || m.ncols() != s.dim {
                    return Err(Error::DimMismatch(format!("unitary for {} is {}x{}, slot has dimension {}", s.label, m.nrows(), m.ncols(), s.dim)));
                }
                let deviation = (m.adjoint() * m - CMatrix::identity(s.dim, s.dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
                if deviation > 1e-10 {
                    return Err(Error::NonUnitary { label: s.label.clone(), deviation });
                }
                m.clone()
            }
            None => CMatrix::identity(s.dim, s.dim),
        };
        u = u.kronecker(&factor);
    }
    let m = &u * op.matrix() * u.adjoint();
    Ok(LabeledOperator::from_raw(op.slots().to_vec(), m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternateTransposeReport {
    /// Smallest eigenvalue of each layer operator after the transposes.
    pub layer_margins: Vec<f64>,
    pub circuit_value: f64,
    pub transposed_value: f64,
    pub foliation: Foliation,
}

impl AlternateTransposeReport {
    pub fn all_positive(&self, eps: f64) -> bool {
        self.layer_margins.iter().all(|&m| m >= -eps)
    }
}

/// Foliates the circuit, pads wires with identity transformations, and
/// transposes every wire crossing an even-numbered hypersurface. Each layer
/// operator then carries either an input or an output transpose.
///
/// `ops[k]` is the operator bound to `frag.ops[k]`, already carrying the circuit's labels.
pub fn alternate_transpose_positivity(frag: &CircuitFragment, ops: &[LabeledOperator], eps: f64) -> Result<AlternateTransposeReport> {
    if ops.len() != frag.ops.len() {
        return Err(Error::ShapeMismatch(format!("{} operators for {} operations", ops.len(), frag.ops.len())));
    }
    for (decl, op) in frag.ops.iter().zip(ops) {
        if !is_physical(op, eps).physical {
            return Err(Error::NonPhysical(decl.name.clone()));
        }
    }
    let fol = foliate(frag);
    let layer: Vec<usize> = (0..frag.ops.len()).map(|k| fol.layer_of(k).unwrap()).collect();

    let mut next_id = frag.max_label_id().max(ops.iter().flat_map(|o| o.labels()).map(|l| l.id).max().unwrap_or(0)) + 1;
    // label crossing each boundary, per wire
    let mut crossing: BTreeMap<(usize, u32), WireLabel> = BTreeMap::new();
    let mut consumer_relabel: BTreeMap<u32, WireLabel> = BTreeMap::new();
    let mut layer_ops: Vec<Vec<LabeledOperator>> = vec![Vec::new(); fol.layers.len()];
    for w in &frag.wires {
        let (p, c) = (layer[w.producer], layer[w.consumer]);
        let dim = ops[w.producer].slot(&w.label).map(|s| s.dim).ok_or_else(|| Error::UnknownLabel(w.label.clone()))?;
        let mut current = w.label.clone();
        crossing.insert((p, w.label.id), current.clone());
        for (m, ops_m) in layer_ops.iter_mut().enumerate().take(c).skip(p + 1) {
            let out = WireLabel::new(w.label.sys.clone(), next_id);
            next_id += 1;
            ops_m.push(LabeledOperator::wire(current.clone(), out.clone(), dim));
            crossing.insert((m, out.id), out.clone());
            current = out;
        }
        consumer_relabel.insert(w.label.id, current);
    }
    for (k, op) in ops.iter().enumerate() {
        let relabeled = op.relabeled(|s| match (s.role, consumer_relabel.get(&s.label.id)) {
            (Role::Input, Some(l)) => l.clone(),
            _ => s.label.clone(),
        })?;
        layer_ops[layer[k]].push(relabeled);
    }

    let transposed_boundary = |b: usize| b.is_multiple_of(2);
    let mut layer_margins = Vec::new();
    let mut transposed_ops = Vec::new();
    for (k, members) in layer_ops.into_iter().enumerate() {
        let mut combined = LabeledOperator::scalar(1.0);
        for m in &members {
            combined = tensor_product(&combined, m)?;
        }
        let over: Vec<WireLabel> = combined
            .slots()
            .iter()
            .filter(|s| match s.role {
                Role::Output => transposed_boundary(k) && crossing.contains_key(&(k, s.label.id)),
                Role::Input => k > 0 && transposed_boundary(k - 1),
            })
            .map(|s| s.label.clone())
            .collect();
        let t = partial_transpose(&combined, &over)?;
        layer_margins.push(eigh(t.matrix()).0[0]);
        transposed_ops.push(t);
    }
    let circuit_value = circuit_trace(ops)?.value();
    let transposed_value = circuit_trace(&transposed_ops)?.value();
    Ok(AlternateTransposeReport { layer_margins, circuit_value, transposed_value, foliation: fol })
}

/// Labels contracted by the plan, in step order.
pub fn contracted_labels(plan: &ContractionPlan) -> BTreeSet<WireLabel> {
    plan.steps.iter().flat_map(|s| s.labels.iter().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_hermitian, random_kraus, random_physical, kraus_operator_tensor};
    use crate::notation::parse_circuit;

    fn l(s: &str) -> WireLabel {
        s.parse().unwrap()
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn prep0(label: &str) -> LabeledOperator {
        LabeledOperator::basis_projector(vec![Slot::output(l(label), 2)], 0)
    }

    fn result(label: &str, k: usize) -> LabeledOperator {
        LabeledOperator::basis_projector(vec![Slot::input(l(label), 2)], k)
    }

    /// Independent contraction oracle: take the full tensor product (second
    /// occurrence of each repeated id renamed), then sum matched index pairs
    /// entry by entry.
    fn one_shot(ops: &[LabeledOperator]) -> LabeledOperator {
        let mut seen = BTreeSet::new();
        let mut next = 1000;
        let mut pairs = Vec::new();
        let mut full = LabeledOperator::scalar(1.0);
        for op in ops {
            let renamed = op
                .relabeled(|s| {
                    if seen.insert(s.label.id) {
                        s.label.clone()
                    } else {
                        next += 1;
                        pairs.push((s.label.clone(), WireLabel::new(s.label.sys.clone(), next)));
                        WireLabel::new(s.label.sys.clone(), next)
                    }
                })
                .unwrap();
            full = tensor_product(&full, &renamed).unwrap();
        }
        let dims: Vec<usize> = full.slots().iter().map(|s| s.dim).collect();
        let n = dims.len();
        let paired: BTreeSet<usize> = pairs
            .iter()
            .flat_map(|(a, b)| [full.position(a).unwrap(), full.position(b).unwrap()])
            .collect();
        let keep: Vec<usize> = (0..n).filter(|p| !paired.contains(p)).collect();
        let st = strides(&dims);
        let digits = |mut flat: usize| {
            let mut d = vec![0; n];
            for k in (0..n).rev() {
                d[k] = flat % dims[k];
                flat /= dims[k];
            }
            d
        };
        let kd: usize = keep.iter().map(|&p| dims[p]).product();
        let ko = offsets(&dims, &st, &keep);
        let mut out = CMatrix::zeros(kd, kd);
        let total = full.dim();
        for r in 0..total {
            for col in 0..total {
                let (dr, dc) = (digits(r), digits(col));
                // for a pair (x, y): row x = col y and row y = col x
                let ok = pairs.iter().all(|(a, b)| {
                    let (pa, pb) = (full.position(a).unwrap(), full.position(b).unwrap());
                    dr[pa] == dc[pb] && dr[pb] == dc[pa]
                });
                if !ok {
                    continue;
                }
                let kr = ko.iter().position(|&o| o == keep.iter().map(|&p| dr[p] * st[p]).sum::<usize>()).unwrap();
                let kc = ko.iter().position(|&o| o == keep.iter().map(|&p| dc[p] * st[p]).sum::<usize>()).unwrap();
                out[(kr, kc)] += full.matrix()[(r, col)];
            }
        }
        LabeledOperator::from_raw(keep.iter().map(|&p| full.slots()[p].clone()).collect(), out)
    }

    #[test]
    fn matched_prep_and_result() {
        let v = circuit_trace(&[prep0("a1"), result("a1", 0)]).unwrap();
        assert!(v.slots().is_empty());
        assert!((v.value() - 1.0).abs() < 1e-15);
        let swap = LabeledOperator::wire(l("a1"), l("a2"), 2);
        let v = circuit_trace(&[prep0("a1"), swap, result("a2", 1)]).unwrap();
        assert!(v.value().abs() < 1e-15);
    }

    #[test]
    fn channel_matches_kraus_evolution() {
        let mut rng = rng_from_seed(7);
        for (din, dout) in [(2, 2), (2, 3), (3, 2)] {
            let rho = crate::linalg::random_density(din, 2, &mut rng);
            let ks = random_kraus(din, dout, 3, true, &mut rng);
            let op = kraus_operator_tensor(&ks, vec![Slot::input(l("a1"), din)], vec![Slot::output(l("b2"), dout)]).unwrap();
            let prep = LabeledOperator::new(vec![Slot::output(l("a1"), din)], rho.clone()).unwrap();
            let evolved = circuit_trace(&[prep.clone(), op.clone()]).unwrap();
            // oracle: sum_m K rho K^dagger
            let direct: CMatrix = ks.iter().map(|k| k * &rho * k.adjoint()).fold(CMatrix::zeros(dout, dout), |a, b| a + b);
            assert!((evolved.matrix() - &direct).camax() < 1e-12);
            let total = circuit_trace(&[prep, op, LabeledOperator::identity(vec![Slot::input(l("b2"), dout)])]).unwrap();
            assert!((total.value() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn contraction_matches_one_shot_oracle() {
        let mut rng = rng_from_seed(13);
        let f = parse_circuit("A^{a1 b2} B_{b2}^{c3 a4} C_{a1 c3 a4}").unwrap();
        let _ = f;
        let a = random_physical(vec![], vec![Slot::output(l("a1"), 2), Slot::output(l("b2"), 2)], true, &mut rng);
        let b = random_physical(vec![Slot::input(l("b2"), 2)], vec![Slot::output(l("c3"), 3), Slot::output(l("a4"), 2)], true, &mut rng);
        let cop = random_physical(vec![Slot::input(l("a1"), 2), Slot::input(l("c3"), 3), Slot::input(l("a4"), 2)], vec![], false, &mut rng);
        let ops = [a, b, cop];
        let greedy = circuit_trace(&ops).unwrap();
        let oracle = one_shot(&ops);
        assert!((greedy.value() - oracle.value()).abs() < 1e-12);
        let ltr = execute_plan(&ops, &left_to_right_plan(&ops).unwrap()).unwrap();
        assert!((greedy.value() - ltr.value()).abs() < 1e-12);

        // open fragment: compare full operators
        let frag = [ops[0].clone(), ops[1].clone()];
        let g = circuit_trace(&frag).unwrap();
        assert!(g.max_abs_diff(&one_shot(&frag)).unwrap() < 1e-12);
    }

    #[test]
    fn label_arity_errors() {
        assert!(matches!(circuit_trace(&[prep0("a1"), prep0("a1")]), Err(Error::LabelArity { .. })));
        let bad = LabeledOperator::basis_projector(vec![Slot::input(l("a1"), 3)], 0);
        assert!(matches!(circuit_trace(&[prep0("a1"), bad]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn chain_plan_stays_small() {
        let mut ops = vec![prep0("a1")];
        for k in 1..=12 {
            ops.push(LabeledOperator::wire(WireLabel::new("a", k), WireLabel::new("a", k + 1), 2));
        }
        ops.push(result("a13", 0));
        let plan = plan_contraction(&ops).unwrap();
        assert!(plan.peak_dim <= 16, "{plan}");
        assert!((execute_plan(&ops, &plan).unwrap().value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_operator_plan() {
        let op = LabeledOperator::wire(l("a1"), l("a2"), 3);
        let plan = plan_contraction(std::slice::from_ref(&op)).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.peak_dim, 9);
        assert_eq!(plan.to_string(), "");
    }

    #[test]
    fn disjoint_circuits_factorise() {
        let mut rng = rng_from_seed(21);
        let rho = crate::linalg::random_density(2, 2, &mut rng);
        let p = LabeledOperator::new(vec![Slot::output(l("a1"), 2)], rho).unwrap();
        let e = LabeledOperator::new(vec![Slot::input(l("a1"), 2)], crate::linalg::random_density(2, 1, &mut rng)).unwrap();
        let p2 = prep0("b2").relabeled(|_| l("b2")).unwrap();
        let e2 = result("b2", 0).relabeled(|_| l("b2")).unwrap();
        let ops = [p.clone(), p2.clone(), e.clone(), e2.clone()];
        let plan = plan_contraction(&ops).unwrap();
        let joint = execute_plan(&ops, &plan).unwrap().value();
        let sep = circuit_trace(&[p, e]).unwrap().value() * circuit_trace(&[p2, e2]).unwrap().value();
        assert!((joint - sep).abs() < 1e-12);
        // contracting steps never mix the components {0, 2} and {1, 3}
        let comp = |id: usize| if id == 0 || id == 2 || id == 4 { 0 } else { 1 };
        for s in plan.steps.iter().filter(|s| !s.labels.is_empty()) {
            assert_eq!(comp(s.left), comp(s.right));
        }
        assert_eq!(plan.steps.last().unwrap().labels.len(), 0);
    }

    #[test]
    fn transpose_through_trace() {
        let mut rng = rng_from_seed(4);
        let a = LabeledOperator::new(vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 3)], random_hermitian(6, &mut rng)).unwrap();
        let b = LabeledOperator::new(vec![Slot::input(l("b2"), 3), Slot::output(l("c5"), 2)], random_hermitian(6, &mut rng)).unwrap();
        let plain = circuit_trace(&[a.clone(), b.clone()]).unwrap();
        let at = partial_transpose(&a, &[l("b2")]).unwrap();
        let bt = partial_transpose(&b, &[l("b2")]).unwrap();
        let tr = circuit_trace(&[at, bt]).unwrap();
        assert!(plain.max_abs_diff(&tr).unwrap() < 1e-12);
    }

    #[test]
    fn identity_result_and_preparation() {
        let ir = LabeledOperator::identity(vec![Slot::input(l("a1"), 2)]);
        assert!(is_physical(&ir, PHYSICAL_EPS).physical);
        assert_eq!(input_transpose(&ir), ir);
        let ip = LabeledOperator::identity(vec![Slot::output(l("b2"), 2)]);
        let rep = is_physical(&ip, PHYSICAL_EPS);
        assert!(!rep.physical);
        assert!((rep.trace_margin - 1.0).abs() < 1e-12);
        let w = witness_nonphysical(&ip, PHYSICAL_EPS).unwrap();
        assert_eq!(w.kind, WitnessKind::Trace);
        assert!((w.value - 2.0).abs() < 1e-12);
        let s = sandwich_check(&ip, &[1, 2], 50, 0, PHYSICAL_EPS).unwrap();
        assert!(!s.pass);
        assert!(s.max_trace_value > 1.5);
    }

    #[test]
    fn swap_channel_is_physical() {
        let swap = LabeledOperator::wire(l("a1"), l("a2"), 2);
        let rep = is_physical(&swap, PHYSICAL_EPS);
        assert!(rep.physical);
        assert!(rep.positivity_margin.abs() < 1e-12);
        assert!(rep.trace_margin.abs() < 1e-12);
        let it = input_transpose(&swap);
        assert!((eigh(it.matrix()).0[3] - 2.0).abs() < 1e-12);
        assert_eq!(input_transpose(&it), swap);
        assert!(matches!(witness_nonphysical(&swap, PHYSICAL_EPS), Err(Error::NotApplicable)));
        assert!(sandwich_check(&swap, &default_ancilla_dims(&swap), 200, 1, PHYSICAL_EPS).unwrap().pass);
    }

    fn bell_pt_prep() -> LabeledOperator {
        // partial transpose of |phi+><phi+| on one factor is SWAP / 2
        let swap = LabeledOperator::wire(l("a1"), l("b2"), 2).scaled(0.5);
        swap.with_roles(Role::Output, &[l("a1")])
    }

    #[test]
    fn transposed_bell_preparation_witness() {
        let op = bell_pt_prep();
        let rep = is_physical(&op, PHYSICAL_EPS);
        assert!(!rep.physical);
        assert!((rep.positivity_margin + 0.5).abs() < 1e-12);
        let w = witness_nonphysical(&op, PHYSICAL_EPS).unwrap();
        assert_eq!(w.kind, WitnessKind::Positivity);
        assert!(w.value <= -0.5 + 1e-10, "{}", w.value);
    }

    #[test]
    fn transposed_bell_as_channel_witness() {
        // |phi+><phi+| read as a map from a1 to b2: input transpose is SWAP / 2,
        // whose negative eigenvalue -1/2 is reached as -1/2 / N_in = -1/4
        let mut v = CVector::zeros(4);
        v[0] = c(1.0);
        v[3] = c(1.0);
        let op = LabeledOperator::projector(vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 2)], &v).unwrap();
        let w = witness_nonphysical(&op, PHYSICAL_EPS).unwrap();
        assert_eq!(w.kind, WitnessKind::Positivity);
        assert!((w.value + 0.25).abs() < 1e-12, "{}", w.value);
        assert_eq!(w.circuit_text(&op, "B"), "W^{a1 g3} B_{a1}^{b2} V_{b2 g3}");
    }

    #[test]
    fn zero_operator_passes_sandwich() {
        let z = LabeledOperator::zero(vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 2)]);
        let s = sandwich_check(&z, &[1, 2, 4], 20, 3, PHYSICAL_EPS).unwrap();
        assert!(s.pass);
        assert_eq!(s.min_value, 0.0);
        assert_eq!(s.max_trace_value, 0.0);
    }

    #[test]
    fn complete_sets() {
        let p0 = result("a1", 0);
        let p1 = result("a1", 1);
        assert!(is_complete_set(&[p0.clone(), p1], PHYSICAL_EPS).unwrap());
        let swap = LabeledOperator::wire(l("a1"), l("a2"), 2);
        assert!(!is_complete_set(&[swap.clone(), swap.clone()], PHYSICAL_EPS).unwrap());
        assert!(matches!(is_complete_set(&[swap, p0], PHYSICAL_EPS), Err(Error::SignatureMismatch(_))));
    }

    #[test]
    fn transforms() {
        let mut rng = rng_from_seed(17);
        let op = random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("b2"), 3)], false, &mut rng);
        assert_eq!(transform(&op, &BTreeMap::new()).unwrap(), op);
        let mut us = BTreeMap::new();
        us.insert(l("a1"), crate::linalg::haar_unitary(2, &mut rng));
        us.insert(l("b2"), crate::linalg::haar_unitary(3, &mut rng));
        let t = transform(&op, &us).unwrap();
        assert!(is_physical(&t, PHYSICAL_EPS).physical);
        us.insert(l("a1"), CMatrix::identity(2, 2) * c(2.0));
        assert!(matches!(transform(&op, &us), Err(Error::NonUnitary { .. })));
        us.insert(l("a1"), CMatrix::identity(3, 3));
        assert!(matches!(transform(&op, &us), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn alternate_transposes_on_three_op_example() {
        let mut rng = rng_from_seed(31);
        let f = parse_circuit("A^{a1 b2} B_{b2}^{c3 a4} C_{a1 c3 a4}").unwrap();
        let a = random_physical(vec![], vec![Slot::output(l("a1"), 2), Slot::output(l("b2"), 2)], false, &mut rng);
        let b = random_physical(vec![Slot::input(l("b2"), 2)], vec![Slot::output(l("c3"), 2), Slot::output(l("a4"), 2)], false, &mut rng);
        let cop = random_physical(vec![Slot::input(l("a1"), 2), Slot::input(l("c3"), 2), Slot::input(l("a4"), 2)], vec![], false, &mut rng);
        let rep = alternate_transpose_positivity(&f, &[a, b, cop], PHYSICAL_EPS).unwrap();
        assert_eq!(rep.layer_margins.len(), 3);
        assert_eq!(rep.foliation.paddings.len(), 1);
        assert!(rep.all_positive(PHYSICAL_EPS), "{:?}", rep.layer_margins);
        assert!((rep.circuit_value - rep.transposed_value).abs() < 1e-12);
        assert!(rep.circuit_value <= 1.0 + 1e-10 && rep.circuit_value >= -1e-10);
    }

    #[test]
    fn alternate_transposes_on_prep_and_result() {
        let f = parse_circuit("A^{a1} B_{a1}").unwrap();
        let rep = alternate_transpose_positivity(&f, &[prep0("a1"), result("a1", 1)], PHYSICAL_EPS).unwrap();
        assert!(rep.all_positive(PHYSICAL_EPS));
        let ip = LabeledOperator::identity(vec![Slot::output(l("a1"), 2)]);
        assert!(matches!(
            alternate_transpose_positivity(&f, &[ip, result("a1", 1)], PHYSICAL_EPS),
            Err(Error::NonPhysical(_))
        ));
    }
}
