//! Labeled Hermitian operators.
//!
//! A [`LabeledOperator`] is a dense Hermitian matrix on the tensor product of
//! the spaces named by its slots, in slot order (first slot most significant).
//! Each slot carries a wire label, an input/output role and a dimension.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notation::{SystemType, WireLabel};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default absolute tolerance on `max |M - M^dagger|`.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Output,
}

impl Role {
    pub fn flip(self) -> Self {
        match self {
            Role::Input => Role::Output,
            Role::Output => Role::Input,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Input => "input",
            Role::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub label: WireLabel,
    pub role: Role,
    pub dim: usize,
}

impl Slot {
    pub fn new(label: WireLabel, role: Role, dim: usize) -> Self {
        Self { label, role, dim }
    }

    pub fn input(label: WireLabel, dim: usize) -> Self {
        Self::new(label, Role::Input, dim)
    }

    pub fn output(label: WireLabel, dim: usize) -> Self {
        Self::new(label, Role::Output, dim)
    }

    pub fn system_type(&self) -> SystemType {
        SystemType { name: self.label.sys.clone(), dim: self.dim }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    slots: Vec<Slot>,
    matrix: CMatrix,
}

pub(crate) fn total_dim(slots: &[Slot]) -> usize {
    slots.iter().map(|s| s.dim).product()
}

pub(crate) fn max_hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Row-major strides for a list of dimensions.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Flat offsets contributed by the slot positions in `subset`, enumerated in
/// row-major order over those positions.
pub(crate) fn offsets(dims: &[usize], strides: &[usize], subset: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for &p in subset {
        let mut next = Vec::with_capacity(out.len() * dims[p]);
        for &base in &out {
            for d in 0..dims[p] {
                next.push(base + d * strides[p]);
            }
        }
        out = next;
    }
    out
}

impl LabeledOperator {
    /// Builds an operator, checking size, label uniqueness and Hermiticity
    /// within [`HERMITIAN_TOL`]. The stored matrix is symmetrized.
    pub fn new(slots: Vec<Slot>, matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(slots, matrix, HERMITIAN_TOL)
    }

    pub fn with_tolerance(slots: Vec<Slot>, mut matrix: CMatrix, tol: f64) -> Result<Self> {
        let dim = total_dim(&slots);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimMismatch(format!(
                "matrix is {}x{} but slots require {dim}x{dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &slots {
            if s.dim == 0 {
                return Err(Error::DimMismatch(format!("slot {} has dimension 0", s.label)));
            }
            if !seen.insert(s.label.id) {
                return Err(Error::DuplicateLabel(s.label.clone()));
            }
        }
        let deviation = max_hermitian_deviation(&matrix);
        if deviation > tol {
            return Err(Error::NonHermitian { deviation });
        }
        symmetrize(&mut matrix);
        Ok(Self { slots, matrix })
    }

    /// Skips validation; callers guarantee Hermiticity up to rounding.
    pub(crate) fn from_raw(slots: Vec<Slot>, mut matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), total_dim(&slots));
        symmetrize(&mut matrix);
        Self { slots, matrix }
    }

    pub fn scalar(x: f64) -> Self {
        Self { slots: Vec::new(), matrix: CMatrix::from_element(1, 1, Complex64::new(x, 0.0)) }
    }

    pub fn identity(slots: Vec<Slot>) -> Self {
        let d = total_dim(&slots);
        Self { slots, matrix: CMatrix::identity(d, d) }
    }

    pub fn zero(slots: Vec<Slot>) -> Self {
        let d = total_dim(&slots);
        Self { slots, matrix: CMatrix::zeros(d, d) }
    }

    /// Rank-one projector `|v><v| / <v|v>`.
    pub fn projector(slots: Vec<Slot>, v: &CVector) -> Result<Self> {
        let d = total_dim(&slots);
        if v.len() != d {
            return Err(Error::DimMismatch(format!("vector of length {} for dimension {d}", v.len())));
        }
        let n = v.norm_squared();
        let m = v * v.adjoint() / Complex64::new(n, 0.0);
        Self::new(slots, m)
    }

    /// Projector onto the computational basis state with flat index `k`.
    pub fn basis_projector(slots: Vec<Slot>, k: usize) -> Self {
        let d = total_dim(&slots);
        let mut m = CMatrix::zeros(d, d);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        Self { slots, matrix: m }
    }

    /// The identity transformation from `input` to `output`, i.e. the swap
    /// operator `sum_ij |j><i| (x) |i><j|`.
    pub fn wire(input: WireLabel, output: WireLabel, dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim * dim, dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(j * dim + i, i * dim + j)] = Complex64::new(1.0, 0.0);
            }
        }
        Self { slots: vec![Slot::input(input, dim), Slot::output(output, dim)], matrix: m }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn labels(&self) -> impl Iterator<Item = &WireLabel> {
        self.slots.iter().map(|s| &s.label)
    }

    pub fn slot(&self, label: &WireLabel) -> Option<&Slot> {
        self.slots.iter().find(|s| &s.label == label)
    }

    pub fn position(&self, label: &WireLabel) -> Option<usize> {
        self.slots.iter().position(|s| &s.label == label)
    }

    pub fn labels_with_role(&self, role: Role) -> Vec<WireLabel> {
        self.slots.iter().filter(|s| s.role == role).map(|s| s.label.clone()).collect()
    }

    pub fn slots_with_role(&self, role: Role) -> Vec<Slot> {
        self.slots.iter().filter(|s| s.role == role).cloned().collect()
    }

    pub fn is_scalar(&self) -> bool {
        self.slots.iter().all(|s| s.dim == 1) && self.dim() == 1
    }

    /// The real value of a 1x1 operator.
    pub fn value(&self) -> f64 {
        self.matrix[(0, 0)].re
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn frobenius_inner(&self, other: &Self) -> Result<f64> {
        let other = other.aligned_to(self)?;
        Ok(self.matrix.iter().zip(other.matrix.iter()).map(|(a, b)| (a.conj() * b).re).sum())
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation from `other` after aligning slot order.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        let other = other.aligned_to(self)?;
        Ok((&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { slots: self.slots.clone(), matrix: &self.matrix * Complex64::new(factor, 0.0) }
    }

    /// Sum of two operators with the same label set; `other` is reordered to match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let other = other.aligned_to(self)?;
        Ok(Self { slots: self.slots.clone(), matrix: &self.matrix + &other.matrix })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// Renames labels through `f`, keeping roles and dimensions.
    pub fn relabeled(&self, mut f: impl FnMut(&Slot) -> WireLabel) -> Result<Self> {
        let slots: Vec<Slot> = self.slots.iter().map(|s| Slot { label: f(s), ..s.clone() }).collect();
        let mut seen = BTreeSet::new();
        for s in &slots {
            if !seen.insert(s.label.id) {
                return Err(Error::DuplicateLabel(s.label.clone()));
            }
        }
        Ok(Self { slots, matrix: self.matrix.clone() })
    }

    /// Changes the role of every slot in `labels`.
    pub fn with_roles(&self, role: Role, labels: &[WireLabel]) -> Self {
        let slots = self
            .slots
            .iter()
            .map(|s| if labels.contains(&s.label) { Slot { role, ..s.clone() } } else { s.clone() })
            .collect();
        Self { slots, matrix: self.matrix.clone() }
    }

    /// Reorders slots so that they follow `order`.
    pub fn permuted(&self, order: &[WireLabel]) -> Result<Self> {
        if order.len() != self.slots.len() {
            return Err(Error::SignatureMismatch(format!(
                "permutation of {} labels applied to {} slots",
                order.len(),
                self.slots.len()
            )));
        }
        let perm: Vec<usize> = order
            .iter()
            .map(|l| self.position(l).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect::<Result<_>>()?;
        let dims: Vec<usize> = self.slots.iter().map(|s| s.dim).collect();
        let off = offsets(&dims, &strides(&dims), &perm);
        let d = self.dim();
        let matrix = CMatrix::from_fn(d, d, |i, j| self.matrix[(off[i], off[j])]);
        let slots = perm.iter().map(|&p| self.slots[p].clone()).collect();
        Ok(Self { slots, matrix })
    }

    /// This operator with slots in the order used by `reference`.
    pub fn aligned_to(&self, reference: &Self) -> Result<Self> {
        if self.slots.len() != reference.slots.len() {
            return Err(Error::SignatureMismatch("operators carry different label sets".into()));
        }
        let order: Vec<WireLabel> = reference.labels().cloned().collect();
        let out = self.permuted(&order)?;
        if out.slots.iter().zip(&reference.slots).any(|(a, b)| a.dim != b.dim) {
            return Err(Error::DimMismatch("aligned slots differ in dimension".into()));
        }
        Ok(out)
    }

    fn positions(&self, over: &[WireLabel]) -> Result<Vec<usize>> {
        over.iter().map(|l| self.position(l).ok_or_else(|| Error::UnknownLabel(l.clone()))).collect()
    }

    fn dims(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.dim).collect()
    }
}

/// Kronecker product with labels of `a` followed by those of `b`.
pub fn tensor_product(a: &LabeledOperator, b: &LabeledOperator) -> Result<LabeledOperator> {
    for s in &b.slots {
        if a.slots.iter().any(|t| t.label.id == s.label.id) {
            return Err(Error::DuplicateLabel(s.label.clone()));
        }
    }
    let mut slots = a.slots.clone();
    slots.extend(b.slots.iter().cloned());
    Ok(LabeledOperator { slots, matrix: a.matrix.kronecker(&b.matrix) })
}

/// Traces out the slots in `over`; remaining slots keep their order.
pub fn partial_trace(a: &LabeledOperator, over: &[WireLabel]) -> Result<LabeledOperator> {
    let traced = a.positions(over)?;
    let keep: Vec<usize> = (0..a.slots.len()).filter(|p| !traced.contains(p)).collect();
    let dims = a.dims();
    let st = strides(&dims);
    let ok = offsets(&dims, &st, &keep);
    let ot = offsets(&dims, &st, &traced);
    let d = ok.len();
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for &t in &ot {
                acc += a.matrix[(ok[i] + t, ok[j] + t)];
            }
            m[(i, j)] = acc;
        }
    }
    let slots = keep.iter().map(|&p| a.slots[p].clone()).collect();
    Ok(LabeledOperator { slots, matrix: m })
}

/// Transposes the slots in `over` in the computational basis.
pub fn partial_transpose(a: &LabeledOperator, over: &[WireLabel]) -> Result<LabeledOperator> {
    let tp = a.positions(over)?;
    let keep: Vec<usize> = (0..a.slots.len()).filter(|p| !tp.contains(p)).collect();
    let dims = a.dims();
    let st = strides(&dims);
    let ok = offsets(&dims, &st, &keep);
    let ot = offsets(&dims, &st, &tp);
    let d = a.dim();
    let mut m = CMatrix::zeros(d, d);
    for &ka in &ok {
        for &tb in &ot {
            for &kc in &ok {
                for &td in &ot {
                    m[(ka + tb, kc + td)] = a.matrix[(ka + td, kc + tb)];
                }
            }
        }
    }
    Ok(LabeledOperator { slots: a.slots.clone(), matrix: m })
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

pub fn eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn check_hermitian(a: &LabeledOperator) -> Result<()> {
    let deviation = max_hermitian_deviation(&a.matrix);
    if deviation > HERMITIAN_TOL {
        return Err(Error::NonHermitian { deviation });
    }
    Ok(())
}

pub fn min_eigenvalue(a: &LabeledOperator) -> Result<f64> {
    check_hermitian(a)?;
    Ok(eigenvalues(&a.matrix)[0])
}

pub fn max_eigenvalue(a: &LabeledOperator) -> Result<f64> {
    check_hermitian(a)?;
    Ok(*eigenvalues(&a.matrix).last().unwrap())
}

pub fn is_psd(a: &LabeledOperator, eps: f64) -> Result<bool> {
    Ok(min_eigenvalue(a)? >= -eps)
}

/// Seeded generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_complex_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Haar-random unit vector.
pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(dim, |_, _| gaussian(rng));
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Haar-random unitary (QR of a Ginibre matrix with phases fixed).
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let qr = random_complex_matrix(dim, dim, rng).qr();
    let (mut q, r) = qr.unpack();
    for c in 0..dim {
        let d = r[(c, c)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for row in 0..dim {
            q[(row, c)] *= phase;
        }
    }
    q
}

pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_complex_matrix(dim, dim, rng);
    (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Mixed state obtained as the marginal of a Haar-random pure state on a
/// `dim * env` dimensional space.
pub fn random_density<R: Rng + ?Sized>(dim: usize, env: usize, rng: &mut R) -> CMatrix {
    let psi = haar_state(dim * env, rng);
    CMatrix::from_fn(dim, dim, |i, j| (0..env).map(|e| psi[i * env + e] * psi[j * env + e].conj()).sum())
}

/// Random Kraus operators `K_m : C^d_in -> C^d_out` with `sum K^dagger K <= I`.
/// When `complete` is set the sum equals the identity.
pub fn random_kraus<R: Rng + ?Sized>(d_in: usize, d_out: usize, count: usize, complete: bool, rng: &mut R) -> Vec<CMatrix> {
    let ks: Vec<CMatrix> = (0..count).map(|_| random_complex_matrix(d_out, d_in, rng)).collect();
    let s: CMatrix = ks.iter().map(|k| k.adjoint() * k).fold(CMatrix::zeros(d_in, d_in), |a, b| a + b);
    let (vals, vecs) = eigh(&s);
    if complete {
        let inv_sqrt = CMatrix::from_diagonal(&DVector::from_iterator(
            d_in,
            vals.iter().map(|&v| Complex64::new(1.0 / v.sqrt(), 0.0)),
        ));
        let t = &vecs * inv_sqrt * vecs.adjoint();
        ks.into_iter().map(|k| k * &t).collect()
    } else {
        let shrink: f64 = rng.random_range(0.5..1.0);
        let c = Complex64::new((shrink / vals[d_in - 1]).sqrt(), 0.0);
        ks.into_iter().map(|k| k * c).collect()
    }
}

/// The operator of the map `rho -> sum K rho K^dagger`, i.e. the input
/// transpose of its Choi matrix, on slots `inputs ++ outputs`.
pub fn kraus_operator_tensor(kraus: &[CMatrix], inputs: Vec<Slot>, outputs: Vec<Slot>) -> Result<LabeledOperator> {
    let d_in = total_dim(&inputs);
    let d_out = total_dim(&outputs);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(Error::DimMismatch(format!(
                "Kraus operator is {}x{}, expected {d_out}x{d_in}",
                k.nrows(),
                k.ncols()
            )));
        }
    }
    let d = d_in * d_out;
    // B[(j,o),(i,o')] = sum_m K_m[o,i] conj(K_m[o',j])
    let mut m = CMatrix::zeros(d, d);
    for k in kraus {
        for j in 0..d_in {
            for o in 0..d_out {
                for i in 0..d_in {
                    for o2 in 0..d_out {
                        m[(j * d_out + o, i * d_out + o2)] += k[(o, i)] * k[(o2, j)].conj();
                    }
                }
            }
        }
    }
    let mut slots = inputs;
    slots.extend(outputs);
    LabeledOperator::new(slots, m)
}

/// Random physical operator on `inputs ++ outputs`, drawn from random Kraus
/// operators. `complete` forces a trace-preserving map.
pub fn random_physical<R: Rng + ?Sized>(inputs: Vec<Slot>, outputs: Vec<Slot>, complete: bool, rng: &mut R) -> LabeledOperator {
    let d_in = total_dim(&inputs);
    let d_out = total_dim(&outputs);
    // a trace-preserving map needs count * d_out >= d_in
    let least = if complete { d_in.div_ceil(d_out) } else { 1 };
    let count = rng.random_range(least..=(d_in * d_out).clamp(1, 4).max(least));
    let ks = random_kraus(d_in, d_out, count, complete, rng);
    kraus_operator_tensor(&ks, inputs, outputs).expect("shapes agree by construction")
}

/// Random physical transformation from a system of `input` type (label id 1)
/// to a system of `output` type (label id 2).
pub fn random_physical_transformation(input: &SystemType, output: &SystemType, seed: u64) -> LabeledOperator {
    let mut rng = rng_from_seed(seed);
    random_physical(
        vec![Slot::input(WireLabel::new(input.name.clone(), 1), input.dim)],
        vec![Slot::output(WireLabel::new(output.name.clone(), 2), output.dim)],
        false,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn l(s: &str) -> WireLabel {
        s.parse().unwrap()
    }

    fn bell() -> LabeledOperator {
        let mut v = CVector::zeros(4);
        v[0] = c(1.0);
        v[3] = c(1.0);
        LabeledOperator::projector(vec![Slot::output(l("a1"), 2), Slot::output(l("b2"), 2)], &v).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(0.0), c(1.0)]);
        assert!(matches!(
            LabeledOperator::new(vec![Slot::output(l("a1"), 2)], m),
            Err(Error::NonHermitian { .. })
        ));
        assert!(matches!(
            LabeledOperator::new(vec![Slot::output(l("a1"), 2)], CMatrix::identity(3, 3)),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(
            LabeledOperator::new(vec![Slot::output(l("a1"), 2), Slot::input(l("a1"), 2)], CMatrix::identity(4, 4)),
            Err(Error::DuplicateLabel(_))
        ));
    }

    #[test]
    fn tensor_products() {
        let i2 = LabeledOperator::identity(vec![Slot::output(l("a1"), 2)]);
        let i3 = LabeledOperator::identity(vec![Slot::output(l("b2"), 3)]);
        let p = tensor_product(&i2, &i3).unwrap();
        assert_eq!(p.matrix(), &CMatrix::identity(6, 6));

        let p0 = LabeledOperator::basis_projector(vec![Slot::output(l("a1"), 2)], 0);
        let p1 = LabeledOperator::basis_projector(vec![Slot::output(l("b2"), 2)], 1);
        let t = tensor_product(&p0, &p1).unwrap();
        let diag: Vec<f64> = (0..4).map(|k| t.matrix()[(k, k)].re).collect();
        assert_eq!(diag, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.trace(), 1.0);

        assert!(matches!(tensor_product(&i2, &i2), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn tensor_product_commutes_up_to_permutation() {
        let mut rng = rng_from_seed(3);
        let a = LabeledOperator::new(vec![Slot::output(l("a1"), 2)], random_hermitian(2, &mut rng)).unwrap();
        let b = LabeledOperator::new(vec![Slot::input(l("b2"), 3)], random_hermitian(3, &mut rng)).unwrap();
        let ab = tensor_product(&a, &b).unwrap();
        let ba = tensor_product(&b, &a).unwrap();
        // independent oracle: conjugate by the explicit swap permutation matrix
        let mut perm = CMatrix::zeros(6, 6);
        for i in 0..2 {
            for j in 0..3 {
                perm[(j * 2 + i, i * 3 + j)] = c(1.0);
            }
        }
        let swapped = &perm * ab.matrix() * perm.transpose();
        assert!((swapped - ba.matrix()).camax() < 1e-14);
        assert!(ab.max_abs_diff(&ba).unwrap() < 1e-14);
    }

    #[test]
    fn partial_traces() {
        let rho = partial_trace(&bell(), &[l("b2")]).unwrap();
        assert_eq!(rho.slots().len(), 1);
        assert!((rho.matrix() - CMatrix::identity(2, 2) * c(0.5)).camax() < 1e-15);

        let mut rng = rng_from_seed(5);
        let a = LabeledOperator::new(vec![Slot::output(l("a1"), 3)], random_hermitian(3, &mut rng)).unwrap();
        let b = LabeledOperator::new(
            vec![Slot::input(l("b2"), 2), Slot::output(l("c3"), 2)],
            random_hermitian(4, &mut rng),
        )
        .unwrap();
        let ab = tensor_product(&a, &b).unwrap();
        let reduced = partial_trace(&ab, &[l("b2"), l("c3")]).unwrap();
        assert!(reduced.max_abs_diff(&a.scaled(b.trace())).unwrap() < 1e-12);

        for n in 1..=4 {
            let swap = LabeledOperator::wire(l("a1"), l("a2"), n);
            // summation oracle: Tr SWAP = sum_ij <ij|ji> = N
            let t = partial_trace(&swap, &[l("a1"), l("a2")]).unwrap();
            assert!(t.slots().is_empty());
            assert!((t.value() - n as f64).abs() < 1e-14);
        }
        assert!(matches!(partial_trace(&bell(), &[l("z9")]), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn partial_transposes() {
        let id = LabeledOperator::identity(vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 3)]);
        assert_eq!(partial_transpose(&id, &[l("a1")]).unwrap(), id);

        // entrywise oracle: SWAP^{T_a} = sum_ij |j><i| (x) |j><i| ... = 2|phi+><phi+|
        let swap = LabeledOperator::wire(l("a1"), l("b2"), 2);
        let pt = partial_transpose(&swap, &[l("a1")]).unwrap();
        let mut phi = CMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                phi[(i * 2 + i, j * 2 + j)] = c(1.0);
            }
        }
        assert!((pt.matrix() - phi).camax() < 1e-15);

        let bt = partial_transpose(&bell(), &[l("a1")]).unwrap();
        assert!((min_eigenvalue(&bt).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(partial_transpose(&bt, &[l("a1")]).unwrap(), bell());
    }

    #[test]
    fn eigenvalue_extremes() {
        let i4 = LabeledOperator::identity(vec![Slot::output(l("a1"), 4)]);
        assert!((min_eigenvalue(&i4).unwrap() - 1.0).abs() < 1e-14);
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(3.0), c(-2.0)]));
        let op = LabeledOperator::new(vec![Slot::output(l("a1"), 2)], d).unwrap();
        assert!((min_eigenvalue(&op).unwrap() + 2.0).abs() < 1e-14);
        assert!((max_eigenvalue(&op).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn shifted_spectrum_is_nonnegative() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let a = LabeledOperator::new(vec![Slot::output(l("a1"), 6)], random_hermitian(6, &mut rng)).unwrap();
            let lmin = min_eigenvalue(&a).unwrap();
            let shifted = a.sub(&LabeledOperator::identity(a.slots().to_vec()).scaled(lmin)).unwrap();
            assert!(min_eigenvalue(&shifted).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn permutation_round_trip() {
        let mut rng = rng_from_seed(2);
        let slots = vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 3), Slot::output(l("c3"), 2)];
        let a = LabeledOperator::new(slots, random_hermitian(12, &mut rng)).unwrap();
        let p = a.permuted(&[l("c3"), l("a1"), l("b2")]).unwrap();
        assert_eq!(p.slots()[0].label, l("c3"));
        assert!(p.aligned_to(&a).unwrap().max_abs_diff(&a).unwrap() == 0.0);
    }

    #[test]
    fn random_transformation_is_reproducible() {
        let a = SystemType::new("a", 2).unwrap();
        let b = SystemType::new("b", 3).unwrap();
        let x = random_physical_transformation(&a, &b, 42);
        let y = random_physical_transformation(&a, &b, 42);
        assert_eq!(x, y);
        assert_ne!(x, random_physical_transformation(&a, &b, 43));
        assert_eq!(x.dim(), 6);
    }

    #[test]
    fn complete_kraus_gives_identity_output_trace() {
        let mut rng = rng_from_seed(9);
        for (din, dout) in [(2, 2), (2, 3), (3, 2)] {
            let ks = random_kraus(din, dout, 3, true, &mut rng);
            let op = kraus_operator_tensor(
                &ks,
                vec![Slot::input(l("a1"), din)],
                vec![Slot::output(l("b2"), dout)],
            )
            .unwrap();
            let t = partial_trace(&op, &[l("b2")]).unwrap();
            assert!((t.matrix() - CMatrix::identity(din, din)).camax() < 1e-12);
        }
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = rng_from_seed(1);
        let u = haar_unitary(4, &mut rng);
        assert!((u.adjoint() * &u - CMatrix::identity(4, 4)).camax() < 1e-12);
    }
}
