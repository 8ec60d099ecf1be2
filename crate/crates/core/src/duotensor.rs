//! Fiducial bases, the hopping metric, and duotensor coefficient arrays.
//!
//! A duotensor index is white when it holds expansion coefficients in a
//! fiducial basis and black when it holds probabilities against fiducials.
//! For an input index the white basis is the fiducial results and the black
//! form pairs it with fiducial preparations; output indices are the reverse.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, CMatrix, CVector, LabeledOperator, Role, Slot};
use crate::notation::{SystemType, WireLabel};
use crate::optensor::circuit_trace;

pub type RMatrix = DMatrix<f64>;

/// Metric condition numbers above this are reported as a warning.
pub const CONDITION_WARNING: f64 = 1e8;

const SINGULAR_RATIO: f64 = 1e-13;

/// A spanning family of physical preparations and results for one system type.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialSet {
    pub sys_type: SystemType,
    /// Each with a single output slot.
    pub preps: Vec<LabeledOperator>,
    /// Each with a single input slot.
    pub results: Vec<LabeledOperator>,
    /// `metric[i][j]` is the probability of prep `i` followed by result `j`.
    pub metric: RMatrix,
    pub metric_inv: RMatrix,
}

fn condition(m: &RMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn invert(m: &RMatrix, err: impl Fn() -> Error) -> Result<RMatrix> {
    if condition(m) > 1.0 / SINGULAR_RATIO {
        return Err(err());
    }
    m.clone().try_inverse().ok_or_else(err)
}

impl FiducialSet {
    /// Builds a set from `N x N` matrices, checking physicality and that the metric is invertible.
    pub fn new(sys_type: SystemType, preps: Vec<CMatrix>, results: Vec<CMatrix>, eps: f64) -> Result<Self> {
        let n = sys_type.dim;
        let k = sys_type.fiducial_count();
        if preps.len() != k || results.len() != k {
            return Err(Error::SingularBasis(sys_type.name.clone()));
        }
        let label = WireLabel::new(sys_type.name.clone(), 1);
        let mut p_ops = Vec::with_capacity(k);
        let mut r_ops = Vec::with_capacity(k);
        for (idx, m) in preps.into_iter().enumerate() {
            let op = LabeledOperator::new(vec![Slot::output(label.clone(), n)], m)?;
            let ev = eigh(op.matrix()).0;
            if ev[0] < -eps || op.trace() > 1.0 + eps {
                return Err(Error::NonPhysical(format!("fiducial preparation {idx} of type {}", sys_type.name)));
            }
            p_ops.push(op);
        }
        for (idx, m) in results.into_iter().enumerate() {
            let op = LabeledOperator::new(vec![Slot::input(label.clone(), n)], m)?;
            let ev = eigh(op.matrix()).0;
            if ev[0] < -eps || ev[n - 1] > 1.0 + eps {
                return Err(Error::NonPhysical(format!("fiducial result {idx} of type {}", sys_type.name)));
            }
            r_ops.push(op);
        }
        let metric = compute_metric(&p_ops, &r_ops)?;
        let metric_inv = invert(&metric, || Error::SingularMetric(sys_type.name.clone()))?;
        Ok(FiducialSet { sys_type, preps: p_ops, results: r_ops, metric, metric_inv })
    }

    pub fn count(&self) -> usize {
        self.preps.len()
    }

    pub fn condition_number(&self) -> f64 {
        condition(&self.metric)
    }

    /// The basis in which an index of the given role is expanded.
    fn basis(&self, role: Role) -> &[LabeledOperator] {
        match role {
            Role::Input => &self.results,
            Role::Output => &self.preps,
        }
    }

    /// White-to-black map for an index of the given role.
    pub fn to_black(&self, role: Role) -> RMatrix {
        match role {
            Role::Input => self.metric.clone(),
            Role::Output => self.metric.transpose(),
        }
    }

    /// Black-to-white map for an index of the given role.
    pub fn to_white(&self, role: Role) -> RMatrix {
        match role {
            Role::Input => self.metric_inv.clone(),
            Role::Output => self.metric_inv.transpose(),
        }
    }
}

fn compute_metric(preps: &[LabeledOperator], results: &[LabeledOperator]) -> Result<RMatrix> {
    let k = preps.len();
    let mut g = RMatrix::zeros(k, k);
    for (i, p) in preps.iter().enumerate() {
        for (j, r) in results.iter().enumerate() {
            g[(i, j)] = circuit_trace(&[p.clone(), r.clone()])?.value();
        }
    }
    Ok(g)
}

/// Recomputes the metric of a set from its preparations and results.
pub fn hopping_metric(fset: &FiducialSet) -> Result<RMatrix> {
    compute_metric(&fset.preps, &fset.results)
}

/// The default basis states: every `|j>`, then for each `j < k` the states
/// `(|j> + |k>)/sqrt 2` and `(|j> + i|k>)/sqrt 2`.
pub fn default_fiducial_states(dim: usize) -> Vec<CVector> {
    let mut states = Vec::with_capacity(dim * dim);
    for j in 0..dim {
        let mut v = CVector::zeros(dim);
        v[j] = Complex64::new(1.0, 0.0);
        states.push(v);
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..dim {
        for k in j + 1..dim {
            for phase in [Complex64::new(h, 0.0), Complex64::new(0.0, h)] {
                let mut v = CVector::zeros(dim);
                v[j] = Complex64::new(h, 0.0);
                v[k] = phase;
                states.push(v);
            }
        }
    }
    states
}

pub fn default_fiducials(sys_type: &SystemType) -> Result<FiducialSet> {
    let projectors: Vec<CMatrix> = default_fiducial_states(sys_type.dim).iter().map(|v| v * v.adjoint()).collect();
    FiducialSet::new(sys_type.clone(), projectors.clone(), projectors, 1e-12)
}

/// Fiducial sets keyed by system type name.
pub type FiducialSets = BTreeMap<String, FiducialSet>;

/// Default fiducial sets for every type appearing on the operator.
pub fn default_fiducials_for(op: &LabeledOperator) -> Result<FiducialSets> {
    let mut sets = FiducialSets::new();
    for s in op.slots() {
        if !sets.contains_key(&s.label.sys) {
            sets.insert(s.label.sys.clone(), default_fiducials(&s.system_type())?);
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DotColor {
    Black,
    White,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuoIndex {
    pub label: WireLabel,
    pub dim: usize,
    pub role: Role,
    pub color: DotColor,
}

impl DuoIndex {
    /// Number of fiducial elements, `dim^2`.
    pub fn size(&self) -> usize {
        self.dim * self.dim
    }
}

/// Real coefficient array, row-major over the indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Duotensor {
    pub indices: Vec<DuoIndex>,
    pub data: Vec<f64>,
}

impl Duotensor {
    pub fn new(indices: Vec<DuoIndex>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = indices.iter().map(DuoIndex::size).product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!("duotensor data has {} entries, indices need {expected}", data.len())));
        }
        Ok(Duotensor { indices, data })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.indices.iter().map(DuoIndex::size).collect()
    }

    pub fn max_abs_diff(&self, other: &Duotensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn fset<'a>(&self, k: usize, fsets: &'a FiducialSets) -> Result<&'a FiducialSet> {
        let idx = &self.indices[k];
        let f = fsets.get(&idx.label.sys).ok_or_else(|| Error::MissingFiducials(idx.label.sys.clone()))?;
        if f.sys_type.dim != idx.dim {
            return Err(Error::DimMismatch(format!("fiducials for {} have dimension {}, index {} has {}", idx.label.sys, f.sys_type.dim, idx.label, idx.dim)));
        }
        Ok(f)
    }
}

/// Applies `m` along axis `mode` of a row-major array of the given shape.
fn mode_product<T>(data: &[T], shape: &[usize], mode: usize, m: impl Fn(usize, usize) -> T, rows: usize) -> Vec<T>
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<Output = T>,
{
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let cols = shape[mode];
    let mut out = vec![T::default(); outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            for c in 0..cols {
                let w = m(r, c);
                let src = (o * cols + c) * inner;
                let dst = (o * rows + r) * inner;
                for i in 0..inner {
                    out[dst + i] = out[dst + i] + w * data[src + i];
                }
            }
        }
    }
    out
}

/// Reorders a matrix on slots `d_1..d_n` into an array over the pairs `(r_k, c_k)`.
fn matrix_to_pairs(m: &CMatrix, dims: &[usize]) -> Vec<Complex64> {
    let total = m.nrows();
    let n = dims.len();
    let mut out = vec![Complex64::default(); total * total];
    let mut rd = vec![0; n];
    let mut cd = vec![0; n];
    for r in 0..total {
        digits(r, dims, &mut rd);
        for c in 0..total {
            digits(c, dims, &mut cd);
            out[pair_index(&rd, &cd, dims)] = m[(r, c)];
        }
    }
    out
}

fn pairs_to_matrix(data: &[Complex64], dims: &[usize]) -> CMatrix {
    let total: usize = dims.iter().product();
    let n = dims.len();
    let mut rd = vec![0; n];
    let mut cd = vec![0; n];
    CMatrix::from_fn(total, total, |r, c| {
        digits(r, dims, &mut rd);
        digits(c, dims, &mut cd);
        data[pair_index(&rd, &cd, dims)]
    })
}

fn digits(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = flat % dims[k];
        flat /= dims[k];
    }
}

fn pair_index(rd: &[usize], cd: &[usize], dims: &[usize]) -> usize {
    let mut idx = 0;
    for k in 0..dims.len() {
        idx = idx * dims[k] * dims[k] + rd[k] * dims[k] + cd[k];
    }
    idx
}

/// Gram-dual of a basis: `Tr(dual_k basis_j) = delta_kj`.
fn dual_basis(basis: &[LabeledOperator], sys: &str) -> Result<Vec<CMatrix>> {
    let k = basis.len();
    let gram = RMatrix::from_fn(k, k, |j, m| (basis[j].matrix() * basis[m].matrix()).trace().re);
    let inv = invert(&gram, || Error::SingularBasis(sys.to_string()))?;
    Ok((0..k)
        .map(|a| {
            basis.iter().enumerate().fold(CMatrix::zeros(basis[0].dim(), basis[0].dim()), |acc, (m, x)| {
                acc + x.matrix() * Complex64::new(inv[(a, m)], 0.0)
            })
        })
        .collect())
}

/// Expansion coefficients of `op` in the tensor-product fiducial basis
/// (results on inputs, preparations on outputs). Index order follows the
/// operator's slots.
pub fn decompose(op: &LabeledOperator, fsets: &FiducialSets) -> Result<Duotensor> {
    let dims: Vec<usize> = op.slots().iter().map(|s| s.dim).collect();
    let indices: Vec<DuoIndex> = op
        .slots()
        .iter()
        .map(|s| DuoIndex { label: s.label.clone(), dim: s.dim, role: s.role, color: DotColor::White })
        .collect();
    let shell = Duotensor { indices, data: Vec::new() };
    let mut shape: Vec<usize> = dims.iter().map(|d| d * d).collect();
    let mut data = matrix_to_pairs(op.matrix(), &dims);
    for (k, s) in op.slots().iter().enumerate() {
        let f = shell.fset(k, fsets)?;
        let duals = dual_basis(f.basis(s.role), &f.sys_type.name)?;
        let d = s.dim;
        // coefficient k gets Tr(dual_k A): sum over (r, c) of dual[c][r] A[r][c]
        data = mode_product(&data, &shape, k, |row, col| duals[row][(col % d, col / d)], f.count());
        shape[k] = f.count();
    }
    let mut out = shell;
    out.data = data.iter().map(|z| z.re).collect();
    Ok(out)
}

/// Inverse of [`decompose`]: all indices must be white.
pub fn reconstruct(dt: &Duotensor, fsets: &FiducialSets) -> Result<LabeledOperator> {
    if let Some(i) = dt.indices.iter().find(|i| i.color != DotColor::White) {
        return Err(Error::ShapeMismatch(format!("index {} is black; reconstruction needs white indices", i.label)));
    }
    let mut shape = dt.shape();
    if dt.data.len() != shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch("duotensor data does not match its indices".into()));
    }
    let mut data: Vec<Complex64> = dt.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    for (k, idx) in dt.indices.iter().enumerate() {
        let f = dt.fset(k, fsets)?;
        let basis = f.basis(idx.role);
        let d = idx.dim;
        data = mode_product(&data, &shape, k, |row, col| basis[col].matrix()[(row / d, row % d)], d * d);
        shape[k] = d * d;
    }
    let dims: Vec<usize> = dt.indices.iter().map(|i| i.dim).collect();
    let slots = dt.indices.iter().map(|i| Slot::new(i.label.clone(), i.role, i.dim)).collect();
    LabeledOperator::with_tolerance(slots, pairs_to_matrix(&data, &dims), 1e-8)
}

/// Converts each index to the requested color.
pub fn convert_dots(dt: &Duotensor, colors: &[DotColor], fsets: &FiducialSets) -> Result<Duotensor> {
    if colors.len() != dt.indices.len() {
        return Err(Error::ShapeMismatch(format!("{} colors for {} indices", colors.len(), dt.indices.len())));
    }
    let shape = dt.shape();
    let mut data = dt.data.clone();
    let mut indices = dt.indices.clone();
    for (k, &target) in colors.iter().enumerate() {
        if indices[k].color == target {
            continue;
        }
        let f = dt.fset(k, fsets)?;
        let m = match target {
            DotColor::Black => f.to_black(indices[k].role),
            DotColor::White => f.to_white(indices[k].role),
        };
        data = mode_product(&data, &shape, k, |r, c| m[(r, c)], m.nrows());
        indices[k].color = target;
    }
    Ok(Duotensor { indices, data })
}

pub fn convert_all(dt: &Duotensor, color: DotColor, fsets: &FiducialSets) -> Result<Duotensor> {
    convert_dots(dt, &vec![color; dt.indices.len()], fsets)
}

/// The wire operator expanded through the inverse metric:
/// `sum_{jk} metric_inv[j][k] result_j (x) prep_k`, on (input, output).
pub fn wire_expansion(fset: &FiducialSet, input: WireLabel, output: WireLabel) -> Result<LabeledOperator> {
    let n = fset.sys_type.dim;
    let mut m = CMatrix::zeros(n * n, n * n);
    for (j, r) in fset.results.iter().enumerate() {
        for (k, p) in fset.preps.iter().enumerate() {
            m += r.matrix().kronecker(p.matrix()) * Complex64::new(fset.metric_inv[(j, k)], 0.0);
        }
    }
    LabeledOperator::with_tolerance(vec![Slot::input(input, n), Slot::output(output, n)], m, 1e-8)
}

/// Max-entry deviation between the fiducial expansion of a wire and the wire operator.
pub fn wire_decomposition_error(fset: &FiducialSet) -> Result<f64> {
    let (a, b) = (WireLabel::new(fset.sys_type.name.clone(), 1), WireLabel::new(fset.sys_type.name.clone(), 2));
    let expanded = wire_expansion(fset, a.clone(), b.clone())?;
    expanded.max_abs_diff(&LabeledOperator::wire(a, b, fset.sys_type.dim))
}

pub fn check_wire_decomposition(fset: &FiducialSet, tol: f64) -> bool {
    wire_decomposition_error(fset).is_ok_and(|e| e <= tol)
}

/// Wire decomposition with the default fiducials of a type.
pub fn wire_decomposition_check(sys_type: &SystemType) -> Result<bool> {
    Ok(check_wire_decomposition(&default_fiducials(sys_type)?, 1e-10))
}
