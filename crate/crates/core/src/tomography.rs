//! Process tomography: probe a black box with fiducial preparations on its
//! inputs and fiducial results on its outputs, then invert the metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;

use crate::duotensor::{convert_all, reconstruct, DotColor, DuoIndex, Duotensor, FiducialSet, FiducialSets};
use crate::error::{Error, Result};
use crate::linalg::{LabeledOperator, Role, Slot};
use crate::optensor::circuit_trace;

/// An operation that can only be run inside circuits.
pub trait BlackBox {
    /// The slots of the operation, in the order used for probe indices.
    fn signature(&self) -> &[Slot];

    /// Probability of the circuit closed by `fixtures`, one per signature slot:
    /// a preparation on each input and a result on each output. `entry` is the
    /// row-major index of the fiducial choice.
    fn eval(&self, entry: usize, fixtures: &[LabeledOperator]) -> Result<f64>;
}

/// Returns exact circuit probabilities of a hidden operator.
#[derive(Debug, Clone)]
pub struct ExactBox {
    hidden: LabeledOperator,
}

impl ExactBox {
    pub fn new(hidden: LabeledOperator) -> Self {
        ExactBox { hidden }
    }
}

impl BlackBox for ExactBox {
    fn signature(&self) -> &[Slot] {
        self.hidden.slots()
    }

    fn eval(&self, _entry: usize, fixtures: &[LabeledOperator]) -> Result<f64> {
        let mut ops = Vec::with_capacity(fixtures.len() + 1);
        ops.push(self.hidden.clone());
        ops.extend_from_slice(fixtures);
        Ok(circuit_trace(&ops)?.value())
    }
}

/// Estimates each probability as the frequency of `shots` Bernoulli trials.
/// Each entry draws from its own stream of the seeded generator, so values do
/// not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct SampledBox {
    exact: ExactBox,
    shots: u64,
    seed: u64,
}

impl SampledBox {
    pub fn new(hidden: LabeledOperator, shots: u64, seed: u64) -> Self {
        SampledBox { exact: ExactBox::new(hidden), shots, seed }
    }
}

impl BlackBox for SampledBox {
    fn signature(&self) -> &[Slot] {
        self.exact.signature()
    }

    fn eval(&self, entry: usize, fixtures: &[LabeledOperator]) -> Result<f64> {
        let p = self.exact.eval(entry, fixtures)?.clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(entry as u64);
        let dist = Binomial::new(self.shots, p).map_err(|e| Error::Format(e.to_string()))?;
        Ok(rng.sample(dist) as f64 / self.shots as f64)
    }
}

fn fset_for<'a>(slot: &Slot, fsets: &'a FiducialSets) -> Result<&'a FiducialSet> {
    let f = fsets.get(&slot.label.sys).ok_or_else(|| Error::MissingFiducials(slot.label.sys.clone()))?;
    if f.sys_type.dim != slot.dim {
        return Err(Error::DimMismatch(format!("fiducials for {} have dimension {}, slot {} has {}", slot.label.sys, f.sys_type.dim, slot.label, slot.dim)));
    }
    Ok(f)
}

/// Runs every fiducial circuit, giving the all-black duotensor.
pub fn probe(bb: &dyn BlackBox, fsets: &FiducialSets) -> Result<Duotensor> {
    let sig = bb.signature();
    let mut fixtures: Vec<Vec<LabeledOperator>> = Vec::with_capacity(sig.len());
    for s in sig {
        let f = fset_for(s, fsets)?;
        let family = match s.role {
            Role::Input => &f.preps,
            Role::Output => &f.results,
        };
        fixtures.push(family.iter().map(|op| op.relabeled(|_| s.label.clone())).collect::<Result<_>>()?);
    }
    let shape: Vec<usize> = fixtures.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut choice = vec![0usize; sig.len()];
    for entry in 0..total {
        let mut rest = entry;
        for k in (0..shape.len()).rev() {
            choice[k] = rest % shape[k];
            rest /= shape[k];
        }
        let chosen: Vec<LabeledOperator> = choice.iter().enumerate().map(|(k, &c)| fixtures[k][c].clone()).collect();
        data.push(bb.eval(entry, &chosen)?);
    }
    let indices = sig
        .iter()
        .map(|s| DuoIndex { label: s.label.clone(), dim: s.dim, role: s.role, color: DotColor::Black })
        .collect();
    Duotensor::new(indices, data)
}

/// Probe, convert every index to white through the inverse metric, and
/// reassemble the operator from the fiducial basis.
pub fn reconstruct_operation(bb: &dyn BlackBox, fsets: &FiducialSets) -> Result<LabeledOperator> {
    let black = probe(bb, fsets)?;
    reconstruct(&convert_all(&black, DotColor::White, fsets)?, fsets)
}

/// Standard deviation of the spectral error of a reconstruction from
/// `shots`-shot frequencies, bounding each probability variance by `1/(4 shots)`.
pub fn propagated_noise(signature: &[Slot], fsets: &FiducialSets, shots: u64) -> Result<f64> {
    let indices: Vec<DuoIndex> = signature
        .iter()
        .map(|s| DuoIndex { label: s.label.clone(), dim: s.dim, role: s.role, color: DotColor::Black })
        .collect();
    let total: usize = indices.iter().map(DuoIndex::size).product();
    let mut sum_sq = 0.0;
    for j in 0..total {
        let mut data = vec![0.0; total];
        data[j] = 1.0;
        let unit = Duotensor::new(indices.clone(), data)?;
        let op = reconstruct(&convert_all(&unit, DotColor::White, fsets)?, fsets)?;
        sum_sq += op.matrix().norm_squared();
    }
    Ok(0.5 / (shots as f64).sqrt() * sum_sq.sqrt())
}
