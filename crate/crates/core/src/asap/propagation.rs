//! Inverse-distance interpolation from centers back to points, followed by a
//! skip concatenation and a unit MLP.

use crate::autodiff::{MlpSpec, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn, Point3};

pub const FP_EPS: f64 = 1e-8;

/// Constant interpolation stencil: `k` centers and weights per target.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Interpolation {
    /// Weights `(1 / (d_i + eps))` normalised over the `k` nearest centers.
    pub fn build(centers: &[Point3], targets: &[Point3], k: usize) -> Result<Self> {
        if k > centers.len() {
            return Err(Error::InvalidArgument(format!(
                "fp_k {k} exceeds {} centers",
                centers.len()
            )));
        }
        let mut indices = Vec::with_capacity(targets.len() * k);
        let mut weights = Vec::with_capacity(targets.len() * k);
        for q in targets {
            let nn = knn(centers, q, k)?;
            let inv: Vec<f64> = nn.iter().map(|&(_, d)| 1.0 / (d + FP_EPS)).collect();
            let total: f64 = inv.iter().sum();
            for (&(i, _), w) in nn.iter().zip(&inv) {
                indices.push(i);
                weights.push(w / total);
            }
        }
        Ok(Interpolation { k, indices, weights })
    }

    pub fn num_targets(&self) -> usize {
        self.indices.len() / self.k
    }
}

/// Interpolates, concatenates `skip`, and applies `unit` under `prefix`.
pub fn propagate(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    unit: &MlpSpec,
    interp: &Interpolation,
    center_feats: Var,
    skip: Var,
) -> Result<Var> {
    if tape.shape(skip).first() != Some(&interp.num_targets()) {
        return Err(Error::Shape {
            op: "feature_propagation",
            lhs: tape.shape(skip).to_vec(),
            rhs: vec![interp.num_targets()],
        });
    }
    let up = tape.interpolate(center_feats, &interp.indices, &interp.weights, interp.k)?;
    let x = tape.concat_last(up, skip)?;
    unit.forward(tape, params, prefix, x)
}

/// Upsamples `center_feats` onto `target_coords`.
#[allow(clippy::too_many_arguments)]
pub fn feature_propagation(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    unit: &MlpSpec,
    fp_k: usize,
    center_coords: &[Point3],
    center_feats: Var,
    target_coords: &[Point3],
    skip: Var,
) -> Result<Var> {
    if tape.shape(center_feats).first() != Some(&center_coords.len()) {
        return Err(Error::Shape {
            op: "feature_propagation",
            lhs: tape.shape(center_feats).to_vec(),
            rhs: vec![center_coords.len()],
        });
    }
    let interp = Interpolation::build(center_coords, target_coords, fp_k)?;
    propagate(tape, params, prefix, unit, &interp, center_feats, skip)
}
