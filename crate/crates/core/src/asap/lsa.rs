//! Local structure aggregation: per-center radius grouping, a shared MLP on
//! `(feature, offset)` pairs, and element-wise max pooling.

use super::config::LevelConfig;
use crate::autodiff::{MlpSpec, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{radius_neighbors_into, GridIndex, Point3};

/// Neighbourhoods of all centers at one radius, flattened.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grouping {
    /// Neighbour point indices, center after center.
    pub indices: Vec<usize>,
    /// Center `j` owns `indices[offsets[j]..offsets[j + 1]]`.
    pub offsets: Vec<usize>,
    /// `x_i - c_j` for each entry of `indices`.
    pub offsets_xyz: Vec<f64>,
}

impl Grouping {
    pub fn build(points: &[Point3], centers: &[Point3], radius: f64, k_cap: usize) -> Result<Self> {
        let grid = GridIndex::build(points, radius)?;
        let mut g = Grouping {
            offsets: Vec::with_capacity(centers.len() + 1),
            ..Grouping::default()
        };
        g.offsets.push(0);
        let mut buf = Vec::new();
        for c in centers {
            radius_neighbors_into(&grid, points, c, radius, k_cap, &mut buf)?;
            for &i in &buf {
                let p = points[i];
                g.offsets_xyz
                    .extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            }
            g.indices.extend_from_slice(&buf);
            g.offsets.push(g.indices.len());
        }
        Ok(g)
    }

    pub fn num_centers(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighborhood(&self, j: usize) -> &[usize] {
        &self.indices[self.offsets[j]..self.offsets[j + 1]]
    }

    /// Mean neighbourhood size.
    pub fn mean_occupancy(&self) -> f64 {
        self.indices.len() as f64 / self.num_centers().max(1) as f64
    }
}

/// One grouping per radius.
pub fn group_scales(radii: &[f64], k_cap: usize, points: &[Point3], centers: &[Point3]) -> Result<Vec<Grouping>> {
    radii
        .iter()
        .map(|&r| Grouping::build(points, centers, r, k_cap))
        .collect()
}

/// Applies one eta MLP per scale (`{prefix}.eta{s}`) to precomputed
/// groupings and concatenates the pooled scales.
///
/// An empty neighbourhood produces zeros at that scale.
pub fn lsa_apply(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    eta: &[MlpSpec],
    groups: &[Grouping],
    features: Var,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 || eta.iter().any(|e| e.input_width() != shape[1] + 3) {
        return Err(Error::Shape {
            op: "lsa_forward",
            lhs: shape,
            rhs: eta.iter().map(|e| e.input_width() - 3).collect(),
        });
    }
    if groups.is_empty() || groups.len() != eta.len() {
        return Err(Error::InvalidArgument(format!(
            "{} groupings for {} scales",
            groups.len(),
            eta.len()
        )));
    }
    let mut out: Option<Var> = None;
    for (s, (eta, g)) in eta.iter().zip(groups).enumerate() {
        let m = g.num_centers();
        let pooled = if g.indices.is_empty() {
            tape.constant(Tensor::zeros(&[m, eta.output_width()]))
        } else {
            let gathered = tape.gather_rows(features, &g.indices)?;
            let rel = tape.constant(Tensor::new(
                vec![g.indices.len(), 3],
                g.offsets_xyz.clone(),
            )?);
            let input = tape.concat_last(gathered, rel)?;
            let h = eta.forward(tape, params, &format!("{prefix}.eta{s}"), input)?;
            tape.segment_max(h, &g.offsets)?
        };
        out = Some(match out {
            None => pooled,
            Some(prev) => tape.concat_last(prev, pooled)?,
        });
    }
    Ok(out.expect("at least one scale"))
}

/// Local features (`m x lsa_width`) of `centers` from `(points, features)`.
pub fn lsa_forward(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    level: &LevelConfig,
    points: &[Point3],
    features: Var,
    centers: &[Point3],
) -> Result<Var> {
    if tape.shape(features).first() != Some(&points.len()) {
        return Err(Error::Shape {
            op: "lsa_forward",
            lhs: tape.shape(features).to_vec(),
            rhs: vec![points.len()],
        });
    }
    let groups = group_scales(&level.radii, level.k_cap, points, centers)?;
    lsa_apply(tape, params, prefix, &level.eta, &groups, features)
}
