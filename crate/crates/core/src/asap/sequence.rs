//! The recurrent multi-frame, multi-level forward pass.

use super::config::{AsapConfig, TemporalState};
use super::lsa::{group_scales, lsa_apply, Grouping};
use super::propagation::{propagate, Interpolation};
use super::stc::{plan_centers, CenterPlan, FpsSeed};
use super::temporal::temporal_embed;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Point3;

/// All parameter-independent geometry of one window: centers, neighbourhoods
/// and interpolation stencils. Reusable across epochs.
#[derive(Clone, Debug)]
pub struct SequencePlan {
    pub centers: CenterPlan,
    /// `groups[l][t][s]`: level `l`, frame `t`, scale `s`.
    pub groups: Vec<Vec<Vec<Grouping>>>,
    /// `interp[l][t]`: level `l` centers onto the level's input points.
    pub interp: Vec<Vec<Interpolation>>,
    pub num_points: Vec<usize>,
}

impl SequencePlan {
    pub fn build(cfg: &AsapConfig, frames: &[&[Point3]], seed: FpsSeed) -> Result<Self> {
        let centers = plan_centers(cfg, frames, seed)?;
        let mut groups = Vec::with_capacity(cfg.levels.len());
        let mut interp = Vec::with_capacity(cfg.levels.len());
        for (l, level) in cfg.levels.iter().enumerate() {
            let mut g_l = Vec::with_capacity(frames.len());
            let mut i_l = Vec::with_capacity(frames.len());
            for (t, frame) in frames.iter().enumerate() {
                let inputs: &[Point3] = if l == 0 {
                    frame
                } else {
                    &centers.levels[l - 1].coords[t]
                };
                let cs = &centers.levels[l].coords[t];
                g_l.push(group_scales(&level.radii, level.k_cap, inputs, cs)?);
                i_l.push(Interpolation::build(cs, inputs, cfg.fp_k)?);
            }
            groups.push(g_l);
            interp.push(i_l);
        }
        Ok(SequencePlan {
            centers,
            groups,
            interp,
            num_points: frames.iter().map(|f| f.len()).collect(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_points.len()
    }

    /// Mean neighbourhood size per frame, averaged over level-0 scales.
    pub fn occupancy(&self) -> Vec<f64> {
        self.groups[0]
            .iter()
            .map(|scales| {
                scales.iter().map(Grouping::mean_occupancy).sum::<f64>() / scales.len() as f64
            })
            .collect()
    }
}

/// Everything the forward pass records, frame-major.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    /// `N_t x output_width` per frame.
    pub per_point: Vec<Var>,
    /// `centers[t][l]`: embedded center features.
    pub centers: Vec<Vec<Var>>,
    /// `attention[t][l]`: `m x 2` weights for ATE levels.
    pub attention: Vec<Vec<Option<Var>>>,
}

fn pair_with_previous(
    tape: &mut Tape,
    prev: Option<Var>,
    correlation: Option<&Vec<usize>>,
    cur: Var,
) -> Result<Var> {
    match (prev, correlation) {
        // First frame pairs with itself.
        (None, _) => Ok(cur),
        (Some(p), None) => Ok(p),
        (Some(p), Some(idx)) => tape.gather_rows(p, idx),
    }
}

/// Runs every level over every frame, then propagates back to the points.
///
/// `features[t]` holds the per-point input features of frame `t`.
pub fn asap_sequence_forward(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &AsapConfig,
    plan: &SequencePlan,
    features: &[Var],
) -> Result<SequenceOutput> {
    let t_len = plan.num_frames();
    if features.len() != t_len {
        return Err(Error::InvalidArgument(format!(
            "{} feature tensors for a {t_len}-frame plan",
            features.len()
        )));
    }
    for (t, &f) in features.iter().enumerate() {
        if tape.shape(f) != [plan.num_points[t], cfg.input_width] {
            return Err(Error::Shape {
                op: "asap_sequence_forward",
                lhs: tape.shape(f).to_vec(),
                rhs: vec![plan.num_points[t], cfg.input_width],
            });
        }
    }
    let n_levels = cfg.levels.len();
    let prefixes: Vec<String> = (0..n_levels).map(AsapConfig::level_prefix).collect();
    let fp_prefixes: Vec<String> = (0..n_levels).map(AsapConfig::fp_prefix).collect();
    // Recurrent state per level: the previous frame's local or fused features.
    let mut state: Vec<Option<Var>> = vec![None; n_levels];
    let mut out = SequenceOutput {
        per_point: Vec::with_capacity(t_len),
        centers: Vec::with_capacity(t_len),
        attention: Vec::with_capacity(t_len),
    };
    for t in 0..t_len {
        let mut inputs = Vec::with_capacity(n_levels + 1);
        inputs.push(features[t]);
        let mut attn_t = Vec::with_capacity(n_levels);
        for (l, level) in cfg.levels.iter().enumerate() {
            let local = lsa_apply(
                tape,
                params,
                &prefixes[l],
                &level.eta,
                &plan.groups[l][t],
                inputs[l],
            )?;
            let corr = plan.centers.levels[l].correlation[t].as_ref();
            let prev = pair_with_previous(tape, state[l], corr, local)?;
            let (attn, fused) = temporal_embed(tape, params, &prefixes[l], level, prev, local)?;
            state[l] = Some(match cfg.state {
                TemporalState::Local => local,
                TemporalState::Fused => fused,
            });
            attn_t.push(attn);
            inputs.push(fused);
        }
        let mut up = inputs[n_levels];
        for l in (0..n_levels).rev() {
            up = propagate(
                tape,
                params,
                &fp_prefixes[l],
                &cfg.fp_units[l],
                &plan.interp[l][t],
                up,
                inputs[l],
            )?;
        }
        out.per_point.push(up);
        out.centers.push(inputs[1..].to_vec());
        out.attention.push(attn_t);
    }
    Ok(out)
}

/// Builds the plan with canonical FPS seeding and runs the forward pass.
pub fn asap_forward(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &AsapConfig,
    frames: &[&[Point3]],
    features: &[Var],
) -> Result<SequenceOutput> {
    let plan = SequencePlan::build(cfg, frames, FpsSeed::Canonical)?;
    asap_sequence_forward(tape, params, cfg, &plan, features)
}
