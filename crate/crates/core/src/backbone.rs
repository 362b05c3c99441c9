//! Point-wise stand-in backbone and the single-frame spatial baseline.

use rand::Rng;

use crate::asap::{group_scales, lsa_apply, propagate, stc_constant_centers, FpsSeed, Grouping, Interpolation};
use crate::autodiff::{Activation, MlpSpec, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointFrame};

pub const PRE_PREFIX: &str = "backbone.pre";
pub const HEAD_PREFIX: &str = "backbone.head";

/// Point-wise feature extractor and segmentation head.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// `3 + C_in -> C_mid`.
    pub pre: MlpSpec,
    /// `C_fp -> K`.
    pub head: MlpSpec,
}

impl BackboneConfig {
    pub fn new(pre: MlpSpec, head: MlpSpec, num_classes: usize) -> Result<Self> {
        if pre.input_width() < 4 {
            return Err(Error::Config(format!(
                "backbone input width {} leaves no room for features after xyz",
                pre.input_width()
            )));
        }
        if head.output_width() != num_classes {
            return Err(Error::Config(format!(
                "head outputs {} logits for {num_classes} classes",
                head.output_width()
            )));
        }
        Ok(BackboneConfig { pre, head })
    }

    pub fn input_feature_width(&self) -> usize {
        self.pre.input_width() - 3
    }

    pub fn output_width(&self) -> usize {
        self.pre.output_width()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_width()
    }

    pub fn param_count(&self) -> usize {
        self.pre.param_count() + self.head.param_count()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.init_mlp(&self.pre, PRE_PREFIX, rng)?;
        store.init_mlp(&self.head, HEAD_PREFIX, rng)
    }
}

/// `pre(concat(xyz, features))` for every point.
pub fn backbone_pre(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &BackboneConfig,
    coords: &[Point3],
    features: Var,
) -> Result<Var> {
    let xyz = Tensor::new(vec![coords.len(), 3], coords.iter().flatten().copied().collect())?;
    let xyz = tape.constant(xyz);
    let x = tape.concat_last(xyz, features)?;
    cfg.pre.forward(tape, params, PRE_PREFIX, x)
}

/// Per-point class logits.
pub fn backbone_head(tape: &mut Tape, params: &ParamStore, cfg: &BackboneConfig, x: Var) -> Result<Var> {
    cfg.head.forward(tape, params, HEAD_PREFIX, x)
}

/// One spatial aggregation level without temporal embedding, upsampled back
/// to the points. Shares parameter names with level 0 of the full module.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub input_width: usize,
    pub centers: usize,
    pub radii: Vec<f64>,
    pub eta: Vec<MlpSpec>,
    pub k_cap: usize,
    pub fp_k: usize,
    pub fp_unit: MlpSpec,
}

impl BaselineConfig {
    /// `fp_unit_widths` lists hidden and output widths; the input width is
    /// the local width plus the skip width.
    pub fn new(
        input_width: usize,
        centers: usize,
        radii: Vec<f64>,
        eta: Vec<MlpSpec>,
        k_cap: usize,
        fp_k: usize,
        fp_unit_widths: &[usize],
    ) -> Result<Self> {
        let local: usize = eta.iter().map(MlpSpec::output_width).sum();
        let mut widths = vec![local + input_width];
        widths.extend_from_slice(fp_unit_widths);
        let cfg = BaselineConfig {
            input_width,
            centers,
            radii,
            eta,
            k_cap,
            fp_k,
            fp_unit: MlpSpec::new(widths, Activation::Relu)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers == 0 || self.k_cap == 0 || self.fp_k == 0 || self.fp_k > self.centers {
            return Err(Error::Config(format!(
                "need 1 <= fp_k ({}) <= centers ({}) and k_cap ({}) >= 1",
                self.fp_k, self.centers, self.k_cap
            )));
        }
        if self.radii.is_empty() || self.radii.len() != self.eta.len() {
            return Err(Error::Config("one eta MLP per radius".into()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("radii must be positive".into()));
        }
        if self.eta.iter().any(|e| e.input_width() != self.input_width + 3) {
            return Err(Error::Config(format!(
                "eta input width must be {} + 3",
                self.input_width
            )));
        }
        let local: usize = self.eta.iter().map(MlpSpec::output_width).sum();
        if self.fp_unit.input_width() != local + self.input_width {
            return Err(Error::Config("fp unit input width mismatch".into()));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.fp_unit.output_width()
    }

    pub fn param_count(&self) -> usize {
        self.eta.iter().map(MlpSpec::param_count).sum::<usize>() + self.fp_unit.param_count()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (s, eta) in self.eta.iter().enumerate() {
            store.init_mlp(eta, &format!("{LEVEL_PREFIX}.eta{s}"), rng)?;
        }
        store.init_mlp(&self.fp_unit, FP_PREFIX, rng)
    }
}

const LEVEL_PREFIX: &str = "asap.level0";
const FP_PREFIX: &str = "asap.fp0";

/// Cached geometry of one frame for the baseline.
#[derive(Clone, Debug)]
pub struct SpatialPlan {
    pub centers: Vec<Point3>,
    pub groups: Vec<Grouping>,
    pub interp: Interpolation,
}

impl SpatialPlan {
    pub fn build(cfg: &BaselineConfig, coords: &[Point3]) -> Result<Self> {
        let centers = stc_constant_centers(coords, cfg.centers, FpsSeed::Canonical)?;
        Ok(SpatialPlan {
            groups: group_scales(&cfg.radii, cfg.k_cap, coords, &centers)?,
            interp: Interpolation::build(&centers, coords, cfg.fp_k)?,
            centers,
        })
    }
}

/// Per-point features of the spatial-only path from precomputed geometry.
pub fn baseline_features(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &BaselineConfig,
    plan: &SpatialPlan,
    features: Var,
) -> Result<Var> {
    let local = lsa_apply(tape, params, LEVEL_PREFIX, &cfg.eta, &plan.groups, features)?;
    propagate(tape, params, FP_PREFIX, &cfg.fp_unit, &plan.interp, local, features)
}

/// `pre -> spatial level -> propagation -> head` on a single frame.
pub fn single_frame_baseline_forward(
    tape: &mut Tape,
    params: &ParamStore,
    backbone: &BackboneConfig,
    cfg: &BaselineConfig,
    frame: &PointFrame,
) -> Result<Var> {
    let plan = SpatialPlan::build(cfg, &frame.coords)?;
    let f = tape.constant(frame.features.clone());
    let x = backbone_pre(tape, params, backbone, &frame.coords, f)?;
    let y = baseline_features(tape, params, cfg, &plan, x)?;
    backbone_head(tape, params, backbone, y)
}
