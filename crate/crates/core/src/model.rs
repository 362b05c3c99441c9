//! Architecture files and the end-to-end segmentation model.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asap::{
    asap_sequence_forward, AsapConfig, FpsSeed, LevelConfig, SequencePlan, StcStrategy, TeKind,
    TemporalState, DEFAULT_FP_K, DEFAULT_K_CAP,
};
use crate::autodiff::{Activation, MlpSpec, ParamStore, Tape, Var};
use crate::backbone::{
    backbone_head, backbone_pre, baseline_features, BackboneConfig, BaselineConfig, SpatialPlan,
};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointFrame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Backbone, temporal module, propagation, head.
    #[default]
    Asap,
    /// Backbone, one spatial level of `levels[0]` without temporal
    /// embedding, propagation, head. Always runs on single frames.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneFile {
    /// `[3 + input_feature_width, ..., C_mid]`.
    pub pre_widths: Vec<usize>,
    /// `[C_fp, ..., num_classes]`.
    pub head_widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelFile {
    pub m: usize,
    pub radii: Vec<f64>,
    /// Full widths of each scale's MLP, input included.
    pub eta_widths: Vec<Vec<usize>>,
    #[serde(default)]
    pub te: TeKind,
    #[serde(default)]
    pub zeta_widths: Vec<usize>,
    #[serde(default)]
    pub gamma_widths: Option<Vec<usize>>,
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
}

fn default_k_cap() -> usize {
    DEFAULT_K_CAP
}

fn default_fp_k() -> usize {
    DEFAULT_FP_K
}

/// The JSON architecture file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchFile {
    #[serde(default)]
    pub model: ModelKind,
    pub input_feature_width: usize,
    pub num_classes: usize,
    pub backbone: BackboneFile,
    pub levels: Vec<LevelFile>,
    #[serde(default)]
    pub stc: StcStrategy,
    #[serde(rename = "T", alias = "sequence_length")]
    pub sequence_length: usize,
    #[serde(default = "default_fp_k")]
    pub fp_k: usize,
    /// Hidden and output widths of every propagation unit.
    pub fp_unit_widths: Vec<usize>,
    #[serde(default)]
    pub state: TemporalState,
}

fn mlp(widths: &[usize], act: Activation, what: &str) -> Result<MlpSpec> {
    MlpSpec::new(widths.to_vec(), act).map_err(|e| Error::Config(format!("{what}: {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Asap(AsapConfig),
    Baseline(BaselineConfig),
}

/// A validated architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub file: ArchFile,
    pub backbone: BackboneConfig,
    pub network: Network,
}

impl Architecture {
    pub fn new(file: ArchFile) -> Result<Self> {
        let pre = mlp(&file.backbone.pre_widths, Activation::Relu, "backbone pre")?;
        let head = mlp(&file.backbone.head_widths, Activation::None, "backbone head")?;
        if pre.input_width() != 3 + file.input_feature_width {
            return Err(Error::Config(format!(
                "backbone pre input width {} != 3 + input_feature_width {}",
                pre.input_width(),
                file.input_feature_width
            )));
        }
        let backbone = BackboneConfig::new(pre, head, file.num_classes)?;
        let c_mid = backbone.output_width();
        if file.levels.is_empty() {
            return Err(Error::Config("at least one level is required".into()));
        }
        let etas = |lf: &LevelFile, l: usize| -> Result<Vec<MlpSpec>> {
            lf.eta_widths
                .iter()
                .enumerate()
                .map(|(s, w)| mlp(w, Activation::Relu, &format!("level {l} eta {s}")))
                .collect()
        };
        let network = match file.model {
            ModelKind::Asap => {
                let mut levels = Vec::with_capacity(file.levels.len());
                for (l, lf) in file.levels.iter().enumerate() {
                    levels.push(LevelConfig {
                        centers: lf.m,
                        radii: lf.radii.clone(),
                        eta: etas(lf, l)?,
                        te: lf.te,
                        zeta: mlp(&lf.zeta_widths, Activation::Relu, &format!("level {l} zeta"))?,
                        gamma: lf
                            .gamma_widths
                            .as_ref()
                            .map(|g| mlp(g, Activation::None, &format!("level {l} gamma")))
                            .transpose()?,
                        k_cap: lf.k_cap,
                    });
                }
                Network::Asap(AsapConfig::new(
                    c_mid,
                    levels,
                    file.stc,
                    file.state,
                    file.sequence_length,
                    file.fp_k,
                    &file.fp_unit_widths,
                )?)
            }
            ModelKind::Baseline => {
                if file.levels.len() != 1 {
                    return Err(Error::Config("the baseline has exactly one level".into()));
                }
                let lf = &file.levels[0];
                Network::Baseline(BaselineConfig::new(
                    c_mid,
                    lf.m,
                    lf.radii.clone(),
                    etas(lf, 0)?,
                    lf.k_cap,
                    file.fp_k,
                    &file.fp_unit_widths,
                )?)
            }
        };
        let out = match &network {
            Network::Asap(a) => a.output_width(),
            Network::Baseline(b) => b.output_width(),
        };
        if backbone.head.input_width() != out {
            return Err(Error::Config(format!(
                "head input width {} != propagated width {out}",
                backbone.head.input_width()
            )));
        }
        Ok(Architecture {
            file,
            backbone,
            network,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("architecture serializes")
    }

    /// Rebuilds with an edited file description.
    pub fn modified(&self, edit: impl FnOnce(&mut ArchFile)) -> Result<Self> {
        let mut file = self.file.clone();
        edit(&mut file);
        Self::new(file)
    }

    pub fn num_classes(&self) -> usize {
        self.backbone.num_classes()
    }

    pub fn input_feature_width(&self) -> usize {
        self.backbone.input_feature_width()
    }

    /// Frames per window; the baseline always sees single frames.
    pub fn sequence_length(&self) -> usize {
        match &self.network {
            Network::Asap(a) => a.sequence_length,
            Network::Baseline(_) => 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count()
            + match &self.network {
                Network::Asap(a) => a.param_count(),
                Network::Baseline(b) => b.param_count(),
            }
    }

    /// Fresh parameters from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.backbone.init_params(&mut store, &mut rng)?;
        match &self.network {
            Network::Asap(a) => a.init_params(&mut store, &mut rng)?,
            Network::Baseline(b) => b.init_params(&mut store, &mut rng)?,
        }
        Ok(store)
    }

    /// Checks that a checkpoint holds exactly this architecture's parameters.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let want = self.init_params(0)?;
        for (name, p) in want.iter() {
            match params.value(name) {
                Some(v) if v.shape() == p.value.shape() => {}
                Some(v) => {
                    return Err(Error::Shape {
                        op: "checkpoint",
                        lhs: v.shape().to_vec(),
                        rhs: p.value.shape().to_vec(),
                    })
                }
                None => return Err(Error::MissingParam(name.to_string())),
            }
        }
        if params.len() != want.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, architecture expects {}",
                params.len(),
                want.len()
            )));
        }
        Ok(())
    }

    /// Errors when a sequence's features or labels do not fit the model.
    pub fn check_data(&self, seqs: &[SequenceRecord]) -> Result<()> {
        for (i, s) in seqs.iter().enumerate() {
            if s.feature_width != self.input_feature_width() {
                return Err(Error::Config(format!(
                    "sequence {i} has feature width {}, architecture expects {}",
                    s.feature_width,
                    self.input_feature_width()
                )));
            }
            if s.num_classes != self.num_classes() {
                return Err(Error::Config(format!(
                    "sequence {i} has {} classes, architecture predicts {}",
                    s.num_classes,
                    self.num_classes()
                )));
            }
            if s.num_frames() < self.sequence_length() {
                return Err(Error::Config(format!(
                    "sequence {i} has {} frames, windows need {}",
                    s.num_frames(),
                    self.sequence_length()
                )));
            }
        }
        Ok(())
    }

    /// Parameter-independent geometry of a window.
    pub fn plan(&self, frames: &[&PointFrame]) -> Result<WindowPlan> {
        match &self.network {
            Network::Asap(a) => {
                let coords: Vec<&[Point3]> = frames.iter().map(|f| f.coords.as_slice()).collect();
                Ok(WindowPlan::Asap(SequencePlan::build(a, &coords, FpsSeed::Canonical)?))
            }
            Network::Baseline(b) => Ok(WindowPlan::Baseline(
                frames
                    .iter()
                    .map(|f| SpatialPlan::build(b, &f.coords))
                    .collect::<Result<_>>()?,
            )),
        }
    }

    /// Per-frame `N_t x K` logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        frames: &[&PointFrame],
        plan: &WindowPlan,
    ) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(frames.len());
        for f in frames {
            let x = tape.constant(f.features.clone());
            feats.push(backbone_pre(tape, params, &self.backbone, &f.coords, x)?);
        }
        let per_point = match (&self.network, plan) {
            (Network::Asap(a), WindowPlan::Asap(p)) => asap_sequence_forward(tape, params, a, p, &feats)?.per_point,
            (Network::Baseline(b), WindowPlan::Baseline(p)) if p.len() == feats.len() => feats
                .iter()
                .zip(p)
                .map(|(&x, p)| baseline_features(tape, params, b, p, x))
                .collect::<Result<_>>()?,
            _ => return Err(Error::InvalidArgument("plan does not match the architecture".into())),
        };
        per_point
            .into_iter()
            .map(|y| backbone_head(tape, params, &self.backbone, y))
            .collect()
    }

    /// Mean over frames of the per-frame cross entropy.
    pub fn window_loss(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        frames: &[&PointFrame],
        plan: &WindowPlan,
    ) -> Result<Var> {
        let logits = self.forward(tape, params, frames, plan)?;
        let mut total: Option<Var> = None;
        for (f, &y) in frames.iter().zip(&logits) {
            let labels = f
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("frame {} has no labels", f.frame_index)))?;
            let l = tape.cross_entropy(y, labels, None)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("empty window".into()))?;
        Ok(tape.scale(total, 1.0 / frames.len() as f64))
    }
}

/// Cached geometry for one window.
#[derive(Clone, Debug)]
pub enum WindowPlan {
    Asap(SequencePlan),
    Baseline(Vec<SpatialPlan>),
}

/// Row-wise argmax, ties to the lowest class.
pub fn argmax_rows(logits: &crate::autodiff::Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
