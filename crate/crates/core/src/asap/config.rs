use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, MlpSpec};
use crate::error::{Error, Result};

pub const DEFAULT_K_CAP: usize = 32;
pub const DEFAULT_FP_K: usize = 3;

/// How correlated center features of consecutive frames are fused.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeKind {
    /// `zeta(concat(prev, cur))`.
    Dte,
    /// `zeta(a1 * prev + a2 * cur)` with `[a1, a2] = softmax(gamma(concat(prev, cur)))`.
    #[default]
    Ate,
}

/// How centers are correlated across frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StcStrategy {
    /// FPS in every frame, each center paired with the nearest previous center.
    NearestMatch,
    /// FPS once in the first frame; the same coordinates are reused.
    #[default]
    ConstantCenters,
}

/// Which per-center feature of frame `t-1` is paired with frame `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalState {
    /// The previous frame's local-structure features.
    #[default]
    Local,
    /// The previous frame's fused output.
    Fused,
}

/// One local-structure-aggregation + temporal-embedding level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelConfig {
    pub centers: usize,
    pub radii: Vec<f64>,
    /// One MLP per radius; input width is the level input width plus 3.
    pub eta: Vec<MlpSpec>,
    pub te: TeKind,
    pub zeta: MlpSpec,
    /// Present iff `te == Ate`; output width 2.
    pub gamma: Option<MlpSpec>,
    pub k_cap: usize,
}

impl LevelConfig {
    /// Width of the concatenated multi-scale local feature.
    pub fn lsa_width(&self) -> usize {
        self.eta.iter().map(MlpSpec::output_width).sum()
    }

    pub fn output_width(&self) -> usize {
        self.zeta.output_width()
    }

    pub fn param_count(&self) -> usize {
        self.eta.iter().map(MlpSpec::param_count).sum::<usize>()
            + self.zeta.param_count()
            + self.gamma.as_ref().map_or(0, MlpSpec::param_count)
    }

    fn validate(&self, level: usize, input_width: usize, state: TemporalState) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("level {level}: {msg}")));
        if self.centers == 0 {
            return bad("center count must be positive".into());
        }
        if self.k_cap == 0 {
            return bad("k_cap must be positive".into());
        }
        if self.radii.is_empty() || self.radii.len() != self.eta.len() {
            return bad(format!(
                "{} radii but {} eta MLPs",
                self.radii.len(),
                self.eta.len()
            ));
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return bad(format!("radius {r} must be positive"));
        }
        for (s, eta) in self.eta.iter().enumerate() {
            if eta.input_width() != input_width + 3 {
                return bad(format!(
                    "eta[{s}] input width {} != features {input_width} + 3",
                    eta.input_width()
                ));
            }
        }
        let c = self.lsa_width();
        let zeta_in = match self.te {
            TeKind::Dte => 2 * c,
            TeKind::Ate => c,
        };
        if self.zeta.input_width() != zeta_in {
            return bad(format!(
                "zeta input width {} != {zeta_in}",
                self.zeta.input_width()
            ));
        }
        match (&self.te, &self.gamma) {
            (TeKind::Ate, Some(g)) => {
                if g.output_width() != 2 {
                    return bad(format!("gamma output width {} != 2", g.output_width()));
                }
                if g.input_width() != 2 * c {
                    return bad(format!("gamma input width {} != {}", g.input_width(), 2 * c));
                }
            }
            (TeKind::Ate, None) => return bad("ATE needs a gamma MLP".into()),
            (TeKind::Dte, Some(_)) => return bad("DTE takes no gamma MLP".into()),
            (TeKind::Dte, None) => {}
        }
        if state == TemporalState::Fused && self.zeta.output_width() != c {
            return bad(format!(
                "fused state needs zeta output width {} == local width {c}",
                self.zeta.output_width()
            ));
        }
        Ok(())
    }
}

/// Full module description.
#[derive(Clone, Debug, PartialEq)]
pub struct AsapConfig {
    /// Width of the per-point features fed to level 0.
    pub input_width: usize,
    pub levels: Vec<LevelConfig>,
    pub stc: StcStrategy,
    pub state: TemporalState,
    pub sequence_length: usize,
    pub fp_k: usize,
    /// Unit MLP of propagation stage `l` (level `l` centers to level `l` inputs).
    pub fp_units: Vec<MlpSpec>,
}

impl AsapConfig {
    /// Builds a config; `fp_unit_widths` lists the hidden and output widths
    /// of every propagation unit (input widths follow from the levels).
    pub fn new(
        input_width: usize,
        levels: Vec<LevelConfig>,
        stc: StcStrategy,
        state: TemporalState,
        sequence_length: usize,
        fp_k: usize,
        fp_unit_widths: &[usize],
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("at least one level is required".into()));
        }
        if fp_unit_widths.is_empty() {
            return Err(Error::Config("fp_unit_widths must not be empty".into()));
        }
        let fp_out = *fp_unit_widths.last().unwrap();
        let n = levels.len();
        let mut fp_units = Vec::with_capacity(n);
        for l in 0..n {
            let up = if l + 1 == n {
                levels[l].output_width()
            } else {
                fp_out
            };
            let skip = if l == 0 {
                input_width
            } else {
                levels[l - 1].output_width()
            };
            let mut widths = vec![up + skip];
            widths.extend_from_slice(fp_unit_widths);
            fp_units.push(MlpSpec::new(widths, Activation::Relu)?);
        }
        let cfg = AsapConfig {
            input_width,
            levels,
            stc,
            state,
            sequence_length,
            fp_k,
            fp_units,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.sequence_length == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if self.fp_k == 0 {
            return Err(Error::Config("fp_k must be at least 1".into()));
        }
        if self.fp_units.len() != self.levels.len() {
            return Err(Error::Config("one propagation unit per level".into()));
        }
        let mut width = self.input_width;
        for (l, level) in self.levels.iter().enumerate() {
            level.validate(l, width, self.state)?;
            if l > 0 && level.centers > self.levels[l - 1].centers {
                return Err(Error::Config(format!(
                    "level {l} has more centers than level {}",
                    l - 1
                )));
            }
            if self.fp_k > level.centers {
                return Err(Error::Config(format!(
                    "fp_k {} exceeds level {l} center count {}",
                    self.fp_k, level.centers
                )));
            }
            width = level.output_width();
        }
        Ok(())
    }

    /// Per-point output width after propagation.
    pub fn output_width(&self) -> usize {
        self.fp_units[0].output_width()
    }

    /// Scalar parameters in every eta, gamma, zeta and propagation MLP.
    pub fn param_count(&self) -> usize {
        self.levels.iter().map(LevelConfig::param_count).sum::<usize>()
            + self.fp_units.iter().map(MlpSpec::param_count).sum::<usize>()
    }

    pub fn level_prefix(l: usize) -> String {
        format!("asap.level{l}")
    }

    pub fn fp_prefix(l: usize) -> String {
        format!("asap.fp{l}")
    }
}
