//! Spatio-temporal correlation of centers across frames.

use super::config::{AsapConfig, StcStrategy};
use crate::error::{Error, Result};
use crate::geometry::{canonical_seed, farthest_point_sample, nearest_center_match, Point3};

/// How FPS picks its first point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FpsSeed {
    Index(usize),
    /// The lexicographically smallest point; stable under reordering.
    #[default]
    Canonical,
}

impl FpsSeed {
    fn resolve(self, coords: &[Point3]) -> usize {
        match self {
            FpsSeed::Index(i) => i,
            FpsSeed::Canonical => canonical_seed(coords),
        }
    }
}

fn fps_coords(coords: &[Point3], m: usize, seed: FpsSeed) -> Result<Vec<Point3>> {
    let idx = farthest_point_sample(coords, m, seed.resolve(coords))?;
    Ok(idx.into_iter().map(|i| coords[i]).collect())
}

/// Centers sampled once from the first frame and shared by every frame.
pub fn stc_constant_centers(first_frame: &[Point3], m: usize, seed: FpsSeed) -> Result<Vec<Point3>> {
    fps_coords(first_frame, m, seed)
}

/// Per-frame centers and, for each frame, the previous-frame center each
/// current center is paired with. Frame 0 is paired with itself.
pub fn stc_nearest_match(
    frames: &[&[Point3]],
    m: usize,
    seed: FpsSeed,
) -> Result<(Vec<Vec<Point3>>, Vec<Vec<usize>>)> {
    let mut centers: Vec<Vec<Point3>> = Vec::with_capacity(frames.len());
    let mut corr = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let c = fps_coords(f, m, seed)?;
        if t == 0 {
            corr.push((0..m).collect());
        } else {
            corr.push(nearest_center_match(&centers[t - 1], &c)?);
        }
        centers.push(c);
    }
    Ok((centers, corr))
}

/// Centers of one hierarchy level across a window.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelCenters {
    /// `coords[t]` holds the level's centers in frame `t`.
    pub coords: Vec<Vec<Point3>>,
    /// `correlation[t][j]`: row of frame `t-1` paired with center `j`;
    /// `None` means the identity pairing.
    pub correlation: Vec<Option<Vec<usize>>>,
}

/// Centers for every level and frame of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterPlan {
    pub levels: Vec<LevelCenters>,
    /// Number of farthest-point-sampling runs used to build the plan.
    pub fps_calls: usize,
}

/// Level `l+1` samples its centers from level `l`'s centers of the same frame.
pub fn plan_centers(cfg: &AsapConfig, frames: &[&[Point3]], seed: FpsSeed) -> Result<CenterPlan> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("empty frame window".into()));
    }
    let t_len = frames.len();
    let mut levels: Vec<LevelCenters> = Vec::with_capacity(cfg.levels.len());
    let mut fps_calls = 0;
    for (l, level) in cfg.levels.iter().enumerate() {
        let source = |t: usize| -> &[Point3] {
            if l == 0 {
                frames[t]
            } else {
                &levels[l - 1].coords[t]
            }
        };
        let lc = match cfg.stc {
            StcStrategy::ConstantCenters => {
                let c = stc_constant_centers(source(0), level.centers, seed)?;
                fps_calls += 1;
                LevelCenters {
                    coords: vec![c; t_len],
                    correlation: vec![None; t_len],
                }
            }
            StcStrategy::NearestMatch => {
                let srcs: Vec<&[Point3]> = (0..t_len).map(source).collect();
                let (coords, corr) = stc_nearest_match(&srcs, level.centers, seed)?;
                fps_calls += t_len;
                LevelCenters {
                    coords,
                    correlation: corr.into_iter().map(Some).collect(),
                }
            }
        };
        levels.push(lc);
    }
    Ok(CenterPlan { levels, fps_calls })
}
