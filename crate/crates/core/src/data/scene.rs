use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SequenceRecord;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointFrame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned box resting on the ground; `size` is its extent.
    Box,
    /// Sphere resting on the ground; `size[0]` is the diameter.
    Sphere,
    /// Horizontal rectangle centred in the world at height 0; `size[0..2]`
    /// is its extent. Samples falling inside other objects' footprints are
    /// redrawn.
    Plane,
}

/// One object class and how its instances are placed and moved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub name: String,
    pub class_id: usize,
    pub shape: Shape,
    pub size: [f64; 3],
    pub count: usize,
    /// Speed drawn uniformly from `[speed[0], speed[1]]`, in meters per frame.
    pub speed: [f64; 2],
    /// Fixed heading in radians; uniform in `[0, 2 pi)` when absent.
    #[serde(default)]
    pub heading: Option<f64>,
    /// Value of the single per-point feature.
    pub reflectivity: f64,
}

impl ClassTemplate {
    /// Same sampler for geometry and features.
    fn same_geometry(&self, other: &ClassTemplate) -> bool {
        self.shape == other.shape && self.size == other.size && self.reflectivity == other.reflectivity
    }

    fn area(&self) -> f64 {
        let [sx, sy, sz] = self.size;
        match self.shape {
            Shape::Box => sx * sy + 2.0 * (sx + sy) * sz,
            Shape::Sphere => std::f64::consts::PI * sx * sx,
            Shape::Plane => sx * sy,
        }
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "one")]
    pub num_sequences: usize,
    pub num_frames: usize,
    pub points_per_frame: usize,
    /// Objects live in `[0, world_extent)^2` and wrap around its edges.
    pub world_extent: f64,
    pub classes: Vec<ClassTemplate>,
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Draw fresh surface samples every frame; otherwise each object keeps
    /// its first-frame samples (noise included) and only translates.
    #[serde(default = "yes")]
    pub resample: bool,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SceneConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.iter().map(|c| c.class_id + 1).max().unwrap_or(0)
    }

    /// Index pairs `(slow, fast)` of templates with identical geometry and
    /// disjoint speed ranges. Instance counts play no part.
    pub fn twin_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.classes.iter().enumerate() {
            for (j, b) in self.classes.iter().enumerate() {
                if i != j && a.class_id != b.class_id && a.same_geometry(b) && a.speed[1] < b.speed[0] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.points_per_frame == 0 {
            return bad("zero points per frame".into());
        }
        if self.num_frames == 0 || self.num_sequences == 0 {
            return bad("need at least one sequence and one frame".into());
        }
        if !(self.world_extent > 0.0) || !self.world_extent.is_finite() {
            return bad(format!("world extent {} must be positive", self.world_extent));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        if self.num_classes() > u16::MAX as usize {
            return bad("too many classes".into());
        }
        for c in &self.classes {
            if c.size.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || c.area() <= 0.0 {
                return bad(format!("class {} has a degenerate size", c.name));
            }
            if !(c.speed[0] >= 0.0) || !(c.speed[0] <= c.speed[1]) || !c.speed[1].is_finite() {
                return bad(format!("class {} speed range {:?} is invalid", c.name, c.speed));
            }
            if !c.reflectivity.is_finite() {
                return bad(format!("class {} reflectivity is not finite", c.name));
            }
        }
        if self.classes.iter().all(|c| c.count == 0) {
            return bad("the scene has no objects".into());
        }
        if self.twin_pairs().is_empty() {
            return bad("no twin pair: two classes with identical geometry and disjoint speeds".into());
        }
        Ok(())
    }
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &SceneConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("scene config serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Object {
    template: usize,
    center: Point3,
    velocity: [f64; 2],
    /// Frozen samples when resampling is off.
    offsets: Option<Vec<Point3>>,
}

fn surface_offset(t: &ClassTemplate, rng: &mut ChaCha8Rng) -> Point3 {
    let [sx, sy, sz] = t.size;
    let u = |rng: &mut ChaCha8Rng, s: f64| (rng.gen::<f64>() - 0.5) * s;
    match t.shape {
        Shape::Box => {
            // Top face plus four sides; the bottom rests on the ground.
            let top = sx * sy;
            let side_x = sy * sz;
            let side_y = sx * sz;
            let pick = rng.gen::<f64>() * (top + 2.0 * side_x + 2.0 * side_y);
            if pick < top {
                [u(rng, sx), u(rng, sy), sz / 2.0]
            } else if pick < top + 2.0 * side_x {
                let sign = if pick < top + side_x { -1.0 } else { 1.0 };
                [sign * sx / 2.0, u(rng, sy), u(rng, sz)]
            } else {
                let sign = if pick < top + 2.0 * side_x + side_y { -1.0 } else { 1.0 };
                [u(rng, sx), sign * sy / 2.0, u(rng, sz)]
            }
        }
        Shape::Sphere => loop {
            let v: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-12 {
                let r = sx / 2.0;
                break [r * v[0] / n, r * v[1] / n, r * v[2] / n];
            }
        },
        Shape::Plane => [u(rng, sx), u(rng, sy), 0.0],
    }
}

fn inside_footprint(p: &Point3, objects: &[Object], classes: &[ClassTemplate]) -> bool {
    objects.iter().any(|o| {
        let t = &classes[o.template];
        let dx = p[0] - o.center[0];
        let dy = p[1] - o.center[1];
        match t.shape {
            Shape::Box => dx.abs() <= t.size[0] / 2.0 && dy.abs() <= t.size[1] / 2.0,
            Shape::Sphere => dx * dx + dy * dy <= (t.size[0] / 2.0).powi(2),
            Shape::Plane => false,
        }
    })
}

/// Largest-remainder split of `total` proportional to `weights`.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn wrap(v: f64, extent: f64) -> f64 {
    v.rem_euclid(extent)
}

fn sample_object(
    cfg: &SceneConfig,
    objects: &[Object],
    o: usize,
    n: usize,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Point3> {
    let obj = &objects[o];
    let t = &cfg.classes[obj.template];
    (0..n)
        .map(|_| {
            let mut off = surface_offset(t, rng);
            if t.shape == Shape::Plane {
                for _ in 0..64 {
                    let w = [obj.center[0] + off[0], obj.center[1] + off[1], 0.0];
                    if !inside_footprint(&w, objects, &cfg.classes) {
                        break;
                    }
                    off = surface_offset(t, rng);
                }
            }
            for v in &mut off {
                *v += noise.sample(rng);
            }
            off
        })
        .collect()
}

/// One sequence, driven by stream 0 of the config's seed.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SequenceRecord> {
    generate_stream(cfg, 0)
}

/// `cfg.num_sequences` sequences; sequence `i` uses stream `i` of the seed.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Vec<SequenceRecord>> {
    (0..cfg.num_sequences).map(|i| generate_stream(cfg, i as u64)).collect()
}

fn generate_stream(cfg: &SceneConfig, stream: u64) -> Result<SequenceRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let e = cfg.world_extent;

    let mut objects = Vec::new();
    for (ti, t) in cfg.classes.iter().enumerate() {
        for _ in 0..t.count {
            let (center, velocity) = match t.shape {
                Shape::Plane => ([e / 2.0, e / 2.0, 0.0], [0.0, 0.0]),
                _ => {
                    let z = match t.shape {
                        Shape::Sphere => t.size[0] / 2.0,
                        _ => t.size[2] / 2.0,
                    };
                    let c = [rng.gen::<f64>() * e, rng.gen::<f64>() * e, z];
                    let speed = t.speed[0] + rng.gen::<f64>() * (t.speed[1] - t.speed[0]);
                    let heading = match t.heading {
                        Some(h) => h,
                        None => rng.gen::<f64>() * std::f64::consts::TAU,
                    };
                    (c, [speed * heading.cos(), speed * heading.sin()])
                }
            };
            objects.push(Object {
                template: ti,
                center,
                velocity,
                offsets: None,
            });
        }
    }
    let weights: Vec<f64> = objects.iter().map(|o| cfg.classes[o.template].area()).collect();
    let counts = allocate(cfg.points_per_frame, &weights);

    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut frozen_perm: Option<Vec<usize>> = None;
    for f in 0..cfg.num_frames {
        let mut coords = Vec::with_capacity(cfg.points_per_frame);
        let mut feats = Vec::with_capacity(cfg.points_per_frame);
        let mut labels = Vec::with_capacity(cfg.points_per_frame);
        for o in 0..objects.len() {
            let offsets = match &objects[o].offsets {
                Some(frozen) => frozen.clone(),
                None => {
                    let s = sample_object(cfg, &objects, o, counts[o], &noise, &mut rng);
                    if !cfg.resample {
                        objects[o].offsets = Some(s.clone());
                    }
                    s
                }
            };
            let obj = &objects[o];
            let t = &cfg.classes[obj.template];
            for off in offsets {
                let p = [obj.center[0] + off[0], obj.center[1] + off[1], obj.center[2] + off[2]];
                coords.push(p.map(|v| v as f32 as f64));
                feats.push(t.reflectivity as f32 as f64);
                labels.push(t.class_id);
            }
        }
        // Sensor order carries no class information; without resampling the
        // order is drawn once.
        let perm = match &frozen_perm {
            Some(p) => p.clone(),
            None => {
                let mut p: Vec<usize> = (0..coords.len()).collect();
                p.shuffle(&mut rng);
                if !cfg.resample {
                    frozen_perm = Some(p.clone());
                }
                p
            }
        };
        let coords: Vec<Point3> = perm.iter().map(|&i| coords[i]).collect();
        let feats: Vec<f64> = perm.iter().map(|&i| feats[i]).collect();
        let labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let n = coords.len();
        frames.push(PointFrame::new(coords, Tensor::new(vec![n, 1], feats)?, Some(labels), f)?);
        for obj in &mut objects {
            obj.center[0] = wrap(obj.center[0] + obj.velocity[0], e);
            obj.center[1] = wrap(obj.center[1] + obj.velocity[1], e);
        }
    }
    SequenceRecord::new(frames, cfg.num_classes(), Some(config_hash(cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn twin_config() -> SceneConfig {
        let tpl = |name: &str, id, shape, size, count, speed: [f64; 2]| ClassTemplate {
            name: name.into(),
            class_id: id,
            shape,
            size,
            count,
            speed,
            heading: None,
            reflectivity: 0.5,
        };
        SceneConfig {
            num_sequences: 1,
            num_frames: 4,
            points_per_frame: 300,
            world_extent: 10.0,
            classes: vec![
                tpl("ground", 0, Shape::Plane, [10.0, 10.0, 0.0], 1, [0.0, 0.0]),
                tpl("parked", 1, Shape::Box, [1.5, 1.5, 1.2], 2, [0.0, 0.05]),
                tpl("moving", 2, Shape::Box, [1.5, 1.5, 1.2], 2, [1.0, 1.5]),
            ],
            noise_sigma: 0.02,
            rng_seed: 3,
            resample: true,
        }
    }

    #[test]
    fn allocation_is_exact_and_proportional() {
        assert_eq!(allocate(10, &[1.0, 1.0, 2.0]).iter().sum::<usize>(), 10);
        assert_eq!(allocate(4, &[1.0, 1.0, 2.0]), vec![1, 1, 2]);
        assert_eq!(allocate(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
    }

    #[test]
    fn validation_requires_twin_pair_and_points() {
        let mut cfg = twin_config();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.twin_pairs(), vec![(1, 2)]);
        cfg.points_per_frame = 0;
        assert!(generate_scene(&cfg).is_err());
        let mut cfg = twin_config();
        cfg.classes[2].reflectivity = 0.9;
        assert!(cfg.validate().is_err());
        let mut cfg = twin_config();
        cfg.classes[2].speed = [0.01, 1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frames_have_requested_size_and_labels() {
        let rec = generate_scene(&twin_config()).unwrap();
        assert_eq!(rec.num_frames(), 4);
        assert_eq!(rec.num_classes, 3);
        for (i, f) in rec.frames.iter().enumerate() {
            assert_eq!(f.len(), 300);
            assert_eq!(f.frame_index, i);
            let labels = f.labels.as_ref().unwrap();
            for k in 0..3 {
                assert!(labels.contains(&k));
            }
        }
    }

    #[test]
    fn zero_velocity_scene_without_resampling_is_frozen() {
        let mut cfg = twin_config();
        cfg.classes[1].speed = [0.0, 0.0];
        // The fast twin stays in the vocabulary with no instances.
        cfg.classes[2].count = 0;
        cfg.resample = false;
        let rec = generate_scene(&cfg).unwrap();
        for f in &rec.frames[1..] {
            assert_eq!(f.coords, rec.frames[0].coords);
            assert_eq!(f.features, rec.frames[0].features);
        }
        cfg.resample = true;
        let rec = generate_scene(&cfg).unwrap();
        assert_ne!(rec.frames[1].coords, rec.frames[0].coords);
    }

    #[test]
    fn sphere_centroid_advances_with_velocity() {
        let mut cfg = twin_config();
        cfg.world_extent = 100.0;
        cfg.classes.push(ClassTemplate {
            name: "ball".into(),
            class_id: 3,
            shape: Shape::Sphere,
            size: [2.0, 2.0, 2.0],
            count: 1,
            speed: [1.0, 1.0],
            heading: Some(0.0),
            reflectivity: 0.1,
        });
        cfg.points_per_frame = 4000;
        cfg.num_frames = 5;
        let rec = generate_scene(&cfg).unwrap();
        let centroids: Vec<(f64, usize)> = rec
            .frames
            .iter()
            .map(|f| {
                let labels = f.labels.as_ref().unwrap();
                let xs: Vec<f64> = (0..f.len()).filter(|&i| labels[i] == 3).map(|i| f.coords[i][0]).collect();
                (xs.iter().sum::<f64>() / xs.len() as f64, xs.len())
            })
            .collect();
        for w in centroids.windows(2) {
            let n = w[1].1 as f64;
            // Surface samples of a unit-radius sphere have x-spread 1/sqrt(3).
            let tol = 3.0 * ((1.0 / 3.0f64) + cfg.noise_sigma.powi(2)).sqrt() / n.sqrt() * 2f64.sqrt();
            let step = w[1].0 - w[0].0;
            assert!((step - 1.0).abs() < tol, "step {step} tol {tol}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = twin_config();
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let mut other = cfg.clone();
        other.rng_seed = 4;
        assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&other).unwrap());
        assert_eq!(config_hash(&cfg), config_hash(&cfg.clone()));
        assert_ne!(config_hash(&cfg), config_hash(&other));
    }
}
