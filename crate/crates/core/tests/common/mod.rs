//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use asap_core::autodiff::{Activation, MlpSpec, ParamStore, Tensor};
use asap_core::geometry::Point3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, side: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..side / 4.0)])
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Greedy FPS recomputing every min-distance from scratch.
pub fn fps(coords: &[Point3], m: usize, seed: usize) -> Vec<usize> {
    let mut chosen = vec![seed];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..coords.len() {
            let d = chosen.iter().map(|&c| d2(&coords[i], &coords[c])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// All points within `r` of `q`, ascending, first `k_cap` kept.
pub fn radius(coords: &[Point3], q: &Point3, r: f64, k_cap: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..coords.len()).filter(|&i| d2(&coords[i], q) <= r * r).collect();
    v.truncate(k_cap);
    v
}

/// Full stable sort by distance.
pub fn knn(coords: &[Point3], q: &Point3, k: usize) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = coords.iter().enumerate().map(|(i, p)| (i, d2(p, q).sqrt())).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

pub fn nearest(prev: &[Point3], cur: &[Point3]) -> Vec<usize> {
    cur.iter()
        .map(|c| {
            let mut best = 0;
            for j in 1..prev.len() {
                if d2(&prev[j], c) < d2(&prev[best], c) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Scalar-loop MLP on one input row.
pub fn mlp(spec: &MlpSpec, params: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = spec.num_layers();
    for (l, (fan_in, fan_out)) in spec.layers().enumerate() {
        let w = params.value(&MlpSpec::weight_name(prefix, l)).unwrap().data();
        let b = params.value(&MlpSpec::bias_name(prefix, l)).unwrap().data();
        let mut y = b.to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            for i in 0..fan_in {
                *yo += h[i] * w[i * fan_out + o];
            }
        }
        if l + 1 < n || spec.final_activation() == Activation::Relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = y;
    }
    h
}

/// Per-center loop of `max_i eta(f_i, x_i - c_j)` over each radius, scales
/// concatenated; an empty neighbourhood yields zeros.
pub fn lsa(
    params: &ParamStore,
    prefix: &str,
    eta: &[MlpSpec],
    radii: &[f64],
    k_cap: usize,
    points: &[Point3],
    feats: &Tensor,
    centers: &[Point3],
) -> Vec<Vec<f64>> {
    centers
        .iter()
        .map(|c| {
            let mut out = Vec::new();
            for (s, (spec, &r)) in eta.iter().zip(radii).enumerate() {
                let mut pooled: Option<Vec<f64>> = None;
                for i in radius(points, c, r, k_cap) {
                    let mut x = feats.row(i).to_vec();
                    x.extend((0..3).map(|d| points[i][d] - c[d]));
                    let h = mlp(spec, params, &format!("{prefix}.eta{s}"), &x);
                    pooled = Some(match pooled {
                        None => h,
                        Some(p) => p.iter().zip(&h).map(|(a, b)| a.max(*b)).collect(),
                    });
                }
                out.extend(pooled.unwrap_or_else(|| vec![0.0; spec.output_width()]));
            }
            out
        })
        .collect()
}

/// Literal inverse-distance interpolation, skip concat and unit MLP.
pub fn propagation(
    params: &ParamStore,
    prefix: &str,
    unit: &MlpSpec,
    k: usize,
    centers: &[Point3],
    center_feats: &Tensor,
    targets: &[Point3],
    skip: &Tensor,
) -> Vec<Vec<f64>> {
    targets
        .iter()
        .enumerate()
        .map(|(t, q)| {
            let nn = knn(centers, q, k);
            let z: f64 = nn.iter().map(|(_, d)| 1.0 / (d + 1e-8)).sum();
            let mut x = vec![0.0; center_feats.cols()];
            for (i, d) in &nn {
                let w = (1.0 / (d + 1e-8)) / z;
                for (xv, fv) in x.iter_mut().zip(center_feats.row(*i)) {
                    *xv += w * fv;
                }
            }
            x.extend_from_slice(skip.row(t));
            mlp(unit, params, prefix, &x)
        })
        .collect()
}

/// Per-class `|P and G| / |P or G|` from label arrays, 0 on an empty union.
pub fn iou(truth: &[usize], pred: &[usize], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let inter = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count();
            let union = truth.iter().zip(pred).filter(|(t, p)| **t == c || **p == c).count();
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

pub fn max_abs(a: &[Vec<f64>], t: &Tensor) -> f64 {
    a.iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().zip(t.row(i)).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// A small architecture description; `levels` lists `(m, radii)` per level.
pub fn small_arch_json(te: &str, levels: &[(usize, &[f64])], width: usize, stc: &str, t: usize) -> String {
    let c_in = 1;
    let mid = 8;
    let mut prev = mid;
    let level_json: Vec<String> = levels
        .iter()
        .map(|(m, radii)| {
            let eta: Vec<String> = radii.iter().map(|_| format!("[{}, {width}]", prev + 3)).collect();
            let c = width * radii.len();
            let (zeta, gamma) = match te {
                "dte" => (format!("[{}, {c}]", 2 * c), "null".to_string()),
                _ => (format!("[{c}, {c}]"), format!("[{}, 2]", 2 * c)),
            };
            prev = c;
            format!(
                r#"{{"m": {m}, "radii": {radii:?}, "eta_widths": [{}], "te": "{te}", "zeta_widths": {zeta}, "gamma_widths": {gamma}, "k_cap": 64}}"#,
                eta.join(", ")
            )
        })
        .collect();
    format!(
        r#"{{"input_feature_width": {c_in}, "num_classes": 3,
            "backbone": {{"pre_widths": [{}, {mid}], "head_widths": [{width}, 3]}},
            "levels": [{}], "stc": "{stc}", "T": {t}, "fp_k": 3, "fp_unit_widths": [{width}]}}"#,
        3 + c_in,
        level_json.join(", ")
    )
}

pub fn small_arch(te: &str, levels: &[(usize, &[f64])], width: usize, stc: &str, t: usize) -> asap_core::model::Architecture {
    asap_core::model::Architecture::from_json(&small_arch_json(te, levels, width, stc, t)).unwrap()
}

/// Overwrites every parameter (biases included) with uniform noise.
pub fn randomize(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, p) in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
}
