//! Deterministic point-set kernels: farthest point sampling, grid radius
//! search, k-nearest neighbours and nearest-center matching.
//!
//! Every tie in this module goes to the lowest index.

use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// One time step of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFrame {
    pub coords: Vec<Point3>,
    /// `N x C` per-point input features.
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub frame_index: usize,
}

impl PointFrame {
    pub fn new(
        coords: Vec<Point3>,
        features: Tensor,
        labels: Option<Vec<usize>>,
        frame_index: usize,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("a frame needs at least one point".into()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame coordinates"));
        }
        if features.rank() != 2 || features.rows() != coords.len() {
            return Err(Error::Shape {
                op: "point_frame",
                lhs: features.shape().to_vec(),
                rhs: vec![coords.len()],
            });
        }
        if labels.as_ref().is_some_and(|l| l.len() != coords.len()) {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} points",
                labels.as_ref().map_or(0, Vec::len),
                coords.len()
            )));
        }
        Ok(PointFrame {
            coords,
            features,
            labels,
            frame_index,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    /// Errors if any label is outside `[0, classes)`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some(&label) = self.labels.iter().flatten().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    /// The frame with point `i` of the result taken from point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the frame's points".into()));
        }
        PointFrame::new(
            perm.iter().map(|&p| self.coords[p]).collect(),
            self.features.select_rows(perm)?,
            self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect()),
            self.frame_index,
        )
    }
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Index of the lexicographically smallest point.
///
/// Depends only on the point set, not on storage order, which makes it a
/// permutation-stable seed for [`farthest_point_sample`].
pub fn canonical_seed(coords: &[Point3]) -> usize {
    let mut best = 0;
    for (i, p) in coords.iter().enumerate().skip(1) {
        let b = &coords[best];
        let less = p[0]
            .total_cmp(&b[0])
            .then(p[1].total_cmp(&b[1]))
            .then(p[2].total_cmp(&b[2]))
            .is_lt();
        if less {
            best = i;
        }
    }
    best
}

/// Greedy farthest point sampling starting at `seed_index`.
///
/// Each pick maximises the (squared) distance to the already chosen set.
pub fn farthest_point_sample(coords: &[Point3], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} of {n} points"
        )));
    }
    if seed_index >= n {
        return Err(Error::InvalidArgument(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = seed_index;
    chosen.push(cur);
    while chosen.len() < m {
        let c = coords[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, d)) in coords.iter().zip(min_d.iter_mut()).enumerate() {
            let nd = dist2(p, &c);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        cur = best;
        chosen.push(cur);
    }
    Ok(chosen)
}

/// Uniform grid with cubic cells of side `cell_size`.
#[derive(Clone, Debug)]
pub struct GridIndex {
    cell_size: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    len: usize,
}

impl GridIndex {
    pub fn build(coords: &[Point3], radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid radius must be positive, got {radius}"
            )));
        }
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in coords.iter().enumerate() {
            cells.entry(cell_of(p, radius)).or_default().push(i);
        }
        Ok(GridIndex {
            cell_size: radius,
            cells,
            len: coords.len(),
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: &Point3) -> [i64; 3] {
        cell_of(p, self.cell_size)
    }

    /// Point indices in a cell, ascending.
    pub fn cell(&self, key: [i64; 3]) -> &[usize] {
        self.cells.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i64; 3], &[usize])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn num_points(&self) -> usize {
        self.len
    }
}

fn cell_of(p: &Point3, size: f64) -> [i64; 3] {
    [
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    ]
}

/// Neighbours of one query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborList {
    /// Ascending point indices, at most `k_cap` of them.
    pub indices: Vec<usize>,
    /// Number of matches, capped at `k_cap`.
    pub count: usize,
}

/// Points within `radius` of `query`: the `k_cap` lowest indices among all
/// matches.
pub fn radius_neighbors(
    index: &GridIndex,
    coords: &[Point3],
    query: &Point3,
    radius: f64,
    k_cap: usize,
) -> Result<NeighborList> {
    let mut out = Vec::new();
    radius_neighbors_into(index, coords, query, radius, k_cap, &mut out)?;
    let count = out.len();
    Ok(NeighborList {
        indices: out,
        count,
    })
}

/// Allocation-reusing form of [`radius_neighbors`]; `out` is overwritten.
pub fn radius_neighbors_into(
    index: &GridIndex,
    coords: &[Point3],
    query: &Point3,
    radius: f64,
    k_cap: usize,
    out: &mut Vec<usize>,
) -> Result<()> {
    if radius != index.cell_size {
        return Err(Error::InvalidArgument(format!(
            "query radius {radius} differs from grid cell size {}",
            index.cell_size
        )));
    }
    if k_cap == 0 {
        return Err(Error::InvalidArgument("k_cap must be at least 1".into()));
    }
    if coords.len() != index.len {
        return Err(Error::InvalidArgument(format!(
            "grid built over {} points, queried with {}",
            index.len,
            coords.len()
        )));
    }
    out.clear();
    let r2 = radius * radius;
    let c = index.cell_of(query);
    for dx in -1..=1 {
        for dy in -1..=1 {
            for dz in -1..=1 {
                for &i in index.cell([c[0] + dx, c[1] + dy, c[2] + dz]) {
                    if dist2(&coords[i], query) <= r2 {
                        out.push(i);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.truncate(k_cap);
    Ok(())
}

/// The `k` nearest points to `query` as `(index, distance)`, nearest first.
pub fn knn(coords: &[Point3], query: &Point3, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > coords.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {k} nearest of {} points",
            coords.len()
        )));
    }
    // Sorted insertion into a k-slot buffer; strict `<` keeps lower indices
    // ahead of later equal distances.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in coords.iter().enumerate() {
        let d = dist2(p, query);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    Ok(best.into_iter().map(|(d, i)| (i, d.sqrt())).collect())
}

/// For each current center, the index of the nearest previous center.
pub fn nearest_center_match(prev_centers: &[Point3], cur_centers: &[Point3]) -> Result<Vec<usize>> {
    if prev_centers.is_empty() || cur_centers.is_empty() {
        return Err(Error::InvalidArgument("center sets must be non-empty".into()));
    }
    Ok(cur_centers
        .iter()
        .map(|c| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, p) in prev_centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect())
}
