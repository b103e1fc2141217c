//! Iterative farthest point sampling.

use crate::cloud::{squared_distance, PointCloud};
use crate::error::{Error, Result};

/// Outcome of farthest point sampling: the ordered picks and, for every
/// point, its final distance to the nearest pick.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub indices: Vec<usize>,
    pub min_dists: Vec<f64>,
}

/// Greedy farthest point sampling over flat `n x dim` coordinates.
///
/// Keeps one running vector of squared distances to the selected set, so the
/// cost is O(N·m). Ties for the farthest point go to the lowest index.
pub fn fps_indices(coords: &[f64], dim: usize, m: usize, start: usize) -> Result<SampleResult> {
    let n = coords.len() / dim;
    if m == 0 || m > n {
        return Err(Error::arg(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::arg(format!("start index {start} out of range for {n} points")));
    }
    let point = |i: usize| &coords[i * dim..(i + 1) * dim];
    let mut best = vec![f64::INFINITY; n];
    let mut indices = Vec::with_capacity(m);
    let mut current = start;
    loop {
        indices.push(current);
        let c = point(current);
        let mut far = 0usize;
        let mut far_d = f64::NEG_INFINITY;
        for (i, slot) in best.iter_mut().enumerate() {
            let d = squared_distance(point(i), c);
            if d < *slot {
                *slot = d;
            }
            if *slot > far_d {
                far_d = *slot;
                far = i;
            }
        }
        if indices.len() == m {
            break;
        }
        current = far;
    }
    // Selected points sit at exactly zero, whatever rounding the subtraction did.
    for &i in &indices {
        best[i] = 0.0;
    }
    Ok(SampleResult {
        indices,
        min_dists: best.into_iter().map(f64::sqrt).collect(),
    })
}

/// Farthest point sampling of `m` points of `cloud`, starting from `start`.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, start: usize) -> Result<SampleResult> {
    fps_indices(cloud.coords(), cloud.dim(), m, start)
}

/// Largest distance from any point to its nearest selected point.
pub fn fps_covering_radius(result: &SampleResult) -> f64 {
    result.min_dists.iter().copied().fold(0.0, f64::max)
}

/// Covering radius of an arbitrary subset, by direct evaluation.
pub fn covering_radius(coords: &[f64], dim: usize, subset: &[usize]) -> f64 {
    let n = coords.len() / dim;
    (0..n)
        .map(|i| {
            let p = &coords[i * dim..(i + 1) * dim];
            subset
                .iter()
                .map(|&j| squared_distance(p, &coords[j * dim..(j + 1) * dim]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}
