use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Pinhole camera over a `plane_w x plane_h` pixel plane with square
/// pixels; `fov` is the horizontal field of view in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCamera {
    pub position: [f64; 3],
    pub heading: [f64; 3],
    pub up: [f64; 3],
    pub plane_w: usize,
    pub plane_h: usize,
    pub fov: f64,
}

impl ScanCamera {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: &[f64; 3]| (dot(v, v) - 1.0).abs() < 1e-9;
        if !unit(&self.heading) || !unit(&self.up) {
            return Err(Error::config("camera heading and up must be unit vectors"));
        }
        if dot(&self.heading, &self.up).abs() > 1e-9 {
            return Err(Error::config("camera heading must be perpendicular to up"));
        }
        if self.plane_w == 0 || self.plane_h == 0 {
            return Err(Error::config("image plane needs at least one pixel"));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::config("field of view must be in (0, pi)"));
        }
        Ok(())
    }

    fn right(&self) -> [f64; 3] {
        cross(self.heading, self.up)
    }

    fn focal(&self) -> f64 {
        (self.plane_w as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    /// Pixel `(row, col)` and depth of a point, if it falls on the plane.
    pub fn project(&self, p: &[f64]) -> Option<(usize, usize, f64)> {
        let v = [p[0] - self.position[0], p[1] - self.position[1], p[2] - self.position[2]];
        let z = dot(&v, &self.heading);
        if z <= 1e-9 {
            return None;
        }
        let f = self.focal();
        let u = self.plane_w as f64 / 2.0 + f * dot(&v, &self.right()) / z;
        let r = self.plane_h as f64 / 2.0 - f * dot(&v, &self.up) / z;
        if u < 0.0 || r < 0.0 || u >= self.plane_w as f64 || r >= self.plane_h as f64 {
            return None;
        }
        Some((r as usize, u as usize, z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub cameras: usize,
    /// Camera height above the floor centroid.
    pub height: f64,
    pub plane_w: usize,
    pub plane_h: usize,
    pub fov_degrees: f64,
    pub up_axis: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            cameras: 8,
            height: 1.5,
            plane_w: 100,
            plane_h: 75,
            fov_degrees: 60.0,
            up_axis: 2,
        }
    }
}

/// One view of a scene. `cloud` is `None` when nothing is visible.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub camera: ScanCamera,
    /// Scene indices of the visible points, ascending.
    pub indices: Vec<usize>,
    pub cloud: Option<PointCloud>,
}

/// Centroid of the points within 5 cm of the lowest point along `up_axis`.
pub fn floor_centroid(scene: &PointCloud, up_axis: usize) -> Vec<f64> {
    let d = scene.dim();
    let low = (0..scene.len()).map(|i| scene.point(i)[up_axis]).fold(f64::INFINITY, f64::min);
    let mut sum = vec![0.0; d];
    let mut n = 0.0;
    for i in 0..scene.len() {
        let p = scene.point(i);
        if p[up_axis] <= low + 0.05 {
            sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
            n += 1.0;
        }
    }
    sum.into_iter().map(|s| s / n).collect()
}

/// Keeps, for every pixel, the nearest point projecting into it. Ties go
/// to the lower scene index.
pub fn scan_from(scene: &PointCloud, camera: &ScanCamera) -> Result<Scan> {
    camera.validate()?;
    if scene.dim() != 3 {
        return Err(Error::arg("virtual scans need 3-D scenes"));
    }
    let mut best: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for i in 0..scene.len() {
        if let Some((r, c, z)) = camera.project(scene.point(i)) {
            let e = best.entry((r, c)).or_insert((z, i));
            if z < e.0 {
                *e = (z, i);
            }
        }
    }
    let mut indices: Vec<usize> = best.values().map(|&(_, i)| i).collect();
    indices.sort_unstable();
    let cloud = if indices.is_empty() {
        None
    } else {
        Some(scene.select(&indices)?)
    };
    Ok(Scan {
        camera: camera.clone(),
        indices,
        cloud,
    })
}

/// Scans from `config.cameras` evenly spaced horizontal headings, with the
/// camera `config.height` above the floor centroid.
pub fn virtual_scan(scene: &PointCloud, config: &ScanConfig) -> Result<Vec<Scan>> {
    if scene.dim() != 3 || config.up_axis > 2 {
        return Err(Error::arg("virtual scans need 3-D scenes with an up axis in 0..3"));
    }
    if config.cameras == 0 {
        return Err(Error::config("at least one camera is required"));
    }
    let up_axis = config.up_axis;
    let mut position: [f64; 3] = floor_centroid(scene, up_axis).try_into().expect("3-D");
    position[up_axis] += config.height;
    let mut up = [0.0; 3];
    up[up_axis] = 1.0;
    let (a, b) = match up_axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    (0..config.cameras)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / config.cameras as f64;
            let mut heading = [0.0; 3];
            heading[a] = angle.cos();
            heading[b] = angle.sin();
            let camera = ScanCamera {
                position,
                heading,
                up,
                plane_w: config.plane_w,
                plane_h: config.plane_h,
                fov: config.fov_degrees.to_radians(),
            };
            scan_from(scene, &camera)
        })
        .collect()
}

/// Splits the scene points inside the scans' frustums into equal-width bins
/// of distance from the camera and reports, per bin, the fraction that
/// survived into a scan. All scans are pooled. Returns `(bin centre,
/// fraction)` for bins holding at least `min_count` scene points.
pub fn visibility_by_depth(scene: &PointCloud, scans: &[Scan], bins: usize, min_count: usize) -> Vec<(f64, f64)> {
    // (distance, kept) for every scene point in every frustum
    let mut samples: Vec<(f64, bool)> = Vec::new();
    for scan in scans {
        for i in 0..scene.len() {
            let p = scene.point(i);
            if scan.camera.project(p).is_some() {
                let v: Vec<f64> = p.iter().zip(&scan.camera.position).map(|(a, b)| a - b).collect();
                samples.push((dot(&v, &v).sqrt(), scan.indices.binary_search(&i).is_ok()));
            }
        }
    }
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    let min_z = samples.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_z = samples.iter().map(|p| p.0).fold(0.0, f64::max);
    let width = ((max_z - min_z) / bins as f64).max(1e-12);
    let bin = |z: f64| (((z - min_z) / width) as usize).min(bins - 1);
    let mut total = vec![0usize; bins];
    let mut kept = vec![0usize; bins];
    for &(z, k) in &samples {
        total[bin(z)] += 1;
        kept[bin(z)] += usize::from(k);
    }
    (0..bins)
        .filter(|&k| total[k] >= min_count)
        .map(|k| (min_z + (k as f64 + 0.5) * width, kept[k] as f64 / total[k] as f64))
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

// ---------------------------------------------------------------------------
// Scene cubes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubeConfig {
    /// Horizontal side, horizontal side, height.
    pub size: [f64; 3],
    pub stride: f64,
    pub voxel: f64,
    pub target_n: usize,
    pub occupancy_min: f64,
    pub annotated_min: f64,
    pub up_axis: usize,
}

impl Default for CubeConfig {
    fn default() -> Self {
        Self {
            size: [1.5, 1.5, 3.0],
            stride: 0.75,
            voxel: 0.05,
            target_n: 8192,
            occupancy_min: 0.02,
            annotated_min: 0.70,
            up_axis: 2,
        }
    }
}

/// A training cube: `indices` are the scene points it holds (with repeats
/// when padded), `cloud` their coordinates relative to the cube's bottom
/// centre, carrying the scene labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub origin: [f64; 3],
    pub occupancy: f64,
    pub annotated: f64,
    pub indices: Vec<usize>,
    pub cloud: PointCloud,
}

/// Slides a cube over the scene on a horizontal grid and keeps positions
/// with enough occupied voxels, enough of them annotated (label 0 means
/// unannotated; a voxel counts as annotated when most of its points are),
/// then resamples each to exactly `target_n` points.
pub fn extract_cubes<R: Rng + ?Sized>(scene: &PointCloud, config: &CubeConfig, rng: &mut R) -> Result<Vec<Cube>> {
    if scene.dim() != 3 || config.up_axis > 2 {
        return Err(Error::arg("cube extraction needs 3-D scenes with an up axis in 0..3"));
    }
    if !(config.stride > 0.0 && config.voxel > 0.0) || config.size.iter().any(|s| !(*s > 0.0)) || config.target_n == 0 {
        return Err(Error::config("cube size, stride, voxel and target must be positive"));
    }
    let labels = scene
        .labels()
        .ok_or_else(|| Error::arg("cube extraction needs a labeled scene"))?;
    let up = config.up_axis;
    let (a, b) = match up {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let axes = [a, b, up];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..scene.len() {
        for k in 0..3 {
            lo[k] = lo[k].min(scene.point(i)[k]);
            hi[k] = hi[k].max(scene.point(i)[k]);
        }
    }
    let steps = |axis: usize, side: f64| -> usize {
        let span = hi[axis] - lo[axis] - side;
        if span <= 0.0 {
            1
        } else {
            (span / config.stride).ceil() as usize + 1
        }
    };
    let (na, nb) = (steps(a, config.size[0]), steps(b, config.size[1]));
    let dims: Vec<usize> = config.size.iter().map(|s| (s / config.voxel).round().max(1.0) as usize).collect();
    let total_voxels = (dims[0] * dims[1] * dims[2]) as f64;

    let mut cubes = Vec::new();
    for ia in 0..na {
        for ib in 0..nb {
            let mut origin = [0.0; 3];
            origin[a] = lo[a] + ia as f64 * config.stride;
            origin[b] = lo[b] + ib as f64 * config.stride;
            origin[up] = lo[up];
            let inside: Vec<usize> = (0..scene.len())
                .filter(|&i| {
                    let p = scene.point(i);
                    axes.iter()
                        .zip(&config.size)
                        .all(|(&k, &s)| p[k] >= origin[k] && p[k] < origin[k] + s)
                })
                .collect();
            if inside.is_empty() {
                continue;
            }
            // voxel -> (points, labeled points)
            let mut voxels: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
            for &i in &inside {
                let p = scene.point(i);
                let mut key = [0usize; 3];
                for (slot, (&k, &n)) in key.iter_mut().zip(axes.iter().zip(&dims)) {
                    *slot = (((p[k] - origin[k]) / config.voxel) as usize).min(n - 1);
                }
                let e = voxels.entry(key).or_default();
                e.0 += 1;
                if labels[i] != 0 {
                    e.1 += 1;
                }
            }
            let occupancy = voxels.len() as f64 / total_voxels;
            let annotated = voxels.values().filter(|(n, l)| 2 * l > *n).count() as f64 / voxels.len() as f64;
            if occupancy < config.occupancy_min || annotated < config.annotated_min {
                continue;
            }
            let indices: Vec<usize> = if inside.len() >= config.target_n {
                let mut pick = sample(rng, inside.len(), config.target_n).into_vec();
                pick.sort_unstable();
                pick.into_iter().map(|j| inside[j]).collect()
            } else {
                let mut v = inside.clone();
                v.extend((inside.len()..config.target_n).map(|_| inside[rng.gen_range(0..inside.len())]));
                v
            };
            let mut centre = origin;
            centre[a] += config.size[0] / 2.0;
            centre[b] += config.size[1] / 2.0;
            let coords: Vec<f64> = indices
                .iter()
                .flat_map(|&i| {
                    let p = scene.point(i);
                    [p[0] - centre[0], p[1] - centre[1], p[2] - centre[2]]
                })
                .collect();
            let feats: Vec<f64> = indices.iter().flat_map(|&i| scene.feature(i).to_vec()).collect();
            let cloud = PointCloud::new(3, coords, scene.channels(), feats)?
                .with_labels(indices.iter().map(|&i| labels[i]).collect())?;
            cubes.push(Cube {
                origin,
                occupancy,
                annotated,
                indices,
                cloud,
            });
        }
    }
    Ok(cubes)
}

/// Predicted labels for the scene points a cube holds.
#[derive(Debug, Clone, PartialEq)]
pub struct CubePrediction {
    pub indices: Vec<usize>,
    pub labels: Vec<u32>,
}

/// Per-point modal label over every prediction that covers the point (each
/// occurrence is one vote); ties go to the lowest label.
pub fn merge_votes(num_points: usize, predictions: &[CubePrediction]) -> Result<Vec<u32>> {
    let mut votes: Vec<HashMap<u32, usize>> = vec![HashMap::new(); num_points];
    for (c, p) in predictions.iter().enumerate() {
        if p.indices.len() != p.labels.len() {
            return Err(Error::arg(format!("prediction {c} has mismatched index and label counts")));
        }
        for (&i, &l) in p.indices.iter().zip(&p.labels) {
            let slot = votes
                .get_mut(i)
                .ok_or_else(|| Error::arg(format!("prediction {c} references point {i} of {num_points}")))?;
            *slot.entry(l).or_default() += 1;
        }
    }
    let uncovered: Vec<usize> = (0..num_points).filter(|&i| votes[i].is_empty()).collect();
    if !uncovered.is_empty() {
        let shown: Vec<String> = uncovered.iter().take(20).map(ToString::to_string).collect();
        let more = if uncovered.len() > 20 { ", ..." } else { "" };
        return Err(Error::arg(format!(
            "{} points have no prediction: {}{more}",
            uncovered.len(),
            shown.join(", ")
        )));
    }
    Ok(votes
        .iter()
        .map(|v| {
            v.iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(&l, _)| l)
                .expect("covered")
        })
        .collect())
}
