//! Ball and k-nearest-neighbor queries over a uniform grid, with brute-force
//! reference implementations that define the expected answers.
//!
//! Every query orders its result by `(squared distance, index)`; distances
//! are compared exactly, with no tolerance, so the grid and brute-force paths
//! agree index for index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{squared_distance, PointCloud};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Which neighbors a centroid collects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NeighborhoodSpec {
    /// Every point within `radius`, keeping the `cap` nearest.
    Ball { radius: f64, cap: usize },
    /// Exactly the `k` nearest points.
    Knn { k: usize },
}

impl NeighborhoodSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NeighborhoodSpec::Ball { radius, cap } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::arg(format!("ball radius must be positive, got {radius}")));
                }
                if cap == 0 {
                    return Err(Error::arg("ball cap must be at least 1"));
                }
            }
            NeighborhoodSpec::Knn { k } => {
                if k == 0 {
                    return Err(Error::arg("k must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// Per-centroid index lists, sorted by `(distance, index)`.
pub type NeighborLists = Vec<Vec<usize>>;

#[derive(Clone, Copy)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

fn finish_sorted(mut cands: Vec<Cand>, keep: usize) -> Vec<usize> {
    cands.sort_unstable();
    cands.truncate(keep);
    cands.into_iter().map(|c| c.idx).collect()
}

/// Bounded max-heap keeping the `k` smallest candidates.
struct TopK {
    k: usize,
    heap: BinaryHeap<Cand>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, c: Cand) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn worst(&self) -> Option<f64> {
        if self.heap.len() == self.k {
            self.heap.peek().map(|c| c.d2)
        } else {
            None
        }
    }

    fn into_sorted(self) -> Vec<usize> {
        self.heap.into_sorted_vec().into_iter().map(|c| c.idx).collect()
    }
}

// ---------------------------------------------------------------------------
// Brute force
// ---------------------------------------------------------------------------

fn check_centroids(centroids: &[f64], dim: usize) -> Result<usize> {
    if centroids.len() % dim != 0 {
        return Err(Error::arg(format!(
            "centroid buffer of length {} is not a multiple of d={dim}",
            centroids.len()
        )));
    }
    Ok(centroids.len() / dim)
}

/// Reference ball query: scans every point for every centroid.
pub fn ball_query_brute(
    coords: &[f64],
    dim: usize,
    centroids: &[f64],
    radius: f64,
    cap: usize,
) -> Result<NeighborLists> {
    NeighborhoodSpec::Ball { radius, cap }.validate()?;
    let m = check_centroids(centroids, dim)?;
    let r2 = radius * radius;
    Ok((0..m)
        .map(|c| {
            let q = &centroids[c * dim..(c + 1) * dim];
            let cands = coords
                .chunks_exact(dim)
                .enumerate()
                .filter_map(|(idx, p)| {
                    let d2 = squared_distance(p, q);
                    (d2 <= r2).then_some(Cand { d2, idx })
                })
                .collect();
            finish_sorted(cands, cap)
        })
        .collect())
}

/// Reference kNN: full sort of all points for every centroid.
pub fn knn_brute(coords: &[f64], dim: usize, centroids: &[f64], k: usize) -> Result<NeighborLists> {
    let n = coords.len() / dim;
    if k == 0 || k > n {
        return Err(Error::arg(format!("k={k} invalid for {n} points")));
    }
    let m = check_centroids(centroids, dim)?;
    Ok((0..m)
        .map(|c| {
            let q = &centroids[c * dim..(c + 1) * dim];
            let cands = coords
                .chunks_exact(dim)
                .enumerate()
                .map(|(idx, p)| Cand {
                    d2: squared_distance(p, q),
                    idx,
                })
                .collect();
            finish_sorted(cands, k)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Grid index
// ---------------------------------------------------------------------------

/// Immutable uniform grid over a point set.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    dim: usize,
    cell_size: f64,
    inv_cell: f64,
    coords: Vec<f64>,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    bounds_min: Vec<f64>,
    bounds_max: Vec<f64>,
}

/// Relative slack applied to search extents so boundary rounding can only
/// widen the candidate set, never shrink it.
const EXTENT_SLACK: f64 = 1e-9;

impl SpatialIndex {
    pub fn from_coords(coords: &[f64], dim: usize, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::arg(format!("cell size must be positive, got {cell_size}")));
        }
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::arg("index needs a non-empty n x d coordinate buffer"));
        }
        let inv_cell = 1.0 / cell_size;
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut bounds_min = vec![f64::INFINITY; dim];
        let mut bounds_max = vec![f64::NEG_INFINITY; dim];
        for (i, p) in coords.chunks_exact(dim).enumerate() {
            for a in 0..dim {
                bounds_min[a] = bounds_min[a].min(p[a]);
                bounds_max[a] = bounds_max[a].max(p[a]);
            }
            let key: Vec<i64> = p.iter().map(|v| (v * inv_cell).floor() as i64).collect();
            cells.entry(key).or_default().push(i);
        }
        Ok(Self {
            dim,
            cell_size,
            inv_cell,
            coords: coords.to_vec(),
            cells,
            bounds_min,
            bounds_max,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i64], &[usize])> {
        self.cells.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.bounds_min, &self.bounds_max)
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn cell_of(&self, v: f64) -> i64 {
        (v * self.inv_cell).floor() as i64
    }

    /// Calls `f` on every point index in cells overlapping `[lo, hi]` per axis.
    fn visit_box(&self, lo: &[f64], hi: &[f64], mut f: impl FnMut(usize)) {
        let lo_c: Vec<i64> = lo.iter().map(|&v| self.cell_of(v)).collect();
        let hi_c: Vec<i64> = hi.iter().map(|&v| self.cell_of(v)).collect();
        let span: f64 = lo_c
            .iter()
            .zip(&hi_c)
            .map(|(a, b)| (b - a + 1) as f64)
            .product();
        if span > self.cells.len() as f64 {
            for (key, list) in &self.cells {
                if key.iter().zip(&lo_c).zip(&hi_c).all(|((k, a), b)| k >= a && k <= b) {
                    list.iter().for_each(|&i| f(i));
                }
            }
            return;
        }
        let mut key = lo_c.clone();
        loop {
            if let Some(list) = self.cells.get(&key) {
                list.iter().for_each(|&i| f(i));
            }
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                if key[axis] < hi_c[axis] {
                    key[axis] += 1;
                    break;
                }
                key[axis] = lo_c[axis];
                axis += 1;
            }
        }
    }

    /// Ball query for one centroid.
    pub fn ball(&self, q: &[f64], radius: f64, cap: usize) -> Vec<usize> {
        let r2 = radius * radius;
        let reach = radius * (1.0 + EXTENT_SLACK) + f64::MIN_POSITIVE;
        let lo: Vec<f64> = q.iter().map(|v| v - reach).collect();
        let hi: Vec<f64> = q.iter().map(|v| v + reach).collect();
        let mut cands = Vec::new();
        self.visit_box(&lo, &hi, |idx| {
            let d2 = squared_distance(self.point(idx), q);
            if d2 <= r2 {
                cands.push(Cand { d2, idx });
            }
        });
        finish_sorted(cands, cap)
    }

    /// kNN for one centroid via expanding Chebyshev rings of cells.
    pub fn knn(&self, q: &[f64], k: usize) -> Vec<usize> {
        let n = self.len();
        let k = k.min(n);
        let center: Vec<i64> = q.iter().map(|&v| self.cell_of(v)).collect();
        let mut top = TopK::new(k);
        let mut visited = 0usize;
        let mut ring: i64 = 0;
        loop {
            let side = (2 * ring + 1) as f64;
            if side.powi(self.dim as i32) > 2.0 * self.cells.len() as f64 {
                return self.knn_by_cells(q, k, top, ring);
            }
            self.visit_ring(&center, ring, |idx| {
                visited += 1;
                top.offer(Cand {
                    d2: squared_distance(self.point(idx), q),
                    idx,
                });
            });
            if visited == n {
                break;
            }
            if let Some(worst) = top.worst() {
                // Anything outside the visited block is at least this far away.
                let reach = (0..self.dim)
                    .map(|a| {
                        let lo = (center[a] - ring) as f64 * self.cell_size;
                        let hi = (center[a] + ring + 1) as f64 * self.cell_size;
                        (q[a] - lo).min(hi - q[a])
                    })
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
                    * (1.0 - EXTENT_SLACK);
                if worst < reach * reach {
                    break;
                }
            }
            ring += 1;
        }
        top.into_sorted()
    }

    fn visit_ring(&self, center: &[i64], ring: i64, mut f: impl FnMut(usize)) {
        let d = self.dim;
        let mut off = vec![-ring; d];
        let mut key = vec![0i64; d];
        loop {
            if off.iter().any(|o| o.abs() == ring) {
                for a in 0..d {
                    key[a] = center[a] + off[a];
                }
                if let Some(list) = self.cells.get(&key) {
                    list.iter().for_each(|&i| f(i));
                }
            }
            let mut axis = 0;
            loop {
                if axis == d {
                    return;
                }
                if off[axis] < ring {
                    off[axis] += 1;
                    break;
                }
                off[axis] = -ring;
                axis += 1;
            }
        }
    }

    /// Remaining kNN search once rings get too wide: occupied cells not yet
    /// visited, in order of their lower-bound distance.
    fn knn_by_cells(&self, q: &[f64], k: usize, mut top: TopK, done_ring: i64) -> Vec<usize> {
        let center: Vec<i64> = q.iter().map(|&v| self.cell_of(v)).collect();
        let mut order: Vec<(f64, &Vec<usize>)> = self
            .cells
            .iter()
            .filter(|(key, _)| {
                key.iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).abs())
                    .max()
                    .unwrap_or(0)
                    >= done_ring
            })
            .map(|(key, list)| {
                let mut d2 = 0.0;
                for a in 0..self.dim {
                    let lo = key[a] as f64 * self.cell_size;
                    let hi = lo + self.cell_size;
                    let gap = if q[a] < lo {
                        lo - q[a]
                    } else if q[a] > hi {
                        q[a] - hi
                    } else {
                        0.0
                    };
                    d2 += gap * gap;
                }
                (d2 * (1.0 - EXTENT_SLACK), list)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (bound, list) in order {
            if let Some(worst) = top.worst() {
                if bound > worst {
                    break;
                }
            }
            for &idx in list {
                top.offer(Cand {
                    d2: squared_distance(self.point(idx), q),
                    idx,
                });
            }
        }
        debug_assert_eq!(top.heap.len(), k);
        top.into_sorted()
    }
}

/// Builds a grid index over the cloud's metric coordinates.
pub fn build_index(cloud: &PointCloud, cell_size: f64) -> Result<SpatialIndex> {
    SpatialIndex::from_coords(cloud.coords(), cloud.dim(), cell_size)
}

/// Grid-accelerated ball query for every centroid in the flat `centroids`.
pub fn ball_query(index: &SpatialIndex, centroids: &[f64], radius: f64, cap: usize) -> Result<NeighborLists> {
    NeighborhoodSpec::Ball { radius, cap }.validate()?;
    let m = check_centroids(centroids, index.dim)?;
    Ok((0..m)
        .map(|c| index.ball(&centroids[c * index.dim..(c + 1) * index.dim], radius, cap))
        .collect())
}

/// Grid-accelerated kNN for every centroid in the flat `centroids`.
pub fn knn_query(index: &SpatialIndex, centroids: &[f64], k: usize) -> Result<NeighborLists> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k={k} invalid for {n} points")));
    }
    let m = check_centroids(centroids, index.dim)?;
    Ok((0..m)
        .map(|c| index.knn(&centroids[c * index.dim..(c + 1) * index.dim], k))
        .collect())
}

/// Cell size giving roughly `per_cell` points per occupied cell for a cloud
/// spread over its bounding box.
pub fn suggest_cell_size(coords: &[f64], dim: usize, per_cell: f64) -> f64 {
    let n = (coords.len() / dim).max(1) as f64;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks_exact(dim) {
        for a in 0..dim {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-9)).collect();
    let volume: f64 = extent.iter().product();
    let size = (volume * per_cell.max(1.0) / n).powf(1.0 / dim as f64);
    if size.is_finite() && size > 0.0 {
        size
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// Point-density profile of generated benchmark clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Density {
    Uniform,
    /// Density decaying away from the origin, like a single-viewpoint scan.
    RadialFalloff,
}

impl std::str::FromStr for Density {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Density::Uniform),
            "radial" | "radial-falloff" => Ok(Density::RadialFalloff),
            _ => Err(Error::arg(format!("unknown density `{s}` (uniform | radial-falloff)"))),
        }
    }
}

impl std::fmt::Display for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Density::Uniform => "uniform",
            Density::RadialFalloff => "radial-falloff",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub n: usize,
    pub density: Density,
    pub spec: NeighborhoodSpec,
    pub repetitions: usize,
    pub max_queries: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Workload {
    pub fn new(n: usize, density: Density, spec: NeighborhoodSpec) -> Self {
        Self {
            n,
            density,
            spec,
            repetitions: 5,
            max_queries: 1000,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: &'static str,
    pub kind: &'static str,
    pub param: f64,
    pub n: usize,
    pub density: Density,
    pub median_us: f64,
    pub p95_us: f64,
    pub result_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Whether every method produced the same neighbor lists.
    pub verified: bool,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,kind,param,N,density,median_us,p95_us,result_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3},{}",
                r.method, r.kind, r.param, r.n, r.density, r.median_us, r.p95_us, r.result_hash
            );
        }
        out
    }
}

/// Generates a benchmark cloud in `[-1, 1]^3`.
pub fn bench_cloud(n: usize, density: Density, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0xbe_c0);
    let mut coords = Vec::with_capacity(n * 3);
    for _ in 0..n {
        match density {
            Density::Uniform => {
                for _ in 0..3 {
                    coords.push(rng.gen_range(-1.0..1.0));
                }
            }
            Density::RadialFalloff => {
                // Direction uniform on the sphere, radius skewed toward the origin.
                let z: f64 = rng.gen_range(-1.0..1.0);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                let r = rng.gen::<f64>().powi(2);
                coords.extend_from_slice(&[r * s * phi.cos(), r * s * phi.sin(), r * z]);
            }
        }
    }
    coords
}

/// Stable digest of neighbor lists.
pub fn hash_lists(lists: &[Vec<usize>]) -> String {
    let mut h = Sha256::new();
    for list in lists {
        h.update((list.len() as u64).to_le_bytes());
        for &i in list {
            h.update((i as u64).to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[pos]
}

fn run_queries<F>(m: usize, threads: usize, query: F) -> NeighborLists
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    crate::par::map_indexed(m, threads, query)
}

/// Times brute-force and grid queries on a generated workload.
///
/// The first repetition warms caches and is excluded from the statistics.
pub fn bench_queries(workload: &Workload) -> Result<BenchReport> {
    workload.spec.validate()?;
    if workload.n == 0 {
        return Err(Error::arg("benchmark needs at least one point"));
    }
    let coords = bench_cloud(workload.n, workload.density, workload.seed);
    let dim = 3;
    let m = workload.n.min(workload.max_queries.max(1));
    let centroids = coords[..m * dim].to_vec();
    let (kind, param) = match workload.spec {
        NeighborhoodSpec::Ball { radius, .. } => ("ball", radius),
        NeighborhoodSpec::Knn { k } => {
            if k > workload.n {
                return Err(Error::arg(format!("k={k} exceeds N={}", workload.n)));
            }
            ("knn", k as f64)
        }
    };
    let reps = workload.repetitions.max(2);
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    for method in ["brute", "grid"] {
        let index = match (method, workload.spec) {
            ("grid", NeighborhoodSpec::Ball { radius, .. }) => {
                Some(SpatialIndex::from_coords(&coords, dim, radius)?)
            }
            ("grid", NeighborhoodSpec::Knn { k }) => Some(SpatialIndex::from_coords(
                &coords,
                dim,
                suggest_cell_size(&coords, dim, k as f64 / 2.0),
            )?),
            _ => None,
        };
        let mut times = Vec::with_capacity(reps);
        let mut result = Vec::new();
        for _ in 0..reps {
            let t0 = Instant::now();
            result = run_queries(m, workload.threads, |c| {
                let q = &centroids[c * dim..(c + 1) * dim];
                match (&index, workload.spec) {
                    (Some(ix), NeighborhoodSpec::Ball { radius, cap }) => ix.ball(q, radius, cap),
                    (Some(ix), NeighborhoodSpec::Knn { k }) => ix.knn(q, k),
                    (None, NeighborhoodSpec::Ball { radius, cap }) => {
                        ball_query_brute(&coords, dim, q, radius, cap)
                            .map(|mut v| v.remove(0))
                            .unwrap_or_default()
                    }
                    (None, NeighborhoodSpec::Knn { k }) => knn_brute(&coords, dim, q, k)
                        .map(|mut v| v.remove(0))
                        .unwrap_or_default(),
                }
            });
            times.push(t0.elapsed().as_secs_f64() * 1e6);
        }
        let mut timed = times[1..].to_vec();
        timed.sort_by(f64::total_cmp);
        let hash = hash_lists(&result);
        hashes.push(hash.clone());
        rows.push(BenchRow {
            method: if method == "brute" { "brute" } else { "grid" },
            kind,
            param,
            n: workload.n,
            density: workload.density,
            median_us: percentile(&timed, 0.5),
            p95_us: percentile(&timed, 0.95),
            result_hash: hash,
        });
    }
    let verified = hashes.windows(2).all(|w| w[0] == w[1]);
    Ok(BenchReport { rows, verified })
}
