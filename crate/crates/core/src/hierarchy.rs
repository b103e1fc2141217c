//! Set abstraction and feature propagation levels, and networks assembled
//! from blueprints.
//!
//! Batches travel between levels as a [`PointSet`]: the clouds' points are
//! stacked row-wise, with per-cloud counts. A set abstraction level gathers
//! only the valid members of every region into one packed matrix, runs the
//! shared MLP over it (batch norm sees every member of every region in the
//! batch), and max-pools each region's contiguous rows.

use rand::Rng;

use crate::archlang::{chain_widths, Grouping, Level, MrgSpec, NetworkBlueprint};
use crate::cloud::{squared_distance, MetricConfig, PointCloud};
use crate::error::{Error, Result};
use crate::neighborhood::{knn_brute, suggest_cell_size, NeighborhoodSpec, SpatialIndex};
use crate::nn::gradcheck::{grad_check_piecewise, GradCheckOptions, GradCheckReport};
use crate::nn::mlp::{fingerprint_mlp, DenseCache};
use crate::nn::{
    segment_max, set_max_backward, DenseLayer, Fingerprint, MlpCache, Mode, SetMaxCache, SharedMlp, Tensor,
};
use crate::par;
use crate::rng::{stream_id, stream_rng};
use crate::sampling::fps_indices;

// ---------------------------------------------------------------------------
// Grouping
// ---------------------------------------------------------------------------

/// Members of each region, nearest first. A ball that catches nothing falls
/// back to the nearest point.
fn neighbor_lists(coords: &[f64], dim: usize, centers: &[f64], spec: &NeighborhoodSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n = coords.len() / dim;
    if n == 0 {
        return Err(Error::arg("cannot group an empty cloud"));
    }
    match *spec {
        NeighborhoodSpec::Ball { radius, cap } => {
            let index = SpatialIndex::from_coords(coords, dim, radius)?;
            Ok(centers
                .chunks_exact(dim)
                .map(|q| {
                    let list = index.ball(q, radius, cap);
                    if list.is_empty() {
                        index.knn(q, 1)
                    } else {
                        list
                    }
                })
                .collect())
        }
        NeighborhoodSpec::Knn { k } => {
            let k = k.min(n);
            if n <= 64 {
                return knn_brute(coords, dim, centers, k);
            }
            let index = SpatialIndex::from_coords(coords, dim, suggest_cell_size(coords, dim, 2.0))?;
            Ok(centers.chunks_exact(dim).map(|q| index.knn(q, k)).collect())
        }
    }
}

fn region_cap(spec: &NeighborhoodSpec) -> usize {
    match *spec {
        NeighborhoodSpec::Ball { cap, .. } => cap,
        NeighborhoodSpec::Knn { k } => k,
    }
}

/// Fixed-shape view of local regions: `regions` is `N' x K x (d + C)` with
/// localized coordinates first. Slots past a region's member count repeat
/// its nearest member and are marked invalid in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedRegions {
    pub k: usize,
    pub width: usize,
    pub regions: Vec<f64>,
    pub mask: Vec<bool>,
    pub centroid_indices: Vec<usize>,
    pub centroid_coords: Vec<f64>,
    pub members: Vec<Vec<usize>>,
}

impl GroupedRegions {
    pub fn len(&self) -> usize {
        self.centroid_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroid_indices.is_empty()
    }

    pub fn entry(&self, region: usize, slot: usize) -> &[f64] {
        let at = (region * self.k + slot) * self.width;
        &self.regions[at..at + self.width]
    }

    /// Valid rows only, region after region, with segment offsets.
    fn packed(&self) -> Result<(Tensor, Vec<usize>)> {
        let mut rows = Vec::new();
        let mut offsets = vec![0];
        let mut count = 0;
        for r in 0..self.len() {
            for s in 0..self.k {
                if self.mask[r * self.k + s] {
                    rows.extend_from_slice(self.entry(r, s));
                    count += 1;
                }
            }
            offsets.push(count);
        }
        Ok((Tensor::matrix(count, self.width, rows)?, offsets))
    }
}

/// Groups `cloud` around the given centroids and expresses every member in
/// its centroid's frame.
pub fn group_and_localize(
    cloud: &PointCloud,
    centroid_indices: &[usize],
    spec: &NeighborhoodSpec,
) -> Result<GroupedRegions> {
    let d = cloud.dim();
    let n = cloud.len();
    if let Some(&bad) = centroid_indices.iter().find(|&&i| i >= n) {
        return Err(Error::arg(format!("centroid index {bad} out of range for {n} points")));
    }
    let centroid_coords: Vec<f64> = centroid_indices.iter().flat_map(|&i| cloud.point(i).to_vec()).collect();
    let members = neighbor_lists(cloud.coords(), d, &centroid_coords, spec)?;
    let k = region_cap(spec);
    let width = d + cloud.channels();
    let mut regions = Vec::with_capacity(centroid_indices.len() * k * width);
    let mut mask = Vec::with_capacity(centroid_indices.len() * k);
    for (c, list) in members.iter().enumerate() {
        let center = &centroid_coords[c * d..(c + 1) * d];
        for slot in 0..k {
            let (m, valid) = match list.get(slot) {
                Some(&m) => (m, true),
                None => (list[0], false),
            };
            regions.extend(cloud.point(m).iter().zip(center).map(|(x, c)| x - c));
            regions.extend_from_slice(cloud.feature(m));
            mask.push(valid);
        }
    }
    Ok(GroupedRegions {
        k,
        width,
        regions,
        mask,
        centroid_indices: centroid_indices.to_vec(),
        centroid_coords,
        members,
    })
}

#[derive(Debug, Clone)]
pub struct PointNetCache {
    mlp: MlpCache,
    max: SetMaxCache,
}

/// Shared MLP over every valid member, then max over each region. Padded
/// slots are never read.
pub fn pointnet_forward<R: Rng + ?Sized>(
    regions: &GroupedRegions,
    mlp: &mut SharedMlp,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, PointNetCache)> {
    if mlp.inputs() != regions.width {
        return Err(Error::config(format!(
            "PointNet expects {} input channels, regions have {}",
            mlp.inputs(),
            regions.width
        )));
    }
    let (x, offsets) = regions.packed()?;
    let (h, mlp_cache) = mlp.forward(&x, mode, rng)?;
    let (out, max) = segment_max(&h, &offsets)?;
    Ok((out, PointNetCache { mlp: mlp_cache, max }))
}

/// Gradient with respect to the packed valid rows, in region order.
pub fn pointnet_backward(mlp: &mut SharedMlp, cache: &PointNetCache, grad_out: &Tensor) -> Tensor {
    let g = set_max_backward(&cache.max, grad_out);
    mlp.backward(&cache.mlp, &g)
}

// ---------------------------------------------------------------------------
// Batched point sets
// ---------------------------------------------------------------------------

/// Several clouds stacked row-wise: `coords` is `sum(counts) x dim`,
/// `features` is `sum(counts) x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub dim: usize,
    pub counts: Vec<usize>,
    pub coords: Vec<f64>,
    pub features: Tensor,
}

impl PointSet {
    pub fn from_clouds(clouds: &[&PointCloud]) -> Result<Self> {
        let first = clouds.first().ok_or_else(|| Error::arg("empty batch"))?;
        let (dim, c) = (first.dim(), first.channels());
        let mut coords = Vec::new();
        let mut feats = Vec::new();
        let mut counts = Vec::with_capacity(clouds.len());
        for cl in clouds {
            if cl.dim() != dim || cl.channels() != c {
                return Err(Error::arg("clouds in a batch must share dimension and channels"));
            }
            if cl.is_empty() {
                return Err(Error::arg("empty cloud in batch"));
            }
            coords.extend_from_slice(cl.coords());
            feats.extend_from_slice(cl.features());
            counts.push(cl.len());
        }
        let rows = counts.iter().sum();
        Ok(Self {
            dim,
            counts,
            coords,
            features: Tensor::matrix(rows, c, feats)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Prefix sums of `counts`, `batch + 1` long.
    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.counts.len() + 1);
        o.push(0);
        for c in &self.counts {
            o.push(o.last().unwrap() + c);
        }
        o
    }

    fn cloud_coords(&self, offsets: &[usize], b: usize) -> &[f64] {
        &self.coords[offsets[b] * self.dim..offsets[b + 1] * self.dim]
    }

    fn with_features(&self, features: Tensor) -> Self {
        Self {
            dim: self.dim,
            counts: self.counts.clone(),
            coords: self.coords.clone(),
            features,
        }
    }
}

fn add_into(acc: &mut Option<Tensor>, g: Tensor) {
    match acc {
        Some(a) => a.values_mut().iter_mut().zip(g.values()).for_each(|(x, y)| *x += y),
        None => *acc = Some(g),
    }
}

// ---------------------------------------------------------------------------
// Set abstraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScale {
    pub radius: f64,
    pub cap: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    SingleScale,
    MultiScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetAbstractionSpec {
    /// Region count; `None` makes one region of the whole set centred at
    /// the origin (global abstraction).
    pub num_centroids: Option<usize>,
    pub scales: Vec<GroupScale>,
    pub combine: Combine,
    pub grouping: Grouping,
}

impl SetAbstractionSpec {
    pub fn single(num_centroids: usize, radius: f64, cap: usize, widths: &[usize]) -> Self {
        Self {
            num_centroids: Some(num_centroids),
            scales: vec![GroupScale {
                radius,
                cap,
                widths: widths.to_vec(),
            }],
            combine: Combine::SingleScale,
            grouping: Grouping::Ball,
        }
    }

    pub fn multi(num_centroids: usize, scales: Vec<GroupScale>) -> Self {
        Self {
            num_centroids: Some(num_centroids),
            scales,
            combine: Combine::MultiScale,
            grouping: Grouping::Ball,
        }
    }

    pub fn global(widths: &[usize]) -> Self {
        Self {
            num_centroids: None,
            scales: vec![GroupScale {
                radius: f64::INFINITY,
                cap: usize::MAX,
                widths: widths.to_vec(),
            }],
            combine: Combine::SingleScale,
            grouping: Grouping::Ball,
        }
    }

    /// Spec for an abstraction level of a blueprint.
    pub fn from_level(level: &Level, cap: usize, grouping: Grouping) -> Option<Self> {
        let mut spec = match level {
            Level::Sa {
                centroids,
                radius,
                widths,
            } => Self::single(*centroids, *radius, cap, widths),
            Level::Msg {
                centroids,
                radii,
                widths,
            } => Self::multi(
                *centroids,
                radii
                    .iter()
                    .zip(widths)
                    .map(|(&radius, w)| GroupScale {
                        radius,
                        cap,
                        widths: w.clone(),
                    })
                    .collect(),
            ),
            Level::GlobalSa { widths } => Self::global(widths),
            _ => return None,
        };
        spec.grouping = grouping;
        Some(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::config("set abstraction needs at least one scale"));
        }
        if self.num_centroids == Some(0) {
            return Err(Error::config("set abstraction needs at least one centroid"));
        }
        if self.scales.iter().any(|s| s.widths.is_empty() || s.widths.contains(&0)) {
            return Err(Error::config("MLP widths must be non-empty and positive"));
        }
        match self.combine {
            Combine::SingleScale if self.scales.len() != 1 => {
                Err(Error::config("single-scale grouping takes exactly one scale"))
            }
            Combine::MultiScale => {
                if self.scales.len() < 2 {
                    return Err(Error::config("multi-scale grouping needs at least two scales"));
                }
                for (i, s) in self.scales.iter().enumerate() {
                    if self.scales[..i].iter().any(|t| t.radius == s.radius) {
                        return Err(Error::config("multi-scale radii must be distinct"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn output_width(&self) -> usize {
        self.scales.iter().map(|s| *s.widths.last().unwrap_or(&0)).sum()
    }

    fn neighborhood(&self, scale: &GroupScale) -> NeighborhoodSpec {
        match self.grouping {
            Grouping::Ball => NeighborhoodSpec::Ball {
                radius: scale.radius,
                cap: scale.cap,
            },
            Grouping::Knn => NeighborhoodSpec::Knn { k: scale.cap },
        }
    }
}

/// How a level picks its centroids, per cloud of the batch.
#[derive(Debug, Clone, Copy)]
pub enum Centers<'a> {
    /// Farthest point sampling from the given start index.
    Fps(&'a [usize]),
    /// Explicit centroid indices into each cloud.
    Given(&'a [Vec<usize>]),
}

/// One set abstraction level with its per-scale PointNets.
#[derive(Debug, Clone, PartialEq)]
pub struct SetAbstraction {
    pub spec: SetAbstractionSpec,
    /// Number of localized coordinate columns fed to the MLP (`d`, or 0 when
    /// the metric space is a separate embedding).
    pub localized: usize,
    pub in_channels: usize,
    pub mlps: Vec<SharedMlp>,
}

#[derive(Debug, Clone)]
struct ScaleCache {
    members: Vec<usize>,
    mlp: MlpCache,
    max: SetMaxCache,
}

#[derive(Debug, Clone)]
pub struct SaCache {
    in_rows: usize,
    in_channels: usize,
    localized: usize,
    /// Centroid indices into each input cloud.
    pub centroids: Vec<Vec<usize>>,
    scales: Vec<ScaleCache>,
}

impl SaCache {
    pub fn fingerprint(&self, fp: &mut Fingerprint) {
        for s in &self.scales {
            fingerprint_mlp(&s.mlp, fp);
            s.max.winners().iter().for_each(|&w| fp.push_u64(w as u64));
        }
    }
}

struct CloudGroups {
    centroids: Vec<usize>,
    lists: Vec<Vec<Vec<usize>>>,
}

impl SetAbstraction {
    pub fn new<R: Rng + ?Sized>(
        spec: SetAbstractionSpec,
        localized: usize,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if localized + in_channels == 0 {
            return Err(Error::config("set abstraction has no input channels"));
        }
        let mlps = spec
            .scales
            .iter()
            .map(|s| SharedMlp::hidden(localized + in_channels, &s.widths, rng))
            .collect();
        Ok(Self {
            spec,
            localized,
            in_channels,
            mlps,
        })
    }

    pub fn output_width(&self) -> usize {
        self.mlps.iter().map(SharedMlp::outputs).sum()
    }

    fn group(&self, input: &PointSet, offsets: &[usize], centers: Centers<'_>, b: usize) -> Result<CloudGroups> {
        let d = input.dim;
        let n = input.counts[b];
        let coords = input.cloud_coords(offsets, b);
        let Some(k) = self.spec.num_centroids else {
            let all: Vec<usize> = (0..n).collect();
            return Ok(CloudGroups {
                centroids: Vec::new(),
                lists: self.spec.scales.iter().map(|_| vec![all.clone()]).collect(),
            });
        };
        let centroids = match centers {
            Centers::Fps(starts) => fps_indices(coords, d, k.min(n), starts.get(b).copied().unwrap_or(0).min(n - 1))?.indices,
            Centers::Given(given) => {
                let g = given.get(b).ok_or_else(|| Error::arg("missing centroids for batch item"))?;
                if let Some(&bad) = g.iter().find(|&&i| i >= n) {
                    return Err(Error::arg(format!("centroid index {bad} out of range for {n} points")));
                }
                g.clone()
            }
        };
        let cc: Vec<f64> = centroids.iter().flat_map(|&i| coords[i * d..(i + 1) * d].to_vec()).collect();
        let lists = self
            .spec
            .scales
            .iter()
            .map(|s| neighbor_lists(coords, d, &cc, &self.spec.neighborhood(s)))
            .collect::<Result<_>>()?;
        Ok(CloudGroups { centroids, lists })
    }

    /// Samples centroids, groups, localizes and encodes every region.
    /// Output points are the centroids (the origin for a global level).
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: &PointSet,
        centers: Centers<'_>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(PointSet, SaCache)> {
        if input.channels() != self.in_channels {
            return Err(Error::config(format!(
                "set abstraction expects {} feature channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let d = input.dim;
        if self.localized != 0 && self.localized != d {
            return Err(Error::config("localized width must equal the metric dimension"));
        }
        let offsets = input.offsets();
        let batch = input.batch();
        let groups = par::map_current(batch, |b| self.group(input, &offsets, centers, b))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let global = self.spec.num_centroids.is_none();

        let mut out_coords = Vec::new();
        let mut out_counts = Vec::with_capacity(batch);
        for (b, g) in groups.iter().enumerate() {
            if global {
                out_coords.extend(std::iter::repeat(0.0).take(d));
                out_counts.push(1);
            } else {
                let coords = input.cloud_coords(&offsets, b);
                for &c in &g.centroids {
                    out_coords.extend_from_slice(&coords[c * d..(c + 1) * d]);
                }
                out_counts.push(g.centroids.len());
            }
        }

        let width = self.localized + self.in_channels;
        let zero = vec![0.0; d];
        let mut pooled = Vec::with_capacity(self.mlps.len());
        let mut scales = Vec::with_capacity(self.mlps.len());
        for (s, mlp) in self.mlps.iter_mut().enumerate() {
            let mut rows = Vec::new();
            let mut members = Vec::new();
            let mut seg = vec![0];
            for (b, g) in groups.iter().enumerate() {
                let coords = input.cloud_coords(&offsets, b);
                for (ci, list) in g.lists[s].iter().enumerate() {
                    let center = if global {
                        &zero[..]
                    } else {
                        let c = g.centroids[ci];
                        &coords[c * d..(c + 1) * d]
                    };
                    for &m in list {
                        if self.localized > 0 {
                            rows.extend(coords[m * d..(m + 1) * d].iter().zip(center).map(|(x, c)| x - c));
                        }
                        rows.extend_from_slice(input.features.row(offsets[b] + m));
                        members.push(offsets[b] + m);
                    }
                    seg.push(members.len());
                }
            }
            let x = Tensor::matrix(members.len(), width, rows)?;
            let (h, mlp_cache) = mlp.forward(&x, mode, rng)?;
            let (p, max) = segment_max(&h, &seg)?;
            pooled.push(p);
            scales.push(ScaleCache {
                members,
                mlp: mlp_cache,
                max,
            });
        }
        let features = if pooled.len() == 1 {
            pooled.pop().unwrap()
        } else {
            Tensor::hcat(&pooled.iter().collect::<Vec<_>>())?
        };
        let cache = SaCache {
            in_rows: input.rows(),
            in_channels: self.in_channels,
            localized: self.localized,
            centroids: groups.into_iter().map(|g| g.centroids).collect(),
            scales,
        };
        Ok((
            PointSet {
                dim: d,
                counts: out_counts,
                coords: out_coords,
                features,
            },
            cache,
        ))
    }

    /// Accumulates parameter gradients; returns the gradient with respect
    /// to the input features.
    pub fn backward(&mut self, cache: &SaCache, grad_out: &Tensor) -> Tensor {
        let widths: Vec<usize> = self.mlps.iter().map(SharedMlp::outputs).collect();
        let parts = grad_out.hsplit(&widths);
        let c = cache.in_channels;
        let mut gin = vec![0.0; cache.in_rows * c];
        for ((mlp, sc), g) in self.mlps.iter_mut().zip(&cache.scales).zip(&parts) {
            let gh = set_max_backward(&sc.max, g);
            let gx = mlp.backward(&sc.mlp, &gh);
            if c == 0 {
                continue;
            }
            for (r, &m) in sc.members.iter().enumerate() {
                let src = &gx.row(r)[cache.localized..];
                for (a, v) in gin[m * c..(m + 1) * c].iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
        Tensor::matrix(cache.in_rows, c, gin).expect("shape")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlps.iter_mut().flat_map(SharedMlp::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.mlps.iter().flat_map(SharedMlp::params).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.mlps.iter_mut().flat_map(SharedMlp::buffers_mut).collect()
    }
}

/// Single-scale level on one cloud with centroids from FPS started at 0.
pub fn sa_level_forward<R: Rng + ?Sized>(
    cloud: &PointCloud,
    level: &mut SetAbstraction,
    mode: Mode,
    rng: &mut R,
) -> Result<(PointCloud, SaCache)> {
    let input = PointSet::from_clouds(&[cloud])?;
    let (out, cache) = level.forward(&input, Centers::Fps(&[0]), mode, rng)?;
    let channels = out.channels();
    Ok((PointCloud::new(out.dim, out.coords, channels, out.features.into_values())?, cache))
}

/// Multi-scale level on one cloud: per-scale features in declared order.
pub fn msg_level_forward<R: Rng + ?Sized>(
    cloud: &PointCloud,
    level: &mut SetAbstraction,
    mode: Mode,
    rng: &mut R,
) -> Result<(PointCloud, SaCache)> {
    if level.spec.combine != Combine::MultiScale {
        return Err(Error::config("level is not multi-scale"));
    }
    sa_level_forward(cloud, level, mode, rng)
}

// ---------------------------------------------------------------------------
// Multi-resolution grouping
// ---------------------------------------------------------------------------

/// Multi-resolution block. Branch 1 abstracts hierarchically; branch 2
/// encodes the raw points of each of branch 1's final regions; branch 4
/// globally abstracts `[branch 1 | branch 2]`; branch 3 globally encodes all
/// raw points. Output is `[branch 3 | branch 4]`, one row per cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResolution {
    pub branch1: Vec<SetAbstraction>,
    pub branch2: SetAbstraction,
    pub branch3: SetAbstraction,
    pub branch4: SetAbstraction,
}

#[derive(Debug, Clone)]
pub struct MrgCache {
    b1: Vec<SaCache>,
    b2: SaCache,
    b3: SaCache,
    b4: SaCache,
    /// Per-region `[branch 1 | branch 2]` features.
    pub regions: Tensor,
}

impl MrgCache {
    fn fingerprint(&self, fp: &mut Fingerprint) {
        self.b1.iter().for_each(|c| c.fingerprint(fp));
        for c in [&self.b2, &self.b3, &self.b4] {
            c.fingerprint(fp);
        }
    }
}

impl MultiResolution {
    fn new<R: Rng + ?Sized>(
        spec: &MrgSpec,
        localized: usize,
        channels: usize,
        cap: usize,
        grouping: Grouping,
        rng: &mut R,
    ) -> Result<Self> {
        let sa_spec = |l: &Level| {
            SetAbstractionSpec::from_level(l, cap, grouping)
                .ok_or_else(|| Error::config(format!("{l} is not a set abstraction level")))
        };
        let mut width = channels;
        let mut branch1 = Vec::new();
        for l in &spec.branch1 {
            let sa = SetAbstraction::new(sa_spec(l)?, localized, width, rng)?;
            width = sa.output_width();
            branch1.push(sa);
        }
        let branch2 = SetAbstraction::new(sa_spec(&spec.branch2)?, localized, channels, rng)?;
        let branch3 = SetAbstraction::new(sa_spec(&spec.branch3)?, localized, channels, rng)?;
        let branch4 = SetAbstraction::new(sa_spec(&spec.branch4)?, localized, width + branch2.output_width(), rng)?;
        Ok(Self {
            branch1,
            branch2,
            branch3,
            branch4,
        })
    }

    pub fn output_width(&self) -> usize {
        self.branch3.output_width() + self.branch4.output_width()
    }

    /// `starts(level, set)` gives FPS start indices for branch 1's levels.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: &PointSet,
        starts: &dyn Fn(usize, &PointSet) -> Vec<usize>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(PointSet, MrgCache)> {
        let mut state = input.clone();
        let mut raw: Vec<Vec<usize>> = input.counts.iter().map(|&n| (0..n).collect()).collect();
        let mut b1 = Vec::with_capacity(self.branch1.len());
        for (level, sa) in self.branch1.iter_mut().enumerate() {
            let s = starts(level, &state);
            let (next, c) = sa.forward(&state, Centers::Fps(&s), mode, rng)?;
            raw = raw
                .iter()
                .zip(&c.centroids)
                .map(|(prev, cent)| cent.iter().map(|&j| prev[j]).collect())
                .collect();
            b1.push(c);
            state = next;
        }
        let (f2, b2) = self.branch2.forward(input, Centers::Given(&raw), mode, rng)?;
        let regions = Tensor::hcat(&[&state.features, &f2.features])?;
        let concat = state.with_features(regions.clone());
        let (g4, b4) = self.branch4.forward(&concat, Centers::Fps(&[]), mode, rng)?;
        let (g3, b3) = self.branch3.forward(input, Centers::Fps(&[]), mode, rng)?;
        let features = Tensor::hcat(&[&g3.features, &g4.features])?;
        Ok((
            g3.with_features(features),
            MrgCache {
                b1,
                b2,
                b3,
                b4,
                regions,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MrgCache, grad_out: &Tensor) -> Tensor {
        let g = grad_out.hsplit(&[self.branch3.output_width(), self.branch4.output_width()]);
        let mut gin = self.branch3.backward(&cache.b3, &g[0]);
        let g_regions = self.branch4.backward(&cache.b4, &g[1]);
        let w1 = g_regions.cols() - self.branch2.output_width();
        let parts = g_regions.hsplit(&[w1, self.branch2.output_width()]);
        let g2 = self.branch2.backward(&cache.b2, &parts[1]);
        gin.values_mut().iter_mut().zip(g2.values()).for_each(|(a, b)| *a += b);
        let mut g = parts[0].clone();
        for (sa, c) in self.branch1.iter_mut().zip(&cache.b1).rev() {
            g = sa.backward(c, &g);
        }
        gin.values_mut().iter_mut().zip(g.values()).for_each(|(a, b)| *a += b);
        gin
    }

    fn levels_mut(&mut self) -> impl Iterator<Item = &mut SetAbstraction> {
        self.branch1
            .iter_mut()
            .chain([&mut self.branch2, &mut self.branch3, &mut self.branch4])
    }

    fn levels(&self) -> impl Iterator<Item = &SetAbstraction> {
        self.branch1
            .iter()
            .chain([&self.branch2, &self.branch3, &self.branch4])
    }
}

// ---------------------------------------------------------------------------
// Feature propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePropagationSpec {
    pub widths: Vec<usize>,
    pub interp_k: usize,
    pub interp_power: f64,
}

impl FeaturePropagationSpec {
    pub fn new(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            interp_k: 3,
            interp_power: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("feature propagation widths must be non-empty and positive"));
        }
        if self.interp_k == 0 {
            return Err(Error::config("interpolation needs k >= 1"));
        }
        if !(self.interp_power > 0.0) {
            return Err(Error::config("interpolation power must be positive"));
        }
        Ok(())
    }
}

/// Inverse-distance weights of the `k` nearest sources for every target.
/// A source closer than 1e-12 takes the full weight.
pub fn interpolation_weights(
    targets: &[f64],
    sources: &[f64],
    dim: usize,
    k: usize,
    power: f64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = sources.len() / dim;
    if k == 0 || k > n {
        return Err(Error::arg(format!("k={k} invalid for {n} sources")));
    }
    let lists = if n <= 64 {
        knn_brute(sources, dim, targets, k)?
    } else {
        let index = SpatialIndex::from_coords(sources, dim, suggest_cell_size(sources, dim, 2.0))?;
        targets.chunks_exact(dim).map(|q| index.knn(q, k)).collect()
    };
    Ok(lists
        .into_iter()
        .zip(targets.chunks_exact(dim))
        .map(|(list, q)| {
            let dists: Vec<f64> = list
                .iter()
                .map(|&s| squared_distance(&sources[s * dim..(s + 1) * dim], q).sqrt())
                .collect();
            if let Some(pos) = dists.iter().position(|&d| d < 1e-12) {
                return vec![(list[pos], 1.0)];
            }
            let raw: Vec<f64> = dists.iter().map(|d| d.powf(-power)).collect();
            let total: f64 = raw.iter().sum();
            list.into_iter().zip(raw).map(|(s, w)| (s, w / total)).collect()
        })
        .collect())
}

fn apply_weights(weights: &[Vec<(usize, f64)>], features: &Tensor) -> Tensor {
    let c = features.cols();
    let mut out = vec![0.0; weights.len() * c];
    for (row, ws) in out.chunks_exact_mut(c.max(1)).zip(weights) {
        for &(s, w) in ws {
            for (o, f) in row.iter_mut().zip(features.row(s)) {
                *o += w * f;
            }
        }
    }
    Tensor::matrix(weights.len(), c, out).expect("shape")
}

/// Inverse-distance weighted interpolation of `source_features` onto the
/// target coordinates.
pub fn interpolate_features(
    targets: &[f64],
    sources: &[f64],
    source_features: &Tensor,
    dim: usize,
    k: usize,
    power: f64,
) -> Result<Tensor> {
    if source_features.rows() * dim != sources.len() {
        return Err(Error::arg("one feature row per source is required"));
    }
    let w = interpolation_weights(targets, sources, dim, k, power)?;
    Ok(apply_weights(&w, source_features))
}

/// Feature propagation level: interpolate coarse features to the fine
/// points, append skip features, apply a shared per-point MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePropagation {
    pub spec: FeaturePropagationSpec,
    pub coarse_channels: usize,
    pub skip_channels: usize,
    pub mlp: SharedMlp,
}

#[derive(Debug, Clone)]
pub struct FpCache {
    weights: Vec<Vec<(usize, f64)>>,
    coarse_rows: usize,
    mlp: MlpCache,
}

impl FpCache {
    pub fn fingerprint(&self, fp: &mut Fingerprint) {
        fingerprint_mlp(&self.mlp, fp);
    }
}

impl FeaturePropagation {
    /// `score` makes the last layer a plain affine score layer, and puts
    /// `dropout` on the two hidden layers before it.
    pub fn new<R: Rng + ?Sized>(
        spec: FeaturePropagationSpec,
        coarse_channels: usize,
        skip_channels: usize,
        score: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let last = spec.widths.len() - 1;
        let mut n_in = coarse_channels + skip_channels;
        let mut layers = Vec::with_capacity(spec.widths.len());
        for (j, &w) in spec.widths.iter().enumerate() {
            if score && j == last {
                layers.push(DenseLayer::output(n_in, w, rng));
            } else {
                let dp = if score && j + 3 > last { dropout } else { 0.0 };
                layers.push(DenseLayer::hidden(n_in, w, dp, rng));
            }
            n_in = w;
        }
        Ok(Self {
            spec,
            coarse_channels,
            skip_channels,
            mlp: SharedMlp::from_layers(layers),
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        coarse: &PointSet,
        fine: &PointSet,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(PointSet, FpCache)> {
        if coarse.channels() != self.coarse_channels || fine.channels() != self.skip_channels {
            return Err(Error::config(format!(
                "feature propagation expects {}+{} channels, got {}+{}",
                self.coarse_channels,
                self.skip_channels,
                coarse.channels(),
                fine.channels()
            )));
        }
        if coarse.batch() != fine.batch() {
            return Err(Error::arg("coarse and fine batches differ"));
        }
        let d = fine.dim;
        let co = coarse.offsets();
        let fo = fine.offsets();
        let per_cloud = par::map_current(fine.batch(), |b| {
            let k = self.spec.interp_k.min(coarse.counts[b]);
            interpolation_weights(
                fine.cloud_coords(&fo, b),
                coarse.cloud_coords(&co, b),
                d,
                k,
                self.spec.interp_power,
            )
            .map(|ws| {
                ws.into_iter()
                    .map(|w| w.into_iter().map(|(s, x)| (s + co[b], x)).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
        });
        let mut weights = Vec::with_capacity(fine.rows());
        for w in per_cloud {
            weights.extend(w?);
        }
        let interp = apply_weights(&weights, &coarse.features);
        let x = Tensor::hcat(&[&interp, &fine.features])?;
        let (y, mlp) = self.mlp.forward(&x, mode, rng)?;
        Ok((
            fine.with_features(y),
            FpCache {
                weights,
                coarse_rows: coarse.rows(),
                mlp,
            },
        ))
    }

    /// Returns gradients for the coarse and the skip features.
    pub fn backward(&mut self, cache: &FpCache, grad_out: &Tensor) -> (Tensor, Tensor) {
        let gx = self.mlp.backward(&cache.mlp, grad_out);
        let parts = gx.hsplit(&[self.coarse_channels, self.skip_channels]);
        let c = self.coarse_channels;
        let mut gc = vec![0.0; cache.coarse_rows * c];
        for (r, ws) in cache.weights.iter().enumerate() {
            let g = parts[0].row(r);
            for &(s, w) in ws {
                for (a, v) in gc[s * c..(s + 1) * c].iter_mut().zip(g) {
                    *a += w * v;
                }
            }
        }
        let mut it = parts.into_iter();
        it.next();
        (Tensor::matrix(cache.coarse_rows, c, gc).expect("shape"), it.next().unwrap())
    }
}

/// Feature propagation for one coarse/fine pair.
pub fn fp_level_forward<R: Rng + ?Sized>(
    coarse: &PointCloud,
    fine_coords: &[f64],
    skip_features: &Tensor,
    level: &mut FeaturePropagation,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, FpCache)> {
    let d = coarse.dim();
    let coarse_set = PointSet::from_clouds(&[coarse])?;
    let fine = PointSet {
        dim: d,
        counts: vec![fine_coords.len() / d],
        coords: fine_coords.to_vec(),
        features: skip_features.clone(),
    };
    if skip_features.rows() != fine.counts[0] {
        return Err(Error::arg("one skip feature row per fine point is required"));
    }
    let (out, cache) = level.forward(&coarse_set, &fine, mode, rng)?;
    Ok((out.features, cache))
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// FPS start index policy for a forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FpsStart {
    /// Index 0 at every level.
    #[default]
    First,
    /// Given start per cloud at the first level, index 0 afterwards (which
    /// is the same geometric point, since FPS lists its start first).
    Pinned(Vec<usize>),
    /// Random start per cloud and level, from this seed.
    Random(u64),
}

fn fps_starts(policy: &FpsStart, level: usize, set: &PointSet) -> Vec<usize> {
    match policy {
        FpsStart::First => vec![0; set.batch()],
        FpsStart::Pinned(v) if level == 0 => v.clone(),
        FpsStart::Pinned(_) => vec![0; set.batch()],
        FpsStart::Random(seed) => set
            .counts
            .iter()
            .enumerate()
            .map(|(b, &n)| stream_rng(*seed, stream_id(&[level as u64, b as u64])).gen_range(0..n.max(1)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub start: FpsStart,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            start: FpsStart::First,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            start: FpsStart::First,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Abstraction(SetAbstraction),
    Dense(DenseLayer),
    /// Feature propagation whose skip link comes from state `skip`.
    Propagation { fp: FeaturePropagation, skip: usize },
    MultiResolution(Box<MultiResolution>),
}

#[derive(Debug, Clone)]
enum StageCache {
    Abstraction(SaCache),
    Dense(DenseCache),
    Propagation(FpCache),
    MultiResolution(Box<MrgCache>),
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct NetworkCache {
    shapes: Vec<(usize, usize)>,
    stages: Vec<StageCache>,
}

impl NetworkCache {
    /// Hash of the discrete choices made: ReLU signs and max winners.
    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::default();
        for s in &self.stages {
            match s {
                StageCache::Abstraction(c) => c.fingerprint(&mut fp),
                StageCache::Dense(c) => c.fingerprint(&mut fp),
                StageCache::Propagation(c) => fingerprint_mlp(&c.mlp, &mut fp),
                StageCache::MultiResolution(c) => c.fingerprint(&mut fp),
            }
        }
        fp.value()
    }

    /// The `[branch 1 | branch 2]` region features of an MRG block, if any.
    pub fn mrg_regions(&self) -> Option<&Tensor> {
        self.stages.iter().find_map(|s| match s {
            StageCache::MultiResolution(c) => Some(&c.regions),
            _ => None,
        })
    }
}

/// A network built from a blueprint for fixed input dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub blueprint: NetworkBlueprint,
    pub dim: usize,
    pub channels: usize,
    pub metric: MetricConfig,
    pub num_classes: usize,
    pub stages: Vec<Stage>,
}

impl Network {
    pub fn from_blueprint<R: Rng + ?Sized>(
        blueprint: &NetworkBlueprint,
        dim: usize,
        channels: usize,
        metric: MetricConfig,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let localized = match metric {
            MetricConfig::FeatureSpaceIsMetric => dim,
            MetricConfig::SeparateEmbedding => 0,
        };
        chain_widths(blueprint, localized, channels, num_classes).map_err(|d| Error::config(d.to_string()))?;
        let cap = blueprint.group_cap;
        let last = blueprint.levels.len() - 1;
        let mut width = channels;
        let mut skips = Vec::new();
        let mut stages = Vec::with_capacity(blueprint.levels.len());
        for (i, level) in blueprint.levels.iter().enumerate() {
            let stage = match level {
                Level::Sa { .. } | Level::Msg { .. } | Level::GlobalSa { .. } => {
                    let spec = SetAbstractionSpec::from_level(level, cap, blueprint.grouping).expect("abstraction level");
                    let sa = SetAbstraction::new(spec, localized, width, rng)?;
                    skips.push((i, width));
                    width = sa.output_width();
                    Stage::Abstraction(sa)
                }
                Level::Fc { width: w, dropout } => {
                    let layer = if i == last {
                        DenseLayer::output(width, *w, rng)
                    } else {
                        DenseLayer::hidden(width, *w, *dropout, rng)
                    };
                    width = *w;
                    Stage::Dense(layer)
                }
                Level::Fp { widths } => {
                    let (skip, skip_w) = skips.pop().ok_or_else(|| Error::config("FP level without a matching SA level"))?;
                    let fp = FeaturePropagation::new(
                        FeaturePropagationSpec::new(widths),
                        width,
                        skip_w,
                        i == last,
                        blueprint.fp_dropout,
                        rng,
                    )?;
                    width = *widths.last().unwrap();
                    Stage::Propagation { fp, skip }
                }
                Level::Mrg(m) => {
                    let mrg = MultiResolution::new(m, localized, channels, cap, blueprint.grouping, rng)?;
                    width = mrg.output_width();
                    Stage::MultiResolution(Box::new(mrg))
                }
            };
            stages.push(stage);
        }
        Ok(Self {
            blueprint: blueprint.clone(),
            dim,
            channels,
            metric,
            num_classes,
            stages,
        })
    }

    /// Per-cloud logits (classification) or per-point logits stacked in
    /// input order (segmentation).
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        clouds: &[&PointCloud],
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Tensor, NetworkCache)> {
        if let Some(c) = clouds.iter().find(|c| c.dim() != self.dim || c.channels() != self.channels) {
            return Err(Error::arg(format!(
                "network takes d={} C={} clouds, got d={} C={}",
                self.dim,
                self.channels,
                c.dim(),
                c.channels()
            )));
        }
        let mode = opts.mode;
        let mut states = vec![PointSet::from_clouds(clouds)?];
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut sa_level = 0;
        for stage in &mut self.stages {
            let cur = states.last().unwrap();
            let (next, cache) = match stage {
                Stage::Abstraction(sa) => {
                    let starts = fps_starts(&opts.start, sa_level, cur);
                    sa_level += 1;
                    let (o, c) = sa.forward(cur, Centers::Fps(&starts), mode, rng)?;
                    (o, StageCache::Abstraction(c))
                }
                Stage::Dense(layer) => {
                    let (y, c) = layer.forward(&cur.features, mode, rng)?;
                    (cur.with_features(y), StageCache::Dense(c))
                }
                Stage::Propagation { fp, skip } => {
                    let (o, c) = fp.forward(cur, &states[*skip], mode, rng)?;
                    (o, StageCache::Propagation(c))
                }
                Stage::MultiResolution(m) => {
                    let start = opts.start.clone();
                    let starts = move |level: usize, set: &PointSet| fps_starts(&start, level, set);
                    let (o, c) = m.forward(cur, &starts, mode, rng)?;
                    (o, StageCache::MultiResolution(Box::new(c)))
                }
            };
            caches.push(cache);
            states.push(next);
        }
        let shapes = states.iter().map(|s| (s.rows(), s.channels())).collect();
        let logits = states.pop().unwrap().features;
        Ok((logits, NetworkCache { shapes, stages: caches }))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, cache: &NetworkCache, grad_logits: &Tensor) -> Result<()> {
        let n = cache.shapes.len();
        if grad_logits.rows() != cache.shapes[n - 1].0 || grad_logits.cols() != cache.shapes[n - 1].1 {
            return Err(Error::arg("logit gradient shape does not match the forward pass"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_logits.clone());
        for (i, (stage, sc)) in self.stages.iter_mut().zip(&cache.stages).enumerate().rev() {
            let g = grads[i + 1].take().unwrap_or_else(|| {
                let (r, c) = cache.shapes[i + 1];
                Tensor::zeros(&[r, c])
            });
            match (stage, sc) {
                (Stage::Abstraction(sa), StageCache::Abstraction(c)) => {
                    let gin = sa.backward(c, &g);
                    add_into(&mut grads[i], gin);
                }
                (Stage::Dense(layer), StageCache::Dense(c)) => {
                    let gin = layer.backward(c, &g);
                    add_into(&mut grads[i], gin);
                }
                (Stage::Propagation { fp, skip }, StageCache::Propagation(c)) => {
                    let (gc, gs) = fp.backward(c, &g);
                    add_into(&mut grads[i], gc);
                    add_into(&mut grads[*skip], gs);
                }
                (Stage::MultiResolution(m), StageCache::MultiResolution(c)) => {
                    let gin = m.backward(c, &g);
                    add_into(&mut grads[i], gin);
                }
                _ => return Err(Error::arg("cache does not belong to this network")),
            }
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for s in &mut self.stages {
            match s {
                Stage::Abstraction(sa) => v.extend(sa.params_mut()),
                Stage::Dense(l) => v.extend(l.params_mut()),
                Stage::Propagation { fp, .. } => v.extend(fp.mlp.params_mut()),
                Stage::MultiResolution(m) => {
                    for sa in m.levels_mut() {
                        v.extend(sa.params_mut());
                    }
                }
            }
        }
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for s in &self.stages {
            match s {
                Stage::Abstraction(sa) => v.extend(sa.params()),
                Stage::Dense(l) => v.extend(l.params()),
                Stage::Propagation { fp, .. } => v.extend(fp.mlp.params()),
                Stage::MultiResolution(m) => {
                    for sa in m.levels() {
                        v.extend(sa.params());
                    }
                }
            }
        }
        v
    }

    /// Batch-norm running statistics in a fixed order.
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for s in &mut self.stages {
            match s {
                Stage::Abstraction(sa) => v.extend(sa.buffers_mut()),
                Stage::Dense(l) => v.extend(l.buffers_mut()),
                Stage::Propagation { fp, .. } => v.extend(fp.mlp.buffers_mut()),
                Stage::MultiResolution(m) => {
                    for sa in m.levels_mut() {
                        v.extend(sa.buffers_mut());
                    }
                }
            }
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn param_vector(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.values().to_vec()).collect()
    }

    pub fn set_param_vector(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::arg(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn grad_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|t| t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect()
    }
}

/// Finite-difference check of every parameter gradient of `net` for the
/// scalar `sum(logits * probe)`, in train mode with dropout replayed from
/// `seed`. Coordinates whose perturbation flips a ReLU or a max winner are
/// skipped.
pub fn check_network_gradients(
    net: &mut Network,
    clouds: &[&PointCloud],
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let fwd = ForwardOptions::train();
    let (logits, cache) = net.forward(clouds, &fwd, &mut stream_rng(seed, 1))?;
    let mut prng = stream_rng(seed, 2);
    let probe: Vec<f64> = (0..logits.len()).map(|_| prng.gen_range(-1.0..1.0)).collect();
    let probe_t = Tensor::from_vec(logits.shape(), probe.clone())?;
    net.zero_grad();
    net.backward(&cache, &probe_t)?;
    let analytic = net.grad_vector();
    let x0 = net.param_vector();
    let mut failure = None;
    let report = grad_check_piecewise(
        |p| {
            net.set_param_vector(p).expect("length");
            match net.forward(clouds, &fwd, &mut stream_rng(seed, 1)) {
                Ok((l, c)) => (l.values().iter().zip(&probe).map(|(a, b)| a * b).sum(), c.fingerprint()),
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, 0)
                }
            }
        },
        &x0,
        &analytic,
        opts,
    );
    net.set_param_vector(&x0)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
