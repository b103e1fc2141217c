use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Training-time perturbations. The default changes nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Upper bound `p` of the per-cloud dropout ratio, applied by
    /// [`random_input_dropout`].
    pub dropout_p: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub scale_range: (f64, f64),
    /// Global translation drawn per axis from `[-shift_range, shift_range]`.
    pub shift_range: f64,
    pub rotate_up_axis: bool,
    pub up_axis: usize,
    /// First feature column of a `d`-wide block of normal vectors.
    pub normals_at: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            dropout_p: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            scale_range: (1.0, 1.0),
            shift_range: 0.0,
            rotate_up_axis: false,
            up_axis: 2,
            normals_at: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must be in [0, 1)"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("scale_range needs 0 < lo <= hi"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0 && self.shift_range >= 0.0) {
            return Err(Error::config("jitter and shift magnitudes must be non-negative"));
        }
        Ok(())
    }
}

/// Drops each point with probability `theta ~ U[0, p]`, drawn once per
/// cloud. At least one point always survives.
pub fn random_input_dropout<R: Rng + ?Sized>(cloud: &PointCloud, p: f64, rng: &mut R) -> PointCloud {
    if p <= 0.0 {
        return cloud.clone();
    }
    let theta = rng.gen::<f64>() * p;
    let mut keep: Vec<usize> = (0..cloud.len()).filter(|_| rng.gen::<f64>() >= theta).collect();
    if keep.is_empty() {
        keep.push(rng.gen_range(0..cloud.len()));
    }
    cloud.select(&keep).expect("indices in range")
}

/// Rotation about the up axis (in-plane for 2-D clouds), uniform scaling,
/// global shift and clipped per-point jitter, in that order. Declared
/// normal columns are rotated and re-normalized.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, config: &AugmentConfig, rng: &mut R) -> Result<PointCloud> {
    config.validate()?;
    let d = cloud.dim();
    let c = cloud.channels();
    if config.rotate_up_axis && d >= 3 && config.up_axis >= d {
        return Err(Error::config(format!("up axis {} out of range for d={d}", config.up_axis)));
    }
    if let Some(at) = config.normals_at {
        if at + d > c {
            return Err(Error::config("normal columns exceed the feature width"));
        }
    }
    let mut coords = cloud.coords().to_vec();
    let mut feats = cloud.features().to_vec();

    if config.rotate_up_axis && d >= 2 {
        let (a, b) = if d == 2 {
            (0, 1)
        } else {
            let mut plane = (0..d).filter(|&i| i != config.up_axis);
            (plane.next().unwrap(), plane.next().unwrap())
        };
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, co) = angle.sin_cos();
        let rotate = |v: &mut [f64]| {
            let (x, y) = (v[a], v[b]);
            v[a] = co * x - s * y;
            v[b] = s * x + co * y;
        };
        coords.chunks_exact_mut(d).for_each(rotate);
        if let Some(at) = config.normals_at {
            feats.chunks_exact_mut(c).for_each(|f| rotate(&mut f[at..at + d]));
        }
    }

    let (lo, hi) = config.scale_range;
    if lo != hi || lo != 1.0 {
        let s = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        coords.iter_mut().for_each(|v| *v *= s);
    }

    if config.shift_range > 0.0 {
        let shift: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(-config.shift_range..=config.shift_range))
            .collect();
        for p in coords.chunks_exact_mut(d) {
            p.iter_mut().zip(&shift).for_each(|(v, t)| *v += t);
        }
    }

    if config.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, config.jitter_sigma).map_err(|e| Error::config(e.to_string()))?;
        let clip = config.jitter_clip;
        for v in &mut coords {
            let j = normal.sample(rng);
            *v += if clip > 0.0 { j.clamp(-clip, clip) } else { j };
        }
    }

    if let Some(at) = config.normals_at {
        for f in feats.chunks_exact_mut(c) {
            let n = &mut f[at..at + d];
            let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                n.iter_mut().for_each(|v| *v /= len);
            }
        }
    }

    let mut out = PointCloud::new(d, coords, c, feats)?.with_class(cloud.class());
    if let Some(l) = cloud.labels() {
        out = out.with_labels(l.to_vec())?;
    }
    Ok(out)
}
