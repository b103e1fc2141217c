use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::{read_cloud, write_atomic, write_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusKind {
    #[serde(rename = "2d-shapes")]
    Shapes2d,
    #[serde(rename = "3d-solids")]
    Solids3d,
    #[serde(rename = "room-scenes")]
    RoomScenes,
}

impl CorpusKind {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            CorpusKind::Shapes2d => &["circle", "square", "triangle"],
            CorpusKind::Solids3d => &["sphere", "box", "torus", "cylinder"],
            CorpusKind::RoomScenes => &["unannotated", "floor", "wall", "furniture"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn dim(self) -> usize {
        match self {
            CorpusKind::Shapes2d => 2,
            _ => 3,
        }
    }

    /// Scenes carry per-point labels; the other kinds one class per cloud.
    pub fn is_segmentation(self) -> bool {
        self == CorpusKind::RoomScenes
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusKind::Shapes2d => "2d-shapes",
            CorpusKind::Solids3d => "3d-solids",
            CorpusKind::RoomScenes => "room-scenes",
        })
    }
}

impl FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d-shapes" => Ok(CorpusKind::Shapes2d),
            "3d-solids" => Ok(CorpusKind::Solids3d),
            "room-scenes" => Ok(CorpusKind::RoomScenes),
            other => Err(Error::arg(format!(
                "unknown corpus kind `{other}` (expected 2d-shapes, 3d-solids or room-scenes)"
            ))),
        }
    }
}

fn default_noise() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    /// For room scenes this is the number of scenes.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub seed: u64,
    /// Gaussian noise added to surface samples.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl CorpusSpec {
    pub fn new(kind: CorpusKind, train_per_class: usize, test_per_class: usize, points: usize, seed: u64) -> Self {
        Self {
            kind,
            train_per_class,
            test_per_class,
            points,
            seed,
            noise: default_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub kind: CorpusKind,
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Corpus {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn channels(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, PointCloud::channels)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Point on the outline of a regular `sides`-gon with circumradius 1.
fn polygon_point<R: Rng + ?Sized>(sides: usize, rng: &mut R) -> [f64; 2] {
    let t = rng.gen::<f64>() * sides as f64;
    let k = (t as usize).min(sides - 1);
    let f = t - k as f64;
    let corner = |k: usize| {
        let a = std::f64::consts::TAU * k as f64 / sides as f64 + std::f64::consts::FRAC_PI_2;
        [a.cos(), a.sin()]
    };
    let (a, b) = (corner(k), corner((k + 1) % sides));
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
}

/// Outline of a circle, square or triangle, randomly rotated, with noise.
pub fn shape_2d<R: Rng + ?Sized>(class: u32, n: usize, noise: f64, rng: &mut R) -> PointCloud {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = angle.sin_cos();
    let mut coords = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let [x, y] = match class {
            0 => {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            }
            1 => polygon_point(4, rng),
            _ => polygon_point(3, rng),
        };
        coords.push(c * x - s * y + noise * gaussian(rng));
        coords.push(s * x + c * y + noise * gaussian(rng));
    }
    PointCloud::from_coords(2, coords).expect("2-D buffer").with_class(Some(class))
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if l > 1e-9 {
            return [v[0] / l, v[1] / l, v[2] / l];
        }
    }
}

/// Surface of a box with half-extents `h`, faces chosen by area.
fn box_point<R: Rng + ?Sized>(h: [f64; 3], rng: &mut R) -> [f64; 3] {
    let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let t = rng.gen::<f64>() * (areas[0] + areas[1] + areas[2]);
    let axis = if t < areas[0] {
        0
    } else if t < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = rng.gen_range(-h[k]..h[k]);
    }
    p[axis] = if rng.gen::<bool>() { h[axis] } else { -h[axis] };
    p
}

/// Torus about z, rejection-sampled so the surface density is uniform.
fn torus_point<R: Rng + ?Sized>(major: f64, minor: f64, rng: &mut R) -> [f64; 3] {
    loop {
        let u = rng.gen_range(0.0..std::f64::consts::TAU);
        let v = rng.gen_range(0.0..std::f64::consts::TAU);
        let w = (major + minor * v.cos()) / (major + minor);
        if rng.gen::<f64>() <= w {
            let r = major + minor * v.cos();
            return [r * u.cos(), r * u.sin(), minor * v.sin()];
        }
    }
}

/// Closed cylinder about z.
fn cylinder_point<R: Rng + ?Sized>(radius: f64, half_h: f64, rng: &mut R) -> [f64; 3] {
    let side = std::f64::consts::TAU * radius * 2.0 * half_h;
    let caps = 2.0 * std::f64::consts::PI * radius * radius;
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    if rng.gen::<f64>() * (side + caps) < side {
        [radius * a.cos(), radius * a.sin(), rng.gen_range(-half_h..half_h)]
    } else {
        let r = radius * rng.gen::<f64>().sqrt();
        let z = if rng.gen::<bool>() { half_h } else { -half_h };
        [r * a.cos(), r * a.sin(), z]
    }
}

/// Sphere, box, torus or cylinder surface with a random pose about z and
/// mild per-sample proportions, scaled into the unit ball.
pub fn solid_3d<R: Rng + ?Sized>(class: u32, n: usize, noise: f64, rng: &mut R) -> PointCloud {
    let jitter = |rng: &mut R| rng.gen_range(0.85..1.15);
    let raw: Vec<[f64; 3]> = match class {
        0 => (0..n).map(|_| unit_sphere(rng)).collect(),
        1 => {
            let h = [0.6 * jitter(rng), 0.6 * jitter(rng), 0.6 * jitter(rng)];
            (0..n).map(|_| box_point(h, rng)).collect()
        }
        2 => {
            let minor = 0.3 * jitter(rng);
            (0..n).map(|_| torus_point(0.7, minor, rng)).collect()
        }
        _ => {
            let (r, h) = (0.6 * jitter(rng), 0.7 * jitter(rng));
            (0..n).map(|_| cylinder_point(r, h, rng)).collect()
        }
    };
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = angle.sin_cos();
    let max = raw
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut coords = Vec::with_capacity(n * 3);
    for p in raw {
        let (x, y, z) = (p[0] / max, p[1] / max, p[2] / max);
        coords.push(c * x - s * y + noise * gaussian(rng));
        coords.push(s * x + c * y + noise * gaussian(rng));
        coords.push(z + noise * gaussian(rng));
    }
    PointCloud::from_coords(3, coords).expect("3-D buffer").with_class(Some(class))
}

/// A rectangular room with floor (label 1), four walls (2), a few box-shaped
/// pieces of furniture (3) and some unannotated clutter (0). `n` points are
/// spread over the surfaces by area; z is up and the floor sits at z = 0.
pub fn room_scene<R: Rng + ?Sized>(rng: &mut R, n: usize) -> PointCloud {
    let (w, l, h) = (rng.gen_range(6.0..10.0), rng.gen_range(6.0..10.0), rng.gen_range(2.5..3.0));
    // (min corner, max corner, label); the wall and floor slabs are thin.
    let mut parts: Vec<([f64; 3], [f64; 3], u32)> = vec![
        ([0.0, 0.0, 0.0], [w, l, 0.0], 1),
        ([0.0, 0.0, 0.0], [w, 0.0, h], 2),
        ([0.0, l, 0.0], [w, l, h], 2),
        ([0.0, 0.0, 0.0], [0.0, l, h], 2),
        ([w, 0.0, 0.0], [w, l, h], 2),
    ];
    let pieces = rng.gen_range(2..=4);
    for _ in 0..pieces {
        let (sx, sy, sz) = (rng.gen_range(0.5..1.4), rng.gen_range(0.5..1.4), rng.gen_range(0.4..1.2));
        let x = rng.gen_range(0.2..w - sx - 0.2);
        let y = rng.gen_range(0.2..l - sy - 0.2);
        parts.push(([x, y, 0.0], [x + sx, y + sy, sz], 3));
    }
    let clutter = rng.gen_range(0.3..0.6);
    let (cx, cy) = (rng.gen_range(0.3..w - clutter - 0.3), rng.gen_range(0.3..l - clutter - 0.3));
    parts.push(([cx, cy, 0.0], [cx + clutter, cy + clutter, clutter], 0));

    // Each part is sampled over its surface (a box, or one face when flat).
    let area = |lo: &[f64; 3], hi: &[f64; 3]| {
        let e = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let flat = e.iter().filter(|v| **v == 0.0).count() > 0;
        let a = 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2]);
        if flat {
            a / 2.0
        } else {
            a
        }
    };
    let areas: Vec<f64> = parts.iter().map(|(lo, hi, _)| area(lo, hi)).collect();
    let total: f64 = areas.iter().sum();
    let mut coords = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut t = rng.gen::<f64>() * total;
        let mut k = 0;
        while k + 1 < parts.len() && t >= areas[k] {
            t -= areas[k];
            k += 1;
        }
        let (lo, hi, label) = parts[k];
        let half = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0, (hi[2] - lo[2]) / 2.0];
        let p = if half.iter().any(|v| *v == 0.0) {
            [
                lo[0] + rng.gen::<f64>() * (hi[0] - lo[0]),
                lo[1] + rng.gen::<f64>() * (hi[1] - lo[1]),
                lo[2] + rng.gen::<f64>() * (hi[2] - lo[2]),
            ]
        } else {
            let q = box_point(half, rng);
            [lo[0] + half[0] + q[0], lo[1] + half[1] + q[1], lo[2] + half[2] + q[2]]
        };
        coords.extend(p);
        labels.push(label);
    }
    PointCloud::from_coords(3, coords)
        .expect("3-D buffer")
        .with_labels(labels)
        .expect("one label per point")
}

/// Generates the corpus; every sample draws from its own stream, so the
/// result is identical across runs and thread counts.
pub fn make_synthetic_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.points == 0 {
        return Err(Error::arg("points per cloud must be positive"));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::arg("noise must be non-negative"));
    }
    let kind = spec.kind;
    let classes = if kind.is_segmentation() { 1 } else { kind.class_names().len() };
    let split = |tag: u64, per_class: usize| -> Vec<PointCloud> {
        let jobs: Vec<(u32, usize)> = (0..classes as u32)
            .flat_map(|c| (0..per_class).map(move |i| (c, i)))
            .collect();
        crate::par::map_current(jobs.len(), |j| {
            let (c, i) = jobs[j];
            let mut rng = stream_rng(spec.seed, stream_id(&[tag, c as u64, i as u64]));
            match kind {
                CorpusKind::Shapes2d => shape_2d(c, spec.points, spec.noise, &mut rng),
                CorpusKind::Solids3d => solid_3d(c, spec.points, spec.noise, &mut rng),
                CorpusKind::RoomScenes => room_scene(&mut rng, spec.points),
            }
        })
    };
    Ok(Corpus {
        kind,
        class_names: kind.class_names(),
        train: split(0, spec.train_per_class),
        test: split(1, spec.test_per_class),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub kind: CorpusKind,
    pub class_names: Vec<String>,
    pub dim: usize,
    pub channels: usize,
    /// Paths relative to the manifest's directory.
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `train/NNNNN.pcl`, `test/NNNNN.pcl` and `manifest.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut manifest = CorpusManifest {
        kind: corpus.kind,
        class_names: corpus.class_names.clone(),
        dim: corpus.dim(),
        channels: corpus.channels(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (name, clouds, paths) in [
        ("train", &corpus.train, &mut manifest.train),
        ("test", &corpus.test, &mut manifest.test),
    ] {
        std::fs::create_dir_all(dir.join(name))?;
        for (i, c) in clouds.iter().enumerate() {
            let rel = format!("{name}/{i:05}.pcl");
            write_cloud(c, dir.join(&rel))?;
            paths.push(rel);
        }
    }
    let path = dir.join(MANIFEST_NAME);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Reads a corpus from its directory or from the manifest file itself.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let load = |paths: &[String]| -> Result<Vec<PointCloud>> {
        paths
            .iter()
            .map(|p| {
                let c = read_cloud(dir.join(p))?;
                if c.dim() != manifest.dim || c.channels() != manifest.channels {
                    return Err(Error::arg(format!(
                        "{p}: shape d={} c={} disagrees with the manifest (d={} c={})",
                        c.dim(),
                        c.channels(),
                        manifest.dim,
                        manifest.channels
                    )));
                }
                Ok(c)
            })
            .collect()
    };
    Ok(Corpus {
        kind: manifest.kind,
        class_names: manifest.class_names.clone(),
        train: load(&manifest.train)?,
        test: load(&manifest.test)?,
    })
}
