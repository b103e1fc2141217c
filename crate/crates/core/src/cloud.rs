//! Point-cloud data model, Euclidean metric helpers and the `#pcl` text format.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite set of points living in a metric space, each carrying an
/// optional feature vector and an optional semantic label.
///
/// `metric_coords` decide who is near whom (sampling and grouping), while
/// `features` are the per-point channels consumed by networks. The two are
/// kept apart so non-Euclidean inputs can be handled by supplying a
/// precomputed embedding as the metric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    channels: usize,
    coords: Vec<f64>,
    features: Vec<f64>,
    labels: Option<Vec<u32>>,
    class: Option<u32>,
}

/// How grouping distances relate to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MetricConfig {
    /// Localized metric coordinates are fed to the network next to features.
    #[default]
    FeatureSpaceIsMetric,
    /// Metric coordinates are only used for neighborhoods; features alone
    /// are the network input.
    SeparateEmbedding,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinate and feature buffers.
    pub fn new(dim: usize, coords: Vec<f64>, channels: usize, features: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("metric dimension must be at least 1"));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::arg(format!(
                "coordinate buffer of length {} is not a non-empty multiple of d={dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if features.len() != n * channels {
            return Err(Error::arg(format!(
                "feature buffer has {} values, expected {n}x{channels}",
                features.len()
            )));
        }
        if let Some(bad) = coords.iter().chain(&features).position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at flat position {bad}")));
        }
        Ok(Self {
            dim,
            channels,
            coords,
            features,
            labels: None,
            class: None,
        })
    }

    /// Cloud with coordinates only (C = 0).
    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Result<Self> {
        Self::new(dim, coords, 0, Vec::new())
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::arg(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_class(mut self, class: Option<u32>) -> Self {
        self.class = class;
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false: a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn class(&self) -> Option<u32> {
        self.class
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// New cloud made of the given point indices, in order. Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::arg("selection must keep at least one point"));
        }
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::arg(format!("index {bad} out of range for {n} points")));
        }
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut features = Vec::with_capacity(indices.len() * self.channels);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
            features.extend_from_slice(self.feature(i));
        }
        Ok(Self {
            dim: self.dim,
            channels: self.channels,
            coords,
            features,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class: self.class,
        })
    }

    /// Replaces coordinates (same shape), keeping features and labels.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(Error::arg("replacement coordinates change the shape"));
        }
        let mut out = Self::new(self.dim, coords, self.channels, self.features.clone())?;
        out.labels = self.labels.clone();
        out.class = self.class;
        Ok(out)
    }

    /// Replaces features (same row count), keeping coordinates and labels.
    pub fn with_features(&self, channels: usize, features: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.dim, self.coords.clone(), channels, features)?;
        out.labels = self.labels.clone();
        out.class = self.class;
        Ok(out)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.coords.chunks_exact(self.dim) {
            for (acc, v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

/// Squared Euclidean distance. Both neighborhood search paths use this exact
/// summation order so their comparisons agree bit for bit.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s
}

/// Euclidean distance between two points of equal dimension.
pub fn pairwise_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(squared_distance(a, b).sqrt())
}

/// Centers the cloud at the origin and scales it so the farthest point has
/// norm 1. A cloud whose points all coincide collapses onto the origin.
pub fn normalize_unit_ball(cloud: &PointCloud) -> PointCloud {
    let d = cloud.dim;
    let c = cloud.centroid();
    let mut coords = cloud.coords.clone();
    for p in coords.chunks_exact_mut(d) {
        for (v, m) in p.iter_mut().zip(&c) {
            *v -= m;
        }
    }
    let max_norm = |coords: &[f64]| {
        coords
            .chunks_exact(d)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let mut scale = max_norm(&coords);
    if scale > 0.0 {
        coords.iter_mut().for_each(|v| *v /= scale);
        // Rounding can leave the farthest norm a few ulps above 1.
        for _ in 0..4 {
            scale = max_norm(&coords);
            if scale <= 1.0 {
                break;
            }
            coords.iter_mut().for_each(|v| *v /= scale);
        }
    } else {
        coords.iter_mut().for_each(|v| *v = 0.0);
    }
    PointCloud {
        coords,
        ..cloud.clone()
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Renders the `#pcl` text form. Reals use the shortest representation that
/// parses back to the same bits.
pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * (cloud.dim + cloud.channels + 1) * 12);
    let class = cloud
        .class
        .map_or_else(|| "-".to_string(), |c| c.to_string());
    let _ = writeln!(
        out,
        "#pcl d={} c={} labeled={} class={}",
        cloud.dim,
        cloud.channels,
        u8::from(cloud.labels.is_some()),
        class
    );
    for i in 0..cloud.len() {
        let mut first = true;
        for v in cloud.point(i).iter().chain(cloud.feature(i)) {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        if let Some(labels) = &cloud.labels {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    out
}

struct Header {
    dim: usize,
    channels: usize,
    labeled: bool,
    class: Option<u32>,
}

fn parse_header(line: &str, source: &str) -> Result<Header> {
    let err = |message: String| Error::Parse {
        source_name: source.to_string(),
        line: 1,
        message,
    };
    let mut toks = line.split_whitespace();
    if toks.next() != Some("#pcl") {
        return Err(err("expected header starting with `#pcl`".into()));
    }
    let (mut dim, mut channels, mut labeled, mut class) = (None, None, None, None);
    for tok in toks {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("header field `{tok}` is not key=value")))?;
        let bad = || err(format!("bad value `{value}` for header field `{key}`"));
        match key {
            "d" => dim = Some(value.parse::<usize>().map_err(|_| bad())?),
            "c" => channels = Some(value.parse::<usize>().map_err(|_| bad())?),
            "labeled" => {
                labeled = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                })
            }
            "class" => {
                class = Some(if value == "-" {
                    None
                } else {
                    Some(value.parse::<u32>().map_err(|_| bad())?)
                })
            }
            _ => return Err(err(format!("unknown header field `{key}`"))),
        }
    }
    let dim = dim.ok_or_else(|| err("header is missing d=".into()))?;
    if dim == 0 {
        return Err(err("d must be at least 1".into()));
    }
    Ok(Header {
        dim,
        channels: channels.ok_or_else(|| err("header is missing c=".into()))?,
        labeled: labeled.ok_or_else(|| err("header is missing labeled=".into()))?,
        class: class.ok_or_else(|| err("header is missing class=".into()))?,
    })
}

/// Parses the `#pcl` text form. `source` names the input in error messages.
pub fn parse_cloud(text: &str, source: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => parse_header(line, source)?,
        None => {
            return Err(Error::Parse {
                source_name: source.into(),
                line: 1,
                message: "empty input".into(),
            })
        }
    };
    let width = header.dim + header.channels + usize::from(header.labeled);
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source.into(),
            line: lineno,
            message,
        };
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != width {
            return Err(err(format!(
                "expected {width} columns (d={} c={} labeled={}), found {}",
                header.dim,
                header.channels,
                u8::from(header.labeled),
                toks.len()
            )));
        }
        for (col, tok) in toks.iter().enumerate() {
            if header.labeled && col == width - 1 {
                let label = tok
                    .parse::<u32>()
                    .map_err(|_| err(format!("label `{tok}` is not a non-negative integer")))?;
                labels.push(label);
                continue;
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| err(format!("column {} value `{tok}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(err(format!("column {} value `{tok}` is not finite", col + 1)));
            }
            if col < header.dim {
                coords.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if coords.is_empty() {
        return Err(Error::Parse {
            source_name: source.into(),
            line: text.lines().count().max(1),
            message: "cloud has no points".into(),
        });
    }
    let mut cloud = PointCloud::new(header.dim, coords, header.channels, features)?;
    if header.labeled {
        cloud = cloud.with_labels(labels)?;
    }
    Ok(cloud.with_class(header.class))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_cloud(&text, &path.display().to_string())
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_cloud(cloud).as_bytes())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        let coords = (0..n * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        PointCloud::from_coords(d, coords).unwrap()
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::from_coords(2, vec![2.0, 0.0, 4.0, 0.0]).unwrap();
        let n = normalize_unit_ball(&c);
        assert_eq!(n.coords(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalize_random_cloud_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 100, 3);
        let n = normalize_unit_ball(&c);
        let centroid = n.centroid();
        assert!(centroid.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
        let max = (0..n.len())
            .map(|i| n.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        assert!(max <= 1.0 && max >= 1.0 - 1e-10, "max norm {max}");
    }

    #[test]
    fn normalize_is_idempotent_and_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 50, 3);
            let once = normalize_unit_ball(&c);
            let twice = normalize_unit_ball(&once);
            for (a, b) in once.coords().iter().zip(twice.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
            let s = rng.gen_range(0.1..10.0);
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let moved: Vec<f64> = c
                .coords()
                .chunks(3)
                .flat_map(|p| p.iter().zip(&t).map(|(v, o)| s * v + o).collect::<Vec<_>>())
                .collect();
            let moved = normalize_unit_ball(&c.with_coords(moved).unwrap());
            for (a, b) in once.coords().iter().zip(moved.coords()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalize_degenerate_clouds() {
        let single = PointCloud::from_coords(3, vec![4.0, -2.0, 1.0]).unwrap();
        assert_eq!(normalize_unit_ball(&single).coords(), &[0.0; 3]);
        let same = PointCloud::from_coords(2, vec![1.5, 1.5, 1.5, 1.5, 1.5, 1.5]).unwrap();
        assert!(normalize_unit_ball(&same).coords().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_keeps_features_and_labels() {
        let c = PointCloud::new(1, vec![0.0, 2.0], 1, vec![7.0, 8.0])
            .unwrap()
            .with_labels(vec![3, 4])
            .unwrap();
        let n = normalize_unit_ball(&c);
        assert_eq!(n.features(), &[7.0, 8.0]);
        assert_eq!(n.labels(), Some(&[3, 4][..]));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(pairwise_distance(&[1.25, -7.0], &[1.25, -7.0]).unwrap(), 0.0);
        assert!(pairwise_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn distance_matches_scalar_oracle_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let d = rng.gen_range(1..9);
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mut acc = 0.0f64;
            let mut k = 0;
            while k < d {
                acc += (a[k] - b[k]).powi(2);
                k += 1;
            }
            let oracle = acc.sqrt();
            let got = pairwise_distance(&a, &b).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.max(1e-300));
            assert_eq!(got, pairwise_distance(&b, &a).unwrap());
            let ac = pairwise_distance(&a, &c).unwrap();
            let cb = pairwise_distance(&c, &b).unwrap();
            assert!(got <= ac + cb + 1e-9);
        }
    }

    #[test]
    fn parse_labeled_file() {
        let text = "#pcl d=2 c=1 labeled=1 class=4\n0 0 0.5 1\n# note\n1 1 0.25 2\n2 0 0 0\n";
        let c = parse_cloud(text, "t").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.labels(), Some(&[1, 2, 0][..]));
        assert_eq!(c.class(), Some(4));
        assert_eq!(c.features(), &[0.5, 0.25, 0.0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_cloud("#pcl d=3 c=0 labeled=0 class=-\n1 2 3\n1 2\n", "f").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_cloud("#pcl d=1 c=0 labeled=0 class=-\nNaN\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_cloud("#pcl d=1 c=0 labeled=1 class=-\n1 -3\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(
            parse_cloud("d=1\n", "f").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(parse_cloud("#pcl d=1 c=0 labeled=0\n1\n", "f").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcl");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let coords = (0..n * 3).map(|_| rng.gen::<f64>() * 1e3 - 500.0).collect();
        let feats = (0..n * 2).map(|_| rng.gen::<f64>() / 3.0).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let cloud = PointCloud::new(3, coords, 2, feats)
            .unwrap()
            .with_labels(labels)
            .unwrap()
            .with_class(Some(2));
        write_cloud(&cloud, &path).unwrap();
        assert_eq!(read_cloud(&path).unwrap(), cloud);
    }

    proptest::proptest! {
        #[test]
        fn text_round_trip_is_lossless(
            pts in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 1..40)
        ) {
            let cloud = PointCloud::from_coords(1, pts).unwrap();
            let back = parse_cloud(&format_cloud(&cloud), "p").unwrap();
            proptest::prop_assert_eq!(back, cloud);
        }
    }
}
