use std::path::Path;

use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Triangle soup with optional per-face labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub face_labels: Option<Vec<u32>>,
}

const MIN_AREA: f64 = 1e-12;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().position(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::arg(format!("face {f} references a vertex beyond {n}")));
        }
        Ok(Self {
            vertices,
            faces,
            face_labels: None,
        })
    }

    pub fn with_face_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.faces.len() {
            return Err(Error::arg("one label per face is required"));
        }
        self.face_labels = Some(labels);
        Ok(self)
    }

    fn corners(&self, f: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Unit normal by the right-hand rule; zero for a degenerate face.
    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(f);
        let n = cross(sub(b, a), sub(c, a));
        let l = norm(n);
        if l > 0.0 {
            [n[0] / l, n[1] / l, n[2] / l]
        } else {
            [0.0; 3]
        }
    }

    /// Faces whose area is at most 1e-12.
    pub fn degenerate_faces(&self) -> Vec<usize> {
        (0..self.faces.len()).filter(|&f| self.face_area(f) <= MIN_AREA).collect()
    }
}

/// Reads the triangle subset of OFF: `OFF`, a `V F E` counts line, vertex
/// rows, then `3 a b c` face rows. `#` comments are skipped.
pub fn parse_off(text: &str, source: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, message: String| Error::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    // Some writers put the counts on the header line.
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| err(ln, "expected `OFF` header".into()))?
        .trim()
        .to_string();
    let (ln, counts_line) = if rest.is_empty() {
        lines.next().ok_or_else(|| err(ln, "missing counts line".into()))?
    } else {
        (ln, rest.as_str())
    };
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| err(ln, format!("bad count `{t}`"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(err(ln, "counts line needs vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, "unexpected end of vertex list".into()))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| match t.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(err(ln, format!("bad coordinate `{t}`"))),
            })
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(err(ln, "vertex needs three coordinates".into()));
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, "unexpected end of face list".into()))?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| err(ln, format!("bad index `{t}`"))))
            .collect::<Result<_>>()?;
        if f.first() != Some(&3) || f.len() < 4 {
            return Err(err(ln, "only triangle faces (`3 a b c`) are supported".into()));
        }
        if let Some(&bad) = f[1..4].iter().find(|&&i| i >= nv) {
            return Err(err(ln, format!("vertex index {bad} out of range")));
        }
        faces.push([f[1], f[2], f[3]]);
    }
    TriangleMesh::new(vertices, faces)
}

pub fn read_off(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_off(&text, &path.display().to_string())
}

/// Area-weighted uniform samples on the surface. With `normals`, each point
/// carries its face's unit normal as three feature channels; face labels
/// become point labels.
pub fn sample_mesh_surface<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    normals: bool,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::arg("sample count must be positive"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let a = mesh.face_area(f);
        total += if a > MIN_AREA { a } else { 0.0 };
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::arg("mesh has no non-degenerate face"));
    }
    let mut coords = Vec::with_capacity(n * 3);
    let mut feats = Vec::with_capacity(if normals { n * 3 } else { 0 });
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= t).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.corners(f);
        let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        for i in 0..3 {
            coords.push(a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]));
        }
        if normals {
            feats.extend_from_slice(&mesh.face_normal(f));
        }
        if let Some(l) = &mesh.face_labels {
            labels.push(l[f]);
        }
    }
    let cloud = PointCloud::new(3, coords, if normals { 3 } else { 0 }, feats)?;
    if mesh.face_labels.is_some() {
        cloud.with_labels(labels)
    } else {
        Ok(cloud)
    }
}
