use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::arg(format!(
                "{} pixels do not form a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Parses binary (P5) or plain (P2) PGM, scaling by the declared maximum.
pub fn parse_pgm(bytes: &[u8], source: &str) -> Result<GrayImage> {
    let err = |message: String| Error::Parse {
        source_name: source.to_string(),
        line: 1,
        message,
    };
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes).ok_or_else(|| err("empty file".into()))?;
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let t = token(bytes).ok_or_else(|| err(format!("missing {name}")))?;
        *slot = t.parse().map_err(|_| err(format!("bad {name} `{t}`")))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(err(format!("maxval {maxval} out of range")));
    }
    let count = w * h;
    let scale = maxval as f64;
    let pixels: Vec<f64> = match magic.as_str() {
        "P2" => (0..count)
            .map(|i| {
                let t = token(bytes).ok_or_else(|| err(format!("missing pixel {i}")))?;
                let v: usize = t.parse().map_err(|_| err(format!("bad pixel `{t}`")))?;
                Ok(v.min(maxval) as f64 / scale)
            })
            .collect::<Result<_>>()?,
        "P5" => {
            // Exactly one whitespace byte separates the header from the raster.
            let start = pos + 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let raster = bytes
                .get(start..start + need)
                .ok_or_else(|| err(format!("raster needs {need} bytes")))?;
            if wide {
                raster
                    .chunks_exact(2)
                    .map(|b| (u16::from_be_bytes([b[0], b[1]]) as usize).min(maxval) as f64 / scale)
                    .collect()
            } else {
                raster.iter().map(|&b| (b as usize).min(maxval) as f64 / scale).collect()
            }
        }
        other => return Err(err(format!("unsupported magic `{other}` (expected P2 or P5)"))),
    };
    GrayImage::new(w, h, pixels)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    parse_pgm(&std::fs::read(path)?, &path.display().to_string())
}

/// Renders an image as binary PGM with maxval 255.
pub fn format_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Pixels brighter than 0.5 become points at their centres in `[-1, 1]^2`
/// (image centre at the origin, y up). The set is subsampled or padded with
/// jittered duplicates to exactly `target_n` points.
pub fn pixels_to_pointcloud<R: Rng + ?Sized>(image: &GrayImage, target_n: usize, rng: &mut R) -> Result<PointCloud> {
    if target_n == 0 {
        return Err(Error::arg("target point count must be positive"));
    }
    let (w, h) = (image.width as f64, image.height as f64);
    let mut base = Vec::new();
    for i in 0..image.height {
        for j in 0..image.width {
            if image.at(i, j) > 0.5 {
                base.push([((j as f64 + 0.5) / w) * 2.0 - 1.0, 1.0 - ((i as f64 + 0.5) / h) * 2.0]);
            }
        }
    }
    if base.is_empty() {
        return Err(Error::arg("image has no pixel brighter than 0.5"));
    }
    let mut coords = Vec::with_capacity(target_n * 2);
    if base.len() >= target_n {
        let mut pick = sample(rng, base.len(), target_n).into_vec();
        pick.sort_unstable();
        for i in pick {
            coords.extend_from_slice(&base[i]);
        }
    } else {
        let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
        for p in &base {
            coords.extend_from_slice(p);
        }
        for _ in base.len()..target_n {
            let p = base[rng.gen_range(0..base.len())];
            for v in p {
                coords.push(v + Distribution::<f64>::sample(&jitter, rng).clamp(-0.03, 0.03));
            }
        }
    }
    PointCloud::from_coords(2, coords)
}
