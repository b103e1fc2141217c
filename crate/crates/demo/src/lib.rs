//! WebAssembly bindings for the interactive page in `www/`.
//!
//! Coordinates cross the boundary as flat `Float64Array`s (`n x dim`, row
//! major) and indices come back as `Uint32Array`s. The plain `*_impl`
//! functions carry the logic so native tests can call them.

use hpsl_core::hierarchy::interpolate_features;
use hpsl_core::neighborhood::SpatialIndex;
use hpsl_core::nn::Tensor;
use hpsl_core::rng::stream_rng;
use hpsl_core::sampling::fps_indices;
use wasm_bindgen::prelude::*;

fn check_dim(coords: &[f64], dim: usize) -> Result<usize, String> {
    if dim == 0 || coords.len() % dim != 0 {
        return Err(format!("{} values do not form {dim}-D points", coords.len()));
    }
    Ok(coords.len() / dim)
}

pub fn fps_impl(coords: &[f64], dim: usize, m: usize, start: usize) -> Result<Vec<u32>, String> {
    check_dim(coords, dim)?;
    let r = fps_indices(coords, dim, m, start).map_err(|e| e.to_string())?;
    Ok(r.indices.into_iter().map(|i| i as u32).collect())
}

pub fn ball_query_impl(coords: &[f64], dim: usize, centre: &[f64], radius: f64, cap: usize) -> Result<Vec<u32>, String> {
    check_dim(coords, dim)?;
    if centre.len() != dim {
        return Err(format!("query point has {} coordinates, expected {dim}", centre.len()));
    }
    if !(radius > 0.0) || cap == 0 {
        return Err("radius and cap must be positive".into());
    }
    let index = SpatialIndex::from_coords(coords, dim, radius).map_err(|e| e.to_string())?;
    Ok(index.ball(centre, radius, cap).into_iter().map(|i| i as u32).collect())
}

pub fn interpolate_impl(
    targets: &[f64],
    sources: &[f64],
    values: &[f64],
    dim: usize,
    k: usize,
) -> Result<Vec<f64>, String> {
    check_dim(targets, dim)?;
    let n = check_dim(sources, dim)?;
    if n == 0 || values.len() % n != 0 {
        return Err(format!("{} values for {n} sources", values.len()));
    }
    let feats = Tensor::matrix(n, values.len() / n, values.to_vec()).map_err(|e| e.to_string())?;
    let out = interpolate_features(targets, sources, &feats, dim, k.min(n), 2.0).map_err(|e| e.to_string())?;
    Ok(out.into_values())
}

/// Farthest point sampling: `m` indices, the first being `start`.
#[wasm_bindgen]
pub fn fps(coords: &[f64], dim: usize, m: usize, start: usize) -> Result<Vec<u32>, JsError> {
    fps_impl(coords, dim, m, start).map_err(|e| JsError::new(&e))
}

/// Up to `cap` points within `radius` of `centre`, nearest first.
#[wasm_bindgen]
pub fn ball_query(coords: &[f64], dim: usize, centre: &[f64], radius: f64, cap: usize) -> Result<Vec<u32>, JsError> {
    ball_query_impl(coords, dim, centre, radius, cap).map_err(|e| JsError::new(&e))
}

/// Inverse squared distance interpolation of per-source `values` (any
/// number of channels) onto `targets` from the `k` nearest sources.
#[wasm_bindgen]
pub fn interpolate(targets: &[f64], sources: &[f64], values: &[f64], dim: usize, k: usize) -> Result<Vec<f64>, JsError> {
    interpolate_impl(targets, sources, values, dim, k).map_err(|e| JsError::new(&e))
}

/// Reproducible 2-D demo cloud: a ring, a dense blob and uniform clutter.
#[wasm_bindgen]
pub fn demo_cloud(n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(n * 2);
    for i in 0..n {
        let (x, y) = match i % 3 {
            0 => {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = 0.7 + rng.gen_range(-0.03..0.03);
                (r * a.cos(), r * a.sin())
            }
            1 => (0.25 + rng.gen_range(-0.12..0.12), -0.2 + rng.gen_range(-0.12..0.12)),
            _ => (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        };
        out.extend([x, y]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_starts_where_asked_and_spreads_out() {
        let coords = [0.0, 0.0, 1.0, 0.0, 0.1, 0.0, 0.0, 1.0];
        assert_eq!(fps_impl(&coords, 2, 3, 0).unwrap(), vec![0, 1, 3]);
        assert!(fps_impl(&coords, 2, 9, 0).is_err());
        assert!(fps_impl(&coords[..3], 2, 1, 0).is_err());
    }

    #[test]
    fn ball_query_is_nearest_first_and_capped() {
        let coords = [0.0, 0.0, 0.3, 0.0, 0.1, 0.0, 2.0, 2.0];
        assert_eq!(ball_query_impl(&coords, 2, &[0.0, 0.0], 0.5, 8).unwrap(), vec![0, 2, 1]);
        assert_eq!(ball_query_impl(&coords, 2, &[0.0, 0.0], 0.5, 2).unwrap(), vec![0, 2]);
        assert!(ball_query_impl(&coords, 2, &[0.0], 0.5, 2).is_err());
    }

    #[test]
    fn interpolation_reproduces_sources_and_averages_between() {
        let sources = [0.0, 0.0, 1.0, 0.0];
        let values = [0.0, 10.0];
        let out = interpolate_impl(&[0.0, 0.0, 0.5, 0.0], &sources, &values, 2, 3).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn demo_cloud_is_reproducible() {
        assert_eq!(demo_cloud(30, 1), demo_cloud(30, 1));
        assert_eq!(demo_cloud(30, 1).len(), 60);
    }
}
