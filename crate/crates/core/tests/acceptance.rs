//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p hpsl-core --test acceptance` runs everything; passing
//! criterion numbers (`-- 1 3 8`) runs a subset. Any other filter word runs
//! nothing, so `cargo test some_unit_test` does not start the long runs.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hpsl_core::archlang::{parse_blueprint, render_blueprint, validate_chain};
use hpsl_core::cloud::PointCloud;
use hpsl_core::datagen::{
    extract_cubes, make_synthetic_corpus, merge_votes, room_scene, spearman, virtual_scan, visibility_by_depth,
    Corpus, CorpusKind, CorpusSpec, CubeConfig, CubePrediction, ScanConfig,
};
use hpsl_core::experiment::run_experiment;
use hpsl_core::hierarchy::{
    check_network_gradients, fp_level_forward, interpolate_features, interpolation_weights, sa_level_forward,
    Centers, FeaturePropagation, FeaturePropagationSpec, ForwardOptions, FpsStart, GroupScale, Network, PointSet,
    SetAbstraction, SetAbstractionSpec,
};
use hpsl_core::neighborhood::{ball_query, build_index, knn_query};
use hpsl_core::nn::mlp::fingerprint_mlp;
use hpsl_core::nn::{
    grad_check, grad_check_piecewise, masked_set_max, segment_max, set_max_backward, softmax_cross_entropy,
    BatchNorm, DenseLayer, GradCheckOptions, GradCheckReport, Linear, Mode, SharedMlp, Tensor,
};
use hpsl_core::nn::Fingerprint;
use hpsl_core::rng::stream_rng;
use hpsl_core::sampling::fps_indices;
use hpsl_core::trainer::{evaluate, train, Checkpoint, EvalOptions, TrainConfig};
use hpsl_core::{cloud::MetricConfig, par};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence
// ---------------------------------------------------------------------------

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sorted_by_distance(coords: &[f64], dim: usize, q: &[f64]) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = coords.chunks(dim).enumerate().map(|(i, p)| (d2(p, q), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

fn ball_oracle(coords: &[f64], dim: usize, q: &[f64], radius: f64, cap: usize) -> Vec<usize> {
    sorted_by_distance(coords, dim, q)
        .into_iter()
        .filter(|&(d, _)| d <= radius * radius)
        .take(cap)
        .map(|(_, i)| i)
        .collect()
}

fn knn_oracle(coords: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<usize> {
    sorted_by_distance(coords, dim, q).into_iter().take(k).map(|(_, i)| i).collect()
}

/// Rescans the selected set for every candidate at every step.
fn fps_oracle(coords: &[f64], dim: usize, m: usize, start: usize) -> Vec<usize> {
    let n = coords.len() / dim;
    let p = |i: usize| &coords[i * dim..(i + 1) * dim];
    let mut picked = vec![start];
    while picked.len() < m {
        let mut best = (f64::NEG_INFINITY, 0);
        for j in 0..n {
            let nearest = picked.iter().map(|&s| d2(p(j), p(s))).fold(f64::INFINITY, f64::min);
            if nearest > best.0 {
                best = (nearest, j);
            }
        }
        picked.push(best.1);
    }
    picked
}

/// Uniform, clustered, or snapped to a coarse lattice so that exact
/// distance ties and duplicate points occur.
fn random_coords(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<f64> {
    match rng.gen_range(0..3) {
        0 => (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        1 => {
            let centres: Vec<f64> = (0..3 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (0..n)
                .flat_map(|_| {
                    let c = rng.gen_range(0..3);
                    (0..dim).map(|a| centres[c * dim + a] + rng.gen_range(-0.05..0.05)).collect::<Vec<_>>()
                })
                .collect()
        }
        _ => (0..n * dim).map(|_| f64::from(rng.gen_range(-4i32..=4)) / 4.0).collect(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let (mut ball_cases, mut knn_cases, mut fps_cases) = (0, 0, 0);
    for case in 0..1200u64 {
        let dim = rng.gen_range(1..=4);
        let n = rng.gen_range(1..300);
        let coords = random_coords(&mut rng, n, dim);
        let cloud = PointCloud::from_coords(dim, coords.clone()).map_err(|e| e.to_string())?;
        let cell = rng.gen_range(0.02..1.5);
        let index = build_index(&cloud, cell).map_err(|e| e.to_string())?;
        let m = rng.gen_range(1..20);
        let queries: Vec<f64> = (0..m)
            .flat_map(|_| {
                if rng.gen_bool(0.5) {
                    let i = rng.gen_range(0..n);
                    coords[i * dim..(i + 1) * dim].to_vec()
                } else {
                    (0..dim).map(|_| rng.gen_range(-1.2..1.2)).collect()
                }
            })
            .collect();

        let radius = rng.gen_range(0.01..1.0);
        let cap = rng.gen_range(1..64);
        let got = ball_query(&index, &queries, radius, cap).map_err(|e| e.to_string())?;
        for (qi, q) in queries.chunks(dim).enumerate() {
            if got[qi] != ball_oracle(&coords, dim, q, radius, cap) {
                return Err(format!("ball query differs from oracle in case {case}, query {qi}"));
            }
        }
        ball_cases += 1;

        let k = rng.gen_range(1..=n.min(40));
        let got = knn_query(&index, &queries, k).map_err(|e| e.to_string())?;
        for (qi, q) in queries.chunks(dim).enumerate() {
            if got[qi] != knn_oracle(&coords, dim, q, k) {
                return Err(format!("kNN differs from oracle in case {case}, query {qi}"));
            }
        }
        knn_cases += 1;

        let n_fps = n.min(120);
        let m = rng.gen_range(1..=n_fps.min(24));
        let start = rng.gen_range(0..n_fps);
        let got = fps_indices(&coords[..n_fps * dim], dim, m, start).map_err(|e| e.to_string())?;
        if got.indices != fps_oracle(&coords[..n_fps * dim], dim, m, start) {
            return Err(format!("FPS differs from the rescan oracle in case {case}"));
        }
        fps_cases += 1;
    }
    Ok(format!("{ball_cases} ball, {knn_cases} kNN, {fps_cases} FPS cases identical"))
}

// ---------------------------------------------------------------------------
// 2. Gradient suite
// ---------------------------------------------------------------------------

fn values_of(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.values().to_vec()).collect()
}

fn grads_of(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.grad().expect("parameter").to_vec()).collect()
}

fn load(ts: Vec<&mut Tensor>, p: &[f64]) -> usize {
    let mut at = 0;
    for t in ts {
        let n = t.len();
        t.values_mut().copy_from_slice(&p[at..at + n]);
        at += n;
    }
    at
}

fn probe(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, probe(rng, rows * cols)).expect("shape")
}

struct GradTally {
    worst: f64,
    worst_at: String,
    checks: usize,
    failures: Vec<String>,
}

impl GradTally {
    fn add(&mut self, what: &str, seed: u64, r: &GradCheckReport) {
        self.checks += 1;
        if r.max_rel_error > self.worst {
            self.worst = r.max_rel_error;
            self.worst_at = format!("{what} seed {seed}");
        }
        if !r.passed || r.checked == 0 {
            self.failures.push(format!(
                "{what} seed {seed}: {:.2e} at {:?} ({} checked, {} skipped)",
                r.max_rel_error, r.worst, r.checked, r.skipped
            ));
        }
    }
}

fn linear_check(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 201);
    let (rows, n_in, n_out) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(1..7));
    let layer = Linear::new(n_in, n_out, &mut rng);
    let x = random_matrix(&mut rng, rows, n_in);
    let w = probe(&mut rng, rows * n_out);
    let mut l2 = layer.clone();
    let dx = l2.backward(&x, &Tensor::matrix(rows, n_out, w.clone()).unwrap());
    let mut flat = values_of(&layer.params());
    flat.extend_from_slice(x.values());
    let mut analytic = grads_of(&l2.params());
    analytic.extend_from_slice(dx.values());
    grad_check(
        |p| {
            let mut l = layer.clone();
            let at = load(l.params_mut(), p);
            let x = Tensor::matrix(rows, n_in, p[at..].to_vec()).unwrap();
            dot(l.forward(&x).unwrap().values(), &w)
        },
        &flat,
        &analytic,
        opts,
    )
}

fn batchnorm_check(seed: u64, mode: Mode, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 202);
    let (rows, c) = (rng.gen_range(2..7), rng.gen_range(1..5));
    let mut bn = BatchNorm::new(c);
    for v in bn.gamma.values_mut() {
        *v = rng.gen_range(0.5..1.5);
    }
    for v in bn.beta.values_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in bn.running_var.iter_mut() {
        *v = rng.gen_range(0.5..2.0);
    }
    let x = random_matrix(&mut rng, rows, c);
    let w = probe(&mut rng, rows * c);
    let base = bn.clone();
    let (_, cache) = bn.forward(&x, mode).unwrap();
    let dx = bn.backward(&cache, &Tensor::matrix(rows, c, w.clone()).unwrap());
    let mut flat = values_of(&base.params());
    flat.extend_from_slice(x.values());
    let mut analytic = grads_of(&bn.params());
    analytic.extend_from_slice(dx.values());
    grad_check(
        |p| {
            let mut b = base.clone();
            let at = load(b.params_mut(), p);
            let x = Tensor::matrix(rows, c, p[at..].to_vec()).unwrap();
            dot(b.forward(&x, mode).unwrap().0.values(), &w)
        },
        &flat,
        &analytic,
        opts,
    )
}

/// Hidden layer with batch norm, ReLU and dropout, then a score layer.
fn mlp_check(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 203);
    let (rows, n_in, h, n_out) = (rng.gen_range(3..8), rng.gen_range(1..5), rng.gen_range(2..6), rng.gen_range(1..4));
    let mlp = SharedMlp::from_layers(vec![
        DenseLayer::hidden(n_in, h, 0.3, &mut rng),
        DenseLayer::output(h, n_out, &mut rng),
    ]);
    let x = random_matrix(&mut rng, rows, n_in);
    let w = probe(&mut rng, rows * n_out);
    let mut m2 = mlp.clone();
    let (_, caches) = m2.forward(&x, Mode::Train, &mut stream_rng(seed, 7)).unwrap();
    let dx = m2.backward(&caches, &Tensor::matrix(rows, n_out, w.clone()).unwrap());
    let mut flat = values_of(&mlp.params());
    flat.extend_from_slice(x.values());
    let mut analytic = grads_of(&m2.params());
    analytic.extend_from_slice(dx.values());
    grad_check_piecewise(
        |p| {
            let mut m = mlp.clone();
            let at = load(m.params_mut(), p);
            let x = Tensor::matrix(rows, n_in, p[at..].to_vec()).unwrap();
            let (y, caches) = m.forward(&x, Mode::Train, &mut stream_rng(seed, 7)).unwrap();
            let mut fp = Fingerprint::default();
            fingerprint_mlp(&caches, &mut fp);
            (dot(y.values(), &w), fp.value())
        },
        &flat,
        &analytic,
        opts,
    )
}

fn set_max_check(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 204);
    let (rows, c) = (rng.gen_range(2..12), rng.gen_range(1..4));
    let cut = rng.gen_range(1..rows);
    let offsets = [0, cut, rows];
    let x = random_matrix(&mut rng, rows, c);
    let w = probe(&mut rng, 2 * c);
    let (_, cache) = segment_max(&x, &offsets).unwrap();
    let dx = set_max_backward(&cache, &Tensor::matrix(2, c, w.clone()).unwrap());
    grad_check_piecewise(
        |p| {
            let (y, cache) = segment_max(&Tensor::matrix(rows, c, p.to_vec()).unwrap(), &offsets).unwrap();
            let mut fp = Fingerprint::default();
            cache.winners().iter().for_each(|&i| fp.push_u64(i as u64));
            (dot(y.values(), &w), fp.value())
        },
        x.values(),
        dx.values(),
        opts,
    )
}

fn cross_entropy_check(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 205);
    let k = rng.gen_range(2..8);
    let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let label = rng.gen_range(0..k);
    let (_, g) = softmax_cross_entropy(&z, label).unwrap();
    grad_check(|p| softmax_cross_entropy(p, label).unwrap().0, &z, &g, opts)
}

fn feature_cloud(rng: &mut impl Rng, n: usize, dim: usize, c: usize) -> PointCloud {
    PointCloud::new(dim, probe(rng, n * dim), c, probe(rng, n * c)).unwrap()
}

/// Single- or multi-scale abstraction level; parameters and input features.
fn sa_check(seed: u64, multi: bool, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 206);
    let c = rng.gen_range(1..3);
    let cloud = feature_cloud(&mut rng, 24, 2, c);
    let spec = if multi {
        SetAbstractionSpec::multi(
            5,
            vec![
                GroupScale { radius: 0.4, cap: 6, widths: vec![3, 4] },
                GroupScale { radius: 0.9, cap: 10, widths: vec![3] },
            ],
        )
    } else {
        SetAbstractionSpec::single(6, 0.6, 8, &[4, 3])
    };
    let sa = SetAbstraction::new(spec, 2, c, &mut rng).unwrap();
    let run = |sa: &mut SetAbstraction, cloud: &PointCloud| {
        let set = PointSet::from_clouds(&[cloud]).unwrap();
        sa.forward(&set, Centers::Fps(&[0]), Mode::Train, &mut stream_rng(seed, 8)).unwrap()
    };
    let mut s2 = sa.clone();
    let (out, cache) = run(&mut s2, &cloud);
    let w = probe(&mut rng, out.features.len());
    let dx = s2.backward(&cache, &Tensor::from_vec(out.features.shape(), w.clone()).unwrap());
    let mut flat = values_of(&sa.params());
    flat.extend_from_slice(cloud.features());
    let mut analytic = grads_of(&s2.params());
    analytic.extend_from_slice(dx.values());
    grad_check_piecewise(
        |p| {
            let mut s = sa.clone();
            let at = load(s.params_mut(), p);
            let cl = cloud.with_features(c, p[at..].to_vec()).unwrap();
            let (out, cache) = run(&mut s, &cl);
            let mut fp = Fingerprint::default();
            cache.fingerprint(&mut fp);
            (dot(out.features.values(), &w), fp.value())
        },
        &flat,
        &analytic,
        opts,
    )
}

/// Feature propagation with the score layer and dropout; parameters,
/// coarse features and skip features.
fn fp_check(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = stream_rng(seed, 207);
    let coarse = feature_cloud(&mut rng, 8, 3, 3);
    let fine = feature_cloud(&mut rng, 20, 3, 2);
    let skip = Tensor::matrix(20, 2, fine.features().to_vec()).unwrap();
    let fp = FeaturePropagation::new(FeaturePropagationSpec::new(&[5, 4, 3]), 3, 2, true, 0.5, &mut rng).unwrap();
    let mut f2 = fp.clone();
    let (out, cache) =
        fp_level_forward(&coarse, fine.coords(), &skip, &mut f2, Mode::Train, &mut stream_rng(seed, 9)).unwrap();
    let w = probe(&mut rng, out.len());
    let (gc, gs) = f2.backward(&cache, &Tensor::from_vec(out.shape(), w.clone()).unwrap());
    let mut flat = values_of(&fp.mlp.params());
    flat.extend_from_slice(coarse.features());
    flat.extend_from_slice(skip.values());
    let mut analytic = grads_of(&f2.mlp.params());
    analytic.extend_from_slice(gc.values());
    analytic.extend_from_slice(gs.values());
    grad_check_piecewise(
        |p| {
            let mut f = fp.clone();
            let at = load(f.mlp.params_mut(), p);
            let co = coarse.with_features(3, p[at..at + 24].to_vec()).unwrap();
            let sk = Tensor::matrix(20, 2, p[at + 24..].to_vec()).unwrap();
            let (out, cache) =
                fp_level_forward(&co, fine.coords(), &sk, &mut f, Mode::Train, &mut stream_rng(seed, 9)).unwrap();
            let mut print = Fingerprint::default();
            cache.fingerprint(&mut print);
            (dot(out.values(), &w), print.value())
        },
        &flat,
        &analytic,
        opts,
    )
}

const TINY_SSG: &str = "SA(8,0.5,[6,8]) -> SA(4,0.9,[8]) -> SA([8]) -> FC(6,0.3) -> FC(3)";

fn network_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, String> {
    let bp = parse_blueprint(TINY_SSG).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(seed, 208);
    let mut net = Network::from_blueprint(&bp, 3, 0, MetricConfig::default(), 3, &mut rng).map_err(|e| e.to_string())?;
    // Four clouds: with two, the head's batch norm sees two rows and its
    // curvature swamps the central difference.
    let clouds: Vec<PointCloud> = (0..4).map(|_| PointCloud::from_coords(3, probe(&mut rng, 24 * 3)).unwrap()).collect();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    check_network_gradients(&mut net, &refs, seed, opts).map_err(|e| e.to_string())
}

fn criterion_2() -> Outcome {
    let opts = GradCheckOptions::with_tolerance(1e-5);
    let mut t = GradTally {
        worst: 0.0,
        worst_at: String::new(),
        checks: 0,
        failures: Vec::new(),
    };
    for seed in 0..50 {
        t.add("linear", seed, &linear_check(seed, &opts));
        t.add("batch norm (train)", seed, &batchnorm_check(seed, Mode::Train, &opts));
        t.add("batch norm (eval)", seed, &batchnorm_check(seed, Mode::Eval, &opts));
        t.add("dense+relu+dropout", seed, &mlp_check(seed, &opts));
        t.add("set max", seed, &set_max_check(seed, &opts));
        t.add("softmax cross-entropy", seed, &cross_entropy_check(seed, &opts));
        t.add("SA single-scale", seed, &sa_check(seed, false, &opts));
        t.add("SA multi-scale", seed, &sa_check(seed, true, &opts));
        t.add("FP", seed, &fp_check(seed, &opts));
        t.add("SSG network", seed, &network_check(seed, &opts)?);
    }
    let detail = format!("{} checks over 50 seeds, max relative error {:.2e} ({})", t.checks, t.worst, t.worst_at);
    if t.failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing: {}", t.failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 3. Invariances
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let bp = parse_blueprint(TINY_SSG).map_err(|e| e.to_string())?;
    let mut perm_cases = 0;
    for seed in 0..20u64 {
        let mut rng = stream_rng(seed, 301);
        let mut net = Network::from_blueprint(&bp, 3, 0, MetricConfig::default(), 3, &mut rng).unwrap();
        let a = PointCloud::from_coords(3, probe(&mut rng, 48 * 3)).unwrap();
        let b = PointCloud::from_coords(3, probe(&mut rng, 48 * 3)).unwrap();
        // One training pass so batch norm carries non-trivial statistics.
        net.forward(&[&a, &b], &ForwardOptions::train(), &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..48).collect();
        for i in (1..48).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = a.select(&perm).unwrap();
        let start = perm.iter().position(|&i| i == 0).unwrap();
        let (l1, _) = net.forward(&[&a], &ForwardOptions::eval(), &mut rng).unwrap();
        let pinned = ForwardOptions {
            mode: Mode::Eval,
            start: FpsStart::Pinned(vec![start]),
        };
        let (l2, _) = net.forward(&[&shuffled], &pinned, &mut rng).unwrap();
        if l1 != l2 {
            return Err(format!("logits change under permutation (seed {seed})"));
        }
        perm_cases += 1;
    }

    // Coordinates on a dyadic grid so the shift is exact.
    let mut trans_cases = 0;
    for seed in 0..10u64 {
        let mut rng = stream_rng(seed, 302);
        let coords: Vec<f64> = (0..300 * 3).map(|_| f64::from(rng.gen_range(-1024i32..1024)) / 1024.0).collect();
        let cloud = PointCloud::from_coords(3, coords).unwrap();
        let mut sa = SetAbstraction::new(SetAbstractionSpec::single(40, 0.3, 16, &[8, 8]), 3, 0, &mut rng).unwrap();
        let (a, _) = sa_level_forward(&cloud, &mut sa, Mode::Eval, &mut rng).unwrap();
        let t = [f64::from(rng.gen_range(-8i32..8)), 2.5, -3.25];
        let shifted: Vec<f64> = cloud.coords().chunks(3).flat_map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
        let (b, _) = sa_level_forward(&cloud.with_coords(shifted).unwrap(), &mut sa, Mode::Eval, &mut rng).unwrap();
        let coords_ok = a.coords().chunks(3).zip(b.coords().chunks(3)).all(|(p, q)| (0..3).all(|i| p[i] + t[i] == q[i]));
        if !coords_ok || a.features() != b.features() {
            return Err(format!("SA output is not translation equivariant (seed {seed})"));
        }
        trans_cases += 1;
    }

    let mut worst_sum = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = stream_rng(seed, 303);
        let dim = rng.gen_range(1..4);
        let n = rng.gen_range(3..200);
        let sources = probe(&mut rng, n * dim);
        let targets = probe(&mut rng, 40 * dim);
        let k = rng.gen_range(1..=3.min(n));
        let weights = interpolation_weights(&targets, &sources, dim, k, 2.0).map_err(|e| e.to_string())?;
        for ws in &weights {
            worst_sum = worst_sum.max((ws.iter().map(|w| w.1).sum::<f64>() - 1.0).abs());
        }
        let feats = random_matrix(&mut rng, n, 3);
        let back = interpolate_features(&sources, &sources, &feats, dim, k, 2.0).map_err(|e| e.to_string())?;
        // Distinct random sources: every source reproduces its own row.
        if back.values() != feats.values() {
            return Err(format!("interpolation does not reproduce source features (seed {seed})"));
        }
    }
    if worst_sum > 1e-12 {
        return Err(format!("interpolation weights sum to 1 only within {worst_sum:.2e}"));
    }

    // NaN and huge values in padded slots must never reach the output.
    for seed in 0..100u64 {
        let mut rng = stream_rng(seed, 304);
        let (regions, k, c) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..4));
        let mut mask: Vec<bool> = (0..regions * k).map(|_| rng.gen_bool(0.6)).collect();
        for s in 0..regions {
            mask[s * k + rng.gen_range(0..k)] = true;
        }
        let mut values = probe(&mut rng, regions * k * c);
        for (row, &m) in mask.iter().enumerate() {
            if !m {
                for v in &mut values[row * c..(row + 1) * c] {
                    *v = if rng.gen_bool(0.5) { f64::NAN } else { 1e300 };
                }
            }
        }
        let t = Tensor::from_vec(&[regions, k, c], values.clone()).unwrap();
        let (out, _) = masked_set_max(&t, &mask).map_err(|e| e.to_string())?;
        for s in 0..regions {
            for ch in 0..c {
                let expect = (0..k)
                    .filter(|&j| mask[s * k + j])
                    .map(|j| values[(s * k + j) * c + ch])
                    .fold(f64::NEG_INFINITY, f64::max);
                if out.values()[s * c + ch] != expect {
                    return Err(format!("masked max read a padded slot (seed {seed})"));
                }
            }
        }
    }
    Ok(format!(
        "{perm_cases} permutations exact, {trans_cases} translations exact, weight sums within {worst_sum:.1e}, 100 poisoned max cases clean"
    ))
}

// ---------------------------------------------------------------------------
// 4, 7. Desk-scale classification and FPS start sensitivity
// ---------------------------------------------------------------------------

const DESK_SSG: &str =
    "SA(64,0.2,[16,16,32]) -> SA(16,0.4,[32,32,64]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(3)";

fn desk_corpus() -> Result<Corpus, String> {
    make_synthetic_corpus(&CorpusSpec::new(CorpusKind::Shapes2d, 200, 100, 128, 1)).map_err(|e| e.to_string())
}

fn desk_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 1e-3,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn log_prefix(csv: &str, epochs: usize) -> String {
    csv.lines()
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epochs))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_4(cache: &OnceCell<(Corpus, Checkpoint)>) -> Outcome {
    let corpus = desk_corpus()?;
    let bp = parse_blueprint(DESK_SSG).map_err(|e| e.to_string())?;
    let out = par::install(1, || train(&bp, &corpus, &desk_config(30))).map_err(|e| e.to_string())?;
    let accs: Vec<f64> = out
        .log
        .rows
        .iter()
        .filter(|r| r.split == "test" && r.metric == "accuracy")
        .map(|r| r.value)
        .collect();
    let first_hit = accs.iter().position(|&a| a >= 0.95).map(|e| e + 1);
    let last = *accs.last().ok_or("no test accuracy logged")?;
    // Same seed again: the first epochs of the log must repeat exactly.
    let again = par::install(1, || train(&bp, &corpus, &desk_config(3))).map_err(|e| e.to_string())?;
    let repeat = log_prefix(&out.log.to_csv(), 3) == log_prefix(&again.log.to_csv(), 3);
    let _ = cache.set((corpus, out.checkpoint));
    ensure(
        last >= 0.95 && repeat,
        format!(
            "final test accuracy {last:.4} after 30 epochs, first >= 0.95 at epoch {}, rerun log {}",
            first_hit.map_or("never".to_string(), |e| e.to_string()),
            if repeat { "identical" } else { "DIFFERS" }
        ),
    )
}

fn criterion_7(cache: &OnceCell<(Corpus, Checkpoint)>) -> Outcome {
    if cache.get().is_none() {
        let corpus = desk_corpus()?;
        let bp = parse_blueprint(DESK_SSG).map_err(|e| e.to_string())?;
        let out = train(&bp, &corpus, &desk_config(30)).map_err(|e| e.to_string())?;
        let _ = cache.set((corpus, out.checkpoint));
    }
    let (corpus, ckpt) = cache.get().expect("set above");
    let mut accs = Vec::new();
    for seed in 0..10u64 {
        let opts = EvalOptions {
            start: FpsStart::Random(1000 + seed),
            ..EvalOptions::default()
        };
        accs.push(evaluate(ckpt, corpus, &opts).map_err(|e| e.to_string())?.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64;
    let std_pp = var.sqrt() * 100.0;
    ensure(
        std_pp < 1.0,
        format!("10 random FPS starts: mean accuracy {mean:.4}, std {std_pp:.3} percentage points"),
    )
}

// ---------------------------------------------------------------------------
// 5, 6. Density robustness and radius direction on 3d-solids
// ---------------------------------------------------------------------------

const SOLIDS_SSG: &str =
    "SA(128,0.2,[16,16,32]) -> SA(32,0.4,[32,32,64]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(4)";
const SOLIDS_SSG_SMALL_R: &str =
    "SA(128,0.1,[16,16,32]) -> SA(32,0.2,[32,32,64]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(4)";
const SOLIDS_MSG: &str = "SA(128,[0.1,0.2,0.4],[[8,8,16],[16,16,32],[16,24,32]]) -> SA(32,[0.2,0.4,0.8],[[16,16,32],[32,32,64],[32,32,64]]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(4)";
const SOLIDS_SEEDS: [u64; 3] = [1, 2, 3];
const SOLIDS_EPOCHS: usize = 20;

fn solids_corpus(seed: u64) -> Result<Corpus, String> {
    make_synthetic_corpus(&CorpusSpec::new(CorpusKind::Solids3d, 100, 50, 512, seed)).map_err(|e| e.to_string())
}

/// Test accuracy at 512 and 128 points.
fn solids_run(arch: &str, dropout: bool, seed: u64, corpus: &Corpus) -> Result<(f64, f64), String> {
    let bp = parse_blueprint(arch).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: SOLIDS_EPOCHS,
        seed,
        eval_every: SOLIDS_EPOCHS,
        dropout_training: dropout,
        ..TrainConfig::default()
    };
    let out = train(&bp, corpus, &cfg).map_err(|e| e.to_string())?;
    let at = |budget| {
        let opts = EvalOptions {
            budget: Some(budget),
            seed: 77 + seed,
            ..EvalOptions::default()
        };
        evaluate(&out.checkpoint, corpus, &opts).map(|m| m.accuracy).map_err(|e| e.to_string())
    };
    Ok((at(512)?, at(128)?))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(ssg_cache: &OnceCell<Vec<(f64, f64)>>) -> Outcome {
    let mut ssg = Vec::new();
    let mut ssg_dp = Vec::new();
    let mut msg_dp = Vec::new();
    for seed in SOLIDS_SEEDS {
        let corpus = solids_corpus(seed)?;
        ssg.push(solids_run(SOLIDS_SSG, false, seed, &corpus)?);
        ssg_dp.push(solids_run(SOLIDS_SSG, true, seed, &corpus)?);
        msg_dp.push(solids_run(SOLIDS_MSG, true, seed, &corpus)?);
    }
    let drop = |v: &[(f64, f64)]| mean(&v.iter().map(|r| r.0 - r.1).collect::<Vec<_>>());
    let at128 = |v: &[(f64, f64)]| mean(&v.iter().map(|r| r.1).collect::<Vec<_>>());
    let at512 = |v: &[(f64, f64)]| mean(&v.iter().map(|r| r.0).collect::<Vec<_>>());
    let (d_msg, d_ssg) = (drop(&msg_dp), drop(&ssg));
    let (ssg128, ssgdp128) = (at128(&ssg), at128(&ssg_dp));
    let detail = format!(
        "mean acc 512->128: SSG {:.3}->{:.3}, SSG+DP {:.3}->{:.3}, MSG+DP {:.3}->{:.3}; drop MSG+DP {d_msg:.3} vs SSG {d_ssg:.3}",
        at512(&ssg),
        ssg128,
        at512(&ssg_dp),
        ssgdp128,
        at512(&msg_dp),
        at128(&msg_dp)
    );
    let _ = ssg_cache.set(ssg);
    ensure(d_msg < d_ssg && ssgdp128 >= ssg128, detail)
}

fn criterion_6(ssg_cache: &OnceCell<Vec<(f64, f64)>>) -> Outcome {
    if ssg_cache.get().is_none() {
        let mut runs = Vec::new();
        for seed in SOLIDS_SEEDS {
            runs.push(solids_run(SOLIDS_SSG, false, seed, &solids_corpus(seed)?)?);
        }
        let _ = ssg_cache.set(runs);
    }
    let large = mean(&ssg_cache.get().expect("set above").iter().map(|r| r.0).collect::<Vec<_>>());
    let mut small = Vec::new();
    for seed in SOLIDS_SEEDS {
        small.push(solids_run(SOLIDS_SSG_SMALL_R, false, seed, &solids_corpus(seed)?)?.0);
    }
    let small = mean(&small);
    ensure(
        large >= small - 0.01,
        format!("mean accuracy r=0.2: {large:.4}, r=0.1: {small:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Architecture language
// ---------------------------------------------------------------------------

/// The published listings with concrete class counts, input dim, input
/// channels and class count.
const LISTINGS: &[(&str, usize, usize, usize)] = &[
    (
        "SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> SA([256,512,1024]) -> FC(512,0.5) -> FC(256,0.5) -> FC(40)",
        3,
        0,
        40,
    ),
    (
        "SA(512,[0.1,0.2,0.4],[[32,32,64],[64,64,128],[64,96,128]]) -> SA(128,[0.2,0.4,0.8],[[64,64,128],[128,128,256],[128,128,256]]) -> SA([256,512,1024]) -> FC(512,0.5) -> FC(256,0.5) -> FC(40)",
        3,
        0,
        40,
    ),
    (
        "MRG{branch1: SA(512,0.2,[64,64,128]) -> SA(64,0.4,[128,128,256]); branch2: SA(512,0.4,[64,128,256]); branch3: SA([64,128,256,512]); branch4: SA([256,512,1024])} -> FC(512,0.5) -> FC(256,0.5) -> FC(40)",
        3,
        0,
        40,
    ),
    (
        "SA(1024,0.1,[32,32,64]) -> SA(256,0.2,[64,64,128]) -> SA(64,0.4,[128,128,256]) -> SA(16,0.8,[256,256,512]) -> FP(256,256) -> FP(256,256) -> FP(256,128) -> FP(128,128,128,128,21); fp_dropout=0.5",
        3,
        0,
        21,
    ),
    (
        "SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> SA([256,512,1024]) -> FP(256,256) -> FP(256,128) -> FP(128,128,128,128,50); fp_dropout=0.5",
        3,
        3,
        50,
    ),
    (
        "SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> SA([256,512,1024]) -> FC(512,0.5) -> FC(256,0.5) -> FC(10)",
        2,
        0,
        10,
    ),
];

const FUZZ_ALPHABET: &[&str] = &[
    "SA", "FC", "FP", "MRG", "(", ")", "[", "]", "{", "}", ",", ";", ":", "->", "-", ">", "0", "1", "512", "0.2", ".",
    "1e309", "-1", " ", "\n", "#", "branch1", "branch4", "cap=", "group=knn", "fp_dropout=", "=", "é", "\0", "NaN",
    "99999999999999999999999",
];

fn criterion_8() -> Outcome {
    for (text, d, c, k) in LISTINGS {
        let bp = parse_blueprint(text).map_err(|e| format!("listing does not parse: {e}"))?;
        validate_chain(&bp, *d, *c, *k).map_err(|e| format!("listing does not validate: {e}"))?;
        let rendered = render_blueprint(&bp);
        let back = parse_blueprint(&rendered).map_err(|e| format!("rendered listing does not parse: {e}"))?;
        if back != bp || render_blueprint(&back) != rendered {
            return Err(format!("listing does not round-trip: {rendered}"));
        }
    }

    let mut rng = stream_rng(808, 0);
    let (mut accepted, mut crashes) = (0usize, 0usize);
    let mut first_crash = None;
    for case in 0..100_000u32 {
        let text = if case % 2 == 0 {
            // Mutate a listing at the byte level.
            let mut bytes = LISTINGS[rng.gen_range(0..LISTINGS.len())].0.as_bytes().to_vec();
            for _ in 0..rng.gen_range(1..6) {
                let at = rng.gen_range(0..=bytes.len());
                match rng.gen_range(0..3) {
                    0 if at < bytes.len() => {
                        bytes.remove(at);
                    }
                    1 if at < bytes.len() => bytes[at] = rng.gen(),
                    _ => {
                        let tok = FUZZ_ALPHABET[rng.gen_range(0..FUZZ_ALPHABET.len())];
                        bytes.splice(at..at, tok.bytes());
                    }
                }
            }
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            (0..rng.gen_range(0..30)).map(|_| FUZZ_ALPHABET[rng.gen_range(0..FUZZ_ALPHABET.len())]).collect()
        };
        let result = catch_unwind(AssertUnwindSafe(|| {
            let bp = parse_blueprint(&text).ok()?;
            let again = parse_blueprint(&render_blueprint(&bp)).ok();
            let _ = validate_chain(&bp, 3, 0, 40);
            Some(again.as_ref() == Some(&bp))
        }));
        match result {
            Ok(Some(true)) => accepted += 1,
            Ok(None) => {}
            Ok(Some(false)) | Err(_) => {
                crashes += 1;
                first_crash.get_or_insert(text);
            }
        }
    }
    ensure(
        crashes == 0,
        match first_crash {
            None => format!("{} listings parse, validate and round-trip; 100000 fuzz cases, 0 crashes, {accepted} accepted", LISTINGS.len()),
            Some(t) => format!("{crashes} fuzz crashes or round-trip failures, first on {t:?}"),
        },
    )
}

// ---------------------------------------------------------------------------
// 9. Scan and cube pipelines
// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let scene = room_scene(&mut stream_rng(8, 0), 400_000);
    let scans = virtual_scan(&scene, &ScanConfig::default()).map_err(|e| e.to_string())?;
    let mut visible = 0;
    for s in &scans {
        let mut depth = std::collections::HashMap::new();
        for &i in &s.indices {
            let (r, c, z) = s.camera.project(scene.point(i)).ok_or("kept point is outside the view")?;
            if depth.insert((r, c), z).is_some() {
                return Err("two kept points share a pixel".into());
            }
        }
        for i in 0..scene.len() {
            if let Some((r, c, z)) = s.camera.project(scene.point(i)) {
                if depth.get(&(r, c)).map_or(true, |&kept| z < kept) {
                    return Err(format!("point {i} is nearer than the kept point of its pixel"));
                }
            }
        }
        visible += s.indices.len();
    }
    let bins = visibility_by_depth(&scene, &scans, 10, 100);
    let (x, y): (Vec<f64>, Vec<f64>) = bins.into_iter().unzip();
    let rho = spearman(&x, &y);
    if x.len() < 4 || rho >= 0.0 {
        return Err(format!("visible fraction does not fall with distance: rho {rho:.3} over {} bins", x.len()));
    }

    let cubes = extract_cubes(&scene, &CubeConfig::default(), &mut stream_rng(8, 1)).map_err(|e| e.to_string())?;
    if cubes.is_empty() || cubes.iter().any(|c| c.cloud.len() != 8192 || c.indices.len() != 8192) {
        return Err(format!("{} cubes, not all with 8192 points", cubes.len()));
    }

    // Point 0: two votes for 3 against one for 1. Point 1: a 2/5 tie goes
    // to the lower label. Point 2: a single vote. Point 3: a repeated entry
    // within one cube counts twice, so 5 beats 1.
    let p = |i: &[usize], l: &[u32]| CubePrediction {
        indices: i.to_vec(),
        labels: l.to_vec(),
    };
    let merged = merge_votes(
        4,
        &[
            p(&[0, 1, 3, 3], &[3, 5, 5, 5]),
            p(&[0, 1, 2], &[3, 2, 7]),
            p(&[0, 3], &[1, 1]),
        ],
    )
    .map_err(|e| e.to_string())?;
    if merged != [3, 2, 7, 5] {
        return Err(format!("merge_votes fixture gave {merged:?}"));
    }
    if merge_votes(3, &[p(&[0], &[1])]).is_ok() {
        return Err("merge_votes accepted uncovered points".into());
    }
    Ok(format!(
        "{} scans, {visible} visible points, occlusion clean, rho {rho:.3} over {} bins, {} cubes of 8192, vote fixture ok",
        scans.len(),
        x.len(),
        cubes.len()
    ))
}

// ---------------------------------------------------------------------------
// 10. Determinism of whole experiments
// ---------------------------------------------------------------------------

const RECIPE: &str = r#"{
  "corpus": {"generate": {"kind": "2d-shapes", "train_per_class": 200, "test_per_class": 100, "points": 128, "seed": 1}},
  "variants": [
    {"name": "SSG", "arch": "SA(64,0.2,[16,16,32]) -> SA(16,0.4,[32,32,64]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(3)",
     "config": {"epochs": 12, "seed": 5}},
    {"name": "SSG+DP", "arch": "SA(64,0.2,[16,16,32]) -> SA(16,0.4,[32,32,64]) -> SA([64,128,256]) -> FC(128,0.5) -> FC(64,0.5) -> FC(3)",
     "config": {"epochs": 12, "seed": 6, "dropout_training": true}}
  ],
  "budgets": [128, 64, 32],
  "sweep_seed": 3
}"#;

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let recipe = dir.path().join("recipe.json");
    std::fs::write(&recipe, RECIPE).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 2] {
        let out = dir.path().join(format!("threads{threads}"));
        par::install(threads, || run_experiment(&recipe, Some(&out))).map_err(|e| e.to_string())?;
        outputs.push(out);
    }
    let mut compared = String::new();
    for file in ["sweep.csv", "SSG_metrics.csv", "SSG+DP_metrics.csv", "SSG.ckpt", "SSG+DP.ckpt"] {
        let a = std::fs::read(outputs[0].join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outputs[1].join(file)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{file} differs between 1 and 2 threads"));
        }
        let _ = write!(compared, "{file} ");
    }
    Ok(format!("identical under 1 and 2 threads: {}", compared.trim_end()))
}

// ---------------------------------------------------------------------------

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<usize> = args
        .iter()
        .filter_map(|a| a.trim_start_matches('c').parse().ok())
        .filter(|n| (1..=10).contains(n))
        .collect();
    if !args.is_empty() && selected.is_empty() {
        println!("acceptance: no criterion matches {args:?}, nothing run");
        return;
    }
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);

    let desk = OnceCell::new();
    let solids_ssg = OnceCell::new();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "oracle equivalence", Box::new(criterion_1)),
        (2, "gradient suite", Box::new(criterion_2)),
        (3, "invariances", Box::new(criterion_3)),
        (4, "desk-scale classification", Box::new(|| criterion_4(&desk))),
        (5, "density robustness ordering", Box::new(|| criterion_5(&solids_ssg))),
        (6, "radius direction", Box::new(|| criterion_6(&solids_ssg))),
        (7, "FPS start sensitivity", Box::new(|| criterion_7(&desk))),
        (8, "architecture language", Box::new(criterion_8)),
        (9, "scan and cube pipelines", Box::new(criterion_9)),
        (10, "experiment determinism", Box::new(criterion_10)),
    ];

    let mut failed = Vec::new();
    for (n, name, run) in &criteria {
        if !wanted(*n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} [{name}]: PASS ({d}; {secs:.1}s)"),
            Err(d) => {
                println!("criterion {n} [{name}]: FAIL ({d}; {secs:.1}s)");
                failed.push(*n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
