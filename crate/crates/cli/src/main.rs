use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use hpsl_core::archlang::{parse_blueprint, validate_chain, NetworkBlueprint};
use hpsl_core::cloud::{read_cloud, write_atomic, write_cloud, MetricConfig, PointCloud};
use hpsl_core::datagen::{
    extract_cubes, make_synthetic_corpus, read_corpus, virtual_scan, write_corpus, CorpusKind, CorpusSpec,
    CubeConfig, ScanConfig,
};
use hpsl_core::experiment::run_experiment;
use hpsl_core::hierarchy::{check_network_gradients, FpsStart, Network};
use hpsl_core::neighborhood::{bench_queries, Density, NeighborhoodSpec, Workload};
use hpsl_core::nn::GradCheckOptions;
use hpsl_core::rng::stream_rng;
use hpsl_core::trainer::{evaluate, load_checkpoint, save_checkpoint, train, EvalOptions, TrainConfig};
use hpsl_core::{Error, Result};

/// Hierarchical point-set learning: data generation, training, evaluation
/// and diagnostics.
#[derive(Debug, Parser)]
#[command(name = "hpsl", version)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    GenData(GenData),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus's test split.
    Eval(EvalArgs),
    /// Run a recipe: train every variant and write the density sweep.
    Sweep(SweepArgs),
    /// Time grid-indexed against brute-force neighbor queries.
    BenchNeighbors(BenchArgs),
    /// Parse a blueprint file and print its canonical form.
    ParseArch(ParseArchArgs),
    /// Finite-difference check of a blueprint's gradients.
    GradCheck(GradCheckArgs),
    /// Virtual single-viewpoint scans of a labeled scene.
    Scan(ScanArgs),
    /// Cut a labeled scene into fixed-size training cubes.
    Cubes(CubesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "2d-shapes")]
    Shapes2d,
    #[value(name = "3d-solids")]
    Solids3d,
    #[value(name = "room-scenes")]
    RoomScenes,
}

impl From<KindArg> for CorpusKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Shapes2d => CorpusKind::Shapes2d,
            KindArg::Solids3d => CorpusKind::Solids3d,
            KindArg::RoomScenes => CorpusKind::RoomScenes,
        }
    }
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Training clouds per class (scenes, for room-scenes).
    #[arg(long)]
    n_per_class: usize,
    /// Points per cloud.
    #[arg(long)]
    points: usize,
    /// Test clouds per class (default: half of --n-per-class).
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Gaussian noise on surface samples.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// Blueprint file.
    #[arg(long)]
    arch: PathBuf,
    /// Training config JSON (default settings when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `model.ckpt` and `metrics.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Subsample every test cloud to this many points first.
    #[arg(long)]
    budget: Option<usize>,
    /// Draw FPS start points at random from this seed instead of index 0.
    #[arg(long)]
    fps_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    recipe: PathBuf,
    /// Output directory (overrides the recipe's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QueryKind {
    Ball,
    Knn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DensityArg {
    Uniform,
    RadialFalloff,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Points in the generated cloud.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum)]
    density: DensityArg,
    #[arg(long, value_enum)]
    kind: QueryKind,
    /// Radius for ball queries, k for kNN.
    #[arg(long)]
    param: f64,
    /// Ball query member cap.
    #[arg(long, default_value_t = 32)]
    cap: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Number of query centroids.
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ParseArchArgs {
    #[arg(long)]
    file: PathBuf,
    /// With --channels and --classes, also check the width chain.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    channels: usize,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    /// Blueprint file.
    #[arg(long)]
    blueprint: PathBuf,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    clouds: usize,
    #[arg(long, default_value_t = 24)]
    points: usize,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Labeled 3-D scene in the cloud text format.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for `scan_K.pcl` files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 60.0)]
    fov: f64,
}

#[derive(Debug, Args)]
struct CubesArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for `cube_NNNN.pcl` files and `cubes.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8192)]
    target: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads.unwrap_or_else(hpsl_core::par::available).max(1);
    match hpsl_core::par::install(threads, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::GenData(a) => gen_data(a, seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval_cmd(a, seed),
        Command::Sweep(a) => {
            let out = run_experiment(&a.recipe, a.out.as_deref())?;
            eprintln!("wrote {}", out.out_dir.display());
            print!("{}", out.sweep_csv);
            Ok(())
        }
        Command::BenchNeighbors(a) => bench(a, seed, cli.threads.unwrap_or(1)),
        Command::ParseArch(a) => parse_arch(a),
        Command::GradCheck(a) => grad_check(a, seed),
        Command::Scan(a) => scan(a),
        Command::Cubes(a) => cubes(a, seed),
    }
}

fn read_blueprint(path: &Path) -> Result<NetworkBlueprint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read `{}`: {e}", path.display())))?;
    parse_blueprint(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
}

fn gen_data(a: &GenData, seed: u64) -> Result<()> {
    let mut spec = CorpusSpec::new(
        a.kind.into(),
        a.n_per_class,
        a.test_per_class.unwrap_or(a.n_per_class.div_ceil(2)),
        a.points,
        seed,
    );
    spec.noise = a.noise;
    let corpus = make_synthetic_corpus(&spec)?;
    let manifest = write_corpus(&corpus, &a.out)?;
    eprintln!(
        "{} train and {} test clouds of {} points",
        corpus.train.len(),
        corpus.test.len(),
        a.points
    );
    println!("{}", manifest.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let blueprint = read_blueprint(&a.arch)?;
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let corpus = read_corpus(&a.data)?;
    let outcome = train(&blueprint, &corpus, &config)?;
    std::fs::create_dir_all(&a.out)?;
    save_checkpoint(&outcome.checkpoint, a.out.join("model.ckpt"))?;
    write_atomic(&a.out.join("metrics.csv"), outcome.log.to_csv().as_bytes())?;
    let summary = serde_json::json!({
        "epochs": outcome.checkpoint.epoch,
        "train_loss": outcome.log.last("train", "loss"),
        "test_accuracy": outcome.log.last("test", "accuracy"),
        "test_mean_iou": outcome.log.last("test", "mean_iou"),
    });
    println!("{summary}");
    Ok(())
}

fn eval_cmd(a: &EvalArgs, seed: u64) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let corpus = read_corpus(&a.data)?;
    let opts = EvalOptions {
        budget: a.budget,
        seed,
        start: a.fps_seed.map_or(FpsStart::First, FpsStart::Random),
        ..EvalOptions::default()
    };
    let m = evaluate(&ck, &corpus, &opts)?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn bench(a: &BenchArgs, seed: u64, threads: usize) -> Result<()> {
    let spec = match a.kind {
        QueryKind::Ball => NeighborhoodSpec::Ball {
            radius: a.param,
            cap: a.cap,
        },
        QueryKind::Knn => {
            if a.param < 1.0 || a.param.fract() != 0.0 {
                return Err(Error::Argument(format!("k must be a positive integer, got {}", a.param)));
            }
            NeighborhoodSpec::Knn { k: a.param as usize }
        }
    };
    let density = match a.density {
        DensityArg::Uniform => Density::Uniform,
        DensityArg::RadialFalloff => Density::RadialFalloff,
    };
    let mut w = Workload::new(a.n, density, spec);
    w.repetitions = a.reps;
    w.max_queries = a.queries;
    w.seed = seed;
    w.threads = threads;
    let report = bench_queries(&w)?;
    let csv = report.to_csv();
    write_atomic(&a.out, csv.as_bytes())?;
    print!("{csv}");
    if !report.verified {
        return Err(Error::Argument("grid and brute-force results differ".into()));
    }
    Ok(())
}

fn parse_arch(a: &ParseArchArgs) -> Result<()> {
    let bp = read_blueprint(&a.file)?;
    println!("{bp}");
    if let (Some(d), Some(k)) = (a.dim, a.classes) {
        let widths = validate_chain(&bp, d, a.channels, k).map_err(|e| Error::Argument(e.to_string()))?;
        for w in widths {
            println!("level {}: {} -> {}", w.level + 1, w.input, w.output);
        }
    }
    Ok(())
}

fn grad_check(a: &GradCheckArgs, seed: u64) -> Result<()> {
    let bp = read_blueprint(&a.blueprint)?;
    let classes = bp.output_width();
    let mut rng = stream_rng(seed, 0);
    let mut net = Network::from_blueprint(&bp, a.dim, 0, MetricConfig::default(), classes, &mut rng)?;
    let clouds: Vec<PointCloud> = (0..a.clouds)
        .map(|_| PointCloud::from_coords(a.dim, (0..a.points * a.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let report = check_network_gradients(&mut net, &refs, seed, &GradCheckOptions::with_tolerance(a.tolerance))?;
    println!(
        "max relative error: {:e} ({} parameters checked, {} skipped at kinks)",
        report.max_rel_error, report.checked, report.skipped
    );
    if !report.passed {
        return Err(Error::Argument(format!(
            "gradient check failed: {:e} exceeds {:e}",
            report.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn scan(a: &ScanArgs) -> Result<()> {
    let scene = read_cloud(&a.scene)?;
    let cfg = ScanConfig {
        cameras: a.cameras,
        fov_degrees: a.fov,
        ..ScanConfig::default()
    };
    let scans = virtual_scan(&scene, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    for (k, s) in scans.iter().enumerate() {
        match &s.cloud {
            Some(c) => {
                write_cloud(c, a.out.join(format!("scan_{k}.pcl")))?;
                println!("scan {k}: {} points", c.len());
            }
            None => println!("scan {k}: empty"),
        }
    }
    Ok(())
}

fn cubes(a: &CubesArgs, seed: u64) -> Result<()> {
    let scene = read_cloud(&a.scene)?;
    let cfg = CubeConfig {
        target_n: a.target,
        ..CubeConfig::default()
    };
    let cubes = extract_cubes(&scene, &cfg, &mut stream_rng(seed, 0))?;
    std::fs::create_dir_all(&a.out)?;
    let mut index = Vec::new();
    for (k, c) in cubes.iter().enumerate() {
        let file = format!("cube_{k:04}.pcl");
        write_cloud(&c.cloud, a.out.join(&file))?;
        index.push(serde_json::json!({
            "file": file,
            "origin": c.origin,
            "occupancy": c.occupancy,
            "annotated": c.annotated,
            "indices": c.indices,
        }));
    }
    write_atomic(&a.out.join("cubes.json"), serde_json::to_string(&index)?.as_bytes())?;
    println!("{} cubes", cubes.len());
    Ok(())
}
