//! Training and evaluation loops, metrics, density sweeps and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archlang::{parse_blueprint, Head, NetworkBlueprint};
use crate::cloud::{write_atomic, MetricConfig, PointCloud};
use crate::datagen::{augment, random_input_dropout, AugmentConfig, Corpus};
use crate::error::{Error, Result};
use crate::hierarchy::{ForwardOptions, FpsStart, Network};
use crate::nn::{adam_step, softmax_cross_entropy, AdamState, Mode, Tensor};
use crate::rng::{stream_id, stream_rng};

// Stream tags, so no two random consumers share a stream.
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;
const INIT: u64 = 4;
const BUDGET: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Evaluate on the test split every this many epochs (and after the last).
    pub eval_every: usize,
    /// Random input dropout on training clouds.
    pub dropout_training: bool,
    /// Upper bound of the per-cloud drop ratio when `dropout_training` is on.
    pub dropout_p: f64,
    pub metric: MetricConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            augment: AugmentConfig::default(),
            eval_every: 1,
            dropout_training: false,
            dropout_p: 0.95,
            metric: MetricConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("epochs, batch_size and eval_every must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be a non-negative finite number"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must be in [0, 1)"));
        }
        self.augment.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// `epoch,split,metric,value` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.split, r.metric, r.value);
        }
        s
    }

    /// Most recent value of a metric on a split.
    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Fraction of equal entries.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Mean over `classes` of |pred = c and truth = c| / |pred = c or truth = c|.
/// Classes absent from both are skipped; with none left the result is 1.
pub fn mean_iou(pred: &[u32], truth: &[u32], classes: &[u32]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &c in classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            let (a, b) = (p == c, t == c);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union > 0 {
            sum += inter as f64 / union as f64;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Per cloud for classification, per annotated point for segmentation.
    pub accuracy: f64,
    pub mean_iou: f64,
    pub loss: f64,
    /// Number of scored predictions.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Subsample every cloud uniformly to at most this many points first.
    pub budget: Option<usize>,
    /// Seed for budget subsampling.
    pub seed: u64,
    pub start: FpsStart,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            budget: None,
            seed: 0,
            start: FpsStart::First,
            batch_size: 32,
        }
    }
}

/// Label 0 marks unannotated points in segmentation data; it is never a
/// target and never predicted.
pub const UNANNOTATED: u32 = 0;

fn targets(cloud: &PointCloud, head: Head, classes: usize) -> Result<Vec<u32>> {
    let t = match head {
        Head::Classification => vec![cloud
            .class()
            .ok_or_else(|| Error::arg("classification needs a class on every cloud"))?],
        Head::Segmentation => cloud
            .labels()
            .ok_or_else(|| Error::arg("segmentation needs per-point labels"))?
            .to_vec(),
    };
    if let Some(bad) = t.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::arg(format!("label {bad} outside the model's {classes} classes")));
    }
    Ok(t)
}

/// Mean cross-entropy over scored rows, its logit gradient, and predictions.
fn score(logits: &Tensor, truth: &[u32], head: Head) -> Result<(f64, Tensor, Vec<u32>, usize)> {
    let k = logits.cols();
    let skip = |t: u32| head == Head::Segmentation && t == UNANNOTATED;
    let scored = truth.iter().filter(|&&t| !skip(t)).count();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    let mut pred = Vec::with_capacity(truth.len());
    for (r, &t) in truth.iter().enumerate() {
        let row = logits.row(r);
        let first = usize::from(head == Head::Segmentation && k > 1);
        let best = (first..k).fold(first, |b, j| if row[j] > row[b] { j } else { b });
        pred.push(best as u32);
        if skip(t) {
            continue;
        }
        let (l, g) = softmax_cross_entropy(row, t as usize)?;
        loss += l;
        for (dst, v) in grad[r * k..(r + 1) * k].iter_mut().zip(g) {
            *dst = v / scored as f64;
        }
    }
    let loss = if scored > 0 { loss / scored as f64 } else { 0.0 };
    Ok((loss, Tensor::matrix(logits.rows(), k, grad)?, pred, scored))
}

/// Uniform subsample without replacement, order preserved.
pub fn apply_budget(cloud: &PointCloud, budget: usize, seed: u64, index: usize) -> Result<PointCloud> {
    if budget == 0 {
        return Err(Error::arg("point budget must be positive"));
    }
    if budget >= cloud.len() {
        return Ok(cloud.clone());
    }
    let mut rng = stream_rng(seed, stream_id(&[BUDGET, index as u64]));
    let mut keep = sample(&mut rng, cloud.len(), budget).into_vec();
    keep.sort_unstable();
    cloud.select(&keep)
}

/// Runs the network in eval mode over `clouds`. Batches are independent, so
/// they run in parallel; results are combined in input order.
pub fn evaluate_network(network: &Network, clouds: &[PointCloud], opts: &EvalOptions) -> Result<EvalMetrics> {
    let head = network.blueprint.head;
    let classes = network.num_classes;
    let batch = opts.batch_size.max(1);
    let chunks: Vec<&[PointCloud]> = clouds.chunks(batch).collect();
    let first_index: Vec<usize> = (0..chunks.len()).map(|i| i * batch).collect();
    let per_batch = crate::par::map_current(chunks.len(), |b| -> Result<(f64, Vec<u32>, Vec<u32>, usize)> {
        let mut net = network.clone();
        let inputs: Vec<PointCloud> = chunks[b]
            .iter()
            .enumerate()
            .map(|(j, c)| match opts.budget {
                Some(n) => apply_budget(c, n, opts.seed, first_index[b] + j),
                None => Ok(c.clone()),
            })
            .collect::<Result<_>>()?;
        let mut truth = Vec::new();
        for c in &inputs {
            truth.extend(targets(c, head, classes)?);
        }
        let refs: Vec<&PointCloud> = inputs.iter().collect();
        let start = match &opts.start {
            FpsStart::Random(seed) => FpsStart::Random(stream_id(&[*seed, b as u64])),
            other => other.clone(),
        };
        let fwd = ForwardOptions { mode: Mode::Eval, start };
        let (logits, _) = net.forward(&refs, &fwd, &mut stream_rng(0, 0))?;
        let (loss, _, pred, scored) = score(&logits, &truth, head)?;
        Ok((loss * scored as f64, pred, truth, scored))
    });
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut loss = 0.0;
    let mut scored = 0;
    for r in per_batch {
        let (l, p, t, s) = r?;
        loss += l;
        scored += s;
        pred.extend(p);
        truth.extend(t);
    }
    if head == Head::Segmentation {
        let keep: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != UNANNOTATED).collect();
        pred = keep.iter().map(|&i| pred[i]).collect();
        truth = keep.iter().map(|&i| truth[i]).collect();
    }
    let class_ids: Vec<u32> = match head {
        Head::Classification => (0..classes as u32).collect(),
        Head::Segmentation => (1..classes as u32).collect(),
    };
    Ok(EvalMetrics {
        accuracy: accuracy(&pred, &truth),
        mean_iou: mean_iou(&pred, &truth, &class_ids),
        loss: if scored > 0 { loss / scored as f64 } else { 0.0 },
        count: scored,
    })
}

pub fn evaluate(checkpoint: &Checkpoint, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalMetrics> {
    checkpoint.check_corpus(corpus)?;
    evaluate_network(&checkpoint.network, &corpus.test, opts)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Trained network plus what is needed to resume or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.dim() != self.network.dim || corpus.channels() != self.network.channels {
            return Err(Error::arg(format!(
                "model takes d={} C={} but the corpus has d={} C={}",
                self.network.dim,
                self.network.channels,
                corpus.dim(),
                corpus.channels()
            )));
        }
        if corpus.class_names != self.class_names {
            return Err(Error::arg(format!(
                "label space mismatch: model knows [{}], corpus has [{}]",
                self.class_names.join(", "),
                corpus.class_names.join(", ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: MetricLog,
}

/// Builds a freshly initialized network for a corpus.
pub fn build_network(blueprint: &NetworkBlueprint, corpus: &Corpus, config: &TrainConfig) -> Result<Network> {
    let mut rng = stream_rng(config.seed, INIT);
    Network::from_blueprint(
        blueprint,
        corpus.dim(),
        corpus.channels(),
        config.metric,
        corpus.num_classes(),
        &mut rng,
    )
}

pub fn train(blueprint: &NetworkBlueprint, corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let network = build_network(blueprint, corpus, config)?;
    let checkpoint = Checkpoint {
        network,
        adam: AdamState::new(config.lr),
        config: config.clone(),
        epoch: 0,
        class_names: corpus.class_names.clone(),
    };
    continue_training(checkpoint, corpus, config.epochs)
}

/// Runs `epochs` more epochs from a checkpoint.
pub fn continue_training(mut ck: Checkpoint, corpus: &Corpus, epochs: usize) -> Result<TrainOutcome> {
    ck.check_corpus(corpus)?;
    let config = ck.config.clone();
    let head = ck.network.blueprint.head;
    let n = corpus.train.len();
    // Batch norm needs two rows; a short set trains as a single batch.
    let batch = config.batch_size.min(n);
    if batch < 2 && head == Head::Classification {
        return Err(Error::config("training needs batches of at least two clouds"));
    }
    if batch == 0 {
        return Err(Error::config("the training split is empty"));
    }
    let mut log = MetricLog::default();
    let last_epoch = ck.epoch + epochs;
    for epoch in ck.epoch + 1..=last_epoch {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(config.seed, stream_id(&[SHUFFLE, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        let mut seen = 0usize;
        for (b, ids) in order.chunks_exact(batch).enumerate() {
            let inputs: Vec<PointCloud> = ids
                .iter()
                .map(|&i| {
                    let mut rng = stream_rng(config.seed, stream_id(&[AUGMENT, epoch as u64, i as u64]));
                    let mut c = augment(&corpus.train[i], &config.augment, &mut rng)?;
                    if config.dropout_training {
                        c = random_input_dropout(&c, config.dropout_p, &mut rng);
                    }
                    Ok(c)
                })
                .collect::<Result<_>>()?;
            let mut truth = Vec::new();
            for c in &inputs {
                truth.extend(targets(c, head, ck.network.num_classes)?);
            }
            let refs: Vec<&PointCloud> = inputs.iter().collect();
            let mut rng = stream_rng(config.seed, stream_id(&[DROPOUT, epoch as u64, b as u64]));
            let (logits, cache) = ck.network.forward(&refs, &ForwardOptions::train(), &mut rng)?;
            let (loss, grad, pred, scored) = score(&logits, &truth, head)?;
            if !loss.is_finite() {
                let norms: Vec<String> = ck.network.params().iter().map(|t| format!("{:.3e}", t.norm())).collect();
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {epoch}, batch {b} (clouds {ids:?}); parameter norms [{}]",
                    norms.join(", ")
                )));
            }
            ck.network.zero_grad();
            ck.network.backward(&cache, &grad)?;
            adam_step(&mut ck.network.params_mut(), &mut ck.adam);
            loss_sum += loss * scored as f64;
            correct += pred
                .iter()
                .zip(&truth)
                .filter(|(p, t)| p == t && !(head == Head::Segmentation && **t == UNANNOTATED))
                .count() as f64;
            seen += scored;
        }
        let denom = seen.max(1) as f64;
        log.push(epoch, "train", "loss", loss_sum / denom);
        log.push(epoch, "train", "accuracy", correct / denom);
        if epoch % config.eval_every == 0 || epoch == last_epoch {
            let m = evaluate_network(&ck.network, &corpus.test, &EvalOptions::default())?;
            log.push(epoch, "test", "loss", m.loss);
            log.push(epoch, "test", "accuracy", m.accuracy);
            log.push(epoch, "test", "mean_iou", m.mean_iou);
        }
        ck.epoch = epoch;
    }
    // Stale gradients are not part of the model.
    ck.network.zero_grad();
    Ok(TrainOutcome { checkpoint: ck, log })
}

// ---------------------------------------------------------------------------
// Density sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub budget: usize,
    pub accuracy: f64,
}

/// Test accuracy of every named model at every point budget. Budgets must
/// be strictly descending.
pub fn density_sweep(
    models: &[(String, &Checkpoint)],
    corpus: &Corpus,
    budgets: &[usize],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] <= w[1]) || budgets.contains(&0) {
        return Err(Error::arg("budgets must be positive and strictly descending"));
    }
    let mut rows = Vec::new();
    for (name, ck) in models {
        for &budget in budgets {
            let opts = EvalOptions {
                budget: Some(budget),
                seed,
                ..EvalOptions::default()
            };
            let m = evaluate(ck, corpus, &opts)?;
            rows.push(SweepRow {
                variant: name.clone(),
                budget,
                accuracy: m.accuracy,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("variant,budget,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.variant, r.budget, r.accuracy);
    }
    s
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    blueprint: String,
    dim: usize,
    channels: usize,
    metric: MetricConfig,
    num_classes: usize,
    class_names: Vec<String>,
    epoch: usize,
    config: TrainConfig,
    param_shapes: Vec<Vec<usize>>,
    buffer_lens: Vec<usize>,
    adam_t: u64,
    /// Moment buffers are absent before the first update.
    adam_moments: bool,
    blob_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `[u32 LE header length][JSON header][f64 LE blob][u32 LE CRC32 of all
/// preceding bytes]`. The blob holds parameters, batch-norm running
/// statistics, then Adam first and second moments.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut net = ck.network.clone();
    let params = net.params().iter().map(|t| t.shape().to_vec()).collect();
    let mut blob: Vec<f64> = net.param_vector();
    let buffers = net.buffers_mut();
    let buffer_lens = buffers.iter().map(|b| b.len()).collect();
    for b in buffers {
        blob.extend_from_slice(b);
    }
    let adam_moments = !ck.adam.m.is_empty();
    for m in ck.adam.m.iter().chain(&ck.adam.v) {
        blob.extend_from_slice(m);
    }
    let blob_bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        blueprint: ck.network.blueprint.to_string(),
        dim: ck.network.dim,
        channels: ck.network.channels,
        metric: ck.network.metric,
        num_classes: ck.network.num_classes,
        class_names: ck.class_names.clone(),
        epoch: ck.epoch,
        config: ck.config.clone(),
        param_shapes: params,
        buffer_lens,
        adam_t: ck.adam.t,
        adam_moments,
        blob_sha256: hex(&Sha256::digest(&blob_bytes)),
    };
    let json = serde_json::to_vec_pretty(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + blob_bytes.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob_bytes);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("file is truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch (file is corrupt or truncated)"));
    }
    let json_len = u32::from_le_bytes(body[..4].try_into().expect("4 bytes")) as usize;
    let json = body.get(4..4 + json_len).ok_or_else(|| bad("header runs past the end"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let blob_bytes = &body[4 + json_len..];
    if hex(&Sha256::digest(blob_bytes)) != header.blob_sha256 {
        return Err(bad("parameter blob hash mismatch"));
    }
    if blob_bytes.len() % 8 != 0 {
        return Err(bad("parameter blob is not a whole number of f64 values"));
    }
    let blob: Vec<f64> = blob_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let blueprint = parse_blueprint(&header.blueprint)?;
    let mut network = Network::from_blueprint(
        &blueprint,
        header.dim,
        header.channels,
        header.metric,
        header.num_classes,
        &mut stream_rng(0, 0),
    )?;
    let shapes: Vec<Vec<usize>> = network.params().iter().map(|t| t.shape().to_vec()).collect();
    if shapes != header.param_shapes {
        return Err(bad("parameter shapes do not match the blueprint"));
    }
    let np = network.param_count();
    let nb: usize = header.buffer_lens.iter().sum();
    let moments = if header.adam_moments { 2 * np } else { 0 };
    if blob.len() != np + nb + moments {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values, expected {}",
            blob.len(),
            np + nb + moments
        )));
    }
    network.set_param_vector(&blob[..np])?;
    let mut at = np;
    let buffers = network.buffers_mut();
    if buffers.iter().map(|b| b.len()).collect::<Vec<_>>() != header.buffer_lens {
        return Err(bad("batch-norm buffers do not match the blueprint"));
    }
    for b in buffers {
        let n = b.len();
        b.copy_from_slice(&blob[at..at + n]);
        at += n;
    }
    let mut adam = AdamState::new(header.config.lr);
    adam.t = header.adam_t;
    if header.adam_moments {
        let mut take = |len: usize| {
            let v = blob[at..at + len].to_vec();
            at += len;
            v
        };
        let lens: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
        adam.m = lens.iter().map(|&l| take(l)).collect();
        adam.v = lens.iter().map(|&l| take(l)).collect();
    }
    Ok(Checkpoint {
        network,
        adam,
        config: header.config,
        epoch: header.epoch,
        class_names: header.class_names,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists it was built from `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkBlueprint) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.network.blueprint != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for `{}` but `{}` was requested",
            ck.network.blueprint, expected
        )));
    }
    Ok(ck)
}
