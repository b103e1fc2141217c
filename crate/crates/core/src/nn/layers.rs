//! Differentiable building blocks with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Train mode uses batch statistics and live dropout; eval mode uses running
/// statistics and disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Fully connected layer `y = W x + b` applied to every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            weight: Tensor::param(&[outputs, inputs], w).expect("shape"),
            bias: Tensor::param(&[outputs], vec![0.0; outputs]).expect("shape"),
        }
    }

    pub fn from_parts(outputs: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Ok(Self {
            weight: Tensor::param(&[outputs, inputs], weight)?,
            bias: Tensor::param(&[outputs], bias)?,
        })
    }

    pub fn identity(width: usize) -> Self {
        let mut w = vec![0.0; width * width];
        for i in 0..width {
            w[i * width + i] = 1.0;
        }
        Self::from_parts(width, width, w, vec![0.0; width]).expect("shape")
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if x.cols() != n_in {
            return Err(Error::config(format!(
                "linear layer expects {n_in} inputs, got {}",
                x.cols()
            )));
        }
        let rows = x.rows();
        let w = self.weight.values();
        // `in x out` copy so the inner loop runs over contiguous outputs.
        let mut wt = vec![0.0; n_in * n_out];
        for o in 0..n_out {
            for i in 0..n_in {
                wt[i * n_out + o] = w[o * n_in + i];
            }
        }
        let b = self.bias.values();
        let xv = x.values();
        let mut y = vec![0.0; rows * n_out];
        par::for_each_row(&mut y, n_out, n_in * n_out, |r, out| {
            out.copy_from_slice(b);
            let xr = &xv[r * n_in..(r + 1) * n_in];
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    let wrow = &wt[i * n_out..(i + 1) * n_out];
                    for (acc, wv) in out.iter_mut().zip(wrow) {
                        *acc += xi * wv;
                    }
                }
            }
        });
        Tensor::matrix(rows, n_out, y)
    }

    /// Accumulates dL/dW and dL/db; returns dL/dx.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let rows = x.rows();
        let xv = x.values();
        let gv = grad_out.values();
        {
            let gw = self.weight.grad_mut();
            for r in 0..rows {
                let xr = &xv[r * n_in..(r + 1) * n_in];
                let gr = &gv[r * n_out..(r + 1) * n_out];
                for (o, &g) in gr.iter().enumerate() {
                    if g != 0.0 {
                        for (acc, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *acc += g * xi;
                        }
                    }
                }
            }
        }
        {
            let gb = self.bias.grad_mut();
            for gr in gv.chunks_exact(n_out) {
                for (acc, g) in gb.iter_mut().zip(gr) {
                    *acc += g;
                }
            }
        }
        let w = self.weight.values();
        let mut dx = vec![0.0; rows * n_in];
        par::for_each_row(&mut dx, n_in, n_in * n_out, |r, out| {
            let gr = &gv[r * n_out..(r + 1) * n_out];
            for (o, &g) in gr.iter().enumerate() {
                if g != 0.0 {
                    for (acc, wv) in out.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *acc += g * wv;
                    }
                }
            }
        });
        Tensor::matrix(rows, n_in, dx).expect("shape")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over the row axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("shape"),
            beta: Tensor::param(&[channels], vec![0.0; channels]).expect("shape"),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalizes `x` (rows x channels). Train mode also folds the batch
    /// statistics into the running averages.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let c = self.channels();
        if x.cols() != c {
            return Err(Error::config(format!(
                "batch norm over {c} channels got width {}",
                x.cols()
            )));
        }
        let rows = x.rows();
        let xv = x.values();
        let (mean, var) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::arg(format!(
                        "batch norm in train mode needs at least 2 rows, got {rows}"
                    )));
                }
                // Shifted by the first row: identical rows give a mean equal
                // to that row exactly.
                let first = x.row(0).to_vec();
                let mut mean = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    for ((m, v), f) in mean.iter_mut().zip(row).zip(&first) {
                        *m += v - f;
                    }
                }
                for (m, f) in mean.iter_mut().zip(&first) {
                    *m = f + *m / rows as f64;
                }
                let mut var = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                for ch in 0..c {
                    self.running_mean[ch] =
                        self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean[ch];
                    self.running_var[ch] =
                        self.momentum * self.running_var[ch] + (1.0 - self.momentum) * var[ch];
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let g = self.gamma.values();
        let b = self.beta.values();
        let mut x_hat = vec![0.0; rows * c];
        let mut y = vec![0.0; rows * c];
        for r in 0..rows {
            for ch in 0..c {
                let at = r * c + ch;
                let h = (xv[at] - mean[ch]) * inv_std[ch];
                x_hat[at] = h;
                y[at] = g[ch] * h + b[ch];
            }
        }
        Ok((
            Tensor::matrix(rows, c, y)?,
            BatchNormCache {
                x_hat,
                inv_std,
                mode,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Tensor) -> Tensor {
        let c = self.channels();
        let rows = grad_out.rows();
        let gv = grad_out.values();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (gr, hr) in gv.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += gr[ch];
                sum_gx[ch] += gr[ch] * hr[ch];
            }
        }
        for (acc, v) in self.gamma.grad_mut().iter_mut().zip(&sum_gx) {
            *acc += v;
        }
        for (acc, v) in self.beta.grad_mut().iter_mut().zip(&sum_g) {
            *acc += v;
        }
        let gamma = self.gamma.values();
        let mut dx = vec![0.0; rows * c];
        match cache.mode {
            Mode::Eval => {
                for r in 0..rows {
                    for ch in 0..c {
                        dx[r * c + ch] = gv[r * c + ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                let n = rows as f64;
                for r in 0..rows {
                    for ch in 0..c {
                        let at = r * c + ch;
                        let k = gamma[ch] * cache.inv_std[ch] / n;
                        dx[at] = k * (n * gv[at] - sum_g[ch] - cache.x_hat[at] * sum_gx[ch]);
                    }
                }
            }
        }
        Tensor::matrix(rows, c, dx).expect("shape")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta]
    }
}

// ---------------------------------------------------------------------------
// Activations, dropout, reductions, loss
// ---------------------------------------------------------------------------

pub fn relu(x: &Tensor) -> Tensor {
    let v = x.values().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), v).expect("shape")
}

/// Gradient of ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let v = y
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(y.shape(), v).expect("shape")
}

/// Inverted dropout. Returns the output and the per-entry multiplier used
/// (`None` when the layer acted as identity).
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let v = x.values().iter().zip(&scale).map(|(a, s)| a * s).collect();
    Ok((Tensor::from_vec(x.shape(), v)?, Some(scale)))
}

pub fn dropout_backward(scale: Option<&[f64]>, grad_out: &Tensor) -> Tensor {
    match scale {
        None => grad_out.clone(),
        Some(s) => {
            let v = grad_out.values().iter().zip(s).map(|(g, k)| g * k).collect();
            Tensor::from_vec(grad_out.shape(), v).expect("shape")
        }
    }
}

/// Argmax bookkeeping of a set-max reduction: for every output entry, the
/// flat input row that won.
#[derive(Debug, Clone)]
pub struct SetMaxCache {
    winners: Vec<usize>,
    input_rows: usize,
    channels: usize,
}

impl SetMaxCache {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Max over contiguous row segments: region `s` covers rows
/// `offsets[s]..offsets[s + 1]`. Ties go to the lowest row.
pub fn segment_max(values: &Tensor, offsets: &[usize]) -> Result<(Tensor, SetMaxCache)> {
    let c = values.cols();
    let regions = offsets.len().saturating_sub(1);
    let mut out = vec![0.0; regions * c];
    let mut winners = vec![0usize; regions * c];
    for s in 0..regions {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        if lo >= hi {
            return Err(Error::arg(format!("region {s} has no valid member")));
        }
        let o = &mut out[s * c..(s + 1) * c];
        let w = &mut winners[s * c..(s + 1) * c];
        o.copy_from_slice(values.row(lo));
        w.iter_mut().for_each(|x| *x = lo);
        for r in lo + 1..hi {
            for ((best, win), &v) in o.iter_mut().zip(w.iter_mut()).zip(values.row(r)) {
                if v > *best {
                    *best = v;
                    *win = r;
                }
            }
        }
    }
    Ok((
        Tensor::matrix(regions, c, out)?,
        SetMaxCache {
            winners,
            input_rows: values.rows(),
            channels: c,
        },
    ))
}

/// Max over the `K` axis of a `regions x K x C` tensor, reading only
/// entries whose mask bit is set. Masked-out entries are never read.
pub fn masked_set_max(values: &Tensor, mask: &[bool]) -> Result<(Tensor, SetMaxCache)> {
    let shape = values.shape();
    if shape.len() != 3 {
        return Err(Error::config(format!("set max expects regions x K x C, got {shape:?}")));
    }
    let (regions, k, c) = (shape[0], shape[1], shape[2]);
    if mask.len() != regions * k {
        return Err(Error::config("mask shape does not match values"));
    }
    let v = values.values();
    let mut out = vec![f64::NEG_INFINITY; regions * c];
    let mut winners = vec![usize::MAX; regions * c];
    for s in 0..regions {
        let mut any = false;
        for j in 0..k {
            let row = s * k + j;
            if !mask[row] {
                continue;
            }
            for ch in 0..c {
                let x = v[row * c + ch];
                if !any || x > out[s * c + ch] {
                    out[s * c + ch] = x;
                    winners[s * c + ch] = row;
                }
            }
            any = true;
        }
        if !any {
            return Err(Error::arg(format!("region {s} has no valid member")));
        }
    }
    Ok((
        Tensor::matrix(regions, c, out)?,
        SetMaxCache {
            winners,
            input_rows: regions * k,
            channels: c,
        },
    ))
}

/// Routes each output gradient to the row that produced the maximum.
pub fn set_max_backward(cache: &SetMaxCache, grad_out: &Tensor) -> Tensor {
    let c = cache.channels;
    let mut dx = vec![0.0; cache.input_rows * c];
    for (at, (&row, &g)) in cache.winners.iter().zip(grad_out.values()).enumerate() {
        dx[row * c + at % c] += g;
    }
    Tensor::matrix(cache.input_rows, c, dx).expect("shape")
}

/// Numerically stable softmax cross-entropy for one logit vector.
/// Returns the loss and dL/dlogits = softmax - onehot.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over the rows of a logit matrix.
pub fn softmax_cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let rows = logits.rows();
    if labels.len() != rows {
        return Err(Error::arg(format!("{} labels for {rows} rows", labels.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    let scale = 1.0 / rows.max(1) as f64;
    for (r, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.row(r), label)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((total * scale, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use crate::rng::stream_rng;

    fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_and_scalar() {
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        assert_eq!(Linear::identity(3).forward(&x).unwrap(), x);
        let mut l = Linear::from_parts(1, 1, vec![2.0], vec![1.0]).unwrap();
        let x = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap().values(), &[7.0]);
        l.backward(&x, &Tensor::matrix(1, 1, vec![1.0]).unwrap());
        assert_eq!(l.weight.grad().unwrap(), &[3.0]);
        assert_eq!(l.bias.grad().unwrap(), &[1.0]);
        assert!(l.forward(&Tensor::matrix(1, 2, vec![0.0; 2]).unwrap()).is_err());
    }

    /// Scalar probe loss: sum of outputs weighted by a fixed random matrix.
    fn probe(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 1);
            let (rows, n_in, n_out) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(1..7));
            let layer = Linear::new(n_in, n_out, &mut rng);
            let x = random_tensor(&mut rng, rows, n_in);
            let w = probe(&mut rng, rows * n_out);
            let loss = |l: &Linear, x: &Tensor| -> f64 {
                l.forward(x).unwrap().values().iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let mut l2 = layer.clone();
            let dx = l2.backward(&x, &Tensor::matrix(rows, n_out, w.clone()).unwrap());
            // Parameters and input packed into one vector.
            let mut flat = layer.weight.values().to_vec();
            flat.extend_from_slice(layer.bias.values());
            flat.extend_from_slice(x.values());
            let mut analytic = l2.weight.grad().unwrap().to_vec();
            analytic.extend_from_slice(l2.bias.grad().unwrap());
            analytic.extend_from_slice(dx.values());
            let nw = n_in * n_out;
            let report = grad_check(
                |p: &[f64]| {
                    let l = Linear::from_parts(n_out, n_in, p[..nw].to_vec(), p[nw..nw + n_out].to_vec()).unwrap();
                    let x = Tensor::matrix(rows, n_in, p[nw + n_out..].to_vec()).unwrap();
                    loss(&l, &x)
                },
                &flat,
                &analytic,
                &GradCheckOptions::with_tolerance(1e-7),
            );
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn batchnorm_zero_variance_gives_beta() {
        let mut bn = BatchNorm::new(2);
        bn.beta.values_mut().copy_from_slice(&[0.25, -3.0]);
        bn.gamma.values_mut().copy_from_slice(&[2.0, 5.0]);
        let x = Tensor::matrix(3, 2, vec![0.1, 7.3, 0.1, 7.3, 0.1, 7.3]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.values(), &[0.25, -3.0, 0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn batchnorm_standardizes_large_batch() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream_rng(3, 0);
        let vals: Vec<f64> = (0..1024).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut bn = BatchNorm::new(1);
        let (y, _) = bn.forward(&Tensor::matrix(1024, 1, vals).unwrap(), Mode::Train).unwrap();
        let mean = y.values().iter().sum::<f64>() / 1024.0;
        let var = y.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1024.0;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.1, "{mean} {var}");
    }

    #[test]
    fn batchnorm_rejects_single_row_in_train_mode() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::Argument(_))));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_running_stats_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        for seed in 0..20 {
            for mode in [Mode::Train, Mode::Eval] {
                let mut rng = stream_rng(seed, 2);
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
                let x = random_tensor(&mut rng, rows, c);
                let w = probe(&mut rng, rows * c);
                let base = bn.clone();
                let (_, cache) = bn.forward(&x, mode).unwrap();
                let dx = bn.backward(&cache, &Tensor::matrix(rows, c, w.clone()).unwrap());
                let mut flat = base.gamma.values().to_vec();
                flat.extend_from_slice(base.beta.values());
                flat.extend_from_slice(x.values());
                let mut analytic = bn.gamma.grad().unwrap().to_vec();
                analytic.extend_from_slice(bn.beta.grad().unwrap());
                analytic.extend_from_slice(dx.values());
                let report = grad_check(
                    |p: &[f64]| {
                        let mut b = base.clone();
                        b.gamma.values_mut().copy_from_slice(&p[..c]);
                        b.beta.values_mut().copy_from_slice(&p[c..2 * c]);
                        let x = Tensor::matrix(rows, c, p[2 * c..].to_vec()).unwrap();
                        let (y, _) = b.forward(&x, mode).unwrap();
                        y.values().iter().zip(&w).map(|(a, b)| a * b).sum()
                    },
                    &flat,
                    &analytic,
                    &GradCheckOptions::with_tolerance(1e-5),
                );
                assert!(report.passed, "seed {seed} {mode:?}: {report:?}");
            }
        }
    }

    #[test]
    fn relu_values_and_subgradient() {
        let x = Tensor::matrix(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.values(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&y, &Tensor::matrix(1, 3, vec![1.0; 3]).unwrap());
        assert_eq!(g.values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_rates() {
        let mut rng = stream_rng(1, 1);
        let x = Tensor::matrix(1, 5, vec![1.0; 5]).unwrap();
        let (y, s) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(s.is_none());
        let (y, _) = dropout(&x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);

        let rate = 0.3;
        let n = 100_000;
        let big = Tensor::matrix(1, n, vec![1.0; n]).unwrap();
        let (y, _) = dropout(&big, rate, Mode::Train, &mut rng).unwrap();
        let kept = y.values().iter().filter(|v| **v != 0.0).count() as f64;
        let p = 1.0 - rate;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((kept - n as f64 * p).abs() < 3.0 * sigma);
        assert!(y.values().iter().all(|v| *v == 0.0 || (*v - 1.0 / p).abs() < 1e-12));
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn masked_max_skips_masked_entries() {
        let v = Tensor::from_vec(&[1, 3, 1], vec![5.0, 7.0, f64::NAN]).unwrap();
        let (y, cache) = masked_set_max(&v, &[true, true, false]).unwrap();
        assert_eq!(y.values(), &[7.0]);
        let g = set_max_backward(&cache, &Tensor::matrix(1, 1, vec![1.0]).unwrap());
        assert_eq!(g.values(), &[0.0, 1.0, 0.0]);
        assert!(masked_set_max(&v, &[false, false, false]).is_err());
    }

    #[test]
    fn set_max_ties_go_to_lowest_row() {
        let v = Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap();
        let (_, cache) = segment_max(&v, &[0, 3]).unwrap();
        assert_eq!(cache.winners(), &[0]);
        assert!(segment_max(&v, &[0, 0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = softmax_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
        let mut prev = f64::INFINITY;
        for gap in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let (l, _) = softmax_cross_entropy(&[gap, 0.0, 0.0], 0).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..50 {
            let mut rng = stream_rng(seed, 5);
            let k = rng.gen_range(2..8);
            let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let label = rng.gen_range(0..k);
            let (_, g) = softmax_cross_entropy(&z, label).unwrap();
            let report = grad_check(
                |p: &[f64]| softmax_cross_entropy(p, label).unwrap().0,
                &z,
                &g,
                &GradCheckOptions::with_tolerance(1e-8),
            );
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}
