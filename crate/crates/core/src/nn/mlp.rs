//! Stacks of fully connected layers shared across rows ("1x1 convolutions").

use rand::Rng;

use super::layers::{
    dropout, dropout_backward, relu, relu_backward, BatchNorm, BatchNormCache, Linear, Mode,
};
use super::tensor::Tensor;
use super::Fingerprint;
use crate::error::Result;

/// Linear -> optional batch norm -> optional ReLU -> optional dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub linear: Linear,
    pub norm: Option<BatchNorm>,
    pub activation: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    norm: Option<BatchNormCache>,
    activated: Option<Tensor>,
    drop_scale: Option<Vec<f64>>,
}

impl DenseLayer {
    /// Hidden layer: batch norm and ReLU after the affine map.
    pub fn hidden<R: Rng + ?Sized>(inputs: usize, outputs: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(inputs, outputs, rng),
            norm: Some(BatchNorm::new(outputs)),
            activation: true,
            dropout,
        }
    }

    /// Plain affine output layer (score prediction).
    pub fn output<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(inputs, outputs, rng),
            norm: None,
            activation: false,
            dropout: 0.0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.linear.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.linear.outputs()
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<(Tensor, DenseCache)> {
        let mut y = self.linear.forward(x)?;
        let mut norm_cache = None;
        if let Some(bn) = &mut self.norm {
            let (z, c) = bn.forward(&y, mode)?;
            y = z;
            norm_cache = Some(c);
        }
        let mut activated = None;
        if self.activation {
            y = relu(&y);
            activated = Some(y.clone());
        }
        let (y, drop_scale) = dropout(&y, self.dropout, mode, rng)?;
        Ok((
            y,
            DenseCache {
                input: x.clone(),
                norm: norm_cache,
                activated,
                drop_scale,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DenseCache, grad_out: &Tensor) -> Tensor {
        let mut g = dropout_backward(cache.drop_scale.as_deref(), grad_out);
        if let Some(a) = &cache.activated {
            g = relu_backward(a, &g);
        }
        if let (Some(bn), Some(c)) = (&mut self.norm, &cache.norm) {
            g = bn.backward(c, &g);
        }
        self.linear.backward(&cache.input, &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.linear.params_mut();
        if let Some(bn) = &mut self.norm {
            v.extend(bn.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.linear.params();
        if let Some(bn) = &self.norm {
            v.extend(bn.params());
        }
        v
    }

    /// Batch-norm running statistics, in a fixed order.
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match &mut self.norm {
            Some(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            None => Vec::new(),
        }
    }
}

impl DenseCache {
    pub fn fingerprint(&self, fp: &mut Fingerprint) {
        if let Some(a) = &self.activated {
            for v in a.values() {
                fp.push_bool(*v > 0.0);
            }
        }
    }
}

/// A chain of dense layers applied row-wise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SharedMlp {
    pub layers: Vec<DenseLayer>,
}

pub type MlpCache = Vec<DenseCache>;

impl SharedMlp {
    /// Every layer hidden (BN + ReLU), as inside set abstraction levels.
    pub fn hidden<R: Rng + ?Sized>(inputs: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut n_in = inputs;
        for &w in widths {
            layers.push(DenseLayer::hidden(n_in, w, 0.0, rng));
            n_in = w;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Self {
        Self { layers }
    }

    /// Identity map on `width` channels: no bias, no normalization, no activation.
    pub fn identity(width: usize) -> Self {
        Self {
            layers: vec![DenseLayer {
                linear: Linear::identity(width),
                norm: None,
                activation: false,
                dropout: 0.0,
            }],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<(Tensor, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&h, mode, rng)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &MlpCache, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (layer, c) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(c, &g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(DenseLayer::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(DenseLayer::params).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(DenseLayer::buffers_mut).collect()
    }
}

pub fn fingerprint_mlp(caches: &MlpCache, fp: &mut Fingerprint) {
    caches.iter().for_each(|c| c.fingerprint(fp));
}
