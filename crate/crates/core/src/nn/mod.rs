//! Minimal dense differentiable compute: layers with explicit backward
//! passes, Adam, and finite-difference checking.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod mlp;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckOptions, GradCheckReport};
pub use layers::{
    dropout, masked_set_max, relu, relu_backward, segment_max, set_max_backward,
    softmax_cross_entropy, softmax_cross_entropy_rows, BatchNorm, Linear, Mode, SetMaxCache,
};
pub use mlp::{DenseLayer, MlpCache, SharedMlp};
pub use tensor::Tensor;

/// Running FNV-1a hash of the discrete choices a forward pass made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn push_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn push_bool(&mut self, b: bool) {
        self.0 ^= u64::from(b);
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}
