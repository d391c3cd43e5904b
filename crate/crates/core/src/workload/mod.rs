//! Synthetic DL-workload trace generation.
//!
//! Traces are deterministic functions of a [`WorkloadSpec`]: same spec, same
//! bytes. The generator models a framework-style execution (operators wrapping
//! one to four kernels, pool-allocated tensors, annotated layer ranges) so
//! that analyses and the paging simulator have realistic inputs whose expected
//! results can be recomputed independently in tests.

mod alloc;
mod gen;

pub use alloc::{
    AllocError, Chunk, NewChunk, PoolAllocator, TensorPlacement, CHUNK_GRANULE, TENSOR_ALIGN,
};
pub use gen::{emit_kernel_accesses, generate_trace};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Toy model families. Sizes are desk-scale; the point is the *shape* of the
/// memory behavior (pooled tensors, per-layer weights, workspace buffers),
/// not fidelity to any real network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyModel {
    CnnToy,
    TransformerEncoderToy,
    TransformerDecoderToy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inference,
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    None,
    /// Data parallel: the model is replicated; devices behave identically.
    Dp,
    /// Tensor parallel: every weight and activation is sharded evenly.
    Tp,
    /// Pipeline parallel: contiguous layer slices per device.
    Pp,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("invalid workload spec: {0}")]
    Invalid(String),
    #[error("bad config line {line}: {detail}")]
    Config { line: usize, detail: String },
}

/// Parameters of a generated workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub model: ToyModel,
    pub layers: u32,
    pub batch: u32,
    pub mode: Mode,
    pub devices: u32,
    pub parallelism: Parallelism,
    pub seed: u64,
    /// Fraction (0, 1] of each touched region's bytes accessed per kernel,
    /// in 32-byte granules.
    pub access_sample_rate: f64,
    /// Fraction [0, 1) of kernel argument objects that are deliberately never
    /// accessed by the kernel.
    pub untouched_arg_rate: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let err = |msg: String| Err(SpecError::Invalid(msg));
        if self.layers == 0 {
            return err("layers must be >= 1".into());
        }
        if self.batch == 0 {
            return err("batch must be >= 1".into());
        }
        if self.devices == 0 {
            return err("devices must be >= 1".into());
        }
        match self.parallelism {
            Parallelism::None if self.devices != 1 => {
                return err("parallelism=none requires devices=1".into())
            }
            Parallelism::Dp | Parallelism::Tp | Parallelism::Pp if self.devices < 2 => {
                return err("dp/tp/pp require devices >= 2".into())
            }
            _ => {}
        }
        if self.parallelism == Parallelism::Pp && self.layers < self.devices {
            return err("pp requires at least one layer per device".into());
        }
        if !(self.access_sample_rate > 0.0 && self.access_sample_rate <= 1.0) {
            return err("access_sample_rate must be in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.untouched_arg_rate) {
            return err("untouched_arg_rate must be in [0, 1)".into());
        }
        Ok(())
    }

    /// BERT-like encoder workload: moderate footprint-to-working-set gap.
    pub fn bert_toy() -> Self {
        WorkloadSpec {
            model: ToyModel::TransformerEncoderToy,
            layers: 4,
            batch: 16,
            mode: Mode::Inference,
            devices: 1,
            parallelism: Parallelism::None,
            seed: 1001,
            access_sample_rate: 0.02,
            untouched_arg_rate: 0.25,
        }
    }

    /// GPT-2-like decoder workload: many layers relative to what any single
    /// kernel touches, so the working set is small next to the footprint.
    pub fn gpt2_toy() -> Self {
        WorkloadSpec {
            model: ToyModel::TransformerDecoderToy,
            layers: 8,
            batch: 8,
            mode: Mode::Inference,
            devices: 1,
            parallelism: Parallelism::None,
            seed: 1002,
            access_sample_rate: 0.02,
            untouched_arg_rate: 0.25,
        }
    }

    /// Small convolutional workload.
    pub fn cnn_toy() -> Self {
        WorkloadSpec {
            model: ToyModel::CnnToy,
            layers: 3,
            batch: 8,
            mode: Mode::Inference,
            devices: 1,
            parallelism: Parallelism::None,
            seed: 1003,
            access_sample_rate: 0.02,
            untouched_arg_rate: 0.25,
        }
    }

    /// Convolutional workload with a large im2col workspace: most of the
    /// footprint is needed by every layer, so the working set stays close to
    /// the footprint and oversubscription hurts.
    pub fn high_ws_toy() -> Self {
        WorkloadSpec {
            model: ToyModel::CnnToy,
            layers: 2,
            batch: 24,
            mode: Mode::Inference,
            devices: 1,
            parallelism: Parallelism::None,
            seed: 1004,
            access_sample_rate: 0.1,
            untouched_arg_rate: 0.25,
        }
    }

    /// Parse a plain `key = value` config (one pair per line, `#` comments).
    pub fn from_config_str(text: &str) -> Result<Self, SpecError> {
        let mut spec = WorkloadSpec::cnn_toy();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| SpecError::Config {
                line,
                detail: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |detail: String| SpecError::Config { line, detail };
            match key {
                "model" => {
                    spec.model = match value {
                        "cnn" | "cnn-toy" => ToyModel::CnnToy,
                        "transformer-encoder" | "transformer-encoder-toy" => {
                            ToyModel::TransformerEncoderToy
                        }
                        "transformer-decoder" | "transformer-decoder-toy" => {
                            ToyModel::TransformerDecoderToy
                        }
                        other => return Err(bad(format!("unknown model `{other}`"))),
                    }
                }
                "layers" => spec.layers = value.parse().map_err(|e| bad(format!("layers: {e}")))?,
                "batch" => spec.batch = value.parse().map_err(|e| bad(format!("batch: {e}")))?,
                "mode" => {
                    spec.mode = match value {
                        "inference" => Mode::Inference,
                        "train" => Mode::Train,
                        other => return Err(bad(format!("unknown mode `{other}`"))),
                    }
                }
                "devices" => {
                    spec.devices = value.parse().map_err(|e| bad(format!("devices: {e}")))?
                }
                "parallelism" => {
                    spec.parallelism = match value {
                        "none" => Parallelism::None,
                        "dp" => Parallelism::Dp,
                        "tp" => Parallelism::Tp,
                        "pp" => Parallelism::Pp,
                        other => return Err(bad(format!("unknown parallelism `{other}`"))),
                    }
                }
                "seed" => spec.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                "access_sample_rate" => {
                    spec.access_sample_rate = value
                        .parse()
                        .map_err(|e| bad(format!("access_sample_rate: {e}")))?
                }
                "untouched_arg_rate" => {
                    spec.untouched_arg_rate = value
                        .parse()
                        .map_err(|e| bad(format!("untouched_arg_rate: {e}")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallelism_constraints() {
        let mut spec = WorkloadSpec::bert_toy();
        spec.devices = 2;
        assert!(spec.validate().is_err());
        spec.parallelism = Parallelism::Dp;
        assert!(spec.validate().is_ok());
        spec.devices = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = "\
# toy config
model = transformer-encoder
layers = 2
batch = 4
mode = train
seed = 99
access_sample_rate = 0.5
";
        let spec = WorkloadSpec::from_config_str(text).unwrap();
        assert_eq!(spec.model, ToyModel::TransformerEncoderToy);
        assert_eq!(spec.layers, 2);
        assert_eq!(spec.mode, Mode::Train);
        assert_eq!(spec.seed, 99);
        assert_eq!(spec.access_sample_rate, 0.5);
    }

    #[test]
    fn config_rejects_unknown_keys_with_line_numbers() {
        let err = WorkloadSpec::from_config_str("model = cnn\nbogus = 1\n").unwrap_err();
        assert_eq!(
            err,
            SpecError::Config {
                line: 2,
                detail: "unknown key `bogus`".into()
            }
        );
    }
}
