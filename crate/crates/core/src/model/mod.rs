//! The double-chain graph-convolutional transformer.
//!
//! A stack of `M` double-chain blocks over `[B, N, C]` joint features:
//! each block splits the channels into a local-to-global chain (GCN-based
//! LCM first, attention-based GCM second) and a global-to-local chain (GCM
//! first, LCM second), exchanges information between the chains through the
//! low-rank FIM bottleneck, re-merges the chains, and finishes with a
//! layer-norm + MLP residual. A per-joint linear head regresses 3D
//! coordinates in millimeters.

mod accounting;
mod forward;
mod params;

pub use accounting::{count_flops, count_params, flop_presets, param_presets, Preset};
pub use forward::{
    double_chain_block, fim_forward, forward_pass, gcm_forward, lcm_forward, BnCursor, BnForward,
};
pub use params::{
    bn_widths, Affine, BlockParams, BnStats, Embedding, Fim, Gcm, GcnStage, Head, Lcm, LcmStack,
    Linear, Mlp, ModelParams, ModelState,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{decompose_adjacency, AdjacencySet, SkeletonTopology, TopologyError};
use crate::tensor::{Element, Tape, Tensor, TensorError, Value};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config has {model} joints but the topology has {topology}")]
    JointCountMismatch { model: usize, topology: usize },
    #[error("input arity mismatch: config expects {expected}, input shape is {got:?}")]
    ArityMismatch { expected: String, got: Vec<usize> },
    #[error("adjacency built for {adjacency} joints, model has {model}")]
    AdjacencyMismatch { adjacency: usize, model: usize },
    #[error("eval mode before any batch statistics exist")]
    NoBatchStats,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Which block architecture the model stacks.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    DoubleChain,
    /// Single-chain ablation: attention module only.
    GcmOnly,
    /// Single-chain ablation: graph-convolution module only.
    LcmOnly,
}

/// Hyperparameters; every matrix extent in the model derives from these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Joint count N.
    pub joints: usize,
    /// Stacked double-chain blocks M.
    pub layers: usize,
    /// Total channel width C.
    pub channels: usize,
    /// Local-to-global chain width C1.
    pub local_channels: usize,
    /// Global-to-local chain width C2.
    pub global_channels: usize,
    /// Attention heads h; must divide both chain widths.
    pub heads: usize,
    pub mlp_expansion: usize,
    pub fim_reduction: usize,
    pub lcm_expansion: usize,
    /// Input frames T; odd, 1 for single-frame.
    pub frames: usize,
    /// Sequence-embedding width C_mu, used when frames > 1.
    pub seq_channels: usize,
    /// Hook only; defaults to 0 and the reference settings never use it.
    pub dropout: f64,
    pub variant: ModelVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Reference preset: N=17, M=3, C=160 split 1:4, 8 heads, single frame.
    pub fn paper() -> Self {
        Self {
            joints: 17,
            layers: 3,
            channels: 160,
            local_channels: 32,
            global_channels: 128,
            heads: 8,
            mlp_expansion: 4,
            fim_reduction: 2,
            lcm_expansion: 2,
            frames: 1,
            seq_channels: 1024,
            dropout: 0.0,
            variant: ModelVariant::DoubleChain,
        }
    }

    /// Reference preset extended with a video-sequence frontend.
    pub fn paper_sequence(frames: usize, layers: usize) -> Self {
        Self {
            frames,
            layers,
            ..Self::paper()
        }
    }

    /// Small double-chain configuration for tests: 17 joints, C=8 split
    /// evenly, 2 heads, one block.
    pub fn tiny_test() -> Self {
        Self {
            joints: 17,
            layers: 1,
            channels: 8,
            local_channels: 4,
            global_channels: 4,
            heads: 2,
            mlp_expansion: 2,
            fim_reduction: 2,
            lcm_expansion: 2,
            frames: 1,
            seq_channels: 16,
            dropout: 0.0,
            variant: ModelVariant::DoubleChain,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.joints == 0 {
            return fail("joints must be >= 1".into());
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.channels == 0 || self.heads == 0 {
            return fail("channels and heads must be >= 1".into());
        }
        if self.frames % 2 == 0 {
            return fail(format!("frames must be odd, got {}", self.frames));
        }
        if self.frames > 1 && self.seq_channels == 0 {
            return fail("seq_channels must be >= 1 for sequence input".into());
        }
        if self.mlp_expansion == 0 || self.lcm_expansion == 0 {
            return fail("expansions must be >= 1".into());
        }
        if self.fim_reduction == 0 || self.channels % self.fim_reduction != 0 {
            return fail(format!(
                "fim_reduction {} must divide channels {}",
                self.fim_reduction, self.channels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.variant {
            ModelVariant::DoubleChain => {
                if self.local_channels + self.global_channels != self.channels {
                    return fail(format!(
                        "chain widths {} + {} != channels {}",
                        self.local_channels, self.global_channels, self.channels
                    ));
                }
                if self.local_channels % self.heads != 0 || self.global_channels % self.heads != 0
                {
                    return fail(format!(
                        "heads {} must divide both chain widths {} and {}",
                        self.heads, self.local_channels, self.global_channels
                    ));
                }
            }
            ModelVariant::GcmOnly => {
                if self.channels % self.heads != 0 {
                    return fail(format!(
                        "heads {} must divide channels {}",
                        self.heads, self.channels
                    ));
                }
            }
            ModelVariant::LcmOnly => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A configured model: topology, adjacency constants, learnable parameters
/// and batch-norm running state.
///
/// Parameters are immutable during inference; any number of workers may run
/// [`DcGct::forward_eval`] concurrently on a shared reference with private
/// tapes. Training mutates parameters and running stats and is
/// single-writer.
#[derive(Clone, Debug)]
pub struct DcGct<E: Element> {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub adjacency: AdjacencySet,
    pub params: ModelParams<Tensor<E>>,
    pub state: ModelState<E>,
}

impl<E: Element> DcGct<E> {
    pub fn init(
        config: ModelConfig,
        topology: SkeletonTopology,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.joints != topology.joint_count() {
            return Err(ModelError::JointCountMismatch {
                model: config.joints,
                topology: topology.joint_count(),
            });
        }
        let adjacency = decompose_adjacency(&topology)?;
        let params = ModelParams::init(&config, seed)?;
        let state = ModelState::init(&config);
        Ok(Self {
            config,
            topology,
            adjacency,
            params,
            state,
        })
    }

    /// Rebuilds a model around loaded parameters and state.
    pub fn from_parts(
        config: ModelConfig,
        topology: SkeletonTopology,
        params: ModelParams<Tensor<E>>,
        state: ModelState<E>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.joints != topology.joint_count() {
            return Err(ModelError::JointCountMismatch {
                model: config.joints,
                topology: topology.joint_count(),
            });
        }
        let adjacency = decompose_adjacency(&topology)?;
        Ok(Self {
            config,
            topology,
            adjacency,
            params,
            state,
        })
    }

    /// Train-mode forward: records gradients and updates running batch
    /// statistics. Returns the prediction plus the parameter binding used
    /// to read gradients back after `backward`.
    #[allow(clippy::type_complexity)]
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<E>,
        input: &Tensor<E>,
    ) -> Result<(Value, ModelParams<Value>), ModelError> {
        forward_pass(
            tape,
            &self.config,
            &self.params,
            &self.adjacency,
            BnForward::Train(&mut self.state),
            input,
        )
    }

    /// Eval-mode forward using running batch statistics.
    pub fn forward_eval(&self, tape: &mut Tape<E>, input: &Tensor<E>) -> Result<Value, ModelError> {
        let (out, _) = forward_pass(
            tape,
            &self.config,
            &self.params,
            &self.adjacency,
            BnForward::Eval(&self.state),
            input,
        )?;
        Ok(out)
    }

    /// Convenience eval on a fresh non-recording tape.
    pub fn predict(&self, input: &Tensor<E>) -> Result<Tensor<E>, ModelError> {
        let mut tape = Tape::no_grad();
        let out = self.forward_eval(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }
}
