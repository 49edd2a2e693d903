//! Tape-recorded forward pass of the double-chain network.

use super::params::{Affine, BlockParams, Embedding, Fim, Gcm, Lcm, Linear, ModelParams, ModelState};
use super::{ModelConfig, ModelError};
use crate::skeleton::AdjacencySet;
use crate::tensor::{Element, Tape, Tensor, TensorError, Value};

const NORM_EPS: f64 = 1e-5;

/// Batch-norm behavior for one forward pass.
pub enum BnForward<'s, E: Element> {
    /// Normalize with batch statistics and fold them into the running state.
    Train(&'s mut ModelState<E>),
    /// Normalize with the stored running statistics.
    Eval(&'s ModelState<E>),
}

/// Walks the batch-norm sites in forward-traversal order.
pub enum BnCursor<'s, E: Element> {
    Train { state: &'s mut ModelState<E>, next: usize },
    Eval { state: &'s ModelState<E>, next: usize },
}

impl<E: Element> BnCursor<'_, E> {
    pub fn apply(
        &mut self,
        tape: &mut Tape<E>,
        x: Value,
        norm: &Affine<Value>,
    ) -> Result<Value, ModelError> {
        let eps = E::from_f64(NORM_EPS);
        match self {
            BnCursor::Train { state, next } => {
                let (y, mean, var) = tape.batch_norm_train(x, norm.gain, norm.bias, eps)?;
                let momentum = state.momentum;
                state.bn[*next].update(&mean, &var, momentum);
                *next += 1;
                Ok(y)
            }
            BnCursor::Eval { state, next } => {
                let stats = &state.bn[*next];
                if stats.batches == 0 {
                    return Err(ModelError::NoBatchStats);
                }
                let y = tape.batch_norm_eval(x, norm.gain, norm.bias, &stats.mean, &stats.var, eps)?;
                *next += 1;
                Ok(y)
            }
        }
    }
}

fn linear<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    p: &Linear<Value>,
) -> Result<Value, TensorError> {
    let y = tape.matmul(x, p.weight)?;
    tape.add_broadcast(y, p.bias)
}

fn layer_norm<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    p: &Affine<Value>,
) -> Result<Value, TensorError> {
    tape.layer_norm(x, p.gain, p.bias, E::from_f64(NORM_EPS))
}

/// Multi-head self-attention over the joints: every joint's feature is one
/// patch, scores `softmax(Q_i K_i^T / sqrt(C/h))` per head, heads
/// concatenated and projected.
pub fn gcm_forward<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    p: &Gcm<Value>,
    heads: usize,
) -> Result<Value, ModelError> {
    let c = tape.value(x).last_dim();
    if heads == 0 || c % heads != 0 {
        return Err(ModelError::InvalidConfig(format!(
            "heads {heads} must divide feature width {c}"
        )));
    }
    let head_dim = c / heads;
    let q = linear(tape, x, &p.query)?;
    let k = linear(tape, x, &p.key)?;
    let v = linear(tape, x, &p.value)?;
    let sizes = vec![head_dim; heads];
    let qs = tape.split_channels(q, &sizes)?;
    let ks = tape.split_channels(k, &sizes)?;
    let vs = tape.split_channels(v, &sizes)?;
    let scale = E::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let kt = tape.transpose_last2(ks[i])?;
        let scores = tape.matmul(qs[i], kt)?;
        let scaled = tape.scale(scores, scale)?;
        let attn = tape.softmax_rows(scaled)?;
        outs.push(tape.matmul(attn, vs[i])?);
    }
    let cat = tape.concat_channels(&outs)?;
    Ok(linear(tape, cat, &p.output)?)
}

/// Graph-convolutional local constraints: layer-norm at entry, then twice
/// [four-category GCN expanding the width, batch norm, GELU, 1x1 conv
/// projecting back].
pub fn lcm_forward<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    p: &Lcm<Value>,
    adjacency: &[Value; 4],
    bn: &mut BnCursor<'_, E>,
) -> Result<Value, ModelError> {
    let mut h = layer_norm(tape, x, &p.entry_norm)?;
    for stack in &p.stacks {
        let mut agg: Option<Value> = None;
        for (k, &adj) in adjacency.iter().enumerate() {
            let hw = tape.matmul(h, stack.gcn.weights[k])?;
            let prop = tape.matmul(adj, hw)?;
            agg = Some(match agg {
                None => prop,
                Some(acc) => tape.add(acc, prop)?,
            });
        }
        let normed = bn.apply(tape, agg.expect("four categories"), &stack.gcn.norm)?;
        let act = tape.gelu(normed)?;
        h = linear(tape, act, &stack.conv)?;
    }
    Ok(h)
}

/// Low-rank feature interaction: concat the chains, reduce C -> C/r,
/// expand back, split per chain.
pub fn fim_forward<E: Element>(
    tape: &mut Tape<E>,
    local: Value,
    global: Value,
    p: &Fim<Value>,
) -> Result<(Value, Value), ModelError> {
    let c1 = tape.value(local).last_dim();
    let c2 = tape.value(global).last_dim();
    let z = tape.concat_channels(&[local, global])?;
    let reduced = linear(tape, z, &p.reduce)?;
    let expanded = linear(tape, reduced, &p.expand)?;
    let parts = tape.split_channels(expanded, &[c1, c2])?;
    Ok((parts[0], parts[1]))
}

fn mlp_tail<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    p: &super::params::Mlp<Value>,
) -> Result<Value, ModelError> {
    let normed = layer_norm(tape, x, &p.norm)?;
    let expanded = linear(tape, normed, &p.expand)?;
    let act = tape.gelu(expanded)?;
    let projected = linear(tape, act, &p.project)?;
    Ok(tape.add(projected, x)?)
}

/// One block: split the channels, run both constraint chains with FIM
/// fusion at the transition, re-merge both stages, layer-norm + MLP with a
/// residual.
pub fn double_chain_block<E: Element>(
    tape: &mut Tape<E>,
    x: Value,
    block: &BlockParams<Value>,
    adjacency: &[Value; 4],
    bn: &mut BnCursor<'_, E>,
    config: &ModelConfig,
) -> Result<Value, ModelError> {
    match block {
        BlockParams::Double {
            l2g_lcm,
            l2g_gcm,
            g2l_gcm,
            g2l_lcm,
            fim,
            mlp,
        } => {
            let parts =
                tape.split_channels(x, &[config.local_channels, config.global_channels])?;
            let (x_l2g, x_g2l) = (parts[0], parts[1]);
            let l2g_local = lcm_forward(tape, x_l2g, l2g_lcm, adjacency, bn)?;
            let g2l_global = gcm_forward(tape, x_g2l, g2l_gcm, config.heads)?;
            let (f1, f2) = fim_forward(tape, l2g_local, g2l_global, fim)?;
            let l2g_fused = tape.add(l2g_local, f1)?;
            let g2l_fused = tape.add(g2l_global, f2)?;
            let l2g_global = gcm_forward(tape, l2g_fused, l2g_gcm, config.heads)?;
            let g2l_local = lcm_forward(tape, g2l_fused, g2l_lcm, adjacency, bn)?;
            let second_stage = tape.concat_channels(&[l2g_global, g2l_local])?;
            let first_stage = tape.concat_channels(&[l2g_local, g2l_global])?;
            let merged = tape.add(second_stage, first_stage)?;
            mlp_tail(tape, merged, mlp)
        }
        BlockParams::GcmOnly { gcm, mlp } => {
            let out = gcm_forward(tape, x, gcm, config.heads)?;
            mlp_tail(tape, out, mlp)
        }
        BlockParams::LcmOnly { lcm, mlp } => {
            let out = lcm_forward(tape, x, lcm, adjacency, bn)?;
            mlp_tail(tape, out, mlp)
        }
    }
}

fn validate_input<E: Element>(
    config: &ModelConfig,
    input: &Tensor<E>,
) -> Result<(), ModelError> {
    let s = input.shape();
    let ok = if config.frames == 1 {
        s.len() == 3 && s[1] == config.joints && s[2] == 2
    } else {
        s.len() == 4 && s[1] == config.frames && s[2] == config.joints && s[3] == 2
    };
    if !ok {
        let expected = if config.frames == 1 {
            format!("[B, {}, 2]", config.joints)
        } else {
            format!("[B, {}, {}, 2]", config.frames, config.joints)
        };
        return Err(ModelError::ArityMismatch {
            expected,
            got: s.to_vec(),
        });
    }
    Ok(())
}

/// Flattens `[B, T, N, 2]` to per-joint `[B, N, 2T]` plus the mid frame
/// `[B, N, 2]`.
fn sequence_views<E: Element>(input: &Tensor<E>, frames: usize, joints: usize) -> (Tensor<E>, Tensor<E>) {
    let b = input.shape()[0];
    let mid = (frames - 1) / 2;
    let mut seq = vec![E::ZERO; b * joints * 2 * frames];
    let mut mid_frame = vec![E::ZERO; b * joints * 2];
    let data = input.data();
    for ib in 0..b {
        for t in 0..frames {
            for n in 0..joints {
                for d in 0..2 {
                    let v = data[((ib * frames + t) * joints + n) * 2 + d];
                    seq[(ib * joints + n) * 2 * frames + t * 2 + d] = v;
                    if t == mid {
                        mid_frame[(ib * joints + n) * 2 + d] = v;
                    }
                }
            }
        }
    }
    (
        Tensor::new(&[b, joints, 2 * frames], seq),
        Tensor::new(&[b, joints, 2], mid_frame),
    )
}

/// Full forward pass: embedding (joint or sequence-guided), M blocks, final
/// layer-norm, per-joint 3D regression. Returns the output value and the
/// parameter binding for gradient extraction.
#[allow(clippy::type_complexity)]
pub fn forward_pass<E: Element>(
    tape: &mut Tape<E>,
    config: &ModelConfig,
    params: &ModelParams<Tensor<E>>,
    adjacency: &AdjacencySet,
    mode: BnForward<'_, E>,
    input: &Tensor<E>,
) -> Result<(Value, ModelParams<Value>), ModelError> {
    validate_input(config, input)?;
    if adjacency.joint_count != config.joints {
        return Err(ModelError::AdjacencyMismatch {
            adjacency: adjacency.joint_count,
            model: config.joints,
        });
    }
    let trainable = matches!(mode, BnForward::Train(_));
    let binding = params.map(&mut |t| tape.leaf(t.clone(), trainable));
    let adj_values = adjacency
        .normalized_tensors::<E>()
        .map(|t| tape.constant(t));
    let mut bn = match mode {
        BnForward::Train(state) => BnCursor::Train { state, next: 0 },
        BnForward::Eval(state) => BnCursor::Eval { state, next: 0 },
    };

    let mut x = match &binding.embedding {
        Embedding::Joint { proj, pos } => {
            let x2d = tape.constant(input.clone());
            let embedded = linear(tape, x2d, proj)?;
            tape.add_broadcast(embedded, *pos)?
        }
        Embedding::Sequence {
            seq_proj,
            mid_proj,
            merge,
            pos,
        } => {
            let (seq, mid) = sequence_views(input, config.frames, config.joints);
            let seq_v = tape.constant(seq);
            let mid_v = tape.constant(mid);
            let s = linear(tape, seq_v, seq_proj)?;
            let g = linear(tape, mid_v, mid_proj)?;
            let cat = tape.concat_channels(&[s, g])?;
            let merged = linear(tape, cat, merge)?;
            tape.add_broadcast(merged, *pos)?
        }
    };

    for block in &binding.blocks {
        x = double_chain_block(tape, x, block, &adj_values, &mut bn, config)?;
    }

    let normed = layer_norm(tape, x, &binding.head.norm)?;
    let out = linear(tape, normed, &binding.head.proj)?;
    Ok((out, binding))
}
