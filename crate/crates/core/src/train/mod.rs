//! Training: weighted pose loss, learning-rate schedule, adaptive-moment
//! optimizer, epoch loop with paired flip augmentation, and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, LoadedCheckpoint};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::metrics::{self, MetricError};
use crate::model::{DcGct, ModelError, ModelParams};
use crate::skeleton::flip_pose_in_place;
use crate::tensor::{Element, Tape, Tensor, TensorError, Value};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    #[error("dataset arity {data} does not match model frames {model}")]
    ArityMismatch { model: usize, data: usize },
    #[error("dataset has {data} joints, model has {model}")]
    JointMismatch { model: usize, data: usize },
    #[error("joint_weights has {got} entries, model has {expected} joints")]
    WeightCount { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: aborting")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("gradient missing for parameter '{0}'")]
    MissingGrad(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub per_epoch_decay: f64,
    pub five_epoch_decay: f64,
    /// Per-joint loss weights; `None` means all ones.
    pub joint_weights: Option<Vec<f64>>,
    pub flip_augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 512,
            lr0: 5e-4,
            per_epoch_decay: 0.95,
            five_epoch_decay: 0.5,
            joint_weights: None,
            flip_augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reference defaults: lr0 is 5e-4 for single-frame input and 1e-3 for
    /// video sequences.
    pub fn default_for_frames(frames: usize) -> Self {
        Self {
            lr0: if frames > 1 { 1e-3 } else { 5e-4 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr0 > 0.0) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, d) in [
            ("per_epoch_decay", self.per_epoch_decay),
            ("five_epoch_decay", self.five_epoch_decay),
        ] {
            if !(d > 0.0 && d <= 1.0) {
                return fail(format!("{name} must be in (0, 1], got {d}"));
            }
        }
        if let Some(w) = &self.joint_weights {
            if w.iter().any(|&v| !(v > 0.0)) {
                return fail("joint_weights must all be positive".into());
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Compounded schedule: `lr0 * per_epoch^e * five_epoch^floor(e / 5)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0
        * cfg.per_epoch_decay.powi(epoch as i32)
        * cfg.five_epoch_decay.powi((epoch / 5) as i32)
}

/// Mean over the batch of the per-joint weighted Euclidean error:
/// `(1/B) sum_b (1/N) sum_i theta_i * ||Y_bi - Yhat_bi||`.
pub fn weighted_pose_loss<E: Element>(
    tape: &mut Tape<E>,
    pred: Value,
    target: Value,
    theta: &Tensor<E>,
) -> Result<Value, TrainError> {
    let shape = tape.value(pred).shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(TrainError::InvalidConfig(format!(
            "loss expects [B, N, 3] predictions, got {shape:?}"
        )));
    }
    if theta.shape() != [shape[1]] {
        return Err(TrainError::WeightCount {
            expected: shape[1],
            got: theta.numel(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let norms = tape.norm_last(diff)?;
    let th = tape.constant(theta.clone());
    let weighted = tape.mul_broadcast(norms, th)?;
    let total = tape.sum_all(weighted)?;
    let scale = E::from_f64(1.0 / (shape[0] * shape[1]) as f64);
    Ok(tape.scale(total, scale)?)
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment optimizer state, aligned with the canonical parameter
/// traversal order.
#[derive(Clone, Debug)]
pub struct AdamState<E: Element> {
    pub m: Vec<Vec<E>>,
    pub v: Vec<Vec<E>>,
    pub step: u64,
}

impl<E: Element> AdamState<E> {
    pub fn new_for(params: &ModelParams<Tensor<E>>) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(vec![E::ZERO; t.numel()]));
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// One bias-corrected update. `grads` must align with the canonical
    /// traversal (see [`collect_grads`]).
    pub fn step(
        &mut self,
        params: &mut ModelParams<Tensor<E>>,
        grads: &[Vec<E>],
        lr: f64,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = E::from_f64(1.0 / (1.0 - BETA1.powi(t)));
        let bc2 = E::from_f64(1.0 / (1.0 - BETA2.powi(t)));
        let b1 = E::from_f64(BETA1);
        let b1c = E::from_f64(1.0 - BETA1);
        let b2 = E::from_f64(BETA2);
        let b2c = E::from_f64(1.0 - BETA2);
        let lr = E::from_f64(lr);
        let eps = E::from_f64(ADAM_EPS);
        let mut idx = 0usize;
        let mut status = Ok(());
        params.visit_mut(&mut |name, tensor| {
            if status.is_err() {
                return;
            }
            let Some(grad) = grads.get(idx) else {
                status = Err(TrainError::MissingGrad(name));
                return;
            };
            if grad.len() != tensor.numel() {
                status = Err(TrainError::MissingGrad(name));
                return;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + b1c * g;
                v[i] = b2 * v[i] + b2c * g * g;
                let mhat = m[i] * bc1;
                let vhat = v[i] * bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
        status
    }
}

/// Reads every parameter gradient off the tape in canonical order; a
/// parameter with no gradient is an error.
pub fn collect_grads<E: Element>(
    tape: &Tape<E>,
    binding: &ModelParams<Value>,
) -> Result<Vec<Vec<E>>, TrainError> {
    let mut out = Vec::new();
    let mut missing: Option<String> = None;
    binding.visit(&mut |name, v| {
        if missing.is_some() {
            return;
        }
        match tape.grad(*v) {
            Some(g) => out.push(g.to_vec()),
            None => missing = Some(name),
        }
    });
    match missing {
        Some(name) => Err(TrainError::MissingGrad(name)),
        None => Ok(out),
    }
}

/// One epoch record of the line-delimited training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mpjpe_mm: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mpjpe: Option<f64>,
}

/// Where the loop writes its artifacts.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    /// Line-delimited JSON epoch records.
    pub log: Option<&'a mut dyn Write>,
    /// Best-by-validation checkpoint (final checkpoint when no validation
    /// set is given).
    pub checkpoint_path: Option<&'a Path>,
}

fn check_dataset<E: Element>(model: &DcGct<E>, ds: &Dataset) -> Result<(), TrainError> {
    if ds.frames != model.config.frames {
        return Err(TrainError::ArityMismatch {
            model: model.config.frames,
            data: ds.frames,
        });
    }
    if ds.joints != model.config.joints {
        return Err(TrainError::JointMismatch {
            model: model.config.joints,
            data: ds.joints,
        });
    }
    Ok(())
}

/// Batched eval-mode MPJPE of the model over a dataset, in millimeters.
pub fn eval_mpjpe<E: Element>(model: &DcGct<E>, ds: &Dataset) -> Result<f64, TrainError> {
    check_dataset(model, ds)?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let preds = predict_all(model, ds)?;
    Ok(metrics::mpjpe(&preds, &ds.targets_f64(), ds.joints)?)
}

/// Eval-mode predictions for every sample, flat `[B * N * 3]` f64.
pub fn predict_all<E: Element>(model: &DcGct<E>, ds: &Dataset) -> Result<Vec<f64>, TrainError> {
    check_dataset(model, ds)?;
    let mut out = Vec::with_capacity(ds.len() * ds.joints * 3);
    let chunk = 256usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for batch in indices.chunks(chunk) {
        let (input, _) = ds.batch::<E>(batch);
        let pred = model.predict(&input)?;
        out.extend(pred.data().iter().map(|v| v.to_f64()));
    }
    Ok(out)
}

/// [`predict_all`] over shared parameters with up to `threads` workers.
/// Shards are contiguous and results land at fixed offsets, so the output
/// is identical to the single-threaded path.
pub fn predict_all_threaded<E: Element>(
    model: &DcGct<E>,
    ds: &Dataset,
    threads: usize,
) -> Result<Vec<f64>, TrainError> {
    let threads = threads.max(1).min(ds.len().max(1));
    if threads == 1 {
        return predict_all(model, ds);
    }
    check_dataset(model, ds)?;
    let span = ds.joints * 3;
    let mut out = vec![0.0f64; ds.len() * span];
    let shard = ds.len().div_ceil(threads);
    let mut slots: Vec<&mut [f64]> = out.chunks_mut(shard * span).collect();
    let mut status: Vec<Result<(), TrainError>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (t, slot) in slots.iter_mut().enumerate() {
            let start = t * shard;
            let end = (start + shard).min(ds.len());
            handles.push(scope.spawn(move || -> Result<(), TrainError> {
                let indices: Vec<usize> = (start..end).collect();
                for (k, batch) in indices.chunks(64).enumerate() {
                    let (input, _) = ds.batch::<E>(batch);
                    let pred = model.predict(&input)?;
                    let off = k * 64 * span;
                    for (i, v) in pred.data().iter().enumerate() {
                        slot[off + i] = v.to_f64();
                    }
                }
                Ok(())
            }));
        }
        for h in handles {
            status.push(h.join().expect("prediction worker panicked"));
        }
    });
    for s in status {
        s?;
    }
    Ok(out)
}

fn assemble_batch<E: Element>(
    ds: &Dataset,
    model: &DcGct<E>,
    indices: &[usize],
    flips: &[bool],
) -> (Tensor<E>, Tensor<E>) {
    let (n, frames) = (ds.joints, ds.frames);
    let in_span = frames * n * 2;
    let tgt_span = n * 3;
    let b = indices.len();
    let mut input = Vec::with_capacity(b * in_span);
    let mut target = Vec::with_capacity(b * tgt_span);
    for (&i, &flip) in indices.iter().zip(flips) {
        let mut in2d: Vec<E> = ds.samples[i].input2d.iter().map(|&v| E::from_f64(v)).collect();
        let mut t3d: Vec<E> = ds.samples[i]
            .target3d_mm
            .iter()
            .map(|&v| E::from_f64(v))
            .collect();
        if flip {
            // Paired flip: the 2D input and the 3D target flip together.
            flip_pose_in_place(&mut in2d, 2, &model.topology);
            flip_pose_in_place(&mut t3d, 3, &model.topology);
        }
        input.extend(in2d);
        target.extend(t3d);
    }
    let input_shape: Vec<usize> = if frames == 1 {
        vec![b, n, 2]
    } else {
        vec![b, frames, n, 2]
    };
    (
        Tensor::new(&input_shape, input),
        Tensor::new(&[b, n, 3], target),
    )
}

/// Full training loop: seeded shuffling, optional paired flip augmentation,
/// forward/loss/backward/update per batch, per-epoch validation MPJPE,
/// best-checkpoint persistence, line-delimited log records.
pub fn train<E: Element>(
    model: &mut DcGct<E>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    outputs: &mut TrainOutputs<'_>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_dataset(model, train_set)?;
    if let Some(v) = val_set {
        check_dataset(model, v)?;
    }
    let n = model.config.joints;
    let theta: Tensor<E> = match &cfg.joint_weights {
        Some(w) => {
            if w.len() != n {
                return Err(TrainError::WeightCount {
                    expected: n,
                    got: w.len(),
                });
            }
            Tensor::from_f64(&[n], w)
        }
        None => Tensor::filled(&[n], E::ONE),
    };

    let mut adam = AdamState::new_for(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut best: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let flips: Vec<bool> = chunk
                .iter()
                .map(|_| cfg.flip_augment && rng.random_bool(0.5))
                .collect();
            let (input, target) = assemble_batch(train_set, model, chunk, &flips);
            let mut tape = Tape::new();
            let (pred, binding) = model.forward_train(&mut tape, &input)?;
            let target_v = tape.constant(target);
            let loss = weighted_pose_loss(&mut tape, pred, target_v, &theta)?;
            let loss_value = tape.value(loss).item().to_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &binding)?;
            adam.step(&mut model.params, &grads, lr)?;
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        let val_mpjpe = match val_set {
            Some(v) => Some(eval_mpjpe(model, v)?),
            None => None,
        };
        if let (Some(path), Some(val)) = (outputs.checkpoint_path, val_mpjpe) {
            if best.is_none_or(|b| val < b) {
                best = Some(val);
                report.best_epoch = Some(epoch);
                save_checkpoint(model, Some(&adam), path)?;
            }
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_mpjpe_mm: val_mpjpe,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(log) = outputs.log.as_deref_mut() {
            serde_json::to_writer(&mut *log, &record)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            log.write_all(b"\n")?;
        }
        report.epochs.push(record);
    }
    report.best_val_mpjpe = best;
    if let Some(path) = outputs.checkpoint_path {
        // With no validation set the final state is the checkpoint.
        if val_set.is_none() {
            save_checkpoint(model, Some(&adam), path)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthOptions};
    use crate::model::ModelConfig;
    use crate::skeleton::SkeletonTopology;

    #[test]
    fn loss_basics() {
        let mut tape = Tape::<f64>::new();
        let pred = tape.constant(Tensor::zeros(&[1, 2, 3]));
        let mut off = Tensor::<f64>::zeros(&[1, 2, 3]);
        off.data_mut()[0] = 3.0;
        off.data_mut()[3] = 3.0;
        let target = tape.constant(off);
        let theta = Tensor::filled(&[2], 1.0);
        let loss = weighted_pose_loss(&mut tape, pred, target, &theta).unwrap();
        assert!((tape.value(loss).item() - 3.0).abs() < 1e-12);

        // pred == target -> 0
        let a = tape.constant(Tensor::filled(&[1, 2, 3], 1.5));
        let b = tape.constant(Tensor::filled(&[1, 2, 3], 1.5));
        let zero = weighted_pose_loss(&mut tape, a, b, &theta).unwrap();
        assert_eq!(tape.value(zero).item(), 0.0);

        // Doubling theta doubles the loss.
        let theta2 = Tensor::filled(&[2], 2.0);
        let doubled = weighted_pose_loss(&mut tape, pred, target, &theta2).unwrap();
        assert!((tape.value(doubled).item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg), 5e-4);
        assert!((lr_at_epoch(1, &cfg) - 4.75e-4).abs() < 1e-12);
        let e5 = 5e-4 * 0.95f64.powi(5) * 0.5;
        assert!((lr_at_epoch(5, &cfg) - e5).abs() < 1e-12);
        assert!((e5 - 1.934e-4).abs() < 1e-6);
        // Monotone non-increasing.
        let mut last = f64::INFINITY;
        for e in 0..40 {
            let lr = lr_at_epoch(e, &cfg);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn adam_unit_step() {
        let cfg = ModelConfig::tiny_test();
        let params = ModelParams::<Tensor<f64>>::init(&cfg, 0).unwrap();
        // Single-scalar sanity: p = 1, grad = 1, lr = 0.1 -> ~0.9.
        let mut single = params.clone();
        let mut grads: Vec<Vec<f64>> = Vec::new();
        single.visit_mut(&mut |_, t| {
            for v in t.data_mut().iter_mut() {
                *v = 1.0;
            }
        });
        single.visit(&mut |_, t| grads.push(vec![1.0; t.numel()]));
        let mut adam = AdamState::new_for(&single);
        adam.step(&mut single, &grads, 0.1).unwrap();
        single.visit(&mut |_, t| {
            for &v in t.data() {
                assert!((v - 0.9).abs() < 1e-7, "got {v}");
            }
        });
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let cfg = ModelConfig::tiny_test();
        let mut params = ModelParams::<Tensor<f64>>::init(&cfg, 5).unwrap();
        let reference = params.clone();
        let mut grads = Vec::new();
        params.visit(&mut |_, t| grads.push(vec![0.0; t.numel()]));
        let mut adam = AdamState::new_for(&params);
        adam.step(&mut params, &grads, 0.1).unwrap();
        for ((_, a), (_, b)) in params.flatten().into_iter().zip(reference.flatten()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn adam_descends_convex_quadratic() {
        // f(p) = ||p||^2 / 2 on a single small tensor.
        let mut params = ModelParams::<Tensor<f64>>::init(&ModelConfig::tiny_test(), 2).unwrap();
        let mut adam = AdamState::new_for(&params);
        let loss_of = |p: &ModelParams<Tensor<f64>>| {
            let mut s = 0.0;
            p.visit(&mut |_, t| s += t.data().iter().map(|v| v * v).sum::<f64>());
            s / 2.0
        };
        let before = loss_of(&params);
        for _ in 0..5 {
            let mut grads = Vec::new();
            params.visit(&mut |_, t| grads.push(t.data().to_vec()));
            adam.step(&mut params, &grads, 1e-3).unwrap();
        }
        assert!(loss_of(&params) < before);
    }

    #[test]
    fn empty_dataset_rejected() {
        let topo = SkeletonTopology::h36m17();
        let mut model = DcGct::<f32>::init(ModelConfig::tiny_test(), topo, 1).unwrap();
        let ds = Dataset {
            samples: vec![],
            joints: 17,
            frames: 1,
        };
        let mut out = TrainOutputs::default();
        assert!(matches!(
            train(&mut model, &ds, None, &TrainConfig::default(), &mut out),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn fixed_seed_reproduces_epoch_zero_loss() {
        let topo = SkeletonTopology::h36m17();
        let ds = synth_generate(
            &topo,
            &SynthOptions {
                count: 12,
                frames: 1,
                noise_mm: 0.0,
                seed: 3,
            },
        );
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            seed: 17,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model =
                DcGct::<f32>::init(ModelConfig::tiny_test(), SkeletonTopology::h36m17(), 9)
                    .unwrap();
            let mut out = TrainOutputs::default();
            train(&mut model, &ds, None, &cfg, &mut out)
                .unwrap()
                .epochs[0]
                .train_loss
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn threaded_prediction_matches_serial() {
        let topo = SkeletonTopology::h36m17();
        let ds = synth_generate(
            &topo,
            &SynthOptions {
                count: 10,
                frames: 1,
                noise_mm: 1.0,
                seed: 31,
            },
        );
        let mut model =
            DcGct::<f32>::init(ModelConfig::tiny_test(), SkeletonTopology::h36m17(), 3).unwrap();
        let (warm, _) = ds.batch::<f32>(&[0, 1, 2, 3]);
        let mut tape = Tape::new();
        model.forward_train(&mut tape, &warm).unwrap();
        let serial = predict_all(&model, &ds).unwrap();
        for threads in [2, 3, 16] {
            let parallel = predict_all_threaded(&model, &ds, threads).unwrap();
            assert_eq!(serial, parallel, "threads={threads}");
        }
    }

    #[test]
    fn flip_consistency_with_identity_lift_stub() {
        // Stub predictor: lift (x, y) to (x, y, 0) scaled to millimeters.
        // It is flip-equivariant, so flipping input and target together
        // must leave the loss unchanged (uniform joint weights).
        let topo = SkeletonTopology::h36m17();
        let ds = synth_generate(
            &topo,
            &SynthOptions {
                count: 6,
                frames: 1,
                noise_mm: 0.0,
                seed: 21,
            },
        );
        let theta = Tensor::<f64>::filled(&[17], 1.0);
        let stub = |input2d: &[f64]| -> Vec<f64> {
            input2d
                .chunks(2)
                .flat_map(|p| [p[0] * 1000.0, p[1] * 1000.0, 0.0])
                .collect()
        };
        for s in &ds.samples {
            let mut tape = Tape::<f64>::new();
            let pred = tape.constant(Tensor::from_f64(&[1, 17, 3], &stub(&s.input2d)));
            let target = tape.constant(Tensor::from_f64(&[1, 17, 3], &s.target3d_mm));
            let plain = weighted_pose_loss(&mut tape, pred, target, &theta).unwrap();

            let mut in_f = s.input2d.clone();
            let mut tgt_f = s.target3d_mm.clone();
            flip_pose_in_place(&mut in_f, 2, &topo);
            flip_pose_in_place(&mut tgt_f, 3, &topo);
            let pred_f = tape.constant(Tensor::from_f64(&[1, 17, 3], &stub(&in_f)));
            let target_f = tape.constant(Tensor::from_f64(&[1, 17, 3], &tgt_f));
            let flipped = weighted_pose_loss(&mut tape, pred_f, target_f, &theta).unwrap();
            let (a, b) = (tape.value(plain).item(), tape.value(flipped).item());
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
