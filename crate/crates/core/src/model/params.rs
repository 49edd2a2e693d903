//! Learnable parameters of the double-chain network.
//!
//! Every struct here is generic over its payload `P`: `ModelParams<Tensor<E>>`
//! stores the weights, `ModelParams<Value>` is the same tree bound onto a
//! tape for one forward pass. `map` produces the binding, `visit`/`visit_mut`
//! enumerate leaves in one canonical order shared by the optimizer, the
//! checkpoint format and the parameter count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{ModelConfig, ModelError, ModelVariant};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug)]
pub struct Affine<P> {
    pub gain: P,
    pub bias: P,
}

/// One GCN stage: four category filter matrices plus the batch-norm affine
/// that follows the aggregation.
#[derive(Clone, Debug)]
pub struct GcnStage<P> {
    pub weights: [P; 4],
    pub norm: Affine<P>,
}

#[derive(Clone, Debug)]
pub struct LcmStack<P> {
    pub gcn: GcnStage<P>,
    pub conv: Linear<P>,
}

#[derive(Clone, Debug)]
pub struct Lcm<P> {
    pub entry_norm: Affine<P>,
    pub stacks: [LcmStack<P>; 2],
}

#[derive(Clone, Debug)]
pub struct Gcm<P> {
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub output: Linear<P>,
}

#[derive(Clone, Debug)]
pub struct Fim<P> {
    pub reduce: Linear<P>,
    pub expand: Linear<P>,
}

#[derive(Clone, Debug)]
pub struct Mlp<P> {
    pub norm: Affine<P>,
    pub expand: Linear<P>,
    pub project: Linear<P>,
}

#[derive(Clone, Debug)]
pub enum BlockParams<P> {
    Double {
        l2g_lcm: Lcm<P>,
        l2g_gcm: Gcm<P>,
        g2l_gcm: Gcm<P>,
        g2l_lcm: Lcm<P>,
        fim: Fim<P>,
        mlp: Mlp<P>,
    },
    GcmOnly {
        gcm: Gcm<P>,
        mlp: Mlp<P>,
    },
    LcmOnly {
        lcm: Lcm<P>,
        mlp: Mlp<P>,
    },
}

#[derive(Clone, Debug)]
pub enum Embedding<P> {
    /// Single-frame joint embedding: 2 -> C, plus the position table.
    Joint { proj: Linear<P>, pos: P },
    /// Video-sequence embedding guided by the mid frame: the flattened
    /// per-joint sequence (2T -> C_mu), the mid-frame joint embedding
    /// (2 -> C), and the merge projection (C_mu + C -> C).
    Sequence {
        seq_proj: Linear<P>,
        mid_proj: Linear<P>,
        merge: Linear<P>,
        pos: P,
    },
}

#[derive(Clone, Debug)]
pub struct Head<P> {
    pub norm: Affine<P>,
    pub proj: Linear<P>,
}

#[derive(Clone, Debug)]
pub struct ModelParams<P> {
    pub embedding: Embedding<P>,
    pub blocks: Vec<BlockParams<P>>,
    pub head: Head<P>,
}

// ---- canonical traversals ----
//
// `map`, `visit` and `visit_mut` of every struct list fields in the same
// order; that order is the contract.

impl<P> Linear<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{name}.weight"), &self.weight);
        f(format!("{name}.bias"), &self.bias);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{name}.weight"), &mut self.weight);
        f(format!("{name}.bias"), &mut self.bias);
    }
}

impl<P> Affine<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Affine<Q> {
        Affine {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{name}.gain"), &self.gain);
        f(format!("{name}.bias"), &self.bias);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{name}.gain"), &mut self.gain);
        f(format!("{name}.bias"), &mut self.bias);
    }
}

impl<P> GcnStage<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GcnStage<Q> {
        GcnStage {
            weights: [
                f(&self.weights[0]),
                f(&self.weights[1]),
                f(&self.weights[2]),
                f(&self.weights[3]),
            ],
            norm: self.norm.map(f),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        for (k, w) in self.weights.iter().enumerate() {
            f(format!("{name}.w{k}"), w);
        }
        self.norm.visit(&format!("{name}.norm"), f);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        for (k, w) in self.weights.iter_mut().enumerate() {
            f(format!("{name}.w{k}"), w);
        }
        self.norm.visit_mut(&format!("{name}.norm"), f);
    }
}

impl<P> LcmStack<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LcmStack<Q> {
        LcmStack {
            gcn: self.gcn.map(f),
            conv: self.conv.map(f),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        self.gcn.visit(&format!("{name}.gcn"), f);
        self.conv.visit(&format!("{name}.conv"), f);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        self.gcn.visit_mut(&format!("{name}.gcn"), f);
        self.conv.visit_mut(&format!("{name}.conv"), f);
    }
}

impl<P> Lcm<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Lcm<Q> {
        Lcm {
            entry_norm: self.entry_norm.map(f),
            stacks: [self.stacks[0].map(f), self.stacks[1].map(f)],
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        self.entry_norm.visit(&format!("{name}.entry_norm"), f);
        for (i, s) in self.stacks.iter().enumerate() {
            s.visit(&format!("{name}.stack{i}"), f);
        }
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        self.entry_norm.visit_mut(&format!("{name}.entry_norm"), f);
        for (i, s) in self.stacks.iter_mut().enumerate() {
            s.visit_mut(&format!("{name}.stack{i}"), f);
        }
    }
}

impl<P> Gcm<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Gcm<Q> {
        Gcm {
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            output: self.output.map(f),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        self.query.visit(&format!("{name}.query"), f);
        self.key.visit(&format!("{name}.key"), f);
        self.value.visit(&format!("{name}.value"), f);
        self.output.visit(&format!("{name}.output"), f);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        self.query.visit_mut(&format!("{name}.query"), f);
        self.key.visit_mut(&format!("{name}.key"), f);
        self.value.visit_mut(&format!("{name}.value"), f);
        self.output.visit_mut(&format!("{name}.output"), f);
    }
}

impl<P> Fim<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Fim<Q> {
        Fim {
            reduce: self.reduce.map(f),
            expand: self.expand.map(f),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        self.reduce.visit(&format!("{name}.reduce"), f);
        self.expand.visit(&format!("{name}.expand"), f);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        self.reduce.visit_mut(&format!("{name}.reduce"), f);
        self.expand.visit_mut(&format!("{name}.expand"), f);
    }
}

impl<P> Mlp<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Mlp<Q> {
        Mlp {
            norm: self.norm.map(f),
            expand: self.expand.map(f),
            project: self.project.map(f),
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        self.norm.visit(&format!("{name}.norm"), f);
        self.expand.visit(&format!("{name}.expand"), f);
        self.project.visit(&format!("{name}.project"), f);
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        self.norm.visit_mut(&format!("{name}.norm"), f);
        self.expand.visit_mut(&format!("{name}.expand"), f);
        self.project.visit_mut(&format!("{name}.project"), f);
    }
}

impl<P> BlockParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BlockParams<Q> {
        match self {
            BlockParams::Double {
                l2g_lcm,
                l2g_gcm,
                g2l_gcm,
                g2l_lcm,
                fim,
                mlp,
            } => BlockParams::Double {
                l2g_lcm: l2g_lcm.map(f),
                l2g_gcm: l2g_gcm.map(f),
                g2l_gcm: g2l_gcm.map(f),
                g2l_lcm: g2l_lcm.map(f),
                fim: fim.map(f),
                mlp: mlp.map(f),
            },
            BlockParams::GcmOnly { gcm, mlp } => BlockParams::GcmOnly {
                gcm: gcm.map(f),
                mlp: mlp.map(f),
            },
            BlockParams::LcmOnly { lcm, mlp } => BlockParams::LcmOnly {
                lcm: lcm.map(f),
                mlp: mlp.map(f),
            },
        }
    }
    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a P)) {
        match self {
            BlockParams::Double {
                l2g_lcm,
                l2g_gcm,
                g2l_gcm,
                g2l_lcm,
                fim,
                mlp,
            } => {
                l2g_lcm.visit(&format!("{name}.l2g_lcm"), f);
                l2g_gcm.visit(&format!("{name}.l2g_gcm"), f);
                g2l_gcm.visit(&format!("{name}.g2l_gcm"), f);
                g2l_lcm.visit(&format!("{name}.g2l_lcm"), f);
                fim.visit(&format!("{name}.fim"), f);
                mlp.visit(&format!("{name}.mlp"), f);
            }
            BlockParams::GcmOnly { gcm, mlp } => {
                gcm.visit(&format!("{name}.gcm"), f);
                mlp.visit(&format!("{name}.mlp"), f);
            }
            BlockParams::LcmOnly { lcm, mlp } => {
                lcm.visit(&format!("{name}.lcm"), f);
                mlp.visit(&format!("{name}.mlp"), f);
            }
        }
    }
    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut P)) {
        match self {
            BlockParams::Double {
                l2g_lcm,
                l2g_gcm,
                g2l_gcm,
                g2l_lcm,
                fim,
                mlp,
            } => {
                l2g_lcm.visit_mut(&format!("{name}.l2g_lcm"), f);
                l2g_gcm.visit_mut(&format!("{name}.l2g_gcm"), f);
                g2l_gcm.visit_mut(&format!("{name}.g2l_gcm"), f);
                g2l_lcm.visit_mut(&format!("{name}.g2l_lcm"), f);
                fim.visit_mut(&format!("{name}.fim"), f);
                mlp.visit_mut(&format!("{name}.mlp"), f);
            }
            BlockParams::GcmOnly { gcm, mlp } => {
                gcm.visit_mut(&format!("{name}.gcm"), f);
                mlp.visit_mut(&format!("{name}.mlp"), f);
            }
            BlockParams::LcmOnly { lcm, mlp } => {
                lcm.visit_mut(&format!("{name}.lcm"), f);
                mlp.visit_mut(&format!("{name}.mlp"), f);
            }
        }
    }
}

impl<P> Embedding<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Embedding<Q> {
        match self {
            Embedding::Joint { proj, pos } => Embedding::Joint {
                proj: proj.map(f),
                pos: f(pos),
            },
            Embedding::Sequence {
                seq_proj,
                mid_proj,
                merge,
                pos,
            } => Embedding::Sequence {
                seq_proj: seq_proj.map(f),
                mid_proj: mid_proj.map(f),
                merge: merge.map(f),
                pos: f(pos),
            },
        }
    }
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        match self {
            Embedding::Joint { proj, pos } => {
                proj.visit("embed.proj", f);
                f("embed.pos".into(), pos);
            }
            Embedding::Sequence {
                seq_proj,
                mid_proj,
                merge,
                pos,
            } => {
                seq_proj.visit("embed.seq_proj", f);
                mid_proj.visit("embed.mid_proj", f);
                merge.visit("embed.merge", f);
                f("embed.pos".into(), pos);
            }
        }
    }
    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        match self {
            Embedding::Joint { proj, pos } => {
                proj.visit_mut("embed.proj", f);
                f("embed.pos".into(), pos);
            }
            Embedding::Sequence {
                seq_proj,
                mid_proj,
                merge,
                pos,
            } => {
                seq_proj.visit_mut("embed.seq_proj", f);
                mid_proj.visit_mut("embed.mid_proj", f);
                merge.visit_mut("embed.merge", f);
                f("embed.pos".into(), pos);
            }
        }
    }
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            embedding: self.embedding.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            head: Head {
                norm: self.head.norm.map(f),
                proj: self.head.proj.map(f),
            },
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        self.embedding.visit(f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{i}"), f);
        }
        self.head.norm.visit("head.norm", f);
        self.head.proj.visit("head.proj", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        self.embedding.visit_mut(f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{i}"), f);
        }
        self.head.norm.visit_mut("head.norm", f);
        self.head.proj.visit_mut("head.proj", f);
    }

    pub fn flatten(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| out.push((name, p)));
        out
    }
}

impl<E: Element> ModelParams<Tensor<E>> {
    /// Number of learnable scalars actually stored.
    pub fn scalar_count(&self) -> u64 {
        let mut total = 0u64;
        self.visit(&mut |_, t| total += t.numel() as u64);
        total
    }
}

// ---- initialization ----

struct Init<'r, E: Element> {
    rng: &'r mut ChaCha8Rng,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Init<'_, E> {
    /// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))
    fn projection(&mut self, fan_in: usize, fan_out: usize) -> Tensor<E> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid range");
        let data: Vec<E> = (0..fan_in * fan_out)
            .map(|_| E::from_f64(dist.sample(self.rng)))
            .collect();
        Tensor::new(&[fan_in, fan_out], data)
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Linear<Tensor<E>> {
        Linear {
            weight: self.projection(fan_in, fan_out),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    fn affine(&mut self, c: usize) -> Affine<Tensor<E>> {
        Affine {
            gain: Tensor::filled(&[c], E::ONE),
            bias: Tensor::zeros(&[c]),
        }
    }

    fn position(&mut self, joints: usize, channels: usize) -> Tensor<E> {
        let dist = Normal::new(0.0, 0.02).expect("valid normal");
        let data: Vec<E> = (0..joints * channels)
            .map(|_| E::from_f64(dist.sample(self.rng)))
            .collect();
        Tensor::new(&[joints, channels], data)
    }

    fn lcm(&mut self, c: usize, expansion: usize) -> Lcm<Tensor<E>> {
        let ec = c * expansion;
        let stack = |init: &mut Self| LcmStack {
            gcn: GcnStage {
                weights: [
                    init.projection(c, ec),
                    init.projection(c, ec),
                    init.projection(c, ec),
                    init.projection(c, ec),
                ],
                norm: init.affine(ec),
            },
            conv: init.linear(ec, c),
        };
        Lcm {
            entry_norm: self.affine(c),
            stacks: [stack(self), stack(self)],
        }
    }

    fn gcm(&mut self, c: usize) -> Gcm<Tensor<E>> {
        Gcm {
            query: self.linear(c, c),
            key: self.linear(c, c),
            value: self.linear(c, c),
            output: self.linear(c, c),
        }
    }

    fn mlp(&mut self, c: usize, expansion: usize) -> Mlp<Tensor<E>> {
        Mlp {
            norm: self.affine(c),
            expand: self.linear(c, c * expansion),
            project: self.linear(c * expansion, c),
        }
    }
}

impl<E: Element> ModelParams<Tensor<E>> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::<E> {
            rng: &mut rng,
            _marker: std::marker::PhantomData,
        };
        let (n, c) = (config.joints, config.channels);
        let embedding = if config.frames == 1 {
            Embedding::Joint {
                proj: init.linear(2, c),
                pos: init.position(n, c),
            }
        } else {
            Embedding::Sequence {
                seq_proj: init.linear(2 * config.frames, config.seq_channels),
                mid_proj: init.linear(2, c),
                merge: init.linear(config.seq_channels + c, c),
                pos: init.position(n, c),
            }
        };
        let blocks = (0..config.layers)
            .map(|_| match config.variant {
                ModelVariant::DoubleChain => BlockParams::Double {
                    l2g_lcm: init.lcm(config.local_channels, config.lcm_expansion),
                    l2g_gcm: init.gcm(config.local_channels),
                    g2l_gcm: init.gcm(config.global_channels),
                    g2l_lcm: init.lcm(config.global_channels, config.lcm_expansion),
                    fim: Fim {
                        reduce: init.linear(c, c / config.fim_reduction),
                        expand: init.linear(c / config.fim_reduction, c),
                    },
                    mlp: init.mlp(c, config.mlp_expansion),
                },
                ModelVariant::GcmOnly => BlockParams::GcmOnly {
                    gcm: init.gcm(c),
                    mlp: init.mlp(c, config.mlp_expansion),
                },
                ModelVariant::LcmOnly => BlockParams::LcmOnly {
                    lcm: init.lcm(c, config.lcm_expansion),
                    mlp: init.mlp(c, config.mlp_expansion),
                },
            })
            .collect();
        let head = Head {
            norm: init.affine(c),
            proj: init.linear(c, 3),
        };
        Ok(ModelParams {
            embedding,
            blocks,
            head,
        })
    }
}

/// Running batch-norm statistics for one normalization site.
#[derive(Clone, Debug)]
pub struct BnStats<E: Element> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
    pub batches: u64,
}

impl<E: Element> BnStats<E> {
    fn new(width: usize) -> Self {
        Self {
            mean: vec![E::ZERO; width],
            var: vec![E::ONE; width],
            batches: 0,
        }
    }

    /// First batch adopts the stats directly; later batches blend with
    /// momentum.
    pub fn update(&mut self, mean: &[E], var: &[E], momentum: f64) {
        if self.batches == 0 {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(var);
        } else {
            let m = E::from_f64(momentum);
            let keep = E::from_f64(1.0 - momentum);
            for (r, &b) in self.mean.iter_mut().zip(mean) {
                *r = *r * keep + b * m;
            }
            for (r, &b) in self.var.iter_mut().zip(var) {
                *r = *r * keep + b * m;
            }
        }
        self.batches += 1;
    }
}

/// Non-learnable model state: running statistics for every batch-norm site,
/// in forward-traversal order.
#[derive(Clone, Debug)]
pub struct ModelState<E: Element> {
    pub bn: Vec<BnStats<E>>,
    pub momentum: f64,
}

/// Channel widths of the batch-norm sites, in forward-traversal order.
pub fn bn_widths(config: &ModelConfig) -> Vec<usize> {
    let e = config.lcm_expansion;
    let per_block: Vec<usize> = match config.variant {
        ModelVariant::DoubleChain => vec![
            e * config.local_channels,
            e * config.local_channels,
            e * config.global_channels,
            e * config.global_channels,
        ],
        ModelVariant::GcmOnly => vec![],
        ModelVariant::LcmOnly => vec![e * config.channels, e * config.channels],
    };
    (0..config.layers).flat_map(|_| per_block.clone()).collect()
}

impl<E: Element> ModelState<E> {
    pub fn init(config: &ModelConfig) -> Self {
        Self {
            bn: bn_widths(config).into_iter().map(BnStats::new).collect(),
            momentum: 0.1,
        }
    }

    pub fn has_batch_stats(&self) -> bool {
        self.bn.iter().all(|s| s.batches > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visit_and_visit_mut_agree_on_order() {
        let config = ModelConfig::tiny_test();
        let mut params = ModelParams::<Tensor<f64>>::init(&config, 3).unwrap();
        let names_a: Vec<String> = params.flatten().into_iter().map(|(n, _)| n).collect();
        let mut names_b = Vec::new();
        params.visit_mut(&mut |n, _| names_b.push(n));
        assert_eq!(names_a, names_b);
        assert!(names_a.len() > 10);
        // Names are unique.
        let mut sorted = names_a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names_a.len());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let config = ModelConfig::tiny_test();
        let a = ModelParams::<Tensor<f32>>::init(&config, 9).unwrap();
        let b = ModelParams::<Tensor<f32>>::init(&config, 9).unwrap();
        for ((_, ta), (_, tb)) in a.flatten().into_iter().zip(b.flatten()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn position_table_shape() {
        let config = ModelConfig::paper();
        let params = ModelParams::<Tensor<f32>>::init(&config, 0).unwrap();
        match &params.embedding {
            Embedding::Joint { pos, .. } => assert_eq!(pos.shape(), &[17, 160]),
            _ => panic!("paper preset is single-frame"),
        }
    }

    #[test]
    fn bn_stats_adopt_then_blend() {
        let mut s = BnStats::<f64>::new(1);
        s.update(&[10.0], &[4.0], 0.1);
        assert_eq!(s.mean, vec![10.0]);
        assert_eq!(s.var, vec![4.0]);
        s.update(&[0.0], &[0.0], 0.1);
        assert!((s.mean[0] - 9.0).abs() < 1e-12);
        assert!((s.var[0] - 3.6).abs() < 1e-12);
        assert_eq!(s.batches, 2);
    }
}
