//! Analytic parameter and FLOP accounting, derived from the config alone.
//!
//! `count_params` matches the scalar count of a constructed
//! [`super::ModelParams`] exactly (property-tested). `count_flops` counts
//! floating-point operations of one forward pass at batch size 1, with
//! multiply and accumulate counted as two ops, over every projection, GCN
//! propagation and attention product.

use super::{ModelConfig, ModelVariant};

fn linear_params(fan_in: usize, fan_out: usize) -> u64 {
    (fan_in * fan_out + fan_out) as u64
}

fn affine_params(c: usize) -> u64 {
    2 * c as u64
}

fn lcm_params(c: usize, e: usize) -> u64 {
    let ec = c * e;
    let per_stack = 4 * (c * ec) as u64 + affine_params(ec) + linear_params(ec, c);
    affine_params(c) + 2 * per_stack
}

fn gcm_params(c: usize) -> u64 {
    4 * linear_params(c, c)
}

fn mlp_params(c: usize, e: usize) -> u64 {
    affine_params(c) + linear_params(c, c * e) + linear_params(c * e, c)
}

/// Exact learnable-scalar count for a model built from `config`.
pub fn count_params(config: &ModelConfig) -> u64 {
    let c = config.channels;
    let n = config.joints;
    let embedding = if config.frames == 1 {
        linear_params(2, c) + (n * c) as u64
    } else {
        linear_params(2 * config.frames, config.seq_channels)
            + linear_params(2, c)
            + linear_params(config.seq_channels + c, c)
            + (n * c) as u64
    };
    let per_block = match config.variant {
        ModelVariant::DoubleChain => {
            lcm_params(config.local_channels, config.lcm_expansion)
                + gcm_params(config.local_channels)
                + gcm_params(config.global_channels)
                + lcm_params(config.global_channels, config.lcm_expansion)
                + linear_params(c, c / config.fim_reduction)
                + linear_params(c / config.fim_reduction, c)
                + mlp_params(c, config.mlp_expansion)
        }
        ModelVariant::GcmOnly => gcm_params(c) + mlp_params(c, config.mlp_expansion),
        ModelVariant::LcmOnly => {
            lcm_params(c, config.lcm_expansion) + mlp_params(c, config.mlp_expansion)
        }
    };
    let head = affine_params(c) + linear_params(c, 3);
    embedding + config.layers as u64 * per_block + head
}

// MAC counts per component; doubled at the end (multiply + accumulate).

fn lcm_macs(n: usize, c: usize, e: usize) -> u64 {
    let ec = c * e;
    // Per stack: four c -> ec projections, four dense N x N propagations,
    // one ec -> c conv.
    let per_stack = 4 * (n * c * ec) as u64 + 4 * (n * n * ec) as u64 + (n * ec * c) as u64;
    2 * per_stack
}

fn gcm_macs(n: usize, c: usize) -> u64 {
    // Q, K, V, output projections plus the two N x N attention products.
    4 * (n * c * c) as u64 + 2 * (n * n * c) as u64
}

fn mlp_macs(n: usize, c: usize, e: usize) -> u64 {
    2 * (n * c * c * e) as u64
}

/// Floating-point ops of one forward pass, batch size 1 (2 ops per MAC).
pub fn count_flops(config: &ModelConfig) -> u64 {
    let c = config.channels;
    let n = config.joints;
    let embedding = if config.frames == 1 {
        (n * 2 * c) as u64
    } else {
        (n * 2 * config.frames * config.seq_channels) as u64
            + (n * 2 * c) as u64
            + (n * (config.seq_channels + c) * c) as u64
    };
    let per_block = match config.variant {
        ModelVariant::DoubleChain => {
            lcm_macs(n, config.local_channels, config.lcm_expansion)
                + gcm_macs(n, config.local_channels)
                + gcm_macs(n, config.global_channels)
                + lcm_macs(n, config.global_channels, config.lcm_expansion)
                + 2 * (n * c * (c / config.fim_reduction)) as u64
                + mlp_macs(n, c, config.mlp_expansion)
        }
        ModelVariant::GcmOnly => gcm_macs(n, c) + mlp_macs(n, c, config.mlp_expansion),
        ModelVariant::LcmOnly => {
            lcm_macs(n, c, config.lcm_expansion) + mlp_macs(n, c, config.mlp_expansion)
        }
    };
    let head = (n * c * 3) as u64;
    2 * (embedding + config.layers as u64 * per_block + head)
}

/// One accounting target: a named configuration and its reference value in
/// millions, with a relative tolerance.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub config: ModelConfig,
    pub target_millions: f64,
    pub tolerance: f64,
}

impl Preset {
    pub fn measured_millions(&self, measured: u64) -> f64 {
        measured as f64 / 1e6
    }

    pub fn within_tolerance(&self, measured: u64) -> bool {
        let m = self.measured_millions(measured);
        (m - self.target_millions).abs() <= self.tolerance * self.target_millions
    }
}

/// Parameter-count regression targets (tolerance 10%).
pub fn param_presets() -> Vec<Preset> {
    let single = |name, layers, target| Preset {
        name,
        config: ModelConfig {
            layers,
            ..ModelConfig::paper()
        },
        target_millions: target,
        tolerance: 0.10,
    };
    let variant = |name, variant, target| Preset {
        name,
        config: ModelConfig {
            variant,
            ..ModelConfig::paper()
        },
        target_millions: target,
        tolerance: 0.10,
    };
    let seq = |name, frames, layers, target| Preset {
        name,
        config: ModelConfig::paper_sequence(frames, layers),
        target_millions: target,
        tolerance: 0.10,
    };
    vec![
        single("paper M=3 C=160 1:4", 3, 2.07),
        single("M=1 C=160", 1, 0.66),
        single("M=2 C=160", 2, 1.38),
        single("M=4 C=160", 4, 2.76),
        variant("GCM-only single chain", ModelVariant::GcmOnly, 0.93),
        variant("LCM-only single chain", ModelVariant::LcmOnly, 2.25),
        seq("T=9", 9, 3, 2.28),
        seq("T=27", 27, 3, 2.32),
        seq("T=81 M=4", 81, 4, 3.11),
        seq("T=243 M=4", 243, 4, 3.44),
    ]
}

/// Forward-FLOPs regression targets (tolerance 20%).
///
/// The reference FLOPs figures track the M=3 architecture at every frame
/// count: the frame count only changes the embedding frontend there, and
/// the published 77/78/82/93 M sequence is consistent with that frontend
/// delta alone (an M=4 stack would add ~24M per extra layer, which the
/// 78 -> 82 step rules out). Parameter targets at T=81/243 keep M=4.
pub fn flop_presets() -> Vec<Preset> {
    let seq = |name, frames, target| Preset {
        name,
        config: ModelConfig::paper_sequence(frames, 3),
        target_millions: target,
        tolerance: 0.20,
    };
    vec![
        seq("T=9", 9, 77.0),
        seq("T=27", 27, 78.0),
        seq("T=81", 81, 82.0),
        seq("T=243", 243, 93.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::tensor::Tensor;

    #[test]
    fn analytic_count_matches_constructed_params() {
        for preset in param_presets() {
            let params = ModelParams::<Tensor<f32>>::init(&preset.config, 1).unwrap();
            assert_eq!(
                count_params(&preset.config),
                params.scalar_count(),
                "preset {}",
                preset.name
            );
        }
        let tiny = ModelConfig::tiny_test();
        let params = ModelParams::<Tensor<f32>>::init(&tiny, 1).unwrap();
        assert_eq!(count_params(&tiny), params.scalar_count());
    }

    #[test]
    fn paper_preset_lands_near_published_count() {
        let measured = count_params(&ModelConfig::paper());
        let millions = measured as f64 / 1e6;
        assert!((millions - 2.07).abs() <= 0.1 * 2.07, "got {millions}M");
    }

    #[test]
    fn doubling_channels_roughly_quadruples_mlp_flops() {
        let base = ModelConfig::paper();
        let doubled = ModelConfig {
            channels: 320,
            local_channels: 64,
            global_channels: 256,
            ..base.clone()
        };
        let n = base.joints;
        let mlp_base = mlp_macs(n, base.channels, base.mlp_expansion);
        let mlp_doubled = mlp_macs(n, doubled.channels, doubled.mlp_expansion);
        assert_eq!(mlp_doubled, 4 * mlp_base);
        assert!(count_flops(&doubled) > count_flops(&base));
    }
}
