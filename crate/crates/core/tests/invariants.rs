//! Structural and numerical invariants: adjacency normalization, flip
//! involution, attention permutation equivariance, LCM locality, the FIM
//! rank bound, softmax/layer-norm properties, and config-derived parameter
//! counts.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dcgct_core::model::{
    count_params, lcm_forward, BlockParams, BnCursor, ModelConfig, ModelParams,
};
use dcgct_core::skeleton::{
    decompose_adjacency, flip_pose, merged_normalized, AdjacencyCategory, SkeletonTopology,
};
use dcgct_core::tensor::{Tape, Tensor};
use dcgct_core::{DcGct, ModelVariant};

// ---- adjacency ----

fn arb_topology() -> impl Strategy<Value = SkeletonTopology> {
    (2usize..10)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<proptest::sample::Index>(), n - 1),
                proptest::collection::vec(any::<bool>(), n / 2),
            )
        })
        .prop_map(|(n, parent_picks, pair_flags)| {
            let mut parents = vec![None];
            for (i, pick) in parent_picks.iter().enumerate() {
                parents.push(Some(pick.index(i + 1)));
            }
            let mut symmetric_pairs = Vec::new();
            for (k, &flag) in pair_flags.iter().enumerate() {
                let (a, b) = (2 * k + 1, 2 * k + 2);
                if flag && b < n {
                    symmetric_pairs.push((a, b));
                }
            }
            SkeletonTopology {
                names: (0..n).map(|i| format!("j{i}")).collect(),
                parents,
                root: 0,
                symmetric_pairs,
            }
        })
}

proptest! {
    /// Row sums are bounded by sqrt(row degree): at most 1 for the three
    /// single-neighbor categories (self, toward-root, symmetric, whose rows
    /// hold at most one entry), sqrt(#children) for the away-from-root rows
    /// of multi-child joints. Equality at 1 holds exactly for rows whose
    /// edge has degree 1 on both sides.
    #[test]
    fn normalized_row_sums_bounded(topo in arb_topology()) {
        let adj = decompose_adjacency(&topo).unwrap();
        let n = adj.joint_count;
        for cat in 0..4 {
            for i in 0..n {
                let row_degree: f64 = adj.raw[cat][i * n..(i + 1) * n].iter().sum();
                let sum: f64 = adj.normalized[cat][i * n..(i + 1) * n].iter().sum();
                prop_assert!(
                    sum <= row_degree.sqrt() + 1e-12,
                    "cat {cat} row {i} sums to {sum} with degree {row_degree}"
                );
                if cat != AdjacencyCategory::AwayFromRoot as usize {
                    prop_assert!(sum <= 1.0 + 1e-12, "cat {cat} row {i} sums to {sum}");
                }
            }
        }
        // Symmetric rows have degree 1 on both sides: row sum exactly 1.
        let sym = &adj.normalized[AdjacencyCategory::Symmetric as usize];
        for &(a, b) in &topo.symmetric_pairs {
            for row in [a, b] {
                let sum: f64 = sym[row * n..(row + 1) * n].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // Toward-root rows of an only child normalize to exactly 1.
        let toward = &adj.normalized[AdjacencyCategory::TowardRoot as usize];
        for j in 0..n {
            if let Some(p) = topo.parents[j] {
                if topo.children(p).len() == 1 {
                    let sum: f64 = toward[j * n..(j + 1) * n].iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn normalized_supports_match_raw(topo in arb_topology()) {
        let adj = decompose_adjacency(&topo).unwrap();
        let n = adj.joint_count;
        for cat in 0..4 {
            for idx in 0..n * n {
                let raw = adj.raw[cat][idx];
                let norm = adj.normalized[cat][idx];
                prop_assert!(norm >= 0.0);
                if raw == 0.0 {
                    prop_assert_eq!(norm, 0.0);
                } else {
                    prop_assert!(norm > 0.0);
                }
            }
        }
        // The self matrix normalizes to exactly the identity.
        let selfm = &adj.normalized[AdjacencyCategory::SelfLoop as usize];
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(selfm[i * n + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    /// Merging the four raw categories (self-loops included) and
    /// normalizing once must agree with an independent evaluation of the
    /// single-matrix propagation formula.
    #[test]
    fn merged_matches_single_matrix_form(topo in arb_topology()) {
        let adj = decompose_adjacency(&topo).unwrap();
        let n = adj.joint_count;
        let merged = merged_normalized(&adj);

        // Independent route: union adjacency, degree vector, entrywise
        // a_ij / sqrt(d_i d_j).
        let mut union = vec![0.0f64; n * n];
        for cat in 0..4 {
            for (u, &r) in union.iter_mut().zip(&adj.raw[cat]) {
                if r != 0.0 {
                    *u = 1.0;
                }
            }
        }
        let degrees: Vec<f64> = (0..n)
            .map(|i| union[i * n..(i + 1) * n].iter().sum())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let want = if union[i * n + j] != 0.0 {
                    union[i * n + j] / (degrees[i] * degrees[j]).sqrt()
                } else {
                    0.0
                };
                prop_assert!((merged[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    // ---- flip ----

    #[test]
    fn flip_is_an_involution(
        data in proptest::collection::vec(-1e3f64..1e3, 17 * 3),
    ) {
        let topo = SkeletonTopology::h36m17();
        let pose = Tensor::<f64>::from_f64(&[17, 3], &data);
        let twice = flip_pose(&flip_pose(&pose, &topo).unwrap(), &topo).unwrap();
        prop_assert_eq!(twice.data(), pose.data());
    }

    // ---- softmax / layer norm ----

    #[test]
    fn softmax_rows_are_distributions(
        data in proptest::collection::vec(-30.0f64..30.0, 24),
    ) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[4, 6], &data));
        let y = tape.softmax_rows(x).unwrap();
        for row in tape.value(y).data().chunks(6) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for &v in row {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(
        data in proptest::collection::vec(-10.0f64..10.0, 32),
    ) {
        // Skip near-constant rows; the eps guard intentionally damps them.
        let c = 8;
        for row in data.chunks(c) {
            let mean: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            prop_assume!(var > 0.01);
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[4, c], &data));
        let gain = tape.constant(Tensor::filled(&[c], 1.0));
        let bias = tape.constant(Tensor::zeros(&[c]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        for row in tape.value(y).data().chunks(c) {
            let mean: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-6, "row mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-4, "row var {var}");
        }
    }

    // ---- concat / split ----

    #[test]
    fn concat_split_round_trip_bit_exact(
        a in proptest::collection::vec(-1e6f64..1e6, 12),
        b in proptest::collection::vec(-1e6f64..1e6, 20),
    ) {
        let mut tape = Tape::<f64>::new();
        let ta = tape.constant(Tensor::from_f64(&[4, 3], &a));
        let tb = tape.constant(Tensor::from_f64(&[4, 5], &b));
        let cat = tape.concat_channels(&[ta, tb]).unwrap();
        let parts = tape.split_channels(cat, &[3, 5]).unwrap();
        prop_assert_eq!(tape.value(parts[0]).data(), tape.value(ta).data());
        prop_assert_eq!(tape.value(parts[1]).data(), tape.value(tb).data());
    }

    // ---- accounting ----

    #[test]
    fn count_params_matches_construction(
        heads in 1usize..4,
        a in 1usize..5,
        b in 1usize..5,
        layers in 1usize..3,
        joints in 1usize..20,
        frames_half in 0usize..4,
        variant_pick in 0usize..3,
    ) {
        let c1 = heads * a * 2;
        let c2 = heads * b * 2;
        let config = ModelConfig {
            joints,
            layers,
            channels: c1 + c2,
            local_channels: c1,
            global_channels: c2,
            heads,
            mlp_expansion: 2,
            fim_reduction: 2,
            lcm_expansion: 2,
            frames: 2 * frames_half + 1,
            seq_channels: 8,
            dropout: 0.0,
            variant: [
                ModelVariant::DoubleChain,
                ModelVariant::GcmOnly,
                ModelVariant::LcmOnly,
            ][variant_pick],
        };
        prop_assume!(config.validate().is_ok());
        let params = ModelParams::<Tensor<f32>>::init(&config, 1).unwrap();
        prop_assert_eq!(count_params(&config), params.scalar_count());
    }
}

// ---- attention ----

/// For any joint permutation pi: gcm(pi . x) == pi . gcm(x). Position
/// embedding and adjacency live outside this op, so the property is exact.
#[test]
fn gcm_is_permutation_equivariant() {
    let config = ModelConfig::tiny_test();
    let params = ModelParams::<Tensor<f64>>::init(&config, 13).unwrap();
    let gcm = match &params.blocks[0] {
        BlockParams::Double { g2l_gcm, .. } => g2l_gcm,
        _ => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 17;
    let c = config.global_channels;
    let x: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();

    // A fixed but nontrivial permutation.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let permute = |data: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        for (i, &p) in perm.iter().enumerate() {
            out[i * c..(i + 1) * c].copy_from_slice(&data[p * c..(p + 1) * c]);
        }
        out
    };

    let run = |input: &[f64]| -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let binding = gcm_binding(&mut tape, gcm);
        let xv = tape.constant(Tensor::from_f64(&[1, n, c], input));
        let out = dcgct_core::model::gcm_forward(&mut tape, xv, &binding, config.heads).unwrap();
        tape.value(out).data().to_vec()
    };

    let base = run(&x);
    let permuted = run(&permute(&x));
    let expected = permute(&base);
    for (a, b) in permuted.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn gcm_binding(
    tape: &mut Tape<f64>,
    p: &dcgct_core::model::Gcm<Tensor<f64>>,
) -> dcgct_core::model::Gcm<dcgct_core::tensor::Value> {
    use dcgct_core::model::{Gcm, Linear};
    let mut lin = |l: &Linear<Tensor<f64>>| Linear {
        weight: tape.constant(l.weight.clone()),
        bias: tape.constant(l.bias.clone()),
    };
    Gcm {
        query: lin(&p.query),
        key: lin(&p.key),
        value: lin(&p.value),
        output: lin(&p.output),
    }
}

// ---- LCM locality ----

/// Joints outside the receptive field of the two stacked GCN stages (two
/// hops over the category union) are bit-for-bit unaffected by a
/// perturbation; 1-hop neighbors are affected.
#[test]
fn lcm_locality_over_two_hops() {
    let topo = SkeletonTopology::h36m17();
    let config = ModelConfig {
        variant: ModelVariant::LcmOnly,
        ..ModelConfig::tiny_test()
    };
    let model = {
        let mut m = DcGct::<f64>::init(config.clone(), topo.clone(), 23).unwrap();
        // Populate running stats so eval mode works.
        let warm = Tensor::from_f64(
            &[2, 17, 2],
            &(0..2 * 17 * 2)
                .map(|i| ((i % 13) as f64) * 0.05 - 0.3)
                .collect::<Vec<_>>(),
        );
        let mut tape = Tape::new();
        m.forward_train(&mut tape, &warm).unwrap();
        m
    };
    let lcm = match &model.params.blocks[0] {
        BlockParams::LcmOnly { lcm, .. } => lcm.clone(),
        _ => unreachable!(),
    };
    let adjset = decompose_adjacency(&topo).unwrap();

    // Two-hop reachability over the union of all categories.
    let n = 17;
    let union: Vec<bool> = {
        let mut u = vec![false; n * n];
        for cat in 0..4 {
            for (ui, &r) in u.iter_mut().zip(&adjset.raw[cat]) {
                if r != 0.0 {
                    *ui = true;
                }
            }
        }
        u
    };
    let reach2 = |src: usize| -> Vec<bool> {
        let mut hop1 = vec![false; n];
        hop1[src] = true;
        for i in 0..n {
            if union[i * n + src] {
                hop1[i] = true;
            }
        }
        let mut hop2 = hop1.clone();
        for i in 0..n {
            if !hop2[i] {
                for j in 0..n {
                    if union[i * n + j] && hop1[j] {
                        hop2[i] = true;
                        break;
                    }
                }
            }
        }
        hop2
    };

    let run = |x: &Tensor<f64>| -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let lcm_b = lcm.map(&mut |t: &Tensor<f64>| tape.constant(t.clone()));
        let adj_vals = adjset.normalized_tensors::<f64>().map(|t| tape.constant(t));
        let mut bn = BnCursor::Eval {
            state: &model.state,
            next: 0,
        };
        let xv = tape.constant(x.clone());
        let out = lcm_forward(&mut tape, xv, &lcm_b, &adj_vals, &mut bn).unwrap();
        tape.value(out).data().to_vec()
    };

    let c = config.channels;
    let base = Tensor::<f64>::from_f64(
        &[1, n, c],
        &(0..n * c).map(|i| ((i % 7) as f64) * 0.1 - 0.3).collect::<Vec<_>>(),
    );
    let source = 16; // RWrist: a leaf with a small 2-hop neighborhood
    let mut poked = base.clone();
    poked.data_mut()[source * c] += 1.0;

    let a = run(&base);
    let b = run(&poked);
    let reachable = reach2(source);
    let mut changed_any_neighbor = false;
    for j in 0..n {
        let differs = a[j * c..(j + 1) * c]
            .iter()
            .zip(&b[j * c..(j + 1) * c])
            .any(|(x, y)| x != y);
        if reachable[j] {
            changed_any_neighbor |= differs;
        } else {
            assert!(!differs, "joint {j} outside the 2-hop field changed");
        }
    }
    assert!(changed_any_neighbor, "perturbation had no local effect");
}

// ---- FIM ----

/// The composed FIM map has numerical rank at most C / fim_reduction.
#[test]
fn fim_composed_rank_is_bounded() {
    let config = ModelConfig::paper();
    let params = ModelParams::<Tensor<f64>>::init(&config, 3).unwrap();
    let fim = match &params.blocks[0] {
        BlockParams::Double { fim, .. } => fim,
        _ => unreachable!(),
    };
    let c = config.channels;
    let r = c / config.fim_reduction;
    let reduce = DMatrix::from_row_slice(c, r, fim.reduce.weight.data());
    let expand = DMatrix::from_row_slice(r, c, fim.expand.weight.data());
    let composed = reduce * expand;
    let svd = composed.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!(sv[0] > 0.0);
    for &s in &sv[r..] {
        assert!(s < 1e-9 * sv[0], "singular value beyond rank bound: {s}");
    }
}

// ---- forward determinism across recording modes ----

#[test]
fn model_forward_independent_of_recording() {
    let topo = SkeletonTopology::h36m17();
    let mut model = DcGct::<f64>::init(ModelConfig::tiny_test(), topo, 41).unwrap();
    let warm = Tensor::<f64>::from_f64(
        &[2, 17, 2],
        &(0..2 * 17 * 2).map(|i| (i as f64 * 0.7).sin() * 0.2).collect::<Vec<_>>(),
    );
    let mut tape = Tape::new();
    model.forward_train(&mut tape, &warm).unwrap();

    let input = Tensor::<f64>::from_f64(
        &[1, 17, 2],
        &(0..17 * 2).map(|i| (i as f64 * 0.3).cos() * 0.4).collect::<Vec<_>>(),
    );
    let mut recording = Tape::new();
    let out_rec = model.forward_eval(&mut recording, &input).unwrap();
    let mut silent = Tape::no_grad();
    let out_no = model.forward_eval(&mut silent, &input).unwrap();
    assert_eq!(
        recording.value(out_rec).data(),
        silent.value(out_no).data()
    );
}
