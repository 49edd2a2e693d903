//! The `verify` subcommand: gradient checks for every tape primitive, the
//! end-to-end loss check, and the invariant suites, all in 64-bit with
//! fixed seeds. Prints one line per check with the worst observed value.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dcgct_core::data::{synth_generate, SynthOptions};
use dcgct_core::metrics::{auc, pck, procrustes_align, AlignOptions};
use dcgct_core::model::{
    count_params, forward_pass, gcm_forward, lcm_forward, param_presets, BlockParams, BnCursor,
    BnForward, Gcm, Linear, ModelConfig, ModelParams,
};
use dcgct_core::skeleton::{decompose_adjacency, flip_pose, merged_normalized, SkeletonTopology};
use dcgct_core::tensor::{grad_check, Tape, Tensor, TensorError, Value};
use dcgct_core::train::weighted_pose_loss;
use dcgct_core::{DcGct, ModelVariant};

const PRIMITIVE_TOL: f64 = 1e-6;
const END_TO_END_TOL: f64 = 1e-4;

pub struct Outcome {
    pub failures: usize,
    pub checks: usize,
}

impl Outcome {
    fn new() -> Self {
        Self {
            failures: 0,
            checks: 0,
        }
    }

    fn record(&mut self, name: &str, ok: bool, detail: String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
        }
        println!("{:<34} {detail:<28} [{}]", name, if ok { "ok" } else { "FAIL" });
    }

    fn merge(&mut self, other: Outcome) {
        self.failures += other.failures;
        self.checks += other.checks;
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.random_range(-1.2..1.2))
            .collect(),
    )
}

pub fn grads_suite(seed: u64, corrupt_adjoints: bool) -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let check = |out: &mut Outcome,
                     name: &str,
                     x: &Tensor<f64>,
                     f: &dyn Fn(&mut Tape<f64>, Value) -> Result<Value, TensorError>| {
        match grad_check(f, x, 1e-5) {
            Ok(err) => out.record(name, err < PRIMITIVE_TOL, format!("worst rel-err {err:.3e}")),
            Err(e) => out.record(name, false, format!("check errored: {e}")),
        }
    };

    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    let w = rand_tensor(&mut rng, &[4, 2]);
    let probe = rand_tensor(&mut rng, &[2, 3, 2]);
    {
        let (w, probe) = (w.clone(), probe.clone());
        check(&mut out, "grad matmul", &x, &move |t, v| {
            let wv = t.constant(w.clone());
            let y = t.matmul(v, wv)?;
            let p = t.constant(probe.clone());
            let m = t.mul(y, p)?;
            t.sum_all(m)
        });
    }
    let same = rand_tensor(&mut rng, &[2, 3, 4]);
    let probe_same = rand_tensor(&mut rng, &[2, 3, 4]);
    for name in ["add", "sub", "mul"] {
        let (o, p) = (same.clone(), probe_same.clone());
        check(&mut out, &format!("grad {name}"), &x, &move |t, v| {
            let ov = t.constant(o.clone());
            let y = match name {
                "add" => t.add(v, ov)?,
                "sub" => t.sub(v, ov)?,
                _ => t.mul(v, ov)?,
            };
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    let suffix = rand_tensor(&mut rng, &[4]);
    for name in ["add_broadcast", "mul_broadcast"] {
        let (s, p) = (suffix.clone(), probe_same.clone());
        check(&mut out, &format!("grad {name}"), &x, &move |t, v| {
            let sv = t.constant(s.clone());
            let y = if name == "add_broadcast" {
                t.add_broadcast(v, sv)?
            } else {
                t.mul_broadcast(v, sv)?
            };
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let p = probe_same.clone();
        check(&mut out, "grad scale", &x, &move |t, v| {
            let y = t.scale(v, -0.7)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let p = rand_tensor(&mut rng, &[2, 4, 3]);
        check(&mut out, "grad transpose_last2", &x, &move |t, v| {
            let y = t.transpose_last2(v)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    let x2 = rand_tensor(&mut rng, &[3, 5]);
    let probe2 = rand_tensor(&mut rng, &[3, 5]);
    {
        let p = probe2.clone();
        check(&mut out, "grad softmax_rows", &x2, &move |t, v| {
            let y = t.softmax_rows(v)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    let gain = rand_tensor(&mut rng, &[5]);
    let bias = rand_tensor(&mut rng, &[5]);
    {
        let (g, b, p) = (gain.clone(), bias.clone(), probe2.clone());
        check(&mut out, "grad layer_norm", &x2, &move |t, v| {
            let gv = t.constant(g.clone());
            let bv = t.constant(b.clone());
            let y = t.layer_norm(v, gv, bv, 1e-5)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let (g, b, p) = (gain.clone(), bias.clone(), probe2.clone());
        check(&mut out, "grad batch_norm (train)", &x2, &move |t, v| {
            let gv = t.constant(g.clone());
            let bv = t.constant(b.clone());
            let (y, _, _) = t.batch_norm_train(v, gv, bv, 1e-5)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let (g, b, p) = (gain.clone(), bias.clone(), probe2.clone());
        let mean = vec![0.1, -0.2, 0.3, 0.0, -0.1];
        let var = vec![1.0, 2.0, 0.5, 1.5, 0.8];
        check(&mut out, "grad batch_norm (eval)", &x2, &move |t, v| {
            let gv = t.constant(g.clone());
            let bv = t.constant(b.clone());
            let y = t.batch_norm_eval(v, gv, bv, &mean, &var, 1e-5)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        // The negative-control hook lives here: with --corrupt-adjoints the
        // GELU adjoint is perturbed and this check must fail.
        let p = probe2.clone();
        check(&mut out, "grad gelu", &x2, &move |t, v| {
            t.debug_corrupt_adjoints(corrupt_adjoints);
            let y = t.gelu(v)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let o = rand_tensor(&mut rng, &[3, 2]);
        let p = rand_tensor(&mut rng, &[3, 7]);
        check(&mut out, "grad concat_channels", &x2, &move |t, v| {
            let ov = t.constant(o.clone());
            let y = t.concat_channels(&[v, ov])?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }
    {
        let p0 = rand_tensor(&mut rng, &[3, 2]);
        let p1 = rand_tensor(&mut rng, &[3, 3]);
        check(&mut out, "grad split_channels", &x2, &move |t, v| {
            let parts = t.split_channels(v, &[2, 3])?;
            let pv0 = t.constant(p0.clone());
            let pv1 = t.constant(p1.clone());
            let m0 = t.mul(parts[0], pv0)?;
            let m1 = t.mul(parts[1], pv1)?;
            let s0 = t.sum_all(m0)?;
            let s1 = t.sum_all(m1)?;
            t.add(s0, s1)
        });
    }
    check(&mut out, "grad sum_all", &x2, &|t, v| t.sum_all(v));
    {
        let mut xn = rand_tensor(&mut rng, &[4, 3]);
        for row in xn.data_mut().chunks_mut(3) {
            row[0] += 3.0;
        }
        let p = rand_tensor(&mut rng, &[4]);
        check(&mut out, "grad norm_last", &xn, &move |t, v| {
            let y = t.norm_last(v)?;
            let pv = t.constant(p.clone());
            let m = t.mul(y, pv)?;
            t.sum_all(m)
        });
    }

    // End-to-end loss on the tiny config, sampled coordinates.
    out.merge(end_to_end_check(seed));
    out
}

fn end_to_end_check(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    let topo = SkeletonTopology::h36m17();
    let mut model = DcGct::<f64>::init(ModelConfig::tiny_test(), topo.clone(), seed).unwrap();
    let ds = synth_generate(
        &topo,
        &SynthOptions {
            count: 2,
            frames: 1,
            noise_mm: 0.0,
            seed,
        },
    );
    let (input, mut target) = ds.batch::<f64>(&[0, 1]);
    for v in target.data_mut() {
        *v *= 1e-3;
    }
    let theta = Tensor::<f64>::filled(&[17], 1.0);
    let analytic = {
        let mut tape = Tape::new();
        let (pred, binding) = model.forward_train(&mut tape, &input).unwrap();
        let tv = tape.constant(target.clone());
        let loss = weighted_pose_loss(&mut tape, pred, tv, &theta).unwrap();
        tape.backward(loss).unwrap();
        dcgct_core::train::collect_grads(&tape, &binding).unwrap()
    };
    let reference = model.params.clone();
    let loss_of = |params: &ModelParams<Tensor<f64>>| -> f64 {
        let mut tape = Tape::no_grad();
        let mut state = model.state.clone();
        let (pred, _) = forward_pass(
            &mut tape,
            &model.config,
            params,
            &model.adjacency,
            BnForward::Train(&mut state),
            &input,
        )
        .unwrap();
        let tv = tape.constant(target.clone());
        let loss = weighted_pose_loss(&mut tape, pred, tv, &theta).unwrap();
        tape.value(loss).item()
    };
    let mut names = Vec::new();
    reference.visit(&mut |name, t| names.push((name, t.numel())));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let mut worst = 0.0f64;
    for (tensor_idx, (_, numel)) in names.iter().enumerate() {
        for _ in 0..(*numel).min(6) {
            let i = rng.random_range(0..*numel);
            let eps = 1e-5;
            let mut plus = reference.clone();
            let mut minus = reference.clone();
            let mut k = 0;
            plus.visit_mut(&mut |_, t| {
                if k == tensor_idx {
                    t.data_mut()[i] += eps;
                }
                k += 1;
            });
            k = 0;
            minus.visit_mut(&mut |_, t| {
                if k == tensor_idx {
                    t.data_mut()[i] -= eps;
                }
                k += 1;
            });
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let ana = analytic[tensor_idx][i];
            let denom = numeric.abs().max(ana.abs());
            let err = if denom < 1e-8 {
                (numeric - ana).abs()
            } else {
                (numeric - ana).abs() / denom
            };
            worst = worst.max(err);
        }
    }
    out.record(
        "grad end-to-end loss",
        worst < END_TO_END_TOL,
        format!("worst rel-err {worst:.3e}"),
    );
    out
}

pub fn invariants_suite(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    let topo = SkeletonTopology::h36m17();
    let adj = decompose_adjacency(&topo).unwrap();
    let n = 17;

    // Adjacency: self identity, supports, zero rows, merged equivalence.
    {
        let selfm = &adj.normalized[0];
        let identity_ok =
            (0..n).all(|i| (0..n).all(|j| selfm[i * n + j] == if i == j { 1.0 } else { 0.0 }));
        let mut support_ok = true;
        for cat in 0..4 {
            for idx in 0..n * n {
                let (raw, norm) = (adj.raw[cat][idx], adj.normalized[cat][idx]);
                support_ok &= (raw == 0.0) == (norm == 0.0) && norm >= 0.0;
            }
        }
        let toward_root_row: f64 = adj.normalized[1][..n].iter().sum();
        out.record(
            "adjacency structure",
            identity_ok && support_ok && toward_root_row == 0.0,
            format!("identity {identity_ok}, supports {support_ok}"),
        );

        let merged = merged_normalized(&adj);
        let mut union = vec![0.0f64; n * n];
        for cat in 0..4 {
            for (u, &r) in union.iter_mut().zip(&adj.raw[cat]) {
                if r != 0.0 {
                    *u = 1.0;
                }
            }
        }
        let degrees: Vec<f64> = (0..n).map(|i| union[i * n..(i + 1) * n].iter().sum()).collect();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if union[i * n + j] != 0.0 {
                    union[i * n + j] / (degrees[i] * degrees[j]).sqrt()
                } else {
                    0.0
                };
                worst = worst.max((merged[i * n + j] - want).abs());
            }
        }
        out.record(
            "adjacency merged single-matrix",
            worst < 1e-12,
            format!("worst deviation {worst:.2e}"),
        );
    }

    // Flip involution.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = rand_tensor(&mut rng, &[17, 3]);
        let ok = flip_pose(&flip_pose(&pose, &topo).unwrap(), &topo).unwrap().data()
            == pose.data();
        out.record("flip involution", ok, "flip(flip(p)) == p".to_string());
    }

    // Softmax rows and layer norm moments.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(rand_tensor(&mut rng, &[4, 6]));
        let sm = tape.softmax_rows(x).unwrap();
        let mut worst_sum = 0.0f64;
        for row in tape.value(sm).data().chunks(6) {
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        out.record(
            "softmax rows sum to 1",
            worst_sum < 1e-6,
            format!("worst |sum-1| {worst_sum:.2e}"),
        );
        let gain = tape.constant(Tensor::filled(&[6], 1.0));
        let bias = tape.constant(Tensor::zeros(&[6]));
        let ln = tape.layer_norm(x, gain, bias, 1e-9).unwrap();
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for row in tape.value(ln).data().chunks(6) {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
        out.record(
            "layer norm standardizes",
            worst_mean < 1e-6 && worst_var < 1e-4,
            format!("|mean| {worst_mean:.1e}, |var-1| {worst_var:.1e}"),
        );
    }

    // Attention permutation equivariance.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let config = ModelConfig::tiny_test();
        let params = ModelParams::<Tensor<f64>>::init(&config, seed).unwrap();
        let gcm = match &params.blocks[0] {
            BlockParams::Double { g2l_gcm, .. } => g2l_gcm.clone(),
            _ => unreachable!(),
        };
        let c = config.global_channels;
        let x: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let permute = |data: &[f64]| -> Vec<f64> {
            let mut o = vec![0.0; data.len()];
            for (i, &p) in perm.iter().enumerate() {
                o[i * c..(i + 1) * c].copy_from_slice(&data[p * c..(p + 1) * c]);
            }
            o
        };
        let run = |input: &[f64]| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let binding = bind_gcm(&mut tape, &gcm);
            let xv = tape.constant(Tensor::from_f64(&[1, n, c], input));
            let y = gcm_forward(&mut tape, xv, &binding, config.heads).unwrap();
            tape.value(y).data().to_vec()
        };
        let direct = run(&permute(&x));
        let expected = permute(&run(&x));
        let worst = direct
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        out.record(
            "gcm permutation equivariance",
            worst < 1e-9,
            format!("worst deviation {worst:.2e}"),
        );
    }

    // LCM locality over its two-hop receptive field.
    {
        let config = ModelConfig {
            variant: ModelVariant::LcmOnly,
            ..ModelConfig::tiny_test()
        };
        let mut model = DcGct::<f64>::init(config.clone(), topo.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let warm = rand_tensor(&mut rng, &[2, 17, 2]);
        let mut tape = Tape::new();
        model.forward_train(&mut tape, &warm).unwrap();
        let lcm = match &model.params.blocks[0] {
            BlockParams::LcmOnly { lcm, .. } => lcm.clone(),
            _ => unreachable!(),
        };
        let run = |x: &Tensor<f64>| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let binding = lcm.map(&mut |t: &Tensor<f64>| tape.constant(t.clone()));
            let adj_vals = adj.normalized_tensors::<f64>().map(|t| tape.constant(t));
            let mut bn = BnCursor::Eval {
                state: &model.state,
                next: 0,
            };
            let xv = tape.constant(x.clone());
            let y = lcm_forward(&mut tape, xv, &binding, &adj_vals, &mut bn).unwrap();
            tape.value(y).data().to_vec()
        };
        let c = config.channels;
        let base = rand_tensor(&mut rng, &[1, n, c]);
        let mut poked = base.clone();
        let source = 16;
        poked.data_mut()[source * c] += 1.0;
        let (a, b) = (run(&base), run(&poked));
        // Two hops over the category union from the source joint.
        let mut union = vec![false; n * n];
        for cat in 0..4 {
            for (u, &r) in union.iter_mut().zip(&adj.raw[cat]) {
                if r != 0.0 {
                    *u = true;
                }
            }
        }
        let mut hop1 = vec![false; n];
        hop1[source] = true;
        for i in 0..n {
            if union[i * n + source] {
                hop1[i] = true;
            }
        }
        let mut reach = hop1.clone();
        for i in 0..n {
            if !reach[i] {
                for j in 0..n {
                    if union[i * n + j] && hop1[j] {
                        reach[i] = true;
                        break;
                    }
                }
            }
        }
        let mut outside_clean = true;
        let mut inside_changed = false;
        for j in 0..n {
            let differs = a[j * c..(j + 1) * c]
                .iter()
                .zip(&b[j * c..(j + 1) * c])
                .any(|(x, y)| x != y);
            if reach[j] {
                inside_changed |= differs;
            } else {
                outside_clean &= !differs;
            }
        }
        out.record(
            "lcm locality (2-hop field)",
            outside_clean && inside_changed,
            format!("outside untouched {outside_clean}, neighbors respond {inside_changed}"),
        );
    }

    // FIM composed-map rank bound.
    {
        let config = ModelConfig::paper();
        let params = ModelParams::<Tensor<f64>>::init(&config, seed).unwrap();
        let (reduce, expand) = match &params.blocks[0] {
            BlockParams::Double { fim, .. } => (fim.reduce.weight.clone(), fim.expand.weight.clone()),
            _ => unreachable!(),
        };
        let c = config.channels;
        let r = c / config.fim_reduction;
        let composed = DMatrix::from_row_slice(c, r, reduce.data())
            * DMatrix::from_row_slice(r, c, expand.data());
        let svd = composed.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let tail = sv[r];
        out.record(
            "fim rank bound",
            tail < 1e-9 * sv[0],
            format!("sigma[{r}]/sigma[0] = {:.2e}", tail / sv[0]),
        );
    }

    // Procrustes optimality and similarity invariance.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let mut optimal = true;
        for _ in 0..50 {
            let gt: Vec<f64> = (0..51).map(|_| rng.random_range(-300.0..300.0)).collect();
            let pred: Vec<f64> = (0..51).map(|_| rng.random_range(-300.0..300.0)).collect();
            let aligned = procrustes_align(&pred, &gt, AlignOptions::default()).unwrap();
            let sse = |a: &[f64], b: &[f64]| {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            };
            optimal &= sse(&aligned, &gt) <= sse(&pred, &gt) + 1e-9;
        }
        out.record(
            "procrustes optimality",
            optimal,
            "aligned SSE <= unaligned SSE".to_string(),
        );
    }

    // PCK/AUC boundary cases.
    {
        let gt = vec![0.0; 6];
        let mut pred = vec![0.0; 6];
        pred[0] = 100.0;
        pred[3] = 200.0;
        let ok = pck(&pred, &gt, 2, 150.0).unwrap() == 50.0
            && auc(&gt, &gt, 2).unwrap() == 100.0
            && pck(&gt, &gt, 2, 150.0).unwrap() == 100.0;
        out.record("pck/auc boundaries", ok, "boundary values exact".to_string());
    }

    // Config-derived counts match construction for every preset.
    {
        let mut ok = true;
        for preset in param_presets() {
            let constructed = ModelParams::<Tensor<f32>>::init(&preset.config, 1)
                .unwrap()
                .scalar_count();
            ok &= constructed == count_params(&preset.config);
        }
        out.record(
            "count_params == construction",
            ok,
            "all accounting presets".to_string(),
        );
    }

    out
}

fn bind_gcm(tape: &mut Tape<f64>, p: &Gcm<Tensor<f64>>) -> Gcm<Value> {
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
