use super::*;
use crate::numerics::rng::{next_range, seeded, SeedRng};
use crate::numerics::{grad_check, Tensor};

fn rand_vals(rng: &mut SeedRng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| next_range(rng, lo, hi)).collect()
}

fn tiny_params(d: usize, k_sab: usize, heads: usize, seed: u64) -> SabParams {
    let mut rng = seeded(seed);
    SabParams::init(d, k_sab, heads, &mut rng)
}

fn zero_block(p: &mut SabParams) {
    for b in &mut p.blocks {
        for w in b.wq.iter_mut().chain(b.wk.iter_mut()).chain(b.wv.iter_mut()) {
            w.values.iter_mut().for_each(|v| *v = 0.0);
        }
        b.wo.values.iter_mut().for_each(|v| *v = 0.0);
        b.ffn_w1.values.iter_mut().for_each(|v| *v = 0.0);
        b.ffn_w2.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Test-side row layer-norm (gain 1, bias 0, eps 1e-12).
fn ln_rows(vals: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &vals[i * d..(i + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-12).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv;
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// With every projection and FFN weight zeroed, only the residual paths
/// remain: each block reduces to two stacked layer-norms of its input, so
/// the output is `LN(LN(H + P))`.
#[test]
fn zero_weights_leave_only_residual_paths() {
    let (n, d) = (3, 4);
    let mut p = tiny_params(d, 1, 1, 3);
    zero_block(&mut p);
    let mut rng = seeded(4);
    let hv = rand_vals(&mut rng, n * d, -1.0, 1.0);
    let pv = rand_vals(&mut rng, n * d, -1.0, 1.0);

    let mut t = Tape::new();
    let h = t.constant(n, d, hv.clone()).unwrap();
    let pos = t.constant(n, d, pv.clone()).unwrap();
    let refs = p.enter(&mut t).unwrap();
    let out = sab_forward(&mut t, h, &[true; 3], pos, &refs, 1.0, DropoutMode::Eval, None).unwrap();

    let x0: Vec<f64> = hv.iter().zip(pv.iter()).map(|(a, b)| a + b).collect();
    let expected = ln_rows(&ln_rows(&x0, n, d), n, d);
    assert!(max_abs_diff(t.value(out.encoded), &expected) < 1e-12);
}

/// Single-head attention on a hand-sized problem, against a spreadsheet
/// style straight-line computation of the same block.
#[test]
fn single_head_attention_matches_manual_trace() {
    let (n, d) = (2, 2);
    let mut p = tiny_params(d, 1, 1, 8);
    // fixed small weights
    let b = &mut p.blocks[0];
    b.wq[0].values = vec![0.1, -0.2, 0.3, 0.4];
    b.wk[0].values = vec![0.2, 0.1, -0.1, 0.3];
    b.wv[0].values = vec![0.5, 0.0, -0.3, 0.2];
    b.wo.values = vec![1.0, 0.2, -0.4, 0.7];
    b.ffn_w1.values = vec![0.3, -0.1, 0.2, 0.6];
    b.ffn_b1.values = vec![0.05, -0.02];
    b.ffn_w2.values = vec![-0.2, 0.4, 0.1, 0.3];
    b.ffn_b2.values = vec![0.01, 0.02];

    let hv = vec![0.4, -0.3, 0.7, 0.2];
    let pv = vec![0.05, 0.1, -0.05, 0.2];

    let mut t = Tape::new();
    let h = t.constant(n, d, hv.clone()).unwrap();
    let pos = t.constant(n, d, pv.clone()).unwrap();
    let refs = p.enter(&mut t).unwrap();
    let out = sab_forward(&mut t, h, &[true, true], pos, &refs, 1.0, DropoutMode::Eval, None).unwrap();

    // manual computation
    let matmul = |a: &[f64], b: &[f64], m: usize, k: usize, nn: usize| -> Vec<f64> {
        let mut c = vec![0.0; m * nn];
        for i in 0..m {
            for l in 0..k {
                for j in 0..nn {
                    c[i * nn + j] += a[i * k + l] * b[l * nn + j];
                }
            }
        }
        c
    };
    let x0: Vec<f64> = hv.iter().zip(pv.iter()).map(|(a, b)| a + b).collect();
    let bb = &p.blocks[0];
    let q = matmul(&x0, &bb.wq[0].values, n, d, d);
    let k = matmul(&x0, &bb.wk[0].values, n, d, d);
    let v = matmul(&x0, &bb.wv[0].values, n, d, d);
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..d).map(|f| q[i * d + f] * k[j * d + f]).sum();
            scores[i * n + j] = dot / (d as f64).sqrt();
        }
    }
    let mut attn = vec![0.0; n * n];
    for i in 0..n {
        let row = &scores[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for j in 0..n {
            attn[i * n + j] = exps[j] / denom;
        }
    }
    let headed = matmul(&attn, &v, n, n, d);
    let attn_out = matmul(&headed, &bb.wo.values, n, d, d);
    let res1: Vec<f64> = x0.iter().zip(attn_out.iter()).map(|(a, b)| a + b).collect();
    let x1 = ln_rows(&res1, n, d);
    let mut pre = matmul(&x1, &bb.ffn_w1.values, n, d, d);
    for i in 0..n {
        for j in 0..d {
            pre[i * d + j] += bb.ffn_b1.values[j];
        }
    }
    let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let mut post = matmul(&act, &bb.ffn_w2.values, n, d, d);
    for i in 0..n {
        for j in 0..d {
            post[i * d + j] += bb.ffn_b2.values[j];
        }
    }
    let res2: Vec<f64> = x1.iter().zip(post.iter()).map(|(a, b)| a + b).collect();
    let expected = ln_rows(&res2, n, d);

    assert!(max_abs_diff(t.value(out.encoded), &expected) < 1e-8);
    assert!(max_abs_diff(t.value(out.preference), &expected[d..]) < 1e-8);
}

#[test]
fn padded_content_cannot_influence_the_readout() {
    let (n, d) = (5, 4);
    let p = tiny_params(d, 2, 2, 12);
    let mask = [false, false, true, true, true];
    let mut rng = seeded(13);
    let mut hv = rand_vals(&mut rng, n * d, -1.0, 1.0);
    let pv = rand_vals(&mut rng, n * d, -1.0, 1.0);

    let run = |hv: &[f64]| -> Vec<f64> {
        let mut t = Tape::new();
        let h = t.constant(n, d, hv.to_vec()).unwrap();
        let pos = t.constant(n, d, pv.clone()).unwrap();
        let refs = p.enter(&mut t).unwrap();
        let out = sab_forward(&mut t, h, &mask, pos, &refs, 1.0, DropoutMode::Eval, None).unwrap();
        t.value(out.preference).to_vec()
    };
    let base = run(&hv);
    // garbage in the padded rows, including a swap of the two padded slots
    hv[0..d].iter_mut().for_each(|v| *v = 99.0);
    hv[d..2 * d].iter_mut().for_each(|v| *v = -42.0);
    let poisoned = run(&hv);
    assert!(max_abs_diff(&base, &poisoned) < 1e-12);
}

#[test]
fn attention_rows_are_distributions_over_valid_keys() {
    let (n, d) = (6, 4);
    let p = tiny_params(d, 2, 2, 14);
    let mask = [false, false, true, true, true, true];
    let mut rng = seeded(15);
    let hv = rand_vals(&mut rng, n * d, -1.0, 1.0);
    let pv = rand_vals(&mut rng, n * d, -1.0, 1.0);

    let mut t = Tape::new();
    let h = t.constant(n, d, hv).unwrap();
    let pos = t.constant(n, d, pv).unwrap();
    let refs = p.enter(&mut t).unwrap();
    let mut probes = Vec::new();
    sab_forward(&mut t, h, &mask, pos, &refs, 1.0, DropoutMode::Eval, Some(&mut probes)).unwrap();
    assert_eq!(probes.len(), 4); // 2 blocks x 2 heads
    for probe in &probes {
        for i in 0..n {
            let row = &probe.weights[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (j, &w) in row.iter().enumerate() {
                if !mask[j] {
                    assert_eq!(w, 0.0, "padded key {j} got weight {w}");
                }
            }
        }
    }
}

#[test]
fn all_padded_input_is_rejected() {
    let p = tiny_params(2, 1, 1, 16);
    let mut t = Tape::new();
    let h = t.constant(2, 2, vec![0.0; 4]).unwrap();
    let pos = t.constant(2, 2, vec![0.0; 4]).unwrap();
    let refs = p.enter(&mut t).unwrap();
    let err = sab_forward(&mut t, h, &[false, false], pos, &refs, 1.0, DropoutMode::Eval, None).unwrap_err();
    assert!(matches!(err, NumericsError::InvalidInput { op: "sab_forward", .. }));
}

fn loss_of(z: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, items: &[usize]) -> f64 {
    let b = z.len();
    let d = z[0].len();
    let mut t = Tape::new();
    let zr = t.constant(b, d, z.concat()).unwrap();
    let tr = t.constant(b, d, targets.concat()).unwrap();
    let loss = short_cl_loss(&mut t, zr, tr, items).unwrap();
    t.value(loss)[0]
}

#[test]
fn equal_similarities_give_ln_b() {
    // z_u . h_v identical everywhere: softmax rows uniform, loss = ln B
    for b in [2usize, 4, 8] {
        let z = vec![vec![1.0, 0.0]; b];
        let targets = vec![vec![0.7, 0.3]; b];
        let items: Vec<usize> = (1..=b).collect();
        let loss = loss_of(z, targets, &items);
        assert!((loss - (b as f64).ln()).abs() < 1e-9, "B={b}: {loss}");
    }
}

#[test]
fn dominant_positive_drives_loss_to_zero() {
    let z = vec![vec![30.0, 0.0], vec![0.0, 30.0]];
    let targets = vec![vec![30.0, 0.0], vec![0.0, 30.0]];
    let loss = loss_of(z, targets, &[1, 2]);
    assert!(loss < 1e-9, "{loss}");
}

/// Dot-product matrix diag(2): per-instance loss is -ln(e^2 / (e^2 + 2)).
#[test]
fn hand_set_dot_products_match_closed_form() {
    let z = vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]];
    let targets = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let loss = loss_of(z, targets, &[1, 2, 3]);
    let expected = -((2.0f64).exp() / ((2.0f64).exp() + 2.0)).ln();
    assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    assert!((expected - 0.2395).abs() < 1e-4);
}

#[test]
fn batch_order_invariance() {
    let z = vec![vec![0.3, 1.1], vec![-0.4, 0.2], vec![0.9, -0.8]];
    let targets = vec![vec![0.5, 0.5], vec![1.0, -1.0], vec![-0.2, 0.4]];
    let a = loss_of(z.clone(), targets.clone(), &[1, 2, 3]);
    let perm = [2usize, 0, 1];
    let zp: Vec<Vec<f64>> = perm.iter().map(|&i| z[i].clone()).collect();
    let tp: Vec<Vec<f64>> = perm.iter().map(|&i| targets[i].clone()).collect();
    let b = loss_of(zp, tp, &[3, 1, 2]);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn loss_positive_and_monotone_in_positive_similarity() {
    let targets = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let weak = loss_of(vec![vec![0.2, 0.0], vec![0.0, 0.2]], targets.clone(), &[1, 2]);
    let strong = loss_of(vec![vec![1.5, 0.0], vec![0.0, 1.5]], targets, &[1, 2]);
    assert!(weak > 0.0 && strong > 0.0);
    assert!(strong < weak);
}

#[test]
fn colliding_targets_are_excluded_from_negatives() {
    // both instances target the same item: each has no negatives left,
    // so the loss collapses to zero
    let z = vec![vec![0.4, 0.6], vec![-1.0, 0.3]];
    let targets = vec![vec![0.2, 0.1], vec![0.2, 0.1]];
    let loss = loss_of(z, targets, &[7, 7]);
    assert!(loss.abs() < 1e-12, "{loss}");
}

#[test]
fn batch_of_one_is_rejected() {
    let mut t = Tape::new();
    let z = t.constant(1, 2, vec![1.0, 0.0]).unwrap();
    let tg = t.constant(1, 2, vec![1.0, 0.0]).unwrap();
    assert!(short_cl_loss(&mut t, z, tg, &[1]).is_err());
}

/// Joint gradient check of the encoder plus contrastive loss at toy scale
/// (d=8, n=6, B=3), dropout off.
#[test]
fn sab_and_loss_grad_check() {
    let (n, d, b) = (6usize, 8usize, 3usize);
    let params = tiny_params(d, 1, 2, 44);
    let mut rng = seeded(45);

    let mut inputs = Vec::new();
    inputs.push(Tensor::new(b * n, d, rand_vals(&mut rng, b * n * d, -0.8, 0.8))); // stacked H
    inputs.push(Tensor::new(n, d, rand_vals(&mut rng, n * d, -0.5, 0.5))); // positions
    inputs.push(Tensor::new(b, d, rand_vals(&mut rng, b * d, -0.8, 0.8))); // target embeddings
    let mut param_tensors = Vec::new();
    params.visit(&mut |p: &Param| {
        param_tensors.push(Tensor::new(p.rows, p.cols, p.values.clone()));
    });
    inputs.extend(param_tensors);

    let mask = [true, false, true, true, true, true];
    let err = grad_check(
        move |t, refs| {
            // rebuild the refs structure from the flat leaf list
            let mut k = 3;
            let blocks = vec![SabBlockRefs {
                wq: vec![refs[k], refs[k + 1]],
                wk: vec![refs[k + 2], refs[k + 3]],
                wv: vec![refs[k + 4], refs[k + 5]],
                wo: refs[k + 6],
                ffn_w1: refs[k + 7],
                ffn_b1: refs[k + 8],
                ffn_w2: refs[k + 9],
                ffn_b2: refs[k + 10],
                ln1_gain: refs[k + 11],
                ln1_bias: refs[k + 12],
                ln2_gain: refs[k + 13],
                ln2_bias: refs[k + 14],
            }];
            k += 15;
            let _ = k;
            let sab = SabRefs { blocks, heads: 2 };
            let mut prefs = Vec::with_capacity(b);
            for u in 0..b {
                let h = t.row_slice(refs[0], u * n, (u + 1) * n)?;
                let out = sab_forward(t, h, &mask, refs[1], &sab, 0.5, DropoutMode::Train, None)?;
                prefs.push(out.preference);
            }
            let z = t.concat_rows(&prefs)?;
            short_cl_loss(t, z, refs[2], &[1, 2, 3])
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}
