use alloc::vec;
use alloc::vec::Vec;

use super::gradcheck::check;
use super::loss::{self, Target};
use super::*;
use crate::rng::RngSeed;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut RngSeed::new(seed, 0).rng())
}

/// Scalar probe `mean(x ⊙ w)` with a fixed random `w`, sensitive to every element of `x`.
fn probe(g: &mut Graph, x: Var, seed: u64) -> Var {
    let w = randn(g.value(x).shape(), seed ^ 0xABCD);
    let w = g.constant(w);
    let p = g.mul(x, w).unwrap();
    g.mean(p)
}

#[test]
fn linear_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let x = g.constant(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let w = g.constant(Tensor::from_rows(&[vec![2.0], vec![3.0]]).unwrap());
    let b = g.constant(Tensor::vector(vec![1.0]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[6.0]);

    let w = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.matmul(x, w), Err(crate::Error::Contract(_))));
}

#[test]
fn linear_gradient_matches_finite_differences() {
    let inputs = [randn(&[3, 4], 1), randn(&[4, 5], 2), randn(&[5], 3)];
    let errs = check(&inputs, |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        probe(g, y, 9)
    });
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let y = g.layer_norm(x, gamma, beta, 1e-6).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let x = g.constant(Tensor::vector(vec![-1.0, 1.0]));
    let gamma = g.constant(Tensor::full(&[2], 1.0));
    let beta = g.constant(Tensor::zeros(&[2]));
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    let d = g.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let inputs = [randn(&[2, 5], 4), randn(&[5], 5), randn(&[5], 6)];
    let errs = check(&inputs, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-6).unwrap();
        probe(g, y, 10)
    });
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn elementwise_ops_gradients() {
    let inputs = [randn(&[3, 4], 11), randn(&[3, 4], 12)];
    let errs = check(&inputs, |g, v| {
        let a = g.gelu(v[0]);
        let b = g.softmax(v[1]);
        let c = g.mul(a, b).unwrap();
        let s = g.sigmoid(c);
        let d = g.sub(s, a).unwrap();
        let e = g.scale(d, 0.7);
        let f = g.add_n(&[e, b, a]).unwrap();
        probe(g, f, 13)
    });
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn row_ops_gradients() {
    let inputs = [randn(&[3, 4], 14), randn(&[2, 4], 15)];
    let errs = check(&inputs, |g, v| {
        let cat = g.concat_rows(&[v[0], v[1]]).unwrap();
        let sl = g.slice_rows(cat, 1, 3).unwrap();
        let ga = g.gather_rows(cat, &[4, 0, 4, 2]).unwrap();
        let ga = g.slice_rows(ga, 0, 3).unwrap();
        let rd = g.row_dot(sl, ga).unwrap();
        probe(g, rd, 16)
    });
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let inputs = [randn(&[5, 12], 17)];
    let errs = check(&inputs, |g, v| {
        let y = g.attention(v[0], 2).unwrap();
        probe(g, y, 18)
    });
    assert!(errs[0] < 1e-4, "{errs:?}");
}

fn block_params(width: usize, heads: usize, seed: u64) -> (ParamSet, AttentionBlock) {
    let mut params = ParamSet::new();
    let mut rng = RngSeed::new(seed, 0).rng();
    let block = AttentionBlock::new(&mut params, "b", width, heads, &mut rng).unwrap();
    // Larger weights than the training init so every path carries signal.
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    (params, block)
}

#[test]
fn block_zero_weights_is_identity() {
    let (mut params, block) = block_params(8, 2, 1);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = randn(&[4, 8], 2);
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &bound, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn block_preserves_shape() {
    let (params, block) = block_params(64, 8, 3);
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(randn(&[9 + 196, 64], 4));
    let y = block.forward(&mut g, &bound, x).unwrap();
    assert_eq!(g.value(y).shape(), &[205, 64]);
}

#[test]
fn block_rejects_bad_heads() {
    let mut params = ParamSet::new();
    let mut rng = RngSeed::new(0, 0).rng();
    assert!(AttentionBlock::new(&mut params, "b", 10, 3, &mut rng).is_err());
}

#[test]
fn block_gradient_matches_finite_differences() {
    let (params, block) = block_params(8, 2, 5);
    let mut inputs = vec![randn(&[4, 8], 6)];
    inputs.extend(params.tensors().iter().cloned());
    let errs = check(&inputs, |g, v| {
        let bound = Bound::from_vars(v[1..].to_vec());
        let y = block.forward(g, &bound, v[0]).unwrap();
        probe(g, y, 7)
    });
    assert!(errs.iter().all(|&e| e < 1e-3), "{errs:?}");
}

#[test]
fn softmax_rows_normalized() {
    let mut g = Graph::new();
    let x = g.constant(randn(&[6, 7], 8));
    let s = g.softmax(x);
    for r in 0..6 {
        let row = g.value(s).row(r);
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn loss_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::vector(vec![0.3; 5]));
    let ce = loss::cross_entropy(&mut g, z, 2).unwrap();
    assert!((g.scalar(ce) - libm::log(5.0)).abs() < 1e-12);
    assert!(loss::cross_entropy(&mut g, z, 5).is_err());

    let x = g.constant(randn(&[3, 2], 9));
    let l = loss::l1(&mut g, x, x).unwrap();
    assert_eq!(g.scalar(l), 0.0);
}

#[test]
fn eql_with_zero_lambda_reduces_to_ce_and_bce() {
    let z = randn(&[6], 20);
    let freqs = [0.5, 0.2, 0.1, 0.1, 0.05, 0.05];
    let mut g = Graph::new();
    let zv = g.leaf(z.clone(), true);
    let e = loss::eql(&mut g, zv, &Target::Class(3), &freqs, 0.0).unwrap();
    let c = loss::cross_entropy(&mut g, zv, 3).unwrap();
    assert!((g.scalar(e) - g.scalar(c)).abs() < 1e-12);

    let y = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let e = loss::eql(&mut g, zv, &Target::MultiLabel(y.clone()), &freqs, 0.0).unwrap();
    let b = loss::binary_cross_entropy(&mut g, zv, &y).unwrap();
    assert!((g.scalar(e) - g.scalar(b)).abs() < 1e-12);
}

#[test]
fn eql_suppresses_rare_negative_gradients() {
    let freqs = [0.7, 0.25, 0.05];
    let mut g = Graph::new();
    let z = g.leaf(Tensor::vector(vec![0.1, -0.4, 0.9]), true);
    let l = loss::eql(&mut g, z, &Target::Class(0), &freqs, 0.1).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(z).unwrap();
    assert_eq!(grad[2], 0.0);
    assert!(grad[1] > 0.0);
    assert!(grad[0] < 0.0);

    // A rare class that is the ground truth keeps its gradient.
    let mut g = Graph::new();
    let z = g.leaf(Tensor::vector(vec![0.1, -0.4, 0.9]), true);
    let l = loss::eql(&mut g, z, &Target::Class(2), &freqs, 0.1).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(z).unwrap()[2] < 0.0);

    let mut g = Graph::new();
    let z = g.leaf(Tensor::vector(vec![0.1, -0.4, 0.9]), true);
    let l = loss::eql(&mut g, z, &Target::MultiLabel(vec![1.0, 0.0, 0.0]), &freqs, 0.1).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(z).unwrap()[2], 0.0);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let freqs = [0.4, 0.3, 0.2, 0.1];
    let inputs = [randn(&[4], 21)];
    let cases: Vec<fn(&mut Graph, Var) -> Var> = vec![
        |g, z| loss::cross_entropy(g, z, 1).unwrap(),
        |g, z| loss::binary_cross_entropy(g, z, &[1.0, 0.0, 1.0, 0.0]).unwrap(),
        |g, z| loss::eql(g, z, &Target::Class(0), &[0.4, 0.3, 0.2, 0.1], 0.25).unwrap(),
        |g, z| loss::eql(g, z, &Target::MultiLabel(vec![0.0, 1.0, 0.0, 1.0]), &[0.4, 0.3, 0.2, 0.1], 0.25).unwrap(),
    ];
    let _ = freqs;
    for f in cases {
        let errs = check(&inputs, |g, v| f(g, v[0]));
        assert!(errs[0] < 1e-4, "{errs:?}");
    }
    let inputs = [randn(&[3, 2], 22), randn(&[3, 2], 23)];
    let errs = check(&inputs, |g, v| loss::l1(g, v[0], v[1]).unwrap());
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn lr_schedule_endpoints() {
    let s = LrSchedule::WarmupCosine { base_lr: 1e-3, warmup_steps: 10, total_steps: 100, final_lr_fraction: 0.01 };
    assert_eq!(s.lr_at(0), 0.0);
    assert!((s.lr_at(10) - 1e-3).abs() < 1e-15);
    assert!((s.lr_at(100) - 1e-5).abs() < 1e-15);
    for step in 10..100 {
        assert!(s.lr_at(step + 1) <= s.lr_at(step));
    }
    let c = LrSchedule::WarmupConstant { base_lr: 1.5e-5, warmup_steps: 4 };
    assert_eq!(c.lr_at(2), 0.75e-5);
    assert_eq!(c.lr_at(1_000_000), 1.5e-5);
}

#[test]
fn adam_first_step_hand_computed() {
    let mut params = ParamSet::new();
    let id = params.add("w", Tensor::scalar(0.5));
    let lr = 0.1;
    let mut adam = Adam::new(&params, LrSchedule::WarmupConstant { base_lr: lr, warmup_steps: 0 });
    adam.step(&mut params, &[vec![1.0]]).unwrap();
    // m = 0.1, v = 0.001; bias-corrected m̂ = 1, v̂ = 1 → Δ = −lr / (1 + 1e-8).
    let expected = 0.5 - lr / (1.0 + 1e-8);
    assert!((params.get(id).data()[0] - expected).abs() < 1e-15);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_rejects_nan_gradient_without_mutation() {
    let mut params = ParamSet::new();
    params.add("w", Tensor::vector(vec![1.0, 2.0]));
    let mut adam = Adam::new(&params, LrSchedule::WarmupConstant { base_lr: 0.1, warmup_steps: 0 });
    let before = params.clone();
    let err = adam.step(&mut params, &[vec![0.5, f64::NAN]]).unwrap_err();
    assert!(matches!(err, crate::Error::NumericFault(_)));
    assert_eq!(params, before);
    assert_eq!(adam.step_count(), 0);
}

#[test]
fn adam_refuses_steps_past_schedule() {
    let mut params = ParamSet::new();
    params.add("w", Tensor::scalar(1.0));
    let mut adam = Adam::new(&params, LrSchedule::WarmupCosine { base_lr: 0.1, warmup_steps: 0, total_steps: 1, final_lr_fraction: 0.0 });
    adam.step(&mut params, &[vec![1.0]]).unwrap();
    assert!(adam.step(&mut params, &[vec![1.0]]).is_err());
}

#[test]
fn gradient_clipping_bounds_update_direction() {
    let mut params = ParamSet::new();
    params.add("w", Tensor::vector(vec![0.0, 0.0]));
    let mut adam = Adam::new(&params, LrSchedule::WarmupConstant { base_lr: 0.1, warmup_steps: 0 });
    adam.clip_norm = Some(1.0);
    adam.step(&mut params, &[vec![300.0, 400.0]]).unwrap();
    let d = params.tensors()[0].data();
    assert!(d[0] < 0.0 && d[1] < 0.0);
}
