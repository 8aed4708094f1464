use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use super::rng::seeded_rng;
use super::*;
use crate::error::Error;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded_rng(&[seed, shape.len() as u64]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of every input of `f`; returns the worst
/// relative error.
fn fd_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).data()[0]
    };
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.dims2();
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get2(i, p) * b.get2(p, j);
            }
            out[i * n + j] = s;
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

#[test]
fn matmul_identity_and_selector() {
    let mut t = Tape::new();
    let i2 = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let m = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let out = t.matmul(i2, m).unwrap();
    assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let sel = t.constant(Tensor::from_rows(&[vec![1.0, 0.0]]));
    let col = t.constant(Tensor::from_rows(&[vec![2.0], vec![5.0]]));
    let out = t.matmul(sel, col).unwrap();
    assert_eq!(t.value(out).shape(), &[1, 1]);
    assert_eq!(t.value(out).data(), &[2.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random_tensor(&[3, 4], 1);
    let b = random_tensor(&[4, 2], 2);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let out = t.matmul(va, vb).unwrap();
    assert!(t.value(out).max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]));
    let y = t.softmax_rows(x, None).unwrap();
    for v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.constant(Tensor::from_rows(&[vec![5.0]]));
    let y = t.softmax_rows(x, None).unwrap();
    assert_eq!(t.value(y).data(), &[1.0]);

    // 50-digit mpmath evaluation of softmax([1, 2, 3]).
    let expected = [
        0.0900305731703804579980221,
        0.2447284710547976524729596,
        0.6652409557748218895290183,
    ];
    let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]));
    let y = t.softmax_rows(x, None).unwrap();
    for (v, e) in t.value(y).data().iter().zip(expected) {
        assert!((v - e).abs() < 1e-14);
    }
}

#[test]
fn softmax_masks_and_degenerate_rows() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_rows(&[vec![3.0, -1.0, 7.0], vec![0.5, 0.5, 100.0]]));
    let mask = [true, false, true, true, true, false];
    let y = t.softmax_rows(x, Some(&mask)).unwrap();
    let out = t.value(y);
    assert_eq!(out.get2(0, 1), 0.0);
    assert_eq!(out.get2(1, 2), 0.0);
    assert!((out.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((out.get2(1, 0) - 0.5).abs() < 1e-15);

    let bad = [false, false, false, true, true, true];
    assert!(matches!(
        t.softmax_rows(x, Some(&bad)),
        Err(Error::DegenerateRow { row: 0, .. })
    ));
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![4.0; 5]));
    let g = t.constant(Tensor::filled(&[5], 1.0));
    let b = t.constant(Tensor::zeros(&[5]));
    let y = t.layer_norm(x, g, b).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));

    let x = t.constant(Tensor::vector(vec![1.0, -1.0]));
    let g = t.constant(Tensor::filled(&[2], 1.0));
    let b = t.constant(Tensor::zeros(&[2]));
    let y = t.layer_norm(x, g, b).unwrap();
    // mean 0, variance 1, so each entry is ±1/sqrt(1 + 1e-5).
    let e = 0.9999950000374996875027344;
    assert!((t.value(y).data()[0] - e).abs() < 1e-15);
    assert!((t.value(y).data()[1] + e).abs() < 1e-15);

    let x = t.constant(random_tensor(&[3, 4], 9));
    let g = t.constant(Tensor::zeros(&[4]));
    let bias = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]);
    let b = t.constant(bias.clone());
    let y = t.layer_norm(x, g, b).unwrap();
    for r in 0..3 {
        assert_eq!(t.value(y).row(r), bias.data());
    }

    let e = t.constant(Tensor::zeros(&[2, 0]));
    let g0 = t.constant(Tensor::zeros(&[0]));
    assert!(matches!(t.layer_norm(e, g0, g0), Err(Error::Dimension { .. })));
}

#[test]
fn activations_and_dropout() {
    let mut t = Tape::training();
    let x = t.constant(Tensor::vector(vec![-1.0, -3.0, 3.0]));
    let l = t.leaky_relu(x, 0.2);
    assert_eq!(t.value(l).data()[0], -0.2);
    let r = t.relu(x);
    assert_eq!(t.value(r).data(), &[0.0, 0.0, 3.0]);

    let key = DropoutKey { seed: 1, step: 0, site: 0 };
    assert_eq!(t.dropout(x, 0.0, key).unwrap(), x);
    assert!(matches!(t.dropout(x, 1.0, key), Err(Error::Config { .. })));

    let big = t.constant(Tensor::filled(&[10_000], 1.0));
    let d = t.dropout(big, 0.25, key).unwrap();
    let vals = t.value(d).data();
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
    let kept = vals.iter().filter(|&&v| v != 0.0).count();
    assert!((7200..7800).contains(&kept), "kept {kept}");
    // Same key, same mask.
    let d2 = t.dropout(big, 0.25, key).unwrap();
    assert_eq!(t.value(d).data(), t.value(d2).data());

    t.set_training(false);
    assert_eq!(t.dropout(big, 0.25, key).unwrap(), big);
}

#[test]
fn backward_trivial_cases() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let xv = vec![1.5, -2.0, 0.25];
    let yv = vec![-0.5, 4.0, 2.0];
    let x = t.param(Tensor::vector(xv.clone()));
    let y = t.param(Tensor::vector(yv.clone()));
    let p = t.mul(x, y).unwrap();
    let dot = t.sum(p);
    t.backward(dot).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), yv.as_slice());
    assert_eq!(t.grad(y).unwrap().data(), xv.as_slice());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
}

#[test]
fn grads_exist_iff_requires_grad_and_accumulate() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let c = t.constant(Tensor::vector(vec![3.0, 4.0]));
    let p = t.mul(x, c).unwrap();
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert!(t.grad(c).is_none());
    assert_eq!(t.grad(x).unwrap().data(), &[3.0, 4.0]);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[6.0, 8.0]);
    t.zero_grad();
    assert!(t.grad(x).is_none());
}

#[test]
fn fan_out_accumulates_additively() {
    // loss = sum(x) + sum(x) + sum(2x) → grad 4 everywhere
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![0.3, -0.7]));
    let a = t.sum(x);
    let b = t.sum(x);
    let x2 = t.scale(x, 2.0);
    let c = t.sum(x2);
    let ab = t.add(a, b).unwrap();
    let l = t.add(ab, c).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[4.0, 4.0]);
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let a = random_tensor(&[3, 4], 11);
    let b = random_tensor(&[4, 2], 12);
    let w = random_tensor(&[5, 4], 13);
    let v = random_tensor(&[4], 14);

    assert!(fd_check(&[a.clone(), b.clone()], |t, x| {
        let m = t.matmul(x[0], x[1]).unwrap();
        let s = t.mul(m, m).unwrap();
        t.sum(s)
    }) < 1e-7);
    assert!(fd_check(&[a.clone(), w.clone(), v.clone()], |t, x| {
        let l = t.linear(x[0], x[1]).unwrap();
        let l = t.leaky_relu(l, 0.2);
        let r = t.relu(l);
        let q = t.mul(r, l).unwrap();
        let s = t.sum(q);
        let b = t.add_bias(x[0], x[2]).unwrap();
        let bb = t.mul(b, b).unwrap();
        let s2 = t.sum(bb);
        t.add(s, s2).unwrap()
    }) < 1e-6);
    let gain = random_tensor(&[4], 15);
    assert!(fd_check(&[a.clone(), gain, v.clone()], |t, x| {
        let y = t.layer_norm(x[0], x[1], x[2]).unwrap();
        let c = t.constant(random_tensor(&[3, 4], 16));
        let p = t.mul(y, c).unwrap();
        t.sum(p)
    }) < 1e-6);
    assert!(fd_check(&[a.clone()], |t, x| {
        let mask = [true, false, true, true, true, true, true, true, false, false, true, false];
        let y = t.softmax_rows(x[0], Some(&mask)).unwrap();
        let c = t.constant(random_tensor(&[3, 4], 17));
        let p = t.mul(y, c).unwrap();
        t.sum(p)
    }) < 1e-6);
    let scores = random_tensor(&[6, 1], 18);
    let vals = random_tensor(&[6, 3], 19);
    assert!(fd_check(&[scores, vals], |t, x| {
        let seg: Arc<[usize]> = vec![0, 2, 0, 2, 2, 1].into();
        let alpha = t.segment_softmax(x[0], seg.clone(), 3).unwrap();
        let wv = t.scale_rows(x[1], alpha).unwrap();
        let agg = t.scatter_add_rows(wv, seg, 4).unwrap();
        let g = t.gather_rows(agg, vec![2, 2, 0, 3].into()).unwrap();
        let c = t.constant(random_tensor(&[4, 3], 20));
        let p = t.mul(g, c).unwrap();
        let rs = t.row_sum(p).unwrap();
        let sq = t.mul(rs, rs).unwrap();
        t.sum(sq)
    }) < 1e-6);
    assert!(fd_check(&[a.clone(), b], |t, x| {
        let bt = t.reshape(x[1], vec![2, 4]).unwrap();
        let cat = t.concat_cols(&[x[0], x[0]]).unwrap();
        let sl = t.slice_cols(cat, 3, 4).unwrap();
        let lin = t.linear(sl, bt).unwrap();
        let sq = t.mul(lin, lin).unwrap();
        t.sum(sq)
    }) < 1e-6);
    let logits = random_tensor(&[4, 3], 21);
    assert!(fd_check(&[logits.clone()], |t, x| t
        .cross_entropy(x[0], vec![(0, 2), (1, 0), (3, 1)], 0.5)
        .unwrap())
        < 1e-6);
    let col = random_tensor(&[4, 1], 22);
    assert!(fd_check(&[col], |t, x| t
        .bce_with_logits(x[0], vec![(0, 1.0), (2, 0.0), (3, 1.0)], 1.0 / 3.0)
        .unwrap())
        < 1e-6);
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let x = random_tensor(&[5, 4], 30);
    let mut t = Tape::training();
    let v = t.param(x);
    let key = DropoutKey { seed: 3, step: 1, site: 2 };
    let d = t.dropout(v, 0.5, key).unwrap();
    let s = t.sum(d);
    t.backward(s).unwrap();
    let out = t.value(d).data().to_vec();
    let g = t.grad(v).unwrap().data();
    for (o, gi) in out.iter().zip(g) {
        if *gi == 0.0 {
            assert_eq!(*o, 0.0);
        } else {
            assert_eq!(*gi, 2.0);
        }
    }
}

/// Random composite graph: each step applies one primitive to the running
/// value or combines it with a fresh input.
fn composite(t: &mut Tape, x: &[Var], ops: &[u8]) -> Var {
    let mut cur = x[0];
    let g = t.constant(Tensor::vector(vec![1.1, 0.9, 1.3]));
    let b = t.constant(Tensor::vector(vec![0.1, -0.2, 0.05]));
    for (i, op) in ops.iter().enumerate() {
        let other = x[1 + i % (x.len() - 2)];
        cur = match op % 8 {
            0 => t.linear(cur, x[x.len() - 1]).unwrap(),
            1 => t.leaky_relu(cur, 0.2),
            2 => t.layer_norm(cur, g, b).unwrap(),
            3 => t.add(cur, other).unwrap(),
            4 => t.mul(cur, other).unwrap(),
            5 => t.softmax_rows(cur, None).unwrap(),
            6 => {
                let c = t.concat_cols(&[cur, other]).unwrap();
                t.slice_cols(c, 1, 3).unwrap()
            }
            _ => t.scale(cur, -0.7),
        };
    }
    let sq = t.mul(cur, cur).unwrap();
    t.sum(sq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composite_graphs_match_finite_differences(
        ops in proptest::collection::vec(0u8..8, 1..=10),
        seed in 0u64..10_000,
    ) {
        let inputs = vec![
            random_tensor(&[2, 3], seed),
            random_tensor(&[2, 3], seed + 1),
            random_tensor(&[2, 3], seed + 2),
            random_tensor(&[3, 3], seed + 3),
        ];
        let worst = fd_check(&inputs, |t, x| composite(t, x, &ops));
        prop_assert!(worst < 1e-4, "worst relative error {}", worst);
    }

    #[test]
    fn masked_softmax_rows_are_distributions(
        vals in proptest::collection::vec(-30.0f64..30.0, 12),
        mask in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let mut mask = mask;
        for r in 0..3 {
            if !mask[r * 4..r * 4 + 4].iter().any(|&m| m) {
                mask[r * 4] = true;
            }
        }
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 4, vals).unwrap());
        let y = t.softmax_rows(x, Some(&mask)).unwrap();
        let out = t.value(y);
        for r in 0..3 {
            let mut total = 0.0;
            for c in 0..4 {
                let w = out.get2(r, c);
                if mask[r * 4 + c] { prop_assert!(w >= 0.0); } else { prop_assert_eq!(w, 0.0); }
                total += w;
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_inputs_give_bitwise_identical_results() {
    let run = || {
        let inputs = [random_tensor(&[2, 3], 5), random_tensor(&[2, 3], 6), random_tensor(&[3, 3], 7)];
        let mut t = Tape::training();
        let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
        let d = t
            .dropout(vars[0], 0.3, DropoutKey { seed: 9, step: 4, site: 1 })
            .unwrap();
        let vars = [d, vars[1], vars[2]];
        let loss = composite(&mut t, &vars, &[0, 2, 5, 3, 1, 4, 6]);
        t.backward(loss).unwrap();
        let grads: Vec<u64> = vars
            .iter()
            .flat_map(|v| t.grad(*v).map(|g| g.data().to_vec()).unwrap_or_default())
            .map(f64::to_bits)
            .collect();
        (t.value(loss).data()[0].to_bits(), grads)
    };
    assert_eq!(run(), run());
}
