use proptest::prelude::*;

use super::*;
use crate::Error;

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn mat(g: &mut Graph, rows: &[&[f32]]) -> Var {
    g.leaf(&Tensor::from_rows(rows).unwrap())
}

#[test]
fn matmul_worked_examples() {
    let mut g = Graph::new();
    let a = mat(&mut g, &[&[1.0, 2.0], &[3.0, 4.0]]);
    let eye = g.leaf(&Tensor::identity(2).unwrap());
    let zeros = g.leaf(&Tensor::zeros([2, 2]).unwrap());
    let b = mat(&mut g, &[&[5.0, 6.0], &[7.0, 8.0]]);

    let id = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(id), &[1.0, 2.0, 3.0, 4.0]);
    let z = g.matmul(a, zeros).unwrap();
    assert_eq!(g.value(z), &[0.0; 4]);
    // Hand-expanded: [1·5+2·7, 1·6+2·8; 3·5+4·7, 3·6+4·8]
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::zeros([2, 3]).unwrap());
    let b = g.leaf(&Tensor::zeros([2, 3]).unwrap());
    let err = g.matmul(a, b).unwrap_err();
    match &err {
        Error::Shape { lhs, rhs, .. } => {
            assert_eq!(lhs, &[2, 3]);
            assert_eq!(rhs, &[2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

fn softmax_oracle(xs: &[f64]) -> Vec<f64> {
    let z: f64 = xs.iter().map(|v| v.exp()).sum();
    xs.iter().map(|v| v.exp() / z).collect()
}

#[test]
fn softmax_worked_examples() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y), &[0.5, 0.5]);

    let oracle = softmax_oracle(&[1.0, 2.0, 3.0]);
    let expected = [0.09003, 0.24473, 0.66524];
    for (o, e) in oracle.iter().zip(expected) {
        assert!((o - e).abs() < 5e-6);
    }
    let x = g.leaf(&Tensor::vector(&[1.0, 2.0, 3.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    for (v, o) in g.value(y).iter().zip(&oracle) {
        assert!((*v as f64 - o).abs() < 1e-6);
    }

    let shifted = g.leaf(&Tensor::vector(&[101.0, 102.0, 103.0]).unwrap());
    let ys = g.softmax(shifted, 0).unwrap();
    assert!(close(g.value(y), g.value(ys), 1e-6));
}

#[test]
fn softmax_axis_zero_normalises_columns() {
    let mut g = Graph::new();
    let x = mat(&mut g, &[&[1.0, 5.0], &[3.0, -1.0]]);
    let y = g.softmax(x, 0).unwrap();
    let v = g.value(y);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-6);
    assert!((v[1] + v[3] - 1.0).abs() < 1e-6);
    assert!(g.softmax(x, 2).is_err());
}

#[test]
fn masked_softmax_rejects_fully_masked_rows() {
    let mut g = Graph::new();
    let x = mat(&mut g, &[&[1.0, 2.0], &[3.0, 4.0]]);
    let y = g.masked_softmax(x, &[true, false, true, true]).unwrap();
    assert_eq!(&g.value(y)[..2], &[1.0, 0.0]);
    assert!(g.masked_softmax(x, &[true, true, false, false]).is_err());
}

#[test]
fn cross_entropy_worked_examples() {
    let mut g = Graph::new();
    let uniform = g.leaf(&Tensor::zeros([3, 4]).unwrap());
    let l = g.cross_entropy(uniform, &[0, 3, 2], u32::MAX).unwrap();
    assert!((g.scalar(l).unwrap() - 4f32.ln()).abs() < 1e-6);

    let confident = mat(&mut g, &[&[0.0, 60.0, 0.0]]);
    let l = g.cross_entropy(confident, &[1], u32::MAX).unwrap();
    assert!(g.scalar(l).unwrap() < 1e-6);

    let expected = -softmax_oracle(&[1.0, 2.0, 3.0])[2].ln();
    assert!((expected - 0.40761).abs() < 5e-6);
    let x = mat(&mut g, &[&[1.0, 2.0, 3.0]]);
    let l = g.cross_entropy(x, &[2], u32::MAX).unwrap();
    assert!((g.scalar(l).unwrap() as f64 - expected).abs() < 1e-6);
}

#[test]
fn cross_entropy_ignores_positions_in_value_and_gradient() {
    let rows: &[&[f32]] = &[&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0]];
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_rows(rows).unwrap().with_grad());
    let l = g.cross_entropy(x, &[2, 0], 0).unwrap();
    assert!((g.scalar(l).unwrap() - 0.40761).abs() < 1e-5);
    let grads = g.backward(l).unwrap();
    assert_eq!(&grads.get(x).unwrap()[3..], &[0.0, 0.0, 0.0]);

    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_rows(rows).unwrap());
    assert!(g.cross_entropy(x, &[0, 0], 0).is_err());
    assert!(g.cross_entropy(x, &[7, 1], 0).is_err());
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot_over_n() {
    let rows: &[&[f32]] = &[&[0.2, -0.4, 1.1, 0.0], &[1.5, 0.3, -0.7, 0.9]];
    let targets = [2u32, 0];
    let x = Tensor::from_rows(rows).unwrap();

    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_grad());
    let l = g.cross_entropy(xv, &targets, u32::MAX).unwrap();
    let grads = g.backward(l).unwrap();
    let analytic = grads.get(xv).unwrap();

    // Closed form p - onehot, scaled by 1/n.
    for (r, &t) in targets.iter().enumerate() {
        let p = softmax_oracle(&rows[r].iter().map(|&v| v as f64).collect::<Vec<_>>());
        for c in 0..4 {
            let onehot = if c == t as usize { 1.0 } else { 0.0 };
            let want = (p[c] - onehot) / 2.0;
            assert!((analytic[r * 4 + c] as f64 - want).abs() < 1e-6);
        }
    }

    let report = finite_diff_check(
        |g, x| g.cross_entropy(x, &targets, u32::MAX),
        &x,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(report.passed(), "max rel err {}", report.max_rel_err());
}

#[test]
fn backward_square_and_tracking() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[3.0]).unwrap().with_grad());
    let frozen = g.leaf(&Tensor::vector(&[2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let y = g.mul(sq, frozen).unwrap();
    let half = g.scale(y, 0.5).unwrap();
    let loss = g.sum(half).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
    assert!(grads.get(frozen).is_none());

    let mut t = Tensor::vector(&[3.0]).unwrap();
    grads.apply_to(frozen, &mut t).unwrap();
    assert!(t.grad().is_none());
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[1.0, 2.0]).unwrap().with_grad());
    let y = g.scale(x, 2.0).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NotScalar(_))));
    let s = g.sum(y).unwrap();
    assert!(g.backward(s).is_ok());
    assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
}

#[test]
fn gradients_accumulate_across_shared_uses() {
    let w = Tensor::from_rows(&[[0.5f32, -1.0], [2.0, 0.25]]).unwrap().with_grad();
    let mut g = Graph::new();
    let wv = g.leaf(&w);
    let a = g.matmul(wv, wv).unwrap();
    let b = g.add(a, wv).unwrap();
    let s = g.sum(b).unwrap();
    let grads = g.backward(s).unwrap();

    let mut w = w;
    grads.apply_to(wv, &mut w).unwrap();
    grads.apply_to(wv, &mut w).unwrap();
    // ∂/∂W_ij sum(W·W + W) = rowsum_j(W) + colsum_i(W) + 1, by hand.
    let want_once = [3.0, 5.75, -0.25, 2.5];
    let got = w.grad().unwrap();
    for (g, e) in got.iter().zip(want_once) {
        assert!((g - 2.0 * e).abs() < 1e-6, "{got:?}");
    }
}

#[test]
fn non_finite_values_fail_fast() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[3e38]).unwrap());
    assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
}

#[test]
fn gradcheck_on_sum_is_exact() {
    let x = Tensor::from_rows(&[[0.3f32, -2.0, 5.0], [1.0, 0.0, -0.1]]).unwrap();
    let report = finite_diff_check(|g, x| g.sum(x), &x, 1e-3, 1e-3).unwrap();
    assert!(report.passed());
    assert!(report.max_rel_err() < 5e-4);
}

#[test]
fn gradcheck_on_one_layer_model() {
    // logits = relu(X·W1)·W2, loss = CE against fixed targets; check w.r.t. W1.
    let input = Tensor::from_rows(&[[0.5f32, -0.2, 0.9], [0.1, 0.4, -0.6]]).unwrap();
    let w2 = Tensor::from_rows(&[[0.3f32, -0.5, 0.2, 0.1], [0.7, 0.2, -0.3, 0.4]]).unwrap();
    let w1 = Tensor::from_rows(&[[0.25f32, -0.6], [0.8, 0.35], [-0.45, 0.6]]).unwrap();
    let f = |g: &mut Graph, w1: Var| {
        let x = g.leaf(&input);
        let w2 = g.leaf(&w2);
        let h = g.matmul(x, w1)?;
        let h = g.relu(h)?;
        let logits = g.matmul(h, w2)?;
        g.cross_entropy(logits, &[3, 1], u32::MAX)
    };
    let report = finite_diff_check(f, &w1, 1e-3, 1e-3).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
}

#[test]
fn gradcheck_flags_corrupted_gradient() {
    let x = Tensor::vector(&[0.5, -1.5, 2.0, 0.25]).unwrap();
    let f = |g: &mut Graph, x: Var| {
        let sq = g.mul(x, x)?;
        g.sum(sq)
    };
    let mut analytic: Vec<f32> = x.data().iter().map(|v| 2.0 * v).collect();
    let clean = compare_with_finite_diff(f, &x, &analytic, 1e-3, 1e-3).unwrap();
    assert!(clean.passed());

    analytic[1] += 0.5;
    analytic[3] *= -1.0;
    let report = compare_with_finite_diff(f, &x, &analytic, 1e-3, 1e-3).unwrap();
    assert!(!report.passed());
    let bad: Vec<usize> = report.failures().iter().map(|c| c.index).collect();
    assert_eq!(bad, vec![1, 3]);
}

#[test]
fn gradcheck_rejects_non_finite_objective() {
    let x = Tensor::vector(&[3e38]).unwrap();
    let err = finite_diff_check(|g, x| g.sum(x), &x, 1e38, 1e-3).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    assert!(finite_diff_check(|g, x| g.sum(x), &x, 0.0, 1e-3).is_err());
}

fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn matrix(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(-2.0f32..2.0, r * c))
    })
}

/// Random elementwise weights make `sum(w ⊙ y)` exercise every output entry.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> crate::Result<Var> {
    let n = g.value(y).len();
    let w: Vec<f32> = (0..n)
        .map(|i| ((i as f64 * 12.9898 + seed as f64 * 78.233).sin() * 0.5) as f32)
        .collect();
    let wv = g.constant(g.shape(y).to_vec(), w)?;
    let p = g.mul(y, wv)?;
    g.sum(p)
}

fn check(report: GradCheckReport) -> Result<(), TestCaseError> {
    prop_assert!(
        report.passed(),
        "max rel err {} at {:?}",
        report.max_rel_err(),
        report.failures().first()
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_slices_are_distributions((r, c, data) in matrix(8), axis in 0usize..2, shift in -50.0f32..50.0) {
        let mut g = Graph::new();
        let x = g.constant([r, c], data.clone()).unwrap();
        let y = g.softmax(x, axis).unwrap();
        let v = g.value(y).to_vec();
        prop_assert!(v.iter().all(|&p| p >= 0.0));
        if axis == 1 {
            for row in v.chunks(c) {
                prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        } else {
            for j in 0..c {
                let s: f32 = (0..r).map(|i| v[i * c + j]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        let xs = g.constant([r, c], data.iter().map(|v| v + shift).collect()).unwrap();
        let ys = g.softmax(xs, axis).unwrap();
        prop_assert!(close(&v, g.value(ys), 1e-5));
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in any::<u64>()) {
        let gen = |len: usize, salt: u64| -> Vec<f32> {
            (0..len).map(|i| (((i as u64 + 1) * 2654435761 ^ seed ^ salt) % 2000) as f32 / 500.0 - 2.0).collect()
        };
        let (a, b) = (gen(m * k, 1), gen(k * n, 2));
        let mut g = Graph::new();
        let av = g.constant([m, k], a.clone()).unwrap();
        let bv = g.constant([k, n], b.clone()).unwrap();
        let c = g.matmul(av, bv).unwrap();
        prop_assert!(close(g.value(c), &naive_matmul(&a, &b, m, k, n), 1e-5));
    }

    #[test]
    fn uniform_cross_entropy_is_log_vocab(n in 1usize..8, vocab in 2usize..64, seed in any::<u32>(), level in -5.0f32..5.0) {
        let targets: Vec<u32> = (0..n).map(|i| (seed as usize).wrapping_add(i * 7) as u32 % vocab as u32).collect();
        let mut g = Graph::new();
        let x = g.constant([n, vocab], vec![level; n * vocab]).unwrap();
        let l = g.cross_entropy(x, &targets, u32::MAX).unwrap();
        prop_assert!((g.scalar(l).unwrap() - (vocab as f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn gradcheck_matmul((r, c, data) in matrix(8), other in prop::collection::vec(-2.0f32..2.0, 64), seed in 0u64..1000) {
        let x = Tensor::new([r, c], data).unwrap();
        // Keep f(x) near unit scale so f32 round-off stays below the tolerance.
        let b: Vec<f32> = other.iter().take(c * 8).map(|v| v * 0.25).cycle().take(c * 5).collect();
        let brev: Vec<f32> = b.iter().rev().copied().collect();
        let f = |g: &mut Graph, x: Var| {
            let bv = g.constant([c, 5], b.clone())?;
            let y = g.matmul(x, bv)?;
            let bt = g.constant([c, 5], brev.clone())?;
            let z = g.matmul_nt(y, bt)?;
            weighted_sum(g, z, seed)
        };
        check(finite_diff_check(f, &x, 1e-3, 1e-3).unwrap())?;
        let f2 = |g: &mut Graph, x: Var| {
            let a = g.constant([5, c], b.clone())?;
            let y = g.matmul_nt(a, x)?;
            weighted_sum(g, y, seed)
        };
        check(finite_diff_check(f2, &x, 1e-3, 1e-3).unwrap())?;
    }

    #[test]
    fn gradcheck_elementwise((r, c, data) in matrix(8), seed in 0u64..1000) {
        let x = Tensor::new([r, c], data.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect()).unwrap();
        let f = |g: &mut Graph, x: Var| {
            let a = g.relu(x)?;
            let b = g.mul(a, x)?;
            let s = g.scale(b, 0.7)?;
            let t = g.add(s, x)?;
            let bias = g.constant([c], (0..c).map(|i| i as f32 * 0.1).collect())?;
            let u = g.add_row(t, bias)?;
            weighted_sum(g, u, seed)
        };
        check(finite_diff_check(f, &x, 1e-3, 1e-3).unwrap())?;
        let fb = |g: &mut Graph, b: Var| {
            let x = g.leaf(&x);
            let u = g.add_row(x, b)?;
            let m = g.mean(u)?;
            let w = weighted_sum(g, u, seed)?;
            g.add(m, w)
        };
        check(finite_diff_check(fb, &Tensor::new([c], vec![0.3; c]).unwrap(), 1e-3, 1e-3).unwrap())?;
    }

    #[test]
    fn gradcheck_softmax((r, c, data) in matrix(8), axis in 0usize..2, seed in 0u64..1000, mask_bits in any::<u64>()) {
        let x = Tensor::new([r, c], data).unwrap();
        let f = |g: &mut Graph, x: Var| {
            let y = g.softmax(x, axis)?;
            weighted_sum(g, y, seed)
        };
        check(finite_diff_check(f, &x, 1e-3, 1e-3).unwrap())?;
        let mut keep: Vec<bool> = (0..r * c).map(|i| (mask_bits >> (i % 64)) & 1 == 1).collect();
        for row in keep.chunks_mut(c) {
            row[0] = true;
        }
        let fm = |g: &mut Graph, x: Var| {
            let y = g.masked_softmax(x, &keep)?;
            weighted_sum(g, y, seed)
        };
        check(finite_diff_check(fm, &x, 1e-3, 1e-3).unwrap())?;
    }

    #[test]
    fn gradcheck_layer_norm((r, c, data) in matrix(8), seed in 0u64..1000) {
        prop_assume!(c >= 2);
        let x = Tensor::new([r, c], data).unwrap();
        let gain = Tensor::new([c], (0..c).map(|i| 0.5 + 0.1 * i as f32).collect()).unwrap();
        let bias = Tensor::new([c], (0..c).map(|i| 0.05 * i as f32).collect()).unwrap();
        let fx = |g: &mut Graph, x: Var| {
            let (gv, bv) = (g.leaf(&gain), g.leaf(&bias));
            let y = g.layer_norm(x, gv, bv, 1e-5)?;
            weighted_sum(g, y, seed)
        };
        // Rows with almost no spread make the normaliser ill-conditioned.
        let spread_ok = x.data().chunks(c).all(|row| {
            let m = row.iter().sum::<f32>() / c as f32;
            row.iter().map(|v| (v - m).powi(2)).sum::<f32>() / c as f32 > 0.05
        });
        if spread_ok {
            check(finite_diff_check(fx, &x, 1e-3, 1e-3).unwrap())?;
        }
        let fg = |g: &mut Graph, gv: Var| {
            let (xv, bv) = (g.leaf(&x), g.leaf(&bias));
            let y = g.layer_norm(xv, gv, bv, 1e-5)?;
            weighted_sum(g, y, seed)
        };
        check(finite_diff_check(fg, &gain, 1e-3, 1e-3).unwrap())?;
        let fbias = |g: &mut Graph, bv: Var| {
            let (xv, gv) = (g.leaf(&x), g.leaf(&gain));
            let y = g.layer_norm(xv, gv, bv, 1e-5)?;
            weighted_sum(g, y, seed)
        };
        check(finite_diff_check(fbias, &bias, 1e-3, 1e-3).unwrap())?;
    }

    #[test]
    fn gradcheck_indexing((r, c, data) in matrix(8), ids in prop::collection::vec(0usize..8, 1..8), seed in 0u64..1000) {
        let x = Tensor::new([r, c], data).unwrap();
        let ids: Vec<usize> = ids.into_iter().map(|i| i % r).collect();
        let f = |g: &mut Graph, x: Var| {
            let rows = g.gather_rows(x, &ids)?;
            let left = g.slice_cols(rows, 0, c.div_ceil(2))?;
            let right = g.slice_cols(x, c / 2, c - c / 2)?;
            let rt = g.gather_rows(right, &ids)?;
            let joined = g.concat_cols(&[left, rt, rows])?;
            weighted_sum(g, joined, seed)
        };
        check(finite_diff_check(f, &x, 1e-3, 1e-3).unwrap())?;
    }

    #[test]
    fn gradcheck_cross_entropy((r, c, data) in matrix(8), seed in any::<u64>()) {
        prop_assume!(c >= 2);
        let x = Tensor::new([r, c], data).unwrap();
        let targets: Vec<u32> = (0..r).map(|i| ((seed >> (i * 3)) % c as u64) as u32).collect();
        let mut targets_ignored = targets.clone();
        if r > 1 {
            targets_ignored[0] = u32::MAX;
        }
        let f = |g: &mut Graph, x: Var| g.cross_entropy(x, &targets_ignored, u32::MAX);
        check(finite_diff_check(f, &x, 1e-3, 1e-3).unwrap())?;
    }
}
