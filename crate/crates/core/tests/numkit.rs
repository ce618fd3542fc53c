use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagebc::numkit::{matmul, param_count, softmax, Graph, NodeId, Params, Tensor};
use stagebc::par::Exec;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

type Builder = dyn Fn(&mut Graph, &BTreeMap<String, NodeId>) -> NodeId;

fn build(params: &Params, f: &Builder) -> (Graph, NodeId) {
    let mut g = Graph::new();
    let ids = params
        .iter()
        .map(|(k, v)| (k.clone(), g.param(k, v).unwrap()))
        .collect();
    let loss = f(&mut g, &ids);
    (g, loss)
}

/// Worst relative error between tape gradients and central differences.
fn grad_check(params: &Params, f: &Builder) -> f64 {
    let (mut g, loss) = build(params, f);
    g.backward(loss).unwrap();
    let analytic = g.gradients();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, t) in params {
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let (gp, lp) = build(&plus, f);
            let (gm, lm) = build(&minus, f);
            let num = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
            let a = analytic[name].data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.param("x", &Tensor::scalar(3.0)).unwrap();
    let y = g.square(x);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert!((g.grad("x").unwrap().item() - 6.0).abs() < 1e-12);
}

#[test]
fn disconnected_param_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param("x", &Tensor::scalar(2.0)).unwrap();
    let _y = g.param("y", &Tensor::full(&[3], 1.5)).unwrap();
    let s = g.square(x);
    let l = g.sum_all(s);
    g.backward(l).unwrap();
    assert!(g.grad("y").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param("x", &Tensor::full(&[2], 1.0)).unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn duplicate_param_names_rejected() {
    let mut g = Graph::new();
    g.param("w", &Tensor::scalar(1.0)).unwrap();
    assert!(g.param("w", &Tensor::scalar(2.0)).is_err());
}

#[test]
fn gradients_accumulate_until_cleared() {
    let mut g = Graph::new();
    let x = g.param("x", &Tensor::scalar(1.0)).unwrap();
    let y = g.scale(x, 2.0);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad("x").unwrap().item(), 4.0);
    g.zero_grad();
    assert_eq!(g.grad("x").unwrap().item(), 0.0);
}

#[test]
fn matmul_known_values() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_against_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[7, 5]);
    let b = rand_tensor(&mut rng, &[5, 3]);
    let c = matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[7, 3]);
    for i in 0..7 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..5 {
                s += a.data()[i * 5 + k] * b.data()[k * 3 + j];
            }
            assert!((c.data()[i * 3 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_rejects_mismatch() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 3]);
    assert!(matmul(&a, &b).is_err());
}

#[test]
fn softmax_known_values() {
    let x = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
    for v in softmax(&x, 0).unwrap().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
    let s = softmax(&x, 0).unwrap();
    assert!((s.data()[0] - 1.0).abs() < 1e-15);
    assert!(s.data()[1] < 1e-300);
}

#[test]
fn softmax_axis_zero_columns() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
    let s = softmax(&x, 0).unwrap();
    assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-12);
    assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-12);
    let e = (2.0f64).exp();
    assert!((s.data()[2] - e / (1.0 + e)).abs() < 1e-12);
}

#[test]
fn param_count_sums_elements() {
    let mut p = Params::new();
    p.insert("a".into(), Tensor::zeros(&[3, 4]));
    p.insert("b".into(), Tensor::zeros(&[5]));
    assert_eq!(param_count(&p), 17);
}

#[test]
fn grad_check_linear_gelu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[4, 3]);
    let mut p = Params::new();
    p.insert("w".into(), rand_tensor(&mut rng, &[3, 5]));
    p.insert("b".into(), rand_tensor(&mut rng, &[5]));
    let f = move |g: &mut Graph, ids: &BTreeMap<String, NodeId>| {
        let xi = g.input(x.clone());
        let h = g.matmul(xi, ids["w"]).unwrap();
        let h = g.add_broadcast(h, ids["b"]).unwrap();
        let h = g.gelu(h);
        let e = g.exp(h);
        let s = g.square(e);
        g.sum_all(s)
    };
    assert!(grad_check(&p, &f) < 1e-5);
}

#[test]
fn grad_check_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = Params::new();
    p.insert("x".into(), rand_tensor(&mut rng, &[3, 6]));
    p.insert("gamma".into(), rand_tensor(&mut rng, &[6]));
    p.insert("beta".into(), rand_tensor(&mut rng, &[6]));
    let target = rand_tensor(&mut rng, &[3, 6]);
    let f = move |g: &mut Graph, ids: &BTreeMap<String, NodeId>| {
        let y = g.layer_norm(ids["x"], ids["gamma"], ids["beta"], 1e-5).unwrap();
        let t = g.input(target.clone());
        let d = g.sub(y, t).unwrap();
        let t2 = g.input(Tensor::full(&[3, 6], 0.3));
        let m = g.mul(d, t2).unwrap();
        let s = g.square(m);
        g.sum_all(s)
    };
    assert!(grad_check(&p, &f) < 1e-5);
}

#[test]
fn grad_check_attention_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = Params::new();
    p.insert("q".into(), rand_tensor(&mut rng, &[2, 3, 4]));
    p.insert("k".into(), rand_tensor(&mut rng, &[2, 3, 4]));
    p.insert("v".into(), rand_tensor(&mut rng, &[2, 3, 4]));
    let target = rand_tensor(&mut rng, &[2, 3, 4]);
    let f = move |g: &mut Graph, ids: &BTreeMap<String, NodeId>| {
        let a = g.attention(ids["q"], ids["k"], ids["v"], 2).unwrap();
        let sm = g.softmax(a, 2).unwrap();
        let t = g.input(target.clone());
        g.l1_mean(sm, t).unwrap()
    };
    assert!(grad_check(&p, &f) < 1e-5);
}

#[test]
fn grad_check_concat_slice_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = Params::new();
    p.insert("a".into(), rand_tensor(&mut rng, &[2, 1, 3]));
    p.insert("b".into(), rand_tensor(&mut rng, &[2, 2, 3]));
    let f = move |g: &mut Graph, ids: &BTreeMap<String, NodeId>| {
        let c = g.concat(&[ids["a"], ids["b"]], 1).unwrap();
        let s = g.slice(c, 1, 1, 2).unwrap();
        let r = g.reshape(s, &[4, 3]).unwrap();
        let r = g.add_scalar(r, 0.5);
        let e = g.exp(r);
        let sc = g.scale(e, 0.1);
        let c2 = g.square(c);
        let l1 = g.sum_all(sc);
        let l2 = g.sum_all(c2);
        g.add(l1, l2).unwrap()
    };
    assert!(grad_check(&p, &f) < 1e-5);
}

#[test]
fn attention_parallel_matches_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = rand_tensor(&mut rng, &[8, 6, 8]);
    let run = |exec| {
        let mut g = Graph::with_exec(exec);
        let qi = g.param("q", &q).unwrap();
        let a = g.attention(qi, qi, qi, 4).unwrap();
        let s = g.square(a);
        let l = g.sum_all(s);
        g.backward(l).unwrap();
        (g.value(a).clone(), g.grad("q").unwrap().clone())
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..8, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        let x = Tensor::new(vec![rows, cols], data).unwrap();
        let s = softmax(&x, 1).unwrap();
        for r in 0..rows {
            let sum: f64 = s.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.data()[r * cols..(r + 1) * cols].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matmul_distributes_over_addition(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let c = rand_tensor(&mut rng, &[4, 2]);
        let bc = Tensor::new(vec![4, 2], b.data().iter().zip(c.data()).map(|(x, y)| x + y).collect()).unwrap();
        let lhs = matmul(&a, &bc).unwrap();
        let ab = matmul(&a, &b).unwrap();
        let ac = matmul(&a, &c).unwrap();
        for i in 0..6 {
            prop_assert!((lhs.data()[i] - ab.data()[i] - ac.data()[i]).abs() < 1e-12);
        }
    }
}
