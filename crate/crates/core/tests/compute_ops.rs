use aflab_core::compute::gradcheck::{central_difference, compare};
use aflab_core::compute::{AdamW, Graph, ParamStore, Tensor2D, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor2D {
    Tensor2D::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d/dx sum(op(x) * w) for a fixed random `w` against central differences.
fn check_unary(x: Tensor2D, seed: u64, op: impl Fn(&mut Graph, Var) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false);
        let y = op(&mut g, xv);
        g.value(y).shape()
    };
    let w = random(&mut rng, probe.0, probe.1);
    let eval = |x: &Tensor2D| {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let y = op(&mut g, xv);
        let s = g.frobenius(y, w.clone());
        (g, xv, s)
    };
    let (g, xv, s) = eval(&x);
    let analytic = g.backward(s).wrt(xv).unwrap().clone();
    let numeric = central_difference(|x| { let (g, _, s) = eval(x); g.value(s).item() }, &x, H);
    let report = compare(&analytic, &numeric);
    assert!(report.passed(TOL), "{report:?}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 3, 4);
    let b = random(&mut rng, 4, 2);
    let bc = b.clone();
    check_unary(a.clone(), 1, move |g, x| {
        let bv = g.input(bc.clone(), false);
        g.matmul(x, bv)
    });
    check_unary(b, 2, move |g, x| {
        let av = g.input(a.clone(), false);
        g.matmul(av, x)
    });
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = random(&mut rng, 1, 7).map(|v| v * 8.0);
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false);
        let y = g.softmax_rows(xv);
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (yi, xi) in g.value(y).data().iter().zip(x.data()) {
            assert!((yi - xi.exp() / z).abs() < 1e-12);
        }
        assert!((g.value(y).sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut g = Graph::new();
    let x = g.input(Tensor2D::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap(), false);
    let y = g.softmax_rows(x);
    assert_eq!(g.value(y).row(0), &[0.5, 0.5]);
    let r = g.value(y).row(1);
    assert!(r.iter().all(|v| v.is_finite()));
    assert!((r[0] - 1.0).abs() < 1e-12 && r[1] < 1e-300);
}

#[test]
fn softmax_and_log_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    check_unary(random(&mut rng, 3, 5), 4, |g, x| g.softmax_rows(x));
    check_unary(random(&mut rng, 3, 5), 5, |g, x| g.log_softmax_rows(x));
    check_unary(random(&mut rng, 3, 5), 6, |g, x| g.gelu(x));
}

#[test]
fn layer_norm_conventions() {
    let mut g = Graph::new();
    let x = g.input(Tensor2D::from_rows(&[vec![2.5; 4], vec![1.0, -1.0, 1.0, -1.0]]).unwrap(), false);
    let gain = g.input(Tensor2D::filled(1, 4, 1.0), false);
    let bias = g.input(Tensor2D::zeros(1, 4), false);
    let y = g.layer_norm(x, gain, bias);
    assert!(g.value(y).row(0).iter().all(|&v| v == 0.0));
    for (v, e) in g.value(y).row(1).iter().zip([1.0, -1.0, 1.0, -1.0]) {
        assert!((v - e).abs() < 1e-4, "{v}");
    }
}

#[test]
fn layer_norm_gradients_for_input_gain_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let gain = random(&mut rng, 1, 6);
    let bias = random(&mut rng, 1, 6);
    let x = random(&mut rng, 4, 6);
    let (gc, bc) = (gain.clone(), bias.clone());
    check_unary(x.clone(), 7, move |g, x| {
        let gv = g.input(gc.clone(), false);
        let bv = g.input(bc.clone(), false);
        g.layer_norm(x, gv, bv)
    });
    let (xc, bc) = (x.clone(), bias.clone());
    check_unary(gain.clone(), 8, move |g, gv| {
        let xv = g.input(xc.clone(), false);
        let bv = g.input(bc.clone(), false);
        g.layer_norm(xv, gv, bv)
    });
    check_unary(bias, 9, move |g, bv| {
        let xv = g.input(x.clone(), false);
        let gv = g.input(gain.clone(), false);
        g.layer_norm(xv, gv, bv)
    });
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let table = random(&mut rng, 5, 3);
    check_unary(table, 10, |g, t| g.gather_rows(t, &[4, 0, 4, 2]));
    let other = random(&mut rng, 2, 3);
    check_unary(random(&mut rng, 4, 3), 11, move |g, x| {
        let o = g.input(other.clone(), false);
        let c = g.concat_rows(&[o, x, o]);
        g.slice_rows(c, 1, 5)
    });
    let bias = random(&mut rng, 1, 3);
    check_unary(bias, 12, |g, b| {
        let x = g.input(Tensor2D::filled(3, 3, 0.5), false);
        let y = g.add_row(x, b);
        let z = g.add(y, y);
        g.scale(z, -0.7)
    });
}

#[test]
fn attention_gradients_with_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let q = random(&mut rng, 4, 6);
    let k = random(&mut rng, 5, 6);
    let v = random(&mut rng, 5, 6);
    let ranges = vec![(0, 2), (1, 5), (4, 5), (0, 5)];
    for which in 0..3 {
        let (q, k, v, ranges) = (q.clone(), k.clone(), v.clone(), ranges.clone());
        let x = [&q, &k, &v][which].clone();
        check_unary(x, 30 + which as u64, move |g, x| {
            let mut parts = [None, None, None];
            for (i, t) in [&q, &k, &v].iter().enumerate() {
                parts[i] = Some(if i == which { x } else { g.input((*t).clone(), false) });
            }
            g.attention(parts[0].unwrap(), parts[1].unwrap(), parts[2].unwrap(), ranges.clone(), 2)
        });
    }
}

#[test]
fn attention_ignores_keys_outside_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let q = random(&mut rng, 2, 4);
    let k = random(&mut rng, 4, 4);
    let v = random(&mut rng, 4, 4);
    let run = |k: &Tensor2D, v: &Tensor2D| {
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.input(q.clone(), false), g.input(k.clone(), false), g.input(v.clone(), false));
        let y = g.attention(qv, kv, vv, vec![(1, 2), (0, 4)], 2);
        g.value(y).row(0).to_vec()
    };
    let base = run(&k, &v);
    assert_eq!(base, v.row(1), "single-key attention copies the value row");
    let (mut k2, mut v2) = (k.clone(), v.clone());
    k2.row_mut(3).fill(9.0);
    v2.row_mut(0).fill(-9.0);
    assert_eq!(run(&k2, &v2), base);
}

#[test]
fn cross_entropy_cases() {
    let mut g = Graph::new();
    let confident = g.input(Tensor2D::from_rows(&[vec![50.0, 0.0, 0.0]]).unwrap(), true);
    let l = g.cross_entropy(confident, &[0], &[true]);
    assert!(g.value(l).item() < 1e-12);

    let v = 7;
    let uniform = g.input(Tensor2D::zeros(3, v), true);
    let l = g.cross_entropy(uniform, &[0, 3, 6], &[true, true, true]);
    assert!((g.value(l).item() - (v as f64).ln()).abs() < 1e-12);

    let masked = g.input(Tensor2D::filled(2, 3, 0.3), true);
    let l = g.cross_entropy(masked, &[1, 2], &[false, false]);
    assert_eq!(g.value(l).item(), 0.0);
    let grads = g.backward(l);
    assert!(grads.wrt(masked).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn cross_entropy_gradient_and_mask_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let logits = random(&mut rng, 4, 5);
    let eval = |x: &Tensor2D| {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let l = g.cross_entropy(xv, &[1, 4, 0, 2], &[true, false, true, true]);
        (g, xv, l)
    };
    let (g, xv, l) = eval(&logits);
    let analytic = g.backward(l).wrt(xv).unwrap().clone();
    assert!(analytic.row(1).iter().all(|&x| x == 0.0));
    let numeric = central_difference(|x| { let (g, _, l) = eval(x); g.value(l).item() }, &logits, H);
    assert!(compare(&analytic, &numeric).passed(TOL));
}

#[test]
fn frozen_parameters_get_no_gradient_and_never_move() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut store = ParamStore::new();
    let frozen = store.normal("lm.w", 3, 3, 1.0, &mut rng);
    let live = store.normal("adapter.w", 3, 3, 1.0, &mut rng);
    store.set_trainable("lm.", false);
    let before = store.checksum("lm.");
    let mut opt = AdamW::new(0.01);
    for _ in 0..3 {
        let mut g = Graph::new();
        let x = g.input(random(&mut rng, 2, 3), false);
        let wl = g.param(&store, live);
        let wf = g.param(&store, frozen);
        let h = g.matmul(x, wl);
        let y = g.matmul(h, wf);
        assert!(!g.requires_grad(wf));
        let l = g.frobenius(y, Tensor2D::filled(2, 3, 1.0));
        let grads = g.backward(l);
        assert!(grads.wrt(wf).is_none());
        g.accumulate_param_grads(&grads, &mut store);
        assert!(store.get(frozen).grad.data().iter().all(|&v| v == 0.0));
        opt.step(&mut store, 1e-2);
    }
    assert_eq!(store.checksum("lm."), before);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x = random(&mut rng, 3, 4);
    let w = random(&mut rng, 4, 4);
    let run = || {
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone(), false), g.input(w.clone(), false));
        let y = g.matmul(xv, wv);
        let y = g.gelu(y);
        let y = g.softmax_rows(y);
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}
