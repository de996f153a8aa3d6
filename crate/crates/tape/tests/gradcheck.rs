//! Central finite-difference checks for every differentiable op.

use lps_tape::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Func = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

fn eval(f: &Func, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars).item()
}

/// Largest relative discrepancy between the tape gradient and central differences.
fn max_rel_error(f: &Func, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt_or_zeros(vars[k]);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let fd = (eval(f, &plus) - eval(f, &minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            worst = worst.max(rel);
        }
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Weighted sum `Σ w ⊙ y` so every output element contributes a distinct adjoint.
fn weigh<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(&mut rng, &y.shape(), -1.0, 1.0);
    y.mul(tape.constant(w)).unwrap().sum()
}

fn check_op(name: &str, shapes: &[(&[usize], f64, f64)], f: &Func) {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|(s, lo, hi)| random(&mut rng, s, *lo, *hi))
            .collect();
        let err = max_rel_error(f, &inputs);
        assert!(err < TOL, "{name}: seed {seed} relative error {err:.3e}");
    }
}

#[test]
fn elementwise_binary_ops_with_broadcasting() {
    let shapes: &[(&[usize], f64, f64)] = &[(&[4, 3], -2.0, 2.0), (&[1, 3], 0.5, 2.0)];
    check_op("add", shapes, &|t, v| weigh(t, v[0].add(v[1]).unwrap(), 1));
    check_op("sub", shapes, &|t, v| weigh(t, v[0].sub(v[1]).unwrap(), 2));
    check_op("mul", shapes, &|t, v| weigh(t, v[0].mul(v[1]).unwrap(), 3));
    check_op("div", shapes, &|t, v| weigh(t, v[0].div(v[1]).unwrap(), 4));
    let col: &[(&[usize], f64, f64)] = &[(&[4, 3], -2.0, 2.0), (&[4, 1], 0.5, 2.0)];
    check_op("div-col", col, &|t, v| weigh(t, v[1].div(v[0].square().offset(1.0)).unwrap(), 5));
    let scalar: &[(&[usize], f64, f64)] = &[(&[4, 3], -2.0, 2.0), (&[], 0.5, 2.0)];
    check_op("mul-scalar", scalar, &|t, v| weigh(t, v[1].mul(v[0]).unwrap(), 6));
}

#[test]
fn unary_ops() {
    let any: &[(&[usize], f64, f64)] = &[(&[3, 4], -3.0, 3.0)];
    let pos: &[(&[usize], f64, f64)] = &[(&[3, 4], 0.2, 3.0)];
    check_op("neg", any, &|t, v| weigh(t, v[0].neg(), 7));
    check_op("scale", any, &|t, v| weigh(t, v[0].scale(-2.5), 8));
    check_op("offset", any, &|t, v| weigh(t, v[0].offset(1.5).square(), 9));
    check_op("exp", any, &|t, v| weigh(t, v[0].exp(), 10));
    check_op("tanh", any, &|t, v| weigh(t, v[0].tanh(), 11));
    check_op("softplus", any, &|t, v| weigh(t, v[0].softplus(), 12));
    check_op("sigmoid", any, &|t, v| weigh(t, v[0].sigmoid(), 13));
    check_op("square", any, &|t, v| weigh(t, v[0].square(), 14));
    check_op("log", pos, &|t, v| weigh(t, v[0].log().unwrap(), 15));
    check_op("sqrt", pos, &|t, v| weigh(t, v[0].sqrt().unwrap(), 16));
}

#[test]
fn reductions() {
    let x: &[(&[usize], f64, f64)] = &[(&[3, 5], -3.0, 3.0)];
    check_op("sum", x, &|_, v| v[0].tanh().sum());
    check_op("mean", x, &|_, v| v[0].exp().mean());
    check_op("sum_axis0", x, &|t, v| weigh(t, v[0].square().sum_axis(0).unwrap(), 17));
    check_op("sum_axis1", x, &|t, v| weigh(t, v[0].tanh().sum_axis(1).unwrap(), 18));
    check_op("mean_axis", x, &|t, v| weigh(t, v[0].exp().mean_axis(1).unwrap(), 19));
    check_op("logsumexp_axis1", x, &|t, v| weigh(t, v[0].logsumexp_axis(1).unwrap(), 20));
    check_op("logsumexp_axis0", x, &|t, v| weigh(t, v[0].logsumexp_axis(0).unwrap(), 21));
    check_op("logsumexp_all", x, &|_, v| v[0].logsumexp());
}

#[test]
fn structural_ops() {
    let two: &[(&[usize], f64, f64)] = &[(&[3, 2], -2.0, 2.0), (&[3, 3], -2.0, 2.0)];
    check_op("concat", two, &|t, v| {
        weigh(t, t.concat(&[v[0], v[1]], 1).unwrap().tanh(), 22)
    });
    let x: &[(&[usize], f64, f64)] = &[(&[4, 3], -2.0, 2.0)];
    check_op("slice", x, &|t, v| weigh(t, v[0].slice(1, 1, 2).unwrap().exp(), 23));
    check_op("slice-rows", x, &|t, v| weigh(t, v[0].slice(0, 2, 2).unwrap().square(), 24));
    check_op("index_select", x, &|t, v| {
        weigh(t, v[0].index_select(0, &[3, 0, 3, 1]).unwrap().tanh(), 25)
    });
    check_op("index_select_cols", x, &|t, v| {
        weigh(t, v[0].index_select(1, &[2, 2, 0]).unwrap().exp(), 26)
    });
    let row: &[(&[usize], f64, f64)] = &[(&[1, 3], -2.0, 2.0)];
    check_op("broadcast", row, &|t, v| weigh(t, v[0].broadcast_to(&[5, 3]).unwrap().tanh(), 27));
    check_op("reshape", x, &|t, v| weigh(t, v[0].reshape(&[2, 6]).unwrap().tanh(), 28));
}

#[test]
fn matmul_both_operands() {
    let shapes: &[(&[usize], f64, f64)] = &[(&[4, 3], -1.0, 1.0), (&[3, 5], -1.0, 1.0)];
    check_op("matmul", shapes, &|t, v| weigh(t, v[0].matmul(v[1]).unwrap(), 29));
}

#[test]
fn sum_tanh_wx_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let w = random(&mut rng, &[4, 3], -1.0, 1.0);
    let x = random(&mut rng, &[3, 1], -1.0, 1.0);
    let f: &Func = &|_, v| v[0].matmul(v[1]).unwrap().tanh().sum();
    let err = max_rel_error(f, &[w, x]);
    assert!(err < 1e-5, "relative error {err:.3e}");
}

#[test]
fn gradient_is_linear_in_the_objective() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&mut rng, &[2, 3], -1.5, 1.5);
        let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let grad = |which: u8| {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone(), true);
            let f = x.tanh().mul(x.exp()).unwrap().sum();
            let g = x.softplus().logsumexp();
            let out = match which {
                0 => f,
                1 => g,
                _ => f.scale(alpha).add(g.scale(beta)).unwrap(),
            };
            tape.backward(out).unwrap().wrt_or_zeros(x)
        };
        let (gf, gg, gc) = (grad(0), grad(1), grad(2));
        for i in 0..gc.len() {
            let expect = alpha * gf.data()[i] + beta * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn stop_gradient_zeroes_the_path() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&mut rng, &[3, 2], -2.0, 2.0);
        let tape = Tape::new();
        let x = tape.leaf(x0, true);
        let blocked = x.exp().stop_gradient().mul(x.tanh().stop_gradient()).unwrap();
        let out = blocked.square().sum();
        let grads = tape.backward(out).unwrap();
        assert!(grads.wrt_or_zeros(x).data().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn backward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random(&mut rng, &[6, 6], -1.0, 1.0);
        let tape = Tape::new();
        let wv = tape.leaf(w, true);
        let mut h = wv;
        for _ in 0..5 {
            h = h.matmul(wv).unwrap().tanh();
        }
        let g = tape.backward(h.logsumexp()).unwrap();
        g.wrt_or_zeros(wv)
    };
    assert_eq!(run(), run());
}
