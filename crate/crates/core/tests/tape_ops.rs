//! Every tape op against central differences on 100 random inputs.

use std::rc::Rc;

use landmatch::rng::{rng_indexed, Rng as SeededRng};
use landmatch::tensorcore::{grad_check, ParamSet, Tape, Tensor, Var};
use landmatch::Result;
use rand::Rng;

type Closure = Box<dyn Fn(&mut Tape, &ParamSet) -> Result<Var>>;

fn random(rng: &mut SeededRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dims(rng: &mut SeededRng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=4))
}

/// Scalar `sum(out * w)` with fixed random weights, so every output entry
/// reaches the loss with its own coefficient.
fn reduce(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = (tape.value(out).rows(), tape.value(out).cols());
    let mut rng = rng_indexed(seed, "weights", 0);
    let w = tape.constant(random(&mut rng, r, c, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check_op(name: &str, build: impl Fn(&mut SeededRng) -> (ParamSet, Closure)) {
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let mut rng = rng_indexed(t, name, 0);
        let (params, f) = build(&mut rng);
        let report = grad_check(|tape, p| {
            let out = f(tape, p)?;
            reduce(tape, out, t)
        }, &params)
        .unwrap_or_else(|e| panic!("{name} trial {t}: {e}"));
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst < 1e-6, "{name}: max relative error {worst:e}");
}

fn unary(name: &str, lo: f64, hi: f64, op: fn(&mut Tape, Var) -> Result<Var>) {
    check_op(name, |rng| {
        let (r, c) = dims(rng);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, r, c, lo, hi));
        (p, Box::new(move |tape, params| {
            let v = tape.param(params, a);
            op(tape, v)
        }))
    });
}

fn binary(name: &str, b_lo: f64, op: fn(&mut Tape, Var, Var) -> Result<Var>) {
    check_op(name, |rng| {
        let (r, c) = dims(rng);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, r, c, -2.0, 2.0));
        let mut bt = random(rng, r, c, b_lo, 2.0);
        if b_lo > 0.0 {
            // denominators of either sign, away from zero
            for v in bt.data_mut() {
                if rng.random_bool(0.5) {
                    *v = -*v;
                }
            }
        }
        let b = p.add("b", bt);
        (p, Box::new(move |tape, params| {
            let (x, y) = (tape.param(params, a), tape.param(params, b));
            op(tape, x, y)
        }))
    });
}

#[test]
fn elementwise_binary() {
    binary("add", -2.0, |t, a, b| t.add(a, b));
    binary("sub", -2.0, |t, a, b| t.sub(a, b));
    binary("mul", -2.0, |t, a, b| t.mul(a, b));
    binary("div", 0.5, |t, a, b| t.div(a, b));
    binary("add_n", -2.0, |t, a, b| t.add_n(&[a, b, a]));
}

#[test]
fn add_broadcasts_a_row() {
    check_op("add_row", |rng| {
        let (r, c) = dims(rng);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, r, c, -2.0, 2.0));
        let b = p.add("b", random(rng, 1, c, -2.0, 2.0));
        (p, Box::new(move |tape, params| {
            let (x, y) = (tape.param(params, a), tape.param(params, b));
            tape.add(x, y)
        }))
    });
}

#[test]
fn elementwise_unary() {
    unary("affine", -2.0, 2.0, |t, a| Ok(t.affine(a, -1.7, 0.3)));
    unary("scale", -2.0, 2.0, |t, a| Ok(t.scale(a, 2.5)));
    unary("relu", -2.0, 2.0, |t, a| Ok(t.relu(a)));
    unary("elu", -2.0, 2.0, |t, a| Ok(t.elu(a)));
    unary("leaky_relu", -2.0, 2.0, |t, a| Ok(t.leaky_relu(a, 0.2)));
    unary("sigmoid", -4.0, 4.0, |t, a| Ok(t.sigmoid(a)));
    unary("exp", -2.0, 2.0, |t, a| t.exp(a));
    unary("log", 0.3, 3.0, |t, a| t.log(a));
    unary("sqrt", 0.3, 3.0, |t, a| t.sqrt(a));
    unary("clamp", -2.0, 2.0, |t, a| Ok(t.clamp(a, -0.5, 0.8)));
}

#[test]
fn reductions_and_shapes() {
    unary("sum", -2.0, 2.0, |t, a| Ok(t.sum(a)));
    unary("norm", -2.0, 2.0, |t, a| Ok(t.norm(a)));
    unary("mean_rows", -2.0, 2.0, |t, a| Ok(t.mean_rows(a)));
    unary("max_rows", -2.0, 2.0, |t, a| Ok(t.max_rows(a)));
    unary("mean_cols", -2.0, 2.0, |t, a| Ok(t.mean_cols(a)));
    unary("sum_cols", -2.0, 2.0, |t, a| Ok(t.sum_cols(a)));
    unary("transpose", -2.0, 2.0, |t, a| Ok(t.transpose(a)));
    unary("slice_row", -2.0, 2.0, |t, a| {
        let last = t.value(a).rows() - 1;
        t.slice_row(a, last)
    });
    unary("slice_cols", -2.0, 2.0, |t, a| {
        let c = t.value(a).cols();
        t.slice_cols(a, c / 2, c - c / 2)
    });
    unary("gather_rows", -2.0, 2.0, |t, a| {
        let r = t.value(a).rows();
        let idx: Vec<usize> = (0..2 * r + 1).map(|i| (i * 7 + 3) % r).collect();
        t.gather_rows(a, Rc::new(idx))
    });
    unary("concat", -2.0, 2.0, |t, a| {
        let twice = t.scale(a, 2.0);
        let cols = t.concat_cols(&[a, twice, a])?;
        let other = t.affine(cols, 1.0, 0.5);
        t.concat_rows(&[cols, other])
    });
}

#[test]
fn matmul_and_bilinear() {
    check_op("matmul", |rng| {
        let (m, k) = dims(rng);
        let n = rng.random_range(1..=4);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, m, k, -2.0, 2.0));
        let b = p.add("b", random(rng, k, n, -2.0, 2.0));
        (p, Box::new(move |tape, params| {
            let (x, y) = (tape.param(params, a), tape.param(params, b));
            tape.matmul(x, y)
        }))
    });
    check_op("bilinear", |rng| {
        let (m, n) = dims(rng);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, 1, m, -2.0, 2.0));
        let w = p.add("m", random(rng, m, n, -2.0, 2.0));
        let b = p.add("b", random(rng, 1, n, -2.0, 2.0));
        (p, Box::new(move |tape, params| {
            let (x, w, y) = (tape.param(params, a), tape.param(params, w), tape.param(params, b));
            tape.bilinear(x, w, y)
        }))
    });
    check_op("outer_add", |rng| {
        let (m, n) = dims(rng);
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, m, 1, -2.0, 2.0));
        let b = p.add("b", random(rng, n, 1, -2.0, 2.0));
        (p, Box::new(move |tape, params| {
            let (x, y) = (tape.param(params, a), tape.param(params, b));
            tape.outer_add(x, y)
        }))
    });
}

#[test]
fn masked_softmax() {
    check_op("masked_softmax_rows", |rng| {
        let n = rng.random_range(1..=5);
        let mask: Vec<bool> = (0..n * n).map(|i| i / n == i % n || rng.random_bool(0.6)).collect();
        let mut p = ParamSet::new();
        let a = p.add("a", random(rng, n, n, -3.0, 3.0));
        let mask = Rc::new(mask);
        (p, Box::new(move |tape, params| {
            let x = tape.param(params, a);
            tape.masked_softmax_rows(x, Rc::clone(&mask))
        }))
    });
}

#[test]
fn conv3x3() {
    check_op("conv3x3", |rng| {
        let (c_in, c_out) = (rng.random_range(1..=2), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let stride = rng.random_range(1..=2);
        let mut p = ParamSet::new();
        let x = p.add("x", random(rng, c_in, h * w, -1.0, 1.0));
        let k = p.add("w", random(rng, c_out, c_in * 9, -1.0, 1.0));
        let b = p.add("b", random(rng, 1, c_out, -1.0, 1.0));
        (p, Box::new(move |tape, params| {
            let (x, k, b) = (tape.param(params, x), tape.param(params, k), tape.param(params, b));
            tape.conv3x3(x, k, b, h, w, stride)
        }))
    });
}
