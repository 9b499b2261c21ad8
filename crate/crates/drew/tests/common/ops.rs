//! Randomized finite-difference checks for every differentiable tape op,
//! shared between the per-op tests and the acceptance suite.

use drew::tensor::gradcheck::{finite_difference_grads, max_rel_err, DEFAULT_STEP};
use drew::tensor::{BnStats, Shape, SparseMatrix, TRef, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;

/// Every differentiable op exposed by the tape.
pub const ALL_OPS: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "add_scalar",
    "scalar_mul",
    "add_bias",
    "relu",
    "sigmoid",
    "softplus",
    "concat_axis0",
    "concat_axis1",
    "gather_rows",
    "scatter_add_rows",
    "sum_all",
    "mean_all",
    "sum_axis0",
    "sum_axis1",
    "mean_axis0",
    "mean_axis1",
    "sum_n",
    "spmm",
    "scale",
    "reshape",
    "batch_norm_train",
    "batch_norm_eval",
    "cross_entropy_logits",
];

/// Random tensor with entries kept away from zero (safe for relu/div).
fn rand_tensor<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
    let data: Vec<f64> = (0..shape.numel())
        .map(|_| {
            let x: f64 = rng.gen_range(0.15..1.2);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap().with_grad()
}

/// Probe weights so the scalarized loss is not permutation-blind.
fn probe<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Compares tape gradients with central differences for one op builder;
/// returns the max relative error.
fn run_check<F>(inputs: &[Tensor], probe_w: &[f64], build: F) -> f64
where
    F: Fn(&mut Tape, &[TRef]) -> TRef,
{
    let mut tape = Tape::new();
    let refs: Vec<TRef> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &refs);
    let pw = tape
        .constant(tape.shape(out).clone(), probe_w.to_vec())
        .unwrap();
    let weighted = tape.mul(out, pw).unwrap();
    let loss = tape.sum_all(weighted);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = refs
        .iter()
        .zip(inputs)
        .map(|(&r, t)| {
            tape.grad(r)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let numeric = finite_difference_grads(
        |ts: &[Tensor]| {
            let mut tape = Tape::new();
            let refs: Vec<TRef> = ts.iter().map(|t| tape.leaf(t)).collect();
            let out = build(&mut tape, &refs);
            tape.value(out)
                .iter()
                .zip(probe_w)
                .map(|(&v, &w)| v * w)
                .sum()
        },
        inputs,
        DEFAULT_STEP,
    );
    max_rel_err(&analytic, &numeric)
}

type OpCase = (Vec<Tensor>, Vec<f64>, Box<dyn Fn(&mut Tape, &[TRef]) -> TRef>);

/// Builds one randomized test case for the named op.
fn make_case(name: &str, rng: &mut ChaCha12Rng) -> OpCase {
    match name {
        "matmul" => {
            let (m, k, n) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            let a = rand_tensor(Shape::matrix(m, k), rng);
            let b = rand_tensor(Shape::matrix(k, n), rng);
            let pw = probe(m * n, rng);
            (
                vec![a, b],
                pw,
                Box::new(|t, r| t.matmul(r[0], r[1]).unwrap()),
            )
        }
        "add" | "sub" | "mul" | "div" => {
            let rows = rng.gen_range(1..5);
            let cols = rng.gen_range(1..5);
            let a = rand_tensor(Shape::matrix(rows, cols), rng);
            let b = rand_tensor(Shape::matrix(rows, cols), rng);
            let pw = probe(rows * cols, rng);
            let op = name.to_string();
            (
                vec![a, b],
                pw,
                Box::new(move |t, r| match op.as_str() {
                    "add" => t.add(r[0], r[1]).unwrap(),
                    "sub" => t.sub(r[0], r[1]).unwrap(),
                    "mul" => t.mul(r[0], r[1]).unwrap(),
                    _ => t.div(r[0], r[1]).unwrap(),
                }),
            )
        }
        "add_scalar" | "scalar_mul" => {
            let a = rand_tensor(Shape::vector(rng.gen_range(1..8)), rng);
            let c = rng.gen_range(-2.0..2.0);
            let pw = probe(a.numel(), rng);
            let scalar_add = name == "add_scalar";
            (
                vec![a],
                pw,
                Box::new(move |t, r| {
                    if scalar_add {
                        t.add_scalar(r[0], c)
                    } else {
                        t.scalar_mul(r[0], c)
                    }
                }),
            )
        }
        "add_bias" => {
            let (n, d) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let a = rand_tensor(Shape::matrix(n, d), rng);
            let b = rand_tensor(Shape::vector(d), rng);
            let pw = probe(n * d, rng);
            (
                vec![a, b],
                pw,
                Box::new(|t, r| t.add_bias(r[0], r[1]).unwrap()),
            )
        }
        "relu" | "sigmoid" | "softplus" => {
            let a = rand_tensor(Shape::vector(rng.gen_range(1..10)), rng);
            let pw = probe(a.numel(), rng);
            let op = name.to_string();
            (
                vec![a],
                pw,
                Box::new(move |t, r| match op.as_str() {
                    "relu" => t.relu(r[0]),
                    "sigmoid" => t.sigmoid(r[0]),
                    _ => t.softplus(r[0]),
                }),
            )
        }
        "concat_axis0" | "concat_axis1" => {
            let axis = if name.ends_with('0') { 0 } else { 1 };
            let shared = rng.gen_range(1..4);
            let (a, b) = if axis == 0 {
                (
                    rand_tensor(Shape::matrix(rng.gen_range(1..4), shared), rng),
                    rand_tensor(Shape::matrix(rng.gen_range(1..4), shared), rng),
                )
            } else {
                (
                    rand_tensor(Shape::matrix(shared, rng.gen_range(1..4)), rng),
                    rand_tensor(Shape::matrix(shared, rng.gen_range(1..4)), rng),
                )
            };
            let pw = probe(a.numel() + b.numel(), rng);
            (
                vec![a, b],
                pw,
                Box::new(move |t, r| t.concat(r, axis).unwrap()),
            )
        }
        "gather_rows" => {
            let (n, d) = (rng.gen_range(2..6), rng.gen_range(1..4));
            let a = rand_tensor(Shape::matrix(n, d), rng);
            let count = rng.gen_range(1..7);
            let idx: Vec<u32> = (0..count).map(|_| rng.gen_range(0..n as u32)).collect();
            let pw = probe(count * d, rng);
            let idx = Arc::new(idx);
            (
                vec![a],
                pw,
                Box::new(move |t, r| t.gather_rows(r[0], Arc::clone(&idx)).unwrap()),
            )
        }
        "scatter_add_rows" => {
            let (rows, d, n) = (
                rng.gen_range(1..6),
                rng.gen_range(1..4),
                rng.gen_range(2..6),
            );
            let src = rand_tensor(Shape::matrix(rows, d), rng);
            let idx: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..n as u32)).collect();
            let pw = probe(n * d, rng);
            let idx = Arc::new(idx);
            (
                vec![src],
                pw,
                Box::new(move |t, r| t.scatter_add_rows(r[0], Arc::clone(&idx), n).unwrap()),
            )
        }
        "sum_all" | "mean_all" => {
            let a = rand_tensor(Shape::matrix(rng.gen_range(1..4), rng.gen_range(1..4)), rng);
            let mean = name == "mean_all";
            (
                vec![a],
                vec![1.0],
                Box::new(move |t, r| if mean { t.mean_all(r[0]) } else { t.sum_all(r[0]) }),
            )
        }
        "sum_axis0" | "sum_axis1" | "mean_axis0" | "mean_axis1" => {
            let axis = if name.ends_with('0') { 0 } else { 1 };
            let mean = name.starts_with("mean");
            let (n, d) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let a = rand_tensor(Shape::matrix(n, d), rng);
            let pw = probe(if axis == 0 { d } else { n }, rng);
            (
                vec![a],
                pw,
                Box::new(move |t, r| {
                    if mean {
                        t.mean_axis(r[0], axis).unwrap()
                    } else {
                        t.sum_axis(r[0], axis).unwrap()
                    }
                }),
            )
        }
        "sum_n" => {
            let shape = Shape::matrix(rng.gen_range(1..4), rng.gen_range(1..4));
            let parts: Vec<Tensor> = (0..3).map(|_| rand_tensor(shape.clone(), rng)).collect();
            let pw = probe(shape.numel(), rng);
            (parts, pw, Box::new(|t, r| t.sum_n(r).unwrap()))
        }
        "spmm" => {
            let (rows, cols, d) = (
                rng.gen_range(2..6),
                rng.gen_range(2..6),
                rng.gen_range(1..4),
            );
            let mut entries = Vec::new();
            for i in 0..rows as u32 {
                for j in 0..cols as u32 {
                    if rng.gen_bool(0.4) {
                        entries.push((i, j, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let mat = Arc::new(SparseMatrix::new(rows, cols, entries));
            let a = rand_tensor(Shape::matrix(cols, d), rng);
            let pw = probe(rows * d, rng);
            (
                vec![a],
                pw,
                Box::new(move |t, r| {
                    let m = t.register_sparse(Arc::clone(&mat));
                    t.spmm(m, r[0]).unwrap()
                }),
            )
        }
        "scale" => {
            let a = rand_tensor(Shape::vector(rng.gen_range(1..6)), rng);
            let s = rand_tensor(Shape::scalar(), rng);
            let pw = probe(a.numel(), rng);
            (
                vec![a, s],
                pw,
                Box::new(|t, r| t.scale(r[0], r[1]).unwrap()),
            )
        }
        "reshape" => {
            let (n, d) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let a = rand_tensor(Shape::matrix(n, d), rng);
            let pw = probe(n * d, rng);
            (
                vec![a],
                pw,
                Box::new(move |t, r| t.reshape(r[0], Shape::vector(n * d)).unwrap()),
            )
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let training = name.ends_with("train");
            let (n, d) = (rng.gen_range(2..6), rng.gen_range(1..4));
            let x = rand_tensor(Shape::matrix(n, d), rng);
            let gamma = rand_tensor(Shape::vector(d), rng);
            let beta = rand_tensor(Shape::vector(d), rng);
            let frozen_mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let frozen_var: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
            let pw = probe(n * d, rng);
            (
                vec![x, gamma, beta],
                pw,
                Box::new(move |t, r| {
                    // fresh stats per evaluation keep the closure pure
                    let mut stats = BnStats {
                        mean: frozen_mean.clone(),
                        var: frozen_var.clone(),
                    };
                    t.batch_norm(r[0], r[1], r[2], &mut stats, training, 0.1, 1e-5)
                        .unwrap()
                }),
            )
        }
        "cross_entropy_logits" => {
            let (b, c) = (rng.gen_range(1..6), rng.gen_range(2..6));
            let logits = rand_tensor(Shape::matrix(b, c), rng);
            let labels: Vec<u32> = (0..b).map(|_| rng.gen_range(0..c as u32)).collect();
            (
                vec![logits],
                vec![1.0],
                Box::new(move |t, r| t.cross_entropy_logits(r[0], &labels).unwrap()),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

/// Max relative FD error for one op over `seeds` random shape/seed draws.
pub fn check_op(name: &str, seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + seed);
        let (inputs, pw, build) = make_case(name, &mut rng);
        worst = worst.max(run_check(&inputs, &pw, |t, r| build(t, r)));
    }
    worst
}

/// The fixed 2x3 by 3x2 matmul case at its tighter documented tolerance.
pub fn matmul_small_case_err() -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let a = rand_tensor(Shape::matrix(2, 3), &mut rng);
    let b = rand_tensor(Shape::matrix(3, 2), &mut rng);
    let pw = probe(4, &mut rng);
    run_check(&[a, b], &pw, |t, r| t.matmul(r[0], r[1]).unwrap())
}
