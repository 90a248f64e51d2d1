//! Gradient checks against f64 finite-difference oracles.
//!
//! Each op has an independent f64 reference implementation here; the oracle
//! differentiates that reference with central differences (eps = 1e-3) and
//! the tape's analytic f32 gradients must agree elementwise to 1e-4 relative
//! error. Denominators below 0.01 are floored at 0.01 so near-zero gradients
//! are compared absolutely.

use std::rc::Rc;

use super::rng::Rng;
use super::*;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(0.01)
}

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.range_f32(lo, hi))
}

/// A differentiable test case: some parameter tensors, a graph construction,
/// and an independent f64 forward returning the op output flattened.
struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    ranges: Vec<(f32, f32)>,
    build: Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>,
    eval_f64: Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>,
}

/// Loss = sum(projection ⊙ op(θ)); checks d(loss)/dθ for every parameter
/// element against the f64 oracle.
fn check_case(case: &OpCase, rng: &mut Rng) {
    let tensors: Vec<Tensor> = case
        .shapes
        .iter()
        .zip(&case.ranges)
        .map(|(s, &(lo, hi))| rand_tensor(rng, s, lo, hi))
        .collect();

    // Build the analytic graph.
    let mut params = ParamSet::new();
    let ids: Vec<ParamId> = tensors
        .iter()
        .enumerate()
        .map(|(i, t)| params.register(format!("p{i}"), t.clone()).unwrap())
        .collect();
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(&params, id)).collect();
    let out = (case.build)(&mut g, &nodes);

    let out_n = g.value(out).numel();
    let projection: Vec<f32> = (0..out_n).map(|_| rng.range_f32(0.5, 1.5)).collect();
    let proj_node = g.input(Tensor::new(g.value(out).shape().to_vec(), projection.clone()).unwrap());
    let weighted = g.mul(out, proj_node).unwrap();
    let loss = g.sum_all(weighted).unwrap();
    g.backward(loss, &mut params).unwrap();

    // f64 oracle loss at a given parameter setting.
    let theta: Vec<Vec<f64>> =
        tensors.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let loss_f64 = |theta: &[Vec<f64>]| -> f64 {
        let y = (case.eval_f64)(theta);
        assert_eq!(y.len(), out_n, "{}: oracle output size", case.name);
        y.iter().zip(&projection).map(|(&v, &p)| v * p as f64).sum()
    };

    for (pi, id) in ids.iter().enumerate() {
        let analytic = params.grad(*id).expect("grad populated");
        for ei in 0..theta[pi].len() {
            let mut tp = theta.clone();
            tp[pi][ei] += EPS;
            let lp = loss_f64(&tp);
            tp[pi][ei] -= 2.0 * EPS;
            let lm = loss_f64(&tp);
            let fd = (lp - lm) / (2.0 * EPS);
            let re = rel_err(analytic[ei] as f64, fd);
            assert!(
                re < TOL,
                "{}: param {pi} elem {ei}: analytic {} vs fd {} (rel {re:.2e})",
                case.name,
                analytic[ei],
                fd
            );
        }
    }
}

fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax64(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let ld = denom.ln() + max;
    row.iter().map(|v| v - ld).collect()
}

fn all_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: vec![vec![2, 3], vec![3, 4]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            build: Box::new(|g, n| g.matmul(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| {
                let mut out = vec![0.0; 2 * 4];
                for i in 0..2 {
                    for j in 0..4 {
                        for p in 0..3 {
                            out[i * 4 + j] += t[0][i * 3 + p] * t[1][p * 4 + j];
                        }
                    }
                }
                out
            }),
        },
        OpCase {
            name: "matmul_bt",
            shapes: vec![vec![3, 4], vec![2, 4]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            build: Box::new(|g, n| g.matmul_bt(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| {
                let mut out = vec![0.0; 3 * 2];
                for i in 0..3 {
                    for j in 0..2 {
                        for p in 0..4 {
                            out[i * 2 + j] += t[0][i * 4 + p] * t[1][j * 4 + p];
                        }
                    }
                }
                out
            }),
        },
        OpCase {
            name: "add",
            shapes: vec![vec![3, 2], vec![3, 2]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            build: Box::new(|g, n| g.add(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().zip(&t[1]).map(|(a, b)| a + b).collect()),
        },
        OpCase {
            name: "mul",
            shapes: vec![vec![3, 2], vec![3, 2]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            build: Box::new(|g, n| g.mul(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().zip(&t[1]).map(|(a, b)| a * b).collect()),
        },
        OpCase {
            name: "mul_scalar_broadcast",
            shapes: vec![vec![4], vec![1]],
            ranges: vec![(-1.0, 1.0), (0.5, 1.5)],
            build: Box::new(|g, n| g.mul(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().map(|a| a * t[1][0]).collect()),
        },
        OpCase {
            name: "add_bias",
            shapes: vec![vec![3, 4], vec![4]],
            ranges: vec![(-1.0, 1.0), (-0.5, 0.5)],
            build: Box::new(|g, n| g.add_bias(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| {
                (0..12).map(|i| t[0][i] + t[1][i % 4]).collect()
            }),
        },
        OpCase {
            name: "scale",
            shapes: vec![vec![5]],
            ranges: vec![(-1.0, 1.0)],
            build: Box::new(|g, n| g.scale(n[0], 0.75).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().map(|a| a * 0.75).collect()),
        },
        OpCase {
            name: "sigmoid",
            shapes: vec![vec![6]],
            ranges: vec![(-2.0, 2.0)],
            build: Box::new(|g, n| g.sigmoid(n[0]).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().map(|&x| sigmoid64(x)).collect()),
        },
        OpCase {
            name: "tanh",
            shapes: vec![vec![6]],
            ranges: vec![(-2.0, 2.0)],
            build: Box::new(|g, n| g.tanh(n[0]).unwrap()),
            eval_f64: Box::new(|t| t[0].iter().map(|x| x.tanh()).collect()),
        },
        OpCase {
            // Inputs stay well away from the kink so eps=1e-3 never crosses it.
            name: "relu",
            shapes: vec![vec![1, 6]],
            ranges: vec![(0.05, 2.0)],
            build: Box::new(|g, n| {
                let neg = g.scale(n[0], -1.0).unwrap();
                let both = g.concat_cols(&[n[0], neg]).unwrap();
                g.relu(both).unwrap()
            }),
            eval_f64: Box::new(|t| {
                let mut v: Vec<f64> = t[0].iter().map(|&x| x.max(0.0)).collect();
                v.extend(t[0].iter().map(|&x| (-x).max(0.0)));
                v
            }),
        },
        OpCase {
            name: "log_softmax",
            shapes: vec![vec![2, 5]],
            ranges: vec![(-2.0, 2.0)],
            build: Box::new(|g, n| g.log_softmax_lastdim(n[0]).unwrap()),
            eval_f64: Box::new(|t| {
                let mut out = Vec::new();
                for r in 0..2 {
                    out.extend(log_softmax64(&t[0][r * 5..(r + 1) * 5]));
                }
                out
            }),
        },
        OpCase {
            name: "masked_softmax",
            shapes: vec![vec![3, 5]],
            ranges: vec![(-2.0, 2.0)],
            build: Box::new(|g, n| {
                let spans = Rc::new(vec![(0usize, 3usize), (1, 5), (2, 4)]);
                g.masked_softmax_lastdim(n[0], spans).unwrap()
            }),
            eval_f64: Box::new(|t| {
                let spans = [(0usize, 3usize), (1, 5), (2, 4)];
                let mut out = vec![0.0; 15];
                for (r, &(lo, hi)) in spans.iter().enumerate() {
                    let row = &t[0][r * 5..(r + 1) * 5];
                    let max = row[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row[lo..hi].iter().map(|v| (v - max).exp()).sum();
                    for j in lo..hi {
                        out[r * 5 + j] = (row[j] - max).exp() / denom;
                    }
                }
                out
            }),
        },
        OpCase {
            name: "layer_norm",
            shapes: vec![vec![2, 6], vec![6], vec![6]],
            ranges: vec![(-1.5, 1.5), (0.5, 1.5), (-0.5, 0.5)],
            build: Box::new(|g, n| g.layer_norm(n[0], n[1], n[2]).unwrap()),
            eval_f64: Box::new(|t| {
                let mut out = vec![0.0; 12];
                for r in 0..2 {
                    let row = &t[0][r * 6..(r + 1) * 6];
                    let mean = row.iter().sum::<f64>() / 6.0;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
                    let rstd = 1.0 / (var + 1e-5).sqrt();
                    for j in 0..6 {
                        out[r * 6 + j] = (row[j] - mean) * rstd * t[1][j] + t[2][j];
                    }
                }
                out
            }),
        },
        OpCase {
            name: "embed",
            shapes: vec![vec![4, 3]],
            ranges: vec![(-1.0, 1.0)],
            build: Box::new(|g, n| g.embed(n[0], Rc::new(vec![2, 0, 2, 3])).unwrap()),
            eval_f64: Box::new(|t| {
                [2usize, 0, 2, 3]
                    .iter()
                    .flat_map(|&id| t[0][id * 3..(id + 1) * 3].to_vec())
                    .collect()
            }),
        },
        OpCase {
            name: "slice_and_concat",
            shapes: vec![vec![4, 6]],
            ranges: vec![(-1.0, 1.0)],
            build: Box::new(|g, n| {
                let top = g.slice_rows(n[0], 0, 2).unwrap();
                let bottom = g.slice_rows(n[0], 2, 2).unwrap();
                let left = g.slice_cols(n[0], 0, 3).unwrap();
                let right = g.slice_cols(n[0], 3, 3).unwrap();
                let rows = g.concat_rows(&[bottom, top]).unwrap();
                let cols = g.concat_cols(&[right, left]).unwrap();
                g.add(rows, cols).unwrap()
            }),
            eval_f64: Box::new(|t| {
                let x = &t[0];
                let mut rows = vec![0.0; 24];
                rows[..12].copy_from_slice(&x[12..24]);
                rows[12..].copy_from_slice(&x[..12]);
                let mut cols = vec![0.0; 24];
                for r in 0..4 {
                    for j in 0..3 {
                        cols[r * 6 + j] = x[r * 6 + 3 + j];
                        cols[r * 6 + 3 + j] = x[r * 6 + j];
                    }
                }
                rows.iter().zip(&cols).map(|(a, b)| a + b).collect()
            }),
        },
        OpCase {
            name: "outer_add",
            shapes: vec![vec![3, 4], vec![2, 4]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            build: Box::new(|g, n| g.outer_add(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| {
                let mut out = vec![0.0; 3 * 2 * 4];
                for i in 0..3 {
                    for j in 0..2 {
                        for k in 0..4 {
                            out[(i * 2 + j) * 4 + k] = t[0][i * 4 + k] + t[1][j * 4 + k];
                        }
                    }
                }
                out
            }),
        },
        OpCase {
            name: "reshape_chain",
            shapes: vec![vec![2, 6]],
            ranges: vec![(-1.0, 1.0)],
            build: Box::new(|g, n| {
                let r = g.reshape(n[0], vec![3, 4]).unwrap();
                g.tanh(r).unwrap()
            }),
            eval_f64: Box::new(|t| t[0].iter().map(|x| x.tanh()).collect()),
        },
        OpCase {
            name: "lstm_cell",
            shapes: vec![vec![1, 12], vec![1, 3]],
            ranges: vec![(-1.5, 1.5), (-1.0, 1.0)],
            build: Box::new(|g, n| g.lstm_cell(n[0], n[1]).unwrap()),
            eval_f64: Box::new(|t| {
                let d = 3;
                let mut out = vec![0.0; 2 * d];
                for j in 0..d {
                    let i_g = sigmoid64(t[0][j]);
                    let f_g = sigmoid64(t[0][d + j]);
                    let g_g = t[0][2 * d + j].tanh();
                    let o_g = sigmoid64(t[0][3 * d + j]);
                    let c_next = f_g * t[1][j] + i_g * g_g;
                    out[j] = o_g * c_next.tanh();
                    out[d + j] = c_next;
                }
                out
            }),
        },
        OpCase {
            name: "composite_mlp",
            shapes: vec![vec![2, 3], vec![3, 4], vec![4]],
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0), (-0.5, 0.5)],
            build: Box::new(|g, n| {
                let h = g.matmul(n[0], n[1]).unwrap();
                let h = g.add_bias(h, n[2]).unwrap();
                g.tanh(h).unwrap()
            }),
            eval_f64: Box::new(|t| {
                let mut out = vec![0.0; 8];
                for i in 0..2 {
                    for j in 0..4 {
                        let mut s = t[2][j];
                        for p in 0..3 {
                            s += t[0][i * 3 + p] * t[1][p * 4 + j];
                        }
                        out[i * 4 + j] = s.tanh();
                    }
                }
                out
            }),
        },
    ]
}

#[test]
fn gradients_match_finite_differences_over_100_trials() {
    let mut rng = Rng::new(0x5eed);
    let cases = all_cases();
    let mut trials = 0;
    for round in 0..7 {
        for case in &cases {
            let mut case_rng = rng.fork(round * 1000 + trials);
            check_case(case, &mut case_rng);
            trials += 1;
        }
    }
    assert!(trials >= 100, "ran {trials} trials");
}

// ── Per-op examples ─────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.input(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
    let eye = g.input(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
    let c = g.matmul(a, eye).unwrap();
    assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);
}

#[test]
fn matmul_all_ones_reduction() {
    let mut g = Graph::new();
    let a = g.input(Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap());
    let ones = g.input(Tensor::new(vec![3, 1], vec![1., 1., 1.]).unwrap());
    let c = g.matmul(a, ones).unwrap();
    assert_eq!(g.value(c).data(), &[6.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = Rng::new(17);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[4, 2], -2.0, 2.0);
    // Naive triple loop in f64.
    let mut expect = [0.0f64; 6];
    for i in 0..3 {
        for j in 0..2 {
            for p in 0..4 {
                expect[i * 2 + j] += a.data()[i * 4 + p] as f64 * b.data()[p * 2 + j] as f64;
            }
        }
    }
    let mut g = Graph::new();
    let an = g.input(a);
    let bn = g.input(b);
    let c = g.matmul(an, bn).unwrap();
    for (got, want) in g.value(c).data().iter().zip(expect) {
        assert!((*got as f64 - want).abs() < 1e-5);
    }
}

#[test]
fn matmul_dimension_mismatch_errors() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(NumError::ShapeMismatch { .. })));
}

#[test]
fn relu_example() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![3], vec![-1., 0., 2.]).unwrap());
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0., 0., 2.]);
}

#[test]
fn log_softmax_symmetry_example() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![1, 2], vec![0., 0.]).unwrap());
    let y = g.log_softmax_lastdim(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - (-0.6931472)).abs() < 1e-5);
    }
}

#[test]
fn sigmoid_saturates_on_graph() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![2], vec![1e6, -1e6]).unwrap());
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 0.0]);
}

#[test]
fn unsupported_broadcast_rejected() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(NumError::ShapeMismatch { .. })));
}

#[test]
fn empty_tensor_rejected() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[0]));
    assert!(matches!(g.relu(a), Err(NumError::Empty { .. })));
}

#[test]
fn log_softmax_rows_exponentiate_to_one() {
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let t = rand_tensor(&mut rng, &[4, 7], -5.0, 5.0);
        let mut g = Graph::new();
        let x = g.input(t);
        let y = g.log_softmax_lastdim(x).unwrap();
        for r in 0..4 {
            let s: f64 = g.value(y).row(r).iter().map(|&v| (v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-5, "row sums to {s}");
        }
    }
}

// ── Backward examples ───────────────────────────────────────────────────

#[test]
fn backward_sum_of_squares() {
    // f = sum(x ⊙ x), x = [1,2,3] -> grad x = [2,4,6]
    let mut params = ParamSet::new();
    let id = params.register("x", Tensor::new(vec![3], vec![1., 2., 3.]).unwrap()).unwrap();
    let mut g = Graph::new();
    let x = g.param(&params, id);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss, &mut params).unwrap();
    assert_eq!(params.grad(id).unwrap(), &[2., 4., 6.]);
}

#[test]
fn backward_single_sigmoid_unit_matches_fd() {
    // f = sigmoid(w · x): analytic grads vs f64 central differences, eps 1e-3.
    let mut rng = Rng::new(99);
    for _ in 0..20 {
        let w = rand_tensor(&mut rng, &[1, 4], -1.0, 1.0);
        let x = rand_tensor(&mut rng, &[4, 1], -1.0, 1.0);

        let mut params = ParamSet::new();
        let wid = params.register("w", w.clone()).unwrap();
        let mut g = Graph::new();
        let wn = g.param(&params, wid);
        let xn = g.input(x.clone());
        let dot = g.matmul(wn, xn).unwrap();
        let y = g.sigmoid(dot).unwrap();
        let loss = g.sum_all(y).unwrap();
        g.backward(loss, &mut params).unwrap();
        let analytic = params.grad(wid).unwrap();

        let f = |w: &[f64]| -> f64 {
            let dot: f64 =
                w.iter().zip(x.data()).map(|(&wv, &xv)| wv * xv as f64).sum();
            sigmoid64(dot)
        };
        let w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
        for i in 0..4 {
            let mut wp = w64.clone();
            wp[i] += EPS;
            let lp = f(&wp);
            wp[i] -= 2.0 * EPS;
            let lm = f(&wp);
            let fd = (lp - lm) / (2.0 * EPS);
            let re = rel_err(analytic[i] as f64, fd);
            assert!(re < TOL, "elem {i}: {} vs {fd} (rel {re:.2e})", analytic[i]);
        }
    }
}

#[test]
fn unreachable_param_gets_zero_grad() {
    let mut params = ParamSet::new();
    let used = params.register("used", Tensor::scalar(2.0)).unwrap();
    let unused = params.register("unused", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::new();
    let u = g.param(&params, used);
    let _v = g.param(&params, unused);
    let sq = g.mul(u, u).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss, &mut params).unwrap();
    assert_eq!(params.grad(used).unwrap(), &[4.0]);
    // On the graph but not reachable from the loss: no gradient flows, which
    // the trainer treats as zero by pre-zeroing the accumulator.
    assert!(params.grad(unused).is_none());
}

#[test]
fn backward_twice_errors() {
    let mut params = ParamSet::new();
    let id = params.register("x", Tensor::scalar(1.0)).unwrap();
    let mut g = Graph::new();
    let x = g.param(&params, id);
    let loss = g.sum_all(x).unwrap();
    g.backward(loss, &mut params).unwrap();
    assert!(matches!(g.backward(loss, &mut params), Err(NumError::BackwardTwice)));
}

#[test]
fn backward_on_non_scalar_errors() {
    let mut params = ParamSet::new();
    let id = params.register("x", Tensor::zeros(&[3])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&params, id);
    assert!(matches!(
        g.backward(x, &mut params),
        Err(NumError::NonScalarLoss(_))
    ));
}

#[test]
fn gradient_accumulates_over_paths() {
    // f = sum(x) + sum(x): grad = 2 per element.
    let mut params = ParamSet::new();
    let id = params.register("x", Tensor::new(vec![2], vec![1., 1.]).unwrap()).unwrap();
    let mut g = Graph::new();
    let x = g.param(&params, id);
    let s1 = g.sum_all(x).unwrap();
    let s2 = g.sum_all(x).unwrap();
    let loss = g.weighted_sum(&[(s1, 1.0), (s2, 1.0)]).unwrap();
    g.backward(loss, &mut params).unwrap();
    assert_eq!(params.grad(id).unwrap(), &[2.0, 2.0]);
}

#[test]
fn replay_is_bit_identical() {
    let run = || -> Vec<u32> {
        let mut rng = Rng::new(1234);
        let a = rand_tensor(&mut rng, &[8, 8], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[8, 8], -1.0, 1.0);
        let mut g = Graph::new();
        let an = g.input(a);
        let bn = g.input(b);
        let c = g.matmul(an, bn).unwrap();
        let c = g.tanh(c).unwrap();
        let c = g.log_softmax_lastdim(c).unwrap();
        g.value(c).data().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn external_loss_bridges_precomputed_gradient() {
    let mut params = ParamSet::new();
    let id = params.register("x", Tensor::new(vec![2], vec![1., 2.]).unwrap()).unwrap();
    let mut g = Graph::new();
    let x = g.param(&params, id);
    let stored = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
    let loss_node = g.external_loss(x, 3.0, stored).unwrap();
    let total = g.weighted_sum(&[(loss_node, 2.0)]).unwrap();
    g.backward(total, &mut params).unwrap();
    assert_eq!(params.grad(id).unwrap(), &[1.0, -0.5]);
}

#[test]
fn adam_determinism_same_seed_bit_identical() {
    let run = || -> Vec<u32> {
        let mut rng = Rng::new(777);
        let mut params = ParamSet::new();
        let w = params.register("w", rand_tensor(&mut rng, &[4, 4], -0.5, 0.5)).unwrap();
        let b = params.register("b", Tensor::zeros(&[4])).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            let x = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
            let mut g = Graph::new();
            let wn = g.param(&params, w);
            let bn = g.param(&params, b);
            let xn = g.input(x);
            let h = g.matmul(xn, wn).unwrap();
            let h = g.add_bias(h, bn).unwrap();
            let h = g.tanh(h).unwrap();
            let sq = g.mul(h, h).unwrap();
            let loss = g.sum_all(sq).unwrap();
            g.backward(loss, &mut params).unwrap();
            adam.step(&mut params).unwrap();
        }
        let mut bits = Vec::new();
        for (_, e) in params.entries() {
            bits.extend(e.value.data().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn masked_softmax_excluded_columns_exactly_zero() {
    let mut rng = Rng::new(31);
    let t = rand_tensor(&mut rng, &[2, 6], -3.0, 3.0);
    let mut g = Graph::new();
    let x = g.input(t);
    let y = g.masked_softmax_lastdim(x, Rc::new(vec![(1, 4), (0, 6)])).unwrap();
    let v = g.value(y);
    assert_eq!(v.at2(0, 0), 0.0);
    assert_eq!(v.at2(0, 4), 0.0);
    assert_eq!(v.at2(0, 5), 0.0);
    let s: f64 = v.row(0).iter().map(|&x| x as f64).sum();
    assert!((s - 1.0).abs() < 1e-6);
}
