//! Library results checked against independent, deliberately naive
//! implementations.

use allg::autodiff::Tape;
use allg::baselines::{leverage_scores, rank_dcs};
use allg::eval::{accuracy, LinearSvm, LogReg};
use allg::graph::knn_graph;
use allg::model::{loss_adjacency, loss_propagation, loss_reconstruction, loss_selection};
use allg::seed;
use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

fn random(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

fn naive_frob_sq(a: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[[i, j]] * a[[i, j]];
        }
    }
    s
}

fn naive_diff_frob_sq(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let d = a[[i, j]] - b[[i, j]];
            s += d * d;
        }
    }
    s
}

fn naive_sup_norm_rows(q: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..q.nrows() {
        let mut m: f64 = 0.0;
        for j in 0..q.ncols() {
            m = m.max(q[[i, j]].abs());
        }
        total += m;
    }
    total
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn reconstruction_term_matches_loops() {
    let mut rng = seed::rng(1);
    for _ in 0..20 {
        let (x, xbar) = (random(&mut rng, 7, 9), random(&mut rng, 7, 9));
        let mut t = Tape::new();
        let (xv, xb) = (t.constant(x.clone()), t.constant(xbar.clone()));
        let l = loss_reconstruction(&mut t, xv, xb).unwrap();
        assert!(close(t.scalar(l), naive_diff_frob_sq(&x, &xbar)));
    }
}

#[test]
fn adjacency_term_matches_loops() {
    let mut rng = seed::rng(2);
    for _ in 0..20 {
        let (a1, a0) = (random(&mut rng, 8, 8), random(&mut rng, 8, 8));
        let (alpha, beta) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let mut t = Tape::new();
        let (v1, v0) = (t.param(a1.clone()), t.constant(a0.clone()));
        let l = loss_adjacency(&mut t, v1, v0, alpha, beta).unwrap();
        let want = alpha * naive_frob_sq(&a1) + beta * naive_diff_frob_sq(&a1, &a0);
        assert!(close(t.scalar(l), want));
    }
}

#[test]
fn propagation_term_matches_loops() {
    let mut rng = seed::rng(3);
    for layers in 1..5 {
        let mats: Vec<Array2<f64>> = (0..layers).map(|_| random(&mut rng, 6, 6)).collect();
        let (alpha, beta) = (0.7, 3.0);
        let mut t = Tape::new();
        let vars: Vec<_> = mats.iter().map(|m| t.param(m.clone())).collect();
        let l = loss_propagation(&mut t, &vars, alpha, beta).unwrap();
        let mut want = 0.0;
        for l in 1..mats.len() {
            want += alpha * naive_frob_sq(&mats[l]) + beta * naive_diff_frob_sq(&mats[l], &mats[l - 1]);
        }
        assert!(close(t.scalar(l), want), "{layers} layers");
    }
}

#[test]
fn selection_term_matches_loops() {
    let mut rng = seed::rng(4);
    for _ in 0..20 {
        let (s, q) = (random(&mut rng, 5, 9), random(&mut rng, 9, 9));
        let lambda = rng.random_range(0.1..10.0);
        let mut t = Tape::new();
        let (sv, qv) = (t.constant(s.clone()), t.param(q.clone()));
        let l = loss_selection(&mut t, sv, qv, lambda).unwrap();
        let want = naive_diff_frob_sq(&s, &naive_matmul(&s, &q)) + lambda * naive_sup_norm_rows(&q);
        assert!(close(t.scalar(l), want));
    }
}

fn brute_knn(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = x.ncols();
    let mut directed = Array2::zeros((n, n));
    for j in 0..n {
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..k {
            let mut best: Option<(f64, usize)> = None;
            for i in 0..n {
                if i == j || chosen.contains(&i) {
                    continue;
                }
                let d: f64 = (0..x.nrows()).map(|r| (x[[r, i]] - x[[r, j]]).powi(2)).sum();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            chosen.push(best.unwrap().1);
        }
        for i in chosen {
            directed[[i, j]] = 1.0;
        }
    }
    let mut sym = directed.clone();
    for i in 0..n {
        for j in 0..n {
            if directed[[j, i]] == 1.0 {
                sym[[i, j]] = 1.0;
            }
        }
    }
    sym
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = seed::rng(5);
    for trial in 0..50 {
        let d = rng.random_range(1..5);
        let x = random(&mut rng, d, 20);
        let k = 1 + trial % 6;
        assert_eq!(knn_graph(x.view(), k).unwrap().adjacency, brute_knn(&x, k), "trial {trial}");
    }
}

#[test]
fn knn_integer_grid_ties() {
    // Many exactly equal distances; lower index must win each tie.
    let x = Array2::from_shape_fn((2, 16), |(r, c)| if r == 0 { (c % 4) as f64 } else { (c / 4) as f64 });
    for k in 1..6 {
        assert_eq!(knn_graph(x.view(), k).unwrap().adjacency, brute_knn(&x, k));
    }
}

fn oracle_scores(x: ArrayView2<f64>, rank: usize) -> Vec<f64> {
    let m = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    (0..x.ncols())
        .map(|j| order[..rank].iter().map(|&t| vt[(t, j)].powi(2)).sum())
        .collect()
}

fn ranking_from(scores: &[f64]) -> Vec<usize> {
    let mut o: Vec<usize> = (0..scores.len()).collect();
    o.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    o
}

#[test]
fn dcs_matches_full_svd() {
    let mut rng = seed::rng(6);
    for trial in 0..50 {
        let x = random(&mut rng, 5, 8);
        let rank = 1 + trial % 4;
        let ours = leverage_scores(x.view(), rank).unwrap();
        let theirs = oracle_scores(x.view(), rank);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
        }
        assert_eq!(rank_dcs(x.view(), rank).unwrap(), ranking_from(&theirs), "trial {trial}");
    }
}

fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)])
}

#[test]
fn dcs_rotation_invariant() {
    let mut rng = seed::rng(7);
    for _ in 0..20 {
        let x = random(&mut rng, 5, 8);
        let r = random_orthogonal(&mut rng, 5);
        let rx = r.dot(&x);
        assert_eq!(rank_dcs(x.view(), 2).unwrap(), rank_dcs(rx.view(), 2).unwrap());
    }
}

/// Newton's method on the same regularized multinomial objective.
fn newton_logreg(x: &Array2<f64>, y: &[usize], k: usize, reg: f64) -> Array2<f64> {
    let (d, n) = x.dim();
    let p = d + 1;
    let dim = k * p;
    let feat = |j: usize, r: usize| if r < d { x[[r, j]] } else { 1.0 };
    let mut w = vec![0.0; dim];
    for _ in 0..50 {
        let mut grad = vec![0.0; dim];
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..n {
            let logits: Vec<f64> = (0..k).map(|c| (0..p).map(|r| w[c * p + r] * feat(j, r)).sum()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let prob: Vec<f64> = e.iter().map(|v| v / z).collect();
            for c in 0..k {
                let t = if y[j] == c { 1.0 } else { 0.0 };
                for r in 0..p {
                    grad[c * p + r] += (prob[c] - t) * feat(j, r) / n as f64;
                }
                for c2 in 0..k {
                    let h = prob[c] * (if c == c2 { 1.0 } else { 0.0 } - prob[c2]);
                    for r in 0..p {
                        for r2 in 0..p {
                            hess[(c * p + r, c2 * p + r2)] += h * feat(j, r) * feat(j, r2) / n as f64;
                        }
                    }
                }
            }
        }
        for c in 0..k {
            for r in 0..d {
                grad[c * p + r] += reg * w[c * p + r];
                hess[(c * p + r, c * p + r)] += reg;
            }
        }
        // Softmax is invariant to a shared shift; the pseudo-inverse picks
        // the minimum-norm step.
        let g = DMatrix::from_vec(dim, 1, grad.clone());
        let step = hess.pseudo_inverse(1e-12).unwrap() * g;
        for i in 0..dim {
            w[i] -= step[(i, 0)];
        }
        if grad.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
    }
    Array2::from_shape_fn((k, p), |(c, r)| w[c * p + r])
}

#[test]
fn logreg_agrees_with_newton_oracle() {
    for seed_ in 0..5 {
        let mut rng = seed::rng(100 + seed_);
        let x = random(&mut rng, 3, 20) * 2.0;
        let y: Vec<usize> = (0..20).map(|j| usize::from(x[[0, j]] + 0.5 * rng.random_range(-1.0..1.0) > 0.0) + (j % 3 == 0) as usize).collect();
        let k = *y.iter().max().unwrap() + 1;
        let reg = 0.1;
        let ours = LogReg::fit(x.view(), &y, reg);
        let oracle = newton_logreg(&x, &y, k, reg);
        let x_test = random(&mut rng, 3, 40) * 2.0;
        let xb = Array2::from_shape_fn((4, 40), |(r, j)| if r < 3 { x_test[[r, j]] } else { 1.0 });
        let oracle_scores = oracle.dot(&xb);
        let oracle_pred: Vec<usize> = oracle_scores
            .columns()
            .into_iter()
            .map(|c| (0..k).fold(0, |b, i| if c[i] > c[b] { i } else { b }))
            .collect();
        let ours_pred = ours.predict(x_test.view());
        assert_eq!(accuracy(&ours_pred, &oracle_pred), 1.0, "seed {seed_}");
        let y_test: Vec<usize> = oracle_pred.clone();
        assert_eq!(accuracy(&ours_pred, &y_test), accuracy(&oracle_pred, &y_test));
    }
}

#[test]
fn svm_sign_pattern_matches_grid_search() {
    // Two points per class in the plane.
    let x = ndarray::array![[0.0, 1.0, 3.0, 4.0], [0.0, 1.5, 2.0, 3.5]];
    let y = [0usize, 0, 1, 1];
    let c = 100.0;
    let svm = LinearSvm::fit(x.view(), &y, c);

    let ys = [1.0, 1.0, -1.0, -1.0];
    let primal = |w0: f64, w1: f64, b: f64| {
        let hinge: f64 = (0..4)
            .map(|j| (1.0 - ys[j] * (w0 * x[[0, j]] + w1 * x[[1, j]] + b)).max(0.0))
            .sum();
        0.5 * (w0 * w0 + w1 * w1) + c * hinge
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let grid = |lo: f64, hi: f64, steps: usize| (0..=steps).map(move |i| lo + (hi - lo) * i as f64 / steps as f64);
    for w0 in grid(-2.0, 2.0, 80) {
        for w1 in grid(-2.0, 2.0, 80) {
            for b in grid(-6.0, 6.0, 120) {
                let p = primal(w0, w1, b);
                if p < best.0 {
                    best = (p, w0, w1, b);
                }
            }
        }
    }
    // Refine around the current optimum with shrinking windows.
    for radius in [0.4, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005] {
        for _ in 0..3 {
            let (_, c0, c1, cb) = best;
            for w0 in grid(c0 - radius, c0 + radius, 40) {
                for w1 in grid(c1 - radius, c1 + radius, 40) {
                    for b in grid(cb - 2.0 * radius, cb + 2.0 * radius, 40) {
                        let p = primal(w0, w1, b);
                        if p < best.0 {
                            best = (p, w0, w1, b);
                        }
                    }
                }
            }
        }
    }
    let probes = Array2::from_shape_fn((2, 49), |(r, j)| if r == 0 { (j % 7) as f64 - 1.0 } else { (j / 7) as f64 - 1.0 });
    let ours = svm.predict(probes.view());
    for j in 0..probes.ncols() {
        let f = best.1 * probes[[0, j]] + best.2 * probes[[1, j]] + best.3;
        if f.abs() < 0.05 {
            continue; // within grid resolution of the boundary
        }
        let grid_class = if f > 0.0 { 0 } else { 1 };
        assert_eq!(ours[j], grid_class, "probe {j}");
    }
}
