//! Multinomial logistic regression and one-vs-rest linear SVM.
//!
//! Features are `d × n` column matrices, labels are class indices.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg::gram_spectral_norm_sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LinearSvm,
    LogisticRegression,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::LinearSvm, ClassifierKind::LogisticRegression];

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::LinearSvm => "linear_svm",
            ClassifierKind::LogisticRegression => "logistic_regression",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear_svm" | "svm" => Ok(ClassifierKind::LinearSvm),
            "logistic_regression" | "lr" => Ok(ClassifierKind::LogisticRegression),
            _ => Err(format!("unknown classifier {s:?}")),
        }
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Classes present in `y`, ascending.
fn present_classes(y: &[usize]) -> Vec<usize> {
    let mut c = y.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn argmax_first(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Appends a row of ones.
fn with_bias_row(x: ArrayView2<f64>) -> Array2<f64> {
    let (d, n) = x.dim();
    let mut out = Array2::ones((d + 1, n));
    out.slice_mut(ndarray::s![..d, ..]).assign(&x);
    out
}

pub const LOGREG_MAX_ITER: usize = 5000;
pub const LOGREG_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    /// `K × (d + 1)`, last column is the intercept.
    pub weights: Array2<f64>,
    /// Class index of each row of `weights`.
    pub classes: Vec<usize>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogReg {
    /// Full-batch gradient descent on mean cross-entropy plus
    /// `reg/2 · ‖W‖²` (intercepts unpenalized), step `1/L` with `L` an upper
    /// bound on the Hessian's largest eigenvalue.
    pub fn fit(x: ArrayView2<f64>, y: &[usize], reg: f64) -> Self {
        let classes = present_classes(y);
        let (d, n) = x.dim();
        let k = classes.len();
        let mut weights = Array2::zeros((k, d + 1));
        if k <= 1 || n == 0 {
            return Self {
                weights,
                classes,
                iterations: 0,
                grad_norm: 0.0,
            };
        }
        let xt = with_bias_row(x);
        let mut onehot = Array2::<f64>::zeros((k, n));
        for (j, &c) in y.iter().enumerate() {
            let r = classes.binary_search(&c).expect("present");
            onehot[[r, j]] = 1.0;
        }
        let lip = 1.05 * (0.5 * gram_spectral_norm_sq(xt.t(), 100) / n as f64) + reg;
        let step = 1.0 / lip;
        let mut penalty_mask = Array2::from_elem((k, d + 1), reg);
        penalty_mask.column_mut(d).fill(0.0);

        let mut iterations = 0;
        let mut grad_norm = f64::INFINITY;
        while iterations < LOGREG_MAX_ITER {
            let mut p = weights.dot(&xt);
            softmax_columns(&mut p);
            let resid = p - &onehot;
            let grad = resid.dot(&xt.t()) / n as f64 + &(&penalty_mask * &weights);
            grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < LOGREG_GRAD_TOL {
                break;
            }
            weights.scaled_add(-step, &grad);
            iterations += 1;
        }
        Self {
            weights,
            classes,
            iterations,
            grad_norm,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        match self.classes.len() {
            0 => vec![0; x.ncols()],
            1 => vec![self.classes[0]; x.ncols()],
            _ => {
                let scores = self.weights.dot(&with_bias_row(x));
                scores
                    .columns()
                    .into_iter()
                    .map(|c| self.classes[argmax_first(c.iter().copied())])
                    .collect()
            }
        }
    }
}

fn softmax_columns(z: &mut Array2<f64>) {
    for mut col in z.axis_iter_mut(Axis(1)) {
        let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - m).exp());
        let s = col.sum();
        col /= s;
    }
}

pub fn train_logreg(
    x_train: ArrayView2<f64>,
    y_train: &[usize],
    x_test: ArrayView2<f64>,
    y_test: &[usize],
    reg: f64,
) -> f64 {
    accuracy(&LogReg::fit(x_train, y_train, reg).predict(x_test), y_test)
}

pub const SVM_TOL: f64 = 1e-3;
const SVM_MAX_ITER: usize = 1_000_000;
const TAU: f64 = 1e-12;

/// Binary soft-margin SVM with linear kernel: `f(x) = wᵀx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub w: Array1<f64>,
    pub b: f64,
    pub iterations: usize,
}

impl BinarySvm {
    /// Dual coordinate ascent on working pairs chosen by maximal violation
    /// with second-order pair selection. `y` holds ±1.
    pub fn fit(x: ArrayView2<f64>, y: &[f64], c: f64) -> Self {
        let n = x.ncols();
        let gram = x.t().dot(&x);
        let mut alpha = vec![0.0; n];
        // Gradient of ½αᵀQα − eᵀα with Q_ij = y_i y_j K_ij.
        let mut grad = vec![-1.0; n];
        let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
        let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

        let mut iterations = 0;
        while iterations < SVM_MAX_ITER {
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j = usize::MAX;
            let mut best_obj = f64::INFINITY;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                if i != usize::MAX && v < gmax {
                    let b = gmax - v;
                    let mut a = gram[[i, i]] + gram[[t, t]] - 2.0 * gram[[i, t]];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < SVM_TOL {
                break;
            }
            iterations += 1;

            let (ai, aj) = (alpha[i], alpha[j]);
            let mut quad = gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]];
            if quad <= 0.0 {
                quad = TAU;
            }
            let (mut ni, mut nj);
            if y[i] != y[j] {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ni = ai + delta;
                nj = aj + delta;
                if diff > 0.0 {
                    if nj < 0.0 {
                        nj = 0.0;
                        ni = diff;
                    }
                } else if ni < 0.0 {
                    ni = 0.0;
                    nj = -diff;
                }
                if diff > 0.0 {
                    if ni > c {
                        ni = c;
                        nj = c - diff;
                    }
                } else if nj > c {
                    nj = c;
                    ni = c + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ni = ai - delta;
                nj = aj + delta;
                if sum > c {
                    if ni > c {
                        ni = c;
                        nj = sum - c;
                    }
                } else if nj < 0.0 {
                    nj = 0.0;
                    ni = sum;
                }
                if sum > c {
                    if nj > c {
                        nj = c;
                        ni = sum - c;
                    }
                } else if ni < 0.0 {
                    ni = 0.0;
                    nj = sum;
                }
            }
            let (di, dj) = (ni - ai, nj - aj);
            alpha[i] = ni;
            alpha[j] = nj;
            for t in 0..n {
                grad[t] += y[t] * (y[i] * gram[[t, i]] * di + y[j] * gram[[t, j]] * dj);
            }
        }

        // Offset from free multipliers, else the midpoint of the feasible range.
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        };
        let coef = Array1::from_shape_fn(n, |t| alpha[t] * y[t]);
        Self {
            w: x.dot(&coef),
            b: -rho,
            iterations,
        }
    }

    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.t().dot(&self.w) + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub machines: Vec<BinarySvm>,
    pub classes: Vec<usize>,
}

impl LinearSvm {
    /// One machine per class present in training, that class against the
    /// rest.
    pub fn fit(x: ArrayView2<f64>, y: &[usize], c: f64) -> Self {
        let classes = present_classes(y);
        let machines = if classes.len() <= 1 {
            Vec::new()
        } else {
            classes
                .iter()
                .map(|&k| {
                    let yb: Vec<f64> = y.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
                    BinarySvm::fit(x, &yb, c)
                })
                .collect()
        };
        Self { machines, classes }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        match self.classes.len() {
            0 => vec![0; x.ncols()],
            1 => vec![self.classes[0]; x.ncols()],
            _ => {
                let scores: Vec<Array1<f64>> = self.machines.iter().map(|m| m.decision(x)).collect();
                (0..x.ncols())
                    .map(|j| self.classes[argmax_first(scores.iter().map(|s| s[j]))])
                    .collect()
            }
        }
    }
}

pub fn train_linear_svm(
    x_train: ArrayView2<f64>,
    y_train: &[usize],
    x_test: ArrayView2<f64>,
    y_test: &[usize],
    c: f64,
) -> f64 {
    accuracy(&LinearSvm::fit(x_train, y_train, c).predict(x_test), y_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn two_blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let ds = make_blobs(20, 2, 3, 0.5, seed).unwrap();
        (ds.features, ds.labels.unwrap())
    }

    #[test]
    fn logreg_separable_training_accuracy() {
        for seed in 0..3 {
            let (x, y) = two_blobs(seed);
            let m = LogReg::fit(x.view(), &y, 1e-4);
            assert_eq!(accuracy(&m.predict(x.view()), &y), 1.0);
        }
    }

    #[test]
    fn svm_separable_test_accuracy() {
        for seed in 0..3 {
            let ds = make_blobs(40, 2, 3, 0.5, seed).unwrap();
            let y = ds.labels.clone().unwrap();
            let train: Vec<usize> = (0..80).step_by(2).collect();
            let test: Vec<usize> = (1..80).step_by(2).collect();
            let xs = ds.features.select(Axis(1), &train);
            let xt = ds.features.select(Axis(1), &test);
            let ys: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let yt: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            assert_eq!(train_linear_svm(xs.view(), &ys, xt.view(), &yt, 100.0), 1.0);
        }
    }

    #[test]
    fn single_class_predicts_it() {
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64);
        let y = vec![2; 4];
        let yt = vec![2, 0, 2, 1];
        assert_eq!(train_logreg(x.view(), &y, x.view(), &yt, 1e-4), 0.5);
        assert_eq!(train_linear_svm(x.view(), &y, x.view(), &yt, 100.0), 0.5);
    }

    #[test]
    fn tiny_c_gives_majority_class() {
        let ds = make_blobs(10, 3, 2, 3.0, 4).unwrap();
        let mut y = ds.labels.unwrap();
        // Make class 1 the majority.
        for l in y.iter_mut().take(6) {
            *l = 1;
        }
        let pred = LinearSvm::fit(ds.features.view(), &y, 1e-8).predict(ds.features.view());
        assert!(pred.iter().all(|&p| p == 1), "{pred:?}");
    }

    #[test]
    fn constant_prediction_accuracy_is_prevalence() {
        let truth = vec![0, 1, 1, 2, 1];
        assert_eq!(accuracy(&[1; 5], &truth), 0.6);
    }

    #[test]
    fn multiclass_blobs() {
        let ds = make_blobs(15, 4, 5, 0.7, 11).unwrap();
        let y = ds.labels.unwrap();
        let lr = LogReg::fit(ds.features.view(), &y, 1e-4);
        assert_eq!(accuracy(&lr.predict(ds.features.view()), &y), 1.0);
        let svm = LinearSvm::fit(ds.features.view(), &y, 100.0);
        assert_eq!(accuracy(&svm.predict(ds.features.view()), &y), 1.0);
    }

    #[test]
    fn svm_kkt_on_overlapping_data() {
        let ds = make_blobs(15, 2, 2, 4.0, 6).unwrap();
        let y: Vec<f64> = ds.labels.unwrap().iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
        let c = 1.0;
        let m = BinarySvm::fit(ds.features.view(), &y, c);
        let f = m.decision(ds.features.view());
        // Margin violators must be allowed only when their multiplier is at C,
        // which shows up as y·f < 1 for a bounded number of points.
        let hinge: f64 = f.iter().zip(&y).map(|(v, t)| (1.0 - v * t).max(0.0)).sum();
        let primal = 0.5 * m.w.dot(&m.w) + c * hinge;
        // Any perturbation of (w, b) must not lower the primal noticeably.
        for (dw, db) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)] {
            let w2 = &m.w + dw;
            let f2 = ds.features.t().dot(&w2) + m.b + db;
            let h2: f64 = f2.iter().zip(&y).map(|(v, t)| (1.0 - v * t).max(0.0)).sum();
            let p2 = 0.5 * w2.dot(&w2) + c * h2;
            assert!(p2 >= primal - 1e-2 * primal.abs().max(1.0), "{p2} < {primal}");
        }
    }
}
