//! Central finite-difference checks for every tape operation and for the
//! full training objective.
//!
//! The error measure is norm-wise over all inputs:
//! `‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂)`.

use std::fmt;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{OpKind, Tape, Var};
use crate::graph::knn_graph;
use crate::model::{bind, forward, losses, Autoencoder, ModelConfig, ModelParams, Stage};
use crate::seed;

pub const EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// Loss value and analytic gradient with respect to every input.
pub type LossAndGrad<'a> = dyn Fn(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>) + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>12} {:>10}  status", "op", "rel_err", "tol")?;
        for r in &self.results {
            writeln!(
                f,
                "{:<16} {:>12.3e} {:>10.0e}  {}",
                r.name,
                r.rel_err,
                r.tolerance,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Central differences of the loss in `f` with respect to every entry.
pub fn numerical_gradient(f: &LossAndGrad<'_>, inputs: &[Array2<f64>], eps: f64) -> Vec<Array2<f64>> {
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Array2::zeros(inputs[i].dim());
        for idx in ndarray::indices(inputs[i].dim()) {
            let orig = work[i][idx];
            work[i][idx] = orig + eps;
            let plus = f(&work).0;
            work[i][idx] = orig - eps;
            let minus = f(&work).0;
            work[i][idx] = orig;
            g[idx] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

pub fn relative_error(analytic: &[Array2<f64>], numeric: &[Array2<f64>]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.iter().zip(n.iter()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

pub fn check(name: &str, f: &LossAndGrad<'_>, inputs: &[Array2<f64>], tolerance: f64) -> CheckResult {
    let analytic = f(inputs).1;
    let numeric = numerical_gradient(f, inputs, EPS);
    CheckResult {
        name: name.to_owned(),
        rel_err: relative_error(&analytic, &numeric),
        tolerance,
    }
}

fn random(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random entries bounded away from zero so ±ε never crosses a ReLU kink.
fn random_away_from_zero(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type OpBuilder = fn(&mut Tape, &[Var]) -> Var;

/// Builds the op on a fresh tape, reduces matrix outputs with a fixed
/// random weighting, and returns loss and gradients.
fn op_loss(
    build: OpBuilder,
    readout: &Option<Array2<f64>>,
    fault: Option<OpKind>,
) -> impl Fn(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>) + '_ {
    move |inputs: &[Array2<f64>]| {
        let mut tape = Tape::new();
        if let Some(k) = fault {
            tape.inject_backward_fault(k);
        }
        let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = match readout {
            Some(w) => tape.weighted_sum(out, w.clone()).expect("readout shape"),
            None => out,
        };
        tape.backward(loss).expect("scalar loss");
        let grads = vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(v.shape())))
            .collect();
        (tape.scalar(loss), grads)
    }
}

/// Toy instance of the full model: `n = 12`, `d = 8`, `d' = 4`, two
/// adjacency layers, random `Q` and perturbed adjacency.
pub fn toy_problem(seed: u64) -> (Array2<f64>, Array2<f64>, ModelConfig, ModelParams) {
    let (n, d) = (12, 8);
    let cfg = ModelConfig {
        layer_widths: vec![6, 5, 4],
        alpha: 0.5,
        beta: 2.0,
        lambda: 0.7,
        seed,
        ..ModelConfig::default()
    };
    let mut rng = seed::rng(seed::substream(seed, "gradcheck"));
    let x = random(&mut rng, (d, n));
    let a0 = knn_graph(x.view(), 3).expect("k < n").adjacency;
    let ae = Autoencoder::init(&cfg.encoder_dims(d), seed);
    let mut params = ModelParams::from_pretrained(ae, &a0, &cfg);
    for a in &mut params.adjacency {
        a.mapv_inplace(|v| 0.3 * v + rng.random_range(-0.1..0.1));
    }
    params.q = random(&mut rng, (n, n)) * 0.3;
    for l in params
        .autoencoder
        .encoder
        .iter_mut()
        .chain(params.autoencoder.decoder.iter_mut())
    {
        l.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    (x, a0, cfg, params)
}

/// Loss-and-gradient of the full objective as a function of the trainable
/// arrays of `template`.
pub fn composite_loss<'a>(
    x: &'a Array2<f64>,
    a0: &'a Array2<f64>,
    cfg: &'a ModelConfig,
    template: &'a ModelParams,
    fault: Option<OpKind>,
) -> impl Fn(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>) + 'a {
    move |inputs: &[Array2<f64>]| {
        let mut params = template.clone();
        for (dst, src) in crate::model::trainable_arrays_mut(&mut params, cfg, Stage::Joint)
            .into_iter()
            .zip(inputs)
        {
            dst.assign(src);
        }
        let mut tape = Tape::new();
        if let Some(k) = fault {
            tape.inject_backward_fault(k);
        }
        let pv = bind(&mut tape, &params, cfg, Stage::Joint);
        let xv = tape.constant(x.clone());
        let a0v = tape.constant(a0.clone());
        let fv = forward(&mut tape, &pv, xv, cfg).expect("toy shapes agree");
        let lv = losses(&mut tape, &pv, &fv, xv, a0v, cfg).expect("toy shapes agree");
        tape.backward(lv.total).expect("scalar loss");
        let grads = pv
            .trainable
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(v.shape())))
            .collect();
        (tape.scalar(lv.total), grads)
    }
}

/// Every op on random small matrices plus the composite objective.
/// `fault` corrupts the backward rule of one op kind.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Report {
    let mut rng = seed::rng(seed::substream(seed, "gradcheck-ops"));
    let mut report = Report::default();

    let cases: Vec<(&str, OpBuilder, Vec<Array2<f64>>, Option<(usize, usize)>)> = vec![
        (
            "matmul",
            |t, v| t.matmul(v[0], v[1]).unwrap(),
            vec![random(&mut rng, (3, 4)), random(&mut rng, (4, 2))],
            Some((3, 2)),
        ),
        (
            "affine",
            |t, v| t.affine(v[0], v[1], v[2]).unwrap(),
            vec![
                random(&mut rng, (3, 4)),
                random(&mut rng, (4, 5)),
                random(&mut rng, (3, 1)),
            ],
            Some((3, 5)),
        ),
        (
            "relu",
            |t, v| t.relu(v[0]).unwrap(),
            vec![random_away_from_zero(&mut rng, (3, 4))],
            Some((3, 4)),
        ),
        (
            "frob_sq",
            |t, v| t.frob_sq(v[0]).unwrap(),
            vec![random(&mut rng, (3, 4))],
            None,
        ),
        (
            "sup_norm_rows",
            |t, v| t.sup_norm_rows(v[0]).unwrap(),
            vec![random_away_from_zero(&mut rng, (3, 4))],
            None,
        ),
        (
            "add",
            |t, v| t.add(v[0], v[1]).unwrap(),
            vec![random(&mut rng, (3, 4)), random(&mut rng, (3, 4))],
            Some((3, 4)),
        ),
        (
            "sub",
            |t, v| t.sub(v[0], v[1]).unwrap(),
            vec![random(&mut rng, (3, 4)), random(&mut rng, (3, 4))],
            Some((3, 4)),
        ),
        (
            "scale",
            |t, v| t.scale(v[0], -1.7).unwrap(),
            vec![random(&mut rng, (3, 4))],
            Some((3, 4)),
        ),
        (
            "weighted_sum",
            |t, v| t.weighted_sum(v[0], Array2::from_elem((3, 4), 0.25)).unwrap(),
            vec![random(&mut rng, (3, 4))],
            None,
        ),
    ];

    for (name, build, inputs, readout_shape) in cases {
        let readout = readout_shape.map(|s| random(&mut rng, s));
        let f = op_loss(build, &readout, fault);
        report.results.push(check(name, &f, &inputs, OP_TOLERANCE));
    }

    let (x, a0, cfg, params) = toy_problem(seed);
    let f = composite_loss(&x, &a0, &cfg, &params, fault);
    let mut template = params.clone();
    let inputs: Vec<Array2<f64>> = crate::model::trainable_arrays_mut(&mut template, &cfg, Stage::Joint)
        .into_iter()
        .map(|a| a.clone())
        .collect();
    report
        .results
        .push(check("composite", &f, &inputs, COMPOSITE_TOLERANCE));
    report
}
