//! Independent reference implementations and numerical checkers shared by the
//! integration tests.

#![allow(dead_code)]

use cocoa_core::autodiff::Tape;
use cocoa_core::losses::{
    barlow_twins_loss, cmc_loss, cocoa_loss, dcl_loss, hard_dcl_loss, infonce_loss, CocoaHyper, LossOutput,
    OpCounter, SimilarityKind,
};
use cocoa_core::{EmbeddingSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const COS: SimilarityKind = SimilarityKind::Cosine;
pub const DCL_EPS: f64 = 1e-7;
pub const LAMBDA_BT: f64 = 0.005;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn views(rng: &mut ChaCha8Rng, v: usize, n: usize, d: usize) -> Vec<Tensor> {
    (0..v).map(|_| gaussian(rng, &[n, d])).collect()
}

pub fn set(views: &[Tensor]) -> EmbeddingSet {
    EmbeddingSet::new(views.to_vec()).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn ref_cocoa(z: &[Tensor], tau: f64, lambda: f64) -> f64 {
    let v_count = z.len();
    let n = z[0].rows();
    let mut pos = 0.0;
    for t in 0..n {
        for v in 0..v_count {
            for w in 0..v_count {
                if v != w {
                    pos += ((1.0 - cos(z[v].row(t), z[w].row(t))) / tau).exp();
                }
            }
        }
    }
    let mut neg = 0.0;
    for m in z {
        let mut s = 0.0;
        let mut pairs = 0.0;
        for t in 0..n {
            for u in 0..n {
                if t != u {
                    s += (cos(m.row(t), m.row(u)) / tau).exp();
                    pairs += 1.0;
                }
            }
        }
        neg += s / pairs;
    }
    pos + lambda * neg
}

pub fn ref_infonce(a: &Tensor, b: &Tensor, tau: f64) -> f64 {
    let n = a.rows();
    let mut total = 0.0;
    for t in 0..n {
        let mut denom = 0.0;
        for u in 0..n {
            denom += (cos(a.row(t), b.row(u)) / tau).exp();
        }
        let num = (cos(a.row(t), b.row(t)) / tau).exp();
        total += -(num / denom).ln();
    }
    total / n as f64
}

/// Debiased loss with per-negative weights produced by `weights(negatives)`.
fn ref_debiased(a: &Tensor, b: &Tensor, tau: f64, eps: f64, weights: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let n = a.rows();
    let n_neg = (n - 1) as f64;
    let mut total = 0.0;
    for t in 0..n {
        let s_pos = cos(a.row(t), b.row(t));
        let negs: Vec<f64> = (0..n).filter(|&u| u != t).map(|u| cos(a.row(t), b.row(u))).collect();
        let w = weights(&negs);
        let mut mass = 0.0;
        for i in 0..negs.len() {
            mass += w[i] * negs[i].exp();
        }
        let g = ((mass / n_neg + s_pos.exp()) / tau).max(eps);
        total += -(s_pos.exp() / (s_pos.exp() + n_neg * g)).ln();
    }
    total / n as f64
}

pub fn ref_dcl(a: &Tensor, b: &Tensor, tau: f64, eps: f64) -> f64 {
    ref_debiased(a, b, tau, eps, |negs| vec![1.0; negs.len()])
}

pub fn ref_hard_dcl(a: &Tensor, b: &Tensor, tau: f64, eps: f64, beta: f64) -> f64 {
    ref_debiased(a, b, tau, eps, |negs| {
        let z: f64 = negs.iter().map(|s| s.exp()).sum();
        negs.iter().map(|s| beta * s.exp() / z).collect()
    })
}

pub fn ref_barlow(a: &Tensor, b: &Tensor, lambda_bt: f64) -> f64 {
    let (n, d) = (a.rows(), a.cols());
    let standardize = |m: &Tensor| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; n];
        for j in 0..d {
            let mut mean = 0.0;
            for t in 0..n {
                mean += m.row(t)[j];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for t in 0..n {
                var += (m.row(t)[j] - mean).powi(2);
            }
            var /= n as f64;
            for t in 0..n {
                out[t][j] = (m.row(t)[j] - mean) / (var + 1e-9).sqrt();
            }
        }
        out
    };
    let (za, zb) = (standardize(a), standardize(b));
    let mut loss = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut c = 0.0;
            for t in 0..n {
                c += za[t][i] * zb[t][j];
            }
            c /= n as f64;
            loss += if i == j { (1.0 - c).powi(2) } else { lambda_bt * c * c };
        }
    }
    loss
}

pub fn ref_cmc(z: &[Tensor], tau: f64) -> f64 {
    let mut total = 0.0;
    for v in 0..z.len() {
        for w in 0..z.len() {
            if v != w {
                total += ref_infonce(&z[v], &z[w], tau);
            }
        }
    }
    total
}

/// Two-view objectives summed over every unordered modality pair.
pub fn pair_sum(z: &[Tensor], f: impl Fn(&Tensor, &Tensor) -> f64) -> f64 {
    let mut total = 0.0;
    for v in 0..z.len() {
        for w in v + 1..z.len() {
            total += f(&z[v], &z[w]);
        }
    }
    total
}

pub const LOSS_NAMES: [&str; 6] = ["cocoa", "infonce", "dcl", "hard_dcl", "barlow", "cmc"];

#[derive(Clone, Copy, Debug)]
pub struct LossHyper {
    pub tau: f64,
    pub lambda: f64,
    pub beta: f64,
}

/// Library value and gradients for a named loss; two-view losses take views 0 and 1.
pub fn library_loss(name: &str, z: &[Tensor], h: LossHyper) -> LossOutput {
    let c = &mut OpCounter::new();
    match name {
        "cocoa" => cocoa_loss(&set(z), &CocoaHyper { tau: h.tau, lambda: h.lambda }, c),
        "cmc" => cmc_loss(&set(z), h.tau, COS, c),
        "infonce" => infonce_loss(&z[0], &z[1], h.tau, COS, c),
        "dcl" => dcl_loss(&z[0], &z[1], h.tau, DCL_EPS, COS, c),
        "hard_dcl" => hard_dcl_loss(&z[0], &z[1], h.tau, DCL_EPS, h.beta, COS, c),
        "barlow" => barlow_twins_loss(&z[0], &z[1], LAMBDA_BT),
        other => panic!("unknown loss {other}"),
    }
    .unwrap()
}

pub fn reference_loss(name: &str, z: &[Tensor], h: LossHyper) -> f64 {
    match name {
        "cocoa" => ref_cocoa(z, h.tau, h.lambda),
        "cmc" => ref_cmc(z, h.tau),
        "infonce" => ref_infonce(&z[0], &z[1], h.tau),
        "dcl" => ref_dcl(&z[0], &z[1], h.tau, DCL_EPS),
        "hard_dcl" => ref_hard_dcl(&z[0], &z[1], h.tau, DCL_EPS, h.beta),
        "barlow" => ref_barlow(&z[0], &z[1], LAMBDA_BT),
        other => panic!("unknown loss {other}"),
    }
}

/// Number of input views a named loss consumes from a `V`-view instance.
pub fn arity(name: &str, v: usize) -> usize {
    if matches!(name, "cocoa" | "cmc") {
        v
    } else {
        2
    }
}

pub fn random_hyper(rng: &mut ChaCha8Rng) -> LossHyper {
    LossHyper {
        tau: rng.random_range(0.2..1.0),
        lambda: rng.random_range(0.1..4.0),
        beta: rng.random_range(0.1..2.0),
    }
}

/// `|a − b| ≤ tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Central differences of `f` with respect to every element of every input.
pub fn finite_diff(inputs: &[Tensor], h: f64, f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + h;
            let up = f(&work);
            work[i].data_mut()[k] = x - h;
            let down = f(&work);
            work[i].data_mut()[k] = x;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)` over all tensors jointly.
pub fn rel_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (p, q) in x.data().iter().zip(y.data()) {
            diff += (p - q).powi(2);
            na += p * p;
            nb += q * q;
        }
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}

/// Outcome of one suite: instances checked and the worst error seen.
#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub instances: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new() -> Self {
        Self {
            instances: 0,
            worst: 0.0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, label: String, err: f64, tol: f64) {
        self.instances += 1;
        self.worst = self.worst.max(err);
        if !(err <= tol) {
            self.failures.push(format!("{label}: error {err:.3e}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Every loss against its loop reference over the full `V × N × d` grid,
/// repeated until each loss has at least `min_per_loss` instances.
pub fn loss_oracle_suite(min_per_loss: usize, tol: f64) -> SuiteResult {
    let mut out = SuiteResult::new();
    let mut r = rng(0x0AC1E);
    for name in LOSS_NAMES {
        let mut done = 0;
        while done < min_per_loss {
            for v in [2, 3, 4] {
                for n in [2, 4, 8] {
                    for d in [3, 8] {
                        let h = random_hyper(&mut r);
                        let z = views(&mut r, arity(name, v), n, d);
                        let got = library_loss(name, &z, h).value;
                        let want = if matches!(name, "cocoa" | "cmc") {
                            reference_loss(name, &z, h)
                        } else {
                            reference_loss(name, &z[..2], h)
                        };
                        let err = (got - want).abs() / want.abs().max(1.0);
                        out.record(format!("{name} V={v} N={n} d={d}"), err, tol);
                        done += 1;
                    }
                }
            }
        }
    }
    out
}

/// Analytic loss gradients against central differences of the reference loss.
pub fn loss_gradient_suite(per_loss: usize, tol: f64) -> SuiteResult {
    let mut out = SuiteResult::new();
    let mut r = rng(0x6AD);
    for name in LOSS_NAMES {
        for i in 0..per_loss {
            let v = [2, 3, 4][i % 3];
            // two-sample standardization is ±1 whatever the inputs, leaving no gradient to check
            let n = if name == "barlow" { [4, 8][(i / 3) % 2] } else { [2, 4, 8][(i / 3) % 3] };
            let d = [3, 8][i % 2];
            let h = random_hyper(&mut r);
            let z = views(&mut r, arity(name, v), n, d);
            let analytic = library_loss(name, &z, h).grads;
            let numeric = finite_diff(&z, 1e-6, |z| reference_loss(name, z, h));
            out.record(format!("{name} V={v} N={n} d={d}"), rel_error(&analytic, &numeric), tol);
        }
    }
    out
}

/// Gradient of `Σ R ⊙ op(inputs)` by the tape versus central differences of
/// the op's forward pass.
fn check_op(
    inputs: &[Tensor],
    r: &mut ChaCha8Rng,
    op: &dyn Fn(&mut Tape, &[cocoa_core::autodiff::Var]) -> cocoa_core::autodiff::Var,
) -> f64 {
    let forward = |xs: &[Tensor]| -> Tensor {
        let mut tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let y = op(&mut tape, &vars);
        tape.value(y).clone()
    };
    let probe = gaussian(r, forward(inputs).shape());
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let y = op(&mut tape, &vars);
    let value: f64 = tape.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
    let root = if tape.value(y).is_scalar() {
        y
    } else {
        tape.scalar_fn(&[y], value, vec![probe.clone()]).unwrap()
    };
    let mut grads = tape.backward(root).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
    let scale = if forward(inputs).is_scalar() { 1.0 / probe.item() } else { 1.0 };
    let numeric = finite_diff(inputs, 1e-6, |xs| {
        let y = forward(xs);
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>() * scale
    });
    rel_error(&analytic, &numeric)
}

pub const OP_NAMES: [&str; 10] = [
    "conv1d",
    "relu",
    "layer_norm",
    "global_avg_pool",
    "dense",
    "softmax_cross_entropy",
    "concat_cols",
    "sum",
    "add",
    "scale",
];

/// Tape gradients of every encoder op against central differences.
pub fn op_gradient_suite(per_op: usize, tol: f64) -> SuiteResult {
    let mut out = SuiteResult::new();
    let mut r = rng(0x0975);
    for name in OP_NAMES {
        for i in 0..per_op {
            let n = 1 + i % 3;
            let t = 6 + i % 4;
            let (cin, cout, k) = (1 + i % 3, 1 + (i / 2) % 3, 1 + i % 4);
            let (inputs, op): (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[_]) -> _>) = match name {
                "conv1d" => (
                    vec![gaussian(&mut r, &[n, t, cin]), gaussian(&mut r, &[k, cin, cout]), gaussian(&mut r, &[cout])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.conv1d(v[0], v[1], v[2]).unwrap()),
                ),
                "relu" => (
                    vec![gaussian(&mut r, &[n, t, cin])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.relu(v[0]).unwrap()),
                ),
                "layer_norm" => {
                    let width = 2 + i % 4;
                    (
                        vec![gaussian(&mut r, &[n, t, width]), gaussian(&mut r, &[width]), gaussian(&mut r, &[width])],
                        Box::new(|tp: &mut Tape, v: &[_]| tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
                    )
                }
                "global_avg_pool" => (
                    vec![gaussian(&mut r, &[n, t, cin])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.global_avg_pool(v[0]).unwrap()),
                ),
                "dense" => (
                    vec![gaussian(&mut r, &[n, cin]), gaussian(&mut r, &[cin, cout]), gaussian(&mut r, &[cout])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.dense(v[0], v[1], v[2]).unwrap()),
                ),
                "softmax_cross_entropy" => {
                    let classes = 2 + i % 3;
                    let labels: Vec<usize> = (0..n + 1).map(|j| (i + j) % classes).collect();
                    (
                        vec![gaussian(&mut r, &[n + 1, classes])],
                        Box::new(move |tp: &mut Tape, v: &[_]| tp.softmax_cross_entropy(v[0], &labels).unwrap()),
                    )
                }
                "concat_cols" => (
                    vec![gaussian(&mut r, &[n, cin]), gaussian(&mut r, &[n, cout])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.concat_cols(v).unwrap()),
                ),
                "sum" => (
                    vec![gaussian(&mut r, &[n, t])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.sum(v[0]).unwrap()),
                ),
                "add" => (
                    vec![gaussian(&mut r, &[n, cin]), gaussian(&mut r, &[n, cin])],
                    Box::new(|tp: &mut Tape, v: &[_]| tp.add(v[0], v[1]).unwrap()),
                ),
                _ => (
                    vec![gaussian(&mut r, &[n, cin])],
                    Box::new(move |tp: &mut Tape, v: &[_]| tp.scale(v[0], 0.5 + i as f64).unwrap()),
                ),
            };
            let err = check_op(&inputs, &mut r, op.as_ref());
            out.record(format!("{name} instance {i}"), err, tol);
        }
    }
    out
}

/// A small synthetic dataset split for fast end-to-end runs.
pub fn small_splits(seed: u64) -> (cocoa_core::batching::DatasetSplits, cocoa_core::encoder::EncoderConfig) {
    use cocoa_core::batching::{split_dataset, SplitFractions};
    use cocoa_core::synth::{generate, SynthConfig};
    let ds = generate(&SynthConfig {
        window: 32,
        windows_per_class: 40,
        seed,
        ..Default::default()
    })
    .unwrap();
    let splits = split_dataset(&ds, SplitFractions::default(), seed).unwrap();
    let enc = cocoa_core::encoder::EncoderConfig::for_modalities(ds.modalities()).unwrap();
    (splits, enc)
}

/// Drops wall-clock fields so runs can be compared for bit-equality.
pub fn without_timing(m: &[cocoa_core::pipeline::RunMetrics]) -> Vec<cocoa_core::pipeline::RunMetrics> {
    m.iter()
        .cloned()
        .map(|mut r| {
            r.wall_seconds = 0.0;
            r
        })
        .collect()
}
