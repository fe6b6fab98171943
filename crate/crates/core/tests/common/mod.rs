//! Helpers shared by the integration test targets.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnet_core::data::{generate, Dataset, SynthSpec};
use tnet_core::eval::{evaluate, fit, EvalReport};
use tnet_core::nn::{Model, ModelSpec};
use tnet_core::parallel::Execution;
use tnet_core::runconfig::RunConfig;
use tnet_core::training::{StepMetrics, Trainer};
use tnet_core::{Padding, Real, Result, Tape, Tensor, Var};

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Norm-wise relative error between reverse-mode gradients and central
/// differences of a scalar function of `inputs`.
pub fn fd_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Real {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let h = 1e-5;
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (which, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[which]).map(|g| g.to_vec()).unwrap_or(vec![0.0; t.len()]);
        for j in 0..t.len() {
            let eval = |delta: Real| {
                let mut tp = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(w, src)| {
                        let mut c = src.clone();
                        if w == which {
                            c.data_mut()[j] += delta;
                        }
                        tp.leaf(c, true)
                    })
                    .collect();
                let l = f(&mut tp, &vs).unwrap();
                tp.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            diff += (numeric - analytic[j]).powi(2);
            na += analytic[j].powi(2);
            nn += numeric.powi(2);
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Weighted sum of every entry of `y`, so each output element gets its own sensitivity.
fn project(t: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let len = t.value(y).len();
    let flat = t.reshape(y, [len])?;
    let m = t.constant(Tensor::vector(weights.data()[..len].to_vec()));
    let p = t.mul(flat, m)?;
    Ok(t.sum(p))
}

pub const OP_NAMES: [&str; 33] = [
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "add_all",
    "matmul",
    "bias_add",
    "mul_channel",
    "linear",
    "conv2d_same",
    "conv2d_valid",
    "depthwise_conv2d",
    "mean_rows",
    "gap",
    "leaky_relu",
    "relu",
    "silu",
    "sigmoid",
    "log",
    "exp",
    "softmax",
    "log_softmax",
    "l2_normalize",
    "mean",
    "reshape",
    "concat",
    "concat_rows",
    "tile",
    "gather_rows",
    "pick",
    "crop",
    "cross_entropy",
];

/// One randomized finite-difference case of operation `OP_NAMES[op]`.
pub fn op_case(op: usize, seed: u64) -> Real {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..6usize);
    let c = rng.gen_range(1..4usize);
    let x = random(&[n, n, c], &mut rng);
    let y = random(&[n, n, c], &mut rng);
    let w = random(&[4 * n * n * c + 16], &mut rng);
    let unary = |f: fn(&mut Tape, Var) -> Result<Var>| {
        let w = w.clone();
        fd_error(std::slice::from_ref(&x), move |t, v| {
            let out = f(t, v[0])?;
            project(t, out, &w)
        })
    };
    let binary = |f: fn(&mut Tape, Var, Var) -> Result<Var>| {
        let w = w.clone();
        fd_error(&[x.clone(), y.clone()], move |t, v| {
            let out = f(t, v[0], v[1])?;
            project(t, out, &w)
        })
    };
    match OP_NAMES[op] {
        "add" => binary(|t, a, b| t.add(a, b)),
        "sub" => binary(|t, a, b| t.sub(a, b)),
        "mul" => binary(|t, a, b| t.mul(a, b)),
        "scale" => unary(|t, a| Ok(t.scale(a, -1.7))),
        "add_scalar" => unary(|t, a| {
            let s = t.add_scalar(a, 0.3);
            t.mul(s, s)
        }),
        "add_all" => binary(|t, a, b| {
            let p = t.mul(a, b)?;
            t.add_all(&[a, b, p])
        }),
        "matmul" => {
            let k = rng.gen_range(1..5);
            let a = random(&[n, k], &mut rng);
            let b = random(&[k, c + 1], &mut rng);
            fd_error(&[a, b], |t, v| {
                let out = t.matmul(v[0], v[1])?;
                project(t, out, &w)
            })
        }
        "bias_add" | "mul_channel" => {
            let b = random(&[c], &mut rng);
            let bias = OP_NAMES[op] == "bias_add";
            fd_error(&[x.clone(), b], |t, v| {
                let out = if bias { t.bias_add(v[0], v[1])? } else { t.mul_channel(v[0], v[1])? };
                project(t, out, &w)
            })
        }
        "linear" => {
            let wt = random(&[c, 3], &mut rng);
            let b = random(&[3], &mut rng);
            fd_error(&[x.clone(), wt, b], |t, v| {
                let out = t.linear(v[0], v[1], Some(v[2]))?;
                project(t, out, &w)
            })
        }
        "conv2d_same" | "conv2d_valid" => {
            let k = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let pad = if OP_NAMES[op] == "conv2d_same" { Padding::Same } else { Padding::Valid };
            let kernel = random(&[k, k, c, 2], &mut rng);
            fd_error(&[x.clone(), kernel], |t, v| {
                let out = t.conv2d(v[0], v[1], stride, pad)?;
                project(t, out, &w)
            })
        }
        "depthwise_conv2d" => {
            let k = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let kernel = random(&[k, k, c], &mut rng);
            fd_error(&[x.clone(), kernel], |t, v| {
                let out = t.depthwise_conv2d(v[0], v[1], stride, Padding::Same)?;
                project(t, out, &w)
            })
        }
        "mean_rows" => unary(|t, a| t.mean_rows(a)),
        "gap" => unary(|t, a| {
            let g = t.gap(a)?;
            t.mul(g, g)
        }),
        "leaky_relu" => unary(|t, a| Ok(t.leaky_relu(a, 0.2))),
        "relu" => unary(|t, a| Ok(t.relu(a))),
        "silu" => unary(|t, a| Ok(t.silu(a))),
        "sigmoid" => unary(|t, a| Ok(t.sigmoid(a))),
        "log" => {
            let pos = x.map(|v| v.abs() + 0.5);
            fd_error(&[pos], |t, v| {
                let out = t.log(v[0])?;
                project(t, out, &w)
            })
        }
        "exp" => unary(|t, a| Ok(t.exp(a))),
        "softmax" => unary(|t, a| t.softmax(a)),
        "log_softmax" => unary(|t, a| t.log_softmax(a)),
        "l2_normalize" => unary(|t, a| t.l2_normalize(a)),
        "mean" => unary(|t, a| {
            let m = t.mean(a);
            t.mul(m, m)
        }),
        "reshape" => unary(|t, a| {
            let len = t.value(a).len();
            let r = t.reshape(a, [len])?;
            t.mul(r, r)
        }),
        "concat" => binary(|t, a, b| {
            let s = t.sigmoid(b);
            t.concat(&[a, s])
        }),
        "concat_rows" => {
            let a = random(&[c + 1], &mut rng);
            let b = random(&[2, c + 1], &mut rng);
            fd_error(&[a, b], |t, v| {
                let out = t.concat_rows(&[v[0], v[1]])?;
                let sq = t.mul(out, out)?;
                project(t, sq, &w)
            })
        }
        "tile" => {
            let a = random(&[c + 1], &mut rng);
            fd_error(&[a], |t, v| {
                let out = t.tile(v[0], 3)?;
                project(t, out, &w)
            })
        }
        "gather_rows" => {
            let rows: Vec<usize> = (0..4).map(|_| rng.gen_range(0..n * n)).collect();
            fd_error(std::slice::from_ref(&x), move |t, v| {
                let out = t.gather_rows(v[0], c, &rows)?;
                project(t, out, &w)
            })
        }
        "pick" => {
            let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..n * n * c)).collect();
            fd_error(std::slice::from_ref(&x), move |t, v| {
                let out = t.pick(v[0], &idx)?;
                let sq = t.mul(out, out)?;
                project(t, sq, &w)
            })
        }
        "crop" => {
            let (h, wd) = (rng.gen_range(1..n), rng.gen_range(1..n));
            let (top, left) = (rng.gen_range(0..=n - h), rng.gen_range(0..=n - wd));
            fd_error(std::slice::from_ref(&x), move |t, v| {
                let out = t.crop(v[0], top, left, h, wd)?;
                project(t, out, &w)
            })
        }
        "cross_entropy" => {
            let label = rng.gen_range(0..n * n * c);
            fd_error(std::slice::from_ref(&x), move |t, v| {
                let len = t.value(v[0]).len();
                let flat = t.reshape(v[0], [len])?;
                t.cross_entropy(flat, label)
            })
        }
        other => panic!("no case for {other}"),
    }
}

/// Glyph-task training setup: the synthetic preset with the given seed and λ.
pub fn glyph_config(seed: u64, lambda: Real) -> RunConfig {
    let mut cfg = RunConfig::preset("synthetic").unwrap();
    cfg.seed = seed;
    cfg.loss.lambda_c = lambda;
    cfg.loss.lambda_r = lambda;
    cfg
}

/// Fixed train/test glyph datasets shared by every seed.
pub fn glyph_data(train: usize, test: usize) -> (Dataset, Dataset) {
    let spec = SynthSpec { seed: 1001, ..SynthSpec::default() };
    let test_spec = SynthSpec { seed: 2002, ..SynthSpec::default() };
    (generate(&spec, train).unwrap(), generate(&test_spec, test).unwrap())
}

pub struct RunResult {
    pub metrics: Vec<StepMetrics>,
    pub eval: Vec<EvalReport>,
    pub model: Model,
}

/// Trains `cfg` for `steps` and evaluates with 0 and 1 attended locations.
pub fn train_and_eval(cfg: &RunConfig, train: &Dataset, test: &Dataset, steps: usize, exec: Execution) -> RunResult {
    let mut tc = cfg.train_config();
    tc.execution = exec;
    let model = Model::new(cfg.model_spec().unwrap(), cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, cfg.traversal.clone(), tc).unwrap();
    let mut metrics = Vec::new();
    fit(&mut trainer, train, cfg.batch, steps, |_, m| {
        metrics.push(m.clone());
        Ok(())
    })
    .unwrap();
    let eval = (0..=1).map(|n| evaluate(&trainer.model, &cfg.traversal, test, n, exec).unwrap()).collect();
    RunResult { metrics, eval, model: trainer.model }
}

pub fn tiny_model(seed: u64, classes: usize) -> Model {
    Model::new(ModelSpec::tiny(classes), seed).unwrap()
}

pub fn median(values: &[Real]) -> Real {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
