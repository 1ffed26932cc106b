//! Central finite-difference oracle for the reverse-mode tape.

use inpaint_core::latent::{ContextMode, InpaintNet, LatentRnnConfig, SplitSpec};
use inpaint_core::nn::{Binding, Ctx, Embedding, Gru, GruCell, Linear, ParameterStore, RngStream, Tape, Tensor, Var};
use inpaint_core::vae::{MeasureVae, Posterior, VaeConfig, ZMode};

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor: below this both gradients count as zero-scale and the
/// comparison is effectively absolute.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(analytic, numeric)` at the worst entry.
    pub worst: (f64, f64),
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = (analytic, numeric);
        }
        self.checked += 1;
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= MAX_REL_ERR
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Check every input entry of a scalar function built on the tape.
pub fn check_tape<'a, F>(inputs: &[Tensor<f64>], f: F) -> GradReport
where
    F: Fn(&mut Tape<'a, f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape: Tape<'a, f64> = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.item(out)
    };
    let mut tape: Tape<'a, f64> = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    let mut report = GradReport::default();
    let mut vals = inputs.to_vec();
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = vals[k].data()[i];
            vals[k].data_mut()[i] = orig + STEP;
            let up = eval(&vals);
            vals[k].data_mut()[i] = orig - STEP;
            let down = eval(&vals);
            vals[k].data_mut()[i] = orig;
            report.record(g.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    report
}

/// Check parameter gradients accumulated by `analytic` against central
/// differences of `loss`. At most `per_tensor` entries of each tensor are
/// probed (all of them when the tensor is smaller).
pub fn check_store<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParameterStore<f64>,
    analytic: impl FnOnce(&mut M),
    loss: impl Fn(&M) -> f64,
    per_tensor: usize,
    seed: u64,
) -> GradReport {
    store(model).zero_grads();
    analytic(model);
    let ids: Vec<_> = store(model).ids().collect();
    let grads: Vec<Tensor<f64>> = ids.iter().map(|&id| store(model).grad(id).clone()).collect();
    let mut pick = RngStream::new(seed);
    let mut report = GradReport::default();
    for (id, g) in ids.into_iter().zip(grads) {
        let n = g.len();
        let entries: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.below(n)).collect()
        };
        for i in entries {
            let orig = store(model).get(id).data()[i];
            store(model).get_mut(id).data_mut()[i] = orig + STEP;
            let up = loss(model);
            store(model).get_mut(id).data_mut()[i] = orig - STEP;
            let down = loss(model);
            store(model).get_mut(id).data_mut()[i] = orig;
            report.record(g.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    report
}

/// Weighted sum with fixed random weights so every output entry gets a
/// distinct upstream gradient.
fn probe(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let w = random_tensor(&shape, &mut RngStream::new(seed));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

/// Inputs bounded away from `0` so ReLU/clamp kinks stay outside `±STEP`.
fn away_from_kinks(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    random_tensor(shape, rng).map(|x| if x.abs() < 0.05 { x + 0.1_f64.copysign(x) } else { x })
}

pub fn primitive_checks() -> Vec<(&'static str, GradReport)> {
    let mut rng = RngStream::new(11);
    let mut out = Vec::new();
    let x = random_tensor(&[3, 4], &mut rng);
    let w = random_tensor(&[4, 5], &mut rng);
    let b = random_tensor(&[5], &mut rng);
    out.push((
        "linear",
        check_tape(&[x.clone(), w.clone(), b], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
            probe(t, y, 1)
        }),
    ));
    out.push((
        "matmul",
        check_tape(&[x.clone(), w], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            probe(t, y, 2)
        }),
    ));
    let y = random_tensor(&[3, 4], &mut rng);
    out.push((
        "add/sub/mul",
        check_tape(&[x.clone(), y.clone()], |t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let s = t.sub(a, v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let m = t.mul(m, v[0]).unwrap();
            probe(t, m, 3)
        }),
    ));
    type Unary = fn(&mut Tape<'_, f64>, Var) -> Var;
    let unary: [(&'static str, Unary); 8] = [
        ("sigmoid", |t, a| t.sigmoid(a)),
        ("tanh", |t, a| t.tanh(a)),
        ("relu", |t, a| t.relu(a)),
        ("selu", |t, a| t.selu(a)),
        ("exp", |t, a| t.exp(a)),
        ("scale", |t, a| t.scale(a, -1.7)),
        ("add_scalar", |t, a| t.add_scalar(a, 0.3)),
        ("clamp", |t, a| t.clamp(a, -0.5, 0.7)),
    ];
    for (name, op) in unary {
        let mut x = away_from_kinks(&[3, 4], &mut rng);
        if name == "clamp" {
            x = x.map(|v| if (v + 0.5).abs() < 0.05 || (v - 0.7).abs() < 0.05 { v + 0.2 } else { v });
        }
        out.push((name, check_tape(&[x], |t, v| {
            let y = op(t, v[0]);
            probe(t, y, 4)
        })));
    }
    let z = random_tensor(&[3, 2], &mut rng);
    out.push((
        "concat/slice cols",
        check_tape(&[x.clone(), z], |t, v| {
            let c = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
            let s = t.slice_cols(c, 2, 7);
            probe(t, s, 5)
        }),
    ));
    let r = random_tensor(&[2, 4], &mut rng);
    out.push((
        "concat/slice rows",
        check_tape(&[x.clone(), r], |t, v| {
            let c = t.concat_rows(&[v[1], v[0], v[1]]).unwrap();
            let s = t.slice_rows(c, 1, 5);
            probe(t, s, 6)
        }),
    ));
    let table = random_tensor(&[4, 3], &mut rng);
    out.push((
        "embedding (repeated index)",
        check_tape(&[table], |t, v| {
            let g = t.gather(v[0], &[0, 2, 0, 1, 0, 2]).unwrap();
            probe(t, g, 7)
        }),
    ));
    out.push((
        "mask",
        check_tape(std::slice::from_ref(&x), |t, v| {
            let m = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
            let y = t.mask(v[0], m);
            probe(t, y, 8)
        }),
    ));
    let logits = random_tensor(&[6, 5], &mut rng);
    out.push((
        "softmax cross-entropy",
        check_tape(&[logits], |t, v| t.cross_entropy(v[0], &[0, 4, 2, 2, 1, 3]).unwrap()),
    ));
    out.push((
        "sum",
        check_tape(&[x], |t, v| {
            let s = t.sum(v[0]);
            t.scale(s, 0.5)
        }),
    ));
    out.extend(layer_checks());
    out
}

struct Layered {
    store: ParameterStore<f64>,
    cell: GruCell,
    gru: Gru,
    linear: Linear,
    embed: Embedding,
}

fn layered_loss(m: &Layered, with_dropout: bool) -> (f64, Vec<Option<Tensor<f64>>>) {
    let mut tape = Tape::new();
    let p = Binding::new(&m.store, true);
    let mut rng = RngStream::new(77);
    let mut ctx = if with_dropout { Ctx::train(&mut rng) } else { Ctx::eval(&mut rng) };
    let seq: Vec<Var> = (0..4).map(|t| m.embed.forward(&mut tape, &p, &[t % 3, (t + 1) % 3]).unwrap()).collect();
    let out = m.gru.forward_sequence(&mut tape, &p, &seq, None, 2, &mut ctx).unwrap();
    let top = tape.concat_cols(&out.finals).unwrap();
    let h = m.linear.forward(&mut tape, &p, top).unwrap();
    let x = tape.constant(random_tensor(&[2, 3], &mut RngStream::new(5)));
    let h2 = m.cell.forward(&mut tape, &p, x, h).unwrap();
    let y = tape.concat_cols(&[h2, out.outputs[1]]).unwrap();
    let l = probe(&mut tape, y, 9);
    tape.backward(l);
    (tape.item(l), p.gradients(&tape))
}

fn layer_checks() -> Vec<(&'static str, GradReport)> {
    let mut rng = RngStream::new(3);
    let mut store = ParameterStore::new(3);
    let embed = Embedding::new(&mut store, "embed", 3, 2, &mut rng);
    let gru = Gru::new(&mut store, "gru", 2, 3, 2, true, 0.5, &mut rng);
    let linear = Linear::new(&mut store, "linear", 12, 4, &mut rng);
    let cell = GruCell::new(&mut store, "cell", 3, 4, &mut rng);
    // Non-zero biases so their gradients are exercised away from the init point.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".b") {
            let n = store.get(id).len();
            store.get_mut(id).data_mut().copy_from_slice(&random_tensor(&[n], &mut rng).map(|v| 0.3 * v).into_data());
        }
    }
    let mut model = Layered {
        store,
        cell,
        gru,
        linear,
        embed,
    };
    let mut out = Vec::new();
    for (name, drop) in [("gru stack + cell (eval)", false), ("gru stack + cell (dropout)", true)] {
        let r = check_store(
            &mut model,
            |m| &mut m.store,
            |m| {
                let (_, g) = layered_loss(m, drop);
                m.store.accumulate(g);
            },
            |m| layered_loss(m, drop).0,
            usize::MAX,
            1,
        );
        out.push((name, r));
    }
    // Input and state gradients of a single cell.
    let mut rng = RngStream::new(4);
    let mut store = ParameterStore::new(4);
    let cell = GruCell::new(&mut store, "cell", 3, 4, &mut rng);
    let x = random_tensor(&[2, 3], &mut rng);
    let h = random_tensor(&[2, 4], &mut rng).map(|v| 0.5 * v.tanh());
    let r = check_tape(&[x, h], |t, v| {
        let p = Binding::frozen(&store);
        let y = cell.forward(t, &p, v[0], v[1]).unwrap();
        probe(t, y, 10)
    });
    out.push(("gru cell inputs", r));
    out
}

pub fn tiny_vae_config() -> VaeConfig {
    let mut c = VaeConfig::small(5, 4, 8);
    c.embed_dim = 3;
    c
}

pub fn tiny_measures(count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = RngStream::new(seed);
    (0..count).map(|_| (0..24).map(|_| rng.below(5)).collect()).collect()
}

pub fn vae_elbo_check() -> GradReport {
    let mut vae: MeasureVae<f64> = MeasureVae::new(tiny_vae_config(), 5).unwrap();
    let measures = tiny_measures(3, 1);
    let run = |vae: &MeasureVae<f64>| {
        let mut rng = RngStream::new(21);
        vae.loss(&measures, ZMode::Sample, &mut Ctx::train(&mut rng)).unwrap().loss
    };
    check_store(
        &mut vae,
        |v| v.store_mut(),
        |v| {
            let mut rng = RngStream::new(21);
            v.loss_and_grad(&measures, ZMode::Sample, &mut Ctx::train(&mut rng)).unwrap();
        },
        run,
        40,
        2,
    )
}

pub fn inpaint_loss_check() -> GradReport {
    let vae: MeasureVae<f64> = MeasureVae::new(tiny_vae_config(), 5).unwrap();
    let mut cfg = LatentRnnConfig::small(4, 4);
    cfg.mode = ContextMode::Both;
    let mut net = InpaintNet::new(vae, cfg, 6).unwrap();
    let windows: Vec<Vec<Vec<usize>>> = (0..2).map(|s| tiny_measures(8, 10 + s)).collect();
    let posts = net.context_posteriors(&windows).unwrap();
    let split = SplitSpec::new(2, 3, 3).unwrap();
    let vae_before = net.vae.store().values().to_vec();
    let run = |n: &InpaintNet<f64>| {
        let refs: Vec<&Posterior<f64>> = posts.iter().collect();
        let mut rng = RngStream::new(31);
        n.inpaint_loss(&windows, &refs, split, ZMode::Sample, &mut Ctx::train(&mut rng)).unwrap()
    };
    let report = check_store(
        &mut net,
        |n| n.rnn.store_mut(),
        |n| {
            let refs: Vec<&Posterior<f64>> = posts.iter().collect();
            let mut rng = RngStream::new(31);
            n.loss_and_grad(&windows, &refs, split, ZMode::Sample, &mut Ctx::train(&mut rng)).unwrap();
        },
        run,
        40,
        3,
    );
    assert_eq!(net.vae.store().values(), vae_before.as_slice());
    assert!(net.vae.store().ids().all(|id| net.vae.store().grad(id).data().iter().all(|g| *g == 0.0)));
    report
}
