use super::params::{Binding, ParamId, ParameterStore};
use super::rng::RngStream;
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use super::NnError;

/// Training flag plus the stream that dropout masks and sampling draw from.
pub struct Ctx<'r> {
    pub training: bool,
    pub rng: &'r mut RngStream,
}

impl<'r> Ctx<'r> {
    pub fn train(rng: &'r mut RngStream) -> Self {
        Self { training: true, rng }
    }

    pub fn eval(rng: &'r mut RngStream) -> Self {
        Self { training: false, rng }
    }
}

/// Inverted dropout; identity outside training or when `p == 0`.
pub fn dropout<'a, T: Real>(tape: &mut Tape<'a, T>, x: Var, p: f64, ctx: &mut Ctx<'_>) -> Var {
    if !ctx.training || p <= 0.0 {
        return x;
    }
    let keep = T::c(1.0 / (1.0 - p));
    let mask = (0..tape.value(x).len())
        .map(|_| if ctx.rng.unit() < p { T::zero() } else { keep })
        .collect();
    tape.mask(x, mask)
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, input: usize, output: usize, rng: &mut RngStream) -> Self {
        Self {
            w: store.weight(&format!("{name}.w"), input, output, rng),
            b: store.bias(&format!("{name}.b"), output),
            input,
            output,
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn forward<'a, T: Real>(&self, tape: &mut Tape<'a, T>, p: &Binding<'a, T>, x: Var) -> Result<Var, NnError> {
        let w = p.var(tape, self.w);
        let b = p.var(tape, self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, rows: usize, dim: usize, rng: &mut RngStream) -> Self {
        Self {
            table: store.embedding(&format!("{name}.table"), rows, dim, rng),
            rows,
            dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward<'a, T: Real>(&self, tape: &mut Tape<'a, T>, p: &Binding<'a, T>, indices: &[usize]) -> Result<Var, NnError> {
        let t = p.var(tape, self.table);
        tape.gather(t, indices)
    }
}

/// One GRU direction of one layer:
/// `r = σ(W_r x + U_r h + b_r)`, `u = σ(W_u x + U_u h + b_u)`,
/// `ĥ = tanh(W_h x + U_h (r⊙h) + b_h)`, `h' = (1-u)⊙h + u⊙ĥ`.
///
/// Input weights are fused as `[in, 3H]` in `(r, u, h)` order, the
/// recurrent `r`/`u` weights as `[H, 2H]`.
#[derive(Debug, Clone)]
pub struct GruCell {
    w_ih: ParamId,
    b: ParamId,
    w_hh_ru: ParamId,
    w_hh_n: ParamId,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            w_ih: store.weight(&format!("{name}.w_ih"), input, 3 * hidden, rng),
            b: store.bias(&format!("{name}.b"), 3 * hidden),
            w_hh_ru: store.weight(&format!("{name}.w_hh_ru"), hidden, 2 * hidden, rng),
            w_hh_n: store.weight(&format!("{name}.w_hh_n"), hidden, hidden, rng),
            input,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Input projection `x·W + b`, shape `[B, 3H]`.
    fn project<'a, T: Real>(&self, tape: &mut Tape<'a, T>, p: &Binding<'a, T>, x: Var) -> Result<Var, NnError> {
        let w = p.var(tape, self.w_ih);
        let b = p.var(tape, self.b);
        tape.linear(x, w, Some(b))
    }

    fn recur<'a, T: Real>(&self, tape: &mut Tape<'a, T>, p: &Binding<'a, T>, gx: Var, h: Var) -> Result<Var, NnError> {
        let hid = self.hidden;
        let u_ru = p.var(tape, self.w_hh_ru);
        let u_n = p.var(tape, self.w_hh_n);
        let gh = tape.matmul(h, u_ru)?;
        let gx_ru = tape.slice_cols(gx, 0, 2 * hid);
        let pre_ru = tape.add(gx_ru, gh)?;
        let ru = tape.sigmoid(pre_ru);
        let r = tape.slice_cols(ru, 0, hid);
        let u = tape.slice_cols(ru, hid, hid);
        let rh = tape.mul(r, h)?;
        let hn = tape.matmul(rh, u_n)?;
        let gx_n = tape.slice_cols(gx, 2 * hid, hid);
        let pre_n = tape.add(gx_n, hn)?;
        let n = tape.tanh(pre_n);
        let delta = tape.sub(n, h)?;
        let step = tape.mul(u, delta)?;
        tape.add(h, step)
    }

    pub fn forward<'a, T: Real>(&self, tape: &mut Tape<'a, T>, p: &Binding<'a, T>, x: Var, h: Var) -> Result<Var, NnError> {
        let (xv, hv) = (tape.value(x), tape.value(h));
        if xv.cols() != self.input || hv.cols() != self.hidden || xv.rows() != hv.rows() {
            return Err(NnError::ShapeMismatch(format!(
                "gru cell expects x [B, {}] and h [B, {}], got {:?} and {:?}",
                self.input,
                self.hidden,
                xv.shape(),
                hv.shape()
            )));
        }
        let gx = self.project(tape, p, x)?;
        self.recur(tape, p, gx, h)
    }
}

#[derive(Debug, Clone)]
pub struct GruOutput {
    /// Per-step outputs of the top layer, `[B, D·H]` each.
    pub outputs: Vec<Var>,
    /// Final hidden state per layer and direction: `[l0 fwd, l0 bwd, l1 fwd, ...]`.
    pub finals: Vec<Var>,
}

/// Stacked (optionally bidirectional) GRU with dropout between layers.
#[derive(Debug, Clone)]
pub struct Gru {
    cells: Vec<Vec<GruCell>>,
    input: usize,
    hidden: usize,
    bidirectional: bool,
    dropout: f64,
}

impl Gru {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let cells = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { dirs * hidden };
                (0..dirs)
                    .map(|d| {
                        let tag = if d == 0 { "fwd" } else { "bwd" };
                        GruCell::new(store, &format!("{name}.l{l}.{tag}"), inp, hidden, rng)
                    })
                    .collect()
            })
            .collect();
        Self {
            cells,
            input,
            hidden,
            bidirectional,
            dropout,
        }
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn zero_state<'a, T: Real>(&self, tape: &mut Tape<'a, T>, batch: usize) -> Vec<Var> {
        (0..self.layers() * self.directions())
            .map(|_| tape.constant(Tensor::zeros(&[batch, self.hidden])))
            .collect()
    }

    /// Unroll over `inputs` (each `[batch, input]`). Without `h0` the state
    /// starts at zero.
    pub fn forward_sequence<'a, T: Real>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        inputs: &[Var],
        h0: Option<&[Var]>,
        batch: usize,
        ctx: &mut Ctx<'_>,
    ) -> Result<GruOutput, NnError> {
        let dirs = self.directions();
        let h0: Vec<Var> = match h0 {
            Some(h) if h.len() == self.layers() * dirs => h.to_vec(),
            Some(h) => {
                return Err(NnError::ShapeMismatch(format!(
                    "initial state has {} entries, expected {}",
                    h.len(),
                    self.layers() * dirs
                )))
            }
            None => self.zero_state(tape, batch),
        };
        for x in inputs {
            let v = tape.value(*x);
            if v.rows() != batch || v.cols() != self.input {
                return Err(NnError::ShapeMismatch(format!(
                    "gru input expected [{batch}, {}], got {:?}",
                    self.input,
                    v.shape()
                )));
            }
        }
        if inputs.is_empty() {
            return Ok(GruOutput {
                outputs: Vec::new(),
                finals: h0,
            });
        }
        let steps = inputs.len();
        let mut layer_in = inputs.to_vec();
        let mut finals = Vec::with_capacity(h0.len());
        for (l, cells) in self.cells.iter().enumerate() {
            let stacked = tape.concat_rows(&layer_in)?;
            let mut per_dir: Vec<Vec<Var>> = Vec::with_capacity(dirs);
            for (d, cell) in cells.iter().enumerate() {
                let gx_all = cell.project(tape, p, stacked)?;
                let mut h = h0[l * dirs + d];
                let mut outs = vec![h; steps];
                let order: Box<dyn Iterator<Item = usize>> = if d == 0 {
                    Box::new(0..steps)
                } else {
                    Box::new((0..steps).rev())
                };
                for t in order {
                    let gx = tape.slice_rows(gx_all, t * batch, batch);
                    h = cell.recur(tape, p, gx, h)?;
                    outs[t] = h;
                }
                finals.push(h);
                per_dir.push(outs);
            }
            let outputs: Vec<Var> = if dirs == 1 {
                per_dir.pop().unwrap_or_default()
            } else {
                (0..steps)
                    .map(|t| tape.concat_cols(&[per_dir[0][t], per_dir[1][t]]))
                    .collect::<Result<_, _>>()?
            };
            layer_in = if l + 1 < self.layers() {
                outputs.iter().map(|&o| dropout(tape, o, self.dropout, ctx)).collect()
            } else {
                outputs
            };
        }
        Ok(GruOutput {
            outputs: layer_in,
            finals,
        })
    }

    /// Advance a unidirectional stack by one step; returns the new per-layer
    /// state. The top layer's state is the step output.
    pub fn step<'a, T: Real>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        x: Var,
        state: &[Var],
        ctx: &mut Ctx<'_>,
    ) -> Result<Vec<Var>, NnError> {
        assert!(!self.bidirectional, "step() needs a unidirectional stack");
        if state.len() != self.layers() {
            return Err(NnError::ShapeMismatch(format!(
                "state has {} layers, expected {}",
                state.len(),
                self.layers()
            )));
        }
        let mut input = x;
        let mut next = Vec::with_capacity(state.len());
        for (l, cells) in self.cells.iter().enumerate() {
            let h = cells[0].forward(tape, p, input, state[l])?;
            next.push(h);
            input = if l + 1 < self.layers() {
                dropout(tape, h, self.dropout, ctx)
            } else {
                h
            };
        }
        Ok(next)
    }
}
