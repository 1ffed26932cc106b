//! Latent-space traversal: context RNNs over past/future measure latents,
//! a generation RNN that emits the gap latents, and the inpainting loss
//! through the frozen VAE decoder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TOKENS_PER_MEASURE;
use crate::nn::{Binding, Ctx, Gru, Linear, NnError, ParameterStore, Real, RngStream, Tape, Tensor, Var};
use crate::vae::{Decoding, MeasureVae, Posterior, VaeError, ZMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("no split satisfies the bounds for N = {total}: {reason}")]
    InfeasibleBounds { total: usize, reason: String },
    #[error("invalid split n_p={n_p}, n_i={n_i}, n_f={n_f}")]
    InvalidSplit { n_p: usize, n_i: usize, n_f: usize },
    #[error("{0} context is empty")]
    EmptyContext(&'static str),
    #[error("context mode {mode:?} does not match the supplied contexts")]
    ModeContextMismatch { mode: ContextMode },
    #[error("window has {found} measures, split expects {expected}")]
    WindowLength { found: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Measure counts for past context, inpainted gap and future context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_p: usize,
    pub n_i: usize,
    pub n_f: usize,
}

impl SplitSpec {
    pub fn new(n_p: usize, n_i: usize, n_f: usize) -> Result<Self, LatentError> {
        if n_p == 0 || n_i == 0 || n_f == 0 {
            return Err(LatentError::InvalidSplit { n_p, n_i, n_f });
        }
        Ok(Self { n_p, n_i, n_f })
    }

    pub fn total(&self) -> usize {
        self.n_p + self.n_i + self.n_f
    }

    pub fn gap(&self) -> std::ops::Range<usize> {
        self.n_p..self.n_p + self.n_i
    }

    /// Split with the gap as close to the middle as possible.
    pub fn centered(total: usize, n_i: usize) -> Result<Self, LatentError> {
        if n_i == 0 || total < n_i + 2 {
            return Err(LatentError::InfeasibleBounds {
                total,
                reason: format!("a gap of {n_i} leaves no room for both contexts"),
            });
        }
        let n_p = (total - n_i) / 2;
        Self::new(n_p, n_i, total - n_i - n_p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub min_inpaint: usize,
    pub max_inpaint: usize,
}

impl Default for SplitBounds {
    fn default() -> Self {
        Self {
            min_inpaint: 2,
            max_inpaint: 6,
        }
    }
}

/// `n_i ~ U{min..max}`, then `n_p ~ U{1..N−1−n_i}`, `n_f = N − n_i − n_p`.
pub fn stochastic_split(total: usize, bounds: &SplitBounds, rng: &mut RngStream) -> Result<SplitSpec, LatentError> {
    if bounds.min_inpaint == 0 || bounds.min_inpaint > bounds.max_inpaint {
        return Err(LatentError::InfeasibleBounds {
            total,
            reason: format!("inpaint range {}..={} is empty", bounds.min_inpaint, bounds.max_inpaint),
        });
    }
    if total < bounds.min_inpaint + 2 {
        return Err(LatentError::InfeasibleBounds {
            total,
            reason: format!("need at least {} measures", bounds.min_inpaint + 2),
        });
    }
    let max_i = bounds.max_inpaint.min(total - 2);
    let n_i = rng.int_inclusive(bounds.min_inpaint, max_i);
    let n_p = rng.int_inclusive(1, total - 1 - n_i);
    SplitSpec::new(n_p, n_i, total - n_i - n_p)
}

/// Deterministic per-window split used for evaluation.
pub fn evaluation_split(total: usize, bounds: &SplitBounds, seed: u64, window_index: usize) -> Result<SplitSpec, LatentError> {
    let mut rng = RngStream::new(seed).fork(window_index as u64);
    stochastic_split(total, bounds, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Both,
    PastOnly,
    FutureOnly,
}

impl ContextMode {
    pub fn uses_past(self) -> bool {
        self != ContextMode::FutureOnly
    }

    pub fn uses_future(self) -> bool {
        self != ContextMode::PastOnly
    }

    fn contexts(self) -> usize {
        if self == ContextMode::Both {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRnnConfig {
    pub latent_dim: usize,
    pub context_hidden: usize,
    pub context_layers: usize,
    pub gen_hidden: usize,
    pub gen_layers: usize,
    pub dropout: f64,
    pub mode: ContextMode,
}

impl LatentRnnConfig {
    /// Context RNNs 2×512 bidirectional, generation RNN 2×1024, output 2048 → 256.
    pub fn full() -> Self {
        Self {
            latent_dim: 256,
            context_hidden: 512,
            context_layers: 2,
            gen_hidden: 1024,
            gen_layers: 2,
            dropout: 0.5,
            mode: ContextMode::Both,
        }
    }

    /// Context width `h`, generation width `2h`.
    pub fn small(latent_dim: usize, context_hidden: usize) -> Self {
        Self {
            latent_dim,
            context_hidden,
            gen_hidden: 2 * context_hidden,
            ..Self::full()
        }
    }

    pub fn single_context_dim(&self) -> usize {
        2 * self.context_hidden
    }

    pub fn context_embedding_dim(&self) -> usize {
        self.mode.contexts() * self.single_context_dim()
    }

    pub fn gen_state_dim(&self) -> usize {
        self.gen_layers * self.gen_hidden
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        let dims = [self.latent_dim, self.context_hidden, self.context_layers, self.gen_hidden, self.gen_layers];
        if dims.contains(&0) {
            return Err(LatentError::Config("all dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LatentError::Config("dropout must be in [0, 1)".into()));
        }
        if 2 * self.single_context_dim() != self.gen_state_dim() {
            return Err(LatentError::Config(format!(
                "two contexts give {} values but the generation state has {}",
                2 * self.single_context_dim(),
                self.gen_state_dim()
            )));
        }
        Ok(())
    }
}

/// Same dimensions with a different context mode.
pub fn ablation_config(base: &LatentRnnConfig, mode: ContextMode) -> LatentRnnConfig {
    LatentRnnConfig { mode, ..base.clone() }
}

#[derive(Debug, Clone)]
pub struct LatentRnn<T> {
    config: LatentRnnConfig,
    store: ParameterStore<T>,
    past_rnn: Option<Gru>,
    future_rnn: Option<Gru>,
    project: Option<Linear>,
    gen_rnn: Gru,
    out: Linear,
}

impl<T: Real> LatentRnn<T> {
    pub fn new(config: LatentRnnConfig, seed: u64) -> Result<Self, LatentError> {
        config.validate()?;
        let c = &config;
        let mut rng = RngStream::new(seed);
        let mut store = ParameterStore::new(seed);
        let s = &mut store;
        let context = |s: &mut ParameterStore<T>, name: &str, rng: &mut RngStream| {
            Gru::new(s, name, c.latent_dim, c.context_hidden, c.context_layers, true, c.dropout, rng)
        };
        let past_rnn = c.mode.uses_past().then(|| context(s, "past_rnn", &mut rng));
        let future_rnn = c.mode.uses_future().then(|| context(s, "future_rnn", &mut rng));
        let project = (c.mode != ContextMode::Both)
            .then(|| Linear::new(s, "context_project", c.single_context_dim(), c.gen_state_dim(), &mut rng));
        let gen_rnn = Gru::new(s, "gen_rnn", 1, c.gen_hidden, c.gen_layers, false, c.dropout, &mut rng);
        let out = Linear::new(s, "out", c.gen_state_dim(), c.latent_dim, &mut rng);
        Ok(Self {
            config,
            store,
            past_rnn,
            future_rnn,
            project,
            gen_rnn,
            out,
        })
    }

    pub fn config(&self) -> &LatentRnnConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> LatentRnn<U> {
        LatentRnn {
            config: self.config.clone(),
            store: self.store.cast(),
            past_rnn: self.past_rnn.clone(),
            future_rnn: self.future_rnn.clone(),
            project: self.project.clone(),
            gen_rnn: self.gen_rnn.clone(),
            out: self.out.clone(),
        }
    }

    fn encode_one<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        rnn: &Gru,
        seq: &[Var],
        batch: usize,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var, LatentError> {
        let out = rnn.forward_sequence(tape, p, seq, None, batch, ctx)?;
        let top = out.finals.len() - 2;
        Ok(tape.concat_cols(&out.finals[top..])?)
    }

    /// Context embedding `[B, gen_layers · gen_hidden]`. Each context is a
    /// sequence of `[B, d_z]` latents; a context the mode ignores must be `None`.
    pub fn encode_contexts_graph<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        past: Option<&[Var]>,
        future: Option<&[Var]>,
        batch: usize,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var, LatentError> {
        let mode = self.config.mode;
        if past.is_some() != mode.uses_past() || future.is_some() != mode.uses_future() {
            return Err(LatentError::ModeContextMismatch { mode });
        }
        let mut parts = Vec::with_capacity(2);
        if let (Some(seq), Some(rnn)) = (past, &self.past_rnn) {
            if seq.is_empty() {
                return Err(LatentError::EmptyContext("past"));
            }
            parts.push(self.encode_one(tape, p, rnn, seq, batch, ctx)?);
        }
        if let (Some(seq), Some(rnn)) = (future, &self.future_rnn) {
            if seq.is_empty() {
                return Err(LatentError::EmptyContext("future"));
            }
            parts.push(self.encode_one(tape, p, rnn, seq, batch, ctx)?);
        }
        match &self.project {
            Some(proj) => Ok(proj.forward(tape, p, parts[0])?),
            None => Ok(tape.concat_cols(&parts)?),
        }
    }

    /// Unroll the generation RNN `n_i` times from the context embedding.
    pub fn generate_graph<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        embedding: Var,
        n_i: usize,
        ctx: &mut Ctx<'_>,
    ) -> Result<Vec<Var>, LatentError> {
        let c = &self.config;
        let batch = tape.value(embedding).rows();
        let mut state: Vec<Var> = (0..c.gen_layers)
            .map(|l| tape.slice_cols(embedding, l * c.gen_hidden, c.gen_hidden))
            .collect();
        let ones = tape.constant(Tensor::full(&[batch, 1], T::one()));
        let mut latents = Vec::with_capacity(n_i);
        for _ in 0..n_i {
            state = self.gen_rnn.step(tape, p, ones, &state, ctx)?;
            let feature = tape.concat_cols(&state)?;
            latents.push(self.out.forward(tape, p, feature)?);
        }
        Ok(latents)
    }

    /// Context embedding for one window given per-measure latents (`[len, d_z]`).
    pub fn encode_contexts(&self, past: Option<&Tensor<T>>, future: Option<&Tensor<T>>) -> Result<Tensor<T>, LatentError> {
        let mut tape = Tape::new();
        let p = Binding::frozen(&self.store);
        let mut rng = RngStream::new(0);
        let mut ctx = Ctx::eval(&mut rng);
        let seq = |tape: &mut Tape<'_, T>, z: &Tensor<T>| -> Vec<Var> {
            (0..z.rows()).map(|r| tape.constant(Tensor::matrix(1, z.cols(), z.row(r).to_vec()))).collect()
        };
        let past_seq = past.map(|z| seq(&mut tape, z));
        let future_seq = future.map(|z| seq(&mut tape, z));
        let e = self.encode_contexts_graph(&mut tape, &p, past_seq.as_deref(), future_seq.as_deref(), 1, &mut ctx)?;
        Ok(Tensor::vector(tape.value(e).data().to_vec()))
    }

    /// `n_i` latents `[n_i, d_z]` from a context embedding (eval mode).
    pub fn generate_latents(&self, embedding: &Tensor<T>, n_i: usize) -> Result<Tensor<T>, LatentError> {
        let mut tape = Tape::new();
        let p = Binding::frozen(&self.store);
        let mut rng = RngStream::new(0);
        let mut ctx = Ctx::eval(&mut rng);
        let e = tape.constant(Tensor::matrix(1, embedding.len(), embedding.data().to_vec()));
        let zs = self.generate_graph(&mut tape, &p, e, n_i, &mut ctx)?;
        let data: Vec<T> = zs.iter().flat_map(|z| tape.value(*z).data().to_vec()).collect();
        Ok(Tensor::matrix(n_i, self.config.latent_dim, data))
    }
}

/// Graph handles of one batched inpainting pass.
pub struct InpaintGraph {
    /// `n_i` latent nodes, `[B, d_z]` each.
    pub latents: Vec<Var>,
    /// 24 logit nodes `[n_i·B, V]`; row `i·B + b` is gap measure `i` of window `b`.
    pub logits: Vec<Var>,
    /// Tokens per row in the same order.
    pub tokens: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct InpaintOutput<T> {
    /// `[n_i, d_z]`
    pub latents: Tensor<T>,
    /// Per gap measure, `[24, V]`.
    pub logits: Vec<Tensor<T>>,
    /// Per gap measure, 24 token ids.
    pub tokens: Vec<Vec<usize>>,
}

/// Frozen measure VAE plus trainable latent RNN.
#[derive(Debug, Clone)]
pub struct InpaintNet<T> {
    pub vae: MeasureVae<T>,
    pub rnn: LatentRnn<T>,
}

impl<T: Real> InpaintNet<T> {
    pub fn new(vae: MeasureVae<T>, config: LatentRnnConfig, seed: u64) -> Result<Self, LatentError> {
        if config.latent_dim != vae.config().latent_dim {
            return Err(LatentError::Config(format!(
                "latent RNN uses d_z = {} but the VAE has {}",
                config.latent_dim,
                vae.config().latent_dim
            )));
        }
        Ok(Self {
            rnn: LatentRnn::new(config, seed)?,
            vae,
        })
    }

    pub fn mode(&self) -> ContextMode {
        self.rnn.config.mode
    }

    pub fn cast<U: Real>(&self) -> InpaintNet<U> {
        InpaintNet {
            vae: self.vae.cast(),
            rnn: self.rnn.cast(),
        }
    }

    /// VAE posterior of every measure of every window, one `[N, d_z]` pair per window.
    pub fn context_posteriors<W: AsRef<[Vec<usize>]>>(&self, windows: &[W]) -> Result<Vec<Posterior<T>>, LatentError> {
        windows.iter().map(|w| Ok(self.vae.encode_batch(w.as_ref())?)).collect()
    }

    fn context_sequence<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        posts: &[&Posterior<T>],
        range: std::ops::Range<usize>,
        z_mode: ZMode,
        rng: &mut RngStream,
    ) -> Vec<Var> {
        let dz = self.vae.config().latent_dim;
        range
            .map(|j| {
                let mut data = Vec::with_capacity(posts.len() * dz);
                for post in posts {
                    let (mu, sigma) = (post.mu.row(j), post.sigma.row(j));
                    match z_mode {
                        ZMode::Mean => data.extend_from_slice(mu),
                        ZMode::Sample => data.extend(mu.iter().zip(sigma).map(|(&m, &s)| m + s * rng.normal::<T>())),
                    }
                }
                tape.constant(Tensor::matrix(posts.len(), dz, data))
            })
            .collect()
    }

    /// Batched forward pass over windows sharing one split. Context latents
    /// come from cached posteriors (`μ` or a fresh `μ + σ⊙ε`); the gap
    /// latents are decoded by the frozen VAE, teacher-forced when `targets`
    /// (the gap measures, row order `i·B + b`) are given.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_graph<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        rnn_p: &Binding<'a, T>,
        vae_p: &Binding<'a, T>,
        posts: &[&Posterior<T>],
        split: SplitSpec,
        targets: Option<&[&[usize]]>,
        z_mode: ZMode,
        decoding: Decoding,
        ctx: &mut Ctx<'_>,
    ) -> Result<InpaintGraph, LatentError> {
        let batch = posts.len();
        for post in posts {
            if post.rows() != split.total() {
                return Err(LatentError::WindowLength {
                    found: post.rows(),
                    expected: split.total(),
                });
            }
        }
        let mode = self.mode();
        let past = mode
            .uses_past()
            .then(|| self.context_sequence(tape, posts, 0..split.n_p, z_mode, ctx.rng));
        let future = mode
            .uses_future()
            .then(|| self.context_sequence(tape, posts, split.n_p + split.n_i..split.total(), z_mode, ctx.rng));
        let emb = self
            .rnn
            .encode_contexts_graph(tape, rnn_p, past.as_deref(), future.as_deref(), batch, ctx)?;
        let latents = self.rnn.generate_graph(tape, rnn_p, emb, split.n_i, ctx)?;
        let z_all = tape.concat_rows(&latents)?;
        let dec = self.vae.decode_graph(tape, vae_p, z_all, targets, decoding, ctx)?;
        Ok(InpaintGraph {
            latents,
            logits: dec.logits,
            tokens: dec.tokens,
        })
    }

    fn gap_targets<W: AsRef<[Vec<usize>]>>(windows: &[W], split: SplitSpec) -> Result<Vec<&[usize]>, LatentError> {
        for w in windows {
            if w.as_ref().len() != split.total() {
                return Err(LatentError::WindowLength {
                    found: w.as_ref().len(),
                    expected: split.total(),
                });
            }
        }
        Ok(split
            .gap()
            .flat_map(|i| windows.iter().map(move |w| w.as_ref()[i].as_slice()))
            .collect())
    }

    /// Mean per-token cross-entropy of the gap as a scalar node.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_graph<'a, W: AsRef<[Vec<usize>]>>(
        &self,
        tape: &mut Tape<'a, T>,
        rnn_p: &Binding<'a, T>,
        vae_p: &Binding<'a, T>,
        windows: &[W],
        posts: &[&Posterior<T>],
        split: SplitSpec,
        z_mode: ZMode,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var, LatentError> {
        let targets = Self::gap_targets(windows, split)?;
        let g = self.forward_graph(tape, rnn_p, vae_p, posts, split, Some(&targets), z_mode, Decoding::Argmax, ctx)?;
        let ce = self.vae.reconstruction_graph(tape, &g.logits, &targets)?;
        Ok(tape.scale(ce, T::c(1.0 / (targets.len() * TOKENS_PER_MEASURE) as f64)))
    }

    /// Inpainting loss (nats/token) without gradients.
    pub fn inpaint_loss<W: AsRef<[Vec<usize>]>>(
        &self,
        windows: &[W],
        posts: &[&Posterior<T>],
        split: SplitSpec,
        z_mode: ZMode,
        ctx: &mut Ctx<'_>,
    ) -> Result<f64, LatentError> {
        let mut tape = Tape::new();
        let rp = Binding::frozen(&self.rnn.store);
        let vp = Binding::frozen(self.vae.store());
        let l = self.loss_graph(&mut tape, &rp, &vp, windows, posts, split, z_mode, ctx)?;
        Ok(tape.item(l).f64())
    }

    /// Loss plus gradient accumulation into the latent RNN only.
    pub fn loss_and_grad<W: AsRef<[Vec<usize>]>>(
        &mut self,
        windows: &[W],
        posts: &[&Posterior<T>],
        split: SplitSpec,
        z_mode: ZMode,
        ctx: &mut Ctx<'_>,
    ) -> Result<f64, LatentError> {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let rp = Binding::new(&self.rnn.store, true);
            let vp = Binding::frozen(self.vae.store());
            let l = self.loss_graph(&mut tape, &rp, &vp, windows, posts, split, z_mode, ctx)?;
            tape.backward(l);
            (tape.item(l).f64(), rp.gradients(&tape))
        };
        self.rnn.store.accumulate(grads);
        Ok(loss)
    }

    /// Inpaint one window: the measures in `split.gap()` are regenerated.
    /// With `teacher` the gap tokens of `measures` drive the decoder.
    pub fn inpaint_forward(
        &self,
        measures: &[Vec<usize>],
        split: SplitSpec,
        teacher: bool,
        z_mode: ZMode,
        decoding: Decoding,
        ctx: &mut Ctx<'_>,
    ) -> Result<InpaintOutput<T>, LatentError> {
        if measures.len() != split.total() {
            return Err(LatentError::WindowLength {
                found: measures.len(),
                expected: split.total(),
            });
        }
        let mode = self.mode();
        // Only the measures the mode reads are encoded.
        let dz = self.vae.config().latent_dim;
        let mut mu = Tensor::zeros(&[split.total(), dz]);
        let mut sigma = Tensor::full(&[split.total(), dz], T::one());
        let mut fill = |range: std::ops::Range<usize>| -> Result<(), LatentError> {
            let post = self.vae.encode_batch(&measures[range.clone()])?;
            for (k, j) in range.enumerate() {
                mu.data_mut()[j * dz..(j + 1) * dz].copy_from_slice(post.mu.row(k));
                sigma.data_mut()[j * dz..(j + 1) * dz].copy_from_slice(post.sigma.row(k));
            }
            Ok(())
        };
        if mode.uses_past() {
            fill(0..split.n_p)?;
        }
        if mode.uses_future() {
            fill(split.n_p + split.n_i..split.total())?;
        }
        let post = Posterior { mu, sigma };
        let targets: Vec<&[usize]> = split.gap().map(|i| measures[i].as_slice()).collect();
        let mut tape = Tape::new();
        let rp = Binding::frozen(&self.rnn.store);
        let vp = Binding::frozen(self.vae.store());
        let g = self.forward_graph(
            &mut tape,
            &rp,
            &vp,
            &[&post],
            split,
            teacher.then_some(targets.as_slice()),
            z_mode,
            decoding,
            ctx,
        )?;
        let latents: Vec<T> = g.latents.iter().flat_map(|z| tape.value(*z).data().to_vec()).collect();
        let v = self.vae.config().vocab_size;
        let logits = (0..split.n_i)
            .map(|i| {
                let rows: Vec<T> = g.logits.iter().flat_map(|l| tape.value(*l).row(i).to_vec()).collect();
                Tensor::matrix(TOKENS_PER_MEASURE, v, rows)
            })
            .collect();
        Ok(InpaintOutput {
            latents: Tensor::matrix(split.n_i, dz, latents),
            logits,
            tokens: g.tokens,
        })
    }
}
