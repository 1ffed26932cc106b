//! Measure-level VAE.
//!
//! Encoder: token embedding → bidirectional GRU → concatenated final
//! forward/backward states of the top layer → two parallel linear stacks
//! (SELU in between) giving `μ` and `log σ²`.
//!
//! Decoder: `z` is projected to the initial state of a beat GRU which is
//! unrolled once per beat on a constant input of 1. Each beat output is
//! mapped (linear + ReLU) to the initial state of a tick GRU unrolled once
//! per tick; the tick GRU input is the previous token's embedding
//! concatenated with the beat output, and each tick output goes through
//! ReLU and a final projection to vocabulary logits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BEATS_PER_MEASURE, TICKS_PER_BEAT, TOKENS_PER_MEASURE};
use crate::nn::{Binding, Ctx, Embedding, Gru, Linear, NnError, ParameterStore, Real, RngStream, Tape, Tensor, Var};

const LOGVAR_MIN: f64 = -30.0;
const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VaeError {
    #[error("measure has {found} tokens, expected {TOKENS_PER_MEASURE}")]
    WrongMeasureLength { found: usize },
    #[error("token index {index} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { index: usize, vocab: usize },
    #[error("teacher tokens are required for training-mode decoding")]
    MissingTeacherTokens,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Filled from the corpus vocabulary when left at 0 in a config file.
    #[serde(default)]
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub beat_hidden: usize,
    pub beat_layers: usize,
    pub tick_hidden: usize,
    pub tick_layers: usize,
    pub dropout: f64,
    pub beta: f64,
}

impl VaeConfig {
    /// Full-size model: latent 256, embedding 10, every GRU 2×512, dropout 0.5, β = 1e-3.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            latent_dim: 256,
            embed_dim: 10,
            encoder_hidden: 512,
            encoder_layers: 2,
            beat_hidden: 512,
            beat_layers: 2,
            tick_hidden: 512,
            tick_layers: 2,
            dropout: 0.5,
            beta: 1e-3,
        }
    }

    /// Same topology with every width scaled down.
    pub fn small(vocab_size: usize, latent_dim: usize, hidden: usize) -> Self {
        Self {
            latent_dim,
            encoder_hidden: hidden,
            beat_hidden: hidden,
            tick_hidden: hidden,
            ..Self::full(vocab_size)
        }
    }

    pub fn tick_input(&self) -> usize {
        self.embed_dim + self.beat_hidden
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let dims = [
            self.vocab_size,
            self.latent_dim,
            self.embed_dim,
            self.encoder_hidden,
            self.encoder_layers,
            self.beat_hidden,
            self.beat_layers,
            self.tick_hidden,
            self.tick_layers,
        ];
        if dims.contains(&0) {
            return Err(VaeError::Config("all dimensions must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(VaeError::Config("vocabulary needs at least the two reserved tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.beta < 0.0 {
            return Err(VaeError::Config("dropout must be in [0, 1) and beta non-negative".into()));
        }
        Ok(())
    }
}

/// Whether latents are drawn from `N(μ, σ²)` or taken as `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    #[default]
    Mean,
    Sample,
}

/// Token choice when the decoder runs on its own predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Argmax,
    Sample,
}

/// Diagonal Gaussian `q(z|x)`; one row per measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

impl<T: Real> Posterior<T> {
    pub fn rows(&self) -> usize {
        self.mu.rows()
    }

    pub fn row(&self, r: usize) -> Posterior<T> {
        Posterior {
            mu: Tensor::vector(self.mu.row(r).to_vec()),
            sigma: Tensor::vector(self.sigma.row(r).to_vec()),
        }
    }
}

/// `z = μ + σ⊙ε`, `ε ~ N(0, I)`.
pub fn reparameterize<T: Real>(p: &Posterior<T>, rng: &mut RngStream) -> Tensor<T> {
    let data = p.mu.data().iter().zip(p.sigma.data()).map(|(&m, &s)| m + s * rng.normal::<T>()).collect();
    Tensor::new(p.mu.shape().to_vec(), data).expect("posterior shapes agree")
}

/// `KL(q || N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`, summed over all rows.
pub fn kl_divergence<T: Real>(p: &Posterior<T>) -> T {
    let half = T::c(0.5);
    p.mu
        .data()
        .iter()
        .zip(p.sigma.data())
        .map(|(&m, &s)| half * (m * m + s * s - T::one() - (s * s).ln()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    /// `recon + β·kl`
    pub loss: f64,
    /// Mean cross-entropy per token (nats).
    pub recon: f64,
    /// KL per measure, averaged over the batch.
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct Decoded<T> {
    /// Logits per measure, `[24, V]` each.
    pub logits: Vec<Tensor<T>>,
    /// Tokens fed back (teacher tokens when teacher-forced).
    pub tokens: Vec<Vec<usize>>,
}

/// Graph handles for a decoded batch.
pub struct DecodeGraph {
    /// One `[B, V]` logit node per tick, in tick order.
    pub logits: Vec<Var>,
    pub tokens: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct MeasureVae<T> {
    config: VaeConfig,
    store: ParameterStore<T>,
    enc_embed: Embedding,
    encoder: Gru,
    mu_stack: [Linear; 2],
    logvar_stack: [Linear; 2],
    z_to_beat: Linear,
    beat_rnn: Gru,
    beat_to_tick: Linear,
    dec_embed: Embedding,
    tick_rnn: Gru,
    out: Linear,
}

impl<T: Real> MeasureVae<T> {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self, VaeError> {
        config.validate()?;
        let c = &config;
        let mut rng = RngStream::new(seed);
        let mut store = ParameterStore::new(seed);
        let s = &mut store;
        let enc_embed = Embedding::new(s, "enc.embed", c.vocab_size, c.embed_dim, &mut rng);
        let encoder = Gru::new(s, "enc.rnn", c.embed_dim, c.encoder_hidden, c.encoder_layers, true, c.dropout, &mut rng);
        let enc_out = 2 * c.encoder_hidden;
        let mu_stack = [
            Linear::new(s, "enc.mu.0", enc_out, c.latent_dim, &mut rng),
            Linear::new(s, "enc.mu.1", c.latent_dim, c.latent_dim, &mut rng),
        ];
        let logvar_stack = [
            Linear::new(s, "enc.logvar.0", enc_out, c.latent_dim, &mut rng),
            Linear::new(s, "enc.logvar.1", c.latent_dim, c.latent_dim, &mut rng),
        ];
        let z_to_beat = Linear::new(s, "dec.z_to_beat", c.latent_dim, c.beat_layers * c.beat_hidden, &mut rng);
        let beat_rnn = Gru::new(s, "dec.beat_rnn", 1, c.beat_hidden, c.beat_layers, false, c.dropout, &mut rng);
        let beat_to_tick = Linear::new(s, "dec.beat_to_tick", c.beat_hidden, c.tick_layers * c.tick_hidden, &mut rng);
        // Extra row for the measure-start symbol.
        let dec_embed = Embedding::new(s, "dec.embed", c.vocab_size + 1, c.embed_dim, &mut rng);
        let tick_rnn = Gru::new(s, "dec.tick_rnn", c.tick_input(), c.tick_hidden, c.tick_layers, false, c.dropout, &mut rng);
        let out = Linear::new(s, "dec.out", c.tick_hidden, c.vocab_size, &mut rng);
        Ok(Self {
            config,
            store,
            enc_embed,
            encoder,
            mu_stack,
            logvar_stack,
            z_to_beat,
            beat_rnn,
            beat_to_tick,
            dec_embed,
            tick_rnn,
            out,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.store
    }

    pub fn start_symbol(&self) -> usize {
        self.config.vocab_size
    }

    pub fn cast<U: Real>(&self) -> MeasureVae<U> {
        MeasureVae {
            config: self.config.clone(),
            store: self.store.cast(),
            enc_embed: self.enc_embed.clone(),
            encoder: self.encoder.clone(),
            mu_stack: self.mu_stack.clone(),
            logvar_stack: self.logvar_stack.clone(),
            z_to_beat: self.z_to_beat.clone(),
            beat_rnn: self.beat_rnn.clone(),
            beat_to_tick: self.beat_to_tick.clone(),
            dec_embed: self.dec_embed.clone(),
            tick_rnn: self.tick_rnn.clone(),
            out: self.out.clone(),
        }
    }

    fn check_measures<M: AsRef<[usize]>>(&self, measures: &[M]) -> Result<(), VaeError> {
        for m in measures {
            let m = m.as_ref();
            if m.len() != TOKENS_PER_MEASURE {
                return Err(VaeError::WrongMeasureLength { found: m.len() });
            }
            if let Some(&index) = m.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(VaeError::TokenOutOfRange {
                    index,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Encoder graph: returns `(μ, log σ²)` nodes, `[B, d_z]` each.
    pub fn encode_graph<'a, M: AsRef<[usize]>>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        measures: &[M],
        ctx: &mut Ctx<'_>,
    ) -> Result<(Var, Var), VaeError> {
        self.check_measures(measures)?;
        let batch = measures.len();
        let inputs = (0..TOKENS_PER_MEASURE)
            .map(|t| {
                let idx: Vec<usize> = measures.iter().map(|m| m.as_ref()[t]).collect();
                self.enc_embed.forward(tape, p, &idx)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.encoder.forward_sequence(tape, p, &inputs, None, batch, ctx)?;
        let top = out.finals.len() - 2;
        let h = tape.concat_cols(&out.finals[top..])?;
        let stack = |tape: &mut Tape<'a, T>, layers: &[Linear; 2]| -> Result<Var, NnError> {
            let a = layers[0].forward(tape, p, h)?;
            let a = tape.selu(a);
            layers[1].forward(tape, p, a)
        };
        let mu = stack(tape, &self.mu_stack)?;
        let logvar = stack(tape, &self.logvar_stack)?;
        let logvar = tape.clamp(logvar, T::c(LOGVAR_MIN), T::c(LOGVAR_MAX));
        Ok((mu, logvar))
    }

    /// Pathwise sample `μ + exp(½ log σ²)⊙ε` on the tape.
    pub fn reparameterize_graph<'a>(&self, tape: &mut Tape<'a, T>, mu: Var, logvar: Var, rng: &mut RngStream) -> Result<Var, VaeError> {
        let half = tape.scale(logvar, T::c(0.5));
        let sigma = tape.exp(half);
        let shape = tape.value(mu).shape().to_vec();
        let eps: Vec<T> = (0..tape.value(mu).len()).map(|_| rng.normal()).collect();
        let eps = tape.constant(Tensor::new(shape, eps)?);
        let noise = tape.mul(sigma, eps)?;
        Ok(tape.add(mu, noise)?)
    }

    /// `½ Σ (μ² + σ² − 1 − log σ²)` averaged over rows, as a scalar node.
    pub fn kl_graph<'a>(&self, tape: &mut Tape<'a, T>, mu: Var, logvar: Var) -> Result<Var, VaeError> {
        let rows = tape.value(mu).rows();
        let n = tape.value(mu).len();
        let mu2 = tape.mul(mu, mu)?;
        let var = tape.exp(logvar);
        let a = tape.add(mu2, var)?;
        let b = tape.sub(a, logvar)?;
        let s = tape.sum(b);
        let s = tape.add_scalar(s, T::c(-(n as f64)));
        Ok(tape.scale(s, T::c(0.5 / rows as f64)))
    }

    /// Decoder graph. With `teacher` the previous-token input is the
    /// ground truth; without it the decoder feeds back its own choices.
    pub fn decode_graph<'a, M: AsRef<[usize]>>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        z: Var,
        teacher: Option<&[M]>,
        decoding: Decoding,
        ctx: &mut Ctx<'_>,
    ) -> Result<DecodeGraph, VaeError> {
        let c = &self.config;
        let zv = tape.value(z);
        if zv.cols() != c.latent_dim {
            return Err(NnError::ShapeMismatch(format!("latent has {} columns, expected {}", zv.cols(), c.latent_dim)).into());
        }
        let batch = zv.rows();
        if let Some(t) = teacher {
            self.check_measures(t)?;
            if t.len() != batch {
                return Err(NnError::ShapeMismatch(format!("{} teacher measures for {batch} latents", t.len())).into());
            }
        }
        let beat_init = self.z_to_beat.forward(tape, p, z)?;
        let beat_state: Vec<Var> = (0..c.beat_layers)
            .map(|l| tape.slice_cols(beat_init, l * c.beat_hidden, c.beat_hidden))
            .collect();
        let ones = tape.constant(Tensor::full(&[batch, 1], T::one()));
        let beat_inputs = vec![ones; BEATS_PER_MEASURE];
        let beats = self.beat_rnn.forward_sequence(tape, p, &beat_inputs, Some(&beat_state), batch, ctx)?;

        let mut logits = Vec::with_capacity(TOKENS_PER_MEASURE);
        let mut tokens: Vec<Vec<usize>> = vec![Vec::with_capacity(TOKENS_PER_MEASURE); batch];
        let mut prev: Vec<usize> = vec![self.start_symbol(); batch];
        for beat_out in beats.outputs {
            let init = self.beat_to_tick.forward(tape, p, beat_out)?;
            let init = tape.relu(init);
            let mut state: Vec<Var> = (0..c.tick_layers)
                .map(|l| tape.slice_cols(init, l * c.tick_hidden, c.tick_hidden))
                .collect();
            for _ in 0..TICKS_PER_BEAT {
                let k = logits.len();
                let emb = self.dec_embed.forward(tape, p, &prev)?;
                let x = tape.concat_cols(&[emb, beat_out])?;
                state = self.tick_rnn.step(tape, p, x, &state, ctx)?;
                let top = *state.last().expect("at least one tick layer");
                let act = tape.relu(top);
                let l = self.out.forward(tape, p, act)?;
                let chosen: Vec<usize> = match teacher {
                    Some(t) => t.iter().map(|m| m.as_ref()[k]).collect(),
                    None => {
                        let lv = tape.value(l);
                        match decoding {
                            Decoding::Argmax => lv.argmax_rows(),
                            Decoding::Sample => (0..batch)
                                .map(|r| {
                                    let (probs, _) = crate::nn::tape::softmax_nll(lv.row(r), 0);
                                    ctx.rng.categorical(&probs)
                                })
                                .collect(),
                        }
                    }
                };
                for (b, &tok) in chosen.iter().enumerate() {
                    tokens[b].push(tok);
                }
                prev = chosen;
                logits.push(l);
            }
        }
        Ok(DecodeGraph { logits, tokens })
    }

    /// Summed token cross-entropy of decoded logits against `targets`.
    pub fn reconstruction_graph<'a, M: AsRef<[usize]>>(
        &self,
        tape: &mut Tape<'a, T>,
        logits: &[Var],
        targets: &[M],
    ) -> Result<Var, VaeError> {
        let all = tape.concat_rows(logits)?;
        let flat: Vec<usize> = (0..TOKENS_PER_MEASURE)
            .flat_map(|k| targets.iter().map(move |m| m.as_ref()[k]))
            .collect();
        Ok(tape.cross_entropy(all, &flat)?)
    }

    /// β-weighted ELBO graph with teacher-forced decoding. Returns
    /// `(loss, recon per token, kl per measure)` nodes.
    pub fn elbo_graph<'a, M: AsRef<[usize]>>(
        &self,
        tape: &mut Tape<'a, T>,
        p: &Binding<'a, T>,
        measures: &[M],
        z_mode: ZMode,
        ctx: &mut Ctx<'_>,
    ) -> Result<(Var, Var, Var), VaeError> {
        let (mu, logvar) = self.encode_graph(tape, p, measures, ctx)?;
        let z = match z_mode {
            ZMode::Mean => mu,
            ZMode::Sample => self.reparameterize_graph(tape, mu, logvar, ctx.rng)?,
        };
        let dec = self.decode_graph(tape, p, z, Some(measures), Decoding::Argmax, ctx)?;
        let ce = self.reconstruction_graph(tape, &dec.logits, measures)?;
        let recon = tape.scale(ce, T::c(1.0 / (TOKENS_PER_MEASURE * measures.len()) as f64));
        let kl = self.kl_graph(tape, mu, logvar)?;
        let weighted = tape.scale(kl, T::c(self.config.beta));
        let loss = tape.add(recon, weighted)?;
        Ok((loss, recon, kl))
    }

    /// Posterior for a batch of measures (eval mode, no gradients).
    pub fn encode_batch<M: AsRef<[usize]>>(&self, measures: &[M]) -> Result<Posterior<T>, VaeError> {
        let mut tape = Tape::new();
        let p = Binding::frozen(&self.store);
        let mut rng = RngStream::new(0);
        let mut ctx = Ctx::eval(&mut rng);
        let (mu, logvar) = self.encode_graph(&mut tape, &p, measures, &mut ctx)?;
        let sigma = tape.value(logvar).map(|x| (x * T::c(0.5)).exp());
        Ok(Posterior {
            mu: tape.value(mu).clone(),
            sigma,
        })
    }

    pub fn encode(&self, measure: &[usize]) -> Result<Posterior<T>, VaeError> {
        Ok(self.encode_batch(&[measure])?.row(0))
    }

    /// Decode a batch of latents `[B, d_z]`; teacher-forced when `teacher` is given.
    pub fn decode<M: AsRef<[usize]>>(
        &self,
        z: &Tensor<T>,
        teacher: Option<&[M]>,
        decoding: Decoding,
        ctx: &mut Ctx<'_>,
    ) -> Result<Decoded<T>, VaeError> {
        if ctx.training && teacher.is_none() {
            return Err(VaeError::MissingTeacherTokens);
        }
        let mut tape = Tape::new();
        let p = Binding::frozen(&self.store);
        let zr = z.clone().reshape(vec![z.rows(), z.cols()])?;
        let zv = tape.constant(zr);
        let g = self.decode_graph(&mut tape, &p, zv, teacher, decoding, ctx)?;
        let batch = z.rows();
        let logits = (0..batch)
            .map(|b| {
                let rows: Vec<T> = g.logits.iter().flat_map(|l| tape.value(*l).row(b).to_vec()).collect();
                Tensor::matrix(TOKENS_PER_MEASURE, self.config.vocab_size, rows)
            })
            .collect();
        Ok(Decoded { logits, tokens: g.tokens })
    }

    /// Loss values without gradients.
    pub fn loss<M: AsRef<[usize]>>(&self, measures: &[M], z_mode: ZMode, ctx: &mut Ctx<'_>) -> Result<VaeLoss, VaeError> {
        let mut tape = Tape::new();
        let p = Binding::frozen(&self.store);
        let (l, r, k) = self.elbo_graph(&mut tape, &p, measures, z_mode, ctx)?;
        Ok(VaeLoss {
            loss: tape.item(l).f64(),
            recon: tape.item(r).f64(),
            kl: tape.item(k).f64(),
        })
    }

    /// Loss plus gradient accumulation into the parameter store.
    pub fn loss_and_grad<M: AsRef<[usize]>>(&mut self, measures: &[M], z_mode: ZMode, ctx: &mut Ctx<'_>) -> Result<VaeLoss, VaeError> {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let p = Binding::new(&self.store, true);
            let (l, r, k) = self.elbo_graph(&mut tape, &p, measures, z_mode, ctx)?;
            tape.backward(l);
            let loss = VaeLoss {
                loss: tape.item(l).f64(),
                recon: tape.item(r).f64(),
                kl: tape.item(k).f64(),
            };
            (loss, p.gradients(&tape))
        };
        self.store.accumulate(grads);
        Ok(loss)
    }

    /// Fraction of tokens whose teacher-forced argmax prediction from
    /// `z = μ` matches the input.
    pub fn reconstruction_accuracy<M: AsRef<[usize]>>(&self, measures: &[M]) -> Result<f64, VaeError> {
        if measures.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        let mut rng = RngStream::new(0);
        for chunk in measures.chunks(256) {
            let post = self.encode_batch(chunk)?;
            let mut ctx = Ctx::eval(&mut rng);
            let dec = self.decode(&post.mu, Some(chunk), Decoding::Argmax, &mut ctx)?;
            for (logits, m) in dec.logits.iter().zip(chunk) {
                correct += logits.argmax_rows().iter().zip(m.as_ref()).filter(|(a, b)| a == b).count();
            }
        }
        Ok(correct as f64 / (measures.len() * TOKENS_PER_MEASURE) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> MeasureVae<f64> {
        let mut c = VaeConfig::small(vocab, 4, 8);
        c.embed_dim = 3;
        MeasureVae::new(c, 3).unwrap()
    }

    fn measure(v: usize, seed: u64) -> Vec<usize> {
        let mut rng = RngStream::new(seed);
        (0..24).map(|_| rng.below(v)).collect()
    }

    #[test]
    fn full_config_dimensions() {
        let c = VaeConfig::full(40);
        assert_eq!(c.tick_input(), 522);
        assert_eq!(2 * c.encoder_hidden, 1024);
        assert_eq!(c.tick_layers * c.tick_hidden, 1024);
        assert_eq!(c.beta, 1e-3);
    }

    #[test]
    fn posterior_shapes_and_positivity() {
        let vae = tiny(5);
        let p = vae.encode(&measure(5, 1)).unwrap();
        assert_eq!(p.mu.len(), 4);
        assert_eq!(p.sigma.len(), 4);
        assert!(p.sigma.data().iter().all(|s| *s > 0.0));
        assert_eq!(p, vae.encode(&measure(5, 1)).unwrap());
        assert!(matches!(vae.encode(&[0; 23]), Err(VaeError::WrongMeasureLength { found: 23 })));
        assert!(matches!(vae.encode(&[7; 24]), Err(VaeError::TokenOutOfRange { .. })));
    }

    #[test]
    fn kl_known_values() {
        let p = Posterior {
            mu: Tensor::vector(vec![0.0, 0.0]),
            sigma: Tensor::vector(vec![1.0, 1.0]),
        };
        assert_eq!(kl_divergence(&p), 0.0);
        let p = Posterior {
            mu: Tensor::vector(vec![1.0]),
            sigma: Tensor::vector(vec![1.0]),
        };
        assert!((kl_divergence(&p) - 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_with_tiny_sigma_is_mu() {
        let p = Posterior {
            mu: Tensor::vector(vec![0.3, -2.0]),
            sigma: Tensor::vector(vec![1e-12, 1e-12]),
        };
        let z = reparameterize(&p, &mut RngStream::new(1));
        assert!(z.data().iter().zip(p.mu.data()).all(|(a, b): (&f64, &f64)| (a - b).abs() < 1e-10));
        assert_eq!(z, reparameterize(&p, &mut RngStream::new(1)));
    }

    #[test]
    fn decode_shapes_and_determinism() {
        let vae = tiny(5);
        let m = measure(5, 2);
        let z = vae.encode(&m).unwrap().mu.reshape(vec![1, 4]).unwrap();
        let mut rng = RngStream::new(0);
        let a = vae.decode(&z, Some(std::slice::from_ref(&m)), Decoding::Argmax, &mut Ctx::eval(&mut rng)).unwrap();
        assert_eq!(a.logits[0].shape(), &[24, 5]);
        let b = vae.decode(&z, Some(std::slice::from_ref(&m)), Decoding::Argmax, &mut Ctx::eval(&mut rng)).unwrap();
        assert_eq!(a.logits, b.logits);
        let s1 = vae.decode::<Vec<usize>>(&z, None, Decoding::Sample, &mut Ctx::eval(&mut RngStream::new(4))).unwrap();
        let s2 = vae.decode::<Vec<usize>>(&z, None, Decoding::Sample, &mut Ctx::eval(&mut RngStream::new(4))).unwrap();
        assert_eq!(s1.tokens, s2.tokens);
        assert_eq!(s1.tokens[0].len(), 24);
        let err = vae.decode::<Vec<usize>>(&z, None, Decoding::Argmax, &mut Ctx::train(&mut rng));
        assert!(matches!(err, Err(VaeError::MissingTeacherTokens)));
    }

    #[test]
    fn beta_zero_loss_is_reconstruction() {
        let mut vae = tiny(5);
        vae.config.beta = 0.0;
        let ms = vec![measure(5, 5), measure(5, 6)];
        let l = vae.loss(&ms, ZMode::Mean, &mut Ctx::eval(&mut RngStream::new(0))).unwrap();
        assert_eq!(l.loss, l.recon);
        assert!(l.kl >= 0.0);
    }

    #[test]
    fn untrained_reconstruction_is_near_uniform() {
        let vae = tiny(5);
        let ms: Vec<Vec<usize>> = (0..8).map(|s| measure(5, s)).collect();
        let l = vae.loss(&ms, ZMode::Sample, &mut Ctx::train(&mut RngStream::new(0))).unwrap();
        let ln_v = 5f64.ln();
        assert!((l.recon - ln_v).abs() < 0.2 * ln_v, "{} vs {}", l.recon, ln_v);
        let acc = vae.reconstruction_accuracy(&ms).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
