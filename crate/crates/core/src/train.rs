//! Training loops, early stopping, evaluation and the metrics log.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TOKENS_PER_MEASURE;
use crate::config::TrainConfig;
use crate::latent::{evaluation_split, stochastic_split, InpaintNet, LatentError, SplitBounds, SplitSpec};
use crate::nn::{AdamState, Ctx, Real, RngStream, Tensor};
use crate::vae::{MeasureVae, Posterior, VaeError, ZMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} set is empty")]
    EmptyCorpus(&'static str),
    #[error("windows have {found} measures, expected {expected}")]
    RaggedWindows { found: usize, expected: usize },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub valid_nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_accuracy: Option<f64>,
    pub wall_ms: f64,
}

/// Append-only per-epoch records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, rec: EpochRecord) {
        if let Some(last) = self.records.iter().rev().find(|r| r.phase == rec.phase) {
            assert!(rec.epoch > last.epoch, "epochs must increase within a phase");
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stop after `patience` consecutive epochs without a new minimum.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if metric.partial_cmp(&b) != Some(std::cmp::Ordering::Less) => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let bs = batch_size.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks_exact(bs).map(<[usize]>::to_vec).collect()
}

pub struct VaeRun<T> {
    pub vae: MeasureVae<T>,
    pub adam: AdamState<T>,
    pub log: MetricsLog,
    pub best_epoch: usize,
    pub steps: usize,
}

/// Teacher-forced reconstruction NLL (nats/token) and accuracy at `z = μ`.
pub fn vae_validation<T: Real>(vae: &MeasureVae<T>, measures: &[Vec<usize>]) -> Result<(f64, f64), TrainError> {
    let mut total = 0.0;
    let mut rng = RngStream::new(0);
    for chunk in measures.chunks(256) {
        let l = vae.loss(chunk, ZMode::Mean, &mut Ctx::eval(&mut rng))?;
        total += l.recon * chunk.len() as f64;
    }
    Ok((total / measures.len() as f64, vae.reconstruction_accuracy(measures)?))
}

/// β-ELBO training on single measures with Adam; the best validation epoch
/// is restored at the end. With an empty validation set the training set
/// is used for model selection.
pub fn train_vae<T: Real>(
    train: &[Vec<usize>],
    valid: &[Vec<usize>],
    vocab_size: usize,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<VaeRun<T>, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus("training"));
    }
    let valid = if valid.is_empty() { train } else { valid };
    let mut vae = MeasureVae::<T>::new(cfg.vae_config(vocab_size), cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, vae.store());
    let root = RngStream::new(cfg.seed).fork(1);
    let mut log = MetricsLog::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values: Vec<Tensor<T>> = vae.store().values().to_vec();
    let mut steps = 0;
    for epoch in 1..=cfg.vae_epochs {
        let start = Instant::now();
        let mut rng = root.fork(epoch as u64);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for batch in batches(train.len(), cfg.batch_size, &mut rng) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let ms: Vec<&[usize]> = batch.iter().map(|&i| train[i].as_slice()).collect();
            let l = vae.loss_and_grad(&ms, ZMode::Sample, &mut Ctx::train(&mut rng))?;
            adam.step(vae.store_mut());
            loss_sum += l.loss;
            n_batches += 1;
            steps += 1;
        }
        let (nll, acc) = vae_validation(&vae, valid)?;
        let rec = EpochRecord {
            phase: "vae".into(),
            epoch,
            steps,
            train_loss: loss_sum / n_batches.max(1) as f64,
            valid_nll: nll,
            recon_accuracy: Some(acc),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        progress(&rec);
        log.push(rec);
        let decision = stopper.observe(epoch, nll);
        if decision == StopDecision::Improved {
            best_values = vae.store().values().to_vec();
        }
        if decision == StopDecision::Stop || cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    restore(vae.store_mut(), best_values);
    Ok(VaeRun {
        vae,
        adam,
        log,
        best_epoch: stopper.best().map_or(0, |b| b.0),
        steps,
    })
}

fn restore<T: Real>(store: &mut crate::nn::ParameterStore<T>, values: Vec<Tensor<T>>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.get_mut(id) = v;
    }
}

/// How evaluation windows are split into past / gap / future.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    /// Per-window split drawn from the bounds with `fork(window index)` of `seed`.
    PerWindow { bounds: SplitBounds, seed: u64 },
    /// Same split for every window.
    Fixed(SplitSpec),
}

fn window_len(windows: &[Vec<Vec<usize>>]) -> Result<usize, TrainError> {
    let n = windows.first().map_or(0, Vec::len);
    if let Some(w) = windows.iter().find(|w| w.len() != n) {
        return Err(TrainError::RaggedWindows {
            found: w.len(),
            expected: n,
        });
    }
    Ok(n)
}

/// Teacher-forced cross-entropy over gap tokens, mean nats per token.
/// `posts` may carry precomputed context posteriors (one per window).
pub fn evaluate_nll<T: Real>(
    net: &InpaintNet<T>,
    windows: &[Vec<Vec<usize>>],
    posts: Option<&[Posterior<T>]>,
    policy: SplitPolicy,
    z_mode: ZMode,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyCorpus("evaluation"));
    }
    let n = window_len(windows)?;
    let owned;
    let posts = match posts {
        Some(p) => p,
        None => {
            owned = net.context_posteriors(windows)?;
            &owned
        }
    };
    let mut groups: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..windows.len() {
        let s = match policy {
            SplitPolicy::PerWindow { bounds, seed } => evaluation_split(n, &bounds, seed, i)?,
            SplitPolicy::Fixed(s) => s,
        };
        groups.entry((s.n_p, s.n_i, s.n_f)).or_default().push(i);
    }
    let mut rng = RngStream::new(0);
    let (mut total, mut tokens) = (0.0, 0usize);
    for ((n_p, n_i, n_f), idx) in groups {
        let split = SplitSpec::new(n_p, n_i, n_f)?;
        for chunk in idx.chunks(64) {
            let ws: Vec<&Vec<Vec<usize>>> = chunk.iter().map(|&i| &windows[i]).collect();
            let ps: Vec<&Posterior<T>> = chunk.iter().map(|&i| &posts[i]).collect();
            let l = net.inpaint_loss(&ws, &ps, split, z_mode, &mut Ctx::eval(&mut rng))?;
            let t = chunk.len() * n_i * TOKENS_PER_MEASURE;
            total += l * t as f64;
            tokens += t;
        }
    }
    Ok(total / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_i: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub nll: f64,
}

/// NLL per gap length with the gap centred in each window.
pub fn nll_sweep<T: Real>(
    net: &InpaintNet<T>,
    windows: &[Vec<Vec<usize>>],
    gaps: impl IntoIterator<Item = usize>,
    z_mode: ZMode,
) -> Result<Vec<SweepRow>, TrainError> {
    let n = window_len(windows)?;
    let posts = net.context_posteriors(windows)?;
    gaps.into_iter()
        .map(|n_i| {
            let split = SplitSpec::centered(n, n_i)?;
            let nll = evaluate_nll(net, windows, Some(&posts), SplitPolicy::Fixed(split), z_mode)?;
            Ok(SweepRow {
                n_i,
                n_p: split.n_p,
                n_f: split.n_f,
                nll,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n_i,n_p,n_f,nll\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.6}\n", r.n_i, r.n_p, r.n_f, r.nll));
    }
    out
}

pub struct InpaintRun<T> {
    pub net: InpaintNet<T>,
    pub adam: AdamState<T>,
    pub log: MetricsLog,
    pub best_epoch: usize,
    pub steps: usize,
    /// Splits drawn for every training batch, in order.
    pub splits: Vec<SplitSpec>,
}

/// Train the latent RNN on windows through the frozen VAE. Each batch
/// draws its own split; validation NLL uses deterministic per-window splits.
pub fn train_inpaintnet<T: Real>(
    vae: MeasureVae<T>,
    train: &[Vec<Vec<usize>>],
    valid: &[Vec<Vec<usize>>],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<InpaintRun<T>, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus("training"));
    }
    let n = window_len(train)?;
    let valid = if valid.is_empty() { train } else { valid };
    let mut net = InpaintNet::new(vae, cfg.latent_config(), cfg.seed.wrapping_add(1))?;
    let train_posts = net.context_posteriors(train)?;
    let valid_posts = net.context_posteriors(valid)?;
    let policy = SplitPolicy::PerWindow {
        bounds: cfg.split,
        seed: cfg.eval_seed,
    };
    let mut adam = AdamState::new(cfg.adam, net.rnn.store());
    let root = RngStream::new(cfg.seed).fork(2);
    let mut log = MetricsLog::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = net.rnn.store().values().to_vec();
    let mut splits = Vec::new();
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = root.fork(epoch as u64);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for batch in batches(train.len(), cfg.batch_size, &mut rng) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let split = stochastic_split(n, &cfg.split, &mut rng)?;
            assert!(split.total() == n && split.n_p >= 1 && split.n_f >= 1, "partition law violated: {split:?}");
            splits.push(split);
            let ws: Vec<&Vec<Vec<usize>>> = batch.iter().map(|&i| &train[i]).collect();
            let ps: Vec<&Posterior<T>> = batch.iter().map(|&i| &train_posts[i]).collect();
            loss_sum += net.loss_and_grad(&ws, &ps, split, cfg.train_z_mode, &mut Ctx::train(&mut rng))?;
            adam.step(net.rnn.store_mut());
            n_batches += 1;
            steps += 1;
        }
        let nll = evaluate_nll(&net, valid, Some(&valid_posts), policy, cfg.eval_z_mode)?;
        let rec = EpochRecord {
            phase: "inpaint".into(),
            epoch,
            steps,
            train_loss: loss_sum / n_batches.max(1) as f64,
            valid_nll: nll,
            recon_accuracy: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        progress(&rec);
        log.push(rec);
        let decision = stopper.observe(epoch, nll);
        if decision == StopDecision::Improved {
            best_values = net.rnn.store().values().to_vec();
        }
        if decision == StopDecision::Stop || cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    restore(net.rnn.store_mut(), best_values);
    Ok(InpaintRun {
        net,
        adam,
        log,
        best_epoch: stopper.best().map_or(0, |b| b.0),
        steps,
        splits,
    })
}
