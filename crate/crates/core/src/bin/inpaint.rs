use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use inpaint_core::checkpoint::{inpaint_checkpoint, load_inpaint, load_vae, vae_checkpoint, Checkpoint, VaeRef};
use inpaint_core::codec::write_token_text;
use inpaint_core::config::TrainConfig;
use inpaint_core::corpus::{ingest, load_corpus, load_score, IngestOptions, LoadedCorpus};
use inpaint_core::latent::{ablation_config, ContextMode, SplitBounds};
use inpaint_core::service::{self, InpaintRequest, LoadedModel, MaskSpec, MaskRange};
use inpaint_core::train::{evaluate_nll, nll_sweep, sweep_csv, train_inpaintnet, train_vae, EpochRecord, SplitPolicy};
use inpaint_core::vae::{Decoding, MeasureVae, ZMode};

#[derive(Parser)]
#[command(name = "inpaint", version, about = "Latent-space score inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an ABC directory into windows, vocabulary and splits.
    Ingest {
        dir: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        window: usize,
        #[arg(long, default_value_t = 16)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the measure VAE.
    TrainVae {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the latent RNN against a frozen VAE checkpoint.
    TrainInpaint {
        #[command(flatten)]
        train: TrainArgs,
        /// VAE checkpoint. With --untrained-vae a fresh VAE is written here.
        #[arg(long)]
        vae: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
        #[arg(long)]
        untrained_vae: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Gap NLL of a checkpoint on a corpus split.
    Eval {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Gap NLL for each gap length, centred in the window, as CSV.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 2)]
        min_gap: usize,
        #[arg(long, default_value_t = 8)]
        max_gap: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fill measures of a score file (.json, .tok or ABC).
    Inpaint {
        score: PathBuf,
        #[arg(long, env = "INPAINT_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = ZArg::Sample)]
        z_mode: ZArg,
        #[arg(long, value_enum, default_value_t = DecodeArg::Sample)]
        decoding: DecodeArg,
        /// Print token text instead of JSON.
        #[arg(long)]
        tokens: bool,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "INPAINT_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "INPAINT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Ingested corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale config instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "INPAINT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = PartArg::Test)]
    part: PartArg,
    #[arg(long, value_enum, default_value_t = ZArg::Mean)]
    z_mode: ZArg,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Both,
    PastOnly,
    FutureOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZArg {
    Mean,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Argmax,
    Sample,
}

impl From<Mode> for ContextMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Both => ContextMode::Both,
            Mode::PastOnly => ContextMode::PastOnly,
            Mode::FutureOnly => ContextMode::FutureOnly,
        }
    }
}

impl From<ZArg> for ZMode {
    fn from(z: ZArg) -> Self {
        match z {
            ZArg::Mean => ZMode::Mean,
            ZArg::Sample => ZMode::Sample,
        }
    }
}

impl From<DecodeArg> for Decoding {
    fn from(d: DecodeArg) -> Self {
        match d {
            DecodeArg::Argmax => Decoding::Argmax,
            DecodeArg::Sample => Decoding::Sample,
        }
    }
}

impl TrainArgs {
    fn config(&self, vae_phase: bool) -> Result<TrainConfig> {
        let mut cfg = match (&self.config, self.desk) {
            (Some(p), _) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            (None, true) => TrainConfig::desk(),
            (None, false) => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            if vae_phase {
                cfg.vae_epochs = e;
            } else {
                cfg.epochs = e;
            }
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        if let Some(lr) = self.lr {
            cfg.adam.lr = lr;
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        Ok(cfg)
    }

    fn write_metrics(&self, log: &inpaint_core::train::MetricsLog) -> Result<()> {
        if let Some(p) = &self.metrics {
            log.write_jsonl(p).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

fn print_epoch(rec: &EpochRecord) {
    match rec.recon_accuracy {
        Some(a) => eprintln!(
            "[{}] epoch {:>3} step {:>6}  loss {:.4}  valid nll {:.4}  acc {:.4}",
            rec.phase, rec.epoch, rec.steps, rec.train_loss, rec.valid_nll, a
        ),
        None => eprintln!(
            "[{}] epoch {:>3} step {:>6}  loss {:.4}  valid nll {:.4}",
            rec.phase, rec.epoch, rec.steps, rec.train_loss, rec.valid_nll
        ),
    }
}

fn corpus(dir: &Path) -> Result<LoadedCorpus> {
    load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn part(c: &LoadedCorpus, p: PartArg) -> &[Vec<Vec<usize>>] {
    match p {
        PartArg::Train => &c.train,
        PartArg::Valid => &c.valid,
        PartArg::Test => &c.test,
    }
}

fn eval_setup(args: &EvalArgs) -> Result<(inpaint_core::checkpoint::LoadedInpaint, LoadedCorpus)> {
    let model = load_inpaint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let c = corpus(&args.corpus)?;
    if c.vocab != model.vocab {
        bail!("corpus vocabulary differs from the checkpoint's");
    }
    if part(&c, args.part).is_empty() {
        bail!("the selected split has no windows");
    }
    Ok((model, c))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest {
            dir,
            out,
            window,
            stride,
            seed,
        } => {
            let opts = IngestOptions {
                window_measures: window,
                stride,
                seed,
                ..IngestOptions::default()
            };
            let m = ingest(&dir, &out, opts)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "accepted": m.accepted,
                    "rejected": m.rejected,
                    "vocab_size": m.vocab_size,
                    "windows": m.windows,
                }))?
            );
        }
        Command::TrainVae { train, out } => {
            let cfg = train.config(true)?;
            let c = corpus(&train.corpus)?;
            let valid: Vec<Vec<usize>> = c.valid.iter().flatten().cloned().collect();
            let run = train_vae::<f32>(&c.train_measures(), &valid, c.vocab.len(), &cfg, &mut print_epoch)?;
            train.write_metrics(&run.log)?;
            let info = json!({"best_epoch": run.best_epoch, "steps": run.steps});
            let sha = vae_checkpoint(&run.vae, &c.vocab, serde_json::to_value(&cfg)?, info, Some(&run.adam)).save(&out)?;
            println!("{} {sha}", out.display());
        }
        Command::TrainInpaint {
            train,
            vae,
            mode,
            untrained_vae,
            out,
        } => {
            let mut cfg = train.config(false)?;
            cfg.latent = ablation_config(&cfg.latent, mode.into());
            let c = corpus(&train.corpus)?;
            if untrained_vae {
                let fresh = MeasureVae::<f32>::new(cfg.vae_config(c.vocab.len()), cfg.seed)?;
                let info = json!({"untrained": true});
                vae_checkpoint(&fresh, &c.vocab, serde_json::to_value(&cfg)?, info, None).save(&vae)?;
            }
            let loaded = load_vae(&vae).with_context(|| format!("loading {}", vae.display()))?;
            if loaded.vocab != c.vocab {
                bail!("corpus vocabulary differs from the VAE's");
            }
            cfg.vae = loaded.vae.config().clone();
            let run = train_inpaintnet(loaded.vae, &c.train, &c.valid, &cfg, &mut print_epoch)?;
            train.write_metrics(&run.log)?;
            let vae_ref = VaeRef {
                path: relative_to(&vae, &out),
                sha256: loaded.sha256,
            };
            let info = json!({"best_epoch": run.best_epoch, "steps": run.steps, "untrained_vae": untrained_vae});
            let ck: Checkpoint = inpaint_checkpoint(&run.net.rnn, &loaded.header, vae_ref, serde_json::to_value(&cfg)?, info, Some(&run.adam));
            let sha = ck.save(&out)?;
            println!("{} {sha}", out.display());
        }
        Command::Eval { eval } => {
            let (model, c) = eval_setup(&eval)?;
            let policy = SplitPolicy::PerWindow {
                bounds: SplitBounds::default(),
                seed: eval.eval_seed,
            };
            let windows = part(&c, eval.part);
            let nll = evaluate_nll(&model.net, windows, None, policy, eval.z_mode.into())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "checkpoint": model.sha256,
                    "mode": model.net.mode(),
                    "windows": windows.len(),
                    "nll": nll,
                }))?
            );
        }
        Command::Sweep {
            eval,
            min_gap,
            max_gap,
            csv,
        } => {
            let (model, c) = eval_setup(&eval)?;
            let rows = nll_sweep(&model.net, part(&c, eval.part), min_gap..=max_gap, eval.z_mode.into())?;
            let text = sweep_csv(&rows);
            match csv {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Inpaint {
            score,
            checkpoint,
            from,
            count,
            samples,
            seed,
            z_mode,
            decoding,
            tokens,
        } => {
            let measures = load_score(&score)?;
            let model = LoadedModel::from_checkpoint(&checkpoint)?;
            let req = InpaintRequest {
                measures,
                mask: MaskSpec::Range(MaskRange {
                    start_measure: from,
                    count,
                }),
                num_samples: samples,
                seed,
                z_mode: Some(z_mode.into()),
                decoding: Some(decoding.into()),
            };
            let resp = service::run_inpaint(&model, &req).map_err(|e| anyhow::anyhow!("{}: {}", e.code, e.message))?;
            if tokens {
                for s in &resp.samples {
                    println!("# sample seed {}", s.seed);
                    print!("{}", write_token_text(&s.measures));
                }
            } else {
                println!("{}", serde_json::to_string_pretty(&resp)?);
            }
        }
        Command::Serve { checkpoint, port, host } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            tokio::runtime::Runtime::new()?.block_on(service::serve(addr, checkpoint))?;
        }
    }
    Ok(())
}

/// `target` as seen from the directory of `from`, when that is simple.
fn relative_to(target: &Path, from: &Path) -> String {
    let dir = from.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    match (target.canonicalize(), dir.canonicalize()) {
        (Ok(t), Ok(d)) => t.strip_prefix(&d).map(Path::to_path_buf).unwrap_or(t),
        _ => target.to_path_buf(),
    }
    .to_string_lossy()
    .into_owned()
}
