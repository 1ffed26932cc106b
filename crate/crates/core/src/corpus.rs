//! Corpus assembly: ABC directory ingest, fixed-length windows and
//! tune-disjoint train/valid/test splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{filter_melody, parse_abc, split_tunes, FilterVerdict};
use crate::codec::{encode_score, parse_token_text, write_token_text, CodecError, TickGrid, Vocabulary, TOKENS_PER_MEASURE};
use crate::nn::RngStream;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("malformed corpus directory: {0}")]
    Malformed(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An accepted tune as token strings, one `Vec` of 24 per measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTune {
    pub id: String,
    pub title: String,
    pub measures: Vec<Vec<String>>,
}

/// `N` consecutive measures cut from one tune.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub tune: String,
    pub start: usize,
    pub measures: Vec<Vec<String>>,
}

pub fn window_count(measures: usize, n: usize, stride: usize) -> usize {
    if n == 0 || stride == 0 || measures < n {
        0
    } else {
        (measures - n) / stride + 1
    }
}

/// Sliding windows of exactly `n` measures; shorter tunes contribute none.
pub fn window_corpus(tunes: &[EncodedTune], n: usize, stride: usize) -> Vec<Window> {
    tunes
        .iter()
        .flat_map(|t| {
            (0..window_count(t.measures.len(), n, stride)).map(move |w| Window {
                tune: t.id.clone(),
                start: w * stride,
                measures: t.measures[w * stride..w * stride + n].to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), CorpusError> {
        let r = [self.train, self.valid, self.test];
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios(r));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// Tune-level assignment; windows follow their tune.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<Window>,
    pub valid: Vec<Window>,
    pub test: Vec<Window>,
    pub assignment: BTreeMap<String, Part>,
}

/// Shuffle tune ids with `seed`, then take `round(n·train)` for training,
/// `round(n·valid)` for validation and the rest for test.
pub fn assign_tunes(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<BTreeMap<String, Part>, CorpusError> {
    ratios.validate()?;
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    order.dedup();
    RngStream::new(seed).shuffle(&mut order);
    let n = order.len();
    let n_train = ((n as f64 * ratios.train).round() as usize).min(n);
    let n_valid = ((n as f64 * ratios.valid).round() as usize).min(n - n_train);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let part = if i < n_train {
                Part::Train
            } else if i < n_train + n_valid {
                Part::Valid
            } else {
                Part::Test
            };
            (id.clone(), part)
        })
        .collect())
}

pub fn split_corpus(tunes: &[EncodedTune], n: usize, stride: usize, ratios: SplitRatios, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if n == 0 {
        return Err(CorpusError::ZeroWindow);
    }
    let ids: Vec<String> = tunes.iter().map(|t| t.id.clone()).collect();
    let assignment = assign_tunes(&ids, ratios, seed)?;
    let mut split = CorpusSplit {
        seed,
        ratios,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        assignment,
    };
    for w in window_corpus(tunes, n, stride) {
        match split.assignment[&w.tune] {
            Part::Train => split.train.push(w),
            Part::Valid => split.valid.push(w),
            Part::Test => split.test.push(w),
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub id: String,
    pub title: String,
    pub accepted: bool,
    /// Rejection code or filter reason.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub measures: usize,
    pub windows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Part>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub window_measures: usize,
    pub stride: usize,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub vocab_size: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub windows: BTreeMap<String, usize>,
    pub tunes: Vec<TuneRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub window_measures: usize,
    pub stride: usize,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            window_measures: 16,
            stride: 16,
            seed: 0,
            ratios: SplitRatios::default(),
        }
    }
}

/// Parse, filter and encode every tune of every `.abc` file under `dir`
/// (sorted by path). Returns accepted tunes and one record per tune seen.
pub fn read_abc_dir(dir: &Path) -> Result<(Vec<EncodedTune>, Vec<TuneRecord>), CorpusError> {
    let mut files = Vec::new();
    collect_abc_files(dir, &mut files)?;
    files.sort();
    let grid = TickGrid::standard();
    let mut accepted = Vec::new();
    let mut records = Vec::new();
    for file in files {
        let text = fs::read(&file).map_err(io_err(&file))?;
        let text = String::from_utf8_lossy(&text);
        let stem = file.strip_prefix(dir).unwrap_or(&file).to_string_lossy().into_owned();
        for (k, chunk) in split_tunes(&text).into_iter().enumerate() {
            let mut rec = TuneRecord {
                id: format!("{stem}#{}", k + 1),
                title: String::new(),
                accepted: false,
                reason: None,
                detail: None,
                measures: 0,
                windows: 0,
                split: None,
            };
            match parse_abc(&chunk) {
                Err(e) => {
                    rec.reason = Some(serde_json::to_value(e.code)?.as_str().unwrap_or_default().to_string());
                    rec.detail = Some(e.to_string());
                }
                Ok(tune) => {
                    if let Some(x) = tune.reference {
                        rec.id = format!("{stem}#X{x}");
                    }
                    rec.title = tune.title.clone();
                    rec.measures = tune.measures.len();
                    match filter_melody(&tune, &grid) {
                        FilterVerdict::Reject(r) => {
                            rec.reason = Some(serde_json::to_value(r)?.as_str().unwrap_or_default().to_string());
                        }
                        FilterVerdict::Accept => match encode_score(&tune.measures, &grid) {
                            Ok(tokens) => {
                                rec.accepted = true;
                                accepted.push(EncodedTune {
                                    id: rec.id.clone(),
                                    title: tune.title.clone(),
                                    measures: tokens.chunks(TOKENS_PER_MEASURE).map(<[String]>::to_vec).collect(),
                                });
                            }
                            Err(e) => {
                                rec.reason = Some("encoding".into());
                                rec.detail = Some(e.to_string());
                            }
                        },
                    }
                }
            }
            records.push(rec);
        }
    }
    Ok((accepted, records))
}

fn collect_abc_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_abc_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("abc")) {
            out.push(path);
        }
    }
    Ok(())
}

fn windows_text(windows: &[Window]) -> String {
    let mut out = String::new();
    for w in windows {
        out.push_str(&format!("# window {} {}\n", w.tune, w.start));
        out.push_str(&write_token_text(&w.measures));
    }
    out
}

/// Ingest `input` and write `manifest.json`, `vocab.txt` and
/// `{train,valid,test}.tok` into `output`.
pub fn ingest(input: &Path, output: &Path, opts: IngestOptions) -> Result<Manifest, CorpusError> {
    let (tunes, mut records) = read_abc_dir(input)?;
    let split = split_corpus(&tunes, opts.window_measures, opts.stride, opts.ratios, opts.seed)?;
    let vocab = Vocabulary::build(tunes.iter().flat_map(|t| t.measures.iter().flatten()));
    for rec in &mut records {
        if rec.accepted {
            rec.windows = window_count(rec.measures, opts.window_measures, opts.stride);
            rec.split = split.assignment.get(&rec.id).copied();
        }
    }
    let manifest = Manifest {
        window_measures: opts.window_measures,
        stride: opts.stride,
        seed: opts.seed,
        ratios: opts.ratios,
        vocab_size: vocab.len(),
        accepted: tunes.len(),
        rejected: records.len() - tunes.len(),
        windows: [("train", split.train.len()), ("valid", split.valid.len()), ("test", split.test.len())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        tunes: records,
    };
    fs::create_dir_all(output).map_err(io_err(output))?;
    let write = |name: &str, text: String| -> Result<(), CorpusError> {
        let p = output.join(name);
        fs::write(&p, text).map_err(io_err(&p))
    };
    write("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
    write("vocab.txt", vocab.to_text())?;
    write("train.tok", windows_text(&split.train))?;
    write("valid.tok", windows_text(&split.valid))?;
    write("test.tok", windows_text(&split.test))?;
    Ok(manifest)
}

/// Read a score as token strings. `.json` holds a list of measures or an
/// object with a `measures` field, `.tok` is token text (one measure per
/// line), anything else is ABC and the first accepted tune is used.
pub fn load_score(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let measures = match ext.as_str() {
        "json" => {
            #[derive(Deserialize)]
            #[serde(untagged)]
            enum Score {
                Bare(Vec<Vec<String>>),
                Wrapped { measures: Vec<Vec<String>> },
            }
            match serde_json::from_str(&text)? {
                Score::Bare(m) | Score::Wrapped { measures: m } => m,
            }
        }
        "tok" => parse_token_text(&text)?,
        _ => {
            let grid = TickGrid::standard();
            let mut last = String::from("no tunes found");
            let mut found = None;
            for chunk in split_tunes(&text) {
                match parse_abc(&chunk) {
                    Ok(tune) => match filter_melody(&tune, &grid) {
                        FilterVerdict::Accept => {
                            let tokens = encode_score(&tune.measures, &grid)?;
                            found = Some(tokens.chunks(TOKENS_PER_MEASURE).map(<[String]>::to_vec).collect());
                            break;
                        }
                        FilterVerdict::Reject(r) => last = format!("tune rejected: {r:?}"),
                    },
                    Err(e) => last = e.to_string(),
                }
            }
            found.ok_or_else(|| CorpusError::Malformed(format!("{}: {last}", path.display())))?
        }
    };
    if let Some((m, bad)) = measures.iter().enumerate().find(|(_, m)| m.len() != TOKENS_PER_MEASURE) {
        return Err(CorpusError::Malformed(format!(
            "{}: measure {m} has {} tokens, expected {TOKENS_PER_MEASURE}",
            path.display(),
            bad.len()
        )));
    }
    Ok(measures)
}

/// A window as vocabulary ids, one `Vec` of 24 per measure.
pub type IdWindow = Vec<Vec<usize>>;

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub train: Vec<IdWindow>,
    pub valid: Vec<IdWindow>,
    pub test: Vec<IdWindow>,
}

impl LoadedCorpus {
    /// Every measure of the training windows.
    pub fn train_measures(&self) -> Vec<Vec<usize>> {
        self.train.iter().flatten().cloned().collect()
    }
}

pub fn windows_to_ids(vocab: &Vocabulary, windows: &[Vec<Vec<String>>]) -> Result<Vec<IdWindow>, CodecError> {
    windows
        .iter()
        .map(|w| w.iter().map(|m| vocab.encode(m)).collect())
        .collect()
}

/// Read a directory written by [`ingest`].
pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus, CorpusError> {
    let read = |name: &str| -> Result<String, CorpusError> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(io_err(&p))
    };
    let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)?;
    let vocab = Vocabulary::from_text(&read("vocab.txt")?)?;
    let n = manifest.window_measures;
    if n == 0 {
        return Err(CorpusError::ZeroWindow);
    }
    let part = |name: &str| -> Result<Vec<IdWindow>, CorpusError> {
        let measures = parse_token_text(&read(name)?)?;
        if measures.len() % n != 0 {
            return Err(CorpusError::Malformed(format!("{name} holds {} measures, not a multiple of {n}", measures.len())));
        }
        let windows: Vec<Vec<Vec<String>>> = measures.chunks(n).map(<[Vec<String>]>::to_vec).collect();
        Ok(windows_to_ids(&vocab, &windows)?)
    };
    Ok(LoadedCorpus {
        train: part("train.tok")?,
        valid: part("valid.tok")?,
        test: part("test.tok")?,
        vocab,
        manifest,
    })
}
