//! Python module `latent_inpaint`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use inpaint_core::checkpoint::CheckpointError;
use inpaint_core::codec::{self, TickGrid, TOKENS_PER_MEASURE};
use inpaint_core::corpus::{self, IngestOptions};
use inpaint_core::latent::{self, SplitBounds};
use inpaint_core::nn::RngStream;
use inpaint_core::service::{self, InpaintRequest, LoadedModel, MaskRange, MaskSpec};
use inpaint_core::vae::{Decoding, ZMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn z_mode(s: &str) -> PyResult<ZMode> {
    match s {
        "mean" => Ok(ZMode::Mean),
        "sample" => Ok(ZMode::Sample),
        _ => Err(PyValueError::new_err(format!("z_mode must be 'mean' or 'sample', got {s:?}"))),
    }
}

fn decoding(s: &str) -> PyResult<Decoding> {
    match s {
        "argmax" => Ok(Decoding::Argmax),
        "sample" => Ok(Decoding::Sample),
        _ => Err(PyValueError::new_err(format!("decoding must be 'argmax' or 'sample', got {s:?}"))),
    }
}

/// Token-string vocabulary with `__` and `rest` at indices 0 and 1.
#[pyclass(name = "Vocabulary", module = "latent_inpaint", skip_from_py_object)]
#[derive(Clone)]
struct PyVocabulary {
    inner: codec::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    fn new(tokens: Vec<String>) -> Self {
        Self {
            inner: codec::Vocabulary::build(tokens.iter()),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn encode(&self, tokens: Vec<String>) -> PyResult<Vec<usize>> {
        self.inner.encode(&tokens).map_err(value_err)
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<Vec<String>> {
        self.inner.decode(&ids).map_err(value_err)
    }
}

/// A trained InpaintNet loaded from a checkpoint (its VAE is found via the
/// reference stored in the file).
#[pyclass(name = "Model", module = "latent_inpaint", unsendable)]
struct PyModel {
    inner: LoadedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        LoadedModel::from_checkpoint(&path)
            .map(|inner| Self { inner })
            .map_err(|e| match e {
                CheckpointError::Io { .. } => PyIOError::new_err(e.to_string()),
                _ => value_err(e),
            })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.info.vocab_size
    }

    #[getter]
    fn sha256(&self) -> String {
        self.inner.info.inpaint_sha256.clone()
    }

    #[getter]
    fn vae_sha256(&self) -> String {
        self.inner.info.vae_sha256.clone()
    }

    fn vocabulary(&self) -> PyVocabulary {
        PyVocabulary {
            inner: self.inner.vocab.clone(),
        }
    }

    /// Model metadata as a JSON string.
    fn info_json(&self) -> String {
        serde_json::to_string(&self.inner.info).expect("model info serializes")
    }

    /// Fill `count` measures starting at `start`; returns one full score per
    /// sample.
    #[pyo3(signature = (measures, start, count, num_samples=1, seed=None, z_mode="sample", decoding="sample"))]
    #[allow(clippy::too_many_arguments)]
    fn inpaint(
        &self,
        measures: Vec<Vec<String>>,
        start: usize,
        count: usize,
        num_samples: usize,
        seed: Option<u64>,
        z_mode: &str,
        decoding: &str,
    ) -> PyResult<Vec<Vec<Vec<String>>>> {
        let req = InpaintRequest {
            measures,
            mask: MaskSpec::Range(MaskRange {
                start_measure: start,
                count,
            }),
            num_samples,
            seed,
            z_mode: Some(self::z_mode(z_mode)?),
            decoding: Some(self::decoding(decoding)?),
        };
        let resp = service::run_inpaint(&self.inner, &req)
            .map_err(|e| PyValueError::new_err(format!("{}: {}", e.code, e.message)))?;
        Ok(resp.samples.into_iter().map(|s| s.measures).collect())
    }
}

/// Encode the first accepted tune of an ABC text as 24-token measures.
#[pyfunction]
fn encode_abc(text: &str) -> PyResult<Vec<Vec<String>>> {
    let grid = TickGrid::standard();
    let tune = inpaint_core::abc::parse_abc(text).map_err(value_err)?;
    if let inpaint_core::abc::FilterVerdict::Reject(r) = inpaint_core::abc::filter_melody(&tune, &grid) {
        return Err(PyValueError::new_err(format!("tune rejected: {r:?}")));
    }
    let tokens = codec::encode_score(&tune.measures, &grid).map_err(value_err)?;
    Ok(tokens.chunks(TOKENS_PER_MEASURE).map(<[String]>::to_vec).collect())
}

/// Check that measures decode to note events; returns the event count.
#[pyfunction]
fn validate_measures(measures: Vec<Vec<String>>) -> PyResult<usize> {
    let flat: Vec<String> = measures.into_iter().flatten().collect();
    let score = codec::decode_score(&flat, &TickGrid::standard()).map_err(value_err)?;
    Ok(score.iter().map(Vec::len).sum())
}

/// Draw a training split `(n_p, n_i, n_f)` of a `total`-measure window.
#[pyfunction]
#[pyo3(signature = (total, seed, min_inpaint=2, max_inpaint=6))]
fn stochastic_split(total: usize, seed: u64, min_inpaint: usize, max_inpaint: usize) -> PyResult<(usize, usize, usize)> {
    let bounds = SplitBounds {
        min_inpaint,
        max_inpaint,
    };
    let s = latent::stochastic_split(total, &bounds, &mut RngStream::new(seed)).map_err(value_err)?;
    Ok((s.n_p, s.n_i, s.n_f))
}

/// Ingest an ABC directory; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (input, output, window=16, stride=16, seed=0))]
fn ingest(input: PathBuf, output: PathBuf, window: usize, stride: usize, seed: u64) -> PyResult<String> {
    let opts = IngestOptions {
        window_measures: window,
        stride,
        seed,
        ..IngestOptions::default()
    };
    let m = corpus::ingest(&input, &output, opts).map_err(|e| PyIOError::new_err(e.to_string()))?;
    serde_json::to_string(&m).map_err(value_err)
}

#[pymodule]
fn latent_inpaint(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TOKENS_PER_MEASURE", TOKENS_PER_MEASURE)?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(encode_abc, m)?)?;
    m.add_function(wrap_pyfunction!(validate_measures, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_split, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    Ok(())
}
