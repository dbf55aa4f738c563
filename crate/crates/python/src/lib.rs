//! Python bindings. Structured values cross the boundary as JSON text.

use std::path::PathBuf;
use std::sync::Arc;

use betaforge_core::analysis::{self, CovertParams};
use betaforge_core::backend::{ChannelManifest, SimBackend};
use betaforge_core::catalog::{self, InitPolicy};
use betaforge_core::pipeline::{self, CampaignConfig, CampaignReport};
use betaforge_core::rng::{self as brng, Stream};
use betaforge_core::{fixtures, seed, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;

fn err(e: Error) -> PyErr {
    match e {
        Error::Schema { .. } | Error::Json { .. } | Error::Config(_) | Error::Argument(_) | Error::SlotRange(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A bit-string seed, six bits per slot.
#[pyclass(name = "Seed", frozen, eq, ord, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct PySeed(seed::Seed);

#[pymethods]
impl PySeed {
    #[new]
    fn new(codes: Vec<u8>) -> PyResult<Self> {
        seed::Seed::from_codes(codes).map(PySeed).map_err(err)
    }

    /// Encodes a tuple of class indices.
    #[staticmethod]
    fn encode(classes: Vec<usize>) -> PyResult<Self> {
        seed::encode(&seed::ClassTuple(classes)).map(PySeed).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(PySeed).map_err(err)
    }

    fn decode(&self, class_count: usize) -> PyResult<Vec<usize>> {
        if class_count == 0 {
            return Err(PyValueError::new_err("class_count must be positive"));
        }
        Ok(seed::decode(&self.0, class_count).0)
    }

    #[getter]
    fn codes(&self) -> Vec<u8> {
        self.0.codes().to_vec()
    }

    #[getter]
    fn bit_len(&self) -> usize {
        self.0.bit_len()
    }

    fn bit_string(&self) -> String {
        self.0.bit_string()
    }

    fn hamming(&self, other: &PySeed) -> Option<u32> {
        self.0.hamming(&other.0)
    }

    /// Seeds at Hamming distance `k`, at most `budget` of them.
    #[pyo3(signature = (k, budget = 4096, rng_seed = 0))]
    fn neighbors(&self, k: usize, budget: usize, rng_seed: u64) -> PyResult<Vec<PySeed>> {
        if !(1..=self.0.bit_len()).contains(&k) {
            return Err(PyValueError::new_err(format!("k must lie in 1..={}", self.0.bit_len())));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        Ok(seed::hamming_neighbors(&self.0, k, budget, &mut rng)
            .into_iter()
            .map(PySeed)
            .collect())
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Seed('{}')", self.0)
    }
}

#[pyfunction]
fn binomial(n: usize, k: usize) -> u128 {
    seed::binomial(n, k)
}

#[pyclass(name = "Catalog", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCatalog(catalog::Catalog);

#[pymethods]
impl PyCatalog {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        catalog::load_catalog(path).map(PyCatalog).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        catalog::Catalog::from_json_str(text, "python")
            .map(PyCatalog)
            .map_err(err)
    }

    #[staticmethod]
    fn standard() -> Self {
        PyCatalog(fixtures::standard_catalog())
    }

    #[staticmethod]
    fn micro() -> Self {
        PyCatalog(fixtures::micro())
    }

    /// Sanitized and grouped into classes.
    fn classified(&self) -> Self {
        PyCatalog(catalog::classify(&catalog::sanitize(&self.0)))
    }

    /// Drops specs that fault on `backend`, then classifies.
    fn cleaned(&self, backend: &PyBackend) -> PyResult<Self> {
        let raw = catalog::sanitize(&self.0);
        let c = catalog::clean_pass(&raw, &backend.0, &InitPolicy::uniform(&raw, 1, 1)).map_err(err)?;
        Ok(PyCatalog(catalog::classify(&c.catalog)))
    }

    fn class_names(&self) -> Vec<String> {
        self.0.classes().iter().map(|c| c.isa_set.clone()).collect()
    }

    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().map(str::to_string).collect()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// The simulated microarchitecture.
#[pyclass(name = "SimBackend", frozen)]
struct PyBackend(SimBackend);

#[pymethods]
impl PyBackend {
    /// `manifest` is JSON text.
    #[new]
    fn new(catalog: &PyCatalog, manifest: &str) -> PyResult<Self> {
        let m: ChannelManifest = serde_json::from_str(manifest).map_err(json_err)?;
        SimBackend::new(Arc::new(catalog::sanitize(&catalog.0)), m)
            .map(PyBackend)
            .map_err(err)
    }

    #[staticmethod]
    fn load_manifest(catalog: &PyCatalog, path: PathBuf) -> PyResult<Self> {
        let m = ChannelManifest::load(path).map_err(err)?;
        SimBackend::new(Arc::new(catalog::sanitize(&catalog.0)), m)
            .map(PyBackend)
            .map_err(err)
    }

    fn manifest_json(&self) -> String {
        self.0.manifest().to_json()
    }
}

/// Campaign settings as JSON text; defaults when omitted.
fn config(text: Option<&str>) -> PyResult<CampaignConfig> {
    let cfg: CampaignConfig = match text {
        Some(t) => serde_json::from_str(t).map_err(json_err)?,
        None => CampaignConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&CampaignConfig::default()).expect("config serializes")
}

#[pyfunction]
fn standard_config() -> String {
    serde_json::to_string_pretty(&fixtures::standard_config()).expect("config serializes")
}

#[pyfunction]
fn standard_manifest() -> String {
    fixtures::standard_manifest().to_json()
}

#[pyfunction]
fn micro_manifest() -> String {
    fixtures::micro_manifest().to_json()
}

#[pyclass(name = "Report", frozen)]
struct PyReport(CampaignReport);

#[pymethods]
impl PyReport {
    /// ISA-set names of each finding, in discovery order.
    fn finding_classes(&self) -> Vec<Vec<String>> {
        self.0.findings.iter().map(|f| f.candidate.classes.clone()).collect()
    }

    fn finding_diffs(&self) -> Vec<f64> {
        self.0.findings.iter().map(|f| f.confirm_diff).collect()
    }

    #[getter]
    fn backend_invocations(&self) -> u64 {
        self.0.backend_invocations
    }

    #[getter]
    fn stop_reason(&self) -> String {
        serde_json::to_value(self.0.stop_reason)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    #[getter]
    fn tuples_tested(&self) -> u64 {
        self.0.tuples_tested
    }

    fn findings_json(&self) -> String {
        self.0.findings_json()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    /// Verifies every cluster representative; returns JSON.
    #[pyo3(signature = (catalog, backend, config = None, rng_seed = 0))]
    fn verify(
        &self,
        py: Python<'_>,
        catalog: &PyCatalog,
        backend: &PyBackend,
        config: Option<&str>,
        rng_seed: u64,
    ) -> PyResult<String> {
        let cfg = self::config(config)?;
        let v = py
            .detach(|| {
                let mut rng = brng::stream(rng_seed, Stream::Covert);
                analysis::verify_all(
                    &self.0.findings,
                    &catalog.0,
                    &backend.0,
                    &cfg,
                    &CovertParams::default(),
                    &mut rng,
                )
            })
            .map_err(err)?;
        serde_json::to_string_pretty(&v).map_err(json_err)
    }

    /// Writes the report files into `out_dir`; `verification` is the JSON
    /// returned by [`verify`].
    #[pyo3(signature = (out_dir, verification = None))]
    fn render(&self, out_dir: PathBuf, verification: Option<&str>) -> PyResult<Vec<PathBuf>> {
        let v: Vec<analysis::Verification> = match verification {
            Some(t) => serde_json::from_str(t).map_err(json_err)?,
            None => Vec::new(),
        };
        analysis::render_report(&self.0, &v, None, &out_dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.findings.len()
    }
}

/// Runs one campaign. `catalog` must be classified.
#[pyfunction]
#[pyo3(signature = (catalog, backend, config = None))]
fn run_campaign(py: Python<'_>, catalog: &PyCatalog, backend: &PyBackend, config: Option<&str>) -> PyResult<PyReport> {
    if !catalog.0.is_classified() {
        return Err(PyValueError::new_err(
            "catalog is not classified; call classified() or cleaned()",
        ));
    }
    let cfg = self::config(config)?;
    py.detach(|| pipeline::run_campaign(&catalog.0, &backend.0, &cfg))
        .map(PyReport)
        .map_err(err)
}

#[pymodule]
fn betaforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeed>()?;
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyBackend>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(binomial, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(standard_config, m)?)?;
    m.add_function(wrap_pyfunction!(standard_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(micro_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    Ok(())
}
