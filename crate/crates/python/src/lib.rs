//! `hvis` Python module: load or train models, predict, score.

use std::path::PathBuf;

use hvis_core::autodiff::nn::SeedRng;
use hvis_core::autodiff::Tensor;
use hvis_core::checkpoint::CheckpointBundle;
use hvis_core::config::TrainConfig;
use hvis_core::data::{self, SkeletonSpec};
use hvis_core::pipeline::{self, HimModel};
use hvis_core::sln::SlnVariant;
use hvis_core::HvisError;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;

create_exception!(hvis, HvisException, PyException, "Error raised by the hvis core library.");

fn py_err(e: HvisError) -> PyErr {
    match e {
        HvisError::Config(_) | HvisError::Parameter(_) => PyValueError::new_err(e.to_string()),
        _ => HvisException::new_err(e.to_string()),
    }
}

type Poses = Vec<Vec<Vec<f64>>>;

fn to_tensor(poses: &Poses) -> PyResult<Tensor> {
    let t = poses.len();
    let n = poses.first().map_or(0, Vec::len);
    let mut vals = Vec::with_capacity(t * n * 3);
    for (f, frame) in poses.iter().enumerate() {
        if frame.len() != n {
            return Err(PyValueError::new_err(format!("frame {f} has {} joints, frame 0 has {n}", frame.len())));
        }
        for (j, p) in frame.iter().enumerate() {
            if p.len() != 3 {
                return Err(PyValueError::new_err(format!("frame {f} joint {j} has {} coordinates", p.len())));
            }
            vals.extend_from_slice(p);
        }
    }
    Tensor::new(&[t, n, 3], vals).map_err(py_err)
}

fn from_tensor(t: &Tensor) -> Poses {
    let n = t.shape()[1];
    t.values().chunks(n * 3).map(|f| f.chunks(3).map(<[f64]>::to_vec).collect()).collect()
}

#[pyclass(name = "Skeleton", module = "hvis", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySkeleton {
    inner: SkeletonSpec,
}

#[pymethods]
impl PySkeleton {
    /// The built-in 12-joint body.
    #[staticmethod]
    fn default() -> Self {
        PySkeleton { inner: SkeletonSpec::default_body() }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySkeleton { inner: SkeletonSpec::load(&path).map_err(py_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PySkeleton { inner: SkeletonSpec::parse(text).map_err(py_err)? })
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn parents(&self) -> Vec<Option<usize>> {
        (0..self.inner.joint_count()).map(|j| self.inner.parent(j)).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Skeleton({} joints, {} parts)", self.inner.joint_count(), self.inner.part_count())
    }
}

/// Run configuration. Keyword arguments override fields of the default.
#[pyclass(name = "Config", module = "hvis", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => TrainConfig::from_toml_str(t).map_err(py_err)?,
            None => TrainConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig { inner: TrainConfig::load(&path).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    /// Replaces fields from a TOML fragment, e.g. `"epochs_sln = 2\nseed = 4"`.
    fn update(&mut self, toml: &str) -> PyResult<()> {
        let merged = format!("{}\n{}", strip_keys(&self.inner.to_toml(), toml), toml);
        self.inner = TrainConfig::from_toml_str(&merged).map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn observed(&self) -> usize {
        self.inner.observed
    }

    #[getter]
    fn future(&self) -> usize {
        self.inner.future
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn horizons_ms(&self) -> Vec<f64> {
        self.inner.horizons_ms.clone()
    }

    fn __repr__(&self) -> String {
        format!("Config(\n{})", self.inner.to_toml())
    }
}

/// Drops lines of `base` whose key is assigned in `overrides`.
fn strip_keys(base: &str, overrides: &str) -> String {
    let key = |l: &str| l.split('=').next().map(|k| k.trim().to_string());
    let keys: Vec<String> = overrides.lines().filter(|l| l.contains('=')).filter_map(key).collect();
    base.lines().filter(|l| !key(l).is_some_and(|k| keys.contains(&k))).collect::<Vec<_>>().join("\n")
}

#[pyclass(name = "Model", module = "hvis")]
struct PyModel {
    inner: HimModel,
    fingerprint: String,
}

#[pymethods]
impl PyModel {
    /// Untrained model; predicts the last observed pose until trained.
    #[staticmethod]
    #[pyo3(signature = (config, skeleton = None))]
    fn init(config: &PyConfig, skeleton: Option<&PySkeleton>) -> PyResult<Self> {
        let skel = skeleton.map_or_else(SkeletonSpec::default_body, |s| s.inner.clone());
        let mut rng = SeedRng::seed_from_u64(config.inner.seed);
        let inner = HimModel::init(&config.inner, &skel, SlnVariant::Full, &mut rng).map_err(py_err)?;
        Ok(PyModel { inner, fingerprint: String::new() })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, fingerprint) = HimModel::from_bundle(&CheckpointBundle::load(&path).map_err(py_err)?).map_err(py_err)?;
        Ok(PyModel { inner, fingerprint })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_bundle(&self.fingerprint).and_then(|b| b.save(&path)).map_err(py_err)
    }

    /// `observed[T][N][3]` with `T >= observed` frames to `future` predicted frames.
    fn predict(&self, observed: Poses) -> PyResult<Poses> {
        let t = to_tensor(&observed)?;
        Ok(from_tensor(&self.inner.predict_sequence(&t).map_err(py_err)?))
    }

    /// Per-horizon MPJPE rows `(horizon_ms, frame, predictor, mm)` on the held-out split of the training corpus.
    #[pyo3(signature = (horizons_ms = None))]
    fn evaluate(&self, horizons_ms: Option<Vec<f64>>) -> PyResult<Vec<(f64, usize, String, f64)>> {
        let cfg = &self.inner.config;
        let corpus = pipeline::load_corpus(cfg).map_err(py_err)?;
        let split = pipeline::prepare(cfg, &corpus).map_err(py_err)?;
        let horizons = horizons_ms.unwrap_or_else(|| cfg.horizons_ms.clone());
        let rows = pipeline::evaluate(&self.inner, &split.test, &horizons).map_err(py_err)?;
        Ok(rows.into_iter().map(|r| (r.horizon_ms, r.frame, r.predictor.to_string(), r.mpjpe)).collect())
    }

    #[getter]
    fn observed(&self) -> usize {
        self.inner.config.observed
    }

    #[getter]
    fn future(&self) -> usize {
        self.inner.config.future
    }

    #[getter]
    fn skeleton(&self) -> PySkeleton {
        PySkeleton { inner: self.inner.skeleton.clone() }
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.inner.config.clone() }
    }

    /// Joints handled by the deliberate network, hardest first.
    #[getter]
    fn hard_joints(&self) -> Vec<usize> {
        self.inner.map.selected.clone()
    }

    #[getter]
    fn joint_errors(&self) -> Vec<f64> {
        self.inner.map.per_joint_error.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({} joints, O={}, F={}, hard joints {:?})",
            self.inner.joints(),
            self.inner.config.observed,
            self.inner.config.future,
            self.inner.map.selected
        )
    }
}

/// Trains both stages on the configured corpus and returns the model.
#[pyfunction]
#[pyo3(signature = (config, verbose = false))]
fn train(config: &PyConfig, verbose: bool) -> PyResult<PyModel> {
    let cfg = &config.inner;
    cfg.validate().map_err(py_err)?;
    let corpus = pipeline::load_corpus(cfg).map_err(py_err)?;
    let split = pipeline::prepare(cfg, &corpus).map_err(py_err)?;
    let out = pipeline::train_model(cfg, &corpus, &split, SlnVariant::Full, true, &mut |p| {
        if verbose {
            match p {
                pipeline::Progress::Sln(r) => eprintln!("sln epoch {} val mpjpe {:.2}", r.epoch, r.val_mpjpe),
                pipeline::Progress::Dln(r) => eprintln!("dln epoch {} selected err {:.2}", r.epoch, r.val_selected_error),
            }
        }
    })
    .map_err(py_err)?;
    Ok(PyModel { inner: out.model, fingerprint: corpus.fingerprint })
}

/// Synthetic sequences `[T][N][3]` for the built-in skeleton.
#[pyfunction]
fn synth_corpus(config: &PyConfig) -> PyResult<Vec<Poses>> {
    let skel = pipeline::load_skeleton(&config.inner).map_err(py_err)?;
    let seqs = data::synth_corpus(&skel, &pipeline::synth_config(&config.inner, &skel)).map_err(py_err)?;
    Ok(seqs.iter().map(|s| from_tensor(s.positions())).collect())
}

/// Mean per-joint position error in millimeters; `horizons` are 1-based frames.
#[pyfunction]
#[pyo3(signature = (pred, truth, horizons = None))]
fn mpjpe(pred: Poses, truth: Poses, horizons: Option<Vec<usize>>) -> PyResult<f64> {
    data::mpjpe(&to_tensor(&pred)?, &to_tensor(&truth)?, &horizons.unwrap_or_default()).map_err(py_err)
}

#[pyfunction]
fn zero_velocity(observed: Poses, future: usize) -> PyResult<Poses> {
    Ok(from_tensor(&data::zero_velocity_baseline(&to_tensor(&observed)?, future).map_err(py_err)?))
}

/// `(ranking, selected)` of joints by descending error, ties by index.
#[pyfunction]
fn rank_joints(errors: Vec<f64>, m: usize) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let map = hvis_core::dln::rank_joints(&errors, m).map_err(py_err)?;
    Ok((map.ranking, map.selected))
}

/// Runs the `hvis` command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("hvis".to_string()).chain(args);
    match hvis_core::cli::run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[pymodule]
fn hvis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HvisError", m.py().get_type::<HvisException>())?;
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(zero_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(rank_joints, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
