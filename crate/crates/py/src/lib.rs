//! Python bindings: configs, episode generation, training, sampling and metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use wam_core::backbone::{build_group_mask, QueryLayout};
use wam_core::flowmatch::SamplerConfig;
use wam_core::metrics::{self, evaluate_split, EvalOptions, PdmsWeights, PlanSubscores, Which};
use wam_core::microworld::{build_dataset, read_episodes, write_episodes, EpisodeRecord, Split};
use wam_core::trainer::{read_checkpoint, Checkpoint, LossReport, Trainer as CoreTrainer};
use wam_core::{Error, Heads, RunConfig, WorldActionModel};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Numeric { .. } | Error::Numerics(_)) => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for wam_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn io<T>(r: std::io::Result<T>) -> PyResult<T> {
    r.map_err(|e| PyIOError::new_err(e.to_string()))
}

fn parse_heads(s: &str) -> PyResult<Heads> {
    s.parse::<Heads>().py()
}

/// Run configuration (world, model, training, sampler, metrics).
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Built-in defaults.
    #[new]
    fn new() -> Self {
        Self { inner: RunConfig::default() }
    }

    /// Small preset for a single CPU core.
    #[staticmethod]
    fn desk() -> Self {
        Self { inner: RunConfig::desk() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_toml_str(text).py()? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Applies a dotted assignment such as `"train.lr=0.001"`.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        self.inner.set(assignment).py()
    }

    fn __repr__(&self) -> String {
        format!("Config(steps={}, batch={}, d_model={})", self.inner.train.steps, self.inner.train.batch, self.inner.model.d_model)
    }
}

/// A list of generated episodes.
#[pyclass(name = "Episodes")]
struct PyEpisodes {
    records: Vec<EpisodeRecord>,
    dt: f32,
}

#[pymethods]
impl PyEpisodes {
    /// Generates `n` episodes of `split` ("train" or "test").
    #[staticmethod]
    #[pyo3(signature = (config, n, split = "train", seed = 0))]
    fn generate(config: &PyConfig, n: usize, split: &str, seed: u64) -> PyResult<Self> {
        let split: Split = split.parse().py()?;
        let ds = build_dataset(&config.inner.world, n, seed, split).py()?;
        Ok(Self { records: ds.records, dt: config.inner.world.dt })
    }

    #[staticmethod]
    fn load(path: &str, config: &PyConfig) -> PyResult<Self> {
        let f = io(File::open(path))?;
        let records = read_episodes(BufReader::new(f), config.inner.world.dt).py()?;
        Ok(Self { records, dt: config.inner.world.dt })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = io(File::create(path))?;
        write_episodes(BufWriter::new(f), &self.records).py()
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn scenario(&self, i: usize) -> PyResult<&'static str> {
        Ok(self.get(i)?.scene.scenario.name())
    }

    /// Expert trajectory as `(x, y, cos, sin)` states in the ego frame.
    fn expert(&self, i: usize) -> PyResult<Vec<(f32, f32, f32, f32)>> {
        Ok(states(&self.get(i)?.expert))
    }

    /// Ground-truth front depth map as rows of meters.
    fn depth(&self, i: usize) -> PyResult<Vec<Vec<f32>>> {
        let d = self.get(i)?.depth_map(0);
        Ok(d.data.chunks(d.w).map(<[f32]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!("Episodes(n={}, dt={})", self.records.len(), self.dt)
    }
}

impl PyEpisodes {
    fn get(&self, i: usize) -> PyResult<&EpisodeRecord> {
        self.records.get(i).ok_or_else(|| PyIndexError::new_err(format!("episode {i} out of range")))
    }
}

fn states(t: &wam_core::experts::Trajectory) -> Vec<(f32, f32, f32, f32)> {
    t.states.iter().map(|s| (s.x, s.y, s.cos, s.sin)).collect()
}

/// A trained (or freshly initialized) world-action model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: WorldActionModel,
    config: RunConfig,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model for `config`.
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(Self { inner: WorldActionModel::from_config(&config.inner).py()?, config: config.inner.clone() })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = load_checkpoint(path)?;
        Ok(Self { inner: ck.model, config: ck.config })
    }

    #[getter]
    fn heads(&self) -> String {
        self.inner.heads.to_string()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Samples a trajectory for episode `i`.
    #[pyo3(signature = (episodes, i, steps = None, seed = 0))]
    fn plan(&self, episodes: &PyEpisodes, i: usize, steps: Option<usize>, seed: u64) -> PyResult<Vec<(f32, f32, f32, f32)>> {
        let cfg = self.sampler(steps.unwrap_or(self.config.sampler.action_steps), seed);
        Ok(states(&self.inner.plan(episodes.get(i)?, cfg).py()?))
    }

    /// Samples a metric depth map for episode `i`, as rows.
    #[pyo3(signature = (episodes, i, steps = None, seed = 0))]
    fn predict_depth(&self, episodes: &PyEpisodes, i: usize, steps: Option<usize>, seed: u64) -> PyResult<Vec<Vec<f32>>> {
        let cfg = self.sampler(steps.unwrap_or(self.config.sampler.depth_steps), seed);
        let d = self.inner.predict_depth(episodes.get(i)?, cfg).py()?;
        Ok(d.data.chunks(d.w).map(<[f32]>::to_vec).collect())
    }

    /// Samples future frames; returns `(frames, h, w, rgb values)`.
    #[pyo3(signature = (episodes, i, steps = None, seed = 0))]
    fn predict_video(
        &self,
        episodes: &PyEpisodes,
        i: usize,
        steps: Option<usize>,
        seed: u64,
    ) -> PyResult<(usize, usize, usize, Vec<f32>)> {
        let cfg = self.sampler(steps.unwrap_or(self.config.sampler.video_steps), seed);
        let v = self.inner.predict_video(episodes.get(i)?, cfg).py()?;
        Ok((v.frames, v.h, v.w, v.data))
    }

    /// Denoiser evaluation counts `{"depth", "video", "action"}`.
    fn counters(&self) -> BTreeMap<&'static str, u64> {
        let c = self.inner.counters();
        BTreeMap::from([("depth", c.depth), ("video", c.video), ("action", c.action)])
    }

    /// Held-out metrics; `which` is a comma list of `plan`, `depth`, `video`
    /// (default: every trained expert).
    #[pyo3(signature = (episodes, which = None))]
    fn evaluate(&self, episodes: &PyEpisodes, which: Option<&str>) -> PyResult<BTreeMap<String, f64>> {
        let h = self.inner.heads;
        let w = match which {
            None => Which { plan: h.action, depth: h.depth, video: h.video },
            Some(s) => {
                let mut w = Which { plan: false, depth: false, video: false };
                for part in s.split(',').map(str::trim) {
                    match part {
                        "plan" => w.plan = true,
                        "depth" => w.depth = true,
                        "video" => w.video = true,
                        other => return Err(PyValueError::new_err(format!("unknown evaluation `{other}`"))),
                    }
                }
                w
            }
        };
        let r = evaluate_split(&self.inner, &episodes.records, &EvalOptions::from_config(&self.config, w)).py()?;
        Ok(r.entries.clone())
    }
}

impl PyModel {
    fn sampler(&self, steps: usize, seed: u64) -> SamplerConfig {
        SamplerConfig { steps, method: self.config.sampler.method, seed }
    }
}

fn load_checkpoint(path: &str) -> PyResult<Checkpoint> {
    let f = io(File::open(path))?;
    read_checkpoint(BufReader::new(f)).py()
}

fn loss_dict(r: &LossReport) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("step", r.step as f64),
        ("depth", r.l_d as f64),
        ("video", r.l_v as f64),
        ("action", r.l_a as f64),
        ("total", r.l_total as f64),
    ])
}

/// Owns its training episodes; optimizer state persists across calls.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    state: Option<Checkpoint>,
    data: Vec<EpisodeRecord>,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, episodes, heads = None))]
    fn new(config: &PyConfig, episodes: &PyEpisodes, heads: Option<&str>) -> PyResult<Self> {
        let mut cfg = config.inner.clone();
        if let Some(h) = heads {
            cfg.train.heads = parse_heads(h)?;
        }
        let data = episodes.records.clone();
        let state = CoreTrainer::new(&cfg, &data).py()?.into_checkpoint();
        Ok(Self { state: Some(state), data })
    }

    #[staticmethod]
    fn resume(path: &str, episodes: &PyEpisodes) -> PyResult<Self> {
        Ok(Self { state: Some(load_checkpoint(path)?), data: episodes.records.clone() })
    }

    #[getter]
    fn step(&self) -> usize {
        self.state.as_ref().map_or(0, |c| c.step)
    }

    /// Runs `steps` optimizer updates and returns their losses.
    fn train(&mut self, steps: usize) -> PyResult<Vec<BTreeMap<&'static str, f64>>> {
        let ck = self.state.take().ok_or_else(|| PyValueError::new_err("trainer is in a failed state"))?;
        let mut tr = CoreTrainer::resume(ck, &self.data).py()?;
        let mut out = Vec::with_capacity(steps);
        let mut err = None;
        for _ in 0..steps {
            match tr.step() {
                Ok(r) => out.push(loss_dict(&r)),
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        self.state = Some(tr.into_checkpoint());
        match err {
            Some(e) => Err(py_err(e)),
            None => Ok(out),
        }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ck = self.state.as_ref().ok_or_else(|| PyValueError::new_err("trainer is in a failed state"))?;
        let f = io(File::create(path))?;
        wam_core::trainer::write_checkpoint_parts(BufWriter::new(f), &ck.config, &ck.model, &ck.opt, ck.step).py()
    }

    /// Snapshot of the current weights.
    fn model(&self, py: Python<'_>) -> PyResult<Py<PyModel>> {
        let ck = self.state.as_ref().ok_or_else(|| PyValueError::new_err("trainer is in a failed state"))?;
        let mut buf = Vec::new();
        wam_core::trainer::write_checkpoint_parts(&mut buf, &ck.config, &ck.model, &ck.opt, ck.step).py()?;
        let copy = read_checkpoint(&buf[..]).py()?;
        Py::new(py, PyModel { inner: copy.model, config: copy.config })
    }
}

/// Group attention mask as rows of booleans (inputs, depth, video, action queries).
#[pyfunction]
fn group_mask(n_input: usize, n_depth: usize, n_video: usize, n_action: usize) -> PyResult<Vec<Vec<bool>>> {
    let l = QueryLayout::new(n_input, n_depth, n_video, n_action, 1).py()?;
    Ok(build_group_mask(&l).to_rows())
}

/// Planning score from subscores; weights default to (5, 5, 2) for (ttc, ep, comfort).
#[pyfunction]
#[pyo3(signature = (nc, dac, ttc, ep, comfort, weights = (5.0, 5.0, 2.0)))]
fn pdms(nc: f64, dac: f64, ttc: f64, ep: f64, comfort: f64, weights: (f64, f64, f64)) -> f64 {
    let w = PdmsWeights { ttc: weights.0, ep: weights.1, comfort: weights.2 };
    metrics::pdms(&PlanSubscores { nc, dac, ttc, ep, comfort }, &w).score
}

#[pyfunction]
fn psnr(pred: Vec<f32>, gt: Vec<f32>) -> PyResult<f64> {
    metrics::psnr(&pred, &gt).py()
}

#[pymodule]
fn wam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEpisodes>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(group_mask, m)?)?;
    m.add_function(wrap_pyfunction!(pdms, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    Ok(())
}
