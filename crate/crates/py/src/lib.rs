//! Python bindings. Parameter vectors cross the boundary as `list[float]`,
//! images as flat row-major `list[float]`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use fedbackdoor::attack::{self, Glyph, TriggerSpec};
use fedbackdoor::client::RoundUpdate;
use fedbackdoor::data::{self, PartitionPlan};
use fedbackdoor::harness::{self, AggregatorKind, Overrides};
use fedbackdoor::nn::{self, Batch, DistNorm, LossSpec, Matrix, ParamVector};
use fedbackdoor::server::{self, GlobalModel};

fn to_py(e: fedbackdoor::Error) -> PyErr {
    match e {
        fedbackdoor::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn params(v: Vec<f64>) -> PyResult<ParamVector> {
    ParamVector::new(v).map_err(to_py)
}

#[pyclass(name = "ModelSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyModelSpec(nn::ModelSpec);

#[pymethods]
impl PyModelSpec {
    #[new]
    fn new(layer_sizes: Vec<usize>) -> PyResult<Self> {
        nn::ModelSpec::new(layer_sizes).map(PyModelSpec).map_err(to_py)
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.0.layer_sizes().to_vec()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec({:?})", self.0.layer_sizes())
    }
}

#[pyclass(name = "Dataset", frozen, from_py_object)]
#[derive(Clone)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (height, width, pixels, labels, num_classes, name = "dataset".to_string()))]
    fn new(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: String,
    ) -> PyResult<Self> {
        data::Dataset::from_parts(height, width, pixels, labels, num_classes, name)
            .map(PyDataset)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<Self> {
        data::load_idx(images, labels).map(PyDataset).map_err(to_py)
    }

    #[staticmethod]
    fn from_idx_bytes(images: &[u8], labels: &[u8]) -> PyResult<Self> {
        data::parse_idx(images, labels).map(PyDataset).map_err(to_py)
    }

    /// `(images, labels)` IDX byte strings.
    fn to_idx_bytes(&self) -> PyResult<(Vec<u8>, Vec<u8>)> {
        data::encode_idx(&self.0).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    fn image(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.0.image(i).to_vec())
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(bad) = indices.iter().find(|&&i| i >= self.0.len()) {
            return Err(PyValueError::new_err(format!("index {bad} out of range")));
        }
        Ok(PyDataset(self.0.subset(&indices)))
    }
}

#[pyclass(name = "Trigger", frozen, from_py_object)]
#[derive(Clone)]
struct PyTrigger(TriggerSpec);

#[pymethods]
impl PyTrigger {
    #[new]
    #[pyo3(signature = (glyph, row, col, target_label, intensity = 1.0, name = None))]
    fn new(
        glyph: &str,
        row: usize,
        col: usize,
        target_label: usize,
        intensity: f64,
        name: Option<String>,
    ) -> PyResult<Self> {
        let g = Glyph::builtin(glyph, intensity).map_err(to_py)?;
        let name = name.unwrap_or_else(|| g.name().to_string());
        Ok(PyTrigger(TriggerSpec::new(name, g, (row, col), target_label)))
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn target_label(&self) -> usize {
        self.0.target_label
    }

    #[getter]
    fn position(&self) -> (usize, usize) {
        self.0.position
    }
}

#[pyclass(name = "ExperimentConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyConfig(harness::ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        harness::parse_config(text.as_bytes()).map(PyConfig).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[pyo3(signature = (seed = None, aggregator = None, fixed_p = None))]
    fn with_overrides(&self, seed: Option<u64>, aggregator: Option<&str>, fixed_p: Option<f64>) -> PyResult<Self> {
        let aggregator = aggregator
            .map(|s| s.parse::<AggregatorKind>())
            .transpose()
            .map_err(PyValueError::new_err)?;
        self.0
            .clone()
            .with_overrides(Overrides {
                seed,
                aggregator,
                fixed_p,
            })
            .map(PyConfig)
            .map_err(to_py)
    }

    #[getter]
    fn rounds(&self) -> u32 {
        self.0.rounds
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
}

type Row = (u32, f64, Vec<(String, f64)>, f64);

#[pyclass(name = "Outcome", frozen)]
struct PyOutcome {
    inner: harness::ExperimentOutcome,
    threshold: f64,
}

#[pymethods]
impl PyOutcome {
    /// `(round, main_acc, {trigger: backdoor_acc}, mean_loss)` per round.
    #[getter]
    fn rows(&self) -> Vec<Row> {
        self.inner
            .rows
            .iter()
            .map(|r| (r.round, r.main_accuracy, r.backdoor_accuracy.clone(), r.mean_loss))
            .collect()
    }

    #[getter]
    fn final_params(&self) -> Vec<f64> {
        self.inner.final_model.params.as_slice().to_vec()
    }

    #[getter]
    fn shard_sizes(&self) -> Vec<usize> {
        self.inner.shard_sizes.clone()
    }

    fn metrics_csv(&self) -> String {
        harness::metrics_csv(&self.inner.rows)
    }

    fn summary_json(&self) -> String {
        let opts = self.inner.summary_options(self.threshold);
        harness::summary_json(&self.inner.rows, &opts).to_string()
    }

    /// Writes `metrics.csv` and `summary.json`; returns their paths.
    fn write(&self, out_dir: PathBuf) -> PyResult<(PathBuf, PathBuf)> {
        let opts = self.inner.summary_options(self.threshold);
        let files = harness::write_metrics(&self.inner.rows, &out_dir, &opts).map_err(to_py)?;
        Ok((files.csv, files.summary))
    }
}

#[pyfunction]
fn init_params(spec: &PyModelSpec, seed: u64) -> Vec<f64> {
    nn::init_params(&spec.0, seed).into_vec()
}

#[pyfunction]
fn forward(params: Vec<f64>, spec: &PyModelSpec, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let m = matrix(inputs, spec.0.input_dim())?;
    let out = nn::forward(&self::params(params)?, &spec.0, &m).map_err(to_py)?;
    Ok((0..out.rows()).map(|i| out.row(i).to_vec()).collect())
}

fn matrix(rows: Vec<Vec<f64>>, dim: usize) -> PyResult<Matrix> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(PyValueError::new_err(format!(
            "expected rows of length {dim}, got {}",
            r.len()
        )));
    }
    let n = rows.len();
    Matrix::new(n, dim, rows.into_iter().flatten().collect()).map_err(to_py)
}

#[pyfunction]
fn evaluate_accuracy(params: Vec<f64>, spec: &PyModelSpec, dataset: &PyDataset) -> PyResult<f64> {
    nn::evaluate_accuracy(&self::params(params)?, &spec.0, &dataset.0).map_err(to_py)
}

/// `loss` is `"class"`, `"dist"` or `"combined"` (which needs `p`).
#[pyfunction]
#[pyo3(signature = (params, spec, inputs, labels, loss = "class", p = None, reference = None, dist_norm = "mean"))]
#[allow(clippy::too_many_arguments)]
fn loss_and_grad(
    params: Vec<f64>,
    spec: &PyModelSpec,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    loss: &str,
    p: Option<f64>,
    reference: Option<Vec<f64>>,
    dist_norm: &str,
) -> PyResult<(f64, Vec<f64>)> {
    let loss = match (loss, p) {
        ("class", None) => LossSpec::Class,
        ("dist", None) => LossSpec::Dist,
        ("combined", Some(p)) => LossSpec::Combined { p },
        (other, _) => {
            return Err(PyValueError::new_err(format!(
                "bad loss `{other}` (combined takes p, class and dist do not)"
            )))
        }
    };
    let norm = match dist_norm {
        "mean" => DistNorm::Mean,
        "sum" => DistNorm::Sum,
        other => return Err(PyValueError::new_err(format!("bad dist_norm `{other}`"))),
    };
    let batch = Batch::new(matrix(inputs, spec.0.input_dim())?, labels).map_err(to_py)?;
    let reference = reference.map(self::params).transpose()?;
    let (value, grad) = nn::loss_and_grad_with(&self::params(params)?, &spec.0, &batch, loss, reference.as_ref(), norm)
        .map_err(to_py)?;
    Ok((value, grad.into_vec()))
}

#[pyfunction]
fn param_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    nn::param_distance(&params(a)?, &params(b)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n, side = 12, classes = 10, seed = 0))]
fn synth_digits(n: usize, side: usize, classes: usize, seed: u64) -> PyResult<PyDataset> {
    data::synth_digits(n, side, classes, seed).map(PyDataset).map_err(to_py)
}

#[pyfunction]
fn dirichlet_partition(dataset: &PyDataset, n_clients: usize, alpha: f64, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    let plan = PartitionPlan::new(n_clients, alpha, seed).map_err(to_py)?;
    data::dirichlet_partition_indices(&dataset.0, &plan).map_err(to_py)
}

#[pyfunction]
fn glyph_names() -> Vec<&'static str> {
    attack::BUILTIN_GLYPHS.to_vec()
}

#[pyfunction]
fn apply_trigger(image: Vec<f64>, height: usize, width: usize, trigger: &PyTrigger) -> PyResult<Vec<f64>> {
    attack::apply_trigger(&image, height, width, &trigger.0).map_err(to_py)
}

/// `(clean_indices, poisoned_indices)` of the split.
#[pyfunction]
fn poison_split(
    shard: &PyDataset,
    trigger: &PyTrigger,
    fraction: f64,
    seed: u64,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let pair = attack::poison_shard(&shard.0, &trigger.0, fraction, seed).map_err(to_py)?;
    Ok((pair.clean_indices, pair.poisoned_indices))
}

#[pyfunction]
fn backdoor_accuracy(params: Vec<f64>, spec: &PyModelSpec, test: &PyDataset, trigger: &PyTrigger) -> PyResult<f64> {
    harness::backdoor_accuracy(&self::params(params)?, &spec.0, &test.0, &trigger.0).map_err(to_py)
}

fn updates(raw: Vec<(usize, f64, Vec<f64>)>) -> PyResult<Vec<RoundUpdate>> {
    raw.into_iter()
        .map(|(client_id, lambda, delta)| {
            Ok(RoundUpdate {
                client_id,
                lambda,
                delta: params(delta)?,
                mean_loss: 0.0,
            })
        })
        .collect()
}

/// Updates are `(client_id, lambda, delta)` triples.
#[pyfunction]
fn aggregate_meta(global_params: Vec<f64>, updates: Vec<(usize, f64, Vec<f64>)>) -> PyResult<Vec<f64>> {
    let g = GlobalModel::new(params(global_params)?);
    let out = server::aggregate_meta(&g, &self::updates(updates)?).map_err(to_py)?;
    Ok(out.params.into_vec())
}

#[pyfunction]
#[pyo3(signature = (global_params, updates, eta = 1.0))]
fn aggregate_fedavg(global_params: Vec<f64>, updates: Vec<(usize, f64, Vec<f64>)>, eta: f64) -> PyResult<Vec<f64>> {
    let g = GlobalModel::new(params(global_params)?);
    let out = server::aggregate_fedavg(&g, &self::updates(updates)?, eta).map_err(to_py)?;
    Ok(out.params.into_vec())
}

#[pyfunction]
fn sample_clients(ids: Vec<usize>, m: usize, seed: u64, round: u32) -> PyResult<Vec<usize>> {
    server::sample_clients(&ids, m, seed, round).map_err(to_py)
}

#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<PyOutcome> {
    let cfg = config.0.clone();
    let inner = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    Ok(PyOutcome {
        inner,
        threshold: cfg.backdoor_threshold,
    })
}

/// Federated backdoor attack simulator.
#[pymodule]
mod pyfedbackdoor {
    #[pymodule_export]
    use super::{
        aggregate_fedavg, aggregate_meta, apply_trigger, backdoor_accuracy, dirichlet_partition, evaluate_accuracy,
        forward, glyph_names, init_params, loss_and_grad, param_distance, poison_split, run_experiment, sample_clients,
        synth_digits, PyConfig, PyDataset, PyModelSpec, PyOutcome, PyTrigger,
    };
}
