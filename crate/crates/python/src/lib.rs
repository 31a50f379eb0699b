//! Python bindings. Vectors and matrices cross the boundary as plain lists
//! (matrices as lists of rows); structured results come back as dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primseg::ingest::EventKind;
use primseg::primitives::{self, PrimitiveSegment};
use primseg::{EmissionParams, HyperParams, Observations, RunConfig, StateSequence};

fn err(e: primseg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn segments_for(labels: Vec<usize>, timestamps: &[f64]) -> PyResult<Vec<PrimitiveSegment>> {
    primitives::states_to_segments(&StateSequence::from_labels(labels), timestamps).map_err(err)
}

#[pyfunction]
fn stick_breaking(nu: Vec<f64>, truncation: usize) -> PyResult<(Vec<f64>, f64)> {
    primseg::model::stick_breaking(&nu, truncation).map_err(err)
}

#[pyfunction]
fn sticky_prior_vector(alpha: f64, beta: Vec<f64>, kappa: f64, i: usize) -> PyResult<Vec<f64>> {
    primseg::model::sticky_prior_vector(alpha, &beta, kappa, i).map_err(err)
}

#[pyfunction]
fn gaussian_logpdf(o: Vec<f64>, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> PyResult<f64> {
    let params = EmissionParams::new(DVector::from_vec(mu), matrix(&sigma)?).map_err(err)?;
    primseg::model::gaussian_logpdf(&DVector::from_vec(o), &params).map_err(err)
}

#[pyfunction]
fn iw_posterior(
    n0: f64,
    s0: Vec<Vec<f64>>,
    residuals: Vec<Vec<f64>>,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let res: Vec<DVector<f64>> = residuals.into_iter().map(DVector::from_vec).collect();
    let (n, s) = primseg::model::iw_posterior(n0, &matrix(&s0)?, &res).map_err(err)?;
    Ok((n, rows(&s)))
}

/// A channelized driving recording loaded from CSV.
#[pyclass(frozen)]
struct TrafficSequence {
    inner: primseg::TrafficSequence,
}

#[pymethods]
impl TrafficSequence {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.inner.num_channels()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.inner.timestamps().to_vec()
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observations().to_frames()
    }

    /// Appearance and disappearance events as dicts.
    fn step_events<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        primseg::ingest::detect_step_events(&self.inner)
            .into_iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("channel", e.channel)?;
                d.set_item("frame", e.frame)?;
                d.set_item("time_s", e.time_s)?;
                let kind = match e.kind {
                    EventKind::Appearance => "appearance",
                    EventKind::Disappearance => "disappearance",
                };
                d.set_item("kind", kind)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "TrafficSequence(frames={}, channels={}, d={})",
            self.inner.len(),
            self.inner.num_channels(),
            self.inner.dim()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (path, channels=None))]
fn load_csv(path: &str, channels: Option<usize>) -> PyResult<TrafficSequence> {
    let inner = primseg::load_csv(path, channels).map_err(err)?;
    Ok(TrafficSequence { inner })
}

/// Draw `frames` observations from the 2-D, 3-state recovery model.
/// Returns `(observations, true_labels)`.
#[pyfunction]
#[pyo3(signature = (frames, seed=0))]
fn simulate_recovery(frames: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, states) =
        primseg::simulate::sample_hmm(&primseg::simulate::recovery_fixture(), frames, &mut rng)
            .map_err(err)?;
    Ok((obs.to_frames(), states.into_inner()))
}

/// Run one sampler chain. `hyper` is an optional JSON object with
/// hyperparameter overrides, in the same shape as the CLI config file.
#[pyfunction]
#[pyo3(signature = (observations, sweeps=1000, burn_in=500, thin=5, seed=0, hyper=None))]
fn run_gibbs<'py>(
    py: Python<'py>,
    observations: Vec<Vec<f64>>,
    sweeps: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    hyper: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let obs = Observations::from_frames(&observations).map_err(err)?;
    let hyper: HyperParams = match hyper {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => HyperParams::default(),
    };
    let config = RunConfig {
        sweeps,
        burn_in,
        thin,
        seed,
    };
    let chain = py
        .detach(|| primseg::run_gibbs(&obs, &hyper, &config))
        .map_err(err)?;
    let map = chain
        .map_sample()
        .ok_or_else(|| PyValueError::new_err("no samples were retained"))?;
    let out = PyDict::new(py);
    out.set_item("loglik_trace", &chain.loglik_trace)?;
    out.set_item("map_states", map.states.labels())?;
    out.set_item("map_loglik", map.loglik)?;
    out.set_item("map_sweep", map.sweep)?;
    out.set_item("alpha", map.concentrations.alpha)?;
    out.set_item("gamma", map.concentrations.gamma)?;
    out.set_item("kappa", map.concentrations.kappa)?;
    out.set_item("retained", chain.samples.len())?;
    Ok(out)
}

/// Collapse per-frame labels into `(start_s, end_s, label)` runs.
#[pyfunction]
fn states_to_segments(
    labels: Vec<usize>,
    timestamps: Vec<f64>,
) -> PyResult<Vec<(f64, f64, usize)>> {
    Ok(segments_for(labels, &timestamps)?
        .into_iter()
        .map(|s| (s.start_s, s.end_s, s.label))
        .collect())
}

/// Primitive counts of a labelled sequence, largest set first.
#[pyfunction]
fn primitive_stats<'py>(
    py: Python<'py>,
    labels: Vec<usize>,
    timestamps: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let stats = primitives::primitive_stats(&segments_for(labels, &timestamps)?).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("sets", stats.sets)?;
    out.set_item("total", stats.total)?;
    let per: Vec<(usize, usize, usize, f64)> = stats
        .labels
        .iter()
        .map(|l| (l.id, l.label, l.count, l.pct))
        .collect();
    out.set_item("labels", per)?;
    Ok(out)
}

#[pyfunction]
fn matched_hamming_error(truth: Vec<usize>, estimate: Vec<usize>) -> PyResult<f64> {
    primitives::matched_hamming_error(&truth, &estimate).map_err(err)
}

/// Fraction of the sequence's step events that fall within `tol_s` of a segment boundary.
#[pyfunction]
#[pyo3(signature = (sequence, labels, tol_s=0.5))]
fn boundary_recall(sequence: &TrafficSequence, labels: Vec<usize>, tol_s: f64) -> PyResult<f64> {
    let segments = segments_for(labels, sequence.inner.timestamps())?;
    let events = primseg::ingest::detect_step_events(&sequence.inner);
    Ok(primitives::boundary_agreement(&segments, &events, tol_s)
        .map_err(err)?
        .recall)
}

#[pymodule]
pub fn primseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TrafficSequence>()?;
    m.add_function(wrap_pyfunction!(stick_breaking, m)?)?;
    m.add_function(wrap_pyfunction!(sticky_prior_vector, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(iw_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_recovery, m)?)?;
    m.add_function(wrap_pyfunction!(run_gibbs, m)?)?;
    m.add_function(wrap_pyfunction!(states_to_segments, m)?)?;
    m.add_function(wrap_pyfunction!(primitive_stats, m)?)?;
    m.add_function(wrap_pyfunction!(matched_hamming_error, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_recall, m)?)?;
    Ok(())
}
