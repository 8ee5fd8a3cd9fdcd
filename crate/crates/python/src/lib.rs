//! Python bindings. Rasters cross the boundary as flat lists in pixel-major
//! order (all classes of pixel 0, then pixel 1, ...).

use std::path::PathBuf;

use dirfuse::accuracy as acc;
use dirfuse::cluster::{self as cl, ClusterMethod, EntropyFeatureMatrix};
use dirfuse::{entropy, fusion, grid, landscape, pipeline, raster_io, synth, weights};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: dirfuse::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyIOError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for dirfuse::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "GridShape", frozen, from_py_object)]
#[derive(Clone)]
struct PyGridShape(grid::GridShape);

#[pymethods]
impl PyGridShape {
    #[new]
    fn new(width: usize, height: usize, class_names: Vec<String>) -> PyResult<Self> {
        grid::GridShape::new(width, height, class_names).py().map(Self)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.class_names().to_vec()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }

    fn __repr__(&self) -> String {
        format!(
            "GridShape({}x{}, {} classes)",
            self.0.width(),
            self.0.height(),
            self.0.n_classes()
        )
    }
}

#[pyclass(name = "ProbabilityRaster", frozen, from_py_object)]
#[derive(Clone)]
struct PyProbabilityRaster(grid::ProbabilityRaster);

#[pymethods]
impl PyProbabilityRaster {
    #[new]
    #[pyo3(signature = (shape, values, epsilon = fusion::DEFAULT_EPSILON))]
    fn new(shape: PyGridShape, values: Vec<f64>, epsilon: f64) -> PyResult<Self> {
        grid::ProbabilityRaster::with_epsilon(shape.0, values, epsilon)
            .py()
            .map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        raster_io::load_probability_raster(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        raster_io::save_probability_raster(&self.0, &path).py()
    }

    #[getter]
    fn shape(&self) -> PyGridShape {
        PyGridShape(self.0.shape().clone())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn pixel(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= self.0.shape().n_pixels() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.0.pixel(index).to_vec())
    }

    fn hard_classify(&self) -> PyLabelRaster {
        PyLabelRaster(grid::hard_classify(&self.0))
    }

    fn entropy(&self) -> Vec<f64> {
        entropy::entropy_map(&self.0).into_values()
    }
}

#[pyclass(name = "LabelRaster", frozen, from_py_object)]
#[derive(Clone)]
struct PyLabelRaster(grid::LabelRaster);

#[pymethods]
impl PyLabelRaster {
    #[new]
    fn new(shape: PyGridShape, values: Vec<u8>) -> PyResult<Self> {
        grid::LabelRaster::new(shape.0, values).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        raster_io::load_label_raster(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        raster_io::save_label_raster(&self.0, &path).py()
    }

    #[getter]
    fn shape(&self) -> PyGridShape {
        PyGridShape(self.0.shape().clone())
    }

    fn values(&self) -> Vec<u32> {
        self.0.values().iter().map(|&v| v as u32).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.0.class_counts()
    }

    fn iji(&self) -> Option<f64> {
        landscape::iji(&self.0)
    }
}

#[pyclass(name = "PosteriorField", frozen)]
struct PyPosteriorField(fusion::PosteriorField);

#[pymethods]
impl PyPosteriorField {
    fn mean(&self) -> Vec<f64> {
        self.0.mean().to_vec()
    }

    fn alpha_post(&self) -> Vec<f64> {
        self.0.alpha_post().to_vec()
    }

    fn mean_raster(&self) -> PyProbabilityRaster {
        PyProbabilityRaster(self.0.mean_raster())
    }

    fn label_map(&self) -> PyLabelRaster {
        PyLabelRaster(fusion::fused_label_map(&self.0))
    }
}

fn unwrap_maps(maps: &[PyRef<'_, PyProbabilityRaster>]) -> Vec<grid::ProbabilityRaster> {
    maps.iter().map(|m| m.0.clone()).collect()
}

#[pyfunction]
#[pyo3(signature = (maps, weights = None, prior_alpha = None, epsilon = fusion::DEFAULT_EPSILON))]
fn fuse(
    py: Python<'_>,
    maps: Vec<PyRef<'_, PyProbabilityRaster>>,
    weights: Option<Vec<f64>>,
    prior_alpha: Option<Vec<f64>>,
    epsilon: f64,
) -> PyResult<PyPosteriorField> {
    let owned = unwrap_maps(&maps);
    let config = fusion::FusionConfig {
        epsilon,
        prior_alpha,
        weights,
    };
    py.detach(|| {
        let refs: Vec<_> = owned.iter().collect();
        fusion::fuse(&refs, &config)
    })
    .py()
    .map(PyPosteriorField)
}

#[pyfunction]
fn plurality_composite(maps: Vec<PyRef<'_, PyProbabilityRaster>>) -> PyResult<PyLabelRaster> {
    let owned = unwrap_maps(&maps);
    let refs: Vec<_> = owned.iter().collect();
    fusion::plurality_composite(&refs).py().map(PyLabelRaster)
}

#[pyfunction]
fn shannon_entropy(p: Vec<f64>) -> f64 {
    entropy::shannon_entropy(&p)
}

#[pyfunction]
#[pyo3(signature = (maps, subsample = None, seed = 0))]
fn estimate_weights<'py>(
    py: Python<'py>,
    maps: Vec<PyRef<'py, PyProbabilityRaster>>,
    subsample: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let owned = unwrap_maps(&maps);
    let est = py
        .detach(|| {
            let refs: Vec<_> = owned.iter().collect();
            weights::estimate_weights(&refs, &fusion::FusionConfig::default(), subsample, seed)
        })
        .py()?;
    let d = PyDict::new(py);
    d.set_item("kappa", est.kappa)?;
    d.set_item("log_posterior", est.log_posterior)?;
    d.set_item("iterations", est.iterations)?;
    d.set_item("converged", est.converged)?;
    d.set_item("trace", est.trace)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (maps, k, method = "kmeans", seed = 0))]
fn cluster<'py>(
    py: Python<'py>,
    maps: Vec<PyRef<'py, PyProbabilityRaster>>,
    k: usize,
    method: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let method: ClusterMethod = method.parse().py()?;
    let owned = unwrap_maps(&maps);
    let model = py
        .detach(|| {
            let refs: Vec<_> = owned.iter().collect();
            let features = EntropyFeatureMatrix::from_maps(&refs)?;
            cl::cluster(method, &features, k, seed)
        })
        .py()?;
    let d = PyDict::new(py);
    d.set_item("assignment", model.assignment)?;
    d.set_item("inertia", model.inertia)?;
    if let cl::Centers::Medoids(m) = model.centers {
        d.set_item("medoids", m)?;
    }
    Ok(d)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> f64 {
    cl::adjusted_rand_index(&a, &b)
}

/// `(overall, users, producers)` over the full grid; undefined ratios are None.
#[pyfunction]
fn accuracy(
    pred: PyRef<'_, PyLabelRaster>,
    reference: PyRef<'_, PyLabelRaster>,
) -> PyResult<(f64, Vec<Option<f64>>, Vec<Option<f64>>)> {
    let r = acc::confusion(&pred.0, &reference.0, None).py()?.report().py()?;
    Ok((r.overall, r.users, r.producers))
}

/// Per-iteration overall accuracy of stratified Monte Carlo validation.
#[pyfunction]
#[pyo3(signature = (pred, reference, n_iterations = 100, per_class = 300, seed = 0))]
fn monte_carlo_oa(
    py: Python<'_>,
    pred: PyRef<'_, PyLabelRaster>,
    reference: PyRef<'_, PyLabelRaster>,
    n_iterations: usize,
    per_class: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let (p, r) = (pred.0.clone(), reference.0.clone());
    let res = py
        .detach(|| acc::monte_carlo_assess(&p, &r, n_iterations, per_class, seed))
        .py()?;
    Ok(res.per_iteration.iter().map(|it| it.overall).collect())
}

/// `(t, p, df)` of a two-sided paired t-test.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let t = acc::paired_t_test(&a, &b).py()?;
    Ok((t.t, t.p, t.df))
}

/// Writes `truth` and `maps/<id>` rasters for a scenario JSON file.
#[pyfunction]
fn simulate(py: Python<'_>, scenario: PathBuf, output_dir: PathBuf) -> PyResult<Vec<String>> {
    py.detach(|| {
        let sim = synth::Scenario::from_json_file(&scenario)?.materialize(&output_dir)?;
        Ok(sim.maps.into_iter().map(|(id, _)| id).collect())
    })
    .py()
}

/// Runs a pipeline config file; returns the variant names in summary order.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf) -> PyResult<Vec<String>> {
    py.detach(|| {
        let cfg = pipeline::PipelineConfig::from_json_file(&config)?;
        let report = pipeline::run_pipeline(&cfg)?;
        Ok(report.variants.into_iter().map(|v| v.name).collect())
    })
    .py()
}

#[pymodule(name = "dirfuse")]
fn dirfuse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NODATA", grid::NODATA)?;
    m.add_class::<PyGridShape>()?;
    m.add_class::<PyProbabilityRaster>()?;
    m.add_class::<PyLabelRaster>()?;
    m.add_class::<PyPosteriorField>()?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(plurality_composite, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_weights, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_oa, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
