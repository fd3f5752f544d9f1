//! Python bindings: TT vectors and operators, the model problems, sketches and the solvers.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use ttk_core::precond::{expsum_coeffs, spectral_interval, ExpSumPreconditioner, Preconditioner};
use ttk_core::problems::{convection_diffusion, markov_chain, ConvectionDiffusionSpec, MarkovSpec};
use ttk_core::sketch::KhatriRaoSketch;
use ttk_core::solvers::{self, CombineMode, SolverConfig, SolverKind};
use ttk_core::{DenseTensor, RoundSpec, TtError};

fn err(e: TtError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn spec(tol: f64, max_rank: Option<usize>) -> PyResult<RoundSpec> {
    RoundSpec::new(tol, max_rank).map_err(err)
}

#[pyclass(name = "TtVector", module = "ttk", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTtVector {
    inner: ttk_core::TtVector,
}

#[pymethods]
impl PyTtVector {
    #[staticmethod]
    fn zeros(dims: Vec<usize>) -> Self {
        Self { inner: ttk_core::TtVector::zeros(&dims) }
    }

    #[staticmethod]
    fn ones(dims: Vec<usize>) -> Self {
        Self { inner: ttk_core::TtVector::ones(&dims) }
    }

    /// Gaussian cores with the given interior ranks.
    #[staticmethod]
    #[pyo3(signature = (dims, ranks, seed=0))]
    fn random(dims: Vec<usize>, ranks: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: ttk_core::TtVector::random(&dims, &ranks, seed).map_err(err)? })
    }

    /// TT-SVD of a row-major dense array.
    #[staticmethod]
    #[pyo3(signature = (data, dims, tol=1e-14, max_rank=None))]
    fn from_dense(data: Vec<f64>, dims: Vec<usize>, tol: f64, max_rank: Option<usize>) -> PyResult<Self> {
        let t = DenseTensor::new(dims, data).map_err(err)?;
        Ok(Self { inner: ttk_core::TtVector::from_dense(&t, &spec(tol, max_rank)?).map_err(err)? })
    }

    /// Row-major dense entries.
    fn to_dense(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.to_dense().map_err(err)?.data)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    #[getter]
    fn ranks(&self) -> Vec<usize> {
        self.inner.ranks()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn dot(&self, other: &Self) -> PyResult<f64> {
        self.inner.dot(&other.inner).map_err(err)
    }

    #[pyo3(signature = (tol, max_rank=None))]
    fn round(&self, tol: f64, max_rank: Option<usize>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.round(&spec(tol, max_rank)?) })
    }

    fn __add__(&self, other: &Self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.add(&other.inner).map_err(err)? })
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.sub(&other.inner).map_err(err)? })
    }

    fn __mul__(&self, alpha: f64) -> Self {
        Self { inner: self.inner.scale(alpha) }
    }

    fn __rmul__(&self, alpha: f64) -> Self {
        self.__mul__(alpha)
    }

    fn __repr__(&self) -> String {
        format!("TtVector(dims={:?}, ranks={:?})", self.inner.dims(), self.inner.ranks())
    }
}

#[pyclass(name = "TtOperator", module = "ttk", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTtOperator {
    inner: ttk_core::TtOperator,
}

#[pymethods]
impl PyTtOperator {
    #[staticmethod]
    fn identity(dims: Vec<usize>) -> Self {
        Self { inner: ttk_core::TtOperator::identity(&dims) }
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.row_dims()
    }

    #[getter]
    fn ranks(&self) -> Vec<usize> {
        self.inner.ranks()
    }

    fn matvec(&self, v: &PyTtVector) -> PyResult<PyTtVector> {
        Ok(PyTtVector { inner: self.inner.matvec(&v.inner).map_err(err)? })
    }

    fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    /// Dense matrix as a list of rows.
    fn to_dense(&self) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.to_dense().map_err(err)?;
        Ok((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("TtOperator(dims={:?}, ranks={:?})", self.inner.row_dims(), self.inner.ranks())
    }
}

/// An operator, right-hand side and the Kronecker factors of its preconditioner.
#[pyclass(name = "Problem", module = "ttk")]
pub struct PyProblem {
    inner: ttk_core::problems::Problem,
}

#[pymethods]
impl PyProblem {
    #[getter]
    fn operator(&self) -> PyTtOperator {
        PyTtOperator { inner: self.inner.operator.clone() }
    }

    #[getter]
    fn rhs(&self) -> PyTtVector {
        PyTtVector { inner: self.inner.rhs.clone() }
    }

    /// `(lambda_min, lambda_max)` of the Kronecker-sum part.
    fn spectral_interval(&self) -> PyResult<(f64, f64)> {
        spectral_interval(&self.inner.kron_factors).map_err(err)
    }
}

#[pyfunction]
#[pyo3(name = "convection_diffusion", signature = (d, n, diffusion=None, convection=None))]
fn py_convection_diffusion(d: usize, n: usize, diffusion: Option<f64>, convection: Option<Vec<f64>>) -> PyResult<PyProblem> {
    let mut s = ConvectionDiffusionSpec::new(d, n);
    if let Some(v) = diffusion {
        s.diffusion = v;
    }
    s.convection = convection.or(s.convection);
    Ok(PyProblem { inner: convection_diffusion(&s).map_err(err)? })
}

#[pyfunction]
#[pyo3(name = "markov_chain", signature = (d, n, seed=0))]
fn py_markov_chain(d: usize, n: usize, seed: u64) -> PyResult<PyProblem> {
    Ok(PyProblem { inner: markov_chain(&MarkovSpec::new(d, n, seed)).map_err(err)? })
}

/// Khatri-Rao sketch of `v` with `rows` rows.
#[pyfunction]
#[pyo3(signature = (v, rows, seed=0))]
fn sketch(v: &PyTtVector, rows: usize, seed: u64) -> PyResult<Vec<f64>> {
    let s = KhatriRaoSketch::new(&v.inner.dims(), rows, seed).map_err(err)?;
    s.apply(&v.inner).map_err(err)
}

/// `(alpha, beta, bound)` of the exponential sum approximating `1/z` on `[lo, hi]`.
#[pyfunction]
fn expsum(lo: f64, hi: f64, zeta: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let e = expsum_coeffs(lo, hi, zeta).map_err(err)?;
    Ok((e.alpha, e.beta, e.bound))
}

#[pyfunction]
fn true_residual(a: &PyTtOperator, b: &PyTtVector, x: &PyTtVector) -> PyResult<f64> {
    solvers::true_residual(&a.inner, &b.inner, &x.inner).map_err(err)
}

fn solver_config(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<SolverConfig> {
    let mut cfg = SolverConfig::default();
    let Some(kw) = kwargs else { return Ok(cfg) };
    for (k, v) in kw.iter() {
        let key: String = k.extract()?;
        match key.as_str() {
            "maxit" => cfg.maxit = v.extract()?,
            "tol" => cfg.tol = v.extract()?,
            "window" => cfg.window = v.extract()?,
            "eta" => cfg.eta = v.extract()?,
            "max_rank" => cfg.max_rank = v.extract()?,
            "sketch_rows" => cfg.sketch_rows = v.extract()?,
            "oversampling" => cfg.oversampling = v.extract()?,
            "solution_rank" => cfg.solution_rank = v.extract()?,
            "recovery_rcond" => cfg.recovery_rcond = v.extract()?,
            "seed" => cfg.seed = v.extract()?,
            "track_true_residual" => cfg.track_true_residual = v.extract()?,
            "force_iterations" => cfg.force_iterations = v.extract()?,
            "combine_mode" => {
                cfg.combine_mode = match v.extract::<String>()?.as_str() {
                    "explicit" => CombineMode::Explicit,
                    "stta" => CombineMode::Stta,
                    other => return Err(PyValueError::new_err(format!("combine_mode: unknown mode `{other}`"))),
                }
            }
            _ => return Err(PyKeyError::new_err(format!("unknown solver option `{key}`"))),
        }
    }
    Ok(cfg)
}

fn report_dict<'py>(py: Python<'py>, r: &solvers::SolveReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("solver", &r.solver)?;
    d.set_item("converged", r.converged)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("res_sketched", r.res_sketched.clone())?;
    d.set_item("res_true", r.res_true.clone())?;
    d.set_item("max_rank", r.max_rank.clone())?;
    d.set_item("total_time", r.total_time)?;
    d.set_item("peak_resident_basis", r.peak_resident_basis)?;
    d.set_item("breakdown", r.breakdown)?;
    d.set_item("warnings", r.warnings.clone())?;
    Ok(d)
}

/// Runs `solver` on the problem; returns `(x, report)`. Keyword options are the solver config
/// fields; `zeta` builds the exponential-sum preconditioner that `tt_spgmres` needs.
#[pyfunction]
#[pyo3(signature = (solver, problem, x0=None, zeta=None, **kwargs))]
fn solve<'py>(
    py: Python<'py>,
    solver: &str,
    problem: &PyProblem,
    x0: Option<&PyTtVector>,
    zeta: Option<usize>,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyTtVector, Bound<'py, PyDict>)> {
    let kind = SolverKind::parse(solver).ok_or_else(|| PyValueError::new_err(format!("unknown solver `{solver}`")))?;
    let cfg = solver_config(kwargs)?;
    let p = &problem.inner;
    let precond = match zeta {
        Some(z) => {
            let (lo, hi) = spectral_interval(&p.kron_factors).map_err(err)?;
            let round = spec(ExpSumPreconditioner::application_tol(cfg.eta * cfg.tol, lo, hi), cfg.max_rank)?;
            Some(ExpSumPreconditioner::new(p.kron_factors.clone(), z, round).map_err(err)?.with_sign(p.precond_sign))
        }
        None => None,
    };
    let x0 = x0.map(|x| &x.inner);
    let (x, report) = py
        .detach(|| {
            let pre = precond.as_ref().map(|p| p as &dyn Preconditioner);
            solvers::solve(kind, &p.operator, &p.rhs, x0, pre, &cfg)
        })
        .map_err(err)?;
    Ok((PyTtVector { inner: x }, report_dict(py, &report)?))
}

#[pymodule]
fn ttk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTtVector>()?;
    m.add_class::<PyTtOperator>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(py_convection_diffusion, m)?)?;
    m.add_function(wrap_pyfunction!(py_markov_chain, m)?)?;
    m.add_function(wrap_pyfunction!(sketch, m)?)?;
    m.add_function(wrap_pyfunction!(expsum, m)?)?;
    m.add_function(wrap_pyfunction!(true_residual, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
