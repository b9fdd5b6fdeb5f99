//! Python bindings. Reports come back as plain dicts (decoded from the same
//! JSON the CLI prints).

use pyo3::exceptions::{PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use tempering_lab::hardness::{self, HardInstance};
use tempering_lab::io::{
    parse_input, select_kernel, FamilySpec, Input, KernelFile, KernelSelector,
};
use tempering_lab::kernels::uniform_proposal;
use tempering_lab::lower_bound::{verify_lower as verify_lower_impl, LowerBoundOptions};
use tempering_lab::measure::{bottleneck_b, overlap_phi, random_family, temper};
use tempering_lab::paths::{self, Move};
use tempering_lab::sampler;
use tempering_lab::spectral::{spectral_gap_with, SolverChoice, SpectralOptions};
use tempering_lab::{
    Error, FiniteTarget, ProductAssignment, StochasticMatrix, TemperatureLadder,
    DEFAULT_STATE_BUDGET,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Budget { .. } => PyMemoryError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn solver(name: &str) -> PyResult<SolverChoice> {
    match name {
        "auto" => Ok(SolverChoice::Auto),
        "dense" => Ok(SolverChoice::Dense),
        "power" => Ok(SolverChoice::Power),
        "lanczos" => Ok(SolverChoice::Lanczos),
        other => Err(PyValueError::new_err(format!("unknown solver {other:?}"))),
    }
}

/// Tempered family with the symmetric proposal its level kernels use.
#[pyclass(name = "TemperedFamily", module = "ptlab", skip_from_py_object)]
#[derive(Clone)]
struct PyFamily {
    spec: FamilySpec,
}

#[pymethods]
impl PyFamily {
    /// Weights are positive reals, `labels[a]` is the mode of atom `a`.
    #[new]
    #[pyo3(signature = (weights, labels, betas, m=None))]
    fn new(
        weights: Vec<f64>,
        labels: Vec<usize>,
        betas: Vec<f64>,
        m: Option<usize>,
    ) -> PyResult<Self> {
        let m = m.unwrap_or_else(|| labels.iter().max().map_or(0, |x| x + 1));
        let target = FiniteTarget::new(&weights, labels, m).map_err(py_err)?;
        let family =
            temper(&target, &TemperatureLadder::new(betas).map_err(py_err)?).map_err(py_err)?;
        let proposal = uniform_proposal(family.n_atoms());
        Ok(PyFamily {
            spec: FamilySpec { family, proposal },
        })
    }

    #[staticmethod]
    fn random(m: usize, top: usize, atoms_per_mode: usize, seed: u64) -> PyResult<Self> {
        let family = random_family(m, top, atoms_per_mode, seed).map_err(py_err)?;
        let proposal = uniform_proposal(family.n_atoms());
        Ok(PyFamily {
            spec: FamilySpec { family, proposal },
        })
    }

    /// Parses the family JSON format accepted by the command-line tool.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        match parse_input(text).map_err(py_err)? {
            Input::Family(spec) => Ok(PyFamily { spec }),
            Input::Kernel(_) => Err(PyValueError::new_err("expected a family, got a kernel")),
        }
    }

    /// The hard instance with one atom per mode.
    #[staticmethod]
    fn hard_instance(top: usize) -> PyResult<Self> {
        let family = HardInstance::build(top)
            .and_then(|h| h.to_family())
            .map_err(py_err)?;
        let proposal = tempering_lab::SparseMatrix::identity(family.n_atoms());
        Ok(PyFamily {
            spec: FamilySpec { family, proposal },
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.spec.family.m()
    }

    #[getter]
    fn top(&self) -> usize {
        self.spec.family.top()
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.spec.family.n_atoms()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.spec.family.ladder().betas().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.spec.family.labels().to_vec()
    }

    fn level(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.spec.family.num_levels() {
            return Err(PyValueError::new_err("level out of range"));
        }
        Ok(self.spec.family.level(i).to_vec())
    }

    fn block_masses(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.spec.family.num_levels() {
            return Err(PyValueError::new_err("level out of range"));
        }
        Ok(self.spec.family.block_masses(i).to_vec())
    }

    fn phi(&self) -> PyResult<f64> {
        overlap_phi(&self.spec.family).map_err(py_err)
    }

    fn bottleneck(&self) -> f64 {
        bottleneck_b(&self.spec.family)
    }

    fn k_star(&self) -> usize {
        paths::k_star(&self.spec.family)
    }

    /// `selector` is one of `pt`, `pt-bar`, `t`, `q`, `p1`, `p2`,
    /// `level:i`, `level-bar:i`.
    #[pyo3(signature = (selector="pt", budget=DEFAULT_STATE_BUDGET))]
    fn kernel(&self, selector: &str, budget: usize) -> PyResult<PyKernel> {
        let sel: KernelSelector = selector.parse().map_err(py_err)?;
        Ok(PyKernel {
            inner: select_kernel(&self.spec, sel, budget).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "TemperedFamily(n_atoms={}, m={}, levels={})",
            self.spec.family.n_atoms(),
            self.spec.family.m(),
            self.spec.family.num_levels()
        )
    }
}

/// Reversible stochastic matrix with its stationary law.
#[pyclass(name = "Kernel", module = "ptlab")]
struct PyKernel {
    inner: StochasticMatrix,
}

#[pymethods]
impl PyKernel {
    /// Solves for the stationary law when it is not given.
    #[new]
    #[pyo3(signature = (matrix, stationary=None))]
    fn new(matrix: Vec<Vec<f64>>, stationary: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = KernelFile { matrix, stationary }
            .into_kernel()
            .map_err(py_err)?;
        Ok(PyKernel { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.inner.stationary().to_vec()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.inner.dim();
        (0..n)
            .map(|x| (0..n).map(|y| self.inner.get(x, y)).collect())
            .collect()
    }

    fn detailed_balance_residual(&self) -> f64 {
        self.inner.detailed_balance_residual()
    }

    /// Spectrum report as a dict; `gap` is the headline field.
    #[pyo3(signature = (solver_name="auto", tol=1e-8))]
    fn gap(&self, py: Python<'_>, solver_name: &str, tol: f64) -> PyResult<Py<PyAny>> {
        let opts = SpectralOptions {
            solver: solver(solver_name)?,
            tol,
            ..SpectralOptions::default()
        };
        let report = spectral_gap_with(&self.inner, &opts).map_err(py_err)?;
        to_py(py, &report)
    }

    fn dirichlet_form(&self, f: Vec<f64>) -> PyResult<f64> {
        tempering_lab::spectral::dirichlet_form(&self.inner, &f).map_err(py_err)
    }

    fn cheeger_ratio(&self, set: Vec<usize>) -> PyResult<f64> {
        tempering_lab::spectral::cheeger_ratio(&self.inner, &set).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Kernel(dim={})", self.inner.dim())
    }
}

/// Comparison pipeline report for a family with at least two levels.
#[pyfunction]
#[pyo3(signature = (family, test_functions=100, seed=1, tol=1e-8, budget=DEFAULT_STATE_BUDGET))]
fn verify_lower(
    py: Python<'_>,
    family: &PyFamily,
    test_functions: usize,
    seed: u64,
    tol: f64,
    budget: usize,
) -> PyResult<Py<PyAny>> {
    let opts = LowerBoundOptions {
        budget,
        tol,
        test_functions,
        seed,
        ..LowerBoundOptions::default()
    };
    let r = verify_lower_impl(&family.spec.family, &family.spec.proposal, &opts).map_err(py_err)?;
    to_py(py, &r)
}

/// Exact mass and bottleneck checks plus the Cheeger certificate.
#[pyfunction]
#[pyo3(signature = (top, solve_gap=true, budget=DEFAULT_STATE_BUDGET))]
fn verify_upper(py: Python<'_>, top: usize, solve_gap: bool, budget: usize) -> PyResult<Py<PyAny>> {
    let inst = HardInstance::build(top).map_err(py_err)?;
    let masses = hardness::verify_mode_mass_bounds(&inst);
    let bottleneck = hardness::verify_bottleneck_bound(&inst);
    let cert = hardness::certificate(&inst, budget, solve_gap, &SpectralOptions::default())
        .map_err(py_err)?;
    let holds = masses.holds && bottleneck.holds && cert.holds;
    to_py(
        py,
        &serde_json::json!({
            "mode_mass_bounds": masses,
            "bottleneck": bottleneck,
            "certificate": cert,
            "holds": holds,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (top, padding=0, budget=DEFAULT_STATE_BUDGET))]
fn f_oracle(py: Python<'_>, top: usize, padding: usize, budget: usize) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &hardness::min_divergence_f(top, padding, budget).map_err(py_err)?,
    )
}

#[pyfunction]
fn path_length_f(ell: usize) -> PyResult<u64> {
    paths::path_length_f(ell).map_err(py_err)
}

fn moves_to_tuples(moves: &[Move]) -> Vec<(String, usize)> {
    moves
        .iter()
        .map(|m| match *m {
            Move::AdjSwap(i) => ("swap".to_string(), i),
            Move::SetLevel0(k) => ("set0".to_string(), k),
        })
        .collect()
}

/// Moves as `("swap", i)` (levels `i-1`, `i`) or `("set0", k)`.
#[pyfunction]
fn swap_sequence(i: usize, j: usize) -> PyResult<Vec<(String, usize)>> {
    Ok(moves_to_tuples(
        &paths::swap_sequence(i, j).map_err(py_err)?,
    ))
}

#[pyfunction]
fn level0_path(
    lam: Vec<usize>,
    i: usize,
    k: usize,
    kstar: usize,
) -> PyResult<Vec<(String, usize)>> {
    let path = paths::level0_path(&ProductAssignment(lam), i, k, kstar).map_err(py_err)?;
    Ok(moves_to_tuples(&path.moves))
}

/// Runs the sampler with the family's proposal at every level. Returns a
/// dict with `samples`, `swap_attempts`, `swap_accepts`, `swap_rates` and
/// the top-level `occupancy`.
#[pyfunction]
#[pyo3(signature = (family, n, seed=1, burn_in=0))]
fn simulate(
    py: Python<'_>,
    family: &PyFamily,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> PyResult<Py<PyAny>> {
    let fam = &family.spec.family;
    let proposals = vec![family.spec.proposal.clone(); fam.num_levels()];
    let trace = sampler::run_parallel_tempering(fam, &proposals, n, seed).map_err(py_err)?;
    let occ =
        sampler::occupancy(&trace, fam.labels(), fam.m(), fam.top(), burn_in).map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({
            "seed": trace.seed,
            "initial": trace.initial,
            "samples": trace.samples,
            "swap_attempts": trace.swap_attempts,
            "swap_accepts": trace.swap_accepts,
            "swap_rates": sampler::swap_stats(&trace),
            "occupancy": occ,
        }),
    )
}

#[pymodule]
fn ptlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(verify_lower, m)?)?;
    m.add_function(wrap_pyfunction!(verify_upper, m)?)?;
    m.add_function(wrap_pyfunction!(f_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(path_length_f, m)?)?;
    m.add_function(wrap_pyfunction!(swap_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(level0_path, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
