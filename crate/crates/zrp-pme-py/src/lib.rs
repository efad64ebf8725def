//! Python bindings: equilibrium sampling, the event-driven process, the PDE
//! solvers and the rate-function evaluation, over plain lists and dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::ChaCha8Rng;

use zrp_pme::equilibrium;
use zrp_pme::experiments::replica::replica_rng;
use zrp_pme::functionals;
use zrp_pme::functionals::{DensityField, DensityPath};
use zrp_pme::lattice::{Configuration, ScalingParams, TorusLattice};
use zrp_pme::pme;
use zrp_pme::rate_fn;
use zrp_pme::sim;
use zrp_pme::tilt::TiltField;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scaling(d: usize, n: usize, chi: f64, alpha: f64, t_fin: f64) -> PyResult<ScalingParams> {
    ScalingParams::new(d, n, chi, alpha, t_fin).map_err(err)
}

fn master_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    replica_rng(seed, stream)
}

/// `log Z_lambda(phi)`.
#[pyfunction]
fn log_partition(lambda: f64, phi: f64) -> PyResult<f64> {
    equilibrium::log_partition(lambda, phi).map_err(err)
}

/// `chi (log Z_lambda(b/chi) - log Z_lambda(a/chi))`.
#[pyfunction]
fn scaled_log_partition_diff(lambda: f64, a: f64, b: f64, chi: f64) -> PyResult<f64> {
    equilibrium::scaled_log_partition_diff(lambda, a, b, chi).map_err(err)
}

/// Mean and variance of the single-site density at local parameter `rho`.
#[pyfunction]
#[pyo3(signature = (rho, chi, alpha, trunc=None))]
fn single_site_moments(rho: f64, chi: f64, alpha: f64, trunc: Option<f64>) -> PyResult<(f64, f64)> {
    let m = equilibrium::SingleSiteMeasure::new(rho, chi, alpha, trunc).map_err(err)?;
    let (mean, _) = m.moments();
    Ok((mean, m.variance()))
}

/// Independent per-site equilibrium draws at the given density profile;
/// returns integer occupation numbers.
#[pyfunction]
#[pyo3(signature = (profile, d, n, chi, alpha, seed, trunc=None))]
#[allow(clippy::too_many_arguments)]
fn sample_configuration(
    profile: Vec<f64>,
    d: usize,
    n: usize,
    chi: f64,
    alpha: f64,
    seed: u64,
    trunc: Option<f64>,
) -> PyResult<Vec<u32>> {
    let p = scaling(d, n, chi, alpha, 1.0)?;
    let field = equilibrium::EquilibriumField { rho: profile };
    let mut rng = master_rng(seed, 0);
    let cfg = equilibrium::sample_configuration(&field, p, trunc, &mut rng).map_err(err)?;
    Ok(cfg.counts)
}

/// Normalized log initial density ratio of the (conditioned) equilibrium at
/// `u0` against the reference profile `rho`.
#[pyfunction]
#[pyo3(signature = (counts, u0, rho, d, n, chi, alpha, trunc=None))]
#[allow(clippy::too_many_arguments)]
fn log_density_ratio_initial(
    counts: Vec<u32>,
    u0: Vec<f64>,
    rho: Vec<f64>,
    d: usize,
    n: usize,
    chi: f64,
    alpha: f64,
    trunc: Option<f64>,
) -> PyResult<f64> {
    let p = scaling(d, n, chi, alpha, 1.0)?;
    let cfg = Configuration::new(counts, p).map_err(err)?;
    equilibrium::log_density_ratio_initial(&cfg, &u0, &rho, trunc).map_err(err)
}

/// Run the rescaled zero-range process and return snapshots plus ledger
/// functionals in a dict with keys `times`, `fields`, `mass`, `events`,
/// and (for tilted runs) `a1`, `a2`, `log_rn_dynamic`.
#[pyfunction]
#[pyo3(signature = (counts, d, n, chi, alpha, t_fin, n_snap, seed, tilt_eps=0.0, tilt_wave=1))]
#[allow(clippy::too_many_arguments)]
fn simulate_zrp<'py>(
    py: Python<'py>,
    counts: Vec<u32>,
    d: usize,
    n: usize,
    chi: f64,
    alpha: f64,
    t_fin: f64,
    n_snap: usize,
    seed: u64,
    tilt_eps: f64,
    tilt_wave: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let p = scaling(d, n, chi, alpha, t_fin)?;
    let cfg = Configuration::new(counts, p).map_err(err)?;
    let tilt = if tilt_eps != 0.0 {
        Some(TiltField::cosine(tilt_eps, vec![tilt_wave; 1]))
    } else {
        None
    };
    let mut spec = sim::RunSpec::new(t_fin, n_snap);
    spec.record_fields = true;
    let mut rng = master_rng(seed, 0);
    let out = sim::run(&cfg, tilt.as_ref(), &spec, &mut rng).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("times", &out.recorder.times)?;
    dict.set_item("fields", out.recorder.fields.as_ref().unwrap())?;
    dict.set_item("mass", &out.recorder.mass)?;
    dict.set_item("events", out.recorder.events)?;
    dict.set_item("final_counts", &out.recorder.final_config.counts)?;
    if let Some(l) = &out.ledger {
        dict.set_item("a1", l.a1)?;
        dict.set_item("a2", l.a2)?;
        dict.set_item("log_rn_dynamic", sim::log_rn_derivative(l, 0.0, p))?;
    }
    Ok(dict)
}

/// Boltzmann entropy of a grid density against a constant reference.
#[pyfunction]
fn entropy(values: Vec<f64>, d: usize, cells: usize, rho: f64) -> PyResult<f64> {
    functionals::entropy_site_field(&values, d, cells, rho).map_err(err)
}

/// Lattice entropy dissipation of a site field.
#[pyfunction]
fn discrete_dissipation(values: Vec<f64>, d: usize, n: usize, alpha: f64) -> PyResult<f64> {
    functionals::discrete_dissipation(&values, d, n, alpha).map_err(err)
}

/// Continuum entropy dissipation `(2/alpha) Int |grad u^{alpha/2}|^2`.
#[pyfunction]
fn continuum_dissipation(values: Vec<f64>, d: usize, cells: usize, alpha: f64) -> PyResult<f64> {
    let f = DensityField::new(values, d, cells).map_err(err)?;
    functionals::continuum_dissipation(&f, alpha).map_err(err)
}

/// Mollified local average of a lattice field at macroscopic scale `r`.
#[pyfunction]
fn local_average(values: Vec<f64>, d: usize, n: usize, r: f64) -> PyResult<Vec<f64>> {
    functionals::local_average(&values, d, n, r).map_err(err)
}

/// Per-transition detailed-balance residual of the equilibrium measure.
#[pyfunction]
fn detailed_balance_residual(rho: f64, chi: f64, alpha: f64, k_from: u64, k_to: u64) -> f64 {
    equilibrium::detailed_balance_residual(rho, chi, alpha, k_from, k_to)
}

fn solution_dict<'py>(py: Python<'py>, sol: &pme::PdeSolution) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("times", &sol.path.times)?;
    let fields: Vec<Vec<f64>> = sol.path.fields.iter().map(|f| f.values.clone()).collect();
    dict.set_item("fields", fields)?;
    dict.set_item("mass", &sol.diagnostics.mass)?;
    dict.set_item("entropy", &sol.diagnostics.entropy)?;
    dict.set_item("dissipation_integral", sol.diagnostics.dissipation_integral.last())?;
    dict.set_item("clipped_mass", sol.clipped_mass)?;
    dict.set_item("steps", sol.steps)?;
    Ok(dict)
}

/// Conservative finite-volume solution of `du/dt = 1/2 Lap(u^alpha)`.
#[pyfunction]
fn solve_pme<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    alpha: f64,
    t_fin: f64,
    cells: usize,
    n_snap: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = pme::PdeGrid::new(1, cells).map_err(err)?;
    let f = DensityField::new(u0, 1, cells).map_err(err)?;
    let sol = pme::solve_pme(&f, alpha, t_fin, grid, n_snap).map_err(err)?;
    solution_dict(py, &sol)
}

/// Fokker-Planck tilt with drift potential `eps cos(2 pi wave x)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn solve_fokker_planck<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    alpha: f64,
    eps: f64,
    wave: usize,
    t_fin: f64,
    cells: usize,
    n_snap: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = pme::PdeGrid::new(1, cells).map_err(err)?;
    let f = DensityField::new(u0, 1, cells).map_err(err)?;
    let tilt = TiltField::cosine(eps, vec![wave]);
    let sol = pme::solve_fokker_planck(&f, alpha, &tilt, t_fin, grid, n_snap).map_err(err)?;
    solution_dict(py, &sol)
}

fn path_from_py(times: Vec<f64>, fields: Vec<Vec<f64>>, cells: usize) -> PyResult<DensityPath> {
    let fields = fields
        .into_iter()
        .map(|v| DensityField::new(v, 1, cells).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    DensityPath::new(times, fields).map_err(err)
}

/// Galerkin value of the dynamic cost of a density path.
#[pyfunction]
fn dynamic_cost(
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
    cells: usize,
    alpha: f64,
    k_max: usize,
) -> PyResult<f64> {
    let path = path_from_py(times, fields, cells)?;
    let basis = rate_fn::TestBasis::fourier(1, k_max).map_err(err)?;
    Ok(rate_fn::dynamic_cost(&path, alpha, &basis).map_err(err)?.value)
}

/// Galerkin value of the action of a density path.
#[pyfunction]
fn action(
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
    cells: usize,
    alpha: f64,
    k_max: usize,
) -> PyResult<f64> {
    let path = path_from_py(times, fields, cells)?;
    let basis = rate_fn::TestBasis::fourier(1, k_max).map_err(err)?;
    Ok(rate_fn::action(&path, alpha, &basis).map_err(err)?.value)
}

/// All rate-function ingredients of a path plus the gradient-flow residual,
/// as a dict mirroring the flat text report.
#[pyfunction]
fn gradient_flow_report<'py>(
    py: Python<'py>,
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
    cells: usize,
    alpha: f64,
    rho: f64,
    k_max: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let path = path_from_py(times, fields, cells)?;
    let basis = rate_fn::TestBasis::fourier(1, k_max).map_err(err)?;
    let r = rate_fn::gradient_flow_residual(&path, alpha, rho, &basis).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("static_cost", r.static_cost)?;
    dict.set_item("dynamic_cost", r.dynamic_cost)?;
    dict.set_item("action", r.action)?;
    dict.set_item("dissipation_integral", r.dissipation_integral)?;
    dict.set_item("entropy_initial", r.entropy_initial)?;
    dict.set_item("entropy_final", r.entropy_final)?;
    dict.set_item("gradient_flow_residual", r.gradient_flow_residual)?;
    dict.set_item("mass_conserved", r.mass_conserved)?;
    Ok(dict)
}

/// Cube averages of `cos(2 pi wave x)` on the lattice, matching the test
/// functions used by the simulator observables.
#[pyfunction]
fn cosine_cell_averages(d: usize, n: usize, wave: usize) -> PyResult<Vec<f64>> {
    let lat = TorusLattice::new(d, n).map_err(err)?;
    lat.cell_averages(
        |x| (2.0 * std::f64::consts::PI * wave as f64 * x[0]).cos(),
        3,
    )
    .map_err(err)
}

#[pymodule]
fn zrp_pme_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_log_partition_diff, m)?)?;
    m.add_function(wrap_pyfunction!(single_site_moments, m)?)?;
    m.add_function(wrap_pyfunction!(sample_configuration, m)?)?;
    m.add_function(wrap_pyfunction!(log_density_ratio_initial, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_zrp, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_dissipation, m)?)?;
    m.add_function(wrap_pyfunction!(continuum_dissipation, m)?)?;
    m.add_function(wrap_pyfunction!(local_average, m)?)?;
    m.add_function(wrap_pyfunction!(detailed_balance_residual, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pme, m)?)?;
    m.add_function(wrap_pyfunction!(solve_fokker_planck, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_cost, m)?)?;
    m.add_function(wrap_pyfunction!(action, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_flow_report, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_cell_averages, m)?)?;
    Ok(())
}
