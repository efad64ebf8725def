//! Experiment orchestration: reproducible replica sweeps tying together the
//! sampler, the event-driven process, the PDE solvers and the rate
//! functional, with CSV reports.

pub mod config;
pub mod csv;
pub mod metric;
pub mod replica;

use rand::Rng;

use crate::equilibrium::{log_density_ratio_initial, EquilibriumField, LocalEquilibrium};
use crate::error::{Error, Result};
use crate::functionals::{entropy_const_ref, half_power, interpolation_beta, trapezoid, DensityField};
use crate::lattice::{Configuration, ScalingParams, TorusLattice};
use crate::pme::{solve_fokker_planck, solve_pme, PdeGrid, PdeSolution};
use crate::rate_fn::{dynamic_cost, gradient_flow_residual, time_reverse, RateReport, TestBasis};
use crate::sim::{log_rn_derivative, qv_bound_constant, run, RunSpec};
use crate::tilt::TiltField;
use config::{ChiRule, Profile};
use csv::Table;
use metric::WeakStarMetric;
use replica::{parallel_replicas, slope, summarize, Summary};

/// Profile evaluated at cell centres of a PDE grid.
pub fn profile_on_grid(profile: &Profile, d: usize, cells: usize) -> DensityField {
    let nd = cells.pow(d as u32);
    let mut values = vec![0.0f64; nd];
    let mut pos = vec![0.0f64; d];
    for (c, v) in values.iter_mut().enumerate() {
        let mut idx = c;
        for axis in (0..d).rev() {
            pos[axis] = ((idx % cells) as f64 + 0.5) / cells as f64;
            idx /= cells;
        }
        *v = profile.eval(&pos);
    }
    DensityField { values, d, cells }
}

/// Cell-averaged profile on the lattice (quadrature order 3).
pub fn profile_on_lattice(profile: &Profile, lattice: &TorusLattice) -> Result<Vec<f64>> {
    lattice.cell_averages(|x| profile.eval(x), 3)
}

/// Initial configuration: either a local-equilibrium sample at the profile
/// or its deterministic rounding.
pub fn initial_configuration<R: Rng + ?Sized>(
    profile_bar: &[f64],
    scaling: ScalingParams,
    trunc: Option<f64>,
    deterministic: bool,
    rng: &mut R,
) -> Result<Configuration> {
    if deterministic {
        Configuration::from_profile_rounded(profile_bar, scaling)
    } else {
        let field = EquilibriumField { rho: profile_bar.to_vec() };
        Ok(LocalEquilibrium::new(&field, scaling, trunc)?.sample(rng))
    }
}

/// Density path as a CSV table: one row per snapshot, `t` followed by the
/// cell values `u0..u{cells^d - 1}` in row-major site order. This schema is
/// shared between solver output and simulator snapshot exports.
pub fn density_path_table(name: &str, times: &[f64], fields: &[Vec<f64>]) -> Table {
    let cells = fields.first().map(|f| f.len()).unwrap_or(0);
    let mut columns: Vec<String> = vec!["t".to_string()];
    for c in 0..cells {
        columns.push(format!("u{c}"));
    }
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(name, &cols);
    for (i, f) in fields.iter().enumerate() {
        let mut row = Vec::with_capacity(cells + 1);
        row.push(times[i]);
        row.extend_from_slice(f);
        t.push(row);
    }
    t
}

/// Restrict a lattice field (piecewise constant, `n` per axis) to a finer
/// PDE grid with `m` cells per axis, `m % n == 0`.
fn lattice_on_pde_grid(values: &[f64], d: usize, n: usize, m: usize) -> Vec<f64> {
    assert_eq!(m % n, 0);
    let ratio = m / n;
    let md = m.pow(d as u32);
    let mut out = vec![0.0f64; md];
    for (c, o) in out.iter_mut().enumerate() {
        let mut idx = c;
        let mut coords = [0usize; 3];
        for axis in (0..d).rev() {
            coords[axis] = idx % m;
            idx /= m;
        }
        let mut site = 0usize;
        for coord in coords.iter().take(d) {
            site = site * n + coord / ratio;
        }
        *o = values[site];
    }
    out
}

// ---------------------------------------------------------------------------
// hydro
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HydroParams {
    pub d: usize,
    pub alpha: f64,
    pub t_fin: f64,
    pub n_values: Vec<usize>,
    pub chi_rule: ChiRule,
    pub profile: Profile,
    pub replicas: usize,
    pub n_snap: usize,
    pub pde_cells: usize,
    pub deterministic_init: bool,
    pub metric_k: usize,
    /// Exponent of the path error norm (defaults to `alpha`).
    pub error_exponent: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct HydroRow {
    pub n: usize,
    pub chi: f64,
    pub scaling_diag: f64,
    pub err_lalpha: Summary,
    pub sup_metric: Summary,
}

#[derive(Debug, Clone)]
pub struct HydroReport {
    pub rows: Vec<HydroRow>,
}

/// Hydrodynamic-limit experiment: path distance between the simulated
/// empirical density and the PME solution, per `(n, chi)` in the sweep.
pub fn hydro(p: &HydroParams) -> Result<HydroReport> {
    if p.d != 1 {
        return Err(Error::InvalidParam("hydro comparison implemented for d = 1".into()));
    }
    for &n in &p.n_values {
        if p.pde_cells % n != 0 {
            return Err(Error::InvalidParam(format!(
                "pde_cells = {} must be a multiple of n = {n}",
                p.pde_cells
            )));
        }
    }
    let grid = PdeGrid::new(p.d, p.pde_cells)?;
    let u0 = profile_on_grid(&p.profile, p.d, p.pde_cells);
    let pde = solve_pme(&u0, p.alpha, p.t_fin, grid, p.n_snap)?;
    let metric = WeakStarMetric::new(p.d, p.metric_k);
    let err_p = p.error_exponent.unwrap_or(p.alpha);
    let mut rows = Vec::new();
    for (i, &n) in p.n_values.iter().enumerate() {
        let chi = p.chi_rule.chi_for(i, n, p.alpha);
        let scaling = ScalingParams::new(p.d, n, chi, p.alpha, p.t_fin)?;
        let lattice = TorusLattice::from_params(&scaling)?;
        let prof_bar = profile_on_lattice(&p.profile, &lattice)?;
        let mut spec = RunSpec::new(p.t_fin, p.n_snap);
        spec.record_fields = true;
        // Distinct stream block per sweep entry.
        let master = p.seed.wrapping_add((i as u64) << 32);
        let results: Vec<Result<(f64, f64)>> =
            parallel_replicas(master, p.replicas, |_r, mut rng| -> Result<(f64, f64)> {
                let cfg = initial_configuration(
                    &prof_bar,
                    scaling,
                    None,
                    p.deterministic_init,
                    &mut rng,
                )?;
                let out = run(&cfg, None, &spec, &mut rng)?;
                let fields = out.recorder.fields.as_ref().expect("fields recorded");
                let mut sup_d = 0.0f64;
                let mut err_pow = Vec::with_capacity(fields.len());
                for (snap, eta) in fields.iter().enumerate() {
                    let u = &pde.path.fields[snap];
                    sup_d = sup_d.max(metric.distance(eta, n, &u.values, p.pde_cells));
                    let eta_fine = lattice_on_pde_grid(eta, p.d, n, p.pde_cells);
                    let mut acc = 0.0;
                    for (a, b) in eta_fine.iter().zip(&u.values) {
                        acc += (a - b).abs().powf(err_p);
                    }
                    err_pow.push(acc / p.pde_cells as f64);
                }
                let path_err = trapezoid(&pde.path.times, &err_pow).powf(1.0 / err_p);
                Ok((path_err, sup_d))
            });
        let mut errs = Vec::with_capacity(p.replicas);
        let mut sups = Vec::with_capacity(p.replicas);
        for r in results {
            let (e, s) = r?;
            errs.push(e);
            sups.push(s);
        }
        rows.push(HydroRow {
            n,
            chi,
            scaling_diag: scaling.scaling_diagnostic(),
            err_lalpha: summarize(&errs),
            sup_metric: summarize(&sups),
        });
    }
    Ok(HydroReport { rows })
}

pub fn hydro_table(report: &HydroReport) -> Table {
    let mut t = Table::new(
        "hydro",
        &[
            "n",
            "chi",
            "scaling_diag",
            "mean_err_lalpha",
            "stderr_err_lalpha",
            "mean_sup_metric",
            "stderr_sup_metric",
            "replicas",
        ],
    );
    for r in &report.rows {
        t.push(vec![
            r.n as f64,
            r.chi,
            r.scaling_diag,
            r.err_lalpha.mean,
            r.err_lalpha.stderr,
            r.sup_metric.mean,
            r.sup_metric.stderr,
            r.err_lalpha.n as f64,
        ]);
    }
    t
}

// ---------------------------------------------------------------------------
// equilibrium-stats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EquilibriumStatsParams {
    pub alpha: f64,
    pub chis: Vec<f64>,
    /// Density endpoints of the scaled partition difference.
    pub a: f64,
    pub b: f64,
    pub rhos: Vec<f64>,
    /// Lattice size for the finite-`n` cumulant generating function.
    pub cgf_n: usize,
    pub cgf_amp: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumStatsReport {
    pub partition: Table,
    pub moments: Table,
    pub cgf: Table,
}

pub fn equilibrium_stats(p: &EquilibriumStatsParams) -> Result<EquilibriumStatsReport> {
    use crate::equilibrium::{log_cgf_finite_n, scaled_log_partition_diff, SingleSiteMeasure};
    let mut partition = Table::new(
        "equilibrium_partition",
        &["chi", "value", "limit", "abs_err", "lambda_one_err"],
    );
    let limit = p.alpha * (p.b - p.a);
    for &chi in &p.chis {
        let v = scaled_log_partition_diff(p.alpha, p.a, p.b, chi)?;
        let v1 = scaled_log_partition_diff(1.0, p.a, p.b, chi)?;
        partition.push(vec![chi, v, limit, (v - limit).abs(), (v1 - (p.b - p.a)).abs()]);
    }
    let mut moments = Table::new(
        "equilibrium_moments",
        &["alpha", "rho", "chi", "mean", "variance", "mean_abs_err"],
    );
    for &rho in &p.rhos {
        for &chi in &p.chis {
            let m = SingleSiteMeasure::new(rho, chi, p.alpha, None)?;
            let (mean, _) = m.moments();
            moments.push(vec![p.alpha, rho, chi, mean, m.variance(), (mean - rho).abs()]);
        }
    }
    let mut cgf = Table::new("equilibrium_cgf", &["n", "chi", "value", "limit", "abs_err"]);
    let n = p.cgf_n;
    let lattice = TorusLattice::new(1, n)?;
    let amp = p.cgf_amp;
    let psi = move |x: &[f64]| amp * (2.0 * std::f64::consts::PI * x[0]).cos();
    let psi_bar = lattice.cell_averages(psi, 3)?;
    // Quadrature reference for alpha * Int rho (e^{psi/alpha} - 1) at rho = 1.
    let fine = 1 << 14;
    let mut limit_cgf = 0.0;
    for i in 0..fine {
        let x = [(i as f64 + 0.5) / fine as f64];
        limit_cgf += p.alpha * ((psi(&x) / p.alpha).exp() - 1.0);
    }
    limit_cgf /= fine as f64;
    for &chi in &p.chis {
        let scaling = ScalingParams::new(1, n, chi, p.alpha, 1.0)?;
        let field = EquilibriumField::constant(1.0, n);
        let v = log_cgf_finite_n(&psi_bar, &field, scaling)?;
        cgf.push(vec![n as f64, chi, v, limit_cgf, (v - limit_cgf).abs()]);
    }
    Ok(EquilibriumStatsReport { partition, moments, cgf })
}

// ---------------------------------------------------------------------------
// ldp-lower
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LdpParams {
    pub alpha: f64,
    pub n: usize,
    pub chi: f64,
    pub rho: f64,
    pub u0: Profile,
    pub tilt_eps: f64,
    pub tilt_wave: usize,
    pub t_fin: f64,
    pub n_snap: usize,
    pub replicas: usize,
    /// Truncation level of the initial law (density scale).
    pub trunc: f64,
    pub pde_cells: usize,
    pub pde_snaps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LdpReport {
    pub target_static: f64,
    pub target_dynamic: f64,
    pub target_total: f64,
    pub total: Summary,
    pub static_part: Summary,
    pub dynamic_part: Summary,
}

impl LdpReport {
    pub fn gap(&self) -> f64 {
        (self.total.mean - self.target_total).abs()
    }

    pub fn total_in_ci(&self) -> bool {
        self.gap() <= self.total.ci95()
    }

    pub fn static_in_ci(&self) -> bool {
        (self.static_part.mean - self.target_static).abs() <= self.static_part.ci95()
    }

    pub fn dynamic_in_ci(&self) -> bool {
        (self.dynamic_part.mean - self.target_dynamic).abs() <= self.dynamic_part.ci95()
    }
}

/// Tilted-dynamics estimate of the rate function: replica mean of the
/// normalized log Radon-Nikodym derivative against the deterministic target
/// `alpha H_rho(u0) + 1/2 Int Int (u^FP)^alpha |grad h|^2`.
pub fn ldp_lower(p: &LdpParams) -> Result<LdpReport> {
    let scaling = ScalingParams::new(1, p.n, p.chi, p.alpha, p.t_fin)?;
    let lattice = TorusLattice::from_params(&scaling)?;
    let tilt = TiltField::cosine(p.tilt_eps, vec![p.tilt_wave]);
    // Deterministic targets from the Fokker-Planck solution.
    let grid = PdeGrid::new(1, p.pde_cells)?;
    let u0_pde = profile_on_grid(&p.u0, 1, p.pde_cells);
    let fp = solve_fokker_planck(&u0_pde, p.alpha, &tilt, p.t_fin, grid, p.pde_snaps)?;
    let target_static = p.alpha * entropy_const_ref(&u0_pde, p.rho)?;
    let om = 2.0 * std::f64::consts::PI * p.tilt_wave as f64;
    let mut energy = Vec::with_capacity(fp.path.times.len());
    for f in &fp.path.fields {
        let mut acc = 0.0;
        for (c, &u) in f.values.iter().enumerate() {
            let x = (c as f64 + 0.5) / p.pde_cells as f64;
            let grad_h = -p.tilt_eps * om * (om * x).sin();
            acc += half_power(u, 2.0 * p.alpha) * grad_h * grad_h;
        }
        energy.push(acc / p.pde_cells as f64);
    }
    let target_dynamic = 0.5 * trapezoid(&fp.path.times, &energy);

    let u0_bar = profile_on_lattice(&p.u0, &lattice)?;
    let rho_bar = vec![p.rho; p.n];
    let field = EquilibriumField { rho: u0_bar.clone() };
    let eq = LocalEquilibrium::new(&field, scaling, Some(p.trunc))?;
    let spec = RunSpec::new(p.t_fin, p.n_snap);
    let results: Vec<Result<(f64, f64, f64)>> =
        parallel_replicas(p.seed, p.replicas, |_r, mut rng| {
            let cfg = eq.sample(&mut rng);
            let initial = log_density_ratio_initial(&cfg, &u0_bar, &rho_bar, Some(p.trunc))?;
            let out = run(&cfg, Some(&tilt), &spec, &mut rng)?;
            let ledger = out.ledger.expect("tilted run carries a ledger");
            let total = log_rn_derivative(&ledger, initial, scaling);
            Ok((total, initial, total - initial))
        });
    let mut totals = Vec::new();
    let mut statics = Vec::new();
    let mut dynamics = Vec::new();
    for r in results {
        let (t, s, d) = r?;
        totals.push(t);
        statics.push(s);
        dynamics.push(d);
    }
    Ok(LdpReport {
        target_static,
        target_dynamic,
        target_total: target_static + target_dynamic,
        total: summarize(&totals),
        static_part: summarize(&statics),
        dynamic_part: summarize(&dynamics),
    })
}

pub fn ldp_table(r: &LdpReport) -> Table {
    let mut t = Table::new(
        "ldp_lower",
        &[
            "target_static",
            "target_dynamic",
            "target_total",
            "mean_total",
            "stderr_total",
            "mean_static",
            "stderr_static",
            "mean_dynamic",
            "stderr_dynamic",
            "gap",
            "replicas",
        ],
    );
    t.push(vec![
        r.target_static,
        r.target_dynamic,
        r.target_total,
        r.total.mean,
        r.total.stderr,
        r.static_part.mean,
        r.static_part.stderr,
        r.dynamic_part.mean,
        r.dynamic_part.stderr,
        r.gap(),
        r.total.n as f64,
    ]);
    t
}

// ---------------------------------------------------------------------------
// gradient-flow
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradientFlowParams {
    pub alpha: f64,
    pub rho: f64,
    pub u0: Profile,
    /// `None` runs the plain equation; `Some((eps, wave))` the tilted one.
    pub tilt: Option<(f64, usize)>,
    pub t_fin: f64,
    pub pde_cells: usize,
    /// Time nodes of the evaluation path (the solver is run finer).
    pub path_nodes: usize,
    pub k_max: usize,
}

#[derive(Debug, Clone)]
pub struct GradientFlowReport {
    pub rate: RateReport,
    /// Relative residual of the identity against `max(J, static cost)`.
    pub relative_residual: f64,
    /// Relative gap of the rate function under time reversal.
    pub reversal_gap: f64,
    /// The evaluated path (snapshot times and fields), for CSV export.
    pub path_times: Vec<f64>,
    pub path_fields: Vec<Vec<f64>>,
}

pub fn gradient_flow(p: &GradientFlowParams) -> Result<GradientFlowReport> {
    let grid = PdeGrid::new(1, p.pde_cells)?;
    let u0 = profile_on_grid(&p.u0, 1, p.pde_cells);
    let sol: PdeSolution = match p.tilt {
        None => solve_pme(&u0, p.alpha, p.t_fin, grid, p.path_nodes)?,
        Some((eps, wave)) => {
            let tilt = TiltField::cosine(eps, vec![wave]);
            solve_fokker_planck(&u0, p.alpha, &tilt, p.t_fin, grid, p.path_nodes)?
        }
    };
    let path = sol.path.clone();
    let basis = TestBasis::fourier(1, p.k_max)?;
    let rate = gradient_flow_residual(&path, p.alpha, p.rho, &basis)?;
    let scale = rate.dynamic_cost.abs().max(rate.static_cost.abs()).max(1e-12);
    let relative_residual = rate.gradient_flow_residual.abs() / scale;
    // Rate function of the reversed path.
    let rev = time_reverse(&path);
    let dc_rev = dynamic_cost(&rev, p.alpha, &basis)?;
    let h_rev0 = entropy_const_ref(&rev.fields[0], p.rho)?;
    let i_fwd = rate.static_cost + rate.dynamic_cost;
    let i_rev = p.alpha * h_rev0 + dc_rev.value;
    let reversal_gap = (i_fwd - i_rev).abs() / i_fwd.abs().max(1e-12);
    Ok(GradientFlowReport {
        rate,
        relative_residual,
        reversal_gap,
        path_times: path.times.clone(),
        path_fields: path.fields.iter().map(|f| f.values.clone()).collect(),
    })
}

pub fn gradient_flow_table(r: &GradientFlowReport) -> Table {
    let mut t = Table::new(
        "gradient_flow",
        &[
            "static_cost",
            "dynamic_cost",
            "action",
            "dissipation_integral",
            "entropy_initial",
            "entropy_final",
            "residual",
            "relative_residual",
            "reversal_gap",
        ],
    );
    t.push(vec![
        r.rate.static_cost,
        r.rate.dynamic_cost,
        r.rate.action,
        r.rate.dissipation_integral,
        r.rate.entropy_initial,
        r.rate.entropy_final,
        r.rate.gradient_flow_residual,
        r.relative_residual,
        r.reversal_gap,
    ]);
    t
}

// ---------------------------------------------------------------------------
// dissipation-budget
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BudgetParams {
    pub d: usize,
    pub alpha: f64,
    pub n_values: Vec<usize>,
    pub chi_rule: ChiRule,
    pub rho: f64,
    pub t_fin: f64,
    pub n_snap: usize,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BudgetRow {
    pub n: usize,
    pub chi: f64,
    pub scaling_diag: f64,
    pub n2chi: f64,
    pub int_diss: Summary,
    pub path_functional: Summary,
    pub sup_entropy: Summary,
    pub int_lbeta: Summary,
}

#[derive(Debug, Clone)]
pub struct BudgetReport {
    pub rows: Vec<BudgetRow>,
    /// Log-log slope of mean `Int D` against `n^2 chi` across the sweep.
    pub loglog_slope: f64,
    /// Per-snapshot replica mean of the integrated-dissipation surrogate
    /// `(a/2) H(t) + (a/4) Int_0^t D - (a/2) H(0)` at the largest `n`.
    pub surrogate_times: Vec<f64>,
    pub surrogate_means: Vec<f64>,
}

pub fn dissipation_budget(p: &BudgetParams) -> Result<BudgetReport> {
    let beta = interpolation_beta(p.alpha, p.d);
    let mut rows = Vec::new();
    let mut surrogate_times = Vec::new();
    let mut surrogate_means = Vec::new();
    for (i, &n) in p.n_values.iter().enumerate() {
        let chi = p.chi_rule.chi_for(i, n, p.alpha);
        let scaling = ScalingParams::new(p.d, n, chi, p.alpha, p.t_fin)?;
        let field = EquilibriumField::constant(p.rho, scaling.site_count());
        let eq = LocalEquilibrium::new(&field, scaling, None)?;
        let mut spec = RunSpec::new(p.t_fin, p.n_snap);
        spec.entropy_rho = Some(p.rho);
        spec.record_dissipation = true;
        spec.lbeta_integral = Some(beta);
        let master = p.seed.wrapping_add((i as u64) << 32);
        type BudgetSample = (f64, f64, f64, f64, Vec<f64>);
        let results: Vec<Result<BudgetSample>> =
            parallel_replicas(master, p.replicas, |_r, mut rng| {
                let cfg = eq.sample(&mut rng);
                let out = run(&cfg, None, &spec, &mut rng)?;
                let rec = &out.recorder;
                let diss_int = rec.dissipation_integral.as_ref().unwrap();
                let ent = rec.entropy.as_ref().unwrap();
                let f_path = rec.path_functional()?;
                let mut surrogate = Vec::with_capacity(ent.len());
                for s in 0..ent.len() {
                    surrogate.push(
                        0.5 * p.alpha * ent[s] + 0.25 * p.alpha * diss_int[s]
                            - 0.5 * p.alpha * ent[0],
                    );
                }
                Ok((
                    *diss_int.last().unwrap(),
                    f_path,
                    rec.sup_entropy.unwrap(),
                    *rec.lbeta_integral.as_ref().unwrap().last().unwrap(),
                    surrogate,
                ))
            });
        let mut int_diss = Vec::new();
        let mut f_vals = Vec::new();
        let mut sups = Vec::new();
        let mut lbetas = Vec::new();
        let mut surr_acc: Vec<f64> = vec![0.0; p.n_snap + 1];
        for r in results {
            let (di, f, s, lb, surr) = r?;
            int_diss.push(di);
            f_vals.push(f);
            sups.push(s);
            lbetas.push(lb);
            for (t, v) in surr.iter().enumerate() {
                surr_acc[t] += v / p.replicas as f64;
            }
        }
        if i + 1 == p.n_values.len() {
            surrogate_times =
                (0..=p.n_snap).map(|s| p.t_fin * s as f64 / p.n_snap as f64).collect();
            surrogate_means = surr_acc;
        }
        rows.push(BudgetRow {
            n,
            chi,
            scaling_diag: scaling.scaling_diagnostic(),
            n2chi: (n as f64).powi(2) * chi,
            int_diss: summarize(&int_diss),
            path_functional: summarize(&f_vals),
            sup_entropy: summarize(&sups),
            int_lbeta: summarize(&lbetas),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n2chi.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.int_diss.mean.ln()).collect();
    let loglog_slope = if rows.len() >= 2 { slope(&xs, &ys) } else { f64::NAN };
    Ok(BudgetReport { rows, loglog_slope, surrogate_times, surrogate_means })
}

pub fn budget_table(report: &BudgetReport) -> Table {
    let mut t = Table::new(
        "dissipation_budget",
        &[
            "n",
            "chi",
            "scaling_diag",
            "n2chi",
            "mean_int_diss",
            "stderr_int_diss",
            "mean_path_functional",
            "stderr_path_functional",
            "mean_sup_entropy",
            "mean_int_lbeta",
            "replicas",
        ],
    );
    for r in &report.rows {
        t.push(vec![
            r.n as f64,
            r.chi,
            r.scaling_diag,
            r.n2chi,
            r.int_diss.mean,
            r.int_diss.stderr,
            r.path_functional.mean,
            r.path_functional.stderr,
            r.sup_entropy.mean,
            r.int_lbeta.mean,
            r.int_diss.n as f64,
        ]);
    }
    t
}

// ---------------------------------------------------------------------------
// martingale-check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MartingaleParams {
    pub alpha: f64,
    pub n: usize,
    pub chi: f64,
    pub rho: f64,
    pub t_fin: f64,
    pub n_snap: usize,
    /// Cosine wave numbers of the test functions.
    pub waves: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MartingaleRow {
    pub wave: usize,
    pub final_residual: Summary,
    /// |mean| / stderr of the final residual.
    pub zscore: f64,
    pub variance: f64,
    pub qv_bound: f64,
}

pub fn martingale_check(p: &MartingaleParams) -> Result<Vec<MartingaleRow>> {
    let scaling = ScalingParams::new(1, p.n, p.chi, p.alpha, p.t_fin)?;
    let lattice = TorusLattice::from_params(&scaling)?;
    let mut phis = Vec::new();
    for &w in &p.waves {
        let om = 2.0 * std::f64::consts::PI * w as f64;
        phis.push(lattice.cell_averages(|x| (om * x[0]).cos(), 3)?);
    }
    let field = EquilibriumField::constant(p.rho, p.n);
    let eq = LocalEquilibrium::new(&field, scaling, None)?;
    let mut spec = RunSpec::new(p.t_fin, p.n_snap);
    spec.test_functions = phis.clone();
    let n_phis = phis.len();
    let results: Vec<Result<(Vec<f64>, f64)>> =
        parallel_replicas(p.seed, p.replicas, |_r, mut rng| {
            let cfg = eq.sample(&mut rng);
            let out = run(&cfg, None, &spec, &mut rng)?;
            let finals = (0..n_phis)
                .map(|f| Ok(*out.recorder.martingale_residual(f)?.last().unwrap()))
                .collect::<Result<Vec<f64>>>()?;
            Ok((finals, *out.recorder.lalpha_integral.last().unwrap()))
        });
    let mut per_phi: Vec<Vec<f64>> = vec![Vec::new(); n_phis];
    let mut lalpha = Vec::new();
    for r in results {
        let (fins, la) = r?;
        for (f, v) in fins.into_iter().enumerate() {
            per_phi[f].push(v);
        }
        lalpha.push(la);
    }
    let mean_lalpha = summarize(&lalpha).mean;
    let mut rows = Vec::new();
    for (f, vals) in per_phi.iter().enumerate() {
        let s = summarize(vals);
        let qv_bound = qv_bound_constant(&phis[f], &lattice) * p.chi
            / scaling.site_count() as f64
            * mean_lalpha;
        rows.push(MartingaleRow {
            wave: p.waves[f],
            final_residual: s,
            zscore: s.mean.abs() / s.stderr.max(f64::MIN_POSITIVE),
            variance: s.variance,
            qv_bound,
        });
    }
    Ok(rows)
}

pub fn martingale_table(rows: &[MartingaleRow]) -> Table {
    let mut t = Table::new(
        "martingale_check",
        &[
            "wave",
            "mean_final",
            "stderr_final",
            "zscore",
            "variance",
            "qv_bound",
            "var_over_bound",
            "replicas",
        ],
    );
    for r in rows {
        t.push(vec![
            r.wave as f64,
            r.final_residual.mean,
            r.final_residual.stderr,
            r.zscore,
            r.variance,
            r.qv_bound,
            r.variance / r.qv_bound,
            r.final_residual.n as f64,
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_to_pde_grid_nesting() {
        let vals = vec![1.0, 2.0, 3.0, 4.0];
        let fine = lattice_on_pde_grid(&vals, 1, 4, 8);
        assert_eq!(fine, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn equilibrium_stats_tables_have_expected_shape() {
        let p = EquilibriumStatsParams {
            alpha: 2.0,
            chis: vec![1e-1, 1e-2, 1e-3],
            a: 0.5,
            b: 2.0,
            rhos: vec![1.0],
            cgf_n: 32,
            cgf_amp: 0.5,
        };
        let r = equilibrium_stats(&p).unwrap();
        assert_eq!(r.partition.rows.len(), 3);
        // Error decreasing along the chi sweep.
        assert!(r.partition.rows[2][3] < r.partition.rows[0][3]);
        // lambda = 1 rows exact to 1e-12.
        for row in &r.partition.rows {
            assert!(row[4] < 1e-12);
        }
        assert_eq!(r.moments.rows.len(), 3);
        assert!(r.moments.rows[2][5] < r.moments.rows[0][5]);
        assert_eq!(r.cgf.rows.len(), 3);
    }

    #[test]
    fn small_budget_sweep_runs() {
        let p = BudgetParams {
            d: 1,
            alpha: 2.0,
            n_values: vec![8, 16],
            chi_rule: ChiRule::Fixed(0.05),
            rho: 1.0,
            t_fin: 5e-4,
            n_snap: 4,
            replicas: 8,
            seed: 3,
        };
        let r = dissipation_budget(&p).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[1].int_diss.mean > r.rows[0].int_diss.mean);
        assert_eq!(r.surrogate_means.len(), 5);
    }

    #[test]
    fn small_hydro_sweep_error_decreases() {
        let p = HydroParams {
            d: 1,
            alpha: 2.0,
            t_fin: 0.01,
            n_values: vec![8, 32],
            chi_rule: ChiRule::Scaling { c: 1.0 },
            profile: Profile::CosineBump { base: 1.0, amp: 0.5, wave: 1 },
            replicas: 8,
            n_snap: 8,
            pde_cells: 128,
            deterministic_init: false,
            metric_k: 8,
            error_exponent: None,
            seed: 11,
        };
        let r = hydro(&p).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(
            r.rows[1].err_lalpha.mean < r.rows[0].err_lalpha.mean,
            "{:?}",
            r.rows.iter().map(|x| x.err_lalpha.mean).collect::<Vec<_>>()
        );
    }

    #[test]
    fn small_ldp_run_is_consistent() {
        let p = LdpParams {
            alpha: 2.0,
            n: 32,
            chi: 1.0 / 1024.0,
            rho: 1.0,
            u0: Profile::Constant(1.0),
            tilt_eps: 0.2,
            tilt_wave: 1,
            t_fin: 1e-3,
            n_snap: 4,
            replicas: 32,
            trunc: 8.0,
            pde_cells: 128,
            pde_snaps: 32,
            seed: 19,
        };
        let r = ldp_lower(&p).unwrap();
        // u0 = rho: no static cost; dynamic target is order eps^2 * t.
        assert!(r.target_static.abs() < 1e-12);
        assert!(r.target_dynamic > 0.0);
        assert!(
            r.gap() < 5.0 * r.total.stderr + 0.1 * r.target_total,
            "mean = {}, target = {}",
            r.total.mean,
            r.target_total
        );
    }
}
