//! Variational evaluation of the large-deviation cost of a density path:
//! static entropy cost, dynamic cost via a Galerkin restriction of the dual
//! representation, the action of the curve, and the gradient-flow identity
//! tying them together.
//!
//! The dual pairing is `<<phi, psi>>_u = Int Int u^alpha grad phi . grad psi`
//! over space-time. Test functions are tensor products of a real Fourier
//! basis in space and piecewise-linear hats on the path's time grid. The
//! Galerkin value is a certified lower bound that grows monotonically with
//! the basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functionals::{
    continuum_dissipation, entropy_const_ref, half_power, trapezoid, DensityField, DensityPath,
};

/// Fourier-in-space, hat-in-time test basis. Wave vectors run over the half
/// lattice `0 < |k|_inf <= k_max` (first nonzero component positive); each
/// contributes a cosine and a sine mode. The constant spatial mode is kept
/// out of the solve and only used for the mass pre-screen.
#[derive(Debug, Clone)]
pub struct TestBasis {
    pub wave_vectors: Vec<Vec<i64>>,
    pub k_max: usize,
}

impl TestBasis {
    pub fn fourier(d: usize, k_max: usize) -> Result<Self> {
        if d == 0 || d > 3 {
            return Err(Error::InvalidParam(format!("d = {d}, supported 1..=3")));
        }
        if k_max == 0 {
            return Err(Error::InvalidParam("k_max must be >= 1".into()));
        }
        let mut wave_vectors = Vec::new();
        let range = |_: usize| -(k_max as i64)..=(k_max as i64);
        let mut push = |k: Vec<i64>| {
            if k.iter().all(|&c| c == 0) {
                return;
            }
            // Half lattice: first nonzero component positive.
            let first = *k.iter().find(|&&c| c != 0).unwrap();
            if first > 0 {
                wave_vectors.push(k);
            }
        };
        match d {
            1 => {
                for k0 in range(0) {
                    push(vec![k0]);
                }
            }
            2 => {
                for k0 in range(0) {
                    for k1 in range(1) {
                        push(vec![k0, k1]);
                    }
                }
            }
            _ => {
                for k0 in range(0) {
                    for k1 in range(1) {
                        for k2 in range(2) {
                            push(vec![k0, k1, k2]);
                        }
                    }
                }
            }
        }
        Ok(Self { wave_vectors, k_max })
    }

    /// Number of spatial modes (cos and sin per wave vector).
    pub fn spatial_modes(&self) -> usize {
        2 * self.wave_vectors.len()
    }
}

/// Space-time test function with analytic derivatives, as needed by the
/// dual functionals.
pub struct SpaceTimeTestFn<'a> {
    pub value: &'a dyn Fn(f64, &[f64]) -> f64,
    pub dt: &'a dyn Fn(f64, &[f64]) -> f64,
    pub grad: &'a dyn Fn(f64, &[f64], usize) -> f64,
    pub laplacian: &'a dyn Fn(f64, &[f64]) -> f64,
}

fn cell_position(field: &DensityField, cell: usize, out: &mut [f64]) {
    let n = field.cells;
    let mut idx = cell;
    for axis in (0..field.d).rev() {
        out[axis] = ((idx % n) as f64 + 0.5) / n as f64;
        idx /= n;
    }
}

/// Spatial pairing `<f, w>` with `f` sampled at cell centres.
fn pair_with<F>(field_values: &[f64], field: &DensityField, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut pos = vec![0.0f64; field.d];
    let mut acc = 0.0;
    for (c, &w) in field_values.iter().enumerate() {
        cell_position(field, c, &mut pos);
        acc += w * f(&pos);
    }
    acc * field.cell_volume()
}

/// Dual integrand of the dynamic cost:
/// `Xi_1(phi, u) = <phi_T, u_T> - <phi_0, u_0> - Int <dphi/dt, u>
///  - 1/2 Int Int (Lap phi + |grad phi|^2) u^alpha`.
pub fn xi1(phi: &SpaceTimeTestFn, path: &DensityPath, alpha: f64) -> Result<f64> {
    let n = path.times.len();
    let tfin = path.t_fin();
    let u_t = &path.fields[n - 1];
    let u_0 = &path.fields[0];
    let mut total = pair_with(&u_t.values, u_t, |x| (phi.value)(tfin, x))
        - pair_with(&u_0.values, u_0, |x| (phi.value)(0.0, x));
    let mut dt_terms = Vec::with_capacity(n);
    let mut ql_terms = Vec::with_capacity(n);
    for (i, f) in path.fields.iter().enumerate() {
        let t = path.times[i];
        dt_terms.push(pair_with(&f.values, f, |x| (phi.dt)(t, x)));
        let ua: Vec<f64> = f.values.iter().map(|&v| half_power(v, 2.0 * alpha)).collect();
        ql_terms.push(pair_with(&ua, f, |x| {
            let lap = (phi.laplacian)(t, x);
            let g2: f64 = (0..f.d).map(|a| (phi.grad)(t, x, a).powi(2)).sum();
            lap + g2
        }));
    }
    total -= trapezoid(&path.times, &dt_terms);
    total -= 0.5 * trapezoid(&path.times, &ql_terms);
    Ok(total)
}

/// Static dual integrand `Xi_0(psi, u0, rho) = <psi, u0> - alpha Int rho (e^{psi/alpha} - 1)`.
pub fn xi0<F>(psi: F, u0: &DensityField, rho: &DensityField, alpha: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if rho.values.len() != u0.values.len() {
        return Err(Error::InvalidParam("xi0: grid mismatch".into()));
    }
    let mut pos = vec![0.0f64; u0.d];
    let mut acc = 0.0;
    for c in 0..u0.values.len() {
        cell_position(u0, c, &mut pos);
        let p = psi(&pos);
        acc += p * u0.values[c] - alpha * rho.values[c] * ((p / alpha).exp() - 1.0);
    }
    Ok(acc * u0.cell_volume())
}

/// Galerkin data shared by the dynamic cost and the action.
struct Assembly {
    /// Symmetric Gram matrix of `<<., .>>_u` over the tensor basis.
    gram: DMatrix<f64>,
    /// Load vector of the dynamic cost (with the Laplacian term).
    load_dynamic: DVector<f64>,
    /// Load vector of the action (without the Laplacian term).
    load_action: DVector<f64>,
    /// Constant-mode loads per time hat, for the mass pre-screen.
    const_loads: Vec<f64>,
    n_time: usize,
}

fn assemble(path: &DensityPath, alpha: f64, basis: &TestBasis) -> Result<Assembly> {
    for f in &path.fields {
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density path".into()));
        }
    }
    let n_time = path.times.len();
    let n_cells = path.fields[0].values.len();
    let d = path.fields[0].d;
    let spatial = basis.spatial_modes();
    let n_basis = n_time * spatial;
    let vol = path.fields[0].cell_volume();
    let two_pi = 2.0 * std::f64::consts::PI;

    // Tabulate spatial mode values, gradients and Laplacian factors.
    let mut mode_vals = vec![vec![0.0f64; n_cells]; spatial];
    let mut mode_grads = vec![vec![vec![0.0f64; n_cells]; d]; spatial];
    let mut mode_lap = vec![0.0f64; spatial];
    {
        let mut pos = vec![0.0f64; d];
        for (kv_idx, k) in basis.wave_vectors.iter().enumerate() {
            let k2: f64 = k.iter().map(|&c| (c as f64).powi(2)).sum();
            let (cos_idx, sin_idx) = (2 * kv_idx, 2 * kv_idx + 1);
            mode_lap[cos_idx] = -two_pi * two_pi * k2;
            mode_lap[sin_idx] = -two_pi * two_pi * k2;
            for c in 0..n_cells {
                cell_position(&path.fields[0], c, &mut pos);
                let phase: f64 =
                    two_pi * pos.iter().zip(k).map(|(&x, &ki)| x * ki as f64).sum::<f64>();
                let (s, co) = phase.sin_cos();
                mode_vals[cos_idx][c] = co;
                mode_vals[sin_idx][c] = s;
                for axis in 0..d {
                    let kax = two_pi * k[axis] as f64;
                    mode_grads[cos_idx][axis][c] = -kax * s;
                    mode_grads[sin_idx][axis][c] = kax * co;
                }
            }
        }
    }

    // Per-node spatial pairings.
    // p[s][i] = <S_s, u_{t_i}>, q[s][i] = <Lap S_s, u^alpha>, mass[i] = <1, u>,
    // w[i] symmetric spatial Gram kernel <u^alpha grad S_s . grad S_s'>.
    let mut p = vec![vec![0.0f64; n_time]; spatial];
    let mut q = vec![vec![0.0f64; n_time]; spatial];
    let mut mass = vec![0.0f64; n_time];
    let mut w = vec![vec![0.0f64; spatial * spatial]; n_time];
    for i in 0..n_time {
        let f = &path.fields[i];
        let ua: Vec<f64> = f.values.iter().map(|&v| half_power(v, 2.0 * alpha)).collect();
        mass[i] = f.values.iter().sum::<f64>() * vol;
        for s in 0..spatial {
            let mv = &mode_vals[s];
            let mut ps = 0.0;
            let mut qs = 0.0;
            for c in 0..n_cells {
                ps += f.values[c] * mv[c];
                qs += ua[c] * mv[c];
            }
            p[s][i] = ps * vol;
            q[s][i] = mode_lap[s] * qs * vol;
        }
        let wi = &mut w[i];
        for s in 0..spatial {
            for sp in s..spatial {
                let mut acc = 0.0;
                for axis in 0..d {
                    let ga = &mode_grads[s][axis];
                    let gb = &mode_grads[sp][axis];
                    for c in 0..n_cells {
                        acc += ua[c] * ga[c] * gb[c];
                    }
                }
                let v = acc * vol;
                wi[s * spatial + sp] = v;
                wi[sp * spatial + s] = v;
            }
        }
    }

    // Loads. With hats on the path grid and nodal data interpolated
    // linearly, all time integrals below are exact.
    let idx = |m: usize, s: usize| m * spatial + s;
    let mut load_dynamic = DVector::zeros(n_basis);
    let mut load_action = DVector::zeros(n_basis);
    let mut const_loads = vec![0.0f64; n_time];
    let times = &path.times;
    for m in 0..n_time {
        // Boundary terms: hat_m(T) is 1 only for m = K, hat_m(0) only m = 0.
        // Int hat_m'(t) f(t) dt for piecewise-linear f.
        let dt_int = |fvals: &[f64]| -> f64 {
            let mut acc = 0.0;
            if m > 0 {
                acc += 0.5 * (fvals[m - 1] + fvals[m]);
            }
            if m + 1 < n_time {
                acc -= 0.5 * (fvals[m] + fvals[m + 1]);
            }
            acc
        };
        // Int hat_m(t) f(t) dt for piecewise-linear f.
        let hat_int = |fvals: &[f64]| -> f64 {
            let mut acc = 0.0;
            if m > 0 {
                let dt = times[m] - times[m - 1];
                acc += dt * (fvals[m - 1] / 6.0 + fvals[m] / 3.0);
            }
            if m + 1 < n_time {
                let dt = times[m + 1] - times[m];
                acc += dt * (fvals[m] / 3.0 + fvals[m + 1] / 6.0);
            }
            acc
        };
        for s in 0..spatial {
            let mut b = 0.0;
            if m == n_time - 1 {
                b += p[s][n_time - 1];
            }
            if m == 0 {
                b -= p[s][0];
            }
            b -= dt_int(&p[s]);
            let ba = b;
            b -= 0.5 * hat_int(&q[s]);
            load_dynamic[idx(m, s)] = b;
            load_action[idx(m, s)] = ba;
        }
        let mut bc = 0.0;
        if m == n_time - 1 {
            bc += mass[n_time - 1];
        }
        if m == 0 {
            bc -= mass[0];
        }
        bc -= dt_int(&mass);
        const_loads[m] = bc;
    }

    // Gram matrix: Int hat_m hat_m' W(t) dt, block tridiagonal in time.
    let mut gram = DMatrix::zeros(n_basis, n_basis);
    for m in 0..n_time - 1 {
        let dt = times[m + 1] - times[m];
        let w0 = &w[m];
        let w1 = &w[m + 1];
        for s in 0..spatial {
            for sp in 0..spatial {
                let a0 = w0[s * spatial + sp];
                let a1 = w1[s * spatial + sp];
                // Exact integrals of hat products against linear W.
                let ll = dt * (a0 / 4.0 + a1 / 12.0);
                let rr = dt * (a0 / 12.0 + a1 / 4.0);
                let lr = dt * (a0 / 12.0 + a1 / 12.0);
                gram[(idx(m, s), idx(m, sp))] += ll;
                gram[(idx(m + 1, s), idx(m + 1, sp))] += rr;
                gram[(idx(m, s), idx(m + 1, sp))] += lr;
                gram[(idx(m + 1, s), idx(m, sp))] += lr;
            }
        }
    }

    Ok(Assembly { gram, load_dynamic, load_action, const_loads, n_time })
}

/// Relative eigenvalue cutoff of the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-10;
/// Mass pre-screen threshold (relative to `1 + mass`).
const MASS_TOL: f64 = 1e-8;

fn pseudo_solve(gram: &DMatrix<f64>, load: &DVector<f64>) -> (DVector<f64>, f64) {
    let eig = nalgebra::SymmetricEigen::new(gram.clone());
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = PINV_CUTOFF * lam_max.max(f64::MIN_POSITIVE);
    let mut coeff = DVector::zeros(load.len());
    let mut min_eig = f64::INFINITY;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        min_eig = min_eig.min(lam);
        if lam > cut {
            let v = eig.eigenvectors.column(j);
            let proj = v.dot(load) / lam;
            coeff.axpy(proj, &v.into_owned(), 1.0);
        }
    }
    (coeff, min_eig)
}

/// Result of the Galerkin evaluation of the dynamic cost.
#[derive(Debug, Clone)]
pub struct DynamicCost {
    /// Certified lower bound of the dynamic cost.
    pub value: f64,
    /// Coefficients of the optimal potential in the tensor basis
    /// (time-major: `m * spatial + s`).
    pub coefficients: Vec<f64>,
    /// Optimal control `g = u^{alpha/2} grad psi` on the path grid,
    /// `[time][axis][cell]`.
    pub control: Vec<Vec<Vec<f64>>>,
    /// Mass pre-screen verdict: a non-conserving path has infinite cost.
    pub mass_conserved: bool,
    pub min_gram_eigenvalue: f64,
}

fn eval_potential_gradient(
    basis: &TestBasis,
    coeffs: &DVector<f64>,
    path: &DensityPath,
    node: usize,
) -> Vec<Vec<f64>> {
    let f = &path.fields[node];
    let d = f.d;
    let n_cells = f.values.len();
    let spatial = basis.spatial_modes();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = vec![vec![0.0f64; n_cells]; d];
    let mut pos = vec![0.0f64; d];
    for c in 0..n_cells {
        cell_position(f, c, &mut pos);
        for (kv_idx, k) in basis.wave_vectors.iter().enumerate() {
            let phase: f64 =
                two_pi * pos.iter().zip(k).map(|(&x, &ki)| x * ki as f64).sum::<f64>();
            let (s, co) = phase.sin_cos();
            let c_cos = coeffs[node * spatial + 2 * kv_idx];
            let c_sin = coeffs[node * spatial + 2 * kv_idx + 1];
            for axis in 0..d {
                let kax = two_pi * k[axis] as f64;
                out[axis][c] += c_cos * (-kax * s) + c_sin * (kax * co);
            }
        }
    }
    out
}

/// Dynamic cost of a path by the Galerkin-restricted dual problem:
/// assemble `G c = b`, solve in the least-squares sense, return
/// `1/2 c^T G c` together with the reconstructed optimal control.
pub fn dynamic_cost(path: &DensityPath, alpha: f64, basis: &TestBasis) -> Result<DynamicCost> {
    let asm = assemble(path, alpha, basis)?;
    let mass_scale = 1.0 + path.fields[0].mass().abs();
    let mass_conserved =
        asm.const_loads.iter().all(|&b| b.abs() <= MASS_TOL * mass_scale);
    let (coeff, min_eig) = pseudo_solve(&asm.gram, &asm.load_dynamic);
    let value = if mass_conserved { 0.5 * coeff.dot(&asm.load_dynamic) } else { f64::INFINITY };
    let mut control = Vec::with_capacity(asm.n_time);
    for node in 0..asm.n_time {
        let mut grads = eval_potential_gradient(basis, &coeff, path, node);
        let f = &path.fields[node];
        for axis_vals in grads.iter_mut() {
            for (c, v) in axis_vals.iter_mut().enumerate() {
                *v *= half_power(f.values[c], alpha);
            }
        }
        control.push(grads);
    }
    Ok(DynamicCost {
        value,
        coefficients: coeff.iter().cloned().collect(),
        control,
        mass_conserved,
        min_gram_eigenvalue: min_eig,
    })
}

/// Result of the Galerkin evaluation of the action.
#[derive(Debug, Clone)]
pub struct ActionResult {
    pub value: f64,
    pub coefficients: Vec<f64>,
    /// Optimal transport field `theta = 2 u^{alpha/2} grad psi`,
    /// `[time][axis][cell]`, solving the continuity equation
    /// `du/dt + div(u^{alpha/2} theta / 2) = 0` in the Galerkin sense.
    pub theta: Vec<Vec<Vec<f64>>>,
    pub mass_conserved: bool,
}

/// Action of the curve: same Gram, load without the Laplacian term; the
/// continuity-equation convention carries a factor 2 into the optimizer,
/// so the minimal kinetic energy is `2 c^T G c`.
pub fn action(path: &DensityPath, alpha: f64, basis: &TestBasis) -> Result<ActionResult> {
    let asm = assemble(path, alpha, basis)?;
    let mass_scale = 1.0 + path.fields[0].mass().abs();
    let mass_conserved =
        asm.const_loads.iter().all(|&b| b.abs() <= MASS_TOL * mass_scale);
    let (coeff, _) = pseudo_solve(&asm.gram, &asm.load_action);
    let value = if mass_conserved { 2.0 * coeff.dot(&asm.load_action) } else { f64::INFINITY };
    let mut theta = Vec::with_capacity(asm.n_time);
    for node in 0..asm.n_time {
        let mut grads = eval_potential_gradient(basis, &coeff, path, node);
        let f = &path.fields[node];
        for axis_vals in grads.iter_mut() {
            for (c, v) in axis_vals.iter_mut().enumerate() {
                *v *= 2.0 * half_power(f.values[c], alpha);
            }
        }
        theta.push(grads);
    }
    Ok(ActionResult { value, coefficients: coeff.iter().cloned().collect(), theta, mass_conserved })
}

/// Flat report of all rate-function ingredients for one path.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub static_cost: f64,
    pub dynamic_cost: f64,
    pub action: f64,
    pub dissipation_integral: f64,
    pub entropy_initial: f64,
    pub entropy_final: f64,
    pub gradient_flow_residual: f64,
    pub mass_conserved: bool,
}

impl RateReport {
    /// Flat `key = value` text form (17 significant digits).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: f64| {
            s.push_str(&format!("{k} = {v:.16e}\n"));
        };
        put("static_cost", self.static_cost);
        put("dynamic_cost", self.dynamic_cost);
        put("action", self.action);
        put("dissipation_integral", self.dissipation_integral);
        put("entropy_initial", self.entropy_initial);
        put("entropy_final", self.entropy_final);
        put("gradient_flow_residual", self.gradient_flow_residual);
        s.push_str(&format!("mass_conserved = {}\n", self.mass_conserved));
        s
    }
}

/// Time integral of the continuum dissipation along the path (trapezoid).
pub fn dissipation_integral(path: &DensityPath, alpha: f64) -> Result<f64> {
    let vals = path
        .fields
        .iter()
        .map(|f| continuum_dissipation(f, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&path.times, &vals))
}

/// Residual of the entropy gradient-flow identity
/// `J - 1/2 (a H(u_T) - a H(u_0) + (a/2) Int D + 1/2 A)`,
/// which vanishes on solution paths of the controlled equation.
pub fn gradient_flow_residual(
    path: &DensityPath,
    alpha: f64,
    rho: f64,
    basis: &TestBasis,
) -> Result<RateReport> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParam("rho must be a positive constant".into()));
    }
    let dc = dynamic_cost(path, alpha, basis)?;
    let ac = action(path, alpha, basis)?;
    let h0 = entropy_const_ref(&path.fields[0], rho)?;
    let ht = entropy_const_ref(path.fields.last().unwrap(), rho)?;
    let diss = dissipation_integral(path, alpha)?;
    let rhs = 0.5 * (alpha * ht - alpha * h0 + 0.5 * alpha * diss + 0.5 * ac.value);
    Ok(RateReport {
        static_cost: alpha * h0,
        dynamic_cost: dc.value,
        action: ac.value,
        dissipation_integral: diss,
        entropy_initial: h0,
        entropy_final: ht,
        gradient_flow_residual: dc.value - rhs,
        mass_conserved: dc.mass_conserved && ac.mass_conserved,
    })
}

/// Time reversal `(Tu)_{t_i} = u_{t_{K-i}}` on the uniform time grid;
/// a bitwise involution.
pub fn time_reverse(path: &DensityPath) -> DensityPath {
    let mut fields = path.fields.clone();
    fields.reverse();
    DensityPath { times: path.times.clone(), fields }
}
