//! Single-site equilibrium measures of the rescaled process, their partition
//! functions, moments and samplers, and the product (slowly-varying local)
//! equilibria built from them.
//!
//! The single-site weight of `k` particles at local parameter `rho` is
//! `phi^(alpha k) / (k!)^alpha / Z_alpha(phi)` with `phi = rho / chi` and
//! `Z_lambda(phi) = sum_m phi^(lambda m) / (m!)^lambda`. Everything here is
//! evaluated in the log domain; `phi` up to 1e8 stays overflow-free.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{Configuration, ScalingParams, TorusLattice};

/// Terms more than this many nats below the running maximum are dropped.
const TAIL_NATS: f64 = 40.0;

/// `ln(m!)`: cumulative table for small `m`, Stirling series beyond.
pub fn ln_factorial(m: u64) -> f64 {
    const TABLE_LEN: usize = 256;
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0f64; TABLE_LEN];
        let mut acc = 0.0f64;
        let mut comp = 0.0f64;
        for k in 1..TABLE_LEN {
            // Kahan compensation keeps the cumulative sum exact to 1 ulp.
            let y = (k as f64).ln() - comp;
            let s = acc + y;
            comp = (s - acc) - y;
            acc = s;
            t[k] = acc;
        }
        t
    });
    if (m as usize) < TABLE_LEN {
        table[m as usize]
    } else {
        let x = m as f64;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        x * x.ln() - x
            + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
    }
}

#[inline]
fn log_weight(lambda: f64, ln_phi: f64, m: u64) -> f64 {
    lambda * (m as f64 * ln_phi - ln_factorial(m))
}

/// `log Z_lambda(phi)`, by log-sum-exp centred at the modal term
/// `m* = floor(phi)` and summed outward until terms fall `40` nats below
/// the maximum. `Z_lambda(0) = 1` exactly.
pub fn log_partition(lambda: f64, phi: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParam(format!("lambda = {lambda}, need lambda > 0")));
    }
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::InvalidParam(format!("phi = {phi}, need phi >= 0")));
    }
    if phi == 0.0 {
        return Ok(0.0);
    }
    let ln_phi = phi.ln();
    let mode = phi.floor() as u64;
    let w_mode = log_weight(lambda, ln_phi, mode);
    let mut sum = 1.0f64; // exp(w_mode - w_mode)
    let mut m = mode;
    while m > 0 {
        m -= 1;
        let w = log_weight(lambda, ln_phi, m) - w_mode;
        if w < -TAIL_NATS {
            break;
        }
        sum += w.exp();
    }
    let mut m = mode;
    loop {
        m += 1;
        let w = log_weight(lambda, ln_phi, m) - w_mode;
        if w < -TAIL_NATS {
            break;
        }
        sum += w.exp();
    }
    Ok(w_mode + sum.ln())
}

/// `chi * (log Z_lambda(b/chi) - log Z_lambda(a/chi))`; converges to
/// `lambda * (b - a)` as `chi -> 0`.
pub fn scaled_log_partition_diff(lambda: f64, a: f64, b: f64, chi: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidParam(format!("a = {a}, b = {b}, need a, b > 0")));
    }
    if !(chi > 0.0) {
        return Err(Error::InvalidParam(format!("chi = {chi}, need chi > 0")));
    }
    if a == b {
        return Ok(0.0);
    }
    Ok(chi * (log_partition(lambda, b / chi)? - log_partition(lambda, a / chi)?))
}

/// Tabulated single-site measure `pi^N_rho` (optionally conditioned to
/// `eta <= trunc`), with support window chosen adaptively so that dropped
/// terms sit more than 40 nats below the mode.
#[derive(Debug, Clone)]
pub struct SingleSiteMeasure {
    pub rho: f64,
    pub chi: f64,
    pub alpha: f64,
    /// Conditioning level `M` on the density scale, if any.
    pub trunc: Option<f64>,
    /// First particle number in the retained support window.
    m_lo: u64,
    /// Normalized pmf over `m_lo ..= m_lo + pmf.len() - 1`.
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    /// log of the untruncated mass `pi_rho([0, M])`; zero when untruncated.
    log_mass_kept: f64,
}

impl SingleSiteMeasure {
    pub fn new(rho: f64, chi: f64, alpha: f64, trunc: Option<f64>) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParam(format!("rho = {rho}, need rho >= 0")));
        }
        if !(chi > 0.0) || !(alpha >= 1.0) {
            return Err(Error::InvalidParam("need chi > 0 and alpha >= 1".into()));
        }
        if let Some(m) = trunc {
            if !(m > 0.0) {
                return Err(Error::InvalidParam(format!("truncation M = {m}, need M > 0")));
            }
        }
        if rho == 0.0 {
            // Degenerate point mass at zero occupation.
            return Ok(Self {
                rho,
                chi,
                alpha,
                trunc,
                m_lo: 0,
                pmf: vec![1.0],
                cdf: vec![1.0],
                log_mass_kept: 0.0,
            });
        }
        let phi = rho / chi;
        let ln_phi = phi.ln();
        let mode = phi.floor() as u64;
        let w_mode = log_weight(alpha, ln_phi, mode);
        let mut lo = mode;
        while lo > 0 && log_weight(alpha, ln_phi, lo - 1) - w_mode >= -TAIL_NATS {
            lo -= 1;
        }
        let mut hi = mode;
        while log_weight(alpha, ln_phi, hi + 1) - w_mode >= -TAIL_NATS {
            hi += 1;
        }
        // Mass kept by the conditioning, relative to the full normalisation.
        let mut log_mass_kept = 0.0;
        if let Some(m) = trunc {
            let k_cap = (m / chi).floor() as u64;
            if k_cap < lo {
                return Err(Error::InvalidParam(format!(
                    "truncation M = {m} sits below the retained support (need M > rho)"
                )));
            }
            if k_cap < hi {
                let log_z = log_partition(alpha, phi)?;
                let mut kept = 0.0f64;
                for m in lo..=k_cap {
                    kept += (log_weight(alpha, ln_phi, m) - w_mode).exp();
                }
                log_mass_kept = w_mode + kept.ln() - log_z;
                hi = k_cap;
            }
        }
        let mut pmf: Vec<f64> = (lo..=hi)
            .map(|m| (log_weight(alpha, ln_phi, m) - w_mode).exp())
            .collect();
        let total: f64 = pmf.iter().sum();
        for p in &mut pmf {
            *p /= total;
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { rho, chi, alpha, trunc, m_lo: lo, pmf, cdf, log_mass_kept })
    }

    /// Retained support as particle numbers `m_lo ..= m_hi`.
    pub fn support(&self) -> (u64, u64) {
        (self.m_lo, self.m_lo + self.pmf.len() as u64 - 1)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `log pi_rho([0, M])` of the untruncated measure (0 when untruncated).
    pub fn log_mass_kept(&self) -> f64 {
        self.log_mass_kept
    }

    /// Mean and second moment of the density `eta = chi * k`.
    pub fn moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (i, &p) in self.pmf.iter().enumerate() {
            let eta = self.chi * (self.m_lo + i as u64) as f64;
            mean += p * eta;
            second += p * eta * eta;
        }
        (mean, second)
    }

    pub fn variance(&self) -> f64 {
        let (m, s) = self.moments();
        (s - m * m).max(0.0)
    }

    /// Inverse-CDF draw of a particle number.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c < u);
        self.m_lo + idx.min(self.pmf.len() - 1) as u64
    }

    /// Log-pmf of occupation `m` against the *untruncated* normalisation.
    pub fn log_pmf_untruncated(&self, m: u64) -> Result<f64> {
        let phi = self.rho / self.chi;
        if phi == 0.0 {
            return Ok(if m == 0 { 0.0 } else { f64::NEG_INFINITY });
        }
        Ok(log_weight(self.alpha, phi.ln(), m) - log_partition(self.alpha, phi)?)
    }
}

/// Site-indexed positive parameter profile for a product equilibrium.
#[derive(Debug, Clone)]
pub struct EquilibriumField {
    pub rho: Vec<f64>,
}

impl EquilibriumField {
    pub fn constant(rho: f64, site_count: usize) -> Self {
        Self { rho: vec![rho; site_count] }
    }

    /// Cell-averaged profile of a continuous function on the torus.
    pub fn from_function<F>(lattice: &TorusLattice, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        Ok(Self { rho: lattice.cell_averages(f, 3)? })
    }
}

/// Product measure over sites with per-site parameter `rho(x)`, measures
/// cached per distinct parameter value and shareable across threads.
pub struct LocalEquilibrium {
    site_measures: Vec<Arc<SingleSiteMeasure>>,
    scaling: ScalingParams,
}

impl LocalEquilibrium {
    pub fn new(field: &EquilibriumField, scaling: ScalingParams, trunc: Option<f64>) -> Result<Self> {
        if field.rho.len() != scaling.site_count() {
            return Err(Error::InvalidParam("profile length != site count".into()));
        }
        let mut cache: HashMap<u64, Arc<SingleSiteMeasure>> = HashMap::new();
        let mut site_measures = Vec::with_capacity(field.rho.len());
        for &r in &field.rho {
            let key = r.to_bits();
            let m = match cache.get(&key) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(SingleSiteMeasure::new(r, scaling.chi, scaling.alpha, trunc)?);
                    cache.insert(key, m.clone());
                    m
                }
            };
            site_measures.push(m);
        }
        Ok(Self { site_measures, scaling })
    }

    pub fn measure_at(&self, site: usize) -> &SingleSiteMeasure {
        &self.site_measures[site]
    }

    /// Independent per-site inverse-CDF draws; reproducible given the stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let counts = self.site_measures.iter().map(|m| m.sample(rng) as u32).collect();
        Configuration { counts, scaling: self.scaling }
    }
}

/// One-shot sampler from the (possibly truncated) local equilibrium.
pub fn sample_configuration<R: Rng + ?Sized>(
    field: &EquilibriumField,
    scaling: ScalingParams,
    trunc: Option<f64>,
    rng: &mut R,
) -> Result<Configuration> {
    Ok(LocalEquilibrium::new(field, scaling, trunc)?.sample(rng))
}

/// Finite-`N` cumulant generating function of `<psi, eta>` under the local
/// equilibrium, evaluated exactly from partition functions:
/// `(1/n^d) sum_x chi * (log Z_a(rho e^{psi_bar/a}/chi) - log Z_a(rho/chi))`.
///
/// `psi_bar` are the cube averages of the test function.
pub fn log_cgf_finite_n(
    psi_bar: &[f64],
    field: &EquilibriumField,
    scaling: ScalingParams,
) -> Result<f64> {
    if psi_bar.len() != field.rho.len() || psi_bar.len() != scaling.site_count() {
        return Err(Error::InvalidParam("field length mismatch".into()));
    }
    let alpha = scaling.alpha;
    let chi = scaling.chi;
    let mut acc = 0.0;
    for (&p, &r) in psi_bar.iter().zip(&field.rho) {
        let tilted = r * (p / alpha).exp();
        acc += chi * (log_partition(alpha, tilted / chi)? - log_partition(alpha, r / chi)?);
    }
    Ok(acc / scaling.site_count() as f64)
}

/// Normalized log initial density `chi/n^d * log Y_0` of the (conditioned)
/// local equilibrium at profile `u0` against the reference at `rho`:
/// per site `alpha*eta*log(u0/rho) - chi*(log Z(u0/chi) - log Z(rho/chi))
/// - chi*log pi_{u0}([0,M])`.
pub fn log_density_ratio_initial(
    config: &Configuration,
    u0: &[f64],
    rho: &[f64],
    trunc: Option<f64>,
) -> Result<f64> {
    let scaling = config.scaling;
    let nd = scaling.site_count();
    if u0.len() != nd || rho.len() != nd {
        return Err(Error::InvalidParam("profile length mismatch".into()));
    }
    let alpha = scaling.alpha;
    let chi = scaling.chi;
    let mut acc = 0.0;
    let mut cache: HashMap<u64, f64> = HashMap::new();
    for x in 0..nd {
        let (u, r) = (u0[x], rho[x]);
        if !(u > 0.0) || !(r > 0.0) {
            return Err(Error::InvalidParam(format!(
                "profiles must be strictly positive, got u0 = {u}, rho = {r}"
            )));
        }
        let eta = config.density(x);
        acc += alpha * eta * (u / r).ln();
        acc -= scaled_log_partition_diff(alpha, r, u, chi)?;
        if let Some(m) = trunc {
            if eta > m {
                return Err(Error::InvalidParam(format!(
                    "configuration exceeds truncation: eta = {eta} > M = {m}"
                )));
            }
            let key = u.to_bits();
            let log_kept = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let v = SingleSiteMeasure::new(u, chi, alpha, Some(m))?.log_mass_kept();
                    cache.insert(key, v);
                    v
                }
            };
            acc -= chi * log_kept;
        }
    }
    Ok(acc / nd as f64)
}

/// Per-transition detailed-balance residual for a jump moving one particle
/// from a site with `k_from >= 1` particles to one with `k_to`:
/// `[log pi(post) + log rate(post -> pre)] - [log pi(pre) + log rate(pre -> post)]`
/// with the occupancy-dependent rate factor `eta^alpha`. Vanishes identically
/// for the product equilibrium at constant `rho`.
pub fn detailed_balance_residual(
    rho: f64,
    chi: f64,
    alpha: f64,
    k_from: u64,
    k_to: u64,
) -> f64 {
    assert!(k_from >= 1);
    let phi = rho / chi;
    let ln_phi = phi.ln();
    let lw = |m: u64| log_weight(alpha, ln_phi, m);
    lw(k_from - 1) + lw(k_to + 1) - lw(k_from) - lw(k_to)
        + alpha * (chi * (k_to + 1) as f64).ln()
        - alpha * (chi * k_from as f64).ln()
}
