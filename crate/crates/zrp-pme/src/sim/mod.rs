//! Event-driven continuous-time simulation of the rescaled zero-range
//! process: a particle leaves site `x` at rate `d n^2 chi^(alpha-1) k(x)^alpha`
//! and moves to a uniformly chosen nearest neighbour. Optional exponential
//! tilting multiplies the `x -> y` rate by `exp(hbar_t(y) - hbar_t(x))`,
//! implemented by Poisson thinning against a fixed envelope so no
//! time-discretization error enters. A jump ledger accumulates the two
//! functionals needed for the Radon-Nikodym derivative of the tilted law.

pub mod rate_tree;

use rand::Rng;

use crate::error::{Error, Result};
use crate::functionals::half_power;
use crate::lattice::{gauss_legendre, Configuration, ScalingParams, TorusLattice};
use crate::tilt::TiltField;
use rate_tree::RateTree;

const REBUILD_PERIOD: u64 = 1_000_000;

#[inline]
fn pow_alpha(k: f64, alpha: f64) -> f64 {
    if alpha == 2.0 {
        k * k
    } else if alpha == 1.0 {
        k
    } else if alpha == 3.0 {
        k * k * k
    } else if alpha == 1.5 {
        k * k.sqrt()
    } else if k == 0.0 {
        0.0
    } else {
        k.powf(alpha)
    }
}

/// One (possibly thinned) candidate event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    /// False when the tilted thinning rejected the candidate.
    pub accepted: bool,
}

/// Running Radon-Nikodym functionals of a tilted run.
#[derive(Debug, Clone, Default)]
pub struct JumpLedger {
    /// Sum of `hbar_s(y) - hbar_s(x)` over accepted jumps.
    pub a1: f64,
    /// Time integral of the exponential generator applied to the flux
    /// functional (an intensive quantity, no further normalization).
    pub a2: f64,
    /// Optional full jump list `(time, from, to)`.
    pub jumps: Option<Vec<(f64, u32, u32)>>,
}

/// `chi/n^d * log(Y_0 * Z_tfin)`: the normalized log Radon-Nikodym
/// derivative of the tilted measure, assembled from the ledger and the
/// initial-density term.
pub fn log_rn_derivative(
    ledger: &JumpLedger,
    initial_ratio: f64,
    scaling: ScalingParams,
) -> f64 {
    initial_ratio + scaling.chi / scaling.site_count() as f64 * ledger.a1 - ledger.a2
}

/// Binary jump-log framing: little-endian records of
/// `f64 time, u32 source, u32 target` (16 bytes per jump), no header.
pub fn write_jump_log<W: std::io::Write>(
    jumps: &[(f64, u32, u32)],
    w: &mut W,
) -> crate::error::Result<()> {
    for &(t, from, to) in jumps {
        w.write_all(&t.to_le_bytes())?;
        w.write_all(&from.to_le_bytes())?;
        w.write_all(&to.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_jump_log<R: std::io::Read>(r: &mut R) -> crate::error::Result<Vec<(f64, u32, u32)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 16 != 0 {
        return Err(Error::InvalidParam(format!(
            "jump log length {} is not a multiple of 16",
            buf.len()
        )));
    }
    let mut out = Vec::with_capacity(buf.len() / 16);
    for rec in buf.chunks_exact(16) {
        let t = f64::from_le_bytes(rec[0..8].try_into().unwrap());
        let from = u32::from_le_bytes(rec[8..12].try_into().unwrap());
        let to = u32::from_le_bytes(rec[12..16].try_into().unwrap());
        out.push((t, from, to));
    }
    Ok(out)
}

/// Per-site tables of a (statically precomputed) tilt.
struct TiltContext {
    field: TiltField,
    /// Log of the thinning envelope factor.
    env_log: f64,
    /// Static tables (time-independent tilts only).
    hbar: Option<Vec<f64>>,
    dh: Option<Vec<f64>>,
    accept: Option<Vec<f64>>,
    ghat_w: Option<Vec<f64>>,
}

impl TiltContext {
    fn build(field: &TiltField, lattice: &TorusLattice) -> Result<Self> {
        if field.time_dependent {
            return Ok(Self {
                field: field.clone(),
                env_log: field.osc,
                hbar: None,
                dh: None,
                accept: None,
                ghat_w: None,
            });
        }
        let nd = lattice.site_count();
        let w = 2 * lattice.dim();
        let hbar = lattice.cell_averages(|x| field.value(0.0, x), 3)?;
        let mut dh = vec![0.0f64; nd * w];
        let mut env_log = 0.0f64;
        for x in 0..nd {
            for (j, &y) in lattice.neighbor_slice(x).iter().enumerate() {
                let v = hbar[y as usize] - hbar[x];
                dh[x * w + j] = v;
                env_log = env_log.max(v);
            }
        }
        let accept: Vec<f64> = dh.iter().map(|&v| (v - env_log).exp()).collect();
        let nf = lattice.sites_per_axis() as f64;
        let pref = lattice.dim() as f64 / nf.powi(lattice.dim() as i32 - 2)
            / (2.0 * lattice.dim() as f64);
        let ghat_w: Vec<f64> = (0..nd)
            .map(|x| {
                let mut acc = 0.0;
                for j in 0..w {
                    acc += dh[x * w + j].exp_m1();
                }
                pref * acc
            })
            .collect();
        Ok(Self {
            field: field.clone(),
            env_log,
            hbar: Some(hbar),
            dh: Some(dh),
            accept: Some(accept),
            ghat_w: Some(ghat_w),
        })
    }

    fn hbar_at(&self, lattice: &TorusLattice, t: f64, site: usize) -> f64 {
        match &self.hbar {
            Some(h) => h[site],
            None => lattice
                .cell_average(|x| self.field.value(t, x), site, 3)
                .expect("site index valid"),
        }
    }
}

/// What to record along a run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub t_fin: f64,
    pub n_snap: usize,
    pub record_fields: bool,
    /// Cell-averaged test functions; enables pairing and generator series.
    pub test_functions: Vec<Vec<f64>>,
    /// Reference density for the entropy series.
    pub entropy_rho: Option<f64>,
    pub record_dissipation: bool,
    /// Record the time integral of the `L^beta` norm to this exponent.
    pub lbeta_integral: Option<f64>,
    /// Exponents of `L^p` norms recorded at every snapshot.
    pub lp_exponents: Vec<f64>,
    pub record_jump_list: bool,
    /// Debug switch: zero all rates, keeping the path frozen.
    pub frozen: bool,
}

impl RunSpec {
    pub fn new(t_fin: f64, n_snap: usize) -> Self {
        Self {
            t_fin,
            n_snap: n_snap.max(1),
            record_fields: false,
            test_functions: Vec::new(),
            entropy_rho: None,
            record_dissipation: false,
            lbeta_integral: None,
            lp_exponents: Vec::new(),
            record_jump_list: false,
            frozen: false,
        }
    }
}

/// Snapshots and accumulated observables of one run (right-continuous
/// values at the uniform snapshot grid).
#[derive(Debug, Clone)]
pub struct PathRecorder {
    pub times: Vec<f64>,
    pub fields: Option<Vec<Vec<f64>>>,
    pub mass: Vec<f64>,
    pub entropy: Option<Vec<f64>>,
    pub sup_entropy: Option<f64>,
    pub dissipation: Option<Vec<f64>>,
    /// Exact `Int_0^t D ds` at snapshot times (rates constant between jumps).
    pub dissipation_integral: Option<Vec<f64>>,
    /// `<phi_i, eta_t>` per test function per snapshot.
    pub pairings: Vec<Vec<f64>>,
    /// `Int_0^t L F^{phi_i} ds` per test function per snapshot (exact).
    pub generator_integrals: Vec<Vec<f64>>,
    /// `Int_0^t ||eta||_{L^alpha}^alpha ds` at snapshot times.
    pub lalpha_integral: Vec<f64>,
    pub lbeta_integral: Option<Vec<f64>>,
    /// `||eta_t||_{L^p}` per requested exponent per snapshot.
    pub lp_norms: Vec<Vec<f64>>,
    pub events: u64,
    pub final_config: Configuration,
}

impl PathRecorder {
    /// Martingale residual `M_t = <phi, eta_t> - <phi, eta_0> - Int L F ds`
    /// at snapshot times for the `idx`-th registered test function.
    pub fn martingale_residual(&self, idx: usize) -> Result<Vec<f64>> {
        if idx >= self.pairings.len() {
            return Err(Error::MissingObservable(format!("test function {idx}")));
        }
        let p = &self.pairings[idx];
        let g = &self.generator_integrals[idx];
        Ok((0..p.len()).map(|i| p[i] - p[0] - g[i]).collect())
    }

    /// Pathwise functional `sup_t H + Int D dt` from the recorded series.
    pub fn path_functional(&self) -> Result<f64> {
        let sup = self.sup_entropy.ok_or(Error::MissingObservable("entropy".into()))?;
        let diss = self
            .dissipation_integral
            .as_ref()
            .ok_or(Error::MissingObservable("dissipation".into()))?;
        Ok(sup + diss.last().copied().unwrap_or(0.0))
    }
}

/// Quadratic-variation bound constant `C(phi) = d * max_pairs n^2 (dphi)^2`
/// entering `Var M_t <= C (chi/n^d) E Int ||eta||_alpha^alpha`.
pub fn qv_bound_constant(phi_bar: &[f64], lattice: &TorusLattice) -> f64 {
    let n2 = (lattice.sites_per_axis() as f64).powi(2);
    let mut worst = 0.0f64;
    for x in 0..lattice.site_count() {
        for &y in lattice.neighbor_slice(x) {
            worst = worst.max(n2 * (phi_bar[y as usize] - phi_bar[x]).powi(2));
        }
    }
    lattice.dim() as f64 * worst
}

/// Live observable accumulators, updated per event and re-synced exactly at
/// rebuild checkpoints.
struct ObsState {
    chi: f64,
    chi_alpha: f64,
    alpha: f64,
    nd: f64,
    // Per test function: cell averages, generator weights, live sums.
    phi_bar: Vec<Vec<f64>>,
    psi_gen: Vec<Vec<f64>>,
    pair_sum: Vec<f64>,
    gen_sum: Vec<f64>,
    gen_integral: Vec<f64>,
    gen_rate_factor: f64,
    // Entropy.
    entropy_rho: Option<f64>,
    h_sum: f64,
    sup_h: f64,
    // Dissipation.
    record_diss: bool,
    d_sum: f64,
    diss_norm: f64,
    diss_integral: f64,
    edge_weight: f64,
    // L^alpha and L^beta integrals.
    lalpha_integral: f64,
    beta: Option<f64>,
    rbeta_sum: f64,
    lbeta_integral: f64,
}

impl ObsState {
    fn new(
        spec: &RunSpec,
        config: &Configuration,
        lattice: &TorusLattice,
        tilt: Option<&TiltContext>,
        rate_scale: f64,
    ) -> ObsState {
        let p = config.scaling;
        let nd = p.site_count() as f64;
        let two_d = 2 * p.d;
        let mut psi_gen = Vec::new();
        for phi in &spec.test_functions {
            // Generator weight per site: mean over directions of the pairing
            // increment, tilted when a static tilt is active.
            let mut w = vec![0.0f64; p.site_count()];
            for (x, wx) in w.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &y) in lattice.neighbor_slice(x).iter().enumerate() {
                    let dphi = phi[y as usize] - phi[x];
                    let factor = match tilt.and_then(|tc| tc.dh.as_ref()) {
                        Some(dh) => dh[x * two_d + j].exp(),
                        None => 1.0,
                    };
                    acc += factor * dphi;
                }
                *wx = acc / two_d as f64;
            }
            psi_gen.push(w);
        }
        let diss_norm = 1.0 / (p.alpha * (p.n as f64).powi(p.d as i32 - 2));
        let mut obs = ObsState {
            chi: p.chi,
            chi_alpha: half_power(p.chi, 2.0 * p.alpha),
            alpha: p.alpha,
            nd,
            phi_bar: spec.test_functions.clone(),
            psi_gen,
            pair_sum: vec![0.0; spec.test_functions.len()],
            gen_sum: vec![0.0; spec.test_functions.len()],
            gen_integral: vec![0.0; spec.test_functions.len()],
            gen_rate_factor: rate_scale * p.chi / nd,
            entropy_rho: spec.entropy_rho,
            h_sum: 0.0,
            sup_h: f64::NEG_INFINITY,
            record_diss: spec.record_dissipation,
            d_sum: 0.0,
            diss_norm,
            diss_integral: 0.0,
            edge_weight: if p.n == 2 { 0.5 } else { 1.0 },
            lalpha_integral: 0.0,
            beta: spec.lbeta_integral,
            rbeta_sum: 0.0,
            lbeta_integral: 0.0,
        };
        obs.resync(config, lattice);
        obs
    }

    fn entropy_term(&self, k: u32) -> f64 {
        let rho = self.entropy_rho.unwrap();
        let s = self.chi * k as f64 / rho;
        if s == 0.0 {
            rho
        } else {
            rho * (s * s.ln() - s + 1.0)
        }
    }

    /// Recompute all live sums exactly from the configuration.
    fn resync(&mut self, config: &Configuration, lattice: &TorusLattice) {
        for f in 0..self.phi_bar.len() {
            let mut q = 0.0;
            let mut g = 0.0;
            for x in 0..config.counts.len() {
                let k = config.counts[x] as f64;
                q += k * self.phi_bar[f][x];
                g += pow_alpha(k, self.alpha) * self.psi_gen[f][x];
            }
            self.pair_sum[f] = q;
            self.gen_sum[f] = g;
        }
        if self.entropy_rho.is_some() {
            self.h_sum = config.counts.iter().map(|&k| self.entropy_term(k)).sum();
            self.sup_h = self.sup_h.max(self.h_sum / self.nd);
        }
        if self.record_diss {
            self.d_sum = 0.0;
            let n = lattice.sites_per_axis();
            let d = lattice.dim();
            for x in 0..config.counts.len() {
                let hx = half_power(self.chi * config.counts[x] as f64, self.alpha);
                for axis in 0..d {
                    let s = n.pow((d - 1 - axis) as u32);
                    let block = s * n;
                    let off = x - (x / block) * block;
                    let y = if off + s < block { x + s } else { x + s - block };
                    let hy = half_power(self.chi * config.counts[y] as f64, self.alpha);
                    self.d_sum += self.edge_weight * (hx - hy) * (hx - hy);
                }
            }
        }
        if let Some(beta) = self.beta {
            self.rbeta_sum =
                config.counts.iter().map(|&k| (k as f64).powf(beta)).sum();
        }
    }

    #[inline]
    fn dissipation(&self) -> f64 {
        self.d_sum * self.diss_norm
    }

    #[inline]
    fn entropy(&self) -> f64 {
        self.h_sum / self.nd
    }

    /// Advance the time integrals over an interval of constant state.
    #[inline]
    fn integrate(&mut self, dt: f64, sum_k_alpha: f64) {
        for f in 0..self.gen_sum.len() {
            self.gen_integral[f] += self.gen_rate_factor * self.gen_sum[f] * dt;
        }
        if self.record_diss {
            self.diss_integral += self.dissipation() * dt;
        }
        self.lalpha_integral += self.chi_alpha / self.nd * sum_k_alpha * dt;
        if let Some(beta) = self.beta {
            self.lbeta_integral += self.chi.powf(beta) / self.nd * self.rbeta_sum * dt;
        }
    }

    /// Apply a jump `x -> y` with pre-jump counts `kx, ky`; neighbour data
    /// of the lattice is needed to refresh the local dissipation edges.
    #[inline]
    fn on_jump(
        &mut self,
        x: usize,
        y: usize,
        kx: u32,
        ky: u32,
        config: &Configuration,
        lattice: &TorusLattice,
    ) {
        let kxf = kx as f64;
        let kyf = ky as f64;
        for f in 0..self.phi_bar.len() {
            self.pair_sum[f] += self.phi_bar[f][y] - self.phi_bar[f][x];
            self.gen_sum[f] += (pow_alpha(kxf - 1.0, self.alpha) - pow_alpha(kxf, self.alpha))
                * self.psi_gen[f][x]
                + (pow_alpha(kyf + 1.0, self.alpha) - pow_alpha(kyf, self.alpha))
                    * self.psi_gen[f][y];
        }
        if self.entropy_rho.is_some() {
            self.h_sum += self.entropy_term(kx - 1) - self.entropy_term(kx)
                + self.entropy_term(ky + 1) - self.entropy_term(ky);
            let h = self.h_sum / self.nd;
            if h > self.sup_h {
                self.sup_h = h;
            }
        }
        if self.record_diss {
            // Recompute the deduplicated set of edges incident to x or y.
            self.d_sum += self.local_edge_delta(x, y, kx, ky, config, lattice);
        }
        if let Some(beta) = self.beta {
            self.rbeta_sum += (kxf - 1.0).powf(beta) - kxf.powf(beta)
                + (kyf + 1.0).powf(beta)
                - kyf.powf(beta);
        }
    }

    fn local_edge_delta(
        &self,
        x: usize,
        y: usize,
        kx: u32,
        ky: u32,
        config: &Configuration,
        lattice: &TorusLattice,
    ) -> f64 {
        // Old/new half-power values at the two touched sites.
        let old_h = |site: usize| -> f64 {
            half_power(self.chi * config.counts[site] as f64, self.alpha)
        };
        let new_h = |site: usize| -> f64 {
            let k = if site == x {
                kx - 1
            } else if site == y {
                ky + 1
            } else {
                config.counts[site]
            };
            half_power(self.chi * k as f64, self.alpha)
        };
        let mut delta = 0.0;
        let mut seen: [(usize, usize); 12] = [(usize::MAX, usize::MAX); 12];
        let mut n_seen = 0usize;
        for &z in &[x, y] {
            for &wsite in lattice.neighbor_slice(z) {
                let wsite = wsite as usize;
                let key = (z.min(wsite), z.max(wsite));
                if seen[..n_seen].contains(&key) {
                    continue;
                }
                seen[n_seen] = key;
                n_seen += 1;
                let old = old_h(key.0) - old_h(key.1);
                let new = new_h(key.0) - new_h(key.1);
                delta += self.edge_weight * (new * new - old * old);
            }
        }
        delta
    }
}

/// Mutable simulation state: configuration, clock, rate tree, optional tilt.
pub struct SimState {
    pub config: Configuration,
    pub t: f64,
    lattice: TorusLattice,
    tree: RateTree,
    rate_scale: f64,
    alpha: f64,
    k_cap: u32,
    tilt: Option<TiltContext>,
    pub events: u64,
    events_since_rebuild: u64,
    pub max_tree_drift: f64,
}

impl SimState {
    pub fn new(config: Configuration, tilt: Option<&TiltField>) -> Result<Self> {
        let p = config.scaling;
        let lattice = TorusLattice::from_params(&p)?;
        let nf = p.n as f64;
        // Per-site exit rate d n^2 chi^(alpha-1) k^alpha.
        let rate_scale = p.d as f64 * nf * nf * p.chi.powf(p.alpha - 1.0);
        if !rate_scale.is_finite() || rate_scale <= 0.0 {
            return Err(Error::InvalidParam(format!("degenerate rate scale {rate_scale}")));
        }
        let k_cap_f = (1e300 / rate_scale).powf(1.0 / p.alpha);
        let k_cap = if k_cap_f >= u32::MAX as f64 { u32::MAX - 1 } else { k_cap_f as u32 };
        for (x, &k) in config.counts.iter().enumerate() {
            if k > k_cap {
                return Err(Error::RateOverflow { site: x, count: k as u64 });
            }
        }
        let rates: Vec<f64> = config
            .counts
            .iter()
            .map(|&k| rate_scale * pow_alpha(k as f64, p.alpha))
            .collect();
        let tree = RateTree::new(&rates);
        let tilt_ctx = match tilt {
            Some(f) => Some(TiltContext::build(f, &lattice)?),
            None => None,
        };
        Ok(Self {
            config,
            t: 0.0,
            lattice,
            tree,
            rate_scale,
            alpha: p.alpha,
            k_cap,
            tilt: tilt_ctx,
            events: 0,
            events_since_rebuild: 0,
            max_tree_drift: 0.0,
        })
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    fn envelope_factor(&self) -> f64 {
        match &self.tilt {
            Some(tc) => tc.env_log.exp(),
            None => 1.0,
        }
    }

    /// One candidate event: advances the clock and, if accepted, moves a
    /// particle and updates the rate tree. Errors in the absorbing state.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<JumpEvent> {
        let total = self.tree.total();
        if total <= 0.0 {
            return Err(Error::AbsorbingState { t: self.t });
        }
        let env_rate = total * self.envelope_factor();
        let u: f64 = 1.0 - rng.random::<f64>();
        self.t += -u.ln() / env_rate;
        let target = rng.random::<f64>() * total;
        let x = self.tree.sample(target);
        let dir = rng.random_range(0..2 * self.lattice.dim());
        let y = self.lattice.neighbor_slice(x)[dir] as usize;
        let accepted = match &self.tilt {
            None => true,
            Some(tc) => {
                let acc = match &tc.accept {
                    Some(table) => table[x * 2 * self.lattice.dim() + dir],
                    None => {
                        let hy = tc.hbar_at(&self.lattice, self.t, y);
                        let hx = tc.hbar_at(&self.lattice, self.t, x);
                        (hy - hx - tc.env_log).exp()
                    }
                };
                rng.random::<f64>() < acc
            }
        };
        if accepted {
            self.apply_jump(x, y)?;
        }
        Ok(JumpEvent { t: self.t, from: x, to: y, accepted })
    }

    fn apply_jump(&mut self, x: usize, y: usize) -> Result<()> {
        let kx = self.config.counts[x];
        let ky = self.config.counts[y];
        debug_assert!(kx >= 1);
        if ky + 1 > self.k_cap {
            return Err(Error::RateOverflow { site: y, count: ky as u64 + 1 });
        }
        self.config.counts[x] = kx - 1;
        self.config.counts[y] = ky + 1;
        self.tree.set(x, self.rate_scale * pow_alpha(kx as f64 - 1.0, self.alpha));
        self.tree.set(y, self.rate_scale * pow_alpha(ky as f64 + 1.0, self.alpha));
        self.events += 1;
        self.events_since_rebuild += 1;
        if self.events_since_rebuild >= REBUILD_PERIOD {
            let drift = self.tree.rebuild();
            self.max_tree_drift = self.max_tree_drift.max(drift);
            self.events_since_rebuild = 0;
        }
        Ok(())
    }

    /// Tilted-generator value `Ghat F` at the current state and time `t`
    /// (used for the ledger integral with time-dependent tilts).
    fn ghat_now(&self, t: f64) -> f64 {
        let tc = self.tilt.as_ref().expect("tilted run");
        let p = self.config.scaling;
        let nf = p.n as f64;
        match &tc.ghat_w {
            Some(w) => {
                let mut acc = 0.0;
                for (x, &k) in self.config.counts.iter().enumerate() {
                    if k > 0 {
                        acc += pow_alpha(k as f64, self.alpha) * w[x];
                    }
                }
                half_power(p.chi, 2.0 * self.alpha) * acc
            }
            None => {
                let pref = p.d as f64 / nf.powi(p.d as i32 - 2) / (2.0 * p.d as f64);
                let mut acc = 0.0;
                for (x, &k) in self.config.counts.iter().enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let hx = tc.hbar_at(&self.lattice, t, x);
                    let mut s = 0.0;
                    for &y in self.lattice.neighbor_slice(x) {
                        let hy = tc.hbar_at(&self.lattice, t, y as usize);
                        s += (hy - hx).exp_m1();
                    }
                    acc += pow_alpha(k as f64, self.alpha)
                        * half_power(p.chi, 2.0 * self.alpha)
                        * pref
                        * s;
                }
                acc
            }
        }
    }

    /// Ledger integrand over `[t0, t1]`: exact for static tilts, 4-point
    /// Gauss in time otherwise (exact for `h` polynomial of degree <= 7).
    fn ledger_interval(&self, t0: f64, t1: f64) -> f64 {
        let tc = self.tilt.as_ref().expect("tilted run");
        if tc.ghat_w.is_some() {
            self.ghat_now(t0) * (t1 - t0)
        } else {
            let (nodes, weights) = gauss_legendre(4).expect("fixed order");
            let mid = 0.5 * (t0 + t1);
            let half = 0.5 * (t1 - t0);
            let mut acc = 0.0;
            for (xi, wi) in nodes.iter().zip(&weights) {
                acc += wi * self.ghat_now(mid + half * xi);
            }
            acc * half
        }
    }
}

/// Output of a full run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub recorder: PathRecorder,
    pub ledger: Option<JumpLedger>,
    pub max_tree_drift: f64,
}

/// Simulate on `[0, t_fin]`, recording snapshots and observables on the
/// uniform grid; deterministic given the RNG stream.
pub fn run<R: Rng + ?Sized>(
    initial: &Configuration,
    tilt: Option<&TiltField>,
    spec: &RunSpec,
    rng: &mut R,
) -> Result<RunOutput> {
    let mut state = SimState::new(initial.clone(), tilt)?;
    let mut obs = ObsState::new(spec, &state.config, &state.lattice, state.tilt.as_ref(), state.rate_scale);
    let mut ledger = state.tilt.as_ref().map(|_| JumpLedger {
        a1: 0.0,
        a2: 0.0,
        jumps: if spec.record_jump_list { Some(Vec::new()) } else { None },
    });
    // Live sum k^alpha * w(x) driving the ledger integral for static tilts.
    let static_ghat: Option<Vec<f64>> =
        state.tilt.as_ref().and_then(|tc| tc.ghat_w.clone());
    let chi_alpha = half_power(initial.scaling.chi, 2.0 * initial.scaling.alpha);
    let alpha = initial.scaling.alpha;
    let mut s_ghat = match &static_ghat {
        Some(w) => state
            .config
            .counts
            .iter()
            .zip(w)
            .map(|(&k, &wx)| pow_alpha(k as f64, alpha) * wx)
            .sum::<f64>(),
        None => 0.0,
    };

    let n_snap = spec.n_snap;
    let snap_times: Vec<f64> =
        (0..=n_snap).map(|i| spec.t_fin * i as f64 / n_snap as f64).collect();
    let mut rec = PathRecorder {
        times: snap_times.clone(),
        fields: if spec.record_fields { Some(Vec::with_capacity(n_snap + 1)) } else { None },
        mass: Vec::with_capacity(n_snap + 1),
        entropy: spec.entropy_rho.map(|_| Vec::with_capacity(n_snap + 1)),
        sup_entropy: None,
        dissipation: if spec.record_dissipation { Some(Vec::new()) } else { None },
        dissipation_integral: if spec.record_dissipation { Some(Vec::new()) } else { None },
        pairings: vec![Vec::with_capacity(n_snap + 1); spec.test_functions.len()],
        generator_integrals: vec![Vec::with_capacity(n_snap + 1); spec.test_functions.len()],
        lalpha_integral: Vec::with_capacity(n_snap + 1),
        lbeta_integral: spec.lbeta_integral.map(|_| Vec::new()),
        lp_norms: vec![Vec::with_capacity(n_snap + 1); spec.lp_exponents.len()],
        events: 0,
        final_config: initial.clone(),
    };
    if !spec.test_functions.is_empty()
        && state.tilt.as_ref().is_some_and(|tc| tc.dh.is_none())
    {
        return Err(Error::InvalidParam(
            "generator observables need a time-independent tilt (or none)".into(),
        ));
    }

    let chi = initial.scaling.chi;
    let nd = initial.scaling.site_count() as f64;
    let record_snapshot = |state: &SimState, obs: &ObsState, rec: &mut PathRecorder| {
        if let Some(fields) = rec.fields.as_mut() {
            fields.push(state.config.density_field());
        }
        rec.mass.push(state.config.total_mass());
        if let Some(es) = rec.entropy.as_mut() {
            es.push(obs.entropy());
        }
        if let Some(ds) = rec.dissipation.as_mut() {
            ds.push(obs.dissipation());
        }
        if let Some(di) = rec.dissipation_integral.as_mut() {
            di.push(obs.diss_integral);
        }
        for f in 0..obs.pair_sum.len() {
            rec.pairings[f].push(chi / nd * obs.pair_sum[f]);
            rec.generator_integrals[f].push(obs.gen_integral[f]);
        }
        rec.lalpha_integral.push(obs.lalpha_integral);
        if let Some(lb) = rec.lbeta_integral.as_mut() {
            lb.push(obs.lbeta_integral);
        }
        if !spec.lp_exponents.is_empty() {
            let field = state.config.density_field();
            for (j, &pexp) in spec.lp_exponents.iter().enumerate() {
                let norm = crate::functionals::lp_norm(&field, pexp, 1.0 / nd)
                    .expect("validated exponent");
                rec.lp_norms[j].push(norm);
            }
        }
    };

    record_snapshot(&state, &obs, &mut rec);
    let mut next_snap = 1usize;
    let mut cursor = 0.0f64;

    // Frozen or absorbing dynamics: the state never changes; just fill the
    // remaining snapshots with exact integrals of the constant state.
    let freeze_out =
        |state: &SimState, obs: &mut ObsState, rec: &mut PathRecorder, from: f64, next: usize| {
            let sum_k_alpha = state.tree.total() / state.rate_scale;
            let mut cur = from;
            for i in next..=n_snap {
                obs.integrate(snap_times[i] - cur, sum_k_alpha);
                cur = snap_times[i];
                record_snapshot(state, obs, rec);
            }
        };

    if spec.frozen {
        freeze_out(&state, &mut obs, &mut rec, 0.0, 1);
        rec.final_config = state.config.clone();
        rec.sup_entropy = spec.entropy_rho.map(|_| obs.sup_h);
        return Ok(RunOutput { recorder: rec, ledger, max_tree_drift: 0.0 });
    }

    loop {
        let total = state.tree.total();
        if total <= 0.0 {
            freeze_out(&state, &mut obs, &mut rec, cursor, next_snap);
            break;
        }
        let env_rate = total * state.envelope_factor();
        let u: f64 = 1.0 - rng.random::<f64>();
        let t_next = state.t + -u.ln() / env_rate;
        let sum_k_alpha = total / state.rate_scale;

        // Record snapshots passed before the candidate fires.
        while next_snap <= n_snap && snap_times[next_snap] < t_next {
            let dt = snap_times[next_snap] - cursor;
            obs.integrate(dt, sum_k_alpha);
            if let Some(l) = ledger.as_mut() {
                l.a2 += match &static_ghat {
                    Some(_) => chi_alpha * s_ghat * dt,
                    None => state.ledger_interval(cursor, snap_times[next_snap]),
                };
            }
            cursor = snap_times[next_snap];
            record_snapshot(&state, &obs, &mut rec);
            next_snap += 1;
        }
        if next_snap > n_snap {
            break;
        }

        let dt_ev = t_next - cursor;
        obs.integrate(dt_ev, sum_k_alpha);
        if let Some(l) = ledger.as_mut() {
            l.a2 += match &static_ghat {
                Some(_) => chi_alpha * s_ghat * dt_ev,
                None => state.ledger_interval(cursor, t_next),
            };
        }
        cursor = t_next;
        state.t = t_next;

        // Select source by tree descent, target uniformly among directions.
        let target = rng.random::<f64>() * total;
        let x = state.tree.sample(target);
        let dir = rng.random_range(0..2 * state.lattice.dim());
        let y = state.lattice.neighbor_slice(x)[dir] as usize;
        let mut dh_val = 0.0;
        let accepted = match &state.tilt {
            None => true,
            Some(tc) => {
                let acc = match (&tc.dh, &tc.accept) {
                    (Some(dh), Some(table)) => {
                        let idx = x * 2 * state.lattice.dim() + dir;
                        dh_val = dh[idx];
                        table[idx]
                    }
                    _ => {
                        dh_val = tc.hbar_at(&state.lattice, t_next, y)
                            - tc.hbar_at(&state.lattice, t_next, x);
                        (dh_val - tc.env_log).exp()
                    }
                };
                rng.random::<f64>() < acc
            }
        };
        if accepted {
            let kx = state.config.counts[x];
            let ky = state.config.counts[y];
            obs.on_jump(x, y, kx, ky, &state.config, &state.lattice);
            if let Some(w) = &static_ghat {
                s_ghat += (pow_alpha(kx as f64 - 1.0, alpha) - pow_alpha(kx as f64, alpha))
                    * w[x]
                    + (pow_alpha(ky as f64 + 1.0, alpha) - pow_alpha(ky as f64, alpha)) * w[y];
            }
            state.apply_jump(x, y)?;
            if state.events_since_rebuild == 0 {
                // A tree rebuild just fired; re-sync the live sums too.
                obs.resync(&state.config, &state.lattice);
                if let Some(w) = &static_ghat {
                    s_ghat = state
                        .config
                        .counts
                        .iter()
                        .zip(w)
                        .map(|(&k, &wx)| pow_alpha(k as f64, alpha) * wx)
                        .sum::<f64>();
                }
            }
            if let Some(l) = ledger.as_mut() {
                l.a1 += dh_val;
                if let Some(list) = l.jumps.as_mut() {
                    list.push((t_next, x as u32, y as u32));
                }
            }
        }
    }
    rec.events = state.events;
    rec.final_config = state.config.clone();
    rec.sup_entropy = spec.entropy_rho.map(|_| obs.sup_h);
    Ok(RunOutput { recorder: rec, ledger, max_tree_drift: state.max_tree_drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{sample_configuration, EquilibriumField};
    use crate::lattice::ScalingParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chacha(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn absorbing_state_signalled() {
        let p = ScalingParams::new(1, 4, 0.5, 2.0, 1.0).unwrap();
        let cfg = Configuration::new(vec![0, 0, 0, 0], p).unwrap();
        let mut st = SimState::new(cfg, None).unwrap();
        assert!(matches!(st.step(&mut chacha(0)), Err(Error::AbsorbingState { .. })));
    }

    #[test]
    fn mass_exactly_conserved() {
        let p = ScalingParams::new(1, 16, 0.1, 2.0, 1.0).unwrap();
        let field = EquilibriumField::constant(1.0, 16);
        let mut rng = chacha(3);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let total0 = cfg.total_particles();
        let mut st = SimState::new(cfg, None).unwrap();
        for _ in 0..50_000 {
            st.step(&mut rng).unwrap();
        }
        assert_eq!(st.config.total_particles(), total0);
    }

    #[test]
    fn run_is_deterministic_given_seed() {
        let p = ScalingParams::new(1, 16, 0.05, 2.0, 0.01).unwrap();
        let field = EquilibriumField::constant(1.0, 16);
        let tilt = TiltField::cosine(0.2, vec![1]);
        let mut spec = RunSpec::new(0.01, 8);
        spec.record_fields = true;
        spec.record_jump_list = true;
        let mut out = Vec::new();
        for _ in 0..2 {
            let mut rng = chacha(77);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            out.push(run(&cfg, Some(&tilt), &spec, &mut rng).unwrap());
        }
        let (a, b) = (&out[0], &out[1]);
        assert_eq!(a.recorder.fields, b.recorder.fields);
        let (la, lb) = (a.ledger.as_ref().unwrap(), b.ledger.as_ref().unwrap());
        assert_eq!(la.a1.to_bits(), lb.a1.to_bits());
        assert_eq!(la.a2.to_bits(), lb.a2.to_bits());
        assert_eq!(la.jumps, lb.jumps);
    }

    #[test]
    fn single_particle_diffusive_displacement() {
        // alpha = 1, one particle: a rate n^2 random walk with step 1/n has
        // mean-square displacement ~ t.
        let n = 32;
        let t_fin = 0.01;
        let p = ScalingParams::new(1, n, 1.0, 1.0, t_fin).unwrap();
        let mut rng = chacha(5);
        let reps = 600;
        let mut msd = 0.0;
        for _ in 0..reps {
            let mut counts = vec![0u32; n];
            counts[0] = 1;
            let cfg = Configuration::new(counts, p).unwrap();
            let mut st = SimState::new(cfg, None).unwrap();
            let mut pos = 0i64;
            while st.t < t_fin {
                let before = st.config.counts.iter().position(|&k| k > 0).unwrap();
                let ev = st.step(&mut rng).unwrap();
                if st.t > t_fin {
                    break;
                }
                let after = st.config.counts.iter().position(|&k| k > 0).unwrap();
                let step = (after as i64 - before as i64 + n as i64 / 2).rem_euclid(n as i64)
                    - n as i64 / 2;
                pos += step;
                let _ = ev;
            }
            let disp = pos as f64 / n as f64;
            msd += disp * disp;
        }
        msd /= reps as f64;
        assert!(
            (msd - t_fin).abs() < 0.25 * t_fin,
            "msd = {msd}, expected ~ {t_fin}"
        );
    }

    #[test]
    fn two_site_occupation_matches_birth_death_law() {
        // d=1, n=2, alpha=2: k(0) is a birth-death chain whose stationary
        // law solves the balance equations; compare time-weighted occupation.
        let kk = 6u32;
        let p = ScalingParams::new(1, 2, 0.5, 2.0, 1.0).unwrap();
        let cfg = Configuration::new(vec![kk / 2, kk - kk / 2], p).unwrap();
        let mut st = SimState::new(cfg, None).unwrap();
        let mut rng = chacha(11);
        // Exact stationary law: mu(k+1)/mu(k) = (K-k)^2/(k+1)^2.
        let mut mu = vec![1.0f64];
        for k in 0..kk {
            let last = *mu.last().unwrap();
            mu.push(last * ((kk - k) as f64 / (k + 1) as f64).powi(2));
        }
        let z: f64 = mu.iter().sum();
        for m in &mut mu {
            *m /= z;
        }
        let mut occupation = vec![0.0f64; kk as usize + 1];
        let mut t_last = 0.0;
        let events = 400_000;
        for _ in 0..events {
            let k0 = st.config.counts[0] as usize;
            let ev = st.step(&mut rng).unwrap();
            occupation[k0] += ev.t - t_last;
            t_last = ev.t;
        }
        let total: f64 = occupation.iter().sum();
        for k in 0..=kk as usize {
            let emp = occupation[k] / total;
            assert!(
                (emp - mu[k]).abs() < 0.02,
                "k = {k}: emp = {emp}, exact = {}",
                mu[k]
            );
        }
    }

    #[test]
    fn snapshots_conserve_mass_and_count_events() {
        let p = ScalingParams::new(1, 32, 0.05, 2.0, 0.002).unwrap();
        let field = EquilibriumField::constant(1.0, 32);
        let mut rng = chacha(9);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let m0 = cfg.total_mass();
        let spec = RunSpec::new(0.002, 16);
        let out = run(&cfg, None, &spec, &mut rng).unwrap();
        assert_eq!(out.recorder.mass.len(), 17);
        for &m in &out.recorder.mass {
            assert_eq!(m.to_bits(), m0.to_bits());
        }
        assert!(out.recorder.events > 0);
        assert!(out.max_tree_drift < 1e-9);
    }

    #[test]
    fn frozen_run_keeps_dissipation_constant() {
        let p = ScalingParams::new(1, 16, 0.2, 2.0, 1.0).unwrap();
        let mut counts = vec![0u32; 16];
        counts[3] = 5;
        counts[9] = 2;
        let cfg = Configuration::new(counts, p).unwrap();
        let mut spec = RunSpec::new(1.0, 4);
        spec.record_dissipation = true;
        spec.frozen = true;
        let mut rng = chacha(1);
        let out = run(&cfg, None, &spec, &mut rng).unwrap();
        let d0 = out.recorder.dissipation.as_ref().unwrap()[0];
        let integral = out.recorder.dissipation_integral.as_ref().unwrap();
        assert!((integral.last().unwrap() - d0 * 1.0).abs() < 1e-12 * d0.max(1.0));
        assert_eq!(out.recorder.events, 0);
    }

    #[test]
    fn constant_test_function_martingale_is_zero() {
        let p = ScalingParams::new(1, 16, 0.1, 2.0, 0.005).unwrap();
        let field = EquilibriumField::constant(1.0, 16);
        let mut rng = chacha(21);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let mut spec = RunSpec::new(0.005, 8);
        spec.test_functions = vec![vec![1.0; 16]];
        let out = run(&cfg, None, &spec, &mut rng).unwrap();
        let m = out.recorder.martingale_residual(0).unwrap();
        for v in m {
            assert!(v.abs() < 1e-12, "v = {v}");
        }
    }

    #[test]
    fn martingale_mean_zero_across_replicas() {
        let n = 32;
        let t_fin = 0.001;
        let p = ScalingParams::new(1, n, 1.0 / (n * n) as f64, 2.0, t_fin).unwrap();
        let lat = TorusLattice::new(1, n).unwrap();
        let phi = lat
            .cell_averages(|x| (2.0 * std::f64::consts::PI * x[0]).cos(), 3)
            .unwrap();
        let field = EquilibriumField::constant(1.0, n);
        let mut spec = RunSpec::new(t_fin, 4);
        spec.test_functions = vec![phi.clone()];
        let reps = 200;
        let mut finals = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = chacha(1000 + r as u64);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            let out = run(&cfg, None, &spec, &mut rng).unwrap();
            finals.push(*out.recorder.martingale_residual(0).unwrap().last().unwrap());
        }
        let mean: f64 = finals.iter().sum::<f64>() / reps as f64;
        let var: f64 =
            finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean = {mean}, se = {se}");
        // Quadratic variation bound.
        let c = qv_bound_constant(&phi, &lat);
        let mut lalpha = 0.0;
        for r in 0..50u64 {
            let mut rng = chacha(5000 + r);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            let out = run(&cfg, None, &spec, &mut rng).unwrap();
            lalpha += out.recorder.lalpha_integral.last().unwrap();
        }
        lalpha /= 50.0;
        let bound = c * p.chi / n as f64 * lalpha;
        assert!(var <= bound, "var = {var}, bound = {bound}");
    }

    #[test]
    fn martingale_mean_zero_under_static_tilt() {
        // With a static tilt the generator observable uses the tilted rates,
        // so the residual is a martingale under the tilted law too.
        let n = 16;
        let t_fin = 0.002;
        let p = ScalingParams::new(1, n, 0.05, 2.0, t_fin).unwrap();
        let lat = TorusLattice::new(1, n).unwrap();
        let phi = lat
            .cell_averages(|x| (2.0 * std::f64::consts::PI * x[0]).cos(), 3)
            .unwrap();
        let tilt = TiltField::cosine(0.3, vec![1]);
        let field = EquilibriumField::constant(1.0, n);
        let mut spec = RunSpec::new(t_fin, 2);
        spec.test_functions = vec![phi];
        let reps = 300;
        let mut finals = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = chacha(4400 + r as u64);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            let out = run(&cfg, Some(&tilt), &spec, &mut rng).unwrap();
            finals.push(*out.recorder.martingale_residual(0).unwrap().last().unwrap());
        }
        let mean: f64 = finals.iter().sum::<f64>() / reps as f64;
        let var: f64 =
            finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!(mean.abs() <= 3.5 * se, "mean = {mean}, se = {se}");
    }

    #[test]
    fn two_dimensional_run_conserves_mass_and_entropy_series() {
        let p = ScalingParams::new(2, 8, 0.1, 2.0, 1e-3).unwrap();
        let field = EquilibriumField::constant(1.0, 64);
        let mut rng = chacha(64);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let total = cfg.total_particles();
        let mut spec = RunSpec::new(1e-3, 4);
        spec.entropy_rho = Some(1.0);
        spec.record_dissipation = true;
        let out = run(&cfg, None, &spec, &mut rng).unwrap();
        assert_eq!(out.recorder.final_config.total_particles(), total);
        assert!(out.recorder.events > 0);
        let ent = out.recorder.entropy.as_ref().unwrap();
        assert!(ent.iter().all(|&h| h.is_finite() && h >= 0.0));
        let di = out.recorder.dissipation_integral.as_ref().unwrap();
        assert!(di.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn stationarity_under_equilibrium_start() {
        // Started from the product equilibrium, <phi, eta_t> at a later time
        // has the same law as at time zero (two-sample KS at the 5% level).
        let n = 16;
        let t_fin = 0.004;
        let p = ScalingParams::new(1, n, 0.05, 2.0, t_fin).unwrap();
        let lat = TorusLattice::new(1, n).unwrap();
        let phi = lat
            .cell_averages(|x| (2.0 * std::f64::consts::PI * x[0]).cos(), 3)
            .unwrap();
        let field = EquilibriumField::constant(1.0, n);
        let mut spec = RunSpec::new(t_fin, 2);
        spec.test_functions = vec![phi];
        let reps = 400;
        let mut at0 = Vec::with_capacity(reps);
        let mut at_mid = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = chacha(333 + r as u64);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            let out = run(&cfg, None, &spec, &mut rng).unwrap();
            at0.push(out.recorder.pairings[0][0]);
            at_mid.push(out.recorder.pairings[0][1]);
        }
        let d = ks_statistic(&mut at0, &mut at_mid);
        let crit = 1.358 * ((2.0 * reps as f64) / (reps as f64 * reps as f64)).sqrt();
        assert!(d < crit, "KS = {d}, crit = {crit}");
    }

    #[test]
    fn reversibility_of_equilibrium_pairings() {
        // Law(eta) = Law(T eta) at stationarity: the difference
        // <phi, eta_0> - <phi, eta_T> is symmetric about zero.
        let n = 16;
        let t_fin = 0.002;
        let p = ScalingParams::new(1, n, 0.05, 2.0, t_fin).unwrap();
        let lat = TorusLattice::new(1, n).unwrap();
        let phi = lat
            .cell_averages(|x| (2.0 * std::f64::consts::PI * x[0]).sin(), 3)
            .unwrap();
        let field = EquilibriumField::constant(1.0, n);
        let mut spec = RunSpec::new(t_fin, 1);
        spec.test_functions = vec![phi];
        let reps = 400;
        let mut diffs = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = chacha(777 + r as u64);
            let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
            let out = run(&cfg, None, &spec, &mut rng).unwrap();
            diffs.push(out.recorder.pairings[0][1] - out.recorder.pairings[0][0]);
        }
        let mut neg: Vec<f64> = diffs.iter().map(|v| -v).collect();
        let d = ks_statistic(&mut diffs.clone(), &mut neg);
        let crit = 1.358 * ((2.0 * reps as f64) / (reps as f64 * reps as f64)).sqrt();
        assert!(d < crit, "KS = {d}, crit = {crit}");
    }

    #[test]
    fn tilted_thinning_acceptance_well_formed() {
        // With a static tilt the acceptance table lies in (0, 1].
        let p = ScalingParams::new(1, 32, 0.05, 2.0, 0.001).unwrap();
        let cfg = Configuration::new(vec![10; 32], p).unwrap();
        let tilt = TiltField::cosine(0.3, vec![1]);
        let st = SimState::new(cfg, Some(&tilt)).unwrap();
        let tc = st.tilt.as_ref().unwrap();
        for &a in tc.accept.as_ref().unwrap() {
            assert!(a > 0.0 && a <= 1.0 + 1e-15);
        }
        assert!(tc.env_log >= 0.0 && tc.env_log <= tilt.osc + 1e-15);
    }

    #[test]
    fn constant_tilt_leaves_ledger_empty() {
        let p = ScalingParams::new(1, 16, 0.1, 2.0, 0.002).unwrap();
        let field = EquilibriumField::constant(1.0, 16);
        let tilt = TiltField::new(|_, _| 0.9, 0.0, false);
        let mut rng = chacha(8);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let spec = RunSpec::new(0.002, 2);
        let out = run(&cfg, Some(&tilt), &spec, &mut rng).unwrap();
        let l = out.ledger.unwrap();
        assert_eq!(l.a1, 0.0);
        assert!(l.a2.abs() < 1e-15);
        assert_eq!(log_rn_derivative(&l, 0.0, p), 0.0);
    }

    #[test]
    fn static_and_time_flagged_tilts_agree() {
        // The tabulated static path and the quadrature slow path must give
        // the same generator value on the same state.
        let n = 8;
        let p = ScalingParams::new(1, n, 0.2, 2.0, 0.001).unwrap();
        let field = EquilibriumField::constant(1.0, n);
        let eps = 0.25;
        let static_tilt = TiltField::cosine(eps, vec![1]);
        let slow_tilt = TiltField::new(
            move |_t, x: &[f64]| eps * (2.0 * std::f64::consts::PI * x[0]).cos(),
            2.0 * eps,
            true,
        );
        let mut rng = chacha(42);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let st_a = SimState::new(cfg.clone(), Some(&static_tilt)).unwrap();
        let st_b = SimState::new(cfg, Some(&slow_tilt)).unwrap();
        let ga = st_a.ghat_now(0.0);
        let gb = st_b.ghat_now(0.0);
        assert!((ga - gb).abs() < 1e-10 * ga.abs().max(1e-12), "ga = {ga}, gb = {gb}");
        let ia = st_a.ledger_interval(0.0, 5e-4);
        let ib = st_b.ledger_interval(0.0, 5e-4);
        assert!((ia - ib).abs() < 1e-10 * ia.abs().max(1e-15), "ia = {ia}, ib = {ib}");
    }

    #[test]
    fn lp_norms_recorded_at_snapshots() {
        let p = ScalingParams::new(1, 16, 0.1, 2.0, 0.002).unwrap();
        let field = EquilibriumField::constant(1.0, 16);
        let mut rng = chacha(70);
        let cfg = sample_configuration(&field, p, None, &mut rng).unwrap();
        let mut spec = RunSpec::new(0.002, 4);
        spec.lp_exponents = vec![1.0, 2.0];
        let out = run(&cfg, None, &spec, &mut rng).unwrap();
        assert_eq!(out.recorder.lp_norms.len(), 2);
        assert_eq!(out.recorder.lp_norms[0].len(), 5);
        // L^1 norm of a nonnegative field is the mass.
        for (l1, m) in out.recorder.lp_norms[0].iter().zip(&out.recorder.mass) {
            assert!((l1 - m).abs() < 1e-12);
        }
    }

    #[test]
    fn time_varying_tilt_with_observables_rejected() {
        let p = ScalingParams::new(1, 8, 0.2, 2.0, 0.001).unwrap();
        let cfg = Configuration::new(vec![3; 8], p).unwrap();
        let tilt = TiltField::new(|t, x: &[f64]| t * x[0], 1.0, true);
        let mut spec = RunSpec::new(0.001, 2);
        spec.test_functions = vec![vec![1.0; 8]];
        let mut rng = chacha(1);
        assert!(run(&cfg, Some(&tilt), &spec, &mut rng).is_err());
    }

    #[test]
    fn jump_log_round_trip() {
        let jumps = vec![(0.125f64, 3u32, 4u32), (0.5, 7, 0), (1.75, 2, 1)];
        let mut buf = Vec::new();
        write_jump_log(&jumps, &mut buf).unwrap();
        assert_eq!(buf.len(), 48);
        // Little-endian framing of the first record.
        assert_eq!(&buf[0..8], &0.125f64.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        let back = read_jump_log(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, jumps);
        assert!(read_jump_log(&mut std::io::Cursor::new(&buf[..15])).is_err());
    }

    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let mut i = 0;
        let mut j = 0;
        let mut d = 0.0f64;
        while i < n && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        d
    }
}
