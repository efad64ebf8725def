//! Discrete torus geometry: site indexing, nearest-neighbour kernel, cube
//! averages of continuous test functions and discrete differential operators.
//!
//! Sites of the torus with `n` points per axis in dimension `d` are the
//! points `c / n` with integer coordinates `c in {0..n}^d`. Site indices are
//! the row-major linearization of the coordinate tuple (last axis fastest):
//! `index = ((c_0 * n) + c_1) * n + c_2` and so on. All CSV output uses this
//! ordering.

use crate::error::{Error, Result};

/// Global scaling parameters of the rescaled particle system.
///
/// `chi` is the particle size, `alpha >= 1` the jump-rate homogeneity and
/// `t_fin` the time horizon. The diagnostic `n^2 * chi^min(1, alpha/2)`
/// measures how far a parameter choice is from the joint scaling regime;
/// sweeps that keep it constant stay inside the regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub d: usize,
    pub n: usize,
    pub chi: f64,
    pub alpha: f64,
    pub t_fin: f64,
}

impl ScalingParams {
    pub fn new(d: usize, n: usize, chi: f64, alpha: f64, t_fin: f64) -> Result<Self> {
        if d == 0 || d > 3 {
            return Err(Error::InvalidParam(format!("d = {d}, supported: 1, 2, 3")));
        }
        if n < 2 {
            return Err(Error::InvalidParam(format!("n = {n}, need n >= 2")));
        }
        if !(chi > 0.0) || !chi.is_finite() {
            return Err(Error::InvalidParam(format!("chi = {chi}, need chi > 0")));
        }
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidParam(format!("alpha = {alpha}, need alpha >= 1")));
        }
        if !(t_fin > 0.0) || !t_fin.is_finite() {
            return Err(Error::InvalidParam(format!("t_fin = {t_fin}, need t_fin > 0")));
        }
        Ok(Self { d, n, chi, alpha, t_fin })
    }

    /// Scaling diagnostic `n^2 * chi^min(1, alpha/2)`; bounded sweeps keep it constant.
    pub fn scaling_diagnostic(&self) -> f64 {
        let p = (self.alpha / 2.0).min(1.0);
        (self.n as f64).powi(2) * self.chi.powf(p)
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }
}

/// Discrete torus with `n` sites per axis in dimension `d <= 3`.
#[derive(Debug, Clone)]
pub struct TorusLattice {
    d: usize,
    n: usize,
    site_count: usize,
    /// Flattened neighbour table: `2d` entries per site, one per direction
    /// (`-e_1, +e_1, -e_2, ...`). On the degenerate two-site axis both
    /// directions reach the same site and the table repeats it.
    neighbor_table: Vec<u32>,
}

impl TorusLattice {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > 3 {
            return Err(Error::InvalidParam(format!("d = {d}, supported: 1, 2, 3")));
        }
        if n < 2 {
            return Err(Error::InvalidParam(format!("n = {n}, need n >= 2")));
        }
        let site_count = n.pow(d as u32);
        let mut neighbor_table = Vec::with_capacity(site_count * 2 * d);
        let mut coords = vec![0usize; d];
        for idx in 0..site_count {
            Self::unravel(idx, d, n, &mut coords);
            for axis in 0..d {
                let c = coords[axis];
                for delta in [n - 1, 1] {
                    let mut cc = coords.clone();
                    cc[axis] = (c + delta) % n;
                    neighbor_table.push(Self::ravel(&cc, n) as u32);
                }
            }
        }
        Ok(Self { d, n, site_count, neighbor_table })
    }

    pub fn from_params(p: &ScalingParams) -> Result<Self> {
        Self::new(p.d, p.n)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sites_per_axis(&self) -> usize {
        self.n
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    /// Cell volume `n^-d`.
    pub fn cell_volume(&self) -> f64 {
        (self.n as f64).powi(-(self.d as i32))
    }

    fn ravel(coords: &[usize], n: usize) -> usize {
        coords.iter().fold(0, |acc, &c| acc * n + c)
    }

    fn unravel(mut idx: usize, d: usize, n: usize, out: &mut [usize]) {
        for axis in (0..d).rev() {
            out[axis] = idx % n;
            idx /= n;
        }
    }

    /// Coordinates of a site index (row-major inverse).
    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.d];
        Self::unravel(site, self.d, self.n, &mut out);
        out
    }

    /// Physical position of the site centre in `[0,1)^d`.
    pub fn position(&self, site: usize) -> Vec<f64> {
        self.coords(site).iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// The `2d` nearest neighbours of `site` with periodic wrap-around,
    /// one entry per direction (a multiset on the two-site torus).
    pub fn neighbors(&self, site: usize) -> Result<Vec<usize>> {
        if site >= self.site_count {
            return Err(Error::InvalidSite { index: site, site_count: self.site_count });
        }
        Ok(self.neighbor_slice(site).iter().map(|&s| s as usize).collect())
    }

    #[inline]
    pub(crate) fn neighbor_slice(&self, site: usize) -> &[u32] {
        let w = 2 * self.d;
        &self.neighbor_table[site * w..(site + 1) * w]
    }

    /// Average of `phi` over the cube of side `1/n` centred at `site`, by
    /// tensor Gauss-Legendre quadrature with `q` points per axis.
    pub fn cell_average<F>(&self, phi: F, site: usize, q: usize) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        if site >= self.site_count {
            return Err(Error::InvalidSite { index: site, site_count: self.site_count });
        }
        let (nodes, weights) = gauss_legendre(q)?;
        let centre = self.position(site);
        let h = 0.5 / self.n as f64;
        let mut point = vec![0.0f64; self.d];
        let mut acc = 0.0;
        // Tensor loop over q^d quadrature points; weights on [-1,1] sum to 2
        // per axis, so the average carries a 2^-d normalization.
        let total = q.pow(self.d as u32);
        let mut multi = vec![0usize; self.d];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for axis in (0..self.d).rev() {
                multi[axis] = rem % q;
                rem /= q;
            }
            for axis in 0..self.d {
                let j = multi[axis];
                point[axis] = centre[axis] + h * nodes[j];
                w *= 0.5 * weights[j];
            }
            acc += w * phi(&point);
        }
        Ok(acc)
    }

    /// Cell averages of `phi` at every site (default quadrature order 3).
    pub fn cell_averages<F>(&self, phi: F, q: usize) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64,
    {
        (0..self.site_count).map(|s| self.cell_average(&phi, s, q)).collect()
    }

    /// Discrete Laplacian `(Lf)(x) = n^2 * sum_{y ~ x} (f(y) - f(x))`,
    /// summing over the `2d` directions. Constant fields map to zero.
    pub fn discrete_laplacian(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.site_count {
            return Err(Error::InvalidParam(format!(
                "field length {} != site count {}",
                f.len(),
                self.site_count
            )));
        }
        let n2 = (self.n as f64) * (self.n as f64);
        let w = 2 * self.d;
        let mut out = vec![0.0f64; self.site_count];
        for x in 0..self.site_count {
            let mut acc = 0.0;
            for &y in self.neighbor_slice(x) {
                acc += f[y as usize] - f[x];
            }
            out[x] = n2 * acc;
            let _ = w;
        }
        Ok(out)
    }
}

/// Integer particle counts on the lattice together with the scaling that
/// turns them into a physical density `eta(x) = chi * k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub counts: Vec<u32>,
    pub scaling: ScalingParams,
}

impl Configuration {
    pub fn new(counts: Vec<u32>, scaling: ScalingParams) -> Result<Self> {
        if counts.len() != scaling.site_count() {
            return Err(Error::InvalidParam(format!(
                "counts length {} != site count {}",
                counts.len(),
                scaling.site_count()
            )));
        }
        Ok(Self { counts, scaling })
    }

    /// Deterministic initial data: `k(x) = round(u0(x) / chi)` per site.
    pub fn from_profile_rounded(u0: &[f64], scaling: ScalingParams) -> Result<Self> {
        if u0.len() != scaling.site_count() {
            return Err(Error::InvalidParam("profile length mismatch".into()));
        }
        let counts = u0
            .iter()
            .map(|&u| {
                if !(u >= 0.0) {
                    return Err(Error::InvalidParam(format!("negative profile value {u}")));
                }
                Ok((u / scaling.chi).round() as u32)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { counts, scaling })
    }

    #[inline]
    pub fn density(&self, site: usize) -> f64 {
        self.scaling.chi * self.counts[site] as f64
    }

    /// Density field `eta(x) = chi * k(x)` over all sites.
    pub fn density_field(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| self.scaling.chi * k as f64).collect()
    }

    pub fn total_particles(&self) -> u64 {
        self.counts.iter().map(|&k| k as u64).sum()
    }

    /// Conserved mass `<1, eta> = chi/n^d * sum_x k(x)`.
    pub fn total_mass(&self) -> f64 {
        self.scaling.chi * self.total_particles() as f64
            / self.scaling.site_count() as f64
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence. Supports `1 <= q <= 32`.
pub fn gauss_legendre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 || q > 32 {
        return Err(Error::InvalidParam(format!("quadrature order q = {q}, need 1..=32")));
    }
    let mut nodes = vec![0.0f64; q];
    let mut weights = vec![0.0f64; q];
    let m = q.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_q(x) and derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        // Enforce the exact midpoint for odd orders.
        nodes[q / 2] = 0.0;
    }
    Ok((nodes, weights))
}
