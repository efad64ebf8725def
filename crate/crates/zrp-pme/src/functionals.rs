//! Entropy, entropy-dissipation (lattice and continuum), pathwise regularity
//! functional, mollified local averages and Lebesgue norms on grid fields.

use crate::error::{Error, Result};

/// Nonnegative density on a uniform grid over the torus (`cells` per axis).
/// Used both for lattice occupation densities and PDE solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub d: usize,
    pub cells: usize,
}

impl DensityField {
    pub fn new(values: Vec<f64>, d: usize, cells: usize) -> Result<Self> {
        if values.len() != cells.pow(d as u32) {
            return Err(Error::InvalidParam(format!(
                "field length {} != {cells}^{d}",
                values.len()
            )));
        }
        Ok(Self { values, d, cells })
    }

    pub fn constant(value: f64, d: usize, cells: usize) -> Self {
        Self { values: vec![value; cells.pow(d as u32)], d, cells }
    }

    pub fn cell_volume(&self) -> f64 {
        (self.cells as f64).powi(-(self.d as i32))
    }

    /// `<1, u>`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }
}

/// Time-indexed sequence of fields on a common grid and uniform time grid.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub times: Vec<f64>,
    pub fields: Vec<DensityField>,
}

impl DensityPath {
    pub fn new(times: Vec<f64>, fields: Vec<DensityField>) -> Result<Self> {
        if times.len() != fields.len() || times.is_empty() {
            return Err(Error::InvalidParam("times/fields length mismatch".into()));
        }
        let (d, cells) = (fields[0].d, fields[0].cells);
        if fields.iter().any(|f| f.d != d || f.cells != cells) {
            return Err(Error::InvalidParam("inconsistent grids along the path".into()));
        }
        Ok(Self { times, fields })
    }

    pub fn t_fin(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Boltzmann entropy `H_rho(u) = Int rho * B(u/rho)` with
/// `B(s) = s log s - s + 1` extended continuously by `B(0) = 1`.
/// Returns `+inf` when `u > 0` on a cell where `rho = 0`.
pub fn entropy(u: &DensityField, rho: &DensityField) -> Result<f64> {
    if rho.values.len() != u.values.len() {
        return Err(Error::InvalidParam("entropy: grid mismatch".into()));
    }
    let mut acc = 0.0;
    for (&uu, &rr) in u.values.iter().zip(&rho.values) {
        if rr == 0.0 {
            if uu > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        let s = uu / rr;
        let b = if s == 0.0 { 1.0 } else { s * s.ln() - s + 1.0 };
        acc += rr * b;
    }
    Ok(acc * u.cell_volume())
}

/// Entropy against a constant reference.
pub fn entropy_const_ref(u: &DensityField, rho: f64) -> Result<f64> {
    entropy(u, &DensityField::constant(rho, u.d, u.cells))
}

/// Entropy of a raw site field against a constant reference (cell volume
/// `n^-d` implied by the field length).
pub fn entropy_site_field(values: &[f64], d: usize, cells: usize, rho: f64) -> Result<f64> {
    entropy_const_ref(&DensityField::new(values.to_vec(), d, cells)?, rho)
}

#[inline]
pub(crate) fn half_power(u: f64, alpha: f64) -> f64 {
    // u^(alpha/2) with 0^(alpha/2) = 0; guarded exp/log off the fast paths.
    if u == 0.0 {
        0.0
    } else if alpha == 2.0 {
        u
    } else if alpha == 1.0 {
        u.sqrt()
    } else if alpha == 3.0 {
        u * u.sqrt()
    } else {
        (0.5 * alpha * u.ln()).exp()
    }
}

/// Lattice entropy dissipation: each unordered edge `{x, y}` contributes
/// `(u(x)^{a/2} - u(y)^{a/2})^2`, with prefactor `1/(alpha n^{d-2})`.
/// On the two-site axis both lattice directions reach the same edge, which
/// is still counted once. For smooth profiles this converges to
/// `(1/alpha) Int |grad u^{alpha/2}|^2`, half the continuum dissipation.
pub fn discrete_dissipation(values: &[f64], d: usize, n: usize, alpha: f64) -> Result<f64> {
    if values.len() != n.pow(d as u32) {
        return Err(Error::InvalidParam("dissipation: field length mismatch".into()));
    }
    let nd = values.len();
    let nf = n as f64;
    let mut acc = 0.0;
    // Strides for row-major coordinates; +1 step along each axis covers each
    // unordered edge exactly once when n > 2, twice when n = 2.
    let mut stride = vec![0usize; d];
    for (axis, s) in stride.iter_mut().enumerate() {
        *s = n.pow((d - 1 - axis) as u32);
    }
    let edge_weight = if n == 2 { 0.5 } else { 1.0 };
    for x in 0..nd {
        let vx = half_power(values[x], alpha);
        for axis in 0..d {
            let s = stride[axis];
            let block = s * n;
            let y = x - (x / block) * block;
            let next = if y + s < block { x + s } else { x + s - block };
            let diff = vx - half_power(values[next], alpha);
            acc += edge_weight * diff * diff;
        }
    }
    Ok(acc / (alpha * nf.powi(d as i32 - 2)))
}

/// Continuum entropy dissipation `(2/alpha) Int |grad(u^{alpha/2})|^2` by
/// central differences on the field's grid.
pub fn continuum_dissipation(u: &DensityField, alpha: f64) -> Result<f64> {
    let n = u.cells;
    let nd = u.values.len();
    let dx = 1.0 / n as f64;
    let v: Vec<f64> = u.values.iter().map(|&x| half_power(x, alpha)).collect();
    let mut acc = 0.0;
    let mut stride = vec![0usize; u.d];
    for (axis, s) in stride.iter_mut().enumerate() {
        *s = n.pow((u.d - 1 - axis) as u32);
    }
    for x in 0..nd {
        for axis in 0..u.d {
            let s = stride[axis];
            let block = s * n;
            let base = (x / block) * block;
            let off = x - base;
            let plus = base + (off + s) % block;
            let minus = base + (off + block - s) % block;
            let g = (v[plus] - v[minus]) / (2.0 * dx);
            acc += g * g;
        }
    }
    Ok(2.0 / alpha * acc * u.cell_volume())
}

/// Pathwise regularity functional: `sup_t H(u_t) + Int D_{alpha,N}(u_t) dt`
/// with the trapezoid rule on the path's time grid.
pub fn path_functional(path: &DensityPath, alpha: f64, rho: f64) -> Result<f64> {
    let mut sup_h = f64::NEG_INFINITY;
    let mut diss = Vec::with_capacity(path.times.len());
    for f in &path.fields {
        sup_h = sup_h.max(entropy_const_ref(f, rho)?);
        diss.push(discrete_dissipation(&f.values, f.d, f.cells, alpha)?);
    }
    Ok(sup_h + trapezoid(&path.times, &diss))
}

/// Trapezoid rule on a (not necessarily uniform) time grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    assert_eq!(times.len(), values.len());
    let mut acc = 0.0;
    for i in 1..times.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
    }
    acc
}

/// `L^p` norm `((1/n^d) sum |u|^p)^{1/p}` of a grid field.
pub fn lp_norm(values: &[f64], p: f64, cell_volume: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParam(format!("p = {p}, need p >= 1")));
    }
    let s: f64 = values.iter().map(|&v| v.abs().powf(p)).sum();
    Ok((s * cell_volume).powf(1.0 / p))
}

/// Interpolation exponent `beta = alpha + 1 - 2/p` with the Sobolev exponent
/// `p = 4` in dimensions 1 and 2 and `p = 2d/(d-2)` for `d >= 3`.
pub fn interpolation_beta(alpha: f64, d: usize) -> f64 {
    let p = if d <= 2 { 4.0 } else { 2.0 * d as f64 / (d as f64 - 2.0) };
    alpha + 1.0 - 2.0 / p
}

/// Smooth even bump `exp(-1/(1-(2s)^2))` supported in `|s| < 1/2`.
fn bump(s: f64) -> f64 {
    let z = 2.0 * s;
    if z.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - z * z)).exp()
    }
}

/// Mollified local average on the lattice at macroscopic scale `r`:
/// tensorized bump kernel, normalized so that constants (and total mass)
/// are preserved exactly. Errors when the kernel is under-resolved
/// (`r * n < 2`).
pub fn local_average(values: &[f64], d: usize, n: usize, r: f64) -> Result<Vec<f64>> {
    if values.len() != n.pow(d as u32) {
        return Err(Error::InvalidParam("local_average: field length mismatch".into()));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParam(format!("r = {r}, need 0 < r < 1")));
    }
    let rn = r * n as f64;
    if rn < 2.0 {
        return Err(Error::KernelUnderResolved { rn });
    }
    // One-dimensional kernel over signed lattice offsets; the tensor kernel
    // and its normalization factor both separate across axes.
    let w = ((rn / 2.0).ceil() as isize).min(n as isize / 2);
    let mut k1 = Vec::with_capacity((2 * w + 1) as usize);
    for delta in -w..=w {
        k1.push(bump(delta as f64 / rn));
    }
    let k1_sum: f64 = k1.iter().sum();
    // Convolve axis by axis (separable kernel), normalizing each axis pass.
    let mut cur = values.to_vec();
    let mut stride = vec![0usize; d];
    for (axis, s) in stride.iter_mut().enumerate() {
        *s = n.pow((d - 1 - axis) as u32);
    }
    for axis in 0..d {
        let s = stride[axis];
        let block = s * n;
        let mut next = vec![0.0f64; cur.len()];
        for x in 0..cur.len() {
            let base = (x / block) * block;
            let off = x - base;
            let mut acc = 0.0;
            for (j, &kv) in k1.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                let delta = j as isize - w;
                let shifted =
                    (off as isize + delta * s as isize).rem_euclid(block as isize) as usize;
                acc += kv * cur[base + shifted];
            }
            next[x] = acc / k1_sum;
        }
        cur = next;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cos_field(n: usize, amp: f64) -> DensityField {
        let values = (0..n)
            .map(|c| 1.0 + amp * (2.0 * std::f64::consts::PI * c as f64 / n as f64).cos())
            .collect();
        DensityField { values, d: 1, cells: n }
    }

    #[test]
    fn entropy_zero_at_reference() {
        let u = DensityField::constant(1.7, 1, 32);
        assert_eq!(entropy_const_ref(&u, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn entropy_closed_form_constant_two() {
        let u = DensityField::constant(2.0, 1, 16);
        let h = entropy_const_ref(&u, 1.0).unwrap();
        assert!((h - (2.0 * 2.0f64.ln() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn entropy_of_vacuum_is_one() {
        let u = DensityField::constant(0.0, 1, 16);
        assert!((entropy_const_ref(&u, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_infinite_off_support() {
        let u = DensityField::constant(1.0, 1, 4);
        let rho = DensityField::new(vec![1.0, 0.0, 1.0, 1.0], 1, 4).unwrap();
        assert!(entropy(&u, &rho).unwrap().is_infinite());
    }

    #[test]
    fn entropy_nonnegative_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let values: Vec<f64> = (0..32).map(|_| rng.random::<f64>() * 3.0).collect();
            let u = DensityField::new(values, 1, 32).unwrap();
            assert!(entropy_const_ref(&u, 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn dissipation_of_constant_vanishes() {
        assert_eq!(discrete_dissipation(&[3.0; 27], 3, 3, 2.0).unwrap(), 0.0);
        let u = DensityField::constant(3.0, 1, 64);
        assert_eq!(continuum_dissipation(&u, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn dissipation_two_site_regression() {
        // d=1, n=2, alpha=2, eta=(0,1): pinned value 1.
        let v = discrete_dissipation(&[0.0, 1.0], 1, 2, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-14, "v = {v}");
    }

    #[test]
    fn discrete_dissipation_smooth_field_limit() {
        // On smooth profiles the lattice sum converges to
        // (1/alpha) Int |grad u^{alpha/2}|^2, at rate O(1/n).
        let alpha = 2.0;
        let exact = {
            // u = 1 + cos(2 pi x)/2: Int |u'|^2 = pi^2/2.
            0.5 * std::f64::consts::PI.powi(2) / alpha
        };
        let mut prev_err = f64::INFINITY;
        for n in [64usize, 128, 256] {
            let f = cos_field(n, 0.5);
            let v = discrete_dissipation(&f.values, 1, n, alpha).unwrap();
            let err = (v - exact).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-3, "err = {prev_err}");
    }

    #[test]
    fn continuum_dissipation_closed_form() {
        // alpha=2: Int |grad u|^2 = pi^2/2 for u = 1 + cos(2 pi x)/2.
        let f = cos_field(512, 0.5);
        let v = continuum_dissipation(&f, 2.0).unwrap();
        assert!((v - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-3, "v = {v}");
    }

    #[test]
    fn continuum_dissipation_fisher_form_alpha_one() {
        // alpha=1 equals 2 Int |grad sqrt(u)|^2; cross-check against a direct
        // finite difference of sqrt(u).
        let f = cos_field(256, 0.3);
        let v = continuum_dissipation(&f, 1.0).unwrap();
        let root = DensityField::new(f.values.iter().map(|&x| x.sqrt()).collect(), 1, 256).unwrap();
        // continuum_dissipation at alpha=2 is Int |grad .|^2 of its argument.
        let grad_sq = continuum_dissipation(&root, 2.0).unwrap();
        assert!((v - 2.0 * grad_sq).abs() < 1e-12, "v = {v}, 2*grad_sq = {}", 2.0 * grad_sq);
    }

    #[test]
    fn dissipation_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0).collect();
        let base = discrete_dissipation(&vals, 1, n, 1.5).unwrap();
        for shift in 1..n {
            let rolled: Vec<f64> = (0..n).map(|i| vals[(i + shift) % n]).collect();
            let v = discrete_dissipation(&rolled, 1, n, 1.5).unwrap();
            assert!((v - base).abs() < 1e-12);
        }
        // Reflection symmetry of the torus.
        let mirrored: Vec<f64> = (0..n).map(|i| vals[(n - i) % n]).collect();
        let v = discrete_dissipation(&mirrored, 1, n, 1.5).unwrap();
        assert!((v - base).abs() < 1e-12);
    }

    #[test]
    fn path_functional_frozen_path() {
        let c = 2.0;
        let field = DensityField::constant(c, 1, 8);
        let path = DensityPath::new(
            vec![0.0, 0.5, 1.0],
            vec![field.clone(), field.clone(), field],
        )
        .unwrap();
        let v = path_functional(&path, 2.0, 1.0).unwrap();
        let h = c * c.ln() - c + 1.0;
        assert!((v - h).abs() < 1e-13);
        assert!(v >= 0.0);
    }

    #[test]
    fn lp_norm_indicator() {
        let n = 16;
        let mut vals = vec![0.0; n];
        vals[3] = 1.0;
        let v = lp_norm(&vals, 2.0, 1.0 / n as f64).unwrap();
        assert!((v - (n as f64).powf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn l1_norm_is_mass() {
        let p = crate::lattice::ScalingParams::new(1, 8, 0.25, 2.0, 1.0).unwrap();
        let cfg = crate::lattice::Configuration::new(vec![1, 0, 2, 3, 1, 0, 0, 1], p).unwrap();
        let v = lp_norm(&cfg.density_field(), 1.0, 1.0 / 8.0).unwrap();
        assert!((v - cfg.total_mass()).abs() < 1e-14);
    }

    #[test]
    fn local_average_preserves_constants_and_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 64;
        let c = local_average(&vec![2.5; n], 1, n, 0.25).unwrap();
        assert!(c.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let avg = local_average(&vals, 1, n, 0.25).unwrap();
        let m0: f64 = vals.iter().sum();
        let m1: f64 = avg.iter().sum();
        assert!((m0 - m1).abs() < 1e-12 * m0, "mass drift {}", m0 - m1);
    }

    #[test]
    fn local_average_point_mass_matches_direct_convolution() {
        let n = 64;
        let r = 0.25;
        let mut vals = vec![0.0; n];
        vals[10] = 1.0;
        let avg = local_average(&vals, 1, n, r).unwrap();
        // Direct convolution oracle.
        let rn = r * n as f64;
        let w = (rn / 2.0).ceil() as isize;
        let mut kernel = vec![0.0; n];
        let mut ksum = 0.0;
        for delta in -w..=w {
            let v = bump(delta as f64 / rn);
            kernel[(delta.rem_euclid(n as isize)) as usize] += v;
            ksum += v;
        }
        for x in 0..n {
            let expect = kernel[(x as isize - 10).rem_euclid(n as isize) as usize] / ksum;
            assert!((avg[x] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn local_average_under_resolved_errors() {
        assert!(matches!(
            local_average(&vec![1.0; 8], 1, 8, 0.1),
            Err(crate::error::Error::KernelUnderResolved { .. })
        ));
    }

    #[test]
    fn local_average_is_entropy_and_lp_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 64;
        for _ in 0..20 {
            let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0).collect();
            let avg = local_average(&vals, 1, n, 0.2).unwrap();
            let h0 = entropy_site_field(&vals, 1, n, 1.0).unwrap();
            let h1 = entropy_site_field(&avg, 1, n, 1.0).unwrap();
            assert!(h1 <= h0 + 1e-12);
            for p in [1.0, 2.0, 4.0] {
                let n0 = lp_norm(&vals, p, 1.0 / n as f64).unwrap();
                let n1 = lp_norm(&avg, p, 1.0 / n as f64).unwrap();
                assert!(n1 <= n0 + 1e-12);
            }
        }
    }

    #[test]
    fn block_average_error_bound_pinned() {
        // ||eta - avg||_a^a <= C (1+a) r^gamma (1 + D_{a,N}(eta)) with
        // (C, gamma) fitted once on rough random fields and pinned here.
        let (c_pin, gamma_pin) = (6.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 128;
        let alpha = 2.0;
        for _ in 0..10 {
            let vals: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
            let mass: f64 = vals.iter().sum::<f64>() / n as f64;
            let diss = discrete_dissipation(&vals, 1, n, alpha).unwrap();
            for r in [0.05, 0.1, 0.2, 0.4] {
                let avg = local_average(&vals, 1, n, r).unwrap();
                let diff: Vec<f64> = vals.iter().zip(&avg).map(|(a, b)| a - b).collect();
                let lhs = lp_norm(&diff, alpha, 1.0 / n as f64).unwrap().powf(alpha);
                let rhs = c_pin * (1.0 + mass) * r.powf(gamma_pin) * (1.0 + diss);
                assert!(lhs <= rhs, "lhs = {lhs}, rhs = {rhs}, r = {r}");
            }
        }
    }

    #[test]
    fn interpolation_inequality_pinned() {
        // ||eta||_beta^beta <= C (1 + <1, eta>) (1 + D_{a,N}(eta)), beta from
        // the Sobolev exponent; C fitted once and pinned.
        let c_pin = 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 128;
        let alpha = 2.0;
        let beta = interpolation_beta(alpha, 1);
        assert!((beta - 2.5).abs() < 1e-12);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..n).map(|_| 3.0 * rng.random::<f64>()).collect();
            let mass: f64 = vals.iter().sum::<f64>() / n as f64;
            let diss = discrete_dissipation(&vals, 1, n, alpha).unwrap();
            let lhs = lp_norm(&vals, beta, 1.0 / n as f64).unwrap().powf(beta);
            let rhs = c_pin * (1.0 + mass) * (1.0 + diss);
            assert!(lhs <= rhs, "lhs = {lhs}, rhs = {rhs}");
        }
    }
}
