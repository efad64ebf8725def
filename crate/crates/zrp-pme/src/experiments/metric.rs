//! Fourier-weighted metric standing in for a weak-star metric on densities:
//! `d(u, v)^2 = sum_{0 < |k|_inf <= K} w_k |u_hat_k - v_hat_k|^2` with
//! `w_k = (1 + |k|^2)^(-(d+1))`, plus the mass gap at `k = 0`. Coefficients
//! of piecewise-constant grid fields are computed exactly (cell-box
//! integrals), so fields living on different grids are comparable.

#[derive(Debug, Clone, Copy)]
pub struct WeakStarMetric {
    pub d: usize,
    pub k_max: usize,
}

impl WeakStarMetric {
    pub fn new(d: usize, k_max: usize) -> Self {
        Self { d, k_max }
    }

    /// Exact Fourier coefficients (cos, sin pair per wave vector) of a
    /// piecewise-constant field with `cells` per axis.
    fn coefficients(&self, values: &[f64], cells: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let n = cells as f64;
        let vol = n.powi(-(self.d as i32));
        let mut wave = vec![0i64; self.d];
        self.for_each_wave(&mut wave, 0, &mut |k: &[i64]| {
            let mut re = 0.0;
            let mut im = 0.0;
            // Piecewise-constant correction factor per axis: sinc(pi k / n).
            let mut corr = 1.0;
            for &ki in k {
                let z = std::f64::consts::PI * ki as f64 / n;
                corr *= if z.abs() < 1e-12 { 1.0 } else { z.sin() / z };
            }
            for (c, &v) in values.iter().enumerate() {
                let mut idx = c;
                let mut phase = 0.0;
                for axis in (0..self.d).rev() {
                    let coord = (idx % cells) as f64 + 0.5;
                    idx /= cells;
                    phase += 2.0 * std::f64::consts::PI * k[axis] as f64 * coord / n;
                }
                let (s, co) = phase.sin_cos();
                re += v * co;
                im -= v * s;
            }
            out.push((re * vol * corr, im * vol * corr));
        });
        out
    }

    fn for_each_wave(&self, wave: &mut Vec<i64>, axis: usize, f: &mut impl FnMut(&[i64])) {
        if axis == self.d {
            if wave.iter().any(|&c| c != 0) {
                // Half lattice: first nonzero component positive.
                let first = *wave.iter().find(|&&c| c != 0).unwrap();
                if first > 0 {
                    f(wave);
                }
            }
            return;
        }
        for k in -(self.k_max as i64)..=(self.k_max as i64) {
            wave[axis] = k;
            self.for_each_wave(wave, axis + 1, f);
            wave[axis] = 0;
        }
    }

    fn weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut wave = vec![0i64; self.d];
        self.for_each_wave(&mut wave, 0, &mut |k: &[i64]| {
            let k2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
            out.push((1.0 + k2).powi(-(self.d as i32 + 1)));
        });
        out
    }

    /// Metric between two piecewise-constant fields (possibly on different
    /// grids, same dimension).
    pub fn distance(
        &self,
        u: &[f64],
        u_cells: usize,
        v: &[f64],
        v_cells: usize,
    ) -> f64 {
        let cu = self.coefficients(u, u_cells);
        let cv = self.coefficients(v, v_cells);
        let w = self.weights();
        let mass_u: f64 = u.iter().sum::<f64>() / u.len() as f64;
        let mass_v: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let mut acc = (mass_u - mass_v).powi(2);
        for i in 0..cu.len() {
            // One half-lattice vector represents +-k; double the weight.
            let dr = cu[i].0 - cv[i].0;
            let di = cu[i].1 - cv[i].1;
            acc += 2.0 * w[i] * (dr * dr + di * di);
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_fields_have_zero_distance() {
        let m = WeakStarMetric::new(1, 8);
        let u: Vec<f64> = (0..32).map(|i| 1.0 + (i as f64 / 32.0)).collect();
        assert!(m.distance(&u, 32, &u, 32) < 1e-15);
    }

    #[test]
    fn refinement_of_same_function_is_close() {
        // Piecewise-constant representations of the same cosine on coarse
        // and fine grids: the gap is the coarse representation error and
        // shrinks quadratically under refinement.
        let f = |x: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).cos();
        let cell_avg = |cells: usize| -> Vec<f64> {
            (0..cells)
                .map(|c| {
                    let a = c as f64 / cells as f64;
                    let b = (c + 1) as f64 / cells as f64;
                    let om = 2.0 * std::f64::consts::PI;
                    1.0 + 0.5 * ((om * b).sin() - (om * a).sin()) / (om * (b - a))
                })
                .collect()
        };
        let fine: Vec<f64> = (0..512).map(|c| f((c as f64 + 0.5) / 512.0)).collect();
        let m = WeakStarMetric::new(1, 8);
        let d16 = m.distance(&cell_avg(16), 16, &fine, 512);
        let d64 = m.distance(&cell_avg(64), 64, &fine, 512);
        assert!(d16 < 5e-3, "d16 = {d16}");
        assert!(d64 < d16 / 8.0, "d16 = {d16}, d64 = {d64}");
    }

    #[test]
    fn distance_separates_masses_and_modes() {
        let m = WeakStarMetric::new(1, 4);
        let u = vec![1.0; 64];
        let v = vec![1.1; 64];
        assert!((m.distance(&u, 64, &v, 64) - 0.1).abs() < 1e-12);
        let w: Vec<f64> = (0..64)
            .map(|c| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * (c as f64 + 0.5) / 64.0).cos())
            .collect();
        assert!(m.distance(&u, 64, &w, 64) > 0.05);
    }
}
