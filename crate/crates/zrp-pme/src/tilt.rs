//! Space-time tilt fields `h(t, x)` used both to bias jump rates in the
//! particle simulation and as the drift potential of the Fokker-Planck
//! solver.

use std::sync::Arc;

type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync;

/// Smooth scalar field on `[0, t_fin] x T^d` with a finite-oscillation bound
/// supplied as metadata (`osc = sup h - inf h`, over all times).
#[derive(Clone)]
pub struct TiltField {
    value: Arc<ValueFn>,
    grad: Option<Arc<GradFn>>,
    pub osc: f64,
    pub time_dependent: bool,
}

impl std::fmt::Debug for TiltField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiltField")
            .field("osc", &self.osc)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl TiltField {
    pub fn new<F>(value: F, osc: f64, time_dependent: bool) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), grad: None, osc, time_dependent }
    }

    /// Attach an analytic spatial gradient (component per axis).
    pub fn with_grad<G>(mut self, grad: G) -> Self
    where
        G: Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// `eps * cos(2 pi k . x)`, constant in time.
    pub fn cosine(eps: f64, wave: Vec<usize>) -> Self {
        let w = wave.clone();
        let f = move |_t: f64, x: &[f64]| {
            let phase: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &ki)| 2.0 * std::f64::consts::PI * ki as f64 * xi)
                .sum();
            eps * phase.cos()
        };
        let wg = wave;
        let g = move |_t: f64, x: &[f64], axis: usize| {
            let phase: f64 = x
                .iter()
                .zip(&wg)
                .map(|(&xi, &ki)| 2.0 * std::f64::consts::PI * ki as f64 * xi)
                .sum();
            -eps * 2.0 * std::f64::consts::PI * wg[axis] as f64 * phase.sin()
        };
        Self::new(f, 2.0 * eps.abs(), false).with_grad(g)
    }

    #[inline]
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    /// Spatial gradient component; analytic when supplied, otherwise a
    /// central difference at scale 1e-5.
    pub fn grad(&self, t: f64, x: &[f64], axis: usize) -> f64 {
        match &self.grad {
            Some(g) => g(t, x, axis),
            None => {
                let hstep = 1e-5;
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[axis] += hstep;
                xm[axis] -= hstep;
                ((self.value)(t, &xp) - (self.value)(t, &xm)) / (2.0 * hstep)
            }
        }
    }
}
