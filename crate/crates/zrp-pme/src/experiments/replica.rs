//! Deterministic replica harness: per-replica random streams split from the
//! master seed, order-independent (compensated) aggregation and basic
//! summary statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Child stream for one replica: same key as the master seed, stream index
/// set to the replica number.
pub fn replica_rng(master_seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Kahan-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean / variance / standard error of a replica sample.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl Summary {
    /// Half-width of the normal-approximation 95% confidence interval.
    pub fn ci95(&self) -> f64 {
        1.959964 * self.stderr
    }
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    assert!(n >= 1);
    let mut acc = Kahan::default();
    for &v in values {
        acc.add(v);
    }
    let mean = acc.value() / n as f64;
    let mut sq = Kahan::default();
    for &v in values {
        sq.add((v - mean) * (v - mean));
    }
    let variance = if n > 1 { sq.value() / (n - 1) as f64 } else { 0.0 };
    Summary { n, mean, variance, stderr: (variance / n as f64).sqrt() }
}

/// Run `replicas` independent jobs in parallel, each with its own split
/// stream; results come back in replica order regardless of scheduling.
pub fn parallel_replicas<T, F>(master_seed: u64, replicas: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, ChaCha8Rng) -> T + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|r| job(r, replica_rng(master_seed, r as u64)))
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    num / den
}
