//! Complete binary sum tree over per-site exit rates: O(log n) sampling of
//! a site proportional to its rate and O(log n) updates after a jump.

#[derive(Debug, Clone)]
pub struct RateTree {
    /// Heap layout: root at 1, leaves at `pad..pad + n_leaves`.
    nodes: Vec<f64>,
    pad: usize,
    n_leaves: usize,
}

impl RateTree {
    pub fn new(rates: &[f64]) -> Self {
        let n_leaves = rates.len();
        let pad = n_leaves.next_power_of_two();
        let mut nodes = vec![0.0f64; 2 * pad];
        nodes[pad..pad + n_leaves].copy_from_slice(rates);
        for i in (1..pad).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { nodes, pad, n_leaves }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.pad + leaf]
    }

    /// Set one leaf rate and refresh ancestors.
    #[inline]
    pub fn set(&mut self, leaf: usize, rate: f64) {
        let mut i = self.pad + leaf;
        self.nodes[i] = rate;
        i >>= 1;
        while i >= 1 {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
            if i == 1 {
                break;
            }
            i >>= 1;
        }
    }

    /// Descend to the leaf owning cumulative mass `target` in `[0, total)`.
    #[inline]
    pub fn sample(&self, mut target: f64) -> usize {
        let mut i = 1usize;
        while i < self.pad {
            let left = self.nodes[2 * i];
            if target < left {
                i *= 2;
            } else {
                target -= left;
                i = 2 * i + 1;
            }
        }
        (i - self.pad).min(self.n_leaves - 1)
    }

    /// Rebuild all internal sums exactly; returns the relative drift of the
    /// root against the freshly computed total.
    pub fn rebuild(&mut self) -> f64 {
        let old_total = self.nodes[1];
        for i in (1..self.pad).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
        let new_total = self.nodes[1];
        if new_total == 0.0 {
            (old_total - new_total).abs()
        } else {
            ((old_total - new_total) / new_total).abs()
        }
    }
}
