//! Tabulated household savings policy.
//!
//! End-of-period assets `a' = s_ε(a)` as a function of beginning-of-period
//! assets and employment status, stored on a grid and interpolated
//! linearly. The panel density needs the policy and its derivative along
//! the asset axis; the derivative is a central finite difference so the
//! table does not have to carry slopes.

use crate::error::{invalid, Result};

/// Savings rule `a' = s_ε(a)` for the two employment states, tabulated on
/// a shared strictly increasing asset grid.
#[derive(Debug, Clone)]
pub struct SavingsPolicy {
    grid: Vec<f64>,
    values: [Vec<f64>; 2],
}

impl SavingsPolicy {
    pub fn new(grid: Vec<f64>, values: [Vec<f64>; 2]) -> Result<SavingsPolicy> {
        if grid.len() < 2 {
            return invalid("savings policy needs at least two grid points");
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return invalid("savings policy grid must be finite");
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("savings policy grid must be strictly increasing");
        }
        for vals in &values {
            if vals.len() != grid.len() {
                return invalid("savings policy values must match the grid length");
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return invalid("savings policy values must be finite");
            }
        }
        Ok(SavingsPolicy { grid, values })
    }

    /// Policy from closures, sampled on `n` equal-spaced points of
    /// `[lo, hi]`.
    pub fn from_fn(
        lo: f64,
        hi: f64,
        n: usize,
        rule: impl Fn(usize, f64) -> f64,
    ) -> Result<SavingsPolicy> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || n < 2 {
            return invalid("policy sampling needs a finite interval and n >= 2");
        }
        let step = (hi - lo) / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        let values = [
            grid.iter().map(|&a| rule(0, a)).collect(),
            grid.iter().map(|&a| rule(1, a)).collect(),
        ];
        SavingsPolicy::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `s_ε(a)`, extending the boundary segments linearly outside the grid.
    pub fn value(&self, eps: usize, a: f64) -> f64 {
        let vals = &self.values[eps.min(1)];
        let n = self.grid.len();
        // Pick the segment: clamp to the boundary segments for off-grid a.
        let hi = match self.grid.partition_point(|&g| g < a) {
            0 => 1,
            k if k >= n => n - 1,
            k => k,
        };
        let (x0, x1) = (self.grid[hi - 1], self.grid[hi]);
        let w = (a - x0) / (x1 - x0);
        vals[hi - 1] + w * (vals[hi] - vals[hi - 1])
    }

    /// `∂s_ε/∂a` by central finite difference with step
    /// `max(1e-5, 1e-5·|a|)`.
    pub fn derivative(&self, eps: usize, a: f64) -> f64 {
        let h = (1e-5 * a.abs()).max(1e-5);
        (self.value(eps, a + h) - self.value(eps, a - h)) / (2.0 * h)
    }

    /// Whether `s_ε` is strictly increasing on the grid for both states.
    pub fn is_strictly_increasing(&self) -> bool {
        self.values
            .iter()
            .all(|vals| vals.windows(2).all(|w| w[1] > w[0]))
    }
}
