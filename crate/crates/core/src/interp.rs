//! Interpolation helpers: natural cubic splines on uniform grids and
//! monotone inversion of tabulated CDFs.

use crate::error::{invalid, Result};

/// Natural cubic spline through `(x_k, y_k)` on a uniform grid.
///
/// Stores the second derivatives obtained from the tridiagonal system with
/// natural boundary conditions (`y'' = 0` at both ends).
#[derive(Debug, Clone)]
pub struct UniformSpline {
    x0: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl UniformSpline {
    pub fn fit(x0: f64, step: f64, values: Vec<f64>) -> Result<UniformSpline> {
        let n = values.len();
        if n < 2 {
            return invalid("spline needs at least two points");
        }
        if !(step.is_finite() && step > 0.0) || !x0.is_finite() {
            return invalid("spline grid must be finite with positive step");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("spline values must be finite");
        }
        // Solve for interior second derivatives; the uniform-grid system is
        // tridiagonal with constant bands (h/6, 2h/3, h/6).
        let mut second = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut diag = vec![2.0 * step / 3.0; m];
            let off = step / 6.0;
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|k| (values[k + 1] - 2.0 * values[k] + values[k - 1]) / step)
                .collect();
            // Thomas algorithm.
            for k in 1..m {
                let w = off / diag[k - 1];
                diag[k] -= w * off;
                rhs[k] -= w * rhs[k - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                second[k + 1] = (rhs[k] - off * second[k + 2]) / diag[k];
            }
        }
        Ok(UniformSpline {
            x0,
            step,
            values,
            second,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    /// Whether `x` lies inside the tabulated range.
    pub fn covers(&self, x: f64) -> bool {
        x >= self.x_min() && x <= self.x_max()
    }

    /// Evaluate the spline; callers should check [`covers`](Self::covers)
    /// first — outside the grid the boundary cubic is extrapolated.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let pos = (x - self.x0) / self.step;
        let k = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
        let a = (self.x0 + self.step * (k + 1) as f64 - x) / self.step;
        let b = 1.0 - a;
        let h2 = self.step * self.step / 6.0;
        a * self.values[k]
            + b * self.values[k + 1]
            + ((a * a * a - a) * self.second[k] + (b * b * b - b) * self.second[k + 1]) * h2
    }
}

/// Tabulated strictly increasing CDF with linear interpolation, used for
/// inverse-CDF sampling. Linear interpolation of a monotone table is
/// itself monotone, so inversion is well-posed.
#[derive(Debug, Clone)]
pub struct MonotoneCdf {
    xs: Vec<f64>,
    ps: Vec<f64>,
}

impl MonotoneCdf {
    /// `xs` strictly increasing, `ps` nondecreasing from 0 to 1.
    pub fn new(xs: Vec<f64>, ps: Vec<f64>) -> Result<MonotoneCdf> {
        if xs.len() != ps.len() || xs.len() < 2 {
            return invalid("cdf table needs matching xs/ps with at least two rows");
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("cdf table abscissae must be strictly increasing");
        }
        if ps.windows(2).any(|w| w[1] < w[0]) {
            return invalid("cdf table probabilities must be nondecreasing");
        }
        if (ps[0]).abs() > 1e-9 || (ps[ps.len() - 1] - 1.0).abs() > 1e-9 {
            return invalid("cdf table must span [0, 1]");
        }
        Ok(MonotoneCdf { xs, ps })
    }

    /// `P(X ≤ x)` with linear interpolation, clamped to `[0, 1]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let k = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            idx => idx - 1,
        };
        let w = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        (self.ps[k] + w * (self.ps[k + 1] - self.ps[k])).clamp(0.0, 1.0)
    }

    /// Generalized inverse: smallest tabulated x with `cdf(x) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let n = self.ps.len();
        let k = match self.ps.partition_point(|&v| v < p) {
            0 => 0,
            idx if idx >= n => n - 1,
            idx => idx,
        };
        if k == 0 {
            return self.xs[0];
        }
        let (p0, p1) = (self.ps[k - 1], self.ps[k]);
        if p1 <= p0 {
            // Flat stretch: the left edge is the generalized inverse.
            return self.xs[k - 1];
        }
        let w = (p - p0) / (p1 - p0);
        self.xs[k - 1] + w * (self.xs[k] - self.xs[k - 1])
    }
}
