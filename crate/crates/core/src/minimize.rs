//! Bounded derivative-free minimisation of a univariate function.
//!
//! A coarse scan locates the best basin (the clamped violation bound makes
//! the menu objectives flat near zero latency, so local search alone can stall
//! on the plateau), then golden-section search refines inside the bracket
//! formed by the scan neighbours of the best point.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedMinimizer {
    /// Number of coarse scan points, including both endpoints.
    pub scan_points: usize,
    /// Final bracket width.
    pub tolerance: f64,
}

impl Default for BoundedMinimizer {
    fn default() -> Self {
        Self {
            scan_points: 64,
            tolerance: 1e-8,
        }
    }
}

impl BoundedMinimizer {
    /// Minimise `f` on `[lo, hi]`. The scan is logarithmically spaced when
    /// `lo > 0`, which resolves the short-latency region where the objectives
    /// change fastest.
    pub fn minimize<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> ScalarMin {
        debug_assert!(lo <= hi);
        if hi - lo <= self.tolerance {
            let x = 0.5 * (lo + hi);
            return ScalarMin {
                x,
                value: f(x),
                evaluations: 1,
            };
        }
        let n = self.scan_points.max(3);
        let grid = scan_grid(lo, hi, n);
        let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        let mut evaluations = n;
        let best = values
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v < values[b] { i } else { b });

        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(n - 1)];
        let refined = golden(a, b, self.tolerance, &mut f);
        evaluations += refined.evaluations;
        if refined.value < values[best] {
            ScalarMin {
                evaluations,
                ..refined
            }
        } else {
            ScalarMin {
                x: grid[best],
                value: values[best],
                evaluations,
            }
        }
    }
}

fn scan_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = if lo > 0.0 {
        let (la, lb) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
            .collect()
    } else {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    grid[0] = lo;
    grid[n - 1] = hi;
    grid
}

/// Golden-section search on `[a, b]` until the bracket is narrower than `tol`.
pub fn golden<F: FnMut(f64) -> f64>(mut a: f64, mut b: f64, tol: f64, f: &mut F) -> ScalarMin {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evaluations = 2;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evaluations += 1;
    }
    let (x, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    ScalarMin {
        x,
        value,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let m = BoundedMinimizer::default().minimize(1e-3, 10.0, |x| (x - 0.37).powi(2));
        assert!((m.x - 0.37).abs() < 1e-7);
    }

    #[test]
    fn boundary_minimum() {
        let m = BoundedMinimizer::default().minimize(1e-3, 10.0, |x| -x);
        assert_eq!(m.x, 10.0);
        let m = BoundedMinimizer::default().minimize(1e-3, 10.0, |x| x);
        assert_eq!(m.x, 1e-3);
    }

    #[test]
    fn plateau_then_basin() {
        // Flat-then-convex shape with a better interior minimum.
        let f = |x: f64| 0.1 * x + (2.0 * (-3.0 * x).exp()).min(1.0);
        let m = BoundedMinimizer::default().minimize(1e-3, 10.0, f);
        let grid_best = (0..200_000)
            .map(|i| 1e-3 + (10.0 - 1e-3) * i as f64 / 199_999.0)
            .map(f)
            .fold(f64::INFINITY, f64::min);
        assert!(m.value <= grid_best + 1e-10);
    }

    #[test]
    fn degenerate_interval() {
        let m = BoundedMinimizer::default().minimize(2.0, 2.0, |x| x * x);
        assert_eq!(m.x, 2.0);
    }
}
