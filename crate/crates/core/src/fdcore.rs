//! Sampled functions on [0,1], finite differences, trapezoid quadrature and
//! the square-root velocity transform.
//!
//! Every quantity in the crate lives on a [`Grid`]: a strictly increasing set
//! of points running from exactly 0 to exactly 1. Derivatives use
//! second-order three-point stencils (central in the interior, one-sided at
//! the ends), integrals use the trapezoid rule, and compositions use linear
//! interpolation, so the discretization error of a warp action is O(1/N).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::Warping;

/// Tolerance for a warp value falling outside [0,1] before it is rejected.
pub const RANGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Grid {
    points: Arc<[f64]>,
    uniform: bool,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.points, &other.points) || self.points[..] == other.points[..]
    }
}

impl Grid {
    /// Uniform grid of `n` points on [0,1].
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("grid needs at least 3 points, got {n}")));
        }
        let step = 1.0 / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        points[n - 1] = 1.0;
        Ok(Self { points: points.into(), uniform: true })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::invalid(format!("grid needs at least 3 points, got {n}")));
        }
        if points[0] != 0.0 || points[n - 1] != 1.0 {
            return Err(Error::invalid("grid endpoints must be exactly 0 and 1"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        let step = 1.0 / (n - 1) as f64;
        let uniform = points
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - i as f64 * step).abs() < 1e-12);
        Ok(Self { points: points.into(), uniform })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Trapezoid-rule weights: `∫ f ≈ Σ w_i f_i`.
    pub fn trapz_weights(&self) -> Vec<f64> {
        let t = &self.points;
        let n = t.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = 0.5 * (t[i + 1] - t[i]);
            w[i] += h;
            w[i + 1] += h;
        }
        w
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n == self.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch { left: self.len(), right: n })
        }
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch { left: self.len(), right: other.len() })
        }
    }
}

/// Trapezoid integral of `values` over the grid.
pub fn trapz(grid: &Grid, values: &[f64]) -> f64 {
    let t = grid.points();
    debug_assert_eq!(t.len(), values.len());
    t.windows(2)
        .zip(values.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Running trapezoid integral, starting at 0.
pub fn cumtrapz(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let t = grid.points();
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..values.len() {
        acc += 0.5 * (t[i] - t[i - 1]) * (values[i] + values[i - 1]);
        out.push(acc);
    }
    out
}

/// L² inner product under the trapezoid rule.
pub fn inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let t = grid.points();
    let mut acc = 0.0;
    for i in 0..t.len() - 1 {
        acc += 0.5 * (t[i + 1] - t[i]) * (a[i] * b[i] + a[i + 1] * b[i + 1]);
    }
    acc
}

pub fn l2_norm(grid: &Grid, a: &[f64]) -> f64 {
    inner(grid, a, a).max(0.0).sqrt()
}

/// Index of the interval `[t_j, t_{j+1}]` containing `x` (clamped).
#[inline]
pub(crate) fn locate(grid: &Grid, x: f64) -> usize {
    let t = grid.points();
    let n = t.len();
    let j = if grid.uniform {
        (x * (n - 1) as f64).floor() as isize
    } else {
        t.partition_point(|&p| p <= x) as isize - 1
    };
    j.clamp(0, n as isize - 2) as usize
}

/// Piecewise-linear interpolation of `values` at `x ∈ [0,1]`.
#[inline]
pub fn interp_linear(grid: &Grid, values: &[f64], x: f64) -> f64 {
    let t = grid.points();
    let j = locate(grid, x);
    let h = t[j + 1] - t[j];
    let s = (x - t[j]) / h;
    values[j] + s * (values[j + 1] - values[j])
}

/// Three-point second-order derivative of grid values.
pub fn diff_values(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let t = grid.points();
    let n = t.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let h1 = t[i] - t[i - 1];
        let h2 = t[i + 1] - t[i];
        d[i] = if grid.uniform {
            (f[i + 1] - f[i - 1]) / (h1 + h2)
        } else {
            -h2 / (h1 * (h1 + h2)) * f[i - 1]
                + (h2 - h1) / (h1 * h2) * f[i]
                + h1 / (h2 * (h1 + h2)) * f[i + 1]
        };
    }
    if grid.uniform {
        let h = t[1] - t[0];
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        return d;
    }
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    d[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1]
        - h1 / (h2 * (h1 + h2)) * f[2];
    let (h1, h2) = (t[n - 1] - t[n - 2], t[n - 2] - t[n - 3]);
    d[n - 1] = (2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[n - 1] - (h1 + h2) / (h1 * h2) * f[n - 2]
        + h1 / (h2 * (h1 + h2)) * f[n - 3];
    d
}

fn check_values(grid: &Grid, values: &[f64], what: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::invalid(format!(
            "{what}: {} values for a {}-point grid",
            values.len(),
            grid.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite value at index {i}")));
    }
    Ok(())
}

/// Anything that is a vector of samples on a grid.
pub trait OnGrid {
    fn grid(&self) -> &Grid;
    fn values(&self) -> &[f64];
}

macro_rules! grid_function {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            grid: Grid,
            values: Vec<f64>,
        }

        impl $name {
            pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
                check_values(&grid, &values, stringify!($name))?;
                Ok(Self { grid, values })
            }

            pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
                let values = grid.points().iter().map(|&t| f(t)).collect();
                Self::new(grid.clone(), values)
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }
        }

        impl OnGrid for $name {
            fn grid(&self) -> &Grid {
                &self.grid
            }
            fn values(&self) -> &[f64] {
                &self.values
            }
        }
    };
}

grid_function!(
    /// Real-valued function observed on a grid.
    SampledFunction
);
grid_function!(
    /// Square-root velocity representation `q = sign(ḟ)·√|ḟ|`.
    Srvf
);

pub fn derivative(f: &SampledFunction) -> Result<SampledFunction> {
    if f.grid.len() < 3 {
        return Err(Error::invalid("derivative needs at least 3 points"));
    }
    Ok(SampledFunction { grid: f.grid.clone(), values: diff_values(&f.grid, &f.values) })
}

#[inline]
fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

pub fn to_srvf(f: &SampledFunction) -> Result<Srvf> {
    let d = derivative(f)?;
    let values = d.values.iter().map(|&v| if v == 0.0 { 0.0 } else { signed_sqrt(v) }).collect();
    Ok(Srvf { grid: f.grid.clone(), values })
}

/// Inverse transform: `f(t) = f0 + ∫₀ᵗ q|q|`.
pub fn from_srvf(q: &Srvf, f0: f64) -> SampledFunction {
    let integrand: Vec<f64> = q.values.iter().map(|&v| v * v.abs()).collect();
    let values = cumtrapz(&q.grid, &integrand).into_iter().map(|v| v + f0).collect();
    SampledFunction { grid: q.grid.clone(), values }
}

fn compose(grid: &Grid, values: &[f64], gamma: &Warping) -> Result<Vec<f64>> {
    grid.check_same(gamma.grid())?;
    gamma
        .values()
        .iter()
        .map(|&x| {
            if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&x) {
                return Err(Error::invalid(format!("warp value {x} outside [0,1]")));
            }
            Ok(interp_linear(grid, values, x.clamp(0.0, 1.0)))
        })
        .collect()
}

/// `f ∘ γ` by linear interpolation.
pub fn warp_function(f: &SampledFunction, gamma: &Warping) -> Result<SampledFunction> {
    let values = compose(&f.grid, &f.values, gamma)?;
    Ok(SampledFunction { grid: f.grid.clone(), values })
}

/// Group action on SRVFs: `(q, γ) = (q ∘ γ)·√γ̇`.
pub fn warp_srvf(q: &Srvf, gamma: &Warping) -> Result<Srvf> {
    let composed = compose(&q.grid, &q.values, gamma)?;
    let slope = diff_values(gamma.grid(), gamma.values());
    let values = composed
        .iter()
        .zip(&slope)
        .map(|(&v, &s)| v * s.max(0.0).sqrt())
        .collect();
    Ok(Srvf { grid: q.grid.clone(), values })
}

/// `√∫(a−b)²` by the trapezoid rule.
pub fn l2_dist<A: OnGrid + ?Sized, B: OnGrid + ?Sized>(a: &A, b: &B) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(l2_norm(a.grid(), &diff))
}

/// Point-wise sum of squared differences between two warps.
pub fn sse(a: &Warping, b: &Warping) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum())
}
