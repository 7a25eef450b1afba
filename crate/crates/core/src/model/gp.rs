//! Squared-exponential Gaussian-process priors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fdcore::Grid;

/// Relative diagonal jitter added to every SE covariance.
pub const JITTER: f64 = 1e-8;

/// `K_ij = s²·exp(−(|t_i − t_j|/(2l))²)`, with `JITTER·s²` on the diagonal.
pub fn se_kernel(grid: &Grid, s2: f64, l: f64) -> DMatrix<f64> {
    let t = grid.points();
    let n = t.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = (t[i] - t[j]) / (2.0 * l);
        let k = s2 * (-d * d).exp();
        if i == j {
            k + JITTER * s2
        } else {
            k
        }
    })
}

/// Cholesky factor of the unit-scale SE correlation `R̃(l)`, so that the
/// prior covariance is `s²·R̃(l)`.
#[derive(Clone, Debug)]
pub struct GpFactor {
    l: f64,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl GpFactor {
    pub fn new(grid: &Grid, l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("length scale must be positive, got {l}")));
        }
        let chol = Cholesky::new(se_kernel(grid, 1.0, l))
            .ok_or_else(|| Error::Numerical(format!("SE kernel with l={l} is not positive definite")))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { l, chol, log_det })
    }

    pub fn length_scale(&self) -> f64 {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `fᵀ R̃⁻¹ f`.
    pub fn quad(&self, f: &[f64]) -> f64 {
        let mut x = DVector::from_column_slice(f);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x.norm_squared()
    }

    /// `log N(f; 0, s²R̃)`.
    pub fn log_density(&self, f: &[f64], s2: f64) -> f64 {
        let n = f.len() as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI * s2).ln() + self.log_det) - 0.5 * self.quad(f) / s2
    }

    /// `L·z` for the lower Cholesky factor `L`, i.e. a draw from `N(0, R̃)`
    /// when `z` is standard normal.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let l = self.chol.l();
        (l * DVector::from_column_slice(z)).iter().copied().collect()
    }
}

/// Posterior mean and log marginal likelihood of GP regression with an SE
/// kernel and i.i.d. Gaussian noise, around the sample mean of `y`.
pub fn gp_regression(grid: &Grid, y: &[f64], s2: f64, l: f64, noise: f64) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let k = se_kernel(grid, s2, l);
    let mut ky = k.clone();
    for i in 0..n {
        ky[(i, i)] += noise;
    }
    let chol = Cholesky::new(ky).ok_or_else(|| Error::Numerical("GP regression covariance is singular".into()))?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let alpha = chol.solve(&r);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let fit = k * alpha;
    Ok((fit.iter().map(|v| v + mean).collect(), lml))
}

/// GP regression fit chosen by marginal likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothFit {
    pub values: Vec<f64>,
    pub s2: f64,
    pub l: f64,
    pub noise: f64,
}

const SCALE_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
const LENGTH_GRID: [f64; 7] = [0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64];
const NOISE_GRID: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// GP smoother with `(s², l, noise)` picked by maximizing the marginal
/// likelihood over coarse log-grids scaled by the sample variance.
pub fn gp_smooth(grid: &Grid, y: &[f64]) -> Result<SmoothFit> {
    grid.check_len(y.len())?;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var <= 1e-300 {
        return Ok(SmoothFit { values: y.to_vec(), s2: 0.0, l: LENGTH_GRID[3], noise: 0.0 });
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &sf in &SCALE_GRID {
        for &l in &LENGTH_GRID {
            for &nf in &NOISE_GRID {
                let Ok((_, lml)) = gp_regression(grid, y, sf * var, l, nf * var) else { continue };
                if best.is_none_or(|b| lml > b.0) {
                    best = Some((lml, sf * var, l, nf * var));
                }
            }
        }
    }
    let (_, s2, l, noise) = best.ok_or_else(|| Error::Numerical("GP smoother found no valid fit".into()))?;
    let (values, _) = gp_regression(grid, y, s2, l, noise)?;
    Ok(SmoothFit { values, s2, l, noise })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        let g = Grid::uniform(5).unwrap();
        let k = se_kernel(&g, 2.0, 0.25);
        for i in 0..5 {
            assert_eq!(k[(i, i)], 2.0 * (1.0 + 1e-8));
        }
        // |t0 - t2| = 0.5
        assert!((k[(0, 2)] / 2.0 - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k[(0, 2)] / 2.0 - 0.36788).abs() < 1e-5);
        let far = se_kernel(&g, 1.0, 0.01);
        assert!(far[(0, 4)] < 1e-300);
        assert!((&k - k.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn factor_matches_dense_density() {
        let g = Grid::uniform(12).unwrap();
        let f: Vec<f64> = g.points().iter().map(|t| (3.0 * t).sin()).collect();
        let gp = GpFactor::new(&g, 0.3).unwrap();
        let k = se_kernel(&g, 0.7, 0.3);
        let kinv = k.clone().try_inverse().unwrap();
        let fv = DVector::from_column_slice(&f);
        let quad = (fv.transpose() * &kinv * &fv)[(0, 0)];
        let oracle = -0.5 * (12.0 * (2.0 * std::f64::consts::PI).ln() + k.determinant().ln()) - 0.5 * quad;
        let got = gp.log_density(&f, 0.7);
        assert!((got - oracle).abs() < 1e-6 * oracle.abs(), "{got} vs {oracle}");
    }

    #[test]
    fn correlate_reproduces_covariance() {
        let g = Grid::uniform(6).unwrap();
        let gp = GpFactor::new(&g, 0.4).unwrap();
        let k = se_kernel(&g, 1.0, 0.4);
        // Columns of L give L·Lᵀ.
        let mut ll = DMatrix::zeros(6, 6);
        for j in 0..6 {
            let mut e = vec![0.0; 6];
            e[j] = 1.0;
            let col = gp.correlate(&e);
            for a in 0..6 {
                for b in 0..6 {
                    ll[(a, b)] += col[a] * col[b];
                }
            }
        }
        assert!((ll - k).abs().max() < 1e-12);
    }

    #[test]
    fn regression_interpolates_smooth_data() {
        let g = Grid::uniform(51).unwrap();
        let y: Vec<f64> = g.points().iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).collect();
        let (fit, _) = gp_regression(&g, &y, 1.0, 0.1, 1e-8).unwrap();
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn smoother_keeps_smooth_data() {
        let g = Grid::uniform(101).unwrap();
        let y: Vec<f64> = g
            .points()
            .iter()
            .map(|t| (-(t - 0.35f64).powi(2) / 0.0098).exp() + (-(t - 0.65f64).powi(2) / 0.0098).exp())
            .collect();
        let fit = gp_smooth(&g, &y).unwrap();
        let err = fit.values.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert_eq!(fit, gp_smooth(&g, &y).unwrap());
    }

    #[test]
    fn smoother_shrinks_pure_noise() {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let g = Grid::uniform(101).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let sd = 0.2;
        let y: Vec<f64> = (0..101).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = gp_smooth(&g, &y).unwrap();
        let bound = 3.0 * sd / 101f64.sqrt();
        assert!(fit.values.iter().all(|v| v.abs() < bound), "{:?}", fit);
    }
}
