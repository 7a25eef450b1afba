//! Level-2 registration likelihood as a function of the basis coefficients.
//!
//! The forward map is
//!
//! ```text
//! c ─▶ g = Σ c_k b_k ─▶ ψ = exp₁(g) ─▶ γ = ∫₀ᵗ ψ² ─▶ 𝒢(c) = q₂(γ)·ψ
//! ```
//!
//! and `Φ(c) = (N/2)·log σ² + 1/(2σ²)·∫(q₁ − 𝒢(c))²`. `q₂` is evaluated
//! through a C¹ cubic Hermite interpolant whose knot slopes are the
//! three-point finite differences of `q₂`; this keeps `Φ` continuously
//! differentiable, so the analytic gradient below is the exact derivative
//! of the discrete `Φ`.

use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, PriorSpectrum, TangentCoeffs};
use crate::error::{Error, Result};
use crate::fdcore::{cumtrapz, diff_values, locate, Grid, OnGrid, Srvf};
use crate::geom::INJECTIVITY_LIMIT;

/// A differentiable negative log-likelihood over coefficient vectors.
pub trait Potential {
    fn dim(&self) -> usize;

    fn value(&self, c: &[f64]) -> Result<f64>;

    fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Gauss-Newton Hessian, when the potential has a least-squares form.
    fn gnh(&self, _c: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }
}

/// `C¹` cubic Hermite interpolant on a grid.
#[derive(Clone, Debug)]
pub(crate) struct Hermite {
    grid: Grid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Hermite {
    pub(crate) fn new(grid: &Grid, values: &[f64]) -> Self {
        Self { grid: grid.clone(), values: values.to_vec(), slopes: diff_values(grid, values) }
    }

    /// Value and derivative at `x ∈ [0,1]`.
    #[inline]
    pub(crate) fn eval(&self, x: f64) -> (f64, f64) {
        let t = self.grid.points();
        let j = locate(&self.grid, x);
        let h = t[j + 1] - t[j];
        let s = (x - t[j]) / h;
        let (y0, y1) = (self.values[j], self.values[j + 1]);
        let (m0, m1) = (self.slopes[j] * h, self.slopes[j + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let d = (6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1;
        (v, d / h)
    }
}

/// `sin(n)/n` and `(n·cos n − sin n)/n³`, with series near zero.
#[inline]
fn sinc_terms(n: f64) -> (f64, f64) {
    if n < 1e-4 {
        let n2 = n * n;
        (1.0 - n2 / 6.0, -1.0 / 3.0 + n2 / 30.0)
    } else {
        let (s, c) = n.sin_cos();
        (s / n, (n * c - s) / (n * n * n))
    }
}

/// Intermediate quantities of one forward evaluation.
pub(crate) struct Forward {
    pub g: Vec<f64>,
    pub norm: f64,
    pub psi_raw_norm: f64,
    pub psi: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_total: f64,
    pub q2_at: Vec<f64>,
    pub dq2_at: Vec<f64>,
    pub warped: Vec<f64>,
}

/// `Φ` for a fixed pair of SRVFs and Level-2 variance.
#[derive(Clone, Debug)]
pub struct RegistrationPotential {
    basis: Basis,
    weights: Vec<f64>,
    q1: Vec<f64>,
    q2: Hermite,
    sigma2: f64,
}

impl RegistrationPotential {
    pub fn new(basis: &Basis, q1: &Srvf, q2: &Srvf, sigma2: f64) -> Result<Self> {
        let grid = basis.grid();
        grid.check_same(q1.grid())?;
        grid.check_same(q2.grid())?;
        Self::from_values(basis, q1.values(), q2.values(), sigma2)
    }

    pub(crate) fn from_values(basis: &Basis, q1: &[f64], q2: &[f64], sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        let grid = basis.grid();
        Ok(Self {
            basis: basis.clone(),
            weights: grid.trapz_weights(),
            q1: q1.to_vec(),
            q2: Hermite::new(grid, q2),
            sigma2,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub(crate) fn forward(&self, c: &[f64]) -> Result<Forward> {
        let grid = self.basis.grid();
        let g = self.basis.combine(c);
        let norm = g.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
        if norm >= INJECTIVITY_LIMIT {
            return Err(Error::OutOfInjectivity { norm, limit: INJECTIVITY_LIMIT });
        }
        let (sinc, _) = sinc_terms(norm);
        let cos = norm.cos();
        let mut psi: Vec<f64> = g.iter().map(|x| cos + sinc * x).collect();
        let psi_raw_norm = psi.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|x| *x /= psi_raw_norm);
        let sq: Vec<f64> = psi.iter().map(|x| x * x).collect();
        let mut gamma = cumtrapz(grid, &sq);
        let gamma_total = gamma[gamma.len() - 1];
        gamma.iter_mut().for_each(|x| *x = (*x / gamma_total).clamp(0.0, 1.0));
        let n = gamma.len();
        let mut q2_at = Vec::with_capacity(n);
        let mut dq2_at = Vec::with_capacity(n);
        for &x in &gamma {
            let (v, d) = self.q2.eval(x);
            q2_at.push(v);
            dq2_at.push(d);
        }
        let warped = q2_at.iter().zip(&psi).map(|(q, p)| q * p).collect();
        Ok(Forward { g, norm, psi_raw_norm, psi, gamma, gamma_total, q2_at, dq2_at, warped })
    }

    /// Warped SRVF `𝒢(c)` on the grid.
    pub fn warped(&self, c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(c)?.warped)
    }

    /// Warp `γ(c)` on the grid.
    pub fn gamma(&self, c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(c)?.gamma)
    }

    fn misfit(&self, fw: &Forward) -> f64 {
        self.q1
            .iter()
            .zip(&fw.warped)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum()
    }

    /// `∫(q₁ − 𝒢(c))²`, the data term before scaling by `1/(2σ²)`.
    pub fn squared_misfit(&self, c: &[f64]) -> Result<f64> {
        Ok(self.misfit(&self.forward(c)?))
    }

    /// Directional derivatives `∂𝒢/∂c_k` on the grid, one column per element.
    pub(crate) fn jacobian(&self, fw: &Forward) -> Vec<Vec<f64>> {
        let grid = self.basis.grid();
        let n = fw.psi.len();
        let (sinc, kappa) = sinc_terms(fw.norm);
        self.basis
            .elements()
            .iter()
            .map(|b| {
                let gb: f64 = fw.g.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum();
                // d(exp₁ g)[b] before normalization
                let mut dpsi: Vec<f64> =
                    (0..n).map(|i| -sinc * gb + kappa * gb * fw.g[i] + sinc * b[i]).collect();
                // through ψ = ψ_raw / ‖ψ_raw‖
                let proj: f64 =
                    fw.psi.iter().zip(&dpsi).zip(&self.weights).map(|((p, d), w)| w * p * d).sum();
                for i in 0..n {
                    dpsi[i] = (dpsi[i] - fw.psi[i] * proj) / fw.psi_raw_norm;
                }
                // through γ = Γ/Γ(1), Γ = ∫ψ²
                let two_psi_dpsi: Vec<f64> = (0..n).map(|i| 2.0 * fw.psi[i] * dpsi[i]).collect();
                let dgamma_raw = cumtrapz(grid, &two_psi_dpsi);
                let dtotal = dgamma_raw[n - 1];
                (0..n)
                    .map(|i| {
                        let dgamma = (dgamma_raw[i] - fw.gamma[i] * dtotal) / fw.gamma_total;
                        fw.dq2_at[i] * dgamma * fw.psi[i] + fw.q2_at[i] * dpsi[i]
                    })
                    .collect()
            })
            .collect()
    }

    fn gnh_from(&self, fw: &Forward) -> DMatrix<f64> {
        let jac = self.jacobian(fw);
        let m = jac.len();
        let mut h = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in k..m {
                let v: f64 = jac[k]
                    .iter()
                    .zip(&jac[l])
                    .zip(&self.weights)
                    .map(|((a, b), w)| w * a * b)
                    .sum::<f64>()
                    / self.sigma2;
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
        }
        h
    }
}

impl Potential for RegistrationPotential {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn value(&self, c: &[f64]) -> Result<f64> {
        let fw = self.forward(c)?;
        let n = self.q1.len() as f64;
        Ok(0.5 * n * self.sigma2.ln() + 0.5 * self.misfit(&fw) / self.sigma2)
    }

    fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fw = self.forward(c)?;
        let n = self.q1.len() as f64;
        let value = 0.5 * n * self.sigma2.ln() + 0.5 * self.misfit(&fw) / self.sigma2;
        let resid: Vec<f64> = self
            .q1
            .iter()
            .zip(&fw.warped)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b))
            .collect();
        let grad = self
            .jacobian(&fw)
            .iter()
            .map(|col| -col.iter().zip(&resid).map(|(j, r)| j * r).sum::<f64>() / self.sigma2)
            .collect();
        Ok((value, grad))
    }

    fn gnh(&self, c: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(self.gnh_from(&self.forward(c)?)))
    }
}

/// Negative log-likelihood `Φ` of the Level-2 model.
pub fn phi(c: &TangentCoeffs, q1: &Srvf, q2: &Srvf, sigma2: f64) -> Result<f64> {
    RegistrationPotential::new(&c.basis, q1, q2, sigma2)?.value(&c.v)
}

/// Gradient of `Φ` with respect to the coefficients.
pub fn grad_phi(c: &TangentCoeffs, q1: &Srvf, q2: &Srvf, sigma2: f64) -> Result<Vec<f64>> {
    Ok(RegistrationPotential::new(&c.basis, q1, q2, sigma2)?.value_and_gradient(&c.v)?.1)
}

/// Gauss-Newton Hessian `⟨∇𝒢(b_k), ∇𝒢(b_m)⟩/σ²` in coefficient space.
pub fn gnh(c: &TangentCoeffs, q1: &Srvf, q2: &Srvf, sigma2: f64) -> Result<DMatrix<f64>> {
    let pot = RegistrationPotential::new(&c.basis, q1, q2, sigma2)?;
    Ok(pot.gnh_from(&pot.forward(&c.v)?))
}

/// Natural gradient `η = −K [∇Φ − βHc]` with `K⁻¹ = C⁻¹ + βH`, from a
/// gradient and (when `beta > 0`) a Gauss-Newton Hessian.
pub fn natural_gradient_from(
    grad: &[f64],
    hessian: Option<&DMatrix<f64>>,
    c: &[f64],
    prior_var: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    if beta == 0.0 {
        return Ok(grad.iter().zip(prior_var).map(|(g, v)| -v * g).collect());
    }
    let h = hessian.ok_or_else(|| Error::Numerical("beta > 0 needs a Gauss-Newton Hessian".into()))?;
    let m = grad.len();
    let mut k_inv = h * beta;
    for i in 0..m {
        k_inv[(i, i)] += 1.0 / prior_var[i];
    }
    let hc = h * DVector::from_column_slice(c);
    let rhs = DVector::from_iterator(m, (0..m).map(|i| grad[i] - beta * hc[i]));
    let x = k_inv
        .cholesky()
        .ok_or_else(|| Error::Numerical("preconditioner is not positive definite".into()))?
        .solve(&rhs);
    Ok(x.iter().map(|v| -v).collect())
}

pub fn natural_gradient(
    c: &TangentCoeffs,
    q1: &Srvf,
    q2: &Srvf,
    sigma2: f64,
    spectrum: &PriorSpectrum,
    beta: f64,
) -> Result<Vec<f64>> {
    let pot = RegistrationPotential::new(&c.basis, q1, q2, sigma2)?;
    let (_, grad) = pot.value_and_gradient(&c.v)?;
    let h = if beta > 0.0 { pot.gnh(&c.v)? } else { None };
    natural_gradient_from(&grad, h.as_ref(), &c.v, &spectrum.variances(), beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_basis, prior_spectrum, BasisDescriptor, BasisFamily};
    use crate::fdcore::{to_srvf, trapz, SampledFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump(t: f64, c: f64) -> f64 {
        (-(t - c) * (t - c) / (2.0 * 0.07 * 0.07)).exp()
    }

    fn setup(family: BasisFamily, n_v: usize) -> (Basis, Srvf, Srvf) {
        let g = Grid::uniform(101).unwrap();
        let b = eval_basis(&BasisDescriptor::new(family, n_v, g.clone()).unwrap()).unwrap();
        let f1 = SampledFunction::from_fn(&g, |t| bump(t, 0.35) + bump(t, 0.65)).unwrap();
        let f2 = SampledFunction::from_fn(&g, |t| bump(t, 0.5)).unwrap();
        (b, to_srvf(&f1).unwrap(), to_srvf(&f2).unwrap())
    }

    #[test]
    fn hermite_interpolates_knots_and_is_c1() {
        let g = Grid::uniform(11).unwrap();
        let v: Vec<f64> = g.points().iter().map(|t| (4.0 * t).sin()).collect();
        let h = Hermite::new(&g, &v);
        for (i, &t) in g.points().iter().enumerate() {
            assert!((h.eval(t).0 - v[i]).abs() < 1e-14);
        }
        let knot = g.points()[4];
        let (_, left) = h.eval(knot - 1e-12);
        let (_, right) = h.eval(knot + 1e-12);
        assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn phi_identity_cases() {
        let (b, q1, q2) = setup(BasisFamily::Fourier, 10);
        let c0 = TangentCoeffs::zeros(&b);
        let n = 101.0;
        assert_eq!(phi(&c0, &q1, &q1, 0.3).unwrap(), 0.5 * n * 0.3f64.ln());

        // c = 0 is the unwarped mismatch.
        let diff: Vec<f64> = q1.values().iter().zip(q2.values()).map(|(a, b)| (a - b).powi(2)).collect();
        let oracle = 0.5 * trapz(b.grid(), &diff);
        assert!((phi(&c0, &q1, &q2, 1.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn phi_data_term_vanishes_at_forward_map() {
        let (b, q1, q2) = setup(BasisFamily::Fourier, 6);
        let c = TangentCoeffs::new(b.clone(), vec![0.2, -0.1, 0.05, 0.1, 0.0, -0.03]).unwrap();
        let pot = RegistrationPotential::new(&b, &q1, &q2, 1.0).unwrap();
        let target = Srvf::new(b.grid().clone(), pot.warped(&c.v).unwrap()).unwrap();
        let at_target = phi(&c, &target, &q2, 1.0).unwrap();
        assert!((at_target - 0.5 * 101.0 * 1f64.ln()).abs() < 1e-14);
        assert!(phi(&c, &q1, &q2, 1.0).unwrap() > at_target);
        let grad = grad_phi(&c, &target, &q2, 1.0).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-10));
    }

    fn fd_check(family: BasisFamily, seed: u64) {
        let (b, q1, q2) = setup(family, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r: f64 = rng.random_range(0.05..0.5);
        v.iter_mut().for_each(|x| *x *= r / norm);
        let pot = RegistrationPotential::new(&b, &q1, &q2, 0.5).unwrap();
        let (_, grad) = pot.value_and_gradient(&v).unwrap();
        let step = 1e-5;
        let fd: Vec<f64> = (0..10)
            .map(|k| {
                let mut p = v.clone();
                let mut m = v.clone();
                p[k] += step;
                m[k] -= step;
                (pot.value(&p).unwrap() - pot.value(&m).unwrap()) / (2.0 * step)
            })
            .collect();
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "{family:?} seed {seed}: {}", num / den);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            fd_check(BasisFamily::Fourier, seed);
            fd_check(BasisFamily::Legendre, seed);
        }
    }

    #[test]
    fn gradient_scales_inversely_with_sigma2() {
        let (b, q1, q2) = setup(BasisFamily::Legendre, 6);
        let c = TangentCoeffs::new(b, vec![0.1, -0.2, 0.05, 0.0, 0.1, 0.02]).unwrap();
        let g1 = grad_phi(&c, &q1, &q2, 1.0).unwrap();
        let g2 = grad_phi(&c, &q1, &q2, 2.0).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a / 2.0 - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gnh_is_symmetric_psd_and_vanishes_without_signal() {
        let (b, q1, q2) = setup(BasisFamily::Fourier, 8);
        let c = TangentCoeffs::new(b.clone(), vec![0.1, 0.2, -0.1, 0.05, 0.0, 0.1, -0.05, 0.02]).unwrap();
        let h = gnh(&c, &q1, &q2, 0.7).unwrap();
        assert!((&h - h.transpose()).abs().max() < 1e-12);
        let eig = h.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10);

        let zero = Srvf::from_fn(b.grid(), |_| 0.0).unwrap();
        let h0 = gnh(&c, &q1, &zero, 0.7).unwrap();
        assert_eq!(h0.abs().max(), 0.0);
    }

    #[test]
    fn natural_gradient_cases() {
        let (b, q1, q2) = setup(BasisFamily::Fourier, 4);
        let spec = prior_spectrum(1.0, b.descriptor()).unwrap();
        let c = TangentCoeffs::new(b.clone(), vec![0.1, -0.2, 0.3, 0.05]).unwrap();
        let grad = grad_phi(&c, &q1, &q2, 1.0).unwrap();
        let eta = natural_gradient(&c, &q1, &q2, 1.0, &spec, 0.0).unwrap();
        for ((e, g), v) in eta.iter().zip(&grad).zip(spec.variances()) {
            assert_eq!(*e, -v * g);
        }

        let c0 = TangentCoeffs::zeros(&b);
        let eta0 = natural_gradient(&c0, &q1, &q1, 1.0, &spec, 1.0).unwrap();
        assert!(eta0.iter().all(|e| e.abs() < 1e-12));

        // Dense solve oracle via explicit inverse.
        let h = gnh(&c, &q1, &q2, 1.0).unwrap();
        let mut k_inv = h.clone();
        for (i, v) in spec.variances().iter().enumerate() {
            k_inv[(i, i)] += 1.0 / v;
        }
        let k = k_inv.try_inverse().unwrap();
        let cv = DVector::from_column_slice(&c.v);
        let rhs = DVector::from_column_slice(&grad) - &h * cv;
        let oracle = -(k * rhs);
        let eta1 = natural_gradient(&c, &q1, &q2, 1.0, &spec, 1.0).unwrap();
        for (a, b) in eta1.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn injectivity_violation_is_reported() {
        let (b, q1, q2) = setup(BasisFamily::Fourier, 4);
        let c = TangentCoeffs::new(b, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(phi(&c, &q1, &q2, 1.0), Err(Error::OutOfInjectivity { .. })));
    }
}
