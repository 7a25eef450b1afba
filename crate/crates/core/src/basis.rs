//! Orthonormal bases for the tangent space at the identity warp.
//!
//! Both families drop the constant function, so every element integrates to
//! zero and any finite combination is a valid tangent vector.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdcore::{inner, l2_norm, Grid, OnGrid};
use crate::geom::TangentFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    Fourier,
    Legendre,
}

impl std::str::FromStr for BasisFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(BasisFamily::Fourier),
            "legendre" => Ok(BasisFamily::Legendre),
            other => Err(Error::Config(format!("unknown basis family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisDescriptor {
    pub family: BasisFamily,
    /// Number of basis elements, which is also the coefficient dimension.
    pub n_v: usize,
    pub grid: Grid,
}

impl BasisDescriptor {
    pub fn new(family: BasisFamily, n_v: usize, grid: Grid) -> Result<Self> {
        if n_v == 0 {
            return Err(Error::invalid("basis needs at least one element"));
        }
        if family == BasisFamily::Fourier && n_v % 2 != 0 {
            return Err(Error::invalid(format!("fourier basis needs an even n_v, got {n_v}")));
        }
        if n_v + 2 > grid.len() {
            return Err(Error::invalid(format!(
                "{n_v} basis elements cannot be resolved on {} points",
                grid.len()
            )));
        }
        Ok(Self { family, n_v, grid })
    }

    /// Eigenvalue index of element `k` (0-based). Fourier sin/cos pairs share
    /// their frequency.
    pub fn ordinal(&self, k: usize) -> usize {
        match self.family {
            BasisFamily::Fourier => k / 2 + 1,
            BasisFamily::Legendre => k + 1,
        }
    }
}

#[derive(Debug)]
struct BasisTable {
    descriptor: BasisDescriptor,
    elements: Vec<Vec<f64>>,
}

/// Evaluated basis: `n_v` elements sampled on the descriptor's grid.
/// Cheap to clone.
#[derive(Clone, Debug)]
pub struct Basis(Arc<BasisTable>);

impl PartialEq for Basis {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.descriptor == other.0.descriptor
    }
}

impl Basis {
    pub fn descriptor(&self) -> &BasisDescriptor {
        &self.0.descriptor
    }

    pub fn grid(&self) -> &Grid {
        &self.0.descriptor.grid
    }

    pub fn dim(&self) -> usize {
        self.0.elements.len()
    }

    pub fn element(&self, k: usize) -> &[f64] {
        &self.0.elements[k]
    }

    pub fn elements(&self) -> &[Vec<f64>] {
        &self.0.elements
    }

    /// `g = Σ v_k b_k` on the grid.
    pub fn combine(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.grid().len()];
        for (c, e) in v.iter().zip(&self.0.elements) {
            if *c != 0.0 {
                g.iter_mut().zip(e).for_each(|(gi, ei)| *gi += c * ei);
            }
        }
        g
    }
}

pub fn eval_basis(descriptor: &BasisDescriptor) -> Result<Basis> {
    let d = BasisDescriptor::new(descriptor.family, descriptor.n_v, descriptor.grid.clone())?;
    let t = d.grid.points();
    let elements = match d.family {
        BasisFamily::Fourier => (0..d.n_v)
            .map(|k| {
                let freq = 2.0 * PI * (k / 2 + 1) as f64;
                t.iter()
                    .map(|&x| if k % 2 == 0 { SQRT_2 * (freq * x).sin() } else { SQRT_2 * (freq * x).cos() })
                    .collect()
            })
            .collect(),
        BasisFamily::Legendre => legendre_elements(&d.grid, d.n_v),
    };
    Ok(Basis(Arc::new(BasisTable { descriptor: d, elements })))
}

/// Shifted Legendre polynomials P̃₁..P̃ₙ, orthonormalized against the
/// constant and each other under the grid's trapezoid inner product.
fn legendre_elements(grid: &Grid, n_v: usize) -> Vec<Vec<f64>> {
    let t = grid.points();
    let x: Vec<f64> = t.iter().map(|&s| 2.0 * s - 1.0).collect();
    let mut prev = vec![1.0; t.len()];
    let mut cur = x.clone();
    let mut raw = Vec::with_capacity(n_v);
    for k in 1..=n_v {
        raw.push(cur.clone());
        let kf = k as f64;
        let next: Vec<f64> = (0..t.len())
            .map(|i| ((2.0 * kf + 1.0) * x[i] * cur[i] - kf * prev[i]) / (kf + 1.0))
            .collect();
        prev = std::mem::replace(&mut cur, next);
    }
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; t.len()]];
    for mut p in raw {
        // Two passes of modified Gram-Schmidt for stability at high degree.
        for _ in 0..2 {
            for b in &basis {
                let c = inner(grid, &p, b);
                p.iter_mut().zip(b).for_each(|(pi, bi)| *pi -= c * bi);
            }
        }
        let n = l2_norm(grid, &p);
        p.iter_mut().for_each(|v| *v /= n);
        basis.push(p);
    }
    basis.remove(0);
    basis
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentCoeffs {
    pub basis: Basis,
    pub v: Vec<f64>,
}

impl TangentCoeffs {
    pub fn new(basis: Basis, v: Vec<f64>) -> Result<Self> {
        if v.len() != basis.dim() {
            return Err(Error::invalid(format!(
                "{} coefficients for a {}-element basis",
                v.len(),
                basis.dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(Self { basis, v })
    }

    pub fn zeros(basis: &Basis) -> Self {
        Self { basis: basis.clone(), v: vec![0.0; basis.dim()] }
    }
}

pub fn coeffs_to_function(c: &TangentCoeffs) -> TangentFunction {
    TangentFunction::from_raw(c.basis.grid(), c.basis.combine(&c.v))
}

/// Orthogonal projection onto the span: `v_k = ∫ g b_k`.
pub fn project_to_coeffs(g: &TangentFunction, basis: &Basis) -> Result<TangentCoeffs> {
    g.grid().check_same(basis.grid())?;
    let v = basis.elements().iter().map(|e| inner(basis.grid(), g.values(), e)).collect();
    Ok(TangentCoeffs { basis: basis.clone(), v })
}

/// Karhunen-Loève spectrum: `v_k ~ N(0, λ_k²)` with `λ_k = σ_g²/k²`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpectrum {
    pub sigma_g: f64,
    pub lambdas: Vec<f64>,
}

impl PriorSpectrum {
    /// Diagonal of the prior covariance `C`, i.e. `λ_k²`.
    pub fn variances(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l * l).collect()
    }
}

pub fn prior_spectrum(sigma_g: f64, descriptor: &BasisDescriptor) -> Result<PriorSpectrum> {
    if !(sigma_g > 0.0 && sigma_g.is_finite()) {
        return Err(Error::invalid(format!("sigma_g must be positive, got {sigma_g}")));
    }
    let lambdas = (0..descriptor.n_v)
        .map(|k| {
            let ord = descriptor.ordinal(k) as f64;
            sigma_g * sigma_g / (ord * ord)
        })
        .collect();
    Ok(PriorSpectrum { sigma_g, lambdas })
}
