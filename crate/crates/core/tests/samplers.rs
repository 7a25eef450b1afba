//! Invariance checks of the warp kernels on targets with known answers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use warpbayes::basis::{prior_spectrum, BasisDescriptor, BasisFamily};
use warpbayes::fdcore::Grid;
use warpbayes::samplers::{
    inf_hmc_update, zpcn_update, Anchored, GaussianPotential, HmcConfig, HmcContext, Preconditioner, ZMixture,
};

fn prior_var(m: usize) -> Vec<f64> {
    let d = BasisDescriptor::new(BasisFamily::Fourier, m, Grid::uniform(101).unwrap()).unwrap();
    prior_spectrum(1.0, &d).unwrap().variances()
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn ks(xs: &mut [f64], sd: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let dist = Normal::new(0.0, sd).unwrap();
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Draws `n` samples with `step`, recording every coefficient.
fn run(n: usize, dim: usize, mut step: impl FnMut(&mut Vec<f64>, &mut ChaCha8Rng)) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut c = vec![0.0; dim];
    for _ in 0..1000 {
        step(&mut c, &mut rng);
    }
    let mut cols = vec![Vec::with_capacity(n); dim];
    for _ in 0..n {
        step(&mut c, &mut rng);
        for (col, x) in cols.iter_mut().zip(&c) {
            col.push(*x);
        }
    }
    cols
}

#[test]
fn hmc_without_data_samples_the_prior() {
    let var = prior_var(4);
    let flat = GaussianPotential::flat(4);
    let ctx = HmcContext { potential: &flat, prior_var: &var, precond: None };
    let cfg = HmcConfig::new(0.2, 1.0, 0.0).unwrap();
    let mut cols = run(100_000, 4, |c, rng| {
        inf_hmc_update(c, &ctx, &cfg, rng).unwrap();
    });
    for (k, col) in cols.iter_mut().enumerate() {
        let d = ks(col, var[k].sqrt());
        assert!(d < 0.02, "coefficient {k}: KS {d}");
    }
}

/// Conjugate target: prior `N(0, λ²)`, likelihood precision `p`, mean `m`.
fn conjugate() -> (Vec<f64>, GaussianPotential) {
    let var = prior_var(4);
    let pot = GaussianPotential::new(vec![0.1, -0.05, 0.08, 0.02], vec![20.0, 60.0, 200.0, 500.0]).unwrap();
    (var, pot)
}

fn check_posterior(cols: &[Vec<f64>], var: &[f64], pot: &GaussianPotential) {
    for (k, col) in cols.iter().enumerate() {
        let (m, v) = moments(col);
        let (em, ev) = pot.posterior(k, var[k]);
        assert!((v / ev - 1.0).abs() < 0.05, "coefficient {k}: variance {v} vs {ev}");
        assert!((m - em).abs() < 0.05 * ev.sqrt(), "coefficient {k}: mean {m} vs {em}");
    }
}

#[test]
fn hmc_conjugate_gaussian() {
    let (var, pot) = conjugate();
    let ctx = HmcContext { potential: &pot, prior_var: &var, precond: None };
    let cfg = HmcConfig::new(0.05, 0.5, 0.0).unwrap();
    let cols = run(100_000, 4, |c, rng| {
        inf_hmc_update(c, &ctx, &cfg, rng).unwrap();
    });
    check_posterior(&cols, &var, &pot);
}

#[test]
fn preconditioned_hmc_conjugate_gaussian() {
    let (var, pot) = conjugate();
    let hess = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![20.0, 60.0, 200.0, 500.0]));
    let pre = Preconditioner::new(&var, hess, 1.0).unwrap();
    let ctx = HmcContext { potential: &pot, prior_var: &var, precond: Some(&pre) };
    let cfg = HmcConfig::new(0.3, 1.0, 1.0).unwrap();
    let cols = run(100_000, 4, |c, rng| {
        inf_hmc_update(c, &ctx, &cfg, rng).unwrap();
    });
    check_posterior(&cols, &var, &pot);
}

/// The state-dependent preconditioner built at a fresh auxiliary anchor
/// must leave the target invariant.
#[test]
fn anchored_hmc_conjugate_gaussian() {
    let (var, pot) = conjugate();
    let cfg = HmcConfig::default();
    let cols = run(100_000, 4, |c, rng| {
        let anchored = Anchored::draw(&pot, c, &var, cfg.anchor_scale, rng);
        // The Gaussian potential has no Gauss-Newton form; use the tether
        // plus a curvature that varies with the anchor.
        let a = anchored.reference();
        let hess = nalgebra::DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                (1.0 + a[i] * a[i] * 100.0) / (cfg.anchor_scale * cfg.anchor_scale * var[i])
            } else {
                0.0
            }
        });
        let pre = Preconditioner::new(&var, hess, 1.0).unwrap();
        let ctx = HmcContext { potential: &anchored, prior_var: &var, precond: Some(&pre) };
        inf_hmc_update(c, &ctx, &cfg, rng).unwrap();
    });
    check_posterior(&cols, &var, &pot);
}

#[test]
fn zpcn_conjugate_gaussian() {
    let (var, pot) = conjugate();
    let mix = ZMixture::default();
    let cols = run(400_000, 4, |c, rng| {
        zpcn_update(c, &pot, &var, &mix, rng).unwrap();
    });
    check_posterior(&cols, &var, &pot);
}

/// Detailed-balance smoke test: with the state binned into three
/// intervals, every pairwise transition count matches its reverse.
#[test]
fn hmc_transition_counts_are_symmetric() {
    let (var, pot) = conjugate();
    let ctx = HmcContext { potential: &pot, prior_var: &var, precond: None };
    let cfg = HmcConfig::new(0.05, 0.5, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, v) = pot.posterior(0, var[0]);
    let bin = |x: f64| if x < m - 0.4 * v.sqrt() { 0 } else if x < m + 0.4 * v.sqrt() { 1 } else { 2 };
    let mut c = vec![m, 0.0, 0.0, 0.0];
    let mut counts = [[0u64; 3]; 3];
    for _ in 0..100_000 {
        let from = bin(c[0]);
        inf_hmc_update(&mut c, &ctx, &cfg, &mut rng).unwrap();
        counts[from][bin(c[0])] += 1;
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let (a, b) = (counts[i][j] as f64, counts[j][i] as f64);
            assert!(a + b > 1000.0, "{counts:?}");
            assert!((a - b).abs() < 4.0 * (a + b).sqrt(), "{i}<->{j}: {counts:?}");
        }
    }
}
