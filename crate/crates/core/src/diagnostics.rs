//! Effective sample sizes and per-chain acceptance tables.

use serde::{Deserialize, Serialize};

use crate::samplers::{Acceptance, ChainSamples};

/// Effective sample size by Geyer's initial monotone positive sequence,
/// with lags computed only as far as the sequence runs. Constant traces
/// report the raw length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>();
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |k: usize| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / c0;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho(2 * m) + rho(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        prev = pair.min(prev);
        sum += prev;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10())
}

/// Acceptance rates and effective sample sizes of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    pub retained: usize,
    pub acceptance: AcceptanceRates,
    /// `(name, ESS)` per traced scalar.
    pub ess: Vec<(String, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub warp: f64,
    pub f1: f64,
    pub f2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl From<&Acceptance> for AcceptanceRates {
    fn from(a: &Acceptance) -> Self {
        Self { warp: a.warp.rate(), f1: a.f1.rate(), f2: a.f2.rate(), l1: a.l1.rate(), l2: a.l2.rate() }
    }
}

/// Names of the scalar traces of a chain, in column order.
pub fn trace_names(n_coeffs: usize) -> Vec<String> {
    let mut names: Vec<String> =
        ["sigma2", "sigma1_2", "sigma2_2", "s1_2", "s2_2", "l1", "l2"].iter().map(|s| s.to_string()).collect();
    names.extend((0..n_coeffs).map(|k| format!("c{k}")));
    names
}

/// Scalar traces of a chain, one column per entry of [`trace_names`].
pub fn traces(s: &ChainSamples) -> Vec<Vec<f64>> {
    let mut cols = vec![
        s.sigma2.clone(),
        s.sigma1_2.clone(),
        s.sigma2_2.clone(),
        s.s1_2.clone(),
        s.s2_2.clone(),
        s.l1.clone(),
        s.l2.clone(),
    ];
    let m = s.coeffs.first().map_or(0, |c| c.len());
    cols.extend((0..m).map(|k| s.coeffs.iter().map(|c| c[k]).collect()));
    cols
}

/// ESS of every named trace.
pub fn ess_table(names: &[String], columns: &[Vec<f64>]) -> Vec<(String, f64)> {
    names.iter().zip(columns).map(|(n, c)| (n.clone(), effective_sample_size(c))).collect()
}

pub fn chain_diagnostics(s: &ChainSamples) -> ChainDiagnostics {
    let m = s.coeffs.first().map_or(0, |c| c.len());
    ChainDiagnostics {
        seed: s.seed,
        retained: s.len(),
        acceptance: (&s.acceptance).into(),
        ess: ess_table(&trace_names(m), &traces(s)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn white_noise_ess_near_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let e = effective_sample_size(&x);
        assert!((e / 4000.0 - 1.0).abs() < 0.15, "{e}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with coefficient φ has ESS ≈ n(1−φ)/(1+φ).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = 0.9;
        let n = 50_000;
        let mut x = vec![0.0; n];
        for i in 1..n {
            x[i] = phi * x[i - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let e = effective_sample_size(&x);
        let theory = n as f64 * (1.0 - phi) / (1.0 + phi);
        assert!((e / theory - 1.0).abs() < 0.2, "{e} vs {theory}");
    }

    #[test]
    fn constant_trace_reports_length() {
        assert_eq!(effective_sample_size(&[2.0; 50]), 50.0);
        assert_eq!(effective_sample_size(&[1.0, 2.0]), 2.0);
    }

    #[test]
    fn trace_columns_line_up_with_names() {
        let g = crate::fdcore::Grid::uniform(5).unwrap();
        let mut s = ChainSamples::empty(3, &g);
        s.coeffs = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        for v in [&mut s.sigma2, &mut s.sigma1_2, &mut s.sigma2_2, &mut s.s1_2, &mut s.s2_2, &mut s.l1, &mut s.l2] {
            *v = vec![1.0, 2.0];
        }
        let names = trace_names(2);
        let cols = traces(&s);
        assert_eq!(names.len(), cols.len());
        assert_eq!(names[8], "c1");
        assert_eq!(cols[8], vec![0.2, 0.4]);
    }
}
