//! Reading observed pairs, simulating the two-peak/one-peak example and
//! smoothing for the DP baseline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdcore::{interp_linear, Grid, OnGrid, SampledFunction};
use crate::model::gp_smooth;

/// How raw samples become a working grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Points of the uniform working grid; `None` keeps the (decimated)
    /// input length.
    pub n: Option<usize>,
    /// Fraction of samples kept by uniform decimation, in (0, 1].
    pub subsample: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { n: None, subsample: 1.0 }
    }
}

impl LoadOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        if self.n.is_some_and(|n| n < 3) {
            return Err(Error::Config("working grid needs at least 3 points".into()));
        }
        Ok(())
    }

    /// Keep every `k`-th sample with `k = round(1/fraction)`.
    pub fn stride(&self) -> usize {
        (1.0 / self.subsample).round().max(1.0) as usize
    }
}

/// Parsed numeric columns with the 1-based file line of every row.
struct Table {
    lines: Vec<usize>,
    cols: Vec<Vec<f64>>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let head = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let got: Vec<&str> = head.iter().collect();
    if got != header {
        return Err(Error::Parse { line: 1, msg: format!("expected header {:?}, found {:?}", header.join(","), got.join(",")) });
    }
    let mut table = Table { lines: Vec::new(), cols: vec![Vec::new(); header.len()] };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("column {}: not a number: {field:?}", header[k]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("column {}: non-finite value {field}", header[k]) });
            }
            table.cols[k].push(v);
        }
        table.lines.push(line);
    }
    if table.lines.len() < 3 {
        return Err(Error::Parse { line: table.lines.last().copied().unwrap_or(1), msg: "need at least 3 data rows".into() });
    }
    for i in 1..table.lines.len() {
        if table.cols[0][i] <= table.cols[0][i - 1] {
            return Err(Error::Parse { line: table.lines[i], msg: "t must be strictly increasing".into() });
        }
    }
    Ok(table)
}

/// Decimate, rescale `t` affinely onto [0,1] and resample every column
/// linearly onto a uniform grid.
fn to_grid(t: &[f64], cols: &[&[f64]], opts: &LoadOptions) -> Result<Vec<SampledFunction>> {
    opts.validate()?;
    let k = opts.stride();
    let idx: Vec<usize> = (0..t.len()).step_by(k).collect();
    if idx.len() < 3 {
        return Err(Error::invalid(format!("only {} samples left after decimation", idx.len())));
    }
    let (t0, t1) = (t[idx[0]], t[*idx.last().expect("nonempty")]);
    let pts: Vec<f64> = idx.iter().map(|&i| ((t[i] - t0) / (t1 - t0)).clamp(0.0, 1.0)).collect();
    let mut pts = pts;
    let last = pts.len() - 1;
    pts[0] = 0.0;
    pts[last] = 1.0;
    let raw = Grid::from_points(pts)?;
    let grid = Grid::uniform(opts.n.unwrap_or(idx.len()))?;
    cols.iter()
        .map(|c| {
            let v: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            SampledFunction::new(grid.clone(), grid.points().iter().map(|&x| interp_linear(&raw, &v, x)).collect())
        })
        .collect()
}

/// Load a pair from one CSV with header `t,y1,y2`.
pub fn load_pair(path: &Path, opts: &LoadOptions) -> Result<(SampledFunction, SampledFunction)> {
    let tab = read_table(path, &["t", "y1", "y2"])?;
    let mut out = to_grid(&tab.cols[0], &[&tab.cols[1], &tab.cols[2]], opts)?;
    let y2 = out.pop().expect("two columns");
    let y1 = out.pop().expect("two columns");
    Ok((y1, y2))
}

/// Load a pair from two CSVs with header `t,y`. The second file is resampled
/// onto the first file's time range.
pub fn load_pair_files(p1: &Path, p2: &Path, opts: &LoadOptions) -> Result<(SampledFunction, SampledFunction)> {
    let a = read_table(p1, &["t", "y"])?;
    let b = read_table(p2, &["t", "y"])?;
    let y1 = to_grid(&a.cols[0], &[&a.cols[1]], opts)?.pop().expect("one column");
    let opts2 = LoadOptions { n: Some(y1.grid().len()), ..*opts };
    let y2 = to_grid(&b.cols[0], &[&b.cols[1]], &LoadOptions { subsample: 1.0, ..opts2 })?.pop().expect("one column");
    Ok((y1, y2))
}

/// Write a pair as `t,y1,y2` with 17 significant digits.
pub fn write_pair(path: &Path, y1: &SampledFunction, y2: &SampledFunction) -> Result<()> {
    y1.grid().check_same(y2.grid())?;
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["t", "y1", "y2"]).map_err(csv_io)?;
    for ((t, a), b) in y1.grid().points().iter().zip(y1.values()).zip(y2.values()) {
        w.write_record([fmt(*t), fmt(*a), fmt(*b)]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Fixed 17-significant-digit scientific notation.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Gaussian-bump pair: `f1` has bumps at `peaks1`, `f2` at `peaks2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub peaks1: Vec<f64>,
    pub peaks2: Vec<f64>,
    /// Standard deviation of each bump.
    pub width: f64,
    pub height: f64,
    /// Observation noise variances `σ₁²`, `σ₂²`.
    pub noise1: f64,
    pub noise2: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n: 101,
            peaks1: vec![0.35, 0.65],
            peaks2: vec![0.5],
            width: 0.07,
            height: 1.0,
            noise1: 0.001,
            noise2: 0.001,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Config("simulation grid needs at least 3 points".into()));
        }
        if !(self.width > 0.0) || !self.height.is_finite() {
            return Err(Error::Config("bump width must be positive and height finite".into()));
        }
        if !(self.noise1 >= 0.0 && self.noise2 >= 0.0) {
            return Err(Error::Config("noise variances must be nonnegative".into()));
        }
        Ok(())
    }

    fn curve(&self, grid: &Grid, peaks: &[f64]) -> Result<SampledFunction> {
        let w2 = 2.0 * self.width * self.width;
        SampledFunction::from_fn(grid, |t| peaks.iter().map(|c| self.height * (-(t - c) * (t - c) / w2).exp()).sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPair {
    pub y1: SampledFunction,
    pub y2: SampledFunction,
    pub f1: SampledFunction,
    pub f2: SampledFunction,
}

/// Noise-free curves plus i.i.d. Gaussian noise (all of `y1`'s noise is
/// drawn before `y2`'s).
pub fn simulate_pair(spec: &SimSpec, seed: u64) -> Result<SimulatedPair> {
    spec.validate()?;
    let grid = Grid::uniform(spec.n)?;
    let f1 = spec.curve(&grid, &spec.peaks1)?;
    let f2 = spec.curve(&grid, &spec.peaks2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |f: &SampledFunction, var: f64| {
        let sd = var.sqrt();
        let v = f.values().iter().map(|x| x + sd * rng.sample::<f64, _>(StandardNormal)).collect();
        SampledFunction::new(grid.clone(), v)
    };
    let y1 = noisy(&f1, spec.noise1)?;
    let y2 = noisy(&f2, spec.noise2)?;
    Ok(SimulatedPair { y1, y2, f1, f2 })
}

/// GP-regression smoother used for the smoothed DP arm.
pub fn smooth_for_dp(y: &SampledFunction) -> Result<SampledFunction> {
    let fit = gp_smooth(y.grid(), y.values())?;
    SampledFunction::new(y.grid().clone(), fit.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "a.csv", "t,y1,y2\n0,0,0\n0.5,1,0\n1,0,1\n");
        let (y1, y2) = load_pair(&p, &LoadOptions::default()).unwrap();
        assert_eq!(y1.grid().len(), 3);
        assert_eq!(y1.values(), &[0.0, 1.0, 0.0]);
        assert_eq!(y2.values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn seconds_are_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = std::iter::once("t,y1,y2\n".to_string())
            .chain((0..6).map(|i| format!("{},{},{}\n", i as f64 * 8.33 / 5.0, i, 2 * i)))
            .collect();
        let p = file(&dir, "s.csv", &body);
        let (y1, y2) = load_pair(&p, &LoadOptions::default()).unwrap();
        assert_eq!(y1.grid().points()[0], 0.0);
        assert_eq!(*y1.grid().points().last().unwrap(), 1.0);
        for (i, (a, b)) in y1.values().iter().zip(y2.values()).enumerate() {
            assert!((a - i as f64).abs() < 1e-12 && (b - 2.0 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn decimation_to_221_points() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = std::iter::once("t,y1,y2\n".to_string())
            .chain((0..1102).map(|i| format!("{},{},{}\n", i, (i as f64 * 0.01).sin(), 0.0)))
            .collect();
        let p = file(&dir, "big.csv", &body);
        let (y1, _) = load_pair(&p, &LoadOptions { n: None, subsample: 0.2 }).unwrap();
        assert_eq!(y1.grid().len(), 221);
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("t,y1,y2\n0,0,0\n0.5,1\n1,0,1\n", 3),
            ("t,y1,y2\n0,0,0\n0.5,NaN,0\n1,0,1\n", 3),
            ("t,y1,y2\n0,0,0\n0.5,1,0\n0.4,0,1\n", 4),
            ("t,y1,y2\n0,0,0\n0.5,x,0\n1,0,1\n", 3),
        ];
        for (i, (body, line)) in cases.iter().enumerate() {
            let p = file(&dir, &format!("bad{i}.csv"), body);
            match load_pair(&p, &LoadOptions::default()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, *line, "case {i}"),
                other => panic!("case {i}: {other:?}"),
            }
        }
        let p = file(&dir, "hdr.csv", "time,a,b\n0,0,0\n");
        assert!(matches!(load_pair(&p, &LoadOptions::default()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn two_file_form() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(&dir, "a.csv", "t,y\n0,0\n1,1\n2,4\n");
        let b = file(&dir, "b.csv", "t,y\n10,1\n20,1\n30,1\n40,1\n");
        let (y1, y2) = load_pair_files(&a, &b, &LoadOptions::default()).unwrap();
        assert_eq!(y1.grid().len(), 3);
        assert_eq!(y2.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn simulation_contract() {
        let quiet = SimSpec { noise1: 0.0, noise2: 0.0, ..SimSpec::default() };
        let s = simulate_pair(&quiet, 1).unwrap();
        assert_eq!(s.y1, s.f1);
        assert_eq!(s.y2, s.f2);
        assert_eq!(s.y1.grid().len(), 101);
        let big = SimSpec { n: 10_001, ..SimSpec::default() };
        let s = simulate_pair(&big, 2).unwrap();
        let r: Vec<f64> = s.y1.values().iter().zip(s.f1.values()).map(|(a, b)| a - b).collect();
        let var = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        assert!((var / 0.001 - 1.0).abs() < 0.05, "{var}");
        assert_eq!(simulate_pair(&SimSpec::default(), 7).unwrap(), simulate_pair(&SimSpec::default(), 7).unwrap());
    }

    #[test]
    fn roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let s = simulate_pair(&SimSpec::default(), 3).unwrap();
        let p = dir.path().join("pair.csv");
        write_pair(&p, &s.y1, &s.y2).unwrap();
        let (y1, y2) = load_pair(&p, &LoadOptions::default()).unwrap();
        for (a, b) in y1.values().iter().zip(s.y1.values()).chain(y2.values().iter().zip(s.y2.values())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_contracts() {
        let quiet = SimSpec { noise1: 0.0, noise2: 0.0, ..SimSpec::default() };
        let s = simulate_pair(&quiet, 1).unwrap();
        let sm = smooth_for_dp(&s.y1).unwrap();
        let err = sm.values().iter().zip(s.y1.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert_eq!(sm, smooth_for_dp(&s.y1).unwrap());
    }

    #[test]
    fn smoothing_pure_noise_shrinks_to_mean() {
        let grid = Grid::uniform(101).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sd = 0.1;
        let y = SampledFunction::new(grid.clone(), (0..101).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
            .unwrap();
        let out = smooth_for_dp(&y).unwrap();
        let bound = 3.0 * sd / (101f64).sqrt();
        let worst = out.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst < bound, "{worst} vs {bound}");
    }
}
