//! Replicate batches and the Monte Carlo estimators applied to them.
//!
//! A [`ReplicateBatch`] is a `replicates × measures` matrix of field values together
//! with the seed that produced it. The estimators return standard errors alongside
//! every number so that acceptance tolerances can be stated in units of s.e.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum sample size for CF and covariance estimates.
pub const MIN_SAMPLES: usize = 1000;

/// Field values of several test measures over independent replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateBatch {
    /// Column identifiers (one per test measure).
    pub ids: Vec<String>,
    /// One row per replicate.
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
    /// Free-form provenance written to the JSON sidecar.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ReplicateBatch {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != ids.len()) {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                found: bad.len(),
            });
        }
        Ok(ReplicateBatch {
            ids,
            rows,
            seed,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn replicates(&self) -> usize {
        self.rows.len()
    }

    pub fn measures(&self) -> usize {
        self.ids.len()
    }

    /// Values of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// CSV text: a header with the identifiers, then one row per replicate. Numbers
    /// use the shortest representation that round-trips, so equal batches give
    /// byte-identical files.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.ids)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse the CSV produced by [`ReplicateBatch::to_csv`].
    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let ids: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        ReplicateBatch::new(ids, rows, seed)
    }

    /// Write `<stem>.csv` and the sidecar `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        File::create(dir.join(format!("{stem}.csv")))?.write_all(self.to_csv()?.as_bytes())?;
        let sidecar = serde_json::json!({
            "seed": self.seed,
            "replicates": self.replicates(),
            "measures": self.ids,
            "metadata": self.metadata,
        });
        File::create(dir.join(format!("{stem}.json")))?.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        Ok(())
    }
}

/// Sample mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Unbiased sample variance and its standard error (from the fourth central moment).
pub fn variance_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (m, _) = mean_se(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2) / n).max(0.0).sqrt())
}

/// One point of an empirical characteristic function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfPoint {
    pub t: f64,
    pub re: f64,
    pub im: f64,
    pub se_re: f64,
    pub se_im: f64,
}

impl CfPoint {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// `(1/n) Σ e^{i t X_k}` at every `t`, with per-component standard errors.
pub fn empirical_cf(samples: &[f64], t_grid: &[f64]) -> Result<Vec<CfPoint>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let cos: Vec<f64> = samples.iter().map(|x| (t * x).cos()).collect();
            let sin: Vec<f64> = samples.iter().map(|x| (t * x).sin()).collect();
            let (re, se_re) = mean_se(&cos);
            let (im, se_im) = mean_se(&sin);
            CfPoint { t, re, im, se_re, se_im }
        })
        .collect())
}

/// Sample covariance matrix with jackknife standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub n: usize,
}

impl CovarianceEstimate {
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[i][j] / (self.cov[i][i] * self.cov[j][j]).sqrt()
    }
}

/// Unbiased covariance of the columns of `rows`. Refuses samples from an
/// infinite-variance regime (`finite_variance = false`).
pub fn estimate_covariance(rows: &[Vec<f64>], finite_variance: bool) -> Result<CovarianceEstimate> {
    if !finite_variance {
        log::warn!("covariance requested for infinite-variance samples");
        return Err(Error::InfiniteVariance("stable".into()));
    }
    let n = rows.len();
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let m = rows[0].len();
    let nf = n as f64;
    let means: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let mut cov = vec![vec![0.0; m]; m];
    let mut se = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let x: Vec<f64> = rows.iter().map(|r| r[i] - means[i]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r[j] - means[j]).collect();
            let sx: f64 = x.iter().sum();
            let sy: f64 = y.iter().sum();
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let c = (sxy - sx * sy / nf) / (nf - 1.0);
            // leave-one-out covariances
            let loo: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(a, b)| {
                    let (sx1, sy1) = (sx - a, sy - b);
                    (sxy - a * b - sx1 * sy1 / (nf - 1.0)) / (nf - 2.0)
                })
                .collect();
            let lm = loo.iter().sum::<f64>() / nf;
            let jk = ((nf - 1.0) / nf * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
            cov[i][j] = c;
            cov[j][i] = c;
            se[i][j] = jk;
            se[j][i] = jk;
        }
    }
    Ok(CovarianceEstimate { cov, se, n })
}

/// Outcome of a two-sample Kolmogorov–Smirnov test at the 1% level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub pass: bool,
    pub n: usize,
    pub m: usize,
}

/// Two-sample Kolmogorov–Smirnov statistic with the asymptotic 1% critical value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsReport {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    // asymptotic 1% constant c(0.01) = √(−ln(0.005)/2) ≈ 1.62762
    let c = (-(0.005f64).ln() / 2.0).sqrt();
    let critical_value = c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    KsReport {
        statistic: d,
        critical_value,
        pass: d < critical_value,
        n,
        m,
    }
}

/// Largest diagonal jitter, relative to the largest diagonal entry.
pub const MAX_JITTER: f64 = 1e-8;

/// Lower Cholesky factor of a symmetric PSD matrix together with the diagonal
/// jitter that was needed (zero if none). Fails with [`Error::IndefiniteGram`] when
/// even `MAX_JITTER · max diag` is not enough.
pub fn cholesky(gram: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = gram.len();
    let maxdiag = (0..n).map(|i| gram[i][i]).fold(0.0, f64::max);
    if n == 0 || maxdiag == 0.0 {
        return Ok((vec![vec![0.0; n]; n], 0.0));
    }
    let mut jitter = 0.0;
    let mut worst: f64;
    loop {
        match try_cholesky(gram, jitter) {
            Ok(l) => return Ok((l, jitter)),
            Err(pivot) => worst = pivot,
        }
        jitter = if jitter == 0.0 { 1e-14 * maxdiag } else { jitter * 10.0 };
        if jitter > MAX_JITTER * maxdiag * (1.0 + 1e-9) {
            return Err(Error::IndefiniteGram {
                jitter: MAX_JITTER * maxdiag,
                pivot: worst,
            });
        }
    }
}

fn try_cholesky(a: &[Vec<f64>], jitter: f64) -> std::result::Result<Vec<Vec<f64>>, f64> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let p = a[i][i] + jitter - s;
                if p < 0.0 {
                    return Err(p);
                }
                l[i][i] = p.sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (a[i][j] - s) / l[j][j];
            } else {
                // zero pivot: the row must be consistent with a zero column
                if (a[i][j] - s).abs() > 1e-12 * (a[i][i] * a[j][j]).sqrt().max(1e-300) {
                    return Err(0.0);
                }
                l[i][j] = 0.0;
            }
        }
    }
    Ok(l)
}
