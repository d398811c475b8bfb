//! Samplers for the limit fields on finite families of test measures.
//!
//! * Gaussian fields — the large-grain limit `W_{γ,C}` (covariance [`cov_limit`]),
//!   the fractional field `W_H` (Riesz covariance) and white noise (`L²` covariance) —
//!   are sampled exactly through a Cholesky factor of their Gram matrix.
//! * The stable field `Λ_γ` is sampled exactly per marginal, and jointly through
//!   independently scattered cell increments on a lattice.
//! * The intermediate field `J*(φ) = ∫∫ φ(x + v^{1/d}C) (N(dx, dv) − dx v^{−γ−1} dv)`
//!   is split at a volume threshold `δ`: grains above `δ` are simulated exactly
//!   (only those meeting the support, with a volume cut leaving out at most `10⁻⁶`
//!   expected grains) and compensated in closed form; the small-grain remainder is
//!   replaced by a Gaussian vector with the same covariance, or dropped.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dilate, region_overlap, GrainShape, Region, TestMeasure};
use crate::grain_model::{FieldSimulator, ModelParams};
use crate::heavytail::{stable_sample, StableParams, VolumeLaw};
use crate::kernels::{cov_limit, compensated_covariance, riesz_inner, KernelSpec};
use crate::profile::{psi_exponent_1d, VolumeMeasure};
use crate::quadrature::Tolerance;
use crate::rng::{StreamRng, Streams};
use crate::stats::{cholesky, empirical_cf, ks_two_sample, variance_se, KsReport, ReplicateBatch};

/// Covariance structure of a Gaussian limit field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaussianCovariance {
    /// `W_{γ,C}`: `∫∫ φ(dx) K_{γ,C}(x − y) ψ(dy)`.
    Kernel(KernelSpec),
    /// `W_H`: the Riesz inner product `⟨φ, ψ⟩_{2H−1}`, `1/2 < H < 1`.
    Riesz { hurst: f64, d: usize },
    /// White noise: `∫ φ ψ dx`.
    WhiteNoise { d: usize },
}

impl GaussianCovariance {
    pub fn dim(&self) -> usize {
        match self {
            GaussianCovariance::Kernel(k) => k.dim(),
            GaussianCovariance::Riesz { d, .. } | GaussianCovariance::WhiteNoise { d } => *d,
        }
    }

    /// Covariance of `W(φ)` and `W(ψ)`.
    pub fn covariance(&self, phi: &TestMeasure, psi: &TestMeasure, tol: Tolerance) -> Result<f64> {
        match *self {
            GaussianCovariance::Kernel(spec) => cov_limit(&spec, phi, psi, tol),
            GaussianCovariance::Riesz { hurst, .. } => {
                if !(hurst > 0.5 && hurst < 1.0) {
                    return Err(Error::param("hurst", hurst, "must lie in (1/2, 1)"));
                }
                riesz_inner(phi, psi, 2.0 * hurst - 1.0, tol)
            }
            GaussianCovariance::WhiteNoise { .. } => l2_inner(phi, psi),
        }
    }
}

/// `∫ φ ψ dx`, exact for box and ball atoms.
pub fn l2_inner(phi: &TestMeasure, psi: &TestMeasure) -> Result<f64> {
    if phi.dim() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: psi.dim(),
        });
    }
    let d = phi.dim();
    Ok(phi
        .atoms()
        .iter()
        .flat_map(|a| psi.atoms().iter().map(move |b| a.weight * b.weight * region_overlap(&a.region, &b.region, d)))
        .sum())
}

/// A Gaussian field restricted to a finite family of test measures.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianFieldSpec {
    pub covariance: Option<GaussianCovariance>,
    #[serde(skip)]
    pub measures: Vec<TestMeasure>,
    pub ids: Vec<String>,
    pub gram: Vec<Vec<f64>>,
    #[serde(skip)]
    chol: Vec<Vec<f64>>,
    /// Diagonal jitter the factorization needed.
    pub jitter: f64,
}

fn ids_of(measures: &[TestMeasure]) -> Vec<String> {
    measures
        .iter()
        .enumerate()
        .map(|(i, m)| m.id.clone().unwrap_or_else(|| format!("phi{i}")))
        .collect()
}

impl GaussianFieldSpec {
    /// Builds the Gram matrix of `covariance` on `measures` and factorizes it.
    pub fn new(covariance: GaussianCovariance, measures: &[TestMeasure], tol: Tolerance) -> Result<Self> {
        let n = measures.len();
        for m in measures {
            if m.dim() != covariance.dim() {
                return Err(Error::DimensionMismatch {
                    expected: covariance.dim(),
                    found: m.dim(),
                });
            }
        }
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let c = covariance.covariance(&measures[i], &measures[j], tol)?;
                gram[i][j] = c;
                gram[j][i] = c;
            }
        }
        let mut spec = Self::from_gram(measures, gram)?;
        spec.covariance = Some(covariance);
        Ok(spec)
    }

    /// A field with a given Gram matrix.
    pub fn from_gram(measures: &[TestMeasure], gram: Vec<Vec<f64>>) -> Result<Self> {
        let n = measures.len();
        if gram.len() != n || gram.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: gram.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                let scale = gram[i][i].abs().max(gram[j][j].abs()).max(f64::MIN_POSITIVE);
                if (gram[i][j] - gram[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::Config(format!("Gram matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let (chol, jitter) = cholesky(&gram)?;
        Ok(GaussianFieldSpec {
            covariance: None,
            measures: measures.to_vec(),
            ids: ids_of(measures),
            gram,
            chol,
            jitter,
        })
    }

    /// One draw `L z`, `z` standard normal.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        correlate(&self.chol, rng)
    }
}

fn correlate<R: Rng + ?Sized>(chol: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    let n = chol.len();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    (0..n).map(|i| (0..=i).map(|k| chol[i][k] * z[k]).sum()).collect()
}

/// `n` i.i.d. centered Gaussian vectors with covariance `spec.gram`.
pub fn sample_gaussian_field(spec: &GaussianFieldSpec, n: usize, streams: Streams) -> Result<ReplicateBatch> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| spec.draw(&mut streams.stream(k as u64)))
        .collect();
    let meta = serde_json::json!({
        "field": "gaussian",
        "covariance": spec.covariance,
        "gram": spec.gram,
        "jitter": spec.jitter,
    });
    Ok(ReplicateBatch::new(spec.ids.clone(), rows, streams.seed)?.with_metadata(meta))
}

/// `(σ_φ, β_φ)` of `Λ_γ(φ)`: `σ_φ = ‖φ‖_γ`, `β_φ = (‖φ₊‖_γ^γ − ‖φ₋‖_γ^γ)/‖φ‖_γ^γ`.
pub fn stable_marginal_params(phi: &TestMeasure, gamma: f64) -> Result<StableParams> {
    let (pos, neg) = phi.positive_negative_power(gamma);
    let total = pos + neg;
    let beta = if total > 0.0 { (pos - neg) / total } else { 0.0 };
    StableParams::new(gamma, total.powf(1.0 / gamma), beta)
}

/// One draw of `Λ_γ(φ)`.
pub fn sample_stable_marginal<R: Rng + ?Sized>(phi: &TestMeasure, gamma: f64, rng: &mut R) -> Result<f64> {
    Ok(stable_sample(&stable_marginal_params(phi, gamma)?, rng))
}

fn on_lattice(x: f64, h: f64) -> bool {
    let k = (x / h).round();
    (x - k * h).abs() <= 1e-9 * h.max(x.abs())
}

/// Joint draws of `Λ_γ(φ_i)` from independent cell increments on the lattice `hZ^d`:
/// each cell carries `S_c ~ stable(γ, h^{d/γ}, 1)` and `Λ(φ) = Σ_c φ(center_c) S_c`.
/// Exact when every box atom is a union of cells; ball atoms are resolved at the
/// cell centers only.
pub fn sample_stable_field(measures: &[TestMeasure], gamma: f64, h: f64, n: usize, streams: Streams) -> Result<ReplicateBatch> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", h, "cell size must be positive"));
    }
    let d = measures.first().map(|m| m.dim()).unwrap_or(1);
    for m in measures {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.dim(),
            });
        }
        for a in m.atoms() {
            if let Region::Box { lo, hi } = a.region {
                if (0..d).any(|i| !on_lattice(lo[i], h) || !on_lattice(hi[i], h)) {
                    return Err(Error::Grid(format!("cell size {h} does not divide the box atoms")));
                }
            }
        }
    }
    // cells meeting the union of supports, with the values of each measure at the centers
    let bbox = measures.iter().filter_map(|m| m.bbox()).reduce(|(l1, h1), (l2, h2)| {
        let mut lo = l1;
        let mut hi = h1;
        for i in 0..d {
            lo[i] = lo[i].min(l2[i]);
            hi[i] = hi[i].max(h2[i]);
        }
        (lo, hi)
    });
    let mut weights: Vec<Vec<f64>> = Vec::new();
    if let Some((lo, hi)) = bbox {
        let first: Vec<i64> = (0..d).map(|i| (lo[i] / h).floor() as i64).collect();
        let counts: Vec<usize> = (0..d)
            .map(|i| ((hi[i] / h).ceil() as i64 - first[i]).max(0) as usize)
            .collect();
        let total: usize = counts.iter().product();
        for mut idx in 0..total {
            let mut c = [0.0; 3];
            for i in 0..d {
                let k = idx % counts[i];
                idx /= counts[i];
                c[i] = (first[i] + k as i64) as f64 * h + 0.5 * h;
            }
            let w: Vec<f64> = measures.iter().map(|m| m.value_at(&c)).collect();
            if w.iter().any(|v| *v != 0.0) {
                weights.push(w);
            }
        }
    }
    let cell = StableParams::new(gamma, h.powf(d as f64 / gamma), 1.0)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = streams.stream(k as u64);
            let mut out = vec![0.0; measures.len()];
            for w in &weights {
                let s = stable_sample(&cell, &mut rng);
                for (o, wi) in out.iter_mut().zip(w) {
                    *o += wi * s;
                }
            }
            out
        })
        .collect();
    let meta = serde_json::json!({
        "field": "stable",
        "gamma": gamma,
        "cell": h,
        "cells": weights.len(),
    });
    Ok(ReplicateBatch::new(ids_of(measures), rows, streams.seed)?.with_metadata(meta))
}

/// Treatment of grains below the volume threshold `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    /// A centered Gaussian vector with the exact small-grain covariance.
    #[default]
    Gaussian,
    /// Dropped; the omitted variance is recorded.
    Neglect,
}

/// The intermediate field `J*_{γ,C}` evaluated at `φ_σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntermediateFieldSpec {
    pub gamma: f64,
    pub shape: GrainShape,
    pub rotated: bool,
    /// Limit of `λ F̄_ρ(1)`.
    pub sigma0: f64,
    /// Dilatation `σ = (γσ₀)^{1/((γ−1)d)}`.
    pub sigma: f64,
    /// Small-jump threshold; `None` picks [`default_delta`] of the dilated measures.
    pub delta: Option<f64>,
    pub small_jump_mode: SmallJumpMode,
}

impl IntermediateFieldSpec {
    pub fn new(gamma: f64, shape: GrainShape, rotated: bool, sigma0: f64, small_jump_mode: SmallJumpMode) -> Result<Self> {
        if !(gamma > 1.0 && gamma < 2.0) {
            return Err(Error::param("gamma", gamma, "tail index must lie in (1, 2)"));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::param("sigma0", sigma0, "intermediate intensity must be positive"));
        }
        let sigma = (gamma * sigma0).powf(1.0 / ((gamma - 1.0) * shape.d as f64));
        Ok(IntermediateFieldSpec {
            gamma,
            shape,
            rotated,
            sigma0,
            sigma,
            delta: None,
            small_jump_mode,
        })
    }

    /// `J*` itself: `σ = 1`, i.e. `σ₀ = 1/γ`.
    pub fn unit(gamma: f64, shape: GrainShape, rotated: bool, small_jump_mode: SmallJumpMode) -> Result<Self> {
        Self::new(gamma, shape, rotated, 1.0 / gamma, small_jump_mode)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("delta", delta, "small-jump threshold must be positive"));
        }
        self.delta = Some(delta);
        Ok(self)
    }

    /// The measures `φ_σ` the field is evaluated at.
    pub fn dilated(&self, measures: &[TestMeasure]) -> Result<Vec<TestMeasure>> {
        measures
            .iter()
            .map(|m| {
                let out = dilate(m, self.sigma)?;
                Ok(match &m.id {
                    Some(id) => out.with_id(id.clone()),
                    None => out,
                })
            })
            .collect()
    }
}

/// `δ = 0.1·(min atom diameter)^d`.
pub fn default_delta(measures: &[TestMeasure]) -> Result<f64> {
    let (dia, d) = measures
        .iter()
        .filter(|m| !m.atoms().is_empty())
        .map(|m| (m.min_atom_diameter(), m.dim()))
        .fold((f64::INFINITY, 1), |(a, _), (b, d)| (a.min(b), d));
    if !dia.is_finite() {
        return Err(Error::Config("no non-empty test measure to size the threshold on".into()));
    }
    Ok(0.1 * dia.powi(d as i32))
}

/// Default tolerance for the small-jump covariance.
fn small_jump_tolerance(d: usize) -> Tolerance {
    if d == 1 {
        Tolerance::new(1e-13, 1e-10)
    } else {
        Tolerance::new(1e-10, 1e-7)
    }
}

/// A prepared sampler of `(J*(φ_σ,1), …, J*(φ_σ,m))`.
#[derive(Debug, Clone)]
pub struct IntermediateSampler {
    spec: IntermediateFieldSpec,
    dilated: Vec<TestMeasure>,
    delta: f64,
    large: FieldSimulator,
    compensator: Vec<f64>,
    small_gram: Vec<Vec<f64>>,
    small_chol: Vec<Vec<f64>>,
}

impl IntermediateSampler {
    pub fn new(spec: IntermediateFieldSpec, measures: &[TestMeasure]) -> Result<Self> {
        let dilated = spec.dilated(measures)?;
        let delta = match spec.delta {
            Some(d) => d,
            None => default_delta(&dilated)?,
        };
        if let Some(dia) = dilated.iter().filter(|m| !m.atoms().is_empty()).map(|m| m.min_atom_diameter()).reduce(f64::min) {
            if delta > dia.powi(spec.shape.d as i32) {
                log::warn!("small-jump threshold {delta} exceeds the support scale of the test measures");
            }
        }
        let g = spec.gamma;
        // grains with volume > δ: λ F(dv) = v^{−γ−1} dv with λ = δ^{−γ}/γ and Pareto(γ, δ)
        let law = VolumeLaw::pareto(g, delta)?;
        let lambda = delta.powf(-g) / g;
        let params = ModelParams::new(lambda, 1.0, law, spec.shape, spec.rotated)?;
        let large = FieldSimulator::new(params, &dilated, None)?;
        let mean_per_mass = lambda * law.partial_moment_scaled(1.0, 1.0, 0.0, large.v_cut())?;
        let compensator = dilated.iter().map(|m| m.total_mass() * mean_per_mass).collect();
        let mu = VolumeMeasure::Power {
            scale: 1.0,
            gamma: g,
            lo: 0.0,
            hi: delta,
        };
        let n = dilated.len();
        let tol = small_jump_tolerance(spec.shape.d);
        let mut small_gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let c = compensated_covariance(&mu, spec.shape, spec.rotated, &dilated[i], &dilated[j], tol)?;
                small_gram[i][j] = c;
                small_gram[j][i] = c;
            }
        }
        let small_chol = match spec.small_jump_mode {
            SmallJumpMode::Gaussian => cholesky(&small_gram)?.0,
            SmallJumpMode::Neglect => vec![vec![0.0; n]; n],
        };
        Ok(IntermediateSampler {
            spec,
            dilated,
            delta,
            large,
            compensator,
            small_gram,
            small_chol,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dilated(&self) -> &[TestMeasure] {
        &self.dilated
    }

    /// Covariance of the small-grain part (added in Gaussian mode, omitted otherwise).
    pub fn small_jump_gram(&self) -> &[Vec<f64>] {
        &self.small_gram
    }

    /// Expected number of simulated grains per replicate.
    pub fn expected_grains(&self) -> f64 {
        self.large.expected_count()
    }

    /// One replicate.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut out = self.large.sample(rng)?;
        for (o, c) in out.iter_mut().zip(&self.compensator) {
            *o -= c;
        }
        if self.spec.small_jump_mode == SmallJumpMode::Gaussian {
            for (o, s) in out.iter_mut().zip(correlate(&self.small_chol, rng)) {
                *o += s;
            }
        }
        Ok(out)
    }

    /// `n` replicates, independent of the thread count.
    pub fn batch(&self, n: usize, streams: Streams) -> Result<ReplicateBatch> {
        let rows = (0..n)
            .into_par_iter()
            .map(|k| self.sample(&mut streams.stream(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let omitted: Vec<f64> = match self.spec.small_jump_mode {
            SmallJumpMode::Gaussian => vec![0.0; self.dilated.len()],
            SmallJumpMode::Neglect => (0..self.dilated.len()).map(|i| self.small_gram[i][i]).collect(),
        };
        let meta = serde_json::json!({
            "field": "intermediate",
            "spec": self.spec,
            "delta": self.delta,
            "v_cut": self.large.v_cut(),
            "expected_omitted": self.large.expected_omitted(),
            "bias_bound": self.dilated.iter().map(|m| self.large.bias_bound(m)).collect::<Vec<_>>(),
            "omitted_variance": omitted,
        });
        Ok(ReplicateBatch::new(ids_of(&self.dilated), rows, streams.seed)?.with_metadata(meta))
    }
}

/// `n` replicates of `(J*(φ_σ,i))_i`.
pub fn sample_intermediate(spec: &IntermediateFieldSpec, measures: &[TestMeasure], n: usize, streams: Streams) -> Result<ReplicateBatch> {
    IntermediateSampler::new(*spec, measures)?.batch(n, streams)
}

/// `E exp(i t J*(φ)) = exp(∫∫ Ψ(t φ(x + vC)) dx v^{−γ−1} dv)` in `d = 1`.
pub fn intermediate_cf(gamma: f64, phi: &TestMeasure, t: f64, tol: Tolerance) -> Result<num_complex::Complex64> {
    if phi.dim() != 1 {
        return Err(Error::UnsupportedDimension {
            what: "intermediate characteristic function",
            d: phi.dim(),
        });
    }
    let mu = VolumeMeasure::Power {
        scale: 1.0,
        gamma,
        lo: 0.0,
        hi: f64::INFINITY,
    };
    Ok(psi_exponent_1d(&mu, phi, t, tol)?.exp())
}

/// Outcome of [`aggregate_similarity_check`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_agg: usize,
    pub s: f64,
    pub ks: KsReport,
    pub seed: u64,
    /// Variance of the aggregate and of one copy, with standard errors.
    pub aggregate_variance: (f64, f64),
    pub single_variance: (f64, f64),
}

/// Two-sample comparison of `Σ_{k≤n_agg} J*_k(φ)` with `J*(φ_s)`, `s = n_agg^{1/((γ−1)d)}`.
pub fn aggregate_similarity_check(
    gamma: f64,
    shape: GrainShape,
    phi: &TestMeasure,
    n_agg: usize,
    reps: usize,
    streams: Streams,
) -> Result<AggregateReport> {
    if n_agg < 1 {
        return Err(Error::param("n_agg", n_agg as f64, "need at least one copy"));
    }
    let d = phi.dim() as f64;
    let s = (n_agg as f64).powf(1.0 / ((gamma - 1.0) * d));
    let spec = IntermediateFieldSpec::unit(gamma, shape, false, SmallJumpMode::Gaussian)?;
    let base = default_delta(std::slice::from_ref(phi))?;
    let copy = IntermediateSampler::new(spec.with_delta(base)?, std::slice::from_ref(phi))?;
    let scaled_phi = dilate(phi, s)?;
    let scaled = IntermediateSampler::new(spec.with_delta(base / s.powf(d))?, std::slice::from_ref(&scaled_phi))?;
    let agg_streams = streams.sub(0);
    let aggregate = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = agg_streams.stream(k as u64);
            let mut sum = 0.0;
            for _ in 0..n_agg {
                sum += copy.sample(&mut rng)?[0];
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>>>()?;
    let single = scaled.batch(reps, streams.sub(1))?.column(0);
    Ok(AggregateReport {
        n_agg,
        s,
        ks: ks_two_sample(&aggregate, &single),
        seed: streams.seed,
        aggregate_variance: variance_se(&aggregate),
        single_variance: variance_se(&single),
    })
}

/// Outcome of [`non_self_similarity_witness`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessReport {
    pub s_grid: Vec<f64>,
    /// `|E exp(i X_s)|` of `X_s = J*(φ_s)/s^{(γ−1)d/2}`, with standard errors.
    pub cf_modulus: Vec<(f64, f64)>,
    pub variance: Vec<(f64, f64)>,
    /// The same statistic for the Gaussian limit with the same covariance.
    pub gaussian_cf_modulus: Vec<(f64, f64)>,
    pub spread: f64,
    pub spread_threshold: f64,
    pub gaussian_spread: f64,
    /// The CF modulus varies along `s_grid` beyond 5 standard errors.
    pub non_constant: bool,
    /// Standard errors too large to resolve anything.
    pub inconclusive: bool,
    pub seed: u64,
}

fn cf_modulus(x: &[f64]) -> Result<(f64, f64)> {
    let p = empirical_cf(x, &[1.0])?[0];
    let m = p.value().norm();
    // delta method on |z|
    let (c, s) = (p.re / m.max(1e-300), p.im / m.max(1e-300));
    Ok((m, (c * c * p.se_re * p.se_re + s * s * p.se_im * p.se_im).sqrt()))
}

fn spread(v: &[(f64, f64)]) -> (f64, f64) {
    let max = v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let se = v.iter().map(|p| p.1).fold(0.0, f64::max);
    (max - min, se)
}

/// Shows that `J*` is not self-similar: `X_s = J*(φ_s)/s^{(γ−1)d/2}` has constant
/// variance along `s_grid`, but its characteristic function at `t = 1` moves.
pub fn non_self_similarity_witness(
    gamma: f64,
    shape: GrainShape,
    phi: &TestMeasure,
    s_grid: &[f64],
    reps: usize,
    streams: Streams,
) -> Result<WitnessReport> {
    if s_grid.is_empty() || s_grid.windows(2).any(|w| !(w[1] > w[0])) || s_grid[0] <= 0.0 {
        return Err(Error::Grid("dilatation grid must be positive and increasing".into()));
    }
    let d = phi.dim() as f64;
    let spec = IntermediateFieldSpec::unit(gamma, shape, false, SmallJumpMode::Gaussian)?;
    let kernel = KernelSpec::new(gamma, shape, false)?;
    let base = default_delta(std::slice::from_ref(phi))?;
    let mut cf = Vec::new();
    let mut var = Vec::new();
    let mut gcf = Vec::new();
    for (g, &s) in s_grid.iter().enumerate() {
        let phi_s = dilate(phi, s)?;
        let norm = s.powf((gamma - 1.0) * d / 2.0);
        let sampler = IntermediateSampler::new(spec.with_delta(base / s.powf(d))?, std::slice::from_ref(&phi_s))?;
        let x: Vec<f64> = sampler
            .batch(reps, streams.grid(g as u64))?
            .column(0)
            .iter()
            .map(|v| v / norm)
            .collect();
        cf.push(cf_modulus(&x)?);
        var.push(variance_se(&x));
        let gs = GaussianFieldSpec::new(
            GaussianCovariance::Kernel(kernel),
            std::slice::from_ref(&phi_s),
            crate::kernels::default_tolerance(phi.dim()),
        )?;
        let y: Vec<f64> = sample_gaussian_field(&gs, reps, streams.grid(g as u64).sub(0))?
            .column(0)
            .iter()
            .map(|v| v / norm)
            .collect();
        gcf.push(cf_modulus(&y)?);
    }
    let (sp, se) = spread(&cf);
    let (gsp, _) = spread(&gcf);
    let threshold = 5.0 * se;
    Ok(WitnessReport {
        s_grid: s_grid.to_vec(),
        cf_modulus: cf,
        variance: var,
        gaussian_cf_modulus: gcf,
        spread: sp,
        spread_threshold: threshold,
        gaussian_spread: gsp,
        non_constant: sp > threshold,
        inconclusive: sp <= threshold && threshold > 0.1,
        seed: streams.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heavytail::stable_cf;
    use crate::kernels::default_tolerance;
    use crate::stats::{estimate_covariance, mean_se};

    fn unit() -> TestMeasure {
        TestMeasure::interval(0.0, 1.0).unwrap()
    }

    fn interval_kernel(gamma: f64) -> GaussianCovariance {
        GaussianCovariance::Kernel(KernelSpec::new(gamma, GrainShape::interval(), false).unwrap())
    }

    #[test]
    fn gaussian_field_has_the_kernel_variance() {
        let spec = GaussianFieldSpec::new(interval_kernel(1.5), &[unit()], default_tolerance(1)).unwrap();
        assert!((spec.gram[0][0] - 32.0 / 9.0).abs() < 1e-12);
        let x = sample_gaussian_field(&spec, 100_000, Streams::new(1)).unwrap().column(0);
        let (v, se) = variance_se(&x);
        assert!((v - 32.0 / 9.0).abs() < 3.0 * se, "{v} ± {se}");
    }

    #[test]
    fn gaussian_gram_is_reproduced() {
        let ms = [
            unit(),
            TestMeasure::interval(0.5, 2.0).unwrap(),
            TestMeasure::interval(3.0, 4.0).unwrap().minus(&unit()).unwrap(),
        ];
        let spec = GaussianFieldSpec::new(interval_kernel(1.3), &ms, default_tolerance(1)).unwrap();
        let batch = sample_gaussian_field(&spec, 100_000, Streams::new(2)).unwrap();
        let est = estimate_covariance(&batch.rows, true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let bound = 4.0 * (spec.gram[i][i] * spec.gram[j][j] / 1e5).sqrt();
                assert!((est.cov[i][j] - spec.gram[i][j]).abs() < bound);
            }
        }
    }

    #[test]
    fn white_noise_and_zero_measures() {
        let far = TestMeasure::interval(2.0, 3.0).unwrap();
        let spec =
            GaussianFieldSpec::new(GaussianCovariance::WhiteNoise { d: 1 }, &[unit(), far], default_tolerance(1)).unwrap();
        assert_eq!(spec.gram, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let batch = sample_gaussian_field(&spec, 20_000, Streams::new(3)).unwrap();
        let est = estimate_covariance(&batch.rows, true).unwrap();
        assert!(est.cov[0][1].abs() < 3.0 * est.se[0][1]);
        let zero = GaussianFieldSpec::new(
            GaussianCovariance::WhiteNoise { d: 1 },
            &[TestMeasure::zero(1).unwrap()],
            default_tolerance(1),
        )
        .unwrap();
        let z = sample_gaussian_field(&zero, 10, Streams::new(3)).unwrap();
        assert!(z.column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn riesz_field_dilates_like_a_hurst_field() {
        let h = 0.7;
        let cov = GaussianCovariance::Riesz { hurst: h, d: 1 };
        let ms = [unit(), TestMeasure::interval(1.0, 3.0).unwrap()];
        let s = 2.5;
        let dil: Vec<TestMeasure> = ms.iter().map(|m| dilate(m, s).unwrap()).collect();
        let g = GaussianFieldSpec::new(cov, &ms, default_tolerance(1)).unwrap().gram;
        let gs = GaussianFieldSpec::new(cov, &dil, default_tolerance(1)).unwrap().gram;
        for i in 0..2 {
            for j in 0..2 {
                assert!((gs[i][j] - s.powf(2.0 * (1.0 - h)) * g[i][j]).abs() < 1e-10 * g[i][i]);
            }
        }
    }

    #[test]
    fn stable_marginals() {
        let p = stable_marginal_params(&unit(), 1.5).unwrap();
        assert_eq!((p.sigma, p.beta), (1.0, 1.0));
        let balanced = unit().minus(&TestMeasure::interval(1.0, 2.0).unwrap()).unwrap();
        let p = stable_marginal_params(&balanced, 1.5).unwrap();
        assert_eq!(p.beta, 0.0);
        assert!((p.sigma - 2f64.powf(1.0 / 1.5)).abs() < 1e-14);

        let n = 100_000;
        let streams = Streams::new(4);
        let x: Vec<f64> = (0..n)
            .map(|k| sample_stable_marginal(&unit(), 1.5, &mut streams.stream(k)).unwrap())
            .collect();
        let cf = empirical_cf(&x, &[1.0]).unwrap()[0].value();
        let target = stable_cf(&stable_marginal_params(&unit(), 1.5).unwrap(), 1.0);
        assert!((cf - target).norm() < 4.0 / (n as f64).sqrt());
        // totally skewed to the right
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[(0.99 * n as f64) as usize].abs() > sorted[(0.01 * n as f64) as usize].abs());
    }

    #[test]
    fn stable_field_marginals_and_independence() {
        let gamma = 1.5;
        let other = TestMeasure::interval(2.0, 3.0).unwrap();
        let batch = sample_stable_field(&[unit(), other], gamma, 0.05, 20_000, Streams::new(5)).unwrap();
        let n = 20_000f64;
        let tol = 4.0 / n.sqrt();
        let target = stable_cf(&stable_marginal_params(&unit(), gamma).unwrap(), 1.0);
        let cf = empirical_cf(&batch.column(0), &[1.0]).unwrap()[0].value();
        assert!((cf - target).norm() < 2.0 * tol);
        let rows: Vec<Vec<f64>> = batch.rows.iter().map(|r| r.iter().map(|v| v.atan()).collect()).collect();
        let est = estimate_covariance(&rows, true).unwrap();
        assert!(est.cov[0][1].abs() < 3.0 * est.se[0][1]);
        assert!(matches!(
            sample_stable_field(&[unit()], gamma, 0.3, 10, Streams::new(5)),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn stable_field_is_self_similar() {
        let gamma = 1.5;
        let s = 4.0;
        let phi = TestMeasure::interval(0.0, 2.0).unwrap();
        let a = sample_stable_field(&[dilate(&phi, s).unwrap()], gamma, 0.125, 10_000, Streams::new(6))
            .unwrap()
            .column(0);
        let factor = s.powf(1.0 - 1.0 / gamma);
        let b: Vec<f64> = sample_stable_field(&[phi], gamma, 0.125, 10_000, Streams::new(7))
            .unwrap()
            .column(0)
            .iter()
            .map(|v| factor * v)
            .collect();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.pass, "{ks:?}");
    }

    #[test]
    fn small_and_large_jump_bookkeeping() {
        let spec = IntermediateFieldSpec::unit(1.5, GrainShape::interval(), false, SmallJumpMode::Gaussian)
            .unwrap()
            .with_delta(0.25)
            .unwrap();
        assert_eq!(spec.sigma, 1.0);
        let sampler = IntermediateSampler::new(spec, &[unit()]).unwrap();
        let small = sampler.small_jump_gram()[0][0];
        let closed = 2.0 * 0.25f64.sqrt() - 2.0 / 9.0 * 0.25f64.powf(1.5);
        assert!((small - closed).abs() < 1e-10, "{small} vs {closed}");
        // grains above δ meeting [0, 1]: ∫_δ^{v_cut} (1 + v) v^{−5/2} dv
        let cut = sampler.large.v_cut();
        let count = |v: f64| 1.0 / 1.5 * v.powf(-1.5) + 2.0 * v.powf(-0.5);
        assert!((sampler.expected_grains() - (count(0.25) - count(cut))).abs() < 1e-10);
        assert!(count(cut) <= 1.1e-6);
        // window of length 3, all grains above δ: 3 δ^{−γ}/γ
        let mean_count = 3.0 * 0.25f64.powf(-1.5) / 1.5;
        assert!((mean_count - 16.0).abs() < 1e-12);
        assert!((spec.sigma0 * 1.5 - 1.0).abs() < 1e-15);
        let s2 = IntermediateFieldSpec::new(1.5, GrainShape::interval(), false, 3f64.powf(-1.5), SmallJumpMode::Gaussian).unwrap();
        assert!((s2.sigma - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn intermediate_moments() {
        let spec = IntermediateFieldSpec::new(1.5, GrainShape::interval(), false, 3f64.powf(-1.5), SmallJumpMode::Gaussian).unwrap();
        let phi_s = dilate(&unit(), spec.sigma).unwrap();
        let target = cov_limit(
            &KernelSpec::new(1.5, GrainShape::interval(), false).unwrap(),
            &phi_s,
            &phi_s,
            default_tolerance(1),
        )
        .unwrap();
        let n = 40_000;
        let x = sample_intermediate(&spec, &[unit()], n, Streams::new(8)).unwrap().column(0);
        let (m, mse) = mean_se(&x);
        assert!(m.abs() < 3.0 * mse, "mean {m} ± {mse}");
        let (v, vse) = variance_se(&x);
        assert!((v - target).abs() < 3.0 * vse, "{v} ± {vse} vs {target}");
        let sampler = IntermediateSampler::new(spec, &[unit()]).unwrap();
        let halved = sample_intermediate(&spec.with_delta(sampler.delta() / 2.0).unwrap(), &[unit()], n, Streams::new(9))
            .unwrap()
            .column(0);
        let (vh, vhse) = variance_se(&halved);
        assert!((vh - v).abs() < 3.0 * (vse * vse + vhse * vhse).sqrt());
        let neglect = IntermediateFieldSpec { small_jump_mode: SmallJumpMode::Neglect, ..spec };
        let b = sample_intermediate(&neglect, &[unit()], 10, Streams::new(8)).unwrap();
        assert!(b.metadata["omitted_variance"][0].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn intermediate_cf_matches_samples() {
        let spec = IntermediateFieldSpec::unit(1.5, GrainShape::interval(), false, SmallJumpMode::Gaussian).unwrap();
        let n = 20_000;
        let x = sample_intermediate(&spec, &[unit()], n, Streams::new(10)).unwrap().column(0);
        let ts = [-1.0, -0.5, 0.25, 0.5, 1.0];
        let emp = empirical_cf(&x, &ts).unwrap();
        for (p, &t) in emp.iter().zip(&ts) {
            let target = intermediate_cf(1.5, &unit(), t, Tolerance::new(1e-12, 1e-9)).unwrap();
            assert!((p.value() - target).norm() < 4.0 / (n as f64).sqrt() + 1e-3, "t={t}");
        }
        // second-order structure: −log CF ≈ t²/2 · Var for small t
        let t = 1e-3;
        let c = intermediate_cf(1.5, &unit(), t, Tolerance::new(1e-14, 1e-12)).unwrap();
        assert!((-c.ln().re * 2.0 / (t * t) - 32.0 / 9.0).abs() < 1e-3);
    }

    #[test]
    fn aggregate_similarity() {
        let one = aggregate_similarity_check(1.5, GrainShape::interval(), &unit(), 1, 2000, Streams::new(11)).unwrap();
        assert_eq!(one.s, 1.0);
        assert!(one.ks.pass);
        let four = aggregate_similarity_check(1.5, GrainShape::interval(), &unit(), 4, 5000, Streams::new(12)).unwrap();
        assert_eq!(four.s, 16.0);
        assert!(four.ks.pass, "{:?}", four.ks);
        let (va, sa) = four.aggregate_variance;
        assert!((va - 4.0 * 32.0 / 9.0).abs() < 3.0 * sa);
    }

    #[test]
    fn witness_detects_non_self_similarity() {
        let r = non_self_similarity_witness(1.5, GrainShape::interval(), &unit(), &[1.0, 4.0, 16.0], 300_000, Streams::new(13))
            .unwrap();
        for (v, se) in &r.variance {
            assert!((v - 32.0 / 9.0).abs() < 3.0 * se);
        }
        assert!(r.non_constant, "{r:?}");
        assert!(r.gaussian_spread < r.spread_threshold);
    }
}
