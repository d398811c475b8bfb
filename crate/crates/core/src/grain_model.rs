//! The pre-limit germ-grain field `J_{λ,ρ}`: exact simulation and exact moments.
//!
//! # Simulation
//!
//! Only grains that can touch the support of the test measures matter. A grain of
//! volume `v` has coordinate half-extent at most `e·v^{1/d}` (`e = 1/2` for
//! unrotated cubes, `√2/2` for rotated squares, the radius for balls), so it can
//! hit the bounding box `[lo, hi]` (side lengths `L_k`) only if its center lies in
//! the box dilated by `e·v^{1/d}`. The intensity of such grains is
//!
//! `λ Π_k (L_k + 2e v^{1/d}) F_ρ(dv) = Σ_j λ E_{d−j}(L) (2e)^j v^{j/d} F_ρ(dv)`,
//!
//! with `E_m` the elementary symmetric polynomials. Each term is a finite measure on
//! volumes, so the grains are drawn as a superposition of `d + 1` Poisson streams
//! with `v^{j/d}`-tilted volume laws, and every center is uniform in the dilated box
//! of its own grain. The result is an exact sample of all grains that can meet the
//! support; the only approximation is the optional volume cut `v_cut`, whose
//! effect on the mean is reported as `bias_bound`.
//!
//! # Moments
//!
//! `E J(φ) = λρ φ(R^d) EV`, and `Cov(J(φ), J(ψ)) = λ ∫∫ φ(x + v^{1/d}C) ψ(x + v^{1/d}C) dx F_ρ(dv)`
//! is evaluated by adaptive quadrature (`d ≤ 2`); the characteristic functional
//! `E exp(it(J − EJ)/b) = exp ∫∫ Ψ(tφ(x + v^{1/d}C)/b) λ dx F_ρ(dv)` is available in `d = 1`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, Grain, GrainShape, Point, Region, TestMeasure};
use crate::heavytail::{sample_power, VolumeKind, VolumeLaw};
use crate::planar::grain_covariance_2d;
use crate::profile::{covariance_1d, psi_exponent_1d, VolumeMeasure};
use crate::quadrature::Tolerance;
use crate::rng::{StreamRng, Streams};
use crate::stats::ReplicateBatch;

/// Expected number of omitted grains that fixes the default volume cut.
pub const DEFAULT_OMITTED: f64 = 1e-6;

/// Parameters of the pre-limit model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Germ intensity (grains per unit volume).
    pub lambda: f64,
    /// Mean grain volume scale: volumes are `ρV`.
    pub rho: f64,
    pub law: VolumeLaw,
    pub shape: GrainShape,
    /// Uniformly rotated grains (`d = 2`).
    pub rotated: bool,
}

impl ModelParams {
    pub fn new(lambda: f64, rho: f64, law: VolumeLaw, shape: GrainShape, rotated: bool) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", lambda, "must be positive and finite"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", rho, "must be positive and finite"));
        }
        if rotated && shape.d > 2 {
            return Err(Error::UnsupportedDimension {
                what: "rotated grains",
                d: shape.d,
            });
        }
        Ok(ModelParams {
            lambda,
            rho,
            law,
            shape,
            rotated,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.d
    }

    pub(crate) fn volume_measure(&self) -> VolumeMeasure {
        VolumeMeasure::Law {
            lambda: self.lambda,
            rho: self.rho,
            law: self.law,
        }
    }

    fn check_measure(&self, phi: &TestMeasure) -> Result<()> {
        if phi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: phi.dim(),
            });
        }
        Ok(())
    }
}

/// One sampled configuration of the grains that can meet a given box.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainRealization {
    pub grains: Vec<Grain>,
    /// The box every relevant grain was sampled against (support of the measures).
    pub support: (Point, Point),
    /// Region containing all grain centers: `support` dilated by the reach of the
    /// largest admissible grain (infinite when `v_cut` is).
    pub window: (Point, Point),
    pub v_cut: f64,
    /// Bound on `|E J(φ) − E J_cut(φ)|` for the measures used to build the realization.
    pub bias_bound: f64,
    /// Expected number of grains meeting the support with volume above `v_cut`.
    pub expected_omitted: f64,
}

#[derive(Debug, Clone)]
enum Draw {
    Fixed(f64),
    /// Density `∝ v^{k−1}` on `(l, h]`.
    /// `span = expm1(k·ln(h/l))` is cached for the finite, non-degenerate case.
    Power { k: f64, l: f64, h: f64, span: Option<f64> },
    /// Exponential truncated to `(0, h]`; `top = 1 − e^{−rate·h}`.
    Exponential { rate: f64, h: f64, top: f64 },
    /// `Gamma(1 + p)` truncated to `(0, h]` by rejection.
    Gamma { dist: Gamma<f64>, h: f64 },
    /// Rare windows: generic tilted sampler.
    Tilted { law: VolumeLaw, p: f64, h: f64 },
}

impl Draw {
    fn new(law: &VolumeLaw, p: f64, h: f64) -> Result<Self> {
        Ok(match law.kind {
            VolumeKind::Deterministic { value } => Draw::Fixed(value),
            VolumeKind::Pareto { gamma, v_min } => {
                let k = p - gamma;
                let span = (h.is_finite() && k.abs() >= 1e-14).then(|| (k * (h / v_min).ln()).exp_m1());
                Draw::Power { k, l: v_min, h, span }
            }
            VolumeKind::Exponential { rate } => {
                if p == 0.0 {
                    let top = if h.is_finite() { -(-rate * h).exp_m1() } else { 1.0 };
                    Draw::Exponential { rate, h, top }
                } else if law.partial_moment(p, 0.0, h)? / law.partial_moment(p, 0.0, f64::INFINITY)? > 0.5 {
                    let dist = Gamma::new(1.0 + p, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
                    Draw::Gamma { dist, h }
                } else {
                    Draw::Tilted { law: *law, p, h }
                }
            }
        })
    }

    fn sample(&self, rng: &mut StreamRng) -> Result<f64> {
        Ok(match self {
            Draw::Fixed(v) => *v,
            Draw::Power { k, l, h, span } => {
                let u: f64 = rng.random();
                match span {
                    Some(span) => (l * ((1.0 + u * span).ln() / k).exp()).min(*h),
                    None => sample_power(*k, *l, *h, u),
                }
            }
            Draw::Exponential { rate, h, top } => {
                if *top > 0.9 {
                    // ziggurat draw, truncated to (0, h] by rejection
                    loop {
                        let v = rng.sample::<f64, _>(Exp1) / rate;
                        if v <= *h {
                            break v;
                        }
                    }
                } else {
                    // inverse of the truncated distribution function
                    let u: f64 = rng.random();
                    -(-u * top).ln_1p() / rate
                }
            }
            Draw::Gamma { dist, h } => loop {
                let v = dist.sample(rng);
                if v <= *h {
                    break v;
                }
            },
            Draw::Tilted { law, p, h } => law.sample_tilted(*p, 0.0, *h, rng)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Component {
    /// Expected number of grains.
    mass: f64,
    draw: Draw,
}

/// Intervals `(a, b, w)` of a one-dimensional measure.
type Segments = Vec<(f64, f64, f64)>;

/// Exact sampler of the grains meeting the support of a family of test measures.
#[derive(Debug, Clone)]
pub struct FieldSimulator {
    params: ModelParams,
    measures: Vec<TestMeasure>,
    segments: Option<Vec<Segments>>,
    support: Option<(Point, Point)>,
    half_extent: f64,
    components: Vec<Component>,
    v_cut: f64,
    expected_omitted: f64,
    mean_tail: f64,
}

/// Coefficients `λ E_{d−j}(L) (2e)^j`, `j = 0..d`, of the hitting intensity.
fn hitting_coefficients(lambda: f64, lengths: &[f64], e: f64) -> Vec<f64> {
    // coefficients of Π_k (L_k + t) in powers of t
    let mut poly = vec![1.0];
    for &l in lengths {
        let mut next = vec![0.0; poly.len() + 1];
        for (j, c) in poly.iter().enumerate() {
            next[j] += c * l;
            next[j + 1] += c;
        }
        poly = next;
    }
    poly.iter()
        .enumerate()
        .map(|(j, c)| lambda * c * (2.0 * e).powi(j as i32))
        .collect()
}

/// Expected number of grains with volume in `(lo, hi]` meeting the box with side lengths `lengths`.
fn hitting_count(params: &ModelParams, lengths: &[f64], e: f64, lo: f64, hi: f64) -> Result<f64> {
    let d = params.dim() as f64;
    let mut total = 0.0;
    for (j, c) in hitting_coefficients(params.lambda, lengths, e).iter().enumerate() {
        if *c > 0.0 {
            total += c * params.law.partial_moment_scaled(params.rho, j as f64 / d, lo, hi)?;
        }
    }
    Ok(total)
}

/// Smallest volume cut (up to a factor `1 + 1e−9`) such that the expected number of
/// omitted grains meeting a box with side lengths `lengths` is at most `omitted`.
fn default_cut(params: &ModelParams, lengths: &[f64], e: f64, omitted: f64) -> Result<f64> {
    if let VolumeKind::Deterministic { value } = params.law.kind {
        return Ok(params.rho * value);
    }
    let tail = |v: f64| hitting_count(params, lengths, e, v, f64::INFINITY);
    let mut hi = params.rho.max(params.rho * params.law.min_volume());
    while tail(hi)? > omitted {
        hi *= 4.0;
        if !hi.is_finite() {
            return Err(Error::Domain("no finite volume cut meets the omission target".into()));
        }
    }
    let mut lo = (hi / 4.0).max(params.rho * params.law.min_volume());
    for _ in 0..200 {
        if hi <= lo * (1.0 + 1e-9) {
            break;
        }
        let mid = (lo * hi).sqrt();
        if tail(mid)? > omitted {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

impl FieldSimulator {
    /// Sampler for the measures `measures`, with volume cut `v_cut` (`None`: the
    /// default cut leaving at most [`DEFAULT_OMITTED`] expected grains out; `∞`: no cut).
    pub fn new(params: ModelParams, measures: &[TestMeasure], v_cut: Option<f64>) -> Result<Self> {
        let d = params.dim();
        for m in measures {
            params.check_measure(m)?;
        }
        let support = measures.iter().filter_map(|m| m.bbox()).reduce(|(l1, h1), (l2, h2)| {
            let mut lo = l1;
            let mut hi = h1;
            for i in 0..d {
                lo[i] = lo[i].min(l2[i]);
                hi[i] = hi[i].max(h2[i]);
            }
            (lo, hi)
        });
        let e = params.shape.half_extent(params.rotated);
        let lengths: Vec<f64> = match support {
            Some((lo, hi)) => (0..d).map(|i| hi[i] - lo[i]).collect(),
            None => vec![0.0; d],
        };
        let v_cut = match v_cut {
            Some(v) => v,
            None if support.is_some() => default_cut(&params, &lengths, e, DEFAULT_OMITTED)?,
            None => f64::INFINITY,
        };
        let floor = params.rho * params.law.min_volume();
        let empty = match params.law.kind {
            VolumeKind::Deterministic { .. } => v_cut < floor,
            _ => v_cut <= floor,
        };
        if empty || v_cut.is_nan() {
            return Err(Error::param("v_cut", v_cut, "truncated volume law is empty"));
        }
        let mut components = Vec::new();
        if support.is_some() {
            for (j, c) in hitting_coefficients(params.lambda, &lengths, e).iter().enumerate() {
                let p = j as f64 / d as f64;
                if *c <= 0.0 {
                    continue;
                }
                let mass = c * params.law.partial_moment_scaled(params.rho, p, 0.0, v_cut)?;
                if mass > 0.0 {
                    components.push(Component {
                        mass,
                        draw: Draw::new(&params.law, p, v_cut / params.rho)?,
                    });
                }
            }
        }
        let expected_omitted = if support.is_some() && v_cut.is_finite() {
            hitting_count(&params, &lengths, e, v_cut, f64::INFINITY)?
        } else {
            0.0
        };
        let mean_tail = if v_cut.is_finite() {
            params.lambda * params.law.partial_moment_scaled(params.rho, 1.0, v_cut, f64::INFINITY)?
        } else {
            0.0
        };
        let segments = (d == 1).then(|| {
            measures
                .iter()
                .map(|m| {
                    m.atoms()
                        .iter()
                        .map(|a| {
                            let (lo, hi) = a.region.bbox(1);
                            (lo[0], hi[0], a.weight)
                        })
                        .collect()
                })
                .collect()
        });
        Ok(FieldSimulator {
            params,
            measures: measures.to_vec(),
            segments,
            support,
            half_extent: e,
            components,
            v_cut,
            expected_omitted,
            mean_tail,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn v_cut(&self) -> f64 {
        self.v_cut
    }

    /// Expected number of sampled grains per replicate.
    pub fn expected_count(&self) -> f64 {
        self.components.iter().map(|c| c.mass).sum()
    }

    /// Expected number of grains meeting the support with volume above `v_cut`.
    pub fn expected_omitted(&self) -> f64 {
        self.expected_omitted
    }

    /// `λ |φ(R^d)| ∫_{(v_cut,∞)} v F_ρ(dv)`, the exact size of the mean bias of the cut.
    pub fn bias_bound(&self, phi: &TestMeasure) -> f64 {
        self.mean_tail * phi.total_mass().abs()
    }

    /// The support box the grains are sampled against.
    pub fn support(&self) -> Option<(Point, Point)> {
        self.support
    }

    /// Visit every grain of one replicate as `(center, volume, angle)`.
    pub fn for_each_grain<F>(&self, rng: &mut StreamRng, mut visit: F) -> Result<()>
    where
        F: FnMut(Point, f64, f64),
    {
        let Some((lo, hi)) = self.support else {
            return Ok(());
        };
        let d = self.params.dim();
        let inv_d = 1.0 / d as f64;
        for comp in &self.components {
            let count = Poisson::new(comp.mass).map_err(|e| Error::Domain(e.to_string()))?.sample(rng) as u64;
            for _ in 0..count {
                let v = self.params.rho * comp.draw.sample(rng)?;
                let reach = self.half_extent * if d == 1 { v } else { v.powf(inv_d) };
                let mut center = [0.0; 3];
                for i in 0..d {
                    let a = lo[i] - reach;
                    center[i] = a + rng.random::<f64>() * (hi[i] + reach - a);
                }
                let angle = if self.params.rotated && d == 2 {
                    random_rotation(2, rng)?
                } else {
                    0.0
                };
                visit(center, v, angle);
            }
        }
        Ok(())
    }

    /// All grains of one replicate.
    pub fn realize(&self, rng: &mut StreamRng) -> Result<GrainRealization> {
        let mut grains = Vec::new();
        let shape = self.params.shape;
        self.for_each_grain(rng, |c, v, a| grains.push(Grain::new(shape, c, v, a)))?;
        let d = self.params.dim();
        let (support, window) = match self.support {
            Some((lo, hi)) => {
                let reach = self.half_extent * self.v_cut.powf(1.0 / d as f64);
                let mut wlo = lo;
                let mut whi = hi;
                for i in 0..d {
                    wlo[i] -= reach;
                    whi[i] += reach;
                }
                ((lo, hi), (wlo, whi))
            }
            None => (([0.0; 3], [0.0; 3]), ([0.0; 3], [0.0; 3])),
        };
        let bias_bound = self.measures.iter().map(|m| self.bias_bound(m)).fold(0.0, f64::max);
        Ok(GrainRealization {
            grains,
            support,
            window,
            v_cut: self.v_cut,
            bias_bound,
            expected_omitted: self.expected_omitted,
        })
    }

    /// Field values `J(φ_i)` (uncentered) of one replicate, without storing grains.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.measures.len()];
        if let Some(segs) = &self.segments {
            self.for_each_grain(rng, |c, v, _| {
                let (g0, g1) = (c[0] - 0.5 * v, c[0] + 0.5 * v);
                for (acc, seg) in out.iter_mut().zip(segs) {
                    for &(a, b, w) in seg {
                        let ov = b.min(g1) - a.max(g0);
                        if ov > 0.0 {
                            *acc += w * ov;
                        }
                    }
                }
            })?;
        } else {
            let shape = self.params.shape;
            self.for_each_grain(rng, |c, v, a| {
                let region = Grain::new(shape, c, v, a).region();
                for (acc, m) in out.iter_mut().zip(&self.measures) {
                    *acc += m.mass_of_region(&region);
                }
            })?;
        }
        Ok(out)
    }

    /// `n` replicates; replicate `k` uses `streams.stream(k)`, so the batch does not
    /// depend on the number of worker threads.
    pub fn batch(&self, n: usize, streams: Streams) -> Result<ReplicateBatch> {
        let rows = (0..n)
            .into_par_iter()
            .map(|k| self.sample(&mut streams.stream(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let ids = self
            .measures
            .iter()
            .enumerate()
            .map(|(i, m)| m.id.clone().unwrap_or_else(|| format!("phi{i}")))
            .collect();
        let meta = serde_json::json!({
            "params": self.params,
            "v_cut": self.v_cut,
            "bias_bound": self.measures.iter().map(|m| self.bias_bound(m)).collect::<Vec<_>>(),
            "expected_omitted": self.expected_omitted,
            "grid_index": streams.grid_index,
            "purpose": streams.purpose,
        });
        Ok(ReplicateBatch::new(ids, rows, streams.seed)?.with_metadata(meta))
    }
}

/// Sample the grains that can meet the support of `phi` (see [`FieldSimulator::new`] for `v_cut`).
pub fn simulate_grains(
    params: &ModelParams,
    phi: &TestMeasure,
    v_cut: Option<f64>,
    rng: &mut StreamRng,
) -> Result<GrainRealization> {
    FieldSimulator::new(*params, std::slice::from_ref(phi), v_cut)?.realize(rng)
}

/// `J(φ) = Σ_j φ(grain_j)` for a realization whose support box covers `φ`.
pub fn evaluate_j(realization: &GrainRealization, phi: &TestMeasure) -> Result<f64> {
    let Some(first) = realization.grains.first() else {
        return Ok(0.0);
    };
    let d = first.shape.d;
    if phi.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: phi.dim(),
        });
    }
    if let Some((lo, hi)) = phi.bbox() {
        let (slo, shi) = realization.support;
        for i in 0..d {
            let slack = 1e-12 * (shi[i] - slo[i]).abs().max(1.0);
            if lo[i] < slo[i] - slack || hi[i] > shi[i] + slack {
                return Err(Error::WindowTooSmall(format!(
                    "axis {i}: measure spans [{}, {}], grains sampled for [{}, {}]",
                    lo[i], hi[i], slo[i], shi[i]
                )));
            }
        }
    }
    Ok(realization.grains.iter().map(|g| phi.mass_of_region(&g.region())).sum())
}

/// `E J(φ) = λ ρ φ(R^d) EV`.
pub fn mean_j(params: &ModelParams, phi: &TestMeasure) -> f64 {
    params.lambda * params.rho * params.law.mean * phi.total_mass()
}

/// Default quadrature tolerance for covariances in dimension `d`.
pub fn default_tolerance(d: usize) -> Tolerance {
    if d == 1 {
        Tolerance::new(1e-13, 1e-9)
    } else {
        Tolerance::new(1e-10, 1e-6)
    }
}

/// `Cov(J(φ), J(ψ)) = λ ∫∫ φ(x + v^{1/d}C) ψ(x + v^{1/d}C) dx F_ρ(dv)` (`d ≤ 2`).
pub fn cov_j(params: &ModelParams, phi: &TestMeasure, psi: &TestMeasure, tol: Tolerance) -> Result<f64> {
    params.check_measure(phi)?;
    params.check_measure(psi)?;
    let mu = params.volume_measure();
    match params.dim() {
        1 => covariance_1d(&mu, phi, psi, tol),
        2 => grain_covariance_2d(&mu, params.shape, params.rotated, phi, psi, tol),
        d => Err(Error::UnsupportedDimension { what: "cov_J", d }),
    }
}

/// `∫ φ(x + v^{1/d}C)² dx` for a single grain volume `v`.
pub fn quadratic_overlap(shape: GrainShape, rotated: bool, phi: &TestMeasure, v: f64, tol: Tolerance) -> Result<f64> {
    let params = ModelParams::new(1.0, v, VolumeLaw::deterministic(1.0)?, shape, rotated)?;
    cov_j(&params, phi, phi, tol)
}

/// `E exp(i t (J(φ) − EJ(φ)) / b)` by quadrature (`d = 1`).
pub fn char_functional_j(params: &ModelParams, phi: &TestMeasure, b: f64, t: f64, tol: Tolerance) -> Result<Complex64> {
    params.check_measure(phi)?;
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::param("b", b, "normalizer must be positive"));
    }
    if params.dim() != 1 {
        return Err(Error::UnsupportedDimension {
            what: "characteristic functional quadrature",
            d: params.dim(),
        });
    }
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    Ok(psi_exponent_1d(&params.volume_measure(), phi, t / b, tol)?.exp())
}

/// `Cov(J(B₁), J(B_r ∖ B₁))` for each `r` of an increasing grid with `r > 1`.
pub fn lrd_covariance_curve(params: &ModelParams, r_grid: &[f64], tol: Tolerance) -> Result<Vec<f64>> {
    if r_grid.iter().any(|&r| !(r > 1.0)) || r_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("radii must be increasing and greater than 1".into()));
    }
    let d = params.dim();
    let ball = TestMeasure::centered_ball(d, 1.0)?;
    r_grid
        .iter()
        .map(|&r| {
            let annulus = TestMeasure::centered_ball(d, r)?.minus(&ball)?;
            cov_j(params, &ball, &annulus, tol)
        })
        .collect()
}

/// The region of a realization's window as a box.
pub fn window_region(realization: &GrainRealization) -> Region {
    Region::Box {
        lo: realization.window.0,
        hi: realization.window.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{measure_of_grain, ShapeKind};
    use crate::quadrature::{integrate_pieces, integrate_to_infinity};
    use crate::stats::{mean_se, variance_se};

    fn interval_params(lambda: f64, rho: f64, law: VolumeLaw) -> ModelParams {
        ModelParams::new(lambda, rho, law, GrainShape::interval(), false).unwrap()
    }

    #[test]
    fn hitting_coefficients_expand_the_product() {
        let c = hitting_coefficients(2.0, &[1.0, 3.0], 0.5);
        // 2 (1 + t)(3 + t) = 6 + 8t + 2t², t = 2e = 1
        assert_eq!(c, vec![6.0, 8.0, 2.0]);
    }

    #[test]
    fn deterministic_count_mean() {
        // support [0,2], grains of length 1: centers in [−0.5, 2.5], mean count 10·3
        let params = interval_params(10.0, 1.0, VolumeLaw::deterministic(1.0).unwrap());
        let phi = TestMeasure::interval(0.0, 2.0).unwrap();
        let sim = FieldSimulator::new(params, &[phi], None).unwrap();
        assert!((sim.expected_count() - 30.0).abs() < 1e-12);
        let counts: Vec<f64> = (0..10_000)
            .map(|k| sim.realize(&mut Streams::new(1).stream(k)).unwrap().grains.len() as f64)
            .collect();
        let (m, se) = mean_se(&counts);
        assert!((m - 30.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn void_probability() {
        let params = interval_params(0.01, 1.0, VolumeLaw::deterministic(1.0).unwrap());
        let phi = TestMeasure::interval(0.0, 2.0).unwrap();
        let sim = FieldSimulator::new(params, &[phi], None).unwrap();
        let n = 20_000;
        let empty = (0..n)
            .filter(|&k| sim.realize(&mut Streams::new(2).stream(k)).unwrap().grains.is_empty())
            .count() as f64
            / n as f64;
        let p0 = (-0.03f64).exp();
        assert!(empty >= p0 - 3.0 * (p0 * (1.0 - p0) / n as f64).sqrt());
    }

    #[test]
    fn bias_bound_examples() {
        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let params = interval_params(100.0, 0.01, law);
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let sim = FieldSimulator::new(params, std::slice::from_ref(&phi), Some(1e9)).unwrap();
        // λ φ(R) γ/(γ−1) (ρ v_min)^γ v_cut^{1−γ}
        let exact = 100.0 * 3.0 * (0.01f64 / 3.0).powf(1.5) * 1e9f64.powf(-0.5);
        assert!((sim.bias_bound(&phi) / exact - 1.0).abs() < 1e-12);
        assert!(FieldSimulator::new(params, std::slice::from_ref(&phi), Some(0.001)).is_err());
        let sim = FieldSimulator::new(params, std::slice::from_ref(&phi), None).unwrap();
        assert!(sim.expected_omitted() <= DEFAULT_OMITTED * (1.0 + 1e-9));
        assert!(sim.expected_omitted() > 0.5 * DEFAULT_OMITTED);
        let sim = FieldSimulator::new(params, std::slice::from_ref(&phi), Some(f64::INFINITY)).unwrap();
        assert_eq!(sim.bias_bound(&phi), 0.0);
    }

    #[test]
    fn evaluate_examples() {
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let shape = GrainShape::interval();
        let mut r = GrainRealization {
            grains: vec![],
            support: ([0.0; 3], [1.0, 0.0, 0.0]),
            window: ([-1.0, 0.0, 0.0], [2.0, 0.0, 0.0]),
            v_cut: 2.0,
            bias_bound: 0.0,
            expected_omitted: 0.0,
        };
        assert_eq!(evaluate_j(&r, &phi).unwrap(), 0.0);
        r.grains.push(Grain::new(shape, [0.5, 0.0, 0.0], 0.25, 0.0));
        assert!((evaluate_j(&r, &phi).unwrap() - 0.25).abs() < 1e-15);
        let wide = TestMeasure::interval(-1.0, 1.0).unwrap();
        assert!(matches!(evaluate_j(&r, &wide), Err(Error::WindowTooSmall(_))));
    }

    #[test]
    fn streaming_matches_stored_grains_and_is_linear() {
        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let params = interval_params(50.0, 0.05, law);
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let psi = TestMeasure::interval(0.5, 2.0).unwrap().scaled(-2.0);
        let both = [phi.clone(), psi.clone()];
        let sim = FieldSimulator::new(params, &both, None).unwrap();
        for k in 0..20 {
            let vals = sim.sample(&mut Streams::new(3).stream(k)).unwrap();
            let real = sim.realize(&mut Streams::new(3).stream(k)).unwrap();
            let a = evaluate_j(&real, &phi).unwrap();
            let b = evaluate_j(&real, &psi).unwrap();
            assert!((vals[0] - a).abs() < 1e-9 * (1.0 + a.abs()));
            assert!((vals[1] - b).abs() < 1e-9 * (1.0 + b.abs()));
            let comb = phi.scaled(2.0).plus(&psi.scaled(-3.0)).unwrap();
            let c = evaluate_j(&real, &comb).unwrap();
            assert!((c - (2.0 * a - 3.0 * b)).abs() < 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn mean_examples_and_monte_carlo() {
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let params = interval_params(10.0, 0.2, VolumeLaw::exponential_unit_mean());
        assert!((mean_j(&params, &phi) - 2.0).abs() < 1e-15);
        let balanced = phi.minus(&TestMeasure::interval(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(mean_j(&params, &balanced), 0.0);

        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let params = interval_params(20.0, 0.1, law);
        let sim = FieldSimulator::new(params, std::slice::from_ref(&phi), None).unwrap();
        let batch = sim.batch(10_000, Streams::new(4)).unwrap();
        let centered: Vec<f64> = batch.column(0).iter().map(|x| x - mean_j(&params, &phi)).collect();
        let (m, se) = mean_se(&centered);
        assert!(m.abs() < 3.0 * se + sim.bias_bound(&phi), "{m} ± {se}");
        // empirical variance against the quadrature covariance (heavy tail: loose check)
        let var = cov_j(&params, &phi, &phi, default_tolerance(1)).unwrap();
        let (v, vse) = variance_se(&centered);
        assert!((v - var).abs() < 4.0 * vse, "{v} ± {vse} vs {var}");
    }

    #[test]
    fn deterministic_variance_is_four_thirds() {
        let params = interval_params(2.0, 1.0, VolumeLaw::deterministic(1.0).unwrap());
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let v = cov_j(&params, &phi, &phi, default_tolerance(1)).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_measures_are_uncorrelated() {
        let params = interval_params(2.0, 1.0, VolumeLaw::deterministic(1.0).unwrap());
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let psi = TestMeasure::interval(5.0, 6.0).unwrap();
        assert_eq!(cov_j(&params, &phi, &psi, default_tolerance(1)).unwrap(), 0.0);
    }

    /// `∫ h(v) λ F_ρ(dv)` with `h` from single-volume quadratic overlaps: an oracle
    /// for the large-grain tail handling of `cov_j`.
    fn cov_by_volume_quadrature(params: &ModelParams, phi: &TestMeasure, tol: Tolerance) -> f64 {
        let VolumeKind::Pareto { gamma, v_min } = params.law.kind else {
            panic!()
        };
        let l = params.rho * v_min;
        let k = params.lambda * gamma * l.powf(gamma);
        let f = |v: f64| {
            quadratic_overlap(params.shape, params.rotated, phi, v, tol).unwrap() * k * v.powf(-gamma - 1.0)
        };
        let near = integrate_pieces(f, &[l, 2.0, 8.0, 50.0], tol).unwrap().value;
        near + integrate_to_infinity(f, 50.0, tol).unwrap().value
    }

    #[test]
    fn pareto_covariance_matches_volume_quadrature_1d() {
        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let params = interval_params(3.0, 0.7, law);
        let phi = TestMeasure::interval(0.0, 1.0)
            .unwrap()
            .plus(&TestMeasure::interval(1.5, 2.5).unwrap().scaled(-0.5))
            .unwrap();
        let a = cov_j(&params, &phi, &phi, default_tolerance(1)).unwrap();
        let b = cov_by_volume_quadrature(&params, &phi, Tolerance::new(1e-13, 1e-10));
        assert!((a / b - 1.0).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn planar_covariances_match_direct_integration() {
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        // deterministic unit squares on a unit square: (1 − 1/3)² per unit intensity
        let sq = GrainShape::cube(2).unwrap();
        let v = quadratic_overlap(sq, false, &phi, 1.0, default_tolerance(2)).unwrap();
        assert!((v - 4.0 / 9.0).abs() < 1e-9, "{v}");
        // rotated squares and discs against a direct x-integration of φ(x + G)²
        let tol = Tolerance::new(1e-8, 1e-6);
        for (kind, rotated) in [(ShapeKind::Cube, true), (ShapeKind::Ball, false)] {
            let shape = GrainShape::new(kind, 2).unwrap();
            for &vol in &[0.3, 2.0] {
                let got = quadratic_overlap(shape, rotated, &phi, vol, default_tolerance(2)).unwrap();
                let reach = shape.half_extent(rotated) * vol.sqrt();
                let (gl, gw) = crate::quadrature::gauss_legendre(24);
                let angles: Vec<(f64, f64)> = if rotated {
                    gl.iter().zip(&gw).map(|(x, w)| ((x + 1.0) * std::f64::consts::FRAC_PI_4, w / 2.0)).collect()
                } else {
                    vec![(0.0, 1.0)]
                };
                let mut direct = 0.0;
                for (theta, wt) in angles {
                    let mut pts = vec![-reach, reach, 1.0 - reach, 1.0 + reach];
                    pts.sort_by(f64::total_cmp);
                    let inner = |x: f64| {
                        integrate_pieces(
                            |y: f64| {
                                let g = Grain::new(shape, [x, y, 0.0], vol, theta);
                                measure_of_grain(&phi, &g).unwrap().powi(2)
                            },
                            &pts,
                            tol,
                        )
                        .unwrap()
                        .value
                    };
                    direct += wt * integrate_pieces(inner, &pts, tol).unwrap().value;
                }
                assert!((got / direct - 1.0).abs() < 1e-5, "{kind:?} v={vol}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn planar_pareto_tail_handling() {
        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 0.5]).unwrap();
        for (kind, rotated) in [(ShapeKind::Cube, false), (ShapeKind::Cube, true), (ShapeKind::Ball, false)] {
            let shape = GrainShape::new(kind, 2).unwrap();
            let params = ModelParams::new(2.0, 0.5, law, shape, rotated).unwrap();
            let a = cov_j(&params, &phi, &phi, default_tolerance(2)).unwrap();
            let b = cov_by_volume_quadrature(&params, &phi, Tolerance::new(1e-9, 1e-6));
            assert!((a / b - 1.0).abs() < 1e-4, "{kind:?}/{rotated}: {a} vs {b}");
        }
    }

    #[test]
    fn characteristic_functional_examples() {
        let law = VolumeLaw::pareto_unit_mean(1.5).unwrap();
        let params = interval_params(5.0, 0.2, law);
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let tol = Tolerance::new(1e-14, 1e-11);
        assert_eq!(char_functional_j(&params, &phi, 1.0, 0.0, tol).unwrap(), Complex64::new(1.0, 0.0));
        let b = 1.3;
        let var = cov_j(&params, &phi, &phi, tol).unwrap();
        let h = 1e-3;
        let log_cf = |t: f64| char_functional_j(&params, &phi, b, t, tol).unwrap().ln();
        let second = -(log_cf(h) - 2.0 * log_cf(0.0) + log_cf(-h)) / (h * h);
        assert!((second.re / (var / (b * b)) - 1.0).abs() < 1e-4, "{second} vs {}", var / (b * b));
        for t in [0.5, 1.0, 2.0, 7.0] {
            assert!(char_functional_j(&params, &phi, b, t, tol).unwrap().norm() <= 1.0);
        }
    }

    #[test]
    fn lrd_curves() {
        let tol = default_tolerance(1);
        let grid = [1.5, 2.0, 8.0, 32.0, 64.0];
        let expo = interval_params(1.0, 1.0, VolumeLaw::exponential_unit_mean());
        let c = lrd_covariance_curve(&expo, &grid, tol).unwrap();
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
        assert!((c[4] - c[3]) / c[3] < 0.01);
        let pareto = interval_params(1.0, 1.0, VolumeLaw::pareto_unit_mean(1.5).unwrap());
        let p = lrd_covariance_curve(&pareto, &grid, tol).unwrap();
        assert!(p[0] > 0.0 && p.windows(2).all(|w| w[1] > w[0]));
        assert!(p[4] / p[1] > 3.0, "{p:?}");
        assert!(lrd_covariance_curve(&pareto, &[2.0, 1.5], tol).is_err());
    }
}
