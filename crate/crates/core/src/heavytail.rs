//! Grain-volume laws, stable laws and the special constants of the scaling limits.
//!
//! The canonical heavy-tailed law is a Pareto law with unit mean, for which every
//! regular-variation formula is an identity rather than an asymptotic statement.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_pieces, Tolerance};
use crate::special::gamma as gamma_fn;

/// Distribution family of the normalised grain volume `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeKind {
    /// `P(V > v) = (v / v_min)^(-gamma)` for `v >= v_min`.
    Pareto { gamma: f64, v_min: f64 },
    /// `P(V > v) = exp(-rate v)`.
    Exponential { rate: f64 },
    /// `V = value` almost surely.
    Deterministic { value: f64 },
}

/// A grain-volume law together with its mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeLaw {
    pub kind: VolumeKind,
    pub mean: f64,
}

/// Which side of the threshold a truncated moment integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `∫_(a,∞) v^p F(dv)`, requires `p < gamma`.
    Upper,
    /// `∫_[0,a] v^q F(dv)`, requires `q > gamma`.
    Lower,
}

/// Exact truncated moment of a Pareto law and its Karamata approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedMoment {
    pub exact: f64,
    /// `γ/(γ−p)·F̄(a)·a^p` (upper) or `γ/(q−γ)·F̄(a)·a^q` (lower).
    pub karamata: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(Error::param("gamma", gamma, "tail index must lie in (1, 2)"));
    }
    Ok(())
}

fn moment_tolerance() -> Tolerance {
    Tolerance::new(1e-15, 1e-12).with_max_intervals(2000)
}

impl VolumeLaw {
    /// Pareto law with tail index `gamma` and unit mean (`v_min = (γ−1)/γ`).
    pub fn pareto_unit_mean(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Self::pareto(gamma, (gamma - 1.0) / gamma)
    }

    /// Pareto law with tail index `gamma ∈ (1,2)` and scale `v_min`.
    pub fn pareto(gamma: f64, v_min: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(v_min > 0.0 && v_min.is_finite()) {
            return Err(Error::param("v_min", v_min, "scale must be positive and finite"));
        }
        Ok(VolumeLaw {
            kind: VolumeKind::Pareto { gamma, v_min },
            mean: gamma * v_min / (gamma - 1.0),
        })
    }

    /// Exponential law with unit mean, the canonical finite-variance law.
    pub fn exponential_unit_mean() -> Self {
        VolumeLaw {
            kind: VolumeKind::Exponential { rate: 1.0 },
            mean: 1.0,
        }
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::param("rate", rate, "rate must be positive and finite"));
        }
        Ok(VolumeLaw {
            kind: VolumeKind::Exponential { rate },
            mean: 1.0 / rate,
        })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::param("value", value, "volume must be positive and finite"));
        }
        Ok(VolumeLaw {
            kind: VolumeKind::Deterministic { value },
            mean: value,
        })
    }

    /// Tail index for Pareto laws, `None` otherwise.
    pub fn tail_index(&self) -> Option<f64> {
        match self.kind {
            VolumeKind::Pareto { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    /// Left end of the support.
    pub fn min_volume(&self) -> f64 {
        match self.kind {
            VolumeKind::Pareto { v_min, .. } => v_min,
            VolumeKind::Exponential { .. } => 0.0,
            VolumeKind::Deterministic { value } => value,
        }
    }

    /// `E V²`, infinite for Pareto laws with tail index below 2.
    pub fn second_moment(&self) -> f64 {
        match self.kind {
            VolumeKind::Pareto { .. } => f64::INFINITY,
            VolumeKind::Exponential { rate } => 2.0 / (rate * rate),
            VolumeKind::Deterministic { value } => value * value,
        }
    }

    /// `F̄(v) = P(V > v)`.
    pub fn tail(&self, v: f64) -> f64 {
        match self.kind {
            VolumeKind::Pareto { gamma, v_min } => {
                if v < v_min {
                    1.0
                } else {
                    (v / v_min).powf(-gamma)
                }
            }
            VolumeKind::Exponential { rate } => {
                if v <= 0.0 {
                    1.0
                } else {
                    (-rate * v).exp()
                }
            }
            VolumeKind::Deterministic { value } => {
                if v < value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Tail of the scaled law `F_ρ` (volumes `ρV`).
    pub fn tail_scaled(&self, rho: f64, v: f64) -> f64 {
        self.tail(v / rho)
    }

    /// Density of `V` at `v` (zero for the deterministic law, which has an atom).
    pub fn density(&self, v: f64) -> f64 {
        match self.kind {
            VolumeKind::Pareto { gamma, v_min } => {
                if v < v_min {
                    0.0
                } else {
                    gamma / v_min * (v / v_min).powf(-gamma - 1.0)
                }
            }
            VolumeKind::Exponential { rate } => {
                if v < 0.0 {
                    0.0
                } else {
                    rate * (-rate * v).exp()
                }
            }
            VolumeKind::Deterministic { .. } => 0.0,
        }
    }

    /// One draw of `V`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            VolumeKind::Pareto { gamma, v_min } => {
                let u = 1.0 - rng.random::<f64>();
                v_min * u.powf(-1.0 / gamma)
            }
            VolumeKind::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            VolumeKind::Deterministic { value } => value,
        }
    }

    /// `(1/F̄_ρ)^←(u) = inf{v : 1/F̄_ρ(v) ≥ u}`.
    pub fn quantile_reciprocal_tail(&self, rho: f64, u: f64) -> Result<f64> {
        if !(u > 1.0) {
            return Err(Error::Domain(format!("reciprocal-tail level must exceed 1, got {u}")));
        }
        if !(rho > 0.0) {
            return Err(Error::param("rho", rho, "scale must be positive"));
        }
        Ok(match self.kind {
            VolumeKind::Pareto { gamma, v_min } => rho * v_min * u.powf(1.0 / gamma),
            VolumeKind::Exponential { rate } => rho * u.ln() / rate,
            VolumeKind::Deterministic { value } => rho * value,
        })
    }

    /// `∫_(lo,hi] v^p F(dv)` for `p ≥ 0` (either bound may be infinite on the right).
    pub fn partial_moment(&self, p: f64, lo: f64, hi: f64) -> Result<f64> {
        if !(hi > lo) {
            return Ok(0.0);
        }
        match self.kind {
            VolumeKind::Pareto { gamma, v_min } => {
                let l = lo.max(v_min);
                if !(hi > l) {
                    return Ok(0.0);
                }
                if hi.is_infinite() && p >= gamma {
                    return Err(Error::DivergentMoment { order: p });
                }
                Ok(gamma * v_min.powf(gamma) * power_integral(p - gamma, l, hi))
            }
            VolumeKind::Exponential { rate } => {
                let l = lo.max(0.0);
                let cap = l + (80.0 + 4.0 * p) / rate;
                let h = hi.min(cap);
                if !(h > l) {
                    return Ok(0.0);
                }
                let mut pts = vec![l];
                let mode = p / rate;
                if mode > l && mode < h {
                    pts.push(mode);
                }
                pts.push(h);
                let est = integrate_pieces(|v: f64| v.powf(p) * rate * (-rate * v).exp(), &pts, moment_tolerance())?;
                Ok(est.value)
            }
            VolumeKind::Deterministic { value } => Ok(if value > lo && value <= hi { value.powf(p) } else { 0.0 }),
        }
    }

    /// `∫_(lo,hi] v^p F_ρ(dv)` for the scaled law.
    pub fn partial_moment_scaled(&self, rho: f64, p: f64, lo: f64, hi: f64) -> Result<f64> {
        Ok(rho.powf(p) * self.partial_moment(p, lo / rho, hi / rho)?)
    }

    /// Draw from the law with density proportional to `v^p F(dv)` on `(lo, hi]`.
    pub fn sample_tilted<R: Rng + ?Sized>(&self, p: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
        match self.kind {
            VolumeKind::Pareto { gamma, v_min } => {
                let l = lo.max(v_min);
                if hi.is_infinite() && p >= gamma {
                    return Err(Error::DivergentMoment { order: p });
                }
                Ok(sample_power(p - gamma, l, hi, rng.random()))
            }
            VolumeKind::Exponential { rate } => {
                let l = lo.max(0.0);
                let shape = 1.0 + p;
                let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
                let total = self.partial_moment(p, 0.0, f64::INFINITY)?;
                let inside = self.partial_moment(p, l, hi)?;
                if inside <= 0.0 {
                    return Err(Error::Domain(format!("empty tilted law on ({lo}, {hi}]")));
                }
                if inside / total > 0.02 {
                    loop {
                        let v = g.sample(rng);
                        if v > l && v <= hi {
                            return Ok(v);
                        }
                    }
                }
                // rare window: invert the conditional distribution function numerically
                let target = rng.random::<f64>() * inside;
                let (mut a, mut b) = (l, hi.min(l + (80.0 + 4.0 * p) / rate));
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if self.partial_moment(p, l, m)? < target {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a <= 1e-14 * b {
                        break;
                    }
                }
                Ok(0.5 * (a + b))
            }
            VolumeKind::Deterministic { value } => {
                if value > lo && value <= hi {
                    Ok(value)
                } else {
                    Err(Error::Domain(format!("empty tilted law on ({lo}, {hi}]")))
                }
            }
        }
    }
}

/// `∫_l^h v^(k−1) dv` with `h` possibly infinite (`k < 0` then).
pub(crate) fn power_integral(k: f64, l: f64, h: f64) -> f64 {
    if k.abs() < 1e-14 {
        return (h / l).ln();
    }
    if h.is_infinite() {
        return -l.powf(k) / k;
    }
    // (h^k − l^k)/k evaluated without cancellation when h ≈ l
    let r = (h / l).ln();
    l.powf(k) * (k * r).exp_m1() / k
}

/// Inverse-CDF draw from the density `∝ v^(k−1)` on `(l, h]`, given `u ∈ [0,1)`.
pub(crate) fn sample_power(k: f64, l: f64, h: f64, u: f64) -> f64 {
    if k.abs() < 1e-14 {
        return l * ((h / l).ln() * u).exp();
    }
    if h.is_infinite() {
        // k < 0: P(V > v) = (v/l)^k
        return l * (1.0 - u).powf(1.0 / k);
    }
    let r = (h / l).ln();
    // v^k = l^k + u (h^k − l^k)  ⇒  v = l (1 + u·expm1(k r))^(1/k)
    let w = 1.0 + u * (k * r).exp_m1();
    (l * (w.ln() / k).exp()).min(h)
}

/// Exact truncated moment of a Pareto law together with its Karamata expression.
///
/// For the upper side the two coincide whenever `a ≥ v_min`. For the lower side the
/// exact value is `γ v_min^γ (a^(q−γ) − v_min^(q−γ))/(q−γ)`, which differs from the
/// Karamata expression `γ v_min^γ a^(q−γ)/(q−γ)` by the constant `γ v_min^q/(q−γ)`.
pub fn karamata_truncated_moment(law: &VolumeLaw, exponent: f64, a: f64, side: Side) -> Result<TruncatedMoment> {
    let VolumeKind::Pareto { gamma, v_min } = law.kind else {
        return Err(Error::Config("Karamata moments are implemented for Pareto laws only".into()));
    };
    if !(a > 0.0) {
        return Err(Error::param("a", a, "threshold must be positive"));
    }
    match side {
        Side::Upper => {
            if exponent >= gamma {
                return Err(Error::DivergentMoment { order: exponent });
            }
            let exact = law.partial_moment(exponent, a, f64::INFINITY)?;
            let karamata = gamma / (gamma - exponent) * law.tail(a) * a.powf(exponent);
            Ok(TruncatedMoment { exact, karamata })
        }
        Side::Lower => {
            if exponent <= gamma {
                return Err(Error::DivergentMoment { order: exponent });
            }
            let exact = law.partial_moment(exponent, 0.0, a)?;
            let _ = v_min;
            let karamata = gamma / (exponent - gamma) * law.tail(a) * a.powf(exponent);
            Ok(TruncatedMoment { exact, karamata })
        }
    }
}

/// Parameters of a stable law with characteristic function
/// `exp(−σ^γ |t|^γ (1 − iβ sgn(t) tan(πγ/2)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub gamma: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl StableParams {
    pub fn new(gamma: f64, sigma: f64, beta: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", sigma, "scale must be non-negative"));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(Error::param("beta", beta, "skewness must lie in [-1, 1]"));
        }
        Ok(StableParams { gamma, sigma, beta })
    }
}

/// Chambers–Mallows–Stuck draw from the stable law with the parameterisation above.
pub fn stable_sample<R: Rng + ?Sized>(params: &StableParams, rng: &mut R) -> f64 {
    if params.sigma == 0.0 {
        return 0.0;
    }
    let a = params.gamma;
    let zeta = params.beta * (PI * a / 2.0).tan();
    let b = zeta.atan() / a;
    let s = (1.0 + zeta * zeta).powf(1.0 / (2.0 * a));
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let x = s * (a * (v + b)).sin() / v.cos().powf(1.0 / a) * ((v - a * (v + b)).cos() / w).powf((1.0 - a) / a);
    params.sigma * x
}

/// Characteristic function of the stable law.
pub fn stable_cf(params: &StableParams, t: f64) -> Complex64 {
    let a = params.gamma;
    let mag = (params.sigma * t.abs()).powf(a);
    let skew = params.beta * t.signum() * (PI * a / 2.0).tan();
    (-Complex64::new(mag, -mag * skew)).exp()
}

/// `c_γ = (−Γ(2−γ)/(γ(γ−1))·cos(πγ/2))^(−1/γ)`.
pub fn c_gamma(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let inner = -gamma_fn(2.0 - gamma) / (gamma * (gamma - 1.0)) * (PI * gamma / 2.0).cos();
    Ok(inner.powf(-1.0 / gamma))
}

/// `d_γ = Γ(2−γ)/(γ(γ−1))·cos(πγ/2)·(1 − i tan(πγ/2))`, i.e. `∫_0^∞ Ψ(v) v^(−γ−1) dv`.
pub fn d_gamma(gamma: f64) -> Result<Complex64> {
    check_gamma(gamma)?;
    let re = gamma_fn(2.0 - gamma) / (gamma * (gamma - 1.0)) * (PI * gamma / 2.0).cos();
    Ok(Complex64::new(re, -re * (PI * gamma / 2.0).tan()))
}

/// Riesz constant `c_{α,d} = π^((α−1/2)d)·Γ((1−α)d/2)/Γ(αd/2)`.
pub fn c_alpha_d(alpha: f64, d: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", alpha, "must lie in (0, 1)"));
    }
    if d == 0 {
        return Err(Error::param("d", 0.0, "dimension must be at least 1"));
    }
    if alpha == 0.5 {
        return Ok(1.0);
    }
    let d = d as f64;
    Ok(PI.powf((alpha - 0.5) * d) * gamma_fn((1.0 - alpha) * d / 2.0) / gamma_fn(alpha * d / 2.0))
}

/// `sin v − v`, accurate for small arguments.
fn sin_minus_id(v: f64) -> f64 {
    if v.abs() < 0.25 {
        let v2 = v * v;
        v * v2 * (-1.0 / 6.0 + v2 * (1.0 / 120.0 + v2 * (-1.0 / 5040.0 + v2 * (1.0 / 362_880.0 - v2 / 39_916_800.0))))
    } else {
        v.sin() - v
    }
}

/// `Ψ(v) = e^{iv} − 1 − iv`.
pub fn psi(v: f64) -> Complex64 {
    let s = (0.5 * v).sin();
    Complex64::new(-2.0 * s * s, sin_minus_id(v))
}

/// `∫_0^w Ψ(u) du = (sin w − w) + i(1 − cos w − w²/2)`.
pub(crate) fn psi_integral(w: f64) -> Complex64 {
    let im = if w.abs() < 0.25 {
        let w2 = w * w;
        w2 * w2
            * (-1.0 / 24.0 + w2 * (1.0 / 720.0 + w2 * (-1.0 / 40_320.0 + w2 * (1.0 / 3_628_800.0 - w2 / 479_001_600.0))))
    } else {
        let s = (0.5 * w).sin();
        2.0 * s * s - 0.5 * w * w
    };
    Complex64::new(sin_minus_id(w), im)
}
