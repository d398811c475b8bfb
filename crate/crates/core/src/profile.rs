//! One-dimensional grain profiles `x ↦ φ(x + vC)` and the volume integrals built on them.
//!
//! In `d = 1` every grain is an interval `[x − v/2, x + v/2]`, so the profile of a
//! box/ball combination is piecewise linear with breakpoints at atom endpoints
//! `± v/2`. Breakpoints are kept as `(endpoint, offset)` pairs so that segment widths
//! and overlap lengths are computed without cancellation even when `v` is tiny
//! compared with the coordinates.
//!
//! The volume integrals `∫ f(v) μ(dv)` have `f` affine in `v` once `v` exceeds the
//! span of the supports; that tail is integrated in closed form.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Region, TestMeasure};
use crate::heavytail::{power_integral, psi, psi_integral, VolumeKind, VolumeLaw};
use crate::quadrature::{gauss_legendre, integrate_pieces, QuadValue, Tolerance};

/// Endpoints of every atom of every measure (sorted, deduplicated).
pub(crate) fn endpoints(measures: &[&TestMeasure]) -> Result<Vec<f64>> {
    let mut e = vec![];
    for m in measures {
        if m.dim() != 1 {
            return Err(Error::UnsupportedDimension {
                what: "one-dimensional profile",
                d: m.dim(),
            });
        }
        for a in m.atoms() {
            let (l, h) = a.region.bbox(1);
            e.push(l[0]);
            e.push(h[0]);
        }
    }
    e.sort_by(f64::total_cmp);
    e.dedup();
    Ok(e)
}

fn atom_interval(r: &Region) -> (f64, f64) {
    let (l, h) = r.bbox(1);
    (l[0], h[0])
}

/// Profiles of several measures on a common set of breakpoints.
pub(crate) struct Profiles {
    /// Breakpoint anchors (atom endpoints) and offsets (`±v/2`), in increasing order of `anchor + offset`.
    anchor: Vec<f64>,
    offset: Vec<f64>,
    /// `values[m][k]`: profile of measure `m` at breakpoint `k`.
    values: Vec<Vec<f64>>,
}

impl Profiles {
    pub(crate) fn new(measures: &[&TestMeasure], ends: &[f64], v: f64) -> Profiles {
        let s = 0.5 * v;
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * ends.len());
        for &e in ends {
            pts.push((e, -s));
            pts.push((e, s));
        }
        pts.sort_by(|a, b| ((a.0 - b.0) + (a.1 - b.1)).total_cmp(&0.0));
        let values = measures
            .iter()
            .map(|m| {
                pts.iter()
                    .map(|&(e, o)| {
                        m.atoms()
                            .iter()
                            .map(|at| {
                                let (a, b) = atom_interval(&at.region);
                                let hi = (b - e).min(o + s);
                                let lo = (a - e).max(o - s);
                                at.weight * (hi - lo).max(0.0)
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Profiles {
            anchor: pts.iter().map(|p| p.0).collect(),
            offset: pts.iter().map(|p| p.1).collect(),
            values,
        }
    }

    fn width(&self, k: usize) -> f64 {
        ((self.anchor[k + 1] - self.anchor[k]) + (self.offset[k + 1] - self.offset[k])).max(0.0)
    }

    /// `∫ f_i f_j dx` (exact: Simpson on piecewise quadratics).
    pub(crate) fn product(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (&self.values[i], &self.values[j]);
        let mut s = 0.0;
        for k in 0..p.len().saturating_sub(1) {
            let w = self.width(k);
            if w == 0.0 {
                continue;
            }
            let pm = 0.5 * (p[k] + p[k + 1]);
            let qm = 0.5 * (q[k] + q[k + 1]);
            s += w / 6.0 * (p[k] * q[k] + 4.0 * pm * qm + p[k + 1] * q[k + 1]);
        }
        s
    }

    /// `∫ Ψ(c·f_i(x)) dx`.
    pub(crate) fn psi_integral(&self, i: usize, c: f64, gl: &(Vec<f64>, Vec<f64>)) -> Complex64 {
        let p = &self.values[i];
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..p.len().saturating_sub(1) {
            let w = self.width(k);
            if w == 0.0 {
                continue;
            }
            let (y0, y1) = (c * p[k], c * p[k + 1]);
            if (y1 - y0).abs() < 0.5 {
                let (x, wt) = gl;
                let mut acc = Complex64::new(0.0, 0.0);
                for (xi, wi) in x.iter().zip(wt) {
                    acc += psi(0.5 * (y0 + y1) + 0.5 * (y1 - y0) * xi) * *wi;
                }
                s += acc * (0.5 * w);
            } else {
                s += (psi_integral(y1) - psi_integral(y0)) * (w / (y1 - y0));
            }
        }
        s
    }
}

/// `v`-values at which the breakpoint structure of the profiles changes.
pub(crate) fn volume_breaks(ends: &[f64]) -> Vec<f64> {
    let mut b = vec![];
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            b.push(ends[j] - ends[i]);
        }
    }
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// A measure on grain volumes: either `λ F_ρ(dv)` or `κ v^{−γ−1} dv` on `(lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum VolumeMeasure {
    Law { lambda: f64, rho: f64, law: VolumeLaw },
    Power { scale: f64, gamma: f64, lo: f64, hi: f64 },
}

impl VolumeMeasure {
    /// Support `(lower, upper)`.
    pub(crate) fn support(&self) -> (f64, f64) {
        match *self {
            VolumeMeasure::Law { rho, law, .. } => match law.kind {
                VolumeKind::Deterministic { value } => (rho * value, rho * value),
                _ => (rho * law.min_volume(), f64::INFINITY),
            },
            VolumeMeasure::Power { lo, hi, .. } => (lo, hi),
        }
    }

    /// `∫_(l,h] v^p μ(dv)`.
    pub(crate) fn moment(&self, p: f64, l: f64, h: f64) -> Result<f64> {
        match *self {
            VolumeMeasure::Law { lambda, rho, law } => Ok(lambda * law.partial_moment_scaled(rho, p, l, h)?),
            VolumeMeasure::Power { scale, gamma, lo, hi } => {
                let a = l.max(lo);
                let b = h.min(hi);
                if !(b > a) {
                    return Ok(0.0);
                }
                if b.is_infinite() && p >= gamma {
                    return Err(Error::DivergentMoment { order: p });
                }
                if a == 0.0 && p <= gamma {
                    return Err(Error::DivergentMoment { order: p });
                }
                Ok(scale * power_integral(p - gamma, a, b))
            }
        }
    }

    /// Power-law density `κ' v^{−γ−1}` on the continuous part, if any.
    fn power_density(&self) -> Option<(f64, f64)> {
        match *self {
            VolumeMeasure::Law { lambda, rho, law } => match law.kind {
                VolumeKind::Pareto { gamma, v_min } => Some((lambda * gamma * (rho * v_min).powf(gamma), gamma)),
                _ => None,
            },
            VolumeMeasure::Power { scale, gamma, .. } => Some((scale, gamma)),
        }
    }

    fn density(&self, v: f64) -> f64 {
        match *self {
            VolumeMeasure::Law { lambda, rho, law } => lambda * law.density(v / rho) / rho,
            VolumeMeasure::Power { scale, gamma, lo, hi } => {
                if v > lo && v <= hi {
                    scale * v.powf(-gamma - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ f(v) μ(dv)` where `f` is smooth between `breaks` and affine with slope
    /// `slope` beyond `span`. For power-law measures `f(v)/v²` must stay bounded at 0.
    pub(crate) fn integrate<T, F>(&self, mut f: F, breaks: &[f64], span: f64, slope: T, tol: Tolerance) -> Result<T>
    where
        T: QuadValue,
        F: FnMut(f64) -> T,
    {
        let (lower, upper) = self.support();
        let s0 = span.max(lower);
        let tail = if upper > span {
            let at = f(s0);
            vec![(at - slope * s0, 0.0), (slope, 1.0)]
        } else {
            vec![]
        };
        self.integrate_with_tail(f, breaks, span, &tail, tol)
    }

    /// `∫ f(v) μ(dv)` where `f` is smooth between `breaks` and equals
    /// `Σ c_k v^{p_k}` (the `tail` terms) beyond `span`.
    pub(crate) fn integrate_with_tail<T, F>(
        &self,
        mut f: F,
        breaks: &[f64],
        span: f64,
        tail: &[(T, f64)],
        tol: Tolerance,
    ) -> Result<T>
    where
        T: QuadValue,
        F: FnMut(f64) -> T,
    {
        let (lower, upper) = self.support();
        if let VolumeMeasure::Law {
            lambda,
            rho,
            law:
                VolumeLaw {
                    kind: VolumeKind::Deterministic { value },
                    ..
                },
        } = *self
        {
            return Ok(f(rho * value) * lambda);
        }
        let mut total = T::zero();
        let top = upper.min(span.max(lower));
        if top > lower {
            let mut pts: Vec<f64> = vec![lower];
            pts.extend(breaks.iter().copied().filter(|&b| b > lower && b < top));
            pts.push(top);
            if let Some((k, gamma)) = self.power_density() {
                let q = 1.0 / (2.0 - gamma);
                let wpts: Vec<f64> = pts.iter().map(|v| v.powf(1.0 / q)).collect();
                let est = integrate_pieces(
                    |w: f64| {
                        let v = w.powf(q);
                        if v <= 0.0 {
                            return T::zero();
                        }
                        f(v) * (k * q / (v * v))
                    },
                    &wpts,
                    tol,
                )?;
                total = total + est.value;
            } else {
                let est = integrate_pieces(|v: f64| f(v) * self.density(v), &pts, tol)?;
                total = total + est.value;
            }
        }
        if upper > span {
            let s0 = span.max(lower);
            for &(c, p) in tail {
                let m = self.moment(p, s0, upper)?;
                total = total + c * m;
            }
        }
        Ok(total)
    }
}

/// Span `max − min` of the union of the supports.
pub(crate) fn span(ends: &[f64]) -> f64 {
    match (ends.first(), ends.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    }
}

/// `∫∫ φ(x+vC) ψ(x+vC) dx μ(dv)` in `d = 1`.
pub(crate) fn covariance_1d(mu: &VolumeMeasure, phi: &TestMeasure, psi_m: &TestMeasure, tol: Tolerance) -> Result<f64> {
    let ends = endpoints(&[phi, psi_m])?;
    if ends.is_empty() {
        return Ok(0.0);
    }
    let breaks = volume_breaks(&ends);
    let sp = span(&ends);
    let slope = phi.total_mass() * psi_m.total_mass();
    mu.integrate(
        |v| Profiles::new(&[phi, psi_m], &ends, v).product(0, 1),
        &breaks,
        sp,
        slope,
        tol,
    )
}

/// `∫∫ Ψ(c·φ(x+vC)) dx μ(dv)` in `d = 1`.
pub(crate) fn psi_exponent_1d(mu: &VolumeMeasure, phi: &TestMeasure, c: f64, tol: Tolerance) -> Result<Complex64> {
    let ends = endpoints(&[phi])?;
    if ends.is_empty() || c == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let breaks = volume_breaks(&ends);
    let sp = span(&ends);
    let slope = psi(c * phi.total_mass());
    let gl = gauss_legendre(8);
    mu.integrate(
        |v| Profiles::new(&[phi], &ends, v).psi_integral(0, c, &gl),
        &breaks,
        sp,
        slope,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{measure_of_grain, Grain, GrainShape};

    #[test]
    fn profile_matches_direct_overlaps() {
        let phi = TestMeasure::interval(0.0, 1.0)
            .unwrap()
            .minus(&TestMeasure::interval(0.5, 2.5).unwrap().scaled(0.7))
            .unwrap();
        let ends = endpoints(&[&phi]).unwrap();
        for &v in &[1e-9, 0.3, 1.0, 2.2, 7.0] {
            let p = Profiles::new(&[&phi], &ends, v);
            let mut pts: Vec<f64> = ends.iter().flat_map(|e| [e - 0.5 * v, e + 0.5 * v]).collect();
            pts.sort_by(f64::total_cmp);
            let direct = integrate_pieces(
                |x: f64| {
                    let g = Grain::new(GrainShape::interval(), [x, 0.0, 0.0], v, 0.0);
                    measure_of_grain(&phi, &g).unwrap().powi(2)
                },
                &pts,
                Tolerance::new(1e-14, 1e-12).with_max_intervals(10_000),
            )
            .unwrap()
            .value;
            let exact = p.product(0, 0);
            assert!((exact - direct).abs() <= 1e-9 * direct.abs().max(1e-300) + 1e-24, "v={v}: {exact} vs {direct}");
        }
    }

    #[test]
    fn tiny_grains_keep_relative_precision() {
        let phi = TestMeasure::interval(1e3, 1e3 + 1.0).unwrap();
        let ends = endpoints(&[&phi]).unwrap();
        let v = 1e-12;
        let p = Profiles::new(&[&phi], &ends, v);
        // ∫ |A ∩ (x + vC)|² dx = v² |A| − v³/3 for v ≤ |A|
        let exact = v * v - v * v * v / 3.0;
        assert!((p.product(0, 0) / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_variance() {
        let law = VolumeLaw::deterministic(1.0).unwrap();
        let mu = VolumeMeasure::Law { lambda: 2.0, rho: 1.0, law };
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let c = covariance_1d(&mu, &phi, &phi, Tolerance::default()).unwrap();
        assert!((c - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn levy_small_jump_variance() {
        // ∫_0^δ (v² − v³/3) v^{-2.5} dv = 2√δ − (2/9) δ^{3/2}
        let delta = 0.25;
        let mu = VolumeMeasure::Power {
            scale: 1.0,
            gamma: 1.5,
            lo: 0.0,
            hi: delta,
        };
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let c = covariance_1d(&mu, &phi, &phi, Tolerance::new(1e-14, 1e-12)).unwrap();
        let exact = 2.0 * delta.sqrt() - 2.0 / 9.0 * delta.powf(1.5);
        assert!((c - exact).abs() < 1e-12, "{c} vs {exact}");
        assert!((exact - 0.972_222).abs() < 1e-6);
    }
}
