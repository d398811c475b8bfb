//! Cross-correlation integrals of planar test measures.
//!
//! Every second-order quantity in two dimensions reduces to an integral of the
//! cross-correlation
//!
//! `g(z) = ∫ φ(x) ψ(x + z) dx = Σ_ij w_i w_j |A_i ∩ (B_j − z)|`
//!
//! against some kernel: the grain covariogram for pre-limit covariances and the
//! homogeneous kernels `|z|^{−e} A(θ)` for the limit covariances and Riesz
//! energies. `g` is piecewise smooth with kinks on lines aligned with the box
//! edges, which are handed to the adaptive integrators as breakpoints.

use std::cell::RefCell;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{ball_lens, isotropic_square_covariogram, region_overlap, GrainShape, Point, Region, ShapeKind, TestMeasure};
use crate::profile::VolumeMeasure;
use crate::quadrature::{integrate_pieces, Tolerance};

/// The cross-correlation `g` of two planar measures.
#[derive(Debug, Clone)]
pub(crate) struct Correlation {
    terms: Vec<(f64, Region, Region)>,
    breaks: [Vec<f64>; 2],
    lo: [f64; 2],
    hi: [f64; 2],
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Cuts of `[a, b]` at the given points.
fn pieces(a: f64, b: f64, cuts: &[f64]) -> Vec<f64> {
    let mut p = vec![a];
    p.extend(cuts.iter().copied().filter(|&c| c > a && c < b));
    p.push(b);
    sorted(p)
}

/// Run a nested integration whose inner integrals may fail.
pub(crate) struct Nested {
    failure: RefCell<Option<Error>>,
}

impl Nested {
    pub(crate) fn new() -> Self {
        Nested {
            failure: RefCell::new(None),
        }
    }

    fn inner<F: FnMut(f64) -> f64>(&self, f: F, pts: &[f64], tol: Tolerance) -> f64 {
        if self.failure.borrow().is_some() {
            return 0.0;
        }
        match integrate_pieces(f, pts, tol) {
            Ok(e) => e.value,
            Err(e) => {
                *self.failure.borrow_mut() = Some(e);
                0.0
            }
        }
    }

    /// Record the outcome of a fallible evaluation, returning zero on failure.
    pub(crate) fn value(&self, v: Result<f64>) -> f64 {
        match v {
            Ok(x) => x,
            Err(e) => {
                let mut slot = self.failure.borrow_mut();
                if slot.is_none() {
                    *slot = Some(e);
                }
                0.0
            }
        }
    }

    pub(crate) fn finish<T>(self, value: Result<T>) -> Result<T> {
        if let Some(e) = self.failure.into_inner() {
            return Err(e);
        }
        value
    }
}

impl Correlation {
    /// `None` when either measure has no atoms.
    pub(crate) fn new(phi: &TestMeasure, psi: &TestMeasure) -> Result<Option<Self>> {
        if phi.dim() != 2 || psi.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: if phi.dim() != 2 { phi.dim() } else { psi.dim() },
            });
        }
        let mut terms = Vec::new();
        let mut breaks = [Vec::new(), Vec::new()];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for a in phi.atoms() {
            for b in psi.atoms() {
                let w = a.weight * b.weight;
                if w == 0.0 {
                    continue;
                }
                terms.push((w, a.region, b.region));
                let (alo, ahi) = a.region.bbox(2);
                let (blo, bhi) = b.region.bbox(2);
                for k in 0..2 {
                    let cuts = [blo[k] - ahi[k], blo[k] - alo[k], bhi[k] - ahi[k], bhi[k] - alo[k]];
                    breaks[k].extend_from_slice(&cuts);
                    lo[k] = lo[k].min(cuts[0]);
                    hi[k] = hi[k].max(cuts[3]);
                }
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        let breaks = [sorted(breaks[0].clone()), sorted(breaks[1].clone())];
        Ok(Some(Correlation { terms, breaks, lo, hi }))
    }

    /// `g(z)`.
    pub(crate) fn value(&self, z: &Point) -> f64 {
        let shift = [-z[0], -z[1], 0.0];
        self.terms
            .iter()
            .map(|(w, a, b)| w * region_overlap(a, &b.translate(&shift), 2))
            .sum()
    }

    /// Largest `|z_k|` on the support of `g`.
    pub(crate) fn max_coordinate(&self) -> f64 {
        (0..2).map(|k| self.lo[k].abs().max(self.hi[k].abs())).fold(0.0, f64::max)
    }

    /// Largest `|z|` on the support of `g`.
    pub(crate) fn max_norm(&self) -> f64 {
        let x = self.lo[0].abs().max(self.hi[0].abs());
        let y = self.lo[1].abs().max(self.hi[1].abs());
        x.hypot(y)
    }

    /// Kink locations of `g` along axis `k`.
    pub(crate) fn breaks(&self, k: usize) -> &[f64] {
        &self.breaks[k]
    }

    /// `∫ g(z) kernel(z) dz` over the support of `g` clipped to `|z_k| ≤ reach`,
    /// with extra kinks of the kernel at `kernel_breaks` on both axes.
    pub(crate) fn integrate<K>(&self, kernel: K, reach: f64, kernel_breaks: &[f64], tol: Tolerance) -> Result<f64>
    where
        K: Fn(&Point) -> f64,
    {
        let x0 = self.lo[0].max(-reach);
        let x1 = self.hi[0].min(reach);
        let y0 = self.lo[1].max(-reach);
        let y1 = self.hi[1].min(reach);
        if !(x1 > x0 && y1 > y0) {
            return Ok(0.0);
        }
        let mut cx = self.breaks[0].clone();
        cx.extend_from_slice(kernel_breaks);
        let mut cy = self.breaks[1].clone();
        cy.extend_from_slice(kernel_breaks);
        let px = pieces(x0, x1, &cx);
        let py = pieces(y0, y1, &cy);
        let inner_tol = Tolerance::new(tol.abs / (x1 - x0) * 0.1, tol.rel * 0.1).with_max_intervals(tol.max_intervals);
        let nested = Nested::new();
        let outer = integrate_pieces(
            |x: f64| nested.inner(|y: f64| self.value(&[x, y, 0.0]) * kernel(&[x, y, 0.0]), &py, inner_tol),
            &px,
            tol,
        )
        .map(|e| e.value);
        nested.finish(outer)
    }

    /// `∫ g(z) |z|^{−e} A(θ) dz` for a homogeneous kernel with angular part `angular`,
    /// `0 ≤ e < 2`, in polar coordinates with the radial substitution `r = w^{1/(2−e)}`.
    /// `extra_angles` are kinks of `angular`.
    pub(crate) fn integrate_homogeneous<A>(&self, e: f64, angular: A, extra_angles: &[f64], tol: Tolerance) -> Result<f64>
    where
        A: Fn(f64) -> f64,
    {
        if !(0.0..2.0).contains(&e) {
            return Err(Error::param("exponent", e, "must lie in [0, 2)"));
        }
        let p = 2.0 - e;
        let r_max = self.max_norm() * (1.0 + 1e-12);
        // directions through the corners of the kink grid
        let mut angles = vec![0.0, 0.25 * TAU, 0.5 * TAU, 0.75 * TAU, TAU];
        angles.extend(extra_angles.iter().map(|a| a.rem_euclid(TAU)));
        for &x in &self.breaks[0] {
            for &y in &self.breaks[1] {
                if x != 0.0 || y != 0.0 {
                    angles.push(y.atan2(x).rem_euclid(TAU));
                }
            }
        }
        let angles = sorted(angles);
        let inner_tol = Tolerance::new(tol.abs / TAU * 0.1, tol.rel * 0.1).with_max_intervals(tol.max_intervals);
        let nested = Nested::new();
        let outer = integrate_pieces(
            |t: f64| {
                let (s, c) = t.sin_cos();
                // radii where the ray crosses a kink line
                let mut cuts: Vec<f64> = Vec::new();
                for (k, dir) in [c, s].into_iter().enumerate() {
                    if dir.abs() > 1e-300 {
                        cuts.extend(self.breaks[k].iter().map(|b| b / dir).filter(|&r| r > 0.0 && r < r_max));
                    }
                }
                let wpts: Vec<f64> = pieces(0.0, r_max, &cuts).iter().map(|r| r.powf(p)).collect();
                let radial = nested.inner(
                    |w: f64| {
                        let r = w.powf(1.0 / p);
                        self.value(&[r * c, r * s, 0.0])
                    },
                    &wpts,
                    inner_tol,
                );
                angular(t) * radial / p
            },
            &angles,
            tol,
        )
        .map(|e| e.value);
        nested.finish(outer)
    }
}

/// The grain covariogram kernel `z ↦ E_θ |G ∩ (G + z)|` of a grain of volume `v`.
#[derive(Debug, Clone, Copy)]
enum GrainKernel {
    /// Axis-aligned square: `(s − |z₁|)₊ (s − |z₂|)₊`.
    Square,
    /// Square averaged over uniform rotations: `s² k(|z|/s)`.
    RotatedSquare,
    /// Disc of radius `r₁ s`.
    Disc,
}

/// `∫∫ φ(x + v^{1/2}θC) ψ(x + v^{1/2}θC) dx μ(dv)` (averaged over `θ` if `rotated`) in `d = 2`.
///
/// The inner integral is `h(v) = ∫ g(z) L_v(z) dz` with `g` the cross-correlation
/// of `φ, ψ` and `L_v` the grain covariogram. Once the grain is large compared with
/// the support of `g`, `h` is an explicit combination of powers of `v` (exact for
/// squares, an expansion with relative error below `10⁻⁹` for discs), so the tail
/// of the volume integral reduces to moments of `μ`.
pub(crate) fn grain_covariance_2d(
    mu: &VolumeMeasure,
    shape: GrainShape,
    rotated: bool,
    phi: &TestMeasure,
    psi: &TestMeasure,
    tol: Tolerance,
) -> Result<f64> {
    let Some(g) = Correlation::new(phi, psi)? else {
        return Ok(0.0);
    };
    let kernel = match (shape.kind, rotated) {
        (ShapeKind::Ball, _) => GrainKernel::Disc,
        (_, true) => GrainKernel::RotatedSquare,
        _ => GrainKernel::Square,
    };
    let r1 = GrainShape::ball_radius(2);
    let u_inf = g.max_coordinate();
    let u = g.max_norm();
    let itol = Tolerance::new(tol.abs * 1e-3, (tol.rel * 1e-2).max(1e-11)).with_max_intervals(tol.max_intervals);
    let h = |v: f64| -> Result<f64> {
        let s = v.sqrt();
        match kernel {
            GrainKernel::Square => g.integrate(
                |z| (s - z[0].abs()).max(0.0) * (s - z[1].abs()).max(0.0),
                s,
                &[-s, 0.0, s],
                itol,
            ),
            GrainKernel::RotatedSquare => g.integrate(
                |z| v * isotropic_square_covariogram(z[0].hypot(z[1]) / s),
                s * 2f64.sqrt(),
                &[0.0],
                itol,
            ),
            GrainKernel::Disc => {
                let r = r1 * s;
                g.integrate(|z| ball_lens(r, r, z[0].hypot(z[1]), 2), 2.0 * r, &[0.0], itol)
            }
        }
    };
    let mass = phi.total_mass() * psi.total_mass();
    let m = |f: &dyn Fn(&Point) -> f64| g.integrate(f, f64::INFINITY, &[0.0], itol);
    let (v_star, tail): (f64, Vec<(f64, f64)>) = match kernel {
        GrainKernel::Square => {
            let m1 = m(&|z| z[0].abs() + z[1].abs())?;
            let m2 = m(&|z| (z[0] * z[1]).abs())?;
            (u_inf * u_inf, vec![(mass, 1.0), (-m1, 0.5), (m2, 0.0)])
        }
        GrainKernel::RotatedSquare => {
            let m1 = m(&|z| z[0].hypot(z[1]))?;
            let m2 = m(&|z| z[0] * z[0] + z[1] * z[1])?;
            (
                u * u,
                vec![(mass, 1.0), (-4.0 / std::f64::consts::PI * m1, 0.5), (m2 / std::f64::consts::PI, 0.0)],
            )
        }
        GrainKernel::Disc => {
            // lens(r, r, u) = πr² − 2ru + u³/(12r) + u⁵/(320r³) + O(u⁷/r⁵), r = r₁√v ≥ 10u
            let m1 = m(&|z| z[0].hypot(z[1]))?;
            let m3 = m(&|z| z[0].hypot(z[1]).powi(3))?;
            let m5 = m(&|z| z[0].hypot(z[1]).powi(5))?;
            let rs = 10.0 * u / r1;
            (
                rs * rs,
                vec![
                    (mass, 1.0),
                    (-2.0 * r1 * m1, 0.5),
                    (m3 / (12.0 * r1), -0.5),
                    (m5 / (320.0 * r1.powi(3)), -1.5),
                ],
            )
        }
    };
    // kinks of h: where the grain side matches a kink of g, plus a geometric grid
    let mut breaks: Vec<f64> = (0..2).flat_map(|k| g.breaks(k).iter().map(|c| c * c)).collect();
    breaks.extend((1..=16).map(|k| v_star * 0.5f64.powi(k)));
    let breaks = sorted(breaks);
    let nested = Nested::new();
    let value = mu.integrate_with_tail(|v| nested.value(h(v)), &breaks, v_star, &tail, tol);
    nested.finish(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_integral_is_product_of_masses() {
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let psi = TestMeasure::ball(&[0.5, 3.0], 0.7)
            .unwrap()
            .plus(&TestMeasure::boxed(&[-1.0, 0.0], &[0.0, 1.0]).unwrap().scaled(-2.0))
            .unwrap();
        let g = Correlation::new(&phi, &psi).unwrap().unwrap();
        let tol = Tolerance::new(1e-10, 1e-8);
        let total = g.integrate(|_| 1.0, f64::INFINITY, &[], tol).unwrap();
        let exact = phi.total_mass() * psi.total_mass();
        assert!((total - exact).abs() < 1e-6 * exact.abs().max(1.0), "{total} vs {exact}");
        let polar = g.integrate_homogeneous(0.0, |_| 1.0, &[], tol).unwrap();
        assert!((polar - exact).abs() < 1e-6 * exact.abs().max(1.0), "{polar} vs {exact}");
    }

    #[test]
    fn unit_square_energy() {
        // ∫∫_{[0,1]²×[0,1]²} |x − y|^{−1} dx dy = 4(ln(1+√2) − (√2−1)/3)
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let g = Correlation::new(&phi, &phi).unwrap().unwrap();
        let v = g.integrate_homogeneous(1.0, |_| 1.0, &[], Tolerance::new(1e-12, 1e-10)).unwrap();
        let exact = 4.0 * ((1.0 + 2f64.sqrt()).ln() - (2f64.sqrt() - 1.0) / 3.0);
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }
}
