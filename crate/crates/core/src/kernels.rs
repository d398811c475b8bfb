//! Second-order structure of the limit fields.
//!
//! The covariance kernel of the Gaussian large-grain limit is
//!
//! `K(x) = ∫_0^∞ |(v^{−1/d}x + C) ∩ C| v^{−γ} dv = |x|^{−e} A(x/|x|)`,  `e = (γ−1)d`,
//!
//! with angular factor `A(θ) = d ∫_0^∞ L_C(uθ) u^{e−1} du` and `L_C` the covariogram
//! of the unit-volume grain `C`. `A` is explicit for intervals and axis-aligned
//! cubes, and a one-dimensional quadrature for balls and rotation-averaged squares.
//!
//! Limit covariances `∫∫ φ(dx) K(x − y) ψ(dy)` and Riesz inner products
//! `c_{α,d} ∫∫ φ(dx) ψ(dy) |x − y|^{−(1−α)d}` are closed forms in `d = 1` and polar
//! integrals of the cross-correlation of `φ, ψ` in `d = 2`. The grain-overlap form
//! `∫∫ φ(x + v^{1/d}C) ψ(x + v^{1/d}C) dx v^{−γ−1} dv` of the same covariance is
//! computed independently for cross-validation.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_lens, Atom, GrainShape, ShapeKind, TestMeasure};
use crate::heavytail::c_alpha_d;
use crate::planar::{grain_covariance_2d, Correlation};
use crate::profile::{covariance_1d, VolumeMeasure};
use crate::quadrature::{gauss_legendre, integrate_pieces, Tolerance};

/// Number of Gauss–Legendre panels on `[0, π/4]` for rotation averages.
pub const ROTATION_PANELS: usize = 8;
/// Default nodes per panel for rotation averages.
pub const ROTATION_NODES: usize = 8;

/// Kernel of the Gaussian large-grain limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub gamma: f64,
    pub shape: GrainShape,
    /// Average the grain over uniform rotations (`d ≤ 2`).
    pub rotated: bool,
}

impl KernelSpec {
    pub fn new(gamma: f64, shape: GrainShape, rotated: bool) -> Result<Self> {
        if !(gamma > 1.0 && gamma < 2.0) {
            return Err(Error::param("gamma", gamma, "tail index must lie in (1, 2)"));
        }
        if rotated && shape.d > 2 {
            return Err(Error::UnsupportedDimension {
                what: "rotation-averaged kernel",
                d: shape.d,
            });
        }
        Ok(KernelSpec { gamma, shape, rotated })
    }

    pub fn dim(&self) -> usize {
        self.shape.d
    }

    /// Homogeneity exponent `e = (γ−1)d ∈ (0, d)`.
    pub fn exponent(&self) -> f64 {
        (self.gamma - 1.0) * self.dim() as f64
    }

    /// Hurst index `H = (3 − γ)/2`.
    pub fn hurst(&self) -> f64 {
        (3.0 - self.gamma) / 2.0
    }

    fn rotation_invariant(&self) -> bool {
        self.dim() == 1 || self.shape.kind == ShapeKind::Ball
    }
}

fn kernel_tol() -> Tolerance {
    Tolerance::new(1e-15, 1e-13)
}

/// `d Σ_k (−1)^k e_k(a) m^{−(k+e)}/(k+e)` for the axis-aligned cube, `a = |θ_i|`, `m = max a_i`.
fn cube_angular(theta: &[f64], e: f64) -> f64 {
    let d = theta.len();
    let a: Vec<f64> = theta.iter().map(|t| t.abs()).collect();
    let m = a.iter().cloned().fold(0.0, f64::max);
    // elementary symmetric polynomials of a
    let mut es = vec![1.0];
    for &x in &a {
        let mut next = vec![0.0; es.len() + 1];
        for (k, c) in es.iter().enumerate() {
            next[k] += c;
            next[k + 1] += c * x;
        }
        es = next;
    }
    d as f64
        * es.iter()
            .enumerate()
            .map(|(k, c)| {
                let p = k as f64 + e;
                (if k % 2 == 0 { 1.0 } else { -1.0 }) * c * m.powf(-p) / p
            })
            .sum::<f64>()
}

/// `d ∫_0^{2r} L(u) u^{e−1} du` with the substitution `u = w^{1/e}`.
fn radial_angular<L: Fn(f64) -> f64>(cov: L, reach: f64, kinks: &[f64], d: usize, e: f64) -> Result<f64> {
    let mut pts = vec![0.0];
    pts.extend(kinks.iter().filter(|&&k| k > 0.0 && k < reach).map(|k| k.powf(e)));
    pts.push(reach.powf(e));
    let est = integrate_pieces(|w: f64| cov(w.powf(1.0 / e)), &pts, kernel_tol())?;
    Ok(d as f64 / e * est.value)
}

/// The axis-aligned cube factor averaged over rotations, by composite Gauss–Legendre
/// on the octant `[0, π/4]` (the cube factor is smooth there).
fn rotated_cube_angular(e: f64, nodes: usize) -> f64 {
    let (x, w) = gauss_legendre(nodes);
    let h = FRAC_PI_4 / ROTATION_PANELS as f64;
    let mut sum = 0.0;
    for p in 0..ROTATION_PANELS {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            let t = a + 0.5 * h * (xi + 1.0);
            sum += 0.5 * h * wi * cube_angular(&[t.cos(), t.sin()], e);
        }
    }
    sum / FRAC_PI_4
}

fn angular_with_nodes(spec: &KernelSpec, theta: &[f64], nodes: usize) -> Result<f64> {
    let d = spec.dim();
    let e = spec.exponent();
    match spec.shape.kind {
        ShapeKind::Interval => Ok(1.0 / (spec.gamma * (spec.gamma - 1.0))),
        _ if d == 1 => Ok(1.0 / (spec.gamma * (spec.gamma - 1.0))),
        ShapeKind::Ball => {
            let r = GrainShape::ball_radius(d);
            radial_angular(|u| ball_lens(r, r, u, d), 2.0 * r, &[], d, e)
        }
        ShapeKind::Cube if spec.rotated => Ok(rotated_cube_angular(e, nodes)),
        ShapeKind::Cube => Ok(cube_angular(theta, e)),
    }
}

/// Angular factor `A(θ)` of the kernel, `θ` a unit vector of `R^d`.
pub fn kernel_angular(spec: &KernelSpec, theta: &[f64]) -> Result<f64> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: theta.len(),
        });
    }
    angular_with_nodes(spec, theta, ROTATION_NODES)
}

/// `K_{γ,C}(x)`; `x = 0` is a singularity and an error.
pub fn kernel_k(spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x.len(),
        });
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Singularity);
    }
    let theta: Vec<f64> = x.iter().map(|v| v / norm).collect();
    Ok(norm.powf(-spec.exponent()) * kernel_angular(spec, &theta)?)
}

/// `G(z) = |z|^{2−β}/((1−β)(2−β))`, a second antiderivative of `|z|^{−β}`.
fn second_antiderivative(z: f64, beta: f64) -> f64 {
    z.abs().powf(2.0 - beta) / ((1.0 - beta) * (2.0 - beta))
}

/// `∫∫ φ(dx) ψ(dy) |x − y|^{−β}` in `d = 1`, `0 < β < 1`, exactly.
fn energy_1d(phi: &TestMeasure, psi: &TestMeasure, beta: f64) -> f64 {
    let g = |z: f64| second_antiderivative(z, beta);
    let mut total = 0.0;
    for a in phi.atoms() {
        let (alo, ahi) = a.region.bbox(1);
        for b in psi.atoms() {
            let (blo, bhi) = b.region.bbox(1);
            let (a0, a1, b0, b1) = (alo[0], ahi[0], blo[0], bhi[0]);
            total += a.weight * b.weight * (g(a1 - b0) + g(a0 - b1) - g(a0 - b0) - g(a1 - b1));
        }
    }
    total
}

fn same_dim(phi: &TestMeasure, psi: &TestMeasure) -> Result<usize> {
    if phi.dim() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: psi.dim(),
        });
    }
    Ok(phi.dim())
}

/// `∫∫ φ(dx) ψ(dy) |x − y|^{−β}` (`d ≤ 2`), without the Riesz constant.
pub fn riesz_energy(phi: &TestMeasure, psi: &TestMeasure, beta: f64, tol: Tolerance) -> Result<f64> {
    match same_dim(phi, psi)? {
        1 => Ok(energy_1d(phi, psi, beta)),
        2 => match Correlation::new(phi, psi)? {
            Some(g) => g.integrate_homogeneous(beta, |_| 1.0, &[], tol),
            None => Ok(0.0),
        },
        d => Err(Error::UnsupportedDimension { what: "Riesz energy", d }),
    }
}

/// Riesz inner product `⟨φ, ψ⟩_α = c_{α,d} ∫∫ φ(dx) ψ(dy) |x − y|^{−(1−α)d}`.
pub fn riesz_inner(phi: &TestMeasure, psi: &TestMeasure, alpha: f64, tol: Tolerance) -> Result<f64> {
    let d = same_dim(phi, psi)?;
    let c = c_alpha_d(alpha, d)?;
    Ok(c * riesz_energy(phi, psi, (1.0 - alpha) * d as f64, tol)?)
}

/// Default tolerance for limit covariances.
pub fn default_tolerance(d: usize) -> Tolerance {
    if d == 1 {
        Tolerance::new(1e-14, 1e-11)
    } else {
        Tolerance::new(1e-11, 1e-8)
    }
}

/// `∫∫ φ(dx) K_{γ,C}(x − y) ψ(dy)` from the kernel.
pub fn cov_limit(spec: &KernelSpec, phi: &TestMeasure, psi: &TestMeasure, tol: Tolerance) -> Result<f64> {
    let d = same_dim(phi, psi)?;
    if d != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: d,
        });
    }
    let e = spec.exponent();
    match d {
        1 => Ok(energy_1d(phi, psi, e) / (spec.gamma * (spec.gamma - 1.0))),
        2 => {
            let Some(g) = Correlation::new(phi, psi)? else {
                return Ok(0.0);
            };
            if spec.rotation_invariant() || spec.rotated {
                let a = kernel_angular(spec, &[1.0, 0.0])?;
                Ok(a * g.integrate_homogeneous(e, |_| 1.0, &[], tol)?)
            } else {
                let diagonals = [FRAC_PI_4, 3.0 * FRAC_PI_4, 5.0 * FRAC_PI_4, 7.0 * FRAC_PI_4];
                g.integrate_homogeneous(e, |t| cube_angular(&[t.cos(), t.sin()], e), &diagonals, tol)
            }
        }
        d => Err(Error::UnsupportedDimension { what: "cov_limit", d }),
    }
}

/// The same covariance in grain-overlap form,
/// `∫∫ φ(x + v^{1/d}θC) ψ(x + v^{1/d}θC) dx v^{−γ−1} dv` (averaged over `θ` if rotated).
pub fn cov_limit_overlap_form(spec: &KernelSpec, phi: &TestMeasure, psi: &TestMeasure, tol: Tolerance) -> Result<f64> {
    let mu = VolumeMeasure::Power {
        scale: 1.0,
        gamma: spec.gamma,
        lo: 0.0,
        hi: f64::INFINITY,
    };
    compensated_covariance(&mu, spec.shape, spec.rotated, phi, psi, tol)
}

/// `∫∫ φ(x + v^{1/d}θC) ψ(x + v^{1/d}θC) dx μ(dv)` for a volume measure `μ`.
pub(crate) fn compensated_covariance(
    mu: &VolumeMeasure,
    shape: GrainShape,
    rotated: bool,
    phi: &TestMeasure,
    psi: &TestMeasure,
    tol: Tolerance,
) -> Result<f64> {
    match same_dim(phi, psi)? {
        1 => covariance_1d(mu, phi, psi, tol),
        2 => grain_covariance_2d(mu, shape, rotated, phi, psi, tol),
        d => Err(Error::UnsupportedDimension { what: "overlap-form covariance", d }),
    }
}

/// Constant `c` with `W_{γ,θC} = c W_H`, `H = (3−γ)/2`: the rotation-averaged kernel
/// equals `K̄(e₁) |x|^{−(γ−1)d}` and `⟨φ, ψ⟩_{2H−1}` carries the factor `c_{2H−1,d}`, so
/// `c = (K̄(e₁) / c_{2H−1,d})^{1/2}`.
pub fn theorem3_constant(gamma: f64, shape: GrainShape) -> Result<f64> {
    theorem3_constant_with_nodes(gamma, shape, ROTATION_NODES)
}

/// [`theorem3_constant`] with `nodes` Gauss–Legendre nodes per rotation panel.
pub fn theorem3_constant_with_nodes(gamma: f64, shape: GrainShape, nodes: usize) -> Result<f64> {
    let d = shape.d;
    if d > 2 {
        return Err(Error::UnsupportedDimension {
            what: "rotation-averaged constant",
            d,
        });
    }
    let spec = KernelSpec::new(gamma, shape, true)?;
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let kbar = angular_with_nodes(&spec, &e1, nodes)?;
    let alpha = 2.0 - gamma;
    Ok((kbar / c_alpha_d(alpha, d)?).sqrt())
}

/// `Cov(W(B₁), W(B_r ∖ B₁))` along an increasing grid of radii `r > 1`.
pub fn lrd_limit_divergence(spec: &KernelSpec, r_grid: &[f64], tol: Tolerance) -> Result<Vec<f64>> {
    if r_grid.iter().any(|&r| !(r > 1.0)) || r_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("radii must be increasing and greater than 1".into()));
    }
    let d = spec.dim();
    let ball = TestMeasure::centered_ball(d, 1.0)?;
    r_grid
        .iter()
        .map(|&r| {
            let annulus = TestMeasure::centered_ball(d, r)?.minus(&ball)?;
            cov_limit(spec, &ball, &annulus, tol)
        })
        .collect()
}

/// Constant of the quadratic-overlap bound `∫ φ(x + v^{1/d}C)² dx ≤ c·min(v, v^{2−α})`:
/// `c = max(‖φ‖₁², 2^{(1−α)d} R^{(1−α)d} E_α(|φ|))`, with `R` the circumradius of `C`
/// and `E_α(|φ|) = ∫∫ |φ|(dx)|φ|(dy)|x − y|^{−(1−α)d}` (atoms taken with `|w_i|`).
pub fn overlap_bound_constant(shape: GrainShape, phi: &TestMeasure, alpha: f64, tol: Tolerance) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", alpha, "must lie in (0, 1)"));
    }
    let d = phi.dim() as f64;
    let abs = TestMeasure::new(
        phi.dim(),
        phi.atoms()
            .iter()
            .map(|a| Atom {
                weight: a.weight.abs(),
                region: a.region,
            })
            .collect(),
    )?;
    let beta = (1.0 - alpha) * d;
    let energy = riesz_energy(&abs, &abs, beta, tol)?;
    let l1 = phi.atom_variation();
    Ok((l1 * l1).max((2.0 * shape.circumradius()).powf(beta) * energy))
}

/// CSV table `x,K` of the kernel along the first axis.
pub fn kernel_table_csv(spec: &KernelSpec, xs: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "K"])?;
    for &x in xs {
        let mut p = vec![0.0; spec.dim()];
        p[0] = x;
        w.write_record([format!("{x}"), format!("{}", kernel_k(spec, &p)?)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// CSV table `i,j,cov` of a matrix.
pub fn gram_table_csv(gram: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["i", "j", "cov"])?;
    for (i, row) in gram.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string(), format!("{v}")])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dilate, isotropic_square_covariogram};
    use crate::grain_model::quadratic_overlap;
    use crate::quadrature::{integrate, integrate_to_infinity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle_tol() -> Tolerance {
        Tolerance::new(1e-13, 1e-11)
    }

    fn interval_spec(gamma: f64) -> KernelSpec {
        KernelSpec::new(gamma, GrainShape::interval(), false).unwrap()
    }

    /// `∫ |(v^{−1/d}x + C) ∩ C| v^{−γ} dv` with the overlap as a function of `u = v^{−1/d}`.
    fn kernel_by_volume<F: Fn(f64) -> f64>(overlap: F, gamma: f64, d: usize, v0: f64) -> f64 {
        let dd = d as f64;
        integrate_to_infinity(|v: f64| overlap(v.powf(-1.0 / dd)) * v.powf(-gamma), v0, oracle_tol())
            .unwrap()
            .value
    }

    #[test]
    fn interval_kernel_at_one() {
        let spec = interval_spec(1.5);
        let k = kernel_k(&spec, &[1.0]).unwrap();
        assert!((k - 4.0 / 3.0).abs() < 1e-12);
        let oracle = kernel_by_volume(|u| (1.0 - u).max(0.0), 1.5, 1, 1.0);
        assert!((k - oracle).abs() < 1e-8, "{k} vs {oracle}");
        assert!(matches!(kernel_k(&spec, &[0.0]), Err(Error::Singularity)));
    }

    #[test]
    fn planar_kernels_match_the_volume_integral() {
        let gamma = 1.4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let cube = KernelSpec::new(gamma, GrainShape::cube(2).unwrap(), false).unwrap();
            let oracle = kernel_by_volume(
                |u| (1.0 - u * x[0].abs()).max(0.0) * (1.0 - u * x[1].abs()).max(0.0),
                gamma,
                2,
                x[0].abs().max(x[1].abs()).powi(2),
            );
            let k = kernel_k(&cube, &x).unwrap();
            assert!((k - oracle).abs() < 1e-8 * oracle, "cube {k} vs {oracle}");

            let ball = KernelSpec::new(gamma, GrainShape::ball(2).unwrap(), false).unwrap();
            let r = GrainShape::ball_radius(2);
            let oracle = kernel_by_volume(|u| ball_lens(r, r, u * n, 2), gamma, 2, (n / (2.0 * r)).powi(2));
            let k = kernel_k(&ball, &x).unwrap();
            assert!((k - oracle).abs() < 1e-8 * oracle, "ball {k} vs {oracle}");
            let k_axis = kernel_k(&ball, &[n, 0.0]).unwrap();
            assert!((k - k_axis).abs() < 1e-12 * k);
        }
    }

    #[test]
    fn rotated_square_factor_matches_isotropic_covariogram() {
        for gamma in [1.2, 1.5, 1.8] {
            let spec = KernelSpec::new(gamma, GrainShape::cube(2).unwrap(), true).unwrap();
            let e = spec.exponent();
            let a = kernel_angular(&spec, &[0.0, 1.0]).unwrap();
            let pts = [0.0, 1.0, 2f64.sqrt()];
            let oracle = 2.0
                * integrate_pieces(|u: f64| isotropic_square_covariogram(u) * u.powf(e - 1.0), &pts, oracle_tol())
                    .unwrap()
                    .value;
            assert!((a - oracle).abs() < 1e-9 * oracle, "γ={gamma}: {a} vs {oracle}");
        }
    }

    #[test]
    fn kernel_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let specs = [
            interval_spec(1.3),
            KernelSpec::new(1.6, GrainShape::cube(2).unwrap(), false).unwrap(),
            KernelSpec::new(1.6, GrainShape::ball(2).unwrap(), false).unwrap(),
        ];
        for spec in &specs {
            for _ in 0..20 {
                let x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let k = kernel_k(spec, &x).unwrap();
                for a in [0.5, 2.0, 10.0] {
                    let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
                    let ka = kernel_k(spec, &ax).unwrap();
                    assert!((ka - a.powf(-spec.exponent()) * k).abs() < 1e-10 * k);
                }
            }
        }
    }

    #[test]
    fn riesz_examples() {
        let unit = TestMeasure::interval(0.0, 1.0).unwrap();
        let e = riesz_inner(&unit, &unit, 0.5, oracle_tol()).unwrap();
        assert!((e - 8.0 / 3.0).abs() < 1e-12);
        let next = TestMeasure::interval(1.0, 2.0).unwrap();
        let x = riesz_inner(&unit, &next, 0.3, oracle_tol()).unwrap();
        assert_eq!(x, riesz_inner(&next, &unit, 0.3, oracle_tol()).unwrap());
        // inner integral in closed form, outer by quadrature
        let b = 0.7;
        let oracle = integrate(
            |s: f64| ((2.0 - s).powf(1.0 - b) - (1.0 - s).powf(1.0 - b)) / (1.0 - b),
            0.0,
            1.0,
            oracle_tol(),
        )
        .unwrap()
        .value
            * c_alpha_d(0.3, 1).unwrap();
        assert!((x - oracle).abs() < 1e-9, "{x} vs {oracle}");
    }

    #[test]
    fn riesz_is_an_inner_product_in_the_plane() {
        let tol = Tolerance::new(1e-11, 1e-9);
        let a = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let b = TestMeasure::ball(&[1.5, 0.5], 0.6).unwrap();
        let c = TestMeasure::boxed(&[-1.0, 0.0], &[0.0, 2.0]).unwrap().minus(&b).unwrap();
        let ms = [a, b, c];
        for alpha in [0.1, 0.25, 0.5, 0.9] {
            let g: Vec<Vec<f64>> = ms
                .iter()
                .map(|p| ms.iter().map(|q| riesz_inner(p, q, alpha, tol).unwrap()).collect())
                .collect();
            for i in 0..3 {
                assert!(g[i][i].is_finite() && g[i][i] > 0.0);
                for j in 0..3 {
                    assert!((g[i][j] - g[j][i]).abs() < 1e-8 * g[i][i].max(g[j][j]));
                    assert!(g[i][j].powi(2) <= g[i][i] * g[j][j] * (1.0 + 1e-8));
                }
            }
            assert!(crate::stats::cholesky(&g).unwrap().1 == 0.0);
        }
    }

    #[test]
    fn limit_covariance_examples() {
        let spec = interval_spec(1.5);
        let tol = default_tolerance(1);
        let unit = TestMeasure::interval(0.0, 1.0).unwrap();
        let next = TestMeasure::interval(1.0, 2.0).unwrap();
        let v = cov_limit(&spec, &unit, &unit, tol).unwrap();
        assert!((v - 32.0 / 9.0).abs() < 1e-12);
        let c = cov_limit(&spec, &unit, &next, tol).unwrap();
        // (4/3)·(4/3)(2^{3/2} − 2)
        let closed = 16.0 / 9.0 * (2f64.powf(1.5) - 2.0);
        assert!((c - closed).abs() < 1e-12 && (c - 1.4728).abs() < 1e-4, "{c}");
        let overlap = cov_limit_overlap_form(&spec, &unit, &next, tol).unwrap();
        assert!((c - overlap).abs() < 1e-8 * c, "{c} vs {overlap}");
    }

    #[test]
    fn two_forms_agree_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tol = default_tolerance(1);
        for _ in 0..10 {
            let gamma = rng.random_range(1.1..1.9);
            let spec = interval_spec(gamma);
            let mut random = || {
                let a = rng.random_range(-2.0..2.0);
                let b = a + rng.random_range(0.1..2.0);
                let c = rng.random_range(-2.0..2.0);
                TestMeasure::interval(a, b)
                    .unwrap()
                    .plus(&TestMeasure::interval(c, c + 0.5).unwrap().scaled(rng.random_range(-1.0..1.0)))
                    .unwrap()
            };
            let (phi, psi) = (random(), random());
            let k = cov_limit(&spec, &phi, &psi, tol).unwrap();
            let o = cov_limit_overlap_form(&spec, &phi, &psi, tol).unwrap();
            assert!((k - o).abs() < 1e-6 * k.abs().max(1e-3), "γ={gamma}: {k} vs {o}");
        }
    }

    #[test]
    fn two_forms_agree_in_the_plane() {
        let tol = default_tolerance(2);
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let psi = TestMeasure::boxed(&[0.5, 1.2], &[1.5, 1.7]).unwrap();
        for (shape, rotated) in [
            (GrainShape::cube(2).unwrap(), false),
            (GrainShape::cube(2).unwrap(), true),
            (GrainShape::ball(2).unwrap(), false),
        ] {
            let spec = KernelSpec::new(1.5, shape, rotated).unwrap();
            let k = cov_limit(&spec, &phi, &psi, tol).unwrap();
            let o = cov_limit_overlap_form(&spec, &phi, &psi, tol).unwrap();
            assert!((k - o).abs() < 1e-4 * k.abs(), "{shape:?} rotated={rotated}: {k} vs {o}");
        }
    }

    #[test]
    fn limit_covariance_is_self_similar() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = TestMeasure::interval(0.0, 1.0).unwrap();
        let psi = TestMeasure::interval(0.5, 3.0).unwrap();
        let phi2 = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let psi2 = TestMeasure::ball(&[1.0, 1.5], 0.5).unwrap();
        for (spec, p, q) in [
            (interval_spec(1.5), &phi, &psi),
            (KernelSpec::new(1.3, GrainShape::cube(2).unwrap(), false).unwrap(), &phi2, &psi2),
        ] {
            let tol = default_tolerance(spec.dim());
            let base = cov_limit(&spec, p, q, tol).unwrap();
            let s: f64 = rng.random_range(0.3..3.0);
            let scaled = cov_limit(&spec, &dilate(p, s).unwrap(), &dilate(q, s).unwrap(), tol).unwrap();
            let h = spec.hurst();
            let expect = s.powf(2.0 * (1.0 - h) * spec.dim() as f64) * base;
            assert!((scaled - expect).abs() < 1e-6 * expect.abs(), "{scaled} vs {expect}");
        }
    }

    #[test]
    fn theorem3_constant_examples() {
        let c = theorem3_constant(1.5, GrainShape::interval()).unwrap();
        assert!((c - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let ball = GrainShape::ball(2).unwrap();
        let c = theorem3_constant(1.4, ball).unwrap();
        let spec = KernelSpec::new(1.4, ball, false).unwrap();
        let k = kernel_k(&spec, &[1.0, 0.0]).unwrap();
        assert!((c - (k / c_alpha_d(0.6, 2).unwrap()).sqrt()).abs() < 1e-12);
        let square = GrainShape::cube(2).unwrap();
        let a = theorem3_constant_with_nodes(1.5, square, ROTATION_NODES).unwrap();
        let b = theorem3_constant_with_nodes(1.5, square, 2 * ROTATION_NODES).unwrap();
        assert!(((a - b) / b).abs() < 1e-10);
        let h = 1e-4;
        let fd = (theorem3_constant(1.5 + h, square).unwrap() - theorem3_constant(1.5 - h, square).unwrap()) / (2.0 * h);
        assert!(fd.is_finite());
        assert!(matches!(
            theorem3_constant(1.5, GrainShape::cube(3).unwrap()),
            Err(Error::UnsupportedDimension { .. })
        ));
    }

    #[test]
    fn rotated_covariance_is_a_multiple_of_the_riesz_norm() {
        // W_{γ,θC} = c W_H read through both covariances, at γ where c_{2H−1,2} ≠ 1
        let gamma = 1.3;
        let tol = default_tolerance(2);
        let square = GrainShape::cube(2).unwrap();
        let spec = KernelSpec::new(gamma, square, true).unwrap();
        let phi = TestMeasure::boxed(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let psi = TestMeasure::ball(&[1.5, 0.5], 0.5).unwrap();
        let c = theorem3_constant(gamma, square).unwrap();
        let lhs = cov_limit(&spec, &phi, &psi, tol).unwrap();
        let rhs = c * c * riesz_inner(&phi, &psi, 2.0 - gamma, tol).unwrap();
        assert!((lhs - rhs).abs() < 1e-7 * lhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn lrd_curve_grows_without_bound() {
        let spec = interval_spec(1.5);
        let grid: Vec<f64> = (1..=7).map(|k| 2f64.powi(k)).collect();
        let curve = lrd_limit_divergence(&spec, &grid, default_tolerance(1)).unwrap();
        assert!(curve.windows(2).all(|w| w[1] > w[0]));
        // Cov(W([−1,1]), W([1,r])) doubled, inner integral in closed form
        let r = grid[2];
        let oracle = 2.0 / 0.75
            * integrate(|x: f64| 2.0 * ((r - x).sqrt() - (1.0 - x).sqrt()), -1.0, 1.0, oracle_tol())
                .unwrap()
                .value;
        assert!((curve[2] - oracle).abs() < 1e-9 * oracle, "{} vs {oracle}", curve[2]);
        // the growth exponent 2 − γ is reached far out
        let far = lrd_limit_divergence(&spec, &[1e6, 1e7], default_tolerance(1)).unwrap();
        let slope = (far[1] / far[0]).ln() / 10f64.ln();
        assert!((slope - 0.5).abs() < 0.01, "{slope}");
        let near = lrd_limit_divergence(&spec, &[1.0 + 1e-9], default_tolerance(1)).unwrap();
        assert!(near[0].abs() < 1e-6);
        assert!(lrd_limit_divergence(&spec, &[2.0, 1.5], default_tolerance(1)).is_err());
    }

    #[test]
    fn quadratic_overlap_respects_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tol = default_tolerance(1);
        let shape = GrainShape::interval();
        for _ in 0..20 {
            let a = rng.random_range(-1.0..1.0);
            let phi = TestMeasure::interval(a, a + rng.random_range(0.2..2.0))
                .unwrap()
                .minus(&TestMeasure::interval(2.0, 2.5).unwrap().scaled(rng.random_range(0.0..2.0)))
                .unwrap();
            let alpha = rng.random_range(0.1..0.9);
            let v = 10f64.powf(rng.random_range(-3.0..3.0));
            let h = quadratic_overlap(shape, false, &phi, v, tol).unwrap();
            let c = overlap_bound_constant(shape, &phi, alpha, tol).unwrap();
            assert!(h <= c * v.min(v.powf(2.0 - alpha)) * (1.0 + 1e-9), "h={h} c={c} v={v}");
        }
    }

    #[test]
    fn csv_tables() {
        let spec = interval_spec(1.5);
        let t = kernel_table_csv(&spec, &[1.0, 4.0]).unwrap();
        let mut lines = t.lines();
        assert_eq!(lines.next(), Some("x,K"));
        assert!(lines.next().unwrap().starts_with("1,1.333"));
        let g = gram_table_csv(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        assert_eq!(g.lines().count(), 5);
    }
}
