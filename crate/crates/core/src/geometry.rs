//! Grain shapes, test measures and intersection volumes.
//!
//! Points are stored as `[f64; 3]` with unused trailing coordinates set to zero,
//! so every routine is allocation-free. Supported dimensions are 1, 2 and 3.
//!
//! Intersection volumes are exact wherever a closed form exists: intervals, boxes,
//! ball lenses, polygon clipping for rotated squares, the polygon–disc formula, and
//! the box–disc area. In three dimensions box∩ball is the integral over slices of
//! the exact box–disc area, computed by adaptive quadrature.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_pieces, Tolerance};
use crate::special::unit_ball_volume;

/// A point of `R^d`, `d ≤ 3`, padded with zeros.
pub type Point = [f64; 3];

pub const MAX_DIM: usize = 3;

fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension { what: "geometry", d })
    }
}

/// A bounded region of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// Axis-aligned box `[lo, hi]`.
    Box { lo: Point, hi: Point },
    /// Euclidean ball.
    Ball { center: Point, radius: f64 },
    /// Square of half-side `half` rotated by `angle` about its center (`d = 2` only).
    Square { center: Point, half: f64, angle: f64 },
}

impl Region {
    /// Lebesgue volume in dimension `d`.
    pub fn volume(&self, d: usize) -> f64 {
        match *self {
            Region::Box { lo, hi } => (0..d).map(|i| (hi[i] - lo[i]).max(0.0)).product(),
            Region::Ball { radius, .. } => unit_ball_volume(d) * radius.powi(d as i32),
            Region::Square { half, .. } => 4.0 * half * half,
        }
    }

    /// Axis-aligned bounding box.
    pub fn bbox(&self, d: usize) -> (Point, Point) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        match *self {
            Region::Box { lo: l, hi: h } => {
                lo[..d].copy_from_slice(&l[..d]);
                hi[..d].copy_from_slice(&h[..d]);
            }
            Region::Ball { center, radius } => {
                for i in 0..d {
                    lo[i] = center[i] - radius;
                    hi[i] = center[i] + radius;
                }
            }
            Region::Square { center, half, angle } => {
                let e = half * (angle.cos().abs() + angle.sin().abs());
                for i in 0..d {
                    lo[i] = center[i] - e;
                    hi[i] = center[i] + e;
                }
            }
        }
        (lo, hi)
    }

    /// Membership test (closed region).
    pub fn contains(&self, p: &Point, d: usize) -> bool {
        match *self {
            Region::Box { lo, hi } => (0..d).all(|i| p[i] >= lo[i] && p[i] <= hi[i]),
            Region::Ball { center, radius } => dist2(p, &center, d) <= radius * radius,
            Region::Square { center, half, angle } => {
                let (s, c) = angle.sin_cos();
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (c * dx + s * dy).abs() <= half && (-s * dx + c * dy).abs() <= half
            }
        }
    }

    /// The region shifted by `z`.
    pub fn translate(&self, z: &Point) -> Region {
        match *self {
            Region::Box { lo, hi } => Region::Box {
                lo: add(&lo, z),
                hi: add(&hi, z),
            },
            Region::Ball { center, radius } => Region::Ball {
                center: add(&center, z),
                radius,
            },
            Region::Square { center, half, angle } => Region::Square {
                center: add(&center, z),
                half,
                angle,
            },
        }
    }

    /// The image of the region under `x ↦ x / s`.
    pub fn shrink(&self, s: f64) -> Region {
        let div = |p: &Point| [p[0] / s, p[1] / s, p[2] / s];
        match *self {
            Region::Box { lo, hi } => Region::Box { lo: div(&lo), hi: div(&hi) },
            Region::Ball { center, radius } => Region::Ball {
                center: div(&center),
                radius: radius / s,
            },
            Region::Square { center, half, angle } => Region::Square {
                center: div(&center),
                half: half / s,
                angle,
            },
        }
    }

    /// Largest distance between two points of the region.
    pub fn diameter(&self, d: usize) -> f64 {
        match *self {
            Region::Box { lo, hi } => (0..d).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt(),
            Region::Ball { radius, .. } => 2.0 * radius,
            Region::Square { half, .. } => 2.0 * half * 2f64.sqrt(),
        }
    }

    fn as_interval(&self) -> (f64, f64) {
        match *self {
            Region::Box { lo, hi } => (lo[0], hi[0]),
            Region::Ball { center, radius } => (center[0] - radius, center[0] + radius),
            Region::Square { center, half, .. } => (center[0] - half, center[0] + half),
        }
    }

    fn polygon(&self) -> Vec<[f64; 2]> {
        match *self {
            Region::Box { lo, hi } => vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]],
            Region::Square { center, half, angle } => {
                let (s, c) = angle.sin_cos();
                [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
                    .iter()
                    .map(|&(a, b)| {
                        [
                            center[0] + half * (c * a - s * b),
                            center[1] + half * (s * a + c * b),
                        ]
                    })
                    .collect()
            }
            Region::Ball { .. } => unreachable!("balls are not polygons"),
        }
    }
}

fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn dist2(a: &Point, b: &Point, d: usize) -> f64 {
    (0..d).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// `|a ∩ b|` in dimension `d`.
pub fn region_overlap(a: &Region, b: &Region, d: usize) -> f64 {
    if d == 1 {
        let (a0, a1) = a.as_interval();
        let (b0, b1) = b.as_interval();
        return (a1.min(b1) - a0.max(b0)).max(0.0);
    }
    // quick rejection on bounding boxes
    let (alo, ahi) = a.bbox(d);
    let (blo, bhi) = b.bbox(d);
    for i in 0..d {
        if alo[i] >= bhi[i] || blo[i] >= ahi[i] {
            return 0.0;
        }
    }
    match (a, b) {
        (Region::Box { lo: l1, hi: h1 }, Region::Box { lo: l2, hi: h2 }) => {
            (0..d).map(|i| (h1[i].min(h2[i]) - l1[i].max(l2[i])).max(0.0)).product()
        }
        (Region::Ball { center: c1, radius: r1 }, Region::Ball { center: c2, radius: r2 }) => {
            ball_lens(*r1, *r2, dist2(c1, c2, d).sqrt(), d)
        }
        (Region::Box { lo, hi }, Region::Ball { center, radius })
        | (Region::Ball { center, radius }, Region::Box { lo, hi }) => {
            if d == 2 {
                box_disc_area(lo[0] - center[0], hi[0] - center[0], lo[1] - center[1], hi[1] - center[1], *radius)
            } else {
                box_ball_volume_3d(lo, hi, center, *radius)
            }
        }
        (Region::Ball { center, radius }, poly) | (poly, Region::Ball { center, radius }) => {
            polygon_disc_area(&poly.polygon(), [center[0], center[1]], *radius)
        }
        (p, q) => polygon_area(&clip_convex(&p.polygon(), &q.polygon())),
    }
}

/// Volume of the intersection of two balls with radii `r1`, `r2` and center distance `dist`.
pub fn ball_lens(r1: f64, r2: f64, dist: f64, d: usize) -> f64 {
    let (small, big) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if dist >= r1 + r2 {
        return 0.0;
    }
    if dist <= big - small {
        return unit_ball_volume(d) * small.powi(d as i32);
    }
    match d {
        1 => r1 + r2 - dist,
        2 => {
            let a1 = ((dist * dist + r1 * r1 - r2 * r2) / (2.0 * dist * r1)).clamp(-1.0, 1.0).acos();
            let a2 = ((dist * dist + r2 * r2 - r1 * r1) / (2.0 * dist * r2)).clamp(-1.0, 1.0).acos();
            let k = ((-dist + r1 + r2) * (dist + r1 - r2) * (dist - r1 + r2) * (dist + r1 + r2)).max(0.0);
            r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k.sqrt()
        }
        _ => {
            let s = r1 + r2 - dist;
            PI * s * s * (dist * dist + 2.0 * dist * (r1 + r2) - 3.0 * (r1 - r2).powi(2)) / (12.0 * dist)
        }
    }
}

/// `∫_0^u sqrt(r² − t²) dt`.
fn circle_primitive(u: f64, r: f64) -> f64 {
    let u = u.clamp(-r, r);
    0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).asin())
}

/// Area of `[x0,x1]×[y0,y1] ∩ {x² + y² ≤ r²}` (box coordinates relative to the disc center).
pub fn box_disc_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let a = x0.max(-r);
    let b = x1.min(r);
    if !(b > a) || !(y1 > y0) || r <= 0.0 {
        return 0.0;
    }
    let mut pts = vec![a, b];
    for y in [y0, y1] {
        if y.abs() < r {
            let u = (r * r - y * y).sqrt();
            for c in [-u, u] {
                if c > a && c < b {
                    pts.push(c);
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        if u1 <= u0 {
            continue;
        }
        let m = 0.5 * (u0 + u1);
        let h = (r * r - m * m).max(0.0).sqrt();
        let top_is_disc = h < y1;
        let bottom_is_disc = -h > y0;
        let top = if top_is_disc { h } else { y1 };
        let bottom = if bottom_is_disc { -h } else { y0 };
        if top <= bottom {
            continue;
        }
        let hint = circle_primitive(u1, r) - circle_primitive(u0, r);
        let width = u1 - u0;
        let top_int = if top_is_disc { hint } else { y1 * width };
        let bottom_int = if bottom_is_disc { -hint } else { y0 * width };
        area += top_int - bottom_int;
    }
    area.max(0.0)
}

/// `|box ∩ ball|` in three dimensions: slices in the last coordinate are box–disc areas.
fn box_ball_volume_3d(lo: &Point, hi: &Point, center: &Point, r: f64) -> f64 {
    let z0 = (lo[2] - center[2]).max(-r);
    let z1 = (hi[2] - center[2]).min(r);
    if !(z1 > z0) {
        return 0.0;
    }
    let (x0, x1) = (lo[0] - center[0], hi[0] - center[0]);
    let (y0, y1) = (lo[1] - center[1], hi[1] - center[1]);
    // the slice area has kinks where the slice radius meets a corner or an edge distance
    let mut pts = vec![z0, z1];
    let mut crit = vec![];
    for &x in &[x0, x1] {
        crit.push(x * x);
        for &y in &[y0, y1] {
            crit.push(x * x + y * y);
        }
    }
    for &y in &[y0, y1] {
        crit.push(y * y);
    }
    for c in crit {
        if c < r * r {
            let z = (r * r - c).sqrt();
            for zz in [-z, z] {
                if zz > z0 && zz < z1 {
                    pts.push(zz);
                }
            }
        }
    }
    if 0.0 > z0 && 0.0 < z1 {
        pts.push(0.0);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let tol = Tolerance::new(1e-13 * r * r * r, 1e-11).with_max_intervals(400);
    match integrate_pieces(
        |z: f64| box_disc_area(x0, x1, y0, y1, (r * r - z * z).max(0.0).sqrt()),
        &pts,
        tol,
    ) {
        Ok(e) => e.value,
        Err(Error::Quadrature { estimate, .. }) => estimate,
        Err(_) => 0.0,
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a counter-clockwise polygon.
fn polygon_area(p: &[[f64; 2]]) -> f64 {
    if p.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..p.len() {
        let a = p[i];
        let b = p[(i + 1) % p.len()];
        s += a[0] * b[1] - a[1] * b[0];
    }
    (0.5 * s).max(0.0)
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let cp = cross(a, b, p);
            let cq = cross(a, b, q);
            if cp >= 0.0 {
                out.push(p);
            }
            if (cp >= 0.0) != (cq >= 0.0) {
                let t = cp / (cp - cq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Area of a convex counter-clockwise polygon intersected with a disc.
fn polygon_disc_area(poly: &[[f64; 2]], center: [f64; 2], r: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = [poly[i][0] - center[0], poly[i][1] - center[1]];
        let j = (i + 1) % poly.len();
        let b = [poly[j][0] - center[0], poly[j][1] - center[1]];
        s += triangle_disc_signed(a, b, r);
    }
    s.abs()
}

/// Signed area of the triangle `(0, a, b)` intersected with the disc of radius `r` at 0.
fn triangle_disc_signed(a: [f64; 2], b: [f64; 2], r: f64) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let qa = dx * dx + dy * dy;
    let mut ts = vec![0.0];
    if qa > 0.0 {
        let qb = 2.0 * (a[0] * dx + a[1] * dy);
        let qc = a[0] * a[0] + a[1] * a[1] - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc > 0.0 {
            let sq = disc.sqrt();
            for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
    }
    ts.push(1.0);
    let mut s = 0.0;
    for w in ts.windows(2) {
        let p = [a[0] + w[0] * dx, a[1] + w[0] * dy];
        let q = [a[0] + w[1] * dx, a[1] + w[1] * dy];
        let tm = 0.5 * (w[0] + w[1]);
        let m = [a[0] + tm * dx, a[1] + tm * dy];
        let cr = p[0] * q[1] - p[1] * q[0];
        if m[0] * m[0] + m[1] * m[1] <= r * r {
            s += 0.5 * cr;
        } else {
            let dot = p[0] * q[0] + p[1] * q[1];
            s += 0.5 * r * r * cr.atan2(dot);
        }
    }
    s
}

/// Fixed Halton point set in `[0,1)^d` (bases 2, 3, 5), independent of any seed.
pub fn halton_points(n: usize, d: usize) -> Vec<Point> {
    const BASES: [u64; 3] = [2, 3, 5];
    (1..=n as u64)
        .map(|i| {
            let mut p = [0.0; 3];
            for (k, &b) in BASES.iter().enumerate().take(d) {
                let mut f = 1.0;
                let mut x = 0.0;
                let mut j = i;
                while j > 0 {
                    f /= b as f64;
                    x += f * (j % b) as f64;
                    j /= b;
                }
                p[k] = x;
            }
            p
        })
        .collect()
}

/// Number of quasi-Monte-Carlo points used by [`qmc_overlap`].
pub const QMC_POINTS: usize = 1 << 15;

/// Quasi-Monte-Carlo estimate of `|a ∩ b|` over the bounding box of the smaller region.
/// Used as an independent check of the exact routines.
pub fn qmc_overlap(a: &Region, b: &Region, d: usize) -> f64 {
    let (small, other) = if a.volume(d) <= b.volume(d) { (a, b) } else { (b, a) };
    let (lo, hi) = small.bbox(d);
    let vol: f64 = (0..d).map(|i| hi[i] - lo[i]).product();
    let pts = halton_points(QMC_POINTS, d);
    let inside = pts
        .iter()
        .filter(|u| {
            let mut p = [0.0; 3];
            for i in 0..d {
                p[i] = lo[i] + u[i] * (hi[i] - lo[i]);
            }
            small.contains(&p, d) && other.contains(&p, d)
        })
        .count();
    vol * inside as f64 / QMC_POINTS as f64
}

/// The reference body `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `[−1/2, 1/2]` in `d = 1`.
    Interval,
    /// Axis-aligned unit cube centred at the origin.
    Cube,
    /// Centred ball of unit volume.
    Ball,
}

/// A grain shape: a reference body of unit volume in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrainShape {
    pub kind: ShapeKind,
    pub d: usize,
}

impl GrainShape {
    pub fn interval() -> Self {
        GrainShape {
            kind: ShapeKind::Interval,
            d: 1,
        }
    }

    pub fn cube(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(GrainShape { kind: ShapeKind::Cube, d })
    }

    pub fn ball(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(GrainShape { kind: ShapeKind::Ball, d })
    }

    /// Build from a kind and dimension, checking consistency.
    pub fn new(kind: ShapeKind, d: usize) -> Result<Self> {
        match kind {
            ShapeKind::Interval if d != 1 => Err(Error::DimensionMismatch { expected: 1, found: d }),
            ShapeKind::Interval => Ok(Self::interval()),
            ShapeKind::Cube => Self::cube(d),
            ShapeKind::Ball => Self::ball(d),
        }
    }

    /// Radius of the unit-volume ball.
    pub fn ball_radius(d: usize) -> f64 {
        (1.0 / unit_ball_volume(d)).powf(1.0 / d as f64)
    }

    /// Region `center + v^{1/d} θ C`.
    pub fn region(&self, center: Point, volume: f64, angle: f64) -> Region {
        let s = volume.powf(1.0 / self.d as f64);
        match self.kind {
            ShapeKind::Ball => Region::Ball {
                center,
                radius: s * Self::ball_radius(self.d),
            },
            ShapeKind::Interval | ShapeKind::Cube => {
                if self.d == 2 && angle != 0.0 {
                    Region::Square {
                        center,
                        half: 0.5 * s,
                        angle,
                    }
                } else {
                    let mut lo = [0.0; 3];
                    let mut hi = [0.0; 3];
                    for i in 0..self.d {
                        lo[i] = center[i] - 0.5 * s;
                        hi[i] = center[i] + 0.5 * s;
                    }
                    Region::Box { lo, hi }
                }
            }
        }
    }

    /// Largest coordinate half-extent of `θC` over the rotations in use.
    pub fn half_extent(&self, rotated: bool) -> f64 {
        match self.kind {
            ShapeKind::Ball => Self::ball_radius(self.d),
            ShapeKind::Interval | ShapeKind::Cube => {
                if rotated && self.d == 2 {
                    0.5 * 2f64.sqrt()
                } else {
                    0.5
                }
            }
        }
    }

    /// Circumradius of `C`.
    pub fn circumradius(&self) -> f64 {
        match self.kind {
            ShapeKind::Ball => Self::ball_radius(self.d),
            ShapeKind::Interval | ShapeKind::Cube => 0.5 * (self.d as f64).sqrt(),
        }
    }

    /// Covariogram `|G ∩ (G + z)|` of the grain `G = v^{1/d}θC`.
    pub fn covariogram(&self, volume: f64, angle: f64, z: &Point) -> f64 {
        let d = self.d;
        let s = volume.powf(1.0 / d as f64);
        match self.kind {
            ShapeKind::Ball => {
                let r = s * Self::ball_radius(d);
                ball_lens(r, r, dist2(z, &[0.0; 3], d).sqrt(), d)
            }
            ShapeKind::Interval | ShapeKind::Cube => {
                if d == 2 && angle != 0.0 {
                    let (sn, cs) = angle.sin_cos();
                    let u = cs * z[0] + sn * z[1];
                    let w = -sn * z[0] + cs * z[1];
                    (s - u.abs()).max(0.0) * (s - w.abs()).max(0.0)
                } else {
                    (0..d).map(|i| (s - z[i].abs()).max(0.0)).product()
                }
            }
        }
    }
}

/// Rotation-averaged covariogram of the unit square at distance `r`:
/// `(1/2π) ∫ (1 − r|cos θ|)_+ (1 − r|sin θ|)_+ dθ`.
pub fn isotropic_square_covariogram(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        1.0 - 4.0 * r / PI + r * r / PI
    } else if r < 2f64.sqrt() {
        let t1 = (1.0 / r).acos();
        2.0 / PI * (PI / 2.0 - 2.0 * t1 - 2.0 + 2.0 * (r * r - 1.0).sqrt() + (2.0 - r * r) / 2.0)
    } else {
        0.0
    }
}

/// One grain `center + volume^{1/d}·rotation(C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grain {
    pub center: Point,
    pub volume: f64,
    /// Rotation angle (used in `d = 2` only).
    pub angle: f64,
    pub shape: GrainShape,
}

impl Grain {
    pub fn new(shape: GrainShape, center: Point, volume: f64, angle: f64) -> Self {
        Grain {
            center,
            volume,
            angle,
            shape,
        }
    }

    pub fn region(&self) -> Region {
        self.shape.region(self.center, self.volume, self.angle)
    }
}

/// One weighted region of a test measure: the density `w·1_region`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub region: Region,
}

/// A finite signed combination `φ = Σ w_i 1_{R_i}` of boxes and balls.
#[derive(Debug, Clone, PartialEq)]
pub struct TestMeasure {
    d: usize,
    atoms: Vec<Atom>,
    /// Optional identifier used as a CSV column header.
    pub id: Option<String>,
}

impl TestMeasure {
    pub fn new(d: usize, atoms: Vec<Atom>) -> Result<Self> {
        check_dim(d)?;
        for a in &atoms {
            if !a.weight.is_finite() {
                return Err(Error::Config("atom weight must be finite".into()));
            }
            match a.region {
                Region::Box { lo, hi } => {
                    if (0..d).any(|i| !(hi[i] > lo[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
                        return Err(Error::Config("box must satisfy lo < hi coordinate-wise".into()));
                    }
                }
                Region::Ball { radius, center } => {
                    if !(radius > 0.0 && radius.is_finite()) || (0..d).any(|i| !center[i].is_finite()) {
                        return Err(Error::Config("ball radius must be positive".into()));
                    }
                }
                Region::Square { .. } => {
                    return Err(Error::Config("test-measure atoms must be boxes or balls".into()));
                }
            }
        }
        Ok(TestMeasure { d, atoms, id: None })
    }

    /// The zero measure.
    pub fn zero(d: usize) -> Result<Self> {
        Self::new(d, vec![])
    }

    /// Indicator of the interval `[a, b]` in `d = 1`.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::boxed(&[a], &[b])
    }

    /// Indicator of an axis-aligned box.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let d = lo.len();
        check_dim(d)?;
        let mut l = [0.0; 3];
        let mut h = [0.0; 3];
        l[..d].copy_from_slice(lo);
        h[..d].copy_from_slice(hi);
        Self::new(
            d,
            vec![Atom {
                weight: 1.0,
                region: Region::Box { lo: l, hi: h },
            }],
        )
    }

    /// Indicator of a ball.
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        let d = center.len();
        check_dim(d)?;
        let mut c = [0.0; 3];
        c[..d].copy_from_slice(center);
        Self::new(
            d,
            vec![Atom {
                weight: 1.0,
                region: Region::Ball { center: c, radius },
            }],
        )
    }

    /// Indicator of the ball `B_r` of radius `r` centred at the origin.
    pub fn centered_ball(d: usize, r: f64) -> Result<Self> {
        Self::ball(&vec![0.0; d], r)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `a·self`.
    pub fn scaled(&self, a: f64) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|at| Atom {
                weight: a * at.weight,
                region: at.region,
            })
            .collect();
        TestMeasure {
            d: self.d,
            atoms,
            id: None,
        }
    }

    /// `self + other`.
    pub fn plus(&self, other: &TestMeasure) -> Result<Self> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: other.d,
            });
        }
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Ok(TestMeasure {
            d: self.d,
            atoms,
            id: None,
        })
    }

    /// `self − other`.
    pub fn minus(&self, other: &TestMeasure) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    /// Density value `φ(x)`.
    pub fn value_at(&self, x: &Point) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.region.contains(x, self.d))
            .map(|a| a.weight)
            .sum()
    }

    /// Total mass `φ(R^d) = Σ w_i |R_i|`.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.region.volume(self.d)).sum()
    }

    /// `Σ |w_i| |R_i|`, an upper bound for `‖φ‖₁` (equal when atoms do not overlap).
    pub fn atom_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.abs() * a.region.volume(self.d)).sum()
    }

    /// Bounding box of the support, `None` for the zero measure.
    pub fn bbox(&self) -> Option<(Point, Point)> {
        let mut it = self.atoms.iter();
        let first = it.next()?;
        let (mut lo, mut hi) = first.region.bbox(self.d);
        for a in it {
            let (l, h) = a.region.bbox(self.d);
            for i in 0..self.d {
                lo[i] = lo[i].min(l[i]);
                hi[i] = hi[i].max(h[i]);
            }
        }
        Some((lo, hi))
    }

    /// Smallest atom diameter (infinite for the zero measure).
    pub fn min_atom_diameter(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.region.diameter(self.d))
            .fold(f64::INFINITY, f64::min)
    }

    /// `φ(A)` for a region `A`: `Σ w_i |R_i ∩ A|`.
    pub fn mass_of_region(&self, region: &Region) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * region_overlap(&a.region, region, self.d))
            .sum()
    }

    /// `∫ φ₊^p` and `∫ φ₋^p` over the arrangement of atoms.
    ///
    /// Exact when every atom is a box (or `d = 1`), or when the atoms are pairwise
    /// disjoint; otherwise the arrangement is integrated by quasi-Monte-Carlo.
    pub fn positive_negative_power(&self, p: f64) -> (f64, f64) {
        let d = self.d;
        let all_boxes = d == 1 || self.atoms.iter().all(|a| matches!(a.region, Region::Box { .. }));
        let accumulate = |v: f64, vol: f64, acc: &mut (f64, f64)| {
            if v > 0.0 {
                acc.0 += v.powf(p) * vol;
            } else if v < 0.0 {
                acc.1 += (-v).powf(p) * vol;
            }
        };
        let mut acc = (0.0, 0.0);
        if all_boxes {
            let mut coords: Vec<Vec<f64>> = vec![vec![]; d];
            for a in &self.atoms {
                let (lo, hi) = a.region.bbox(d);
                for i in 0..d {
                    coords[i].push(lo[i]);
                    coords[i].push(hi[i]);
                }
            }
            for c in coords.iter_mut() {
                c.sort_by(f64::total_cmp);
                c.dedup();
            }
            let counts: Vec<usize> = coords.iter().map(|c| c.len().saturating_sub(1)).collect();
            let total: usize = counts.iter().product();
            for mut idx in 0..total {
                let mut mid = [0.0; 3];
                let mut vol = 1.0;
                for i in 0..d {
                    let k = idx % counts[i];
                    idx /= counts[i];
                    mid[i] = 0.5 * (coords[i][k] + coords[i][k + 1]);
                    vol *= coords[i][k + 1] - coords[i][k];
                }
                accumulate(self.value_at(&mid), vol, &mut acc);
            }
            return acc;
        }
        let disjoint = self.atoms.iter().enumerate().all(|(i, a)| {
            self.atoms[i + 1..]
                .iter()
                .all(|b| region_overlap(&a.region, &b.region, d) == 0.0)
        });
        if disjoint {
            for a in &self.atoms {
                accumulate(a.weight, a.region.volume(d), &mut acc);
            }
            return acc;
        }
        let (lo, hi) = self.bbox().expect("non-empty");
        let vol: f64 = (0..d).map(|i| hi[i] - lo[i]).product();
        let n = 1 << 18;
        for u in halton_points(n, d) {
            let mut x = [0.0; 3];
            for i in 0..d {
                x[i] = lo[i] + u[i] * (hi[i] - lo[i]);
            }
            accumulate(self.value_at(&x), vol / n as f64, &mut acc);
        }
        acc
    }

    /// `∫ |φ|^p`.
    pub fn lp_norm_power(&self, p: f64) -> f64 {
        let (a, b) = self.positive_negative_power(p);
        a + b
    }

    /// `‖φ‖₁ = ∫ |φ|`.
    pub fn l1_norm(&self) -> f64 {
        self.lp_norm_power(1.0)
    }
}

/// `|region ∩ grain|`.
pub fn overlap_volume(region: &Region, grain: &Grain) -> f64 {
    region_overlap(region, &grain.region(), grain.shape.d)
}

/// `φ(grain) = Σ w_i |R_i ∩ grain|`.
pub fn measure_of_grain(phi: &TestMeasure, grain: &Grain) -> Result<f64> {
    if phi.d != grain.shape.d {
        return Err(Error::DimensionMismatch {
            expected: phi.d,
            found: grain.shape.d,
        });
    }
    Ok(phi.mass_of_region(&grain.region()))
}

/// The dilatation `φ_s(A) = φ(sA)`: regions shrink by `s`, densities grow by `s^d`.
pub fn dilate(phi: &TestMeasure, s: f64) -> Result<TestMeasure> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::param("s", s, "dilatation scale must be positive"));
    }
    let f = s.powi(phi.d as i32);
    let atoms = phi
        .atoms
        .iter()
        .map(|a| Atom {
            weight: a.weight * f,
            region: a.region.shrink(s),
        })
        .collect();
    Ok(TestMeasure {
        d: phi.d,
        atoms,
        id: phi.id.clone(),
    })
}

/// A Haar-distributed rotation: the identity for `d = 1`, a uniform angle for `d = 2`.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<f64> {
    match d {
        1 => Ok(0.0),
        2 => Ok(TAU * rng.random::<f64>()),
        _ => Err(Error::UnsupportedDimension {
            what: "random rotation",
            d,
        }),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RegionJson {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    w: f64,
    region: RegionJson,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    d: usize,
    atoms: Vec<AtomJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

fn to_point(v: &[f64], d: usize) -> Result<Point> {
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: v.len(),
        });
    }
    let mut p = [0.0; 3];
    p[..d].copy_from_slice(v);
    Ok(p)
}

impl TryFrom<MeasureJson> for TestMeasure {
    type Error = Error;
    fn try_from(m: MeasureJson) -> Result<Self> {
        check_dim(m.d)?;
        let atoms = m
            .atoms
            .into_iter()
            .map(|a| {
                let region = match a.region {
                    RegionJson::Box { lo, hi } => Region::Box {
                        lo: to_point(&lo, m.d)?,
                        hi: to_point(&hi, m.d)?,
                    },
                    RegionJson::Ball { center, radius } => Region::Ball {
                        center: to_point(&center, m.d)?,
                        radius,
                    },
                };
                Ok(Atom { weight: a.w, region })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = TestMeasure::new(m.d, atoms)?;
        out.id = m.id;
        Ok(out)
    }
}

impl From<&TestMeasure> for MeasureJson {
    fn from(t: &TestMeasure) -> Self {
        let d = t.d;
        MeasureJson {
            d,
            atoms: t
                .atoms
                .iter()
                .map(|a| AtomJson {
                    w: a.weight,
                    region: match a.region {
                        Region::Box { lo, hi } => RegionJson::Box {
                            lo: lo[..d].to_vec(),
                            hi: hi[..d].to_vec(),
                        },
                        Region::Ball { center, radius } => RegionJson::Ball {
                            center: center[..d].to_vec(),
                            radius,
                        },
                        Region::Square { .. } => unreachable!("validated at construction"),
                    },
                })
                .collect(),
            id: t.id.clone(),
        }
    }
}

impl Serialize for TestMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TestMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = MeasureJson::deserialize(d)?;
        TestMeasure::try_from(m).map_err(serde::de::Error::custom)
    }
}
