//! Parametric closed surfaces with tensor-product quadrature grids.
//!
//! Node `i = k·n_φ + j` sits on the k-th Gauss–Legendre ring of the first
//! chart coordinate (θ for sphere and ellipsoid, the poloidal angle for the
//! torus) and the j-th trapezoid point of the second one.

mod harmonics;
mod quadrature;
mod trace;

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::Vec3;
use crate::{Error, Result};

pub use harmonics::{
    legendre_table, sh_analyze, sh_analyze_to, sh_synthesize, sobolev_norm, HarmonicSpectrum,
    LegendreTable,
};
pub use quadrature::gauss_legendre;
pub use trace::SpinorTrace;
pub(crate) use trace::weighted_inner;

/// Gauss–Legendre rings at level 0; each level doubles the ring count.
pub const BASE_RINGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SurfaceKind {
    Sphere { radius: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    Torus { major: f64, minor: f64 },
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceKind::Sphere { radius } => write!(f, "sphere({radius})"),
            SurfaceKind::Ellipsoid { a, b, c } => write!(f, "ellipsoid({a},{b},{c})"),
            SurfaceKind::Torus { major, minor } => write!(f, "torus({major},{minor})"),
        }
    }
}

impl SurfaceKind {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            SurfaceKind::Sphere { radius } if !ok(radius) => {
                Err(Error::InvalidSurface(format!("sphere radius {radius} must be positive")))
            }
            SurfaceKind::Ellipsoid { a, b, c } if !(ok(a) && ok(b) && ok(c)) => {
                Err(Error::InvalidSurface(format!("ellipsoid semi-axes ({a},{b},{c}) must be positive")))
            }
            SurfaceKind::Torus { major, minor } if !(ok(major) && ok(minor)) || minor >= major => {
                Err(Error::InvalidSurface(format!(
                    "torus needs 0 < minor < major, got major {major}, minor {minor}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            SurfaceKind::Sphere { radius } => 2.0 * radius,
            SurfaceKind::Ellipsoid { a, b, c } => 2.0 * a.max(b).max(c),
            SurfaceKind::Torus { major, minor } => 2.0 * (major + minor),
        }
    }

    /// Negative inside, positive outside, zero on the surface.
    pub fn level_set(&self, x: &Vec3) -> f64 {
        match *self {
            SurfaceKind::Sphere { radius } => x.norm() - radius,
            SurfaceKind::Ellipsoid { a, b, c } => {
                ((x[0] / a).powi(2) + (x[1] / b).powi(2) + (x[2] / c).powi(2)).sqrt() - 1.0
            }
            SurfaceKind::Torus { major, minor } => {
                let rho = x[0].hypot(x[1]) - major;
                rho.hypot(x[2]) - minor
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.level_set(x) < 0.0
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, SurfaceKind::Sphere { .. })
    }

    /// Short name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceKind::Sphere { .. } => "sphere",
            SurfaceKind::Ellipsoid { .. } => "ellipsoid",
            SurfaceKind::Torus { .. } => "torus",
        }
    }
}

#[derive(Debug, Clone)]
enum RingDiff {
    /// Spherical-harmonic projection; table[(k·n_θ + k')·n_φ + Δj].
    Spectral(Vec<f64>),
    /// Polynomial differentiation along each column; n_θ × n_θ row-major.
    Lagrange(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    pub kind: SurfaceKind,
    pub level: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub nodes: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Chart coordinates (θ, φ) or (v, u) per node.
    pub param_coords: Vec<(f64, f64)>,
    /// ∂x/∂θ, ∂x/∂φ, ∂n/∂θ, ∂n/∂φ per node.
    pub dx_theta: Vec<Vec3>,
    pub dx_phi: Vec<Vec3>,
    pub dn_theta: Vec<Vec3>,
    pub dn_phi: Vec<Vec3>,
    /// Gauss–Legendre abscissae (cos θ for sphere charts) and weights.
    pub ring_t: Vec<f64>,
    pub ring_w: Vec<f64>,
    theta_diff: RingDiff,
    /// Trigonometric differentiation, entry for Δj = j − j' mod n_φ.
    phi_diff: Vec<f64>,
}

/// Grid at a refinement level: n_θ = 3·2^level rings, n_φ = 2n_θ.
pub fn build_surface(kind: SurfaceKind, level: usize) -> Result<SurfaceGrid> {
    if level > 8 {
        return Err(Error::InvalidSurface(format!("level {level} too large")));
    }
    let mut g = build_surface_rings(kind, BASE_RINGS << level)?;
    g.level = level;
    Ok(g)
}

pub fn refine(grid: &SurfaceGrid) -> Result<SurfaceGrid> {
    build_surface(grid.kind, grid.level + 1)
}

/// Grid with an explicit ring count (n_φ = 2n_θ); the level field is set to 0.
pub fn build_surface_rings(kind: SurfaceKind, n_theta: usize) -> Result<SurfaceGrid> {
    kind.validate()?;
    if n_theta < 2 {
        return Err(Error::InvalidSurface("need at least two rings".into()));
    }
    let n_phi = 2 * n_theta;
    let (t, tw) = gauss_legendre(n_theta);
    let n = n_theta * n_phi;
    let mut g = SurfaceGrid {
        kind,
        level: 0,
        n_theta,
        n_phi,
        nodes: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        param_coords: Vec::with_capacity(n),
        dx_theta: Vec::with_capacity(n),
        dx_phi: Vec::with_capacity(n),
        dn_theta: Vec::with_capacity(n),
        dn_phi: Vec::with_capacity(n),
        ring_t: t.clone(),
        ring_w: tw.clone(),
        theta_diff: RingDiff::Lagrange(Vec::new()),
        phi_diff: trig_diff(n_phi),
    };
    let dphi = 2.0 * PI / n_phi as f64;
    for k in 0..n_theta {
        for j in 0..n_phi {
            let ph = dphi * j as f64;
            let geo = match kind {
                SurfaceKind::Sphere { radius } => ellipsoid_point(radius, radius, radius, t[k], ph, true),
                SurfaceKind::Ellipsoid { a, b, c } => ellipsoid_point(a, b, c, t[k], ph, false),
                SurfaceKind::Torus { major, minor } => torus_point(major, minor, PI * (1.0 + t[k]), ph),
            };
            let jac = geo.x_t.cross(&geo.x_p).norm();
            let w = match kind {
                SurfaceKind::Torus { .. } => tw[k] * PI * dphi * jac,
                _ => tw[k] * dphi * jac / (1.0 - t[k] * t[k]).sqrt(),
            };
            g.nodes.push(geo.x);
            g.normals.push(geo.n);
            g.weights.push(w);
            g.param_coords.push((geo.theta, ph));
            g.dx_theta.push(geo.x_t);
            g.dx_phi.push(geo.x_p);
            g.dn_theta.push(geo.n_t);
            g.dn_phi.push(geo.n_p);
        }
    }
    g.theta_diff = match kind {
        SurfaceKind::Torus { .. } => {
            let v: Vec<f64> = t.iter().map(|t| PI * (1.0 + t)).collect();
            RingDiff::Lagrange(lagrange_diff(&v))
        }
        _ => RingDiff::Spectral(spectral_theta_table(&t, &tw, n_phi)),
    };
    Ok(g)
}

struct Geo {
    x: Vec3,
    n: Vec3,
    x_t: Vec3,
    x_p: Vec3,
    n_t: Vec3,
    n_p: Vec3,
    theta: f64,
}

fn ellipsoid_point(a: f64, b: f64, c: f64, t: f64, ph: f64, sphere: bool) -> Geo {
    let st = (1.0 - t * t).sqrt();
    let (sp, cp) = ph.sin_cos();
    let x = Vec3::new(a * st * cp, b * st * sp, c * t);
    let x_t = Vec3::new(a * t * cp, b * t * sp, -c * st);
    let x_p = Vec3::new(-a * st * sp, b * st * cp, 0.0);
    let (n, n_t, n_p) = if sphere {
        (
            Vec3::new(st * cp, st * sp, t),
            Vec3::new(t * cp, t * sp, -st),
            Vec3::new(-st * sp, st * cp, 0.0),
        )
    } else {
        let m = Vec3::new(st * cp / a, st * sp / b, t / c);
        let m_t = Vec3::new(t * cp / a, t * sp / b, -st / c);
        let m_p = Vec3::new(-st * sp / a, st * cp / b, 0.0);
        let len = m.norm();
        let n = m / len;
        (n, (m_t - n * n.dot(&m_t)) / len, (m_p - n * n.dot(&m_p)) / len)
    };
    Geo { x, n, x_t, x_p, n_t, n_p, theta: t.acos() }
}

fn torus_point(major: f64, minor: f64, v: f64, u: f64) -> Geo {
    let (sv, cv) = v.sin_cos();
    let (su, cu) = u.sin_cos();
    let rho = major + minor * cv;
    Geo {
        x: Vec3::new(rho * cu, rho * su, minor * sv),
        n: Vec3::new(cv * cu, cv * su, sv),
        x_t: Vec3::new(-minor * sv * cu, -minor * sv * su, minor * cv),
        x_p: Vec3::new(-rho * su, rho * cu, 0.0),
        n_t: Vec3::new(-sv * cu, -sv * su, cv),
        n_p: Vec3::new(-cv * su, cv * cu, 0.0),
        theta: v,
    }
}

/// Spectral differentiation on an even periodic grid, Nyquist mode dropped.
fn trig_diff(n: usize) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|d| {
            if d == 0 {
                0.0
            } else {
                let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                0.5 * sign / (d as f64 * h / 2.0).tan()
            }
        })
        .collect()
}

fn lagrange_diff(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let lambda: Vec<f64> = (0..n)
        .map(|k| 1.0 / (0..n).filter(|&m| m != k).map(|m| v[k] - v[m]).product::<f64>())
        .collect();
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        let mut diag = 0.0;
        for m in 0..n {
            if m != k {
                let e = lambda[m] / lambda[k] / (v[k] - v[m]);
                d[k * n + m] = e;
                diag -= e;
            }
        }
        d[k * n + k] = diag;
    }
    d
}

fn spectral_theta_table(t: &[f64], tw: &[f64], n_phi: usize) -> Vec<f64> {
    let nt = t.len();
    let lmax = nt - 1;
    let tab = legendre_table(lmax, t);
    let mut table = vec![0.0; nt * nt * n_phi];
    let mut mm = vec![0.0; nt * nt];
    for m in 0..=lmax {
        mm.iter_mut().for_each(|v| *v = 0.0);
        for l in m..=lmax {
            for k in 0..nt {
                let d = tab.dp(l, m, k);
                for kp in 0..nt {
                    mm[k * nt + kp] += d * tab.p(l, m, kp) * tw[kp] * 2.0 * PI;
                }
            }
        }
        let factor = if m == 0 { 1.0 } else { 2.0 } / n_phi as f64;
        for dj in 0..n_phi {
            let c = factor * (2.0 * PI * (m * dj) as f64 / n_phi as f64).cos();
            for kk in 0..nt * nt {
                table[kk * n_phi + dj] += c * mm[kk];
            }
        }
    }
    table
}

impl SurfaceGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean_spacing(&self) -> f64 {
        (self.area() / self.len() as f64).sqrt()
    }

    pub fn diameter(&self) -> f64 {
        self.kind.diameter()
    }

    /// Largest polynomial degree resolved by the ring count.
    pub fn band_limit(&self) -> usize {
        self.n_theta - 1
    }

    #[inline]
    pub fn ring_of(&self, i: usize) -> (usize, usize) {
        (i / self.n_phi, i % self.n_phi)
    }

    /// Nonzero entries (column, value) of row i of the θ-derivative matrix.
    pub fn theta_row(&self, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (k, j) = self.ring_of(i);
        let (nt, np) = (self.n_theta, self.n_phi);
        match &self.theta_diff {
            RingDiff::Spectral(tab) => {
                for kp in 0..nt {
                    let base = (k * nt + kp) * np;
                    for jp in 0..np {
                        let dj = (j + np - jp) % np;
                        out.push((kp * np + jp, tab[base + dj]));
                    }
                }
            }
            RingDiff::Lagrange(d) => {
                for kp in 0..nt {
                    out.push((kp * np + j, d[k * nt + kp]));
                }
            }
        }
    }

    /// Nonzero entries of row i of the φ-derivative matrix.
    pub fn phi_row(&self, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (k, j) = self.ring_of(i);
        let np = self.n_phi;
        for jp in 0..np {
            if jp != j {
                out.push((k * np + jp, self.phi_diff[(j + np - jp) % np]));
            }
        }
    }

    /// ∂_θ of a spinor field stored as 4N interleaved values.
    pub fn diff_theta(&self, f: &[C64]) -> Vec<C64> {
        self.apply_rows(f, |i, row| self.theta_row(i, row))
    }

    pub fn diff_phi(&self, f: &[C64]) -> Vec<C64> {
        self.apply_rows(f, |i, row| self.phi_row(i, row))
    }

    fn apply_rows(&self, f: &[C64], rows: impl Fn(usize, &mut Vec<(usize, f64)>)) -> Vec<C64> {
        assert_eq!(f.len(), 4 * self.len());
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        let mut row = Vec::new();
        for i in 0..self.len() {
            rows(i, &mut row);
            let mut acc = [C64::new(0.0, 0.0); 4];
            for &(jp, c) in &row {
                for (a, v) in acc.iter_mut().zip(&f[4 * jp..4 * jp + 4]) {
                    *a += v * c;
                }
            }
            out[4 * i..4 * i + 4].copy_from_slice(&acc);
        }
        out
    }

    /// Approximate distance from x to the surface: the nearest node distance.
    pub fn node_distance(&self, x: &Vec3) -> f64 {
        self.nodes.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)
    }

    /// Writes `x,y,z,nx,ny,nz,w` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,z,nx,ny,nz,w")?;
        for ((x, n), w) in self.nodes.iter().zip(&self.normals).zip(&self.weights) {
            writeln!(out, "{:e},{:e},{:e},{:e},{:e},{:e},{:e}", x[0], x[1], x[2], n[0], n[1], n[2], w)?;
        }
        Ok(())
    }

    pub fn shared(self) -> Arc<SurfaceGrid> {
        Arc::new(self)
    }

    /// Same chart and resolution.
    pub fn same_as(&self, other: &SurfaceGrid) -> bool {
        std::ptr::eq(self, other)
            || (self.kind == other.kind && self.n_theta == other.n_theta && self.n_phi == other.n_phi)
    }
}
