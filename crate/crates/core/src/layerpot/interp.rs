//! Local H(μ)-harmonic spinor fields used to regularize the layer potential
//! near its singularity.
//!
//! For a target node x_i the field U_i(t) (t = x − x_i) solves H(μ)U_i = 0
//! exactly, and iα·n U_i matches the density g to first order at x_i. The
//! potential of g − iα·n U_i then has a removable singularity at x_i, while
//! the potential of iα·n U_i equals U_i inside and 0 outside.

use nalgebra::SMatrix;
use num_complex::Complex64 as C64;

use crate::algebra::{alpha_dot, beta, DiracMatrices, Spinor, Vec3};
use crate::surface::SurfaceGrid;

pub(crate) type Mat412 = SMatrix<C64, 4, 12>;

const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Directions of the plane-wave-like building blocks.
pub(crate) const DIRS: [[f64; 3]; 9] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [R2, R2, 0.0],
    [R2, -R2, 0.0],
    [R2, 0.0, R2],
    [R2, 0.0, -R2],
    [0.0, R2, R2],
    [0.0, R2, -R2],
];

/// Direction pairs (ê, f̂) of the five gradient fields.
const PAIRS: [(usize, usize); 5] = [(0, 1), (1, 2), (3, 4), (5, 6), (7, 8)];

/// U_i(t)·d = (ma + Σ_d S_d(t) ps[d] + C_d(t) pc[d]) d, where d stacks
/// (g_i, ∂_θ g_i, ∂_φ g_i), S_d(t) = sinh(μ d·t)/μ and
/// C_d(t) = (cosh(μ d·t) − 1)/μ².
pub(crate) struct NodeInterp {
    pub ma: Mat412,
    pub ps: [Mat412; 9],
    pub pc: [Mat412; 9],
}

fn select(k: usize) -> Mat412 {
    let mut m = Mat412::zeros();
    for r in 0..4 {
        m[(r, 4 * k + r)] = C64::new(1.0, 0.0);
    }
    m
}

pub(crate) fn node_interp(grid: &SurfaceGrid, i: usize, mu: f64) -> NodeInterp {
    let d = DiracMatrices::standard();
    let i_unit = C64::i();
    let n = grid.normals[i];
    let (eth, eph) = (grid.dx_theta[i], grid.dx_phi[i]);
    let ni = alpha_dot(&n);
    let nth = alpha_dot(&grid.dn_theta[i]);
    let nph = alpha_dot(&grid.dn_phi[i]);
    let frame = nalgebra::Matrix3::from_columns(&[eth, eph, n]);
    let dual = frame.try_inverse().expect("degenerate surface chart");
    let f1 = Vec3::new(dual[(0, 0)], dual[(0, 1)], dual[(0, 2)]);
    let f2 = Vec3::new(dual[(1, 0)], dual[(1, 1)], dual[(1, 2)]);

    let ma: Mat412 = ni * select(0) * (-i_unit);
    let ba1 = d.beta * d.alpha1;
    let corr: Mat412 = ba1 * ma * (i_unit * mu);
    let bth: Mat412 = ni * (select(1) - nth * ma * i_unit) * (-i_unit) - corr * C64::from(eth[0]);
    let bph: Mat412 = ni * (select(2) - nph * ma * i_unit) * (-i_unit) - corr * C64::from(eph[0]);
    let c: Mat412 = -(ni * (alpha_dot(&f1) * bth + alpha_dot(&f2) * bph));
    let a: [Mat412; 3] = std::array::from_fn(|j| {
        bth * C64::from(f1[j]) + bph * C64::from(f2[j]) + c * C64::from(n[j])
    });
    let m = |j: usize, k: usize| -> Mat412 {
        (d.alpha(j) * a[k] + d.alpha(k) * a[j]) * C64::new(0.0, 0.1)
    };
    let q = [m(0, 0), m(0, 0) + m(1, 1), m(0, 1), m(0, 2), m(1, 2)];

    let mut ps = [Mat412::zeros(); 9];
    let mut pc = [Mat412::zeros(); 9];
    for (b, &(e, f)) in PAIRS.iter().enumerate() {
        for (dir, sign) in [(e, 1.0), (f, -1.0)] {
            let ad = alpha_dot(&Vec3::from(DIRS[dir]));
            ps[dir] += ad * q[b] * C64::new(0.0, -2.0 * sign);
            pc[dir] += beta() * q[b] * C64::from(2.0 * mu * sign);
        }
    }
    // value field cosh(μt₁)a + iμβα₁ S(t₁) a
    ps[0] += ba1 * ma * (i_unit * mu);
    pc[0] += ma * C64::from(mu * mu);
    NodeInterp { ma, ps, pc }
}

/// Values S(s) = sinh(μs)/μ and C(s) = (cosh(μs) − 1)/μ², stable for small μs.
#[inline]
pub(crate) fn sc_direct(mu: f64, s: f64) -> (f64, f64) {
    if mu == 0.0 {
        return (s, 0.5 * s * s);
    }
    let x = mu * s;
    if x.abs() < 0.5 {
        sc_series(mu, s)
    } else {
        ((x.sinh()) / mu, (x.cosh() - 1.0) / (mu * mu))
    }
}

#[inline]
fn sc_series(mu: f64, s: f64) -> (f64, f64) {
    let x2 = (mu * s) * (mu * s);
    // sinh(x)/x = Σ x^{2k}/(2k+1)!, (cosh x − 1)/x² = Σ x^{2k}/(2k+2)!
    let (mut ts, mut tc) = (1.0, 0.5);
    let (mut ss, mut sc) = (0.0, 0.0);
    let mut k = 0.0;
    loop {
        ss += ts;
        sc += tc;
        ts *= x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
        tc *= x2 / ((2.0 * k + 3.0) * (2.0 * k + 4.0));
        k += 1.0;
        if ts < 1e-17 * ss || k > 40.0 {
            break;
        }
    }
    (s * ss, s * s * sc)
}

/// Field weights for node pairs on one grid.
pub(crate) struct FieldWeights {
    mu: f64,
    mode: WeightMode,
}

enum WeightMode {
    Polynomial,
    Series,
    /// e^{±μ d·x_j} per node and direction.
    Exponential { pos: Vec<[f64; 9]>, neg: Vec<[f64; 9]> },
    Direct,
}

impl FieldWeights {
    pub fn new(grid: &SurfaceGrid, mu: f64) -> Self {
        let extent = grid.nodes.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mode = if mu == 0.0 {
            WeightMode::Polynomial
        } else if mu.abs() < 0.5 {
            WeightMode::Series
        } else if mu.abs() * extent < 200.0 {
            let proj = |x: &Vec3, d: &[f64; 3]| x[0] * d[0] + x[1] * d[1] + x[2] * d[2];
            let pos = grid.nodes.iter().map(|x| std::array::from_fn(|d| (mu * proj(x, &DIRS[d])).exp())).collect();
            let neg = grid.nodes.iter().map(|x| std::array::from_fn(|d| (-mu * proj(x, &DIRS[d])).exp())).collect();
            WeightMode::Exponential { pos, neg }
        } else {
            WeightMode::Direct
        };
        Self { mu, mode }
    }

    /// (S_d, C_d) for t = x_j − x_i.
    #[inline]
    pub fn pair(&self, i: usize, j: usize, t: &[f64; 3], s: &mut [f64; 9], c: &mut [f64; 9]) {
        let mu = self.mu;
        match &self.mode {
            WeightMode::Polynomial => {
                for d in 0..9 {
                    let v = DIRS[d][0] * t[0] + DIRS[d][1] * t[1] + DIRS[d][2] * t[2];
                    s[d] = v;
                    c[d] = 0.5 * v * v;
                }
            }
            WeightMode::Exponential { pos, neg } => {
                let (inv2, inv2sq) = (0.5 / mu, 0.5 / (mu * mu));
                let (pj, nj, pi, ni) = (&pos[j], &neg[j], &pos[i], &neg[i]);
                for d in 0..9 {
                    let ep = pj[d] * ni[d];
                    let em = nj[d] * pi[d];
                    s[d] = (ep - em) * inv2;
                    c[d] = (ep + em - 2.0) * inv2sq;
                }
            }
            WeightMode::Series | WeightMode::Direct => {
                for d in 0..9 {
                    let v = DIRS[d][0] * t[0] + DIRS[d][1] * t[1] + DIRS[d][2] * t[2];
                    (s[d], c[d]) = sc_direct(mu, v);
                }
            }
        }
    }

    /// (S_d, C_d) at an arbitrary displacement.
    #[cfg(test)]
    pub fn at(&self, t: &Vec3) -> ([f64; 9], [f64; 9]) {
        let mut s = [0.0; 9];
        let mut c = [0.0; 9];
        for d in 0..9 {
            let v = DIRS[d][0] * t[0] + DIRS[d][1] * t[1] + DIRS[d][2] * t[2];
            (s[d], c[d]) = sc_direct(self.mu, v);
        }
        (s, c)
    }
}

/// Local field with its data applied: U(t) = u0 + Σ_d S_d us[d] + C_d uc[d].
pub(crate) struct LocalField {
    pub u0: Spinor,
    pub us: [Spinor; 9],
    pub uc: [Spinor; 9],
}

impl LocalField {
    pub fn new(interp: &NodeInterp, data: &SMatrix<C64, 12, 1>) -> Self {
        Self {
            u0: interp.ma * data,
            us: std::array::from_fn(|d| interp.ps[d] * data),
            uc: std::array::from_fn(|d| interp.pc[d] * data),
        }
    }

    #[inline]
    pub fn eval(&self, s: &[f64; 9], c: &[f64; 9]) -> Spinor {
        let mut u = self.u0;
        for d in 0..9 {
            u += self.us[d] * C64::from(s[d]) + self.uc[d] * C64::from(c[d]);
        }
        u
    }
}

/// The matrix U(t) (4×12) acting on the stacked data.
#[cfg(test)]
pub(crate) fn field_matrix(interp: &NodeInterp, s: &[f64; 9], c: &[f64; 9]) -> Mat412 {
    let mut m = interp.ma;
    for d in 0..9 {
        m += interp.ps[d] * C64::from(s[d]) + interp.pc[d] * C64::from(c[d]);
    }
    m
}
