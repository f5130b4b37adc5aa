//! Dirac matrices and the pointwise boundary matrices built from them.

use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector3, Vector4};
use num_complex::Complex64 as C64;

use crate::{Error, Result};

pub type Mat4 = Matrix4<C64>;
pub type Mat8 = SMatrix<C64, 8, 8>;
pub type Vec3 = Vector3<f64>;
pub type Spinor = Vector4<C64>;

/// Accepted deviation of a normal from unit length.
pub const NORMAL_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiracMatrices {
    pub alpha1: Mat4,
    pub alpha2: Mat4,
    pub alpha3: Mat4,
    pub beta: Mat4,
}

fn pauli() -> [Matrix2<C64>; 3] {
    [
        Matrix2::new(ZERO, ONE, ONE, ZERO),
        Matrix2::new(ZERO, -I, I, ZERO),
        Matrix2::new(ONE, ZERO, ZERO, -ONE),
    ]
}

fn off_diagonal(s: &Matrix2<C64>) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(s);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(s);
    m
}

impl DiracMatrices {
    /// Standard representation: α_j = [[0, σ_j], [σ_j, 0]], β = diag(I₂, −I₂).
    pub fn standard() -> &'static DiracMatrices {
        static CELL: OnceLock<DiracMatrices> = OnceLock::new();
        CELL.get_or_init(|| {
            let [s1, s2, s3] = pauli();
            DiracMatrices {
                alpha1: off_diagonal(&s1),
                alpha2: off_diagonal(&s2),
                alpha3: off_diagonal(&s3),
                beta: Mat4::from_diagonal(&Vector4::new(ONE, ONE, -ONE, -ONE)),
            }
        })
    }

    pub fn alpha(&self, j: usize) -> &Mat4 {
        match j {
            0 => &self.alpha1,
            1 => &self.alpha2,
            2 => &self.alpha3,
            _ => panic!("alpha index {j} out of range"),
        }
    }
}

pub fn beta() -> &'static Mat4 {
    &DiracMatrices::standard().beta
}

/// Σ_j v_j α_j.
pub fn alpha_dot(v: &Vec3) -> Mat4 {
    let d = DiracMatrices::standard();
    d.alpha1 * C64::from(v[0]) + d.alpha2 * C64::from(v[1]) + d.alpha3 * C64::from(v[2])
}

pub fn check_unit(n: &Vec3) -> Result<()> {
    let len = n.norm();
    if (len - 1.0).abs() > NORMAL_TOL || !len.is_finite() {
        return Err(Error::NonUnitNormal(len));
    }
    Ok(())
}

/// MIT-bag matrix B = −iβ(α·n).
pub fn mit_matrix(n: &Vec3) -> Result<Mat4> {
    check_unit(n)?;
    Ok(beta() * alpha_dot(n) * (-I))
}

/// (P_+, P_−) = ((Id + B)/2, (Id − B)/2).
pub fn mit_projectors(n: &Vec3) -> Result<(Mat4, Mat4)> {
    let b = mit_matrix(n)?;
    let id = Mat4::identity();
    let half = C64::from(0.5);
    Ok(((id + b) * half, (id - b) * half))
}

/// P_τ = τ/2 + i(α·n).
pub fn p_tau(n: &Vec3, tau: f64) -> Mat4 {
    Mat4::identity() * C64::from(tau / 2.0) + alpha_dot(n) * I
}

/// R_τ = (1 − τ²/4 + τ(iα·n)) / (τ²/4 + 1), the transfer t u_+ = R_τ t u_−.
pub fn r_tau(n: &Vec3, tau: f64) -> Mat4 {
    let q = tau * tau / 4.0;
    (Mat4::identity() * C64::from(1.0 - q) + alpha_dot(n) * (I * tau)) / C64::from(q + 1.0)
}

/// Left-hand block matrix [[τ/2, −iα·n], [iα·n, τ/2]] of the δ-shell system.
pub fn shell_block_matrix(n: &Vec3, tau: f64) -> Mat8 {
    let an = alpha_dot(n);
    let diag = Mat4::identity() * C64::from(tau / 2.0);
    let mut m = Mat8::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&diag);
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(&diag);
    m.fixed_view_mut::<4, 4>(0, 4).copy_from(&(an * (-I)));
    m.fixed_view_mut::<4, 4>(4, 0).copy_from(&(an * I));
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionParams {
    pub tau: f64,
    /// ±1 at the critical couplings τ = ±2.
    pub epsilon: Option<f64>,
}

impl TransmissionParams {
    pub fn new(tau: f64) -> Self {
        let epsilon = (tau.abs() == 2.0).then(|| tau / 2.0);
        Self { tau, epsilon }
    }

    pub fn is_critical(&self) -> bool {
        self.epsilon.is_some()
    }
}

/// Largest entry modulus.
pub fn max_entry<const R: usize, const C: usize>(m: &SMatrix<C64, R, C>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of the upper-left and lower-right 2×2 blocks.
pub fn diagonal_block_size(m: &Mat4) -> f64 {
    let ul = m.fixed_view::<2, 2>(0, 0).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lr = m.fixed_view::<2, 2>(2, 2).iter().map(|z| z.norm()).fold(0.0, f64::max);
    ul.max(lr)
}

/// Smallest singular value of the shell block, by SVD.
pub fn shell_sigma_min(n: &Vec3, tau: f64) -> f64 {
    let m = shell_block_matrix(n, tau);
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Closed form ||τ| − 2| / 2.
pub fn shell_sigma_min_exact(tau: f64) -> f64 {
    (tau.abs() - 2.0).abs() / 2.0
}
