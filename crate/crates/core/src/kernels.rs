//! Closed-form kernels: ψ_μ, φ_μ = H(μ)(ψ_μ Id), the Fourier symbol and the
//! split of the anticommutator kernel.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{alpha_dot, beta, Mat4, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiracParams {
    /// Kernel mass.
    pub mu: f64,
    /// Operator mass, carried as metadata by the models.
    pub m: f64,
    /// δ-shell coupling strength.
    pub tau: f64,
}

impl Default for DiracParams {
    fn default() -> Self {
        Self { mu: 0.0, m: 0.0, tau: 0.0 }
    }
}

/// e^{−|μ||x|} / (4π|x|).
pub fn psi(mu: f64, x: &Vec3) -> Result<f64> {
    let r = x.norm();
    if r == 0.0 {
        return Err(Error::Singular);
    }
    Ok(psi_r(mu, r))
}

#[inline]
pub(crate) fn psi_r(mu: f64, r: f64) -> f64 {
    (-mu.abs() * r).exp() / (4.0 * PI * r)
}

/// ψ_μ − ψ_0 as a function of r, smooth through r = 0.
pub fn psi_difference(mu: f64, r: f64) -> f64 {
    let m = mu.abs();
    let z = m * r;
    if z < 0.1 {
        // (e^{−z} − 1)/z = Σ_{n≥0} (−z)^n (−1)/(n+1)!
        let mut term = -1.0;
        let mut sum = 0.0;
        for n in 0..12 {
            sum += term;
            term *= -z / (n as f64 + 2.0);
        }
        m * sum / (4.0 * PI)
    } else {
        ((-z).exp() - 1.0) / (4.0 * PI * r)
    }
}

/// Coefficients of φ_μ(x) = b β + i Σ_k a_k α_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PhiCoeffs {
    pub b: f64,
    pub a: [f64; 3],
}

#[inline]
pub(crate) fn phi_coeffs(mu: f64, x: &[f64; 3]) -> PhiCoeffs {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let r = r2.sqrt();
    let m = mu.abs();
    let e = (-m * r).exp() / (4.0 * PI * r);
    let g = (1.0 + m * r) * e / r2;
    PhiCoeffs { b: mu * e, a: [g * x[0], g * x[1], g * x[2]] }
}

impl PhiCoeffs {
    pub fn matrix(&self) -> Mat4 {
        beta() * C64::from(self.b) + alpha_dot(&Vec3::from(self.a)) * C64::i()
    }
}

/// μβψ_μ(x) + i(1 + |μ||x|) e^{−|μ||x|} / (4π|x|³) (α·x).
pub fn phi(mu: f64, x: &Vec3) -> Result<Mat4> {
    if x.norm() == 0.0 {
        return Err(Error::Singular);
    }
    Ok(phi_coeffs(mu, &[x[0], x[1], x[2]]).matrix())
}

/// (α·ξ + μβ) / (|ξ|² + μ²).
pub fn fourier_symbol(mu: f64, xi: &Vec3) -> Result<Mat4> {
    let den = xi.norm_squared() + mu * mu;
    if den == 0.0 {
        return Err(Error::SymbolUndefined);
    }
    Ok((alpha_dot(xi) + beta() * C64::from(mu)) / C64::from(den))
}

/// K = (α·n_x)φ(x−y) + φ(x−y)(α·n_y) split as K₁ = 2(n_x·D_x)ψ(x−y) Id and
/// K₂ = φ(x−y)(α·(n_y − n_x)).
pub fn anticommutator_kernel_split(
    mu: f64,
    x: &Vec3,
    y: &Vec3,
    nx: &Vec3,
    ny: &Vec3,
) -> Result<(Mat4, Mat4)> {
    let z = x - y;
    let r = z.norm();
    if r == 0.0 {
        return Err(Error::Singular);
    }
    let m = mu.abs();
    // D = −i∇ and ∇ψ(z) = −(1 + |μ|r) e^{−|μ|r} z / (4πr³)
    let g = (1.0 + m * r) * (-m * r).exp() / (4.0 * PI * r * r * r);
    let k1 = Mat4::identity() * C64::new(0.0, 2.0 * g * nx.dot(&z));
    let k2 = phi(mu, &z)? * alpha_dot(&(ny - nx));
    Ok((k1, k2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{max_entry, DiracMatrices};
    use proptest::prelude::*;

    const FD_H: f64 = 1e-3;

    fn laplacian_fd(f: impl Fn(&Vec3) -> f64, x: &Vec3, h: f64) -> f64 {
        let mut s = -6.0 * f(x);
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            s += f(&(x + e)) + f(&(x - e));
        }
        s / (h * h)
    }

    /// Central-difference H(μ) = −iα·∇ + μβ applied to a matrix field.
    fn dirac_fd(mu: f64, f: impl Fn(&Vec3) -> Mat4, x: &Vec3, h: f64) -> Mat4 {
        let d = DiracMatrices::standard();
        let mut out = d.beta * f(x) * C64::from(mu);
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let grad = (f(&(x + e)) - f(&(x - e))) / C64::from(2.0 * h);
            out += d.alpha(k) * grad * C64::new(0.0, -1.0);
        }
        out
    }

    #[test]
    fn psi_values() {
        assert!((psi(0.0, &Vec3::x()).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-16);
        let v = psi(1.0, &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((v - (-1.0f64).exp() / (4.0 * PI)).abs() < 1e-16);
        assert!(matches!(psi(1.0, &Vec3::zeros()), Err(Error::Singular)));
    }

    #[test]
    fn psi_solves_modified_helmholtz() {
        let x = Vec3::new(0.4, -0.3, 0.7);
        let mu = 2.0;
        let res = |h: f64| {
            laplacian_fd(|y| -psi(mu, y).unwrap(), &x, h) + mu * mu * psi(mu, &x).unwrap()
        };
        let (r1, r2) = (res(2e-2).abs(), res(1e-2).abs());
        assert!(r2 < 1e-3);
        // second-order decay
        assert!(r1 / r2 > 3.5 && r1 / r2 < 4.5, "ratio {}", r1 / r2);
    }

    #[test]
    fn phi_at_e3_massless() {
        let p = phi(0.0, &Vec3::z()).unwrap();
        let expect = DiracMatrices::standard().alpha3 * C64::new(0.0, 1.0 / (4.0 * PI));
        assert!(max_entry(&(p - expect)) < 1e-16);
    }

    #[test]
    fn phi_matches_dirac_applied_to_psi() {
        // φ = H(μ)(ψ Id), by central differences of ψ
        for mu in [0.0, 1.0, -1.5] {
            let x = Vec3::new(0.3, 0.4, -0.2);
            let fd = dirac_fd(mu, |y| Mat4::identity() * C64::from(psi(mu, y).unwrap()), &x, FD_H);
            let p = phi(mu, &x).unwrap();
            assert!(max_entry(&(fd - p)) < 1e-4 * max_entry(&p), "mu {mu}");
        }
    }

    #[test]
    fn phi_is_dirac_harmonic() {
        let mu = 1.0;
        let x = Vec3::new(0.3, 0.4, 0.0);
        let res = |h| max_entry(&dirac_fd(mu, |y| phi(mu, y).unwrap(), &x, h));
        let (r1, r2) = (res(2e-3), res(1e-3));
        assert!(r2 < 1e-3);
        assert!(r1 / r2 > 3.5, "ratio {}", r1 / r2);
    }

    #[test]
    fn symbol_examples() {
        let d = DiracMatrices::standard();
        assert!(max_entry(&(fourier_symbol(1.0, &Vec3::zeros()).unwrap() - d.beta)) < 1e-16);
        assert!(max_entry(&(fourier_symbol(0.0, &Vec3::x()).unwrap() - d.alpha1)) < 1e-16);
        let xi = Vec3::new(1.0, 1.0, 0.0);
        let h = alpha_dot(&xi) + d.beta;
        assert!(max_entry(&(h * fourier_symbol(1.0, &xi).unwrap() - Mat4::identity())) < 1e-13);
        assert!(matches!(fourier_symbol(0.0, &Vec3::zeros()), Err(Error::SymbolUndefined)));
    }

    #[test]
    fn psi_difference_limit() {
        // ψ_μ − ψ_0 → −|μ|/(4π) along a ray
        for mu in [1.0, -2.0] {
            let lim = -f64::abs(mu) / (4.0 * PI);
            let mut prev = f64::INFINITY;
            for k in 1..8 {
                let r = 10f64.powi(-k);
                let direct = psi(mu, &Vec3::new(r, 0.0, 0.0)).unwrap() - psi(0.0, &Vec3::new(r, 0.0, 0.0)).unwrap();
                let smooth = psi_difference(mu, r);
                if k <= 4 {
                    assert!((direct - smooth).abs() < 1e-9 * (1.0 + 1.0 / r));
                }
                let err = (smooth - lim).abs();
                assert!(err < prev);
                prev = err;
            }
            assert!(prev < 1e-6);
        }
    }

    #[test]
    fn split_coincident_normals() {
        let x = Vec3::new(0.0, 0.0, 1.0);
        let y = Vec3::new(0.6, 0.0, 0.8);
        let n = Vec3::new(0.0, 0.6, 0.8);
        let (_, k2) = anticommutator_kernel_split(1.0, &x, &y, &n, &n).unwrap();
        assert!(max_entry(&k2) == 0.0);
        assert!(anticommutator_kernel_split(1.0, &x, &x, &n, &n).is_err());
    }

    #[test]
    fn split_weak_singularity_on_sphere() {
        // along a great circle K₁ ~ |x−y|^{-1}
        let x = Vec3::new(0.0, 0.0, 1.0);
        let mut scaled = Vec::new();
        for d in [1e-1, 1e-2, 1e-3] {
            let ang = 2.0 * (d / 2.0f64).asin();
            let y = Vec3::new(ang.sin(), 0.0, ang.cos());
            let (k1, k2) = anticommutator_kernel_split(1.0, &x, &y, &x, &y).unwrap();
            scaled.push((max_entry(&k1) * d, max_entry(&k2) * d));
        }
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(l, h), s| (l.min(s.0), h.max(s.0)));
        assert!(hi < 1.0 && hi / lo < 1.1, "{scaled:?}");
        assert!(scaled.iter().all(|s| s.1 < 1.0));
    }

    proptest! {
        #[test]
        fn phi_symmetries(mu in -3.0f64..3.0, v in prop::array::uniform3(-2.0f64..2.0)) {
            let x = Vec3::from(v);
            prop_assume!(x.norm() > 1e-3);
            let p = phi(mu, &x).unwrap();
            let q = phi(mu, &(-x)).unwrap();
            prop_assert!(max_entry(&(p.adjoint() - q)) <= 1e-13 * (1.0 + max_entry(&p)));
            prop_assert_eq!(psi(mu, &x).unwrap(), psi(mu, &(-x)).unwrap());
            let p0 = phi(0.0, &x).unwrap();
            prop_assert!(max_entry(&(p0 + phi(0.0, &(-x)).unwrap())) <= 1e-15 * (1.0 + max_entry(&p0)));
        }

        #[test]
        fn split_sums_to_anticommutator(mu in -2.0f64..2.0, a in 0.0f64..3.1, b in 0.0f64..6.2, c in 0.0f64..3.1, d in 0.0f64..6.2) {
            let pt = |t: f64, p: f64| Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
            let (x, y) = (pt(a, b), pt(c, d));
            prop_assume!((x - y).norm() > 1e-3);
            let (k1, k2) = anticommutator_kernel_split(mu, &x, &y, &x, &y).unwrap();
            let p = phi(mu, &(x - y)).unwrap();
            let full = alpha_dot(&x) * p + p * alpha_dot(&y);
            prop_assert!(max_entry(&(k1 + k2 - full)) <= 1e-13 * (1.0 + max_entry(&full)));
        }

        #[test]
        fn symbol_inverts_dirac_symbol(mu in -3.0f64..3.0, v in prop::array::uniform3(-3.0f64..3.0)) {
            let xi = Vec3::from(v);
            prop_assume!(xi.norm_squared() + mu * mu > 1e-6);
            let h = alpha_dot(&xi) + beta() * C64::from(mu);
            prop_assert!(max_entry(&(h * fourier_symbol(mu, &xi).unwrap() - Mat4::identity())) < 1e-12);
        }
    }
}
