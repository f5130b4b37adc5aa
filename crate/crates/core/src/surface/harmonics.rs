//! Spherical-harmonic transforms of spinor traces on sphere grids and the
//! spectral H^s norms built on them.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SpinorTrace, SurfaceGrid, SurfaceKind};
use crate::{Error, Result};

/// Orthonormal associated Legendre functions p_lm(t) (Condon–Shortley phase,
/// Y_lm = p_lm(cos θ) e^{imφ}) and their θ-derivatives, m ≥ 0.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    pub lmax: usize,
    nt: usize,
    p: Vec<f64>,
    dp: Vec<f64>,
}

impl LegendreTable {
    #[inline]
    fn idx(&self, l: usize, m: usize, k: usize) -> usize {
        (l * (l + 1) / 2 + m) * self.nt + k
    }

    #[inline]
    pub fn p(&self, l: usize, m: usize, k: usize) -> f64 {
        self.p[self.idx(l, m, k)]
    }

    #[inline]
    pub fn dp(&self, l: usize, m: usize, k: usize) -> f64 {
        self.dp[self.idx(l, m, k)]
    }
}

pub fn legendre_table(lmax: usize, t: &[f64]) -> LegendreTable {
    let nt = t.len();
    let size = (lmax + 1) * (lmax + 2) / 2 * nt;
    let mut tab = LegendreTable { lmax, nt, p: vec![0.0; size], dp: vec![0.0; size] };
    for (k, &tk) in t.iter().enumerate() {
        let st = (1.0 - tk * tk).sqrt();
        let mut pmm = (1.0 / (4.0 * PI)).sqrt();
        for m in 0..=lmax {
            if m > 0 {
                pmm *= -st * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
            }
            let i = tab.idx(m, m, k);
            tab.p[i] = pmm;
            if m < lmax {
                let i = tab.idx(m + 1, m, k);
                tab.p[i] = (2.0 * m as f64 + 3.0).sqrt() * tk * pmm;
            }
            for l in m + 2..=lmax {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                let v = a * (tk * tab.p(l - 1, m, k) - b * tab.p(l - 2, m, k));
                let i = tab.idx(l, m, k);
                tab.p[i] = v;
            }
        }
        // sin θ dp_lm/dθ = l t p_lm − sqrt((2l+1)(l²−m²)/(2l−1)) p_{l−1,m}
        for m in 0..=lmax {
            for l in m..=lmax {
                let (lf, mf) = (l as f64, m as f64);
                let prev = if l > m {
                    ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt() * tab.p(l - 1, m, k)
                } else {
                    0.0
                };
                let i = tab.idx(l, m, k);
                tab.dp[i] = (lf * tk * tab.p[i] - prev) / st;
            }
        }
    }
    tab
}

/// Per-component coefficients c^{(k)}_{l,m}, l ≤ lmax, stored at l² + l + m.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSpectrum {
    pub lmax: usize,
    coeffs: Vec<[C64; 4]>,
}

impl HarmonicSpectrum {
    pub fn zeros(lmax: usize) -> Self {
        Self { lmax, coeffs: vec![[C64::new(0.0, 0.0); 4]; (lmax + 1) * (lmax + 1)] }
    }

    fn slot(l: usize, m: i64) -> usize {
        debug_assert!(m.unsigned_abs() as usize <= l);
        ((l * l + l) as i64 + m) as usize
    }

    pub fn get(&self, l: usize, m: i64, comp: usize) -> C64 {
        self.coeffs[Self::slot(l, m)][comp]
    }

    pub fn set(&mut self, l: usize, m: i64, comp: usize, v: C64) {
        self.coeffs[Self::slot(l, m)][comp] = v;
    }

    /// A single unit coefficient.
    pub fn single(lmax: usize, l: usize, m: i64, comp: usize) -> Self {
        let mut s = Self::zeros(lmax);
        s.set(l, m, comp, C64::new(1.0, 0.0));
        s
    }

    /// Coefficients (1 + l(l+1))^{−1/4−δ/2} ξ_lm with ξ unimodular and
    /// seeded; f belongs to H^{−1/2} but not H^{1/2} as lmax → ∞.
    pub fn rough(lmax: usize, delta: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Self::zeros(lmax);
        for l in 0..=lmax {
            let amp = (1.0 + (l * (l + 1)) as f64).powf(-0.25 - delta / 2.0);
            for m in -(l as i64)..=l as i64 {
                for k in 0..4 {
                    let ang: f64 = rng.gen_range(0.0..2.0 * PI);
                    s.set(l, m, k, C64::from_polar(amp, ang));
                }
            }
        }
        s
    }

    /// Copy with all degrees above `l` removed (lmax kept).
    pub fn truncated(&self, l: usize) -> Self {
        let mut s = self.clone();
        for (i, c) in s.coeffs.iter_mut().enumerate() {
            if (i as f64).sqrt().floor() as usize > l {
                *c = [C64::new(0.0, 0.0); 4];
            }
        }
        s
    }

    /// Copy restricted to degrees ≤ l with lmax = l.
    pub fn resized(&self, l: usize) -> Self {
        let mut s = Self::zeros(l);
        let n = (l.min(self.lmax) + 1).pow(2);
        s.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        s
    }

    /// Σ (1 + l(l+1))^s |c|².
    pub fn weighted_norm_sq(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for l in 0..=self.lmax {
            let w = (1.0 + (l * (l + 1)) as f64).powf(s);
            let start = l * l;
            let band: f64 = self.coeffs[start..start + 2 * l + 1]
                .iter()
                .flat_map(|c| c.iter())
                .map(|z| z.norm_sqr())
                .sum();
            total += w * band;
        }
        total
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.weighted_norm_sq(s).sqrt()
    }

    /// Σ conj(a) b over all coefficients.
    pub fn dot(&self, other: &HarmonicSpectrum) -> C64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Coefficient-wise map with the degree.
    pub fn map_degree(&self, f: impl Fn(usize, C64) -> C64) -> Self {
        let mut s = self.clone();
        for l in 0..=self.lmax {
            for c in &mut s.coeffs[l * l..(l + 1) * (l + 1)] {
                for z in c.iter_mut() {
                    *z = f(l, *z);
                }
            }
        }
        s
    }
}

fn sphere_radius(grid: &SurfaceGrid) -> Result<f64> {
    match grid.kind {
        SurfaceKind::Sphere { radius } => Ok(radius),
        _ => Err(Error::NotSphere),
    }
}

pub fn sh_analyze(f: &SpinorTrace) -> Result<HarmonicSpectrum> {
    sh_analyze_to(f, f.grid().band_limit())
}

/// Coefficients with respect to harmonics normalized on the sphere of radius R.
pub fn sh_analyze_to(f: &SpinorTrace, lmax: usize) -> Result<HarmonicSpectrum> {
    let grid = f.grid();
    let radius = sphere_radius(grid)?;
    if lmax > grid.band_limit() {
        return Err(Error::BandLimit { degree: lmax, limit: grid.band_limit() });
    }
    let (nt, np) = (grid.n_theta, grid.n_phi);
    let tab = legendre_table(lmax, &grid.ring_t);
    let data = f.as_slice();
    let mut out = HarmonicSpectrum::zeros(lmax);
    // ring DFTs F_m(k) = Σ_j f(k,j) e^{−imφ_j}
    let mut fm = vec![[C64::new(0.0, 0.0); 4]; nt * (2 * lmax + 1)];
    for k in 0..nt {
        for (mi, m) in (-(lmax as i64)..=lmax as i64).enumerate() {
            let mut acc = [C64::new(0.0, 0.0); 4];
            for j in 0..np {
                let e = C64::from_polar(1.0, -2.0 * PI * (m * j as i64) as f64 / np as f64);
                let i = k * np + j;
                for c in 0..4 {
                    acc[c] += data[4 * i + c] * e;
                }
            }
            fm[k * (2 * lmax + 1) + mi] = acc;
        }
    }
    let scale = radius * 2.0 * PI / np as f64;
    for l in 0..=lmax {
        for m in -(l as i64)..=l as i64 {
            let am = m.unsigned_abs() as usize;
            let sign = if m < 0 && am % 2 == 1 { -1.0 } else { 1.0 };
            let mi = (m + lmax as i64) as usize;
            for c in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..nt {
                    acc += fm[k * (2 * lmax + 1) + mi][c] * (grid.ring_w[k] * sign * tab.p(l, am, k));
                }
                out.set(l, m, c, acc * scale);
            }
        }
    }
    Ok(out)
}

pub fn sh_synthesize(spec: &HarmonicSpectrum, grid: &Arc<SurfaceGrid>) -> Result<SpinorTrace> {
    let radius = sphere_radius(grid)?;
    if spec.lmax > grid.band_limit() {
        return Err(Error::BandLimit { degree: spec.lmax, limit: grid.band_limit() });
    }
    let lmax = spec.lmax;
    let (nt, np) = (grid.n_theta, grid.n_phi);
    let tab = legendre_table(lmax, &grid.ring_t);
    let mut data = vec![C64::new(0.0, 0.0); 4 * grid.len()];
    let mut ring = vec![[C64::new(0.0, 0.0); 4]; 2 * lmax + 1];
    for k in 0..nt {
        for (mi, m) in (-(lmax as i64)..=lmax as i64).enumerate() {
            let am = m.unsigned_abs() as usize;
            let sign = if m < 0 && am % 2 == 1 { -1.0 } else { 1.0 };
            let mut acc = [C64::new(0.0, 0.0); 4];
            for l in am..=lmax {
                let p = sign * tab.p(l, am, k) / radius;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += spec.get(l, m, c) * p;
                }
            }
            ring[mi] = acc;
        }
        for j in 0..np {
            let i = k * np + j;
            for (mi, m) in (-(lmax as i64)..=lmax as i64).enumerate() {
                let e = C64::from_polar(1.0, 2.0 * PI * (m * j as i64) as f64 / np as f64);
                for c in 0..4 {
                    data[4 * i + c] += ring[mi][c] * e;
                }
            }
        }
    }
    SpinorTrace::new(grid.clone(), data)
}

/// (Σ (1 + l(l+1))^s |c^{(k)}_{lm}|²)^{1/2} over the grid's full band.
pub fn sobolev_norm(f: &SpinorTrace, s: f64) -> Result<f64> {
    Ok(sh_analyze(f)?.sobolev_norm(s))
}

#[cfg(test)]
mod tests {
    use super::super::build_surface;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sphere(level: usize, radius: f64) -> Arc<SurfaceGrid> {
        build_surface(SurfaceKind::Sphere { radius }, level).unwrap().shared()
    }

    fn random_spectrum(lmax: usize, seed: u64) -> HarmonicSpectrum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = HarmonicSpectrum::zeros(lmax);
        for l in 0..=lmax {
            for m in -(l as i64)..=l as i64 {
                for c in 0..4 {
                    s.set(l, m, c, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                }
            }
        }
        s
    }

    #[test]
    fn constant_has_only_degree_zero() {
        let g = sphere(1, 1.0);
        let f = SpinorTrace::from_fn(&g, |_, _, _| [C64::new(1.0, 0.5), 0.0.into(), 2.0.into(), 0.0.into()].into());
        let s = sh_analyze(&f).unwrap();
        for l in 1..=s.lmax {
            for m in -(l as i64)..=l as i64 {
                for c in 0..4 {
                    assert!(s.get(l, m, c).norm() < 1e-13);
                }
            }
        }
        assert!((s.get(0, 0, 0) - C64::new(1.0, 0.5) * (4.0 * PI).sqrt()).norm() < 1e-12);
    }

    #[test]
    fn single_harmonic_recovered() {
        let g = sphere(1, 1.0);
        let f = sh_synthesize(&HarmonicSpectrum::single(3, 3, 1, 1), &g).unwrap();
        let s = sh_analyze(&f).unwrap();
        for l in 0..=s.lmax {
            for m in -(l as i64)..=l as i64 {
                for c in 0..4 {
                    let expect = if (l, m, c) == (3, 1, 1) { 1.0 } else { 0.0 };
                    assert!((s.get(l, m, c) - expect).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn y10_matches_closed_form() {
        let g = sphere(0, 1.0);
        let f = sh_synthesize(&HarmonicSpectrum::single(1, 1, 0, 0), &g).unwrap();
        for i in 0..g.len() {
            let expect = (3.0 / (4.0 * PI)).sqrt() * g.nodes[i][2];
            assert!((f.node(i)[0] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn sobolev_examples() {
        let g = sphere(1, 1.0);
        for l in [0usize, 1, 4] {
            let f = sh_synthesize(&HarmonicSpectrum::single(l, l, 0, 2), &g).unwrap();
            let n = sobolev_norm(&f, 0.5).unwrap();
            assert!((n - (1.0 + (l * (l + 1)) as f64).powf(0.25)).abs() < 1e-12);
            let f3 = f.scaled(C64::from(3.0));
            for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                assert!((sobolev_norm(&f3, s).unwrap() - 3.0 * sobolev_norm(&f, s).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_sphere_rejected() {
        let g = build_surface(SurfaceKind::Torus { major: 2.0, minor: 0.5 }, 0).unwrap().shared();
        let f = SpinorTrace::zeros(&g);
        assert!(matches!(sh_analyze(&f), Err(Error::NotSphere)));
        assert!(matches!(sobolev_norm(&f, 0.5), Err(Error::NotSphere)));
        assert!(sh_synthesize(&HarmonicSpectrum::zeros(1), &g).is_err());
        let s = sphere(0, 1.0);
        assert!(matches!(sh_synthesize(&HarmonicSpectrum::zeros(3), &s), Err(Error::BandLimit { .. })));
    }

    #[test]
    fn rough_spectrum_is_deterministic() {
        assert_eq!(HarmonicSpectrum::rough(6, 0.05, 9), HarmonicSpectrum::rough(6, 0.05, 9));
        assert_ne!(HarmonicSpectrum::rough(6, 0.05, 9), HarmonicSpectrum::rough(6, 0.05, 10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn round_trip_and_parseval(seed in 0u64..1000, radius in 0.5f64..2.0, lmax in 0usize..12) {
            let g = sphere(2, radius);
            let s = random_spectrum(lmax, seed);
            let f = sh_synthesize(&s, &g).unwrap();
            let back = sh_analyze_to(&f, lmax).unwrap();
            let err = s.coeffs.iter().zip(&back.coeffs)
                .flat_map(|(a, b)| a.iter().zip(b.iter()))
                .map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-10);
            let l2 = f.l2_norm();
            prop_assert!((s.sobolev_norm(0.0) - l2).abs() < 1e-8 * (1.0 + l2));
            prop_assert!((sobolev_norm(&f, 0.0).unwrap() - l2).abs() < 1e-8 * (1.0 + l2));
        }

        #[test]
        fn duality_of_half_norms(seed in 0u64..1000) {
            // sup over g of |⟨f,g⟩| / ‖g‖_{1/2} is attained at c_g = (1+l(l+1))^{−1/2} c_f
            let g = sphere(1, 1.0);
            let s = random_spectrum(5, seed);
            let f = sh_synthesize(&s, &g).unwrap();
            let minus = sobolev_norm(&f, -0.5).unwrap();
            let opt = s.map_degree(|l, z| z / (1.0 + (l * (l + 1)) as f64).sqrt());
            let go = sh_synthesize(&opt, &g).unwrap();
            let ratio = f.inner(&go).norm() / opt.sobolev_norm(0.5);
            prop_assert!((ratio - minus).abs() < 1e-8 * minus);
            for k in 0..5u64 {
                let other = random_spectrum(5, seed * 31 + k + 1);
                let gr = sh_synthesize(&other, &g).unwrap();
                prop_assert!(f.inner(&gr).norm() / other.sobolev_norm(0.5) <= minus * (1.0 + 1e-10));
            }
        }

        #[test]
        fn norms_nondecreasing_in_s(seed in 0u64..1000) {
            let g = sphere(1, 1.0);
            let s = random_spectrum(5, seed);
            let mut s = s.map_degree(|l, z| if l == 0 { 0.0.into() } else { z });
            let n0 = s.sobolev_norm(0.0);
            s = s.map_degree(|_, z| z / n0);
            let f = sh_synthesize(&s, &g).unwrap();
            let mut prev = 0.0;
            for k in 0..=8 {
                let v = sobolev_norm(&f, -1.0 + 0.25 * k as f64).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
        }
    }
}
