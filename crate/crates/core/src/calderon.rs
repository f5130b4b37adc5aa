//! Calderón projectors, their stars, the anticommutator 𝒜 = {α·n, C_s}
//! and the identity suite.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::layerpot::{
    assemble_cs, assemble_one_sided, assemble_trace_ops, adjoint_of, ApplyCache, BoundaryOperator, CsMethod,
    LayerConfig, ProbeBasis, Side,
};
use crate::surface::{sh_synthesize, HarmonicSpectrum, SurfaceGrid};
use crate::{Error, Result};

/// Names of the identity residuals, in report order.
pub const IDENTITY_NAMES: [&str; 8] = [
    "idempotency_plus",
    "idempotency_minus",
    "partition",
    "star_partition",
    "swap",
    "plemelj_square",
    "anticommutator_consistency",
    "cs_self_adjointness",
];

/// Default degree of the probe space used for induced norms.
pub const PROBE_DEGREE: usize = 4;

const ONE: C64 = C64::new(1.0, 0.0);

/// 𝒞_± = 1/2 ± i C_s(α·n).
pub fn make_projectors(cs: &BoundaryOperator, grid: &Arc<SurfaceGrid>) -> Result<(BoundaryOperator, BoundaryOperator)> {
    let id = BoundaryOperator::identity(grid);
    let csn = cs.compose(&BoundaryOperator::normal_multiplier(grid))?;
    let plus = BoundaryOperator::combination(&[(C64::from(0.5), &id), (C64::new(0.0, 1.0), &csn)])?;
    let minus = BoundaryOperator::combination(&[(C64::from(0.5), &id), (C64::new(0.0, -1.0), &csn)])?;
    Ok((plus.with_label("Cal_+"), minus.with_label("Cal_-")))
}

/// 𝒞_+* = −i(α·n)C_− when `side` is Plus (pass C_−), 𝒞_−* = i(α·n)C_+ when
/// it is Minus (pass C_+).
pub fn make_star(trace_op: &BoundaryOperator, grid: &Arc<SurfaceGrid>, side: Side) -> Result<BoundaryOperator> {
    let n = BoundaryOperator::normal_multiplier(grid);
    let (c, label) = match side {
        Side::Plus => (C64::new(0.0, -1.0), "Cal_+*"),
        Side::Minus => (C64::new(0.0, 1.0), "Cal_-*"),
    };
    Ok(n.compose(trace_op)?.scale(c).with_label(label))
}

/// 𝒜 = (α·n)C_s + C_s(α·n).
pub fn make_anticommutator(cs: &BoundaryOperator, grid: &Arc<SurfaceGrid>) -> Result<BoundaryOperator> {
    let n = BoundaryOperator::normal_multiplier(grid);
    Ok(n.compose(cs)?.add(&cs.compose(&n)?)?.with_label("A"))
}

/// Every operator of the suite on one grid.
#[derive(Debug, Clone)]
pub struct CalderonOps {
    pub grid: Arc<SurfaceGrid>,
    pub cs: BoundaryOperator,
    /// One-sided trace operators C_±.
    pub trace_plus: BoundaryOperator,
    pub trace_minus: BoundaryOperator,
    pub cal_plus: BoundaryOperator,
    pub cal_minus: BoundaryOperator,
    pub star_plus: BoundaryOperator,
    pub star_minus: BoundaryOperator,
    pub anticommutator: BoundaryOperator,
}

impl CalderonOps {
    /// Assembles C_s with the configured method. With off-surface traces the
    /// one-sided operators are the extrapolated ones, otherwise the Plemelj
    /// combinations of C_s.
    pub fn assemble(grid: &Arc<SurfaceGrid>, mu: f64, cfg: &LayerConfig) -> Result<Self> {
        match cfg.method {
            CsMethod::Offsurface => {
                let (cs, jump) = assemble_one_sided(grid, mu, cfg)?;
                let plus = BoundaryOperator::combination(&[(ONE, &cs), (C64::from(0.5), &jump)])?.with_label("C_+");
                let minus = BoundaryOperator::combination(&[(ONE, &cs), (C64::from(-0.5), &jump)])?.with_label("C_-");
                Self::from_parts(cs, plus, minus)
            }
            CsMethod::PvDirect => Self::from_cs(assemble_cs(grid, mu, CsMethod::PvDirect)?),
        }
    }

    pub fn from_cs(cs: BoundaryOperator) -> Result<Self> {
        let (plus, minus) = assemble_trace_ops(&cs, cs.grid())?;
        Self::from_parts(cs, plus, minus)
    }

    pub fn from_parts(cs: BoundaryOperator, trace_plus: BoundaryOperator, trace_minus: BoundaryOperator) -> Result<Self> {
        let grid = cs.grid().clone();
        let (cal_plus, cal_minus) = make_projectors(&cs, &grid)?;
        let star_plus = make_star(&trace_minus, &grid, Side::Plus)?;
        let star_minus = make_star(&trace_plus, &grid, Side::Minus)?;
        let anticommutator = make_anticommutator(&cs, &grid)?;
        Ok(Self { grid, cs, trace_plus, trace_minus, cal_plus, cal_minus, star_plus, star_minus, anticommutator })
    }

    /// The residual operators named in [`IDENTITY_NAMES`]; swap has two.
    fn residual_operators(&self) -> Result<Vec<(&'static str, BoundaryOperator)>> {
        let g = &self.grid;
        let id = BoundaryOperator::identity(g);
        let n = BoundaryOperator::normal_multiplier(g);
        let sub = |a: &BoundaryOperator, b: &BoundaryOperator| a.sub(b);
        let csn = self.cs.compose(&n)?;
        Ok(vec![
            ("idempotency_plus", sub(&self.cal_plus.compose(&self.cal_plus)?, &self.cal_plus)?),
            ("idempotency_minus", sub(&self.cal_minus.compose(&self.cal_minus)?, &self.cal_minus)?),
            ("partition", sub(&self.cal_plus.add(&self.cal_minus)?, &id)?),
            ("star_partition", sub(&self.star_plus.add(&self.star_minus)?, &id)?),
            ("swap", sub(&n.compose(&self.cal_plus)?, &self.star_minus.compose(&n)?)?),
            ("swap", sub(&n.compose(&self.cal_minus)?, &self.star_plus.compose(&n)?)?),
            (
                "plemelj_square",
                BoundaryOperator::combination(&[(C64::from(-4.0), &csn.compose(&csn)?), (C64::from(-1.0), &id)])?,
            ),
            (
                "anticommutator_consistency",
                BoundaryOperator::combination(&[
                    (ONE, &self.cal_plus),
                    (-ONE, &self.star_plus),
                    (C64::new(0.0, -1.0), &self.anticommutator),
                ])?,
            ),
            ("cs_self_adjointness", sub(&self.cs, &adjoint_of(&self.cs))?),
        ])
    }

    /// Induced-norm residuals on the probe space, in [`IDENTITY_NAMES`] order.
    pub fn residuals(&self, probe: &ProbeBasis) -> Result<Vec<(&'static str, f64)>> {
        let cache = ApplyCache::new();
        let mut out: Vec<(&'static str, f64)> = Vec::with_capacity(IDENTITY_NAMES.len());
        for (name, op) in self.residual_operators()? {
            let v = op.induced_norm_cached(probe, &cache)?;
            match out.iter_mut().find(|(k, _)| *k == name) {
                Some(slot) => slot.1 = slot.1.max(v),
                None => out.push((name, v)),
            }
        }
        Ok(out)
    }
}

/// Identity residuals of one (surface, level, μ) case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub surface: String,
    pub level: usize,
    pub mu: f64,
    pub residuals: Vec<(&'static str, f64)>,
}

impl ResidualReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }

    /// Rows `surface,level,mu,identity,residual`.
    pub fn write_csv<W: Write>(reports: &[ResidualReport], mut out: W) -> Result<()> {
        writeln!(out, "surface,level,mu,identity,residual")?;
        for r in reports {
            for (name, v) in &r.residuals {
                writeln!(out, "{},{},{},{},{:.6e}", r.surface, r.level, r.mu, name, v)?;
            }
        }
        Ok(())
    }
}

/// Assembles the suite and measures every identity residual.
pub fn identity_residuals(grid: &Arc<SurfaceGrid>, mu: f64, cfg: &LayerConfig, probe_degree: usize) -> Result<ResidualReport> {
    let ops = CalderonOps::assemble(grid, mu, cfg)?;
    let probe = ProbeBasis::new(grid, probe_degree)?;
    Ok(ResidualReport {
        surface: grid.kind.to_string(),
        level: grid.level,
        mu,
        residuals: ops.residuals(&probe)?,
    })
}

/// Average L² gain ‖A f_l‖/‖f_l‖ over spherical harmonics f_l of each degree,
/// with orders {0, 1, l/2, l} and all four components.
pub fn smoothing_profile(a: &BoundaryOperator, degrees: &[usize]) -> Result<Vec<(usize, f64)>> {
    let grid = a.grid().clone();
    if !grid.kind.is_sphere() {
        return Err(Error::NotSphere);
    }
    let limit = grid.band_limit();
    let mut out = Vec::with_capacity(degrees.len());
    for &l in degrees {
        if l > limit {
            return Err(Error::BandLimit { degree: l, limit });
        }
        let mut orders = vec![0, 1.min(l), l / 2, l];
        orders.sort_unstable();
        orders.dedup();
        let mut inputs = Vec::new();
        for &m in &orders {
            for comp in 0..4 {
                let f = sh_synthesize(&HarmonicSpectrum::single(l, l, m as i64, comp), &grid)?;
                inputs.push(f);
            }
        }
        let block: Vec<C64> = inputs.iter().flat_map(|f| f.as_slice().iter().copied()).collect();
        let images = a.apply(&block, inputs.len())?;
        let dim = 4 * grid.len();
        let mut total = 0.0;
        for (k, f) in inputs.iter().enumerate() {
            let af = crate::surface::SpinorTrace::new(grid.clone(), images[k * dim..(k + 1) * dim].to_vec())?;
            total += af.l2_norm() / f.l2_norm();
        }
        out.push((l, total / inputs.len() as f64));
    }
    Ok(out)
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Spinor;
    use crate::kernels::anticommutator_kernel_split;
    use crate::surface::{build_surface, SpinorTrace, SurfaceKind};

    fn sphere(level: usize) -> Arc<SurfaceGrid> {
        build_surface(SurfaceKind::Sphere { radius: 1.0 }, level).unwrap().shared()
    }

    #[test]
    fn report_has_all_names_and_exact_partition() {
        let g = sphere(1);
        for method in [CsMethod::Offsurface, CsMethod::PvDirect] {
            let cfg = LayerConfig { method, ..LayerConfig::default() };
            let r = identity_residuals(&g, 1.0, &cfg, PROBE_DEGREE).unwrap();
            let names: Vec<_> = r.residuals.iter().map(|(k, _)| *k).collect();
            assert_eq!(names, IDENTITY_NAMES);
            assert!(r.get("partition").unwrap() < 1e-13);
            assert!(r.residuals.iter().all(|(_, v)| v.is_finite()));
            if method == CsMethod::PvDirect {
                for k in ["star_partition", "swap", "anticommutator_consistency"] {
                    assert!(r.get(k).unwrap() < 1e-12, "{k}");
                }
            }
        }
    }

    #[test]
    fn residuals_decrease_on_the_sphere() {
        let cfg = LayerConfig::default();
        let reports: Vec<_> = (0..3).map(|l| identity_residuals(&sphere(l), 1.0, &cfg, 2).unwrap()).collect();
        for name in ["idempotency_plus", "star_partition", "swap", "plemelj_square", "anticommutator_consistency"] {
            let v: Vec<f64> = reports.iter().map(|r| r.get(name).unwrap()).collect();
            assert!(v[2] < v[0] && v[2] < v[1], "{name}: {v:?}");
        }
    }

    #[test]
    fn residuals_are_even_in_mu() {
        let cfg = LayerConfig::default();
        let a = identity_residuals(&sphere(1), 1.0, &cfg, PROBE_DEGREE).unwrap();
        let b = identity_residuals(&sphere(1), -1.0, &cfg, PROBE_DEGREE).unwrap();
        for ((k, x), (_, y)) in a.residuals.iter().zip(&b.residuals) {
            if *k != "partition" {
                assert!((x - y).abs() <= 0.1 * x.max(*y), "{k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn star_of_zero_is_zero() {
        let g = sphere(0);
        let zero = BoundaryOperator::zero(&g);
        let f = SpinorTrace::from_fn(&g, |_, x, _| Spinor::new(C64::from(x[0]), C64::from(1.0), C64::i(), C64::from(x[2])));
        for side in [Side::Plus, Side::Minus] {
            assert_eq!(make_star(&zero, &g, side).unwrap().apply_trace(&f).unwrap().l2_norm(), 0.0);
        }
    }

    #[test]
    fn anticommutator_adjoint_defect_shrinks() {
        let defects: Vec<f64> = (0..3)
            .map(|level| {
                let g = sphere(level);
                let cs = assemble_cs(&g, 1.0, CsMethod::PvDirect).unwrap();
                let a = make_anticommutator(&cs, &g).unwrap();
                let probe = ProbeBasis::new(&g, 2).unwrap();
                a.sub(&adjoint_of(&a)).unwrap().induced_norm(&probe).unwrap()
            })
            .collect();
        assert!(defects[2] < defects[1] && defects[1] < defects[0], "{defects:?}");
    }

    #[test]
    fn anticommutator_kernel_sample_obeys_split_bound() {
        // nearby nodes of a large sphere, flat-normal limit
        let r = 50.0;
        let x = crate::algebra::Vec3::new(0.0, 0.0, r);
        let y = crate::algebra::Vec3::new(0.3, 0.0, (r * r - 0.09f64).sqrt());
        let (nx, ny) = (x / r, y / r);
        let (k1, k2) = anticommutator_kernel_split(1.0, &x, &y, &nx, &ny).unwrap();
        let phi = crate::kernels::phi(1.0, &(x - y)).unwrap();
        let full = crate::algebra::alpha_dot(&nx) * phi + phi * crate::algebra::alpha_dot(&ny);
        let norm = |m: &crate::algebra::Mat4| m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm(&full) <= norm(&k1) + norm(&k2) + 1e-12);
    }

    #[test]
    fn smoothing_gain_decays() {
        let g = sphere(2);
        let cs = assemble_cs(&g, 1.0, CsMethod::PvDirect).unwrap();
        let a = make_anticommutator(&cs, &g).unwrap();
        let prof = smoothing_profile(&a, &[0, 2, 4, 8]).unwrap();
        assert!(prof[0].1.is_finite());
        for w in prof[1..].windows(2) {
            assert!(w[1].1 <= w[0].1, "{prof:?}");
        }
        let pts: Vec<_> = prof[1..].iter().map(|(l, v)| (*l as f64, *v)).collect();
        assert!(loglog_slope(&pts) < -0.8, "{prof:?}");
        let torus = build_surface(SurfaceKind::Torus { major: 2.0, minor: 0.7 }, 0).unwrap().shared();
        assert!(matches!(smoothing_profile(&BoundaryOperator::identity(&torus), &[2]), Err(Error::NotSphere)));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<_> = [2.0, 4.0, 8.0].iter().map(|x: &f64| (*x, 3.0 * x.powf(-1.5))).collect();
        assert!((loglog_slope(&pts) + 1.5).abs() < 1e-12);
    }
}
