//! Point evaluation of Φ(g) and one-sided traces by off-surface extrapolation.

use std::sync::Arc;

use nalgebra::SMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::assemble::{ladder, phi_apply};
use super::interp::{node_interp, FieldWeights, LocalField};
use super::{assemble_cs, BoundaryOperator, LayerConfig};
use crate::algebra::{alpha_dot, DiracMatrices, Spinor, Vec3};
use crate::kernels::{phi, phi_coeffs};
use crate::surface::{SpinorTrace, SurfaceGrid};
use crate::{Error, Result};

/// Which side of the surface a trace is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The bounded component, approached along −n.
    Plus,
    /// The unbounded component, approached along +n.
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Plus => -1.0,
            Side::Minus => 1.0,
        }
    }
}

fn check_point(grid: &SurfaceGrid, x: &Vec3, mu: f64, cfg: &LayerConfig) -> Result<()> {
    if grid.kind.level_set(x).abs() < 1e-12 {
        return Err(Error::OnSurface);
    }
    let radius = cfg.ball_factor * grid.diameter();
    if mu == 0.0 && !grid.kind.contains(x) && x.norm() > radius {
        return Err(Error::OutsideBall(radius));
    }
    Ok(())
}

#[inline]
fn potential_at(grid: &SurfaceGrid, g: &[C64], x: &Vec3, mu: f64) -> Spinor {
    let mut acc = [C64::new(0.0, 0.0); 4];
    for (j, xj) in grid.nodes.iter().enumerate() {
        let mut p = phi_coeffs(mu, &[x[0] - xj[0], x[1] - xj[1], x[2] - xj[2]]);
        let w = grid.weights[j];
        p.b *= w;
        p.a.iter_mut().for_each(|a| *a *= w);
        let v = phi_apply(&p, &g[4 * j..4 * j + 4]);
        for r in 0..4 {
            acc[r] += v[r];
        }
    }
    Spinor::new(acc[0], acc[1], acc[2], acc[3])
}

/// Φ(g)(x) = Σ_j w_j φ_μ(x − x_j) g_j at points off the surface.
pub fn eval_layer_potential(g: &SpinorTrace, xs: &[Vec3], mu: f64, cfg: &LayerConfig) -> Result<Vec<Spinor>> {
    let grid = g.grid();
    for x in xs {
        check_point(grid, x, mu, cfg)?;
    }
    Ok(xs.par_iter().map(|x| potential_at(grid, g.as_slice(), x, mu)).collect())
}

/// |H(μ)Φ(g)(x)| with central differences of the given step.
pub fn harmonicity_check(g: &SpinorTrace, x: &Vec3, mu: f64, step: f64, cfg: &LayerConfig) -> Result<f64> {
    let grid = g.grid();
    check_point(grid, x, mu, cfg)?;
    let inside = grid.kind.contains(x);
    if grid.node_distance(x) <= step {
        return Err(Error::StencilCrossesSurface);
    }
    let d = DiracMatrices::standard();
    let mut out = d.beta * potential_at(grid, g.as_slice(), x, mu) * C64::from(mu);
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = step;
        let (xp, xm) = (x + e, x - e);
        if grid.kind.contains(&xp) != inside || grid.kind.contains(&xm) != inside {
            return Err(Error::StencilCrossesSurface);
        }
        let grad = (potential_at(grid, g.as_slice(), &xp, mu) - potential_at(grid, g.as_slice(), &xm, mu))
            / C64::from(2.0 * step);
        out += d.alpha(k) * grad * C64::new(0.0, -1.0);
    }
    Ok(out.norm())
}

/// An extrapolated trace with its per-node ladder diagnostics.
#[derive(Debug, Clone)]
pub struct OneSidedTrace {
    pub trace: SpinorTrace,
    /// Nodes whose ladder differences grew instead of shrinking.
    pub diverged: Vec<usize>,
    /// Largest last-step ladder difference over the nodes.
    pub last_step: f64,
}

/// Floor below which ladder differences count as converged.
const LADDER_FLOOR: f64 = 1e-10;

/// Φ(g)(x_i ∓ h n_i) on the ladder h_k, extrapolated to h = 0.
pub fn one_sided_trace_report(g: &SpinorTrace, side: Side, mu: f64, cfg: &LayerConfig) -> Result<OneSidedTrace> {
    let grid = g.grid().clone();
    let n = grid.len();
    let gs = g.as_slice();
    let dt = grid.diff_theta(gs);
    let dp = grid.diff_phi(gs);
    let fw = FieldWeights::new(&grid, mu);
    let in_n: Vec<_> = grid.normals.iter().map(|v| alpha_dot(v) * C64::i()).collect();
    let (h, cw) = ladder(&grid, cfg);
    let scale = gs.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let per_node: Vec<(Spinor, bool, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let interp = node_interp(&grid, i, mu);
            let mut d = SMatrix::<C64, 12, 1>::zeros();
            for r in 0..4 {
                d[r] = gs[4 * i + r];
                d[4 + r] = dt[4 * i + r];
                d[8 + r] = dp[4 * i + r];
            }
            let field = LocalField::new(&interp, &d);
            let xi = grid.nodes[i];
            let (mut s, mut c) = ([0.0; 9], [0.0; 9]);
            let mut dens = vec![C64::new(0.0, 0.0); 4 * n];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let t = grid.nodes[j] - xi;
                fw.pair(i, j, &[t[0], t[1], t[2]], &mut s, &mut c);
                let v = Spinor::from_column_slice(&gs[4 * j..4 * j + 4]) - in_n[j] * field.eval(&s, &c);
                dens[4 * j..4 * j + 4].copy_from_slice(v.as_slice());
            }
            let values: Vec<Spinor> = h
                .iter()
                .map(|hk| {
                    let y = xi + grid.normals[i] * (side.sign() * hk);
                    let mut v = potential_at(&grid, &dens, &y, mu);
                    if side == Side::Plus {
                        v += field.u0;
                    }
                    v
                })
                .collect();
            let mut out = Spinor::zeros();
            for (v, ck) in values.iter().zip(&cw) {
                out += v * C64::from(*ck);
            }
            let k = values.len();
            let first = (values[1] - values[0]).norm();
            let last = (values[k - 1] - values[k - 2]).norm();
            let diverged = last > first && last > LADDER_FLOOR * scale;
            (out, diverged, last)
        })
        .collect();

    let mut data = Vec::with_capacity(4 * n);
    let mut diverged = Vec::new();
    let mut last_step = 0.0f64;
    for (i, (v, bad, last)) in per_node.into_iter().enumerate() {
        data.extend(v.iter());
        if bad {
            diverged.push(i);
        }
        last_step = last_step.max(last);
    }
    Ok(OneSidedTrace { trace: SpinorTrace::new(grid, data)?, diverged, last_step })
}

/// The extrapolated one-sided trace C_±(g); fails if any node's ladder diverges.
pub fn one_sided_trace(g: &SpinorTrace, side: Side, mu: f64, cfg: &LayerConfig) -> Result<SpinorTrace> {
    let report = one_sided_trace_report(g, side, mu, cfg)?;
    if report.diverged.is_empty() {
        Ok(report.trace)
    } else {
        Err(Error::Extrapolation(report.diverged))
    }
}

/// Residuals of the reproducing formula for u = φ_μ(· − x₀)c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproducingResidual {
    /// max over the points of |Φ((iα·n)t u)(x) − u(x)|.
    pub field: f64,
    /// ‖𝒞_+(t u) − t u‖ in weighted L².
    pub trace: f64,
    pub trace_relative: f64,
}

/// Reproducing-formula residuals using the configured C_s discretization.
pub fn reproducing_residual(
    grid: &Arc<SurfaceGrid>,
    mu: f64,
    x0: &Vec3,
    c: &Spinor,
    xs: &[Vec3],
    cfg: &LayerConfig,
) -> Result<ReproducingResidual> {
    check_source(grid, x0)?;
    let cs = assemble_cs(grid, mu, cfg.method)?;
    reproducing_residual_with(&cs, mu, x0, c, xs, cfg)
}

fn check_source(grid: &SurfaceGrid, x0: &Vec3) -> Result<()> {
    if grid.kind.contains(x0) || grid.kind.level_set(x0).abs() < 1e-12 {
        return Err(Error::SourceInside);
    }
    Ok(())
}

/// As [`reproducing_residual`] with an already assembled C_s.
pub fn reproducing_residual_with(
    cs: &BoundaryOperator,
    mu: f64,
    x0: &Vec3,
    c: &Spinor,
    xs: &[Vec3],
    cfg: &LayerConfig,
) -> Result<ReproducingResidual> {
    let grid = cs.grid().clone();
    check_source(&grid, x0)?;
    for x in xs {
        if !grid.kind.contains(x) {
            return Err(Error::NotInterior([x[0], x[1], x[2]]));
        }
    }
    let u = |x: &Vec3| -> Result<Spinor> { Ok(phi(mu, &(x - x0))? * c) };
    let mut tu = SpinorTrace::zeros(&grid);
    for i in 0..grid.len() {
        tu.set_node(i, &u(&grid.nodes[i])?);
    }
    let dens = tu.map_nodes(|i| alpha_dot(&grid.normals[i]) * C64::i());
    let vals = eval_layer_potential(&dens, xs, mu, cfg)?;
    let mut field = 0.0f64;
    for (x, v) in xs.iter().zip(&vals) {
        field = field.max((v - u(x)?).norm());
    }
    let (cal_plus, _) = crate::calderon::make_projectors(cs, &grid)?;
    let diff = cal_plus.apply_trace(&tu)?.sub(&tu);
    let trace = diff.l2_norm();
    let base = tu.l2_norm();
    let trace_relative = if base > 0.0 { trace / base } else { 0.0 };
    Ok(ReproducingResidual { field, trace, trace_relative })
}
