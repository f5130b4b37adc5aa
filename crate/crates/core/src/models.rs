//! MIT-bag boundary algebra and the δ-shell transmission problem.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{alpha_dot, beta, mit_projectors, p_tau, shell_block_matrix, TransmissionParams};
use crate::calderon::CalderonOps;
use crate::kernels::DiracParams;
use crate::layerpot::{cs_matrix_free, ApplyCache, LayerConfig};
use crate::surface::{sh_synthesize, sobolev_norm, HarmonicSpectrum, SpinorTrace, SurfaceGrid};
use crate::{Error, Result};

const I: C64 = C64::new(0.0, 1.0);

fn apply_n(f: &SpinorTrace) -> SpinorTrace {
    let g = f.grid().clone();
    f.map_nodes(|i| alpha_dot(&g.normals[i]))
}

fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Σ_i w_i ⟨(−iα·n_i) f_i, g_i⟩.
pub fn mit_boundary_form(f: &SpinorTrace, g: &SpinorTrace) -> Result<C64> {
    f.check_same_grid(g)?;
    Ok(apply_n(f).scaled(-I).inner(g))
}

/// Node-wise P_+ projection, so that B f = f.
pub fn mit_project(f: &SpinorTrace) -> Result<SpinorTrace> {
    let grid = f.grid().clone();
    let blocks = grid.normals.iter().map(|n| mit_projectors(n).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
    Ok(f.map_nodes(|i| blocks[i]))
}

/// Residuals of the MIT regularity bootstrap, relative to the input norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MitBootstrap {
    /// 𝒞_+(t u) against −iβ(α·n)(𝒞_−(t u) + i𝒜(t u)).
    pub residual: f64,
    /// Same with the opposite sign on the right-hand side.
    pub literal_residual: f64,
    /// max over ± of ‖𝒞_±(βf) − β𝒞_±(f)‖.
    pub beta_commutation: f64,
    /// max over ± of ‖𝒞_±(βf) + β𝒞_±(f)‖.
    pub beta_anticommutation: f64,
}

/// Runs the bootstrap check on `t_u` (projected with P_+ first) with
/// operators assembled at μ = 0. The β relations use `t_u` unprojected.
pub fn mit_bootstrap_residual(grid: &Arc<SurfaceGrid>, t_u: &SpinorTrace, cfg: &LayerConfig) -> Result<MitBootstrap> {
    let ops = CalderonOps::assemble(grid, 0.0, cfg)?;
    mit_bootstrap_with(&ops, t_u)
}

/// Bootstrap check with prebuilt operators. 𝒞_± on the left are the direct
/// ones, iC_+(α·n) and −iC_−(α·n); the right-hand side is composed from C_s.
pub fn mit_bootstrap_with(ops: &CalderonOps, t_u: &SpinorTrace) -> Result<MitBootstrap> {
    if !t_u.grid().same_as(&ops.grid) {
        return Err(Error::GridMismatch("trace and operators live on different grids".into()));
    }
    let grid = &ops.grid;
    let f = t_u;
    let tu = mit_project(t_u)?;
    let scale = f.l2_norm();
    let nt = apply_n(&tu);

    let direct = ops.trace_plus.apply_trace(&nt)?.scaled(I);
    let inner = ops.cal_minus.apply_trace(&tu)?.axpy(I, &ops.anticommutator.apply_trace(&tu)?);
    let rhs = inner.map_nodes(|i| beta() * alpha_dot(&grid.normals[i])).scaled(-I);
    let residual = relative(direct.sub(&rhs).l2_norm(), tu.l2_norm());
    let literal_residual = relative(direct.add(&rhs).l2_norm(), tu.l2_norm());

    let bf = f.map_nodes(|_| *beta());
    let nf = apply_n(f);
    let nbf = apply_n(&bf);
    let mut beta_commutation: f64 = 0.0;
    let mut beta_anticommutation: f64 = 0.0;
    for (op, c) in [(&ops.trace_plus, I), (&ops.trace_minus, -I)] {
        let cal_bf = op.apply_trace(&nbf)?.scaled(c);
        let b_cal_f = op.apply_trace(&nf)?.scaled(c).map_nodes(|_| *beta());
        beta_commutation = beta_commutation.max(relative(cal_bf.sub(&b_cal_f).l2_norm(), scale));
        beta_anticommutation = beta_anticommutation.max(relative(cal_bf.add(&b_cal_f).l2_norm(), scale));
    }
    Ok(MitBootstrap { residual, literal_residual, beta_commutation, beta_anticommutation })
}

/// ‖P_τ f_+ + P_τ* f_−‖ in L².
pub fn shell_transmission_residual(f_plus: &SpinorTrace, f_minus: &SpinorTrace, tau: f64) -> Result<f64> {
    f_plus.check_same_grid(f_minus)?;
    let grid = f_plus.grid().clone();
    let a = f_plus.map_nodes(|i| p_tau(&grid.normals[i], tau));
    let b = f_minus.map_nodes(|i| p_tau(&grid.normals[i], tau).adjoint());
    Ok(a.add(&b).l2_norm())
}

/// The δ-shell system in the unknowns (𝒞_+f_+, 𝒞_−f_−):
/// [[τ/2, −iα·n], [iα·n, τ/2]] (𝒞_+f_+, 𝒞_−f_−)
///   = [[−τ/2, −iα·n], [iα·n, −τ/2]] (𝒞_+f_−, 𝒞_−f_+) + (α·n)𝒜(f_+ − f_−)(1, −1).
#[derive(Debug, Clone)]
pub struct ShellSystem {
    pub ops: Arc<CalderonOps>,
    pub params: DiracParams,
}

impl ShellSystem {
    pub fn new(ops: Arc<CalderonOps>, params: DiracParams) -> Self {
        Self { ops, params }
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.ops.grid
    }

    /// 8N, the size of the paired unknown.
    pub fn dim(&self) -> usize {
        2 * self.ops.cs.dim()
    }

    /// Node-wise 8×8 blocks of the left-hand matrix.
    pub fn lhs_blocks(&self) -> Vec<nalgebra::SMatrix<C64, 8, 8>> {
        self.grid().normals.iter().map(|n| shell_block_matrix(n, self.params.tau)).collect()
    }

    fn block_apply(&self, tau: f64, top: &SpinorTrace, bottom: &SpinorTrace) -> (SpinorTrace, SpinorTrace) {
        let n_top = apply_n(top);
        let n_bottom = apply_n(bottom);
        let h = C64::from(tau / 2.0);
        (top.scaled(h).axpy(-I, &n_bottom), bottom.scaled(h).axpy(I, &n_top))
    }

    /// Both sides of the system for a pair of traces.
    pub fn sides(&self, f_plus: &SpinorTrace, f_minus: &SpinorTrace) -> Result<([SpinorTrace; 2], [SpinorTrace; 2])> {
        f_plus.check_same_grid(f_minus)?;
        if !f_plus.grid().same_as(self.grid()) {
            return Err(Error::GridMismatch("traces and shell system live on different grids".into()));
        }
        let ops = &self.ops;
        let tau = self.params.tau;
        let (l0, l1) = self.block_apply(tau, &ops.cal_plus.apply_trace(f_plus)?, &ops.cal_minus.apply_trace(f_minus)?);
        let (r0, r1) = self.block_apply(-tau, &ops.cal_plus.apply_trace(f_minus)?, &ops.cal_minus.apply_trace(f_plus)?);
        let na = apply_n(&ops.anticommutator.apply_trace(&f_plus.sub(f_minus))?);
        Ok(([l0, l1], [r0.add(&na), r1.sub(&na)]))
    }

    /// L² norm of left minus right side.
    pub fn residual(&self, f_plus: &SpinorTrace, f_minus: &SpinorTrace) -> Result<f64> {
        let ([l0, l1], [r0, r1]) = self.sides(f_plus, f_minus)?;
        Ok(l0.sub(&r0).l2_norm().hypot(l1.sub(&r1).l2_norm()))
    }

    /// The left-hand operator as a dense 8N × 8N matrix, unknowns ordered
    /// (top spinors, bottom spinors).
    pub fn lhs_dense(&self) -> DMatrix<C64> {
        let dim = self.ops.cs.dim();
        let mut m = DMatrix::zeros(2 * dim, 2 * dim);
        for (i, b) in self.lhs_blocks().iter().enumerate() {
            for (bi, bj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                for r in 0..4 {
                    for c in 0..4 {
                        m[(bi * dim + 4 * i + r, bj * dim + 4 * i + c)] = b[(4 * bi + r, 4 * bj + c)];
                    }
                }
            }
        }
        m
    }
}

/// One row of the conditioning sweep; kappa is infinite at τ = ±2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditioningRow {
    pub tau: f64,
    pub sigma_min: f64,
    pub kappa: f64,
}

/// σ_min over nodes of the left-hand shell block, and the condition number of
/// the node-block-diagonal left-hand operator.
pub fn shell_system_conditioning(grid: &SurfaceGrid, mu: f64, taus: &[f64]) -> Vec<ConditioningRow> {
    let _ = mu;
    taus.par_iter()
        .map(|&tau| {
            if TransmissionParams::new(tau).is_critical() {
                return ConditioningRow { tau, sigma_min: 0.0, kappa: f64::INFINITY };
            }
            let (lo, hi) = grid
                .normals
                .iter()
                .map(|n| {
                    let s = shell_block_matrix(n, tau).singular_values();
                    (s.min(), s.max())
                })
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
            ConditioningRow { tau, sigma_min: lo, kappa: hi / lo }
        })
        .collect()
}

/// One cutoff of the critical-coupling witness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WitnessRow {
    pub cutoff: usize,
    /// ‖t u_+ − iε(α·n) t u_−‖ in L².
    pub transm_residual: f64,
    /// H^{1/2} norm of t u_−.
    pub h_half_norm: f64,
    /// H^{−1/2} norm of the truncated input f_L.
    pub f_minus_half_norm: f64,
}

/// Builds g_L = 𝒞_−(f_L) for each cutoff, sets t u_− = −g_L and
/// t u_+ = −iε𝒞_+((α·n)g_L) − ε𝒜((α·n)g_L), and measures the critical
/// transmission condition. C_s is the matrix-free principal value.
pub fn critical_witness(
    grid: &Arc<SurfaceGrid>,
    mu: f64,
    epsilon: f64,
    rough: &HarmonicSpectrum,
    cutoffs: &[usize],
) -> Result<Vec<WitnessRow>> {
    if !grid.kind.is_sphere() {
        return Err(Error::NotSphere);
    }
    if mu == 0.0 {
        return Err(Error::ZeroMass);
    }
    if epsilon.abs() != 1.0 {
        return Err(Error::Config(format!("epsilon must be ±1, got {epsilon}")));
    }
    if let Some(&l) = cutoffs.iter().find(|&&l| l > grid.band_limit()) {
        return Err(Error::BandLimit { degree: l, limit: grid.band_limit() });
    }
    let ops = CalderonOps::from_cs(cs_matrix_free(grid, mu))?;
    let cache = ApplyCache::new();
    let dim = ops.cs.dim();
    let k = cutoffs.len();

    let fs = cutoffs
        .iter()
        .map(|&l| sh_synthesize(&rough.truncated(l).resized(l), grid))
        .collect::<Result<Vec<_>>>()?;
    let stack = |ts: &[SpinorTrace]| ts.iter().flat_map(|t| t.as_slice().iter().copied()).collect::<Vec<_>>();
    let unstack = |v: Vec<C64>| -> Result<Vec<SpinorTrace>> {
        v.chunks(dim).map(|c| SpinorTrace::new(grid.clone(), c.to_vec())).collect()
    };

    let gs = unstack(ops.cal_minus.apply_cached(&stack(&fs), k, &cache)?)?;
    let ngs: Vec<SpinorTrace> = gs.iter().map(apply_n).collect();
    let ng_block = stack(&ngs);
    let cal = unstack(ops.cal_plus.apply_cached(&ng_block, k, &cache)?)?;
    let anti = unstack(ops.anticommutator.apply_cached(&ng_block, k, &cache)?)?;

    let eps = C64::from(epsilon);
    let mut rows = Vec::with_capacity(k);
    for q in 0..k {
        let tu_minus = gs[q].scaled(-C64::from(1.0));
        let tu_plus = cal[q].scaled(-I * eps).axpy(-eps, &anti[q]);
        let target = apply_n(&tu_minus).scaled(I * eps);
        rows.push(WitnessRow {
            cutoff: cutoffs[q],
            transm_residual: tu_plus.sub(&target).l2_norm(),
            h_half_norm: sobolev_norm(&tu_minus, 0.5)?,
            f_minus_half_norm: sobolev_norm(&fs[q], -0.5)?,
        });
    }
    Ok(rows)
}
