//! Nyström assembly of the singular boundary operator.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::interp::{node_interp, FieldWeights, Mat412, NodeInterp};
use super::operator::{BoundaryOperator, MatrixFree};
use super::{CsMethod, LayerConfig};
use crate::algebra::{alpha_dot, Mat4};
use crate::kernels::{phi_coeffs, PhiCoeffs};
use crate::surface::SurfaceGrid;
use crate::Result;

/// φ_μ as a 4×4 block, written out from the Pauli blocks.
#[inline]
pub(crate) fn phi_block(p: &PhiCoeffs) -> Mat4 {
    let (b, a) = (C64::from(p.b), p.a);
    let z = C64::new(0.0, 0.0);
    let s11 = C64::new(0.0, a[2]);
    let s12 = C64::new(a[1], a[0]);
    let s21 = C64::new(-a[1], a[0]);
    let s22 = C64::new(0.0, -a[2]);
    Mat4::new(
        b, z, s11, s12, //
        z, b, s21, s22, //
        s11, s12, -b, z, //
        s21, s22, z, -b,
    )
}

/// φ_μ g without forming the matrix.
#[inline]
pub(crate) fn phi_apply(p: &PhiCoeffs, g: &[C64]) -> [C64; 4] {
    let a = p.a;
    let s11 = C64::new(0.0, a[2]);
    let s12 = C64::new(a[1], a[0]);
    let s21 = C64::new(-a[1], a[0]);
    let s22 = C64::new(0.0, -a[2]);
    [
        g[0] * p.b + s11 * g[2] + s12 * g[3],
        g[1] * p.b + s21 * g[2] + s22 * g[3],
        s11 * g[0] + s12 * g[1] - g[2] * p.b,
        s21 * g[0] + s22 * g[1] - g[3] * p.b,
    ]
}

#[inline]
fn diff(x: &crate::algebra::Vec3, y: &crate::algebra::Vec3) -> [f64; 3] {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
}

/// Heights h_k = h₀·2^{−k} and the weights c_k with Σ c_k F(h_k) = P(0)
/// for the interpolating polynomial P.
pub fn ladder(grid: &SurfaceGrid, cfg: &LayerConfig) -> (Vec<f64>, Vec<f64>) {
    let h0 = cfg.h0_factor * grid.mean_spacing();
    let h: Vec<f64> = (0..cfg.ladder_steps).map(|k| h0 * 0.5f64.powi(k as i32)).collect();
    let c = (0..h.len())
        .map(|k| {
            (0..h.len())
                .filter(|&m| m != k)
                .map(|m| h[m] / (h[m] - h[k]))
                .product()
        })
        .collect();
    (h, c)
}

/// Σ_j L_j, Σ_j S_d L_j and Σ_j C_d L_j over the sources of one row.
struct Accum {
    a0: Mat4,
    s: [Mat4; 9],
    c: [Mat4; 9],
}

impl Accum {
    fn new() -> Self {
        Self { a0: Mat4::zeros(), s: [Mat4::zeros(); 9], c: [Mat4::zeros(); 9] }
    }

    #[inline]
    fn add(&mut self, l: &Mat4, s: &[f64; 9], c: &[f64; 9]) {
        self.a0 += l;
        for d in 0..9 {
            self.s[d] += l * C64::from(s[d]);
            self.c[d] += l * C64::from(c[d]);
        }
    }

    /// Σ_j L_j U_i(x_j − x_i) as a map on the local data.
    fn correction(&self, interp: &NodeInterp) -> Mat412 {
        let mut m = self.a0 * interp.ma;
        for d in 0..9 {
            m += self.s[d] * interp.ps[d] + self.c[d] * interp.pc[d];
        }
        m
    }
}

struct RowScratch {
    theta: Vec<(usize, f64)>,
    phi: Vec<(usize, f64)>,
}

impl RowScratch {
    fn new() -> Self {
        Self { theta: Vec::new(), phi: Vec::new() }
    }
}

#[inline]
fn add_block(rows: &mut [C64], dim: usize, j: usize, m: &Mat4, scale: C64) {
    for r in 0..4 {
        let row = &mut rows[r * dim + 4 * j..r * dim + 4 * j + 4];
        for (c, v) in row.iter_mut().enumerate() {
            *v += m[(r, c)] * scale;
        }
    }
}

/// Adds R·(g_i, ∂_θg_i, ∂_φg_i) to the rows of node i.
fn scatter_local(grid: &SurfaceGrid, rows: &mut [C64], i: usize, r: &Mat412, scratch: &mut RowScratch) {
    let dim = 4 * grid.len();
    let one = C64::new(1.0, 0.0);
    let r0: Mat4 = r.fixed_columns::<4>(0).into();
    let rt: Mat4 = r.fixed_columns::<4>(4).into();
    let rp: Mat4 = r.fixed_columns::<4>(8).into();
    add_block(rows, dim, i, &r0, one);
    grid.theta_row(i, &mut scratch.theta);
    for &(k, w) in &scratch.theta {
        add_block(rows, dim, k, &rt, C64::from(w));
    }
    grid.phi_row(i, &mut scratch.phi);
    for &(k, w) in &scratch.phi {
        add_block(rows, dim, k, &rp, C64::from(w));
    }
}

fn i_normals(grid: &SurfaceGrid) -> Vec<Mat4> {
    grid.normals.iter().map(|n| alpha_dot(n) * C64::i()).collect()
}

/// Local correction of row i for the principal value: ½U_i(0) − Σ_j w_j φ_ij iN_j U_i(x_j − x_i).
fn pv_correction(grid: &SurfaceGrid, mu: f64, fw: &FieldWeights, in_n: &[Mat4], i: usize, mut each: impl FnMut(usize, &Mat4)) -> Mat412 {
    let interp = node_interp(grid, i, mu);
    let xi = grid.nodes[i];
    let mut acc = Accum::new();
    let (mut s, mut c) = ([0.0; 9], [0.0; 9]);
    for j in 0..grid.len() {
        if j == i {
            continue;
        }
        let xj = &grid.nodes[j];
        let k = phi_block(&phi_coeffs(mu, &diff(&xi, xj))) * C64::from(grid.weights[j]);
        each(j, &k);
        fw.pair(i, j, &diff(xj, &xi), &mut s, &mut c);
        acc.add(&(k * in_n[j]), &s, &c);
    }
    interp.ma * C64::from(0.5) - acc.correction(&interp)
}

fn assemble_pv_dense(grid: &Arc<SurfaceGrid>, mu: f64) -> Result<BoundaryOperator> {
    let n = grid.len();
    let dim = 4 * n;
    let fw = FieldWeights::new(grid, mu);
    let in_n = i_normals(grid);
    let mut data = vec![C64::new(0.0, 0.0); dim * dim];
    data.par_chunks_mut(4 * dim).enumerate().for_each_init(RowScratch::new, |scratch, (i, rows)| {
        let one = C64::new(1.0, 0.0);
        let r = pv_correction(grid, mu, &fw, &in_n, i, |j, k| add_block(rows, dim, j, k, one));
        scatter_local(grid, rows, i, &r, scratch);
    });
    BoundaryOperator::dense(grid, "C_s", data)
}

/// C_s and J = T_+ − T_− from the extrapolated one-sided traces T_±.
pub fn assemble_one_sided(grid: &Arc<SurfaceGrid>, mu: f64, cfg: &LayerConfig) -> Result<(BoundaryOperator, BoundaryOperator)> {
    let n = grid.len();
    let dim = 4 * n;
    let fw = FieldWeights::new(grid, mu);
    let in_n = i_normals(grid);
    let (h, cw) = ladder(grid, cfg);
    let mut cs = vec![C64::new(0.0, 0.0); dim * dim];
    let mut jump = vec![C64::new(0.0, 0.0); dim * dim];
    cs.par_chunks_mut(4 * dim)
        .zip(jump.par_chunks_mut(4 * dim))
        .enumerate()
        .for_each_init(RowScratch::new, |scratch, (i, (cs_rows, j_rows))| {
            let interp = node_interp(grid, i, mu);
            let (xi, ni) = (grid.nodes[i], grid.normals[i]);
            let mut acc_p = Accum::new();
            let mut acc_m = Accum::new();
            let (mut s, mut c) = ([0.0; 9], [0.0; 9]);
            let half = C64::from(0.5);
            let one = C64::new(1.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = &grid.nodes[j];
                let mut kp = PhiCoeffs { b: 0.0, a: [0.0; 3] };
                let mut km = kp;
                for (hk, ck) in h.iter().zip(&cw) {
                    let p = phi_coeffs(mu, &diff(&(xi - ni * *hk), xj));
                    let m = phi_coeffs(mu, &diff(&(xi + ni * *hk), xj));
                    kp.b += ck * p.b;
                    km.b += ck * m.b;
                    for d in 0..3 {
                        kp.a[d] += ck * p.a[d];
                        km.a[d] += ck * m.a[d];
                    }
                }
                let w = C64::from(grid.weights[j]);
                let kp = phi_block(&kp) * w;
                let km = phi_block(&km) * w;
                add_block(cs_rows, dim, j, &(kp + km), half);
                add_block(j_rows, dim, j, &(kp - km), one);
                fw.pair(i, j, &diff(xj, &xi), &mut s, &mut c);
                acc_p.add(&(kp * in_n[j]), &s, &c);
                acc_m.add(&(km * in_n[j]), &s, &c);
            }
            let rp = interp.ma - acc_p.correction(&interp);
            let rm = -acc_m.correction(&interp);
            scatter_local(grid, cs_rows, i, &((rp + rm) * half), scratch);
            scatter_local(grid, j_rows, i, &(rp - rm), scratch);
        });
    Ok((
        BoundaryOperator::dense(grid, "C_s", cs)?,
        BoundaryOperator::dense(grid, "T_+ - T_-", jump)?,
    ))
}

/// Dense discrete C_s.
pub fn assemble_cs(grid: &Arc<SurfaceGrid>, mu: f64, method: CsMethod) -> Result<BoundaryOperator> {
    match method {
        CsMethod::PvDirect => assemble_pv_dense(grid, mu),
        CsMethod::Offsurface => Ok(assemble_one_sided(grid, mu, &LayerConfig::default())?.0),
    }
}

/// C_± = ∓(i/2)(α·n) + C_s.
pub fn assemble_trace_ops(cs: &BoundaryOperator, grid: &Arc<SurfaceGrid>) -> Result<(BoundaryOperator, BoundaryOperator)> {
    let n = BoundaryOperator::normal_multiplier(grid);
    let plus = BoundaryOperator::combination(&[(C64::new(1.0, 0.0), cs), (C64::new(0.0, -0.5), &n)])?;
    let minus = BoundaryOperator::combination(&[(C64::new(1.0, 0.0), cs), (C64::new(0.0, 0.5), &n)])?;
    Ok((plus.with_label("C_+"), minus.with_label("C_-")))
}

/// Principal-value C_s applied without storing the matrix.
pub struct PvDirectApply {
    grid: Arc<SurfaceGrid>,
    mu: f64,
    local: Vec<Mat412>,
}

impl PvDirectApply {
    pub fn new(grid: &Arc<SurfaceGrid>, mu: f64) -> Self {
        let fw = FieldWeights::new(grid, mu);
        let in_n = i_normals(grid);
        let local = (0..grid.len())
            .into_par_iter()
            .map(|i| pv_correction(grid, mu, &fw, &in_n, i, |_, _| {}))
            .collect();
        Self { grid: grid.clone(), mu, local }
    }

    pub fn into_operator(self) -> BoundaryOperator {
        let grid = self.grid.clone();
        BoundaryOperator::matrix_free(&grid, "C_s", Arc::new(self))
    }
}

impl MatrixFree for PvDirectApply {
    fn apply(&self, x: &[C64], ncols: usize) -> Result<Vec<C64>> {
        let grid = &self.grid;
        let n = grid.len();
        let dim = 4 * n;
        let cols: Vec<&[C64]> = x.chunks(dim).collect();
        let dt: Vec<Vec<C64>> = cols.iter().map(|c| grid.diff_theta(c)).collect();
        let dp: Vec<Vec<C64>> = cols.iter().map(|c| grid.diff_phi(c)).collect();
        let rows: Vec<Vec<[C64; 4]>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = grid.nodes[i];
                let mut acc = vec![[C64::new(0.0, 0.0); 4]; ncols];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let mut p = phi_coeffs(self.mu, &diff(&xi, &grid.nodes[j]));
                    let w = grid.weights[j];
                    p.b *= w;
                    p.a.iter_mut().for_each(|a| *a *= w);
                    for (q, col) in cols.iter().enumerate() {
                        let v = phi_apply(&p, &col[4 * j..4 * j + 4]);
                        for r in 0..4 {
                            acc[q][r] += v[r];
                        }
                    }
                }
                for q in 0..ncols {
                    let mut d = nalgebra::SMatrix::<C64, 12, 1>::zeros();
                    for r in 0..4 {
                        d[r] = cols[q][4 * i + r];
                        d[4 + r] = dt[q][4 * i + r];
                        d[8 + r] = dp[q][4 * i + r];
                    }
                    let v = self.local[i] * d;
                    for r in 0..4 {
                        acc[q][r] += v[r];
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); dim * ncols];
        for (i, acc) in rows.iter().enumerate() {
            for (q, v) in acc.iter().enumerate() {
                out[q * dim + 4 * i..q * dim + 4 * i + 4].copy_from_slice(v);
            }
        }
        Ok(out)
    }
}

/// Matrix-free principal-value C_s.
pub fn cs_matrix_free(grid: &Arc<SurfaceGrid>, mu: f64) -> BoundaryOperator {
    PvDirectApply::new(grid, mu).into_operator()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Vec3;
    use crate::surface::{build_surface, SpinorTrace, SurfaceKind};

    #[test]
    fn phi_block_matches_kernel() {
        for x in [Vec3::new(0.3, -0.2, 0.7), Vec3::new(-1.0, 2.0, 0.5)] {
            let p = phi_coeffs(0.7, &[x[0], x[1], x[2]]);
            assert!(crate::algebra::max_entry(&(phi_block(&p) - crate::kernels::phi(0.7, &x).unwrap())) < 1e-14);
            let g = [C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 1.0), C64::new(3.0, -1.0)];
            let v = phi_block(&p) * crate::algebra::Spinor::new(g[0], g[1], g[2], g[3]);
            let w = phi_apply(&p, &g);
            for r in 0..4 {
                assert!((v[r] - w[r]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn ladder_weights_reproduce_polynomials() {
        let g = build_surface(SurfaceKind::Sphere { radius: 1.0 }, 0).unwrap();
        let (h, c) = ladder(&g, &LayerConfig::default());
        assert_eq!(h.len(), 5);
        for deg in 0..5 {
            let v: f64 = h.iter().zip(&c).map(|(h, c)| c * (1.0 + h.powi(deg))).sum();
            let expect = if deg == 0 { 2.0 } else { 1.0 };
            assert!((v - expect).abs() < 1e-9, "degree {deg}: {v}");
        }
    }

    #[test]
    fn matrix_free_matches_dense() {
        let g = build_surface(SurfaceKind::Ellipsoid { a: 1.0, b: 1.3, c: 0.8 }, 1).unwrap().shared();
        for mu in [0.0, 1.0] {
            let dense = assemble_cs(&g, mu, CsMethod::PvDirect).unwrap();
            let free = cs_matrix_free(&g, mu);
            let f = SpinorTrace::from_fn(&g, |_, x, _| {
                crate::algebra::Spinor::new(C64::new(x[0], 0.0), C64::new(1.0, x[1]), C64::new(x[2] * x[0], 0.0), C64::new(0.0, -1.0))
            });
            let a = dense.apply_trace(&f).unwrap();
            let b = free.apply_trace(&f).unwrap();
            assert!(a.sub(&b).l2_norm() < 1e-12 * a.l2_norm());
        }
    }
}
