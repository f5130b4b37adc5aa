//! Boundary operators on spinor traces: dense Nyström matrices, node-wise
//! multiplications, and lazy sums/compositions of them.
//!
//! Blocks of traces are stored column-major: `ncols` columns of length 4N.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::sync::{Arc, Mutex};

use matrixmultiply::CGemmOption;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{alpha_dot, Mat4};
use crate::surface::{legendre_table, SpinorTrace, SurfaceGrid, SurfaceKind};
use crate::{Error, Result};

/// Operators that can only be applied, never stored.
pub trait MatrixFree: Send + Sync {
    fn apply(&self, x: &[C64], ncols: usize) -> Result<Vec<C64>>;
}

enum Repr {
    /// Row-major (4N)×(4N).
    Dense(Vec<C64>),
    Blocks(Vec<Mat4>),
    Identity,
    Sum(Vec<(C64, BoundaryOperator)>),
    /// Product([A, B]) = A∘B.
    Product(Vec<BoundaryOperator>),
    /// Adjoint with respect to the weighted inner product.
    Adjoint(BoundaryOperator),
    Free(Arc<dyn MatrixFree>),
}

/// A linear map SpinorTrace → SpinorTrace on one grid.
#[derive(Clone)]
pub struct BoundaryOperator {
    grid: Arc<SurfaceGrid>,
    label: String,
    repr: Arc<Repr>,
}

impl fmt::Debug for BoundaryOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryOperator")
            .field("label", &self.label)
            .field("nodes", &self.grid.len())
            .finish()
    }
}

/// A·x, or Aᴴx = conj(Aᵀ conj(x)), for row-major A and column-major x.
fn gemm(a: &[C64], a_conj_transpose: bool, dim: usize, x: &[C64], ncols: usize) -> Vec<C64> {
    if a_conj_transpose {
        let xc: Vec<C64> = x.iter().map(|v| v.conj()).collect();
        let mut out = gemm_raw(a, true, dim, &xc, ncols);
        out.iter_mut().for_each(|v| *v = v.conj());
        out
    } else {
        gemm_raw(a, false, dim, x, ncols)
    }
}

fn gemm_raw(a: &[C64], transpose: bool, dim: usize, x: &[C64], ncols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); dim * ncols];
    let (rsa, csa) = if transpose { (1, dim as isize) } else { (dim as isize, 1) };
    // SAFETY: Complex64 is repr(C) {re, im}, layout-identical to [f64; 2]; the
    // slices cover dim×dim, dim×ncols and dim×ncols entries with the strides given.
    unsafe {
        matrixmultiply::zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            dim,
            dim,
            ncols,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            rsa,
            csa,
            x.as_ptr() as *const [f64; 2],
            1,
            dim as isize,
            [0.0, 0.0],
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            dim as isize,
        );
    }
    out
}

impl BoundaryOperator {
    fn make(grid: &Arc<SurfaceGrid>, label: impl Into<String>, repr: Repr) -> Self {
        Self { grid: grid.clone(), label: label.into(), repr: Arc::new(repr) }
    }

    /// Dense operator from row-major entries.
    pub fn dense(grid: &Arc<SurfaceGrid>, label: impl Into<String>, data: Vec<C64>) -> Result<Self> {
        let dim = 4 * grid.len();
        if data.len() != dim * dim {
            return Err(Error::GridMismatch(format!("{} entries for dimension {dim}", data.len())));
        }
        Ok(Self::make(grid, label, Repr::Dense(data)))
    }

    pub fn identity(grid: &Arc<SurfaceGrid>) -> Self {
        Self::make(grid, "Id", Repr::Identity)
    }

    pub fn zero(grid: &Arc<SurfaceGrid>) -> Self {
        Self::make(grid, "0", Repr::Sum(Vec::new()))
    }

    /// Node-wise multiplication f_i ↦ M_i f_i.
    pub fn node_blocks(grid: &Arc<SurfaceGrid>, label: impl Into<String>, blocks: Vec<Mat4>) -> Self {
        assert_eq!(blocks.len(), grid.len());
        Self::make(grid, label, Repr::Blocks(blocks))
    }

    /// Multiplication by α·n.
    pub fn normal_multiplier(grid: &Arc<SurfaceGrid>) -> Self {
        let blocks = grid.normals.iter().map(alpha_dot).collect();
        Self::node_blocks(grid, "α·n", blocks)
    }

    pub fn matrix_free(grid: &Arc<SurfaceGrid>, label: impl Into<String>, op: Arc<dyn MatrixFree>) -> Self {
        Self::make(grid, label, Repr::Free(op))
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        4 * self.grid.len()
    }

    /// Row-major entries when the operator is stored densely.
    pub fn dense_entries(&self) -> Option<&[C64]> {
        match self.repr.as_ref() {
            Repr::Dense(d) => Some(d),
            _ => None,
        }
    }

    fn check(&self, other: &BoundaryOperator) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{} and {} live on different grids", self.label, other.label)))
        }
    }

    /// Σ c_k A_k.
    pub fn combination(terms: &[(C64, &BoundaryOperator)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::GridMismatch("empty combination".into()))?.1;
        for (_, t) in terms {
            first.check(t)?;
        }
        let label = terms.iter().map(|(c, t)| format!("({c})·{}", t.label)).collect::<Vec<_>>().join(" + ");
        let terms = terms.iter().map(|(c, t)| (*c, (*t).clone())).collect();
        Ok(Self::make(&first.grid, label, Repr::Sum(terms)))
    }

    pub fn add(&self, other: &BoundaryOperator) -> Result<Self> {
        Self::combination(&[(C64::new(1.0, 0.0), self), (C64::new(1.0, 0.0), other)])
    }

    pub fn sub(&self, other: &BoundaryOperator) -> Result<Self> {
        Self::combination(&[(C64::new(1.0, 0.0), self), (C64::new(-1.0, 0.0), other)])
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::combination(&[(c, self)]).expect("single term")
    }

    /// self ∘ other.
    pub fn compose(&self, other: &BoundaryOperator) -> Result<Self> {
        self.check(other)?;
        let label = format!("{}∘{}", self.label, other.label);
        Ok(Self::make(&self.grid, label, Repr::Product(vec![self.clone(), other.clone()])))
    }

    /// Adjoint with respect to ⟨f,g⟩ = Σ w_i ⟨f_i, g_i⟩.
    pub fn weighted_adjoint(&self) -> Self {
        Self::make(&self.grid, format!("{}*", self.label), Repr::Adjoint(self.clone()))
    }

    pub fn apply(&self, x: &[C64], ncols: usize) -> Result<Vec<C64>> {
        self.apply_with(x, ncols, None)
    }

    /// Like [`apply`](Self::apply), reusing stored products of the dense and
    /// matrix-free leaves with identical inputs.
    pub fn apply_cached(&self, x: &[C64], ncols: usize, cache: &ApplyCache) -> Result<Vec<C64>> {
        self.apply_with(x, ncols, Some(cache))
    }

    fn apply_with(&self, x: &[C64], ncols: usize, cache: Option<&ApplyCache>) -> Result<Vec<C64>> {
        let dim = self.dim();
        if x.len() != dim * ncols {
            return Err(Error::GridMismatch(format!("block of {} values for dimension {dim}", x.len())));
        }
        self.eval(x, ncols, false, cache)
    }

    /// A·x, or the plain (unweighted) conjugate transpose Aᴴ·x.
    fn eval(&self, x: &[C64], ncols: usize, conj_t: bool, cache: Option<&ApplyCache>) -> Result<Vec<C64>> {
        let dim = self.dim();
        let leaf = |f: &dyn Fn() -> Result<Vec<C64>>| -> Result<Vec<C64>> {
            match cache {
                Some(c) => c.get_or_insert(Arc::as_ptr(&self.repr) as *const u8 as usize, conj_t, x, f),
                None => f(),
            }
        };
        Ok(match self.repr.as_ref() {
            Repr::Dense(a) => leaf(&|| Ok(gemm(a, conj_t, dim, x, ncols)))?,
            Repr::Blocks(b) => apply_blocks(b, x, conj_t),
            Repr::Identity => x.to_vec(),
            Repr::Sum(terms) => {
                let mut out = vec![C64::new(0.0, 0.0); x.len()];
                for (c, t) in terms {
                    let c = if conj_t { c.conj() } else { *c };
                    for (o, v) in out.iter_mut().zip(t.eval(x, ncols, conj_t, cache)?) {
                        *o += c * v;
                    }
                }
                out
            }
            Repr::Product(factors) => {
                let mut v = x.to_vec();
                if conj_t {
                    for f in factors.iter() {
                        v = f.eval(&v, ncols, true, cache)?;
                    }
                } else {
                    for f in factors.iter().rev() {
                        v = f.eval(&v, ncols, false, cache)?;
                    }
                }
                v
            }
            Repr::Adjoint(inner) => {
                // W⁻¹ Aᴴ W, and its conjugate transpose W A W⁻¹
                let w = &self.grid.weights;
                let y = inner.eval(&scale_nodes(x, w, conj_t), ncols, !conj_t, cache)?;
                scale_nodes(&y, w, !conj_t)
            }
            Repr::Free(op) => {
                if conj_t {
                    return Err(Error::Unsupported(format!("adjoint of matrix-free {}", self.label)));
                }
                leaf(&|| op.apply(x, ncols))?
            }
        })
    }

    pub fn apply_trace(&self, f: &SpinorTrace) -> Result<SpinorTrace> {
        if !self.grid.same_as(f.grid()) {
            return Err(Error::GridMismatch(format!("{} applied to a trace on another grid", self.label)));
        }
        SpinorTrace::new(self.grid.clone(), self.apply(f.as_slice(), 1)?)
    }

    /// All entries, row-major, by applying to the identity.
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        if let Some(d) = self.dense_entries() {
            return Ok(d.to_vec());
        }
        let dim = self.dim();
        let mut eye = vec![C64::new(0.0, 0.0); dim * dim];
        for k in 0..dim {
            eye[k * dim + k] = C64::new(1.0, 0.0);
        }
        let cols = self.apply(&eye, dim)?;
        let mut rows = vec![C64::new(0.0, 0.0); dim * dim];
        for c in 0..dim {
            for r in 0..dim {
                rows[r * dim + c] = cols[c * dim + r];
            }
        }
        Ok(rows)
    }

    /// Weighted-L² operator norm restricted to the probe space.
    pub fn induced_norm(&self, probe: &ProbeBasis) -> Result<f64> {
        self.induced_norm_with(probe, None)
    }

    pub fn induced_norm_cached(&self, probe: &ProbeBasis, cache: &ApplyCache) -> Result<f64> {
        self.induced_norm_with(probe, Some(cache))
    }

    fn induced_norm_with(&self, probe: &ProbeBasis, cache: Option<&ApplyCache>) -> Result<f64> {
        if !self.grid.same_as(&probe.grid) {
            return Err(Error::GridMismatch("probe basis on another grid".into()));
        }
        let b = self.apply_with(&probe.data, probe.cols, cache)?;
        Ok(block_norm(&self.grid.weights, &b, probe.cols))
    }

    /// Writes `row,col,re,im` for every nonzero entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self.to_dense()?;
        let dim = self.dim();
        writeln!(out, "row,col,re,im")?;
        for (k, v) in rows.iter().enumerate() {
            if *v != C64::new(0.0, 0.0) {
                writeln!(out, "{},{},{:e},{:e}", k / dim, k % dim, v.re, v.im)?;
            }
        }
        Ok(())
    }

    /// Little-endian binary: u64 dimension, then row-major (re, im) f64 pairs.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self.to_dense()?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in rows {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Leaf address, conjugate-transpose flag, input hash.
type CacheKey = (usize, bool, u64);

/// Products of operator leaves with particular inputs, keyed by leaf and a
/// hash of the input block.
#[derive(Default)]
pub struct ApplyCache {
    map: Mutex<HashMap<CacheKey, Arc<Vec<C64>>>>,
}

impl ApplyCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_insert(
        &self,
        leaf: usize,
        conj_t: bool,
        x: &[C64],
        f: &dyn Fn() -> Result<Vec<C64>>,
    ) -> Result<Vec<C64>> {
        let mut h = DefaultHasher::new();
        x.len().hash(&mut h);
        for v in x {
            v.re.to_bits().hash(&mut h);
            v.im.to_bits().hash(&mut h);
        }
        let key = (leaf, conj_t, h.finish());
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(v.as_ref().clone());
        }
        let v = f()?;
        self.map.lock().expect("cache lock").insert(key, Arc::new(v.clone()));
        Ok(v)
    }

    pub fn clear(&self) {
        self.map.lock().expect("cache lock").clear();
    }
}

/// W⁻¹ Aᴴ W.
pub fn adjoint_of(op: &BoundaryOperator) -> BoundaryOperator {
    op.weighted_adjoint()
}

fn apply_blocks(blocks: &[Mat4], x: &[C64], conj_transpose: bool) -> Vec<C64> {
    let n = blocks.len();
    let mut out = vec![C64::new(0.0, 0.0); x.len()];
    for (col_in, col_out) in x.chunks(4 * n).zip(out.chunks_mut(4 * n)) {
        for (i, m) in blocks.iter().enumerate() {
            for r in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..4 {
                    let e = if conj_transpose { m[(c, r)].conj() } else { m[(r, c)] };
                    acc += e * col_in[4 * i + c];
                }
                col_out[4 * i + r] = acc;
            }
        }
    }
    out
}

fn scale_nodes(x: &[C64], w: &[f64], inverse: bool) -> Vec<C64> {
    let n = w.len();
    x.iter()
        .enumerate()
        .map(|(k, v)| {
            let wi = w[(k % (4 * n)) / 4];
            if inverse { v / wi } else { v * wi }
        })
        .collect()
}

/// sqrt of the largest eigenvalue of Bᴴ W B by power iteration.
fn block_norm(w: &[f64], b: &[C64], cols: usize) -> f64 {
    let dim = b.len() / cols.max(1);
    let mut gram = DMatrix::<C64>::zeros(cols, cols);
    for p in 0..cols {
        for q in p..cols {
            let v = crate::surface::weighted_inner(w, &b[p * dim..(p + 1) * dim], &b[q * dim..(q + 1) * dim]);
            gram[(p, q)] = v;
            gram[(q, p)] = v.conj();
        }
    }
    power_iteration(&gram).sqrt()
}

/// Largest eigenvalue of a Hermitian positive semidefinite matrix: 20
/// iterations at most, stopping at relative change below 1e−6.
pub fn power_iteration(g: &DMatrix<C64>) -> f64 {
    let n = g.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = nalgebra::DVector::<C64>::from_fn(n, |_, _| C64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5)));
    v /= C64::from(v.norm());
    let mut lambda = 0.0;
    for _ in 0..20 {
        let gv = g * &v;
        let next = v.dotc(&gv).re;
        let norm = gv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = gv / C64::from(norm);
        let done = (next - lambda).abs() <= 1e-6 * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    // final Rayleigh quotient
    let gv = g * &v;
    v.dotc(&gv).re.max(lambda).max(0.0)
}

/// Weighted-orthonormal band-limited probe traces.
#[derive(Debug, Clone)]
pub struct ProbeBasis {
    grid: Arc<SurfaceGrid>,
    cols: usize,
    data: Vec<C64>,
}

impl ProbeBasis {
    /// Spinor spherical harmonics of degree ≤ `degree` in the chart angles
    /// (sphere, ellipsoid) or Fourier modes |a|, |b| ≤ degree/2 (torus).
    pub fn new(grid: &Arc<SurfaceGrid>, degree: usize) -> Result<Self> {
        let n = grid.len();
        let scalars: Vec<Vec<C64>> = match grid.kind {
            SurfaceKind::Torus { .. } => {
                let half = (degree / 2) as i64;
                let mut out = Vec::new();
                for a in -half..=half {
                    for b in -half..=half {
                        out.push(
                            grid.param_coords
                                .iter()
                                .map(|&(v, u)| C64::from_polar(1.0, a as f64 * u + b as f64 * v))
                                .collect(),
                        );
                    }
                }
                out
            }
            _ => {
                if degree > grid.band_limit() {
                    return Err(Error::BandLimit { degree, limit: grid.band_limit() });
                }
                let tab = legendre_table(degree, &grid.ring_t);
                let mut out = Vec::new();
                for l in 0..=degree {
                    for m in -(l as i64)..=l as i64 {
                        let am = m.unsigned_abs() as usize;
                        let sign = if m < 0 && am % 2 == 1 { -1.0 } else { 1.0 };
                        out.push(
                            (0..n)
                                .map(|i| {
                                    let (k, _) = grid.ring_of(i);
                                    let ph = grid.param_coords[i].1;
                                    C64::from_polar(sign * tab.p(l, am, k), m as f64 * ph)
                                })
                                .collect(),
                        );
                    }
                }
                out
            }
        };
        let cols = 4 * scalars.len();
        let dim = 4 * n;
        let mut data = vec![C64::new(0.0, 0.0); dim * cols];
        for (s, f) in scalars.iter().enumerate() {
            for comp in 0..4 {
                let col = 4 * s + comp;
                for i in 0..n {
                    data[col * dim + 4 * i + comp] = f[i];
                }
            }
        }
        // W-orthonormalize: Q ← Q L⁻ᴴ with G = L Lᴴ
        let mut gram = DMatrix::<C64>::zeros(cols, cols);
        for p in 0..cols {
            for q in p..cols {
                let v = crate::surface::weighted_inner(
                    &grid.weights,
                    &data[p * dim..(p + 1) * dim],
                    &data[q * dim..(q + 1) * dim],
                );
                gram[(p, q)] = v;
                gram[(q, p)] = v.conj();
            }
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Unsupported("probe functions are not resolved by the grid".into()))?;
        let linv = chol.l().try_inverse().expect("cholesky factor is invertible");
        let mut ortho = vec![C64::new(0.0, 0.0); dim * cols];
        for c in 0..cols {
            for p in 0..=c {
                // column c of Q L⁻ᴴ = Σ_p Q_p conj(L⁻¹[c][p])
                let coef = linv[(c, p)].conj();
                if coef != C64::new(0.0, 0.0) {
                    for r in 0..dim {
                        ortho[c * dim + r] += data[p * dim + r] * coef;
                    }
                }
            }
        }
        Ok(Self { grid: grid.clone(), cols, data: ortho })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn column(&self, c: usize) -> &[C64] {
        let dim = 4 * self.grid.len();
        &self.data[c * dim..(c + 1) * dim]
    }

    pub fn as_block(&self) -> &[C64] {
        &self.data
    }
}

/// Operator norm of a block already applied to the probe basis.
pub fn probe_block_norm(probe: &ProbeBasis, block: &[C64]) -> f64 {
    block_norm(&probe.grid.weights, block, probe.cols)
}
