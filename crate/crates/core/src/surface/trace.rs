use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::SurfaceGrid;
use crate::algebra::{Mat4, Spinor, Vec3};
use crate::{Error, Result};

/// C⁴ values at the nodes of a grid, stored as 4N interleaved components.
#[derive(Debug, Clone)]
pub struct SpinorTrace {
    grid: Arc<SurfaceGrid>,
    data: Vec<C64>,
}

impl SpinorTrace {
    pub fn new(grid: Arc<SurfaceGrid>, data: Vec<C64>) -> Result<Self> {
        if data.len() != 4 * grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: &Arc<SurfaceGrid>) -> Self {
        Self { grid: grid.clone(), data: vec![C64::new(0.0, 0.0); 4 * grid.len()] }
    }

    /// Builds values from (node index, position, normal).
    pub fn from_fn(grid: &Arc<SurfaceGrid>, f: impl Fn(usize, &Vec3, &Vec3) -> Spinor) -> Self {
        let mut data = Vec::with_capacity(4 * grid.len());
        for i in 0..grid.len() {
            data.extend(f(i, &grid.nodes[i], &grid.normals[i]).iter());
        }
        Self { grid: grid.clone(), data }
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn node(&self, i: usize) -> Spinor {
        Spinor::from_column_slice(&self.data[4 * i..4 * i + 4])
    }

    pub fn set_node(&mut self, i: usize, v: &Spinor) {
        self.data[4 * i..4 * i + 4].copy_from_slice(v.as_slice());
    }

    pub fn check_same_grid(&self, other: &SpinorTrace) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch("traces live on different grids".into()))
        }
    }

    /// Σ_i w_i ⟨f_i, g_i⟩ (conjugate-linear in self).
    pub fn inner(&self, other: &SpinorTrace) -> C64 {
        weighted_inner(&self.grid.weights, &self.data, &other.data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { grid: self.grid.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    /// self + s·other.
    pub fn axpy(&self, s: C64, other: &SpinorTrace) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b * s).collect();
        Self { grid: self.grid.clone(), data }
    }

    pub fn sub(&self, other: &SpinorTrace) -> Self {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    pub fn add(&self, other: &SpinorTrace) -> Self {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    /// Node-wise multiplication f_i ↦ M(i) f_i.
    pub fn map_nodes(&self, m: impl Fn(usize) -> Mat4) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            out.set_node(i, &(m(i) * self.node(i)));
        }
        out
    }
}

pub(crate) fn weighted_inner(w: &[f64], a: &[C64], b: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for (i, wi) in w.iter().enumerate() {
        let mut t = C64::new(0.0, 0.0);
        for c in 0..4 {
            t += a[4 * i + c].conj() * b[4 * i + c];
        }
        s += t * wi;
    }
    s
}
