//! The layer potential Φ, its one-sided boundary traces and the singular
//! boundary operator C_s.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

mod assemble;
mod interp;
mod operator;
mod potential;

pub use assemble::{assemble_cs, assemble_one_sided, assemble_trace_ops, cs_matrix_free, ladder, PvDirectApply};
pub use operator::{adjoint_of, ApplyCache, power_iteration, probe_block_norm, BoundaryOperator, MatrixFree, ProbeBasis};
pub use potential::{
    eval_layer_potential, harmonicity_check, one_sided_trace, one_sided_trace_report, reproducing_residual,
    reproducing_residual_with, OneSidedTrace, ReproducingResidual, Side,
};

/// How C_s is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsMethod {
    /// Average of the extrapolated one-sided traces.
    #[default]
    Offsurface,
    /// Principal value on the surface nodes.
    PvDirect,
}

impl fmt::Display for CsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsMethod::Offsurface => "offsurface",
            CsMethod::PvDirect => "pv_direct",
        })
    }
}

impl FromStr for CsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "offsurface" => Ok(CsMethod::Offsurface),
            "pv_direct" | "pv-direct" => Ok(CsMethod::PvDirect),
            _ => Err(Error::Config(format!("unknown C_s method {s:?}"))),
        }
    }
}

/// Discretization parameters of the layer potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub method: CsMethod,
    /// h₀ in units of the mean node spacing.
    pub h0_factor: f64,
    pub ladder_steps: usize,
    /// Radius of the evaluation ball for μ = 0, in surface diameters.
    pub ball_factor: f64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self { method: CsMethod::Offsurface, h0_factor: 2.0, ladder_steps: 5, ball_factor: 3.0 }
    }
}
