use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("normal is not unit length (|n| = {0})")]
    NonUnitNormal(f64),
    #[error("kernel evaluated at its singularity")]
    Singular,
    #[error("fourier symbol undefined for mu = 0 and xi = 0")]
    SymbolUndefined,
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("operation requires a sphere grid")]
    NotSphere,
    #[error("degree {degree} exceeds the grid band limit {limit}")]
    BandLimit { degree: usize, limit: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("evaluation point lies on the surface")]
    OnSurface,
    #[error("mu = 0 exterior point outside the ball of radius {0}")]
    OutsideBall(f64),
    #[error("finite-difference stencil crosses the surface")]
    StencilCrossesSurface,
    #[error("trace extrapolation diverged at {} node(s), first {}", .0.len(), .0[0])]
    Extrapolation(Vec<usize>),
    #[error("point {0:?} does not lie inside the surface")]
    NotInterior([f64; 3]),
    #[error("source point must lie outside the closed surface")]
    SourceInside,
    #[error("mass must be nonzero")]
    ZeroMass,
    #[error("operation not supported: {0}")]
    Unsupported(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
