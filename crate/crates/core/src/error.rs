use thiserror::Error;

use crate::homotopy::PerturbationCertificate;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad split: {0}")]
    BadSplit(String),

    #[error("monodromy not invertible: {0}")]
    MonodromyNotInvertible(String),

    #[error("covering violated at {0:?}")]
    CoveringViolated(Vec<f64>),

    #[error("unknown chart {0}")]
    UnknownChart(usize),

    #[error("not in chart {chart}: {point:?}")]
    NotInChart { chart: usize, point: Vec<f64> },

    #[error("not in overlap of charts {from} and {to}")]
    NotInOverlap { from: usize, to: usize },

    #[error("not differentiable at x = {0:?}")]
    NotDifferentiable(Vec<f64>),

    #[error("map not plaque-local at x = {0:?}")]
    NotPlaqueLocal(Vec<f64>),

    #[error("maps do not induce the same leaf-space map ({violations} violations)")]
    Incompatible { violations: usize },

    #[error("defect undefined at {0:?}: images not in a common plaque")]
    OutsideSaturation(Vec<f64>),

    #[error("not transverse: {0}")]
    NotTransverse(String),

    #[error("trace stalled near degeneracy at {0:?}")]
    TraceStalled(Vec<f64>),

    #[error("trace did not close (arclength {0})")]
    TraceNotClosed(f64),

    #[error("degenerate, no sign")]
    DegenerateSign,

    #[error("unsupported codimension q = {0}; only q = 1 zero sets are traced")]
    UnsupportedCodimension(usize),

    #[error("maps not plaquewise close: {0}")]
    NotPlaquewiseClose(String),

    #[error("transversality not achieved after {} attempts", .0.attempts)]
    TransversalityNotAchieved(Box<PerturbationCertificate>),

    #[error("measure not invariant (max violation {0:e})")]
    MeasureNotInvariant(f64),

    #[error("hypothesis violated: Fix not a transversal ({0})")]
    HypothesisViolated(String),

    #[error("map not invertible: {0}")]
    NotInvertible(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
