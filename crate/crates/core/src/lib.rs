//! Numerical Lefschetz theory for foliation maps on flat tori.
//!
//! The crate computes Λ-coincidence and Λ-Lefschetz numbers of foliation maps
//! on compact foliated tori. A foliation is given by a finite regular atlas of
//! distinguished charts ([`geometry`]), maps by numerically evaluable
//! leaf-preserving families ([`maps`]), and the transverse invariant measure Λ
//! by per-chart densities on transversals ([`measure`]).
//!
//! The coincidence set of two foliation maps is located as the zero set of a
//! chart-local leafwise defect and traced as a closed curve ([`coincidence`]).
//! When that set is not ls-transverse, randomized leafwise bump perturbations
//! connected to the input by integrable homotopies restore transversality
//! ([`homotopy`]). The signed integral of Λ over the leafwise-simple part of
//! the coincidence curve is then the invariant ([`lefschetz`]).
//!
//! All models live on the flat torus `R^n / Z^n` and are codimension one for
//! the tracing stage.

pub mod coincidence;
pub mod error;
pub mod fourier;
pub mod geometry;
pub mod homotopy;
pub mod lefschetz;
pub mod linalg;
pub mod maps;
pub mod measure;
pub mod scenario;
pub mod smooth;
pub mod torus;

pub use coincidence::{
    classify_point, find_components, trace_component, CoincidenceComponent, ComponentSearch,
    DefectEvaluator, PointClassification, PointKind, SearchOptions,
};
pub use error::{Error, Result};
pub use fourier::{FourierSeries, FourierTerm};
pub use geometry::{AtlasOptions, CircleMap, FoliatedAtlas, ModelTag};
pub use homotopy::{
    leaf_track_check, perturb_to_ls_transversality, straight_line_homotopy, IntegrableHomotopy,
    LeafTrackReport, PerturbationCertificate, PerturbationSchedule, Perturbed, Slot,
};
pub use lefschetz::{
    composite_identity_check, epsilon_at, homotopy_witness, integrate_component,
    lambda_coincidence, lambda_lefschetz, trace_formula_rhs, verify_homotopy_invariance,
    ComponentContribution, CompositeReport, InvarianceSuiteReport, LefschetzOptions,
    LefschetzReport,
};
pub use maps::{FoliationMapSpec, MapFamily, SPNeighborhoodSpec};
pub use measure::{DensityFamily, TransverseDensity};
pub use scenario::{Command, Scenario};
pub use torus::AmbientPoint;
