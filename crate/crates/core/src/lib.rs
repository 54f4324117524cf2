//! Sparse integrative discriminant analysis (SIDA) and its graph-smoothed
//! variant (SIDANet) for jointly separating classes and associating several
//! sample-aligned data views.

pub mod data;
pub mod error;
pub mod fit;
pub mod gev;
pub mod graph;
pub mod linalg;
pub mod predict;
pub mod scatter;
pub mod simgen;
pub mod sparse;
pub mod tuning;

pub use data::{ColumnStats, MultiViewDataset, NamedMatrix, ViewRole};
pub use error::{Result, SidaError};

pub use gev::{solve_gev, GevOptions, GevSolution};
pub use graph::{build_normalized_laplacian, LaplacianKind, LaplacianMatrix, ViewGraph};
pub use scatter::{build_scatter_set, Ridge, ScatterSet};

pub use fit::{fit, DiscriminantModel, FitOptions, Method};
pub use simgen::{generate, Scenario, ScenarioSpec};
pub use tuning::{cross_validate, CvResult, TuningSpec};
