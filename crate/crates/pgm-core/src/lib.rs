//! Private-PGM style estimation and inference: fit a graphical model to
//! noisy linear measurements of clique marginals by convex optimization over
//! the marginal polytope, then answer downstream queries (marginals,
//! factored linear queries, synthetic records) from the model alone.
//!
//! The full contingency table is never materialized; every computation runs
//! on junction-tree clique tensors.

pub mod clique_vector;
pub mod data;
pub mod domain;
pub mod error;
pub mod estimation;
pub mod factor;
pub mod inference;
pub mod io;
pub mod junction_tree;
pub mod mechanisms;
pub mod model;

pub use clique_vector::CliqueVector;
pub use data::Dataset;
pub use domain::{Clique, Domain};
pub use error::{Error, Result};
pub use estimation::{
    accelerated_estimate, estimate_total, lipschitz_constant, mirror_descent,
    rescale_measurements, EstimationReport, LinearMeasurement, LossKind, LossSpec, StepRule,
};
pub use factor::{Factor, Space};
pub use inference::{
    answer_factored_query, build_block, model_marginal, sample_synthetic, FactoredQuery,
    QueryAnswer, QueryBlock,
};
pub use junction_tree::{JunctionTree, ModelSize};
pub use mechanisms::{
    adjacent_triples_workload, exponential_select, laplace_measure, mwem_pgm, sensitivity,
    workload_error, MwemConfig, PrivacyAccountant, Workload,
};
pub use model::GraphicalModel;
