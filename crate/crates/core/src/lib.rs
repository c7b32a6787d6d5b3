//! Neural classifiers trained with symmetric alpha-stable ("soft diamond")
//! weight priors.
//!
//! The crate is organised bottom-up:
//!
//! * [`stable`] evaluates SαS densities and draws variates,
//! * [`prior_table`] precomputes the log-prior derivative lookup table,
//! * [`netcore`] is a small CPU tensor/layer engine with analytic gradients,
//! * [`trainer`] runs momentum SGD ascent with the table-driven prior,
//! * [`data`] loads CIFAR-10, generates synthetic data and augments batches,
//! * [`analysis`] measures sparsity, prunes, and traces constraint sets.

pub mod analysis;
pub mod data;
pub mod netcore;
pub mod prior_table;
pub mod rng;
pub mod stable;
pub mod trainer;

pub use analysis::{GeometryContour, SparsityReport};
pub use data::LabeledDataset;
pub use netcore::{LayerSpec, Model, Tensor};
pub use prior_table::DerivTable;
pub use stable::{QuadratureConfig, StableParams};
pub use trainer::{PriorGradient, TrainConfig, TrainReport};
