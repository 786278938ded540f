//! Mixed-membership topic model over user text, user-user links and binary
//! labels, fitted with collapsed Gibbs sampling.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the scalar type.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod predictor;
pub mod rng;
pub mod scalar;
pub mod synthgen;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use corpus::{load_dataset, load_dataset_with_vocab, Dataset, EdgeList, Label, UserRecord, Vocabulary};
pub use error::{Error, Result};
pub use model::{CountCache, Hyperparams, LatentState, LinkPair, TopicParams, TriangularMatrix, UserFeatures};
pub use predictor::{predict_all, PredictConfig, Prediction};
pub use scalar::Real;
pub use synthgen::{generate_dataset, GenSpec, GroundTruth};
pub use trainer::{train, TrainConfig, TrainOutput, Trainer};

pub type Hyperparams64 = Hyperparams<f64>;
pub type TopicParams64 = TopicParams<f64>;
pub type Trainer64<'d> = Trainer<'d, f64>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type UserFeatures64 = UserFeatures<f64>;

pub type Hyperparams32 = Hyperparams<f32>;
pub type TopicParams32 = TopicParams<f32>;
pub type Trainer32<'d> = Trainer<'d, f32>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type UserFeatures32 = UserFeatures<f32>;
