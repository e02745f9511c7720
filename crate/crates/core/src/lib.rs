//! Attribute suppression for fixed-dimension identity embeddings.
//!
//! The crate trains an adversarial generator that maps descriptors to a
//! 256-d space where an ensemble of attribute predictors is driven to an
//! even posterior while an identity classifier stays accurate. It also
//! provides a PCA baseline that drops attribute-correlated eigenvectors, a
//! logistic-regression leakage probe, group-wise verification metrics, a
//! triplet-trained linear embedding, and a seeded synthetic corpus
//! generator for exercising all of it.

mod binfmt;
pub mod corrpca;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod nets;
pub mod probe;
pub mod rng;
pub mod synthgen;
pub mod tpe;
pub mod trainer;

pub use dataio::{Attribute, Dataset, DescriptorRecord};
pub use error::{Error, FormatError, Result};
pub use corrpca::CorrSubspace;
pub use eval::{EvalReport, OperatingPoint, PairProtocol};
pub use linalg::{EigenDecomposition, Matrix};
pub use nets::{Checkpoint, ClassifierParams, DiscriminatorParams, EnsembleParams, GeneratorParams};
pub use probe::{ProbeConfig, ProbeModel, ProbeReport};
pub use synthgen::SynthSpec;
pub use tpe::{TpeConfig, TpeMatrix};
pub use trainer::{TrainConfig, TrainLog, TrainOutput};
