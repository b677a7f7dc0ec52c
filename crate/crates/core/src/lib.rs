//! Few-shot generative entity extraction.
//!
//! A sequence-to-sequence extractor reads a sentence and writes its typed
//! mentions as `mention <Type>, ...`. Training combines the generation loss
//! with a reconstruction loss from a frozen validator (fed a Gumbel-softmax
//! relaxation of the extractor's step distributions) and a contrastive loss
//! against negatives whose mentions swallow neighbouring context.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod contrastive;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod fewshot;
pub mod fixtures;
pub mod linearize;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod selfval;
pub mod tensor;
pub mod trainer;

pub use corpus::{AnnotatedSentence, Corpus, Mention, Ontology};
pub use error::{Error, Result};
pub use linearize::{Entity, EntityList, Vocab};
pub use scalar::Scalar;
pub use trainer::{TrainConfig, TrainLog};

pub type Matrix64 = tensor::Matrix<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Seq2Seq64 = nn::Seq2Seq<f64>;
pub type Seq2Seq32 = nn::Seq2Seq<f32>;
pub type Validator64 = selfval::Validator<f64>;
pub type Validator32 = selfval::Validator<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
