//! Knowledge tracing as an encoder-decoder.
//!
//! An encoder summarizes a student's past attempts into a state `h_t`
//! (nothing at all, or a GRU over fixed random action embeddings); a decoder
//! combines `h_t` with metadata about the item attempted at step `t` to
//! predict success. IRT, PFA, sparse logistic regression and DKT are all
//! points of this grid:
//!
//! | model | encoder   | decoder     |
//! |-------|-----------|-------------|
//! | PFA   | `none`    | `swf d'=1`  |
//! | LR    | `none`    | `iswf d'=1` |
//! | DKT   | `GRU d=2` | `i d'=2`    |
//! | ours  | `GRU d=2` | `iswf d'=1` |

pub mod checkpoint;
pub mod counters;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod kv;
pub mod model;
pub mod synthetic;
pub mod training;

pub use data::{parse_interactions, parse_wide_matrix, split_folds, Dataset, FoldAssignment, QMatrix, StudentSequence};
pub use error::{Error, Result};
pub use evaluation::{accuracy, auc, cross_validate, predict_students, MetricReport, PredictionLog};
pub use model::{DecoderSpec, EncoderSpec, Model, ModelSpec};
pub use training::{fit, TrainConfig};
