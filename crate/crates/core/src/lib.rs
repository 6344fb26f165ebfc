//! Generalized category discovery at desk scale.
//!
//! A small MLP encoder with a prototype classifier is trained on labeled and
//! unlabeled feature vectors with the SimGCD objective, optionally extended
//! by local entropy regularisation (LER), margin-aware offsets (MAP) and a
//! dual-view KL constraint (DKL). Gradients are derived by hand and checked
//! against finite differences; evaluation uses clustering accuracy under an
//! optimal Hungarian matching.
//!
//! ```no_run
//! use gcdlab::{synthdata::{generate_dataset, SynthSpec}, trainer::{train, TrainConfig}};
//!
//! let data = generate_dataset(&SynthSpec {
//!     n_known: 5, n_novel: 5, per_class: 40, dim: 16,
//!     separation: 3.0, noise: 0.8, labeled_ratio: 0.5, seed: 0,
//! })?;
//! let state = train(&data, &TrainConfig { epochs: 50, ..TrainConfig::default() })?;
//! println!("old acc {:.3}", state.history.last().unwrap().acc_old);
//! # Ok::<(), gcdlab::GcdError>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod synthdata;
pub mod trainer;

pub use error::{GcdError, Result};
