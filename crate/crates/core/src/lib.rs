//! Autoencoders whose encoder and decoder are soft decision trees.
//!
//! A [`SoftTree`] routes every input softly down a complete binary tree of
//! sigmoid gates and mixes its leaf responses by path weight. An
//! [`AutoencoderPair`] chains an encoder tree (input to latent code) with a
//! decoder tree (latent code back to input space). Training is online AdaGrad
//! with L2 regularisation; both trees grow a level at a time on a fixed epoch
//! schedule.
//!
//! ```
//! use treecoder::{AutoencoderPair, TrainConfig, data_io::make_synthetic_clusters, train};
//!
//! let data = make_synthetic_clusters(3, 20, 4, 0.05, 7).unwrap();
//! let cfg = TrainConfig { total_epochs: 4, grow_every: 2, max_depth: 3, ..TrainConfig::default() };
//! let mut pair = AutoencoderPair::initialize(data.dim(), &cfg).unwrap();
//! let history = train(&mut pair, &data, None, &cfg, &mut ()).unwrap();
//! assert_eq!(history.len(), 4);
//! assert_eq!(pair.depth(), 3);
//! ```

pub mod autoencoder;
pub mod baseline_mlp;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod reporting;
pub mod soft_tree;

pub use autoencoder::{evaluate, train, AutoencoderPair, ErrorScale, Reconstruct, TrainConfig, TrainHistory};
pub use baseline_mlp::{PerceptronAutoencoder, StackedAutoencoder};
pub use data_io::Dataset;
pub use error::{Error, Result};
pub use soft_tree::{GatingSplit, LeafKind, LeafModel, SoftTree};
