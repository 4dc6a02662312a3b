//! Siamese embedding network trained from similar/dissimilar image pairs.
//!
//! Both branches share one convolutional encoder. The distance head takes
//! the elementwise difference of the two embeddings, squares it, sums it
//! and takes the square root; a scalar affine map and a sigmoid turn that
//! distance into the probability that the pair is similar. Training
//! minimizes binary cross-entropy with plain minibatch SGD.
//!
//! After training the encoder alone is used as a feature extractor.

mod gradcheck;
mod io;
mod model;
mod network;
mod pairs;
mod train;

pub use gradcheck::{grad_check, GradCheck, GradCheckOptions, GradScope, KINK_DISTANCE};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use model::{
    cross_entropy, pair_distance, random_patch, sigmoid, DistanceHead, Embedder, PairLabel, PairLossTerm,
    SiameseModel,
};
pub use network::{Architecture, Layer, Shape};
pub use pairs::{
    format_pair_list, load_pair_samples, make_pair_indices, make_pairs, parse_pair_list, split_pairs, train_count,
    LabeledPatch, PairListEntry, PairSample, PairSplit,
};
pub use train::{train, TrainConfig, TrainOutcome};
