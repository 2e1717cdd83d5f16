//! Source tracing for tampered videos.
//!
//! Every original video and the fakes derived from it form a group. Training
//! learns one binary hash center per group together with an encoder that maps
//! clips of any group member close to that center in Hamming space. A query
//! video is traced by encoding it and returning the nearest center's original.
//! Once the original is known, [`localize`] compares it with the fake to mark
//! the tampered pixels.
//!
//! ```
//! use hashtrace::{hamming, HashCode};
//!
//! let a = HashCode::from_bit_values(&[1, 0, 1, 1, 0, 0, 1, 0]).unwrap();
//! let b = HashCode::from_bit_values(&[1, 1, 1, 0, 0, 0, 1, 1]).unwrap();
//! assert_eq!(hamming(&a, &b).unwrap(), 3);
//! ```
//!
//! The guide in `book/` walks through each stage; its code listings run as
//! doc-tests of this crate.

pub mod code;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod localize;
pub mod loss;
pub mod seed;
pub mod trainer;

pub use code::{binarize, hamming, vote_center, Activation, HashCode, RelaxedCode};
pub use dataset::{load_manifest, GroupSet, VideoRef};
pub use encoder::{forward, init_params, EncoderConfig, EncoderParams};
pub use error::{Error, Result};
pub use index::{build_index, load_index, save_index, trace, TraceIndex, TraceResult};
pub use localize::{align, diff_mask, miou, AlignmentSpec, MaskSequence};
pub use loss::{hash_triplet_loss, CenterSet, LabeledCode, LossTerms};
pub use trainer::{fit, FeatureBank, TrainConfig, TrainHistory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/hash-codes.md")]
    mod hash_codes {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/tracing.md")]
    mod tracing {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
