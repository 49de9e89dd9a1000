//! Core of the bronze Ding dating service.
//!
//! - [`catalog`]: annotated reference artifacts and their on-disk store
//! - [`imageproc`]: decoding, resizing and the preprocessing operators
//! - [`nnx`]: ConvNeXt-style forward pass and the weights file format
//! - [`detect`]: feature-part detector backends and box postprocessing
//! - [`dating`]: top-four/other-stuffs decision and similarity retrieval
//! - [`evalbench`]: test-set construction and accuracy tables

pub mod catalog;
pub mod dating;
pub mod detect;
pub mod evalbench;
pub mod imageproc;
pub mod nnx;
pub mod period;
pub mod pipeline;

pub use period::{Dynasty, Period, Phase};
