//! Multichannel blind dereverberation for distributed microphone setups.
//!
//! Linear-prediction (WPE) dereverberation assumes all channels share a time
//! axis; scattered microphones do not. This crate compensates each channel
//! by its time difference of arrival — split exactly into frame, integer-
//! sample, and fractional parts — before prediction, and provides everything
//! needed to study the effect: room simulation ([`room`]), deterministic
//! test speech ([`speech`]), STFT analysis ([`stft`]), GCC-PHAT delay
//! estimation ([`tdoa`]), delay decomposition and STFT-domain compensation
//! ([`delay`]), the prediction core ([`wpe`]), quality metrics
//! ([`metrics`]), and a reproducible experiment runner ([`experiment`]).
//!
//! The guide in `book/` walks through the processing chain; its code
//! examples are compiled and run as part of this crate's test suite.

pub mod config;
pub mod delay;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod room;
pub mod speech;
pub mod stft;
pub mod tdoa;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};

// Compile and run the guide's code blocks as doctests, so the book cannot
// drift from the library it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/stft.md")]
    mod stft {}
    #[doc = include_str!("../../../book/src/delays.md")]
    mod delays {}
    #[doc = include_str!("../../../book/src/wpe.md")]
    mod wpe {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
