//! End-to-end maximum-mutual-information (MMI) training of a phonetic HMM
//! recognizer, with a CTC baseline, WFST decoding, forced alignment and
//! posterior-averaging ensembles.
//!
//! The crate is organized around the training criterion: [`mmi`] holds the
//! numerator/denominator forward-backward kernels and their analytic
//! gradients, [`ctc`] the baseline loss, [`acoustic`] the feed-forward
//! network and training loop, [`decode`] the WFST machinery and beam search,
//! and [`harness`] the synthetic-corpus generator and evaluation metrics.
//!
//! Batch work (loss evaluation across a mini-batch, decoding across
//! utterances) is data-parallel via rayon when the default `parallel`
//! feature is enabled; disabling it falls back to sequential loops with
//! identical results.

pub mod acoustic;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod harness;
pub mod inventory;
pub mod lm;
pub mod mmi;
pub mod par;
pub mod testkit;

pub use error::{Error, Result};
