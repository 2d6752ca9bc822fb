//! Synthetic LoRa radio-frequency-fingerprint identification workbench.
//!
//! The crate covers the whole path from waveform to classifier:
//!
//! * [`lora_phy`] synthesizes ideal preamble chirps and multi-preamble packets.
//! * [`impairments`] applies transmitter and receiver hardware distortions.
//! * [`channel`] emulates tapped-delay-line fading channels and AWGN, and
//!   provides the online augmentation sampler.
//! * [`representation`] turns IQ into log-magnitude spectrograms (and the
//!   channel-independent spectrogram baseline).
//! * [`nn`] is a small CPU convolutional network engine with analytic
//!   gradients, Adam and a plateau scheduler.
//! * [`objectives`] holds the NT-Xent and cross-entropy losses.
//! * [`datasets`] generates, persists and loads packet corpora.
//! * [`pipelines`] runs contrastive pretraining, Siamese fine-tuning,
//!   inference and evaluation.
//! * [`verification`] contains brute-force oracles used by the test suites.

pub mod benchmark;
pub mod channel;
pub mod datasets;
pub mod error;
pub mod impairments;
pub mod lora_phy;
pub mod nn;
pub mod objectives;
pub mod pipelines;
pub mod representation;
pub mod seed;
pub mod verification;

pub use error::{Error, Result};
pub use lora_phy::{ChirpParams, ComplexSignal};

pub use num_complex::Complex64;
