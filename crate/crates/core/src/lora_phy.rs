//! Ideal LoRa preamble synthesis.
//!
//! One preamble is the base up-chirp
//! `s(t) = A exp(j(-pi B t + pi (B/T) t^2))` for `0 <= t < T`, whose
//! instantaneous frequency sweeps linearly from `-B/2` to `+B/2`. A packet is
//! `preamble_count` copies of the same symbol; the phase restarts at every
//! symbol boundary.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default LoRa bandwidth.
pub const DEFAULT_BANDWIDTH_HZ: f64 = 125e3;
/// Default receiver sample rate.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 1e6;
/// Default spreading factor; SF7 keeps tensors small.
pub const DEFAULT_SPREADING_FACTOR: u32 = 7;
pub const DEFAULT_PREAMBLE_COUNT: usize = 8;

/// Uniformly sampled complex baseband IQ.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("signal must contain at least one sample"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::input(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::input(format!("sample {i} is not finite")));
        }
        Ok(ComplexSignal {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a signal from samples produced by an internal transform that
    /// already preserves finiteness.
    pub(crate) fn from_parts(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        debug_assert!(!samples.is_empty());
        ComplexSignal {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of `|x[n]|^2`.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> ComplexSignal {
        ComplexSignal::from_parts(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate_hz,
        )
    }
}

/// Parameters of the base up-chirp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpParams {
    pub amplitude: f64,
    pub bandwidth_hz: f64,
    pub symbol_duration_s: f64,
    pub sample_rate_hz: f64,
    pub preamble_count: usize,
}

impl Default for ChirpParams {
    fn default() -> Self {
        ChirpParams::for_spreading_factor(DEFAULT_SPREADING_FACTOR)
    }
}

impl ChirpParams {
    /// Unit-amplitude chirp at 125 kHz / 1 MHz with `T = 2^sf / B`.
    pub fn for_spreading_factor(sf: u32) -> Self {
        ChirpParams {
            amplitude: 1.0,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            symbol_duration_s: f64::from(1u32 << sf) / DEFAULT_BANDWIDTH_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            preamble_count: DEFAULT_PREAMBLE_COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.amplitude) {
            return Err(Error::config(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        if !positive(self.bandwidth_hz) {
            return Err(Error::config(format!(
                "bandwidth_hz must be > 0, got {}",
                self.bandwidth_hz
            )));
        }
        if !positive(self.symbol_duration_s) {
            return Err(Error::config(format!(
                "symbol_duration_s must be > 0, got {}",
                self.symbol_duration_s
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz >= 2.0 * self.bandwidth_hz) {
            return Err(Error::config(format!(
                "sample_rate_hz must be >= 2 * bandwidth_hz ({}), got {}",
                2.0 * self.bandwidth_hz,
                self.sample_rate_hz
            )));
        }
        let n = self.symbol_duration_s * self.sample_rate_hz;
        if (n - n.round()).abs() > 1e-6 || n.round() < 1.0 {
            return Err(Error::config(format!(
                "symbol_duration_s * sample_rate_hz must be a whole number of samples, got {n}"
            )));
        }
        if self.preamble_count == 0 {
            return Err(Error::config("preamble_count must be positive"));
        }
        Ok(())
    }

    pub fn samples_per_symbol(&self) -> usize {
        (self.symbol_duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn packet_len(&self) -> usize {
        self.samples_per_symbol() * self.preamble_count
    }

    /// Phase of the chirp at time `t` seconds from the symbol start.
    pub fn phase_at(&self, t: f64) -> f64 {
        let b = self.bandwidth_hz;
        -PI * b * t + PI * (b / self.symbol_duration_s) * t * t
    }

    /// Instantaneous frequency at time `t` from the symbol start.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        -self.bandwidth_hz / 2.0 + self.bandwidth_hz / self.symbol_duration_s * t
    }
}

/// One preamble symbol, `round(T * fs)` samples.
pub fn synthesize_preamble(params: &ChirpParams) -> Result<ComplexSignal> {
    params.validate()?;
    let fs = params.sample_rate_hz;
    let samples = (0..params.samples_per_symbol())
        .map(|n| Complex64::from_polar(params.amplitude, params.phase_at(n as f64 / fs)))
        .collect();
    Ok(ComplexSignal::from_parts(samples, fs))
}

/// `preamble_count` identical preamble symbols back to back.
pub fn synthesize_packet(params: &ChirpParams) -> Result<ComplexSignal> {
    let symbol = synthesize_preamble(params)?;
    let mut samples = Vec::with_capacity(params.packet_len());
    for _ in 0..params.preamble_count {
        samples.extend_from_slice(symbol.samples());
    }
    Ok(ComplexSignal::from_parts(samples, params.sample_rate_hz))
}
