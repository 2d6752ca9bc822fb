//! Time-frequency representations: STFT, log-magnitude spectrogram and the
//! channel-independent spectrogram (CIS).
//!
//! Grids are stored row-major as `[freq_bin][frame]`, with a two-sided,
//! DC-centred frequency axis.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora_phy::ComplexSignal;

/// Floor added to magnitudes before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hann,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop_len: usize,
    pub window_kind: WindowKind,
    /// Keep only bins whose centre frequency lies in `[lo, hi]` Hz.
    pub crop_band_hz: Option<[f64; 2]>,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 128,
            hop_len: 64,
            window_kind: WindowKind::Hann,
            crop_band_hz: Some([-94e3, 94e3]),
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.window_len.is_power_of_two() {
            return Err(Error::config(format!(
                "window_len must be a power of two, got {}",
                self.window_len
            )));
        }
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return Err(Error::config(format!(
                "hop_len must be in 1..={}, got {}",
                self.window_len, self.hop_len
            )));
        }
        if let Some([lo, hi]) = self.crop_band_hz {
            if !(lo < hi) {
                return Err(Error::config(format!("crop band [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self, signal_len: usize) -> usize {
        if signal_len < self.window_len {
            0
        } else {
            (signal_len - self.window_len) / self.hop_len + 1
        }
    }

    /// Centre frequencies of the full (uncropped) two-sided axis.
    fn full_axis(&self, fs: f64) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| (i as f64 - (self.window_len / 2) as f64) * fs / n)
            .collect()
    }

    fn kept_bins(&self, fs: f64) -> Vec<usize> {
        let axis = self.full_axis(fs);
        (0..self.window_len)
            .filter(|&i| match self.crop_band_hz {
                Some([lo, hi]) => axis[i] >= lo && axis[i] <= hi,
                None => true,
            })
            .collect()
    }

    /// Output grid dims `(freq_bins, frames)` for a signal length.
    pub fn output_dims(&self, signal_len: usize, fs: f64) -> (usize, usize) {
        (self.kept_bins(fs).len(), self.frame_count(signal_len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub values: Vec<Complex64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
}

impl ComplexGrid {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.values[bin * self.n_frames + frame]
    }
}

pub fn stft(signal: &ComplexSignal, cfg: &StftConfig) -> Result<ComplexGrid> {
    cfg.validate()?;
    if signal.len() < cfg.window_len {
        return Err(Error::input(format!(
            "signal of {} samples is shorter than the {}-sample window",
            signal.len(),
            cfg.window_len
        )));
    }
    let fs = signal.sample_rate_hz();
    let win = cfg.window_kind.coefficients(cfg.window_len);
    let frames = cfg.frame_count(signal.len());
    let kept = cfg.kept_bins(fs);
    let full_axis = cfg.full_axis(fs);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window_len);
    let half = cfg.window_len / 2;
    let x = signal.samples();

    let mut values = vec![Complex64::new(0.0, 0.0); kept.len() * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window_len];
    for m in 0..frames {
        let start = m * cfg.hop_len;
        for (b, (s, w)) in buf.iter_mut().zip(x[start..].iter().zip(&win)) {
            *b = s * w;
        }
        fft.process(&mut buf);
        for (row, &i) in kept.iter().enumerate() {
            // centred index i maps to raw FFT bin (i + N/2) mod N
            values[row * frames + m] = buf[(i + half) % cfg.window_len];
        }
    }
    Ok(ComplexGrid {
        values,
        n_bins: kept.len(),
        n_frames: frames,
        freq_axis_hz: kept.iter().map(|&i| full_axis[i]).collect(),
        time_axis_s: (0..frames)
            .map(|m| (m * cfg.hop_len) as f64 / fs + cfg.window_len as f64 / (2.0 * fs))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    GlobalMinmax,
    PerSampleZscore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `[freq_bin][frame]`.
    pub values: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
    pub normalization: Normalization,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.at(b, frame)).collect()
    }

    pub fn normalized(mut self, kind: Normalization) -> Spectrogram {
        if self.normalization != Normalization::None || kind == Normalization::None {
            return self;
        }
        let n = self.values.len() as f64;
        match kind {
            Normalization::GlobalMinmax => {
                let (lo, hi) = self
                    .values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let range = hi - lo;
                for v in &mut self.values {
                    *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
                }
            }
            Normalization::PerSampleZscore => {
                let mean = self.values.iter().sum::<f64>() / n;
                let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                for v in &mut self.values {
                    *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
                }
            }
            Normalization::None => unreachable!(),
        }
        self.normalization = kind;
        self
    }

    /// CSV grid: header row of frame times, then one row per frequency bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz");
        for t in &self.time_axis_s {
            let _ = write!(out, ",{t:.9}");
        }
        out.push('\n');
        for b in 0..self.n_bins {
            let _ = write!(out, "{}", self.freq_axis_hz[b]);
            for f in 0..self.n_frames {
                let _ = write!(out, ",{}", self.at(b, f));
            }
            out.push('\n');
        }
        out
    }
}

/// `ln(max(|STFT|, LOG_FLOOR))` with the configured band crop; no normalization.
pub fn log_spectrogram(signal: &ComplexSignal, cfg: &StftConfig) -> Result<Spectrogram> {
    let grid = stft(signal, cfg)?;
    Ok(Spectrogram {
        values: grid.values.iter().map(|c| c.norm().max(LOG_FLOOR).ln()).collect(),
        n_bins: grid.n_bins,
        n_frames: grid.n_frames,
        freq_axis_hz: grid.freq_axis_hz,
        time_axis_s: grid.time_axis_s,
        normalization: Normalization::None,
    })
}

/// Channel-independent spectrogram: difference of adjacent log-domain columns
/// (a quotient of adjacent linear columns). Output has one frame fewer.
pub fn cis(spec: &Spectrogram) -> Result<Spectrogram> {
    if spec.normalization != Normalization::None {
        return Err(Error::input("cis requires an unnormalized log spectrogram"));
    }
    if spec.n_frames < 2 {
        return Err(Error::input(format!(
            "cis needs at least 2 frames, got {}",
            spec.n_frames
        )));
    }
    let frames = spec.n_frames - 1;
    let mut values = Vec::with_capacity(spec.n_bins * frames);
    for b in 0..spec.n_bins {
        for m in 0..frames {
            values.push(spec.at(b, m + 1) - spec.at(b, m));
        }
    }
    Ok(Spectrogram {
        values,
        n_bins: spec.n_bins,
        n_frames: frames,
        freq_axis_hz: spec.freq_axis_hz.clone(),
        time_axis_s: spec.time_axis_s[1..].to_vec(),
        normalization: Normalization::None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Spectrogram,
    Cis,
}

/// Full signal-to-network-input recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    pub stft: StftConfig,
    pub kind: FeatureKind,
    pub normalization: Normalization,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            stft: StftConfig::default(),
            kind: FeatureKind::Spectrogram,
            normalization: Normalization::GlobalMinmax,
        }
    }
}

impl RepresentationConfig {
    pub fn features(&self, signal: &ComplexSignal) -> Result<Spectrogram> {
        let spec = log_spectrogram(signal, &self.stft)?;
        let spec = match self.kind {
            FeatureKind::Spectrogram => spec,
            FeatureKind::Cis => cis(&spec)?,
        };
        Ok(spec.normalized(self.normalization))
    }

    pub fn output_dims(&self, signal_len: usize, fs: f64) -> (usize, usize) {
        let (bins, frames) = self.stft.output_dims(signal_len, fs);
        match self.kind {
            FeatureKind::Spectrogram => (bins, frames),
            FeatureKind::Cis => (bins, frames.saturating_sub(1)),
        }
    }
}
