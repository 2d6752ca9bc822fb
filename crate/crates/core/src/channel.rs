//! Tapped-delay-line fading channels, AWGN, and the online augmentation sampler.
//!
//! A realization has `NUM_TAPS` taps at continuous delays `l * tau_rms / 2`
//! with mean powers `p_l ~ exp(-tau_l / tau_rms)` normalized to unit sum.
//! Static taps are circular complex Gaussian. When the drawn Doppler is
//! positive every tap is an independent Clarke sum-of-sinusoids process with
//! `SCATTERERS_PER_TAP` equal-power scatterers, sampled at `fs`.
//!
//! Sub-sample delays are applied in the frequency domain on the packet DFT.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora_phy::ComplexSignal;
use crate::seed;

pub const NUM_TAPS: usize = 16;
pub const SCATTERERS_PER_TAP: usize = 32;

/// Uniform sampling intervals for one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationRanges {
    pub rms_delay_spread_ns: [f64; 2],
    pub doppler_hz: [f64; 2],
    pub snr_db: [f64; 2],
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        AugmentationRanges {
            rms_delay_spread_ns: [5.0, 300.0],
            doppler_hz: [0.0, 5.0],
            snr_db: [10.0, 40.0],
        }
    }
}

impl AugmentationRanges {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, [lo, hi]: [f64; 2], min: f64| {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("{name} bounds must be finite")));
            }
            if lo > hi {
                return Err(Error::config(format!("{name} range is inverted: [{lo}, {hi}]")));
            }
            if lo < min {
                return Err(Error::config(format!("{name} lower bound {lo} is below {min}")));
            }
            Ok(())
        };
        check("rms_delay_spread_ns", self.rms_delay_spread_ns, 0.0)?;
        check("doppler_hz", self.doppler_hz, 0.0)?;
        check("snr_db", self.snr_db, f64::NEG_INFINITY)
    }

    /// Degenerate ranges pinned at one point.
    pub fn fixed(rms_delay_spread_ns: f64, doppler_hz: f64, snr_db: f64) -> Self {
        AugmentationRanges {
            rms_delay_spread_ns: [rms_delay_spread_ns; 2],
            doppler_hz: [doppler_hz; 2],
            snr_db: [snr_db; 2],
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Clarke/Jakes sum-of-sinusoids fading process with mean power `power`.
///
/// `g(t) = sqrt(power / N) * sum_s exp(j (2 pi f_d cos(alpha_s) t + phi_s))`
/// with arrival angles `alpha_s = 2 pi (s + u_s) / N` and uniform phases.
#[derive(Debug, Clone, PartialEq)]
pub struct JakesProcess {
    /// Angular Doppler frequency of every scatterer, rad/s.
    omegas: Vec<f64>,
    /// Complex amplitude of every scatterer (includes the power scaling).
    amplitudes: Vec<Complex64>,
}

impl JakesProcess {
    pub fn new<R: Rng>(doppler_hz: f64, scatterers: usize, power: f64, rng: &mut R) -> Self {
        let scale = (power / scatterers as f64).sqrt();
        let (omegas, amplitudes) = (0..scatterers)
            .map(|s| {
                let alpha = 2.0 * PI * (s as f64 + rng.random::<f64>()) / scatterers as f64;
                let phi = rng.random_range(-PI..PI);
                (
                    2.0 * PI * doppler_hz * alpha.cos(),
                    Complex64::from_polar(scale, phi),
                )
            })
            .unzip();
        JakesProcess { omegas, amplitudes }
    }

    pub fn gain_at(&self, t: f64) -> Complex64 {
        self.omegas
            .iter()
            .zip(&self.amplitudes)
            .map(|(&w, &a)| a * Complex64::from_polar(1.0, w * t))
            .sum()
    }

    /// Gains at `t = n / fs` for `n in 0..len`.
    ///
    /// Expands the process as a polynomial in time around the middle of the
    /// window; the degree is chosen so the truncation error stays below
    /// 1e-13 relative. Falls back to direct evaluation for windows spanning
    /// many Doppler cycles.
    pub fn series(&self, len: usize, fs: f64) -> Vec<Complex64> {
        let half = 0.5 * (len.saturating_sub(1)) as f64 / fs;
        let w_max = self.omegas.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let x = w_max * half;
        // smallest degree with x^(m+1)/(m+1)! < 1e-13
        let mut degree = 0usize;
        let mut term = x;
        while term > 1e-13 && degree < 24 {
            degree += 1;
            term *= x / (degree + 1) as f64;
        }
        if degree >= 24 {
            return (0..len).map(|n| self.gain_at(n as f64 / fs)).collect();
        }
        // coefficients of the Taylor series about t = half, in powers of (t - half)
        let center: Vec<Complex64> = self
            .omegas
            .iter()
            .zip(&self.amplitudes)
            .map(|(&w, &a)| a * Complex64::from_polar(1.0, w * half))
            .collect();
        let mut coeffs = Vec::with_capacity(degree + 1);
        let mut fact = 1.0;
        for m in 0..=degree {
            if m > 0 {
                fact *= m as f64;
            }
            let c: Complex64 = self
                .omegas
                .iter()
                .zip(&center)
                .map(|(&w, &c)| c * Complex64::new(0.0, w).powu(m as u32))
                .sum();
            coeffs.push(c / fact);
        }
        (0..len)
            .map(|n| {
                let dt = n as f64 / fs - half;
                coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * dt + c)
            })
            .collect()
    }
}

/// Per-tap complex gains: constant over the packet, or one value per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum TapGains {
    Static(Vec<Complex64>),
    TimeVarying(Vec<Vec<Complex64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub tap_delays_s: Vec<f64>,
    pub tap_gains: TapGains,
    pub doppler_hz: f64,
    pub rms_delay_spread_s: f64,
    /// SNR drawn alongside the channel, used by [`augment`].
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelRealization {
    /// Single unit tap at zero delay.
    pub fn identity() -> Self {
        ChannelRealization {
            tap_delays_s: vec![0.0],
            tap_gains: TapGains::Static(vec![Complex64::new(1.0, 0.0)]),
            doppler_hz: 0.0,
            rms_delay_spread_s: 0.0,
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    /// Time-invariant channel from explicit taps.
    pub fn from_static_taps(delays_s: Vec<f64>, gains: Vec<Complex64>) -> Result<Self> {
        if delays_s.is_empty() || delays_s.len() != gains.len() {
            return Err(Error::config("static channel needs equally many delays and gains"));
        }
        if delays_s[0] != 0.0 || delays_s.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("tap delays must start at 0 and be sorted ascending"));
        }
        Ok(ChannelRealization {
            tap_delays_s: delays_s,
            tap_gains: TapGains::Static(gains),
            doppler_hz: 0.0,
            rms_delay_spread_s: 0.0,
            snr_db: f64::INFINITY,
            seed: 0,
        })
    }

    /// `sum_l |h_l|^2`, time-averaged for varying taps.
    pub fn energy(&self) -> f64 {
        match &self.tap_gains {
            TapGains::Static(g) => g.iter().map(|h| h.norm_sqr()).sum(),
            TapGains::TimeVarying(series) => series
                .iter()
                .map(|s| s.iter().map(|h| h.norm_sqr()).sum::<f64>() / s.len() as f64)
                .sum(),
        }
    }

    /// Static realization with the same delays, frozen at sample `n`.
    pub fn frozen_at(&self, n: usize) -> ChannelRealization {
        let gains = match &self.tap_gains {
            TapGains::Static(g) => g.clone(),
            TapGains::TimeVarying(s) => s.iter().map(|tap| tap[n.min(tap.len() - 1)]).collect(),
        };
        ChannelRealization {
            tap_gains: TapGains::Static(gains),
            doppler_hz: 0.0,
            ..self.clone()
        }
    }

    /// Channel frequency response of static taps at `freq_hz`.
    pub fn static_response(&self, freq_hz: f64) -> Option<Complex64> {
        match &self.tap_gains {
            TapGains::Static(g) => Some(
                self.tap_delays_s
                    .iter()
                    .zip(g)
                    .map(|(&tau, &h)| h * Complex64::from_polar(1.0, -2.0 * PI * freq_hz * tau))
                    .sum(),
            ),
            TapGains::TimeVarying(_) => None,
        }
    }
}

/// Mean tap powers of the exponential profile for a given RMS delay spread.
pub fn exponential_profile(rms_delay_spread_s: f64) -> (Vec<f64>, Vec<f64>) {
    let delays: Vec<f64> = (0..NUM_TAPS)
        .map(|l| l as f64 * rms_delay_spread_s / 2.0)
        .collect();
    let raw: Vec<f64> = (0..NUM_TAPS).map(|l| (-(l as f64) / 2.0).exp()).collect();
    let total: f64 = raw.iter().sum();
    (delays, raw.into_iter().map(|p| p / total).collect())
}

pub fn sample_channel(
    ranges: &AugmentationRanges,
    seed: u64,
    packet_len: usize,
    fs: f64,
) -> Result<ChannelRealization> {
    ranges.validate()?;
    if packet_len == 0 || !(fs > 0.0) {
        return Err(Error::config("packet_len and fs must be positive"));
    }
    let mut rng = seed::rng(seed);
    let tau_rms = uniform(&mut rng, ranges.rms_delay_spread_ns) * 1e-9;
    let doppler = uniform(&mut rng, ranges.doppler_hz);
    let snr_db = uniform(&mut rng, ranges.snr_db);
    let (delays, powers) = exponential_profile(tau_rms);
    let tap_gains = if doppler > 0.0 {
        TapGains::TimeVarying(
            powers
                .iter()
                .map(|&p| {
                    JakesProcess::new(doppler, SCATTERERS_PER_TAP, p, &mut rng).series(packet_len, fs)
                })
                .collect(),
        )
    } else {
        TapGains::Static(powers.iter().map(|&p| complex_gaussian(&mut rng, p)).collect())
    };
    Ok(ChannelRealization {
        tap_delays_s: delays,
        tap_gains,
        doppler_hz: doppler,
        rms_delay_spread_s: tau_rms,
        snr_db,
        seed,
    })
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn fft_pair(len: usize) -> FftPair {
    thread_local! {
        static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
    }
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        FftPair {
            forward: p.plan_fft_forward(len),
            inverse: p.plan_fft_inverse(len),
        }
    })
}

/// Signed frequency of DFT bin `k` for an `n`-point transform.
fn bin_freq(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    k * fs / n as f64
}

fn delayed_spectrum(spectrum: &[Complex64], tau: f64, fs: f64) -> Vec<Complex64> {
    let n = spectrum.len();
    spectrum
        .iter()
        .enumerate()
        .map(|(k, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * bin_freq(k, n, fs) * tau))
        .collect()
}

pub fn apply_channel(signal: &ComplexSignal, ch: &ChannelRealization) -> ComplexSignal {
    let n = signal.len();
    let fs = signal.sample_rate_hz();
    let fft = fft_pair(n);
    let mut spectrum = signal.samples().to_vec();
    fft.forward.process(&mut spectrum);
    let norm = 1.0 / n as f64;
    let out = match &ch.tap_gains {
        TapGains::Static(gains) => {
            let mut y: Vec<Complex64> = spectrum
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    let f = bin_freq(k, n, fs);
                    let h: Complex64 = ch
                        .tap_delays_s
                        .iter()
                        .zip(gains)
                        .map(|(&tau, &g)| g * Complex64::from_polar(1.0, -2.0 * PI * f * tau))
                        .sum();
                    x * h
                })
                .collect();
            fft.inverse.process(&mut y);
            y.iter_mut().for_each(|v| *v *= norm);
            y
        }
        TapGains::TimeVarying(series) => {
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            for (&tau, gains) in ch.tap_delays_s.iter().zip(series) {
                let mut delayed = delayed_spectrum(&spectrum, tau, fs);
                fft.inverse.process(&mut delayed);
                for ((acc, d), g) in y.iter_mut().zip(&delayed).zip(gains) {
                    *acc += d * g * norm;
                }
            }
            y
        }
    };
    ComplexSignal::from_parts(out, fs)
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the empirical
/// mean power of `signal`. An infinite SNR returns the input unchanged.
pub fn add_awgn(signal: &ComplexSignal, snr_db: f64, seed: u64) -> Result<ComplexSignal> {
    let power = signal.mean_power();
    if !power.is_finite() {
        return Err(Error::input("signal power is not finite"));
    }
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::input("snr_db is NaN"));
    }
    let noise_power = power / 10f64.powf(snr_db / 10.0);
    let mut rng = seed::rng(seed);
    let out = signal
        .samples()
        .iter()
        .map(|&s| s + complex_gaussian(&mut rng, noise_power))
        .collect();
    Ok(ComplexSignal::from_parts(out, signal.sample_rate_hz()))
}

/// One random channel + noise view of `signal`.
pub fn augment(signal: &ComplexSignal, ranges: &AugmentationRanges, seed: u64) -> Result<ComplexSignal> {
    let ch = sample_channel(
        ranges,
        seed::derive(seed, &[1]),
        signal.len(),
        signal.sample_rate_hz(),
    )?;
    let faded = apply_channel(signal, &ch);
    add_awgn(&faded, ch.snr_db, seed::derive(seed, &[2]))
}
