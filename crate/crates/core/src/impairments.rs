//! Transmitter and receiver hardware impairments.
//!
//! Transmitter chain, applied in this order:
//!
//! 1. memoryless odd-order PA: `y = x (1 + c3 |x|^2 + c5 |x|^4)` with complex
//!    `c3 = a3_amp e^{j a3_phase}`, `c5 = a5_amp e^{j a5_phase}`;
//! 2. IQ imbalance: the Q branch is scaled by `g = 10^(gain_db/20)` and skewed
//!    by `phi`, i.e. `Q' = g (Q cos(phi) - I sin(phi))`, `I' = I`;
//! 3. CFO rotation `e^{j 2 pi cfo n / fs}`.
//!
//! Receiver chain: causal FIR ripple (zero-padded, same length), then the
//! receiver's own IQ imbalance and CFO.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora_phy::{ComplexSignal, DEFAULT_BANDWIDTH_HZ};
use crate::seed;

pub const MAX_IQ_GAIN_DB: f64 = 1.0;
pub const MAX_IQ_PHASE_RAD: f64 = 0.1;
pub const MAX_PA_AMP: f64 = 0.1;
pub const MAX_RIPPLE_TAPS: usize = 5;

/// Largest device CFO produced by [`sample_device_profiles`] at `spread = 1`.
pub const DEVICE_CFO_SPAN_HZ: f64 = 15e3;
/// Largest receiver CFO produced by [`sample_receiver_profiles`] at `spread = 1`.
pub const RECEIVER_CFO_SPAN_HZ: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaCoeffs {
    pub a3_amp: f64,
    pub a3_phase: f64,
    pub a5_amp: f64,
    pub a5_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device_id: u32,
    pub cfo_hz: f64,
    pub iq_gain_imbalance_db: f64,
    pub iq_phase_imbalance_rad: f64,
    pub pa_coeffs: PaCoeffs,
    pub seed: u64,
}

impl DeviceProfile {
    pub fn identity(device_id: u32) -> Self {
        DeviceProfile {
            device_id,
            cfo_hz: 0.0,
            iq_gain_imbalance_db: 0.0,
            iq_phase_imbalance_rad: 0.0,
            pa_coeffs: PaCoeffs::default(),
            seed: 0,
        }
    }

    /// Checks the magnitude bounds; the CFO must stay below a quarter of the
    /// signal bandwidth.
    pub fn validate(&self, bandwidth_hz: f64) -> Result<()> {
        let id = self.device_id;
        if !(self.cfo_hz.abs() < bandwidth_hz / 4.0) {
            return Err(Error::config(format!(
                "device {id}: |cfo_hz| = {} must be < bandwidth/4 = {}",
                self.cfo_hz.abs(),
                bandwidth_hz / 4.0
            )));
        }
        check_iq(self.iq_gain_imbalance_db, self.iq_phase_imbalance_rad)
            .map_err(|m| Error::config(format!("device {id}: {m}")))?;
        let pa = &self.pa_coeffs;
        for (name, v) in [("a3_amp", pa.a3_amp), ("a5_amp", pa.a5_amp)] {
            if !(v.abs() <= MAX_PA_AMP) {
                return Err(Error::config(format!(
                    "device {id}: |{name}| = {v} exceeds {MAX_PA_AMP}"
                )));
            }
        }
        if !(pa.a3_phase.is_finite() && pa.a5_phase.is_finite()) {
            return Err(Error::config(format!("device {id}: PA phases must be finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverProfile {
    pub receiver_id: u32,
    pub ripple_response: Vec<Complex64>,
    pub rx_cfo_hz: f64,
    pub rx_iq_gain_db: f64,
    pub rx_iq_phase_rad: f64,
    pub seed: u64,
}

impl ReceiverProfile {
    pub fn identity(receiver_id: u32) -> Self {
        ReceiverProfile {
            receiver_id,
            ripple_response: vec![Complex64::new(1.0, 0.0)],
            rx_cfo_hz: 0.0,
            rx_iq_gain_db: 0.0,
            rx_iq_phase_rad: 0.0,
            seed: 0,
        }
    }

    /// Scales `taps` to unit energy and builds a profile with the given ripple.
    pub fn with_ripple(receiver_id: u32, taps: &[Complex64]) -> Result<Self> {
        let energy: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::config("ripple response must have non-zero finite energy"));
        }
        let scale = energy.sqrt().recip();
        let profile = ReceiverProfile {
            ripple_response: taps.iter().map(|t| t * scale).collect(),
            ..ReceiverProfile::identity(receiver_id)
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.receiver_id;
        let taps = self.ripple_response.len();
        if taps == 0 || taps > MAX_RIPPLE_TAPS {
            return Err(Error::config(format!(
                "receiver {id}: ripple response needs 1..={MAX_RIPPLE_TAPS} taps, got {taps}"
            )));
        }
        let energy: f64 = self.ripple_response.iter().map(|t| t.norm_sqr()).sum();
        if (energy - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "receiver {id}: ripple response energy must be 1, got {energy}"
            )));
        }
        if !self.rx_cfo_hz.is_finite() {
            return Err(Error::config(format!("receiver {id}: rx_cfo_hz must be finite")));
        }
        check_iq(self.rx_iq_gain_db, self.rx_iq_phase_rad)
            .map_err(|m| Error::config(format!("receiver {id}: {m}")))
    }
}

fn check_iq(gain_db: f64, phase_rad: f64) -> std::result::Result<(), String> {
    if !(gain_db.abs() <= MAX_IQ_GAIN_DB) {
        return Err(format!("|iq gain| = {gain_db} dB exceeds {MAX_IQ_GAIN_DB} dB"));
    }
    if !(phase_rad.abs() <= MAX_IQ_PHASE_RAD) {
        return Err(format!("|iq phase| = {phase_rad} rad exceeds {MAX_IQ_PHASE_RAD} rad"));
    }
    Ok(())
}

fn iq_imbalance(samples: &mut [Complex64], gain_db: f64, phase_rad: f64) {
    if gain_db == 0.0 && phase_rad == 0.0 {
        return;
    }
    let g = 10f64.powf(gain_db / 20.0);
    let (sin, cos) = phase_rad.sin_cos();
    for s in samples.iter_mut() {
        let q = g * (s.im * cos - s.re * sin);
        *s = Complex64::new(s.re, q);
    }
}

fn rotate(samples: &mut [Complex64], freq_hz: f64, fs: f64) {
    if freq_hz == 0.0 {
        return;
    }
    let w = 2.0 * PI * freq_hz / fs;
    for (n, s) in samples.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, w * n as f64);
    }
}

pub fn apply_tx_impairments(signal: &ComplexSignal, profile: &DeviceProfile) -> ComplexSignal {
    let pa = &profile.pa_coeffs;
    let c3 = Complex64::from_polar(pa.a3_amp, pa.a3_phase);
    let c5 = Complex64::from_polar(pa.a5_amp, pa.a5_phase);
    let mut out: Vec<Complex64> = if pa.a3_amp == 0.0 && pa.a5_amp == 0.0 {
        signal.samples().to_vec()
    } else {
        signal
            .samples()
            .iter()
            .map(|&x| {
                let p = x.norm_sqr();
                x * (Complex64::new(1.0, 0.0) + c3 * p + c5 * (p * p))
            })
            .collect()
    };
    iq_imbalance(&mut out, profile.iq_gain_imbalance_db, profile.iq_phase_imbalance_rad);
    rotate(&mut out, profile.cfo_hz, signal.sample_rate_hz());
    ComplexSignal::from_parts(out, signal.sample_rate_hz())
}

pub fn apply_rx_impairments(
    signal: &ComplexSignal,
    profile: &ReceiverProfile,
) -> Result<ComplexSignal> {
    let taps = &profile.ripple_response;
    if signal.len() <= taps.len() {
        return Err(Error::input(format!(
            "signal of {} samples is not longer than the {}-tap ripple filter",
            signal.len(),
            taps.len()
        )));
    }
    let x = signal.samples();
    let mut out: Vec<Complex64> = (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(l, g)| g * x[n - l])
                .sum()
        })
        .collect();
    iq_imbalance(&mut out, profile.rx_iq_gain_db, profile.rx_iq_phase_rad);
    rotate(&mut out, profile.rx_cfo_hz, signal.sample_rate_hz());
    Ok(ComplexSignal::from_parts(out, signal.sample_rate_hz()))
}

fn check_spread(spread: f64) -> Result<()> {
    if !(spread > 0.0 && spread <= 1.0) {
        return Err(Error::config(format!("spread must lie in (0, 1], got {spread}")));
    }
    Ok(())
}

/// Synthetic transmitter population.
///
/// CFOs are stratified over `[-15, 15] kHz * spread`: the span is cut into
/// `count` equal strata, each device takes the central half of one stratum
/// (uniform jitter), and strata are assigned in a seeded random order. This
/// keeps neighbouring devices at least half a stratum apart. IQ and PA
/// parameters are drawn uniformly inside bounds scaled by `spread`.
pub fn sample_device_profiles(count: usize, seed: u64, spread: f64) -> Result<Vec<DeviceProfile>> {
    if count < 2 {
        return Err(Error::config(format!("need at least 2 devices, got {count}")));
    }
    check_spread(spread)?;
    let mut rng = seed::rng(seed::derive(seed, &[0xD0]));
    let mut strata: Vec<usize> = (0..count).collect();
    // Fisher-Yates with our own stream so the order is part of the seed contract
    for i in (1..count).rev() {
        let j = rng.random_range(0..=i);
        strata.swap(i, j);
    }
    let width = 2.0 * DEVICE_CFO_SPAN_HZ / count as f64;
    let profiles = strata
        .into_iter()
        .enumerate()
        .map(|(k, stratum)| {
            let jitter = rng.random_range(0.25..0.75);
            let cfo = spread * (-DEVICE_CFO_SPAN_HZ + width * (stratum as f64 + jitter));
            DeviceProfile {
                device_id: k as u32,
                cfo_hz: cfo,
                iq_gain_imbalance_db: spread * rng.random_range(-0.8..0.8),
                iq_phase_imbalance_rad: spread * rng.random_range(-0.08..0.08),
                pa_coeffs: PaCoeffs {
                    a3_amp: spread * rng.random_range(0.0..0.08),
                    a3_phase: rng.random_range(-PI..PI),
                    a5_amp: spread * rng.random_range(0.0..0.04),
                    a5_phase: rng.random_range(-PI..PI),
                },
                seed: seed::derive(seed, &[0xD1, k as u64]),
            }
        })
        .collect::<Vec<_>>();
    for p in &profiles {
        p.validate(DEFAULT_BANDWIDTH_HZ)?;
    }
    Ok(profiles)
}

/// Synthetic receiver population: three-tap unit-energy ripple
/// `[1, e1, e2]` with `|e_i| <= 0.15 * spread`, CFO within
/// `+-400 Hz * spread`, and mild IQ imbalance.
pub fn sample_receiver_profiles(
    count: usize,
    seed: u64,
    spread: f64,
) -> Result<Vec<ReceiverProfile>> {
    if count == 0 {
        return Err(Error::config("need at least 1 receiver"));
    }
    check_spread(spread)?;
    let mut rng = seed::rng(seed::derive(seed, &[0xE0]));
    (0..count)
        .map(|r| {
            let mut taps = vec![Complex64::new(1.0, 0.0)];
            for _ in 0..2 {
                let mag = spread * rng.random_range(0.0..0.15);
                taps.push(Complex64::from_polar(mag, rng.random_range(-PI..PI)));
            }
            let mut profile = ReceiverProfile::with_ripple(r as u32, &taps)?;
            profile.rx_cfo_hz = spread * rng.random_range(-RECEIVER_CFO_SPAN_HZ..RECEIVER_CFO_SPAN_HZ);
            profile.rx_iq_gain_db = spread * rng.random_range(-0.3..0.3);
            profile.rx_iq_phase_rad = spread * rng.random_range(-0.03..0.03);
            profile.seed = seed::derive(seed, &[0xE1, r as u64]);
            profile.validate()?;
            Ok(profile)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora_phy::{synthesize_packet, ChirpParams};

    fn chirp() -> ComplexSignal {
        synthesize_packet(&ChirpParams::default()).unwrap()
    }

    #[test]
    fn identity_profiles_are_identity() {
        let x = chirp();
        let y = apply_tx_impairments(&x, &DeviceProfile::identity(0));
        assert_eq!(x, y);
        let z = apply_rx_impairments(&x, &ReceiverProfile::identity(0)).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn cfo_shifts_tone() {
        let fs = 1e6;
        let n = 1024;
        let f1 = 16.0 * fs / n as f64;
        let tone: Vec<_> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f1 * i as f64 / fs))
            .collect();
        let x = ComplexSignal::new(tone, fs).unwrap();
        let profile = DeviceProfile {
            cfo_hz: 5.0 * fs / n as f64,
            ..DeviceProfile::identity(0)
        };
        let y = apply_tx_impairments(&x, &profile);
        // naive DFT peak
        let peak = (0..n)
            .max_by(|&a, &b| {
                let m = |k: usize| {
                    y.samples()
                        .iter()
                        .enumerate()
                        .map(|(i, s)| s * Complex64::from_polar(1.0, -2.0 * PI * (k * i) as f64 / n as f64))
                        .sum::<Complex64>()
                        .norm()
                };
                m(a).partial_cmp(&m(b)).unwrap()
            })
            .unwrap();
        assert_eq!(peak, 21);
    }

    #[test]
    fn third_order_pa_on_unit_envelope() {
        let x = chirp();
        let profile = DeviceProfile {
            pa_coeffs: PaCoeffs {
                a3_amp: 0.05,
                ..PaCoeffs::default()
            },
            ..DeviceProfile::identity(0)
        };
        let y = apply_tx_impairments(&x, &profile);
        for s in y.samples() {
            assert!((s.norm() - 1.05).abs() < 1e-12);
        }
    }

    #[test]
    fn one_sample_delay_ripple() {
        let x = chirp();
        let rx = ReceiverProfile::with_ripple(0, &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
            .unwrap();
        let y = apply_rx_impairments(&x, &rx).unwrap();
        assert_eq!(y.samples()[0], Complex64::new(0.0, 0.0));
        assert_eq!(&y.samples()[1..], &x.samples()[..x.len() - 1]);
    }

    #[test]
    fn quadrature_two_tap_ripple_preserves_energy() {
        let x = chirp();
        let rx = ReceiverProfile::with_ripple(0, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.3)])
            .unwrap();
        let y = apply_rx_impairments(&x, &rx).unwrap();
        let ratio = y.energy() / x.energy();
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn short_signal_rejected() {
        let x = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 3], 1e6).unwrap();
        let rx = ReceiverProfile::with_ripple(0, &[Complex64::new(1.0, 0.0); 3]).unwrap();
        assert!(matches!(apply_rx_impairments(&x, &rx), Err(Error::Input(_))));
    }

    #[test]
    fn sampler_is_deterministic_and_seed_sensitive() {
        let a = sample_device_profiles(10, 42, 1.0).unwrap();
        assert_eq!(a, sample_device_profiles(10, 42, 1.0).unwrap());
        let b = sample_device_profiles(10, 43, 1.0).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!(
                pa.cfo_hz != pb.cfo_hz
                    || pa.iq_gain_imbalance_db != pb.iq_gain_imbalance_db
                    || pa.iq_phase_imbalance_rad != pb.iq_phase_imbalance_rad
                    || pa.pa_coeffs != pb.pa_coeffs
            );
        }
    }

    #[test]
    fn full_spread_cfo_spans_several_khz_magnitudes() {
        let p = sample_device_profiles(10, 7, 1.0).unwrap();
        let mut khz: Vec<i64> = p.iter().map(|d| (d.cfo_hz.abs() / 1e3).floor() as i64).collect();
        khz.sort_unstable();
        khz.dedup();
        assert!(khz.len() >= 3, "{khz:?}");
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                assert!((p[i].cfo_hz - p[j].cfo_hz).abs() >= 1.5e3 - 1e-6);
            }
        }
    }

    #[test]
    fn sampler_rejects_bad_args() {
        assert!(sample_device_profiles(1, 0, 1.0).is_err());
        assert!(sample_device_profiles(4, 0, 0.0).is_err());
        assert!(sample_device_profiles(4, 0, 1.5).is_err());
    }

    #[test]
    fn profile_bounds_enforced() {
        let mut d = DeviceProfile::identity(0);
        d.iq_gain_imbalance_db = 1.5;
        assert!(d.validate(125e3).is_err());
        let mut d = DeviceProfile::identity(0);
        d.cfo_hz = 40e3;
        assert!(d.validate(125e3).is_err());
        let mut r = ReceiverProfile::identity(0);
        r.ripple_response = vec![Complex64::new(0.5, 0.0)];
        assert!(r.validate().is_err());
    }
}
