//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Everything here also runs natively, which is how the tests exercise it.

use rffi::channel::{self, AugmentationRanges, JakesProcess};
use rffi::impairments::{apply_rx_impairments, apply_tx_impairments, DeviceProfile, PaCoeffs, ReceiverProfile};
use rffi::lora_phy::{synthesize_packet, ChirpParams};
use rffi::representation::{FeatureKind, Normalization, RepresentationConfig};
use rffi::seed;
use wasm_bindgen::prelude::*;

/// Row-major grid handed to JavaScript.
#[wasm_bindgen]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

#[wasm_bindgen]
impl Grid {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
}

fn err(e: rffi::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Received-packet features after TX impairments, a random multipath channel
/// and noise. `cis` selects the channel-independent variant.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn packet_features(
    cfo_hz: f64,
    iq_gain_db: f64,
    iq_phase_rad: f64,
    pa_a3: f64,
    rms_delay_ns: f64,
    doppler_hz: f64,
    snr_db: f64,
    cis: bool,
    seed_value: u32,
) -> Result<Grid, JsError> {
    let chirp = ChirpParams::default();
    let device = DeviceProfile {
        cfo_hz,
        iq_gain_imbalance_db: iq_gain_db,
        iq_phase_imbalance_rad: iq_phase_rad,
        pa_coeffs: PaCoeffs {
            a3_amp: pa_a3,
            ..PaCoeffs::default()
        },
        ..DeviceProfile::identity(0)
    };
    device.validate(chirp.bandwidth_hz).map_err(err)?;
    let tx = apply_tx_impairments(&synthesize_packet(&chirp).map_err(err)?, &device);
    let ranges = AugmentationRanges::fixed(rms_delay_ns, doppler_hz, snr_db);
    let rx = channel::augment(&tx, &ranges, seed_value as u64).map_err(err)?;
    let rx = apply_rx_impairments(&rx, &ReceiverProfile::identity(0)).map_err(err)?;
    let rep = RepresentationConfig {
        kind: if cis { FeatureKind::Cis } else { FeatureKind::Spectrogram },
        normalization: Normalization::GlobalMinmax,
        ..RepresentationConfig::default()
    };
    let spec = rep.features(&rx).map_err(err)?;
    Ok(Grid {
        rows: spec.n_bins,
        cols: spec.n_frames,
        values: spec.values.iter().map(|&v| v as f32).collect(),
    })
}

/// Exponential power delay profile as interleaved `(delay_ns, power)` pairs.
#[wasm_bindgen]
pub fn power_delay_profile(rms_delay_ns: f64) -> Vec<f64> {
    let (delays, powers) = channel::exponential_profile(rms_delay_ns * 1e-9);
    delays
        .iter()
        .zip(&powers)
        .flat_map(|(d, p)| [d * 1e9, *p])
        .collect()
}

/// Envelope in dB of one unit-power Jakes fading tap, sampled `points`
/// times over `duration_s`.
#[wasm_bindgen]
pub fn fading_trace(doppler_hz: f64, duration_s: f64, points: usize, seed_value: u32) -> Vec<f32> {
    let mut rng = seed::rng(seed_value as u64);
    let process = JakesProcess::new(doppler_hz, channel::SCATTERERS_PER_TAP, 1.0, &mut rng);
    (0..points)
        .map(|i| {
            let t = duration_s * i as f64 / points.max(1) as f64;
            (10.0 * process.gain_at(t).norm_sqr().max(1e-12).log10()) as f32
        })
        .collect()
}
