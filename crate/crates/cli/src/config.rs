//! TOML run configurations. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rffi::benchmark::BenchmarkConfig;
use rffi::channel::AugmentationRanges;
use rffi::datasets::ChannelTag;
use rffi::lora_phy::ChirpParams;
use rffi::pipelines::{FinetuneConfig, PretrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub num_devices: usize,
    pub device_seed: u64,
    /// Device population spread in (0, 1].
    pub spread: f64,
    /// Receivers to include, as indices into a population drawn with
    /// `receiver_seed`.
    pub receivers: Vec<usize>,
    pub receiver_seed: u64,
    pub packets_per_pair: usize,
    pub labeled: bool,
    pub condition: ChannelTag,
    /// Used by non-clean conditions.
    pub snr_db: f64,
    /// Replaces the preset ranges of the condition when given.
    pub ranges: Option<AugmentationRanges>,
    pub chirp: ChirpParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            out: None,
            seed: 0,
            num_devices: 10,
            device_seed: 0,
            spread: 1.0,
            receivers: vec![0],
            receiver_seed: 0,
            packets_per_pair: 200,
            labeled: true,
            condition: ChannelTag::Clean,
            snr_db: 20.0,
            ranges: None,
            chirp: ChirpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainRun {
    /// Manifest of the (possibly labeled) corpus; labels are never read.
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRun {
    pub rx1: PathBuf,
    pub rx2: PathBuf,
    pub out: Option<PathBuf>,
    /// Extractor checkpoint; `--init` takes precedence.
    pub init: Option<PathBuf>,
    #[serde(default)]
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub data: PathBuf,
    /// Full model checkpoint; `--init` takes precedence.
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepRun {
    pub out: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub packets_per_device: Vec<usize>,
    pub repetitions: usize,
    /// Size of the disjoint pretraining population.
    pub pretrain_devices: usize,
    pub pretrain_packets_per_pair: usize,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for SweepRun {
    fn default() -> Self {
        SweepRun {
            out: None,
            benchmark: BenchmarkConfig::default(),
            packets_per_device: vec![20, 50, 100, 200],
            repetitions: 4,
            pretrain_devices: 8,
            pretrain_packets_per_pair: 100,
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

const LITERATURE: &str = "literature value";
const ARTIFACT: &str = "artifact default";

/// `(key, value, provenance)` rows describing the defaults of a command.
pub fn defaults(command: &str) -> Vec<(String, String, &'static str)> {
    let mut rows: Vec<(String, String, &'static str)> = Vec::new();
    let mut push = |k: &str, v: String, p: &'static str| rows.push((k.to_string(), v, p));
    let chirp = ChirpParams::default();
    let ranges = AugmentationRanges::default();
    let chirp_rows = |push: &mut dyn FnMut(&str, String, &'static str)| {
        push("chirp.bandwidth_hz", chirp.bandwidth_hz.to_string(), LITERATURE);
        push("chirp.sample_rate_hz", chirp.sample_rate_hz.to_string(), LITERATURE);
        push("chirp.preamble_count", chirp.preamble_count.to_string(), LITERATURE);
        push("chirp.symbol_duration_s", chirp.symbol_duration_s.to_string(), ARTIFACT);
        push("chirp.amplitude", chirp.amplitude.to_string(), ARTIFACT);
    };
    let range_rows = |prefix: &str, push: &mut dyn FnMut(&str, String, &'static str)| {
        push(&format!("{prefix}ranges.rms_delay_spread_ns"), format!("{:?}", ranges.rms_delay_spread_ns), LITERATURE);
        push(&format!("{prefix}ranges.doppler_hz"), format!("{:?}", ranges.doppler_hz), LITERATURE);
        push(&format!("{prefix}ranges.snr_db"), format!("{:?}", ranges.snr_db), LITERATURE);
    };
    let shared = |prefix: &str, temperature: f64, batch: usize, push: &mut dyn FnMut(&str, String, &'static str)| {
        let p = rffi::nn::PlateauConfig::default();
        push(&format!("{prefix}batch_pairs"), batch.to_string(), LITERATURE);
        push(&format!("{prefix}temperature"), temperature.to_string(), LITERATURE);
        push(&format!("{prefix}plateau.patience"), p.patience.to_string(), LITERATURE);
        push(&format!("{prefix}plateau.factor"), p.factor.to_string(), LITERATURE);
        push(&format!("{prefix}plateau.stop_patience"), p.stop_patience.to_string(), LITERATURE);
        push(&format!("{prefix}width_scale"), "1.0".into(), ARTIFACT);
        push(&format!("{prefix}representation"), "128-sample Hann STFT, hop 64, +-94 kHz, global min-max".into(), ARTIFACT);
    };
    match command {
        "gen" => {
            let g = GenConfig::default();
            push("num_devices", g.num_devices.to_string(), ARTIFACT);
            push("packets_per_pair", g.packets_per_pair.to_string(), ARTIFACT);
            push("spread", g.spread.to_string(), ARTIFACT);
            push("condition", "clean".into(), LITERATURE);
            push("clean snr_db", "60".into(), ARTIFACT);
            chirp_rows(&mut push);
        }
        "pretrain" | "finetune" | "sweep" => {
            if command != "finetune" {
                let p = PretrainConfig::default();
                push("pretrain.lr", p.lr.to_string(), LITERATURE);
                shared("pretrain.", p.temperature, p.batch_pairs, &mut push);
                range_rows("pretrain.", &mut push);
            }
            if command != "pretrain" {
                let f = FinetuneConfig::default();
                push("finetune.lr", f.lr.to_string(), LITERATURE);
                shared("finetune.", f.temperature, f.batch_pairs, &mut push);
                range_rows("finetune.", &mut push);
                push("finetune.freeze_extractor", f.freeze_extractor.to_string(), ARTIFACT);
                push("finetune.contrastive", f.contrastive.to_string(), LITERATURE);
            }
            if command == "sweep" {
                let s = SweepRun::default();
                push("packets_per_device", format!("{:?}", s.packets_per_device), LITERATURE);
                push("repetitions", s.repetitions.to_string(), LITERATURE);
                push("pretrain_devices", s.pretrain_devices.to_string(), ARTIFACT);
                push("benchmark.num_devices", s.benchmark.num_devices.to_string(), ARTIFACT);
                push("benchmark.test_snr_db", s.benchmark.test_snr_db.to_string(), ARTIFACT);
            }
        }
        _ => {}
    }
    rows
}
