//! Packet corpora: synthetic generation, on-disk format, loading and raw IQ
//! ingestion.
//!
//! A corpus is a JSON manifest plus one binary blob of interleaved
//! little-endian `f32` I/Q samples. Each record names its byte range in the
//! blob and a CRC-32 of those bytes. Synthetic manifests store every profile
//! and seed needed to regenerate the blob bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AugmentationRanges, ChannelRealization};
use crate::error::{Error, Result};
use crate::impairments::{self, DeviceProfile, ReceiverProfile};
use crate::lora_phy::{synthesize_packet, ChirpParams, ComplexSignal};
use crate::seed;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "packets.iq";
/// Bytes per complex sample in the blob.
pub const SAMPLE_BYTES: usize = 8;

const STREAM_CHANNEL: u64 = 0xC4;
const STREAM_NOISE: u64 = 0xA0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelTag {
    Clean,
    StaticLos,
    StaticNlos,
    DynamicLos,
    DynamicNlos,
    Unknown,
}

impl ChannelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelTag::Clean => "clean",
            ChannelTag::StaticLos => "static_los",
            ChannelTag::StaticNlos => "static_nlos",
            ChannelTag::DynamicLos => "dynamic_los",
            ChannelTag::DynamicNlos => "dynamic_nlos",
            ChannelTag::Unknown => "unknown",
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, ChannelTag::StaticLos | ChannelTag::StaticNlos)
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, ChannelTag::DynamicLos | ChannelTag::DynamicNlos)
    }
}

/// Propagation condition used when generating a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub tag: ChannelTag,
    pub ranges: AugmentationRanges,
}

impl Condition {
    /// Identity channel, 60 dB SNR.
    pub fn clean() -> Self {
        Condition {
            tag: ChannelTag::Clean,
            ranges: AugmentationRanges::fixed(0.0, 0.0, 60.0),
        }
    }

    /// Default ranges for a tag: LOS spreads in [5, 100] ns, NLOS in
    /// [100, 300] ns, Doppler in [1, 5] Hz for dynamic conditions, and the
    /// given SNR.
    pub fn preset(tag: ChannelTag, snr_db: f64) -> Result<Self> {
        let spread = match tag {
            ChannelTag::StaticLos | ChannelTag::DynamicLos => [5.0, 100.0],
            ChannelTag::StaticNlos | ChannelTag::DynamicNlos => [100.0, 300.0],
            ChannelTag::Clean => return Ok(Condition::clean()),
            ChannelTag::Unknown => {
                return Err(Error::config("the unknown tag is reserved for ingested captures"))
            }
        };
        let doppler = if tag.is_dynamic() { [1.0, 5.0] } else { [0.0, 0.0] };
        Ok(Condition {
            tag,
            ranges: AugmentationRanges {
                rms_delay_spread_ns: spread,
                doppler_hz: doppler,
                snr_db: [snr_db; 2],
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        match self.tag {
            ChannelTag::Unknown => Err(Error::config("cannot generate the unknown condition")),
            t if t.is_static() && self.ranges.doppler_hz != [0.0, 0.0] => {
                Err(Error::config("static conditions require zero Doppler"))
            }
            t if t.is_dynamic() && !(self.ranges.doppler_hz[0] > 0.0) => {
                Err(Error::config("dynamic conditions require Doppler > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Everything needed to synthesize a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub chirp: ChirpParams,
    pub devices: Vec<DeviceProfile>,
    pub receivers: Vec<ReceiverProfile>,
    pub packets_per_pair: usize,
    pub condition: Condition,
    pub seed: u64,
    /// Whether records carry device labels.
    pub labeled: bool,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        self.chirp.validate()?;
        if self.devices.is_empty() || self.receivers.is_empty() {
            return Err(Error::config("corpus needs at least one device and one receiver"));
        }
        if self.packets_per_pair == 0 {
            return Err(Error::config("packets_per_pair must be at least 1"));
        }
        for d in &self.devices {
            d.validate(self.chirp.bandwidth_hz)?;
        }
        for r in &self.receivers {
            r.validate()?;
        }
        self.condition.validate()
    }

    pub fn record_count(&self) -> usize {
        self.devices.len() * self.receivers.len() * self.packets_per_pair
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketRecord {
    pub device_label: Option<u32>,
    pub receiver_id: u32,
    pub channel_tag: ChannelTag,
    /// Absent for ingested captures.
    pub snr_db_nominal: Option<f64>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length in the blob.
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub packet_len: usize,
    pub num_classes: usize,
    pub labeled: bool,
    /// Present for synthetic corpora.
    pub generation: Option<CorpusSpec>,
    pub blob_file: String,
    pub records: Vec<PacketRecord>,
}

impl DatasetManifest {
    pub fn blob_len(&self) -> u64 {
        self.records.iter().map(|r| r.length).sum()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", self.version),
            ));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.device_label.is_some() != self.labeled {
                return Err(Error::format(
                    path,
                    format!("record {i}: label presence disagrees with the store type"),
                ));
            }
            if r.length as usize != self.packet_len * SAMPLE_BYTES {
                return Err(Error::format(path, format!("record {i}: wrong byte length")));
            }
            if let Some(l) = r.device_label {
                if l as usize >= self.num_classes {
                    return Err(Error::format(path, format!("record {i}: label {l} out of range")));
                }
            }
        }
        if let Some(g) = &self.generation {
            if g.record_count() != self.records.len() {
                return Err(Error::format(path, "record count disagrees with generation totals"));
            }
        }
        Ok(())
    }
}

/// One stored packet. Labels are held by the store, not the packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub samples: Vec<Complex32>,
    pub receiver_id: u32,
    pub channel_tag: ChannelTag,
}

impl Packet {
    pub fn to_signal(&self, sample_rate_hz: f64) -> Result<ComplexSignal> {
        ComplexSignal::new(
            self.samples
                .iter()
                .map(|c| Complex64::new(c.re as f64, c.im as f64))
                .collect(),
            sample_rate_hz,
        )
    }
}

/// Packets with device labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStore {
    pub sample_rate_hz: f64,
    pub num_classes: usize,
    packets: Vec<Packet>,
    labels: Vec<usize>,
}

/// Packets without any label access.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledStore {
    pub sample_rate_hz: f64,
    packets: Vec<Packet>,
}

impl LabeledStore {
    pub fn new(sample_rate_hz: f64, num_classes: usize, packets: Vec<Packet>, labels: Vec<usize>) -> Result<Self> {
        if packets.len() != labels.len() {
            return Err(Error::input("packets and labels differ in length"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::input(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(LabeledStore {
            sample_rate_hz,
            num_classes,
            packets,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn get(&self, i: usize) -> (&Packet, usize) {
        (&self.packets[i], self.labels[i])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    /// Indices of packets per label.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledStore {
        LabeledStore {
            sample_rate_hz: self.sample_rate_hz,
            num_classes: self.num_classes,
            packets: indices.iter().map(|&i| self.packets[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` packets of every label (in store order).
    pub fn take_per_label(&self, n: usize) -> Result<LabeledStore> {
        let mut keep = Vec::new();
        for (label, idx) in self.indices_by_label().iter().enumerate() {
            if idx.len() < n {
                return Err(Error::config(format!(
                    "label {label} has {} packets, {n} requested",
                    idx.len()
                )));
            }
            keep.extend_from_slice(&idx[..n]);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }

    /// Packets of one receiver.
    pub fn for_receiver(&self, receiver_id: u32) -> LabeledStore {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.packets[i].receiver_id == receiver_id)
            .collect();
        self.subset(&idx)
    }

    /// Drops the labels.
    pub fn into_unlabeled(self) -> UnlabeledStore {
        UnlabeledStore {
            sample_rate_hz: self.sample_rate_hz,
            packets: self.packets,
        }
    }
}

impl UnlabeledStore {
    pub fn new(sample_rate_hz: f64, packets: Vec<Packet>) -> Self {
        UnlabeledStore {
            sample_rate_hz,
            packets,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn get(&self, i: usize) -> &Packet {
        &self.packets[i]
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }
}

fn encode(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * SAMPLE_BYTES);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<Complex32> {
    bytes
        .chunks_exact(SAMPLE_BYTES)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect()
}

fn record_channel(spec: &CorpusSpec, d: usize, r: usize, m: usize, len: usize) -> Result<ChannelRealization> {
    let tag = spec.condition.tag;
    if tag == ChannelTag::Clean {
        return Ok(ChannelRealization::identity());
    }
    let seed = if tag.is_static() {
        seed::derive(spec.seed, &[STREAM_CHANNEL, d as u64, r as u64])
    } else {
        seed::derive(spec.seed, &[STREAM_CHANNEL, d as u64, r as u64, m as u64])
    };
    channel::sample_channel(&spec.condition.ranges, seed, len, spec.chirp.sample_rate_hz)
}

/// The received packet for (device, receiver, index) under `spec`.
pub fn synthesize_record(spec: &CorpusSpec, d: usize, r: usize, m: usize) -> Result<ComplexSignal> {
    let ideal = synthesize_packet(&spec.chirp)?;
    let tx = impairments::apply_tx_impairments(&ideal, &spec.devices[d]);
    let ch = record_channel(spec, d, r, m, tx.len())?;
    let snr = if spec.condition.tag == ChannelTag::Clean {
        spec.condition.ranges.snr_db[0]
    } else {
        ch.snr_db
    };
    let faded = channel::apply_channel(&tx, &ch);
    let rx = impairments::apply_rx_impairments(&faded, &spec.receivers[r])?;
    channel::add_awgn(
        &rx,
        snr,
        seed::derive(spec.seed, &[STREAM_NOISE, d as u64, r as u64, m as u64]),
    )
}

fn record_snr(spec: &CorpusSpec, d: usize, r: usize, m: usize, len: usize) -> Result<f64> {
    if spec.condition.tag == ChannelTag::Clean {
        return Ok(spec.condition.ranges.snr_db[0]);
    }
    Ok(record_channel(spec, d, r, m, len)?.snr_db)
}

/// Synthesizes the manifest and blob in memory. Records are ordered by
/// device, then receiver, then packet index.
pub fn generate_in_memory(spec: &CorpusSpec) -> Result<(DatasetManifest, Vec<u8>)> {
    spec.validate()?;
    let (nd, nr, m) = (spec.devices.len(), spec.receivers.len(), spec.packets_per_pair);
    let packet_len = spec.chirp.packet_len();
    let jobs: Vec<(usize, usize, usize)> = (0..nd)
        .flat_map(|d| (0..nr).flat_map(move |r| (0..m).map(move |k| (d, r, k))))
        .collect();
    let encoded: Vec<(Vec<u8>, f64)> = jobs
        .par_iter()
        .map(|&(d, r, k)| {
            let sig = synthesize_record(spec, d, r, k)?;
            let snr = record_snr(spec, d, r, k, packet_len)?;
            Ok((encode(sig.samples()), snr))
        })
        .collect::<Result<_>>()?;
    let mut blob = Vec::with_capacity(jobs.len() * packet_len * SAMPLE_BYTES);
    let mut records = Vec::with_capacity(jobs.len());
    for (&(d, r, _), (bytes, snr)) in jobs.iter().zip(encoded) {
        records.push(PacketRecord {
            device_label: spec.labeled.then_some(d as u32),
            receiver_id: spec.receivers[r].receiver_id,
            channel_tag: spec.condition.tag,
            snr_db_nominal: Some(snr),
            offset: blob.len() as u64,
            length: bytes.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
        blob.extend_from_slice(&bytes);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate_hz: spec.chirp.sample_rate_hz,
        packet_len,
        num_classes: nd,
        labeled: spec.labeled,
        generation: Some(spec.clone()),
        blob_file: BLOB_FILE.to_string(),
        records,
    };
    Ok((manifest, blob))
}

fn write_corpus(dir: &Path, manifest: &DatasetManifest, blob: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_path = dir.join(&manifest.blob_file);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Synthesizes a corpus into `dir`; returns the manifest path.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<PathBuf> {
    let (manifest, blob) = generate_in_memory(spec)?;
    write_corpus(dir, &manifest, &blob)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    manifest.validate(path)?;
    Ok(manifest)
}

/// Blob bytes regenerated from the manifest's stored generation spec.
pub fn regenerate_blob(manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let spec = manifest
        .generation
        .as_ref()
        .ok_or_else(|| Error::config("manifest has no generation spec (ingested corpus)"))?;
    Ok(generate_in_memory(spec)?.1)
}

fn load_packets(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Packet>)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let blob_path = dir.join(&manifest.blob_file);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut packets = Vec::with_capacity(manifest.records.len());
    for (i, r) in manifest.records.iter().enumerate() {
        let end = r.offset.checked_add(r.length).filter(|&e| e <= blob.len() as u64);
        let Some(end) = end else {
            return Err(Error::Corruption {
                index: i,
                reason: format!(
                    "bytes {}..{} lie beyond the {}-byte blob",
                    r.offset,
                    r.offset + r.length,
                    blob.len()
                ),
            });
        };
        let bytes = &blob[r.offset as usize..end as usize];
        let crc = crc32fast::hash(bytes);
        if crc != r.crc32 {
            return Err(Error::Corruption {
                index: i,
                reason: format!("checksum {crc:08x} does not match {:08x}", r.crc32),
            });
        }
        packets.push(Packet {
            samples: decode(bytes),
            receiver_id: r.receiver_id,
            channel_tag: r.channel_tag,
        });
    }
    Ok((manifest, packets))
}

/// Loads a labeled corpus. Fails on unlabeled manifests.
pub fn load_store(manifest_path: &Path) -> Result<LabeledStore> {
    let (manifest, packets) = load_packets(manifest_path)?;
    if !manifest.labeled {
        return Err(Error::config(format!(
            "{} is an unlabeled corpus",
            manifest_path.display()
        )));
    }
    let labels = manifest
        .records
        .iter()
        .map(|r| r.device_label.expect("validated") as usize)
        .collect();
    LabeledStore::new(manifest.sample_rate_hz, manifest.num_classes, packets, labels)
}

/// Loads any corpus without exposing labels.
pub fn load_unlabeled(manifest_path: &Path) -> Result<UnlabeledStore> {
    let (manifest, packets) = load_packets(manifest_path)?;
    Ok(UnlabeledStore::new(manifest.sample_rate_hz, packets))
}

/// Converts a raw capture of interleaved little-endian `f32` I/Q into a
/// corpus in `dir` with one record per `packet_len` samples. `labels`, when
/// given, holds one device label per packet.
pub fn ingest_raw_iq(
    path: &Path,
    sample_rate_hz: f64,
    packet_len: usize,
    labels: Option<&[u32]>,
    dir: &Path,
) -> Result<PathBuf> {
    if packet_len == 0 || !(sample_rate_hz > 0.0) {
        return Err(Error::config("packet_len and sample rate must be positive"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let packet_bytes = packet_len * SAMPLE_BYTES;
    if bytes.len() % packet_bytes != 0 {
        let expected = (bytes.len() / packet_bytes + 1) * packet_bytes;
        return Err(Error::format(
            path,
            format!(
                "{} bytes is not a whole number of {packet_bytes}-byte packets (next valid size {expected})",
                bytes.len()
            ),
        ));
    }
    let count = bytes.len() / packet_bytes;
    if let Some(l) = labels {
        if l.len() != count {
            return Err(Error::config(format!(
                "{} labels given for {count} packets",
                l.len()
            )));
        }
    }
    let records = (0..count)
        .map(|i| {
            let slice = &bytes[i * packet_bytes..(i + 1) * packet_bytes];
            PacketRecord {
                device_label: labels.map(|l| l[i]),
                receiver_id: 0,
                channel_tag: ChannelTag::Unknown,
                snr_db_nominal: None,
                offset: (i * packet_bytes) as u64,
                length: packet_bytes as u64,
                crc32: crc32fast::hash(slice),
            }
        })
        .collect();
    let num_classes = labels
        .map(|l| l.iter().max().map_or(0, |&m| m as usize + 1))
        .unwrap_or(0);
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate_hz,
        packet_len,
        num_classes,
        labeled: labels.is_some(),
        generation: None,
        blob_file: BLOB_FILE.to_string(),
        records,
    };
    write_corpus(dir, &manifest, &bytes)
}

/// In-memory labeled store straight from a spec, bypassing disk.
pub fn synthesize_store(spec: &CorpusSpec) -> Result<LabeledStore> {
    let (manifest, blob) = generate_in_memory(spec)?;
    let packets = manifest
        .records
        .iter()
        .map(|r| Packet {
            samples: decode(&blob[r.offset as usize..(r.offset + r.length) as usize]),
            receiver_id: r.receiver_id,
            channel_tag: r.channel_tag,
        })
        .collect();
    let labels = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| r.device_label.map_or(i / (spec.receivers.len() * spec.packets_per_pair), |l| l as usize))
        .collect();
    LabeledStore::new(manifest.sample_rate_hz, manifest.num_classes, packets, labels)
}
