use std::fs;

use rffi::datasets::{
    generate_corpus, generate_in_memory, ingest_raw_iq, load_store, load_unlabeled, read_manifest,
    regenerate_blob, synthesize_store, ChannelTag, Condition, CorpusSpec, BLOB_FILE,
};
use rffi::impairments::{sample_device_profiles, sample_receiver_profiles, DeviceProfile, ReceiverProfile};
use rffi::lora_phy::{synthesize_packet, ChirpParams};
use rffi::verification::measured_snr_db;
use rffi::Error;

fn small_spec(condition: Condition, labeled: bool) -> CorpusSpec {
    CorpusSpec {
        chirp: ChirpParams {
            preamble_count: 2,
            ..ChirpParams::default()
        },
        devices: sample_device_profiles(3, 5, 1.0).unwrap(),
        receivers: sample_receiver_profiles(2, 6, 1.0).unwrap(),
        packets_per_pair: 2,
        condition,
        seed: 77,
        labeled,
    }
}

#[test]
fn clean_identity_chain_matches_ideal_chirp() {
    let chirp = ChirpParams::default();
    let spec = CorpusSpec {
        chirp,
        devices: vec![DeviceProfile::identity(0), DeviceProfile::identity(1)],
        receivers: vec![ReceiverProfile::identity(0)],
        packets_per_pair: 2,
        condition: Condition::clean(),
        seed: 3,
        labeled: true,
    };
    let store = synthesize_store(&spec).unwrap();
    let ideal = synthesize_packet(&chirp).unwrap();
    for p in store.packets() {
        let got = p.to_signal(chirp.sample_rate_hz).unwrap();
        let snr = measured_snr_db(ideal.samples(), got.samples());
        assert!((snr - 60.0).abs() < 0.5, "snr {snr}");
    }
}

#[test]
fn benchmark_sized_corpus_counts() {
    let spec = CorpusSpec {
        chirp: ChirpParams {
            preamble_count: 1,
            ..ChirpParams::default()
        },
        devices: sample_device_profiles(10, 1, 1.0).unwrap(),
        receivers: sample_receiver_profiles(2, 2, 1.0).unwrap(),
        packets_per_pair: 200,
        condition: Condition::clean(),
        seed: 1,
        labeled: true,
    };
    let (manifest, blob) = generate_in_memory(&spec).unwrap();
    assert_eq!(manifest.records.len(), 4000);
    assert_eq!(spec.record_count(), 4000);
    assert_eq!(blob.len() as u64, manifest.blob_len());
}

#[test]
fn regeneration_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(Condition::preset(ChannelTag::DynamicNlos, 15.0).unwrap(), true);
    let path = generate_corpus(&spec, dir.path()).unwrap();
    let manifest = read_manifest(&path).unwrap();
    let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
    assert_eq!(regenerate_blob(&manifest).unwrap(), blob);

    let loaded = load_store(&path).unwrap();
    let memory = synthesize_store(&spec).unwrap();
    assert_eq!(loaded, memory);
    assert_eq!(loaded.len(), 12);
    assert!(loaded.packets().iter().all(|p| p.channel_tag == ChannelTag::DynamicNlos));
}

#[test]
fn static_condition_reuses_channel_per_link() {
    let spec = small_spec(Condition::preset(ChannelTag::StaticLos, 300.0).unwrap(), true);
    let store = synthesize_store(&spec).unwrap();
    // same device and receiver, noise negligible: packets nearly identical
    let a = store.get(0).0;
    let b = store.get(1).0;
    let diff: f32 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).norm_sqr()).sum();
    let power: f32 = a.samples.iter().map(|x| x.norm_sqr()).sum();
    assert!(diff / power < 1e-10);
}

#[test]
fn truncated_blob_reports_first_bad_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate_corpus(&small_spec(Condition::clean(), true), dir.path()).unwrap();
    let blob_path = dir.path().join(BLOB_FILE);
    let blob = fs::read(&blob_path).unwrap();
    let per = blob.len() / 12;
    fs::write(&blob_path, &blob[..per * 7 + 10]).unwrap();
    match load_store(&path) {
        Err(Error::Corruption { index, .. }) => assert_eq!(index, 7),
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn single_bit_flip_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate_corpus(&small_spec(Condition::clean(), true), dir.path()).unwrap();
    let blob_path = dir.path().join(BLOB_FILE);
    let mut blob = fs::read(&blob_path).unwrap();
    let per = blob.len() / 12;
    blob[per * 4 + 123] ^= 0x10;
    fs::write(&blob_path, &blob).unwrap();
    match load_store(&path) {
        Err(Error::Corruption { index, reason }) => {
            assert_eq!(index, 4);
            assert!(reason.contains("checksum"));
        }
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn unlabeled_corpora_hide_labels() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = generate_corpus(&small_spec(Condition::clean(), true), dir.path().join("l").as_path()).unwrap();
    let unlabeled = generate_corpus(&small_spec(Condition::clean(), false), dir.path().join("u").as_path()).unwrap();
    assert_eq!(load_unlabeled(&labeled).unwrap().len(), 12);
    assert!(matches!(load_store(&unlabeled), Err(Error::Config(_))));
    let m = read_manifest(&unlabeled).unwrap();
    assert!(m.records.iter().all(|r| r.device_label.is_none()));
}

#[test]
fn ingest_round_trip_and_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate_corpus(&small_spec(Condition::clean(), true), dir.path().join("g").as_path()).unwrap();
    let blob_path = dir.path().join("g").join(BLOB_FILE);
    let manifest = read_manifest(&path).unwrap();
    let labels: Vec<u32> = manifest.records.iter().map(|r| r.device_label.unwrap()).collect();
    let ingested = ingest_raw_iq(&blob_path, 1e6, manifest.packet_len, Some(&labels), dir.path().join("i").as_path()).unwrap();
    let a = load_store(&path).unwrap();
    let b = load_store(&ingested).unwrap();
    assert_eq!(a.labels(), b.labels());
    for (x, y) in a.packets().iter().zip(b.packets()) {
        assert_eq!(x.samples, y.samples);
        assert_eq!(y.channel_tag, ChannelTag::Unknown);
    }

    let raw = dir.path().join("raw.iq");
    fs::write(&raw, vec![0u8; 10 * 8192 * 8]).unwrap();
    let m = read_manifest(&ingest_raw_iq(&raw, 1e6, 8192, None, dir.path().join("r").as_path()).unwrap()).unwrap();
    assert_eq!(m.records.len(), 10);
    assert!(m.records.iter().all(|r| r.length == 65_536));

    fs::write(&raw, vec![0u8; 8192 * 8 + 4]).unwrap();
    let err = ingest_raw_iq(&raw, 1e6, 8192, None, dir.path().join("x").as_path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}
