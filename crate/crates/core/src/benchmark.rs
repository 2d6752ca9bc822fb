//! The synthetic benchmark: a device population seen by two training
//! receivers over clean links, tested through an unseen receiver over
//! dynamic NLOS channels.

use serde::{Deserialize, Serialize};

use crate::datasets::{synthesize_store, ChannelTag, Condition, CorpusSpec, LabeledStore, UnlabeledStore};
use crate::error::Result;
use crate::impairments::{sample_device_profiles, sample_receiver_profiles, DeviceProfile, ReceiverProfile};
use crate::lora_phy::ChirpParams;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub num_devices: usize,
    pub spread: f64,
    pub train_packets_per_pair: usize,
    pub test_packets_per_device: usize,
    pub test_snr_db: f64,
    pub test_tag: ChannelTag,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            num_devices: 10,
            spread: 1.0,
            train_packets_per_pair: 200,
            test_packets_per_device: 100,
            test_snr_db: 20.0,
            test_tag: ChannelTag::DynamicNlos,
            seed: 2024,
        }
    }
}

pub struct Benchmark {
    pub devices: Vec<DeviceProfile>,
    /// Two training receivers followed by the held-out test receiver.
    pub receivers: Vec<ReceiverProfile>,
    pub train_rx1: LabeledStore,
    pub train_rx2: LabeledStore,
    pub test: LabeledStore,
}

impl BenchmarkConfig {
    pub fn devices(&self) -> Result<Vec<DeviceProfile>> {
        sample_device_profiles(self.num_devices, seed::derive(self.seed, &[0xDE]), self.spread)
    }

    pub fn receivers(&self) -> Result<Vec<ReceiverProfile>> {
        sample_receiver_profiles(3, seed::derive(self.seed, &[0xEC]), self.spread)
    }

    pub fn train_spec(&self, receiver: usize) -> Result<CorpusSpec> {
        Ok(CorpusSpec {
            chirp: ChirpParams::default(),
            devices: self.devices()?,
            receivers: vec![self.receivers()?[receiver].clone()],
            packets_per_pair: self.train_packets_per_pair,
            condition: Condition::clean(),
            seed: seed::derive(self.seed, &[0x7E, receiver as u64]),
            labeled: true,
        })
    }

    pub fn test_spec(&self) -> Result<CorpusSpec> {
        Ok(CorpusSpec {
            chirp: ChirpParams::default(),
            devices: self.devices()?,
            receivers: vec![self.receivers()?[2].clone()],
            packets_per_pair: self.test_packets_per_device,
            condition: Condition::preset(self.test_tag, self.test_snr_db)?,
            seed: seed::derive(self.seed, &[0x7E, 2]),
            labeled: true,
        })
    }

    pub fn build(&self) -> Result<Benchmark> {
        Ok(Benchmark {
            devices: self.devices()?,
            receivers: self.receivers()?,
            train_rx1: synthesize_store(&self.train_spec(0)?)?,
            train_rx2: synthesize_store(&self.train_spec(1)?)?,
            test: synthesize_store(&self.test_spec()?)?,
        })
    }

    /// A disjoint population of `count` devices heard clean by the two
    /// training receivers, labels removed.
    pub fn pretrain_spec(&self, count: usize, packets_per_pair: usize) -> Result<CorpusSpec> {
        let receivers = self.receivers()?;
        Ok(CorpusSpec {
            chirp: ChirpParams::default(),
            devices: sample_device_profiles(count, seed::derive(self.seed, &[0x9E]), self.spread)?,
            receivers: receivers[..2].to_vec(),
            packets_per_pair,
            condition: Condition::clean(),
            seed: seed::derive(self.seed, &[0x9F]),
            labeled: false,
        })
    }

    pub fn pretrain_store(&self, count: usize, packets_per_pair: usize) -> Result<UnlabeledStore> {
        Ok(synthesize_store(&self.pretrain_spec(count, packets_per_pair)?)?.into_unlabeled())
    }
}
