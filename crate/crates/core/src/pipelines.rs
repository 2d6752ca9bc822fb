//! Training and evaluation stages: contrastive pretraining on unlabeled
//! packets, Siamese fine-tuning on cross-receiver pairs, single-branch
//! inference and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AugmentationRanges};
use crate::datasets::{ChannelTag, LabeledStore, Packet, UnlabeledStore};
use crate::error::{Error, Result};
use crate::lora_phy::ComplexSignal;
use crate::nn::layers::softmax_rows;
use crate::nn::{
    Adam, AdamConfig, ArchitectureSpec, Checkpoint, InputBatch, ModelParams, Network, PlateauAction,
    PlateauConfig, PlateauScheduler, Tensor,
};
use crate::objectives::{cross_entropy, nt_xent};
use crate::representation::RepresentationConfig;
use crate::seed;

const STREAM_SPLIT: u64 = 0x51;
const STREAM_INIT: u64 = 0x1A;
const STREAM_SHUFFLE: u64 = 0x5F;
const STREAM_AUG: u64 = 0xA6;
const STREAM_VAL: u64 = 0x7A;

/// Fraction of training packets held out (per device) for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch_pairs: usize,
    pub temperature: f64,
    pub ranges: AugmentationRanges,
    pub plateau: PlateauConfig,
    /// Hard cap on epochs in addition to early stopping.
    pub max_epochs: usize,
    pub width_scale: f64,
    pub representation: RepresentationConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 0.001,
            batch_pairs: 32,
            temperature: 0.05,
            ranges: AugmentationRanges::default(),
            plateau: PlateauConfig::default(),
            max_epochs: 1000,
            width_scale: 1.0,
            representation: RepresentationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_pairs: usize,
    pub temperature: f64,
    pub ranges: AugmentationRanges,
    /// Training packets kept per device and receiver; all when absent.
    pub packets_per_device: Option<usize>,
    pub freeze_extractor: bool,
    /// Adds the NT-Xent term over cross-receiver pairs; without it only
    /// cross-entropy is minimized.
    pub contrastive: bool,
    pub plateau: PlateauConfig,
    pub max_epochs: usize,
    /// Used when no initial checkpoint is given.
    pub width_scale: f64,
    pub representation: RepresentationConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 0.0003,
            batch_pairs: 32,
            temperature: 0.05,
            ranges: AugmentationRanges::default(),
            packets_per_device: None,
            freeze_extractor: false,
            contrastive: true,
            plateau: PlateauConfig::default(),
            max_epochs: 1000,
            width_scale: 1.0,
            representation: RepresentationConfig::default(),
            seed: 0,
        }
    }
}

fn check_common(lr: f64, batch_pairs: usize, temperature: f64, max_epochs: usize, ranges: &AugmentationRanges) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("lr must be positive, got {lr}")));
    }
    if batch_pairs == 0 {
        return Err(Error::config("batch_pairs must be at least 1"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if max_epochs == 0 {
        return Err(Error::config("max_epochs must be at least 1"));
    }
    ranges.validate()
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.batch_pairs, self.temperature, self.max_epochs, &self.ranges)?;
        self.representation.stft.validate()
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.batch_pairs, self.temperature, self.max_epochs, &self.ranges)?;
        if self.packets_per_device == Some(0) {
            return Err(Error::config("packets_per_device must be at least 1"));
        }
        self.representation.stft.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per view.
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in log {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    representation: RepresentationConfig,
    sample_rate_hz: f64,
}

fn metadata(rep: &RepresentationConfig, fs: f64) -> serde_json::Value {
    serde_json::to_value(Metadata {
        representation: *rep,
        sample_rate_hz: fs,
    })
    .expect("metadata serializes")
}

fn read_metadata(ck: &Checkpoint) -> Result<Metadata> {
    serde_json::from_value(ck.metadata.clone())
        .map_err(|e| Error::config(format!("checkpoint metadata: {e}")))
}

fn features(rep: &RepresentationConfig, signal: &ComplexSignal) -> Result<Vec<f32>> {
    Ok(rep.features(signal)?.values.iter().map(|&v| v as f32).collect())
}

fn input_dims(rep: &RepresentationConfig, packet_len: usize, fs: f64) -> Result<[usize; 2]> {
    let (h, w) = rep.output_dims(packet_len, fs);
    if h == 0 || w == 0 {
        return Err(Error::input(format!(
            "packets of {packet_len} samples yield an empty {h}x{w} representation"
        )));
    }
    Ok([h, w])
}

/// A packet with an augmentation seed, or `None` for no augmentation.
type View<'a> = (&'a Packet, Option<u64>);

fn build_batch(
    views: &[View<'_>],
    ranges: &AugmentationRanges,
    rep: &RepresentationConfig,
    fs: f64,
    dims: [usize; 2],
) -> Result<InputBatch<f32>> {
    let rows: Vec<Vec<f32>> = views
        .par_iter()
        .map(|(packet, aug)| {
            let sig = packet.to_signal(fs)?;
            let sig = match aug {
                Some(s) => channel::augment(&sig, ranges, *s)?,
                None => sig,
            };
            features(rep, &sig)
        })
        .collect::<Result<_>>()?;
    InputBatch::new(views.len(), dims[0], dims[1], rows.concat())
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Held-out indices per label (or overall when `labels` is `None`).
fn split_validation(n: usize, labels: Option<&[usize]>, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed::derive(seed, &[STREAM_SPLIT]));
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(labels.map_or(0, |l| l[i])).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        let k = if idx.len() >= 2 {
            ((idx.len() as f64 * VALIDATION_FRACTION).round() as usize).max(1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct Trainer {
    net: Network<f32>,
    adam: Adam,
    sched: PlateauScheduler,
    best: Option<(f64, ModelParams<f32>, usize)>,
    log: Vec<EpochLog>,
}

impl Trainer {
    fn new(params: ModelParams<f32>, lr: f64, plateau: PlateauConfig) -> Result<Self> {
        Ok(Trainer {
            net: Network::new(params)?,
            adam: Adam::new(AdamConfig::default()),
            sched: PlateauScheduler::new(lr, plateau),
            best: None,
            log: Vec::new(),
        })
    }

    fn step(&mut self, grads: crate::nn::Gradients<f32>, freeze_extractor: bool) {
        let lr = self.sched.lr();
        let params = &mut self.net.params;
        if freeze_extractor {
            self.adam.step(params.classifier.iter_mut(), grads.classifier.iter(), lr);
        } else {
            self.adam.step(
                params.extractor.iter_mut().chain(params.classifier.iter_mut()),
                grads.extractor.iter().chain(grads.classifier.iter()),
                lr,
            );
        }
    }

    /// Records an epoch; returns `true` when training should stop.
    fn end_epoch(&mut self, epoch: usize, train_loss: f64, val_loss: f64) -> bool {
        let lr = self.sched.lr();
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        self.log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let improved = self.best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            self.best = Some((val_loss, self.net.params.clone(), epoch));
        }
        self.sched.observe(val_loss) == PlateauAction::Stop
    }

    fn finish(self, meta: serde_json::Value) -> TrainOutcome {
        let (_, params, best_epoch) = self.best.expect("at least one epoch");
        TrainOutcome {
            checkpoint: Checkpoint::new(params, meta),
            log: self.log,
            best_epoch,
        }
    }
}

/// Contrastive pretraining of the feature extractor. Every packet yields two
/// independently augmented views per epoch; only NT-Xent is minimized.
/// Returns an extractor-only checkpoint.
pub fn pretrain(dataset: &UnlabeledStore, cfg: &PretrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("pretraining dataset is empty"));
    }
    let fs = dataset.sample_rate_hz;
    let packet_len = dataset.get(0).samples.len();
    let dims = input_dims(&cfg.representation, packet_len, fs)?;
    let arch = ArchitectureSpec::resnet9(1, dims).with_width_scale(cfg.width_scale);
    let params = ModelParams::init(&arch, seed::derive(cfg.seed, &[STREAM_INIT]))?;
    let mut t = Trainer::new(params, cfg.lr, cfg.plateau)?;
    let (mut train, val) = split_validation(dataset.len(), None, cfg.seed);
    let d2 = arch.embedding_dim();

    let contrastive_loss = |net: &mut Network<f32>, batch: &InputBatch<f32>, backward: bool| -> Result<(f64, Option<crate::nn::Gradients<f32>>)> {
        let z = net.forward_extract(batch)?;
        let l = nt_xent(&to_f64(&z), d2, cfg.temperature)?;
        let g = if backward {
            Some(net.backward(Some(&l.grad), None)?)
        } else {
            net.clear_cache();
            None
        };
        Ok((l.loss, g))
    };

    for epoch in 0..cfg.max_epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        train.shuffle(&mut rng);
        let (mut total, mut views) = (0.0, 0usize);
        for chunk in train.chunks(cfg.batch_pairs) {
            let vs: Vec<View<'_>> = chunk
                .iter()
                .flat_map(|&i| {
                    let p = dataset.get(i);
                    (0..2u64).map(move |v| {
                        (p, Some(seed::derive(cfg.seed, &[STREAM_AUG, epoch as u64, i as u64, v])))
                    })
                })
                .collect();
            let batch = build_batch(&vs, &cfg.ranges, &cfg.representation, fs, dims)?;
            let (loss, g) = contrastive_loss(&mut t.net, &batch, true)?;
            t.step(g.expect("backward requested"), false);
            total += loss;
            views += vs.len();
        }
        let val_loss = if val.is_empty() {
            total / views as f64
        } else {
            let (mut vt, mut vn) = (0.0, 0usize);
            for chunk in val.chunks(cfg.batch_pairs) {
                let vs: Vec<View<'_>> = chunk
                    .iter()
                    .flat_map(|&i| {
                        let p = dataset.get(i);
                        (0..2u64).map(move |v| (p, Some(seed::derive(cfg.seed, &[STREAM_VAL, i as u64, v]))))
                    })
                    .collect();
                let batch = build_batch(&vs, &cfg.ranges, &cfg.representation, fs, dims)?;
                vt += contrastive_loss(&mut t.net, &batch, false)?.0;
                vn += vs.len();
            }
            vt / vn as f64
        };
        if t.end_epoch(epoch, total / views as f64, val_loss) {
            break;
        }
    }
    let mut out = t.finish(metadata(&cfg.representation, fs));
    out.checkpoint = out.checkpoint.extractor_only();
    Ok(out)
}

fn check_label_spaces(a: &LabeledStore, b: &LabeledStore) -> Result<()> {
    if a.num_classes != b.num_classes {
        return Err(Error::config(format!(
            "receiver stores disagree on the label space: {} vs {} classes",
            a.num_classes, b.num_classes
        )));
    }
    let present = |s: &LabeledStore| {
        let mut seen = vec![false; s.num_classes];
        for &l in s.labels() {
            seen[l] = true;
        }
        seen
    };
    if present(a) != present(b) {
        return Err(Error::config("receiver stores cover different device labels"));
    }
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(Error::config("receiver stores use different sample rates"));
    }
    Ok(())
}

/// Siamese fine-tuning on cross-receiver pairs of the same device. Each
/// pair element is augmented once; both contribute cross-entropy terms and,
/// when enabled, form the positive pair of the contrastive loss.
pub fn finetune_siamese(
    rx1: &LabeledStore,
    rx2: &LabeledStore,
    init: Option<&Checkpoint>,
    cfg: &FinetuneConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_label_spaces(rx1, rx2)?;
    if rx1.is_empty() {
        return Err(Error::input("fine-tuning stores are empty"));
    }
    let (rx1, rx2) = match cfg.packets_per_device {
        Some(n) => (rx1.take_per_label(n)?, rx2.take_per_label(n)?),
        None => (rx1.clone(), rx2.clone()),
    };
    let fs = rx1.sample_rate_hz;
    let k = rx1.num_classes;
    let packet_len = rx1.get(0).0.samples.len();
    let (rep, params) = match init {
        Some(ck) => {
            let meta = read_metadata(ck)?;
            let mut arch = ck.params.arch.clone();
            arch.num_classes = k;
            let fresh = ModelParams::<f32>::init(&arch, seed::derive(cfg.seed, &[STREAM_INIT]))?;
            let params = ModelParams {
                arch,
                extractor: ck.params.extractor.clone(),
                classifier: fresh.classifier,
            };
            (meta.representation, params)
        }
        None => {
            let dims = input_dims(&cfg.representation, packet_len, fs)?;
            let arch = ArchitectureSpec::resnet9(k, dims).with_width_scale(cfg.width_scale);
            (cfg.representation, ModelParams::init(&arch, seed::derive(cfg.seed, &[STREAM_INIT]))?)
        }
    };
    let dims = params.arch.input_dims;
    if input_dims(&rep, packet_len, fs)? != dims {
        return Err(Error::config("initial checkpoint expects a different input size"));
    }
    params.validate()?;
    let d2 = params.arch.embedding_dim();
    let mut t = Trainer::new(params, cfg.lr, cfg.plateau)?;

    let (train1, val1) = split_validation(rx1.len(), Some(rx1.labels()), seed::derive(cfg.seed, &[1]));
    let (train2, val2) = split_validation(rx2.len(), Some(rx2.labels()), seed::derive(cfg.seed, &[2]));
    let group = |store: &LabeledStore, idx: &[usize]| {
        let mut g = vec![Vec::new(); k];
        for &i in idx {
            g[store.labels()[i]].push(i);
        }
        g
    };
    let train2_by = group(&rx2, &train2);
    let val2_by = group(&rx2, &val2);
    let n_pairs = train1.len().min(train2.len());

    let pair_loss = |net: &mut Network<f32>, batch: &InputBatch<f32>, labels: &[usize], backward: bool| -> Result<(f64, Option<crate::nn::Gradients<f32>>)> {
        let z = net.forward_extract(batch)?;
        let logits = net.classifier_logits(&z)?;
        let probs = softmax_rows(&logits, k);
        let ce = cross_entropy(&probs, labels, k)?;
        let (cl_loss, gz) = if cfg.contrastive {
            let cl = nt_xent(&to_f64(&z), d2, cfg.temperature)?;
            (cl.loss, Some(cl.grad))
        } else {
            (0.0, None)
        };
        let g = if backward {
            Some(net.backward(gz.as_deref(), Some(&ce.grad))?)
        } else {
            net.clear_cache();
            None
        };
        Ok((cl_loss + ce.loss, g))
    };

    // fixed validation pairs
    let mut vrng = seed::rng(seed::derive(cfg.seed, &[STREAM_VAL]));
    let val_pairs: Vec<(usize, usize)> = val1
        .iter()
        .filter_map(|&i| {
            let cands = &val2_by[rx1.labels()[i]];
            (!cands.is_empty()).then(|| (i, cands[vrng.random_range(0..cands.len())]))
        })
        .collect();

    for epoch in 0..cfg.max_epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut order = train1.clone();
        order.shuffle(&mut rng);
        order.truncate(n_pairs);
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .filter_map(|&i| {
                let cands = &train2_by[rx1.labels()[i]];
                (!cands.is_empty()).then(|| (i, cands[rng.random_range(0..cands.len())]))
            })
            .collect();
        let (mut total, mut views) = (0.0, 0usize);
        for chunk in pairs.chunks(cfg.batch_pairs) {
            let e = epoch as u64;
            let vs: Vec<View<'_>> = chunk
                .iter()
                .flat_map(|&(i, j)| {
                    [
                        (rx1.get(i).0, Some(seed::derive(cfg.seed, &[STREAM_AUG, e, i as u64, 0]))),
                        (rx2.get(j).0, Some(seed::derive(cfg.seed, &[STREAM_AUG, e, j as u64, 1]))),
                    ]
                })
                .collect();
            let labels: Vec<usize> = chunk
                .iter()
                .flat_map(|&(i, _)| [rx1.labels()[i]; 2])
                .collect();
            let batch = build_batch(&vs, &cfg.ranges, &rep, fs, dims)?;
            let (loss, g) = pair_loss(&mut t.net, &batch, &labels, true)?;
            t.step(g.expect("backward requested"), cfg.freeze_extractor);
            total += loss;
            views += vs.len();
        }
        let train_loss = total / views.max(1) as f64;
        let val_loss = if val_pairs.is_empty() {
            train_loss
        } else {
            let (mut vt, mut vn) = (0.0, 0usize);
            for chunk in val_pairs.chunks(cfg.batch_pairs) {
                let vs: Vec<View<'_>> = chunk
                    .iter()
                    .flat_map(|&(i, j)| {
                        [
                            (rx1.get(i).0, Some(seed::derive(cfg.seed, &[STREAM_VAL, i as u64, 0]))),
                            (rx2.get(j).0, Some(seed::derive(cfg.seed, &[STREAM_VAL, j as u64, 1]))),
                        ]
                    })
                    .collect();
                let labels: Vec<usize> = chunk.iter().flat_map(|&(i, _)| [rx1.labels()[i]; 2]).collect();
                let batch = build_batch(&vs, &cfg.ranges, &rep, fs, dims)?;
                vt += pair_loss(&mut t.net, &batch, &labels, false)?.0;
                vn += vs.len();
            }
            vt / vn as f64
        };
        if t.end_epoch(epoch, train_loss, val_loss) {
            break;
        }
    }
    Ok(t.finish(metadata(&rep, fs)))
}

/// A trained model ready for single-branch inference.
pub struct Classifier {
    net: Network<f32>,
    representation: RepresentationConfig,
    sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

impl Classifier {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if !ck.has_classifier() {
            return Err(Error::config("checkpoint holds only a feature extractor"));
        }
        let meta = read_metadata(ck)?;
        Ok(Classifier {
            net: Network::new(ck.params.clone())?,
            representation: meta.representation,
            sample_rate_hz: meta.sample_rate_hz,
        })
    }

    /// Randomly initialized model.
    pub fn untrained(num_classes: usize, packet_len: usize, sample_rate_hz: f64, rep: RepresentationConfig, width_scale: f64, seed: u64) -> Result<Self> {
        let dims = input_dims(&rep, packet_len, sample_rate_hz)?;
        let arch = ArchitectureSpec::resnet9(num_classes, dims).with_width_scale(width_scale);
        let params = ModelParams::init(&arch, seed)?;
        Self::from_checkpoint(&Checkpoint::new(params, metadata(&rep, sample_rate_hz)))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.params.clone(), metadata(&self.representation, self.sample_rate_hz))
    }

    pub fn num_classes(&self) -> usize {
        self.net.arch().num_classes
    }

    pub fn representation(&self) -> &RepresentationConfig {
        &self.representation
    }

    fn check_rate(&self, fs: f64) -> Result<()> {
        if fs != self.sample_rate_hz {
            return Err(Error::input(format!(
                "signal sampled at {fs} Hz, model trained at {} Hz",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn infer(&mut self, signal: &ComplexSignal) -> Result<Prediction> {
        self.check_rate(signal.sample_rate_hz())?;
        let [h, w] = self.net.arch().input_dims;
        let batch = InputBatch::new(1, h, w, features(&self.representation, signal)?)?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }

    fn predict_batch(&mut self, batch: &InputBatch<f32>) -> Result<Vec<Prediction>> {
        let z = self.net.forward_extract(batch)?;
        self.net.clear_cache();
        let probs = self.net.forward_classify(&z)?;
        let k = self.num_classes();
        Ok(probs
            .chunks(k)
            .map(|p| Prediction {
                class: argmax(p),
                probabilities: p.to_vec(),
            })
            .collect())
    }

    /// Embeddings of unaugmented packets, one row per packet.
    pub fn embed(&mut self, packets: &[Packet]) -> Result<Vec<Vec<f32>>> {
        embed_with(&mut self.net, &self.representation, self.sample_rate_hz, packets, &[])
    }

    /// Predictions for every packet in a store, without augmentation.
    pub fn predict_store(&mut self, store: &LabeledStore) -> Result<Vec<Prediction>> {
        self.check_rate(store.sample_rate_hz)?;
        let dims = self.net.arch().input_dims;
        let mut out = Vec::with_capacity(store.len());
        for chunk in store.packets().chunks(64) {
            let vs: Vec<View<'_>> = chunk.iter().map(|p| (p, None)).collect();
            let batch = build_batch(&vs, &AugmentationRanges::default(), &self.representation, store.sample_rate_hz, dims)?;
            out.extend(self.predict_batch(&batch)?);
        }
        Ok(out)
    }
}

/// Embeddings from any network; `aug_seeds`, when non-empty, augments packet
/// `i` with seed `aug_seeds[i]` under default ranges.
pub fn embed_with(
    net: &mut Network<f32>,
    rep: &RepresentationConfig,
    fs: f64,
    packets: &[Packet],
    aug_seeds: &[u64],
) -> Result<Vec<Vec<f32>>> {
    let dims = net.arch().input_dims;
    let d2 = net.arch().embedding_dim();
    let mut out = Vec::with_capacity(packets.len());
    for (c, chunk) in packets.chunks(64).enumerate() {
        let vs: Vec<View<'_>> = chunk
            .iter()
            .enumerate()
            .map(|(j, p)| (p, aug_seeds.get(c * 64 + j).copied()))
            .collect();
        let batch = build_batch(&vs, &AugmentationRanges::default(), rep, fs, dims)?;
        let z = net.forward_extract(&batch)?;
        net.clear_cache();
        out.extend(z.chunks(d2).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Extractor network from a checkpoint (classifier optional).
pub fn extractor_network(ck: &Checkpoint) -> Result<(Network<f32>, RepresentationConfig, f64)> {
    let meta = read_metadata(ck)?;
    let mut params = ck.params.clone();
    if params.classifier.is_empty() {
        params.classifier = ModelParams::<f32>::init(&params.arch, 0)?.classifier;
    }
    Ok((Network::new(params)?, meta.representation, meta.sample_rate_hz))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceCount {
    pub correct: u64,
    pub total: u64,
}

impl SliceCount {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_condition: BTreeMap<(u32, ChannelTag), SliceCount>,
}

impl EvalReport {
    pub fn from_predictions(
        num_classes: usize,
        labels: &[usize],
        predicted: &[usize],
        slices: &[(u32, ChannelTag)],
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::input("nothing to evaluate"));
        }
        if labels.len() != predicted.len() || labels.len() != slices.len() {
            return Err(Error::input("labels, predictions and slice keys differ in length"));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        let mut per_condition: BTreeMap<(u32, ChannelTag), SliceCount> = BTreeMap::new();
        let mut correct = 0u64;
        for ((&y, &p), key) in labels.iter().zip(predicted).zip(slices) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::input(format!("class index out of range for {num_classes} classes")));
            }
            confusion[y][p] += 1;
            let s = per_condition.entry(*key).or_default();
            s.total += 1;
            if y == p {
                s.correct += 1;
                correct += 1;
            }
        }
        Ok(EvalReport {
            overall_accuracy: correct as f64 / labels.len() as f64,
            confusion,
            per_condition,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("receiver_id,channel_tag,correct,total,accuracy\n");
        let total = self.total();
        let correct: u64 = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        out.push_str(&format!("all,all,{correct},{total},{}\n", self.overall_accuracy));
        for ((rx, tag), s) in &self.per_condition {
            out.push_str(&format!("{rx},{},{},{},{}\n", tag.as_str(), s.correct, s.total, s.accuracy()));
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\predicted");
        for j in 0..k {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "accuracy {:.4} over {} packets\n",
            self.overall_accuracy,
            self.total()
        );
        for ((rx, tag), c) in &self.per_condition {
            s.push_str(&format!(
                "  receiver {rx} / {}: {:.4} ({}/{})\n",
                tag.as_str(),
                c.accuracy(),
                c.correct,
                c.total
            ));
        }
        s
    }
}

/// Single-branch evaluation of `model` on every packet of `test`.
pub fn evaluate(model: &mut Classifier, test: &LabeledStore) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::input("test store is empty"));
    }
    if test.num_classes != model.num_classes() {
        return Err(Error::config(format!(
            "test store has {} classes, model {}",
            test.num_classes,
            model.num_classes()
        )));
    }
    let preds = model.predict_store(test)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let slices: Vec<(u32, ChannelTag)> = test
        .packets()
        .iter()
        .map(|p| (p.receiver_id, p.channel_tag))
        .collect();
    EvalReport::from_predictions(test.num_classes, test.labels(), &predicted, &slices)
}

/// Stable digest of parameter values, for shared-weight and freeze checks.
pub fn params_digest(tensors: &[Tensor<f32>]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for t in tensors {
        for v in &t.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    h
}

/// One fine-tune + evaluation of a packet-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub packets_per_device: usize,
    pub pretrained: bool,
    pub repetition: usize,
    pub accuracy: f64,
}

impl SweepRow {
    pub fn arm(&self) -> &'static str {
        if self.pretrained {
            "with_pretrain"
        } else {
            "without_pretrain"
        }
    }
}

/// Paired fine-tunes (with and without the pretrained `extractor`) for
/// every packet count and repetition. Both arms of a repetition share a seed.
pub fn run_sweep(
    bench: &crate::benchmark::Benchmark,
    extractor: &Checkpoint,
    points: &[usize],
    repetitions: usize,
    cfg: &FinetuneConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &n in points {
        for rep in 0..repetitions {
            for pretrained in [true, false] {
                let run_cfg = FinetuneConfig {
                    packets_per_device: Some(n),
                    seed: seed::derive(cfg.seed, &[rep as u64]),
                    ..cfg.clone()
                };
                let init = pretrained.then_some(extractor);
                let outcome = finetune_siamese(&bench.train_rx1, &bench.train_rx2, init, &run_cfg)?;
                let mut model = Classifier::from_checkpoint(&outcome.checkpoint)?;
                let report = evaluate(&mut model, &bench.test)?;
                log::info!(
                    "sweep n={n} rep={rep} pretrained={pretrained}: accuracy {:.4}",
                    report.overall_accuracy
                );
                rows.push(SweepRow {
                    packets_per_device: n,
                    pretrained,
                    repetition: rep,
                    accuracy: report.overall_accuracy,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("packets_per_device,arm,repetition,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.packets_per_device, r.arm(), r.repetition, r.accuracy));
    }
    out
}

/// `(packets_per_device, pretrained) -> (mean, min, max)` over repetitions.
pub fn sweep_stats(rows: &[SweepRow]) -> BTreeMap<(usize, bool), (f64, f64, f64)> {
    let mut groups: BTreeMap<(usize, bool), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.packets_per_device, r.pretrained)).or_default().push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (k, (mean, min, max))
        })
        .collect()
}

pub fn sweep_summary_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("packets_per_device,arm,mean,min,max\n");
    for ((n, pretrained), (mean, min, max)) in sweep_stats(rows) {
        let arm = if pretrained { "with_pretrain" } else { "without_pretrain" };
        out.push_str(&format!("{n},{arm},{mean},{min},{max}\n"));
    }
    out
}
