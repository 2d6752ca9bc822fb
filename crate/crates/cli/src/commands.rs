use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rffi::datasets::{self, Condition, CorpusSpec};
use rffi::impairments::{sample_device_profiles, sample_receiver_profiles};
use rffi::nn::Checkpoint;
use rffi::pipelines::{self, Classifier};
use sha2::{Digest, Sha256};

use crate::config::{self, EvalRun, FinetuneRun, GenConfig, PretrainRun, SweepRun};
use crate::{Common, Failure};

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn config_path(c: &Common) -> Result<&Path, Failure> {
    c.config
        .as_deref()
        .ok_or_else(|| usage("--config <path> is required"))
}

fn load<T: serde::de::DeserializeOwned>(c: &Common) -> Result<T, Failure> {
    config::load(config_path(c)?).map_err(Failure::Usage)
}

fn out_dir(c: &Common, from_config: Option<&PathBuf>) -> Result<PathBuf, Failure> {
    c.out
        .clone()
        .or_else(|| from_config.cloned())
        .ok_or_else(|| usage("no output directory: pass --out or set `out` in the config"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("{what} not found: {}", path.display())))
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Runtime)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn gen(c: &Common) -> Outcome {
    let mut cfg: GenConfig = load(c)?;
    let out = out_dir(c, cfg.out.as_ref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.receivers.is_empty() {
        return Err(usage("`receivers` must list at least one receiver index"));
    }
    let population = cfg.receivers.iter().max().copied().unwrap_or(0) + 1;
    let all_rx = sample_receiver_profiles(population, cfg.receiver_seed, cfg.spread)?;
    let mut condition = match cfg.condition {
        rffi::datasets::ChannelTag::Clean => Condition::clean(),
        tag => Condition::preset(tag, cfg.snr_db)?,
    };
    if let Some(r) = cfg.ranges {
        condition.ranges = r;
    }
    let spec = CorpusSpec {
        chirp: cfg.chirp,
        devices: sample_device_profiles(cfg.num_devices, cfg.device_seed, cfg.spread)?,
        receivers: cfg.receivers.iter().map(|&i| all_rx[i].clone()).collect(),
        packets_per_pair: cfg.packets_per_pair,
        condition,
        seed: cfg.seed,
        labeled: cfg.labeled,
    };
    let manifest = datasets::generate_corpus(&spec, &out)?;
    let hash = sha256_file(&out.join(datasets::BLOB_FILE))?;
    println!("records: {}", spec.record_count());
    println!("manifest: {}", manifest.display());
    println!("blob sha256: {hash}");
    Ok(())
}

pub fn pretrain(c: &Common) -> Outcome {
    let mut run: PretrainRun = load(c)?;
    let out = out_dir(c, run.out.as_ref())?;
    if let Some(s) = c.seed {
        run.pretrain.seed = s;
    }
    if let Some(w) = c.width_scale {
        run.pretrain.width_scale = w;
    }
    require_file(&run.data, "corpus manifest")?;
    let store = datasets::load_unlabeled(&run.data)?;
    let outcome = pipelines::pretrain(&store, &run.pretrain)?;
    ensure_dir(&out)?;
    outcome.checkpoint.save(&out.join("extractor.ckpt"))?;
    write(&out.join("train_log.csv"), pipelines::log_csv(&outcome.log))?;
    println!(
        "epochs: {} (best {}), checkpoint: {}",
        outcome.log.len(),
        outcome.best_epoch,
        out.join("extractor.ckpt").display()
    );
    Ok(())
}

pub fn finetune(c: &Common) -> Outcome {
    let mut run: FinetuneRun = load(c)?;
    let out = out_dir(c, run.out.as_ref())?;
    if let Some(s) = c.seed {
        run.finetune.seed = s;
    }
    if let Some(w) = c.width_scale {
        run.finetune.width_scale = w;
    }
    require_file(&run.rx1, "rx1 manifest")?;
    require_file(&run.rx2, "rx2 manifest")?;
    let init_path = c.init.clone().or(run.init.clone());
    let init = match &init_path {
        Some(p) => {
            require_file(p, "initial checkpoint")?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let rx1 = datasets::load_store(&run.rx1)?;
    let rx2 = datasets::load_store(&run.rx2)?;
    let outcome = pipelines::finetune_siamese(&rx1, &rx2, init.as_ref(), &run.finetune)?;
    ensure_dir(&out)?;
    outcome.checkpoint.save(&out.join("model.ckpt"))?;
    write(&out.join("train_log.csv"), pipelines::log_csv(&outcome.log))?;
    println!(
        "{} pretraining; epochs: {} (best {}), checkpoint: {}",
        if init.is_some() { "w/" } else { "w/o" },
        outcome.log.len(),
        outcome.best_epoch,
        out.join("model.ckpt").display()
    );
    Ok(())
}

pub fn eval(c: &Common) -> Outcome {
    let run: EvalRun = load(c)?;
    let out = out_dir(c, run.out.as_ref())?;
    let model_path = c
        .init
        .clone()
        .or(run.model.clone())
        .ok_or_else(|| usage("no model: pass --init or set `model` in the config"))?;
    require_file(&model_path, "model checkpoint")?;
    require_file(&run.data, "corpus manifest")?;
    let mut model = Classifier::from_checkpoint(&Checkpoint::load(&model_path)?)?;
    let test = datasets::load_store(&run.data)?;
    let report = pipelines::evaluate(&mut model, &test)?;
    ensure_dir(&out)?;
    write(&out.join("accuracy.csv"), report.accuracy_csv())?;
    write(&out.join("confusion.csv"), report.confusion_csv())?;
    write(&out.join("summary.txt"), report.summary())?;
    print!("{}", report.summary());
    Ok(())
}

pub fn sweep(c: &Common) -> Outcome {
    let mut run: SweepRun = load(c)?;
    let out = out_dir(c, run.out.as_ref())?;
    if let Some(s) = c.seed {
        run.benchmark.seed = s;
    }
    if let Some(w) = c.width_scale {
        run.finetune.width_scale = w;
        run.pretrain.width_scale = w;
    }
    if run.packets_per_device.is_empty() || run.repetitions == 0 {
        return Err(usage("sweep needs at least one point and one repetition"));
    }
    let extractor = match &c.init {
        Some(p) => {
            require_file(p, "initial checkpoint")?;
            Checkpoint::load(p)?
        }
        None => {
            log::info!("pretraining on {} disjoint devices", run.pretrain_devices);
            let store = run
                .benchmark
                .pretrain_store(run.pretrain_devices, run.pretrain_packets_per_pair)?;
            let outcome = pipelines::pretrain(&store, &run.pretrain)?;
            ensure_dir(&out)?;
            outcome.checkpoint.save(&out.join("extractor.ckpt"))?;
            write(&out.join("pretrain_log.csv"), pipelines::log_csv(&outcome.log))?;
            outcome.checkpoint
        }
    };
    let max_points = *run.packets_per_device.iter().max().expect("non-empty");
    let bench = rffi::benchmark::BenchmarkConfig {
        train_packets_per_pair: max_points,
        ..run.benchmark.clone()
    }
    .build()?;
    let rows = rffi::pipelines::run_sweep(
        &bench,
        &extractor,
        &run.packets_per_device,
        run.repetitions,
        &run.finetune,
    )?;
    ensure_dir(&out)?;
    write(&out.join("sweep.csv"), rffi::pipelines::sweep_csv(&rows))?;
    let summary = rffi::pipelines::sweep_summary_csv(&rows);
    write(&out.join("sweep_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}
