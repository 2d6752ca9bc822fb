//! Trains and evaluates one Spec+Siamese run and one plain run on the
//! synthetic benchmark.
//!
//! ```text
//! cargo run --release --example siamese_benchmark -- [max_epochs] [seed] [packets_per_pair]
//! ```

use std::time::Instant;

use rffi::benchmark::BenchmarkConfig;
use rffi::pipelines::{evaluate, finetune_siamese, Classifier, FinetuneConfig};

fn main() -> rffi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let max_epochs = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(20);
    let seed = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(1);
    let ppp = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(200);
    let t0 = Instant::now();
    let bench = BenchmarkConfig {
        train_packets_per_pair: ppp,
        ..BenchmarkConfig::default()
    }
    .build()?;
    println!("generated benchmark in {:.1?}", t0.elapsed());
    for contrastive in [true, false] {
        let cfg = FinetuneConfig {
            width_scale: 0.25,
            max_epochs,
            contrastive,
            seed,
            ..FinetuneConfig::default()
        };
        let t = Instant::now();
        let out = finetune_siamese(&bench.train_rx1, &bench.train_rx2, None, &cfg)?;
        let mut model = Classifier::from_checkpoint(&out.checkpoint)?;
        let report = evaluate(&mut model, &bench.test)?;
        println!(
            "contrastive={contrastive}: best epoch {} accuracy {:.4} ({:.1?})",
            out.best_epoch,
            report.overall_accuracy,
            t.elapsed()
        );
    }
    Ok(())
}
