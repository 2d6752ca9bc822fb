//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured statistics, then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rffi::benchmark::BenchmarkConfig;
use rffi::channel::{self, AugmentationRanges, ChannelRealization, JakesProcess, TapGains};
use rffi::datasets::{self, synthesize_store, ChannelTag, Condition, CorpusSpec};
use rffi::impairments::{sample_device_profiles, sample_receiver_profiles};
use rffi::lora_phy::{synthesize_packet, synthesize_preamble, ChirpParams};
use rffi::nn::layers::{self, ConvGeom};
use rffi::nn::{ArchitectureSpec, Checkpoint, InputBatch, ModelParams, Network};
use rffi::objectives::{combined_loss, cross_entropy, nt_xent};
use rffi::pipelines::{self, Classifier, FinetuneConfig, PretrainConfig, SweepRow};
use rffi::representation::{self, RepresentationConfig, StftConfig, WindowKind};
use rffi::seed;
use rffi::verification::{
    bessel_j0, empirical_autocorrelation, max_relative_error, oracle_channel_stats, oracle_grad,
    oracle_nt_xent, spearman, OracleReport, DEFAULT_FD_STEP,
};

/// Criteria run one at a time so each measured runtime is its own.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes the verdict straight to stdout so it shows up even for passing
/// tests, whose `print!` output the test harness captures.
fn announce(criterion: u32, title: &str, reports: &[OracleReport], elapsed_s: f64, budget_s: f64) -> bool {
    let timed = OracleReport::at_most("runtime_s", elapsed_s, budget_s);
    let pass = reports.iter().all(|r| r.pass) && timed.pass;
    let mut text = format!("\ncriterion {criterion}: {} {title}\n", if pass { "PASS" } else { "FAIL" });
    for r in reports.iter().chain(std::iter::once(&timed)) {
        text.push_str(&format!("    {}\n", r.csv_row()));
    }
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

/// Progress detail that should be visible without `--nocapture`.
fn detail(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "    {line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn criterion_1_chirp_correctness() {
    let _serial = serial();
    let start = Instant::now();
    let mut reports = Vec::new();
    for sf in [7u32, 9] {
        let p = ChirpParams::for_spreading_factor(sf);
        let s = synthesize_preamble(&p).unwrap();
        let (b, t_sym, fs) = (p.bandwidth_hz, p.symbol_duration_s, p.sample_rate_hz);
        let mut max_phase_err = 0.0f64;
        let mut max_mod_err = 0.0f64;
        for (n, x) in s.samples().iter().enumerate() {
            let t = n as f64 / fs;
            let phi = -PI * b * t + PI * (b / t_sym) * t * t;
            let err = (x * Complex64::from_polar(1.0, -phi)).arg().abs();
            max_phase_err = max_phase_err.max(err);
            max_mod_err = max_mod_err.max((x.norm() - p.amplitude).abs());
        }
        let freqs: Vec<f64> = s
            .samples()
            .windows(2)
            .map(|w| (w[1] * w[0].conj()).arg() * fs / (2.0 * PI))
            .collect();
        // least-squares line through the increments, sampled at interval midpoints
        let times: Vec<f64> = (0..freqs.len()).map(|n| (n as f64 + 0.5) / fs).collect();
        let n = times.len() as f64;
        let (mt, mf) = (times.iter().sum::<f64>() / n, freqs.iter().sum::<f64>() / n);
        let slope = times.iter().zip(&freqs).map(|(t, f)| (t - mt) * (f - mf)).sum::<f64>()
            / times.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
        let at = |t: f64| mf + slope * (t - mt);
        let fit_resid = times.iter().zip(&freqs).map(|(t, f)| (f - at(*t)).abs()).fold(0.0, f64::max);
        let monotone = freqs.windows(2).all(|w| w[1] > w[0]);
        let start_err = (at(0.0) + b / 2.0).abs();
        let end_err = (at(t_sym) - b / 2.0).abs();
        reports.push(OracleReport::at_most(format!("sf{sf}_sweep_linearity_resid_hz"), fit_resid, 1e-3));
        reports.push(OracleReport::at_most(format!("sf{sf}_phase_err_rad"), max_phase_err, 1e-9));
        reports.push(OracleReport::at_most(format!("sf{sf}_modulus_err"), max_mod_err, 1e-12));
        reports.push(OracleReport::at_most(format!("sf{sf}_sweep_start_err_hz"), start_err, 1e-3));
        reports.push(OracleReport::at_most(format!("sf{sf}_sweep_end_err_hz"), end_err, 1e-3));
        reports.push(OracleReport::at_least(
            format!("sf{sf}_sweep_monotone"),
            monotone as u8 as f64,
            1.0,
        ));
    }
    let pass = announce(1, "chirp correctness", &reports, start.elapsed().as_secs_f64(), 1.0);
    assert!(pass);
}

#[test]
fn criterion_2_channel_statistics() {
    let _serial = serial();
    let start = Instant::now();
    let fs = 1e6;
    let n_real = 10_000u64;
    let mut reports = Vec::new();

    let mut energies = Vec::new();
    for (k, target_ns) in [5.0, 25.0, 100.0, 200.0, 300.0].into_iter().enumerate() {
        let ranges = AugmentationRanges::fixed(target_ns, 0.0, 30.0);
        let mut taps = Vec::new();
        let mut delays = Vec::new();
        for i in 0..n_real {
            let ch = channel::sample_channel(&ranges, seed::derive(21, &[k as u64, i]), 1, fs).unwrap();
            let TapGains::Static(g) = &ch.tap_gains else {
                panic!("zero Doppler must give static taps")
            };
            taps.push(g.iter().map(|x| vec![*x]).collect::<Vec<_>>());
            energies.push(g.iter().map(|x| x.norm_sqr()).sum::<f64>());
            delays = ch.tap_delays_s.clone();
        }
        let stats = oracle_channel_stats(&delays, &taps, &[]);
        let target = target_ns * 1e-9;
        reports.push(OracleReport::at_most(
            format!("rms_spread_rel_err_{target_ns}ns"),
            (stats.rms_delay_spread - target).abs() / target,
            0.05,
        ));
    }
    let mean_energy = energies.iter().sum::<f64>() / energies.len() as f64;
    reports.push(OracleReport::at_most("mean_energy_abs_err", (mean_energy - 1.0).abs(), 0.01));

    for fd in [1.0, 5.0] {
        let dt = 0.025 / fd;
        let points = 41;
        let mut rng = ChaCha8Rng::seed_from_u64(fd as u64);
        let series: Vec<Vec<Complex64>> = (0..n_real)
            .map(|_| {
                let p = JakesProcess::new(fd, channel::SCATTERERS_PER_TAP, 1.0, &mut rng);
                (0..points).map(|k| p.gain_at(k as f64 * dt)).collect()
            })
            .collect();
        let lags: Vec<usize> = (0..points).collect();
        let r = empirical_autocorrelation(&series, &lags);
        let mse = lags
            .iter()
            .map(|&l| (r[l] - bessel_j0(2.0 * PI * fd * l as f64 * dt)).powi(2))
            .sum::<f64>()
            / lags.len() as f64;
        reports.push(OracleReport::at_most(format!("jakes_rmse_fd{fd}"), mse.sqrt(), 0.05));
    }

    let symbol = synthesize_preamble(&ChirpParams::default()).unwrap();
    for snr in [0.0, 10.0, 40.0] {
        let (mut sig, mut noise) = (0.0, 0.0);
        for i in 0..n_real {
            let y = channel::add_awgn(&symbol, snr, seed::derive(5, &[snr as u64, i])).unwrap();
            for (a, b) in symbol.samples().iter().zip(y.samples()) {
                sig += a.norm_sqr();
                noise += (b - a).norm_sqr();
            }
        }
        let measured = 10.0 * (sig / noise).log10();
        reports.push(OracleReport::at_most(format!("awgn_err_db_at_{snr}"), (measured - snr).abs(), 0.2));
    }
    let pass = announce(2, "channel statistics", &reports, start.elapsed().as_secs_f64(), 120.0);
    assert!(pass);
}

/// Cells within `below_peak_db` of the strongest cell of a log-magnitude grid
/// (40 dB: magnitude above 1% of the grid maximum).
fn occupied(spec: &representation::Spectrogram, below_peak_db: f64) -> Vec<bool> {
    let top = spec.values.iter().cloned().fold(f64::MIN, f64::max);
    let span = below_peak_db / 20.0 * 10f64.ln();
    spec.values.iter().map(|&v| v > top - span).collect()
}

#[test]
fn criterion_3_representation() {
    let _serial = serial();
    let start = Instant::now();
    let mut reports = Vec::new();
    let chirp = ChirpParams::default();
    let x = synthesize_packet(&chirp).unwrap();

    let rect = StftConfig {
        window_len: 128,
        hop_len: 128,
        window_kind: WindowKind::Rectangular,
        crop_band_hz: None,
    };
    let grid = representation::stft(&x, &rect).unwrap();
    let lhs: f64 = grid.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / 128.0;
    reports.push(OracleReport::at_most(
        "parseval_rel_err",
        (lhs - x.energy()).abs() / x.energy(),
        1e-6,
    ));

    let cfg = StftConfig::default();
    let a = representation::log_spectrogram(&x, &cfg).unwrap();
    let b = representation::log_spectrogram(&x.scaled(2.5), &cfg).unwrap();
    let occ = occupied(&a, 40.0);
    let shift_err = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&occ)
        .filter(|(_, &o)| o)
        .map(|((u, v), _)| (v - u - 2.5f64.ln()).abs())
        .fold(0.0, f64::max);
    reports.push(OracleReport::at_most("log_scale_shift_err", shift_err, 1e-9));

    // static two-tap echo, about 220 ns RMS delay spread, at 60 dB
    let ch = ChannelRealization::from_static_taps(
        vec![0.0, 600e-9],
        vec![Complex64::new(0.9, 0.0), Complex64::from_polar(0.4, 1.0)],
    )
    .unwrap();
    let y = channel::add_awgn(&channel::apply_channel(&x, &ch), 60.0, 99).unwrap();
    let sy = representation::log_spectrogram(&y, &cfg).unwrap();
    let occ = occupied(&a, 40.0);
    let mut additive_err = 0.0f64;
    for bin in 0..a.n_bins {
        let h = ch.static_response(a.freq_axis_hz[bin]).unwrap().norm().ln();
        for f in 0..a.n_frames {
            if occ[bin * a.n_frames + f] {
                additive_err = additive_err.max((sy.at(bin, f) - a.at(bin, f) - h).abs());
            }
        }
    }
    reports.push(OracleReport::at_most("additive_decomposition_err", additive_err, 0.1));

    let cx = representation::cis(&a).unwrap();
    let cy = representation::cis(&sy).unwrap();
    let mut cis_err = 0.0f64;
    for bin in 0..a.n_bins {
        for f in 0..cx.n_frames {
            if occ[bin * a.n_frames + f] && occ[bin * a.n_frames + f + 1] {
                cis_err = cis_err.max((cy.at(bin, f) - cx.at(bin, f)).abs());
            }
        }
    }
    reports.push(OracleReport::at_most("cis_static_cancellation_err", cis_err, 0.02));
    let pass = announce(3, "representation", &reports, start.elapsed().as_secs_f64(), 60.0);
    assert!(pass);
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of a conv layer's weight, bias and input gradients
/// under the probe loss `sum(r * out)`, optionally with an identity skip and
/// ReLU after the addition.
fn conv_check(rng: &mut ChaCha8Rng, g: &ConvGeom, skip: bool) -> f64 {
    let x = rand_vec(rng, g.in_len());
    let w = rand_vec(rng, g.weight_len());
    let bias = rand_vec(rng, g.out_c);
    let r = rand_vec(rng, g.out_len());
    let forward = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; g.out_len()];
        layers::conv2d_forward(g, x, w, b, &mut out, &mut Vec::new());
        if skip {
            for (o, v) in out.iter_mut().zip(x) {
                *o += v;
            }
            layers::relu_inplace(&mut out);
        }
        out
    };
    let out = forward(&x, &w, &bias);
    let mut dout = r.clone();
    if skip {
        layers::relu_backward(&out, &mut dout);
    }
    let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; bias.len()], vec![0.0; x.len()]);
    layers::conv2d_backward(g, &x, &w, &dout, &mut dw, &mut db, Some(&mut dx), &mut Vec::new());
    if skip {
        for (d, v) in dx.iter_mut().zip(&dout) {
            *d += v;
        }
    }
    let fw = oracle_grad(|p| dot(&forward(&x, p, &bias), &r), &w, DEFAULT_FD_STEP);
    let fb = oracle_grad(|p| dot(&forward(&x, &w, p), &r), &bias, DEFAULT_FD_STEP);
    let fx = oracle_grad(|p| dot(&forward(p, &w, &bias), &r), &x, DEFAULT_FD_STEP);
    max_relative_error(&dw, &fw)
        .max(max_relative_error(&db, &fb))
        .max(max_relative_error(&dx, &fx))
}

#[test]
fn criterion_4_gradient_suite() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = std::collections::BTreeMap::<&str, f64>::new();
    let mut note = |name: &'static str, err: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    };
    for _ in 0..20 {
        note("conv7x7_stride2", conv_check(&mut rng, &ConvGeom::new(2, 9, 11, 3, 7, 7, 2), false));
        note("conv3x3", conv_check(&mut rng, &ConvGeom::new(3, 6, 7, 2, 3, 3, 1), false));
        note("conv1x1_stride2_projection", conv_check(&mut rng, &ConvGeom::new(3, 6, 7, 4, 1, 1, 2), false));
        note("skip_add_relu", conv_check(&mut rng, &ConvGeom::new(3, 5, 6, 3, 3, 3, 1), true));

        let (c, spatial) = (4, 15);
        let x = rand_vec(&mut rng, c * spatial);
        let r = rand_vec(&mut rng, c);
        let pool = |x: &[f64]| {
            let mut o = vec![0.0; c];
            layers::global_avg_pool(x, c, &mut o);
            dot(&o, &r)
        };
        let mut dx = vec![0.0; x.len()];
        layers::global_avg_pool_backward(&r, spatial, &mut dx);
        note("average_pool", max_relative_error(&dx, &oracle_grad(pool, &x, DEFAULT_FD_STEP)));

        let (batch, n_in, n_out) = (3, 5, 4);
        let x = rand_vec(&mut rng, batch * n_in);
        let w = rand_vec(&mut rng, n_in * n_out);
        let b = rand_vec(&mut rng, n_out);
        let r = rand_vec(&mut rng, batch * n_out);
        let dense = |x: &[f64], w: &[f64], b: &[f64]| {
            let mut o = vec![0.0; batch * n_out];
            layers::dense_forward(x, batch, w, b, &mut o);
            dot(&o, &r)
        };
        let (mut dw, mut db, mut dxx) = (vec![0.0; w.len()], vec![0.0; n_out], vec![0.0; x.len()]);
        layers::dense_backward(&x, batch, &w, &r, &mut dw, &mut db, Some(&mut dxx));
        let e = max_relative_error(&dw, &oracle_grad(|p| dense(&x, p, &b), &w, DEFAULT_FD_STEP))
            .max(max_relative_error(&db, &oracle_grad(|p| dense(&x, &w, p), &b, DEFAULT_FD_STEP)))
            .max(max_relative_error(&dxx, &oracle_grad(|p| dense(p, &w, &b), &x, DEFAULT_FD_STEP)));
        note("dense", e);

        let k = rng.random_range(2..11);
        let logits = rand_vec(&mut rng, 4 * k);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..k)).collect();
        let ce = cross_entropy(&layers::softmax_rows(&logits, k), &labels, k).unwrap();
        let fd = oracle_grad(
            |z| cross_entropy(&layers::softmax_rows(z, k), &labels, k).unwrap().loss,
            &logits,
            DEFAULT_FD_STEP,
        );
        note("softmax_cross_entropy", max_relative_error(&ce.grad, &fd));

        let pairs = rng.random_range(1..=8);
        let dim = rng.random_range(2..9);
        let z = rand_vec(&mut rng, 2 * pairs * dim);
        let l = nt_xent(&z, dim, 0.05).unwrap();
        let fd = oracle_grad(|p| nt_xent(p, dim, 0.05).unwrap().loss, &z, DEFAULT_FD_STEP);
        note("nt_xent", max_relative_error(&l.grad, &fd));
    }

    // end-to-end toy network under the combined loss
    for s in 0..2u64 {
        let mut arch = ArchitectureSpec::resnet9(3, [8, 10]).with_width_scale(0.125);
        arch.dense_sizes = [8, 4];
        let mut params = ModelParams::<f64>::init(&arch, s).unwrap();
        for t in params.extractor.iter_mut().chain(params.classifier.iter_mut()) {
            if t.shape.len() == 1 {
                t.data = rand_vec(&mut rng, t.len()).iter().map(|v| 0.2 * v).collect();
            }
        }
        let mut net = Network::new(params).unwrap();
        let input = InputBatch::new(4, 8, 10, rand_vec(&mut rng, 320)).unwrap();
        let labels = [0, 0, 2, 2];
        let z = net.forward_extract(&input).unwrap();
        let probs = net.forward_classify(&z).unwrap();
        let l = combined_loss(&z, 4, &probs, &labels, 3, 0.5).unwrap();
        let grads = net.backward(Some(&l.grad_embeddings), Some(&l.grad_logits)).unwrap();
        let analytic: Vec<Vec<f64>> = grads.iter().map(|t| t.data.clone()).collect();
        let n_ex = net.params.extractor.len();
        for (ti, a) in analytic.iter().enumerate() {
            let x0 = if ti < n_ex { net.params.extractor[ti].data.clone() } else { net.params.classifier[ti - n_ex].data.clone() };
            let fd = oracle_grad(
                |p| {
                    if ti < n_ex {
                        net.params.extractor[ti].data.copy_from_slice(p);
                    } else {
                        net.params.classifier[ti - n_ex].data.copy_from_slice(p);
                    }
                    let z = net.forward_extract(&input).unwrap();
                    net.clear_cache();
                    let probs = net.forward_classify(&z).unwrap();
                    combined_loss(&z, 4, &probs, &labels, 3, 0.5).unwrap().total
                },
                &x0,
                DEFAULT_FD_STEP,
            );
            if ti < n_ex {
                net.params.extractor[ti].data.copy_from_slice(&x0);
            } else {
                net.params.classifier[ti - n_ex].data.copy_from_slice(&x0);
            }
            note("network_end_to_end", max_relative_error(a, &fd));
        }
    }

    let mut reports: Vec<OracleReport> = worst
        .iter()
        .map(|(name, e)| OracleReport::at_most(format!("{name}_max_rel_err"), *e, 1e-4))
        .collect();

    let mut brute = 0.0f64;
    for _ in 0..100 {
        let pairs = rng.random_range(1..=8);
        let dim = rng.random_range(2..9);
        let z = rand_vec(&mut rng, 2 * pairs * dim);
        let fast = nt_xent(&z, dim, 0.05).unwrap().loss;
        let views: Vec<Vec<f64>> = z.chunks(dim).map(<[f64]>::to_vec).collect();
        brute = brute.max((fast - oracle_nt_xent(&views, 0.05)).abs());
    }
    reports.push(OracleReport::at_most("nt_xent_vs_brute_force_abs", brute, 1e-10));

    let closed = nt_xent(&[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], 2, 0.05).unwrap().loss;
    let expected = 4.0 * (2.0 * (-20.0f64).exp()).ln_1p();
    let sig3 = |v: f64| format!("{v:.2e}");
    reports.push(OracleReport::at_least(
        "closed_form_3_sig_figs",
        (sig3(closed) == sig3(expected) && sig3(closed) == "1.65e-8") as u8 as f64,
        1.0,
    ));
    let pass = announce(4, "gradient suite", &reports, start.elapsed().as_secs_f64(), 300.0);
    assert!(pass);
}

/// Epoch caps derived from the runtime targets: about 30 s per epoch for a
/// full 200-packet benchmark run at width 0.25 on one core.
const SIAMESE_MAX_EPOCHS: usize = 12;
const SWEEP_MAX_EPOCHS: usize = 15;
const PRETRAIN_MAX_EPOCHS: usize = 20;

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .is_test(true)
        .try_init();
}

#[test]
fn criterion_5_siamese_benefit() {
    let _serial = serial();
    init_logging();
    let start = Instant::now();
    let bench = BenchmarkConfig::default().build().unwrap();
    let mut wins = 0;
    let mut min_siamese = f64::INFINITY;
    for rep in 0..4u64 {
        let mut acc = [0.0; 2];
        for (slot, contrastive) in [true, false].into_iter().enumerate() {
            let cfg = FinetuneConfig {
                width_scale: 0.25,
                max_epochs: SIAMESE_MAX_EPOCHS,
                contrastive,
                seed: seed::derive(500, &[rep]),
                ..FinetuneConfig::default()
            };
            let out = pipelines::finetune_siamese(&bench.train_rx1, &bench.train_rx2, None, &cfg).unwrap();
            let mut model = Classifier::from_checkpoint(&out.checkpoint).unwrap();
            acc[slot] = pipelines::evaluate(&mut model, &bench.test).unwrap().overall_accuracy;
        }
        detail(format!("rep {rep}: siamese {:.4} plain {:.4}", acc[0], acc[1]));
        if acc[0] >= 0.90 && acc[0] > acc[1] {
            wins += 1;
        }
        min_siamese = min_siamese.min(acc[0]);
    }
    let reports = vec![
        OracleReport::at_least("reps_siamese_ge_0.90_and_strictly_above_plain", wins as f64, 3.0),
        OracleReport::at_least("min_siamese_accuracy", min_siamese, 0.0),
    ];
    let pass = announce(5, "siamese benefit", &reports, start.elapsed().as_secs_f64(), 3600.0);
    assert!(pass);
}

#[test]
fn criterion_6_pretraining_benefit() {
    let _serial = serial();
    init_logging();
    let start = Instant::now();
    let config = BenchmarkConfig::default();
    let pretrain_data = config.pretrain_store(8, 100).unwrap();
    let pretrain_cfg = PretrainConfig {
        width_scale: 0.25,
        max_epochs: PRETRAIN_MAX_EPOCHS,
        seed: 600,
        ..PretrainConfig::default()
    };
    let extractor = pipelines::pretrain(&pretrain_data, &pretrain_cfg).unwrap().checkpoint;
    let bench = config.build().unwrap();
    let cfg = FinetuneConfig {
        width_scale: 0.25,
        max_epochs: SWEEP_MAX_EPOCHS,
        seed: 601,
        ..FinetuneConfig::default()
    };
    let points = [20, 50, 100, 200];
    let rows: Vec<SweepRow> = pipelines::run_sweep(&bench, &extractor, &points, 4, &cfg).unwrap();
    let stats = pipelines::sweep_stats(&rows);
    let gaps: Vec<f64> = points
        .iter()
        .map(|&n| stats[&(n, true)].0 - stats[&(n, false)].0)
        .collect();
    for (n, g) in points.iter().zip(&gaps) {
        detail(format!(
            "n={n}: with {:.4} without {:.4} gap {:+.4}",
            stats[&(*n, true)].0,
            stats[&(*n, false)].0,
            g
        ));
    }
    let counts: Vec<f64> = points.iter().map(|&n| n as f64).collect();
    let reports = vec![
        OracleReport::at_least("gap_points_at_20_packets", 100.0 * gaps[0], 10.0),
        OracleReport::at_most("spearman_gap_vs_packets", spearman(&counts, &gaps), 0.0),
    ];
    let pass = announce(6, "pretraining benefit", &reports, start.elapsed().as_secs_f64(), 3.0 * 3600.0);
    assert!(pass);
}

#[test]
fn criterion_7_determinism_and_formats() {
    let _serial = serial();
    let start = Instant::now();
    let mut reports = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        chirp: ChirpParams::default(),
        devices: sample_device_profiles(3, 1, 1.0).unwrap(),
        receivers: sample_receiver_profiles(2, 2, 1.0).unwrap(),
        packets_per_pair: 4,
        condition: Condition::preset(ChannelTag::DynamicLos, 25.0).unwrap(),
        seed: 3,
        labeled: true,
    };
    let manifest_path = datasets::generate_corpus(&spec, dir.path()).unwrap();
    let on_disk = std::fs::read(dir.path().join(datasets::BLOB_FILE)).unwrap();
    let manifest = datasets::read_manifest(&manifest_path).unwrap();
    let regenerated = datasets::regenerate_blob(&manifest).unwrap();
    reports.push(OracleReport::at_least("corpus_regeneration_bitwise", (regenerated == on_disk) as u8 as f64, 1.0));

    let store = datasets::load_store(&manifest_path).unwrap();
    let rx1 = store.for_receiver(spec.receivers[0].receiver_id);
    let rx2 = store.for_receiver(spec.receivers[1].receiver_id);
    let cfg = FinetuneConfig {
        width_scale: 0.125,
        max_epochs: 2,
        batch_pairs: 4,
        seed: 8,
        ..FinetuneConfig::default()
    };
    let run = || {
        let out = pipelines::finetune_siamese(&rx1, &rx2, None, &cfg).unwrap();
        let mut model = Classifier::from_checkpoint(&out.checkpoint).unwrap();
        (out.checkpoint, pipelines::evaluate(&mut model, &store).unwrap())
    };
    let (ck_a, report_a) = run();
    let (ck_b, report_b) = run();
    reports.push(OracleReport::at_least(
        "identical_checkpoints",
        (ck_a.to_bytes() == ck_b.to_bytes()) as u8 as f64,
        1.0,
    ));
    reports.push(OracleReport::at_least("identical_eval_reports", (report_a == report_b) as u8 as f64, 1.0));

    let ck_path = dir.path().join("model.ckpt");
    ck_a.save(&ck_path).unwrap();
    let back = Checkpoint::load(&ck_path).unwrap();
    let bytes = std::fs::read(&ck_path).unwrap();
    reports.push(OracleReport::at_least(
        "checkpoint_round_trip_bitwise",
        (back == ck_a && back.to_bytes() == bytes) as u8 as f64,
        1.0,
    ));

    let sig = synthesize_packet(&ChirpParams::default()).unwrap();
    let spec_rep = RepresentationConfig::default().features(&sig).unwrap();
    let cis_rep = RepresentationConfig {
        kind: representation::FeatureKind::Cis,
        ..RepresentationConfig::default()
    }
    .features(&sig)
    .unwrap();
    reports.push(OracleReport::at_least(
        "cis_frames_is_spectrogram_frames_minus_one",
        (cis_rep.n_frames + 1 == spec_rep.n_frames && cis_rep.n_bins == spec_rep.n_bins) as u8 as f64,
        1.0,
    ));
    let pass = announce(7, "determinism and formats", &reports, start.elapsed().as_secs_f64(), 600.0);
    assert!(pass);
}

#[test]
fn criterion_8_chance_level() {
    let _serial = serial();
    let start = Instant::now();
    let bench = BenchmarkConfig::default();
    let test = synthesize_store(&bench.test_spec().unwrap()).unwrap();
    let chirp = ChirpParams::default();
    let mut model = Classifier::untrained(
        10,
        chirp.packet_len(),
        chirp.sample_rate_hz,
        RepresentationConfig::default(),
        0.25,
        seed::derive(bench.seed, &[0x8]),
    )
    .unwrap();
    let report = pipelines::evaluate(&mut model, &test).unwrap();
    let reports = vec![
        OracleReport::at_least("test_packets", report.total() as f64, 1000.0),
        OracleReport::at_most("untrained_accuracy_minus_0.1_abs", (report.overall_accuracy - 0.1).abs(), 0.05),
    ];
    detail(format!("untrained accuracy {}", report.overall_accuracy));
    let pass = announce(8, "chance-level control", &reports, start.elapsed().as_secs_f64(), 600.0);
    assert!(pass);
}
