//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measured runtime (visible under
//! `cargo test --test acceptance -- --show-output`). Each criterion also
//! asserts its own wall-clock budget.

use std::panic::AssertUnwindSafe;
use std::process::Command;
use std::time::Instant;

use melpatch::config::CliConfig;
use melpatch::pipeline::{self, Model};
use melpatch::synth::{synthesize, SynthSpec, SynthStyle};
use melpatch_core::autoencoder::{forward, grad_check, AutoencoderParams, GradCheckConfig};
use melpatch_core::bitstream::{bitrate_bps, pack, unpack, BitrateSpec, CodecHeader, StreamEncoder};
use melpatch_core::frontend::{mel_spectrogram, FrontendConfig, MelSpectrogram, Waveform};
use melpatch_core::metrics::{mcd, mcd_from_cepstra, stoi};
use melpatch_core::patch::{patchify, PatchGridSpec, VectorGrid};
use melpatch_core::vq::{kmeans_fit, quantize, vq_loss, Codebook, TokenGrid};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn criterion(number: u32, name: &str, budget_s: f64, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) if elapsed <= budget_s => {
            println!(
                "acceptance criterion {number} [{name}]: PASS ({elapsed:.3} s, budget {budget_s} s)"
            );
        }
        Ok(()) => {
            println!(
                "acceptance criterion {number} [{name}]: FAIL (over budget: {elapsed:.3} s > {budget_s} s)"
            );
            panic!("criterion {number} exceeded its runtime budget");
        }
        Err(cause) => {
            println!("acceptance criterion {number} [{name}]: FAIL ({elapsed:.3} s)");
            std::panic::resume_unwind(cause);
        }
    }
}

fn speech(seed: u64, secs: f64) -> Waveform {
    synthesize(&SynthSpec {
        style: SynthStyle::Speech,
        sample_rate: 16_000,
        duration_s: secs,
        seed,
    })
    .unwrap()
}

#[test]
fn c1_bitrate_identity() {
    criterion(1, "bitrate identity", 0.001, || {
        let bps = bitrate_bps(&BitrateSpec::default()).unwrap();
        assert_eq!(bps, 7500.0, "defaults must give exactly 7500 bps");
        let k1024 = bitrate_bps(&BitrateSpec { k: 1024, ..Default::default() }).unwrap();
        assert_eq!(k1024, 6250.0);
        let dt8 = bitrate_bps(&BitrateSpec { downsample_t: 8, ..Default::default() }).unwrap();
        assert_eq!(dt8, 3750.0);
    });
}

#[test]
fn c2_grid_geometry() {
    criterion(2, "grid geometry", 60.0, || {
        // formula side: 31.25 rows/s x 20 cols = 625 tokens/s
        let spec = BitrateSpec::default();
        let rows_per_s = spec.sample_rate as f64 / (spec.hop * spec.downsample_t) as f64;
        let cols = spec.n_mels / spec.downsample_f;
        assert_eq!(rows_per_s, 31.25);
        assert_eq!(cols, 20);
        assert_eq!(rows_per_s * cols as f64, 625.0);

        // end-to-end side: a 10 s file through the real binary
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let config_path = dir.path().join("config.toml");
        std::fs::write(
            &config_path,
            "[quantizer]\nk = 64\nidentity_mode = true\nkmeans_iters = 4\n\
             [train]\ntotal_steps = 2\nwarmup_steps = 1\n",
        )
        .unwrap();
        let bin = env!("CARGO_BIN_EXE_melpatch");
        let run = |args: &[&str]| {
            let out = Command::new(bin).args(args).output().unwrap();
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            String::from_utf8_lossy(&out.stdout).into_owned()
        };
        run(&[
            "synth-corpus",
            corpus.to_str().unwrap(),
            "--count",
            "1",
            "--duration",
            "10.0",
            "--config",
            config_path.to_str().unwrap(),
        ]);
        let model = dir.path().join("model.mpck");
        run(&[
            "train",
            corpus.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
        ]);
        let stream = dir.path().join("utt.mpc");
        let text = run(&[
            "encode",
            model.to_str().unwrap(),
            corpus.join("utt_000.wav").to_str().unwrap(),
            stream.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
        ]);

        let bytes = std::fs::read(&stream).unwrap();
        let (header, tokens) = unpack(&bytes).unwrap();
        assert_eq!(header.original_t, 1251, "10 s at hop 128, center-padded");
        let n_tokens = tokens.rows() * tokens.cols();
        let tokens_per_row = tokens.cols();
        assert_eq!(tokens_per_row, 20);
        assert!(
            n_tokens >= 6250 && n_tokens <= 6250 + tokens_per_row,
            "10 s must carry 6250 tokens plus at most one padded row, got {n_tokens}"
        );
        assert!(text.contains("tokens"), "encode must report the count: {text}");
    });
}

#[test]
fn c3_bitstream_soundness() {
    criterion(3, "bitstream soundness", 10.0, || {
        // 1000+ randomized header/grid round trips
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for case in 0..1200 {
            let patch_t = rng.gen_range(1..=6u16);
            let patch_f = rng.gen_range(1..=6u16);
            let cols = rng.gen_range(1..=24u16);
            let k = rng.gen_range(1..=100_000u32);
            let original_t = rng.gen_range(0..=600u32);
            let header = CodecHeader {
                sample_rate: rng.gen_range(1..=48_000),
                n_mels: patch_f * cols,
                hop: rng.gen_range(1..=512),
                win_length: rng.gen_range(1..=2048),
                patch_t,
                patch_f,
                k,
                codebook_digest: rng.gen::<u64>().to_le_bytes(),
                original_t,
            };
            let (rows, cols) = header.grid_shape();
            let indices: Vec<u32> =
                (0..rows * cols).map(|_| rng.gen_range(0..k)).collect();
            let grid =
                TokenGrid::new(rows, cols, original_t as usize, indices).unwrap();
            let bytes = pack(&grid, &header).unwrap();
            let (h2, g2) = unpack(&bytes).unwrap();
            assert_eq!(h2, header, "case {case}");
            assert_eq!(g2, grid, "case {case}");
        }

        // golden payload: tokens [1, 2] at K=4096 pack to 00 10 02
        let header = CodecHeader {
            sample_rate: 16_000,
            n_mels: 8,
            hop: 128,
            win_length: 512,
            patch_t: 1,
            patch_f: 4,
            k: 4096,
            codebook_digest: [0; 8],
            original_t: 1,
        };
        let grid = TokenGrid::new(1, 2, 1, vec![1, 2]).unwrap();
        let bytes = pack(&grid, &header).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0x00, 0x10, 0x02]);

        // streaming vs batch over random lengths, including non-multiples of 4
        let cfg = FrontendConfig { n_mels: 20, ..Default::default() };
        let spec = PatchGridSpec { patch_t: 4, patch_f: 4, pad_value: cfg.log_floor.ln() };
        let params = AutoencoderParams::identity(spec.dim()).unwrap();
        let entries: Vec<f64> =
            (0..37 * 16).map(|_| rng.gen_range(-12.0..2.0)).collect();
        let codebook = Codebook::from_flat(entries, 37, 16).unwrap();
        for frames in [1usize, 2, 3, 4, 5, 7, 9, 12, 39, 101, 230, 257] {
            let values: Vec<f64> =
                (0..frames * 20).map(|_| rng.gen_range(-12.0..2.0)).collect();
            let mel =
                MelSpectrogram::from_values(values, frames, 20, cfg).unwrap();

            let patches = patchify(&mel, &spec).unwrap();
            let batch_tokens = quantize(&codebook, patches.vectors()).unwrap();

            let mut enc = StreamEncoder::new(&params, &codebook, spec, 20).unwrap();
            let mut streamed = Vec::new();
            for f in 0..frames {
                if let Some(row) = enc.push_frame(mel.row(f)).unwrap() {
                    streamed.extend(row);
                }
            }
            if let Some(row) = enc.flush().unwrap() {
                streamed.extend(row);
            }
            assert_eq!(
                streamed,
                batch_tokens.indices(),
                "streaming and batch disagree at {frames} frames"
            );
            let stream_grid = TokenGrid::new(
                batch_tokens.rows(),
                batch_tokens.cols(),
                frames,
                streamed,
            )
            .unwrap();
            let header = CodecHeader {
                sample_rate: 16_000,
                n_mels: 20,
                hop: 128,
                win_length: 512,
                patch_t: 4,
                patch_f: 4,
                k: 37,
                codebook_digest: [7; 8],
                original_t: frames as u32,
            };
            assert_eq!(
                pack(&stream_grid, &header).unwrap(),
                pack(&batch_tokens, &header).unwrap(),
                "byte-level mismatch at {frames} frames"
            );
        }
    });
}

#[test]
fn c4_quantizer_correctness() {
    criterion(4, "quantizer correctness", 30.0, || {
        // independently coded nearest-neighbor oracle: backward scan with <=
        // keeps the lowest index among ties, mirroring the forward strict <
        fn oracle_nearest(cb: &Codebook, v: &[f64]) -> usize {
            let mut best = cb.k() - 1;
            let mut best_d = f64::INFINITY;
            for i in (0..cb.k()).rev() {
                let d: f64 = cb
                    .entry(i)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d <= best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        }

        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for case in 0..100 {
            let dim = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=64);
            let entries: Vec<f64> =
                (0..k * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let cb = Codebook::from_flat(entries, k, dim).unwrap();
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let data: Vec<f64> =
                (0..rows * cols * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let grid = VectorGrid::new(rows, cols, dim, rows * 4, data).unwrap();
            let tokens = quantize(&cb, &grid).unwrap();
            for r in 0..rows {
                for c in 0..cols {
                    let idx = tokens.indices()[r * cols + c] as usize;
                    assert_eq!(
                        idx,
                        oracle_nearest(&cb, grid.vector(r, c)),
                        "case {case} ({r},{c})"
                    );
                }
            }
        }

        // k-means inertia is monotone in the iteration count at a fixed seed
        let samples: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for iters in [1, 2, 4, 8, 16] {
            let cb = kmeans_fit(&samples, 4, 12, iters, 7).unwrap();
            let inertia = melpatch_core::vq::inertia(&cb, &samples, 4).unwrap();
            assert!(
                inertia <= last + 1e-12,
                "inertia rose from {last} to {inertia} at {iters} iters"
            );
            last = inertia;
        }

        // exact ties resolve to the lowest index, deterministically
        let cb = Codebook::from_flat(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 3, 2).unwrap();
        let grid = VectorGrid::new(1, 1, 2, 1, vec![1.0, 1.0]).unwrap();
        for _ in 0..3 {
            assert_eq!(quantize(&cb, &grid).unwrap().indices(), &[0]);
        }
    });
}

#[test]
fn c5_loss_and_gradient_fidelity() {
    criterion(5, "loss/gradient fidelity", 60.0, || {
        // closed forms: every latent off by exactly 1 in one coordinate
        let z = VectorGrid::new(1, 2, 2, 1, vec![0.0, 0.0, 3.0, -1.0]).unwrap();
        let e = VectorGrid::new(1, 2, 2, 1, vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let terms = vq_loss(&z, &e, 0.25).unwrap();
        assert_eq!(terms.codebook_term, 1.0, "mean of squared distances 1 and 1");
        assert_eq!(terms.commitment_term, 0.25);
        assert_eq!(terms.total(), 1.25);
        let zero = vq_loss(&z, &z, 0.25).unwrap();
        assert_eq!(zero.codebook_term, 0.0);
        assert_eq!(zero.commitment_term, 0.0);

        // finite differences, identity mode: only codebook coordinates
        let cfg = FrontendConfig { n_mels: 8, ..Default::default() };
        let spec = PatchGridSpec { patch_t: 4, patch_f: 4, pad_value: cfg.log_floor.ln() };
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mel = |frames: usize, rng: &mut ChaCha8Rng| {
            let values: Vec<f64> =
                (0..frames * 8).map(|_| rng.gen_range(-11.0..1.0)).collect();
            MelSpectrogram::from_values(values, frames, 8, cfg).unwrap()
        };
        let m1 = mel(9, &mut rng);
        let m2 = mel(6, &mut rng);
        let batch = [&m1, &m2];

        let mut params = AutoencoderParams::identity(16).unwrap();
        let entries: Vec<f64> = (0..7 * 16).map(|_| rng.gen_range(-11.0..1.0)).collect();
        let mut cb = Codebook::from_flat(entries, 7, 16).unwrap();
        let err = grad_check(
            &mut params,
            &mut cb,
            &batch,
            &spec,
            0.25,
            &GradCheckConfig { probes: 80, h: 1e-4, seed: 1 },
        )
        .unwrap();
        assert!(err < 1e-4, "identity-mode max relative error {err}");

        // full toy network
        let mut params = AutoencoderParams::new_random(16, 8, 4, 9).unwrap();
        let entries: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cb = Codebook::from_flat(entries, 5, 4).unwrap();
        let err = grad_check(
            &mut params,
            &mut cb,
            &batch,
            &spec,
            0.25,
            &GradCheckConfig { probes: 120, h: 1e-4, seed: 2 },
        )
        .unwrap();
        assert!(err < 1e-3, "full-mode max relative error {err}");

        // LossReport.total decomposes exactly
        let params = AutoencoderParams::new_random(16, 8, 4, 10).unwrap();
        let entries: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cb = Codebook::from_flat(entries, 6, 4).unwrap();
        let (_, _, report) = forward(&params, &cb, &m1, &spec, 0.25).unwrap();
        assert_eq!(
            report.total,
            report.recon_l1 + report.codebook_loss + report.commitment_loss,
            "total must be the exact sum of its parts"
        );
        assert!(report.total.is_finite() && report.recon_l1 >= 0.0);
    });
}

#[test]
fn c6_training_descent() {
    criterion(6, "desk-scale training descent", 300.0, || {
        let dir = tempfile::tempdir().unwrap();

        // part 1: 200 straight-through steps on speech-like data
        let corpus = dir.path().join("speech");
        melpatch::synth::write_corpus(&corpus, SynthStyle::Speech, 16_000, 2.0, 8, 5)
            .unwrap();
        let mut cfg = CliConfig::default();
        cfg.seed = 5;
        cfg.quantizer.k = 64;
        cfg.quantizer.identity_mode = false;
        cfg.quantizer.latent_dim = 8;
        cfg.quantizer.hidden_dim = 32;
        cfg.quantizer.kmeans_iters = 8;
        cfg.train.total_steps = 200;
        cfg.train.warmup_steps = 20;
        cfg.train.lr_peak = 3e-3;
        cfg.train.batch_size = 4;
        cfg.validate().unwrap();
        let out = pipeline::train(&cfg, &corpus, &dir.path().join("m.mpck"), false).unwrap();
        let first = out.history.first().unwrap().1.total;
        let last = out.history.last().unwrap().1.total;
        assert!(
            last < first,
            "200 steps must reduce the total loss: start {first}, end {last}"
        );

        // part 2: K=2 on two-cluster data uses both codes
        let corpus2 = dir.path().join("clusters");
        melpatch::synth::write_corpus(&corpus2, SynthStyle::Alternating, 16_000, 4.0, 2, 9)
            .unwrap();
        let mut cfg2 = CliConfig::default();
        cfg2.seed = 9;
        cfg2.quantizer.k = 2;
        cfg2.quantizer.identity_mode = true;
        cfg2.quantizer.latent_dim = 16;
        cfg2.quantizer.kmeans_iters = 10;
        cfg2.train.total_steps = 40;
        cfg2.train.warmup_steps = 4;
        cfg2.train.lr_peak = 1e-3;
        cfg2.train.batch_size = 2;
        cfg2.validate().unwrap();
        let out2 = pipeline::train(&cfg2, &corpus2, &dir.path().join("m2.mpck"), false).unwrap();
        assert!(
            out2.final_perplexity > 1.9,
            "two-cluster data must use both codes: perplexity {}",
            out2.final_perplexity
        );
    });
}

#[test]
fn c7_metric_sanity() {
    criterion(7, "metric sanity", 60.0, || {
        let cfg = FrontendConfig::default();
        let a = speech(21, 3.0);
        assert_eq!(mcd(&a, &a, &cfg).unwrap(), 0.0, "mcd of a signal with itself");

        // closed form: one coefficient off by one in every frame
        let frames = 40;
        let ca: Vec<Vec<f64>> = (0..frames).map(|_| vec![0.0; 13]).collect();
        let mut cb = ca.clone();
        for f in cb.iter_mut() {
            f[4] = 1.0;
        }
        let expected = 10.0 / std::f64::consts::LN_10 * 2.0f64.sqrt();
        let got = mcd_from_cepstra(&ca, &cb).unwrap();
        assert!(
            (got - expected).abs() < 1e-9,
            "constant unit offset: got {got}, want {expected}"
        );

        assert!((stoi(&a, &a).unwrap() - 1.0).abs() < 1e-6, "stoi identity");

        // strictly decreasing intelligibility as the SNR drops
        let rms =
            (a.samples().iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let noise_rms =
            (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
        let mut scores = Vec::new();
        for snr_db in [20.0, 0.0, -20.0] {
            let gain = rms / noise_rms * 10f64.powf(-snr_db / 20.0);
            let noisy: Vec<f64> = a
                .samples()
                .iter()
                .zip(&noise)
                .map(|(s, n)| s + gain * n)
                .collect();
            let deg = Waveform::new(noisy, a.sample_rate()).unwrap();
            scores.push(stoi(&a, &deg).unwrap());
        }
        assert!(
            scores[0] > scores[1] && scores[1] > scores[2],
            "stoi must fall as noise rises: {scores:?}"
        );
    });
}

#[test]
fn c8_end_to_end_better_than_silence() {
    criterion(8, "end-to-end better than silence", 120.0, || {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        melpatch::synth::write_corpus(&corpus, SynthStyle::Speech, 16_000, 3.0, 3, 31)
            .unwrap();

        let mut cfg = CliConfig::default();
        cfg.seed = 31;
        cfg.quantizer.k = 256;
        cfg.quantizer.identity_mode = true;
        cfg.quantizer.latent_dim = 16;
        cfg.quantizer.kmeans_iters = 10;
        cfg.train.total_steps = 5;
        cfg.train.warmup_steps = 1;
        cfg.train.batch_size = 3;
        cfg.validate().unwrap();
        let model_path = dir.path().join("model.mpck");
        pipeline::train(&cfg, &corpus, &model_path, false).unwrap();
        let model = Model::load(&model_path).unwrap();

        let fc = cfg.frontend_config();
        let pad = fc.log_floor.ln();
        let mel_l1 = |x: &MelSpectrogram, y: &MelSpectrogram| -> f64 {
            let frames = x.frames().min(y.frames());
            let mut acc = 0.0;
            for f in 0..frames {
                for b in 0..x.bands() {
                    acc += (x.value(f, b) - y.value(f, b)).abs();
                }
            }
            acc / (frames * x.bands()) as f64
        };

        for i in 0..3 {
            let path = corpus.join(format!("utt_{i:03}.wav"));
            let original = melpatch::wav::read_wav(&path).unwrap();
            let (bytes, enc) = pipeline::encode_waveform(&model, &cfg, &original).unwrap();
            assert!(
                enc.elapsed_s / enc.duration_s < 1.0,
                "encode RTF {} must beat real time",
                enc.elapsed_s / enc.duration_s
            );
            let (recon, _, _) = pipeline::decode_bytes(&model, &cfg, &bytes).unwrap();

            let mel_orig = mel_spectrogram(&original, &fc).unwrap();
            let mel_recon = mel_spectrogram(&recon, &fc).unwrap();
            let err_recon = mel_l1(&mel_orig, &mel_recon);
            let err_silence = {
                let mut acc = 0.0;
                for v in mel_orig.values() {
                    acc += (v - pad).abs();
                }
                acc / mel_orig.values().len() as f64
            };
            assert!(
                err_recon < err_silence,
                "utterance {i}: reconstruction L1 {err_recon} must beat silence {err_silence}"
            );

            // idempotence rate is reported, not asserted: tokens from the
            // decoded audio vs tokens from the original
            let (bytes2, _) = pipeline::encode_waveform(&model, &cfg, &recon).unwrap();
            let (_, t1) = unpack(&bytes).unwrap();
            let (_, t2) = unpack(&bytes2).unwrap();
            let n = t1.indices().len().min(t2.indices().len());
            let agree = t1.indices()[..n]
                .iter()
                .zip(&t2.indices()[..n])
                .filter(|(a, b)| a == b)
                .count();
            println!(
                "utterance {i}: token agreement after re-encode {:.1}% ({agree}/{n})",
                100.0 * agree as f64 / n as f64
            );
        }

        // stream self-description survives the full path
        let w = melpatch::wav::read_wav(&corpus.join("utt_000.wav")).unwrap();
        let (bytes, _) = pipeline::encode_waveform(&model, &cfg, &w).unwrap();
        let report = pipeline::info(&bytes).unwrap();
        assert_eq!(report.cols, 20);
        assert_eq!(report.header.k, 256);
    });
}
