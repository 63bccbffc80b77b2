//! End-to-end plumbing between files and the codec library: model
//! checkpoints, encode/decode with timing, the training loop, corpus
//! evaluation, and stream inspection.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use melpatch_core::autoencoder::{
    forward, train_step, AdamState, AutoencoderParams, LossReport,
};
use melpatch_core::bitstream::{
    bitrate_bps, pack, unpack, BitrateSpec, CodecHeader, HEADER_LEN,
};
use melpatch_core::checkpoint::{digest8, parse_checkpoint, serialize_checkpoint};
use melpatch_core::frontend::{
    griffin_lim, mel_spectrogram, resample, MelSpectrogram, Waveform,
};
use melpatch_core::metrics::{mcd, stoi};
use melpatch_core::patch::patchify;
use melpatch_core::vq::{kmeans_fit, quantize, utilization, Codebook, TokenGrid};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::wav;

/// A parsed checkpoint plus the digest that streams must match.
///
/// Encoding always quantizes against the parsed (f32-rounded) entries, so
/// encoder and decoder agree bit-for-bit even across a save/load cycle.
pub struct Model {
    pub params: AutoencoderParams,
    pub codebook: Codebook,
    pub digest: [u8; 8],
}

impl Model {
    pub fn load(path: &Path) -> Result<Model> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
        let digest = digest8(&bytes);
        let (codebook, projection) = parse_checkpoint(&bytes)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
        let params = match projection {
            Some(p) => p,
            None => AutoencoderParams::identity(codebook.dim())?,
        };
        Ok(Model { params, codebook, digest })
    }

    /// Serialize to `path`; returns the digest the file will carry.
    pub fn save(path: &Path, codebook: &Codebook, params: &AutoencoderParams) -> Result<[u8; 8]> {
        let projection = if params.is_identity() { None } else { Some(params) };
        let bytes = serialize_checkpoint(codebook, projection)?;
        let digest = digest8(&bytes);
        fs::write(path, &bytes)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
        Ok(digest)
    }

    /// The model must agree with the config it is used under.
    pub fn check_against(&self, cfg: &CliConfig) -> Result<()> {
        let spec = cfg.grid_spec();
        if self.params.input_dim() != spec.dim() {
            return Err(CliError::Usage(format!(
                "codebook/config mismatch: model expects {}-dim patches, config grid is {}x{}",
                self.params.input_dim(),
                spec.patch_t,
                spec.patch_f
            )));
        }
        if self.codebook.k() != cfg.quantizer.k {
            return Err(CliError::Usage(format!(
                "codebook/config mismatch: model has K={}, config says K={}",
                self.codebook.k(),
                cfg.quantizer.k
            )));
        }
        Ok(())
    }
}

fn stream_header(cfg: &CliConfig, model: &Model, original_t: usize) -> Result<CodecHeader> {
    let f = &cfg.frontend;
    let fits_u16 = |name: &str, v: usize| -> Result<u16> {
        u16::try_from(v)
            .map_err(|_| CliError::Usage(format!("{name} {v} does not fit the stream header")))
    };
    Ok(CodecHeader {
        sample_rate: f.sample_rate,
        n_mels: fits_u16("n_mels", f.n_mels)?,
        hop: fits_u16("hop", f.hop)?,
        win_length: fits_u16("win_length", f.win_length)?,
        patch_t: fits_u16("patch_t", cfg.grid.patch_t)?,
        patch_f: fits_u16("patch_f", cfg.grid.patch_f)?,
        k: model.codebook.k() as u32,
        codebook_digest: model.digest,
        original_t: u32::try_from(original_t)
            .map_err(|_| CliError::Data("input too long for the stream header".into()))?,
    })
}

#[derive(Debug, Clone)]
pub struct EncodeOutcome {
    pub tokens: usize,
    pub rows: usize,
    pub cols: usize,
    pub stream_bytes: usize,
    /// Input duration at the codec sample rate, seconds.
    pub duration_s: f64,
    /// Wall-clock time for resample + mel + quantize + pack.
    pub elapsed_s: f64,
    pub measured_bps: f64,
    pub tokens_per_s: f64,
}

/// Encode an in-memory waveform to stream bytes.
pub fn encode_waveform(
    model: &Model,
    cfg: &CliConfig,
    input: &Waveform,
) -> Result<(Vec<u8>, EncodeOutcome)> {
    model.check_against(cfg)?;
    let fc = cfg.frontend_config();
    let spec = cfg.grid_spec();
    let start = Instant::now();
    let w;
    let at_rate = if input.sample_rate() == fc.sample_rate {
        input
    } else {
        w = resample(input, fc.sample_rate)?;
        &w
    };
    let mel = mel_spectrogram(at_rate, &fc)?;
    let patches = patchify(&mel, &spec)?;
    let latents = model.params.encode_grid(&patches)?;
    let tokens = quantize(&model.codebook, &latents)?;
    let header = stream_header(cfg, model, mel.frames())?;
    let bytes = pack(&tokens, &header)?;
    let elapsed_s = start.elapsed().as_secs_f64();
    let duration_s = at_rate.duration_secs();
    let n_tokens = tokens.rows() * tokens.cols();
    let outcome = EncodeOutcome {
        tokens: n_tokens,
        rows: tokens.rows(),
        cols: tokens.cols(),
        stream_bytes: bytes.len(),
        duration_s,
        elapsed_s,
        measured_bps: if duration_s > 0.0 { bytes.len() as f64 * 8.0 / duration_s } else { 0.0 },
        tokens_per_s: if duration_s > 0.0 { n_tokens as f64 / duration_s } else { 0.0 },
    };
    Ok((bytes, outcome))
}

pub fn encode_file(
    model: &Model,
    cfg: &CliConfig,
    input: &Path,
    output: &Path,
) -> Result<EncodeOutcome> {
    let w = wav::read_wav(input)?;
    let (bytes, outcome) = encode_waveform(model, cfg, &w)?;
    fs::write(output, &bytes)
        .map_err(|e| CliError::Data(format!("{}: {}", output.display(), e)))?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    /// Reconstructed duration, seconds.
    pub duration_s: f64,
    /// Wall-clock time for dequantize + decode + phase reconstruction.
    pub elapsed_s: f64,
    pub frames: usize,
    pub samples: usize,
}

fn check_header(header: &CodecHeader, cfg: &CliConfig, model: &Model) -> Result<()> {
    if header.codebook_digest != model.digest {
        return Err(CliError::Data(format!(
            "codebook digest mismatch: stream was encoded with {:02x?}, model file is {:02x?}",
            header.codebook_digest, model.digest
        )));
    }
    let f = &cfg.frontend;
    let same = header.sample_rate == f.sample_rate
        && header.n_mels as usize == f.n_mels
        && header.hop as usize == f.hop
        && header.win_length as usize == f.win_length
        && header.patch_t as usize == cfg.grid.patch_t
        && header.patch_f as usize == cfg.grid.patch_f
        && header.k as usize == model.codebook.k();
    if !same {
        return Err(CliError::Data(
            "stream header disagrees with the active config; decode needs the \
             settings the stream was produced with"
                .into(),
        ));
    }
    Ok(())
}

/// Decode stream bytes to a waveform.
pub fn decode_bytes(
    model: &Model,
    cfg: &CliConfig,
    bytes: &[u8],
) -> Result<(Waveform, DecodeOutcome, CodecHeader)> {
    model.check_against(cfg)?;
    let (header, tokens) = unpack(bytes)?;
    check_header(&header, cfg, model)?;
    let fc = cfg.frontend_config();
    let spec = cfg.grid_spec();
    let start = Instant::now();
    let entries = melpatch_core::vq::dequantize(&model.codebook, &tokens)?;
    let decoded = model.params.decode_grid(&entries)?;
    let patches = melpatch_core::patch::PatchSet::from_parts(decoded, fc);
    let mel = melpatch_core::patch::unpatchify(&patches, &spec)?;
    let wave = griffin_lim(&mel, cfg.decode.griffin_lim_iters)?;
    let elapsed_s = start.elapsed().as_secs_f64();
    let outcome = DecodeOutcome {
        duration_s: wave.duration_secs(),
        elapsed_s,
        frames: mel.frames(),
        samples: wave.len(),
    };
    Ok((wave, outcome, header))
}

pub fn decode_file(
    model: &Model,
    cfg: &CliConfig,
    input: &Path,
    output: &Path,
) -> Result<DecodeOutcome> {
    let bytes = fs::read(input)
        .map_err(|e| CliError::Data(format!("{}: {}", input.display(), e)))?;
    let (wave, outcome, _) = decode_bytes(model, cfg, &bytes)?;
    wav::write_wav(output, &wave)?;
    Ok(outcome)
}

/// WAV paths under `dir`, sorted by file name for determinism.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {}", dir.display(), e)))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_corpus(cfg: &CliConfig, dir: &Path) -> Result<Vec<(String, Waveform)>> {
    let paths = list_wavs(dir)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no WAV files in {}", dir.display())));
    }
    let fc = cfg.frontend_config();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let raw = wav::read_wav(&p)?;
        let w = if raw.sample_rate() == fc.sample_rate {
            raw
        } else {
            resample(&raw, fc.sample_rate)?
        };
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((id, w));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct TrainMeta {
    trained_steps: u64,
    corpus_files: usize,
    training_patches: usize,
    final_total: f64,
    final_recon_l1: f64,
    final_perplexity: f64,
    dead_entries: usize,
    config: CliConfig,
}

pub struct TrainOutcome {
    pub steps: u64,
    pub history: Vec<(u64, LossReport, f64)>,
    pub final_perplexity: f64,
    pub dead_entries: usize,
    pub digest: [u8; 8],
    pub checkpoint_path: PathBuf,
    pub loss_csv_path: PathBuf,
    pub meta_path: PathBuf,
}

fn sidecar(base: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{}", base.display(), suffix))
}

/// Fit a codebook (and, unless `identity_mode`, the projection MLP) on the
/// WAVs under `corpus`, then write checkpoint + loss CSV + metadata.
pub fn train(cfg: &CliConfig, corpus: &Path, out: &Path, verbose: bool) -> Result<TrainOutcome> {
    let fc = cfg.frontend_config();
    let spec = cfg.grid_spec();
    let tc = cfg.train_config();
    let q = &cfg.quantizer;

    let mels: Vec<MelSpectrogram> = load_corpus(cfg, corpus)?
        .into_iter()
        .map(|(_, w)| mel_spectrogram(&w, &fc))
        .collect::<melpatch_core::Result<_>>()?;
    let patch_sets: Vec<_> =
        mels.iter().map(|m| patchify(m, &spec)).collect::<melpatch_core::Result<_>>()?;
    let total_patches: usize = patch_sets.iter().map(|p| p.vectors().count()).sum();
    if q.k > total_patches {
        return Err(CliError::Usage(format!(
            "K={} exceeds the {} training patches in the corpus; lower quantizer.k \
             or provide more data",
            q.k, total_patches
        )));
    }

    let mut params = if q.identity_mode {
        AutoencoderParams::identity(spec.dim())?
    } else {
        AutoencoderParams::new_random(spec.dim(), q.hidden_dim, q.latent_dim, cfg.seed)?
    };
    // k-means initialization in the space the quantizer will actually see
    let mut latents = Vec::with_capacity(total_patches * params.latent());
    for p in &patch_sets {
        latents.extend_from_slice(params.encode_grid(p)?.data());
    }
    let mut codebook = kmeans_fit(&latents, params.latent(), q.k, q.kmeans_iters, cfg.seed)?;
    drop(latents);

    let mut opt = AdamState::new(&params, &codebook);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(tc.total_steps as usize);
    let report_every = (tc.total_steps / 10).max(1);
    for step in 0..tc.total_steps {
        let batch: Vec<&MelSpectrogram> = if tc.batch_size >= mels.len() {
            mels.iter().collect()
        } else {
            (0..tc.batch_size).map(|_| &mels[batch_rng.gen_range(0..mels.len())]).collect()
        };
        let report = train_step(&mut params, &mut codebook, &mut opt, &batch, &spec, &tc, step)
            .map_err(CliError::from)?;
        let lr = melpatch_core::autoencoder::lr_schedule(step, &tc);
        if verbose && (step % report_every == 0 || step + 1 == tc.total_steps) {
            eprintln!(
                "step {step}: total {:.6} recon {:.6} lr {:.2e}",
                report.total, report.recon_l1, lr
            );
        }
        history.push((step, report, lr));
    }

    // utilization of the final codebook over the whole corpus
    let mut grids: Vec<TokenGrid> = Vec::with_capacity(mels.len());
    for m in &mels {
        let (_, tokens, _) = forward(&params, &codebook, m, &spec, tc.commitment_beta)?;
        grids.push(tokens);
    }
    let util = utilization(codebook.k(), &grids)?;

    let digest = Model::save(out, &codebook, &params)?;

    let loss_csv_path = sidecar(out, ".loss.csv");
    let mut csv = String::from("step,recon_l1,codebook_loss,commitment_loss,total,lr\n");
    for (step, r, lr) in &history {
        csv.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            r.recon_l1, r.codebook_loss, r.commitment_loss, r.total, lr
        ));
    }
    fs::write(&loss_csv_path, csv)?;

    let last = history.last().map(|(_, r, _)| *r).unwrap_or(LossReport {
        recon_l1: 0.0,
        codebook_loss: 0.0,
        commitment_loss: 0.0,
        total: 0.0,
    });
    let meta = TrainMeta {
        trained_steps: tc.total_steps,
        corpus_files: mels.len(),
        training_patches: total_patches,
        final_total: last.total,
        final_recon_l1: last.recon_l1,
        final_perplexity: util.perplexity,
        dead_entries: util.dead_count,
        config: cfg.clone(),
    };
    let meta_path = sidecar(out, ".meta.toml");
    let meta_text = toml::to_string_pretty(&meta)
        .map_err(|e| CliError::Internal(format!("metadata serialization: {e}")))?;
    fs::write(&meta_path, meta_text)?;

    Ok(TrainOutcome {
        steps: tc.total_steps,
        history,
        final_perplexity: util.perplexity,
        dead_entries: util.dead_count,
        digest,
        checkpoint_path: out.to_path_buf(),
        loss_csv_path,
        meta_path,
    })
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub utterance_id: String,
    pub duration_s: f64,
    pub mcd: f64,
    pub stoi: f64,
    pub rtf_encode: f64,
    pub rtf_decode: f64,
    pub bitrate_bps: f64,
}

pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
    pub failures: Vec<(String, String)>,
}

fn eval_one(model: &Model, cfg: &CliConfig, id: &str, reference: &Waveform) -> Result<EvalRow> {
    let fc = cfg.frontend_config();
    let (bytes, enc) = encode_waveform(model, cfg, reference)?;
    let (deg, dec, _) = decode_bytes(model, cfg, &bytes)?;
    let duration_s = reference.duration_secs();
    let n = reference.len().min(deg.len());
    let ref_t = Waveform::new(reference.samples()[..n].to_vec(), fc.sample_rate)?;
    let deg_t = Waveform::new(deg.samples()[..n].to_vec(), fc.sample_rate)?;
    Ok(EvalRow {
        utterance_id: id.to_string(),
        duration_s,
        mcd: mcd(&ref_t, &deg_t, &fc)?,
        stoi: stoi(&ref_t, &deg_t)?,
        rtf_encode: melpatch_core::metrics::rtf(enc.elapsed_s, duration_s)?,
        rtf_decode: melpatch_core::metrics::rtf(dec.elapsed_s, duration_s)?,
        bitrate_bps: enc.measured_bps,
    })
}

fn eval_bypass(cfg: &CliConfig, id: &str, reference: &Waveform) -> Result<EvalRow> {
    let fc = cfg.frontend_config();
    let start = Instant::now();
    let deg = reference.clone();
    let elapsed = start.elapsed().as_secs_f64().max(1e-9);
    let duration_s = reference.duration_secs();
    let nominal = bitrate_bps(&BitrateSpec {
        sample_rate: fc.sample_rate,
        hop: fc.hop as u32,
        downsample_t: cfg.grid.patch_t as u32,
        downsample_f: cfg.grid.patch_f as u32,
        n_mels: fc.n_mels as u32,
        k: cfg.quantizer.k as u32,
    })?;
    Ok(EvalRow {
        utterance_id: id.to_string(),
        duration_s,
        mcd: mcd(reference, &deg, &fc)?,
        stoi: stoi(reference, &deg)?,
        rtf_encode: melpatch_core::metrics::rtf(elapsed, duration_s)?,
        rtf_decode: melpatch_core::metrics::rtf(elapsed, duration_s)?,
        bitrate_bps: nominal,
    })
}

fn worker_count(n: usize) -> usize {
    match std::env::var("MELPATCH_THREADS") {
        Ok(v) => v.parse::<usize>().unwrap_or(1).clamp(1, n.max(1)),
        Err(_) => 1,
    }
}

/// Full round-trip metrics over a corpus; writes the report CSV.
///
/// Per-utterance failures are collected and reported, the run continues;
/// only a corpus where every utterance fails is an error.
pub fn eval(
    model: Option<&Model>,
    cfg: &CliConfig,
    corpus: &Path,
    report: &Path,
    verbose: bool,
) -> Result<EvalOutcome> {
    let utterances = load_corpus(cfg, corpus)?;
    let n = utterances.len();
    let workers = worker_count(n);

    type Slot = Option<std::result::Result<EvalRow, String>>;
    let mut results: Vec<Slot> = vec![None; n];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let utterances = &utterances;
            handles.push(scope.spawn(move || {
                let mut out: Vec<(usize, std::result::Result<EvalRow, String>)> = Vec::new();
                for i in (w..n).step_by(workers) {
                    let (id, wave) = &utterances[i];
                    let r = match model {
                        Some(m) => eval_one(m, cfg, id, wave),
                        None => eval_bypass(cfg, id, wave),
                    };
                    out.push((i, r.map_err(|e| e.to_string())));
                }
                out
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("eval worker panicked") {
                results[i] = Some(r);
            }
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (slot, (id, _)) in results.into_iter().zip(&utterances) {
        match slot.expect("every utterance gets a result") {
            Ok(row) => {
                if verbose {
                    eprintln!("{}: mcd {:.3} stoi {:.4}", row.utterance_id, row.mcd, row.stoi);
                }
                rows.push(row);
            }
            Err(e) => {
                eprintln!("eval: {id}: {e}");
                failures.push((id.clone(), e));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("every utterance failed evaluation".into()));
    }

    let m = rows.len() as f64;
    let mean = EvalRow {
        utterance_id: "mean".into(),
        duration_s: rows.iter().map(|r| r.duration_s).sum::<f64>() / m,
        mcd: rows.iter().map(|r| r.mcd).sum::<f64>() / m,
        stoi: rows.iter().map(|r| r.stoi).sum::<f64>() / m,
        rtf_encode: rows.iter().map(|r| r.rtf_encode).sum::<f64>() / m,
        rtf_decode: rows.iter().map(|r| r.rtf_decode).sum::<f64>() / m,
        bitrate_bps: rows.iter().map(|r| r.bitrate_bps).sum::<f64>() / m,
    };

    let mut csv =
        String::from("utterance_id,duration_s,mcd,stoi,rtf_encode,rtf_decode,bitrate_bps\n");
    for r in rows.iter().chain(std::iter::once(&mean)) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.utterance_id, r.duration_s, r.mcd, r.stoi, r.rtf_encode, r.rtf_decode, r.bitrate_bps
        ));
    }
    fs::write(report, csv)
        .map_err(|e| CliError::Data(format!("{}: {}", report.display(), e)))?;

    Ok(EvalOutcome { rows, mean, failures })
}

pub struct InfoReport {
    pub header: CodecHeader,
    pub rows: usize,
    pub cols: usize,
    pub tokens: usize,
    pub payload_bytes: usize,
    pub bits_per_token: u32,
    pub bitrate_bps: f64,
    pub distinct_codes: usize,
    pub perplexity: f64,
    /// Most frequent codes as (index, count), descending by count.
    pub top_codes: Vec<(u32, u64)>,
}

/// Parse and summarize a stream without needing the codebook.
pub fn info(bytes: &[u8]) -> Result<InfoReport> {
    let (header, tokens) = unpack(bytes)?;
    let (rows, cols) = header.grid_shape();
    let util = utilization(header.k as usize, std::slice::from_ref(&tokens))?;
    let mut top: Vec<(u32, u64)> = util
        .histogram
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i as u32, c))
        .collect();
    let distinct = top.len();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    top.truncate(5);
    let bps = bitrate_bps(&BitrateSpec {
        sample_rate: header.sample_rate,
        hop: header.hop as u32,
        downsample_t: header.patch_t as u32,
        downsample_f: header.patch_f as u32,
        n_mels: header.n_mels as u32,
        k: header.k,
    })?;
    Ok(InfoReport {
        header,
        rows,
        cols,
        tokens: rows * cols,
        payload_bytes: bytes.len() - HEADER_LEN,
        bits_per_token: melpatch_core::vq::bits_for_k(header.k),
        bitrate_bps: bps,
        distinct_codes: distinct,
        perplexity: util.perplexity,
        top_codes: top,
    })
}

/// Render a bits-per-second figure the way the header docs do: integral
/// values without a decimal point.
pub fn format_bps(bps: f64) -> String {
    if bps.fract() == 0.0 && bps.abs() < 1e15 {
        format!("{}", bps as i64)
    } else {
        format!("{bps:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize, SynthSpec, SynthStyle};
    use melpatch_core::patch::PatchGridSpec;

    fn tiny_cfg(k: usize) -> CliConfig {
        let mut cfg = CliConfig::default();
        cfg.quantizer.k = k;
        cfg.quantizer.identity_mode = true;
        cfg.quantizer.latent_dim = 16;
        cfg.train.total_steps = 4;
        cfg.train.warmup_steps = 1;
        cfg.train.batch_size = 2;
        cfg.quantizer.kmeans_iters = 4;
        cfg
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

    fn fitted_model(cfg: &CliConfig, waves: &[Waveform]) -> Model {
        let fc = cfg.frontend_config();
        let spec = cfg.grid_spec();
        let mut samples = Vec::new();
        for w in waves {
            let m = mel_spectrogram(w, &fc).unwrap();
            samples.extend_from_slice(patchify(&m, &spec).unwrap().vectors().data());
        }
        let cb = kmeans_fit(&samples, spec.dim(), cfg.quantizer.k, 4, 0).unwrap();
        let params = AutoencoderParams::identity(spec.dim()).unwrap();
        let bytes = serialize_checkpoint(&cb, None).unwrap();
        let digest = digest8(&bytes);
        let (cb, _) = parse_checkpoint(&bytes).unwrap();
        Model { params, codebook: cb, digest }
    }

    #[test]
    fn encode_decode_round_trip_preserves_geometry() {
        let cfg = tiny_cfg(32);
        let w = speech(1, 1.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let (bytes, enc) = encode_waveform(&model, &cfg, &w).unwrap();
        // 1 s @ 16 kHz: 126 frames pad to 32 rows of 20 cols
        assert_eq!(enc.rows, 32);
        assert_eq!(enc.cols, 20);
        assert_eq!(enc.tokens, 640);
        let (wave, dec, header) = decode_bytes(&model, &cfg, &bytes).unwrap();
        assert_eq!(header.original_t, 126);
        assert_eq!(dec.frames, 126);
        // (frames - 1) * hop samples back
        assert_eq!(wave.len(), 125 * 128);
        assert!((dec.duration_s - 1.0).abs() < 128.0 / 16_000.0 + 1e-9);
    }

    #[test]
    fn decode_rejects_wrong_digest() {
        let cfg = tiny_cfg(32);
        let w = speech(2, 0.5);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let (bytes, _) = encode_waveform(&model, &cfg, &w).unwrap();
        let mut other = fitted_model(&cfg, std::slice::from_ref(&w));
        other.digest[0] ^= 0xFF;
        let err = decode_bytes(&other, &cfg, &bytes).unwrap_err();
        assert!(err.to_string().contains("digest"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn model_config_mismatch_is_loud() {
        let cfg = tiny_cfg(32);
        let w = speech(3, 0.5);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let mut wrong_k = cfg.clone();
        wrong_k.quantizer.k = 64;
        let err = encode_waveform(&model, &wrong_k, &w).unwrap_err();
        assert!(err.to_string().contains("K="));
        let mut wrong_grid = tiny_cfg(32);
        wrong_grid.grid.patch_t = 2;
        wrong_grid.quantizer.identity_mode = false; // keep validate() happy
        let err = encode_waveform(&model, &wrong_grid, &w).unwrap_err();
        assert!(err.to_string().contains("mismatch"));
    }

    #[test]
    fn encoder_resamples_foreign_rates() {
        let cfg = tiny_cfg(16);
        let train_wave = speech(4, 1.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&train_wave));
        let w8k = synthesize(&SynthSpec {
            style: SynthStyle::Speech,
            sample_rate: 8_000,
            duration_s: 1.0,
            seed: 4,
        })
        .unwrap();
        let (_, enc) = encode_waveform(&model, &cfg, &w8k).unwrap();
        // 8000 samples upsample to 16000 -> 126 frames -> 32 rows
        assert_eq!(enc.rows, 32);
        assert!((enc.duration_s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn info_summarizes_a_stream() {
        let cfg = tiny_cfg(32);
        let w = speech(5, 1.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let (bytes, enc) = encode_waveform(&model, &cfg, &w).unwrap();
        let report = info(&bytes).unwrap();
        assert_eq!(report.rows, enc.rows);
        assert_eq!(report.cols, 20);
        assert_eq!(report.bits_per_token, 5);
        assert!(report.distinct_codes >= 2);
        assert!(report.perplexity >= 1.0);
        let total: u64 = report.top_codes.iter().map(|t| t.1).sum();
        assert!(total as usize <= report.tokens);
        // defaults except K: 31.25 rows/s * 20 * 5 bits
        assert!((report.bitrate_bps - 3125.0).abs() < 1e-12);
    }

    #[test]
    fn format_bps_prints_integers_bare() {
        assert_eq!(format_bps(7500.0), "7500");
        assert_eq!(format_bps(6250.0), "6250");
        assert_eq!(format_bps(1234.5), "1234.500");
    }

    #[test]
    fn measured_bps_converges_to_nominal_within_1pct_at_60s() {
        let cfg = tiny_cfg(32);
        let w = speech(8, 60.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let (_, enc) = encode_waveform(&model, &cfg, &w).unwrap();
        let nominal = bitrate_bps(&BitrateSpec {
            k: 32,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(nominal, 3125.0);
        let rel = (enc.measured_bps - nominal).abs() / nominal;
        assert!(
            rel < 0.01,
            "measured {} vs nominal {nominal}: {:.3}% off",
            enc.measured_bps,
            100.0 * rel
        );
    }

    #[test]
    fn one_frame_input_pads_to_a_single_row() {
        let cfg = tiny_cfg(16);
        let train_wave = speech(9, 1.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&train_wave));
        // 64 samples < one hop: a single center-padded frame
        let w = Waveform::new(vec![0.01; 64], 16_000).unwrap();
        let (bytes, enc) = encode_waveform(&model, &cfg, &w).unwrap();
        assert_eq!(enc.rows, 1);
        assert_eq!(enc.cols, 20);
        let (header, _) = unpack(&bytes).unwrap();
        assert_eq!(header.original_t, 1);
    }

    #[test]
    fn decode_duration_is_within_one_hop_of_the_token_count() {
        let cfg = tiny_cfg(16);
        let train_wave = speech(10, 1.5);
        let model = fitted_model(&cfg, std::slice::from_ref(&train_wave));
        // 15_900 samples give exactly 125 frames at hop 128
        let w = Waveform::new(train_wave.samples()[..15_900].to_vec(), 16_000).unwrap();
        let (bytes, _) = encode_waveform(&model, &cfg, &w).unwrap();
        let (wave, dec, header) = decode_bytes(&model, &cfg, &bytes).unwrap();
        assert_eq!(header.original_t, 125);
        assert_eq!(wave.len(), 124 * 128);
        let token_span_s = 125.0 * 128.0 / 16_000.0;
        assert!((dec.duration_s - token_span_s).abs() <= 128.0 / 16_000.0 + 1e-12);
    }

    #[test]
    fn tampered_payload_bit_is_contained() {
        // K=20 leaves 5-bit values 20..=31 unused, so bit flips can land
        // out of range; K a power of two could never reject
        let cfg = tiny_cfg(20);
        let w = speech(11, 1.0);
        let model = fitted_model(&cfg, std::slice::from_ref(&w));
        let (bytes, _) = encode_waveform(&model, &cfg, &w).unwrap();
        // flip the top bit of 40 payload bytes, one at a time: each either
        // decodes (index still in range) or errors; never a panic
        let mut decoded = 0usize;
        let mut rejected = 0usize;
        for pos in HEADER_LEN..bytes.len().min(HEADER_LEN + 40) {
            let mut tampered = bytes.clone();
            tampered[pos] ^= 0x80;
            match decode_bytes(&model, &cfg, &tampered) {
                Ok(_) => decoded += 1,
                Err(e) => {
                    rejected += 1;
                    let msg = e.to_string();
                    assert!(
                        msg.contains("index") || msg.contains("range"),
                        "unexpected failure mode: {msg}"
                    );
                }
            }
        }
        assert_eq!(decoded + rejected, 40);
        assert!(decoded > 0, "in-range corruption should decode");
        assert!(rejected > 0, "out-of-range corruption should be rejected");
    }

    #[test]
    fn patch_pad_value_tracks_log_floor() {
        let mut cfg = CliConfig::default();
        cfg.frontend.log_floor = 1e-3;
        let spec: PatchGridSpec = cfg.grid_spec();
        assert!((spec.pad_value - (1e-3f64).ln()).abs() < 1e-15);
    }
}
