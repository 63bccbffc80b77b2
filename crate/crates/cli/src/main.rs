use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use melpatch::config::CliConfig;
use melpatch::error::{CliError, Result};
use melpatch::pipeline::{self, Model};
use melpatch::synth::{self, SynthStyle};
use melpatch_core::bitstream::{bitrate_bps, BitrateSpec};

#[derive(Parser)]
#[command(
    name = "melpatch",
    version,
    about = "Patch-based mel spectrogram speech codec: train, encode, decode, evaluate"
)]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Progress chatter on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a codebook (and projection, unless identity_mode) on a corpus of WAVs.
    Train {
        /// Directory containing training WAVs.
        corpus: PathBuf,
        /// Output checkpoint path; sidecars get .loss.csv / .meta.toml suffixes.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Encode a WAV into a token bitstream.
    Encode {
        codebook: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a token bitstream back into a WAV.
    Decode {
        codebook: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Round-trip a corpus and write per-utterance metrics as CSV.
    Eval {
        codebook: PathBuf,
        corpus: PathBuf,
        report: PathBuf,
        /// Debug: score the reference against itself, skipping the codec.
        #[arg(long)]
        bypass_codec: bool,
    },
    /// Print header fields, geometry, bitrate, and token statistics of a stream.
    Info { stream: PathBuf },
    /// Evaluate the bitrate formula for a given configuration.
    Bitrate {
        #[arg(long, default_value_t = 16_000)]
        sr: u32,
        #[arg(long, default_value_t = 128)]
        hop: u32,
        /// Patch extent along time (frames per patch).
        #[arg(long, default_value_t = 4)]
        dt: u32,
        /// Patch extent along frequency (bands per patch).
        #[arg(long, default_value_t = 4)]
        df: u32,
        #[arg(long, default_value_t = 80)]
        mels: u32,
        #[arg(long, default_value_t = 4096)]
        k: u32,
    },
    /// Generate a deterministic synthetic WAV corpus for tests and demos.
    SynthCorpus {
        /// Output directory (created if missing).
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = StyleArg::Speech)]
        style: StyleArg,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Speech,
    Alternating,
}

impl From<StyleArg> for SynthStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Speech => SynthStyle::Speech,
            StyleArg::Alternating => SynthStyle::Alternating,
        }
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    // Loaded for every subcommand so an invalid --config fails loudly even
    // where the command itself would not consume it (info, bitrate).
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Train { corpus, out } => {
            let outcome = pipeline::train(&cfg, corpus, out, cli.verbose)?;
            let last = outcome
                .history
                .last()
                .map(|(_, r, _)| *r)
                .expect("total_steps is validated positive");
            println!("trained {} steps on {}", outcome.steps, corpus.display());
            println!(
                "final loss: total {:.6} (recon {:.6}, codebook {:.6}, commitment {:.6})",
                last.total, last.recon_l1, last.codebook_loss, last.commitment_loss
            );
            println!(
                "codebook perplexity {:.3}, dead entries {}",
                outcome.final_perplexity, outcome.dead_entries
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("loss history: {}", outcome.loss_csv_path.display());
            println!("metadata: {}", outcome.meta_path.display());
        }
        Cmd::Encode { codebook, input, output } => {
            let model = Model::load(codebook)?;
            let o = pipeline::encode_file(&model, &cfg, input, output)?;
            println!(
                "encoded {:.3} s into {} tokens ({} rows x {} cols), {} bytes",
                o.duration_s, o.tokens, o.rows, o.cols, o.stream_bytes
            );
            println!(
                "{:.2} tokens/s, measured {} bps, encode RTF {:.4}",
                o.tokens_per_s,
                pipeline::format_bps(o.measured_bps),
                o.elapsed_s / o.duration_s.max(1e-12)
            );
        }
        Cmd::Decode { codebook, input, output } => {
            let model = Model::load(codebook)?;
            let o = pipeline::decode_file(&model, &cfg, input, output)?;
            println!(
                "decoded {} frames to {} samples ({:.3} s), decode RTF {:.4}",
                o.frames,
                o.samples,
                o.duration_s,
                o.elapsed_s / o.duration_s.max(1e-12)
            );
        }
        Cmd::Eval { codebook, corpus, report, bypass_codec } => {
            let model = if *bypass_codec { None } else { Some(Model::load(codebook)?) };
            let o = pipeline::eval(model.as_ref(), &cfg, corpus, report, cli.verbose)?;
            println!(
                "evaluated {} utterances ({} failed): mean mcd {:.3}, mean stoi {:.4}",
                o.rows.len(),
                o.failures.len(),
                o.mean.mcd,
                o.mean.stoi
            );
            println!(
                "mean RTF: encode {:.4}, decode {:.4}; report: {}",
                o.mean.rtf_encode,
                o.mean.rtf_decode,
                report.display()
            );
        }
        Cmd::Info { stream } => {
            let bytes = std::fs::read(stream)
                .map_err(|e| CliError::Data(format!("{}: {}", stream.display(), e)))?;
            let r = pipeline::info(&bytes)?;
            let h = &r.header;
            println!("sample_rate: {}", h.sample_rate);
            println!("n_mels: {}", h.n_mels);
            println!("hop: {}", h.hop);
            println!("win_length: {}", h.win_length);
            println!("patch: {}x{} (time x freq)", h.patch_t, h.patch_f);
            println!("k: {}", h.k);
            println!("codebook_digest: {}", hex(&h.codebook_digest));
            println!("original_t: {}", h.original_t);
            println!("grid: {}x{} = {} tokens", r.rows, r.cols, r.tokens);
            println!("payload: {} bytes at {} bits/token", r.payload_bytes, r.bits_per_token);
            println!("bitrate: {} bps", pipeline::format_bps(r.bitrate_bps));
            println!(
                "codes: {} distinct, perplexity {:.2}",
                r.distinct_codes, r.perplexity
            );
            for (idx, count) in &r.top_codes {
                println!("  code {idx}: {count}");
            }
        }
        Cmd::Bitrate { sr, hop, dt, df, mels, k } => {
            let spec = BitrateSpec {
                sample_rate: *sr,
                hop: *hop,
                downsample_t: *dt,
                downsample_f: *df,
                n_mels: *mels,
                k: *k,
            };
            let bps = bitrate_bps(&spec)?;
            let rows_per_s = *sr as f64 / (*hop as f64 * *dt as f64);
            let cols = mels / df;
            let bits = melpatch_core::vq::bits_for_k(*k);
            println!(
                "{} rows/s x {} tokens/row x {} bits = {} bps",
                rows_per_s,
                cols,
                bits,
                pipeline::format_bps(bps)
            );
        }
        Cmd::SynthCorpus { out, count, duration, style, sample_rate } => {
            let paths = synth::write_corpus(
                out,
                (*style).into(),
                *sample_rate,
                *duration,
                *count,
                cfg.seed,
            )?;
            for p in &paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE, so `melpatch info x.mpc | head` would panic on
    // the closed pipe; restore the default die-quietly behavior.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
