//! `neuralecho`: simulate data, train, enhance, evaluate and verify.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use neuralecho::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use neuralecho::model::load_model;
use neuralecho::signal::{load_wav, save_wav};
use neuralecho::simulate::{make_dataset, read_embedding, verify_dataset, DatasetManifest};
use neuralecho::train::{evaluate, run_suites, train, TrainPaths};

/// Samplewise tolerance of the mixing identity and SER/SNR tolerance in dB.
const MIX_TOLERANCE: f64 = 1e-7;
const RATIO_TOLERANCE_DB: f64 = 0.01;

#[derive(Parser)]
#[command(name = "neuralecho", version, about = "Two-stage neural acoustic echo cancellation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset and its manifest.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest file or dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Condition on the speaker embeddings in the manifest.
        #[arg(long)]
        speaker_aware: bool,
        /// Add the AGC branch and train it jointly.
        #[arg(long)]
        agc: bool,
        /// Override schedule.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override schedule.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance one microphone recording.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mic: PathBuf,
        #[arg(long)]
        farend: PathBuf,
        /// Speaker embedding file (128 little-endian f32).
        #[arg(long)]
        embedding: Option<PathBuf>,
        /// Also write the AGC branch output next to `--out` as `<stem>_post_agc.wav`.
        #[arg(long)]
        emit_post_agc: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only run the suites of this module.
        #[arg(long)]
        module: Option<String>,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Scale analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt_factor: Option<f64>,
    },
    /// Check the mixing identity and SER/SNR of every manifest record.
    Verify {
        #[arg(long)]
        data: PathBuf,
    },
}

/// Marks errors caused by bad flags, configs or inputs (exit code 2).
#[derive(Debug)]
struct Usage;

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("usage error")
    }
}

trait UsageContext<T> {
    fn usage(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for std::result::Result<T, E> {
    fn usage(self) -> Result<T> {
        self.map_err(|e| e.into().context(Usage))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).usage(),
        None => Ok(RunConfig::default()),
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).usage()
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("NEURALECHO_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("NEURALECHO_THREADS must be a positive integer, got {value:?}"))
        .usage()?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn post_agc_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("enhanced");
    out.with_file_name(format!("{stem}_post_agc.wav"))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate { config, out, n, seed } => {
            let cfg = load_config(config.as_deref())?;
            let manifest = make_dataset(&cfg.simulation, n, seed, &out)?;
            cfg.write(&out.join(EFFECTIVE_CONFIG_FILE))?;
            println!("wrote {} records to {}", manifest.records.len(), out.display());
        }
        Command::Train { config, data, checkpoint_out, speaker_aware, agc, steps, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.set_variant(speaker_aware, agc);
            if let Some(s) = steps {
                cfg.schedule.steps = s;
            }
            if let Some(s) = seed {
                cfg.schedule.seed = s;
            }
            cfg.validate().usage()?;
            let manifest = load_manifest(&data)?;
            neuralecho::train::check_manifest(&manifest, &cfg.model).usage()?;
            if let Some(dir) = checkpoint_out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let paths = TrainPaths::beside(&checkpoint_out);
            if let Some(dir) = checkpoint_out.parent() {
                cfg.write(&dir.join(EFFECTIVE_CONFIG_FILE))?;
            }
            println!("model parameters: {}", cfg.model.param_count());
            let summary = train(&manifest, &cfg.model, &cfg.loss, &cfg.schedule, &paths)?;
            if let Some(last) = summary.steps.last() {
                println!("step {} loss {:.4}", last.step, last.loss);
            }
            for v in &summary.validation {
                println!(
                    "validation step {}: SI-SDR mixture {:.2} dB, enhanced {:.2} dB",
                    v.step, v.si_sdr_mixture, v.si_sdr_enhanced
                );
            }
            println!("wrote {}", checkpoint_out.display());
        }
        Command::Enhance { checkpoint, mic, farend, embedding, emit_post_agc, out } => {
            let (model, _, _) = load_model(&checkpoint, Default::default()).usage()?;
            let cfg = model.config();
            let mic = load_wav(&mic).usage()?;
            let farend = load_wav(&farend).usage()?;
            let embedding = match (embedding, cfg.speaker_aware) {
                (Some(p), true) => Some(read_embedding(&p).usage()?),
                (None, true) => bail!(anyhow::anyhow!("this checkpoint is speaker-aware; pass --embedding").context(Usage)),
                (Some(_), false) => {
                    bail!(anyhow::anyhow!("this checkpoint is not speaker-aware; drop --embedding").context(Usage))
                }
                (None, false) => None,
            };
            if emit_post_agc && !cfg.agc_branch {
                bail!(anyhow::anyhow!("this checkpoint has no AGC branch; drop --emit-post-agc").context(Usage));
            }
            if mic.len() != farend.len() {
                bail!(anyhow::anyhow!(
                    "microphone has {} samples, far-end has {}",
                    mic.len(),
                    farend.len()
                )
                .context(Usage));
            }
            let result = model.enhance(&mic, &farend, embedding.as_deref()).usage()?;
            save_wav(&result.signal, &out)?;
            println!("wrote {}", out.display());
            if emit_post_agc {
                let path = post_agc_path(&out);
                save_wav(result.post_agc.as_ref().expect("AGC branch present"), &path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate { checkpoint, data, report, config } => {
            let cfg = load_config(config.as_deref())?;
            let (model, _, _) = load_model(&checkpoint, Default::default()).usage()?;
            let manifest = load_manifest(&data)?;
            neuralecho::train::check_manifest(&manifest, model.config()).usage()?;
            let result = evaluate(&model, &manifest, &cfg.loss)?;
            result.write(&report)?;
            let s = &result.summary;
            match (s.si_sdr_mixture, s.si_sdr_enhanced) {
                (Some(m), Some(e)) => {
                    println!("{} items: SI-SDR mixture {m:.2} dB, enhanced {e:.2} dB ({:+.2} dB)", s.items, e - m)
                }
                _ => println!("no items"),
            }
            println!("wrote {}", report.display());
        }
        Command::Gradcheck { config, module, report, corrupt_factor } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(c) = corrupt_factor {
                cfg.gradcheck.corrupt_factor = c;
            }
            let reports = run_suites(&cfg.gradcheck, module.as_deref()).usage()?;
            for r in &reports {
                println!(
                    "{} {:<16} {:<18} max rel err {:.3e} (tolerance {:e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.module,
                    r.name,
                    r.max_rel_err,
                    r.tolerance
                );
            }
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                bail!("{failed} of {} gradient suites failed", reports.len());
            }
        }
        Command::Verify { data } => {
            let manifest = load_manifest(&data)?;
            let checks = verify_dataset(&manifest, MIX_TOLERANCE, RATIO_TOLERANCE_DB)?;
            let mut failed = 0;
            for c in &checks {
                if !c.passed {
                    failed += 1;
                }
                println!(
                    "{} {} mix error {:.2e}, SER error {:.4} dB, SNR error {:.4} dB",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.id,
                    c.mix_error,
                    c.ser_error_db,
                    c.snr_error_db
                );
            }
            if failed > 0 {
                bail!("{failed} of {} records failed verification", checks.len());
            }
            println!("{} records verified", checks.len());
        }
    }
    Ok(())
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.downcast_ref::<Usage>().is_some()
        || err
            .chain()
            .any(|e| matches!(e.downcast_ref::<neuralecho::Error>(), Some(neuralecho::Error::Config(_))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let marker = Usage.to_string();
            let mut message = String::new();
            for part in err.chain().map(|e| e.to_string()).filter(|m| *m != marker) {
                // library errors already embed their source in the message
                if message.ends_with(&part) {
                    continue;
                }
                if !message.is_empty() {
                    message.push_str(": ");
                }
                message.push_str(&part);
            }
            eprintln!("error: {message}");
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
