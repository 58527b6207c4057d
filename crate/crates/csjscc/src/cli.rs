//! Command-line front end. [`run`] maps argv to an exit code: 0 on success,
//! 2 for usage or configuration errors, 1 when a run fails.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use csjscc_core::channel::Awgn;
use csjscc_core::{metrics, rng, JsccModel};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::eval;
use crate::selftest;
use crate::sweep::{self, CSV_HEADER};
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "csjscc",
    version,
    about = "Learned compressed-sensing image transmission over AWGN channels"
)]
pub struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved config, with every default filled in, and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write `<out>/model.ckpt` and `<out>/train_log.csv`.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write `<out>/evaluate.csv`.
    Evaluate(EvalArgs),
    /// Send one PPM image through the system and write the reconstruction.
    Transmit(TransmitArgs),
    /// Train and evaluate over the ratio x SNR grid; writes `<out>/sweep.csv`.
    Sweep(SweepArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training SNR in dB.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Target compression ratio; replaces the configured c_last.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Maximum optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test SNRs in dB; repeat the flag for several values.
    #[arg(long)]
    pub snr: Vec<f64>,
    /// Transmissions per image.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransmitArgs {
    /// Input image (binary PPM).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "identity_stub")]
    pub checkpoint: Option<PathBuf>,
    /// Channel SNR in dB; `inf` for a noiseless channel.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Use an identity parameter set instead of a checkpoint.
    #[arg(long)]
    pub identity_stub: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Compression ratios; repeat the flag for several values.
    #[arg(long)]
    pub ratio: Vec<f64>,
    /// Test SNRs in dB; repeat the flag for several values.
    #[arg(long)]
    pub snr: Vec<f64>,
    /// Optimizer steps per model.
    #[arg(long)]
    pub steps: Option<u64>,
}

/// Parse `argv` (including the program name) and run.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Train(a) => {
            if let Some(snr) = a.snr {
                cfg.channel.snr_train_db = snr;
            }
            if let Some(r) = a.ratio {
                cfg.architecture.target_ratio = Some(r);
                cfg.architecture.c_last = None;
            }
            if let Some(s) = a.steps {
                cfg.training.max_steps = s;
            }
        }
        Command::Evaluate(a) => {
            if !a.snr.is_empty() {
                cfg.channel.snr_test_db = a.snr.clone();
            }
            if let Some(r) = a.repeats {
                cfg.eval.repeats = r;
            }
        }
        Command::Sweep(a) => {
            if !a.ratio.is_empty() {
                cfg.sweep.ratios = a.ratio.clone();
            }
            if !a.snr.is_empty() {
                cfg.channel.snr_test_db = a.snr.clone();
            }
            if let Some(s) = a.steps {
                cfg.training.max_steps = s;
            }
        }
        Command::Transmit(_) | Command::Selftest => {}
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Some(command) = &cli.command {
        apply_overrides(&mut cfg, command);
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (try --help)".into()));
    };
    cfg.validate()?;
    match command {
        Command::Train(_) => train(&cfg),
        Command::Evaluate(a) => evaluate(&cfg, a.checkpoint.as_deref()),
        Command::Transmit(a) => transmit(&cfg, &a),
        Command::Sweep(_) => run_sweep(&cfg),
        Command::Selftest => {
            let checks = selftest::run();
            let mut failed = 0;
            for c in &checks {
                match &c.outcome {
                    Ok(()) => println!("PASS  {}", c.name),
                    Err(why) => {
                        failed += 1;
                        println!("FAIL  {}: {why}", c.name);
                    }
                }
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(Error::Failed(format!("{failed} self-test check(s) failed")))
            }
        }
    }
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = cfg.data.open()?;
    let mut tc = TrainConfig::from_experiment(cfg, cfg.architecture.resolve()?);
    let ckpt_path = cfg.output.dir.join("model.ckpt");
    tc.checkpoint_path = Some(ckpt_path.clone());
    let start = Instant::now();
    let report_every = (tc.max_steps / 20).max(1);
    let outcome = trainer::train_loop(&tc, &dataset.train, &dataset.validation, |r| {
        if r.step % report_every == 0 || r.step == 1 {
            eprintln!(
                "step {:>7}  lr {:.1e}  loss {:.6}  {:.0?}",
                r.step,
                r.lr,
                r.loss,
                start.elapsed()
            );
        }
    })?;
    let mut log = String::from("step,lr,loss\n");
    for r in &outcome.history {
        writeln!(log, "{},{},{}", r.step, r.lr, r.loss).unwrap();
    }
    sweep::write_csv(&cfg.output.dir.join("train_log.csv"), &log)?;
    if outcome.stopped_early {
        eprintln!(
            "validation PSNR stagnated; stopped after {} steps",
            outcome.checkpoint.step
        );
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let default_path = cfg.output.dir.join("model.ckpt");
    let path = checkpoint.unwrap_or(&default_path);
    if !path.exists() {
        return Err(Error::MissingPath {
            what: "checkpoint",
            path: path.to_owned(),
        });
    }
    let ckpt = Checkpoint::load(path)?;
    let mut images = cfg.data.open()?.test;
    if cfg.eval.max_images > 0 {
        images.truncate(cfg.eval.max_images);
    }
    let report = eval::evaluate(
        &ckpt,
        &images,
        &cfg.channel.snr_test_db,
        cfg.eval.repeats,
        cfg.seed,
    )?;
    let hash = cfg.hash();
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &report.records {
        sweep::csv_line(&mut csv, r.compression_ratio, r, &hash);
    }
    let out = cfg.output.dir.join("evaluate.csv");
    sweep::write_csv(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn transmit(cfg: &ExperimentConfig, args: &TransmitArgs) -> Result<()> {
    if !args.input.exists() {
        return Err(Error::MissingPath {
            what: "input image",
            path: args.input.clone(),
        });
    }
    let image = data::load_ppm(&args.input)?;
    let (model, params) = if args.identity_stub {
        JsccModel::identity_stub(&image)?
    } else {
        let path = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| cfg.output.dir.join("model.ckpt"));
        if !path.exists() {
            return Err(Error::MissingPath {
                what: "checkpoint",
                path,
            });
        }
        let ckpt = Checkpoint::load(&path)?;
        (ckpt.model()?, ckpt.params)
    };
    let snr = args.snr.unwrap_or(cfg.channel.snr_train_db);
    let channel = Awgn::from_snr(snr, model.config().power);
    let (padded, (h, w)) = data::pad_to_block_multiple(&image, model.config().block_size)?;
    let mut noise = rng::stream(eval::transmission_seed(cfg.seed, 0, 0, 0));
    let out = model.transmit_image(&params, &padded, &channel, &mut noise)?;
    let out = data::crop(&out, h, w)?;
    let psnr = metrics::psnr(&image, &out, 1.0)?;
    let ssim = metrics::ssim(&image, &out)?;

    let stem = args
        .input
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let out_path = dir.join(format!("{stem}_reconstructed.ppm"));
    data::save_ppm(&out_path, &out)?;
    let csv = format!(
        "image,snr_db,psnr_db,ssim\n{},{snr},{psnr},{ssim}\n",
        args.input.display()
    );
    sweep::write_csv(&dir.join("transmit.csv"), &csv)?;
    println!(
        "{}: PSNR {psnr:.4} dB, SSIM {ssim:.6} -> {}",
        args.input.display(),
        out_path.display()
    );
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = cfg.data.open()?;
    let dir = cfg.output.dir.clone();
    let result = sweep::sweep(cfg, &dataset, Some(&dir), |msg| eprintln!("{msg}"))?;
    let csv = result.to_csv();
    sweep::write_csv(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
