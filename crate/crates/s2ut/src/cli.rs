//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{Preset, RunConfig};
use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::{self, Workdir};

#[derive(Parser, Debug)]
#[command(name = "s2ut", version, about = "Speech-to-unit translation on a synthetic bilingual corpus")]
pub struct Cli {
    /// Directory holding all inputs and outputs of a run.
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// Base settings: desk or paper. Without it, the work directory's
    /// run.conf (if any) is used on top of the desk preset.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// `key = value` file applied after the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.max_steps=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Target encoding: stacked, reduced or r1.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus manifests.
    GenData,
    /// Fit the k-means unit codebook on training target frames.
    FitUnits,
    /// Quantize, filter and encode unit targets for every split.
    PrepTargets,
    /// Train the S2UT model and the duration predictor.
    Train {
        /// Train only one of `s2ut` or `duration`.
        #[arg(long)]
        only: Option<String>,
    },
    /// Beam-search unit decoding with CTC text output.
    Decode {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Write WAV files for decoded units.
    Synthesize {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
    /// ASR-BLEU, CTC-text BLEU, WER distribution and significance.
    Evaluate {
        #[arg(long)]
        split: Option<String>,
    },
    /// Per-stage runtime, FLOPs and peak memory over a subset.
    Bench {
        #[arg(long)]
        subset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
    },
}

fn key_prefixes(cmd: &str) -> &'static [&'static str] {
    match cmd {
        "gen-data" => &["corpus."],
        "fit-units" => &["units.", "model.units"],
        "prep-targets" => &["units."],
        "train" => &["model.", "train.", "duration."],
        "decode" | "synthesize" => &["decode."],
        "evaluate" => &["decode.split", "eval."],
        "bench" => &["bench.", "decode."],
        _ => &[],
    }
}

/// Clap command with the accepted keys listed under each subcommand.
pub fn command() -> clap::Command {
    let defaults = RunConfig::preset(Preset::Desk);
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let help = defaults.help_for(key_prefixes(&name));
        cmd = cmd.mut_subcommand(&name, |s| s.after_help(help));
    }
    cmd
}

/// Preset, then saved or explicit config file, then overrides.
pub fn resolve_config(cli: &Cli, wd: &Workdir) -> Result<RunConfig> {
    let mut cfg = match &cli.preset {
        Some(p) => RunConfig::preset(Preset::parse(p).ok_or_else(|| Error::Usage(format!("unknown preset {p:?}; expected desk or paper")))?),
        None => {
            let mut c = RunConfig::preset(Preset::Desk);
            if let Some(text) = wd.saved_config()? {
                c.apply_text(&text, &wd.run_config())?;
            }
            c
        }
    };
    if let Some(path) = &cli.config {
        let text = formats::read(path).map_err(|e| Error::Usage(e.to_string()))?;
        cfg.apply_text(&text, path)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.apply(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &cli.mode {
        cfg.apply("model.mode", mode)?;
        match cfg.model.mode {
            s2ut_core::model::Mode::R1 => cfg.model.r = 1,
            s2ut_core::model::Mode::Stacked if cfg.model.r == 1 => cfg.model.r = 5,
            _ => {}
        }
    }
    match &cli.command {
        Command::Decode { beam, split } | Command::Synthesize { beam, split } => {
            if let Some(b) = beam {
                cfg.decode.beam = *b;
            }
            if let Some(s) = split {
                cfg.decode.split = s.clone();
            }
        }
        Command::Evaluate { split: Some(s) } => cfg.decode.split = s.clone(),
        Command::Bench { subset, n, beam } => {
            if let Some(s) = subset {
                cfg.bench.subset = s.clone();
            }
            if let Some(n) = n {
                cfg.bench.n = *n;
            }
            if let Some(b) = beam {
                cfg.decode.beam = *b;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir);
    let cfg = resolve_config(cli, &wd)?;
    match &cli.command {
        Command::GenData => {
            pipeline::gen_data(&cfg, &wd)?;
        }
        Command::FitUnits => {
            pipeline::fit_units(&cfg, &wd)?;
        }
        Command::PrepTargets => {
            pipeline::prep_targets(&cfg, &wd)?;
        }
        Command::Train { only } => {
            let (s2ut, duration) = match only.as_deref() {
                None => (true, true),
                Some("s2ut") => (true, false),
                Some("duration") => (false, true),
                Some(o) => return Err(Error::Usage(format!("--only expects s2ut or duration, got {o:?}"))),
            };
            pipeline::train_all(&cfg, &wd, s2ut, duration)?;
        }
        Command::Decode { .. } => {
            pipeline::decode(&cfg, &wd)?;
        }
        Command::Synthesize { .. } => {
            let n = pipeline::synthesize_split(&cfg, &wd)?;
            log::info!("wrote {n} waveforms");
        }
        Command::Evaluate { .. } => {
            let s = pipeline::evaluate(&cfg, &wd)?;
            for sys in &s.systems {
                log::info!("{}: ASR-BLEU {:.2} CTC-BLEU {:.2} agreement {:.3}", sys.name, sys.asr_bleu, sys.ctc_bleu, sys.agreement);
            }
        }
        Command::Bench { .. } => {
            let run = pipeline::bench(&cfg, &wd)?;
            log::info!("{}/{}: {:.4}s per sample", run.report.system, run.report.subset, run.report.seconds_per_sample);
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
