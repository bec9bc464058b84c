use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hstkit_cli::commands::{self, Scope};
use hstkit_cli::config::parse_extra;
use hstkit_cli::{CliError, Result};
use hstkit_imaging::DegradationSpec;

#[derive(Parser)]
#[command(name = "hstkit", version, about = "Hierarchical Swin transformer super-resolution for compressed images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Downscaling factor.
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// JPEG quality applied after downscaling; omit for bicubic only.
    #[arg(long)]
    quality: Option<u8>,
    /// Disable the antialiasing prefilter of the downscaler.
    #[arg(long)]
    no_antialias: bool,
    /// Extra stage after JPEG: blur:<sigma>, noise:<sigma>, jpeg:<Q> or hybrid. Repeatable.
    #[arg(long = "extra")]
    extra: Vec<String>,
}

impl SpecArgs {
    fn spec(&self) -> Result<DegradationSpec> {
        let mut spec = match self.quality {
            Some(q) => DegradationSpec::compressed(self.scale, q),
            None => DegradationSpec::bicubic(self.scale),
        };
        spec.antialias = !self.no_antialias;
        spec.extra_stages = self.extra.iter().map(|s| parse_extra(s)).collect::<Result<_>>()?;
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a tree of HR PNGs into LR PNGs with a manifest.
    Degrade {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the training stages of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Degrade HR images, restore them and report PSNR/SSIM.
    Eval {
        checkpoint: PathBuf,
        input: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        ensemble: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for eval.tsv and provenance.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upscale one LR PNG.
    Infer {
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ensemble: bool,
    },
    /// Print parameter counts of the presets.
    Params {
        #[arg(long)]
        preset: Option<String>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Scope::All)]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade { input, out, spec, seed } => {
            let spec = spec.spec()?;
            let summary = commands::degrade_tree(&input, &out, &spec, seed)?;
            print!("{}", summary.manifest(&spec));
            match summary.failures() {
                0 => Ok(()),
                n => Err(CliError::Contract(format!("{n} of {} files failed", summary.rows.len()))),
            }
        }
        Command::Train { config, seed, out } => {
            let summary = commands::train(&config, seed, out.as_deref())?;
            for (stage, path) in &summary.finals {
                println!("{stage}\t{}", path.display());
            }
            if let Some(r) = &summary.test_report {
                print!("{}", r.to_tsv());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            input,
            spec,
            ensemble,
            seed,
            out,
        } => {
            let report = commands::eval(&checkpoint, &input, &spec.spec()?, ensemble, seed, out.as_deref())?;
            print!("{}", report.to_tsv());
            Ok(())
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            ensemble,
        } => {
            let sr = commands::infer_file(&checkpoint, &input, &out, ensemble)?;
            println!("{}\t{}x{}", out.display(), sr.width(), sr.height());
            Ok(())
        }
        Command::Params { preset } => {
            let rows = commands::params(preset.as_deref())?;
            for r in &rows {
                println!("{}", r.line());
            }
            match rows.iter().find(|r| r.target.is_some_and(|(_, ok)| !ok)) {
                Some(r) => Err(CliError::Contract(format!("{} is outside tolerance of its target count", r.preset))),
                None => Ok(()),
            }
        }
        Command::Gradcheck { scope, seed } => {
            let rows = commands::gradcheck(scope, seed)?;
            for r in &rows {
                println!("{}", commands::check_line(r));
            }
            commands::require_all_pass(&rows)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("HSTKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("HSTKIT_THREADS ignored: {e}");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hstkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
