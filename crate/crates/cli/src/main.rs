use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nacf::corpus::{Split, SynthSpec};
use nacf::model::Variant;
use nacf::pipeline::{self, ExperimentConfig};
use nacf::{Error, Result};

#[derive(Parser)]
#[command(name = "nacf", version, about = "Coarse-to-fine non-autoregressive video captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set training.epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth {
        /// Corpus generator settings (TOML); defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Caption a split.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        algo: Option<String>,
        /// on or off
        #[arg(long)]
        template: Option<String>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long = "B")]
        b: Option<usize>,
        #[arg(long)]
        rescore: bool,
        /// Autoregressive checkpoint used for rescoring.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
    },
    /// Score a captions file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure decoding latency over the configured grid.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Autoregressive checkpoint: speed-up reference and rescoring teacher.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
}

fn load(common: &Common, extra: Vec<String>) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn threads() -> Result<usize> {
    match std::env::var("NACF_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("NACF_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read spec {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads()?;
    log::debug!("worker threads: {threads}");
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let spec = match spec {
                Some(p) => read_spec(&p)?,
                None => SynthSpec::default(),
            };
            let corpus = pipeline::run_synth(&spec, seed, &out)?;
            println!("wrote {} videos, {} words to {}", corpus.videos.len(), corpus.vocab.num_words(), out.display());
        }
        Command::Train { common, variant, resume } => {
            let cfg = load(&common, vec![])?;
            let variant = variant.unwrap_or(cfg.variant);
            let ckpt = pipeline::run_train(&cfg, variant, resume.as_deref())?;
            println!("{}", ckpt.display());
        }
        Command::Decode {
            common,
            checkpoint,
            split,
            out,
            algo,
            template,
            t,
            q,
            b,
            rescore,
            teacher,
            trace,
        } => {
            let mut extra = Vec::new();
            if let Some(a) = algo {
                extra.push(format!("decode.algorithm=\"{a}\""));
            }
            if let Some(v) = template {
                let on = match v.as_str() {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return Err(Error::Config(format!("--template expects on or off, got {v:?}"))),
                };
                extra.push(format!("decode.use_template={on}"));
            }
            for (key, v) in [("T", t), ("q", q), ("B", b)] {
                if let Some(v) = v {
                    extra.push(format!("decode.{key}={v}"));
                }
            }
            if rescore {
                extra.push("decode.rescore=true".into());
            }
            if trace {
                extra.push("decode.trace=true".into());
            }
            let cfg = load(&common, extra)?;
            let records = pipeline::run_decode(&cfg, &checkpoint, teacher.as_deref(), split, &out)?;
            if cfg.decode.trace {
                for r in &records {
                    if let Some(t) = &r.trace {
                        println!("# {}\n{t}", r.video_id);
                    }
                }
            }
            println!("captioned {} videos into {}", records.len(), out.display());
        }
        Command::Eval {
            common,
            captions,
            split,
            out,
        } => {
            let cfg = load(&common, vec![])?;
            let res = pipeline::run_eval(&cfg, &captions, split, &out)?;
            print!("{}", res.report.to_csv());
        }
        Command::Bench {
            common,
            checkpoint,
            reference,
            split,
            out,
            trace,
        } => {
            let extra = if trace { vec!["decode.trace=true".into()] } else { vec![] };
            let cfg = load(&common, extra)?;
            let rows = pipeline::run_bench(&cfg, &checkpoint, reference.as_deref(), split, &out)?;
            print!("{}", pipeline::bench_csv(&rows, cfg.seed));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
