use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use di3po::experiments::Variant;
use di3po::pipeline::{
    cmd_eval, cmd_filter, cmd_gen_pairs, cmd_report, cmd_train, log_timing, EvalTarget, PipelineConfig, PipelineError, Services,
    EXIT_OK, EXIT_PARTIAL,
};

#[derive(Parser)]
#[command(
    name = "di3po",
    version,
    about = "Preference-pair generation, filtering, fine-tuning and evaluation",
    after_help = "Any config key can also be set directly, e.g. `--train.lr 0.001` or `--mock.corruption_rate=0.1`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of pairs to generate.
    #[arg(long, global = true)]
    count: Option<usize>,
    /// Verifier confidence threshold (0-100).
    #[arg(long, global = true)]
    threshold: Option<i64>,
    /// Training variant, or for `eval` any of base, untrained, oracle.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

/// Flags owned by the parser; every other `--key` naming a config path is
/// an override.
const CLI_FLAGS: [&str; 8] = ["config", "seed", "count", "threshold", "variant", "out", "help", "version"];

/// Splits `--dotted.key value` and `--dotted.key=value` config overrides out
/// of the argument list.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let known = PipelineConfig::default_tree();
    let is_key = |k: &str| {
        let mut node = &known;
        let parts: Vec<&str> = k.split('.').collect();
        for (i, p) in parts.iter().enumerate() {
            match node.get(*p) {
                Some(toml::Value::Table(t)) if i + 1 < parts.len() => node = t,
                Some(_) if i + 1 == parts.len() => return true,
                _ => return false,
            }
        }
        false
    };
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if CLI_FLAGS.contains(&key.as_str()) || !(key.contains('.') || is_key(&key)) {
            rest.push(a);
            continue;
        }
        match inline.or_else(|| it.next()) {
            Some(v) => overrides.push((key, v)),
            None => overrides.push((key, String::new())),
        }
    }
    (rest, overrides)
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate diptych preference pairs.
    GenPairs,
    /// Verify pairs and keep those above the threshold.
    Filter,
    /// Fine-tune on the filtered pairs (all variants unless --variant).
    Train,
    /// Score a model (base and all trained variants unless --variant).
    Eval,
    /// Summarise the run directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenPairs => "gen-pairs",
            Command::Filter => "filter",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

fn overrides(cli: &Cli, dotted: &[(String, String)]) -> Vec<(String, String)> {
    let mut out = dotted.to_vec();
    // Dedicated flags win over dotted keys.
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    flag("seed", cli.seed.map(|v| v.to_string()));
    flag("count", cli.count.map(|v| v.to_string()));
    flag("threshold", cli.threshold.map(|v| v.to_string()));
    flag("root", cli.out.as_ref().map(|p| format!("{:?}", p.display().to_string())));
    out
}

fn print<T: serde::Serialize>(v: &T) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: &Cli, cfg: Result<PipelineConfig, PipelineError>) -> Result<i32, PipelineError> {
    let cfg = cfg?;
    let variants = |default: &[&str]| -> Result<Vec<String>, PipelineError> {
        Ok(match &cli.variant {
            Some(v) => vec![v.clone()],
            None => default.iter().map(|s| s.to_string()).collect(),
        })
    };
    match cli.command {
        Command::GenPairs => {
            let s = cmd_gen_pairs(&cfg, &Services::from_config(&cfg)?)?;
            print(&s);
            Ok(if s.is_partial() { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Filter => {
            let s = cmd_filter(&cfg, &Services::from_config(&cfg)?)?;
            print(&s);
            Ok(if s.is_partial() { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Train => {
            for name in variants(&Variant::ALL.map(|v| v.name()))? {
                let v: Variant = name.parse().map_err(|e: String| PipelineError::Usage(e))?;
                print(&cmd_train(&cfg, v)?);
            }
            Ok(EXIT_OK)
        }
        Command::Eval => {
            let services = Services::from_config(&cfg)?;
            let mut names = variants(&["base"])?;
            if cli.variant.is_none() {
                let root = cfg.root.join("train");
                names.extend(Variant::ALL.iter().filter(|v| root.join(v.name()).join("final.bin").exists()).map(|v| v.name().to_string()));
            }
            for name in names {
                let t: EvalTarget = name.parse().map_err(PipelineError::Usage)?;
                let r = cmd_eval(&cfg, &services, t)?;
                if !r.skipped.is_empty() {
                    eprintln!("warning: {} prompts without ground truth skipped", r.skipped.len());
                }
                println!("{}", di3po::metrics::render_table(&r.metrics, &format!("{} (n={})", r.model, r.metrics.n)));
                println!("target accuracy {:.4} ± {:.4}\n", r.accuracy.overall, r.accuracy.half_width);
            }
            Ok(EXIT_OK)
        }
        Command::Report => {
            let s = cmd_report(&cfg)?;
            print(&s);
            Ok(if s.is_partial() { EXIT_PARTIAL } else { EXIT_OK })
        }
    }
}

fn main() -> ExitCode {
    let (args, dotted) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let started = Instant::now();
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides(&cli, &dotted)).map_err(PipelineError::from);
    let root = cfg.as_ref().ok().map(|c| c.root.clone());
    let code = match run(&cli, cfg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if let Some(root) = root.filter(|r| r.exists()) {
        let _ = log_timing(&root, cli.command.name(), started.elapsed().as_millis());
    }
    ExitCode::from(code as u8)
}
