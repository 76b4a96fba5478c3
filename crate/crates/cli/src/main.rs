use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stardro::diagnostics::{
    classify_regime, export_trace, load_jsonl, recommend_hyperparams, save_jsonl, Method, RegimeThresholds, RunConfig,
};
use stardro::grouping::ExampleRecord;
use stardro::harness::sweep::{regime_sweep_configs, sweep};
use stardro::harness::{generate_synthetic, load_data, train, SyntheticTaskSpec};
use stardro::metrics::{evaluate, SpanMatcher, SpanMatching};
use stardro::simplex::{entmax_project, to_dual, DualVector, SimplexVector, TsallisOrder, PROJECTION_TOL};
use stardro::{Error, Result};

const DEFAULT_OUT: &str = "runs";

#[derive(Parser)]
#[command(name = "stardro", version, about = "Group reweighting with Tsallis mirror ascent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and export its trace and summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; the STARDRO_OUT environment variable takes precedence.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the step-size sweep (baseline, x100, /100) and label each regime.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a dual vector read from stdin onto the simplex.
    ///
    /// Without --eta, stdin holds one line `u`. With --eta, stdin holds two
    /// lines, the current weights `q` and the ascent signal, and one mirror
    /// step is taken.
    Project {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Score predictions against gold annotations.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Count each gold span at most once.
        #[arg(long)]
        one_to_one: bool,
    },
    /// Write the synthetic task as train.jsonl and validation.jsonl.
    Generate {
        /// Task description JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print hyperparameter ranges for a number of groups.
    Recommend {
        #[arg(long)]
        groups: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Erm,
    Dro,
    Stardro,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Erm => Method::Erm,
            MethodArg::Dro => Method::Dro,
            MethodArg::Stardro => Method::StarDro,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            method,
            seed,
            out,
        } => cmd_run(config.as_deref(), method, seed, out),
        Command::Sweep { config, seed, out } => cmd_sweep(config.as_deref(), seed, out),
        Command::Project { alpha, eta } => cmd_project(alpha, eta),
        Command::Evaluate { pred, gold, one_to_one } => cmd_evaluate(&pred, &gold, one_to_one),
        Command::Generate { spec, seed, out } => cmd_generate(spec.as_deref(), seed, out),
        Command::Recommend { groups } => cmd_recommend(groups),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn output_root(flag: Option<PathBuf>, config: Option<&RunConfig>) -> PathBuf {
    if let Some(env) = std::env::var_os("STARDRO_OUT").filter(|v| !v.is_empty()) {
        return env.into();
    }
    flag.or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| DEFAULT_OUT.into())
}

fn cmd_run(path: Option<&Path>, method: Option<MethodArg>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut config = load_config(path)?;
    if let Some(m) = method {
        config.method = m.into();
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let root = output_root(out, Some(&config));
    let thresholds = RegimeThresholds::default();
    let data = load_data(&config)?;
    let record = train(&data, &config)?;
    let dir = export_trace(&record, &root, &thresholds)?;
    let label = classify_regime(&record.final_q, &thresholds);
    println!("run {} -> {}", record.run_id, dir.display());
    println!(
        "worst_val_loss={:.6} mean_val_loss={:.6} regime={} entropy={:.4}",
        record.worst_val_loss, record.mean_val_loss, label.regime, label.entropy
    );
    if let Some(d) = &record.divergence {
        return Err(Error::Diverged {
            step: d.step,
            loss: d.loss,
        });
    }
    Ok(())
}

fn cmd_sweep(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut base = load_config(path)?;
    if let Some(s) = seed {
        base.seed = s;
    }
    let root = output_root(out, Some(&base));
    let thresholds = RegimeThresholds::default();
    let entries = sweep(regime_sweep_configs(&base), &thresholds);
    let mut rows = Vec::new();
    for entry in &entries {
        match (&entry.outcome, &entry.regime) {
            (Ok(record), Some(label)) => {
                export_trace(record, &root, &thresholds)?;
                println!(
                    "{:<10} {} regime={} entropy={:.4} top2={:.4} active={} worst_val_loss={:.6}",
                    entry.label,
                    record.run_id,
                    label.regime,
                    label.entropy,
                    label.top2_mass,
                    label.active_set_size,
                    record.worst_val_loss
                );
                rows.push(serde_json::json!({
                    "label": entry.label,
                    "run_id": record.run_id,
                    "regime": label,
                    "worst_val_loss": record.worst_val_loss,
                    "diverged": record.divergence.is_some(),
                }));
            }
            _ => {
                let msg = entry.outcome.as_ref().err().map_or("no regime label", String::as_str);
                println!("{:<10} failed: {msg}", entry.label);
                rows.push(serde_json::json!({ "label": entry.label, "error": msg }));
            }
        }
    }
    std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    let summary = root.join("sweep.json");
    let text = serde_json::to_string_pretty(&rows).expect("sweep rows serialize");
    std::fs::write(&summary, text).map_err(|e| io_err(&summary, e))?;
    if entries.iter().all(|e| e.outcome.is_err()) {
        return Err(Error::InvalidInput("every sweep run failed".into()));
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_vector(line: &str) -> Result<Vec<f64>> {
    let values = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("not a finite number: `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::InvalidInput("empty vector".into()));
    }
    Ok(values)
}

/// Twelve significant digits, trailing zeros trimmed, always with a decimal point.
fn fmt_sig(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    let s = rounded.to_string();
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

fn cmd_project(alpha: f64, eta: Option<f64>) -> Result<()> {
    let alpha = TsallisOrder::new(alpha)?;
    let mut input = String::new();
    std::io::stdin()
        .read_to_string(&mut input)
        .map_err(|e| io_err(Path::new("<stdin>"), e))?;
    let mut lines = input.lines().filter(|l| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("missing {what} on stdin")))
            .and_then(parse_vector)
    };
    let dual = match eta {
        None => DualVector(next("dual vector")?),
        Some(eta) => {
            if !(eta >= 0.0) || !eta.is_finite() {
                return Err(Error::InvalidInput(format!("step size must be >= 0, got {eta}")));
            }
            let q = SimplexVector::new(next("weights")?)?;
            let ascent = next("ascent signal")?;
            if ascent.len() != q.len() {
                return Err(Error::InvalidInput(format!(
                    "ascent has length {}, weights have {}",
                    ascent.len(),
                    q.len()
                )));
            }
            let mut u = to_dual(&q, alpha)?;
            let scale = (alpha.get() - 1.0) * eta;
            u.0.iter_mut().zip(&ascent).for_each(|(u, a)| *u += scale * a);
            u
        }
    };
    let projection = entmax_project(&dual, alpha, PROJECTION_TOL)?;
    let weights: Vec<String> = projection.q.as_slice().iter().map(|&w| fmt_sig(w)).collect();
    println!("{} | lambda={}", weights.join(" "), fmt_sig(projection.threshold));
    Ok(())
}

fn cmd_evaluate(pred: &Path, gold: &Path, one_to_one: bool) -> Result<()> {
    let pred: Vec<ExampleRecord> = load_jsonl(pred)?;
    let gold: Vec<ExampleRecord> = load_jsonl(gold)?;
    let matching = if one_to_one {
        SpanMatching::OneToOne
    } else {
        SpanMatching::Literal
    };
    let report = evaluate(&pred, &gold, &SpanMatcher::default(), matching)?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_generate(spec: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<SyntheticTaskSpec>(&text).map_err(|e| {
                if e.is_data() {
                    Error::Schema(format!("{}: {e}", p.display()))
                } else {
                    Error::Json {
                        context: p.display().to_string(),
                        source: e,
                    }
                }
            })?
        }
        None => SyntheticTaskSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    let root = output_root(out, None);
    std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    save_jsonl(&root.join("train.jsonl"), &data.train)?;
    save_jsonl(&root.join("validation.jsonl"), &data.validation)?;
    println!(
        "wrote {} train and {} validation examples to {}",
        data.train.len(),
        data.validation.len(),
        root.display()
    );
    Ok(())
}

fn cmd_recommend(groups: usize) -> Result<()> {
    let advice = recommend_hyperparams(groups);
    println!("{}", serde_json::to_string_pretty(&advice).expect("advice serializes"));
    Ok(())
}
