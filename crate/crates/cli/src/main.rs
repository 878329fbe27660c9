//! `zoo-ood`: score a model zoo, benchmark ensembles, run simulations, and
//! explain individual decisions.
//!
//! Exit codes: 0 on success, 1 when flags, configs or inputs fail
//! validation, 2 when the pipeline fails at run time.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use zoo_ood::ensemble::{EnsembleConfig, Scheme};
use zoo_ood::ingest::{load_manifest, DatasetRole, IngestError, ZooManifest};
use zoo_ood::metrics::{bench, pvalue_splits, BenchConfig, DetectionReport};
use zoo_ood::scores::{score_table, ModelZoo};
use zoo_ood::sim::{
    explain_sample, simulate_id_uniform, simulate_mixture, synth_benchmark, write_bundle,
    IdUniformSimConfig, MixtureSimConfig, SynthBenchConfig,
};

use output::{id_uniform_csv, mixture_csv, rounded_json};

const DEFAULT_TPR0: f64 = 0.95;

#[derive(Debug, Parser)]
#[command(name = "zoo-ood", version, about = "Model-zoo OOD detection with multiple testing")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every available core. Results never depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Do not print tables to stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one split with every model and write the score table.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: String,
    },
    /// Evaluate ensemble schemes on every OOD split of a zoo.
    Bench(BenchArgs),
    /// Monte Carlo simulations.
    #[command(subcommand)]
    Simulate(SimCommand),
    /// Show which models drove the decision for one test input.
    Explain {
        #[arg(long)]
        manifest: PathBuf,
        /// Split holding the input (an OOD split or `test_id`).
        #[arg(long)]
        ood: String,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        tpr0: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Target TPR; defaults to the manifest's value, then 0.95.
    #[arg(long)]
    tpr0: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "bh")]
    schemes: Vec<String>,
    /// OOD splits to evaluate; defaults to all.
    #[arg(long, value_delimiter = ',')]
    ood: Vec<String>,
    /// CSV report path; the JSON report goes next to it.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Add one row set per model evaluated alone.
    #[arg(long)]
    singles: bool,
    /// Use (c + 1) / (n + 1) p-values.
    #[arg(long)]
    smoothing: bool,
    /// AUC grid step.
    #[arg(long, default_value_t = 0.0005)]
    step: f64,
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// ID inputs: i.i.d. uniform p-values; TPR per scheme.
    IdUniform {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = DEFAULT_TPR0)]
        tpr0: f64,
        #[arg(long, default_value_t = 1_000_000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "bh,naive,average,voting")]
        schemes: Vec<String>,
    },
    /// OOD inputs with a fraction of active models; BH power and FDR.
    Mixture {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        pi: f64,
        #[arg(long)]
        g_shape: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Synthetic Gaussian zoo run through the full pipeline.
    Synth {
        /// JSON config; the built-in two-model world when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the generated matrices and manifest to this directory.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(msg: impl ToString) -> CliError {
    CliError::Validation(msg.to_string())
}

fn runtime(msg: impl ToString) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Validation(msg) | CliError::Runtime(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(runtime)?;
    let ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
        out: cli.out,
    };
    match cli.command {
        Command::Score { manifest, split } => cmd_score(&ctx, &manifest, &split),
        Command::Bench(args) => cmd_bench(&ctx, &args),
        Command::Simulate(sim) => cmd_simulate(&ctx, sim),
        Command::Explain {
            manifest,
            ood,
            index,
            tpr0,
        } => cmd_explain(&manifest, &ood, index, tpr0),
    }
}

struct Context {
    seed: Option<u64>,
    quiet: bool,
    out: PathBuf,
}

impl Context {
    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| runtime(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn check_tpr0(tpr0: f64) -> Result<f64, CliError> {
    EnsembleConfig::new(Scheme::Bh, tpr0).map_err(invalid)?;
    Ok(tpr0)
}

fn parse_split(name: &str) -> Result<DatasetRole, CliError> {
    name.parse().map_err(|e: IngestError| invalid(e))
}

/// A manifest that cannot be found or parsed is a validation failure.
fn open_manifest(path: &Path) -> Result<ZooManifest, CliError> {
    load_manifest(path).map_err(invalid)
}

fn require_split(manifest: &ZooManifest, split: &DatasetRole) -> Result<(), CliError> {
    if manifest.splits.contains(split) {
        Ok(())
    } else {
        let known: Vec<String> = manifest.splits.iter().map(|s| s.to_string()).collect();
        Err(invalid(format!("unknown split \"{split}\"; the manifest has {}", known.join(", "))))
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_score(ctx: &Context, manifest: &Path, split: &str) -> Result<(), CliError> {
    let split = parse_split(split)?;
    let manifest = open_manifest(manifest)?;
    require_split(&manifest, &split)?;
    let table = score_table(&manifest, &split).map_err(runtime)?;
    let (zfm, json) = table
        .save(ctx.out_dir()?, &format!("scores_{split}"), Some(&split))
        .map_err(runtime)?;
    ctx.say(&format!(
        "{} x {} scores -> {} ({})\n",
        table.n(),
        table.m(),
        zfm.display(),
        json.display()
    ));
    Ok(())
}

fn cmd_bench(ctx: &Context, args: &BenchArgs) -> Result<(), CliError> {
    if let Some(t) = args.tpr0 {
        check_tpr0(t)?;
    }
    let schemes = BenchConfig::parse_schemes(&args.schemes).map_err(invalid)?;
    let ood = args
        .ood
        .iter()
        .map(|s| parse_split(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(bad) = ood.iter().find(|s| !s.is_ood()) {
        return Err(invalid(format!("{bad} is not an OOD split")));
    }

    let manifest = open_manifest(&args.manifest)?;
    for split in &ood {
        require_split(&manifest, split)?;
    }
    let tpr0 = check_tpr0(args.tpr0.or(manifest.tpr0).unwrap_or(DEFAULT_TPR0))?;
    let mut cfg = BenchConfig::new(schemes, tpr0).map_err(invalid)?;
    cfg.ood_splits = (!ood.is_empty()).then_some(ood);
    cfg.singles = args.singles;
    cfg.conformal_smoothing = args.smoothing;
    cfg.step = args.step;
    cfg.seed = ctx.seed;
    cfg.validate().map_err(invalid)?;

    let report = bench(&manifest, &cfg).map_err(runtime)?;
    let csv_path = match &args.report {
        Some(p) => p.clone(),
        None => ctx.out_dir()?.join("report.csv"),
    };
    write_report(ctx, &report, &csv_path)
}

fn write_report(ctx: &Context, report: &DetectionReport, csv_path: &Path) -> Result<(), CliError> {
    write_file(csv_path, &report.to_csv())?;
    write_file(&csv_path.with_extension("json"), &report.to_json())?;
    ctx.say(&report.to_text());
    Ok(())
}

fn cmd_simulate(ctx: &Context, sim: SimCommand) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(0);
    match sim {
        SimCommand::IdUniform {
            m,
            tpr0,
            trials,
            schemes,
        } => {
            let cfg = IdUniformSimConfig {
                m,
                tpr0,
                trials,
                seed,
                schemes: BenchConfig::parse_schemes(&schemes).map_err(invalid)?,
            };
            cfg.validate().map_err(invalid)?;
            let rates = simulate_id_uniform(&cfg).map_err(runtime)?;
            let dir = ctx.out_dir()?;
            let csv = id_uniform_csv(&rates);
            write_file(&dir.join("id_uniform.csv"), &csv)?;
            let doc = json!({ "command": "simulate id-uniform", "config": cfg, "results": rates });
            write_file(&dir.join("id_uniform.json"), &rounded_json(&doc))?;
            ctx.say(&csv);
        }
        SimCommand::Mixture {
            m,
            pi,
            g_shape,
            alpha,
            trials,
        } => {
            let cfg = MixtureSimConfig {
                m,
                pi,
                g_shape,
                alpha,
                trials,
                seed,
                keep_counts: false,
            };
            cfg.validate().map_err(invalid)?;
            let stats = simulate_mixture(&cfg).map_err(runtime)?;
            let dir = ctx.out_dir()?;
            let csv = mixture_csv(&stats);
            write_file(&dir.join("mixture.csv"), &csv)?;
            let doc = json!({ "command": "simulate mixture", "config": cfg, "results": stats });
            write_file(&dir.join("mixture.json"), &rounded_json(&doc))?;
            ctx.say(&csv);
        }
        SimCommand::Synth { config, bundle } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                    serde_json::from_str::<SynthBenchConfig>(&text)
                        .map_err(|e| invalid(format!("{}: {e}", path.display())))?
                }
                None => SynthBenchConfig::default(),
            };
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(invalid)?;
            if let Some(dir) = &bundle {
                let path = write_bundle(&cfg, dir).map_err(runtime)?;
                if !ctx.quiet {
                    eprintln!("bundle manifest: {}", path.display());
                }
            }
            let report = synth_benchmark(&cfg).map_err(runtime)?;
            write_report(ctx, &report, &ctx.out_dir()?.join("synth_report.csv"))?;
        }
    }
    Ok(())
}

/// Prints the attribution record; it is the command's output, so `--quiet`
/// does not silence it.
fn cmd_explain(
    manifest: &Path,
    split: &str,
    index: usize,
    tpr0: Option<f64>,
) -> Result<(), CliError> {
    if let Some(t) = tpr0 {
        check_tpr0(t)?;
    }
    let split = parse_split(split)?;
    if !(split.is_ood() || split == DatasetRole::TestId) {
        return Err(invalid(format!("{split} is not a test split")));
    }
    let manifest = open_manifest(manifest)?;
    require_split(&manifest, &split)?;
    let config = EnsembleConfig::bh(tpr0.or(manifest.tpr0).unwrap_or(DEFAULT_TPR0)).map_err(invalid)?;

    let zoo = ModelZoo::load(&manifest).map_err(runtime)?;
    let n = zoo
        .split_len(&split)
        .ok_or_else(|| invalid(format!("split {split} has no rows")))?;
    if index >= n {
        return Err(invalid(format!("--index {index} out of range: {split} has {n} rows")));
    }
    let pmat = pvalue_splits(&zoo, std::slice::from_ref(&split), manifest.conformal_smoothing)
        .map_err(runtime)?
        .remove(0);
    let names = zoo.model_names();
    let attribution = explain_sample(pmat.row(index), &config, &names).map_err(runtime)?;
    let doc = json!({
        "split": split.to_string(),
        "index": index,
        "tpr0": config.tpr0,
        "summary": attribution.summary(),
        "attribution": attribution,
    });
    print!("{}", rounded_json(&doc));
    Ok(())
}
