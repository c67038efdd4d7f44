use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bif::config::{ExperimentConfig, SEED_ENV};
use bif::experiment::{self, Trained};
use bif::report::{write_metrics, ForgetSummary, RunReport};
use bif::{data, io};
use bif_core::Dataset;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bif", version, about = "Train Bayesian models, forget training items, certify the result")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test sets.
    GenData(Common),
    /// Train on the full training set.
    Train(Common),
    /// Remove the configured items from a trained state.
    Forget(Common),
    /// Train from scratch without the removed items.
    Retrain(Common),
    /// Compare the processed and retrained states.
    Certify(Common),
    /// Print the summary of an existing report.json.
    Report(Common),
    /// Run every phase and write report.json and metrics.csv.
    RunAll(Common),
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for all inputs and outputs of the run.
    #[arg(long)]
    out_dir: PathBuf,
    /// Config overrides as `--key value` pairs, e.g. `--n 400 --inference sgld`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").with_context(|| format!("expected `--key value`, got {flag:?}"))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (key.to_string(), it.next().with_context(|| format!("missing value for --{key}"))?.clone()),
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let overrides = parse_overrides(&c.overrides)?;
    let env = std::env::var(SEED_ENV).ok();
    match &c.config {
        Some(p) => ExperimentConfig::load(p, &overrides),
        None => {
            let saved = c.out_dir.join("config.toml");
            if saved.exists() {
                ExperimentConfig::load(&saved, &overrides)
            } else {
                ExperimentConfig::from_toml_str("", &overrides, env.as_deref())
            }
        }
    }
}

fn prepare(c: &Common) -> Result<ExperimentConfig> {
    let cfg = load_config(c)?;
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    fs::write(c.out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(cfg)
}

fn datasets(cfg: &ExperimentConfig, dir: &Path) -> Result<(Dataset, Dataset)> {
    let (tr, te) = (dir.join("train.csv"), dir.join("test.csv"));
    if tr.exists() && te.exists() {
        Ok((data::read_csv(File::open(&tr)?)?, data::read_csv(File::open(&te)?)?))
    } else {
        let (a, b) = data::generate(cfg)?;
        data::write_csv(&a, File::create(&tr)?)?;
        data::write_csv(&b, File::create(&te)?)?;
        Ok((a, b))
    }
}

fn checkpoint(cfg: &ExperimentConfig, dir: &Path, phase: &str, model_id: &str) -> Result<Trained> {
    let name = if experiment::is_mcmc(cfg) { format!("samples_{phase}.json") } else { format!("params_{phase}.json") };
    let path = dir.join(&name);
    if !path.exists() {
        bail!("{} not found; run the `{}` step first", path.display(), if phase == "processed" { "forget" } else if phase == "original" { "train" } else { "retrain" });
    }
    io::load_checkpoint(&path, model_id)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = prepare(&c)?;
            let (a, b) = datasets(&cfg, &c.out_dir)?;
            println!("wrote {} training and {} test items to {}", a.len(), b.len(), c.out_dir.display());
        }
        Command::Train(c) => {
            let cfg = prepare(&c)?;
            let (train, _) = datasets(&cfg, &c.out_dir)?;
            let model = experiment::build_model(&cfg);
            let t = experiment::train(&cfg, model.as_ref(), &train)?;
            io::save_checkpoint(&c.out_dir.join(io::checkpoint_name(&t, "original")), &t, model.id())?;
            println!("trained {} with {} on {} items", model.id(), cfg.inference.as_str(), train.len());
        }
        Command::Forget(c) => {
            let cfg = prepare(&c)?;
            let (train, test) = datasets(&cfg, &c.out_dir)?;
            let model = experiment::build_model(&cfg);
            let original = checkpoint(&cfg, &c.out_dir, "original", model.id())?;
            let removed = data::removal_set(&cfg, &train)?;
            let run = experiment::forget(&cfg, model.as_ref(), original, train, &removed, &test);
            write_metrics(&c.out_dir.join("metrics.csv"), &run.metrics)?;
            io::write_json(&c.out_dir.join("audit.json"), &run.audit)?;
            let summary = ForgetSummary::from_audit(&run.audit, run.data.masked_reads());
            if let Some(e) = run.error {
                bail!("forgetting stopped after {} batches: {e}", summary.batches);
            }
            io::save_checkpoint(&c.out_dir.join(io::checkpoint_name(&run.state, "processed")), &run.state, model.id())?;
            println!("removed {} items in {} batches ({} HVP calls)", removed.len(), summary.batches, summary.hvp_calls);
        }
        Command::Retrain(c) => {
            let cfg = prepare(&c)?;
            let (train, _) = datasets(&cfg, &c.out_dir)?;
            let model = experiment::build_model(&cfg);
            let removed = data::removal_set(&cfg, &train)?;
            let t = experiment::retrain_oracle(&cfg, model.as_ref(), &train, &removed)?;
            io::save_checkpoint(&c.out_dir.join(io::checkpoint_name(&t, "retrained")), &t, model.id())?;
            println!("retrained on {} items", train.len() - removed.len());
        }
        Command::Certify(c) => {
            let cfg = prepare(&c)?;
            let (train, _) = datasets(&cfg, &c.out_dir)?;
            let model = experiment::build_model(&cfg);
            let removed = data::removal_set(&cfg, &train)?;
            let remaining = train.remove(&removed)?;
            let original = checkpoint(&cfg, &c.out_dir, "original", model.id())?;
            let processed = checkpoint(&cfg, &c.out_dir, "processed", model.id())?;
            let retrained = checkpoint(&cfg, &c.out_dir, "retrained", model.id())?;
            let cert = experiment::certify(&cfg, model.as_ref(), &original, &processed, &retrained, &remaining)?;
            io::write_json(&c.out_dir.join("certificate.json"), &cert)?;
            println!("ε={} kind={} n={}", cert.epsilon, cert.kind.as_str(), cfg.n);
        }
        Command::Report(c) => {
            let r: RunReport = io::read_json(&c.out_dir.join("report.json"))?;
            print_summary(&r);
            return Ok(r.succeeded());
        }
        Command::RunAll(c) => {
            let cfg = prepare(&c)?;
            let out = experiment::run_experiment(&cfg);
            experiment::write_outputs(&c.out_dir, &cfg, &out)?;
            print_summary(&out.report);
            return Ok(out.report.succeeded());
        }
    }
    Ok(true)
}

fn print_summary(r: &RunReport) {
    println!("model={} inference={} n={} removed={}", r.model_id, r.config.inference.as_str(), r.n_train, r.n_removed);
    let t = &r.timings;
    println!(
        "train={:.3}s forget={:.3}s retrain={:.3}s acceleration={:.1}x",
        t.train_secs, t.forget_secs, t.retrain_secs, t.acceleration_rate
    );
    if let Some(d) = &r.distances {
        println!("distance original->retrain={:.4} processed->retrain={:.4}", d.original_to_retrain, d.processed_to_retrain);
        if let (Some(a), Some(b)) = (d.center_original_to_retrain, d.center_processed_to_retrain) {
            println!("centers original->retrain={a:.4} processed->retrain={b:.4}");
        }
    }
    if let Some(c) = &r.certificate {
        println!("ε={} kind={} n={}", c.epsilon, c.kind.as_str(), r.config.n);
    }
    for b in &r.bounds {
        println!("bound {:?}: {:.4} (risk {:.4})", b.kind, b.bound, b.empirical_risk);
    }
    if let Some(f) = &r.failure {
        println!("FAILED in {}: {}", f.phase, f.message);
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
