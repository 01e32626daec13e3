use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sidefuse::data::{
    generate_synthetic, read_features, read_tree, write_side_info_dir, ExperimentConfig, SynthSpec,
    SIDEINFO_DIR,
};
use sidefuse::kernels::hsic;
use sidefuse::trainer::{
    evaluate, evaluate_generalized, gradient_suite, run_trial, sweep_alpha, sweep_shots, trial_seeds,
    write_labelled_matrix, write_sweep_csv, Architecture, EvalReport, GRADCHECK_STEP, GRADCHECK_TOL,
};
use sidefuse::tree_cov::normalize_covariance;
use sidefuse::Error;

#[derive(Parser)]
#[command(name = "sidefuse", version, about = "One-shot learning with fused class side information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with side information.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single trial and write the parameters and training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all trials on the data-poor label space.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all trials with every class in the label space.
    EvalGeneralized {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy as a function of the fusion weight.
    SweepAlpha {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated weights; defaults to 0, 0.05, ..., 1.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Accuracy as a function of the number of shots.
    SweepShots {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        grid: Vec<usize>,
    },
    /// Print the covariance matrix of a tree file as CSV.
    Treecov {
        #[arg(long)]
        tree: PathBuf,
        /// Rescale to unit diagonal.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HSIC of two Gram matrices stored as CSV.
    Hsic {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        kr: PathBuf,
    },
    /// Finite-difference check of every objective's gradient.
    Gradcheck {
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            exit_code(&e)
        }
    }
}

/// The context chain, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> ExitCode {
    let usage = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Io { .. })
        )
    });
    if usage {
        ExitCode::from(2)
    } else {
        ExitCode::FAILURE
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    create_dir(out)?;
    write(&out.join("report.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    write_labelled_matrix(
        &out.join("confusion.csv"),
        &report.confusion_rows,
        &report.confusion_cols,
        &report.confusion,
    )?;
    if let Some(k) = &report.kernel {
        write_labelled_matrix(&out.join("kernel.csv"), &report.kernel_classes, &report.kernel_classes, k)?;
    }
    println!(
        "accuracy {:.4} +- {:.4} over {} trials",
        report.accuracy_mean, report.accuracy_std, report.trials
    );
    Ok(())
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    serde_json::from_str::<SynthSpec>(&text).map_err(Error::from)?
                }
                None => SynthSpec::default(),
            };
            let data = generate_synthetic(&spec)?;
            create_dir(&out)?;
            data.bundle.save(&out)?;
            write_side_info_dir(&out.join(SIDEINFO_DIR), &data.sources)?;
            println!(
                "{} samples, {} classes, {} side-information sources -> {}",
                data.bundle.len(),
                data.bundle.num_classes(),
                data.sources.len(),
                out.display()
            );
        }
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let (bundle, sources) = cfg.load_data()?;
            let arch = Architecture::new(&bundle, &sources, &cfg.train)?;
            let seed = trial_seeds(cfg.train.seed, 1)[0];
            let (result, model, _) = run_trial(&bundle, &arch, &cfg.train, seed, &[])?;
            create_dir(&out)?;
            write(&out.join("model.json"), &(serde_json::to_string(&model.store)? + "\n"))?;
            let mut log = String::new();
            for r in &result.log {
                log.push_str(&serde_json::to_string(r)?);
                log.push('\n');
            }
            write(&out.join("log.jsonl"), &log)?;
            let last = result.log.last().map_or(f64::NAN, |r| r.total);
            println!(
                "{} iterations, final objective {last:.6}, test accuracy {:.4}",
                result.log.len(),
                result.accuracy
            );
        }
        Command::Eval { config, out } => {
            let cfg = load_config(&config)?;
            let (bundle, sources) = cfg.load_data()?;
            write_report(&out, &evaluate(&bundle, &sources, &cfg.train)?)?;
        }
        Command::EvalGeneralized { config, out } => {
            let cfg = load_config(&config)?;
            let (bundle, sources) = cfg.load_data()?;
            write_report(&out, &evaluate_generalized(&bundle, &sources, &cfg.train)?)?;
        }
        Command::SweepAlpha { config, out, grid } => {
            let cfg = load_config(&config)?;
            let (bundle, sources) = cfg.load_data()?;
            let grid = grid.unwrap_or_else(|| (0..=20).map(|i| i as f64 * 0.05).collect());
            let rows = sweep_alpha(&bundle, &sources, &cfg.train, &grid)?;
            write_sweep_csv(&out, "alpha", &rows)?;
            for r in &rows {
                println!("alpha {:<6} {:.4} +- {:.4}", r.value, r.accuracy_mean, r.accuracy_std);
            }
        }
        Command::SweepShots { config, out, grid } => {
            let cfg = load_config(&config)?;
            let (bundle, sources) = cfg.load_data()?;
            let rows = sweep_shots(&bundle, &sources, &cfg.train, &grid)?;
            write_sweep_csv(&out, "shots", &rows)?;
            for r in &rows {
                println!("shots {:<3} {:.4} +- {:.4}", r.value, r.accuracy_mean, r.accuracy_std);
            }
        }
        Command::Treecov { tree, normalize, out } => {
            let t = read_tree(&tree)?;
            let b = t.covariance();
            let m = if normalize { normalize_covariance(&b)? } else { b.0 };
            let names = t.class_names().to_vec();
            let rows = m.to_rows();
            match out {
                Some(path) => write_labelled_matrix(&path, &names, &names, &rows)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    writeln!(stdout, "class,{}", names.join(","))?;
                    for (name, row) in names.iter().zip(&rows) {
                        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                        writeln!(stdout, "{name},{}", cells.join(","))?;
                    }
                }
            }
        }
        Command::Hsic { kg, kr } => {
            let a = read_features(&kg)?;
            let b = read_features(&kr)?;
            if !a.is_square() || a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "Gram matrices must be square and of equal size, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                ))
                .into());
            }
            println!("{}", hsic(&a, &b)?);
        }
        Command::Gradcheck { points, seed } => {
            let suite = gradient_suite(points, seed)?;
            let mut ok = true;
            for e in &suite {
                let pass = e.passes(GRADCHECK_TOL);
                ok &= pass;
                print!(
                    "{:<20} {} points {:>6} entries  max rel err {:.3e}  {}",
                    e.objective,
                    e.points,
                    e.checked,
                    e.max_rel_err,
                    if pass { "ok" } else { "FAIL" }
                );
                match &e.worst {
                    Some((point, name, idx)) if !pass => println!("  (point {point}, {name}[{idx}])"),
                    _ => println!(),
                }
            }
            println!("step {GRADCHECK_STEP:e}, tolerance {GRADCHECK_TOL:e}");
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
