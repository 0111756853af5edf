//! Command-line front end: training runs, checkpoint evaluation, diagram
//! dumps, the expressivity search, discretization-error tables, and dataset
//! generation. Every subcommand that produces files takes `--out <dir>` and
//! writes fixed filenames there so downstream tooling never guesses paths.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use topnet::harness::{
    self, build_examples, diagrams_for, eval_checkpoint, expressivity_experiment, gen_beta2,
    gen_geometric_toy, gen_wl_hard, load_dataset, ode_error_experiment, save_dataset,
    DiagramKind, RunConfig,
};

#[derive(Parser)]
#[command(name = "topnet", about = "topological neural networks over simplicial complexes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a JSON run config; TOPNET_SEED overrides the
    /// config seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print persistence diagrams for every record in a dataset.
    Diagrams {
        #[arg(long)]
        data: PathBuf,
        /// vc | edge | geom | rephine
        #[arg(long)]
        filtration: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for a pair of colored complexes that ties the combinatorial
    /// refinement but splits the color-filtration diagrams.
    Expressivity {
        #[arg(long, default_value_t = 8)]
        max_vertices: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the continuous-depth model at several step counts and
    /// report errors against a fine reference.
    OdeError {
        /// Comma-separated step counts, e.g. 8,16,32,64.
        #[arg(long, default_value = "8,16,32,64")]
        steps: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as JSONL.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        /// Number of records (pair generators emit 2 records per unit).
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Cycle pairs the 1-WL refinement cannot distinguish.
    WlHard,
    /// Planar point clouds with a component-count regression target.
    Geom,
    /// Hollow versus solid tetrahedra sharing a 2-skeleton.
    Beta2,
}

fn write_out(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train { config, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("read {}", config.display()))?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .with_context(|| format!("parse {}", config.display()))?;
            let env_seed = std::env::var("TOPNET_SEED").ok();
            let outcome = harness::train(&cfg, out.as_deref(), env_seed.as_deref())?;
            println!(
                "best epoch {} val score {:.4} test score {:.4}",
                outcome.best_epoch, outcome.best_val.score, outcome.test.score
            );
            if let Some(dir) = out.as_deref().map(Path::to_path_buf).or_else(|| {
                cfg.out_dir.as_ref().map(PathBuf::from)
            }) {
                println!("outputs under {}", dir.display());
            }
        }
        Cmd::Eval { checkpoint, data, out } => {
            let report = eval_checkpoint(&checkpoint, &data, out.as_deref())?;
            println!(
                "{} examples loss {:.6} score {:.4}",
                report.n_examples, report.metrics.loss, report.metrics.score
            );
        }
        Cmd::Diagrams { data, filtration, out } => {
            let kind: DiagramKind = filtration.parse().map_err(anyhow::Error::msg)?;
            let records = load_dataset(&data)?;
            let examples = build_examples(&records)?;
            let mut blocks = Vec::with_capacity(examples.len());
            for ex in &examples {
                blocks.push(diagrams_for(ex, kind)?);
            }
            let body = blocks.join("\n");
            match out {
                Some(dir) => write_out(&dir, "diagrams.txt", &body)?,
                None => print!("{body}"),
            }
        }
        Cmd::Expressivity { max_vertices, out } => {
            let report = expressivity_experiment(max_vertices, out.as_deref())?;
            println!(
                "witness pair on {} and {} vertices, filtration {}, diagrams differ in dim {}",
                report.left_vertices, report.right_vertices, report.filtration,
                report.differing_dim
            );
        }
        Cmd::OdeError { steps, seed, out } => {
            let counts: Vec<usize> = steps
                .split(',')
                .map(|s| s.trim().parse().with_context(|| format!("bad step count {s:?}")))
                .collect::<Result<_>>()?;
            let report = ode_error_experiment(&counts, seed)?;
            let csv = report.to_csv();
            match out {
                Some(dir) => {
                    write_out(&dir, "metrics.csv", &csv)?;
                    let json = serde_json::to_string_pretty(&report)?;
                    write_out(&dir, "report.json", &json)?;
                }
                None => print!("{csv}"),
            }
        }
        Cmd::Gen { kind, n, seed, out } => {
            let records = match kind {
                GenKind::WlHard => gen_wl_hard(n, seed),
                GenKind::Geom => gen_geometric_toy(n, seed),
                GenKind::Beta2 => gen_beta2(n, seed),
            };
            save_dataset(&out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(())
}
