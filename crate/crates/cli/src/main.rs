use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gplaudit::defense::DEFAULT_BETAS;
use gplaudit::graphdata::{edge_homophily, generate_sbm, save_graph};
use gplaudit::harness::{
    emit_report, encoder_from_checkpoint, load_dataset, pair_projection, pretrain_checkpoint, read_results,
    run_experiment, write_run, Checkpoint, DatasetRef, ExperimentConfig, Pipeline, ReportContext, ReportLayout,
};
use gplaudit::prompt::CapabilityKind;

#[derive(Parser)]
#[command(name = "gplaudit", version, about = "Privacy audits of graph prompt learning pipelines")]
struct Cli {
    /// JSON experiment config; omitted fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel repetitions (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the config's SBM and write it as a graph bundle
    Synth,
    /// Pre-train the encoder for one repetition and save its checkpoint
    Pretrain {
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Tune the prompt for one repetition, optionally on a saved encoder
    Tune {
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Run every repetition and attack the clean releases
    Attack,
    /// Run every repetition and attack Laplace-perturbed releases
    Defend {
        /// Comma-separated noise scales; falls back to the config, then the default sweep
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Render tables and curves from a results file
    Report {
        /// Defaults to OUT/results.csv
        #[arg(long)]
        results: Option<PathBuf>,
        /// Layouts to emit; defaults to every table and curve the records support
        #[arg(long, value_delimiter = ',')]
        layout: Vec<ReportLayout>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_rep(cfg: &ExperimentConfig, rep: usize) -> Result<()> {
    if rep >= cfg.repetitions {
        bail!("repetition {rep} out of range; config has {}", cfg.repetitions);
    }
    Ok(())
}

fn checkpoint_path(out: &Path, cfg: &ExperimentConfig, what: &str, rep: usize) -> PathBuf {
    out.join("checkpoints").join(format!("{}-{what}-rep{rep:03}.ckpt", &cfg.hash()[..12]))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth => {
            let DatasetRef::Sbm(spec) = &cfg.dataset else {
                bail!("synth needs an sbm dataset in the config");
            };
            let g = generate_sbm(spec, cfg.seed)?;
            let dir = out.join(cfg.dataset_name());
            save_graph(&g, &dir)?;
            println!(
                "{}: {} nodes, {} edges, edge homophily {:.4}",
                dir.display(),
                g.num_nodes(),
                g.num_edges(),
                edge_homophily(&g)?
            );
        }
        Command::Pretrain { rep } => {
            check_rep(&cfg, *rep)?;
            let (g, _) = load_dataset(&cfg)?;
            let ck = pretrain_checkpoint(&g, &cfg, *rep)?;
            let path = checkpoint_path(out, &cfg, "encoder", *rep);
            ck.save(&path)?;
            println!("{}", path.display());
        }
        Command::Tune { rep, encoder } => {
            check_rep(&cfg, *rep)?;
            let (g, s) = load_dataset(&cfg)?;
            let p = match encoder {
                Some(path) => {
                    let enc = encoder_from_checkpoint(&Checkpoint::load(path)?, &cfg)?;
                    Pipeline::tune(g, s, &cfg, *rep, &enc)?
                }
                None => Pipeline::build(g, s, &cfg, *rep)?,
            };
            let path = checkpoint_path(out, &cfg, "pipeline", *rep);
            p.checkpoint(&cfg).save(&path)?;
            let utility = p.utility(&p.capability(CapabilityKind::Posterior)?)?;
            println!("{} utility {utility:.4}", path.display());
        }
        Command::Attack => {
            let cfg = ExperimentConfig { betas: None, ..cfg };
            experiment(&cfg, out)?;
        }
        Command::Defend { betas } => {
            let betas = betas.clone().or(cfg.betas.clone()).unwrap_or_else(|| DEFAULT_BETAS.to_vec());
            let cfg = ExperimentConfig {
                betas: Some(betas),
                ..cfg
            };
            cfg.validate()?;
            experiment(&cfg, out)?;
        }
        Command::Report { results, layout } => report(&cfg, out, results.as_deref(), layout)?,
    }
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let run = run_experiment(cfg)?;
    for f in &run.failures {
        eprintln!("warning: repetition {} (seed {}) failed: {}", f.rep, f.seed, f.error);
    }
    let files = write_run(&run, out)?;
    for r in &run.records {
        let beta = r.beta.map(|b| format!(" beta={b}")).unwrap_or_default();
        println!(
            "{} {} {}{beta}: auc {:.4}±{:.4} acc {:.4} utility {:.4}",
            r.capability, r.task, r.attacker, r.auc_mean, r.auc_ci95, r.acc_mean, r.utility_mean
        );
    }
    println!("wrote {} ({:.1}s)", files.results.display(), run.wall_time_secs);
    Ok(())
}

fn report(cfg: &ExperimentConfig, out: &Path, results: Option<&Path>, layouts: &[ReportLayout]) -> Result<()> {
    let path = results.map(Path::to_path_buf).unwrap_or_else(|| out.join("results.csv"));
    let records = read_results(&path).with_context(|| format!("reading {}", path.display()))?;
    let explicit = !layouts.is_empty();
    let layouts = if explicit {
        layouts.to_vec()
    } else {
        vec![ReportLayout::AiaTable, ReportLayout::LiaTable, ReportLayout::BetaCurves]
    };

    let needs_graph = layouts.contains(&ReportLayout::Connectivity) || layouts.contains(&ReportLayout::Projection2d);
    let dataset = if needs_graph { Some(load_dataset(cfg)?) } else { None };
    let projection = match &dataset {
        Some((g, s)) if layouts.contains(&ReportLayout::Projection2d) => {
            let p = Pipeline::build(g.clone(), s.clone(), cfg, 0)?;
            Some(pair_projection(&p, CapabilityKind::Embedding, 200)?)
        }
        _ => None,
    };
    let ctx = ReportContext {
        graph: dataset.as_ref().map(|(g, _)| g.as_ref()),
        projection: projection.as_ref(),
    };
    let dir = out.join("report");
    for layout in layouts {
        match emit_report(&records, layout, &ctx, &dir) {
            Ok(files) => files.iter().for_each(|f| println!("{}", f.display())),
            Err(e) if !explicit => eprintln!("skipping {}: {e}", layout.name()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the thread pool")?;
    }
    run(&cli)
}
