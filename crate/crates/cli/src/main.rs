use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dscomplex::pipeline::{self, DatasetSpec, PipelineError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "dscomplex", version, about = "Entropy, intrinsic dimension and embedding reports for image datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-image Shannon, GLCM and delentropy into <out>/<dataset>/entropy.csv.
    Analyze,
    /// Maximum-likelihood intrinsic dimension per dataset.
    Intdim,
    /// 2-D embeddings over the configured n_neighbors sweep.
    Embed,
    /// Distribution fits, rankings, tables and plots from earlier outputs.
    Report,
    /// analyze, intdim, embed and report in sequence.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset as ID=ROOT; repeatable, replaces configured datasets.
    #[arg(long = "dataset", global = true, value_parser = parse_dataset)]
    datasets: Vec<DatasetSpec>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Embedding seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    glcm_levels: Option<usize>,
    /// GLCM offset as DX,DY.
    #[arg(long, global = true, value_parser = parse_offset, allow_hyphen_values = true)]
    glcm_offset: Option<(i32, i32)>,
    #[arg(long, global = true)]
    deldensity_bins: Option<usize>,
    /// Report the full deldensity entropy instead of half of it.
    #[arg(long, global = true)]
    no_half_factor: bool,
    /// Intrinsic-dimension neighbor range as K1,K2.
    #[arg(long, global = true, value_parser = parse_pair)]
    k_range: Option<(usize, usize)>,
    /// Comma-separated n_neighbors sweep for embed.
    #[arg(long, global = true, value_delimiter = ',')]
    neighbors: Option<Vec<usize>>,
    #[arg(long, global = true)]
    min_dist: Option<f64>,
}

fn parse_dataset(s: &str) -> Result<DatasetSpec, String> {
    let (id, root) = s.split_once('=').ok_or("expected ID=ROOT")?;
    Ok(DatasetSpec {
        id: id.to_string(),
        root: PathBuf::from(root),
    })
}

fn split2(s: &str) -> Result<(&str, &str), String> {
    s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))
}

fn parse_offset(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = split2(s)?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = split2(s)?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.datasets.is_empty() {
            cfg.datasets = self.datasets.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(s) = self.seed {
            cfg.embed.seed = s;
        }
        if let Some(l) = self.glcm_levels {
            cfg.entropy.glcm_levels = l;
        }
        if let Some(o) = self.glcm_offset {
            cfg.entropy.glcm_offset = o;
        }
        if let Some(b) = self.deldensity_bins {
            cfg.entropy.deldensity_bins = b;
        }
        if self.no_half_factor {
            cfg.entropy.half_factor = false;
        }
        if let Some((k1, k2)) = self.k_range {
            cfg.intdim.k1 = k1;
            cfg.intdim.k2 = k2;
        }
        if let Some(n) = &self.neighbors {
            cfg.embed.neighbors = n.clone();
        }
        if let Some(d) = self.min_dist {
            cfg.embed.min_dist = d;
        }
    }
}

#[derive(Debug, Default)]
struct Outcome {
    warnings: usize,
    failed: usize,
}

impl Outcome {
    fn absorb<T>(&mut self, results: &[Result<T, PipelineError>]) {
        self.failed += results.iter().filter(|r| r.is_err()).count();
    }
}

/// Keeps only datasets whose stage succeeded so later stages do not trip on them.
fn surviving<T>(cfg: &RunConfig, results: &[Result<T, PipelineError>]) -> RunConfig {
    let mut next = cfg.clone();
    next.datasets = cfg
        .datasets
        .iter()
        .zip(results)
        .filter(|(_, r)| r.is_ok())
        .map(|(d, _)| d.clone())
        .collect();
    next
}

fn analyze(cfg: &RunConfig, outcome: &mut Outcome) -> anyhow::Result<RunConfig> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let results = pipeline::cmd_analyze(cfg)?;
    for s in results.iter().flatten() {
        outcome.warnings += s.warnings();
        println!(
            "analyze {}: {} images, {} decoded, {} cached, {} failed",
            s.dataset_id, s.images, s.decoded, s.cache_hits, s.failed
        );
    }
    outcome.absorb(&results);
    if results.iter().all(|r| r.is_err()) {
        bail!("every dataset failed");
    }
    Ok(surviving(cfg, &results))
}

fn intdim(cfg: &RunConfig, outcome: &mut Outcome) -> anyhow::Result<()> {
    let results = pipeline::cmd_intdim(cfg)?;
    for (spec, r) in cfg.datasets.iter().zip(&results) {
        if let Ok(est) = r {
            println!("intdim {}: pooled {:.4} over k in [{}, {}]", spec.id, est.pooled, est.k_range.0, est.k_range.1);
        }
    }
    outcome.absorb(&results);
    Ok(())
}

fn embed(cfg: &RunConfig, outcome: &mut Outcome) -> anyhow::Result<()> {
    let results = pipeline::cmd_embed(cfg)?;
    for (spec, r) in cfg.datasets.iter().zip(&results) {
        if let Ok(paths) = r {
            let skipped = cfg.embed.neighbors.len() - paths.len();
            outcome.warnings += skipped;
            println!("embed {}: {} embeddings, {} skipped", spec.id, paths.len(), skipped);
        }
    }
    outcome.absorb(&results);
    Ok(())
}

fn report(cfg: &RunConfig) -> anyhow::Result<()> {
    let file = pipeline::cmd_report(cfg)?;
    println!(
        "report: {} datasets -> {}",
        file.datasets.len(),
        cfg.output_dir.join("summary.json").display()
    );
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let mut cfg = match &cli.overrides.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;

    let mut outcome = Outcome::default();
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Analyze => {
            analyze(&cfg, &mut outcome)?;
        }
        Command::Intdim => intdim(&cfg, &mut outcome)?,
        Command::Embed => embed(&cfg, &mut outcome)?,
        Command::Report => report(&cfg)?,
        Command::All => {
            let ok = analyze(&cfg, &mut outcome)?;
            std::fs::write(cfg.output_dir.join("run_config.toml"), cfg.to_toml())
                .context("writing run_config.toml")?;
            intdim(&ok, &mut outcome)?;
            embed(&ok, &mut outcome)?;
            report(&ok)?;
        }
    }
    Ok(outcome)
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "ts={} level={} target={} {}",
                buf.timestamp_millis(),
                record.level(),
                record.target(),
                record.args()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(o) if o.failed == 0 && o.warnings == 0 => ExitCode::SUCCESS,
        Ok(o) => {
            log::warn!("event=finished_with_warnings warnings={} failed_datasets={}", o.warnings, o.failed);
            ExitCode::from(1)
        }
        Err(e) => {
            if log::log_enabled!(log::Level::Error) {
                log::error!("event=fatal error={e:#}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
