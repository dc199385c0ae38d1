use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use degrade_bench::codec::{save_image, ImageFormat};
use degrade_bench::cohort::{load_manifest, make_split, FaceRecord, Presence};
use degrade_bench::degrade::{DegradationFactor, FactorKind};
use degrade_bench::ident::{builtin_embed, write_emb1, Embedding};
use degrade_bench::report::{
    emit_plots, execute, image_key, probe_image, read_curves, ExperimentConfig, ProviderSpec,
};
use degrade_bench::synth::{generate_corpus, SynthOptions};
use degrade_bench::{Error, Result};

#[derive(Parser)]
#[command(name = "degrade-bench", version, about = "Degradation-conditioned 1:n identification error curves")]
struct Cli {
    /// Log progress (-v) or details (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for config keys. Flags win over the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// builtin or embeddings-file:PATH
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    replications: Option<usize>,
    /// per-comparison or per-probe
    #[arg(long)]
    tally: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.plan.seed = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = &self.provider {
            cfg.provider = v.parse()?;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.plots {
            cfg.plots = true;
        }
        if let Some(v) = self.replications {
            cfg.plan.replications = v;
        }
        if let Some(v) = &self.tally {
            cfg.tally = v.parse()?;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one replication's gallery and probes and write them to sample.csv.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Write degraded copies of a few records at every configured level.
    Degrade {
        #[command(flatten)]
        common: Common,
        /// Number of records to treat.
        #[arg(long, default_value_t = 4)]
        limit: usize,
    },
    /// Embed every record and every probe variant with the builtin embedder into an EMB1 file.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to OUT/embeddings.emb.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full experiment and write curves.csv, counts.csv and config-echo.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Re-render plots from an existing curves.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/curves.csv.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Generate the synthetic corpus (PNG faces plus manifest.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        identities: usize,
        #[arg(long, default_value_t = 112)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also render pose levels -5..5.
        #[arg(long)]
        pose: bool,
    },
}

fn create_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn sample(cfg: &ExperimentConfig, replication: usize) -> Result<()> {
    let pop = load_manifest(&cfg.manifest)?.records;
    let split = make_split(&pop, &cfg.plan, &cfg.target, replication)?;
    create_out(cfg)?;
    let path = cfg.out.join("sample.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let data = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["role", "id", "race", "gender"]).map_err(data)?;
    let mut put = |role: &str, r: &FaceRecord| {
        w.write_record([role, &r.id, r.race.name(), r.gender.name()]).map_err(data)
    };
    for g in &split.gallery {
        put("gallery", g)?;
    }
    for p in &split.probes {
        let role = match p.presence {
            Presence::TargetPresent => "target_present",
            Presence::TargetAbsent => "target_absent",
        };
        put(role, &p.record)?;
    }
    drop(put);
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn degrade(cfg: &ExperimentConfig, limit: usize) -> Result<()> {
    let pop = load_manifest(&cfg.manifest)?.records;
    let dir = cfg.out.join("degraded");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut n = 0;
    for rec in pop.iter().take(limit) {
        for factor in cfg.levels()? {
            if factor.kind() == FactorKind::Pose && rec.pose_variants.is_none() {
                continue;
            }
            let img = probe_image(rec, &factor)?;
            let name = format!("{}@{}.png", rec.id, factor);
            save_image(&img, dir.join(name), ImageFormat::Png)?;
            n += 1;
        }
    }
    println!("wrote {n} images to {}", dir.display());
    Ok(())
}

fn embed(cfg: &ExperimentConfig, output: Option<PathBuf>) -> Result<()> {
    let pop = load_manifest(&cfg.manifest)?.records;
    let mut jobs: Vec<(usize, DegradationFactor)> = Vec::new();
    let baseline = DegradationFactor::baseline(FactorKind::Contrast);
    for (i, rec) in pop.iter().enumerate() {
        jobs.push((i, baseline));
        for factor in cfg.levels()? {
            let bare = factor.is_baseline() && factor.kind() != FactorKind::Pose;
            if bare || (factor.kind() == FactorKind::Pose && rec.pose_variants.is_none()) {
                continue;
            }
            jobs.push((i, factor));
        }
    }
    let records: Vec<Embedding> = jobs
        .par_iter()
        .map(|(i, f)| {
            let key = image_key(&pop[*i].id, f);
            probe_image(&pop[*i], f).map(|img| builtin_embed(key, &img))
        })
        .collect::<Result<_>>()?;
    let path = output.unwrap_or_else(|| cfg.out.join("embeddings.emb"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_emb1(&path, &records)?;
    println!("wrote {} embeddings to {}", records.len(), path.display());
    Ok(())
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let results = execute(cfg)?;
    for kind in &results.skipped {
        eprintln!("skipped factor {kind}: no renderings in the manifest");
    }
    println!(
        "wrote {} curve rows to {}",
        results.curves.len(),
        cfg.out.join("curves.csv").display()
    );
    Ok(())
}

fn report(cfg: &ExperimentConfig, curves: Option<PathBuf>) -> Result<()> {
    let path = curves.unwrap_or_else(|| cfg.out.join("curves.csv"));
    let points = read_curves(&path)?;
    create_out(cfg)?;
    for p in emit_plots(&points, &cfg.subgroups, &cfg.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { common, replication } => sample(&common.config()?, replication),
        Command::Degrade { common, limit } => degrade(&common.config()?, limit),
        Command::Embed { common, output } => {
            let cfg = common.config()?;
            if cfg.provider != ProviderSpec::Builtin {
                return Err(Error::usage("embed always uses the builtin embedder"));
            }
            embed(&cfg, output)
        }
        Command::Run { common } => run(&common.config()?),
        Command::Report { common, curves } => report(&common.config()?, curves),
        Command::Synth {
            out,
            identities,
            size,
            seed,
            pose,
        } => {
            let opts = SynthOptions {
                identities,
                size,
                seed,
                pose_levels: if pose { (-5..=5).map(f64::from).collect() } else { Vec::new() },
            };
            let recs = generate_corpus(&out, &opts)?;
            println!("wrote {} identities to {}", recs.len(), out.join("manifest.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
