//! Command-line front end. Job subcommands take a JSON config file, flags,
//! or both; flags override the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mapsmith::gateway::Gateway;
use mapsmith::mapping::{chase_with, Mapping, TransformRegistry};
use mapsmith::matching::{Aggregation, Fusion};
use mapsmith::schema::{Instance, SchemaDef};

use crate::backend::{BackendKind, BackendSpec};
use crate::executor::Executor;
use crate::jobs::{execute, load_mapping, JobConfig, JobResult};
use crate::store::JobStore;

#[derive(Debug, Parser)]
#[command(name = "mapsmith", version, about = "Schema matching and mapping generation with sampled LLM answers")]
pub struct Cli {
    /// Base seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "demo")]
    pub backend: BackendKind,
    /// Fixture directory for the mock backend.
    #[arg(long, global = true)]
    pub mock_fixtures: Option<PathBuf>,
    /// Save every model response as a fixture in this directory.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    /// Also write the model transcript here.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank attribute correspondences between two schemas.
    Match(MatchArgs),
    /// Ask the model for a mapping script.
    Mapgen(MapGenArgs),
    /// Materialize a target instance from a mapping.
    Chase(ChaseArgs),
    /// Evaluate the matching methods against a gold alignment.
    Eval(EvalArgs),
    /// Sweep rules-per-prompt against a gold mapping.
    MrppSweep(SweepArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Export the reviewed alignment of a stored match job.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON job configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Write the result here instead of stdout (a directory for eval and sweeps).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub source_relation: Option<String>,
    #[arg(long)]
    pub target_relation: Option<String>,
    /// Gold alignment (used by the demo backend).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Samples per direction.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_aggregation)]
    pub aggregation: Option<Aggregation>,
    /// average, multiply or stable:K
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<Fusion>,
    #[arg(long)]
    pub prefilter: bool,
    /// Forward direction only.
    #[arg(long)]
    pub one_way: bool,
}

#[derive(Debug, Args)]
pub struct MapGenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Mapping echoed by the demo backend (.sql or .json).
    #[arg(long)]
    pub gold_mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChaseArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Mapping as SQL or a JSON rule list.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Source instance (JSON).
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub stable_rounds: Option<usize>,
    #[arg(long)]
    pub average_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub gold_mapping: Option<PathBuf>,
    /// Comma-separated rules-per-prompt values.
    #[arg(long, value_delimiter = ',')]
    pub mrpp: Option<Vec<usize>>,
    /// Repetitions per value.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub overlap_aware: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value = "jobs")]
    pub store: PathBuf,
    /// Jobs running at once.
    #[arg(long, default_value_t = 2)]
    pub max_jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, default_value = "jobs")]
    pub store: PathBuf,
    pub job: String,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| format!("unknown aggregation {s}; expected union, majority or intersection"))
}

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    match s.to_lowercase().as_str() {
        "average" => Ok(Fusion::Average),
        "multiply" => Ok(Fusion::Multiply),
        other => match other.strip_prefix("stable") {
            Some("") => Ok(Fusion::Stable { k: 1 }),
            Some(k) => k
                .trim_start_matches([':', '='])
                .parse()
                .map(|k| Fusion::Stable { k })
                .map_err(|_| format!("bad stable k in {s}")),
            None => Err(format!("unknown fusion {s}; expected average, multiply or stable:K")),
        },
    }
}

fn read_config(path: &Path) -> Result<JobConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: JobConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(config.rebased(path.parent().unwrap_or(Path::new("."))))
}

fn need(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.with_context(|| format!("--{flag} is required without --config"))
}

fn base_config(common: &Common, fresh: impl FnOnce(PathBuf, PathBuf) -> Result<JobConfig>) -> Result<JobConfig> {
    let mut cfg = match &common.config {
        Some(p) => read_config(p)?,
        None => fresh(
            need(common.source.clone(), "source")?,
            need(common.target.clone(), "target")?,
        )?,
    };
    match &mut cfg {
        JobConfig::Match { source, target, .. }
        | JobConfig::MapGen { source, target, .. }
        | JobConfig::Eval { source, target, .. }
        | JobConfig::MrppSweep { source, target, .. } => {
            if let Some(s) = &common.source {
                *source = s.clone();
            }
            if let Some(t) = &common.target {
                *target = t.clone();
            }
        }
    }
    Ok(cfg)
}

fn match_config(a: &MatchArgs) -> Result<JobConfig> {
    let mut cfg = base_config(&a.common, |source, target| {
        Ok(JobConfig::Match {
            source,
            target,
            source_relation: None,
            target_relation: None,
            gold: None,
            config: Default::default(),
        })
    })?;
    let JobConfig::Match {
        source_relation,
        target_relation,
        gold,
        config,
        ..
    } = &mut cfg
    else {
        bail!("the config file does not describe a match job");
    };
    if a.source_relation.is_some() {
        source_relation.clone_from(&a.source_relation);
    }
    if a.target_relation.is_some() {
        target_relation.clone_from(&a.target_relation);
    }
    if a.gold.is_some() {
        gold.clone_from(&a.gold);
    }
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(x) = a.aggregation {
        config.aggregation = x;
    }
    if let Some(f) = a.fusion {
        config.fusion = f;
    }
    config.prefilter |= a.prefilter;
    if a.one_way {
        config.bidirectional = false;
    }
    Ok(cfg)
}

fn mapgen_config(a: &MapGenArgs) -> Result<JobConfig> {
    let mut cfg = base_config(&a.common, |source, target| {
        Ok(JobConfig::MapGen {
            source,
            target,
            gold_mapping: None,
            seed: 0,
            transform: Default::default(),
        })
    })?;
    let JobConfig::MapGen { gold_mapping, .. } = &mut cfg else {
        bail!("the config file does not describe a mapgen job");
    };
    if a.gold_mapping.is_some() {
        gold_mapping.clone_from(&a.gold_mapping);
    }
    Ok(cfg)
}

fn eval_config(a: &EvalArgs) -> Result<JobConfig> {
    let mut cfg = base_config(&a.common, |source, target| {
        Ok(JobConfig::Eval {
            source,
            target,
            gold: need(a.gold.clone(), "gold")?,
            seeds: vec![0, 1, 2],
            config: Default::default(),
            stable_rounds: 2,
            average_k: 3,
        })
    })?;
    let JobConfig::Eval {
        gold,
        seeds,
        config,
        stable_rounds,
        average_k,
        ..
    } = &mut cfg
    else {
        bail!("the config file does not describe an eval job");
    };
    if let Some(g) = &a.gold {
        gold.clone_from(g);
    }
    if let Some(s) = &a.seeds {
        seeds.clone_from(s);
    }
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(r) = a.stable_rounds {
        *stable_rounds = r;
    }
    if let Some(k) = a.average_k {
        *average_k = k;
    }
    Ok(cfg)
}

fn sweep_config(a: &SweepArgs) -> Result<JobConfig> {
    let mut cfg = base_config(&a.common, |source, target| {
        Ok(JobConfig::MrppSweep {
            source,
            target,
            gold_mapping: need(a.gold_mapping.clone(), "gold-mapping")?,
            instance: Default::default(),
            config: Default::default(),
        })
    })?;
    let JobConfig::MrppSweep {
        gold_mapping,
        instance,
        config,
        ..
    } = &mut cfg
    else {
        bail!("the config file does not describe an mrpp-sweep job");
    };
    if let Some(g) = &a.gold_mapping {
        gold_mapping.clone_from(g);
    }
    if let Some(m) = &a.mrpp {
        config.mrpp.clone_from(m);
    }
    if let Some(r) = a.rows {
        instance.rows_per_table = r;
    }
    config.overlap_aware |= a.overlap_aware;
    Ok(cfg)
}

impl Cli {
    fn backend(&self) -> BackendSpec {
        BackendSpec {
            kind: self.backend,
            fixtures: self.mock_fixtures.clone(),
            record: self.record.clone(),
        }
    }

    fn run_job(&self, mut config: JobConfig) -> Result<JobResult> {
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if let (JobConfig::MrppSweep { config: c, .. }, Command::MrppSweep(a)) = (&mut config, &self.command) {
            if let Some(r) = a.repeats {
                c.seeds = mapsmith::eval::MrppConfig::seeds_from(self.seed.unwrap_or(0), r);
            }
        }
        let inputs = config.load()?;
        let mut gateway = Gateway::new(self.backend().build(&inputs)?);
        if let Some(p) = &self.transcript {
            gateway = gateway.with_transcript_file(p)?;
        }
        let result = execute(&inputs, &gateway)?;
        let usage = gateway.usage();
        tracing::info!(
            backend = gateway.backend_name(),
            input_tokens = usage.input_tokens,
            output_tokens = usage.output_tokens,
            "done"
        );
        Ok(result)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn write_dir(dir: Option<&Path>, files: &[(&str, String)], summary: &str) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        for (name, text) in files {
            std::fs::write(d.join(name), text).with_context(|| format!("writing {name}"))?;
        }
    }
    print!("{summary}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Match(a) => {
            let JobResult::Match { results } = cli.run_job(match_config(a)?)? else {
                unreachable!()
            };
            emit(a.common.out.as_deref(), &serde_json::to_string_pretty(&results)?)
        }
        Command::Mapgen(a) => {
            let JobResult::MapGen(r) = cli.run_job(mapgen_config(a)?)? else {
                unreachable!()
            };
            for d in &r.diagnostics {
                eprintln!("statement {}: {} ({})", d.statement, d.message, d.excerpt);
            }
            emit(a.common.out.as_deref(), &r.sql)
        }
        Command::Eval(a) => {
            let JobResult::Eval { table } = cli.run_job(eval_config(a)?)? else {
                unreachable!()
            };
            write_dir(
                a.common.out.as_deref(),
                &[
                    ("methods.csv", table.to_csv()),
                    ("methods.json", serde_json::to_string_pretty(&table)?),
                ],
                &table.render_text(),
            )
        }
        Command::MrppSweep(a) => {
            let JobResult::MrppSweep { report } = cli.run_job(sweep_config(a)?)? else {
                unreachable!()
            };
            write_dir(
                a.common.out.as_deref(),
                &[
                    ("runs.csv", report.runs_csv()),
                    ("tokens.csv", report.tokens_csv()),
                    ("prompt_tokens.csv", report.prompt_tokens_csv()),
                    ("plot.csv", report.plot_csv()),
                    ("report.json", serde_json::to_string_pretty(&report)?),
                ],
                &report.render_text(),
            )
        }
        Command::Chase(a) => {
            let source = Arc::new(SchemaDef::load(&a.source)?);
            let target = Arc::new(SchemaDef::load(&a.target)?);
            let mapping: Mapping = load_mapping(&a.mapping, &source, &target)?;
            let instance = Instance::load(&a.instance, &source)?;
            let out = chase_with(&mapping, &instance, &TransformRegistry::default());
            for e in &out.errors {
                eprintln!("{e:?}");
            }
            emit(a.out.as_deref(), &out.instance.to_json_string())
        }
        Command::Serve(a) => serve(&cli, a),
        Command::Export(a) => {
            let store = JobStore::open(&a.store)?;
            emit(a.out.as_deref(), &store.export(&a.job)?.to_json())
        }
    }
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let store = Arc::new(JobStore::open(&a.store)?);
    let executor = Executor::new(store, cli.backend(), a.max_jobs);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        tracing::info!(addr = %a.addr, store = %a.store.display(), "serving");
        axum::serve(listener, crate::http::router(executor)).await?;
        Ok(())
    })
}
