use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sbmpa::backends::{Recorder, ScoredGenerator};
use sbmpa::config::{
    load_ruleset, parse_filter, parse_matcher, parse_mode, parse_top_k, BackendConfig, BackendKind, EmbedderConfig,
    RunDefaults,
};
use sbmpa::error::RunError;
use sbmpa::pipeline::ablate::{format_report, run_ablation, AblationInput};
use sbmpa::pipeline::aggregate::aggregate_records;
use sbmpa::pipeline::audit::{format_audit, run_audit};
use sbmpa::pipeline::chain::{run_chain, ChainFile, ChainSettings};
use sbmpa::pipeline::eval::{evaluate, format_summary, EvalOptions};
use sbmpa::pipeline::probe::{parse_modes, run_probes, ProbeOptions, ViewSelection};
use sbmpa::pipeline::sibling;
use sbmpa::service::{self, ServiceConfig, SystemClock, DEFAULT_PORT};
use sbmpa::store::{load_captions, load_label_set, load_manifest, load_merges, read_records, write_records};
use sbmpa_core::metrics::{KeywordRule, Matcher};
use sbmpa_core::{AggregateDistribution, ProbeRecord};

#[derive(Parser)]
#[command(name = "sbmpa", version, about = "Aggregate scored model responses into per-object answer distributions")]
struct Cli {
    /// TOML file with defaults for backend, ruleset, mode, filter, matcher, k and concurrency.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the stub backend (ignored by other backends).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query the backend for every object, view and template.
    Probe(ProbeArgs),
    /// Collapse probe records into one distribution per object and property.
    Aggregate(AggregateArgs),
    /// Score aggregates against labels.
    Eval(EvalArgs),
    /// Compare VLM-mode and LLM-mode distributions.
    Ablate(AblateArgs),
    /// Blow-up ratios and keyword fractions of caption summaries.
    Audit(AuditArgs),
    /// Run a multi-stage prompt chain.
    Chain(ChainArgs),
    /// Serve the curation API.
    ServeCuration(ServeArgs),
    /// Write the verified label set from a decision log without a server.
    Export(ExportArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// `stub`, `stub:SEED`, `replay:PATH` or a backend TOML file.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    num_candidates: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Skip probes missing from a replay fixture instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Also write every exchange as replay fixtures to this file.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Prompt template records.
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, default_value = "all")]
    views: ViewSelection,
    #[arg(long, default_value = "vlm")]
    modes: String,
    /// Property the answers describe (stored on each record).
    #[arg(long)]
    property: Option<String>,
    /// Fixed slot value, e.g. `--slot T=spoon`.
    #[arg(long = "slot", value_parser = parse_slot)]
    slots: Vec<(String, String)>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    probes: PathBuf,
    #[arg(long)]
    ruleset: Option<String>,
    /// `lse` or `max`.
    #[arg(long)]
    mode: Option<String>,
    /// e.g. `views=0,1,2;questions=q1,q2;mode=vlm`.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    aggregates: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Label merge map (JSON object) applied to the labels before matching.
    #[arg(long)]
    merges: Option<PathBuf>,
    /// `topk`, `soft`, `similarity`; may be repeated or comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["topk".to_string(), "soft".to_string()])]
    metric: Vec<String>,
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    property: Option<String>,
    #[arg(long)]
    label_source: Option<String>,
    /// `fixture:PATH` or an embedder TOML file; needed for `similarity`.
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    probes_vlm: PathBuf,
    #[arg(long)]
    probes_llm: PathBuf,
    #[arg(long)]
    ruleset: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Labels for the accuracy/divergence fit.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Summary captions (JSONL caption records or CSV).
    #[arg(long)]
    summaries: PathBuf,
    /// Per-view captions (JSONL caption records or CSV).
    #[arg(long)]
    per_view: PathBuf,
    /// Keyword rule records.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Rows to print.
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    stages: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "all")]
    views: ViewSelection,
    #[arg(long)]
    ruleset: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    aggregates: Option<PathBuf>,
    #[arg(long)]
    views_dir: Option<PathBuf>,
    /// Static UI bundle served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[arg(long)]
    merges: Option<PathBuf>,
    /// Bearer token required on /api; also read from SBMPA_TOKEN.
    #[arg(long, env = "SBMPA_TOKEN")]
    token: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_slot(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.to_string()))
}

struct Ctx {
    defaults: RunDefaults,
    seed: Option<u64>,
}

impl Ctx {
    fn ruleset(&self, flag: Option<&str>) -> Result<sbmpa_core::CanonRuleset, RunError> {
        let name = flag.or(self.defaults.ruleset.as_deref()).unwrap_or("identity");
        Ok(load_ruleset(name)?)
    }

    fn mode(&self, flag: Option<&str>) -> Result<sbmpa_core::AggMode, RunError> {
        Ok(parse_mode(flag.or(self.defaults.mode.as_deref()).unwrap_or("lse"))?)
    }

    fn matcher(&self, flag: Option<&str>) -> Result<Matcher, RunError> {
        Ok(parse_matcher(flag.or(self.defaults.matcher.as_deref()).unwrap_or("exact"))?)
    }

    fn backend(&self, args: &BackendArgs) -> Result<BackendConfig, RunError> {
        let spec = args.backend.as_deref().or(self.defaults.backend.as_deref()).unwrap_or("stub");
        let mut config = BackendConfig::load(spec)?;
        if let Some(seed) = self.seed.or(self.defaults.seed) {
            if config.kind == BackendKind::Stub {
                config.seed = seed;
            } else if self.seed.is_some() {
                eprintln!("warning: --seed only affects the stub backend");
            }
        }
        if let Some(n) = args.num_candidates.or(self.defaults.num_candidates) {
            config.num_candidates = n;
        }
        if let Some(n) = args.max_in_flight.or(self.defaults.max_in_flight) {
            config.max_in_flight = n;
        }
        if args.lenient {
            config.strict = false;
        }
        Ok(config)
    }
}

/// Builds the generator, runs `f`, then writes recorded fixtures if asked.
fn with_generator<T>(
    config: &BackendConfig,
    record: Option<&Path>,
    f: impl FnOnce(&dyn ScoredGenerator) -> Result<T, RunError>,
) -> Result<T, RunError> {
    let generator = config.build()?;
    match record {
        None => f(generator.as_ref()),
        Some(path) => {
            let recorder = Recorder::new(generator);
            let out = f(&recorder);
            let fixtures = recorder.fixtures();
            write_records(path, &fixtures)?;
            eprintln!("recorded {} fixtures to {}", fixtures.len(), path.display());
            out
        }
    }
}

fn probe(ctx: &Ctx, args: ProbeArgs) -> Result<(), RunError> {
    let manifest = load_manifest(&args.manifest)?;
    let templates = read_records(&args.templates)?;
    let backend = ctx.backend(&args.backend)?;
    let options = ProbeOptions {
        views: args.views,
        modes: parse_modes(&args.modes).map_err(RunError::Config)?,
        slots: args.slots.into_iter().collect(),
        property: args.property,
        num_candidates: backend.num_candidates,
        max_in_flight: backend.max_in_flight,
        strict: backend.strict,
    };
    let run = with_generator(&backend, args.backend.record.as_deref(), |g| {
        run_probes(g, &manifest, &templates, &options)
    })?;
    write_records(&args.out, &run.records)?;
    for f in run.skipped.iter().take(20) {
        eprintln!("skipped: {f}");
    }
    for f in run.failures.iter().take(20) {
        eprintln!("error: {f}");
    }
    println!("{}", run.summary());
    if let Some(first) = run.failures.first() {
        return Err(RunError::Backend(format!("{} probe(s) failed; first: {first}", run.failures.len())));
    }
    Ok(())
}

fn aggregate(ctx: &Ctx, args: AggregateArgs) -> Result<(), RunError> {
    let records: Vec<ProbeRecord> = read_records(&args.probes)?;
    let ruleset = ctx.ruleset(args.ruleset.as_deref())?;
    let mode = ctx.mode(args.mode.as_deref())?;
    let filter = match args.filter.as_deref().or(ctx.defaults.filter.as_deref()) {
        Some(f) => parse_filter(f)?,
        None => sbmpa_core::ProbeFilter::all(),
    };
    let run = aggregate_records(&records, &filter, &ruleset, mode)?;
    if run.distributions.is_empty() && run.empty.is_empty() {
        return Err(RunError::Empty(format!("{} holds no probe records", args.probes.display())));
    }
    write_records(&args.out, &run.distributions)?;
    println!("aggregates: {} written, {} empty", run.distributions.len(), run.empty.len());
    if !run.empty.is_empty() {
        let listed: Vec<String> =
            run.empty.iter().map(|e| format!("{} ({}): {}", e.object_id, e.property, e.reason)).collect();
        for l in &listed {
            eprintln!("empty: {l}");
        }
        return Err(RunError::Empty(format!("{} object(s) have no distribution", listed.len())));
    }
    Ok(())
}

fn eval(ctx: &Ctx, args: EvalArgs) -> Result<(), RunError> {
    let mut similarity = false;
    for m in &args.metric {
        match m.as_str() {
            "topk" | "soft" => {}
            "similarity" => similarity = true,
            other => return Err(RunError::Config(format!("unknown metric {other:?} (topk, soft, similarity)"))),
        }
    }
    let embedder = if similarity {
        let spec = args.embedder.as_deref().or(ctx.defaults.embedder.as_deref()).ok_or_else(|| {
            RunError::Config("the similarity metric needs an embedder (--embedder or `embedder` in --config)".into())
        })?;
        Some(EmbedderConfig::load(spec)?.build()?)
    } else {
        None
    };
    let matcher = ctx.matcher(args.matcher.as_deref())?;
    let k = parse_top_k(args.k.or(ctx.defaults.k).unwrap_or(5))?;
    let aggregates: Vec<AggregateDistribution> = read_records(&args.aggregates)?;
    let merges = args.merges.as_deref().map(load_merges).transpose()?;
    let labels = load_label_set(&args.labels, merges.as_ref())?;
    let options = EvalOptions {
        k,
        matcher: &matcher,
        property: args.property.as_deref(),
        label_source: args.label_source.as_deref(),
        embedder: embedder.as_ref(),
    };
    let result = evaluate(&aggregates, &labels, &options)?;
    let rows: Vec<_> = result.per_object.values().cloned().collect();
    write_records(&args.out, &rows)?;
    write_records(&sibling(&args.out, "summary"), std::slice::from_ref(&result.summary))?;
    print!("{}", format_summary(&result.summary));
    Ok(())
}

fn ablate(ctx: &Ctx, args: AblateArgs) -> Result<(), RunError> {
    let vlm: Vec<ProbeRecord> = read_records(&args.probes_vlm)?;
    let llm: Vec<ProbeRecord> = read_records(&args.probes_llm)?;
    let ruleset = ctx.ruleset(args.ruleset.as_deref())?;
    let mode = ctx.mode(args.mode.as_deref())?;
    let matcher = ctx.matcher(args.matcher.as_deref())?;
    let labels = match &args.labels {
        Some(path) => {
            let merges = args.merges.as_deref().map(load_merges).transpose()?;
            Some(load_label_set(path, merges.as_ref())?)
        }
        None => None,
    };
    let out = run_ablation(&AblationInput {
        vlm: &vlm,
        llm: &llm,
        ruleset: &ruleset,
        mode,
        labels: labels.as_ref().map(|l| (l, &matcher)),
    })?;
    write_records(&args.out, &out.report.rows)?;
    write_records(&sibling(&args.out, "pairs"), &out.report.pairs)?;
    print!("{}", format_report(&out.report));
    if let Some(fit) = &out.fit {
        write_records(&sibling(&args.out, "points"), &out.points)?;
        match fit {
            Ok(fit) => {
                write_records(&sibling(&args.out, "fit"), std::slice::from_ref(fit))?;
                println!(
                    "fit over {} objects: slope {:.4}, intercept {:.4}, r {:.4}",
                    out.points.len(),
                    fit.slope,
                    fit.intercept,
                    fit.pearson_r
                );
            }
            Err(e) => eprintln!("no accuracy/divergence fit: {e}"),
        }
    }
    Ok(())
}

fn audit(args: AuditArgs) -> Result<(), RunError> {
    let summaries = load_captions(&args.summaries)?;
    let per_view = load_captions(&args.per_view)?;
    let rules: Option<Vec<KeywordRule>> = args.keywords.as_deref().map(read_records).transpose()?;
    let out = run_audit(&summaries, &per_view, rules.as_deref())?;
    write_records(&args.out, &out.blow_up)?;
    if let Some(k) = &out.keywords {
        write_records(&sibling(&args.out, "keywords"), std::slice::from_ref(k))?;
    }
    print!("{}", format_audit(&out, args.top));
    Ok(())
}

fn chain(ctx: &Ctx, args: ChainArgs) -> Result<(), RunError> {
    let file = ChainFile::load(&args.stages)?;
    let manifest = load_manifest(&args.manifest)?;
    let backend = ctx.backend(&args.backend)?;
    let settings = ChainSettings {
        views: args.views,
        ruleset: ctx.ruleset(args.ruleset.as_deref())?,
        mode: ctx.mode(args.mode.as_deref())?,
        num_candidates: backend.num_candidates,
        max_in_flight: backend.max_in_flight,
        strict: backend.strict,
    };
    let run = with_generator(&backend, args.backend.record.as_deref(), |g| run_chain(g, &manifest, &file, &settings))?;
    for stage in &run.stages {
        write_records(&args.out.join(format!("{}.probes.jsonl", stage.property)), &stage.records)?;
        write_records(&args.out.join(format!("{}.aggregates.jsonl", stage.property)), &stage.aggregates)?;
        for s in stage.skipped.iter().take(20) {
            eprintln!("stage {}: skipped {s}", stage.property);
        }
        println!(
            "stage {}: {} records, {} aggregates, {} skipped",
            stage.property,
            stage.records.len(),
            stage.aggregates.len(),
            stage.skipped.len()
        );
    }
    write_records(&args.out.join("trace.jsonl"), &run.trace)?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), RunError> {
    let config = ServiceConfig {
        candidates: args.candidates,
        decisions: args.decisions,
        aggregates: args.aggregates,
        views_dir: args.views_dir,
        ui_dir: args.ui_dir,
        merges: args.merges,
        bind: args.bind,
        port: args.port,
        token: args.token,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| RunError::Config(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let bound = service::bind(&config, Box::new(SystemClock)).await.map_err(service_error)?;
        let addr = bound.local_addr().map_err(|e| RunError::Config(e.to_string()))?;
        eprintln!("curation service listening on http://{addr}");
        bound
            .serve(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(service_error)
    })
}

fn service_error(e: service::ServiceError) -> RunError {
    match e {
        service::ServiceError::Store(s) => RunError::Store(s),
        other => RunError::Config(other.to_string()),
    }
}

fn export(args: ExportArgs) -> Result<(), RunError> {
    let set = service::export_labels(&args.candidates, &args.decisions, args.merges.as_deref()).map_err(service_error)?;
    write_records(&args.out, &set.records)?;
    println!("exported {} labels", set.records.len());
    let histogram: BTreeMap<&str, usize> = set.histogram.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    for (label, n) in histogram {
        println!("{label:<24}{n}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), RunError> {
    let defaults = match &cli.config {
        Some(path) => RunDefaults::load(path)?,
        None => RunDefaults::default(),
    };
    let ctx = Ctx { defaults, seed: cli.seed };
    match cli.command {
        Command::Probe(a) => probe(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Audit(a) => audit(a),
        Command::Chain(a) => chain(&ctx, a),
        Command::ServeCuration(a) => serve(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

