use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use tracekg::analytics::{window_for_location, TemporalLocation, Window};
use tracekg::eval::{
    check_fixtures, load_benchmark, make_baseline_input, run_grid, seed_benchmark, seed_workload, BenchmarkItem,
    GridSpec, Grounding, OracleBackend, WrongBackend, FIXTURE_TOLERANCE,
};
use tracekg::kg::{build_graph, build_schema, QueryScope};
use tracekg::llm::{
    assemble_baseline_prompt, assemble_events_prompt, assemble_prompt, Bridge, Cassette, ChatBackend, HttpBackend,
    LlmConfig, PromptEnvelope, DEFAULT_API_KEY_ENV,
};
use tracekg::state::{AttributePath, StateSystem};
use tracekg::trace::{generate_synthetic_trace, load_trace, slice_trace, write_events, Event, TraceMeta, WorkloadSpec};

mod units;

use units::{parse_duration, parse_range};

/// Kernel scheduling traces to state systems, query-scoped knowledge graphs
/// and graded LLM answers.
#[derive(Parser)]
#[command(name = "tracekg", version)]
struct Cli {
    /// Print extra detail (timings, token counts) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a deterministic synthetic sched_switch trace.
    Gen(GenArgs),
    /// Build the state system for a trace and dump it as JSON.
    Ingest(IngestArgs),
    /// Query one attribute at a time point or over a range.
    State(StateArgs),
    /// Build the query-scoped knowledge graph.
    Kg(KgArgs),
    /// Ask one question about a trace window.
    Ask(AskArgs),
    /// Run a benchmark grid, or check the published accuracy arithmetic.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    cpus: u32,
    #[arg(long, default_value_t = 8)]
    threads: u32,
    /// Trace length, e.g. 60s.
    #[arg(long, value_parser = parse_duration)]
    duration: u64,
    /// Mean run length before a switch.
    #[arg(long, value_parser = parse_duration, default_value = "5ms")]
    mean_slice: u64,
    /// 0 spreads threads uniformly; 1 gives each CPU a dominant thread.
    #[arg(long, default_value_t = 0.0)]
    skew: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Snapshot destination; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("when").required(true).args(["at", "range"])))]
struct StateArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Attribute path, e.g. /CPUs/0/Current_thread.
    #[arg(long)]
    path: String,
    #[arg(long, value_parser = parse_duration)]
    at: Option<u64>,
    /// Half-open range, e.g. 30s:40s.
    #[arg(long, value_parser = parse_range)]
    range: Option<(u64, u64)>,
}

#[derive(Args)]
struct ScopeArgs {
    /// Window placement: start, mid or end.
    #[arg(long, default_value = "mid")]
    loc: TemporalLocation,
    /// Window length, e.g. 1s.
    #[arg(long, value_parser = parse_duration, default_value = "1s")]
    window: u64,
    /// Explicit window such as 30s:40s; overrides --loc and --window.
    #[arg(long, value_parser = parse_range)]
    range: Option<(u64, u64)>,
    /// Only these CPUs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    cpus: Vec<u32>,
    /// Only these thread ids, comma-separated.
    #[arg(long, value_delimiter = ',')]
    tids: Vec<i64>,
}

#[derive(Args)]
struct KgArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    scope: ScopeArgs,
    /// Print the schema text before the graph.
    #[arg(long, overrides_with = "no_schema")]
    schema: bool,
    #[arg(long)]
    no_schema: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, default_value_t = 0.5)]
    temperature: f64,
    #[arg(long, default_value_t = 3)]
    samples: u32,
    /// Keep the schema key but leave it empty.
    #[arg(long)]
    no_schema: bool,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long, default_value_t = 1024)]
    max_output_tokens: u32,
    #[arg(long, default_value_t = 128_000)]
    context_limit: u64,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Extra request body field as key=json, e.g. reasoning_effort="high".
    #[arg(long = "option", value_name = "KEY=JSON")]
    options: Vec<String>,
    /// Answer only from this cassette; never touch the network.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the endpoint and save every answer to this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
}

impl ModelArgs {
    fn config(&self) -> Result<LlmConfig> {
        let mut options = serde_json::Map::new();
        for opt in &self.options {
            let (k, v) = opt
                .split_once('=')
                .with_context(|| format!("--option `{opt}` is not KEY=JSON"))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
            options.insert(k.to_string(), value);
        }
        let cfg = LlmConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            samples: self.samples,
            schema_enabled: !self.no_schema,
            timeout_secs: self.timeout,
            max_output_tokens: self.max_output_tokens,
            context_limit_tokens: self.context_limit,
            api_key_env: self.api_key_env.clone(),
            max_in_flight: self.max_in_flight,
            options,
            ..LlmConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn mode(&self) -> String {
        match (&self.replay, &self.record) {
            (Some(p), _) => format!("replay:{}", p.display()),
            (_, Some(p)) => format!("record:{}", p.display()),
            _ => "live".into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroundingArg {
    Taaf,
    Baseline,
    Events,
}

#[derive(Args)]
struct AskArgs {
    question: String,
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    scope: ScopeArgs,
    #[arg(long, value_enum, default_value = "taaf")]
    grounding: GroundingArg,
    #[command(flatten)]
    model: ModelArgs,
    /// Print the exact user message that would be sent, then stop.
    #[arg(long)]
    dump_prompt: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MockArg {
    /// Answers every item with its reference.
    Oracle,
    /// Answers every item wrongly.
    Wrong,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark JSON; the shipped seed benchmark when omitted.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Trace file; the seed workload is generated when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Models to run, comma-separated; defaults to --model.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Keep only items with these window lengths.
    #[arg(long, value_delimiter = ',', value_parser = parse_duration)]
    windows: Vec<u64>,
    /// Keep only items at these placements.
    #[arg(long, value_delimiter = ',')]
    locs: Vec<TemporalLocation>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,taaf")]
    groundings: Vec<Grounding>,
    /// Temperature sweep; defaults to --temperature.
    #[arg(long, value_delimiter = ',')]
    temperatures: Vec<f64>,
    /// Use a built-in mock model instead of the endpoint.
    #[arg(long, value_enum)]
    mock: Option<MockArg>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "tracekg-report")]
    out_dir: PathBuf,
    /// Progress file for resuming; defaults to <out-dir>/progress.jsonl.
    #[arg(long)]
    progress: Option<PathBuf>,
    /// Discard earlier progress before running.
    #[arg(long)]
    fresh: bool,
    /// Only recompute the published accuracy table from its label percentages.
    #[arg(long)]
    check_fixtures: bool,
}

fn banner(cmd: &str, pairs: &[(&str, String)]) {
    let mut line = format!("# tracekg {cmd}");
    for (k, v) in pairs {
        if v.contains(char::is_whitespace) || v.is_empty() {
            line.push_str(&format!(" {k}={v:?}"));
        } else {
            line.push_str(&format!(" {k}={v}"));
        }
    }
    eprintln!("{line}");
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

struct Loaded {
    meta: TraceMeta,
    events: Vec<Event>,
    state: StateSystem,
}

fn load(path: &Path, verbose: u8) -> Result<Loaded> {
    let started = Instant::now();
    let (meta, stream) = load_trace(path).with_context(|| format!("loading {}", path.display()))?;
    let events: Vec<Event> = stream.collect::<Result<_, _>>()?;
    let state = StateSystem::build(&events, meta.end)?;
    if verbose > 0 {
        eprintln!(
            "loaded {} events, {} CPUs, end {} ns, {} quarks in {:?}",
            meta.event_count,
            meta.cpu_count,
            meta.end,
            state.quark_count(),
            started.elapsed()
        );
    }
    Ok(Loaded { meta, events, state })
}

fn scope_of(args: &ScopeArgs, meta: &TraceMeta) -> Result<QueryScope> {
    let window = match args.range {
        Some((t1, t2)) => Window::new(t1, t2)?,
        None => window_for_location(meta, args.loc, args.window)?,
    };
    Ok(QueryScope {
        window,
        cpu_filter: (!args.cpus.is_empty()).then(|| args.cpus.iter().copied().collect::<BTreeSet<_>>()),
        thread_filter: (!args.tids.is_empty()).then(|| args.tids.iter().copied().collect::<BTreeSet<_>>()),
    })
}

fn scope_pairs(args: &ScopeArgs) -> Vec<(&'static str, String)> {
    let mut pairs = match args.range {
        Some((a, b)) => vec![("range", format!("{a}:{b}"))],
        None => vec![("loc", args.loc.to_string()), ("window_ns", args.window.to_string())],
    };
    if !args.cpus.is_empty() {
        pairs.push(("cpus", join(&args.cpus)));
    }
    if !args.tids.is_empty() {
        pairs.push(("tids", join(&args.tids)));
    }
    pairs
}

fn model_pairs(cfg: &LlmConfig, args: &ModelArgs) -> Vec<(&'static str, String)> {
    vec![
        ("model", cfg.model.clone()),
        ("temperature", cfg.temperature.to_string()),
        ("samples", cfg.samples.to_string()),
        ("schema", cfg.schema_enabled.to_string()),
        ("endpoint", cfg.endpoint.clone()),
        ("api_key_env", cfg.api_key_env.clone()),
        ("max_output_tokens", cfg.max_output_tokens.to_string()),
        ("context_limit", cfg.context_limit_tokens.to_string()),
        ("max_in_flight", cfg.max_in_flight.to_string()),
        ("options", serde_json::Value::Object(cfg.options.clone()).to_string()),
        ("mode", args.mode()),
    ]
}

fn cmd_gen(a: GenArgs) -> Result<ExitCode> {
    let spec = WorkloadSpec {
        seed: a.seed,
        cpu_count: a.cpus,
        thread_count: a.threads,
        duration: a.duration,
        mean_slice: a.mean_slice,
        skew: a.skew,
    };
    banner(
        "gen",
        &[
            ("seed", a.seed.to_string()),
            ("cpus", a.cpus.to_string()),
            ("threads", a.threads.to_string()),
            ("duration_ns", a.duration.to_string()),
            ("mean_slice_ns", a.mean_slice.to_string()),
            ("skew", a.skew.to_string()),
            ("output", a.output.display().to_string()),
        ],
    );
    let events = generate_synthetic_trace(&spec)?;
    let file = fs::File::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let n = write_events(io::BufWriter::new(file), events)?;
    eprintln!("wrote {n} events to {}", a.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(a: IngestArgs, verbose: u8) -> Result<ExitCode> {
    banner(
        "ingest",
        &[
            ("trace", a.trace.display().to_string()),
            (
                "output",
                a.output.as_ref().map_or("-".into(), |p| p.display().to_string()),
            ),
        ],
    );
    let l = load(&a.trace, verbose)?;
    eprintln!(
        "{} events, {} quarks, end {} ns, {} non-switch events skipped",
        l.meta.event_count,
        l.state.quark_count(),
        l.state.end(),
        l.state.skipped_events()
    );
    let mut json = serde_json::to_string(&l.state.snapshot())?;
    json.push('\n');
    write_output(a.output.as_deref(), json.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_state(a: StateArgs, verbose: u8) -> Result<ExitCode> {
    let when = match (a.at, a.range) {
        (Some(t), _) => ("at", t.to_string()),
        (_, Some((t1, t2))) => ("range", format!("{t1}:{t2}")),
        _ => unreachable!("clap requires --at or --range"),
    };
    banner(
        "state",
        &[("trace", a.trace.display().to_string()), ("path", a.path.clone()), when],
    );
    let path: AttributePath = a.path.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
    let l = load(&a.trace, verbose)?;
    let quark = l
        .state
        .quark(&path)
        .with_context(|| format!("unknown attribute path {path}"))?;
    let mut out = String::new();
    if let Some(t) = a.at {
        out = format!("{}\n", l.state.query_point(quark, t)?);
    } else if let Some((t1, t2)) = a.range {
        out.push_str("start_ns\tend_ns\tvalue\n");
        for iv in l.state.query_range(quark, t1, t2)? {
            out.push_str(&format!("{}\t{}\t{}\n", iv.start, iv.end, iv.value));
        }
    }
    write_output(None, out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_kg(a: KgArgs, verbose: u8) -> Result<ExitCode> {
    let mut pairs = vec![("trace", a.trace.display().to_string())];
    pairs.extend(scope_pairs(&a.scope));
    pairs.push(("schema", a.schema.to_string()));
    banner("kg", &pairs);
    let l = load(&a.trace, verbose)?;
    let scope = scope_of(&a.scope, &l.meta)?;
    let kg = build_graph(&l.state, &scope)?;
    let mut out = String::new();
    if a.schema && !a.no_schema {
        out.push_str(build_schema(&kg).as_str());
        out.push('\n');
    }
    out.push_str(&kg.to_canonical_json());
    out.push('\n');
    write_output(a.output.as_deref(), out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn make_bridge(cfg: LlmConfig, args: &ModelArgs, mock: Option<Arc<dyn ChatBackend>>) -> Result<Bridge> {
    if let Some(path) = &args.replay {
        return Ok(Bridge::replay(cfg, Cassette::open_existing(path)?)?);
    }
    let backend: Arc<dyn ChatBackend> = match mock {
        Some(m) => m,
        None => Arc::new(HttpBackend::from_env(&cfg)?),
    };
    Ok(match &args.record {
        Some(path) => Bridge::recording(cfg, backend, Cassette::open(path)?)?,
        None => Bridge::live(cfg, backend)?,
    })
}

fn cmd_ask(a: AskArgs, verbose: u8) -> Result<ExitCode> {
    let cfg = a.model.config()?;
    let grounding = match a.grounding {
        GroundingArg::Taaf => "taaf",
        GroundingArg::Baseline => "baseline",
        GroundingArg::Events => "events",
    };
    let mut pairs = vec![
        ("trace", a.trace.display().to_string()),
        ("question", a.question.clone()),
    ];
    pairs.extend(scope_pairs(&a.scope));
    pairs.push(("grounding", grounding.into()));
    pairs.extend(model_pairs(&cfg, &a.model));
    banner("ask", &pairs);

    let l = load(&a.trace, verbose)?;
    let scope = scope_of(&a.scope, &l.meta)?;
    let envelope: PromptEnvelope = match a.grounding {
        GroundingArg::Taaf => {
            let kg = build_graph(&l.state, &scope)?;
            assemble_prompt(
                &build_schema(&kg),
                &kg.to_canonical_json(),
                &a.question,
                cfg.schema_enabled,
            )?
        }
        GroundingArg::Baseline => assemble_baseline_prompt(&make_baseline_input(&l.state, &scope)?, &a.question)?,
        GroundingArg::Events => {
            let w = scope.window;
            let sliced = slice_trace(l.events.iter().cloned().map(Ok), w.t1, w.t2)?;
            let mut text = String::new();
            for e in sliced {
                text.push_str(&e?.to_json_line());
                text.push('\n');
            }
            assemble_events_prompt(&text, &a.question)?
        }
    };
    if a.dump_prompt {
        write_output(None, envelope.to_json().as_bytes())?;
        return Ok(ExitCode::SUCCESS);
    }
    let bridge = make_bridge(cfg, &a.model, None)?;
    let answers = bridge.ask(&envelope)?;
    let mut out = String::new();
    for ans in &answers {
        out.push_str(&format!("[{}] {}\n", ans.sample_index, ans.raw_text));
        if verbose > 0 {
            eprintln!(
                "sample {}: {} ms, tokens in/out {:?}/{:?}",
                ans.sample_index, ans.latency_ms, ans.prompt_tokens, ans.completion_tokens
            );
        }
    }
    write_output(None, out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_fixtures() -> Result<ExitCode> {
    banner(
        "bench",
        &[
            ("check_fixtures", "true".into()),
            ("tolerance", FIXTURE_TOLERANCE.to_string()),
        ],
    );
    let checks = check_fixtures()?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    for c in &failed {
        let r = &c.row;
        println!(
            "MISMATCH {} {} {} {} {}: ({:.2}, {:.2}, {:.2}) gives {:.3}, printed {:.2}",
            r.model, r.window, r.format, r.hop, r.grounding, r.pct0, r.pct05, r.pct1, c.recomputed, r.acc
        );
    }
    println!(
        "{} of {} table rows reproduce their printed accuracy within {}",
        checks.len() - failed.len(),
        checks.len(),
        FIXTURE_TOLERANCE
    );
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_bench(a: BenchArgs, verbose: u8) -> Result<ExitCode> {
    if a.check_fixtures {
        return cmd_check_fixtures();
    }
    let base = a.model.config()?;
    let models = if !a.models.is_empty() {
        a.models.clone()
    } else {
        match a.mock {
            Some(MockArg::Oracle) => vec!["mock-oracle".into()],
            Some(MockArg::Wrong) => vec!["mock-wrong".into()],
            None => vec![base.model.clone()],
        }
    };
    let spec = GridSpec {
        models,
        windows: a.windows.clone(),
        locations: a.locs.clone(),
        groundings: a.groundings.clone(),
        temperatures: a.temperatures.clone(),
    };
    let progress = a.progress.clone().unwrap_or_else(|| a.out_dir.join("progress.jsonl"));
    let mut pairs = vec![
        (
            "benchmark",
            a.benchmark.as_ref().map_or("seed".into(), |p| p.display().to_string()),
        ),
        (
            "trace",
            a.trace
                .as_ref()
                .map_or("seed-workload".into(), |p| p.display().to_string()),
        ),
        ("models", join(&spec.models)),
        ("windows_ns", join(&spec.windows)),
        ("locs", join(&spec.locations)),
        ("groundings", join(&spec.groundings)),
        ("temperatures", join(&spec.temperatures)),
        (
            "mock",
            match a.mock {
                Some(MockArg::Oracle) => "oracle".into(),
                Some(MockArg::Wrong) => "wrong".into(),
                None => "none".into(),
            },
        ),
        ("out_dir", a.out_dir.display().to_string()),
        ("progress", progress.display().to_string()),
        ("fresh", a.fresh.to_string()),
    ];
    pairs.extend(model_pairs(&base, &a.model));
    if a.mock.is_some() && a.model.replay.is_none() {
        if let Some(mode) = pairs.iter_mut().find(|(k, _)| *k == "mode") {
            mode.1 = mode.1.replacen("live", "mock", 1);
        }
    }
    banner("bench", &pairs);

    let items: Vec<BenchmarkItem> = match &a.benchmark {
        Some(p) => load_benchmark(p)?,
        None => seed_benchmark(),
    };
    let (meta, state) = match &a.trace {
        Some(p) => {
            let l = load(p, verbose)?;
            (l.meta, l.state)
        }
        None => {
            let spec = seed_workload();
            let events: Vec<Event> = generate_synthetic_trace(&spec)?.collect();
            let meta = TraceMeta::scan(events.iter().cloned().map(Ok))?;
            let state = StateSystem::build(&events, meta.end)?;
            (meta, state)
        }
    };

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    if a.fresh && progress.exists() {
        fs::remove_file(&progress).with_context(|| format!("removing {}", progress.display()))?;
    }

    let mock: Option<Arc<dyn ChatBackend>> = match a.mock {
        Some(MockArg::Oracle) => Some(Arc::new(OracleBackend::new(&items, &state, &meta)?)),
        Some(MockArg::Wrong) => Some(Arc::new(WrongBackend::new(&items, &state, &meta)?)),
        None => None,
    };
    let replay = match &a.model.replay {
        Some(p) => Some(Arc::new(Mutex::new(Cassette::open_existing(p)?))),
        None => None,
    };
    let record = match &a.model.record {
        Some(p) => Some(Arc::new(Mutex::new(Cassette::open(p)?))),
        None => None,
    };
    let backend: Option<Arc<dyn ChatBackend>> = match (&replay, mock) {
        (Some(_), _) => None,
        (None, Some(m)) => Some(m),
        (None, None) => Some(Arc::new(HttpBackend::from_env(&base)?)),
    };
    let make = |cfg: LlmConfig| match (&replay, &record, &backend) {
        (Some(c), _, _) => Bridge::replay_shared(cfg, c.clone()),
        (None, Some(c), Some(b)) => Bridge::recording_shared(cfg, b.clone(), c.clone()),
        (None, None, Some(b)) => Bridge::live(cfg, b.clone()),
        _ => unreachable!("a non-replay run always has a backend"),
    };

    let started = Instant::now();
    let report = run_grid(&items, &state, &meta, &spec, &base, &make, Some(&progress))?;
    let csv_path = a.out_dir.join("report.csv");
    let json_path = a.out_dir.join("report.json");
    fs::write(&csv_path, report.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&json_path, report.to_json() + "\n").with_context(|| format!("writing {}", json_path.display()))?;
    write_output(None, report.to_csv().as_bytes())?;
    for f in &report.failures {
        eprintln!(
            "incomplete: model={} grounding={} item={}: {}",
            f.model, f.grounding, f.item_id, f.error
        );
    }
    eprintln!(
        "{} rows, {} failures, {} backend calls, {} units resumed, {:.1?}; reports in {}",
        report.rows.len(),
        report.failures.len(),
        report.backend_calls,
        report.resumed,
        started.elapsed(),
        a.out_dir.display()
    );
    Ok(if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let v = cli.verbose;
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Ingest(a) => cmd_ingest(a, v),
        Cmd::State(a) => cmd_state(a, v),
        Cmd::Kg(a) => cmd_kg(a, v),
        Cmd::Ask(a) => cmd_ask(a, v),
        Cmd::Bench(a) => cmd_bench(a, v),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
