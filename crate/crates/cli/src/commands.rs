use crate::{AmcsArgs, InspectArgs, Preset, Reward, SimArgs, StatsArgs, TestArgs, TrainArgs};
use evomem_core::cascade::CascadeLevel;
use evomem_core::config::Runtime;
use evomem_core::embedding::DEFAULT_TEST_DIM;
use evomem_core::engine::ReportAggregates;
use evomem_core::fixtures::SimScenario;
use evomem_core::model::MemoryKind;
use evomem_core::sim::{ordering_test, run_seeds, write_csv, Policy, PolicyMetrics, RewardMode, SimConfig, SimParams};
use evomem_core::{
    amcs_tasks, load_store, load_tasks, save_store, Embedder, EngineMode, Error, HashingEmbedder, MemoryStore,
    StreamReport,
};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let config_class = matches!(
            e,
            Error::Config(_)
                | Error::FormatVersionMismatch(_)
                | Error::CorruptLine { .. }
                | Error::TemplateDrift { .. }
                | Error::DimensionMismatch { .. }
        );
        Self { code: if config_class { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Loads a user-named input. A missing file is a configuration error.
fn input<T>(path: &Path, what: &str, load: impl FnOnce(&Path) -> evomem_core::Result<T>) -> Result<T, Failure> {
    if !path.is_file() {
        return Err(Failure::config(format!("{what} {} does not exist", path.display())));
    }
    load(path).map_err(|e| match e {
        Error::Io(io) => Failure::config(format!("cannot read {what} {}: {io}", path.display())),
        Error::Json(json) => Failure::config(format!("malformed {what} {}: {json}", path.display())),
        other => other.into(),
    })
}

fn load_runtime(path: &Path, seed: Option<u64>) -> Result<Runtime, Failure> {
    let mut runtime = input(path, "config", Runtime::load)?;
    if let Some(seed) = seed {
        runtime.config.engine.seed = seed;
    }
    Ok(runtime)
}

fn task_path(explicit: Option<PathBuf>, configured: Option<&PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    explicit
        .or_else(|| configured.cloned())
        .ok_or_else(|| Failure::config(format!("no task file: pass {flag} or set it under [data]")))
}

fn stdout_line(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn write_report(report: &StreamReport, path: Option<&Path>, json: bool) -> Outcome {
    if let Some(path) = path {
        std::fs::write(path, report.to_json() + "\n")?;
    }
    if json {
        stdout_line(&report.to_json())
    } else {
        stdout_line(&summary(report))
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn summary(report: &StreamReport) -> String {
    let a = &report.aggregates;
    let mut lines = vec![
        format!("tasks {} (completed {}, skipped {})", a.tasks, a.completed, a.skipped),
        format!(
            "accuracy {}  base accuracy {}  win rate {}  mean advantage {}",
            fmt_opt(a.accuracy),
            fmt_opt(a.base_accuracy),
            fmt_opt(a.win_rate),
            fmt_opt(a.mean_advantage)
        ),
    ];
    if a.cascade.total_failures > 0 {
        lines.push(format!(
            "cascade: {} failures, expert call fraction {:.4}",
            a.cascade.total_failures, a.expert_call_fraction
        ));
    }
    lines.push(format!("store digest {}", report.store_digest_after));
    lines.push(format!("report digest {}", report.digest()));
    lines.join("\n")
}

pub fn train(args: TrainArgs) -> Outcome {
    let runtime = load_runtime(&args.config, args.seed)?;
    let tasks_path = task_path(args.tasks, runtime.config.data.train_tasks.as_ref(), "--tasks")?;
    let tasks = input(&tasks_path, "task file", load_tasks)?;
    let mut store = match &args.store {
        Some(path) => input(path, "store", load_store)?,
        None => runtime.empty_store(&args.run_id.unwrap_or_else(|| runtime.default_run_id())),
    };
    let report = runtime.engine(EngineMode::Training)?.run_training_stream(&tasks, &mut store)?;
    save_store(&store, &args.out)?;
    tracing::info!(store = %args.out.display(), memories = store.len(), "store written");
    write_report(&report, args.report.as_deref(), args.json)
}

pub fn test(args: TestArgs) -> Outcome {
    let store = input(&args.store, "store", load_store)?;
    let runtime = load_runtime(&args.config, args.seed)?;
    let tasks_path = task_path(args.tasks, runtime.config.data.test_tasks.as_ref(), "--tasks")?;
    let tasks = input(&tasks_path, "task file", load_tasks)?;
    let report = runtime.engine(EngineMode::FrozenTest)?.run_test_stream(&tasks, &store)?;
    write_report(&report, args.report.as_deref(), args.json)
}

fn preset_scenario(preset: Preset) -> SimScenario {
    let params = match preset {
        Preset::Default => SimParams::default(),
        Preset::ColdStart => SimParams::cold_start(),
        Preset::Decoupling => SimParams::decoupling(),
    };
    let steps = params.horizon;
    SimScenario { params, config: SimConfig::default(), first_seed: 0, seeds: 10, steps }
}

#[derive(Serialize)]
struct PolicySummary {
    policy: Policy,
    mean_cum_advantage: f64,
    mean_new_memory_exposure: f64,
}

#[derive(Serialize)]
struct SimSummary {
    scenario: SimScenario,
    policies: Vec<PolicySummary>,
    orderings: Vec<evomem_core::sim::OrderingTest>,
}

fn pairs(runs: &[Vec<PolicyMetrics>], better: Policy, worse: Policy) -> Vec<(PolicyMetrics, PolicyMetrics)> {
    let pick = |seed_runs: &[PolicyMetrics], p: Policy| {
        seed_runs.iter().find(|m| m.policy == p).cloned().expect("every policy runs on every seed")
    };
    runs.iter().map(|r| (pick(r, better), pick(r, worse))).collect()
}

pub fn sim(args: SimArgs) -> Outcome {
    let mut scenario = match &args.scenario {
        Some(path) => input(path, "scenario", |p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))?,
        None => preset_scenario(args.preset),
    };
    if let Some(n) = args.seeds {
        scenario.seeds = n;
    }
    if let Some(s) = args.first_seed {
        scenario.first_seed = s;
    }
    if let Some(steps) = args.steps {
        scenario.steps = steps;
    }
    if let Some(reward) = args.reward {
        scenario.config.reward = match reward {
            Reward::Advantage => RewardMode::Advantage,
            Reward::Absolute => RewardMode::Absolute,
        };
    }
    if scenario.seeds == 0 || scenario.steps == 0 {
        return Err(Failure::config("sim needs at least one seed and one step"));
    }
    scenario.params.validate()?;
    let runs = run_seeds(&scenario.params, scenario.seed_range(), scenario.steps, &scenario.config)?;
    let flat: Vec<PolicyMetrics> = runs.iter().flatten().cloned().collect();
    match &args.out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            write_csv(&mut file, &flat)?;
            file.flush()?;
        }
        None if !args.json => {
            let mut out = std::io::stdout().lock();
            write_csv(&mut out, &flat)?;
        }
        None => {}
    }
    let n = runs.len() as f64;
    let policies = Policy::ALL
        .iter()
        .map(|&p| {
            let of = flat.iter().filter(|m| m.policy == p);
            PolicySummary {
                policy: p,
                mean_cum_advantage: of.clone().map(|m| m.cum_advantage).sum::<f64>() / n,
                mean_new_memory_exposure: of.map(|m| m.new_memory_exposure_rate).sum::<f64>() / n,
            }
        })
        .collect::<Vec<_>>();
    let orderings = [(Policy::SaCts, Policy::GreedyUtility), (Policy::GreedyUtility, Policy::SimilarityOnly)]
        .into_iter()
        .filter_map(|(b, w)| ordering_test(&pairs(&runs, b, w)))
        .collect::<Vec<_>>();
    let summary = SimSummary { scenario, policies, orderings };
    if args.json {
        stdout_line(&serde_json::to_string(&summary).expect("summary serializes"))
    } else {
        for p in &summary.policies {
            eprintln!(
                "{:<15} mean cumulative advantage {:>10.3}  new-memory exposure {:.4}",
                p.policy.name(),
                p.mean_cum_advantage,
                p.mean_new_memory_exposure
            );
        }
        for o in &summary.orderings {
            eprintln!(
                "{} vs {}: {} wins, {} losses, {} ties, sign test p = {:.3e}",
                o.better.name(),
                o.worse.name(),
                o.wins,
                o.losses,
                o.ties,
                o.p_value
            );
        }
        Ok(())
    }
}

pub fn amcs(args: AmcsArgs) -> Outcome {
    let test = input(&args.test, "task file", load_tasks)?;
    let train = input(&args.train, "task file", load_tasks)?;
    let embedder: Box<dyn Embedder> = match &args.config {
        Some(path) => load_runtime(path, None)?.config.build_embedder()?,
        None => Box::new(HashingEmbedder::new(DEFAULT_TEST_DIM, 0)?),
    };
    let value = amcs_tasks(&test, &train, embedder.as_ref())?;
    stdout_line(&format!("{value:?}"))
}

#[derive(Serialize)]
struct MemoryView<'a> {
    id: &'a str,
    bank: &'static str,
    mu: f64,
    sigma_sq: f64,
    feedback_count: u64,
    source_level: evomem_core::SourceLevel,
    created_at: u64,
    title: &'a str,
    description: &'a str,
    content: String,
}

pub fn inspect(args: InspectArgs) -> Outcome {
    let store: MemoryStore = input(&args.store, "store", load_store)?;
    let bank = match &args.bank {
        Some(label) => Some(
            MemoryKind::from_label(label)
                .ok_or_else(|| Failure::config(format!("unknown bank {label:?}; use global, local or preference")))?,
        ),
        None => None,
    };
    let (lo, hi) = (args.mu_min.unwrap_or(f64::NEG_INFINITY), args.mu_max.unwrap_or(f64::INFINITY));
    if lo > hi {
        return Err(Failure::config("--mu-min exceeds --mu-max"));
    }
    let views: Vec<MemoryView<'_>> = store
        .iter()
        .filter(|m| bank.is_none_or(|b| m.kind == b))
        .filter(|m| (lo..=hi).contains(&m.posterior.mean))
        .map(|m| MemoryView {
            id: m.id.as_str(),
            bank: m.kind.label(),
            mu: m.posterior.mean,
            sigma_sq: m.posterior.variance,
            feedback_count: m.feedback_count,
            source_level: m.source_level,
            created_at: m.created_at,
            title: &m.title,
            description: &m.description,
            content: m.content.render(),
        })
        .collect();
    if args.json {
        return stdout_line(&serde_json::to_string(&views).expect("views serialize"));
    }
    let mut text = format!("{} of {} memories\n", views.len(), store.len());
    for v in &views {
        text.push_str(&format!(
            "{}  [{}]  mu {:+.4}  var {:.4}  n {}  {}\n    {}\n",
            v.id, v.bank, v.mu, v.sigma_sq, v.feedback_count, v.title, v.description
        ));
    }
    stdout_line(text.trim_end())
}

#[derive(Serialize)]
struct LevelShare {
    level: CascadeLevel,
    resolved: u64,
    fraction: f64,
    calls: u64,
}

#[derive(Serialize)]
struct Stats {
    tasks: usize,
    completed: usize,
    skipped: usize,
    failures: u64,
    levels: Vec<LevelShare>,
    exhausted: u64,
    expert_call_fraction: f64,
    store_size_first: Option<usize>,
    store_size_last: Option<usize>,
    store_size_max: Option<usize>,
    store_sizes: Vec<usize>,
}

pub fn stats(args: StatsArgs) -> Outcome {
    let report: StreamReport =
        input(&args.report, "report", |p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))?;
    report.verify_aggregates()?;
    let a: ReportAggregates = ReportAggregates::from_records(&report.records);
    let c = &a.cascade;
    let stats = Stats {
        tasks: a.tasks,
        completed: a.completed,
        skipped: a.skipped,
        failures: c.total_failures,
        levels: CascadeLevel::ORDER
            .iter()
            .map(|&level| LevelShare {
                level,
                resolved: c.resolved.get(level),
                fraction: c.fraction(level),
                calls: c.calls.get(level),
            })
            .collect(),
        exhausted: c.exhausted,
        expert_call_fraction: a.expert_call_fraction,
        store_size_first: a.store_sizes.first().copied(),
        store_size_last: a.store_sizes.last().copied(),
        store_size_max: a.store_sizes.iter().max().copied(),
        store_sizes: a.store_sizes.clone(),
    };
    if args.json {
        return stdout_line(&serde_json::to_string(&stats).expect("stats serialize"));
    }
    let mut text = format!(
        "tasks {} (completed {}, skipped {})\ncascade failures {}, exhausted {}\n",
        stats.tasks, stats.completed, stats.skipped, stats.failures, stats.exhausted
    );
    for l in &stats.levels {
        text.push_str(&format!("  {:?}: resolved {} ({:.4}), calls {}\n", l.level, l.resolved, l.fraction, l.calls));
    }
    text.push_str(&format!("expert call fraction {:.4}\n", stats.expert_call_fraction));
    if let (Some(first), Some(last), Some(max)) = (stats.store_size_first, stats.store_size_last, stats.store_size_max)
    {
        text.push_str(&format!("store size: first {first}, last {last}, max {max}"));
    }
    stdout_line(text.trim_end())
}
