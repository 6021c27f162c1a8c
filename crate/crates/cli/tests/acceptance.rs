//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Each criterion reads exactly one
//! fixture pack under `crates/core/fixtures`.

use evomem_core::cascade::{
    parse_memories, parse_preference_blocks, render_memories, render_preference_blocks, run_cascade, CascadeSources,
    CascadeStats, ParsedBlock,
};
use evomem_core::config::Runtime;
use evomem_core::consolidation::{apply_actions, rule_audit, ActionRecord, ConsolidationConfig};
use evomem_core::embedding::DEFAULT_TEST_DIM;
use evomem_core::engine::{EngineMode, StoreProbe};
use evomem_core::factory::{MemoryDraft, MemoryFactory};
use evomem_core::fixtures::{
    cascade_task, cascade_teacher_file, cold_start_oracle, run_pack, ColdStartOracle, DraftLine, PackExpectation,
    SimScenario, CASCADE_TEACHER_PS,
};
use evomem_core::model::{make_memory, IdGenerator, MemoryFields, SourceLevel};
use evomem_core::prompts::verify_templates;
use evomem_core::retrieval::prior_from_neighbors;
use evomem_core::rng::stream;
use evomem_core::sim::{generate_env, ordering_test, run_policy, run_seeds, Policy, RewardMode, SimConfig};
use evomem_core::{
    amcs, amcs_tasks, bayes_update, cosine_sim, load_store, load_tasks, retrieve, CascadeConfig, Embedder,
    EmbeddingVector, Error, HashingEmbedder, Memory, MemoryContent, MemoryId, MemoryKind, MemoryStore, RetrievalConfig,
    ScriptedFixture, ScriptedSource, StreamReport, Templates, UpdateConfig, UtilityPosterior,
};
use rand::Rng;
use serde::Deserialize;
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn read_json<T: for<'de> Deserialize<'de>>(rel: &str) -> T {
    let text = std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Outcome of one criterion: pass flag and a one-line detail.
type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- analytic

#[derive(Deserialize)]
struct ConjugacyCase {
    prior_mean: f64,
    prior_variance: f64,
    n: usize,
    r: f64,
    mean: f64,
    variance: f64,
}

#[derive(Deserialize)]
struct TransferCase {
    neighbors: Vec<(f64, f64)>,
    epsilon: f64,
    mean: f64,
    variance: f64,
}

#[derive(Deserialize)]
struct DominanceArm {
    sim: f64,
    mean: f64,
    variance: f64,
}

#[derive(Deserialize)]
struct Dominance {
    lambda: f64,
    a: DominanceArm,
    b: DominanceArm,
    fused_a: f64,
    fused_b: f64,
}

#[derive(Deserialize)]
struct RandomStores {
    count: u64,
    size: usize,
    dim: usize,
    top_k: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct Analytic {
    sigma_noise_sq: f64,
    conjugacy: Vec<ConjugacyCase>,
    prior_transfer: Vec<TransferCase>,
    dominance: Dominance,
    random_stores: RandomStores,
}

fn analytic() -> Analytic {
    read_json("analytic/cases.json")
}

fn criterion_1() -> Verdict {
    let a = analytic();
    let cfg = UpdateConfig { sigma_noise_sq: a.sigma_noise_sq };
    let mut worst: f64 = 0.0;
    for c in &a.conjugacy {
        let mut post = UtilityPosterior::new(c.prior_mean, c.prior_variance).unwrap();
        for _ in 0..c.n {
            post = bayes_update(&post, c.r, &cfg);
        }
        worst = worst.max((post.mean - c.mean).abs()).max((post.variance - c.variance).abs());
    }
    check(worst <= 1e-12, format!("{} cases, max deviation from exact closed form {worst:.2e}", a.conjugacy.len()))
}

fn criterion_2() -> Verdict {
    let a = analytic();
    let mut worst: f64 = 0.0;
    let mut unchanged = true;
    for c in &a.prior_transfer {
        let cfg = RetrievalConfig { epsilon_explore: c.epsilon, ..RetrievalConfig::default() };
        let neighbors: Vec<UtilityPosterior> =
            c.neighbors.iter().map(|&(m, v)| UtilityPosterior::new(m, v).unwrap()).collect();
        let p = prior_from_neighbors(&neighbors, &cfg);
        worst = worst.max((p.mean - c.mean).abs()).max((p.variance - c.variance).abs());
        let identical = neighbors.len() > 1 && neighbors.windows(2).all(|w| w[0] == w[1]);
        if c.epsilon == 0.0 && identical && p != neighbors[0] {
            unchanged = false;
        }
    }
    check(
        worst <= 1e-15 && unchanged,
        format!(
            "{} examples, max deviation {worst:.1e}; identical neighbors with eps=0 returned unchanged: {unchanged}",
            a.prior_transfer.len()
        ),
    )
}

fn memory_at(ids: &IdGenerator, embedding: EmbeddingVector, posterior: UtilityPosterior) -> Memory {
    make_memory(
        ids,
        MemoryFields {
            kind: MemoryKind::GlobalProcedural,
            title: "m".into(),
            description: "d".into(),
            content: MemoryContent::Text("c".into()),
            embedding,
            posterior,
            source_level: SourceLevel::SelfSuccess,
            step: 0,
        },
    )
    .unwrap()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingVector::normalized(v).unwrap()
}

/// Unit vector with cosine `c` to the first basis vector.
fn at_cos(c: f64, dim: usize) -> EmbeddingVector {
    let mut v = vec![0.0; dim];
    v[0] = c;
    v[1] = (1.0 - c * c).sqrt();
    EmbeddingVector::normalized(v).unwrap()
}

fn criterion_3() -> Verdict {
    let a = analytic();
    let s = &a.random_stores;
    let lambda0 = RetrievalConfig { lambda: 0.0, top_k: s.top_k, ..RetrievalConfig::default() };
    let mut mismatches = 0;
    for store_seed in 0..s.count {
        let mut rng = stream(s.seed, &format!("acceptance/store/{store_seed}"));
        let ids = IdGenerator::new("s", 0);
        let memories: Vec<Memory> = (0..s.size)
            .map(|_| {
                let e = random_unit(&mut rng, s.dim);
                let post = UtilityPosterior::new(rng.random_range(-2.0..2.0), rng.random_range(0.01..2.0)).unwrap();
                memory_at(&ids, e, post)
            })
            .collect();
        let query = random_unit(&mut rng, s.dim);
        let got = retrieve(&query, &memories, &lambda0, &mut rng).unwrap().ids();
        let mut by_sim: Vec<(f64, &Memory)> =
            memories.iter().map(|m| (cosine_sim(&query, &m.embedding).unwrap(), m)).collect();
        by_sim.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.id.cmp(&y.1.id)));
        let want: Vec<_> = by_sim.iter().take(s.top_k).map(|(_, m)| m.id.clone()).collect();
        if got != want {
            mismatches += 1;
        }
    }

    let d = &a.dominance;
    let ids = IdGenerator::new("dom", 0);
    let query = EmbeddingVector::basis(DEFAULT_TEST_DIM, 0);
    let mem_a =
        memory_at(&ids, at_cos(d.a.sim, DEFAULT_TEST_DIM), UtilityPosterior::new(d.a.mean, d.a.variance).unwrap());
    let mem_b =
        memory_at(&ids, at_cos(d.b.sim, DEFAULT_TEST_DIM), UtilityPosterior::new(d.b.mean, d.b.variance).unwrap());
    let cfg = RetrievalConfig { lambda: d.lambda, top_k: 2, ..RetrievalConfig::default() };
    let pool = [mem_a.clone(), mem_b.clone()];
    let mut dominance_failures = 0;
    let mut worst_fused: f64 = 0.0;
    let dominance_seeds = 1000;
    for seed in 0..dominance_seeds {
        let out = retrieve(&query, &pool, &cfg, &mut stream(seed, "acceptance/dominance")).unwrap();
        if out.items[0].id != mem_b.id {
            dominance_failures += 1;
        }
        for item in &out.items {
            let want = if item.id == mem_b.id { d.fused_b } else { d.fused_a };
            worst_fused = worst_fused.max((item.fused_score - want).abs());
        }
    }
    check(
        mismatches == 0 && dominance_failures == 0 && worst_fused < 0.01,
        format!(
            "lambda=0 order mismatches {mismatches}/{}; B first in {}/{dominance_seeds} seeds, fused within {worst_fused:.1e} of 2.55/-2.05",
            s.count,
            dominance_seeds - dominance_failures
        ),
    )
}

// ---------------------------------------------------------------- simulator

fn scenario(name: &str) -> SimScenario {
    read_json(&format!("sim/{name}.json"))
}

fn criterion_4() -> Verdict {
    let s = scenario("decoupling");
    let absolute = SimConfig { reward: RewardMode::Absolute, ..s.config.clone() };
    let (mut adv_sum, mut adv_in, mut abs_sum, mut abs_in, mut updates_ok) = (0.0, 0, 0.0, 0, true);
    for seed in s.seed_range() {
        let env = generate_env(&s.params, seed).unwrap();
        let adv = run_policy(&env, Policy::SaCts, s.steps, &s.config).unwrap();
        let abs = run_policy(&env, Policy::SaCts, s.steps, &absolute).unwrap();
        let (m_adv, m_abs) = (&adv.memories[0], &abs.memories[0]);
        updates_ok &= m_adv.retrievals as usize == s.steps && m_abs.retrievals as usize == s.steps;
        adv_sum += m_adv.posterior.mean;
        adv_in += usize::from(m_adv.posterior.mean.abs() <= 0.1);
        let gap = m_abs.posterior.mean - abs.mean_base;
        abs_sum += gap;
        abs_in += usize::from(gap.abs() <= 0.05);
    }
    let n = s.seeds as f64;
    let (adv_mean, abs_mean) = (adv_sum / n, abs_sum / n);
    check(
        updates_ok && adv_mean.abs() <= 0.1 && adv_in as f64 >= 0.95 * n && abs_mean.abs() <= 0.05,
        format!(
            "advantage: mean mu {adv_mean:+.4}, {adv_in}/{} seeds within 0.1; absolute: mean mu - base {abs_mean:+.4}, {abs_in}/{} seeds within 0.05; {} updates each",
            s.seeds, s.seeds, s.steps
        ),
    )
}

fn criterion_5() -> Verdict {
    let s = scenario("cold_start");
    let pinned: ColdStartOracle = read_json("sim/cold_start_oracle.json");
    let got = cold_start_oracle(&s).unwrap();
    let reproduced = (got.sa_cts_exposure - pinned.sa_cts_exposure).abs() <= 1e-12
        && (got.greedy_exposure - pinned.greedy_exposure).abs() <= 1e-12
        && got.opportunities == pinned.opportunities;
    // A zero greedy exposure is floored at one retrieval over all opportunities.
    let floor = 1.0 / got.opportunities as f64;
    let ratio = got.sa_cts_exposure / got.greedy_exposure.max(floor);
    check(
        reproduced && ratio >= 20.0,
        format!(
            "exposure sa_cts {:.4} vs greedy {:.4} over {} seeds; ratio >= {ratio:.0}x; pinned oracle reproduced: {reproduced}",
            got.sa_cts_exposure, got.greedy_exposure, s.seeds
        ),
    )
}

fn criterion_6() -> Verdict {
    let s = scenario("ordering");
    let runs = run_seeds(&s.params, s.seed_range(), s.steps, &s.config).unwrap();
    let pick = |r: &[evomem_core::sim::PolicyMetrics], p: Policy| r.iter().find(|m| m.policy == p).unwrap().clone();
    let mean = |p: Policy| runs.iter().map(|r| pick(r, p).cum_advantage).sum::<f64>() / runs.len() as f64;
    let (sa, greedy, sim_only) = (mean(Policy::SaCts), mean(Policy::GreedyUtility), mean(Policy::SimilarityOnly));
    let pairs = |b: Policy, w: Policy| runs.iter().map(|r| (pick(r, b), pick(r, w))).collect::<Vec<_>>();
    let top = ordering_test(&pairs(Policy::SaCts, Policy::GreedyUtility)).unwrap();
    let low = ordering_test(&pairs(Policy::GreedyUtility, Policy::SimilarityOnly)).unwrap();
    check(
        s.seeds >= 100 && sa >= greedy && greedy >= sim_only && top.p_value < 0.01 && low.p_value < 0.01,
        format!(
            "mean cumulative advantage sa_cts {sa:.2} >= greedy {greedy:.2} >= similarity_only {sim_only:.2} over {} seeds; sign tests {}-{} p={:.1e}, {}-{} p={:.1e}",
            s.seeds, top.wins, top.losses, top.p_value, low.wins, low.losses, low.p_value
        ),
    )
}

// ---------------------------------------------------------------- cascade

fn scripted(role: &str, rel: &str) -> ScriptedSource {
    ScriptedSource::new(role, ScriptedFixture::load(&fixtures().join("cascade").join(rel)).unwrap())
}

fn cascade_fraction(p1: f64, trials: usize) -> CascadeStats {
    let teacher = scripted("teacher", &cascade_teacher_file(p1));
    let tool = scripted("tool_teacher", "sources/tool_teacher.jsonl");
    let expert = scripted("expert", "sources/expert.jsonl");
    let sources = CascadeSources { teacher: &teacher, tool_teacher: &tool, expert: &expert };
    let templates = Templates::builtin();
    let base = cascade_task();
    let mut stats = CascadeStats::default();
    for i in 0..trials {
        let task = evomem_core::TaskInstance { id: format!("trial-{i:05}"), ..base.clone() };
        stats.record(&run_cascade(&task, &sources, &CascadeConfig::default(), &templates, 0.7).unwrap());
    }
    stats
}

fn criterion_7() -> Verdict {
    let trials = 10_000;
    let fractions: Vec<f64> =
        CASCADE_TEACHER_PS.iter().map(|&p| cascade_fraction(p, trials).expert_call_fraction()).collect();
    let headline = fractions[1];
    let monotone = fractions.windows(2).all(|w| w[0] > w[1]);
    check(
        (headline - 0.2).abs() <= 0.02 && monotone,
        format!(
            "expert call fraction {headline:.4} at p1=0.6 over {trials} failures (target 0.20 +/- 0.02); p1 = 0.4/0.6/0.8 gives {:.4}/{:.4}/{:.4}",
            fractions[0], fractions[1], fractions[2]
        ),
    )
}

// ---------------------------------------------------------------- mini_aime

fn criterion_8() -> Verdict {
    let dir = fixtures().join("mini_aime");
    let runtime = Runtime::load(&dir.join("config.toml")).unwrap();
    let train = load_tasks(runtime.config.data.train_tasks.as_ref().unwrap()).unwrap();
    let test = load_tasks(runtime.config.data.test_tasks.as_ref().unwrap()).unwrap();
    let mut store = runtime.empty_store(&runtime.default_run_id());
    runtime.engine(EngineMode::Training).unwrap().run_training_stream(&train, &mut store).unwrap();
    let before = store.digest();
    let engine = runtime.engine(EngineMode::FrozenTest).unwrap();
    let report = engine.run_test_stream(&test, &store).unwrap();
    let pure = report.store_digest_before == before && report.store_digest_after == before && store.digest() == before;

    let victim = store.iter().next().unwrap().id.clone();
    let edit = victim.clone();
    let drop = victim.clone();
    let writes: Vec<Box<StoreProbe<'_>>> = vec![
        Box::new(move |s| s.get_mut(&edit).map(|m| m.posterior.mean += 1.0)),
        Box::new(move |s| s.remove(&drop).map(|_| ())),
        Box::new(move |s| {
            let m = s.get(&victim).expect("victim present").clone();
            s.insert(Memory { id: MemoryId::new("injected"), ..m })
        }),
    ];
    let mut aborted = 0;
    for write in &writes {
        if matches!(engine.run_test_stream_probed(&test, &store, Some(write.as_ref())), Err(Error::FrozenStoreMutation))
        {
            aborted += 1;
        }
    }
    check(
        pure && test.len() == 500 && aborted == writes.len(),
        format!(
            "{} frozen test tasks, digest unchanged: {pure}; injected writes aborted {aborted}/{}",
            test.len(),
            writes.len()
        ),
    )
}

fn criterion_9() -> Verdict {
    let text = std::fs::read_to_string(fixtures().join("near_duplicates/drafts.jsonl")).unwrap();
    let drafts: Vec<DraftLine> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let embedder = HashingEmbedder::new(DEFAULT_TEST_DIM, 0).unwrap();
    let retrieval = RetrievalConfig::default();
    let audit = ConsolidationConfig::default();
    let mut store = MemoryStore::new("near-dup", DEFAULT_TEST_DIM, embedder.provider_id());
    let mut minted = HashSet::new();
    let mut duplicate_ids = 0;
    let mut max_size = 0;
    for (step, d) in drafts.iter().enumerate() {
        let factory = MemoryFactory { store: &store, embedder: &embedder, retrieval: &retrieval, step: step as u64 };
        let draft = MemoryDraft {
            kind: MemoryKind::GlobalProcedural,
            title: d.title.clone(),
            description: d.description.clone(),
            content: MemoryContent::Text(d.content.clone()),
        };
        let m = factory.build(draft, SourceLevel::SelfSuccess).unwrap();
        if !minted.insert(m.id.clone()) {
            duplicate_ids += 1;
        }
        let mut rng = stream(step as u64, "acceptance/near-duplicates");
        let hits = retrieve(&m.embedding, store.bank(m.kind), &retrieval, &mut rng).unwrap();
        let scope: Vec<&Memory> = hits.items.iter().map(|h| store.get(&h.id).unwrap()).collect();
        let actions = rule_audit(&[m], &scope, &audit).unwrap();
        apply_actions(&mut store, &actions, &embedder, &retrieval).unwrap();
        max_size = max_size.max(store.len());
    }

    // Ids across the end-to-end training stream are unique as well.
    let run = run_pack(&fixtures().join("mini_aime")).unwrap();
    let mut appended = HashSet::new();
    for rec in &run.train.records {
        for a in &rec.actions {
            if let ActionRecord::Append(id) = a {
                if !appended.insert(id.clone()) {
                    duplicate_ids += 1;
                }
            }
        }
    }
    check(
        store.len() <= 5 && duplicate_ids == 0,
        format!(
            "{} near-duplicate insertions end at {} memories (peak {max_size}); duplicate ids observed: {duplicate_ids}",
            drafts.len(),
            store.len()
        ),
    )
}

// ---------------------------------------------------------------- golden

#[derive(Deserialize)]
struct ExpectedBlock {
    title: String,
    description: String,
    content: String,
}

#[derive(Deserialize)]
struct MemoryTranscript {
    name: String,
    raw: String,
    expected: Vec<ExpectedBlock>,
}

#[derive(Deserialize)]
struct PreferenceTranscript {
    name: String,
    raw: String,
    expected: Vec<[String; 3]>,
}

#[derive(Deserialize)]
struct Transcripts {
    memories: Vec<MemoryTranscript>,
    preferences: Vec<PreferenceTranscript>,
}

#[derive(Deserialize)]
struct AmcsFixture {
    test: Vec<Vec<f64>>,
    train: Vec<Vec<f64>>,
    amcs: f64,
}

fn criterion_10() -> Verdict {
    let templates = verify_templates().map(|r| r.checked.len());
    let t: Transcripts = read_json("golden/transcripts.json");
    let mut failures = Vec::new();
    for case in &t.memories {
        let want: Vec<ParsedBlock> = case
            .expected
            .iter()
            .map(|b| ParsedBlock {
                title: b.title.clone(),
                description: b.description.clone(),
                content: b.content.clone(),
            })
            .collect();
        let got = parse_memories(&case.raw);
        if got != want || parse_memories(&render_memories(&got)) != got {
            failures.push(case.name.clone());
        }
    }
    for case in &t.preferences {
        let got = parse_preference_blocks(&case.raw);
        if got != case.expected || parse_preference_blocks(&render_preference_blocks(&got)) != got {
            failures.push(case.name.clone());
        }
    }

    let train = load_tasks(&fixtures().join("mini_aime/train.jsonl")).unwrap();
    let embedder = HashingEmbedder::new(DEFAULT_TEST_DIM, 0).unwrap();
    let self_amcs = amcs_tasks(&train, &train, &embedder).unwrap();
    let cli_amcs = Command::new(env!("CARGO_BIN_EXE_evomem"))
        .args(["amcs", "--test"])
        .arg(fixtures().join("mini_aime/train.jsonl"))
        .arg("--train")
        .arg(fixtures().join("mini_aime/train.jsonl"))
        .output()
        .unwrap();
    let cli_prints = String::from_utf8_lossy(&cli_amcs.stdout).trim().to_string();

    let f: AmcsFixture = read_json("golden/amcs_50x50.json");
    let vecs = |vs: &[Vec<f64>]| vs.iter().map(|v| EmbeddingVector::normalized(v.clone()).unwrap()).collect::<Vec<_>>();
    let random = amcs(&vecs(&f.test), &vecs(&f.train)).unwrap();
    let random_dev = (random - f.amcs).abs();

    check(
        templates.is_ok() && failures.is_empty() && self_amcs == 1.0 && cli_prints == "1.0" && random_dev <= 1e-12,
        format!(
            "templates verified: {}; transcripts {} ok, failed {failures:?}; self AMCS {self_amcs} (cli prints {cli_prints}); 50x50 AMCS {random:.15} vs oracle {:.15}",
            templates.map_or_else(|e| e.to_string(), |n| n.to_string()),
            t.memories.len() + t.preferences.len() - failures.len(),
            f.amcs
        ),
    )
}

fn cli_run(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_evomem")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "evomem {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn criterion_11() -> Verdict {
    let expected: PackExpectation = read_json("mini_aime/expected.json");
    let config = fixtures().join("mini_aime/config.toml");
    let config = config.to_str().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let train: StreamReport = serde_json::from_str(&cli_run(
            &["train", "--config", config, "--out", "store.jsonl", "--json"],
            dir.path(),
        ))
        .unwrap();
        let test: StreamReport = serde_json::from_str(&cli_run(
            &["test", "--config", config, "--store", "store.jsonl", "--json"],
            dir.path(),
        ))
        .unwrap();
        let store = load_store(&dir.path().join("store.jsonl")).unwrap();
        runs.push((train.digest(), test.digest(), store.digest()));
    }
    let want =
        (expected.train_report_digest.clone(), expected.test_report_digest.clone(), expected.store_digest.clone());
    let stable = runs[0] == runs[1];
    let pinned = runs[0] == want;
    check(
        stable && pinned,
        format!(
            "two CLI train+test runs identical: {stable}; match pinned digests: {pinned} (train {}.., test {}.., store {}..)",
            &runs[0].0[..12],
            &runs[0].1[..12],
            &runs[0].2[..12]
        ),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    pack: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "conjugate update",
            pack: "analytic",
            budget: Duration::from_secs(1),
            run: criterion_1,
        },
        Criterion { id: 2, name: "prior transfer", pack: "analytic", budget: Duration::from_secs(1), run: criterion_2 },
        Criterion {
            id: 3,
            name: "fused-score reductions",
            pack: "analytic",
            budget: Duration::from_secs(10),
            run: criterion_3,
        },
        Criterion {
            id: 4,
            name: "reward-bias decoupling",
            pack: "sim",
            budget: Duration::from_secs(30),
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "cold-start exposure",
            pack: "sim",
            budget: Duration::from_secs(60),
            run: criterion_5,
        },
        Criterion { id: 6, name: "policy ordering", pack: "sim", budget: Duration::from_secs(300), run: criterion_6 },
        Criterion {
            id: 7,
            name: "cascade cost structure",
            pack: "cascade",
            budget: Duration::from_secs(30),
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "frozen-test purity",
            pack: "mini_aime",
            budget: Duration::from_secs(30),
            run: criterion_8,
        },
        Criterion {
            id: 9,
            name: "consolidation boundedness",
            pack: "near_duplicates",
            budget: Duration::from_secs(30),
            run: criterion_9,
        },
        Criterion {
            id: 10,
            name: "parser and golden conformance",
            pack: "golden",
            budget: Duration::from_secs(10),
            run: criterion_10,
        },
        Criterion {
            id: 11,
            name: "end-to-end determinism",
            pack: "mini_aime",
            budget: Duration::from_secs(120),
            run: criterion_11,
        },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let (ok, detail) = match verdict {
            Ok(d) => (in_budget, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} [{}] {}: {} ({:.2}s of {}s) {}",
            c.id,
            c.pack,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
