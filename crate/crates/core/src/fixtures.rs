//! Deterministic fixture packs.
//!
//! A pack is a named set of files: task JSONL, one scripted rule file per
//! source role and a run config. Packs are pure functions of their seed, so
//! the committed copies under `fixtures/` can be checked for drift by
//! regenerating them.
//!
//! `mini_aime` is a synthetic competition-math stream. Eight problem
//! families carry computed reference answers; two open-ended families are
//! judged pairwise. The scripted actor is a family-level skill model: it
//! answers correctly with a per-family base rate, and with a higher rate once
//! a memory titled for that family is in its prompt. Teachers succeed with
//! fixed probabilities and the expert always does, so the cascade sees the
//! same per-level rates the accounting assumes.

use crate::config::Runtime;
use crate::embedding::{cosine_sim, Embedder, HashingEmbedder, DEFAULT_TEST_DIM};
use crate::engine::{EngineMode, StreamReport};
use crate::error::{Error, Result};
use crate::model::{retrieval_text, TaskInstance, TaskKind};
use crate::persist::{load_tasks, tasks_to_jsonl};
use crate::rng::stream;
use crate::sim::{generate_env, run_policy, Policy, SimConfig, SimParams};
use crate::sources::{PromptMatcher, ScriptedFixture, ScriptedRule, WeightedResponse};
use crate::store::MemoryStore;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

pub const MINI_AIME_SEED: u64 = 20_250_101;
pub const MINI_AIME_TRAIN: usize = 200;
pub const MINI_AIME_TEST: usize = 500;

/// Actor success rate once a matching family memory is retrieved.
pub const WITH_MEMORY_P: f64 = 0.9;
pub const TEACHER_P: f64 = 0.6;
pub const TOOL_TEACHER_P: f64 = 0.5;
/// Open-ended answers that follow the constraint without a rule in context.
pub const OPEN_BASE_P: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePack {
    pub name: String,
    pub seed: u64,
    /// Relative path to file contents.
    pub files: BTreeMap<String, String>,
}

impl FixturePack {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, text) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
        }
        Ok(())
    }

    /// Files under `dir` that are missing or differ from the generated pack.
    pub fn drift(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(rel, text)| std::fs::read_to_string(dir.join(rel)).ok().as_deref() != Some(text.as_str()))
            .map(|(rel, _)| rel.clone())
            .collect()
    }

    /// SHA-256 over paths and contents in path order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (rel, text) in &self.files {
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update((text.len() as u64).to_le_bytes());
            h.update(text.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy)]
struct Family {
    name: &'static str,
    /// Phrase every prompt of the family contains.
    key: &'static str,
    /// Shared prefix of the family's memory titles.
    title: &'static str,
    base_p: f64,
    method: &'static str,
    description: &'static str,
    workflow: [&'static str; 2],
    pitfall: &'static str,
}

const FAMILIES: [Family; 8] = [
    Family {
        name: "modexp",
        key: "is divided by",
        title: "Modular exponent",
        base_p: 0.35,
        method: "Reduce the exponent modulo p - 1 by Fermat, then multiply out the small power.",
        description: "For the remainder when a large power is divided by a prime, shrink the exponent first.",
        workflow: [
            "Step 1: Check that the modulus is prime and coprime to the base. Step 2: Reduce the exponent modulo p - 1. Step 3: Evaluate the small power by repeated squaring.",
            "Step 1: Confirm the modulus is a prime not dividing the base. Step 2: Replace the exponent by its residue mod p - 1. Step 3: Square and multiply to finish.",
        ],
        pitfall: "In context [remainder of a power mod a prime], do not assume the exponent can be reduced mod p. Instead, perform the reduction mod p - 1.",
    },
    Family {
        name: "divisors",
        key: "positive divisors",
        title: "Divisor counting",
        base_p: 0.45,
        method: "Factor n into primes and multiply one more than each exponent.",
        description: "To count the positive divisors of an integer, use its prime factorization.",
        workflow: [
            "Step 1: Write n as a product of prime powers. Step 2: Add one to each exponent. Step 3: Multiply the results.",
            "Step 1: Factor n completely into primes. Step 2: Increment every exponent by one. Step 3: Take the product.",
        ],
        pitfall: "In context [counting divisors], do not assume only prime divisors count. Instead, perform the full exponent product including 1 and n.",
    },
    Family {
        name: "gcd",
        key: "greatest common divisor",
        title: "Euclidean algorithm",
        base_p: 0.6,
        method: "Apply the Euclidean algorithm until the remainder vanishes.",
        description: "For the greatest common divisor of two integers, iterate division with remainder.",
        workflow: [
            "Step 1: Divide the larger number by the smaller. Step 2: Replace the pair by the smaller number and the remainder. Step 3: Stop when the remainder is zero.",
            "Step 1: Take the remainder of the larger by the smaller. Step 2: Repeat on the smaller number and that remainder. Step 3: The last nonzero remainder is the answer.",
        ],
        pitfall: "In context [greatest common divisor], do not assume the smaller number divides the larger. Instead, perform the remainder steps to the end.",
    },
    Family {
        name: "series",
        key: "sum of all integers",
        title: "Arithmetic series",
        base_p: 0.5,
        method: "Pair the first and last terms and multiply by half the number of terms.",
        description: "For the sum of all integers in a range, average the endpoints and count the terms.",
        workflow: [
            "Step 1: Count the terms as b - a + 1. Step 2: Add the first and last terms. Step 3: Multiply and halve.",
            "Step 1: Find the number of terms b - a + 1. Step 2: Sum the two endpoints. Step 3: Multiply the two and divide by two.",
        ],
        pitfall: "In context [inclusive integer ranges], do not assume there are b - a terms. Instead, perform the count as b - a + 1.",
    },
    Family {
        name: "choose",
        key: "committee of",
        title: "Binomial counting",
        base_p: 0.4,
        method: "Count unordered selections with the binomial coefficient.",
        description: "When choosing a committee from a group, order does not matter, so use n choose k.",
        workflow: [
            "Step 1: Decide that order does not matter. Step 2: Write n choose k. Step 3: Cancel factorials before multiplying.",
            "Step 1: Recognize an unordered selection. Step 2: Set up the binomial coefficient n choose k. Step 3: Simplify the factorial ratio.",
        ],
        pitfall: "In context [choosing a committee], do not assume order matters. Instead, perform the division by k factorial.",
    },
    Family {
        name: "vieta",
        key: "sum of the roots",
        title: "Vieta sum",
        base_p: 0.3,
        method: "Read the sum of the roots from the linear coefficient by Vieta.",
        description: "For the sum of the roots of a monic quadratic, negate the linear coefficient.",
        workflow: [
            "Step 1: Make the quadratic monic. Step 2: Read the coefficient of x. Step 3: Negate it to get the sum of the roots.",
            "Step 1: Normalize the leading coefficient to one. Step 2: Take the linear coefficient. Step 3: Its negation is the root sum.",
        ],
        pitfall: "In context [sum of the roots], do not assume the roots must be real or solved for. Instead, perform the sign flip on the linear coefficient.",
    },
    Family {
        name: "lcm",
        key: "least common multiple",
        title: "Prime factor lcm",
        base_p: 0.5,
        method: "Take the highest power of each prime across both factorizations.",
        description: "For the least common multiple, combine the largest prime powers of both numbers.",
        workflow: [
            "Step 1: Factor both numbers. Step 2: Keep the highest power of every prime. Step 3: Multiply those powers.",
            "Step 1: Write both numbers as prime powers. Step 2: Select the maximal exponent per prime. Step 3: Multiply them together.",
        ],
        pitfall: "In context [least common multiple], do not assume the product of the numbers is the answer. Instead, perform division by their gcd.",
    },
    Family {
        name: "digits",
        key: "sum of the digits",
        title: "Digit sum",
        base_p: 0.55,
        method: "Add the decimal digits one at a time.",
        description: "For the sum of the digits of a number, add each decimal digit once.",
        workflow: [
            "Step 1: Write the number out digit by digit. Step 2: Add the digits left to right. Step 3: Recount the digits to check none was skipped.",
            "Step 1: List the decimal digits. Step 2: Accumulate them in order. Step 3: Verify the digit count matches the number's length.",
        ],
        pitfall: "In context [digit sums], do not assume repeated digits are counted once. Instead, perform one addition per position.",
    },
];

#[derive(Debug, Clone, Copy)]
struct OpenFamily {
    key: &'static str,
    trigger: &'static str,
    dimension: &'static str,
    comparison: &'static str,
}

const OPEN_FAMILIES: [OpenFamily; 2] = [
    OpenFamily {
        key: "without using numbered lists",
        trigger: "When the user forbids numbered lists",
        dimension: "format adherence",
        comparison: "write connected prose or plain bullets and never start lines with numbers",
    },
    OpenFamily {
        key: "in at most 30 words",
        trigger: "When the user sets a word limit",
        dimension: "constraint satisfaction",
        comparison: "draft the answer, count the words and cut until the limit holds",
    },
];

const TOPICS: [&str; 12] = [
    "tidal energy",
    "urban gardens",
    "the history of tea",
    "bicycle maintenance",
    "night skies",
    "coral reefs",
    "public libraries",
    "winter hiking",
    "sourdough baking",
    "desert ecosystems",
    "lighthouses",
    "migratory birds",
];
const STYLES: [&str; 3] = ["a short note", "a brief overview", "a friendly explanation"];
const AUDIENCES: [&str; 5] = ["for a newsletter", "for a child", "for a colleague", "for a blog", "for a postcard"];

/// Every good open-ended answer starts with this; the judge keys on it.
const GOOD_OPEN: &str = "In brief prose:";

const PRIMES: [u64; 8] = [7, 11, 13, 17, 19, 23, 29, 31];

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    let (mut acc, mut b) = (1 % m, base % m);
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        exp >>= 1;
    }
    acc
}

fn divisor_count(n: u64) -> u64 {
    (1..=n).filter(|d| n.is_multiple_of(*d)).count() as u64
}

fn choose(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn signed_term(coef: i64, suffix: &str) -> String {
    let sign = if coef < 0 { "-" } else { "+" };
    format!("{sign} {}{suffix}", coef.unsigned_abs())
}

/// A prompt and its integer answer.
fn draw_problem(family: &Family, rng: &mut impl Rng) -> (String, i64) {
    match family.name {
        "modexp" => {
            let a = rng.random_range(2..=12u64);
            let e = rng.random_range(20..=999u64);
            let p = *PRIMES.choose(rng).expect("non-empty");
            (format!("Find the remainder when {a}^{e} is divided by {p}."), pow_mod(a, e, p) as i64)
        }
        "divisors" => {
            let n = rng.random_range(12..=5000u64);
            (format!("How many positive divisors does {n} have?"), divisor_count(n) as i64)
        }
        "gcd" => {
            let g = rng.random_range(2..=40u64);
            let (x, y) = (rng.random_range(2..=60u64), rng.random_range(2..=60u64));
            let (a, b) = (g * x, g * y);
            (format!("Find the greatest common divisor of {a} and {b}."), gcd(a, b) as i64)
        }
        "series" => {
            let a = rng.random_range(1..=50i64);
            let b = a + rng.random_range(10..=300i64);
            (format!("Find the sum of all integers from {a} to {b} inclusive."), (a + b) * (b - a + 1) / 2)
        }
        "choose" => {
            let n = rng.random_range(6..=20u64);
            let k = rng.random_range(2..=n - 2);
            (format!("In how many ways can a committee of {k} be chosen from {n} people?"), choose(n, k) as i64)
        }
        "vieta" => {
            let s = loop {
                let s = rng.random_range(-30..=30i64);
                if s != 0 {
                    break s;
                }
            };
            let q = rng.random_range(-50..=50i64);
            let prompt =
                format!("Find the sum of the roots of x^2 {} {} = 0.", signed_term(-s, "x"), signed_term(q, ""));
            (prompt, s)
        }
        "lcm" => {
            let (a, b) = (rng.random_range(4..=120u64), rng.random_range(4..=120u64));
            (format!("Find the least common multiple of {a} and {b}."), (a / gcd(a, b) * b) as i64)
        }
        "digits" => {
            let n = rng.random_range(100_000..=999_999_999u64);
            let s: u64 = n.to_string().bytes().map(|d| u64::from(d - b'0')).sum();
            (format!("What is the sum of the digits of {n}?"), s as i64)
        }
        other => unreachable!("unknown family {other}"),
    }
}

struct GenTask {
    task: TaskInstance,
    family: usize,
    /// Integer answer for verifiable tasks.
    answer: Option<i64>,
    wrong: Option<i64>,
    topic: &'static str,
}

fn draw_tasks(seed: u64, split: &str, count: usize, seen: &mut HashSet<String>) -> Vec<GenTask> {
    let mut rng = stream(seed, &format!("fixtures/mini_aime/{split}"));
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = out.len();
        let id = format!("{split}-{:04}", i + 1);
        let open = rng.random_bool(0.15);
        let untagged = rng.random_bool(0.1);
        let gen = if open {
            let family = rng.random_range(0..OPEN_FAMILIES.len());
            let f = &OPEN_FAMILIES[family];
            let topic = *TOPICS.choose(&mut rng).expect("non-empty");
            let style = *STYLES.choose(&mut rng).expect("non-empty");
            let audience = *AUDIENCES.choose(&mut rng).expect("non-empty");
            let prompt = format!("Write {style} about {topic} {audience} {}.", f.key);
            let task =
                TaskInstance { id, kind: Some(TaskKind::NonVerifiable), prompt, reference: None, step: i as u64 };
            GenTask { task, family, answer: None, wrong: None, topic }
        } else {
            let family = rng.random_range(0..FAMILIES.len());
            let (prompt, answer) = draw_problem(&FAMILIES[family], &mut rng);
            let wrong = answer + rng.random_range(1..=9i64);
            let task = TaskInstance::verifiable(id, prompt, answer.to_string());
            GenTask {
                task: TaskInstance { step: i as u64, ..task },
                family,
                answer: Some(answer),
                wrong: Some(wrong),
                topic: "",
            }
        };
        if !seen.insert(gen.task.prompt.clone()) {
            continue;
        }
        let mut gen = gen;
        if untagged {
            gen.task.kind = None;
        }
        out.push(gen);
    }
    out
}

fn weighted(pairs: &[(String, f64)]) -> Vec<WeightedResponse> {
    pairs.iter().map(|(text, weight)| WeightedResponse { text: text.clone(), weight: *weight }).collect()
}

fn rule(matcher: PromptMatcher, pairs: &[(String, f64)]) -> ScriptedRule {
    ScriptedRule { matcher, responses: weighted(pairs) }
}

fn all(parts: &[&str]) -> PromptMatcher {
    PromptMatcher::ContainsAll(parts.iter().map(|s| s.to_string()).collect())
}

fn problem_line(prompt: &str) -> String {
    format!("Problem: {prompt}\n")
}

fn solved(method: &str, answer: i64) -> String {
    format!("{method}\nTherefore the answer is \\boxed{{{answer}}}.")
}

fn careless(answer: i64) -> String {
    format!("Working it out quickly without checking each step.\nTherefore the answer is \\boxed{{{answer}}}.")
}

fn good_open(topic: &str) -> String {
    format!("{GOOD_OPEN} {topic} rewards a closer look, and a few plain sentences cover what matters most.")
}

fn bad_open(family: usize, topic: &str) -> String {
    match family {
        0 => format!("1. What {topic} is.\n2. Why {topic} matters.\n3. Where to learn more about {topic}."),
        _ => format!(
            "Here is a long answer about {topic} that keeps going well past any limit, adding background, history, \
             caveats, examples, digressions and a closing summary that repeats the earlier points about {topic} again."
        ),
    }
}

fn memory_block(index: usize, title: &str, description: &str, content: &str) -> String {
    format!("MEMORY {index}:\nTITLE: {title}\nDESCRIPTION: {description}\nCONTENT: {content}\n")
}

fn actor_fixture(tasks: &[&GenTask]) -> ScriptedFixture {
    let mut rules = Vec::new();
    for f in &FAMILIES {
        rules.push(ScriptedRule::new(all(&["Reply with exactly one label", f.key]), "VERIFIABLE"));
    }
    for f in &OPEN_FAMILIES {
        rules.push(ScriptedRule::new(all(&["Reply with exactly one label", f.key]), "NON-VERIFIABLE"));
    }
    for g in tasks {
        let line = problem_line(&g.task.prompt);
        match (g.answer, g.wrong) {
            (Some(answer), Some(wrong)) => {
                let f = &FAMILIES[g.family];
                let marker = format!("] {}", f.title);
                let right = solved(f.method, answer);
                rules.push(rule(
                    all(&[&line, &marker]),
                    &[(right.clone(), WITH_MEMORY_P), (careless(wrong), 1.0 - WITH_MEMORY_P)],
                ));
                rules
                    .push(rule(PromptMatcher::Contains(line), &[(right, f.base_p), (careless(wrong), 1.0 - f.base_p)]));
            }
            _ => {
                let f = &OPEN_FAMILIES[g.family];
                let marker = format!(": {}.", f.trigger);
                let (good, bad) = (good_open(g.topic), bad_open(g.family, g.topic));
                rules.push(rule(
                    all(&[&line, &marker]),
                    &[(good.clone(), WITH_MEMORY_P), (bad.clone(), 1.0 - WITH_MEMORY_P)],
                ));
                rules.push(rule(PromptMatcher::Contains(line), &[(good, OPEN_BASE_P), (bad, 1.0 - OPEN_BASE_P)]));
            }
        }
    }
    ScriptedFixture::new(rules, "I am not sure how to approach this.")
}

fn teacher_fixture(tasks: &[&GenTask], p: Option<f64>, voice: &str) -> ScriptedFixture {
    let mut rules = Vec::new();
    for g in tasks {
        let (Some(answer), Some(wrong)) = (g.answer, g.wrong) else { continue };
        let method = FAMILIES[g.family].method;
        let right = solved(&format!("{voice} {method}"), answer);
        let line = PromptMatcher::Contains(problem_line(&g.task.prompt));
        rules.push(match p {
            Some(p) => rule(line, &[(right, p), (careless(wrong), 1.0 - p)]),
            None => ScriptedRule::new(line, right),
        });
    }
    ScriptedFixture::new(rules, "No solution available.")
}

fn extractor_fixture() -> ScriptedFixture {
    let mut rules = Vec::new();
    for f in &FAMILIES {
        let workflow = format!("{} workflow", f.title);
        let pitfall = format!("{} pitfall", f.title);
        let variants: Vec<(String, f64)> =
            f.workflow.iter().map(|w| (memory_block(1, &workflow, f.description, w), 0.5)).collect();
        rules.push(rule(all(&["Produce only 1 memory", f.key]), &variants));
        let reflections: Vec<(String, f64)> = f
            .workflow
            .iter()
            .map(|w| {
                let text = memory_block(1, &workflow, f.description, w)
                    + "\n"
                    + &memory_block(2, &pitfall, f.description, f.pitfall);
                (text, 0.5)
            })
            .collect();
        rules.push(rule(all(&["Identify the First Bifurcation Point", f.key]), &reflections));
    }
    for f in &OPEN_FAMILIES {
        let text =
            format!("MEMORY 1:\nTRIGGER: {}\nDIMENSION: {}\nCOMPARISON: {}\n", f.trigger, f.dimension, f.comparison);
        rules.push(ScriptedRule::new(all(&["Return 1 to 3 rules total", f.key]), text));
    }
    ScriptedFixture::new(rules, "Nothing reusable here.")
}

fn judge_fixture() -> ScriptedFixture {
    let first = format!("[Response 1]:\n{GOOD_OPEN}");
    let second = format!("[Response 2]:\n{GOOD_OPEN}");
    ScriptedFixture::new(
        vec![
            ScriptedRule::new(all(&[&first, &second]), "Both follow the constraint.\nWINNER: TIE"),
            ScriptedRule::new(PromptMatcher::Contains(first), "Response 1 respects the constraint.\nWINNER: 1"),
            ScriptedRule::new(PromptMatcher::Contains(second), "Response 2 respects the constraint.\nWINNER: 2"),
        ],
        "Neither respects the constraint.\nWINNER: TIE",
    )
}

const MINI_AIME_CONFIG: &str = r#"# Scripted mini-AIME run. Paths are relative to this file.
[engine]
seed = 7

[embedder]
kind = "hashing"
dim = 64
seed = 0

[sources.actor]
kind = "scripted"
fixture = "sources/actor.jsonl"

[sources.teacher]
kind = "scripted"
fixture = "sources/teacher.jsonl"

[sources.tool_teacher]
kind = "scripted"
fixture = "sources/tool_teacher.jsonl"
cost_weight = 2.0

[sources.expert]
kind = "scripted"
fixture = "sources/expert.jsonl"
cost_weight = 10.0

[sources.judge]
kind = "scripted"
fixture = "sources/judge.jsonl"

[sources.extractor]
kind = "scripted"
fixture = "sources/extractor.jsonl"

[sources.curator]
kind = "scripted"
fixture = "sources/curator.jsonl"

[data]
train_tasks = "train.jsonl"
test_tasks = "test.jsonl"
"#;

/// The mini-AIME pack: tasks, scripted sources and `config.toml`.
pub fn mini_aime(seed: u64) -> Result<FixturePack> {
    let mut seen = HashSet::new();
    let train = draw_tasks(seed, "train", MINI_AIME_TRAIN, &mut seen);
    let test = draw_tasks(seed, "test", MINI_AIME_TEST, &mut seen);
    let instances = |gs: &[GenTask]| gs.iter().map(|g| g.task.clone()).collect::<Vec<_>>();
    let everything: Vec<&GenTask> = train.iter().chain(&test).collect();
    let train_refs: Vec<&GenTask> = train.iter().collect();

    let mut files = BTreeMap::new();
    files.insert("config.toml".to_string(), MINI_AIME_CONFIG.to_string());
    files.insert("train.jsonl".to_string(), tasks_to_jsonl(&instances(&train)));
    files.insert("test.jsonl".to_string(), tasks_to_jsonl(&instances(&test)));
    let sources = [
        ("actor", actor_fixture(&everything)),
        ("teacher", teacher_fixture(&train_refs, Some(TEACHER_P), "Teacher:")),
        ("tool_teacher", teacher_fixture(&train_refs, Some(TOOL_TEACHER_P), "Checked with code:")),
        ("expert", teacher_fixture(&train_refs, None, "Expert:")),
        ("judge", judge_fixture()),
        ("extractor", extractor_fixture()),
        ("curator", ScriptedFixture::new(vec![], "No changes.")),
    ];
    for (role, fixture) in sources {
        files.insert(format!("sources/{role}.jsonl"), fixture.to_jsonl());
    }
    for text in files.values() {
        if text.is_empty() {
            return Err(Error::SchemaViolation("generated an empty fixture file".into()));
        }
    }
    Ok(FixturePack { name: "mini_aime".into(), seed, files })
}

pub const NEAR_DUPLICATES_SEED: u64 = 99;
pub const NEAR_DUPLICATES_COUNT: usize = 1000;

/// One memory draft of the near-duplicate stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftLine {
    pub title: String,
    pub description: String,
    pub content: String,
}

/// Least cosine between a near-duplicate and the canonical draft.
pub const NEAR_DUPLICATE_MIN_COS: f64 = 0.9;

/// Paraphrases of one Fermat-reduction strategy, drawn slot by slot. The
/// first draft is canonical; later ones are kept only if their retrieval
/// text under the default hashing embedder has cosine at least
/// [`NEAR_DUPLICATE_MIN_COS`] with it.
pub fn near_duplicate_drafts(seed: u64, count: usize) -> Result<Vec<DraftLine>> {
    const VERB: [&str; 3] = ["Reduce", "Shrink", "Cut down"];
    const USE: [&str; 3] = ["Use", "Apply", "Invoke"];
    const ACT: [&str; 3] = ["shrink", "reduce", "lower"];
    const MODULO: [&str; 2] = ["mod", "modulo"];
    const TAIL: [&str; 3] = ["", " before multiplying", " first"];
    const CONTENT: [&str; 3] = [
        "Step 1: Reduce the exponent modulo p - 1. Step 2: Evaluate the small power.",
        "Step 1: Replace the exponent by its residue mod p - 1. Step 2: Square and multiply.",
        "Step 1: Check the base is coprime to p. Step 2: Reduce the exponent mod p - 1.",
    ];
    let embedder = HashingEmbedder::new(DEFAULT_TEST_DIM, 0)?;
    let embed = |d: &DraftLine| embedder.embed(&retrieval_text(&d.title, &d.description));
    let canonical = DraftLine {
        title: "Reduce exponents with Fermat".into(),
        description: "Use Fermat's little theorem to reduce large exponents mod a prime.".into(),
        content: CONTENT[0].into(),
    };
    let anchor = embed(&canonical)?;
    let mut rng = stream(seed, "fixtures/near_duplicates");
    let mut out = vec![canonical];
    while out.len() < count {
        let mut pick = |xs: &[&'static str]| *xs.choose(&mut rng).expect("non-empty");
        let (verb, use_, act, modulo, tail) = (pick(&VERB), pick(&USE), pick(&ACT), pick(&MODULO), pick(&TAIL));
        let draft = DraftLine {
            title: format!("{verb} exponents with Fermat"),
            description: format!("{use_} Fermat's little theorem to {act} large exponents {modulo} a prime{tail}."),
            content: pick(&CONTENT).into(),
        };
        if cosine_sim(&anchor, &embed(&draft)?)? >= NEAR_DUPLICATE_MIN_COS {
            out.push(draft);
        }
    }
    out.truncate(count);
    Ok(out)
}

/// The near-duplicate stream as JSONL.
pub fn near_duplicates(seed: u64) -> Result<FixturePack> {
    let text: String = near_duplicate_drafts(seed, NEAR_DUPLICATES_COUNT)?
        .iter()
        .map(|d| serde_json::to_string(d).expect("draft serializes") + "\n")
        .collect();
    Ok(FixturePack {
        name: "near_duplicates".into(),
        seed,
        files: BTreeMap::from([("drafts.jsonl".to_string(), text)]),
    })
}

pub const CASCADE_SEED: u64 = 3;
/// Teacher success rates for the monotonicity sweep; the middle one is the
/// headline configuration.
pub const CASCADE_TEACHER_PS: [f64; 3] = [0.4, 0.6, 0.8];

/// The single cascade task. Trials differ only in task id.
pub fn cascade_task() -> TaskInstance {
    TaskInstance::verifiable(
        "cascade",
        "Find the remainder when 7^222 is divided by 11.",
        pow_mod(7, 222, 11).to_string(),
    )
}

/// Teacher file name for success rate `p`.
pub fn cascade_teacher_file(p: f64) -> String {
    format!("sources/teacher_p{:03}.jsonl", (p * 100.0).round() as u32)
}

/// Scripted levels that verify with fixed probabilities on every prompt.
pub fn cascade_pack(seed: u64) -> FixturePack {
    let task = cascade_task();
    let answer: i64 = task.reference.as_deref().and_then(|r| r.parse().ok()).expect("integer reference");
    let level = |voice: &str, p: f64| {
        let right = solved(&format!("{voice} Reduce 222 modulo 10 by Fermat."), answer);
        let fixture = if p >= 1.0 {
            ScriptedFixture::new(vec![ScriptedRule::new(PromptMatcher::Any, right)], "")
        } else {
            ScriptedFixture::new(vec![rule(PromptMatcher::Any, &[(right, p), (careless(answer + 1), 1.0 - p)])], "")
        };
        fixture.to_jsonl()
    };
    let mut files = BTreeMap::new();
    files.insert("task.jsonl".to_string(), tasks_to_jsonl(std::slice::from_ref(&task)));
    for p in CASCADE_TEACHER_PS {
        files.insert(cascade_teacher_file(p), level("Teacher:", p));
    }
    files.insert("sources/tool_teacher.jsonl".to_string(), level("Checked with code:", TOOL_TEACHER_P));
    files.insert("sources/expert.jsonl".to_string(), level("Expert:", 1.0));
    FixturePack { name: "cascade".into(), seed, files }
}

/// One bandit-simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub params: SimParams,
    pub config: SimConfig,
    pub first_seed: u64,
    pub seeds: u64,
    pub steps: usize,
}

impl SimScenario {
    pub fn seed_range(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.seeds
    }
}

/// Scenario files for decoupling, cold start and policy ordering.
pub fn sim_pack() -> FixturePack {
    let cfg = SimConfig::default();
    let scenarios = [
        (
            "decoupling",
            SimScenario { params: SimParams::decoupling(), config: cfg.clone(), first_seed: 0, seeds: 100, steps: 200 },
        ),
        (
            "cold_start",
            SimScenario {
                params: SimParams::cold_start(),
                config: cfg.clone(),
                first_seed: 0,
                seeds: 200,
                steps: 1000,
            },
        ),
        ("ordering", SimScenario { params: SimParams::default(), config: cfg, first_seed: 0, seeds: 100, steps: 2000 }),
    ];
    let files = scenarios
        .into_iter()
        .map(|(name, s)| {
            (format!("{name}.json"), serde_json::to_string_pretty(&s).expect("scenario serializes") + "\n")
        })
        .collect();
    FixturePack { name: "sim".into(), seed: 0, files }
}

/// Mean exposure of the mid-stream memory per policy over the cold-start
/// scenario, from the simulator itself. Pinned so drift is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartOracle {
    pub sa_cts_exposure: f64,
    pub greedy_exposure: f64,
    /// Post-insertion retrieval opportunities pooled over seeds.
    pub opportunities: u64,
}

pub fn cold_start_oracle(s: &SimScenario) -> Result<ColdStartOracle> {
    let (mut sa, mut greedy, mut opportunities) = (0.0, 0.0, 0);
    for seed in s.seed_range() {
        let env = generate_env(&s.params, seed)?;
        sa += run_policy(&env, Policy::SaCts, s.steps, &s.config)?.new_memory_exposure_rate;
        greedy += run_policy(&env, Policy::GreedyUtility, s.steps, &s.config)?.new_memory_exposure_rate;
        opportunities += env
            .memories
            .iter()
            .filter(|m| m.insert_step > 0)
            .map(|m| s.steps.saturating_sub(m.insert_step) as u64)
            .sum::<u64>();
    }
    let n = s.seeds as f64;
    Ok(ColdStartOracle { sa_cts_exposure: sa / n, greedy_exposure: greedy / n, opportunities })
}

/// Pinned outcome of training then testing a pack from an empty store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackExpectation {
    pub pack: String,
    pub seed: u64,
    pub pack_digest: String,
    pub train_report_digest: String,
    pub test_report_digest: String,
    pub store_digest: String,
    pub store_size: usize,
}

pub struct PackRun {
    pub train: StreamReport,
    pub test: StreamReport,
    pub store: MemoryStore,
}

/// Trains on the pack's train split from an empty store, then evaluates the
/// frozen result on its test split.
pub fn run_pack(dir: &Path) -> Result<PackRun> {
    let runtime = Runtime::load(&dir.join("config.toml"))?;
    let data = &runtime.config.data;
    let missing = || Error::Config("pack config needs train_tasks and test_tasks".into());
    let train_tasks = load_tasks(data.train_tasks.as_deref().ok_or_else(missing)?)?;
    let test_tasks = load_tasks(data.test_tasks.as_deref().ok_or_else(missing)?)?;
    let mut store = runtime.empty_store(&runtime.default_run_id());
    let train = runtime.engine(EngineMode::Training)?.run_training_stream(&train_tasks, &mut store)?;
    let test = runtime.engine(EngineMode::FrozenTest)?.run_test_stream(&test_tasks, &store)?;
    Ok(PackRun { train, test, store })
}

impl PackRun {
    pub fn expectation(&self, pack: &FixturePack) -> PackExpectation {
        PackExpectation {
            pack: pack.name.clone(),
            seed: pack.seed,
            pack_digest: pack.digest(),
            train_report_digest: self.train.digest(),
            test_report_digest: self.test.digest(),
            store_digest: self.store.digest(),
            store_size: self.store.len(),
        }
    }
}
