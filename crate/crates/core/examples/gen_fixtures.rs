//! Regenerates the committed fixture packs and their pinned expectations.
//!
//! ```text
//! cargo run --release -p evomem-core --example gen_fixtures [-- <fixtures dir>]
//! ```

use evomem_core::fixtures::{
    cascade_pack, cold_start_oracle, mini_aime, near_duplicates, run_pack, sim_pack, SimScenario, CASCADE_SEED,
    MINI_AIME_SEED, NEAR_DUPLICATES_SEED,
};
use std::path::PathBuf;

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializes") + "\n"
}

fn main() -> evomem_core::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));

    let pack = mini_aime(MINI_AIME_SEED)?;
    let dir = root.join(&pack.name);
    pack.write_to(&dir)?;
    let run = run_pack(&dir)?;
    std::fs::write(dir.join("expected.json"), pretty(&run.expectation(&pack)))?;
    let (tr, te) = (&run.train.aggregates, &run.test.aggregates);
    println!("{}: store {} memories", pack.name, run.store.len());
    println!(
        "  train accuracy {:?} base {:?} win {:?}; expert fraction {:.3} over {} failures",
        tr.accuracy, tr.base_accuracy, tr.win_rate, tr.expert_call_fraction, tr.cascade.total_failures
    );
    println!("  test accuracy {:?} win {:?} skipped {}", te.accuracy, te.win_rate, te.skipped);

    cascade_pack(CASCADE_SEED).write_to(&root.join("cascade"))?;
    near_duplicates(NEAR_DUPLICATES_SEED)?.write_to(&root.join("near_duplicates"))?;

    let sim = sim_pack();
    let sim_dir = root.join(&sim.name);
    sim.write_to(&sim_dir)?;
    let scenario: SimScenario = serde_json::from_str(&sim.files["cold_start.json"]).expect("generated scenario parses");
    let oracle = cold_start_oracle(&scenario)?;
    std::fs::write(sim_dir.join("cold_start_oracle.json"), pretty(&oracle))?;
    println!("sim: cold start exposure sa_cts {} greedy {}", oracle.sa_cts_exposure, oracle.greedy_exposure);
    Ok(())
}
