//! Organization mentions with the shipped gazetteer: a single sentence, then
//! bin counts over the fixture corpus and the effect of the pruning floor.
//!
//! cargo run --example extract_entities

use std::path::Path;

use exploit_target::corpus::CorpusStore;
use exploit_target::entities::{assign_bins, build_gold, extract_from_post, extract_orgs, prune_bins, Gazetteer, Recognizer};

fn main() -> exploit_target::Result<()> {
    let gaz = Gazetteer::starter();
    let text = "Remote code execution in the Oracle database, also tested against MySQL and a Google account page.";
    for m in extract_orgs(text, &gaz) {
        println!("{:>24} <- {:?} at {:?} ({})", m.canonical_name, m.surface, m.span, gaz.bin_of(&m.canonical_name).unwrap_or("?"));
    }

    let tmp = tempfile::TempDir::new().expect("temp dir");
    let mut store = CorpusStore::open(tmp.path())?;
    store.ingest_posts(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/posts_200.jsonl"))?;
    let mentions: Vec<_> = store.posts()?.iter().flat_map(|p| extract_from_post(p, &gaz)).collect();
    let counts = assign_bins(&mentions, &gaz)?;
    println!("\n{} mentions in {} posts", mentions.len(), store.len());
    for (bin, n) in &counts {
        println!("{bin:>12}: {n}");
    }

    let kept = prune_bins(&counts, 100);
    let retained: Vec<String> = kept.keys().cloned().collect();
    println!("\nbins with at least 100 mentions: {retained:?}");
    if let Some(gold) = build_gold(&store, &gaz, &retained)? {
        for s in gold.shares() {
            println!("{:>12}: {:>3} records ({:.2}%)", s.bin, s.count, s.percent);
        }
    }
    Ok(())
}
