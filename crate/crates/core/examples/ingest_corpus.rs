//! Ingests the bundled 200-post fixture into a fresh corpus store twice and
//! prints the ingest reports and per-forum statistics. The second pass adds
//! nothing.
//!
//! cargo run --example ingest_corpus

use std::path::Path;

use exploit_target::corpus::{corpus_stats, CorpusStore};

fn main() -> exploit_target::Result<()> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/posts_200.jsonl");
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let mut store = CorpusStore::open(tmp.path().join("store"))?;

    for pass in 1..=2 {
        let r = store.ingest_posts(&fixture)?;
        println!(
            "pass {pass}: {} added, {} duplicate, {} rejected",
            r.posts_added, r.posts_skipped_duplicate, r.posts_rejected
        );
        for rej in &r.rejection_reasons {
            println!("  line {}: {}", rej.line, rej.reason);
        }
    }
    println!("store holds {} posts\n", store.len());
    print!("{}", corpus_stats(&store)?.to_markdown());
    Ok(())
}
