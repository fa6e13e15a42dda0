//! Loads word vectors in text format and aligns them with a vocabulary.
//! Words missing from the file get small random vectors; PAD stays zero.
//!
//! cargo run --example load_embeddings [-- path/to/vectors.txt]

use exploit_target::embed::{build_matrix, load_embeddings};
use exploit_target::textprep::{normalize, Vocab, PAD};

fn main() -> exploit_target::Result<()> {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = tmp.path().join("vectors.txt");
            let body = "sql 0.12 -0.40 0.33 0.05\ninjection 0.10 -0.38 0.30 0.07\nshell -0.25 0.11 0.02 0.44\nsql 9 9 9 9\n";
            std::fs::write(&p, body).expect("write sample vectors");
            p
        }
    };
    let load = load_embeddings(&path, None)?;
    println!("{} vectors of dimension {}", load.table.len(), load.table.dim());
    for (line, word) in &load.duplicates {
        println!("line {line}: duplicate {word:?} skipped");
    }

    let tokens = normalize("SQL injection gives a reverse shell on the server");
    let vocab = Vocab::build([&tokens], 1)?;
    let emb = build_matrix(&vocab, &load.table, 7);
    println!("coverage {:.2} over {} vocabulary entries", emb.coverage, vocab.len());
    for (id, tok) in vocab.tokens().iter().enumerate() {
        let row: Vec<String> = emb.matrix.row(id).iter().map(|v| format!("{v:+.3}")).collect();
        let tag = if id as u32 == PAD { " (pad)" } else if load.table.get(tok).is_some() { " (pretrained)" } else { "" };
        println!("{tok:>10}{tag:<13} [{}]", row.join(", "));
    }
    Ok(())
}
