//! Normalizes an exploit snippet into lemmatized tokens, builds a vocabulary
//! and shows the padded id encoding the sequence models consume.
//!
//! cargo run --example preprocess_text

use exploit_target::textprep::{encode_pad, lemmatize, normalize, Vocab};

const SNIPPET: &str = r#"
# Exploit Title: Blind SQL injection in login.php
payload = "' OR 1=1 -- "
for users in targets:
    requests.post(url, data={"user": users, "pass": payload})  # bypassing checks
"#;

fn main() -> exploit_target::Result<()> {
    for w in ["injections", "bypassing", "passwords", "classes", "studies"] {
        println!("{w:>12} -> {}", lemmatize(w));
    }

    let tokens = normalize(SNIPPET);
    println!("\n{} tokens: {}", tokens.len(), tokens.join(" "));

    let vocab = Vocab::build([&tokens], 1)?;
    println!("vocabulary: {} entries, hash {}", vocab.len(), &vocab.content_hash()[..16]);

    let encoded = encode_pad(&tokens, &vocab, 24);
    println!("ids (maxlen 24): {:?}", encoded.ids);
    println!("true length {}; decoded: {}", encoded.true_length, vocab.decode(&encoded).join(" "));

    let unseen = normalize("union select from information_schema");
    println!("unseen text: {:?}", encode_pad(&unseen, &vocab, 6).ids);
    Ok(())
}
