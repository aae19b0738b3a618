//! Sentence and corpus BLEU-4 and the forgetting percentage.
//!
//! Run with `cargo run --release --example bleu`.

use contcap::metrics::{bleu4, corpus_bleu, forgetting_pct, BleuConfig};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> contcap::Result<()> {
    let refs = vec![words("a dog runs across the green field"), words("the dog is running on the grass")];
    for cand in ["a dog runs across the green field", "the dog runs on the grass", "a cat", ""] {
        println!("{:<36} BLEU-4 {:.4}", format!("{cand:?}"), bleu4(&words(cand), &refs)?);
    }

    let corpus = vec![
        (words("a dog runs on the grass"), refs.clone()),
        (words("two people ride bikes down a street"), vec![words("two people ride their bikes down the street")]),
    ];
    println!("corpus BLEU-4 {:.4}", corpus_bleu(&corpus, &BleuConfig::default())?);

    for (own, last) in [(0.30, 0.15), (0.30, 0.33), (0.0, 0.1)] {
        match forgetting_pct(own, last) {
            Some(f) => println!("forgetting from {own} to {last}: {f:.1}%"),
            None => println!("forgetting from {own} to {last}: N/A"),
        }
    }
    Ok(())
}
