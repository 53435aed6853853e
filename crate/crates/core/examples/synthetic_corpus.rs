//! Generates the synthetic task, builds the vocabulary and shows how one
//! sentence is wrapped in the prompt template.
//!
//! ```text
//! cargo run --release --example synthetic_corpus
//! ```

use mav_core::corpus::{apply_plain, apply_template, build_vocab, gen_synthetic, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut spec = SyntheticSpec::with_sizes(4, 10, 40);
    spec.corpus_size = 2000;
    spec.prompt_rate = 0.25;
    let (corpus, pool) = gen_synthetic(&spec, 7)?;

    let mut all = corpus.clone();
    all.extend(pool.train.iter().cloned());
    let vocab = build_vocab(&all)?;
    println!(
        "{} corpus sentences, {} labeled train, {} labeled test, |V| = {}",
        corpus.len(),
        pool.train.len(),
        pool.test.len(),
        vocab.len()
    );
    for ex in corpus.iter().take(4) {
        println!("  corpus: {}", ex.text);
    }

    let x = &pool.train[0];
    println!("\nlabel {:?}: {}", x.label, x.text);
    let t = apply_template(x, &vocab, 64)?;
    println!("templated: {}  (mask at {:?})", vocab.decode(t.active()), t.mask_pos);
    let p = apply_plain(x, &vocab, 64)?;
    println!("plain:     {}", vocab.decode(p.active()));
    println!("manual label words: {:?}", spec.manual_label_words());
    Ok(())
}
