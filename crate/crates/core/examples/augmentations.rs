//! The strong augmentations applied to unlabeled inputs, and the class-wise
//! thresholds FlexMatch derives from pass counts.

use mav_core::corpus::{apply_template, build_vocab, Example};
use mav_core::selftrain::{flexmatch_thresholds, strong_augment, AugMethod, StrongAug};
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let x = Example::unlabeled("the quick brown fox jumps over the lazy dog");
    let vocab = build_vocab(&[x.clone(), Example::unlabeled(":")])?;
    let seq = apply_template(&x, &vocab, 64)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    println!("original      {}", vocab.decode(seq.active()));
    for method in [AugMethod::RandomMask, AugMethod::WordDelete, AugMethod::WordSwap] {
        let aug = StrongAug { method, p: 0.3 };
        let out = strong_augment(&seq, aug, &mut rng);
        println!("{:13} {}", method.name(), vocab.decode(out.active()));
    }

    let sigma = [40, 20, 5, 0];
    println!("\npass counts {sigma:?} -> thresholds {:?}", flexmatch_thresholds(&sigma, 0.95));
    Ok(())
}
