//! Builds every classification head on the pre-trained benchmark encoder and
//! scores it on the test set before any fine-tuning. The label-word heads
//! already carry prior knowledge; MAV, cls and maskrep start from random
//! weights.
//!
//! The first run pre-trains the encoder (about a minute) and caches it in the
//! system temp directory.

use mav_core::bench::{Bench, BenchConfig};
use mav_core::verbalizers::{HeadKind, HeadVariant};

fn main() -> anyhow::Result<()> {
    let bench = Bench::prepare_cached(BenchConfig::standard(), &std::env::temp_dir().join("mav-bench"))?;
    let split = bench.split(0)?;
    for kind in HeadKind::ALL {
        let head = bench.init_head(kind, &split, 0)?;
        let acc = bench.test_accuracy(&bench.pretrained, &head, &split)?;
        let params = head.store().map_or(0, |s| s.num_values());
        println!("{:8} untrained test accuracy {:.3}, {params} trainable values", kind.name(), acc);
        if let HeadVariant::Multi(map) = &head {
            for (c, ids) in map.ids.iter().enumerate() {
                let words: Vec<&str> = ids.iter().take(6).filter_map(|&t| bench.vocab.token(t)).collect();
                println!("         class {c} label words (AMuLaP): {}", words.join(" "));
            }
        }
    }
    Ok(())
}
