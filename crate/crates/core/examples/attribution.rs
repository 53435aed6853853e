//! Which vocabulary entries drive each class score of a trained MAV head.
//! Uses the keyword-rich task, where every class has its own keywords.

use mav_core::bench::{Bench, BenchConfig};
use mav_core::corpus::encode_all;
use mav_core::eval::{vocab_attribution, AttributionMethod};
use mav_core::selftrain::{labels_of, TrainMode};
use mav_core::verbalizers::{HeadKind, HeadVariant};

fn main() -> anyhow::Result<()> {
    let config = BenchConfig::keyword_rich();
    let bench = Bench::prepare_cached(config.clone(), &std::env::temp_dir().join("mav-bench"))?;
    let run = bench.run(HeadKind::Mav, TrainMode::Semi, 0, &config.train)?;
    let HeadVariant::Mav(mav) = &run.outcome.head else { unreachable!() };
    let seqs = encode_all(&run.split.test, &bench.vocab, true, config.model.max_len)?;
    let labels = labels_of(&run.split.test)?;
    println!("test accuracy {:.3}", run.test_acc);
    for method in [AttributionMethod::default(), AttributionMethod::GradientInput] {
        let report = vocab_attribution(&run.outcome.model, mav, &seqs, &labels, &bench.vocab, 5, method)?;
        println!("\n{method:?}");
        for c in &report.classes {
            let toks: Vec<String> = c.tokens.iter().map(|(t, s)| format!("{t}:{s:.2}")).collect();
            println!("  class {} ({} samples): {}", c.class, c.samples, toks.join(" "));
        }
    }
    Ok(())
}
