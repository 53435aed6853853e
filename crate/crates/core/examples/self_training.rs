//! Trains MAV on one split with labeled data only and with self-training on
//! the unlabeled pool, printing the dev history of the semi-supervised run.

use mav_core::bench::{Bench, BenchConfig};
use mav_core::selftrain::TrainMode;
use mav_core::verbalizers::HeadKind;

fn main() -> anyhow::Result<()> {
    let config = BenchConfig::standard();
    let bench = Bench::prepare_cached(config.clone(), &std::env::temp_dir().join("mav-bench"))?;
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;

    let small = bench.run(HeadKind::Mav, TrainMode::Small, seed, &config.train)?;
    let semi = bench.run(HeadKind::Mav, TrainMode::Semi, seed, &config.train)?;
    println!("epoch  l_sup   l_st    l_mlm   passed  dev");
    for r in &semi.outcome.history {
        println!(
            "{:5}  {:.4}  {:.4}  {:.4}  {:6}  {:.3}",
            r.epoch, r.l_sup, r.l_st, r.l_mlm, r.passed_count, r.dev_acc
        );
    }
    println!("\nseed {seed}: small {:.3}, semi {:.3} (best epoch {})", small.test_acc, semi.test_acc, semi.outcome.best_epoch);
    Ok(())
}
