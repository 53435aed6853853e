//! Self-training MAV under the three freeze policies.

use mav_core::bench::{Bench, BenchConfig};
use mav_core::model::FreezePolicy;
use mav_core::selftrain::TrainMode;
use mav_core::verbalizers::HeadKind;

fn main() -> anyhow::Result<()> {
    let config = BenchConfig::standard();
    let bench = Bench::prepare_cached(config.clone(), &std::env::temp_dir().join("mav-bench"))?;
    let seeds = 0..3;
    for freeze in [FreezePolicy::None, FreezePolicy::MlmHead, FreezePolicy::Encoder] {
        let mut train = config.train.clone();
        train.freeze = freeze;
        let accs = seeds
            .clone()
            .map(|s| Ok(bench.run(HeadKind::Mav, TrainMode::Semi, s, &train)?.test_acc))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{:8} mean {:.3} {:?}", freeze.name(), mean, accs);
    }
    Ok(())
}
