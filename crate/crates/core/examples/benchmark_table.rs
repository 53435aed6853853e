//! Heads × training modes over several seeds, with the benefit ratio of
//! each head. Takes the number of seeds as its argument (default 5); the
//! full grid at five seeds runs for roughly half an hour.
//!
//! ```text
//! cargo run --release --example benchmark_table -- 3
//! ```

use mav_core::bench::{Bench, BenchConfig};
use mav_core::eval::{compare_table, CellResult};
use mav_core::selftrain::TrainMode;
use mav_core::verbalizers::HeadKind;

fn main() -> anyhow::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    let config = BenchConfig::standard();
    let bench = Bench::prepare_cached(config.clone(), &std::env::temp_dir().join("mav-bench"))?;
    let mut cells = Vec::new();
    for head in [HeadKind::Cls, HeadKind::Single, HeadKind::Multi, HeadKind::Mav] {
        for mode in TrainMode::ALL {
            let accs = (0..seeds)
                .map(|s| Ok(bench.run(head, mode, s, &config.train)?.test_acc))
                .collect::<anyhow::Result<Vec<f64>>>()?;
            eprintln!("{head}/{mode}: {accs:?}");
            cells.push(CellResult {
                head: head.name().into(),
                mode,
                accs,
            });
        }
    }
    print!("{}", compare_table(&cells).to_text());
    Ok(())
}
