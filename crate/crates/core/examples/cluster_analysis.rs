//! Clusters the test set's [MASK] representations with k-means and compares
//! the silhouette of the pre-trained encoder with the self-trained one.
//! Writes the representations to `representations.csv` in the temp dir.

use mav_core::bench::{Bench, BenchConfig};
use mav_core::corpus::encode_all;
use mav_core::eval::{silhouette_kmeans, write_representation_csv};
use mav_core::selftrain::{labels_of, TrainMode};
use mav_core::verbalizers::{mask_representations, HeadKind};

fn main() -> anyhow::Result<()> {
    let config = BenchConfig::standard();
    let bench = Bench::prepare_cached(config.clone(), &std::env::temp_dir().join("mav-bench"))?;
    let run = bench.run(HeadKind::Mav, TrainMode::Semi, 0, &config.train)?;
    let seqs = encode_all(&run.split.test, &bench.vocab, true, config.model.max_len)?;
    let refs: Vec<_> = seqs.iter().collect();
    let k = run.split.num_classes();

    let before = silhouette_kmeans(&mask_representations(&bench.pretrained, &refs)?, k, 0)?;
    let reps = mask_representations(&run.outcome.model, &refs)?;
    let after = silhouette_kmeans(&reps, k, 0)?;
    println!("silhouette (k = {k}): pre-trained {:.3}, after self-training {:.3}", before.silhouette, after.silhouette);

    let path = std::env::temp_dir().join("representations.csv");
    write_representation_csv(&path, &reps, &labels_of(&run.split.test)?, &after.assignment)?;
    println!("wrote {}", path.display());
    Ok(())
}
