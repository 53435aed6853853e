//! Samples k labeled, mu*k unlabeled and k dev examples per class, and shows
//! what happens to a class that is too small under both policies.

use mav_core::corpus::{sample_few_shot, Example, LabeledPool, UndersizedPolicy};

fn pool(sizes: &[usize]) -> LabeledPool {
    let mut p = LabeledPool::default();
    for (y, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            p.train.push(Example::labeled(format!("c{y} item{i}"), y));
        }
        p.test.push(Example::labeled(format!("c{y} held"), y));
    }
    p
}

fn main() -> anyhow::Result<()> {
    let p = pool(&[60, 60, 60]);
    let s = sample_few_shot(&p, 4, 4, 0, UndersizedPolicy::Drop)?;
    println!(
        "k=4 mu=4: {} labeled, {} unlabeled, {} dev, {} test",
        s.labeled.len(),
        s.unlabeled.len(),
        s.dev.len(),
        s.test.len()
    );
    println!("first labeled: {:?}", s.labeled[0]);
    let again = sample_few_shot(&p, 4, 4, 0, UndersizedPolicy::Drop)?;
    println!("same seed, same split: {}", again == s);

    let small = pool(&[60, 60, 20]);
    for policy in [UndersizedPolicy::Drop, UndersizedPolicy::ReduceK] {
        let s = sample_few_shot(&small, 4, 4, 0, policy)?;
        println!(
            "{policy:?}: k = {}, kept {:?}, dropped {:?}",
            s.manifest.k, s.manifest.classes, s.manifest.dropped_classes
        );
    }
    Ok(())
}
