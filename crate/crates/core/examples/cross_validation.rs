//! Stratified ten-fold split of a corpus with the five-bin class counts
//! 1780/1351/961/673/445: fold sizes, per-class spread and the plan hash.
//!
//! cargo run --example cross_validation

use exploit_target::evalharness::stratified_kfold;
use exploit_target::synthetic::reference_bin_gold;

fn main() -> exploit_target::Result<()> {
    let ds = reference_bin_gold()?;
    for s in ds.shares() {
        println!("{:>12}: {:>5} ({:.2}%)", s.bin, s.count, s.percent);
    }
    let plan = stratified_kfold(&ds, 10, 42)?;
    println!("\nfold sizes {:?}", plan.sizes());
    for (c, class) in ds.classes().iter().enumerate() {
        let per: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| ds.labels()[i] == c).count()).collect();
        println!("{class:>12}: {per:?}");
    }
    println!("plan hash {}", plan.hash);
    let again = stratified_kfold(&ds, 10, 42)?;
    println!("same seed, same plan: {}", again == plan);
    Ok(())
}
