//! Ten-fold benchmark of all eight models on a corpus where only word order
//! carries the label. Bag-of-words models sit near chance; recurrent models
//! do not.
//!
//! cargo run --release --example benchmark_order_task

use std::time::Instant;

use exploit_target::evalharness::{run_benchmark, ModelSpec};
use exploit_target::synthetic::{desk_config, order_task};

fn main() -> exploit_target::Result<()> {
    let dataset = order_task(2000, 7)?;
    let start = Instant::now();
    let report = run_benchmark(&dataset, &ModelSpec::all(), &desk_config(), None, 7, None)?;
    print!("{}", report.to_markdown());
    println!("\nfinished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
