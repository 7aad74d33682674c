//! Generate one benchmark, rediscover its equations and score them.
//!
//! cargo run --release --example benchmark -- kdv

use std::time::Instant;

use bgsindy::pipeline::{run_discovery, DiscoveryConfig};
use bgsindy::simulate::{generate, BenchmarkConfig, BenchmarkId};

fn main() -> bgsindy::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "kdv".into());
    let id = BenchmarkId::parse(&name)?;
    let start = Instant::now();
    let data = generate(&BenchmarkConfig::default_for(id)?)?;
    println!("generated {:?} in {:.1?}", data.shape(), start.elapsed());
    let report = run_discovery(&data, &DiscoveryConfig::preset(id)?, true)?;
    for eq in &report.equations {
        println!("{eq}");
    }
    if let Some(v) = &report.validation {
        for f in &v.fields {
            println!(
                "{}: structure {} coefficient error {:?} relative L2 {:?}",
                f.field, f.structure.matches, f.coefficient_error, f.relative_l2
            );
        }
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
