//! Prints strong-error tables and scaling ratios for the reference problems.
//!
//! `cargo run --release --example order_study -- [paths] [seed]`

use irrsde::analysis::{
    convergence_study, crossing_statistic, increment_moment, occupation_time, McConfig,
};
use irrsde::model::catalog;

fn main() -> irrsde::Result<()> {
    let mut args = std::env::args().skip(1);
    let paths = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(20240601);
    let cfg = McConfig::new(paths, seed);
    let levels: Vec<u32> = (4..=10).collect();

    for (name, problem) in [
        ("cubic with jump", catalog::cubic_with_jump(0.5, 1.0)),
        ("linear", catalog::linear(1.0, 1.0)),
    ] {
        let table = convergence_study(&problem, &levels, 13, &cfg)?;
        println!("{name}:");
        for r in &table.rows {
            println!("  delta {:>10.3e}  error {:.5e}  stderr {:.2e}", r.delta, r.error, r.std_error);
        }
        println!("  slope {:.4}  R^2 {:.4}", table.fitted_slope, table.r_squared);
    }

    let p = catalog::cubic_with_jump(0.5, 1.0);
    let c6 = crossing_statistic(&p, 6, &cfg)?.estimate;
    let c7 = crossing_statistic(&p, 7, &cfg)?.estimate;
    println!("crossing 2^-6 / 2^-7: {:.4} ({c6:.4e} / {c7:.4e})", c6 / c7);
    let o1 = occupation_time(&p, 6, 0, 0.1, &cfg)?.estimate;
    let o2 = occupation_time(&p, 8, 0, 0.05, &cfg)?.estimate;
    println!("occupation (0.1, 2^-6) / (0.05, 2^-8): {:.4}", o1 / o2);
    let i6 = increment_moment(&p, 6, 2.0, &cfg)?.estimate;
    let i8 = increment_moment(&p, 8, 2.0, &cfg)?.estimate;
    println!("increment 2^-6 / 2^-8: {:.4}", i6 / i8);
    Ok(())
}
