//! Finite-difference check of both training objectives on a random subset
//! of every parameter group.
//!
//! cargo run --release --example gradient_check [entries_per_group]

use tessgs::pipeline::{run_gradcheck, GradcheckOptions};

fn main() -> anyhow::Result<()> {
    let n = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let rep = run_gradcheck(&GradcheckOptions {
        seed: 7,
        max_per_group: Some(n),
    })?;
    for g in &rep.groups {
        println!(
            "{:<6} {:<20} {:>5} checked  max rel err {:.2e}",
            g.suite, g.group, g.checked, g.max_rel_err
        );
    }
    println!("{} pixels pinned near the cutoff; passed: {}", rep.frozen_pixels, rep.passed());
    Ok(())
}
