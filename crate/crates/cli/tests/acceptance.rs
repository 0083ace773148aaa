//! Runs every acceptance criterion and prints one line per criterion. Set
//! `ACCEPTANCE_ONLY=3,7` to run a subset. Exits non-zero when a criterion fails
//! that is not a known desk-scale limit.

use raysense_cli::criteria::run_criteria;

fn main() {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let reports = run_criteria(&only, |r| println!("{}", r.line()));
    let unexpected: Vec<usize> = reports.iter().filter(|r| r.unexpected_failure()).map(|r| r.id).collect();
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria passed", reports.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
