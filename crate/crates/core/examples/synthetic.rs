//! Writes a synthetic dataset CSV to stdout.
//!
//! `cargo run -p bayesflow-core --example synthetic -- [seed] [projects] [rows]`

use bayesflow::synthetic::{generate_records, to_csv, SyntheticConfig};

fn main() {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments are non-negative integers"))
        .collect();
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        seed: args.first().copied().unwrap_or(defaults.seed),
        n_projects: args.get(1).map_or(defaults.n_projects, |&v| v as usize),
        n_rows: args.get(2).map_or(defaults.n_rows, |&v| v as usize),
        ..defaults
    };
    match generate_records(&config) {
        Ok(records) => print!("{}", to_csv(&records)),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
