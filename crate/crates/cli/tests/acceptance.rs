//! Acceptance gate: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use asymrisk_cli::acceptance::{run_acceptance, DEFAULT_WORKERS};
use asymrisk_cli::config::DEFAULT_SEED;

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let out = dir.path().join("acceptance");
    let lines = match run_acceptance(&out, DEFAULT_SEED, DEFAULT_WORKERS) {
        Ok(lines) => lines,
        Err(e) => {
            eprintln!("acceptance suite aborted: {e}");
            std::process::exit(1);
        }
    };
    for l in &lines {
        println!("{}", l.render());
    }
    let failed = lines.iter().filter(|l| !l.ok()).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
