//! Acceptance checks: one PASS/FAIL line per criterion.
//!
//! Run all of them with `cargo test --release -p gns-cli --test acceptance`,
//! or pass names to run a subset, e.g. `... --test acceptance -- autodiff metrics`.
//! The training experiments dominate the runtime (about 90 minutes on one core).
//! Failures are reported but only fail the process with `GNS_ACCEPTANCE_STRICT` set.

mod experiments;
mod oracles;
mod properties;

use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

type Check = fn() -> Verdict;

const CHECKS: [(&str, Check); 10] = [
    ("autodiff", properties::autodiff),
    ("neighbors", properties::neighbors),
    ("integrator", properties::integrator),
    ("equivariance", properties::equivariance),
    ("noise", properties::noise),
    ("metrics", properties::metrics),
    ("learning", experiments::learning),
    ("noise_ablation", experiments::noise_ablation),
    ("message_passing_ablation", experiments::message_passing_ablation),
    ("determinism", experiments::determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in CHECKS {
        if !filters.is_empty() && !filters.iter().any(|f| f == name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = check();
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} ({:.1}s)", verdict.detail, start.elapsed().as_secs_f64());
        if !verdict.pass {
            failed.push(name);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        if std::env::var_os("GNS_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
