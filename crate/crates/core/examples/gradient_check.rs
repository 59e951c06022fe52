//! Finite-difference verification of every kernel and of the full combined
//! objective. Pass a component name to corrupt its analytic gradient by 1%
//! and watch the check catch it.
//!
//! `cargo run --example gradient_check [conv2d|relu|maxpool2|...]`

use confoundnet::gradcheck::{run_suite, Component, GradcheckConfig};

fn main() -> confoundnet::Result<()> {
    let mut cfg = GradcheckConfig::default();
    if let Some(name) = std::env::args().nth(1) {
        let component = Component::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .unwrap_or_else(|| panic!("unknown component {name:?}"));
        cfg.corrupt = Some(component);
    }
    let report = run_suite(&cfg)?;
    print!("{report}");
    println!("{}", if report.passed() { "all components pass" } else { "check failed" });
    Ok(())
}
