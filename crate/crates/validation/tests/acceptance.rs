//! Runs every acceptance criterion and prints one pass/fail line for each.

use std::process::ExitCode;
use std::time::Instant;

use vefil::validation::{Validator, COUNT};

fn main() -> ExitCode {
    let start = Instant::now();
    println!("running {COUNT} acceptance criteria");
    let results = Validator::new().run_all(|r| println!("{r}"));
    let passed = results.iter().filter(|r| r.passed).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
