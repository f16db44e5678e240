mod common;

use std::time::Duration;

#[test]
fn run_all_reproduces_golden_reports() {
    match common::e2e::run_and_compare() {
        Ok(elapsed) => assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}"),
        Err(e) => panic!("{e}"),
    }
}
