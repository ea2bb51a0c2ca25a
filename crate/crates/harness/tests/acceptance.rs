//! Runs every acceptance criterion and prints one line per criterion.

use std::io::Write;
use std::time::Instant;

use zvonkin_harness::acceptance::{run_all, Ctx, CRITERIA};

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let ctx = Ctx { seed: 0, out: scratch.path().to_path_buf(), started: Instant::now() };
    // straight to the handle so the lines survive libtest's output capture
    let mut err = std::io::stderr();
    let results = run_all(&ctx, |r| {
        writeln!(err, "{}", r.line()).unwrap();
    });
    assert_eq!(results.len(), CRITERIA.len());
    let failed: Vec<_> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    writeln!(err, "{}/{} criteria passed", results.len() - failed.len(), results.len()).unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
