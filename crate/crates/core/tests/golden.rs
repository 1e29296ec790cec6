//! Frozen generator output. Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`.

use std::path::PathBuf;

use macc_core::task::{generate_task, Config};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check_or_bless(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted from the stored fixture");
}

#[test]
fn task_seed_42_spec() {
    let task = generate_task(42, &[5, 5], 4, 0.0).unwrap();
    check_or_bless("task_seed42_5x5_m4.json", &format!("{}\n", task.to_canonical()));
}

#[test]
fn task_seed_42_argmax() {
    let task = generate_task(42, &[5, 5], 4, 0.0).unwrap();
    let mut best: Option<(Config, f64)> = None;
    for c in task.all_configs() {
        let s = task.true_score(&c).unwrap();
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((c, s));
        }
    }
    let (c, s) = best.unwrap();
    check_or_bless("task_seed42_5x5_m4_argmax.json", &format!("{{\"config\":{:?},\"true_score\":{s:?}}}\n", c.0));
}
