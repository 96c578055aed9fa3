mod common;

use nbm_gbdt::search::{random_search, Evaluation, SearchSpace};
use nbm_gbdt::{GbdtParams, ValidationSet};

#[test]
fn finds_a_perfect_xor_config_within_twenty_trials() {
    let (x, y) = common::xor_fixture(50);
    let (vx, vy) = common::xor_fixture(5);
    let space = SearchSpace { n_rounds: (20, 60), ..Default::default() };
    let out = random_search(
        &x,
        &y,
        &space,
        &GbdtParams::default(),
        Evaluation::Holdout(ValidationSet { x: &vx, y: &vy }),
        20,
        99,
    )
    .unwrap();
    assert_eq!(out.best_auc, Some(1.0));
    assert_eq!(out.trials.len(), 20);
}

#[test]
fn search_is_deterministic() {
    let (x, y) = common::xor_fixture(20);
    let run = || {
        random_search(&x, &y, &SearchSpace::default(), &GbdtParams::default(), Evaluation::KFold { k: 3 }, 4, 5).unwrap()
    };
    assert_eq!(run(), run());
}
