mod common;

use common::{expert_sweep, game_tree_value};
use tpg_core::game::{Object, MAX_QUESTIONS};
use tpg_core::Vocab;

#[test]
fn game_tree_counts_distinct_objects() {
    let vocab = Vocab::new(2);
    let o = |category, column, row| Object { category, column, row };
    assert_eq!(game_tree_value(&[o(0, 0, 0)], &vocab, 8), 1);
    assert_eq!(game_tree_value(&[o(0, 0, 0), o(0, 0, 0)], &vocab, 8), 1);
    assert_eq!(game_tree_value(&[o(0, 0, 0), o(1, 0, 0), o(0, 0, 0)], &vocab, 8), 2);
    let four = [o(0, 0, 0), o(1, 0, 0), o(0, 1, 0), o(1, 1, 0)];
    assert_eq!(game_tree_value(&four, &vocab, 8), 4);
    assert_eq!(game_tree_value(&four, &vocab, 1), 2);
    assert_eq!(game_tree_value(&four, &vocab, 0), 1);
}

#[test]
fn expert_is_optimal_on_small_worlds() {
    let s = expert_sweep(3, 4, MAX_QUESTIONS);
    assert!(s.worlds > 30_000);
    assert_eq!(s.separable_wins, s.separable_targets);
    assert_eq!(s.oracle_mismatches, 0);
}
