#![allow(dead_code)]

use tpg_core::game::{candidates, consistency_guess, expert_episode, Object};
use tpg_core::{GameWorld, Vocab};

/// Largest number of targets an optimal adaptive questioner can single out
/// with at most `depth` attribute questions, by exhaustive search over the
/// candidate bitmask. Equals `|objects| x` the best achievable success rate.
pub fn game_tree_value(objects: &[Object], vocab: &Vocab, depth: usize) -> u32 {
    let n = objects.len();
    let attr_masks: Vec<u32> = vocab
        .attributes()
        .into_iter()
        .map(|a| (0..n).filter(|&k| objects[k].has(a)).fold(0, |m, k| m | 1 << k))
        .collect();
    let mut memo = vec![None; (1 << n) * (depth + 1)];
    fn value(mask: u32, d: usize, attrs: &[u32], memo: &mut [Option<u32>], depth: usize) -> u32 {
        if mask.count_ones() <= 1 || d == 0 {
            return mask.count_ones().min(1);
        }
        let key = mask as usize * (depth + 1) + d;
        if let Some(v) = memo[key] {
            return v;
        }
        let mut best = 1;
        for &a in attrs {
            let yes = mask & a;
            if yes != 0 && yes != mask {
                best = best.max(value(yes, d - 1, attrs, memo, depth) + value(mask ^ yes, d - 1, attrs, memo, depth));
            }
        }
        memo[key] = Some(best);
        best
    }
    value((1u32 << n) - 1, depth, &attr_masks, &mut memo, depth)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct Sweep {
    pub worlds: u64,
    pub separable_targets: u64,
    pub separable_wins: u64,
    /// Worlds where the expert's win count differs from the oracle value.
    pub oracle_mismatches: u64,
}

fn object(t: usize) -> Object {
    Object { category: t / 9, column: (t % 9) / 3, row: t % 3 }
}

fn visit(types: &mut Vec<usize>, start: usize, max_len: usize, kinds: usize, f: &mut impl FnMut(&[usize])) {
    if !types.is_empty() {
        f(types);
    }
    if types.len() == max_len {
        return;
    }
    for t in start..kinds {
        types.push(t);
        visit(types, t, max_len, kinds, f);
        types.pop();
    }
}

/// Every multiset of up to `max_objects` objects over `categories`
/// categories, every target position: scripted expert plus consistency
/// guesser against the game-tree oracle.
pub fn expert_sweep(categories: usize, max_objects: usize, depth: usize) -> Sweep {
    let vocab = Vocab::new(categories);
    let mut s = Sweep::default();
    visit(&mut Vec::new(), 0, max_objects, categories * 9, &mut |types| {
        let objects: Vec<Object> = types.iter().map(|&t| object(t)).collect();
        let mut wins = 0;
        for target in 0..objects.len() {
            let world = GameWorld { objects: objects.clone(), target, seed: 0 };
            let ep = expert_episode(&vocab, world);
            let won = consistency_guess(&vocab, &ep.world, &ep.dialogue) == target;
            debug_assert!(candidates(&vocab, &ep.world, &ep.dialogue).contains(&target));
            wins += won as u32;
            if types.iter().filter(|&&t| t == types[target]).count() == 1 {
                s.separable_targets += 1;
                s.separable_wins += won as u64;
            }
        }
        if wins != game_tree_value(&objects, &vocab, depth) {
            s.oracle_mismatches += 1;
        }
        s.worlds += 1;
    });
    s
}
