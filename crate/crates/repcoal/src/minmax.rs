//! Individual, coalitional, and efficient-coalitional minmax values, plus
//! best-response sets and the efficient-alternative frontier.
//!
//! All computations enumerate alternatives exhaustively and break argmin and
//! argmax ties toward the smallest alternative index, so every result is
//! deterministic. Values are cached per (game, coalition, kind).

use crate::game::{Coalition, PlayerId, StageGame};
use crate::rat::Q;
use std::collections::HashMap;
use std::sync::{LazyLock, RwLock};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinmaxResult {
    pub value: Q,
    /// Attains the outer min; smallest index on ties.
    pub minimizing_alternative: usize,
    /// Coalition's best response within the effectivity set at the
    /// minimizing alternative; smallest index on ties.
    pub maximizer_witness: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Plain = 0,
    Efficient = 1,
}

static CACHE: LazyLock<RwLock<HashMap<(String, u32, u8), MinmaxResult>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

fn game_key(g: &StageGame) -> String {
    serde_json::to_string(g).expect("stage game serializes")
}

fn cached(g: &StageGame, c: Coalition, kind: Kind, compute: impl FnOnce() -> MinmaxResult) -> MinmaxResult {
    let key = (game_key(g), c.0, kind as u8);
    if let Some(hit) = CACHE.read().expect("minmax cache poisoned").get(&key) {
        return hit.clone();
    }
    let value = compute();
    // Races recompute the same deterministic value, so or_insert is safe.
    CACHE
        .write()
        .expect("minmax cache poisoned")
        .entry(key)
        .or_insert_with(|| value.clone());
    value
}

/// Inner max: the coalition's best attainable sum within E_C(a).
fn coalition_best(g: &StageGame, c: Coalition, a: usize) -> (usize, Q) {
    let mut best: Option<(usize, Q)> = None;
    for alt in g.effectivity(c, a) {
        let s = g.coalition_payoff(c, alt);
        match &best {
            Some((_, cur)) if *cur >= s => {}
            _ => best = Some((alt, s)),
        }
    }
    best.expect("effectivity sets are reflexive, hence nonempty")
}

fn minmax_over<I: IntoIterator<Item = usize>>(g: &StageGame, c: Coalition, outer: I) -> MinmaxResult {
    let mut best: Option<MinmaxResult> = None;
    for a in outer {
        let (witness, value) = coalition_best(g, c, a);
        let better = match &best {
            None => true,
            Some(cur) => value < cur.value,
        };
        if better {
            best = Some(MinmaxResult { value, minimizing_alternative: a, maximizer_witness: witness });
        }
    }
    best.expect("games have at least one alternative")
}

fn check_coalition(g: &StageGame, c: Coalition) {
    assert!(!c.is_empty(), "minmax of the empty coalition is undefined");
    assert!(c.is_subset_of(g.grand()), "coalition exceeds the player set");
}

/// min over a of the best payoff player i can reach from a.
pub fn individual_minmax(g: &StageGame, i: PlayerId) -> MinmaxResult {
    coalitional_minmax(g, Coalition::singleton(i))
}

pub fn individual_minmaxes(g: &StageGame) -> Vec<Q> {
    (0..g.n()).map(|i| individual_minmax(g, i).value).collect()
}

/// min over a of the best total payoff coalition C can reach from a.
pub fn coalitional_minmax(g: &StageGame, c: Coalition) -> MinmaxResult {
    check_coalition(g, c);
    cached(g, c, Kind::Plain, || minmax_over(g, c, 0..g.num_alternatives()))
}

/// All maximizers of the total payoff, ascending.
pub fn efficient_alternatives(g: &StageGame) -> Vec<usize> {
    let totals: Vec<Q> = (0..g.num_alternatives()).map(|a| g.total_payoff(a)).collect();
    let best = totals.iter().max().expect("games have at least one alternative").clone();
    (0..g.num_alternatives()).filter(|&a| totals[a] == best).collect()
}

/// Coalitional minmax with the outer min restricted to efficient alternatives.
pub fn efficient_coalitional_minmax(g: &StageGame, c: Coalition) -> MinmaxResult {
    check_coalition(g, c);
    cached(g, c, Kind::Efficient, || minmax_over(g, c, efficient_alternatives(g)))
}

/// argmax over E_C(a) of the coalition's payoff sum; all ties, ascending.
pub fn best_response_set(g: &StageGame, c: Coalition, a: usize) -> Vec<usize> {
    check_coalition(g, c);
    let (_, best) = coalition_best(g, c, a);
    g.effectivity(c, a)
        .into_iter()
        .filter(|&alt| g.coalition_payoff(c, alt) == best)
        .collect()
}

/// Largest total payoff over alternatives.
pub fn max_total(g: &StageGame) -> Q {
    (0..g.num_alternatives()).map(|a| g.total_payoff(a)).max().expect("nonempty")
}

/// Smallest total payoff over alternatives.
pub fn min_total(g: &StageGame) -> Q {
    (0..g.num_alternatives()).map(|a| g.total_payoff(a)).min().expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::{g_div3, g_pd, g_room, ROOM_AB, ROOM_AC, ROOM_BC};
    use crate::game::TransferMode;
    use crate::rat::qi;

    #[test]
    fn room_individual_minmaxes_are_one() {
        let g = g_room();
        for i in 0..3 {
            let r = individual_minmax(&g, i);
            assert_eq!(r.value, qi(1), "player {i}");
        }
        // Each player is pinned by the match that excludes them.
        assert_eq!(individual_minmax(&g, 0).minimizing_alternative, ROOM_BC);
        assert_eq!(individual_minmax(&g, 1).minimizing_alternative, ROOM_AC);
        assert_eq!(individual_minmax(&g, 2).minimizing_alternative, ROOM_AB);
    }

    #[test]
    fn pd_individual_minmaxes_are_one() {
        let g = g_pd(TransferMode::Ntu);
        for i in 0..2 {
            assert_eq!(individual_minmax(&g, i).value, qi(1), "player {i}");
        }
        // Opponent defects; own best reply is defect with payoff 1.
        assert_eq!(individual_minmax(&g, 0).minimizing_alternative, 1); // (C, D)
        assert_eq!(individual_minmax(&g, 1).minimizing_alternative, 2); // (D, C)
    }

    #[test]
    fn div3_minmaxes_follow_winning_structure() {
        let g = g_div3(TransferMode::TuPublic);
        for i in 0..3 {
            assert_eq!(individual_minmax(&g, i).value, qi(0), "player {i}");
        }
        // {0,1} is winning: grabs the whole dollar from anywhere.
        assert_eq!(coalitional_minmax(&g, Coalition::from_members(&[0, 1])).value, qi(1));
        // {1,2} is losing: stuck at the current division.
        assert_eq!(coalitional_minmax(&g, Coalition::from_members(&[1, 2])).value, qi(0));
    }

    #[test]
    fn singleton_coalition_matches_individual() {
        let g = g_room();
        for i in 0..3 {
            assert_eq!(individual_minmax(&g, i), coalitional_minmax(&g, Coalition::singleton(i)));
        }
    }

    #[test]
    fn efficient_alternatives_are_total_maximizers() {
        let pd = g_pd(TransferMode::Ntu);
        assert_eq!(efficient_alternatives(&pd), vec![0]); // mutual cooperation

        let div = g_div3(TransferMode::TuPublic);
        assert_eq!(efficient_alternatives(&div).len(), div.num_alternatives()); // constant-sum

        let room = g_room();
        assert_eq!(efficient_alternatives(&room), vec![ROOM_AB, ROOM_AC, ROOM_BC]);
    }

    #[test]
    fn efficient_minmax_dominates_plain() {
        let pd = g_pd(TransferMode::Ntu);
        let c = Coalition::singleton(0);
        let plain = coalitional_minmax(&pd, c);
        let eff = efficient_coalitional_minmax(&pd, c);
        assert_eq!(plain.value, qi(1));
        assert_eq!(eff.value, qi(3)); // only (C,C) is efficient; best reply is defection
        assert!(eff.value >= plain.value);

        let room = g_room();
        for c in crate::game::all_coalitions(room.n()) {
            assert!(
                efficient_coalitional_minmax(&room, c).value >= coalitional_minmax(&room, c).value
            );
        }
    }

    #[test]
    fn efficient_minmax_of_omnipotent_grand_is_max_total() {
        let room = g_room();
        let grand = room.grand();
        assert_eq!(efficient_coalitional_minmax(&room, grand).value, qi(6));
        assert_eq!(max_total(&room), qi(6));
        assert_eq!(min_total(&room), qi(3));
    }

    #[test]
    fn best_responses_match_hand_computation() {
        let room = g_room();
        // Bob matched with Alice: staying (payoff 2) beats dissolving (1).
        assert_eq!(best_response_set(&room, Coalition::singleton(1), ROOM_AB), vec![ROOM_AB]);
        // Grand omnipotent coalition: exactly the efficient alternatives.
        assert_eq!(best_response_set(&room, room.grand(), ROOM_AB), vec![ROOM_AB, ROOM_AC, ROOM_BC]);

        let div = g_div3(TransferMode::TuPublic);
        let losing = Coalition::from_members(&[1, 2]);
        for a in 0..div.num_alternatives() {
            assert_eq!(best_response_set(&div, losing, a), vec![a]);
        }
    }

    #[test]
    fn cache_returns_identical_results() {
        let g = g_room();
        let first = coalitional_minmax(&g, Coalition::from_members(&[0, 1]));
        let second = coalitional_minmax(&g, Coalition::from_members(&[0, 1]));
        assert_eq!(first, second);
    }
}
