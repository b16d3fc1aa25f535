//! Membership and emptiness tests for the payoff sets the analysis runs on:
//! stage cores, feasible and individually rational sets, beta-cores, and
//! coalition-rational sets, plus the strict balancedness test that decides
//! emptiness of strict cores exactly.

use crate::game::{all_coalitions, Coalition, StageGame, TransferMode};
use crate::lp::{LpBuilder, LpOutcome, Rel};
use crate::minmax::{
    coalitional_minmax, efficient_coalitional_minmax, individual_minmax, individual_minmaxes,
    max_total, min_total,
};
use crate::rat::{sum, Q};
use crate::{Error, Result};
use num::Zero;
use std::collections::BTreeMap;

/// Coalition worths φ(C) for every nonempty coalition, including the grand
/// coalition.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicFunction {
    n: usize,
    values: BTreeMap<Coalition, Q>,
}

impl CharacteristicFunction {
    pub fn new(n: usize, values: BTreeMap<Coalition, Q>) -> Result<Self> {
        for c in all_coalitions(n) {
            if !values.contains_key(&c) {
                return Err(Error::InvalidInput(format!(
                    "characteristic function is missing a coalition worth ({} coalitions expected)",
                    (1u64 << n) - 1
                )));
            }
        }
        if values.len() != (1usize << n) - 1 {
            return Err(Error::InvalidInput("characteristic function has stray coalitions".into()));
        }
        Ok(CharacteristicFunction { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phi(&self, c: Coalition) -> &Q {
        &self.values[&c]
    }

    pub fn grand_value(&self) -> &Q {
        self.phi(Coalition::all(self.n))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coalition, &Q)> {
        self.values.iter().map(|(c, v)| (*c, v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CharacteristicMode {
    /// φ(C) = coalitional minmax.
    Beta,
    /// φ(C) = efficient coalitional minmax.
    EfficientBeta,
    /// φ(C) = coalitional minmax for C in the list, sum of individual
    /// minmaxes otherwise.
    SMixed(Vec<Coalition>),
}

pub fn characteristic_from_game(g: &StageGame, mode: &CharacteristicMode) -> CharacteristicFunction {
    let n = g.n();
    let grand = g.grand();
    let mut values = BTreeMap::new();
    for c in all_coalitions(n) {
        let phi = if c == grand {
            max_total(g)
        } else {
            match mode {
                CharacteristicMode::Beta => coalitional_minmax(g, c).value,
                CharacteristicMode::EfficientBeta => efficient_coalitional_minmax(g, c).value,
                CharacteristicMode::SMixed(s) => {
                    if s.contains(&c) {
                        coalitional_minmax(g, c).value
                    } else {
                        c.members().map(|i| individual_minmax(g, i).value).fold(Q::zero(), |a, b| a + b)
                    }
                }
            }
        };
        values.insert(c, phi);
    }
    CharacteristicFunction { n, values }
}

/// Alternatives no coalition can profitably block: a is kept iff there is no
/// nonempty C and a' in E_C(a) making every member strictly better off.
pub fn stage_core(g: &StageGame) -> Vec<usize> {
    (0..g.num_alternatives())
        .filter(|&a| {
            all_coalitions(g.n()).all(|c| {
                g.effectivity(c, a)
                    .into_iter()
                    .all(|alt| c.members().any(|i| g.payoff(i, alt) <= g.payoff(i, a)))
            })
        })
        .collect()
}

/// v lies in the convex hull of the stage payoff vectors; with `strict_ir`,
/// additionally v_i > minmax_i for every player.
pub fn feasible_membership_ntu(g: &StageGame, v: &[Q], strict_ir: bool) -> bool {
    assert_eq!(v.len(), g.n(), "payoff vector length mismatch");
    if strict_ir {
        let floors = individual_minmaxes(g);
        if !v.iter().zip(&floors).all(|(vi, fi)| vi > fi) {
            return false;
        }
    }
    in_payoff_hull(g, v)
}

fn in_payoff_hull(g: &StageGame, v: &[Q]) -> bool {
    let mut lp = LpBuilder::new();
    let w = lp.add_vars(g.num_alternatives()).collect::<Vec<_>>();
    lp.constraint(w.iter().map(|&x| (x, Q::from_integer(1.into()))).collect(), Rel::Eq, Q::from_integer(1.into()));
    for i in 0..g.n() {
        lp.constraint(
            w.iter().enumerate().map(|(a, &x)| (x, g.payoff(i, a).clone())).collect(),
            Rel::Eq,
            v[i].clone(),
        );
    }
    !matches!(lp.solve(), LpOutcome::Infeasible)
}

/// With transfers, feasibility collapses to a total-sum band; `strict_ir`
/// additionally demands u_i > minmax_i for every player.
pub fn tu_feasible_ir_membership(g: &StageGame, u: &[Q], strict_ir: bool) -> bool {
    assert_eq!(u.len(), g.n(), "payoff vector length mismatch");
    assert!(g.transfer_mode.has_transfers(), "feasibility band needs a transfer mode");
    let total = sum(u);
    if total < min_total(g) || total > max_total(g) {
        return false;
    }
    if strict_ir {
        let floors = individual_minmaxes(g);
        if !u.iter().zip(&floors).all(|(ui, fi)| ui > fi) {
            return false;
        }
    }
    true
}

/// Efficiency plus coalition rationality: Σu equals the best total and every
/// proper coalition receives at least its (efficient) minmax, strictly when
/// `strict`.
pub fn beta_core_membership(g: &StageGame, u: &[Q], efficient: bool, strict: bool) -> bool {
    assert_eq!(u.len(), g.n(), "payoff vector length mismatch");
    if sum(u) != max_total(g) {
        return false;
    }
    let grand = g.grand();
    for c in all_coalitions(g.n()) {
        if c == grand {
            continue;
        }
        let bound = if efficient {
            efficient_coalitional_minmax(g, c).value
        } else {
            coalitional_minmax(g, c).value
        };
        let share = c.members().map(|i| u[i].clone()).fold(Q::zero(), |a, b| a + b);
        let ok = if strict { share > bound } else { share >= bound };
        if !ok {
            return false;
        }
    }
    true
}

/// Constraint-by-constraint report for coalition-rational payoffs. The set's
/// definition quantifies over the protected coalitions plus the grand
/// coalition; strict individual rationality is reported separately because
/// the supportability theorem needs it on top.
#[derive(Clone, Debug, PartialEq)]
pub struct SRationalMembership {
    /// One entry per requested coalition, in input order.
    pub coalition_ok: Vec<bool>,
    /// Grand-coalition constraint Σu vs its minmax.
    pub grand_ok: bool,
    /// u_i > minmax_i, always strict, regardless of `strict`.
    pub strict_individual_ir: Vec<bool>,
}

impl SRationalMembership {
    /// The quantifier as defined: all protected coalitions plus the grand one.
    pub fn member(&self) -> bool {
        self.grand_ok && self.coalition_ok.iter().all(|&b| b)
    }

    /// The variant the construction needs: protected coalitions plus strict
    /// individual rationality, with no grand-coalition clause.
    pub fn construction_member(&self) -> bool {
        self.coalition_ok.iter().all(|&b| b) && self.strict_individual_ir.iter().all(|&b| b)
    }
}

pub fn s_rational_membership(g: &StageGame, s: &[Coalition], u: &[Q], strict: bool) -> SRationalMembership {
    assert_eq!(u.len(), g.n(), "payoff vector length mismatch");
    let cmp = |share: &Q, bound: &Q| if strict { share > bound } else { share >= bound };
    let coalition_ok = s
        .iter()
        .map(|&c| {
            let share = c.members().map(|i| u[i].clone()).fold(Q::zero(), |a, b| a + b);
            cmp(&share, &coalitional_minmax(g, c).value)
        })
        .collect();
    let grand_ok = cmp(&sum(u), &coalitional_minmax(g, g.grand()).value);
    let floors = individual_minmaxes(g);
    let strict_individual_ir = u.iter().zip(&floors).map(|(ui, fi)| ui > fi).collect();
    SRationalMembership { coalition_ok, grand_ok, strict_individual_ir }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BalancednessOutcome {
    NonEmpty,
    /// Balanced weights certifying emptiness: Σ λ_C φ(C) ≥ φ(N).
    Empty { weights: Vec<(Coalition, Q)>, value: Q },
}

/// Emptiness test for the strict core of (N, φ): the strict core is nonempty
/// iff every balanced family of proper coalitions is worth strictly less
/// than the grand coalition, decided by one exact LP.
pub fn strict_balanced_emptiness(phi: &CharacteristicFunction) -> Result<BalancednessOutcome> {
    let n = phi.n();
    let grand = Coalition::all(n);
    let proper: Vec<Coalition> = all_coalitions(n).filter(|&c| c != grand).collect();
    if proper.is_empty() {
        // Single player: the strict core is the point φ(N) itself.
        return Ok(BalancednessOutcome::NonEmpty);
    }
    let one = Q::from_integer(1.into());
    let mut lp = LpBuilder::new();
    let lambda = lp.add_vars(proper.len()).collect::<Vec<_>>();
    for (idx, _) in proper.iter().enumerate() {
        lp.constraint(vec![(lambda[idx], one.clone())], Rel::Le, one.clone());
    }
    for i in 0..n {
        let row: Vec<(usize, Q)> = proper
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(i))
            .map(|(idx, _)| (lambda[idx], one.clone()))
            .collect();
        lp.constraint(row, Rel::Eq, one.clone());
    }
    lp.set_objective(
        proper.iter().enumerate().map(|(idx, c)| (lambda[idx], phi.phi(*c).clone())).collect(),
    );
    match lp.solve() {
        LpOutcome::Optimal { value, point } => {
            if value < *phi.grand_value() {
                Ok(BalancednessOutcome::NonEmpty)
            } else {
                let weights = proper
                    .iter()
                    .zip(&point)
                    .filter(|(_, w)| !w.is_zero())
                    .map(|(c, w)| (*c, w.clone()))
                    .collect();
                Ok(BalancednessOutcome::Empty { weights, value })
            }
        }
        LpOutcome::Infeasible => Err(Error::InvalidInput(
            "balancedness system infeasible; characteristic function is malformed".into(),
        )),
        LpOutcome::Unbounded => unreachable!("balancedness weights are box-constrained"),
    }
}

/// Parameterized membership query, the payoff-set vocabulary of the CLI.
#[derive(Clone, Debug, PartialEq)]
pub enum PayoffSetDescriptor {
    FeasibleV,
    FeasibleIrNtu,
    FeasibleIrTu,
    CoreStage,
    BetaCore { strict: bool },
    EfficientBetaCore { strict: bool },
    SRational { s: Vec<Coalition>, strict: bool },
    UDelta { delta: Q },
}

/// Membership of `u` in the described set. CoreStage asks whether `u` equals
/// the payoff vector of a core alternative.
pub fn descriptor_membership(g: &StageGame, desc: &PayoffSetDescriptor, u: &[Q]) -> Result<bool> {
    Ok(match desc {
        PayoffSetDescriptor::FeasibleV => feasible_membership_ntu(g, u, false),
        PayoffSetDescriptor::FeasibleIrNtu => feasible_membership_ntu(g, u, true),
        PayoffSetDescriptor::FeasibleIrTu => tu_feasible_ir_membership(g, u, true),
        PayoffSetDescriptor::CoreStage => {
            stage_core(g).into_iter().any(|a| g.payoffs(a) == u)
        }
        PayoffSetDescriptor::BetaCore { strict } => beta_core_membership(g, u, false, *strict),
        PayoffSetDescriptor::EfficientBetaCore { strict } => {
            beta_core_membership(g, u, true, *strict)
        }
        PayoffSetDescriptor::SRational { s, strict } => {
            if g.transfer_mode != TransferMode::TuPartial {
                return Err(Error::Unsupported(
                    "coalition-rational sets are defined for partially secret transfers".into(),
                ));
            }
            s_rational_membership(g, s, u, *strict).member()
        }
        PayoffSetDescriptor::UDelta { delta } => crate::simple::u_delta_membership(g, delta, u)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::{g_div3, g_pd, g_room};
    use crate::game::{Alternative, EffectivityRule, StageGame};
    use crate::rat::{q, qi};

    fn tiny_single() -> StageGame {
        StageGame {
            players: vec!["p1".into(), "p2".into()],
            alternatives: vec![Alternative { label: "only".into(), payoffs: vec![qi(3), qi(5)] }],
            effectivity: EffectivityRule::ExplicitTable { table: Default::default() },
            grand_omnipotent: false,
            transfer_mode: TransferMode::Ntu,
            secret_coalitions: vec![],
        }
    }

    #[test]
    fn room_stage_core_is_empty() {
        assert!(stage_core(&g_room()).is_empty());
    }

    #[test]
    fn div3_stage_core_reflects_grid_coarseness() {
        // On the quarter grid a winning pair blocks only when both members
        // can gain a full step, so {0,1} blocks iff u_3 >= 1/2 and {0,2}
        // iff u_2 >= 1/2. The grid core is u_2 <= 1/4 and u_3 <= 1/4,
        // strictly larger than the continuum core {(1,0,0)}.
        let g = g_div3(TransferMode::Ntu);
        let core = stage_core(&g);
        let expected: Vec<usize> = (0..g.num_alternatives())
            .filter(|&a| {
                *g.payoff(1, a) <= q(1, 4) && *g.payoff(2, a) <= q(1, 4)
            })
            .collect();
        assert_eq!(core, expected);
        assert_eq!(core.len(), 4);
        let take_all = (0..g.num_alternatives())
            .find(|&a| *g.payoff(0, a) == qi(1))
            .unwrap();
        assert!(core.contains(&take_all));
    }

    #[test]
    fn single_alternative_is_core() {
        let g = tiny_single();
        assert_eq!(stage_core(&g), vec![0]);
    }

    #[test]
    fn ntu_feasibility_hull_and_ir() {
        let g = g_room();
        for a in 0..g.num_alternatives() {
            assert!(feasible_membership_ntu(&g, &g.payoffs(a).to_vec(), false));
        }
        // Equal average of the three matchings, strictly above minmax 1.
        assert!(feasible_membership_ntu(&g, &[qi(2), qi(2), qi(2)], true));
        // Outside the bounding box of payoffs.
        assert!(!feasible_membership_ntu(&g, &[qi(4), qi(0), qi(0)], false));
    }

    #[test]
    fn tu_feasibility_is_a_total_band() {
        let g = g_div3(TransferMode::TuPublic);
        let u = [q(-1, 5), q(3, 5), q(3, 5)];
        assert!(tu_feasible_ir_membership(&g, &u, false));
        assert!(!tu_feasible_ir_membership(&g, &u, true)); // u_1 < 0 = minmax
        assert!(!tu_feasible_ir_membership(&g, &[qi(1), qi(1), qi(0)], false)); // Σ=2 > 1
    }

    #[test]
    fn beta_core_of_div3() {
        let g = g_div3(TransferMode::TuPublic);
        assert!(beta_core_membership(&g, &[qi(1), qi(0), qi(0)], true, false));
        assert!(!beta_core_membership(&g, &[qi(0), q(1, 2), q(1, 2)], true, false));
        // Strictness at any bound rejects: (1,0,0) has Σ_{2} u = 0 = bound.
        assert!(!beta_core_membership(&g, &[qi(1), qi(0), qi(0)], true, true));
    }

    #[test]
    fn s_rational_flags() {
        let g = g_div3(TransferMode::TuPartial);
        // Empty S: only the grand constraint remains.
        let m = s_rational_membership(&g, &[], &[qi(1), qi(0), qi(0)], false);
        assert!(m.coalition_ok.is_empty());
        assert!(m.member());
        // {1,2} (1-indexed) short of its worth 1.
        let s = vec![Coalition::from_members([0usize, 1])];
        let m = s_rational_membership(&g, &s, &[q(3, 5), q(3, 10), q(1, 10)], false);
        assert_eq!(m.coalition_ok, vec![false]); // 9/10 < 1
        assert!(!m.member());
        // A strict-beta-core style point passes all coalition constraints.
        let m = s_rational_membership(
            &g,
            &crate::game::proper_coalitions(3).collect::<Vec<_>>(),
            &[q(1, 2), q(1, 4), q(1, 4)],
            false,
        );
        assert!(m.coalition_ok.iter().zip(crate::game::proper_coalitions(3)).all(|(&ok, c)| {
            // Winning pairs {0,1},{0,2} sum to 3/4 < 1: those two fail, rest pass.
            let winning = c.contains(0) && c.len() == 2;
            ok != winning
        }));
    }

    #[test]
    fn s_rational_separates_ir_flags() {
        let g = g_div3(TransferMode::TuPartial);
        let m = s_rational_membership(&g, &[], &[qi(1), qi(0), qi(0)], true);
        // Strict grand constraint fails at the efficient frontier (Σu = minmax of N).
        assert!(!m.grand_ok);
        assert_eq!(m.strict_individual_ir, vec![true, false, false]);
        assert!(!m.construction_member());
    }

    #[test]
    fn characteristic_functions() {
        let g = g_div3(TransferMode::TuPublic);
        let phi = characteristic_from_game(&g, &CharacteristicMode::Beta);
        assert_eq!(phi.phi(Coalition::from_members([0usize, 1])), &qi(1));
        assert_eq!(phi.phi(Coalition::from_members([0usize, 2])), &qi(1));
        assert_eq!(phi.phi(Coalition::from_members([1usize, 2])), &qi(0));
        for i in 0..3 {
            assert_eq!(phi.phi(Coalition::singleton(i)), &qi(0));
        }
        assert_eq!(phi.grand_value(), &qi(1));

        // Constant game: additive worths.
        let g2 = tiny_single();
        let phi2 = characteristic_from_game(&g2, &CharacteristicMode::Beta);
        assert_eq!(phi2.phi(Coalition::singleton(0)), &qi(3));
        assert_eq!(phi2.phi(Coalition::singleton(1)), &qi(5));
        assert_eq!(phi2.grand_value(), &qi(8));

        // S empty: additive individual minmaxes everywhere.
        let phi3 = characteristic_from_game(&g, &CharacteristicMode::SMixed(vec![]));
        assert_eq!(phi3.phi(Coalition::from_members([0usize, 1])), &qi(0));
        assert_eq!(phi3.grand_value(), &qi(1));
    }

    #[test]
    fn majority_game_has_empty_strict_core() {
        // φ(C)=1 for |C|>=2, 0 for singletons, φ(N)=1.
        let mut values = BTreeMap::new();
        for c in all_coalitions(3) {
            values.insert(c, if c.len() >= 2 { qi(1) } else { qi(0) });
        }
        let phi = CharacteristicFunction::new(3, values).unwrap();
        match strict_balanced_emptiness(&phi).unwrap() {
            BalancednessOutcome::Empty { weights, value } => {
                assert_eq!(value, q(3, 2));
                // Witness is balanced: each player covered with weight one.
                for i in 0..3 {
                    let cover: Q = weights
                        .iter()
                        .filter(|(c, _)| c.contains(i))
                        .map(|(_, w)| w.clone())
                        .fold(Q::zero(), |a, b| a + b);
                    assert_eq!(cover, qi(1));
                }
            }
            other => panic!("expected emptiness, got {other:?}"),
        }
    }

    #[test]
    fn div3_strict_beta_core_is_empty_but_weak_is_not() {
        let g = g_div3(TransferMode::TuPublic);
        let phi = characteristic_from_game(&g, &CharacteristicMode::Beta);
        match strict_balanced_emptiness(&phi).unwrap() {
            BalancednessOutcome::Empty { value, .. } => assert_eq!(value, qi(1)),
            other => panic!("expected emptiness, got {other:?}"),
        }
        // Weak beta-core still contains the take-all point.
        assert!(beta_core_membership(&g, &[qi(1), qi(0), qi(0)], false, false));
    }

    #[test]
    fn slack_in_grand_worth_restores_nonemptiness() {
        let mut values = BTreeMap::new();
        for c in all_coalitions(3) {
            values.insert(c, if c.len() == 3 { qi(10) } else { qi(0) });
        }
        let phi = CharacteristicFunction::new(3, values).unwrap();
        assert_eq!(strict_balanced_emptiness(&phi).unwrap(), BalancednessOutcome::NonEmpty);
    }

    #[test]
    fn descriptor_dispatch() {
        let g = g_div3(TransferMode::TuPublic);
        assert!(descriptor_membership(
            &g,
            &PayoffSetDescriptor::BetaCore { strict: false },
            &[qi(1), qi(0), qi(0)]
        )
        .unwrap());
        assert!(descriptor_membership(&g, &PayoffSetDescriptor::CoreStage, &[qi(1), qi(0), qi(0)])
            .unwrap());
        // Mutual cooperation is blocked by a unilateral defection.
        let pd = g_pd(TransferMode::Ntu);
        assert!(!descriptor_membership(&pd, &PayoffSetDescriptor::CoreStage, &[qi(2), qi(2)])
            .unwrap());
    }
}
