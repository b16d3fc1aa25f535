//! Simple games: the bargaining environment where each alternative divides
//! one unit of surplus and a coalition can replace the division exactly when
//! it is winning. Everything here is closed-form inequality evaluation on
//! the unit simplex; the simplex is never discretized.

use std::collections::BTreeSet;

use crate::conventions::{
    core_reversion_convention, ConventionAutomaton, ExplicitAutomaton, ExplicitState,
    OutcomePattern, ReversionGuard, TransitionRule,
};
use crate::error::{Error, Result};
use crate::game::{
    Alternative, Coalition, EffectivityRule, Outcome, PlayerId, StageGame, TransferMode,
};
use crate::rat::{fmt_vec, sum, Q};
use num::{One, Zero};

/// A monotone proper simple game: the winning family, closed upward, with
/// no two minimal winning coalitions disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleGame {
    n: usize,
    minimal: Vec<Coalition>,
    winning: BTreeSet<Coalition>,
}

impl SimpleGame {
    /// Builds from a list of winning coalitions: drops redundant supersets,
    /// closes upward, and validates properness.
    pub fn new(n: usize, winning_list: Vec<Coalition>) -> Result<Self> {
        if n == 0 || n > 20 {
            return Err(Error::InvalidInput("player count out of range".into()));
        }
        if winning_list.is_empty() {
            return Err(Error::InvalidInput(
                "a simple game needs at least one winning coalition".into(),
            ));
        }
        let grand = Coalition::all(n);
        for c in &winning_list {
            if c.is_empty() || !c.is_subset_of(grand) {
                return Err(Error::InvalidInput(
                    "winning coalitions must be nonempty subsets of the player set".into(),
                ));
            }
        }
        // Antichain of minimal elements.
        let mut minimal: Vec<Coalition> = Vec::new();
        for &c in &winning_list {
            if winning_list.iter().any(|&m| m != c && m.is_subset_of(c)) {
                continue;
            }
            if !minimal.contains(&c) {
                minimal.push(c);
            }
        }
        minimal.sort();
        // Properness: two disjoint minimal winning coalitions would make a
        // coalition and its complement both winning.
        for (k, &a) in minimal.iter().enumerate() {
            for &b in &minimal[k + 1..] {
                if a.intersect(b).is_empty() {
                    return Err(Error::InvalidGame(format!(
                        "improper simple game: winning coalitions {} and {} are disjoint",
                        a.0, b.0
                    )));
                }
            }
        }
        let mut winning = BTreeSet::new();
        for c in crate::game::all_coalitions(n) {
            if minimal.iter().any(|m| m.is_subset_of(c)) {
                winning.insert(c);
            }
        }
        Ok(SimpleGame { n, minimal, winning })
    }

    /// Extracts the simple game a stage game's effectivity rule encodes.
    pub fn from_stage_game(g: &StageGame) -> Result<Self> {
        match &g.effectivity {
            EffectivityRule::SimpleGameRule { minimal_winning } => {
                SimpleGame::new(g.n(), minimal_winning.clone())
            }
            _ => Err(Error::Unsupported(
                "stage game does not use a simple-game effectivity rule".into(),
            )),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn minimal_winning(&self) -> &[Coalition] {
        &self.minimal
    }

    pub fn is_winning(&self, c: Coalition) -> bool {
        self.winning.contains(&c)
    }

    pub fn winning(&self) -> impl Iterator<Item = Coalition> + '_ {
        self.winning.iter().copied()
    }

    /// Intersection of all winning coalitions (equivalently of the minimal
    /// ones); empty when no player sits in every winning coalition.
    pub fn veto_players(&self) -> Coalition {
        self.minimal
            .iter()
            .copied()
            .fold(Coalition::all(self.n), |acc, c| acc.intersect(c))
    }

    fn check_simplex(&self, u: &[Q]) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::InvalidInput("payoff vector length mismatch".into()));
        }
        if u.iter().any(|x| x < &Q::zero()) || sum(u) != Q::one() {
            return Err(Error::InvalidInput(format!(
                "payoff ({}) is not on the unit simplex",
                fmt_vec(u)
            )));
        }
        Ok(())
    }

    /// Membership in U(delta): every winning coalition keeps at least
    /// 1 - delta. Monotonicity lets the minimal coalitions decide.
    pub fn u_delta(&self, u: &[Q], delta: &Q) -> Result<bool> {
        self.check_simplex(u)?;
        if delta < &Q::zero() || delta >= &Q::one() {
            return Err(Error::InvalidInput("delta must lie in [0,1)".into()));
        }
        let floor = Q::one() - delta;
        Ok(self
            .minimal
            .iter()
            .all(|c| c.members().map(|i| u[i].clone()).sum::<Q>() >= floor))
    }

    /// Membership in the stage core K: the veto players take everything.
    pub fn core(&self, u: &[Q]) -> Result<bool> {
        self.check_simplex(u)?;
        let d = self.veto_players();
        if d.is_empty() {
            return Err(Error::NonCollegial);
        }
        Ok(d.members().map(|i| u[i].clone()).sum::<Q>() == Q::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimpleClassification {
    pub dictatorial: bool,
    pub collegial: bool,
    pub veto_count: usize,
}

pub fn classify(sg: &SimpleGame) -> SimpleClassification {
    let d = sg.veto_players();
    SimpleClassification {
        dictatorial: sg.minimal_winning().iter().any(|c| c.len() == 1),
        collegial: !d.is_empty(),
        veto_count: d.len(),
    }
}

/// U(delta) membership for a stage game carrying a simple-game rule.
pub fn u_delta_membership(g: &StageGame, delta: &Q, u: &[Q]) -> Result<bool> {
    SimpleGame::from_stage_game(g)?.u_delta(u, delta)
}

/// Core membership for a stage game carrying a simple-game rule.
pub fn core_membership(g: &StageGame, u: &[Q]) -> Result<bool> {
    SimpleGame::from_stage_game(g)?.core(u)
}

/// Whether a division is sustainable by a stationary convention at `delta`
/// under public monitoring (with or without transfers): exactly U(delta)
/// membership wherever the characterization is established. With a single
/// veto player that requires delta > (n-2)/(n-1); below the bound the
/// answer is refused rather than guessed.
pub fn stationary_sustainable(
    sg: &SimpleGame,
    u: &[Q],
    delta: &Q,
    mode: TransferMode,
) -> Result<bool> {
    match mode {
        TransferMode::Ntu | TransferMode::TuPublic => {}
        _ => {
            return Err(Error::Unsupported(
                "stationary sustainability is characterized for public regimes only".into(),
            ))
        }
    }
    let d = sg.veto_players();
    if d.is_empty() {
        return Err(Error::NonCollegial);
    }
    if d.len() == 1 {
        let n = sg.n();
        let threshold = crate::rat::q((n as i64) - 2, (n as i64) - 1);
        if *delta <= threshold {
            return Err(Error::DeltaTooSmall(format!(
                "below single-veto threshold: need delta > {}/{}",
                n - 2,
                n - 1
            )));
        }
    }
    sg.u_delta(u, delta)
}

/// Divisions supportable under secret transfers, independent of delta:
/// exactly the stage core.
pub fn secret_transfer_supportable(sg: &SimpleGame, u: &[Q]) -> Result<bool> {
    sg.core(u)
}

/// Realizes a simple game as a stage game over finitely many divisions:
/// always the n vertex divisions, plus any extra simplex points. Winning
/// coalitions can move to any listed division, losing ones are stuck.
pub fn embed_simple_game(
    sg: &SimpleGame,
    extra: &[Vec<Q>],
    mode: TransferMode,
) -> Result<StageGame> {
    let n = sg.n();
    let mut alternatives: Vec<Alternative> = (0..n)
        .map(|i| {
            let mut p = vec![Q::zero(); n];
            p[i] = Q::one();
            Alternative { label: format!("e{}", i + 1), payoffs: p }
        })
        .collect();
    for p in extra {
        if p.len() != n || p.iter().any(|x| x < &Q::zero()) || sum(p) != Q::one() {
            return Err(Error::InvalidInput(format!(
                "extra point ({}) is not on the unit simplex",
                fmt_vec(p)
            )));
        }
        if alternatives.iter().any(|a| &a.payoffs == p) {
            continue;
        }
        alternatives.push(Alternative { label: format!("({})", fmt_vec(p)), payoffs: p.clone() });
    }
    let g = StageGame {
        players: (0..n).map(|i| format!("P{}", i + 1)).collect(),
        alternatives,
        effectivity: EffectivityRule::SimpleGameRule {
            minimal_winning: sg.minimal_winning().to_vec(),
        },
        grand_omnipotent: true,
        transfer_mode: mode,
        secret_coalitions: vec![],
    };
    g.validate()?;
    Ok(g)
}

/// Convention holding player `i` to payoff zero, together with the stage
/// game it runs on.
///
/// With a second veto player available the convention is constant at that
/// player's vertex (a core division excluding i, so no blocking coalition
/// can form against it at any delta). When i is the unique veto player the
/// convention plays the equal split among the others and reverts to i's
/// vertex on any block that does not already hurt i.
pub fn punishment_convention(
    sg: &SimpleGame,
    i: PlayerId,
    mode: TransferMode,
) -> Result<(StageGame, ConventionAutomaton)> {
    let n = sg.n();
    if i >= n {
        return Err(Error::InvalidInput("punished player out of range".into()));
    }
    match mode {
        TransferMode::Ntu | TransferMode::TuPublic => {}
        _ => {
            return Err(Error::Unsupported(
                "punishment conventions are built for public regimes only".into(),
            ))
        }
    }
    let d = sg.veto_players();
    if d.is_empty() {
        return Err(Error::NonCollegial);
    }
    let spare = d.members().find(|&j| j != i);
    if let Some(j) = spare {
        let g = embed_simple_game(sg, &[], mode)?;
        let aut = ExplicitAutomaton {
            states: vec![ExplicitState {
                label: format!("e{}", j + 1),
                output: Outcome::unblocked(j),
                rules: vec![TransitionRule { pattern: OutcomePattern::Any, next: 0 }],
            }],
            initial: 0,
        };
        aut.validate(&g)?;
        Ok((g, ConventionAutomaton::Explicit(aut)))
    } else {
        // i is the unique veto player; punish with the equal split among
        // the rest, reverting to i's vertex on blocks that U_i-benefit.
        if n < 2 {
            return Err(Error::Unsupported(
                "cannot punish the dictator of a one-player game".into(),
            ));
        }
        let share = crate::rat::q(1, (n - 1) as i64);
        let split: Vec<Q> = (0..n)
            .map(|j| if j == i { Q::zero() } else { share.clone() })
            .collect();
        let g = embed_simple_game(sg, &[split.clone()], mode)?;
        let split_alt = (0..g.num_alternatives())
            .find(|&a| g.payoffs(a) == split.as_slice())
            .expect("embedded split alternative");
        let aut = core_reversion_convention(
            &g,
            Outcome::unblocked(split_alt),
            i,
            Some(ReversionGuard { player: i, threshold: Q::zero() }),
        )?;
        Ok((g, aut))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventions::continuation_values;
    use crate::rat::{parse_vec, q, qi};

    fn qv(s: &str) -> Vec<Q> {
        parse_vec(s).unwrap()
    }

    fn cs(members: &[usize]) -> Coalition {
        Coalition::from_members(members.iter().copied())
    }

    fn div3_winning() -> SimpleGame {
        SimpleGame::new(3, vec![cs(&[0, 1]), cs(&[0, 2])]).unwrap()
    }

    fn majority3() -> SimpleGame {
        SimpleGame::new(3, vec![cs(&[0, 1]), cs(&[0, 2]), cs(&[1, 2])]).unwrap()
    }

    fn two_veto() -> SimpleGame {
        SimpleGame::new(3, vec![cs(&[0, 1])]).unwrap()
    }

    #[test]
    fn veto_players_examples() {
        assert_eq!(div3_winning().veto_players(), cs(&[0]));
        assert!(majority3().veto_players().is_empty());
        assert_eq!(two_veto().veto_players(), cs(&[0, 1]));
    }

    #[test]
    fn classification_examples() {
        let c = classify(&div3_winning());
        assert_eq!((c.dictatorial, c.collegial, c.veto_count), (false, true, 1));
        let c = classify(&majority3());
        assert_eq!((c.dictatorial, c.collegial, c.veto_count), (false, false, 0));
        let c = classify(&two_veto());
        assert_eq!((c.dictatorial, c.collegial, c.veto_count), (false, true, 2));
        let dict = SimpleGame::new(2, vec![cs(&[0])]).unwrap();
        let c = classify(&dict);
        assert_eq!((c.dictatorial, c.collegial, c.veto_count), (true, true, 1));
    }

    #[test]
    fn monotone_closure_and_minimality() {
        // Redundant supersets collapse onto the antichain.
        let sg = SimpleGame::new(3, vec![cs(&[0, 1]), cs(&[0, 1, 2])]).unwrap();
        assert_eq!(sg.minimal_winning(), &[cs(&[0, 1])]);
        assert!(sg.is_winning(cs(&[0, 1, 2])));
        assert!(!sg.is_winning(cs(&[0, 2])));
        assert_eq!(sg.winning().count(), 2);
    }

    #[test]
    fn improper_families_are_rejected() {
        match SimpleGame::new(4, vec![cs(&[0, 1]), cs(&[2, 3])]) {
            Err(Error::InvalidGame(_)) => {}
            other => panic!("expected InvalidGame, got {other:?}"),
        }
    }

    #[test]
    fn u_delta_examples() {
        let sg = div3_winning();
        assert!(sg.u_delta(&qv("0,1/2,1/2"), &q(1, 2)).unwrap());
        // delta = 0 pins every winning sum at 1: exactly the core.
        assert!(sg.u_delta(&qv("1,0,0"), &Q::zero()).unwrap());
        assert!(!sg.u_delta(&qv("0,1/2,1/2"), &Q::zero()).unwrap());
        // Triangle vertices at delta = 3/5.
        let d = q(3, 5);
        for v in ["1/5,2/5,2/5", "0,3/5,2/5", "0,2/5,3/5"] {
            assert!(sg.u_delta(&qv(v), &d).unwrap(), "vertex {v}");
        }
        assert!(sg.u_delta(&qv("1/2,1/2,1/2"), &q(1, 2)).is_err());
        assert!(sg.u_delta(&qv("0,1/2,1/2"), &qi(1)).is_err());
    }

    #[test]
    fn core_examples() {
        let sg = div3_winning();
        assert!(sg.core(&qv("1,0,0")).unwrap());
        assert!(!sg.core(&qv("0,1/2,1/2")).unwrap());
        let sg2 = two_veto();
        assert!(sg2.core(&qv("2/5,3/5,0")).unwrap());
        assert!(!sg2.core(&qv("2/5,1/2,1/10")).unwrap());
        assert_eq!(majority3().core(&qv("1/3,1/3,1/3")), Err(Error::NonCollegial));
    }

    #[test]
    fn stationary_sustainability_and_threshold() {
        let sg = div3_winning();
        let u = qv("0,1/2,1/2");
        assert!(stationary_sustainable(&sg, &u, &q(3, 5), TransferMode::Ntu).unwrap());
        match stationary_sustainable(&sg, &u, &q(2, 5), TransferMode::Ntu) {
            Err(Error::DeltaTooSmall(msg)) => {
                assert!(msg.contains("single-veto"), "message: {msg}")
            }
            other => panic!("expected DeltaTooSmall, got {other:?}"),
        }
        // Two veto players: any delta, plain inequality check.
        let sg2 = two_veto();
        assert!(stationary_sustainable(
            &sg2,
            &qv("9/20,9/20,1/10"),
            &q(1, 10),
            TransferMode::TuPublic
        )
        .unwrap());
        assert!(!stationary_sustainable(
            &sg2,
            &qv("1/2,3/10,1/5"),
            &q(1, 10),
            TransferMode::TuPublic
        )
        .unwrap());
        assert_eq!(
            stationary_sustainable(&majority3(), &qv("1/3,1/3,1/3"), &q(1, 2), TransferMode::Ntu),
            Err(Error::NonCollegial)
        );
    }

    #[test]
    fn secrecy_collapses_to_core() {
        let sg = div3_winning();
        assert!(secret_transfer_supportable(&sg, &qv("1,0,0")).unwrap());
        assert!(!secret_transfer_supportable(&sg, &qv("0,1/2,1/2")).unwrap());
        let sg2 = two_veto();
        assert!(secret_transfer_supportable(&sg2, &qv("3/10,7/10,0")).unwrap());
    }

    #[test]
    fn u_delta_grows_with_delta() {
        let sg = div3_winning();
        let deltas = [q(1, 5), q(2, 5), q(3, 5), q(4, 5)];
        // Quarter-grid points of the simplex.
        for a in 0..=4i64 {
            for b in 0..=(4 - a) {
                let u = vec![q(a, 4), q(b, 4), q(4 - a - b, 4)];
                for w in deltas.windows(2) {
                    let lo = sg.u_delta(&u, &w[0]).unwrap();
                    let hi = sg.u_delta(&u, &w[1]).unwrap();
                    assert!(!lo || hi, "U(delta) nested at {}", fmt_vec(&u));
                }
            }
        }
    }

    #[test]
    fn u_zero_equals_core_on_collegial_families() {
        let families: Vec<SimpleGame> = vec![
            div3_winning(),
            two_veto(),
            SimpleGame::new(2, vec![cs(&[0])]).unwrap(),
            SimpleGame::new(4, vec![cs(&[0, 1, 2]), cs(&[0, 1, 3])]).unwrap(),
        ];
        for sg in &families {
            let n = sg.n();
            // Quarter-grid on the simplex via compositions of 4.
            let mut stack = vec![(Vec::<i64>::new(), 4i64)];
            while let Some((prefix, rem)) = stack.pop() {
                if prefix.len() + 1 == n {
                    let mut parts = prefix.clone();
                    parts.push(rem);
                    let u: Vec<Q> = parts.iter().map(|&k| q(k, 4)).collect();
                    assert_eq!(
                        sg.u_delta(&u, &Q::zero()).unwrap(),
                        sg.core(&u).unwrap(),
                        "U(0) = K at {}",
                        fmt_vec(&u)
                    );
                } else {
                    for k in 0..=rem {
                        let mut p = prefix.clone();
                        p.push(k);
                        stack.push((p, rem - k));
                    }
                }
            }
        }
    }

    #[test]
    fn embedding_realizes_the_effectivity() {
        let sg = div3_winning();
        let g = embed_simple_game(&sg, &[qv("0,1/2,1/2")], TransferMode::Ntu).unwrap();
        assert_eq!(g.num_alternatives(), 4);
        // Winning coalitions reach everything, losing ones are stuck.
        assert_eq!(g.effectivity(cs(&[0, 1]), 3).len(), 4);
        assert_eq!(g.effectivity(cs(&[1, 2]), 3), vec![3]);
        assert_eq!(g.effectivity(cs(&[0, 1, 2]), 0).len(), 4);
        // Vertex payoffs are the unit vectors.
        assert_eq!(g.payoffs(0), qv("1,0,0").as_slice());
        // Duplicate extra points collapse.
        let g2 = embed_simple_game(&sg, &[qv("1,0,0")], TransferMode::Ntu).unwrap();
        assert_eq!(g2.num_alternatives(), 3);
    }

    #[test]
    fn punishment_convention_with_spare_veto_player() {
        let sg = two_veto();
        let (g, aut) = punishment_convention(&sg, 0, TransferMode::Ntu).unwrap();
        // Constant at the other veto player's vertex.
        let vals = continuation_values(&aut, &g, &q(1, 2)).unwrap();
        let v = &vals[&aut.initial_state()];
        assert_eq!(v, &qv("0,1,0"));
    }

    #[test]
    fn punishment_convention_for_single_veto_player() {
        let sg = div3_winning();
        let (g, aut) = punishment_convention(&sg, 0, TransferMode::Ntu).unwrap();
        let vals = continuation_values(&aut, &g, &q(4, 5)).unwrap();
        // On the path the veto player is held to zero.
        assert_eq!(vals[&aut.initial_state()], qv("0,1/2,1/2"));
        // Any unguarded block reverts to the veto player's vertex.
        let split_alt = aut.output(aut.initial_state()).alt;
        let next = aut.transition(
            &g,
            aut.initial_state(),
            &Outcome::blocked(0, cs(&[0, 1])),
        );
        assert_ne!(next, aut.initial_state());
        assert_eq!(aut.output(next).alt, 0);
        assert_eq!(vals[&next], qv("1,0,0"));
        // Blocks leaving the veto player strictly hurt are ignored.
        let mut t = crate::game::TransferMatrix::zero(3);
        t.set(0, 1, q(1, 4));
        let obs = Outcome::blocked_tu(split_alt, cs(&[0, 1]), t);
        // NTU embedding carries no transfers; rebuild under TuPublic.
        let (g2, aut2) = punishment_convention(&sg, 0, TransferMode::TuPublic).unwrap();
        assert_eq!(aut2.transition(&g2, aut2.initial_state(), &obs), aut2.initial_state());
    }

    #[test]
    fn punishment_convention_rejects_non_collegial() {
        assert!(matches!(
            punishment_convention(&majority3(), 0, TransferMode::Ntu),
            Err(Error::NonCollegial)
        ));
    }
}
