//! Convention automata and the machinery behind the stationary
//! constructions: state spaces, outputs, transition structure, exact
//! continuation values, punishment-phase scalars (kappa, length, epsilon),
//! payoff-sequence decomposition, and punishment menus.
//!
//! Two automaton representations coexist. `ExplicitAutomaton` lists states
//! and pattern-matched transition rules and covers hand-written conventions
//! (core reversion, matching conventions). `FolkAutomaton` stores the
//! structured phase/punishment layout produced by the builders; its
//! transition function is algorithmic and regime-specific.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    proper_coalitions, Coalition, Outcome, PlayerId, StageGame, TransferMatrix, TransferMode,
};
use crate::lp::{LpBuilder, LpOutcome, Rel};
use crate::minmax;
use crate::rat::{fmt_q, fmt_vec, linf_dist, q, q_pow, qi, to_f64, Q};
use num::{One, Signed, Zero};

/// Identifier of an automaton state.
///
/// `Index` addresses explicit automata. `Normal`/`Punish` address the
/// structured states of a folk automaton: `Normal { phase, tau }` is
/// position `tau` of a phase's recommendation sequence, `Punish { pun, tau }`
/// is period `tau` of the punishment spec at index `pun`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateId {
    Index(usize),
    Normal { phase: usize, tau: usize },
    Punish { pun: usize, tau: usize },
}

/// Affine predicate on an observed outcome:
///   sum payoff_terms (i, c): c * u_i(a', T')
/// + sum transfer_terms (i, j, c): c * T'[i][j]
/// + constant   (>= 0, or > 0 when strict).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct TransferGuard {
    #[serde(with = "crate::rat::qpairserde")]
    pub payoff_terms: Vec<(PlayerId, Q)>,
    #[serde(with = "crate::rat::qtripserde")]
    pub transfer_terms: Vec<(PlayerId, PlayerId, Q)>,
    #[serde(with = "crate::rat::qserde")]
    pub constant: Q,
    pub strict: bool,
}

impl TransferGuard {
    pub fn holds(&self, g: &StageGame, obs: &Outcome) -> bool {
        let mut expr = self.constant.clone();
        for (i, c) in &self.payoff_terms {
            expr += c * g.experienced_payoff(*i, obs.alt, obs.transfers.as_ref());
        }
        for (i, j, c) in &self.transfer_terms {
            let t = match &obs.transfers {
                Some(m) => m.get(*i, *j).clone(),
                None => Q::zero(),
            };
            expr += c * t;
        }
        if self.strict {
            expr.is_positive()
        } else {
            !expr.is_negative()
        }
    }

    /// Uses any transfer entry of a pair inside `c`. Secrecy-measurability
    /// checks need to know which guards peek at intra-coalition transfers.
    pub fn references_internal_transfers(&self, c: Coalition) -> bool {
        self.transfer_terms
            .iter()
            .any(|(i, j, coef)| !coef.is_zero() && c.contains(*i) && c.contains(*j))
    }
}

/// Pattern matched against an observed outcome; first matching rule wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomePattern {
    /// Matches every outcome. Required as each state's final rule.
    Any,
    /// Matches outcomes with no blocking coalition.
    Unblocked,
    /// Matches blocked outcomes, optionally filtered.
    Blocked {
        coalitions: Option<Vec<Coalition>>,
        alternatives: Option<Vec<usize>>,
        guard: Option<TransferGuard>,
    },
}

impl OutcomePattern {
    pub fn matches(&self, g: &StageGame, obs: &Outcome) -> bool {
        match self {
            OutcomePattern::Any => true,
            OutcomePattern::Unblocked => obs.blockers.is_empty(),
            OutcomePattern::Blocked { coalitions, alternatives, guard } => {
                if obs.blockers.is_empty() {
                    return false;
                }
                if let Some(cs) = coalitions {
                    if !cs.contains(&obs.blockers) {
                        return false;
                    }
                }
                if let Some(alts) = alternatives {
                    if !alts.contains(&obs.alt) {
                        return false;
                    }
                }
                if let Some(gd) = guard {
                    if !gd.holds(g, obs) {
                        return false;
                    }
                }
                true
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub pattern: OutcomePattern,
    pub next: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitState {
    pub label: String,
    /// Recommendation when the state is reached; must be unblocked.
    pub output: Outcome,
    pub rules: Vec<TransitionRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitAutomaton {
    pub states: Vec<ExplicitState>,
    pub initial: usize,
}

impl ExplicitAutomaton {
    pub fn transition(&self, g: &StageGame, state: usize, obs: &Outcome) -> usize {
        let rules = &self.states[state].rules;
        for r in rules {
            if r.pattern.matches(g, obs) {
                return r.next;
            }
        }
        unreachable!("validated automata end every rule list with a catch-all");
    }

    pub fn validate(&self, g: &StageGame) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidInput("automaton has no states".into()));
        }
        if self.initial >= self.states.len() {
            return Err(Error::InvalidInput("initial state out of range".into()));
        }
        let n = g.n();
        for (k, st) in self.states.iter().enumerate() {
            if !st.output.blockers.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "state {k}: output must be an unblocked recommendation"
                )));
            }
            if st.output.alt >= g.num_alternatives() {
                return Err(Error::InvalidInput(format!(
                    "state {k}: output alternative out of range"
                )));
            }
            if let Some(t) = &st.output.transfers {
                t.validate()?;
                if t.n() != n {
                    return Err(Error::InvalidInput(format!(
                        "state {k}: transfer matrix size mismatch"
                    )));
                }
                if !g.transfer_mode.has_transfers() && !t.is_zero() {
                    return Err(Error::InvalidInput(format!(
                        "state {k}: nonzero transfers in a regime without transfers"
                    )));
                }
            }
            match st.rules.last() {
                Some(r) if r.pattern == OutcomePattern::Any => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "state {k}: rule list must end with a catch-all"
                    )))
                }
            }
            for r in &st.rules {
                if r.next >= self.states.len() {
                    return Err(Error::InvalidInput(format!(
                        "state {k}: transition to unknown state {}",
                        r.next
                    )));
                }
                if let OutcomePattern::Blocked { coalitions, alternatives, guard } = &r.pattern {
                    if let Some(cs) = coalitions {
                        for c in cs {
                            if c.is_empty() || !c.is_subset_of(g.grand()) {
                                return Err(Error::InvalidInput(format!(
                                    "state {k}: rule coalition out of range"
                                )));
                            }
                        }
                    }
                    if let Some(alts) = alternatives {
                        if alts.iter().any(|&a| a >= g.num_alternatives()) {
                            return Err(Error::InvalidInput(format!(
                                "state {k}: rule alternative out of range"
                            )));
                        }
                    }
                    if let Some(gd) = guard {
                        let bad_p = gd.payoff_terms.iter().any(|(i, _)| *i >= n);
                        let bad_t =
                            gd.transfer_terms.iter().any(|(i, j, _)| *i >= n || *j >= n);
                        if bad_p || bad_t {
                            return Err(Error::InvalidInput(format!(
                                "state {k}: guard references unknown player"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Semantic role of a folk-automaton phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseTag {
    /// Plays out the supported target payoff.
    Target,
    /// Post-punishment phase rewarding everyone but the named player.
    RewardPlayer(PlayerId),
    /// Post-punishment phase keyed to a coalition.
    RewardCoalition(Coalition),
}

/// One period's recommendation inside a phase sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStep {
    pub alt: usize,
    pub transfers: Option<TransferMatrix>,
}

impl OutcomeStep {
    pub fn to_outcome(&self) -> Outcome {
        Outcome { alt: self.alt, blockers: Coalition::EMPTY, transfers: self.transfers.clone() }
    }
}

/// A recommendation sequence with eventual period: steps `prefix_len..`
/// repeat forever once reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub tag: PhaseTag,
    #[serde(with = "crate::rat::qvecserde")]
    pub target: Vec<Q>,
    pub steps: Vec<OutcomeStep>,
    pub prefix_len: usize,
}

impl Phase {
    pub fn next_tau(&self, tau: usize) -> usize {
        if tau + 1 < self.steps.len() {
            tau + 1
        } else {
            self.prefix_len
        }
    }
}

/// Minmax phase against a player or coalition: play `alt` for the punishment
/// length, then enter `resume_phase`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PunishmentSpec {
    pub scope: Coalition,
    pub alt: usize,
    pub resume_phase: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FolkParameters {
    #[serde(with = "crate::rat::qserde")]
    pub delta: Q,
    #[serde(with = "crate::rat::qserde")]
    pub kappa: Q,
    /// Number of punishment periods L.
    pub punish_len: usize,
    #[serde(with = "crate::rat::qserde")]
    pub epsilon: Q,
    #[serde(with = "crate::rat::qvecserde")]
    pub target: Vec<Q>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FolkAutomaton {
    pub regime: TransferMode,
    /// Coalitions whose punishments are triggered irrespective of observed
    /// transfers (partial-secrecy regime); singletons are implicit.
    pub protected: Vec<Coalition>,
    pub phases: Vec<Phase>,
    pub initial_phase: usize,
    pub punishments: Vec<PunishmentSpec>,
    pub params: FolkParameters,
    /// Individual minmax values, one per player.
    #[serde(with = "crate::rat::qvecserde")]
    pub floors: Vec<Q>,
}

impl FolkAutomaton {
    pub fn punishment_index(&self, scope: Coalition) -> Option<usize> {
        self.punishments.iter().position(|p| p.scope == scope)
    }

    pub(crate) fn pun_state(&self, scope: Coalition) -> StateId {
        let pun = self
            .punishment_index(scope)
            .expect("validated folk automata declare all reachable punishments");
        StateId::Punish { pun, tau: 0 }
    }

    pub(crate) fn is_protected(&self, c: Coalition) -> bool {
        c.len() == 1 || self.protected.contains(&c)
    }

    pub(crate) fn advance(&self, s: StateId) -> StateId {
        match s {
            StateId::Normal { phase, tau } => {
                StateId::Normal { phase, tau: self.phases[phase].next_tau(tau) }
            }
            StateId::Punish { pun, tau } => {
                if tau + 1 < self.params.punish_len {
                    StateId::Punish { pun, tau: tau + 1 }
                } else {
                    StateId::Normal { phase: self.punishments[pun].resume_phase, tau: 0 }
                }
            }
            StateId::Index(_) => unreachable!("folk automata use structured state ids"),
        }
    }

    fn output(&self, s: StateId) -> Outcome {
        match s {
            StateId::Normal { phase, tau } => self.phases[phase].steps[tau].to_outcome(),
            StateId::Punish { pun, .. } => Outcome::unblocked(self.punishments[pun].alt),
            StateId::Index(_) => unreachable!("folk automata use structured state ids"),
        }
    }

    /// Scapegoat among `pool`: member minimizing `score`, smallest index on
    /// ties. `pool` must be nonempty.
    fn argmin_member<F: Fn(PlayerId) -> Q>(pool: Coalition, score: F) -> PlayerId {
        let mut best: Option<(PlayerId, Q)> = None;
        for j in pool.members() {
            let sc = score(j);
            match &best {
                Some((_, b)) if sc >= *b => {}
                _ => best = Some((j, sc)),
            }
        }
        best.expect("argmin over nonempty coalition").0
    }

    fn transition(&self, g: &StageGame, s: StateId, obs: &Outcome) -> StateId {
        let c = obs.blockers;
        if c.is_empty() {
            return self.advance(s);
        }
        match self.regime {
            TransferMode::Ntu => self.step_ntu(s, c),
            TransferMode::TuPublic => self.step_public(g, s, obs),
            TransferMode::TuSecret => self.step_secret(g, s, c),
            TransferMode::TuPartial => self.step_partial(g, s, obs),
        }
    }

    /// Transfer-free rule: punish the smallest-index blocker, except that a
    /// currently punished player never hands the punishment to themself.
    fn step_ntu(&self, s: StateId, c: Coalition) -> StateId {
        match s {
            StateId::Normal { .. } => self.pun_state(Coalition::singleton(c.min_member())),
            StateId::Punish { pun, .. } => {
                let scope = self.punishments[pun].scope;
                let i = scope.min_member();
                if c == scope {
                    self.pun_state(scope)
                } else {
                    let pool = c.without(i);
                    self.pun_state(Coalition::singleton(pool.min_member()))
                }
            }
            StateId::Index(_) => unreachable!(),
        }
    }

    /// Public-transfer rule: the scapegoat is the blocker who gained least
    /// relative to the state's recommendation; during a punishment of i the
    /// reference is the flow under i's minmax alternative, and i is punished
    /// again only when held to the floor.
    fn step_public(&self, g: &StageGame, s: StateId, obs: &Outcome) -> StateId {
        let c = obs.blockers;
        let u = g.experienced_profile(obs.alt, obs.transfers.as_ref());
        match s {
            StateId::Normal { .. } => {
                let reference = g.experienced_profile(
                    self.output(s).alt,
                    self.output(s).transfers.as_ref(),
                );
                let j = Self::argmin_member(c, |j| &u[j] - &reference[j]);
                self.pun_state(Coalition::singleton(j))
            }
            StateId::Punish { pun, .. } => {
                let spec = &self.punishments[pun];
                let i = spec.scope.min_member();
                if c.contains(i) && u[i] <= self.floors[i] {
                    return self.pun_state(spec.scope);
                }
                let pool = c.without(i);
                if pool.is_empty() {
                    return self.pun_state(spec.scope);
                }
                let j = Self::argmin_member(pool, |j| &u[j] - g.payoff(j, spec.alt));
                self.pun_state(Coalition::singleton(j))
            }
            StateId::Index(_) => unreachable!(),
        }
    }

    /// Fully transfer-blind rule: any proper blocking coalition is punished
    /// as a unit; grand blocks are treated like compliance.
    fn step_secret(&self, g: &StageGame, s: StateId, c: Coalition) -> StateId {
        if c == g.grand() {
            self.advance(s)
        } else {
            self.pun_state(c)
        }
    }

    /// Partial-secrecy rule: protected coalitions (the declared set plus all
    /// singletons) are punished as units without consulting transfers; other
    /// blocks fall back to scapegoat selection on observed payoffs.
    fn step_partial(&self, g: &StageGame, s: StateId, obs: &Outcome) -> StateId {
        let c = obs.blockers;
        if self.is_protected(c) {
            return self.pun_state(c);
        }
        let u = g.experienced_profile(obs.alt, obs.transfers.as_ref());
        match s {
            StateId::Normal { .. } => {
                let reference = g.experienced_profile(
                    self.output(s).alt,
                    self.output(s).transfers.as_ref(),
                );
                let j = Self::argmin_member(c, |j| &u[j] - &reference[j]);
                self.pun_state(Coalition::singleton(j))
            }
            StateId::Punish { pun, .. } => {
                let spec = &self.punishments[pun];
                if spec.scope.len() == 1 {
                    let i = spec.scope.min_member();
                    if c.contains(i) && u[i] <= self.floors[i] {
                        return self.pun_state(spec.scope);
                    }
                    let pool = c.without(i);
                    if pool.is_empty() {
                        return self.pun_state(spec.scope);
                    }
                    let j = Self::argmin_member(pool, |j| &u[j] - g.payoff(j, spec.alt));
                    self.pun_state(Coalition::singleton(j))
                } else {
                    let j = Self::argmin_member(c, |j| u[j].clone());
                    self.pun_state(Coalition::singleton(j))
                }
            }
            StateId::Index(_) => unreachable!(),
        }
    }

    pub fn validate(&self, g: &StageGame) -> Result<()> {
        let n = g.n();
        if self.params.delta <= Q::zero() || self.params.delta >= Q::one() {
            return Err(Error::InvalidInput("discount factor must lie in (0,1)".into()));
        }
        if self.params.punish_len == 0 {
            return Err(Error::InvalidInput("punishment length must be positive".into()));
        }
        if self.phases.is_empty() || self.initial_phase >= self.phases.len() {
            return Err(Error::InvalidInput("initial phase out of range".into()));
        }
        if self.floors.len() != n || self.params.target.len() != n {
            return Err(Error::InvalidInput("parameter vector length mismatch".into()));
        }
        for (k, ph) in self.phases.iter().enumerate() {
            if ph.steps.is_empty() || ph.prefix_len >= ph.steps.len() {
                return Err(Error::InvalidInput(format!(
                    "phase {k}: sequence needs a nonempty cycle"
                )));
            }
            if ph.target.len() != n {
                return Err(Error::InvalidInput(format!("phase {k}: target length mismatch")));
            }
            for st in &ph.steps {
                if st.alt >= g.num_alternatives() {
                    return Err(Error::InvalidInput(format!(
                        "phase {k}: step alternative out of range"
                    )));
                }
                if let Some(t) = &st.transfers {
                    t.validate()?;
                    if t.n() != n {
                        return Err(Error::InvalidInput(format!(
                            "phase {k}: transfer matrix size mismatch"
                        )));
                    }
                    if !g.transfer_mode.has_transfers() && !t.is_zero() {
                        return Err(Error::InvalidInput(format!(
                            "phase {k}: nonzero transfers in a regime without transfers"
                        )));
                    }
                }
            }
        }
        for (k, p) in self.punishments.iter().enumerate() {
            if p.scope.is_empty() || !p.scope.is_subset_of(g.grand()) {
                return Err(Error::InvalidInput(format!("punishment {k}: bad scope")));
            }
            if p.alt >= g.num_alternatives() {
                return Err(Error::InvalidInput(format!(
                    "punishment {k}: alternative out of range"
                )));
            }
            if p.resume_phase >= self.phases.len() {
                return Err(Error::InvalidInput(format!(
                    "punishment {k}: resume phase out of range"
                )));
            }
        }
        // Regime-specific completeness: every punishment the transition
        // function can invoke must be declared, with a matching resume tag.
        let require = |scope: Coalition, tag: PhaseTag| -> Result<()> {
            let idx = self.punishment_index(scope).ok_or_else(|| {
                Error::InvalidInput(format!("missing punishment for coalition {}", scope.0))
            })?;
            let resume = &self.phases[self.punishments[idx].resume_phase];
            if resume.tag != tag {
                return Err(Error::InvalidInput(format!(
                    "punishment for coalition {} resumes into a mismatched phase",
                    scope.0
                )));
            }
            Ok(())
        };
        match self.regime {
            TransferMode::Ntu | TransferMode::TuPublic => {
                for i in 0..n {
                    require(Coalition::singleton(i), PhaseTag::RewardPlayer(i))?;
                }
            }
            TransferMode::TuSecret => {
                for c in proper_coalitions(n) {
                    require(c, PhaseTag::RewardCoalition(c))?;
                }
                if self.phases[self.initial_phase].tag != PhaseTag::Target {
                    return Err(Error::InvalidInput(
                        "initial phase must be the target phase".into(),
                    ));
                }
            }
            TransferMode::TuPartial => {
                for c in &self.protected {
                    if c.is_empty() || c.len() == 1 || *c == g.grand() {
                        return Err(Error::InvalidInput(
                            "protected coalitions must be proper and non-singleton".into(),
                        ));
                    }
                    require(*c, PhaseTag::RewardCoalition(*c))?;
                }
                for i in 0..n {
                    require(Coalition::singleton(i), PhaseTag::RewardCoalition(Coalition::singleton(i)))?;
                }
                if self.phases[self.initial_phase].tag != PhaseTag::Target {
                    return Err(Error::InvalidInput(
                        "initial phase must be the target phase".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A convention automaton in either representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConventionAutomaton {
    Explicit(ExplicitAutomaton),
    Folk(FolkAutomaton),
}

impl ConventionAutomaton {
    pub fn initial_state(&self) -> StateId {
        match self {
            ConventionAutomaton::Explicit(a) => StateId::Index(a.initial),
            ConventionAutomaton::Folk(f) => {
                StateId::Normal { phase: f.initial_phase, tau: 0 }
            }
        }
    }

    /// Deterministic enumeration of every declared state.
    pub fn states(&self) -> Vec<StateId> {
        match self {
            ConventionAutomaton::Explicit(a) => {
                (0..a.states.len()).map(StateId::Index).collect()
            }
            ConventionAutomaton::Folk(f) => {
                let mut out = Vec::new();
                for (p, ph) in f.phases.iter().enumerate() {
                    for tau in 0..ph.steps.len() {
                        out.push(StateId::Normal { phase: p, tau });
                    }
                }
                for pun in 0..f.punishments.len() {
                    for tau in 0..f.params.punish_len {
                        out.push(StateId::Punish { pun, tau });
                    }
                }
                out
            }
        }
    }

    pub fn output(&self, s: StateId) -> Outcome {
        match (self, s) {
            (ConventionAutomaton::Explicit(a), StateId::Index(i)) => a.states[i].output.clone(),
            (ConventionAutomaton::Folk(f), s) => f.output(s),
            _ => unreachable!("state id does not address this automaton"),
        }
    }

    pub fn transition(&self, g: &StageGame, s: StateId, obs: &Outcome) -> StateId {
        match (self, s) {
            (ConventionAutomaton::Explicit(a), StateId::Index(i)) => {
                StateId::Index(a.transition(g, i, obs))
            }
            (ConventionAutomaton::Folk(f), s) => f.transition(g, s, obs),
            _ => unreachable!("state id does not address this automaton"),
        }
    }

    /// Successor when the recommendation stands.
    pub fn on_path_next(&self, g: &StageGame, s: StateId) -> StateId {
        let out = self.output(s);
        self.transition(g, s, &out)
    }

    pub fn validate(&self, g: &StageGame) -> Result<()> {
        match self {
            ConventionAutomaton::Explicit(a) => a.validate(g),
            ConventionAutomaton::Folk(f) => f.validate(g),
        }
    }

    pub fn state_label(&self, g: &StageGame, s: StateId) -> String {
        match (self, s) {
            (ConventionAutomaton::Explicit(a), StateId::Index(i)) => a.states[i].label.clone(),
            (ConventionAutomaton::Folk(f), StateId::Normal { phase, tau }) => {
                let tag = match &f.phases[phase].tag {
                    PhaseTag::Target => "target".to_string(),
                    PhaseTag::RewardPlayer(i) => g.players[*i].clone(),
                    PhaseTag::RewardCoalition(c) => c.label(g),
                };
                format!("w({tag},{tau})")
            }
            (ConventionAutomaton::Folk(f), StateId::Punish { pun, tau }) => {
                format!("wbar({},{tau})", f.punishments[pun].scope.label(g))
            }
            _ => unreachable!("state id does not address this automaton"),
        }
    }
}

pub(crate) fn vaffine(a: &Q, x: &[Q], b: &Q, y: &[Q]) -> Vec<Q> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect()
}

/// Exact Horner evaluation of sum_j delta^j flows[j].
pub(crate) fn discounted_sum(flows: &[Vec<Q>], delta: &Q) -> Vec<Q> {
    let n = flows.first().map_or(0, |f| f.len());
    let mut acc = vec![Q::zero(); n];
    for f in flows.iter().rev() {
        for (a, fi) in acc.iter_mut().zip(f) {
            *a = fi + delta.clone() * a.clone();
        }
    }
    acc
}

/// Exact continuation values of every declared state: the unique bounded
/// solution of V(w) = (1-delta) u(f(w)) + delta V(next(w)) along unblocked
/// play. States reach a cycle in finitely many steps, so values follow from
/// one geometric-series solve per cycle plus back-substitution.
pub fn continuation_values(
    aut: &ConventionAutomaton,
    g: &StageGame,
    delta: &Q,
) -> Result<BTreeMap<StateId, Vec<Q>>> {
    if *delta <= Q::zero() || *delta >= Q::one() {
        return Err(Error::InvalidInput("discount factor must lie in (0,1)".into()));
    }
    let one_minus = Q::one() - delta;
    let flow = |s: StateId| -> Vec<Q> {
        let out = aut.output(s);
        g.experienced_profile(out.alt, out.transfers.as_ref())
    };
    let mut memo: BTreeMap<StateId, Vec<Q>> = BTreeMap::new();
    for s0 in aut.states() {
        if memo.contains_key(&s0) {
            continue;
        }
        let mut path: Vec<StateId> = Vec::new();
        let mut pos: BTreeMap<StateId, usize> = BTreeMap::new();
        let mut cur = s0;
        let tail: Vec<Q> = loop {
            if let Some(v) = memo.get(&cur) {
                break v.clone();
            }
            if let Some(&k) = pos.get(&cur) {
                // New cycle: solve V(cycle[0]) from the geometric series,
                // then walk the cycle forward.
                let cyc = &path[k..];
                let flows: Vec<Vec<Q>> = cyc.iter().map(|&s| flow(s)).collect();
                let ell = cyc.len();
                let dl = q_pow(delta, ell as u32);
                let denom = Q::one() - dl;
                let s_sum = discounted_sum(&flows, delta);
                let v0: Vec<Q> =
                    s_sum.iter().map(|x| x * &one_minus / &denom).collect();
                let mut vals = vec![v0];
                for j in 0..ell - 1 {
                    let prev = &vals[j];
                    let next: Vec<Q> = prev
                        .iter()
                        .zip(&flows[j])
                        .map(|(v, u)| (v - &one_minus * u) / delta)
                        .collect();
                    vals.push(next);
                }
                for (&s, v) in cyc.iter().zip(vals) {
                    memo.insert(s, v);
                }
                break memo.get(&cur).expect("cycle entry memoized").clone();
            }
            pos.insert(cur, path.len());
            path.push(cur);
            cur = aut.on_path_next(g, cur);
        };
        let mut v_next = tail;
        for &s in path.iter().rev() {
            if let Some(v) = memo.get(&s) {
                v_next = v.clone();
                continue;
            }
            let u = flow(s);
            v_next = vaffine(&one_minus, &u, delta, &v_next);
            memo.insert(s, v_next.clone());
        }
    }
    Ok(memo)
}

/// Inequality family determining the punishment-phase weight kappa.
///
/// `PerPlayer` covers the player-by-player constructions: `punishments[i]`
/// is the reward vector after punishing player i and `alts[i]` the
/// alternative played while punishing them. `PerCoalition` covers the
/// coalition-keyed constructions; `efficient` selects whether deviation
/// bounds and cross references use efficiency-restricted minmaxes or plain
/// coalitional minmaxes with flow references.
pub enum KappaSystem<'a> {
    PerPlayer { punishments: &'a [Vec<Q>], alts: &'a [usize] },
    PerCoalition {
        coalitions: &'a [Coalition],
        punishments: &'a [Vec<Q>],
        alts: &'a [usize],
        efficient: bool,
    },
}

/// Smallest kappa on the 1/1024 grid such that the regime's punishment
/// inequalities hold strictly at both kappa and 1; affinity in kappa then
/// gives them on the whole interval.
pub fn kappa_threshold(g: &StageGame, sys: &KappaSystem) -> Result<Q> {
    let n = g.n();
    let check: Box<dyn Fn(&Q) -> bool> = match sys {
        KappaSystem::PerPlayer { punishments, alts } => {
            if punishments.len() != n || alts.len() != n {
                return Err(Error::InvalidInput(
                    "need one punishment vector and one alternative per player".into(),
                ));
            }
            if punishments.iter().any(|p| p.len() != n) {
                return Err(Error::InvalidInput("punishment vector length mismatch".into()));
            }
            if alts.iter().any(|&a| a >= g.num_alternatives()) {
                return Err(Error::InvalidInput("minmax alternative out of range".into()));
            }
            let floors = minmax::individual_minmaxes(g);
            let punishments = punishments.to_vec();
            let alts = alts.to_vec();
            let gg = g.clone();
            Box::new(move |kt: &Q| {
                let co = Q::one() - kt;
                for i in 0..n {
                    let own = &co * gg.payoff(i, alts[i]) + kt * &punishments[i][i];
                    if own <= floors[i] {
                        return false;
                    }
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let lhs = &co * gg.payoff(j, alts[i]) + kt * &punishments[i][j];
                        let rhs = &co * &floors[j] + kt * &punishments[j][j];
                        if lhs <= rhs {
                            return false;
                        }
                    }
                }
                true
            })
        }
        KappaSystem::PerCoalition { coalitions, punishments, alts, efficient } => {
            let m = coalitions.len();
            if punishments.len() != m || alts.len() != m {
                return Err(Error::InvalidInput(
                    "need one punishment vector and one alternative per coalition".into(),
                ));
            }
            if punishments.iter().any(|p| p.len() != n) {
                return Err(Error::InvalidInput("punishment vector length mismatch".into()));
            }
            if alts.iter().any(|&a| a >= g.num_alternatives()) {
                return Err(Error::InvalidInput("minmax alternative out of range".into()));
            }
            if coalitions.iter().any(|c| c.is_empty() || *c == g.grand()) {
                return Err(Error::InvalidInput(
                    "kappa system coalitions must be proper and nonempty".into(),
                ));
            }
            let bounds: Vec<Q> = coalitions
                .iter()
                .map(|&c| {
                    if *efficient {
                        minmax::efficient_coalitional_minmax(g, c).value
                    } else {
                        minmax::coalitional_minmax(g, c).value
                    }
                })
                .collect();
            // flows[k][k2] = coalition k2's stage payoff at coalition k's
            // punishment alternative; puns[k][k2] analogous on rewards.
            let flows: Vec<Vec<Q>> = (0..m)
                .map(|k| {
                    coalitions.iter().map(|&c2| g.coalition_payoff(c2, alts[k])).collect()
                })
                .collect();
            let puns: Vec<Vec<Q>> = (0..m)
                .map(|k| {
                    coalitions
                        .iter()
                        .map(|c2| c2.members().map(|i| punishments[k][i].clone()).sum::<Q>())
                        .collect()
                })
                .collect();
            let efficient = *efficient;
            Box::new(move |kt: &Q| {
                let co = Q::one() - kt;
                for k in 0..m {
                    let own = &co * &flows[k][k] + kt * &puns[k][k];
                    if own <= bounds[k] {
                        return false;
                    }
                    for k2 in 0..m {
                        if k2 == k {
                            continue;
                        }
                        let lhs = &co * &flows[k][k2] + kt * &puns[k][k2];
                        let rhs = if efficient {
                            &co * &bounds[k2] + kt * &puns[k2][k2]
                        } else {
                            &co * &flows[k2][k2] + kt * &puns[k2][k2]
                        };
                        if lhs <= rhs {
                            return false;
                        }
                    }
                }
                true
            })
        }
    };
    if !check(&Q::one()) {
        return Err(Error::KappaNotFound(
            "punishment inequalities fail at the kappa = 1 endpoint".into(),
        ));
    }
    for k in 1..1024_i64 {
        let kap = q(k, 1024);
        if check(&kap) {
            return Ok(kap);
        }
    }
    Err(Error::KappaNotFound(
        "no grid point satisfies the punishment inequalities".into(),
    ))
}

/// Smallest L >= 1 with delta^L <= kappa, i.e. ceil(log kappa / log delta);
/// then delta^L lies in [delta * kappa, kappa].
pub fn punishment_length(delta: &Q, kappa: &Q) -> Result<u32> {
    if *delta <= Q::zero() || *delta >= Q::one() {
        return Err(Error::InvalidInput("discount factor must lie in (0,1)".into()));
    }
    if *kappa <= Q::zero() || *kappa >= Q::one() {
        return Err(Error::InvalidInput("kappa must lie in (0,1)".into()));
    }
    let est = (to_f64(kappa).ln() / to_f64(delta).ln()).ceil();
    let mut l = if est.is_finite() && est >= 1.0 { est as u32 } else { 1 };
    while q_pow(delta, l) > *kappa {
        l += 1;
        if l > 2_000_000 {
            return Err(Error::InvalidInput(
                "punishment length overflow: kappa too small for this delta".into(),
            ));
        }
    }
    while l > 1 && q_pow(delta, l - 1) <= *kappa {
        l -= 1;
    }
    Ok(l)
}

/// Periodic vertex sequence approximating a target payoff.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSequence {
    /// Vertex index per period; `steps[prefix_len..]` repeats forever.
    pub steps: Vec<usize>,
    pub prefix_len: usize,
    /// Exact discounted value of the full sequence.
    pub value: Vec<Q>,
    /// Exact sup-norm distance between value and target.
    pub defect: Q,
    /// Exact continuation value at each position.
    pub tails: Vec<Vec<Q>>,
}

const CYCLE_QUANT: f64 = 268_435_456.0; // 2^28
const DEFECT_TOL_LOG2: i64 = 40;

/// Greedy decomposition of `target` into a periodic sequence over `vertices`.
///
/// Each period plays the vertex whose successor tail (z - (1-delta) v) /
/// delta lands nearest the target (sup norm), which keeps the walk inside a
/// band of width on the order of (1-delta) times the menu size. The walk
/// must keep z within epsilon of the target. The cycle closes either at a
/// quantized near-repeat deep enough that the wrap error is provably
/// negligible, or by wrapping the whole walk once it is long enough that
/// the discounted weight past it is negligible; value, defect, and tails
/// are then recomputed exactly and the closure is accepted only when the
/// defect is below 2^-40 and every exact tail stays within epsilon.
pub fn decompose_payoff_sequence(
    vertices: &[Vec<Q>],
    target: &[Q],
    delta: &Q,
    epsilon: &Q,
) -> Result<VertexSequence> {
    if vertices.is_empty() {
        return Err(Error::InvalidInput("vertex menu is empty".into()));
    }
    let dim = target.len();
    if vertices.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidInput("vertex dimension mismatch".into()));
    }
    if *delta <= Q::zero() || *delta >= Q::one() {
        return Err(Error::InvalidInput("discount factor must lie in (0,1)".into()));
    }
    if !epsilon.is_positive() {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }

    // A vertex hit exactly is its own constant sequence.
    if let Some(m) = vertices.iter().position(|v| v == target) {
        return Ok(VertexSequence {
            steps: vec![m],
            prefix_len: 0,
            value: target.to_vec(),
            defect: Q::zero(),
            tails: vec![target.to_vec()],
        });
    }

    // Hull membership: infeasibility here is a usage error, not a small-delta
    // failure.
    {
        let mut lp = LpBuilder::new();
        let ws = lp.add_vars(vertices.len());
        let mut one_row = Vec::new();
        for w in ws.clone() {
            one_row.push((w, Q::one()));
        }
        lp.constraint(one_row, Rel::Eq, Q::one());
        for c in 0..dim {
            let row: Vec<(usize, Q)> =
                ws.clone().map(|w| (w, vertices[w][c].clone())).collect();
            lp.constraint(row, Rel::Eq, target[c].clone());
        }
        lp.set_objective(vec![]);
        match lp.solve() {
            LpOutcome::Optimal { .. } => {}
            _ => {
                return Err(Error::InvalidInput(
                    "target lies outside the convex hull of the vertex menu".into(),
                ))
            }
        }
    }

    let df = to_f64(delta);
    // Wrapping the whole walk at length T back to its start leaves a value
    // error of at most delta^T epsilon / (1 - delta^T); T below keeps that
    // under a quarter of the tolerance even before the exact recheck.
    let eps_f = to_f64(epsilon);
    let base_tmin = {
        let bound = (2.0_f64).powi(-(DEFECT_TOL_LOG2 as i32 + 2)) / eps_f.max(1.0);
        let t = (bound.ln() / df.ln()).ceil();
        if t.is_finite() && t >= 2.0 {
            t as usize
        } else {
            2
        }
    };

    let vf: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| v.iter().map(to_f64).collect())
        .collect();
    let tf: Vec<f64> = target.iter().map(to_f64).collect();
    let one_minus = Q::one() - delta;
    let defect_tol = q(1, 1i64 << DEFECT_TOL_LOG2);
    let wrap_tol = (2.0_f64).powi(-(DEFECT_TOL_LOG2 as i32 + 2));

    let mut t_min = base_tmin;
    let mut last_err =
        Error::DeltaTooSmall("sequence decomposition did not converge".into());
    for attempt in 0..4 {
        if t_min > 500_000 {
            return Err(Error::DeltaTooSmall(
                "no cycle closure within the step budget".into(),
            ));
        }
        let mut z: Vec<Q> = target.to_vec();
        let mut steps: Vec<usize> = Vec::new();
        let mut seen: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
        let (prefix_len, ell) = loop {
            let t = steps.len();
            if t >= t_min {
                break (0, t);
            }
            if attempt == 0 {
                // Opportunistic early-out: the tails of a quantized
                // near-repeat differ by at most 2 / CYCLE_QUANT, so wrapping
                // the stretch between them perturbs the value by at most
                // delta^p (that gap) delta^ell / (1 - delta^ell). Retries
                // after a failed exact check walk the full length instead.
                let key: Vec<i64> = z
                    .iter()
                    .map(|x| (to_f64(x) * CYCLE_QUANT).round() as i64)
                    .collect();
                match seen.get(&key) {
                    Some(&p) => {
                        let dl = df.powi((t - p) as i32);
                        let err =
                            df.powi(p as i32) * dl * (2.0 / CYCLE_QUANT) / (1.0 - dl);
                        if err < wrap_tol {
                            break (p, t - p);
                        }
                        // Too shallow to wrap; remember the later visit.
                        seen.insert(key, t);
                    }
                    None => {
                        seen.insert(key, t);
                    }
                }
            }
            // Vertex leaving the next tail nearest the target, smallest
            // index on ties.
            let zf: Vec<f64> = z.iter().map(to_f64).collect();
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (m, v) in vf.iter().enumerate() {
                let d = zf
                    .iter()
                    .zip(v)
                    .zip(&tf)
                    .map(|((zi, vi), ti)| ((zi - (1.0 - df) * vi) / df - ti).abs())
                    .fold(0.0_f64, f64::max);
                if d < best_d {
                    best_d = d;
                    best = m;
                }
            }
            steps.push(best);
            z = z
                .iter()
                .zip(&vertices[best])
                .map(|(zi, vi)| (zi - &one_minus * vi) / delta)
                .collect();
            if linf_dist(&z, target) > *epsilon {
                return Err(Error::DeltaTooSmall(format!(
                    "tail target escapes the epsilon ball at step {}",
                    steps.len()
                )));
            }
        };
        let flows: Vec<Vec<Q>> =
            steps.iter().map(|&m| vertices[m].clone()).collect();
        let cyc_sum = discounted_sum(&flows[prefix_len..], delta);
        let denom = Q::one() - q_pow(delta, ell as u32);
        let v_cycle: Vec<Q> =
            cyc_sum.iter().map(|x| x * &one_minus / &denom).collect();
        // Exact tails, backward; position prefix_len carries v_cycle.
        let mut tails = vec![Vec::new(); steps.len()];
        let mut v_next = v_cycle.clone();
        for k in (prefix_len..steps.len()).rev() {
            if k == prefix_len {
                tails[k] = v_cycle.clone();
            } else {
                tails[k] = vaffine(&one_minus, &flows[k], delta, &v_next);
            }
            v_next = tails[k].clone();
        }
        let mut v_after = v_cycle;
        for k in (0..prefix_len).rev() {
            tails[k] = vaffine(&one_minus, &flows[k], delta, &v_after);
            v_after = tails[k].clone();
        }
        let value = if prefix_len == 0 { tails[0].clone() } else { v_after };
        debug_assert_eq!(&value, &tails[0]);
        let defect = linf_dist(&value, target);
        let tails_ok = tails.iter().all(|t| linf_dist(t, target) <= *epsilon);
        if defect < defect_tol && tails_ok {
            return Ok(VertexSequence { steps, prefix_len, value, defect, tails });
        }
        if defect < defect_tol {
            // The closure is fine but an exact tail leaves the ball; a
            // longer walk keeps the same geometry, only a larger ball helps.
            return Err(Error::DeltaTooSmall(
                "a closed cycle tail leaves the epsilon ball".into(),
            ));
        }
        last_err = Error::DeltaTooSmall(format!(
            "cycle closure defect {} exceeds tolerance",
            fmt_q(&defect)
        ));
        t_min *= 2;
    }
    Err(last_err)
}

/// Player-specific punishment rewards supporting `v0`.
///
/// Transfer regimes split an epsilon around v0: the punished player loses
/// epsilon, everyone else shares it, with epsilon halved until every vector
/// is strictly individually rational. The transfer-free regime instead
/// solves one LP over hull weights maximizing the minimum slack of
/// strict individual rationality, strict dominance of the punished player's
/// coordinate, and distance below v0.
pub fn player_specific_punishments(
    g: &StageGame,
    v0: &[Q],
    eps: Option<&Q>,
) -> Result<Vec<Vec<Q>>> {
    let n = g.n();
    if v0.len() != n {
        return Err(Error::InvalidInput("target vector length mismatch".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "player-specific punishments need at least two players".into(),
        ));
    }
    let floors = minmax::individual_minmaxes(g);
    if g.transfer_mode.has_transfers() {
        let gap = (0..n)
            .map(|i| &v0[i] - &floors[i])
            .min()
            .expect("n >= 2");
        let mut epsilon = match eps {
            Some(e) => {
                if !e.is_positive() {
                    return Err(Error::InvalidInput("epsilon must be positive".into()));
                }
                e.clone()
            }
            None => {
                if !gap.is_positive() {
                    return Err(Error::NoPunishments(
                        "target is not strictly individually rational".into(),
                    ));
                }
                gap
            }
        };
        let share = q(1, (n - 1) as i64);
        for _ in 0..200 {
            let family: Vec<Vec<Q>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if j == i {
                                &v0[j] - &epsilon
                            } else {
                                &v0[j] + &epsilon * &share
                            }
                        })
                        .collect()
                })
                .collect();
            let ok = family
                .iter()
                .all(|u| u.iter().zip(&floors).all(|(ui, fi)| ui > fi));
            if ok {
                return Ok(family);
            }
            epsilon /= qi(2);
        }
        Err(Error::NoPunishments(
            "epsilon halving exhausted without strict individual rationality".into(),
        ))
    } else {
        g.check_neu()?;
        let na = g.num_alternatives();
        let mut lp = LpBuilder::new();
        let t = lp.add_var();
        let mut weight_vars: Vec<Vec<usize>> = Vec::new();
        for _ in 0..n {
            weight_vars.push(lp.add_vars(na).collect());
        }
        for i in 0..n {
            let ws = &weight_vars[i];
            lp.constraint(
                ws.iter().map(|&w| (w, Q::one())).collect(),
                Rel::Eq,
                Q::one(),
            );
            // coordinate expressions: x_j = sum_a w_a v_j(a)
            let coord = |j: usize| -> Vec<(usize, Q)> {
                ws.iter()
                    .enumerate()
                    .map(|(a, &w)| (w, g.payoff(j, a).clone()))
                    .collect()
            };
            // x_i + t <= v0_i
            let mut row = coord(i);
            row.push((t, Q::one()));
            lp.constraint(row, Rel::Le, v0[i].clone());
            for j in 0..n {
                // x_j - t >= floor_j
                let mut row = coord(j);
                row.push((t, -Q::one()));
                lp.constraint(row, Rel::Ge, floors[j].clone());
                if j != i {
                    // x_j - x_i - t >= 0
                    let mut row = coord(j);
                    for (var, c) in coord(i) {
                        row.push((var, -c));
                    }
                    row.push((t, -Q::one()));
                    lp.constraint(row, Rel::Ge, Q::zero());
                }
            }
        }
        lp.set_objective(vec![(t, Q::one())]);
        match lp.solve() {
            LpOutcome::Optimal { value, point } if value.is_positive() => {
                let family = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                weight_vars[i]
                                    .iter()
                                    .enumerate()
                                    .map(|(a, &w)| &point[w] * g.payoff(j, a))
                                    .sum::<Q>()
                            })
                            .collect()
                    })
                    .collect();
                Ok(family)
            }
            LpOutcome::Optimal { .. } => Err(Error::NoPunishments(
                "no feasible payoff vectors with positive slack".into(),
            )),
            LpOutcome::Infeasible => Err(Error::NoPunishments(
                "punishment feasibility program is infeasible".into(),
            )),
            LpOutcome::Unbounded => Err(Error::LpUnbounded(
                "punishment slack program is unbounded".into(),
            )),
        }
    }
}

/// Coalition-keyed punishment rewards around a strict efficient deviation-proof
/// point: coalition members share an epsilon loss, outsiders share the gain,
/// with epsilon halved until every vector stays strictly deviation-proof.
/// Returned in ascending coalition order over proper nonempty coalitions.
pub fn coalition_specific_punishments(
    g: &StageGame,
    u_grand: &[Q],
    eps: Option<&Q>,
) -> Result<Vec<(Coalition, Vec<Q>)>> {
    let n = g.n();
    if u_grand.len() != n {
        return Err(Error::InvalidInput("target vector length mismatch".into()));
    }
    if !crate::sets::beta_core_membership(g, u_grand, true, true) {
        return Err(Error::NotInSet {
            set: "strict efficient deviation-proof set".into(),
            detail: fmt_vec(u_grand),
        });
    }
    let coalitions: Vec<Coalition> = proper_coalitions(n).collect();
    let slack = coalitions
        .iter()
        .map(|&c| {
            let bound = minmax::efficient_coalitional_minmax(g, c).value;
            c.members().map(|i| u_grand[i].clone()).sum::<Q>() - bound
        })
        .min()
        .expect("at least one proper coalition");
    let mut epsilon = match eps {
        Some(e) => {
            if !e.is_positive() {
                return Err(Error::InvalidInput("epsilon must be positive".into()));
            }
            e.clone()
        }
        None => slack,
    };
    for _ in 0..200 {
        let family: Vec<(Coalition, Vec<Q>)> = coalitions
            .iter()
            .map(|&c| {
                let lose = &epsilon / qi(c.len() as i64);
                let gain = &epsilon / qi((n - c.len()) as i64);
                let u: Vec<Q> = (0..n)
                    .map(|i| {
                        if c.contains(i) {
                            &u_grand[i] - &lose
                        } else {
                            &u_grand[i] + &gain
                        }
                    })
                    .collect();
                (c, u)
            })
            .collect();
        if family
            .iter()
            .all(|(_, u)| crate::sets::beta_core_membership(g, u, true, true))
        {
            return Ok(family);
        }
        epsilon /= qi(2);
    }
    Err(Error::NoPunishments(
        "epsilon halving exhausted without strict deviation-proof vectors".into(),
    ))
}

/// Blocks matching this guard are ignored (treated as compliance): the
/// named player's experienced payoff fell strictly below the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversionGuard {
    pub player: PlayerId,
    #[serde(with = "crate::rat::qserde")]
    pub threshold: Q,
}

/// Two-state convention: play `path` until some coalition blocks, then
/// recommend a stage-core alternative forever. An optional guard ignores
/// blocks that already hurt the guarded player.
pub fn core_reversion_convention(
    g: &StageGame,
    path: Outcome,
    core_alternative: usize,
    guard: Option<ReversionGuard>,
) -> Result<ConventionAutomaton> {
    if !path.blockers.is_empty() {
        return Err(Error::InvalidInput("path outcome must be unblocked".into()));
    }
    if path.alt >= g.num_alternatives() || core_alternative >= g.num_alternatives() {
        return Err(Error::InvalidInput("alternative out of range".into()));
    }
    if let Some(t) = &path.transfers {
        t.validate()?;
        if t.n() != g.n() {
            return Err(Error::InvalidInput("transfer matrix size mismatch".into()));
        }
        if !g.transfer_mode.has_transfers() && !t.is_zero() {
            return Err(Error::InvalidInput(
                "nonzero transfers in a regime without transfers".into(),
            ));
        }
    }
    if !crate::sets::stage_core(g).contains(&core_alternative) {
        return Err(Error::NotInSet {
            set: "stage core".into(),
            detail: g.alternatives[core_alternative].label.clone(),
        });
    }
    let mut path_rules = Vec::new();
    if let Some(gd) = &guard {
        if gd.player >= g.n() {
            return Err(Error::InvalidInput("guard references unknown player".into()));
        }
        // threshold - u_player > 0, i.e. the block already hurt the player.
        path_rules.push(TransitionRule {
            pattern: OutcomePattern::Blocked {
                coalitions: None,
                alternatives: None,
                guard: Some(TransferGuard {
                    payoff_terms: vec![(gd.player, -Q::one())],
                    transfer_terms: vec![],
                    constant: gd.threshold.clone(),
                    strict: true,
                }),
            },
            next: 0,
        });
    }
    path_rules.push(TransitionRule {
        pattern: OutcomePattern::Blocked { coalitions: None, alternatives: None, guard: None },
        next: 1,
    });
    path_rules.push(TransitionRule { pattern: OutcomePattern::Any, next: 0 });
    let aut = ExplicitAutomaton {
        states: vec![
            ExplicitState { label: "path".into(), output: path, rules: path_rules },
            ExplicitState {
                label: "core".into(),
                output: Outcome::unblocked(core_alternative),
                rules: vec![TransitionRule { pattern: OutcomePattern::Any, next: 1 }],
            },
        ],
        initial: 0,
    };
    aut.validate(g)?;
    Ok(ConventionAutomaton::Explicit(aut))
}

pub mod fixtures {
    //! Hand-written reference conventions used across tests.

    use super::*;
    use crate::game::fixtures::{g_room, ROOM_AB, ROOM_AC, ROOM_BC};

    /// Stationary matching convention on the three-player room game: states
    /// track the current match, and a block exiles the blocker who broke an
    /// existing match (smallest index on ties; an unmatched lone blocker is
    /// "punished" by keeping the current match).
    ///
    /// State k excludes one player: state 0 = AB matched (C out),
    /// 1 = AC (B out), 2 = BC (A out). Exiling player p moves to the state
    /// where p is the excluded one.
    pub fn room_matching_convention() -> ConventionAutomaton {
        let g = g_room();
        let matched = [(0usize, 1usize), (0, 2), (1, 2)];
        let alts = [ROOM_AB, ROOM_AC, ROOM_BC];
        let state_excluding = |p: usize| -> usize {
            match p {
                0 => 2, // BC stands when Alice is exiled
                1 => 1, // AC when Bob is exiled
                _ => 0, // AB when Carol is exiled
            }
        };
        let mut states = Vec::new();
        for k in 0..3 {
            let (ma, mb) = matched[k];
            let mut rules = Vec::new();
            for c in proper_coalitions(3).chain(std::iter::once(Coalition::all(3))) {
                if c.is_empty() {
                    continue;
                }
                // Exile the smallest-index blocker whose match broke; a
                // blocking set with no matched member keeps the status quo
                // by exiling its own (already unmatched) smallest member.
                let broke: Vec<usize> =
                    c.members().filter(|&j| j == ma || j == mb).collect();
                let target = match broke.first() {
                    Some(&j) => j,
                    None => c.min_member(),
                };
                rules.push(TransitionRule {
                    pattern: OutcomePattern::Blocked {
                        coalitions: Some(vec![c]),
                        alternatives: None,
                        guard: None,
                    },
                    next: state_excluding(target),
                });
            }
            rules.push(TransitionRule { pattern: OutcomePattern::Any, next: k });
            states.push(ExplicitState {
                label: g.alternatives[alts[k]].label.clone(),
                output: Outcome::unblocked(alts[k]),
                rules,
            });
        }
        let aut = ExplicitAutomaton { states, initial: 0 };
        aut.validate(&g).expect("fixture automaton is well formed");
        ConventionAutomaton::Explicit(aut)
    }
}
