//! Folk-theorem constructions: assemble a phase automaton supporting a
//! chosen payoff vector under each monitoring regime, then certify it with
//! the matching verifier at the requested discount factor.
//!
//! All four builders share one recipe: a target phase, one reward phase per
//! punished scope, and punishment segments holding a deviator to a minmax
//! alternative before releasing into the scope's reward phase. Parameters
//! come in layers: a punishment reward family around the target, the phase
//! weight kappa from the regime's inequality system, and (where phases are
//! genuine sequences) the approximation radius epsilon for the vertex
//! decompositions. The working discount threshold has no closed form, so
//! candidate parameterizations are built and checked directly, escalating
//! kappa and epsilon until the verifier accepts or the ladder runs out.

use crate::conventions::{
    coalition_specific_punishments, continuation_values, decompose_payoff_sequence,
    kappa_threshold, player_specific_punishments, punishment_length, ConventionAutomaton,
    FolkAutomaton, FolkParameters, KappaSystem, OutcomeStep, Phase, PhaseTag, PunishmentSpec,
    StateId, VertexSequence,
};
use crate::error::{Error, Result};
use crate::game::{Coalition, StageGame, TransferMatrix, TransferMode};
use crate::minmax::{
    coalitional_minmax, efficient_alternatives, efficient_coalitional_minmax, individual_minmax,
    individual_minmaxes, max_total, min_total,
};
use crate::rat::{fmt_q, fmt_vec, q, qi, Q};
use crate::sets::{
    beta_core_membership, characteristic_from_game, feasible_membership_ntu,
    s_rational_membership, strict_balanced_emptiness, tu_feasible_ir_membership,
    BalancednessOutcome, CharacteristicMode,
};
use crate::stability::{verify_ntu, verify_tupm, verify_tupt, Verdict};
use num::{One, Signed, Zero};

/// One entry of the transfer-regime vertex menu: an implementable payoff
/// vector together with the recommendation realizing it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct MenuVertex {
    pub payoff: Vec<Q>,
    pub step: OutcomeStep,
}

/// A certified folk construction: the automaton, the parameters it settled
/// on, and the punishment data behind them.
#[derive(Clone, Debug)]
pub struct FolkBuild {
    pub automaton: ConventionAutomaton,
    pub params: FolkParameters,
    /// Reward vector per punished scope, in punishment-list order.
    pub punishment_payoffs: Vec<(Coalition, Vec<Q>)>,
    /// Minmaxing alternative per punished scope, in punishment-list order.
    pub minmax_alternatives: Vec<(Coalition, usize)>,
    /// Exact sup-norm distance between the target and the value delivered
    /// at the automaton's initial state.
    pub target_defect: Q,
}

/// Builds and certifies a folk automaton for `target` at `delta`. The
/// regime must match the game's transfer mode; the secrecy structure of a
/// partially secret game is read off the game itself.
pub fn build_folk_automaton(
    g: &StageGame,
    target: &[Q],
    delta: &Q,
    regime: TransferMode,
) -> Result<FolkBuild> {
    if regime != g.transfer_mode {
        return Err(Error::InvalidInput(
            "requested regime does not match the game's transfer mode".into(),
        ));
    }
    if target.len() != g.n() {
        return Err(Error::InvalidInput("target vector length mismatch".into()));
    }
    if *delta <= Q::zero() || *delta >= Q::one() {
        return Err(Error::InvalidInput("discount factor must lie in (0,1)".into()));
    }
    match regime {
        TransferMode::Ntu => build_ntu(g, target, delta),
        TransferMode::TuPublic => build_public(g, target, delta),
        TransferMode::TuSecret => build_secret(g, target, delta),
        TransferMode::TuPartial => build_partial(g, target, delta),
    }
}

/// Vertex menu for transfer regimes: corners of the region bounded below by
/// the individual minmax floors and between the smallest and largest stage
/// totals, each projected along the uniform direction onto both total
/// planes. Every entry is realizable exactly at a total-extremal
/// alternative with nonnegative transfers, and the convex hull of the menu
/// covers the whole region.
pub fn tupm_vertex_menu(g: &StageGame) -> Result<Vec<MenuVertex>> {
    if !g.transfer_mode.has_transfers() {
        return Err(Error::Unsupported("the vertex menu needs a game with transfers".into()));
    }
    let n = g.n();
    let floors = individual_minmaxes(g);
    let smax = max_total(g);
    let smin = min_total(g);
    let floor_sum = floors.iter().fold(Q::zero(), |a, b| a + b);
    if floor_sum > smax {
        return Err(Error::EmptySet { set: "feasible individually rational band".into() });
    }
    let a_max = (0..g.num_alternatives())
        .find(|&a| g.total_payoff(a) == smax)
        .expect("max total is attained");
    let a_min = (0..g.num_alternatives())
        .find(|&a| g.total_payoff(a) == smin)
        .expect("min total is attained");

    // Corners of the region: all floors binding (when the floor point
    // clears the lower plane), otherwise its lift onto the lower plane
    // coordinate by coordinate, plus the lifts onto the upper plane.
    let mut bases: Vec<Vec<Q>> = Vec::new();
    if floor_sum >= smin {
        bases.push(floors.clone());
    } else {
        for j in 0..n {
            let mut v = floors.clone();
            v[j] += &smin - &floor_sum;
            bases.push(v);
        }
    }
    if smax > floor_sum {
        for j in 0..n {
            let mut v = floors.clone();
            v[j] += &smax - &floor_sum;
            bases.push(v);
        }
    }

    let planes: Vec<(Q, usize)> = if smax == smin {
        vec![(smax.clone(), a_max)]
    } else {
        vec![(smax.clone(), a_max), (smin.clone(), a_min)]
    };
    let nq = qi(n as i64);
    let mut menu: Vec<MenuVertex> = Vec::new();
    for base in &bases {
        let base_total = base.iter().fold(Q::zero(), |a, b| a + b);
        for (s, alt) in &planes {
            let shift = (s - &base_total) / &nq;
            let u: Vec<Q> = base.iter().map(|x| x + &shift).collect();
            if menu.iter().any(|m| m.payoff == u) {
                continue;
            }
            let step = realize_at(g, *alt, &u)?;
            menu.push(MenuVertex { payoff: u, step });
        }
    }
    Ok(menu)
}

/// Recommendation realizing `u` at `alt` by routing every imbalance through
/// player 0: anyone below their intended payoff is owed by the hub, anyone
/// above owes the hub. Totals must match, which keeps the hub balanced and
/// every entry nonnegative.
fn realize_at(g: &StageGame, alt: usize, u: &[Q]) -> Result<OutcomeStep> {
    let n = g.n();
    let flow_total = g.total_payoff(alt);
    let u_total = u.iter().fold(Q::zero(), |a, b| a + b);
    if flow_total != u_total {
        return Err(Error::InvalidInput(format!(
            "cannot realize {} at an alternative totalling {}",
            fmt_vec(u),
            fmt_q(&flow_total)
        )));
    }
    let mut t = TransferMatrix::zero(n);
    let mut any = false;
    for i in 1..n {
        let d = &u[i] - g.payoff(i, alt);
        if d.is_positive() {
            t.set(0, i, d);
            any = true;
        } else if d.is_negative() {
            t.set(i, 0, -d);
            any = true;
        }
    }
    debug_assert_eq!(g.experienced_profile(alt, Some(&t)), u);
    Ok(OutcomeStep { alt, transfers: if any { Some(t) } else { None } })
}

const KAPPA_GRID: i64 = 1024;

/// Candidate kappas: the grid minimum, then lifts by a growing share of the
/// remaining gap to 1, rounded up to the grid. The inequalities are affine
/// in kappa and strict at both the minimum and 1, so every rung is valid.
fn kappa_ladder(kappa_min: &Q) -> Vec<Q> {
    let mut out = vec![kappa_min.clone()];
    let gap = Q::one() - kappa_min;
    for (num, den) in [(1i64, 4i64), (1, 2), (3, 4), (7, 8), (15, 16)] {
        let raw = kappa_min + &gap * q(num, den);
        let snapped = (&raw * qi(KAPPA_GRID)).ceil() / qi(KAPPA_GRID);
        let snapped =
            if snapped >= Q::one() { q(KAPPA_GRID - 1, KAPPA_GRID) } else { snapped };
        if snapped > *out.last().expect("ladder starts nonempty") {
            out.push(snapped);
        }
    }
    out
}

/// Epsilon ladder for sequence phases: start at half the inequality slack
/// cap (1-kappa) * margin, double while the decomposition keeps failing,
/// and finish just under the margin itself. High rungs exceed the
/// conservative sufficient cap; the verifier has the final word on each.
fn seq_ladder(margin: Q) -> impl Fn(&Q) -> Vec<Q> {
    move |kappa: &Q| {
        let cap = (Q::one() - kappa) * &margin;
        let mut eps = cap / qi(2);
        let mut out = Vec::new();
        while eps <= margin {
            out.push(eps.clone());
            eps *= qi(2);
        }
        let brim = &margin * q(15, 16);
        if out.last().map_or(true, |l| *l < brim) {
            out.push(brim);
        }
        out
    }
}

/// Constant phases have nothing to approximate; the recorded epsilon is the
/// family's split parameter.
fn fixed_ladder(eps: Q) -> impl Fn(&Q) -> Vec<Q> {
    move |_: &Q| vec![eps.clone()]
}

/// Smallest slack in the per-player inequality system at kappa = 1: the
/// punished player's own margin over their floor, and everyone's margin in
/// someone else's reward phase over their own. Positive whenever the kappa
/// search succeeded.
fn per_player_margin(rewards: &[Vec<Q>], floors: &[Q]) -> Q {
    let n = rewards.len();
    let mut min: Option<Q> = None;
    for i in 0..n {
        for j in 0..n {
            let d = if j == i {
                &rewards[i][i] - &floors[i]
            } else {
                &rewards[j][i] - &rewards[i][i]
            };
            if min.as_ref().map_or(true, |m| d < *m) {
                min = Some(d);
            }
        }
    }
    min.expect("at least one player")
}

fn run_verifier(aut: &ConventionAutomaton, g: &StageGame, delta: &Q) -> Result<Verdict> {
    match g.transfer_mode {
        TransferMode::Ntu => verify_ntu(aut, g, delta),
        TransferMode::TuPublic => verify_tupm(aut, g, delta),
        TransferMode::TuSecret | TransferMode::TuPartial => verify_tupt(aut, g, delta, None),
    }
}

/// Walks the kappa ladder, assembling and verifying a candidate at each
/// rung. Decomposition failures escalate epsilon within the rung; an
/// unstable verdict moves to the next rung, since a looser epsilon cannot
/// change the sequences. The last failure is reported when nothing
/// certifies.
fn certify<E, F>(
    g: &StageGame,
    delta: &Q,
    kappa_min: &Q,
    epsilons: E,
    mut assemble: F,
) -> Result<ConventionAutomaton>
where
    E: Fn(&Q) -> Vec<Q>,
    F: FnMut(&Q, usize, &Q) -> Result<FolkAutomaton>,
{
    let trace = std::env::var_os("REPCOAL_TRACE").is_some();
    let mut last = String::from("no parameterization was attempted");
    for kappa in kappa_ladder(kappa_min) {
        let len = punishment_length(delta, &kappa)? as usize;
        for eps in epsilons(&kappa) {
            let t0 = std::time::Instant::now();
            match assemble(&kappa, len, &eps) {
                Ok(fa) => {
                    let aut = ConventionAutomaton::Folk(fa);
                    if trace {
                        eprintln!(
                            "certify: kappa={} len={} eps={} assembled in {:?}",
                            fmt_q(&kappa),
                            len,
                            fmt_q(&eps),
                            t0.elapsed()
                        );
                    }
                    let t1 = std::time::Instant::now();
                    let verdict = run_verifier(&aut, g, delta)?;
                    if trace {
                        eprintln!("certify: verified in {:?}: {:?}", t1.elapsed(), {
                            match &verdict {
                                Verdict::Stable => "stable".to_string(),
                                Verdict::Unstable(w) => w.state_label.clone(),
                            }
                        });
                    }
                    match verdict {
                        Verdict::Stable => return Ok(aut),
                        Verdict::Unstable(w) => {
                            last = format!(
                                "a profitable deviation survives at state {} (coalition {}, \
                                 alternative {})",
                                w.state_label,
                                w.coalition.label(g),
                                g.alternatives[w.alternative].label,
                            );
                            break;
                        }
                    }
                }
                Err(Error::DeltaTooSmall(m)) => {
                    if trace {
                        eprintln!(
                            "certify: kappa={} len={} eps={} rejected in {:?}: {}",
                            fmt_q(&kappa),
                            len,
                            fmt_q(&eps),
                            t0.elapsed(),
                            m
                        );
                    }
                    last = m;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Err(Error::DeltaTooSmall(format!(
        "no parameterization certified at delta {}: {}",
        fmt_q(delta),
        last
    )))
}

fn phase_from_sequence<F: Fn(usize) -> OutcomeStep>(
    tag: PhaseTag,
    target: &[Q],
    seq: &VertexSequence,
    step: F,
) -> Phase {
    Phase {
        tag,
        target: target.to_vec(),
        steps: seq.steps.iter().map(|&m| step(m)).collect(),
        prefix_len: seq.prefix_len,
    }
}

fn constant_phase(tag: PhaseTag, target: &[Q], step: OutcomeStep) -> Phase {
    Phase { tag, target: target.to_vec(), steps: vec![step], prefix_len: 0 }
}

fn finish(
    g: &StageGame,
    delta: &Q,
    aut: ConventionAutomaton,
    punishment_payoffs: Vec<(Coalition, Vec<Q>)>,
    minmax_alternatives: Vec<(Coalition, usize)>,
    target: &[Q],
) -> Result<FolkBuild> {
    let (params, init) = match &aut {
        ConventionAutomaton::Folk(f) => {
            (f.params.clone(), StateId::Normal { phase: f.initial_phase, tau: 0 })
        }
        ConventionAutomaton::Explicit(_) => unreachable!("folk builds produce folk automata"),
    };
    let vals = continuation_values(&aut, g, delta)?;
    let mut defect = Q::zero();
    for (t, v) in target.iter().zip(&vals[&init]) {
        let d = (t - v).abs();
        if d > defect {
            defect = d;
        }
    }
    Ok(FolkBuild {
        automaton: aut,
        params,
        punishment_payoffs,
        minmax_alternatives,
        target_defect: defect,
    })
}

/// Transfer-free construction: reward phases decompose the target and each
/// player's reward vector over the pure stage payoffs, punishments hold the
/// deviator to their minmax alternative.
fn build_ntu(g: &StageGame, target: &[Q], delta: &Q) -> Result<FolkBuild> {
    let n = g.n();
    if !feasible_membership_ntu(g, target, true) {
        return Err(Error::NotInSet {
            set: "feasible strictly individually rational set".into(),
            detail: fmt_vec(target),
        });
    }
    let floors = individual_minmaxes(g);
    let rewards = player_specific_punishments(g, target, None)?;
    let alts: Vec<usize> =
        (0..n).map(|i| individual_minmax(g, i).minimizing_alternative).collect();
    let kappa_min =
        kappa_threshold(g, &KappaSystem::PerPlayer { punishments: &rewards, alts: &alts })?;
    let margin = per_player_margin(&rewards, &floors);
    let vertices: Vec<Vec<Q>> =
        (0..g.num_alternatives()).map(|a| g.payoffs(a).to_vec()).collect();
    let pure = |m: usize| OutcomeStep { alt: m, transfers: None };

    let aut = certify(g, delta, &kappa_min, seq_ladder(margin), |kappa, len, eps| {
        let mut phases = vec![phase_from_sequence(
            PhaseTag::Target,
            target,
            &decompose_payoff_sequence(&vertices, target, delta, eps)?,
            pure,
        )];
        for (i, v) in rewards.iter().enumerate() {
            phases.push(phase_from_sequence(
                PhaseTag::RewardPlayer(i),
                v,
                &decompose_payoff_sequence(&vertices, v, delta, eps)?,
                pure,
            ));
        }
        Ok(FolkAutomaton {
            regime: TransferMode::Ntu,
            protected: Vec::new(),
            phases,
            initial_phase: 0,
            punishments: (0..n)
                .map(|i| PunishmentSpec {
                    scope: Coalition::singleton(i),
                    alt: alts[i],
                    resume_phase: i + 1,
                })
                .collect(),
            params: FolkParameters {
                delta: delta.clone(),
                kappa: kappa.clone(),
                punish_len: len,
                epsilon: eps.clone(),
                target: target.to_vec(),
            },
            floors: floors.clone(),
        })
    })?;
    let payoffs = (0..n).map(|i| (Coalition::singleton(i), rewards[i].clone())).collect();
    let min_alts = (0..n).map(|i| (Coalition::singleton(i), alts[i])).collect();
    finish(g, delta, aut, payoffs, min_alts, target)
}

/// Public-transfer construction: phases decompose over the vertex menu, so
/// every recommended transfer matrix comes from the menu's realizations.
fn build_public(g: &StageGame, target: &[Q], delta: &Q) -> Result<FolkBuild> {
    let n = g.n();
    if !tu_feasible_ir_membership(g, target, true) {
        return Err(Error::NotInSet {
            set: "feasible strictly individually rational band".into(),
            detail: fmt_vec(target),
        });
    }
    let floors = individual_minmaxes(g);
    // Split choice balancing the two binding slacks: the punished player's
    // own margin shrinks with eps while the cross margin grows with
    // eps n / (n - 1); equating them maximizes the smaller one.
    let g_min = (0..n)
        .map(|i| &target[i] - &floors[i])
        .min()
        .expect("at least one player");
    let eps_star = g_min * qi(n as i64 - 1) / qi(2 * n as i64 - 1);
    let trace = std::env::var_os("REPCOAL_TRACE").is_some();
    let rewards = player_specific_punishments(g, target, Some(&eps_star))?;
    if trace {
        eprintln!("build_public: rewards done");
    }
    let alts: Vec<usize> =
        (0..n).map(|i| individual_minmax(g, i).minimizing_alternative).collect();
    let kappa_min =
        kappa_threshold(g, &KappaSystem::PerPlayer { punishments: &rewards, alts: &alts })?;
    if trace {
        eprintln!("build_public: kappa_min={}", fmt_q(&kappa_min));
    }
    let margin = per_player_margin(&rewards, &floors);
    let menu = tupm_vertex_menu(g)?;
    if trace {
        eprintln!("build_public: menu of {} vertices", menu.len());
    }
    let verts: Vec<Vec<Q>> = menu.iter().map(|m| m.payoff.clone()).collect();
    let from_menu = |m: usize| menu[m].step.clone();

    let aut = certify(g, delta, &kappa_min, seq_ladder(margin), |kappa, len, eps| {
        if trace {
            eprintln!("assemble: eps={}", fmt_q(eps));
        }
        let mut phases = vec![phase_from_sequence(
            PhaseTag::Target,
            target,
            &decompose_payoff_sequence(&verts, target, delta, eps)?,
            from_menu,
        )];
        if trace {
            eprintln!("assemble: target phase {} steps", phases[0].steps.len());
        }
        for (i, v) in rewards.iter().enumerate() {
            phases.push(phase_from_sequence(
                PhaseTag::RewardPlayer(i),
                v,
                &decompose_payoff_sequence(&verts, v, delta, eps)?,
                from_menu,
            ));
        }
        Ok(FolkAutomaton {
            regime: TransferMode::TuPublic,
            protected: Vec::new(),
            phases,
            initial_phase: 0,
            punishments: (0..n)
                .map(|i| PunishmentSpec {
                    scope: Coalition::singleton(i),
                    alt: alts[i],
                    resume_phase: i + 1,
                })
                .collect(),
            params: FolkParameters {
                delta: delta.clone(),
                kappa: kappa.clone(),
                punish_len: len,
                epsilon: eps.clone(),
                target: target.to_vec(),
            },
            floors: floors.clone(),
        })
    })?;
    let payoffs = (0..n).map(|i| (Coalition::singleton(i), rewards[i].clone())).collect();
    let min_alts = (0..n).map(|i| (Coalition::singleton(i), alts[i])).collect();
    finish(g, delta, aut, payoffs, min_alts, target)
}

/// Fully secret construction: one constant phase per proper coalition, each
/// realized exactly on the efficient plane, with punishments at efficient
/// minmax alternatives so that no state ever leaves the plane.
fn build_secret(g: &StageGame, target: &[Q], delta: &Q) -> Result<FolkBuild> {
    if !beta_core_membership(g, target, true, true) {
        let phi = characteristic_from_game(g, &CharacteristicMode::EfficientBeta);
        return Err(match strict_balanced_emptiness(&phi)? {
            BalancednessOutcome::Empty { .. } => {
                Error::EmptySet { set: "strict efficient deviation-proof set".into() }
            }
            BalancednessOutcome::NonEmpty => Error::NotInSet {
                set: "strict efficient deviation-proof set".into(),
                detail: fmt_vec(target),
            },
        });
    }
    let families = coalition_specific_punishments(g, target, None)?;
    let coalitions: Vec<Coalition> = families.iter().map(|(c, _)| *c).collect();
    let rewards: Vec<Vec<Q>> = families.iter().map(|(_, u)| u.clone()).collect();
    let alts: Vec<usize> = coalitions
        .iter()
        .map(|&c| efficient_coalitional_minmax(g, c).minimizing_alternative)
        .collect();
    let kappa_min = kappa_threshold(
        g,
        &KappaSystem::PerCoalition {
            coalitions: &coalitions,
            punishments: &rewards,
            alts: &alts,
            efficient: true,
        },
    )?;
    // The family splits one epsilon around the target; recover it from the
    // first coalition's loss.
    let eps_family = coalitions[0]
        .members()
        .map(|i| &target[i] - &rewards[0][i])
        .fold(Q::zero(), |a, b| a + b);
    let floors = individual_minmaxes(g);
    let a_eff = efficient_alternatives(g)[0];

    let aut = certify(g, delta, &kappa_min, fixed_ladder(eps_family), |kappa, len, eps| {
        let mut phases =
            vec![constant_phase(PhaseTag::Target, target, realize_at(g, a_eff, target)?)];
        for (k, &c) in coalitions.iter().enumerate() {
            phases.push(constant_phase(
                PhaseTag::RewardCoalition(c),
                &rewards[k],
                realize_at(g, a_eff, &rewards[k])?,
            ));
        }
        Ok(FolkAutomaton {
            regime: TransferMode::TuSecret,
            protected: Vec::new(),
            phases,
            initial_phase: 0,
            punishments: coalitions
                .iter()
                .enumerate()
                .map(|(k, &c)| PunishmentSpec { scope: c, alt: alts[k], resume_phase: k + 1 })
                .collect(),
            params: FolkParameters {
                delta: delta.clone(),
                kappa: kappa.clone(),
                punish_len: len,
                epsilon: eps.clone(),
                target: target.to_vec(),
            },
            floors: floors.clone(),
        })
    })?;
    let min_alts = coalitions.iter().copied().zip(alts).collect();
    finish(g, delta, aut, families, min_alts, target)
}

/// Coalition-keyed rewards inside the strict scoped-rational set: members
/// of the punished scope share an epsilon loss, outsiders share the gain,
/// halving epsilon until every vector stays strictly inside.
fn s_rational_punishments(
    g: &StageGame,
    shat: &[Coalition],
    target: &[Q],
) -> Result<Vec<(Coalition, Vec<Q>)>> {
    let n = g.n();
    let slack = shat
        .iter()
        .map(|&c| {
            let bound = coalitional_minmax(g, c).value;
            c.members().map(|i| target[i].clone()).fold(Q::zero(), |a, b| a + b) - bound
        })
        .min()
        .expect("scope list is nonempty");
    if !slack.is_positive() {
        return Err(Error::NoPunishments(
            "target has no strict slack over the scoped coalition bounds".into(),
        ));
    }
    let mut epsilon = slack;
    for _ in 0..200 {
        let family: Vec<(Coalition, Vec<Q>)> = shat
            .iter()
            .map(|&c| {
                let lose = &epsilon / qi(c.len() as i64);
                let gain = &epsilon / qi((n - c.len()) as i64);
                let u: Vec<Q> = (0..n)
                    .map(|i| {
                        if c.contains(i) {
                            &target[i] - &lose
                        } else {
                            &target[i] + &gain
                        }
                    })
                    .collect();
                (c, u)
            })
            .collect();
        if family
            .iter()
            .all(|(_, u)| s_rational_membership(g, shat, u, true).construction_member())
        {
            return Ok(family);
        }
        epsilon /= qi(2);
    }
    Err(Error::NoPunishments(
        "epsilon halving exhausted without strictly rational vectors".into(),
    ))
}

/// Partially secret construction: punished scopes are the declared secret
/// coalitions plus all singletons, each with a constant reward phase on the
/// efficient plane; the declared proper non-singletons become the
/// automaton's protected set.
fn build_partial(g: &StageGame, target: &[Q], delta: &Q) -> Result<FolkBuild> {
    let n = g.n();
    let grand = g.grand();
    for c in &g.secret_coalitions {
        if c.is_empty() || !c.is_subset_of(grand) {
            return Err(Error::InvalidInput("secret coalition out of range".into()));
        }
    }
    if g.secret_coalitions.contains(&grand) {
        // A secret grand coalition claims every surplus in one block; no
        // strict bound can hold against it.
        return Err(Error::EmptySet { set: "strict scoped-rational set".into() });
    }
    let mut shat: Vec<Coalition> = (0..n).map(Coalition::singleton).collect();
    for &c in &g.secret_coalitions {
        if !shat.contains(&c) {
            shat.push(c);
        }
    }
    shat.sort();
    let total = target.iter().fold(Q::zero(), |a, b| a + b);
    if total != max_total(g)
        || !s_rational_membership(g, &shat, target, true).construction_member()
    {
        return Err(Error::NotInSet {
            set: "efficient strict scoped-rational set".into(),
            detail: fmt_vec(target),
        });
    }
    let families = s_rational_punishments(g, &shat, target)?;
    let coalitions: Vec<Coalition> = families.iter().map(|(c, _)| *c).collect();
    let rewards: Vec<Vec<Q>> = families.iter().map(|(_, u)| u.clone()).collect();
    let alts: Vec<usize> =
        coalitions.iter().map(|&c| coalitional_minmax(g, c).minimizing_alternative).collect();
    let kappa_min = kappa_threshold(
        g,
        &KappaSystem::PerCoalition {
            coalitions: &coalitions,
            punishments: &rewards,
            alts: &alts,
            efficient: false,
        },
    )?;
    let eps_family = coalitions[0]
        .members()
        .map(|i| &target[i] - &rewards[0][i])
        .fold(Q::zero(), |a, b| a + b);
    let protected: Vec<Coalition> =
        coalitions.iter().copied().filter(|c| c.len() > 1).collect();
    let floors = individual_minmaxes(g);
    let a_eff = efficient_alternatives(g)[0];

    let aut = certify(g, delta, &kappa_min, fixed_ladder(eps_family), |kappa, len, eps| {
        let mut phases =
            vec![constant_phase(PhaseTag::Target, target, realize_at(g, a_eff, target)?)];
        for (k, &c) in coalitions.iter().enumerate() {
            phases.push(constant_phase(
                PhaseTag::RewardCoalition(c),
                &rewards[k],
                realize_at(g, a_eff, &rewards[k])?,
            ));
        }
        Ok(FolkAutomaton {
            regime: TransferMode::TuPartial,
            protected: protected.clone(),
            phases,
            initial_phase: 0,
            punishments: coalitions
                .iter()
                .enumerate()
                .map(|(k, &c)| PunishmentSpec { scope: c, alt: alts[k], resume_phase: k + 1 })
                .collect(),
            params: FolkParameters {
                delta: delta.clone(),
                kappa: kappa.clone(),
                punish_len: len,
                epsilon: eps.clone(),
                target: target.to_vec(),
            },
            floors: floors.clone(),
        })
    })?;
    let min_alts = coalitions.iter().copied().zip(alts).collect();
    finish(g, delta, aut, families, min_alts, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::{g_div3, g_free_split, g_pd, g_room};
    use crate::rat::parse_q;

    fn qv(s: &str) -> Vec<Q> {
        s.split(',').map(|t| parse_q(t).unwrap()).collect()
    }

    fn folk(aut: &ConventionAutomaton) -> &FolkAutomaton {
        match aut {
            ConventionAutomaton::Folk(f) => f,
            ConventionAutomaton::Explicit(_) => panic!("expected a folk automaton"),
        }
    }

    #[test]
    fn pd_menu_matches_the_pinned_vertices() {
        let menu = tupm_vertex_menu(&g_pd(TransferMode::TuPublic)).unwrap();
        let payoffs: Vec<Vec<Q>> = menu.iter().map(|m| m.payoff.clone()).collect();
        let expected =
            vec![qv("2,2"), qv("1,1"), qv("3,1"), qv("2,0"), qv("1,3"), qv("0,2")];
        assert_eq!(payoffs, expected);
        // (2,2) and (1,1) are pure; the rest move one unit through the hub.
        assert!(menu[0].step.transfers.is_none());
        assert_eq!(menu[0].step.alt, 0);
        assert!(menu[1].step.transfers.is_none());
        assert_eq!(menu[1].step.alt, 3);
        let t31 = menu[2].step.transfers.as_ref().unwrap();
        assert_eq!(*t31.get(1, 0), qi(1));
        assert!(t31.get(0, 1).is_zero());
        assert_eq!(menu[3].step.alt, 3);
        let t20 = menu[3].step.transfers.as_ref().unwrap();
        assert_eq!(*t20.get(1, 0), qi(1));
        let t02 = menu[5].step.transfers.as_ref().unwrap();
        assert_eq!(*t02.get(0, 1), qi(1));
    }

    #[test]
    fn room_target_builds_and_verifies_without_transfers() {
        let g = g_room();
        let b =
            build_folk_automaton(&g, &qv("2,2,2"), &q(19, 20), TransferMode::Ntu).unwrap();
        assert!(b.target_defect < q(1, 1i64 << 30), "defect {}", fmt_q(&b.target_defect));
        let f = folk(&b.automaton);
        assert_eq!(f.phases.len(), 4);
        assert_eq!(f.phases[0].tag, PhaseTag::Target);
        assert_eq!(f.floors, qv("1,1,1"));
        assert_eq!(f.punishments.len(), 3);
        for (i, p) in f.punishments.iter().enumerate() {
            assert_eq!(p.scope, Coalition::singleton(i));
            assert_eq!(p.resume_phase, i + 1);
        }
        for phase in &f.phases {
            assert!(phase.steps.iter().all(|s| s.transfers.is_none()));
        }
        // Reward phases stay within the epsilon ball around their targets.
        let vals = continuation_values(&b.automaton, &g, &q(19, 20)).unwrap();
        for (s, v) in &vals {
            if let StateId::Normal { phase, .. } = s {
                let t = &f.phases[*phase].target;
                let dist = v
                    .iter()
                    .zip(t)
                    .map(|(a, b)| (a - b).abs())
                    .fold(Q::zero(), |acc, d| if d > acc { d } else { acc });
                assert!(dist <= f.params.epsilon, "phase ball violated: {}", fmt_q(&dist));
            }
        }
    }

    #[test]
    fn pd_target_builds_and_verifies_with_public_transfers() {
        let g = g_pd(TransferMode::TuPublic);
        let target = qv("5/2,6/5");
        let b = build_folk_automaton(&g, &target, &q(97, 100), TransferMode::TuPublic).unwrap();
        assert!(b.target_defect < q(1, 1i64 << 30), "defect {}", fmt_q(&b.target_defect));
        let f = folk(&b.automaton);
        // Rewards follow the split formula: the punished player gives up
        // the same amount the other receives, totals conserved.
        for (i, (scope, u)) in b.punishment_payoffs.iter().enumerate() {
            assert_eq!(*scope, Coalition::singleton(i));
            assert_eq!(
                u.iter().fold(Q::zero(), |a, x| a + x),
                target.iter().fold(Q::zero(), |a, x| a + x)
            );
            assert!(u[i] < target[i]);
            assert!(u[1 - i] > target[1 - i]);
            assert_eq!(&target[i] - &u[i], &u[1 - i] - &target[1 - i]);
        }
        // Every recommended step comes from the vertex menu.
        let menu = tupm_vertex_menu(&g).unwrap();
        for phase in &f.phases {
            for s in &phase.steps {
                assert!(menu.iter().any(|m| m.step == *s), "step outside the menu");
            }
        }
        // Reward phases stay within the epsilon ball around their targets.
        let vals = continuation_values(&b.automaton, &g, &q(97, 100)).unwrap();
        for (s, v) in &vals {
            if let StateId::Normal { phase, .. } = s {
                let t = &f.phases[*phase].target;
                let dist = v
                    .iter()
                    .zip(t)
                    .map(|(a, b)| (a - b).abs())
                    .fold(Q::zero(), |acc, d| if d > acc { d } else { acc });
                assert!(dist <= f.params.epsilon, "phase ball violated: {}", fmt_q(&dist));
            }
        }
    }

    #[test]
    fn secret_regime_requires_a_nonempty_strict_set() {
        // A winning pair can claim the whole surplus, so no efficient point
        // clears every proper coalition strictly.
        let g = g_div3(TransferMode::TuSecret);
        match build_folk_automaton(&g, &qv("1/2,1/4,1/4"), &q(97, 100), TransferMode::TuSecret)
        {
            Err(Error::EmptySet { set }) => assert!(set.contains("deviation-proof")),
            other => panic!("expected EmptySet, got {other:?}"),
        }
    }

    #[test]
    fn free_split_builds_constant_phases_under_full_secrecy() {
        let g = g_free_split(3, 12, 4, TransferMode::TuSecret);
        let target = qv("5,4,3");
        let b = build_folk_automaton(&g, &target, &q(97, 100), TransferMode::TuSecret).unwrap();
        assert!(b.target_defect.is_zero());
        let f = folk(&b.automaton);
        assert_eq!(f.phases.len(), 7);
        for phase in &f.phases {
            assert_eq!(phase.steps.len(), 1);
            assert_eq!(phase.prefix_len, 0);
            let s = &phase.steps[0];
            assert_eq!(
                g.experienced_profile(s.alt, s.transfers.as_ref()),
                phase.target,
                "constant phase must realize its target exactly"
            );
        }
        // Boundary targets stay out: a player held exactly at a coalition
        // bound fails strictness, though the set itself is nonempty.
        match build_folk_automaton(&g, &qv("12,0,0"), &q(97, 100), TransferMode::TuSecret) {
            Err(Error::NotInSet { set, .. }) => assert!(set.contains("deviation-proof")),
            other => panic!("expected NotInSet, got {other:?}"),
        }
        // Punishments hold every proper coalition to zero on the efficient
        // plane, at the first alternative doing so.
        let expect: Vec<(Coalition, usize)> = vec![
            (Coalition::from_members([0]), 0),
            (Coalition::from_members([1]), 0),
            (Coalition::from_members([0, 1]), 0),
            (Coalition::from_members([2]), 3),
            (Coalition::from_members([0, 2]), 3),
            (Coalition::from_members([1, 2]), 9),
        ];
        assert_eq!(b.minmax_alternatives, expect);
    }

    #[test]
    fn partial_secrecy_builds_with_declared_scopes() {
        let mut g = g_div3(TransferMode::TuPartial);
        g.secret_coalitions = vec![Coalition::from_members([1, 2])];
        let target = qv("1/2,1/4,1/4");
        let b =
            build_folk_automaton(&g, &target, &q(97, 100), TransferMode::TuPartial).unwrap();
        assert!(b.target_defect.is_zero());
        let f = folk(&b.automaton);
        assert_eq!(f.protected, vec![Coalition::from_members([1, 2])]);
        let scopes: Vec<Coalition> = f.punishments.iter().map(|p| p.scope).collect();
        assert_eq!(
            scopes,
            vec![
                Coalition::from_members([0]),
                Coalition::from_members([1]),
                Coalition::from_members([2]),
                Coalition::from_members([1, 2]),
            ]
        );
        assert_eq!(f.phases.len(), 5);
        // All reward vectors stay strictly inside the scoped-rational set.
        for (_, u) in &b.punishment_payoffs {
            assert!(s_rational_membership(&g, &scopes, u, true).construction_member());
        }
    }

    #[test]
    fn partial_secrecy_rejects_bad_scopes_and_targets() {
        let mut g = g_div3(TransferMode::TuPartial);
        g.secret_coalitions = vec![Coalition::from_members([0, 1, 2])];
        match build_folk_automaton(&g, &qv("1/2,1/4,1/4"), &q(97, 100), TransferMode::TuPartial)
        {
            Err(Error::EmptySet { set }) => assert!(set.contains("scoped-rational")),
            other => panic!("expected EmptySet, got {other:?}"),
        }
        g.secret_coalitions = vec![Coalition::from_members([1, 2])];
        // Inefficient totals cannot be realized by constant plane phases.
        match build_folk_automaton(&g, &qv("1/4,1/4,1/4"), &q(97, 100), TransferMode::TuPartial)
        {
            Err(Error::NotInSet { set, .. }) => assert!(set.contains("scoped-rational")),
            other => panic!("expected NotInSet, got {other:?}"),
        }
    }

    #[test]
    fn regime_mismatch_and_weak_targets_are_rejected() {
        match build_folk_automaton(
            &g_pd(TransferMode::TuPublic),
            &qv("2,2"),
            &q(1, 2),
            TransferMode::Ntu,
        ) {
            Err(Error::InvalidInput(_)) => {}
            other => panic!("expected InvalidInput, got {other:?}"),
        }
        // Floors held with equality fail strict rationality.
        match build_folk_automaton(
            &g_pd(TransferMode::TuPublic),
            &qv("1,1"),
            &q(97, 100),
            TransferMode::TuPublic,
        ) {
            Err(Error::NotInSet { .. }) => {}
            other => panic!("expected NotInSet, got {other:?}"),
        }
        // Outside the feasible hull.
        match build_folk_automaton(&g_room(), &qv("3,3,3"), &q(19, 20), TransferMode::Ntu) {
            Err(Error::NotInSet { .. }) => {}
            other => panic!("expected NotInSet, got {other:?}"),
        }
    }
}
