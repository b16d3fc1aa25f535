//! Stability verification for convention automata: exhaustive search for a
//! profitable one-shot coalitional deviation under each monitoring regime,
//! coalition continuation-value guarantees, and discount-grid threshold
//! certification.
//!
//! A deviation at state w replaces the recommendation with a blocked outcome
//! (a', C, T''): C picks a' from its effectivity set at the recommended
//! alternative and, with transferable utility, rewrites its own rows of the
//! transfer matrix while everyone else's recommended rows still flow. The
//! deviation is profitable when every member strictly gains in discounted
//! terms against the automaton's reaction. Realizing exactly the recommended
//! outcome does not count as deviating: a block that changes nothing leaves
//! the play path intact, so the searches exclude that single point.
//!
//! Transfer searches are exact linear programs. Each transition function is
//! decomposed into polyhedral cells of the deviating rows on which the
//! successor state is constant; inside a cell the members' gains are affine,
//! and a shared slack variable t (the smallest member gain, or the total
//! gain under secrecy) is maximized. Comparisons are exact rationals:
//! profitable means slack > 0, so a discount factor sitting exactly on a
//! stability boundary verifies as stable.

use std::collections::BTreeMap;

use num::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::conventions::{
    continuation_values, ConventionAutomaton, ExplicitAutomaton, FolkAutomaton, OutcomePattern,
    StateId, TransferGuard,
};
use crate::error::{Error, Result};
use crate::game::{
    all_coalitions, Coalition, Outcome, PlayerId, StageGame, TransferMatrix, TransferMode,
};
use crate::lp::{LpBuilder, LpOutcome, Rel};
use crate::minmax::coalitional_minmax;
use crate::rat::{qi, to_f64, Q};

/// Outcome of a stability check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable(DeviationWitness),
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Stable)
    }

    pub fn witness(&self) -> Option<&DeviationWitness> {
        match self {
            Verdict::Stable => None,
            Verdict::Unstable(w) => Some(w),
        }
    }
}

/// A profitable one-shot coalitional deviation. Every witness is
/// re-evaluated through the automaton's public transition function before
/// being returned, independently of the search that found it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationWitness {
    pub state: StateId,
    pub state_label: String,
    pub coalition: Coalition,
    pub alternative: usize,
    /// Realized transfer matrix: the deviators' rows as chosen, everyone
    /// else's recommended rows unchanged. Absent without transfers.
    pub transfers: Option<TransferMatrix>,
    /// Per-member discounted gains, ascending by player.
    #[serde(with = "crate::rat::qpairserde")]
    pub gains: Vec<(PlayerId, Q)>,
    /// Smallest member gain; strictly positive.
    #[serde(with = "crate::rat::qserde")]
    pub slack: Q,
}

/// A state where some coalition's total continuation value undercuts the
/// worst total the coalition can secure in a single stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeViolation {
    pub state: StateId,
    pub state_label: String,
    pub coalition: Coalition,
    #[serde(with = "crate::rat::qserde")]
    pub total: Q,
    #[serde(with = "crate::rat::qserde")]
    pub bound: Q,
}

/// One grid entry from a discount-threshold sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertRow {
    #[serde(with = "crate::rat::qserde")]
    pub delta: Q,
    pub pass: bool,
    /// Failure explanation from the attempt; None when the row passes.
    pub reason: Option<String>,
}

/// Result of sweeping an ascending discount grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationTable {
    pub rows: Vec<CertRow>,
    /// Start of the trailing all-pass run; None when the largest grid point
    /// fails.
    #[serde(with = "crate::rat::qoptserde")]
    pub certified: Option<Q>,
    /// Whether no failure followed a pass anywhere on the grid.
    pub monotone: bool,
}

/// Exhaustive deviation search without transfers.
///
/// Scans every declared state, every nonempty coalition in ascending mask
/// order, and every alternative the coalition can force from the
/// recommendation, skipping the recommendation itself; profitable means
/// every member strictly gains. Returns the first witness in that order.
pub fn verify_ntu(aut: &ConventionAutomaton, g: &StageGame, delta: &Q) -> Result<Verdict> {
    if g.transfer_mode != TransferMode::Ntu {
        return Err(Error::Unsupported(
            "transfer-free verification needs a transfer-free game".into(),
        ));
    }
    let search = Search::new(aut, g, delta)?;
    for w in aut.states() {
        let rec = aut.output(w);
        let vw = &search.vals[&w];
        for c in all_coalitions(g.n()) {
            for a_dev in g.effectivity(c, rec.alt) {
                if a_dev == rec.alt {
                    continue; // realizing the recommendation is not a deviation
                }
                let obs = Outcome::blocked(a_dev, c);
                let succ = aut.transition(g, w, &obs);
                let vs = &search.vals[&succ];
                let profitable = c.members().all(|i| {
                    let gain =
                        &search.one_minus * g.payoff(i, a_dev) + search.delta * &vs[i] - &vw[i];
                    gain.is_positive()
                });
                if profitable {
                    return Ok(Verdict::Unstable(search.witness_from_outcome(w, c, obs)));
                }
            }
        }
    }
    Ok(Verdict::Stable)
}

/// Deviation search with transferable utility under member-level
/// accounting: a coalition deviates profitably when it can pick an
/// alternative it is effective for and rewrite its own transfer rows so
/// that every member strictly gains against the automaton's reaction.
pub fn verify_tupm(aut: &ConventionAutomaton, g: &StageGame, delta: &Q) -> Result<Verdict> {
    if !g.transfer_mode.has_transfers() {
        return Err(Error::Unsupported(
            "transfer verification needs a game with transfers".into(),
        ));
    }
    let search = Search::new(aut, g, delta)?;
    for w in aut.states() {
        let rec = aut.output(w);
        let t_rec = recommended_matrix(g, &rec);
        for c in all_coalitions(g.n()) {
            let map = VarMap::member_rows(c, g.n());
            for a_dev in g.effectivity(c, rec.alt) {
                let fr = Frame { w, rec: &rec, c, a_dev, t_rec: &t_rec, map: &map };
                if !search.maybe_profitable(&fr) {
                    continue;
                }
                for cell in &deviation_cells(aut, g, &fr) {
                    if !search.cell_maybe_profitable(&fr, cell) {
                        continue;
                    }
                    if let Some(point) = search.member_cell_point(&fr, cell)? {
                        return Ok(Verdict::Unstable(
                            search.member_witness(&fr, &point, cell.succ),
                        ));
                    }
                }
            }
        }
    }
    Ok(Verdict::Stable)
}

/// Deviation search when some coalitions redistribute internally in
/// secret. For a secret coalition, profitability is a total-gain test (any
/// surplus can be shared so that every member strictly gains, since the
/// reaction cannot depend on the split); all other coalitions face the
/// member-level test. `secret` overrides the game's declared secrecy set.
///
/// Before searching, every reachable reaction is checked for measurability:
/// no transition may condition on a secret coalition's internal transfers.
pub fn verify_tupt(
    aut: &ConventionAutomaton,
    g: &StageGame,
    delta: &Q,
    secret: Option<&[Coalition]>,
) -> Result<Verdict> {
    if !g.transfer_mode.has_transfers() {
        return Err(Error::Unsupported(
            "transfer verification needs a game with transfers".into(),
        ));
    }
    let declared;
    let secret: &[Coalition] = match secret {
        Some(s) => s,
        None => {
            declared = g.secrecy_set();
            &declared
        }
    };
    for c in secret {
        if c.is_empty() || !c.is_subset_of(g.grand()) {
            return Err(Error::InvalidInput("secret coalition out of range".into()));
        }
    }
    let search = Search::new(aut, g, delta)?;

    // Measurability pass, ahead of any witness search: a malformed
    // automaton is rejected no matter where its profitable deviations sit.
    for w in aut.states() {
        let rec = aut.output(w);
        let t_rec = recommended_matrix(g, &rec);
        for &c in secret {
            let map = VarMap::member_rows(c, g.n());
            for a_dev in g.effectivity(c, rec.alt) {
                let fr = Frame { w, rec: &rec, c, a_dev, t_rec: &t_rec, map: &map };
                for cell in &deviation_cells(aut, g, &fr) {
                    for con in &cell.cons {
                        for (e, &(from, to)) in map.pairs.iter().enumerate() {
                            if c.contains(to) && !con.expr.coeffs[e].is_zero() {
                                return Err(Error::Measurability(format!(
                                    "state {}: reaction to a block by {} depends on its \
                                     internal transfer {} -> {}",
                                    aut.state_label(g, w),
                                    c.label(g),
                                    g.players[from],
                                    g.players[to],
                                )));
                            }
                        }
                    }
                }
            }
        }
    }

    for w in aut.states() {
        let rec = aut.output(w);
        let t_rec = recommended_matrix(g, &rec);
        for c in all_coalitions(g.n()) {
            let map = VarMap::member_rows(c, g.n());
            for a_dev in g.effectivity(c, rec.alt) {
                let fr = Frame { w, rec: &rec, c, a_dev, t_rec: &t_rec, map: &map };
                if !search.maybe_profitable(&fr) {
                    continue;
                }
                for cell in &deviation_cells(aut, g, &fr) {
                    if !search.cell_maybe_profitable(&fr, cell) {
                        continue;
                    }
                    if secret.contains(&c) {
                        if let Some(witness) = search.total_cell_witness(&fr, cell)? {
                            return Ok(Verdict::Unstable(witness));
                        }
                    } else if let Some(point) = search.member_cell_point(&fr, cell)? {
                        return Ok(Verdict::Unstable(
                            search.member_witness(&fr, &point, cell.succ),
                        ));
                    }
                }
            }
        }
    }
    Ok(Verdict::Stable)
}

/// First state and coalition (in the given order) whose total continuation
/// value falls below the coalition's stage minmax guarantee.
pub fn coalition_value_guarantee_check(
    aut: &ConventionAutomaton,
    g: &StageGame,
    delta: &Q,
    coalitions: &[Coalition],
) -> Result<Option<GuaranteeViolation>> {
    for c in coalitions {
        if c.is_empty() || !c.is_subset_of(g.grand()) {
            return Err(Error::InvalidInput("coalition out of range".into()));
        }
    }
    let vals = prepare(aut, g, delta)?;
    let bounds: Vec<(Coalition, Q)> =
        coalitions.iter().map(|&c| (c, coalitional_minmax(g, c).value)).collect();
    for w in aut.states() {
        let vw = &vals[&w];
        for (c, bound) in &bounds {
            let total = c.members().map(|i| vw[i].clone()).fold(Q::zero(), |a, b| a + b);
            if total < *bound {
                return Ok(Some(GuaranteeViolation {
                    state: w,
                    state_label: aut.state_label(g, w),
                    coalition: *c,
                    total,
                    bound: bound.clone(),
                }));
            }
        }
    }
    Ok(None)
}

/// Sweeps a strictly ascending discount grid with a caller-supplied attempt
/// (a verifier, a builder, or any composite). Collects one row per grid
/// point, the certified threshold (start of the trailing all-pass run, when
/// the largest point passes), and whether passing was monotone.
pub fn min_delta_certify<F>(grid: &[Q], mut attempt: F) -> Result<CertificationTable>
where
    F: FnMut(&Q) -> std::result::Result<(), String>,
{
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty discount grid".into()));
    }
    if grid.iter().any(|d| *d <= Q::zero() || *d >= Q::one()) {
        return Err(Error::InvalidInput("discount grid entries must lie in (0,1)".into()));
    }
    if grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidInput("discount grid must be strictly ascending".into()));
    }
    let rows: Vec<CertRow> = grid
        .iter()
        .map(|d| match attempt(d) {
            Ok(()) => CertRow { delta: d.clone(), pass: true, reason: None },
            Err(msg) => CertRow { delta: d.clone(), pass: false, reason: Some(msg) },
        })
        .collect();
    let monotone = !rows.windows(2).any(|p| p[0].pass && !p[1].pass);
    let certified = if rows.last().is_some_and(|r| r.pass) {
        let start = rows.iter().rposition(|r| !r.pass).map_or(0, |k| k + 1);
        Some(rows[start].delta.clone())
    } else {
        None
    };
    Ok(CertificationTable { rows, certified, monotone })
}

fn prepare(
    aut: &ConventionAutomaton,
    g: &StageGame,
    delta: &Q,
) -> Result<BTreeMap<StateId, Vec<Q>>> {
    if let ConventionAutomaton::Folk(f) = aut {
        if f.regime != g.transfer_mode {
            return Err(Error::InvalidInput(
                "automaton regime does not match the game's transfer mode".into(),
            ));
        }
    }
    aut.validate(g)?;
    continuation_values(aut, g, delta)
}

fn recommended_matrix(g: &StageGame, rec: &Outcome) -> TransferMatrix {
    rec.transfers.clone().unwrap_or_else(|| TransferMatrix::zero(g.n()))
}

/// Ordered index of the transfer entries a deviating coalition controls:
/// every (from, to) with from in C and to != from, members ascending, then
/// recipients ascending.
struct VarMap {
    pairs: Vec<(PlayerId, PlayerId)>,
}

impl VarMap {
    fn member_rows(c: Coalition, n: usize) -> Self {
        let mut pairs = Vec::new();
        for i in c.members() {
            for j in 0..n {
                if j != i {
                    pairs.push((i, j));
                }
            }
        }
        VarMap { pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn index(&self, from: PlayerId, to: PlayerId) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (from, to))
    }
}

/// Affine function of the deviating rows: coeffs . x + constant.
#[derive(Clone, Debug)]
struct AffineExpr {
    coeffs: Vec<Q>,
    constant: Q,
}

impl AffineExpr {
    fn constant(d: usize, value: Q) -> Self {
        AffineExpr { coeffs: vec![Q::zero(); d], constant: value }
    }

    fn eval(&self, x: &[Q]) -> Q {
        let mut acc = self.constant.clone();
        for (c, xi) in self.coeffs.iter().zip(x) {
            if !c.is_zero() {
                acc += c * xi;
            }
        }
        acc
    }

    fn is_constant(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    fn scaled(&self, k: &Q) -> Self {
        AffineExpr {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
            constant: &self.constant * k,
        }
    }

    fn negated(&self) -> Self {
        self.scaled(&-Q::one())
    }

    /// self += k * other
    fn add_scaled(&mut self, other: &Self, k: &Q) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += k * b;
        }
        self.constant += k * &other.constant;
    }
}

/// One affine side condition of a cell: expr > 0 when strict, expr >= 0
/// otherwise.
#[derive(Clone, Debug)]
struct CellCon {
    expr: AffineExpr,
    strict: bool,
}

/// A polyhedral region of the deviating rows on which the automaton's
/// successor is constant. The cells of one (state, coalition, alternative)
/// jointly cover the nonnegative orthant; shared boundaries only occur
/// along weak constraints, which route to the same successor as the true
/// transition.
#[derive(Clone, Debug)]
struct Cell {
    cons: Vec<CellCon>,
    succ: StateId,
}

/// One deviation under scrutiny: state, recommendation, coalition, chosen
/// alternative, recommended matrix, and the coalition's variable index.
struct Frame<'a> {
    w: StateId,
    rec: &'a Outcome,
    c: Coalition,
    a_dev: usize,
    t_rec: &'a TransferMatrix,
    map: &'a VarMap,
}

/// Experienced payoff of player j under (a_dev, C's rows variable, other
/// rows recommended), as an affine function of the deviating rows.
fn payoff_expr(g: &StageGame, fr: &Frame, j: PlayerId) -> AffineExpr {
    let n = g.n();
    let mut constant = g.payoff(j, fr.a_dev).clone();
    for k in 0..n {
        if k != j && !fr.c.contains(k) {
            constant += fr.t_rec.get(k, j);
        }
    }
    if !fr.c.contains(j) {
        constant -= fr.t_rec.outgoing(j);
    }
    let mut coeffs = vec![Q::zero(); fr.map.len()];
    for (e, &(from, to)) in fr.map.pairs.iter().enumerate() {
        if to == j {
            coeffs[e] += Q::one();
        }
        if from == j {
            coeffs[e] -= Q::one();
        }
    }
    AffineExpr { coeffs, constant }
}

/// A transfer guard on the deviation parametrization: payoff terms expand
/// into experienced-payoff expressions; transfer terms read the realized
/// matrix, a variable when the row belongs to C and the recommended entry
/// otherwise.
fn guard_expr(gd: &TransferGuard, g: &StageGame, fr: &Frame) -> AffineExpr {
    let mut expr = AffineExpr::constant(fr.map.len(), gd.constant.clone());
    for (i, k) in &gd.payoff_terms {
        expr.add_scaled(&payoff_expr(g, fr, *i), k);
    }
    for (i, j, k) in &gd.transfer_terms {
        match fr.map.index(*i, *j) {
            Some(e) => expr.coeffs[e] += k,
            None => expr.constant += k * fr.t_rec.get(*i, *j),
        }
    }
    expr
}

/// Cells of the transition function at fr.w for blocked outcomes
/// (fr.a_dev, fr.c, .), as a function of the deviating rows.
fn deviation_cells(aut: &ConventionAutomaton, g: &StageGame, fr: &Frame) -> Vec<Cell> {
    let raw = match aut {
        ConventionAutomaton::Explicit(a) => explicit_cells(a, g, fr),
        ConventionAutomaton::Folk(f) => folk_cells(f, g, fr),
    };
    simplify_cells(raw)
}

/// Walks the state's rule list in order. A matching guarded rule
/// contributes a cell; its complement joins the accumulated conditions for
/// later rules. The first unconditionally matching rule terminates the
/// walk.
fn explicit_cells(a: &ExplicitAutomaton, g: &StageGame, fr: &Frame) -> Vec<Cell> {
    let StateId::Index(state) = fr.w else {
        unreachable!("state id does not address this automaton")
    };
    let mut cells = Vec::new();
    let mut acc: Vec<CellCon> = Vec::new();
    for r in &a.states[state].rules {
        match &r.pattern {
            OutcomePattern::Unblocked => {}
            OutcomePattern::Any => {
                cells.push(Cell { cons: acc, succ: StateId::Index(r.next) });
                return cells;
            }
            OutcomePattern::Blocked { coalitions, alternatives, guard } => {
                if let Some(cs) = coalitions {
                    if !cs.contains(&fr.c) {
                        continue;
                    }
                }
                if let Some(alts) = alternatives {
                    if !alts.contains(&fr.a_dev) {
                        continue;
                    }
                }
                match guard {
                    None => {
                        cells.push(Cell { cons: acc, succ: StateId::Index(r.next) });
                        return cells;
                    }
                    Some(gd) => {
                        let e = guard_expr(gd, g, fr);
                        let mut cons = acc.clone();
                        cons.push(CellCon { expr: e.clone(), strict: gd.strict });
                        cells.push(Cell { cons, succ: StateId::Index(r.next) });
                        // complement: not(e > 0) is -e >= 0; not(e >= 0) is -e > 0
                        acc.push(CellCon { expr: e.negated(), strict: !gd.strict });
                    }
                }
            }
        }
    }
    unreachable!("validated automata end every rule list with a catch-all")
}

fn folk_cells(f: &FolkAutomaton, g: &StageGame, fr: &Frame) -> Vec<Cell> {
    match f.regime {
        TransferMode::Ntu => {
            unreachable!("transfer searches never run against a transfer-free regime")
        }
        TransferMode::TuSecret => {
            let succ = if fr.c == g.grand() { f.advance(fr.w) } else { f.pun_state(fr.c) };
            vec![Cell { cons: Vec::new(), succ }]
        }
        TransferMode::TuPublic => folk_payoff_cells(f, g, fr, false),
        TransferMode::TuPartial => {
            if f.is_protected(fr.c) {
                vec![Cell { cons: Vec::new(), succ: f.pun_state(fr.c) }]
            } else {
                folk_payoff_cells(f, g, fr, true)
            }
        }
    }
}

/// Cells of the payoff-scored scapegoat rules: public transfers, and
/// partial secrecy for unprotected coalitions. Mirrors the branch structure
/// of the folk transition exactly, with each comparison turned into an
/// affine condition on the deviating rows.
fn folk_payoff_cells(f: &FolkAutomaton, g: &StageGame, fr: &Frame, partial: bool) -> Vec<Cell> {
    match fr.w {
        StateId::Normal { .. } => {
            let reference = g.experienced_profile(fr.rec.alt, fr.rec.transfers.as_ref());
            let scores: Vec<(PlayerId, AffineExpr)> = fr
                .c
                .members()
                .map(|j| {
                    let mut e = payoff_expr(g, fr, j);
                    e.constant -= &reference[j];
                    (j, e)
                })
                .collect();
            scapegoat_cells(f, &scores, Vec::new())
        }
        StateId::Punish { pun, .. } => {
            let spec = &f.punishments[pun];
            if partial && spec.scope.len() > 1 {
                let scores: Vec<(PlayerId, AffineExpr)> =
                    fr.c.members().map(|j| (j, payoff_expr(g, fr, j))).collect();
                return scapegoat_cells(f, &scores, Vec::new());
            }
            let i = spec.scope.min_member();
            let spec_scores = |pool: Coalition| -> Vec<(PlayerId, AffineExpr)> {
                pool.members()
                    .map(|j| {
                        let mut e = payoff_expr(g, fr, j);
                        e.constant -= g.payoff(j, spec.alt);
                        (j, e)
                    })
                    .collect()
            };
            if fr.c.contains(i) {
                // held to the floor: the scope is punished again
                let mut floor = payoff_expr(g, fr, i).negated();
                floor.constant += &f.floors[i];
                let restart = Cell {
                    cons: vec![CellCon { expr: floor, strict: false }],
                    succ: f.pun_state(spec.scope),
                };
                let mut above = payoff_expr(g, fr, i);
                above.constant -= &f.floors[i];
                let above = CellCon { expr: above, strict: true };
                let pool = fr.c.without(i);
                if pool.is_empty() {
                    vec![restart, Cell { cons: vec![above], succ: f.pun_state(spec.scope) }]
                } else {
                    let mut cells = vec![restart];
                    cells.extend(scapegoat_cells(f, &spec_scores(pool), vec![above]));
                    cells
                }
            } else {
                scapegoat_cells(f, &spec_scores(fr.c), Vec::new())
            }
        }
        StateId::Index(_) => unreachable!("folk automata use structured state ids"),
    }
}

/// One cell per candidate scapegoat s: the region where s attains the
/// minimum score. The smallest index wins ties, so s beats every earlier
/// member strictly and every later member weakly.
fn scapegoat_cells(
    f: &FolkAutomaton,
    scores: &[(PlayerId, AffineExpr)],
    prefix: Vec<CellCon>,
) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (k, (s, es)) in scores.iter().enumerate() {
        let mut cons = prefix.clone();
        for (m, (_, ej)) in scores.iter().enumerate() {
            if m == k {
                continue;
            }
            let mut diff = ej.clone();
            diff.add_scaled(es, &-Q::one());
            cons.push(CellCon { expr: diff, strict: m < k });
        }
        cells.push(Cell { cons, succ: f.pun_state(Coalition::singleton(*s)) });
    }
    cells
}

/// Drops conditions with no variable part (statically decided) and cells a
/// violated constant condition makes empty.
fn simplify_cells(raw: Vec<Cell>) -> Vec<Cell> {
    let mut out = Vec::new();
    'cell: for cell in raw {
        let mut cons = Vec::new();
        for con in cell.cons {
            if con.expr.is_constant() {
                let sat = if con.strict {
                    con.expr.constant.is_positive()
                } else {
                    !con.expr.constant.is_negative()
                };
                if sat {
                    continue;
                }
                continue 'cell;
            }
            cons.push(con);
        }
        out.push(Cell { cons, succ: cell.succ });
    }
    out
}

/// Cap on any single transfer entry worth searching: past it, a deviating
/// row's outflow exceeds the largest possible swing in discounted gains, so
/// no optimum needs a larger entry. Derived from the global spread of
/// continuation values and of stage payoffs.
fn box_bound(g: &StageGame, delta: &Q, vals: &BTreeMap<StateId, Vec<Q>>) -> Q {
    let spread = |mut it: Box<dyn Iterator<Item = Q>>| -> Q {
        let first = match it.next() {
            Some(x) => x,
            None => return Q::zero(),
        };
        let (mut lo, mut hi) = (first.clone(), first);
        for x in it {
            if x < lo {
                lo = x.clone();
            }
            if x > hi {
                hi = x;
            }
        }
        hi - lo
    };
    let vspread = spread(Box::new(vals.values().flatten().cloned()));
    let pspread = spread(Box::new(
        (0..g.num_alternatives()).flat_map(|a| g.payoffs(a).to_vec()),
    ));
    let b = (Q::one() + delta) / (Q::one() - delta) * vspread + pspread;
    if b.is_positive() {
        b
    } else {
        Q::one()
    }
}

/// Shared context of one verification run.
struct Search<'a> {
    aut: &'a ConventionAutomaton,
    g: &'a StageGame,
    delta: &'a Q,
    one_minus: Q,
    vals: BTreeMap<StateId, Vec<Q>>,
    /// Per-player maximum continuation value over all states.
    vmax: Vec<Q>,
    box_b: Q,
    /// Float mirrors of `vals` and `vmax` driving the screens; any
    /// inconclusive float bound falls back to exact arithmetic, so rounding
    /// never changes a verdict.
    vals_f: BTreeMap<StateId, Vec<f64>>,
    vmax_f: Vec<f64>,
    delta_f: f64,
    one_minus_f: f64,
}

impl<'a> Search<'a> {
    fn new(aut: &'a ConventionAutomaton, g: &'a StageGame, delta: &'a Q) -> Result<Self> {
        let vals = prepare(aut, g, delta)?;
        let box_b = box_bound(g, delta, &vals);
        let mut vmax = vals.values().next().expect("automata have states").clone();
        for v in vals.values() {
            for (m, vi) in vmax.iter_mut().zip(v) {
                if vi > m {
                    *m = vi.clone();
                }
            }
        }
        let vals_f: BTreeMap<StateId, Vec<f64>> =
            vals.iter().map(|(w, v)| (*w, v.iter().map(to_f64).collect())).collect();
        let vmax_f: Vec<f64> = vmax.iter().map(to_f64).collect();
        let delta_f = to_f64(delta);
        Ok(Search {
            aut,
            g,
            delta,
            one_minus: Q::one() - delta,
            vals,
            vmax,
            box_b,
            vals_f,
            vmax_f,
            delta_f,
            one_minus_f: 1.0 - delta_f,
        })
    }

    /// Float version of the screens' gain bound, paired with the
    /// accumulated magnitude that calibrates its rounding error.
    fn bound_f(&self, fr: &Frame, vnext: &[f64]) -> (f64, f64) {
        let vw = &self.vals_f[&fr.w];
        let mut bound = 0.0;
        let mut mag = 1.0;
        for i in fr.c.members() {
            let mut flow = to_f64(self.g.payoff(i, fr.a_dev));
            for k in 0..self.g.n() {
                if k != i && !fr.c.contains(k) {
                    flow += to_f64(fr.t_rec.get(k, i));
                }
            }
            bound += self.one_minus_f * flow + self.delta_f * vnext[i] - vw[i];
            mag += flow.abs() + vnext[i].abs() + vw[i].abs();
        }
        (bound, mag)
    }

    /// Cheap upper bound ruling a frame out: the coalition's total gain is
    /// at most the deviation flows plus recommended inflows from outsiders
    /// (internal transfers cancel, outflows only lose) against each member's
    /// best continuation anywhere. Nonpositive bound means no cell of this
    /// frame can hold a profitable point. Screened in floats first; bounds
    /// too close to zero are recomputed exactly.
    fn maybe_profitable(&self, fr: &Frame) -> bool {
        let (bound, mag) = self.bound_f(fr, &self.vmax_f);
        if bound < -mag * 1e-12 {
            return false;
        }
        if bound > mag * 1e-12 {
            return true;
        }
        let mut bound = Q::zero();
        let vw = &self.vals[&fr.w];
        for i in fr.c.members() {
            let mut flow = self.g.payoff(i, fr.a_dev).clone();
            for k in 0..self.g.n() {
                if k != i && !fr.c.contains(k) {
                    flow += fr.t_rec.get(k, i);
                }
            }
            bound += &self.one_minus * flow + self.delta * &self.vmax[i] - &vw[i];
        }
        bound.is_positive()
    }

    /// Frame screen refined to one cell: same inflow-only bound, but
    /// against the cell's actual successor instead of the best continuation
    /// anywhere. Dropping the cell constraints only raises the maximum, so
    /// a nonpositive bound rules the cell out for member-level and
    /// total-gain searches alike.
    fn cell_maybe_profitable(&self, fr: &Frame, cell: &Cell) -> bool {
        let (bound, mag) = self.bound_f(fr, &self.vals_f[&cell.succ]);
        if bound < -mag * 1e-12 {
            return false;
        }
        if bound > mag * 1e-12 {
            return true;
        }
        let vw = &self.vals[&fr.w];
        let vs = &self.vals[&cell.succ];
        let mut bound = Q::zero();
        for i in fr.c.members() {
            let mut flow = self.g.payoff(i, fr.a_dev).clone();
            for k in 0..self.g.n() {
                if k != i && !fr.c.contains(k) {
                    flow += fr.t_rec.get(k, i);
                }
            }
            bound += &self.one_minus * flow + self.delta * &vs[i] - &vw[i];
        }
        bound.is_positive()
    }

    /// Member i's discounted gain from deviating into `succ`, affine in the
    /// deviating rows.
    fn gain_expr(&self, fr: &Frame, succ: StateId, i: PlayerId) -> AffineExpr {
        let mut e = payoff_expr(self.g, fr, i).scaled(&self.one_minus);
        e.constant += self.delta * &self.vals[&succ][i];
        e.constant -= &self.vals[&fr.w][i];
        e
    }

    /// Per-member search in one cell: a point where every member of C
    /// strictly gains, excluding the point that realizes the
    /// recommendation. `None` when the cell holds no such point.
    fn member_cell_point(&self, fr: &Frame, cell: &Cell) -> Result<Option<Vec<Q>>> {
        let gains: Vec<AffineExpr> =
            fr.c.members().map(|i| self.gain_expr(fr, cell.succ, i)).collect();
        let solved = if cell.cons.is_empty() && fr.c.len() == 1 {
            // a lone deviator's gain falls as outflow rises: optimum at zero
            let zero = vec![Q::zero(); fr.map.len()];
            let t0 = gains[0].eval(&zero);
            if t0.is_positive() {
                Some((t0, zero))
            } else {
                None
            }
        } else {
            maximize_slack(&cell.cons, &gains, fr.map.len(), &self.box_b)?
        };
        let Some((_, point)) = solved else {
            return Ok(None);
        };
        if fr.a_dev == fr.rec.alt && realize(fr, &point) == *fr.t_rec {
            // the optimum landed on the excluded null point; any other cell
            // point keeping the strict conditions positive will do
            let weak: Vec<&AffineExpr> =
                cell.cons.iter().filter(|k| !k.strict).map(|k| &k.expr).collect();
            let strict: Vec<&AffineExpr> = cell
                .cons
                .iter()
                .filter(|k| k.strict)
                .map(|k| &k.expr)
                .chain(gains.iter())
                .collect();
            return escape_point(&weak, &strict, &self.box_b, &point);
        }
        Ok(Some(point))
    }

    /// Total-gain search in one cell for a coalition with secret internal
    /// transfers. A positive total is redistributed through the smallest
    /// member so that every member gains the same share; the recommendation
    /// point is excluded as in the member-level search.
    fn total_cell_witness(&self, fr: &Frame, cell: &Cell) -> Result<Option<DeviationWitness>> {
        let mut total = AffineExpr::constant(fr.map.len(), Q::zero());
        for i in fr.c.members() {
            total.add_scaled(&self.gain_expr(fr, cell.succ, i), &Q::one());
        }
        // internal transfers cancel in the total
        debug_assert!(fr
            .map
            .pairs
            .iter()
            .enumerate()
            .all(|(e, &(_, to))| !fr.c.contains(to) || total.coeffs[e].is_zero()));
        let solved = if cell.cons.is_empty() {
            // the total falls as outflow rises: optimum at zero
            let zero = vec![Q::zero(); fr.map.len()];
            let t0 = total.eval(&zero);
            if t0.is_positive() {
                Some((t0, zero))
            } else {
                None
            }
        } else {
            maximize_slack(&cell.cons, std::slice::from_ref(&total), fr.map.len(), &self.box_b)?
        };
        let Some((_, point)) = solved else {
            return Ok(None);
        };
        let mut realized = realize(fr, &point);
        let vw = &self.vals[&fr.w];
        let vs = &self.vals[&cell.succ];
        let gains0: Vec<(PlayerId, Q)> = fr
            .c
            .members()
            .map(|i| {
                let flow = self.g.experienced_payoff(i, fr.a_dev, Some(&realized));
                (i, &self.one_minus * flow + self.delta * &vs[i] - &vw[i])
            })
            .collect();
        let big_g = gains0.iter().fold(Q::zero(), |a, (_, q)| a + q);
        debug_assert!(big_g.is_positive());
        let share = &big_g / qi(fr.c.len() as i64);
        let hub = fr.c.min_member();
        for (i, gi) in &gains0 {
            if *i == hub {
                continue;
            }
            let d = gi - &share;
            if d.is_positive() {
                let cur = realized.get(*i, hub).clone();
                realized.set(*i, hub, cur + &d / &self.one_minus);
            } else if d.is_negative() {
                let cur = realized.get(hub, *i).clone();
                realized.set(hub, *i, cur + -&d / &self.one_minus);
            }
        }
        if fr.a_dev == fr.rec.alt && realized == *fr.t_rec {
            if fr.c.len() >= 2 {
                // nudge one internal entry; the donor keeps half its share
                let mut members = fr.c.members();
                let m0 = members.next().expect("nonempty coalition");
                let m1 = members.next().expect("two members");
                let eps = &share / (qi(2) * &self.one_minus);
                let cur = realized.get(m0, m1).clone();
                realized.set(m0, m1, cur + eps);
            } else {
                // a lone secret deviator: same escape as the member search
                let weak: Vec<&AffineExpr> =
                    cell.cons.iter().filter(|k| !k.strict).map(|k| &k.expr).collect();
                let strict: Vec<&AffineExpr> = cell
                    .cons
                    .iter()
                    .filter(|k| k.strict)
                    .map(|k| &k.expr)
                    .chain([&total])
                    .collect();
                match escape_point(&weak, &strict, &self.box_b, &point)? {
                    Some(p) => realized = realize(fr, &p),
                    None => return Ok(None),
                }
            }
        }
        let obs = Outcome { alt: fr.a_dev, blockers: fr.c, transfers: Some(realized) };
        let succ = self.aut.transition(self.g, fr.w, &obs);
        assert_eq!(succ, cell.succ, "measurable cells must route like the transition");
        Ok(Some(self.witness_from_outcome(fr.w, fr.c, obs)))
    }

    fn member_witness(&self, fr: &Frame, point: &[Q], cell_succ: StateId) -> DeviationWitness {
        let realized = realize(fr, point);
        let obs = Outcome { alt: fr.a_dev, blockers: fr.c, transfers: Some(realized) };
        let succ = self.aut.transition(self.g, fr.w, &obs);
        assert_eq!(succ, cell_succ, "cells must route like the transition at their points");
        self.witness_from_outcome(fr.w, fr.c, obs)
    }

    /// Re-evaluates the deviation through the public transition and payoff
    /// functions, independently of the search. Panics unless every member
    /// strictly gains: callers only pass certified outcomes.
    fn witness_from_outcome(&self, w: StateId, c: Coalition, obs: Outcome) -> DeviationWitness {
        let succ = self.aut.transition(self.g, w, &obs);
        let vw = &self.vals[&w];
        let vs = &self.vals[&succ];
        let gains: Vec<(PlayerId, Q)> = c
            .members()
            .map(|i| {
                let flow = self.g.experienced_payoff(i, obs.alt, obs.transfers.as_ref());
                (i, &self.one_minus * flow + self.delta * &vs[i] - &vw[i])
            })
            .collect();
        let slack =
            gains.iter().map(|(_, q)| q.clone()).min().expect("nonempty coalition");
        assert!(slack.is_positive(), "witness must make every member strictly better off");
        DeviationWitness {
            state: w,
            state_label: self.aut.state_label(self.g, w),
            coalition: c,
            alternative: obs.alt,
            transfers: obs.transfers,
            gains,
            slack,
        }
    }
}

/// The realized transfer matrix at a search point: the recommendation with
/// C's rows replaced by the point's entries.
fn realize(fr: &Frame, point: &[Q]) -> TransferMatrix {
    let mut m = fr.t_rec.clone();
    for (e, &(from, to)) in fr.map.pairs.iter().enumerate() {
        m.set(from, to, point[e].clone());
    }
    m
}

/// Maximize a shared slack t subject to the box caps, the cell conditions
/// (strict ones at distance t), and every target expression at distance t.
/// Returns the optimum and its transfer point when t > 0 is attainable.
fn maximize_slack(
    cons: &[CellCon],
    targets: &[AffineExpr],
    d: usize,
    box_b: &Q,
) -> Result<Option<(Q, Vec<Q>)>> {
    let mut lp = LpBuilder::new();
    let xs: Vec<usize> = lp.add_vars(d).collect();
    let t = lp.add_free_var();
    for &x in &xs {
        lp.constraint(vec![(x, Q::one())], Rel::Le, box_b.clone());
    }
    let row = |expr: &AffineExpr, with_t: bool| -> Vec<(usize, Q)> {
        let mut r: Vec<(usize, Q)> = expr
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_zero())
            .map(|(e, q)| (xs[e], q.clone()))
            .collect();
        if with_t {
            r.push((t, -Q::one()));
        }
        r
    };
    for con in cons {
        lp.constraint(row(&con.expr, con.strict), Rel::Ge, -con.expr.constant.clone());
    }
    for tgt in targets {
        lp.constraint(row(tgt, true), Rel::Ge, -tgt.constant.clone());
    }
    lp.set_objective(vec![(t, Q::one())]);
    match lp.solve() {
        LpOutcome::Optimal { value, point } => {
            if value.is_positive() {
                Ok(Some((value, point[..d].to_vec())))
            } else {
                Ok(None)
            }
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => {
            Err(Error::LpUnbounded("slack program unbounded despite box caps".into()))
        }
    }
}

/// A point of the weak region (weak conditions plus box) other than p0 at
/// which every listed strict expression stays positive. p0 must satisfy the
/// weak conditions and make every strict expression positive. Returns None
/// exactly when the weak region is the single point p0; since the strict
/// expressions hold strictly at p0, the region they cut out degenerates to
/// {p0} if and only if the weak region does.
fn escape_point(
    weak: &[&AffineExpr],
    strict: &[&AffineExpr],
    box_b: &Q,
    p0: &[Q],
) -> Result<Option<Vec<Q>>> {
    let d = p0.len();
    let mut target: Option<Vec<Q>> = None;
    'probe: for e in 0..d {
        for sign in [Q::one(), -Q::one()] {
            let mut lp = LpBuilder::new();
            let xs: Vec<usize> = lp.add_vars(d).collect();
            for &x in &xs {
                lp.constraint(vec![(x, Q::one())], Rel::Le, box_b.clone());
            }
            for wexpr in weak {
                let r: Vec<(usize, Q)> = wexpr
                    .coeffs
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| !q.is_zero())
                    .map(|(k, q)| (xs[k], q.clone()))
                    .collect();
                lp.constraint(r, Rel::Ge, -wexpr.constant.clone());
            }
            lp.set_objective(vec![(xs[e], sign)]);
            match lp.solve() {
                LpOutcome::Optimal { point, .. } => {
                    if point[e] != p0[e] {
                        target = Some(point[..d].to_vec());
                        break 'probe;
                    }
                }
                LpOutcome::Infeasible => unreachable!("p0 satisfies the weak region"),
                LpOutcome::Unbounded => {
                    return Err(Error::LpUnbounded(
                        "escape probe unbounded despite box caps".into(),
                    ))
                }
            }
        }
    }
    let Some(x1) = target else {
        return Ok(None);
    };
    // Shrink toward p0 until every strict expression stays positive: each
    // is affine along the segment and positive at p0.
    let mut lambda = Q::one();
    for sexpr in strict {
        let v0 = sexpr.eval(p0);
        debug_assert!(v0.is_positive());
        let v1 = sexpr.eval(&x1);
        if !v1.is_positive() {
            let bound = &v0 / (&v0 - &v1);
            if bound < lambda {
                lambda = bound;
            }
        }
    }
    lambda /= qi(2);
    let point: Vec<Q> =
        p0.iter().zip(&x1).map(|(a, b)| a + &lambda * (b - a)).collect();
    Ok(Some(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventions::fixtures::room_matching_convention;
    use crate::conventions::{
        core_reversion_convention, ExplicitState, FolkParameters, OutcomeStep, Phase, PhaseTag,
        PunishmentSpec, ReversionGuard, TransitionRule,
    };
    use crate::game::fixtures::{g_div3, g_pd, g_room, ROOM_BC};
    use crate::rat::q;

    fn members(ms: &[PlayerId]) -> Coalition {
        Coalition::from_members(ms)
    }

    fn rule(pattern: OutcomePattern, next: usize) -> TransitionRule {
        TransitionRule { pattern, next }
    }

    fn blocked_rule(next: usize) -> TransitionRule {
        rule(OutcomePattern::Blocked { coalitions: None, alternatives: None, guard: None }, next)
    }

    fn single_state(label: &str, output: Outcome) -> ConventionAutomaton {
        ConventionAutomaton::Explicit(ExplicitAutomaton {
            states: vec![ExplicitState {
                label: label.into(),
                output,
                rules: vec![rule(OutcomePattern::Any, 0)],
            }],
            initial: 0,
        })
    }

    #[test]
    fn room_matching_thresholds() {
        let g = g_room();
        let aut = room_matching_convention();
        assert!(verify_ntu(&aut, &g, &q(3, 5)).unwrap().is_stable());
        // boundary: the best pair deviation gains exactly zero
        assert!(verify_ntu(&aut, &g, &q(1, 2)).unwrap().is_stable());
        let v = verify_ntu(&aut, &g, &q(9, 20)).unwrap();
        let w = v.witness().expect("unstable below one half");
        assert_eq!(w.state, StateId::Index(0));
        assert_eq!(w.coalition, members(&[1, 2]));
        assert_eq!(w.alternative, ROOM_BC);
        assert_eq!(w.transfers, None);
        assert_eq!(w.gains, vec![(1, q(1, 10)), (2, q(29, 20))]);
        assert_eq!(w.slack, q(1, 10));
    }

    #[test]
    fn regime_mode_mismatches_are_rejected() {
        let g = g_pd(TransferMode::TuPublic);
        let aut = single_state("cc", Outcome::unblocked(0));
        assert!(matches!(verify_ntu(&aut, &g, &q(1, 2)), Err(Error::Unsupported(_))));
        let g2 = g_room();
        let aut2 = room_matching_convention();
        assert!(matches!(verify_tupm(&aut2, &g2, &q(1, 2)), Err(Error::Unsupported(_))));
        assert!(matches!(verify_tupt(&aut2, &g2, &q(1, 2), None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ntu_core_reversion_threshold_is_one_half() {
        let g = g_div3(TransferMode::Ntu);
        let aut = core_reversion_convention(&g, Outcome::unblocked(2), 14, None).unwrap();
        assert!(verify_ntu(&aut, &g, &q(3, 5)).unwrap().is_stable());
        // a block by the veto player alone realizes the recommendation and
        // is no deviation, so the boundary holds exactly
        assert!(verify_ntu(&aut, &g, &q(1, 2)).unwrap().is_stable());
        let v = verify_ntu(&aut, &g, &q(2, 5)).unwrap();
        let w = v.witness().expect("unstable below one half");
        assert_eq!(w.state, StateId::Index(0));
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 4);
        assert_eq!(w.gains, vec![(0, q(2, 5)), (1, q(1, 10))]);
        assert_eq!(w.slack, q(1, 10));
    }

    #[test]
    fn guarded_reversion_transfer_threshold_is_one_half() {
        let g = g_div3(TransferMode::TuPublic);
        let guard = ReversionGuard { player: 0, threshold: Q::zero() };
        let aut =
            core_reversion_convention(&g, Outcome::unblocked(2), 14, Some(guard)).unwrap();
        assert!(verify_tupm(&aut, &g, &q(1, 2)).unwrap().is_stable());
        let v = verify_tupm(&aut, &g, &q(49, 100)).unwrap();
        let w = v.witness().expect("unstable just below one half");
        assert_eq!(w.state, StateId::Index(0));
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 4);
        // the guard pins the veto player's flow at zero, so the optimum
        // hands everything to the partner
        assert_eq!(w.gains, vec![(0, q(49, 100)), (1, q(1, 100))]);
        assert_eq!(w.slack, q(1, 100));
        let v = verify_tupm(&aut, &g, &q(2, 5)).unwrap();
        let w = v.witness().expect("unstable at two fifths");
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 4);
        assert_eq!(w.gains, vec![(0, q(2, 5)), (1, q(1, 10))]);
    }

    #[test]
    fn unguarded_reversion_lets_the_veto_player_block_in_place() {
        let g = g_div3(TransferMode::TuPublic);
        let aut = core_reversion_convention(&g, Outcome::unblocked(2), 14, None).unwrap();
        for d in [q(49, 100), q(3, 5), q(99, 100)] {
            let v = verify_tupm(&aut, &g, &d).unwrap();
            let w = v.witness().expect("unstable at every discount factor");
            assert_eq!(w.state, StateId::Index(0));
            assert_eq!(w.coalition, Coalition::singleton(0));
            assert_eq!(w.alternative, 2);
            let tr = w.transfers.as_ref().unwrap();
            assert!(!tr.is_zero(), "the veto player donates while blocking");
        }
        // deterministic escape from the excluded null point
        let v = verify_tupm(&aut, &g, &q(3, 5)).unwrap();
        let w = v.witness().unwrap();
        assert_eq!(w.transfers.as_ref().unwrap().get(0, 1), &q(3, 4));
        assert!(w.transfers.as_ref().unwrap().get(0, 2).is_zero());
        assert_eq!(w.gains, vec![(0, q(3, 10))]);
        assert_eq!(w.slack, q(3, 10));
    }

    #[test]
    fn non_deviator_rows_still_flow() {
        let g = g_pd(TransferMode::TuPublic);
        let mut t = TransferMatrix::zero(2);
        t.set(0, 1, q(1, 2));
        t.set(1, 0, q(1, 4));
        // lenient: blocks are ignored, so canceling the outgoing row while
        // the incoming row keeps flowing is pure gain
        let lenient = single_state("cc", Outcome::unblocked_tu(0, t.clone()));
        let v = verify_tupm(&lenient, &g, &q(9, 10)).unwrap();
        let w = v.witness().expect("unstable at every discount factor");
        assert_eq!(w.coalition, Coalition::singleton(0));
        assert_eq!(w.alternative, 0);
        let tr = w.transfers.as_ref().unwrap();
        assert!(tr.get(0, 1).is_zero(), "outgoing row canceled");
        assert_eq!(tr.get(1, 0), &q(1, 4), "incoming row still flows");
        assert_eq!(w.gains, vec![(0, q(1, 20))]);

        // strict: one block and the match dissolves into mutual defection.
        // That deters every deviation on the path when patient, but the
        // absorbing defection state invites a joint restoration block, so
        // instability merely relocates there.
        let strict = ConventionAutomaton::Explicit(ExplicitAutomaton {
            states: vec![
                ExplicitState {
                    label: "cc".into(),
                    output: Outcome::unblocked_tu(0, t),
                    rules: vec![blocked_rule(1), rule(OutcomePattern::Any, 0)],
                },
                ExplicitState {
                    label: "dd".into(),
                    output: Outcome::unblocked(3),
                    rules: vec![rule(OutcomePattern::Any, 1)],
                },
            ],
            initial: 0,
        });
        let v = verify_tupm(&strict, &g, &q(9, 10)).unwrap();
        let w = v.witness().expect("the defection state is never immune");
        assert_eq!(w.state, StateId::Index(1));
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 0);
        assert_eq!(w.gains, vec![(0, q(1, 10)), (1, q(1, 10))]);
        assert_eq!(w.slack, q(1, 10));
        // impatient: withholding the outgoing transfer alone beats the
        // punishment, without even changing the alternative
        let v = verify_tupm(&strict, &g, &q(1, 10)).unwrap();
        let w = v.witness().expect("unstable when impatient");
        assert_eq!(w.state, StateId::Index(0));
        assert_eq!(w.coalition, Coalition::singleton(0));
        assert_eq!(w.alternative, 0);
        assert_eq!(w.gains, vec![(0, q(3, 8))]);
        let tr = w.transfers.as_ref().unwrap();
        assert!(tr.get(0, 1).is_zero());
        assert_eq!(tr.get(1, 0), &q(1, 4));
    }

    #[test]
    fn secret_coalition_extracts_total_surplus() {
        let g = g_div3(TransferMode::TuSecret);
        let aut = single_state("path", Outcome::unblocked(2));
        let v = verify_tupt(&aut, &g, &q(3, 5), None).unwrap();
        let w = v.witness().expect("winning pair extracts in secret");
        assert_eq!(w.state, StateId::Index(0));
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 3);
        // the surplus is split evenly through the smallest member
        assert_eq!(w.gains, vec![(0, q(1, 20)), (1, q(1, 20))]);
        assert_eq!(w.slack, q(1, 20));
        assert_eq!(w.transfers.as_ref().unwrap().get(1, 0), &q(1, 8));
        // member-level accounting agrees on instability here
        assert!(!verify_tupm(&aut, &g, &q(3, 5)).unwrap().is_stable());

        // a constant core recommendation is immune in both accountings
        let core = single_state("core", Outcome::unblocked(14));
        assert!(verify_tupt(&core, &g, &q(3, 5), None).unwrap().is_stable());
        assert!(verify_tupm(&core, &g, &q(3, 5)).unwrap().is_stable());
    }

    #[test]
    fn partial_secrecy_uses_the_declared_set() {
        let mut gp = g_div3(TransferMode::TuPartial);
        gp.secret_coalitions = vec![members(&[0, 1])];
        let aut = single_state("path", Outcome::unblocked(2));
        let from_declared = verify_tupt(&aut, &gp, &q(3, 5), None).unwrap();
        let gs = g_div3(TransferMode::TuSecret);
        let overridden =
            verify_tupt(&aut, &gs, &q(3, 5), Some(&[members(&[0, 1])])).unwrap();
        let w = from_declared.witness().expect("the declared pair extracts");
        assert_eq!(w.coalition, members(&[0, 1]));
        assert_eq!(w.alternative, 3);
        assert_eq!(overridden.witness(), Some(w));
    }

    #[test]
    fn reactions_reading_secret_transfers_are_rejected() {
        let g = g_div3(TransferMode::TuSecret);
        let watching = ConventionAutomaton::Explicit(ExplicitAutomaton {
            states: vec![
                ExplicitState {
                    label: "path".into(),
                    output: Outcome::unblocked(2),
                    rules: vec![
                        rule(
                            OutcomePattern::Blocked {
                                coalitions: None,
                                alternatives: None,
                                guard: Some(TransferGuard {
                                    payoff_terms: vec![],
                                    transfer_terms: vec![(0, 1, Q::one())],
                                    constant: q(-1, 8),
                                    strict: false,
                                }),
                            },
                            1,
                        ),
                        rule(OutcomePattern::Any, 0),
                    ],
                },
                ExplicitState {
                    label: "core".into(),
                    output: Outcome::unblocked(14),
                    rules: vec![rule(OutcomePattern::Any, 1)],
                },
            ],
            initial: 0,
        });
        assert!(matches!(
            verify_tupt(&watching, &g, &q(3, 5), None),
            Err(Error::Measurability(_))
        ));
        // member-level accounting has no secrecy to violate
        assert!(verify_tupm(&watching, &g, &q(3, 5)).is_ok());
    }

    #[test]
    fn guarantee_check_flags_totals_below_stage_minmax() {
        let g = g_div3(TransferMode::TuSecret);
        let all: Vec<Coalition> = all_coalitions(3).collect();
        let core = single_state("core", Outcome::unblocked(14));
        assert_eq!(coalition_value_guarantee_check(&core, &g, &q(3, 5), &all).unwrap(), None);
        let path = single_state("path", Outcome::unblocked(2));
        let viol = coalition_value_guarantee_check(&path, &g, &q(3, 5), &all)
            .unwrap()
            .expect("a winning pair is held below its guarantee");
        assert_eq!(viol.state, StateId::Index(0));
        assert_eq!(viol.coalition, members(&[0, 1]));
        assert_eq!(viol.total, q(1, 2));
        assert_eq!(viol.bound, Q::one());
    }

    #[test]
    fn certification_finds_the_threshold() {
        let g = g_div3(TransferMode::TuPublic);
        let guard = ReversionGuard { player: 0, threshold: Q::zero() };
        let aut =
            core_reversion_convention(&g, Outcome::unblocked(2), 14, Some(guard)).unwrap();
        let grid =
            [q(1, 10), q(3, 10), q(2, 5), q(49, 100), q(1, 2), q(3, 5), q(9, 10)];
        let table = min_delta_certify(&grid, |d| match verify_tupm(&aut, &g, d) {
            Ok(v) if v.is_stable() => Ok(()),
            Ok(_) => Err("profitable deviation found".into()),
            Err(e) => Err(e.to_string()),
        })
        .unwrap();
        assert_eq!(table.certified, Some(q(1, 2)));
        assert!(table.monotone);
        assert_eq!(table.rows.iter().filter(|r| r.pass).count(), 3);
        assert!(table.rows[0].reason.is_some());
    }

    #[test]
    fn certification_grid_validation_and_edge_cases() {
        assert!(min_delta_certify(&[], |_| Ok(())).is_err());
        assert!(min_delta_certify(&[q(1, 2), q(1, 3)], |_| Ok(())).is_err());
        assert!(min_delta_certify(&[Q::one()], |_| Ok(())).is_err());
        let none =
            min_delta_certify(&[q(1, 10), q(1, 5)], |_| Err("never".into())).unwrap();
        assert_eq!(none.certified, None);
        assert!(none.monotone);
        let bumpy = min_delta_certify(&[q(1, 10), q(3, 10), q(2, 5), q(3, 5)], |d| {
            if *d == q(3, 10) || *d >= q(3, 5) {
                Ok(())
            } else {
                Err("dip".into())
            }
        })
        .unwrap();
        assert_eq!(bumpy.certified, Some(q(3, 5)));
        assert!(!bumpy.monotone);
    }

    fn tiny_public_folk() -> (StageGame, FolkAutomaton) {
        let g = g_pd(TransferMode::TuPublic);
        let step = |alt: usize| OutcomeStep { alt, transfers: None };
        let phase = |tag: PhaseTag| Phase {
            tag,
            target: vec![qi(2), qi(2)],
            steps: vec![step(0)],
            prefix_len: 0,
        };
        let f = FolkAutomaton {
            regime: TransferMode::TuPublic,
            protected: vec![],
            phases: vec![
                phase(PhaseTag::Target),
                phase(PhaseTag::RewardPlayer(0)),
                phase(PhaseTag::RewardPlayer(1)),
            ],
            initial_phase: 0,
            punishments: vec![
                PunishmentSpec { scope: Coalition::singleton(0), alt: 1, resume_phase: 1 },
                PunishmentSpec { scope: Coalition::singleton(1), alt: 2, resume_phase: 2 },
            ],
            params: FolkParameters {
                delta: q(1, 2),
                kappa: qi(1),
                punish_len: 2,
                epsilon: q(1, 4),
                target: vec![qi(2), qi(2)],
            },
            floors: vec![qi(1), qi(1)],
        };
        (g, f)
    }

    #[test]
    fn public_folk_cells_mirror_the_scapegoat_rule() {
        let (g, f) = tiny_public_folk();
        let aut = ConventionAutomaton::Folk(f);
        aut.validate(&g).unwrap();
        let t_rec = TransferMatrix::zero(2);

        // a grand block at the target: one cell per scapegoat
        let w = StateId::Normal { phase: 0, tau: 0 };
        let rec = aut.output(w);
        let c = g.grand();
        let map = VarMap::member_rows(c, 2);
        let fr = Frame { w, rec: &rec, c, a_dev: 3, t_rec: &t_rec, map: &map };
        let cells = deviation_cells(&aut, &g, &fr);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].succ, StateId::Punish { pun: 0, tau: 0 });
        assert_eq!(cells[1].succ, StateId::Punish { pun: 1, tau: 0 });
        // smallest index wins ties: its condition is weak, the rival's strict
        assert_eq!(cells[0].cons.len(), 1);
        assert!(!cells[0].cons[0].strict);
        assert!(cells[1].cons[0].strict);
        // score difference at mutual defection: u_1 - u_0 = 2x01 - 2x10
        let e01 = map.index(0, 1).unwrap();
        let e10 = map.index(1, 0).unwrap();
        assert_eq!(cells[0].cons[0].expr.coeffs[e01], qi(2));
        assert_eq!(cells[0].cons[0].expr.coeffs[e10], qi(-2));
        assert!(cells[0].cons[0].expr.constant.is_zero());

        // the punished player blocking alone: either side of the floor
        // restarts her punishment
        let wp = StateId::Punish { pun: 0, tau: 1 };
        let recp = aut.output(wp);
        let c0 = Coalition::singleton(0);
        let map0 = VarMap::member_rows(c0, 2);
        let frp = Frame { w: wp, rec: &recp, c: c0, a_dev: 3, t_rec: &t_rec, map: &map0 };
        let cells = deviation_cells(&aut, &g, &frp);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|cl| cl.succ == StateId::Punish { pun: 0, tau: 0 }));
        assert!(!cells[0].cons[0].strict);
        assert!(cells[1].cons[0].strict);

        // a bystander blocking during the punishment is punished herself
        let c1 = Coalition::singleton(1);
        let map1 = VarMap::member_rows(c1, 2);
        let frb = Frame { w: wp, rec: &recp, c: c1, a_dev: 1, t_rec: &t_rec, map: &map1 };
        let cells = deviation_cells(&aut, &g, &frb);
        assert_eq!(cells.len(), 1);
        assert!(cells[0].cons.is_empty());
        assert_eq!(cells[0].succ, StateId::Punish { pun: 1, tau: 0 });

        // punished player plus bystander: floor restart, else the bystander
        // is the only scapegoat candidate
        let cb = g.grand();
        let mapb = VarMap::member_rows(cb, 2);
        let frg = Frame { w: wp, rec: &recp, c: cb, a_dev: 3, t_rec: &t_rec, map: &mapb };
        let cells = deviation_cells(&aut, &g, &frg);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].succ, StateId::Punish { pun: 0, tau: 0 });
        assert!(!cells[0].cons[0].strict);
        assert_eq!(cells[1].succ, StateId::Punish { pun: 1, tau: 0 });
        assert!(cells[1].cons[0].strict);
    }

    fn tiny_folk_with_coalition_tags(regime: TransferMode) -> (StageGame, FolkAutomaton) {
        let g = g_pd(regime);
        let step = |alt: usize| OutcomeStep { alt, transfers: None };
        let phase = |tag: PhaseTag| Phase {
            tag,
            target: vec![qi(2), qi(2)],
            steps: vec![step(0)],
            prefix_len: 0,
        };
        let f = FolkAutomaton {
            regime,
            protected: vec![],
            phases: vec![
                phase(PhaseTag::Target),
                phase(PhaseTag::RewardCoalition(Coalition::singleton(0))),
                phase(PhaseTag::RewardCoalition(Coalition::singleton(1))),
            ],
            initial_phase: 0,
            punishments: vec![
                PunishmentSpec { scope: Coalition::singleton(0), alt: 1, resume_phase: 1 },
                PunishmentSpec { scope: Coalition::singleton(1), alt: 2, resume_phase: 2 },
            ],
            params: FolkParameters {
                delta: q(1, 2),
                kappa: qi(1),
                punish_len: 2,
                epsilon: q(1, 4),
                target: vec![qi(2), qi(2)],
            },
            floors: vec![qi(1), qi(1)],
        };
        (g, f)
    }

    #[test]
    fn secret_folk_cells_ignore_transfers() {
        let (g, f) = tiny_folk_with_coalition_tags(TransferMode::TuSecret);
        let aut = ConventionAutomaton::Folk(f);
        aut.validate(&g).unwrap();
        let t_rec = TransferMatrix::zero(2);

        let w = StateId::Normal { phase: 0, tau: 0 };
        let rec = aut.output(w);
        let c0 = Coalition::singleton(0);
        let map0 = VarMap::member_rows(c0, 2);
        let fr = Frame { w, rec: &rec, c: c0, a_dev: 2, t_rec: &t_rec, map: &map0 };
        let cells = deviation_cells(&aut, &g, &fr);
        assert_eq!(cells.len(), 1);
        assert!(cells[0].cons.is_empty());
        assert_eq!(cells[0].succ, StateId::Punish { pun: 0, tau: 0 });

        // a grand block is treated like compliance
        let cg = g.grand();
        let mapg = VarMap::member_rows(cg, 2);
        let frg = Frame { w, rec: &rec, c: cg, a_dev: 3, t_rec: &t_rec, map: &mapg };
        let cells = deviation_cells(&aut, &g, &frg);
        assert_eq!(cells.len(), 1);
        assert!(cells[0].cons.is_empty());
        assert_eq!(cells[0].succ, StateId::Normal { phase: 0, tau: 0 });

        // punishments advance to their resume phase on a grand block
        let wp = StateId::Punish { pun: 0, tau: 1 };
        let recp = aut.output(wp);
        let frp = Frame { w: wp, rec: &recp, c: cg, a_dev: 3, t_rec: &t_rec, map: &mapg };
        let cells = deviation_cells(&aut, &g, &frp);
        assert_eq!(cells[0].succ, StateId::Normal { phase: 1, tau: 0 });
    }

    #[test]
    fn partial_folk_cells_protect_singletons_without_reading_payoffs() {
        let (g, f) = tiny_folk_with_coalition_tags(TransferMode::TuPartial);
        let aut = ConventionAutomaton::Folk(f);
        aut.validate(&g).unwrap();
        let t_rec = TransferMatrix::zero(2);

        // protected blocker during her own punishment: one unconditional
        // restart, where the public rule would consult the floor
        let wp = StateId::Punish { pun: 0, tau: 0 };
        let recp = aut.output(wp);
        let c0 = Coalition::singleton(0);
        let map0 = VarMap::member_rows(c0, 2);
        let fr = Frame { w: wp, rec: &recp, c: c0, a_dev: 3, t_rec: &t_rec, map: &map0 };
        let cells = deviation_cells(&aut, &g, &fr);
        assert_eq!(cells.len(), 1);
        assert!(cells[0].cons.is_empty());
        assert_eq!(cells[0].succ, StateId::Punish { pun: 0, tau: 0 });

        // the grand coalition is not protected: payoff-scored scapegoats
        let w = StateId::Normal { phase: 0, tau: 0 };
        let rec = aut.output(w);
        let cg = g.grand();
        let mapg = VarMap::member_rows(cg, 2);
        let frg = Frame { w, rec: &rec, c: cg, a_dev: 3, t_rec: &t_rec, map: &mapg };
        let cells = deviation_cells(&aut, &g, &frg);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].succ, StateId::Punish { pun: 0, tau: 0 });
        assert_eq!(cells[1].succ, StateId::Punish { pun: 1, tau: 0 });
    }

    #[test]
    fn witnesses_serialize_round_trip() {
        let g = g_div3(TransferMode::TuSecret);
        let aut = single_state("path", Outcome::unblocked(2));
        let v = verify_tupt(&aut, &g, &q(3, 5), None).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Verdict = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let table = min_delta_certify(&[q(1, 2)], |_| Err("x".into())).unwrap();
        let s = serde_json::to_string(&table).unwrap();
        let back: CertificationTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, table);
    }
}
