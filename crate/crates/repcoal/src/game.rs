//! Stage games: players, alternatives, effectivity correspondences, transfers.

use crate::error::{Error, Result};
use crate::rat::{fmt_q, qi, sum, Q};
use num::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type PlayerId = usize;

/// Coalition as a bitset over player indices. Ordered by raw bit value, which
/// fixes the deterministic enumeration order used for witnesses and caches.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coalition(pub u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn singleton(i: PlayerId) -> Self {
        Coalition(1 << i)
    }

    pub fn from_members<I>(members: I) -> Self
    where
        I: IntoIterator,
        I::Item: std::borrow::Borrow<PlayerId>,
    {
        use std::borrow::Borrow;
        Coalition(members.into_iter().fold(0, |acc, i| acc | (1 << *i.borrow())))
    }

    pub fn all(n: usize) -> Self {
        Coalition((1u32 << n) - 1)
    }

    pub fn contains(&self, i: PlayerId) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn members(&self) -> impl Iterator<Item = PlayerId> + '_ {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0)
    }

    pub fn without(&self, i: PlayerId) -> Self {
        Coalition(self.0 & !(1 << i))
    }

    pub fn is_subset_of(&self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn complement(&self, n: usize) -> Self {
        Coalition(!self.0 & ((1u32 << n) - 1))
    }

    pub fn intersect(&self, other: Coalition) -> Self {
        Coalition(self.0 & other.0)
    }

    /// Smallest member; panics on the empty coalition.
    pub fn min_member(&self) -> PlayerId {
        debug_assert!(!self.is_empty());
        self.0.trailing_zeros() as usize
    }

    pub fn label(&self, g: &StageGame) -> String {
        let names: Vec<&str> = self.members().map(|i| g.players[i].as_str()).collect();
        format!("{{{}}}", names.join(","))
    }
}

impl std::fmt::Debug for Coalition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "C{{{}}}", self.members().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
    }
}

/// All nonempty coalitions over n players, ascending by bit value.
pub fn all_coalitions(n: usize) -> impl Iterator<Item = Coalition> {
    (1u32..(1u32 << n)).map(Coalition)
}

/// Proper nonempty coalitions (excludes the grand coalition).
pub fn proper_coalitions(n: usize) -> impl Iterator<Item = Coalition> {
    (1u32..(1u32 << n) - 1).map(Coalition)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub label: String,
    #[serde(with = "crate::rat::qvecserde")]
    pub payoffs: Vec<Q>,
}

/// Pairwise nonnegative transfers; diagonal is identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    n: usize,
    #[serde(with = "crate::rat::qvecserde")]
    entries: Vec<Q>,
}

impl TransferMatrix {
    pub fn zero(n: usize) -> Self {
        TransferMatrix { n, entries: vec![Q::zero(); n * n] }
    }

    pub fn from_entries(n: usize, entries: Vec<Q>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "transfer matrix needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        let t = TransferMatrix { n, entries };
        t.validate()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: PlayerId, to: PlayerId) -> &Q {
        &self.entries[from * self.n + to]
    }

    pub fn set(&mut self, from: PlayerId, to: PlayerId, v: Q) {
        assert!(from != to, "diagonal transfer");
        self.entries[from * self.n + to] = v;
    }

    pub fn incoming(&self, to: PlayerId) -> Q {
        (0..self.n).map(|j| self.get(j, to).clone()).fold(Q::zero(), |a, b| a + b)
    }

    pub fn outgoing(&self, from: PlayerId) -> Q {
        (0..self.n).map(|j| self.get(from, j).clone()).fold(Q::zero(), |a, b| a + b)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.is_zero())
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if !self.get(i, i).is_zero() {
                return Err(Error::InvalidInput(format!("nonzero diagonal transfer at ({i},{i})")));
            }
            for j in 0..self.n {
                if self.get(i, j).is_negative() {
                    return Err(Error::InvalidInput(format!(
                        "negative transfer {} at ({i},{j})",
                        fmt_q(self.get(i, j))
                    )));
                }
            }
        }
        Ok(())
    }

    /// Overwrite the rows of `members` with the rows of `replacement`.
    pub fn with_rows_from(&self, members: Coalition, replacement: &TransferMatrix) -> TransferMatrix {
        let mut out = self.clone();
        for i in members.members() {
            for j in 0..self.n {
                out.entries[i * self.n + j] = replacement.entries[i * self.n + j].clone();
            }
        }
        out
    }
}

/// One period's realized outcome: chosen alternative, who blocked (empty set
/// means the recommendation stood), and transfers where the regime has them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub alt: usize,
    pub blockers: Coalition,
    pub transfers: Option<TransferMatrix>,
}

impl Outcome {
    pub fn unblocked(alt: usize) -> Self {
        Outcome { alt, blockers: Coalition::EMPTY, transfers: None }
    }

    pub fn unblocked_tu(alt: usize, t: TransferMatrix) -> Self {
        Outcome { alt, blockers: Coalition::EMPTY, transfers: Some(t) }
    }

    pub fn blocked(alt: usize, c: Coalition) -> Self {
        Outcome { alt, blockers: c, transfers: None }
    }

    pub fn blocked_tu(alt: usize, c: Coalition, t: TransferMatrix) -> Self {
        Outcome { alt, blockers: c, transfers: Some(t) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EffectivityRule {
    /// Alternatives are action profiles in row-major order (player 0 most
    /// significant); a coalition can re-pick its own components.
    StrategicForm { dims: Vec<usize> },
    /// Explicit lists per (coalition, alternative); queries are made reflexive.
    ExplicitTable {
        #[serde(with = "tableserde")]
        table: BTreeMap<(Coalition, usize), Vec<usize>>,
    },
    /// Winning coalitions can move anywhere, the rest are stuck.
    SimpleGameRule { minimal_winning: Vec<Coalition> },
}

/// Serde adapter: tuple-keyed maps become entry lists in JSON.
mod tableserde {
    use super::Coalition;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    type Table = BTreeMap<(Coalition, usize), Vec<usize>>;

    pub fn serialize<S: Serializer>(t: &Table, s: S) -> Result<S::Ok, S::Error> {
        t.iter()
            .map(|(&(c, a), alts)| (c.0, a, alts.clone()))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Table, D::Error> {
        let raw = Vec::<(u32, usize, Vec<usize>)>::deserialize(d)?;
        Ok(raw.into_iter().map(|(c, a, alts)| ((Coalition(c), a), alts)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferMode {
    Ntu,
    TuPublic,
    TuSecret,
    TuPartial,
}

impl TransferMode {
    pub fn has_transfers(&self) -> bool {
        !matches!(self, TransferMode::Ntu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageGame {
    pub players: Vec<String>,
    pub alternatives: Vec<Alternative>,
    pub effectivity: EffectivityRule,
    /// Assumption on grand-coalition power: E_N(a) = A at every a.
    pub grand_omnipotent: bool,
    pub transfer_mode: TransferMode,
    /// Coalitions with secret transfers under TuPartial (ignored otherwise).
    pub secret_coalitions: Vec<Coalition>,
}

impl StageGame {
    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn num_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn payoff(&self, i: PlayerId, a: usize) -> &Q {
        &self.alternatives[a].payoffs[i]
    }

    pub fn payoffs(&self, a: usize) -> &[Q] {
        &self.alternatives[a].payoffs
    }

    pub fn grand(&self) -> Coalition {
        Coalition::all(self.n())
    }

    pub fn total_payoff(&self, a: usize) -> Q {
        sum(self.payoffs(a))
    }

    pub fn coalition_payoff(&self, c: Coalition, a: usize) -> Q {
        c.members().map(|i| self.payoff(i, a).clone()).fold(Q::zero(), |x, y| x + y)
    }

    /// The set of secret coalitions implied by the transfer mode.
    pub fn secrecy_set(&self) -> Vec<Coalition> {
        match self.transfer_mode {
            TransferMode::Ntu | TransferMode::TuPublic => Vec::new(),
            TransferMode::TuSecret => all_coalitions(self.n()).collect(),
            TransferMode::TuPartial => self.secret_coalitions.clone(),
        }
    }

    /// E_C(a): alternatives the coalition can force, always including a,
    /// sorted ascending. The grand coalition gets everything when the game is
    /// declared grand-omnipotent.
    pub fn effectivity(&self, c: Coalition, a: usize) -> Vec<usize> {
        debug_assert!(a < self.num_alternatives());
        if c.is_empty() {
            return vec![a];
        }
        if self.grand_omnipotent && c == self.grand() {
            return (0..self.num_alternatives()).collect();
        }
        match &self.effectivity {
            EffectivityRule::StrategicForm { dims } => {
                let base = decode_profile(a, dims);
                let mut out = Vec::new();
                for alt in 0..self.num_alternatives() {
                    let p = decode_profile(alt, dims);
                    if (0..self.n()).all(|i| c.contains(i) || p[i] == base[i]) {
                        out.push(alt);
                    }
                }
                out
            }
            EffectivityRule::ExplicitTable { table } => {
                let mut out = table.get(&(c, a)).cloned().unwrap_or_default();
                if !out.contains(&a) {
                    out.push(a);
                }
                out.sort_unstable();
                out.dedup();
                out
            }
            EffectivityRule::SimpleGameRule { minimal_winning } => {
                if minimal_winning.iter().any(|w| w.is_subset_of(c)) {
                    (0..self.num_alternatives()).collect()
                } else {
                    vec![a]
                }
            }
        }
    }

    /// Experienced payoff u_i(a, T) = v_i(a) + incoming - outgoing.
    pub fn experienced_payoff(&self, i: PlayerId, a: usize, t: Option<&TransferMatrix>) -> Q {
        let mut u = self.payoff(i, a).clone();
        if let Some(t) = t {
            u += t.incoming(i) - t.outgoing(i);
        }
        u
    }

    pub fn experienced_profile(&self, a: usize, t: Option<&TransferMatrix>) -> Vec<Q> {
        (0..self.n()).map(|i| self.experienced_payoff(i, a, t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidGame("no players".into()));
        }
        if n > 16 {
            return Err(Error::InvalidGame(format!("{n} players exceeds the supported 16")));
        }
        if self.alternatives.is_empty() {
            return Err(Error::InvalidGame("no alternatives".into()));
        }
        for (idx, alt) in self.alternatives.iter().enumerate() {
            if alt.payoffs.len() != n {
                return Err(Error::InvalidGame(format!(
                    "alternative {idx} ({}) has {} payoffs for {n} players",
                    alt.label,
                    alt.payoffs.len()
                )));
            }
        }
        match &self.effectivity {
            EffectivityRule::StrategicForm { dims } => {
                if dims.len() != n {
                    return Err(Error::InvalidGame(format!(
                        "strategic form has {} dimensions for {n} players",
                        dims.len()
                    )));
                }
                if dims.iter().any(|&d| d == 0) {
                    return Err(Error::InvalidGame("zero-size action set".into()));
                }
                let prod: usize = dims.iter().product();
                if prod != self.num_alternatives() {
                    return Err(Error::InvalidGame(format!(
                        "strategic form implies {prod} profiles but {} alternatives given",
                        self.num_alternatives()
                    )));
                }
            }
            EffectivityRule::ExplicitTable { table } => {
                for ((c, a), alts) in table {
                    if c.is_empty() || !c.is_subset_of(self.grand()) {
                        return Err(Error::InvalidGame(format!("effectivity row for invalid coalition {c:?}")));
                    }
                    if *a >= self.num_alternatives() {
                        return Err(Error::InvalidGame(format!("effectivity row at unknown alternative {a}")));
                    }
                    if let Some(bad) = alts.iter().find(|x| **x >= self.num_alternatives()) {
                        return Err(Error::InvalidGame(format!("effectivity target {bad} out of range")));
                    }
                }
            }
            EffectivityRule::SimpleGameRule { minimal_winning } => {
                if minimal_winning.is_empty() {
                    return Err(Error::InvalidGame("simple-game rule with no winning coalitions".into()));
                }
                for w in minimal_winning {
                    if w.is_empty() || !w.is_subset_of(self.grand()) {
                        return Err(Error::InvalidGame(format!("invalid winning coalition {w:?}")));
                    }
                }
            }
        }
        if self.transfer_mode == TransferMode::TuPartial {
            for c in &self.secret_coalitions {
                if c.is_empty() || !c.is_subset_of(self.grand()) {
                    return Err(Error::InvalidGame(format!("invalid secret coalition {c:?}")));
                }
            }
        }
        Ok(())
    }

    /// No pair of players has equivalent utilities: reject v_i = k + λ·v_j
    /// (λ > 0) holding across every alternative, including the constant case.
    pub fn check_neu(&self) -> Result<()> {
        let n = self.n();
        let m = self.num_alternatives();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let vi = |a: usize| self.payoff(i, a);
                let vj = |a: usize| self.payoff(j, a);
                // Find two alternatives separating v_j, if any.
                let pivot = (1..m).find(|&a| vj(a) != vj(0));
                let (k, lambda) = match pivot {
                    None => {
                        // v_j constant; equivalent iff v_i constant too (λ=1).
                        if (1..m).all(|a| vi(a) == vi(0)) {
                            (vi(0) - vj(0), Q::one())
                        } else {
                            continue;
                        }
                    }
                    Some(b) => {
                        let lambda = (vi(b) - vi(0)) / (vj(b) - vj(0));
                        if !lambda.is_positive() {
                            continue;
                        }
                        let k = vi(0) - &lambda * vj(0);
                        if !(0..m).all(|a| *vi(a) == &k + &lambda * vj(a)) {
                            continue;
                        }
                        (k, lambda)
                    }
                };
                return Err(Error::EquivalentUtilities { i, j, k, lambda });
            }
        }
        Ok(())
    }
}

pub fn decode_profile(index: usize, dims: &[usize]) -> Vec<usize> {
    let mut rem = index;
    let mut out = vec![0; dims.len()];
    for i in (0..dims.len()).rev() {
        out[i] = rem % dims[i];
        rem /= dims[i];
    }
    out
}

pub fn encode_profile(profile: &[usize], dims: &[usize]) -> usize {
    profile.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Build nonnegative transfers on top of v(a) realizing the target profile:
/// surplus players route their excess through a hub to deficit players.
/// Requires Σ target = Σ v(a).
pub fn transfers_realizing(g: &StageGame, a: usize, target: &[Q]) -> Result<TransferMatrix> {
    let n = g.n();
    if target.len() != n {
        return Err(Error::InvalidInput("target length mismatch".into()));
    }
    let delta: Vec<Q> = (0..n).map(|i| g.payoff(i, a) - &target[i]).collect();
    if !sum(&delta).is_zero() {
        return Err(Error::InvalidInput(format!(
            "transfer target total {} differs from alternative total {}",
            fmt_q(&sum(target)),
            fmt_q(&g.total_payoff(a))
        )));
    }
    let mut t = TransferMatrix::zero(n);
    // Hub = first deficit player (or 0 when the target is already met).
    let hub = (0..n).find(|&i| delta[i].is_negative()).unwrap_or(0);
    for i in 0..n {
        if i != hub && delta[i].is_positive() {
            t.set(i, hub, delta[i].clone());
        }
    }
    for i in 0..n {
        if i != hub && delta[i].is_negative() {
            t.set(hub, i, -delta[i].clone());
        }
    }
    debug_assert_eq!(g.experienced_profile(a, Some(&t)), target.to_vec());
    Ok(t)
}

pub fn coalition_vec_label(g: &StageGame, cs: &[Coalition]) -> String {
    cs.iter().map(|c| c.label(g)).collect::<Vec<_>>().join(", ")
}

pub mod fixtures {
    //! Shared example games used across tests and docs.

    use super::*;
    use crate::rat::q;

    pub const ROOM_AB: usize = 0;
    pub const ROOM_AC: usize = 1;
    pub const ROOM_BC: usize = 2;
    pub const ROOM_SINGLES: usize = 3;

    /// Three-player one-room matching game: alternatives are the three pair
    /// matchings plus everyone-single. A pair can form its own match; a
    /// player can dissolve their match (freeing the partner); the triple can
    /// rearrange everything.
    pub fn g_room() -> StageGame {
        let alts = vec![
            Alternative { label: "AB|C".into(), payoffs: vec![qi(3), qi(2), qi(1)] },
            Alternative { label: "AC|B".into(), payoffs: vec![qi(2), qi(1), qi(3)] },
            Alternative { label: "BC|A".into(), payoffs: vec![qi(1), qi(3), qi(2)] },
            Alternative { label: "A|B|C".into(), payoffs: vec![qi(1), qi(1), qi(1)] },
        ];
        // matched pair per alternative (None for all-singles)
        let matched = [Some((0usize, 1usize)), Some((0, 2)), Some((1, 2)), None];
        let match_alt = |i: PlayerId, j: PlayerId| -> usize {
            match (i.min(j), i.max(j)) {
                (0, 1) => ROOM_AB,
                (0, 2) => ROOM_AC,
                (1, 2) => ROOM_BC,
                _ => unreachable!(),
            }
        };
        let mut table: BTreeMap<(Coalition, usize), Vec<usize>> = BTreeMap::new();
        for a in 0..alts.len() {
            for i in 0..3 {
                // Singleton: stay, or dissolve own match if any.
                let mut opts = vec![a];
                if let Some((x, y)) = matched[a] {
                    if i == x || i == y {
                        opts.push(ROOM_SINGLES);
                    }
                }
                opts.sort_unstable();
                opts.dedup();
                table.insert((Coalition::singleton(i), a), opts);
            }
            for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
                let mut opts = vec![a, match_alt(i, j)];
                opts.sort_unstable();
                opts.dedup();
                table.insert((Coalition::from_members([i, j]), a), opts);
            }
            // The triple rearranges freely (grand_omnipotent covers it too).
            table.insert((Coalition::all(3), a), (0..alts.len()).collect());
        }
        StageGame {
            players: vec!["Alice".into(), "Bob".into(), "Carol".into()],
            alternatives: alts,
            effectivity: EffectivityRule::ExplicitTable { table },
            grand_omnipotent: true,
            transfer_mode: TransferMode::Ntu,
            secret_coalitions: Vec::new(),
        }
    }

    /// Prisoner's dilemma in strategic form; used with transfers in TU tests.
    pub fn g_pd(mode: TransferMode) -> StageGame {
        StageGame {
            players: vec!["1".into(), "2".into()],
            alternatives: vec![
                Alternative { label: "CC".into(), payoffs: vec![qi(2), qi(2)] },
                Alternative { label: "CD".into(), payoffs: vec![qi(0), qi(3)] },
                Alternative { label: "DC".into(), payoffs: vec![qi(3), qi(0)] },
                Alternative { label: "DD".into(), payoffs: vec![qi(1), qi(1)] },
            ],
            effectivity: EffectivityRule::StrategicForm { dims: vec![2, 2] },
            grand_omnipotent: false,
            transfer_mode: mode,
            secret_coalitions: Vec::new(),
        }
    }

    /// Divide-the-dollar on a 1/r grid among n players with a simple-game
    /// effectivity rule. Alternatives are all divisions, lexicographic by
    /// (x_1, ..., x_n) descending mass on earlier coordinates first omitted:
    /// enumeration is lexicographic ascending over compositions.
    pub fn divide_dollar(n: usize, r: usize, minimal_winning: Vec<Coalition>, mode: TransferMode) -> StageGame {
        let mut alts = Vec::new();
        let mut cur = vec![0usize; n];
        enumerate_compositions(r, n, 0, &mut cur, &mut alts);
        let alternatives = alts
            .into_iter()
            .map(|comp| Alternative {
                label: comp.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(":"),
                payoffs: comp.iter().map(|&k| q(k as i64, r as i64)).collect(),
            })
            .collect();
        StageGame {
            players: (1..=n).map(|i| i.to_string()).collect(),
            alternatives,
            effectivity: EffectivityRule::SimpleGameRule { minimal_winning },
            grand_omnipotent: false,
            transfer_mode: mode,
            secret_coalitions: Vec::new(),
        }
    }

    fn enumerate_compositions(total: usize, n: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == n - 1 {
            cur[pos] = total;
            out.push(cur.clone());
            return;
        }
        for k in 0..=total {
            cur[pos] = k;
            enumerate_compositions(total - k, n, pos + 1, cur, out);
        }
    }

    /// Quarter-grid divide-the-dollar with veto player 1 (minimal winning
    /// coalitions {1,2} and {1,3}).
    pub fn g_div3(mode: TransferMode) -> StageGame {
        divide_dollar(
            3,
            4,
            vec![Coalition::from_members([0, 1]), Coalition::from_members([0, 2])],
            mode,
        )
    }

    /// Free division of `units` in multiples of `step` among n players:
    /// only the grand coalition can move between divisions, so every
    /// division is unblockable and the stage core is everything.
    pub fn g_free_split(n: usize, units: i64, step: i64, mode: TransferMode) -> StageGame {
        assert!(step > 0 && units >= 0 && units % step == 0);
        let r = (units / step) as usize;
        let mut comps = Vec::new();
        let mut cur = vec![0usize; n];
        enumerate_compositions(r, n, 0, &mut cur, &mut comps);
        let alternatives = comps
            .into_iter()
            .map(|comp| Alternative {
                label: comp
                    .iter()
                    .map(|&k| (k as i64 * step).to_string())
                    .collect::<Vec<_>>()
                    .join("|"),
                payoffs: comp.iter().map(|&k| qi(k as i64 * step)).collect(),
            })
            .collect();
        StageGame {
            players: (1..=n).map(|i| i.to_string()).collect(),
            alternatives,
            effectivity: EffectivityRule::ExplicitTable { table: BTreeMap::new() },
            grand_omnipotent: true,
            transfer_mode: mode,
            secret_coalitions: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::rat::q;

    #[test]
    fn coalition_basics() {
        let c = Coalition::from_members([0, 2]);
        assert!(c.contains(0) && !c.contains(1) && c.contains(2));
        assert_eq!(c.len(), 2);
        assert_eq!(c.min_member(), 0);
        assert_eq!(c.complement(3), Coalition::singleton(1));
        assert_eq!(all_coalitions(2).count(), 3);
        assert_eq!(proper_coalitions(3).count(), 6);
        let order: Vec<u32> = all_coalitions(2).map(|c| c.0).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn room_game_is_well_formed() {
        let g = g_room();
        assert!(g.validate().is_ok());
        assert_eq!(g.n(), 3);
        assert_eq!(g.payoffs(ROOM_AB), &[qi(3), qi(2), qi(1)]);
        assert_eq!(g.payoffs(ROOM_BC), &[qi(1), qi(3), qi(2)]);
    }

    #[test]
    fn room_effectivity_matches_encoding() {
        let g = g_room();
        // Bob and Carol can abandon the Alice-Bob match for their own room.
        let bc = Coalition::from_members([1, 2]);
        assert!(g.effectivity(bc, ROOM_AB).contains(&ROOM_BC));
        // Alice alone: stay or dissolve her match (everyone single).
        for a in 0..4 {
            let opts = g.effectivity(Coalition::singleton(0), a);
            let mut expect = vec![a];
            if a == ROOM_AB || a == ROOM_AC {
                expect.push(ROOM_SINGLES);
            }
            expect.sort_unstable();
            expect.dedup();
            assert_eq!(opts, expect, "alternative {a}");
        }
        // Reflexivity everywhere.
        for c in all_coalitions(3) {
            for a in 0..4 {
                assert!(g.effectivity(c, a).contains(&a));
            }
        }
        // Carol single at AB|C has no dissolve move.
        assert_eq!(g.effectivity(Coalition::singleton(2), ROOM_AB), vec![ROOM_AB]);
    }

    #[test]
    fn strategic_form_effectivity() {
        let g = g_pd(TransferMode::Ntu);
        assert!(g.validate().is_ok());
        // Row player deviates alone: can swap CC<->DC, CD<->DD.
        assert_eq!(g.effectivity(Coalition::singleton(0), 0), vec![0, 2]);
        assert_eq!(g.effectivity(Coalition::singleton(1), 0), vec![0, 1]);
        assert_eq!(g.effectivity(Coalition::all(2), 3), vec![0, 1, 2, 3]);
    }

    #[test]
    fn simple_game_rule_effectivity() {
        let g = g_div3(TransferMode::Ntu);
        assert!(g.validate().is_ok());
        assert_eq!(g.num_alternatives(), 15);
        let winning = Coalition::from_members([0, 1]);
        let losing = Coalition::from_members([1, 2]);
        assert_eq!(g.effectivity(winning, 0).len(), 15);
        assert_eq!(g.effectivity(losing, 7), vec![7]);
        assert_eq!(g.effectivity(Coalition::singleton(0), 3), vec![3]);
    }

    #[test]
    fn neu_passes_on_room_and_catches_equivalents() {
        assert!(g_room().check_neu().is_ok());
        // Player 2's utility = 1 + 2 * player 1's across every alternative.
        let g = StageGame {
            players: vec!["1".into(), "2".into()],
            alternatives: vec![
                Alternative { label: "a".into(), payoffs: vec![qi(0), qi(1)] },
                Alternative { label: "b".into(), payoffs: vec![qi(1), qi(3)] },
                Alternative { label: "c".into(), payoffs: vec![qi(2), qi(5)] },
            ],
            effectivity: EffectivityRule::StrategicForm { dims: vec![3, 1] },
            grand_omnipotent: false,
            transfer_mode: TransferMode::Ntu,
            secret_coalitions: Vec::new(),
        };
        match g.check_neu() {
            Err(Error::EquivalentUtilities { i, j, k, lambda }) => {
                // First hit in scan order is v_0 = k + λ v_1.
                assert_eq!((i, j), (0, 1));
                assert_eq!(lambda, q(1, 2));
                assert_eq!(k, q(-1, 2));
            }
            other => panic!("expected equivalent-utilities witness, got {other:?}"),
        }
        // Constant duplicated payoffs: degenerate λ=1 case.
        let g2 = StageGame {
            players: vec!["1".into(), "2".into()],
            alternatives: vec![
                Alternative { label: "a".into(), payoffs: vec![qi(2), qi(2)] },
                Alternative { label: "b".into(), payoffs: vec![qi(2), qi(2)] },
            ],
            effectivity: EffectivityRule::StrategicForm { dims: vec![2, 1] },
            grand_omnipotent: false,
            transfer_mode: TransferMode::Ntu,
            secret_coalitions: Vec::new(),
        };
        match g2.check_neu() {
            Err(Error::EquivalentUtilities { lambda, .. }) => assert_eq!(lambda, qi(1)),
            other => panic!("expected degenerate witness, got {other:?}"),
        }
    }

    #[test]
    fn experienced_payoffs_conserve_totals() {
        let g = g_pd(TransferMode::TuPublic);
        let mut t = TransferMatrix::zero(2);
        t.set(0, 1, q(3, 2));
        let u = g.experienced_profile(0, Some(&t));
        assert_eq!(u, vec![q(1, 2), q(7, 2)]);
        assert_eq!(sum(&u), g.total_payoff(0));
        assert!(t.validate().is_ok());
        let mut bad = TransferMatrix::zero(2);
        bad.set(0, 1, qi(-1));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn transfers_realizing_hits_targets() {
        let g = g_pd(TransferMode::TuPublic);
        let target = vec![q(5, 2), q(3, 2)];
        let t = transfers_realizing(&g, 0, &target).unwrap();
        assert_eq!(g.experienced_profile(0, Some(&t)), target);
        assert!(t.validate().is_ok());
        assert!(transfers_realizing(&g, 0, &[qi(4), qi(4)]).is_err());
    }

    #[test]
    fn profile_codec_round_trips() {
        let dims = vec![2, 3, 2];
        for idx in 0..12 {
            let p = decode_profile(idx, &dims);
            assert_eq!(encode_profile(&p, &dims), idx);
        }
    }
}
