//! Dense exact-rational linear programming: two-phase primal simplex with
//! Bland's rule. Small and slow by design; every optimum is re-checked by
//! substitution before being returned, so callers can trust certificates.

use crate::rat::Q;
use num::{Signed, Zero};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    /// Maximum value and one optimal point over the original variables.
    Optimal { value: Q, point: Vec<Q> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<(Q, Vec<Q>)> {
        match self {
            LpOutcome::Optimal { value, point } => Some((value, point)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<(usize, Q)>,
    rel: Rel,
    rhs: Q,
}

/// Maximization problem builder. Variables are nonnegative unless declared
/// free; free variables are internally split into positive parts.
#[derive(Clone, Debug, Default)]
pub struct LpBuilder {
    free: Vec<bool>,
    rows: Vec<Row>,
    objective: Vec<(usize, Q)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.free.push(false);
        self.free.len() - 1
    }

    pub fn add_free_var(&mut self) -> usize {
        self.free.push(true);
        self.free.len() - 1
    }

    pub fn add_vars(&mut self, k: usize) -> std::ops::Range<usize> {
        let start = self.free.len();
        self.free.extend(std::iter::repeat(false).take(k));
        start..self.free.len()
    }

    pub fn num_vars(&self) -> usize {
        self.free.len()
    }

    /// a·x rel rhs. Coefficients may repeat a variable; they are summed.
    pub fn constraint(&mut self, coeffs: Vec<(usize, Q)>, rel: Rel, rhs: Q) {
        for (v, _) in &coeffs {
            assert!(*v < self.free.len(), "constraint references unknown variable");
        }
        self.rows.push(Row { coeffs, rel, rhs });
    }

    pub fn set_objective(&mut self, coeffs: Vec<(usize, Q)>) {
        for (v, _) in &coeffs {
            assert!(*v < self.free.len(), "objective references unknown variable");
        }
        self.objective = coeffs;
    }

    pub fn solve(&self) -> LpOutcome {
        let outcome = self.solve_inner();
        if let LpOutcome::Optimal { value, point } = &outcome {
            self.check_certificate(value, point);
        }
        outcome
    }

    /// Column index of each original variable after free-splitting; a free
    /// variable occupies its column and the next one (negative part).
    fn columns(&self) -> (Vec<usize>, usize) {
        let mut col_of = Vec::with_capacity(self.free.len());
        let mut next = 0;
        for &f in &self.free {
            col_of.push(next);
            next += if f { 2 } else { 1 };
        }
        (col_of, next)
    }

    fn dense(&self, coeffs: &[(usize, Q)], col_of: &[usize], width: usize) -> Vec<Q> {
        let mut out = vec![Q::zero(); width];
        for (v, c) in coeffs {
            out[col_of[*v]] += c;
            if self.free[*v] {
                out[col_of[*v] + 1] -= c;
            }
        }
        out
    }

    fn solve_inner(&self) -> LpOutcome {
        let (col_of, n_struct) = self.columns();
        let m = self.rows.len();

        // Standard form with rhs >= 0, tagging slack and artificial needs.
        let mut need_slack = 0usize;
        let mut need_artificial = 0usize;
        let mut normalized: Vec<(Vec<Q>, Rel, Q)> = Vec::with_capacity(m);
        for row in &self.rows {
            let mut coeffs = self.dense(&row.coeffs, &col_of, n_struct);
            let mut rel = row.rel;
            let mut rhs = row.rhs.clone();
            if rhs.is_negative() {
                for c in &mut coeffs {
                    *c = -std::mem::take(c);
                }
                rhs = -rhs;
                rel = match rel {
                    Rel::Le => Rel::Ge,
                    Rel::Eq => Rel::Eq,
                    Rel::Ge => Rel::Le,
                };
            }
            match rel {
                Rel::Le => need_slack += 1,
                Rel::Ge => {
                    need_slack += 1;
                    need_artificial += 1;
                }
                Rel::Eq => need_artificial += 1,
            }
            normalized.push((coeffs, rel, rhs));
        }

        let slack_base = n_struct;
        let art_base = n_struct + need_slack;
        let ncols = art_base + need_artificial;

        let one = Q::from_integer(1.into());
        let mut rows: Vec<Vec<Q>> = Vec::with_capacity(m);
        let mut basis: Vec<usize> = Vec::with_capacity(m);
        let mut slack_idx = 0usize;
        let mut art_idx = 0usize;
        for (coeffs, rel, rhs) in normalized {
            let mut r = vec![Q::zero(); ncols + 1];
            r[..n_struct].clone_from_slice(&coeffs);
            r[ncols] = rhs;
            match rel {
                Rel::Le => {
                    r[slack_base + slack_idx] = one.clone();
                    basis.push(slack_base + slack_idx);
                    slack_idx += 1;
                }
                Rel::Ge => {
                    r[slack_base + slack_idx] = -one.clone();
                    slack_idx += 1;
                    r[art_base + art_idx] = one.clone();
                    basis.push(art_base + art_idx);
                    art_idx += 1;
                }
                Rel::Eq => {
                    r[art_base + art_idx] = one.clone();
                    basis.push(art_base + art_idx);
                    art_idx += 1;
                }
            }
            rows.push(r);
        }

        let mut t = Tableau { rows, obj: vec![Q::zero(); ncols + 1], basis, ncols };

        if need_artificial > 0 {
            // Phase 1: maximize -sum(artificials); feasible iff optimum is 0.
            let mut c1 = vec![Q::zero(); ncols];
            for c in c1.iter_mut().take(ncols).skip(art_base) {
                *c = -one.clone();
            }
            t.load_objective(&c1);
            let r = t.run();
            debug_assert_eq!(r, RunResult::Optimal, "phase-1 objective is bounded");
            if !t.objective_value().is_zero() {
                return LpOutcome::Infeasible;
            }
            t.evict_artificials(art_base);
            t.truncate_cols(art_base);
        }

        // Phase 2 over the real objective.
        let mut c2 = self.dense(&self.objective, &col_of, n_struct);
        c2.resize(t.ncols, Q::zero());
        t.load_objective(&c2);
        match t.run() {
            RunResult::Unbounded => LpOutcome::Unbounded,
            RunResult::Optimal => {
                let cols = t.extract();
                let mut point = Vec::with_capacity(self.free.len());
                for (v, &f) in self.free.iter().enumerate() {
                    let base = col_of[v];
                    let x = if f { &cols[base] - &cols[base + 1] } else { cols[base].clone() };
                    point.push(x);
                }
                LpOutcome::Optimal { value: t.objective_value(), point }
            }
        }
    }

    fn check_certificate(&self, value: &Q, point: &[Q]) {
        let eval = |coeffs: &[(usize, Q)]| {
            coeffs.iter().fold(Q::zero(), |acc, (v, c)| acc + c * &point[*v])
        };
        for (idx, row) in self.rows.iter().enumerate() {
            let lhs = eval(&row.coeffs);
            let ok = match row.rel {
                Rel::Le => lhs <= row.rhs,
                Rel::Eq => lhs == row.rhs,
                Rel::Ge => lhs >= row.rhs,
            };
            assert!(ok, "simplex certificate violates constraint {idx}");
        }
        for (v, x) in point.iter().enumerate() {
            assert!(self.free[v] || !x.is_negative(), "nonnegative variable {v} went negative");
        }
        assert_eq!(&eval(&self.objective), value, "objective mismatch in certificate");
    }
}

#[derive(PartialEq, Eq, Debug)]
enum RunResult {
    Optimal,
    Unbounded,
}

struct Tableau {
    /// Each row: ncols coefficients, then rhs at index ncols.
    rows: Vec<Vec<Q>>,
    /// obj[j] = reduced cost of column j; obj[ncols] = objective value.
    obj: Vec<Q>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn load_objective(&mut self, c: &[Q]) {
        let mut obj = vec![Q::zero(); self.ncols + 1];
        for j in 0..self.ncols {
            obj[j] = -c[j].clone();
        }
        for (r, &b) in self.basis.iter().enumerate() {
            if !c[b].is_zero() {
                let factor = c[b].clone();
                for j in 0..=self.ncols {
                    let delta = &factor * &self.rows[r][j];
                    obj[j] += delta;
                }
            }
        }
        self.obj = obj;
    }

    fn objective_value(&self) -> Q {
        self.obj[self.ncols].clone()
    }

    fn run(&mut self) -> RunResult {
        loop {
            // Bland: entering = smallest column with negative reduced cost.
            let Some(col) = (0..self.ncols).find(|&j| self.obj[j].is_negative()) else {
                return RunResult::Optimal;
            };
            // Ratio test; ties resolved by smallest basis variable index.
            let mut pick: Option<(usize, Q)> = None;
            for r in 0..self.rows.len() {
                let a = &self.rows[r][col];
                if a.is_positive() {
                    let ratio = &self.rows[r][self.ncols] / a;
                    let better = match &pick {
                        None => true,
                        Some((pr, pratio)) => {
                            ratio < *pratio || (ratio == *pratio && self.basis[r] < self.basis[*pr])
                        }
                    };
                    if better {
                        pick = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = pick else {
                return RunResult::Unbounded;
            };
            self.pivot(row, col);
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let pivot = self.rows[r][c].clone();
        debug_assert!(!pivot.is_zero());
        for x in self.rows[r].iter_mut() {
            *x /= &pivot;
        }
        let pivot_row = self.rows[r].clone();
        // Subtracting factor * pivot_row zeroes column c in place, since the
        // pivot cell is 1 after normalization.
        for (idx, row) in self.rows.iter_mut().enumerate() {
            if idx == r || row[c].is_zero() {
                continue;
            }
            let factor = row[c].clone();
            for j in 0..=self.ncols {
                if !pivot_row[j].is_zero() {
                    let delta = &factor * &pivot_row[j];
                    row[j] -= delta;
                }
            }
            debug_assert!(row[c].is_zero());
        }
        if !self.obj[c].is_zero() {
            let factor = self.obj[c].clone();
            for j in 0..=self.ncols {
                if !pivot_row[j].is_zero() {
                    let delta = &factor * &pivot_row[j];
                    self.obj[j] -= delta;
                }
            }
            debug_assert!(self.obj[c].is_zero());
        }
        self.basis[r] = c;
    }

    /// Pivot basic artificials out at value zero; drop redundant rows.
    fn evict_artificials(&mut self, art_base: usize) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.basis[r] >= art_base {
                debug_assert!(self.rows[r][self.ncols].is_zero());
                if let Some(c) = (0..art_base).find(|&j| !self.rows[r][j].is_zero()) {
                    self.pivot(r, c);
                } else {
                    self.rows.remove(r);
                    self.basis.remove(r);
                    continue;
                }
            }
            r += 1;
        }
    }

    /// Drop trailing columns (artificials live at the end), keeping rhs.
    fn truncate_cols(&mut self, new_ncols: usize) {
        debug_assert!(new_ncols <= self.ncols);
        debug_assert!(self.basis.iter().all(|&b| b < new_ncols));
        for row in &mut self.rows {
            let rhs = row.pop().expect("row has rhs");
            row.truncate(new_ncols);
            row.push(rhs);
        }
        let val = self.obj.pop().expect("obj has value");
        self.obj.truncate(new_ncols);
        self.obj.push(val);
        self.ncols = new_ncols;
    }

    fn extract(&self) -> Vec<Q> {
        let mut vals = vec![Q::zero(); self.ncols];
        for (r, &b) in self.basis.iter().enumerate() {
            vals[b] = self.rows[r][self.ncols].clone();
        }
        vals
    }
}
