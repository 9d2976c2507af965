//! Small dense two-phase simplex.
//!
//! Problems are stated as `max c·x` subject to rows `a·x {<=, >=, =} b` and
//! per-variable bounds. Bounds are folded into the standard form (shifts,
//! reflections, free-variable splits and extra rows), so the tableau only
//! ever sees nonnegative variables.
//!
//! Pivoting is deterministic: Dantzig's rule with lowest-index ties, falling
//! back to Bland's rule after a run of degenerate pivots so cycling cannot
//! occur. The ratio test breaks ties on the lowest basic variable index.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

/// `max objective·x` subject to `constraints` and `bounds` (default `[0, inf)`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<(Vec<f64>, f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, value)),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::maximize(objective.into_iter().map(|c| -c).collect())
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, rel, rhs });
        self
    }

    pub fn le(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.add(coeffs, Relation::Le, rhs)
    }

    pub fn ge(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.add(coeffs, Relation::Ge, rhs)
    }

    pub fn eq(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.add(coeffs, Relation::Eq, rhs)
    }

    pub fn bound(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    /// Largest violation of any row or bound at `x` (0 when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let v = match c.rel {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (&(lo, hi), &xi) in self.bounds.iter().zip(x) {
            worst = worst.max(lo - xi).max(xi - hi);
        }
        worst
    }
}

/// How an original variable is rebuilt from standard-form columns.
#[derive(Clone, Copy)]
enum VarMap {
    /// x = offset + y
    Shift { col: usize, offset: f64 },
    /// x = offset - y
    Reflect { col: usize, offset: f64 },
    /// x = y+ - y-
    Split { pos: usize, neg: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Reduced costs of the current objective, plus its value in the last slot.
    cost: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    blocked: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.width]
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let p = self.rows[r][s];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[s];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[s] = 0.0;
            }
        }
        let f = self.cost[s];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.cost[s] = 0.0;
        }
        self.basis[r] = s;
        self.pivots += 1;
    }

    fn set_objective(&mut self, c: &[f64]) {
        self.cost = vec![0.0; self.width + 1];
        self.cost[..c.len()].copy_from_slice(c);
        for r in 0..self.rows.len() {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                for (v, rv) in self.cost.iter_mut().zip(&self.rows[r]) {
                    *v -= cb * rv;
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.width {
            if self.blocked[j] || self.cost[j] <= OPT_TOL {
                continue;
            }
            if bland {
                return Some(j);
            }
            if best.map_or(true, |(_, d)| self.cost[j] > d) {
                best = Some((j, self.cost[j]));
            }
        }
        best.map(|b| b.0)
    }

    fn leaving(&self, s: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows.len() {
            let a = self.rows[r][s];
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(r).max(0.0) / a;
            let better = match best {
                None => true,
                Some((br, bv)) => ratio < bv - 1e-12 || (ratio <= bv + 1e-12 && self.basis[r] < self.basis[br]),
            };
            if better {
                best = Some((r, ratio));
            }
        }
        best.map(|b| b.0)
    }

    /// Runs simplex iterations on the current objective. Returns false when
    /// the objective is unbounded.
    fn optimize(&mut self, limit: usize) -> Result<bool> {
        let mut degenerate = 0;
        let mut bland = false;
        loop {
            if self.pivots > limit {
                return Err(Error::Guard(format!("simplex exceeded {limit} pivots")));
            }
            let Some(s) = self.entering(bland) else {
                return Ok(true);
            };
            let Some(r) = self.leaving(s) else {
                return Ok(false);
            };
            // a step that barely moves counts as degenerate; once a run of
            // them is seen, Bland's rule stays on for the rest of the phase
            if self.rhs(r).max(0.0) / self.rows[r][s] <= 1e-10 {
                degenerate += 1;
                bland |= degenerate >= DEGENERATE_RUN;
            } else {
                degenerate = 0;
            }
            self.pivot(r, s);
        }
    }
}

/// Row generation over [`lp_solve`] for programs with many rows, few of
/// them tight. The first `always` rows are kept throughout; the rest enter
/// in batches of the most violated until the relaxation's optimum satisfies
/// all of them. An unbounded relaxation falls back to the full program.
pub fn lp_solve_lazy(lp: &LinearProgram, always: usize) -> Result<LpOutcome> {
    let always = always.min(lp.constraints.len());
    let batch = lp.vars().max(8);
    let mut active = vec![false; lp.constraints.len()];
    active[..always].iter_mut().for_each(|a| *a = true);
    loop {
        let mut sub = LinearProgram {
            objective: lp.objective.clone(),
            constraints: Vec::new(),
            bounds: lp.bounds.clone(),
        };
        for (c, _) in lp.constraints.iter().zip(&active).filter(|(_, &a)| a) {
            sub.constraints.push(c.clone());
        }
        let x = match lp_solve(&sub)? {
            LpOutcome::Optimal { x, .. } => x,
            LpOutcome::Infeasible => return Ok(LpOutcome::Infeasible),
            LpOutcome::Unbounded => return lp_solve(lp),
        };
        let mut violated: Vec<(f64, usize)> = lp
            .constraints
            .iter()
            .enumerate()
            .filter(|&(k, _)| !active[k])
            .filter_map(|(k, c)| {
                let lhs: f64 = c.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
                let v = match c.rel {
                    Relation::Le => lhs - c.rhs,
                    Relation::Ge => c.rhs - lhs,
                    Relation::Eq => (lhs - c.rhs).abs(),
                };
                (v > FEAS_TOL * (1.0 + c.rhs.abs())).then_some((v, k))
            })
            .collect();
        if violated.is_empty() {
            let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            return Ok(LpOutcome::Optimal { x, value });
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, k) in violated.iter().take(batch) {
            active[k] = true;
        }
    }
}

/// Solves `lp` to optimality.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpOutcome> {
    let n = lp.vars();
    if lp.bounds.len() != n || lp.constraints.iter().any(|c| c.coeffs.len() != n) {
        return Err(Error::InvalidArgument("linear program dimensions disagree".into()));
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            if lo > hi {
                return Ok(LpOutcome::Infeasible);
            }
            return Err(Error::InvalidArgument(format!("variable {j} has empty bounds")));
        }
    }

    // standard-form columns
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncols, offset: lo });
            if hi.is_finite() {
                extra_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Reflect { col: ncols, offset: hi });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }

    let mut std_rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut row = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, offset } => {
                    row[col] += a;
                    rhs -= a * offset;
                }
                VarMap::Reflect { col, offset } => {
                    row[col] -= a;
                    rhs -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += a;
                    row[neg] -= a;
                }
            }
        }
        std_rows.push((row, c.rel, rhs));
    }
    for &(col, ub) in &extra_rows {
        let mut row = vec![0.0; ncols];
        row[col] = 1.0;
        std_rows.push((row, Relation::Le, ub));
    }
    for (row, rel, rhs) in std_rows.iter_mut() {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let slack_count = std_rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let art_count = std_rows.iter().filter(|r| r.1 != Relation::Le).count();
    let width = ncols + slack_count + art_count;
    let m = std_rows.len();
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let (mut next_slack, mut next_art) = (ncols, ncols + slack_count);
    for (coeffs, rel, rhs) in &std_rows {
        let mut row = vec![0.0; width + 1];
        row[..ncols].copy_from_slice(coeffs);
        row[width] = *rhs;
        match rel {
            Relation::Le => {
                row[next_slack] = 1.0;
                basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
        }
        rows.push(row);
    }
    let art_start = ncols + slack_count;
    let mut tab = Tableau {
        rows,
        cost: Vec::new(),
        basis,
        width,
        blocked: vec![false; width],
        pivots: 0,
    };
    let limit = 50_000 + 100 * (m + width);

    if art_count > 0 {
        let mut phase1 = vec![0.0; width];
        phase1[art_start..].iter_mut().for_each(|v| *v = -1.0);
        tab.set_objective(&phase1);
        tab.optimize(limit)?;
        let scale = 1.0 + std_rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        let infeasibility: f64 = (0..m).filter(|&r| tab.basis[r] >= art_start).map(|r| tab.rhs(r)).sum();
        if infeasibility > FEAS_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // drive remaining artificials out of the basis; drop redundant rows
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_start {
                let col = (0..art_start).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
        tab.blocked[art_start..].iter_mut().for_each(|b| *b = true);
    }

    let mut cost = vec![0.0; width];
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shift { col, .. } => cost[col] += c,
            VarMap::Reflect { col, .. } => cost[col] -= c,
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    tab.set_objective(&cost);
    if !tab.optimize(limit)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0; width];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(r).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, offset } => offset + y[col],
            VarMap::Reflect { col, offset } => offset - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bounded_by_row() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.le(vec![1.0], 3.0);
        let (x, v) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.le(vec![1.0], 1.0).ge(vec![1.0], 2.0);
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn unbounded_reported() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.le(vec![1.0, -1.0], 1.0);
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_rows_do_not_change_optimum() {
        let mut base = LinearProgram::maximize(vec![2.0, 3.0]);
        base.le(vec![1.0, 1.0], 4.0).le(vec![1.0, 3.0], 6.0);
        let mut redundant = base.clone();
        redundant
            .le(vec![2.0, 2.0], 8.0)
            .eq(vec![1.0, 1.0], 4.0)
            .eq(vec![2.0, 2.0], 8.0)
            .le(vec![1.0, 3.0], 6.0);
        let a = lp_solve(&base).unwrap().optimal().unwrap().1;
        let b = lp_solve(&redundant).unwrap().optimal().unwrap().1;
        assert_abs_diff_eq!(a, 9.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn free_and_upper_bounded_variables() {
        // max -|x - 2| style: min t s.t. t >= x - 2, t >= 2 - x, x free, t free
        let mut lp = LinearProgram::minimize(vec![0.0, 1.0]);
        lp.bound(0, f64::NEG_INFINITY, f64::INFINITY)
            .bound(1, f64::NEG_INFINITY, f64::INFINITY)
            .ge(vec![-1.0, 1.0], -2.0)
            .ge(vec![1.0, 1.0], 2.0);
        let (_, v) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);

        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.bound(0, f64::NEG_INFINITY, -1.5);
        let (x, _) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert_abs_diff_eq!(x[0], -1.5, epsilon = 1e-12);
        lp.objective[0] = -1.0;
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // classic cycling example for Dantzig's rule without safeguards
        let mut lp = LinearProgram::maximize(vec![10.0, -57.0, -9.0, -24.0]);
        lp.le(vec![0.5, -5.5, -2.5, 9.0], 0.0)
            .le(vec![0.5, -1.5, -0.5, 1.0], 0.0)
            .le(vec![1.0, 0.0, 0.0, 0.0], 1.0);
        let (_, v) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }

    /// Best objective over all vertices of `{x : rows, 0 <= x <= 10}`.
    fn vertex_enumeration(obj: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<f64> {
        let n = obj.len();
        let mut planes: Vec<(Vec<f64>, f64)> = rows.to_vec();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), 10.0));
            planes.push((e.iter().map(|v| -v).collect(), 0.0));
        }
        let mut best: Option<f64> = None;
        let mut pick = Vec::new();
        fn rec(
            start: usize,
            n: usize,
            planes: &[(Vec<f64>, f64)],
            pick: &mut Vec<usize>,
            obj: &[f64],
            best: &mut Option<f64>,
        ) {
            if pick.len() == n {
                let mut m: Vec<Vec<f64>> = pick
                    .iter()
                    .map(|&k| {
                        let mut r = planes[k].0.clone();
                        r.push(planes[k].1);
                        r
                    })
                    .collect();
                // gaussian elimination with partial pivoting
                for c in 0..n {
                    let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
                    if m[p][c].abs() < 1e-9 {
                        return;
                    }
                    m.swap(c, p);
                    for r in 0..n {
                        if r != c {
                            let f = m[r][c] / m[c][c];
                            for k in c..=n {
                                m[r][k] -= f * m[c][k];
                            }
                        }
                    }
                }
                let x: Vec<f64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();
                let ok = planes
                    .iter()
                    .all(|(a, b)| a.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= b + 1e-7);
                if ok {
                    let v: f64 = obj.iter().zip(&x).map(|(u, v)| u * v).sum();
                    if best.map_or(true, |b| v > b) {
                        *best = Some(v);
                    }
                }
                return;
            }
            for k in start..planes.len() {
                pick.push(k);
                rec(k + 1, n, planes, pick, obj, best);
                pick.pop();
            }
        }
        rec(0, n, &planes, &mut pick, obj, &mut best);
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn agrees_with_vertex_enumeration(
            n in 1usize..=6,
            raw in proptest::collection::vec((proptest::collection::vec(-5i32..=5, 6), -3i32..=12), 0..=8),
            obj in proptest::collection::vec(-5i32..=5, 6),
        ) {
            let obj: Vec<f64> = obj[..n].iter().map(|&v| f64::from(v)).collect();
            let rows: Vec<(Vec<f64>, f64)> = raw
                .iter()
                .map(|(a, b)| (a[..n].iter().map(|&v| f64::from(v)).collect(), f64::from(*b)))
                .collect();
            let mut lp = LinearProgram::maximize(obj.clone());
            for j in 0..n {
                lp.bound(j, 0.0, 10.0);
            }
            for (a, b) in &rows {
                lp.le(a.clone(), *b);
            }
            let expected = vertex_enumeration(&obj, &rows);
            match lp_solve(&lp).unwrap() {
                LpOutcome::Optimal { x, value } => {
                    let e = expected.expect("solver found a point the enumeration missed");
                    prop_assert!((value - e).abs() <= 1e-6, "{} vs {}", value, e);
                    prop_assert!(lp.violation(&x) <= 1e-7);
                }
                LpOutcome::Infeasible => prop_assert!(expected.is_none()),
                LpOutcome::Unbounded => prop_assert!(false, "bounded problem reported unbounded"),
            }
        }

        #[test]
        fn lazy_rows_match_full_solve(
            n in 1usize..=4,
            raw in proptest::collection::vec((proptest::collection::vec(-5i32..=5, 4), -3i32..=12), 0..=30),
            obj in proptest::collection::vec(-5i32..=5, 4),
            always in 0usize..4,
        ) {
            let mut lp = LinearProgram::maximize(obj[..n].iter().map(|&v| f64::from(v)).collect());
            for j in 0..n {
                lp.bound(j, -10.0, 10.0);
            }
            for (a, b) in &raw {
                lp.le(a[..n].iter().map(|&v| f64::from(v)).collect(), f64::from(*b));
            }
            match (lp_solve(&lp).unwrap(), lp_solve_lazy(&lp, always).unwrap()) {
                (LpOutcome::Optimal { value: a, .. }, LpOutcome::Optimal { x, value: b }) => {
                    prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
                    prop_assert!(lp.violation(&x) <= 1e-7);
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
