//! Revenue maximization over reduced forms and interim prices.
//!
//! The program has one variable per (bidder, type, item) for the reduced
//! form `π` and one per (bidder, type) for the price `p`. It maximizes
//! expected payments under the true prior subject to BIC and IR (and
//! optional budgets), with feasibility of `π` decided by the weird
//! separation oracle against the welfare algorithm's reduced forms under
//! `D′`. The optimum is located by bisection on the revenue target, each
//! target being a feasibility problem solved by the ellipsoid method.
//!
//! Internally values are divided by `v_max`, so `π ∈ [0,1]`, prices live in
//! `[-n, n]` and the revenue range is `[0, m·n]`; results are scaled back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ellipsoid::{
    default_iterations, dot, ellipsoid_optimize_with, ellipsoid_run, EllipsoidState, Shortcut,
};
use crate::linalg::lp::{lp_solve_lazy, LinearProgram, LpOutcome};
use crate::linalg::{GuessRecord, Hyperplane, Separation, SeparationOracle};
use crate::model::{Instance, Layout, PriceRule, ReducedForm, RfEntry, TypeEntry, VirtualWeights, SCHEMA_VERSION};
use crate::reduced_form::{reduced_form_of, EmpiricalPrior};
use crate::welfare::WelfareOracle;
use crate::wso::{wso_query_pooled, LoggedQuery, WsoConfig, WsoPool, WsoResult, WsoVerdict};

/// Normalized radius below which a revenue target counts as infeasible.
pub const THIN_RADIUS: f64 = 1e-9;

/// Probe rounds per shortcut call before handing control back to the
/// ellipsoid.
const PROBE_ROUNDS: usize = 256;

/// A point of the revenue program: `π` followed by `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpPoint {
    pub pi: ReducedForm,
    pub p: PriceRule,
}

impl LpPoint {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.pi.0.clone();
        v.extend_from_slice(&self.p.0);
        v
    }

    pub fn from_slice(layout: &Layout, x: &[f64]) -> Result<Self> {
        if x.len() != layout.dim() + layout.total_types() {
            return Err(Error::IndexMismatch("point has the wrong length".into()));
        }
        Ok(LpPoint {
            pi: ReducedForm(x[..layout.dim()].to_vec()),
            p: PriceRule(x[layout.dim()..].to_vec()),
        })
    }
}

/// Every BIC, IR and budget constraint as a half-space over `(π, p)`, in
/// scan order: per bidder, per true type, IR first, then each misreport,
/// then the budget.
pub fn incentive_rows(inst: &Instance) -> Vec<Hyperplane> {
    let l = inst.layout();
    let (t_dim, width) = (l.dim(), l.dim() + l.total_types());
    let n = l.items();
    let mut rows = Vec::new();
    for i in 0..l.bidders() {
        for v in 0..l.types_of(i) {
            let vals = inst.values(i, v);
            let sv = l.slot(i, v);
            // IR: p(v) - π(v)·v <= 0
            let mut a = vec![0.0; width];
            for j in 0..n {
                a[l.index(i, v, j)] -= vals[j];
            }
            a[t_dim + sv] = 1.0;
            rows.push(Hyperplane::new(a, 0.0));
            // BIC: π(w)·v - p(w) - π(v)·v + p(v) <= 0
            for w in 0..l.types_of(i) {
                if w == v {
                    continue;
                }
                let mut a = vec![0.0; width];
                for j in 0..n {
                    a[l.index(i, w, j)] += vals[j];
                    a[l.index(i, v, j)] -= vals[j];
                }
                a[t_dim + l.slot(i, w)] -= 1.0;
                a[t_dim + sv] += 1.0;
                rows.push(Hyperplane::new(a, 0.0));
            }
            if let Some(budget) = inst.bidder(i).budget() {
                let mut a = vec![0.0; width];
                a[t_dim + sv] = 1.0;
                rows.push(Hyperplane::new(a, budget));
            }
        }
    }
    rows
}

/// First (or most) violated BIC/IR/budget constraint at `x`, if any.
pub fn check_bic_ir(x: &[f64], inst: &Instance, most_violated: bool) -> Option<Hyperplane> {
    pick_violated(incentive_rows(inst), x, most_violated)
}

fn pick_violated(rows: Vec<Hyperplane>, x: &[f64], most_violated: bool) -> Option<Hyperplane> {
    let mut best: Option<(Hyperplane, f64)> = None;
    for h in rows {
        let e = h.excess(x);
        if e > 0.0 {
            if !most_violated {
                return Some(h);
            }
            if best.as_ref().map_or(true, |(_, b)| e > *b) {
                best = Some((h, e));
            }
        }
    }
    best.map(|b| b.0)
}

/// Largest BIC/IR/budget violation at `x` (0 if all hold).
pub fn incentive_violation(x: &[f64], inst: &Instance) -> f64 {
    incentive_rows(inst).iter().map(|h| h.excess(x)).fold(0.0, f64::max)
}

/// `Σ Pr[t_i = B] · p_i(B)` under the instance prior.
pub fn expected_revenue(prices: &[f64], inst: &Instance) -> f64 {
    dot(&inst.marginals(), prices)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub wso: WsoConfig,
    pub search_bits: u32,
    /// Outer iteration count; `None` derives it from the dimension.
    pub outer_iters: Option<usize>,
    pub iter_constant: f64,
    pub vol_floor: f64,
    /// Stop a revenue target early once an LP over the cuts seen so far
    /// leaves no ball of radius [`THIN_RADIUS`] inside the feasible region.
    pub early_exit: bool,
    /// Query the center of the largest such ball directly.
    pub lp_probe: bool,
    /// Return the most violated incentive constraint instead of the first.
    pub most_violated: bool,
    /// Keep every hyperplane emitted by the separation oracle in the report.
    pub record_cuts: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            wso: WsoConfig::default(),
            search_bits: 24,
            outer_iters: None,
            iter_constant: 4.0,
            vol_floor: 1e-12,
            early_exit: true,
            lp_probe: true,
            most_violated: false,
            record_cuts: false,
        }
    }
}

/// Which check of the separation oracle fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutKind {
    Revenue,
    Incentive,
    Box,
    Wso,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WsoPrimeOutcome {
    pub separation: Separation,
    pub kind: Option<CutKind>,
    /// The separation oracle's own result when it was reached.
    pub wso: Option<WsoResult>,
}

/// The problem data shared by all queries of one solve.
pub struct RevenueProblem<'a> {
    pub inst: &'a Instance,
    pub dprime: &'a EmpiricalPrior,
    pub oracle: &'a dyn WelfareOracle,
    rows: Vec<Hyperplane>,
    rev_weights: Vec<f64>,
    price_bound: f64,
}

impl<'a> RevenueProblem<'a> {
    pub fn new(inst: &'a Instance, dprime: &'a EmpiricalPrior, oracle: &'a dyn WelfareOracle) -> Self {
        let l = inst.layout();
        let mut rev_weights = vec![0.0; l.dim()];
        rev_weights.extend(inst.marginals());
        RevenueProblem {
            inst,
            dprime,
            oracle,
            rows: incentive_rows(inst),
            rev_weights,
            price_bound: inst.v_max() * l.items() as f64,
        }
    }

    pub fn width(&self) -> usize {
        self.rev_weights.len()
    }

    fn box_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.inst.layout();
        let mut lo = vec![0.0; l.dim()];
        let mut hi = vec![1.0; l.dim()];
        lo.extend(std::iter::repeat(-self.price_bound).take(l.total_types()));
        hi.extend(std::iter::repeat(self.price_bound).take(l.total_types()));
        (lo, hi)
    }

    fn revenue_cut(&self, guess: f64) -> Hyperplane {
        Hyperplane::new(self.rev_weights.iter().map(|v| -v).collect(), -guess)
    }

    /// The separation oracle for target `guess`: revenue, then incentives,
    /// then the box, then the weird separation oracle on the `π` block.
    pub fn wso_prime(&self, x: &[f64], guess: f64, cfg: &SolveConfig, pool: &mut WsoPool) -> Result<WsoPrimeOutcome> {
        let cut = |h, kind| WsoPrimeOutcome {
            separation: Separation::Violated(h),
            kind: Some(kind),
            wso: None,
        };
        let rev = self.revenue_cut(guess);
        if rev.excess(x) > 0.0 {
            return Ok(cut(rev, CutKind::Revenue));
        }
        if let Some(h) = pick_violated(self.rows.clone(), x, cfg.most_violated) {
            return Ok(cut(h, CutKind::Incentive));
        }
        let (lo, hi) = self.box_bounds();
        for k in 0..x.len() {
            let mut a = vec![0.0; x.len()];
            if x[k] > hi[k] {
                a[k] = 1.0;
                return Ok(cut(Hyperplane::new(a, hi[k]), CutKind::Box));
            }
            if x[k] < lo[k] {
                a[k] = -1.0;
                return Ok(cut(Hyperplane::new(a, -lo[k]), CutKind::Box));
            }
        }
        let t_dim = self.inst.layout().dim();
        let mut approx = |w: &[f64]| Ok(reduced_form_of(self.oracle, &VirtualWeights(w.to_vec()), self.dprime)?.0);
        let res = wso_query_pooled(&x[..t_dim], &mut approx, &cfg.wso, pool)?;
        Ok(match &res.verdict {
            WsoVerdict::Accept => WsoPrimeOutcome {
                separation: Separation::Accept,
                kind: None,
                wso: Some(res),
            },
            WsoVerdict::Violated(h) => {
                let mut a = h.a.clone();
                a.resize(x.len(), 0.0);
                WsoPrimeOutcome {
                    separation: Separation::Violated(Hyperplane::new(a, h.b)),
                    kind: Some(CutKind::Wso),
                    wso: Some(res),
                }
            }
        })
    }

    /// Center and radius of the largest ball (clipped to radius 1) inside
    /// the explicit constraints, the revenue target and `cuts`, with the
    /// center kept in the box. A negative radius means the region is empty.
    fn chebyshev(&self, guess: f64, cuts: &[Hyperplane]) -> Result<(Vec<f64>, f64)> {
        let width = self.width();
        let mut obj = vec![0.0; width];
        obj.push(1.0);
        let mut lp = LinearProgram::maximize(obj);
        let (lo, hi) = self.box_bounds();
        for k in 0..width {
            lp.bound(k, lo[k], hi[k]);
        }
        lp.bound(width, -1.0, 1.0);
        let rev = self.revenue_cut(guess);
        for h in std::iter::once(&rev).chain(&self.rows).chain(cuts) {
            let norm = dot(&h.a, &h.a).sqrt();
            if norm == 0.0 {
                continue;
            }
            let mut row = h.a.clone();
            row.push(norm);
            lp.le(row, h.b);
        }
        match lp_solve_lazy(&lp, 1)? {
            LpOutcome::Optimal { mut x, value } => {
                x.truncate(width);
                Ok((x, value))
            }
            other => Err(Error::Guard(format!("ball LP ended {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub wso_calls: usize,
    pub inner_iterations: usize,
    pub lp_certificates: usize,
}

struct Outer<'p, 'a> {
    problem: &'p RevenueProblem<'a>,
    guess: f64,
    cfg: &'p SolveConfig,
    /// Separation cuts on `π`; valid for every target, so shared.
    cuts: &'p mut Vec<Hyperplane>,
    pool: &'p mut WsoPool,
    dirty: bool,
    accepted_log: Option<Vec<LoggedQuery>>,
    stats: &'p mut SolveStats,
    recorded: &'p mut Vec<Hyperplane>,
}

impl Outer<'_, '_> {
    fn ask(&mut self, x: &[f64]) -> Result<Separation> {
        let out = self.problem.wso_prime(x, self.guess, self.cfg, self.pool)?;
        if let Some(res) = out.wso {
            self.stats.wso_calls += 1;
            self.stats.inner_iterations += res.iterations;
            match &out.separation {
                Separation::Accept => self.accepted_log = Some(res.witnesses().cloned().collect()),
                Separation::Violated(h) => {
                    self.cuts.push(h.clone());
                    self.dirty = true;
                    if self.cfg.record_cuts {
                        let t_dim = self.problem.inst.layout().dim();
                        self.recorded.push(Hyperplane::new(h.a[..t_dim].to_vec(), h.b));
                    }
                }
            }
        }
        Ok(out.separation)
    }
}

impl SeparationOracle for Outer<'_, '_> {
    fn query(&mut self, x: &[f64]) -> Result<Separation> {
        self.stats.outer_iterations += 1;
        self.ask(x)
    }

    fn shortcut(&mut self) -> Result<Shortcut> {
        if !self.cfg.early_exit && !self.cfg.lp_probe {
            return Ok(Shortcut::Continue);
        }
        for _ in 0..PROBE_ROUNDS {
            if !self.dirty {
                break;
            }
            self.dirty = false;
            let (center, radius) = self.problem.chebyshev(self.guess, self.cuts)?;
            if radius < THIN_RADIUS {
                if self.cfg.early_exit {
                    self.stats.lp_certificates += 1;
                    return Ok(Shortcut::Empty);
                }
                break;
            }
            if !self.cfg.lp_probe {
                break;
            }
            self.stats.outer_iterations += 1;
            if self.ask(&center)? == Separation::Accept {
                return Ok(Shortcut::Found(center));
            }
        }
        Ok(Shortcut::Continue)
    }
}

/// A logged weight vector and the welfare algorithm's reduced form there.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedPoint {
    pub w: VirtualWeights,
    pub point: ReducedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub pi_star: ReducedForm,
    /// Prices before the rebate.
    pub p_star: PriceRule,
    pub rebate: f64,
    /// Expected payments of `p_star` under the true prior.
    pub lp_revenue: f64,
    /// `lp_revenue − m·rebate`.
    pub revenue: f64,
    /// Queries of the separation call that accepted `pi_star`.
    pub query_log: Vec<LoggedPoint>,
    pub guesses: Vec<GuessRecord>,
    /// Marginals of `D′`, the denominators of the virtual transformation.
    pub virtual_marginals: Vec<f64>,
    /// Hyperplanes emitted by the separation oracle over the `π` block, in
    /// normalized units (only with [`SolveConfig::record_cuts`]).
    pub wso_cuts: Vec<Hyperplane>,
    pub stats: SolveStats,
}

/// Runs the revenue program and applies the rebate `eps`.
pub fn solve(
    inst: &Instance,
    dprime: &EmpiricalPrior,
    oracle: &dyn WelfareOracle,
    eps: f64,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    cfg.wso.validate()?;
    if dprime.layout() != inst.layout() {
        return Err(Error::IndexMismatch("D′ was built for a different instance".into()));
    }
    let l = inst.layout();
    let (t_dim, s_dim) = (l.dim(), l.total_types());
    let virtual_marginals = dprime.marginals();

    if inst.v_max() == 0.0 {
        // every value is zero: the null mechanism is optimal and exactly IR
        let point = reduced_form_of(oracle, &VirtualWeights::zeros(t_dim), dprime)?;
        return Ok(SolveReport {
            pi_star: point.clone(),
            p_star: PriceRule::zeros(s_dim),
            rebate: 0.0,
            lp_revenue: 0.0,
            revenue: 0.0,
            query_log: vec![LoggedPoint {
                w: VirtualWeights::zeros(t_dim),
                point,
            }],
            guesses: Vec::new(),
            virtual_marginals,
            wso_cuts: Vec::new(),
            stats: SolveStats::default(),
        });
    }

    let scale = inst.v_max();
    let norm = inst.scaled(1.0 / scale);
    let problem = RevenueProblem::new(&norm, dprime, oracle);
    let width = problem.width();
    let (lo, hi) = problem.box_bounds();
    let start = EllipsoidState::enclosing_box(&lo, &hi);
    let radius = (width as f64).sqrt() * problem.price_bound.max(1.0);
    let outer_iters = cfg
        .outer_iters
        .unwrap_or_else(|| default_iterations(width, radius, cfg.iter_constant, cfg.vol_floor));
    let top = (l.bidders() * l.items()) as f64;

    let mut stats = SolveStats::default();
    let mut recorded = Vec::new();
    let mut accepted_log = None;
    let mut cuts = Vec::new();
    let mut pool = WsoPool::new();
    let rev_weights = problem.rev_weights.clone();
    let out = ellipsoid_optimize_with(
        0.0,
        top,
        cfg.search_bits,
        |guess| {
            let mut outer = Outer {
                problem: &problem,
                guess,
                cfg,
                cuts: &mut cuts,
                pool: &mut pool,
                dirty: true,
                accepted_log: None,
                stats: &mut stats,
                recorded: &mut recorded,
            };
            let res = ellipsoid_run(&mut outer, start.clone(), outer_iters)?;
            log::debug!("revenue target {guess:.6}: {res:?}");
            if outer.accepted_log.is_some() && matches!(res, crate::linalg::EllipsoidOutcome::Accepted { .. }) {
                accepted_log = outer.accepted_log.take();
            }
            Ok(res)
        },
        |x| dot(&rev_weights, x),
    )
    .map_err(|e| match e {
        // the null mechanism is always feasible unless A(w)·w < 0 somewhere
        Error::SearchFailed(msg) => Error::SearchFailed(format!(
            "{msg}; the welfare oracle allocates at negative weights (wrap it in \"clamp\")"
        )),
        e => e,
    })?;

    let x = LpPoint::from_slice(l, &out.point)?;
    let p_star = PriceRule(x.p.0.iter().map(|v| v * scale).collect());
    let lp_revenue = expected_revenue(&p_star.0, inst);
    let m = l.bidders() as f64;
    let query_log = accepted_log
        .unwrap_or_default()
        .into_iter()
        .map(|q| LoggedPoint {
            w: VirtualWeights(q.w),
            point: ReducedForm(q.point),
        })
        .collect();
    Ok(SolveReport {
        pi_star: x.pi,
        p_star,
        rebate: eps,
        lp_revenue,
        revenue: lp_revenue - m * eps,
        query_log,
        guesses: out
            .trace
            .into_iter()
            .map(|g| GuessRecord {
                guess: g.guess * scale,
                ..g
            })
            .collect(),
        virtual_marginals,
        wso_cuts: recorded,
        stats,
    })
}

/// JSON form of a [`SolveReport`] (without the query log and cuts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReportDoc {
    pub schema_version: u32,
    pub revenue: f64,
    pub lp_revenue: f64,
    pub rebate: f64,
    pub pi_star: Vec<RfEntry>,
    pub p_star: Vec<TypeEntry>,
    pub guesses: Vec<GuessRecord>,
    pub query_log_size: usize,
    pub stats: SolveStats,
}

impl SolveReport {
    pub fn to_doc(&self, inst: &Instance) -> SolveReportDoc {
        SolveReportDoc {
            schema_version: SCHEMA_VERSION,
            revenue: self.revenue,
            lp_revenue: self.lp_revenue,
            rebate: self.rebate,
            pi_star: self.pi_star.to_doc(inst).entries,
            p_star: self.p_star.entries(inst),
            guesses: self.guesses.clone(),
            query_log_size: self.query_log.len(),
            stats: self.stats.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instance_from_parts, OracleSpec};
    use crate::welfare::exact_single_item;

    fn one_bidder() -> Instance {
        instance_from_parts(
            1,
            vec![vec![("lo", vec![1.0], 0.5), ("hi", vec![2.0], 0.5)]],
            OracleSpec::new("exact_single_item"),
        )
        .unwrap()
    }

    fn point(pi: &[f64], p: &[f64]) -> Vec<f64> {
        let mut v = pi.to_vec();
        v.extend_from_slice(p);
        v
    }

    #[test]
    fn null_mechanism_passes_incentives() {
        let inst = one_bidder();
        assert!(check_bic_ir(&[0.0; 4], &inst, false).is_none());
    }

    #[test]
    fn misreport_detected() {
        let inst = one_bidder();
        let x = point(&[1.0, 1.0], &[1.0, 2.0]);
        let h = check_bic_ir(&x, &inst, false).unwrap();
        // type "hi" gains 1 by reporting "lo"
        assert_eq!(h.excess(&x), 1.0);
        assert_eq!(h.a, vec![2.0, -2.0, -1.0, 1.0]);
    }

    #[test]
    fn overpricing_breaks_ir() {
        let inst = one_bidder();
        let x = point(&[1.0, 1.0], &[1.5, 2.5]);
        let rows = incentive_rows(&inst);
        let ir_rows = [&rows[0], &rows[2]];
        for h in ir_rows {
            assert!((h.excess(&x) - 0.5).abs() < 1e-12);
        }
        assert!(check_bic_ir(&x, &inst, false).is_some());
    }

    #[test]
    fn budgets_are_enforced() {
        let mut doc = one_bidder().to_doc();
        doc.bidders[0].budget = Some(0.9);
        let inst = crate::model::validate_instance(doc).unwrap();
        let x = point(&[1.0, 1.0], &[0.8, 0.8]);
        assert!(check_bic_ir(&x, &inst, false).is_none());
        let y = point(&[1.0, 1.0], &[1.0, 1.0]);
        let h = check_bic_ir(&y, &inst, false).unwrap();
        assert_eq!(h.b, 0.9);
    }

    #[test]
    fn wso_prime_examples() {
        let inst = one_bidder();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let o = exact_single_item();
        let prob = RevenueProblem::new(&inst, &d, &o);
        let cfg = SolveConfig::default();
        let null = [0.0; 4];
        assert_eq!(
            prob.wso_prime(&null, 0.0, &cfg, &mut WsoPool::new())
                .unwrap()
                .separation,
            Separation::Accept
        );
        let out = prob.wso_prime(&null, 0.1, &cfg, &mut WsoPool::new()).unwrap();
        assert_eq!(out.kind, Some(CutKind::Revenue));
        // posted price 1: both types buy, revenue 1
        let posted = point(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(
            prob.wso_prime(&posted, 0.99, &cfg, &mut WsoPool::new())
                .unwrap()
                .separation,
            Separation::Accept
        );
    }

    #[test]
    fn single_bidder_revenue() {
        let inst = one_bidder();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let cfg = SolveConfig {
            search_bits: 24,
            ..SolveConfig::default()
        };
        let r = solve(&inst, &d, &exact_single_item(), 0.01, &cfg).unwrap();
        assert!(r.revenue >= 1.0 - 0.01 - 0.01 - 1e-4, "{}", r.revenue);
        assert!((r.revenue - (expected_revenue(&r.p_star.0, &inst) - r.rebate)).abs() < 1e-9);
        let mut x = r.pi_star.0.clone();
        x.extend(&r.p_star.0);
        assert!(incentive_violation(&x, &inst) <= 1e-7);
    }

    #[test]
    fn zero_values_give_null_mechanism() {
        let inst = instance_from_parts(
            1,
            vec![vec![("z", vec![0.0], 1.0)]],
            OracleSpec::new("exact_single_item"),
        )
        .unwrap();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let r = solve(&inst, &d, &exact_single_item(), 0.01, &SolveConfig::default()).unwrap();
        assert_eq!(r.revenue, 0.0);
        assert_eq!(r.pi_star.0, vec![0.0]);
        assert_eq!(r.p_star.0, vec![0.0]);
    }
}
