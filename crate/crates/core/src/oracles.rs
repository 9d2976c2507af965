//! Ground-truth and audit oracles: the ex-post optimal revenue, Border's
//! condition, enumeration of feasible interim rules, hull distances and
//! incentive audits of finished mechanisms.

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::mechanism_reduced_form;
use crate::error::{Error, Result};
use crate::linalg::lp::{lp_solve, LinearProgram, LpOutcome, Relation};
use crate::model::{Allocation, Instance, Layout, Mechanism, PriceRule, ReducedForm};
use crate::reduced_form::{profile_values, virtual_transform, EmpiricalPrior};
use crate::revenue::{expected_revenue, incentive_violation, LpPoint};
use crate::welfare::{ValueMatrix, WelfareOracle};

/// Largest ex-post LP accepted by [`brute_force_opt`].
pub const MAX_LP_VARIABLES: usize = 100_000;

/// Largest number of deterministic rules [`enumerate_feasible_interim`]
/// will list.
pub const MAX_INTERIM_RULES: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceOpt {
    pub revenue: f64,
    /// Interim rule of the optimal mechanism under the true prior.
    pub pi: ReducedForm,
    pub prices: PriceRule,
}

/// Optimal expected revenue over all BIC, IR (and budget-feasible)
/// mechanisms whose outcomes lie in `family`, by the full ex-post LP.
///
/// Variables are a distribution over `family` per profile of the prior plus
/// one price per (bidder, type).
pub fn brute_force_opt(inst: &Instance, family: &[Allocation]) -> Result<BruteForceOpt> {
    let layout = inst.layout();
    if family.is_empty() {
        return Err(Error::InvalidArgument("the allocation family is empty".into()));
    }
    if family.iter().any(|a| !a.within(layout.bidders(), layout.items())) {
        return Err(Error::InvalidArgument(
            "family contains an allocation outside the instance".into(),
        ));
    }
    let prior = EmpiricalPrior::exhaustive(inst)?;
    let profiles: Vec<(Vec<usize>, f64)> = prior.profiles().map(|(p, m)| (p.to_vec(), m)).collect();
    let f = family.len();
    let (t_dim, s_dim) = (layout.dim(), layout.total_types());
    let nx = profiles.len() * f;
    if nx + s_dim > MAX_LP_VARIABLES {
        return Err(Error::Guard(format!(
            "ex-post LP needs {} variables, limit is {MAX_LP_VARIABLES}",
            nx + s_dim
        )));
    }

    // π as a linear map of x: pi_coeffs[k] lists (x index, coefficient)
    let slot_mass = prior.slot_mass();
    let mut pi_coeffs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); t_dim];
    for (pk, (profile, mass)) in profiles.iter().enumerate() {
        for (o, alloc) in family.iter().enumerate() {
            for &(i, j) in alloc.pairs() {
                let k = layout.index(i, profile[i], j);
                pi_coeffs[k].push((pk * f + o, mass / slot_mass[k / layout.items()]));
            }
        }
    }

    let width = nx + s_dim;
    let mut obj = vec![0.0; width];
    obj[nx..].copy_from_slice(&inst.marginals());
    let mut lp = LinearProgram::maximize(obj);
    for s in 0..s_dim {
        lp.bound(nx + s, f64::NEG_INFINITY, f64::INFINITY);
    }
    for pk in 0..profiles.len() {
        let mut row = vec![0.0; width];
        row[pk * f..(pk + 1) * f].iter_mut().for_each(|v| *v = 1.0);
        lp.add(row, Relation::Eq, 1.0);
    }
    // each incentive row a·(π, p) ≤ b, with π expanded through x
    for h in crate::revenue::incentive_rows(inst) {
        let mut row = vec![0.0; width];
        for (k, &a) in h.a[..t_dim].iter().enumerate() {
            if a != 0.0 {
                for &(x, c) in &pi_coeffs[k] {
                    row[x] += a * c;
                }
            }
        }
        row[nx..].copy_from_slice(&h.a[t_dim..]);
        lp.le(row, h.b);
    }
    let (x, value) = match lp_solve(&lp)? {
        LpOutcome::Optimal { x, value } => (x, value),
        other => return Err(Error::Guard(format!("ex-post LP ended {other:?}"))),
    };
    let pi = pi_coeffs
        .iter()
        .map(|cs| cs.iter().map(|&(k, c)| c * x[k]).sum())
        .collect();
    Ok(BruteForceOpt {
        revenue: value,
        pi: ReducedForm(pi),
        prices: PriceRule(x[nx..].to_vec()),
    })
}

/// The enumerable family of `oracle` for this instance's shape.
pub fn family_of(oracle: &dyn WelfareOracle, inst: &Instance) -> Result<Vec<Allocation>> {
    oracle
        .feasible_allocations(inst.num_bidders(), inst.num_items())
        .ok_or_else(|| Error::OracleConfig(format!("{} cannot enumerate its feasible allocations", oracle.name())))
}

/// Border's condition for a single-item interim rule under the instance
/// prior: for every set `S` of (bidder, type) pairs,
/// `Σ_{(i,B)∈S} Pr[t_i=B]·π_i(B) ≤ 1 − Π_i (1 − Pr[t_i ∈ S_i])`.
///
/// All sets are checked when there are at most 20 types in total; otherwise
/// only the threshold sets `{(i,B) : π_i(B) ≥ θ}`.
pub fn border_feasible(pi: &ReducedForm, inst: &Instance, tol: f64) -> Result<bool> {
    let layout = inst.layout();
    if layout.items() != 1 {
        return Err(Error::InvalidArgument("Border's condition needs a single item".into()));
    }
    if pi.len() != layout.dim() {
        return Err(Error::IndexMismatch("reduced form has the wrong length".into()));
    }
    let probs = inst.marginals();
    let slots = layout.total_types();
    let holds = |member: &dyn Fn(usize) -> bool| {
        let mut lhs = 0.0;
        let mut miss = vec![1.0; layout.bidders()];
        for s in (0..slots).filter(|&s| member(s)) {
            lhs += probs[s] * pi.0[s];
            miss[layout.slot_owner(s).0] -= probs[s];
        }
        let rhs = 1.0 - miss.iter().map(|m| m.max(0.0)).product::<f64>();
        lhs <= rhs + tol
    };
    if slots <= 20 {
        Ok((1u32..(1 << slots)).all(|mask| holds(&|s| mask >> s & 1 == 1)))
    } else {
        let mut thresholds: Vec<f64> = pi.0.clone();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        Ok(thresholds.iter().all(|&th| holds(&|s| pi.0[s] >= th)))
    }
}

/// Reduced forms (under `prior`) of every deterministic rule that picks one
/// allocation from `family` per profile, deduplicated. Their convex hull is
/// the set of feasible interim rules.
pub fn enumerate_feasible_interim(prior: &EmpiricalPrior, family: &[Allocation]) -> Result<Vec<Vec<f64>>> {
    let layout = prior.layout();
    let profiles: Vec<(Vec<usize>, f64)> = prior.profiles().map(|(p, m)| (p.to_vec(), m)).collect();
    let count = (family.len() as u128).checked_pow(profiles.len() as u32);
    if family.is_empty() || count.map_or(true, |c| c > MAX_INTERIM_RULES) {
        return Err(Error::Guard(format!(
            "{} allocations over {} profiles is too many rules to enumerate",
            family.len(),
            profiles.len()
        )));
    }
    // contribution of allocation o at profile pk
    let contrib: Vec<Vec<Vec<(usize, f64)>>> = profiles
        .iter()
        .map(|(p, m)| {
            family
                .iter()
                .map(|a| {
                    a.pairs()
                        .iter()
                        .map(|&(i, j)| {
                            let k = layout.index(i, p[i], j);
                            (k, m / prior.slot_mass()[k / layout.items()])
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut choice = vec![0usize; profiles.len()];
    loop {
        let mut rf = vec![0.0; layout.dim()];
        for (pk, &o) in choice.iter().enumerate() {
            for &(k, c) in &contrib[pk][o] {
                rf[k] += c;
            }
        }
        if seen.insert(rf.iter().map(|v| v.to_bits()).collect::<Vec<_>>()) {
            out.push(rf);
        }
        // odometer
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return Ok(out);
            }
            choice[pos] += 1;
            if choice[pos] < family.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// `min_{λ ∈ simplex} ‖Σ λ_k v_k − x‖∞` by LP.
pub fn hull_linf_distance(x: &[f64], vertices: &[Vec<f64>]) -> Result<f64> {
    if vertices.is_empty() {
        return Err(Error::InvalidArgument("hull of no points".into()));
    }
    let d = x.len();
    let k = vertices.len();
    // variables: λ (k), s
    let mut obj = vec![0.0; k];
    obj.push(1.0);
    let mut lp = LinearProgram::minimize(obj);
    for r in 0..d {
        let mut row: Vec<f64> = vertices.iter().map(|v| v[r]).collect();
        row.push(-1.0);
        lp.le(row.clone(), x[r]);
        row.iter_mut().take(k).for_each(|v| *v = -*v);
        lp.le(row, -x[r]);
    }
    let mut simplex = vec![1.0; k];
    simplex.push(0.0);
    lp.add(simplex, Relation::Eq, 1.0);
    match lp_solve(&lp)? {
        LpOutcome::Optimal { value, .. } => Ok(-value),
        other => Err(Error::Guard(format!("hull distance LP ended {other:?}"))),
    }
}

/// `max_{π ∈ F(family, prior)} a·π`, computed profile by profile.
pub fn support_value(a: &[f64], prior: &EmpiricalPrior, family: &[Allocation]) -> Result<f64> {
    let layout = prior.layout();
    if a.len() != layout.dim() {
        return Err(Error::IndexMismatch("direction has the wrong length".into()));
    }
    let n = layout.items();
    let mut total = 0.0;
    for (p, m) in prior.profiles() {
        let best = family
            .iter()
            .map(|alloc| {
                alloc
                    .pairs()
                    .iter()
                    .map(|&(i, j)| {
                        let k = layout.index(i, p[i], j);
                        a[k] * m / prior.slot_mass()[k / n]
                    })
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total)
}

/// Welfare approximation ratio of `oracle` on every profile of `prior`
/// (true values), relative to the best allocation in `family`. Profiles
/// with optimal welfare 0 are skipped.
pub fn measured_alpha(
    oracle: &dyn WelfareOracle,
    inst: &Instance,
    prior: &EmpiricalPrior,
    family: &[Allocation],
) -> f64 {
    let layout = inst.layout();
    let mut values = Vec::with_capacity(layout.dim());
    for i in 0..layout.bidders() {
        for t in 0..layout.types_of(i) {
            values.extend_from_slice(inst.values(i, t));
        }
    }
    let mut buf = ValueMatrix::zeros(layout.bidders(), layout.items());
    let mut worst: f64 = 1.0;
    for (p, _) in prior.profiles() {
        profile_values(&values, layout, p, &mut buf);
        let opt = family.iter().map(|a| buf.welfare(a)).fold(0.0, f64::max);
        if opt > 0.0 {
            worst = worst.min(buf.welfare(&oracle.allocate(&buf)) / opt);
        }
    }
    worst
}

/// Incentive audit of a mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicReport {
    /// Largest `U(v, report w) − U(v, v)` over bidders and type pairs.
    pub max_regret: f64,
    /// `max_regret / v_max`.
    pub regret_vmax: f64,
    /// Regret divided by `v_max · max(1, expected items at the true type)`,
    /// maximized over type pairs.
    pub regret_items: f64,
    /// Standard error of the pair attaining `max_regret` (0 when exact).
    pub regret_stderr: f64,
    /// Largest `max(0, −U(v, v))`.
    pub ir_violation: f64,
    pub ir_stderr: f64,
    pub samples: usize,
}

impl BicReport {
    /// `regret_vmax` plus `sigmas` standard errors (scaled to `v_max`).
    pub fn regret_upper(&self, sigmas: f64, v_max: f64) -> f64 {
        let scale = if v_max > 0.0 { v_max } else { 1.0 };
        self.regret_vmax + sigmas * self.regret_stderr / scale
    }
}

fn audit(
    inst: &Instance,
    layout: &Layout,
    pi: &[f64],
    se: Option<&[f64]>,
    mech: &Mechanism,
    samples: usize,
) -> BicReport {
    let n = layout.items();
    let vmax = if inst.v_max() > 0.0 { inst.v_max() } else { 1.0 };
    let mut rep = BicReport {
        max_regret: 0.0,
        regret_vmax: 0.0,
        regret_items: 0.0,
        regret_stderr: 0.0,
        ir_violation: 0.0,
        ir_stderr: 0.0,
        samples,
    };
    // `se` holds per-entry variance weights: Var(π̂(slot)·v) ≤ Σ_j se_j·v_j²
    let var_at = |slot: usize, v: &[f64]| -> f64 {
        se.map_or(0.0, |s| {
            let row = &s[slot * n..(slot + 1) * n];
            row.iter().zip(v).map(|(a, b)| a * b * b).sum()
        })
    };
    for i in 0..layout.bidders() {
        for t in 0..layout.types_of(i) {
            let v = inst.values(i, t);
            let st = layout.slot(i, t);
            let u = |slot: usize| -> f64 {
                let row = &pi[slot * n..(slot + 1) * n];
                row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - mech.prices.0[slot] + mech.rebate
            };
            let truthful = u(st);
            let ir = (-truthful).max(0.0);
            if ir > rep.ir_violation {
                rep.ir_violation = ir;
                rep.ir_stderr = var_at(st, v).sqrt();
            }
            let items: f64 = pi[st * n..(st + 1) * n].iter().sum();
            for w in 0..layout.types_of(i) {
                if w == t {
                    continue;
                }
                let sw = layout.slot(i, w);
                let regret = u(sw) - truthful;
                if regret > rep.max_regret {
                    rep.max_regret = regret;
                    rep.regret_stderr = (var_at(sw, v) + var_at(st, v)).sqrt();
                }
                rep.regret_items = rep.regret_items.max(regret / (vmax * items.max(1.0)));
            }
        }
    }
    rep.regret_vmax = rep.max_regret / vmax;
    rep
}

/// Exact audit under the true prior: the mechanism's interim rule is
/// computed by enumerating the prior's support, then every BIC and IR
/// inequality is re-checked.
pub fn bic_report_exact(mech: &Mechanism, inst: &Instance, oracle: &dyn WelfareOracle) -> Result<BicReport> {
    mech.validate(inst)?;
    let prior = EmpiricalPrior::exhaustive(inst)?;
    let pi = mechanism_reduced_form(mech, oracle, &prior)?;
    Ok(audit(inst, inst.layout(), &pi.0, None, mech, 0))
}

/// Monte Carlo audit under the true prior. For each bidder `i` and report
/// `w`, `samples` draws of the other bidders (and of the mechanism's
/// lottery) estimate the interim allocation at `w`; regrets and IR slacks
/// follow, with standard errors.
pub fn verify_bic_regret(
    mech: &Mechanism,
    inst: &Instance,
    oracle: &dyn WelfareOracle,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BicReport> {
    mech.validate(inst)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("the audit needs at least one sample".into()));
    }
    let layout = inst.layout();
    let n = layout.items();
    let dists = inst
        .bidders()
        .iter()
        .map(|b| WeightedIndex::new(b.probs()).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<f64> = mech.mixture.iter().map(|a| a.lambda).collect();
    let atom_dist = WeightedIndex::new(&lambdas).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let virt = mech
        .mixture
        .iter()
        .map(|a| virtual_transform(&a.weights, &mech.marginals, inst))
        .collect::<Result<Vec<_>>>()?;

    let mut pi = vec![0.0; layout.dim()];
    let mut weights = vec![0.0; layout.dim()];
    let mut values = ValueMatrix::zeros(layout.bidders(), n);
    let mut profile = vec![0usize; layout.bidders()];
    for i in 0..layout.bidders() {
        for w in 0..layout.types_of(i) {
            let slot = layout.slot(i, w);
            let mut hits = vec![0.0; n];
            let mut cross = vec![0.0; n * n];
            for _ in 0..samples {
                for (b, d) in dists.iter().enumerate() {
                    profile[b] = if b == i { w } else { d.sample(rng) };
                }
                let f = &virt[atom_dist.sample(rng)];
                profile_values(&f.0, layout, &profile, &mut values);
                let alloc = oracle.allocate(&values);
                let got: Vec<f64> = (0..n).map(|j| if alloc.contains(i, j) { 1.0 } else { 0.0 }).collect();
                for j in 0..n {
                    hits[j] += got[j];
                    for l in 0..n {
                        cross[j * n + l] += got[j] * got[l];
                    }
                }
            }
            let s = samples as f64;
            for j in 0..n {
                pi[slot * n + j] = hits[j] / s;
            }
            // Var(Σ_j g_j v_j) ≤ n·Σ_j v_j² Var(g_j), exact for one item
            for j in 0..n {
                let mean = hits[j] / s;
                let var = (cross[j * n + j] / s - mean * mean).max(0.0);
                weights[slot * n + j] = var * n as f64 / s;
            }
        }
    }
    Ok(audit(inst, layout, &pi, Some(&weights), mech, samples))
}

/// Exact incentive check of a solver point `(π, p)` in original units.
pub fn lp_point_violation(point: &LpPoint, inst: &Instance) -> f64 {
    incentive_violation(&point.to_vec(), inst)
}

/// Expected payments of `prices` minus `m·rebate` under the true prior.
pub fn net_revenue(prices: &PriceRule, rebate: f64, inst: &Instance) -> f64 {
    expected_revenue(&prices.0, inst) - inst.num_bidders() as f64 * rebate
}
