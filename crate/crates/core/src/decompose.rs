//! Writing an accepted reduced form as a lottery over virtual
//! implementations, and running the resulting mechanism.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lp::{lp_solve, LinearProgram, LpOutcome, Relation};
use crate::model::{Allocation, Atom, Instance, Mechanism, OracleSpec, PriceRule, ReducedForm, VirtualWeights};
use crate::reduced_form::{profile_values, reduced_form_with, virtual_transform, EmpiricalPrior};
use crate::revenue::{LoggedPoint, SolveReport};
use crate::welfare::{ValueMatrix, WelfareOracle};

pub const DEFAULT_DECOMP_TOL: f64 = 1e-6;

/// Atoms with weight below this are dropped before renormalizing.
pub const PRUNE_BELOW: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DecompAtom {
    pub lambda: f64,
    pub w: VirtualWeights,
    pub point: ReducedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub atoms: Vec<DecompAtom>,
    /// `‖Σ λ_k R_k − π*‖∞` after pruning and renormalizing.
    pub residual: f64,
    /// Total weight removed by pruning (the renormalization perturbation).
    pub pruned_mass: f64,
}

impl Decomposition {
    pub fn lambda_sum(&self) -> f64 {
        self.atoms.iter().map(|a| a.lambda).sum()
    }

    pub fn mixed_point(&self) -> Vec<f64> {
        mix(&self.atoms, self.atoms.first().map_or(0, |a| a.point.len()))
    }
}

fn mix(atoms: &[DecompAtom], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for a in atoms {
        for (v, p) in acc.iter_mut().zip(&a.point.0) {
            *v += a.lambda * p;
        }
    }
    acc
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Finds `λ ≥ 0`, `Σλ = 1` minimizing `‖Σ λ_k R_k − π*‖₁` over the logged
/// points, and fails if the resulting `‖·‖∞` residual exceeds `tol`.
///
/// Points with bit-identical `R` are merged (the first weight vector wins).
pub fn convex_decompose(pi_star: &ReducedForm, log: &[LoggedPoint], tol: f64) -> Result<Decomposition> {
    if log.is_empty() {
        return Err(Error::InvalidArgument(
            "decomposition needs at least one logged point".into(),
        ));
    }
    let d = pi_star.len();
    if log.iter().any(|q| q.point.len() != d || q.w.len() != d) {
        return Err(Error::IndexMismatch("logged point has the wrong length".into()));
    }
    let mut seen = HashMap::new();
    let mut cols: Vec<&LoggedPoint> = Vec::new();
    for q in log {
        let key: Vec<u64> = q.point.0.iter().map(|v| v.to_bits()).collect();
        seen.entry(key).or_insert_with(|| {
            cols.push(q);
        });
    }

    // variables: λ (k), s⁺ (d), s⁻ (d)
    let k = cols.len();
    let mut obj = vec![0.0; k];
    obj.extend(std::iter::repeat(1.0).take(2 * d));
    let mut lp = LinearProgram::minimize(obj);
    for r in 0..d {
        let mut row: Vec<f64> = cols.iter().map(|q| q.point.0[r]).collect();
        row.extend((0..d).map(|j| if j == r { 1.0 } else { 0.0 }));
        row.extend((0..d).map(|j| if j == r { -1.0 } else { 0.0 }));
        lp.add(row, Relation::Eq, pi_star.0[r]);
    }
    let mut simplex = vec![1.0; k];
    simplex.extend(std::iter::repeat(0.0).take(2 * d));
    lp.add(simplex, Relation::Eq, 1.0);
    let x = match lp_solve(&lp)? {
        LpOutcome::Optimal { x, .. } => x,
        other => return Err(Error::Guard(format!("decomposition LP ended {other:?}"))),
    };

    let raw: f64 = x[..k].iter().sum();
    let mut atoms: Vec<DecompAtom> = cols
        .iter()
        .zip(&x[..k])
        .filter(|(_, &l)| l >= PRUNE_BELOW)
        .map(|(q, &l)| DecompAtom {
            lambda: l,
            w: q.w.clone(),
            point: q.point.clone(),
        })
        .collect();
    let kept: f64 = atoms.iter().map(|a| a.lambda).sum();
    if !(kept > 0.0) {
        return Err(Error::Guard("decomposition kept no atoms".into()));
    }
    atoms.iter_mut().for_each(|a| a.lambda /= kept);
    let residual = linf(&mix(&atoms, d), &pi_star.0);
    if !(residual <= tol) {
        return Err(Error::Decomposition {
            residual,
            tolerance: tol,
        });
    }
    Ok(Decomposition {
        atoms,
        residual,
        pruned_mass: (raw - kept).abs(),
    })
}

pub fn assemble_mechanism(
    decomposition: &Decomposition,
    prices: PriceRule,
    rebate: f64,
    oracle: OracleSpec,
    marginals: Vec<f64>,
) -> Mechanism {
    Mechanism {
        oracle,
        mixture: decomposition
            .atoms
            .iter()
            .map(|a| Atom {
                lambda: a.lambda,
                weights: a.w.clone(),
            })
            .collect(),
        prices,
        rebate,
        marginals,
    }
}

/// Decomposes a solve's `π*` and assembles the mechanism it implements.
pub fn mechanism_from_report(inst: &Instance, report: &SolveReport, tol: f64) -> Result<(Mechanism, Decomposition)> {
    let dec = convex_decompose(&report.pi_star, &report.query_log, tol)?;
    let mech = assemble_mechanism(
        &dec,
        report.p_star.clone(),
        report.rebate,
        inst.oracle_spec().clone(),
        report.virtual_marginals.clone(),
    );
    mech.validate(inst)?;
    Ok((mech, dec))
}

/// Index of the atom selected by a uniform draw `u ∈ [0, 1)`.
fn pick_atom(mech: &Mechanism, u: f64) -> usize {
    let total: f64 = mech.mixture.iter().map(|a| a.lambda).sum();
    let mut acc = 0.0;
    for (k, a) in mech.mixture.iter().enumerate() {
        acc += a.lambda / total;
        if u < acc {
            return k;
        }
    }
    mech.mixture.iter().rposition(|a| a.lambda > 0.0).unwrap_or(0)
}

/// Runs the mechanism on reported type indices: draws an atom, applies its
/// virtual transformation to the reports, calls the oracle and charges
/// each bidder the price of its report minus the rebate.
pub fn run_mechanism(
    mech: &Mechanism,
    inst: &Instance,
    oracle: &dyn WelfareOracle,
    reported: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Allocation, Vec<f64>)> {
    let layout = inst.layout();
    if reported.len() != layout.bidders() {
        return Err(Error::IndexMismatch(format!(
            "{} reports for {} bidders",
            reported.len(),
            layout.bidders()
        )));
    }
    for (i, &t) in reported.iter().enumerate() {
        if t >= layout.types_of(i) {
            return Err(Error::IndexMismatch(format!("bidder {i} has no type {t}")));
        }
    }
    let atom = &mech.mixture[pick_atom(mech, rng.gen::<f64>())];
    let f = virtual_transform(&atom.weights, &mech.marginals, inst)?;
    let mut values = ValueMatrix::zeros(layout.bidders(), layout.items());
    profile_values(&f.0, layout, reported, &mut values);
    let alloc = oracle.allocate(&values);
    let payments = reported
        .iter()
        .enumerate()
        .map(|(i, &t)| mech.net_price(inst, i, t))
        .collect();
    Ok((alloc, payments))
}

/// [`run_mechanism`] on type labels.
pub fn run_mechanism_labels(
    mech: &Mechanism,
    inst: &Instance,
    oracle: &dyn WelfareOracle,
    labels: &[&str],
    rng: &mut ChaCha8Rng,
) -> Result<(Allocation, Vec<f64>)> {
    let reported = labels
        .iter()
        .enumerate()
        .map(|(i, l)| inst.type_index(i, l))
        .collect::<Result<Vec<_>>>()?;
    run_mechanism(mech, inst, oracle, &reported, rng)
}

/// Exact interim rule of the mechanism over the profiles of `prior`: the
/// λ-mixture of each atom's reduced form, with virtual values taken from the
/// mechanism's own marginals. With `prior` equal to the `D′` the mechanism
/// was built on, this is the reduced form the solver accepted.
pub fn mechanism_reduced_form(
    mech: &Mechanism,
    oracle: &dyn WelfareOracle,
    prior: &EmpiricalPrior,
) -> Result<ReducedForm> {
    let mut acc = vec![0.0; prior.layout().dim()];
    for a in &mech.mixture {
        let rf = reduced_form_with(oracle, &a.weights, &mech.marginals, prior)?;
        for (v, p) in acc.iter_mut().zip(&rf.0) {
            *v += a.lambda * p;
        }
    }
    Ok(ReducedForm(acc))
}

/// Empirical interim allocation probabilities from simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimEstimate {
    pub draws: usize,
    pub pi: Vec<f64>,
    /// Standard error of each entry.
    pub stderr: Vec<f64>,
    /// Draws in which each (bidder, type) appeared.
    pub slot_draws: Vec<usize>,
    pub mean_revenue: f64,
    pub revenue_stderr: f64,
}

impl InterimEstimate {
    /// Largest `|π̂_k − π_k|` in units of the binomial standard error, taken
    /// at whichever of `π̂_k` and the reference `π_k` gives the larger error.
    /// `floor` is added to every error so entries at exactly 0 or 1 stay
    /// finite.
    pub fn max_z(&self, reference: &[f64], floor: f64) -> f64 {
        let n = self.pi.len() / self.slot_draws.len().max(1);
        self.pi
            .iter()
            .zip(reference)
            .enumerate()
            .filter(|(k, _)| self.slot_draws[k / n] > 0)
            .map(|(k, (e, r))| {
                let c = self.slot_draws[k / n] as f64;
                let var = |p: f64| p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / c;
                let se = var(*r).max(var(*e)).sqrt() + floor;
                (e - r).abs() / se
            })
            .fold(0.0, f64::max)
    }
}

/// Runs the mechanism on `draws` profiles from `draw_profile` and tallies
/// how often each (bidder, type) receives each item.
pub fn simulate_interim(
    mech: &Mechanism,
    inst: &Instance,
    oracle: &dyn WelfareOracle,
    draw_profile: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<usize>,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<InterimEstimate> {
    if draws == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one draw".into()));
    }
    let layout = inst.layout();
    let mut hits = vec![0usize; layout.dim()];
    let mut seen = vec![0usize; layout.total_types()];
    let (mut rev, mut rev2) = (0.0, 0.0);
    for _ in 0..draws {
        let profile = draw_profile(rng);
        let (alloc, pay) = run_mechanism(mech, inst, oracle, &profile, rng)?;
        for (i, &t) in profile.iter().enumerate() {
            seen[layout.slot(i, t)] += 1;
        }
        for &(i, j) in alloc.pairs() {
            hits[layout.index(i, profile[i], j)] += 1;
        }
        let r: f64 = pay.iter().sum();
        rev += r;
        rev2 += r * r;
    }
    let n = layout.items();
    let mut pi = vec![0.0; layout.dim()];
    let mut stderr = vec![0.0; layout.dim()];
    for k in 0..layout.dim() {
        let c = seen[k / n];
        if c > 0 {
            let p = hits[k] as f64 / c as f64;
            pi[k] = p;
            stderr[k] = (p * (1.0 - p) / c as f64).sqrt();
        }
    }
    let mean = rev / draws as f64;
    let var = (rev2 / draws as f64 - mean * mean).max(0.0);
    Ok(InterimEstimate {
        draws,
        pi,
        stderr,
        slot_draws: seen,
        mean_revenue: mean,
        revenue_stderr: (var / draws as f64).sqrt(),
    })
}

/// A profile sampler over the support of an empirical prior.
pub fn prior_sampler(prior: &EmpiricalPrior) -> Result<impl FnMut(&mut ChaCha8Rng) -> Vec<usize>> {
    use rand::distributions::{Distribution, WeightedIndex};
    let profiles: Vec<Vec<usize>> = prior.profiles().map(|(p, _)| p.to_vec()).collect();
    let masses: Vec<f64> = prior.profiles().map(|(_, m)| m).collect();
    let dist = WeightedIndex::new(&masses).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(move |rng: &mut ChaCha8Rng| profiles[dist.sample(rng)].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::instance_from_parts;
    use crate::revenue::{solve, SolveConfig};
    use crate::welfare::exact_single_item;
    use rand::SeedableRng;

    fn lp(w: &[f64], p: &[f64]) -> LoggedPoint {
        LoggedPoint {
            w: VirtualWeights(w.to_vec()),
            point: ReducedForm(p.to_vec()),
        }
    }

    #[test]
    fn vertex_and_origin_cases() {
        let log = vec![lp(&[1.0, 0.0], &[1.0, 0.0]), lp(&[0.0, 0.0], &[0.0, 0.0])];
        let d = convex_decompose(&ReducedForm(vec![1.0, 0.0]), &log, 1e-6).unwrap();
        assert_eq!(d.atoms.len(), 1);
        assert_eq!(d.atoms[0].w.0, vec![1.0, 0.0]);
        let d = convex_decompose(&ReducedForm(vec![0.0, 0.0]), &log, 1e-6).unwrap();
        assert_eq!(d.atoms[0].w.0, vec![0.0, 0.0]);
        assert_eq!(d.lambda_sum(), 1.0);
    }

    #[test]
    fn midpoint_splits_evenly() {
        let log = vec![lp(&[1.0, -1.0], &[1.0, 0.0]), lp(&[-1.0, 1.0], &[0.0, 1.0])];
        let d = convex_decompose(&ReducedForm(vec![0.5, 0.5]), &log, 1e-6).unwrap();
        assert_eq!(d.atoms.len(), 2);
        for a in &d.atoms {
            assert!((a.lambda - 0.5).abs() < 1e-12);
        }
        assert!(d.residual <= 1e-12);
    }

    #[test]
    fn point_outside_the_hull_fails_with_its_residual() {
        let log = vec![lp(&[1.0], &[0.5])];
        match convex_decompose(&ReducedForm(vec![0.7]), &log, 1e-6) {
            Err(Error::Decomposition { residual, .. }) => assert!((residual - 0.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(convex_decompose(&ReducedForm(vec![0.7]), &[], 1e-6).is_err());
    }

    fn single_bidder() -> Instance {
        instance_from_parts(
            1,
            vec![vec![("lo", vec![1.0], 0.5), ("hi", vec![2.0], 0.5)]],
            OracleSpec::new("exact_single_item"),
        )
        .unwrap()
    }

    #[test]
    fn null_mechanism_charges_minus_rebate() {
        let inst = single_bidder();
        let mech = Mechanism {
            oracle: OracleSpec::new("exact_single_item"),
            mixture: vec![Atom {
                lambda: 1.0,
                weights: VirtualWeights::zeros(2),
            }],
            prices: PriceRule::zeros(2),
            rebate: 0.25,
            marginals: vec![0.5, 0.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (alloc, pay) = run_mechanism_labels(&mech, &inst, &exact_single_item(), &["hi"], &mut rng).unwrap();
        assert!(alloc.is_empty());
        assert_eq!(pay, vec![-0.25]);
        assert!(matches!(
            run_mechanism_labels(&mech, &inst, &exact_single_item(), &["mid"], &mut rng),
            Err(Error::UnknownType { .. })
        ));
    }

    #[test]
    fn solved_mechanism_matches_its_reduced_form() {
        let b = vec![("lo", vec![1.0], 0.5), ("hi", vec![2.0], 0.5)];
        let inst = instance_from_parts(1, vec![b.clone(), b], OracleSpec::new("exact_single_item")).unwrap();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let o = exact_single_item();
        let rep = solve(&inst, &d, &o, 0.01, &SolveConfig::default()).unwrap();
        let (mech, dec) = mechanism_from_report(&inst, &rep, DEFAULT_DECOMP_TOL).unwrap();
        assert!((dec.lambda_sum() - 1.0).abs() <= 1e-9);
        let exact = mechanism_reduced_form(&mech, &o, &d).unwrap();
        assert!(linf(&exact.0, &dec.mixed_point()) <= 1e-12);
        assert!(linf(&exact.0, &rep.pi_star.0) <= 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = prior_sampler(&d).unwrap();
        let est = simulate_interim(&mech, &inst, &o, &mut draw, 20_000, &mut rng).unwrap();
        assert!(est.max_z(&exact.0, 1e-6) <= 4.0, "{est:?} vs {exact:?}");

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            run_mechanism(&mech, &inst, &o, &[1, 0], &mut a).unwrap(),
            run_mechanism(&mech, &inst, &o, &[1, 0], &mut b).unwrap()
        );
    }
}
