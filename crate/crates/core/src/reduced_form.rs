//! Virtual transformations and exact reduced forms over a finite prior.
//!
//! A weight vector `w` induces per-bidder virtual values
//! `f_ij(B) = w_ij(B) / Pr[t_i = B]`. Running a deterministic welfare oracle
//! on the virtual values of every profile of an [`EmpiricalPrior`] and
//! counting who gets what yields the oracle's reduced form at `w`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Instance, Layout, ReducedForm, VirtualWeights};
use crate::welfare::{ValueMatrix, WelfareOracle};

/// A finite distribution over type profiles (one type index per bidder).
///
/// Profiles are stored aggregated with a positive mass each. Sampled priors
/// use integer counts as masses, so interim probabilities are exact ratios
/// of counts; the exhaustive prior uses the product probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalPrior {
    layout: Layout,
    profiles: Vec<Vec<usize>>,
    mass: Vec<f64>,
    total: f64,
    slot_mass: Vec<f64>,
}

impl EmpiricalPrior {
    /// Uniform distribution over the listed (possibly repeated) profiles.
    pub fn from_profiles(inst: &Instance, profiles: &[Vec<usize>]) -> Result<Self> {
        Self::from_weighted(inst, profiles.iter().map(|p| (p.clone(), 1.0)))
    }

    /// Distribution proportional to the given masses. Repeated profiles are merged.
    pub fn from_weighted(inst: &Instance, weighted: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        let layout = inst.layout().clone();
        let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (profile, mass) in weighted {
            if profile.len() != layout.bidders() {
                return Err(Error::IndexMismatch(format!(
                    "profile has {} entries, instance has {} bidders",
                    profile.len(),
                    layout.bidders()
                )));
            }
            if let Some(i) = (0..profile.len()).find(|&i| profile[i] >= layout.types_of(i)) {
                return Err(Error::IndexMismatch(format!(
                    "bidder {i} has no type with index {}",
                    profile[i]
                )));
            }
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(Error::InvalidArgument(format!("profile mass {mass} is not positive")));
            }
            *merged.entry(profile).or_insert(0.0) += mass;
        }
        if merged.is_empty() {
            return Err(Error::InvalidArgument("empirical prior has no profiles".into()));
        }
        let mut slot_mass = vec![0.0; layout.total_types()];
        let mut total = 0.0;
        for (profile, &m) in &merged {
            total += m;
            for (i, &t) in profile.iter().enumerate() {
                slot_mass[layout.slot(i, t)] += m;
            }
        }
        if let Some(slot) = slot_mass.iter().position(|&m| m == 0.0) {
            let (bidder, ty) = layout.slot_owner(slot);
            return Err(Error::ZeroProbability {
                bidder,
                label: inst.type_label(bidder, ty).to_string(),
            });
        }
        let (profiles, mass) = merged.into_iter().unzip();
        Ok(EmpiricalPrior {
            layout,
            profiles,
            mass,
            total,
            slot_mass,
        })
    }

    /// The full support of the instance's product prior with exact masses.
    pub fn exhaustive(inst: &Instance) -> Result<Self> {
        let layout = inst.layout();
        let mut out = Vec::new();
        let mut cur = vec![0usize; layout.bidders()];
        loop {
            let p: f64 = cur.iter().enumerate().map(|(i, &t)| inst.prob(i, t)).product();
            out.push((cur.clone(), p));
            // odometer, last bidder fastest
            let mut i = layout.bidders();
            loop {
                if i == 0 {
                    return Self::from_weighted(inst, out);
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < layout.types_of(i) {
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Number of distinct profiles.
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Distinct profiles with their unnormalized masses.
    pub fn profiles(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.profiles.iter().map(Vec::as_slice).zip(self.mass.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Per-slot mass of profiles with `t_i = B` (counts for sampled priors).
    pub fn slot_mass(&self) -> &[f64] {
        &self.slot_mass
    }

    /// Per-slot marginal probabilities `Pr[t_i = B]`.
    pub fn marginals(&self) -> Vec<f64> {
        self.slot_mass.iter().map(|m| m / self.total).collect()
    }
}

/// Virtual values laid out like the weights they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualValues(pub Vec<f64>);

impl VirtualValues {
    pub fn row<'a>(&'a self, layout: &Layout, bidder: usize, ty: usize) -> &'a [f64] {
        layout.block(&self.0, layout.slot(bidder, ty))
    }
}

/// `f_ij(B) = w_ij(B) / Pr[t_i = B]` with `marginals` given per slot.
pub fn virtual_transform(w: &VirtualWeights, marginals: &[f64], inst: &Instance) -> Result<VirtualValues> {
    let layout = inst.layout();
    if w.len() != layout.dim() || marginals.len() != layout.total_types() {
        return Err(Error::IndexMismatch(
            "virtual weights or marginals have the wrong length".into(),
        ));
    }
    if let Some(slot) = marginals.iter().position(|&p| !(p > 0.0)) {
        let (bidder, ty) = layout.slot_owner(slot);
        return Err(Error::ZeroProbability {
            bidder,
            label: inst.type_label(bidder, ty).to_string(),
        });
    }
    Ok(VirtualValues(virtual_values_unchecked(w.as_slice(), marginals, layout)))
}

fn virtual_values_unchecked(w: &[f64], marginals: &[f64], layout: &Layout) -> Vec<f64> {
    let n = layout.items();
    w.iter().enumerate().map(|(k, v)| v / marginals[k / n]).collect()
}

/// Loads the virtual values of `profile` into `buf` (bidders × items).
pub fn profile_values(values: &[f64], layout: &Layout, profile: &[usize], buf: &mut ValueMatrix) {
    for (i, &t) in profile.iter().enumerate() {
        buf.row_mut(i).copy_from_slice(layout.block(values, layout.slot(i, t)));
    }
}

/// Exact reduced form of `oracle` run on the virtual transformation of `w`,
/// over the profiles of `dprime` (virtual values use the `dprime` marginals).
pub fn reduced_form_of(oracle: &dyn WelfareOracle, w: &VirtualWeights, dprime: &EmpiricalPrior) -> Result<ReducedForm> {
    reduced_form_with(oracle, w, &dprime.marginals(), dprime)
}

/// Like [`reduced_form_of`], but the virtual transformation divides by
/// `marginals` while the profiles and their masses come from `prior`. Used
/// to evaluate a mechanism built on one prior against another.
pub fn reduced_form_with(
    oracle: &dyn WelfareOracle,
    w: &VirtualWeights,
    marginals: &[f64],
    prior: &EmpiricalPrior,
) -> Result<ReducedForm> {
    let dprime = prior;
    let layout = dprime.layout();
    if w.len() != layout.dim() || marginals.len() != layout.total_types() {
        return Err(Error::IndexMismatch(
            "virtual weights or marginals have the wrong length".into(),
        ));
    }
    let f = virtual_values_unchecked(w.as_slice(), marginals, layout);
    let mut acc = vec![0.0; layout.dim()];
    let mut buf = ValueMatrix::zeros(layout.bidders(), layout.items());
    for (profile, mass) in dprime.profiles() {
        profile_values(&f, layout, profile, &mut buf);
        let alloc = oracle.allocate(&buf);
        if !alloc.within(layout.bidders(), layout.items()) {
            return Err(Error::OracleConfig(format!(
                "{} returned an allocation outside the instance",
                oracle.name()
            )));
        }
        for &(i, j) in alloc.pairs() {
            acc[layout.index(i, profile[i], j)] += mass;
        }
    }
    let n = layout.items();
    for (k, v) in acc.iter_mut().enumerate() {
        *v /= dprime.slot_mass()[k / n];
    }
    Ok(ReducedForm(acc))
}

/// `rf · w`, the expected virtual welfare when `rf` is the oracle's own
/// reduced form at `w`.
pub fn virtual_welfare(rf: &ReducedForm, w: &VirtualWeights) -> Result<f64> {
    if rf.len() != w.len() {
        return Err(Error::IndexMismatch(format!(
            "reduced form has {} entries, weights have {}",
            rf.len(),
            w.len()
        )));
    }
    Ok(rf.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instance_from_parts, Allocation, OracleSpec};
    use crate::welfare::{exact_matching, exact_single_item, greedy_matching};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_bidder() -> Instance {
        instance_from_parts(
            1,
            vec![vec![("lo", vec![1.0], 0.5), ("hi", vec![2.0], 0.5)]],
            OracleSpec::new("exact_single_item"),
        )
        .unwrap()
    }

    fn iid_pair() -> Instance {
        let b = vec![("lo", vec![1.0], 0.5), ("hi", vec![2.0], 0.5)];
        instance_from_parts(1, vec![b.clone(), b], OracleSpec::new("exact_single_item")).unwrap()
    }

    /// `w_ij(B) = v_ij(B) · Pr[t_i = B]`, so virtual values equal true values.
    fn prior_weighted(inst: &Instance) -> VirtualWeights {
        let l = inst.layout();
        let mut w = VirtualWeights::zeros(l.dim());
        for i in 0..l.bidders() {
            for t in 0..l.types_of(i) {
                for j in 0..l.items() {
                    w.0[l.index(i, t, j)] = inst.values(i, t)[j] * inst.prob(i, t);
                }
            }
        }
        w
    }

    #[test]
    fn transform_examples() {
        let inst = one_bidder();
        let zero = virtual_transform(&VirtualWeights::zeros(2), &[0.5, 0.5], &inst).unwrap();
        assert_eq!(zero.0, vec![0.0, 0.0]);
        let f = virtual_transform(&VirtualWeights(vec![0.5, -0.3]), &[0.5, 0.25], &inst).unwrap();
        assert_abs_diff_eq!(f.0[0], 1.0);
        assert_abs_diff_eq!(f.0[1], -1.2, epsilon = 1e-15);
        assert!(matches!(
            virtual_transform(&VirtualWeights(vec![0.5, 0.5]), &[1.0, 0.0], &inst),
            Err(Error::ZeroProbability { bidder: 0, .. })
        ));
    }

    #[test]
    fn zero_weights_give_empty_reduced_form() {
        let inst = iid_pair();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let rf = reduced_form_of(&exact_single_item(), &VirtualWeights::zeros(4), &d).unwrap();
        assert_eq!(rf.0, vec![0.0; 4]);
    }

    #[test]
    fn single_bidder_always_wins() {
        let inst = one_bidder();
        let d = EmpiricalPrior::from_profiles(&inst, &[vec![0], vec![1]]).unwrap();
        let rf = reduced_form_of(&exact_single_item(), &prior_weighted(&inst), &d).unwrap();
        assert_eq!(rf.0, vec![1.0, 1.0]);
    }

    #[test]
    fn iid_pair_matches_profile_enumeration() {
        let inst = iid_pair();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        let rf = reduced_form_of(&exact_single_item(), &prior_weighted(&inst), &d).unwrap();
        // enumerate the four profiles by hand: the higher value wins, bidder 0 on ties
        let values = [1.0, 2.0];
        let mut wins = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                if values[a] >= values[b] {
                    wins[0][a] += 0.5;
                } else {
                    wins[1][b] += 0.5;
                }
            }
        }
        assert_eq!(rf.0, vec![wins[0][0], wins[0][1], wins[1][0], wins[1][1]]);
        assert_abs_diff_eq!((rf.0[1] + rf.0[3]) / 2.0, 0.75);
    }

    #[test]
    fn welfare_examples() {
        let rf = ReducedForm(vec![0.75, 0.25]);
        let w = VirtualWeights(vec![0.4, 0.2]);
        assert_abs_diff_eq!(virtual_welfare(&rf, &w).unwrap(), 0.35, epsilon = 1e-15);
        assert_eq!(virtual_welfare(&ReducedForm::zeros(2), &w).unwrap(), 0.0);
        assert!(virtual_welfare(&ReducedForm::zeros(3), &w).is_err());
    }

    #[test]
    fn exhaustive_prior_is_the_product() {
        let inst = instance_from_parts(
            1,
            vec![
                vec![("a", vec![1.0], 0.25), ("b", vec![2.0], 0.75)],
                vec![("c", vec![1.0], 0.4), ("d", vec![3.0], 0.6)],
            ],
            OracleSpec::new("exact_single_item"),
        )
        .unwrap();
        let d = EmpiricalPrior::exhaustive(&inst).unwrap();
        assert_eq!(d.len(), 4);
        let m = d.marginals();
        for (x, y) in m.iter().zip(inst.marginals()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn missing_type_is_rejected() {
        let inst = iid_pair();
        let r = EmpiricalPrior::from_profiles(&inst, &[vec![0, 0], vec![0, 1]]);
        assert!(matches!(r, Err(Error::ZeroProbability { bidder: 0, .. })));
    }

    fn two_by_two(vals: &[i32]) -> Instance {
        let v = |k: usize| vec![f64::from(vals[k]), f64::from(vals[k + 1])];
        instance_from_parts(
            2,
            vec![vec![("x", v(0), 0.5), ("y", v(2), 0.5)], vec![("z", v(4), 1.0)]],
            OracleSpec::new("exact_matching"),
        )
        .unwrap()
    }

    /// Best `rf · w` over every deterministic rule (one allocation per
    /// profile), computing each rule's reduced form by direct counting.
    fn best_interim_dot(inst: &Instance, d: &EmpiricalPrior, family: &[Allocation], w: &[f64]) -> f64 {
        let l = inst.layout();
        let profiles: Vec<(Vec<usize>, f64)> = d.profiles().map(|(p, m)| (p.to_vec(), m)).collect();
        let mut best = f64::NEG_INFINITY;
        let mut choice = vec![0usize; profiles.len()];
        loop {
            let mut num = vec![0.0; l.dim()];
            let mut den = vec![0.0; l.total_types()];
            for (k, (p, m)) in profiles.iter().enumerate() {
                for (i, &t) in p.iter().enumerate() {
                    den[l.slot(i, t)] += m;
                }
                for &(i, j) in family[choice[k]].pairs() {
                    num[l.index(i, p[i], j)] += m;
                }
            }
            let dot: f64 = (0..l.dim()).map(|x| num[x] / den[x / l.items()] * w[x]).sum();
            best = best.max(dot);
            let mut k = 0;
            loop {
                if k == choice.len() {
                    return best;
                }
                choice[k] += 1;
                if choice[k] < family.len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }

    proptest! {
        #[test]
        fn entries_are_count_ratios(
            picks in proptest::collection::vec((0usize..2, 0usize..2), 1..12),
            w in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let inst = iid_pair();
            let mut profiles: Vec<Vec<usize>> = picks.iter().map(|&(a, b)| vec![a, b]).collect();
            profiles.extend([vec![0, 1], vec![1, 0]]);
            let d = EmpiricalPrior::from_profiles(&inst, &profiles).unwrap();
            let rf = reduced_form_of(&exact_single_item(), &VirtualWeights(w), &d).unwrap();
            for (k, v) in rf.0.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v));
                let count = d.slot_mass()[k];
                let scaled = v * count;
                prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }

        #[test]
        fn positive_scaling_keeps_reduced_form(
            vals in proptest::collection::vec(0i32..6, 6),
            w in proptest::collection::vec(-1.0f64..1.0, 6),
            c in 0.01f64..50.0,
        ) {
            let inst = two_by_two(&vals);
            let d = EmpiricalPrior::exhaustive(&inst).unwrap();
            let scaled = VirtualWeights(w.iter().map(|x| x * c).collect());
            for oracle in [&exact_matching() as &dyn WelfareOracle, &greedy_matching()] {
                prop_assert_eq!(
                    reduced_form_of(oracle, &VirtualWeights(w.clone()), &d).unwrap(),
                    reduced_form_of(oracle, &scaled, &d).unwrap()
                );
            }
        }

        #[test]
        fn exact_oracle_maximizes_interim_welfare(
            vals in proptest::collection::vec(0i32..6, 6),
            w in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let inst = two_by_two(&vals);
            let d = EmpiricalPrior::exhaustive(&inst).unwrap();
            let oracle = exact_matching();
            let w = VirtualWeights(w);
            let rf = reduced_form_of(&oracle, &w, &d).unwrap();
            let family = oracle.feasible_allocations(2, 2).unwrap();
            let best = best_interim_dot(&inst, &d, &family, w.as_slice());
            prop_assert!((virtual_welfare(&rf, &w).unwrap() - best).abs() <= 1e-9);
        }
    }
}
