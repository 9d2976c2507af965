//! Auction instances and the vectors that live on them.
//!
//! An [`Instance`] fixes the bidders, their finite type spaces with a
//! categorical prior per bidder (the joint prior is the product), and a
//! reference to the welfare oracle that encodes feasibility. Every
//! per-(bidder, type, item) quantity ([`ReducedForm`], [`VirtualWeights`])
//! and every per-(bidder, type) quantity ([`PriceRule`]) is stored as a flat
//! vector laid out by [`Layout`]: bidders ascending, types in insertion
//! order, items ascending.
//!
//! The JSON documents in this module carry a `schema_version` and address
//! entries by type label, so they stay readable and survive type reordering.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Type probabilities may be off from 1 by this much before validation fails.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Mixture weights must sum to 1 within this tolerance.
pub const MIXTURE_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bidder {
    types: Vec<Type>,
    probs: Vec<f64>,
    budget: Option<f64>,
}

impl Bidder {
    pub fn types(&self) -> &[Type] {
        &self.types
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    pub fn type_index(&self, label: &str) -> Option<usize> {
        self.types.iter().position(|t| t.label == label)
    }
}

/// Reference to a welfare oracle: a registry key plus free-form parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

impl OracleSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        OracleSpec {
            kind: kind.into(),
            params: Map::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Flat index arithmetic shared by every vector defined on an instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    items: usize,
    // type_offsets[i] is the slot of bidder i's first type; last entry is the total.
    type_offsets: Vec<usize>,
}

impl Layout {
    pub fn new(items: usize, type_counts: &[usize]) -> Self {
        let mut type_offsets = Vec::with_capacity(type_counts.len() + 1);
        let mut acc = 0;
        type_offsets.push(0);
        for &c in type_counts {
            acc += c;
            type_offsets.push(acc);
        }
        Layout { items, type_offsets }
    }

    pub fn bidders(&self) -> usize {
        self.type_offsets.len() - 1
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn types_of(&self, bidder: usize) -> usize {
        self.type_offsets[bidder + 1] - self.type_offsets[bidder]
    }

    /// Number of (bidder, type) pairs.
    pub fn total_types(&self) -> usize {
        *self.type_offsets.last().unwrap()
    }

    /// Dimension of a reduced form: items times the number of (bidder, type) pairs.
    pub fn dim(&self) -> usize {
        self.items * self.total_types()
    }

    pub fn slot(&self, bidder: usize, ty: usize) -> usize {
        debug_assert!(ty < self.types_of(bidder));
        self.type_offsets[bidder] + ty
    }

    pub fn index(&self, bidder: usize, ty: usize, item: usize) -> usize {
        self.slot(bidder, ty) * self.items + item
    }

    /// Inverse of [`Layout::slot`].
    pub fn slot_owner(&self, slot: usize) -> (usize, usize) {
        let bidder = self.type_offsets.partition_point(|&o| o <= slot) - 1;
        (bidder, slot - self.type_offsets[bidder])
    }

    pub fn slots_of(&self, bidder: usize) -> std::ops::Range<usize> {
        self.type_offsets[bidder]..self.type_offsets[bidder + 1]
    }

    /// Entries of a flat reduced form belonging to one (bidder, type) slot.
    pub fn block<'a>(&self, flat: &'a [f64], slot: usize) -> &'a [f64] {
        &flat[slot * self.items..(slot + 1) * self.items]
    }
}

/// A validated auction instance. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    items: usize,
    bidders: Vec<Bidder>,
    oracle: OracleSpec,
    v_max: f64,
    layout: Layout,
}

impl Instance {
    pub fn bidders(&self) -> &[Bidder] {
        &self.bidders
    }

    pub fn bidder(&self, i: usize) -> &Bidder {
        &self.bidders[i]
    }

    pub fn num_bidders(&self) -> usize {
        self.bidders.len()
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn oracle_spec(&self) -> &OracleSpec {
        &self.oracle
    }

    /// Largest value of any type for any item (0 for an all-zero instance).
    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn has_budgets(&self) -> bool {
        self.bidders.iter().any(|b| b.budget.is_some())
    }

    pub fn values(&self, bidder: usize, ty: usize) -> &[f64] {
        &self.bidders[bidder].types[ty].values
    }

    pub fn prob(&self, bidder: usize, ty: usize) -> f64 {
        self.bidders[bidder].probs[ty]
    }

    /// Per-slot marginal probabilities `Pr[t_i = B]` under the prior.
    pub fn marginals(&self) -> Vec<f64> {
        self.bidders.iter().flat_map(|b| b.probs.iter().copied()).collect()
    }

    /// Number of type profiles in the support of the product prior.
    pub fn support_size(&self) -> u128 {
        self.bidders.iter().map(|b| b.types.len() as u128).product()
    }

    /// Looks up a type index by label.
    pub fn type_index(&self, bidder: usize, label: &str) -> Result<usize> {
        self.bidders
            .get(bidder)
            .and_then(|b| b.type_index(label))
            .ok_or_else(|| Error::UnknownType {
                bidder,
                label: label.to_string(),
            })
    }

    pub fn type_label(&self, bidder: usize, ty: usize) -> &str {
        &self.bidders[bidder].types[ty].label
    }

    /// Copy of this instance with every value multiplied by `factor > 0`
    /// (budgets scale along).
    pub fn scaled(&self, factor: f64) -> Instance {
        let mut out = self.clone();
        for b in &mut out.bidders {
            for t in &mut b.types {
                for v in &mut t.values {
                    *v *= factor;
                }
            }
            if let Some(budget) = &mut b.budget {
                *budget *= factor;
            }
        }
        out.v_max *= factor;
        out
    }

    pub fn with_oracle(&self, oracle: OracleSpec) -> Instance {
        let mut out = self.clone();
        out.oracle = oracle;
        out
    }

    pub fn to_doc(&self) -> InstanceDoc {
        InstanceDoc {
            schema_version: SCHEMA_VERSION,
            items: self.items,
            bidders: self
                .bidders
                .iter()
                .map(|b| BidderDoc {
                    types: b
                        .types
                        .iter()
                        .zip(&b.probs)
                        .map(|(t, &prob)| TypeDoc {
                            label: t.label.clone(),
                            values: t.values.clone(),
                            prob,
                        })
                        .collect(),
                    budget: b.budget,
                })
                .collect(),
            welfare_oracle: self.oracle.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(raw: &str) -> Result<Instance> {
        let doc: InstanceDoc = serde_json::from_str(raw)?;
        validate_instance(doc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeDoc {
    pub label: String,
    pub values: Vec<f64>,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderDoc {
    pub types: Vec<TypeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

/// Serialized form of an [`Instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub schema_version: u32,
    pub items: usize,
    pub bidders: Vec<BidderDoc>,
    pub welfare_oracle: OracleSpec,
}

/// Checks a parsed instance document and builds an [`Instance`].
///
/// All violations are collected rather than stopping at the first one.
/// Probabilities that sum to 1 within [`PROB_SUM_TOL`] are renormalized.
pub fn validate_instance(doc: InstanceDoc) -> Result<Instance> {
    let mut errs = Vec::new();
    if doc.schema_version != SCHEMA_VERSION {
        errs.push(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            doc.schema_version
        ));
    }
    if doc.items == 0 {
        errs.push("instance needs at least one item".to_string());
    }
    if doc.bidders.is_empty() {
        errs.push("instance needs at least one bidder".to_string());
    }
    let mut bidders = Vec::with_capacity(doc.bidders.len());
    let mut v_max: f64 = 0.0;
    for (i, b) in doc.bidders.into_iter().enumerate() {
        if b.types.is_empty() {
            errs.push(format!("bidder {i}: empty type set"));
        }
        let mut seen = HashSet::new();
        let mut sum = 0.0;
        let mut mass_ok = true;
        for t in &b.types {
            if !seen.insert(t.label.as_str()) {
                errs.push(format!("bidder {i}: duplicate type label {:?}", t.label));
            }
            if t.values.len() != doc.items {
                errs.push(format!(
                    "bidder {i}, type {:?}: {} values for {} items",
                    t.label,
                    t.values.len(),
                    doc.items
                ));
            }
            for &v in &t.values {
                if !v.is_finite() {
                    errs.push(format!("bidder {i}, type {:?}: non-finite value", t.label));
                } else if v < 0.0 {
                    errs.push(format!("bidder {i}, type {:?}: negative value {v}", t.label));
                } else {
                    v_max = v_max.max(v);
                }
            }
            if !(t.prob.is_finite() && t.prob > 0.0) {
                errs.push(format!(
                    "bidder {i}, type {:?}: probability mass {} is not positive",
                    t.label, t.prob
                ));
                mass_ok = false;
            }
            sum += t.prob;
        }
        if mass_ok && !b.types.is_empty() && (sum - 1.0).abs() > PROB_SUM_TOL {
            errs.push(format!("bidder {i}: probabilities sum to {sum}"));
        }
        if let Some(budget) = b.budget {
            if !(budget.is_finite() && budget >= 0.0) {
                errs.push(format!("bidder {i}: budget {budget} is negative"));
            }
        }
        // Re-dividing an already normalized vector can move bits, which would
        // break serialization round trips, so only touch visibly-off sums.
        let probs: Vec<f64> = if (sum - 1.0).abs() > 1e-14 {
            b.types.iter().map(|t| t.prob / sum).collect()
        } else {
            b.types.iter().map(|t| t.prob).collect()
        };
        bidders.push(Bidder {
            types: b
                .types
                .into_iter()
                .map(|t| Type {
                    label: t.label,
                    values: t.values,
                })
                .collect(),
            probs,
            budget: b.budget,
        });
    }
    if !errs.is_empty() {
        return Err(Error::InvalidInstance(errs));
    }
    let counts: Vec<usize> = bidders.iter().map(|b| b.types.len()).collect();
    Ok(Instance {
        items: doc.items,
        layout: Layout::new(doc.items, &counts),
        bidders,
        oracle: doc.welfare_oracle,
        v_max,
    })
}

/// Key of one reduced-form coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RfKey {
    pub bidder: usize,
    #[serde(rename = "type")]
    pub type_label: String,
    pub item: usize,
}

/// The canonical coordinate order of reduced forms on `inst`.
pub fn reduced_form_index(inst: &Instance) -> Vec<RfKey> {
    let mut out = Vec::with_capacity(inst.layout.dim());
    for (i, b) in inst.bidders.iter().enumerate() {
        for t in &b.types {
            for j in 0..inst.items {
                out.push(RfKey {
                    bidder: i,
                    type_label: t.label.clone(),
                    item: j,
                });
            }
        }
    }
    out
}

/// A set of (bidder, item) assignments, kept sorted and duplicate-free.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Allocation(Vec<(usize, usize)>);

impl Allocation {
    pub fn empty() -> Self {
        Allocation(Vec::new())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut v: Vec<_> = pairs.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Allocation(v)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, bidder: usize, item: usize) -> bool {
        self.0.binary_search(&(bidder, item)).is_ok()
    }

    pub fn items_of(&self, bidder: usize) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().filter(move |p| p.0 == bidder).map(|p| p.1)
    }

    pub fn within(&self, bidders: usize, items: usize) -> bool {
        self.0.iter().all(|&(i, j)| i < bidders && j < items)
    }
}

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                $name(vec![0.0; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, k: usize) -> &f64 {
                &self.0[k]
            }
        }
    };
}

flat_vector!(
    /// Interim allocation probabilities `π_ij(B)`, one per [`RfKey`].
    ReducedForm
);
flat_vector!(
    /// Real weights `w_ij(B)` defining a virtual transformation.
    VirtualWeights
);
flat_vector!(
    /// Interim expected payment per (bidder, type).
    PriceRule
);

/// One labelled coordinate of a reduced form or weight vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfEntry {
    pub bidder: usize,
    #[serde(rename = "type")]
    pub type_label: String,
    pub item: usize,
    pub value: f64,
}

/// One labelled per-(bidder, type) value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeEntry {
    pub bidder: usize,
    #[serde(rename = "type")]
    pub type_label: String,
    pub value: f64,
}

fn rf_entries(inst: &Instance, flat: &[f64]) -> Vec<RfEntry> {
    reduced_form_index(inst)
        .into_iter()
        .zip(flat)
        .map(|(k, &value)| RfEntry {
            bidder: k.bidder,
            type_label: k.type_label,
            item: k.item,
            value,
        })
        .collect()
}

fn rf_from_entries(inst: &Instance, entries: &[RfEntry]) -> Result<Vec<f64>> {
    let layout = inst.layout();
    let mut out = vec![f64::NAN; layout.dim()];
    for e in entries {
        if e.bidder >= inst.num_bidders() || e.item >= inst.num_items() {
            return Err(Error::IndexMismatch(format!(
                "entry (bidder {}, item {}) outside the instance",
                e.bidder, e.item
            )));
        }
        let ty = inst
            .type_index(e.bidder, &e.type_label)
            .map_err(|e| Error::IndexMismatch(e.to_string()))?;
        let k = layout.index(e.bidder, ty, e.item);
        if !out[k].is_nan() {
            return Err(Error::IndexMismatch(format!(
                "duplicate entry for bidder {}, type {:?}, item {}",
                e.bidder, e.type_label, e.item
            )));
        }
        if !e.value.is_finite() {
            return Err(Error::Schema(format!(
                "non-finite entry for bidder {}, type {:?}",
                e.bidder, e.type_label
            )));
        }
        out[k] = e.value;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::IndexMismatch(format!(
            "{} of {} coordinates missing",
            out.iter().filter(|v| v.is_nan()).count(),
            out.len()
        )));
    }
    Ok(out)
}

fn type_entries(inst: &Instance, flat: &[f64]) -> Vec<TypeEntry> {
    let layout = inst.layout();
    (0..layout.total_types())
        .map(|slot| {
            let (i, k) = layout.slot_owner(slot);
            TypeEntry {
                bidder: i,
                type_label: inst.type_label(i, k).to_string(),
                value: flat[slot],
            }
        })
        .collect()
}

fn type_from_entries(inst: &Instance, entries: &[TypeEntry]) -> Result<Vec<f64>> {
    let layout = inst.layout();
    let mut out = vec![f64::NAN; layout.total_types()];
    for e in entries {
        let ty = inst
            .type_index(e.bidder, &e.type_label)
            .map_err(|e| Error::IndexMismatch(e.to_string()))?;
        let s = layout.slot(e.bidder, ty);
        if !out[s].is_nan() {
            return Err(Error::IndexMismatch(format!(
                "duplicate entry for bidder {}, type {:?}",
                e.bidder, e.type_label
            )));
        }
        if !e.value.is_finite() {
            return Err(Error::Schema("non-finite per-type entry".to_string()));
        }
        out[s] = e.value;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::IndexMismatch("per-type entries incomplete".to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedFormDoc {
    pub schema_version: u32,
    pub entries: Vec<RfEntry>,
}

impl ReducedForm {
    pub fn to_doc(&self, inst: &Instance) -> ReducedFormDoc {
        ReducedFormDoc {
            schema_version: SCHEMA_VERSION,
            entries: rf_entries(inst, &self.0),
        }
    }

    pub fn from_doc(doc: &ReducedFormDoc, inst: &Instance) -> Result<Self> {
        check_version(doc.schema_version)?;
        let v = rf_from_entries(inst, &doc.entries)?;
        if let Some(bad) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Schema(format!("probability {bad} outside [0, 1]")));
        }
        Ok(ReducedForm(v))
    }
}

impl PriceRule {
    pub fn entries(&self, inst: &Instance) -> Vec<TypeEntry> {
        type_entries(inst, &self.0)
    }

    pub fn from_entries(entries: &[TypeEntry], inst: &Instance) -> Result<Self> {
        Ok(PriceRule(type_from_entries(inst, entries)?))
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported schema_version {v} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// One virtual implementation in a mechanism's mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub lambda: f64,
    pub weights: VirtualWeights,
}

/// A distribution over virtual implementations of the welfare oracle plus
/// an interim price rule and a uniform rebate.
///
/// `marginals` are the per-(bidder, type) probabilities used as denominators
/// of the virtual transformation when the mixture was computed; running the
/// mechanism needs them to reproduce the same virtual values.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub oracle: OracleSpec,
    pub mixture: Vec<Atom>,
    pub prices: PriceRule,
    pub rebate: f64,
    pub marginals: Vec<f64>,
}

impl Mechanism {
    pub fn validate(&self, inst: &Instance) -> Result<()> {
        let layout = inst.layout();
        if self.mixture.is_empty() {
            return Err(Error::Schema("mechanism mixture is empty".to_string()));
        }
        if self.mixture.iter().any(|a| !(a.lambda >= 0.0)) {
            return Err(Error::Schema("negative mixture weight".to_string()));
        }
        let total: f64 = self.mixture.iter().map(|a| a.lambda).sum();
        if (total - 1.0).abs() > MIXTURE_SUM_TOL {
            return Err(Error::Schema(format!("mixture weights sum to {total}")));
        }
        if self.mixture.iter().any(|a| a.weights.len() != layout.dim()) {
            return Err(Error::IndexMismatch("weight vector length".to_string()));
        }
        if self.prices.len() != layout.total_types() || self.marginals.len() != layout.total_types() {
            return Err(Error::IndexMismatch("per-type vector length".to_string()));
        }
        if !(self.rebate >= 0.0) {
            return Err(Error::Schema("rebate must be nonnegative".to_string()));
        }
        if self.marginals.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Schema("virtual marginals must be positive".to_string()));
        }
        Ok(())
    }

    /// Payment charged to `bidder` reporting type `ty`, net of the rebate.
    pub fn net_price(&self, inst: &Instance, bidder: usize, ty: usize) -> f64 {
        self.prices[inst.layout().slot(bidder, ty)] - self.rebate
    }

    pub fn to_doc(&self, inst: &Instance) -> MechanismDoc {
        MechanismDoc {
            schema_version: SCHEMA_VERSION,
            welfare_oracle: self.oracle.clone(),
            rebate: self.rebate,
            prices: type_entries(inst, &self.prices.0),
            virtual_marginals: type_entries(inst, &self.marginals),
            mixture: self
                .mixture
                .iter()
                .map(|a| AtomDoc {
                    lambda: a.lambda,
                    weights: rf_entries(inst, &a.weights.0),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &MechanismDoc, inst: &Instance) -> Result<Self> {
        check_version(doc.schema_version)?;
        let mech = Mechanism {
            oracle: doc.welfare_oracle.clone(),
            mixture: doc
                .mixture
                .iter()
                .map(|a| {
                    Ok(Atom {
                        lambda: a.lambda,
                        weights: VirtualWeights(rf_from_entries(inst, &a.weights)?),
                    })
                })
                .collect::<Result<_>>()?,
            prices: PriceRule(type_from_entries(inst, &doc.prices)?),
            rebate: doc.rebate,
            marginals: type_from_entries(inst, &doc.virtual_marginals)?,
        };
        mech.validate(inst)?;
        Ok(mech)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDoc {
    pub lambda: f64,
    pub weights: Vec<RfEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismDoc {
    pub schema_version: u32,
    pub welfare_oracle: OracleSpec,
    pub rebate: f64,
    pub prices: Vec<TypeEntry>,
    pub virtual_marginals: Vec<TypeEntry>,
    pub mixture: Vec<AtomDoc>,
}

/// Convenience builder used by tests, benches and examples.
pub fn instance_from_parts(
    items: usize,
    bidders: Vec<Vec<(&str, Vec<f64>, f64)>>,
    oracle: OracleSpec,
) -> Result<Instance> {
    validate_instance(InstanceDoc {
        schema_version: SCHEMA_VERSION,
        items,
        bidders: bidders
            .into_iter()
            .map(|types| BidderDoc {
                types: types
                    .into_iter()
                    .map(|(label, values, prob)| TypeDoc {
                        label: label.to_string(),
                        values,
                        prob,
                    })
                    .collect(),
                budget: None,
            })
            .collect(),
        welfare_oracle: oracle,
    })
}
