//! Meta-settings: non-additive auction settings re-expressed with additive
//! bidders over a small number of meta-items.
//!
//! A meta-setting comes with a map `g` from real allocations to meta
//! allocations and a map `h` back, such that every bidder's value is
//! preserved in both directions. Revenue machinery then runs on the meta
//! instance (whose "items" are the meta-items) and [`MetaSetting::to_real`]
//! turns the chosen meta allocation into a real one.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::{symmetric_bidders_dp, ValueMatrix, WelfareOracle};
use crate::error::{Error, Result};
use crate::model::Allocation;

#[derive(Clone, Debug, PartialEq)]
pub enum MetaKind {
    /// Bidder `i` wants exactly the bundle `demand_sets[i]` (one meta-item).
    SingleMinded { demand_sets: Vec<BTreeSet<usize>> },
    /// Bidder `i` values each bundle of `demand_lists[i]` (one meta-item per slot).
    DMinded { demand_lists: Vec<Vec<BTreeSet<usize>>> },
    /// Bidders value only the number of items received; meta-item `j` means `j + 1` items.
    Symmetric { bidders: usize, items: usize },
}

pub struct MetaSetting {
    kind: MetaKind,
    oracle: Arc<dyn WelfareOracle>,
}

/// Greedy by value over (bidder, bundle) candidates: takes a candidate when
/// its bidder is still free and its bundle is disjoint from every bundle
/// already taken.
#[derive(Clone, Debug)]
pub struct DisjointBundlesGreedy {
    lists: Vec<Vec<BTreeSet<usize>>>,
    alpha: f64,
}

impl DisjointBundlesGreedy {
    pub fn new(lists: Vec<Vec<BTreeSet<usize>>>) -> Self {
        // Greedy loses at most the conflicting neighbours of each pick, so
        // 1 / (max conflict degree) is a valid factor.
        let cands: Vec<(usize, &BTreeSet<usize>)> = lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |s| (i, s)))
            .collect();
        let mut max_deg = 1;
        for (a, &(i, s)) in cands.iter().enumerate() {
            let deg = cands
                .iter()
                .enumerate()
                .filter(|&(b, &(k, t))| b != a && (k == i || !s.is_disjoint(t)))
                .count();
            max_deg = max_deg.max(deg);
        }
        DisjointBundlesGreedy {
            lists,
            alpha: 1.0 / max_deg as f64,
        }
    }

    fn slots(&self, bidder: usize) -> usize {
        self.lists.get(bidder).map_or(0, Vec::len)
    }
}

impl WelfareOracle for DisjointBundlesGreedy {
    fn name(&self) -> String {
        "disjoint_bundles_greedy".into()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let mut cands = Vec::new();
        for i in 0..values.bidders() {
            for j in 0..self.slots(i).min(values.items()) {
                let v = values.get(i, j);
                if v > 0.0 {
                    cands.push((v, i, j));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut taken_items = BTreeSet::new();
        let mut served = vec![false; values.bidders()];
        let mut pairs = Vec::new();
        for (_, i, j) in cands {
            let bundle = &self.lists[i][j];
            if !served[i] && bundle.is_disjoint(&taken_items) {
                served[i] = true;
                taken_items.extend(bundle.iter().copied());
                pairs.push((i, j));
            }
        }
        Allocation::from_pairs(pairs)
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        fn rec(
            g: &DisjointBundlesGreedy,
            i: usize,
            bidders: usize,
            items: usize,
            taken: &mut BTreeSet<usize>,
            cur: &mut Vec<(usize, usize)>,
            out: &mut Vec<Allocation>,
        ) {
            if i == bidders {
                out.push(Allocation::from_pairs(cur.iter().copied()));
                return;
            }
            rec(g, i + 1, bidders, items, taken, cur, out);
            for j in 0..g.slots(i).min(items) {
                let bundle = &g.lists[i][j];
                if bundle.is_disjoint(taken) {
                    taken.extend(bundle.iter().copied());
                    cur.push((i, j));
                    rec(g, i + 1, bidders, items, taken, cur, out);
                    cur.pop();
                    for x in bundle {
                        taken.remove(x);
                    }
                }
            }
        }
        let mut out = Vec::new();
        rec(self, 0, bidders, items, &mut BTreeSet::new(), &mut Vec::new(), &mut out);
        Some(out)
    }
}

/// Single-minded bidders: additive dimension 1. The meta-item may not go
/// to two bidders whose demand sets intersect.
pub fn single_minded_meta(demand_sets: Vec<BTreeSet<usize>>) -> Result<MetaSetting> {
    if let Some(i) = demand_sets.iter().position(BTreeSet::is_empty) {
        return Err(Error::InvalidArgument(format!("bidder {i}: empty demand set")));
    }
    let lists = demand_sets.iter().map(|s| vec![s.clone()]).collect();
    Ok(MetaSetting {
        kind: MetaKind::SingleMinded { demand_sets },
        oracle: Arc::new(DisjointBundlesGreedy::new(lists)),
    })
}

/// d-minded bidders: meta-item `j` of bidder `i` stands for bundle
/// `demand_lists[i][j]`; at most one meta-item per bidder and the chosen
/// bundles must be pairwise disjoint.
pub fn d_minded_meta(demand_lists: Vec<Vec<BTreeSet<usize>>>) -> Result<MetaSetting> {
    for (i, l) in demand_lists.iter().enumerate() {
        if l.iter().any(BTreeSet::is_empty) {
            return Err(Error::InvalidArgument(format!(
                "bidder {i}: empty subset in demand list"
            )));
        }
    }
    Ok(MetaSetting {
        oracle: Arc::new(DisjointBundlesGreedy::new(demand_lists.clone())),
        kind: MetaKind::DMinded { demand_lists },
    })
}

/// Symmetric (cardinality-only) bidders: additive dimension `items`, solved
/// exactly by the counting dynamic program.
pub fn symmetric_meta(bidders: usize, items: usize) -> MetaSetting {
    MetaSetting {
        kind: MetaKind::Symmetric { bidders, items },
        oracle: Arc::new(symmetric_bidders_dp(items)),
    }
}

impl MetaSetting {
    pub fn kind(&self) -> &MetaKind {
        &self.kind
    }

    pub fn meta_oracle(&self) -> &Arc<dyn WelfareOracle> {
        &self.oracle
    }

    /// Replaces the meta-level oracle (e.g. with an exact brute-force one).
    pub fn with_oracle(mut self, oracle: Arc<dyn WelfareOracle>) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn bidders(&self) -> usize {
        match &self.kind {
            MetaKind::SingleMinded { demand_sets } => demand_sets.len(),
            MetaKind::DMinded { demand_lists } => demand_lists.len(),
            MetaKind::Symmetric { bidders, .. } => *bidders,
        }
    }

    /// Number of meta-items `d`.
    pub fn dimension(&self) -> usize {
        match &self.kind {
            MetaKind::SingleMinded { .. } => 1,
            MetaKind::DMinded { demand_lists } => demand_lists.iter().map(Vec::len).max().unwrap_or(0),
            MetaKind::Symmetric { items, .. } => *items,
        }
    }

    /// Number of real items touched by the setting.
    pub fn real_items(&self) -> usize {
        match &self.kind {
            MetaKind::SingleMinded { demand_sets } => demand_sets.iter().flatten().max().map_or(0, |m| m + 1),
            MetaKind::DMinded { demand_lists } => demand_lists.iter().flatten().flatten().max().map_or(0, |m| m + 1),
            MetaKind::Symmetric { items, .. } => *items,
        }
    }

    fn bundle(&self, bidder: usize, slot: usize) -> Option<&BTreeSet<usize>> {
        match &self.kind {
            MetaKind::SingleMinded { demand_sets } if slot == 0 => demand_sets.get(bidder),
            MetaKind::DMinded { demand_lists } => demand_lists.get(bidder)?.get(slot),
            _ => None,
        }
    }

    fn bundles_of(&self, bidder: usize) -> usize {
        match &self.kind {
            MetaKind::SingleMinded { .. } => 1,
            MetaKind::DMinded { demand_lists } => demand_lists[bidder].len(),
            MetaKind::Symmetric { items, .. } => *items,
        }
    }

    /// Whether a real allocation belongs to the real feasibility family.
    pub fn real_feasible(&self, real: &Allocation) -> bool {
        let mut owners = std::collections::BTreeMap::new();
        for &(i, j) in real.pairs() {
            if owners.insert(j, i).is_some_and(|o| o != i) || i >= self.bidders() {
                return false;
            }
        }
        match &self.kind {
            MetaKind::Symmetric { items, .. } => real.pairs().iter().all(|&(_, j)| j < *items),
            _ => (0..self.bidders()).all(|i| {
                let got: BTreeSet<usize> = real.items_of(i).collect();
                got.is_empty() || (0..self.bundles_of(i)).any(|s| self.bundle(i, s) == Some(&got))
            }),
        }
    }

    /// `g`: real allocation to meta allocation.
    pub fn to_meta(&self, real: &Allocation) -> Allocation {
        let mut pairs = Vec::new();
        for i in 0..self.bidders() {
            let got: BTreeSet<usize> = real.items_of(i).collect();
            if got.is_empty() {
                continue;
            }
            match &self.kind {
                MetaKind::Symmetric { .. } => pairs.push((i, got.len() - 1)),
                _ => {
                    if let Some(s) = (0..self.bundles_of(i)).find(|&s| self.bundle(i, s) == Some(&got)) {
                        pairs.push((i, s));
                    }
                }
            }
        }
        Allocation::from_pairs(pairs)
    }

    /// `h`: meta allocation to real allocation. Symmetric settings hand out
    /// items in lexicographic order.
    pub fn to_real(&self, meta: &Allocation) -> Allocation {
        let mut pairs = Vec::new();
        let mut next_item = 0;
        for &(i, s) in meta.pairs() {
            match &self.kind {
                MetaKind::Symmetric { .. } => {
                    for j in next_item..next_item + s + 1 {
                        pairs.push((i, j));
                    }
                    next_item += s + 1;
                }
                _ => {
                    if let Some(b) = self.bundle(i, s) {
                        pairs.extend(b.iter().map(|&j| (i, j)));
                    }
                }
            }
        }
        Allocation::from_pairs(pairs)
    }

    /// Value of `bidder` for a real allocation, given its per-meta-item values.
    pub fn real_value(&self, bidder: usize, meta_values: &[f64], real: &Allocation) -> f64 {
        let got: BTreeSet<usize> = real.items_of(bidder).collect();
        if got.is_empty() {
            return 0.0;
        }
        match &self.kind {
            MetaKind::Symmetric { .. } => meta_values.get(got.len() - 1).copied().unwrap_or(0.0),
            _ => (0..self.bundles_of(bidder))
                .find(|&s| self.bundle(bidder, s) == Some(&got))
                .map_or(0.0, |s| meta_values[s]),
        }
    }

    /// Value of `bidder` for a meta allocation (additive over meta-items).
    pub fn meta_value(&self, bidder: usize, meta_values: &[f64], meta: &Allocation) -> f64 {
        meta.items_of(bidder).map(|s| meta_values[s]).sum()
    }

    /// Runs the meta oracle on meta values and maps the result to a real allocation.
    pub fn allocate_real(&self, meta_values: &ValueMatrix) -> Allocation {
        self.to_real(&self.oracle.allocate(meta_values))
    }
}
