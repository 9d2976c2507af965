//! Welfare oracles: the black-box (possibly approximate, possibly
//! non-truthful) allocation algorithms the revenue solver reduces to.
//!
//! An oracle receives a dense bidder-by-item matrix of real values (entries
//! may be negative) and returns a feasible [`Allocation`]. Ties are broken
//! lexicographically: lowest bidder first, then lowest item.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Allocation, OracleSpec};

mod meta;

pub use meta::{d_minded_meta, single_minded_meta, symmetric_meta, MetaKind, MetaSetting};

/// Row-major bidder-by-item value matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueMatrix {
    bidders: usize,
    items: usize,
    data: Vec<f64>,
}

impl ValueMatrix {
    pub fn zeros(bidders: usize, items: usize) -> Self {
        ValueMatrix {
            bidders,
            items,
            data: vec![0.0; bidders * items],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let items = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == items), "ragged value matrix");
        ValueMatrix {
            bidders: rows.len(),
            items,
            data: rows.concat(),
        }
    }

    pub fn bidders(&self) -> usize {
        self.bidders
    }

    pub fn items(&self) -> usize {
        self.items
    }

    #[inline]
    pub fn get(&self, bidder: usize, item: usize) -> f64 {
        self.data[bidder * self.items + item]
    }

    #[inline]
    pub fn set(&mut self, bidder: usize, item: usize, v: f64) {
        self.data[bidder * self.items + item] = v;
    }

    pub fn row(&self, bidder: usize) -> &[f64] {
        &self.data[bidder * self.items..(bidder + 1) * self.items]
    }

    pub fn row_mut(&mut self, bidder: usize) -> &mut [f64] {
        &mut self.data[bidder * self.items..(bidder + 1) * self.items]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueMatrix {
        ValueMatrix {
            bidders: self.bidders,
            items: self.items,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of the values of the assigned pairs.
    pub fn welfare(&self, alloc: &Allocation) -> f64 {
        alloc.pairs().iter().map(|&(i, j)| self.get(i, j)).sum()
    }
}

/// A deterministic welfare algorithm.
///
/// Implementations must be pure functions of their input so that reduced
/// forms can be computed by enumeration and shared across threads.
pub trait WelfareOracle: Send + Sync {
    fn name(&self) -> String;

    /// Approximation factor: on every input the returned welfare is at least
    /// `alpha()` times the best feasible welfare.
    fn alpha(&self) -> f64;

    fn downward_closed(&self) -> bool {
        true
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation;

    /// Every feasible allocation for the given shape, when the constraint
    /// family is small enough to list. Used only by brute-force auditors.
    fn feasible_allocations(&self, _bidders: usize, _items: usize) -> Option<Vec<Allocation>> {
        None
    }
}

/// A welfare algorithm that consumes randomness. Must pass through
/// [`derandomize`] before it can be used to compute reduced forms.
pub trait RandomizedWelfareOracle: Send + Sync {
    fn name(&self) -> String;
    fn alpha(&self) -> f64;
    fn downward_closed(&self) -> bool {
        true
    }
    fn allocate(&self, values: &ValueMatrix, rng: &mut ChaCha8Rng) -> Allocation;
    fn feasible_allocations(&self, _bidders: usize, _items: usize) -> Option<Vec<Allocation>> {
        None
    }
}

/// Best welfare over an explicit list of allocations, with the first
/// maximizer in list order.
pub fn brute_force_best<'a>(values: &ValueMatrix, family: &'a [Allocation]) -> Option<(&'a Allocation, f64)> {
    let mut best: Option<(&Allocation, f64)> = None;
    for a in family {
        let w = values.welfare(a);
        if best.map_or(true, |(_, b)| w > b) {
            best = Some((a, w));
        }
    }
    best
}

fn single_item_family(bidders: usize) -> Vec<Allocation> {
    std::iter::once(Allocation::empty())
        .chain((0..bidders).map(|i| Allocation::from_pairs([(i, 0)])))
        .collect()
}

/// All matchings of the complete bipartite graph bidders x items.
pub fn matching_family(bidders: usize, items: usize) -> Vec<Allocation> {
    fn rec(
        i: usize,
        bidders: usize,
        items: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Allocation>,
    ) {
        if i == bidders {
            out.push(Allocation::from_pairs(cur.iter().copied()));
            return;
        }
        rec(i + 1, bidders, items, used, cur, out);
        for j in 0..items {
            if !used[j] {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, bidders, items, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, bidders, items, &mut vec![false; items], &mut Vec::new(), &mut out);
    out
}

/// Gives the single item (column 0) to the highest strictly positive value;
/// lowest bidder index wins ties.
#[derive(Clone, Debug, Default)]
pub struct ExactSingleItem;

pub fn exact_single_item() -> ExactSingleItem {
    ExactSingleItem
}

impl WelfareOracle for ExactSingleItem {
    fn name(&self) -> String {
        "exact_single_item".into()
    }

    fn alpha(&self) -> f64 {
        1.0
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..values.bidders() {
            let v = values.get(i, 0);
            if v > 0.0 && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, _)) => Allocation::from_pairs([(i, 0)]),
            None => Allocation::empty(),
        }
    }

    fn feasible_allocations(&self, bidders: usize, _items: usize) -> Option<Vec<Allocation>> {
        Some(single_item_family(bidders))
    }
}

/// Greedy maximal matching: repeatedly takes the largest remaining positive
/// entry whose bidder and item are both free. A 1/2-approximation.
#[derive(Clone, Debug, Default)]
pub struct GreedyMatching;

pub fn greedy_matching() -> GreedyMatching {
    GreedyMatching
}

impl WelfareOracle for GreedyMatching {
    fn name(&self) -> String {
        "greedy_matching".into()
    }

    fn alpha(&self) -> f64 {
        0.5
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..values.bidders() {
            for j in 0..values.items() {
                let v = values.get(i, j);
                if v > 0.0 {
                    edges.push((v, i, j));
                }
            }
        }
        // Descending value, then lexicographic (bidder, item).
        edges.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut bidder_used = vec![false; values.bidders()];
        let mut item_used = vec![false; values.items()];
        let mut pairs = Vec::new();
        for (_, i, j) in edges {
            if !bidder_used[i] && !item_used[j] {
                bidder_used[i] = true;
                item_used[j] = true;
                pairs.push((i, j));
            }
        }
        Allocation::from_pairs(pairs)
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        Some(matching_family(bidders, items))
    }
}

/// Maximum-weight bipartite matching over the positive entries
/// (Hungarian algorithm with potentials).
#[derive(Clone, Debug, Default)]
pub struct ExactMatching;

pub fn exact_matching() -> ExactMatching {
    ExactMatching
}

/// Min-cost perfect assignment on a square cost matrix; returns the column
/// assigned to each row.
fn hungarian(cost: &[f64], size: usize) -> Vec<usize> {
    // 1-based potentials formulation; column 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = cost[(i0 - 1) * size + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; size];
    for j in 1..=size {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

impl WelfareOracle for ExactMatching {
    fn name(&self) -> String {
        "exact_matching".into()
    }

    fn alpha(&self) -> f64 {
        1.0
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let (m, n) = (values.bidders(), values.items());
        let size = m.max(n);
        if size == 0 {
            return Allocation::empty();
        }
        let mut cost = vec![0.0; size * size];
        for i in 0..m {
            for j in 0..n {
                cost[i * size + j] = -values.get(i, j).max(0.0);
            }
        }
        let assign = hungarian(&cost, size);
        Allocation::from_pairs(
            assign
                .into_iter()
                .enumerate()
                .filter(|&(i, j)| i < m && j < n && values.get(i, j) > 0.0),
        )
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        Some(matching_family(bidders, items))
    }
}

/// Exact welfare maximization for bidders who only care about how many
/// items they receive.
///
/// Works in the meta-setting with one meta-item per cardinality: entry
/// `(i, j)` of the input is bidder `i`'s value for receiving `j + 1` items
/// (value for zero items is normalized to 0). Feasible meta-allocations give
/// each bidder at most one meta-item with total cardinality at most `n`.
#[derive(Clone, Debug)]
pub struct SymmetricDp {
    items: usize,
}

pub fn symmetric_bidders_dp(items: usize) -> SymmetricDp {
    SymmetricDp { items }
}

impl SymmetricDp {
    /// Optimal item counts for cardinality curves `V_i(0..=n)`; prefers
    /// fewer items on ties, processing bidders in index order.
    pub fn solve_counts(&self, curves: &[Vec<f64>]) -> Result<Vec<usize>> {
        let n = self.items;
        if let Some((i, c)) = curves.iter().enumerate().find(|(_, c)| c.len() != n + 1) {
            return Err(Error::InvalidArgument(format!(
                "bidder {i}: cardinality curve has {} entries, expected {}",
                c.len(),
                n + 1
            )));
        }
        let rows: Vec<Vec<f64>> = curves
            .iter()
            .map(|c| c[1..].iter().map(|v| v - c[0]).collect())
            .collect();
        Ok(self.counts(&ValueMatrix::from_rows(&rows)))
    }

    fn counts(&self, values: &ValueMatrix) -> Vec<usize> {
        let m = values.bidders();
        let n = self.items.min(values.items());
        // best[i][c]: max welfare of bidders i.. using at most c items.
        let mut best = vec![vec![0.0f64; n + 1]; m + 1];
        let mut choice = vec![vec![0usize; n + 1]; m];
        for i in (0..m).rev() {
            for c in 0..=n {
                let mut b = best[i + 1][c];
                let mut pick = 0;
                for j in 1..=c {
                    let cand = values.get(i, j - 1) + best[i + 1][c - j];
                    if cand > b {
                        b = cand;
                        pick = j;
                    }
                }
                best[i][c] = b;
                choice[i][c] = pick;
            }
        }
        let mut counts = Vec::with_capacity(m);
        let mut c = n;
        for row in choice.iter() {
            let j = row[c];
            counts.push(j);
            c -= j;
        }
        counts
    }
}

impl WelfareOracle for SymmetricDp {
    fn name(&self) -> String {
        format!("symmetric_dp(n={})", self.items)
    }

    fn alpha(&self) -> f64 {
        1.0
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        Allocation::from_pairs(
            self.counts(values)
                .into_iter()
                .enumerate()
                .filter(|&(_, j)| j > 0)
                .map(|(i, j)| (i, j - 1)),
        )
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        let n = self.items.min(items);
        let mut out = Vec::new();
        let mut counts = vec![0usize; bidders];
        loop {
            if counts.iter().sum::<usize>() <= n {
                out.push(Allocation::from_pairs(
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &j)| j > 0)
                        .map(|(i, &j)| (i, j - 1)),
                ));
            }
            let mut k = 0;
            loop {
                if k == bidders {
                    return Some(out);
                }
                counts[k] += 1;
                if counts[k] <= n {
                    break;
                }
                counts[k] = 0;
                k += 1;
            }
        }
    }
}

/// Zeroes negative inputs before calling a downward-closed oracle and drops
/// any returned pair whose original value was negative.
pub struct ClampNegative {
    inner: Arc<dyn WelfareOracle>,
}

pub fn clamp_negative_wrapper(inner: Arc<dyn WelfareOracle>) -> Result<ClampNegative> {
    if !inner.downward_closed() {
        return Err(Error::OracleConfig(format!(
            "{} is not downward-closed; negative inputs cannot be clamped",
            inner.name()
        )));
    }
    Ok(ClampNegative { inner })
}

impl WelfareOracle for ClampNegative {
    fn name(&self) -> String {
        format!("clamp({})", self.inner.name())
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let clamped = values.map(|v| v.max(0.0));
        let alloc = self.inner.allocate(&clamped);
        Allocation::from_pairs(alloc.pairs().iter().copied().filter(|&(i, j)| values.get(i, j) >= 0.0))
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        self.inner.feasible_allocations(bidders, items)
    }
}

/// Adapts a deterministic oracle to the randomized interface (ignores the rng).
pub struct AsRandomized(pub Arc<dyn WelfareOracle>);

impl RandomizedWelfareOracle for AsRandomized {
    fn name(&self) -> String {
        self.0.name()
    }
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }
    fn downward_closed(&self) -> bool {
        self.0.downward_closed()
    }
    fn allocate(&self, values: &ValueMatrix, _rng: &mut ChaCha8Rng) -> Allocation {
        self.0.allocate(values)
    }
    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        self.0.feasible_allocations(bidders, items)
    }
}

/// Gives the single item to a uniformly random bidder, ignoring values.
/// A deliberately weak randomized oracle (alpha = 1/m on nonnegative inputs).
#[derive(Clone, Debug)]
pub struct UniformRandomSingleItem {
    bidders: usize,
}

pub fn uniform_random_single_item(bidders: usize) -> UniformRandomSingleItem {
    UniformRandomSingleItem { bidders }
}

impl RandomizedWelfareOracle for UniformRandomSingleItem {
    fn name(&self) -> String {
        "uniform_random_single_item".into()
    }
    fn alpha(&self) -> f64 {
        1.0 / self.bidders.max(1) as f64
    }
    fn allocate(&self, values: &ValueMatrix, rng: &mut ChaCha8Rng) -> Allocation {
        if values.bidders() == 0 {
            return Allocation::empty();
        }
        Allocation::from_pairs([(rng.gen_range(0..values.bidders()), 0)])
    }
    fn feasible_allocations(&self, bidders: usize, _items: usize) -> Option<Vec<Allocation>> {
        Some(single_item_family(bidders))
    }
}

/// Deterministic best-of-`trials` wrapper around a randomized oracle.
///
/// Trial `k` always draws from the ChaCha stream `k` of `seed`, so the
/// randomness is fixed ahead of time and the wrapper is a pure function of
/// its input.
pub struct Derandomized {
    inner: Arc<dyn RandomizedWelfareOracle>,
    trials: usize,
    seed: u64,
}

pub fn derandomize(inner: Arc<dyn RandomizedWelfareOracle>, trials: usize, seed: u64) -> Result<Derandomized> {
    if trials == 0 {
        return Err(Error::InvalidArgument("derandomize needs at least one trial".into()));
    }
    Ok(Derandomized { inner, trials, seed })
}

impl Derandomized {
    pub fn trials(&self) -> usize {
        self.trials
    }

    /// `(alpha - gamma, confidence)`: each call reaches the degraded factor
    /// with probability at least `1 - exp(-trials * gamma)` over the seed.
    pub fn guarantee(&self, gamma: f64) -> (f64, f64) {
        (self.inner.alpha() - gamma, 1.0 - (-(self.trials as f64) * gamma).exp())
    }

    /// Trials needed so that all inputs of bit budget `input_bits` get the
    /// `alpha - gamma` guarantee simultaneously with failure at most `2^-tau`.
    pub fn trials_for(gamma: f64, input_bits: f64, tau: f64) -> usize {
        ((input_bits + tau) / gamma).ceil().max(1.0) as usize
    }

    fn trial_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        rng
    }
}

impl WelfareOracle for Derandomized {
    fn name(&self) -> String {
        format!("derandomize({}, trials={})", self.inner.name(), self.trials)
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn downward_closed(&self) -> bool {
        self.inner.downward_closed()
    }

    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        let mut best: Option<(Allocation, f64)> = None;
        for k in 0..self.trials {
            let alloc = self.inner.allocate(values, &mut self.trial_rng(k));
            let w = values.welfare(&alloc);
            if best.as_ref().map_or(true, |(_, b)| w > *b) {
                best = Some((alloc, w));
            }
        }
        best.map(|b| b.0).unwrap_or_default()
    }

    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        self.inner.feasible_allocations(bidders, items)
    }
}

/// Wraps a meta-setting's oracle so that it can be referenced from an
/// instance whose "items" are the meta-items.
struct MetaOracle(MetaSetting);

impl WelfareOracle for MetaOracle {
    fn name(&self) -> String {
        self.0.meta_oracle().name()
    }
    fn alpha(&self) -> f64 {
        self.0.meta_oracle().alpha()
    }
    fn allocate(&self, values: &ValueMatrix) -> Allocation {
        self.0.meta_oracle().allocate(values)
    }
    fn feasible_allocations(&self, bidders: usize, items: usize) -> Option<Vec<Allocation>> {
        self.0.meta_oracle().feasible_allocations(bidders, items)
    }
}

type Factory = Box<dyn Fn(&OracleSpec, usize, usize) -> Result<Arc<dyn WelfareOracle>> + Send + Sync>;
type RandomizedFactory =
    Box<dyn Fn(&OracleSpec, usize, usize) -> Result<Arc<dyn RandomizedWelfareOracle>> + Send + Sync>;

/// Resolves [`OracleSpec`] references (the `welfare_oracle` field of an
/// instance) to oracle objects.
///
/// Built-in kinds: `exact_single_item`, `exact_matching`, `greedy_matching`,
/// `symmetric_dp`, `single_minded` (`demand_sets`), `d_minded`
/// (`demand_lists`), `clamp` (`inner`), `derandomize` (`inner`, `trials`,
/// `seed`), and the randomized `uniform_random_single_item` (only valid as
/// the inner oracle of `derandomize`).
pub struct OracleRegistry {
    factories: HashMap<String, Factory>,
    randomized: HashMap<String, RandomizedFactory>,
}

fn param<'a>(spec: &'a OracleSpec, key: &str) -> Result<&'a Value> {
    spec.params
        .get(key)
        .ok_or_else(|| Error::OracleConfig(format!("{}: missing parameter {key:?}", spec.kind)))
}

fn parse_param<T: serde::de::DeserializeOwned>(spec: &OracleSpec, key: &str) -> Result<T> {
    serde_json::from_value(param(spec, key)?.clone())
        .map_err(|e| Error::OracleConfig(format!("{}: parameter {key:?}: {e}", spec.kind)))
}

impl Default for OracleRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl OracleRegistry {
    pub fn empty() -> Self {
        OracleRegistry {
            factories: HashMap::new(),
            randomized: HashMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("exact_single_item", |spec, _m, n| {
            if n != 1 {
                return Err(Error::OracleConfig(format!(
                    "{} needs exactly one item, instance has {n}",
                    spec.kind
                )));
            }
            Ok(Arc::new(ExactSingleItem))
        });
        r.register("exact_matching", |_, _, _| Ok(Arc::new(ExactMatching)));
        r.register("greedy_matching", |_, _, _| Ok(Arc::new(GreedyMatching)));
        r.register("symmetric_dp", |_, _, n| Ok(Arc::new(symmetric_bidders_dp(n))));
        r.register("single_minded", |spec, m, n| {
            let sets: Vec<BTreeSet<usize>> = parse_param(spec, "demand_sets")?;
            if sets.len() != m || n != 1 {
                return Err(Error::OracleConfig(
                    "single_minded: one demand set per bidder and a single meta-item".into(),
                ));
            }
            Ok(Arc::new(MetaOracle(single_minded_meta(sets)?)))
        });
        r.register("d_minded", |spec, m, n| {
            let lists: Vec<Vec<BTreeSet<usize>>> = parse_param(spec, "demand_lists")?;
            let meta = d_minded_meta(lists)?;
            if meta.bidders() != m || meta.dimension() != n {
                return Err(Error::OracleConfig(format!(
                    "d_minded: instance must have {} bidders and {} meta-items",
                    meta.bidders(),
                    meta.dimension()
                )));
            }
            Ok(Arc::new(MetaOracle(meta)))
        });
        r.register_randomized("uniform_random_single_item", |_, m, n| {
            if n != 1 {
                return Err(Error::OracleConfig("uniform_random_single_item needs one item".into()));
            }
            Ok(Arc::new(uniform_random_single_item(m)))
        });
        r
    }

    pub fn register<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&OracleSpec, usize, usize) -> Result<Arc<dyn WelfareOracle>> + Send + Sync + 'static,
    {
        self.factories.insert(kind.to_string(), Box::new(factory));
    }

    pub fn register_randomized<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&OracleSpec, usize, usize) -> Result<Arc<dyn RandomizedWelfareOracle>> + Send + Sync + 'static,
    {
        self.randomized.insert(kind.to_string(), Box::new(factory));
    }

    /// Registers a ready-made oracle under `kind`.
    pub fn register_instance(&mut self, kind: &str, oracle: Arc<dyn WelfareOracle>) {
        self.register(kind, move |_, _, _| Ok(oracle.clone()));
    }

    pub fn resolve(&self, spec: &OracleSpec, bidders: usize, items: usize) -> Result<Arc<dyn WelfareOracle>> {
        match spec.kind.as_str() {
            "clamp" => {
                let inner: OracleSpec = parse_param(spec, "inner")?;
                let inner = self.resolve(&inner, bidders, items)?;
                Ok(Arc::new(clamp_negative_wrapper(inner)?))
            }
            "derandomize" => {
                let inner: OracleSpec = parse_param(spec, "inner")?;
                let trials: usize = parse_param(spec, "trials")?;
                let seed: u64 = parse_param(spec, "seed")?;
                let inner = self.resolve_randomized(&inner, bidders, items)?;
                Ok(Arc::new(derandomize(inner, trials, seed)?))
            }
            kind => match self.factories.get(kind) {
                Some(f) => f(spec, bidders, items),
                None if self.randomized.contains_key(kind) => Err(Error::OracleConfig(format!(
                    "{kind} is randomized; wrap it in {{\"kind\": \"derandomize\"}}"
                ))),
                None => Err(Error::OracleConfig(format!("unknown welfare oracle kind {kind:?}"))),
            },
        }
    }

    fn resolve_randomized(
        &self,
        spec: &OracleSpec,
        bidders: usize,
        items: usize,
    ) -> Result<Arc<dyn RandomizedWelfareOracle>> {
        match self.randomized.get(spec.kind.as_str()) {
            Some(f) => f(spec, bidders, items),
            None => Ok(Arc::new(AsRandomized(self.resolve(spec, bidders, items)?))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vm(rows: &[&[f64]]) -> ValueMatrix {
        ValueMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn optimum(oracle: &dyn WelfareOracle, values: &ValueMatrix) -> f64 {
        let fam = oracle.feasible_allocations(values.bidders(), values.items()).unwrap();
        brute_force_best(values, &fam).unwrap().1
    }

    #[test]
    fn single_item_examples() {
        let o = exact_single_item();
        let a = o.allocate(&vm(&[&[3.0], &[5.0]]));
        assert_eq!(a, Allocation::from_pairs([(1, 0)]));
        assert!(o.allocate(&vm(&[&[-1.0], &[-2.0]])).is_empty());
        assert_eq!(o.allocate(&vm(&[&[4.0], &[4.0]])), Allocation::from_pairs([(0, 0)]));
    }

    #[test]
    fn greedy_matching_examples() {
        let v = vm(&[&[10.0, 9.0], &[9.0, 0.0]]);
        let g = greedy_matching();
        let a = g.allocate(&v);
        assert_eq!(a, Allocation::from_pairs([(0, 0)]));
        assert_eq!(v.welfare(&a), 10.0);
        // brute-force optimum over all matchings
        let opt = optimum(&g, &v);
        assert_eq!(opt, 18.0);
        assert!(v.welfare(&a) >= 0.5 * opt);
        assert!(g.allocate(&vm(&[&[-1.0, -2.0], &[-3.0, -0.5]])).is_empty());
        assert_eq!(g.allocate(&vm(&[&[7.0]])), Allocation::from_pairs([(0, 0)]));
    }

    #[test]
    fn exact_matching_examples() {
        let v = vm(&[&[10.0, 9.0], &[9.0, 0.0]]);
        let a = exact_matching().allocate(&v);
        assert_eq!(a, Allocation::from_pairs([(0, 1), (1, 0)]));
        assert_eq!(v.welfare(&a), 18.0);
        assert!(exact_matching().allocate(&vm(&[&[-3.0]])).is_empty());
        let d = vm(&[&[9.0, 1.0, 1.0], &[1.0, 9.0, 1.0], &[1.0, 1.0, 9.0]]);
        assert_eq!(
            exact_matching().allocate(&d),
            Allocation::from_pairs([(0, 0), (1, 1), (2, 2)])
        );
        // rectangular shapes
        let r = vm(&[&[1.0, 5.0, 2.0]]);
        assert_eq!(exact_matching().allocate(&r), Allocation::from_pairs([(0, 1)]));
        let c = vm(&[&[1.0], &[5.0], &[2.0]]);
        assert_eq!(exact_matching().allocate(&c), Allocation::from_pairs([(1, 0)]));
    }

    #[test]
    fn symmetric_dp_examples() {
        let dp = symmetric_bidders_dp(2);
        // enumerate all (j1, j2) with j1 + j2 <= 2
        let curves = vec![vec![0.0, 3.0, 4.0], vec![0.0, 3.0, 4.0]];
        let mut best = (f64::MIN, (0, 0));
        for j1 in 0..=2usize {
            for j2 in 0..=(2 - j1) {
                let w = curves[0][j1] + curves[1][j2];
                if w > best.0 {
                    best = (w, (j1, j2));
                }
            }
        }
        assert_eq!(best, (6.0, (1, 1)));
        assert_eq!(dp.solve_counts(&curves).unwrap(), vec![1, 1]);

        assert_eq!(
            symmetric_bidders_dp(2).solve_counts(&[vec![0.0, -1.0, -2.0]]).unwrap(),
            vec![0]
        );
        assert_eq!(
            dp.solve_counts(&[vec![0.0, 5.0, 5.0], vec![0.0, 0.0, 0.0]]).unwrap(),
            vec![1, 0]
        );
        assert!(dp.solve_counts(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn clamp_examples() {
        let inner: Arc<dyn WelfareOracle> = Arc::new(exact_matching());
        let c = clamp_negative_wrapper(inner.clone()).unwrap();
        let pos = vm(&[&[1.0, 2.0], &[3.0, 1.0]]);
        assert_eq!(c.allocate(&pos), inner.allocate(&pos));
        let s = clamp_negative_wrapper(Arc::new(exact_single_item())).unwrap();
        assert_eq!(s.allocate(&vm(&[&[-5.0], &[3.0]])), Allocation::from_pairs([(1, 0)]));
        let m = vm(&[&[-1.0, 4.0], &[2.0, -3.0]]);
        let a = c.allocate(&m);
        assert!(a.pairs().iter().all(|&(i, j)| m.get(i, j) >= 0.0));
        let clamped = m.map(|v| v.max(0.0));
        assert_eq!(m.welfare(&a), optimum(&exact_matching(), &clamped));
        assert_eq!(m.welfare(&a), 6.0);
    }

    struct NotDownwardClosed;
    impl WelfareOracle for NotDownwardClosed {
        fn name(&self) -> String {
            "ndc".into()
        }
        fn alpha(&self) -> f64 {
            1.0
        }
        fn downward_closed(&self) -> bool {
            false
        }
        fn allocate(&self, _: &ValueMatrix) -> Allocation {
            Allocation::empty()
        }
    }

    #[test]
    fn clamp_refuses_non_downward_closed() {
        assert!(matches!(
            clamp_negative_wrapper(Arc::new(NotDownwardClosed)),
            Err(Error::OracleConfig(_))
        ));
    }

    #[test]
    fn derandomize_examples() {
        assert!(derandomize(Arc::new(uniform_random_single_item(2)), 0, 1).is_err());

        let det: Arc<dyn WelfareOracle> = Arc::new(greedy_matching());
        let d = derandomize(Arc::new(AsRandomized(det.clone())), 5, 3).unwrap();
        let v = vm(&[&[1.0, 3.0], &[2.0, 2.5]]);
        assert_eq!(d.allocate(&v), det.allocate(&v));

        // Single item, values (1, 2), eight fixed trials. Enumerate what each
        // trial draws for this seed: bidder 2 wins iff some trial drew it.
        let inner = Arc::new(uniform_random_single_item(2));
        let v = vm(&[&[1.0], &[2.0]]);
        let mut hits = 0;
        let seeds = 2000u64;
        for seed in 0..seeds {
            let d = derandomize(inner.clone(), 8, seed).unwrap();
            let drawn: Vec<Allocation> = (0..8).map(|k| inner.allocate(&v, &mut d.trial_rng(k))).collect();
            let expect = if drawn.contains(&Allocation::from_pairs([(1, 0)])) {
                Allocation::from_pairs([(1, 0)])
            } else {
                Allocation::from_pairs([(0, 0)])
            };
            let got = d.allocate(&v);
            assert_eq!(got, expect);
            assert_eq!(d.allocate(&v), got);
            if got == Allocation::from_pairs([(1, 0)]) {
                hits += 1;
            }
        }
        // 1 - 2^-8 success per seed; allow binomial slack.
        assert!(hits as f64 / seeds as f64 >= 1.0 - 2f64.powi(-8) - 0.01);
        let (a, conf) = d_guarantee();
        assert!((a - 0.4).abs() < 1e-12 && conf > 0.0);
    }

    fn d_guarantee() -> (f64, f64) {
        derandomize(Arc::new(uniform_random_single_item(2)), 10, 0)
            .unwrap()
            .guarantee(0.1)
    }

    #[test]
    fn registry_resolves_builtins() {
        let r = OracleRegistry::with_builtins();
        assert!(r.resolve(&OracleSpec::new("exact_single_item"), 2, 1).is_ok());
        assert!(r.resolve(&OracleSpec::new("exact_single_item"), 2, 2).is_err());
        assert!(r.resolve(&OracleSpec::new("nope"), 2, 2).is_err());
        assert!(r.resolve(&OracleSpec::new("uniform_random_single_item"), 2, 1).is_err());
        let spec = OracleSpec::new("derandomize")
            .with_param("inner", serde_json::json!({"kind": "uniform_random_single_item"}))
            .with_param("trials", 4.into())
            .with_param("seed", 9.into());
        let o = r.resolve(&spec, 2, 1).unwrap();
        let v = vm(&[&[1.0], &[2.0]]);
        assert_eq!(o.allocate(&v), o.allocate(&v));
        let clamp = OracleSpec::new("clamp").with_param("inner", serde_json::json!({"kind": "greedy_matching"}));
        assert_eq!(r.resolve(&clamp, 2, 2).unwrap().alpha(), 0.5);
        let sm = OracleSpec::new("single_minded").with_param("demand_sets", serde_json::json!([[0, 1], [1, 2]]));
        assert!(r.resolve(&sm, 2, 1).is_ok());
    }

    fn small_matrix() -> impl Strategy<Value = ValueMatrix> {
        (1usize..=4, 1usize..=4).prop_flat_map(|(m, n)| {
            proptest::collection::vec(-5i32..=5, m * n).prop_map(move |v| ValueMatrix {
                bidders: m,
                items: n,
                data: v.into_iter().map(f64::from).collect(),
            })
        })
    }

    fn check_alpha(oracle: &dyn WelfareOracle, values: &ValueMatrix) -> std::result::Result<(), TestCaseError> {
        let alloc = oracle.allocate(values);
        let fam = oracle.feasible_allocations(values.bidders(), values.items()).unwrap();
        prop_assert!(
            fam.contains(&alloc),
            "{} returned an infeasible allocation",
            oracle.name()
        );
        let opt = brute_force_best(values, &fam).unwrap().1;
        prop_assert!(values.welfare(&alloc) >= oracle.alpha() * opt - 1e-9);
        Ok(())
    }

    proptest! {
        #[test]
        fn builtin_oracles_meet_alpha(values in small_matrix()) {
            check_alpha(&exact_matching(), &values)?;
            check_alpha(&greedy_matching(), &values)?;
            check_alpha(&symmetric_bidders_dp(values.items()), &values)?;
            let single = ValueMatrix { bidders: values.bidders(), items: 1,
                data: (0..values.bidders()).map(|i| values.get(i, 0)).collect() };
            check_alpha(&exact_single_item(), &single)?;
            let clamp = clamp_negative_wrapper(Arc::new(greedy_matching())).unwrap();
            check_alpha(&clamp, &values)?;
        }

        #[test]
        fn clamp_never_assigns_negative(values in small_matrix()) {
            let c = clamp_negative_wrapper(Arc::new(greedy_matching())).unwrap();
            let a = c.allocate(&values);
            prop_assert!(a.pairs().iter().all(|&(i, j)| values.get(i, j) >= 0.0));
        }

        #[test]
        fn derandomize_is_pure(values in small_matrix(), seed in any::<u64>()) {
            let single = ValueMatrix { bidders: values.bidders(), items: 1,
                data: (0..values.bidders()).map(|i| values.get(i, 0)).collect() };
            let d = derandomize(Arc::new(uniform_random_single_item(values.bidders())), 6, seed).unwrap();
            prop_assert_eq!(d.allocate(&single), d.allocate(&single));
        }
    }
}
