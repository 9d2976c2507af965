//! Building the empirical prior `D′` from an explicit prior or from a
//! profile sampler.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{validate_instance, Instance};
use crate::reduced_form::EmpiricalPrior;

/// Stream of the root seed used to draw `D′`.
pub const STREAM_DPRIME: u64 = 1;
/// Stream used to fix the randomness of derandomized oracles.
pub const STREAM_DERANDOMIZE: u64 = 2;
/// Stream used by mechanism simulation.
pub const STREAM_SIMULATE: u64 = 3;
/// Stream used by incentive audits.
pub const STREAM_VERIFY: u64 = 4;

/// Seed for one consumer of randomness: the first output of ChaCha8 keyed
/// by `root` on stream `stream`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Largest support enumerated in exhaustive mode.
pub const EXHAUSTIVE_CAP: u128 = 100_000;

/// Default constant `C` in [`dprime_size_default`].
pub const DEFAULT_SIZE_CONSTANT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DprimeMode {
    /// The full support with exact probabilities.
    Exhaustive,
    /// `count` i.i.d. profiles, patched so every type appears.
    Sampled { count: usize },
}

/// Draws profiles from the product prior of an instance.
pub struct ProfileSampler {
    dists: Vec<WeightedIndex<f64>>,
}

impl ProfileSampler {
    pub fn new(inst: &Instance) -> Result<Self> {
        let dists = inst
            .bidders()
            .iter()
            .map(|b| WeightedIndex::new(b.probs()).map_err(|e| Error::InvalidArgument(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(ProfileSampler { dists })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.dists.iter().map(|d| d.sample(rng)).collect()
    }

    pub fn draw_type(&self, bidder: usize, rng: &mut ChaCha8Rng) -> usize {
        self.dists[bidder].sample(rng)
    }
}

/// `count` i.i.d. profiles from the instance prior, uniform weight each,
/// then one extra profile per (bidder, type) that never appeared, with the
/// other bidders drawn fresh.
pub fn build_dprime(inst: &Instance, count: usize, seed: u64) -> Result<EmpiricalPrior> {
    if count == 0 {
        return Err(Error::InvalidArgument("D′ needs at least one profile".into()));
    }
    let sampler = ProfileSampler::new(inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = inst.layout();
    let mut seen = vec![false; layout.total_types()];
    let mut profiles = Vec::with_capacity(count);
    for _ in 0..count {
        let p = sampler.draw(&mut rng);
        for (i, &t) in p.iter().enumerate() {
            seen[layout.slot(i, t)] = true;
        }
        profiles.push(p);
    }
    for slot in 0..layout.total_types() {
        if seen[slot] {
            continue;
        }
        let (bidder, ty) = layout.slot_owner(slot);
        let mut p = sampler.draw(&mut rng);
        p[bidder] = ty;
        for (i, &t) in p.iter().enumerate() {
            seen[layout.slot(i, t)] = true;
        }
        profiles.push(p);
    }
    EmpiricalPrior::from_profiles(inst, &profiles)
}

/// The full support of the prior, refused above `cap` profiles.
pub fn build_dprime_exhaustive(inst: &Instance, cap: u128) -> Result<EmpiricalPrior> {
    let size = inst.support_size();
    if size > cap {
        return Err(Error::Guard(format!(
            "support has {size} profiles, exhaustive cap is {cap}"
        )));
    }
    EmpiricalPrior::exhaustive(inst)
}

pub fn build_dprime_mode(inst: &Instance, mode: DprimeMode, seed: u64) -> Result<EmpiricalPrior> {
    match mode {
        DprimeMode::Exhaustive => build_dprime_exhaustive(inst, EXHAUSTIVE_CAP),
        DprimeMode::Sampled { count } => build_dprime(inst, count, seed),
    }
}

/// `max(ceil(c·n·T/eps²), max(T, 1))`: a heuristic size for `D′`.
pub fn dprime_size_default(items: usize, dim: usize, eps: f64, c: f64) -> usize {
    let raw = (c * items as f64 * dim as f64 / (eps * eps)).ceil();
    let floor = dim.max(1);
    if raw.is_finite() && raw < usize::MAX as f64 {
        (raw as usize).max(floor)
    } else {
        usize::MAX
    }
}

/// The default size, capped at the support size (beyond which exhaustive
/// enumeration is cheaper and exact).
pub fn dprime_size_capped(inst: &Instance, eps: f64, c: f64) -> usize {
    let size = dprime_size_default(inst.num_items(), inst.layout().dim(), eps, c);
    let support = inst.support_size();
    if (size as u128) > support {
        support as usize
    } else {
        size
    }
}

/// Builds an instance and `D′` from a profile sampler alone.
///
/// `template` declares the type space (labels and value vectors); its prior
/// is ignored. Marginals are estimated from `count` draws of `sampler`, which
/// returns one type label per bidder. Types that never appear are dropped
/// from the estimated instance with a warning. `D′` is the uniform
/// distribution over the draws.
pub fn sample_only_adapter(
    template: &Instance,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> Vec<String>,
    count: usize,
    seed: u64,
) -> Result<(Instance, EmpiricalPrior)> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample-only access needs at least one sample".into(),
        ));
    }
    let layout = template.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; layout.total_types()];
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let labels = sampler(&mut rng);
        if labels.len() != layout.bidders() {
            return Err(Error::IndexMismatch(format!(
                "sampler returned {} labels for {} bidders",
                labels.len(),
                layout.bidders()
            )));
        }
        let profile = labels
            .iter()
            .enumerate()
            .map(|(i, l)| template.type_index(i, l))
            .collect::<Result<Vec<_>>>()?;
        for (i, &t) in profile.iter().enumerate() {
            counts[layout.slot(i, t)] += 1;
        }
        draws.push(profile);
    }

    let mut doc = template.to_doc();
    let mut remap: Vec<Vec<Option<usize>>> = Vec::new();
    for (i, bidder) in doc.bidders.iter_mut().enumerate() {
        let mut map = Vec::new();
        let mut kept = Vec::new();
        for (t, mut ty) in std::mem::take(&mut bidder.types).into_iter().enumerate() {
            let c = counts[layout.slot(i, t)];
            if c == 0 {
                log::warn!("bidder {i}: type {:?} never sampled, dropped", ty.label);
                map.push(None);
            } else {
                map.push(Some(kept.len()));
                ty.prob = c as f64 / count as f64;
                kept.push(ty);
            }
        }
        bidder.types = kept;
        remap.push(map);
    }
    let inst = validate_instance(doc)?;
    let profiles: Vec<Vec<usize>> = draws
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &t)| remap[i][t].expect("sampled type kept"))
                .collect()
        })
        .collect();
    let dprime = EmpiricalPrior::from_profiles(&inst, &profiles)?;
    Ok((inst, dprime))
}
