//! The weird separation oracle.
//!
//! Given a candidate `π`, an inner ellipsoid searches for `(w, t)` with
//! `w ∈ [-1, 1]^d`, `t ≤ π·w − δ` and `t ≥ A(w)·w`, where `A(w)` is the point
//! returned by the (approximate) welfare algorithm at weights `w`. Finding
//! one certifies that `π` can be cut by `w·π′ ≤ t`, a half-space containing
//! every point the algorithm can reach. If the search comes up empty, `π` is
//! accepted, and the logged points `A(w)` span a hull that contains `π` up
//! to `δ`.
//!
//! Two shortcuts sit beside the ellipsoid. Whenever a new point `A(w)`
//! shows up, a small LP maximizes `π·w − max_k A(w_k)·w` over the box. A
//! value below `δ` proves the search empty (and `π` within `δ` of the hull
//! of the points, in ℓ1). Otherwise the maximizer is itself queried, and
//! accepted as the found `(w, t)` when the algorithm confirms it.

use std::collections::HashSet;

use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::ellipsoid::{default_iterations, dot, ellipsoid_run, EllipsoidOutcome, EllipsoidState, Shortcut};
use crate::linalg::lp::{lp_solve_lazy, LinearProgram, LpOutcome};
use crate::linalg::{Hyperplane, Separation, SeparationOracle};

pub const DEFAULT_DELTA: f64 = 1e-9;

/// Probe rounds per shortcut call before handing control back to the
/// ellipsoid.
const PROBE_ROUNDS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct WsoConfig {
    /// Margin δ in `t ≤ π·w − δ`.
    pub delta: f64,
    /// Inner iteration count; `None` derives it from the dimension.
    pub inner_iters: Option<usize>,
    /// Constant `K` of the derived iteration count.
    pub iter_constant: f64,
    pub vol_floor: f64,
    /// Stop as soon as a small LP proves that the logged cuts leave nothing
    /// feasible, instead of running out the iteration budget.
    pub early_exit: bool,
    /// Query the maximizer of that LP directly.
    pub lp_probe: bool,
}

impl Default for WsoConfig {
    fn default() -> Self {
        WsoConfig {
            delta: DEFAULT_DELTA,
            inner_iters: None,
            iter_constant: 4.0,
            vol_floor: 1e-12,
            early_exit: true,
            lp_probe: true,
        }
    }
}

impl WsoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("WSO delta must be positive".into()));
        }
        if self.inner_iters == Some(0) {
            return Err(Error::InvalidArgument("WSO inner iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// One query of the inner check: weights, threshold and the algorithm's
/// point `A(w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedQuery {
    pub w: Vec<f64>,
    pub t: f64,
    pub point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WsoVerdict {
    Accept,
    /// `w*·π′ ≤ t*`, violated by the queried `π`.
    Violated(Hyperplane),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WsoResult {
    pub verdict: WsoVerdict,
    pub query_log: Vec<LoggedQuery>,
    /// Points carried in from a [`WsoPool`] and used as inner cuts. Empty for
    /// a plain [`wso_query`].
    pub pooled: Vec<LoggedQuery>,
    pub iterations: usize,
}

impl WsoResult {
    /// Every point the verdict relies on: pooled points, then this call's
    /// queries.
    pub fn witnesses(&self) -> impl Iterator<Item = &LoggedQuery> {
        self.pooled.iter().chain(&self.query_log)
    }
}

/// Points `A(w)` remembered across calls on the same algorithm.
///
/// With an exact algorithm every pooled point only restates a valid inner
/// cut. With an approximate one a pooled point can shrink the inner search,
/// which makes acceptance more likely; an accepted `π` is still within `δ`
/// of the hull of the witnesses, so decomposition is unaffected, and cuts
/// are only ever emitted after the algorithm itself confirms them.
#[derive(Clone, Debug, Default)]
pub struct WsoPool {
    entries: Vec<LoggedQuery>,
    seen: HashSet<Vec<u64>>,
}

impl WsoPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LoggedQuery] {
        &self.entries
    }

    fn insert(&mut self, q: &LoggedQuery) {
        if self.seen.insert(bits(&q.point)) {
            self.entries.push(q.clone());
        }
    }
}

struct Inner<'a> {
    pi: &'a [f64],
    delta: f64,
    approx: &'a mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    log: Vec<LoggedQuery>,
    seen_w: HashSet<Vec<u64>>,
    seen_points: HashSet<Vec<u64>>,
    points: Vec<Vec<f64>>,
    dirty: bool,
    early_exit: bool,
    lp_probe: bool,
    iteration: usize,
    /// `A(w)·w` at the accepted `(w, t)`.
    found_value: Option<f64>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl Inner<'_> {
    fn trace(&self, w: &[f64], t: f64, value: Option<f64>, cut: &str) {
        if log::log_enabled!(target: "mdmdp::wso", log::Level::Trace) {
            log::trace!(
                target: "mdmdp::wso",
                "{}",
                json!({"iteration": self.iteration, "w": w, "t": t, "value": value, "cut": cut})
            );
        }
    }

    fn add_point(&mut self, point: &[f64]) {
        if self.seen_points.insert(bits(point)) {
            self.points.push(point.to_vec());
            self.dirty = true;
        }
    }

    /// Calls the algorithm at `w`, logs the query and returns `A(w)·w`.
    fn evaluate(&mut self, w: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let point = (self.approx)(w)?;
        if point.len() != self.pi.len() {
            return Err(Error::IndexMismatch(
                "approximation returned a point of the wrong length".into(),
            ));
        }
        let value = dot(&point, w);
        if self.seen_w.insert(bits(w)) {
            self.log.push(LoggedQuery {
                w: w.to_vec(),
                t,
                point: point.clone(),
            });
        }
        self.add_point(&point);
        Ok((point, value))
    }

    /// Maximizes `π·w − t` subject to `R_k·w ≤ t` over the box; `None`
    /// without points.
    fn best_margin(&self) -> Result<Option<(Vec<f64>, f64)>> {
        if self.points.is_empty() {
            return Ok(None);
        }
        let d = self.pi.len();
        let mut obj = self.pi.to_vec();
        obj.push(-1.0);
        let mut lp = LinearProgram::maximize(obj);
        for j in 0..d {
            lp.bound(j, -1.0, 1.0);
        }
        lp.bound(d, f64::NEG_INFINITY, f64::INFINITY);
        for p in &self.points {
            let mut row = p.clone();
            row.push(-1.0);
            lp.le(row, 0.0);
        }
        Ok(match lp_solve_lazy(&lp, 1)? {
            LpOutcome::Optimal { x, value } => Some((x[..d].to_vec(), value)),
            LpOutcome::Infeasible | LpOutcome::Unbounded => None,
        })
    }
}

impl SeparationOracle for Inner<'_> {
    fn query(&mut self, z: &[f64]) -> Result<Separation> {
        self.iteration += 1;
        let d = self.pi.len();
        let (w, t) = (&z[..d], z[d]);
        if let Some(j) = w.iter().position(|v| v.abs() > 1.0) {
            let mut a = vec![0.0; d + 1];
            a[j] = w[j].signum();
            self.trace(w, t, None, "box");
            return Ok(Separation::Violated(Hyperplane::new(a, 1.0)));
        }
        if t - dot(self.pi, w) > -self.delta {
            let mut a: Vec<f64> = self.pi.iter().map(|v| -v).collect();
            a.push(1.0);
            self.trace(w, t, None, "margin");
            return Ok(Separation::Violated(Hyperplane::new(a, -self.delta)));
        }
        let (point, value) = self.evaluate(w, t)?;
        if t >= value {
            self.found_value = Some(value);
            self.trace(w, t, Some(value), "accept");
            return Ok(Separation::Accept);
        }
        self.trace(w, t, Some(value), "oracle");
        let mut a = point;
        a.push(-1.0);
        Ok(Separation::Violated(Hyperplane::new(a, 0.0)))
    }

    fn shortcut(&mut self) -> Result<Shortcut> {
        if !self.early_exit && !self.lp_probe {
            return Ok(Shortcut::Continue);
        }
        for _ in 0..PROBE_ROUNDS {
            if !self.dirty {
                break;
            }
            self.dirty = false;
            let Some((w, margin)) = self.best_margin()? else {
                break;
            };
            if margin < self.delta {
                if self.early_exit {
                    return Ok(Shortcut::Empty);
                }
                break;
            }
            if !self.lp_probe {
                break;
            }
            self.iteration += 1;
            let t = dot(self.pi, &w) - self.delta;
            let (_, value) = self.evaluate(&w, t)?;
            if t >= value {
                self.found_value = Some(value);
                self.trace(&w, t, Some(value), "probe-accept");
                let mut z = w;
                z.push(t);
                return Ok(Shortcut::Found(z));
            }
            self.trace(&w, t, Some(value), "probe");
        }
        Ok(Shortcut::Continue)
    }
}

/// Inner iteration count used when the config leaves it open.
pub fn inner_iterations(dim: usize, pi: &[f64], cfg: &WsoConfig) -> usize {
    cfg.inner_iters.unwrap_or_else(|| {
        let tau = pi.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let radius = ((dim + 1) as f64).sqrt() * tau;
        default_iterations(dim + 1, radius, cfg.iter_constant, cfg.vol_floor)
    })
}

/// Runs the weird separation oracle on `pi`. `approx(w)` returns `A(w)`.
pub fn wso_query(pi: &[f64], approx: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>, cfg: &WsoConfig) -> Result<WsoResult> {
    run(pi, approx, cfg, None)
}

/// [`wso_query`] seeded with the points of `pool`; new points are added to
/// it afterwards.
pub fn wso_query_pooled(
    pi: &[f64],
    approx: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    cfg: &WsoConfig,
    pool: &mut WsoPool,
) -> Result<WsoResult> {
    run(pi, approx, cfg, Some(pool))
}

fn run(
    pi: &[f64],
    approx: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    cfg: &WsoConfig,
    mut pool: Option<&mut WsoPool>,
) -> Result<WsoResult> {
    cfg.validate()?;
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("candidate point is not finite".into()));
    }
    let d = pi.len();
    let tau = pi.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let r = ((d + 1) as f64).sqrt();
    let mut axes = vec![r; d + 1];
    axes[d] = r * tau;
    let start = EllipsoidState::axis_aligned(vec![0.0; d + 1], &axes);
    let iters = inner_iterations(d, pi, cfg);
    let mut inner = Inner {
        pi,
        delta: cfg.delta,
        approx,
        log: Vec::new(),
        seen_w: HashSet::new(),
        seen_points: HashSet::new(),
        points: Vec::new(),
        dirty: false,
        early_exit: cfg.early_exit,
        lp_probe: cfg.lp_probe,
        iteration: 0,
        found_value: None,
    };
    let mut pooled = Vec::new();
    if let Some(pool) = pool.as_deref() {
        for q in pool.entries() {
            if q.point.len() != d {
                return Err(Error::IndexMismatch("pooled point has the wrong length".into()));
            }
            inner.add_point(&q.point);
            pooled.push(q.clone());
        }
    }
    let outcome = ellipsoid_run(&mut inner, start, iters)?;
    let iterations = outcome.iterations().max(inner.iteration);
    let verdict = match outcome {
        // `A(w*)·w* ≤ t*` gives the deepest cut along `w*` that still holds
        // for every point the algorithm can reach
        EllipsoidOutcome::Accepted { point, .. } => {
            let b = inner.found_value.map_or(point[d], |v| v.min(point[d]));
            WsoVerdict::Violated(Hyperplane::new(point[..d].to_vec(), b))
        }
        EllipsoidOutcome::Infeasible { .. } => WsoVerdict::Accept,
    };
    if let Some(pool) = pool.as_deref_mut() {
        for q in &inner.log {
            pool.insert(q);
        }
    }
    Ok(WsoResult {
        verdict,
        query_log: inner.log,
        pooled,
        iterations,
    })
}

/// Whether the hyperplane of a `Violated` result contains `x` within `tol`.
pub fn contains_check(result: &WsoResult, x: &[f64], tol: f64) -> Result<bool> {
    match &result.verdict {
        WsoVerdict::Violated(h) => Ok(h.contains(x, tol)),
        WsoVerdict::Accept => Err(Error::InvalidArgument(
            "containment is only defined for a violated verdict".into(),
        )),
    }
}
