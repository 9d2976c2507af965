//! Central-cut ellipsoid method driven by a separation oracle.
//!
//! The ellipsoid is `{x : (x - c)ᵀ P⁻¹ (x - c) <= 1}`. Oracles need not
//! describe a convex set: the engine only relies on every returned cut
//! strictly separating the queried center, which it checks.

use crate::error::{Error, Result};

/// The half-space `a·x <= b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperplane {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Hyperplane { a, b }
    }

    /// `a·x - b`; positive means `x` violates the constraint.
    pub fn excess(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) - self.b
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.excess(x) <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Separation {
    Accept,
    Violated(Hyperplane),
}

pub trait SeparationOracle {
    fn query(&mut self, x: &[f64]) -> Result<Separation>;

    /// Consulted before the first query and after every cut. Oracles that
    /// can cheaply certify emptiness of everything cut so far, or find an
    /// accepted point by other means, use this to stop early. A returned
    /// point must be one the oracle accepts.
    fn shortcut(&mut self) -> Result<Shortcut> {
        Ok(Shortcut::Continue)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shortcut {
    Continue,
    Empty,
    Found(Vec<f64>),
}

/// Adapts a closure into a [`SeparationOracle`].
pub struct FnOracle<F>(pub F);

impl<F: FnMut(&[f64]) -> Result<Separation>> SeparationOracle for FnOracle<F> {
    fn query(&mut self, x: &[f64]) -> Result<Separation> {
        (self.0)(x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative floor on the shape matrix below which the ellipsoid is treated
/// as flat.
pub const DEGENERACY_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidState {
    center: Vec<f64>,
    /// Row-major `d × d` symmetric positive-definite shape matrix.
    shape: Vec<f64>,
    iteration: usize,
}

impl EllipsoidState {
    /// Ball of `radius` around the origin.
    pub fn ball(dim: usize, radius: f64) -> Self {
        Self::axis_aligned(vec![0.0; dim], &vec![radius; dim])
    }

    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn axis_aligned(center: Vec<f64>, semi_axes: &[f64]) -> Self {
        let d = center.len();
        let mut shape = vec![0.0; d * d];
        for (i, r) in semi_axes.iter().enumerate() {
            shape[i * d + i] = r * r;
        }
        EllipsoidState {
            center,
            shape,
            iteration: 0,
        }
    }

    /// Smallest axis-aligned ellipsoid of this shape containing the box
    /// `[lo, hi]`: centered at the midpoint, semi-axes `sqrt(d)` times the
    /// half-widths.
    pub fn enclosing_box(lo: &[f64], hi: &[f64]) -> Self {
        let scale = (lo.len() as f64).sqrt();
        let center = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let axes: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(l, h)| (0.5 * (h - l)).max(1e-12) * scale)
            .collect();
        Self::axis_aligned(center, &axes)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn shape_times(&self, a: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| dot(&self.shape[i * d..(i + 1) * d], a)).collect()
    }

    fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.shape[i * d + i]).sum()
    }

    /// Whether `x` lies in the ellipsoid (used by tests; solves with a
    /// Cholesky factor).
    pub fn contains(&self, x: &[f64]) -> bool {
        let d = self.dim();
        let Some(l) = cholesky(&self.shape, d) else {
            return false;
        };
        let mut y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        for i in 0..d {
            let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
            y[i] = (y[i] - s) / l[i * d + i];
        }
        dot(&y, &y) <= 1.0 + 1e-9
    }

    /// Central cut through the center along `a`. Returns false when the
    /// shape matrix has become degenerate in the cut direction.
    pub fn cut(&mut self, a: &[f64]) -> bool {
        let d = self.dim();
        let pa = self.shape_times(a);
        let apa = dot(a, &pa);
        let aa = dot(a, a);
        if !(apa > 0.0) || !apa.is_finite() || apa / aa < DEGENERACY_FLOOR * self.trace() {
            return false;
        }
        let norm = apa.sqrt();
        let g: Vec<f64> = pa.iter().map(|v| v / norm).collect();
        self.iteration += 1;
        if d == 1 {
            self.center[0] -= g[0] / 2.0;
            self.shape[0] /= 4.0;
            return true;
        }
        let df = d as f64;
        for (c, gi) in self.center.iter_mut().zip(&g) {
            *c -= gi / (df + 1.0);
        }
        let scale = df * df / (df * df - 1.0);
        let beta = 2.0 / (df + 1.0);
        for i in 0..d {
            for j in 0..d {
                let v = &mut self.shape[i * d + j];
                *v = scale * (*v - beta * g[i] * g[j]);
            }
        }
        true
    }
}

/// Lower-triangular Cholesky factor, or `None` if not positive definite.
pub fn cholesky(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = m[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (m[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// `ceil(k · d² · ln(init_radius / vol_floor))`.
pub fn default_iterations(dim: usize, init_radius: f64, k: f64, vol_floor: f64) -> usize {
    let d = dim.max(1) as f64;
    let ln = (init_radius / vol_floor).ln().max(1.0);
    (k * d * d * ln).ceil() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub enum EllipsoidOutcome {
    Accepted { point: Vec<f64>, iterations: usize },
    Infeasible { iterations: usize, degenerate: bool },
}

impl EllipsoidOutcome {
    pub fn iterations(&self) -> usize {
        match self {
            EllipsoidOutcome::Accepted { iterations, .. } | EllipsoidOutcome::Infeasible { iterations, .. } => {
                *iterations
            }
        }
    }
}

/// Queries `oracle` at successive centers, starting from `start`, and
/// returns the first accepted center or gives up after `max_iters` cuts.
pub fn ellipsoid_run(
    oracle: &mut dyn SeparationOracle,
    mut state: EllipsoidState,
    max_iters: usize,
) -> Result<EllipsoidOutcome> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let early = |s: Shortcut, iterations: usize| match s {
        Shortcut::Continue => None,
        Shortcut::Empty => Some(EllipsoidOutcome::Infeasible {
            iterations,
            degenerate: false,
        }),
        Shortcut::Found(point) => Some(EllipsoidOutcome::Accepted { point, iterations }),
    };
    if let Some(out) = early(oracle.shortcut()?, 0) {
        return Ok(out);
    }
    for it in 0..max_iters {
        match oracle.query(state.center())? {
            Separation::Accept => {
                return Ok(EllipsoidOutcome::Accepted {
                    point: state.center().to_vec(),
                    iterations: it + 1,
                })
            }
            Separation::Violated(h) => {
                if h.a.len() != state.dim() {
                    return Err(Error::InvalidArgument("cut has the wrong dimension".into()));
                }
                let excess = h.excess(state.center());
                if !(excess > 0.0) {
                    return Err(Error::Guard(format!(
                        "separation oracle returned a cut that does not separate the query (excess {excess:e})"
                    )));
                }
                if !state.cut(&h.a) {
                    return Ok(EllipsoidOutcome::Infeasible {
                        iterations: it + 1,
                        degenerate: true,
                    });
                }
                if let Some(out) = early(oracle.shortcut()?, it + 1) {
                    return Ok(out);
                }
            }
        }
    }
    Ok(EllipsoidOutcome::Infeasible {
        iterations: max_iters,
        degenerate: false,
    })
}

/// Ellipsoid feasibility from the origin-centered ball of `init_radius`.
pub fn ellipsoid_feasible(
    oracle: &mut dyn SeparationOracle,
    init_radius: f64,
    dim: usize,
    max_iters: usize,
) -> Result<EllipsoidOutcome> {
    if !(init_radius > 0.0) {
        return Err(Error::InvalidArgument("init_radius must be positive".into()));
    }
    ellipsoid_run(oracle, EllipsoidState::ball(dim, init_radius), max_iters)
}

/// One probe of a bisection search.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuessRecord {
    pub guess: f64,
    pub accepted: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    pub trace: Vec<GuessRecord>,
}

/// Maximizes an objective by bisection on its value. `run(x)` must decide
/// the feasibility problem "objective >= x" (typically with
/// [`ellipsoid_run`]). The lower end `lo` is probed first and must be
/// feasible; then `bits` halvings of `[lo, hi]` follow.
pub fn ellipsoid_optimize(
    lo: f64,
    hi: f64,
    bits: u32,
    run: impl FnMut(f64) -> Result<EllipsoidOutcome>,
) -> Result<OptimizeOutcome> {
    ellipsoid_optimize_with(lo, hi, bits, run, |_| f64::NEG_INFINITY)
}

/// [`ellipsoid_optimize`] where an accepted point may prove more than the
/// guess: the lower end moves to `value(point)` when that is larger. The
/// search stops once the bracket is `(hi − lo)/2^bits` wide.
pub fn ellipsoid_optimize_with(
    lo: f64,
    hi: f64,
    bits: u32,
    mut run: impl FnMut(f64) -> Result<EllipsoidOutcome>,
    value: impl Fn(&[f64]) -> f64,
) -> Result<OptimizeOutcome> {
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("empty search range [{lo}, {hi}]")));
    }
    let mut trace = Vec::new();
    let mut best = match run(lo)? {
        EllipsoidOutcome::Accepted { point, iterations } => {
            trace.push(GuessRecord {
                guess: lo,
                accepted: true,
                iterations,
            });
            let v = value(&point).clamp(lo, hi);
            (point, v)
        }
        EllipsoidOutcome::Infeasible { iterations, .. } => {
            trace.push(GuessRecord {
                guess: lo,
                accepted: false,
                iterations,
            });
            return Err(Error::SearchFailed(format!("lowest guess {lo} is infeasible")));
        }
    };
    let width = (hi - lo) / 2f64.powi(bits as i32);
    let (mut a, mut b) = (best.1, hi);
    for _ in 0..bits {
        if b - a <= width {
            break;
        }
        let mid = 0.5 * (a + b);
        match run(mid)? {
            EllipsoidOutcome::Accepted { point, iterations } => {
                trace.push(GuessRecord {
                    guess: mid,
                    accepted: true,
                    iterations,
                });
                a = value(&point).clamp(mid, b);
                best = (point, a);
            }
            EllipsoidOutcome::Infeasible { iterations, .. } => {
                trace.push(GuessRecord {
                    guess: mid,
                    accepted: false,
                    iterations,
                });
                b = mid;
            }
        }
    }
    Ok(OptimizeOutcome {
        point: best.0,
        value: best.1,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn box_oracle(lo: Vec<f64>, hi: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Separation> {
        move |x: &[f64]| {
            let d = x.len();
            for i in 0..d {
                if x[i] > hi[i] {
                    let mut a = vec![0.0; d];
                    a[i] = 1.0;
                    return Ok(Separation::Violated(Hyperplane::new(a, hi[i])));
                }
                if x[i] < lo[i] {
                    let mut a = vec![0.0; d];
                    a[i] = -1.0;
                    return Ok(Separation::Violated(Hyperplane::new(a, -lo[i])));
                }
            }
            Ok(Separation::Accept)
        }
    }

    #[test]
    fn accepting_oracle_returns_origin() {
        let mut o = FnOracle(|_: &[f64]| Ok(Separation::Accept));
        let out = ellipsoid_feasible(&mut o, 1.0, 3, 10).unwrap();
        assert_eq!(
            out,
            EllipsoidOutcome::Accepted {
                point: vec![0.0; 3],
                iterations: 1
            }
        );
    }

    #[test]
    fn finds_small_box() {
        let mut o = FnOracle(box_oracle(vec![0.9, 0.9], vec![1.0, 1.0]));
        match ellipsoid_feasible(&mut o, 2.0, 2, 200).unwrap() {
            EllipsoidOutcome::Accepted { point, iterations } => {
                assert!(iterations <= 200);
                assert!(point.iter().all(|&v| (0.9..=1.0).contains(&v)));
            }
            other => panic!("expected acceptance, got {other:?}"),
        }
    }

    #[test]
    fn empty_region_is_infeasible() {
        // x_1 <= -3 and x_1 >= 3
        let mut o = FnOracle(|x: &[f64]| {
            Ok(if x[0] > -3.0 {
                Separation::Violated(Hyperplane::new(vec![1.0, 0.0], -3.0))
            } else {
                Separation::Violated(Hyperplane::new(vec![-1.0, 0.0], -3.0))
            })
        });
        let n = default_iterations(2, 10.0, 4.0, 1e-12);
        let out = ellipsoid_feasible(&mut o, 10.0, 2, n).unwrap();
        assert!(matches!(out, EllipsoidOutcome::Infeasible { .. }));
    }

    #[test]
    fn non_separating_cut_is_rejected() {
        let mut o = FnOracle(|_: &[f64]| Ok(Separation::Violated(Hyperplane::new(vec![1.0], 0.0))));
        assert!(ellipsoid_feasible(&mut o, 1.0, 1, 5).is_err());
    }

    #[test]
    fn one_dimensional_update_halves() {
        let mut s = EllipsoidState::ball(1, 2.0);
        assert!(s.cut(&[1.0]));
        assert_eq!(s.center(), &[-1.0]);
        assert_eq!(s.shape(), &[1.0]);
    }

    #[test]
    fn optimize_box_and_simplex() {
        let bits = 16;
        let out = ellipsoid_optimize(0.0, 2.0, bits, |x| {
            let mut inner = box_oracle(vec![0.0, 0.0], vec![1.0, 1.0]);
            let mut o = FnOracle(move |p: &[f64]| {
                if p[0] < x {
                    return Ok(Separation::Violated(Hyperplane::new(vec![-1.0, 0.0], -x)));
                }
                inner(p)
            });
            ellipsoid_feasible(&mut o, 2.0, 2, default_iterations(2, 2.0, 4.0, 1e-12))
        })
        .unwrap();
        // the degeneracy floor limits resolution to a few 1e-6 on this scale
        assert!((out.value - 1.0).abs() <= 2.0 * 2f64.powi(-(bits as i32)) + 5e-6);

        let out = ellipsoid_optimize(0.0, 2.0, bits, |x| {
            let mut o = FnOracle(move |p: &[f64]| {
                let s = p[0] + p[1];
                let cut = if s < x {
                    Some(Hyperplane::new(vec![-1.0, -1.0], -x))
                } else if p[0] < 0.0 {
                    Some(Hyperplane::new(vec![-1.0, 0.0], 0.0))
                } else if p[1] < 0.0 {
                    Some(Hyperplane::new(vec![0.0, -1.0], 0.0))
                } else if s > 1.0 {
                    Some(Hyperplane::new(vec![1.0, 1.0], 1.0))
                } else {
                    None
                };
                Ok(cut.map_or(Separation::Accept, Separation::Violated))
            });
            ellipsoid_feasible(&mut o, 2.0, 2, default_iterations(2, 2.0, 4.0, 1e-12))
        })
        .unwrap();
        // the simplex maximum of x_1 + x_2 is 1; the LP solver agrees
        let mut lp = crate::linalg::lp::LinearProgram::maximize(vec![1.0, 1.0]);
        lp.le(vec![1.0, 1.0], 1.0);
        let (_, lp_value) = crate::linalg::lp::lp_solve(&lp).unwrap().optimal().unwrap();
        assert!((out.value - lp_value).abs() <= 2.0 * 2f64.powi(-(bits as i32)) + 5e-6);
    }

    #[test]
    fn optimize_empty_fails() {
        let r = ellipsoid_optimize(0.0, 1.0, 5, |_| {
            Ok(EllipsoidOutcome::Infeasible {
                iterations: 1,
                degenerate: false,
            })
        });
        assert!(matches!(r, Err(Error::SearchFailed(_))));
    }

    fn log_det(s: &EllipsoidState) -> f64 {
        let l = cholesky(s.shape(), s.dim()).unwrap();
        (0..s.dim()).map(|i| 2.0 * l[i * s.dim() + i].ln()).sum()
    }

    proptest! {
        #[test]
        fn cuts_shrink_volume_and_keep_halfspace(
            dim in 2usize..6,
            cuts in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..20),
        ) {
            let mut s = EllipsoidState::ball(dim, 3.0);
            for a in cuts {
                let a = &a[..dim];
                if a.iter().all(|v| v.abs() < 1e-3) {
                    continue;
                }
                let before = log_det(&s);
                let old = s.clone();
                prop_assert!(s.cut(a));
                prop_assert!(log_det(&s) < before);
                // the kept half of the old ellipsoid stays inside the new one:
                // test the old center and the extreme point of the kept half
                prop_assert!(s.contains(old.center()));
                let pa = old.shape_times(a);
                let norm = dot(a, &pa).sqrt();
                let tip: Vec<f64> = old.center().iter().zip(&pa).map(|(c, v)| c - v / norm).collect();
                prop_assert!(s.contains(&tip));
            }
        }

        #[test]
        fn convex_acceptance_stays_inside(
            lo in proptest::collection::vec(-1.0f64..0.5, 3),
            w in proptest::collection::vec(0.05f64..0.5, 3),
        ) {
            let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
            let mut o = FnOracle(box_oracle(lo.clone(), hi.clone()));
            if let EllipsoidOutcome::Accepted { point, .. } =
                ellipsoid_feasible(&mut o, 4.0, 3, default_iterations(3, 4.0, 4.0, 1e-12)).unwrap()
            {
                for i in 0..3 {
                    prop_assert!(point[i] >= lo[i] - 1e-12 && point[i] <= hi[i] + 1e-12);
                }
            } else {
                prop_assert!(false, "box with positive volume not found");
            }
        }
    }
}
