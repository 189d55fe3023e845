//! Search for an eta-violated constraint index over a box-shaped index set.
//!
//! The search walks a ladder of uniform grids of increasing fineness. On each
//! level it takes the grid argmax of the violation; a clear violation is
//! returned at once, and a near-active argmax (within `eta` of zero) seeds a
//! local ascent that may uncover an off-grid violation.

use crate::env::IndexBox;
use crate::error::{Error, Result};

/// A constraint index: which family, and where in that family's box.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexPoint {
    pub family: usize,
    pub coords: Vec<f64>,
}

impl IndexPoint {
    pub fn new(family: usize, coords: Vec<f64>) -> Self {
        IndexPoint { family, coords }
    }

    /// Same family and every coordinate within `tol`.
    pub fn coincides(&self, other: &IndexPoint, tol: f64) -> bool {
        self.family == other.family
            && self.coords.len() == other.coords.len()
            && self.coords.iter().zip(&other.coords).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Violation surface `y -> g(y)` of one fixed candidate solution, where
/// `g > 0` means the constraint indexed by `y` is violated.
pub trait ViolationOracle {
    fn num_families(&self) -> usize {
        1
    }

    fn index_box(&self, family: usize) -> &IndexBox;

    fn violation(&self, y: &IndexPoint) -> f64;

    fn violation_grad(&self, y: &IndexPoint) -> Vec<f64>;

    fn violation_grid(&self, family: usize, points: &[Vec<f64>]) -> Vec<f64> {
        points
            .iter()
            .map(|p| self.violation(&IndexPoint::new(family, p.clone())))
            .collect()
    }
}

/// Strictly increasing grid sizes, each at least 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLadder(Vec<usize>);

impl GridLadder {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("grid ladder needs at least one level"));
        }
        if levels.iter().any(|&n| n < 2) {
            return Err(Error::invalid(format!("grid levels must be >= 2, got {levels:?}")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("grid levels must increase strictly, got {levels:?}")));
        }
        Ok(GridLadder(levels))
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }
}

impl Default for GridLadder {
    fn default() -> Self {
        GridLadder(vec![8, 16, 24, 32])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Found {
        point: IndexPoint,
        violation: f64,
        /// Ladder level at which the point was found.
        level: usize,
    },
    NoneFound {
        max_violation_seen: f64,
        argmax: Option<IndexPoint>,
    },
}

impl SearchOutcome {
    /// Largest violation observed, whether or not it exceeded the tolerance.
    pub fn max_violation(&self) -> f64 {
        match self {
            SearchOutcome::Found { violation, .. } => *violation,
            SearchOutcome::NoneFound {
                max_violation_seen, ..
            } => *max_violation_seen,
        }
    }
}

/// All `N^m` points `lo_i + j (hi_i - lo_i) / (N - 1)`, in lexicographic order
/// (first coordinate slowest).
pub fn make_grid(bx: &IndexBox, n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::invalid(format!("grid needs N >= 2, got {n}")));
    }
    let m = bx.dim();
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let (a, b) = (bx.lo()[i], bx.hi()[i]);
            (0..n)
                .map(|j| if j == n - 1 { b } else { a + j as f64 * (b - a) / (n - 1) as f64 })
                .collect()
        })
        .collect();
    let total = n.pow(m as u32);
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; m];
    for _ in 0..total {
        points.push(idx.iter().enumerate().map(|(i, &j)| axes[i][j]).collect());
        for i in (0..m).rev() {
            idx[i] += 1;
            if idx[i] < n {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(points)
}

/// Projected gradient ascent with an adaptive step radius.
///
/// Steps of length `radius` along the normalized gradient are projected onto
/// the box. An improving step is accepted and doubles the radius; otherwise
/// the radius halves. Stops when the radius drops below `1e-6 * diam`, the
/// gradient vanishes, or `max_iters` gradients have been evaluated. The result
/// is never worse than `y0`.
pub fn local_refine(
    y0: &[f64],
    value: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    bx: &IndexBox,
    initial_radius: f64,
    max_iters: usize,
) -> Vec<f64> {
    let mut y = y0.to_vec();
    let diam = bx.diameter();
    if max_iters == 0 || diam == 0.0 {
        return y;
    }
    let stop_radius = 1e-6 * diam;
    let mut radius = initial_radius.max(stop_radius);
    let mut best = value(&y);
    let mut g = grad(&y);
    let mut grad_evals = 1;
    // Rejections only halve the radius, so the loop is bounded even without
    // new gradient evaluations.
    let mut guard = 0;
    while radius >= stop_radius && guard < 64 * max_iters {
        guard += 1;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let mut cand: Vec<f64> = y.iter().zip(&g).map(|(v, d)| v + radius * d / norm).collect();
        bx.project(&mut cand);
        let v = value(&cand);
        if v > best {
            y = cand;
            best = v;
            radius *= 2.0;
            if grad_evals >= max_iters {
                break;
            }
            g = grad(&y);
            grad_evals += 1;
        } else {
            radius *= 0.5;
        }
    }
    y
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub ladder: GridLadder,
    pub eta: f64,
    /// Gradient budget of each local refinement.
    pub refine_iters: usize,
}

impl SearchConfig {
    pub fn new(ladder: GridLadder, eta: f64) -> Result<Self> {
        if eta.is_nan() || eta <= 0.0 {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        Ok(SearchConfig {
            ladder,
            eta,
            refine_iters: 50,
        })
    }
}

/// Runs the ladder from level 0. Points for which `exclude` holds (the current
/// working set) are skipped when taking grid argmaxes and never returned.
pub fn search(oracle: &dyn ViolationOracle, cfg: &SearchConfig, exclude: &dyn Fn(&IndexPoint) -> bool) -> SearchOutcome {
    search_from_level(oracle, cfg, exclude, 0)
}

pub fn search_from_level(
    oracle: &dyn ViolationOracle,
    cfg: &SearchConfig,
    exclude: &dyn Fn(&IndexPoint) -> bool,
    start_level: usize,
) -> SearchOutcome {
    let eta = cfg.eta;
    let mut seen: Option<(IndexPoint, f64)> = None;
    let note = |p: &IndexPoint, v: f64, seen: &mut Option<(IndexPoint, f64)>| {
        if seen.as_ref().is_none_or(|(_, best)| v > *best) {
            *seen = Some((p.clone(), v));
        }
    };

    for (level, &n) in cfg.ladder.levels().iter().enumerate().skip(start_level) {
        let mut bar: Option<(IndexPoint, f64)> = None;
        for family in 0..oracle.num_families() {
            let points = make_grid(oracle.index_box(family), n).expect("ladder levels are >= 2");
            let values = oracle.violation_grid(family, &points);
            for (coords, v) in points.into_iter().zip(values) {
                let p = IndexPoint::new(family, coords);
                if exclude(&p) {
                    continue;
                }
                // Strict comparison keeps the lexicographically first maximizer.
                if bar.as_ref().is_none_or(|(_, best)| v > *best) {
                    bar = Some((p, v));
                }
            }
        }
        let Some((ybar, gbar)) = bar else { continue };
        note(&ybar, gbar, &mut seen);
        if gbar > eta {
            return SearchOutcome::Found {
                point: ybar,
                violation: gbar,
                level,
            };
        }
        if gbar >= -eta {
            let family = ybar.family;
            let bx = oracle.index_box(family);
            let cell = (0..bx.dim())
                .map(|i| (bx.hi()[i] - bx.lo()[i]) / (n - 1) as f64)
                .fold(0.0, f64::max);
            let refined = local_refine(
                &ybar.coords,
                |y| oracle.violation(&IndexPoint::new(family, y.to_vec())),
                |y| oracle.violation_grad(&IndexPoint::new(family, y.to_vec())),
                bx,
                cell,
                cfg.refine_iters,
            );
            let yhat = IndexPoint::new(family, refined);
            let ghat = oracle.violation(&yhat);
            note(&yhat, ghat, &mut seen);
            if ghat > eta && !exclude(&yhat) {
                return SearchOutcome::Found {
                    point: yhat,
                    violation: ghat,
                    level,
                };
            }
        }
    }
    match seen {
        Some((p, v)) => SearchOutcome::NoneFound {
            max_violation_seen: v,
            argmax: Some(p),
        },
        None => SearchOutcome::NoneFound {
            max_violation_seen: f64::NEG_INFINITY,
            argmax: None,
        },
    }
}
