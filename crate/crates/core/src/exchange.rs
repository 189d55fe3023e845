//! The outer exchange loop: detect a violated index, expand the working set,
//! re-solve the finitely constrained subproblem, drop inactive indices.
//!
//! The loop is generic over where violations come from ([`EvaluatorFactory`]),
//! how they are searched ([`Searcher`]) and how subproblems are solved
//! ([`SubproblemSolver`]). Scores follow a maximization convention throughout.

use std::fmt::Debug;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::search::{search_from_level, IndexPoint, SearchConfig, SearchOutcome, ViolationOracle};

/// Coordinate tolerance for treating two index points as the same.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct WorkingSetEntry {
    pub point: IndexPoint,
    pub multiplier: f64,
    pub added_at: usize,
}

/// Finite index set with one Lagrange multiplier per entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkingSet {
    entries: Vec<WorkingSetEntry>,
}

impl WorkingSet {
    pub fn new() -> Self {
        WorkingSet::default()
    }

    pub fn from_points(points: &[IndexPoint], multiplier: f64) -> Result<Self> {
        let mut ws = WorkingSet::new();
        for p in points {
            ws.expand(p.clone(), multiplier, 0)?;
        }
        Ok(ws)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[WorkingSetEntry] {
        &self.entries
    }

    pub fn points(&self) -> impl Iterator<Item = &IndexPoint> {
        self.entries.iter().map(|e| &e.point)
    }

    pub fn multipliers(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.multiplier).collect()
    }

    pub fn multipliers_l1(&self) -> f64 {
        self.entries.iter().map(|e| e.multiplier.abs()).sum()
    }

    pub fn contains(&self, y: &IndexPoint) -> bool {
        self.position(y).is_some()
    }

    pub fn position(&self, y: &IndexPoint) -> Option<usize> {
        self.entries.iter().position(|e| e.point.coincides(y, DUPLICATE_TOL))
    }

    /// Appends `y` with multiplier `init_v`. A point already present is an
    /// error: it means the searcher or the deletion threshold is misconfigured.
    pub fn expand(&mut self, y: IndexPoint, init_v: f64, iteration: usize) -> Result<()> {
        if init_v.is_nan() || init_v < 0.0 {
            return Err(Error::invalid(format!("multiplier must be nonnegative, got {init_v}")));
        }
        if self.contains(&y) {
            return Err(Error::DuplicatePoint(y.coords));
        }
        self.entries.push(WorkingSetEntry {
            point: y,
            multiplier: init_v,
            added_at: iteration,
        });
        Ok(())
    }

    pub fn set_multipliers(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Dimension {
                context: "working-set multipliers",
                expected: self.entries.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Solver(format!("invalid multiplier {v}")));
        }
        for (e, &v) in self.entries.iter_mut().zip(values) {
            e.multiplier = v;
        }
        Ok(())
    }

    /// Keeps exactly the entries with multiplier above `eps_mult`, in order,
    /// and returns the removed ones.
    pub fn delete_inactive(&mut self, eps_mult: f64) -> Vec<WorkingSetEntry> {
        let (keep, deleted): (Vec<_>, Vec<_>) = self.entries.drain(..).partition(|e| e.multiplier > eps_mult);
        self.entries = keep;
        deleted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeConfig {
    pub eta: f64,
    pub eps_mult: f64,
    pub max_outer: usize,
    pub initial_working_set: Vec<IndexPoint>,
    /// Multiplier given to every newly added index.
    pub initial_multiplier: f64,
    /// Solve the subproblem on the initial working set before the first search.
    pub solve_initial: bool,
    /// Stop instead of growing the working set past this size.
    pub working_set_limit: Option<usize>,
}

impl ExchangeConfig {
    pub fn new(eta: f64, eps_mult: f64, max_outer: usize, initial_multiplier: f64) -> Result<Self> {
        let cfg = ExchangeConfig {
            eta,
            eps_mult,
            max_outer,
            initial_working_set: Vec::new(),
            initial_multiplier,
            solve_initial: true,
            working_set_limit: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.eps_mult.is_nan() || self.eps_mult < 0.0 {
            return Err(Error::invalid(format!("eps_mult must be nonnegative, got {}", self.eps_mult)));
        }
        if self.initial_multiplier.is_nan() || self.initial_multiplier < 0.0 {
            return Err(Error::invalid(format!(
                "initial multiplier must be nonnegative, got {}",
                self.initial_multiplier
            )));
        }
        Ok(())
    }
}

/// Violation surface of one iterate together with its objective score.
pub trait Evaluator: ViolationOracle {
    fn objective(&self) -> f64;
}

/// Builds the evaluator of the current iterate (fresh rollouts in RL, the
/// closed form in the testbed).
pub trait EvaluatorFactory<P> {
    type Eval: Evaluator;

    fn evaluate(&mut self, params: &P, iteration: usize) -> Result<Self::Eval>;
}

#[derive(Clone, Debug)]
pub struct Solution<P, R> {
    pub params: P,
    /// One per working-set entry, in working-set order.
    pub multipliers: Vec<f64>,
    /// Optimal (or best achieved) score of the subproblem.
    pub value: f64,
    pub report: R,
}

pub trait SubproblemSolver<P, E> {
    type Report: Clone + Debug;

    /// Solves the subproblem restricted to `ws`, warm-started from `init` and
    /// the multipliers stored in `ws`. `eval` is the evaluator of `init`.
    fn solve(&mut self, init: &P, ws: &WorkingSet, eval: &E, iteration: usize) -> Result<Solution<P, Self::Report>>;
}

pub trait Searcher {
    fn search(
        &self,
        oracle: &dyn ViolationOracle,
        exclude: &dyn Fn(&IndexPoint) -> bool,
        start_level: usize,
    ) -> SearchOutcome;
}

impl Searcher for SearchConfig {
    fn search(
        &self,
        oracle: &dyn ViolationOracle,
        exclude: &dyn Fn(&IndexPoint) -> bool,
        start_level: usize,
    ) -> SearchOutcome {
        search_from_level(oracle, self, exclude, start_level)
    }
}

/// A found point that is already in the working set does not count as a
/// detection; everything else passes through.
pub fn detect_excluded(outcome: &SearchOutcome, ws: &WorkingSet) -> Option<IndexPoint> {
    match outcome {
        SearchOutcome::Found { point, .. } if !ws.contains(point) => Some(point.clone()),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct SolveRecord<R> {
    pub value: f64,
    pub working_set: Vec<WorkingSetEntry>,
    pub deleted: Vec<WorkingSetEntry>,
    pub report: R,
}

#[derive(Clone, Debug)]
pub struct IterationRecord<R> {
    pub iteration: usize,
    /// Score of the iterate the search ran on.
    pub objective: f64,
    pub search: SearchOutcome,
    pub added: Option<IndexPoint>,
    /// Multiplier of the added point right after the solve, before deletion.
    pub added_multiplier: Option<f64>,
    /// Present when a subproblem was solved in this iteration.
    pub solve: Option<SolveRecord<R>>,
    /// Working set at the end of the iteration.
    pub working_set: Vec<WorkingSetEntry>,
    pub wall_clock_s: f64,
}

impl<R> IterationRecord<R> {
    pub fn max_violation(&self) -> f64 {
        self.search.max_violation()
    }
}

#[derive(Clone, Debug)]
pub struct ExchangeTrace<R> {
    pub initial: Option<SolveRecord<R>>,
    pub records: Vec<IterationRecord<R>>,
}

impl<R> ExchangeTrace<R> {
    /// Subproblem optimal values in solve order, the initial solve first.
    pub fn subproblem_values(&self) -> Vec<f64> {
        self.initial
            .iter()
            .map(|s| s.value)
            .chain(self.records.iter().filter_map(|r| r.solve.as_ref().map(|s| s.value)))
            .collect()
    }

    pub fn max_working_set_size(&self) -> usize {
        let initial = self.initial.iter().map(|s| s.working_set.len());
        let rest = self
            .records
            .iter()
            .flat_map(|r| r.solve.iter().map(|s| s.working_set.len() + s.deleted.len()).chain([r.working_set.len()]));
        initial.chain(rest).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExchangeStatus {
    /// The last search found no index violated by more than eta.
    Terminated,
    IterationCapReached,
    /// A point was found while the working set was already at its limit.
    WorkingSetLimitReached,
}

#[derive(Clone, Debug)]
pub struct ExchangeOutcome<P, R> {
    pub params: P,
    pub working_set: WorkingSet,
    pub trace: ExchangeTrace<R>,
    pub status: ExchangeStatus,
}

/// A failed run, with everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("exchange loop aborted at iteration {iteration}: {source}")]
pub struct ExchangeAbort<R: Debug> {
    pub iteration: usize,
    pub trace: ExchangeTrace<R>,
    #[source]
    pub source: Error,
}

/// Runs the exchange loop from `params`.
///
/// Every outer iteration evaluates the current iterate, searches for a point
/// outside the working set violated by more than eta, and either stops or
/// expands, solves and deletes. At most `max_outer` subproblems are solved
/// after the initial one, so the trace holds at most `max_outer + 1` records.
/// `observer` sees each record as soon as it is complete.
#[allow(clippy::result_large_err)]
pub fn run<P, F, S>(
    params: P,
    factory: &mut F,
    solver: &mut S,
    searcher: &dyn Searcher,
    cfg: &ExchangeConfig,
    observer: &mut dyn FnMut(&IterationRecord<S::Report>),
) -> std::result::Result<ExchangeOutcome<P, S::Report>, ExchangeAbort<S::Report>>
where
    F: EvaluatorFactory<P>,
    S: SubproblemSolver<P, F::Eval>,
{
    let mut trace = ExchangeTrace {
        initial: None,
        records: Vec::new(),
    };
    macro_rules! attempt {
        ($iteration:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    return Err(ExchangeAbort {
                        iteration: $iteration,
                        trace,
                        source,
                    })
                }
            }
        };
    }

    attempt!(0, cfg.validate());
    let start = Instant::now();
    let mut theta = params;
    let mut ws = attempt!(0, WorkingSet::from_points(&cfg.initial_working_set, cfg.initial_multiplier));

    if cfg.solve_initial {
        let eval = attempt!(0, factory.evaluate(&theta, 0));
        let sol = attempt!(0, solver.solve(&theta, &ws, &eval, 0));
        attempt!(0, ws.set_multipliers(&sol.multipliers));
        let deleted = ws.delete_inactive(cfg.eps_mult);
        trace.initial = Some(SolveRecord {
            value: sol.value,
            working_set: ws.entries().to_vec(),
            deleted,
            report: sol.report,
        });
        theta = sol.params;
    }

    let mut k = 0;
    let status = loop {
        let eval = attempt!(k, factory.evaluate(&theta, k));
        let objective = eval.objective();
        let outcome = {
            let exclude = |y: &IndexPoint| ws.contains(y);
            let mut level = 0;
            loop {
                let out = searcher.search(&eval, &exclude, level);
                match (&out, detect_excluded(&out, &ws)) {
                    (SearchOutcome::Found { level: l, .. }, None) => level = l + 1,
                    _ => break out,
                }
            }
        };
        let mut record = IterationRecord {
            iteration: k,
            objective,
            search: outcome.clone(),
            added: None,
            added_multiplier: None,
            solve: None,
            working_set: Vec::new(),
            wall_clock_s: 0.0,
        };
        let found = detect_excluded(&outcome, &ws);
        let done = match found {
            None => Some(ExchangeStatus::Terminated),
            Some(_) if k >= cfg.max_outer => Some(ExchangeStatus::IterationCapReached),
            Some(_) if cfg.working_set_limit.is_some_and(|l| ws.len() >= l) => {
                Some(ExchangeStatus::WorkingSetLimitReached)
            }
            Some(y) => {
                attempt!(k, ws.expand(y.clone(), cfg.initial_multiplier, k + 1));
                let sol = attempt!(k, solver.solve(&theta, &ws, &eval, k + 1));
                attempt!(k, ws.set_multipliers(&sol.multipliers));
                record.added_multiplier = ws.position(&y).map(|i| ws.entries()[i].multiplier);
                record.added = Some(y);
                let deleted = ws.delete_inactive(cfg.eps_mult);
                record.solve = Some(SolveRecord {
                    value: sol.value,
                    working_set: ws.entries().to_vec(),
                    deleted,
                    report: sol.report,
                });
                theta = sol.params;
                None
            }
        };
        record.working_set = ws.entries().to_vec();
        record.wall_clock_s = start.elapsed().as_secs_f64();
        observer(&record);
        trace.records.push(record);
        if let Some(status) = done {
            break status;
        }
        k += 1;
    };

    Ok(ExchangeOutcome {
        params: theta,
        working_set: ws,
        trace,
        status,
    })
}
