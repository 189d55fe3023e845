//! Deterministic semi-infinite programs solved by the exchange loop with exact
//! components, checked against a dense-discretization oracle.

mod fixture;
mod instances;
mod qp;

pub use fixture::{builtin_fixture, OracleFixture};
pub use instances::{instance_by_name, AnalyticSip, Cheb2, CsipQ};
pub use qp::{KktResidual, Qp, QpSolution, KKT_TOL};

use std::time::Instant;

use crate::env::IndexBox;
use crate::error::{Error, Result};
use crate::exchange::{
    self, Evaluator, EvaluatorFactory, ExchangeConfig, ExchangeStatus, ExchangeTrace, Solution, SubproblemSolver,
    WorkingSet, WorkingSetEntry,
};
use crate::search::{search, GridLadder, IndexPoint, SearchConfig, SearchOutcome, ViolationOracle};

const QP_MAX_ITER: usize = 100_000;

/// Solves `min f(x)` subject to the constraints indexed by `points`.
pub fn exact_subproblem_solve(inst: &dyn AnalyticSip, points: &[IndexPoint], x_init: &[f64]) -> Result<QpSolution> {
    let (h, c, _) = inst.quadratic();
    let (rows, b): (Vec<Vec<f64>>, Vec<f64>) = points.iter().map(|y| inst.constraint_row(y)).unzip();
    let qp = Qp {
        h: &h,
        c: &c,
        rows: &rows,
        b: &b,
    };
    let feasible = rows
        .iter()
        .zip(&b)
        .all(|(a, &bi)| a.iter().zip(x_init).map(|(ai, xi)| ai * xi).sum::<f64>() - bi <= 0.0);
    let start = if feasible { x_init.to_vec() } else { inst.feasible_point() };
    qp.solve(&start, QP_MAX_ITER)
}

/// Uniform `n` points of every family.
pub fn dense_points(inst: &dyn AnalyticSip, n: usize) -> Result<Vec<IndexPoint>> {
    let grid = crate::search::make_grid(inst.index_box(), n)?;
    Ok((0..inst.num_families())
        .flat_map(|family| grid.iter().map(move |c| IndexPoint::new(family, c.clone())))
        .collect())
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub n_dense: usize,
    /// Dense points carrying a positive multiplier.
    pub active: Vec<IndexPoint>,
}

/// Solves the program discretized on `n_dense` points per family.
pub fn oracle_solve(inst: &dyn AnalyticSip, n_dense: usize) -> Result<OracleSolution> {
    if n_dense < 101 {
        return Err(Error::invalid(format!("dense oracle needs at least 101 points, got {n_dense}")));
    }
    let points = dense_points(inst, n_dense)?;
    let sol = exact_subproblem_solve(inst, &points, &inst.feasible_point())?;
    let active = points
        .into_iter()
        .zip(&sol.multipliers)
        .filter(|(_, &v)| v > 0.0)
        .map(|(p, _)| p)
        .collect();
    Ok(OracleSolution {
        objective: inst.objective(&sol.x),
        x: sol.x,
        n_dense,
        active,
    })
}

/// Largest `g(x, y)` over the dense grid, with its argmax.
pub fn dense_max_violation(inst: &dyn AnalyticSip, x: &[f64], n_dense: usize) -> Result<(f64, IndexPoint)> {
    let mut best: Option<(f64, IndexPoint)> = None;
    for y in dense_points(inst, n_dense)? {
        let g = inst.constraint(x, &y);
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, y));
        }
    }
    Ok(best.expect("dense grid is nonempty"))
}

/// Closed-form violation surface and score `-f(x)` at one point.
pub struct ExactEvaluator<'a> {
    pub inst: &'a dyn AnalyticSip,
    pub x: Vec<f64>,
}

impl ViolationOracle for ExactEvaluator<'_> {
    fn num_families(&self) -> usize {
        self.inst.num_families()
    }

    fn index_box(&self, _family: usize) -> &IndexBox {
        self.inst.index_box()
    }

    fn violation(&self, y: &IndexPoint) -> f64 {
        self.inst.constraint(&self.x, y)
    }

    fn violation_grad(&self, y: &IndexPoint) -> Vec<f64> {
        vec![self.inst.constraint_grad_y(&self.x, y)]
    }
}

impl Evaluator for ExactEvaluator<'_> {
    fn objective(&self) -> f64 {
        -self.inst.objective(&self.x)
    }
}

pub struct ExactFactory<'a> {
    pub inst: &'a dyn AnalyticSip,
}

impl<'a> EvaluatorFactory<Vec<f64>> for ExactFactory<'a> {
    type Eval = ExactEvaluator<'a>;

    fn evaluate(&mut self, params: &Vec<f64>, _iteration: usize) -> Result<ExactEvaluator<'a>> {
        Ok(ExactEvaluator {
            inst: self.inst,
            x: params.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktReport {
    pub residual: KktResidual,
    pub iterations: usize,
}

pub struct ExactSolver<'a> {
    pub inst: &'a dyn AnalyticSip,
}

impl<'a, 'e> SubproblemSolver<Vec<f64>, ExactEvaluator<'e>> for ExactSolver<'a> {
    type Report = KktReport;

    fn solve(
        &mut self,
        init: &Vec<f64>,
        ws: &WorkingSet,
        _eval: &ExactEvaluator<'e>,
        _iteration: usize,
    ) -> Result<Solution<Vec<f64>, KktReport>> {
        let points: Vec<IndexPoint> = ws.points().cloned().collect();
        let sol = exact_subproblem_solve(self.inst, &points, init)?;
        Ok(Solution {
            value: -self.inst.objective(&sol.x),
            params: sol.x,
            multipliers: sol.multipliers,
            report: KktReport {
                residual: sol.residual,
                iterations: sol.iterations,
            },
        })
    }
}

/// Grid-ladder search on the closed-form violation, no points excluded.
pub fn exact_violation_search(inst: &dyn AnalyticSip, x: &[f64], eta: f64) -> Result<SearchOutcome> {
    let cfg = SearchConfig::new(GridLadder::default(), eta)?;
    let eval = ExactEvaluator { inst, x: x.to_vec() };
    Ok(search(&eval, &cfg, &|_| false))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestbedConfig {
    pub eta: f64,
    pub eps_mult: f64,
    pub max_outer: usize,
    pub n_dense: usize,
    pub ladder: GridLadder,
}

impl TestbedConfig {
    pub fn new(eta: f64) -> Self {
        TestbedConfig {
            eta,
            eps_mult: 1e-6,
            max_outer: 50,
            n_dense: 2001,
            ladder: GridLadder::default(),
        }
    }

    /// The tolerance each shipped instance is run at.
    pub fn for_instance(name: &str) -> Self {
        match name {
            "cheb-2" => TestbedConfig::new(1e-4),
            _ => TestbedConfig::new(1e-3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct TestbedReport {
    pub instance: &'static str,
    pub eta: f64,
    pub status: ExchangeStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub oracle_objective: f64,
    pub dense_max_violation: f64,
    pub working_set: Vec<WorkingSetEntry>,
    /// Final working-set entries with `|g| <= eta`.
    pub near_active: usize,
    pub trace: ExchangeTrace<KktReport>,
    pub checks: Vec<Check>,
    pub runtime_s: f64,
}

impl TestbedReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Outer iterations that solved a subproblem.
    pub fn outer_iterations(&self) -> usize {
        self.trace.records.iter().filter(|r| r.solve.is_some()).count()
    }

    pub fn into_result(self) -> Result<Self> {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::Assertion(format!("{} failed: {}", self.instance, failed.join("; "))))
        }
    }
}

/// Runs the exchange loop with exact components and checks it against the
/// oracle optimum `oracle_objective`.
pub fn run_testbed(inst: &dyn AnalyticSip, cfg: &TestbedConfig, oracle_objective: f64) -> Result<TestbedReport> {
    let start = Instant::now();
    let mut xcfg = ExchangeConfig::new(cfg.eta, cfg.eps_mult, cfg.max_outer, 0.0)?;
    xcfg.initial_working_set = inst.initial_working_set();
    let searcher = SearchConfig::new(cfg.ladder.clone(), cfg.eta)?;
    let mut factory = ExactFactory { inst };
    let mut solver = ExactSolver { inst };
    let out = exchange::run(inst.start(), &mut factory, &mut solver, &searcher, &xcfg, &mut |_| {})
        .map_err(|abort| Error::Solver(abort.to_string()))?;
    let runtime_s = start.elapsed().as_secs_f64();

    let x = out.params;
    let objective = inst.objective(&x);
    let (dense_max, dense_at) = dense_max_violation(inst, &x, cfg.n_dense)?;
    let near_active = out
        .working_set
        .entries()
        .iter()
        .filter(|e| inst.constraint(&x, &e.point).abs() <= cfg.eta)
        .count();
    let trace = out.trace;
    let mut checks = Vec::new();

    let values = trace.subproblem_values();
    let worst_rise = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "monotone subproblem values",
        passed: values.windows(2).all(|w| w[1] <= w[0] + 1e-10),
        detail: format!("{} values, largest increase {worst_rise:e}", values.len()),
    });

    let lost: Vec<usize> = trace
        .records
        .iter()
        .filter(|r| r.added.is_some() && !r.added_multiplier.is_some_and(|v| v > cfg.eps_mult))
        .map(|r| r.iteration)
        .collect();
    checks.push(Check {
        name: "added point retained",
        passed: lost.is_empty(),
        detail: format!("iterations losing their added point: {lost:?}"),
    });

    let worst_kkt = trace
        .initial
        .iter()
        .map(|s| s.report.residual.max())
        .chain(trace.records.iter().filter_map(|r| r.solve.as_ref().map(|s| s.report.residual.max())))
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "kkt residuals",
        passed: worst_kkt <= KKT_TOL,
        detail: format!("largest residual {worst_kkt:e}"),
    });

    let iterations = trace.records.iter().filter(|r| r.solve.is_some()).count();
    checks.push(Check {
        name: "termination",
        passed: out.status == ExchangeStatus::Terminated && iterations <= cfg.max_outer,
        detail: format!("{:?} after {iterations} outer iterations", out.status),
    });

    checks.push(Check {
        name: "dense-grid feasibility",
        passed: dense_max <= cfg.eta,
        detail: format!("max violation {dense_max:e} at {:?}", dense_at),
    });

    let gap = objective - oracle_objective;
    checks.push(Check {
        name: "oracle agreement",
        passed: gap.abs() <= 1e-4,
        detail: format!("objective {objective}, oracle {oracle_objective}, gap {gap:e}"),
    });
    checks.push(Check {
        name: "relaxation side",
        passed: -objective >= -oracle_objective - 1e-6,
        detail: format!("score {} vs oracle score {}", -objective, -oracle_objective),
    });

    Ok(TestbedReport {
        instance: inst.name(),
        eta: cfg.eta,
        status: out.status,
        x,
        objective,
        oracle_objective,
        dense_max_violation: dense_max,
        working_set: out.working_set.entries().to_vec(),
        near_active,
        trace,
        checks,
        runtime_s,
    })
}

/// Names of the shipped instances.
pub const INSTANCES: [&str; 2] = ["csip-q", "cheb-2"];
