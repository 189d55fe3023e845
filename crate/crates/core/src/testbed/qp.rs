//! Primal active-set method for convex quadratic programs
//! `min 1/2 x'Hx + c'x  s.t.  a_i'x <= b_i`, with `H` positive semidefinite
//! (zero allowed, which makes the problem a linear program).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual {
    /// `|Hx + c + sum_i v_i a_i|_inf`.
    pub stationarity: f64,
    /// Largest constraint value `a_i'x - b_i`, floored at zero.
    pub primal: f64,
    /// Largest `|v_i (a_i'x - b_i)|`.
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// One per constraint row, zero for inactive rows.
    pub multipliers: Vec<f64>,
    pub residual: KktResidual,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Qp<'a> {
    pub h: &'a DMatrix<f64>,
    pub c: &'a DVector<f64>,
    pub rows: &'a [Vec<f64>],
    pub b: &'a [f64],
}

pub const KKT_TOL: f64 = 1e-10;

impl Qp<'_> {
    pub fn residual(&self, x: &[f64], v: &[f64]) -> KktResidual {
        let xv = DVector::from_column_slice(x);
        let mut grad = self.h * &xv + self.c;
        let mut primal: f64 = 0.0;
        let mut complementarity: f64 = 0.0;
        for ((a, &b), &vi) in self.rows.iter().zip(self.b).zip(v) {
            let g = dot(a, x) - b;
            primal = primal.max(g);
            complementarity = complementarity.max((vi * g).abs());
            for (gj, aj) in grad.iter_mut().zip(a) {
                *gj += vi * aj;
            }
        }
        KktResidual {
            stationarity: grad.amax(),
            primal,
            complementarity,
        }
    }

    /// Solves from a feasible `x0`. Fails on an infeasible start, an unbounded
    /// problem, or when the iteration cap is hit.
    pub fn solve(&self, x0: &[f64], max_iter: usize) -> Result<QpSolution> {
        let n = self.c.len();
        if x0.len() != n || self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::Dimension {
                context: "quadratic program",
                expected: n,
                got: x0.len(),
            });
        }
        if self.rows.len() != self.b.len() || self.rows.iter().any(|a| a.len() != n) {
            return Err(Error::invalid("constraint rows and bounds disagree"));
        }
        let infeasible = self.rows.iter().zip(self.b).map(|(a, &b)| dot(a, x0) - b).fold(0.0, f64::max);
        if infeasible > KKT_TOL {
            return Err(Error::Solver(format!("start point violates a constraint by {infeasible:e}")));
        }

        let h_scale = self.h.amax().max(1.0);
        let mut x = DVector::from_column_slice(x0);
        let mut active: Vec<usize> = Vec::new();
        for it in 0..max_iter {
            let g = self.h * &x + self.c;
            let z = null_space(self.rows, &active, n);
            let (p, ray) = if z.ncols() == 0 {
                (DVector::zeros(n), false)
            } else {
                let hr = z.transpose() * self.h * &z;
                let gr = z.transpose() * &g;
                let eig = SymmetricEigen::new(hr);
                let tol = 1e-10 * h_scale;
                let mut flat = DVector::zeros(z.ncols());
                let mut newton = DVector::zeros(z.ncols());
                for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                    let vi = eig.eigenvectors.column(i);
                    let coef = vi.dot(&gr);
                    if lam <= tol {
                        flat += vi * coef;
                    } else {
                        newton += vi * (coef / lam);
                    }
                }
                if flat.norm() > 1e-12 * g.norm().max(1e-300) {
                    (-(&z * flat), true)
                } else {
                    (-(&z * newton), false)
                }
            };

            if !ray && p.norm() <= 1e-13 * (1.0 + x.norm()) {
                let v = active_multipliers(self.rows, &active, &g, n)?;
                let (worst, min_v) = v
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, 0.0), |acc, (i, &vi)| if vi < acc.1 { (i, vi) } else { acc });
                if min_v >= -1e-12 {
                    let mut multipliers = vec![0.0; self.rows.len()];
                    for (&i, &vi) in active.iter().zip(&v) {
                        multipliers[i] = vi.max(0.0);
                    }
                    let x: Vec<f64> = x.iter().copied().collect();
                    let residual = self.residual(&x, &multipliers);
                    if residual.max() > KKT_TOL {
                        return Err(Error::NonConvergence {
                            iterations: it,
                            residual: residual.max(),
                        });
                    }
                    return Ok(QpSolution {
                        x,
                        multipliers,
                        residual,
                        iterations: it,
                    });
                }
                active.remove(worst);
                continue;
            }

            let xs: Vec<f64> = x.iter().copied().collect();
            let ps: Vec<f64> = p.iter().copied().collect();
            let p_norm = p.norm();
            let mut alpha = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            for (i, (a, &b)) in self.rows.iter().zip(self.b).enumerate() {
                if active.contains(&i) {
                    continue;
                }
                let ap = dot(a, &ps);
                if ap <= 1e-14 * norm(a) * p_norm {
                    continue;
                }
                let step = ((b - dot(a, &xs)) / ap).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
            if alpha.is_infinite() {
                return Err(Error::Solver("problem is unbounded below".into()));
            }
            x += p * alpha;
            if let Some(i) = blocking {
                active.push(i);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: f64::NAN,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn active_matrix(rows: &[Vec<f64>], active: &[usize], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(active.len(), n, |r, c| rows[active[r]][c])
}

/// Orthonormal basis of `{p : a_i'p = 0 for active i}` as matrix columns.
fn null_space(rows: &[Vec<f64>], active: &[usize], n: usize) -> DMatrix<f64> {
    if active.is_empty() {
        return DMatrix::identity(n, n);
    }
    let a = active_matrix(rows, active, n);
    let gram = &a * a.transpose();
    let Some(inv) = gram.try_inverse() else {
        return DMatrix::zeros(n, 0);
    };
    let projector = DMatrix::identity(n, n) - a.transpose() * inv * &a;
    let eig = SymmetricEigen::new(projector);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &lam)| lam > 0.5)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Least-squares solution of `A_W' v = -g`.
fn active_multipliers(rows: &[Vec<f64>], active: &[usize], g: &DVector<f64>, n: usize) -> Result<Vec<f64>> {
    if active.is_empty() {
        return Ok(Vec::new());
    }
    let a = active_matrix(rows, active, n);
    let gram = &a * a.transpose();
    let rhs = -(&a * g);
    let v = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("active constraint rows are linearly dependent".into()))?;
    Ok(v.iter().copied().collect())
}
