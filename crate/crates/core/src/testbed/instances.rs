use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};

use crate::env::IndexBox;
use crate::search::IndexPoint;

/// Convex semi-infinite program with a quadratic objective and constraints
/// affine in `x`: `min f(x)` subject to `g(x, y) = a(y)'x - b(y) <= 0` for every
/// `y` in the index interval of every family.
pub trait AnalyticSip: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;

    fn num_families(&self) -> usize {
        1
    }

    fn index_box(&self) -> &IndexBox;

    /// `f(x) = 1/2 x'Hx + c'x + f0` as `(H, c, f0)`.
    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64);

    /// `(a(y), b(y))`.
    fn constraint_row(&self, y: &IndexPoint) -> (Vec<f64>, f64);

    /// `d g(x, y) / d y` for a scalar index.
    fn constraint_grad_y(&self, x: &[f64], y: &IndexPoint) -> f64;

    /// A point feasible for every index, used to start the active-set solver.
    fn feasible_point(&self) -> Vec<f64>;

    /// Starting iterate of the exchange loop.
    fn start(&self) -> Vec<f64>;

    fn initial_working_set(&self) -> Vec<IndexPoint> {
        Vec::new()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let (h, c, f0) = self.quadratic();
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&h * &xv)) + c.dot(&xv) + f0
    }

    fn constraint(&self, x: &[f64], y: &IndexPoint) -> f64 {
        let (a, b) = self.constraint_row(y);
        a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() - b
    }
}

/// `min (x1 - 2)^2 + (x2 - 2)^2  s.t.  x1 y + x2 y^2 <= 1` on `y in [0, 1]`.
#[derive(Clone, Debug)]
pub struct CsipQ {
    index_box: IndexBox,
}

impl Default for CsipQ {
    fn default() -> Self {
        CsipQ {
            index_box: IndexBox::new(vec![0.0], vec![1.0]).unwrap(),
        }
    }
}

impl AnalyticSip for CsipQ {
    fn name(&self) -> &'static str {
        "csip-q"
    }

    fn dim(&self) -> usize {
        2
    }

    fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        (DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-4.0, -4.0]), 8.0)
    }

    fn constraint_row(&self, y: &IndexPoint) -> (Vec<f64>, f64) {
        let t = y.coords[0];
        (vec![t, t * t], 1.0)
    }

    fn constraint_grad_y(&self, x: &[f64], y: &IndexPoint) -> f64 {
        x[0] + 2.0 * y.coords[0] * x[1]
    }

    fn feasible_point(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn start(&self) -> Vec<f64> {
        vec![2.0, 2.0]
    }
}

/// Best uniform approximation of `e^y` on `[0, 1]` by a quadratic
/// `p(y) = p0 + p1 y + p2 y^2`, in epigraph form over `x = (p0, p1, p2, t)`:
/// `min t  s.t.  p(y) - e^y <= t` (family 0) and `e^y - p(y) <= t` (family 1).
#[derive(Clone, Debug)]
pub struct Cheb2 {
    index_box: IndexBox,
}

impl Default for Cheb2 {
    fn default() -> Self {
        Cheb2 {
            index_box: IndexBox::new(vec![0.0], vec![1.0]).unwrap(),
        }
    }
}

impl AnalyticSip for Cheb2 {
    fn name(&self) -> &'static str {
        "cheb-2"
    }

    fn dim(&self) -> usize {
        4
    }

    fn num_families(&self) -> usize {
        2
    }

    fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        (DMatrix::zeros(4, 4), DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]), 0.0)
    }

    fn constraint_row(&self, y: &IndexPoint) -> (Vec<f64>, f64) {
        let t = y.coords[0];
        let ey = t.exp();
        match y.family {
            0 => (vec![1.0, t, t * t, -1.0], ey),
            _ => (vec![-1.0, -t, -t * t, -1.0], -ey),
        }
    }

    fn constraint_grad_y(&self, x: &[f64], y: &IndexPoint) -> f64 {
        let t = y.coords[0];
        let dp = x[1] + 2.0 * x[2] * t;
        match y.family {
            0 => dp - t.exp(),
            _ => t.exp() - dp,
        }
    }

    fn feasible_point(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, E + 1.0]
    }

    fn start(&self) -> Vec<f64> {
        self.feasible_point()
    }

    /// Both families at `0, 1/3, 2/3, 1`; without any index the epigraph
    /// variable is unbounded below.
    fn initial_working_set(&self) -> Vec<IndexPoint> {
        (0..2)
            .flat_map(|family| [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].map(|y| IndexPoint::new(family, vec![y])))
            .collect()
    }
}

pub fn instance_by_name(name: &str) -> Option<Box<dyn AnalyticSip>> {
    match name {
        "csip-q" => Some(Box::new(CsipQ::default())),
        "cheb-2" => Some(Box::new(Cheb2::default())),
        _ => None,
    }
}
