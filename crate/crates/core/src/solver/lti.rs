use nalgebra::{DMatrix, DVector};

use super::{ConstraintLinearization, CostQuadratic, OptimalControlProblem};
use crate::error::ModelError;

/// Linear time-invariant problem with quadratic cost, used for oracle tests
/// and the self-test.
///
/// Optional extras: a smoothed magnitude bound `|u_i| <= u_max` per input
/// (`u_max - sqrt(u_i^2 + eps^2) >= 0`), an affine state-input equality
/// `C x + D u + e = 0`, and an affine state equality `G x + g = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub horizon: f64,
    pub input_bound: Option<(f64, f64)>,
    pub input_equality: Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)>,
    pub state_equality: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl LtiProblem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, horizon: f64) -> Self {
        let n = a.nrows();
        LtiProblem {
            a,
            b,
            q,
            r,
            qf,
            x_ref: DVector::zeros(n),
            horizon,
            input_bound: None,
            input_equality: None,
            state_equality: None,
        }
    }

    /// `x = (position, velocity)`, `u = acceleration`.
    pub fn double_integrator(q: f64, r: f64, qf: f64, horizon: f64) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        LtiProblem::new(
            a,
            b,
            DMatrix::identity(2, 2) * q,
            DMatrix::identity(1, 1) * r,
            DMatrix::identity(2, 2) * qf,
            horizon,
        )
    }

    fn bound_terms(&self, u: f64) -> (f64, f64, f64) {
        let (u_max, eps) = self.input_bound.expect("bound present");
        let s = (u * u + eps * eps).sqrt();
        (u_max - s, -u / s, -eps * eps / (s * s * s))
    }
}

impl OptimalControlProblem for LtiProblem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn flow(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        Ok(&self.a * x + &self.b * u)
    }

    fn flow_derivatives(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
        Ok((self.flow(t, x, u)?, self.a.clone(), self.b.clone()))
    }

    fn running_cost(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.q * &dx)) + 0.5 * u.dot(&(&self.r * u))
    }

    fn running_cost_quadratic(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> CostQuadratic {
        let dx = x - &self.x_ref;
        CostQuadratic {
            value: self.running_cost(t, x, u),
            dx: &self.q * dx,
            du: &self.r * u,
            dxx: self.q.clone(),
            duu: self.r.clone(),
            dux: DMatrix::zeros(self.input_dim(), self.state_dim()),
        }
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.qf * &dx))
    }

    fn terminal_cost_quadratic(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let dx = x - &self.x_ref;
        (self.terminal_cost(x), &self.qf * dx, self.qf.clone())
    }

    fn equality(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match &self.input_equality {
            Some((c, d, e)) => c * x + d * u + e,
            None => DVector::zeros(0),
        }
    }

    fn equality_linearization(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> ConstraintLinearization {
        match &self.input_equality {
            Some((c, d, _)) => ConstraintLinearization { value: self.equality(t, x, u), jx: c.clone(), ju: d.clone() },
            None => ConstraintLinearization::empty(self.state_dim(), self.input_dim()),
        }
    }

    fn state_equality(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.state_equality {
            Some((g, g0)) => g * x + g0,
            None => DVector::zeros(0),
        }
    }

    fn state_equality_linearization(&self, t: f64, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        match &self.state_equality {
            Some((g, _)) => (self.state_equality(t, x), g.clone()),
            None => (DVector::zeros(0), DMatrix::zeros(0, self.state_dim())),
        }
    }

    fn inequality(&self, _t: f64, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        if self.input_bound.is_none() {
            return DVector::zeros(0);
        }
        DVector::from_iterator(u.len(), u.iter().map(|&v| self.bound_terms(v).0))
    }

    fn inequality_linearization(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> ConstraintLinearization {
        if self.input_bound.is_none() {
            return ConstraintLinearization::empty(self.state_dim(), self.input_dim());
        }
        let nu = u.len();
        let mut ju = DMatrix::zeros(nu, nu);
        for i in 0..nu {
            ju[(i, i)] = self.bound_terms(u[i]).1;
        }
        ConstraintLinearization { value: self.inequality(t, x, u), jx: DMatrix::zeros(nu, self.state_dim()), ju }
    }

    fn inequality_input_curvature(&self, _t: f64, _x: &DVector<f64>, u: &DVector<f64>, weights: &[f64]) -> DMatrix<f64> {
        let nu = u.len();
        let mut h = DMatrix::zeros(nu, nu);
        if self.input_bound.is_some() {
            for i in 0..nu {
                h[(i, i)] = weights[i] * self.bound_terms(u[i]).2;
            }
        }
        h
    }
}
