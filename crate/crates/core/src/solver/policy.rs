use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;

/// Time-varying affine policy `u = u_ff(t) + K(t) (x - x_nom(t))`.
///
/// `u_ff` and `x_nom` are interpolated linearly between nodes, `K` is held
/// constant on each interval. Times are relative to the start of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    times: Vec<f64>,
    feedforward: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    nominal: Vec<DVector<f64>>,
}

impl LinearPolicy {
    pub fn new(
        times: Vec<f64>,
        feedforward: Vec<DVector<f64>>,
        gains: Vec<DMatrix<f64>>,
        nominal: Vec<DVector<f64>>,
    ) -> Result<Self, SolverError> {
        let n = times.len();
        if n == 0 || feedforward.len() != n || gains.len() != n || nominal.len() != n {
            return Err(SolverError::InvalidSettings(format!(
                "policy needs equally many nodes, got {} times, {} inputs, {} gains, {} states",
                n,
                feedforward.len(),
                gains.len(),
                nominal.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolverError::InvalidSettings("policy times must be strictly increasing".into()));
        }
        if gains.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
            return Err(SolverError::InvalidSettings("policy gains must be finite".into()));
        }
        Ok(LinearPolicy { times, feedforward, gains, nominal })
    }

    /// Open-loop policy holding `u` on the given nodes.
    pub fn constant(times: Vec<f64>, u: DVector<f64>, x: DVector<f64>) -> Self {
        let n = times.len();
        let gains = vec![DMatrix::zeros(u.len(), x.len()); n];
        LinearPolicy { feedforward: vec![u; n], nominal: vec![x; n], gains, times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn feedforward_nodes(&self) -> &[DVector<f64>] {
        &self.feedforward
    }

    pub fn gain_nodes(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn nominal_nodes(&self) -> &[DVector<f64>] {
        &self.nominal
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("policy has nodes")
    }

    pub fn ensure_covers(&self, horizon: f64) -> Result<(), SolverError> {
        if self.horizon() + 1e-9 < horizon || self.times[0] > 1e-9 {
            return Err(SolverError::PolicyHorizon { covered: self.horizon(), horizon });
        }
        Ok(())
    }

    /// Interval index and interpolation weight for `t`, clamped to the ends.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, 0.0);
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        (j, w)
    }

    fn lerp(nodes: &[DVector<f64>], j: usize, w: f64) -> DVector<f64> {
        if w == 0.0 || j + 1 >= nodes.len() {
            nodes[j].clone()
        } else {
            &nodes[j] + (&nodes[j + 1] - &nodes[j]) * w
        }
    }

    pub fn feedforward(&self, t: f64) -> DVector<f64> {
        let (j, w) = self.locate(t);
        Self::lerp(&self.feedforward, j, w)
    }

    /// Feedforward held at the value of the last node at or before `t`.
    pub fn feedforward_hold(&self, t: f64) -> DVector<f64> {
        let (j, _) = self.locate(t);
        self.feedforward[j].clone()
    }

    pub fn gain(&self, t: f64) -> &DMatrix<f64> {
        &self.gains[self.locate(t).0]
    }

    pub fn nominal_state(&self, t: f64) -> DVector<f64> {
        let (j, w) = self.locate(t);
        Self::lerp(&self.nominal, j, w)
    }

    pub fn evaluate(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let (j, w) = self.locate(t);
        let dx = x - Self::lerp(&self.nominal, j, w);
        Self::lerp(&self.feedforward, j, w) + &self.gains[j] * dx
    }

    /// Policy re-sampled on `times` after `elapsed` seconds; nodes beyond the
    /// old horizon repeat the last node.
    pub fn shifted(&self, elapsed: f64, times: &[f64]) -> LinearPolicy {
        let mut feedforward = Vec::with_capacity(times.len());
        let mut gains = Vec::with_capacity(times.len());
        let mut nominal = Vec::with_capacity(times.len());
        for &t in times {
            let (j, w) = self.locate(t + elapsed);
            feedforward.push(Self::lerp(&self.feedforward, j, w));
            nominal.push(Self::lerp(&self.nominal, j, w));
            gains.push(self.gains[j].clone());
        }
        LinearPolicy { times: times.to_vec(), feedforward, gains, nominal }
    }
}
