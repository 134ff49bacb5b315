/// Relaxed logarithmic barrier for `h >= 0`: `-mu ln h` above `delta`, a
/// quadratic below it, joined with matching value, slope and curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedBarrier {
    pub mu: f64,
    pub delta: f64,
}

impl RelaxedBarrier {
    pub fn new(mu: f64, delta: f64) -> Self {
        RelaxedBarrier { mu, delta }
    }

    pub fn value(&self, h: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if h > d {
            -mu * h.ln()
        } else {
            let z = (h - 2.0 * d) / d;
            0.5 * mu * (z * z - 1.0) - mu * d.ln()
        }
    }

    pub fn gradient(&self, h: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if h > d {
            -mu / h
        } else {
            mu * (h - 2.0 * d) / (d * d)
        }
    }

    pub fn curvature(&self, h: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if h > d {
            mu / (h * h)
        } else {
            mu / (d * d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junction_is_twice_continuously_differentiable() {
        let b = RelaxedBarrier::new(0.3, 0.05);
        let (lo, hi) = (0.05 * (1.0 - 1e-12), 0.05 * (1.0 + 1e-12));
        assert!((b.value(lo) - b.value(hi)).abs() < 1e-9);
        assert!((b.gradient(lo) - b.gradient(hi)).abs() < 1e-8);
        assert!((b.curvature(lo) - b.curvature(hi)).abs() < 1e-6);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = RelaxedBarrier::new(0.7, 0.2);
        for h in [-1.0, 0.0, 0.1, 0.19, 0.3, 2.0] {
            let e = 1e-6;
            let g = (b.value(h + e) - b.value(h - e)) / (2.0 * e);
            let c = (b.gradient(h + e) - b.gradient(h - e)) / (2.0 * e);
            assert!((g - b.gradient(h)).abs() < 1e-6);
            assert!((c - b.curvature(h)).abs() < 1e-4);
        }
    }

    #[test]
    fn inactive_constraint_has_vanishing_gradient() {
        let b = RelaxedBarrier::new(1.0, 0.1);
        assert!(b.gradient(1e6).abs() < 1e-5);
        assert!(b.gradient(1e3).abs() > b.gradient(1e6).abs());
    }
}
