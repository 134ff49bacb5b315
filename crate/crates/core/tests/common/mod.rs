//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};

/// Exact zero-order-hold discretisation of the double integrator.
pub fn double_integrator_discrete(h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[1.0, h, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.5 * h * h, h]),
    )
}

/// Stabilising solution of the discrete algebraic Riccati equation from the
/// stable invariant subspace of the symplectic pencil matrix.
pub fn dare_by_eigenvectors(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let a_it = a.transpose().try_inverse().expect("A invertible");
    let g = b * r.clone().try_inverse().expect("R invertible") * b.transpose();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(&(a + &g * &a_it * q));
    z.view_mut((0, n), (n, n)).copy_from(&(-&g * &a_it));
    z.view_mut((n, 0), (n, n)).copy_from(&(-&a_it * q));
    z.view_mut((n, n), (n, n)).copy_from(&a_it);

    let eig = z.complex_eigenvalues();
    let zc = z.map(|v| Complex::new(v, 0.0));
    let mut cols = Vec::new();
    for lam in eig.iter().filter(|l| l.norm() < 1.0) {
        let shifted = &zc - DMatrix::<Complex<f64>>::identity(2 * n, 2 * n) * *lam;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        cols.push(v_t.row(imin).adjoint());
    }
    assert_eq!(cols.len(), n, "expected n stable eigenvalues");
    let x = DMatrix::from_columns(&cols);
    let x1 = x.rows(0, n).into_owned();
    let x2 = x.rows(n, n).into_owned();
    let p = x2 * x1.try_inverse().expect("X1 invertible");
    let p = p.map(|c| c.re);
    (&p + p.transpose()) * 0.5
}

/// Optimal discrete gain for a DARE solution, `u = K x`.
pub fn dare_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let s = r + b.transpose() * p * b;
    -s.try_inverse().unwrap() * b.transpose() * p * a
}

/// Optimal cost of the double-integrator LQ problem on a grid of steps,
/// stage weights `h Q`, `h R` and terminal weight `Qf`.
pub fn double_integrator_riccati_cost(steps: &[f64], q: f64, r: f64, qf: f64, x0: &DVector<f64>) -> f64 {
    let mut p = DMatrix::identity(2, 2) * qf;
    for &h in steps.iter().rev() {
        let (a, b) = double_integrator_discrete(h);
        let qd = DMatrix::identity(2, 2) * (q * h);
        let rd = DMatrix::identity(1, 1) * (r * h);
        let k = dare_gain(&a, &b, &rd, &p);
        p = &qd + a.transpose() * &p * &a + a.transpose() * &p * &b * &k;
        p = (&p + p.transpose()) * 0.5;
    }
    0.5 * x0.dot(&(&p * x0))
}

/// Toy problem for the barrier oracle: unit point mass, three held inputs.
#[derive(Debug, Clone, Copy)]
pub struct ToyMass {
    pub h: f64,
    pub q: [f64; 2],
    pub r: f64,
    pub qf: [f64; 2],
    pub x0: [f64; 2],
    pub u_max: f64,
    pub eps: f64,
}

impl ToyMass {
    pub fn cost(&self, u: &[f64; 3]) -> f64 {
        let (mut p, mut v) = (self.x0[0], self.x0[1]);
        let mut c = 0.0;
        for &ui in u {
            c += self.h * 0.5 * (self.q[0] * p * p + self.q[1] * v * v + self.r * ui * ui);
            p += self.h * v + 0.5 * self.h * self.h * ui;
            v += self.h * ui;
        }
        c + 0.5 * (self.qf[0] * p * p + self.qf[1] * v * v)
    }

    pub fn feasible(&self, u: f64) -> bool {
        self.u_max - (u * u + self.eps * self.eps).sqrt() >= 0.0
    }

    /// Dense grid search with two zoom levels over feasible inputs.
    pub fn brute_force(&self) -> ([f64; 3], f64) {
        let bound = (self.u_max * self.u_max - self.eps * self.eps).sqrt();
        let mut lo = [-bound; 3];
        let mut hi = [bound; 3];
        let mut best = ([0.0; 3], f64::INFINITY);
        let n = 120;
        for _ in 0..4 {
            let step: Vec<f64> = (0..3).map(|i| (hi[i] - lo[i]) / n as f64).collect();
            for i in 0..=n {
                for j in 0..=n {
                    for k in 0..=n {
                        let u = [
                            lo[0] + step[0] * i as f64,
                            lo[1] + step[1] * j as f64,
                            lo[2] + step[2] * k as f64,
                        ];
                        if !u.iter().all(|&x| self.feasible(x)) {
                            continue;
                        }
                        let c = self.cost(&u);
                        if c < best.1 {
                            best = (u, c);
                        }
                    }
                }
            }
            for i in 0..3 {
                lo[i] = (best.0[i] - 3.0 * step[i]).max(-bound);
                hi[i] = (best.0[i] + 3.0 * step[i]).min(bound);
            }
        }
        best
    }
}
