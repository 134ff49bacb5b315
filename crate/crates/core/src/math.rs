//! Small fixed-size linear algebra that is generic over the scalar type, so
//! the same kinematics and dynamics code runs on `f64` and on dual numbers.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_dual::{Dual64, DualNum};

/// Scalar usable by the generic model code: plain `f64` or a forward-mode dual.
pub trait Real: DualNum<Primitive = f64> + Copy {}
impl<T: DualNum<Primitive = f64> + Copy> Real for T {}

pub type V3<T> = [T; 3];
pub type M3<T> = [[T; 3]; 3];

#[inline]
pub fn c<T: Real>(v: f64) -> T {
    T::from(v)
}

#[inline]
pub fn add<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: V3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize<T: Real>(a: V3<T>) -> V3<T> {
    let n = norm(a);
    scale(a, n.recip())
}

#[inline]
pub fn mat_vec<T: Real>(m: &M3<T>, v: V3<T>) -> V3<T> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

#[inline]
pub fn mat_t_vec<T: Real>(m: &M3<T>, v: V3<T>) -> V3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Multiply a constant `f64` matrix with a generic vector.
#[inline]
pub fn const_mat_vec<T: Real>(m: &Matrix3<f64>, v: V3<T>) -> V3<T> {
    let mut out = [T::zero(); 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = v[0] * m[(r, 0)] + v[1] * m[(r, 1)] + v[2] * m[(r, 2)];
    }
    out
}

#[inline]
pub fn lift<T: Real>(v: &Vector3<f64>) -> V3<T> {
    [c(v[0]), c(v[1]), c(v[2])]
}

#[inline]
pub fn re3<T: Real>(v: V3<T>) -> Vector3<f64> {
    Vector3::new(v[0].re(), v[1].re(), v[2].re())
}

/// Rotation from torso to world for Z-Y-X Euler angles `(roll, pitch, yaw)`.
pub fn rotation_zyx<T: Real>(theta: V3<T>) -> M3<T> {
    let (sr, cr) = theta[0].sin_cos();
    let (sp, cp) = theta[1].sin_cos();
    let (sy, cy) = theta[2].sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

pub fn rotation_zyx_f64(theta: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation_zyx([theta[0], theta[1], theta[2]]);
    Matrix3::from_fn(|i, j| r[i][j])
}

pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Forward-mode Jacobian of `f: R^n -> R^m` restricted to the listed input
/// directions. Columns not listed are left zero. Returns `(f(x), J)`.
pub fn forward_jacobian<F, E>(
    x: &[f64],
    n_out: usize,
    directions: impl IntoIterator<Item = usize>,
    mut f: F,
) -> Result<(Vec<f64>, DMatrix<f64>), E>
where
    F: FnMut(&[Dual64], &mut [Dual64]) -> Result<(), E>,
{
    let mut input: Vec<Dual64> = x.iter().map(|&v| Dual64::from_re(v)).collect();
    let mut out = vec![Dual64::from_re(0.0); n_out];
    let mut jac = DMatrix::zeros(n_out, x.len());
    let mut value: Option<Vec<f64>> = None;
    for i in directions {
        input[i].eps = 1.0;
        f(&input, &mut out)?;
        input[i].eps = 0.0;
        for (r, o) in out.iter().enumerate() {
            jac[(r, i)] = o.eps;
        }
        if value.is_none() {
            value = Some(out.iter().map(|o| o.re).collect());
        }
    }
    let value = match value {
        Some(v) => v,
        None => {
            f(&input, &mut out)?;
            out.iter().map(|o| o.re).collect()
        }
    };
    Ok((value, jac))
}
