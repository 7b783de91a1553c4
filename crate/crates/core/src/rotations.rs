//! Quaternion algebra, uniform rotation sampling and weighted quaternion averaging.
//!
//! Quaternions are Hamilton, scalar-first `(w, x, y, z)`, and rotate vectors
//! actively: `R(q) v` maps a body-frame vector into the camera frame.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    /// Normalizes `(w, x, y, z)`; rejects non-finite or zero-length input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if ![w, x, y, z].iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("quaternion"));
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm < 1e-300 {
            return Err(Error::invalid("zero-length quaternion"));
        }
        Ok(Self::normalized(w, x, y, z, norm))
    }

    fn normalized(w: f64, x: f64, y: f64, z: f64, norm: f64) -> Self {
        Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
    }

    fn renormalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        Self::normalized(w, x, y, z, norm)
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    /// Keeps the components bit-for-bit when they already have unit norm
    /// (within `1e-12`), so serialized quaternions reload unchanged.
    pub fn from_unit_array(c: [f64; 4]) -> Result<Self> {
        let q = Self::from_array(c)?;
        let norm2: f64 = c.iter().map(|x| x * x).sum();
        if (norm2.sqrt() - 1.0).abs() <= 1e-12 {
            Ok(Self {
                w: c[0],
                x: c[1],
                y: c[2],
                z: c[3],
            })
        } else {
            Ok(q)
        }
    }

    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n == 0.0 || !angle.is_finite() {
            return Err(Error::invalid("axis-angle needs a finite non-zero axis"));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Components in scalar-first order.
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn conj(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let Self { w, x, y, z } = *self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        ))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix().0 * v
    }

    /// Sign-canonical representative: first non-zero component positive.
    pub fn canonical(&self) -> Self {
        let first = self
            .to_array()
            .into_iter()
            .find(|c| *c != 0.0)
            .unwrap_or(1.0);
        if first < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    /// True when both quaternions represent the same rotation within `tol` radians.
    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        angular_distance(self, other) <= tol
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self {
        compose(&self, &rhs)
    }
}

/// Hamilton product `q1 * q2`, renormalized. `R(q1 * q2) = R(q1) R(q2)`.
/// Terms are paired so that `q * conj(±q)` has an exactly zero vector part.
pub fn compose(q1: &UnitQuaternion, q2: &UnitQuaternion) -> UnitQuaternion {
    let (a, b) = (q1, q2);
    UnitQuaternion::renormalize(
        a.w * b.w - (a.x * b.x + a.y * b.y + a.z * b.z),
        (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
        (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
        (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
    )
}

/// Angle of the relative rotation `q1 * conj(q2)`, in `[0, π]`.
///
/// Equal to `2 acos(|z_w|)`; evaluated through `atan2` so small angles keep
/// full precision.
pub fn angular_distance(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    compose(q1, &q2.conj()).angle()
}

/// Proper rotation matrix, `RᵀR = I`, `det R = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

pub fn to_rotation_matrix(q: &UnitQuaternion) -> RotationMatrix {
    q.to_rotation_matrix()
}

/// Relative pose of the target body frame with respect to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Body-to-camera attitude.
    pub q: UnitQuaternion,
    /// Position of the body origin in the camera frame, meters.
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn new(q: UnitQuaternion, t: Vector3<f64>) -> Result<Self> {
        if !t.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        Ok(Self { q, t })
    }

    pub fn range(&self) -> f64 {
        self.t.norm()
    }

    /// Maps a body-frame point into the camera frame.
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.q.rotate(x) + self.t
    }
}

/// The raw 4-tuple `(s1 r1, c1 r1, s2 r2, c2 r2)` of the subgroup construction
/// for one triple of uniforms.
pub fn subgroup_tuple(x0: f64, x1: f64, x2: f64) -> [f64; 4] {
    let theta1 = 2.0 * PI * x1;
    let theta2 = 2.0 * PI * x2;
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    let r1 = (1.0 - x0).sqrt();
    let r2 = x0.sqrt();
    [s1 * r1, c1 * r1, s2 * r2, c2 * r2]
}

/// Maps three uniforms on `[0, 1]` to a Haar-uniform rotation. The tuple from
/// [`subgroup_tuple`] is read as `(x, y, z, w)`.
pub fn quaternion_from_uniforms(x0: f64, x1: f64, x2: f64) -> UnitQuaternion {
    let [x, y, z, w] = subgroup_tuple(x0, x1, x2);
    UnitQuaternion::renormalize(w, x, y, z)
}

/// One Haar-uniform rotation drawn from `rng` (consumes three uniforms).
pub fn draw_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    let x0: f64 = rng.random();
    let x1: f64 = rng.random();
    let x2: f64 = rng.random();
    quaternion_from_uniforms(x0, x1, x2)
}

/// `m` Haar-uniform rotations; rotation `i` comes from its own stream, so the
/// result is reproducible for a given seed and independent of evaluation order.
pub fn sample_uniform_rotations(m: usize, seed: u64) -> Result<Vec<UnitQuaternion>> {
    if m == 0 {
        return Err(Error::invalid("rotation count must be at least 1"));
    }
    Ok((0..m as u64)
        .map(|i| draw_uniform_rotation(&mut rng::stream(seed, Domain::Rotations, i)))
        .collect())
}

/// Largest gap between the empirical CDF of the rotation angles of `quats`
/// and the Haar angle CDF `(θ - sin θ)/π`.
pub fn haar_angle_deviation(quats: &[UnitQuaternion]) -> f64 {
    let mut angles: Vec<f64> = quats.iter().map(|q| q.angle()).collect();
    angles.sort_by(f64::total_cmp);
    let n = angles.len() as f64;
    angles
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = (t - t.sin()) / std::f64::consts::PI;
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Weighted quaternion average: the principal eigenvector of
/// `A = (1/ΣΓ) Σ Γ_i q_i q_iᵀ`.
///
/// Terms are accumulated in a canonical order, so the result is bitwise
/// independent of input order and of the sign of each input quaternion.
pub fn weighted_average(quats: &[UnitQuaternion], weights: &[f64]) -> Result<UnitQuaternion> {
    if quats.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} quaternions but {} weights",
            quats.len(),
            weights.len()
        )));
    }
    if quats.is_empty() {
        return Err(Error::invalid("cannot average an empty set"));
    }
    if weights.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }

    let mut terms: Vec<(f64, [f64; 4])> = weights
        .iter()
        .zip(quats)
        .map(|(g, q)| (*g, q.canonical().to_array()))
        .collect();
    terms.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });

    let mut acc = [[0.0f64; 4]; 4];
    let mut total = 0.0;
    for (g, q) in &terms {
        for r in 0..4 {
            for c in 0..4 {
                acc[r][c] += g * q[r] * q[c];
            }
        }
        total += g;
    }
    if total <= 0.0 {
        return Err(Error::invalid("weights sum to zero"));
    }
    for row in acc.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }

    let (values, vectors) = symmetric_eigen4(acc);
    let best = (0..4)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let v = [
        vectors[0][best],
        vectors[1][best],
        vectors[2][best],
        vectors[3][best],
    ];
    Ok(UnitQuaternion::from_array(v)?.canonical())
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigen-decomposition of a symmetric 4×4 matrix.
/// Returns eigenvalues and a matrix whose columns are the eigenvectors.
pub(crate) fn symmetric_eigen4(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..4)
            .flat_map(|p| (0..4).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_TOL {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}
