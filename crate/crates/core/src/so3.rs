//! Unit quaternions, rotation matrices, ZYZ Euler angles and the geodesic
//! metric on SO(3), plus the C1/D2 symmetry quotients.
//!
//! Conventions used throughout the crate:
//!
//! * Hamilton product, `R(p * q) = R(p) R(q)`.
//! * `R(q)` maps volume coordinates to image coordinates; a projection image
//!   is `I(p) = ∫ V(Rᵀ p) dz`.
//! * Symmetry elements act on the right (`q * s`), so that an `S`-symmetric
//!   volume yields identical projections for `q` and `q * s`.

use std::ops::{Mul, Neg};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{c, Real};

/// Norm deviation tolerated by the checked distance functions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Orientation on S³. `q` and `-q` denote the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> UnitQuaternion<T> {
    pub fn identity() -> Self {
        Self::from_array_unchecked([T::one(), T::zero(), T::zero(), T::zero()])
    }

    /// Wraps components without normalizing. Caller guarantees unit norm.
    pub fn from_array_unchecked(v: [T; 4]) -> Self {
        Self {
            w: v[0],
            x: v[1],
            y: v[2],
            z: v[3],
        }
    }

    /// Normalizes `v`; fails on a (near) zero vector.
    pub fn normalize(v: [T; 4]) -> Result<Self> {
        let n = v.iter().map(|&a| a * a).sum::<T>().sqrt();
        if !(n > c(1e-12)) {
            return Err(invalid(format!("cannot normalize quaternion of norm {n}")));
        }
        Ok(Self::from_array_unchecked(v.map(|a| a / n)))
    }

    /// Rotation by `angle` about a unit `axis`.
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let h = angle * c(0.5);
        let s = h.sin();
        Self::from_array_unchecked([h.cos(), axis[0] * s, axis[1] * s, axis[2] * s])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(self) -> Self {
        Self::from_array_unchecked([self.w, -self.x, -self.y, -self.z])
    }

    fn check_unit(&self) -> Result<()> {
        let dev = (self.norm() - T::one()).abs();
        if dev > c(UNIT_TOLERANCE) || !dev.is_finite() {
            return Err(invalid(format!(
                "quaternion norm deviates from 1 by {dev}"
            )));
        }
        Ok(())
    }

    /// Geodesic angle without norm checks. Argument of `acos` is clamped.
    pub fn angle_to(&self, o: &Self) -> T {
        let d = self.dot(o).abs().min(T::one());
        c::<T>(2.0) * d.acos()
    }

    /// Representative with the first nonzero component positive.
    pub fn canonical(self) -> Self {
        for v in self.to_array() {
            if v > T::zero() {
                return self;
            }
            if v < T::zero() {
                return -self;
            }
        }
        self
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two: T = c(2.0);
        let one = T::one();
        RotationMatrix([
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ])
    }

    /// Rotates a 3-vector.
    pub fn rotate(&self, v: [T; 3]) -> [T; 3] {
        self.to_rotation_matrix().apply(v)
    }
}

impl<T: Real> Neg for UnitQuaternion<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_array_unchecked(self.to_array().map(|a| -a))
    }
}

impl<T: Real> Mul for UnitQuaternion<T> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        let (a, b, cc, d) = (self.w, self.x, self.y, self.z);
        let (e, f, g, h) = (r.w, r.x, r.y, r.z);
        Self::from_array_unchecked([
            a * e - b * f - cc * g - d * h,
            a * f + b * e + cc * h - d * g,
            a * g - b * h + cc * e + d * f,
            a * h + b * g - cc * f + d * e,
        ])
    }
}

/// `2·acos(|⟨a,b⟩|)`, in `[0, π]`.
pub fn geodesic_distance<T: Real>(a: &UnitQuaternion<T>, b: &UnitQuaternion<T>) -> Result<T> {
    a.check_unit()?;
    b.check_unit()?;
    Ok(a.angle_to(b))
}

/// Proper rotation, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix<T>(pub [[T; 3]; 3]);

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn apply(&self, v: [T; 3]) -> [T; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Self(out)
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> T {
        let m = &self.0;
        let tr = m[0][0] + m[1][1] + m[2][2];
        ((tr - T::one()) * c(0.5)).max(-T::one()).min(T::one()).acos()
    }

    /// Shepperd's method: picks the largest of `w², x², y², z²` as pivot.
    pub fn to_quaternion(&self) -> UnitQuaternion<T> {
        let m = &self.0;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let one = T::one();
        let q = if tr >= m[0][0] && tr >= m[1][1] && tr >= m[2][2] {
            let s = (one + tr).sqrt() * c(2.0);
            [
                s * c(0.25),
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            ]
        } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * c(2.0);
            [
                (m[2][1] - m[1][2]) / s,
                s * c(0.25),
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            ]
        } else if m[1][1] >= m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * c(2.0);
            [
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                s * c(0.25),
                (m[1][2] + m[2][1]) / s,
            ]
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * c(2.0);
            [
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                s * c(0.25),
            ]
        };
        // renormalize away rounding from a nearly-orthogonal input
        UnitQuaternion::normalize(q).unwrap_or_else(|_| UnitQuaternion::identity())
    }
}

/// Quaternion → matrix. Errors on non-unit input.
pub fn quat_to_rotmat<T: Real>(q: &UnitQuaternion<T>) -> Result<RotationMatrix<T>> {
    q.check_unit()?;
    Ok(q.to_rotation_matrix())
}

/// ZYZ Euler angles, `R = Rz(psi) · Ry(theta) · Rz(phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerZyz<T> {
    pub psi: T,
    pub theta: T,
    pub phi: T,
}

fn wrap_two_pi<T: Real>(a: T) -> T {
    let tau = T::TAU();
    let r = a % tau;
    let r = if r < T::zero() { r + tau } else { r };
    if r >= tau {
        T::zero()
    } else {
        r
    }
}

impl<T: Real> EulerZyz<T> {
    pub fn new(psi: T, theta: T, phi: T) -> Self {
        Self { psi, theta, phi }
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<T> {
        let z = [T::zero(), T::zero(), T::one()];
        let y = [T::zero(), T::one(), T::zero()];
        UnitQuaternion::from_axis_angle(z, self.psi)
            * UnitQuaternion::from_axis_angle(y, self.theta)
            * UnitQuaternion::from_axis_angle(z, self.phi)
    }

    pub fn from_rotation_matrix(r: &RotationMatrix<T>) -> Self {
        let m = &r.0;
        let cos_t = m[2][2].max(-T::one()).min(T::one());
        let sin_t = (m[0][2] * m[0][2] + m[1][2] * m[1][2]).sqrt();
        let eps: T = c(1e-9);
        let (psi, theta, phi) = if sin_t > eps {
            (
                m[1][2].atan2(m[0][2]),
                sin_t.atan2(m[2][2]),
                m[2][1].atan2(-m[2][0]),
            )
        } else if cos_t > T::zero() {
            // Rz(psi + phi)
            (m[1][0].atan2(m[0][0]), T::zero(), T::zero())
        } else {
            // Rz(psi - phi) · Ry(pi)
            ((-m[1][0]).atan2(-m[0][0]), T::PI(), T::zero())
        };
        Self {
            psi: wrap_two_pi(psi),
            theta,
            phi: wrap_two_pi(phi),
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<T>) -> Self {
        Self::from_rotation_matrix(&q.to_rotation_matrix())
    }

    /// Same rotation with angles inside `[0,2π) × [0,π] × [0,2π)`.
    pub fn normalized(&self) -> Self {
        Self::from_quaternion(&self.to_quaternion())
    }
}

/// `euler_zyz_to_quat`.
pub fn euler_zyz_to_quat<T: Real>(e: &EulerZyz<T>) -> UnitQuaternion<T> {
    e.to_quaternion()
}

/// `quat_to_euler_zyz`.
pub fn quat_to_euler_zyz<T: Real>(q: &UnitQuaternion<T>) -> EulerZyz<T> {
    EulerZyz::from_quaternion(q)
}

/// Point-group symmetry supported by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SymmetryKind {
    #[default]
    C1,
    D2,
}

impl std::str::FromStr for SymmetryKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Self::C1),
            "D2" => Ok(Self::D2),
            other => Err(invalid(format!("unknown symmetry group {other}"))),
        }
    }
}

/// Elements of a finite rotation group as unit quaternions.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup<T> {
    pub kind: SymmetryKind,
    pub elements: Vec<UnitQuaternion<T>>,
}

impl<T: Real> SymmetryGroup<T> {
    pub fn new(kind: SymmetryKind) -> Self {
        let (o, z) = (T::one(), T::zero());
        let mut elements = vec![UnitQuaternion::identity()];
        if kind == SymmetryKind::D2 {
            elements.push(UnitQuaternion::from_array_unchecked([z, o, z, z]));
            elements.push(UnitQuaternion::from_array_unchecked([z, z, o, z]));
            elements.push(UnitQuaternion::from_array_unchecked([z, z, z, o]));
        }
        Self { kind, elements }
    }

    pub fn c1() -> Self {
        Self::new(SymmetryKind::C1)
    }

    pub fn d2() -> Self {
        Self::new(SymmetryKind::D2)
    }

    /// Unchecked minimum of `d(a, b·s)` over the group.
    pub fn distance(&self, a: &UnitQuaternion<T>, b: &UnitQuaternion<T>) -> T {
        self.elements
            .iter()
            .map(|s| a.angle_to(&(*b * *s)))
            .fold(T::infinity(), T::min)
    }
}

/// `min_s d(a, b·s)`; for C1 this is exactly [`geodesic_distance`].
pub fn symmetric_distance<T: Real>(
    a: &UnitQuaternion<T>,
    b: &UnitQuaternion<T>,
    group: &SymmetryGroup<T>,
) -> Result<T> {
    if group.elements.is_empty() {
        return Err(invalid("symmetry group has no elements"));
    }
    a.check_unit()?;
    b.check_unit()?;
    Ok(group.distance(a, b))
}

/// Maps an orientation into the D2 asymmetric unit
/// `[0,2π) × [0,π/2] × [0,π)` (the `θ = π/2` boundary stays in the lower cell).
pub fn canonicalize_d2<T: Real>(e: &EulerZyz<T>) -> EulerZyz<T> {
    let pi = T::PI();
    let half_pi = T::FRAC_PI_2();
    let mut out = e.normalized();
    if out.theta > half_pi {
        // right-multiply by the π rotation about y
        out = EulerZyz {
            psi: wrap_two_pi(out.psi + pi),
            theta: pi - out.theta,
            phi: wrap_two_pi(pi - out.phi),
        };
    }
    if out.phi >= pi {
        // right-multiply by the π rotation about z
        out.phi -= pi;
    }
    out
}

/// Marsaglia (1972) uniform sample on S³.
pub fn sample_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<T> {
    let disk = |rng: &mut R| loop {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let s = a * a + b * b;
        if s < 1.0 && s > 0.0 {
            return (a, b, s);
        }
    };
    let (x1, x2, s1) = disk(rng);
    let (x3, x4, s2) = disk(rng);
    let f = ((1.0 - s1) / s2).sqrt();
    let v = [x1, x2, x3 * f, x4 * f];
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    UnitQuaternion::from_array_unchecked(v.map(|a| c(a / n)))
}

/// Deterministic single draw for a given seed.
pub fn sample_uniform_seeded<T: Real>(seed: u64) -> UnitQuaternion<T> {
    sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    type Q = UnitQuaternion<f64>;

    fn q(w: f64, x: f64, y: f64, z: f64) -> Q {
        Q::from_array_unchecked([w, x, y, z])
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    // Independent oracles: plain matrix products and a trace/largest-diagonal
    // quaternion extraction written from scratch.
    fn rz(a: f64) -> [[f64; 3]; 3] {
        [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]]
    }
    fn ry(a: f64) -> [[f64; 3]; 3] {
        [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]]
    }
    fn mm(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    o[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        o
    }
    fn oracle_mat_to_quat(m: [[f64; 3]; 3]) -> Q {
        // w², x², y², z² from the diagonal, then signs from off-diagonals
        let w2 = (1.0 + m[0][0] + m[1][1] + m[2][2]) / 4.0;
        let x2 = (1.0 + m[0][0] - m[1][1] - m[2][2]) / 4.0;
        let y2 = (1.0 - m[0][0] + m[1][1] - m[2][2]) / 4.0;
        let z2 = (1.0 - m[0][0] - m[1][1] + m[2][2]) / 4.0;
        let big = [w2, x2, y2, z2]
            .iter()
            .cloned()
            .enumerate()
            .fold((0, -1.0), |a, (i, v)| if v > a.1 { (i, v) } else { a });
        let r = big.1.sqrt();
        let wx = (m[2][1] - m[1][2]) / 4.0;
        let wy = (m[0][2] - m[2][0]) / 4.0;
        let wz = (m[1][0] - m[0][1]) / 4.0;
        let xy = (m[0][1] + m[1][0]) / 4.0;
        let xz = (m[0][2] + m[2][0]) / 4.0;
        let yz = (m[1][2] + m[2][1]) / 4.0;
        let v = match big.0 {
            0 => [r, wx / r, wy / r, wz / r],
            1 => [wx / r, r, xy / r, xz / r],
            2 => [wy / r, xy / r, r, yz / r],
            _ => [wz / r, xz / r, yz / r, r],
        };
        Q::normalize(v).unwrap()
    }

    #[test]
    fn geodesic_examples() {
        let id = Q::identity();
        assert_eq!(geodesic_distance(&id, &id).unwrap(), 0.0);
        assert!((geodesic_distance(&id, &q(0.0, 0.0, 0.0, 1.0)).unwrap() - PI).abs() < 1e-15);
        let r = q(FRAC_PI_4.cos(), FRAC_PI_4.sin(), 0.0, 0.0);
        assert!((geodesic_distance(&id, &r).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn geodesic_rejects_non_unit() {
        let bad = q(1.0, 1e-2, 0.0, 0.0);
        assert!(geodesic_distance(&Q::identity(), &bad).is_err());
        let ok = q(1.0 + 1e-8, 0.0, 0.0, 0.0);
        assert!(geodesic_distance(&Q::identity(), &ok).is_ok());
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut r = rng();
        for _ in 0..10_000 {
            let a: Q = sample_uniform(&mut r);
            let b: Q = sample_uniform(&mut r);
            let cq: Q = sample_uniform(&mut r);
            let ab = geodesic_distance(&a, &b).unwrap();
            assert_eq!(ab, geodesic_distance(&b, &a).unwrap());
            assert_eq!(ab, geodesic_distance(&a, &-b).unwrap());
            let bc = geodesic_distance(&b, &cq).unwrap();
            let ac = geodesic_distance(&a, &cq).unwrap();
            assert!(ac <= ab + bc + 1e-9);
            assert!(geodesic_distance(&a, &-a).unwrap() < 1e-7);
        }
    }

    #[test]
    fn distance_matches_relative_rotation_angle() {
        let mut r = rng();
        for _ in 0..2000 {
            let a: Q = sample_uniform(&mut r);
            let b: Q = sample_uniform(&mut r);
            let rel = quat_to_rotmat(&a)
                .unwrap()
                .transpose()
                .matmul(&quat_to_rotmat(&b).unwrap());
            let d = geodesic_distance(&a, &b).unwrap();
            // acos loses precision near 0 and π
            let tol = if d < 1e-3 || PI - d < 1e-3 { 1e-4 } else { 1e-7 };
            assert!((d - rel.angle()).abs() < tol, "{d} vs {}", rel.angle());
        }
    }

    #[test]
    fn rotmat_examples_and_properties() {
        assert_eq!(quat_to_rotmat(&Q::identity()).unwrap(), RotationMatrix::identity());
        let m = quat_to_rotmat(&q(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(m.0, [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]);
        let mut r = rng();
        for _ in 0..1000 {
            let a: Q = sample_uniform(&mut r);
            let m = quat_to_rotmat(&a).unwrap();
            assert_eq!(m, quat_to_rotmat(&-a).unwrap());
            let mtm = m.transpose().matmul(&m);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((mtm.0[i][j] - want).abs() < 1e-9);
                }
            }
            assert!((m.determinant() - 1.0).abs() < 1e-9);
            assert!(a.angle_to(&m.to_quaternion()) < 1e-6);
        }
        assert!(quat_to_rotmat(&q(2.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn euler_examples() {
        let e0 = EulerZyz::new(0.0, 0.0, 0.0);
        assert_eq!(euler_zyz_to_quat(&e0), Q::identity());
        let ey = euler_zyz_to_quat(&EulerZyz::new(0.0, FRAC_PI_2, 0.0));
        let want = q(FRAC_PI_4.cos(), 0.0, FRAC_PI_4.sin(), 0.0);
        assert!(geodesic_distance(&ey, &want).unwrap() < 1e-9);

        let (psi, theta, phi) = (PI / 3.0, PI / 4.0, PI / 5.0);
        let reference = oracle_mat_to_quat(mm(mm(rz(psi), ry(theta)), rz(phi)));
        let got = euler_zyz_to_quat(&EulerZyz::new(psi, theta, phi));
        assert!(got.angle_to(&reference) < 1e-7);
        assert!((got.dot(&reference).abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn euler_round_trip() {
        let mut r = rng();
        for _ in 0..2000 {
            let a: Q = sample_uniform(&mut r);
            let e = quat_to_euler_zyz(&a);
            assert!(e.psi >= 0.0 && e.psi < 2.0 * PI);
            assert!(e.theta >= 0.0 && e.theta <= PI);
            assert!(e.phi >= 0.0 && e.phi < 2.0 * PI);
            let b = euler_zyz_to_quat(&e);
            assert!((a.dot(&b).abs() - 1.0).abs() < 1e-12);
        }
        // gimbal configurations keep the composite rotation
        for e in [
            EulerZyz::new(0.3, 0.0, 0.5),
            EulerZyz::new(0.3, PI, 0.5),
            EulerZyz::new(5.0, 0.0, 4.0),
        ] {
            let a = euler_zyz_to_quat(&e);
            let b = euler_zyz_to_quat(&quat_to_euler_zyz(&a));
            assert!((a.dot(&b).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_sampling_is_unit_and_deterministic() {
        for seed in 0..100 {
            let a: Q = sample_uniform_seeded(seed);
            assert!((a.norm() - 1.0).abs() < 1e-12);
            assert_eq!(a, sample_uniform_seeded(seed));
        }
    }

    #[test]
    fn uniform_distance_moments() {
        // Relative angle density (1 - cos θ)/π on [0, π]: mean π/2 + 2/π,
        // median solves θ - sin θ = π/2.
        let mean_oracle = FRAC_PI_2 + 2.0 / PI;
        let mut lo = 0.0;
        let mut hi = PI;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid - mid.sin() < FRAC_PI_2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let median_oracle = lo;
        assert!((mean_oracle - 2.2074).abs() < 1e-3);
        assert!((median_oracle - 2.3099).abs() < 1e-3);

        let mut r = rng();
        let fixed: Q = sample_uniform(&mut r);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| fixed.angle_to(&sample_uniform(&mut r)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.21).abs() < 0.02, "{mean}");
        let mut ds: Vec<f64> = (0..n)
            .map(|_| {
                let a: Q = sample_uniform(&mut r);
                let b: Q = sample_uniform(&mut r);
                a.angle_to(&b)
            })
            .collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ds[n / 2];
        assert!((median - 2.31).abs() < 0.02, "{median}");
    }

    #[test]
    fn symmetric_distance_examples() {
        let mut r = rng();
        let c1 = SymmetryGroup::c1();
        let d2 = SymmetryGroup::d2();
        let i = q(0.0, 1.0, 0.0, 0.0);
        for _ in 0..500 {
            let a: Q = sample_uniform(&mut r);
            let b: Q = sample_uniform(&mut r);
            assert_eq!(
                symmetric_distance(&a, &b, &c1).unwrap(),
                geodesic_distance(&a, &b).unwrap()
            );
            assert!(symmetric_distance(&a, &(a * i), &d2).unwrap() < 1e-7);
            let brute = d2
                .elements
                .iter()
                .map(|s| geodesic_distance(&a, &(b * *s)).unwrap())
                .fold(f64::INFINITY, f64::min);
            let got = symmetric_distance(&a, &b, &d2).unwrap();
            assert_eq!(got, brute);
            assert!(got <= geodesic_distance(&a, &b).unwrap());
        }
        let empty = SymmetryGroup::<f64> {
            kind: SymmetryKind::C1,
            elements: vec![],
        };
        assert!(symmetric_distance(&Q::identity(), &Q::identity(), &empty).is_err());
    }

    #[test]
    fn d2_group_is_closed() {
        let g = SymmetryGroup::<f64>::d2();
        for a in &g.elements {
            for b in &g.elements {
                let p = *a * *b;
                assert!(g.elements.iter().any(|e| e.angle_to(&p) < 1e-12));
            }
        }
    }

    fn in_d2_cell(e: &EulerZyz<f64>) -> bool {
        e.psi >= 0.0 && e.psi < 2.0 * PI && e.theta >= 0.0 && e.theta <= FRAC_PI_2 && e.phi >= 0.0 && e.phi < PI
    }

    #[test]
    fn canonicalize_d2_examples() {
        let d2 = SymmetryGroup::d2();
        let e = EulerZyz::<f64>::new(0.1, 0.2, 0.3);
        let out = canonicalize_d2(&e);
        assert!((out.psi - 0.1).abs() < 1e-12);
        assert!((out.theta - 0.2).abs() < 1e-12);
        assert!((out.phi - 0.3).abs() < 1e-12);
        for e in [EulerZyz::<f64>::new(0.1, 3.0 * FRAC_PI_4, 0.3), EulerZyz::new(0.1, 0.2, 1.5 * PI)] {
            let out = canonicalize_d2(&e);
            assert!(in_d2_cell(&out), "{out:?}");
            let d = symmetric_distance(&e.to_quaternion(), &out.to_quaternion(), &d2).unwrap();
            assert!(d < 1e-7);
        }
        let mut r = rng();
        for _ in 0..2000 {
            let a: Q = sample_uniform(&mut r);
            let e = quat_to_euler_zyz(&a);
            let out = canonicalize_d2(&e);
            assert!(in_d2_cell(&out), "{out:?}");
            assert!(d2.distance(&a, &out.to_quaternion()) < 1e-6);
        }
    }

    #[test]
    fn canonical_sign() {
        assert_eq!(q(-0.5, 0.5, 0.5, 0.5).canonical(), q(0.5, -0.5, -0.5, -0.5));
        assert_eq!(q(0.0, -1.0, 0.0, 0.0).canonical(), q(0.0, 1.0, 0.0, 0.0));
    }
}
