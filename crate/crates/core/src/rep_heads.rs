//! Rotation heads mapping a raw network output to a unit quaternion, with
//! their analytic vector-Jacobian products.
//!
//! * [`HeadKind::Quat`]: 4 numbers, normalized.
//! * [`HeadKind::SixD`]: two 3-vectors, Gram-Schmidt orthonormalized.
//! * [`HeadKind::Qcqp`]: 10 numbers filling an upper-triangular `L`; the
//!   output is the minimum eigenvector of `A = L Lᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::so3::{RotationMatrix, UnitQuaternion};
use crate::sym_eigen::SymEigen4;

/// Relative eigengap below which the QCQP output is flagged degenerate.
pub const EIGENGAP_THRESHOLD: f64 = 1e-8;

const QUAT_NORM_FLOOR: f64 = 1e-12;
const GRAM_SCHMIDT_FLOOR: f64 = 1e-10;

/// Symmetric positive semidefinite 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdMatrix4<T>(pub [[T; 4]; 4]);

impl<T: Real> PsdMatrix4<T> {
    pub fn diagonal(d: [T; 4]) -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..4 {
            m[i][i] = d[i];
        }
        Self(m)
    }

    pub fn eigen(&self) -> SymEigen4<T> {
        SymEigen4::new(&self.0)
    }
}

/// Which parameterization produces the orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Quat,
    #[serde(rename = "sixd")]
    SixD,
    Qcqp,
}

impl HeadKind {
    pub fn arity(self) -> usize {
        match self {
            HeadKind::Quat => 4,
            HeadKind::SixD => 6,
            HeadKind::Qcqp => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Quat => "quat",
            HeadKind::SixD => "sixd",
            HeadKind::Qcqp => "qcqp",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quat" => Ok(Self::Quat),
            "sixd" | "6d" => Ok(Self::SixD),
            "qcqp" => Ok(Self::Qcqp),
            other => Err(Error::InvalidArgument(format!("unknown head {other}"))),
        }
    }
}

fn degenerate(msg: impl Into<String>) -> Error {
    Error::DegenerateInput(msg.into())
}

/// Normalizes a raw 4-vector.
pub fn head_quat<T: Real>(raw: [T; 4]) -> Result<UnitQuaternion<T>> {
    let n = raw.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if !(n > c(QUAT_NORM_FLOOR)) {
        return Err(degenerate(format!("quaternion head norm {n}")));
    }
    Ok(UnitQuaternion::from_array_unchecked(raw.map(|v| v / n)))
}

/// `∂L/∂raw = (I − q qᵀ) g / ‖raw‖`.
pub fn head_quat_backward<T: Real>(raw: [T; 4], grad_q: [T; 4]) -> Result<[T; 4]> {
    let q = head_quat(raw)?.to_array();
    let n = raw.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let gq: T = (0..4).map(|i| grad_q[i] * q[i]).sum();
    Ok(std::array::from_fn(|i| (grad_q[i] - q[i] * gq) / n))
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn axpy<T: Real>(a: T, x: [T; 3], y: [T; 3]) -> [T; 3] {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn scale3<T: Real>(a: T, x: [T; 3]) -> [T; 3] {
    [a * x[0], a * x[1], a * x[2]]
}

struct GramSchmidt<T> {
    e1: [T; 3],
    e2: [T; 3],
    e3: [T; 3],
    u_norm: T,
    w_norm: T,
    e1_dot_v: T,
    v: [T; 3],
}

fn gram_schmidt<T: Real>(raw: [T; 6]) -> Result<GramSchmidt<T>> {
    let u = [raw[0], raw[1], raw[2]];
    let v = [raw[3], raw[4], raw[5]];
    let u_norm = dot3(u, u).sqrt();
    if !(u_norm >= c(GRAM_SCHMIDT_FLOOR)) {
        return Err(degenerate(format!("6D head: |u| = {u_norm}")));
    }
    let e1 = scale3(T::one() / u_norm, u);
    let e1_dot_v = dot3(e1, v);
    let w = axpy(-e1_dot_v, e1, v);
    let w_norm = dot3(w, w).sqrt();
    if !(w_norm >= c(GRAM_SCHMIDT_FLOOR)) {
        return Err(degenerate(format!("6D head: residual {w_norm}")));
    }
    let e2 = scale3(T::one() / w_norm, w);
    let e3 = cross(e1, e2);
    Ok(GramSchmidt {
        e1,
        e2,
        e3,
        u_norm,
        w_norm,
        e1_dot_v,
        v,
    })
}

/// Rotation matrix with columns `(e1, e2, e3)` from the 6D input `(u, v)`.
pub fn six_d_rotation<T: Real>(raw: [T; 6]) -> Result<RotationMatrix<T>> {
    let g = gram_schmidt(raw)?;
    Ok(RotationMatrix(std::array::from_fn(|i| [g.e1[i], g.e2[i], g.e3[i]])))
}

/// Gram-Schmidt 6D head.
pub fn head_6d<T: Real>(raw: [T; 6]) -> Result<UnitQuaternion<T>> {
    Ok(six_d_rotation(raw)?.to_quaternion())
}

/// Vector-Jacobian product of [`head_6d`].
///
/// The quaternion extraction is differentiated on the manifold: a body-frame
/// perturbation `R(I + [ω]×)` moves `q` by `½ q ⊗ (0, ω)`, so the gradient
/// with respect to `R` is `½ R [h]×` with `h` the vector part of `½ q* ⊗ g`.
pub fn head_6d_backward<T: Real>(raw: [T; 6], grad_q: [T; 4]) -> Result<[T; 6]> {
    let gs = gram_schmidt(raw)?;
    let r = RotationMatrix(std::array::from_fn(|i| [gs.e1[i], gs.e2[i], gs.e3[i]]));
    let q = r.to_quaternion();
    let g = UnitQuaternion::from_array_unchecked(grad_q);
    let hq = q.conjugate() * g;
    let h = [hq.x * c(0.5), hq.y * c(0.5), hq.z * c(0.5)];
    // [h]x
    let z = T::zero();
    let hx = [[z, -h[2], h[1]], [h[2], z, -h[0]], [-h[1], h[0], z]];
    let gr = RotationMatrix(hx);
    let gr = r.matmul(&gr).0.map(|row| row.map(|v| v * c(0.5)));
    let mut g1 = [gr[0][0], gr[1][0], gr[2][0]];
    let mut g2 = [gr[0][1], gr[1][1], gr[2][1]];
    let g3 = [gr[0][2], gr[1][2], gr[2][2]];
    // e3 = e1 × e2
    g1 = axpy(T::one(), cross(gs.e2, g3), g1);
    g2 = axpy(T::one(), cross(g3, gs.e1), g2);
    // e2 = w / |w|
    let gw = scale3(T::one() / gs.w_norm, axpy(-dot3(gs.e2, g2), gs.e2, g2));
    // w = v − (e1·v) e1
    let e1_gw = dot3(gs.e1, gw);
    let gv = axpy(-e1_gw, gs.e1, gw);
    g1 = axpy(-gs.e1_dot_v, gw, g1);
    g1 = axpy(-e1_gw, gs.v, g1);
    // e1 = u / |u|
    let gu = scale3(T::one() / gs.u_norm, axpy(-dot3(gs.e1, g1), gs.e1, g1));
    Ok([gu[0], gu[1], gu[2], gv[0], gv[1], gv[2]])
}

/// Position of each θ entry inside the upper-triangular `L`, following the
/// printed layout (θ₉ and θ₁₀ swap columns in row three).
pub const THETA_LAYOUT: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (3, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 3),
    (2, 2),
];

/// Upper-triangular factor `L` for the given θ.
pub fn qcqp_factor<T: Real>(theta: &[T; 10]) -> [[T; 4]; 4] {
    let mut l = [[T::zero(); 4]; 4];
    for (t, &(i, j)) in theta.iter().zip(THETA_LAYOUT.iter()) {
        l[i][j] = *t;
    }
    l
}

/// `A = L Lᵀ`.
pub fn qcqp_build_a<T: Real>(theta: &[T; 10]) -> PsdMatrix4<T> {
    let l = qcqp_factor(theta);
    let mut a = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = (0..4).map(|k| l[i][k] * l[j][k]).sum();
        }
    }
    PsdMatrix4(a)
}

/// Minimizer of `qᵀ A q` on the unit sphere together with the spectrum.
#[derive(Debug, Clone, Copy)]
pub struct QcqpSolution<T> {
    pub q: UnitQuaternion<T>,
    pub a: PsdMatrix4<T>,
    pub eigen: SymEigen4<T>,
    /// Eigengap below [`EIGENGAP_THRESHOLD`]; `q` is still a valid minimizer.
    pub degenerate: bool,
}

impl<T: Real> QcqpSolution<T> {
    pub fn gap_threshold(eigen: &SymEigen4<T>) -> T {
        c::<T>(EIGENGAP_THRESHOLD) * eigen.values[3].max(T::one())
    }

    /// Turns the degenerate flag into an error.
    pub fn check(&self) -> Result<&Self> {
        if self.degenerate {
            return Err(Error::DegenerateRepresentation {
                gap: self.eigen.min_gap().to_f64().unwrap_or(f64::NAN),
                threshold: Self::gap_threshold(&self.eigen).to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(self)
    }
}

/// Solves the QCQP for an explicit PSD matrix.
pub fn qcqp_solve<T: Real>(a: PsdMatrix4<T>) -> QcqpSolution<T> {
    let eigen = a.eigen();
    let q = UnitQuaternion::from_array_unchecked(eigen.vectors[0]).canonical();
    let degenerate = !(eigen.min_gap() >= QcqpSolution::gap_threshold(&eigen));
    QcqpSolution {
        q,
        a,
        eigen,
        degenerate,
    }
}

pub fn qcqp_forward<T: Real>(theta: &[T; 10]) -> QcqpSolution<T> {
    qcqp_solve(qcqp_build_a(theta))
}

/// `∂L/∂θ` given `∂L/∂q`, by first-order eigenvector perturbation:
/// `dq = Σ_{k>0} v_k v_kᵀ dA q / (λ₀ − λ_k)`, chained through `A = L Lᵀ`.
pub fn qcqp_backward<T: Real>(theta: &[T; 10], grad_q: [T; 4]) -> Result<[T; 10]> {
    let sol = qcqp_forward(theta);
    sol.check()?;
    Ok(qcqp_backward_from(theta, &sol, grad_q))
}

/// Backward pass reusing a forward solution. The caller is responsible for
/// the degeneracy check.
pub fn qcqp_backward_from<T: Real>(
    theta: &[T; 10],
    sol: &QcqpSolution<T>,
    grad_q: [T; 4],
) -> [T; 10] {
    let q = sol.q.to_array();
    let ev = &sol.eigen;
    // G_A = Σ_k (gᵀ v_k)/(λ₀ − λ_k) v_k qᵀ
    let mut coeff = [T::zero(); 4];
    for k in 1..4 {
        let gv: T = (0..4).map(|i| grad_q[i] * ev.vectors[k][i]).sum();
        coeff[k] = gv / (ev.values[0] - ev.values[k]);
    }
    let mut ga = [[T::zero(); 4]; 4];
    for (i, row) in ga.iter_mut().enumerate() {
        let u: T = (1..4).map(|k| coeff[k] * ev.vectors[k][i]).sum();
        for (j, v) in row.iter_mut().enumerate() {
            *v = u * q[j];
        }
    }
    // G_L = (G_A + G_Aᵀ) L
    let l = qcqp_factor(theta);
    let mut gl = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            gl[i][j] = (0..4).map(|k| (ga[i][k] + ga[k][i]) * l[k][j]).sum();
        }
    }
    std::array::from_fn(|t| {
        let (i, j) = THETA_LAYOUT[t];
        gl[i][j]
    })
}

/// Result of a head's forward map.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput<T> {
    pub q: UnitQuaternion<T>,
    /// Present for the QCQP head only.
    pub qcqp: Option<QcqpSolution<T>>,
}

/// Dispatches `raw` (of length `kind.arity()`) to the matching head.
pub fn head_forward<T: Real>(kind: HeadKind, raw: &[T]) -> Result<HeadOutput<T>> {
    if raw.len() != kind.arity() {
        return Err(Error::InvalidArgument(format!(
            "{} head expects {} inputs, got {}",
            kind.name(),
            kind.arity(),
            raw.len()
        )));
    }
    Ok(match kind {
        HeadKind::Quat => HeadOutput {
            q: head_quat(std::array::from_fn(|i| raw[i]))?,
            qcqp: None,
        },
        HeadKind::SixD => HeadOutput {
            q: head_6d(std::array::from_fn(|i| raw[i]))?,
            qcqp: None,
        },
        HeadKind::Qcqp => {
            let sol = qcqp_forward(&std::array::from_fn(|i| raw[i]));
            HeadOutput {
                q: sol.q,
                qcqp: Some(sol),
            }
        }
    })
}

/// Gradient of a scalar loss with respect to `raw`, given `∂L/∂q`.
///
/// A degenerate QCQP spectrum yields [`Error::DegenerateRepresentation`].
pub fn head_backward<T: Real>(kind: HeadKind, raw: &[T], grad_q: [T; 4]) -> Result<Vec<T>> {
    Ok(match kind {
        HeadKind::Quat => head_quat_backward(std::array::from_fn(|i| raw[i]), grad_q)?.to_vec(),
        HeadKind::SixD => head_6d_backward(std::array::from_fn(|i| raw[i]), grad_q)?.to_vec(),
        HeadKind::Qcqp => qcqp_backward(&std::array::from_fn(|i| raw[i]), grad_q)?.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_uniform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Q = UnitQuaternion<f64>;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_theta(r: &mut ChaCha8Rng) -> [f64; 10] {
        std::array::from_fn(|_| r.gen_range(-1.0..1.0))
    }

    fn random_unit4(r: &mut ChaCha8Rng) -> [f64; 4] {
        let q: Q = sample_uniform(r);
        q.to_array()
    }

    /// Upper-triangular U with A = U Uᵀ (Cholesky of the index-reversed matrix).
    fn reverse_cholesky(a: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut b = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                b[i][j] = a[3 - i][3 - j];
            }
        }
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| m[i][k] * m[j][k]).sum();
                if i == j {
                    m[i][i] = (b[i][i] - s).sqrt();
                } else {
                    m[i][j] = (b[i][j] - s) / m[j][j];
                }
            }
        }
        let mut u = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                u[i][j] = m[3 - i][3 - j];
            }
        }
        u
    }

    fn theta_from_factor(l: [[f64; 4]; 4]) -> [f64; 10] {
        std::array::from_fn(|t| {
            let (i, j) = THETA_LAYOUT[t];
            l[i][j]
        })
    }

    /// Random orthogonal matrix via Gram-Schmidt QR of a random matrix; columns.
    fn random_orthogonal(r: &mut ChaCha8Rng) -> [[f64; 4]; 4] {
        let mut cols: Vec<[f64; 4]> = Vec::new();
        while cols.len() < 4 {
            let mut v: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            for cvec in &cols {
                let d: f64 = (0..4).map(|i| v[i] * cvec[i]).sum();
                for i in 0..4 {
                    v[i] -= d * cvec[i];
                }
            }
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                cols.push(v.map(|x| x / n));
            }
        }
        [cols[0], cols[1], cols[2], cols[3]]
    }

    #[test]
    fn head_quat_examples() {
        assert_eq!(head_quat([2.0, 0.0, 0.0, 0.0]).unwrap(), Q::identity());
        assert_eq!(
            head_quat([1.0, 1.0, 1.0, 1.0]).unwrap().to_array(),
            [0.5, 0.5, 0.5, 0.5]
        );
        assert!(matches!(
            head_quat([0.0, 0.0, 0.0, 1e-15]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn head_quat_antipodal_inputs_are_the_same_rotation() {
        let a = head_quat([0.3, -0.2, 0.9, 0.1]).unwrap();
        let b = head_quat([-0.3, 0.2, -0.9, -0.1]).unwrap();
        assert_eq!(a, -b);
        assert_eq!(a.angle_to(&b), 0.0);
    }

    #[test]
    fn head_6d_examples() {
        let q = head_6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(q.angle_to(&Q::identity()) < 1e-12);
        // x→y, y→z, z→x
        let q: Q = head_6d([0.0, 2.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        let m = RotationMatrix([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(q.angle_to(&m.to_quaternion()) < 1e-9);
        assert_eq!(q.rotate([1.0, 0.0, 0.0]).map(|v: f64| v.round()), [0.0, 1.0, 0.0]);
        assert!(matches!(
            head_6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(head_6d([0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn build_a_examples() {
        let theta: [f64; 10] = [2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 4.0];
        assert_eq!(qcqp_build_a(&theta), PsdMatrix4::diagonal([4.0, 9.0, 16.0, 1.0]));
        assert_eq!(qcqp_build_a(&[0.0; 10]), PsdMatrix4([[0.0; 4]; 4]));
        let mut r = rng(1);
        for _ in 0..1000 {
            let a = qcqp_build_a(&random_theta(&mut r));
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(a.0[i][j], a.0[j][i]);
                }
            }
            assert!(a.eigen().values[0] >= -1e-9);
        }
    }

    #[test]
    fn forward_diagonal_case() {
        let theta: [f64; 10] = [2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 4.0];
        let sol = qcqp_forward(&theta);
        assert_eq!(sol.q.to_array(), [0.0, 0.0, 0.0, 1.0]);
        assert!(!sol.degenerate);
        let zero = qcqp_forward(&[0.0f64; 10]);
        assert!(zero.degenerate);
        assert!((zero.q.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(zero.check(), Err(Error::DegenerateRepresentation { .. })));
    }

    #[test]
    fn forward_is_global_minimizer() {
        let mut r = rng(2);
        for _ in 0..20 {
            let theta = random_theta(&mut r);
            let sol = qcqp_forward(&theta);
            let quad = |v: [f64; 4]| -> f64 {
                (0..4)
                    .map(|i| (0..4).map(|j| v[i] * sol.a.0[i][j] * v[j]).sum::<f64>())
                    .sum()
            };
            let best = quad(sol.q.to_array());
            for _ in 0..1000 {
                assert!(best <= quad(random_unit4(&mut r)) + 1e-10);
            }
        }
    }

    #[test]
    fn forward_rotated_diagonal() {
        let mut r = rng(3);
        for _ in 0..100 {
            let qm = random_orthogonal(&mut r);
            let d = [1.0, 2.0, 3.0, 4.0];
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] = (0..4).map(|k| qm[k][i] * d[k] * qm[k][j]).sum();
                }
            }
            let theta = theta_from_factor(reverse_cholesky(a));
            let sol = qcqp_forward(&theta);
            let dot: f64 = (0..4).map(|i| sol.q.to_array()[i] * qm[0][i]).sum();
            assert!(dot.abs() > 1.0 - 1e-9, "{dot}");
        }
    }

    fn aligned_q(theta: &[f64; 10], reference: &[f64; 4]) -> [f64; 4] {
        let q = qcqp_forward(theta).q.to_array();
        let s: f64 = (0..4).map(|i| q[i] * reference[i]).sum();
        if s < 0.0 {
            q.map(|v| -v)
        } else {
            q
        }
    }

    fn fd_grad(theta: &[f64; 10], g: [f64; 4], h: f64) -> [f64; 10] {
        let base = qcqp_forward(theta).q.to_array();
        std::array::from_fn(|t| {
            let mut p = *theta;
            let mut m = *theta;
            p[t] += h;
            m[t] -= h;
            let qp = aligned_q(&p, &base);
            let qm = aligned_q(&m, &base);
            (0..4).map(|i| g[i] * (qp[i] - qm[i])).sum::<f64>() / (2.0 * h)
        })
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng(4);
        let mut checked = 0;
        while checked < 100 {
            let theta = random_theta(&mut r);
            let sol = qcqp_forward(&theta);
            let ev = sol.eigen.values;
            if ev[1] - ev[0] < 0.05 {
                continue;
            }
            let g = random_unit4(&mut r);
            let an = qcqp_backward(&theta, g).unwrap();
            let fd = fd_grad(&theta, g, 1e-5);
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            let err = an
                .iter()
                .zip(&fd)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / scale;
            assert!(err < 1e-5, "relative error {err}");
            checked += 1;
        }
    }

    #[test]
    fn backward_zero_upstream_and_diagonal_coupling() {
        let theta: [f64; 10] = [2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 4.0];
        assert_eq!(qcqp_backward(&theta, [0.0; 4]).unwrap(), [0.0; 10]);
        // q = e4; grad_q = e1 couples components 1 and 4 through θ₄ only:
        // dL = dA₁₄ / (λ_min − A₁₁) = θ₅ dθ₄ / (1 − 4).
        let g = qcqp_backward(&theta, [1.0, 0.0, 0.0, 0.0]).unwrap();
        for (t, v) in g.iter().enumerate() {
            if t == 3 {
                assert!((v + 1.0 / 3.0).abs() < 1e-14);
            } else {
                assert_eq!(*v, 0.0, "slot {t}");
            }
        }
        assert!(matches!(
            qcqp_backward(&[0.0; 10], [1.0, 0.0, 0.0, 0.0]),
            Err(Error::DegenerateRepresentation { .. })
        ));
    }

    #[test]
    fn forward_is_continuous_away_from_degeneracy() {
        let mut r = rng(5);
        for _ in 0..1000 {
            let theta = random_theta(&mut r);
            let sol = qcqp_forward(&theta);
            if sol.eigen.min_gap() <= 1e-3 {
                continue;
            }
            let mut delta: [f64; 10] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let n = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            delta.iter_mut().for_each(|v| *v *= 1e-6 / n);
            let moved: [f64; 10] = std::array::from_fn(|i| theta[i] + delta[i]);
            assert!(sol.q.angle_to(&qcqp_forward(&moved).q) < 1e-3);
        }
    }

    #[test]
    fn quat_and_6d_backward_match_finite_differences() {
        let mut r = rng(6);
        for _ in 0..200 {
            let g = random_unit4(&mut r);
            let raw4: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let an = head_quat_backward(raw4, g).unwrap();
            let h = 1e-6;
            for t in 0..4 {
                let mut p = raw4;
                let mut m = raw4;
                p[t] += h;
                m[t] -= h;
                let qp = head_quat(p).unwrap().to_array();
                let qm = head_quat(m).unwrap().to_array();
                let fd: f64 = (0..4).map(|i| g[i] * (qp[i] - qm[i])).sum::<f64>() / (2.0 * h);
                assert!((fd - an[t]).abs() < 1e-7);
            }

            let raw6: [f64; 6] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let Ok(base) = head_6d(raw6) else { continue };
            let an = head_6d_backward(raw6, g).unwrap();
            for t in 0..6 {
                let mut p = raw6;
                let mut m = raw6;
                p[t] += h;
                m[t] -= h;
                let align = |q: Q| if q.dot(&base) < 0.0 { -q } else { q };
                let qp = align(head_6d(p).unwrap()).to_array();
                let qm = align(head_6d(m).unwrap()).to_array();
                let fd: f64 = (0..4).map(|i| g[i] * (qp[i] - qm[i])).sum::<f64>() / (2.0 * h);
                assert!((fd - an[t]).abs() < 1e-6, "slot {t}: {fd} vs {}", an[t]);
            }
        }
    }

    #[test]
    fn all_heads_emit_unit_quaternions() {
        let mut r = rng(7);
        for _ in 0..10_000 {
            for kind in [HeadKind::Quat, HeadKind::SixD, HeadKind::Qcqp] {
                let raw: Vec<f64> = (0..kind.arity()).map(|_| r.gen_range(-2.0..2.0)).collect();
                let out = head_forward(kind, &raw).unwrap();
                assert!((out.q.norm() - 1.0).abs() < 1e-9);
                assert_eq!(out.qcqp.is_some(), kind == HeadKind::Qcqp);
            }
        }
        assert!(head_forward::<f64>(HeadKind::Qcqp, &[0.0; 4]).is_err());
    }
}
