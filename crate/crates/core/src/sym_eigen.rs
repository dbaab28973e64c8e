//! Symmetric 4×4 eigendecomposition by cyclic Jacobi rotations.

use crate::scalar::{c, Real};

/// Eigenpairs sorted by ascending eigenvalue; `vectors[k]` is the unit
/// eigenvector for `values[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen4<T> {
    pub values: [T; 4],
    pub vectors: [[T; 4]; 4],
}

const MAX_SWEEPS: usize = 64;

fn off_diagonal_norm<T: Real>(a: &[[T; 4]; 4]) -> T {
    let mut s = T::zero();
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += *v * *v;
            }
        }
    }
    s.sqrt()
}

impl<T: Real> SymEigen4<T> {
    /// Decomposes the symmetric part of `a`. Iterates until the off-diagonal
    /// Frobenius norm is below `1e-12 · max(1, ‖A‖_F)` (or a few ulps for `f32`).
    pub fn new(a: &[[T; 4]; 4]) -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = (a[i][j] + a[j][i]) * c(0.5);
            }
        }
        let scale = m.iter().flatten().map(|v| *v * *v).sum::<T>().sqrt().max(T::one());
        let tol = scale * c::<T>(1e-12).max(T::epsilon() * c(4.0));
        // v[i][k]: component i of eigenvector k
        let mut v = [[T::zero(); 4]; 4];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = T::one();
        }
        for _ in 0..MAX_SWEEPS {
            if off_diagonal_norm(&m) <= tol {
                break;
            }
            for p in 0..3 {
                for q in (p + 1)..4 {
                    let apq = m[p][q];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (c::<T>(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let cs = T::one() / (t * t + T::one()).sqrt();
                    let sn = t * cs;
                    for k in 0..4 {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = cs * mkp - sn * mkq;
                        m[k][q] = sn * mkp + cs * mkq;
                    }
                    for k in 0..4 {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = cs * mpk - sn * mqk;
                        m[q][k] = sn * mpk + cs * mqk;
                    }
                    for row in v.iter_mut() {
                        let vp = row[p];
                        let vq = row[q];
                        row[p] = cs * vp - sn * vq;
                        row[q] = sn * vp + cs * vq;
                    }
                }
            }
        }
        let mut order = [0usize, 1, 2, 3];
        order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap_or(std::cmp::Ordering::Equal));
        let mut values = [T::zero(); 4];
        let mut vectors = [[T::zero(); 4]; 4];
        for (slot, &k) in order.iter().enumerate() {
            values[slot] = m[k][k];
            for i in 0..4 {
                vectors[slot][i] = v[i][k];
            }
        }
        Self { values, vectors }
    }

    /// `λ₂ − λ₁` of the ascending spectrum.
    pub fn min_gap(&self) -> T {
        self.values[1] - self.values[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng) -> [[f64; 4]; 4] {
        let mut a = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let v = rng.gen_range(-3.0..3.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        a
    }

    #[test]
    fn reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = random_sym(&mut rng);
            let e = SymEigen4::new(&a);
            for w in e.values.windows(2) {
                assert!(w[0] <= w[1]);
            }
            for i in 0..4 {
                for j in 0..4 {
                    let r: f64 = (0..4).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                    assert!((r - a[i][j]).abs() < 1e-10);
                    let d: f64 = (0..4).map(|k| e.vectors[i][k] * e.vectors[j][k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_and_zero_matrices() {
        let a = [
            [4.0, 0.0, 0.0, 0.0],
            [0.0, 9.0, 0.0, 0.0],
            [0.0, 0.0, 16.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let e = SymEigen4::new(&a);
        assert_eq!(e.values, [1.0, 4.0, 9.0, 16.0]);
        assert_eq!(e.vectors[0], [0.0, 0.0, 0.0, 1.0]);
        let z = SymEigen4::new(&[[0.0f64; 4]; 4]);
        assert_eq!(z.values, [0.0; 4]);
        assert_eq!(z.min_gap(), 0.0);
    }
}
