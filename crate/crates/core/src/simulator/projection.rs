//! Orientation grids and real-space projection.

use crate::error::{invalid, Result};
use crate::scalar::{c, cu, Real};
use crate::simulator::volume::Volume;
use crate::so3::{EulerZyz, SymmetryGroup, SymmetryKind, UnitQuaternion};

/// Quasi-uniform cover of SO(3): spherical Fibonacci directions for `(θ, φ)`
/// crossed with evenly spaced `ψ`.
///
/// The two factors are balanced so the angular spacing of directions matches
/// the in-plane step. For D2 only the asymmetric unit
/// `ψ ∈ [0,2π), θ ∈ [0,π/2], φ ∈ [0,π)` is covered.
pub fn grid_orientations<T: Real>(n_target: usize, group: &SymmetryGroup<T>) -> Vec<UnitQuaternion<T>> {
    let n = n_target.max(1) as f64;
    // spacing balance: sqrt(area / n_dir) = 2π / n_psi with area = 4π / |G|
    let order = group.elements.len().max(1) as f64;
    let area = 4.0 * std::f64::consts::PI / order;
    let n_psi = ((4.0 * std::f64::consts::PI.powi(2) * n / area).cbrt().round() as usize).max(1);
    let n_dir = ((n / n_psi as f64).round() as usize).max(1);
    let dirs = match group.kind {
        SymmetryKind::C1 => fibonacci_directions(n_dir),
        SymmetryKind::D2 => {
            // a quarter of the sphere survives the domain restriction
            let mut full = n_dir * 4;
            loop {
                let kept: Vec<_> = fibonacci_directions(full)
                    .into_iter()
                    .filter(|&(t, p)| t <= std::f64::consts::FRAC_PI_2 && p < std::f64::consts::PI)
                    .collect();
                if kept.len() >= n_dir || full > 8 * n_dir + 16 {
                    break kept;
                }
                full += 1;
            }
        }
    };
    let mut out = Vec::with_capacity(dirs.len() * n_psi);
    for &(theta, phi) in &dirs {
        for j in 0..n_psi {
            let psi = 2.0 * std::f64::consts::PI * j as f64 / n_psi as f64;
            out.push(EulerZyz::new(c::<T>(psi), c(theta), c(phi)).to_quaternion());
        }
    }
    out
}

/// `(θ, φ)` of `n` spherical Fibonacci points; a single point is the pole.
fn fibonacci_directions(n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 0.0)];
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let phi = (k as f64 * golden).rem_euclid(2.0 * std::f64::consts::PI);
            (z.clamp(-1.0, 1.0).acos(), phi)
        })
        .collect()
}

/// Line integral of `volume` along the viewing axis of `q`, translated by
/// `shift` pixels: `I(u, v) = Σ_w V(Rᵀ (u − dx, v − dy, w))`.
///
/// The shift is folded into the sampling positions, which is the same as
/// translating the projection with linear interpolation of the continuous
/// line integral. Output is `d × d`, row `v`, column `u`.
pub fn project<T: Real>(volume: &Volume<T>, q: &UnitQuaternion<T>, shift: [T; 2]) -> Result<Vec<T>> {
    let d = volume.d;
    let limit = cu::<T>(d) / c(8.0);
    if !(shift[0].abs() < limit && shift[1].abs() < limit) {
        return Err(invalid(format!(
            "shift ({}, {}) exceeds D/8 = {}",
            shift[0], shift[1], limit
        )));
    }
    let r = q.to_rotation_matrix().0;
    // columns of Rᵀ are the rows of R
    let ex = r[0];
    let ey = r[1];
    let ez = r[2];
    let h = volume.center();
    let mut img = vec![T::zero(); d * d];
    for v in 0..d {
        let pv = cu::<T>(v) - h - shift[1];
        for u in 0..d {
            let pu = cu::<T>(u) - h - shift[0];
            let base = [ex[0] * pu + ey[0] * pv, ex[1] * pu + ey[1] * pv, ex[2] * pu + ey[2] * pv];
            let mut acc = T::zero();
            for w in 0..d {
                let pw = cu::<T>(w) - h;
                acc += volume.sample([base[0] + ez[0] * pw, base[1] + ez[1] * pw, base[2] + ez[2] * pw]);
            }
            img[v * d + u] = acc;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::volume::{Blob, PhantomSpec};
    use crate::so3::canonicalize_d2;

    type Q = UnitQuaternion<f64>;

    fn blob(center: [f64; 3], sigma: f64) -> PhantomSpec {
        PhantomSpec {
            blobs: vec![Blob {
                center,
                sigma: [sigma; 3],
                amplitude: 1.0,
            }],
        }
    }

    #[test]
    fn grid_counts_and_single_orientation() {
        let one = grid_orientations::<f64>(1, &SymmetryGroup::c1());
        assert_eq!(one.len(), 1);
        assert!(one[0].angle_to(&Q::identity()) < 1e-12);
        for n in [10, 100, 777, 2000, 5000] {
            let g = grid_orientations::<f64>(n, &SymmetryGroup::c1());
            let rel = (g.len() as f64 - n as f64).abs() / n as f64;
            assert!(rel <= 0.1, "{n} -> {}", g.len());
        }
    }

    #[test]
    fn grid_nearest_neighbour_spacing_is_even() {
        let g = grid_orientations::<f64>(5000, &SymmetryGroup::c1());
        let nn: Vec<f64> = (0..g.len())
            .map(|i| {
                (0..g.len())
                    .filter(|&j| j != i)
                    .map(|j| g[i].angle_to(&g[j]))
                    .fold(f64::MAX, f64::min)
            })
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let sd = (nn.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nn.len() as f64).sqrt();
        assert!(nn.iter().all(|&x| x > 0.0));
        assert!(sd / mean < 0.5, "cv {}", sd / mean);
    }

    #[test]
    fn d2_grid_lies_in_the_asymmetric_unit() {
        let group = SymmetryGroup::<f64>::d2();
        let g = grid_orientations(1000, &group);
        assert!((g.len() as f64 - 1000.0).abs() <= 100.0, "{}", g.len());
        for q in &g {
            let e = crate::so3::quat_to_euler_zyz(q);
            let back = canonicalize_d2(&e).to_quaternion();
            // acos is ill-conditioned at 1, so compare components up to sign
            assert!(back.dot(q).abs() > 1.0 - 1e-12);
        }
        let min = (0..200)
            .flat_map(|i| ((i + 1)..200).map(move |j| (i, j)))
            .map(|(i, j)| group.distance(&g[i], &g[j]))
            .fold(f64::MAX, f64::min);
        assert!(min > 0.0);
    }

    #[test]
    fn centered_sphere_projects_radially() {
        let v: Volume<f64> = blob([0.0; 3], 0.1).rasterize(24, 1.0).unwrap();
        let img = project(&v, &Q::identity(), [0.0; 2]).unwrap();
        let d = 24;
        for y in 1..d {
            for x in 1..d {
                // mirror about the centre pixel 12
                let mx = 24 - x;
                let my = 24 - y;
                assert!((img[y * d + x] - img[my * d + mx]).abs() < 1e-6);
                assert!((img[y * d + x] - img[x * d + y]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn double_cover_is_bit_equal() {
        let v: Volume<f64> = PhantomSpec::random(6, 2, SymmetryKind::C1).rasterize(16, 1.0).unwrap();
        let q: Q = crate::so3::sample_uniform_seeded(4);
        let a = project(&v, &q, [0.7, -1.2]).unwrap();
        let b = project(&v, &-q, [0.7, -1.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projection_is_linear() {
        let v1: Volume<f64> = blob([0.1, 0.0, -0.1], 0.05).rasterize(16, 1.0).unwrap();
        let v2: Volume<f64> = blob([-0.2, 0.15, 0.0], 0.04).rasterize(16, 1.0).unwrap();
        let q: Q = crate::so3::sample_uniform_seeded(9);
        let sum = v1.scale_add(2.0, &v2, -0.5).unwrap();
        let p1 = project(&v1, &q, [0.3, 0.4]).unwrap();
        let p2 = project(&v2, &q, [0.3, 0.4]).unwrap();
        let ps = project(&sum, &q, [0.3, 0.4]).unwrap();
        for k in 0..ps.len() {
            assert!((ps[k] - (2.0 * p1[k] - 0.5 * p2[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn integer_shift_translates_image() {
        let v: Volume<f64> = PhantomSpec::random(5, 8, SymmetryKind::C1).rasterize(16, 1.0).unwrap();
        let q: Q = crate::so3::sample_uniform_seeded(1);
        let a = project(&v, &q, [0.0, 0.0]).unwrap();
        let b = project(&v, &q, [1.0, -1.0]).unwrap();
        for y in 1..15 {
            for x in 1..15 {
                assert!((b[y * 16 + x] - a[(y + 1) * 16 + x - 1]).abs() < 1e-12);
            }
        }
        assert!(project(&v, &q, [2.0, 0.0]).is_err());
    }

    #[test]
    fn in_plane_rotation_rotates_the_image() {
        let d = 32;
        let mut spec = PhantomSpec::random(8, 5, SymmetryKind::C1);
        spec.blobs.iter_mut().for_each(|b| b.sigma = b.sigma.map(|s| 2.0 * s));
        let v: Volume<f64> = spec.rasterize(d, 1.0).unwrap();
        let q: Q = crate::so3::sample_uniform_seeded(12);
        let alpha = 0.7f64;
        let rz = Q::from_axis_angle([0.0, 0.0, 1.0], alpha);
        let a = project(&v, &q, [0.0; 2]).unwrap();
        let b = project(&v, &(rz * q), [0.0; 2]).unwrap();
        // b(p) = a(Rz(−α) p), bilinear lookup into a
        let h = (d / 2) as f64;
        let lookup = |x: f64, y: f64| {
            let (x0, y0) = (x.floor(), y.floor());
            let (tx, ty) = (x - x0, y - y0);
            let at = |i: f64, j: f64| {
                if i < 0.0 || j < 0.0 || i >= d as f64 || j >= d as f64 {
                    0.0
                } else {
                    a[j as usize * d + i as usize]
                }
            };
            (1.0 - ty) * ((1.0 - tx) * at(x0, y0) + tx * at(x0 + 1.0, y0))
                + ty * ((1.0 - tx) * at(x0, y0 + 1.0) + tx * at(x0 + 1.0, y0 + 1.0))
        };
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..d {
            for x in 0..d {
                let (u, w) = (x as f64 - h, y as f64 - h);
                let (c, s) = (alpha.cos(), alpha.sin());
                let src = lookup(c * u + s * w + h, -s * u + c * w + h);
                num += (b[y * d + x] - src).powi(2);
                den += b[y * d + x].powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.02, "{}", (num / den).sqrt());
    }
}
