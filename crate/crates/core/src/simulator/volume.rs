//! Cubic density maps and the Gaussian-blob phantom.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{c, cu, Real};
use crate::so3::{SymmetryGroup, SymmetryKind};

/// `d³` voxels indexed `[z][y][x]`, voxel `(d/2, d/2, d/2)` at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub d: usize,
    pub pixel_size: f64,
    pub data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn zeros(d: usize, pixel_size: f64) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(invalid(format!("volume side {d} must be even and positive")));
        }
        if !(pixel_size > 0.0) {
            return Err(invalid(format!("pixel size {pixel_size} must be positive")));
        }
        Ok(Self {
            d,
            pixel_size,
            data: vec![T::zero(); d * d * d],
        })
    }

    pub fn from_data(d: usize, pixel_size: f64, data: Vec<T>) -> Result<Self> {
        let mut v = Self::zeros(d, pixel_size)?;
        if data.len() != d * d * d {
            return Err(invalid(format!("expected {} voxels, got {}", d * d * d, data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(crate::Error::NonFinite("volume contains non-finite voxels".into()));
        }
        v.data = data;
        Ok(v)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.d + y) * self.d + x
    }

    pub fn center(&self) -> T {
        cu(self.d / 2)
    }

    /// Trilinear sample at centered coordinates `p`; zero outside the grid.
    #[inline]
    pub fn sample(&self, p: [T; 3]) -> T {
        let ctr = self.center();
        let n = self.d as isize;
        let gx = p[0] + ctr;
        let gy = p[1] + ctr;
        let gz = p[2] + ctr;
        let (fx, fy, fz) = (gx.floor(), gy.floor(), gz.floor());
        let (x0, y0, z0) = (
            fx.to_isize().unwrap_or(-2),
            fy.to_isize().unwrap_or(-2),
            fz.to_isize().unwrap_or(-2),
        );
        if x0 < -1 || y0 < -1 || z0 < -1 || x0 >= n || y0 >= n || z0 >= n {
            return T::zero();
        }
        let (tx, ty, tz) = (gx - fx, gy - fy, gz - fz);
        let at = |x: isize, y: isize, z: isize| -> T {
            if x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n {
                T::zero()
            } else {
                self.data[self.index(x as usize, y as usize, z as usize)]
            }
        };
        let one = T::one();
        let c00 = at(x0, y0, z0) * (one - tx) + at(x0 + 1, y0, z0) * tx;
        let c10 = at(x0, y0 + 1, z0) * (one - tx) + at(x0 + 1, y0 + 1, z0) * tx;
        let c01 = at(x0, y0, z0 + 1) * (one - tx) + at(x0 + 1, y0, z0 + 1) * tx;
        let c11 = at(x0, y0 + 1, z0 + 1) * (one - tx) + at(x0 + 1, y0 + 1, z0 + 1) * tx;
        let c0 = c00 * (one - ty) + c10 * ty;
        let c1 = c01 * (one - ty) + c11 * ty;
        c0 * (one - tz) + c1 * tz
    }

    pub fn scale_add(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if other.d != self.d {
            return Err(invalid("volume sizes differ"));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o = *o * a + *v * b;
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            d: self.d,
            pixel_size: self.pixel_size,
            data: self.data.iter().map(|v| c(v.to_f64().unwrap())).collect(),
        }
    }
}

/// Axis-aligned anisotropic Gaussian; positions and widths are fractions of
/// the box side so one phantom scales to any grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub blobs: Vec<Blob>,
}

impl PhantomSpec {
    /// Random asymmetric arrangement of `n_blobs` blobs inside a sphere of
    /// radius 0.28 box. A D2 request adds the three 2-fold images of each blob.
    pub fn random(n_blobs: usize, seed: u64, symmetry: SymmetryKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blobs = Vec::new();
        for _ in 0..n_blobs {
            let center = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.28..0.28));
                if p.iter().map(|v| v * v).sum::<f64>() <= 0.28 * 0.28 {
                    break p;
                }
            };
            let sigma = std::array::from_fn(|_| rng.gen_range(0.025..0.07));
            let amplitude = rng.gen_range(0.5..1.5);
            blobs.push(Blob {
                center,
                sigma,
                amplitude,
            });
        }
        if symmetry == SymmetryKind::D2 {
            let group = SymmetryGroup::<f64>::d2();
            let base = std::mem::take(&mut blobs);
            for s in &group.elements {
                let r = s.to_rotation_matrix();
                for b in &base {
                    // axis-aligned sigmas stay axis-aligned under π rotations
                    blobs.push(Blob {
                        center: r.apply(b.center),
                        ..*b
                    });
                }
            }
        }
        Self { blobs }
    }

    /// Analytic density at centered voxel coordinates on a side-`d` grid.
    pub fn density(&self, d: usize, p: [f64; 3]) -> f64 {
        let s = d as f64;
        self.blobs
            .iter()
            .map(|b| {
                let e: f64 = (0..3)
                    .map(|k| {
                        let u = (p[k] - b.center[k] * s) / (b.sigma[k] * s);
                        u * u
                    })
                    .sum();
                b.amplitude * (-0.5 * e).exp()
            })
            .sum()
    }

    pub fn rasterize<T: Real>(&self, d: usize, pixel_size: f64) -> Result<Volume<T>> {
        let mut v = Volume::zeros(d, pixel_size)?;
        let h = (d / 2) as f64;
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    let i = v.index(x, y, z);
                    v.data[i] = c(self.density(d, [x as f64 - h, y as f64 - h, z as f64 - h]));
                }
            }
        }
        Ok(v)
    }
}
