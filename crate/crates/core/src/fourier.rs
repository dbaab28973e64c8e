//! Dense 2D/3D FFTs on square/cubic row-major grids.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::scalar::{cu, Real};

/// Signed frequency index of FFT bin `k` on a grid of size `n`
/// (`k < n/2` positive, the rest negative; `n/2` maps to `-n/2`).
pub fn signed_freq(k: usize, n: usize) -> isize {
    if 2 * k < n {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// FFT plan pair for one axis length.
pub struct Plans<T: Real> {
    pub n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> Plans<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft(n, FftDirection::Forward),
            inverse: planner.plan_fft(n, FftDirection::Inverse),
        }
    }

    fn plan(&self, dir: FftDirection) -> &Arc<dyn Fft<T>> {
        match dir {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        }
    }

    fn transform_2d(&self, data: &mut [Complex<T>], dir: FftDirection) {
        let n = self.n;
        let plan = self.plan(dir);
        plan.process(data);
        let mut col = vec![Complex::new(T::zero(), T::zero()); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            plan.process(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
    }

    /// Unnormalized forward 2D transform of an `n × n` grid.
    pub fn fft2(&self, data: &mut [Complex<T>]) {
        self.transform_2d(data, FftDirection::Forward);
    }

    /// Inverse 2D transform including the `1/n²` factor.
    pub fn ifft2(&self, data: &mut [Complex<T>]) {
        self.transform_2d(data, FftDirection::Inverse);
        let s = T::one() / cu::<T>(self.n * self.n);
        data.iter_mut().for_each(|v| *v = *v * s);
    }

    fn transform_3d(&self, data: &mut [Complex<T>], dir: FftDirection) {
        let n = self.n;
        let plan = self.plan(dir);
        // x lines are contiguous
        plan.process(data);
        let mut line = vec![Complex::new(T::zero(), T::zero()); n];
        for z in 0..n {
            for x in 0..n {
                for y in 0..n {
                    line[y] = data[(z * n + y) * n + x];
                }
                plan.process(&mut line);
                for y in 0..n {
                    data[(z * n + y) * n + x] = line[y];
                }
            }
        }
        for y in 0..n {
            for x in 0..n {
                for z in 0..n {
                    line[z] = data[(z * n + y) * n + x];
                }
                plan.process(&mut line);
                for z in 0..n {
                    data[(z * n + y) * n + x] = line[z];
                }
            }
        }
    }

    /// Unnormalized forward 3D transform of an `n³` grid indexed `[z][y][x]`.
    pub fn fft3(&self, data: &mut [Complex<T>]) {
        self.transform_3d(data, FftDirection::Forward);
    }

    /// Inverse 3D transform including the `1/n³` factor.
    pub fn ifft3(&self, data: &mut [Complex<T>]) {
        self.transform_3d(data, FftDirection::Inverse);
        let s = T::one() / cu::<T>(self.n * self.n * self.n);
        data.iter_mut().for_each(|v| *v = *v * s);
    }
}

pub fn to_complex<T: Real>(v: &[T]) -> Vec<Complex<T>> {
    v.iter().map(|&r| Complex::new(r, T::zero())).collect()
}

/// Multiplies the 2D spectrum of `img` by `filter(fx, fy)` (frequencies in
/// cycles per pixel) and returns the real part of the inverse transform,
/// together with the largest imaginary residual.
pub fn filter2<T: Real>(
    plans: &Plans<T>,
    img: &[T],
    filter: impl Fn(T, T) -> T,
) -> (Vec<T>, T) {
    let n = plans.n;
    let mut spec = to_complex(img);
    plans.fft2(&mut spec);
    let nf = cu::<T>(n);
    for ky in 0..n {
        let fy = T::from_isize(signed_freq(ky, n)).unwrap() / nf;
        for kx in 0..n {
            let fx = T::from_isize(signed_freq(kx, n)).unwrap() / nf;
            let h = filter(fx, fy);
            spec[ky * n + kx] = spec[ky * n + kx] * h;
        }
    }
    plans.ifft2(&mut spec);
    let imag = spec.iter().map(|v| v.im.abs()).fold(T::zero(), T::max);
    (spec.iter().map(|v| v.re).collect(), imag)
}
