//! Direct Fourier reconstruction, Fourier shell correlation, angular error
//! statistics and the uncertainty/error rank correlation report.

use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fourier::{signed_freq, to_complex, Plans};
use crate::scalar::{c, cu, Real};
use crate::simulator::volume::Volume;
use crate::so3::{SymmetryGroup, UnitQuaternion};
use crate::table::{csv_err, fmt_sig};

/// Accumulated weights below this are clamped before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Default FSC threshold.
pub const FSC_THRESHOLD: f64 = 0.143;

/// Partial sums are formed over this many fixed image chunks and added in
/// chunk order, so the result does not depend on the thread count.
const CHUNKS: usize = 8;

/// `(−1)^(x+y)`: moves the origin of a `d`-periodic grid to index `d/2`.
fn checker(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

struct Grid<T> {
    values: Vec<Complex<T>>,
    weights: Vec<T>,
}

impl<T: Real> Grid<T> {
    fn new(d: usize) -> Self {
        Self {
            values: vec![Complex::new(T::zero(), T::zero()); d * d * d],
            weights: vec![T::zero(); d * d * d],
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
    }

    /// Trilinear splat of `v` at fractional frequency `k = (kx, ky, kz)`.
    fn splat(&mut self, d: usize, k: [T; 3], v: Complex<T>) {
        let base = k.map(|x| x.floor());
        let frac = [k[0] - base[0], k[1] - base[1], k[2] - base[2]];
        let idx = base.map(|b| b.to_isize().unwrap_or(0));
        let n = d as isize;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = T::one();
            let mut lin = [0usize; 3];
            for a in 0..3 {
                w *= if o[a] == 1 { frac[a] } else { T::one() - frac[a] };
                lin[a] = (idx[a] + o[a] as isize).rem_euclid(n) as usize;
            }
            if w == T::zero() {
                continue;
            }
            let at = (lin[2] * d + lin[1]) * d + lin[0];
            self.values[at] += v * w;
            self.weights[at] += w;
        }
    }
}

/// Inserts each image's spectrum as a central slice and inverts.
///
/// `shifts` are the translations the images carry (as in the orientation
/// table); they are removed before insertion. Frequencies beyond Nyquist
/// are skipped, and each slice is inserted together with its Friedel mate
/// so the result is real.
pub fn reconstruct<T: Real>(
    images: &[Vec<T>],
    quats: &[UnitQuaternion<T>],
    shifts: &[[f64; 2]],
    d: usize,
    pixel_size: f64,
) -> Result<Volume<T>> {
    if images.is_empty() {
        return Err(invalid("reconstruction needs at least one image"));
    }
    if quats.len() != images.len() || shifts.len() != images.len() {
        return Err(invalid("images, orientations and shifts differ in length"));
    }
    if d < 2 || d % 2 != 0 {
        return Err(invalid(format!("volume side {d} must be even")));
    }
    if let Some(img) = images.iter().find(|i| i.len() != d * d) {
        return Err(invalid(format!("image has {} pixels, expected {}", img.len(), d * d)));
    }
    let plans = Plans::<T>::new(d);
    let nyq2 = (d as f64 / 2.0).powi(2);
    let chunk = images.len().div_ceil(CHUNKS);
    let partial: Vec<Grid<T>> = images
        .par_chunks(chunk)
        .zip(quats.par_chunks(chunk))
        .zip(shifts.par_chunks(chunk))
        .map(|((imgs, qs), ss)| {
            let mut grid = Grid::new(d);
            for ((img, q), s) in imgs.iter().zip(qs).zip(ss) {
                let mut f = to_complex(img);
                plans.fft2(&mut f);
                let r = q.to_rotation_matrix().0;
                for y in 0..d {
                    let my = signed_freq(y, d);
                    for x in 0..d {
                        let mx = signed_freq(x, d);
                        if ((mx * mx + my * my) as f64) > nyq2 {
                            continue;
                        }
                        // origin at d/2, then undo the translation
                        let phase = 2.0 * std::f64::consts::PI * (mx as f64 * s[0] + my as f64 * s[1]) / d as f64;
                        let sign = checker((mx + my).unsigned_abs());
                        let rot = Complex::new(c::<T>(phase.cos() * sign), c::<T>(phase.sin() * sign));
                        let v = f[y * d + x] * rot;
                        // k = Rᵀ (mx, my, 0)
                        let (fx, fy) = (cu::<T>(mx.unsigned_abs()), cu::<T>(my.unsigned_abs()));
                        let (fx, fy) = (if mx < 0 { -fx } else { fx }, if my < 0 { -fy } else { fy });
                        let k = [
                            r[0][0] * fx + r[1][0] * fy,
                            r[0][1] * fx + r[1][1] * fy,
                            r[0][2] * fx + r[1][2] * fy,
                        ];
                        grid.splat(d, k, v);
                        if mx != 0 || my != 0 {
                            grid.splat(d, k.map(|a| -a), v.conj());
                        }
                    }
                }
            }
            grid
        })
        .collect();
    let mut total = Grid::new(d);
    for g in &partial {
        total.add(g);
    }
    let floor = c::<T>(WEIGHT_FLOOR);
    let mut spec: Vec<Complex<T>> = total
        .values
        .iter()
        .zip(&total.weights)
        .map(|(v, w)| *v / w.max(floor))
        .collect();
    for z in 0..d {
        for y in 0..d {
            for x in 0..d {
                let m = signed_freq(x, d) + signed_freq(y, d) + signed_freq(z, d);
                spec[(z * d + y) * d + x] *= c::<T>(checker(m.unsigned_abs()));
            }
        }
    }
    plans.ifft3(&mut spec);
    Volume::from_data(d, pixel_size, spec.iter().map(|z| z.re).collect())
}

/// Correlation per Fourier shell; `radius[s] = s / d` cycles per pixel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FscCurve {
    pub radius: Vec<f64>,
    pub fsc: Vec<f64>,
}

impl FscCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["shell", "radius", "fsc"]).map_err(csv_err)?;
        for (s, (r, f)) in self.radius.iter().zip(&self.fsc).enumerate() {
            w.write_record([s.to_string(), fmt_sig(*r), fmt_sig(*f)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fourier shell correlation over integer-radius shells `0..=d/2`.
pub fn fsc<T: Real>(v1: &Volume<T>, v2: &Volume<T>) -> Result<FscCurve> {
    if v1.d != v2.d || v1.data.len() != v2.data.len() {
        return Err(invalid(format!("volume sides differ: {} vs {}", v1.d, v2.d)));
    }
    let d = v1.d;
    let plans = Plans::<T>::new(d);
    let mut a = to_complex(&v1.data);
    let mut b = to_complex(&v2.data);
    plans.fft3(&mut a);
    plans.fft3(&mut b);
    let n_shells = d / 2 + 1;
    let (mut cross, mut p1, mut p2) = (vec![0.0; n_shells], vec![0.0; n_shells], vec![0.0; n_shells]);
    for z in 0..d {
        for y in 0..d {
            for x in 0..d {
                let (fx, fy, fz) = (signed_freq(x, d), signed_freq(y, d), signed_freq(z, d));
                let r = ((fx * fx + fy * fy + fz * fz) as f64).sqrt().round() as usize;
                if r >= n_shells {
                    continue;
                }
                let k = (z * d + y) * d + x;
                let (za, zb) = (a[k], b[k]);
                let to = |v: T| v.to_f64().unwrap_or(f64::NAN);
                cross[r] += to(za.re) * to(zb.re) + to(za.im) * to(zb.im);
                p1[r] += to(za.norm_sqr());
                p2[r] += to(zb.norm_sqr());
            }
        }
    }
    let fsc = (0..n_shells)
        .map(|s| {
            let den = (p1[s] * p2[s]).sqrt();
            if den > 0.0 {
                (cross[s] / den).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(FscCurve {
        radius: (0..n_shells).map(|s| s as f64 / d as f64).collect(),
        fsc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolution {
    pub angstrom: f64,
    /// Crossing frequency in cycles per pixel.
    pub frequency: f64,
    /// The curve never fell below the threshold; the value is the Nyquist limit.
    pub limited: bool,
}

/// First downward crossing of `threshold` after shell 0, linearly
/// interpolated between shells.
pub fn resolution_at(curve: &FscCurve, threshold: f64, pixel_size: f64) -> Result<Resolution> {
    if curve.fsc.is_empty() || curve.fsc.len() != curve.radius.len() {
        return Err(invalid("empty or inconsistent FSC curve"));
    }
    for s in 1..curve.fsc.len() {
        let (f0, f1) = (curve.fsc[s - 1], curve.fsc[s]);
        if f1 < threshold {
            let (r0, r1) = (curve.radius[s - 1], curve.radius[s]);
            let t = if f0 > f1 { ((f0 - threshold) / (f0 - f1)).clamp(0.0, 1.0) } else { 0.0 };
            let r = r0 + t * (r1 - r0);
            return Ok(Resolution {
                angstrom: if r > 0.0 { pixel_size / r } else { f64::INFINITY },
                frequency: r,
                limited: false,
            });
        }
    }
    Ok(Resolution {
        angstrom: 2.0 * pixel_size,
        frequency: 0.5,
        limited: true,
    })
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Symmetry-aware angular error of every prediction.
pub fn angular_errors<T: Real>(
    preds: &[UnitQuaternion<T>],
    truths: &[UnitQuaternion<T>],
    group: &SymmetryGroup<T>,
) -> Result<Vec<f64>> {
    if preds.len() != truths.len() {
        return Err(invalid("prediction and label counts differ"));
    }
    Ok(preds
        .iter()
        .zip(truths)
        .map(|(p, t)| group.distance(p, t).to_f64().unwrap_or(f64::NAN))
        .collect())
}

pub fn median_angular_error<T: Real>(
    preds: &[UnitQuaternion<T>],
    truths: &[UnitQuaternion<T>],
    group: &SymmetryGroup<T>,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(invalid("no predictions"));
    }
    Ok(median(angular_errors(preds, truths, group)?))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub error: f64,
    pub lambda_max: f64,
    pub trace_stat: f64,
    /// Rank of the error scaled to `[0, 1]`.
    pub error_quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub spearman_lambda_max: Option<f64>,
    pub spearman_trace: Option<f64>,
    pub rows: Vec<ScatterRow>,
}

impl UncertaintyReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["error", "lambda_max", "trace_stat", "error_quantile"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                fmt_sig(r.error),
                fmt_sig(r.lambda_max),
                fmt_sig(r.trace_stat),
                fmt_sig(r.error_quantile),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn uncertainty_report(errors: &[f64], lambda_max: &[f64], trace_stat: &[f64]) -> Result<UncertaintyReport> {
    let n = errors.len();
    if n < 10 {
        return Err(invalid(format!("uncertainty report needs at least 10 samples, got {n}")));
    }
    if lambda_max.len() != n || trace_stat.len() != n {
        return Err(invalid("errors and statistics differ in length"));
    }
    let r = ranks(errors);
    let rows = (0..n)
        .map(|k| ScatterRow {
            error: errors[k],
            lambda_max: lambda_max[k],
            trace_stat: trace_stat[k],
            error_quantile: (r[k] - 1.0) / (n - 1) as f64,
        })
        .collect();
    Ok(UncertaintyReport {
        spearman_lambda_max: spearman(errors, lambda_max),
        spearman_trace: spearman(errors, trace_stat),
        rows,
    })
}
