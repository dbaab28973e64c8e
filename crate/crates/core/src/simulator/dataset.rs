//! End-to-end synthesis of a labelled projection stack.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fourier::Plans;
use crate::scalar::{c, Real};
use crate::simulator::image::{add_noise_to_snr, ctf_apply, CtfParams};
use crate::simulator::mrc::MrcData;
use crate::simulator::projection::{grid_orientations, project};
use crate::simulator::volume::Volume;
use crate::so3::{SymmetryGroup, SymmetryKind, UnitQuaternion};
use crate::table::{read_orientations, write_orientations, OrientationRecord, Split};

/// Fixed optics with a uniform defocus range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfRange {
    pub defocus_min: f64,
    pub defocus_max: f64,
    pub spherical_aberration: f64,
    pub voltage: f64,
    pub amplitude_contrast: f64,
    pub phase_flip: bool,
}

impl Default for CtfRange {
    fn default() -> Self {
        Self {
            defocus_min: 5000.0,
            defocus_max: 25000.0,
            spherical_aberration: 2.7,
            voltage: 300.0,
            amplitude_contrast: 0.1,
            phase_flip: false,
        }
    }
}

impl CtfRange {
    fn draw(&self, rng: &mut ChaCha8Rng) -> CtfParams {
        let defocus = if self.defocus_max > self.defocus_min {
            rng.gen_range(self.defocus_min..self.defocus_max)
        } else {
            self.defocus_min
        };
        CtfParams {
            defocus,
            spherical_aberration: self.spherical_aberration,
            voltage: self.voltage,
            amplitude_contrast: self.amplitude_contrast,
            phase_flip: self.phase_flip,
        }
    }
}

/// Synthesis parameters. `snr = None` means noise-free images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_images: usize,
    pub snr: Option<f64>,
    /// Maximum shift per axis, in pixels.
    pub shift_max: f64,
    pub ctf: Option<CtfRange>,
    pub symmetry: SymmetryKind,
    pub split_fractions: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_images: 2000,
            snr: Some(0.1),
            shift_max: 0.03 * 48.0,
            ctf: Some(CtfRange::default()),
            symmetry: SymmetryKind::C1,
            split_fractions: [0.5, 0.17, 0.33],
        }
    }
}

/// Images (row-major `d × d` each) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack<T> {
    pub d: usize,
    pub pixel_size: f64,
    pub images: Vec<Vec<T>>,
    pub records: Vec<OrientationRecord>,
}

impl<T: Real> ProjectionStack<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Indices of the images in `split`, in stack order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Some(split))
            .map(|(k, _)| k)
            .collect()
    }

    pub fn quats(&self, idx: &[usize]) -> Vec<UnitQuaternion<T>> {
        idx.iter()
            .map(|&k| {
                let q = self.records[k].q.to_array();
                UnitQuaternion::from_array_unchecked(q.map(c))
            })
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            d: self.d,
            pixel_size: self.pixel_size,
            images: idx.iter().map(|&k| self.images[k].clone()).collect(),
            records: idx.iter().map(|&k| self.records[k]).collect(),
        }
    }

    pub fn to_mrc(&self) -> MrcData {
        let flat: Vec<T> = self.images.iter().flatten().copied().collect();
        MrcData::from_real(self.d, self.d, self.images.len(), self.pixel_size, true, &flat)
    }

    /// Writes `stack.mrc` and `orient.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.to_mrc().write_path(&dir.join("stack.mrc"))?;
        let f = std::fs::File::create(dir.join("orient.csv"))?;
        write_orientations(std::io::BufWriter::new(f), &self.records)
    }

    pub fn read(stack: &Path, orient: &Path) -> Result<Self> {
        let m = MrcData::read_path(stack)?;
        if m.nx != m.ny {
            return Err(Error::Format("stack images are not square".into()));
        }
        let records = read_orientations(std::fs::File::open(orient)?)?;
        if records.len() != m.nz {
            return Err(Error::Format(format!(
                "{} orientation rows for {} images",
                records.len(),
                m.nz
            )));
        }
        Ok(Self {
            d: m.nx,
            pixel_size: m.pixel_size,
            images: (0..m.nz).map(|k| m.section(k)).collect(),
            records,
        })
    }
}

/// SplitMix64 finalizer, used to derive independent per-image seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exactly `n` grid orientations, a seeded subset of the smallest grid that
/// has at least `n` points.
pub fn dataset_orientations<T: Real>(n: usize, group: &SymmetryGroup<T>, seed: u64) -> Vec<UnitQuaternion<T>> {
    let mut target = n;
    let grid = loop {
        let g = grid_orientations(target, group);
        if g.len() >= n {
            break g;
        }
        target += (n - g.len()).max(1);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let mut pick = index::sample(&mut rng, grid.len(), n).into_vec();
    pick.sort_unstable();
    pick.into_iter().map(|k| grid[k]).collect()
}

/// Train/val/test labels: a seeded permutation cut at the rounded fractions.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(invalid("split fractions must be non-negative and sum to 1"));
    }
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX - 1)));
    let mut out = vec![Split::Test; n];
    for (rank, &k) in order.iter().enumerate() {
        out[k] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// project → CTF → noise for every grid orientation, with uniform shifts and
/// defocus. Each image depends only on `(seed, index)`.
pub fn generate_dataset<T: Real>(volume: &Volume<T>, cfg: &SimConfig, seed: u64) -> Result<ProjectionStack<T>> {
    if cfg.n_images == 0 {
        return Err(invalid("n_images must be positive"));
    }
    let d = volume.d;
    if !(cfg.shift_max >= 0.0 && cfg.shift_max < d as f64 / 8.0) {
        return Err(invalid(format!("shift_max {} must lie in [0, D/8)", cfg.shift_max)));
    }
    let group = SymmetryGroup::<T>::new(cfg.symmetry);
    let quats = dataset_orientations(cfg.n_images, &group, seed);
    let splits = assign_splits(cfg.n_images, cfg.split_fractions, seed)?;
    let plans = Plans::<T>::new(d);
    let snr = cfg.snr.unwrap_or(f64::INFINITY);
    let results: Vec<Result<(Vec<T>, OrientationRecord)>> = (0..cfg.n_images)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
            let shift = if cfg.shift_max > 0.0 {
                [
                    rng.gen_range(-cfg.shift_max..=cfg.shift_max),
                    rng.gen_range(-cfg.shift_max..=cfg.shift_max),
                ]
            } else {
                [0.0, 0.0]
            };
            let ctf = cfg.ctf.map(|r| r.draw(&mut rng));
            let noise_seed: u64 = rng.gen();
            let q = quats[k];
            let mut img = project(volume, &q, [c(shift[0]), c(shift[1])])?;
            if let Some(ctf) = &ctf {
                img = ctf_apply(&plans, &img, volume.pixel_size, ctf)?;
            }
            let (img, _) = add_noise_to_snr(&img, d, snr, noise_seed)?;
            let qa = q.to_array().map(|v| v.to_f64().unwrap());
            let mut rec = OrientationRecord::new(k, UnitQuaternion::from_array_unchecked(qa), shift);
            rec.defocus = Some(ctf.map_or(0.0, |c| c.defocus));
            rec.snr_target = Some(snr);
            rec.split = Some(splits[k]);
            Ok((img, rec))
        })
        .collect();
    let mut images = Vec::with_capacity(cfg.n_images);
    let mut records = Vec::with_capacity(cfg.n_images);
    for r in results {
        let (img, rec) = r?;
        images.push(img);
        records.push(rec);
    }
    Ok(ProjectionStack {
        d,
        pixel_size: volume.pixel_size,
        images,
        records,
    })
}
