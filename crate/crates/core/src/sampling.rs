//! Training-pair selection: uniform subsampling of all image pairs, and
//! stratified sampling that flattens the pairwise-distance histogram.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::so3::{SymmetryGroup, SymmetryKind, UnitQuaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScheme {
    Random,
    Stratified,
}

impl std::str::FromStr for PairScheme {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "stratified" => Ok(Self::Stratified),
            other => Err(invalid(format!("unknown pair scheme {other}"))),
        }
    }
}

/// Sorted, duplicate-free pairs `(i, j)` with `i < j`. `bins[k]` is the
/// distance bin of `pairs[k]` when the set was stratified.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndexSet {
    pub pairs: Vec<(usize, usize)>,
    pub bins: Option<Vec<usize>>,
    pub seed: u64,
    pub scheme: PairScheme,
}

impl PairIndexSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes `i,j,distance_bin`; the bin column is empty for random sets.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "distance_bin"]).map_err(csv_err)?;
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let bin = self.bins.as_ref().map(|b| b[k].to_string()).unwrap_or_default();
            w.write_record([i.to_string(), j.to_string(), bin]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Format(e.to_string())
}

fn total_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Inverse of the row-major enumeration of `{(i, j) : i < j < n}`.
fn decode_pair(k: usize, n: usize) -> (usize, usize) {
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as usize;
    i = i.min(n - 2);
    while i > 0 && offset(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && offset(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - offset(i)))
}

fn sample_distinct_pairs(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(invalid(format!("need at least two images, got {n}")));
    }
    let total = total_pairs(n);
    if count > total {
        return Err(invalid(format!("{count} pairs requested but only {total} exist")));
    }
    let mut pairs: Vec<_> = index::sample(rng, total, count)
        .into_iter()
        .map(|k| decode_pair(k, n))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// `⌈fraction · n(n−1)/2⌉` distinct pairs drawn uniformly without replacement.
pub fn random_pairs(n_images: usize, fraction: f64, seed: u64) -> Result<PairIndexSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("pair fraction {fraction} not in (0, 1]")));
    }
    let total = total_pairs(n_images);
    let count = ((fraction * total as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PairIndexSet {
        pairs: sample_distinct_pairs(n_images, count.min(total), &mut rng)?,
        bins: None,
        seed,
        scheme: PairScheme::Random,
    })
}

/// Result of stratification together with the bins that had no candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratified {
    pub set: PairIndexSet,
    pub per_bin: usize,
    pub empty_bins: Vec<usize>,
    /// Upper edge of the histogram range (`π` for C1).
    pub upper: f64,
}

/// Bin of distance `d` for `n_bins` equal-width bins over `[0, upper]`.
pub fn distance_bin(d: f64, upper: f64, n_bins: usize) -> usize {
    if upper <= 0.0 {
        return 0;
    }
    ((d / upper * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Samples `n_candidates` pairs, bins their distances and keeps the same
/// number `m` of pairs from every occupied bin, `m` being the smallest
/// occupied-bin count. Unoccupied bins are reported and ignored.
///
/// Distances are symmetry-reduced under `group`; for a non-trivial group the
/// bin range is truncated to the largest observed distance.
pub fn stratified_pairs<T: Real>(
    quats: &[UnitQuaternion<T>],
    n_candidates: usize,
    n_bins: usize,
    seed: u64,
    group: &SymmetryGroup<T>,
) -> Result<Stratified> {
    if n_bins == 0 {
        return Err(invalid("n_bins must be at least 1"));
    }
    if n_candidates == 0 {
        return Err(invalid("n_candidates must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = sample_distinct_pairs(quats.len(), n_candidates, &mut rng)?;
    let dists: Vec<f64> = candidates
        .iter()
        .map(|&(i, j)| group.distance(&quats[i], &quats[j]).to_f64().unwrap_or(f64::NAN))
        .collect();
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(invalid("non-finite pair distance"));
    }
    let upper = match group.kind {
        SymmetryKind::C1 => std::f64::consts::PI,
        _ => dists.iter().cloned().fold(0.0, f64::max),
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (k, &d) in dists.iter().enumerate() {
        members[distance_bin(d, upper, n_bins)].push(k);
    }
    let empty_bins: Vec<usize> = (0..n_bins).filter(|&b| members[b].is_empty()).collect();
    let per_bin = members.iter().map(Vec::len).filter(|&c| c > 0).min().unwrap_or(0);
    let mut kept: Vec<((usize, usize), usize)> = Vec::with_capacity(per_bin * n_bins);
    for (b, list) in members.iter_mut().enumerate() {
        list.shuffle(&mut rng);
        kept.extend(list.iter().take(per_bin).map(|&k| (candidates[k], b)));
    }
    kept.sort_unstable();
    Ok(Stratified {
        set: PairIndexSet {
            pairs: kept.iter().map(|p| p.0).collect(),
            bins: Some(kept.iter().map(|p| p.1).collect()),
            seed,
            scheme: PairScheme::Stratified,
        },
        per_bin,
        empty_bins,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_uniform;
    use std::collections::HashSet;

    #[test]
    fn decode_covers_every_pair_once() {
        for n in 2..40 {
            let all: Vec<_> = (0..total_pairs(n)).map(|k| decode_pair(k, n)).collect();
            let expected: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
            assert_eq!(all, expected);
        }
        let n = 200_000;
        assert_eq!(decode_pair(total_pairs(n) - 1, n), (n - 2, n - 1));
        assert_eq!(decode_pair(n - 1, n), (1, 2));
    }

    #[test]
    fn random_pairs_examples() {
        let all = random_pairs(4, 1.0, 1).unwrap();
        assert_eq!(all.pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let s = random_pairs(1000, 0.01, 3).unwrap();
        assert_eq!(s.len(), 4995);
        assert_eq!(s.pairs.iter().collect::<HashSet<_>>().len(), 4995);
        assert!(s.pairs.iter().all(|&(i, j)| i < j && j < 1000));
        assert_eq!(s, random_pairs(1000, 0.01, 3).unwrap());
        assert_ne!(s.pairs, random_pairs(1000, 0.01, 4).unwrap().pairs);
        assert!(random_pairs(1, 0.5, 0).is_err());
        assert!(random_pairs(10, 0.0, 0).is_err());
        assert!(random_pairs(10, 1.5, 0).is_err());
    }

    #[test]
    fn random_pairs_are_roughly_uniform_over_first_index() {
        // oracle: P(i) = (n-1-i) / (n(n-1)/2)
        let n = 50;
        let s = random_pairs(n, 0.5, 9).unwrap();
        let mut counts = vec![0usize; n];
        s.pairs.iter().for_each(|&(i, _)| counts[i] += 1);
        let m = s.len() as f64;
        let early: usize = counts[..10].iter().sum();
        let p_early: f64 = (0..10).map(|i| (n - 1 - i) as f64).sum::<f64>() / total_pairs(n) as f64;
        let sd = (m * p_early * (1.0 - p_early)).sqrt();
        assert!((early as f64 - m * p_early).abs() < 5.0 * sd);
    }

    #[test]
    fn stratified_histogram_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let quats: Vec<UnitQuaternion<f64>> = (0..1000).map(|_| sample_uniform(&mut rng)).collect();
        let group = SymmetryGroup::c1();
        let out = stratified_pairs(&quats, 100_000, 8, 5, &group).unwrap();
        assert!(out.empty_bins.is_empty());
        assert!(out.per_bin > 0);
        // recount from scratch with the same edges
        let mut counts = [0usize; 8];
        for &(i, j) in &out.set.pairs {
            assert!(i < j);
            let d = quats[i].angle_to(&quats[j]);
            counts[distance_bin(d, std::f64::consts::PI, 8)] += 1;
        }
        assert!(counts.iter().all(|&c| c == out.per_bin), "{counts:?}");
        assert_eq!(out.set.pairs.iter().collect::<HashSet<_>>().len(), out.set.len());
        assert_eq!(out.set, stratified_pairs(&quats, 100_000, 8, 5, &group).unwrap().set);
    }

    #[test]
    fn identical_quaternions_fall_in_one_bin() {
        let quats = vec![UnitQuaternion::<f64>::identity(); 30];
        let out = stratified_pairs(&quats, 100, 8, 0, &SymmetryGroup::c1()).unwrap();
        assert_eq!(out.per_bin, 100);
        assert_eq!(out.empty_bins, (1..8).collect::<Vec<_>>());
        assert!(out.set.bins.as_ref().unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn symmetric_group_truncates_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let quats: Vec<UnitQuaternion<f64>> = (0..300).map(|_| sample_uniform(&mut rng)).collect();
        let out = stratified_pairs(&quats, 20_000, 8, 1, &SymmetryGroup::d2()).unwrap();
        assert!(out.upper < std::f64::consts::PI);
        let bins = out.set.bins.unwrap();
        for b in 0..8 {
            let c = bins.iter().filter(|&&x| x == b).count();
            assert!(c == out.per_bin || (c == 0 && out.empty_bins.contains(&b)));
        }
    }

    #[test]
    fn csv_layout() {
        let s = random_pairs(3, 1.0, 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,distance_bin\n0,1,\n0,2,\n1,2,\n");
    }

    #[test]
    fn rejects_bad_arguments() {
        let quats = vec![UnitQuaternion::<f64>::identity(); 5];
        let g = SymmetryGroup::c1();
        assert!(stratified_pairs(&quats, 11, 8, 0, &g).is_err());
        assert!(stratified_pairs(&quats, 5, 0, 0, &g).is_err());
    }
}
