//! Train-and-predict glue shared by the command line and the acceptance suite.

use crate::error::Result;
use crate::nn::train::{fit_global_alignment, EpochRow};
use crate::nn::{build_encoder, prepare_inputs, train, EncoderConfig, History, Model, Prediction, TrainConfig, TrainData, TrainStyle};
use crate::recon_eval::median_angular_error;
use crate::sampling::{random_pairs, stratified_pairs, PairIndexSet, PairScheme};
use crate::scalar::Real;
use crate::simulator::dataset::mix_seed;
use crate::simulator::ProjectionStack;
use crate::so3::{SymmetryGroup, SymmetryKind};
use crate::table::Split;

pub const INFER_BATCH: usize = 128;

pub struct Fitted<T: Real> {
    pub model: Model<T>,
    pub history: History,
    /// `None` for single-branch training.
    pub pairs: Option<PairIndexSet>,
}

/// Pairs over the training images (local indices), drawn with the configured scheme.
pub fn training_pairs<T: Real>(
    stack: &ProjectionStack<T>,
    tcfg: &TrainConfig,
    symmetry: SymmetryKind,
) -> Result<PairIndexSet> {
    let train_idx = stack.split_indices(Split::Train);
    let seed = mix_seed(tcfg.seed, 0x7061_6972);
    match tcfg.pair_scheme {
        PairScheme::Random => random_pairs(train_idx.len(), tcfg.pair_fraction, seed),
        PairScheme::Stratified => {
            let quats = stack.quats(&train_idx);
            Ok(stratified_pairs(&quats, tcfg.n_candidates, tcfg.n_bins, seed, &SymmetryGroup::new(symmetry))?.set)
        }
    }
}

/// Builds an encoder seeded from `tcfg.seed` and trains it on the stack's
/// training split, validating on its validation split.
pub fn fit<T: Real>(
    stack: &ProjectionStack<T>,
    enc: &EncoderConfig,
    tcfg: &TrainConfig,
    symmetry: SymmetryKind,
    on_epoch: impl FnMut(&EpochRow),
) -> Result<Fitted<T>> {
    let inputs = prepare_inputs(&stack.images, enc)?;
    let quats = stack.quats(&(0..stack.len()).collect::<Vec<_>>());
    let train_idx = stack.split_indices(Split::Train);
    let val_idx = stack.split_indices(Split::Val);
    let pairs = match tcfg.style {
        TrainStyle::Single => None,
        _ => Some(training_pairs(stack, tcfg, symmetry)?),
    };
    let mut model = build_encoder::<T>(enc, mix_seed(tcfg.seed, 0x6d6f_6465_6c))?;
    let data = TrainData {
        inputs: &inputs,
        quats: &quats,
        train: &train_idx,
        val: &val_idx,
    };
    let history = train(&mut model, &data, pairs.as_ref(), tcfg, on_epoch)?;
    Ok(Fitted { model, history, pairs })
}

pub fn predict<T: Real>(model: &mut Model<T>, stack: &ProjectionStack<T>) -> Result<Vec<Prediction<T>>> {
    let inputs = prepare_inputs(&stack.images, &model.config)?;
    model.infer(&inputs, INFER_BATCH)
}

/// Median angular error of `preds` against the stack labels, per split.
/// With `align`, predictions are first mapped through the global rotation
/// fitted on the training split (distance-only training fixes the frame
/// only up to such a rotation).
pub fn split_medians<T: Real>(
    preds: &[Prediction<T>],
    stack: &ProjectionStack<T>,
    symmetry: SymmetryKind,
    align: bool,
) -> Result<Vec<(Split, f64)>> {
    let group = SymmetryGroup::new(symmetry);
    let mut preds: Vec<_> = preds.iter().map(|p| p.q).collect();
    if align {
        let idx = stack.split_indices(Split::Train);
        let p: Vec<_> = idx.iter().map(|&k| preds[k]).collect();
        // fitted g satisfies p ≈ g·t, so g⁻¹·p lands in the label frame
        let g = fit_global_alignment(&p, &stack.quats(&idx)).conjugate();
        preds.iter_mut().for_each(|q| *q = g * *q);
    }
    let mut out = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let idx = stack.split_indices(split);
        if idx.is_empty() {
            continue;
        }
        let p: Vec<_> = idx.iter().map(|&k| preds[k]).collect();
        out.push((split, median_angular_error(&p, &stack.quats(&idx), &group)?));
    }
    Ok(out)
}
