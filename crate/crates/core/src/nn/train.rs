//! Adam with the one-cycle schedule, and the three training styles.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss_schedule::{full_loss_with_grad, one_cycle, CurriculumWeights, OneCycleConfig};
use crate::nn::layers::Ctx;
use crate::nn::model::Model;
use crate::rep_heads::{head_backward, head_forward, HeadOutput};
use crate::sampling::{PairIndexSet, PairScheme};
use crate::scalar::{c, Real};
use crate::simulator::dataset::mix_seed;
use crate::so3::UnitQuaternion;
use crate::sym_eigen::SymEigen4;
use crate::table::fmt_sig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainStyle {
    /// One branch, regression loss only.
    Single,
    /// Two weight-shared branches, distance matching only.
    Siamese,
    /// Two branches with the distance-to-regression curriculum.
    #[default]
    SiameseAux,
}

impl std::str::FromStr for TrainStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "siamese" => Ok(Self::Siamese),
            "siamese_aux" | "siamese-aux" => Ok(Self::SiameseAux),
            other => Err(invalid(format!("unknown training style {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub seed: u64,
    pub pair_scheme: PairScheme,
    /// Fraction of all training pairs kept by the random scheme.
    pub pair_fraction: f64,
    /// Candidate pairs and histogram bins for the stratified scheme.
    pub n_candidates: usize,
    pub n_bins: usize,
    pub curriculum: bool,
    pub style: TrainStyle,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr_max: 1e-3,
            seed: 0,
            pair_scheme: PairScheme::Random,
            pair_fraction: 0.1,
            n_candidates: 100_000,
            n_bins: 8,
            curriculum: true,
            style: TrainStyle::SiameseAux,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.style != TrainStyle::Single && self.batch_size < 2 {
            return Err(invalid("pair-based training needs batch_size >= 2"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.lr_max > 0.0) {
            return Err(invalid("lr_max must be positive"));
        }
        Ok(())
    }

    /// Loss weights in `epoch` (0-based).
    pub fn weights<T: Real>(&self, epoch: usize) -> Result<CurriculumWeights<T>> {
        Ok(match self.style {
            // self-pairs count each regression term twice
            TrainStyle::Single => CurriculumWeights::constant(c(0.5), T::zero()),
            TrainStyle::Siamese => CurriculumWeights::constant(T::zero(), T::one()),
            TrainStyle::SiameseAux if self.curriculum => CurriculumWeights::new(epoch, self.epochs.max(1))?,
            TrainStyle::SiameseAux => CurriculumWeights::constant(c(0.5), T::one()),
        })
    }
}

/// Adam whose first-moment decay follows the schedule's momentum.
pub struct Adam<T> {
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<R: Real>(model: &Model<R>) -> Self {
        let sizes: Vec<usize> = model.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).collect();
        Self {
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update; `l2` adds `2·l2·w` to the gradient of penalized weights.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64, beta1: f64, l2: f64) {
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (c::<T>(beta1), c::<T>(self.beta2), c::<T>(self.eps));
        let step_size = c::<T>(lr / bc1);
        let bc2 = c::<T>(bc2);
        let decay = c::<T>(2.0 * l2);
        let mut slot = 0;
        for layer in &mut model.layers {
            let mask = layer.l2_mask();
            for (k, p) in layer.params_mut().into_iter().enumerate() {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                let g = p.grad.as_ref().expect("parameter gradient buffer");
                let penalize = mask.get(k).copied().unwrap_or(false) && l2 > 0.0;
                for i in 0..p.data.len() {
                    let gi = if penalize { g[i] + decay * p.data[i] } else { g[i] };
                    m[i] = b1 * m[i] + (T::one() - b1) * gi;
                    v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                    p.data[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + eps);
                }
                slot += 1;
            }
            layer.post_update();
        }
    }
}

/// One epoch of training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_med_err: f64,
    pub val_med_err: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<EpochRow>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss", "train_med_err", "val_med_err", "lr"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                fmt_sig(r.train_loss),
                fmt_sig(r.val_loss),
                fmt_sig(r.train_med_err),
                fmt_sig(r.val_med_err),
                fmt_sig(r.lr),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Prepared inputs and labels. `train` and `val` index into both slices.
pub struct TrainData<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub quats: &'a [UnitQuaternion<T>],
    pub train: &'a [usize],
    pub val: &'a [usize],
}

/// Result of one forward/backward evaluation of a batch.
pub struct BatchOutput<T> {
    pub loss: T,
    pub preds: Vec<UnitQuaternion<T>>,
    /// Samples whose head gradient was dropped (degenerate spectrum).
    pub skipped: usize,
}

/// Forward pass over `inputs`, the pair loss, and (with `backward`) the
/// reverse pass accumulating parameter gradients.
pub fn batch_objective<T: Real>(
    model: &mut Model<T>,
    inputs: &[&[T]],
    truths: &[UnitQuaternion<T>],
    pairs: &[(usize, usize)],
    w: &CurriculumWeights<T>,
    ctx: &mut Ctx,
    backward: bool,
) -> Result<BatchOutput<T>> {
    let head = model.config.head;
    let arity = head.arity();
    let raw = model.forward(&model.batch(inputs)?, ctx)?;
    let outs: Vec<HeadOutput<T>> = raw
        .data
        .chunks(arity)
        .map(|r| head_forward(head, r))
        .collect::<Result<_>>()?;
    let preds: Vec<_> = outs.iter().map(|o| o.q).collect();
    let (loss, grads) = full_loss_with_grad(&preds, truths, pairs, w)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    let mut skipped = 0;
    if backward {
        let mut graw = vec![T::zero(); raw.data.len()];
        for (k, g) in grads.iter().enumerate() {
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            match head_backward(head, &raw.data[k * arity..(k + 1) * arity], *g) {
                Ok(gr) => graw[k * arity..(k + 1) * arity].copy_from_slice(&gr),
                Err(Error::DegenerateRepresentation { .. } | Error::DegenerateInput(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        model.backward(&graw)?;
    }
    Ok(BatchOutput { loss, preds, skipped })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Batches of one epoch as (image indices into `data.train`, local pairs).
fn epoch_batches(
    style: TrainStyle,
    n_train: usize,
    pairs: &[(usize, usize)],
    batch: usize,
    cursor: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<(usize, usize)>)> {
    let steps = n_train.div_ceil(batch);
    match style {
        TrainStyle::Single => {
            let mut order: Vec<usize> = (0..n_train).collect();
            order.shuffle(rng);
            order
                .chunks(batch)
                .filter(|ch| ch.len() >= 2)
                .map(|ch| (ch.to_vec(), (0..ch.len()).map(|k| (k, k)).collect()))
                .collect()
        }
        _ => (0..steps)
            .map(|_| {
                let mut images = Vec::new();
                let mut local: HashMap<usize, usize> = HashMap::new();
                let mut ps = Vec::with_capacity(batch / 2);
                for _ in 0..(batch / 2).max(1) {
                    let (i, j) = pairs[*cursor % pairs.len()];
                    *cursor += 1;
                    let mut slot = |g: usize| {
                        *local.entry(g).or_insert_with(|| {
                            images.push(g);
                            images.len() - 1
                        })
                    };
                    let a = slot(i);
                    let b = slot(j);
                    ps.push((a, b));
                }
                (images, ps)
            })
            .collect(),
    }
}

/// Left rotation `g` maximizing `Σ ⟨g·tᵢ, pᵢ⟩²`, the best global alignment of
/// truths onto predictions.
pub fn fit_global_alignment<T: Real>(preds: &[UnitQuaternion<T>], truths: &[UnitQuaternion<T>]) -> UnitQuaternion<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (p, t) in preds.iter().zip(truths) {
        let r = (*p * t.conjugate()).to_array();
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] += r[i] * r[j];
            }
        }
    }
    UnitQuaternion::from_array_unchecked(SymEigen4::new(&m).vectors[3])
}

/// Trains `model` in place. Pairs index into `data.train`; they are
/// required for the two pair-based styles and ignored by `Single`.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &TrainData<T>,
    pairs: Option<&PairIndexSet>,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<History> {
    tcfg.validate()?;
    let mut history = History::default();
    if tcfg.epochs == 0 {
        return Ok(history);
    }
    let n_train = data.train.len();
    if n_train < 2 {
        return Err(invalid("need at least two training images"));
    }
    let mut pair_list: Vec<(usize, usize)> = Vec::new();
    if tcfg.style != TrainStyle::Single {
        let set = pairs.ok_or_else(|| invalid("pair-based training needs a pair set"))?;
        if set.is_empty() {
            return Err(invalid("pair set is empty"));
        }
        if let Some(&(i, j)) = set.pairs.iter().find(|(i, j)| *i >= n_train || *j >= n_train) {
            return Err(invalid(format!("pair ({i}, {j}) outside the {n_train} training images")));
        }
        pair_list = set.pairs.clone();
    }
    let steps_per_epoch = match tcfg.style {
        TrainStyle::Single => n_train / tcfg.batch_size + usize::from(n_train % tcfg.batch_size >= 2),
        _ => n_train.div_ceil(tcfg.batch_size),
    };
    let sched = OneCycleConfig::new(tcfg.epochs * steps_per_epoch, tcfg.lr_max);
    let mut adam = Adam::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 0x7472_6169_6e));
    let mut ctx = Ctx {
        train: true,
        rng: ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 0x64_726f_70)),
    };
    let mut cursor = 0usize;
    let mut step = 0usize;
    let l2 = model.config.l2;
    for epoch in 0..tcfg.epochs {
        let w = tcfg.weights::<T>(epoch)?;
        if !pair_list.is_empty() && cursor % pair_list.len() == 0 {
            pair_list.shuffle(&mut rng);
            cursor = 0;
        }
        let batches = epoch_batches(tcfg.style, n_train, &pair_list, tcfg.batch_size, &mut cursor, &mut rng);
        let (mut loss_sum, mut lr) = (0.0, 0.0);
        let mut errs = Vec::with_capacity(n_train);
        for (images, local_pairs) in &batches {
            let (l, mom) = one_cycle(step, &sched)?;
            lr = l;
            let inputs: Vec<&[T]> = images.iter().map(|&k| data.inputs[data.train[k]].as_slice()).collect();
            let truths: Vec<_> = images.iter().map(|&k| data.quats[data.train[k]]).collect();
            model.zero_grad();
            ctx.train = true;
            let out = batch_objective(model, &inputs, &truths, local_pairs, &w, &mut ctx, true).map_err(|e| {
                Error::NonFinite(format!("epoch {epoch}, step {step}: {e}"))
            })?;
            for layer in &model.layers {
                for p in layer.params() {
                    if let Some(g) = &p.grad {
                        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                            return Err(Error::NonFinite(format!(
                                "epoch {epoch}, step {step}: gradient of {} at index {k}",
                                layer.name()
                            )));
                        }
                    }
                }
            }
            adam.step(model, lr, mom, l2);
            loss_sum += out.loss.to_f64().unwrap_or(f64::NAN);
            errs.extend(out.preds.iter().zip(&truths).map(|(p, t)| p.angle_to(t).to_f64().unwrap_or(f64::NAN)));
            step += 1;
        }
        let (val_loss, val_err) = evaluate_val(model, data, &w, tcfg.style)?;
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_loss,
            train_med_err: median(&mut errs),
            val_med_err: val_err,
            lr,
        };
        on_epoch(&row);
        history.rows.push(row);
    }
    Ok(history)
}

fn evaluate_val<T: Real>(
    model: &mut Model<T>,
    data: &TrainData<T>,
    w: &CurriculumWeights<T>,
    style: TrainStyle,
) -> Result<(f64, f64)> {
    if data.val.len() < 2 {
        return Ok((f64::NAN, f64::NAN));
    }
    let inputs: Vec<Vec<T>> = data.val.iter().map(|&k| data.inputs[k].clone()).collect();
    let truths: Vec<_> = data.val.iter().map(|&k| data.quats[k]).collect();
    let preds: Vec<_> = model.infer(&inputs, 128)?.into_iter().map(|p| p.q).collect();
    let pairs: Vec<(usize, usize)> = match style {
        TrainStyle::Single => (0..preds.len()).map(|k| (k, k)).collect(),
        _ => (0..preds.len() / 2).map(|k| (2 * k, 2 * k + 1)).collect(),
    };
    let (loss, _) = full_loss_with_grad(&preds, &truths, &pairs, w)?;
    let mut errs: Vec<f64> = if style == TrainStyle::Siamese {
        let train_in: Vec<Vec<T>> = data.train.iter().map(|&k| data.inputs[k].clone()).collect();
        let train_truth: Vec<_> = data.train.iter().map(|&k| data.quats[k]).collect();
        let train_pred: Vec<_> = model.infer(&train_in, 128)?.into_iter().map(|p| p.q).collect();
        let g = fit_global_alignment(&train_pred, &train_truth);
        preds.iter().zip(&truths).map(|(p, t)| p.angle_to(&(g * *t)).to_f64().unwrap_or(f64::NAN)).collect()
    } else {
        preds.iter().zip(&truths).map(|(p, t)| p.angle_to(t).to_f64().unwrap_or(f64::NAN)).collect()
    };
    Ok((loss.to_f64().unwrap_or(f64::NAN), median(&mut errs)))
}
