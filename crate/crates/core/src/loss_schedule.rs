//! Orientation losses, the distance-to-regression curriculum and the
//! one-cycle learning-rate / momentum schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{c, cu, Real};
use crate::so3::{geodesic_distance, UnitQuaternion};

/// Curriculum weights for iteration `i` of `l`:
/// `β₁ = √(i/l) / 2`, `β₂ = 1 − √(i/l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumWeights<T> {
    pub beta1: T,
    pub beta2: T,
    pub iteration: usize,
    pub total: usize,
}

impl<T: Real> CurriculumWeights<T> {
    pub fn new(iteration: usize, total: usize) -> Result<Self> {
        if total == 0 || iteration > total {
            return Err(invalid(format!(
                "curriculum iteration {iteration} of {total} out of range"
            )));
        }
        let r = (cu::<T>(iteration) / cu(total)).sqrt();
        Ok(Self {
            beta1: r * c(0.5),
            beta2: T::one() - r,
            iteration,
            total,
        })
    }

    /// Fixed weights, used when the curriculum is switched off.
    pub fn constant(beta1: T, beta2: T) -> Self {
        Self {
            beta1,
            beta2,
            iteration: 0,
            total: 1,
        }
    }
}

/// `d_q(pred, truth)`.
pub fn regression_loss<T: Real>(pred: &UnitQuaternion<T>, truth: &UnitQuaternion<T>) -> Result<T> {
    geodesic_distance(pred, truth)
}

/// `|d_q(pred_i, pred_j) − d_q(truth_i, truth_j)|`.
pub fn distance_loss<T: Real>(
    pred_i: &UnitQuaternion<T>,
    pred_j: &UnitQuaternion<T>,
    truth_i: &UnitQuaternion<T>,
    truth_j: &UnitQuaternion<T>,
) -> Result<T> {
    Ok((geodesic_distance(pred_i, pred_j)? - geodesic_distance(truth_i, truth_j)?).abs())
}

/// Predictions and labels for one training pair.
#[derive(Debug, Clone, Copy)]
pub struct PairSample<T> {
    pub pred_i: UnitQuaternion<T>,
    pub pred_j: UnitQuaternion<T>,
    pub truth_i: UnitQuaternion<T>,
    pub truth_j: UnitQuaternion<T>,
}

/// `β₁ (d(p_i,t_i) + d(p_j,t_j)) + β₂ |d(p_i,p_j) − d(t_i,t_j)|`, averaged
/// over the batch.
pub fn full_loss<T: Real>(batch: &[PairSample<T>], w: &CurriculumWeights<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut total = T::zero();
    for p in batch {
        let reg = regression_loss(&p.pred_i, &p.truth_i)? + regression_loss(&p.pred_j, &p.truth_j)?;
        let dist = distance_loss(&p.pred_i, &p.pred_j, &p.truth_i, &p.truth_j)?;
        total += w.beta1 * reg + w.beta2 * dist;
    }
    Ok(total / cu(batch.len()))
}

/// Geodesic distance and its Riemannian gradient with respect to `a`
/// (tangent to S³ at `a`, norm 2 away from the singular points).
///
/// The tangent direction is formed from `s·b − ⟨a,b⟩ a` directly rather
/// than through `1/√(1−c²)`, so it stays accurate near `d = 0`.
pub fn geodesic_with_grad<T: Real>(a: &UnitQuaternion<T>, b: &UnitQuaternion<T>) -> (T, [T; 4]) {
    let d = a.angle_to(b);
    let dot = a.dot(b);
    let s = if dot < T::zero() { -T::one() } else { T::one() };
    let cabs = dot.abs();
    let av = a.to_array();
    let bv = b.to_array();
    let t: [T; 4] = std::array::from_fn(|k| s * bv[k] - cabs * av[k]);
    let tn = t.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if tn < c(1e-12) {
        return (d, [T::zero(); 4]);
    }
    (d, t.map(|v| -c::<T>(2.0) * v / tn))
}

/// Per-image gradients of [`full_loss`] for a set of images and pairs.
///
/// `preds[k]`, `truths[k]` belong to image `k`; each pair indexes into them.
/// Returns the mean loss and `∂L/∂pred_k` for every image. An image taking
/// part in several pairs accumulates every contribution.
pub fn full_loss_with_grad<T: Real>(
    preds: &[UnitQuaternion<T>],
    truths: &[UnitQuaternion<T>],
    pairs: &[(usize, usize)],
    w: &CurriculumWeights<T>,
) -> Result<(T, Vec<[T; 4]>)> {
    if pairs.is_empty() {
        return Err(invalid("empty batch"));
    }
    if preds.len() != truths.len() {
        return Err(invalid("prediction and label counts differ"));
    }
    let inv = T::one() / cu(pairs.len());
    let mut grads = vec![[T::zero(); 4]; preds.len()];
    let mut total = T::zero();
    let add = |g: &mut [T; 4], v: [T; 4], s: T| {
        for k in 0..4 {
            g[k] += v[k] * s;
        }
    };
    for &(i, j) in pairs {
        if i >= preds.len() || j >= preds.len() {
            return Err(invalid(format!("pair ({i}, {j}) out of range")));
        }
        if w.beta1 != T::zero() {
            let (ri, gi) = geodesic_with_grad(&preds[i], &truths[i]);
            let (rj, gj) = geodesic_with_grad(&preds[j], &truths[j]);
            total += w.beta1 * (ri + rj);
            add(&mut grads[i], gi, w.beta1 * inv);
            add(&mut grads[j], gj, w.beta1 * inv);
        }
        if w.beta2 != T::zero() {
            let (dp, gpi) = geodesic_with_grad(&preds[i], &preds[j]);
            let (_, gpj) = geodesic_with_grad(&preds[j], &preds[i]);
            let dt = truths[i].angle_to(&truths[j]);
            let diff = dp - dt;
            total += w.beta2 * diff.abs();
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            add(&mut grads[i], gpi, w.beta2 * sign * inv);
            add(&mut grads[j], gpj, w.beta2 * sign * inv);
        }
    }
    Ok((total * inv, grads))
}

/// One-cycle schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleConfig {
    pub total_steps: usize,
    pub lr_max: f64,
    pub lr_start: f64,
    pub lr_final: f64,
    pub momentum_high: f64,
    pub momentum_low: f64,
    pub warmup_fraction: f64,
}

impl OneCycleConfig {
    /// Standard defaults around a peak learning rate.
    pub fn new(total_steps: usize, lr_max: f64) -> Self {
        Self {
            total_steps,
            lr_max,
            lr_start: lr_max / 25.0,
            lr_final: lr_max / 1e4,
            momentum_high: 0.95,
            momentum_low: 0.85,
            warmup_fraction: 0.3,
        }
    }

    pub fn peak_step(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }
}

fn cos_interp(from: f64, to: f64, t: f64) -> f64 {
    from + (to - from) * 0.5 * (1.0 - (std::f64::consts::PI * t).cos())
}

/// `(learning rate, momentum)` at `step`.
pub fn one_cycle(step: usize, cfg: &OneCycleConfig) -> Result<(f64, f64)> {
    if step > cfg.total_steps {
        return Err(invalid(format!(
            "step {step} beyond schedule length {}",
            cfg.total_steps
        )));
    }
    if !(0.0..=1.0).contains(&cfg.warmup_fraction) {
        return Err(invalid("warmup_fraction must lie in [0, 1]"));
    }
    let s = step as f64;
    let peak = cfg.peak_step();
    if s <= peak && peak > 0.0 {
        let t = s / peak;
        Ok((
            cos_interp(cfg.lr_start, cfg.lr_max, t),
            cos_interp(cfg.momentum_high, cfg.momentum_low, t),
        ))
    } else {
        let span = cfg.total_steps as f64 - peak;
        let t = if span > 0.0 { (s - peak) / span } else { 1.0 };
        Ok((
            cos_interp(cfg.lr_max, cfg.lr_final, t),
            cos_interp(cfg.momentum_low, cfg.momentum_high, t),
        ))
    }
}

/// One row of the schedule dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub step: usize,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Learning rate, momentum and curriculum weights for every step of a run
/// with `epochs × steps_per_epoch` optimizer steps. The curriculum advances
/// once per epoch.
pub fn schedule_table(
    epochs: usize,
    steps_per_epoch: usize,
    lr_max: f64,
) -> Result<Vec<ScheduleRow>> {
    if epochs == 0 || steps_per_epoch == 0 {
        return Err(invalid("schedule needs at least one epoch and one step"));
    }
    let cfg = OneCycleConfig::new(epochs * steps_per_epoch, lr_max);
    (0..=cfg.total_steps)
        .map(|step| {
            let (lr, momentum) = one_cycle(step, &cfg)?;
            let w = CurriculumWeights::<f64>::new((step / steps_per_epoch).min(epochs), epochs)?;
            Ok(ScheduleRow {
                step,
                lr,
                momentum,
                beta1: w.beta1,
                beta2: w.beta2,
            })
        })
        .collect()
}
