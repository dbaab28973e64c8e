//! Central-difference checks of every layer and of a tiny end-to-end network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::loss_schedule::CurriculumWeights;
use crate::nn::layers::{BatchNorm, Conv2d, Ctx, Dense, Dropout, Gem, GlobalPool, Layer, MaxPool2, PRelu, Relu};
use crate::nn::model::{build_encoder, Activation, ConvBlock, EncoderConfig, Pooling};
use crate::nn::tensor::Tensor;
use crate::nn::train::batch_objective;
use crate::rep_heads::{qcqp_backward, qcqp_forward, HeadKind};
use crate::simulator::image::BlurMode;
use crate::so3::{sample_uniform, UnitQuaternion};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
pub const QCQP_TOLERANCE: f64 = 1e-5;
/// Minimum eigengap for a QCQP probe to count as well separated.
pub const QCQP_MIN_GAP: f64 = 0.05;

const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = inf(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = inf(&mut analytic.iter().copied()).max(inf(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn ctx(train: bool) -> Ctx {
    Ctx {
        train,
        rng: ChaCha8Rng::seed_from_u64(99),
    }
}

/// Checks input and parameter gradients of `layer` on a random input of
/// shape `shape`, with the scalar objective `Σ wᵢ yᵢ` for fixed random `w`.
/// Every forward reuses the same dropout stream.
pub fn check_layer(layer: &mut dyn Layer<f64>, shape: &[usize], positive: bool, train: bool, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.gen_range(-1.0..1.0);
            if positive {
                v * 0.5 + 1.0
            } else {
                v
            }
        })
        .collect();
    let x = Tensor::new(shape.to_vec(), x)?;
    let y = layer.forward(&x, &mut ctx(train))?;
    let w: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&w)?;
    let mut analytic = dx;
    for p in layer.params() {
        analytic.extend_from_slice(p.grad.as_ref().expect("parameter gradient buffer"));
    }
    let objective = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = layer.forward(x, &mut ctx(train))?;
        Ok(y.data.iter().zip(&w).map(|(a, b)| a * b).sum())
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xp = x.clone();
    for k in 0..n {
        let v = xp.data[k];
        xp.data[k] = v + STEP;
        let f1 = objective(layer, &xp)?;
        xp.data[k] = v - STEP;
        let f2 = objective(layer, &xp)?;
        xp.data[k] = v;
        numeric.push((f1 - f2) / (2.0 * STEP));
    }
    let n_params = layer.params().len();
    for pi in 0..n_params {
        let len = layer.params()[pi].len();
        for k in 0..len {
            let v = layer.params()[pi].data[k];
            layer.params_mut()[pi].data[k] = v + STEP;
            let f1 = objective(layer, &x)?;
            layer.params_mut()[pi].data[k] = v - STEP;
            let f2 = objective(layer, &x)?;
            layer.params_mut()[pi].data[k] = v;
            numeric.push((f1 - f2) / (2.0 * STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

fn he(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let s = (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

/// Every layer type on small random inputs, in 64-bit arithmetic.
pub fn check_all_layers(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &str, err: f64| {
        out.push(GradCheck {
            name: name.into(),
            max_rel_error: err,
            tolerance: LAYER_TOLERANCE,
        })
    };
    let mut conv = Conv2d::new(2, 3, 3, he(&mut rng, 54, 18), true)?;
    conv.bias.as_mut().unwrap().data = he(&mut rng, 3, 3);
    record("conv3x3", check_layer(&mut conv, &[2, 2, 5, 4], false, true, seed)?);
    let mut conv5 = Conv2d::new(1, 2, 5, he(&mut rng, 50, 25), false)?;
    record("conv5x5", check_layer(&mut conv5, &[2, 1, 6, 6], false, true, seed + 1)?);
    let mut bn = BatchNorm::new(3);
    bn.gamma.data = vec![1.3, 0.7, -0.4];
    bn.beta.data = vec![0.1, -0.2, 0.3];
    record("batchnorm_train", check_layer(&mut bn, &[3, 3, 2, 2], false, true, seed + 2)?);
    bn.running_mean = vec![0.2, -0.1, 0.05];
    bn.running_var = vec![0.8, 1.5, 0.6];
    record("batchnorm_eval", check_layer(&mut bn, &[2, 3, 2, 2], false, false, seed + 3)?);
    record("prelu", check_layer(&mut PRelu::new(3, 0.25), &[2, 3, 3, 3], false, true, seed + 4)?);
    record("relu", check_layer(&mut Relu::new(), &[2, 2, 3, 3], false, true, seed + 5)?);
    record("maxpool2x2", check_layer(&mut MaxPool2::new(), &[2, 2, 5, 4], false, true, seed + 6)?);
    record("dropout", check_layer(&mut Dropout::new(0.3)?, &[2, 2, 3, 3], false, true, seed + 7)?);
    record("gem", check_layer(&mut Gem::new(3.0)?, &[2, 3, 3, 3], true, true, seed + 8)?);
    record("global_max", check_layer(&mut GlobalPool::max(), &[2, 3, 3, 3], false, true, seed + 9)?);
    record("global_max+avg", check_layer(&mut GlobalPool::max_plus_avg(), &[2, 3, 3, 3], false, true, seed + 10)?);
    let mut dense = Dense::new(5, 4, he(&mut rng, 20, 5))?;
    dense.bias.data = he(&mut rng, 4, 4);
    record("dense", check_layer(&mut dense, &[3, 5], false, true, seed + 11)?);
    Ok(out)
}

/// Tiny encoder used by the end-to-end probe: two convolutions on
/// 16-pixel inputs with the QCQP head.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        input_side: 16,
        blur: BlurMode::LowPass,
        n_filters: 1,
        blocks: vec![
            ConvBlock {
                convs: vec![(3, 4)],
                pool: true,
            },
            ConvBlock {
                convs: vec![(3, 6)],
                pool: true,
            },
        ],
        pooling: Pooling::Gem { p_init: 3.0 },
        activation: Activation::PRelu { alpha: 0.25 },
        head: HeadKind::Qcqp,
        dropout: 0.3,
        l2: 0.0,
        batch_norm: true,
    }
}

/// Full-network probe: analytic gradients of the pair loss against central
/// differences on `n_probes` randomly chosen parameters.
pub fn check_network(seed: u64, n_probes: usize) -> Result<GradCheck> {
    let cfg = tiny_config();
    let mut model = build_encoder::<f64>(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let per = cfg.in_channels() * 16 * 16;
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..per).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let truths: Vec<UnitQuaternion<f64>> = (0..4).map(|_| sample_uniform(&mut rng)).collect();
    let pairs = [(0, 1), (2, 3), (0, 3)];
    let w = CurriculumWeights::new(1, 3)?;
    model.zero_grad();
    batch_objective(&mut model, &refs, &truths, &pairs, &w, &mut ctx(true), true)?;
    // (layer, param, index)
    let slots: Vec<(usize, usize, usize)> = model
        .layers
        .iter()
        .enumerate()
        .flat_map(|(li, l)| {
            l.params()
                .into_iter()
                .enumerate()
                .flat_map(move |(pi, p)| (0..p.len()).map(move |k| (li, pi, k)))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..n_probes {
        let (li, pi, k) = slots[rng.gen_range(0..slots.len())];
        analytic.push(model.layers[li].params()[pi].grad.as_ref().expect("parameter gradient buffer")[k]);
        let v = model.layers[li].params()[pi].data[k];
        let eval = |model: &mut crate::nn::Model<f64>, x: f64| -> Result<f64> {
            model.layers[li].params_mut()[pi].data[k] = x;
            Ok(batch_objective(model, &refs, &truths, &pairs, &w, &mut ctx(true), false)?.loss)
        };
        let f1 = eval(&mut model, v + STEP)?;
        let f2 = eval(&mut model, v - STEP)?;
        eval(&mut model, v)?;
        numeric.push((f1 - f2) / (2.0 * STEP));
    }
    Ok(GradCheck {
        name: "network".into(),
        max_rel_error: relative_error(&analytic, &numeric),
        tolerance: NETWORK_TOLERANCE,
    })
}

/// QCQP head backward pass against central differences of the forward
/// solution, worst case over `n_cases` random parameter vectors whose two
/// smallest eigenvalues differ by at least [`QCQP_MIN_GAP`].
pub fn check_qcqp(seed: u64, n_cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < n_cases {
        let theta: [f64; 10] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let base = qcqp_forward(&theta);
        let ev = base.eigen.values;
        if ev[1] - ev[0] < QCQP_MIN_GAP {
            continue;
        }
        let q0 = base.q.to_array();
        let g: [f64; 4] = sample_uniform::<f64, _>(&mut rng).to_array();
        // sign-align each perturbed solution with the unperturbed one
        let solve = |t: &[f64; 10]| {
            let q = qcqp_forward(t).q.to_array();
            let s: f64 = (0..4).map(|i| q[i] * q0[i]).sum();
            q.map(|v| v * s.signum())
        };
        let numeric: Vec<f64> = (0..10)
            .map(|k| {
                let (mut p, mut m) = (theta, theta);
                p[k] += h;
                m[k] -= h;
                let (qp, qm) = (solve(&p), solve(&m));
                (0..4).map(|i| g[i] * (qp[i] - qm[i])).sum::<f64>() / (2.0 * h)
            })
            .collect();
        let analytic = qcqp_backward(&theta, g)?;
        worst = worst.max(relative_error(&analytic, &numeric));
        checked += 1;
    }
    Ok(GradCheck {
        name: "qcqp_head".into(),
        max_rel_error: worst,
        tolerance: QCQP_TOLERANCE,
    })
}
