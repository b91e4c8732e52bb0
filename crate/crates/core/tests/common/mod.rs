#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use shufflemark::inn::{DenseSubnet, Inn};
use shufflemark::nn::{seeded_normal, ParamStore};

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    to_vec(a).iter().zip(to_vec(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gradient of the scalar `f` at `x0` through autodiff.
pub fn analytic_gradient(f: impl Fn(&Tensor) -> Tensor, x0: &Tensor) -> Vec<f64> {
    let x = Var::from_tensor(x0).unwrap();
    let g = f(x.as_tensor()).backward().unwrap();
    to_vec(g.get(&x).expect("input receives a gradient"))
}

/// Central finite differences of the scalar `f` at `x0`.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> Tensor, x0: &Tensor, eps: f64) -> Vec<f64> {
    let base = to_vec(x0);
    let at = |v: Vec<f64>| -> f64 {
        let t = Tensor::from_vec(v, x0.dims(), &Device::Cpu).unwrap();
        f(&t).to_dtype(DType::F64).unwrap().to_scalar().unwrap()
    };
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += eps;
            m[i] -= eps;
            (at(p) - at(m)) / (2.0 * eps)
        })
        .collect()
}

/// Largest elementwise relative error, with differences below `floor`
/// treated as exact.
pub fn max_relative_error(an: &[f64], fd: &[f64], floor: f64) -> f64 {
    an.iter()
        .zip(fd)
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d < floor {
                0.0
            } else {
                d / a.abs().max(b.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// `||an - fd|| / ||fd||`.
pub fn relative_norm_error(an: &[f64], fd: &[f64]) -> f64 {
    let num: f64 = an.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

/// A dense-subnet network as initialized (Kaiming hidden layers drawn from
/// `seed`) with the zero-initialized output layers replaced by N(0, std^2)
/// weights and biases, so every subnet is a nontrivial map.
pub fn random_inn(
    seed: u64,
    blocks: usize,
    channels: usize,
    growth: usize,
    std: f64,
    dtype: DType,
) -> Inn<DenseSubnet> {
    let ps = ParamStore::new(seed, dtype);
    let inn = Inn::dense(&ps, blocks, channels, growth).unwrap();
    for (i, (name, var)) in ps.named_vars().into_iter().enumerate() {
        if name.contains(&format!("conv{}", DenseSubnet::DEPTH - 1)) {
            var.set(&seeded_normal(seed.wrapping_mul(7919) + i as u64, var.dims(), std, dtype).unwrap()).unwrap();
        }
    }
    inn
}

/// A run configuration small enough for seconds-long training runs.
pub const TINY: &str = r#"
[data]
synthetic_train = 16
synthetic_eval = 4
synthetic_shapes = 3

[model]
image_size = 32

[model.shuffle]
seed = 3
patch = 1

[model.watermark]
blocks = 1
growth = 4
noise_width = 4

[model.generator]
blocks = 1
dim = 8
heads = 2
up_channels = 4

[model.enhance]
blocks = 1
width = 4

[model.localize]
levels = 2
base = 4

[train]
batch_size = 2
iterations = 10
seed = 5
"#;

/// Output-layer scale of the random draws in [`round_trip_error`].
pub const DRAW_STD: f64 = 0.005;

/// Worst round-trip error over `draws` random networks (output-layer scale
/// `std`) and N(0, 1) inputs.
pub fn round_trip_error_at(blocks: usize, draws: u64, std: f64, dtype: DType) -> f64 {
    let mut worst = 0.0f64;
    for d in 0..draws {
        let seed = 1000 * blocks as u64 + d;
        let inn = random_inn(seed, blocks, 12, 8, std, dtype);
        let x1 = seeded_normal(seed + 17, &[1, 12, 8, 8], 1.0, dtype).unwrap();
        let x2 = seeded_normal(seed + 29, &[1, 12, 8, 8], 1.0, dtype).unwrap();
        let (y1, y2) = inn.forward(&x1, &x2).unwrap();
        let (z1, z2) = inn.inverse(&y1, &y2).unwrap();
        worst = worst.max(max_abs_diff(&z1, &x1)).max(max_abs_diff(&z2, &x2));
    }
    worst
}

pub fn round_trip_error(blocks: usize, draws: u64, dtype: DType) -> f64 {
    round_trip_error_at(blocks, draws, DRAW_STD, dtype)
}

/// One finite-difference comparison: name, error, tolerance.
pub struct GradientCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
    /// Largest finite-difference magnitude, to show the check is not vacuous.
    pub scale: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance && self.scale > 0.0
    }
}

fn probe(seed: u64, dims: &[usize]) -> Tensor {
    shufflemark::nn::seeded_normal(seed, dims, 1.0, DType::F64).unwrap()
}

fn weighted_sum(t: &Tensor, w: &Tensor) -> Tensor {
    (t * w).unwrap().sum_all().unwrap()
}

const EPS: f64 = 1e-6;
const FLOOR: f64 = 1e-9;

fn largest(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn elementwise(name: &'static str, f: impl Fn(&Tensor) -> Tensor, x0: &Tensor) -> GradientCheck {
    let an = analytic_gradient(&f, x0);
    let fd = numeric_gradient(&f, x0, EPS);
    GradientCheck { name, error: max_relative_error(&an, &fd, FLOOR), tolerance: 1e-3, scale: largest(&fd) }
}

/// Analytic against central-difference gradients at 64 bits for the coupling
/// block, TV, masked extraction loss, BCE, compositing, the JPEG surrogate
/// and the total loss of a micro pipeline.
pub fn gradient_suite() -> Vec<GradientCheck> {
    use shufflemark::degrade::jpeg::{jpeg_tensor, Rounding};
    use shufflemark::generator::tv_loss_tensor;
    use shufflemark::localize::{bce_tensor, composite_tensor};
    use shufflemark::train::loss_e_tensor;

    let dims = [1, 3, 6, 6];
    let mut out = Vec::new();

    let block = random_inn(41, 1, 3, 4, 0.3, DType::F64);
    let other = probe(42, &dims);
    let (w1, w2) = (probe(43, &dims), probe(44, &dims));
    let coupling = |first: bool| {
        let (other, w1, w2, block) = (&other, &w1, &w2, &block);
        move |x: &Tensor| {
            let (y1, y2) = if first { block.forward(x, other) } else { block.forward(other, x) }.unwrap();
            (weighted_sum(&y1, w1) + weighted_sum(&y2, w2)).unwrap()
        }
    };
    let x = probe(45, &dims);
    let a = elementwise("coupling block (first branch)", coupling(true), &x);
    let b = elementwise("coupling block (second branch)", coupling(false), &x);
    out.push(GradientCheck {
        name: "coupling block",
        error: a.error.max(b.error),
        tolerance: 1e-3,
        scale: a.scale.min(b.scale),
    });

    out.push(elementwise("total variation", |x| tv_loss_tensor(x).unwrap(), &probe(46, &dims)));

    let target = probe(47, &dims);
    let mdata: Vec<f64> = (0..36).map(|i| ((i * 7) % 5 < 2) as u8 as f64).collect();
    let mask = Tensor::from_vec(mdata, (1, 1, 6, 6), &Device::Cpu).unwrap();
    out.push(elementwise("masked extraction loss", |x| loss_e_tensor(&target, x, &mask).unwrap(), &probe(48, &dims)));

    let soft0 = (probe(49, &[1, 1, 6, 6]).affine(0.2, 0.5).unwrap()).clamp(0.05, 0.95).unwrap();
    out.push(elementwise("binary cross-entropy", |s| bce_tensor(s, &mask).unwrap(), &soft0));

    let (enh, att, wc) = (probe(50, &dims), probe(51, &dims), probe(52, &dims));
    let c_mask =
        elementwise("composite (mask)", |m| weighted_sum(&composite_tensor(&enh, &att, m).unwrap(), &wc), &soft0);
    let c_enh =
        elementwise("composite (image)", |e| weighted_sum(&composite_tensor(e, &att, &soft0).unwrap(), &wc), &enh);
    out.push(GradientCheck {
        name: "composite",
        error: c_mask.error.max(c_enh.error),
        tolerance: 1e-3,
        scale: c_mask.scale.min(c_enh.scale),
    });

    let jdims = [1, 3, 8, 8];
    let x0 = shufflemark::nn::seeded_normal(53, &jdims, 0.15, DType::F64)
        .unwrap()
        .affine(1.0, 0.5)
        .unwrap()
        .clamp(0.05, 0.95)
        .unwrap();
    let wj = probe(54, &jdims);
    let f = |x: &Tensor| weighted_sum(&jpeg_tensor(x, &[50], Rounding::Cubic).unwrap(), &wj);
    let an = analytic_gradient(f, &x0);
    let fd = numeric_gradient(f, &x0, EPS);
    out.push(GradientCheck {
        name: "JPEG surrogate",
        error: relative_norm_error(&an, &fd),
        tolerance: 0.05,
        scale: largest(&fd),
    });

    out.push(micro_pipeline_check());
    out
}

/// The total loss is O(100), so a step of 1e-6 leaves ~1e-8 of round-off in
/// each difference quotient.
const PIPELINE_EPS: f64 = 1e-5;

/// Gradients of the weighted total loss with respect to a sample of
/// parameters from every module of a tiny 64-bit pipeline.
fn micro_pipeline_check() -> GradientCheck {
    use shufflemark::corpus::synthetic_corpus;
    use shufflemark::degrade::PresetTable;
    use shufflemark::enhance::EnhanceConfig;
    use shufflemark::generator::GeneratorConfig;
    use shufflemark::localize::LocalizeConfig;
    use shufflemark::nn::randomize_params;
    use shufflemark::shuffle::ShuffleKey;
    use shufflemark::train::{loss_total_tensor, ModelConfig, Pipeline, TrainConfig, Trainer};
    use shufflemark::watermark::WatermarkConfig;

    let cfg = ModelConfig {
        image_size: 16,
        shuffle: ShuffleKey::new(5, 1),
        watermark: WatermarkConfig { blocks: 1, growth: 4, noise_width: 4, ..Default::default() },
        generator: GeneratorConfig { blocks: 1, dim: 8, heads: 2, up_channels: 4, ..Default::default() },
        enhance: EnhanceConfig { blocks: 1, width: 4, ..Default::default() },
        localize: LocalizeConfig { levels: 2, base: 4, ..Default::default() },
        ..Default::default()
    };
    let p = Pipeline::new(&cfg, 3, DType::F64).unwrap();
    randomize_params(p.params(), 9, 0.1).unwrap();
    let train = TrainConfig { degradation: "none".into(), seed: 2, ..Default::default() };
    let trainer = Trainer::new(p, train.clone(), PresetTable::bundled().get("none").unwrap().clone()).unwrap();
    let imgs = synthetic_corpus(70, 3, 16, 3);
    let batch = [&imgs[0], &imgs[1]];
    let donors = [&imgs[1], &imgs[2]];
    let total = || -> Tensor { loss_total_tensor(&trainer.losses(&batch, &donors).unwrap(), &train.weights).unwrap() };
    let grads = total().backward().unwrap();

    let vars = trainer.pipeline().params().named_vars();
    let mut pairs = Vec::new();
    let mut scale = 0.0f64;
    let mut checked = 0;
    for prefix in ["iw.", "wg.", "ie.", "tl."] {
        for (_, var) in vars.iter().filter(|(n, _)| n.starts_with(prefix)).step_by(5).take(3) {
            let g = to_vec(grads.get(var).expect("parameter receives a gradient"));
            let base = to_vec(var.as_tensor());
            for i in [0, base.len() / 2, base.len() - 1] {
                let at = |d: f64| {
                    let mut v = base.clone();
                    v[i] += d;
                    var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap()).unwrap();
                    let f: f64 = total().to_scalar().unwrap();
                    f
                };
                let fd = (at(PIPELINE_EPS) - at(-PIPELINE_EPS)) / (2.0 * PIPELINE_EPS);
                var.set(&Tensor::from_vec(base.clone(), var.dims(), &Device::Cpu).unwrap()).unwrap();
                pairs.push((g[i], fd));
                scale = scale.max(fd.abs());
                checked += 1;
            }
        }
    }
    assert!(checked >= 24, "too few parameters sampled: {checked}");
    // Entries far below the largest gradient are compared against 1e-4 of it.
    let worst = pairs.iter().map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-4 * scale)).fold(0.0, f64::max);
    GradientCheck { name: "total loss (micro pipeline)", error: worst, tolerance: 1e-3, scale }
}
