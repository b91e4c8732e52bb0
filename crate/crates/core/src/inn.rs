//! Affine coupling blocks and their composition into invertible networks.
//!
//! ```text
//! forward:  y1 = x1 + phi(x2)
//!           y2 = x2 * exp(sigmoid(rho(y1))) + eta(y1)
//! inverse:  x2 = (y2 - eta(y1)) * exp(-sigmoid(rho(y1)))
//!           x1 = y1 - phi(x2)
//! ```
//!
//! The inverse never inverts a subnet, so any shape-preserving map works.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{all_finite, conv2d_same, leaky_relu, Conv2d, ParamStore, WeightInit, LEAKY_SLOPE};
use crate::wavelet::SUBBANDS;

/// Bound applied to the exponent of the affine scale.
pub const EXP_CLAMP: f64 = 8.0;

/// A shape-preserving map used as phi, rho or eta.
pub trait Subnet {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
}

/// Five 3x3 convolutions with dense connectivity: each of the first four
/// layers sees the concatenation of the input and all earlier activations and
/// is followed by a leaky ReLU. The fifth layer is linear and zero-initialized.
#[derive(Debug, Clone)]
pub struct DenseSubnet {
    layers: Vec<Conv2d>,
    channels_in: usize,
}

impl DenseSubnet {
    pub const DEPTH: usize = 5;

    pub fn new(ps: &ParamStore, channels_in: usize, channels_out: usize, growth: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(Self::DEPTH);
        for i in 0..Self::DEPTH {
            let cin = channels_in + i * growth;
            let layer = if i + 1 < Self::DEPTH {
                Conv2d::new(&ps.pp(format!("conv{i}")), cin, growth, 3, WeightInit::Kaiming(LEAKY_SLOPE))?
            } else {
                Conv2d::new(&ps.pp(format!("conv{i}")), cin, channels_out, 3, WeightInit::Zeros)?
            };
            layers.push(layer);
        }
        Ok(Self { layers, channels_in })
    }
}

impl Subnet for DenseSubnet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.channels_in {
            return Err(Error::config(format!("dense subnet expects {} channels, got {c}", self.channels_in)));
        }
        let mut feats = vec![x.clone()];
        for layer in &self.layers[..Self::DEPTH - 1] {
            let h = leaky_relu(&layer.forward(&Tensor::cat(&feats, 1)?)?)?;
            feats.push(h);
        }
        self.layers[Self::DEPTH - 1].forward(&Tensor::cat(&feats, 1)?)
    }
}

#[derive(Debug, Clone)]
pub struct CouplingBlock<S> {
    pub phi: S,
    pub rho: S,
    pub eta: S,
}

fn scale_exponent<S: Subnet>(rho: &S, y1: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(&rho.forward(y1)?)?.clamp(-EXP_CLAMP, EXP_CLAMP)?)
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("coupling branches differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

impl<S: Subnet> CouplingBlock<S> {
    pub fn forward(&self, x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
        same_shape(x1, x2)?;
        let y1 = (x1 + self.phi.forward(x2)?)?;
        let s = scale_exponent(&self.rho, &y1)?;
        let y2 = ((x2 * s.exp()?)? + self.eta.forward(&y1)?)?;
        Ok((y1, y2))
    }

    pub fn inverse(&self, y1: &Tensor, y2: &Tensor) -> Result<(Tensor, Tensor)> {
        same_shape(y1, y2)?;
        let s = scale_exponent(&self.rho, y1)?;
        let x2 = ((y2 - self.eta.forward(y1)?)? * s.neg()?.exp()?)?;
        let x1 = (y1 - self.phi.forward(&x2)?)?;
        Ok((x1, x2))
    }
}

impl CouplingBlock<DenseSubnet> {
    pub fn dense(ps: &ParamStore, channels: usize, growth: usize) -> Result<Self> {
        Ok(Self {
            phi: DenseSubnet::new(&ps.pp("phi"), channels, channels, growth)?,
            rho: DenseSubnet::new(&ps.pp("rho"), channels, channels, growth)?,
            eta: DenseSubnet::new(&ps.pp("eta"), channels, channels, growth)?,
        })
    }
}

/// A nonempty stack of coupling blocks.
#[derive(Debug, Clone)]
pub struct Inn<S> {
    blocks: Vec<CouplingBlock<S>>,
}

impl<S: Subnet> Inn<S> {
    pub fn new(blocks: Vec<CouplingBlock<S>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::config("an invertible network needs at least one block"));
        }
        Ok(Self { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[CouplingBlock<S>] {
        &self.blocks
    }

    pub fn forward(&self, x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
        let (mut a, mut b) = (x1.clone(), x2.clone());
        for (l, block) in self.blocks.iter().enumerate() {
            (a, b) = block.forward(&a, &b)?;
            if !all_finite(&a)? || !all_finite(&b)? {
                return Err(Error::Numeric { stage: "inn_forward", block: l });
            }
        }
        Ok((a, b))
    }

    pub fn inverse(&self, y1: &Tensor, y2: &Tensor) -> Result<(Tensor, Tensor)> {
        let (mut a, mut b) = (y1.clone(), y2.clone());
        for (l, block) in self.blocks.iter().enumerate().rev() {
            (a, b) = block.inverse(&a, &b)?;
            if !all_finite(&a)? || !all_finite(&b)? {
                return Err(Error::Numeric { stage: "inn_inverse", block: l });
            }
        }
        Ok((a, b))
    }
}

impl Inn<DenseSubnet> {
    pub fn dense(ps: &ParamStore, blocks: usize, channels: usize, growth: usize) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|l| CouplingBlock::dense(&ps.pp(format!("block{l}")), channels, growth))
            .collect::<Result<_>>()?;
        Self::new(blocks)
    }
}

fn haar_weight(dtype: DType) -> Result<Tensor> {
    const H: [[f64; 4]; 4] =
        [[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    let mut w = vec![0.0f64; SUBBANDS * SUBBANDS];
    for c in 0..SUBBANDS / 4 {
        for (i, row) in H.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w[(4 * c + i) * SUBBANDS + 4 * c + j] = 0.5 * v;
            }
        }
    }
    Ok(Tensor::from_vec(w, (SUBBANDS, SUBBANDS, 1, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `[b, 3, h, w] -> [b, 12, h/2, w/2]`, same layout as [`crate::wavelet::dwt_haar`].
pub fn dwt_tensor(x: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if c * 4 != SUBBANDS || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("Haar transform needs [b, 3, even, even], got {:?}", x.dims())));
    }
    let blocks = candle_nn::ops::pixel_unshuffle(x, 2)?;
    Ok(conv2d_same(&blocks, &haar_weight(x.dtype())?)?)
}

/// `[b, 12, h, w] -> [b, 3, 2h, 2w]`
pub fn iwt_tensor(x: &Tensor) -> Result<Tensor> {
    if x.dims4()?.1 != SUBBANDS {
        return Err(Error::shape(format!("inverse Haar transform needs {SUBBANDS} channels, got {:?}", x.dims())));
    }
    let blocks = conv2d_same(x, &haar_weight(x.dtype())?)?;
    Ok(candle_nn::ops::pixel_shuffle(&blocks, 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{plane_to_tensor, randomize_params, seeded_normal, tensor_to_plane};
    use crate::plane::ImagePlane;
    use crate::wavelet::dwt_haar;
    use candle_core::Var;

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .to_scalar()
            .unwrap()
    }

    fn set(ps: &ParamStore, name: &str, values: Vec<f64>) {
        let (_, var) = ps.named_vars().into_iter().find(|(k, _)| k == name).unwrap();
        let t = Tensor::from_vec(values, var.dims(), &Device::Cpu).unwrap();
        var.set(&t).unwrap();
    }

    #[test]
    fn zero_initialized_subnet_is_the_zero_map() {
        let ps = ParamStore::new(0, DType::F32);
        let net = DenseSubnet::new(&ps, 12, 12, 8).unwrap();
        let x = seeded_normal(101, &[2, 12, 16, 16], 1.0, DType::F32).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 12, 16, 16]);
        assert_eq!(y.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        assert!(net.forward(&Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn dense_subnet_matches_scalar_oracle() {
        // One channel, growth one, 1x1 image: only the centre tap of each 3x3
        // kernel touches data.
        let ps = ParamStore::new(0, DType::F64);
        let net = DenseSubnet::new(&ps, 1, 1, 1).unwrap();
        let taps: [&[f64]; 5] =
            [&[0.7], &[-1.3, 0.4], &[0.5, 0.9, -0.6], &[1.1, -0.2, 0.3, 0.8], &[0.25, -0.5, 0.75, 1.5, -1.0]];
        let biases = [0.1, -0.2, 0.05, 0.3, -0.15];
        for i in 0..5 {
            let cin = i + 1;
            let mut w = vec![0.0; cin * 9];
            for (j, t) in taps[i].iter().enumerate() {
                w[j * 9 + 4] = *t;
            }
            set(&ps, &format!("conv{i}.weight"), w);
            set(&ps, &format!("conv{i}.bias"), vec![biases[i]]);
        }
        let x0 = 0.6;
        let leaky = |v: f64| if v > 0.0 { v } else { 0.2 * v };
        let mut feats = vec![x0];
        for i in 0..4 {
            let pre: f64 = feats.iter().zip(taps[i]).map(|(f, t)| f * t).sum::<f64>() + biases[i];
            feats.push(leaky(pre));
        }
        let want: f64 = feats.iter().zip(taps[4]).map(|(f, t)| f * t).sum::<f64>() + biases[4];
        let x = Tensor::from_vec(vec![x0], (1, 1, 1, 1), &Device::Cpu).unwrap();
        let got: f64 = net.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    struct Affine {
        a: f64,
        b: f64,
    }

    impl Subnet for Affine {
        fn forward(&self, x: &Tensor) -> Result<Tensor> {
            Ok(x.affine(self.a, self.b)?)
        }
    }

    #[test]
    fn coupling_matches_scalar_oracle() {
        let block = CouplingBlock {
            phi: Affine { a: 0.5, b: 0.1 },
            rho: Affine { a: -1.2, b: 0.3 },
            eta: Affine { a: 0.7, b: -0.4 },
        };
        let (x1, x2) = (0.8f64, -0.35f64);
        let y1 = x1 + (0.5 * x2 + 0.1);
        let s = 1.0 / (1.0 + (-(-1.2 * y1 + 0.3f64)).exp());
        let y2 = x2 * s.exp() + (0.7 * y1 - 0.4);
        let t1 = Tensor::new(&[[[[x1]]]], &Device::Cpu).unwrap();
        let t2 = Tensor::new(&[[[[x2]]]], &Device::Cpu).unwrap();
        let (o1, o2) = block.forward(&t1, &t2).unwrap();
        let g1: f64 = o1.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        let g2: f64 = o2.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((g1 - y1).abs() < 1e-14 && (g2 - y2).abs() < 1e-14);
    }

    #[test]
    fn zero_init_block_scales_second_branch() {
        let ps = ParamStore::new(0, DType::F64);
        let block = CouplingBlock::dense(&ps, 2, 4).unwrap();
        let x1 = seeded_normal(102, &[1, 2, 3, 3], 1.0, DType::F64).unwrap();
        let x2 = seeded_normal(103, &[1, 2, 3, 3], 1.0, DType::F64).unwrap();
        let (y1, y2) = block.forward(&x1, &x2).unwrap();
        assert_eq!(max_abs_diff(&y1, &x1), 0.0);
        assert!(max_abs_diff(&y2, &(&x2 * 0.5f64.exp()).unwrap()) < 1e-15);
        let (z1, z2) = block.inverse(&x1, &x2).unwrap();
        assert_eq!(max_abs_diff(&z1, &x1), 0.0);
        assert!(max_abs_diff(&z2, &(&x2 * (-0.5f64).exp()).unwrap()) < 1e-15);
        let zero = x2.zeros_like().unwrap();
        let (_, y2) = block.forward(&x1, &zero).unwrap();
        assert_eq!(max_abs_diff(&y2, &zero), 0.0);
    }

    #[test]
    fn single_block_inn_equals_block() {
        let ps = ParamStore::new(3, DType::F32);
        let inn = Inn::dense(&ps, 1, 2, 4).unwrap();
        randomize_params(&ps, 5, 0.3).unwrap();
        let x1 = seeded_normal(104, &[1, 2, 4, 4], 1.0, DType::F32).unwrap();
        let x2 = seeded_normal(105, &[1, 2, 4, 4], 1.0, DType::F32).unwrap();
        let (a1, a2) = inn.forward(&x1, &x2).unwrap();
        let (b1, b2) = inn.blocks()[0].forward(&x1, &x2).unwrap();
        assert_eq!(max_abs_diff(&a1, &b1), 0.0);
        assert_eq!(max_abs_diff(&a2, &b2), 0.0);
    }

    #[test]
    fn empty_inn_is_rejected() {
        assert!(Inn::<DenseSubnet>::new(Vec::new()).is_err());
    }

    #[test]
    fn non_finite_values_are_reported_with_block_index() {
        let ps = ParamStore::new(0, DType::F32);
        let inn = Inn::dense(&ps, 3, 1, 2).unwrap();
        let x = Tensor::new(&[[[[f32::NAN]]]], &Device::Cpu).unwrap();
        match inn.forward(&x, &x) {
            Err(Error::Numeric { block: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match inn.inverse(&x, &x) {
            Err(Error::Numeric { block: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tensor_haar_matches_plane_haar() {
        let img = ImagePlane::from_fn(8, 6, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 17.0);
        let t = dwt_tensor(&plane_to_tensor(&img, DType::F32).unwrap()).unwrap();
        let got: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        let want = dwt_haar(&img).unwrap();
        assert!(got.iter().zip(want.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        let back = tensor_to_plane(&iwt_tensor(&t).unwrap()).unwrap();
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn coupling_gradients_match_finite_differences() {
        let ps = ParamStore::new(11, DType::F64);
        let block = CouplingBlock::dense(&ps, 2, 3).unwrap();
        randomize_params(&ps, 6, 0.4).unwrap();
        let x1 = Var::from_tensor(&seeded_normal(108, &[1, 2, 4, 4], 1.0, DType::F64).unwrap()).unwrap();
        let x2 = Var::from_tensor(&seeded_normal(109, &[1, 2, 4, 4], 1.0, DType::F64).unwrap()).unwrap();
        let w1 = seeded_normal(106, &[1, 2, 4, 4], 1.0, DType::F64).unwrap();
        let w2 = seeded_normal(107, &[1, 2, 4, 4], 1.0, DType::F64).unwrap();
        let f = |a: &Tensor, b: &Tensor| -> Tensor {
            let (y1, y2) = block.forward(a, b).unwrap();
            ((y1 * &w1).unwrap().sum_all().unwrap() + (y2 * &w2).unwrap().sum_all().unwrap()).unwrap()
        };
        let grads = f(x1.as_tensor(), x2.as_tensor()).backward().unwrap();
        let eps = 1e-6;
        for (var, other, first) in [(&x1, &x2, true), (&x2, &x1, false)] {
            let g: Vec<f64> = grads.get(var).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let base: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
            for i in 0..base.len() {
                let mut p = base.clone();
                let mut m = base.clone();
                p[i] += eps;
                m[i] -= eps;
                let tp = Tensor::from_vec(p, var.dims(), &Device::Cpu).unwrap();
                let tm = Tensor::from_vec(m, var.dims(), &Device::Cpu).unwrap();
                let (fp, fm) = if first {
                    (f(&tp, other.as_tensor()), f(&tm, other.as_tensor()))
                } else {
                    (f(other.as_tensor(), &tp), f(other.as_tensor(), &tm))
                };
                let fd = (fp.to_scalar::<f64>().unwrap() - fm.to_scalar::<f64>().unwrap()) / (2.0 * eps);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-3 || (fd - g[i]).abs() < 1e-8, "i={i} fd={fd} an={}", g[i]);
            }
        }
    }
}
