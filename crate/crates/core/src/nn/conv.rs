//! Stride-1 "same" convolution as a candle custom op.
//!
//! Forward and both gradients lower to im2col + GEMM through `matrixmultiply`,
//! which is far faster on CPU than the generic convolution backward. Only odd
//! square kernels are supported; padding is `k / 2` zeros on every side.

use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor};

type CResult<T> = candle_core::Result<T>;

trait Elem: Copy + Default + std::ops::AddAssign + 'static {
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
    fn one() -> Self;
}

impl Elem for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
    fn one() -> Self {
        1.0
    }
}

impl Elem for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
    fn one() -> Self {
        1.0
    }
}

/// `col[(ci*k*k + ky*k + kx), y*w + x] = x[ci, y+ky-p, x+kx-p]`, zero outside.
fn im2col<T: Elem>(src: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - p as isize;
                let dx = kx as isize - p as isize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::default());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..][..w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)).max(0) as usize;
                    out[..x0.min(w)].fill(T::default());
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                    }
                    out[x1.max(x0).min(w)..].fill(T::default());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating overlaps.
fn col2im<T: Elem>(col: &[T], c: usize, h: usize, w: usize, k: usize, dst: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - p as isize;
                let dx = kx as isize - p as isize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)).max(0) as usize;
                    let drow = &mut plane[sy as usize * w..][..w];
                    for x in x0..x1 {
                        drow[(x as isize + dx) as usize] += row[y * w + x];
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], l: &Layout, what: &str) -> CResult<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("{what}: expected a contiguous tensor"),
    }
}

fn dims4(l: &Layout, what: &str) -> CResult<(usize, usize, usize, usize)> {
    match l.shape().dims() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        d => candle_core::bail!("{what}: expected a rank-4 tensor, got {d:?}"),
    }
}

fn forward<T: Elem>(x: &[T], (b, c, h, w): (usize, usize, usize, usize), wt: &[T], co: usize, k: usize) -> Vec<T> {
    let kk = c * k * k;
    let hw = h * w;
    let mut out = vec![T::default(); b * co * hw];
    let mut col = if k == 1 { Vec::new() } else { vec![T::default(); kk * hw] };
    for bi in 0..b {
        let xb = &x[bi * c * hw..(bi + 1) * c * hw];
        let src: &[T] = if k == 1 {
            xb
        } else {
            im2col(xb, c, h, w, k, &mut col);
            &col
        };
        let ob = &mut out[bi * co * hw..(bi + 1) * co * hw];
        unsafe {
            T::gemm(
                co,
                kk,
                hw,
                wt.as_ptr(),
                kk as isize,
                1,
                src.as_ptr(),
                hw as isize,
                1,
                T::default(),
                ob.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
    }
    out
}

fn input_grad<T: Elem>(gy: &[T], wt: &[T], (b, co, h, w): (usize, usize, usize, usize), c: usize, k: usize) -> Vec<T> {
    let kk = c * k * k;
    let hw = h * w;
    let mut gx = vec![T::default(); b * c * hw];
    let mut col = vec![T::default(); kk * hw];
    for bi in 0..b {
        let gyb = &gy[bi * co * hw..(bi + 1) * co * hw];
        let dst: *mut T = if k == 1 { gx[bi * c * hw..].as_mut_ptr() } else { col.as_mut_ptr() };
        // col = W^T (kk x co) * dY (co x hw)
        unsafe {
            T::gemm(
                kk,
                co,
                hw,
                wt.as_ptr(),
                1,
                kk as isize,
                gyb.as_ptr(),
                hw as isize,
                1,
                T::default(),
                dst,
                hw as isize,
                1,
            );
        }
        if k != 1 {
            col2im(&col, c, h, w, k, &mut gx[bi * c * hw..(bi + 1) * c * hw]);
        }
    }
    gx
}

fn weight_grad<T: Elem>(x: &[T], (b, c, h, w): (usize, usize, usize, usize), gy: &[T], co: usize, k: usize) -> Vec<T> {
    let kk = c * k * k;
    let hw = h * w;
    let mut gw = vec![T::default(); co * kk];
    let mut col = if k == 1 { Vec::new() } else { vec![T::default(); kk * hw] };
    for bi in 0..b {
        let xb = &x[bi * c * hw..(bi + 1) * c * hw];
        let src: &[T] = if k == 1 {
            xb
        } else {
            im2col(xb, c, h, w, k, &mut col);
            &col
        };
        let gyb = &gy[bi * co * hw..(bi + 1) * co * hw];
        let beta = if bi == 0 { T::default() } else { T::one() };
        // gW (co x kk) += dY (co x hw) * col^T (hw x kk)
        unsafe {
            T::gemm(
                co,
                hw,
                kk,
                gyb.as_ptr(),
                hw as isize,
                1,
                src.as_ptr(),
                1,
                hw as isize,
                beta,
                gw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
    }
    gw
}

/// `(x: [b, c, h, w], w: [co, c, k, k]) -> [b, co, h, w]`
struct SameConv;

impl CustomOp2 for SameConv {
    fn name(&self) -> &'static str {
        "same-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let xd = dims4(l1, "conv input")?;
        let (co, ci, k, k2) = dims4(l2, "conv weight")?;
        if ci != xd.1 || k != k2 || k % 2 == 0 {
            candle_core::bail!("conv: weight {:?} incompatible with input {:?}", l2.shape(), l1.shape());
        }
        let shape = Shape::from((xd.0, co, xd.2, xd.3));
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => {
                CpuStorage::F32(forward(contiguous(x, l1, "conv")?, xd, contiguous(w, l2, "conv")?, co, k))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w)) => {
                CpuStorage::F64(forward(contiguous(x, l1, "conv")?, xd, contiguous(w, l2, "conv")?, co, k))
            }
            _ => candle_core::bail!("conv: unsupported dtype combination"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(w, &ConvInputGrad { channels: x.dim(1)? })?;
        let gw = x.apply_op2_no_bwd(&grad, &ConvWeightGrad { kernel: w.dim(2)? })?;
        Ok((Some(gx), Some(gw)))
    }
}

/// `(dY: [b, co, h, w], w: [co, c, k, k]) -> dX: [b, c, h, w]`
struct ConvInputGrad {
    channels: usize,
}

impl CustomOp2 for ConvInputGrad {
    fn name(&self) -> &'static str {
        "same-conv2d-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let gd = dims4(l1, "conv grad")?;
        let (_, _, k, _) = dims4(l2, "conv weight")?;
        let c = self.channels;
        let shape = Shape::from((gd.0, c, gd.2, gd.3));
        let out = match (s1, s2) {
            (CpuStorage::F32(g), CpuStorage::F32(w)) => {
                CpuStorage::F32(input_grad(contiguous(g, l1, "conv")?, contiguous(w, l2, "conv")?, gd, c, k))
            }
            (CpuStorage::F64(g), CpuStorage::F64(w)) => {
                CpuStorage::F64(input_grad(contiguous(g, l1, "conv")?, contiguous(w, l2, "conv")?, gd, c, k))
            }
            _ => candle_core::bail!("conv: unsupported dtype combination"),
        };
        Ok((out, shape))
    }
}

/// `(x: [b, c, h, w], dY: [b, co, h, w]) -> dW: [co, c, k, k]`
struct ConvWeightGrad {
    kernel: usize,
}

impl CustomOp2 for ConvWeightGrad {
    fn name(&self) -> &'static str {
        "same-conv2d-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let xd = dims4(l1, "conv input")?;
        let (_, co, _, _) = dims4(l2, "conv grad")?;
        let k = self.kernel;
        let shape = Shape::from((co, xd.1, k, k));
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                CpuStorage::F32(weight_grad(contiguous(x, l1, "conv")?, xd, contiguous(g, l2, "conv")?, co, k))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                CpuStorage::F64(weight_grad(contiguous(x, l1, "conv")?, xd, contiguous(g, l2, "conv")?, co, k))
            }
            _ => candle_core::bail!("conv: unsupported dtype combination"),
        };
        Ok((out, shape))
    }
}

/// Zero-padded stride-1 convolution preserving spatial size.
pub fn conv2d_same(x: &Tensor, weight: &Tensor) -> CResult<Tensor> {
    x.contiguous()?.apply_op2(&weight.contiguous()?, SameConv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn naive(x: &[f64], (b, c, h, w): (usize, usize, usize, usize), wt: &[f64], co: usize, k: usize) -> Vec<f64> {
        let p = (k / 2) as isize;
        let mut out = vec![0.0; b * co * h * w];
        for bi in 0..b {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += x[((bi * c + ci) * h + sy as usize) * w + sx as usize]
                                        * wt[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((bi * co + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let dev = Device::Cpu;
        for &(k, b, c, co, h, w) in &[(3, 2, 3, 4, 5, 7), (1, 1, 4, 2, 3, 3), (3, 1, 1, 1, 1, 1), (5, 1, 2, 3, 6, 4)] {
            let xs = lcg(b * c * h * w, 1);
            let ws = lcg(co * c * k * k, 2);
            let x = Tensor::from_vec(xs.clone(), (b, c, h, w), &dev).unwrap();
            let wt = Tensor::from_vec(ws.clone(), (co, c, k, k), &dev).unwrap();
            let got: Vec<f64> = conv2d_same(&x, &wt).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = naive(&xs, (b, c, h, w), &ws, co, k);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12, "k={k}: {g} vs {e}");
            }
            // f32 path against candle's reference convolution.
            let x32 = x.to_dtype(DType::F32).unwrap();
            let w32 = wt.to_dtype(DType::F32).unwrap();
            let reference = x32.conv2d(&w32, k / 2, 1, 1, 1).unwrap();
            let diff = (conv2d_same(&x32, &w32).unwrap() - reference).unwrap().abs().unwrap();
            assert!(diff.max_all().unwrap().to_scalar::<f32>().unwrap() < 1e-5);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dev = Device::Cpu;
        for &k in &[1usize, 3] {
            let (b, c, co, h, w) = (2, 2, 3, 4, 5);
            let xs = lcg(b * c * h * w, 3);
            let ws = lcg(co * c * k * k, 4);
            let probe = Tensor::from_vec(lcg(b * co * h * w, 5), (b, co, h, w), &dev).unwrap();
            let x = Var::from_vec(xs.clone(), (b, c, h, w), &dev).unwrap();
            let wt = Var::from_vec(ws.clone(), (co, c, k, k), &dev).unwrap();
            let loss = |x: &Tensor, wt: &Tensor| -> f64 {
                (conv2d_same(x, wt).unwrap() * &probe).unwrap().sum_all().unwrap().to_scalar().unwrap()
            };
            let out = (conv2d_same(x.as_tensor(), wt.as_tensor()).unwrap() * &probe).unwrap().sum_all().unwrap();
            let grads = out.backward().unwrap();
            let gx: Vec<f64> = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let gw: Vec<f64> = grads.get(&wt).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let eps = 1e-6;
            let wt_t = wt.as_tensor().clone();
            for i in 0..xs.len() {
                let mut p = xs.clone();
                let mut m = xs.clone();
                p[i] += eps;
                m[i] -= eps;
                let fp = loss(&Tensor::from_vec(p, (b, c, h, w), &dev).unwrap(), &wt_t);
                let fm = loss(&Tensor::from_vec(m, (b, c, h, w), &dev).unwrap(), &wt_t);
                assert!(((fp - fm) / (2.0 * eps) - gx[i]).abs() < 1e-7);
            }
            let x_t = x.as_tensor().clone();
            for i in 0..ws.len() {
                let mut p = ws.clone();
                let mut m = ws.clone();
                p[i] += eps;
                m[i] -= eps;
                let fp = loss(&x_t, &Tensor::from_vec(p, (co, c, k, k), &dev).unwrap());
                let fm = loss(&x_t, &Tensor::from_vec(m, (co, c, k, k), &dev).unwrap());
                assert!(((fp - fm) / (2.0 * eps) - gw[i]).abs() < 1e-7);
            }
        }
    }
}
