//! 2-D convolution shared by every layer.
//!
//! Stride-1 convolutions run as direct row-wise loops with hand-written
//! input and weight gradients. Strided ones are lowered to im2col plus a
//! batched matrix product; the patch extraction is a custom op whose adjoint
//! (col2im) is its backward pass. Both are several times faster on a CPU
//! than the built-in convolution's backward pass at the small channel
//! counts used here.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor, WithDType};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let ho = super::conv_output_size(h, pad, k, stride)?;
        let wo = super::conv_output_size(w, pad, k, stride)?;
        Ok(Self { c, h, w, k, stride, pad, ho, wo })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// In-bounds output columns `[lo, hi)` for kernel column `j`.
    #[inline]
    fn col_range(&self, j: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(j).div_ceil(self.stride);
        let hi = (self.w + self.pad).saturating_sub(j).div_ceil(self.stride).min(self.wo);
        (lo, hi.max(lo))
    }

    /// Calls `f(output row offset, input row offset, lo, hi)` for every
    /// output row of kernel tap `(i, j)` that lands inside the image.
    #[inline]
    fn for_each_row(&self, ci: usize, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (lo, hi) = self.col_range(j);
        if lo == hi {
            return;
        }
        for oy in 0..self.ho {
            let y = (oy * self.stride + i) as isize - self.pad as isize;
            if y < 0 || y >= self.h as isize {
                continue;
            }
            // Input index of output column 0; may be negative before `lo`.
            let base = ((ci * self.h + y as usize) * self.w) as isize + j as isize - self.pad as isize;
            f(oy * self.wo, (base + (lo * self.stride) as isize) as usize, lo, hi);
        }
    }

    fn im2col<T: WithDType>(&self, src: &[T], batch: usize) -> Vec<T> {
        let (rows, cols, s) = (self.rows(), self.cols(), self.stride);
        let plane = self.c * self.h * self.w;
        let mut out = vec![T::zero(); batch * rows * cols];
        for b in 0..batch {
            let img = &src[b * plane..(b + 1) * plane];
            let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
            for ci in 0..self.c {
                for i in 0..self.k {
                    for j in 0..self.k {
                        let r = (ci * self.k + i) * self.k + j;
                        let row = &mut dst[r * cols..(r + 1) * cols];
                        self.for_each_row(ci, i, j, |o, x0, lo, hi| {
                            let d = &mut row[o + lo..o + hi];
                            if s == 1 {
                                d.copy_from_slice(&img[x0..x0 + (hi - lo)]);
                            } else {
                                for (k, v) in d.iter_mut().enumerate() {
                                    *v = img[x0 + k * s];
                                }
                            }
                        });
                    }
                }
            }
        }
        out
    }

    fn col2im<T: WithDType>(&self, src: &[T], batch: usize) -> Vec<T> {
        let (rows, cols, s) = (self.rows(), self.cols(), self.stride);
        let plane = self.c * self.h * self.w;
        let mut out = vec![T::zero(); batch * plane];
        for b in 0..batch {
            let cols_b = &src[b * rows * cols..(b + 1) * rows * cols];
            let img = &mut out[b * plane..(b + 1) * plane];
            for ci in 0..self.c {
                for i in 0..self.k {
                    for j in 0..self.k {
                        let r = (ci * self.k + i) * self.k + j;
                        let row = &cols_b[r * cols..(r + 1) * cols];
                        self.for_each_row(ci, i, j, |o, x0, lo, hi| {
                            for (k, &v) in row[o + lo..o + hi].iter().enumerate() {
                                img[x0 + k * s] += v;
                            }
                        });
                    }
                }
            }
        }
        out
    }
}

fn contiguous<'a, T>(v: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("patch op needs a contiguous input"),
    }
}

/// `[B, C, H, W] → [B, C·k·k, Ho·Wo]`.
struct Im2Col(Geometry);

/// Adjoint of [`Im2Col`]: scatter-adds columns back into an image.
struct Col2Im(Geometry);

macro_rules! dispatch {
    ($storage:expr, $layout:expr, |$v:ident| $body:expr) => {
        match $storage {
            CpuStorage::F32(v) => {
                let $v = contiguous(v, $layout)?;
                CpuStorage::F32($body)
            }
            CpuStorage::F64(v) => {
                let $v = contiguous(v, $layout)?;
                CpuStorage::F64($body)
            }
            _ => candle_core::bail!("patch op supports only f32 and f64"),
        }
    };
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let b = layout.dims()[0];
        let out = dispatch!(storage, layout, |v| g.im2col(v, b));
        Ok((out, Shape::from((b, g.rows(), g.cols()))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let b = layout.dims()[0];
        let out = dispatch!(storage, layout, |v| g.col2im(v, b));
        Ok((out, Shape::from((b, g.c, g.h, g.w))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}

/// Shape of a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Direct {
    b: usize,
    c: usize,
    co: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Direct {
    /// Output row range `[lo, hi)` and input column offset for kernel
    /// column `j`: output `ox` reads input `ox + j − pad`.
    #[inline]
    fn cols(&self, j: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(j);
        let hi = self.wo.min((self.w + self.pad).saturating_sub(j));
        (lo, hi.max(lo))
    }

    #[inline]
    fn row(&self, oy: usize, i: usize) -> Option<usize> {
        let y = (oy + i) as isize - self.pad as isize;
        (y >= 0 && (y as usize) < self.h).then_some(y as usize)
    }

    fn forward<T: WithDType>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        let mut out = vec![T::zero(); self.b * self.co * ohw];
        for b in 0..self.b {
            for co in 0..self.co {
                let dst = &mut out[(b * self.co + co) * ohw..][..ohw];
                for ci in 0..self.c {
                    let src = &x[(b * self.c + ci) * hw..][..hw];
                    for i in 0..self.k {
                        for j in 0..self.k {
                            let wv = w[(co * self.c + ci) * kk + i * self.k + j];
                            let (lo, hi) = self.cols(j);
                            let off = j as isize - self.pad as isize;
                            for oy in 0..self.ho {
                                let Some(y) = self.row(oy, i) else { continue };
                                let d = &mut dst[oy * self.wo + lo..oy * self.wo + hi];
                                let s0 = (y * self.w) as isize + lo as isize + off;
                                let s = &src[s0 as usize..s0 as usize + (hi - lo)];
                                for (a, &v) in d.iter_mut().zip(s) {
                                    *a += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input<T: WithDType>(&self, go: &[T], w: &[T]) -> Vec<T> {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        let mut gx = vec![T::zero(); self.b * self.c * hw];
        for b in 0..self.b {
            for ci in 0..self.c {
                let dst = &mut gx[(b * self.c + ci) * hw..][..hw];
                for co in 0..self.co {
                    let src = &go[(b * self.co + co) * ohw..][..ohw];
                    for i in 0..self.k {
                        for j in 0..self.k {
                            let wv = w[(co * self.c + ci) * kk + i * self.k + j];
                            let (lo, hi) = self.cols(j);
                            let off = j as isize - self.pad as isize;
                            for oy in 0..self.ho {
                                let Some(y) = self.row(oy, i) else { continue };
                                let s = &src[oy * self.wo + lo..oy * self.wo + hi];
                                let d0 = (y * self.w) as isize + lo as isize + off;
                                let d = &mut dst[d0 as usize..d0 as usize + (hi - lo)];
                                for (a, &v) in d.iter_mut().zip(s) {
                                    *a += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    fn grad_weight<T: WithDType>(&self, go: &[T], x: &[T]) -> Vec<T> {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        let mut gw = vec![T::zero(); self.co * self.c * kk];
        for b in 0..self.b {
            for co in 0..self.co {
                let g = &go[(b * self.co + co) * ohw..][..ohw];
                for ci in 0..self.c {
                    let src = &x[(b * self.c + ci) * hw..][..hw];
                    for i in 0..self.k {
                        for j in 0..self.k {
                            let (lo, hi) = self.cols(j);
                            let off = j as isize - self.pad as isize;
                            let mut acc = T::zero();
                            for oy in 0..self.ho {
                                let Some(y) = self.row(oy, i) else { continue };
                                let gr = &g[oy * self.wo + lo..oy * self.wo + hi];
                                let s0 = (y * self.w) as isize + lo as isize + off;
                                acc += dot(gr, &src[s0 as usize..s0 as usize + (hi - lo)]);
                            }
                            gw[(co * self.c + ci) * kk + i * self.k + j] += acc;
                        }
                    }
                }
            }
        }
        gw
    }
}

/// Dot product with eight independent lanes so the loop vectorizes.
#[inline]
fn dot<T: WithDType>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut sum = lanes.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

/// Stride-1 convolution `(x, w) → y`.
struct DirectConv(Direct);
/// `(grad_y, w) → grad_x`.
struct DirectGradInput(Direct);
/// `(grad_y, x) → grad_w`.
struct DirectGradWeight(Direct);

macro_rules! dispatch2 {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, |$a:ident, $b:ident| $body:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                let ($a, $b) = (contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F32($body)
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                let ($a, $b) = (contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F64($body)
            }
            _ => candle_core::bail!("direct conv needs matching f32 or f64 operands"),
        }
    };
}

impl CustomOp2 for DirectConv {
    fn name(&self) -> &'static str {
        "direct-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = dispatch2!(s1, l1, s2, l2, |x, w| g.forward(x, w));
        Ok((out, Shape::from((g.b, g.co, g.ho, g.wo))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(w, &DirectGradInput(self.0))?;
        let gw = grad.apply_op2_no_bwd(x, &DirectGradWeight(self.0))?;
        Ok((Some(gx), Some(gw)))
    }
}

impl CustomOp2 for DirectGradInput {
    fn name(&self) -> &'static str {
        "direct-conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = dispatch2!(s1, l1, s2, l2, |go, w| g.grad_input(go, w));
        Ok((out, Shape::from((g.b, g.c, g.h, g.w))))
    }
}

impl CustomOp2 for DirectGradWeight {
    fn name(&self) -> &'static str {
        "direct-conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = dispatch2!(s1, l1, s2, l2, |go, x| g.grad_weight(go, x));
        Ok((out, Shape::from((g.co, g.c, g.k, g.k))))
    }
}

const DIRECT_MIN_PLANE: usize = 32 * 32;
/// From this many channel pairs on the matrix product wins again.
const DIRECT_MAX_CHANNEL_PAIRS: usize = 64 * 64;

/// Cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, c, h, wd) = x.dims4()?;
    let (co, ci, kh, kw) = w.dims4()?;
    if ci != c {
        return Err(Error::shape("conv2d input channels", ci, c));
    }
    if kh != kw {
        return Err(Error::shape("conv2d kernel", "square", format!("{kh}×{kw}")));
    }
    // Small planes and wide layers go through the matrix product.
    if stride == 1 && h * wd >= DIRECT_MIN_PLANE && c * co < DIRECT_MAX_CHANNEL_PAIRS {
        let ho = super::conv_output_size(h, padding, kh, 1)?;
        let wo = super::conv_output_size(wd, padding, kh, 1)?;
        let g = Direct { b, c, co, h, w: wd, k: kh, pad: padding, ho, wo };
        return Ok(x.contiguous()?.apply_op2(&w.contiguous()?, DirectConv(g))?);
    }
    gemm_conv(x, w, stride, padding)
}

/// im2col followed by one matrix product per sample.
fn gemm_conv(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, c, h, wd) = x.dims4()?;
    let (co, _, k, _) = w.dims4()?;
    let g = Geometry::new(c, h, wd, k, stride, padding)?;
    let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
    let y = w.reshape((co, g.rows()))?.broadcast_matmul(&cols)?;
    Ok(y.reshape((b, co, g.ho, g.wo))?)
}
