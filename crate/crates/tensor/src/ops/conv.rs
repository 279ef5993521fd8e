//! 2-D cross-correlation and its transpose, lowered to GEMM via im2col.
//! Depthwise convolutions take a direct tap-major path.

use rayon::prelude::*;

use crate::element::{gemm, Element};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dParams {
    /// Stride-1 convolution whose output keeps the input extent (odd `k`).
    pub fn same(kernel: usize, dilation: usize, groups: usize) -> Self {
        Conv2dParams { stride: 1, padding: same_padding(kernel, dilation), dilation, groups }
    }
}

/// Zero padding that preserves spatial extent for an odd kernel.
pub fn same_padding(kernel: usize, dilation: usize) -> usize {
    dilation * (kernel - 1) / 2
}

/// Output extent of a convolution along one axis, if at least 1.
pub fn conv_out_extent(input: usize, kernel: usize, p: &Conv2dParams) -> Option<usize> {
    let span = p.dilation * (kernel - 1) + 1;
    let padded = input + 2 * p.padding;
    (padded >= span && p.stride > 0).then(|| (padded - span) / p.stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output index range along one axis for a given tap offset.
    #[inline]
    fn valid(&self, tap: usize, out: usize, input: usize) -> (usize, usize) {
        // in = o*stride + tap*dil - pad must lie in [0, input)
        let off = tap * self.dil;
        let lo = if off >= self.pad { 0 } else { (self.pad - off).div_ceil(self.stride) };
        let hi = if input + self.pad > off {
            ((input + self.pad - off - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Element>(x: &[T], g: &Geom, col: &mut [T]) {
    let p = g.cols();
    if g.pad > 0 {
        col.fill(T::zero());
    }
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy0, oy1) = g.valid(ki, g.oh, g.h);
            for kj in 0..g.kw {
                let (ox0, ox1) = g.valid(kj, g.ow, g.w);
                if ox0 >= ox1 {
                    continue;
                }
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki * g.dil - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if g.stride == 1 {
                        let s0 = ox0 + kj * g.dil - g.pad;
                        dst[ox0..ox1].copy_from_slice(&src[s0..s0 + ox1 - ox0]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * g.stride + kj * g.dil - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `x`.
fn col2im<T: Element>(col: &[T], g: &Geom, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy0, oy1) = g.valid(ki, g.oh, g.h);
            for kj in 0..g.kw {
                let (ox0, ox1) = g.valid(kj, g.ow, g.w);
                if ox0 >= ox1 {
                    continue;
                }
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki * g.dil - g.pad;
                    let src = &col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let d0 = ox0 + kj * g.dil - g.pad;
                        dst[d0..d0 + ox1 - ox0].iter_mut().zip(&src[ox0..ox1]).for_each(|(d, &v)| *d += v);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox * g.stride + kj * g.dil - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Depthwise forward for one plane: `out += w ⋆ x`.
fn depthwise_plane<T: Element>(x: &[T], w: &[T], g: &Geom, out: &mut [T]) {
    for ki in 0..g.kh {
        let (oy0, oy1) = g.valid(ki, g.oh, g.h);
        for kj in 0..g.kw {
            let wv = w[ki * g.kw + kj];
            let (ox0, ox1) = g.valid(kj, g.ow, g.w);
            if ox0 >= ox1 {
                continue;
            }
            for oy in oy0..oy1 {
                let iy = oy * g.stride + ki * g.dil - g.pad;
                let src = &x[iy * g.w..(iy + 1) * g.w];
                let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                if g.stride == 1 {
                    let s0 = ox0 + kj * g.dil - g.pad;
                    let src = &src[s0..s0 + ox1 - ox0];
                    dst[ox0..ox1].iter_mut().zip(src).for_each(|(d, &v)| *d += wv * v);
                } else {
                    for ox in ox0..ox1 {
                        dst[ox] += wv * src[ox * g.stride + kj * g.dil - g.pad];
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes
/// while the summation order stays fixed.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn depthwise_plane_backward<T: Element>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &Geom,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    for ki in 0..g.kh {
        let (oy0, oy1) = g.valid(ki, g.oh, g.h);
        for kj in 0..g.kw {
            let (ox0, ox1) = g.valid(kj, g.ow, g.w);
            if ox0 >= ox1 {
                continue;
            }
            let tap = ki * g.kw + kj;
            let wv = w[tap];
            let mut acc = T::zero();
            for oy in oy0..oy1 {
                let iy = oy * g.stride + ki * g.dil - g.pad;
                let go = &gout[oy * g.ow + ox0..oy * g.ow + ox1];
                let x0 = iy * g.w + ox0 * g.stride + kj * g.dil - g.pad;
                if g.stride == 1 {
                    let span = x0..x0 + go.len();
                    if gw.is_some() {
                        acc += dot(go, &x[span.clone()]);
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[span].iter_mut().zip(go).for_each(|(d, &v)| *d += wv * v);
                    }
                } else {
                    for (i, &v) in go.iter().enumerate() {
                        let ix = x0 + i * g.stride;
                        acc += v * x[ix];
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[ix] += wv * v;
                        }
                    }
                }
            }
            if let Some(gw) = gw.as_deref_mut() {
                gw[tap] += acc;
            }
        }
    }
}

/// Cross-correlation of `x` (N×C×H×W) with `w` (O×C/groups×kh×kw), optional
/// bias of length O.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd) = x.dims4("conv2d")?;
    let (cout, cin_g, kh, kw) = w.dims4("conv2d")?;
    if p.groups == 0 || p.stride == 0 || p.dilation == 0 {
        return Err(invalid("conv2d", format!("stride, dilation and groups must be positive: {p:?}")));
    }
    if cin % p.groups != 0 {
        return Err(shape_err("conv2d", format!("input channels {cin} not divisible by groups {}", p.groups)));
    }
    if cout % p.groups != 0 {
        return Err(shape_err("conv2d", format!("output channels {cout} not divisible by groups {}", p.groups)));
    }
    if cin_g != cin / p.groups {
        return Err(shape_err(
            "conv2d",
            format!("weight dimension 1 is {cin_g}, expected input channels / groups = {}", cin / p.groups),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{cout}]", b.shape())));
        }
    }
    let oh = conv_out_extent(h, kh, &p)
        .ok_or_else(|| shape_err("conv2d", format!("height {h} too small for kernel {kh} with {p:?}")))?;
    let ow = conv_out_extent(wd, kw, &p)
        .ok_or_else(|| shape_err("conv2d", format!("width {wd} too small for kernel {kw} with {p:?}")))?;

    let groups = p.groups;
    let cout_g = cout / groups;
    let depthwise = cin_g == 1 && cout_g == 1;
    let geom = Geom { c: cin_g, h, w: wd, kh, kw, stride: p.stride, pad: p.padding, dil: p.dilation, oh, ow };
    let in_plane = cin * h * wd;
    let out_plane = cout * oh * ow;
    let kdim = geom.rows();
    let pcols = geom.cols();

    let mut out = vec![T::zero(); n * out_plane];
    {
        let xguard = x.data();
        let wguard = w.data();
        let (xd, wdat): (&[T], &[T]) = (&xguard, &wguard);
        let bias = b.map(|b| b.to_vec());
        out.par_chunks_mut(out_plane).enumerate().for_each(|(ni, o)| {
            let xn = &xd[ni * in_plane..(ni + 1) * in_plane];
            if depthwise {
                for c in 0..cout {
                    depthwise_plane(
                        &xn[c * h * wd..(c + 1) * h * wd],
                        &wdat[c * kh * kw..(c + 1) * kh * kw],
                        &geom,
                        &mut o[c * pcols..(c + 1) * pcols],
                    );
                }
            } else {
                let mut col = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); kdim * pcols] };
                for gi in 0..groups {
                    let xg = &xn[gi * cin_g * h * wd..(gi + 1) * cin_g * h * wd];
                    let cols: &[T] = if geom.is_pointwise() {
                        xg
                    } else {
                        im2col(xg, &geom, &mut col);
                        &col
                    };
                    let wg = &wdat[gi * cout_g * kdim..(gi + 1) * cout_g * kdim];
                    let og = &mut o[gi * cout_g * pcols..(gi + 1) * cout_g * pcols];
                    gemm(cout_g, kdim, pcols, wg, false, cols, false, T::zero(), og);
                }
            }
            if let Some(bias) = &bias {
                for (c, plane) in o.chunks_exact_mut(pcols).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias[c]);
                }
            }
        });
    }

    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op("conv2d", out, vec![n, cout, oh, ow], inputs, move |g, inputs| {
        let (x, w) = (&inputs[0], &inputs[1]);
        let need_x = x.requires_grad();
        let need_w = w.requires_grad();
        let xguard = x.data();
        let wguard = w.data();
        let (xd, wdat): (&[T], &[T]) = (&xguard, &wguard);
        let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
            .into_par_iter()
            .map(|ni| {
                let xn = &xd[ni * in_plane..(ni + 1) * in_plane];
                let gn = &g[ni * out_plane..(ni + 1) * out_plane];
                let mut gx = need_x.then(|| vec![T::zero(); in_plane]);
                let mut gw = need_w.then(|| vec![T::zero(); wdat.len()]);
                if depthwise {
                    for c in 0..cout {
                        let plane = c * h * wd..(c + 1) * h * wd;
                        let taps = c * kh * kw..(c + 1) * kh * kw;
                        depthwise_plane_backward(
                            &xn[plane.clone()],
                            &wdat[taps.clone()],
                            &gn[c * pcols..(c + 1) * pcols],
                            &geom,
                            gx.as_mut().map(|v| &mut v[plane]),
                            gw.as_mut().map(|v| &mut v[taps]),
                        );
                    }
                } else {
                    let mut col = vec![T::zero(); kdim * pcols];
                    for gi in 0..groups {
                        let xg = &xn[gi * cin_g * h * wd..(gi + 1) * cin_g * h * wd];
                        let gg = &gn[gi * cout_g * pcols..(gi + 1) * cout_g * pcols];
                        let wg = &wdat[gi * cout_g * kdim..(gi + 1) * cout_g * kdim];
                        if let Some(gw) = gw.as_mut() {
                            let cols: &[T] = if geom.is_pointwise() {
                                xg
                            } else {
                                im2col(xg, &geom, &mut col);
                                &col
                            };
                            let gwg = &mut gw[gi * cout_g * kdim..(gi + 1) * cout_g * kdim];
                            gemm(cout_g, pcols, kdim, gg, false, cols, true, T::one(), gwg);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxg = &mut gx[gi * cin_g * h * wd..(gi + 1) * cin_g * h * wd];
                            if geom.is_pointwise() {
                                gemm(kdim, cout_g, pcols, wg, true, gg, false, T::one(), gxg);
                            } else {
                                gemm(kdim, cout_g, pcols, wg, true, gg, false, T::zero(), &mut col);
                                col2im(&col, &geom, gxg);
                            }
                        }
                    }
                }
                (gx, gw)
            })
            .collect();

        let mut gx_all = need_x.then(|| Vec::with_capacity(n * in_plane));
        let mut gw_all = need_w.then(|| vec![T::zero(); wdat.len()]);
        for (gx, gw) in per_sample {
            if let (Some(all), Some(gx)) = (gx_all.as_mut(), gx) {
                all.extend_from_slice(&gx);
            }
            if let (Some(all), Some(gw)) = (gw_all.as_mut(), gw) {
                all.iter_mut().zip(&gw).for_each(|(a, &v)| *a += v);
            }
        }
        let mut grads = vec![gx_all, gw_all];
        if inputs.len() == 3 {
            grads.push(inputs[2].requires_grad().then(|| bias_grad(g, n, cout, pcols)));
        }
        grads
    }))
}

fn bias_grad<T: Element>(g: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); c];
    for ni in 0..n {
        for (ci, gbc) in gb.iter_mut().enumerate() {
            let off = (ni * c + ci) * plane;
            *gbc += g[off..off + plane].iter().copied().sum::<T>();
        }
    }
    gb
}

/// Transposed convolution (adjoint of a stride-`stride` convolution without
/// padding). `w` is Cin×Cout×k×k; output extent is `(H−1)·stride + k`.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd) = x.dims4("conv_transpose2d")?;
    let (wcin, cout, kh, kw) = w.dims4("conv_transpose2d")?;
    if stride == 0 {
        return Err(invalid("conv_transpose2d", "stride must be positive"));
    }
    if wcin != cin {
        return Err(shape_err(
            "conv_transpose2d",
            format!("weight dimension 0 is {wcin}, input has {cin} channels"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err("conv_transpose2d", format!("bias shape {:?}, expected [{cout}]", b.shape())));
        }
    }
    let oh = (h - 1) * stride + kh;
    let ow = (wd - 1) * stride + kw;
    // Geometry of the forward convolution this op is the adjoint of.
    let geom = Geom { c: cout, h: oh, w: ow, kh, kw, stride, pad: 0, dil: 1, oh: h, ow: wd };
    let kdim = geom.rows();
    let pcols = h * wd;
    let in_plane = cin * pcols;
    let out_plane = cout * oh * ow;

    let mut out = vec![T::zero(); n * out_plane];
    {
        let xguard = x.data();
        let wguard = w.data();
        let (xd, wdat): (&[T], &[T]) = (&xguard, &wguard);
        let bias = b.map(|b| b.to_vec());
        out.par_chunks_mut(out_plane).enumerate().for_each(|(ni, o)| {
            let xn = &xd[ni * in_plane..(ni + 1) * in_plane];
            let mut col = vec![T::zero(); kdim * pcols];
            gemm(kdim, cin, pcols, wdat, true, xn, false, T::zero(), &mut col);
            col2im(&col, &geom, o);
            if let Some(bias) = &bias {
                for (c, plane) in o.chunks_exact_mut(oh * ow).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias[c]);
                }
            }
        });
    }

    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op("conv_transpose2d", out, vec![n, cout, oh, ow], inputs, move |g, inputs| {
        let (x, w) = (&inputs[0], &inputs[1]);
        let need_x = x.requires_grad();
        let need_w = w.requires_grad();
        let xguard = x.data();
        let wguard = w.data();
        let (xd, wdat): (&[T], &[T]) = (&xguard, &wguard);
        let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
            .into_par_iter()
            .map(|ni| {
                let gn = &g[ni * out_plane..(ni + 1) * out_plane];
                let xn = &xd[ni * in_plane..(ni + 1) * in_plane];
                let mut col = vec![T::zero(); kdim * pcols];
                im2col(gn, &geom, &mut col);
                let gx = need_x.then(|| {
                    let mut gx = vec![T::zero(); in_plane];
                    gemm(cin, kdim, pcols, wdat, false, &col, false, T::zero(), &mut gx);
                    gx
                });
                let gw = need_w.then(|| {
                    let mut gw = vec![T::zero(); wdat.len()];
                    gemm(cin, pcols, kdim, xn, false, &col, true, T::zero(), &mut gw);
                    gw
                });
                (gx, gw)
            })
            .collect();
        let mut gx_all = need_x.then(|| Vec::with_capacity(n * in_plane));
        let mut gw_all = need_w.then(|| vec![T::zero(); wdat.len()]);
        for (gx, gw) in per_sample {
            if let (Some(all), Some(gx)) = (gx_all.as_mut(), gx) {
                all.extend_from_slice(&gx);
            }
            if let (Some(all), Some(gw)) = (gw_all.as_mut(), gw) {
                all.iter_mut().zip(&gw).for_each(|(a, &v)| *a += v);
            }
        }
        let mut grads = vec![gx_all, gw_all];
        if inputs.len() == 3 {
            grads.push(inputs[2].requires_grad().then(|| bias_grad(g, n, cout, oh * ow)));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-loop convolution, independent of im2col and GEMM.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, p: Conv2dParams) -> Vec<f64> {
        let (n, cin, h, wd) = x.dims4("t").unwrap();
        let (cout, cin_g, kh, kw) = w.dims4("t").unwrap();
        let oh = conv_out_extent(h, kh, &p).unwrap();
        let ow = conv_out_extent(wd, kw, &p).unwrap();
        let cout_g = cout / p.groups;
        let (xd, wdat) = (x.to_vec(), w.to_vec());
        let mut out = vec![0.0; n * cout * oh * ow];
        for ni in 0..n {
            for co in 0..cout {
                let gi = co / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            let cin_abs = gi * cin_g + ci;
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * p.stride + ki * p.dilation) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kj * p.dilation) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += xd[((ni * cin + cin_abs) * h + iy as usize) * wd + ix as usize]
                                        * wdat[((co * cin_g + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let _ = cin;
        out
    }

    #[test]
    fn ones_kernel_sums_block() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &w, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![10.0]);
    }

    #[test]
    fn identity_depthwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
        let mut k = vec![0.0; 3 * 9];
        for c in 0..3 {
            k[c * 9 + 4] = 1.0;
        }
        let w = Tensor::new(k, &[3, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::same(3, 1, 3)).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn matches_naive_across_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            (4, 6, 3, Conv2dParams { stride: 1, padding: 1, dilation: 1, groups: 1 }),
            (4, 4, 5, Conv2dParams { stride: 1, padding: 4, dilation: 2, groups: 4 }),
            (4, 6, 3, Conv2dParams { stride: 2, padding: 1, dilation: 1, groups: 2 }),
            (3, 5, 1, Conv2dParams::default()),
            (2, 2, 7, Conv2dParams { stride: 1, padding: 9, dilation: 3, groups: 2 }),
            (2, 2, 3, Conv2dParams { stride: 2, padding: 0, dilation: 1, groups: 2 }),
        ];
        for (cin, cout, k, p) in cases {
            let x = Tensor::<f64>::rand_uniform(&[2, cin, 9, 8], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::rand_uniform(&[cout, cin / p.groups, k, k], -1.0, 1.0, &mut rng);
            let y = conv2d(&x, &w, None, p).unwrap();
            let want = naive_conv(&x, &w, p);
            for (a, b) in y.to_vec().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{p:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn output_extent_formula() {
        let p = Conv2dParams { stride: 2, padding: 1, dilation: 2, groups: 1 };
        // floor((10 + 2 - 2*2 - 1)/2) + 1 = 4
        assert_eq!(conv_out_extent(10, 3, &p), Some(4));
        assert_eq!(conv_out_extent(2, 5, &Conv2dParams::default()), None);
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        let err = conv2d(&x, &w, None, Conv2dParams::default()).unwrap_err().to_string();
        assert!(err.contains("weight dimension 1"), "{err}");
        let err = conv2d(&x, &Tensor::zeros(&[3, 1, 3, 3]), None, Conv2dParams::same(3, 1, 2)).unwrap_err();
        assert!(err.to_string().contains("not divisible by groups"));
    }

    #[test]
    fn transpose_expands_single_pixel() {
        let x = Tensor::<f64>::new(vec![5.0], &[1, 1, 1, 1]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        let y = conv_transpose2d(&x, &w, None, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![5.0; 4]);
        let z = conv_transpose2d(&Tensor::<f64>::zeros(&[1, 1, 3, 3]), &w, None, 2).unwrap();
        assert!(z.to_vec().iter().all(|&v| v == 0.0));
        assert!(conv_transpose2d(&Tensor::<f64>::zeros(&[1, 3, 3]), &w, None, 2).is_err());
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for matching geometry
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::rand_uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::rand_uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng);
        let cx = conv2d(&x, &w, None, Conv2dParams { stride: 2, ..Default::default() }).unwrap();
        // The conv weight O×I×k×k is the Cin×Cout layout the transpose expects.
        let ty = conv_transpose2d(&y, &w, None, 2).unwrap();
        let lhs: f64 = cx.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.to_vec().iter().zip(ty.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
