//! Layer implementations. Convolutions run on zero-padded copies so inner
//! loops stay branch-free; the upsample+conv layer folds the nearest-neighbor
//! expansion into per-phase 2×2 kernels evaluated at the source resolution,
//! which matches the reference upsample-then-convolve computation tap for tap.
//!
//! Inner loops are written as separate dot / axpy passes over length-narrowed
//! slices: mixing a reduction and a store stream in one loop (or leaving a
//! bounds check the compiler cannot elide) blocks vectorization, which costs
//! roughly an order of magnitude on the wide tensors this crate trains on.

use rand::Rng;

use super::init::Init;
use super::tensor::Tensor;
use super::{Layer, LayerSpec, Param, Scalar};

fn relu_mask_mul<T: Scalar>(grad: &Tensor<T>, pre: &Tensor<T>, slope: T) -> Tensor<T> {
    assert_eq!(grad.shape(), pre.shape());
    let mut out = grad.clone();
    let o = out.data_mut();
    for (v, &p) in o.iter_mut().zip(pre.data()) {
        if p <= T::zero() {
            *v *= slope;
        }
    }
    out
}

fn masked_grad<T: Scalar>(grad_out: &Tensor<T>, mask: &[u8], slope: T) -> Tensor<T> {
    assert_eq!(grad_out.len(), mask.len());
    let mut out = grad_out.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        if m == 0 {
            *v *= slope;
        }
    }
    out
}

/// Zero-pads a `[B, C, H, W]` batch by `pad` on each spatial side.
fn pad_batch<T: Scalar>(x: &Tensor<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let (bs, c, h, w) = x.dims4();
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    let mut out = vec![T::zero(); bs * c * hp * wp];
    let xd = x.data();
    for bc in 0..bs * c {
        let src = &xd[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * hp * wp..(bc + 1) * hp * wp];
        for row in 0..h {
            let d = (row + pad) * wp + pad;
            dst[d..d + w].copy_from_slice(&src[row * w..row * w + w]);
        }
    }
    (out, hp, wp)
}

/// Crops the padding back off a `[B, C, H+2p, W+2p]` gradient buffer.
fn crop_batch<T: Scalar>(buf: &[T], bs: usize, c: usize, h: usize, w: usize, pad: usize) -> Tensor<T> {
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    let mut out = Tensor::zeros(&[bs, c, h, w]);
    let od = out.data_mut();
    for bc in 0..bs * c {
        let src = &buf[bc * hp * wp..(bc + 1) * hp * wp];
        let dst = &mut od[bc * h * w..(bc + 1) * h * w];
        for row in 0..h {
            let s = (row + pad) * wp + pad;
            dst[row * w..row * w + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

/// `dst[r][c] += Σ_{kr,kc} w9[kr*3+kc] · src[r+kr][c+kc]` for an `oh × ow`
/// destination plane over a padded source plane with rows `sw` wide.
fn corr3_rows<T: Scalar>(src: &[T], sw: usize, dst: &mut [T], oh: usize, ow: usize, w9: &[T]) {
    for kr in 0..3 {
        let (w0, w1, w2) = (w9[kr * 3], w9[kr * 3 + 1], w9[kr * 3 + 2]);
        for r in 0..oh {
            let xrow = &src[(r + kr) * sw..(r + kr) * sw + sw];
            let orow = &mut dst[r * ow..r * ow + ow];
            let x0 = &xrow[..ow];
            let x1 = &xrow[1..1 + ow];
            let x2 = &xrow[2..2 + ow];
            for t in 0..ow {
                orow[t] += w0 * x0[t] + w1 * x1[t] + w2 * x2[t];
            }
        }
    }
}

/// Output width at or below which convolutions switch to the per-pixel patch
/// route: the row-sliced kernels vectorize along the output row, so rows this
/// short leave the vector units mostly idle.
const SMALL_CONV_WIDTH: usize = 16;

/// Vector width of the output-channel accumulator tiles in the patch route.
const OC_TILE: usize = 16;

/// Convolution for short output rows: each output pixel accumulates along the
/// output-channel axis (axpy with the transposed weights, `OC_TILE` channels
/// per register tile), reading its input patch in place — no reduction lanes,
/// no staging buffer.
#[allow(clippy::too_many_arguments)]
fn patch_forward<T: Scalar>(
    xsrc: &[T],
    bs: usize,
    ic: usize,
    hp: usize,
    wp: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    wd: &[T],
    bd: &[T],
    oc: usize,
    od: &mut [T],
) {
    let cl = ic * k * k;
    let mut wt = vec![T::zero(); cl * oc];
    for o in 0..oc {
        for c in 0..cl {
            wt[c * oc + o] = wd[o * cl + c];
        }
    }
    let pix = oh * ow;
    for b in 0..bs {
        let xb = &xsrc[b * ic * hp * wp..(b + 1) * ic * hp * wp];
        let ob = &mut od[b * oc * pix..(b + 1) * oc * pix];
        for oy in 0..oh {
            for ox in 0..ow {
                let p = oy * ow + ox;
                let mut base = 0;
                while base < oc {
                    let lanes = (oc - base).min(OC_TILE);
                    let mut acc = [T::zero(); OC_TILE];
                    acc[..lanes].copy_from_slice(&bd[base..base + lanes]);
                    let mut c = 0;
                    for i in 0..ic {
                        let xplane = &xb[i * hp * wp..];
                        for kr in 0..k {
                            let src = &xplane[(oy * s + kr) * wp + ox * s..][..k];
                            for &v in src {
                                if v != T::zero() {
                                    let wrow = &wt[c * oc + base..][..lanes];
                                    if lanes == OC_TILE {
                                        for j in 0..OC_TILE {
                                            acc[j] += wrow[j] * v;
                                        }
                                    } else {
                                        for (a, &w) in acc[..lanes].iter_mut().zip(wrow) {
                                            *a += w * v;
                                        }
                                    }
                                }
                                c += 1;
                            }
                        }
                    }
                    for (j, &a) in acc[..lanes].iter().enumerate() {
                        ob[(base + j) * pix + p] = a;
                    }
                    base += lanes;
                }
            }
        }
    }
}

/// Pixels processed together in `patch_backward`, so the weight-gradient and
/// weight streams are amortized over the tile instead of reloaded per pixel.
const PIX_TILE: usize = 8;

/// Backward for the patch route. Per tile of output pixels: assemble the
/// local patches, jam their weight-gradient contributions (one pass over
/// `dW`), build the patch gradients from one pass over `W`, and scatter them
/// back onto the padded input-gradient buffer.
#[allow(clippy::too_many_arguments)]
fn patch_backward<T: Scalar>(
    xsrc: &[T],
    gd: &[T],
    wd: &[T],
    bs: usize,
    ic: usize,
    hp: usize,
    wp: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    oc: usize,
    dwd: &mut [T],
    dbd: &mut [T],
    dxpad: &mut [T],
) {
    let cl = ic * k * k;
    let pix = oh * ow;
    let mut patches = vec![T::zero(); PIX_TILE * cl];
    let mut dcols = vec![T::zero(); PIX_TILE * cl];
    let mut gt = vec![T::zero(); oc * PIX_TILE];
    for b in 0..bs {
        let xb = &xsrc[b * ic * hp * wp..(b + 1) * ic * hp * wp];
        let dxb = &mut dxpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
        let gb = &gd[b * oc * pix..(b + 1) * oc * pix];
        let mut p0 = 0;
        while p0 < pix {
            let nt = (pix - p0).min(PIX_TILE);
            let mut any = false;
            for o in 0..oc {
                let gp = &gb[o * pix + p0..o * pix + p0 + nt];
                gt[o * PIX_TILE..o * PIX_TILE + nt].copy_from_slice(gp);
                let mut bsum = T::zero();
                for &g in gp {
                    bsum += g;
                    if g != T::zero() {
                        any = true;
                    }
                }
                dbd[o] += bsum;
            }
            if !any {
                p0 += nt;
                continue;
            }
            for t in 0..nt {
                let (oy, ox) = ((p0 + t) / ow, (p0 + t) % ow);
                let dst = &mut patches[t * cl..t * cl + cl];
                let mut c = 0;
                for i in 0..ic {
                    let xplane = &xb[i * hp * wp..];
                    for kr in 0..k {
                        let src = &xplane[(oy * s + kr) * wp + ox * s..][..k];
                        dst[c..c + k].copy_from_slice(src);
                        c += k;
                    }
                }
            }
            dcols[..nt * cl].fill(T::zero());
            for o in 0..oc {
                let go = &gt[o * PIX_TILE..o * PIX_TILE + nt];
                if go.iter().all(|&g| g == T::zero()) {
                    continue;
                }
                let wo = &wd[o * cl..o * cl + cl];
                let dwo = &mut dwd[o * cl..o * cl + cl];
                if nt == PIX_TILE {
                    for (cc, dw) in dwo.iter_mut().enumerate() {
                        let mut a = *dw;
                        for t in 0..PIX_TILE {
                            a += go[t] * patches[t * cl + cc];
                        }
                        *dw = a;
                    }
                } else {
                    for (t, &g) in go.iter().enumerate() {
                        if g == T::zero() {
                            continue;
                        }
                        let pt = &patches[t * cl..t * cl + cl];
                        for (dw, &pv) in dwo.iter_mut().zip(pt) {
                            *dw += g * pv;
                        }
                    }
                }
                for (t, &g) in go.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let dc = &mut dcols[t * cl..t * cl + cl];
                    for (dv, &wv) in dc.iter_mut().zip(wo) {
                        *dv += g * wv;
                    }
                }
            }
            for t in 0..nt {
                let (oy, ox) = ((p0 + t) / ow, (p0 + t) % ow);
                let dc = &dcols[t * cl..t * cl + cl];
                let mut c = 0;
                for i in 0..ic {
                    let plane = &mut dxb[i * hp * wp..];
                    for kr in 0..k {
                        let dst = &mut plane[(oy * s + kr) * wp + ox * s..][..k];
                        for (dv, &cv) in dst.iter_mut().zip(&dc[c..c + k]) {
                            *dv += cv;
                        }
                        c += k;
                    }
                }
            }
            p0 += nt;
        }
    }
}

/// Adjoint of nearest-neighbor upsampling: sums each `f×f` output block back
/// onto its source cell.
fn block_sum_downsample<T: Scalar>(dup: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (bs, c, oh, ow) = dup.dims4();
    let (hs, ws) = (oh / factor, ow / factor);
    debug_assert_eq!((hs * factor, ws * factor), (oh, ow));
    let mut dx = Tensor::zeros(&[bs, c, hs, ws]);
    let dupd = dup.data();
    let dxd = dx.data_mut();
    for bc in 0..bs * c {
        let sp = &dupd[bc * oh * ow..(bc + 1) * oh * ow];
        let dp = &mut dxd[bc * hs * ws..(bc + 1) * hs * ws];
        for y in 0..hs {
            let drow = &mut dp[y * ws..y * ws + ws];
            for dy in 0..factor {
                let srow = &sp[(y * factor + dy) * ow..(y * factor + dy) * ow + ow];
                for x in 0..ws {
                    for dxc in 0..factor {
                        drow[x] += srow[x * factor + dxc];
                    }
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

pub struct Dense<T: Scalar = f64> {
    inputs: usize,
    outputs: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        let mut w = Tensor::zeros(&[outputs, inputs]);
        for v in w.data_mut() {
            *v = init.sample(inputs, outputs, rng);
        }
        Dense {
            inputs,
            outputs,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[outputs])),
            cache_x: None,
        }
    }

    fn compute(&self, x: &Tensor<T>) -> Tensor<T> {
        let (bs, f) = x.dims2();
        assert_eq!(f, self.inputs, "dense input width mismatch");
        let mut out = Tensor::zeros(&[bs, self.outputs]);
        let od = out.data_mut();
        let wd = self.w.value.data();
        let bd = self.b.value.data();
        let xd = x.data();
        for b in 0..bs {
            let xrow = &xd[b * f..(b + 1) * f];
            let orow = &mut od[b * self.outputs..(b + 1) * self.outputs];
            for o in 0..self.outputs {
                let wrow = &wd[o * f..(o + 1) * f];
                let mut acc = bd[o];
                for i in 0..f {
                    acc += wrow[i] * xrow[i];
                }
                orow[o] = acc;
            }
        }
        out
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Dense { inputs: self.inputs, outputs: self.outputs }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.compute(x)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.compute(x);
        self.cache_x = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.cache_x.as_ref().expect("dense backward before forward");
        let (bs, f) = x.dims2();
        let (gb, go) = grad_out.dims2();
        assert_eq!(gb, bs);
        assert_eq!(go, self.outputs);
        let mut dx = Tensor::zeros(&[bs, f]);
        let dxd = dx.data_mut();
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.w.value.data();
        let dwd = self.w.grad.data_mut();
        let dbd = self.b.grad.data_mut();
        for b in 0..bs {
            let xrow = &xd[b * f..(b + 1) * f];
            let grow = &gd[b * self.outputs..(b + 1) * self.outputs];
            let dxrow = &mut dxd[b * f..(b + 1) * f];
            for o in 0..self.outputs {
                let g = grow[o];
                if g == T::zero() {
                    continue;
                }
                dbd[o] += g;
                let wrow = &wd[o * f..(o + 1) * f];
                let dwrow = &mut dwd[o * f..(o + 1) * f];
                for i in 0..f {
                    dwrow[i] += g * xrow[i];
                }
                for i in 0..f {
                    dxrow[i] += g * wrow[i];
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

struct ConvCache<T: Scalar> {
    xpad: Vec<T>,
    bs: usize,
    h: usize,
    w: usize,
}

pub struct Conv2d<T: Scalar = f64> {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        let mut w = Tensor::zeros(&[out_ch, in_ch, kernel, kernel]);
        for v in w.data_mut() {
            *v = init.sample(fan_in, fan_out, rng);
        }
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[out_ch])),
            cache: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        let s = self.stride;
        assert!(h + 2 * p >= k && w + 2 * p >= k, "conv input smaller than kernel");
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    fn compute(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Option<ConvCache<T>>) {
        let (bs, ic, h, w) = x.dims4();
        assert_eq!(ic, self.in_ch, "conv input channels mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding;
        // Padding 0 needs no staging copy; read the input in place.
        let (owned, hp, wp) = if p == 0 { (None, h, w) } else {
            let (buf, hp, wp) = pad_batch(x, p);
            (Some(buf), hp, wp)
        };
        let xsrc: &[T] = owned.as_deref().unwrap_or_else(|| x.data());
        let mut out = Tensor::zeros(&[bs, self.out_ch, oh, ow]);
        let od = out.data_mut();
        let wd = self.w.value.data();
        let bd = self.b.value.data();
        if k > 1 && ow <= SMALL_CONV_WIDTH {
            patch_forward(xsrc, bs, ic, hp, wp, k, s, oh, ow, wd, bd, self.out_ch, od);
            let cache = keep.then(|| ConvCache {
                xpad: owned.unwrap_or_else(|| x.data().to_vec()),
                bs,
                h,
                w,
            });
            return (out, cache);
        }
        for b in 0..bs {
            let xb = &xsrc[b * ic * hp * wp..(b + 1) * ic * hp * wp];
            let ob = &mut od[b * self.out_ch * oh * ow..(b + 1) * self.out_ch * oh * ow];
            for o in 0..self.out_ch {
                let oplane = &mut ob[o * oh * ow..(o + 1) * oh * ow];
                oplane.fill(bd[o]);
                if k == 1 && s == 1 {
                    for i in 0..ic {
                        let wv = wd[o * ic + i];
                        let xplane = &xb[i * hp * wp..(i + 1) * hp * wp];
                        for (ov, &xv) in oplane.iter_mut().zip(xplane) {
                            *ov += wv * xv;
                        }
                    }
                    continue;
                }
                for i in 0..ic {
                    let xplane = &xb[i * hp * wp..(i + 1) * hp * wp];
                    if k == 3 && s == 1 {
                        let w9 = &wd[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
                        corr3_rows(xplane, wp, oplane, oh, ow, w9);
                        continue;
                    }
                    for kr in 0..k {
                        let wrow = &wd[((o * ic + i) * k + kr) * k..((o * ic + i) * k + kr) * k + k];
                        for ohh in 0..oh {
                            let xrow = &xplane[(ohh * s + kr) * wp..(ohh * s + kr) * wp + wp];
                            let orow = &mut oplane[ohh * ow..ohh * ow + ow];
                            if s == 1 {
                                for (kc, &wv) in wrow.iter().enumerate() {
                                    let xs = &xrow[kc..kc + ow];
                                    for t in 0..ow {
                                        orow[t] += wv * xs[t];
                                    }
                                }
                            } else {
                                for (kc, &wv) in wrow.iter().enumerate() {
                                    for t in 0..ow {
                                        orow[t] += wv * xrow[t * s + kc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let cache = if keep {
            let xpad = owned.unwrap_or_else(|| x.data().to_vec());
            Some(ConvCache { xpad, bs, h, w })
        } else {
            None
        };
        (out, cache)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.compute(x, false).0
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (out, cache) = self.compute(x, true);
        self.cache = cache;
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("conv backward before forward");
        let (bs, ic, h, w) = (cache.bs, self.in_ch, cache.h, cache.w);
        let (gbs, goc, oh, ow) = grad_out.dims4();
        assert_eq!(gbs, bs);
        assert_eq!(goc, self.out_ch);
        let p = self.padding;
        let k = self.kernel;
        let s = self.stride;
        let oc = self.out_ch;
        let hp = h + 2 * p;
        let wp = w + 2 * p;
        let gd = grad_out.data();
        let wd = self.w.value.data();
        let dwd = self.w.grad.data_mut();
        let dbd = self.b.grad.data_mut();

        let xpad = &cache.xpad;

        if k > 1 && ow <= SMALL_CONV_WIDTH {
            let mut dxpad = vec![T::zero(); bs * ic * hp * wp];
            patch_backward(
                xpad, gd, wd, bs, ic, hp, wp, k, s, oh, ow, oc, dwd, dbd, &mut dxpad,
            );
            return crop_batch(&dxpad, bs, ic, h, w, p);
        }

        if k == 1 && s == 1 {
            // 1×1 kernels reduce to flat dots and axpys over whole planes.
            debug_assert_eq!(p, 0);
            let mut dx = Tensor::zeros(&[bs, ic, h, w]);
            let dxd = dx.data_mut();
            for b in 0..bs {
                let xb = &xpad[b * ic * h * w..(b + 1) * ic * h * w];
                let gb = &gd[b * oc * oh * ow..(b + 1) * oc * oh * ow];
                let dxb = &mut dxd[b * ic * h * w..(b + 1) * ic * h * w];
                for o in 0..oc {
                    let gplane = &gb[o * oh * ow..(o + 1) * oh * ow];
                    dbd[o] += gplane.iter().copied().sum::<T>();
                    for i in 0..ic {
                        let xplane = &xb[i * h * w..(i + 1) * h * w];
                        let mut acc = T::zero();
                        for (gv, xv) in gplane.iter().zip(xplane) {
                            acc += *gv * *xv;
                        }
                        dwd[o * ic + i] += acc;
                        let wv = wd[o * ic + i];
                        let dxplane = &mut dxb[i * h * w..(i + 1) * h * w];
                        for (dv, gv) in dxplane.iter_mut().zip(gplane) {
                            *dv += wv * *gv;
                        }
                    }
                }
            }
            return dx;
        }

        // Bias and weight gradients (read-only over x and g).
        for b in 0..bs {
            let xb = &xpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
            let gb = &gd[b * oc * oh * ow..(b + 1) * oc * oh * ow];
            for o in 0..oc {
                let gplane = &gb[o * oh * ow..(o + 1) * oh * ow];
                dbd[o] += gplane.iter().copied().sum::<T>();
                for i in 0..ic {
                    let xplane = &xb[i * hp * wp..(i + 1) * hp * wp];
                    for kr in 0..k {
                        let wbase = ((o * ic + i) * k + kr) * k;
                        if s == 1 && k == 3 {
                            let (mut a0, mut a1, mut a2) = (T::zero(), T::zero(), T::zero());
                            for ohh in 0..oh {
                                let grow = &gplane[ohh * ow..ohh * ow + ow];
                                let xrow = &xplane[(ohh + kr) * wp..(ohh + kr) * wp + wp];
                                let x0 = &xrow[..ow];
                                let x1 = &xrow[1..1 + ow];
                                let x2 = &xrow[2..2 + ow];
                                for t in 0..ow {
                                    a0 += grow[t] * x0[t];
                                    a1 += grow[t] * x1[t];
                                    a2 += grow[t] * x2[t];
                                }
                            }
                            dwd[wbase] += a0;
                            dwd[wbase + 1] += a1;
                            dwd[wbase + 2] += a2;
                        } else {
                            for kc in 0..k {
                                let mut acc = T::zero();
                                for ohh in 0..oh {
                                    let grow = &gplane[ohh * ow..ohh * ow + ow];
                                    let xrow =
                                        &xplane[(ohh * s + kr) * wp..(ohh * s + kr) * wp + wp];
                                    for t in 0..ow {
                                        acc += grow[t] * xrow[t * s + kc];
                                    }
                                }
                                dwd[wbase + kc] += acc;
                            }
                        }
                    }
                }
            }
        }

        // Input gradients.
        let mut dxpad = vec![T::zero(); bs * ic * hp * wp];
        if s == 1 && k == 3 {
            // dxpad = full correlation of g with the flipped kernel: pad g by
            // 2 and reuse the forward 3×3 kernel per (i, o) pair.
            let (gpad, ghp, gwp) = pad_batch(grad_out, 2);
            debug_assert_eq!((ghp, gwp), (hp + 2, wp + 2));
            for b in 0..bs {
                let gb = &gpad[b * oc * ghp * gwp..(b + 1) * oc * ghp * gwp];
                let dxb = &mut dxpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                for i in 0..ic {
                    let dxplane = &mut dxb[i * hp * wp..(i + 1) * hp * wp];
                    for o in 0..oc {
                        let gplane = &gb[o * ghp * gwp..(o + 1) * ghp * gwp];
                        let w9 = &wd[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
                        let wf = [w9[8], w9[7], w9[6], w9[5], w9[4], w9[3], w9[2], w9[1], w9[0]];
                        corr3_rows(gplane, gwp, dxplane, hp, wp, &wf);
                    }
                }
            }
        } else {
            for b in 0..bs {
                let gb = &gd[b * oc * oh * ow..(b + 1) * oc * oh * ow];
                let dxb = &mut dxpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                for i in 0..ic {
                    let dxplane = &mut dxb[i * hp * wp..(i + 1) * hp * wp];
                    for o in 0..oc {
                        let gplane = &gb[o * oh * ow..(o + 1) * oh * ow];
                        for kr in 0..k {
                            let wbase = ((o * ic + i) * k + kr) * k;
                            for kc in 0..k {
                                let wv = wd[wbase + kc];
                                for ohh in 0..oh {
                                    let grow = &gplane[ohh * ow..ohh * ow + ow];
                                    let dxrow =
                                        &mut dxplane[(ohh * s + kr) * wp..(ohh * s + kr) * wp + wp];
                                    if s == 1 {
                                        let dxs = &mut dxrow[kc..kc + ow];
                                        for t in 0..ow {
                                            dxs[t] += wv * grow[t];
                                        }
                                    } else {
                                        for t in 0..ow {
                                            dxrow[t * s + kc] += wv * grow[t];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        crop_batch(&dxpad, bs, ic, h, w, p)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// UpsampleConv: nearest-neighbor ×factor then conv3×3 (pad 1), fused
// ---------------------------------------------------------------------------

/// Forward stash: padded input for the staged phase route, padded upsampled
/// input for the small-spatial patch route.
enum UpStash<T: Scalar> {
    Padded(Vec<T>),
    Upsampled(Vec<T>),
}

struct UpCache<T: Scalar> {
    stash: UpStash<T>,
    bs: usize,
    hs: usize,
    ws: usize,
}

pub struct UpsampleConv<T: Scalar = f64> {
    in_ch: usize,
    out_ch: usize,
    factor: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    cache: Option<UpCache<T>>,
}

/// Tap layout of one output phase: each of the 3 kernel offsets maps to one of
/// (at most) two source cells, identified by `base + slot`.
#[derive(Clone, Copy)]
struct PhaseAxis {
    /// Source offset of slot 0 relative to the output block (-1 or 0).
    base: isize,
    /// Slot (0/1) used by each kernel offset.
    slot: [usize; 3],
}

fn phase_axis(phase: usize, factor: usize) -> PhaseAxis {
    let f = factor as isize;
    let base = (phase as isize - 1).div_euclid(f);
    let mut slot = [0usize; 3];
    for (t, s) in slot.iter_mut().enumerate() {
        let d = (phase as isize + t as isize - 1).div_euclid(f);
        let rel = d - base;
        debug_assert!(rel == 0 || rel == 1);
        *s = rel as usize;
    }
    PhaseAxis { base, slot }
}

impl<T: Scalar> UpsampleConv<T> {
    pub fn new(in_ch: usize, out_ch: usize, factor: usize, init: Init, rng: &mut impl Rng) -> Self {
        assert!(factor >= 2, "upsample factor must be at least 2");
        let fan_in = in_ch * 9;
        let fan_out = out_ch * 9;
        let mut w = Tensor::zeros(&[out_ch, in_ch, 3, 3]);
        for v in w.data_mut() {
            *v = init.sample(fan_in, fan_out, rng);
        }
        UpsampleConv {
            in_ch,
            out_ch,
            factor,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[out_ch])),
            cache: None,
        }
    }

    /// Effective 2×2 kernels for one (row-phase, col-phase) pair, flattened as
    /// `[oc][ic][a*2+b]`.
    fn effective(&self, py: &PhaseAxis, px: &PhaseAxis) -> Vec<T> {
        let wd = self.w.value.data();
        let mut e = vec![T::zero(); self.out_ch * self.in_ch * 4];
        for oi in 0..self.out_ch * self.in_ch {
            let wk = &wd[oi * 9..oi * 9 + 9];
            let ek = &mut e[oi * 4..oi * 4 + 4];
            for t in 0..3 {
                for u in 0..3 {
                    ek[py.slot[t] * 2 + px.slot[u]] += wk[t * 3 + u];
                }
            }
        }
        e
    }

    /// Computes one phase plane (all output channels) for sample slice `xb`.
    fn phase_plane(
        &self,
        xb: &[T],
        hp: usize,
        wp: usize,
        hs: usize,
        ws: usize,
        py: &PhaseAxis,
        cbase: usize,
        e: &[T],
        plane: &mut [T],
    ) {
        let ic = self.in_ch;
        let oc = self.out_ch;
        let bd = self.b.value.data();
        for o in 0..oc {
            plane[o * hs * ws..(o + 1) * hs * ws].fill(bd[o]);
        }
        for o in 0..oc {
            let pl = &mut plane[o * hs * ws..(o + 1) * hs * ws];
            for i in 0..ic {
                let ek = &e[(o * ic + i) * 4..(o * ic + i) * 4 + 4];
                let xplane = &xb[i * hp * wp..(i + 1) * hp * wp];
                for a in 0..2usize {
                    let (e0, e1) = (ek[a * 2], ek[a * 2 + 1]);
                    if e0 == T::zero() && e1 == T::zero() {
                        continue;
                    }
                    for by in 0..hs {
                        let sr = (by as isize + py.base + a as isize + 1) as usize;
                        let xrow = &xplane[sr * wp..sr * wp + wp];
                        let prow = &mut pl[by * ws..by * ws + ws];
                        let x0 = &xrow[cbase..cbase + ws];
                        let x1 = &xrow[cbase + 1..cbase + 1 + ws];
                        for bx in 0..ws {
                            prow[bx] += e0 * x0[bx] + e1 * x1[bx];
                        }
                    }
                }
            }
        }
    }

    fn compute(&self, x: &Tensor<T>) -> (Tensor<T>, UpCache<T>) {
        let (bs, ic, hs, ws) = x.dims4();
        assert_eq!(ic, self.in_ch, "upsample-conv input channels mismatch");
        let f = self.factor;
        let oc = self.out_ch;
        if ws * f <= SMALL_CONV_WIDTH {
            // Tiny outputs: materialize the upsampled image and run the conv
            // through the patch route, which vectorizes along channels instead
            // of the (too short) rows.
            let (oh, ow) = (hs * f, ws * f);
            let xup = upsample_nearest(x, f);
            let (upad, hp, wp) = pad_batch(&xup, 1);
            let mut out = Tensor::zeros(&[bs, oc, oh, ow]);
            patch_forward(
                &upad,
                bs,
                ic,
                hp,
                wp,
                3,
                1,
                oh,
                ow,
                self.w.value.data(),
                self.b.value.data(),
                oc,
                out.data_mut(),
            );
            return (out, UpCache { stash: UpStash::Upsampled(upad), bs, hs, ws });
        }
        let (xpad, hp, wp) = pad_batch(x, 1);
        debug_assert_eq!((hp, wp), (hs + 2, ws + 2));
        let mut out = Tensor::zeros(&[bs, oc, hs * f, ws * f]);
        let od = out.data_mut();
        // Phase planes for one row-phase are staged for all column phases,
        // then interleaved into the output row by row: writing each output
        // row once beats scattering stride-f stores f times over.
        let mut stage = vec![T::zero(); f * oc * hs * ws];
        for py_i in 0..f {
            let py = phase_axis(py_i, f);
            let effs: Vec<Vec<T>> = (0..f)
                .map(|px_i| self.effective(&py, &phase_axis(px_i, f)))
                .collect();
            for b in 0..bs {
                let xb = &xpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                for px_i in 0..f {
                    let px = phase_axis(px_i, f);
                    let cbase = (px.base + 1) as usize;
                    self.phase_plane(
                        xb,
                        hp,
                        wp,
                        hs,
                        ws,
                        &py,
                        cbase,
                        &effs[px_i],
                        &mut stage[px_i * oc * hs * ws..(px_i + 1) * oc * hs * ws],
                    );
                }
                let ob = &mut od[b * oc * hs * f * ws * f..(b + 1) * oc * hs * f * ws * f];
                for o in 0..oc {
                    let oplane = &mut ob[o * hs * f * ws * f..(o + 1) * hs * f * ws * f];
                    for by in 0..hs {
                        let orow =
                            &mut oplane[(by * f + py_i) * ws * f..(by * f + py_i + 1) * ws * f];
                        for px_i in 0..f {
                            let prow = &stage[(px_i * oc + o) * hs * ws + by * ws..];
                            for bx in 0..ws {
                                orow[bx * f + px_i] = prow[bx];
                            }
                        }
                    }
                }
            }
        }
        (out, UpCache { stash: UpStash::Padded(xpad), bs, hs, ws })
    }
}

impl<T: Scalar> Layer<T> for UpsampleConv<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::UpsampleConv { in_ch: self.in_ch, out_ch: self.out_ch, factor: self.factor }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.compute(x).0
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (out, cache) = self.compute(x);
        self.cache = Some(cache);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("upsample-conv backward before forward");
        let (bs, hs, ws) = (cache.bs, cache.hs, cache.ws);
        let (gbs, goc, gh, gw) = grad_out.dims4();
        let f = self.factor;
        assert_eq!(gbs, bs);
        assert_eq!(goc, self.out_ch);
        assert_eq!((gh, gw), (hs * f, ws * f));
        let ic = self.in_ch;
        let oc = self.out_ch;
        if let UpStash::Upsampled(upad) = &cache.stash {
            let (uhp, uwp) = (gh + 2, gw + 2);
            let gd = grad_out.data();
            let mut duppad = vec![T::zero(); bs * ic * uhp * uwp];
            patch_backward(
                upad,
                gd,
                self.w.value.data(),
                bs,
                ic,
                uhp,
                uwp,
                3,
                1,
                gh,
                gw,
                oc,
                self.w.grad.data_mut(),
                self.b.grad.data_mut(),
                &mut duppad,
            );
            let dup = crop_batch(&duppad, bs, ic, gh, gw, 1);
            return block_sum_downsample(&dup, f);
        }
        let UpStash::Padded(xpad) = &cache.stash else {
            unreachable!("upsampled stash handled above");
        };
        let xpad: &[T] = xpad;
        let (hp, wp) = (hs + 2, ws + 2);
        let mut dxpad = vec![T::zero(); bs * ic * hp * wp];
        let gd = grad_out.data();
        let mut stage = vec![T::zero(); f * oc * hs * ws];
        let mut de = vec![T::zero(); f * oc * ic * 4];
        // Weight gradients are routed through the per-phase effective kernels;
        // biases accumulate directly since every output pixel has one phase.
        {
            let dbd = self.b.grad.data_mut();
            for b in 0..bs {
                let gb = &gd[b * oc * gh * gw..(b + 1) * oc * gh * gw];
                for o in 0..oc {
                    dbd[o] += gb[o * gh * gw..(o + 1) * gh * gw].iter().copied().sum::<T>();
                }
            }
        }
        for py_i in 0..f {
            let py = phase_axis(py_i, f);
            de.fill(T::zero());
            for b in 0..bs {
                let gb = &gd[b * oc * gh * gw..(b + 1) * oc * gh * gw];
                // Gather all column phases in one sequential read of g.
                for o in 0..oc {
                    let gplane = &gb[o * gh * gw..(o + 1) * gh * gw];
                    for by in 0..hs {
                        let grow = &gplane[(by * f + py_i) * gw..(by * f + py_i + 1) * gw];
                        for px_i in 0..f {
                            let drow = &mut stage
                                [(px_i * oc + o) * hs * ws + by * ws..(px_i * oc + o) * hs * ws + by * ws + ws];
                            for bx in 0..ws {
                                drow[bx] = grow[bx * f + px_i];
                            }
                        }
                    }
                }
                let xb = &xpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                let dxb = &mut dxpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                for px_i in 0..f {
                    let px = phase_axis(px_i, f);
                    let e = self.effective(&py, &px);
                    let cbase = (px.base + 1) as usize;
                    let col1 = px.slot.contains(&1);
                    let dplane = &stage[px_i * oc * hs * ws..(px_i + 1) * oc * hs * ws];
                    let de_px = &mut de[px_i * oc * ic * 4..(px_i + 1) * oc * ic * 4];
                    for o in 0..oc {
                        let dpl = &dplane[o * hs * ws..(o + 1) * hs * ws];
                        for i in 0..ic {
                            let ek = &e[(o * ic + i) * 4..(o * ic + i) * 4 + 4];
                            let dek_base = (o * ic + i) * 4;
                            let xplane = &xb[i * hp * wp..(i + 1) * hp * wp];
                            let dxplane = &mut dxb[i * hp * wp..(i + 1) * hp * wp];
                            for a in 0..2usize {
                                // Slot-1 taps only exist when some kernel
                                // offset crosses a block boundary; skip
                                // structurally unused slots (their de entries
                                // are never read by the routing below).
                                if a == 1 && !py.slot.contains(&1) {
                                    continue;
                                }
                                let (e0, e1) = (ek[a * 2], ek[a * 2 + 1]);
                                let mut acc0 = T::zero();
                                let mut acc1 = T::zero();
                                for by in 0..hs {
                                    let sr = (by as isize + py.base + a as isize + 1) as usize;
                                    let xrow = &xplane[sr * wp..sr * wp + wp];
                                    let drow = &dpl[by * ws..by * ws + ws];
                                    let x0 = &xrow[cbase..cbase + ws];
                                    for bx in 0..ws {
                                        acc0 += drow[bx] * x0[bx];
                                    }
                                    let dxrow = &mut dxplane[sr * wp..sr * wp + wp];
                                    {
                                        let dx0 = &mut dxrow[cbase..cbase + ws];
                                        for bx in 0..ws {
                                            dx0[bx] += e0 * drow[bx];
                                        }
                                    }
                                    if col1 {
                                        let x1 = &xrow[cbase + 1..cbase + 1 + ws];
                                        for bx in 0..ws {
                                            acc1 += drow[bx] * x1[bx];
                                        }
                                        let dx1 = &mut dxrow[cbase + 1..cbase + 1 + ws];
                                        for bx in 0..ws {
                                            dx1[bx] += e1 * drow[bx];
                                        }
                                    }
                                }
                                de_px[dek_base + a * 2] += acc0;
                                de_px[dek_base + a * 2 + 1] += acc1;
                            }
                        }
                    }
                }
            }
            // Route effective-kernel gradients back to the 3×3 weights.
            let dwd = self.w.grad.data_mut();
            for px_i in 0..f {
                let px = phase_axis(px_i, f);
                let de_px = &de[px_i * oc * ic * 4..(px_i + 1) * oc * ic * 4];
                for oi in 0..oc * ic {
                    let dwk = &mut dwd[oi * 9..oi * 9 + 9];
                    let dek = &de_px[oi * 4..oi * 4 + 4];
                    for t in 0..3 {
                        for u in 0..3 {
                            dwk[t * 3 + u] += dek[py.slot[t] * 2 + px.slot[u]];
                        }
                    }
                }
            }
        }
        crop_batch(&dxpad, bs, ic, hs, ws, 1)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Reference semantics of [`UpsampleConv`]: explicit nearest-neighbor
/// upsampling. Exposed for tests and for building comparison stacks.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (bs, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[bs, c, h * factor, w * factor]);
    let od = out.data_mut();
    let xd = x.data();
    for bc in 0..bs * c {
        let src = &xd[bc * h * w..(bc + 1) * h * w];
        let dst = &mut od[bc * h * factor * w * factor..(bc + 1) * h * factor * w * factor];
        for row in 0..h * factor {
            let srow = &src[(row / factor) * w..(row / factor) * w + w];
            let drow = &mut dst[row * w * factor..(row + 1) * w * factor];
            for col in 0..w * factor {
                drow[col] = srow[col / factor];
            }
        }
    }
    out
}

/// Per-sample extrema of `head(relu(up(x)))` — the maximum over the upsampled
/// plane plus the values at the requested `(row, col)` output coordinates —
/// computed phase by phase without materializing the upsampled field. `head`
/// must be a 1×1 single-output convolution; this is the screening hot path,
/// where allocating the full-resolution field would dominate the cost.
pub fn fused_tail_extrema<T: Scalar>(
    up: &UpsampleConv<T>,
    head: &Conv2d<T>,
    x: &Tensor<T>,
    points: &[(usize, usize)],
) -> Vec<(T, Vec<T>)> {
    let (hk, hs_, hw) = (head.kernel, head.stride, head.padding);
    assert_eq!((hk, hs_, hw), (1, 1, 0), "fused tail needs a 1×1 head conv");
    assert_eq!(head.out_ch, 1, "fused tail needs a single-output head");
    assert_eq!(head.in_ch, up.out_ch);
    let (bs, ic, hs, ws) = x.dims4();
    assert_eq!(ic, up.in_ch);
    let f = up.factor;
    let (xpad, hp, wp) = pad_batch(x, 1);
    let oc = up.out_ch;
    let hwd = head.w.value.data();
    let hb = head.b.value.data()[0];
    let mut plane = vec![T::zero(); oc * hs * ws];
    let mut folded = vec![T::zero(); hs * ws];
    let mut out = vec![(T::neg_infinity(), vec![T::zero(); points.len()]); bs];
    for py_i in 0..f {
        let py = phase_axis(py_i, f);
        for px_i in 0..f {
            let px = phase_axis(px_i, f);
            let e = up.effective(&py, &px);
            let cbase = (px.base + 1) as usize;
            for (b, entry) in out.iter_mut().enumerate() {
                let xb = &xpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                up.phase_plane(xb, hp, wp, hs, ws, &py, cbase, &e, &mut plane);
                folded.fill(hb);
                for o in 0..oc {
                    let wv = hwd[o];
                    let pl = &plane[o * hs * ws..(o + 1) * hs * ws];
                    for (fv, &pv) in folded.iter_mut().zip(pl) {
                        *fv += wv * pv.max(T::zero());
                    }
                }
                for &fv in &folded {
                    if fv > entry.0 {
                        entry.0 = fv;
                    }
                }
                for (pi, &(pr, pc)) in points.iter().enumerate() {
                    if pr % f == py_i && pc % f == px_i {
                        entry.1[pi] = folded[(pr / f) * ws + pc / f];
                    }
                }
            }
        }
    }
    out
}

/// Per-sample extrema of a single-output upsample-conv — the maximum over the
/// would-be output plane plus the values at the `(row, col)` coordinates —
/// without materializing the plane. Used for linear network tails, where the
/// 1×1 head folds into the up-conv weights beforehand.
pub fn upconv_extrema<T: Scalar>(
    up: &UpsampleConv<T>,
    x: &Tensor<T>,
    points: &[(usize, usize)],
) -> Vec<(T, Vec<T>)> {
    assert_eq!(up.out_ch, 1, "extrema reduction needs a single-output up-conv");
    let (bs, ic, hs, ws) = x.dims4();
    assert_eq!(ic, up.in_ch);
    let f = up.factor;
    let (xpad, hp, wp) = pad_batch(x, 1);
    let mut plane = vec![T::zero(); hs * ws];
    let mut out = vec![(T::neg_infinity(), vec![T::zero(); points.len()]); bs];
    for py_i in 0..f {
        let py = phase_axis(py_i, f);
        for px_i in 0..f {
            let px = phase_axis(px_i, f);
            let e = up.effective(&py, &px);
            let cbase = (px.base + 1) as usize;
            for (b, entry) in out.iter_mut().enumerate() {
                let xb = &xpad[b * ic * hp * wp..(b + 1) * ic * hp * wp];
                up.phase_plane(xb, hp, wp, hs, ws, &py, cbase, &e, &mut plane);
                for &pv in &plane {
                    if pv > entry.0 {
                        entry.0 = pv;
                    }
                }
                for (pi, &(pr, pc)) in points.iter().enumerate() {
                    if pr % f == py_i && pc % f == px_i {
                        entry.1[pi] = plane[(pr / f) * ws + pc / f];
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct Relu {
    // Sign mask of the last forward input; enough for the gradient.
    mask: Option<Vec<u8>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Relu
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        out
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        let mut mask = vec![0u8; x.len()];
        for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
            if *v > T::zero() {
                *m = 1;
            } else {
                *v = T::zero();
            }
        }
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.as_ref().expect("relu backward before forward");
        masked_grad(grad_out, mask, T::zero())
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

pub struct LeakyRelu {
    slope: f64,
    mask: Option<Vec<u8>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        LeakyRelu { slope, mask: None }
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu {
    fn spec(&self) -> LayerSpec {
        LayerSpec::LeakyRelu { slope: self.slope }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::from_f64(self.slope);
        let mut out = x.clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v *= slope;
            }
        }
        out
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::from_f64(self.slope);
        let mut out = x.clone();
        let mut mask = vec![0u8; x.len()];
        for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
            if *v > T::zero() {
                *m = 1;
            } else {
                *v *= slope;
            }
        }
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.as_ref().expect("leaky-relu backward before forward");
        masked_grad(grad_out, mask, T::from_f64(self.slope))
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[derive(Default)]
pub struct Sigmoid<T: Scalar = f64> {
    cache_y: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Sigmoid { cache_y: None }
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Sigmoid
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        for v in out.data_mut() {
            *v = sigmoid_scalar(*v);
        }
        out
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.infer(x);
        self.cache_y = Some(out.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let y = self.cache_y.as_ref().expect("sigmoid backward before forward");
        let mut dx = grad_out.clone();
        for (v, &s) in dx.data_mut().iter_mut().zip(y.data()) {
            *v *= s * (T::one() - s);
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Reshape / GlobalAvgPool
// ---------------------------------------------------------------------------

pub struct Reshape {
    shape: Vec<usize>,
    cache_in_shape: Option<Vec<usize>>,
}

impl Reshape {
    /// `shape` is the per-sample shape; the batch axis passes through.
    pub fn new(shape: Vec<usize>) -> Self {
        Reshape { shape, cache_in_shape: None }
    }

    fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let bs = x.shape()[0];
        let per: usize = x.shape()[1..].iter().product();
        let want: usize = self.shape.iter().product();
        assert_eq!(per, want, "reshape volume mismatch: {:?} -> {:?}", x.shape(), self.shape);
        let mut full = vec![bs];
        full.extend_from_slice(&self.shape);
        x.clone().reshaped(&full).expect("validated volume")
    }
}

impl<T: Scalar> Layer<T> for Reshape {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Reshape { shape: self.shape.clone() }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.apply(x);
        self.cache_in_shape = Some(x.shape().to_vec());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let shape = self.cache_in_shape.as_ref().expect("reshape backward before forward");
        grad_out.clone().reshaped(shape).expect("gradient volume matches")
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

#[derive(Default)]
pub struct GlobalAvgPool {
    cache_in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }

    fn apply<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        let (bs, c, h, w) = x.dims4();
        let hw = T::from_f64((h * w) as f64);
        let mut out = Tensor::zeros(&[bs, c]);
        let od = out.data_mut();
        for bc in 0..bs * c {
            od[bc] = x.data()[bc * h * w..(bc + 1) * h * w].iter().copied().sum::<T>() / hw;
        }
        out
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn spec(&self) -> LayerSpec {
        LayerSpec::GlobalAvgPool
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::apply(x)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = Self::apply(x);
        self.cache_in_shape = Some(x.shape().to_vec());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let shape = self.cache_in_shape.as_ref().expect("pool backward before forward");
        let (bs, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = T::from_f64((h * w) as f64);
        let mut dx = Tensor::zeros(shape);
        let dd = dx.data_mut();
        for bc in 0..bs * c {
            let g = grad_out.data()[bc] / hw;
            dd[bc * h * w..(bc + 1) * h * w].fill(g);
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation gate and residual block
// ---------------------------------------------------------------------------

struct SeCache<T: Scalar> {
    x: Tensor<T>,
    pre1: Tensor<T>,
    s: Tensor<T>,
}

pub struct SeBlock<T: Scalar = f64> {
    channels: usize,
    reduction: usize,
    pub d1: Dense<T>,
    pub d2: Dense<T>,
    cache: Option<SeCache<T>>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        assert!(reduction >= 1 && channels % reduction == 0, "reduction must divide channels");
        let hidden = channels / reduction;
        SeBlock {
            channels,
            reduction,
            d1: Dense::new(channels, hidden, Init::He, rng),
            d2: Dense::new(hidden, channels, Init::Xavier, rng),
            cache: None,
        }
    }

    fn scale_of(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let gap = GlobalAvgPool::apply(x);
        let pre1 = self.d1.compute(&gap);
        let mut r1 = pre1.clone();
        for v in r1.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let pre2 = self.d2.compute(&r1);
        let mut s = pre2;
        for v in s.data_mut() {
            *v = sigmoid_scalar(*v);
        }
        (pre1, s)
    }

    fn gate(x: &Tensor<T>, s: &Tensor<T>) -> Tensor<T> {
        let (bs, c, h, w) = x.dims4();
        let mut out = x.clone();
        let od = out.data_mut();
        for b in 0..bs {
            for ch in 0..c {
                let f = s.data()[b * c + ch];
                for v in &mut od[(b * c + ch) * h * w..(b * c + ch + 1) * h * w] {
                    *v *= f;
                }
            }
        }
        out
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::SeBlock { channels: self.channels, reduction: self.reduction }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (_, s) = self.scale_of(x);
        Self::gate(x, &s)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let gap = GlobalAvgPool::apply(x);
        let pre1 = self.d1.forward(&gap);
        let mut r1 = pre1.clone();
        for v in r1.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let pre2 = self.d2.forward(&r1);
        let mut s = pre2;
        for v in s.data_mut() {
            *v = sigmoid_scalar(*v);
        }
        let out = Self::gate(x, &s);
        self.cache = Some(SeCache { x: x.clone(), pre1, s });
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("se backward before forward");
        let (bs, c, h, w) = cache.x.dims4();
        let hw = T::from_f64((h * w) as f64);
        assert_eq!(grad_out.shape(), cache.x.shape());
        // d/ds of the gate: per-channel dot of grad with x.
        let mut ds = Tensor::zeros(&[bs, c]);
        {
            let dsd = ds.data_mut();
            for bc in 0..bs * c {
                let g = &grad_out.data()[bc * h * w..(bc + 1) * h * w];
                let xv = &cache.x.data()[bc * h * w..(bc + 1) * h * w];
                let mut acc = T::zero();
                for (a, b) in g.iter().zip(xv) {
                    acc += *a * *b;
                }
                dsd[bc] = acc;
            }
        }
        // Through the sigmoid.
        let mut dpre2 = ds;
        for (v, &s) in dpre2.data_mut().iter_mut().zip(cache.s.data()) {
            *v *= s * (T::one() - s);
        }
        let dr1 = self.d2.backward(&dpre2);
        let dpre1 = relu_mask_mul(&dr1, &cache.pre1, T::zero());
        let dgap = self.d1.backward(&dpre1);
        // Direct path through the gate plus the pooled path.
        let mut dx = Self::gate(grad_out, &cache.s);
        {
            let dd = dx.data_mut();
            for bc in 0..bs * c {
                let add = dgap.data()[bc] / hw;
                for v in &mut dd[bc * h * w..(bc + 1) * h * w] {
                    *v += add;
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = Layer::<T>::params(&self.d1);
        p.extend(Layer::<T>::params(&self.d2));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = Layer::<T>::params_mut(&mut self.d1);
        p.extend(Layer::<T>::params_mut(&mut self.d2));
        p
    }
}

struct SrCache {
    mask1: Vec<u8>,
    masky: Vec<u8>,
}

pub struct SeResBlock<T: Scalar = f64> {
    channels: usize,
    reduction: usize,
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    se: SeBlock<T>,
    cache: Option<SrCache>,
}

impl<T: Scalar> SeResBlock<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        SeResBlock {
            channels,
            reduction,
            conv1: Conv2d::new(channels, channels, 3, 1, 1, Init::He, rng),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, Init::He, rng),
            se: SeBlock::new(channels, reduction, rng),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for SeResBlock<T> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::SeResBlock { channels: self.channels, reduction: self.reduction }
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let h1 = self.conv1.infer(x);
        let mut a1 = h1;
        for v in a1.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let h2 = self.conv2.infer(&a1);
        let se_out = self.se.infer(&h2);
        let mut y = se_out;
        for (v, &xv) in y.data_mut().iter_mut().zip(x.data()) {
            *v += xv;
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        y
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut a1 = self.conv1.forward(x);
        let mut mask1 = vec![0u8; a1.len()];
        for (v, m) in a1.data_mut().iter_mut().zip(mask1.iter_mut()) {
            if *v > T::zero() {
                *m = 1;
            } else {
                *v = T::zero();
            }
        }
        let h2 = self.conv2.forward(&a1);
        let se_out = self.se.forward(&h2);
        let mut y = se_out;
        let mut masky = vec![0u8; y.len()];
        for ((v, &xv), m) in y.data_mut().iter_mut().zip(x.data()).zip(masky.iter_mut()) {
            *v += xv;
            if *v > T::zero() {
                *m = 1;
            } else {
                *v = T::zero();
            }
        }
        self.cache = Some(SrCache { mask1, masky });
        y
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("residual backward before forward");
        let gp = masked_grad(grad_out, &cache.masky, T::zero());
        let dh2 = self.se.backward(&gp);
        let da1 = self.conv2.backward(&dh2);
        let dpre1 = masked_grad(&da1, &cache.mask1, T::zero());
        let mut dx = self.conv1.backward(&dpre1);
        for (v, &g) in dx.data_mut().iter_mut().zip(gp.data()) {
            *v += g;
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = Layer::<T>::params(&self.conv1);
        p.extend(Layer::<T>::params(&self.conv2));
        p.extend(Layer::<T>::params(&self.se));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = Layer::<T>::params_mut(&mut self.conv1);
        p.extend(Layer::<T>::params_mut(&mut self.conv2));
        p.extend(Layer::<T>::params_mut(&mut self.se));
        p
    }
}
