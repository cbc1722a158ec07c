//! Primitive layers: convolution, batch normalization, max pooling, dense,
//! and the elementwise activations.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2, Dimension, Zip};
use rand::Rng;

use super::{running, trainable, Module, Param, Real, Slot};
use crate::error::{Error, Result};
use crate::rng::{standard_normal_pair, uniform};

fn contract(msg: String) -> Error {
    Error::Contract(msg)
}

/// Unfolds one `[C, H, W]` image into `[C·k·k, Ho·Wo]` columns (stride 1).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, col: &mut [T]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                let ox0 = pad.saturating_sub(kx).min(wo);
                let ox1 = (w + pad).saturating_sub(kx).min(wo);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || ox0 >= ox1 {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..ox0].fill(T::zero());
                    dst[ox1..].fill(T::zero());
                    let ix0 = ox0 + kx - pad;
                    let src = &plane[iy as usize * w + ix0..][..ox1 - ox0];
                    dst[ox0..ox1].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, H, W]`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, x: &mut [T]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                let ox0 = pad.saturating_sub(kx).min(wo);
                let ox1 = (w + pad).saturating_sub(kx).min(wo);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let ix0 = ox0 + kx - pad;
                    let dst = &mut plane[iy as usize * w + ix0..][..ox1 - ox0];
                    for (d, s) in dst.iter_mut().zip(&row[oy * wo + ox0..oy * wo + ox1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Stride-1 2-D convolution with zero padding and bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    input: Option<Array4<T>>,
}

impl<T: Real> Conv2d<T> {
    /// Weights ~ N(0, 2 / (out·k·k)), zero bias.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, padding: usize, rng: &mut R) -> Self {
        let n = out_channels * in_channels * kernel * kernel;
        let std = (2.0 / (out_channels * kernel * kernel) as f64).sqrt();
        let mut value = Vec::with_capacity(n);
        while value.len() < n {
            let (a, b) = standard_normal_pair(rng);
            value.push(T::of(a * std));
            if value.len() < n {
                value.push(T::of(b * std));
            }
        }
        Self {
            weight: Param::trainable(&[out_channels, in_channels, kernel, kernel], value),
            bias: Param::trainable(&[out_channels], vec![T::zero(); out_channels]),
            in_channels,
            out_channels,
            kernel,
            padding,
            input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(contract(format!(
                "conv kernel {} does not fit padded input {hp}×{wp}",
                self.kernel
            )));
        }
        Ok((hp - self.kernel + 1, wp - self.kernel + 1))
    }

    fn direct(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let (b, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(contract(format!("conv expects {} input channels, got {c}", self.in_channels)));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let (p, kk, co) = (ho * wo, c * self.kernel * self.kernel, self.out_channels);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let wmat = ArrayView2::from_shape((co, kk), &self.weight.value).expect("weight shape");
        let mut y = Array4::<T>::zeros((b, co, ho, wo));
        let ys = y.as_slice_mut().expect("fresh array");
        let mut col = if self.direct() { Vec::new() } else { vec![T::zero(); kk * p] };
        let in_len = c * h * w;
        for bi in 0..b {
            let xb = &xs[bi * in_len..(bi + 1) * in_len];
            let colv = if self.direct() {
                ArrayView2::from_shape((kk, p), xb).expect("direct view")
            } else {
                im2col(xb, c, h, w, self.kernel, self.padding, ho, wo, &mut col);
                ArrayView2::from_shape((kk, p), &col[..]).expect("col view")
            };
            let yb = &mut ys[bi * co * p..(bi + 1) * co * p];
            let mut ymat = ArrayViewMut2::from_shape((co, p), yb).expect("out view");
            general_mat_mul(T::one(), &wmat, &colv, T::zero(), &mut ymat);
            for (mut row, &bias) in ymat.outer_iter_mut().zip(&self.bias.value) {
                row.mapv_inplace(|v| v + bias);
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.as_standard_layout().into_owned());
        Ok(y)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_input_grad`.
    pub fn backward(&mut self, dy: &Array4<T>, need_input_grad: bool) -> Result<Option<Array4<T>>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| contract("conv backward without a cached forward".into()))?;
        let (b, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w)?;
        if dy.dim() != (b, self.out_channels, ho, wo) {
            return Err(contract(format!(
                "conv output gradient {:?} does not match {:?}",
                dy.dim(),
                (b, self.out_channels, ho, wo)
            )));
        }
        let (p, kk, co) = (ho * wo, c * self.kernel * self.kernel, self.out_channels);
        let (direct, k, pad) = (self.direct(), self.kernel, self.padding);
        let xs = x.as_slice().expect("cached input is standard");
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let wmat = ArrayView2::from_shape((co, kk), &self.weight.value).expect("weight shape");
        let mut dw = ArrayViewMut2::from_shape((co, kk), &mut self.weight.grad).expect("grad shape");
        let bias_grad = &mut self.bias.grad;
        let mut dx = need_input_grad.then(|| Array4::<T>::zeros((b, c, h, w)));
        let mut col = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
        let mut dcol = if need_input_grad { vec![T::zero(); kk * p] } else { Vec::new() };
        let in_len = c * h * w;
        for bi in 0..b {
            let xb = &xs[bi * in_len..(bi + 1) * in_len];
            let colv = if direct {
                ArrayView2::from_shape((kk, p), xb).expect("direct view")
            } else {
                im2col(xb, c, h, w, k, pad, ho, wo, &mut col);
                ArrayView2::from_shape((kk, p), &col[..]).expect("col view")
            };
            let dyb = ArrayView2::from_shape((co, p), &dys[bi * co * p..(bi + 1) * co * p]).expect("dy view");
            general_mat_mul(T::one(), &dyb, &colv.t(), T::one(), &mut dw);
            for (g, row) in bias_grad.iter_mut().zip(dyb.outer_iter()) {
                *g += row.sum();
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.as_slice_mut().expect("fresh array")[bi * in_len..(bi + 1) * in_len];
                if direct {
                    let mut dxv = ArrayViewMut2::from_shape((kk, p), dxs).expect("dx view");
                    general_mat_mul(T::one(), &wmat.t(), &dyb, T::zero(), &mut dxv);
                } else {
                    let mut dcolv = ArrayViewMut2::from_shape((kk, p), &mut dcol[..]).expect("dcol view");
                    general_mat_mul(T::one(), &wmat.t(), &dyb, T::zero(), &mut dcolv);
                    col2im(&dcol, c, h, w, k, pad, ho, wo, dxs);
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        trainable(out, prefix, "weight", &mut self.weight);
        trainable(out, prefix, "bias", &mut self.bias);
    }
}

/// Per-channel batch normalization over `(B, H, W)`.
///
/// Training uses batch statistics and updates running estimates with
/// `momentum` (unbiased variance); inference uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array4<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Param::trainable(&[channels], vec![T::one(); channels]),
            beta: Param::trainable(&[channels], vec![T::zero(); channels]),
            running_mean: Param::running(&[channels], vec![T::zero(); channels]),
            running_var: Param::running(&[channels], vec![T::one(); channels]),
            momentum,
            eps,
            cache: None,
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        if c != self.gamma.len() {
            return Err(contract(format!("batch norm expects {} channels, got {c}", self.gamma.len())));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let (_, c, _, _) = x.dim();
        self.check(c)?;
        let mut y = x.as_standard_layout().into_owned();
        for (ci, mut plane) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let inv = T::one() / (self.running_var.value[ci] + T::of(self.eps)).sqrt();
            let scale = self.gamma.value[ci] * inv;
            let shift = self.beta.value[ci] - self.running_mean.value[ci] * scale;
            plane.mapv_inplace(|v| v * scale + shift);
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let (b, c, h, w) = x.dim();
        self.check(c)?;
        let hw = h * w;
        let m = b * hw;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut xhat = Array4::<T>::zeros((b, c, h, w));
        let mut y = Array4::<T>::zeros((b, c, h, w));
        let mut invstds = Vec::with_capacity(c);
        {
            let xh = xhat.as_slice_mut().expect("fresh");
            let ys = y.as_slice_mut().expect("fresh");
            for ci in 0..c {
                let planes = || (0..b).map(move |bi| (bi * c + ci) * hw);
                let mut sum = 0.0;
                for o in planes() {
                    sum += xs[o..o + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0;
                for o in planes() {
                    ss += xs[o..o + hw].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = ss / m as f64;
                let invstd = 1.0 / (var + self.eps).sqrt();
                let (mean_t, inv_t) = (T::of(mean), T::of(invstd));
                let (g, bt) = (self.gamma.value[ci], self.beta.value[ci]);
                for o in planes() {
                    for i in o..o + hw {
                        let n = (xs[i] - mean_t) * inv_t;
                        xh[i] = n;
                        ys[i] = g * n + bt;
                    }
                }
                let mom = self.momentum;
                let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
                let rm = &mut self.running_mean.value[ci];
                *rm = T::of((1.0 - mom) * rm.as_f64() + mom * mean);
                let rv = &mut self.running_var.value[ci];
                *rv = T::of((1.0 - mom) * rv.as_f64() + mom * unbiased);
                invstds.push(inv_t);
            }
        }
        self.cache = Some((xhat, invstds));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let (xhat, invstds) = self
            .cache
            .take()
            .ok_or_else(|| contract("batch norm backward without a cached forward".into()))?;
        if dy.dim() != xhat.dim() {
            return Err(contract(format!("batch norm gradient {:?} vs {:?}", dy.dim(), xhat.dim())));
        }
        let (b, c, h, w) = xhat.dim();
        let hw = h * w;
        let m = (b * hw) as f64;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let xh = xhat.as_slice().expect("standard layout");
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh");
        for ci in 0..c {
            let (mut sdy, mut sdyx) = (0.0, 0.0);
            for bi in 0..b {
                let o = (bi * c + ci) * hw;
                for i in o..o + hw {
                    let d = dys[i].as_f64();
                    sdy += d;
                    sdyx += d * xh[i].as_f64();
                }
            }
            self.gamma.grad[ci] += T::of(sdyx);
            self.beta.grad[ci] += T::of(sdy);
            let k = T::of(self.gamma.value[ci].as_f64() * invstds[ci].as_f64() / m);
            let (mt, sdy_t, sdyx_t) = (T::of(m), T::of(sdy), T::of(sdyx));
            for bi in 0..b {
                let o = (bi * c + ci) * hw;
                for i in o..o + hw {
                    dxs[i] = k * (mt * dys[i] - sdy_t - xh[i] * sdyx_t);
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        trainable(out, prefix, "gamma", &mut self.gamma);
        trainable(out, prefix, "beta", &mut self.beta);
        running(out, prefix, "running_mean", &mut self.running_mean);
        running(out, prefix, "running_var", &mut self.running_var);
    }
}

pub fn relu_inplace<T: Real, D: Dimension>(a: &mut ndarray::Array<T, D>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward<T: Real, D: Dimension>(grad: &mut ndarray::Array<T, D>, output: &ndarray::Array<T, D>) {
    Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Logistic function, kept strictly inside (0, 1) at the working precision.
pub fn sigmoid<T: Real>(z: T) -> T {
    let s = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(hi)
}

/// 2×2, stride-2 max pooling; odd trailing rows/columns form partial windows.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool2 {
    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    fn pool<T: Real>(x: &Array4<T>, keep_argmax: bool) -> (Array4<T>, Vec<u32>) {
        let (b, c, h, w) = x.dim();
        let (ho, wo) = Self::output_hw(h, w);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::<T>::zeros((b, c, ho, wo));
        let ys = y.as_slice_mut().expect("fresh");
        let mut arg = if keep_argmax { vec![0u32; b * c * ho * wo] } else { Vec::new() };
        for plane in 0..b * c {
            let xo = plane * h * w;
            let yo = plane * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = xo + 2 * oy * w + 2 * ox;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                            if iy < h && ix < w {
                                let i = xo + iy * w + ix;
                                if xs[i] > xs[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    ys[yo + oy * wo + ox] = xs[best];
                    if keep_argmax {
                        arg[yo + oy * wo + ox] = (best - xo) as u32;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn infer<T: Real>(&self, x: &Array4<T>) -> Array4<T> {
        Self::pool(x, false).0
    }

    pub fn forward<T: Real>(&mut self, x: &Array4<T>) -> Array4<T> {
        let (y, arg) = Self::pool(x, true);
        let (b, c, h, w) = x.dim();
        self.cache = Some((arg, [b, c, h, w]));
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let (arg, [b, c, h, w]) = self
            .cache
            .take()
            .ok_or_else(|| contract("max pool backward without a cached forward".into()))?;
        let (ho, wo) = Self::output_hw(h, w);
        if dy.dim() != (b, c, ho, wo) {
            return Err(contract(format!("max pool gradient {:?} vs {:?}", dy.dim(), (b, c, ho, wo))));
        }
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh");
        for plane in 0..b * c {
            let (xo, yo) = (plane * h * w, plane * ho * wo);
            for j in 0..ho * wo {
                dxs[xo + arg[yo + j] as usize] += dys[yo + j];
            }
        }
        Ok(dx)
    }
}

/// Fully connected layer `y = x·Wᵀ + b`, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Array2<T>>,
}

impl<T: Real> Dense<T> {
    /// Weights ~ U(−1/√in, 1/√in), zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let value = (0..inputs * outputs)
            .map(|_| T::of(uniform(rng, -bound, bound)))
            .collect();
        Self {
            weight: Param::trainable(&[outputs, inputs], value),
            bias: Param::trainable(&[outputs], vec![T::zero(); outputs]),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn infer(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.inputs() {
            return Err(contract(format!("dense expects {} inputs, got {}", self.inputs(), x.ncols())));
        }
        let w = ArrayView2::from_shape((self.outputs(), self.inputs()), &self.weight.value).expect("weight shape");
        let mut y = Array2::<T>::zeros((x.nrows(), self.outputs()));
        general_mat_mul(T::one(), &x, &w.t(), T::zero(), &mut y);
        for mut row in y.outer_iter_mut() {
            Zip::from(&mut row).and(&self.bias.value[..]).for_each(|v, &b| *v += b);
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.to_owned());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Result<Array2<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| contract("dense backward without a cached forward".into()))?;
        if dy.dim() != (x.nrows(), self.outputs()) {
            return Err(contract(format!("dense gradient {:?} vs {:?}", dy.dim(), (x.nrows(), self.outputs()))));
        }
        let (o, i) = (self.outputs(), self.inputs());
        let mut dw = ArrayViewMut2::from_shape((o, i), &mut self.weight.grad).expect("grad shape");
        general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut dw);
        for row in dy.outer_iter() {
            Zip::from(&mut self.bias.grad[..]).and(&row).for_each(|g, &d| *g += d);
        }
        let w = ArrayView2::from_shape((o, i), &self.weight.value).expect("weight shape");
        let mut dx = Array2::<T>::zeros((x.nrows(), i));
        general_mat_mul(T::one(), dy, &w, T::zero(), &mut dx);
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        trainable(out, prefix, "weight", &mut self.weight);
        trainable(out, prefix, "bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = stream(seed, Stream::Init);
        Array4::from_shape_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(x: &Array4<f64>, conv: &Conv2d<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let (k, p, co) = (conv.kernel, conv.padding as isize, conv.out_channels);
        let (ho, wo) = conv.output_hw(h, w).unwrap();
        let wt = Array4::from_shape_vec((co, c, k, k), conv.weight.value.clone()).unwrap();
        Array4::from_shape_fn((b, co, ho, wo), |(bi, o, y, xx)| {
            let mut acc = conv.bias.value[o];
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - p;
                        let ix = xx as isize + kx as isize - p;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            acc += wt[[o, ci, ky, kx]] * x[[bi, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut r = stream(1, Stream::Init);
        for &(k, p) in &[(3, 1), (7, 3), (1, 0), (3, 0)] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, p, &mut r);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = rand4((2, 3, 6, 5), 2);
            let y = conv.infer(&x).unwrap();
            let want = conv_oracle(&x, &conv);
            assert_eq!(y.dim(), want.dim());
            for (a, b) in y.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let mut r = stream(1, Stream::Init);
        let conv = Conv2d::<f64>::new(3, 4, 3, 1, &mut r);
        assert!(matches!(conv.infer(&Array4::zeros((1, 2, 4, 4))), Err(Error::Contract(_))));
    }

    #[test]
    fn single_conv_parameter_count() {
        let mut r = stream(1, Stream::Init);
        let mut conv = Conv2d::<f32>::new(2, 128, 3, 1, &mut r);
        assert_eq!(conv.parameter_count(), 2432);
    }

    #[test]
    fn batch_norm_normalizes_and_tracks() {
        let mut bn = BatchNorm2d::<f64>::new(3, 0.1, 1e-5);
        let x = rand4((4, 3, 5, 5), 3).mapv(|v| 2.0 * v + 1.0);
        let y = bn.forward(&x).unwrap();
        for plane in y.axis_iter(ndarray::Axis(1)) {
            let m = plane.mean().unwrap();
            let v = plane.mapv(|a| (a - m) * (a - m)).mean().unwrap();
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        for ci in 0..3 {
            let plane = x.index_axis(ndarray::Axis(1), ci);
            let mean = plane.mean().unwrap();
            assert!((bn.running_mean.value[ci] - 0.1 * mean).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_constant_tile_and_odd_sizes() {
        let x = Array4::from_elem((1, 1, 2, 2), 3.5f64);
        assert_eq!(MaxPool2::default().infer(&x)[[0, 0, 0, 0]], 3.5);
        let x = rand4((1, 2, 5, 3), 4);
        let y = MaxPool2::default().infer(&x);
        assert_eq!(y.dim(), (1, 2, 3, 2));
        assert_eq!(y[[0, 1, 2, 1]], x[[0, 1, 4, 2]]);
    }

    #[test]
    fn sigmoid_stays_open() {
        for z in [-1e4f32, -100.0, -20.0, 0.0, 20.0, 100.0, 1e4] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "{z} -> {s}");
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn dense_matches_hand_product() {
        let mut r = stream(5, Stream::Init);
        let mut d = Dense::<f64>::new(3, 2, &mut r);
        d.weight.value = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        d.bias.value = vec![0.25, -0.5];
        let x = Array2::from_shape_vec((1, 3), vec![2.0, -1.0, 4.0]).unwrap();
        let y = d.infer(x.view()).unwrap();
        assert_eq!(y[[0, 0]], 2.0 - 2.0 + 12.0 + 0.25);
        assert_eq!(y[[0, 1]], -2.0 - 0.5 + 0.0 - 0.5);
    }
}
