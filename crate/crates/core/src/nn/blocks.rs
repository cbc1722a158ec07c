//! Composite blocks of the positioning network.

use ndarray::{s, Array2, Array4, ArrayView2, Axis};
use rand::Rng;

use super::layers::{relu_backward, relu_inplace, sigmoid, BatchNorm2d, Conv2d, Dense, MaxPool2};
use super::{join, record, Module, Real, Slot, Trace};
use crate::error::{Error, Result};

fn expect_channels(what: &str, c: usize, want: usize) -> Result<()> {
    if c != want {
        return Err(Error::Contract(format!("{what} expects {want} channels, got {c}")));
    }
    Ok(())
}

/// Conv → BatchNorm → ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    output: Option<Array4<T>>,
}

impl<T: Real> ConvBnRelu<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kernel: usize, momentum: f64, eps: f64, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, kernel, kernel / 2, rng),
            bn: BatchNorm2d::new(cout, momentum, eps),
            output: None,
        }
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut y = self.bn.infer(&self.conv.infer(x)?)?;
        relu_inplace(&mut y);
        Ok(y)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let z = self.conv.forward(x)?;
        let mut y = self.bn.forward(&z)?;
        relu_inplace(&mut y);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>, need_input_grad: bool) -> Result<Option<Array4<T>>> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::Contract("conv unit backward without a cached forward".into()))?;
        let mut g = dy.to_owned();
        relu_backward(&mut g, &out);
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g, need_input_grad)
    }
}

impl<T: Real> Module<T> for ConvBnRelu<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        self.conv.slots(&join(prefix, "conv"), out);
        self.bn.slots(&join(prefix, "bn"), out);
    }
}

/// Stack of conv units lifting the two input planes to `width` channels.
#[derive(Clone, Debug)]
pub struct InputBlock<T> {
    pub units: Vec<ConvBnRelu<T>>,
}

impl<T: Real> InputBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_planes: usize,
        width: usize,
        units: usize,
        kernel: usize,
        momentum: f64,
        eps: f64,
        rng: &mut R,
    ) -> Self {
        let units = (0..units)
            .map(|i| {
                let cin = if i == 0 { in_planes } else { width };
                ConvBnRelu::new(cin, width, kernel, momentum, eps, rng)
            })
            .collect();
        Self { units }
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut h = x.to_owned();
        for u in &self.units {
            h = u.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut h = x.to_owned();
        for u in &mut self.units {
            h = u.forward(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Array4<T>, need_input_grad: bool) -> Result<Option<Array4<T>>> {
        let mut g = dy.to_owned();
        let n = self.units.len();
        for (i, u) in self.units.iter_mut().enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match u.backward(&g, need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
            debug_assert!(i < n);
        }
        Ok(Some(g))
    }
}

impl<T: Real> Module<T> for InputBlock<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.slots(&join(prefix, &format!("unit{i}")), out);
        }
    }
}

/// Global average and max pooling per channel; max keeps the flat argmax.
fn global_pools<T: Real>(x: &Array4<T>) -> (Array2<T>, Array2<T>, Vec<usize>) {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut avg = Array2::<T>::zeros((b, c));
    let mut max = Array2::<T>::zeros((b, c));
    let mut arg = vec![0usize; b * c];
    let inv = T::of(1.0 / hw as f64);
    for bi in 0..b {
        for ci in 0..c {
            let plane = &xs[(bi * c + ci) * hw..][..hw];
            let mut best = 0;
            let mut sum = T::zero();
            for (i, &v) in plane.iter().enumerate() {
                sum += v;
                if v > plane[best] {
                    best = i;
                }
            }
            avg[[bi, ci]] = sum * inv;
            max[[bi, ci]] = plane[best];
            arg[bi * c + ci] = best;
        }
    }
    (avg, max, arg)
}

/// Outputs of a traced attention pass.
pub struct Attended<T> {
    pub features: Array4<T>,
    pub weights: Array4<T>,
}

/// Dual-path channel attention with a shared bottleneck.
///
/// The 1×1 convolutions on pooled `[B, C, 1, 1]` maps are stored as dense
/// layers acting on `[B, C]` rows. Both pooled rows go through the same
/// weights as one stacked `[2B, C]` batch.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    pub reduce: Dense<T>,
    pub expand: Dense<T>,
    cache: Option<CaCache<T>>,
}

#[derive(Clone, Debug)]
struct CaCache<T> {
    input: Array4<T>,
    weights: Array2<T>,
    hidden: Array2<T>,
    argmax: Vec<usize>,
}

impl<T: Real> ChannelAttention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            reduce: Dense::new(channels, hidden, rng),
            expand: Dense::new(hidden, channels, rng),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.reduce.inputs()
    }

    fn stacked(avg: &Array2<T>, max: &Array2<T>) -> Array2<T> {
        ndarray::concatenate(Axis(0), &[avg.view(), max.view()]).expect("same width")
    }

    fn combine(h2: &Array2<T>, b: usize) -> Array2<T> {
        let logits = &h2.slice(s![..b, ..]) + &h2.slice(s![b.., ..]);
        logits.mapv(sigmoid)
    }

    fn apply(x: &Array4<T>, a: &Array2<T>) -> Array4<T> {
        let mut y = x.to_owned();
        for ((bi, ci), &w) in a.indexed_iter() {
            y.slice_mut(s![bi, ci, .., ..]).mapv_inplace(|v| v * w);
        }
        y
    }

    /// Returns the reweighted features and `A_C` as `[B, C, 1, 1]`.
    pub fn infer_traced(&self, x: &Array4<T>, mut trace: Option<&mut Trace>) -> Result<Attended<T>> {
        let (b, c, _, _) = x.dim();
        expect_channels("channel attention", c, self.channels())?;
        let (avg, max, _) = global_pools(x);
        record(&mut trace, "ca.avg_pool", &[b, c, 1, 1]);
        record(&mut trace, "ca.max_pool", &[b, c, 1, 1]);
        let mut h1 = self.reduce.infer(Self::stacked(&avg, &max).view())?;
        relu_inplace(&mut h1);
        let h2 = self.expand.infer(h1.view())?;
        record(&mut trace, "ca.conv_units", &[b, c, 1, 1]);
        let a = Self::combine(&h2, b);
        let y = Self::apply(x, &a);
        record(&mut trace, "ca.output", y.shape());
        Ok(Attended {
            features: y,
            weights: a.into_shape_with_order((b, c, 1, 1)).expect("same size"),
        })
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        Ok(self.infer_traced(x, None)?.features)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let (b, c, _, _) = x.dim();
        expect_channels("channel attention", c, self.channels())?;
        let (avg, max, argmax) = global_pools(x);
        let mut h1 = self.reduce.forward(Self::stacked(&avg, &max).view())?;
        relu_inplace(&mut h1);
        let h2 = self.expand.forward(h1.view())?;
        let a = Self::combine(&h2, b);
        let y = Self::apply(x, &a);
        self.cache = Some(CaCache {
            input: x.to_owned(),
            weights: a,
            hidden: h1,
            argmax,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let CaCache {
            input,
            weights,
            hidden,
            argmax,
        } = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("channel attention backward without a cached forward".into()))?;
        let (b, c, h, w) = input.dim();
        if dy.dim() != input.dim() {
            return Err(Error::Contract(format!("channel attention gradient {:?} vs {:?}", dy.dim(), input.dim())));
        }
        let hw = h * w;
        let mut dlogit = Array2::<T>::zeros((b, c));
        for ((bi, ci), d) in dlogit.indexed_iter_mut() {
            let da: T = dy
                .slice(s![bi, ci, .., ..])
                .iter()
                .zip(input.slice(s![bi, ci, .., ..]).iter())
                .map(|(&g, &v)| g * v)
                .sum();
            let a = weights[[bi, ci]];
            *d = da * a * (T::one() - a);
        }
        let dh2 = Self::stacked(&dlogit, &dlogit);
        let mut dh1 = self.expand.backward(&dh2)?;
        relu_backward(&mut dh1, &hidden);
        let ds = self.reduce.backward(&dh1)?;
        let mut dx = Self::apply(dy, &weights);
        let dxs = dx.as_slice_mut().expect("fresh array");
        let inv = T::of(1.0 / hw as f64);
        for bi in 0..b {
            for ci in 0..c {
                let plane = &mut dxs[(bi * c + ci) * hw..][..hw];
                let gavg = ds[[bi, ci]] * inv;
                plane.iter_mut().for_each(|v| *v += gavg);
                plane[argmax[bi * c + ci]] += ds[[b + bi, ci]];
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ChannelAttention<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        self.reduce.slots(&join(prefix, "reduce"), out);
        self.expand.slots(&join(prefix, "expand"), out);
    }
}

/// `ReLU(BN(Conv(ReLU(BN(Conv(x))))) + x)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T> {
    pub first: ConvBnRelu<T>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    output: Option<Array4<T>>,
}

impl<T: Real> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, momentum: f64, eps: f64, rng: &mut R) -> Self {
        Self {
            first: ConvBnRelu::new(channels, channels, kernel, momentum, eps, rng),
            conv: Conv2d::new(channels, channels, kernel, kernel / 2, rng),
            bn: BatchNorm2d::new(channels, momentum, eps),
            output: None,
        }
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let h = self.first.infer(x)?;
        let mut y = self.bn.infer(&self.conv.infer(&h)?)? + x;
        relu_inplace(&mut y);
        Ok(y)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let h = self.first.forward(x)?;
        let z = self.conv.forward(&h)?;
        let mut y = self.bn.forward(&z)? + x;
        relu_inplace(&mut y);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::Contract("residual backward without a cached forward".into()))?;
        let mut g = dy.to_owned();
        relu_backward(&mut g, &out);
        let dz = self.bn.backward(&g)?;
        let dh = self.conv.backward(&dz, true)?.expect("input gradient requested");
        let dx = self.first.backward(&dh, true)?.expect("input gradient requested");
        Ok(dx + &g)
    }
}

impl<T: Real> Module<T> for ResidualBlock<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        self.first.slots(&join(prefix, "unit0"), out);
        self.conv.slots(&join(prefix, "unit1.conv"), out);
        self.bn.slots(&join(prefix, "unit1.bn"), out);
    }
}

/// Residual stages, each followed by a 2×2 max pool.
#[derive(Clone, Debug)]
pub struct DeepFeatureBlock<T> {
    pub stages: Vec<(Vec<ResidualBlock<T>>, MaxPool2)>,
}

impl<T: Real> DeepFeatureBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        stages: usize,
        blocks_per_stage: usize,
        kernel: usize,
        momentum: f64,
        eps: f64,
        rng: &mut R,
    ) -> Self {
        let stages = (0..stages)
            .map(|_| {
                let blocks = (0..blocks_per_stage)
                    .map(|_| ResidualBlock::new(channels, kernel, momentum, eps, rng))
                    .collect();
                (blocks, MaxPool2::default())
            })
            .collect();
        Self { stages }
    }

    pub fn output_hw(&self, mut h: usize, mut w: usize) -> (usize, usize) {
        for _ in &self.stages {
            (h, w) = MaxPool2::output_hw(h, w);
        }
        (h, w)
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut h = x.to_owned();
        for (blocks, pool) in &self.stages {
            for b in blocks {
                h = b.infer(&h)?;
            }
            h = pool.infer(&h);
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut h = x.to_owned();
        for (blocks, pool) in &mut self.stages {
            for b in blocks.iter_mut() {
                h = b.forward(&h)?;
            }
            h = pool.forward(&h);
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let mut g = dy.to_owned();
        for (blocks, pool) in self.stages.iter_mut().rev() {
            g = pool.backward(&g)?;
            for b in blocks.iter_mut().rev() {
                g = b.backward(&g)?;
            }
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for DeepFeatureBlock<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        for (si, (blocks, _)) in self.stages.iter_mut().enumerate() {
            for (bi, b) in blocks.iter_mut().enumerate() {
                b.slots(&join(prefix, &format!("stage{si}.block{bi}")), out);
            }
        }
    }
}

/// Spatial attention from channel-wise mean and max maps.
#[derive(Clone, Debug)]
pub struct SpatialAttention<T> {
    pub conv: Conv2d<T>,
    cache: Option<SaCache<T>>,
}

#[derive(Clone, Debug)]
struct SaCache<T> {
    input: Array4<T>,
    weights: Array4<T>,
    argmax: Vec<usize>,
}

impl<T: Real> SpatialAttention<T> {
    pub fn new<R: Rng + ?Sized>(kernel: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(2, 1, kernel, kernel / 2, rng),
            cache: None,
        }
    }

    /// `[B, 2, H, W]` holding channel mean then channel max, plus max argmax.
    fn descriptors(x: &Array4<T>) -> (Array4<T>, Vec<usize>) {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut d = Array4::<T>::zeros((b, 2, h, w));
        let mut arg = vec![0usize; b * hw];
        let inv = T::of(1.0 / c as f64);
        let ds = d.as_slice_mut().expect("fresh");
        for bi in 0..b {
            for p in 0..hw {
                let mut sum = T::zero();
                let mut best = 0;
                for ci in 0..c {
                    let v = xs[(bi * c + ci) * hw + p];
                    sum += v;
                    if v > xs[(bi * c + best) * hw + p] {
                        best = ci;
                    }
                }
                ds[(bi * 2) * hw + p] = sum * inv;
                ds[(bi * 2 + 1) * hw + p] = xs[(bi * c + best) * hw + p];
                arg[bi * hw + p] = best;
            }
        }
        (d, arg)
    }

    fn apply(x: &Array4<T>, a: &Array4<T>) -> Array4<T> {
        let mut y = x.to_owned();
        for (bi, mut sample) in y.outer_iter_mut().enumerate() {
            let plane = a.slice(s![bi, 0, .., ..]);
            for mut ch in sample.outer_iter_mut() {
                ch.zip_mut_with(&plane, |v, &w| *v *= w);
            }
        }
        y
    }

    pub fn infer_traced(&self, x: &Array4<T>, mut trace: Option<&mut Trace>) -> Result<Attended<T>> {
        let (b, _, h, w) = x.dim();
        let (d, _) = Self::descriptors(x);
        record(&mut trace, "sa.avg_pool", &[b, 1, h, w]);
        record(&mut trace, "sa.max_pool", &[b, 1, h, w]);
        let a = self.conv.infer(&d)?.mapv(sigmoid);
        record(&mut trace, "sa.conv_units", a.shape());
        let y = Self::apply(x, &a);
        record(&mut trace, "sa.output", y.shape());
        Ok(Attended { features: y, weights: a })
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        Ok(self.infer_traced(x, None)?.features)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array4<T>> {
        let (d, argmax) = Self::descriptors(x);
        let a = self.conv.forward(&d)?.mapv(sigmoid);
        let y = Self::apply(x, &a);
        self.cache = Some(SaCache {
            input: x.to_owned(),
            weights: a,
            argmax,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let SaCache { input, weights, argmax } = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("spatial attention backward without a cached forward".into()))?;
        if dy.dim() != input.dim() {
            return Err(Error::Contract(format!("spatial attention gradient {:?} vs {:?}", dy.dim(), input.dim())));
        }
        let (b, c, h, w) = input.dim();
        let hw = h * w;
        let dys = dy.as_standard_layout();
        let dys = dys.as_slice().expect("standard layout");
        let xs = input.as_slice().expect("cached input is standard");
        let ws = weights.as_slice().expect("fresh");
        let mut dlogit = Array4::<T>::zeros((b, 1, h, w));
        {
            let dl = dlogit.as_slice_mut().expect("fresh");
            for bi in 0..b {
                for p in 0..hw {
                    let mut da = T::zero();
                    for ci in 0..c {
                        let i = (bi * c + ci) * hw + p;
                        da += dys[i] * xs[i];
                    }
                    let a = ws[bi * hw + p];
                    dl[bi * hw + p] = da * a * (T::one() - a);
                }
            }
        }
        let dd = self.conv.backward(&dlogit, true)?.expect("input gradient requested");
        let dds = dd.as_slice().expect("fresh");
        let mut dx = Self::apply(dy, &weights);
        let dxs = dx.as_slice_mut().expect("fresh");
        let inv = T::of(1.0 / c as f64);
        for bi in 0..b {
            for p in 0..hw {
                let gm = dds[(bi * 2) * hw + p] * inv;
                for ci in 0..c {
                    dxs[(bi * c + ci) * hw + p] += gm;
                }
                dxs[(bi * c + argmax[bi * hw + p]) * hw + p] += dds[(bi * 2 + 1) * hw + p];
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for SpatialAttention<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        self.conv.slots(&join(prefix, "conv"), out);
    }
}

/// Flatten followed by dense layers with ReLU between them.
#[derive(Clone, Debug)]
pub struct RegressionHead<T> {
    pub layers: Vec<Dense<T>>,
    activations: Vec<Array2<T>>,
    input_dim: Option<(usize, usize, usize, usize)>,
}

impl<T: Real> RegressionHead<T> {
    /// `widths` lists the flattened input width, hidden widths and output width.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|p| Dense::new(p[0], p[1], rng)).collect();
        Self {
            layers,
            activations: Vec::new(),
            input_dim: None,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    fn flatten<'x>(&self, x: &'x Array4<T>) -> Result<ArrayView2<'x, T>> {
        let b = x.dim().0;
        let width = x.len() / b.max(1);
        if width != self.input_width() {
            return Err(Error::Contract(format!(
                "regression head expects flatten width {}, got {width}",
                self.input_width()
            )));
        }
        let flat = x
            .view()
            .into_shape_with_order((b, width))
            .map_err(|_| Error::Contract("regression head input is not contiguous".into()))?;
        Ok(flat)
    }

    pub fn infer_traced(&self, x: &Array4<T>, mut trace: Option<&mut Trace>) -> Result<Array2<T>> {
        let x = x.as_standard_layout().into_owned();
        let flat = self.flatten(&x)?;
        record(&mut trace, "mlp.flatten", flat.shape());
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].infer(flat)?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            relu_inplace(&mut h);
            h = layer.infer(h.view())?;
            debug_assert!(i <= last);
        }
        record(&mut trace, "mlp.output", h.shape());
        Ok(h)
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<Array2<T>> {
        self.infer_traced(x, None)
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array2<T>> {
        let x = x.as_standard_layout().into_owned();
        let flat = self.flatten(&x)?.to_owned();
        self.input_dim = Some(x.dim());
        self.activations.clear();
        let mut h = self.layers[0].forward(flat.view())?;
        for i in 1..self.layers.len() {
            relu_inplace(&mut h);
            self.activations.push(h.clone());
            h = self.layers[i].forward(h.view())?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Result<Array4<T>> {
        let dim = self
            .input_dim
            .take()
            .ok_or_else(|| Error::Contract("regression head backward without a cached forward".into()))?;
        let mut g = dy.to_owned();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&g)?;
            if i > 0 {
                let act = self.activations.pop().expect("one activation per hidden layer");
                relu_backward(&mut g, &act);
            }
        }
        Ok(g.into_shape_with_order(dim).expect("flattened size"))
    }
}

impl<T: Real> Module<T> for RegressionHead<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.slots(&join(prefix, &format!("fc{i}")), out);
        }
    }
}
