//! Layer implementations with explicit forward caches and backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::param::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Samples per parallel chunk in the convolution backward pass. Per-sample
/// gradients are always accumulated in sample order, so results do not depend
/// on the thread count.
const BACKWARD_CHUNK: usize = 8;

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out, in * k * k]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::Shape(format!(
                "{h}x{w} input too small for {k}x{k} convolution",
                k = self.kernel
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel;
        let l = ho * wo;
        let mut cols = vec![0.0; self.in_channels * k * k * l];
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * l;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel;
        let l = ho * wo;
        let mut x = vec![0.0; self.in_channels * h * w];
        for c in 0..self.in_channels {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * l;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += cols[row + oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} channels, got {}",
                self.in_channels, x.shape[1]
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape;
        let (ho, wo) = self.out_hw(h, w)?;
        let l = ho * wo;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let oc = self.out_channels;
        let mut out = Tensor::zeros([n, oc, ho, wo]);
        out.data
            .par_chunks_mut(oc * l)
            .enumerate()
            .for_each(|(i, o)| {
                let xs = x.sample(i);
                let owned;
                let cols: &[f64] = if self.pointwise() {
                    xs
                } else {
                    owned = self.im2col(xs, h, w, ho, wo);
                    &owned
                };
                let mut ov = view_mut(o, oc, l);
                general_mat_mul(1.0, &view(&self.weight.value, oc, ckk), &view(cols, ckk, l), 0.0, &mut ov);
                for (row, b) in o.chunks_exact_mut(l).zip(&self.bias.value) {
                    row.iter_mut().for_each(|v| *v += b);
                }
            });
        Ok(out)
    }

    fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let [n, _, h, w] = x.shape;
        let (ho, wo) = (gy.shape[2], gy.shape[3]);
        let l = ho * wo;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let oc = self.out_channels;
        let mut gx = Tensor::zeros(x.shape);
        let this = &*self;

        let mut grad_w = vec![0.0; this.weight.len()];
        let mut grad_b = vec![0.0; oc];
        for start in (0..n).step_by(BACKWARD_CHUNK) {
            let end = (start + BACKWARD_CHUNK).min(n);
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let xs = x.sample(i);
                    let dy = gy.sample(i);
                    let owned;
                    let cols: &[f64] = if this.pointwise() {
                        xs
                    } else {
                        owned = this.im2col(xs, h, w, ho, wo);
                        &owned
                    };
                    let mut dw = vec![0.0; oc * ckk];
                    general_mat_mul(
                        1.0,
                        &view(dy, oc, l),
                        &view(cols, ckk, l).t(),
                        0.0,
                        &mut view_mut(&mut dw, oc, ckk),
                    );
                    let mut dcols = vec![0.0; ckk * l];
                    general_mat_mul(
                        1.0,
                        &view(&this.weight.value, oc, ckk).t(),
                        &view(dy, oc, l),
                        0.0,
                        &mut view_mut(&mut dcols, ckk, l),
                    );
                    let dx = if this.pointwise() {
                        dcols
                    } else {
                        this.col2im(&dcols, h, w, ho, wo)
                    };
                    (dw, dx)
                })
                .collect();
            for (i, (dw, dx)) in (start..end).zip(parts) {
                grad_w.iter_mut().zip(&dw).for_each(|(g, d)| *g += d);
                let dy = gy.sample(i);
                for (gb, row) in grad_b.iter_mut().zip(dy.chunks_exact(l)) {
                    *gb += row.iter().sum::<f64>();
                }
                let len = x.sample_len();
                gx.data[i * len..(i + 1) * len].copy_from_slice(&dx);
            }
        }
        self.weight
            .grad_mut()
            .iter_mut()
            .zip(&grad_w)
            .for_each(|(g, d)| *g += d);
        self.bias
            .grad_mut()
            .iter_mut()
            .zip(&grad_b)
            .for_each(|(g, d)| *g += d);
        Ok(gx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Pool2d {
    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!(
                "{h}x{w} input too small for {k}x{k} pooling",
                k = self.kernel
            )));
        }
        Ok((
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        ))
    }

    /// Max pooling; padded positions never win.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let [n, c, h, w] = x.shape;
        let (ho, wo) = self.out_hw(h, w)?;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0usize; out.data.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let y0 = (oy * self.stride) as isize - self.pad as isize;
                    let x0 = (ox * self.stride) as isize - self.pad as isize;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..self.kernel as isize {
                        let iy = y0 + ky;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel as isize {
                            let ix = x0 + kx;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if x.data[idx] > best || best_i == usize::MAX {
                                best = x.data[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out.data[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        Ok((out, argmax))
    }
}

fn adaptive_bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let start = i * input / output;
            let end = ((i + 1) * input).div_ceil(output);
            (start, end)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.batch();
        if x.sample_len() != self.in_features {
            return Err(Error::Shape(format!(
                "linear layer expects {} features, got {}",
                self.in_features,
                x.sample_len()
            )));
        }
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        general_mat_mul(
            1.0,
            &view(&x.data, n, self.in_features),
            &view(&self.weight.value, self.out_features, self.in_features).t(),
            0.0,
            &mut view_mut(&mut out.data, n, self.out_features),
        );
        for row in out.data.chunks_exact_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        Ok(out)
    }

    fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Tensor {
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        general_mat_mul(
            1.0,
            &view(&gy.data, n, o).t(),
            &view(&x.data, n, i),
            1.0,
            &mut view_mut(self.weight.grad_mut(), o, i),
        );
        let gb = self.bias.grad_mut();
        for row in gy.data.chunks_exact(o) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        let mut gx = Tensor::zeros(x.shape);
        general_mat_mul(
            1.0,
            &view(&gy.data, n, o),
            &view(&self.weight.value, o, i),
            0.0,
            &mut view_mut(&mut gx.data, n, i),
        );
        gx
    }
}

/// Parallel branches over the same input, concatenated along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Inception {
    pub branches: Vec<Vec<Layer>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool(Pool2d),
    AdaptiveAvgPool { out_h: usize, out_w: usize },
    Linear(Linear),
    Inception(Inception),
}

/// Values retained by a training forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Conv(Tensor),
    Relu(Vec<bool>),
    MaxPool { argmax: Vec<usize>, in_shape: [usize; 4] },
    AdaptiveAvgPool { in_shape: [usize; 4] },
    Linear(Tensor),
    Inception {
        caches: Vec<Vec<Cache>>,
        channels: Vec<usize>,
        in_shape: [usize; 4],
    },
}

impl Layer {
    /// Output `[c, h, w]` for an input of `[c, h, w]`.
    pub fn out_shape(&self, s: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            Layer::Conv(c) => {
                if s[0] != c.in_channels {
                    return Err(Error::Shape(format!(
                        "convolution expects {} channels, got {}",
                        c.in_channels, s[0]
                    )));
                }
                let (h, w) = c.out_hw(s[1], s[2])?;
                Ok([c.out_channels, h, w])
            }
            Layer::Relu => Ok(s),
            Layer::MaxPool(p) => {
                let (h, w) = p.out_hw(s[1], s[2])?;
                Ok([s[0], h, w])
            }
            Layer::AdaptiveAvgPool { out_h, out_w } => {
                if s[1] < *out_h || s[2] < *out_w {
                    return Err(Error::Shape(format!(
                        "{}x{} input smaller than adaptive pool output {out_h}x{out_w}",
                        s[1], s[2]
                    )));
                }
                Ok([s[0], *out_h, *out_w])
            }
            Layer::Linear(l) => {
                if s.iter().product::<usize>() != l.in_features {
                    return Err(Error::Shape(format!(
                        "linear layer expects {} features, got {:?}",
                        l.in_features, s
                    )));
                }
                Ok([l.out_features, 1, 1])
            }
            Layer::Inception(inc) => {
                let mut channels = 0;
                let mut hw = None;
                for b in &inc.branches {
                    let o = seq_out_shape(b, s)?;
                    if *hw.get_or_insert((o[1], o[2])) != (o[1], o[2]) {
                        return Err(Error::Shape("inception branches disagree on spatial size".into()));
                    }
                    channels += o[0];
                }
                let (h, w) = hw.ok_or_else(|| Error::Shape("inception without branches".into()))?;
                Ok([channels, h, w])
            }
        }
    }

    pub fn forward(&self, mut x: Tensor, keep: bool) -> Result<(Tensor, Option<Cache>)> {
        match self {
            Layer::Conv(c) => {
                let y = c.forward(&x)?;
                Ok((y, keep.then_some(Cache::Conv(x))))
            }
            Layer::Relu => {
                let mask = keep.then(|| x.data.iter().map(|v| *v > 0.0).collect());
                x.data.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok((x, mask.map(Cache::Relu)))
            }
            Layer::MaxPool(p) => {
                let (y, argmax) = p.forward(&x)?;
                Ok((
                    y,
                    keep.then_some(Cache::MaxPool {
                        argmax,
                        in_shape: x.shape,
                    }),
                ))
            }
            Layer::AdaptiveAvgPool { out_h, out_w } => {
                let [n, c, h, w] = x.shape;
                let rows = adaptive_bins(h, *out_h);
                let cols = adaptive_bins(w, *out_w);
                let mut y = Tensor::zeros([n, c, *out_h, *out_w]);
                for plane in 0..n * c {
                    let src = &x.data[plane * h * w..(plane + 1) * h * w];
                    for (oy, (y0, y1)) in rows.iter().enumerate() {
                        for (ox, (x0, x1)) in cols.iter().enumerate() {
                            let mut s = 0.0;
                            for iy in *y0..*y1 {
                                s += src[iy * w + x0..iy * w + x1].iter().sum::<f64>();
                            }
                            y.data[(plane * out_h + oy) * out_w + ox] = s / ((y1 - y0) * (x1 - x0)) as f64;
                        }
                    }
                }
                Ok((y, keep.then_some(Cache::AdaptiveAvgPool { in_shape: x.shape })))
            }
            Layer::Linear(l) => {
                let y = l.forward(&x)?;
                Ok((y, keep.then_some(Cache::Linear(x))))
            }
            Layer::Inception(inc) => {
                let [n, _, _, _] = x.shape;
                let mut outs = Vec::with_capacity(inc.branches.len());
                let mut caches = Vec::new();
                for b in &inc.branches {
                    let (y, c) = forward_seq(b, x.clone(), keep)?;
                    outs.push(y);
                    caches.push(c);
                }
                let (h, w) = (outs[0].shape[2], outs[0].shape[3]);
                let channels: Vec<usize> = outs.iter().map(|o| o.shape[1]).collect();
                let total: usize = channels.iter().sum();
                let mut y = Tensor::zeros([n, total, h, w]);
                let plane = h * w;
                for i in 0..n {
                    let mut off = i * total * plane;
                    for o in &outs {
                        let s = o.sample(i);
                        y.data[off..off + s.len()].copy_from_slice(s);
                        off += s.len();
                    }
                }
                Ok((
                    y,
                    keep.then_some(Cache::Inception {
                        caches,
                        channels,
                        in_shape: x.shape,
                    }),
                ))
            }
        }
    }

    pub fn backward(&mut self, cache: Cache, gy: Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Conv(x)) => c.backward(&x, &gy),
            (Layer::Relu, Cache::Relu(mask)) => {
                let mut g = gy;
                g.data.iter_mut().zip(&mask).for_each(|(v, m)| {
                    if !m {
                        *v = 0.0;
                    }
                });
                Ok(g)
            }
            (Layer::MaxPool(_), Cache::MaxPool { argmax, in_shape }) => {
                let mut gx = Tensor::zeros(in_shape);
                for (g, idx) in gy.data.iter().zip(&argmax) {
                    gx.data[*idx] += g;
                }
                Ok(gx)
            }
            (Layer::AdaptiveAvgPool { out_h, out_w }, Cache::AdaptiveAvgPool { in_shape }) => {
                let [n, c, h, w] = in_shape;
                let rows = adaptive_bins(h, *out_h);
                let cols = adaptive_bins(w, *out_w);
                let mut gx = Tensor::zeros(in_shape);
                for plane in 0..n * c {
                    let dst = &mut gx.data[plane * h * w..(plane + 1) * h * w];
                    for (oy, (y0, y1)) in rows.iter().enumerate() {
                        for (ox, (x0, x1)) in cols.iter().enumerate() {
                            let g = gy.data[(plane * *out_h + oy) * *out_w + ox]
                                / ((y1 - y0) * (x1 - x0)) as f64;
                            for iy in *y0..*y1 {
                                dst[iy * w + x0..iy * w + x1].iter_mut().for_each(|v| *v += g);
                            }
                        }
                    }
                }
                Ok(gx)
            }
            (Layer::Linear(l), Cache::Linear(x)) => Ok(l.backward(&x, &gy)),
            (
                Layer::Inception(inc),
                Cache::Inception {
                    caches,
                    channels,
                    in_shape,
                },
            ) => {
                let [n, total, h, w] = gy.shape;
                let plane = h * w;
                let mut gx = Tensor::zeros(in_shape);
                let mut offset = 0;
                for ((branch, cache), ch) in inc.branches.iter_mut().zip(caches).zip(&channels) {
                    let mut g = Tensor::zeros([n, *ch, h, w]);
                    for i in 0..n {
                        let src = i * total * plane + offset * plane;
                        g.data[i * ch * plane..(i + 1) * ch * plane]
                            .copy_from_slice(&gy.data[src..src + ch * plane]);
                    }
                    let gb = backward_seq(branch, cache, g)?;
                    gx.data.iter_mut().zip(&gb.data).for_each(|(a, b)| *a += b);
                    offset += ch;
                }
                Ok(gx)
            }
            _ => Err(Error::Internal("layer/cache mismatch in backward pass".into())),
        }
    }
}

pub fn seq_out_shape(layers: &[Layer], mut s: [usize; 3]) -> Result<[usize; 3]> {
    for l in layers {
        s = l.out_shape(s)?;
    }
    Ok(s)
}

pub fn forward_seq(layers: &[Layer], mut x: Tensor, keep: bool) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(if keep { layers.len() } else { 0 });
    for l in layers {
        let (y, c) = l.forward(x, keep)?;
        if let Some(c) = c {
            caches.push(c);
        }
        x = y;
    }
    Ok((x, caches))
}

pub fn backward_seq(layers: &mut [Layer], caches: Vec<Cache>, mut g: Tensor) -> Result<Tensor> {
    if caches.len() != layers.len() {
        return Err(Error::Internal("backward pass without training caches".into()));
    }
    for (l, c) in layers.iter_mut().zip(caches).rev() {
        g = l.backward(c, g)?;
    }
    Ok(g)
}

pub(crate) fn visit_params<'a>(layers: &'a [Layer], prefix: &str, out: &mut Vec<(String, &'a Param)>) {
    for (i, l) in layers.iter().enumerate() {
        match l {
            Layer::Conv(Conv2d { weight, bias, .. }) | Layer::Linear(Linear { weight, bias, .. }) => {
                out.push((format!("{prefix}{i}.weight"), weight));
                out.push((format!("{prefix}{i}.bias"), bias));
            }
            Layer::Inception(inc) => {
                for (b, branch) in inc.branches.iter().enumerate() {
                    visit_params(branch, &format!("{prefix}{i}.branch{b}."), out);
                }
            }
            _ => {}
        }
    }
}

pub(crate) fn visit_params_mut<'a>(layers: &'a mut [Layer], prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
    for (i, l) in layers.iter_mut().enumerate() {
        match l {
            Layer::Conv(Conv2d { weight, bias, .. }) | Layer::Linear(Linear { weight, bias, .. }) => {
                out.push((format!("{prefix}{i}.weight"), weight));
                out.push((format!("{prefix}{i}.bias"), bias));
            }
            Layer::Inception(inc) => {
                for (b, branch) in inc.branches.iter_mut().enumerate() {
                    visit_params_mut(branch, &format!("{prefix}{i}.branch{b}."), out);
                }
            }
            _ => {}
        }
    }
}
