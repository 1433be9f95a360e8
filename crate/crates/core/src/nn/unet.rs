//! Compact U-Net: conv → group norm → SiLU blocks, average-pool downsampling,
//! nearest upsampling, skip connections by channel concatenation and a 1×1
//! classification head.
//!
//! Every layer is smooth, so finite differences agree with the analytic
//! gradients without kink artefacts.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{self, sigmoid};
use super::params::ParamStore;
use super::SegmentationModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{ImageTensor, LogitsMap, Scalar};

const NORM_EPS: f64 = 1e-5;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channels at full resolution; doubled at every level.
    pub base_width: usize,
    /// Number of resolution levels including the bottleneck.
    pub depth: usize,
    pub convs_per_block: usize,
    /// Upper bound on group-norm groups; the largest divisor of the channel
    /// count not exceeding it is used.
    pub norm_groups: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 2,
            base_width: 8,
            depth: 3,
            convs_per_block: 2,
            norm_groups: 4,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad("num_classes must be in 2..=255");
        }
        if self.in_channels == 0 || self.base_width == 0 || self.depth == 0 {
            return bad("in_channels, base_width and depth must be positive");
        }
        if self.convs_per_block == 0 || self.norm_groups == 0 {
            return bad("convs_per_block and norm_groups must be positive");
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn backbone_id(&self) -> String {
        format!("unet-w{}-d{}-c{}", self.base_width, self.depth, self.convs_per_block)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    cin: usize,
    cout: usize,
    kernel: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Norm {
    channels: usize,
    groups: usize,
    gamma: usize,
    beta: usize,
}

/// conv → group norm → SiLU
#[derive(Debug, Clone)]
struct Unit {
    conv: Conv,
    norm: Norm,
}

struct UnitCache<T> {
    input: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    pre_act: Vec<T>,
}

/// Activations retained by a training forward pass.
pub struct Trace<T> {
    height: usize,
    width: usize,
    encoder: Vec<Vec<UnitCache<T>>>,
    decoder: Vec<Vec<UnitCache<T>>>,
    head_input: Vec<T>,
}

/// Encoder-decoder segmentation network over a flat parameter store.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    seed: u64,
    params: ParamStore<T>,
    encoder: Vec<Vec<Unit>>,
    decoder: Vec<Vec<Unit>>,
    head: Conv,
}

fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n)).rev().find(|g| n % g == 0).unwrap_or(1)
}

impl<T: Scalar> UNet<T> {
    /// Builds and initializes the network. Conv weights are uniform in
    /// `±sqrt(6 / fan_in)` (`±sqrt(3 / fan_in)` for the head), biases and
    /// norm shifts zero, norm scales one.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let block = |params: &mut ParamStore<T>, name: &str, cin: usize, cout: usize| {
            (0..config.convs_per_block)
                .map(|j| {
                    let cin = if j == 0 { cin } else { cout };
                    let conv = Conv {
                        cin,
                        cout,
                        kernel: 3,
                        weight: params.alloc(format!("{name}.conv{j}.weight"), &[cout, cin, 3, 3]),
                        bias: params.alloc(format!("{name}.conv{j}.bias"), &[cout]),
                    };
                    let norm = Norm {
                        channels: cout,
                        groups: largest_divisor_at_most(cout, config.norm_groups),
                        gamma: params.alloc(format!("{name}.norm{j}.gamma"), &[cout]),
                        beta: params.alloc(format!("{name}.norm{j}.beta"), &[cout]),
                    };
                    Unit { conv, norm }
                })
                .collect::<Vec<_>>()
        };
        let width = |level: usize| config.base_width << level;

        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let cin = if level == 0 { config.in_channels } else { width(level - 1) };
            encoder.push(block(&mut params, &format!("enc{level}"), cin, width(level)));
        }
        let mut decoder = Vec::with_capacity(config.depth - 1);
        for level in 0..config.depth - 1 {
            let cin = width(level) + width(level + 1);
            decoder.push(block(&mut params, &format!("dec{level}"), cin, width(level)));
        }
        let head = Conv {
            cin: width(0),
            cout: config.num_classes,
            kernel: 1,
            weight: params.alloc("head.weight".into(), &[config.num_classes, width(0), 1, 1]),
            bias: params.alloc("head.bias".into(), &[config.num_classes]),
        };

        let mut net = Self { config, seed, params, encoder, decoder, head };
        net.initialize(seed);
        Ok(net)
    }

    fn initialize(&mut self, seed: u64) {
        let mut rng = rng_from_seed(derive_seed(&[seed, 0x1A17]));
        let convs: Vec<(Conv, f64)> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .flatten()
            .map(|u| (u.conv.clone(), 6.0))
            .chain(core::iter::once((self.head.clone(), 3.0)))
            .collect();
        let values = self.params.values_mut();
        values.fill(T::zero());
        for (conv, gain) in convs {
            let fan_in = (conv.cin * conv.kernel * conv.kernel) as f64;
            let bound = num_traits::Float::sqrt(gain / fan_in);
            for v in &mut values[conv.weight..conv.weight + conv.cout * conv.cin * conv.kernel * conv.kernel] {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        let norms: Vec<Norm> =
            self.encoder.iter().chain(&self.decoder).flatten().map(|u| u.norm.clone()).collect();
        for n in norms {
            values[n.gamma..n.gamma + n.channels].fill(T::one());
        }
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if c != self.config.in_channels || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::ShapeMismatch {
                context: "network input (height and width must be multiples of 2^(depth-1))",
                expected: (m, m, self.config.in_channels),
                found: (h, w, c),
            });
        }
        Ok(())
    }

    /// Forward pass retaining what [`UNet::backward`] needs.
    pub fn forward_train(&self, image: &ImageTensor) -> Result<(LogitsMap<T>, Trace<T>)> {
        let (h, w, c) = image.dims();
        self.check_input(c, h, w)?;
        let p = self.params.values();

        let mut encoder_caches = Vec::with_capacity(self.config.depth);
        let mut skips: Vec<Vec<T>> = Vec::with_capacity(self.config.depth);
        let mut x = image.to_planar::<T>();
        let (mut lh, mut lw) = (h, w);
        for (level, block) in self.encoder.iter().enumerate() {
            if level > 0 {
                let prev = skips.last().expect("previous level");
                x = ops::avg_pool2(prev, self.width(level - 1), lh, lw);
                lh /= 2;
                lw /= 2;
            }
            let (out, caches) = run_block(p, block, x, lh, lw);
            encoder_caches.push(caches);
            skips.push(out);
            x = Vec::new();
        }

        let mut cur = skips.pop().expect("bottleneck");
        let mut decoder_caches: Vec<Vec<UnitCache<T>>> = Vec::with_capacity(self.decoder.len());
        for level in (0..self.decoder.len()).rev() {
            let up = ops::upsample2(&cur, self.width(level + 1), lh, lw);
            lh *= 2;
            lw *= 2;
            let mut cat = skips.pop().expect("skip");
            cat.extend_from_slice(&up);
            let (out, caches) = run_block(p, &self.decoder[level], cat, lh, lw);
            decoder_caches.push(caches);
            cur = out;
        }
        decoder_caches.reverse();

        let mut logits = vec![T::zero(); self.config.num_classes * h * w];
        conv_forward(p, &self.head, &cur, h, w, &mut logits);
        let logits = LogitsMap::new(h, w, self.config.num_classes, logits)?;
        let trace = Trace {
            height: h,
            width: w,
            encoder: encoder_caches,
            decoder: decoder_caches,
            head_input: cur,
        };
        Ok((logits, trace))
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d logits`
    /// in the class-major logits layout.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = self.params.values();
        let (h, w) = (trace.height, trace.width);
        let mut d = vec![T::zero(); self.width(0) * h * w];
        conv_backward(p, &self.head, &trace.head_input, dlogits, h, w, grads, Some(&mut d));

        // Decoder, full resolution first. `dskips[level]` collects gradients
        // flowing into encoder outputs through the skip connections.
        let depth = self.config.depth;
        let mut dskips: Vec<Vec<T>> = Vec::with_capacity(depth);
        let (mut lh, mut lw) = (h, w);
        for level in 0..self.decoder.len() {
            let dcat = block_backward(p, &self.decoder[level], &trace.decoder[level], d, lh, lw, grads, true)
                .expect("decoder input gradient");
            let skip_len = self.width(level) * lh * lw;
            let (dskip, dup) = dcat.split_at(skip_len);
            dskips.push(dskip.to_vec());
            d = ops::upsample2_backward(dup, self.width(level + 1), lh / 2, lw / 2);
            lh /= 2;
            lw /= 2;
        }

        // Encoder, bottleneck first. `d` now holds the bottleneck gradient.
        for level in (0..depth).rev() {
            if level < depth - 1 {
                let skip = &dskips[level];
                for (a, &b) in d.iter_mut().zip(skip) {
                    *a += b;
                }
            }
            let need_input = level > 0;
            let din = block_backward(p, &self.encoder[level], &trace.encoder[level], d, lh, lw, grads, need_input);
            if let Some(din) = din {
                let (ph, pw) = (lh * 2, lw * 2);
                let mut up = vec![T::zero(); self.width(level - 1) * ph * pw];
                ops::avg_pool2_backward_acc(&din, self.width(level - 1), ph, pw, &mut up);
                d = up;
                lh = ph;
                lw = pw;
            } else {
                d = Vec::new();
            }
        }
    }

    fn width(&self, level: usize) -> usize {
        self.config.base_width << level
    }
}

impl<T: Scalar> SegmentationModel<T> for UNet<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward(&self, image: &ImageTensor) -> Result<LogitsMap<T>> {
        self.forward_train(image).map(|(l, _)| l)
    }

    fn parameter_count(&self) -> usize {
        self.params.len()
    }
}

fn conv_weights<'a, T>(p: &'a [T], conv: &Conv) -> (&'a [T], &'a [T]) {
    let n = conv.cout * conv.cin * conv.kernel * conv.kernel;
    (&p[conv.weight..conv.weight + n], &p[conv.bias..conv.bias + conv.cout])
}

fn conv_forward<T: Scalar>(p: &[T], conv: &Conv, x: &[T], h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    let (wt, b) = conv_weights(p, conv);
    for (row, &bias) in out.chunks_exact_mut(hw).zip(b) {
        row.fill(bias);
    }
    let k = conv.cin * conv.kernel * conv.kernel;
    if conv.kernel == 3 {
        let col = ops::im2col3(x, conv.cin, h, w);
        ops::matmul_acc(out, wt, &col, conv.cout, k, hw);
    } else {
        ops::matmul_acc(out, wt, x, conv.cout, k, hw);
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    p: &[T],
    conv: &Conv,
    x: &[T],
    dy: &[T],
    h: usize,
    w: usize,
    grads: &mut [T],
    dx: Option<&mut [T]>,
) {
    let hw = h * w;
    let k = conv.cin * conv.kernel * conv.kernel;
    let nw = conv.cout * k;
    for (g, row) in grads[conv.bias..conv.bias + conv.cout].iter_mut().zip(dy.chunks_exact(hw)) {
        *g += ops::sum(row);
    }
    let (wt, _) = conv_weights(p, conv);
    if conv.kernel == 3 {
        let col = ops::im2col3(x, conv.cin, h, w);
        ops::matmul_a_bt_acc(&mut grads[conv.weight..conv.weight + nw], dy, &col, conv.cout, k, hw);
        if let Some(dx) = dx {
            let mut dcol = vec![T::zero(); k * hw];
            ops::matmul_at_b_acc(&mut dcol, wt, dy, conv.cout, k, hw);
            ops::col2im3_acc(&dcol, conv.cin, h, w, dx);
        }
    } else {
        ops::matmul_a_bt_acc(&mut grads[conv.weight..conv.weight + nw], dy, x, conv.cout, k, hw);
        if let Some(dx) = dx {
            ops::matmul_at_b_acc(dx, wt, dy, conv.cout, k, hw);
        }
    }
}

fn run_block<T: Scalar>(
    p: &[T],
    block: &[Unit],
    mut x: Vec<T>,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<UnitCache<T>>) {
    let mut caches = Vec::with_capacity(block.len());
    for unit in block {
        let (out, cache) = unit_forward(p, unit, x, h, w);
        caches.push(cache);
        x = out;
    }
    (x, caches)
}

fn unit_forward<T: Scalar>(p: &[T], unit: &Unit, x: Vec<T>, h: usize, w: usize) -> (Vec<T>, UnitCache<T>) {
    let hw = h * w;
    let c = unit.conv.cout;
    let mut y = vec![T::zero(); c * hw];
    conv_forward(p, &unit.conv, &x, h, w, &mut y);

    let norm = &unit.norm;
    let per_group = (c / norm.groups) * hw;
    let n = T::from_f64(per_group as f64);
    let eps = T::from_f64(NORM_EPS);
    let mut inv_std = Vec::with_capacity(norm.groups);
    for g in y.chunks_exact_mut(per_group) {
        let mean = ops::sum(g) / n;
        g.iter_mut().for_each(|v| *v -= mean);
        let var = ops::dot(g, g) / n;
        let inv = T::one() / (var + eps).sqrt();
        g.iter_mut().for_each(|v| *v *= inv);
        inv_std.push(inv);
    }
    let xhat = y;
    let gamma = &p[norm.gamma..norm.gamma + c];
    let beta = &p[norm.beta..norm.beta + c];
    let mut pre_act = vec![T::zero(); c * hw];
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let (g, b) = (gamma[ch], beta[ch]);
        let src = &xhat[ch * hw..(ch + 1) * hw];
        let z = &mut pre_act[ch * hw..(ch + 1) * hw];
        let a = &mut out[ch * hw..(ch + 1) * hw];
        for i in 0..hw {
            let zi = g * src[i] + b;
            z[i] = zi;
            a[i] = zi * sigmoid(zi);
        }
    }
    (out, UnitCache { input: x, xhat, inv_std, pre_act })
}

/// Returns the gradient w.r.t. the block input when `need_input` is set.
#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    p: &[T],
    block: &[Unit],
    caches: &[UnitCache<T>],
    mut d: Vec<T>,
    h: usize,
    w: usize,
    grads: &mut [T],
    need_input: bool,
) -> Option<Vec<T>> {
    for (i, (unit, cache)) in block.iter().zip(caches).enumerate().rev() {
        let want_dx = i > 0 || need_input;
        match unit_backward(p, unit, cache, &d, h, w, grads, want_dx) {
            Some(dx) => d = dx,
            None => return None,
        }
    }
    Some(d)
}

#[allow(clippy::too_many_arguments)]
fn unit_backward<T: Scalar>(
    p: &[T],
    unit: &Unit,
    cache: &UnitCache<T>,
    dout: &[T],
    h: usize,
    w: usize,
    grads: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    let c = unit.conv.cout;
    let norm = &unit.norm;

    // SiLU' = s (1 + z (1 - s))
    let mut dz = vec![T::zero(); c * hw];
    for ((g, &z), &up) in dz.iter_mut().zip(&cache.pre_act).zip(dout) {
        let s = sigmoid(z);
        *g = up * s * (T::one() + z * (T::one() - s));
    }

    // Affine part of the norm.
    let gamma = &p[norm.gamma..norm.gamma + c];
    let mut dxhat = vec![T::zero(); c * hw];
    for ch in 0..c {
        let g = &dz[ch * hw..(ch + 1) * hw];
        let xh = &cache.xhat[ch * hw..(ch + 1) * hw];
        grads[norm.gamma + ch] += ops::dot(g, xh);
        grads[norm.beta + ch] += ops::sum(g);
        let gm = gamma[ch];
        for (o, &v) in dxhat[ch * hw..(ch + 1) * hw].iter_mut().zip(g) {
            *o = v * gm;
        }
    }

    // Normalization: dy = inv/N (N dxhat - sum(dxhat) - xhat sum(dxhat xhat)).
    let per_group = (c / norm.groups) * hw;
    let n = T::from_f64(per_group as f64);
    let mut dy = dxhat;
    for ((g, xh), &inv) in dy
        .chunks_exact_mut(per_group)
        .zip(cache.xhat.chunks_exact(per_group))
        .zip(&cache.inv_std)
    {
        let s1 = ops::sum(g);
        let s2 = ops::dot(g, xh);
        let scale = inv / n;
        for (v, &x) in g.iter_mut().zip(xh) {
            *v = scale * (n * *v - s1 - x * s2);
        }
    }

    if want_dx {
        let mut dx = vec![T::zero(); unit.conv.cin * hw];
        conv_backward(p, &unit.conv, &cache.input, &dy, h, w, grads, Some(&mut dx));
        Some(dx)
    } else {
        conv_backward(p, &unit.conv, &cache.input, &dy, h, w, grads, None);
        None
    }
}
