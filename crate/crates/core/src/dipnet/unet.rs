use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, NormCache, Tensor};
use crate::error::{Error, Result};
use crate::waveop::Image;

/// Output head mapping the first-stage features to one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    /// 3×3 convolution with bias, then ReLU (non-negative output).
    #[default]
    Conv3x3Relu,
    /// 1×1 convolution without bias, then leaky ReLU with slope 0.125.
    Conv1x1LeakyRelu,
    /// 1×1 convolution without bias, no activation.
    Conv1x1Linear,
}

impl Head {
    pub fn name(&self) -> &'static str {
        match self {
            Head::Conv3x3Relu => "conv3x3_relu",
            Head::Conv1x1LeakyRelu => "conv1x1_nobias_leakyrelu",
            Head::Conv1x1Linear => "conv1x1_nobias_linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv3x3_relu" | "relu" => Ok(Head::Conv3x3Relu),
            "conv1x1_nobias_leakyrelu" | "leaky" => Ok(Head::Conv1x1LeakyRelu),
            "conv1x1_nobias_linear" | "linear" => Ok(Head::Conv1x1Linear),
            _ => Err(Error::Config(format!("unknown head '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// Feature channels per encoder stage; the last stage is the bottleneck.
    pub channels: Vec<usize>,
    pub head: Head,
    pub norm_eps: f64,
    pub init_seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128, 256],
            head: Head::Conv3x3Relu,
            norm_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels[0] == 0 {
            return Err(Error::Parameter("channels must be non-empty and positive".into()));
        }
        if self.channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!(
                "channels must be strictly increasing, got {:?}",
                self.channels
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Parameter(format!("norm_eps must be > 0, got {}", self.norm_eps)));
        }
        Ok(())
    }

    pub fn pooling_stages(&self) -> usize {
        self.channels.len() - 1
    }

    /// Checks that both sides survive every pooling stage.
    pub fn check_input(&self, shape: (usize, usize)) -> Result<()> {
        self.validate()?;
        let m = 1usize << self.pooling_stages();
        if shape.0 == 0 || shape.1 == 0 || !shape.0.is_multiple_of(m) || !shape.1.is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "input {:?} must have sides divisible by {m}",
                shape
            )));
        }
        Ok(())
    }
}

/// A named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network parameters θ as one flat vector plus its named layout.
///
/// Gradients use the same type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub values: Vec<f64>,
    pub slots: Vec<Slot>,
}

impl NetworkParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            slots: self.slots.clone(),
        }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.slot(name).map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.slot(name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    cin: usize,
    cout: usize,
    rows: usize,
    /// Columns of the weight matrix per output row (`cin · k²`).
    width: usize,
    w: usize,
    b: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    c: usize,
    scale: usize,
    shift: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

/// Offsets of every layer in the flat parameter vector.
#[derive(Debug)]
struct Arch {
    enc: Vec<Block>,
    /// `up[l]` maps level `l + 1` features to level `l`.
    up: Vec<Conv>,
    dec: Vec<Block>,
    head: Conv,
    slots: Vec<Slot>,
    total: usize,
}

#[derive(Default)]
struct Builder {
    slots: Vec<Slot>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.total;
        self.total += shape.iter().product::<usize>();
        self.slots.push(Slot { name, shape, offset: off });
        off
    }

    fn conv3(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> Conv {
        let w = self.push(format!("{name}.weight"), vec![cout, cin, 3, 3]);
        let b = bias.then(|| self.push(format!("{name}.bias"), vec![cout]));
        Conv { cin, cout, rows: cout, width: cin * 9, w, b }
    }

    fn conv1(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self.push(format!("{name}.weight"), vec![cout, cin]);
        Conv { cin, cout, rows: cout, width: cin, w, b: None }
    }

    fn upconv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self.push(format!("{name}.weight"), vec![cout, 2, 2, cin]);
        let b = Some(self.push(format!("{name}.bias"), vec![cout]));
        Conv { cin, cout, rows: cout * 4, width: cin, w, b }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let scale = self.push(format!("{name}.scale"), vec![c]);
        let shift = self.push(format!("{name}.shift"), vec![c]);
        Norm { c, scale, shift }
    }

    // convolutions feeding a normalisation carry no bias: the mean
    // subtraction would cancel it
    fn block(&mut self, name: &str, cin: usize, cout: usize) -> Block {
        let conv1 = self.conv3(&format!("{name}.conv1"), cin, cout, false);
        let norm1 = self.norm(&format!("{name}.norm1"), cout);
        let conv2 = self.conv3(&format!("{name}.conv2"), cout, cout, false);
        let norm2 = self.norm(&format!("{name}.norm2"), cout);
        Block { conv1, norm1, conv2, norm2 }
    }
}

impl Arch {
    fn new(config: &UNetConfig) -> Self {
        let ch = &config.channels;
        let mut b = Builder::default();
        let mut enc = Vec::with_capacity(ch.len());
        for (s, &c) in ch.iter().enumerate() {
            let cin = if s == 0 { 1 } else { ch[s - 1] };
            enc.push(b.block(&format!("enc{s}"), cin, c));
        }
        let levels = ch.len() - 1;
        let mut up = vec![None; levels];
        let mut dec = vec![None; levels];
        for l in (0..levels).rev() {
            up[l] = Some(b.upconv(&format!("up{l}"), ch[l + 1], ch[l]));
            dec[l] = Some(b.block(&format!("dec{l}"), 2 * ch[l], ch[l]));
        }
        let head = match config.head {
            Head::Conv3x3Relu => b.conv3("head", ch[0], 1, true),
            _ => b.conv1("head", ch[0], 1),
        };
        Arch {
            enc,
            up: up.into_iter().map(Option::unwrap).collect(),
            dec: dec.into_iter().map(Option::unwrap).collect(),
            head,
            slots: b.slots,
            total: b.total,
        }
    }
}

fn wmat<'a>(p: &'a [f64], c: &Conv) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((c.rows, c.width), &p[c.w..c.w + c.rows * c.width]).expect("slot size")
}

fn bias<'a>(p: &'a [f64], c: &Conv) -> Option<ArrayView1<'a, f64>> {
    c.b.map(|o| ArrayView1::from(&p[o..o + c.cout]))
}

fn norm_params<'a>(p: &'a [f64], n: &Norm) -> (ArrayView1<'a, f64>, ArrayView1<'a, f64>) {
    (
        ArrayView1::from(&p[n.scale..n.scale + n.c]),
        ArrayView1::from(&p[n.shift..n.shift + n.c]),
    )
}

fn add_to(g: &mut [f64], off: usize, src: impl IntoIterator<Item = f64>) {
    for (d, s) in g[off..].iter_mut().zip(src) {
        *d += s;
    }
}

fn add_mat(g: &mut [f64], off: usize, m: &Array2<f64>) {
    add_to(g, off, m.iter().copied());
}

fn add_vec(g: &mut [f64], off: usize, v: &Array1<f64>) {
    add_to(g, off, v.iter().copied());
}

/// Extra factor on the output kernel's init. At full fan-in scale the first
/// output overshoots the data and a ReLU head loses most pixels for good.
pub const HEAD_INIT_GAIN: f64 = 0.1;

/// Builds the parameter vector: normal kernels with std `sqrt(2 / fan_in)`
/// (times [`HEAD_INIT_GAIN`] for the head), zero biases, unit normalisation
/// scales and zero shifts.
pub fn unet_init(config: &UNetConfig, input_shape: (usize, usize)) -> Result<NetworkParams> {
    config.check_input(input_shape)?;
    let arch = Arch::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut values = vec![0.0; arch.total];
    for slot in &arch.slots {
        let range = slot.offset..slot.offset + slot.len();
        if slot.name.ends_with(".weight") {
            let fan_in = if slot.shape.len() == 4 && slot.shape[1] == 2 {
                slot.shape[3]
            } else {
                slot.shape[1..].iter().product()
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let gain = if slot.name.starts_with("head.") { HEAD_INIT_GAIN } else { 1.0 };
            for v in &mut values[range] {
                *v = gain * normal.sample(&mut rng);
            }
        } else if slot.name.ends_with(".scale") {
            values[range].fill(1.0);
        }
    }
    Ok(NetworkParams { values, slots: arch.slots })
}

/// Number of parameters for `config`.
pub fn parameter_count(config: &UNetConfig) -> Result<usize> {
    config.validate()?;
    Ok(Arch::new(config).total)
}

struct BlockCache {
    x: Tensor,
    n1: NormCache,
    r1: Tensor,
    n2: NormCache,
    r2: Tensor,
}

struct ForwardCache {
    enc: Vec<BlockCache>,
    pools: Vec<Array3<u8>>,
    up_in: Vec<Tensor>,
    dec: Vec<BlockCache>,
    head_in: Tensor,
    pre: Tensor,
}

fn block_forward(p: &[f64], b: &Block, x: Tensor, eps: f64) -> BlockCache {
    let a1 = layers::conv3x3(&x, wmat(p, &b.conv1), None);
    let (s1, t1) = norm_params(p, &b.norm1);
    let (mut r1, n1) = layers::norm_forward(&a1, s1, t1, eps);
    layers::relu_inplace(&mut r1);
    let a2 = layers::conv3x3(&r1, wmat(p, &b.conv2), None);
    let (s2, t2) = norm_params(p, &b.norm2);
    let (mut r2, n2) = layers::norm_forward(&a2, s2, t2, eps);
    layers::relu_inplace(&mut r2);
    BlockCache { x, n1, r1, n2, r2 }
}

fn block_back(p: &[f64], b: &Block, c: &BlockCache, mut dy: Tensor, g: &mut [f64]) -> Tensor {
    layers::relu_back_inplace(&c.r2, &mut dy);
    let (s2, _) = norm_params(p, &b.norm2);
    let (da2, ds2, dt2) = layers::norm_back(&c.n2, s2, &dy);
    add_vec(g, b.norm2.scale, &ds2);
    add_vec(g, b.norm2.shift, &dt2);
    let (mut dr1, dw2, _) = layers::conv3x3_back(&c.r1, wmat(p, &b.conv2), &da2);
    add_mat(g, b.conv2.w, &dw2);
    layers::relu_back_inplace(&c.r1, &mut dr1);
    let (s1, _) = norm_params(p, &b.norm1);
    let (da1, ds1, dt1) = layers::norm_back(&c.n1, s1, &dr1);
    add_vec(g, b.norm1.scale, &ds1);
    add_vec(g, b.norm1.shift, &dt1);
    let (dx, dw1, _) = layers::conv3x3_back(&c.x, wmat(p, &b.conv1), &da1);
    add_mat(g, b.conv1.w, &dw1);
    dx
}

fn check_params(params: &NetworkParams, arch: &Arch) -> Result<()> {
    if params.values.len() != arch.total || params.slots != arch.slots {
        return Err(Error::Shape(format!(
            "parameter vector of length {} does not match the configured network ({})",
            params.values.len(),
            arch.total
        )));
    }
    Ok(())
}

fn forward_cached(
    params: &NetworkParams,
    config: &UNetConfig,
    z: &Image,
) -> Result<(Image, ForwardCache, Arch)> {
    config.check_input(z.dim())?;
    let arch = Arch::new(config);
    check_params(params, &arch)?;
    let p = params.values.as_slice();
    let eps = config.norm_eps;
    let (h, w) = z.dim();
    let mut x = z.clone().into_shape_with_order((1, h, w)).expect("contiguous image");
    let levels = arch.up.len();
    let mut enc = Vec::with_capacity(levels + 1);
    let mut pools = Vec::with_capacity(levels);
    for (s, b) in arch.enc.iter().enumerate() {
        let c = block_forward(p, b, x, eps);
        x = if s < levels {
            let (pooled, arg) = layers::maxpool2(&c.r2);
            pools.push(arg);
            pooled
        } else {
            c.r2.clone()
        };
        enc.push(c);
    }
    let mut up_in = vec![Tensor::zeros((0, 0, 0)); levels];
    let mut dec: Vec<Option<BlockCache>> = (0..levels).map(|_| None).collect();
    for l in (0..levels).rev() {
        let u = &arch.up[l];
        let upx = layers::upconv2(&x, wmat(p, u), bias(p, u).expect("upconv bias"));
        let cat = layers::concat(&upx, &enc[l].r2);
        up_in[l] = x;
        let c = block_forward(p, &arch.dec[l], cat, eps);
        x = c.r2.clone();
        dec[l] = Some(c);
    }
    let head = &arch.head;
    let pre = match config.head {
        Head::Conv3x3Relu => layers::conv3x3(&x, wmat(p, head), bias(p, head)),
        _ => layers::conv1x1(&x, wmat(p, head), None),
    };
    let out = match config.head {
        Head::Conv3x3Relu => pre.mapv(|v| v.max(0.0)),
        Head::Conv1x1LeakyRelu => pre.mapv(layers::leaky),
        Head::Conv1x1Linear => pre.clone(),
    };
    let out = out.into_shape_with_order((h, w)).expect("single channel");
    let cache = ForwardCache {
        enc,
        pools,
        up_in,
        dec: dec.into_iter().map(Option::unwrap).collect(),
        head_in: x,
        pre,
    };
    Ok((out, cache, arch))
}

/// Runs the network on a single-channel input `z`.
pub fn unet_forward(params: &NetworkParams, config: &UNetConfig, z: &Image) -> Result<Image> {
    forward_cached(params, config, z).map(|(out, _, _)| out)
}

fn backward(
    params: &NetworkParams,
    config: &UNetConfig,
    cache: &ForwardCache,
    arch: &Arch,
    upstream: &Image,
) -> (NetworkParams, Image) {
    let p = params.values.as_slice();
    let mut grads = params.zeros_like();
    let g = grads.values.as_mut_slice();
    let (h, w) = upstream.dim();
    let mut dpre = upstream.clone().into_shape_with_order((1, h, w)).expect("contiguous");
    match config.head {
        Head::Conv3x3Relu => layers::relu_back_inplace(&cache.pre, &mut dpre),
        Head::Conv1x1LeakyRelu => {
            ndarray::Zip::from(&mut dpre).and(&cache.pre).for_each(|d, &v| {
                if v <= 0.0 {
                    *d *= layers::LEAKY_SLOPE
                }
            })
        }
        Head::Conv1x1Linear => {}
    }
    let head = &arch.head;
    let mut dx = match config.head {
        Head::Conv3x3Relu => {
            let (dx, dw, db) = layers::conv3x3_back(&cache.head_in, wmat(p, head), &dpre);
            add_mat(g, head.w, &dw);
            add_vec(g, head.b.expect("head bias"), &db);
            dx
        }
        _ => {
            let (dx, dw, _) = layers::conv1x1_back(&cache.head_in, wmat(p, head), &dpre);
            add_mat(g, head.w, &dw);
            dx
        }
    };
    let levels = arch.up.len();
    let mut dskip: Vec<Option<Tensor>> = (0..levels).map(|_| None).collect();
    for l in 0..levels {
        let dcat = block_back(p, &arch.dec[l], &cache.dec[l], dx, g);
        let c = arch.dec[l].conv1.cin / 2;
        let dup = dcat.slice(s![..c, .., ..]).to_owned();
        dskip[l] = Some(dcat.slice(s![c.., .., ..]).to_owned());
        let u = &arch.up[l];
        let (dlow, dw, db) = layers::upconv2_back(&cache.up_in[l], wmat(p, u), &dup);
        add_mat(g, u.w, &dw);
        add_vec(g, u.b.expect("upconv bias"), &db);
        dx = dlow;
    }
    for s in (0..arch.enc.len()).rev() {
        let dr2 = if s < levels {
            layers::maxpool2_back(&cache.pools[s], &dx) + dskip[s].take().expect("skip grad")
        } else {
            dx
        };
        dx = block_back(p, &arch.enc[s], &cache.enc[s], dr2, g);
    }
    let input_grad = dx.into_shape_with_order((h, w)).expect("single channel");
    (grads, input_grad)
}

/// Reverse-mode gradient of `⟨unet_forward(params, z), upstream⟩` with
/// respect to every parameter and to the input.
pub fn unet_vjp(
    params: &NetworkParams,
    config: &UNetConfig,
    z: &Image,
    upstream: &Image,
) -> Result<(NetworkParams, Image)> {
    if upstream.dim() != z.dim() {
        return Err(crate::error::shape_err("upstream", z.dim(), upstream.dim()));
    }
    let (_, cache, arch) = forward_cached(params, config, z)?;
    Ok(backward(params, config, &cache, &arch, upstream))
}

/// Forward pass that keeps what the backward pass needs, so a training
/// step costs one forward and one backward.
pub struct Evaluated {
    pub output: Image,
    cache: ForwardCache,
    arch: Arch,
}

impl Evaluated {
    pub fn new(params: &NetworkParams, config: &UNetConfig, z: &Image) -> Result<Self> {
        let (output, cache, arch) = forward_cached(params, config, z)?;
        Ok(Self { output, cache, arch })
    }

    pub fn vjp(&self, params: &NetworkParams, config: &UNetConfig, upstream: &Image) -> Result<NetworkParams> {
        if upstream.dim() != self.output.dim() {
            return Err(crate::error::shape_err("upstream", self.output.dim(), upstream.dim()));
        }
        Ok(backward(params, config, &self.cache, &self.arch, upstream).0)
    }
}
