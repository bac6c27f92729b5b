//! Residual CNN architecture, flat parameter storage, forward and backward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache, ConvGeom, Tensor};
use super::train::TrainingLog;
use crate::error::{Error, Result};
use crate::image::{Image, ImageDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Resnet18,
    Tiny,
}

/// Network shape. Both variants share the 7×7/2 stem, 3×3/2 max pool,
/// basic residual blocks, global average pooling, and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input: ImageDims,
    pub num_classes: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
}

impl ModelConfig {
    /// 4 stages × 2 blocks, widths 64/128/256/512.
    pub fn resnet18(input: ImageDims) -> Self {
        ModelConfig {
            variant: Variant::Resnet18,
            input,
            num_classes: 2,
            widths: vec![64, 128, 256, 512],
            blocks: vec![2, 2, 2, 2],
        }
    }

    /// 2 stages × 1 block, widths 8/16.
    pub fn tiny(input: ImageDims) -> Self {
        ModelConfig {
            variant: Variant::Tiny,
            input,
            num_classes: 2,
            widths: vec![8, 16],
            blocks: vec![1, 1],
        }
    }

    pub fn for_variant(variant: Variant, input: ImageDims) -> Self {
        match variant {
            Variant::Resnet18 => Self::resnet18(input),
            Variant::Tiny => Self::tiny(input),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        if self.input.channels != 3 {
            return Err(Error::argument("model input must have 3 channels"));
        }
        if self.num_classes != 2 {
            return Err(Error::argument("classifier is binary: num_classes must be 2"));
        }
        let expected = Self::for_variant(self.variant, self.input);
        if self.widths != expected.widths || self.blocks != expected.blocks {
            return Err(Error::argument(format!(
                "{:?} variant requires widths {:?} and blocks {:?}",
                self.variant, expected.widths, expected.blocks
            )));
        }
        Ok(())
    }

    /// Number of trainable parameters (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        Architecture::new(self).param_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Frozen running statistics in batch norm.
    Eval,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
struct ConvBn {
    geom: ConvGeom,
    weight: usize,
    gamma: usize,
    running: usize,
}

impl ConvBn {
    fn channels(&self) -> usize {
        self.geom.cout
    }
}

#[derive(Debug, Clone)]
struct Block {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Head {
    inp: usize,
    out: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Architecture {
    stem: ConvBn,
    blocks: Vec<Block>,
    head: Head,
    pub(crate) param_len: usize,
    pub(crate) buffer_len: usize,
    pub(crate) entries: Vec<ParamEntry>,
}

struct LayoutBuilder {
    params: usize,
    buffers: usize,
    entries: Vec<ParamEntry>,
}

impl LayoutBuilder {
    fn take(&mut self, name: String, len: usize) -> usize {
        let offset = self.params;
        self.entries.push(ParamEntry { name, offset, len });
        self.params += len;
        offset
    }

    fn conv_bn(&mut self, name: &str, geom: ConvGeom) -> ConvBn {
        let weight = self.take(format!("{name}.conv"), geom.weight_len());
        let gamma = self.take(format!("{name}.bn.gamma"), geom.cout);
        self.take(format!("{name}.bn.beta"), geom.cout);
        let running = self.buffers;
        self.buffers += 2 * geom.cout;
        ConvBn {
            geom,
            weight,
            gamma,
            running,
        }
    }
}

impl Architecture {
    pub(crate) fn new(cfg: &ModelConfig) -> Self {
        let mut lb = LayoutBuilder {
            params: 0,
            buffers: 0,
            entries: Vec::new(),
        };
        let stem_width = cfg.widths[0];
        let stem = lb.conv_bn(
            "stem",
            ConvGeom { cin: 3, cout: stem_width, kernel: 7, stride: 2, pad: 3 },
        );
        let mut blocks = Vec::new();
        let mut cin = stem_width;
        for (s, (&width, &count)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{}.block{}", s + 1, b);
                let a = lb.conv_bn(
                    &format!("{name}.a"),
                    ConvGeom { cin, cout: width, kernel: 3, stride, pad: 1 },
                );
                let bb = lb.conv_bn(
                    &format!("{name}.b"),
                    ConvGeom { cin: width, cout: width, kernel: 3, stride: 1, pad: 1 },
                );
                let shortcut = (stride != 1 || cin != width).then(|| {
                    lb.conv_bn(
                        &format!("{name}.shortcut"),
                        ConvGeom { cin, cout: width, kernel: 1, stride, pad: 0 },
                    )
                });
                blocks.push(Block { a, b: bb, shortcut });
                cin = width;
            }
        }
        let weight = lb.take("head.weight".into(), cfg.num_classes * cin);
        let bias = lb.take("head.bias".into(), cfg.num_classes);
        Architecture {
            stem,
            blocks,
            head: Head { inp: cin, out: cfg.num_classes, weight, bias },
            param_len: lb.params,
            buffer_len: lb.buffers,
            entries: lb.entries,
        }
    }

    fn conv_bns(&self) -> impl Iterator<Item = &ConvBn> {
        std::iter::once(&self.stem).chain(
            self.blocks
                .iter()
                .flat_map(|b| [Some(&b.a), Some(&b.b), b.shortcut.as_ref()].into_iter().flatten()),
        )
    }

    /// He-normal conv weights, unit gamma, zero beta, uniform head.
    fn init(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut params = vec![0.0; self.param_len];
        let mut buffers = vec![0.0; self.buffer_len];
        for cb in self.conv_bns() {
            let fan_in = (cb.geom.cin * cb.geom.kernel * cb.geom.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for w in &mut params[cb.weight..cb.weight + cb.geom.weight_len()] {
                *w = normal.sample(&mut rng);
            }
            let c = cb.channels();
            params[cb.gamma..cb.gamma + c].fill(1.0);
            buffers[cb.running + c..cb.running + 2 * c].fill(1.0);
        }
        let bound = 1.0 / (self.head.inp as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let head_len = self.head.inp * self.head.out + self.head.out;
        for w in &mut params[self.head.weight..self.head.weight + head_len] {
            *w = uniform.sample(&mut rng);
        }
        (params, buffers)
    }

    fn head_range(&self) -> std::ops::Range<usize> {
        self.head.weight..self.head.bias + self.head.out
    }
}

struct CbCache {
    input: Tensor,
    bn: BnCache,
    /// Post-activation output (pre-activation when no ReLU follows).
    out: Tensor,
}

struct BlockCache {
    a: CbCache,
    b: CbCache,
    shortcut: Option<CbCache>,
    out: Tensor,
}

pub(crate) struct ForwardCache {
    stem: CbCache,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache>,
    last: Tensor,
    feats: Vec<f64>,
}

fn cb_train(
    cb: &ConvBn,
    params: &[f64],
    buffers: Option<&mut [f64]>,
    input: Tensor,
    relu: bool,
) -> CbCache {
    let c = cb.channels();
    let z = layers::conv_forward(&cb.geom, &params[cb.weight..][..cb.geom.weight_len()], &input);
    let running = buffers.map(|b| b[cb.running..cb.running + 2 * c].split_at_mut(c));
    let (mut out, bn) = layers::bn_forward_train(
        &params[cb.gamma..cb.gamma + c],
        &params[cb.gamma + c..cb.gamma + 2 * c],
        &z,
        running,
    );
    if relu {
        layers::relu_inplace(&mut out);
    }
    CbCache { input, bn, out }
}

fn cb_eval(cb: &ConvBn, params: &[f64], buffers: &[f64], input: &Tensor, relu: bool) -> Tensor {
    let c = cb.channels();
    let z = layers::conv_forward(&cb.geom, &params[cb.weight..][..cb.geom.weight_len()], input);
    let mut out = layers::bn_forward_eval(
        &params[cb.gamma..cb.gamma + c],
        &params[cb.gamma + c..cb.gamma + 2 * c],
        &buffers[cb.running..cb.running + c],
        &buffers[cb.running + c..cb.running + 2 * c],
        &z,
    );
    if relu {
        layers::relu_inplace(&mut out);
    }
    out
}

/// `dy` must already be masked by the ReLU that followed this layer.
fn cb_backward(
    cb: &ConvBn,
    params: &[f64],
    cache: &CbCache,
    dy: &Tensor,
    grads: &mut [f64],
    want_dx: bool,
) -> Option<Tensor> {
    let c = cb.channels();
    let (dgamma, dbeta) = grads[cb.gamma..cb.gamma + 2 * c].split_at_mut(c);
    let dz = layers::bn_backward(&params[cb.gamma..cb.gamma + c], &cache.bn, dy, dgamma, dbeta);
    let wl = cb.geom.weight_len();
    layers::conv_backward(
        &cb.geom,
        &params[cb.weight..cb.weight + wl],
        &cache.input,
        &dz,
        &mut grads[cb.weight..cb.weight + wl],
        want_dx,
    )
}

fn add_inplace(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

impl Architecture {
    pub(crate) fn forward_eval(&self, params: &[f64], buffers: &[f64], x: &Tensor) -> Vec<f64> {
        let stem = cb_eval(&self.stem, params, buffers, x, true);
        let (mut h, _) = layers::maxpool_forward(&stem);
        for block in &self.blocks {
            let a = cb_eval(&block.a, params, buffers, &h, true);
            let mut out = cb_eval(&block.b, params, buffers, &a, false);
            match &block.shortcut {
                Some(sc) => add_inplace(&mut out, &cb_eval(sc, params, buffers, &h, false)),
                None => add_inplace(&mut out, &h),
            }
            layers::relu_inplace(&mut out);
            h = out;
        }
        let feats = layers::gap_forward(&h);
        self.head_forward(params, &feats, x.n)
    }

    fn head_forward(&self, params: &[f64], feats: &[f64], n: usize) -> Vec<f64> {
        let hd = &self.head;
        layers::linear_forward(
            &params[hd.weight..hd.weight + hd.inp * hd.out],
            &params[hd.bias..hd.bias + hd.out],
            feats,
            n,
            hd.inp,
        )
    }

    /// Training-mode forward. Running statistics are updated only when
    /// `buffers` is given.
    pub(crate) fn forward_train(
        &self,
        params: &[f64],
        mut buffers: Option<&mut [f64]>,
        x: Tensor,
    ) -> (Vec<f64>, ForwardCache) {
        let n = x.n;
        let stem = cb_train(&self.stem, params, buffers.as_deref_mut(), x, true);
        let (mut h, pool_arg) = layers::maxpool_forward(&stem.out);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let a = cb_train(&block.a, params, buffers.as_deref_mut(), h.clone(), true);
            let b = cb_train(&block.b, params, buffers.as_deref_mut(), a.out.clone(), false);
            let mut out = b.out.clone();
            let shortcut = match &block.shortcut {
                Some(sc) => {
                    let s = cb_train(sc, params, buffers.as_deref_mut(), h, false);
                    add_inplace(&mut out, &s.out);
                    Some(s)
                }
                None => {
                    add_inplace(&mut out, &h);
                    None
                }
            };
            layers::relu_inplace(&mut out);
            h = out.clone();
            caches.push(BlockCache { a, b, shortcut, out });
        }
        let feats = layers::gap_forward(&h);
        let logits = self.head_forward(params, &feats, n);
        let cache = ForwardCache {
            stem,
            pool_arg,
            blocks: caches,
            last: h,
            feats,
        };
        (logits, cache)
    }

    /// Accumulates dLoss/dparams into `grads` given dLoss/dlogits.
    pub(crate) fn backward(&self, params: &[f64], cache: &ForwardCache, dlogits: &[f64], grads: &mut [f64]) {
        let hd = &self.head;
        let n = cache.last.n;
        let (dw, db) = grads[hd.weight..hd.bias + hd.out].split_at_mut(hd.inp * hd.out);
        let dfeat = layers::linear_backward(
            &params[hd.weight..hd.weight + hd.inp * hd.out],
            &cache.feats,
            dlogits,
            n,
            hd.inp,
            dw,
            db,
        );
        let mut dh = layers::gap_backward(&cache.last, &dfeat);

        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            layers::relu_backward_inplace(&bc.out, &mut dh);
            let mut da = cb_backward(&block.b, params, &bc.b, &dh, grads, true).expect("dx requested");
            layers::relu_backward_inplace(&bc.a.out, &mut da);
            let mut dx = cb_backward(&block.a, params, &bc.a, &da, grads, true).expect("dx requested");
            match (&block.shortcut, &bc.shortcut) {
                (Some(sc), Some(scc)) => {
                    let ds = cb_backward(sc, params, scc, &dh, grads, true).expect("dx requested");
                    add_inplace(&mut dx, &ds);
                }
                _ => add_inplace(&mut dx, &dh),
            }
            dh = dx;
        }

        let mut dstem = layers::maxpool_backward(&cache.stem.out, &cache.pool_arg, &dh);
        layers::relu_backward_inplace(&cache.stem.out, &mut dstem);
        cb_backward(&self.stem, params, &cache.stem, &dstem, grads, false);
    }
}

/// A network with its parameters, batch-norm running statistics, and the
/// log of how it was trained.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    config: ModelConfig,
    params: Vec<f64>,
    buffers: Vec<f64>,
    mode: Mode,
    pub log: TrainingLog,
    arch: Architecture,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.buffers == other.buffers
            && self.mode == other.mode
            && self.log == other.log
    }
}

impl TrainedModel {
    /// Freshly initialized model in eval mode.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(config);
        let (params, buffers) = arch.init(seed);
        Ok(TrainedModel {
            config: config.clone(),
            params,
            buffers,
            mode: Mode::Eval,
            log: TrainingLog::default(),
            arch,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f64>, buffers: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        if params.len() != arch.param_len || buffers.len() != arch.buffer_len {
            return Err(Error::argument(format!(
                "expected {} parameters and {} buffers, got {} and {}",
                arch.param_len,
                arch.buffer_len,
                params.len(),
                buffers.len()
            )));
        }
        if params.iter().chain(&buffers).any(|v| !v.is_finite()) {
            return Err(Error::numeric(None, "non-finite parameter"));
        }
        Ok(TrainedModel {
            config,
            params,
            buffers,
            mode: Mode::Eval,
            log: TrainingLog::default(),
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Batch-norm running means and variances, layer by layer.
    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [f64] {
        &mut self.buffers
    }

    pub(crate) fn params_and_buffers_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.params, &mut self.buffers)
    }

    pub(crate) fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// Offsets and sizes of each named parameter tensor.
    pub fn layout(&self) -> &[ParamEntry] {
        &self.arch.entries
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Sets the final linear layer's weights and bias to zero.
    pub fn zero_head(&mut self) {
        let range = self.arch.head_range();
        self.params[range].fill(0.0);
    }

    pub(crate) fn head_range(&self) -> std::ops::Range<usize> {
        self.arch.head_range()
    }

    pub(crate) fn check_input(&self, dims: ImageDims) -> Result<()> {
        if dims != self.config.input {
            return Err(Error::argument(format!(
                "image dims {dims} do not match model input {}",
                self.config.input
            )));
        }
        Ok(())
    }

    /// Logits for a batch of images, in the current mode. Training mode uses
    /// the batch's own statistics and leaves running statistics untouched.
    pub fn forward_batch(&self, images: &[&Image]) -> Result<Vec<[f64; 2]>> {
        for img in images {
            self.check_input(img.dims())?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = images_to_tensor(images);
        let logits = match self.mode {
            Mode::Eval => self.arch.forward_eval(&self.params, &self.buffers, &x),
            Mode::Train => self.arch.forward_train(&self.params, None, x).0,
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(None, "non-finite logits"));
        }
        Ok(logits.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// Logit pair for one image.
pub fn forward(model: &TrainedModel, img: &Image) -> Result<[f64; 2]> {
    Ok(model.forward_batch(&[img])?[0])
}

/// Interleaved HWC images to an NCHW tensor.
pub(crate) fn images_to_tensor(images: &[&Image]) -> Tensor {
    let dims = images[0].dims();
    let (h, w) = (dims.height, dims.width);
    let mut t = Tensor::zeros(images.len(), 3, h, w);
    let plane = h * w;
    for (i, img) in images.iter().enumerate() {
        let dst = &mut t.data[i * 3 * plane..(i + 1) * 3 * plane];
        for (p, px) in img.as_slice().chunks_exact(3).enumerate() {
            dst[p] = px[0];
            dst[plane + p] = px[1];
            dst[2 * plane + p] = px[2];
        }
    }
    t
}
