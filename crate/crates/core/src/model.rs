//! Compositional generator and mirrored discriminator.
//!
//! The generator maps each part vector `z_i` through its own affine head to
//! `|cells_i| × c` values, scatters those into the part's cells of the first
//! `grid_h × grid_w × c` block, and runs a shared SAME-padded conv stack with
//! nearest-neighbour upsampling. Both networks are described by a layer plan
//! that the forward pass interprets and the influence analysis walks.

use std::io::{Read, Write};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::latent::{stack_part, PartLatentBundle, PriorSpec};
use crate::layout::PartLayout;
use crate::tensor::Tensor;

pub const PIXEL_NORM_EPS: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f32),
}

impl Activation {
    fn apply(self, x: &Var) -> Var {
        match self {
            Activation::LeakyRelu(slope) => ag::leaky_relu(x, slope),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layout: PartLayout,
    /// Channels of the first block (`c` in `grid_h × grid_w × c`).
    pub head_channels: usize,
    /// Channels per resolution level, `level_channels[0] == head_channels`.
    pub level_channels: Vec<usize>,
    pub out_resolution: usize,
    pub up_blocks: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub pixel_norm: bool,
    pub rgb_channels: usize,
}

impl ModelSpec {
    /// Grid 8×8 (from the layout), `c = 128`, 32×32 output, 3×3 kernels.
    pub fn desk(layout: PartLayout) -> Self {
        Self::new(layout, 128, 32)
    }

    /// Constant channel count at every level.
    pub fn new(layout: PartLayout, head_channels: usize, out_resolution: usize) -> Self {
        let up_blocks = (out_resolution / layout.grid_width().max(1)).max(1).ilog2() as usize;
        Self {
            layout,
            head_channels,
            level_channels: vec![head_channels; up_blocks + 1],
            out_resolution,
            up_blocks,
            kernel_size: 3,
            activation: Activation::LeakyRelu(0.2),
            pixel_norm: true,
            rgb_channels: 3,
        }
    }

    /// Halve channels at each upsampling level, never below `min`.
    pub fn with_channel_halving(mut self, min: usize) -> Self {
        let mut c = self.head_channels;
        for ch in self.level_channels.iter_mut() {
            *ch = c.max(min);
            c /= 2;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let report = self.layout.validate();
        if !report.is_ok() {
            return Err(Error::InvalidLayout(report.to_string()));
        }
        if self.layout.grid_height() != self.layout.grid_width() {
            return bad("only square grids are supported".into());
        }
        if self.out_resolution != self.layout.grid_width() << self.up_blocks {
            return bad(format!(
                "out_resolution {} != grid {} × 2^{}",
                self.out_resolution,
                self.layout.grid_width(),
                self.up_blocks
            ));
        }
        if self.head_channels == 0 || self.level_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.level_channels.len() != self.up_blocks + 1 || self.level_channels[0] != self.head_channels {
            return bad("level_channels must have up_blocks + 1 entries starting with head_channels".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.rgb_channels == 0 {
            return bad("rgb_channels must be positive".into());
        }
        Ok(())
    }

    /// Layer sequence of the generator after head assembly.
    pub fn generator_plan(&self) -> Vec<Layer> {
        let k = self.kernel_size;
        let mut plan = vec![Layer::Activation];
        if self.pixel_norm {
            plan.push(Layer::PixelNorm);
        }
        let conv = |plan: &mut Vec<Layer>, name: String, cin: usize, cout: usize| {
            plan.push(Layer::Conv {
                name,
                kernel: k,
                in_channels: cin,
                out_channels: cout,
            });
            plan.push(Layer::Activation);
            if self.pixel_norm {
                plan.push(Layer::PixelNorm);
            }
        };
        let c0 = self.level_channels[0];
        conv(&mut plan, "g.block0.conv".into(), c0, c0);
        for b in 1..=self.up_blocks {
            let (cin, cout) = (self.level_channels[b - 1], self.level_channels[b]);
            plan.push(Layer::Upsample2x);
            conv(&mut plan, format!("g.up{b}.conv1"), cin, cout);
            conv(&mut plan, format!("g.up{b}.conv2"), cout, cout);
        }
        plan.push(Layer::Conv {
            name: "g.to_rgb".into(),
            kernel: 1,
            in_channels: *self.level_channels.last().unwrap(),
            out_channels: self.rgb_channels,
        });
        plan.push(Layer::Tanh);
        plan
    }
}

/// One step of a network plan.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// SAME-padded stride-1 convolution with bias.
    Conv {
        name: String,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    },
    Upsample2x,
    Activation,
    PixelNorm,
    Tanh,
    /// A layer whose spatial dependency structure is not known.
    Opaque(String),
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Wrap every tensor as a graph leaf (trainable) or constant.
    pub fn bind(&self, trainable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| {
                if trainable {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect()
    }

    /// Hash of all names, shapes and bit patterns.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f32) -> Tensor {
    let std = gain / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let v: f32 = StandardNormal.sample(rng);
                v * std
            })
            .collect(),
    )
}

const HE_GAIN: f32 = std::f32::consts::SQRT_2;

/// Per-part affine head parameters: `weights[i]` is `[d_i, |cells_i| × c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Column maps that scatter each part's head output into the flattened
/// `[c, grid_h, grid_w]` block. Head column `j·c + ch` of part `i` lands at
/// channel `ch` of the `j`-th cell (row-major) of part `i`.
pub fn head_scatter_indices(spec: &ModelSpec) -> Vec<Rc<Vec<usize>>> {
    let (h, w, c) = (spec.layout.grid_height(), spec.layout.grid_width(), spec.head_channels);
    (1..=spec.layout.num_parts())
        .map(|p| {
            let cells = spec.layout.part_cells(p).expect("part id in range");
            let mut idx = Vec::with_capacity(cells.len() * c);
            for cell in &cells {
                for ch in 0..c {
                    idx.push(ch * h * w + cell.row * w + cell.col);
                }
            }
            Rc::new(idx)
        })
        .collect()
}

fn check_bundle_dims(bundle: &PartLatentBundle, head: &HeadParams) -> Result<()> {
    if bundle.num_parts() != head.weights.len() {
        return Err(Error::Shape(format!(
            "bundle has {} parts, head has {}",
            bundle.num_parts(),
            head.weights.len()
        )));
    }
    for (i, (v, w)) in bundle.vectors.iter().zip(&head.weights).enumerate() {
        if v.len() != w.shape()[0] {
            return Err(Error::Shape(format!(
                "part {} vector has dim {}, head expects {}",
                i + 1,
                v.len(),
                w.shape()[0]
            )));
        }
    }
    Ok(())
}

/// Differentiable head assembly for a batch: `z[i]` is `[N, d_i]`.
/// Returns the raw (pre-activation) first block `[N, c, grid_h, grid_w]`.
pub fn compose_head_vars(z: &[Var], weights: &[Var], biases: &[Var], spec: &ModelSpec) -> Var {
    let n = z[0].shape()[0];
    let (h, w, c) = (spec.layout.grid_height(), spec.layout.grid_width(), spec.head_channels);
    let width = c * h * w;
    let mut block: Option<Var> = None;
    for (i, idx) in head_scatter_indices(spec).into_iter().enumerate() {
        let y = ag::add_channel_bias(&ag::matmul(&z[i], &weights[i]), &biases[i]);
        let scattered = ag::scatter_cols(&y, idx, width);
        block = Some(match block {
            Some(b) => b.add(&scattered),
            None => scattered,
        });
    }
    ag::reshape(&block.expect("at least one part"), &[n, c, h, w])
}

/// First block `[1, c, grid_h, grid_w]` for one bundle. Every cell is written
/// by exactly one part's head.
pub fn compose_head(bundle: &PartLatentBundle, head: &HeadParams, spec: &ModelSpec) -> Result<Tensor> {
    check_bundle_dims(bundle, head)?;
    for (i, (w, b)) in head.weights.iter().zip(&head.biases).enumerate() {
        let cells = spec.layout.cell_count(i + 1)?;
        let expect = cells * spec.head_channels;
        if w.shape()[1] != expect || b.len() != expect {
            return Err(Error::Shape(format!(
                "head {} maps to {} values, layout needs {expect}",
                i + 1,
                w.shape()[1]
            )));
        }
    }
    let _ng = ag::no_grad();
    let z: Vec<Var> = (1..=bundle.num_parts())
        .map(|p| Var::constant(stack_part(std::slice::from_ref(bundle), p)))
        .collect();
    let ws: Vec<Var> = head.weights.iter().cloned().map(Var::constant).collect();
    let bs: Vec<Var> = head.biases.iter().cloned().map(Var::constant).collect();
    Ok(compose_head_vars(&z, &ws, &bs, spec).value().clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: ModelSpec,
    pub prior: PriorSpec,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(spec: ModelSpec, prior: PriorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        prior.check(&spec.layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let c = spec.head_channels;
        for (i, &d) in prior.dims.iter().enumerate() {
            let out = spec.layout.cell_count(i + 1)? * c;
            params.push(
                format!("g.head{}.weight", i + 1),
                he_normal(&mut rng, &[d, out], d, HE_GAIN),
            );
            params.push(format!("g.head{}.bias", i + 1), Tensor::zeros(&[out]));
        }
        for layer in spec.generator_plan() {
            if let Layer::Conv {
                name,
                kernel,
                in_channels,
                out_channels,
            } = layer
            {
                let fan_in = in_channels * kernel * kernel;
                let gain = if name == "g.to_rgb" { 1.0 } else { HE_GAIN };
                params.push(
                    format!("{name}.weight"),
                    he_normal(&mut rng, &[out_channels, in_channels, kernel, kernel], fan_in, gain),
                );
                params.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
            }
        }
        Ok(Self { spec, prior, params })
    }

    pub fn num_parts(&self) -> usize {
        self.prior.dims.len()
    }

    pub fn head(&self) -> HeadParams {
        let k = self.num_parts();
        let t: Vec<&Tensor> = self.params.tensors().collect();
        HeadParams {
            weights: (0..k).map(|i| t[2 * i].clone()).collect(),
            biases: (0..k).map(|i| t[2 * i + 1].clone()).collect(),
        }
    }

    /// Forward pass on bound parameters; `z[i]` is `[N, d_i]`.
    pub fn forward(&self, params: &[Var], z: &[Var]) -> Var {
        let k = self.num_parts();
        let weights: Vec<Var> = (0..k).map(|i| params[2 * i].clone()).collect();
        let biases: Vec<Var> = (0..k).map(|i| params[2 * i + 1].clone()).collect();
        let mut x = compose_head_vars(z, &weights, &biases, &self.spec);
        let mut next = 2 * k;
        for layer in self.spec.generator_plan() {
            x = match layer {
                Layer::Conv { .. } => {
                    let y = ag::conv2d(&x, &params[next]);
                    let y = ag::add_channel_bias(&y, &params[next + 1]);
                    next += 2;
                    y
                }
                Layer::Upsample2x => ag::upsample2x(&x),
                Layer::Activation => self.spec.activation.apply(&x),
                Layer::PixelNorm => ag::pixel_norm(&x, PIXEL_NORM_EPS),
                Layer::Tanh => ag::tanh(&x),
                Layer::Opaque(name) => unreachable!("generator plan never contains opaque layer {name}"),
            };
        }
        x
    }

    pub fn latent_vars(&self, bundles: &[PartLatentBundle]) -> Result<Vec<Var>> {
        if bundles.is_empty() {
            return Err(Error::Shape("empty bundle batch".into()));
        }
        let head = self.head();
        for b in bundles {
            check_bundle_dims(b, &head)?;
        }
        Ok((1..=self.num_parts())
            .map(|p| Var::constant(stack_part(bundles, p)))
            .collect())
    }

    /// Render a batch of bundles to `[N, rgb, R, R]` images in `[-1, 1]`.
    pub fn generate(&self, bundles: &[PartLatentBundle]) -> Result<Tensor> {
        let z = self.latent_vars(bundles)?;
        let _ng = ag::no_grad();
        let params = self.params.bind(false);
        let out = self.forward(&params, &z).value().clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("generator output (diverged parameters?)".into()));
        }
        Ok(out)
    }

    /// Render in chunks of `chunk` bundles to bound memory.
    pub fn generate_chunked(&self, bundles: &[PartLatentBundle], chunk: usize) -> Result<Tensor> {
        let parts = bundles
            .chunks(chunk.max(1))
            .map(|c| self.generate(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&parts))
    }

    pub fn generate_one(&self, bundle: &PartLatentBundle) -> Result<GeneratedImage> {
        let t = self.generate(std::slice::from_ref(bundle))?;
        let r = self.spec.out_resolution;
        Ok(GeneratedImage {
            pixels: t.reshape(&[self.spec.rgb_channels, r, r]),
        })
    }
}

/// One image, `[rgb, R, R]`, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedImage {
    pub pixels: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// Discriminator conv layers, input side first: `(name, kernel, in, out)`
/// plus a pooling flag after each.
fn discriminator_convs(spec: &ModelSpec) -> Vec<(String, usize, usize, usize, bool)> {
    let k = spec.kernel_size;
    let lc = &spec.level_channels;
    let mut convs = vec![(
        "d.from_rgb".to_string(),
        1,
        spec.rgb_channels,
        lc[spec.up_blocks],
        false,
    )];
    for b in (1..=spec.up_blocks).rev() {
        convs.push((format!("d.down{b}.conv1"), k, lc[b], lc[b], false));
        convs.push((format!("d.down{b}.conv2"), k, lc[b], lc[b - 1], true));
    }
    convs.push(("d.block0.conv".into(), k, lc[0], lc[0], false));
    convs
}

impl Discriminator {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        for (name, k, cin, cout, _) in discriminator_convs(&spec) {
            params.push(
                format!("{name}.weight"),
                he_normal(&mut rng, &[cout, cin, k, k], cin * k * k, HE_GAIN),
            );
            params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        }
        let c0 = spec.level_channels[0];
        let flat = c0 * spec.layout.grid_height() * spec.layout.grid_width();
        params.push("d.fc1.weight", he_normal(&mut rng, &[flat, c0], flat, HE_GAIN));
        params.push("d.fc1.bias", Tensor::zeros(&[c0]));
        params.push("d.fc2.weight", he_normal(&mut rng, &[c0, 1], c0, 1.0));
        params.push("d.fc2.bias", Tensor::zeros(&[1]));
        Ok(Self { spec, params })
    }

    /// Scores `[N]` for images `[N, rgb, R, R]`.
    pub fn forward(&self, params: &[Var], x: &Var) -> Var {
        let mut h = x.clone();
        let mut next = 0;
        for (_, _, _, _, pool) in discriminator_convs(&self.spec) {
            h = ag::conv2d(&h, &params[next]);
            h = ag::add_channel_bias(&h, &params[next + 1]);
            h = self.spec.activation.apply(&h);
            if pool {
                h = ag::avg_pool2x2(&h);
            }
            next += 2;
        }
        let n = h.shape()[0];
        let flat = h.value().len() / n;
        let h = ag::reshape(&h, &[n, flat]);
        let h = ag::add_channel_bias(&ag::matmul(&h, &params[next]), &params[next + 1]);
        let h = self.spec.activation.apply(&h);
        let s = ag::add_channel_bias(&ag::matmul(&h, &params[next + 2]), &params[next + 3]);
        ag::reshape(&s, &[n])
    }

    /// Penultimate (fc1) activations `[N, c0]`, used as a feature embedding.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        let _ng = ag::no_grad();
        let params = self.params.bind(false);
        let mut h = Var::constant(images.clone());
        let mut next = 0;
        for (_, _, _, _, pool) in discriminator_convs(&self.spec) {
            h = ag::conv2d(&h, &params[next]);
            h = ag::add_channel_bias(&h, &params[next + 1]);
            h = self.spec.activation.apply(&h);
            if pool {
                h = ag::avg_pool2x2(&h);
            }
            next += 2;
        }
        let n = h.shape()[0];
        let flat = h.value().len() / n;
        let h = ag::reshape(&h, &[n, flat]);
        let h = ag::add_channel_bias(&ag::matmul(&h, &params[next]), &params[next + 1]);
        Ok(self.spec.activation.apply(&h).value().clone())
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let r = self.spec.out_resolution;
        let s = images.shape();
        if s.len() != 4 || s[1] != self.spec.rgb_channels || s[2] != r || s[3] != r {
            return Err(Error::Shape(format!(
                "discriminator expects [N, {}, {r}, {r}], got {s:?}",
                self.spec.rgb_channels
            )));
        }
        Ok(())
    }

    pub fn discriminate(&self, images: &Tensor) -> Result<Vec<f32>> {
        self.check_images(images)?;
        let _ng = ag::no_grad();
        let params = self.params.bind(false);
        Ok(self
            .forward(&params, &Var::constant(images.clone()))
            .value()
            .data()
            .to_vec())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

const CKPT_MAGIC: &[u8; 8] = b"PZGCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    step: u64,
    spec: ModelSpec,
    prior: PriorSpec,
    layout_text: String,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let all: Vec<(&str, &Tensor)> = self
            .generator
            .params
            .iter()
            .chain(self.discriminator.params.iter())
            .collect();
        let header = CkptHeader {
            version: CKPT_VERSION,
            step: self.step,
            spec: self.generator.spec.clone(),
            prior: self.generator.prior.clone(),
            layout_text: self.generator.spec.layout.to_text(),
            tensors: all.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in all {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Load and check every tensor's name and shape against a freshly built
    /// model for the stored spec.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("not a puzzlegan checkpoint".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: CkptHeader = serde_json::from_slice(&json)?;
        if header.version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let layout = PartLayout::from_text(&header.layout_text)?;
        if layout != header.spec.layout {
            return Err(Error::LayoutMismatch(
                "checkpoint layout text disagrees with its spec".into(),
            ));
        }
        let mut generator = Generator::new(header.spec.clone(), header.prior, 0)?;
        let mut discriminator = Discriminator::new(header.spec, 0)?;
        let expected: Vec<(String, Vec<usize>)> = generator
            .params
            .iter()
            .chain(discriminator.params.iter())
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        if expected != header.tensors {
            let first = expected
                .iter()
                .zip(&header.tensors)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("{} tensors expected, {} stored", expected.len(), header.tensors.len()));
            return Err(Error::Shape(format!("checkpoint does not match its spec: {first}")));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if bytes.len() != total * 4 {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, expected {}",
                bytes.len(),
                total * 4
            )));
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for t in generator.params.tensors_mut().chain(discriminator.params.tensors_mut()) {
            let n = t.len();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            *t = Tensor::new(t.shape().to_vec(), data);
        }
        Ok(Self {
            step: header.step,
            generator,
            discriminator,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{default_prior_spec, mix, sample_bundle};
    use crate::layout::{canonical_layout, LayoutKind};

    fn small_spec(layout: PartLayout) -> ModelSpec {
        ModelSpec::new(layout, 4, 32)
    }

    fn facial_gen() -> Generator {
        let layout = canonical_layout(LayoutKind::FacialParts);
        let prior = default_prior_spec(&layout, 2);
        Generator::new(small_spec(layout), prior, 11).unwrap()
    }

    #[test]
    fn desk_shapes() {
        let spec = ModelSpec::desk(canonical_layout(LayoutKind::FacialParts));
        assert_eq!(spec.up_blocks, 2);
        assert_eq!(spec.out_resolution, 32);
        spec.validate().unwrap();
        let g = facial_gen();
        let b = sample_bundle(&g.prior, &g.spec.layout, 5).unwrap();
        let img = g.generate_one(&b).unwrap();
        assert_eq!(img.pixels.shape(), &[3, 32, 32]);
        assert!(img.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(g.generate_one(&b).unwrap(), img);
    }

    #[test]
    fn non_resampling_layers_keep_spatial_dims() {
        let g = facial_gen();
        let b = sample_bundle(&g.prior, &g.spec.layout, 1).unwrap();
        let z = g.latent_vars(&[b]).unwrap();
        let p = g.params.bind(false);
        let k = g.num_parts();
        let ws: Vec<Var> = (0..k).map(|i| p[2 * i].clone()).collect();
        let bs: Vec<Var> = (0..k).map(|i| p[2 * i + 1].clone()).collect();
        let mut x = compose_head_vars(&z, &ws, &bs, &g.spec);
        let mut next = 2 * k;
        for layer in g.spec.generator_plan() {
            let before = x.shape()[2];
            x = match layer {
                Layer::Conv { .. } => {
                    next += 2;
                    ag::conv2d(&x, &p[next - 2])
                }
                Layer::Upsample2x => ag::upsample2x(&x),
                _ => x,
            };
            let expect = if matches!(layer, Layer::Upsample2x) {
                2 * before
            } else {
                before
            };
            assert_eq!(x.shape()[2], expect);
            assert_eq!(x.shape()[3], expect);
        }
        assert_eq!(x.shape()[2], 32);
    }

    #[test]
    fn compose_head_zero_and_locality() {
        let g = facial_gen();
        let mut head = g.head();
        let zero = PartLatentBundle::zeros(&g.prior, &g.spec.layout);
        for b in head.biases.iter_mut() {
            *b = Tensor::zeros(b.shape());
        }
        let block = compose_head(&zero, &head, &g.spec).unwrap();
        assert!(block.data().iter().all(|&v| v == 0.0));

        let head = g.head();
        let t = sample_bundle(&g.prior, &g.spec.layout, 1).unwrap();
        let r = sample_bundle(&g.prior, &g.spec.layout, 2).unwrap();
        let base = compose_head(&t, &head, &g.spec).unwrap();
        let owners = g.spec.layout.owner_grid();
        for part in 1..=5 {
            let swapped = compose_head(&mix(&t, &r, &[part].into()).unwrap(), &head, &g.spec).unwrap();
            for ch in 0..4 {
                for (cell, owner) in owners.iter().enumerate() {
                    let i = ch * 64 + cell;
                    let changed = base.data()[i] != swapped.data()[i];
                    assert_eq!(changed, *owner == Some(part), "part {part} cell {cell}");
                }
            }
        }
    }

    #[test]
    fn single_part_head_is_fc_plus_reshape() {
        let layout = PartLayout::single_part(8, 8);
        let prior = default_prior_spec(&layout, 1);
        let g = Generator::new(small_spec(layout), prior, 3).unwrap();
        let b = sample_bundle(&g.prior, &g.spec.layout, 9).unwrap();
        let head = g.head();
        let block = compose_head(&b, &head, &g.spec).unwrap();
        // Plain FC: y = z W + b, reshaped so column j·c + ch → (ch, cell j).
        let w = &head.weights[0];
        let (d, out) = (w.shape()[0], w.shape()[1]);
        for col in 0..out {
            let y: f32 =
                (0..d).map(|i| b.vectors[0][i] * w.data()[i * out + col]).sum::<f32>() + head.biases[0].data()[col];
            let (cell, ch) = (col / 4, col % 4);
            assert!((block.data()[ch * 64 + cell] - y).abs() < 1e-4);
        }
    }

    #[test]
    fn compose_head_rejects_bad_dims() {
        let g = facial_gen();
        let mut b = sample_bundle(&g.prior, &g.spec.layout, 1).unwrap();
        b.vectors[2].push(0.0);
        assert!(matches!(compose_head(&b, &g.head(), &g.spec), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_batch_is_permutation_equivariant() {
        let g = facial_gen();
        let d = Discriminator::new(g.spec.clone(), 4).unwrap();
        let bundles: Vec<_> = (0..4)
            .map(|s| sample_bundle(&g.prior, &g.spec.layout, s).unwrap())
            .collect();
        let imgs = g.generate(&bundles).unwrap();
        let scores = d.discriminate(&imgs).unwrap();
        assert!(scores.iter().all(|s| s.is_finite()));
        let perm = [2usize, 0, 3, 1];
        let shuffled = Tensor::stack(&perm.iter().map(|&i| imgs.slice_batch(i, i + 1)).collect::<Vec<_>>());
        let s2 = d.discriminate(&shuffled).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(s2[j], scores[i]);
        }
        assert_eq!(d.discriminate(&imgs).unwrap(), scores);
        assert!(matches!(
            d.discriminate(&Tensor::zeros(&[1, 3, 16, 16])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_shape_check() {
        let g = facial_gen();
        let d = Discriminator::new(g.spec.clone(), 2).unwrap();
        let ck = Checkpoint {
            step: 12,
            generator: g,
            discriminator: d,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        // Corrupt the stored shape of one tensor.
        let text = String::from_utf8_lossy(&bytes).to_string();
        let hdr_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = &text[12..12 + hdr_len];
        let bad_header = header.replacen("[\"g.head1.bias\",[176]]", "[\"g.head1.bias\",[175]]", 1);
        assert_ne!(bad_header, header);
        let mut bad = bytes[..8].to_vec();
        bad.extend((bad_header.len() as u32).to_le_bytes());
        bad.extend(bad_header.as_bytes());
        bad.extend(&bytes[12 + hdr_len..]);
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(canonical_layout(LayoutKind::FaceSwap));
        spec.kernel_size = 4;
        assert!(spec.validate().is_err());
        let mut spec = small_spec(canonical_layout(LayoutKind::FaceSwap));
        spec.out_resolution = 48;
        assert!(spec.validate().is_err());
    }
}
