//! CompNet, FineNet, SMapNet and the segmenter topology.
//!
//! Layer notation: `Nc_k` is an NxN convolution with k filters followed by
//! instance normalization and ReLU, `Nr_k` a residual block, `Nu_k` a stride
//! 1/2 convolution, `Nv_k` the shared recursive unit. The layer tables are
//! data ([`NetTopology`]); one interpreter runs all four networks on a
//! [`Tape`], so inference and training share the forward code.
//!
//! Parameter names are `<net>.<layer>.{weight,bias,gamma,beta}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};
use crate::weights::{Params, WeightSet};

/// Spatial down-sampling factor of CompNet.
pub const DOWN_FACTOR: usize = 8;
pub const RESIDUAL_BLOCKS: usize = 9;
pub const RECURSIONS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `c`: convolution, optional IN, activation.
    Conv,
    /// `r`: conv-IN-ReLU-conv-IN plus identity.
    Residual,
    /// `u`: stride 1/2 convolution, IN, ReLU.
    Up,
    /// `v`: shared-weight recursive residual unit applied `repeats` times.
    Recursive { repeats: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    fn conv(name: &str, kernel: usize, filters: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            kernel,
            filters,
            stride,
            norm: true,
            activation: Activation::Relu,
        }
    }

    fn output(name: &str, kernel: usize, filters: usize, activation: Activation) -> Self {
        LayerSpec {
            norm: false,
            activation,
            ..LayerSpec::conv(name, kernel, filters, 1)
        }
    }

    fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetName {
    CompNet,
    FineNet,
    SMapNet,
    Segmenter,
}

impl NetName {
    pub const ALL: [NetName; 4] = [
        NetName::CompNet,
        NetName::FineNet,
        NetName::SMapNet,
        NetName::Segmenter,
    ];

    pub fn prefix(&self) -> &'static str {
        match self {
            NetName::CompNet => "compnet",
            NetName::FineNet => "finenet",
            NetName::SMapNet => "smapnet",
            NetName::Segmenter => "segmenter",
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            NetName::FineNet => 6,
            _ => 3,
        }
    }
}

/// Channel widths. The layer counts are fixed; only widths scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Width of the first CompNet/FineNet layer (64 in the reference design).
    pub base: usize,
    /// Width of the SMapNet layers (64 in the reference design).
    pub smap_width: usize,
    /// Number of segment classes.
    pub classes: usize,
}

impl NetConfig {
    /// Reference widths: 64/128/256/512, SMapNet 64.
    pub const fn reference(classes: usize) -> Self {
        NetConfig {
            base: 64,
            smap_width: 64,
            classes,
        }
    }

    /// Narrow widths that train on a single CPU core in minutes.
    pub const fn toy(classes: usize) -> Self {
        NetConfig {
            base: 8,
            smap_width: 8,
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetTopology {
    pub name: NetName,
    pub layers: Vec<LayerSpec>,
}

impl NetTopology {
    pub fn new(name: NetName, cfg: &NetConfig) -> Self {
        let b = cfg.base;
        let layers = match name {
            NetName::CompNet => vec![
                LayerSpec::conv("c0", 7, b, 1),
                LayerSpec::conv("c1", 3, 2 * b, 2),
                LayerSpec::conv("c2", 3, 4 * b, 2),
                LayerSpec::conv("c3", 3, 8 * b, 2),
                LayerSpec::output("out", 7, 3, Activation::Tanh),
            ],
            NetName::FineNet => {
                let mut l = vec![
                    LayerSpec::conv("c0", 7, b, 1),
                    LayerSpec::conv("c1", 3, 2 * b, 2),
                    LayerSpec::conv("c2", 3, 4 * b, 2),
                    LayerSpec::conv("c3", 3, 8 * b, 2),
                ];
                for i in 0..RESIDUAL_BLOCKS {
                    l.push(
                        LayerSpec::conv(&format!("res{i}"), 3, 8 * b, 1)
                            .with_kind(LayerKind::Residual),
                    );
                }
                for (i, k) in [4 * b, 2 * b, b].into_iter().enumerate() {
                    l.push(LayerSpec::conv(&format!("up{i}"), 3, k, 1).with_kind(LayerKind::Up));
                }
                l.push(LayerSpec::output("out", 7, 3, Activation::Tanh));
                l
            }
            NetName::SMapNet => vec![
                LayerSpec::conv("entry", 3, cfg.smap_width, 1),
                LayerSpec {
                    norm: false,
                    ..LayerSpec::conv("unit", 3, cfg.smap_width, 1)
                }
                .with_kind(LayerKind::Recursive {
                    repeats: RECURSIONS,
                }),
                LayerSpec::output("out", 3, 3, Activation::None),
            ],
            NetName::Segmenter => vec![
                LayerSpec::conv("c0", 3, 16, 1),
                LayerSpec::conv("c1", 3, 32, 1),
                LayerSpec::output("out", 3, cfg.classes, Activation::None),
            ],
        };
        NetTopology { name, layers }
    }

    /// Full layer name, e.g. `finenet.res3`.
    pub fn layer_name(&self, layer: &LayerSpec) -> String {
        format!("{}.{}", self.name.prefix(), layer.name)
    }

    /// Name of the last layer (trained at a reduced learning rate).
    pub fn final_layer(&self) -> String {
        self.layer_name(self.layers.last().expect("topologies are non-empty"))
    }

    /// `(layer name, kernel, in_c, out_c, norm)` for every convolution.
    fn convolutions(&self) -> Vec<(String, usize, usize, usize, bool, Activation)> {
        let mut out = Vec::new();
        let mut c = self.name.input_channels();
        for l in &self.layers {
            let base = self.layer_name(l);
            match l.kind {
                LayerKind::Conv | LayerKind::Up => {
                    out.push((base, l.kernel, c, l.filters, l.norm, l.activation))
                }
                LayerKind::Residual => {
                    out.push((
                        format!("{base}.a"),
                        l.kernel,
                        c,
                        l.filters,
                        true,
                        Activation::Relu,
                    ));
                    out.push((
                        format!("{base}.b"),
                        l.kernel,
                        l.filters,
                        l.filters,
                        true,
                        Activation::None,
                    ));
                }
                LayerKind::Recursive { .. } => {
                    out.push((
                        format!("{base}.a"),
                        l.kernel,
                        c,
                        l.filters,
                        false,
                        Activation::Relu,
                    ));
                    out.push((
                        format!("{base}.b"),
                        l.kernel,
                        l.filters,
                        l.filters,
                        false,
                        Activation::None,
                    ));
                }
            }
            c = l.filters;
        }
        out
    }

    /// Every parameter name the network resolves.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (layer, _, _, _, norm, _) in self.convolutions() {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
            if norm {
                names.push(format!("{layer}.gamma"));
                names.push(format!("{layer}.beta"));
            }
        }
        names
    }

    /// Seeded initialization: He-uniform kernels (scaled down for the output
    /// layer and the second convolution of residual units), zero biases,
    /// unit gamma, zero beta.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for (layer, k, in_c, out_c, norm, act) in self.convolutions() {
            let fan_in = (in_c * k * k) as f32;
            let mut bound = (6.0 / fan_in).sqrt();
            if act != Activation::Relu {
                bound *= 0.5;
            }
            let dims = Dims::new(out_c, in_c, k, k);
            let data = (0..dims.len())
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            out.push((
                format!("{layer}.weight"),
                Tensor::from_vec(dims, data).expect("length matches dims"),
            ));
            out.push((
                format!("{layer}.bias"),
                Tensor::zeros(Dims::new(1, 1, 1, out_c)),
            ));
            if norm {
                out.push((
                    format!("{layer}.gamma"),
                    Tensor::full(Dims::new(1, 1, 1, out_c), 1.0),
                ));
                out.push((
                    format!("{layer}.beta"),
                    Tensor::zeros(Dims::new(1, 1, 1, out_c)),
                ));
            }
        }
        out
    }

    /// Runs the network on `x`, recording onto `tape`.
    pub fn run(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let name = self.layer_name(l);
            h = match l.kind {
                LayerKind::Conv => {
                    let mut y = tape.conv(h, &name, l.stride)?;
                    if l.norm {
                        y = tape.norm(y, &name)?;
                    }
                    activate(tape, y, l.activation)?
                }
                LayerKind::Up => {
                    let y = tape.conv_transpose(h, &name)?;
                    let y = tape.norm(y, &name)?;
                    tape.relu(y)?
                }
                LayerKind::Residual => {
                    let (a, b) = (format!("{name}.a"), format!("{name}.b"));
                    let y = tape.conv(h, &a, 1)?;
                    let y = tape.norm(y, &a)?;
                    let y = tape.relu(y)?;
                    let y = tape.conv(y, &b, 1)?;
                    let y = tape.norm(y, &b)?;
                    tape.add(h, y)?
                }
                LayerKind::Recursive { repeats } => {
                    // x_{t+1} = relu(x0 + C2(relu(C1(x_t)))), one weight pair.
                    let (a, b) = (format!("{name}.a"), format!("{name}.b"));
                    let x0 = h;
                    let mut xt = h;
                    for _ in 0..repeats {
                        let y = tape.conv(xt, &a, 1)?;
                        let y = tape.relu(y)?;
                        let y = tape.conv(y, &b, 1)?;
                        let y = tape.add(x0, y)?;
                        xt = tape.relu(y)?;
                    }
                    xt
                }
            };
        }
        Ok(h)
    }
}

fn activate(tape: &mut Tape<'_>, y: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::None => Ok(y),
        Activation::Relu => tape.relu(y),
        Activation::Tanh => tape.tanh(y),
    }
}

/// Recovers the widths of a weight set from its tensor shapes.
pub fn infer_config(w: &WeightSet) -> Result<NetConfig> {
    let out_dim = |name: &str| -> Result<usize> {
        w.get(name)
            .map(|t| t.dims().n)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    };
    let base = out_dim("compnet.c0.weight").or_else(|_| out_dim("finenet.c0.weight"));
    Ok(NetConfig {
        base: base.unwrap_or(0),
        smap_width: out_dim("smapnet.entry.weight").unwrap_or(0),
        classes: out_dim("segmenter.out.weight").unwrap_or(0),
    })
}

/// Seeded random weights for the given networks.
pub fn init_networks(cfg: &NetConfig, nets: &[NetName], seed: u64) -> Result<WeightSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for &net in nets {
        entries.extend(NetTopology::new(net, cfg).init(&mut rng));
    }
    WeightSet::from_tensors(entries)
}

/// Seeded random weights for all four networks.
pub fn init_weights(cfg: &NetConfig, seed: u64) -> Result<WeightSet> {
    init_networks(cfg, &NetName::ALL, seed)
}

fn check_rgb(op: &'static str, x: &Tensor<f32>) -> Result<Dims> {
    let d = x.dims();
    if d.n != 1 || d.c != 3 || d.h == 0 || d.w == 0 {
        return Err(Error::shape(op, format!("expected 1x3xHxW, got {d}")));
    }
    Ok(d)
}

fn check_multiple_of_8(op: &'static str, d: Dims) -> Result<()> {
    if !d.h.is_multiple_of(DOWN_FACTOR) || !d.w.is_multiple_of(DOWN_FACTOR) {
        return Err(Error::shape(
            op,
            format!(
                "spatial dims {}x{} must be multiples of {DOWN_FACTOR}",
                d.h, d.w
            ),
        ));
    }
    Ok(())
}

fn run_net(
    net: NetName,
    cfg: &NetConfig,
    input: Tensor<f32>,
    w: &dyn Params,
) -> Result<Tensor<f32>> {
    let mut tape = Tape::new(w);
    let x = tape.input(input);
    let y = NetTopology::new(net, cfg).run(&mut tape, x)?;
    Ok(tape.take(y))
}

fn config_for(w: &WeightSet) -> NetConfig {
    infer_config(w).unwrap_or(NetConfig::reference(0))
}

/// `1x3xHxW` in `[-1, 1]` to the `1x3x(H/8)x(W/8)` compact representation.
pub fn forward_compnet(img: &Tensor<f32>, w: &WeightSet) -> Result<Tensor<f32>> {
    let d = check_rgb("forward_compnet", img)?;
    check_multiple_of_8("forward_compnet", d)?;
    run_net(NetName::CompNet, &config_for(w), img.clone(), w)
}

/// Synthesis from the up-sampled image and a (normalized, colorized) segment.
pub fn forward_finenet(up: &Tensor<f32>, seg: &Tensor<f32>, w: &WeightSet) -> Result<Tensor<f32>> {
    let d = check_rgb("forward_finenet", up)?;
    if seg.dims() != d {
        return Err(Error::shape(
            "forward_finenet",
            format!("image {d} vs segment {}", seg.dims()),
        ));
    }
    check_multiple_of_8("forward_finenet", d)?;
    let mut tape = Tape::new(w);
    let a = tape.input(up.clone());
    let b = tape.input(seg.clone());
    let x = tape.concat(a, b)?;
    let y = NetTopology::new(NetName::FineNet, &config_for(w)).run(&mut tape, x)?;
    Ok(tape.take(y))
}

/// Segment enhancement. The output is unbounded; callers clamp to `[-1, 1]`.
pub fn forward_smapnet(seg: &Tensor<f32>, w: &WeightSet) -> Result<Tensor<f32>> {
    check_rgb("forward_smapnet", seg)?;
    run_net(NetName::SMapNet, &config_for(w), seg.clone(), w)
}

/// Per-pixel class logits `1xLxHxW`.
pub fn forward_segmenter_logits(img: &Tensor<f32>, w: &WeightSet) -> Result<Tensor<f32>> {
    check_rgb("forward_segmenter", img)?;
    run_net(NetName::Segmenter, &config_for(w), img.clone(), w)
}
