//! Toy-scale training: segmenter pre-stage, then CompNet + FineNet on
//! ground-truth segments, then SMapNet on the degraded segments.

mod dataset;

pub use dataset::{class_color, gen_dataset, list_images, read_dataset, write_dataset, Sample};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::nets::{init_networks, NetConfig, NetName, NetTopology, DOWN_FACTOR};
use crate::ops::{l1_loss, softmax_cross_entropy};
use crate::pipeline::{compact_layer, require_networks, segment_layer};
use crate::segmenter::{colorize, segment_scores, snap_to_palette, Palette};
use crate::tape::{ParamGrads, Tape};
use crate::tensor::Tensor;
use crate::weights::WeightSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Segmenter,
    Base,
    SMapNet,
}

impl Stage {
    pub fn networks(self) -> &'static [NetName] {
        match self {
            Stage::Segmenter => &[NetName::Segmenter],
            Stage::Base => &[NetName::CompNet, NetName::FineNet],
            Stage::SMapNet => &[NetName::SMapNet],
        }
    }

    /// Networks that must already be trained before this stage runs.
    pub fn prerequisites(self) -> &'static [NetName] {
        match self {
            Stage::Segmenter | Stage::Base => &[],
            Stage::SMapNet => &[NetName::CompNet, NetName::FineNet, NetName::Segmenter],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Segmenter => "segmenter",
            Stage::Base => "base",
            Stage::SMapNet => "smapnet",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage> {
        match s {
            "segmenter" => Ok(Stage::Segmenter),
            "base" => Ok(Stage::Base),
            "smapnet" => Ok(Stage::SMapNet),
            _ => Err(Error::InvalidArgument(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch: usize,
    pub lr: f32,
    pub final_lr_factor: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Side length of the (square) training images.
    pub size: usize,
    pub net: NetConfig,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
}

impl TrainConfig {
    /// Full-scale hyper-parameters: batch 32, lr 5e-4, 150 epochs, 256 px.
    pub fn new(stage: Stage, net: NetConfig) -> Self {
        TrainConfig {
            stage,
            batch: 32,
            lr: 5e-4,
            final_lr_factor: 0.1,
            epochs: 150,
            seed: 0,
            size: 256,
            net,
            freeze: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if self.lr.is_nan()
            || self.lr <= 0.0
            || self.final_lr_factor.is_nan()
            || self.final_lr_factor <= 0.0
        {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if self.size == 0 || !self.size.is_multiple_of(DOWN_FACTOR) {
            return Err(Error::InvalidArgument(format!(
                "image size {} is not a positive multiple of {DOWN_FACTOR}",
                self.size
            )));
        }
        if self.net.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        Ok(())
    }

    fn check_data(&self, data: &[Sample]) -> Result<()> {
        self.validate()?;
        for (i, s) in data.iter().enumerate() {
            if s.image.width() != self.size || s.image.height() != self.size {
                return Err(Error::shape(
                    "train",
                    format!(
                        "sample {i} is {}x{}, config expects {}",
                        s.image.width(),
                        s.image.height(),
                        self.size
                    ),
                ));
            }
            if s.classes
                .max_class()
                .is_some_and(|c| c as usize >= self.net.classes)
            {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has labels beyond {} classes",
                    self.net.classes
                )));
            }
        }
        Ok(())
    }
}

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor<f32>>,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr_of: &dyn Fn(&str) -> f32,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.clone()))?;
        if p.len() != g.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: parameter {} vs gradient {}", p.dims(), g.dims()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let lr = lr_of(name) as f64;
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi as f64;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Only the networks trained by the stage.
    pub weights: WeightSet,
    pub log: Vec<LossRecord>,
}

fn diverged(stage: Stage, epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            stage: stage.to_string(),
            epoch,
        },
        other => other,
    }
}

/// Generic minibatch loop: `sample_grad` returns one sample's loss and
/// parameter gradients; gradients are summed in sample order and averaged.
fn run_stage(
    cfg: &TrainConfig,
    init: WeightSet,
    samples: usize,
    mut sample_grad: impl FnMut(&BTreeMap<String, Tensor<f32>>, usize) -> Result<(f64, ParamGrads)>,
) -> Result<TrainOutput> {
    let mut params: BTreeMap<String, Tensor<f32>> = init.to_map("");
    let finals: Vec<String> = cfg
        .stage
        .networks()
        .iter()
        .map(|&n| format!("{}.", NetTopology::new(n, &cfg.net).final_layer()))
        .collect();
    let (lr, factor) = (cfg.lr, cfg.final_lr_factor);
    let lr_of = move |name: &str| {
        if finals.iter().any(|f| name.starts_with(f.as_str())) {
            lr * factor
        } else {
            lr
        }
    };
    let mut adam = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = dataset::shuffled(&mut rng, samples);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut sum: ParamGrads = BTreeMap::new();
            for &i in batch {
                let (loss, grads) = sample_grad(&params, i).map_err(diverged(cfg.stage, epoch))?;
                if !loss.is_finite() {
                    return Err(diverged(cfg.stage, epoch)(Error::NonFinite { op: "loss" }));
                }
                total += loss;
                for (name, g) in grads {
                    match sum.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            sum.insert(name, g);
                        }
                    }
                }
            }
            sum.retain(|name, _| !cfg.freeze.iter().any(|f| name.starts_with(f.as_str())));
            let scale = 1.0 / batch.len() as f32;
            for g in sum.values_mut() {
                g.scale(scale);
                if !g.all_finite() {
                    return Err(diverged(cfg.stage, epoch)(Error::NonFinite {
                        op: "gradient",
                    }));
                }
            }
            adam_step(&mut params, &sum, &mut adam, &lr_of)?;
        }
        let loss = if samples == 0 {
            0.0
        } else {
            total / samples as f64
        };
        log.push(LossRecord {
            epoch,
            stage: cfg.stage,
            loss,
        });
    }
    // keep the initialization's tensor order
    let entries = init
        .iter()
        .map(|(name, t)| {
            let trained = params.remove(name).unwrap_or_else(|| t.clone());
            (name.to_string(), trained)
        })
        .collect();
    Ok(TrainOutput {
        weights: WeightSet::from_tensors(entries)?,
        log,
    })
}

fn initial(cfg: &TrainConfig, init: Option<&WeightSet>) -> Result<WeightSet> {
    match init {
        Some(w) => Ok(w.clone()),
        None => init_networks(&cfg.net, cfg.stage.networks(), cfg.seed),
    }
}

fn stage_check(cfg: &TrainConfig, want: Stage) -> Result<()> {
    if cfg.stage != want {
        return Err(Error::InvalidArgument(format!(
            "config is for stage {}, not {want}",
            cfg.stage
        )));
    }
    Ok(())
}

/// Per-pixel cross-entropy training of the segmenter on original images.
/// `init` overrides the seeded initialization.
pub fn train_segmenter(
    cfg: &TrainConfig,
    data: &[Sample],
    init: Option<&WeightSet>,
) -> Result<TrainOutput> {
    stage_check(cfg, Stage::Segmenter)?;
    cfg.check_data(data)?;
    let topo = NetTopology::new(NetName::Segmenter, &cfg.net);
    let inputs: Vec<Tensor<f32>> = data.iter().map(|s| s.image.to_tensor()).collect();
    run_stage(cfg, initial(cfg, init)?, data.len(), |params, i| {
        let mut tape = Tape::new(params);
        let x = tape.input(inputs[i].clone());
        let y = topo.run(&mut tape, x)?;
        let out = softmax_cross_entropy(tape.value(y), data[i].classes.data())?;
        let grads = tape.backward(vec![(y, out.grad)])?;
        Ok((out.loss, grads))
    })
}

/// Normalized colorized ground-truth segment.
pub fn gt_segment(sample: &Sample, palette: &Palette) -> Result<Tensor<f32>> {
    Ok(colorize(&sample.classes, palette)?.to_tensor())
}

/// Joint CompNet + FineNet training with ground-truth segments:
/// `L1(synth, x) + L1(up(compact), x)`.
pub fn train_base(
    cfg: &TrainConfig,
    data: &[Sample],
    init: Option<&WeightSet>,
) -> Result<TrainOutput> {
    stage_check(cfg, Stage::Base)?;
    cfg.check_data(data)?;
    let comp = NetTopology::new(NetName::CompNet, &cfg.net);
    let fine = NetTopology::new(NetName::FineNet, &cfg.net);
    let palette = Palette::standard(cfg.net.classes)?;
    let inputs: Vec<(Tensor<f32>, Tensor<f32>)> = data
        .iter()
        .map(|s| Ok((s.image.to_tensor(), gt_segment(s, &palette)?)))
        .collect::<Result<_>>()?;
    let size = cfg.size;
    run_stage(cfg, initial(cfg, init)?, data.len(), |params, i| {
        let (img, seg) = &inputs[i];
        let mut tape = Tape::new(params);
        let x = tape.input(img.clone());
        let compact = comp.run(&mut tape, x)?;
        let up = tape.resize(compact, size, size)?;
        let s = tape.input(seg.clone());
        let joined = tape.concat(up, s)?;
        let synth = fine.run(&mut tape, joined)?;
        let a = l1_loss(tape.value(synth), img)?;
        let b = l1_loss(tape.value(up), img)?;
        let grads = tape.backward(vec![(synth, a.grad), (up, b.grad)])?;
        Ok((a.loss + b.loss, grads))
    })
}

/// The decoder-side segment of a sample under `w`, as class map and
/// normalized colorization.
pub fn degraded_segment(
    image: &ImageU8,
    w: &WeightSet,
) -> Result<(crate::image::ClassMap, Tensor<f32>)> {
    let (padded, compact) = compact_layer(image, w)?;
    let (_, seg, seg_in) = segment_layer(&compact, padded.width(), padded.height(), w)?;
    Ok((seg, seg_in))
}

/// SMapNet training against ground-truth segments. `base` must hold the
/// trained CompNet, FineNet and segmenter; it is only read.
pub fn train_smapnet(
    cfg: &TrainConfig,
    data: &[Sample],
    base: &WeightSet,
    init: Option<&WeightSet>,
) -> Result<TrainOutput> {
    stage_check(cfg, Stage::SMapNet)?;
    cfg.check_data(data)?;
    require_networks(base, Stage::SMapNet.prerequisites())?;
    let topo = NetTopology::new(NetName::SMapNet, &cfg.net);
    let palette = Palette::standard(cfg.net.classes)?;
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = data
        .iter()
        .map(|s| {
            Ok((
                degraded_segment(&s.image, base)?.1,
                gt_segment(s, &palette)?,
            ))
        })
        .collect::<Result<_>>()?;
    run_stage(cfg, initial(cfg, init)?, data.len(), |params, i| {
        let (deg, gt) = &pairs[i];
        let mut tape = Tape::new(params);
        let x = tape.input(deg.clone());
        let y = topo.run(&mut tape, x)?;
        // Loss on the clamped output; the gradient passes straight through
        // the clamp so saturated pixels can still move back into range.
        let clamped = tape.value(y).map(|v| v.clamp(-1.0, 1.0));
        let out = l1_loss(&clamped, gt)?;
        let grads = tape.backward(vec![(y, out.grad)])?;
        Ok((out.loss, grads))
    })
}

/// Held-out comparison of degraded and enhanced segments against ground
/// truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementReport {
    pub images: usize,
    pub l1_degraded: f64,
    pub l1_enhanced: f64,
    pub miou_degraded: f64,
    pub miou_enhanced: f64,
}

pub fn evaluate_enhancement(data: &[Sample], w: &WeightSet) -> Result<EnhancementReport> {
    let classes = require_networks(w, &NetName::ALL)?;
    let palette = Palette::standard(classes)?;
    let mut r = EnhancementReport {
        images: data.len(),
        l1_degraded: 0.0,
        l1_enhanced: 0.0,
        miou_degraded: 0.0,
        miou_enhanced: 0.0,
    };
    for s in data {
        let gt = gt_segment(s, &palette)?;
        if s.image.width() % DOWN_FACTOR != 0 || s.image.height() % DOWN_FACTOR != 0 {
            return Err(Error::shape(
                "evaluate_enhancement",
                format!("image dims must be multiples of {DOWN_FACTOR}"),
            ));
        }
        let (_, deg_t) = degraded_segment(&s.image, w)?;
        let enh_t = crate::nets::forward_smapnet(&deg_t, w)?.map(|v| v.clamp(-1.0, 1.0));
        r.l1_degraded += l1_loss(&deg_t, &gt)?.loss;
        r.l1_enhanced += l1_loss(&enh_t, &gt)?.loss;
        let snap = |t: &Tensor<f32>| -> Result<_> {
            Ok(snap_to_palette(&ImageU8::from_tensor(t)?, &palette))
        };
        r.miou_degraded += segment_scores(&snap(&deg_t)?, &s.classes, classes)?.mean_iou;
        r.miou_enhanced += segment_scores(&snap(&enh_t)?, &s.classes, classes)?.mean_iou;
    }
    if !data.is_empty() {
        let n = data.len() as f64;
        r.l1_degraded /= n;
        r.l1_enhanced /= n;
        r.miou_degraded /= n;
        r.miou_enhanced /= n;
    }
    Ok(r)
}

/// The seeded end-to-end toy run: generate data, then train the segmenter,
/// the base networks and SMapNet in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyRecipe {
    pub seed: u64,
    pub train_images: usize,
    pub size: usize,
    pub net: NetConfig,
    pub batch: usize,
    pub lr: f32,
    pub smapnet_lr: f32,
    pub segmenter_epochs: usize,
    pub base_epochs: usize,
    pub smapnet_epochs: usize,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            seed: 1,
            train_images: 64,
            size: 64,
            net: NetConfig::toy(4),
            batch: 4,
            lr: 2e-3,
            smapnet_lr: 1e-3,
            segmenter_epochs: 8,
            base_epochs: 8,
            smapnet_epochs: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecipeOutput {
    /// All four networks.
    pub weights: WeightSet,
    pub log: Vec<LossRecord>,
}

impl ToyRecipe {
    pub fn config(&self, stage: Stage) -> TrainConfig {
        let mut c = TrainConfig::new(stage, self.net);
        c.batch = self.batch;
        c.seed = self.seed;
        c.size = self.size;
        (c.lr, c.epochs) = match stage {
            Stage::Segmenter => (self.lr, self.segmenter_epochs),
            Stage::Base => (self.lr, self.base_epochs),
            Stage::SMapNet => (self.smapnet_lr, self.smapnet_epochs),
        };
        c
    }

    /// Training set of the recipe.
    pub fn train_data(&self) -> Result<Vec<Sample>> {
        gen_dataset(self.seed, self.train_images, self.size, self.net.classes)
    }

    /// A held-out set drawn from a different seed.
    pub fn heldout_data(&self, count: usize) -> Result<Vec<Sample>> {
        gen_dataset(
            self.seed.wrapping_add(0x4845_4c44),
            count,
            self.size,
            self.net.classes,
        )
    }

    pub fn run(&self) -> Result<RecipeOutput> {
        self.run_on(&self.train_data()?)
    }

    pub fn run_on(&self, data: &[Sample]) -> Result<RecipeOutput> {
        let seg = train_segmenter(&self.config(Stage::Segmenter), data, None)?;
        let base = train_base(&self.config(Stage::Base), data, None)?;
        let frozen = base.weights.merged(&seg.weights)?;
        let smap = train_smapnet(&self.config(Stage::SMapNet), data, &frozen, None)?;
        let mut log = seg.log;
        log.extend(base.log);
        log.extend(smap.log);
        Ok(RecipeOutput {
            weights: frozen.merged(&smap.weights)?,
            log,
        })
    }
}

/// Writes the loss log as `epoch,stage,loss` CSV.
pub fn write_loss_csv(mut w: impl std::io::Write, log: &[LossRecord]) -> Result<()> {
    writeln!(w, "epoch,stage,loss")?;
    for r in log {
        writeln!(w, "{},{},{}", r.epoch, r.stage, r.loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(stage: Stage) -> TrainConfig {
        let mut c = TrainConfig::new(stage, NetConfig::toy(3));
        c.size = 16;
        c.batch = 2;
        c.epochs = 3;
        c.lr = 2e-3;
        c.seed = 9;
        c
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = BTreeMap::from([(
            "w".to_string(),
            Tensor::full(crate::Dims::new(1, 1, 1, 3), 0.5),
        )]);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(crate::Dims::new(1, 1, 1, 3)))]);
        let mut s = AdamState::default();
        adam_step(&mut p, &g, &mut s, &|_| 0.1).unwrap();
        assert!(p["w"].data().iter().all(|&v| v == 0.5));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g0 in [3.0f32, -0.02] {
            let mut p = BTreeMap::from([(
                "w".to_string(),
                Tensor::full(crate::Dims::new(1, 1, 1, 1), 1.0),
            )]);
            let g = BTreeMap::from([(
                "w".to_string(),
                Tensor::full(crate::Dims::new(1, 1, 1, 1), g0),
            )]);
            adam_step(&mut p, &g, &mut AdamState::default(), &|_| 0.01).unwrap();
            let moved = p["w"].data()[0] - 1.0;
            assert!((moved + 0.01 * g0.signum()).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn adam_descends_a_parabola() {
        let dims = crate::Dims::new(1, 1, 1, 1);
        let mut p = BTreeMap::from([("x".to_string(), Tensor::full(dims, 1.0f32))]);
        let mut s = AdamState::default();
        let mut prev = 1.0f32;
        for _ in 0..10 {
            let x = p["x"].data()[0];
            let g = BTreeMap::from([("x".to_string(), Tensor::full(dims, 2.0 * x))]);
            adam_step(&mut p, &g, &mut s, &|_| 0.1).unwrap();
            let now = p["x"].data()[0].abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn adam_rejects_mismatched_gradients() {
        let mut p =
            BTreeMap::from([("w".to_string(), Tensor::zeros(crate::Dims::new(1, 1, 1, 2)))]);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(crate::Dims::new(1, 1, 1, 3)))]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), &|_| 0.1).is_err());
        let g = BTreeMap::from([("v".to_string(), Tensor::zeros(crate::Dims::new(1, 1, 1, 2)))]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), &|_| 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Stage::Base);
        assert!(c.validate().is_ok());
        c.batch = 0;
        assert!(c.validate().is_err());
        let mut c = tiny(Stage::Base);
        c.size = 12;
        assert!(c.validate().is_err());
        let mut c = tiny(Stage::Base);
        c.lr = 0.0;
        assert!(c.validate().is_err());
        assert_eq!("smapnet".parse::<Stage>().unwrap(), Stage::SMapNet);
        assert!("gan".parse::<Stage>().is_err());
    }

    #[test]
    fn segmenter_smoke_is_deterministic() {
        let data = gen_dataset(4, 4, 16, 3).unwrap();
        let mut c = tiny(Stage::Segmenter);
        c.epochs = 1;
        let a = train_segmenter(&c, &data, None).unwrap();
        assert!(a.log[0].loss.is_finite());
        let b = train_segmenter(&c, &data, None).unwrap();
        assert_eq!(a.weights.digest(), b.weights.digest());
        assert!(train_base(&c, &data, None).is_err());
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let data = gen_dataset(4, 2, 24, 3).unwrap();
        assert!(train_segmenter(&tiny(Stage::Segmenter), &data, None).is_err());
    }

    #[test]
    fn smapnet_requires_base_and_leaves_it_alone() {
        let data = gen_dataset(5, 2, 16, 3).unwrap();
        let seg_only = init_networks(&NetConfig::toy(3), &[NetName::Segmenter], 1).unwrap();
        assert!(matches!(
            train_smapnet(&tiny(Stage::SMapNet), &data, &seg_only, None),
            Err(Error::MissingWeight(_))
        ));
        let base = init_networks(
            &NetConfig::toy(3),
            &[NetName::CompNet, NetName::FineNet, NetName::Segmenter],
            1,
        )
        .unwrap();
        let before = base.digest();
        let out = train_smapnet(&tiny(Stage::SMapNet), &data, &base, None).unwrap();
        assert_eq!(base.digest(), before);
        assert!(out.weights.names().all(|n| n.starts_with("smapnet.")));
    }

    #[test]
    fn divergence_aborts() {
        let data = gen_dataset(6, 2, 16, 3).unwrap();
        let mut c = tiny(Stage::Segmenter);
        c.lr = f32::MAX;
        assert!(matches!(
            train_segmenter(&c, &data, None),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn loss_csv_layout() {
        let log = vec![LossRecord {
            epoch: 1,
            stage: Stage::Base,
            loss: 0.5,
        }];
        let mut out = Vec::new();
        write_loss_csv(&mut out, &log).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,stage,loss\n1,base,0.5\n"
        );
    }
}
