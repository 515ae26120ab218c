//! Pluggable pretrained backbones behind a descriptor interface, wrapped with
//! a seven-way fully connected softmax head and trainability scoping.
//!
//! Full backbone architectures are not reimplemented here: the four large
//! ImageNet backbones are resolved through an external pretrained-weight
//! provider, while the `tiny-test` backbone ships in-repo so every pipeline
//! path runs on CPU without network access.

mod tiny;

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::dataset::{LesionClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::preprocess::ImageBuffer;
use crate::rng::{derive_seed, seeded_rng};

pub(crate) use tiny::TinyConvNet;

/// Names accepted by [`BackboneDescriptor::lookup`].
pub const KNOWN_BACKBONES: [&str; 5] = [
    "pnasnet5large",
    "inceptionresnetv2",
    "senet154",
    "inceptionv4",
    "tiny-test",
];

/// Identity and geometry of a feature-extractor backbone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    pub name: String,
    /// Square input side in pixels.
    pub input_side: usize,
    /// Dimension of the pooled feature vector.
    pub feature_dim: usize,
    /// Locator for pretrained weights; absent for `tiny-test`.
    pub provider_uri: Option<String>,
}

impl BackboneDescriptor {
    /// Registry of the supported backbones with their published input sizes
    /// and feature dimensions.
    pub fn lookup(name: &str) -> Result<BackboneDescriptor> {
        let (input_side, feature_dim, provider_uri) = match name {
            "pnasnet5large" => (331, 4320, Some("provider://imagenet/pnasnet5large")),
            "inceptionresnetv2" => (299, 1536, Some("provider://imagenet/inceptionresnetv2")),
            "senet154" => (224, 2048, Some("provider://imagenet/senet154")),
            "inceptionv4" => (299, 1536, Some("provider://imagenet/inceptionv4")),
            "tiny-test" => (TinyConvNet::INPUT_SIDE, TinyConvNet::FEATURE_DIM, None),
            other => {
                return Err(Error::WeightLoad(format!(
                    "unknown backbone {other:?}; known backbones: {KNOWN_BACKBONES:?}"
                )))
            }
        };
        Ok(BackboneDescriptor {
            name: name.to_string(),
            input_side,
            feature_dim,
            provider_uri: provider_uri.map(str::to_string),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side < 8 {
            return Err(Error::Dimension(format!(
                "backbone input side {} must be at least 8",
                self.input_side
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Dimension(
                "backbone feature dimension must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Which parameter groups receive optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainabilityMode {
    /// Only the classifier head trains; every backbone parameter is frozen.
    HeadOnly,
    /// Every parameter trains.
    All,
}

impl fmt::Display for TrainabilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainabilityMode::HeadOnly => f.write_str("HEAD_ONLY"),
            TrainabilityMode::All => f.write_str("ALL"),
        }
    }
}

/// A point on the 7-class probability simplex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilityVector([f64; NUM_CLASSES]);

impl ProbabilityVector {
    /// Tolerance on the simplex sum.
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(values: [f64; NUM_CLASSES]) -> Result<ProbabilityVector> {
        for (i, v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Probability(format!(
                    "entry {i} is {v}, must lie in [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Probability(format!(
                "entries sum to {sum}, expected 1 within {}",
                Self::SUM_TOLERANCE
            )));
        }
        Ok(ProbabilityVector(values))
    }

    /// Sum tolerance for rows parsed from six-decimal submission files: each
    /// printed entry carries up to 5e-7 of rounding, so the row sum can sit
    /// several print units away from 1.
    pub const FILE_SUM_TOLERANCE: f64 = 1e-4;

    /// Accept a row parsed from a submission file without renormalizing, so
    /// a write-then-read round trip stays within print precision per entry.
    pub fn from_submission_row(values: [f64; NUM_CLASSES]) -> Result<ProbabilityVector> {
        for (i, v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Probability(format!(
                    "entry {i} is {v}, must lie in [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::FILE_SUM_TOLERANCE {
            return Err(Error::Probability(format!(
                "entries sum to {sum}, expected 1 within {}",
                Self::FILE_SUM_TOLERANCE
            )));
        }
        Ok(ProbabilityVector(values))
    }

    pub fn uniform() -> ProbabilityVector {
        ProbabilityVector([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn values(&self) -> [f64; NUM_CLASSES] {
        self.0
    }

    pub fn probability(&self, class: LesionClass) -> f64 {
        self.0[class.ordinal()]
    }

    /// Highest-probability class; exact ties break to the lowest ordinal and
    /// are flagged so callers can log them.
    pub fn argmax(&self) -> (LesionClass, bool) {
        let mut best = 0usize;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        let tied = (0..NUM_CLASSES).any(|i| i != best && self.0[i] == self.0[best]);
        (
            LesionClass::from_ordinal(best).expect("ordinal in range"),
            tied,
        )
    }
}

/// Numerically stable softmax: each logit is shifted by the row maximum
/// before exponentiation.
pub fn softmax(logits: [f64; NUM_CLASSES]) -> ProbabilityVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exp = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (e, &z) in exp.iter_mut().zip(&logits) {
        *e = (z - max).exp();
        sum += *e;
    }
    for e in &mut exp {
        *e /= sum;
    }
    ProbabilityVector(exp)
}

/// Read-only view of one named parameter tensor.
pub struct ParamView<'a> {
    pub name: &'static str,
    pub values: &'a [f64],
}

impl<'a> ParamView<'a> {
    pub(crate) fn new(name: &'static str, values: &'a [f64]) -> ParamView<'a> {
        ParamView { name, values }
    }
}

/// Mutable parameter plus its accumulated gradient, consumed by the optimizer.
pub(crate) struct ParamSlot<'a> {
    pub name: &'static str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

impl<'a> ParamSlot<'a> {
    pub(crate) fn new(
        name: &'static str,
        value: &'a mut [f64],
        grad: &'a [f64],
    ) -> ParamSlot<'a> {
        ParamSlot { name, value, grad }
    }
}

/// One named parameter tensor with its shape, used for snapshots and
/// checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Clone, Debug)]
struct Dense {
    w: Array2<f64>, // (out, in)
    b: Array1<f64>,
    gw: Array2<f64>,
    gb: Array1<f64>,
}

impl Dense {
    /// Uniform init in +-(1/sqrt(fan_in)), zero bias.
    fn seeded(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
            let u: f64 = rng.random();
            limit * (2.0 * u - 1.0)
        });
        Dense {
            w,
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.gw = &self.gw + &dy.t().dot(x);
        self.gb = &self.gb + &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.w)
    }

    fn zero_grads(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Classifier head: an optional hidden ReLU layer followed by the 7-way
/// output layer.
#[derive(Clone, Debug)]
struct Head {
    hidden: Option<Dense>,
    output: Dense,
}

struct HeadCache {
    input: Array2<f64>,
    hidden_pre: Option<Array2<f64>>,
}

impl Head {
    fn seeded(feature_dim: usize, hidden_dim: Option<usize>, seed: u64) -> Head {
        let mut rng = seeded_rng(seed);
        match hidden_dim {
            Some(dim) => {
                let hidden = Dense::seeded(dim, feature_dim, &mut rng);
                let output = Dense::seeded(NUM_CLASSES, dim, &mut rng);
                Head {
                    hidden: Some(hidden),
                    output,
                }
            }
            None => Head {
                hidden: None,
                output: Dense::seeded(NUM_CLASSES, feature_dim, &mut rng),
            },
        }
    }

    fn forward(&self, features: &Array2<f64>) -> (Array2<f64>, HeadCache) {
        match &self.hidden {
            Some(hidden) => {
                let pre = hidden.forward(features);
                let act = pre.mapv(|v| v.max(0.0));
                let logits = self.output.forward(&act);
                (
                    logits,
                    HeadCache {
                        input: features.clone(),
                        hidden_pre: Some(pre),
                    },
                )
            }
            None => (
                self.output.forward(features),
                HeadCache {
                    input: features.clone(),
                    hidden_pre: None,
                },
            ),
        }
    }

    fn backward(&mut self, cache: &HeadCache, dlogits: &Array2<f64>) -> Array2<f64> {
        match (&mut self.hidden, &cache.hidden_pre) {
            (Some(hidden), Some(pre)) => {
                let act = pre.mapv(|v| v.max(0.0));
                let mut dact = self.output.backward(&act, dlogits);
                dact.zip_mut_with(pre, |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                hidden.backward(&cache.input, &dact)
            }
            _ => self.output.backward(&cache.input, dlogits),
        }
    }

    fn zero_grads(&mut self) {
        if let Some(hidden) = &mut self.hidden {
            hidden.zero_grads();
        }
        self.output.zero_grads();
    }

    fn len(&self) -> usize {
        self.hidden.as_ref().map_or(0, Dense::len) + self.output.len()
    }
}

/// Runnable backbone networks. External-provider backbones have no in-repo
/// compute graph and cannot appear here.
#[derive(Clone, Debug)]
enum BackboneNet {
    Tiny(TinyConvNet),
}

impl BackboneNet {
    fn build(descriptor: &BackboneDescriptor, seed: u64) -> Result<BackboneNet> {
        match descriptor.name.as_str() {
            "tiny-test" => Ok(BackboneNet::Tiny(TinyConvNet::seeded(seed))),
            other => Err(Error::WeightLoad(format!(
                "backbone {other:?} must be served by an external pretrained-weight \
                 provider ({}); no runnable local implementation is registered",
                descriptor
                    .provider_uri
                    .as_deref()
                    .unwrap_or("no provider uri")
            ))),
        }
    }
}

/// Activations kept between a training forward and backward pass.
pub struct ForwardCache {
    backbone: tiny::TinyCache,
    head: HeadCache,
}

/// A backbone plus classifier head with trainability scoping.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    descriptor: BackboneDescriptor,
    hidden_dim: Option<usize>,
    backbone: BackboneNet,
    head: Head,
    trainability: TrainabilityMode,
}

/// Build a classifier: backbone from pretrained weights (seeded random for
/// `tiny-test`), a freshly initialized head, trainability `HEAD_ONLY`.
pub fn build_classifier(
    descriptor: &BackboneDescriptor,
    hidden_dim: Option<usize>,
    init_seed: u64,
) -> Result<ClassifierModel> {
    descriptor.validate()?;
    let backbone = BackboneNet::build(descriptor, derive_seed(init_seed, "backbone"))?;
    let head = Head::seeded(
        descriptor.feature_dim,
        hidden_dim,
        derive_seed(init_seed, "head"),
    );
    Ok(ClassifierModel {
        descriptor: descriptor.clone(),
        hidden_dim,
        backbone,
        head,
        trainability: TrainabilityMode::HeadOnly,
    })
}

impl ClassifierModel {
    pub fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.hidden_dim
    }

    pub fn trainability(&self) -> TrainabilityMode {
        self.trainability
    }

    /// Flip trainability flags; parameter values are untouched.
    pub fn set_trainable(&mut self, mode: TrainabilityMode) {
        self.trainability = mode;
    }

    fn check_batch(&self, batch: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = batch.dim();
        let side = self.descriptor.input_side;
        if c != 3 || h != side || w != side {
            return Err(Error::Shape(format!(
                "batch shape ({c}, {h}, {w}) does not match backbone input (3, {side}, {side})"
            )));
        }
        Ok(())
    }

    /// Inference: one probability vector per batch item.
    pub fn forward(&self, batch: &Array4<f64>) -> Result<Vec<ProbabilityVector>> {
        let (logits, _) = self.forward_logits(batch)?;
        Ok(logits_to_probabilities(&logits))
    }

    /// Training forward pass, returning logits plus cached activations.
    pub fn forward_logits(&self, batch: &Array4<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_batch(batch)?;
        let BackboneNet::Tiny(net) = &self.backbone;
        let (features, backbone_cache) = net.forward(batch);
        let (logits, head_cache) = self.head.forward(&features);
        Ok((
            logits,
            ForwardCache {
                backbone: backbone_cache,
                head: head_cache,
            },
        ))
    }

    /// Backpropagate logit gradients, accumulating parameter gradients. The
    /// backbone is skipped entirely in `HEAD_ONLY` mode.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Array2<f64>) {
        let dfeatures = self.head.backward(&cache.head, dlogits);
        if self.trainability == TrainabilityMode::All {
            let BackboneNet::Tiny(net) = &mut self.backbone;
            net.backward(&cache.backbone, &dfeatures);
        }
    }

    pub fn zero_grads(&mut self) {
        let BackboneNet::Tiny(net) = &mut self.backbone;
        net.zero_grads();
        self.head.zero_grads();
    }

    fn head_views(&self) -> Vec<ParamView<'_>> {
        let mut views = Vec::new();
        if let Some(hidden) = &self.head.hidden {
            views.push(ParamView::new("head.hidden.w", hidden.w.as_slice().unwrap()));
            views.push(ParamView::new("head.hidden.b", hidden.b.as_slice().unwrap()));
        }
        views.push(ParamView::new(
            "head.output.w",
            self.head.output.w.as_slice().unwrap(),
        ));
        views.push(ParamView::new(
            "head.output.b",
            self.head.output.b.as_slice().unwrap(),
        ));
        views
    }

    fn head_grad_views(&self) -> Vec<ParamView<'_>> {
        let mut views = Vec::new();
        if let Some(hidden) = &self.head.hidden {
            views.push(ParamView::new("head.hidden.w", hidden.gw.as_slice().unwrap()));
            views.push(ParamView::new("head.hidden.b", hidden.gb.as_slice().unwrap()));
        }
        views.push(ParamView::new(
            "head.output.w",
            self.head.output.gw.as_slice().unwrap(),
        ));
        views.push(ParamView::new(
            "head.output.b",
            self.head.output.gb.as_slice().unwrap(),
        ));
        views
    }

    /// All parameters, backbone first, with stable names.
    pub fn param_views(&self) -> Vec<ParamView<'_>> {
        let BackboneNet::Tiny(net) = &self.backbone;
        let mut views = net.param_views();
        views.extend(self.head_views());
        views
    }

    /// Accumulated gradients in the same order as [`Self::param_views`].
    pub fn grad_views(&self) -> Vec<ParamView<'_>> {
        let BackboneNet::Tiny(net) = &self.backbone;
        let mut views = net.grad_views();
        views.extend(self.head_grad_views());
        views
    }

    /// Parameters the optimizer may update under the current mode.
    pub(crate) fn trainable_slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut slots = Vec::new();
        if self.trainability == TrainabilityMode::All {
            let BackboneNet::Tiny(net) = &mut self.backbone;
            slots.extend(net.slots());
        }
        let Head { hidden, output } = &mut self.head;
        if let Some(hidden) = hidden {
            let Dense { w, b, gw, gb } = hidden;
            slots.push(ParamSlot::new(
                "head.hidden.w",
                w.as_slice_mut().unwrap(),
                gw.as_slice().unwrap(),
            ));
            slots.push(ParamSlot::new(
                "head.hidden.b",
                b.as_slice_mut().unwrap(),
                gb.as_slice().unwrap(),
            ));
        }
        let Dense { w, b, gw, gb } = output;
        slots.push(ParamSlot::new(
            "head.output.w",
            w.as_slice_mut().unwrap(),
            gw.as_slice().unwrap(),
        ));
        slots.push(ParamSlot::new(
            "head.output.b",
            b.as_slice_mut().unwrap(),
            gb.as_slice().unwrap(),
        ));
        slots
    }

    pub fn parameter_count(&self) -> usize {
        self.param_views().iter().map(|v| v.values.len()).sum()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.head.len()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        match self.trainability {
            TrainabilityMode::HeadOnly => self.head.len(),
            TrainabilityMode::All => self.parameter_count(),
        }
    }

    /// Copy of every parameter tensor with shapes, for checkpoints and
    /// snapshots.
    pub fn snapshot(&self) -> Vec<NamedArray> {
        let BackboneNet::Tiny(net) = &self.backbone;
        let mut shapes = net.shapes();
        if let Some(hidden) = &self.head.hidden {
            shapes.push(("head.hidden.w".into(), hidden.w.shape().to_vec()));
            shapes.push(("head.hidden.b".into(), hidden.b.shape().to_vec()));
        }
        shapes.push(("head.output.w".into(), self.head.output.w.shape().to_vec()));
        shapes.push(("head.output.b".into(), self.head.output.b.shape().to_vec()));

        self.param_views()
            .into_iter()
            .zip(shapes)
            .map(|(view, (name, shape))| {
                debug_assert_eq!(view.name, name);
                NamedArray {
                    name,
                    shape,
                    data: view.values.to_vec(),
                }
            })
            .collect()
    }

    /// Write one named parameter; the payload length must match.
    pub fn set_param(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let written = {
            let BackboneNet::Tiny(net) = &mut self.backbone;
            if name.starts_with("backbone.") {
                net.write_param(name, data)
            } else {
                let target: Option<&mut [f64]> = match name {
                    "head.hidden.w" => self
                        .head
                        .hidden
                        .as_mut()
                        .and_then(|d| d.w.as_slice_mut()),
                    "head.hidden.b" => self
                        .head
                        .hidden
                        .as_mut()
                        .and_then(|d| d.b.as_slice_mut()),
                    "head.output.w" => self.head.output.w.as_slice_mut(),
                    "head.output.b" => self.head.output.b.as_slice_mut(),
                    _ => None,
                };
                match target {
                    Some(slice) if slice.len() == data.len() => {
                        slice.copy_from_slice(data);
                        true
                    }
                    _ => false,
                }
            }
        };
        if written {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter {name:?} does not exist or has a different size than {} values",
                data.len()
            )))
        }
    }

    /// Restore every parameter from a snapshot.
    pub fn restore(&mut self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.param_views().len() {
            return Err(Error::Shape(format!(
                "snapshot has {} parameter tensors, model has {}",
                arrays.len(),
                self.param_views().len()
            )));
        }
        for array in arrays {
            self.set_param(&array.name, &array.data)?;
        }
        Ok(())
    }
}

fn logits_to_probabilities(logits: &Array2<f64>) -> Vec<ProbabilityVector> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut values = [0.0; NUM_CLASSES];
            for (v, &z) in values.iter_mut().zip(row.iter()) {
                *v = z;
            }
            softmax(values)
        })
        .collect()
}

/// Stack preprocessed images into an (N, 3, H, W) batch.
pub fn batch_from_images(images: &[ImageBuffer]) -> Result<Array4<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot batch zero images".to_string()))?;
    let (h, w) = (first.height(), first.width());
    for image in images {
        if image.height() != h || image.width() != w {
            return Err(Error::Shape(format!(
                "batch mixes image sizes {h}x{w} and {}x{}",
                image.height(),
                image.width()
            )));
        }
    }
    let mut batch = Array4::zeros((images.len(), 3, h, w));
    for (n, image) in images.iter().enumerate() {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    batch[(n, c, y, x)] = image.get(c, y, x);
                }
            }
        }
    }
    Ok(batch)
}
