//! The dual-head network.
//!
//! Pipeline, per image: backbone → nearest-neighbour upscaling → 3×3
//! convolution + rectifier → 1×1 convolution → global average pooling, after
//! which two independent affine + softmax heads predict the category and the
//! threat level from the same pooled feature vector.
//!
//! The built-in backbone is a small fixed stand-in: two blocks of
//! [3×3 convolution, rectifier, 2×2 average pooling] with 8 then 16 channels,
//! mapping a 32×32×3 image to an 8×8×16 feature map.

mod checkpoint;
pub mod layers;
pub mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NumericArray;
use crate::types::LabelSpace;
use layers::MapShape;

pub use checkpoint::Checkpoint;
pub use loss::{
    argmax, categorical_cross_entropy, head_losses, one_hot, softmax, total_loss, HeadLosses,
    LossWeights, CE_EPSILON,
};

/// Number of threat levels predicted by the threat head.
pub const THREAT_CLASSES: usize = 3;

const STANDIN_CHANNELS: [usize; 2] = [8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    SmallConvStandin,
    /// Slot for an ImageNet-pretrained EfficientNetB4 trunk. No weights ship
    /// with this crate, so networks of this kind cannot be built.
    PretrainedEfficientnetB4,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub output_channels: usize,
    /// Frozen backbones are not updated by the optimiser.
    pub frozen: bool,
}

impl BackboneSpec {
    pub fn standin() -> Self {
        Self {
            kind: BackboneKind::SmallConvStandin,
            output_channels: STANDIN_CHANNELS[1],
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Side of the square input image.
    pub input_size: usize,
    pub backbone: BackboneSpec,
    pub upscale_factor: usize,
    pub conv3x3_filters: usize,
    pub conv1x1_filters: usize,
    /// Categories predicted by the class head, in output order.
    pub label_space: LabelSpace,
}

impl NetworkConfig {
    pub fn new(label_space: LabelSpace) -> Self {
        Self {
            input_size: crate::IMAGE_SIZE,
            backbone: BackboneSpec::standin(),
            upscale_factor: 2,
            conv3x3_filters: 32,
            conv1x1_filters: 64,
            label_space,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.label_space.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.kind != BackboneKind::SmallConvStandin {
            return Err(Error::Unsupported(
                "the pretrained EfficientNetB4 backbone needs external ImageNet weights, \
                 which are not bundled; use the small_conv_standin backbone"
                    .into(),
            ));
        }
        if self.backbone.output_channels != STANDIN_CHANNELS[1] {
            return Err(Error::validation(format!(
                "the stand-in backbone emits {} channels, config says {}",
                STANDIN_CHANNELS[1], self.backbone.output_channels
            )));
        }
        if self.input_size < 4 || !self.input_size.is_multiple_of(4) {
            return Err(Error::validation(format!(
                "input size {} must be a positive multiple of 4",
                self.input_size
            )));
        }
        if self.upscale_factor == 0 || self.conv3x3_filters == 0 || self.conv1x1_filters == 0 {
            return Err(Error::validation(
                "upscale factor and filter counts must be positive",
            ));
        }
        Ok(())
    }

    fn backbone_out(&self) -> MapShape {
        let s = self.input_size / 4;
        MapShape::new(s, s, STANDIN_CHANNELS[1])
    }

    fn neck_shape(&self) -> MapShape {
        let b = self.backbone_out();
        MapShape::new(
            b.height * self.upscale_factor,
            b.width * self.upscale_factor,
            b.channels,
        )
    }

    /// Names and shapes of every parameter array, in a fixed order.
    pub fn parameter_layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [c1, c2] = STANDIN_CHANNELS;
        let (f1, f2, k) = (self.conv3x3_filters, self.conv1x1_filters, self.num_categories());
        vec![
            ("backbone.conv1.weight", vec![3, 3, 3, c1]),
            ("backbone.conv1.bias", vec![c1]),
            ("backbone.conv2.weight", vec![3, 3, c1, c2]),
            ("backbone.conv2.bias", vec![c2]),
            ("neck.conv3x3.weight", vec![3, 3, c2, f1]),
            ("neck.conv3x3.bias", vec![f1]),
            ("neck.conv1x1.weight", vec![1, 1, f1, f2]),
            ("neck.conv1x1.bias", vec![f2]),
            ("head_class.weight", vec![f2, k]),
            ("head_class.bias", vec![k]),
            ("head_threat.weight", vec![f2, THREAT_CLASSES]),
            ("head_threat.bias", vec![THREAT_CLASSES]),
        ]
    }
}

// Indices into the parameter layout.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const CONV3_W: usize = 4;
const CONV3_B: usize = 5;
const CONV4_W: usize = 6;
const CONV4_B: usize = 7;
const CLASS_W: usize = 8;
const CLASS_B: usize = 9;
const THREAT_W: usize = 10;
const THREAT_B: usize = 11;
const BACKBONE_PARAMS: usize = 4;

/// Named weight and bias arrays. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    entries: Vec<NamedArray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub array: NumericArray,
}

impl Parameters {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            entries: config
                .parameter_layout()
                .into_iter()
                .map(|(name, shape)| NamedArray {
                    name: name.to_string(),
                    array: NumericArray::zeros(shape),
                })
                .collect(),
        }
    }

    /// Same names and shapes as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| NamedArray {
                    name: e.name.clone(),
                    array: NumericArray::zeros(e.array.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[NamedArray] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedArray] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&NumericArray> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.array)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NumericArray> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.array)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.array.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.array.all_finite())
    }

    fn values(&self, i: usize) -> &[f64] {
        self.entries[i].array.values()
    }

    /// True when names and shapes agree entry by entry.
    pub fn same_layout(&self, other: &Parameters) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.array.shape() == b.array.shape())
    }

    fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.array.values_mut().iter_mut().zip(b.array.values()) {
                *x += y;
            }
        }
    }
}

/// Intermediate activations of one image, kept for the backward pass.
#[derive(Debug, Clone)]
struct SampleCache {
    input: Vec<f64>,
    conv1_pre: Vec<f64>,
    pool1: Vec<f64>,
    conv2_pre: Vec<f64>,
    upscaled: Vec<f64>,
    conv3_pre: Vec<f64>,
    conv3_act: Vec<f64>,
    pooled: Vec<f64>,
    class_probs: Vec<f64>,
    threat_probs: Vec<f64>,
}

/// Cached activations of a whole batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    /// Smallest |input| over all rectifier units. Finite-difference checks
    /// are only meaningful when this exceeds the probe step.
    pub fn min_abs_relu_input(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.conv1_pre.iter().chain(&s.conv2_pre).chain(&s.conv3_pre))
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Output of [`DualHeadNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `(batch, categories)`; rows sum to 1.
    pub class_probs: NumericArray,
    /// `(batch, 3)`; rows sum to 1.
    pub threat_probs: NumericArray,
    cache: Option<ForwardCache>,
}

impl ForwardResult {
    pub fn batch_size(&self) -> usize {
        self.class_probs.shape()[0]
    }

    pub fn cache(&self) -> Option<&ForwardCache> {
        self.cache.as_ref()
    }

    /// Drops the activation cache.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn class_predictions(&self) -> Vec<usize> {
        (0..self.batch_size())
            .map(|i| argmax(self.class_probs.row(i)))
            .collect()
    }

    pub fn threat_predictions(&self) -> Vec<usize> {
        (0..self.batch_size())
            .map(|i| argmax(self.threat_probs.row(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualHeadNetwork {
    pub config: NetworkConfig,
    pub params: Parameters,
}

impl DualHeadNetwork {
    /// Glorot-uniform weights (`±√(6 / (fan_in + fan_out))`, convolution fans
    /// include the kernel area) and zero biases, drawn from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Parameters::zeros(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in params.entries_mut() {
            let shape = entry.array.shape().to_vec();
            if shape.len() < 2 {
                continue;
            }
            let (fan_in, fan_out) = match shape.as_slice() {
                [k1, k2, cin, cout] => (k1 * k2 * cin, k1 * k2 * cout),
                [n_in, n_out] => (*n_in, *n_out),
                _ => unreachable!("layout only has 2-D and 4-D weights"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in entry.array.values_mut() {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self { config, params })
    }

    /// All weights and biases zero: both heads output uniform distributions.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let params = Parameters::zeros(&config);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: NetworkConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        if !Parameters::zeros(&config).same_layout(&params) {
            return Err(Error::validation(
                "parameter names or shapes do not match the network configuration",
            ));
        }
        if !params.all_finite() {
            return Err(Error::Numeric("parameters contain non-finite values".into()));
        }
        Ok(Self { config, params })
    }

    /// Whether the optimiser may update parameter `index` of the layout.
    pub fn is_trainable(&self, index: usize) -> bool {
        !(self.config.backbone.frozen && index < BACKBONE_PARAMS)
    }

    fn check_batch(&self, batch: &NumericArray) -> Result<usize> {
        let s = self.config.input_size;
        match batch.shape() {
            [b, h, w, 3] if *b >= 1 && *h == s && *w == s => {}
            other => {
                return Err(Error::validation(format!(
                    "expected a batch of shape (B>=1, {s}, {s}, 3), got {other:?}"
                )))
            }
        }
        if !batch.all_finite() {
            return Err(Error::Numeric("batch contains non-finite values".into()));
        }
        Ok(batch.shape()[0])
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    pub fn forward(&self, batch: &NumericArray) -> Result<ForwardResult> {
        let b = self.check_batch(batch)?;
        let per = batch.len() / b;
        let samples: Vec<SampleCache> = batch
            .values()
            .par_chunks(per)
            .map(|x| self.forward_sample(x))
            .collect();
        let k = self.config.num_categories();
        let class_probs = samples.iter().flat_map(|s| s.class_probs.iter().copied()).collect();
        let threat_probs = samples.iter().flat_map(|s| s.threat_probs.iter().copied()).collect();
        Ok(ForwardResult {
            class_probs: NumericArray::new(vec![b, k], class_probs)?,
            threat_probs: NumericArray::new(vec![b, THREAT_CLASSES], threat_probs)?,
            cache: Some(ForwardCache { samples }),
        })
    }

    /// Forward pass without an activation cache.
    pub fn predict(&self, batch: &NumericArray) -> Result<ForwardResult> {
        self.forward(batch).map(ForwardResult::without_cache)
    }

    fn forward_sample(&self, x: &[f64]) -> SampleCache {
        let cfg = &self.config;
        let p = &self.params;
        let [c1, c2] = STANDIN_CHANNELS;
        let s = cfg.input_size;

        let in_shape = MapShape::new(s, s, 3);
        let conv1_pre = layers::conv2d_same(x, in_shape, p.values(CONV1_W), p.values(CONV1_B), 3, c1);
        let s1 = MapShape::new(s, s, c1);
        let pool1 = layers::avg_pool2(&layers::relu(&conv1_pre), s1);

        let s2 = MapShape::new(s / 2, s / 2, c1);
        let conv2_pre = layers::conv2d_same(&pool1, s2, p.values(CONV2_W), p.values(CONV2_B), 3, c2);
        let pool2 = layers::avg_pool2(&layers::relu(&conv2_pre), MapShape::new(s / 2, s / 2, c2));

        let upscaled = layers::upsample_nearest(&pool2, cfg.backbone_out(), cfg.upscale_factor);
        let neck = cfg.neck_shape();
        let conv3_pre = layers::conv2d_same(
            &upscaled,
            neck,
            p.values(CONV3_W),
            p.values(CONV3_B),
            3,
            cfg.conv3x3_filters,
        );
        let conv3_act = layers::relu(&conv3_pre);
        let s3 = MapShape::new(neck.height, neck.width, cfg.conv3x3_filters);
        let conv4 = layers::conv2d_same(
            &conv3_act,
            s3,
            p.values(CONV4_W),
            p.values(CONV4_B),
            1,
            cfg.conv1x1_filters,
        );
        let s4 = MapShape::new(neck.height, neck.width, cfg.conv1x1_filters);
        let pooled = layers::global_avg_pool(&conv4, s4);

        let class_logits = layers::dense(&pooled, p.values(CLASS_W), p.values(CLASS_B));
        let threat_logits = layers::dense(&pooled, p.values(THREAT_W), p.values(THREAT_B));
        SampleCache {
            input: x.to_vec(),
            conv1_pre,
            pool1,
            conv2_pre,
            upscaled,
            conv3_pre,
            conv3_act,
            pooled,
            class_probs: loss::softmax_unchecked(&class_logits),
            threat_probs: loss::softmax_unchecked(&threat_logits),
        }
    }

    /// Gradient of [`total_loss`] with respect to every parameter, using the
    /// activations cached by [`Self::forward`].
    pub fn backward(
        &self,
        result: &ForwardResult,
        class_targets: &[usize],
        threat_targets: &[usize],
        weights: LossWeights,
    ) -> Result<Parameters> {
        let cache = result.cache.as_ref().ok_or_else(|| {
            Error::State("backward needs a forward result with cached activations".into())
        })?;
        loss::check_targets(result, class_targets, threat_targets)?;
        if class_targets.len() != cache.samples.len() {
            return Err(Error::State("cache and targets disagree on batch size".into()));
        }
        let scale = 1.0 / cache.samples.len() as f64;
        let per_sample: Vec<Parameters> = cache
            .samples
            .par_iter()
            .zip(class_targets.par_iter().zip(threat_targets))
            .map(|(s, (&ct, &tt))| self.backward_sample(s, ct, tt, weights, scale))
            .collect();
        let mut grads = self.params.zeros_like();
        for g in &per_sample {
            grads.add_assign(g);
        }
        Ok(grads)
    }

    fn backward_sample(
        &self,
        s: &SampleCache,
        class_target: usize,
        threat_target: usize,
        weights: LossWeights,
        scale: f64,
    ) -> Parameters {
        let cfg = &self.config;
        let p = &self.params;
        let [c1, c2] = STANDIN_CHANNELS;
        let size = cfg.input_size;
        let mut g = self.params.zeros_like();

        // softmax + cross-entropy: dL/dz = w · (p − onehot) / B
        let head_grad = |probs: &[f64], target: usize, w: f64| -> Vec<f64> {
            probs
                .iter()
                .enumerate()
                .map(|(i, &pv)| w * scale * (pv - if i == target { 1.0 } else { 0.0 }))
                .collect()
        };
        let d_class = head_grad(&s.class_probs, class_target, weights.class);
        let d_threat = head_grad(&s.threat_probs, threat_target, weights.threat);

        let (gw, gb) = split_pair(&mut g, CLASS_W);
        let d_pooled_c = layers::dense_backward(&s.pooled, p.values(CLASS_W), &d_class, gw, gb);
        let (gw, gb) = split_pair(&mut g, THREAT_W);
        let d_pooled_t = layers::dense_backward(&s.pooled, p.values(THREAT_W), &d_threat, gw, gb);
        let d_pooled: Vec<f64> = d_pooled_c.iter().zip(&d_pooled_t).map(|(a, b)| a + b).collect();

        let neck = cfg.neck_shape();
        let s4 = MapShape::new(neck.height, neck.width, cfg.conv1x1_filters);
        let d_conv4 = layers::global_avg_pool_backward(&d_pooled, s4);

        let s3 = MapShape::new(neck.height, neck.width, cfg.conv3x3_filters);
        let (gw, gb) = split_pair(&mut g, CONV4_W);
        let mut d_conv3 = layers::conv2d_same_backward(
            &s.conv3_act,
            s3,
            p.values(CONV4_W),
            1,
            cfg.conv1x1_filters,
            &d_conv4,
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        layers::relu_backward(&s.conv3_pre, &mut d_conv3);

        let (gw, gb) = split_pair(&mut g, CONV3_W);
        let d_up = layers::conv2d_same_backward(
            &s.upscaled,
            neck,
            p.values(CONV3_W),
            3,
            cfg.conv3x3_filters,
            &d_conv3,
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        let d_pool2 = layers::upsample_nearest_backward(&d_up, cfg.backbone_out(), cfg.upscale_factor);

        let s2_out = MapShape::new(size / 2, size / 2, c2);
        let mut d_conv2 = layers::avg_pool2_backward(&d_pool2, s2_out);
        layers::relu_backward(&s.conv2_pre, &mut d_conv2);
        let s2_in = MapShape::new(size / 2, size / 2, c1);
        let (gw, gb) = split_pair(&mut g, CONV2_W);
        let d_pool1 = layers::conv2d_same_backward(
            &s.pool1,
            s2_in,
            p.values(CONV2_W),
            3,
            c2,
            &d_conv2,
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");

        let s1 = MapShape::new(size, size, c1);
        let mut d_conv1 = layers::avg_pool2_backward(&d_pool1, s1);
        layers::relu_backward(&s.conv1_pre, &mut d_conv1);
        let (gw, gb) = split_pair(&mut g, CONV1_W);
        layers::conv2d_same_backward(
            &s.input,
            MapShape::new(size, size, 3),
            p.values(CONV1_W),
            3,
            c1,
            &d_conv1,
            gw,
            gb,
            false,
        );
        g
    }

    /// Weighted loss and its gradient for one batch.
    pub fn loss_and_gradients(
        &self,
        batch: &NumericArray,
        class_targets: &[usize],
        threat_targets: &[usize],
        weights: LossWeights,
    ) -> Result<(f64, Parameters)> {
        let result = self.forward(batch)?;
        let loss = total_loss(&result, class_targets, threat_targets, weights)?;
        let grads = self.backward(&result, class_targets, threat_targets, weights)?;
        Ok((loss, grads))
    }
}

/// Mutable weight and bias gradient slices for the layer whose weight sits at `w_index`.
fn split_pair(g: &mut Parameters, w_index: usize) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = g.entries.split_at_mut(w_index + 1);
    (
        head[w_index].array.values_mut(),
        tail[0].array.values_mut(),
    )
}
