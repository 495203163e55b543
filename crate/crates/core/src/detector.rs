//! Compact one-stage grid detector.
//!
//! A strided convolutional backbone produces an `S×S` grid; every cell and
//! anchor predicts `(tx, ty, tw, th, objectness, class logits)`. Decoding:
//! `cx = (col + σ(tx)) / S`, `w = anchor_w · exp(tw)`, confidence
//! `σ(obj) · max softmax(class)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::eval::iou;
use crate::fusion::Detect;
use crate::geometry::NUM_CLASSES;
use crate::nn::{clip_grad_norm, softmax, Adam, Conv2d, Layer, Padding, Scalar, Sequential, Tensor};
use crate::{math, rng, BoundingBox, ClassId, Detection, Error, Image, Modality, Result};

/// Values predicted per anchor: 4 box terms, objectness, class logits.
pub const VALUES_PER_ANCHOR: usize = 5 + NUM_CLASSES;
const LEAK: f64 = 0.1;
const OBJECTNESS_BIAS: f32 = -4.0;
const IGNORE_IOU: f64 = 0.5;
const MAX_LOG_SCALE: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub in_channels: usize,
    /// Square network input size in pixels.
    pub input_size: usize,
    /// Stride-2 stages in the backbone; the grid is `input_size / 2^downsamples`.
    pub downsamples: usize,
    /// Channel width of the first layer.
    pub width: usize,
    pub num_anchors: usize,
    /// Normalized `(w, h)` priors. Empty means "fit by k-means on the
    /// training boxes".
    pub anchors: Vec<[f64; 2]>,
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random horizontal flips during training.
    pub flip: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            in_channels: 3,
            input_size: 256,
            downsamples: 4,
            width: 16,
            num_anchors: 3,
            anchors: Vec::new(),
            confidence_threshold: 0.25,
            nms_iou_threshold: 0.45,
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-3,
            flip: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn for_modality(modality: Modality) -> Self {
        DetectorConfig {
            in_channels: modality.channels(),
            ..DetectorConfig::default()
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.downsamples
    }

    pub fn grid(&self) -> usize {
        self.input_size / self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "detector input channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.input_size == 0 || self.input_size % self.stride() != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not divisible by the backbone stride {}",
                self.input_size,
                self.stride()
            )));
        }
        for (name, t) in [("confidence", self.confidence_threshold), ("NMS IoU", self.nms_iou_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} threshold must lie in (0, 1), got {t}")));
            }
        }
        if self.num_anchors == 0 {
            return Err(Error::InvalidArgument("need at least one anchor".into()));
        }
        if !self.anchors.is_empty() && self.anchors.len() != self.num_anchors {
            return Err(Error::InvalidArgument(format!(
                "{} anchors configured but num_anchors is {}",
                self.anchors.len(),
                self.num_anchors
            )));
        }
        if self.anchors.iter().flatten().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::InvalidArgument("anchor sizes must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn shape_iou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = a[0].min(b[0]) * a[1].min(b[1]);
    inter / (a[0] * a[1] + b[0] * b[1] - inter)
}

/// k-means over box shapes with `1 - IoU` as the distance. Anchors come back
/// sorted by area.
pub fn fit_anchors(boxes: &[BoundingBox], k: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if boxes.is_empty() {
        return Err(Error::EmptyInput("anchor fitting needs at least one box"));
    }
    let shapes: Vec<[f64; 2]> = boxes.iter().map(|b| [b.w, b.h]).collect();
    let mut sorted = shapes.clone();
    sorted.sort_by(|a, b| (a[0] * a[1]).partial_cmp(&(b[0] * b[1])).unwrap_or(core::cmp::Ordering::Equal));
    // area quantiles as a deterministic start, jittered if shapes repeat
    let mut r = rng::seeded(seed);
    let mut centers: Vec<[f64; 2]> = (0..k).map(|i| sorted[((2 * i + 1) * sorted.len()) / (2 * k)]).collect();
    for _ in 0..100 {
        let mut sums = vec![[0.0f64; 3]; k];
        for s in &shapes {
            let best = (0..k)
                .max_by(|&a, &b| {
                    shape_iou(*s, centers[a])
                        .partial_cmp(&shape_iou(*s, centers[b]))
                        .unwrap_or(core::cmp::Ordering::Equal)
                })
                .unwrap();
            sums[best][0] += s[0];
            sums[best][1] += s[1];
            sums[best][2] += 1.0;
        }
        let mut next = centers.clone();
        for (c, s) in next.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            } else {
                *c = shapes[r.random_range(0..shapes.len())];
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    centers.sort_by(|a, b| (a[0] * a[1]).partial_cmp(&(b[0] * b[1])).unwrap_or(core::cmp::Ordering::Equal));
    Ok(centers)
}

/// Backbone: stem conv, `downsamples` stride-2 convs, two 3×3 convs and a
/// 1×1 prediction head.
pub fn build_network<T: Scalar>(config: &DetectorConfig, r: &mut rng::Rng) -> Sequential<T> {
    let mut net = Sequential::new();
    let cap = config.width * 8;
    let mut c = config.width;
    net.push(Layer::Conv2d(Conv2d::new(config.in_channels, c, 3, 1, 1, Padding::Zero, r)));
    net.push(Layer::leaky_relu(LEAK));
    for _ in 0..config.downsamples {
        let next = (c * 2).min(cap);
        net.push(Layer::Conv2d(Conv2d::new(c, next, 3, 2, 1, Padding::Zero, r)));
        net.push(Layer::leaky_relu(LEAK));
        c = next;
    }
    for _ in 0..2 {
        net.push(Layer::Conv2d(Conv2d::new(c, c, 3, 1, 1, Padding::Zero, r)));
        net.push(Layer::leaky_relu(LEAK));
    }
    let mut head = Conv2d::new(c, config.num_anchors * VALUES_PER_ANCHOR, 1, 1, 0, Padding::Zero, r);
    for v in head.weight.value.iter_mut() {
        *v = *v * T::lit(0.1);
    }
    for a in 0..config.num_anchors {
        head.bias.value[a * VALUES_PER_ANCHOR + 4] = T::lit(OBJECTNESS_BIAS as f64);
    }
    net.push(Layer::Conv2d(head));
    net
}

#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub modality: Modality,
    net: Sequential<f32>,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl DetectorModel {
    /// Fresh model. Anchors must already be set.
    pub fn new(config: &DetectorConfig, modality: Modality) -> Result<Self> {
        config.validate()?;
        if config.in_channels != modality.channels() {
            return Err(Error::ChannelMismatch {
                expected: modality.channels(),
                got: config.in_channels,
            });
        }
        if config.anchors.len() != config.num_anchors {
            return Err(Error::InvalidArgument("anchors must be set before building a detector".into()));
        }
        let mut r = rng::seeded(config.seed);
        Ok(DetectorModel {
            net: build_network(config, &mut r),
            config: config.clone(),
            modality,
            history: Vec::new(),
        })
    }

    /// Wraps an arbitrary network whose output is
    /// `N × (anchors·VALUES_PER_ANCHOR) × grid × grid`.
    pub fn from_parts(config: DetectorConfig, modality: Modality, net: Sequential<f32>) -> Result<Self> {
        config.validate()?;
        Ok(DetectorModel {
            config,
            modality,
            net,
            history: Vec::new(),
        })
    }

    pub fn net(&self) -> &Sequential<f32> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<f32> {
        &mut self.net
    }

    /// Zeroes the prediction head, so every raw output is 0.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Conv2d(head)) = self.net.layers_mut().last_mut() {
            head.weight.value.iter_mut().for_each(|v| *v = 0.0);
            head.bias.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn input(&self, image: &Image) -> Result<Tensor<f32>> {
        if image.channels() != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: image.channels(),
            });
        }
        Ok(image.to_tensor(self.config.input_size))
    }

    /// Raw head output for one image.
    pub fn raw_output(&self, image: &Image) -> Result<Tensor<f32>> {
        Ok(self.net.infer(&self.input(image)?))
    }

    /// Decoded, thresholded and NMS-filtered detections with explicit
    /// thresholds.
    pub fn detect_with(&self, image: &Image, confidence: f64, nms_iou: f64) -> Result<Vec<Detection>> {
        let out = self.raw_output(image)?;
        let decoded = decode(&out, 0, &self.config.anchors, confidence, self.modality);
        Ok(non_max_suppression(&decoded, nms_iou))
    }

    /// Runs training for `epochs` more epochs with a fresh optimizer.
    pub fn fit(&mut self, images: &[Image], labels: &[Vec<BoundingBox>], epochs: usize) -> Result<()> {
        if images.is_empty() {
            return Err(Error::EmptyInput("detector training set"));
        }
        assert_eq!(images.len(), labels.len());
        let inputs = images.iter().map(|i| self.input(i)).collect::<Result<Vec<_>>>()?;
        let mut opt = Adam::new(self.config.learning_rate);
        let batch = self.config.batch_size.max(1);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let start = self.history.len();
        for epoch in start..start + epochs {
            let mut r = rng::stream(self.config.seed, epoch as u64 + 1);
            order.shuffle(&mut r);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let mut xs = Vec::with_capacity(chunk.len());
                let mut ys = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    if self.config.flip && r.random_bool(0.5) {
                        xs.push(flip_tensor(&inputs[i]));
                        ys.push(labels[i].iter().map(BoundingBox::flipped_horizontally).collect());
                    } else {
                        xs.push(inputs[i].clone());
                        ys.push(labels[i].clone());
                    }
                }
                let x = Tensor::stack(&xs);
                let out = self.net.forward(&x);
                let (loss, grad) = detection_loss(&out, &ys, &self.config.anchors);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { stage: "detector", epoch });
                }
                self.net.backward(&grad);
                clip_grad_norm(&mut self.net, 10.0);
                opt.step(&mut self.net);
                total += loss * chunk.len() as f64;
            }
            let mean = total / inputs.len() as f64;
            log::info!("{} detector epoch {epoch}: loss {mean:.4}", self.modality);
            self.history.push(mean);
        }
        Ok(())
    }
}

impl Detect for DetectorModel {
    fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        self.detect_with(image, self.config.confidence_threshold, self.config.nms_iou_threshold)
    }
}

/// Mirrors a single-sample tensor along its width.
fn flip_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = t.shape();
    let mut out = t.clone();
    let (src, dst) = (t.data(), out.data_mut());
    for p in 0..n * c * h {
        for x in 0..w {
            dst[p * w + x] = src[p * w + (w - 1 - x)];
        }
    }
    out
}

#[inline]
fn channel_index(anchor: usize, value: usize, grid: usize, row: usize, col: usize) -> usize {
    ((anchor * VALUES_PER_ANCHOR + value) * grid + row) * grid + col
}

fn decode_box(s: &[f32], a: usize, g: usize, row: usize, col: usize, anchor: [f64; 2]) -> (f64, f64, f64, f64) {
    let v = |k: usize| s[channel_index(a, k, g, row, col)] as f64;
    let cx = (col as f64 + math::sigmoid(v(0))) / g as f64;
    let cy = (row as f64 + math::sigmoid(v(1))) / g as f64;
    let w = anchor[0] * math::exp(v(2).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE));
    let h = anchor[1] * math::exp(v(3).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE));
    (cx, cy, w, h)
}

/// Decodes sample `n` of a raw head output into detections with confidence
/// at or above `threshold`, sorted by descending confidence.
pub fn decode(out: &Tensor<f32>, n: usize, anchors: &[[f64; 2]], threshold: f64, modality: Modality) -> Vec<Detection> {
    let g = out.height();
    assert_eq!(out.width(), g, "detector grid must be square");
    assert_eq!(
        out.channels(),
        anchors.len() * VALUES_PER_ANCHOR,
        "head width does not match anchors"
    );
    let s = out.sample(n);
    let mut dets = Vec::new();
    for (a, &anchor) in anchors.iter().enumerate() {
        for row in 0..g {
            for col in 0..g {
                let obj = math::sigmoid(s[channel_index(a, 4, g, row, col)] as f64);
                let logits: Vec<f64> = (0..NUM_CLASSES).map(|k| s[channel_index(a, 5 + k, g, row, col)] as f64).collect();
                let p = softmax(&logits);
                let (class, pmax) = p
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
                let conf = obj * pmax;
                if conf < threshold {
                    continue;
                }
                let (cx, cy, w, h) = decode_box(s, a, g, row, col, anchor);
                let class = ClassId::from_index(class).expect("class index within vocabulary");
                if let Some(b) = BoundingBox::from_corners(class, cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0) {
                    dets.push(Detection::new(b, conf.clamp(0.0, 1.0), modality));
                }
            }
        }
    }
    dets.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(core::cmp::Ordering::Equal));
    dets
}

/// Greedy per-class suppression: visiting by descending confidence (stable),
/// a detection survives unless it overlaps an already kept box of its class
/// with IoU above `iou_threshold`.
pub fn non_max_suppression(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept
            .iter()
            .any(|k| k.bbox.class == d.bbox.class && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

fn best_anchor(b: &BoundingBox, anchors: &[[f64; 2]]) -> usize {
    (0..anchors.len())
        .max_by(|&x, &y| {
            shape_iou([b.w, b.h], anchors[x])
                .partial_cmp(&shape_iou([b.w, b.h], anchors[y]))
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .unwrap_or(0)
}

fn bce(logit: f64, target: f64) -> (f64, f64) {
    crate::nn::bce_with_logits(logit, target)
}

/// Sum over the batch of the per-image detection loss, divided by the batch
/// size. Returns the loss and its gradient with respect to `out`.
///
/// Per responsible (cell, anchor): BCE on the sigmoid offsets, squared error
/// on the log-scales, BCE objectness toward 1 and softmax cross-entropy on
/// the class. Every other (cell, anchor) gets BCE objectness toward 0 unless
/// its predicted box already overlaps a ground-truth box above IoU 0.5.
pub fn detection_loss<T: Scalar>(out: &Tensor<T>, targets: &[Vec<BoundingBox>], anchors: &[[f64; 2]]) -> (f64, Tensor<T>) {
    let n = out.batch();
    let g = out.height();
    assert_eq!(targets.len(), n);
    let mut grad = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, gt) in targets.iter().enumerate() {
        let s: Vec<f64> = out.sample(i).iter().map(|v| v.to_f64().unwrap()).collect();
        let mut gs = vec![0.0f64; s.len()];
        let mut responsible = vec![None; anchors.len() * g * g];
        for b in gt {
            let col = ((b.cx * g as f64) as usize).min(g - 1);
            let row = ((b.cy * g as f64) as usize).min(g - 1);
            let a = best_anchor(b, anchors);
            responsible[(a * g + row) * g + col] = Some(*b);
        }
        for (a, &anchor) in anchors.iter().enumerate() {
            for row in 0..g {
                for col in 0..g {
                    let idx = |k: usize| channel_index(a, k, g, row, col);
                    match responsible[(a * g + row) * g + col] {
                        Some(b) => {
                            let scale = 2.0 - b.w * b.h;
                            let tx = b.cx * g as f64 - col as f64;
                            let ty = b.cy * g as f64 - row as f64;
                            for (k, t) in [(0, tx), (1, ty)] {
                                let (l, d) = bce(s[idx(k)], t);
                                loss += scale * l;
                                gs[idx(k)] += scale * d;
                            }
                            for (k, t) in [(2, math::ln(b.w / anchor[0])), (3, math::ln(b.h / anchor[1]))] {
                                let e = s[idx(k)] - t;
                                loss += scale * 0.5 * e * e;
                                gs[idx(k)] += scale * e;
                            }
                            let (l, d) = bce(s[idx(4)], 1.0);
                            loss += l;
                            gs[idx(4)] += d;
                            let logits: Vec<f64> = (0..NUM_CLASSES).map(|k| s[idx(5 + k)]).collect();
                            let p = softmax(&logits);
                            let c = b.class.index();
                            loss -= math::ln(p[c].max(1e-12));
                            for k in 0..NUM_CLASSES {
                                gs[idx(5 + k)] += p[k] - if k == c { 1.0 } else { 0.0 };
                            }
                        }
                        None => {
                            if !gt.is_empty() {
                                let (cx, cy, w, h) = {
                                    let v = |k: usize| s[idx(k)];
                                    (
                                        (col as f64 + math::sigmoid(v(0))) / g as f64,
                                        (row as f64 + math::sigmoid(v(1))) / g as f64,
                                        anchor[0] * math::exp(v(2).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE)),
                                        anchor[1] * math::exp(v(3).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE)),
                                    )
                                };
                                let pred = BoundingBox {
                                    class: ClassId::Car,
                                    cx,
                                    cy,
                                    w,
                                    h,
                                };
                                if gt.iter().any(|t| iou(&pred, t) > IGNORE_IOU) {
                                    continue;
                                }
                            }
                            let (l, d) = bce(s[idx(4)], 0.0);
                            loss += l;
                            gs[idx(4)] += d;
                        }
                    }
                }
            }
        }
        for (dst, v) in grad.sample_mut(i).iter_mut().zip(&gs) {
            *dst = T::lit(v * inv_n);
        }
    }
    (loss * inv_n, grad)
}

/// Trains a detector on the given modality of each pair. Anchors are fitted
/// to the training boxes when the config does not provide them.
pub fn train_detector(pairs: &[crate::dataset::ImagePair], modality: Modality, config: &DetectorConfig) -> Result<DetectorModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("detector training set"));
    }
    let mut config = config.clone();
    config.in_channels = modality.channels();
    config.validate()?;
    let labels: Vec<Vec<BoundingBox>> = pairs.iter().map(|p| p.labels.clone()).collect();
    if config.anchors.is_empty() {
        let all: Vec<BoundingBox> = labels.iter().flatten().copied().collect();
        config.anchors = if all.is_empty() {
            (1..=config.num_anchors).map(|k| [0.1 * k as f64, 0.1 * k as f64]).collect()
        } else {
            fit_anchors(&all, config.num_anchors, config.seed)?
        };
    }
    let mut model = DetectorModel::new(&config, modality)?;
    let images: Vec<Image> = pairs.iter().map(|p| p.image(modality).clone()).collect();
    model.fit(&images, &labels, config.epochs)?;
    Ok(model)
}

/// Feeds a channel-replicated IR frame to an RGB detector; detections are
/// tagged as IR.
pub fn detect_ir_as_grayscale(rgb_model: &DetectorModel, ir: &Image) -> Result<Vec<Detection>> {
    if rgb_model.config.in_channels != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            got: rgb_model.config.in_channels,
        });
    }
    let dets = rgb_model.detect(&ir.replicate3()?)?;
    Ok(dets
        .into_iter()
        .map(|d| Detection {
            modality: Modality::Ir,
            ..d
        })
        .collect())
}

/// [`detect_ir_as_grayscale`] as a [`Detect`] implementation.
pub struct GrayscaleIr<'a>(pub &'a DetectorModel);

impl Detect for GrayscaleIr<'_> {
    fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        detect_ir_as_grayscale(self.0, image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Illumination, ImagePair, Source};
    use crate::nn::Param;
    use proptest::prelude::*;

    fn small_config(modality: Modality) -> DetectorConfig {
        DetectorConfig {
            in_channels: modality.channels(),
            input_size: 32,
            downsamples: 2,
            width: 4,
            anchors: vec![[0.1, 0.1], [0.2, 0.3], [0.4, 0.3]],
            epochs: 1,
            batch_size: 2,
            ..DetectorConfig::default()
        }
    }

    fn car(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(ClassId::Car, cx, cy, w, h).unwrap()
    }

    fn det(b: BoundingBox, c: f64) -> Detection {
        Detection::new(b, c, Modality::Rgb)
    }

    #[test]
    fn default_grid() {
        let c = DetectorConfig::default();
        assert_eq!((c.input_size, c.stride(), c.grid()), (256, 16, 16));
        c.validate().unwrap();
    }

    #[test]
    fn channel_contract() {
        let ir = DetectorModel::new(&small_config(Modality::Ir), Modality::Ir).unwrap();
        assert!(ir.detect(&Image::new(40, 40, 1)).is_ok());
        assert!(matches!(
            ir.detect(&Image::new(40, 40, 3)),
            Err(Error::ChannelMismatch { expected: 1, got: 3 })
        ));
        let rgb = DetectorModel::new(&small_config(Modality::Rgb), Modality::Rgb).unwrap();
        assert!(rgb.detect(&Image::new(40, 40, 1)).is_err());
        assert!(detect_ir_as_grayscale(&ir, &Image::new(40, 40, 1)).is_err());
    }

    #[test]
    fn zero_head_on_blank_image_detects_nothing() {
        let mut m = DetectorModel::new(&small_config(Modality::Rgb), Modality::Rgb).unwrap();
        m.zero_head();
        assert!(m.detect_with(&Image::new(32, 32, 3), 0.5001, 0.45).unwrap().is_empty());
    }

    #[test]
    fn nms_examples() {
        let a = det(car(0.5, 0.5, 0.2, 0.2), 0.9);
        assert_eq!(non_max_suppression(&[a], 0.5), vec![a]);
        let b = det(car(0.5, 0.5, 0.2, 0.2), 0.8);
        assert_eq!(non_max_suppression(&[b, a], 0.5), vec![a]);
        // 0.2 x 0.2 boxes shifted by 0.12: intersection .08*.2, union .08 - .016
        let c = det(car(0.62, 0.5, 0.2, 0.2), 0.8);
        assert!((iou(&a.bbox, &c.bbox) - 0.016 / 0.064).abs() < 1e-12);
        assert_eq!(non_max_suppression(&[a, c], 0.5).len(), 2);
        // other classes never suppress each other
        let p = det(
            BoundingBox {
                class: ClassId::Person,
                ..a.bbox
            },
            0.7,
        );
        assert_eq!(non_max_suppression(&[a, p], 0.5).len(), 2);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec(
            (0usize..2, 0.2f64..0.8, 0.2f64..0.8, 0.05f64..0.3, 0.05f64..0.3, 0.0f64..1.0),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(c, cx, cy, w, h, conf)| det(BoundingBox::new(ClassId::from_index(c).unwrap(), cx, cy, w, h).unwrap(), conf))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn nms_is_idempotent_and_shrinking(dets in arb_dets(), thr in 0.1f64..0.9) {
            let once = non_max_suppression(&dets, thr);
            prop_assert_eq!(non_max_suppression(&once, thr), once.clone());
            prop_assert!(once.len() <= dets.len());
            for d in &once {
                prop_assert!(dets.contains(d));
            }
        }
    }

    #[test]
    fn anchors_recover_two_clusters() {
        let mut boxes = Vec::new();
        for i in 0..20 {
            let j = i as f64 * 0.001;
            boxes.push(car(0.5, 0.5, 0.05 + j, 0.1 + j));
            boxes.push(car(0.5, 0.5, 0.3 + j, 0.2 + j));
        }
        let a = fit_anchors(&boxes, 2, 0).unwrap();
        assert!((a[0][0] - 0.0595).abs() < 1e-9 && (a[1][1] - 0.2095).abs() < 1e-9);
    }

    /// `loss = L(out)`; analytic gradient vs central differences in f64.
    #[test]
    fn loss_gradient_matches_differences() {
        let g = 4;
        let anchors = [[0.2, 0.2], [0.5, 0.4]];
        let mut r = rng::seeded(3);
        let len = 2 * anchors.len() * VALUES_PER_ANCHOR * g * g;
        let out = Tensor::<f64>::from_vec(
            [2, anchors.len() * VALUES_PER_ANCHOR, g, g],
            (0..len).map(|_| r.random_range(-2.0..2.0)).collect(),
        );
        let targets = vec![
            vec![
                car(0.3, 0.4, 0.2, 0.25),
                BoundingBox::new(ClassId::Person, 0.7, 0.6, 0.1, 0.3).unwrap(),
            ],
            vec![],
        ];
        let (_, grad) = detection_loss(&out, &targets, &anchors);
        let h = 1e-6;
        for i in (0..len).step_by(7) {
            let mut plus = out.clone();
            plus.data_mut()[i] += h;
            let mut minus = out.clone();
            minus.data_mut()[i] -= h;
            let numeric = (detection_loss(&plus, &targets, &anchors).0 - detection_loss(&minus, &targets, &anchors).0) / (2.0 * h);
            let analytic = grad.data()[i];
            assert!(
                (numeric - analytic).abs() < 1e-5 * (1.0 + numeric.abs()),
                "index {i}: {analytic} vs {numeric}"
            );
        }
    }

    /// A single stride-8 convolution whose objectness fires on bright cells.
    fn delta_model() -> DetectorModel {
        let config = DetectorConfig {
            in_channels: 1,
            input_size: 64,
            downsamples: 3,
            num_anchors: 1,
            anchors: vec![[0.125, 0.125]],
            ..DetectorConfig::default()
        };
        let mut conv = Conv2d::new(1, VALUES_PER_ANCHOR, 8, 8, 0, Padding::Zero, &mut rng::seeded(0));
        let mut w = vec![0.0f32; VALUES_PER_ANCHOR * 64];
        for v in &mut w[4 * 64..5 * 64] {
            *v = 1.0;
        }
        conv.weight = Param::new(&[VALUES_PER_ANCHOR, 1, 8, 8], w);
        let mut b = vec![0.0f32; VALUES_PER_ANCHOR];
        b[4] = -20.0;
        b[5] = 5.0;
        conv.bias = Param::new(&[VALUES_PER_ANCHOR], b);
        let net = Sequential::new().with(Layer::Conv2d(conv));
        DetectorModel::from_parts(config, Modality::Ir, net).unwrap()
    }

    fn block_image(x0: usize, y0: usize) -> Image {
        let mut img = Image::new(64, 64, 1);
        for y in y0..y0 + 8 {
            for x in x0..x0 + 8 {
                img.set(x, y, 0, 255);
            }
        }
        img
    }

    #[test]
    fn one_cell_shift_moves_centers_by_one_cell() {
        let m = delta_model();
        let a = m.detect(&block_image(16, 24)).unwrap();
        let b = m.detect(&block_image(24, 24)).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!((a[0].bbox.cx - 2.5 / 8.0).abs() < 1e-12);
        assert!((b[0].bbox.cx - a[0].bbox.cx - 1.0 / 8.0).abs() < 1e-12);
        assert_eq!(a[0].bbox.cy, b[0].bbox.cy);
        let c = m.detect(&block_image(24, 32)).unwrap();
        assert!((c[0].bbox.cy - a[0].bbox.cy - 1.0 / 8.0).abs() < 1e-12);
    }

    fn pair(id: usize, labels: Vec<BoundingBox>) -> ImagePair {
        let mut r = rng::seeded(id as u64);
        ImagePair {
            id: format!("d{id}"),
            rgb: Image::from_raw(40, 40, 3, (0..40 * 40 * 3).map(|_| r.random()).collect()).unwrap(),
            ir: Image::from_raw(40, 40, 1, (0..40 * 40).map(|_| r.random()).collect()).unwrap(),
            illumination: Illumination::Day,
            source: Source::Simulated,
            labels,
        }
    }

    #[test]
    fn smoke_training_and_output_contract() {
        let pairs: Vec<ImagePair> = (0..4).map(|i| pair(i, vec![car(0.5, 0.5, 0.3, 0.2)])).collect();
        let cfg = DetectorConfig {
            anchors: vec![],
            ..small_config(Modality::Ir)
        };
        let m = train_detector(&pairs, Modality::Ir, &cfg).unwrap();
        assert_eq!(m.history.len(), 1);
        assert!(m.history[0].is_finite());
        assert_eq!(m.config.anchors.len(), 3);
        let dets = m.detect_with(&pairs[0].ir, 0.01, 0.45).unwrap();
        for w in dets.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
        for d in &dets {
            assert!(d.bbox.is_valid() && (0.0..=1.0).contains(&d.confidence));
            assert_eq!(d.modality, Modality::Ir);
        }
    }

    #[test]
    fn grayscale_baseline_is_replication() {
        let pairs: Vec<ImagePair> = (0..2).map(|i| pair(i, vec![car(0.4, 0.5, 0.3, 0.2)])).collect();
        let m = train_detector(&pairs, Modality::Rgb, &small_config(Modality::Rgb)).unwrap();
        for p in &pairs {
            let a = detect_ir_as_grayscale(&m, &p.ir).unwrap();
            let b = m.detect(&p.ir.replicate3().unwrap()).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!((x.bbox, x.confidence), (y.bbox, y.confidence));
                assert_eq!(x.modality, Modality::Ir);
            }
        }
    }
}
