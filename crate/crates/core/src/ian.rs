//! Illumination awareness network: a small classifier over a stacked
//! RGB+IR pair whose two softmax outputs say which detector to trust.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::ImagePair;
use crate::fusion::{Detect, WeightPredictor};
use crate::nn::{softmax, softmax_cross_entropy, Adam, Conv2d, Layer, LayerKind, Linear, MaxPool2d, Padding, Scalar, Sequential, Tensor};
use crate::{rng, BoundingBox, Detection, Error, Modality, Result};

/// Number of conv + pool stages; the input size must be divisible by `2^STAGES`.
pub const STAGES: usize = 5;
const WIDTHS: [usize; STAGES] = [16, 32, 64, 128, 256];
const HIDDEN: usize = 64;
const LEAK: f64 = 0.1;
pub const INPUT_CHANNELS: usize = 4;

/// Softmax-normalized trust in each detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlluminationWeights {
    pub w_rgb: f64,
    pub w_ir: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IanConfig {
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for IanConfig {
    fn default() -> Self {
        IanConfig {
            input_size: 128,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IanModel<T: Scalar = f32> {
    pub config: IanConfig,
    net: Sequential<T>,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

/// Builds the 5 × (conv3×3 → LeakyReLU → maxpool) + 2 × fully connected
/// network for `input_size`×`input_size` inputs.
pub fn build_ian<T: Scalar>(config: &IanConfig) -> Result<IanModel<T>> {
    let s = config.input_size;
    let div = 1 << STAGES;
    if s == 0 || s % div != 0 {
        return Err(Error::InvalidArgument(format!("IAN input size {s} is not divisible by {div}")));
    }
    let mut r = rng::seeded(config.seed);
    let mut net = Sequential::new();
    let mut c = INPUT_CHANNELS;
    for w in WIDTHS {
        net.push(Layer::Conv2d(Conv2d::new(c, w, 3, 1, 1, Padding::Zero, &mut r)));
        net.push(Layer::leaky_relu(LEAK));
        net.push(Layer::MaxPool2d(MaxPool2d::new()));
        c = w;
    }
    let side = s / div;
    net.push(Layer::Linear(Linear::new(c * side * side, HIDDEN, &mut r)));
    net.push(Layer::leaky_relu(LEAK));
    net.push(Layer::Linear(Linear::new(HIDDEN, 2, &mut r)));
    Ok(IanModel {
        config: config.clone(),
        net,
        history: Vec::new(),
    })
}

/// RGB ⊕ IR resized to `size`×`size`, scaled to `[0, 1]`, as a `1×4×s×s` tensor.
pub fn ian_input<T: Scalar>(pair: &ImagePair, size: usize) -> Result<Tensor<T>> {
    if pair.rgb.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            got: pair.rgb.channels(),
        });
    }
    if pair.ir.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            got: pair.ir.channels(),
        });
    }
    Ok(Tensor::concat_channels(&pair.rgb.to_tensor(size), &pair.ir.to_tensor(size)))
}

impl<T: Scalar> IanModel<T> {
    pub fn net(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    pub fn pool_count(&self) -> usize {
        self.count(LayerKind::MaxPool2d)
    }

    pub fn fully_connected_count(&self) -> usize {
        self.count(LayerKind::Linear)
    }

    pub fn conv_count(&self) -> usize {
        self.count(LayerKind::Conv2d)
    }

    fn count(&self, kind: LayerKind) -> usize {
        self.net.kinds().into_iter().filter(|k| *k == kind).count()
    }

    /// Spatial side length of the feature map entering the first fully
    /// connected layer.
    pub fn fc_input_side(&self) -> usize {
        self.config.input_size >> STAGES
    }

    /// Raw 2-way logits for a batch of stacked inputs.
    pub fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        self.net.infer(x)
    }

    pub fn weights_from_input(&self, x: &Tensor<T>) -> IlluminationWeights {
        let logits = self.net.infer(x);
        let p = softmax(logits.sample(0));
        IlluminationWeights {
            w_rgb: p[0].to_f64().unwrap(),
            w_ir: p[1].to_f64().unwrap(),
        }
    }

    /// One forward/backward pass: returns the mean cross-entropy and leaves
    /// parameter gradients accumulated in the network.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, labels: &[usize]) -> f64 {
        let logits = self.net.forward(x);
        let (loss, grad) = softmax_cross_entropy(&logits, labels);
        self.net.backward(&grad);
        loss
    }

    /// Continues training on precomputed inputs with a fresh optimizer.
    /// Labels are 0 for RGB and 1 for IR.
    pub fn fit(&mut self, inputs: &[Tensor<T>], labels: &[usize], epochs: usize) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("IAN training set"));
        }
        assert_eq!(inputs.len(), labels.len());
        let mut opt = Adam::new(self.config.learning_rate);
        let batch = self.config.batch_size.max(1);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let start = self.history.len();
        for epoch in start..start + epochs {
            order.shuffle(&mut rng::stream(self.config.seed, epoch as u64 + 1));
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let x = Tensor::stack(&chunk.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                self.net.zero_grad();
                let loss = self.loss_and_backward(&x, &y);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { stage: "ian", epoch });
                }
                opt.step(&mut self.net);
                total += loss * chunk.len() as f64;
            }
            let mean = total / inputs.len() as f64;
            log::info!("ian epoch {epoch}: loss {mean:.4}");
            self.history.push(mean);
        }
        Ok(())
    }
}

impl<T: Scalar> WeightPredictor for IanModel<T> {
    fn predict_weights(&self, pair: &ImagePair) -> Result<IlluminationWeights> {
        let x = ian_input(pair, self.config.input_size)?;
        Ok(self.weights_from_input(&x))
    }
}

/// Supervision target for one pair: which detector scored higher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLabel {
    pub id: String,
    pub label: Modality,
    pub rgb_score: f64,
    pub ir_score: f64,
}

/// Argmax with ties going to RGB.
pub fn label_from_scores(rgb_score: f64, ir_score: f64) -> Modality {
    if rgb_score >= ir_score {
        Modality::Rgb
    } else {
        Modality::Ir
    }
}

pub fn label_index(m: Modality) -> usize {
    match m {
        Modality::Rgb => 0,
        Modality::Ir => 1,
    }
}

/// Labels each pair with the detector whose output scores higher against the
/// pair's ground truth.
pub fn make_selection_labels(
    pairs: &[ImagePair],
    rgb_model: &impl Detect,
    ir_model: &impl Detect,
    score_fn: impl Fn(&[Detection], &[BoundingBox]) -> f64,
) -> Result<Vec<SelectionLabel>> {
    pairs
        .iter()
        .map(|p| {
            let rgb = rgb_model.detect(&p.rgb)?;
            let ir = ir_model.detect(&p.ir)?;
            Ok(selection_label(&p.id, &rgb, &ir, &p.labels, &score_fn))
        })
        .collect()
}

/// Label from detections that were already computed.
pub fn selection_label(
    id: &str,
    rgb: &[Detection],
    ir: &[Detection],
    gt: &[BoundingBox],
    score_fn: impl Fn(&[Detection], &[BoundingBox]) -> f64,
) -> SelectionLabel {
    let rgb_score = score_fn(rgb, gt);
    let ir_score = score_fn(ir, gt);
    SelectionLabel {
        id: id.into(),
        label: label_from_scores(rgb_score, ir_score),
        rgb_score,
        ir_score,
    }
}

/// Trains a fresh IAN on pairs and their selection labels (matched by id).
pub fn train_ian(pairs: &[ImagePair], labels: &[SelectionLabel], config: &IanConfig) -> Result<IanModel> {
    let mut model = build_ian(config)?;
    let (inputs, targets) = training_set(pairs, labels, config.input_size)?;
    model.fit(&inputs, &targets, config.epochs)?;
    Ok(model)
}

/// Stacked inputs and class indices for pairs that have a label.
pub fn training_set<T: Scalar>(pairs: &[ImagePair], labels: &[SelectionLabel], input_size: usize) -> Result<(Vec<Tensor<T>>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("IAN label set"));
    }
    let by_id: BTreeMap<&str, &ImagePair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut inputs = Vec::with_capacity(labels.len());
    let mut targets = Vec::with_capacity(labels.len());
    for l in labels {
        let p = by_id
            .get(l.id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("label for unknown pair `{}`", l.id)))?;
        inputs.push(ian_input(p, input_size)?);
        targets.push(label_index(l.label));
    }
    let ir = targets.iter().filter(|&&t| t == 1).count();
    if labels.len() < 2 || ir == 0 || ir == targets.len() {
        log::warn!(
            "degenerate IAN label set: {} labels, {} RGB, {} IR",
            targets.len(),
            targets.len() - ir,
            ir
        );
    }
    Ok((inputs, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Illumination, Source};
    use crate::eval::image_f1;
    use crate::{ClassId, Image};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn cfg(size: usize) -> IanConfig {
        IanConfig {
            input_size: size,
            epochs: 1,
            batch_size: 4,
            ..IanConfig::default()
        }
    }

    #[test]
    fn architecture_audit() {
        let m = build_ian::<f32>(&cfg(128)).unwrap();
        assert_eq!(m.pool_count(), 5);
        assert_eq!(m.conv_count(), 5);
        assert_eq!(m.fully_connected_count(), 2);
        assert_eq!(m.fc_input_side(), 4);
        match &m.net().layers()[15] {
            Layer::Linear(l) => assert_eq!(l.in_features(), 256 * 4 * 4),
            _ => panic!("first fully connected layer expected after five stages"),
        }
        assert!(build_ian::<f32>(&cfg(100)).is_err());
    }

    fn noise_pair(id: usize, seed: u64, size: usize) -> ImagePair {
        let mut r = rng::seeded(seed);
        let rgb: Vec<u8> = (0..size * size * 3).map(|_| r.random()).collect();
        let ir: Vec<u8> = (0..size * size).map(|_| r.random()).collect();
        ImagePair {
            id: format!("n{id}"),
            rgb: Image::from_raw(size, size, 3, rgb).unwrap(),
            ir: Image::from_raw(size, size, 1, ir).unwrap(),
            illumination: Illumination::Day,
            source: Source::Simulated,
            labels: vec![],
        }
    }

    #[test]
    fn weights_are_normalized_and_deterministic() {
        let m = build_ian::<f32>(&cfg(32)).unwrap();
        for i in 0..10 {
            let p = noise_pair(i, i as u64, 40);
            let w = m.predict_weights(&p).unwrap();
            assert!((w.w_rgb + w.w_ir - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&w.w_rgb));
            assert_eq!(w, m.predict_weights(&p.clone()).unwrap());
        }
    }

    #[test]
    fn rejects_wrong_channels() {
        let m = build_ian::<f32>(&cfg(32)).unwrap();
        let mut p = noise_pair(0, 0, 32);
        p.ir = Image::new(32, 32, 3);
        assert!(matches!(m.predict_weights(&p), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn smoke_training() {
        let pairs: Vec<ImagePair> = (0..8).map(|i| noise_pair(i, i as u64, 32)).collect();
        let labels: Vec<SelectionLabel> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| SelectionLabel {
                id: p.id.clone(),
                label: if i % 2 == 0 { Modality::Rgb } else { Modality::Ir },
                rgb_score: 0.0,
                ir_score: 0.0,
            })
            .collect();
        let m = train_ian(&pairs, &labels, &cfg(32)).unwrap();
        assert_eq!(m.history.len(), 1);
        assert!(m.history[0].is_finite());
        // degenerate label set still trains
        let same: Vec<SelectionLabel> = labels
            .iter()
            .map(|l| SelectionLabel {
                label: Modality::Rgb,
                ..l.clone()
            })
            .collect();
        assert!(train_ian(&pairs, &same, &cfg(32)).is_ok());
        assert!(train_ian(&pairs, &[], &cfg(32)).is_err());
    }

    struct Fixed(Vec<Detection>);

    impl Detect for Fixed {
        fn detect(&self, _: &Image) -> Result<Vec<Detection>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn labels_follow_scores() {
        let g = BoundingBox::new(ClassId::Person, 0.5, 0.5, 0.1, 0.2).unwrap();
        let mut p = noise_pair(0, 0, 8);
        p.labels = vec![g];
        let hit = Fixed(vec![Detection::new(g, 0.9, Modality::Ir)]);
        let miss = Fixed(vec![]);
        let l = make_selection_labels(core::slice::from_ref(&p), &miss, &hit, image_f1).unwrap();
        assert_eq!(l[0].label, Modality::Ir);
        assert_eq!((l[0].rgb_score, l[0].ir_score), (0.0, 1.0));
        let l = make_selection_labels(core::slice::from_ref(&p), &miss, &miss, image_f1).unwrap();
        assert_eq!(l[0].label, Modality::Rgb);
    }

    proptest::proptest! {
        #[test]
        fn label_is_scale_invariant(a in 0.0f64..1.0, b in 0.0f64..1.0, k in 0.01f64..100.0) {
            proptest::prop_assert_eq!(label_from_scores(a, b), label_from_scores(a * k, b * k));
        }
    }

    /// Central differences in f64 on a frozen random batch.
    #[test]
    fn gradient_check() {
        let mut m = build_ian::<f64>(&IanConfig {
            input_size: 32,
            seed: 5,
            ..IanConfig::default()
        })
        .unwrap();
        let mut r = rng::seeded(11);
        let x = Tensor::from_vec([2, 4, 32, 32], (0..2 * 4 * 32 * 32).map(|_| r.random::<f64>()).collect());
        let labels = [0usize, 1];
        m.net_mut().zero_grad();
        m.loss_and_backward(&x, &labels);
        let mut sites = Vec::new();
        m.net().visit_params(&mut |name, p| {
            sites.push((name, p.len()));
        });
        let mut checked = 0;
        let mut r = rng::seeded(12);
        while checked < 20 {
            let (name, len) = sites[r.random_range(0..sites.len())].clone();
            let idx = r.random_range(0..len);
            let mut analytic = 0.0;
            m.net().visit_params(&mut |n, p| {
                if n == name {
                    analytic = p.grad[idx];
                }
            });
            let loss_at = |m: &mut IanModel<f64>, delta: f64| {
                m.net_mut().visit_params_mut(&mut |n, p| {
                    if n == name {
                        p.value[idx] += delta;
                    }
                });
                let logits = m.logits(&x);
                let (l, _) = softmax_cross_entropy(&logits, &labels);
                m.net_mut().visit_params_mut(&mut |n, p| {
                    if n == name {
                        p.value[idx] -= delta;
                    }
                });
                l
            };
            let h = 1e-6;
            let numeric = (loss_at(&mut m, h) - loss_at(&mut m, -h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            assert!(rel <= 1e-3, "{name}[{idx}]: analytic {analytic} numeric {numeric}");
            checked += 1;
        }
    }
}
