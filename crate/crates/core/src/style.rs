//! Unpaired RGB→IR translation with a cycle-consistent generator pair, label
//! transfer and heat-signature enhancement inside object masks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Illumination, ImagePair, Source};
use crate::nn::{l1_loss, mse_to_constant, Adam, Conv2d, InstanceNorm, Layer, Padding, Residual, Sequential, Tensor, Upsample2d};
use crate::thermal::{ThermalPart, ThermalProfile};
use crate::{math, rng, BoundingBox, ClassId, Error, Image, Result};

/// Pixel labels inside an [`ObjectMask`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MaskPart {
    Outside = 0,
    Body = 1,
    /// Engine hood of a car.
    Hot = 2,
}

/// Silhouette of one object, cropped to a pixel window that covers its box.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    pub class: ClassId,
    pub bbox: BoundingBox,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major [`MaskPart`] values.
    pub values: Vec<u8>,
}

impl ObjectMask {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    /// Elliptical mask inscribed in `bbox`, for frames without silhouettes.
    pub fn ellipse(bbox: &BoundingBox, image_width: usize, image_height: usize) -> ObjectMask {
        let (px0, py0, px1, py1) = bbox.to_pixels(image_width, image_height);
        let x0 = (math::floor(px0) as usize).min(image_width - 1);
        let y0 = (math::floor(py0) as usize).min(image_height - 1);
        let x1 = (math::ceil(px1) as usize).clamp(x0 + 1, image_width);
        let y1 = (math::ceil(py1) as usize).clamp(y0 + 1, image_height);
        let (cx, cy) = ((px0 + px1) / 2.0, (py0 + py1) / 2.0);
        let (rx, ry) = (((px1 - px0) / 2.0).max(0.5), ((py1 - py0) / 2.0).max(0.5));
        let (w, h) = (x1 - x0, y1 - y0);
        let mut values = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let dx = (x0 + x) as f64 + 0.5 - cx;
                let dy = (y0 + y) as f64 + 0.5 - cy;
                if (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry) <= 1.0 {
                    values[y * w + x] = MaskPart::Body as u8;
                }
            }
        }
        ObjectMask {
            class: bbox.class,
            bbox: *bbox,
            x0,
            y0,
            width: w,
            height: h,
            values,
        }
    }
}

/// Labels move between co-registered modalities unchanged.
pub fn transfer_labels(labels: &[BoundingBox]) -> Vec<BoundingBox> {
    labels.to_vec()
}

fn part_target(class: ClassId, value: u8) -> ThermalPart {
    match (class, value) {
        (ClassId::Person, _) => ThermalPart::Person,
        (ClassId::Car, 2) => ThermalPart::CarEngine,
        (ClassId::Car, _) => ThermalPart::CarBody,
    }
}

/// Blends masked pixels toward their class's target intensity:
/// `out = (1 - alpha) * in + alpha * target`. The one-pixel ring around each
/// mask is blended with `alpha / 2`. Nothing else is touched.
pub fn enhance_heat_signature(
    ir: &Image,
    masks: &[ObjectMask],
    profile: &ThermalProfile,
    illumination: Illumination,
    alpha: f64,
) -> Result<Image> {
    if ir.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            got: ir.channels(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("blend alpha must lie in [0, 1], got {alpha}")));
    }
    let (w, h) = ir.size();
    for m in masks {
        if m.x0 + m.width > w || m.y0 + m.height > h || m.values.len() != m.width * m.height {
            return Err(Error::SizeMismatch {
                id: String::from("mask"),
                detail: format!(
                    "mask window {}x{} at ({}, {}) does not fit a {w}x{h} image",
                    m.width, m.height, m.x0, m.y0
                ),
            });
        }
    }
    let mut out = ir.clone();
    for m in masks {
        // weight and target per pixel of the window grown by one pixel
        let gx0 = m.x0.saturating_sub(1);
        let gy0 = m.y0.saturating_sub(1);
        let gx1 = (m.x0 + m.width + 1).min(w);
        let gy1 = (m.y0 + m.height + 1).min(h);
        let inside = |x: isize, y: isize| -> u8 {
            if x < m.x0 as isize || y < m.y0 as isize {
                return 0;
            }
            let (lx, ly) = (x as usize - m.x0, y as usize - m.y0);
            if lx >= m.width || ly >= m.height {
                return 0;
            }
            m.get(lx, ly)
        };
        let mut updates = Vec::new();
        for y in gy0..gy1 {
            for x in gx0..gx1 {
                let v = inside(x as isize, y as isize);
                let (weight, value) = if v != 0 {
                    (alpha, v)
                } else {
                    let mut neighbour = 0;
                    'scan: for dy in -1..=1 {
                        for dx in -1..=1 {
                            let n = inside(x as isize + dx, y as isize + dy);
                            if n != 0 {
                                neighbour = n;
                                break 'scan;
                            }
                        }
                    }
                    if neighbour == 0 {
                        continue;
                    }
                    (alpha / 2.0, neighbour)
                };
                let target = profile.intensity(part_target(m.class, value), illumination)? as f64;
                let cur = out.get(x, y, 0) as f64;
                updates.push((x, y, math::round((1.0 - weight) * cur + weight * target).clamp(0.0, 255.0) as u8));
            }
        }
        for (x, y, v) in updates {
            out.set(x, y, 0, v);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    /// Square working size of both generators.
    pub size: usize,
    /// Base width of the generators.
    pub ngf: usize,
    /// Base width of the discriminators.
    pub ndf: usize,
    pub residual_blocks: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub lambda_cycle: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            size: 128,
            ngf: 16,
            ndf: 16,
            residual_blocks: 6,
            learning_rate: 2e-4,
            beta1: 0.5,
            lambda_cycle: 10.0,
            epochs: 10,
            seed: 0,
        }
    }
}

/// Epoch-mean losses of the translator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslatorLosses {
    pub epoch: usize,
    /// Adversarial loss of the RGB→IR generator.
    pub loss_g: f64,
    /// Adversarial loss of the IR→RGB generator.
    pub loss_f: f64,
    pub loss_d_ir: f64,
    pub loss_d_rgb: f64,
    /// Unweighted sum of both L1 cycle reconstruction losses.
    pub loss_cycle: f64,
}

impl TranslatorLosses {
    /// Generator objective: both adversarial terms plus the weighted cycle term.
    pub fn composite(&self, lambda_cycle: f64) -> f64 {
        self.loss_g + self.loss_f + lambda_cycle * self.loss_cycle
    }
}

fn conv_block(net: &mut Sequential<f32>, cin: usize, cout: usize, k: usize, stride: usize, r: &mut rng::Rng) {
    net.push(Layer::Conv2d(Conv2d::new(cin, cout, k, stride, k / 2, Padding::Reflect, r)));
    net.push(Layer::InstanceNorm(InstanceNorm::new()));
    net.push(Layer::relu());
}

/// Residual generator: 7×7 stem, two stride-2 downsamplings, residual
/// blocks, two nearest-upsample + conv stages, 7×7 head and tanh. All
/// convolutions use reflect padding.
pub fn build_generator(cin: usize, cout: usize, config: &TranslatorConfig, r: &mut rng::Rng) -> Sequential<f32> {
    let g = config.ngf;
    let mut net = Sequential::new();
    conv_block(&mut net, cin, g, 7, 1, r);
    conv_block(&mut net, g, 2 * g, 3, 2, r);
    conv_block(&mut net, 2 * g, 4 * g, 3, 2, r);
    for _ in 0..config.residual_blocks {
        let mut inner = Sequential::new();
        conv_block(&mut inner, 4 * g, 4 * g, 3, 1, r);
        inner.push(Layer::Conv2d(Conv2d::new(4 * g, 4 * g, 3, 1, 1, Padding::Reflect, r)));
        inner.push(Layer::InstanceNorm(InstanceNorm::new()));
        net.push(Layer::Residual(alloc::boxed::Box::new(Residual { inner })));
    }
    net.push(Layer::Upsample2d(Upsample2d::new()));
    conv_block(&mut net, 4 * g, 2 * g, 3, 1, r);
    net.push(Layer::Upsample2d(Upsample2d::new()));
    conv_block(&mut net, 2 * g, g, 3, 1, r);
    net.push(Layer::Conv2d(Conv2d::new(g, cout, 7, 1, 3, Padding::Reflect, r)));
    net.push(Layer::tanh());
    net
}

/// Three-layer patch discriminator with a one-channel score map.
pub fn build_discriminator(cin: usize, config: &TranslatorConfig, r: &mut rng::Rng) -> Sequential<f32> {
    let d = config.ndf;
    let mut net = Sequential::new();
    net.push(Layer::Conv2d(Conv2d::new(cin, d, 4, 2, 1, Padding::Zero, r)));
    net.push(Layer::leaky_relu(0.2));
    net.push(Layer::Conv2d(Conv2d::new(d, 2 * d, 4, 2, 1, Padding::Zero, r)));
    net.push(Layer::InstanceNorm(InstanceNorm::new()));
    net.push(Layer::leaky_relu(0.2));
    net.push(Layer::Conv2d(Conv2d::new(2 * d, 4 * d, 4, 1, 1, Padding::Zero, r)));
    net.push(Layer::InstanceNorm(InstanceNorm::new()));
    net.push(Layer::leaky_relu(0.2));
    net.push(Layer::Conv2d(Conv2d::new(4 * d, 1, 4, 1, 1, Padding::Zero, r)));
    net
}

/// Generator pair `G: RGB→IR`, `F: IR→RGB` and their discriminators.
#[derive(Clone, Debug)]
pub struct TranslatorPair {
    pub config: TranslatorConfig,
    pub g: Sequential<f32>,
    pub f: Sequential<f32>,
    pub d_ir: Sequential<f32>,
    pub d_rgb: Sequential<f32>,
    /// Losses of the untrained networks, measured before the first update.
    pub initial: Option<TranslatorLosses>,
    pub history: Vec<TranslatorLosses>,
}

/// Image scaled to `[-1, 1]` at `size`×`size`.
fn to_signed_tensor(img: &Image, size: usize) -> Tensor<f32> {
    let resized = img.resize_bilinear(size, size);
    let mut t = Tensor::zeros([1, img.channels(), size, size]);
    resized.write_into(t.sample_mut(0), 1.0 / 127.5, -1.0);
    t
}

impl TranslatorPair {
    pub fn new(config: &TranslatorConfig) -> Result<Self> {
        if config.size == 0 || config.size % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "translator working size {} must be a positive multiple of 4",
                config.size
            )));
        }
        let mut r = rng::seeded(config.seed);
        Ok(TranslatorPair {
            g: build_generator(3, 1, config, &mut r),
            f: build_generator(1, 3, config, &mut r),
            d_ir: build_discriminator(1, config, &mut r),
            d_rgb: build_discriminator(3, config, &mut r),
            config: config.clone(),
            initial: None,
            history: Vec::new(),
        })
    }

    pub fn is_trained(&self) -> bool {
        !self.history.is_empty()
    }

    fn inputs(&self, rgb: &[Image], ir: &[Image]) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
        if rgb.is_empty() {
            return Err(Error::EmptyInput("translator RGB set"));
        }
        if ir.is_empty() {
            return Err(Error::EmptyInput("translator IR set"));
        }
        let size = self.config.size;
        let a = rgb
            .iter()
            .map(|i| {
                if i.channels() != 3 {
                    return Err(Error::ChannelMismatch {
                        expected: 3,
                        got: i.channels(),
                    });
                }
                Ok(to_signed_tensor(i, size))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = ir.iter().map(|i| to_signed_tensor(&i.luminance(), size)).collect();
        Ok((a, b))
    }

    /// Losses of the current networks over aligned `(a[i % na], b[i % nb])`
    /// pairs, without updating anything.
    pub fn measure(&self, rgb: &[Image], ir: &[Image]) -> Result<TranslatorLosses> {
        let (a, b) = self.inputs(rgb, ir)?;
        let n = a.len().max(b.len());
        let mut acc = TranslatorLosses::default();
        for i in 0..n {
            let l = self.step_losses(&a[i % a.len()], &b[i % b.len()]);
            accumulate(&mut acc, &l);
        }
        Ok(scaled(acc, 1.0 / n as f64, self.history.len()))
    }

    fn step_losses(&self, real_a: &Tensor<f32>, real_b: &Tensor<f32>) -> TranslatorLosses {
        let fake_b = self.g.infer(real_a);
        let rec_a = self.f.infer(&fake_b);
        let fake_a = self.f.infer(real_b);
        let rec_b = self.g.infer(&fake_a);
        let d_real_b = self.d_ir.infer(real_b);
        let d_fake_b = self.d_ir.infer(&fake_b);
        let d_real_a = self.d_rgb.infer(real_a);
        let d_fake_a = self.d_rgb.infer(&fake_a);
        TranslatorLosses {
            epoch: 0,
            loss_g: mse_to_constant(&d_fake_b, 1.0).0,
            loss_f: mse_to_constant(&d_fake_a, 1.0).0,
            loss_d_ir: 0.5 * (mse_to_constant(&d_real_b, 1.0).0 + mse_to_constant(&d_fake_b, 0.0).0),
            loss_d_rgb: 0.5 * (mse_to_constant(&d_real_a, 1.0).0 + mse_to_constant(&d_fake_a, 0.0).0),
            loss_cycle: l1_loss(&rec_a, real_a).0 + l1_loss(&rec_b, real_b).0,
        }
    }

    /// One generator update followed by one update of each discriminator.
    fn train_step(&mut self, real_a: &Tensor<f32>, real_b: &Tensor<f32>, opt: &mut [Adam<f32>; 4]) -> TranslatorLosses {
        let lambda = self.config.lambda_cycle as f32;
        let weighted = |t: Tensor<f32>| t.map(|v| v * lambda);

        // A → B → A
        let fake_b = self.g.forward(real_a);
        let (loss_g, grad) = mse_to_constant(&self.d_ir.forward(&fake_b), 1.0);
        let mut d_fake_b = self.d_ir.backward(&grad);
        let rec_a = self.f.forward(&fake_b);
        let (cyc_a, grad) = l1_loss(&rec_a, real_a);
        d_fake_b.add_assign(&self.f.backward(&weighted(grad)));
        self.g.backward(&d_fake_b);

        // B → A → B
        let fake_a = self.f.forward(real_b);
        let (loss_f, grad) = mse_to_constant(&self.d_rgb.forward(&fake_a), 1.0);
        let mut d_fake_a = self.d_rgb.backward(&grad);
        let rec_b = self.g.forward(&fake_a);
        let (cyc_b, grad) = l1_loss(&rec_b, real_b);
        d_fake_a.add_assign(&self.g.backward(&weighted(grad)));
        self.f.backward(&d_fake_a);

        let [opt_g, opt_f, opt_dir, opt_drgb] = opt;
        opt_g.step(&mut self.g);
        opt_f.step(&mut self.f);
        self.d_ir.zero_grad();
        self.d_rgb.zero_grad();

        let disc = |d: &mut Sequential<f32>, o: &mut Adam<f32>, real: &Tensor<f32>, fake: &Tensor<f32>| {
            let (lr, g) = mse_to_constant(&d.forward(real), 1.0);
            d.backward(&g.map(|v| v * 0.5));
            let (lf, g) = mse_to_constant(&d.forward(fake), 0.0);
            d.backward(&g.map(|v| v * 0.5));
            o.step(d);
            0.5 * (lr + lf)
        };
        let loss_d_ir = disc(&mut self.d_ir, opt_dir, real_b, &fake_b);
        let loss_d_rgb = disc(&mut self.d_rgb, opt_drgb, real_a, &fake_a);
        TranslatorLosses {
            epoch: 0,
            loss_g,
            loss_f,
            loss_d_ir,
            loss_d_rgb,
            loss_cycle: cyc_a + cyc_b,
        }
    }

    /// Trains for `epochs` more epochs with fresh optimizers. An epoch visits
    /// `max(|rgb|, |ir|)` unpaired samples.
    pub fn fit(&mut self, rgb: &[Image], ir: &[Image], epochs: usize) -> Result<()> {
        let (a, b) = self.inputs(rgb, ir)?;
        if self.initial.is_none() {
            self.initial = Some(self.measure(rgb, ir)?);
        }
        let c = &self.config;
        let mut opt = [(); 4].map(|_| Adam::with_betas(c.learning_rate, c.beta1, 0.999));
        let n = a.len().max(b.len());
        let start = self.history.len();
        for epoch in start..start + epochs {
            let mut r = rng::stream(self.config.seed, epoch as u64 + 1);
            let mut ia: Vec<usize> = (0..n).map(|i| i % a.len()).collect();
            let mut ib: Vec<usize> = (0..n).map(|i| i % b.len()).collect();
            ia.shuffle(&mut r);
            ib.shuffle(&mut r);
            let mut acc = TranslatorLosses::default();
            for (&i, &j) in ia.iter().zip(&ib) {
                let l = self.train_step(&a[i], &b[j], &mut opt);
                if !(l.composite(self.config.lambda_cycle) + l.loss_d_ir + l.loss_d_rgb).is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: "translator",
                        epoch,
                    });
                }
                accumulate(&mut acc, &l);
            }
            let mean = scaled(acc, 1.0 / n as f64, epoch);
            log::info!(
                "translator epoch {epoch}: G {:.4} F {:.4} D_ir {:.4} D_rgb {:.4} cycle {:.4}",
                mean.loss_g,
                mean.loss_f,
                mean.loss_d_ir,
                mean.loss_d_rgb,
                mean.loss_cycle
            );
            self.history.push(mean);
        }
        Ok(())
    }
}

fn accumulate(acc: &mut TranslatorLosses, l: &TranslatorLosses) {
    acc.loss_g += l.loss_g;
    acc.loss_f += l.loss_f;
    acc.loss_d_ir += l.loss_d_ir;
    acc.loss_d_rgb += l.loss_d_rgb;
    acc.loss_cycle += l.loss_cycle;
}

fn scaled(acc: TranslatorLosses, k: f64, epoch: usize) -> TranslatorLosses {
    TranslatorLosses {
        epoch,
        loss_g: acc.loss_g * k,
        loss_f: acc.loss_f * k,
        loss_d_ir: acc.loss_d_ir * k,
        loss_d_rgb: acc.loss_d_rgb * k,
        loss_cycle: acc.loss_cycle * k,
    }
}

pub fn train_translator(rgb: &[Image], ir: &[Image], config: &TranslatorConfig) -> Result<TranslatorPair> {
    let mut pair = TranslatorPair::new(config)?;
    pair.fit(rgb, ir, config.epochs)?;
    Ok(pair)
}

/// RGB frame → single-channel IR frame of `width`×`height` through `G` at the
/// translator's working size.
pub fn stylize(rgb: &Image, translator: &TranslatorPair, width: usize, height: usize) -> Result<Image> {
    if !translator.is_trained() {
        return Err(Error::Untrained);
    }
    if rgb.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            got: rgb.channels(),
        });
    }
    let size = translator.config.size;
    let y = translator.g.infer(&to_signed_tensor(rgb, size));
    let out = Image::from_tensor_plane(y.sample(0), 1, size, size, 1.0 / 127.5, -1.0);
    Ok(out.resize_bilinear(width, height))
}

/// One RGB frame to convert.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleSource {
    pub id: String,
    pub rgb: Image,
    pub labels: Vec<BoundingBox>,
    pub illumination: Illumination,
}

impl From<&ImagePair> for StyleSource {
    fn from(p: &ImagePair) -> Self {
        StyleSource {
            id: p.id.clone(),
            rgb: p.rgb.clone(),
            labels: p.labels.clone(),
            illumination: p.illumination,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    pub enabled: bool,
    pub alpha: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig { enabled: true, alpha: 0.8 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StylizedDataset {
    pub pairs: Vec<ImagePair>,
    /// Frames skipped because their masks could not be produced.
    pub skipped: Vec<(String, Error)>,
}

/// Stylizes every frame, enhances heat signatures inside the provided masks
/// and keeps the source labels.
pub fn build_stylized_dataset(
    sources: &[StyleSource],
    translator: &TranslatorPair,
    mut masks_provider: impl FnMut(&StyleSource) -> Result<Vec<ObjectMask>>,
    profile: &ThermalProfile,
    enhance: &EnhanceConfig,
) -> Result<StylizedDataset> {
    let mut out = StylizedDataset::default();
    for s in sources {
        let (w, h) = s.rgb.size();
        let mut ir = stylize(&s.rgb, translator, w, h)?;
        if enhance.enabled {
            let masks = match masks_provider(s) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("skipping `{}`: mask provider failed: {e}", s.id);
                    out.skipped.push((s.id.clone(), e));
                    continue;
                }
            };
            ir = enhance_heat_signature(&ir, &masks, profile, s.illumination, enhance.alpha)?;
        }
        out.pairs.push(ImagePair {
            id: s.id.clone(),
            rgb: s.rgb.clone(),
            ir,
            illumination: s.illumination,
            source: Source::Stylized,
            labels: transfer_labels(&s.labels),
        });
    }
    Ok(out)
}
