//! Detection metrics and the day/night reporting protocol.
//!
//! AP uses all-point interpolation: the area under the precision envelope
//! `p(r) = max{precision_k : recall_k >= r}`. The "all" split pools
//! detections from every image before computing AP; it is not an average of
//! the day and night values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Illumination, ImagePair};
use crate::fusion::FusionResult;
use crate::geometry::NUM_CLASSES;
use crate::{BoundingBox, ClassId, Detection, Error, Modality, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union of two normalized boxes. Class is ignored.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy matching: detections are visited by descending confidence (ties
/// keep input order) and each takes the unmatched same-class ground truth box
/// with the highest IoU at or above `iou_threshold`.
///
/// The result is aligned with `detections`: `Some(j)` means a true positive
/// matched to `gt[j]`, `None` a false positive.
pub fn match_detections(detections: &[Detection], gt: &[BoundingBox], iou_threshold: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut taken = vec![false; gt.len()];
    let mut result = vec![None; detections.len()];
    for i in order {
        let d = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if taken[j] || g.class != d.bbox.class {
                continue;
            }
            let v = iou(&d.bbox, g);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            result[i] = Some(j);
        }
    }
    result
}

/// Per-image F1 at IoU 0.5 over already-thresholded detections.
///
/// An image with neither ground truth nor detections scores 1.
pub fn image_f1(detections: &[Detection], gt: &[BoundingBox]) -> f64 {
    if detections.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let tp = match_detections(detections, gt, DEFAULT_IOU_THRESHOLD)
        .iter()
        .filter(|m| m.is_some())
        .count();
    2.0 * tp as f64 / (detections.len() + gt.len()) as f64
}

/// A pooled detection reduced to what AP needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredDetection {
    pub confidence: f64,
    pub true_positive: bool,
}

/// All-point interpolated average precision.
///
/// With no ground truth, AP is 0 if anything was detected and 1 (with a
/// logged warning) if nothing was.
pub fn average_precision(detections: &[ScoredDetection], gt_count: usize) -> f64 {
    if gt_count == 0 {
        if detections.is_empty() {
            log::warn!("average precision of a class with no ground truth and no detections is defined as 1");
            return 1.0;
        }
        return 0.0;
    }
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(core::cmp::Ordering::Equal));
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in &sorted {
        if d.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }
    // envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn mean_ap(class_aps: &[f64]) -> Result<f64> {
    if class_aps.is_empty() {
        return Err(Error::EmptyInput("mean AP over zero classes"));
    }
    Ok(class_aps.iter().sum::<f64>() / class_aps.len() as f64)
}

/// Fraction of ids on which two selectors agree.
pub fn ian_precision(ian: &[(String, Modality)], oracle: &[(String, Modality)]) -> Result<f64> {
    let a: BTreeMap<&str, Modality> = ian.iter().map(|(id, m)| (id.as_str(), *m)).collect();
    let b: BTreeMap<&str, Modality> = oracle.iter().map(|(id, m)| (id.as_str(), *m)).collect();
    if a.len() != ian.len() || b.len() != oracle.len() {
        return Err(Error::IdMismatch("duplicate ids in selector output".into()));
    }
    if a.keys().ne(b.keys()) {
        return Err(Error::IdMismatch("IAN and oracle selections cover different ids".into()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("selector precision over zero pairs"));
    }
    let agree = a.iter().filter(|(id, m)| b[*id] == **m).count();
    Ok(agree as f64 / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Rgb,
    Ir,
    Fusion,
    Oracle,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [DetectorKind::Rgb, DetectorKind::Ir, DetectorKind::Fusion, DetectorKind::Oracle];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Day,
    Night,
    All,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Day, Split::Night, Split::All];

    pub fn contains(self, illumination: Illumination) -> bool {
        match self {
            Split::Day => illumination == Illumination::Day,
            Split::Night => illumination == Illumination::Night,
            Split::All => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Day => "day",
            Split::Night => "night",
            Split::All => "all",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Split::Day),
            "night" => Ok(Split::Night),
            "all" => Ok(Split::All),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// AP per class and mAP for one detector on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub detector: DetectorKind,
    pub split: Split,
    /// Indexed by [`ClassId::index`].
    pub ap: [f64; NUM_CLASSES],
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: Split,
    pub images: usize,
    /// Ground-truth instances, indexed by [`ClassId::index`].
    pub instances: [usize; NUM_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPrecision {
    pub split: Split,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub std_ms: f64,
    pub hardware: String,
}

impl LatencyStats {
    pub fn from_samples(samples_ms: &[f64], hardware: impl Into<String>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::EmptyInput("latency samples"));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        // nearest-rank percentile
        let rank = crate::math::ceil(0.95 * n as f64) as usize;
        let p95 = s[rank.clamp(1, n) - 1];
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Ok(LatencyStats {
            samples: n,
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            std_ms: crate::math::sqrt(var),
            hardware: hardware.into(),
        })
    }
}

/// The full evaluation table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
    pub counts: Vec<SplitCounts>,
    pub ian_precision: Option<f64>,
    pub ian_precision_by_split: Vec<SplitPrecision>,
    pub latency: Option<LatencyStats>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, detector: DetectorKind, split: Split) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.detector == detector && c.split == split)
    }

    pub fn has_detector(&self, detector: DetectorKind) -> bool {
        self.cells.iter().any(|c| c.detector == detector)
    }

    pub fn splits(&self) -> Vec<Split> {
        let set: BTreeSet<Split> = self.cells.iter().map(|c| c.split).collect();
        set.into_iter().collect()
    }
}

/// Ground truth for one test image.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub id: String,
    pub illumination: Illumination,
    pub labels: Vec<BoundingBox>,
}

impl From<&ImagePair> for GroundTruth {
    fn from(p: &ImagePair) -> Self {
        GroundTruth {
            id: p.id.clone(),
            illumination: p.illumination,
            labels: p.labels.clone(),
        }
    }
}

/// Per-image detections of every evaluated detector.
#[derive(Clone, Debug, Default)]
pub struct DetectorOutputs {
    pub rgb: BTreeMap<String, Vec<Detection>>,
    pub ir: BTreeMap<String, Vec<Detection>>,
    pub fusion: Option<Vec<FusionResult>>,
    pub oracle: Option<Vec<FusionResult>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub splits: Vec<Split>,
    pub iou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            splits: Split::ALL.to_vec(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

fn check_coverage(ids: &BTreeSet<&str>, other: impl Iterator<Item = String>, what: &str) -> Result<()> {
    let other: BTreeSet<String> = other.collect();
    if other.len() != ids.len() || other.iter().any(|id| !ids.contains(id.as_str())) {
        return Err(Error::IdMismatch(format!("{what} outputs do not cover the evaluated ids")));
    }
    Ok(())
}

/// Builds the report for every requested split. Splits without images are
/// left out of the report.
pub fn evaluate(gt: &[GroundTruth], outputs: &DetectorOutputs, options: &EvalOptions) -> Result<EvalReport> {
    let ids: BTreeSet<&str> = gt.iter().map(|g| g.id.as_str()).collect();
    if ids.len() != gt.len() {
        return Err(Error::IdMismatch("duplicate ids in evaluation set".into()));
    }
    check_coverage(&ids, outputs.rgb.keys().cloned(), "RGB")?;
    check_coverage(&ids, outputs.ir.keys().cloned(), "IR")?;
    let fusion_map = |results: &Option<Vec<FusionResult>>, what: &str| -> Result<Option<BTreeMap<String, Vec<Detection>>>> {
        match results {
            None => Ok(None),
            Some(r) => {
                check_coverage(&ids, r.iter().map(|f| f.id.clone()), what)?;
                Ok(Some(r.iter().map(|f| (f.id.clone(), f.detections.clone())).collect()))
            }
        }
    };
    let fusion = fusion_map(&outputs.fusion, "fusion")?;
    let oracle = fusion_map(&outputs.oracle, "oracle")?;

    let mut report = EvalReport::default();
    let mut splits = options.splits.clone();
    splits.sort();
    splits.dedup();
    for split in splits {
        let images: Vec<&GroundTruth> = gt.iter().filter(|g| split.contains(g.illumination)).collect();
        if images.is_empty() {
            continue;
        }
        let mut instances = [0usize; NUM_CLASSES];
        for g in &images {
            for b in &g.labels {
                instances[b.class.index()] += 1;
            }
        }
        report.counts.push(SplitCounts {
            split,
            images: images.len(),
            instances,
        });
        let sources: [(DetectorKind, Option<&BTreeMap<String, Vec<Detection>>>); 4] = [
            (DetectorKind::Rgb, Some(&outputs.rgb)),
            (DetectorKind::Ir, Some(&outputs.ir)),
            (DetectorKind::Fusion, fusion.as_ref()),
            (DetectorKind::Oracle, oracle.as_ref()),
        ];
        for (detector, dets) in sources {
            let Some(dets) = dets else { continue };
            let mut pooled: [Vec<ScoredDetection>; NUM_CLASSES] = Default::default();
            for g in &images {
                let d = &dets[&g.id];
                for (det, m) in d.iter().zip(match_detections(d, &g.labels, options.iou_threshold)) {
                    pooled[det.bbox.class.index()].push(ScoredDetection {
                        confidence: det.confidence,
                        true_positive: m.is_some(),
                    });
                }
            }
            let mut ap = [0.0; NUM_CLASSES];
            for class in ClassId::ALL {
                let k = class.index();
                if instances[k] == 0 && pooled[k].is_empty() {
                    report.warnings.push(format!(
                        "{detector:?}/{}: no {class} instances and no detections, AP defined as 1",
                        split.name()
                    ));
                }
                ap[k] = average_precision(&pooled[k], instances[k]);
            }
            report.cells.push(ReportCell {
                detector,
                split,
                ap,
                map: mean_ap(&ap)?,
            });
        }
        if let (Some(f), Some(o)) = (&outputs.fusion, &outputs.oracle) {
            let in_split: BTreeSet<&str> = images.iter().map(|g| g.id.as_str()).collect();
            let pick = |r: &[FusionResult]| -> Vec<(String, Modality)> {
                r.iter()
                    .filter(|x| in_split.contains(x.id.as_str()))
                    .map(|x| (x.id.clone(), x.chosen))
                    .collect()
            };
            let precision = ian_precision(&pick(f), &pick(o))?;
            report.ian_precision_by_split.push(SplitPrecision { split, precision });
            if split == Split::All || options.splits.len() == 1 {
                report.ian_precision = Some(precision);
            }
        }
    }
    if report.ian_precision.is_none() {
        if let (Some(f), Some(o)) = (&outputs.fusion, &outputs.oracle) {
            let all = |r: &[FusionResult]| -> Vec<(String, Modality)> { r.iter().map(|x| (x.id.clone(), x.chosen)).collect() };
            if !f.is_empty() {
                report.ian_precision = Some(ian_precision(&all(f), &all(o))?);
            }
        }
    }
    Ok(report)
}

fn fmt2(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

/// Plain-text table in the RGB | IR | Fusion (+Oracle) | IAN layout, values
/// rounded to two decimals.
pub fn render_report(report: &EvalReport) -> String {
    let splits = report.splits();
    let show_oracle = report.has_detector(DetectorKind::Oracle);
    let show_fusion = report.has_detector(DetectorKind::Fusion);
    let mut groups: Vec<(DetectorKind, &str)> = vec![(DetectorKind::Rgb, "RGB"), (DetectorKind::Ir, "IR")];
    if show_fusion {
        groups.push((DetectorKind::Fusion, "Fusion"));
    }
    const W: usize = 7;
    let label_w = 15;

    let mut header1 = format!("{:<label_w$}", "Class\\Detector");
    let mut header2 = format!("{:<label_w$}", "Setting");
    for (kind, name) in &groups {
        let mut cols = splits.len();
        if *kind == DetectorKind::Fusion && show_oracle {
            cols += 1;
        }
        let width = cols * (W + 3) - 1;
        let _ = write!(header1, "| {:^width$}", name, width = width - 1);
        for s in &splits {
            let _ = write!(header2, "| {:^w$}", title(s.name()), w = W);
        }
        if *kind == DetectorKind::Fusion && show_oracle {
            let _ = write!(header2, "| {:^w$}", "Oracle", w = W);
        }
    }
    let ian = report.ian_precision.is_some();
    if ian {
        let _ = write!(header1, "| {:^w$}", "IAN", w = 9);
        let _ = write!(header2, "| {:^w$}", "Precision", w = 9);
    }

    let mut out = String::new();
    let rule = "-".repeat(header2.len());
    out.push_str(&header1);
    out.push('\n');
    out.push_str(&header2);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');

    let rows: [(&str, Option<ClassId>); 3] = [
        ("Car", Some(ClassId::Car)),
        ("People", Some(ClassId::Person)),
        ("mAP@0.5 IOU", None),
    ];
    for (ri, (label, class)) in rows.iter().enumerate() {
        let value = |c: Option<&ReportCell>| -> Option<f64> {
            c.map(|c| match class {
                Some(k) => c.ap[k.index()],
                None => c.map,
            })
        };
        let mut line = format!("{label:<label_w$}");
        for (kind, _) in &groups {
            for s in &splits {
                let _ = write!(line, "| {:^w$}", fmt2(value(report.cell(*kind, *s))), w = W);
            }
            if *kind == DetectorKind::Fusion && show_oracle {
                let v = value(report.cell(DetectorKind::Oracle, Split::All));
                let _ = write!(line, "| {:^w$}", fmt2(v), w = W);
            }
        }
        if ian {
            let v = if ri == 1 { fmt2(report.ian_precision) } else { String::new() };
            let _ = write!(line, "| {:^w$}", v, w = 9);
        }
        out.push_str(&line);
        out.push('\n');
    }
    if let Some(l) = &report.latency {
        let _ = writeln!(
            out,
            "latency per pair: mean {:.2} ms, median {:.2} ms, p95 {:.2} ms over {} pairs ({})",
            l.mean_ms, l.median_ms, l.p95_ms, l.samples, l.hardware
        );
    }
    out
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Illumination;
    use proptest::prelude::*;

    fn bx(class: ClassId, cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(class, cx, cy, w, h).unwrap()
    }

    fn det(b: BoundingBox, conf: f64) -> Detection {
        Detection::new(b, conf, Modality::Rgb)
    }

    /// Rasterized pixel-count IoU on a fine grid.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox, n: usize) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        let inside = |bb: &BoundingBox, x: f64, y: f64| {
            let (x0, y0, x1, y1) = bb.corners();
            x >= x0 && x < x1 && y >= y0 && y < y1
        };
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bx(ClassId::Car, 0.25, 0.5, 0.5, 0.5);
        let b = bx(ClassId::Car, 0.5, 0.5, 0.5, 0.5);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((raster_iou(&a, &b, 400) - 1.0 / 3.0).abs() < 1e-3);
        let c = bx(ClassId::Car, 0.9, 0.9, 0.1, 0.1);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn matching_examples() {
        let g = bx(ClassId::Car, 0.5, 0.5, 0.2, 0.2);
        assert_eq!(match_detections(&[det(g, 0.7)], &[], 0.5), vec![None]);
        assert_eq!(match_detections(&[det(g, 0.7)], &[g], 0.5), vec![Some(0)]);
        let d1 = det(bx(ClassId::Car, 0.51, 0.5, 0.2, 0.2), 0.8);
        let d2 = det(bx(ClassId::Car, 0.5, 0.5, 0.2, 0.2), 0.9);
        // the 0.8 detection is listed first but the 0.9 one claims the box
        assert_eq!(match_detections(&[d1, d2], &[g], 0.5), vec![None, Some(0)]);
        // class mismatch never matches
        let p = det(bx(ClassId::Person, 0.5, 0.5, 0.2, 0.2), 0.9);
        assert_eq!(match_detections(&[p], &[g], 0.5), vec![None]);
    }

    /// Enumerates every partial injective assignment of detections to same-class
    /// ground truth above threshold and returns the largest number of matches.
    fn brute_force_max_matches(dets: &[Detection], gt: &[BoundingBox], thr: f64) -> usize {
        fn rec(i: usize, dets: &[Detection], gt: &[BoundingBox], used: &mut Vec<bool>, thr: f64) -> usize {
            if i == dets.len() {
                return 0;
            }
            let mut best = rec(i + 1, dets, gt, used, thr);
            for j in 0..gt.len() {
                if !used[j] && gt[j].class == dets[i].bbox.class && iou(&dets[i].bbox, &gt[j]) >= thr {
                    used[j] = true;
                    best = best.max(1 + rec(i + 1, dets, gt, used, thr));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, dets, gt, &mut vec![false; gt.len()], thr)
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0usize..2, 0.1f64..0.9, 0.1f64..0.9, 0.05f64..0.2, 0.05f64..0.2).prop_map(|(c, cx, cy, w, h)| {
            BoundingBox::from_corners(
                ClassId::from_index(c).unwrap(),
                cx - w / 2.0,
                cy - h / 2.0,
                cx + w / 2.0,
                cy + h / 2.0,
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&b, &a)).abs() < 1e-15);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn greedy_matching_is_injective(
            gt in proptest::collection::vec(arb_box(), 0..5),
            dets in proptest::collection::vec((arb_box(), 0.0f64..1.0), 0..5),
        ) {
            let dets: Vec<Detection> = dets.into_iter().map(|(b, c)| det(b, c)).collect();
            let m = match_detections(&dets, &gt, 0.5);
            let mut seen = BTreeSet::new();
            for j in m.iter().flatten() {
                prop_assert!(seen.insert(*j));
                prop_assert!(*j < gt.len());
            }
            // greedy never exceeds the optimal assignment size
            prop_assert!(seen.len() <= brute_force_max_matches(&dets, &gt, 0.5));
        }

        #[test]
        fn low_confidence_false_positive_never_increases_ap(
            flags in proptest::collection::vec(any::<bool>(), 1..8),
            extra in 1usize..3,
        ) {
            let dets: Vec<ScoredDetection> = flags.iter().enumerate().map(|(i, &tp)| ScoredDetection {
                confidence: 1.0 - i as f64 * 0.1, true_positive: tp,
            }).collect();
            let gt = flags.iter().filter(|&&t| t).count() + extra;
            let base = average_precision(&dets, gt);
            let mut more = dets.clone();
            more.push(ScoredDetection { confidence: 0.01, true_positive: false });
            prop_assert!(average_precision(&more, gt) <= base + 1e-12);
            let mut top = dets.clone();
            top.push(ScoredDetection { confidence: 2.0, true_positive: true });
            prop_assert!(average_precision(&top, gt + 1) >= base - 1e-12);
        }
    }

    #[test]
    fn ap_worked_example() {
        let d = [
            ScoredDetection {
                confidence: 0.9,
                true_positive: true,
            },
            ScoredDetection {
                confidence: 0.8,
                true_positive: false,
            },
            ScoredDetection {
                confidence: 0.7,
                true_positive: true,
            },
        ];
        assert!((average_precision(&d, 2) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&d[..1], 1), 1.0);
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&d, 0), 0.0);
        assert_eq!(average_precision(&[], 0), 1.0);
    }

    #[test]
    fn mean_ap_examples() {
        let r = |v: f64| crate::math::round(v * 100.0) / 100.0;
        assert_eq!(r(mean_ap(&[0.83, 0.49]).unwrap()), 0.66);
        assert_eq!(r(mean_ap(&[0.95, 0.61]).unwrap()), 0.78);
        assert!((mean_ap(&[0.99, 0.96]).unwrap() - 0.975).abs() < 1e-12);
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn ian_precision_counts_agreement() {
        let ids = ["a", "b", "c", "d"];
        let mk = |ms: [Modality; 4]| -> Vec<(String, Modality)> { ids.iter().zip(ms).map(|(i, m)| (i.to_string(), m)).collect() };
        use Modality::*;
        let o = mk([Rgb, Ir, Ir, Rgb]);
        assert_eq!(ian_precision(&o, &o).unwrap(), 1.0);
        assert_eq!(ian_precision(&mk([Ir, Rgb, Rgb, Ir]), &o).unwrap(), 0.0);
        assert_eq!(ian_precision(&mk([Rgb, Ir, Ir, Ir]), &o).unwrap(), 0.75);
        assert!(ian_precision(&o[..3], &o).is_err());
    }

    #[test]
    fn latency_stats() {
        let s = LatencyStats::from_samples(&[3.0, 1.0, 2.0, 10.0], "test").unwrap();
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.mean_ms, 4.0);
        assert_eq!(s.p95_ms, 10.0);
        let one = LatencyStats::from_samples(&[5.0], "x").unwrap();
        assert_eq!((one.mean_ms, one.median_ms, one.p95_ms), (5.0, 5.0, 5.0));
        assert!(LatencyStats::from_samples(&[], "x").is_err());
    }

    fn gt(id: &str, ill: Illumination, labels: Vec<BoundingBox>) -> GroundTruth {
        GroundTruth {
            id: id.into(),
            illumination: ill,
            labels,
        }
    }

    #[test]
    fn day_only_dataset_has_no_night_cells() {
        let b = bx(ClassId::Car, 0.5, 0.5, 0.2, 0.2);
        let p = bx(ClassId::Person, 0.2, 0.2, 0.1, 0.1);
        let g = vec![gt("a", Illumination::Day, vec![b, p])];
        let mut out = DetectorOutputs::default();
        out.rgb.insert("a".into(), vec![det(b, 0.9)]);
        out.ir.insert("a".into(), vec![]);
        let r = evaluate(&g, &out, &EvalOptions::default()).unwrap();
        assert!(r.cell(DetectorKind::Rgb, Split::Night).is_none());
        assert_eq!(r.cell(DetectorKind::Rgb, Split::Day), r.cell(DetectorKind::Rgb, Split::Day));
        let day = r.cell(DetectorKind::Rgb, Split::Day).unwrap();
        let all = r.cell(DetectorKind::Rgb, Split::All).unwrap();
        assert_eq!((day.ap, day.map), (all.ap, all.map));
        assert_eq!(day.ap, [1.0, 0.0]);
        assert_eq!(day.map, 0.5);
    }

    /// Four images, hand-computed AP table.
    ///
    /// Cars (RGB): day1 TP 0.9, day2 FP 0.8, night1 TP 0.6, night2 TP 0.3 and
    /// one missed car in night2.
    ///   day:   TP,FP over 1 GT          -> AP 1
    ///   night: TP,TP over 3 GT          -> AP 2/3
    ///   all:   TP.9 FP.8 TP.6 TP.3 / 4  -> recall .25,.25,.5,.75,
    ///          precision 1,.5,.667,.75  -> envelope 1,.75,.75,.75
    ///          AP = .25 + .25*.75 + .25*.75 = .625
    /// Persons: none anywhere, no detections -> AP 1 (with warning).
    #[test]
    fn hand_built_four_image_table() {
        let car = |cx: f64| bx(ClassId::Car, cx, 0.5, 0.1, 0.1);
        let g = vec![
            gt("d1", Illumination::Day, vec![car(0.2)]),
            gt("d2", Illumination::Day, vec![]),
            gt("n1", Illumination::Night, vec![car(0.2)]),
            gt("n2", Illumination::Night, vec![car(0.2), car(0.6)]),
        ];
        let mut out = DetectorOutputs::default();
        out.rgb.insert("d1".into(), vec![det(car(0.2), 0.9)]);
        out.rgb.insert("d2".into(), vec![det(car(0.4), 0.8)]);
        out.rgb.insert("n1".into(), vec![det(car(0.2), 0.6)]);
        out.rgb.insert("n2".into(), vec![det(car(0.2), 0.3)]);
        for id in ["d1", "d2", "n1", "n2"] {
            out.ir.insert(id.into(), vec![]);
        }
        let r = evaluate(&g, &out, &EvalOptions::default()).unwrap();
        let ap = |s| r.cell(DetectorKind::Rgb, s).unwrap().ap[0];
        assert!((ap(Split::Day) - 1.0).abs() < 1e-12);
        assert!((ap(Split::Night) - 2.0 / 3.0).abs() < 1e-12);
        assert!((ap(Split::All) - 0.625).abs() < 1e-12);
        assert_eq!(r.cell(DetectorKind::Rgb, Split::All).unwrap().ap[1], 1.0);
        assert!(!r.warnings.is_empty());
        for c in &r.cells {
            assert!((c.map - (c.ap[0] + c.ap[1]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(r.counts.iter().find(|c| c.split == Split::All).unwrap().instances, [4, 0]);
    }

    #[test]
    fn identical_day_and_night_subsets_pool_to_same_ap() {
        let car = |cx: f64| bx(ClassId::Car, cx, 0.5, 0.1, 0.1);
        let g = vec![
            gt("d", Illumination::Day, vec![car(0.2), car(0.6)]),
            gt("n", Illumination::Night, vec![car(0.2), car(0.6)]),
        ];
        let dets = vec![det(car(0.2), 0.9), det(car(0.4), 0.5)];
        let mut out = DetectorOutputs::default();
        out.rgb.insert("d".into(), dets.clone());
        out.rgb.insert("n".into(), dets);
        out.ir.insert("d".into(), vec![]);
        out.ir.insert("n".into(), vec![]);
        let r = evaluate(&g, &out, &EvalOptions::default()).unwrap();
        let ap = |s| r.cell(DetectorKind::Rgb, s).unwrap().ap[0];
        assert!((ap(Split::Day) - ap(Split::All)).abs() < 1e-12);
        assert!((ap(Split::Night) - ap(Split::All)).abs() < 1e-12);
    }

    #[test]
    fn coverage_mismatch_is_an_error() {
        let g = vec![gt("a", Illumination::Day, vec![])];
        let mut out = DetectorOutputs::default();
        out.rgb.insert("a".into(), vec![]);
        out.ir.insert("b".into(), vec![]);
        assert!(matches!(evaluate(&g, &out, &EvalOptions::default()), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn render_all_ones() {
        let mut r = EvalReport::default();
        for d in [DetectorKind::Rgb, DetectorKind::Ir, DetectorKind::Fusion, DetectorKind::Oracle] {
            for s in Split::ALL {
                r.cells.push(ReportCell {
                    detector: d,
                    split: s,
                    ap: [1.0, 1.0],
                    map: 1.0,
                });
            }
        }
        r.ian_precision = Some(1.0);
        let t = render_report(&r);
        let data_lines: Vec<&str> = t.lines().skip(3).collect();
        assert_eq!(data_lines.len(), 3);
        for l in &data_lines {
            for field in l.split('|').skip(1) {
                let f = field.trim();
                assert!(f.is_empty() || f == "1.00", "unexpected cell `{f}` in {l}");
            }
        }
        assert!(t.contains("Oracle"));
        assert!(t.contains("Precision"));
    }

    #[test]
    fn render_table_one_layout() {
        // values of the first table's RGB columns
        let mut r = EvalReport::default();
        let cells = [
            (DetectorKind::Rgb, Split::Day, [0.86, 0.55]),
            (DetectorKind::Rgb, Split::Night, [0.80, 0.43]),
            (DetectorKind::Rgb, Split::All, [0.83, 0.49]),
            (DetectorKind::Ir, Split::Day, [0.84, 0.09]),
            (DetectorKind::Ir, Split::Night, [0.70, 0.01]),
            (DetectorKind::Ir, Split::All, [0.77, 0.05]),
            (DetectorKind::Fusion, Split::Day, [0.85, 0.45]),
            (DetectorKind::Fusion, Split::Night, [0.77, 0.34]),
            (DetectorKind::Fusion, Split::All, [0.81, 0.40]),
            (DetectorKind::Oracle, Split::All, [0.86, 0.54]),
        ];
        for (d, s, ap) in cells {
            r.cells.push(ReportCell {
                detector: d,
                split: s,
                ap,
                map: mean_ap(&ap).unwrap(),
            });
        }
        r.ian_precision = Some(0.75);
        let t = render_report(&r);
        let lines: Vec<&str> = t.lines().collect();
        let fields = |l: &str| -> Vec<String> { l.split('|').map(|f| f.trim().to_string()).collect() };
        assert_eq!(
            fields(lines[1]),
            [
                "Setting",
                "Day",
                "Night",
                "All",
                "Day",
                "Night",
                "All",
                "Day",
                "Night",
                "All",
                "Oracle",
                "Precision"
            ]
        );
        assert_eq!(fields(lines[3])[..4], ["Car", "0.86", "0.80", "0.83"]);
        assert_eq!(fields(lines[4])[11], "0.75");
        assert_eq!(fields(lines[5])[3], "0.66");
        assert_eq!(fields(lines[5])[10], "0.70");
    }
}
