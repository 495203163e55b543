//! Wall-clock latency of the full fusion path.

use std::time::Instant;

use rgbir_core::dataset::ImagePair;
use rgbir_core::eval::LatencyStats;
use rgbir_core::fusion::{fuse, Detect, WeightPredictor};
use rgbir_core::Error;

/// `"<arch>-<os>, <cpu model>, <n> logical cores"`.
pub fn hardware_descriptor() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{}-{}, {model}, {cores} logical cores",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Times one `fuse` call per pair after `warmup` untimed calls.
pub fn benchmark_latency(
    rgb_model: &impl Detect,
    ir_model: &impl Detect,
    selector: &impl WeightPredictor,
    pairs: &[ImagePair],
    warmup: usize,
) -> rgbir_core::Result<LatencyStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("benchmark pair list"));
    }
    for p in pairs.iter().cycle().take(warmup) {
        fuse(p, rgb_model, ir_model, selector)?;
    }
    let mut samples = Vec::with_capacity(pairs.len());
    for p in pairs {
        let start = Instant::now();
        let r = fuse(p, rgb_model, ir_model, selector)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(r);
    }
    LatencyStats::from_samples(&samples, hardware_descriptor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgbir_core::dataset::{Illumination, Source};
    use rgbir_core::ian::IlluminationWeights;
    use rgbir_core::{Detection, Image};

    struct Sleepy;

    impl Detect for Sleepy {
        fn detect(&self, _: &Image) -> rgbir_core::Result<Vec<Detection>> {
            std::thread::sleep(std::time::Duration::from_micros(200));
            Ok(vec![])
        }
    }

    impl WeightPredictor for Sleepy {
        fn predict_weights(&self, _: &ImagePair) -> rgbir_core::Result<IlluminationWeights> {
            Ok(IlluminationWeights { w_rgb: 0.5, w_ir: 0.5 })
        }
    }

    #[test]
    fn single_pair_without_warmup() {
        let pair = ImagePair {
            id: "a".into(),
            rgb: Image::new(4, 4, 3),
            ir: Image::new(4, 4, 1),
            illumination: Illumination::Day,
            source: Source::Simulated,
            labels: vec![],
        };
        let s = benchmark_latency(&Sleepy, &Sleepy, &Sleepy, &[pair], 0).unwrap();
        assert_eq!(s.samples, 1);
        assert!(s.mean_ms >= 0.4 && s.median_ms == s.mean_ms && s.p95_ms == s.mean_ms);
        assert!(s.hardware.contains("logical cores"));
        assert!(benchmark_latency(&Sleepy, &Sleepy, &Sleepy, &[], 0).is_err());
    }
}
