//! Paired samples and dataset construction (splitting, mixing).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{math, rng, BoundingBox, Error, Image, Modality, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Day,
    Night,
}

impl Illumination {
    pub fn name(self) -> &'static str {
        match self {
            Illumination::Day => "day",
            Illumination::Night => "night",
        }
    }
}

impl fmt::Display for Illumination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Simulated,
    Stylized,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Simulated => "simulated",
            Source::Stylized => "stylized",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Co-registered RGB and IR frames sharing one label set.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub rgb: Image,
    pub ir: Image,
    pub illumination: Illumination,
    pub source: Source,
    pub labels: Vec<BoundingBox>,
}

impl ImagePair {
    /// Checks channel counts and that both frames share one size.
    pub fn validate(&self) -> Result<()> {
        if self.rgb.channels() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                got: self.rgb.channels(),
            });
        }
        if self.ir.channels() != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                got: self.ir.channels(),
            });
        }
        if self.rgb.size() != self.ir.size() {
            return Err(Error::SizeMismatch {
                id: self.id.clone(),
                detail: format!(
                    "rgb is {}x{}, ir is {}x{}",
                    self.rgb.width(),
                    self.rgb.height(),
                    self.ir.width(),
                    self.ir.height()
                ),
            });
        }
        if let Some(b) = self.labels.iter().find(|b| !b.is_valid()) {
            return Err(Error::InvalidBox(format!("{b:?} in `{}`", self.id)));
        }
        Ok(())
    }

    pub fn image(&self, modality: Modality) -> &Image {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Ir => &self.ir,
        }
    }
}

/// Rejects duplicate ids.
pub fn check_unique_ids(pairs: &[ImagePair]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::IdMismatch(format!("duplicate id `{}`", p.id)));
        }
    }
    Ok(())
}

/// Stratified, seeded train/test split.
///
/// Each illumination stratum is shuffled and cut independently, giving
/// `round(train_fraction * n)` training items clamped to `1..=n-1`. Input
/// order is kept inside both outputs.
pub fn split_dataset(pairs: Vec<ImagePair>, train_fraction: f64, seed: u64) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut in_train = alloc::vec![false; pairs.len()];
    for (stream, ill) in [Illumination::Day, Illumination::Night].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].illumination == ill).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 {ill} pairs to split, have {n}")));
        }
        let n_train = (math::round(train_fraction * n as f64) as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng::stream(seed, stream as u64));
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, t) in pairs.into_iter().zip(in_train) {
        if t {
            train.push(p);
        } else {
            test.push(p);
        }
    }
    Ok((train, test))
}

/// Replaces `round(replace_fraction * len(real))` randomly chosen real items
/// with simulated items drawn without replacement. Output length always
/// equals `real.len()`.
pub fn mix_datasets<T: Clone>(real: &[T], sim: &[T], replace_fraction: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&replace_fraction) {
        return Err(Error::InvalidArgument(format!(
            "replace fraction must lie in [0, 1], got {replace_fraction}"
        )));
    }
    let k = math::round(replace_fraction * real.len() as f64) as usize;
    if sim.len() < k {
        return Err(Error::InsufficientPool {
            needed: k,
            available: sim.len(),
        });
    }
    let mut r = rng::seeded(seed);
    let mut slots: Vec<usize> = (0..real.len()).collect();
    slots.shuffle(&mut r);
    let mut pool: Vec<usize> = (0..sim.len()).collect();
    pool.shuffle(&mut r);
    let mut out = real.to_vec();
    for (&slot, &s) in slots[..k].iter().zip(&pool) {
        out[slot] = sim[s].clone();
    }
    Ok(out)
}
