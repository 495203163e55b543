//! JSON checkpoint container: named weight arrays plus a config echo, the
//! class vocabulary and the training history.

use std::path::Path;

use rgbir_core::detector::{DetectorConfig, DetectorModel};
use rgbir_core::ian::{build_ian, IanConfig, IanModel};
use rgbir_core::nn::{NamedTensor, Sequential};
use rgbir_core::style::{TranslatorConfig, TranslatorLosses, TranslatorPair};
use rgbir_core::{ClassId, Modality};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};
use crate::io::{read_json, write_json};

pub const FORMAT: &str = "rgbir-checkpoint/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Detector,
    Ian,
    Translator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    pub class_names: Vec<String>,
    pub config: serde_json::Value,
    pub history: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TranslatorHistory {
    initial: Option<TranslatorLosses>,
    epochs: Vec<TranslatorLosses>,
}

const TRANSLATOR_NETS: [&str; 4] = ["g", "f", "d_ir", "d_rgb"];

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

fn from_value<T: DeserializeOwned>(path: &Path, v: &serde_json::Value, what: &str) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| invalid(path, format!("bad {what}: {e}")))
}

fn new_checkpoint(kind: ModelKind, config: serde_json::Value, history: serde_json::Value, tensors: Vec<NamedTensor>) -> Checkpoint {
    Checkpoint {
        format: FORMAT.into(),
        kind,
        modality: None,
        class_names: ClassId::ALL.iter().map(|c| c.name().to_string()).collect(),
        config,
        history,
        tensors,
    }
}

/// Reads a checkpoint and checks its format tag, kind and class vocabulary.
pub fn read_checkpoint(path: &Path, kind: ModelKind) -> Result<Checkpoint> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.format != FORMAT {
        return Err(invalid(path, format!("unsupported format `{}`", ckpt.format)));
    }
    if ckpt.kind != kind {
        return Err(invalid(path, format!("holds a {:?} model, expected {kind:?}", ckpt.kind)));
    }
    let names: Vec<&str> = ClassId::ALL.iter().map(|c| c.name()).collect();
    if ckpt.class_names != names {
        return Err(invalid(path, format!("class names {:?} do not match {names:?}", ckpt.class_names)));
    }
    Ok(ckpt)
}

fn import(path: &Path, net: &mut Sequential<f32>, tensors: &[NamedTensor]) -> Result<()> {
    net.import(tensors).map_err(|e| invalid(path, e.to_string()))
}

pub fn save_detector(path: &Path, model: &DetectorModel) -> Result<()> {
    let mut ckpt = new_checkpoint(
        ModelKind::Detector,
        to_value(&model.config),
        to_value(&model.history),
        model.net().export(),
    );
    ckpt.modality = Some(model.modality);
    write_json(path, &ckpt)
}

pub fn load_detector(path: &Path) -> Result<DetectorModel> {
    let ckpt = read_checkpoint(path, ModelKind::Detector)?;
    let config: DetectorConfig = from_value(path, &ckpt.config, "detector config")?;
    let modality = ckpt.modality.ok_or_else(|| invalid(path, "detector checkpoint has no modality"))?;
    let mut model = DetectorModel::new(&config, modality)?;
    import(path, model.net_mut(), &ckpt.tensors)?;
    model.history = from_value(path, &ckpt.history, "history")?;
    Ok(model)
}

pub fn save_ian(path: &Path, model: &IanModel) -> Result<()> {
    let ckpt = new_checkpoint(
        ModelKind::Ian,
        to_value(&model.config),
        to_value(&model.history),
        model.net().export(),
    );
    write_json(path, &ckpt)
}

pub fn load_ian(path: &Path) -> Result<IanModel> {
    let ckpt = read_checkpoint(path, ModelKind::Ian)?;
    let config: IanConfig = from_value(path, &ckpt.config, "IAN config")?;
    let mut model: IanModel = build_ian(&config)?;
    import(path, model.net_mut(), &ckpt.tensors)?;
    model.history = from_value(path, &ckpt.history, "history")?;
    Ok(model)
}

fn translator_nets(t: &TranslatorPair) -> [&Sequential<f32>; 4] {
    [&t.g, &t.f, &t.d_ir, &t.d_rgb]
}

pub fn save_translator(path: &Path, model: &TranslatorPair) -> Result<()> {
    let mut tensors = Vec::new();
    for (prefix, net) in TRANSLATOR_NETS.iter().zip(translator_nets(model)) {
        tensors.extend(net.export().into_iter().map(|t| NamedTensor {
            name: format!("{prefix}/{}", t.name),
            ..t
        }));
    }
    let history = TranslatorHistory {
        initial: model.initial,
        epochs: model.history.clone(),
    };
    let ckpt = new_checkpoint(ModelKind::Translator, to_value(&model.config), to_value(&history), tensors);
    write_json(path, &ckpt)
}

pub fn load_translator(path: &Path) -> Result<TranslatorPair> {
    let ckpt = read_checkpoint(path, ModelKind::Translator)?;
    let config: TranslatorConfig = from_value(path, &ckpt.config, "translator config")?;
    let mut model = TranslatorPair::new(&config)?;
    let mut groups: [Vec<NamedTensor>; 4] = Default::default();
    for t in ckpt.tensors {
        let (prefix, name) = t
            .name
            .split_once('/')
            .ok_or_else(|| invalid(path, format!("tensor `{}` has no network prefix", t.name)))?;
        let k = TRANSLATOR_NETS
            .iter()
            .position(|p| *p == prefix)
            .ok_or_else(|| invalid(path, format!("unknown network `{prefix}`")))?;
        groups[k].push(NamedTensor {
            name: name.to_string(),
            shape: t.shape,
            data: t.data,
        });
    }
    for (net, tensors) in [&mut model.g, &mut model.f, &mut model.d_ir, &mut model.d_rgb]
        .into_iter()
        .zip(&groups)
    {
        import(path, net, tensors)?;
    }
    let history: TranslatorHistory = from_value(path, &ckpt.history, "history")?;
    model.initial = history.initial;
    model.history = history.epochs;
    Ok(model)
}
