//! CSV side files: fusion choices, IAN selection labels and loss histories.

use std::fs;
use std::path::Path;

use rgbir_core::fusion::FusionResult;
use rgbir_core::ian::{IlluminationWeights, SelectionLabel};
use rgbir_core::style::TranslatorLosses;
use rgbir_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{fs_err, IoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub id: String,
    pub chosen_modality: String,
    pub w_rgb: Option<f64>,
    pub w_ir: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    id: String,
    label: String,
    rgb_score: f64,
    ir_score: f64,
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TranslatorRow {
    epoch: usize,
    #[serde(rename = "loss_G")]
    loss_g: f64,
    #[serde(rename = "loss_F")]
    loss_f: f64,
    #[serde(rename = "loss_D_ir")]
    loss_d_ir: f64,
    #[serde(rename = "loss_D_rgb")]
    loss_d_rgb: f64,
    loss_cycle: f64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(fs_err(path))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

pub fn parse_modality(s: &str) -> Option<Modality> {
    match s.to_ascii_lowercase().as_str() {
        "rgb" => Some(Modality::Rgb),
        "ir" => Some(Modality::Ir),
        _ => None,
    }
}

fn modality_field(path: &Path, line: usize, s: &str) -> Result<Modality> {
    parse_modality(s).ok_or_else(|| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("unknown modality `{s}`"),
    })
}

pub fn fusion_rows(results: &[FusionResult]) -> Vec<FusionRow> {
    results
        .iter()
        .map(|r| FusionRow {
            id: r.id.clone(),
            chosen_modality: r.chosen.name().into(),
            w_rgb: r.weights.map(|w| w.w_rgb),
            w_ir: r.weights.map(|w| w.w_ir),
        })
        .collect()
}

/// `id,chosen_modality,w_rgb,w_ir`; weights are empty for oracle rows.
pub fn write_fusion_csv(path: &Path, results: &[FusionResult]) -> Result<()> {
    write_rows(path, fusion_rows(results))
}

/// Choices and weights per id. Detections live in the per-image files.
pub fn read_fusion_csv(path: &Path) -> Result<Vec<(String, Modality, Option<IlluminationWeights>)>> {
    read_rows::<FusionRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let m = modality_field(path, i + 2, &r.chosen_modality)?;
            let w = match (r.w_rgb, r.w_ir) {
                (Some(w_rgb), Some(w_ir)) => Some(IlluminationWeights { w_rgb, w_ir }),
                _ => None,
            };
            Ok((r.id, m, w))
        })
        .collect()
}

pub fn write_selection_labels(path: &Path, labels: &[SelectionLabel]) -> Result<()> {
    write_rows(
        path,
        labels.iter().map(|l| LabelRow {
            id: l.id.clone(),
            label: l.label.name().into(),
            rgb_score: l.rgb_score,
            ir_score: l.ir_score,
        }),
    )
}

pub fn read_selection_labels(path: &Path) -> Result<Vec<SelectionLabel>> {
    read_rows::<LabelRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(SelectionLabel {
                label: modality_field(path, i + 2, &r.label)?,
                id: r.id,
                rgb_score: r.rgb_score,
                ir_score: r.ir_score,
            })
        })
        .collect()
}

/// `epoch,loss` for single-loss models; epochs count from 1.
pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    write_rows(path, history.iter().enumerate().map(|(i, &loss)| LossRow { epoch: i + 1, loss }))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    Ok(read_rows::<LossRow>(path)?.into_iter().map(|r| r.loss).collect())
}

pub fn write_translator_csv(path: &Path, history: &[TranslatorLosses]) -> Result<()> {
    write_rows(
        path,
        history.iter().map(|h| TranslatorRow {
            epoch: h.epoch,
            loss_g: h.loss_g,
            loss_f: h.loss_f,
            loss_d_ir: h.loss_d_ir,
            loss_d_rgb: h.loss_d_rgb,
            loss_cycle: h.loss_cycle,
        }),
    )
}

pub fn read_translator_csv(path: &Path) -> Result<Vec<TranslatorLosses>> {
    Ok(read_rows::<TranslatorRow>(path)?
        .into_iter()
        .map(|r| TranslatorLosses {
            epoch: r.epoch,
            loss_g: r.loss_g,
            loss_f: r.loss_f,
            loss_d_ir: r.loss_d_ir,
            loss_d_rgb: r.loss_d_rgb,
            loss_cycle: r.loss_cycle,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fusion.csv");
        let results = vec![
            FusionResult {
                id: "a".into(),
                chosen: Modality::Ir,
                detections: vec![],
                weights: Some(IlluminationWeights { w_rgb: 0.25, w_ir: 0.75 }),
                oracle: false,
            },
            FusionResult {
                id: "b".into(),
                chosen: Modality::Rgb,
                detections: vec![],
                weights: None,
                oracle: true,
            },
        ];
        write_fusion_csv(&path, &results).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,chosen_modality,w_rgb,w_ir\na,ir,0.25,0.75\nb,rgb,,\n");
        let back = read_fusion_csv(&path).unwrap();
        assert_eq!(back[0], ("a".into(), Modality::Ir, results[0].weights));
        assert_eq!(back[1], ("b".into(), Modality::Rgb, None));
    }

    #[test]
    fn label_and_loss_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![SelectionLabel {
            id: "x".into(),
            label: Modality::Ir,
            rgb_score: 0.0,
            ir_score: 1.0,
        }];
        let p = dir.path().join("labels.csv");
        write_selection_labels(&p, &labels).unwrap();
        assert_eq!(read_selection_labels(&p).unwrap(), labels);
        let l = dir.path().join("loss.csv");
        write_loss_csv(&l, &[1.5, 0.25]).unwrap();
        assert_eq!(read_loss_csv(&l).unwrap(), vec![1.5, 0.25]);
        let t = dir.path().join("translator.csv");
        let h = vec![TranslatorLosses {
            epoch: 1,
            loss_g: 0.5,
            loss_f: 0.25,
            loss_d_ir: 0.125,
            loss_d_rgb: 1.0,
            loss_cycle: 2.0,
        }];
        write_translator_csv(&t, &h).unwrap();
        assert!(std::fs::read_to_string(&t)
            .unwrap()
            .starts_with("epoch,loss_G,loss_F,loss_D_ir,loss_D_rgb,loss_cycle\n"));
        assert_eq!(read_translator_csv(&t).unwrap(), h);
    }
}
