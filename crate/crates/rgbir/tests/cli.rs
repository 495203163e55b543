use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgbir::commands::read_report;
use rgbir::io::{load_dataset, read_manifest, write_dataset};
use rgbir::records::{read_loss_csv, read_translator_csv};
use rgbir_core::dataset::{Illumination, Source};
use rgbir_core::eval::{DetectorKind, Split};

const TINY: &str = r#"
[sim.camera]
width = 160
height = 128
altitude = 12.0
focal = 140.0

[translator]
size = 32
ngf = 4
ndf = 4
residual_blocks = 1
epochs = 1

[rgb_detector]
input_size = 64
downsamples = 3
width = 4
epochs = 1

[ir_detector]
input_size = 64
downsamples = 3
width = 4
epochs = 1

[ian]
input_size = 32
epochs = 1
"#;

fn rgbir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgbir"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rgbir(args);
    assert!(
        out.status.success(),
        "rgbir {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        Workspace { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simgen(&self, name: &str, scenes: usize) -> PathBuf {
        let out = self.path(name);
        ok(&[
            "--config",
            s(&self.config),
            "--out",
            s(&out),
            "simgen",
            "--scenes",
            &scenes.to_string(),
        ]);
        out
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simgen_is_deterministic_and_balanced() {
    let ws = Workspace::new();
    let a = ws.simgen("a", 10);
    let b = ws.simgen("b", 10);
    assert_eq!(tree(&a), tree(&b));
    let m = read_manifest(&a).unwrap();
    assert_eq!(m.entries.len(), 10);
    let day = m.entries.iter().filter(|e| e.illumination == Illumination::Day).count();
    assert_eq!(day, 5);
    assert!(m.entries.iter().all(|e| e.source == Source::Simulated));

    let c = ws.path("c");
    ok(&["--config", s(&ws.config), "--seed", "5", "--out", s(&c), "simgen", "--scenes", "10"]);
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let ws = Workspace::new();
    assert_eq!(rgbir(&["simgen", "--scenes", "x"]).status.code(), Some(1));
    assert_eq!(rgbir(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rgbir(&["--help"]).status.code(), Some(0));

    let bad = ws.path("bad.toml");
    fs::write(&bad, "[ian]\nlr = 0.1\n").unwrap();
    let out = rgbir(&["--config", s(&bad), "--out", s(&ws.path("x")), "simgen", "--scenes", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `lr`"));

    let data = ws.simgen("data", 2);
    let out = rgbir(&["--config", s(&ws.config), "--out", s(&data), "simgen", "--scenes", "2"]);
    assert_eq!(out.status.code(), Some(1), "non-empty output directory is a usage error");

    fs::write(data.join("labels/sim_000000.txt"), "0 0.5 0.5 nope 0.1\n").unwrap();
    let out = rgbir(&[
        "--config",
        s(&ws.config),
        "train",
        "rgb-detector",
        "--data",
        s(&data),
        "--checkpoints",
        s(&ws.path("ck")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim_000000.txt:1:"));
}

#[test]
fn stylize_keeps_labels_and_marks_source() {
    let ws = Workspace::new();
    let empty = ws.path("empty");
    write_dataset(&[], &empty, 0).unwrap();
    let empty_out = ws.path("empty_out");
    ok(&[
        "--config",
        s(&ws.config),
        "--out",
        s(&empty_out),
        "stylize",
        "--data",
        s(&empty),
        "--ir-style",
        s(&empty),
    ]);
    assert!(load_dataset(&empty_out).unwrap().is_empty());

    let data = ws.simgen("data", 10);
    let out = ws.path("stylized");
    ok(&[
        "--config",
        s(&ws.config),
        "--out",
        s(&out),
        "stylize",
        "--data",
        s(&data),
        "--ir-style",
        s(&data),
    ]);
    let pairs = load_dataset(&out).unwrap();
    assert_eq!(pairs.len(), 10);
    assert!(pairs.iter().all(|p| p.source == Source::Stylized));
    for e in read_manifest(&data).unwrap().entries {
        let a = fs::read(data.join(e.labels_path())).unwrap();
        let b = fs::read(out.join(e.labels_path())).unwrap();
        assert_eq!(a, b, "labels of {} changed", e.id);
    }

    let out = rgbir(&[
        "--config",
        s(&ws.config),
        "--out",
        s(&ws.path("none")),
        "stylize",
        "--data",
        s(&data),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_overlay_bench_end_to_end() {
    let ws = Workspace::new();
    let data = ws.simgen("data", 12);
    let ck = ws.path("checkpoints");
    let cfg = s(&ws.config);

    let out = rgbir(&["--config", cfg, "train", "ian", "--data", s(&data), "--checkpoints", s(&ck)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rgb-detector.json") && err.contains("ir-detector.json"), "{err}");

    for c in ["rgb-detector", "ir-detector", "ian", "translator"] {
        ok(&[
            "--config",
            cfg,
            "train",
            c,
            "--data",
            s(&data),
            "--subset",
            "train",
            "--checkpoints",
            s(&ck),
        ]);
        assert!(ck.join(format!("{c}.json")).is_file());
    }
    assert_eq!(read_loss_csv(&ck.join("rgb-detector.loss.csv")).unwrap().len(), 1);
    assert_eq!(read_loss_csv(&ck.join("ian.loss.csv")).unwrap().len(), 1);
    assert_eq!(read_translator_csv(&ck.join("translator.loss.csv")).unwrap().len(), 1);
    assert!(ck.join("ian.labels.csv").is_file());

    let resumed = ws.path("resumed.json");
    ok(&[
        "--config",
        cfg,
        "--out",
        s(&resumed),
        "train",
        "rgb-detector",
        "--data",
        s(&data),
        "--subset",
        "train",
        "--checkpoints",
        s(&ck),
        "--resume",
        s(&ck.join("rgb-detector.json")),
    ]);
    let first = read_loss_csv(&ck.join("rgb-detector.loss.csv")).unwrap();
    let both = read_loss_csv(&ws.path("resumed.loss.csv")).unwrap();
    assert_eq!(both.len(), 2);
    assert_eq!(both[0], first[0]);

    let report_dir = ws.path("report");
    let text = ok(&[
        "--config",
        cfg,
        "--out",
        s(&report_dir),
        "eval",
        "--data",
        s(&data),
        "--subset",
        "test",
        "--checkpoints",
        s(&ck),
    ]);
    assert!(text.contains("Oracle"));
    let report = read_report(&report_dir.join("report.json")).unwrap();
    for k in [DetectorKind::Rgb, DetectorKind::Ir, DetectorKind::Fusion, DetectorKind::Oracle] {
        assert!(report.has_detector(k), "{k:?} missing");
    }
    assert!(report_dir.join("fusion.csv").is_file() && report_dir.join("oracle.csv").is_file());

    let day_dir = ws.path("day");
    ok(&[
        "--config",
        cfg,
        "--out",
        s(&day_dir),
        "eval",
        "--data",
        s(&data),
        "--checkpoints",
        s(&ck),
        "--splits",
        "day",
        "--oracle-off",
    ]);
    let day = read_report(&day_dir.join("report.json")).unwrap();
    assert_eq!(day.splits(), vec![Split::Day]);
    assert!(!day.has_detector(DetectorKind::Oracle));
    assert!(!day_dir.join("oracle.csv").exists());

    let overlays = ws.path("overlays");
    ok(&[
        "--out",
        s(&overlays),
        "overlay",
        "--data",
        s(&data),
        "--detections",
        s(&report_dir.join("detections")),
    ]);
    for m in ["rgb", "ir"] {
        let evaluated = fs::read_dir(report_dir.join("detections").join(m)).unwrap().count();
        assert!(evaluated > 0 && evaluated < 12);
        assert_eq!(fs::read_dir(overlays.join(m)).unwrap().count(), evaluated);
    }

    let bench = ws.path("bench");
    let text = ok(&[
        "--config",
        cfg,
        "--out",
        s(&bench),
        "bench",
        "--data",
        s(&data),
        "--checkpoints",
        s(&ck),
        "--pairs",
        "4",
    ]);
    assert!(text.contains("median") && text.contains("hardware:"));
    assert!(bench.join("latency.json").is_file());
}

#[test]
fn overlay_draws_red_on_rgb_and_white_on_ir() {
    use rgbir::io::{format_detections, read_png, write_text};
    use rgbir_core::dataset::ImagePair;
    use rgbir_core::{BoundingBox, ClassId, Detection, Image, Modality};

    let ws = Workspace::new();
    let data = ws.path("data");
    let pair = ImagePair {
        id: "p".into(),
        rgb: Image::filled(100, 50, 3, 40),
        ir: Image::filled(100, 50, 1, 40),
        illumination: Illumination::Night,
        source: Source::Real,
        labels: vec![],
    };
    write_dataset(&[pair], &data, 0).unwrap();
    let b = BoundingBox::new(ClassId::Car, 0.5, 0.5, 0.2, 0.2).unwrap();
    let dets = ws.path("dets");
    write_text(
        &dets.join("rgb/p.txt"),
        &format_detections(&[Detection::new(b, 0.9, Modality::Rgb)]),
    )
    .unwrap();
    write_text(&dets.join("ir/p.txt"), &format_detections(&[Detection::new(b, 0.8, Modality::Ir)])).unwrap();
    let out = ws.path("overlays");
    ok(&["--out", s(&out), "overlay", "--data", s(&data), "--detections", s(&dets)]);

    // box spans x 40..=59, y 20..=29
    let rgb = read_png(&out.join("rgb/p.png")).unwrap();
    let ir = read_png(&out.join("ir/p.png")).unwrap();
    assert_eq!([rgb.get(40, 25, 0), rgb.get(40, 25, 1), rgb.get(40, 25, 2)], [255, 0, 0]);
    assert_eq!(rgb.get(50, 25, 0), 40);
    assert_eq!(ir.get(59, 20, 0), 255);
    assert_eq!(ir.get(50, 25, 0), 40);
    assert_eq!(ir.get(61, 25, 0), 40);
}
