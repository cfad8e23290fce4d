use std::path::Path;

use genbench::bench::{
    self, append_results_csv, confusion, execute, export_grid, layout, read_report_json, render_grid, run_benchmark,
    write_report_json, BenchConfig, BenchModel, DatasetSpec, RecognizerSettings, Seeds, RESULTS_HEADER,
};
use genbench::models::ModelKind;
use genbench::Tensor;

fn proxy_config(model: BenchModel, out: &Path) -> BenchConfig {
    BenchConfig {
        dataset: DatasetSpec::Proxy {
            classes: 4,
            train_per_class: 24,
            test_per_class: 6,
            glyph_seed: 3,
        },
        model,
        hyper: Default::default(),
        iterations: 6,
        batch_size: 16,
        lr: 0.001,
        seeds: Seeds { data: 1, model: 2, eval: 3 },
        per_class: None,
        train_subset: None,
        recognizer: RecognizerSettings {
            epochs: 1,
            seed: 4,
            checkpoint: None,
        },
        output_dir: out.to_path_buf(),
    }
}

#[test]
fn identity_stub_scores_generated_as_original() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&proxy_config(BenchModel::Identity, dir.path())).unwrap();
    assert_eq!(run.report.gen_acc, run.report.orig_acc);
    assert_eq!(run.report.generated, 24);
    let total: usize = run.report.confusion.iter().flatten().sum();
    assert_eq!(total, 24);
    let diag: usize = (0..4).map(|c| run.report.confusion[c][c]).sum();
    assert_eq!(diag as f64 / 24.0, run.report.gen_acc);
}

#[test]
fn benchmark_is_deterministic_given_seeds() {
    for kind in [ModelKind::Cgan, ModelKind::Cae] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut ca = proxy_config(BenchModel::Kind(kind), a.path());
        let mut cb = proxy_config(BenchModel::Kind(kind), b.path());
        // output location is not part of the result
        ca.output_dir = "same".into();
        cb.output_dir = "same".into();
        let ra = execute(&ca).unwrap();
        let rb = execute(&cb).unwrap();
        assert_eq!(ra.report.without_timing(), rb.report.without_timing(), "{kind}");
        assert_eq!(ra.generated.data(), rb.generated.data());
    }
}

#[test]
fn conditional_generation_follows_test_class_counts_or_override() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&proxy_config(BenchModel::Kind(ModelKind::Cgan), dir.path())).unwrap();
    assert_eq!(run.labels.len(), 24);
    let mut cfg = proxy_config(BenchModel::Kind(ModelKind::Cvae), dir.path());
    cfg.per_class = Some(3);
    let run = execute(&cfg).unwrap();
    assert_eq!(run.labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    assert_eq!(run.generated.shape(), &[12, 1, 32, 32]);
}

#[test]
fn unconditional_kinds_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Gan, ModelKind::Dcgan, ModelKind::Wgan, ModelKind::Vae, ModelKind::Aae] {
        let err = execute(&proxy_config(BenchModel::Kind(kind), dir.path())).err().unwrap();
        assert!(err.is_config(), "{kind}: {err}");
        assert!(err.to_string().contains("generate"), "{err}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = proxy_config(BenchModel::Identity, dir.path());
    let mut c = base.clone();
    c.iterations = 0;
    assert!(c.validate().unwrap_err().to_string().contains("iterations"));
    let mut c = base.clone();
    c.dataset = DatasetSpec::Mnist {
        dir: dir.path().join("absent"),
    };
    let e = c.validate().unwrap_err();
    assert!(e.is_config() && e.to_string().contains("dataset.dir"), "{e}");
    let mut c = base.clone();
    c.lr = -1.0;
    assert!(c.validate().is_err());
    let mut c = base;
    c.hyper.rho = 2.0;
    assert!(c.validate().is_err());
}

#[test]
fn config_json_round_trips_and_rejects_unknown_fields() {
    let text = r#"{
        "dataset": {"kind": "proxy", "classes": 40},
        "model": "spae",
        "iterations": 100,
        "output_dir": "out"
    }"#;
    let cfg = BenchConfig::from_json(text).unwrap();
    assert_eq!(cfg.model, BenchModel::Kind(ModelKind::Spae));
    assert_eq!(cfg.batch_size, 128);
    assert_eq!(cfg.recognizer.epochs, 3);
    match &cfg.dataset {
        DatasetSpec::Proxy {
            train_per_class,
            test_per_class,
            ..
        } => assert_eq!((*train_per_class, *test_per_class), (250, 20)),
        other => panic!("{other:?}"),
    }
    let back = BenchConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    assert_eq!(cfg.hash().unwrap().len(), 64);

    let mut other = cfg.clone();
    other.iterations = 101;
    assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());

    assert!(BenchConfig::from_json(&text.replace("\"iterations\"", "\"iters\": 1, \"iterations\"")).is_err());
    assert!(BenchConfig::from_json(&text.replace("\"classes\": 40", "\"classes\": 40, \"colour\": 1")).is_err());
    assert!(BenchConfig::from_json(&text.replace("spae", "vqvae")).is_err());
    let id = BenchConfig::from_json(&text.replace("spae", "identity")).unwrap();
    assert_eq!(id.model, BenchModel::Identity);
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = proxy_config(BenchModel::Kind(ModelKind::Cae), &out);
    let report = run_benchmark(&cfg).unwrap();
    for f in ["config.json", "recognizer.ckpt", "model.ckpt", "report.json", "results.csv", "losses.csv", "samples.png"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(read_report_json(&out.join("report.json")).unwrap(), report);
    let snapshot = BenchConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(snapshot, cfg);
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert!(losses.starts_with("step,"));
    assert_eq!(losses.lines().count(), 1 + cfg.iterations);
    // 4 classes x 10 columns of 32x32 cells
    let png = image::open(out.join("samples.png")).unwrap().to_luma8();
    assert_eq!(png.dimensions(), (10 * 32 + 9 * 2, 4 * 32 + 3 * 2));
}

#[test]
fn recognizer_checkpoint_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("rec.ckpt");
    let mut cfg = proxy_config(BenchModel::Identity, dir.path());
    cfg.recognizer.checkpoint = Some(ck.clone());
    let first = execute(&cfg).unwrap();
    assert!(first.recognizer_report.is_some() && ck.is_file());
    let second = execute(&cfg).unwrap();
    assert!(second.recognizer_report.is_none());
    assert_eq!(first.report.orig_acc, second.report.orig_acc);

    // a checkpoint for a different class count is refused
    let mut wrong = cfg.clone();
    wrong.dataset = DatasetSpec::Proxy {
        classes: 5,
        train_per_class: 24,
        test_per_class: 6,
        glyph_seed: 3,
    };
    assert!(execute(&wrong).err().unwrap().is_config());
}

#[test]
fn results_csv_has_one_header_across_appends() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&proxy_config(BenchModel::Identity, dir.path())).unwrap();
    let path = dir.path().join("nested/results.csv");
    append_results_csv(&path, &run.report).unwrap();
    append_results_csv(&path, &run.report).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines.iter().filter(|l| **l == RESULTS_HEADER).count(), 1);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "identity");
    assert_eq!(cells[1], "proxy4");
    assert_eq!(cells[2], format!("{:.2}", run.report.gen_acc * 100.0));
    assert_eq!(cells[5], "2");
}

#[test]
fn report_json_round_trips_with_sorted_keys() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&proxy_config(BenchModel::Identity, dir.path())).unwrap();
    let path = dir.path().join("r.json");
    write_report_json(&run.report, &path).unwrap();
    assert_eq!(read_report_json(&path).unwrap(), run.report);
    let text = std::fs::read_to_string(&path).unwrap();
    let keys: Vec<usize> = ["config_hash", "confusion", "dataset", "final_losses", "gen_acc"]
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap())
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn grid_dimensions_and_png_round_trip() {
    let one = Tensor::full(vec![1, 1, 28, 28], 1.0f32);
    assert_eq!(render_grid(&one, 1, 1).unwrap().dimensions(), (28, 28));
    let data: Vec<f32> = (0..4 * 28 * 28).map(|i| (i % 256) as f32 / 255.0).collect();
    let four = Tensor::new(vec![4, 1, 28, 28], data.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep/grid.png");
    export_grid(&four, 2, 2, &path).unwrap();
    let img = image::open(&path).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (58, 58));
    assert_eq!(img, render_grid(&four, 2, 2).unwrap());
    // cell (1,1) starts after one cell and one separator in each direction
    for (y, x) in [(0usize, 0usize), (5, 17), (27, 27)] {
        let want = (data[3 * 784 + y * 28 + x] * 255.0).round() as u8;
        assert_eq!(img.get_pixel(30 + x as u32, 30 + y as u32).0[0], want);
    }
    assert_eq!(img.get_pixel(28, 0).0[0], bench::grid::SEPARATOR_LEVEL);
    assert!(render_grid(&four, 1, 3).is_err());
    assert_eq!(layout(1), (1, 1));
    assert_eq!(layout(4), (2, 2));
    assert_eq!(layout(10), (3, 4));
}

#[test]
fn grid_export_surfaces_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let img = Tensor::full(vec![1, 1, 4, 4], 0.5f32);
    assert!(export_grid(&img, 1, 1, &blocker.join("g.png")).is_err());
}

#[test]
fn confusion_counts_pairs() {
    let m = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], 3);
    assert_eq!(m, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
}
