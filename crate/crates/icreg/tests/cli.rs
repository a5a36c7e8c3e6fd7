use std::path::Path;
use std::process::Command;

use icreg::commands::{apply_warp, evaluate_pairs, load_model, read_warp, register, save_registration, write_warp, WARPED_FILE, WARP_FILE};
use icreg::grid::{run_affine_grid, ExperimentGridSpec, SUMMARY_FILE, SUMMARY_HEADER};
use icreg::pnm;
use icreg::raster::{line_plot, violin_plot, Canvas, BLACK, WHITE};
use icreg::zoo::{run_zoo, ZooOptions, ZOO_RESULTS_FILE, ZOO_RESULTS_HEADER};
use icreg_core::autodiff::{ParamStore, Tensor};
use icreg_core::data::gen_tri_circ;
use icreg_core::lie::identity_grid;
use icreg_core::losses::{read_metrics_csv, METRICS_HEADER};
use icreg_core::nets::{zoo_descriptor, ModelDescriptor, RegistrationModel};
use icreg_core::train::{train, Adam, DataSource, Objective, TrainConfig, FINAL_CHECKPOINT, MODEL_FILE};

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icreg"))
}

/// Saves an untrained model so the CLI can load it.
fn save_untrained(dir: &Path, desc: ModelDescriptor) -> std::path::PathBuf {
    let model = RegistrationModel::new(desc.clone()).unwrap();
    desc.save(&dir.join(MODEL_FILE)).unwrap();
    let ckpt = dir.join(FINAL_CHECKPOINT);
    model.init_params().unwrap().save(&ckpt).unwrap();
    ckpt
}

fn briefly_trained(dir: &Path, name: &str) -> std::path::PathBuf {
    let data = DataSource::TriCirc { count: 20, size: 32, seed: 1 };
    let mut cfg = TrainConfig::new(zoo_descriptor(name, 0).unwrap(), data, 8, 0);
    cfg.batch_size = 2;
    cfg.lr = 1e-2;
    train(&cfg, &cfg.data.load().unwrap(), Some(dir)).unwrap();
    dir.join(FINAL_CHECKPOINT)
}

#[test]
fn pgm_files_are_binary_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::from_fn(&[3, 5], |k| k as f64 / 14.0);
    let path = dir.path().join("a.pgm");
    pnm::save_image(&path, &img).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.len() - 15]);
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields, ["P5", "5", "3", "255"]);
    assert_eq!(bytes.len() - 15, text.len());
    assert_eq!(bytes[bytes.len() - 1], 255);
    let back = pnm::load_image(&path).unwrap();
    assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    assert!(pnm::load_image(&dir.path().join("missing.pgm")).unwrap_err().to_string().contains("missing.pgm"));
}

#[test]
fn warp_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let field = Tensor::from_fn(&[4, 6, 2], |k| (k as f64).sin());
    let path = dir.path().join(WARP_FILE);
    write_warp(&path, &field).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..8], b"ICWARP01");
    assert_eq!(read_warp(&path).unwrap(), field);
}

#[test]
fn register_with_identity_model_writes_identity_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_untrained(dir.path(), zoo_descriptor("tsc", 0).unwrap());
    let ds = gen_tri_circ(2, 32, 3).unwrap();
    let (a, b) = (&ds.images[0].pixels, &ds.images[1].pixels);
    pnm::save_image(&dir.path().join("a.pgm"), a).unwrap();
    pnm::save_image(&dir.path().join("b.pgm"), b).unwrap();
    let out = dir.path().join("reg");
    let status = bin()
        .args(["register", "--model"])
        .arg(&ckpt)
        .arg("--moving")
        .arg(dir.path().join("a.pgm"))
        .arg("--fixed")
        .arg(dir.path().join("b.pgm"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let field = read_warp(&out.join(WARP_FILE)).unwrap();
    assert_eq!(field, identity_grid(32, 32));
    assert_eq!(
        std::fs::read(out.join(WARPED_FILE)).unwrap(),
        std::fs::read(dir.path().join("a.pgm")).unwrap()
    );
}

/// Independent bilinear lookup at normalized coordinates with edge clamping.
fn bilinear(img: &Tensor, x: f64, y: f64) -> f64 {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let px = (x * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let py = (y * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = ((px.floor() as usize).min(w - 1), (py.floor() as usize).min(h - 1));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (px - x0 as f64, py - y0 as f64);
    let d = img.data();
    (1.0 - fx) * (1.0 - fy) * d[y0 * w + x0] + fx * (1.0 - fy) * d[y0 * w + x1] + (1.0 - fx) * fy * d[y1 * w + x0] + fx * fy * d[y1 * w + x1]
}

#[test]
fn registration_output_reproduces_from_warp_file() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = briefly_trained(dir.path(), "svf");
    let (model, params) = load_model(&ckpt, None).unwrap();
    let ds = gen_tri_circ(4, 32, 9).unwrap();
    let a = pnm::from_gray(&pnm::to_gray(&ds.images[2].pixels).unwrap()).unwrap();
    let b = pnm::from_gray(&pnm::to_gray(&ds.images[3].pixels).unwrap()).unwrap();
    let reg = register(&model, &params, &a, &b, 0, Objective::default(), &Adam::default()).unwrap();
    assert!(reg.field.max_abs_diff(&identity_grid(32, 32)) > 1e-4);
    let out = dir.path().join("reg");
    save_registration(&out, &reg).unwrap();

    let field = read_warp(&out.join(WARP_FILE)).unwrap();
    let f = field.data();
    let mine = Tensor::from_fn(&[32, 32], |k| bilinear(&a, f[2 * k], f[2 * k + 1]));
    let mine = pnm::to_gray(&mine).unwrap();
    let written = image::ImageReader::open(out.join(WARPED_FILE)).unwrap().decode().unwrap().to_luma8();
    assert_eq!(mine.as_raw(), written.as_raw());
    assert_eq!(apply_warp(&a, &field).unwrap(), reg.warped);
}

#[test]
fn instance_steps_are_applied_by_register() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = briefly_trained(dir.path(), "affine");
    let (model, params) = load_model(&ckpt, None).unwrap();
    let ds = gen_tri_circ(2, 32, 4).unwrap();
    let (a, b) = (&ds.images[0].pixels, &ds.images[1].pixels);
    let reg = register(&model, &params, a, b, 5, Objective::default(), &Adam::default()).unwrap();
    assert!(reg.loss_after.unwrap() <= reg.loss_before.unwrap());
}

#[test]
fn evaluating_self_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = briefly_trained(dir.path(), "nsc");
    let (model, params) = load_model(&ckpt, None).unwrap();
    let ds = gen_tri_circ(3, 32, 5).unwrap();
    let rows = evaluate_pairs(&model, &params, &ds, &[(0, 0), (1, 1)], Objective::default()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.inv_consistency_err < 1e-12, "{r:?}");
        assert_eq!(r.dice, Some(1.0));
    }
    assert_eq!(rows[2].run_id, "mean");
    assert!(evaluate_pairs(&model, &params, &ds, &[(0, 7)], Objective::default()).is_err());
}

#[test]
fn evaluate_command_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = briefly_trained(dir.path(), "affine");
    let data = dir.path().join("data");
    gen_tri_circ(10, 32, 6).unwrap().save(&data).unwrap();
    let out = dir.path().join("eval");
    let run = || {
        bin()
            .args(["evaluate", "--pairs", "4", "--seed", "3", "--model"])
            .arg(&ckpt)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
    };
    assert!(run().status.success());
    let path = out.join("evaluation.csv");
    assert_eq!(header(&path), METRICS_HEADER);
    let first = std::fs::read(&path).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap().len(), 5);
    assert!(run().status.success());
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn cli_errors_exit_nonzero_with_path_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.icckpt");
    let out = bin()
        .args(["register", "--moving", "a.pgm", "--fixed", "b.pgm", "--model"])
        .arg(&missing)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.json"), "{err}");

    let bad = dir.path().join("cfg.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = bin().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cfg.json"));

    assert!(!bin().args(["gen-data", "--kind", "idx"]).output().unwrap().status.success());
    assert!(!bin().arg("bogus").output().unwrap().status.success());
}

#[test]
fn gen_data_and_train_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = bin()
        .args(["gen-data", "--kind", "blob-digits", "--count", "12", "--seed", "4", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["images.bin", "meta.json", "landmarks.csv", "previews/000.pgm"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let mut cfg = TrainConfig::new(zoo_descriptor("rigid", 0).unwrap(), DataSource::Dir { path: data.clone() }, 6, 0);
    cfg.log_every = 2;
    cfg.checkpoint_every = 3;
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let run = |out: &Path| bin().args(["train", "--config"]).arg(&cfg_path).arg("--out").arg(out).status().unwrap();
    let (o1, o2) = (dir.path().join("t1"), dir.path().join("t2"));
    assert!(run(&o1).success());
    assert!(run(&o2).success());
    for f in ["ckpt_000003.icckpt", "ckpt_000006.icckpt", FINAL_CHECKPOINT, "metrics.csv", MODEL_FILE] {
        assert!(o1.join(f).exists(), "{f}");
    }
    assert_eq!(header(&o1.join("metrics.csv")), METRICS_HEADER);
    assert_eq!(std::fs::read(o1.join("metrics.csv")).unwrap(), std::fs::read(o2.join("metrics.csv")).unwrap());
    assert_eq!(ParamStore::load(&o1.join(FINAL_CHECKPOINT)).unwrap(), ParamStore::load(&o2.join(FINAL_CHECKPOINT)).unwrap());
}

#[test]
fn zoo_writes_six_rows_per_pair_deterministically() {
    let source = DataSource::BlobDigits { count: 14, size: 32, seed: 2 };
    let data = source.load().unwrap();
    let opts = ZooOptions {
        iterations: 2,
        batch_size: 1,
        held_out: 4,
        eval_pairs: 2,
        panel_pairs: 1,
        log_every: 1,
        ..ZooOptions::default()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = run_zoo(&source, &data, &opts, 2, Some(d1.path())).unwrap();
    run_zoo(&source, &data, &opts, 1, Some(d2.path())).unwrap();
    assert_eq!(report.models.len(), 6);

    let path = d1.path().join(ZOO_RESULTS_FILE);
    assert_eq!(header(&path), ZOO_RESULTS_HEADER);
    let mut r = csv::Reader::from_path(&path).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    for pair in ["0", "1"] {
        let models: Vec<&str> = rows.iter().filter(|r| &r[1] == pair).map(|r| r.get(0).unwrap()).collect();
        assert_eq!(models, ["rigid", "affine", "svf", "mlp", "tsc", "nsc"]);
    }
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(d2.path().join(ZOO_RESULTS_FILE)).unwrap());
    for name in ["rigid", "tsc"] {
        assert_eq!(header(&d1.path().join(name).join("metrics.csv")), METRICS_HEADER);
    }
    let panel = std::fs::read(d1.path().join("panel_0.ppm")).unwrap();
    assert_eq!(&panel[..2], b"P6");
    assert!(!d1.path().join("panel_1.ppm").exists());
}

#[test]
fn affine_grid_summarizes_nine_cells_and_records_failures() {
    let source = DataSource::TriCirc { count: 16, size: 32, seed: 3 };
    let data = source.load().unwrap();
    let mut spec = ExperimentGridSpec::new(source, 4, vec![0, 1]);
    spec.base.batch_size = 2;
    let dir = tempfile::tempdir().unwrap();
    let report = run_affine_grid(&spec, &data, 2, Some(dir.path())).unwrap();
    assert_eq!(report.runs.len(), 18);
    assert_eq!(report.summary.len(), 9);
    let consistent: Vec<&str> = report.summary.iter().filter(|s| s.consistent_by_construction).map(|s| s.cell.as_str()).collect();
    assert_eq!(consistent, ["one_step_antisym", "tsc_antisym"]);

    assert_eq!(header(&dir.path().join(SUMMARY_FILE)), SUMMARY_HEADER);
    let summary_rows = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap().records().count();
    assert_eq!(summary_rows, 9);
    assert_eq!(header(&dir.path().join("loss_curves.csv")), ["cell", "seed", "step", "similarity", "inv_consistency_err"]);
    let curve_rows = csv::Reader::from_path(dir.path().join("loss_curves.csv")).unwrap().records().count();
    assert_eq!(curve_rows, 18 * 5);
    for f in ["loss_curves.ppm", "final_losses.ppm", "runs.csv", "grid_spec.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let mut broken = data.clone();
    let nan = Tensor::from_fn(&[32, 32], |_| f64::NAN);
    for img in broken.images.iter_mut() {
        img.pixels = nan.clone();
    }
    let bad = run_affine_grid(&spec, &broken, 1, Some(dir.path())).unwrap();
    assert!(bad.runs.iter().all(|r| r.result.as_ref().unwrap_err().contains("iteration 0")));
    assert!(bad.summary.iter().all(|s| s.failures == 2 && s.median_final.is_none()));
    let mut runs = csv::Reader::from_path(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.records().filter(|r| &r.as_ref().unwrap()[2] == "failed").count(), 18);
}

#[test]
fn rasterizer_draws_lines_and_plots() {
    let mut c = Canvas::new(10, 10, WHITE);
    c.line((1.0, 1.0), (8.0, 5.0), BLACK);
    assert_eq!(*c.img.get_pixel(1, 1), BLACK);
    assert_eq!(*c.img.get_pixel(8, 5), BLACK);
    assert_eq!(c.img.pixels().filter(|p| **p == BLACK).count(), 8);
    c.line((-50.0, 3.0), (50.0, 3.0), BLACK);
    assert!((0..10).all(|x| *c.img.get_pixel(x, 3) == BLACK));

    let series = vec![vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)], vec![(0.0, 0.8), (2.0, 0.1)]];
    let img = line_plot(&series, 200, 150);
    assert_eq!(img.dimensions(), (200, 150));
    assert!(img.pixels().any(|p| *p == icreg::raster::PALETTE[1]));
    let img = violin_plot(&[vec![1.0, 2.0, 2.5], vec![], vec![f64::NAN, 0.5]], 200, 150);
    assert!(img.pixels().any(|p| *p == icreg::raster::PALETTE[2]));
}
