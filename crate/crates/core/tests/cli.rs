use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusegp::dataset::{Dataset, Validation};
use fusegp::porescan::{save_gray, GrayImage};
use fusegp::synth::{two_source_dataset, TwoSourceConfig};
use tempfile::TempDir;

fn fusegp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusegp"))
        .args(args)
        .env_remove("FUSEGP_SEED")
        .output()
        .expect("binary runs")
}

fn small_data(n: usize) -> Dataset {
    two_source_dataset(&TwoSourceConfig {
        n_per_source: n,
        rho: 0.8,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn write_data(dir: &Path, name: &str, data: &Dataset) -> PathBuf {
    let path = dir.join(name);
    data.write_csv(fs::File::create(&path).unwrap()).unwrap();
    path
}

fn one_material(data: &Dataset, material: &str) -> Dataset {
    let rows = data.records().iter().filter(|r| r.point.material == material).cloned().collect();
    Dataset::from_records(rows, &Validation::disabled()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn fit_single_material_sogp_writes_models_and_lengthscales() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "a.csv", &one_material(&small_data(15), "A"));
    let out = dir.path().join("out");
    let o = fusegp(&["fit", "--data", s(&data), "--restarts", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model_phi.json").exists());
    assert!(out.join("model_hv.json").exists());
    let csv = read(out.join("lengthscales.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "model,train,p,v,l,h,sr");
    assert_eq!(lines.count(), 2);
}

#[test]
fn fit_fused_mtgp_reports_task_correlation_and_source_lengthscale() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "ab.csv", &small_data(12));
    let out = dir.path().join("out");
    let o = fusegp(&["fit", "--data", s(&data), "--model", "mtgp", "--fuse", "--restarts", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("task correlation"));
    let model = read(out.join("model.json"));
    assert!(model.contains("task_covariance"));
    assert!(read(out.join("lengthscales.csv")).starts_with("model,train,p,v,l,h,sr,s\n"));
}

#[test]
fn fuse_on_one_material_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "a.csv", &one_material(&small_data(10), "A"));
    let o = fusegp(&["fit", "--data", s(&data), "--fuse", "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = fusegp(&["cv", "--data", s(&dir.path().join("nope.csv")), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(fusegp(&["fit", "--bogus"]).status.code(), Some(2));
}

#[test]
fn cv_all_configs_fills_the_table() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "ab.csv", &small_data(12));
    let out = dir.path().join("out");
    let o = fusegp(&["cv", "--data", s(&data), "--all-configs", "--k", "2", "--restarts", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(out.join("cv_table.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "model,train,test,phi_rmse,hv_rmse");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').skip(3).all(|c| c.parse::<f64>().unwrap() > 0.0)));

    let folds = read(out.join("cv_folds.csv"));
    let fold_ids: std::collections::BTreeSet<&str> = folds.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(fold_ids.len(), 2);
}

#[test]
fn seed_flag_and_env_give_the_same_cv_output() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "ab.csv", &small_data(10));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let base = ["cv", "--data", s(&data), "--fuse", "--property", "phi", "--k", "3", "--restarts", "2"];
    let o1 = fusegp(&[&base[..], &["--seed", "9", "--out", s(&a)]].concat());
    assert!(o1.status.success());
    let o2 = Command::new(env!("CARGO_BIN_EXE_fusegp"))
        .args(base)
        .args(["--out", s(&b)])
        .env("FUSEGP_SEED", "9")
        .output()
        .unwrap();
    assert!(o2.status.success());
    assert_eq!(read(a.join("cv_table.csv")), read(b.join("cv_table.csv")));
    assert_eq!(read(a.join("cv_folds.csv")), read(b.join("cv_folds.csv")));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "a.csv", &one_material(&small_data(10), "A"));
    let out = dir.path().join("from_config");
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        serde_json::json!({"data": data, "property": "phi", "restarts": 1, "out": out}).to_string(),
    )
    .unwrap();
    let o = fusegp(&["--config", s(&cfg), "fit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model_phi.json").exists());
    assert!(!out.join("model_hv.json").exists());
}

#[test]
fn correlate_self_pairing_has_unit_cross_terms() {
    let dir = TempDir::new().unwrap();
    let a = write_data(dir.path(), "a.csv", &one_material(&small_data(10), "A"));
    let out = dir.path().join("out");
    let o = fusegp(&["correlate", "--data", s(&a), "--data-b", s(&a), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("correlation.csv"));
    let cell = |method: &str, r: &str, c: &str| -> f64 {
        csv.lines()
            .find(|l| l.starts_with(&format!("{method},{r},{c},")))
            .and_then(|l| l.rsplit(',').next())
            .unwrap()
            .parse()
            .unwrap()
    };
    for m in ["pearson", "spearman"] {
        assert!((cell(m, "A_phi", "A#2_phi") - 1.0).abs() < 1e-12);
        assert!((cell(m, "A_hv", "A#2_hv") - 1.0).abs() < 1e-12);
    }
    assert_eq!(read(out.join("ved_scatter.csv")).lines().count(), 1 + 2 * 2 * 10);
}

#[test]
fn correlate_reports_unmatched_ids() {
    let dir = TempDir::new().unwrap();
    let full = small_data(10);
    let a = write_data(dir.path(), "a.csv", &one_material(&full, "A"));
    let rows = one_material(&full, "B").records().iter().take(9).cloned().collect();
    let b = write_data(dir.path(), "b.csv", &Dataset::from_records(rows, &Validation::disabled()).unwrap());
    let o = fusegp(&["correlate", "--data", s(&a), "--data-b", s(&b), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("10"));
}

#[test]
fn marginal_from_a_saved_model() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), "ab.csv", &small_data(10));
    let out = dir.path().join("out");
    let fit = fusegp(&["fit", "--data", s(&data), "--fuse", "--property", "phi", "--restarts", "1", "--out", s(&out)]);
    assert!(fit.status.success());
    let model = out.join("model_phi.json");
    let o = fusegp(&["marginal", s(&model), "--feature", "v", "--grid", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("marginal_v.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "feature,source,response,x,mean,lower,upper");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 14);
    for r in &rows {
        let (mean, lo, hi): (f64, f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap(), r[6].parse().unwrap());
        assert!(lo <= mean && mean <= hi);
    }

    let bad = fusegp(&["marginal", s(&model), "--feature", "nope", "--out", s(&out)]);
    assert_ne!(bad.status.code(), Some(0));
}

fn block_image(w: usize, h: usize, block: (usize, usize, usize, usize)) -> GrayImage {
    let mut img = GrayImage::filled(w, h, 220);
    let (x0, y0, bw, bh) = block;
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            img.set(x, y, 30);
        }
    }
    img
}

#[test]
fn porescan_single_image_porosity() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("one.pgm");
    save_gray(&block_image(50, 40, (10, 10, 5, 4)), &path).unwrap();
    let out = dir.path().join("out");
    let o = fusegp(&["porescan", s(&path), "--dilate-radius", "0", "--dump-labels", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(out.join("porescan_summary.csv"));
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("count"), "1");
    assert_eq!(col("porosity_pct").parse::<f64>().unwrap(), 1.0);
    assert_eq!(read(out.join("pores.csv")).lines().count(), 2);
    assert!(out.join("labels").join("one.pgm").exists());
}

#[test]
fn porescan_batch_skips_unreadable_files() {
    let dir = TempDir::new().unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir(&imgs).unwrap();
    save_gray(&block_image(30, 30, (5, 5, 3, 3)), imgs.join("a.png")).unwrap();
    fs::write(imgs.join("b.pgm"), b"not an image").unwrap();
    let out = dir.path().join("out");
    let o = fusegp(&["porescan", s(&imgs), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("error"));
    assert_eq!(read(out.join("pores.csv")).lines().count(), 2);

    let o = fusegp(&["porescan", s(&imgs.join("b.pgm")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn porescan_empty_directory_writes_headers_only() {
    let dir = TempDir::new().unwrap();
    let imgs = dir.path().join("empty");
    fs::create_dir(&imgs).unwrap();
    let out = dir.path().join("out");
    let o = fusegp(&["porescan", s(&imgs), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(out.join("pores.csv")).lines().count(), 1);
    assert_eq!(read(out.join("porescan_summary.csv")).lines().count(), 1);
}
