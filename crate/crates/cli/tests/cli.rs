use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrgan::geom::EquirectImage;
use mrgan::io::{read_png, read_smap, write_fixations, write_png, write_smap, BitDepth, Raster};
use mrgan::metrics::{cc, gaussian_density};
use mrgan::{FixationMap, SaliencyMap};
use tempfile::TempDir;

fn mrgan360(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrgan360")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Smooth RGB panorama written as a PNG.
fn panorama(dir: &Path, name: &str, width: usize) -> PathBuf {
    let erp = EquirectImage::from_fn(width, 3, |lon, lat| {
        let (l, p) = (lon.to_radians(), lat.to_radians());
        vec![0.5 + 0.4 * l.cos() * p.cos(), 0.5 + 0.3 * p.sin(), 0.3 + 0.2 * (2.0 * l).sin() * p.cos()]
    })
    .unwrap();
    let path = dir.join(name);
    let raster = Raster {
        width,
        height: width / 2,
        channels: 3,
        data: erp.data().to_vec(),
    };
    write_png(&path, &raster, BitDepth::Sixteen).unwrap();
    path
}

const SMALL: &str = r#"{
  "stages": 3, "channels": 4, "se_reduction": 2, "width": 16, "height": 16,
  "lr": 0.003, "batch": 4, "pretrain_epochs": 30, "finetune_epochs": 1,
  "rotations": [0], "viewport_stride": 30, "checkpoint_every": 1
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&mrgan360(&["nonsense"])), 1);
    assert_eq!(code(&mrgan360(&["eval", "--no-such-flag"])), 1);
    assert_eq!(code(&mrgan360(&["selftest", "--only", "9"])), 1);
    assert_eq!(code(&mrgan360(&["--help"])), 0);
}

#[test]
fn project_writes_six_faces_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let erp = panorama(dir.path(), "pano.png", 64);
    let out = dir.path().join("faces");
    let o = mrgan360(&["project", s(&erp), "--out", s(&out), "--size", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        ["back_0_0.png", "down_0_0.png", "front_0_0.png", "left_0_0.png", "manifest_0_0.json", "right_0_0.png", "up_0_0.png"]
    );
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest_0_0.json")).unwrap()).unwrap();
    assert_eq!(manifest["faces"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["faces"][1]["view"]["yaw"], 90.0);
}

#[test]
fn rotating_the_cube_a_quarter_turn_moves_right_to_front() {
    let dir = TempDir::new().unwrap();
    let erp = panorama(dir.path(), "pano.png", 128);
    let out = dir.path().join("faces");
    for rot in ["0,0", "90,0"] {
        let o = mrgan360(&["project", s(&erp), "--out", s(&out), "--size", "24", "--rotation", rot]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = read_png(&out.join("front_90_0.png")).unwrap();
    let b = read_png(&out.join("right_0_0.png")).unwrap();
    let c = read_png(&out.join("front_0_0.png")).unwrap();
    let mae = |x: &Raster, y: &Raster| x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.data.len() as f64;
    assert!(mae(&a, &b) < 2.0 / 255.0, "{}", mae(&a, &b));
    assert!(mae(&a, &c) > 10.0 * mae(&a, &b));
}

#[test]
fn project_rejects_non_equirectangular_input() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("odd.png");
    let raster = Raster {
        width: 31,
        height: 16,
        channels: 1,
        data: vec![0.5; 31 * 16],
    };
    write_png(&path, &raster, BitDepth::Eight).unwrap();
    let o = mrgan360(&["project", s(&path), "--out", s(&dir.path().join("f"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("2:1"), "{}", stderr(&o));
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let config = small_config(dir);
    let out = dir.join(out);
    let mut args = vec!["train", "--config", s(&config), "--synthetic", "4", "--synthetic-width", "64", "--out", s(&out)];
    args.extend_from_slice(extra);
    mrgan360(&args)
}

#[test]
fn training_is_reproducible_and_predicts() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), "a", &["--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("validation content loss by stage"));
    let o = train(dir.path(), "b", &["--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for f in ["generator.ckpt", "discriminator.ckpt", "pretrain.csv", "finetune.csv", "pretrain-epoch0030.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(a.join("finetune.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,step,loss_D,loss_G,content,D_acc");

    // Prediction from the trained checkpoint. Stride consistency needs a
    // model that has learned something: fresh weights give a nearly flat map
    // whose correlation is noise.
    let config = small_config(dir.path());
    let erp = panorama(dir.path(), "pano.png", 64);
    let ckpt = a.join("generator.ckpt");
    let predict = |name: &str, extra: &[&str]| -> SaliencyMap {
        let out = dir.path().join(name);
        let mut args = vec!["predict", s(&erp), "--checkpoint", s(&ckpt), "--config", s(&config), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = mrgan360(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(out.with_extension("png").is_file());
        read_smap(&out).unwrap()
    };
    let three = predict("s3.smap", &[]);
    assert_eq!(three.dims(), (64, 32));
    let one = predict("s1.smap", &["--stages", "1"]);
    assert_ne!(one, three);
    let fine = predict("fine.smap", &["--viewport-stride", "10"]);
    let r = cc(&three, &fine).unwrap();
    assert!(r >= 0.95, "{r}");

    // a checkpoint that does not fit the configured generator
    let o = mrgan360(&[
        "predict", s(&erp), "--checkpoint", s(&ckpt), "--config", s(&config), "--set", "channels=6", "--out",
        s(&dir.path().join("x.smap")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn nan_learning_rate_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), "nan", &["--set", "lr=NaN"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!dir.path().join("nan").exists());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"lr": NaN}"#).unwrap();
    let o = mrgan360(&["train", "--config", s(&bad), "--synthetic", "2", "--out", s(&dir.path().join("n2"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn assemble_puts_projected_faces_back() {
    let dir = TempDir::new().unwrap();
    let width = 96;
    let truth = EquirectImage::from_fn(width, 1, |lon, lat| vec![0.6 + 0.3 * lon.to_radians().sin() * lat.to_radians().cos()]).unwrap();
    let path = dir.path().join("gray.png");
    let raster = Raster {
        width,
        height: width / 2,
        channels: 1,
        data: truth.data().to_vec(),
    };
    write_png(&path, &raster, BitDepth::Sixteen).unwrap();
    let faces = dir.path().join("faces");
    let o = mrgan360(&["project", s(&path), "--out", s(&faces), "--size", "32", "--sixteen-bit"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("back.smap");
    let o = mrgan360(&["assemble", "--manifest", s(&faces.join("manifest_0_0.json")), "--maps", s(&faces), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = read_smap(&out).unwrap();
    assert_eq!(rec.dims(), (width, width / 2));
    let expect = SaliencyMap::new(width, width / 2, truth.data().to_vec()).unwrap();
    assert!(cc(&rec, &expect).unwrap() > 0.99);

    fs::remove_file(faces.join("up_0_0.png")).unwrap();
    let o = mrgan360(&["assemble", "--manifest", s(&faces.join("manifest_0_0.json")), "--maps", s(&faces), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("up"), "{}", stderr(&o));
}

fn eval_dirs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let (pred, gt, fix) = (dir.join("pred"), dir.join("gt"), dir.join("fix"));
    for d in [&pred, &gt, &fix] {
        fs::create_dir_all(d).unwrap();
    }
    for (name, pts) in [("a", vec![(3, 2), (10, 5)]), ("b", vec![(7, 7), (1, 1), (14, 3)])] {
        let f = FixationMap::new(16, 8, pts).unwrap();
        let g = gaussian_density(&f, 1.5).unwrap();
        write_smap(&gt.join(format!("{name}.smap")), &g).unwrap();
        write_smap(&pred.join(format!("{name}.smap")), &g).unwrap();
        write_fixations(&fix.join(format!("{name}.csv")), &f).unwrap();
    }
    (pred, gt, fix)
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = TempDir::new().unwrap();
    let (pred, gt, fix) = eval_dirs(dir.path());
    let o = mrgan360(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--fixations", s(&fix)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["image", "KL", "CC", "NSS", "AUC"]);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "mean");
    for r in &rows[1..] {
        assert!(r[1].parse::<f64>().unwrap().abs() < 1e-4, "{r:?}");
        assert!((r[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn eval_reports_bad_pairs_and_fails() {
    let dir = TempDir::new().unwrap();
    let (pred, gt, fix) = eval_dirs(dir.path());
    write_smap(&pred.join("a.smap"), &SaliencyMap::constant(8, 8, 1.0).unwrap()).unwrap();
    write_smap(&pred.join("c.smap"), &SaliencyMap::constant(16, 8, 1.0).unwrap()).unwrap();
    let table = dir.path().join("scores.csv");
    let o = mrgan360(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--fixations", s(&fix), "--out", s(&table)]);
    assert_eq!(code(&o), 2);
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "a,,,,");
    assert!(lines[2].starts_with("b,"));
    assert_eq!(lines[3], "c,,,,");
    assert!(lines[4].starts_with("mean,"));
    let err = stderr(&o);
    assert!(err.contains("a:") && err.contains("c:"), "{err}");
}

#[test]
fn gradcheck_passes_on_fresh_parameters() {
    let o = mrgan360(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("model S=3"));
    assert!(out.contains("gen.L1.W_z"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn selftest_subset() {
    let o = mrgan360(&["selftest", "--only", "2,4,5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(" PASS: ")).count(), 3, "{out}");
}
