use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asap"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SCENE: &str = r#"{
  "num_sequences": 2, "num_frames": 4, "points_per_frame": 160, "world_extent": 6.0,
  "noise_sigma": 0.02, "rng_seed": 3,
  "classes": [
    {"name": "ground", "class_id": 0, "shape": "plane", "size": [6.0, 6.0, 0.0], "count": 1, "speed": [0.0, 0.0], "reflectivity": 0.2},
    {"name": "still", "class_id": 1, "shape": "box", "size": [1.0, 1.0, 1.0], "count": 1, "speed": [0.0, 0.05], "reflectivity": 0.6},
    {"name": "fast", "class_id": 2, "shape": "box", "size": [1.0, 1.0, 1.0], "count": 1, "speed": [1.0, 1.5], "reflectivity": 0.6}
  ]
}"#;

const ARCH: &str = r#"{
  "input_feature_width": 1, "num_classes": 3,
  "backbone": {"pre_widths": [4, 8], "head_widths": [8, 3]},
  "levels": [{"m": 16, "radii": [1.0], "eta_widths": [[11, 8]], "te": "ate",
              "zeta_widths": [8, 8], "gamma_widths": [16, 2]}],
  "T": 2, "fp_unit_widths": [8]
}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("scene.json"), SCENE).unwrap();
        fs::write(dir.path().join("arch.json"), ARCH).unwrap();
        let f = Fixture { dir };
        let o = run(&["gen-data", "--config", &f.p("scene.json"), "--out", &f.p("data")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        f
    }

    fn p(&self, rel: &str) -> String {
        self.dir.path().join(rel).to_string_lossy().into_owned()
    }

    fn train(&self, out: &str, seed: &str) -> Output {
        run(&[
            "train", "--arch", &self.p("arch.json"), "--data", &self.p("data"), "--epochs", "2", "--lr", "0.01",
            "--seed", seed, "--out", &self.p(out),
        ])
    }

    fn eval(&self, ckpt: &str, report: &str) -> Output {
        run(&["eval", "--arch", &self.p("arch.json"), "--ckpt", &self.p(ckpt), "--data", &self.p("data"), "--report", &self.p(report)])
    }
}

#[test]
fn gen_data_writes_manifest_and_sequences() {
    let f = Fixture::new();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.p("data/dataset.json")).unwrap()).unwrap();
    assert_eq!(manifest["num_classes"], 3);
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 2);
    assert!(Path::new(&f.p("data/seq_000.pcsq")).exists());
}

#[test]
fn train_then_eval_produces_ordered_report() {
    let f = Fixture::new();
    let o = f.train("run", "1");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["best.ckpt", "last.ckpt", "train_log.csv", "run.json", "arch.json"] {
        assert!(Path::new(&f.p(&format!("run/{file}"))).exists(), "{file}");
    }
    let log = fs::read_to_string(f.p("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,loss,train_miou,val_miou"));
    assert_eq!(log.lines().count(), 3);

    let o = f.eval("run/last.ckpt", "report.csv");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mIoU"));
    let csv = fs::read_to_string(f.p("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class,iou,accuracy,points");
    let ids: Vec<&str> = lines[1..4].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["0", "1", "2"]);
    assert!(lines[4].starts_with("mean,"));
}

#[test]
fn identical_seeds_give_identical_reports() {
    let f = Fixture::new();
    for (out, rep) in [("a", "a.csv"), ("b", "b.csv")] {
        assert!(f.train(out, "7").status.success());
        assert!(f.eval(&format!("{out}/last.ckpt"), rep).status.success());
    }
    assert_eq!(fs::read(f.p("a.csv")).unwrap(), fs::read(f.p("b.csv")).unwrap());
    assert_eq!(fs::read(f.p("a/last.ckpt")).unwrap(), fs::read(f.p("b/last.ckpt")).unwrap());
    assert_eq!(fs::read(f.p("a/train_log.csv")).unwrap(), fs::read(f.p("b/train_log.csv")).unwrap());
}

#[test]
fn bench_stc_reports_one_fps_call_for_constant_centers() {
    let f = Fixture::new();
    let o = run(&["bench-stc", "--arch", &f.p("arch.json"), "--data", &f.p("data"), "--report", &f.p("bench.csv")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(f.p("bench.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "fps_calls_per_window").unwrap();
    let calls: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(calls, [2.0, 1.0]);
}

#[test]
fn grad_check_passes_on_shipped_configs() {
    for cfg in ["asap_ate.json", "baseline.json"] {
        let o = run(&["grad-check", "--arch", configs().join(cfg).to_str().unwrap(), "--seed", "3"]);
        assert!(o.status.success(), "{cfg}: {}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        let out = stdout(&o);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert!(row[0].parse::<usize>().unwrap() >= 200, "{out}");
        assert_eq!(row[3], "true");
    }
}

#[test]
fn param_count_prints_an_integer() {
    let ate = run(&["param-count", "--arch", configs().join("asap_ate.json").to_str().unwrap()]);
    let n: usize = stdout(&ate).trim().parse().unwrap();
    assert!(n > 0);
}

#[test]
fn errors_exit_with_code_two() {
    let f = Fixture::new();
    let o = run(&["param-count", "--arch", &f.p("missing.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    fs::create_dir(f.p("empty")).unwrap();
    assert!(f.train("run", "0").status.success());
    let o = run(&["eval", "--arch", &f.p("arch.json"), "--ckpt", &f.p("run/last.ckpt"), "--data", &f.p("empty"), "--report", &f.p("r.csv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&f.p("r.csv")).exists());

    let four = ARCH.replace("\"num_classes\": 3", "\"num_classes\": 4").replace("[8, 3]", "[8, 4]");
    fs::write(f.p("four.json"), four).unwrap();
    let o = run(&["train", "--arch", &f.p("four.json"), "--data", &f.p("data"), "--epochs", "1", "--out", &f.p("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("classes"));
}
