use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tnet_core::geometry::{grid_cells, CellMode, GridSpec, Rect};

const CONFIG: &str = "\
preset = synthetic
seed = 11
data.count = 48
data.seed = 4
train.batch = 8
train.steps = 4
optim.lr = 0.001
";

fn tnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tnet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        let ws = Self { dir };
        ok(&["gen-data", "--config", &ws.s("run.cfg"), "--out", &ws.s("data.tnsd")]);
        ws
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_string_lossy().into_owned()
    }
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
}

#[test]
fn gen_data_is_deterministic_and_echoes_count() {
    let ws = Workspace::new(CONFIG);
    let a = ok(&["gen-data", "--config", &ws.s("run.cfg"), "--out", &ws.s("a.tnsd")]);
    let b = ok(&["gen-data", "--config", &ws.s("run.cfg"), "--out", &ws.s("b.tnsd"), "--workers", "1"]);
    assert_eq!(field(&a, "checksum"), field(&b, "checksum"));
    assert_eq!(field(&a, "samples"), "48");
    assert_eq!(fs::read(ws.p("a.tnsd")).unwrap(), fs::read(ws.p("b.tnsd")).unwrap());
    let c = ok(&["gen-data", "--config", &ws.s("run.cfg"), "--out", &ws.s("c.tnsd"), "--seed", "5"]);
    assert_ne!(field(&a, "checksum"), field(&c, "checksum"));
}

#[test]
fn malformed_config_exits_2_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nloss.lambda_c = lots\n").unwrap();
    let out = tnet(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("loss.lambda_c"), "{err}");

    fs::write(&cfg, "data.classes = 3\n").unwrap();
    let out = tnet(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let ws = Workspace::new(CONFIG);
    let out = tnet(&["gen-data", "--config", &ws.s("missing.cfg"), "--out", &ws.s("x")]);
    assert_eq!(out.status.code(), Some(3));
    let out = tnet(&["gen-data", "--config", &ws.s("run.cfg"), "--out", &ws.s("no/such/dir/x.tnsd")]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(ws.p("junk.tnsd"), b"not a dataset at all").unwrap();
    let out = tnet(&["train", "--config", &ws.s("run.cfg"), "--data", &ws.s("junk.tnsd"), "--out", &ws.s("o")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let ws = Workspace::new(CONFIG);
    ok(&["train", "--config", &ws.s("run.cfg"), "--data", &ws.s("data.tnsd"), "--out", &ws.s("run"), "--steps", "0"]);
    let mut names: Vec<String> =
        fs::read_dir(ws.p("run")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, vec!["checkpoint.bin".to_string()]);
}

fn metrics(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("metrics.txt")).unwrap().lines().map(String::from).collect()
}

#[test]
fn training_is_reproducible_and_resumable() {
    let ws = Workspace::new(CONFIG);
    let train = |out: &str, extra: &[&str]| {
        let mut args: Vec<String> =
            vec!["train".into(), "--config".into(), ws.s("run.cfg"), "--data".into(), ws.s("data.tnsd")];
        args.extend(["--out".into(), ws.s(out)]);
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let full = train("full", &[]);
    let again = train("again", &[]);
    assert_eq!(full, again.replace("again", "full"));
    assert_eq!(fs::read(ws.p("full/checkpoint.bin")).unwrap(), fs::read(ws.p("again/checkpoint.bin")).unwrap());

    let single = train("single", &["--workers", "1"]);
    assert_eq!(full, single.replace("single", "full"));

    train("part", &["--steps", "2"]);
    let ckpt = ws.s("part/checkpoint.bin");
    train("part", &["--resume", &ckpt]);
    let whole = metrics(&ws.p("full"));
    assert_eq!(whole.len(), 4);
    assert_eq!(metrics(&ws.p("part")), whole);
    assert_eq!(fs::read(ws.p("full/checkpoint.bin")).unwrap(), fs::read(ws.p("part/checkpoint.bin")).unwrap());
}

#[test]
fn eval_reports_every_location_count_reproducibly() {
    let ws = Workspace::new(CONFIG);
    ok(&["train", "--config", &ws.s("run.cfg"), "--data", &ws.s("data.tnsd"), "--out", &ws.s("run")]);
    let ckpt = ws.s("run/checkpoint.bin");
    let a = ok(&["eval", "--checkpoint", &ckpt, "--data", &ws.s("data.tnsd"), "--locations", "0,1,2"]);
    let b = ok(&["eval", "--checkpoint", &ckpt, "--data", &ws.s("data.tnsd"), "--locations", "0,1,2", "--workers", "1"]);
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(field(lines[0], "locations"), "0");
    assert_eq!(field(lines[0], "precision"), "na");
    let flops: Vec<u64> = lines.iter().map(|l| field(l, "flops").parse().unwrap()).collect();
    assert_eq!(flops[2] - flops[1], flops[1] - flops[0]);
    let default = ok(&["eval", "--checkpoint", &ckpt, "--data", &ws.s("data.tnsd")]);
    assert_eq!(default.lines().count(), 2);
}

#[test]
fn eval_with_mismatched_shapes_exits_5() {
    let ws = Workspace::new(CONFIG);
    ok(&["train", "--config", &ws.s("run.cfg"), "--data", &ws.s("data.tnsd"), "--out", &ws.s("run"), "--steps", "0"]);
    fs::write(ws.p("other.cfg"), CONFIG.replace("preset = synthetic", "preset = synthetic\nmodel.weighting = true"))
        .unwrap();
    let out = tnet(&[
        "eval",
        "--checkpoint",
        &ws.s("run/checkpoint.bin"),
        "--data",
        &ws.s("data.tnsd"),
        "--config",
        &ws.s("other.cfg"),
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn profile_preset_totals_and_unknown_preset() {
    let out = ok(&["profile", "--spec", "paper-imagenet", "--locations", "0,1,2,3,5"]);
    assert!(out.contains("parameters: 21859949"));
    let totals: Vec<u64> = out
        .lines()
        .filter(|l| l.starts_with("locations="))
        .map(|l| field(l, "total").parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 5);
    for (t, published) in totals[1..].iter().zip([3.63e9, 5.43e9, 7.24e9, 10.84e9]) {
        assert!((*t as f64 - published).abs() / published < 0.02);
    }
    assert_eq!(tnet(&["profile", "--spec", "paper-resnet"]).status.code(), Some(2));
}

/// Parses the comment lines and pixel size of a binary PPM.
fn ppm_header(bytes: &[u8]) -> (Vec<String>, usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]).into_owned();
    let mut comments = Vec::new();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("P6"));
    for line in lines {
        if let Some(c) = line.strip_prefix("# ") {
            comments.push(c.to_string());
        } else {
            let mut it = line.split_whitespace().map(|v| v.parse().unwrap());
            return (comments, it.next().unwrap(), it.next().unwrap());
        }
    }
    panic!("no size line");
}

#[test]
fn visualize_outlines_selected_cells() {
    let ws = Workspace::new(&format!("{CONFIG}model.weighting = true\n"));
    ok(&["train", "--config", &ws.s("run.cfg"), "--data", &ws.s("data.tnsd"), "--out", &ws.s("run"), "--steps", "2"]);
    ok(&[
        "visualize",
        "--checkpoint",
        &ws.s("run/checkpoint.bin"),
        "--data",
        &ws.s("data.tnsd"),
        "--out",
        &ws.s("vis"),
        "--count",
        "3",
    ]);
    let cells = grid_cells(&GridSpec::new(4, CellMode::Fraction(0.25), 64).unwrap()).unwrap();
    for i in 0..3 {
        let bytes = fs::read(ws.p(&format!("vis/sample_{i:04}.ppm"))).unwrap();
        let (comments, w, h) = ppm_header(&bytes);
        assert_eq!((w, h), (256, 256));
        let rects: Vec<&String> = comments.iter().filter(|c| c.starts_with("rect ")).collect();
        assert_eq!(rects.len(), 1);
        let v: Vec<usize> = rects[0].split_whitespace().skip(1).step_by(2).map(|x| x.parse().unwrap()).collect();
        // rect <i> level <l> cell <c> x <x> y <y> w <w> h <h>
        let (cell, rect) = (v[2], Rect::new(v[3], v[4], v[5], v[6]));
        assert_eq!(cells[cell], rect);
        let weights: f64 = comments
            .iter()
            .find_map(|c| c.strip_prefix("weights "))
            .unwrap()
            .split_whitespace()
            .map(|x| x.parse::<f64>().unwrap())
            .sum();
        assert!((weights - 1.0).abs() <= 0.01 + 1e-9, "weights sum {weights}");
        let body = bytes.len() - w * h * 3;
        let red = bytes[body..].chunks(3).filter(|p| p == &[230, 40, 40]).count();
        assert_eq!(red, 4 * (rect.w * 4) - 4);
    }
}
