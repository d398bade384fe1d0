use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn caranet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caranet")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&caranet(&[
        "generate",
        "--out",
        s(&data),
        "--set",
        &format!("data.n_samples={n}"),
        "--set",
        "data.ratio_range=0.02,0.06",
    ]));
    data.join("manifest.tsv")
}

fn toy_config(dir: &Path, manifest: &Path, epochs: usize) -> PathBuf {
    let cfg = dir.join("toy.cfg");
    fs::write(
        &cfg,
        format!(
            "# toy run\nmodel.base_channels = 4\nmodel.decoder_channels = 4\ntrain.epochs = {epochs}\ntrain.batch_size = 4\ntrain.learning_rate = 1e-3\ndata.manifest = {}\n",
            manifest.display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn generate_writes_pairs_and_detects_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.cfg");
    fs::write(&spec, "data.n_samples = 200\ndata.seed = 3\n").unwrap();
    let out = dir.path().join("ds");
    let first = ok(&caranet(&["generate", "--spec", s(&spec), "--out", s(&out)]));
    assert!(first.contains("200 samples (160 train, 40 test)"), "{first}");
    assert!(first.contains("histogram"));
    assert_eq!(fs::read_dir(out.join("images")).unwrap().count(), 200);
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 200);
    assert_eq!(fs::read_to_string(out.join("manifest.tsv")).unwrap().lines().count(), 200);
    let before = fs::read(out.join("manifest.tsv")).unwrap();

    let again = ok(&caranet(&["generate", "--spec", s(&spec), "--out", s(&out)]));
    assert!(again.contains("up-to-date"), "{again}");
    assert_eq!(fs::read(out.join("manifest.tsv")).unwrap(), before);

    // a damaged file is rewritten
    fs::write(out.join("images/syn00000.ppm"), b"junk").unwrap();
    let fixed = ok(&caranet(&["generate", "--spec", s(&spec), "--out", s(&out)]));
    assert!(!fixed.contains("up-to-date"));
    assert_ne!(fs::read(out.join("images/syn00000.ppm")).unwrap(), b"junk");
}

#[test]
fn generate_resolved_config_reproduces_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    ok(&caranet(&["generate", "--out", s(&out), "--set", "data.n_samples=12", "--set", "data.seed=9"]));
    let other = dir.path().join("ds2");
    ok(&caranet(&["generate", "--spec", s(&out.join("resolved.cfg")), "--out", s(&other)]));
    assert_eq!(fs::read(out.join("SHA256SUMS")).unwrap(), fs::read(other.join("SHA256SUMS")).unwrap());
}

#[test]
fn bad_ratio_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = caranet(&["generate", "--out", s(&dir.path().join("x")), "--set", "data.ratio_range=0.2,0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ratio range"));
}

#[test]
fn unknown_keys_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "model.base_chanels = 4\n").unwrap();
    let out = caranet(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("base_chanels"));
    assert_eq!(caranet(&["train"]).status.code(), Some(2));
    assert_eq!(caranet(&["bogus"]).status.code(), Some(2));
}

#[test]
fn toy_training_run_emits_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 10);
    let cfg = toy_config(dir.path(), &manifest, 20);
    let run = dir.path().join("run");
    let stdout = ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&run), "--set", "train.checkpoint_every=10"]));
    assert!(stdout.contains("epoch 20"));
    for f in ["final.ckpt", "epoch_010.ckpt", "epoch_020.ckpt", "loss.csv", "resolved.cfg"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,step,scale,loss"));
    // 8 training images in batches of 4, three scales, 20 epochs
    assert_eq!(csv.lines().count(), 1 + 20 * 2 * 3);

    let eval = dir.path().join("eval");
    let stdout = ok(&caranet(&[
        "eval",
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--manifest",
        s(&manifest),
        "--split",
        "train",
        "--out",
        s(&eval),
    ]));
    assert!(stdout.contains("8 train samples"), "{stdout}");
    let report = fs::read_to_string(eval.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "id,size_ratio,dice,iou,fbw,salpha,ephi,mae");
    assert_eq!(lines.len(), 10);
    assert!(lines[9].starts_with("MEAN,"));
    assert_eq!(fs::read_dir(eval.join("predictions")).unwrap().count(), 8);
}

#[test]
fn identical_config_gives_identical_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 6);
    let cfg = toy_config(dir.path(), &manifest, 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&a)]));
    ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&b)]));
    let la = fs::read(a.join("loss.csv")).unwrap();
    assert_eq!(la, fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(b.join("final.ckpt")).unwrap());

    // resolved.cfg reproduces the run, single-threaded as well
    let c = dir.path().join("c");
    ok(&caranet(&["--sequential", "train", "--config", s(&a.join("resolved.cfg")), "--out", s(&c)]));
    assert_eq!(la, fs::read(c.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("resolved.cfg")).unwrap(), fs::read(c.join("resolved.cfg")).unwrap());
}

#[test]
fn ablation_flags_build_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 6);
    let cfg = toy_config(dir.path(), &manifest, 1);
    let run = dir.path().join("base");
    let stdout = ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&run), "--no-cfp", "--no-ara"]));
    assert!(stdout.contains("training baseline model"), "{stdout}");
    let resolved = fs::read_to_string(run.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("model.use_cfp = false") && resolved.contains("model.use_ara = false"));
    let only = dir.path().join("noara");
    let stdout = ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&only), "--no-ara"]));
    assert!(stdout.contains("training cfp-only model"), "{stdout}");
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 6);
    let cfg = toy_config(dir.path(), &manifest, 3);
    let out = caranet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r")), "--set", "train.learning_rate=1e30"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("training aborted after step"));
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = caranet(&["train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = caranet(&["train", "--manifest", s(&dir.path().join("none.tsv")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_lists_every_missing_mask() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 10);
    let cfg = toy_config(dir.path(), &manifest, 1);
    let run = dir.path().join("run");
    ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&run), "--set", "train.scales=1"]));
    let text = fs::read_to_string(&manifest).unwrap();
    let test_ids: Vec<&str> = text.lines().filter(|l| l.contains("\ttest\t")).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(test_ids.len(), 2);
    for id in &test_ids {
        fs::remove_file(dir.path().join("data/masks").join(format!("{id}.pgm"))).unwrap();
    }
    let out = caranet(&[
        "eval",
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for id in &test_ids {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn incompatible_checkpoint_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 6);
    let cfg = toy_config(dir.path(), &manifest, 1);
    let run = dir.path().join("run");
    ok(&caranet(&["train", "--config", s(&cfg), "--out", s(&run), "--set", "train.scales=1"]));
    // swap the recorded width so the stored tensors no longer fit
    let bytes = fs::read(run.join("final.ckpt")).unwrap();
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let text = std::str::from_utf8(&bytes[12..12 + len]).unwrap().replace("base_channels = 4", "base_channels = 8");
    let mut edited = bytes[..8].to_vec();
    edited.extend_from_slice(&(text.len() as u32).to_le_bytes());
    edited.extend_from_slice(text.as_bytes());
    edited.extend_from_slice(&bytes[12 + len..]);
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, edited).unwrap();
    let out = caranet(&["eval", "--checkpoint", s(&bad), "--manifest", s(&manifest), "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("encoder.level1"), "{err}");
}

const HEADER: &str = "id,size_ratio,dice,iou,fbw,salpha,ephi,mae";

fn fixture_report(dir: &Path, name: &str, rows: &[(&str, f64, f64)]) -> PathBuf {
    let mut text = format!("{HEADER}\n");
    for (id, r, d) in rows {
        text.push_str(&format!("{id},{r},{d},{d},{d},{d},{d},{}\n", 1.0 - d));
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const ROWS: [(&str, f64, f64); 5] = [
    ("a", 0.01, 0.5),
    ("b", 0.03, 0.7),
    ("c", 0.05, 0.6),
    ("d", 0.08, 0.9),
    ("e", 0.12, 0.95),
];

#[test]
fn analyze_single_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = fixture_report(dir.path(), "r.csv", &ROWS);
    let out = dir.path().join("an");
    ok(&caranet(&["analyze", "--reports", s(&r), "--intervals", "4", "--out", s(&out)]));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, vec!["curve_a.csv", "curve_a.svg", "resolved.cfg"]);
    let csv = fs::read_to_string(out.join("curve_a.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("interval_lo,interval_hi,mean_dice,count"));
    let counts: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counts, 5);
    assert!(fs::read_to_string(out.join("curve_a.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn analyze_identical_reports_and_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture_report(dir.path(), "a.csv", &ROWS);
    let b = fixture_report(dir.path(), "b.csv", &ROWS);
    let out = dir.path().join("an");
    let stdout = ok(&caranet(&["analyze", "--reports", s(&a), s(&b), "--cutoff", "0.05", "--out", s(&out)]));
    assert!(stdout.contains("red 0 blue 0"), "{stdout}");
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.lines().skip(1).all(|l| l.ends_with(",0")));
    assert_eq!(fs::read_to_string(out.join("comparison_sums.csv")).unwrap(), "sum_positive,sum_negative\n0,0\n");
    assert!(out.join("comparison.svg").exists());
    let small = fs::read_to_string(out.join("small_a.csv")).unwrap();
    let mean = small.lines().last().unwrap();
    // rows a, b, c are at or below 5%
    let dice: f64 = mean.split(',').nth(2).unwrap().parse().unwrap();
    assert!((dice - (0.5 + 0.7 + 0.6) / 3.0).abs() < 1e-12, "{mean}");
    assert_eq!(small.lines().count(), 1 + 3 + 1);
}

#[test]
fn analyze_reports_on_different_grids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture_report(dir.path(), "a.csv", &ROWS);
    let b = fixture_report(dir.path(), "b.csv", &ROWS[..3]);
    let out = caranet(&["analyze", "--reports", s(&a), s(&b), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grids differ"));
}

#[test]
fn analyze_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture_report(dir.path(), "a.csv", &ROWS);
    let b = fixture_report(dir.path(), "b.csv", &ROWS.map(|(id, r, d)| (id, r, d * 0.9)));
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&caranet(&["analyze", "--reports", s(&a), s(&b), "--intervals", "3", "--cutoff", "0.1", "--out", s(&out)]));
        out
    };
    let (x, y) = (run("x"), run("y"));
    for f in ["curve_a.csv", "curve_b.csv", "comparison.csv", "comparison_sums.csv", "small_a.csv", "small_b.csv", "comparison.svg"] {
        assert_eq!(fs::read(x.join(f)).unwrap(), fs::read(y.join(f)).unwrap(), "{f}");
    }
    let z = dir.path().join("z");
    ok(&caranet(&["analyze", "--config", s(&x.join("resolved.cfg")), "--out", s(&z)]));
    assert_eq!(fs::read(x.join("comparison.csv")).unwrap(), fs::read(z.join("comparison.csv")).unwrap());
}
