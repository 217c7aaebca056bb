use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn swinlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swinlstm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = swinlstm(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "variant = b
embed_dim = 8
depths = 2
window_size = 4
heads = 2
mlp_ratio = 2
batch_size = 2
learning_rate = 0.001
";

fn write_config(dir: &Path, side: usize, s: usize, epochs: usize) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!("{TINY}height = {side}\nwidth = {side}\nframes_per_phase = {s}\nepochs = {epochs}\n"),
    )
    .unwrap();
    path
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.swds"), dir.path().join("b.swds"));
    let line = ok(&[
        "gen-data",
        "--count",
        "16",
        "--seed",
        "7",
        "--frames",
        "4",
        "--out",
        p(&a),
    ]);
    assert!(line.contains("16 sequences") && line.contains("seed 7"), "{line}");
    ok(&[
        "gen-data",
        "--count",
        "16",
        "--seed",
        "7",
        "--frames",
        "4",
        "--out",
        p(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.swds");
    ok(&[
        "gen-data",
        "--count",
        "16",
        "--seed",
        "8",
        "--frames",
        "4",
        "--out",
        p(&c),
    ]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(swinlstm(&["gen-data", "--count", "2"]).status.code(), Some(2));
    assert_eq!(swinlstm(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn config_errors_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        "embed_dim = 7\nheads = 2\nwindow_size = 3\nlearning_rate = -1\nno_such_key = 3\n",
    )
    .unwrap();
    let out = swinlstm(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&dir.path().join("missing.swds")),
        "--out-dir",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["embed_dim 7", "window size 3", "learning_rate", "no_such_key"] {
        assert!(err.contains(needle), "`{needle}` missing from:\n{err}");
    }
    assert_eq!(err.matches("dim 7 is not divisible by 2 heads").count(), 1, "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn selfcheck_passes_and_catches_a_broken_rule() {
    let out = swinlstm(&["selfcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("tanh"));
    let out = swinlstm(&["selfcheck", "--corrupt-backward", "tanh"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn train_eval_predict_at_moving_mnist_size() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("train.swds");
    ok(&["gen-data", "--count", "2", "--seed", "1", "--out", p(&data)]);
    let cfg = write_config(d, 64, 10, 1);
    let run = d.join("run");
    let log = ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--val",
        p(&data),
        "--out-dir",
        p(&run),
    ]);
    assert!(log.contains("epoch 1") && log.contains("val_mse"), "{log}");
    let ckpt = run.join("last.swls");
    assert!(ckpt.exists() && run.join("log.csv").exists() && run.join("config.txt").exists());

    let report = d.join("eval.csv");
    let out = ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--horizon",
        "10",
        "--report",
        p(&report),
    ]);
    assert!(out.contains("SSIM"), "{out}");
    let csv = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let mut want: Vec<String> = (0..10).map(|t| t.to_string()).collect();
    want.push("mean".into());
    assert_eq!(rows, want, "{csv}");
    let long = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--horizon", "40"]);
    assert!(long.contains("note"), "{long}");

    let dump = d.join("frames");
    ok(&[
        "predict",
        "--ckpt",
        p(&ckpt),
        "--input",
        p(&data),
        "--index",
        "1",
        "--dump-dir",
        p(&dump),
        "--dump-states",
    ]);
    for t in 0..10 {
        for prefix in ["input", "truth", "pred", "hid", "cell"] {
            assert!(dump.join(format!("{prefix}_{t:02}.pgm")).exists(), "{prefix}_{t:02}");
        }
    }
    assert!(!dump.join("pred_10.pgm").exists());
    let pgm = fs::read(dump.join("pred_00.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5 64 64 255\n"));
    assert_eq!(pgm.len(), 13 + 64 * 64);
    let state = fs::read(dump.join("hid_00.pgm")).unwrap();
    assert!(state.starts_with(b"P5 32 32 255\n"));

    let out = swinlstm(&[
        "predict",
        "--ckpt",
        p(&ckpt),
        "--input",
        p(&data),
        "--index",
        "2",
        "--dump-dir",
        p(&dump),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("train.swds");
    ok(&[
        "gen-data",
        "--count",
        "4",
        "--frames",
        "6",
        "--canvas",
        "16",
        "--seed",
        "3",
        "--out",
        p(&data),
    ]);
    let cfg = write_config(d, 16, 3, 4);

    let full = d.join("full");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out-dir", p(&full)]);
    let part = d.join("part");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out-dir",
        p(&part),
        "--epochs",
        "2",
    ]);
    let ckpt = part.join("last.swls");
    let out = ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out-dir",
        p(&part),
        "--resume",
        p(&ckpt),
    ]);
    assert!(out.contains("resuming"), "{out}");
    assert_eq!(
        fs::read_to_string(part.join("log.csv")).unwrap(),
        fs::read_to_string(full.join("log.csv")).unwrap()
    );

    let other = d.join("other.cfg");
    fs::write(
        &other,
        fs::read_to_string(&cfg)
            .unwrap()
            .replace("embed_dim = 8", "embed_dim = 16"),
    )
    .unwrap();
    let out = swinlstm(&[
        "train",
        "--config",
        p(&other),
        "--data",
        p(&data),
        "--out-dir",
        p(&part),
        "--resume",
        p(&ckpt),
    ]);
    assert_ne!(out.status.code(), Some(0));
}
