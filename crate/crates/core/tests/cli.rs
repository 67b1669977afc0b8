use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisedesign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

// Trimmed toy8 design: small enough to run twice in a test.
fn small_design(dir: &Path) -> std::path::PathBuf {
    let base = std::fs::read_to_string(configs().join("design_toy8.toml")).unwrap();
    let cfg = base
        .replace("n_samples = 400", "n_samples = 64")
        .replace("epochs = 30", "epochs = 2")
        .replace("max_iter = 15", "max_iter = 3");
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn unknown_keys_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "sede = 3\n[train]\nepochz = 4\n[physic]\nkind = \"x\"\n").unwrap();
    let out = run(&["design", "--config", path.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("status=error kind=config"), "{err}");
    for key in ["sede", "epochz", "physic"] {
        assert!(err.contains(key), "{key} missing from:\n{err}");
    }
}

#[test]
fn bad_values_and_commands_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nema_decay = 1.5\n[model]\noutput = \"x0\"\n").unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("ema_decay") && err.contains("model.output"), "{err}");

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("unknown command"));

    let cfg = configs().join("gmm_demo.toml");
    let out = run(&["design", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, format!("command = \"sample\"\n[model]\ncheckpoint = \"{}\"\n", dir.path().join("nope.ckpt").display())).unwrap();
    let out = run(&["sample", "--config", path.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("status=error kind=io"));
}

#[test]
fn gradcheck_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("gradcheck.toml");
    let out = run(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", text(&out.stderr));
    assert!(stdout.contains("status=ok"));
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn design_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_design(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&["design", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("status=ok"));
    }
    for f in ["config.toml", "VERSION", "summary.txt", "w_opt.csv", "density.csv", "stage_0.csv"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let version = std::fs::read_to_string(a.join("VERSION")).unwrap();
    assert!(version.starts_with(&format!("noisedesign {}", env!("CARGO_PKG_VERSION"))));

    let mut csvs = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name.ends_with(".csv") {
            csvs += 1;
            let x = std::fs::read(a.join(name)).unwrap();
            let y = std::fs::read(b.join(name)).unwrap();
            assert!(x == y, "{name} differs between runs");
        }
    }
    assert!(csvs >= 6);

    // the saved config reloads to the same run
    let again = dir.path().join("c");
    let out = run(&["design", "--config", a.join("config.toml").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(std::fs::read(a.join("w_opt.csv")).unwrap(), std::fs::read(again.join("w_opt.csv")).unwrap());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_design(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["design", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run(&["design", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "9"]);
    assert_ne!(std::fs::read(a.join("x0.csv")).unwrap(), std::fs::read(b.join("x0.csv")).unwrap());
    assert!(std::fs::read_to_string(b.join("config.toml")).unwrap().contains("seed = 9"));
}
