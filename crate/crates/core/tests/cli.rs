use std::path::Path;
use std::process::{Command, Output};

fn mebface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mebface")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_NET: &[&str] = &["--convs", "2x3", "--hidden", "16", "--dropout", "0", "--crop-size", "15"];

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), stderr(o));
}

#[test]
fn enroll_verify_identify_attack_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let codes = dir.path().join("codes.txt");
    let params = dir.path().join("params.bin");
    let vault = dir.path().join("vault.txt");

    ok(&mebface(&[
        "synth-data",
        "--out",
        p(&data),
        "--users",
        "3",
        "--samples",
        "4",
        "--image-size",
        "16",
        "--jitter",
        "1",
        "--data-seed",
        "5",
    ]));
    ok(&mebface(&["gen-codes", "--data", p(&data), "--code-bits", "64", "--out", p(&codes), "--code-seed", "1"]));
    let codes_text = std::fs::read_to_string(&codes).unwrap();
    assert!(codes_text.starts_with("MEBCODES v1\n"));

    let mut train = vec!["train", "--data", p(&data), "--codes", p(&codes), "--out", p(&params), "--image-size", "16"];
    train.extend_from_slice(TINY_NET);
    train.extend_from_slice(&["--epochs", "2", "--batch-size", "8", "--train-seed", "3"]);
    let o = mebface(&train);
    ok(&o);
    assert!(stdout(&o).contains("epoch=2 train_loss="));

    ok(&mebface(&["enroll", "--codes", p(&codes), "--vault", p(&vault)]));
    assert!(!codes.exists(), "codes file must be deleted after enrollment");
    let vault_text = std::fs::read_to_string(&vault).unwrap();
    for line in codes_text.lines().skip(1) {
        let hex = line.split('\t').nth(1).unwrap();
        assert!(!vault_text.contains(hex));
    }

    let probe = data.join("user001").join("0000.pgm");
    let o = mebface(&[
        "verify",
        "--params",
        p(&params),
        "--vault",
        p(&vault),
        "--user",
        "user001",
        "--image",
        p(&probe),
        "--crop-size",
        "15",
        "--threshold",
        "0",
    ]);
    ok(&o);
    let line = stdout(&o);
    assert!(line.starts_with("user=user001 score="), "{line}");
    assert!(line.contains("/8 "), "score is an exact ratio over 8 crops: {line}");
    assert!(line.trim_end().ends_with("decision=accept"));

    let o = mebface(&[
        "verify",
        "--params",
        p(&params),
        "--vault",
        p(&vault),
        "--user",
        "mallory",
        "--image",
        p(&probe),
        "--crop-size",
        "15",
    ]);
    assert_eq!(o.status.code(), Some(5));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("kind=unknown-user") && err.contains("unknown user"), "{err}");

    let o =
        mebface(&["identify", "--params", p(&params), "--vault", p(&vault), "--image", p(&probe), "--crop-size", "15"]);
    ok(&o);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.starts_with("rank=1 user="));

    let csv = dir.path().join("attack.csv");
    let o = mebface(&[
        "attack-sim",
        "--params",
        p(&params),
        "--vault",
        p(&vault),
        "--probes",
        "4",
        "--crop-size",
        "15",
        "--attack-seed",
        "2",
        "--out",
        p(&csv),
    ]);
    ok(&o);
    assert!(stdout(&o).starts_with("probes=4 users=3 comparisons=12 "));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 12);
}

#[test]
fn missing_and_corrupt_files_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = mebface(&["enroll", "--codes", p(&missing), "--vault", p(&dir.path().join("v.txt"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error kind=io code=4 "));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "not a codebook\n").unwrap();
    let o = mebface(&["enroll", "--codes", p(&bad), "--vault", p(&dir.path().join("v.txt"))]);
    assert_eq!(o.status.code(), Some(6));
}

fn evaluate_args<'a>(report: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "evaluate",
        "--splits",
        "1",
        "--seed",
        "3",
        "--users",
        "3",
        "--samples",
        "5",
        "--image-size",
        "16",
        "--jitter",
        "1",
        "--code-bits",
        "8",
        "--train-per-user",
        "3",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--attack-probes",
        "2",
        "--report",
        report,
    ];
    v.extend_from_slice(TINY_NET);
    v.extend_from_slice(extra);
    v
}

#[test]
fn evaluate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = mebface(&evaluate_args(p(&a), &[]));
    let ob = mebface(&evaluate_args(p(&b), &[]));
    ok(&oa);
    ok(&ob);
    assert_eq!(oa.stdout, ob.stdout);
    for f in ["report.txt", "scores.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let report = std::fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(report.starts_with("MEBREPORT v1\n"));
    assert!(report.contains("gar_at_zero_far.std = 0.0\n"));
    assert!(report.contains("attack.count = 6\n"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    // `probes` belongs to another subcommand and is skipped here.
    std::fs::write(&cfg, "# shared settings\nsplits = 2\nattack-probes = 1\nprobes = 5\n").unwrap();
    let r1 = dir.path().join("r1");
    let mut args = evaluate_args(p(&r1), &["--config", p(&cfg)]);
    // Drop the command-line --splits and --attack-probes so the file's values apply.
    let pos = args.iter().position(|a| *a == "--splits").unwrap();
    args.drain(pos..pos + 2);
    let pos = args.iter().position(|a| *a == "--attack-probes").unwrap();
    args.drain(pos..pos + 2);
    ok(&mebface(&args));
    let text = std::fs::read_to_string(r1.join("report.txt")).unwrap();
    assert!(text.contains("splits = 2\n") && text.contains("attack.count = 3\n"), "{text}");

    let r2 = dir.path().join("r2");
    ok(&mebface(&evaluate_args(p(&r2), &["--config", p(&cfg)])));
    let text = std::fs::read_to_string(r2.join("report.txt")).unwrap();
    assert!(text.contains("splits = 1\n") && text.contains("attack.count = 6\n"), "{text}");
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    for body in ["colour = blue\n", "epochs = many\n", "this line has no equals sign\n"] {
        std::fs::write(&cfg, body).unwrap();
        let o = mebface(&["gradient-check", "--config", p(&cfg), "--cases", "1"]);
        if body.starts_with("epochs") {
            // `epochs` is not a gradient-check flag; it is skipped.
            ok(&o);
            let o = mebface(&["evaluate", "--config", p(&cfg)]);
            assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
        } else {
            assert_eq!(o.status.code(), Some(3), "{body}: {}", stderr(&o));
        }
        assert_eq!(stderr(&o).lines().count(), usize::from(!o.status.success()));
    }
    let o = mebface(&["gradient-check", "--config", p(&dir.path().join("absent.cfg"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gradient_check_subcommand() {
    let o = mebface(&["gradient-check", "--seed", "7"]);
    ok(&o);
    let out = stdout(&o);
    let err: f64 = out.split_whitespace().next().unwrap().trim_start_matches("max_rel_error=").parse().unwrap();
    assert!(err < 1e-4);
}

#[test]
fn help_lists_subcommands() {
    let o = mebface(&["--help"]);
    ok(&o);
    let out = stdout(&o);
    for sub in
        ["synth-data", "gen-codes", "train", "enroll", "verify", "identify", "evaluate", "attack-sim", "gradient-check"]
    {
        assert!(out.contains(sub), "{sub}");
    }
}
