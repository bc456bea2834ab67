use std::path::Path;
use std::process::{Command, Output};

fn gmkcf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmkcf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) {
    let out = gmkcf(
        &[
            "synth",
            "--clusters",
            "3",
            "--per-cluster",
            "10",
            "--dim",
            "4",
            "--separation",
            "8",
            "--out",
            "x.csv",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn fit_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = |out: &'static str| {
        vec![
            "fit",
            "--data",
            "x.csv",
            "--labels",
            "x.labels",
            "--recipe",
            "rbf:1,poly:1:2,cosine",
            "--restarts",
            "3",
            "--out",
            out,
        ]
    };
    for out in ["a.json", "b.json"] {
        let o = gmkcf(&args(out), dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);

    let o = gmkcf(&["table", "a.json", "--out", "t"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("GMKCF"));
    assert!(dir.path().join("t.csv").exists());
}

#[test]
fn config_file_and_cached_bank() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        "data = \"x.csv\"\nlabels = \"x.labels\"\nrecipe = \"rbf:1,cosine\"\nrestarts = 2\n",
    )
    .unwrap();
    let o = gmkcf(
        &["kernels", "--config", "run.toml", "--out", "bank.gmkb"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gmkcf(
        &[
            "fit",
            "--config",
            "run.toml",
            "--bank",
            "bank.gmkb",
            "--algo",
            "kcf",
            "--kernel-index",
            "1",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("r.json")).unwrap();
    assert!(report.contains("KCF(cosine)"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmkcf(&["fit", "--data", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(5));

    std::fs::write(dir.path().join("bad.csv"), "1,2\n3\n").unwrap();
    let o = gmkcf(&["fit", "--data", "bad.csv", "--k", "2"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    synth(dir.path());
    let o = gmkcf(
        &[
            "fit", "--data", "x.csv", "--labels", "x.labels", "--algo", "kcf",
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "kcf on a 12 kernel bank needs an index"
    );

    std::fs::write(dir.path().join("junk.json"), "{").unwrap();
    let o = gmkcf(&["table", "junk.json"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let labelled = [
        "fit",
        "--data",
        "x.csv",
        "--labels",
        "x.labels",
        "--recipe",
        "cosine",
        "--restarts",
        "1",
    ];
    let o = gmkcf(
        &[&labelled[..], &["--out", "with.json"]].concat(),
        dir.path(),
    );
    assert!(o.status.success());
    let o = gmkcf(
        &[
            &labelled[..3],
            &labelled[5..],
            &["--k", "3", "--out", "without.json"],
        ]
        .concat(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gmkcf(&["table", "with.json", "without.json"], dir.path());
    assert_eq!(o.status.code(), Some(6), "mixed metric sets");

    let o = gmkcf(&["fit", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
