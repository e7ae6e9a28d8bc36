use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use acmia::io;
use acmia::trace::Label;

fn acmia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acmia"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = acmia(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    acmia(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    ok(&[
        "simulate",
        "--out",
        p(&out),
        "--n-members",
        "24",
        "--n-nonmembers",
        "24",
        "--n-reference",
        "12",
        "--seq-len",
        "40",
    ]);
    out
}

#[test]
fn every_attack_scores_the_simulated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let eval = sim.join("evaluation.jsonl");
    let grid = dir.path().join("grid.jsonl");
    ok(&[
        "lossgrid",
        "--traces",
        p(&eval),
        "--taus",
        "0.5,0.51,2",
        "--out",
        p(&grid),
    ]);

    let runs: Vec<(&str, &Path, Vec<String>)> = vec![
        ("ac", &eval, vec!["--tau".into(), "0.5".into()]),
        (
            "derivac",
            &eval,
            vec!["--deriv-mode".into(), "finite-difference".into()],
        ),
        (
            "normac",
            &eval,
            vec!["--tau".into(), "2".into(), "--all-tokens".into()],
        ),
        ("ac-lossgrid", &grid, vec!["--tau".into(), "0.5".into()]),
        (
            "derivac-lossgrid",
            &grid,
            vec!["--tau".into(), "0.5".into()],
        ),
        ("loss", &eval, vec![]),
        ("mink", &eval, vec!["--k-percent".into(), "30".into()]),
        ("minkpp", &eval, vec![]),
        ("zlib", &eval, vec![]),
        (
            "lowercase",
            &eval,
            vec![
                "--lower-traces".into(),
                p(&sim.join("lowercase.jsonl")).into(),
            ],
        ),
        (
            "ref",
            &eval,
            vec![
                "--ref-traces".into(),
                p(&sim.join("reference.jsonl")).into(),
            ],
        ),
        (
            "dcpdd",
            &eval,
            vec!["--freq".into(), p(&sim.join("freq.csv")).into()],
        ),
    ];
    for (attack, traces, extra) in runs {
        let out = dir.path().join(format!("{attack}.csv"));
        let mut args = vec![
            "score",
            "--traces",
            p(traces),
            "--attack",
            attack,
            "--out",
            p(&out),
        ];
        args.extend(extra.iter().map(String::as_str));
        ok(&args);
        let s = io::read_scores(&out).unwrap();
        assert_eq!(s.len(), 24, "{attack}");
        assert!(s.entries.iter().all(|e| e.score.is_finite()), "{attack}");
        assert!(fs::read_to_string(&out).unwrap().starts_with("# acmia "));
    }
}

#[test]
fn tune_then_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let tune = dir.path().join("tune.json");
    ok(&[
        "tune",
        "--calib",
        p(&sim.join("calibration.jsonl")),
        "--eval",
        p(&sim.join("evaluation.jsonl")),
        "--attack",
        "normac",
        "--grid-log2-min",
        "-1",
        "--grid-log2-max",
        "1",
        "--grid-log2-step",
        "0.5",
        "--out",
        p(&tune),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&tune).unwrap()).unwrap();
    assert_eq!(report["curve"].as_array().unwrap().len(), 5);
    assert_eq!(report["header"]["tool"], "acmia");

    let k = dir.path().join("k.json");
    ok(&[
        "tune",
        "--calib",
        p(&sim.join("calibration.jsonl")),
        "--attack",
        "mink",
        "--k-grid",
        "10,20,50",
        "--out",
        p(&k),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&k).unwrap()).unwrap();
    assert!([10.0, 20.0, 50.0].contains(&report["k_star"].as_f64().unwrap()));

    let scores = dir.path().join("s.csv");
    ok(&[
        "score",
        "--traces",
        p(&sim.join("evaluation.jsonl")),
        "--attack",
        "loss",
        "--out",
        p(&scores),
    ]);
    let (json, roc, dens) = (
        dir.path().join("e.json"),
        dir.path().join("roc.csv"),
        dir.path().join("d.csv"),
    );
    ok(&[
        "eval",
        "--scores",
        p(&scores),
        "--out",
        p(&json),
        "--roc-csv",
        p(&roc),
        "--density-csv",
        p(&dens),
        "--bins",
        "10",
        "--normalization",
        "minmax",
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["n_members"], 12);
    assert!(report["auroc"].as_f64().unwrap() >= 0.0);
    assert_eq!(io::read_density_bins(&dens).unwrap().len(), 10);
    let pts = io::read_roc_points(&roc).unwrap();
    assert_eq!(pts.first(), Some(&(0.0, 0.0)));
    assert_eq!(pts.last(), Some(&(1.0, 1.0)));
}

#[test]
fn decide_is_inclusive_and_eval_skips_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.csv");
    fs::write(
        &scores,
        "# hand written\nid,label,score\na,member,0.5\nb,nonmember,0.25\nc,,0.75\nd,member,1.0\n",
    )
    .unwrap();

    let verdicts = dir.path().join("v.csv");
    ok(&[
        "decide",
        "--scores",
        p(&scores),
        "--lambda",
        "0.5",
        "--out",
        p(&verdicts),
    ]);
    let v = io::read_verdicts(&verdicts).unwrap();
    assert_eq!(
        v.iter().map(|x| x.verdict).collect::<Vec<_>>(),
        [1, 0, 1, 1]
    );

    let out = ok(&[
        "eval",
        "--scores",
        p(&scores),
        "--out",
        p(&dir.path().join("e.json")),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unlabeled"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(report["excluded_unlabeled"], 1);
    assert_eq!(report["auroc"], 1.0);
}

#[test]
fn overlap_rows_follow_input() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let out = dir.path().join("o.csv");
    ok(&[
        "overlap",
        "--traces",
        p(&sim.join("evaluation.jsonl")),
        "--n",
        "7",
        "--out",
        p(&out),
    ]);
    let rows = io::read_overlaps(&out).unwrap();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.overlap)));
    assert!(rows.iter().any(|r| r.label == Label::Nonmember.as_str()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let out = dir.path().join("x.csv");
    let calib = sim.join("calibration.jsonl");
    let reference = sim.join("reference.jsonl");

    assert_eq!(code(&["score", "--bogus"]), 2);
    assert_eq!(
        code(&[
            "score",
            "--traces",
            p(&calib),
            "--attack",
            "nope",
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "score",
            "--traces",
            p(&calib),
            "--attack",
            "ac",
            "--tau",
            "0",
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "score",
            "--traces",
            p(&calib),
            "--attack",
            "ref",
            "--out",
            p(&out)
        ]),
        2
    );
    // Reference traces carry only chosen log-probabilities.
    assert_eq!(
        code(&[
            "score",
            "--traces",
            p(&reference),
            "--attack",
            "ac",
            "--out",
            p(&out)
        ]),
        3
    );
    assert_eq!(
        code(&[
            "tune",
            "--calib",
            p(&calib),
            "--eval",
            p(&calib),
            "--attack",
            "ac",
            "--out",
            p(&out)
        ]),
        4
    );
    assert_eq!(
        code(&[
            "tune",
            "--calib",
            p(&calib),
            "--eval",
            p(&reference),
            "--attack",
            "ac",
            "--out",
            p(&out)
        ]),
        4
    );
    assert_eq!(
        code(&[
            "score",
            "--traces",
            "/nonexistent/t.jsonl",
            "--attack",
            "loss",
            "--out",
            p(&out)
        ]),
        5
    );

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(
        code(&[
            "score",
            "--traces",
            p(&bad),
            "--attack",
            "loss",
            "--out",
            p(&out)
        ]),
        5
    );
}
