use std::fs;
use std::path::Path;
use std::process::Command;

use seqot::cli::{self, RunManifest, MANIFEST_FILE};

fn seqot(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_seqot"))
        .args(args)
        .output()
        .expect("run binary")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(out: &Path, seed: &str) -> std::process::Output {
    seqot(&[
        "gen-data",
        "--out",
        p(out),
        "--seed",
        seed,
        "--languages",
        "4",
        "--pivot",
        "L0",
        "--train-per-dir",
        "30",
        "--valid-sentences",
        "4",
        "--test-sentences",
        "4",
        "--max-len",
        "6",
        "--concept-vocab",
        "10",
    ])
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::read(&dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn gen_data_writes_every_direction_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(gen(&a, "7").status.success());
    assert!(gen(&b, "7").status.success());
    let train_files = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("train."))
        .count();
    let test_files = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("test."))
        .count();
    assert_eq!(train_files, 2 * 6);
    assert_eq!(test_files, 2 * 12);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.seed, Some(7));
    ma.verify(&a).unwrap();
    assert_eq!(
        cli::directory_checksum(&a).unwrap(),
        cli::directory_checksum(&b).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    // missing seed
    assert_eq!(seqot(&["gen-data", "--out", p(&out)]).status.code(), Some(1));
    // unknown flag
    assert_eq!(
        seqot(&["gen-data", "--out", p(&out), "--seed", "1", "--bogus", "2"])
            .status
            .code(),
        Some(1)
    );
    // too few languages
    assert_eq!(
        seqot(&["gen-data", "--out", p(&out), "--seed", "1", "--languages", "2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(seqot(&["nonsense"]).status.code(), Some(1));
    assert_eq!(seqot(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_corpus_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let status = seqot(&[
        "train",
        "--data",
        p(&tmp.path().join("nothing")),
        "--out",
        p(&tmp.path().join("run")),
        "--seed",
        "1",
    ])
    .status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_eval_export_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "3").status.success());
    let config = tmp.path().join("run.conf");
    fs::write(
        &config,
        "# tiny run\nd_model = 16\nn-heads = 2\nd-ff = 32\nmax-len = 10\ntotal-steps = 50\npretrain-steps = 4\nbatch-sentences = 4\neval-every = 4\neval-sentences = 2\n",
    )
    .unwrap();
    let train = |out: &Path, objective: &str| {
        seqot(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(out),
            "--seed",
            "11",
            "--config",
            p(&config),
            "--objective",
            objective,
            "--total-steps",
            "8",
        ])
    };
    let run = tmp.path().join("run");
    let o = train(&run, "ce+ot+at");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&run);
    m.verify(&run).unwrap();
    // flags override the config file, which overrides defaults
    assert_eq!(m.config["total_steps"], 8);
    assert_eq!(m.config["model"]["d_model"], 16);
    assert_eq!(m.config["objective"], "ce_ot_at");
    assert_eq!(
        m.corpus_checksum.as_deref(),
        Some(cli::directory_checksum(&data).unwrap().as_str())
    );
    let summary = fs::read_to_string(run.join(cli::SUMMARY_FILE)).unwrap();
    assert_eq!(
        summary.lines().next().unwrap(),
        "step,direction,kind,accuracy,off_target_rate,consistency,ce,ot,at,total"
    );
    assert_eq!(
        fs::read_to_string(run.join(cli::METRICS_FILE)).unwrap().lines().count(),
        2
    );

    let again = tmp.path().join("again");
    assert!(train(&again, "ce+ot+at").status.success());
    for a in &m.artifacts {
        assert_eq!(
            fs::read(run.join(&a.path)).unwrap(),
            fs::read(again.join(&a.path)).unwrap(),
            "{}",
            a.path
        );
    }
    assert_eq!(train(&tmp.path().join("bad"), "ce+xx").status.code(), Some(1));

    let ckpt = run.join(cli::CHECKPOINT_FILE);
    let ev = tmp.path().join("eval");
    let o = seqot(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&ev),
        "--split",
        "valid",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["directions"].as_array().unwrap().len(), 12);

    let ex = tmp.path().join("reprs");
    let o = seqot(&[
        "export-reprs",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&ex),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(ex.join("reprs.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 2 + 16);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 4);
    for sentence in 0..4 {
        let mut langs: Vec<&str> = rows
            .iter()
            .filter(|r| r[0] == sentence.to_string())
            .map(|r| r[1])
            .collect();
        langs.sort();
        assert_eq!(langs, vec!["L0", "L1", "L2", "L3"]);
    }
    let ex2 = tmp.path().join("reprs2");
    assert!(seqot(&[
        "export-reprs",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&ex2)
    ])
    .status
    .success());
    assert_eq!(text, fs::read_to_string(ex2.join("reprs.csv")).unwrap());
    assert_eq!(
        seqot(&[
            "export-reprs",
            "--data",
            p(&data),
            "--checkpoint",
            p(&tmp.path().join("none.bin")),
            "--out",
            p(&ex2)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn ot_bench_checks_the_bound_inline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = seqot(&["ot-bench", "--out", p(&out), "--seed", "4", "--instances", "40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    manifest(&out).verify(&out).unwrap();
    let mut r = csv::Reader::from_path(out.join("ot_bench.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 40);
    for row in &rows {
        let f = |name: &str| row[col(name)].parse::<f64>().unwrap();
        assert!(f("relaxed") <= f("exact") + 1e-9);
        if &row[col("kind")] == "identical" {
            assert_eq!(f("exact"), 0.0);
            assert_eq!(f("relaxed"), 0.0);
            assert!(f("sinkhorn").abs() < 1e-9 && f("ipot").abs() < 1e-9);
        }
        if &row[col("m")] == "1" {
            assert!((f("relaxed") - f("exact")).abs() < 1e-12);
        }
    }
}
