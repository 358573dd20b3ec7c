use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use mathfuse::run::{parse_run, parse_run_with, ParseOptions};

fn mathfuse(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mathfuse"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mathfuse(args, "");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DENSE: &str =
    "q1 Q0 a 1 0.9 dense\nq1 Q0 b 2 0.5 dense\nq1 Q0 c 3 0.1 dense\nq2 Q0 x 1 2 dense\nq2 Q0 y 2 1 dense\n";
const STRUCTURE: &str = "q1 Q0 c 1 10 struct\nq1 Q0 d 2 5 struct\nq2 Q0 y 1 3 struct\n";

#[test]
fn tokenize_reads_stdin() {
    let out = mathfuse(&["tokenize"], "norm $\\le$ x\nplain\n");
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "norm <le> x\nplain\n");
}

#[test]
fn tokenize_with_custom_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(dir.path(), "t.txt", "rel: \\le\n");
    let out = mathfuse(&["tokenize", "--table", s(&table)], "$\\le$\n");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "<rel>\n");
}

#[test]
fn fuse_every_method_produces_valid_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.run", DENSE);
    let st = write(dir.path(), "s.run", STRUCTURE);
    for method in ["linear", "borda", "combsum", "isr", "logisr", "rrf", "rerank"] {
        let text = ok(&["fuse", s(&d), s(&st), "--method", method]);
        let run = parse_run(&text, None).unwrap();
        assert_eq!(run.run_tag(), "fused");
        assert_eq!(run.num_topics(), 2, "{method}");
    }
    let text = ok(&["fuse", s(&d), s(&st), "--alpha", "1", "--depth", "2"]);
    let run = parse_run(&text, None).unwrap();
    run.validate(Some(2)).unwrap();
    assert_eq!(run.topic("q1").unwrap()[0].doc_id, "a");
}

#[test]
fn fuse_writes_to_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.run", DENSE);
    let st = write(dir.path(), "s.run", STRUCTURE);
    let out = dir.path().join("out.run");
    assert_eq!(ok(&["fuse", s(&d), s(&st), "--method", "rrf", "-o", s(&out)]), "");
    parse_run(&std::fs::read_to_string(out).unwrap(), None).unwrap();
}

#[test]
fn rerank_keeps_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.run", DENSE);
    let st = write(dir.path(), "s.run", STRUCTURE);
    let run = parse_run(&ok(&["rerank", s(&d), s(&st)]), None).unwrap();
    assert_eq!(run.run_tag(), "dense");
    let q1: Vec<&str> = run.topic("q1").unwrap().iter().map(|x| x.doc_id.as_str()).collect();
    assert_eq!(q1, ["c", "a", "b"]);
}

#[test]
fn eval_table_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.run", DENSE);
    let q = write(dir.path(), "qrels", "q1 0 a 2\nq1 0 b 0\nq2 0 y 3\n");
    let table = ok(&["eval", s(&d), s(&q)]);
    assert!(table.contains("NDCG'"));
    assert!(table.contains("mean"));
    let listing = ok(&["eval", s(&d), s(&q), "--listing"]);
    assert!(listing.lines().any(|l| l == "MAP' q1 1.000000"));
    let groups = write(dir.path(), "groups", "q1 easy\nq2 hard\n");
    let grouped = ok(&["eval", s(&d), s(&q), "--groups", s(&groups)]);
    assert!(grouped.contains("easy") && grouped.contains("hard"));
}

#[test]
fn train_then_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let triples = write(
        dir.path(),
        "triples.tsv",
        "sum x\tsum over x\tintegral dx\nintegral dx\tintegral of f dx\tsum over x\n",
    );
    let table = dir.path().join("emb.txt");
    ok(&["train", s(&triples), "--dim", "8", "--steps", "20", "-o", s(&table)]);
    let queries = write(dir.path(), "queries", "t1 sum x\nt2 integral dx\n");
    let passages = write(
        dir.path(),
        "passages",
        "p1 sum over x\np2 integral of f dx\np3 unknown words\n",
    );
    for mode in [["--mode", "dpr"], ["--mode", "colbert"]] {
        let text = ok(&[
            "score",
            s(&queries),
            s(&passages),
            "--embeddings",
            s(&table),
            mode[0],
            mode[1],
        ]);
        let run = parse_run(&text, None).unwrap();
        assert_eq!(run.run_tag(), "dense");
        assert_eq!(run.topic("t1").unwrap()[0].doc_id, "p1");
        assert_eq!(run.topic("t2").unwrap()[0].doc_id, "p2");
    }
}

#[test]
fn tune_writes_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cv2");
    let out = dir.path().join("cv.run");
    let report = ok(&[
        "tune",
        &format!("{fx}/dense.run"),
        &format!("{fx}/structure.run"),
        &format!("{fx}/qrels"),
        "--folds",
        "2",
        "--grid",
        "0.2,0.8",
        "--objective",
        "p@1",
        "-o",
        s(&out),
    ]);
    assert!(report.starts_with("0 0.2 0.000000\n1 0.8 0.500000\n"));
    let run = parse_run(&std::fs::read_to_string(out).unwrap(), None).unwrap();
    assert_eq!(run.run_tag(), "cv-linear");
    assert_eq!(run.num_topics(), 4);
}

#[test]
fn deep_input_needs_truncation_flag() {
    let dir = tempfile::tempdir().unwrap();
    let deep: String = (1..=1200)
        .map(|i| format!("q Q0 d{i} {i} {} t\n", -(i as f64)))
        .collect();
    let a = write(dir.path(), "a.run", &deep);
    let b = write(dir.path(), "b.run", STRUCTURE);
    let refused = mathfuse(&["fuse", s(&a), s(&b)], "");
    assert_eq!(refused.status.code(), Some(1));
    let text = ok(&["fuse", s(&a), s(&b), "--truncate-input", "--method", "rrf"]);
    let run = parse_run_with(&text, &ParseOptions::default()).unwrap();
    assert!(run.topics().all(|(_, e)| e.len() <= 1000));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mathfuse(&["frobnicate"], "").status.code(), Some(2));
    assert_eq!(mathfuse(&["fuse", "only-one.run"], "").status.code(), Some(2));
    assert_eq!(mathfuse(&["fuse", "a", "b", "--depth", "0"], "").status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let out = mathfuse(&["eval", "/nonexistent/run", "/nonexistent/qrels"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
