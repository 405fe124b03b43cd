use std::process::{Command, Output};

fn xm3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xm3d")).args(args).output().expect("spawn xm3d")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        let o = xm3d(&["generate", "--n", "300", "--dist", "clustered", "--seed", "9", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    // Header plus 300 inserts plus 300 mixed operations.
    assert_eq!(text.lines().count(), 601);
}

#[test]
fn run_with_verify_passes_on_generated_workload() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    assert!(xm3d(&["generate", "--n", "800", "--seed", "2", "--selectivity", "0.01", "--out", w.to_str().unwrap()])
        .status
        .success());
    let o = xm3d(&["run", "--workload", w.to_str().unwrap(), "--block-size", "32", "--verify"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("PASS ops=1600"), "{}", stdout(&o));

    let o = xm3d(&["run", "--workload", w.to_str().unwrap(), "--block-size", "16", "--fanout-exp", "0.1"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("ops=1600 "), "{out}");
    assert!(out.contains("query: count="), "{out}");
}

#[test]
fn run_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("bad.txt");
    std::fs::write(&w, "I 1 2 3 4\nX 9\n").unwrap();
    let o = xm3d(&["run", "--workload", w.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    std::fs::write(&w, "I 1 2 3 4\nD 5\n").unwrap();
    let o = xm3d(&["run", "--workload", w.to_str().unwrap(), "--verify"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn open_sided_queries_parse() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("open.txt");
    std::fs::write(&w, "I 1 2 3 1\nI 5 5 5 2\nQ * * 3 * * 4\nQ * * * * * *\n").unwrap();
    let o = xm3d(&["run", "--workload", w.to_str().unwrap(), "--block-size", "16", "--verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn scaling_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = xm3d(&["scaling", "--grid", "1024x16", "--queries", "5", "--updates", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,b,opclass,median_io,mean_io,k_mean,fit_term,fit_kappa"));
    // Four query classes, then inserts and deletes.
    assert_eq!(lines.count(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("r2="));

    let o = xm3d(&["scaling", "--grid", "1024"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audit_every_structure() {
    for s in ["full", "ztree", "pst", "sided"] {
        let o = xm3d(&["audit", "--structure", s, "--n", "300", "--ops", "400", "--every", "100", "--block-size", "16"]);
        assert!(o.status.success(), "{s}: {}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("violations=0"), "{s}: {}", stdout(&o));
    }
}
