use std::path::Path;
use std::process::{Command, Output};

fn trajprog(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajprog"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path) {
    let o = trajprog(
        dir,
        &[
            "simenv",
            "gen",
            "--tasks",
            "4",
            "--per-task",
            "6",
            "--out",
            "c.jsonl",
            "--truth",
            "t.csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn lcs_mode_without_library_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let o = trajprog(
        dir.path(),
        &[
            "label", "--in", "c.jsonl", "--mode", "lcs", "--out", "l.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]: "));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!dir.path().join("l.jsonl").exists());
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["label", "--in", "c.jsonl", "--mode", "fancy", "--out", "x"],
        vec!["frobnicate"],
        vec![
            "simenv",
            "gen",
            "--tasks",
            "0",
            "--per-task",
            "1",
            "--out",
            "a",
            "--truth",
            "b",
        ],
        vec![
            "--threads",
            "0",
            "label",
            "--in",
            "c",
            "--mode",
            "env",
            "--out",
            "x",
        ],
    ] {
        let o = trajprog(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}");
    }
}

#[test]
fn invalid_data_exits_3_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.jsonl"),
        "{\"traj_id\":\"a\",\"goal_id\":\"g\",\"instruction\":\"i\",\"success\":true,\"steps\":[{\"action\":{\"kind\":\"CLICK\"},\"observation\":\"s\"}]}\n",
    )
    .unwrap();
    let o = trajprog(
        dir.path(),
        &[
            "label",
            "--in",
            "bad.jsonl",
            "--mode",
            "linear",
            "--out",
            "l.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[data]: "));
    assert!(!dir.path().join("l.jsonl").exists());
}

#[test]
fn missing_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = trajprog(
        dir.path(),
        &[
            "recipes",
            "build",
            "--in",
            "absent.jsonl",
            "--out",
            "lib.json",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[io]: "));
}

#[test]
fn unknown_config_key_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    std::fs::write(
        dir.path().join("run.cfg"),
        "theta = 0.5\n# note\nthetta = 1\n",
    )
    .unwrap();
    let o = trajprog(
        dir.path(),
        &[
            "--config", "run.cfg", "recipes", "build", "--in", "c.jsonl", "--out", "lib.json",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn config_sets_theta_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "theta = 0.7\n").unwrap();
    let build = |extra: &[&str]| {
        let mut args = vec![
            "--config", "run.cfg", "recipes", "build", "--in", "c.jsonl", "--out", "lib.json",
        ];
        args.extend_from_slice(extra);
        let o = trajprog(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(dir.path().join("lib.json")).unwrap()
    };
    assert!(build(&[]).contains("\"theta\": 0.7"));
    assert!(build(&["--theta", "0.65"]).contains("\"theta\": 0.65"));
}

#[test]
fn reward_sources_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    for source in ["estimator", "labels", "remote"] {
        let o = trajprog(
            dir.path(),
            &[
                "reward", "--in", "c.jsonl", "--source", source, "--out", "r.jsonl",
            ],
        );
        assert_eq!(o.status.code(), Some(2), "{source}");
    }
}

#[test]
fn unreachable_remote_scorer_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("http://127.0.0.1:{port}/score");
    let o = trajprog(
        dir.path(),
        &[
            "reward",
            "--in",
            "c.jsonl",
            "--source",
            "remote",
            "--endpoint",
            &endpoint,
            "--out",
            "r.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[remote]: "));
    assert!(!dir.path().join("r.jsonl").exists());
}

#[test]
fn eval_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let d = dir.path();
    for args in [
        vec![
            "label",
            "--in",
            "c.jsonl",
            "--mode",
            "env",
            "--out",
            "env.jsonl",
        ],
        vec![
            "train",
            "--labels",
            "env.jsonl",
            "--corpus",
            "c.jsonl",
            "--epochs",
            "50",
            "--out",
            "m.json",
        ],
        vec![
            "eval",
            "--corpus",
            "c.jsonl",
            "--truth",
            "t.csv",
            "--model",
            "m.json",
            "--labels",
            "env.jsonl",
            "--latency-reps",
            "20",
            "--out-dir",
            "reports",
        ],
    ] {
        let o = trajprog(d, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in ["table2.csv", "table3.csv", "latency.csv", "summary.txt"] {
        assert!(d.join("reports").join(f).exists(), "{f}");
    }
    let t2 = std::fs::read_to_string(d.join("reports/table2.csv")).unwrap();
    assert!(t2.starts_with("judge,tp,fn,tn,fp,"));
    assert_eq!(t2.lines().count(), 4);
}
