use std::process::Command;

fn xrelay() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xrelay"))
}

#[test]
fn run_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"experiment":"FORWARDING_TIME","n_relays":10,"requests":30}"#).unwrap();
    let out = dir.path().join("ft.csv");
    let status = xrelay()
        .args(["run", "forwarding_time", "--seed", "3", "--protocol", "dandelion,clover", "--plot"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("# xrelay experiment=forwarding_time config_sha256="));
    assert!(csv.contains("seeds=3 "));
    assert!(!csv.contains("shortest_ping"));
    let svg = std::fs::read_to_string(out.with_extension("svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn same_seed_same_bytes_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = xrelay()
            .args(["run", "collusion", "--seed", "9", "--relays", "20"])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_relays": 1}"#).unwrap();
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "not json").unwrap();
    let cases: Vec<Vec<std::ffi::OsString>> = vec![
        vec!["run".into(), "nonsense".into(), "--out".into(), out.clone().into()],
        vec!["run".into(), "throughput".into(), "--config".into(), bad.into(), "--out".into(), out.clone().into()],
        vec!["run".into(), "throughput".into(), "--config".into(), garbage.into(), "--out".into(), out.clone().into()],
        vec![
            "run".into(),
            "throughput".into(),
            "--protocol".into(),
            "bogus".into(),
            "--out".into(),
            out.clone().into(),
        ],
        vec!["run".into(), "throughput".into()],
    ];
    for args in cases {
        let status = xrelay().args(&args).status().unwrap();
        assert_eq!(status.code(), Some(2), "{args:?}");
    }
    assert!(!out.exists());
}
