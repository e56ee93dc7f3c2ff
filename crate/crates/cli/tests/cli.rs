use std::path::Path;
use std::process::{Command, Output};

fn qosdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qosdp"))
        .args(args)
        .env_remove("QOSDP_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const NO_GUARANTEED: &str = r#"{
  "link": {"capacity_bps": 1000000000},
  "profiles": [{"five_qi": 9, "resource_type": "NON_GBR", "priority_level": 90,
                "pdb_ms": 300, "cn_pdb_ms": 20, "per": 1e-6}],
  "port_map": {"ranges": [{"lo": 20000, "hi": 20999, "five_qi": 9}]},
  "meters": {"entries": [{"five_qi": 9, "pir_bps": 500000000, "pbs_bytes": 625000}]},
  "flows": [{"teid": 1, "five_qi": 9, "rate_bps": 100000000, "frame_size": 1500}],
  "duration_ms": 20
}"#;

#[test]
fn run_high_congestion_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r1");
    let o = qosdp(&[
        "run", "--preset", "high-congestion", "--scale", "10", "--seed", "1", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["flows.csv", "queues.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let ratio = summary["offered_load_ratio"].as_f64().unwrap();
    assert!((ratio - 1.14).abs() < 0.01, "ratio {ratio}");
    let header = std::fs::read_to_string(out.join("flows.csv")).unwrap();
    assert!(header.starts_with(
        "flow_id,five_qi,resource_type,sent_pkts,sent_bytes,meter_drops,queue_drops,delivered_bytes,throughput_bps,loss_rate,pdb_lost\n"
    ));
}

#[test]
fn same_invocation_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        let o = qosdp(&[
            "run", "--preset", "appendix-baseline", "--scale", "10", "--mode", "baseline",
            "--format", "json", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    for f in ["flows.json", "queues.json", "summary.json"] {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        let b = std::fs::read(outs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn check_rejects_overcommitted_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = qosdp(&["preset", "appendix-baseline"]);
    assert!(o.status.success());
    let mut doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // 16 flows committed at 500 Mbps against a 5 Gbps link.
    doc["link"]["capacity_bps"] = 5_000_000_000u64.into();
    doc.as_object_mut().unwrap().remove("queues");
    let path = write_scenario(dir.path(), &doc.to_string());
    let o = qosdp(&["check", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("by 3000000000 bps"), "{err}");
    assert!(stdout(&o).contains("REJECT"));
}

#[test]
fn check_admits_preset() {
    let o = qosdp(&["check", "--preset", "functional-low", "--scale", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ADMIT"));
}

#[test]
fn analyze_without_guaranteed_flows_leaves_whole_link() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), NO_GUARANTEED);
    let o = qosdp(&["analyze", "--scenario", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["outputs"]["delta_r"], 1_000_000_000u64);
    assert_eq!(report["outputs"]["r_h"], 0);
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), r#"{"link": {"capacity_bps": 1}, "colour": 3}"#);
    let o = qosdp(&["run", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(1));
    let o = qosdp(&["run", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_error_prints_help_to_stderr() {
    let o = qosdp(&["run"]);
    assert!(!o.status.success());
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn list_presets_names_all() {
    let o = qosdp(&["list-presets"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("high-congestion"));
}

#[test]
fn trace_file_has_one_row_per_delivered_packet() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), NO_GUARANTEED);
    let out = dir.path().join("t");
    let o = qosdp(&["run", "--scenario", &path, "--trace", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let rows = std::fs::read_to_string(out.join("trace.csv")).unwrap().lines().count() - 1;
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rows as u64, summary["packets_delivered"].as_u64().unwrap());
}
