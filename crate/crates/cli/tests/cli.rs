use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morsedisk")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("stdout is a JSON document")
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> String {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const FLOER: &str = r#"
epsilon = 0.1
[manifold]
dim = 1
kind = "flat_torus"
[tree]
encoding = "(1)"
floer_mode = true
[functions]
"0,1" = "FUNCTION"
[[legs]]
index = 1
[[legs]]
index = 0
"#;

#[test]
fn four_leaf_tree_count() {
    let out = run(&["trees", "--d", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().last(), Some("2 trivalent, 3 total"));
}

#[test]
fn tree_listing_as_json() {
    let out = run(&["trees", "-d", "5", "--json"]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["data"]["trivalent"], 5);
    assert_eq!(v["data"]["total"], 11);
}

#[test]
fn verify_is_deterministic_and_passes() {
    let c = config("t1_floer.toml");
    let a = run(&["verify", "--config", &c, "--json"]);
    let b = run(&["verify", "--config", &c, "--json"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a.stdout);
    assert_eq!(v["passed"], true);
    assert_eq!(v["seed"], 101);
}

#[test]
fn seed_flag_overrides_config() {
    let out = run(&["verify", "--config", &config("t1_floer.toml"), "--json", "--seed", "9"]);
    assert_eq!(json(&out.stdout)["seed"], 9);
}

#[test]
fn non_morse_function_names_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(&dir, &FLOER.replace("FUNCTION", "cos(2*pi*x0)^3"));
    let out = run(&["solve", "--config", &c, "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out.stdout);
    assert_eq!(v["command"], "solve");
    assert_eq!(v["error"]["module"], "geometry");
    let msg = v["error"]["message"].as_str().unwrap();
    assert!(msg.contains("degenerate critical point at [0.7"), "{msg}");
}

#[test]
fn config_errors_carry_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(&dir, &FLOER.replace("FUNCTION", "cos(2*pi*x0)").replace("epsilon = 0.1", "epsilon = -0.1"));
    let out = run(&["solve", "--config", &c]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out.stderr);
    assert_eq!(v["error"]["module"], "config");
    assert!(v["error"]["message"].as_str().unwrap().contains("epsilon"));

    let c = write_config(&dir, &FLOER.replace("FUNCTION", "cos(2*pi*y)"));
    let v = json(&run(&["solve", "--config", &c]).stderr);
    assert!(v["error"]["message"].as_str().unwrap().contains("functions.\"0,1\""));
}

#[test]
fn usage_errors_are_structured() {
    let out = run(&["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["module"], "cli");

    let out = run(&["solve", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["module"], "cli");

    let out = run(&["verify", "--config", &config("t1_floer.toml"), "--grid-scale", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["module"], "config");
}

#[test]
fn build_disk_writes_manifest_and_strips() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("disk");
    let out = run(&["build-disk", "--config", &config("t1_floer.toml"), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let strips = report["data"]["manifest"]["strips"].as_array().unwrap();
    assert!(!strips.is_empty());
    for s in strips {
        let csv = std::fs::read_to_string(out_dir.join(s["file"].as_str().unwrap())).unwrap();
        assert!(csv.starts_with("t,s,q0"));
    }
    assert_eq!(report["data"]["vertex_residual"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum::<f64>(), 0.0);
}

#[test]
fn degenerate_config_reports_cokernel() {
    let out = run(&["transversality", "--config", &config("t1_degenerate.toml"), "--json"]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    let e = &v["data"][0];
    assert_eq!(e["tangent"]["transversal"], false);
    assert_eq!(e["d0"]["cokernel_dim"], 1);
    assert_eq!(e["d0_fine"]["cokernel_dim"], 1);
}

#[test]
fn critical_points_and_homology_of_the_circle() {
    let out = run(&["critical", "--function", "cos(2*pi*x0)", "--json"]);
    let v = json(&out.stdout);
    let idx: Vec<u64> = v["data"]["points"].as_array().unwrap().iter().map(|p| p["morse_index"].as_u64().unwrap()).collect();
    assert_eq!(idx, vec![0, 1]);

    let out = run(&["homology", "--function", "cos(2*pi*x0)", "--json"]);
    assert_eq!(json(&out.stdout)["data"]["homology_ranks"], serde_json::json!([1, 1]));
}

#[test]
fn linearize_exports_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["linearize", "--config", &config("t1_floer.toml"), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("d0_triplets.txt")).unwrap();
    assert!(text.starts_with("# rows "));
    assert!(dir.path().join("singular_values.csv").exists());
}
