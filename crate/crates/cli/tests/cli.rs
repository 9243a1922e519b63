use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vulab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vulab"));
    cmd.args(args).env_remove("VULAB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_in(sub: &str, config: &Path, out: &Path) -> Output {
    vulab(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], &[])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn payloads(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "metadata.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn usage_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(vulab(&["decompose"], &[]).status.code(), Some(3));
    assert_eq!(vulab(&["frobnicate", "--config", "x.json"], &[]).status.code(), Some(3));
    let missing = tmp.path().join("nope.json");
    assert_eq!(vulab(&["decompose", "--config", missing.to_str().unwrap()], &[]).status.code(), Some(3));

    let bad = write_config(tmp.path(), "bad.json", r#"{"problem": "abs_diff", "radii": {"eps": -0.5}}"#);
    let out = vulab(&["decompose", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radii.eps"));

    let unknown = write_config(tmp.path(), "unknown.json", r#"{"problem": "no_such_builtin"}"#);
    let out = vulab(&["decompose", "--config", unknown.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("problem"));

    let ok = write_config(tmp.path(), "ok.json", r#"{"problem": "abs_diff"}"#);
    let out = vulab(&["decompose", "--config", ok.to_str().unwrap()], &[("VULAB_THREADS", "0")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn decompose_reports_the_subspaces_and_the_base_point_note() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "crossing_max"}"#);
    let out = tmp.path().join("out");
    let o = run_in("decompose", &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let rep = read_json(&out.join("decompose.json"));
    assert_eq!(rep["schema_version"], "1");
    assert_eq!(rep["data"]["dim_u"], 1);
    let u = rep["data"]["frame"]["u_basis"][0].as_array().unwrap();
    // the sign of a basis vector is arbitrary
    assert!((u[0].as_f64().unwrap().abs() - 1.0).abs() <= 1e-8);
    assert!(u[1].as_f64().unwrap().abs() <= 1e-8);
    assert!(rep["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("crossing_max")));

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["schema_version"], "1");
    assert_eq!(manifest["status"], "pass");
    assert_eq!(manifest["reports"][0], "decompose.json");
    assert!(out.join("decompose_generators.csv").exists());
    let meta = read_json(&out.join("metadata.json"));
    assert!(meta["started"].is_string() && meta["finished"].is_string());
}

#[test]
fn failed_invariant_exits_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"problem": "crossing_max", "tolerances": {"c11_refinement": 0.0}}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run_in("manifold", &cfg, &out).status.code(), Some(1));
    assert_eq!(read_json(&out.join("manifest.json"))["exit_code"], 1);
}

#[test]
fn flagged_trace_nodes_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "crossing_max", "radii": {"eps_v": 1e-6}}"#);
    let out = tmp.path().join("out");
    assert_eq!(run_in("manifold", &cfg, &out).status.code(), Some(2));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "inconclusive");
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "abs_plus_quad"}"#);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = cfg.to_str().unwrap();
    let oa = vulab(&["all", "--config", c, "--out", a.to_str().unwrap()], &[]);
    let ob = vulab(&["all", "--config", c, "--out", b.to_str().unwrap()], &[("VULAB_THREADS", "1")]);
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(ob.status.code(), Some(0));
    let (pa, pb) = (payloads(&a), payloads(&b));
    assert!(pa.len() >= 13, "{:?}", pa.keys());
    assert_eq!(pa.keys().collect::<Vec<_>>(), pb.keys().collect::<Vec<_>>());
    for (name, bytes) in &pa {
        assert!(bytes == &pb[name], "{name} differs between runs");
    }
    assert_eq!(read_json(&b.join("metadata.json"))["threads"], 1);
}

#[test]
fn manifest_lists_every_check_exactly_once() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "four_quadrant_max"}"#);
    let out = tmp.path().join("out");
    assert_eq!(run_in("all", &cfg, &out).status.code(), Some(0));
    let manifest = read_json(&out.join("manifest.json"));
    let entries: Vec<(String, String, String)> = manifest["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            (
                c["campaign"].as_str().unwrap().to_string(),
                c["check"].as_str().unwrap().to_string(),
                c["status"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    let mut expected = Vec::new();
    for name in manifest["reports"].as_array().unwrap() {
        let rep = read_json(&out.join(name.as_str().unwrap()));
        for c in rep["checks"].as_array().unwrap() {
            let status = c["status"].as_str().unwrap().to_string();
            assert!(["pass", "fail", "inconclusive", "skipped"].contains(&status.as_str()));
            if status == "skipped" {
                assert!(c["reason"].is_string());
            }
            expected.push((rep["campaign"].as_str().unwrap().to_string(), c["check"].as_str().unwrap().to_string(), status));
        }
    }
    assert_eq!(entries, expected);
    let keys: std::collections::BTreeSet<_> = entries.iter().map(|(a, b, _)| (a, b)).collect();
    assert_eq!(keys.len(), entries.len());
    assert_eq!(manifest["reports"].as_array().unwrap().len(), 6);
}

#[test]
fn subjet_campaign_agrees_with_the_closed_form_rule() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "abs_diff"}"#);
    let out = tmp.path().join("out");
    assert_eq!(run_in("subjet", &cfg, &out).status.code(), Some(0));
    let rep = read_json(&out.join("subjet.json"));
    assert_eq!(rep["data"]["closed_form"]["total"], 200);
    assert_eq!(rep["data"]["closed_form"]["agree"], 200);
    assert!(rep["data"]["closed_form"]["disagreements"].as_array().unwrap().is_empty());
    assert!(out.join("subjet_profile.csv").exists());
}

#[test]
fn manifold_campaign_on_abs_plus_quad() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"problem": "abs_plus_quad"}"#);
    let out = tmp.path().join("out");
    assert_eq!(run_in("manifold", &cfg, &out).status.code(), Some(0));
    assert_eq!(read_json(&out.join("manifest.json"))["status"], "pass");
    let rep = read_json(&out.join("manifold.json"));
    let l = rep["data"]["c11"]["lipschitz"].as_f64().unwrap();
    assert!((l - 2.0).abs() <= 1e-6, "lipschitz estimate {l}");
    let csv = fs::read_to_string(out.join("manifold_trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 31);
}

#[test]
fn problem_files_resolve_against_the_config_and_output_dir_defaults_to_config() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("problems")).unwrap();
    fs::write(
        tmp.path().join("problems/kink.json"),
        r#"{"name": "kink", "dim": 2, "kind": "max_of_smooth",
            "pieces": [{"type": "affine", "a": [1.0, -1.0]}, {"type": "affine", "a": [-1.0, 1.0]}],
            "flags": {"convex": true}}"#,
    )
    .unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"problem": "problems/kink.json", "output_dir": "results", "campaign": ["decompose", "lagrangian"]}"#,
    );
    let o = vulab(&["all", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("results");
    let rep = read_json(&out.join("decompose.json"));
    assert_eq!(rep["problem"], "kink");
    assert_eq!(rep["data"]["dim_u"], 1);
    assert!(out.join("lagrangian.json").exists());
    assert!(!out.join("manifold.json").exists());
}
