use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dstau(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dstau"));
    cmd.args(args).env_remove("DSTAU_CACHE_DIR");
    if let Some(dir) = cache {
        cmd.env("DSTAU_CACHE_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn zero_order_is_a_usage_error() {
    let o = dstau(&["expand", "--algebra", "A1", "--order", "0"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--order"));
}

#[test]
fn unknown_algebra_is_rejected() {
    let o = dstau(&["expand", "--algebra", "E6", "--order", "4"], None);
    assert!(!o.status.success());
}

#[test]
fn genus_split_reaches_f3() {
    let v = json(&dstau(&["expand", "--algebra", "A1", "--order", "30"], None));
    assert_eq!(v["q_order"], 5);
    let f3 = v["series"]["F3"].as_array().unwrap();
    assert!(f3.iter().any(|t| t["coeff"] == "1/82944"));
}

#[test]
fn text_and_latex_forms() {
    let t = stdout(&dstau(&["expand", "--algebra", "A1", "--order", "6", "--form", "t", "--format", "text"], None));
    assert!(t.contains("1/12  eps^-2*lambda^6*t_1^3"), "{t}");
    let l = stdout(&dstau(&["expand", "--algebra", "A1", "--order", "6", "--form", "t", "--format", "latex"], None));
    assert!(l.contains("\\frac{1}{12} \\epsilon^{-2} \\lambda^{6} t_{1}^{3}"), "{l}");
}

#[test]
fn gamma_prints_a1_modes_and_closed_form() {
    let o = dstau(&["gamma", "--algebra", "A1", "--levels", "4", "--format", "text"], None);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("z^-6 [0,0]  37182145/127401984  eps^4*lambda^12"), "{s}");
    assert!(s.contains("z^-6 [1,1]  -40415375/127401984  eps^4*lambda^12"));
    assert!(s.contains("closed form:"));
    let v = json(&dstau(&["gamma", "--algebra", "A1", "--levels", "4"], None));
    assert_eq!(v["closed_form"]["passed"], true);
}

#[test]
fn correlators_json_schema() {
    let v = json(&dstau(&["correlators", "--algebra", "A1", "--m", "2", "--order", "24"], None));
    let terms = v["terms"].as_array().unwrap();
    let t = terms.iter().find(|t| t["zeta_exponents"] == serde_json::json!([-1, -5])).unwrap();
    assert_eq!(t["coeff"], "5/32");
    assert_eq!(t["lambda"], 12);
    assert_eq!(t["eps"], 0);
}

#[test]
fn verify_bundled_tables() {
    let o = dstau(&["verify", "--algebra", "A2"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("105 of 105 monomials match"));
    let c2 = stdout(&dstau(&["verify", "--algebra", "C2"], None));
    assert!(c2.contains("ok   eps^2*lambda^3*q_2_3  -3/2560"), "{c2}");
}

#[test]
fn verify_reports_the_corrupted_monomial() {
    let dir = tempfile::tempdir().unwrap();
    let src = include_str!("../../core/data/tables/a2_q.json");
    let mut v: Value = serde_json::from_str(src).unwrap();
    let entry = &mut v["entries"][7];
    let before = entry["coeff"].as_str().unwrap().to_string();
    entry["coeff"] = Value::String(format!("{before}1"));
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let o = dstau(&["verify", "--table", path.to_str().unwrap(), "--format", "json"], None);
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let mism = r["mismatches"].as_array().unwrap();
    assert_eq!(mism.len(), 1);
    assert_eq!(mism[0]["computed"], before);
    assert_eq!(r["notes"].as_array().unwrap().len(), 1);
}

#[test]
fn reductions() {
    let o = dstau(&["reduce", "--parent", "D4", "--child", "B3", "--order", "4", "--format", "json"], None);
    let v = json(&o);
    assert_eq!(v["agrees"], true);
    assert_eq!(v["zeroed_families"], serde_json::json!([4]));
    let o = dstau(&["reduce", "--parent", "A3", "--child", "G2", "--order", "2"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cached_runs_match_uncached_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["expand", "--algebra", "B3", "--order", "28", "--form", "q"];
    let fresh = dstau(&args, None);
    let first = dstau(&args, Some(dir.path()));
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].to_string_lossy().starts_with("gamma-B3-L"));
    let second = dstau(&args, Some(dir.path()));
    assert_eq!(fresh.stdout, first.stdout);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn corrupt_cache_entries_are_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gamma", "--algebra", "A2", "--levels", "2"];
    let clean = dstau(&args, Some(dir.path()));
    let entry = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    std::fs::write(&entry, "{not json").unwrap();
    let again = dstau(&args, Some(dir.path()));
    assert!(again.status.success());
    assert_eq!(clean.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&again.stderr).contains("warning"));
}

#[test]
fn output_is_independent_of_thread_count() {
    let one = dstau(&["--threads", "1", "expand", "--algebra", "A2", "--order", "24"], None);
    let four = dstau(&["--threads", "4", "expand", "--algebra", "A2", "--order", "24"], None);
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
}
