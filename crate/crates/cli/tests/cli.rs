use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use serde_json::Value;

use momsos_cli::{run, Cli, CliError, EXIT_CONVERGED, EXIT_UNRESOLVED};

fn root() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", ".."].iter().collect()
}

fn problem(name: &str) -> String {
    root().join("problems").join(name).display().to_string()
}

fn schema(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(root().join("schemas").join(name)).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn invoke(args: &[&str]) -> (Result<i32, CliError>, String) {
    let cli = Cli::try_parse_from(std::iter::once("momsos").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let code = run(&cli, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_example_35_plain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let input = problem("ex35.json");
    let (code, stdout) = invoke(&["solve", &input, "--variant", "plain", "--out", out.to_str().unwrap()]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED);
    assert!(stdout.contains("converged at order 3"), "{stdout}");
    assert!(stdout.contains("moment value") && stdout.contains("sos value"));
    let report = read_json(&out);
    assert_valid(&schema("report.schema.json"), &report);
    let value = report["result"]["value"].as_f64().unwrap();
    assert!((value - 1.0).abs() < 1e-4);
}

#[test]
fn solve_example_43_homogenized() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let input = problem("ex43.json");
    let (code, _) = invoke(&["solve", &input, "--variant", "homogenized", "--out", out.to_str().unwrap()]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED);
    let report = read_json(&out);
    assert_valid(&schema("report.schema.json"), &report);
    let value = report["result"]["value"].as_f64().unwrap();
    assert!((value - 32.0).abs() < 1e-3 * 32.0);
}

#[test]
fn manifest_values() {
    let manifest = read_json(&root().join("problems").join("manifest.json"));
    let validator = schema("report.schema.json");
    let dir = tempfile::tempdir().unwrap();
    for (name, entry) in manifest.as_object().unwrap() {
        let out = dir.path().join(format!("{name}.json"));
        let input = problem(entry["file"].as_str().unwrap());
        let k = entry["order"].as_u64().unwrap().to_string();
        let (code, stdout) = invoke(&[
            "solve",
            &input,
            "--variant",
            entry["variant"].as_str().unwrap(),
            "--kmin",
            &k,
            "--kmax",
            &k,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code.unwrap(), EXIT_CONVERGED, "{name}: {stdout}");
        let report = read_json(&out);
        assert_valid(&validator, &report);
        let want = entry["value"].as_f64().unwrap();
        let tol = entry["value_tol"].as_f64().unwrap();
        let tol = if entry["value_tol_kind"] == "relative" { tol * want.abs() } else { tol };
        let got = report["result"]["value"].as_f64().unwrap();
        assert!((got - want).abs() <= tol, "{name}: {got} vs {want}");

        let atom_tol = entry["atom_tol"].as_f64().unwrap();
        for key in ["atoms", "homogenized_atoms"] {
            let Some(expected) = entry.get(key) else { continue };
            let found: Vec<Vec<f64>> = report["result"][key]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| a["point"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
                .collect();
            assert!(!found.is_empty(), "{name}: no {key}");
            for p in &found {
                let near = expected.as_array().unwrap().iter().any(|e| {
                    let e: Vec<f64> = e.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
                    e.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= atom_tol
                });
                assert!(near, "{name}: {key} point {p:?} is not near an expected one");
            }
        }
    }
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let input = problem("ex46.json");
    for p in [&a, &b] {
        let (code, _) = invoke(&["solve", &input, "--variant", "homogenized", "--out", p.to_str().unwrap()]);
        assert_eq!(code.unwrap(), EXIT_CONVERGED);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn check_kkt_on_example_35_subproblem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.json");
    let input = problem("ex35_sub.json");
    let (code, stdout) = invoke(&["check-kkt", &input, "--point", "0.5774,0.5774,0.5774", "--out", out.to_str().unwrap()]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED);
    assert!(stdout.contains("licq true"), "{stdout}");
    let report = read_json(&out);
    assert_valid(&schema("report.schema.json"), &report);
    assert_eq!(report["report"]["licq"], Value::Bool(true));
}

#[test]
fn check_kkt_accepts_negative_coordinates() {
    let input = problem("ex35_sub.json");
    let (code, stdout) = invoke(&["check-kkt", &input, "--point", "-0.57735026919,-0.57735026919,-0.57735026919"]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED);
    assert!(stdout.contains("sosc true"), "{stdout}");
}

#[test]
fn certify_flat_on_a_tms_file() {
    let dir = tempfile::tempdir().unwrap();
    let tms = dir.path().join("w.json");
    // Dirac at (1, 2) up to degree 2
    std::fs::write(&tms, r#"{"n": 2, "d": 2, "values": [1, 1, 2, 1, 2, 4]}"#).unwrap();
    let out = dir.path().join("f.json");
    let (code, stdout) = invoke(&["certify-flat", tms.to_str().unwrap(), "--d0", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED, "{stdout}");
    let report = read_json(&out);
    assert_valid(&schema("report.schema.json"), &report);
    let point = &report["atoms"][0]["point"];
    assert!((point[0].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!((point[1].as_f64().unwrap() - 2.0).abs() < 1e-8);

    // moments of no measure: M_1 is indefinite noise
    std::fs::write(&tms, r#"{"n": 1, "d": 2, "values": [1, 0.3, -0.5]}"#).unwrap();
    let (code, _) = invoke(&["certify-flat", tms.to_str().unwrap(), "--d0", "1"]);
    assert_eq!(code.unwrap(), EXIT_UNRESOLVED);
}

#[test]
fn dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex35.sdp");
    let input = problem("ex35.json");
    let (code, _) = invoke(&["dump", &input, "--k", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code.unwrap(), EXIT_CONVERGED);
    let file = std::io::BufReader::new(std::fs::File::open(&out).unwrap());
    let sdp = momsos::sdp::read_dump(file).unwrap();
    assert_eq!(sdp.nvars, 84);
    assert_eq!(sdp.blocks[0].side, 20);
}

#[test]
fn input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n": 2, "f": [{"c": 1.0, "e": [1]}]}"#).unwrap();
    let (code, _) = invoke(&["solve", bad.to_str().unwrap()]);
    let msg = code.unwrap_err().to_string();
    assert!(msg.contains("f") && msg.contains("term 0"), "{msg}");

    let (code, _) = invoke(&["solve", "/nonexistent/problem.json"]);
    assert!(matches!(code, Err(CliError::Read { .. })));

    let input = problem("ex35.json");
    let (code, _) = invoke(&["solve", &input, "--kmin", "1"]);
    assert!(code.is_err());
    let (code, _) = invoke(&["solve", &input, "--tol", "0"]);
    assert!(matches!(code, Err(CliError::Config(_))));
    let (code, _) = invoke(&["solve", &input, "--variant", "denominator"]);
    assert!(code.is_err());
}

#[test]
fn problem_files_match_the_schema() {
    let v = schema("problem.schema.json");
    for entry in std::fs::read_dir(root().join("problems")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name == "manifest.json" {
            continue;
        }
        assert_valid(&v, &read_json(&path));
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_momsos");
    let ok = Command::new(bin).args(["solve", &problem("ex35.json")]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    // too low an order cap: unconverged without solver failure
    let unresolved = Command::new(bin)
        .args(["solve", &problem("ex36.json"), "--kmin", "2", "--kmax", "2"])
        .output()
        .unwrap();
    assert_eq!(unresolved.status.code(), Some(2));
    let starved = Command::new(bin)
        .args(["solve", &problem("ex35.json"), "--max-iter", "2"])
        .output()
        .unwrap();
    assert_eq!(starved.status.code(), Some(3));
    let bad = Command::new(bin).args(["solve", "/nonexistent.json"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cannot read"));
}
