mod common;

use std::path::Path;

use common::{assert_ok, fsar, json, run_on, write_fixture, Spec};
use fsar_core::spatial::{row_standardize, symmetrize, weights_from_coordinates, NeighborRule};

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/run_report.schema.json");
    jsonschema::validator_for(&json(&path)).expect("schema compiles")
}

fn assert_valid(v: &jsonschema::Validator, report: &Path) {
    let doc = json(report);
    let errors: Vec<String> = v
        .iter_errors(&doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{}: {errors:#?}", report.display());
}

#[test]
fn every_report_validates_against_the_schema() {
    let v = validator();
    let dir = tempfile::tempdir().unwrap();
    let f = write_fixture(dir.path(), &Spec::default());

    let (o, out) = run_on(&f, "fit", false, &["--k", "8", "--band", "0.95"], "fit");
    assert_ok(&o);
    assert_valid(&v, &out.join("fit_report.json"));

    let (o, out) = run_on(
        &f,
        "fit",
        false,
        &["--basis", "fourier", "--k", "7", "--rho", "0.3"],
        "fixed",
    );
    assert_ok(&o);
    assert_valid(&v, &out.join("fit_report.json"));
    assert_eq!(json(&out.join("fit_report.json"))["fit"]["method"], "fixed_rho");

    let beta0 = f.beta.to_str().unwrap().to_owned();
    let (o, out) = run_on(
        &f,
        "test",
        false,
        &["--beta0", &beta0, "--k", "8", "--transform", "inverse"],
        "test",
    );
    assert_ok(&o);
    assert_valid(&v, &out.join("test_report.json"));

    let out = dir.path().join("sim");
    let o = fsar(&[
        "simulate",
        "--replicates",
        "2",
        "--rho",
        "0.2,0.6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&o);
    assert_valid(&v, &out.join("simulate_report.json"));

    let out = dir.path().join("w");
    let o = fsar(&[
        "weights",
        "--coords",
        f.coords.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&o);
    assert_valid(&v, &out.join("weights_report.json"));
}

#[test]
fn schema_rejects_malformed_reports() {
    let v = validator();
    let bad = serde_json::json!({
        "command": "fit", "version": "0", "inputs": [], "settings": {},
        "outputs": [], "warnings": [], "timings_ms": {}, "fit": {"rho_hat": 0.1}
    });
    assert!(!v.is_valid(&bad));
    let unknown = serde_json::json!({
        "command": "dance", "version": "0", "inputs": [], "settings": {},
        "outputs": [], "warnings": [], "timings_ms": {}
    });
    assert!(!v.is_valid(&unknown));
}

#[test]
fn inputs_carry_sha256_digests() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_fixture(dir.path(), &Spec::default());
    let (o, out) = run_on(&f, "fit", false, &["--k", "8"], "fit");
    assert_ok(&o);
    let r = json(&out.join("fit_report.json"));
    let roles: Vec<&str> = r["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles, ["curves", "response", "coords"]);
    assert!(r["inputs"][0]["sha256"].as_str().unwrap().len() == 64);
    assert!(r["timings_ms"]["fit"].as_f64().unwrap() >= 0.0);
}

#[test]
fn weights_command_matches_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_fixture(dir.path(), &Spec::default());
    let out = dir.path().join("w");
    let o = fsar(&[
        "weights",
        "--coords",
        f.coords.to_str().unwrap(),
        "--knn",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&o);
    let text = std::fs::read_to_string(out.join("weights.csv")).unwrap();
    let got: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();

    let coords: Vec<[f64; 2]> = std::fs::read_to_string(&f.coords)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            [c[0], c[1]]
        })
        .collect();
    let build = weights_from_coordinates(&coords, NeighborRule::Knn(4)).unwrap();
    let expect = symmetrize(&row_standardize(&build.weights).unwrap());
    assert_eq!(got.len(), coords.len());
    for (i, row) in got.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, expect.matrix()[(i, j)]);
        }
    }
    let o = fsar(&[
        "weights",
        "--coords",
        f.coords.to_str().unwrap(),
        "--threshold",
        "0.2",
        "--standardize",
        "none",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&o);
    let text = std::fs::read_to_string(out.join("weights.csv")).unwrap();
    assert!(text.lines().flat_map(|l| l.split(',')).all(|v| v == "0" || v == "1"));
}
