mod common;

use std::path::Path;

use common::{assert_ok, fsar, json, stderr};

fn config_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/table1.cfg")
        .to_str()
        .unwrap()
        .to_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn bundled_config_gives_five_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1");
    let o = fsar(&["simulate", "--config", &config_path(), "--out", out.to_str().unwrap()]);
    assert_ok(&o);
    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[..4], ["rho", "rho_hat", "mise", "sigma2_hat"]);
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for (row, rho) in rows.iter().zip([0.1, 0.3, 0.5, 0.7, 0.9]) {
        assert_eq!(row[0], rho);
        assert!((row[1] - rho).abs() < 0.1, "rho_hat {} for rho {rho}", row[1]);
        assert!(row[2] > 0.0 && row[3] > 0.0);
        assert_eq!(row[7], 100.0);
    }
    for svg in ["curves.svg", "beta.svg"] {
        let s = std::fs::read_to_string(out.join(svg)).unwrap();
        assert!(s.starts_with("<svg") && s.contains("polyline"), "{svg}");
    }
    let report = json(&out.join("simulate_report.json"));
    assert_eq!(report["simulation"].as_array().unwrap().len(), 5);
}

#[test]
fn seeded_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = fsar(&[
            "simulate",
            "--config",
            &config_path(),
            "--replicates",
            "1",
            "--seed",
            "7",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ok(&o);
        out
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    for file in ["table1.csv", "curves.svg", "beta.svg"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
        assert_eq!(read(&a.join(file)), read(&c.join(file)), "{file} with 4 threads");
    }
    let d = run("d", "0");
    let other = fsar(&[
        "simulate",
        "--config",
        &config_path(),
        "--replicates",
        "1",
        "--seed",
        "8",
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert_ok(&other);
    assert_eq!(read(&a.join("table1.csv")), read(&d.join("table1.csv")));
    assert_ne!(
        read(&a.join("table1.csv")),
        read(&dir.path().join("e").join("table1.csv"))
    );
}

#[test]
fn inadmissible_rho_names_the_bound() {
    // Binary cliques of four: eigenvalues -1 and 3, admissible rho in (-1, 1/3).
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let mut w = String::new();
    for i in 0..n {
        let row: Vec<&str> = (0..n)
            .map(|j| if i != j && i / 4 == j / 4 { "1" } else { "0" })
            .collect();
        w.push_str(&row.join(","));
        w.push('\n');
    }
    let wpath = dir.path().join("w.csv");
    std::fs::write(&wpath, w).unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "[scenario]\nn_areas = 40\nbasis_k = 6\nreplicates = 2\n").unwrap();
    let args = |rho: &str, out: &str| {
        fsar(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--weights",
            wpath.to_str().unwrap(),
            "--rho",
            rho,
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ])
    };
    let o = args("0.95", "bad");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("0.95") && msg.contains("0.333"), "{msg}");
    let o = args("0.2", "good");
    assert_ok(&o);
    let table = std::fs::read_to_string(dir.path().join("good").join("table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn config_errors_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "rho_values = [0.5]\n[scenario]\nn_area = 40\n").unwrap();
    let o = fsar(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = fsar(&["simulate", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
