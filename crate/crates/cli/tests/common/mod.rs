#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsar_core::sim::{simulate_response, stream_rng, ScenarioConfig, ScenarioData};
use fsar_core::spatial::SpatialWeights;
use nalgebra::DMatrix;

pub fn fsar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsar"))
        .args(args)
        .output()
        .expect("fsar binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        stderr(o)
    );
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// How the fixture's slope is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slope {
    Zero,
    Smooth,
}

#[derive(Debug, Clone)]
pub struct Spec {
    pub n: usize,
    pub grid_points: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub slope: Slope,
    pub seed: u64,
    /// Areas joined in disjoint pairs instead of the knn graph.
    pub pairs: bool,
}

impl Default for Spec {
    fn default() -> Self {
        Spec {
            n: 80,
            grid_points: 41,
            rho: 0.4,
            sigma2: 1.0,
            slope: Slope::Smooth,
            seed: 1,
            pairs: false,
        }
    }
}

pub struct Fixture {
    pub dir: PathBuf,
    pub curves: PathBuf,
    pub response: PathBuf,
    pub coords: PathBuf,
    pub weights: PathBuf,
    pub edges: PathBuf,
    pub beta: PathBuf,
    pub beta_true: Vec<f64>,
}

impl Fixture {
    pub fn arg(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    /// `--curves C --response Y` plus the weights source: the coordinates for
    /// knn fixtures, the edge list for paired ones.
    pub fn data_args(&self, pairs: bool) -> Vec<String> {
        let mut v = vec![
            "--curves".to_string(),
            Self::arg(&self.curves).to_string(),
            "--response".to_string(),
            Self::arg(&self.response).to_string(),
        ];
        if pairs {
            v.extend(["--edges".to_string(), Self::arg(&self.edges).to_string()]);
        } else {
            v.extend(["--coords".to_string(), Self::arg(&self.coords).to_string()]);
        }
        v
    }
}

fn write(path: &Path, body: String) {
    std::fs::write(path, body).unwrap();
}

fn pair_weights(n: usize) -> SpatialWeights {
    SpatialWeights::new(DMatrix::from_fn(
        n,
        n,
        |i, j| if i != j && i / 2 == j / 2 { 1.0 } else { 0.0 },
    ))
    .unwrap()
}

/// Draw a data set from the simulation generator and write it as CSV files
/// in `dir`. Area ids are `a0, a1, ...`; the curves header holds the grid.
pub fn write_fixture(dir: &Path, spec: &Spec) -> Fixture {
    let cfg = ScenarioConfig {
        n_areas: spec.n,
        grid_points: spec.grid_points,
        rho_true: spec.rho,
        sigma2_true: spec.sigma2,
        basis_k: 8,
        seed: spec.seed,
        ..ScenarioConfig::default()
    };
    let data = if spec.pairs {
        ScenarioData::with_weights(&cfg, pair_weights(spec.n)).unwrap()
    } else {
        ScenarioData::generate(&cfg, None).unwrap()
    };
    let grid = data.curves.grid().points().to_vec();
    let beta = match spec.slope {
        Slope::Zero => vec![0.0; grid.len()],
        Slope::Smooth => data.beta.smoothed.clone(),
    };
    let y = simulate_response(
        &data.curves,
        &beta,
        spec.rho,
        &data.weights,
        spec.sigma2,
        &mut stream_rng(spec.seed, 1),
    )
    .unwrap();

    let id = |i: usize| format!("a{i}");
    let mut curves = String::from("id");
    for t in &grid {
        curves.push_str(&format!(",{t}"));
    }
    curves.push('\n');
    for i in 0..spec.n {
        curves.push_str(&id(i));
        for v in data.curves.curves().row(i).iter() {
            curves.push_str(&format!(",{v}"));
        }
        curves.push('\n');
    }
    let mut response = String::from("id,y\n");
    for i in 0..spec.n {
        response.push_str(&format!("{},{}\n", id(i), y[i]));
    }
    let mut coords = String::from("id,x,y\n");
    for (i, c) in data.coords.iter().enumerate() {
        coords.push_str(&format!("{},{},{}\n", id(i), c[0], c[1]));
    }
    let w = data.weights.matrix();
    let mut dense = String::new();
    let mut edges = String::from("i,j,weight\n");
    for i in 0..spec.n {
        let row: Vec<String> = w.row(i).iter().map(|v| v.to_string()).collect();
        dense.push_str(&row.join(","));
        dense.push('\n');
        for j in 0..spec.n {
            if w[(i, j)] != 0.0 {
                edges.push_str(&format!("{i},{j},{}\n", w[(i, j)]));
            }
        }
    }
    let mut beta_csv = String::from("t,beta\n");
    for (t, b) in grid.iter().zip(&beta) {
        beta_csv.push_str(&format!("{t},{b}\n"));
    }
    let f = Fixture {
        dir: dir.to_path_buf(),
        curves: dir.join("curves.csv"),
        response: dir.join("response.csv"),
        coords: dir.join("coords.csv"),
        weights: dir.join("weights.csv"),
        edges: dir.join("edges.csv"),
        beta: dir.join("beta.csv"),
        beta_true: beta,
    };
    write(&f.curves, curves);
    write(&f.response, response);
    if !spec.pairs {
        write(&f.coords, coords);
    }
    write(&f.weights, dense);
    write(&f.edges, edges);
    write(&f.beta, beta_csv);
    f
}

/// Run `fsar <cmd> <data args> <extra> --out <dir>/<name>`.
pub fn run_on(f: &Fixture, cmd: &str, pairs: bool, extra: &[&str], name: &str) -> (Output, PathBuf) {
    let out = f.dir.join(name);
    let mut args: Vec<String> = vec![cmd.to_string()];
    args.extend(f.data_args(pairs));
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend(["--out".to_string(), out.to_str().unwrap().to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    (fsar(&refs), out)
}
