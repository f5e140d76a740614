//! Subcommand implementations.

use std::path::{Path, PathBuf};

use fsar_core::basis::{make_basis, project, Basis, BasisKind, FunctionalSample};
use fsar_core::estimate::{fit_fixed_rho, fit_ls_with, fit_ml, FitOptions, SarFit};
use fsar_core::inference::{confidence_band, test_beta, TestOptions};
use fsar_core::model::TruncatedModel;
use fsar_core::par::{with_threads, Execution};
use fsar_core::sim::{run_scenario_with, ScenarioData, StudyConfig};
use fsar_core::spatial::{
    rho_interval, row_standardize, symmetrize, weights_from_coordinates, NeighborRule, SpatialWeights,
};
use fsar_core::{FsarError, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::io;
use crate::report::{BandRef, FitSummary, RunReport};
use crate::svg::{line_plot, Series};
use crate::{
    config, Common, DataArgs, FitArgs, MethodArg, NeighborArgs, SimulateArgs, Standardize, TestArgs, WeightsArgs,
};

const DEFAULT_K: usize = 15;

fn out_dir(common: &Common) -> Result<PathBuf> {
    std::fs::create_dir_all(&common.out).map_err(|source| FsarError::Io {
        path: common.out.display().to_string(),
        source,
    })?;
    Ok(common.out.clone())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| FsarError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn rule(n: &NeighborArgs) -> NeighborRule {
    match n.threshold {
        Some(d) => NeighborRule::DistanceThreshold(d),
        None => NeighborRule::Knn(n.knn),
    }
}

/// Validate a user-supplied `W`; an asymmetric one is replaced by `(W + W')/2`
/// with a warning.
fn user_weights(w: DMatrix<f64>, report: &mut RunReport) -> Result<SpatialWeights> {
    if let Some(index) = w.row_iter().position(|r| r.sum() <= 0.0) {
        return Err(FsarError::IsolatedRegion { index });
    }
    let w = SpatialWeights::new(w)?;
    if w.is_symmetric() {
        return Ok(w);
    }
    report.warn_all(["weights matrix is not symmetric; fitting with (W + W')/2".to_string()]);
    Ok(symmetrize(&w))
}

fn check_areas(path: &Path, w: &DMatrix<f64>, n: usize) -> Result<()> {
    if w.nrows() != n {
        return Err(FsarError::invalid(format!(
            "{} describes {} areas but there are {n} curves",
            path.display(),
            w.nrows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SpatialSummary {
    n: usize,
    eig_min: f64,
    eig_max: f64,
    interval_lo: f64,
    interval_hi: f64,
}

fn spatial_setting(report: &mut RunReport, w: &SpatialWeights) -> Result<()> {
    let iv = rho_interval(w)?;
    report.setting(
        "spatial",
        SpatialSummary {
            n: w.n(),
            eig_min: w.eig_min(),
            eig_max: w.eig_max(),
            interval_lo: iv.lo,
            interval_hi: iv.hi,
        },
    );
    Ok(())
}

/// Inputs of `fit` and `test`, loaded and validated.
struct Prepared {
    sample: FunctionalSample,
    weights: SpatialWeights,
    basis: Basis,
    model: TruncatedModel,
}

fn prepare(d: &DataArgs, report: &mut RunReport) -> Result<Prepared> {
    let kind = d.common.basis.unwrap_or(BasisKind::OrthonormalizedBSpline);
    let k = d.common.k.unwrap_or(DEFAULT_K);
    report.setting("basis", kind);
    report.setting("k", k);
    report.setting("seed", d.common.seed.unwrap_or(0));
    report.input("curves", &d.curves)?;
    if let Some(g) = &d.grid {
        report.input("grid", g)?;
    }
    report.input("response", &d.response)?;
    let (curves, y) = report.timed("read", || {
        let c = io::read_curves(&d.curves, d.grid.as_deref())?;
        let y = io::read_response(&d.response, &c.ids)?;
        Ok((c, y))
    })?;
    let n = curves.ids.len();
    let weights = if let Some(p) = &d.source.weights {
        report.input("weights", p)?;
        let w = report.timed("read", || io::read_dense_weights(p))?;
        check_areas(p, &w, n)?;
        user_weights(w, report)?
    } else if let Some(p) = &d.source.edges {
        report.input("edges", p)?;
        let w = report.timed("read", || io::read_edge_list(p, n))?;
        user_weights(w, report)?
    } else {
        let p = d.source.coords.as_ref().expect("clap requires one weights source");
        report.input("coords", p)?;
        let xy = report.timed("read", || io::read_coords_for(p, &curves.ids))?;
        let build = weights_from_coordinates(&xy, rule(&d.neighbors))?;
        report.warn_all(build.warnings);
        symmetrize(&row_standardize(&build.weights)?)
    };
    spatial_setting(report, &weights)?;
    let basis = make_basis(kind, k, curves.sample.grid())?;
    let design = project(&curves.sample, &basis)?;
    let model = TruncatedModel::new(y, &design, weights.clone())?;
    Ok(Prepared {
        sample: curves.sample,
        weights,
        basis,
        model,
    })
}

fn estimate(d: &DataArgs, m: &TruncatedModel, report: &mut RunReport) -> Result<SarFit> {
    let fit = report.timed("fit", || match (d.rho, d.method) {
        (Some(rho), _) => fit_fixed_rho(m, rho),
        (None, MethodArg::Ls) => fit_ls_with(
            m,
            &FitOptions {
                tol: d.tol,
                max_iter: d.max_iter,
                rho_update: d.rho_update,
            },
        ),
        (None, MethodArg::Ml) => fit_ml(m, d.tol),
    })?;
    report.setting("method", fit.method);
    if d.rho.is_none() && d.method == MethodArg::Ls {
        report.setting("rho_update", d.rho_update);
    }
    report.warn_all(fit.warnings.iter().cloned());
    Ok(fit)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let d = &a.data;
    let out = out_dir(&d.common)?;
    let mut report = RunReport::new("fit");
    let p = prepare(d, &mut report)?;
    let fit = estimate(d, &p.model, &mut report)?;
    report.fit = Some(FitSummary::new(&fit, &p.basis, p.model.n())?);
    if let Some(level) = a.band {
        let band = report.timed("band", || confidence_band(&fit, &p.basis, level))?;
        let csv = out.join("band.csv");
        let svg = out.join("band.svg");
        io::write_band(&csv, &band)?;
        let title = format!("{}% pointwise confidence band for beta", 100.0 * level);
        write_text(
            &svg,
            &line_plot(
                &title,
                "t",
                band.grid.points(),
                &[
                    Series::new("estimate", &band.center).color("#1f77b4"),
                    Series::new("lower", &band.lower).color("#d62728").dashed(),
                    Series::new("upper", &band.upper).color("#d62728").dashed(),
                ],
            ),
        )?;
        report.band = Some(BandRef {
            level,
            csv: csv.display().to_string(),
            svg: svg.display().to_string(),
        });
        report
            .outputs
            .extend([csv.display().to_string(), svg.display().to_string()]);
    }
    let path = out.join("fit_report.json");
    report.outputs.push(path.display().to_string());
    report.write(&path)?;
    println!(
        "rho_hat = {:.6}  sigma2_hat = {:.6}  iterations = {}  converged = {}",
        fit.rho_hat, fit.sigma2_hat, fit.iterations, fit.converged
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("report: {}", path.display());
    Ok(())
}

pub fn test(a: &TestArgs) -> Result<()> {
    let d = &a.data;
    let out = out_dir(&d.common)?;
    let mut report = RunReport::new("test");
    let p = prepare(d, &mut report)?;
    let fit = estimate(d, &p.model, &mut report)?;
    // The statistic plugs in rho; sigma2 is re-estimated at that rho with n - k df.
    let sigma2_hat = match d.rho {
        Some(_) => fit.sigma2_hat,
        None => fit_fixed_rho(&p.model, fit.rho_hat)?.sigma2_hat,
    };
    let beta0 = match &a.beta0 {
        Some(path) => {
            report.input("beta0", path)?;
            Some(io::read_function(path, p.sample.grid())?)
        }
        None => None,
    };
    report.setting("alpha", a.alpha);
    report.setting("null", if beta0.is_some() { "beta0" } else { "zero" });
    let opts = TestOptions {
        k_n: a.kn,
        alpha: a.alpha,
        sigma2_hat,
        transform: a.transform,
    };
    let res = report.timed("test", || {
        test_beta(
            &p.sample,
            p.model.y(),
            &p.weights,
            fit.rho_hat,
            beta0.as_deref(),
            &p.basis,
            &opts,
        )
    })?;
    report.fit = Some(FitSummary::new(&fit, &p.basis, p.model.n())?);
    println!(
        "T_n = {:.6}  k_n = {}  critical = {:.6}  reject = {}",
        res.t_n, res.k_n, res.critical_value, res.reject
    );
    report.test = Some(res);
    let path = out.join("test_report.json");
    report.outputs.push(path.display().to_string());
    report.write(&path)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("report: {}", path.display());
    Ok(())
}

fn study(a: &SimulateArgs, report: &mut RunReport) -> Result<StudyConfig> {
    let mut study = match &a.config {
        Some(p) => {
            report.input("config", p)?;
            config::load_study(p)?
        }
        None => StudyConfig::default(),
    };
    let s = &mut study.scenario;
    if let Some(r) = a.replicates {
        s.replicates = r;
    }
    if let Some(seed) = a.common.seed {
        s.seed = seed;
    }
    if let Some(b) = a.common.basis {
        s.basis = b;
    }
    if let Some(k) = a.common.k {
        s.basis_k = k;
    }
    if !a.rho.is_empty() {
        study.rho_values = a.rho.clone();
    }
    for s in study.scenarios() {
        s.validate()?;
    }
    Ok(study)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let out = out_dir(&a.common)?;
    let mut report = RunReport::new("simulate");
    let study = study(a, &mut report)?;
    report.setting("study", &study);
    report.setting("threads", a.common.threads);
    let cfg = &study.scenario;
    let data = if let Some(p) = a.weights.as_ref().or(a.edges.as_ref()) {
        let role = if a.weights.is_some() { "weights" } else { "edges" };
        report.input(role, p)?;
        let w = if a.weights.is_some() {
            io::read_dense_weights(p)?
        } else {
            io::read_edge_list(p, cfg.n_areas)?
        };
        check_areas(p, &w, cfg.n_areas)?;
        if let Some(index) = w.row_iter().position(|r| r.sum() <= 0.0) {
            return Err(FsarError::IsolatedRegion { index });
        }
        let w = SpatialWeights::new(w)?;
        if !w.is_symmetric() {
            return Err(FsarError::invalid(format!(
                "{}: simulation weights must be symmetric",
                p.display()
            )));
        }
        report.timed("generate", || ScenarioData::with_weights(cfg, w))?
    } else if let Some(p) = &a.coords {
        report.input("coords", p)?;
        let (_, xy) = io::read_coords(p)?;
        report.timed("generate", || ScenarioData::generate(cfg, Some(&xy)))?
    } else {
        report.timed("generate", || ScenarioData::generate(cfg, None))?
    };
    spatial_setting(&mut report, &data.weights)?;
    let scenarios = study.scenarios();
    for s in &scenarios {
        data.interval.check(s.rho_true)?;
    }
    let summaries = report.timed("replicates", || {
        with_threads(a.common.threads, || {
            scenarios
                .iter()
                .map(|s| run_scenario_with(s, &data, Execution::default()))
                .collect::<Result<Vec<_>>>()
        })?
    })?;

    let table = out.join("table1.csv");
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.rho_true.to_string(),
                s.rho_hat_mean.to_string(),
                s.mise.to_string(),
                s.sigma2_hat_mean.to_string(),
                s.rho_hat_sd.to_string(),
                s.sigma2_hat_sd.to_string(),
                s.mise_absolute.to_string(),
                s.replicates.to_string(),
                s.replicates_converged.to_string(),
            ]
        })
        .collect();
    io::write_rows(
        &table,
        &[
            "rho",
            "rho_hat",
            "mise",
            "sigma2_hat",
            "rho_hat_sd",
            "sigma2_hat_sd",
            "mise_absolute",
            "replicates",
            "converged",
        ],
        &rows,
    )?;

    let grid = data.curves.grid().points();
    let shown = data.curves.n().min(10);
    let curves: Vec<Vec<f64>> = (0..shown)
        .map(|i| data.curves.curves().row(i).iter().copied().collect())
        .collect();
    let labels: Vec<String> = (0..shown).map(|i| format!("area {i}")).collect();
    let series: Vec<Series> = curves.iter().zip(&labels).map(|(c, l)| Series::new(l, c)).collect();
    let curves_svg = out.join("curves.svg");
    write_text(&curves_svg, &line_plot("Sample covariate curves", "t", grid, &series))?;
    let beta_svg = out.join("beta.svg");
    write_text(
        &beta_svg,
        &line_plot(
            "Slope function beta(t)",
            "t",
            grid,
            &[
                Series::new("noisy draw", &data.beta.raw).color("#bbbbbb"),
                Series::new("smoothed", &data.beta.smoothed).color("#1f77b4"),
            ],
        ),
    )?;

    report.warn_all(data.warnings.iter().cloned());
    for s in &summaries {
        report.warn_all(s.warnings.iter().cloned());
    }
    report.simulation = Some(summaries.clone());
    let path = out.join("simulate_report.json");
    report.outputs.extend(
        [&table, &curves_svg, &beta_svg, &path]
            .iter()
            .map(|p| p.display().to_string()),
    );
    report.write(&path)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "rho", "rho_hat", "MISE", "sigma2_hat");
    for s in &summaries {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4}",
            s.rho_true, s.rho_hat_mean, s.mise, s.sigma2_hat_mean
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("table: {}", table.display());
    Ok(())
}

pub fn weights(a: &WeightsArgs) -> Result<()> {
    let out = out_dir(&a.common)?;
    let mut report = RunReport::new("weights");
    report.input("coords", &a.coords)?;
    let (_, xy) = io::read_coords(&a.coords)?;
    let build = weights_from_coordinates(&xy, rule(&a.neighbors))?;
    report.warn_all(build.warnings.iter().cloned());
    let w = match a.standardize {
        Standardize::None => build.weights,
        Standardize::Row => row_standardize(&build.weights)?,
        Standardize::Symmetric => symmetrize(&row_standardize(&build.weights)?),
    };
    report.setting(
        "standardize",
        match a.standardize {
            Standardize::None => "none",
            Standardize::Row => "row",
            Standardize::Symmetric => "symmetric",
        },
    );
    spatial_setting(&mut report, &w)?;
    let path = out.join("weights.csv");
    io::write_matrix(&path, w.matrix())?;
    let rpath = out.join("weights_report.json");
    report
        .outputs
        .extend([path.display().to_string(), rpath.display().to_string()]);
    report.write(&rpath)?;
    let iv = rho_interval(&w)?;
    println!("{} areas, admissible rho in ({:.6}, {:.6})", w.n(), iv.lo, iv.hi);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("weights: {}", path.display());
    Ok(())
}
