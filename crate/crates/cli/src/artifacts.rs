//! Model JSON and grid CSV artifacts for each subcommand.

use std::path::Path;
use std::time::Instant;

use afpca::fpca::{fit_afpca, reconstruct, FpcaConfig, FpcaModel};
use afpca::io::{fmt_f64, fmt_opt, ingest_csv, ingest_xy_csv, write_json, write_table, NA};
use afpca::quadrature::linspace;
use afpca::simulate::generate_dataset;
use afpca::smooth::{fit_smooth, SmoothConfig, SmoothFit};
use afpca::{Result, TuningMode};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

/// Points of the output evaluation grid.
pub const GRID_POINTS: usize = 200;

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn columns_json(m: &DMatrix<f64>) -> Value {
    json!(m.column_iter().map(|c| c.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

/// Undefined points become the string `"NA"`.
fn opt_json(v: &[Option<f64>]) -> Value {
    Value::Array(
        v.iter()
            .map(|x| match x {
                Some(x) if x.is_finite() => json!(x),
                _ => json!(NA),
            })
            .collect(),
    )
}

fn knots_json(model_basis: &afpca::TransformedBasis) -> Value {
    json!({
        "domain": [model_basis.knots.lower(), model_basis.knots.upper()],
        "interior_knots": model_basis.knots.interior(),
        "p_basis": model_basis.dim(),
    })
}

pub fn write_smooth(input: &Path, out: &Path, config: &SmoothConfig) -> Result<Vec<String>> {
    let (t, y) = ingest_xy_csv(input)?;
    let fit = fit_smooth_checked(&t, &y, config)?;
    let (a, b) = fit.basis.domain();
    let grid = linspace(a, b, GRID_POINTS);
    let on_grid = fit.predict(&grid)?;
    let lambda_t = fit.lambda_of_t(&grid)?;

    let model = json!({
        "basis": knots_json(&fit.basis),
        "mode": fit.mode,
        "beta": vec_json(&fit.beta),
        "lambda_diag": vec_json(&fit.lambda_diag),
        "lambda": vec_json(&fit.tuning()),
        "sigma2": fit.sigma2,
        "objective_trace": fit.objective_trace,
        "converged": fit.converged,
        "n_iter": fit.n_iter,
        "lambda_of_t": { "t": grid, "value": opt_json(&lambda_t) },
    });
    write_json(out.join("model.json"), &model)?;
    write_table(
        out.join("fitted.csv"),
        &["t", "y", "fitted"],
        (0..t.len()).map(|i| vec![fmt_f64(t[i]), fmt_f64(y[i]), fmt_f64(fit.fitted[i])]),
    )?;
    write_table(
        out.join("grid.csv"),
        &["t", "fitted", "lambda_of_t"],
        (0..grid.len()).map(|j| vec![fmt_f64(grid[j]), fmt_f64(on_grid[j]), fmt_opt(lambda_t[j])]),
    )?;
    Ok(["model.json", "fitted.csv", "grid.csv"].map(String::from).to_vec())
}

fn fit_smooth_checked(t: &[f64], y: &[f64], config: &SmoothConfig) -> Result<SmoothFit> {
    let fit = fit_smooth(t, y, config)?;
    if !fit.converged {
        log::warn!("smoother stopped after {} iterations without meeting the tolerance", fit.n_iter);
    }
    Ok(fit)
}

pub fn fit_fpca(input: &Path, out: &Path, config: &FpcaConfig) -> Result<Vec<String>> {
    let data = ingest_csv(input)?;
    let model = fit_afpca(&data, config)?;
    let (a, b) = model.basis.domain();
    let grid = linspace(a, b, GRID_POINTS);
    let k = model.n_components();

    let lambda_mu_t = model.lambda_mu_of_t(&grid)?;
    let lambda_phi_t = (0..k).map(|j| model.lambda_phi_of_t(j, &grid)).collect::<Result<Vec<_>>>()?;
    let mean = model.mean_values(&grid)?;
    let phi = model.fpc_values(&grid)?;

    write_json(out.join("model.json"), &model_json(&model, &grid, &lambda_mu_t, &lambda_phi_t))?;

    let mut header = vec!["t".to_string(), "mu".to_string()];
    header.extend((1..=k).map(|j| format!("phi{j}")));
    header.push("lambda_mu".into());
    header.extend((1..=k).map(|j| format!("lambda_phi{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        out.join("fpcs.csv"),
        &header_ref,
        (0..grid.len()).map(|r| {
            let mut row = vec![fmt_f64(grid[r]), fmt_f64(mean[r])];
            row.extend((0..k).map(|j| fmt_f64(phi[(r, j)])));
            row.push(fmt_opt(lambda_mu_t[r]));
            row.extend((0..k).map(|j| fmt_opt(lambda_phi_t[j][r])));
            row
        }),
    )?;

    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=k).map(|j| format!("xi{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        out.join("scores.csv"),
        &header_ref,
        model.subject_ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.clone()];
            row.extend((0..k).map(|j| fmt_f64(model.scores[(i, j)])));
            row
        }),
    )?;

    let mut rows = Vec::with_capacity(model.subject_ids.len() * grid.len());
    for (i, id) in model.subject_ids.iter().enumerate() {
        let rec = reconstruct(&model, i, &grid)?;
        for (t, v) in rec.grid.iter().zip(&rec.values) {
            rows.push(vec![id.clone(), fmt_f64(*t), fmt_f64(*v)]);
        }
    }
    write_table(out.join("reconstructions.csv"), &["subject_id", "t", "fitted"], rows)?;
    Ok(["model.json", "fpcs.csv", "scores.csv", "reconstructions.csv"].map(String::from).to_vec())
}

fn model_json(
    model: &FpcaModel,
    grid: &[f64],
    lambda_mu_t: &[Option<f64>],
    lambda_phi_t: &[Vec<Option<f64>>],
) -> Value {
    json!({
        "basis": knots_json(&model.basis),
        "mode": model.mode,
        "subject_ids": model.subject_ids,
        "k_init": model.k_init,
        "n_components": model.n_components(),
        "beta_mu": vec_json(&model.beta_mu),
        "beta_phi": columns_json(&model.beta_phi),
        "scores": model.scores.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "eigenvalues": vec_json(&model.eigenvalues),
        "pve_cum": vec_json(&model.pve_cum),
        "fitted_eigenvalues": model.fitted_eigenvalues,
        "sigma2": model.sigma2,
        "lambda_mu": vec_json(&model.lambda_mu),
        "lambda_phi": model.lambda_phi.iter().map(vec_json).collect::<Vec<_>>(),
        "lambda_of_t": {
            "t": grid,
            "mu": opt_json(lambda_mu_t),
            "phi": lambda_phi_t.iter().map(|v| opt_json(v)).collect::<Vec<_>>(),
        },
        "objective_trace": model.objective_trace,
        "converged": model.converged,
        "n_iter": model.n_iter,
        "warnings": model.warnings,
    })
}

pub fn bench(
    out: &Path,
    n_subjects: usize,
    sigma2: f64,
    p_basis: usize,
    k_init: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let sim = generate_dataset(n_subjects, sigma2, seed)?;
    let first = &sim.dataset.subjects()[0];
    let mut rows = Vec::new();
    for rep in 0..repeats.max(1) {
        for mode in [TuningMode::Adaptive, TuningMode::Baseline] {
            let config = SmoothConfig { dim: p_basis, mode, ..Default::default() };
            let start = Instant::now();
            let fit = fit_smooth(&first.t, &first.y, &config)?;
            rows.push(("fit-smooth", mode, rep, start.elapsed().as_secs_f64(), fit.n_iter));

            let config = FpcaConfig { dim: p_basis, k_init, mode, seed, ..Default::default() };
            let start = Instant::now();
            let model = fit_afpca(&sim.dataset, &config)?;
            rows.push(("fit-fpca", mode, rep, start.elapsed().as_secs_f64(), model.n_iter));
        }
    }
    write_table(
        out.join("bench.csv"),
        &["task", "mode", "repeat", "seconds", "n_iter"],
        rows.iter().map(|(task, mode, rep, secs, it)| {
            vec![task.to_string(), mode.to_string(), rep.to_string(), fmt_f64(*secs), it.to_string()]
        }),
    )?;
    Ok(vec!["bench.csv".into()])
}
