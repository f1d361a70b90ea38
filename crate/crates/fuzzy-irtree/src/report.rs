//! Structured-text reports: stable key/value blocks plus fixed-width tables,
//! with everything needed to reproduce a run (parameters, quadrature size,
//! seed, tree, formula, RNG version).

use crate::dataset::ModelSpec;
use crate::effects::{EffectsGrid, EffectsMode};
use crate::estimate::{AlphaSharing, FitResult, OptimizerPath};
use crate::simulate::RNG_VERSION;
use std::fmt::Write as _;

pub const REPORT_SCHEMA: &str = "fuzzy-irtree/report-v1";

/// Everything about how a fit was invoked, echoed into the report.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub data_path: String,
    pub m: usize,
    pub tree: String,
    pub formula: String,
    pub covariate_names: Vec<String>,
    pub sharing: AlphaSharing,
    pub nodes: usize,
    pub optimizer: OptimizerPath,
    pub starts: usize,
    pub seed: u64,
}

fn sharing_label(s: AlphaSharing) -> &'static str {
    match s {
        AlphaSharing::Shared => "shared",
        AlphaSharing::PerNode => "per-node",
    }
}

fn optimizer_label(o: OptimizerPath) -> &'static str {
    match o {
        OptimizerPath::QuasiNewton => "quasi-newton",
        OptimizerPath::AugLag => "auglag",
    }
}

/// Parameter names in pack order: alphas, betas, sigma.
pub fn parameter_names(fit: &FitResult, covariates: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    match fit.theta.sharing() {
        AlphaSharing::Shared => names.push("alpha".to_string()),
        AlphaSharing::PerNode => {
            for i in 0..fit.theta.alpha().len() {
                names.push(format!("alpha[{}]", i + 1));
            }
        }
    }
    for c in covariates {
        names.push(format!("beta[{c}]"));
    }
    names.push("sigma".to_string());
    names
}

pub fn fit_report(fit: &FitResult, meta: &RunMeta) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "schema: {REPORT_SCHEMA}");
    let _ = writeln!(out, "kind: fit");
    let _ = writeln!(out, "data: {}", meta.data_path);
    let _ = writeln!(out, "M: {}", meta.m);
    let _ = writeln!(out, "tree: {}", meta.tree);
    let _ = writeln!(out, "formula: {}", meta.formula);
    let _ = writeln!(out, "alpha_sharing: {}", sharing_label(meta.sharing));
    let _ = writeln!(out, "H: {}", meta.nodes);
    let _ = writeln!(out, "optimizer: {}", optimizer_label(meta.optimizer));
    let _ = writeln!(out, "starts: {}", meta.starts);
    let _ = writeln!(out, "seed: {}", meta.seed);
    let _ = writeln!(out, "rng_version: {RNG_VERSION}");
    let _ = writeln!(out, "n_obs: {}", fit.n_obs);
    let _ = writeln!(out, "n_params: {}", fit.n_params);
    let _ = writeln!(out, "loglik: {:.6}", fit.loglik);
    let _ = writeln!(out, "bic: {:.6}", fit.bic);
    let _ = writeln!(out, "converged: {}", fit.converged);
    let _ = writeln!(out, "iterations: {}", fit.iterations);
    let _ = writeln!(out, "grad_norm: {:.3e}", fit.grad_norm);
    let _ = writeln!(out, "sigma_at_lower_bound: {}", fit.sigma_at_lower);
    let _ = writeln!(out, "sigma_at_upper_bound: {}", fit.sigma_at_upper);
    let _ = writeln!(out, "budget_constraint_active: {}", fit.budget_active);
    let _ = writeln!(out, "degenerate_data: {}", fit.degenerate_data);
    let _ = writeln!(out, "floored_observations: {}", fit.floored);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16} {:>12} {:>12} {:>10}", "parameter", "estimate", "std_error", "reliable");
    let names = parameter_names(fit, &meta.covariate_names);
    let values: Vec<f64> = fit
        .theta
        .alpha()
        .iter()
        .chain(fit.theta.beta())
        .copied()
        .chain(std::iter::once(fit.theta.sigma()))
        .collect();
    for ((name, value), se) in names.iter().zip(values).zip(&fit.std_errors) {
        let _ = writeln!(
            out,
            "{:<16} {:>12.4} {:>12.4} {:>10}",
            name, value, se.value, se.reliable
        );
    }
    out
}

/// One row of the model-comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub covariates: String,
    pub n_params: usize,
    pub loglik: f64,
    pub bic: f64,
}

pub fn compare_report(
    rows: &[CompareRow],
    ranking: &[usize],
    specs: &[ModelSpec],
    data_path: &str,
    n_obs: usize,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "schema: {REPORT_SCHEMA}");
    let _ = writeln!(out, "kind: compare");
    let _ = writeln!(out, "data: {data_path}");
    let _ = writeln!(out, "n_obs: {n_obs}");
    let _ = writeln!(out, "models: {}", specs.len());
    let _ = writeln!(out, "selected: {}", rows[ranking[0]].name);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<28} {:<20} {:>3} {:>12} {:>12}",
        "model", "covariates", "p", "lnL", "BIC"
    );
    for &i in ranking {
        let r = &rows[i];
        let _ = writeln!(
            out,
            "{:<28} {:<20} {:>3} {:>12.3} {:>12.3}",
            r.name, r.covariates, r.n_params, r.loglik, r.bic
        );
    }
    out
}

/// Tidy long-format table: one row per grid point and quantity.
pub fn effects_table(grid: &EffectsGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "setting,quantity,category,value");
    let mode = match grid.mode {
        EffectsMode::PlugIn => "plug-in",
        EffectsMode::Integrated => "integrated",
    };
    for p in &grid.points {
        let setting: Vec<String> =
            p.setting.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let setting = setting.join(";");
        for (m, v) in p.pi_y.iter().enumerate() {
            let _ = writeln!(out, "{setting},pi_y[{mode}],{},{v}", m + 1);
        }
        for (c, v) in p.pi_s.iter().enumerate() {
            let _ = writeln!(out, "{setting},pi_s[{mode}],{},{v}", c + 1);
        }
        let _ = writeln!(out, "{setting},xi[{mode}],,{}", p.xi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{ParamVector, StdError};

    #[test]
    fn fit_report_carries_reproducibility_fields() {
        let theta =
            ParamVector::new(vec![-1.0], vec![0.5], 0.4, AlphaSharing::Shared).unwrap();
        let fit = FitResult {
            theta,
            std_errors: vec![
                StdError { value: 0.1, reliable: true },
                StdError { value: 0.2, reliable: true },
                StdError { value: 0.3, reliable: false },
            ],
            loglik: -100.0,
            bic: 215.0,
            n_params: 3,
            n_obs: 50,
            converged: true,
            iterations: 20,
            grad_norm: 1e-6,
            sigma_at_lower: false,
            sigma_at_upper: false,
            budget_active: false,
            degenerate_data: false,
            floored: 0,
        };
        let meta = RunMeta {
            data_path: "d.csv".into(),
            m: 4,
            tree: "linear".into(),
            formula: "das".into(),
            covariate_names: vec!["das".into()],
            sharing: AlphaSharing::Shared,
            nodes: 30,
            optimizer: OptimizerPath::QuasiNewton,
            starts: 5,
            seed: 7,
        };
        let text = fit_report(&fit, &meta);
        for needle in [
            "schema: fuzzy-irtree/report-v1",
            "H: 30",
            "seed: 7",
            "tree: linear",
            "formula: das",
            "rng_version:",
            "beta[das]",
            "sigma",
        ] {
            assert!(text.contains(needle), "missing {needle:?} in report:\n{text}");
        }
    }
}
