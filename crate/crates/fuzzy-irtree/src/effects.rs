//! Marginal effects: the category probabilities, the lower-activation
//! probability, and the mixture weight evaluated over a grid of covariate
//! values.
//!
//! The target numeric covariate is evaluated at the reference points
//! {0, min, mean, max} of its observed column, crossed with every level of
//! each categorical covariate in the formula; remaining numeric covariates
//! are held at their observed means. Effects are computed either at the
//! plug-in ability eta = x'beta (the default) or averaged over the ability
//! distribution by quadrature.

use crate::dataset::{design_info, CellValue, Column, DataError, Dataset, Formula};
use crate::estimate::ParamVector;
use crate::fuzzymix::{entropy_weight_unchecked, lower_share_unchecked};
use crate::irtree::TreeSpec;
use crate::quadrature::{gauss_hermite, QuadError};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("covariate {0:?} is not in the dataset")]
    UnknownCovariate(String),
    #[error("target covariate {0:?} must be numeric")]
    TargetNotNumeric(String),
    #[error("design has {design} columns but beta has {beta}")]
    BetaMismatch { design: usize, beta: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// How the latent ability enters the effect computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectsMode {
    /// evaluate at eta = x'beta, the ability mean
    PlugIn,
    /// average the quantities over N(x'beta, sigma^2) by quadrature
    Integrated,
}

#[derive(Debug, Clone)]
pub struct EffectsOptions {
    /// numeric covariate spanning the grid
    pub target: String,
    pub mode: EffectsMode,
    pub nodes: usize,
}

/// One grid point with every computed quantity.
#[derive(Debug, Clone)]
pub struct EffectsPoint {
    /// covariate assignment as (name, printed value) pairs
    pub setting: Vec<(String, String)>,
    pub mu: f64,
    pub pi_y: Vec<f64>,
    /// lower-activation probability for each candidate core 1..=M
    pub pi_s: Vec<f64>,
    pub xi: f64,
}

#[derive(Debug, Clone)]
pub struct EffectsGrid {
    pub target: String,
    pub mode: EffectsMode,
    pub points: Vec<EffectsPoint>,
}

fn numeric_stats(values: &[f64]) -> (f64, f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (min, mean, max)
}

fn quantities(pi_y: &[f64]) -> (f64, Vec<f64>) {
    let xi = entropy_weight_unchecked(pi_y);
    let pi_s = (1..=pi_y.len())
        .map(|c| lower_share_unchecked(pi_y, c))
        .collect();
    (xi, pi_s)
}

/// Computes the effects grid for a fitted parameter vector.
pub fn marginal_effects(
    theta: &ParamVector,
    tree: &TreeSpec,
    ds: &Dataset,
    formula: &Formula,
    opts: &EffectsOptions,
) -> Result<EffectsGrid, EffectsError> {
    let target_col = ds
        .column(&opts.target)
        .ok_or_else(|| EffectsError::UnknownCovariate(opts.target.clone()))?;
    let target_values = match target_col {
        Column::Numeric { values, .. } => values,
        Column::Categorical { .. } => {
            return Err(EffectsError::TargetNotNumeric(opts.target.clone()))
        }
    };
    let (tmin, tmean, tmax) = numeric_stats(target_values);
    let reference = [("0", 0.0), ("min", tmin), ("mean", tmean), ("max", tmax)];

    let info = design_info(ds, formula)?;
    if info.width() != theta.beta().len() {
        return Err(EffectsError::BetaMismatch {
            design: info.width(),
            beta: theta.beta().len(),
        });
    }

    // grid = reference values of the target x levels of every categorical
    // covariate in the formula; other numeric covariates at their means
    let mut cat_axes: Vec<(String, Vec<String>)> = Vec::new();
    let mut num_defaults: Vec<(String, f64)> = Vec::new();
    let mut seen = vec![opts.target.clone()];
    for term in &formula.terms {
        let names: Vec<&String> = match term {
            crate::dataset::Term::Main(n) => vec![n],
            crate::dataset::Term::Interaction(a, b) => vec![a, b],
        };
        for name in names {
            if seen.contains(name) {
                continue;
            }
            seen.push(name.clone());
            match ds.column(name) {
                Some(Column::Categorical { levels, .. }) => {
                    cat_axes.push((name.clone(), levels.clone()));
                }
                Some(Column::Numeric { values, .. }) => {
                    let (_, mean, _) = numeric_stats(values);
                    num_defaults.push((name.clone(), mean));
                }
                None => return Err(EffectsError::UnknownCovariate(name.clone())),
            }
        }
    }

    // cartesian product over the categorical axes
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for (name, levels) in &cat_axes {
        let mut next = Vec::new();
        for combo in &combos {
            for level in levels {
                let mut c = combo.clone();
                c.push((name.clone(), level.clone()));
                next.push(c);
            }
        }
        combos = next;
    }

    let rule = if opts.mode == EffectsMode::Integrated {
        Some(gauss_hermite(opts.nodes)?)
    } else {
        None
    };
    let alphas = theta
        .easiness(tree)
        .map_err(|e| EffectsError::Data(DataError::Tree(e)))?;

    let mut points = Vec::new();
    for (label, tval) in reference {
        for combo in &combos {
            let get = |name: &str| -> CellValue {
                if name == opts.target {
                    return CellValue::Num(tval);
                }
                if let Some((_, level)) = combo.iter().find(|(n, _)| n == name) {
                    return CellValue::Level(level.clone());
                }
                if let Some((_, mean)) = num_defaults.iter().find(|(n, _)| n == name) {
                    return CellValue::Num(*mean);
                }
                CellValue::Num(f64::NAN)
            };
            let x = info.row_at(&get);
            let mu: f64 = x.iter().zip(theta.beta()).map(|(a, b)| a * b).sum();
            let (pi_y, xi, pi_s) = match &rule {
                None => {
                    let pi_y = tree
                        .category_probs(mu, &alphas)
                        .map_err(|e| EffectsError::Data(DataError::Tree(e)))?;
                    let (xi, pi_s) = quantities(&pi_y);
                    (pi_y, xi, pi_s)
                }
                Some(rule) => {
                    let scale = theta.sigma() * std::f64::consts::SQRT_2;
                    let norm = PI.sqrt();
                    let mut pi_y = vec![0.0; tree.m()];
                    let mut pi_s = vec![0.0; tree.m()];
                    let mut xi = 0.0;
                    for (&g, &w) in rule.nodes().iter().zip(rule.weights()) {
                        let p = tree
                            .category_probs(scale * g + mu, &alphas)
                            .map_err(|e| EffectsError::Data(DataError::Tree(e)))?;
                        let (xi_h, pi_s_h) = quantities(&p);
                        for (acc, v) in pi_y.iter_mut().zip(&p) {
                            *acc += w * v / norm;
                        }
                        for (acc, v) in pi_s.iter_mut().zip(&pi_s_h) {
                            *acc += w * v / norm;
                        }
                        xi += w * xi_h / norm;
                    }
                    (pi_y, xi, pi_s)
                }
            };
            let mut setting = vec![(opts.target.clone(), label.to_string())];
            setting.extend(combo.clone());
            for (name, mean) in &num_defaults {
                setting.push((name.clone(), format!("mean({mean:.4})")));
            }
            points.push(EffectsPoint { setting, mu, pi_y, pi_s, xi });
        }
    }
    Ok(EffectsGrid {
        target: opts.target.clone(),
        mode: opts.mode,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::read_dataset;
    use crate::estimate::AlphaSharing;
    use std::io::Write;

    fn toy_dataset() -> (tempfile::NamedTempFile, Dataset) {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "c,l,r,sex,das").unwrap();
        for (c, l, r, s, d) in [
            (1, 0, 1, "F", 0.2),
            (2, 1, 0, "M", 0.8),
            (3, 1, 1, "F", 1.4),
            (4, 0, 0, "M", 2.0),
        ] {
            writeln!(f, "{c},{l},{r},{s},{d}").unwrap();
        }
        f.flush().unwrap();
        let ds = read_dataset(f.path(), 4).unwrap();
        (f, ds)
    }

    fn theta(alpha: f64, beta: Vec<f64>, sigma: f64) -> ParamVector {
        ParamVector::new(vec![alpha], beta, sigma, AlphaSharing::Shared).unwrap()
    }

    #[test]
    fn grid_shape_matches_reference_by_levels() {
        let (_f, ds) = toy_dataset();
        let tree = TreeSpec::linear(4).unwrap();
        let formula = Formula::parse("sex+das").unwrap();
        let th = theta(-1.248, vec![0.408, 1.284], 0.005);
        let opts = EffectsOptions {
            target: "das".into(),
            mode: EffectsMode::PlugIn,
            nodes: 30,
        };
        let grid = marginal_effects(&th, &tree, &ds, &formula, &opts).unwrap();
        // 4 das reference points x 2 sex levels
        assert_eq!(grid.points.len(), 8);
        for p in &grid.points {
            let sum: f64 = p.pi_y.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&p.xi));
            assert!(p.pi_s.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_beta_gives_constant_effects() {
        let (_f, ds) = toy_dataset();
        let tree = TreeSpec::linear(4).unwrap();
        let formula = Formula::parse("sex+das").unwrap();
        let th = theta(-0.5, vec![0.0, 0.0], 0.4);
        let opts = EffectsOptions {
            target: "das".into(),
            mode: EffectsMode::PlugIn,
            nodes: 30,
        };
        let grid = marginal_effects(&th, &tree, &ds, &formula, &opts).unwrap();
        let first = &grid.points[0];
        for p in &grid.points[1..] {
            assert_eq!(p.pi_y, first.pi_y);
            assert_eq!(p.xi, first.xi);
        }
    }

    #[test]
    fn xi_monotone_when_positive_slope_moves_probs_toward_uniform() {
        // alpha pushes mass downward; increasing das with beta > 0 moves
        // pi_y toward uniform over this range, so xi must increase
        let (_f, ds) = toy_dataset();
        let tree = TreeSpec::linear(4).unwrap();
        let formula = Formula::parse("das").unwrap();
        let th = theta(-1.5, vec![0.9], 0.2);
        let opts = EffectsOptions {
            target: "das".into(),
            mode: EffectsMode::PlugIn,
            nodes: 30,
        };
        let grid = marginal_effects(&th, &tree, &ds, &formula, &opts).unwrap();
        // reference order is (0, min, mean, max) with min=0.2, mean=1.1,
        // max=2.0; the das values are increasing from index 0 on this data
        let xis: Vec<f64> = grid.points.iter().map(|p| p.xi).collect();
        assert!(xis.windows(2).all(|w| w[1] >= w[0]), "{xis:?}");
    }

    #[test]
    fn integrated_mode_matches_plugin_at_tiny_sigma() {
        let (_f, ds) = toy_dataset();
        let tree = TreeSpec::linear(4).unwrap();
        let formula = Formula::parse("sex+das").unwrap();
        let th = theta(-1.0, vec![0.4, 1.0], 1e-9);
        let plug = marginal_effects(
            &th,
            &tree,
            &ds,
            &formula,
            &EffectsOptions { target: "das".into(), mode: EffectsMode::PlugIn, nodes: 30 },
        )
        .unwrap();
        let int = marginal_effects(
            &th,
            &tree,
            &ds,
            &formula,
            &EffectsOptions { target: "das".into(), mode: EffectsMode::Integrated, nodes: 30 },
        )
        .unwrap();
        for (a, b) in plug.points.iter().zip(&int.points) {
            for (pa, pb) in a.pi_y.iter().zip(&b.pi_y) {
                assert!((pa - pb).abs() < 1e-9);
            }
            assert!((a.xi - b.xi).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_covariate_rejected() {
        let (_f, ds) = toy_dataset();
        let tree = TreeSpec::linear(4).unwrap();
        let th = theta(-1.0, vec![], 0.5);
        let opts = EffectsOptions {
            target: "nope".into(),
            mode: EffectsMode::PlugIn,
            nodes: 30,
        };
        assert!(matches!(
            marginal_effects(&th, &tree, &ds, &Formula::default(), &opts),
            Err(EffectsError::UnknownCovariate(_))
        ));
    }
}
