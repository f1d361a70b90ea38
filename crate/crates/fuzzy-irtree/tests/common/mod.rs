//! Shared helpers for the integration suites: an adaptive-Simpson oracle
//! for the marginal probability (independent of the Gauss–Hermite path)
//! and small dataset builders.

use fuzzy_irtree::estimate::ParamVector;
use fuzzy_irtree::fuzzymix::{conditional_pmf, FuzzyRating};
use fuzzy_irtree::irtree::TreeSpec;
use std::f64::consts::PI;

/// Recursive adaptive Simpson quadrature with Richardson correction.
fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    (a, fa): (f64, f64),
    (m, fm): (f64, f64),
    (b, fb): (f64, f64),
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, (a, fa), (lm, flm), (m, fm), left, 0.5 * tol, depth - 1)
        + adaptive_step(f, (m, fm), (rm, frm), (b, fb), right, 0.5 * tol, depth - 1)
}

/// Approximates the integral of `f` over `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_step(&f, (a, fa), (m, fm), (b, fb), whole, tol, 48)
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Oracle marginal probability: the conditional pmf integrated against the
/// normal ability density over mu +/- 8 sigma by adaptive Simpson.
pub fn oracle_marginal_pmf(
    y: FuzzyRating,
    theta: &ParamVector,
    x: &[f64],
    tree: &TreeSpec,
    tol: f64,
) -> f64 {
    let mu: f64 = x.iter().zip(theta.beta()).map(|(a, b)| a * b).sum();
    let sigma = theta.sigma();
    let alphas = theta.easiness(tree).unwrap();
    adaptive_integral(
        |eta| conditional_pmf(y, eta, &alphas, tree).unwrap() * normal_pdf(eta, mu, sigma),
        mu - 8.0 * sigma,
        mu + 8.0 * sigma,
        tol,
    )
}
