//! The spread mixture: entropy weight, lower-activation probability,
//! Binomial spread components, and the conditional pmf of a fuzzy response.
//!
//! Conditional on the core category, the left and right spreads are
//! independent Binomials whose success probability is the share of category
//! mass lying below the core. Whether the spreads are active at all is
//! governed by a Bernoulli with the normalized Shannon entropy of the
//! category probabilities as its parameter; the inactive component is
//! degenerate at zero spreads.

use crate::irtree::{NodeEasiness, TreeError, TreeSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("core must lie in 1..={m}, got {c}")]
    CoreOutOfRange { c: usize, m: usize },
    #[error("left spread {l} exceeds c-1 = {max} (core {c})")]
    LeftSpreadTooLarge { l: usize, c: usize, max: usize },
    #[error("right spread {r} exceeds M-c = {max} (core {c}, M = {m})")]
    RightSpreadTooLarge { r: usize, c: usize, m: usize, max: usize },
    #[error("probability vector has a negative entry: {0}")]
    NegativeEntry(f64),
    #[error("probability vector sums to {0}, expected 1 within 1e-8")]
    NotNormalized(f64),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One observed triangular fuzzy response: core `c` in 1..=M, left spread
/// `l` <= c-1 and right spread `r` <= M-c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FuzzyRating {
    c: usize,
    l: usize,
    r: usize,
}

impl FuzzyRating {
    pub fn new(c: usize, l: usize, r: usize, m: usize) -> Result<Self, MixError> {
        if c < 1 || c > m {
            return Err(MixError::CoreOutOfRange { c, m });
        }
        if l > c - 1 {
            return Err(MixError::LeftSpreadTooLarge { l, c, max: c - 1 });
        }
        if r > m - c {
            return Err(MixError::RightSpreadTooLarge { r, c, m, max: m - c });
        }
        Ok(FuzzyRating { c, l, r })
    }

    pub fn core(&self) -> usize {
        self.c
    }

    pub fn left(&self) -> usize {
        self.l
    }

    pub fn right(&self) -> usize {
        self.r
    }

    /// All triples valid for an M-point scale, in (c, l, r) lexicographic
    /// order. This lattice is the support of the conditional pmf.
    pub fn lattice(m: usize) -> Vec<FuzzyRating> {
        let mut out = Vec::new();
        for c in 1..=m {
            for l in 0..c {
                for r in 0..=(m - c) {
                    out.push(FuzzyRating { c, l, r });
                }
            }
        }
        out
    }
}

fn check_probs(pi_y: &[f64]) -> Result<(), MixError> {
    let mut sum = 0.0;
    for &p in pi_y {
        if p < 0.0 {
            return Err(MixError::NegativeEntry(p));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-8 {
        return Err(MixError::NotNormalized(sum));
    }
    Ok(())
}

/// Normalized Shannon entropy of the category probabilities, the mixture
/// weight for the spread components. 1 at the uniform vector, 0 at any
/// degenerate vector, with the 0 ln 0 := 0 convention.
pub fn entropy_weight(pi_y: &[f64]) -> Result<f64, MixError> {
    check_probs(pi_y)?;
    Ok(entropy_weight_unchecked(pi_y))
}

#[inline]
pub(crate) fn entropy_weight_unchecked(pi_y: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in pi_y {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    let xi = h / (pi_y.len() as f64).ln();
    // snap roundoff at the boundaries so the exact identities hold
    if xi <= 0.0 {
        0.0
    } else if (xi - 1.0).abs() < 1e-14 || xi > 1.0 {
        1.0
    } else {
        xi
    }
}

/// Probability of activating lower response categories: the share of the
/// non-core mass that lies strictly below the core. Zero when c = 1 (empty
/// lower set) and, by convention, when the core holds all the mass.
pub fn lower_share(pi_y: &[f64], c: usize) -> Result<f64, MixError> {
    check_probs(pi_y)?;
    if c < 1 || c > pi_y.len() {
        return Err(MixError::CoreOutOfRange { c, m: pi_y.len() });
    }
    Ok(lower_share_unchecked(pi_y, c))
}

#[inline]
pub(crate) fn lower_share_unchecked(pi_y: &[f64], c: usize) -> f64 {
    if c == 1 {
        return 0.0;
    }
    let denom = 1.0 - pi_y[c - 1];
    if denom <= 0.0 {
        return 0.0;
    }
    let below: f64 = pi_y[..c - 1].iter().sum();
    (below / denom).clamp(0.0, 1.0)
}

/// Binomial coefficient via the multiplicative formula; exact in f64 for the
/// tiny n arising here (n <= M).
#[inline]
fn binom_coeff(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 1..=k {
        c = c * (n - k + i) as f64 / i as f64;
    }
    c
}

/// Binomial pmf with the boundary cases handled as exact degenerate masses:
/// p = 0 puts all mass at 0, p = 1 at n.
#[inline]
pub fn binom_pmf(k: usize, n: usize, p: f64) -> f64 {
    debug_assert!(k <= n || n == 0);
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if k > n {
        return 0.0;
    }
    binom_coeff(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// The bracketed mixture term of the fuzzy-response probability:
/// `xi * Bin(l; c-1, pi_s) * Bin(r; M-c, 1-pi_s) + (1-xi) * I(l=0, r=0)`.
pub fn spread_bracket(
    l: usize,
    r: usize,
    c: usize,
    m: usize,
    xi: f64,
    pi_s: f64,
) -> Result<f64, MixError> {
    // reuse the rating constructor for the bound checks
    FuzzyRating::new(c, l, r, m)?;
    Ok(spread_bracket_unchecked(l, r, c, m, xi, pi_s))
}

#[inline]
pub(crate) fn spread_bracket_unchecked(
    l: usize,
    r: usize,
    c: usize,
    m: usize,
    xi: f64,
    pi_s: f64,
) -> f64 {
    let active = binom_pmf(l, c - 1, pi_s) * binom_pmf(r, m - c, 1.0 - pi_s);
    let degenerate = if l == 0 && r == 0 { 1.0 } else { 0.0 };
    xi * active + (1.0 - xi) * degenerate
}

/// Conditional pmf of a fuzzy response given ability: the core probability
/// times the spread mixture bracket. This is the full joint probability up
/// to the ability density factor.
pub fn conditional_pmf(
    y: FuzzyRating,
    eta: f64,
    alphas: &NodeEasiness,
    tree: &TreeSpec,
) -> Result<f64, MixError> {
    if y.c > tree.m() {
        return Err(MixError::CoreOutOfRange { c: y.c, m: tree.m() });
    }
    let pi_y = tree.category_probs(eta, alphas)?;
    Ok(conditional_pmf_from_probs(y, &pi_y))
}

/// Conditional pmf from precomputed category probabilities; the hot-loop
/// entry point used by the quadrature layer.
#[inline]
pub(crate) fn conditional_pmf_from_probs(y: FuzzyRating, pi_y: &[f64]) -> f64 {
    let m = pi_y.len();
    let xi = entropy_weight_unchecked(pi_y);
    let pi_s = lower_share_unchecked(pi_y, y.c);
    pi_y[y.c - 1] * spread_bracket_unchecked(y.l, y.r, y.c, m, xi, pi_s)
}

/// Natural log of [`conditional_pmf`]; `-inf` for impossible triples.
pub fn conditional_log_pmf(
    y: FuzzyRating,
    eta: f64,
    alphas: &NodeEasiness,
    tree: &TreeSpec,
) -> Result<f64, MixError> {
    Ok(conditional_pmf(y, eta, alphas, tree)?.ln())
}
