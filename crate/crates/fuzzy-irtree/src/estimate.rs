//! Constrained marginal maximum-likelihood estimation.
//!
//! The parameter space is restricted to sum(|alpha|) + sum(|beta|) <= 5 and
//! sigma in (0, 3.5]. Two optimizer paths are available: a quasi-Newton
//! (BFGS) run on transformed coordinates (sigma on the log scale, the budget
//! constraint enforced by a quadratic penalty outside the feasible set) and
//! an augmented-Lagrangian run with the constraints handled explicitly.
//! Gradients are numeric central differences; standard errors come from the
//! inverse numeric Hessian of the negative log-likelihood at the optimum.

use crate::fuzzymix::FuzzyRating;
use crate::irtree::{NodeEasiness, TreeError, TreeSpec};
use crate::quadrature::{gauss_hermite, log_likelihood_counted, GHRule, QuadError, DEFAULT_NODES};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Sum-of-absolute-values budget on the (alpha, beta) block.
pub const PARAM_BUDGET: f64 = 5.0;
/// Upper bound on the ability standard deviation.
pub const SIGMA_MAX: f64 = 3.5;
/// Operational lower bound standing in for the open constraint sigma > 0.
pub const SIGMA_MIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("shared easiness requires exactly one alpha, got {0}")]
    SharedAlphaCount(usize),
    #[error("sigma must be finite and nonnegative, got {0}")]
    BadSigma(f64),
    #[error("cannot compare fits over datasets of different size ({a} vs {b})")]
    CompareSizeMismatch { a: usize, b: usize },
    #[error("no fits to compare")]
    NothingToCompare,
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Whether all tree nodes share one easiness value or each node has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaSharing {
    Shared,
    PerNode,
}

/// Coordinate system used when flattening the parameters for an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackMode {
    /// sigma mapped to ln(sigma); suited to unconstrained quasi-Newton.
    Transformed,
    /// identity coordinates; constraints handled explicitly (AUGLAG path).
    Constrained,
}

/// The model parameters theta = {alpha, beta, sigma} together with the
/// alpha-sharing scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    sigma: f64,
    sharing: AlphaSharing,
}

impl ParamVector {
    pub fn new(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        sigma: f64,
        sharing: AlphaSharing,
    ) -> Result<Self, FitError> {
        if sharing == AlphaSharing::Shared && alpha.len() != 1 {
            return Err(FitError::SharedAlphaCount(alpha.len()));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(FitError::BadSigma(sigma));
        }
        Ok(ParamVector { alpha, beta, sigma, sharing })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sharing(&self) -> AlphaSharing {
        self.sharing
    }

    /// Node easiness expanded to the tree's node count.
    pub fn easiness(&self, tree: &TreeSpec) -> Result<NodeEasiness, TreeError> {
        match self.sharing {
            AlphaSharing::Shared => Ok(NodeEasiness::shared(self.alpha[0], tree.n())),
            AlphaSharing::PerNode => {
                if self.alpha.len() != tree.n() {
                    return Err(TreeError::AlphaLength {
                        got: self.alpha.len(),
                        expected: tree.n(),
                    });
                }
                Ok(NodeEasiness::per_node(self.alpha.clone()))
            }
        }
    }

    /// Number of free parameters: alphas after sharing + betas + sigma.
    pub fn n_params(&self) -> usize {
        self.alpha.len() + self.beta.len() + 1
    }

    /// Sum of absolute values of the free (alpha, beta) block.
    pub fn budget(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).map(|v| v.abs()).sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.budget() <= PARAM_BUDGET + 1e-9
            && self.sigma > 0.0
            && self.sigma <= SIGMA_MAX + 1e-9
    }

    /// Flattens theta into an optimizer vector.
    pub fn pack(&self, mode: PackMode) -> Vec<f64> {
        let mut v: Vec<f64> = self.alpha.iter().chain(&self.beta).copied().collect();
        match mode {
            PackMode::Transformed => v.push(self.sigma.max(SIGMA_MIN).ln()),
            PackMode::Constrained => v.push(self.sigma),
        }
        v
    }

    /// Inverse of [`ParamVector::pack`] given the block layout.
    pub fn unpack(
        v: &[f64],
        n_alpha: usize,
        n_beta: usize,
        sharing: AlphaSharing,
        mode: PackMode,
    ) -> Result<Self, FitError> {
        debug_assert_eq!(v.len(), n_alpha + n_beta + 1);
        let alpha = v[..n_alpha].to_vec();
        let beta = v[n_alpha..n_alpha + n_beta].to_vec();
        let raw = v[n_alpha + n_beta];
        // line searches can step far outside the feasible region; keep
        // sigma finite so the penalty terms, not an error, reject the point
        let sigma = match mode {
            PackMode::Transformed => raw.exp().clamp(0.0, 1e6),
            PackMode::Constrained => raw.clamp(0.0, 1e6),
        };
        ParamVector::new(alpha, beta, sigma, sharing)
    }
}

/// Optimizer family, mirroring the two estimation routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerPath {
    QuasiNewton,
    AugLag,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub nodes: usize,
    pub starts: usize,
    pub seed: u64,
    pub optimizer: OptimizerPath,
    pub max_iter: usize,
    /// convergence threshold on |delta logL|
    pub tol_f: f64,
    /// convergence threshold on the gradient norm
    pub tol_grad: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            nodes: DEFAULT_NODES,
            starts: 5,
            seed: 0,
            optimizer: OptimizerPath::QuasiNewton,
            max_iter: 500,
            tol_f: 1e-8,
            tol_grad: 1e-5,
        }
    }
}

/// A standard error together with a reliability flag; flagged rather than
/// omitted when the Hessian is not positive definite or the estimate sits
/// on a constraint boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdError {
    pub value: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ParamVector,
    pub std_errors: Vec<StdError>,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// sigma landed at its lower bound
    pub sigma_at_lower: bool,
    /// sigma landed at its upper bound
    pub sigma_at_upper: bool,
    /// the |alpha,beta| budget is active
    pub budget_active: bool,
    /// every response in the dataset is identical
    pub degenerate_data: bool,
    /// observations floored during the final likelihood evaluation
    pub floored: usize,
}

impl FitResult {
    pub fn at_boundary(&self) -> bool {
        self.sigma_at_lower || self.sigma_at_upper || self.budget_active
    }
}

/// Bayesian information criterion, -2 lnL + p ln I.
pub fn bic(loglik: f64, p: usize, n_obs: usize) -> f64 {
    assert!(n_obs >= 1, "BIC needs at least one observation");
    -2.0 * loglik + p as f64 * (n_obs as f64).ln()
}

/// Ranks fits by ascending BIC; ties broken by fewer parameters, then by
/// input order. Returns indices into `fits`.
pub fn compare(fits: &[FitResult]) -> Result<Vec<usize>, FitError> {
    if fits.is_empty() {
        return Err(FitError::NothingToCompare);
    }
    let n = fits[0].n_obs;
    for f in fits {
        if f.n_obs != n {
            return Err(FitError::CompareSizeMismatch { a: n, b: f.n_obs });
        }
    }
    let mut idx: Vec<usize> = (0..fits.len()).collect();
    idx.sort_by(|&a, &b| {
        fits[a]
            .bic
            .total_cmp(&fits[b].bic)
            .then(fits[a].n_params.cmp(&fits[b].n_params))
            .then(a.cmp(&b))
    });
    Ok(idx)
}

// ---------------------------------------------------------------------------
// numeric differentiation and BFGS
// ---------------------------------------------------------------------------

/// Central-difference gradient with step max(1e-5, 1e-5 |x_j|).
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = (1e-5f64).max(1e-5 * x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

struct MinResult {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

/// Plain BFGS with a backtracking Armijo line search.
fn bfgs(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    max_iter: usize,
    tol_f: f64,
    tol_grad: f64,
) -> MinResult {
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut grad = DVector::from_vec(numeric_gradient(f, x.as_slice()));
    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        iterations += 1;
        let gnorm = grad.norm();
        if gnorm < tol_grad {
            converged = true;
            break;
        }
        let mut dir = -(&h_inv * &grad);
        if dir.dot(&grad) >= 0.0 {
            // not a descent direction; restart from steepest descent
            h_inv = DMatrix::identity(d, d);
            dir = -grad.clone();
        }
        // backtracking line search
        let slope = dir.dot(&grad);
        let mut t = 1.0;
        let mut x_new = &x + t * &dir;
        let mut f_new = f(x_new.as_slice());
        let mut ls_ok = false;
        for _ in 0..50 {
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * slope {
                ls_ok = true;
                break;
            }
            t *= 0.5;
            x_new = &x + t * &dir;
            f_new = f(x_new.as_slice());
        }
        if !ls_ok {
            converged = gnorm < 10.0 * tol_grad;
            break;
        }
        let grad_new = DVector::from_vec(numeric_gradient(f, x_new.as_slice()));
        let s = &x_new - &x;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h_inv = &left * h_inv * &right + rho * &s * s.transpose();
        }
        let df = (fx - f_new).abs();
        x = x_new;
        fx = f_new;
        grad = grad_new;
        if df < tol_f && grad.norm() < tol_grad {
            converged = true;
            break;
        }
    }
    MinResult {
        x: x.as_slice().to_vec(),
        f: fx,
        iterations,
        grad_norm: grad.norm(),
        converged,
    }
}

// ---------------------------------------------------------------------------
// fitting
// ---------------------------------------------------------------------------

struct Objective<'a> {
    ys: &'a [FuzzyRating],
    xs: &'a [Vec<f64>],
    tree: &'a TreeSpec,
    rule: &'a GHRule,
    n_alpha: usize,
    n_beta: usize,
    sharing: AlphaSharing,
}

impl Objective<'_> {
    fn neg_loglik(&self, theta: &ParamVector) -> f64 {
        match log_likelihood_counted(self.ys, self.xs, theta, self.tree, self.rule) {
            Ok((ll, _)) => -ll,
            Err(_) => f64::INFINITY,
        }
    }

    fn try_theta_from(&self, v: &[f64], mode: PackMode) -> Result<ParamVector, FitError> {
        ParamVector::unpack(v, self.n_alpha, self.n_beta, self.sharing, mode)
    }

    fn theta_from(&self, v: &[f64], mode: PackMode) -> ParamVector {
        self.try_theta_from(v, mode).expect("layout fixed by construction")
    }

    /// Transformed-coordinate objective: -logL plus quadratic penalties
    /// activated outside the feasible set.
    fn penalized(&self, z: &[f64]) -> f64 {
        let Ok(theta) = self.try_theta_from(z, PackMode::Transformed) else {
            return f64::INFINITY;
        };
        let mut val = self.neg_loglik(&theta);
        let over_budget = theta.budget() - PARAM_BUDGET;
        if over_budget > 0.0 {
            val += 1e3 * over_budget * over_budget;
        }
        let over_sigma = theta.sigma() - SIGMA_MAX;
        if over_sigma > 0.0 {
            val += 1e3 * over_sigma * over_sigma;
        }
        val
    }
}

fn constraint_values(theta: &ParamVector) -> [f64; 3] {
    [
        theta.budget() - PARAM_BUDGET,
        theta.sigma() - SIGMA_MAX,
        SIGMA_MIN - theta.sigma(),
    ]
}

/// Augmented-Lagrangian outer loop around BFGS, with the inequality
/// constraints g <= 0 handled through multiplier updates.
fn auglag(obj: &Objective, x0: &[f64], opts: &FitOptions) -> MinResult {
    let mut lambda = [0.0f64; 3];
    let mut rho = 10.0;
    let mut x = x0.to_vec();
    let mut last = MinResult { x: x.clone(), f: f64::INFINITY, iterations: 0, grad_norm: f64::NAN, converged: false };
    let mut prev_violation = f64::INFINITY;
    let mut total_iters = 0;
    for _ in 0..12 {
        let lam = lambda;
        let penalized = |v: &[f64]| -> f64 {
            let Ok(theta) = obj.try_theta_from(v, PackMode::Constrained) else {
                return f64::INFINITY;
            };
            let mut val = obj.neg_loglik(&theta);
            for (g, l) in constraint_values(&theta).iter().zip(lam) {
                if *g >= -l / rho {
                    val += l * g + 0.5 * rho * g * g;
                } else {
                    val -= l * l / (2.0 * rho);
                }
            }
            val
        };
        let res = bfgs(&penalized, &x, opts.max_iter, opts.tol_f, opts.tol_grad);
        x = res.x.clone();
        total_iters += res.iterations;
        let theta = obj.theta_from(&x, PackMode::Constrained);
        let gs = constraint_values(&theta);
        let violation = gs.iter().cloned().fold(0.0f64, |a, g| a.max(g.max(0.0)));
        for (l, g) in lambda.iter_mut().zip(gs) {
            *l = (*l + rho * g).max(0.0);
        }
        last = MinResult { iterations: total_iters, ..res };
        if violation < 1e-8 && last.converged {
            break;
        }
        if violation > 0.25 * prev_violation {
            rho *= 5.0;
        }
        prev_violation = violation;
    }
    last
}

/// Fits the model by constrained marginal maximum likelihood with
/// multi-start optimization; returns the best run.
pub fn fit(
    ys: &[FuzzyRating],
    xs: &[Vec<f64>],
    tree: &TreeSpec,
    sharing: AlphaSharing,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if ys.is_empty() {
        return Err(FitError::EmptyData);
    }
    let rule = gauss_hermite(opts.nodes)?;
    let n_alpha = match sharing {
        AlphaSharing::Shared => 1,
        AlphaSharing::PerNode => tree.n(),
    };
    let n_beta = xs.first().map(|x| x.len()).unwrap_or(0);
    let obj = Objective { ys, xs, tree, rule: &rule, n_alpha, n_beta, sharing };

    let degenerate_data = ys.iter().all(|y| y == &ys[0]);

    // start 0 at the origin with sigma = 1; the rest jittered within the
    // constraints from a seeded stream
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dim = n_alpha + n_beta + 1;
    let mut starts: Vec<ParamVector> = Vec::with_capacity(opts.starts.max(1));
    starts.push(ParamVector::new(
        vec![0.0; n_alpha],
        vec![0.0; n_beta],
        1.0,
        sharing,
    )?);
    while starts.len() < opts.starts.max(1) {
        let mut ab: Vec<f64> = (0..dim - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let budget: f64 = ab.iter().map(|v| v.abs()).sum();
        if budget > PARAM_BUDGET * 0.9 {
            let scale = PARAM_BUDGET * 0.9 / budget;
            for v in ab.iter_mut() {
                *v *= scale;
            }
        }
        let sigma = rng.gen_range(0.2..2.0);
        starts.push(ParamVector::new(
            ab[..n_alpha].to_vec(),
            ab[n_alpha..].to_vec(),
            sigma,
            sharing,
        )?);
    }

    let mut best: Option<(MinResult, ParamVector)> = None;
    for start in &starts {
        let res = match opts.optimizer {
            OptimizerPath::QuasiNewton => {
                let z0 = start.pack(PackMode::Transformed);
                let f = |z: &[f64]| obj.penalized(z);
                let r = bfgs(&f, &z0, opts.max_iter, opts.tol_f, opts.tol_grad);
                let theta = obj.theta_from(&r.x, PackMode::Transformed);
                (r, theta)
            }
            OptimizerPath::AugLag => {
                let x0 = start.pack(PackMode::Constrained);
                let r = auglag(&obj, &x0, opts);
                let theta = obj.theta_from(&r.x, PackMode::Constrained);
                (r, theta)
            }
        };
        let better = match &best {
            None => true,
            Some((b, _)) => res.0.f < b.f,
        };
        if better {
            best = Some(res);
        }
    }
    let (min_res, mut theta) = best.expect("at least one start");

    // project back into the feasible set if a penalty path finished a hair
    // outside it
    let budget = theta.budget();
    if budget > PARAM_BUDGET {
        let scale = PARAM_BUDGET / budget;
        let alpha: Vec<f64> = theta.alpha.iter().map(|a| a * scale).collect();
        let beta: Vec<f64> = theta.beta.iter().map(|b| b * scale).collect();
        theta = ParamVector::new(alpha, beta, theta.sigma, sharing)?;
    }
    let sigma = theta.sigma.clamp(SIGMA_MIN, SIGMA_MAX);
    theta = ParamVector::new(theta.alpha.clone(), theta.beta.clone(), sigma, sharing)?;

    let (loglik, floored) = log_likelihood_counted(ys, xs, &theta, tree, &rule)?;
    let sigma_at_lower = theta.sigma <= SIGMA_MIN * 10.0 || theta.sigma < 1e-3;
    let sigma_at_upper = theta.sigma >= SIGMA_MAX - 1e-6;
    let budget_active = theta.budget() >= PARAM_BUDGET - 1e-6;
    let at_boundary = sigma_at_lower || sigma_at_upper || budget_active;

    let std_errors = standard_errors(ys, xs, tree, &rule, &theta, at_boundary)?;

    let p = theta.n_params();
    let n_obs = ys.len();
    Ok(FitResult {
        bic: bic(loglik, p, n_obs),
        theta,
        std_errors,
        loglik,
        n_params: p,
        n_obs,
        converged: min_res.converged && !degenerate_data,
        iterations: min_res.iterations,
        grad_norm: min_res.grad_norm,
        sigma_at_lower,
        sigma_at_upper,
        budget_active,
        degenerate_data,
        floored,
    })
}

/// Standard errors at theta-hat: square roots of the diagonal of the inverse
/// numeric Hessian of -logL in the original coordinates.
pub fn standard_errors(
    ys: &[FuzzyRating],
    xs: &[Vec<f64>],
    tree: &TreeSpec,
    rule: &GHRule,
    theta: &ParamVector,
    at_boundary: bool,
) -> Result<Vec<StdError>, FitError> {
    let n_alpha = theta.alpha.len();
    let n_beta = theta.beta.len();
    let sharing = theta.sharing;
    let x0 = theta.pack(PackMode::Constrained);
    let f = |v: &[f64]| -> f64 {
        let th = ParamVector::unpack(v, n_alpha, n_beta, sharing, PackMode::Constrained)
            .expect("layout fixed");
        match log_likelihood_counted(ys, xs, &th, tree, rule) {
            Ok((ll, _)) => ll,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    Ok(hessian_std_errors(&f, &x0, at_boundary))
}

/// Standard errors from the numeric Hessian of a log-likelihood surface at
/// its maximum: sqrt(diag(H^-1)) for H the Hessian of -logL. Flagged
/// unreliable (not omitted) when H is not positive definite or the optimum
/// sits on a constraint boundary.
pub fn hessian_std_errors(
    loglik: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    at_boundary: bool,
) -> Vec<StdError> {
    let d = x.len();
    let steps: Vec<f64> = x.iter().map(|v| 1e-4f64.max(1e-4 * v.abs())).collect();
    let f0 = loglik(x);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut xp = x.to_vec();
    for i in 0..d {
        // diagonal: second central difference
        xp[i] = x[i] + steps[i];
        let fp = loglik(&xp);
        xp[i] = x[i] - steps[i];
        let fm = loglik(&xp);
        xp[i] = x[i];
        hess[(i, i)] = -(fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            let (hi, hj) = (steps[i], steps[j]);
            xp[i] = x[i] + hi;
            xp[j] = x[j] + hj;
            let fpp = loglik(&xp);
            xp[j] = x[j] - hj;
            let fpm = loglik(&xp);
            xp[i] = x[i] - hi;
            let fmm = loglik(&xp);
            xp[j] = x[j] + hj;
            let fmp = loglik(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let pd_inverse = hess.clone().cholesky().map(|ch| ch.inverse());
    match pd_inverse {
        Some(inv) => (0..d)
            .map(|i| {
                let var = inv[(i, i)];
                StdError {
                    value: var.max(0.0).sqrt(),
                    reliable: !at_boundary && var > 0.0,
                }
            })
            .collect(),
        None => {
            // not positive definite: report magnitudes from a generic
            // inverse when one exists, always flagged
            let fallback = hess.try_inverse();
            (0..d)
                .map(|i| {
                    let value = match &fallback {
                        Some(inv) => inv[(i, i)].abs().sqrt(),
                        None => f64::NAN,
                    };
                    StdError { value, reliable: false }
                })
                .collect()
        }
    }
}
