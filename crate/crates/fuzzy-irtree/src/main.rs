use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fuzzy_irtree::dataset::{
    design_info, read_dataset, write_dataset, Column, Dataset, Formula, ModelSpec, TreeChoice,
};
use fuzzy_irtree::effects::{marginal_effects, EffectsMode, EffectsOptions};
use fuzzy_irtree::estimate::{
    compare, fit, AlphaSharing, FitOptions, OptimizerPath, ParamVector,
};
use fuzzy_irtree::fuzzymix::FuzzyRating;
use fuzzy_irtree::quadrature::{gauss_hermite, log_likelihood};
use fuzzy_irtree::report::{compare_report, effects_table, fit_report, CompareRow, RunMeta};
use fuzzy_irtree::simulate::{sample_dataset, SimConfig, RNG_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fuzzy-irtree",
    about = "IRTree models for LR-type triangular fuzzy rating responses",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SharingArg {
    Shared,
    PerNode,
}

impl From<SharingArg> for AlphaSharing {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::Shared => AlphaSharing::Shared,
            SharingArg::PerNode => AlphaSharing::PerNode,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    QuasiNewton,
    Auglag,
}

impl From<OptimizerArg> for OptimizerPath {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::QuasiNewton => OptimizerPath::QuasiNewton,
            OptimizerArg::Auglag => OptimizerPath::AugLag,
        }
    }
}

#[derive(Args)]
struct FitFlags {
    /// dataset CSV with columns c,l,r and covariates
    #[arg(long)]
    data: PathBuf,
    /// number of scale levels
    #[arg(long = "M")]
    m: usize,
    /// tree: linear, nested, or @file with a 0|1|NA matrix
    #[arg(long, default_value = "linear")]
    tree: String,
    /// covariate formula, e.g. sex+das+sex:das ("-" for none)
    #[arg(long, default_value = "-")]
    formula: String,
    #[arg(long = "alpha-sharing", value_enum, default_value = "shared")]
    alpha_sharing: SharingArg,
    /// Gauss-Hermite node count
    #[arg(long = "H", default_value_t = 30)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "quasi-newton")]
    optimizer: OptimizerArg,
    /// multi-start runs
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model by marginal maximum likelihood and write a report
    Fit {
        #[command(flatten)]
        flags: FitFlags,
        /// report path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from given parameters
    Simulate {
        /// number of rows
        #[arg(long = "I")]
        rows: usize,
        #[arg(long = "M")]
        m: usize,
        #[arg(long, default_value = "linear")]
        tree: String,
        /// easiness values: one for shared, comma-separated for per-node
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        alpha: String,
        /// regression weights matching the expanded covariate columns
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        beta: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// covariate generator, repeatable:
        /// name=normal:MEAN,SD | name=uniform:A,B | name=levels:A,B,...
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit several model specs on one dataset and rank them by BIC
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "M")]
        m: usize,
        /// model spec, repeatable: tree=...,formula=...,alpha-sharing=...
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long = "H", default_value_t = 30)]
        nodes: usize,
        #[arg(long, value_enum, default_value = "quasi-newton")]
        optimizer: OptimizerArg,
        #[arg(long, default_value_t = 5)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model, then tabulate marginal effects over a covariate grid
    Effects {
        #[command(flatten)]
        flags: FitFlags,
        /// numeric covariate spanning the grid
        #[arg(long)]
        covariate: String,
        /// plug-in (eta at its mean) or integrated over the ability
        #[arg(long, default_value = "plug-in")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print Gauss-Hermite diagnostics for a node count
    Quadcheck {
        #[arg(long = "H", default_value_t = 30)]
        nodes: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // single machine-readable line on stderr
        eprintln!("error: {}", err);
        std::process::exit(1);
    }
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Everything a fit-like subcommand needs, assembled from the flags.
struct Prepared {
    dataset: Dataset,
    formula: Formula,
    covariate_names: Vec<String>,
    ys: Vec<FuzzyRating>,
    xs: Vec<Vec<f64>>,
    tree: fuzzy_irtree::TreeSpec,
}

fn prepare(flags: &FitFlags) -> Result<Prepared> {
    let ds = read_dataset(&flags.data, flags.m)?;
    let formula = Formula::parse(&flags.formula)?;
    let tree = TreeChoice::parse(&flags.tree)?.resolve(&ds)?;
    let info = design_info(&ds, &formula)?;
    let xs = info.rows(&ds);
    let ys = ds.responses.clone();
    Ok(Prepared { dataset: ds, formula, covariate_names: info.names, ys, xs, tree })
}

fn fit_options(flags: &FitFlags) -> FitOptions {
    FitOptions {
        nodes: flags.nodes,
        starts: flags.starts,
        seed: flags.seed,
        optimizer: flags.optimizer.into(),
        ..FitOptions::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { flags, out } => {
            let p = prepare(&flags)?;
            let result =
                fit(&p.ys, &p.xs, &p.tree, flags.alpha_sharing.into(), &fit_options(&flags))?;
            let meta = RunMeta {
                data_path: flags.data.display().to_string(),
                m: flags.m,
                tree: flags.tree.clone(),
                formula: p.formula.to_string(),
                covariate_names: p.covariate_names,
                sharing: flags.alpha_sharing.into(),
                nodes: flags.nodes,
                optimizer: flags.optimizer.into(),
                starts: flags.starts,
                seed: flags.seed,
            };
            emit(out, &fit_report(&result, &meta))
        }
        Command::Simulate { rows, m, tree, alpha, beta, sigma, covariates, seed, out } => {
            simulate_cmd(rows, m, &tree, &alpha, &beta, sigma, &covariates, seed, &out)
        }
        Command::Compare { data, m, models, nodes, optimizer, starts, seed, out } => {
            let ds = read_dataset(&data, m)?;
            let specs: Vec<ModelSpec> = models
                .iter()
                .map(|s| ModelSpec::parse(s, nodes))
                .collect::<Result<_, _>>()?;
            let mut fits = Vec::new();
            let mut rows_out = Vec::new();
            for spec in &specs {
                let tree = spec.tree.resolve(&ds)?;
                let info = design_info(&ds, &spec.formula)?;
                let xs = info.rows(&ds);
                let opts = FitOptions {
                    nodes: spec.nodes,
                    starts,
                    seed,
                    optimizer: optimizer.into(),
                    ..FitOptions::default()
                };
                let result = fit(&ds.responses, &xs, &tree, spec.sharing, &opts)?;
                rows_out.push(CompareRow {
                    name: spec.name.clone(),
                    covariates: spec.formula.to_string(),
                    n_params: result.n_params,
                    loglik: result.loglik,
                    bic: result.bic,
                });
                fits.push(result);
            }
            let ranking = compare(&fits)?;
            let text =
                compare_report(&rows_out, &ranking, &specs, &data.display().to_string(), ds.len());
            emit(out, &text)
        }
        Command::Effects { flags, covariate, mode, out } => {
            let p = prepare(&flags)?;
            let result =
                fit(&p.ys, &p.xs, &p.tree, flags.alpha_sharing.into(), &fit_options(&flags))?;
            let mode = match mode.as_str() {
                "plug-in" => EffectsMode::PlugIn,
                "integrated" => EffectsMode::Integrated,
                other => bail!("unknown effects mode {other:?} (plug-in|integrated)"),
            };
            let grid = marginal_effects(
                &result.theta,
                &p.tree,
                &p.dataset,
                &p.formula,
                &EffectsOptions { target: covariate, mode, nodes: flags.nodes },
            )?;
            emit(out, &effects_table(&grid))
        }
        Command::Quadcheck { nodes } => {
            quadcheck_cmd(nodes)
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

enum CovGen {
    Normal { name: String, mean: f64, sd: f64 },
    Uniform { name: String, a: f64, b: f64 },
    Levels { name: String, levels: Vec<String> },
}

fn parse_cov_gen(text: &str) -> Result<CovGen> {
    let (name, rest) = text
        .split_once('=')
        .ok_or_else(|| anyhow!("covariate spec {text:?} must look like name=kind:args"))?;
    let (kind, args) = rest
        .split_once(':')
        .ok_or_else(|| anyhow!("covariate spec {text:?} must look like name=kind:args"))?;
    let name = name.trim().to_string();
    let nums = || -> Result<Vec<f64>> {
        args.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("{text:?}: {e}")))
            .collect()
    };
    match kind {
        "normal" => {
            let v = nums()?;
            if v.len() != 2 {
                bail!("{text:?}: normal takes MEAN,SD");
            }
            Ok(CovGen::Normal { name, mean: v[0], sd: v[1] })
        }
        "uniform" => {
            let v = nums()?;
            if v.len() != 2 {
                bail!("{text:?}: uniform takes A,B");
            }
            Ok(CovGen::Uniform { name, a: v[0], b: v[1] })
        }
        "levels" => {
            let levels: Vec<String> = args.split(',').map(|s| s.trim().to_string()).collect();
            if levels.len() < 2 {
                bail!("{text:?}: levels needs at least two labels");
            }
            Ok(CovGen::Levels { name, levels })
        }
        other => bail!("unknown covariate kind {other:?} (normal|uniform|levels)"),
    }
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(vec![]);
    }
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad number {v:?}: {e}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    rows: usize,
    m: usize,
    tree: &str,
    alpha: &str,
    beta: &str,
    sigma: f64,
    covariates: &[String],
    seed: u64,
    out: &PathBuf,
) -> Result<()> {
    if rows == 0 {
        bail!("--I must be at least 1");
    }
    let tree = match TreeChoice::parse(tree)? {
        TreeChoice::Linear => fuzzy_irtree::TreeSpec::linear(m)?,
        TreeChoice::Nested => fuzzy_irtree::TreeSpec::nested5(),
        TreeChoice::Explicit(t) => t,
    };
    let gens: Vec<CovGen> = covariates.iter().map(|s| parse_cov_gen(s)).collect::<Result<_>>()?;

    // covariate draws come from their own seeded stream so the response
    // stream is unaffected by how many covariates exist
    let mut cov_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut columns = Vec::new();
    for gen in &gens {
        match gen {
            CovGen::Normal { name, mean, sd } => {
                let values = (0..rows)
                    .map(|_| {
                        let z: f64 =
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut cov_rng);
                        mean + sd * z
                    })
                    .collect();
                columns.push(Column::Numeric { name: name.clone(), values });
            }
            CovGen::Uniform { name, a, b } => {
                let values = (0..rows).map(|_| cov_rng.gen_range(*a..*b)).collect();
                columns.push(Column::Numeric { name: name.clone(), values });
            }
            CovGen::Levels { name, levels } => {
                let sorted: Vec<String> =
                    levels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                let codes = (0..rows)
                    .map(|_| {
                        let raw = cov_rng.gen_range(0..levels.len());
                        sorted.iter().position(|l| *l == levels[raw]).unwrap()
                    })
                    .collect();
                columns.push(Column::Categorical { name: name.clone(), levels: sorted, codes });
            }
        }
    }

    // expand to design rows: numeric as-is, categorical dummy-coded over the
    // lexicographically sorted levels (first level is the reference)
    let mut design_names = Vec::new();
    let mut design = vec![Vec::new(); rows];
    for col in &columns {
        match col {
            Column::Numeric { name, values } => {
                design_names.push(name.clone());
                for (row, v) in design.iter_mut().zip(values) {
                    row.push(*v);
                }
            }
            Column::Categorical { name, levels, codes } => {
                for (li, level) in levels.iter().enumerate().skip(1) {
                    design_names.push(format!("{name}={level}"));
                    for (row, code) in design.iter_mut().zip(codes) {
                        row.push(if *code == li { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    let alpha = parse_f64_list(alpha)?;
    let beta = parse_f64_list(beta)?;
    if beta.len() != design_names.len() {
        bail!(
            "--beta has {} values but the expanded design has {} columns ({})",
            beta.len(),
            design_names.len(),
            design_names.join(", ")
        );
    }
    let sharing = if alpha.len() == 1 { AlphaSharing::Shared } else { AlphaSharing::PerNode };
    let theta = ParamVector::new(alpha, beta, sigma, sharing)?;
    // fail early on an easiness/tree mismatch
    theta.easiness(&tree)?;

    let cfg = SimConfig { theta, tree, design, seed };
    let draws = sample_dataset(&cfg)?;
    let ds = Dataset {
        m,
        responses: draws.iter().map(|d| d.rating).collect(),
        columns,
    };
    write_dataset(out, &ds)?;
    println!(
        "wrote {} rows to {} (seed {}, rng {})",
        rows,
        out.display(),
        seed,
        RNG_VERSION
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// quadcheck
// ---------------------------------------------------------------------------

fn quadcheck_cmd(nodes: usize) -> Result<()> {
    let rule = gauss_hermite(nodes)?;
    let weight_sum: f64 = rule.weights().iter().sum();
    println!("H: {nodes}");
    println!("weight_sum_minus_sqrt_pi: {:.3e}", weight_sum - PI.sqrt());
    let mut reference = PI.sqrt();
    let mut worst = 0.0f64;
    let mut k = 0usize;
    while k + 2 < 2 * nodes {
        k += 2;
        reference *= (k as f64 - 1.0) / 2.0;
        let got = rule.integrate(|x| x.powi(k as i32));
        worst = worst.max(((got - reference) / reference).abs());
    }
    println!("max_even_moment_rel_err (deg <= {}): {:.3e}", 2 * nodes - 1, worst);

    // likelihood convergence on a small synthetic dataset
    let tree = fuzzy_irtree::TreeSpec::linear(4)?;
    let theta = ParamVector::new(vec![-1.0], vec![], 3.4, AlphaSharing::Shared)?;
    let ys = FuzzyRating::lattice(4);
    let xs = vec![vec![]; ys.len()];
    let reference_rule = gauss_hermite(61)?;
    let ll_ref = log_likelihood(&ys, &xs, &theta, &tree, &reference_rule)?;
    let ll = log_likelihood(&ys, &xs, &theta, &tree, &rule)?;
    println!("loglik_diff_vs_H61 (sigma=3.4 probe): {:.3e}", ll - ll_ref);
    Ok(())
}
