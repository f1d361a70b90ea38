//! Dataset ingestion, covariate design, and model configuration.
//!
//! Datasets are CSV with a header row: integer columns `c`, `l`, `r` for the
//! fuzzy rating, remaining columns treated as covariates (numeric when every
//! entry parses as a number, categorical otherwise). Categorical covariates
//! are dummy-coded with the lexicographically first level as reference.

use crate::estimate::AlphaSharing;
use crate::fuzzymix::{FuzzyRating, MixError};
use crate::irtree::{validate_tree, Cell, TreeError, TreeSpec};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("column {column:?} at row {row}: {value:?} is not an integer")]
    BadInteger { column: &'static str, row: usize, value: String },
    #[error("row {row}: {source}")]
    BadRating { row: usize, source: MixError },
    #[error("column {column:?} at row {row} is empty; missing values are not supported")]
    MissingValue { column: String, row: usize },
    #[error("formula term {0:?} does not match any dataset column")]
    UnknownTerm(String),
    #[error("interaction {0}:{1} requires both main effects in the formula")]
    InteractionWithoutMains(String, String),
    #[error("empty formula term")]
    EmptyTerm,
    #[error("dataset has no rows")]
    Empty,
    #[error("tree has {tree_m} categories but the dataset declares M = {data_m}")]
    TreeTooSmall { tree_m: usize, data_m: usize },
    #[error("row {row}: core {c} with right spread {r} exceeds the tree's {m} categories")]
    RatingOutsideTree { row: usize, c: usize, r: usize, m: usize },
    #[error("unknown builtin tree {0:?} (expected linear, nested, or @file)")]
    UnknownTree(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric { name: String, values: Vec<f64> },
    Categorical { name: String, levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    pub fn name(&self) -> &str {
        match self {
            Column::Numeric { name, .. } | Column::Categorical { name, .. } => name,
        }
    }
}

/// Parsed dataset: fuzzy ratings plus covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub responses: Vec<FuzzyRating>,
    pub columns: Vec<Column>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name() == name)
    }
}

/// Reads a dataset from CSV, validating every rating against the declared
/// number of scale levels `m`.
pub fn read_dataset(path: impl AsRef<Path>, m: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => DataError::Csv(e),
    })?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let pos = |name: &'static str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(DataError::MissingColumn(name))
    };
    let (ci, li, ri) = (pos("c")?, pos("l")?, pos("r")?);
    let covariate_idx: Vec<usize> = (0..headers.len())
        .filter(|i| *i != ci && *i != li && *i != ri)
        .collect();

    let mut responses = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); covariate_idx.len()];
    for (rownum, record) in reader.records().enumerate() {
        let record = record?;
        let row = rownum + 1;
        let int = |idx: usize, column: &'static str| -> Result<usize, DataError> {
            let value = record.get(idx).unwrap_or("").trim();
            value.parse::<usize>().map_err(|_| DataError::BadInteger {
                column,
                row,
                value: value.to_string(),
            })
        };
        let (c, l, r) = (int(ci, "c")?, int(li, "l")?, int(ri, "r")?);
        let rating =
            FuzzyRating::new(c, l, r, m).map_err(|source| DataError::BadRating { row, source })?;
        responses.push(rating);
        for (slot, &idx) in raw.iter_mut().zip(&covariate_idx) {
            let value = record.get(idx).unwrap_or("").trim();
            if value.is_empty() {
                return Err(DataError::MissingValue { column: headers[idx].clone(), row });
            }
            slot.push(value.to_string());
        }
    }
    if responses.is_empty() {
        return Err(DataError::Empty);
    }

    let mut columns = Vec::with_capacity(covariate_idx.len());
    for (values, &idx) in raw.into_iter().zip(&covariate_idx) {
        let name = headers[idx].clone();
        let parsed: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
        match parsed {
            Some(nums) => columns.push(Column::Numeric { name, values: nums }),
            None => {
                let levels: Vec<String> = values
                    .iter()
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let codes = values
                    .iter()
                    .map(|v| levels.iter().position(|l| l == v).unwrap())
                    .collect();
                columns.push(Column::Categorical { name, levels, codes });
            }
        }
    }
    Ok(Dataset { m, responses, columns })
}

/// Writes a dataset in the same CSV layout `read_dataset` expects. Floats
/// use the shortest round-trip representation, so write-then-read is exact.
pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(DataError::Csv)?;
    let mut header = vec!["c".to_string(), "l".to_string(), "r".to_string()];
    header.extend(ds.columns.iter().map(|c| c.name().to_string()));
    writer.write_record(&header)?;
    for (i, y) in ds.responses.iter().enumerate() {
        let mut rec = vec![y.core().to_string(), y.left().to_string(), y.right().to_string()];
        for col in &ds.columns {
            match col {
                Column::Numeric { values, .. } => rec.push(format!("{}", values[i])),
                Column::Categorical { levels, codes, .. } => rec.push(levels[codes[i]].clone()),
            }
        }
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// formulas and design matrices
// ---------------------------------------------------------------------------

/// One formula term: a main effect or a pairwise interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

/// A covariate formula: main effects and pairwise interactions, e.g.
/// `sex+das+sex:das`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl Formula {
    /// Parses `a+b+a:b`; `-`, `1`, and the empty string mean no covariates.
    pub fn parse(text: &str) -> Result<Formula, DataError> {
        let text = text.trim();
        if text.is_empty() || text == "-" || text == "1" {
            return Ok(Formula::default());
        }
        let mut terms = Vec::new();
        for part in text.split('+') {
            let part = part.trim();
            if part.is_empty() {
                return Err(DataError::EmptyTerm);
            }
            if let Some((a, b)) = part.split_once(':') {
                let (a, b) = (a.trim().to_string(), b.trim().to_string());
                if a.is_empty() || b.is_empty() {
                    return Err(DataError::EmptyTerm);
                }
                terms.push(Term::Interaction(a, b));
            } else {
                terms.push(Term::Main(part.to_string()));
            }
        }
        Ok(Formula { terms })
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "-");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Main(n) => n.clone(),
                Term::Interaction(a, b) => format!("{a}:{b}"),
            })
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// A single basis column of the expanded design.
#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// numeric covariate as-is
    Num(String),
    /// indicator of one categorical level
    Dummy(String, String),
    Product(Box<Basis>, Box<Basis>),
}

/// Value of one covariate at a point (a dataset row or an effects grid
/// point).
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Num(f64),
    Level(String),
}

/// The expanded design: column names plus the recipe to evaluate them at any
/// covariate assignment. Built once per (dataset schema, formula) pair so
/// the fit and the effects grid share the same coding.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInfo {
    pub names: Vec<String>,
    basis: Vec<Basis>,
}

fn expand_main(col: &Column) -> Vec<(String, Basis)> {
    match col {
        Column::Numeric { name, .. } => vec![(name.clone(), Basis::Num(name.clone()))],
        Column::Categorical { name, levels, .. } => levels[1..]
            .iter()
            .map(|lev| {
                (
                    format!("{name}={lev}"),
                    Basis::Dummy(name.clone(), lev.clone()),
                )
            })
            .collect(),
    }
}

/// Builds the design recipe for a formula against a dataset schema.
pub fn design_info(ds: &Dataset, formula: &Formula) -> Result<DesignInfo, DataError> {
    let lookup = |name: &str| -> Result<&Column, DataError> {
        ds.column(name)
            .ok_or_else(|| DataError::UnknownTerm(name.to_string()))
    };
    let mains: Vec<&String> = formula
        .terms
        .iter()
        .filter_map(|t| match t {
            Term::Main(n) => Some(n),
            _ => None,
        })
        .collect();
    let mut names = Vec::new();
    let mut basis = Vec::new();
    for term in &formula.terms {
        match term {
            Term::Main(n) => {
                for (name, b) in expand_main(lookup(n)?) {
                    names.push(name);
                    basis.push(b);
                }
            }
            Term::Interaction(a, b) => {
                if !mains.contains(&a) || !mains.contains(&b) {
                    return Err(DataError::InteractionWithoutMains(a.clone(), b.clone()));
                }
                for (na, ba) in expand_main(lookup(a)?) {
                    for (nb, bb) in expand_main(lookup(b)?) {
                        names.push(format!("{na}:{nb}"));
                        basis.push(Basis::Product(Box::new(ba.clone()), Box::new(bb)));
                    }
                }
            }
        }
    }
    Ok(DesignInfo { names, basis })
}

impl DesignInfo {
    pub fn width(&self) -> usize {
        self.basis.len()
    }

    fn eval_basis(b: &Basis, get: &dyn Fn(&str) -> CellValue) -> f64 {
        match b {
            Basis::Num(name) => match get(name) {
                CellValue::Num(v) => v,
                CellValue::Level(_) => f64::NAN,
            },
            Basis::Dummy(name, level) => match get(name) {
                CellValue::Level(l) => {
                    if l == *level {
                        1.0
                    } else {
                        0.0
                    }
                }
                CellValue::Num(_) => f64::NAN,
            },
            Basis::Product(a, b) => Self::eval_basis(a, get) * Self::eval_basis(b, get),
        }
    }

    /// Evaluates the design row at an arbitrary covariate assignment.
    pub fn row_at(&self, get: &dyn Fn(&str) -> CellValue) -> Vec<f64> {
        self.basis.iter().map(|b| Self::eval_basis(b, get)).collect()
    }

    /// Design rows for the whole dataset.
    pub fn rows(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        (0..ds.len())
            .map(|i| {
                self.row_at(&|name: &str| match ds.column(name) {
                    Some(Column::Numeric { values, .. }) => CellValue::Num(values[i]),
                    Some(Column::Categorical { levels, codes, .. }) => {
                        CellValue::Level(levels[codes[i]].clone())
                    }
                    None => CellValue::Num(f64::NAN),
                })
            })
            .collect()
    }
}

/// Convenience: design column names and rows in one call.
pub fn design_matrix(
    ds: &Dataset,
    formula: &Formula,
) -> Result<(Vec<String>, Vec<Vec<f64>>), DataError> {
    let info = design_info(ds, formula)?;
    let rows = info.rows(ds);
    Ok((info.names, rows))
}

// ---------------------------------------------------------------------------
// model specification
// ---------------------------------------------------------------------------

/// Which response tree a model uses.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeChoice {
    /// chain over the dataset's M categories, N = M - 1 nodes
    Linear,
    /// the five-category nested topology
    Nested,
    Explicit(TreeSpec),
}

impl TreeChoice {
    /// Parses `linear`, `nested`, or `@path` pointing at a matrix file.
    pub fn parse(text: &str) -> Result<TreeChoice, DataError> {
        match text.trim() {
            "linear" => Ok(TreeChoice::Linear),
            "nested" => Ok(TreeChoice::Nested),
            other if other.starts_with('@') => {
                let path = &other[1..];
                let content = std::fs::read_to_string(path).map_err(|source| DataError::Io {
                    path: path.to_string(),
                    source,
                })?;
                Ok(TreeChoice::Explicit(parse_tree_matrix(&content)?))
            }
            other => Err(DataError::UnknownTree(other.to_string())),
        }
    }

    /// Resolves to a concrete tree for a dataset with `data_m` scale levels
    /// and checks every rating fits the tree's category count.
    pub fn resolve(&self, ds: &Dataset) -> Result<TreeSpec, DataError> {
        let tree = match self {
            TreeChoice::Linear => TreeSpec::linear(ds.m)?,
            TreeChoice::Nested => TreeSpec::nested5(),
            TreeChoice::Explicit(t) => t.clone(),
        };
        if tree.m() < ds.m {
            // a wider tree is fine (upper categories just get zero counts);
            // a narrower one cannot host the data
            for (i, y) in ds.responses.iter().enumerate() {
                if y.core() > tree.m() || y.right() > tree.m() - y.core() {
                    return Err(DataError::RatingOutsideTree {
                        row: i + 1,
                        c: y.core(),
                        r: y.right(),
                        m: tree.m(),
                    });
                }
            }
            return Err(DataError::TreeTooSmall { tree_m: tree.m(), data_m: ds.m });
        }
        Ok(tree)
    }

    pub fn label(&self) -> String {
        match self {
            TreeChoice::Linear => "linear".to_string(),
            TreeChoice::Nested => "nested".to_string(),
            TreeChoice::Explicit(t) => format!("explicit({}x{})", t.m(), t.n()),
        }
    }
}

/// Parses a mapping matrix from text: one row per line, comma-separated
/// tokens `0|1|NA`.
pub fn parse_tree_matrix(text: &str) -> Result<TreeSpec, DataError> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<Cell>, TreeError> = line.split(',').map(Cell::parse).collect();
        rows.push(row?);
    }
    Ok(validate_tree(&rows)?)
}

/// A full model specification: tree, covariates, alpha sharing, quadrature
/// size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub tree: TreeChoice,
    pub formula: Formula,
    pub sharing: AlphaSharing,
    pub nodes: usize,
}

impl ModelSpec {
    /// Parses the compact `key=value` syntax used by the compare command,
    /// e.g. `tree=linear,formula=sex+das,alpha-sharing=shared`.
    pub fn parse(text: &str, default_nodes: usize) -> Result<ModelSpec, DataError> {
        let mut tree = TreeChoice::Linear;
        let mut formula = Formula::default();
        let mut sharing = AlphaSharing::Shared;
        let mut nodes = default_nodes;
        let mut name = None;
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            match part.split_once('=') {
                Some(("tree", v)) => tree = TreeChoice::parse(v)?,
                Some(("formula", v)) => formula = Formula::parse(v)?,
                Some(("alpha-sharing", "shared")) => sharing = AlphaSharing::Shared,
                Some(("alpha-sharing", "per-node")) => sharing = AlphaSharing::PerNode,
                Some(("name", v)) => name = Some(v.to_string()),
                Some(("H", v)) | Some(("nodes", v)) => {
                    nodes = v.parse().map_err(|_| DataError::UnknownTree(v.to_string()))?
                }
                _ => return Err(DataError::UnknownTerm(part.to_string())),
            }
        }
        let name = name.unwrap_or_else(|| {
            format!(
                "{}({})",
                tree.label(),
                if formula.is_empty() { "-".to_string() } else { formula.to_string() }
            )
        });
        Ok(ModelSpec { name, tree, formula, sharing, nodes })
    }
}
