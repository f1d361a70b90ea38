//! Binary decision trees for the rating process.
//!
//! A tree over M response categories is declared through a mapping matrix
//! `T` (M rows, N node columns). Entry `1` means the category takes the
//! "success" branch at that node, `0` the other branch, `NA` that the node is
//! off the category's root-to-leaf path. Each node carries a logistic
//! probability driven by the rater's ability and the node's easiness.

use thiserror::Error;

/// One cell of the mapping matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Zero,
    One,
    /// The node is not on this category's path.
    Na,
}

impl Cell {
    pub fn parse(token: &str) -> Result<Cell, TreeError> {
        match token.trim() {
            "0" => Ok(Cell::Zero),
            "1" => Ok(Cell::One),
            "NA" | "na" | "Na" => Ok(Cell::Na),
            other => Err(TreeError::BadToken(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("mapping matrix must have at least 2 rows and 1 column, got {m}x{n}")]
    TooSmall { m: usize, n: usize },
    #[error("mapping matrix rows must all have {expected} entries, row {row} has {got}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("row {row} is entirely NA")]
    AllNaRow { row: usize },
    #[error("rows {a} and {b} are identical; distinct categories must take distinct paths")]
    DuplicateRows { a: usize, b: usize },
    #[error("normalization probe failed: category probabilities sum to {sum} (expected 1); the matrix does not encode a tree")]
    NotATree { sum: f64 },
    #[error("invalid matrix token {0:?} (expected 0, 1 or NA)")]
    BadToken(String),
    #[error("easiness vector has length {got}, tree has {expected} nodes")]
    AlphaLength { got: usize, expected: usize },
}

/// A validated response tree: M categories, N internal nodes, and the
/// mapping matrix tying them together.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    m: usize,
    n: usize,
    cells: Vec<Cell>, // row-major M x N
}

/// Node easiness values, expanded to one value per node.
///
/// Built either from a single shared value or from one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEasiness {
    values: Vec<f64>,
}

impl NodeEasiness {
    /// One common easiness for all `n` nodes.
    pub fn shared(alpha: f64, n: usize) -> Self {
        NodeEasiness { values: vec![alpha; n] }
    }

    /// One easiness per node.
    pub fn per_node(values: Vec<f64>) -> Self {
        NodeEasiness { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Logistic branch probability exp(eta + alpha) / (1 + exp(eta + alpha)),
/// evaluated on the stable branch so it never overflows.
#[inline]
pub fn node_prob(eta: f64, alpha: f64) -> f64 {
    let z = eta + alpha;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Validates a raw mapping matrix and returns a [`TreeSpec`].
///
/// Besides shape checks, validity is probed numerically: for a handful of
/// seeded ability/easiness draws the induced category probabilities must sum
/// to one. A matrix that passes the probe encodes a proper partition of the
/// outcome space, which is the operational definition of a tree here.
pub fn validate_tree(rows: &[Vec<Cell>]) -> Result<TreeSpec, TreeError> {
    let m = rows.len();
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    if m < 2 || n < 1 {
        return Err(TreeError::TooSmall { m, n });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(TreeError::Ragged { row: i, expected: n, got: row.len() });
        }
        if row.iter().all(|c| *c == Cell::Na) {
            return Err(TreeError::AllNaRow { row: i });
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if rows[i] == rows[j] {
                return Err(TreeError::DuplicateRows { a: i, b: j });
            }
        }
    }
    let tree = TreeSpec {
        m,
        n,
        cells: rows.iter().flatten().copied().collect(),
    };
    // Normalization probe with a tiny deterministic LCG; eight draws of
    // (eta, alpha) over moderate ranges are enough to catch non-tree matrices.
    let mut state: u64 = 0x9e3779b97f4a7c15;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..8 {
        let eta = 8.0 * next() - 4.0;
        let alphas: Vec<f64> = (0..n).map(|_| 4.0 * next() - 2.0).collect();
        let probs = tree.category_probs(eta, &NodeEasiness::per_node(alphas))?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(TreeError::NotATree { sum });
        }
    }
    Ok(tree)
}

impl TreeSpec {
    /// Number of response categories.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of internal nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.n + col]
    }

    /// Category probabilities pi^y for a given ability and node easiness.
    ///
    /// Each category's probability is the product over the nodes on its path
    /// of the branch probability it takes there: p_n when the cell is 1,
    /// 1 - p_n when it is 0, with p_n = [`node_prob`]`(eta, alpha_n)`.
    pub fn category_probs(&self, eta: f64, alphas: &NodeEasiness) -> Result<Vec<f64>, TreeError> {
        if alphas.len() != self.n {
            return Err(TreeError::AlphaLength { got: alphas.len(), expected: self.n });
        }
        let mut out = vec![0.0; self.m];
        self.category_probs_into(eta, alphas.values(), &mut out);
        Ok(out)
    }

    /// Allocation-free variant used in the likelihood hot loop. `alphas`
    /// must have length N and `out` length M.
    #[inline]
    pub(crate) fn category_probs_into(&self, eta: f64, alphas: &[f64], out: &mut [f64]) {
        debug_assert_eq!(alphas.len(), self.n);
        debug_assert_eq!(out.len(), self.m);
        // Branch probabilities are shared across rows; compute them once.
        let mut node_p = [0.0f64; 32];
        let use_stack = self.n <= 32;
        let mut node_heap;
        let node_p: &mut [f64] = if use_stack {
            &mut node_p[..self.n]
        } else {
            node_heap = vec![0.0; self.n];
            &mut node_heap
        };
        for (p, a) in node_p.iter_mut().zip(alphas) {
            *p = node_prob(eta, *a);
        }
        for (row, slot) in out.iter_mut().enumerate() {
            let mut prob = 1.0;
            for (col, &p) in node_p.iter().enumerate() {
                match self.cell(row, col) {
                    Cell::One => prob *= p,
                    Cell::Zero => prob *= 1.0 - p,
                    Cell::Na => {}
                }
            }
            *slot = prob;
        }
    }

    /// The linear (chain) tree over `m` categories: N = m - 1 nodes, the
    /// "failure" branch at node n terminates in category n + 1 and the
    /// "success" branch continues to the next node.
    pub fn linear(m: usize) -> Result<TreeSpec, TreeError> {
        if m < 2 {
            return Err(TreeError::TooSmall { m, n: m.saturating_sub(1) });
        }
        let n = m - 1;
        let mut rows = Vec::with_capacity(m);
        for cat in 0..m {
            let mut row = vec![Cell::Na; n];
            if cat < n {
                for item in row.iter_mut().take(cat) {
                    *item = Cell::One;
                }
                row[cat] = Cell::Zero;
            } else {
                for item in row.iter_mut() {
                    *item = Cell::One;
                }
            }
            rows.push(row);
        }
        validate_tree(&rows)
    }

    /// The nested five-category tree: the root splits off the middle
    /// category, a second node separates the low pair from the high pair,
    /// and two leaf nodes resolve within each pair.
    pub fn nested5() -> TreeSpec {
        use Cell::{Na, One, Zero};
        let rows = vec![
            vec![One, Zero, Zero, Na],
            vec![One, Zero, One, Na],
            vec![Zero, Na, Na, Na],
            vec![One, One, Na, Zero],
            vec![One, One, Na, One],
        ];
        validate_tree(&rows).expect("builtin nested tree is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn parse_rows(spec: &[&str]) -> Vec<Vec<Cell>> {
        spec.iter()
            .map(|row| row.split(',').map(|t| Cell::parse(t).unwrap()).collect())
            .collect()
    }

    #[test]
    fn node_prob_basics() {
        assert_eq!(node_prob(0.0, 0.0), 0.5);
        assert_eq!(node_prob(800.0, 100.0), 1.0);
        assert_eq!(node_prob(-800.0, -100.0), 0.0);
        // alpha taken from a fitted shared-easiness model
        assert_relative_eq!(
            node_prob(1.0, -1.248),
            1.0 / (1.0 + 0.248f64.exp()),
            epsilon = 1e-15
        );
        assert_relative_eq!(node_prob(1.0, -1.248), 0.4383, epsilon = 5e-5);
    }

    #[test]
    fn node_prob_complement_symmetry() {
        for i in 0..200 {
            let x = -20.0 + 0.2 * i as f64;
            assert_relative_eq!(node_prob(-x, 0.0) + node_prob(x, 0.0), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn nested_five_category_matrix_is_valid() {
        let rows = parse_rows(&["1,0,0,NA", "1,0,1,NA", "0,NA,NA,NA", "1,1,NA,0", "1,1,NA,1"]);
        let tree = validate_tree(&rows).unwrap();
        assert_eq!(tree.m(), 5);
        assert_eq!(tree.n(), 4);
        assert_eq!(tree, TreeSpec::nested5());
    }

    #[test]
    fn linear_four_category_matrix_is_valid() {
        let rows = parse_rows(&["0,NA,NA", "1,0,NA", "1,1,0", "1,1,1"]);
        let tree = validate_tree(&rows).unwrap();
        assert_eq!(tree.m(), 4);
        assert_eq!(tree.n(), 3);
        assert_eq!(tree, TreeSpec::linear(4).unwrap());
    }

    #[test]
    fn duplicate_rows_rejected() {
        let rows = parse_rows(&["0,NA", "1,0", "1,0"]);
        assert!(matches!(
            validate_tree(&rows),
            Err(TreeError::DuplicateRows { a: 1, b: 2 })
        ));
    }

    #[test]
    fn all_na_row_rejected() {
        let rows = parse_rows(&["0,NA", "NA,NA", "1,0"]);
        assert!(matches!(validate_tree(&rows), Err(TreeError::AllNaRow { row: 1 })));
    }

    #[test]
    fn non_tree_matrix_fails_probe() {
        // Two categories both taking the success branch of a single node:
        // rows distinct via a second node, but the masses do not partition.
        let rows = parse_rows(&["1,NA", "1,1", "1,0"]);
        assert!(matches!(validate_tree(&rows), Err(TreeError::NotATree { .. })));
    }

    #[test]
    fn linear_tree_probs_at_zero() {
        let tree = TreeSpec::linear(4).unwrap();
        let probs = tree
            .category_probs(0.0, &NodeEasiness::shared(0.0, 3))
            .unwrap();
        let expected = [0.5, 0.25, 0.125, 0.125];
        for (p, e) in probs.iter().zip(expected) {
            assert_relative_eq!(*p, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn nested_tree_probs_at_zero() {
        let tree = TreeSpec::nested5();
        let probs = tree
            .category_probs(0.0, &NodeEasiness::shared(0.0, 4))
            .unwrap();
        let expected = [0.125, 0.125, 0.5, 0.125, 0.125];
        for (p, e) in probs.iter().zip(expected) {
            assert_relative_eq!(*p, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn saturation_puts_all_mass_on_all_ones_path() {
        for tree in [TreeSpec::linear(4).unwrap(), TreeSpec::nested5()] {
            let n = tree.n();
            let probs = tree
                .category_probs(500.0, &NodeEasiness::shared(500.0, n))
                .unwrap();
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_relative_eq!(probs[argmax], 1.0, epsilon = 1e-12);
            // the winning category is the one whose path is all ones
            assert!((0..n).all(|c| tree.cell(argmax, c) != Cell::Zero));
        }
    }

    #[test]
    fn normalization_over_grid() {
        for tree in [
            TreeSpec::linear(4).unwrap(),
            TreeSpec::linear(7).unwrap(),
            TreeSpec::nested5(),
        ] {
            let n = tree.n();
            for ei in 0..21 {
                let eta = -10.0 + ei as f64;
                for ai in 0..11 {
                    let alpha = -5.0 + ai as f64;
                    let probs = tree
                        .category_probs(eta, &NodeEasiness::shared(alpha, n))
                        .unwrap();
                    let sum: f64 = probs.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
                }
            }
        }
    }

    #[test]
    fn linear_tree_stochastic_ordering_in_eta() {
        let tree = TreeSpec::linear(5).unwrap();
        let alphas = NodeEasiness::per_node(vec![0.4, -0.7, 1.1, -0.2]);
        let mut prev: Option<Vec<f64>> = None;
        for i in 0..41 {
            let eta = -6.0 + 0.3 * i as f64;
            let probs = tree.category_probs(eta, &alphas).unwrap();
            // upper-tail sums Pr(C >= m)
            let tails: Vec<f64> = (0..5)
                .map(|m| probs[m..].iter().sum::<f64>())
                .collect();
            if let Some(p) = prev {
                for (t_now, t_prev) in tails.iter().zip(&p) {
                    assert!(t_now + 1e-12 >= *t_prev);
                }
            }
            prev = Some(tails);
        }
    }
}
