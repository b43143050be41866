//! Ordered-tree edit distance (Zhang–Shasha dynamic program, unit costs)
//! and the normalized diversity metrics built on it.

use super::ast::Expr;
use super::DslError;
use crate::Real;

/// An ordered labeled tree, the shape the edit distance operates on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    pub label: String,
    pub children: Vec<LabeledTree>,
}

impl LabeledTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self { label: label.into(), children: Vec::new() }
    }

    pub fn node(label: impl Into<String>, children: Vec<LabeledTree>) -> Self {
        Self { label: label.into(), children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(LabeledTree::size).sum::<usize>()
    }
}

impl From<&Expr> for LabeledTree {
    fn from(e: &Expr) -> Self {
        match e {
            Expr::Field(f) => LabeledTree::leaf(f.name()),
            Expr::Num(n) => LabeledTree::leaf(n.to_string()),
            Expr::Unary(op, a) => LabeledTree::node(op.name(), vec![a.as_ref().into()]),
            Expr::Binary(op, a, b) => {
                LabeledTree::node(op.name(), vec![a.as_ref().into(), b.as_ref().into()])
            }
            Expr::Ts(op, a, w) => LabeledTree::node(
                op.name(),
                vec![a.as_ref().into(), LabeledTree::leaf(w.to_string())],
            ),
            Expr::TsCorr(a, b, w) => LabeledTree::node(
                "ts_corr",
                vec![a.as_ref().into(), b.as_ref().into(), LabeledTree::leaf(w.to_string())],
            ),
            Expr::Cs(op, a) => LabeledTree::node(op.name(), vec![a.as_ref().into()]),
            Expr::Winsorize(a, p) => LabeledTree::node(
                "cs_winsorize",
                vec![a.as_ref().into(), LabeledTree::leaf(p.to_string())],
            ),
        }
    }
}

/// Postorder view used by the dynamic program (1-based, index 0 unused).
struct PostOrder {
    labels: Vec<String>,
    /// Leftmost leaf descendant of each node.
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl PostOrder {
    fn new(tree: &LabeledTree) -> Self {
        let mut labels = vec![String::new()];
        let mut lld = vec![0usize];
        fn walk(t: &LabeledTree, labels: &mut Vec<String>, lld: &mut Vec<usize>) -> usize {
            let mut leftmost = None;
            for c in &t.children {
                let ci = walk(c, labels, lld);
                leftmost.get_or_insert(lld[ci]);
            }
            labels.push(t.label.clone());
            let idx = labels.len() - 1;
            lld.push(leftmost.unwrap_or(idx));
            idx
        }
        walk(tree, &mut labels, &mut lld);
        let n = labels.len() - 1;
        // keyroots: nodes with no later node sharing their leftmost leaf
        let mut keyroots = Vec::new();
        for k in 1..=n {
            if !(k + 1..=n).any(|k2| lld[k2] == lld[k]) {
                keyroots.push(k);
            }
        }
        Self { labels, lld, keyroots }
    }

    fn len(&self) -> usize {
        self.labels.len() - 1
    }
}

/// Unit-cost tree edit distance between two ordered labeled trees.
pub fn tree_edit_distance(a: &LabeledTree, b: &LabeledTree) -> usize {
    let src = PostOrder::new(a);
    let dst = PostOrder::new(b);
    let (n1, n2) = (src.len(), dst.len());
    let mut td = vec![vec![0usize; n2 + 1]; n1 + 1];
    let mut fd = vec![vec![0usize; n2 + 1]; n1 + 1];

    for &i in &src.keyroots {
        for &j in &dst.keyroots {
            let (li, lj) = (src.lld[i], dst.lld[j]);
            fd[li - 1][lj - 1] = 0;
            for di in li..=i {
                fd[di][lj - 1] = fd[di - 1][lj - 1] + 1;
            }
            for dj in lj..=j {
                fd[li - 1][dj] = fd[li - 1][dj - 1] + 1;
            }
            for di in li..=i {
                for dj in lj..=j {
                    if src.lld[di] == li && dst.lld[dj] == lj {
                        let relabel = usize::from(src.labels[di] != dst.labels[dj]);
                        fd[di][dj] = (fd[di - 1][dj] + 1)
                            .min(fd[di][dj - 1] + 1)
                            .min(fd[di - 1][dj - 1] + relabel);
                        td[di][dj] = fd[di][dj];
                    } else {
                        fd[di][dj] = (fd[di - 1][dj] + 1)
                            .min(fd[di][dj - 1] + 1)
                            .min(fd[src.lld[di] - 1][dst.lld[dj] - 1] + td[di][dj]);
                    }
                }
            }
        }
    }
    td[n1][n2]
}

/// Normalized tree edit distance: TED divided by the sum of tree sizes.
///
/// Callers compare canonicalized expressions when parameter values should
/// not count as structural differences.
pub fn nted(a: &Expr, b: &Expr) -> Real {
    let ta: LabeledTree = a.into();
    let tb: LabeledTree = b.into();
    tree_edit_distance(&ta, &tb) as Real / (ta.size() + tb.size()) as Real
}

/// Internal semantic diversity: mean NTED over all unordered pairs of
/// distinct factors, computed on canonicalized trees.
pub fn phi_intra(library: &[Expr]) -> Result<Real, DslError> {
    let n = library.len();
    if n < 2 {
        return Err(DslError::TooFewFactors(n));
    }
    let canon: Vec<Expr> = library.iter().map(Expr::canonicalize).collect();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += nted(&canon[i], &canon[j]);
        }
    }
    Ok(2.0 * sum / (n as Real * (n as Real - 1.0)))
}

/// External semantic novelty: mean nearest-neighbour NTED from each library
/// factor to the reference set, on canonicalized trees.
pub fn phi_inter(library: &[Expr], reference: &[Expr]) -> Result<Real, DslError> {
    if reference.is_empty() {
        return Err(DslError::EmptyReference);
    }
    if library.is_empty() {
        return Err(DslError::TooFewFactors(0));
    }
    let canon_lib: Vec<Expr> = library.iter().map(Expr::canonicalize).collect();
    let canon_ref: Vec<Expr> = reference.iter().map(Expr::canonicalize).collect();
    let sum: Real = canon_lib
        .iter()
        .map(|a| {
            canon_ref
                .iter()
                .map(|b| nted(a, b))
                .fold(Real::INFINITY, Real::min)
        })
        .sum();
    Ok(sum / library.len() as Real)
}
