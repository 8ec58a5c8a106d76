//! CART regression trees with exhaustive midpoint splits.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_leaf: 50,
        }
    }
}

impl TreeParams {
    pub fn new(max_depth: usize, min_samples_leaf: usize) -> Self {
        Self {
            max_depth,
            min_samples_leaf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::config("min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
        count: usize,
    },
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
    params: TreeParams,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Relative gain below which a split is treated as rounding noise.
const GAIN_EPS: f64 = 1e-12;

fn sse(y: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    (mean, idx.iter().map(|&i| (y[i] - mean).powi(2)).sum())
}

impl RegressionTree {
    /// Greedy variance-reduction fit. Targets must be finite.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], params: TreeParams) -> Result<Self> {
        params.validate()?;
        if x.nrows() == 0 {
            return Err(Error::config("cannot fit a tree on zero samples"));
        }
        if y.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "tree inputs and targets must be finite".into(),
            ));
        }
        let mut tree = Self {
            nodes: Vec::new(),
            n_features: x.ncols(),
            params,
        };
        let all: Vec<usize> = (0..x.nrows()).collect();
        tree.grow(x, y, all, 0);
        Ok(tree)
    }

    fn grow(&mut self, x: ArrayView2<'_, f64>, y: &[f64], idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (mean, parent_sse) = sse(y, &idx);
        self.nodes.push(Node::Leaf {
            prediction: mean,
            count: idx.len(),
        });
        if depth >= self.params.max_depth
            || idx.len() < 2 * self.params.min_samples_leaf
            || parent_sse <= 0.0
        {
            return id;
        }
        let Some(best) = self.best_split(x, y, &idx, mean, parent_sse) else {
            return id;
        };
        let left = self.grow(x, y, best.left, depth + 1);
        let right = self.grow(x, y, best.right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        idx: &[usize],
        mean: f64,
        parent_sse: f64,
    ) -> Option<Candidate> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let total: f64 = idx.iter().map(|&i| y[i] - mean).sum();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.n_features {
            order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += y[order[k]] - mean;
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                if x[[order[k], f]] >= x[[order[k + 1], f]] {
                    continue;
                }
                // SSE(parent) - SSE(left) - SSE(right) with centred sums
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - total * total / n as f64;
                if best.is_none_or(|b| gain > b.2) {
                    let (lo, hi) = (x[[order[k], f]], x[[order[k + 1], f]]);
                    let mid = 0.5 * (lo + hi);
                    best = Some((f, if mid < hi { mid } else { lo }, gain));
                }
            }
        }
        let (feature, threshold, gain) = best?;
        if !(gain > GAIN_EPS * parent_sse) {
            return None;
        }
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| x[[i, feature]] <= threshold);
        Some(Candidate {
            feature,
            threshold,
            left,
            right,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> Result<usize> {
        if row.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: row.len(),
            });
        }
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { .. } => return Ok(id),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        match self.nodes[self.leaf_index(row)?] {
            Node::Leaf { prediction, .. } => Ok(prediction),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_row(s),
                None => self.predict_row(&r.to_vec()),
            })
            .collect()
    }

    /// Sum of squared residuals on `(x, y)`.
    pub fn sse(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64> {
        let p = self.predict(x)?;
        Ok(p.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum())
    }

    /// Text form; see the README for the grammar. Floats are written with
    /// round-trip precision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "regression-tree v1 n_features={} max_depth={} min_samples_leaf={} n_nodes={}",
            self.n_features,
            self.params.max_depth,
            self.params.min_samples_leaf,
            self.nodes.len()
        );
        for (id, node) in self.nodes.iter().enumerate() {
            let _ = match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => writeln!(s, "{id} split {feature} {threshold:?} {left} {right}"),
                Node::Leaf { prediction, count } => writeln!(s, "{id} leaf {prediction:?} {count}"),
            };
        }
        s
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty tree file".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("regression-tree") || fields.next() != Some("v1") {
            return Err(Error::Format("not a `regression-tree v1` file".into()));
        }
        let mut get = |key: &str| -> Result<usize> {
            let f = fields
                .next()
                .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))?;
            f.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header field `{f}`")))
        };
        let n_features = get("n_features")?;
        let max_depth = get("max_depth")?;
        let min_samples_leaf = get("min_samples_leaf")?;
        let n_nodes = get("n_nodes")?;

        let bad = |line: &str| Error::Format(format!("bad node line `{line}`"));
        let mut nodes = Vec::with_capacity(n_nodes);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let id: usize = f
                .first()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&line))?;
            if id != nodes.len() {
                return Err(Error::Format(format!(
                    "node ids must be consecutive, found {id}"
                )));
            }
            let node = match (f.get(1).copied(), f.len()) {
                (Some("split"), 6) => Node::Split {
                    feature: f[2].parse().map_err(|_| bad(&line))?,
                    threshold: f[3].parse().map_err(|_| bad(&line))?,
                    left: f[4].parse().map_err(|_| bad(&line))?,
                    right: f[5].parse().map_err(|_| bad(&line))?,
                },
                (Some("leaf"), 4) => Node::Leaf {
                    prediction: f[2].parse().map_err(|_| bad(&line))?,
                    count: f[3].parse().map_err(|_| bad(&line))?,
                },
                _ => return Err(bad(&line)),
            };
            nodes.push(node);
        }
        if nodes.len() != n_nodes || nodes.is_empty() {
            return Err(Error::Format(format!(
                "expected {n_nodes} nodes, found {}",
                nodes.len()
            )));
        }
        let tree = Self {
            nodes,
            n_features,
            params: TreeParams::new(max_depth, min_samples_leaf),
        };
        tree.check_structure()?;
        Ok(tree)
    }

    /// Every node reachable exactly once from the root, children after parents.
    fn check_structure(&self) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Format(format!("node {id} is reachable twice")));
            }
            if let Node::Split {
                feature,
                left,
                right,
                ..
            } = self.nodes[id]
            {
                if feature >= self.n_features {
                    return Err(Error::Format(format!(
                        "node {id} splits on missing feature {feature}"
                    )));
                }
                for c in [left, right] {
                    if c <= id || c >= self.nodes.len() {
                        return Err(Error::Format(format!("node {id} has invalid child {c}")));
                    }
                    stack.push(c);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("tree has unreachable nodes".into()));
        }
        Ok(())
    }
}
