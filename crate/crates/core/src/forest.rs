//! Extremely randomized trees for binary classification.
//!
//! Every tree sees the whole training sample. At each node `K` attributes
//! that are non-constant in the node are drawn without replacement, each gets
//! a uniform random cut-point strictly inside its node range, and the best
//! scoring cut is kept.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScore {
    Gini,
    /// Mutual information normalized by the mean of split and class entropies.
    InfoGain,
}

impl SplitScore {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gini" => Some(Self::Gini),
            "info_gain" => Some(Self::InfoGain),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gini => "gini",
            Self::InfoGain => "info_gain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtConfig {
    pub trees: usize,
    /// Attributes examined per split; `None` means `ceil(sqrt(n_attributes))`.
    pub k: Option<usize>,
    pub n_min: usize,
    pub seed: u64,
    pub split_score: SplitScore,
}

impl Default for EtConfig {
    fn default() -> Self {
        Self {
            trees: 400,
            k: None,
            n_min: 2,
            seed: 0,
            split_score: SplitScore::Gini,
        }
    }
}

impl EtConfig {
    pub fn attributes_per_split(&self, n_attributes: usize) -> usize {
        self.k
            .unwrap_or_else(|| (n_attributes as f64).sqrt().ceil() as usize)
            .clamp(1, n_attributes.max(1))
    }

    pub fn validate(&self, n_attributes: usize) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidArgument("forest needs at least one tree".into()));
        }
        if self.n_min < 2 {
            return Err(Error::InvalidArgument("n_min must be at least 2".into()));
        }
        if let Some(k) = self.k {
            if k == 0 || k > n_attributes {
                return Err(Error::InvalidArgument(format!("K = {k} outside 1..={n_attributes}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Samples with `x[attr] <= cut` go to the left child, which is the next
    /// node in preorder; `right` is the index of the right child.
    Split {
        attr: usize,
        cut: f64,
        right: usize,
    },
    Leaf {
        counts: [u64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> [u64; 2] {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { attr, cut, right } => {
                    i = if x[attr] <= cut { i + 1 } else { right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Leaf majority; an even leaf votes infeasible.
    pub fn vote(&self, x: &[f64]) -> bool {
        let [c0, c1] = self.leaf(x);
        c1 > c0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_attributes: usize,
    pub trees: Vec<Tree>,
    /// Number of samples the forest was fitted on.
    pub training_samples: usize,
}

fn gini(c: [u64; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn entropy(ps: &[f64]) -> f64 {
    ps.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

fn split_quality(kind: SplitScore, left: [u64; 2], right: [u64; 2]) -> f64 {
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    let n = nl + nr;
    let parent = [left[0] + right[0], left[1] + right[1]];
    match kind {
        SplitScore::Gini => gini(parent) - (nl / n) * gini(left) - (nr / n) * gini(right),
        SplitScore::InfoGain => {
            let hc = entropy(&[parent[0] as f64 / n, parent[1] as f64 / n]);
            let hs = entropy(&[nl / n, nr / n]);
            let cond = (nl / n) * entropy(&[left[0] as f64 / nl, left[1] as f64 / nl])
                + (nr / n) * entropy(&[right[0] as f64 / nr, right[1] as f64 / nr]);
            let denom = hc + hs;
            if denom > 0.0 {
                2.0 * (hc - cond) / denom
            } else {
                0.0
            }
        }
    }
}

fn counts(y: &[bool], idx: &[usize]) -> [u64; 2] {
    let ones = idx.iter().filter(|&&i| y[i]).count() as u64;
    [idx.len() as u64 - ones, ones]
}

fn grow_tree(x: &[Vec<f64>], y: &[bool], cfg: &EtConfig, k: usize, rng: &mut ChaCha8Rng) -> Tree {
    let n_attr = x[0].len();
    let mut nodes = Vec::new();
    // (sample indices, node whose right child this is)
    let mut stack: Vec<(Vec<usize>, Option<usize>)> = vec![((0..x.len()).collect(), None)];
    while let Some((idx, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some(p) = parent {
            if let Node::Split { right, .. } = &mut nodes[p] {
                *right = id;
            }
        }
        let c = counts(y, &idx);
        if c[0] == 0 || c[1] == 0 || idx.len() < cfg.n_min {
            nodes.push(Node::Leaf { counts: c });
            continue;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..n_attr)
            .filter_map(|a| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(x[i][a]), hi.max(x[i][a]))
                });
                (hi > lo).then_some((a, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            nodes.push(Node::Leaf { counts: c });
            continue;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for pick in sample(rng, ranges.len(), k.min(ranges.len())) {
            let (a, lo, hi) = ranges[pick];
            let mut cut = lo + rng.gen::<f64>() * (hi - lo);
            if !(cut > lo && cut < hi) {
                cut = lo + 0.5 * (hi - lo);
            }
            let mut left = [0u64; 2];
            for &i in &idx {
                if x[i][a] <= cut {
                    left[y[i] as usize] += 1;
                }
            }
            let right = [c[0] - left[0], c[1] - left[1]];
            let q = split_quality(cfg.split_score, left, right);
            if best.is_none_or(|(bq, _, _)| q > bq) {
                best = Some((q, a, cut));
            }
        }
        let (_, attr, cut) = best.expect("at least one attribute drawn");
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][attr] <= cut);
        nodes.push(Node::Split { attr, cut, right: 0 });
        stack.push((r, Some(id)));
        stack.push((l, None));
    }
    Tree { nodes }
}

/// Fit a forest. Tree `t` draws from its own ChaCha stream `t` of the seed,
/// so the result does not depend on thread scheduling.
pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &EtConfig) -> Result<Forest> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n_attr = x[0].len();
    if n_attr == 0 || x.iter().any(|r| r.len() != n_attr) {
        return Err(Error::InvalidArgument(
            "rows must share a nonzero attribute count".into(),
        ));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    cfg.validate(n_attr)?;
    let k = cfg.attributes_per_split(n_attr);
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            grow_tree(x, y, cfg, k, &mut rng)
        })
        .collect();
    Ok(Forest {
        n_attributes: n_attr,
        trees,
        training_samples: x.len(),
    })
}

impl Forest {
    /// Fraction of trees voting feasible.
    pub fn score(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.vote(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    /// Feasible on a strict majority; an even split is infeasible.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.5
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "extra-trees v1 trees={} attrs={} samples={}\n",
            self.trees.len(),
            self.n_attributes,
            self.training_samples
        );
        for t in &self.trees {
            let _ = writeln!(out, "T {}", t.nodes.len());
            for n in &t.nodes {
                match n {
                    Node::Split { attr, cut, .. } => {
                        let _ = writeln!(out, "N {attr} {cut:?}");
                    }
                    Node::Leaf { counts } => {
                        let _ = writeln!(out, "L {} {}", counts[0], counts[1]);
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        const FMT: &str = "extra-trees";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| ParseError::new(FMT, 1, "empty input"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some("extra-trees") || h.next() != Some("v1") {
            return Err(ParseError::new(FMT, 1, "expected `extra-trees v1` header"));
        }
        let n_trees: usize = header_field(h.next(), "trees", 1)?;
        let n_attr: usize = header_field(h.next(), "attrs", 1)?;
        let samples: usize = header_field(h.next(), "samples", 1)?;
        if h.next().is_some() || n_trees == 0 || n_attr == 0 {
            return Err(ParseError::new(FMT, 1, "bad header"));
        }
        let mut trees = Vec::new();
        for _ in 0..n_trees {
            let (ln, line) = lines.next().ok_or_else(|| ParseError::new(FMT, 0, "missing tree"))?;
            let mut f = line.split_whitespace();
            if f.next() != Some("T") {
                return Err(ParseError::new(FMT, ln, "expected `T <node count>`"));
            }
            let count: usize = parse_tok(f.next(), ln)?;
            if f.next().is_some() || count == 0 {
                return Err(ParseError::new(FMT, ln, "bad tree line"));
            }
            let mut nodes = Vec::new();
            // splits still waiting for their right child
            let mut open: Vec<usize> = Vec::new();
            let mut closed = false;
            for _ in 0..count {
                let (ln, line) = lines.next().ok_or_else(|| ParseError::new(FMT, 0, "truncated tree"))?;
                if closed {
                    return Err(ParseError::new(FMT, ln, "node after a complete tree"));
                }
                let id = nodes.len();
                let mut f = line.split_whitespace();
                match f.next() {
                    Some("N") => {
                        let attr: usize = parse_tok(f.next(), ln)?;
                        let cut: f64 = parse_tok(f.next(), ln)?;
                        if attr >= n_attr || !cut.is_finite() {
                            return Err(ParseError::new(FMT, ln, "split out of range"));
                        }
                        nodes.push(Node::Split { attr, cut, right: 0 });
                        open.push(id);
                    }
                    Some("L") => {
                        let c0: u64 = parse_tok(f.next(), ln)?;
                        let c1: u64 = parse_tok(f.next(), ln)?;
                        nodes.push(Node::Leaf { counts: [c0, c1] });
                        // this leaf closes a left subtree; the next node is
                        // the right child of the innermost open split
                        match open.pop() {
                            Some(p) => {
                                if let Node::Split { right, .. } = &mut nodes[p] {
                                    *right = id + 1;
                                }
                            }
                            None => closed = true,
                        }
                    }
                    _ => return Err(ParseError::new(FMT, ln, "expected `N` or `L`")),
                }
                if f.next().is_some() {
                    return Err(ParseError::new(FMT, ln, "trailing fields"));
                }
            }
            if !closed {
                return Err(ParseError::new(FMT, ln, "tree is incomplete"));
            }
            trees.push(Tree { nodes });
        }
        if let Some((ln, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            let _ = l;
            return Err(ParseError::new(FMT, ln, "trailing content"));
        }
        Ok(Forest {
            n_attributes: n_attr,
            trees,
            training_samples: samples,
        })
    }
}

fn header_field<T: std::str::FromStr>(tok: Option<&str>, key: &str, line: usize) -> Result<T, ParseError> {
    tok.and_then(|t| t.strip_prefix(key)?.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ParseError::new("extra-trees", line, format!("bad `{key}=` field")))
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T, ParseError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| ParseError::new("extra-trees", line, "bad number"))
}
