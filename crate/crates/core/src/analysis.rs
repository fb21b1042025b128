//! Unlabelled bracketing F1 between induced trees, self-agreement across
//! model instances, and the branching and random baselines.
//!
//! Spans are the internal nodes of width at least two, the root included.
//! Single-token spans are left out since every tree shares them.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::parallel::{self, Execution};
use crate::tree::{parse_bracketed, BinaryTree};

pub fn span_set(tree: &BinaryTree) -> HashSet<(usize, usize)> {
    tree.internal_spans()
        .into_iter()
        .filter(|(i, j)| j - i >= 2)
        .collect()
}

/// Shared span count and both span-set sizes.
fn overlap(a: &BinaryTree, b: &BinaryTree) -> Result<(usize, usize, usize)> {
    let (na, nb) = (a.num_leaves(), b.num_leaves());
    if na != nb {
        return Err(Error::contract(format!("trees have {na} and {nb} leaves")));
    }
    let (sa, sb) = (span_set(a), span_set(b));
    Ok((sa.intersection(&sb).count(), sa.len(), sb.len()))
}

/// `scale · F1`, using `F1 = 2|S1∩S2| / (|S1| + |S2|)` so that the result
/// is a single correctly rounded division.
fn scaled_f1(a: &BinaryTree, b: &BinaryTree, scale: f64) -> Result<f64> {
    let (common, la, lb) = overlap(a, b)?;
    if la + lb == 0 {
        return Ok(scale);
    }
    Ok(2.0 * scale * common as f64 / (la + lb) as f64)
}

/// Per-tree unlabelled F1 in `[0, 1]`; 1 when neither tree has a span.
pub fn unlabelled_f1(a: &BinaryTree, b: &BinaryTree) -> Result<f64> {
    scaled_f1(a, b, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Premise,
    Hypothesis,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Premise => "premise",
            Side::Hypothesis => "hypothesis",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "premise" => Ok(Side::Premise),
            "hypothesis" => Ok(Side::Hypothesis),
            other => Err(Error::contract(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEntry {
    pub pair_id: String,
    pub side: Side,
    pub tokens: Vec<String>,
    pub tree: BinaryTree,
}

/// Trees aligned with a corpus split, premise then hypothesis per pair.
///
/// On disk: one `pair_id<TAB>side<TAB>bracketed tree` line per sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TreeFile {
    pub entries: Vec<TreeEntry>,
}

impl TreeFile {
    /// Builds a file by calling `make(n)` for every sentence of length `n`.
    pub fn from_examples(examples: &[Example], mut make: impl FnMut(usize) -> BinaryTree) -> Self {
        let mut entries = Vec::with_capacity(2 * examples.len());
        for e in examples {
            for (side, tokens) in [(Side::Premise, &e.premise), (Side::Hypothesis, &e.hypothesis)] {
                entries.push(TreeEntry {
                    pair_id: e.pair_id.clone(),
                    side,
                    tokens: tokens.clone(),
                    tree: make(tokens.len()),
                });
            }
        }
        TreeFile { entries }
    }

    /// The parses shipped with the corpus.
    pub fn gold(examples: &[Example]) -> Result<Self> {
        let mut entries = Vec::with_capacity(2 * examples.len());
        for e in examples {
            for (side, tokens, tree) in [
                (Side::Premise, &e.premise, &e.premise_tree),
                (Side::Hypothesis, &e.hypothesis, &e.hypothesis_tree),
            ] {
                let tree = tree.clone().ok_or_else(|| {
                    Error::contract(format!("pair {} has no {} parse", e.pair_id, side.as_str()))
                })?;
                entries.push(TreeEntry {
                    pair_id: e.pair_id.clone(),
                    side,
                    tokens: tokens.clone(),
                    tree,
                });
            }
        }
        Ok(TreeFile { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Alignment { index: k, message };
            let mut fields = line.splitn(3, '\t');
            let (Some(pair_id), Some(side), Some(bracketed)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(bad(format!("line {}: expected three tab-separated fields", k + 1)));
            };
            let side = side.parse().map_err(|e: Error| bad(e.to_string()))?;
            let parsed = parse_bracketed(bracketed).map_err(|e| bad(format!("line {}: {e}", k + 1)))?;
            entries.push(TreeEntry {
                pair_id: pair_id.to_string(),
                side,
                tokens: parsed.tokens,
                tree: parsed.tree,
            });
        }
        Ok(TreeFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_string().as_bytes())
    }

    /// Checks `other` lists the same sentences in the same order.
    pub fn check_aligned(&self, other: &TreeFile) -> Result<()> {
        for (index, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            if a.pair_id != b.pair_id || a.side != b.side {
                return Err(Error::Alignment {
                    index,
                    message: format!(
                        "{} {} vs {} {}",
                        a.pair_id,
                        a.side.as_str(),
                        b.pair_id,
                        b.side.as_str()
                    ),
                });
            }
            let (na, nb) = (a.tree.num_leaves(), b.tree.num_leaves());
            if na != nb {
                return Err(Error::Alignment {
                    index,
                    message: format!("{na} vs {nb} leaves"),
                });
            }
        }
        if self.len() != other.len() {
            return Err(Error::Alignment {
                index: self.len().min(other.len()),
                message: format!("files have {} and {} entries", self.len(), other.len()),
            });
        }
        Ok(())
    }
}

impl fmt::Display for TreeFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{}\t{}\t{}", e.pair_id, e.side.as_str(), e.tree.to_bracketed(&e.tokens))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct F1Options {
    /// Drop sentences of at most two tokens, whose structure is forced.
    pub exclude_short: bool,
    pub exec: Execution,
}

/// Macro-averaged F1 between aligned files, scaled to 0..100.
pub fn corpus_f1(a: &TreeFile, b: &TreeFile, opts: F1Options) -> Result<f64> {
    a.check_aligned(b)?;
    let pairs: Vec<(&TreeEntry, &TreeEntry)> = a
        .entries
        .iter()
        .zip(&b.entries)
        .filter(|(x, _)| !(opts.exclude_short && x.tree.num_leaves() <= 2))
        .collect();
    if pairs.is_empty() {
        return Err(Error::contract("no sentences to score"));
    }
    let scores = parallel::try_map(opts.exec, &pairs, |_, (x, y)| scaled_f1(&x.tree, &y.tree, 100.0))?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean corpus F1 over all unordered pairs of distinct files.
pub fn self_f1(files: &[TreeFile], opts: F1Options) -> Result<f64> {
    if files.len() < 2 {
        return Err(Error::contract("self-F1 needs at least two tree files"));
    }
    let mut scores = Vec::new();
    for i in 0..files.len() {
        for j in i + 1..files.len() {
            scores.push(corpus_f1(&files[i], &files[j], opts)?);
        }
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean corpus F1 over all cross-group pairs.
pub fn inter_model_f1(group_a: &[TreeFile], group_b: &[TreeFile], opts: F1Options) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::contract("both groups need at least one tree file"));
    }
    let mut total = 0.0;
    for a in group_a {
        for b in group_b {
            total += corpus_f1(a, b, opts)?;
        }
    }
    Ok(total / (group_a.len() * group_b.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Branching {
    Left,
    Right,
}

pub fn branching_tree(kind: Branching, n: usize) -> BinaryTree {
    assert!(n >= 1, "a tree needs at least one leaf");
    match kind {
        Branching::Left => (1..n).fold(BinaryTree::Leaf(0), |acc, k| {
            BinaryTree::node(acc, BinaryTree::Leaf(k))
        }),
        Branching::Right => (0..n - 1).rev().fold(BinaryTree::Leaf(n - 1), |acc, k| {
            BinaryTree::node(BinaryTree::Leaf(k), acc)
        }),
    }
}

/// `ln Catalan(k)` for `k < len`.
fn log_catalan_table(len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut acc = 0.0f64;
    for k in 0..len {
        out.push(acc);
        acc += (2.0 * (2 * k + 1) as f64 / (k + 2) as f64).ln();
    }
    out
}

/// A tree drawn uniformly from all binary trees over `n` leaves.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> BinaryTree {
    assert!(n >= 1, "a tree needs at least one leaf");
    let log_cat = log_catalan_table(n);
    sample_span(0, n, &log_cat, rng)
}

fn sample_span(i: usize, j: usize, log_cat: &[f64], rng: &mut impl Rng) -> BinaryTree {
    if j - i == 1 {
        return BinaryTree::Leaf(i);
    }
    // Splitting at k leaves Catalan(k-i-1) * Catalan(j-k-1) trees.
    let logs: Vec<f64> = (i + 1..j)
        .map(|k| log_cat[k - i - 1] + log_cat[j - k - 1])
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut pick = weights.len() - 1;
    for (idx, w) in weights.iter().enumerate() {
        if u < *w {
            pick = idx;
            break;
        }
        u -= w;
    }
    let k = i + 1 + pick;
    BinaryTree::node(sample_span(i, k, log_cat, rng), sample_span(k, j, log_cat, rng))
}

/// The same structure for every sentence of `reference`.
pub fn branching_file(reference: &TreeFile, kind: Branching) -> TreeFile {
    TreeFile {
        entries: reference
            .entries
            .iter()
            .map(|e| TreeEntry {
                tree: branching_tree(kind, e.tree.num_leaves()),
                ..e.clone()
            })
            .collect(),
    }
}

/// Mean, sample standard deviation and maximum of per-instance scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Summary { mean, std, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub instances: usize,
    /// Absent with a single instance.
    pub self_f1: Option<f64>,
    pub left_branching: Summary,
    pub right_branching: Summary,
    pub provided: Option<Summary>,
}

pub fn report(models: &[TreeFile], gold: Option<&TreeFile>, opts: F1Options) -> Result<Report> {
    let first = models
        .first()
        .ok_or_else(|| Error::contract("report needs at least one tree file"))?;
    let left = branching_file(first, Branching::Left);
    let right = branching_file(first, Branching::Right);
    let against = |reference: &TreeFile| -> Result<Summary> {
        let scores = models
            .iter()
            .map(|m| corpus_f1(m, reference, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Summary::of(&scores))
    };
    Ok(Report {
        instances: models.len(),
        self_f1: if models.len() >= 2 { Some(self_f1(models, opts)?) } else { None },
        left_branching: against(&left)?,
        right_branching: against(&right)?,
        provided: gold.map(against).transpose()?,
    })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |s: &Summary| format!("{:.1} ({:.1}) {:.1}", s.mean, s.std, s.max);
        writeln!(
            f,
            "{:<9} {:<8} {:<20} {:<20} {:<20}",
            "Instances", "Self-F1", "Left Branching", "Right Branching", "Provided Parses"
        )?;
        writeln!(
            f,
            "{:<9} {:<8} {:<20} {:<20} {:<20}",
            self.instances,
            self.self_f1.map_or("-".to_string(), |v| format!("{v:.1}")),
            cell(&self.left_branching),
            cell(&self.right_branching),
            self.provided.as_ref().map_or("-".to_string(), cell),
        )?;
        writeln!(f, "(each column: mean (std) max over instances)")
    }
}
