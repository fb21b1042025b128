//! Chart-based encoder: a CKY chart over one nonterminal where each cell
//! mixes the Tree-LSTM compositions of all its split points.
//!
//! A candidate for span `(i, j)` split at `k` is `internal(cell(i,k),
//! cell(k,j))`, scored by `s·h`. Under [`Selection::StraightThrough`] the
//! cell takes the argmax candidate on the forward pass; under
//! [`Selection::Soft`] it is the softmax-weighted mixture.

use rand::Rng;

use crate::autodiff::{argmax, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::selection::Selection;
use crate::tree::BinaryTree;
use crate::treelstm::{NodeState, TreeLstm};

#[derive(Clone, Debug)]
pub struct Cell {
    pub state: NodeState,
    /// Split point with the highest score. Recorded for every cell, but only
    /// meaningful as "the" tree in straight-through mode.
    pub best_split: Option<usize>,
    pub scores: Vec<f64>,
}

/// Triangular table of cells indexed by half-open span.
#[derive(Clone, Debug)]
pub struct Chart {
    n: usize,
    cells: Vec<Option<Cell>>,
    hard: bool,
}

impl Chart {
    /// Chart over `leaves`, with the width-1 cells already filled.
    pub fn new(leaves: &[NodeState], selection: Selection) -> Result<Self> {
        let n = leaves.len();
        if n == 0 {
            return Err(Error::contract("cannot parse an empty sentence"));
        }
        let mut chart = Chart {
            n,
            cells: vec![None; n * (n + 1) / 2],
            hard: selection.is_hard(),
        };
        for (i, &state) in leaves.iter().enumerate() {
            let slot = chart.slot(i, i + 1);
            chart.cells[slot] = Some(Cell {
                state,
                best_split: None,
                scores: Vec::new(),
            });
        }
        Ok(chart)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    // Cells are grouped by width: all width-1 spans, then width 2, ...
    fn slot(&self, i: usize, j: usize) -> usize {
        let w = j - i;
        let before: usize = (1..w).map(|v| self.n + 1 - v).sum();
        before + i
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<&Cell> {
        if i >= j || j > self.n {
            return None;
        }
        self.cells[self.slot(i, j)].as_ref()
    }

    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Follows recorded argmax splits down from the root.
    pub fn extract_tree(&self) -> Result<BinaryTree> {
        if !self.hard {
            return Err(Error::contract(
                "soft-mixture chart has no single tree; extract in straight-through mode",
            ));
        }
        self.subtree(0, self.n)
    }

    /// Highest-scoring split at every cell regardless of mode. For a soft
    /// chart this is only a summary of the mixture, not the tree that was
    /// composed.
    pub fn argmax_tree(&self) -> Result<BinaryTree> {
        self.subtree(0, self.n)
    }

    fn subtree(&self, i: usize, j: usize) -> Result<BinaryTree> {
        if j - i == 1 {
            return Ok(BinaryTree::Leaf(i));
        }
        let cell = self
            .cell(i, j)
            .ok_or_else(|| Error::contract(format!("cell ({i},{j}) not filled")))?;
        let k = cell.best_split.expect("internal cells record a split");
        Ok(BinaryTree::node(self.subtree(i, k)?, self.subtree(k, j)?))
    }
}

#[derive(Clone, Debug)]
pub struct ChartParse {
    pub representation: Var,
    pub root: NodeState,
    /// `None` in soft mode.
    pub tree: Option<BinaryTree>,
    pub chart: Chart,
}

#[derive(Clone, Debug)]
pub struct ChartParser {
    pub treelstm: TreeLstm,
    score: ParamId,
}

impl ChartParser {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let treelstm = TreeLstm::new(store, &format!("{prefix}.tree"), dim, rng);
        let bound = (6.0 / (dim + 1) as f64).sqrt();
        let score = store.add(format!("{prefix}.s"), init::uniform(rng, &[dim], bound));
        ChartParser { treelstm, score }
    }

    pub fn score_param(&self) -> ParamId {
        self.score
    }

    pub fn dim(&self) -> usize {
        self.treelstm.dim()
    }

    /// Fills span `(i, j)`. Every strictly shorter span must be present.
    pub fn fill_cell(
        &self,
        g: &mut Graph,
        chart: &mut Chart,
        i: usize,
        j: usize,
        selection: Selection,
    ) -> Result<NodeState> {
        if j <= i + 1 || j > chart.n {
            return Err(Error::contract(format!("({i},{j}) is not an internal span")));
        }
        let s = g.param(self.score);
        let mut candidates = Vec::with_capacity(j - i - 1);
        let mut scores = Vec::with_capacity(j - i - 1);
        for k in i + 1..j {
            let (left, right) = match (chart.cell(i, k), chart.cell(k, j)) {
                (Some(l), Some(r)) => (l.state, r.state),
                _ => {
                    return Err(Error::contract(format!(
                        "cell ({i},{j}) depends on unfilled ({i},{k}) or ({k},{j})"
                    )))
                }
            };
            let cand = self.treelstm.internal(g, left, right)?;
            scores.push(g.dot(s, cand.h)?);
            candidates.push(cand);
        }
        let score_vec = g.stack(&scores)?;
        let values = g.data(score_vec).to_vec();
        let weights = selection.weights(g, score_vec)?;
        let hs: Vec<Var> = candidates.iter().map(|c| c.h).collect();
        let cs: Vec<Var> = candidates.iter().map(|c| c.c).collect();
        let state = NodeState {
            h: g.weighted_sum(weights, &hs)?,
            c: g.weighted_sum(weights, &cs)?,
        };
        let slot = chart.slot(i, j);
        chart.cells[slot] = Some(Cell {
            state,
            best_split: Some(i + 1 + argmax(&values)),
            scores: values,
        });
        Ok(state)
    }

    /// Bottom-up fill in increasing span width.
    pub fn parse_chart(
        &self,
        g: &mut Graph,
        leaves: &[NodeState],
        selection: Selection,
    ) -> Result<ChartParse> {
        let mut chart = Chart::new(leaves, selection)?;
        let n = chart.n;
        for width in 2..=n {
            for i in 0..=n - width {
                self.fill_cell(g, &mut chart, i, i + width, selection)?;
            }
        }
        let root = chart.cell(0, n).expect("root filled").state;
        let tree = if selection.is_hard() {
            Some(chart.extract_tree()?)
        } else {
            None
        };
        Ok(ChartParse {
            representation: root.h,
            root,
            tree,
            chart,
        })
    }

    /// Runs the Tree-LSTM along a fixed tree.
    pub fn compose_tree(&self, g: &mut Graph, leaves: &[NodeState], tree: &BinaryTree) -> Result<NodeState> {
        match tree {
            BinaryTree::Leaf(i) => leaves
                .get(*i)
                .copied()
                .ok_or_else(|| Error::contract(format!("leaf {i} out of range"))),
            BinaryTree::Node(l, r) => {
                let left = self.compose_tree(g, leaves, l)?;
                let right = self.compose_tree(g, leaves, r)?;
                self.treelstm.internal(g, left, right)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::{check, uniform};
    use crate::autodiff::{Gradients, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, seed: u64) -> (ParamStore, ChartParser, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let parser = ChartParser::new(&mut store, "cky", dim, &mut rng);
        let s = store.get_mut(parser.score).data_mut();
        for (x, e) in s.iter_mut().zip(uniform(&mut rng, dim, 2.0)) {
            *x += e;
        }
        let emb = store.add("emb", init::uniform(&mut rng, &[12, dim], 1.0));
        (store, parser, emb)
    }

    fn leaves(g: &mut Graph, parser: &ChartParser, emb: ParamId, n: usize) -> Vec<NodeState> {
        (0..n)
            .map(|i| {
                let e = g.row(emb, i).unwrap();
                parser.treelstm.leaf(g, e).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_token_and_pair() {
        let (store, parser, emb) = setup(4, 1);
        let mut g = Graph::new(&store);
        let ls = leaves(&mut g, &parser, emb, 1);
        let p = parser.parse_chart(&mut g, &ls, Selection::StraightThrough).unwrap();
        assert_eq!(p.tree, Some(BinaryTree::Leaf(0)));
        assert_eq!(p.representation, ls[0].h);

        let ls = leaves(&mut g, &parser, emb, 2);
        let p = parser.parse_chart(&mut g, &ls, Selection::StraightThrough).unwrap();
        assert_eq!(p.tree.unwrap().to_string(), "(0 1)");
        let soft = parser.parse_chart(&mut g, &ls, Selection::Soft { temperature: 0.5 }).unwrap();
        // A single candidate gets weight one under either rule.
        assert_eq!(g.data(soft.representation), g.data(p.representation));
        assert!(soft.tree.is_none());
        assert!(soft.chart.extract_tree().is_err());
    }

    #[test]
    fn hand_set_scores_pick_the_left_split() {
        // Width-3 span, candidate scores [2, -1]: split k = i + 1 wins.
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let scores = g.input(Tensor::vector(vec![2.0, -1.0]));
        let w = Selection::StraightThrough.weights(&mut g, scores).unwrap();
        assert_eq!(g.data(w), &[1.0, 0.0]);
        assert_eq!(argmax(&[2.0, -1.0]), 0);
    }

    #[test]
    fn chart_fill_counts_and_consistency() {
        let (store, parser, emb) = setup(5, 2);
        for n in 1..=7 {
            let mut g = Graph::new(&store);
            let ls = leaves(&mut g, &parser, emb, n);
            let p = parser.parse_chart(&mut g, &ls, Selection::StraightThrough).unwrap();
            assert_eq!(p.chart.filled(), n * (n + 1) / 2);
            for w in 2..=n {
                for i in 0..=n - w {
                    assert_eq!(p.chart.cell(i, i + w).unwrap().scores.len(), w - 1);
                }
            }
            let tree = p.tree.unwrap();
            tree.validate(n).unwrap();
            // Every internal span of the tree was the argmax split of its cell.
            for (i, j) in tree.internal_spans() {
                let cell = p.chart.cell(i, j).unwrap();
                let k = cell.best_split.unwrap();
                assert!(tree.internal_spans().contains(&(i, k)) || k - i == 1);
                assert!(tree.internal_spans().contains(&(k, j)) || j - k == 1);
            }
            let direct = parser.compose_tree(&mut g, &ls, &tree).unwrap();
            let a: Vec<u64> = g.data(direct.h).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = g.data(p.representation).iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fill_requires_dependencies() {
        let (store, parser, emb) = setup(4, 3);
        let mut g = Graph::new(&store);
        let ls = leaves(&mut g, &parser, emb, 4);
        let mut chart = Chart::new(&ls, Selection::StraightThrough).unwrap();
        assert!(parser.fill_cell(&mut g, &mut chart, 0, 3, Selection::StraightThrough).is_err());
        parser.fill_cell(&mut g, &mut chart, 0, 2, Selection::StraightThrough).unwrap();
        assert!(parser.fill_cell(&mut g, &mut chart, 0, 3, Selection::StraightThrough).is_err());
        parser.fill_cell(&mut g, &mut chart, 1, 3, Selection::StraightThrough).unwrap();
        parser.fill_cell(&mut g, &mut chart, 0, 3, Selection::StraightThrough).unwrap();
        let mut g2 = Graph::new(&store);
        assert!(parser.parse_chart(&mut g2, &[], Selection::StraightThrough).is_err());
    }

    #[test]
    fn soft_mode_gradients_match_finite_differences() {
        let (store, parser, emb) = setup(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let probe = uniform(&mut rng, 4, 1.0);
        let run = |s: &ParamStore, grads: Option<&mut Gradients>| {
            let mut g = Graph::new(s);
            let ls = leaves(&mut g, &parser, emb, 4);
            let p = parser
                .parse_chart(&mut g, &ls, Selection::Soft { temperature: 0.7 })
                .unwrap();
            let pv = g.input(Tensor::vector(probe.clone()));
            let hc = g.add(p.root.h, p.root.c).unwrap();
            let loss = g.dot(hc, pv).unwrap();
            if let Some(grads) = grads {
                g.backward(loss, grads).unwrap();
            }
            g.scalar(loss)
        };
        let mut grads = Gradients::new(&store);
        run(&store, Some(&mut grads));
        check(&store, 1e-4, |s| run(s, None), &grads);
    }
}
