//! Full NLI model: embeddings, a latent-tree sentence encoder shared by
//! premise and hypothesis, and the classifier head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::bssr::ShiftReduceParser;
use crate::cky::ChartParser;
use crate::error::{Error, Result};
use crate::nli::NliHead;
use crate::selection::Selection;
use crate::tree::BinaryTree;
use crate::treelstm::{NodeState, TreeLstm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bssr,
    Cky,
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Bssr(ShiftReduceParser),
    Cky(ChartParser),
}

impl Encoder {
    pub fn treelstm(&self) -> &TreeLstm {
        match self {
            Encoder::Bssr(p) => &p.treelstm,
            Encoder::Cky(p) => &p.treelstm,
        }
    }
}

/// Per-forward knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeOptions {
    /// Beam width (shift-reduce only).
    pub beam: usize,
    pub selection: Selection,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub representation: Var,
    pub root: Option<NodeState>,
    pub tree: BinaryTree,
}

#[derive(Clone, Debug)]
pub struct PairOutput {
    pub log_probs: Var,
    pub premise_tree: BinaryTree,
    pub hypothesis_tree: BinaryTree,
}

#[derive(Clone, Debug)]
pub struct NliModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub embeddings: ParamId,
    pub encoder: Encoder,
    pub head: NliHead,
}

impl NliModel {
    /// Registers every parameter in `store`; `embeddings` must be
    /// `vocab × dim`.
    pub fn new(
        store: &mut ParamStore,
        kind: ModelKind,
        embeddings: Tensor,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if embeddings.shape().len() != 2 {
            return Err(Error::contract("embedding table must be a matrix"));
        }
        let dim = embeddings.cols();
        let embeddings = store.add("embeddings", embeddings);
        let encoder = match kind {
            ModelKind::Bssr => Encoder::Bssr(ShiftReduceParser::new(store, "bssr", dim, rng)),
            ModelKind::Cky => Encoder::Cky(ChartParser::new(store, "cky", dim, rng)),
        };
        let head = NliHead::new(store, "nli", dim, hidden, rng);
        Ok(NliModel {
            kind,
            dim,
            embeddings,
            encoder,
            head,
        })
    }

    pub fn leaves(&self, g: &mut Graph, tokens: &[usize]) -> Result<Vec<NodeState>> {
        let cell = self.encoder.treelstm();
        tokens
            .iter()
            .map(|&t| {
                let e = g.row(self.embeddings, t)?;
                cell.leaf(g, e)
            })
            .collect()
    }

    pub fn encode(&self, g: &mut Graph, tokens: &[usize], opts: EncodeOptions) -> Result<Encoded> {
        let leaves = self.leaves(g, tokens)?;
        match &self.encoder {
            Encoder::Bssr(p) => {
                let parse = p.beam_parse(g, &leaves, opts.beam, opts.selection)?;
                Ok(Encoded {
                    representation: parse.representation,
                    root: None,
                    tree: parse.best,
                })
            }
            Encoder::Cky(p) => {
                let parse = p.parse_chart(g, &leaves, opts.selection)?;
                let tree = match parse.tree {
                    Some(t) => t,
                    None => parse.chart.argmax_tree()?,
                };
                Ok(Encoded {
                    representation: parse.representation,
                    root: Some(parse.root),
                    tree,
                })
            }
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        premise: &[usize],
        hypothesis: &[usize],
        opts: EncodeOptions,
    ) -> Result<PairOutput> {
        let p = self.encode(g, premise, opts)?;
        let h = self.encode(g, hypothesis, opts)?;
        let feats = self.head.features(g, p.representation, h.representation)?;
        let log_probs = self.head.predict(g, feats)?;
        Ok(PairOutput {
            log_probs,
            premise_tree: p.tree,
            hypothesis_tree: h.tree,
        })
    }

    /// Parameters belonging to the sentence encoder (excluding embeddings).
    pub fn encoder_params(&self) -> Vec<ParamId> {
        match &self.encoder {
            Encoder::Bssr(p) => {
                let mut v = p.treelstm.param_ids().to_vec();
                v.extend(p.scorer.param_ids());
                v
            }
            Encoder::Cky(p) => {
                let mut v = p.treelstm.param_ids().to_vec();
                v.push(p.score_param());
                v
            }
        }
    }
}
