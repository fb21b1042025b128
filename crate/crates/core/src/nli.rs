//! Sentence-pair classifier.
//!
//! Features are `[u; v; u⊙v; (u−v)⊙(u−v)]`, then
//! `q = relu(C·feats + c)` and `log p = log_softmax(B·q + b)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;

/// Three-way NLI label. The integer encoding is fixed: entailment 0,
/// contradiction 1, neutral 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Contradiction,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        match self {
            Label::Entailment => 0,
            Label::Contradiction => 1,
            Label::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NliHead {
    c_mat: ParamId,
    c_bias: ParamId,
    b_mat: ParamId,
    b_bias: ParamId,
    dim: usize,
}

impl NliHead {
    /// `C` is `hidden × 4·dim`, `B` is `3 × hidden`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c_mat = store.add(format!("{prefix}.C"), init::glorot(rng, hidden, 4 * dim));
        let c_bias = store.add(format!("{prefix}.c"), Tensor::zeros(&[hidden]));
        let b_mat = store.add(format!("{prefix}.B"), init::glorot(rng, 3, hidden));
        let b_bias = store.add(format!("{prefix}.b"), Tensor::zeros(&[3]));
        NliHead {
            c_mat,
            c_bias,
            b_mat,
            b_bias,
            dim,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.c_mat, self.c_bias, self.b_mat, self.b_bias]
    }

    pub fn features(&self, g: &mut Graph, u: Var, v: Var) -> Result<Var> {
        features(g, u, v)
    }

    pub fn predict(&self, g: &mut Graph, feats: Var) -> Result<Var> {
        if g.shape(feats) != [4 * self.dim] {
            return Err(Error::Shape {
                op: "nli.predict",
                left: g.shape(feats).to_vec(),
                right: vec![4 * self.dim],
            });
        }
        let cm = g.param(self.c_mat);
        let cb = g.param(self.c_bias);
        let pre = g.matvec(cm, feats)?;
        let pre = g.add(pre, cb)?;
        let q = g.relu(pre);
        let bm = g.param(self.b_mat);
        let bb = g.param(self.b_bias);
        let logits = g.matvec(bm, q)?;
        let logits = g.add(logits, bb)?;
        g.log_softmax(logits)
    }
}

/// `[u; v; u⊙v; (u−v)⊙(u−v)]`.
pub fn features(g: &mut Graph, u: Var, v: Var) -> Result<Var> {
    let prod = g.mul(u, v)?;
    let diff = g.sub(u, v)?;
    let dist = g.square(diff);
    g.concat(&[u, v, prod, dist])
}

/// Negative log-likelihood of the gold label.
pub fn loss(g: &mut Graph, log_probs: Var, gold: Label) -> Result<Var> {
    let picked = g.index(log_probs, gold.index())?;
    Ok(g.neg(picked))
}
