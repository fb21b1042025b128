use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// How a model turns candidate scores into mixture weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Selection {
    /// Softmax followed by the straight-through estimator: a hard argmax on
    /// the forward pass, the softmax gradient on the backward pass.
    #[default]
    StraightThrough,
    /// Plain softmax over `scores / temperature`.
    Soft { temperature: f64 },
}

impl Selection {
    pub fn is_hard(self) -> bool {
        matches!(self, Selection::StraightThrough)
    }

    /// Mixture weights for a vector of scores.
    pub fn weights(self, g: &mut Graph, scores: Var) -> Result<Var> {
        match self {
            Selection::StraightThrough => {
                let p = g.softmax(scores)?;
                g.straight_through(p)
            }
            Selection::Soft { temperature } => {
                let scaled = if temperature == 1.0 {
                    scores
                } else {
                    g.scale(scores, 1.0 / temperature)
                };
                g.softmax(scaled)
            }
        }
    }
}
