//! Binary Tree-LSTM cell shared by leaves and internal nodes.
//!
//! The 5d pre-activation `W·w + U·h_L + V·h_R + b` is sliced in the order
//! `[i, f_L, f_R, u, o]`:
//!
//! ```text
//! c = c_L ⊙ σ(f_L) + c_R ⊙ σ(f_R) + tanh(u) ⊙ σ(i)
//! h = σ(o) ⊙ tanh(c)
//! ```

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;

/// `h` and `c` of one tree node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeState {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Debug)]
pub struct TreeLstm {
    w: ParamId,
    u: ParamId,
    v: ParamId,
    b: ParamId,
    dim: usize,
}

impl TreeLstm {
    /// Registers `W`, `U`, `V` (5d×d) and `b` (5d) under `prefix`. Matrices
    /// are Glorot-uniform; the bias is zero except the two forget-gate
    /// slices, which start at 1.
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |name: &str| {
            let t = init::glorot(rng, 5 * dim, dim);
            store.add(format!("{prefix}.{name}"), t)
        };
        let w = mat("W");
        let u = mat("U");
        let v = mat("V");
        let mut bias = vec![0.0; 5 * dim];
        bias[dim..3 * dim].iter_mut().for_each(|x| *x = 1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::vector(bias));
        TreeLstm { w, u, v, b, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w, self.u, self.v, self.b]
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeState {
        NodeState {
            h: g.zeros(self.dim),
            c: g.zeros(self.dim),
        }
    }

    fn check_dim(&self, g: &Graph, v: Var) -> Result<()> {
        if g.shape(v) != [self.dim] {
            return Err(Error::Shape {
                op: "treelstm",
                left: g.shape(v).to_vec(),
                right: vec![self.dim],
            });
        }
        Ok(())
    }

    /// Full cell: word input plus two children.
    pub fn compose(
        &self,
        g: &mut Graph,
        word: Var,
        left: NodeState,
        right: NodeState,
    ) -> Result<NodeState> {
        self.cell(g, Some(word), Some((left, right)))
    }

    /// Leaf node: children are the zero state, so their terms vanish.
    pub fn leaf(&self, g: &mut Graph, embedding: Var) -> Result<NodeState> {
        self.cell(g, Some(embedding), None)
    }

    /// Internal node: the word input is the zero vector.
    pub fn internal(&self, g: &mut Graph, left: NodeState, right: NodeState) -> Result<NodeState> {
        self.cell(g, None, Some((left, right)))
    }

    // Absent inputs would only contribute exact zeros, so their matvecs are
    // skipped. Results are equal to the literal computation.
    fn cell(
        &self,
        g: &mut Graph,
        word: Option<Var>,
        children: Option<(NodeState, NodeState)>,
    ) -> Result<NodeState> {
        let d = self.dim;
        let mut pre: Option<Var> = None;
        let mut add_term = |g: &mut Graph, term: Var| -> Result<()> {
            pre = Some(match pre {
                None => term,
                Some(p) => g.add(p, term)?,
            });
            Ok(())
        };
        if let Some(w) = word {
            self.check_dim(g, w)?;
            let wm = g.param(self.w);
            let t = g.matvec(wm, w)?;
            add_term(g, t)?;
        }
        if let Some((l, r)) = children {
            for v in [l.h, l.c, r.h, r.c] {
                self.check_dim(g, v)?;
            }
            let um = g.param(self.u);
            let t = g.matvec(um, l.h)?;
            add_term(g, t)?;
            let vm = g.param(self.v);
            let t = g.matvec(vm, r.h)?;
            add_term(g, t)?;
        }
        let b = g.param(self.b);
        let pre = match pre {
            Some(p) => g.add(p, b)?,
            None => b,
        };
        let i = g.slice(pre, 0, d)?;
        let u = g.slice(pre, 3 * d, d)?;
        let o = g.slice(pre, 4 * d, d)?;
        let si = g.sigmoid(i);
        let tu = g.tanh(u);
        let update = g.mul(tu, si)?;
        let c = match children {
            Some((l, r)) => {
                let fl = g.slice(pre, d, d)?;
                let fr = g.slice(pre, 2 * d, d)?;
                let sfl = g.sigmoid(fl);
                let sfr = g.sigmoid(fr);
                let keep_l = g.mul(l.c, sfl)?;
                let keep_r = g.mul(r.c, sfr)?;
                let kept = g.add(keep_l, keep_r)?;
                g.add(kept, update)?
            }
            None => update,
        };
        let so = g.sigmoid(o);
        let tc = g.tanh(c);
        let h = g.mul(so, tc)?;
        Ok(NodeState { h, c })
    }
}
