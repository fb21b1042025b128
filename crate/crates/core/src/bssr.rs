//! Beam-search shift-reduce encoder.
//!
//! A queue holds the leaf states still to be read and a stack holds the
//! nodes built so far. `SHIFT` moves the queue front onto the stack;
//! `REDUCE` pops the top two stack nodes and pushes their Tree-LSTM parent.
//! Each action is scored by
//!
//! ```text
//! r = W_s1·h_s1 + W_s2·h_s2 + W_q·h_q1
//! log p = log_softmax(a + A·tanh(r))      (invalid actions masked out)
//! ```
//!
//! and a sequence scores the sum of its actions' log-probabilities. The beam
//! keeps the `b` best prefixes at every step; the sentence vector is the
//! beam's final stack tops mixed by [`Selection`] weights over the sequence
//! scores. Only surviving elements contribute to the graph, so no gradient
//! flows through pruning decisions.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::selection::Selection;
use crate::tree::BinaryTree;
use crate::treelstm::{NodeState, TreeLstm};

/// Transition. `Shift < Reduce` is the tie-break order for beam pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Shift,
    Reduce,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Shift, Action::Reduce];

    fn index(self) -> usize {
        match self {
            Action::Shift => 0,
            Action::Reduce => 1,
        }
    }
}

/// Legal moves for a configuration: `SHIFT` needs a non-empty queue,
/// `REDUCE` needs two stack items.
pub fn valid_actions(stack_len: usize, queue_len: usize) -> Vec<Action> {
    let mut out = Vec::with_capacity(2);
    if queue_len > 0 {
        out.push(Action::Shift);
    }
    if stack_len >= 2 {
        out.push(Action::Reduce);
    }
    out
}

/// Rebuilds the tree described by a complete action sequence over `n` tokens.
pub fn history_to_tree(history: &[Action], n: usize) -> Result<BinaryTree> {
    let mut stack: Vec<BinaryTree> = Vec::new();
    let mut next = 0;
    for (step, a) in history.iter().enumerate() {
        match a {
            Action::Shift if next < n => {
                stack.push(BinaryTree::Leaf(next));
                next += 1;
            }
            Action::Reduce if stack.len() >= 2 => {
                let right = stack.pop().unwrap();
                let left = stack.pop().unwrap();
                stack.push(BinaryTree::node(left, right));
            }
            _ => {
                return Err(Error::contract(format!(
                    "invalid {a:?} at step {step} (stack {}, queue {})",
                    stack.len(),
                    n - next
                )))
            }
        }
    }
    if next != n || stack.len() != 1 {
        return Err(Error::contract(format!(
            "incomplete history: {} of {n} tokens shifted, stack size {}",
            next,
            stack.len()
        )));
    }
    Ok(stack.pop().unwrap())
}

/// Action-scoring MLP parameters.
#[derive(Clone, Debug)]
pub struct ActionScorer {
    w_s1: ParamId,
    w_s2: ParamId,
    w_q: ParamId,
    a_mat: ParamId,
    a_bias: ParamId,
    dim: usize,
}

impl ActionScorer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let w_s1 = store.add(format!("{prefix}.W_s1"), init::glorot(rng, dim, dim));
        let w_s2 = store.add(format!("{prefix}.W_s2"), init::glorot(rng, dim, dim));
        let w_q = store.add(format!("{prefix}.W_q"), init::glorot(rng, dim, dim));
        let a_mat = store.add(format!("{prefix}.A"), init::glorot(rng, 2, dim));
        let a_bias = store.add(format!("{prefix}.a"), Tensor::zeros(&[2]));
        ActionScorer {
            w_s1,
            w_s2,
            w_q,
            a_mat,
            a_bias,
            dim,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 5] {
        [self.w_s1, self.w_s2, self.w_q, self.a_mat, self.a_bias]
    }
}

/// One partial or complete parse.
#[derive(Clone, Debug)]
pub struct ParserState {
    stack: Vec<usize>,
    next: usize,
    n: usize,
    history: Vec<Action>,
    log_score: Option<Var>,
    score: f64,
}

impl ParserState {
    pub fn stack_len(&self) -> usize {
        self.stack.len()
    }

    pub fn queue_len(&self) -> usize {
        self.n - self.next
    }

    pub fn history(&self) -> &[Action] {
        &self.history
    }

    /// Cumulative log-probability of the history.
    pub fn score(&self) -> f64 {
        self.score
    }

    /// Graph node holding [`ParserState::score`]; `None` before any action.
    pub fn log_score(&self) -> Option<Var> {
        self.log_score
    }

    pub fn valid_actions(&self) -> Vec<Action> {
        valid_actions(self.stack_len(), self.queue_len())
    }

    pub fn is_complete(&self) -> bool {
        self.queue_len() == 0 && self.stack_len() == 1
    }
}

/// Log-probabilities of both actions from one state.
#[derive(Clone, Copy, Debug)]
pub struct ActionScores {
    pub log_probs: Var,
    /// Values of `log_probs`; `-inf` for invalid actions.
    pub values: [f64; 2],
}

impl ActionScores {
    pub fn get(&self, a: Action) -> f64 {
        self.values[a.index()]
    }
}

struct Slot {
    state: NodeState,
    proj_top: Option<Var>,
    proj_second: Option<Var>,
    proj_queue: Option<Var>,
}

/// Node arena for one sentence. Stack nodes are shared between beam
/// elements and their scorer projections are computed once per node.
pub struct ParseSession<'a> {
    parser: &'a ShiftReduceParser,
    slots: Vec<Slot>,
    n: usize,
}

impl<'a> ParseSession<'a> {
    pub fn new(parser: &'a ShiftReduceParser, leaves: &[NodeState]) -> Result<Self> {
        if leaves.is_empty() {
            return Err(Error::contract("cannot parse an empty sentence"));
        }
        let slots = leaves
            .iter()
            .map(|&state| Slot {
                state,
                proj_top: None,
                proj_second: None,
                proj_queue: None,
            })
            .collect();
        Ok(ParseSession {
            parser,
            slots,
            n: leaves.len(),
        })
    }

    pub fn initial(&self) -> ParserState {
        ParserState {
            stack: Vec::new(),
            next: 0,
            n: self.n,
            history: Vec::new(),
            log_score: None,
            score: 0.0,
        }
    }

    /// Top of the stack (the sentence node once the parse is complete).
    pub fn top(&self, state: &ParserState) -> Option<NodeState> {
        state.stack.last().map(|&s| self.slots[s].state)
    }

    fn projection(&mut self, g: &mut Graph, slot: usize, role: usize) -> Result<Var> {
        let sc = &self.parser.scorer;
        let (cached, matrix) = {
            let s = &self.slots[slot];
            match role {
                0 => (s.proj_top, sc.w_s1),
                1 => (s.proj_second, sc.w_s2),
                _ => (s.proj_queue, sc.w_q),
            }
        };
        if let Some(v) = cached {
            return Ok(v);
        }
        let m = g.param(matrix);
        let v = g.matvec(m, self.slots[slot].state.h)?;
        let s = &mut self.slots[slot];
        match role {
            0 => s.proj_top = Some(v),
            1 => s.proj_second = Some(v),
            _ => s.proj_queue = Some(v),
        }
        Ok(v)
    }

    /// `log_softmax(a + A·tanh(r))` over the valid actions. Absent stack or
    /// queue slots contribute a zero vector to `r`.
    pub fn score_actions(&mut self, g: &mut Graph, state: &ParserState) -> Result<ActionScores> {
        let valid = state.valid_actions();
        if valid.is_empty() {
            return Err(Error::contract("no valid actions from a complete parse"));
        }
        let mut terms = Vec::with_capacity(3);
        if let Some(&top) = state.stack.last() {
            terms.push(self.projection(g, top, 0)?);
        }
        if state.stack.len() >= 2 {
            let second = state.stack[state.stack.len() - 2];
            terms.push(self.projection(g, second, 1)?);
        }
        if state.next < self.n {
            terms.push(self.projection(g, state.next, 2)?);
        }
        let mut r = terms[0];
        for &t in &terms[1..] {
            r = g.add(r, t)?;
        }
        let sc = &self.parser.scorer;
        let tr = g.tanh(r);
        let am = g.param(sc.a_mat);
        let ab = g.param(sc.a_bias);
        let proj = g.matvec(am, tr)?;
        let logits = g.add(ab, proj)?;
        let mask = [valid.contains(&Action::Shift), valid.contains(&Action::Reduce)];
        let log_probs = g.log_softmax_masked(logits, &mask)?;
        let d = g.data(log_probs);
        Ok(ActionScores {
            log_probs,
            values: [d[0], d[1]],
        })
    }

    pub fn apply(&mut self, g: &mut Graph, state: &ParserState, action: Action) -> Result<ParserState> {
        let scores = self.score_actions(g, state)?;
        self.apply_scored(g, state, action, &scores)
    }

    /// Applies `action` using scores already computed for `state`.
    pub fn apply_scored(
        &mut self,
        g: &mut Graph,
        state: &ParserState,
        action: Action,
        scores: &ActionScores,
    ) -> Result<ParserState> {
        if !state.valid_actions().contains(&action) {
            return Err(Error::contract(format!(
                "{action:?} is not valid with stack {} and queue {}",
                state.stack_len(),
                state.queue_len()
            )));
        }
        let mut next = state.clone();
        match action {
            Action::Shift => {
                next.stack.push(state.next);
                next.next += 1;
            }
            Action::Reduce => {
                let right = next.stack.pop().unwrap();
                let left = next.stack.pop().unwrap();
                let parent = self.parser.treelstm.internal(
                    g,
                    self.slots[left].state,
                    self.slots[right].state,
                )?;
                self.slots.push(Slot {
                    state: parent,
                    proj_top: None,
                    proj_second: None,
                    proj_queue: None,
                });
                next.stack.push(self.slots.len() - 1);
            }
        }
        let step = g.index(scores.log_probs, action.index())?;
        next.log_score = Some(match state.log_score {
            None => step,
            Some(prev) => g.add(prev, step)?,
        });
        next.score = g.scalar(next.log_score.unwrap());
        next.history.push(action);
        Ok(next)
    }
}

/// A finished beam element.
#[derive(Clone, Debug)]
pub struct BeamElement {
    pub history: Vec<Action>,
    pub score: f64,
    pub tree: BinaryTree,
    pub h: Var,
}

#[derive(Clone, Debug)]
pub struct BeamParse {
    pub representation: Var,
    pub best: BinaryTree,
    /// Final beam, best first.
    pub beam: Vec<BeamElement>,
}

/// Shift-reduce encoder: a Tree-LSTM cell plus an action scorer.
#[derive(Clone, Debug)]
pub struct ShiftReduceParser {
    pub treelstm: TreeLstm,
    pub scorer: ActionScorer,
}

fn rank(a: &ParserState, a_act: Action, sa: f64, b: &ParserState, b_act: Action, sb: f64) -> Ordering {
    sb.total_cmp(&sa)
        .then_with(|| a.history.cmp(&b.history))
        .then_with(|| a_act.cmp(&b_act))
}

impl ShiftReduceParser {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let treelstm = TreeLstm::new(store, &format!("{prefix}.tree"), dim, rng);
        let scorer = ActionScorer::new(store, &format!("{prefix}.scorer"), dim, rng);
        ShiftReduceParser { treelstm, scorer }
    }

    pub fn dim(&self) -> usize {
        self.scorer.dim
    }

    pub fn session<'a>(&'a self, leaves: &[NodeState]) -> Result<ParseSession<'a>> {
        ParseSession::new(self, leaves)
    }

    /// Synchronous beam search over the `2n − 1` transitions.
    pub fn beam_parse(
        &self,
        g: &mut Graph,
        leaves: &[NodeState],
        beam_width: usize,
        selection: Selection,
    ) -> Result<BeamParse> {
        if beam_width == 0 {
            return Err(Error::contract("beam width must be at least 1"));
        }
        let mut session = self.session(leaves)?;
        let n = leaves.len();
        let mut beam = vec![session.initial()];
        for _ in 0..2 * n - 1 {
            let mut scored = Vec::with_capacity(beam.len());
            let mut candidates = Vec::with_capacity(2 * beam.len());
            for (k, state) in beam.iter().enumerate() {
                let scores = session.score_actions(g, state)?;
                for a in state.valid_actions() {
                    candidates.push((k, a, state.score + scores.get(a)));
                }
                scored.push(scores);
            }
            candidates.sort_by(|x, y| rank(&beam[x.0], x.1, x.2, &beam[y.0], y.1, y.2));
            candidates.truncate(beam_width);
            let mut next = Vec::with_capacity(candidates.len());
            for (k, a, _) in candidates {
                next.push(session.apply_scored(g, &beam[k], a, &scored[k])?);
            }
            beam = next;
        }

        let mut elements = Vec::with_capacity(beam.len());
        let mut score_vars = Vec::with_capacity(beam.len());
        for state in &beam {
            debug_assert!(state.is_complete());
            let top = session.top(state).expect("complete parse has a root");
            score_vars.push(state.log_score.expect("at least one action"));
            elements.push(BeamElement {
                history: state.history.clone(),
                score: state.score,
                tree: history_to_tree(&state.history, n)?,
                h: top.h,
            });
        }
        let scores = g.stack(&score_vars)?;
        let weights = selection.weights(g, scores)?;
        let hs: Vec<Var> = elements.iter().map(|e| e.h).collect();
        let representation = g.weighted_sum(weights, &hs)?;
        Ok(BeamParse {
            representation,
            best: elements[0].tree.clone(),
            beam: elements,
        })
    }
}
