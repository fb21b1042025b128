//! Full binary trees over token positions, plus the bracketed text format
//! used by the corpora (`( ( a b ) c )`) and by exported tree files.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BinaryTree {
    Leaf(usize),
    Node(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn node(left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Node(Box::new(left), Box::new(right))
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 1,
            BinaryTree::Node(l, r) => l.num_leaves() + r.num_leaves(),
        }
    }

    /// Half-open token span `(i, j)` covered by this subtree.
    pub fn span(&self) -> (usize, usize) {
        match self {
            BinaryTree::Leaf(i) => (*i, i + 1),
            BinaryTree::Node(l, r) => (l.span().0, r.span().1),
        }
    }

    /// Spans of all internal nodes in pre-order (root first).
    pub fn internal_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(&mut out);
        out
    }

    fn collect_spans(&self, out: &mut Vec<(usize, usize)>) -> (usize, usize) {
        match self {
            BinaryTree::Leaf(i) => (*i, i + 1),
            BinaryTree::Node(l, r) => {
                let slot = out.len();
                out.push((0, 0));
                let (i, _) = l.collect_spans(out);
                let (_, j) = r.collect_spans(out);
                out[slot] = (i, j);
                (i, j)
            }
        }
    }

    /// Checks the leaves read `0..n` left to right, i.e. every span is the
    /// contiguous union of its children.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut next = 0;
        self.check_leaves(&mut next)?;
        if next != n {
            return Err(Error::contract(format!(
                "tree has {next} leaves, sentence has {n} tokens"
            )));
        }
        Ok(())
    }

    fn check_leaves(&self, next: &mut usize) -> Result<()> {
        match self {
            BinaryTree::Leaf(i) if *i == *next => {
                *next += 1;
                Ok(())
            }
            BinaryTree::Leaf(i) => Err(Error::contract(format!(
                "leaf {i} out of order, expected {next}"
            ))),
            BinaryTree::Node(l, r) => {
                l.check_leaves(next)?;
                r.check_leaves(next)
            }
        }
    }

    /// Bracketed rendering with the given leaf labels.
    pub fn to_bracketed<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        let mut out = String::new();
        self.write_bracketed(tokens, &mut out);
        out
    }

    fn write_bracketed<S: AsRef<str>>(&self, tokens: &[S], out: &mut String) {
        match self {
            BinaryTree::Leaf(i) => out.push_str(tokens[*i].as_ref()),
            BinaryTree::Node(l, r) => {
                out.push_str("( ");
                l.write_bracketed(tokens, out);
                out.push(' ');
                r.write_bracketed(tokens, out);
                out.push_str(" )");
            }
        }
    }
}

/// Renders leaves as their positions, e.g. `((0 1) 2)`.
impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryTree::Leaf(i) => write!(f, "{i}"),
            BinaryTree::Node(l, r) => write!(f, "({l} {r})"),
        }
    }
}

/// A tree read from bracketed text together with its leaf tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bracketed {
    pub tree: BinaryTree,
    pub tokens: Vec<String>,
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Word(&'a str),
}

fn lex(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push((start, Tok::Word(&text[start..i])));
            }
        }
    }
    out
}

/// Parses a strictly binary bracketing: every parenthesised group holds
/// exactly two children. A bare token is a one-leaf tree.
pub fn parse_bracketed(text: &str) -> Result<Bracketed> {
    let toks = lex(text);
    let mut pos = 0;
    let mut tokens = Vec::new();
    let tree = parse_subtree(&toks, &mut pos, &mut tokens, text.len())?;
    if let Some((at, _)) = toks.get(pos) {
        return Err(Error::TreeParse {
            position: *at,
            message: "trailing input after tree".into(),
        });
    }
    Ok(Bracketed { tree, tokens })
}

fn parse_subtree(
    toks: &[(usize, Tok<'_>)],
    pos: &mut usize,
    tokens: &mut Vec<String>,
    end: usize,
) -> Result<BinaryTree> {
    let Some((at, tok)) = toks.get(*pos) else {
        return Err(Error::TreeParse {
            position: end,
            message: "unexpected end of input".into(),
        });
    };
    *pos += 1;
    match tok {
        Tok::Word(w) => {
            tokens.push((*w).to_string());
            Ok(BinaryTree::Leaf(tokens.len() - 1))
        }
        Tok::Close => Err(Error::TreeParse {
            position: *at,
            message: "unbalanced ')'".into(),
        }),
        Tok::Open => {
            let mut children = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => {
                        return Err(Error::TreeParse {
                            position: end,
                            message: format!("'(' at byte {at} is never closed"),
                        })
                    }
                    Some((_, Tok::Close)) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_subtree(toks, pos, tokens, end)?),
                }
            }
            if children.len() != 2 {
                return Err(Error::TreeParse {
                    position: *at,
                    message: format!("node has {} children, expected 2", children.len()),
                });
            }
            let right = children.pop().unwrap();
            let left = children.pop().unwrap();
            Ok(BinaryTree::node(left, right))
        }
    }
}

/// Number of binary trees with `n` internal nodes.
pub fn catalan(n: usize) -> u128 {
    let mut c: u128 = 1;
    for k in 0..n as u128 {
        c = c * 2 * (2 * k + 1) / (k + 2);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(i: usize) -> BinaryTree {
        BinaryTree::Leaf(i)
    }

    #[test]
    fn parses_simple_brackets() {
        let b = parse_bracketed("( a b )").unwrap();
        assert_eq!(b.tree, BinaryTree::node(leaf(0), leaf(1)));
        assert_eq!(b.tokens, vec!["a", "b"]);

        let b = parse_bracketed("( ( a b ) c )").unwrap();
        assert_eq!(b.tree.to_string(), "((0 1) 2)");

        let b = parse_bracketed("a").unwrap();
        assert_eq!(b.tree, leaf(0));
        assert_eq!(b.tokens, vec!["a"]);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["( a b", "( a b ) )", "( a b c )", "( a )", "", ")", "( ( a b ) )"] {
            assert!(
                matches!(parse_bracketed(bad), Err(Error::TreeParse { .. })),
                "{bad:?} should fail"
            );
        }
        match parse_bracketed("( a ( b c d ) )") {
            Err(Error::TreeParse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spans_and_validation() {
        let t = parse_bracketed("( ( a b ) ( c d ) )").unwrap().tree;
        assert_eq!(t.internal_spans(), vec![(0, 4), (0, 2), (2, 4)]);
        assert_eq!(t.span(), (0, 4));
        assert!(t.validate(4).is_ok());
        assert!(t.validate(5).is_err());
        let bad = BinaryTree::node(leaf(1), leaf(0));
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn catalan_numbers() {
        let first: Vec<u128> = (0..8).map(catalan).collect();
        assert_eq!(first, vec![1, 1, 2, 5, 14, 42, 132, 429]);
    }

    fn arb_tree(n: usize) -> BoxedStrategy<BinaryTree> {
        fn build(lo: usize, hi: usize, splits: &[usize], k: &mut usize) -> BinaryTree {
            if hi - lo == 1 {
                return BinaryTree::Leaf(lo);
            }
            let s = lo + 1 + splits[*k % splits.len()] % (hi - lo - 1);
            *k += 1;
            let l = build(lo, s, splits, k);
            let r = build(s, hi, splits, k);
            BinaryTree::node(l, r)
        }
        proptest::collection::vec(0usize..1000, 1..20)
            .prop_map(move |splits| build(0, n, &splits, &mut 0))
            .boxed()
    }

    proptest! {
        #[test]
        fn bracketed_round_trip(tree in (1usize..15).prop_flat_map(arb_tree)) {
            let n = tree.num_leaves();
            let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let text = tree.to_bracketed(&tokens);
            let back = parse_bracketed(&text).unwrap();
            prop_assert_eq!(&back.tree, &tree);
            prop_assert_eq!(back.tokens, tokens);
            prop_assert_eq!(tree.internal_spans().len(), n - 1);
            prop_assert!(tree.validate(n).is_ok());
        }
    }
}
