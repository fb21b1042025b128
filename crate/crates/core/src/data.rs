//! NLI corpora, vocabulary, and pretrained embeddings.
//!
//! Corpus files are the line-delimited JSON releases of SNLI and MultiNLI.
//! Tokens are always read off the `sentence{1,2}_binary_parse` fields so
//! that they line up with the provided trees; nothing here tokenizes.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nli::Label;
use crate::tree::{parse_bracketed, BinaryTree};

pub const UNKNOWN: &str = "<unk>";

/// Bound of the uniform init for rows missing from the embedding file.
pub const OOV_BOUND: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pair_id: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
    pub premise_tree: Option<BinaryTree>,
    pub hypothesis_tree: Option<BinaryTree>,
    pub genre: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    gold_label: String,
    sentence1_binary_parse: String,
    sentence2_binary_parse: String,
    #[serde(rename = "pairID")]
    pair_id: String,
    #[serde(default)]
    genre: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Named corpus layouts under a data directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Snli,
    /// MultiNLI train augmented with SNLI train; matched dev/test.
    MultinliPlus,
}

impl Dataset {
    pub fn files(self, data_dir: &Path, split: Split) -> Vec<PathBuf> {
        let names: &[&str] = match (self, split) {
            (Dataset::Snli, Split::Train) => &["snli_1.0_train.jsonl"],
            (Dataset::Snli, Split::Dev) => &["snli_1.0_dev.jsonl"],
            (Dataset::Snli, Split::Test) => &["snli_1.0_test.jsonl"],
            (Dataset::MultinliPlus, Split::Train) => {
                &["multinli_1.0_train.jsonl", "snli_1.0_train.jsonl"]
            }
            (Dataset::MultinliPlus, Split::Dev) => &["multinli_1.0_dev_matched.jsonl"],
            (Dataset::MultinliPlus, Split::Test) => &["multinli_1.0_test_matched.jsonl"],
        };
        names.iter().map(|n| data_dir.join(n)).collect()
    }
}

fn parse_side(path: &Path, line: usize, field: &str, text: &str) -> Result<(Vec<String>, BinaryTree)> {
    let parsed = parse_bracketed(text).map_err(|e| Error::Corpus {
        path: path.to_path_buf(),
        line,
        message: format!("{field}: {e}"),
    })?;
    Ok((parsed.tokens, parsed.tree))
}

/// Reads one corpus file. Records whose gold label is `-` (no annotator
/// majority) are dropped.
pub fn load_corpus_file(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let corpus_err = |message: String| Error::Corpus {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| corpus_err(e.to_string()))?;
        if raw.gold_label == "-" {
            continue;
        }
        let label: Label = raw.gold_label.parse().map_err(corpus_err)?;
        let (premise, ptree) = parse_side(path, lineno, "sentence1_binary_parse", &raw.sentence1_binary_parse)?;
        let (hypothesis, htree) =
            parse_side(path, lineno, "sentence2_binary_parse", &raw.sentence2_binary_parse)?;
        out.push(Example {
            pair_id: raw.pair_id,
            premise,
            hypothesis,
            label,
            premise_tree: Some(ptree),
            hypothesis_tree: Some(htree),
            genre: raw.genre,
        });
    }
    Ok(out)
}

/// Concatenates several corpus files in order.
pub fn load_corpus(paths: &[PathBuf]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_corpus_file(p)?);
    }
    Ok(out)
}

/// Drops pairs where either sentence is longer than `max_len` tokens.
pub fn filter_length(examples: Vec<Example>, max_len: Option<usize>) -> Vec<Example> {
    match max_len {
        None => examples,
        Some(m) => examples
            .into_iter()
            .filter(|e| e.premise.len() <= m && e.hypothesis.len() <= m)
            .collect(),
    }
}

/// Lowercased token inventory. Index 0 is the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary in order of first appearance across premises and hypotheses.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut tokens = vec![UNKNOWN.to_string()];
        let mut index = HashMap::from([(UNKNOWN.to_string(), 0)]);
        for ex in examples {
            for t in ex.premise.iter().chain(&ex.hypothesis) {
                let key = t.to_lowercase();
                if !index.contains_key(&key) {
                    index.insert(key.clone(), tokens.len());
                    tokens.push(key);
                }
            }
        }
        Vocabulary { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN) {
            return Err(Error::contract("vocabulary must start with the unknown token"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(&token.to_lowercase()).copied()
    }

    /// Index of `token`, falling back to the unknown token.
    pub fn id(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// `vocab.len() × dim` matrix, uniform in `±OOV_BOUND`, fixed by `seed`.
pub fn random_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-OOV_BOUND..=OOV_BOUND))
        .collect();
    Tensor::matrix(vocab.len(), dim, data).expect("shape matches")
}

/// Embedding matrix for `vocab`: rows present in the GloVe-style text file
/// are copied verbatim (first occurrence wins), the rest keep the seeded
/// random init. Returns the matrix and the number of rows found.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<(Tensor, usize)> {
    let mut table = random_embeddings(vocab, dim, seed);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_ascii_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::EmbeddingWidth {
                token: token.to_string(),
                found: values.len(),
                expected: dim,
            });
        }
        let Some(row) = vocab.lookup(token) else {
            continue;
        };
        if !seen.insert(row) {
            continue;
        }
        let dst = table.row_mut(row);
        for (d, v) in dst.iter_mut().zip(&values) {
            *d = v.parse().map_err(|_| Error::EmbeddingWidth {
                token: token.to_string(),
                found: values.len(),
                expected: dim,
            })?;
        }
    }
    Ok((table, seen.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(label: &str, s1: &str, s2: &str, id: &str) -> String {
        serde_json::json!({
            "gold_label": label,
            "sentence1_binary_parse": s1,
            "sentence2_binary_parse": s2,
            "pairID": id,
        })
        .to_string()
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_records_and_skips_no_consensus() {
        let f = write_lines(&[
            record("entailment", "( ( A dog ) runs )", "( A animal )", "1"),
            record("-", "( a b )", "( c d )", "2"),
            String::new(),
            record("neutral", "( The ( cat sat ) )", "Cats", "3"),
        ]);
        let ex = load_corpus_file(f.path()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].premise, vec!["A", "dog", "runs"]);
        assert_eq!(ex[0].premise_tree.as_ref().unwrap().to_string(), "((0 1) 2)");
        assert_eq!(ex[1].label, Label::Neutral);
        assert_eq!(ex[1].hypothesis, vec!["Cats"]);
        assert_eq!(ex[1].pair_id, "3");

        let both = load_corpus(&[f.path().to_path_buf(), f.path().to_path_buf()]).unwrap();
        assert_eq!(both.len(), 4);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let f = write_lines(&[record("entailment", "( a b )", "( a b )", "1"), "{not json".into()]);
        match load_corpus_file(f.path()) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write_lines(&[record("maybe", "( a b )", "( a b )", "1")]);
        assert!(matches!(load_corpus_file(f.path()), Err(Error::Corpus { line: 1, .. })));
        let f = write_lines(&[record("neutral", "( a b c )", "( a b )", "1")]);
        assert!(matches!(load_corpus_file(f.path()), Err(Error::Corpus { line: 1, .. })));
    }

    #[test]
    fn vocabulary_lowercases_for_lookup() {
        let f = write_lines(&[record("entailment", "( The Dog )", "( the cat )", "1")]);
        let ex = load_corpus_file(f.path()).unwrap();
        let v = Vocabulary::from_examples(&ex);
        assert_eq!(v.tokens(), &["<unk>", "the", "dog", "cat"]);
        assert_eq!(v.id("DOG"), 2);
        assert_eq!(v.id("zebra"), 0);
        assert_eq!(ex[0].premise[0], "The");
        let again = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(again, v);
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }

    #[test]
    fn embeddings_copy_known_rows_and_seed_the_rest() {
        let f = write_lines(&[record("entailment", "( the dog )", "( a cat )", "1")]);
        let ex = load_corpus_file(f.path()).unwrap();
        let vocab = Vocabulary::from_examples(&ex);
        let emb = write_lines(&["dog 0.5 -1.25 3".into(), "zebra 1 1 1".into(), "dog 9 9 9".into()]);
        let (t, found) = load_embeddings(emb.path(), &vocab, 3, 7).unwrap();
        assert_eq!(found, 1);
        assert_eq!(t.row(vocab.id("dog")), &[0.5, -1.25, 3.0]);
        for tok in ["the", "a", "cat", UNKNOWN] {
            assert!(t.row(vocab.id(tok)).iter().all(|x| x.abs() <= OOV_BOUND));
        }
        let (again, _) = load_embeddings(emb.path(), &vocab, 3, 7).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t), bits(&again));
        let (other, _) = load_embeddings(emb.path(), &vocab, 3, 8).unwrap();
        assert_ne!(bits(&t), bits(&other));

        let bad = write_lines(&["cat 1 2".into()]);
        match load_embeddings(bad.path(), &vocab, 3, 7) {
            Err(Error::EmbeddingWidth { token, found, .. }) => {
                assert_eq!(token, "cat");
                assert_eq!(found, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_layouts() {
        let dir = Path::new("/data");
        assert_eq!(Dataset::Snli.files(dir, Split::Dev), vec![dir.join("snli_1.0_dev.jsonl")]);
        assert_eq!(Dataset::MultinliPlus.files(dir, Split::Train).len(), 2);
    }
}
