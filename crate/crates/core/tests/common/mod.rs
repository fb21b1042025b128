//! Synthetic NLI corpus in the SNLI jsonl layout.
//!
//! Premises are random noun/verb strings. Entailed hypotheses repeat a
//! prefix of the premise, contradictions insert "not", neutral hypotheses
//! add "maybe". A model only has to spot the marker word to be right, so
//! small models fit it quickly.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "dog", "cat", "man", "woman", "child", "runs", "sits", "eats", "sleeps", "red", "big", "park",
    "street", "ball", "loudly",
];

fn right_branching(tokens: &[String]) -> String {
    match tokens {
        [only] => only.clone(),
        [first, rest @ ..] => format!("( {first} {} )", right_branching(rest)),
        [] => unreachable!(),
    }
}

fn sentence(rng: &mut impl Rng, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect()
}

/// `count` jsonl records, with pair ids prefixed by `tag`.
pub fn corpus_text(count: usize, seed: u64, tag: &str) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for k in 0..count {
        let len = rng.gen_range(3..=6);
        let premise = sentence(&mut rng, len);
        let keep = rng.gen_range(2..=premise.len());
        let mut hyp: Vec<String> = premise[..keep].to_vec();
        let (label, marker) = match k % 3 {
            0 => ("entailment", None),
            1 => ("contradiction", Some("not")),
            _ => ("neutral", Some("maybe")),
        };
        if let Some(m) = marker {
            let at = rng.gen_range(0..=hyp.len());
            hyp.insert(at, m.to_string());
        }
        let record = serde_json::json!({
            "gold_label": label,
            "sentence1_binary_parse": right_branching(&premise),
            "sentence2_binary_parse": right_branching(&hyp),
            "pairID": format!("{tag}{k}"),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

pub fn write_corpus(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, corpus_text(count, seed, name)).unwrap();
    path
}

/// Writes train/dev files under the SNLI names so `--data-dir` works.
pub fn write_snli_layout(dir: &Path, train: usize, dev: usize) {
    std::fs::write(dir.join("snli_1.0_train.jsonl"), corpus_text(train, 1, "tr")).unwrap();
    std::fs::write(dir.join("snli_1.0_dev.jsonl"), corpus_text(dev, 2, "dv")).unwrap();
    std::fs::write(dir.join("snli_1.0_test.jsonl"), corpus_text(dev, 3, "te")).unwrap();
}
