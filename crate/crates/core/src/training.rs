//! Training loop: Adam, beam-width annealing, seeded shuffling, per-epoch
//! dev evaluation with best-checkpoint retention, and evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Gradients, Graph, ParamStore, Tensor};
use crate::checkpoint::Checkpoint;
use crate::data::{self, Dataset, Example, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{EncodeOptions, ModelKind, NliModel};
use crate::nli::{self, Label};
use crate::parallel::{self, Execution};
use crate::selection::Selection;
use crate::tree::BinaryTree;

/// Examples per sequential gradient-accumulation chunk. Chunks run in
/// parallel and are merged in order, so the summation order, and with it
/// every bit of the result, is independent of the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    /// Width of the classifier's hidden layer.
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam_start: usize,
    pub beam_end: usize,
    pub beam_anneal_epochs: usize,
    pub seed: u64,
    /// Legacy soft-mixture CKY with this softmax temperature. Unset means
    /// straight-through selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    /// Use only the first N training pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_limit: Option<usize>,
    /// Optimizer steps per metrics record.
    pub log_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub train_files: Vec<PathBuf>,
    pub dev_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub checkpoint: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Bssr,
            dim: 100,
            hidden: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 10,
            beam_start: 50,
            beam_end: 5,
            beam_anneal_epochs: 2,
            seed: 1,
            temperature: None,
            clip_norm: None,
            max_length: None,
            train_limit: None,
            dev_limit: None,
            log_every: 50,
            dataset: None,
            data_dir: None,
            train_files: Vec::new(),
            dev_files: Vec::new(),
            test_files: Vec::new(),
            embeddings: None,
            checkpoint: PathBuf::from("model.ckpt"),
            metrics: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.beam_end < 1 || self.beam_start < self.beam_end {
            return fail("need beam_start >= beam_end >= 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 || self.dim < 1 || self.hidden < 1 || self.log_every < 1 {
            return fail("batch_size, dim, hidden and log_every must be positive");
        }
        if let Some(t) = self.temperature {
            if t.is_nan() || t <= 0.0 {
                return fail("temperature must be positive");
            }
        }
        Ok(())
    }

    /// Selection rule used for training and evaluation.
    pub fn selection(&self) -> Selection {
        match (self.model, self.temperature) {
            (ModelKind::Cky, Some(temperature)) => Selection::Soft { temperature },
            _ => Selection::StraightThrough,
        }
    }

    /// Corpus files for `split`: the explicit list if given, else the
    /// dataset layout under `data_dir`.
    pub fn files(&self, split: Split) -> Result<Vec<PathBuf>> {
        let explicit = match split {
            Split::Train => &self.train_files,
            Split::Dev => &self.dev_files,
            Split::Test => &self.test_files,
        };
        if !explicit.is_empty() {
            return Ok(explicit.clone());
        }
        match (self.dataset, &self.data_dir) {
            (Some(ds), Some(dir)) => Ok(ds.files(dir, split)),
            _ => Ok(Vec::new()),
        }
    }
}

/// Beam width at optimizer step `step`: linear from `beam_start` at step 0
/// to `beam_end` at the last step of epoch `beam_anneal_epochs`, rounded
/// half up, constant afterwards.
pub fn beam_at(step: u64, steps_per_epoch: u64, config: &TrainConfig) -> usize {
    let anneal = steps_per_epoch * config.beam_anneal_epochs as u64;
    if anneal <= 1 || step + 1 >= anneal {
        return config.beam_end;
    }
    let frac = step as f64 / (anneal - 1) as f64;
    let (start, end) = (config.beam_start as f64, config.beam_end as f64);
    let width = start - (start - end) * frac;
    ((width + 0.5).floor() as usize).max(config.beam_end)
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub(crate) t: u64,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if let Some(id) = grads.first_non_finite() {
            return Err(Error::NonFinite(store.name(id).to_string()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.dense(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// A pair mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub label: Label,
}

pub fn encode_pairs(vocab: &Vocabulary, examples: &[Example]) -> Vec<EncodedPair> {
    examples
        .iter()
        .map(|e| EncodedPair {
            premise: vocab.encode(&e.premise),
            hypothesis: vocab.encode(&e.hypothesis),
            label: e.label,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub mean_loss: f64,
    pub correct: usize,
    /// Gradient of the mean loss.
    pub grads: Gradients,
}

fn predicted(log_probs: &[f64]) -> Label {
    Label::from_index(argmax(log_probs)).expect("three classes")
}

/// Forward and backward over a batch; the returned gradient is that of the
/// batch-mean loss.
pub fn batch_gradients(
    model: &NliModel,
    store: &ParamStore,
    batch: &[EncodedPair],
    opts: EncodeOptions,
    exec: Execution,
) -> Result<BatchResult> {
    let chunks: Vec<&[EncodedPair]> = batch.chunks(GRAD_CHUNK).collect();
    let partials = parallel::try_map(exec, &chunks, |_, chunk| -> Result<_> {
        let mut grads = Gradients::new(store);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for pair in chunk.iter() {
            let mut g = Graph::new(store);
            let out = model.forward(&mut g, &pair.premise, &pair.hypothesis, opts)?;
            if predicted(g.data(out.log_probs)) == pair.label {
                correct += 1;
            }
            let loss = nli::loss(&mut g, out.log_probs, pair.label)?;
            loss_sum += g.scalar(loss);
            g.backward(loss, &mut grads)?;
        }
        Ok((loss_sum, correct, grads))
    })?;
    let mut grads = Gradients::new(store);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (l, c, g) in &partials {
        loss_sum += l;
        correct += c;
        grads.merge(g);
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    grads.scale(scale);
    Ok(BatchResult {
        mean_loss: loss_sum * scale,
        correct,
        grads,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<Label>,
    /// Induced (premise, hypothesis) trees.
    pub trees: Vec<(BinaryTree, BinaryTree)>,
}

pub fn evaluate_pairs(
    model: &NliModel,
    store: &ParamStore,
    pairs: &[EncodedPair],
    opts: EncodeOptions,
    exec: Execution,
) -> Result<Evaluation> {
    let outputs = parallel::try_map(exec, pairs, |_, pair| -> Result<_> {
        let mut g = Graph::new(store);
        let out = model.forward(&mut g, &pair.premise, &pair.hypothesis, opts)?;
        Ok((predicted(g.data(out.log_probs)), out.premise_tree, out.hypothesis_tree))
    })?;
    let mut predictions = Vec::with_capacity(pairs.len());
    let mut trees = Vec::with_capacity(pairs.len());
    let mut correct = 0;
    for ((label, pt, ht), pair) in outputs.into_iter().zip(pairs) {
        if label == pair.label {
            correct += 1;
        }
        predictions.push(label);
        trees.push((pt, ht));
    }
    Ok(Evaluation {
        accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
        predictions,
        trees,
    })
}

/// Evaluation-time options: the final beam width and the trained selection.
pub fn eval_options(config: &TrainConfig) -> EncodeOptions {
    EncodeOptions {
        beam: config.beam_end,
        selection: config.selection(),
    }
}

/// Evaluates a checkpoint on raw examples.
pub fn evaluate(checkpoint: &Checkpoint, examples: &[Example], exec: Execution) -> Result<Evaluation> {
    let model = checkpoint.model()?;
    let pairs = encode_pairs(&checkpoint.vocab, examples);
    evaluate_pairs(&model, &checkpoint.store, &pairs, eval_options(&checkpoint.config), exec)
}

/// One line of the metrics log. Records with `dev_acc` close an epoch and
/// summarize all of it; the others cover the last `log_every` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub dev_acc: Option<f64>,
    pub beam_width: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-dev checkpoint (the last one when there is no dev set).
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
    pub dev_accuracies: Vec<f64>,
    /// Mean loss of the very first batch, before any update.
    pub initial_loss: f64,
}

/// Fresh model for `vocab`, with embeddings from `config.embeddings` if set.
pub fn init_model(config: &TrainConfig, vocab: &Vocabulary) -> Result<(ParamStore, NliModel)> {
    let table: Tensor = match &config.embeddings {
        Some(path) => data::load_embeddings(path, vocab, config.dim, config.seed)?.0,
        None => data::random_embeddings(vocab, config.dim, config.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut store = ParamStore::new();
    let model = NliModel::new(&mut store, config.model, table, config.hidden, &mut rng)?;
    Ok((store, model))
}

/// Trains on in-memory data. The vocabulary comes from `train`.
pub fn train_on(
    config: &TrainConfig,
    train: &[Example],
    dev: &[Example],
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let vocab = Vocabulary::from_examples(train);
    let (mut store, model) = init_model(config, &vocab)?;
    let mut adam = Adam::new(&store, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let train_pairs = encode_pairs(&vocab, train);
    let dev_pairs = encode_pairs(&vocab, dev);
    let steps_per_epoch = train_pairs.len().div_ceil(config.batch_size) as u64;
    let selection = config.selection();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(2);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    let mut metrics = Vec::new();
    let mut dev_accuracies = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut initial_loss = None;
    let mut step: u64 = 0;
    let (mut window_loss, mut window_correct, mut window_seen, mut window_steps) = (0.0, 0, 0, 0);
    let (mut epoch_loss, mut epoch_correct, mut epoch_seen, mut epoch_steps) = (0.0, 0, 0, 0);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<EncodedPair> = batch_idx.iter().map(|&i| train_pairs[i].clone()).collect();
            let beam = beam_at(step, steps_per_epoch, config);
            let opts = EncodeOptions { beam, selection };
            let mut result = batch_gradients(&model, &store, &batch, opts, exec)?;
            initial_loss.get_or_insert(result.mean_loss);
            if let Some(max_norm) = config.clip_norm {
                let norm = result.grads.global_norm();
                if norm > max_norm {
                    result.grads.scale(max_norm / norm);
                }
            }
            adam.step(&mut store, &result.grads)?;
            step += 1;
            window_loss += result.mean_loss;
            window_correct += result.correct;
            window_seen += batch.len();
            window_steps += 1;
            epoch_loss += result.mean_loss;
            epoch_correct += result.correct;
            epoch_seen += batch.len();
            epoch_steps += 1;
            if step.is_multiple_of(config.log_every as u64) {
                metrics.push(MetricRecord {
                    step,
                    epoch,
                    loss: window_loss / window_steps as f64,
                    train_acc: window_correct as f64 / window_seen as f64,
                    dev_acc: None,
                    beam_width: beam,
                });
                (window_loss, window_correct, window_seen, window_steps) = (0.0, 0, 0, 0);
            }
        }
        let dev_acc = if dev_pairs.is_empty() {
            None
        } else {
            let opts = eval_options(config);
            Some(evaluate_pairs(&model, &store, &dev_pairs, opts, exec)?.accuracy)
        };
        metrics.push(MetricRecord {
            step,
            epoch,
            loss: epoch_loss / epoch_steps as f64,
            train_acc: epoch_correct as f64 / epoch_seen as f64,
            dev_acc,
            beam_width: beam_at(step - 1, steps_per_epoch, config),
        });
        (epoch_loss, epoch_correct, epoch_seen, epoch_steps) = (0.0, 0, 0, 0);

        let snapshot = || Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            store: store.clone(),
            adam: adam.clone(),
            step,
            epoch,
            dev_accuracy: dev_acc,
        };
        match dev_acc {
            Some(acc) => {
                dev_accuracies.push(acc);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, snapshot()));
                }
            }
            None => best = Some((f64::NAN, snapshot())),
        }
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch").1,
        metrics,
        dev_accuracies,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
    })
}

pub fn write_metrics(path: &Path, metrics: &[MetricRecord]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads the configured corpora, trains, and writes the checkpoint and
/// metrics log.
pub fn train(config: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    config.validate()?;
    let train_files = config.files(Split::Train)?;
    if train_files.is_empty() {
        return Err(Error::Config(
            "no training files: set train_files or dataset + data_dir".into(),
        ));
    }
    let mut train = data::filter_length(data::load_corpus(&train_files)?, config.max_length);
    if let Some(n) = config.train_limit {
        train.truncate(n);
    }
    let mut dev = data::load_corpus(&config.files(Split::Dev)?)?;
    if let Some(n) = config.dev_limit {
        dev.truncate(n);
    }
    let outcome = train_on(config, &train, &dev, exec)?;
    outcome.checkpoint.save(&config.checkpoint)?;
    if let Some(path) = &config.metrics {
        write_metrics(path, &outcome.metrics)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn beam_schedule() {
        let c = cfg();
        let spe = 101;
        assert_eq!(beam_at(0, spe, &c), 50);
        assert_eq!(beam_at(2 * spe - 1, spe, &c), 5);
        assert_eq!(beam_at(2 * spe, spe, &c), 5);
        assert_eq!(beam_at(10_000, spe, &c), 5);
        // Midpoint of the anneal: 50 - 45/2 = 27.5 rounds up.
        assert_eq!(beam_at(100, spe, &c), 28);
        let mut prev = usize::MAX;
        for s in 0..3 * spe {
            let b = beam_at(s, spe, &c);
            assert!(b <= prev && b >= 5);
            prev = b;
        }
        assert_eq!(beam_at(0, 0, &c), 5);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, -2.0]));
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999, 1e-8);
        let grads = Gradients::new(&store);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(p).data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999, 1e-8);
        let mut grads = Gradients::new(&store);
        grads.add_dense(p, &[0.3, -4.0, 1e-2]);
        adam.step(&mut store, &grads).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let expected = [1.0 - 1e-3 * 0.3 / (0.3 + 1e-8), -2.0 + 1e-3 * 4.0 / (4.0 + 1e-8), 0.5 - 1e-3 * 1e-2 / (1e-2 + 1e-8)];
        for (a, e) in store.get(p).data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut store = ParamStore::new();
        let p = store.add("weights", Tensor::vector(vec![0.0]));
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999, 1e-8);
        let mut grads = Gradients::new(&store);
        grads.add_dense(p, &[f64::NAN]);
        match adam.step(&mut store, &grads) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "weights"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            let p = store.add("p", Tensor::vector(vec![0.1, 0.2, 0.3]));
            let mut adam = Adam::new(&store, 1e-2, 0.9, 0.999, 1e-8);
            for k in 0..10 {
                let mut grads = Gradients::new(&store);
                let x = store.get(p).data().to_vec();
                grads.add_dense(p, &[x[0] * 2.0, (k as f64).sin(), -x[2]]);
                adam.step(&mut store, &grads).unwrap();
            }
            store.get(p).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = cfg();
        c.model = ModelKind::Cky;
        c.temperature = Some(0.5);
        c.dataset = Some(Dataset::MultinliPlus);
        c.train_files = vec!["a.jsonl".into()];
        let text = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.selection(), Selection::Soft { temperature: 0.5 });
        let partial = TrainConfig::from_toml("model = \"cky\"\nepochs = 3\n").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.beam_start, 50);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.beam_end = 60;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.epochs = 0;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
