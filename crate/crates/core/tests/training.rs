mod common;

use latent_trees::autodiff::Graph;
use latent_trees::checkpoint::Checkpoint;
use latent_trees::data::{load_corpus_file, Example, Vocabulary};
use latent_trees::model::{EncodeOptions, ModelKind};
use latent_trees::parallel::Execution;
use latent_trees::selection::Selection;
use latent_trees::training::{
    self, batch_gradients, encode_pairs, eval_options, init_model, TrainConfig,
};

fn corpus(count: usize, seed: u64) -> Vec<Example> {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_corpus(dir.path(), "c.jsonl", count, seed);
    load_corpus_file(&path).unwrap()
}

fn small(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model: kind,
        dim: 16,
        hidden: 24,
        learning_rate: 1e-2,
        batch_size: 8,
        epochs: 2,
        beam_start: 4,
        beam_end: 2,
        beam_anneal_epochs: 1,
        log_every: 2,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn first_batch_loss_is_near_chance() {
    let train = corpus(32, 11);
    for kind in [ModelKind::Bssr, ModelKind::Cky] {
        let config = TrainConfig {
            model: kind,
            ..TrainConfig::default()
        };
        let vocab = Vocabulary::from_examples(&train);
        let (store, model) = init_model(&config, &vocab).unwrap();
        let pairs = encode_pairs(&vocab, &train);
        let opts = EncodeOptions {
            beam: config.beam_start,
            selection: Selection::StraightThrough,
        };
        let r = batch_gradients(&model, &store, &pairs, opts, Execution::default()).unwrap();
        assert!(
            (r.mean_loss - 3f64.ln()).abs() < 0.2,
            "{kind:?}: first-batch loss {}",
            r.mean_loss
        );
    }
}

#[test]
fn overfits_a_small_synthetic_set() {
    let train = corpus(60, 3);
    for kind in [ModelKind::Bssr, ModelKind::Cky] {
        let config = TrainConfig {
            epochs: 30,
            ..small(kind)
        };
        let out = training::train_on(&config, &train, &[], Execution::default()).unwrap();
        let eval = training::evaluate(&out.checkpoint, &train, Execution::default()).unwrap();
        assert!(eval.accuracy >= 0.95, "{kind:?}: train accuracy {}", eval.accuracy);
        assert!((out.initial_loss - 3f64.ln()).abs() < 0.2);
    }
}

#[test]
fn training_is_bit_reproducible_across_execution_modes() {
    let train = corpus(30, 4);
    let dev = corpus(9, 5);
    for kind in [ModelKind::Bssr, ModelKind::Cky] {
        let config = small(kind);
        let a = training::train_on(&config, &train, &dev, Execution::Parallel).unwrap();
        let b = training::train_on(&config, &train, &dev, Execution::Parallel).unwrap();
        let c = training::train_on(&config, &train, &dev, Execution::Sequential).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
        assert_eq!(a.metrics, c.metrics);
    }
}

#[test]
fn best_dev_checkpoint_matches_logged_maximum() {
    let train = corpus(30, 6);
    let dev = corpus(12, 7);
    let config = TrainConfig {
        epochs: 4,
        ..small(ModelKind::Cky)
    };
    let out = training::train_on(&config, &train, &dev, Execution::default()).unwrap();
    assert_eq!(out.dev_accuracies.len(), 4);
    let best = out.dev_accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.checkpoint.dev_accuracy, Some(best));
    let first_best = out.dev_accuracies.iter().position(|&a| a == best).unwrap();
    assert_eq!(out.checkpoint.epoch, first_best + 1);
    let logged: Vec<f64> = out.metrics.iter().filter_map(|m| m.dev_acc).collect();
    assert_eq!(logged, out.dev_accuracies);
    let eval = training::evaluate(&out.checkpoint, &dev, Execution::default()).unwrap();
    assert_eq!(eval.accuracy, best);
}

#[test]
fn logged_beam_widths_anneal() {
    let train = corpus(40, 8);
    let config = TrainConfig {
        epochs: 3,
        log_every: 1,
        beam_start: 9,
        beam_end: 3,
        beam_anneal_epochs: 2,
        ..small(ModelKind::Bssr)
    };
    let out = training::train_on(&config, &train, &[], Execution::default()).unwrap();
    let widths: Vec<usize> = out
        .metrics
        .iter()
        .filter(|m| m.dev_acc.is_none())
        .map(|m| m.beam_width)
        .collect();
    assert_eq!(widths.first(), Some(&9));
    assert_eq!(widths.last(), Some(&3));
    assert!(widths.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn different_seeds_give_different_models() {
    let train = corpus(16, 9);
    let bytes: Vec<Vec<u8>> = (1..=5)
        .map(|seed| {
            let config = TrainConfig {
                seed,
                epochs: 1,
                ..small(ModelKind::Bssr)
            };
            let out = training::train_on(&config, &train, &[], Execution::default()).unwrap();
            out.checkpoint.to_bytes()
        })
        .collect();
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(bytes[i], bytes[j]);
        }
    }
}

#[test]
fn reloaded_checkpoint_reproduces_outputs() {
    let train = corpus(20, 10);
    for kind in [ModelKind::Bssr, ModelKind::Cky] {
        let out = training::train_on(&small(kind), &train, &[], Execution::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let before = out.checkpoint.model().unwrap();
        let after = back.model().unwrap();
        let opts = eval_options(&back.config);
        for pair in encode_pairs(&back.vocab, &train) {
            let mut g1 = Graph::new(&out.checkpoint.store);
            let mut g2 = Graph::new(&back.store);
            let a = before.forward(&mut g1, &pair.premise, &pair.hypothesis, opts).unwrap();
            let b = after.forward(&mut g2, &pair.premise, &pair.hypothesis, opts).unwrap();
            let bits = |g: &Graph, v| g.data(v).iter().map(|x: &f64| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&g1, a.log_probs), bits(&g2, b.log_probs));
            assert_eq!(a.premise_tree, b.premise_tree);
        }
        let e1 = training::evaluate(&back, &train, Execution::Parallel).unwrap();
        let e2 = training::evaluate(&back, &train, Execution::Sequential).unwrap();
        assert_eq!(e1, e2);
    }
}

#[test]
fn soft_cky_training_runs() {
    let train = corpus(12, 12);
    let config = TrainConfig {
        temperature: Some(1.0),
        ..small(ModelKind::Cky)
    };
    let out = training::train_on(&config, &train, &train, Execution::default()).unwrap();
    let eval = training::evaluate(&out.checkpoint, &train, Execution::default()).unwrap();
    for (e, (p, h)) in train.iter().zip(&eval.trees) {
        p.validate(e.premise.len()).unwrap();
        h.validate(e.hypothesis.len()).unwrap();
    }
}
