use ragat::classifier::{self, Model, ModelConfig, ModelParams, Sample};
use ragat::config::RunConfig;
use ragat::error::Error;
use ragat::numerics::ParamSet;
use ragat::seed;
use ragat::training::{self, fit, fit_with_monitor, AdamState, Monitor, TrainConfig, ValScore};
use ragat::{corpus, pipeline};

fn small_run() -> RunConfig {
    RunConfig {
        max_len: 16,
        embed_dim: 8,
        filters_per_kernel: 4,
        gru_hidden: 6,
        heads: 2,
        gcn_hidden: 4,
        batch_size: 8,
        ..RunConfig::default()
    }
}

fn setup(cfg: &RunConfig, n: usize) -> (Model, Vec<Sample>, Vec<Sample>) {
    let train_raw = corpus::generate(n, 5).unwrap();
    let val_raw = corpus::generate(n / 2 + 1, 6).unwrap();
    let vocab = pipeline::vocabulary(&train_raw, cfg).unwrap();
    let train = pipeline::samples(&train_raw, &vocab, cfg).unwrap();
    let val = pipeline::samples(&val_raw, &vocab, cfg).unwrap();
    let model = Model::new(ModelConfig::from_run(cfg, vocab.len()), cfg.seed).unwrap();
    (model, train, val)
}

/// Replays a fixed score sequence and remembers the parameters it saw.
struct Scripted {
    scores: Vec<f64>,
    seen: Vec<ModelParams>,
}

impl Monitor for Scripted {
    fn score(&mut self, model: &Model, _val: &[Sample]) -> ragat::Result<ValScore> {
        let f1 = self.scores[self.seen.len().min(self.scores.len() - 1)];
        self.seen.push(model.params.clone());
        Ok(ValScore {
            accuracy: f1,
            macro_f1: f1,
        })
    }
}

fn scripted_fit(scores: &[f64], epochs: usize, patience: usize) -> (training::FitResult, Scripted) {
    let run = small_run();
    let (model, train, val) = setup(&run, 6);
    let cfg = TrainConfig {
        epochs,
        patience,
        ..TrainConfig::from_run(&run)
    };
    let mut m = Scripted {
        scores: scores.to_vec(),
        seen: Vec::new(),
    };
    let r = fit_with_monitor(model, &train, &val, &cfg, &mut m).unwrap();
    (r, m)
}

fn without_grads(mut p: ModelParams) -> ModelParams {
    p.entries_mut().into_iter().for_each(|(_, t)| t.clear_grad());
    p
}

#[test]
fn constant_metric_with_patience_two_stops_after_three_evaluations() {
    let (r, m) = scripted_fit(&[0.5], 10, 2);
    assert_eq!(m.seen.len(), 3);
    assert_eq!(r.log.records.len(), 3);
    assert_eq!(r.best_epoch, 1);
    assert!(r.stopped_early);
    assert_eq!(r.model.params, without_grads(m.seen[0].clone()));
    assert_ne!(m.seen[0], m.seen[2]);
}

#[test]
fn constant_metric_with_patience_one_stops_after_epoch_two() {
    let (r, _) = scripted_fit(&[0.5], 10, 1);
    assert_eq!(r.log.records.len(), 2);
    assert_eq!(r.best_epoch, 1);
}

#[test]
fn improving_metric_runs_every_epoch_and_keeps_the_last() {
    let (r, m) = scripted_fit(&[0.1, 0.2, 0.3], 3, 3);
    assert_eq!(r.log.records.len(), 3);
    assert_eq!(r.best_epoch, 3);
    assert!(!r.stopped_early);
    assert_eq!(r.model.params, without_grads(m.seen[2].clone()));
}

#[test]
fn best_checkpoint_is_the_earliest_maximum() {
    let (r, m) = scripted_fit(&[0.5, 0.8, 0.8, 0.6, 0.8], 5, 5);
    assert_eq!(r.log.records.len(), 5);
    assert_eq!(r.best_epoch, 2);
    assert_eq!(r.model.params, without_grads(m.seen[1].clone()));
    // an improvement below the threshold does not count
    let (r, _) = scripted_fit(&[0.5, 0.5 + 5e-7, 0.5], 3, 5);
    assert_eq!(r.best_epoch, 1);
}

#[test]
fn full_runs_are_bit_identical() {
    let run = small_run();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::from_run(&run)
    };
    let go = |parallel: bool| {
        let (model, train, val) = setup(&run, 12);
        fit(model, &train, &val, &TrainConfig { parallel, ..cfg.clone() }).unwrap()
    };
    let a = go(false);
    let b = go(false);
    let c = go(true);
    assert_eq!(a.log.to_tsv(), b.log.to_tsv());
    assert_eq!(a.model, b.model);
    for (x, y) in a.log.records.iter().zip(&c.log.records) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
    }
    assert_eq!(a.model, c.model);
}

#[test]
fn single_example_epoch_loss_is_its_forward_loss() {
    let run = small_run();
    let (mut model, train, _) = setup(&run, 1);
    let one = &train[..1];
    let cfg = TrainConfig::from_run(&run);
    let mut rng = seed::rng(cfg.seed, &[0xD0, 0, 0, 0]);
    let expect = classifier::forward(&model, &one[0], true, &mut rng).unwrap().loss.unwrap();
    let mut state = AdamState::for_model(&model.params);
    let stats = training::train_epoch(&mut model, &mut state, one, &cfg, 0).unwrap();
    assert_eq!(stats.mean_loss, expect);
    assert_eq!(stats.lr, cfg.lr);
}

#[test]
fn pad_rows_stay_zero_and_params_finite() {
    let run = RunConfig {
        shared_embedding: false,
        ..small_run()
    };
    let (mut model, train, _) = setup(&run, 10);
    let cfg = TrainConfig::from_run(&run);
    let mut state = AdamState::for_model(&model.params);
    for epoch in 0..3 {
        training::train_epoch(&mut model, &mut state, &train, &cfg, epoch).unwrap();
        for table in ModelParams::EMBEDDING_TABLES {
            let t = model.params.get(table).unwrap();
            assert!(t.row(0).iter().all(|&v| v == 0.0), "{table}");
        }
        assert!(model.params.is_finite());
    }
}

#[test]
fn non_finite_loss_names_the_batch() {
    let run = small_run();
    let (mut model, train, _) = setup(&run, 4);
    model.params.head.b.data_mut()[0] = f64::NAN;
    let mut state = AdamState::for_model(&model.params);
    let err = training::train_epoch(&mut model, &mut state, &train, &TrainConfig::from_run(&run), 0).unwrap_err();
    match err {
        Error::Numeric(msg) => assert!(msg.contains("batch 0"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_sets_are_rejected() {
    let run = small_run();
    let (model, train, _) = setup(&run, 2);
    let cfg = TrainConfig::from_run(&run);
    assert!(matches!(fit(model.clone(), &[], &train, &cfg), Err(Error::EmptyInput(_))));
    assert!(matches!(fit(model, &train, &[], &cfg), Err(Error::EmptyInput(_))));
}
