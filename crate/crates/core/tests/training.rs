mod common;

use assoc_learn::al::{AlNetwork, NetworkPlan};
use assoc_learn::bp::{match_effective_params, BpNetwork, BpPlan};
use assoc_learn::data::{mnist_subset, synth_blobs, synth_xor, BatchIterator, Dataset};
use assoc_learn::linalg::{Matrix, Rng};
use assoc_learn::nn::AdamConfig;
use assoc_learn::train::{
    fit, train_epoch_bp, train_epoch_pipelined, train_epoch_sequential, FitConfig, FitOutcome,
    LrSchedule, Model, PipelineOptions, TrainMode,
};
use assoc_learn::Error;

use common::{all_params, mnist_dir};

fn blobs(seed: u64, d: usize, k: usize, separation: f64) -> (Dataset, Dataset) {
    let mut rng = Rng::with_stream(seed, 0xb10b);
    (
        synth_blobs(240, d, k, separation, &mut rng).unwrap(),
        synth_blobs(120, d, k, separation, &mut rng).unwrap(),
    )
}

fn toy_net(seed: u64, lr: f64) -> AlNetwork {
    AlNetwork::build(
        &NetworkPlan::named("toy").unwrap(),
        &mut Rng::new(seed),
        AdamConfig::with_lr(lr),
    )
    .unwrap()
}

fn quiet_fit(
    model: Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &FitConfig,
) -> assoc_learn::Result<FitOutcome> {
    fit(model, train, test, cfg, &mut |_| Ok(()))
}

#[test]
fn lr_is_halved_after_each_listed_epoch() {
    let s = LrSchedule::standard(1e-4);
    assert_eq!(s.lr_at(80), 1e-4);
    assert_eq!(s.lr_at(81), 5e-5);
    assert!(s.lr_at(81) < s.lr_at(80));
    assert_eq!(s.lr_at(181), 1e-4 / 16.0);
}

#[test]
fn fit_applies_the_schedule_per_epoch() {
    let (train, test) = blobs(1, 6, 3, 4.0);
    let mut cfg = FitConfig::new(TrainMode::AlSequential, 4, 1e-3, 1);
    cfg.batch_size = 32;
    cfg.schedule.drops = vec![2];
    let out = quiet_fit(Model::Al(toy_net(1, 1e-3)), &train, &test, &cfg).unwrap();
    let lrs: Vec<f64> = out.history.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, [1e-3, 1e-3, 1e-3, 5e-4, 5e-4]);
}

#[test]
fn zero_epochs_reports_initial_metrics_and_leaves_the_checkpoint() {
    let (train, test) = blobs(2, 6, 3, 4.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("keep.bin");
    std::fs::write(&path, b"untouched").unwrap();
    let mut cfg = FitConfig::new(TrainMode::AlSequential, 0, 1e-3, 2);
    cfg.checkpoint = Some(path.clone());
    let net = toy_net(2, 1e-3);
    let before = all_params(&net);
    let out = quiet_fit(Model::Al(net), &train, &test, &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].epoch, 0);
    assert_eq!(out.best_epoch, 0);
    assert_eq!(std::fs::read(&path).unwrap(), b"untouched");
    match out.model {
        Model::Al(net) => assert_eq!(all_params(&net), before),
        Model::Bp(_) => unreachable!(),
    }
}

#[test]
fn same_seed_same_history() {
    let (train, test) = blobs(3, 6, 3, 4.0);
    let mut cfg = FitConfig::new(TrainMode::AlSequential, 3, 1e-3, 3);
    cfg.batch_size = 16;
    let a = quiet_fit(Model::Al(toy_net(3, 1e-3)), &train, &test, &cfg).unwrap();
    let b = quiet_fit(Model::Al(toy_net(3, 1e-3)), &train, &test, &cfg).unwrap();
    assert_eq!(a.last().test_accuracy, b.last().test_accuracy);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_loss, y.train_loss);
        assert_eq!(x.components, y.components);
    }
}

#[test]
fn pipelined_fit_matches_sequential_fit() {
    let (train, test) = blobs(4, 6, 3, 4.0);
    let mut seq_cfg = FitConfig::new(TrainMode::AlSequential, 3, 1e-3, 4);
    seq_cfg.batch_size = 8;
    let pipe_cfg = FitConfig {
        mode: TrainMode::AlPipelined,
        ..seq_cfg.clone()
    };
    let seq = quiet_fit(Model::Al(toy_net(4, 1e-3)), &train, &test, &seq_cfg).unwrap();
    let pipe = quiet_fit(Model::Al(toy_net(4, 1e-3)), &train, &test, &pipe_cfg).unwrap();
    match (&seq.model, &pipe.model) {
        (Model::Al(a), Model::Al(b)) => assert_eq!(all_params(a), all_params(b)),
        _ => unreachable!(),
    }
    assert_eq!(pipe.throughput.len(), 3);
    assert!(seq.throughput.is_empty());
}

#[test]
fn mode_must_match_the_model() {
    let (train, test) = blobs(5, 6, 3, 4.0);
    let cfg = FitConfig::new(TrainMode::Bp, 1, 1e-3, 5);
    let err = quiet_fit(Model::Al(toy_net(5, 1e-3)), &train, &test, &cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (train, _) = blobs(6, 6, 3, 4.0);
    let mut net = toy_net(6, 0.0);
    let before = all_params(&net);
    train_epoch_sequential(
        &mut net,
        &train,
        BatchIterator::new(train.len(), 32, &mut Rng::new(1)),
        1,
    )
    .unwrap();
    assert_eq!(all_params(&net), before);
    train_epoch_pipelined(
        &mut net,
        &train,
        BatchIterator::new(train.len(), 32, &mut Rng::new(2)),
        2,
        PipelineOptions::default(),
    )
    .unwrap();
    assert_eq!(all_params(&net), before);

    let plan = match_effective_params(&NetworkPlan::named("toy").unwrap());
    let mut bp = BpNetwork::build(&plan, &mut Rng::new(6), AdamConfig::with_lr(0.0)).unwrap();
    let before: Vec<Matrix> = bp.block().params().into_iter().cloned().collect();
    train_epoch_bp(
        &mut bp,
        &train,
        BatchIterator::new(train.len(), 32, &mut Rng::new(3)),
        1,
    )
    .unwrap();
    let after: Vec<Matrix> = bp.block().params().into_iter().cloned().collect();
    assert_eq!(before, after);
}

#[test]
fn exploding_updates_are_reported_as_divergence() {
    let (train, _) = blobs(7, 6, 3, 4.0);
    let mut net = toy_net(7, 1e300);
    let err = train_epoch_sequential(
        &mut net,
        &train,
        BatchIterator::sequential(train.len(), 32),
        4,
    )
    .unwrap_err();
    match err {
        Error::Divergence {
            epoch,
            batch,
            context,
        } => {
            assert_eq!(epoch, 4);
            assert!(batch > 1);
            assert!(context.contains("component"), "{context}");
        }
        other => panic!("expected divergence, got {other}"),
    }
    assert_eq!(net.num_components(), 3);
}

#[test]
fn single_component_learns_xor() {
    let data = synth_xor();
    let plan = NetworkPlan::named("xor").unwrap();
    let net = AlNetwork::build(&plan, &mut Rng::new(1), AdamConfig::with_lr(1e-2)).unwrap();
    let mut cfg = FitConfig::new(TrainMode::AlSequential, 2000, 1e-2, 1);
    cfg.batch_size = 4;
    let out = quiet_fit(Model::Al(net), &data, &data, &cfg).unwrap();
    assert_eq!(out.last().train_accuracy, 1.0);
}

fn small_bp(loss_plan: BpPlan, seed: u64, lr: f64) -> BpNetwork {
    BpNetwork::build(&loss_plan, &mut Rng::new(seed), AdamConfig::with_lr(lr)).unwrap()
}

#[test]
fn backprop_separates_two_dimensional_blobs() {
    let (train, test) = blobs(8, 2, 2, 10.0);
    let plan = match_effective_params(&NetworkPlan::uniform(2, 2, 1, 8, 8));
    let mut net = small_bp(plan, 8, 1e-3);
    let mut rng = Rng::with_stream(8, 1);
    let mut reached = None;
    for epoch in 1..=50 {
        train_epoch_bp(
            &mut net,
            &train,
            BatchIterator::new(train.len(), 16, &mut rng),
            epoch,
        )
        .unwrap();
        if Model::Bp(net.clone()).accuracy(&train).unwrap() == 1.0 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(
        reached.is_some(),
        "train accuracy below 100% after 50 epochs"
    );
    assert_eq!(Model::Bp(net).accuracy(&test).unwrap(), 1.0);
}

#[test]
fn backprop_first_update_lowers_the_batch_loss() {
    let (train, _) = blobs(9, 6, 3, 4.0);
    let idx: Vec<usize> = (0..32).collect();
    let x = train.x().select_rows(&idx);
    let labels = &train.labels()[..32];
    for seed in 0..5 {
        let mut net = small_bp(
            match_effective_params(&NetworkPlan::named("toy").unwrap()),
            seed,
            1e-4,
        );
        let before = net.train_batch(&x, labels).unwrap();
        assert!(net.loss(&x, labels).unwrap() < before, "seed {seed}");
    }
}

#[test]
fn mnist_subset_smoke_local_losses_fall() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST files not found; skipping");
        return;
    };
    for seed in 1..=3 {
        let (train, test) = mnist_subset(&dir, seed).unwrap();
        let plan = NetworkPlan::named("desk-mlp").unwrap();
        let net = AlNetwork::build(&plan, &mut Rng::new(seed), AdamConfig::with_lr(1e-3)).unwrap();
        let mut cfg = FitConfig::new(TrainMode::AlSequential, 3, 1e-3, seed);
        cfg.batch_size = 32;
        let out = quiet_fit(Model::Al(net), &train, &test, &cfg).unwrap();
        for pair in out.history[1..].windows(2) {
            for (a, b) in pair[0].components.iter().zip(&pair[1].components) {
                assert!(b.mse1.is_finite() && b.mse2.is_finite());
                assert!(
                    b.mse2 < a.mse2,
                    "seed {seed} component {}: {} -> {}",
                    a.component,
                    a.mse2,
                    b.mse2
                );
            }
        }
    }
}
