use proptest::prelude::*;
use rand::seq::SliceRandom;
use soft_diamond::data::{make_synthetic_split, ChannelStats, Split};
use soft_diamond::netcore::{mlp, LayerSpec, Mode, Model, Tensor};
use soft_diamond::prior_table::DerivTable;
use soft_diamond::rng;
use soft_diamond::trainer::{
    evaluate, grid_means, run_experiment_grid, train, write_grid_csv, GridSpec, LrSchedule, PriorGradient, PriorKind,
    TableSpec, TrainError,
};
use soft_diamond::{LabeledDataset, QuadratureConfig, StableParams, TrainConfig};

fn sas(alpha: f64, gamma: f64) -> StableParams {
    StableParams::symmetric(alpha, gamma, 0.0).unwrap()
}

/// One sample, one class: the likelihood gradient is identically zero, so
/// only the prior moves the single weight.
fn scalar_problem(theta0: f64) -> (Model, LabeledDataset) {
    let mut m = Model::new(&[1], &[LayerSpec::Dense { units: 1 }, LayerSpec::Softmax]).unwrap();
    m.params_mut()[0].value.data_mut()[0] = theta0;
    let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    let stats = ChannelStats { mean: vec![0.0], std: vec![1.0] };
    (m, LabeledDataset::new(x, vec![0], 1, Split::Train, stats).unwrap())
}

fn scalar_config(epochs: usize, schedule: LrSchedule) -> TrainConfig {
    TrainConfig { epochs, batch_size: 1, lr_schedule: schedule, ..TrainConfig::default() }
}

fn small_data() -> (LabeledDataset, LabeledDataset) {
    make_synthetic_split(160, 80, 4, &[2, 4, 4], 1.0, 11).unwrap()
}

fn small_model(seed: u64) -> Model {
    let mut m = Model::new(&[2, 4, 4], &mlp(4, 12)).unwrap();
    m.init_xavier_uniform(seed);
    m
}

#[test]
fn ten_steps_follow_the_momentum_recursion() {
    let table = DerivTable::build(sas(1.0, 1.0), 0.8, 400, &QuadratureConfig::default()).unwrap();
    let schedule = LrSchedule::new(vec![(0.0, 0.1), (0.5, 0.3), (1.0, 0.02)]).unwrap();
    let cfg = TrainConfig { prior_scale_c: 0.7, momentum: 0.9, dampening: 0.3, ..scalar_config(10, schedule.clone()) };
    let (mut model, data) = scalar_problem(0.55);
    let report = train(&mut model, &data, None, &PriorGradient::Table(table.clone()), &cfg).unwrap();

    let (m, tau, c) = (0.9, 0.3, 0.7);
    let mut theta = 0.55f64;
    let mut beta = 0.0f64;
    let mut first = None;
    for t in 0..10u32 {
        let lr = schedule.rate_at(t as f64 / 10.0);
        let g = c * table.derivative(theta);
        beta = if t == 0 { g } else { m * beta + (1.0 - tau) * g };
        theta += lr * beta;
        if t == 0 {
            first = Some(theta);
        }
    }
    assert_eq!(first.unwrap(), 0.55 + 0.1 * 0.7 * table.derivative(0.55));
    assert_eq!(model.params()[0].value.data()[0], theta);
    assert_eq!(report.lr_trace.len(), 10);
    // The bias has no prior and no likelihood gradient.
    assert_eq!(model.params()[1].value.data()[0], 0.0);
}

#[test]
fn cauchy_first_step_example() {
    let table = DerivTable::build(sas(1.0, 1.0), 0.8, 400, &QuadratureConfig::default()).unwrap();
    let cfg = TrainConfig { prior_scale_c: 1.0, ..scalar_config(1, LrSchedule::constant(0.1).unwrap()) };
    let (mut model, data) = scalar_problem(0.5);
    train(&mut model, &data, None, &PriorGradient::Table(table), &cfg).unwrap();
    let theta1 = model.params()[0].value.data()[0];
    assert!((theta1 - 0.42).abs() < 1e-6, "{theta1}");
}

#[test]
fn laplace_prior_moves_by_constant_steps() {
    let cfg = TrainConfig { prior_scale_c: 0.5, momentum: 1.0, ..scalar_config(3, LrSchedule::constant(0.1).unwrap()) };
    let (mut model, data) = scalar_problem(2.0);
    train(&mut model, &data, None, &PriorGradient::Laplace { gamma: 0.5 }, &cfg).unwrap();
    // g = −1 each step; β = 1, 2, 3 (in units of −1).
    let theta = model.params()[0].value.data()[0];
    assert!((theta - (2.0 - 0.1 * (1.0 + 2.0 + 3.0))).abs() < 1e-15);
}

/// Plain heavy-ball training written out directly, with the prior term
/// supplied as a closure.
fn reference_train(model: &mut Model, data: &LabeledDataset, cfg: &TrainConfig, prior: impl Fn(f64) -> f64) {
    let n = data.len();
    let k = data.classes();
    let total = (n.div_ceil(cfg.batch_size) * cfg.epochs) as f64;
    let mask = model.prior_mask();
    let mut buffers: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.seed, "shuffle", epoch as u64));
        for idx in order.chunks(cfg.batch_size) {
            let lr = cfg.lr_schedule.rate_at(t as f64 / total);
            let (x, labels) = data.batch(idx);
            let targets = Tensor::one_hot(&labels, k);
            let fwd = model.forward(&x, Mode::Train, None).unwrap();
            let mut grads = model.backward(&fwd, &targets).unwrap().params;
            model.update_running_stats(&fwd);
            if cfg.prior_scale_c > 0.0 {
                for (pi, g) in grads.iter_mut().enumerate() {
                    if mask[pi] {
                        let w = model.params()[pi].value.data().to_vec();
                        for (gi, th) in g.data_mut().iter_mut().zip(w) {
                            *gi += cfg.prior_scale_c * prior(th);
                        }
                    }
                }
            }
            for ((p, g), b) in model.params_mut().iter_mut().zip(&grads).zip(&mut buffers) {
                for ((th, gi), bi) in p.value.data_mut().iter_mut().zip(g.data()).zip(b.iter_mut()) {
                    *bi = if t == 0 { *gi } else { cfg.momentum * *bi + (1.0 - cfg.dampening) * gi };
                    *th += lr * *bi;
                }
            }
            t += 1;
        }
    }
}

#[test]
fn zero_prior_scale_matches_plain_training_bitwise() {
    let (tr, te) = small_data();
    let cfg = TrainConfig { epochs: 3, batch_size: 32, seed: 4, ..TrainConfig::default() };
    let table = DerivTable::build(sas(0.5, 1.0), 0.8, 400, &QuadratureConfig::default()).unwrap();

    let mut with_table = small_model(1);
    let r1 = train(&mut with_table, &tr, Some(&te), &PriorGradient::Table(table), &cfg).unwrap();
    let mut without = small_model(1);
    let r2 = train(&mut without, &tr, Some(&te), &PriorGradient::None, &cfg).unwrap();
    let mut reference = small_model(1);
    reference_train(&mut reference, &tr, &cfg, |_| 0.0);

    assert_eq!(with_table, without);
    assert_eq!(without, reference);
    assert_eq!(r1.epochs, r2.epochs);
    assert_eq!(r1.final_weights, r2.final_weights);
}

#[test]
fn gaussian_table_run_equals_quantised_closed_form_run() {
    let (tr, te) = small_data();
    let cfg = TrainConfig { epochs: 2, batch_size: 16, prior_scale_c: 0.05, seed: 9, ..TrainConfig::default() };
    let gamma = 0.8;
    let (eps, n) = (0.8, 400i64);
    let table = DerivTable::from_fn(sas(2.0, gamma), eps, n as usize, |th| -th / (2.0 * gamma * gamma)).unwrap();
    let closed = |th: f64| {
        let delta = eps / n as f64;
        let key = ((th / delta).floor()).clamp(-n as f64, n as f64);
        -(key * delta) / (2.0 * gamma * gamma)
    };
    let mut a = small_model(2);
    let report = train(&mut a, &tr, Some(&te), &PriorGradient::Table(table), &cfg).unwrap();
    let mut b = small_model(2);
    reference_train(&mut b, &tr, &cfg, closed);
    assert_eq!(a, b);
    let acc = evaluate(&b, &te).unwrap().accuracy;
    assert!((report.final_test_accuracy().unwrap() - acc).abs() <= 1e-12);
}

#[test]
fn learning_rate_trace_is_the_interpolated_schedule() {
    let (tr, _) = small_data();
    let knots = vec![(0.0, 0.05), (0.3, 0.1), (1.0, 0.001)];
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 32,
        lr_schedule: LrSchedule::new(knots.clone()).unwrap(),
        ..TrainConfig::default()
    };
    let mut m = small_model(0);
    let report = train(&mut m, &tr, None, &PriorGradient::None, &cfg).unwrap();
    let total = 20.0;
    assert_eq!(report.lr_trace.len(), 20);
    for (t, &lr) in report.lr_trace.iter().enumerate() {
        let f = t as f64 / total;
        let i = if f < 0.3 { 1 } else { 2 };
        let ((f0, r0), (f1, r1)) = (knots[i - 1], knots[i]);
        assert_eq!(lr, r0 + (r1 - r0) * (f - f0) / (f1 - f0), "step {t}");
    }
    assert_eq!(report.lr_trace[0], 0.05);
    assert_eq!(report.lr_trace[6], 0.1);
}

#[test]
fn single_cell_grid_equals_direct_training() {
    let (tr, te) = small_data();
    let base = TrainConfig { epochs: 2, batch_size: 32, ..TrainConfig::default() };
    let spec = GridSpec { alphas: vec![1.5], gammas: vec![1.0], cs: vec![1e-3], seeds: vec![7], ..GridSpec::default() };
    let tables = TableSpec::default();
    let rows = run_experiment_grid(&base, &spec, &tables, &tr, &te, &|s| Ok(small_model(s)));
    assert_eq!(rows.len(), 1);

    let table = DerivTable::build(sas(1.5, 1.0), tables.epsilon, tables.n_grid, &tables.quadrature).unwrap();
    let mut m = small_model(7);
    let cfg = TrainConfig { prior_scale_c: 1e-3, seed: 7, ..base };
    let prior = PriorGradient::Table(table);
    let report = train(&mut m, &tr, Some(&te), &prior, &cfg).unwrap();
    let row = &rows[0];
    assert_eq!(row.prior, PriorKind::Stable { alpha: 1.5 });
    assert_eq!(row.test_accuracy, report.final_test_accuracy().unwrap());
    assert_eq!(row.train_accuracy, report.epochs.last().unwrap().train_accuracy);
    assert_eq!(row.table_checksum, prior.checksum());
    assert_eq!(row.sparsity, soft_diamond::analysis::sparsity(&m, 1e-3).fraction);
}

#[test]
fn grid_reports_cells_and_means_and_isolates_failures() {
    let (tr, te) = small_data();
    let base = TrainConfig { epochs: 1, batch_size: 32, ..TrainConfig::default() };
    let spec = GridSpec {
        alphas: vec![1.0],
        gammas: vec![1.0],
        cs: vec![1e-3, 1e300],
        seeds: vec![0, 1],
        laplace: true,
        baseline: true,
    };
    let rows = run_experiment_grid(&base, &spec, &TableSpec::default(), &tr, &te, &|s| Ok(small_model(s)));
    // 2 baseline + (sas + laplace) × 2 c × 2 seeds
    assert_eq!(rows.len(), 10);
    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    assert_eq!(failed.len(), 4);
    assert!(failed.iter().all(|r| r.c == 1e300));
    assert!(rows.iter().filter(|r| r.error.is_none()).all(|r| r.test_accuracy.is_finite()));
    let means = grid_means(&rows);
    assert_eq!(means.len(), 5);
    let mut buf = Vec::new();
    write_grid_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 + 5);
    assert_eq!(text.lines().filter(|l| l.contains(",mean,")).count(), 5);
}

#[test]
fn non_finite_gradient_aborts_with_location() {
    let (tr, _) = small_data();
    let cfg = TrainConfig { epochs: 1, prior_scale_c: 1e300, ..TrainConfig::default() };
    let mut m = small_model(0);
    let err = train(&mut m, &tr, None, &PriorGradient::Laplace { gamma: 1e-300 }, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteGradient { epoch: 0, step: 0, .. }), "{err}");
}

#[test]
fn positive_scale_without_prior_is_rejected() {
    let (tr, _) = small_data();
    let cfg = TrainConfig { prior_scale_c: 0.1, ..TrainConfig::default() };
    let mut m = small_model(0);
    assert!(matches!(train(&mut m, &tr, None, &PriorGradient::None, &cfg), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn evaluation_examples() {
    let (_, te) = make_synthetic_split(40, 80, 4, &[1, 2, 2], 1.0, 3).unwrap();
    // Zero weights give uniform outputs; ties go to class 0.
    let flat = Model::new(&[1, 2, 2], &[LayerSpec::Flatten, LayerSpec::Dense { units: 4 }, LayerSpec::Softmax]).unwrap();
    let e = evaluate(&flat, &te).unwrap();
    assert!((e.accuracy - 0.25).abs() < 1e-12);
    assert!((e.mean_log_likelihood + 4f64.ln()).abs() < 1e-12);
    assert_eq!(e, evaluate(&flat, &te).unwrap());

    // Near one-hot outputs on one-hot inputs.
    let stats = ChannelStats { mean: vec![0.0; 3], std: vec![1.0; 3] };
    let x = Tensor::new(vec![3, 3, 1, 1], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let data = LabeledDataset::new(x, vec![0, 1, 2], 3, Split::Test, stats).unwrap();
    let mut sharp = Model::new(&[3, 1, 1], &[LayerSpec::Flatten, LayerSpec::Dense { units: 3 }, LayerSpec::Softmax]).unwrap();
    let w = sharp.params_mut()[0].value.data_mut();
    for i in 0..3 {
        w[i * 3 + i] = 1000.0;
    }
    let e = evaluate(&sharp, &data).unwrap();
    assert_eq!(e.accuracy, 1.0);
    assert_eq!(e.mean_log_likelihood, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prior_pulls_every_weight_toward_zero(
        alpha in prop::sample::select(vec![0.5, 1.0, 1.5, 2.0]),
        gamma in 0.3f64..3.0,
        c in 1e-4f64..1.0,
        theta0 in prop_oneof![-0.8f64..-1e-9, 0.0021f64..0.8, 0.9f64..5.0],
    ) {
        let table = DerivTable::build(sas(alpha, gamma), 0.8, 400, &QuadratureConfig::default()).unwrap();
        let cfg = TrainConfig { prior_scale_c: c, ..scalar_config(1, LrSchedule::constant(0.01).unwrap()) };
        let (mut model, data) = scalar_problem(theta0);
        train(&mut model, &data, None, &PriorGradient::Table(table), &cfg).unwrap();
        let moved = model.params()[0].value.data()[0] - theta0;
        prop_assert!(moved != 0.0);
        prop_assert_eq!(moved.signum(), -theta0.signum());
    }
}
