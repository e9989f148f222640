use cfisac_core::baselines::WmmseOptions;
use cfisac_core::dataset::{read_dataset, write_dataset};
use cfisac_core::experiments::{
    compare_baselines, scale_aps, sweep_beta, ExperimentReport, Method, ScalingOptions,
    TrainedModel,
};
use cfisac_core::gnn::{load_checkpoint, GnnHyperparams};
use cfisac_core::system::generate_samples;
use cfisac_core::training::{evaluate_network, train, TrainConfig};
use cfisac_core::SystemConfig;
use proptest::prelude::*;

fn scenario() -> (SystemConfig, GnnHyperparams, TrainConfig) {
    let cfg = SystemConfig {
        ap_count: 3,
        ue_count: 2,
        tx_antennas: 4,
        ap_power: 1.0 / 3.0,
        sensing_weight: 1.0,
        ..SystemConfig::default()
    };
    let hyper = GnnHyperparams {
        depth: 2,
        hidden: 24,
        slope: 0.1,
        tx_antennas: 4,
    };
    let tc = TrainConfig {
        batch_size: 64,
        epochs: 3,
        train_samples: 256,
        test_samples: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    (cfg, hyper, tc)
}

#[test]
fn dataset_to_checkpoint_to_reports() {
    let (cfg, hyper, tc) = scenario();
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.bin");
    let test_path = dir.path().join("test.bin");
    write_dataset(
        &train_path,
        &cfg,
        &generate_samples(&cfg, 1, tc.train_samples).unwrap(),
    )
    .unwrap();
    write_dataset(
        &test_path,
        &cfg,
        &generate_samples(&cfg, 2, tc.test_samples).unwrap(),
    )
    .unwrap();
    let (header, train_set) = read_dataset(&train_path).unwrap();
    header.check_against(&cfg).unwrap();
    let (_, test_set) = read_dataset(&test_path).unwrap();

    let out = train(&cfg, &tc, hyper, &train_set, &test_set, |_| {}).unwrap();
    let (best_hash, _) = out.save(dir.path(), &cfg).unwrap();
    let ckpt = load_checkpoint(dir.path().join("best.ckpt")).unwrap();
    assert_eq!(ckpt.system, Some(cfg));
    assert_eq!(ckpt.params, out.best);
    let best = evaluate_network(&ckpt.params, &cfg, &test_set).unwrap();
    let top = out
        .history
        .iter()
        .map(|r| r.test_objective)
        .fold(f64::MIN, f64::max);
    assert!((best.mean_objective - top).abs() <= 1e-9 * top.abs());

    let model = TrainedModel {
        params: ckpt.params.clone(),
        sha256: Some(best_hash.clone()),
    };
    let sweep = sweep_beta(&cfg, &[1.0], &test_set, &WmmseOptions::default(), |_| {
        Ok(model.clone())
    })
    .unwrap();
    assert_eq!(sweep.rows[0].mean_objective, best.mean_objective);
    assert_eq!(sweep.meta.checkpoints[0].sha256, best_hash);

    let table = compare_baselines(&cfg, &test_set, &WmmseOptions::default()).unwrap();
    assert_eq!(&sweep.rows[1..], &table.rows[..]);

    let scaled = scale_aps(
        &cfg,
        &model,
        &[2, 3, 4],
        &ScalingOptions {
            test_samples: 8,
            with_wmmse: false,
            ..ScalingOptions::default()
        },
    )
    .unwrap();
    assert_eq!(scaled.rows.len(), 3);
    assert!(scaled.rows.iter().all(|r| r.method == Method::Gnn));

    sweep.write(dir.path(), "sweep").unwrap();
    let back =
        ExperimentReport::from_csv(&std::fs::read(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(back, sweep.rows);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Each row's objective column agrees with its own rate and log columns.
    #[test]
    fn report_rows_are_self_consistent(seed in any::<u64>(), beta in 0.0f64..10.0, m in 1usize..5) {
        let (base, _, _) = scenario();
        let cfg = base.with_ap_count(m).with_sensing_weight(beta);
        let samples = generate_samples(&cfg, seed, 6).unwrap();
        let report = compare_baselines(&cfg, &samples, &WmmseOptions::default()).unwrap();
        for r in &report.rows {
            prop_assert!(r.objective_residual() <= 1e-9 * r.mean_objective.abs().max(1.0));
            prop_assert_eq!(r.ap_count, m);
            prop_assert_eq!(r.n_samples, 6);
        }
        let bytes = report.to_csv().unwrap();
        prop_assert_eq!(ExperimentReport::from_csv(&bytes).unwrap(), report.rows);
    }
}
