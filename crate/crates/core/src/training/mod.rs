//! Unsupervised training of the graph network on the negated joint
//! objective with Adam and cosine learning-rate annealing.

mod objective;
mod optim;
mod train;

pub use objective::{
    loss, loss_and_gradients, loss_on_tape, objective_on_tape, ObjectiveVars, CHUNK,
};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use train::{
    evaluate_network, initial_parameters, read_history, train, write_history, HistoryRow,
    TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape, Var};
    use crate::config::SystemConfig;
    use crate::error::Error;
    use crate::gnn::{
        forward, normalize_on_tape, normalize_to_beams, GnnHyperparams, GnnParameters, GraphBatch,
        ParamVars,
    };
    use crate::metrics::evaluate;
    use crate::system::{generate_samples, ChannelSample};

    fn tiny() -> (SystemConfig, GnnHyperparams) {
        let cfg = SystemConfig {
            ap_count: 2,
            ue_count: 1,
            tx_antennas: 2,
            sensing_weight: 1.5,
            ..SystemConfig::default()
        };
        let hyper = GnnHyperparams {
            depth: 2,
            hidden: 8,
            slope: 0.1,
            tx_antennas: 2,
        };
        (cfg, hyper)
    }

    fn refs(samples: &[ChannelSample]) -> Vec<&ChannelSample> {
        samples.iter().collect()
    }

    #[test]
    fn loss_without_sensing_is_negative_sum_rate() {
        let cfg = SystemConfig::default();
        let hyper = GnnHyperparams {
            hidden: 16,
            depth: 2,
            ..GnnHyperparams::default()
        };
        let params = GnnParameters::<f64>::init(hyper, 4).unwrap();
        let samples = generate_samples(&cfg, 6, 1).unwrap();
        let l = loss(&params, &refs(&samples), &cfg).unwrap();
        let beams = crate::gnn::predict(&params, &cfg, &samples).unwrap();
        let report = evaluate(&cfg, &samples[0], &beams[0]).unwrap();
        assert!(
            (l + report.sum_rate()).abs() < 1e-10,
            "{l} vs {}",
            report.sum_rate()
        );
    }

    #[test]
    fn duplicated_sample_has_the_same_loss() {
        let (cfg, hyper) = tiny();
        let params = GnnParameters::<f64>::init(hyper, 4).unwrap();
        let s = generate_samples(&cfg, 6, 1).unwrap();
        let one = loss(&params, &[&s[0]], &cfg).unwrap();
        let two = loss(&params, &[&s[0], &s[0]], &cfg).unwrap();
        assert!((one - two).abs() <= 1e-14 * one.abs());
    }

    #[test]
    fn tape_objective_matches_metrics() {
        let cfg = SystemConfig {
            sensing_weight: 2.0,
            ue_count: 3,
            ..SystemConfig::default()
        };
        let hyper = GnnHyperparams {
            hidden: 16,
            depth: 2,
            ..GnnHyperparams::default()
        };
        let params = GnnParameters::<f64>::init(hyper, 8).unwrap();
        let samples = generate_samples(&cfg, 9, 10).unwrap();
        let batch = GraphBatch::new(&refs(&samples), 8).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let raw = forward(&mut tape, &vars, &hyper, &batch).unwrap();
        let f = normalize_on_tape(&mut tape, raw, cfg.ap_power).unwrap();
        let terms = objective_on_tape(&mut tape, f, &batch, &cfg).unwrap();
        let beams = normalize_to_beams(tape.value(raw), cfg.ap_power).unwrap();
        for (i, (s, b)) in samples.iter().zip(&beams).enumerate() {
            let r = evaluate(&cfg, s, b).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
            assert!(close(tape.value(terms.sum_rate).data()[i], r.sum_rate()));
            assert!(close(
                tape.value(terms.sensing_snr).data()[i],
                r.sensing_snr
            ));
            assert!(close(tape.value(terms.objective).data()[i], r.objective));
        }
    }

    #[test]
    fn chunked_gradients_match_one_tape() {
        let (cfg, hyper) = tiny();
        let params = GnnParameters::<f64>::init(hyper, 2).unwrap();
        let samples = generate_samples(&cfg, 3, CHUNK + 7).unwrap();
        let (l, g) = loss_and_gradients(&params, &refs(&samples), &cfg, true).unwrap();
        let batch = GraphBatch::new(&refs(&samples), 2).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let (loss_var, _) =
            loss_on_tape(&mut tape, &vars, &params, &batch, &cfg, samples.len()).unwrap();
        assert!((tape.value(loss_var).data()[0] - l).abs() < 1e-12);
        let whole = tape.backward(loss_var).unwrap();
        for (a, b) in g.iter().zip(whole.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    /// Full loss (forward, normalization, rates, sensing term) against
    /// central differences in 64-bit.
    #[test]
    fn training_loss_gradient_matches_finite_differences() {
        let (cfg, hyper) = tiny();
        let samples = generate_samples(&cfg, 21, 3).unwrap();
        let batch = GraphBatch::<f64>::new(&refs(&samples), 2).unwrap();
        let params = GnnParameters::<f64>::init(hyper, 5).unwrap();
        let loss_fn = |tape: &mut Tape<f64>, vars: &[Var]| {
            let pv = ParamVars::from_vars(&hyper, vars)?;
            let (l, _) = loss_on_tape(tape, &pv, &params, &batch, &cfg, samples.len())?;
            Ok(l)
        };
        let err = finite_difference_check(loss_fn, params.tensors(), 1e-6, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    fn smoke_setup() -> (
        SystemConfig,
        GnnHyperparams,
        TrainConfig,
        Vec<ChannelSample>,
        Vec<ChannelSample>,
    ) {
        let cfg = SystemConfig {
            ap_count: 2,
            ue_count: 2,
            tx_antennas: 4,
            ap_power: 0.5,
            ..SystemConfig::default()
        };
        let hyper = GnnHyperparams {
            depth: 2,
            hidden: 32,
            slope: 0.1,
            tx_antennas: 4,
        };
        let tc = TrainConfig {
            batch_size: 64,
            epochs: 2,
            train_samples: 512,
            test_samples: 128,
            seed: 17,
            ..TrainConfig::default()
        };
        let train_set = generate_samples(&cfg, 100, tc.train_samples).unwrap();
        let test_set = generate_samples(&cfg, 200, tc.test_samples).unwrap();
        (cfg, hyper, tc, train_set, test_set)
    }

    #[test]
    fn short_run_improves_on_untrained_network() {
        let (cfg, hyper, tc, train_set, test_set) = smoke_setup();
        let before = evaluate_network(
            &initial_parameters(hyper, tc.seed).unwrap(),
            &cfg,
            &test_set,
        )
        .unwrap()
        .mean_objective;
        let out = train(&cfg, &tc, hyper, &train_set, &test_set, |_| {}).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[1].step, 16);
        let after = evaluate_network(&out.last, &cfg, &test_set)
            .unwrap()
            .mean_objective;
        assert!(after > before, "{after} <= {before}");
        assert!(out.history.windows(2).all(|w| w[1].lr <= w[0].lr));
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, hyper, tc, train_set, test_set) = smoke_setup();
        let tc = TrainConfig { epochs: 1, ..tc };
        let a = train(&cfg, &tc, hyper, &train_set, &test_set, |_| {}).unwrap();
        let b = train(&cfg, &tc, hyper, &train_set, &test_set, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.last, b.last);

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), &cfg).unwrap();
        assert_eq!(
            read_history(dir.path().join("history.csv")).unwrap(),
            a.history
        );
        let back = crate::gnn::load_checkpoint(dir.path().join("best.ckpt")).unwrap();
        let x = evaluate_network(&back.params, &cfg, &test_set)
            .unwrap()
            .mean_objective;
        let y = evaluate_network(&a.best, &cfg, &test_set)
            .unwrap()
            .mean_objective;
        assert!((x - y).abs() <= 1e-6 * y.abs());
    }

    #[test]
    fn configuration_is_validated() {
        let (cfg, hyper, tc, train_set, test_set) = smoke_setup();
        let bad = TrainConfig {
            batch_size: 1000,
            ..tc
        };
        assert!(matches!(
            train(&cfg, &bad, hyper, &train_set, &test_set, |_| {}),
            Err(Error::InvalidConfig {
                field: "batch_size",
                ..
            })
        ));
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..tc
        };
        assert!(bad.validate().is_err());
        let wide = GnnHyperparams {
            tx_antennas: 8,
            ..hyper
        };
        assert!(train(&cfg, &tc, wide, &train_set, &test_set, |_| {}).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let (cfg, hyper, tc, train_set, test_set) = smoke_setup();
        let noisy = SystemConfig {
            ue_noise_var: f64::NAN,
            ..cfg
        };
        // validation rejects a NaN noise variance before training starts
        assert!(train(&noisy, &tc, hyper, &train_set, &test_set, |_| {}).is_err());
        let huge = TrainConfig {
            learning_rate: 1e30,
            ..tc
        };
        match train(&cfg, &huge, hyper, &train_set, &test_set, |_| {}) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }
}
