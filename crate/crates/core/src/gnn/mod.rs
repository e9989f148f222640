//! Heterogeneous edge graph network mapping channels to beams.
//!
//! Vertices are APs, users and the sensing target; edges join every AP to
//! every user and to the target. Edge features start as stacked channel and
//! steering vectors, and every layer updates vertices from summed incident
//! edges before updating edges from their two endpoints. A per-edge-type
//! linear head yields one raw beam per edge, which is scaled to meet each
//! AP's power budget.

mod checkpoint;
mod model;
mod params;
mod topology;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, sha256_hex, Checkpoint,
};
pub use model::{
    check_compatible, forward, normalize_on_tape, normalize_to_beams, predict, raw_outputs,
    NORM_EPS,
};
pub use params::{
    manifest, GnnHyperparams, GnnParameters, LayerVars, Linear, ParamSlot, ParamVars,
};
pub use topology::{init_edge_features, EdgeFeatures, GraphBatch, GraphTopology};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::config::SystemConfig;
    use crate::system::{generate_samples, BeamformingSolution, ChannelSample};
    use num_complex::Complex64;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_hyper(n_t: usize) -> GnnHyperparams {
        GnnHyperparams {
            depth: 2,
            hidden: 16,
            slope: 0.1,
            tx_antennas: n_t,
        }
    }

    fn beams_close(a: &BeamformingSolution, b: &BeamformingSolution, tol: f64) -> bool {
        let scale = a
            .as_flat()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(1e-30);
        a.as_flat()
            .iter()
            .zip(b.as_flat())
            .all(|(x, y)| (x - y).norm() <= tol * scale)
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let cfg = SystemConfig::default();
        let params = GnnParameters::<f64>::zeros(small_hyper(8)).unwrap();
        let samples = generate_samples(&cfg, 2, 3).unwrap();
        let refs: Vec<&ChannelSample> = samples.iter().collect();
        let raw = raw_outputs(&params, &refs).unwrap();
        assert_eq!(raw.shape(), &[3, 5, 3, 16]);
        assert!(raw.data().iter().all(|x| *x == 0.0));
        for sol in normalize_to_beams(&raw, cfg.ap_power).unwrap() {
            assert!(sol.as_flat().iter().all(|z| z.re == 0.0 && z.im == 0.0));
        }
    }

    /// Weights follow a fixed arithmetic pattern; expected outputs were
    /// computed independently with a plain concatenation-based forward pass.
    #[test]
    fn hand_set_forward_matches_fixture() {
        let hyper = GnnHyperparams {
            depth: 1,
            hidden: 3,
            slope: 0.1,
            tx_antennas: 2,
        };
        let tensors = manifest(&hyper)
            .iter()
            .enumerate()
            .map(|(t, slot)| {
                let data = (0..slot.len())
                    .map(|i| (((i * 7 + t * 5) % 13) as f64 - 6.0) / 8.0)
                    .collect();
                Tensor::new(&slot.shape, data).unwrap()
            })
            .collect();
        let params = GnnParameters::from_tensors(hyper, tensors).unwrap();
        let c = Complex64::new;
        let h = vec![c(0.5, 0.25), c(-0.75, 1.0), c(1.0, -0.5), c(0.25, 0.5)];
        let sample = ChannelSample::new(2, 1, 2, h, vec![0.3, 1.1], vec![1.0; 4]).unwrap();
        let raw = raw_outputs(&params, &[&sample]).unwrap();
        let expected = [
            0.175977513307632,
            -1.3133038303011149,
            -0.5404123077244047,
            -1.200506939699657,
            0.582123767146326,
            -0.5187333632674054,
            1.0988800935869,
            0.27298034632397794,
            -0.5292870994291545,
            -0.9982995802246553,
            -0.9437824214901831,
            0.3663274999079281,
            1.89243820145589,
            -1.1113897011899487,
            2.209020660694038,
            -0.6768363256223255,
        ];
        assert_eq!(raw.shape(), &[1, 2, 2, 4]);
        for (got, want) in raw.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn equal_streams_split_power() {
        let raw = Tensor::new(
            &[1, 1, 2, 4],
            vec![1.0, -2.0, 0.5, 3.0, 1.0, -2.0, 0.5, 3.0],
        )
        .unwrap();
        let sol = &normalize_to_beams(&raw, 0.2).unwrap()[0];
        for s in 0..2 {
            let p: f64 = sol.beam(0, s).iter().map(|z| z.norm_sqr()).sum();
            assert!((p - 0.1).abs() < 1e-13);
        }
        let want = Complex64::new(-2.0, 3.0) * (0.1f64 / 14.25).sqrt();
        assert!((sol.beam(0, 0)[1] - want).norm() < 1e-13);
    }

    #[test]
    fn zero_ap_output_is_harmless() {
        let mut data = vec![0.0f32; 2 * 3 * 4];
        data[12..].iter_mut().for_each(|x| *x = 0.7);
        let raw = Tensor::new(&[1, 2, 3, 4], data).unwrap();
        let sol = &normalize_to_beams(&raw, 0.5).unwrap()[0];
        assert!(sol
            .as_flat()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_eq!(sol.per_ap_power(0).unwrap(), 0.0);
        assert!((sol.per_ap_power(1).unwrap() - 0.5).abs() < 1e-6);

        let mut tape = Tape::<f32>::new();
        let x = tape.param(raw);
        let f = normalize_on_tape(&mut tape, x, 0.5).unwrap();
        let loss = tape.sum(f);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(0).unwrap().data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn power_equality_over_random_draws() {
        let cfg = SystemConfig::default();
        let samples = generate_samples(&cfg, 31, 100).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let p32 = GnnParameters::<f32>::init(small_hyper(8), i as u64).unwrap();
            let raw = raw_outputs(&p32, &[s]).unwrap();
            let sol = &normalize_to_beams(&raw, cfg.ap_power).unwrap()[0];
            let sol64 = &normalize_to_beams(&raw.cast::<f64>(), cfg.ap_power).unwrap()[0];
            for m in 0..cfg.ap_count {
                let p = sol.per_ap_power(m).unwrap();
                assert!((p / cfg.ap_power - 1.0).abs() < 1e-6, "f32 power {p}");
                let p = sol64.per_ap_power(m).unwrap();
                assert!((p / cfg.ap_power - 1.0).abs() < 1e-10, "f64 power {p}");
            }
        }
    }

    #[test]
    fn tape_normalization_matches_direct() {
        let cfg = SystemConfig::default();
        let samples = generate_samples(&cfg, 3, 4).unwrap();
        let refs: Vec<&ChannelSample> = samples.iter().collect();
        let params = GnnParameters::<f64>::init(small_hyper(8), 5).unwrap();
        let batch = GraphBatch::new(&refs, 8).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let raw = forward(&mut tape, &vars, params.hyper(), &batch).unwrap();
        let f = normalize_on_tape(&mut tape, raw, cfg.ap_power).unwrap();
        let direct = normalize_to_beams(tape.value(raw), cfg.ap_power).unwrap();
        let n_t = cfg.tx_antennas;
        let values = tape.value(f).data();
        for (i, sol) in direct.iter().enumerate() {
            for (j, z) in sol.as_flat().iter().enumerate() {
                let (stream, k) = (j / n_t, j % n_t);
                let base = (i * sol.ap_count() * sol.streams() + stream) * 2 * n_t;
                let got = Complex64::new(values[base + k], values[base + n_t + k]);
                assert!((got - z).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn batching_does_not_change_outputs() {
        let cfg = SystemConfig::default();
        let samples = generate_samples(&cfg, 8, 5).unwrap();
        let params = GnnParameters::<f64>::init(small_hyper(8), 1).unwrap();
        let all = predict(&params, &cfg, &samples).unwrap();
        for (s, sol) in samples.iter().zip(&all) {
            let single = &predict(&params, &cfg, std::slice::from_ref(s)).unwrap()[0];
            assert!(beams_close(sol, single, 1e-12));
        }
    }

    #[test]
    fn ue_permutation_equivariance() {
        let cfg = SystemConfig {
            ue_count: 4,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples = generate_samples(&cfg, 12, 100).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let params = GnnParameters::<f64>::init(small_hyper(8), 1000 + i as u64).unwrap();
            let mut perm: Vec<usize> = (0..cfg.ue_count).collect();
            perm.shuffle(&mut rng);
            let permuted = s.permute_ues(&perm);
            let a = &predict(&params, &cfg, std::slice::from_ref(s)).unwrap()[0];
            let b = &predict(&params, &cfg, &[permuted]).unwrap()[0];
            let scale = a.as_flat().iter().map(|z| z.norm()).fold(0.0, f64::max);
            for m in 0..cfg.ap_count {
                for (new_u, &old_u) in perm.iter().enumerate() {
                    let (x, y) = (a.beam(m, old_u), b.beam(m, new_u));
                    assert!(x.iter().zip(y).all(|(p, q)| (p - q).norm() <= 1e-6 * scale));
                }
                let (x, y) = (a.beam(m, cfg.ue_count), b.beam(m, cfg.ue_count));
                assert!(x.iter().zip(y).all(|(p, q)| (p - q).norm() <= 1e-6 * scale));
            }
        }
    }

    #[test]
    fn ap_permutation_equivariance() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let samples = generate_samples(&cfg, 13, 100).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let params = GnnParameters::<f64>::init(small_hyper(8), 2000 + i as u64).unwrap();
            let mut perm: Vec<usize> = (0..cfg.ap_count).collect();
            perm.shuffle(&mut rng);
            let permuted = s.permute_aps(&perm);
            let a = &predict(&params, &cfg, std::slice::from_ref(s)).unwrap()[0];
            let b = &predict(&params, &cfg, &[permuted]).unwrap()[0];
            let scale = a.as_flat().iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (new_m, &old_m) in perm.iter().enumerate() {
                for st in 0..cfg.streams() {
                    let (x, y) = (a.beam(old_m, st), b.beam(new_m, st));
                    assert!(x.iter().zip(y).all(|(p, q)| (p - q).norm() <= 1e-6 * scale));
                }
            }
        }
    }

    #[test]
    fn parameters_transfer_across_sizes() {
        let params = GnnParameters::<f32>::init(small_hyper(8), 3).unwrap();
        for m in [1, 3, 8] {
            for u in [1, 2, 4] {
                let cfg = SystemConfig {
                    ue_count: u,
                    ..SystemConfig::default().with_ap_count(m)
                };
                let samples = generate_samples(&cfg, 1, 2).unwrap();
                let refs: Vec<&ChannelSample> = samples.iter().collect();
                let raw = raw_outputs(&params, &refs).unwrap();
                assert_eq!(raw.shape(), &[2, m, u + 1, 16]);
                let sols = predict(&params, &cfg, &samples).unwrap();
                assert!(sols.iter().all(|s| s.is_feasible(cfg.ap_power, 1e-9)));
            }
        }
    }

    #[test]
    fn incompatible_scenarios_are_rejected() {
        let params = GnnParameters::<f32>::init(small_hyper(8), 3).unwrap();
        let no_target = SystemConfig {
            sensing_streams: 0,
            ..SystemConfig::default()
        };
        let samples = generate_samples(&no_target, 1, 1).unwrap();
        assert!(predict(&params, &no_target, &samples).is_err());
        let narrow = SystemConfig {
            tx_antennas: 4,
            ..SystemConfig::default()
        };
        let samples = generate_samples(&narrow, 1, 1).unwrap();
        assert!(predict(&params, &narrow, &samples).is_err());
    }
}
