//! Cross-module invariants as property tests.

use proptest::prelude::*;

use gbq::dataset::DatasetId;
use gbq::graybox_model::ModelState;
use gbq::linalg2::{expm_pauli, fidelity, Axis};
use gbq::mc_simulator::{evolve_waveform, NoiseModel, SimulationConfig, Simulator};
use gbq::noise_gen::{generate_noise, PsdShape, PsdSpec};
use gbq::pulse_lib::{discretize, Waveform};
use gbq::spectroscopy::{cpmg_sequence, filter_oracle};
use gbq::trainer::mse;

fn small_config(noise: NoiseModel, k: usize) -> SimulationConfig {
    SimulationConfig {
        total_time: 1.0,
        m: 256,
        k,
        omega: 10.0,
        noise,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_realizations_are_real_and_finite(stream in any::<u64>(), index in 0u64..1000, z in any::<bool>()) {
        let (axis, shape) = if z { (Axis::Z, PsdShape::DephasingZ) } else { (Axis::X, PsdShape::TransverseX) };
        let spec = PsdSpec::from_shape(axis, &shape, 1.0, 512).unwrap();
        prop_assert_eq!(spec.values.len(), 256);
        prop_assert!(spec.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        let r = generate_noise(&spec, stream, index).unwrap();
        prop_assert_eq!(r.samples.len(), 512);
        prop_assert!(r.samples.iter().all(|v| v.is_finite()));
        prop_assert!(r.max_imag_residue < 1e-9);
        prop_assert_eq!(generate_noise(&spec, stream, index).unwrap().samples, r.samples);
    }

    #[test]
    fn drawn_sequences_stay_inside_the_feature_box(seed in any::<u64>(), index in 0u64..100, order in 1usize..=7) {
        for id in [DatasetId::CpmgGX28, DatasetId::CpmgSX28, DatasetId::CpmgGXY7] {
            let recipe = id.recipe();
            let orders = vec![order; recipe.axes.len()];
            let seq = recipe.draw(&orders, 1.0, seed, index).unwrap();
            for train in &seq.trains {
                prop_assert!(train.pulses.iter().all(|p| p.tau > 0.0 && p.tau < 1.0 && p.sigma > 0.0));
                prop_assert!(train.pulses.windows(2).all(|w| w[0].tau < w[1].tau));
            }
            let layout = recipe.layout(1.0);
            let features = layout.normalize(&seq);
            prop_assert_eq!(features.len(), recipe.n_max);
            prop_assert!(features.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            // Features alone determine the waveform.
            let wave = discretize(&seq, 1.0, 1024);
            let back = discretize(&layout.denormalize(&features), 1.0, 1024);
            prop_assert!(wave.is_consistent(1024));
            let scale = wave.x.iter().chain(&wave.y).fold(1.0f64, |a, v| a.max(v.abs()));
            prop_assert!(wave.max_abs_diff(&back) <= 1e-12 * scale);
        }
    }

    #[test]
    fn noisy_evolution_is_unitary(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_config(NoiseModel::none(), 1);
        let mut draw = || (0..cfg.m).map(|_| rng.gen_range(-100.0..100.0)).collect::<Vec<f64>>();
        let wave = Waveform { x: draw(), y: draw(), z: draw() };
        let noise = [draw(), draw(), draw()];
        let u = evolve_waveform(&cfg, &wave, [&noise[0], &noise[1], &noise[2]]);
        prop_assert!(u.is_unitary(1e-12));
    }

    #[test]
    fn expectations_are_bounded(seed in any::<u64>(), order in 1usize..=8) {
        let cfg = small_config(
            NoiseModel { x: Some(PsdShape::TransverseX), z: Some(PsdShape::DephasingZ), ..Default::default() },
            16,
        );
        let wave = discretize(&cpmg_sequence(order, 1.0), 1.0, cfg.m);
        let r = Simulator::new(cfg).unwrap().simulate(&wave, seed).unwrap();
        // Every realization is an exact rotation, so the mean cannot leave [−1, 1].
        prop_assert!(r.0.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn dephasing_exponent_is_non_negative(order in 1usize..=50, level in 0.0f64..5.0) {
        let spec = PsdSpec::from_shape(Axis::Z, &PsdShape::Flat { level }, 1.0, 1024).unwrap();
        let wave = discretize(&cpmg_sequence(order, 1.0), 1.0, 1024);
        let chi = filter_oracle(&spec, &wave).unwrap();
        prop_assert!(chi.is_finite() && chi >= 0.0);
    }

    #[test]
    fn model_mu_is_confined(seed in any::<u64>(), order in 1usize..=28) {
        let recipe = DatasetId::CpmgGX28.recipe();
        let model = ModelState::new(recipe.layout(1.0), 10.0, 64, seed);
        prop_assert_eq!(model.params.len(), model.arch.param_count());
        let seq = recipe.nominal(&[order], 1.0).unwrap();
        let heads = model.blackbox_forward(&model.layout.normalize(&seq)).unwrap();
        prop_assert!(heads.iter().all(|p| (0.0..=1.0).contains(&p.mu)));
    }

    #[test]
    fn gate_fidelity_is_a_probability(a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0), phase in -3.0f64..3.0) {
        let u = expm_pauli(phase, a, 1.0);
        let v = expm_pauli(0.0, b, 1.0);
        let f = fidelity(&u, &v);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((fidelity(&u, &u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_is_non_negative_and_zero_only_on_agreement(xs in prop::collection::vec(-1.0f64..1.0, 18), shift in -1.0f64..1.0) {
        prop_assert_eq!(mse(&xs, &xs).unwrap(), 0.0);
        let ys: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let e = mse(&xs, &ys).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - shift * shift).abs() < 1e-12);
    }
}
