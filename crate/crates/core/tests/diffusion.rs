use proptest::prelude::*;
use trifield::diffusion::{
    cross_plane_consistency, ddpm_sample, epsilon_loss_with, independent_planes_expectation, make_schedule, q_sample,
    read_denoiser, toy_training_set, train_denoiser, write_denoiser, Denoiser, DenoiserConfig, DiffusionTrainConfig,
    LossMode,
};
use trifield::numerics::{rng, Graph};
use trifield::scenes::make_toy_triplane_dataset;
use trifield::triplane::{PlaneId, Triplane};

fn normal_triplane(res: usize, ch: usize, r: &mut rng::Rng) -> Triplane {
    Triplane::from_data(res, ch, rng::normal_tensor(&[3 * res * res * ch], 1.0, r).into_data()).unwrap()
}

/// Rescales to exactly zero mean and unit (population) variance.
fn standardized(mut tri: Triplane) -> Triplane {
    let n = tri.data().len() as f64;
    let mu = tri.data().iter().sum::<f64>() / n;
    let sd = (tri.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    tri.data_mut().iter_mut().for_each(|v| *v = (*v - mu) / sd);
    tri
}

#[test]
fn forward_noising_preserves_unit_variance() {
    let sched = make_schedule(100, 1e-3, 0.2).unwrap();
    let mut r = rng::seeded(2024);
    let x0 = standardized(normal_triplane(4, 2, &mut r));
    let draws = 100_000 / x0.data().len() + 1;
    for t in [1, 10, 50, 100] {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let eps = normal_triplane(4, 2, &mut r);
            for v in q_sample(&x0, t, &eps, &sched).unwrap().data() {
                s += v;
                s2 += v * v;
                n += 1.0;
            }
        }
        let var = s2 / n - (s / n).powi(2);
        assert!((var - 1.0).abs() < 0.02, "t = {t}: variance {var}");
    }
}

#[test]
fn zero_predictor_loss_is_noise_energy_on_average() {
    let sched = make_schedule(100, 1e-3, 0.2).unwrap();
    let mut r = rng::seeded(7);
    let x0 = normal_triplane(4, 2, &mut r);
    let trials = 2000;
    let (mut single, mut all) = (0.0, 0.0);
    for i in 0..trials {
        let eps = normal_triplane(4, 2, &mut r);
        let t = 1 + i % 100;
        let loss = |mode| {
            let mut g = Graph::new();
            let l = epsilon_loss_with(
                &mut g,
                |g, x| Ok(g.scale(x, 0.0)),
                &x0,
                t,
                &eps,
                &sched,
                mode,
            )
            .unwrap();
            g.value(l).item()
        };
        single += loss(LossMode::Plane(PlaneId::Yz));
        all += loss(LossMode::AllPlanes);
    }
    // each plane mean has 32 squared unit normals: sd sqrt(2/32) per trial
    let (single, all) = (single / trials as f64, all / trials as f64);
    let se = (2.0 / 32.0 / trials as f64).sqrt();
    assert!((single - 1.0).abs() < 4.0 * se, "{single}");
    assert!((all - 3.0).abs() < 4.0 * 3f64.sqrt() * se, "{all}");
}

#[test]
fn random_planes_meet_the_independent_baseline() {
    for res in [4, 8] {
        let mut r = rng::seeded(res as u64);
        let trials = 4000;
        let scores: Vec<f64> = (0..trials)
            .map(|_| {
                let tri = Triplane::from_data(res, 1, rng::uniform_tensor(&[3 * res * res], 0.0, 1.0, &mut r).into_data());
                cross_plane_consistency(&tri.unwrap())
            })
            .collect();
        let mean = scores.iter().sum::<f64>() / trials as f64;
        let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / trials as f64).sqrt();
        let want = independent_planes_expectation(res);
        assert!((mean - want).abs() < 4.0 * sd / (trials as f64).sqrt(), "res {res}: {mean} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn toy_boxes_are_always_consistent(seed in any::<u64>(), res in 6usize..12, ch in 1usize..4) {
        for ex in make_toy_triplane_dataset(4, res, ch, seed).unwrap() {
            prop_assert_eq!(cross_plane_consistency(&ex.x0), 0.0);
            prop_assert!(ex.x0.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

fn small_config() -> DenoiserConfig {
    DenoiserConfig { res: 4, channels: 2, width: 8, d_k: 8, text_dim: 8, time_dim: 8, cross_line_index: 2, ..DenoiserConfig::default() }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let mut model = Denoiser::new(DenoiserConfig { adapters: true, ..small_config() }, 3).unwrap();
    model.store.round_to_f32();
    let mut buf = Vec::new();
    write_denoiser(&mut buf, &model).unwrap();
    let back = read_denoiser(&mut buf.as_slice()).unwrap();
    let mut r = rng::seeded(4);
    let x = normal_triplane(4, 2, &mut r).to_tensor().reshape(&[48, 2]).unwrap();
    let text = model.embed(&[1, 2]).unwrap();
    let a = model.predict(&x, &[17], std::slice::from_ref(&text)).unwrap();
    let b = back.predict(&x, &[17], &[text]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_example_is_memorized() {
    let sched = make_schedule(100, 1e-3, 0.2).unwrap();
    let examples = make_toy_triplane_dataset(1, 8, 2, 5).unwrap();
    let mut model = Denoiser::new(DenoiserConfig::default(), 5).unwrap();
    let data = toy_training_set(&model, &examples).unwrap();
    let cfg = DiffusionTrainConfig { steps: 2000, seed: 5, ..DiffusionTrainConfig::default() };
    let report = train_denoiser(&mut model, &data, &sched, &cfg).unwrap();
    let window = 50;
    let first_below = report
        .losses
        .windows(window)
        .position(|w| w.iter().sum::<f64>() / (window as f64) < 0.1);
    assert!(first_below.is_some(), "tail loss {:?}", &report.losses[report.losses.len() - window..]);

    let texts = vec![data[0].1.clone(); 8];
    let samples = ddpm_sample(&model, &texts, &sched, &mut rng::seeded(6), Some((0.0, 1.0))).unwrap();
    let x0 = &data[0].0;
    for s in &samples {
        let mad = s.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x0.data().len() as f64;
        assert!(mad < 0.15, "mean absolute deviation {mad}");
    }
}
