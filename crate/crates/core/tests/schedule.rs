use rand::Rng;
use tstitch_core::rng::stream_rng;
use tstitch_core::{perturb, score_from_denoiser, Denoiser, GmmParams, LatentState, NoiseSchedule, ScheduleKind};

#[test]
fn ladders_are_strictly_increasing_for_every_kind() {
    for steps in [10, 50, 100, 250] {
        for s in [
            NoiseSchedule::karras(steps, 0.002, 80.0, 7.0).unwrap(),
            NoiseSchedule::vp_linear(steps, 0.002, 80.0).unwrap(),
        ] {
            let l = s.levels();
            assert_eq!(l[0], 0.0);
            assert_eq!(l[steps], 80.0);
            assert!(l.windows(2).all(|w| w[0] < w[1]), "{:?} T={steps}", s.kind);
        }
    }
    assert_eq!(NoiseSchedule::default().kind, ScheduleKind::KarrasPower);
}

#[test]
fn oracle_score_matches_analytic_gaussian_score() {
    let (mu, s2) = (0.7, 1.8);
    let oracle = Denoiser::gmm_oracle("o", GmmParams::single(vec![mu], s2).unwrap()).unwrap();
    let mut rng = stream_rng(11, &[0]);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-6.0..6.0);
        let sigma = (rng.random_range(-4.0f64..4.0)).exp();
        let state = LatentState::new(vec![x], vec![1, 1], sigma).unwrap();
        let d = oracle.denoise(&[x], sigma, None).unwrap();
        let score = score_from_denoiser(&d, &state).unwrap()[0];
        let analytic = -(x - mu) / (s2 + sigma * sigma);
        assert!((score - analytic).abs() <= 1e-10, "x={x} sigma={sigma}: {score} vs {analytic}");
    }
}

#[test]
fn score_example_agrees_with_numerical_log_density_derivative() {
    let oracle = Denoiser::gmm_oracle("o", GmmParams::single(vec![0.0], 1.0).unwrap()).unwrap();
    let state = LatentState::new(vec![2.0], vec![1, 1], 1.0).unwrap();
    let score = score_from_denoiser(&oracle.denoise(&[2.0], 1.0, None).unwrap(), &state).unwrap()[0];
    assert!((score + 1.0).abs() < 1e-12);
    // marginal N(0, 2)
    let log_p = |x: f64| -x * x / 4.0;
    let h = 1e-5;
    let numeric = (log_p(2.0 + h) - log_p(2.0 - h)) / (2.0 * h);
    assert!((score - numeric).abs() < 1e-8);
}

#[test]
fn perturbation_average_converges_to_clean_point() {
    let x0 = LatentState::clean(vec![1.5, -0.5, 3.0], &[3]).unwrap();
    let sigma = 2.0;
    let n = 100_000;
    let mut rng = stream_rng(12, &[0]);
    let mut sum = [0.0; 3];
    for _ in 0..n {
        let x = perturb(&x0, sigma, &mut rng).unwrap();
        for (s, v) in sum.iter_mut().zip(x.data()) {
            *s += v;
        }
    }
    let band = 4.0 * sigma / (n as f64).sqrt();
    for (s, want) in sum.iter().zip(x0.data()) {
        assert!((s / n as f64 - want).abs() <= band);
    }
}
