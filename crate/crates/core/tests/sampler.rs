use tstitch_core::metrics::wasserstein_1d_sorted;
use tstitch_core::rng::{standard_normal_vec, stream, stream_rng};
use tstitch_core::sampler::{sample, SamplerConfig, SamplerKind};
use tstitch_core::{degrade_oracle, DegradeMode, Denoiser, GmmParams, NoiseSchedule, StitchSchedule};

fn unit_gaussian() -> Denoiser {
    Denoiser::gmm_oracle("a", GmmParams::single(vec![0.0], 1.0).unwrap()).unwrap()
}

fn config(kind: SamplerKind, steps: usize) -> SamplerConfig {
    SamplerConfig::new(kind, NoiseSchedule::karras(steps, 0.002, 80.0, 7.0).unwrap())
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn every_step_is_evaluated_exactly_once_per_chain() {
    let a = unit_gaussian();
    let b = a.clone().with_id("b");
    let roster = [a, b];
    for kind in [SamplerKind::Ddpm, SamplerKind::Ddim, SamplerKind::DpmSolverPp2m] {
        for steps in [2, 7, 50] {
            let sched = StitchSchedule::new(vec![("a".into(), 0.3), ("b".into(), 0.7)]).unwrap();
            let out = sample(&sched, &roster, &config(kind, steps).recording(true), &[1], 10, 0).unwrap();
            assert_eq!(out.ledger.total_evals(), 10 * steps as u64);
            assert!(out.trajectories.iter().all(|t| t.entries.len() == steps));
        }
    }
}

#[test]
fn trajectories_follow_the_noise_ladder() {
    let roster = [unit_gaussian()];
    let cfg = config(SamplerKind::Ddim, 40).recording(true);
    let out = sample(&StitchSchedule::single("a").unwrap(), &roster, &cfg, &[1], 3, 1).unwrap();
    for tr in &out.trajectories {
        for e in &tr.entries {
            assert_eq!(e.t, 40 - e.step);
            assert_eq!(e.sigma, cfg.schedule.sigma_at(e.t).unwrap());
        }
    }
    assert_eq!(out.samples.sigma(), 0.0);
}

#[test]
fn chains_do_not_depend_on_batching_or_threads() {
    let roster = [Denoiser::gmm_oracle("a", GmmParams::ring(4, 2.0, 0.3).unwrap()).unwrap()];
    let sched = StitchSchedule::single("a").unwrap();
    let cfg = config(SamplerKind::Ddpm, 30);
    let full = sample(&sched, &roster, &cfg, &[2], 300, 5).unwrap();
    let prefix = sample(&sched, &roster, &cfg, &[2], 70, 5).unwrap();
    assert_eq!(&full.samples.data()[..140], prefix.samples.data());
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let again = pool.install(|| sample(&sched, &roster, &cfg, &[2], 300, 5).unwrap());
        assert_eq!(full.samples.data(), again.samples.data());
    }
}

#[test]
fn ancestral_sampler_recovers_unit_variance() {
    let out = sample(
        &StitchSchedule::single("a").unwrap(),
        &[unit_gaussian()],
        &config(SamplerKind::Ddpm, 250),
        &[1],
        10_000,
        2,
    )
    .unwrap();
    let v = variance(out.samples.data());
    assert!((0.9..=1.1).contains(&v), "variance {v}");
}

#[test]
fn deterministic_sampler_recovers_unit_variance() {
    let out = sample(
        &StitchSchedule::single("a").unwrap(),
        &[unit_gaussian()],
        &config(SamplerKind::Ddim, 100),
        &[1],
        10_000,
        3,
    )
    .unwrap();
    let v = variance(out.samples.data());
    assert!((0.93..=1.07).contains(&v), "variance {v}");
}

#[test]
fn second_order_solver_beats_ddim_at_ten_steps() {
    // Both samplers map the starting noise linearly onto the target here, so
    // the exact target draw for chain i is its own starting noise divided by sigma_max.
    let n = 10_000;
    let mut target: Vec<f64> = (0..n)
        .map(|i| standard_normal_vec(&mut stream_rng(4, &[stream::INIT, i as u64]), 1)[0])
        .collect();
    target.sort_by(f64::total_cmp);
    let w1 = |kind| {
        let out = sample(&StitchSchedule::single("a").unwrap(), &[unit_gaussian()], &config(kind, 10), &[1], n, 4).unwrap();
        let mut s = out.samples.data().to_vec();
        s.sort_by(f64::total_cmp);
        wasserstein_1d_sorted(&s, &target)
    };
    let (dpm, ddim) = (w1(SamplerKind::DpmSolverPp2m), w1(SamplerKind::Ddim));
    assert!(dpm <= ddim, "dpm {dpm} ddim {ddim}");
}

#[test]
fn stitching_a_model_with_itself_changes_nothing() {
    let oracle = Denoiser::gmm_oracle("a", GmmParams::ring(8, 4.0, 0.3).unwrap()).unwrap();
    let weak = degrade_oracle(&oracle, 0.5, DegradeMode::BlurResponsibilities).unwrap().with_id("a");
    let twin = weak.clone().with_id("twin");
    let roster = [weak, twin];
    for kind in [SamplerKind::Ddpm, SamplerKind::Ddim, SamplerKind::DpmSolverPp2m] {
        let cfg = config(kind, 25);
        let alone = sample(&StitchSchedule::single("a").unwrap(), &roster, &cfg, &[2], 100, 6).unwrap();
        let split = StitchSchedule::new(vec![("a".into(), 0.4), ("twin".into(), 0.6)]).unwrap();
        let stitched = sample(&split, &roster, &cfg, &[2], 100, 6).unwrap();
        assert_eq!(alone.samples.data(), stitched.samples.data(), "{kind:?}");
    }
}

#[test]
fn unknown_denoiser_is_rejected() {
    let err = sample(
        &StitchSchedule::single("nobody").unwrap(),
        &[unit_gaussian()],
        &config(SamplerKind::Ddim, 5),
        &[1],
        1,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, tstitch_core::Error::UnknownDenoiser(_)));
}
