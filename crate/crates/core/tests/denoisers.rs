use tstitch_core::denoiser::{checkpoint, finetune_denoiser, train_denoiser, LearningRate};
use tstitch_core::rng::{standard_normal_vec, stream_rng};
use tstitch_core::{degrade_oracle, DegradeMode, Denoiser, GmmParams, TrainingConfig};

struct Batch {
    clean: Vec<f64>,
    noisy: Vec<f64>,
}

fn noisy_batch(gmm: &GmmParams, n: usize, sigma: f64, seed: u64) -> Batch {
    let mut rng = stream_rng(seed, &[1]);
    let (clean, _) = gmm.sample(n, &mut rng);
    let eps = standard_normal_vec(&mut rng, clean.len());
    let noisy = clean.iter().zip(&eps).map(|(x, e)| x + sigma * e).collect();
    Batch { clean, noisy }
}

fn mse(pred: &[f64], clean: &[f64], dim: usize) -> f64 {
    let se: f64 = pred.iter().zip(clean).map(|(p, c)| (p - c).powi(2)).sum();
    se / (clean.len() / dim) as f64
}

#[test]
fn perturbing_the_oracle_output_never_lowers_mse() {
    let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
    let oracle = Denoiser::gmm_oracle("o", gmm.clone()).unwrap();
    let dir = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
    for (i, sigma) in [0.05, 0.5, 1.0, 3.0, 20.0].into_iter().enumerate() {
        let b = noisy_batch(&gmm, 400_000, sigma, i as u64);
        let d = oracle.denoise(&b.noisy, sigma, None).unwrap();
        let base = mse(&d, &b.clean, 2);
        for eps in [0.01, 0.1] {
            let shifted: Vec<f64> = d.iter().enumerate().map(|(k, v)| v + eps * dir[k % 2]).collect();
            let worse = mse(&shifted, &b.clean, 2);
            assert!(worse > base, "sigma={sigma} eps={eps}: {worse} <= {base}");
        }
    }
}

#[test]
fn degraded_copy_is_never_better_than_the_oracle() {
    let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
    let oracle = Denoiser::gmm_oracle("o", gmm.clone()).unwrap();
    for mode in [DegradeMode::BlurResponsibilities, DegradeMode::BiasNoise] {
        let weak = degrade_oracle(&oracle, 0.5, mode).unwrap();
        assert_eq!(weak.cost_per_eval(), oracle.cost_per_eval() / 10.0);
        for (i, sigma) in [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 80.0].into_iter().enumerate() {
            let b = noisy_batch(&gmm, 10_000, sigma, 100 + i as u64);
            let good = mse(&oracle.denoise(&b.noisy, sigma, None).unwrap(), &b.clean, 2);
            let bad = mse(&weak.denoise(&b.noisy, sigma, None).unwrap(), &b.clean, 2);
            assert!(bad >= good, "{mode:?} sigma={sigma}: {bad} < {good}");
        }
    }
}

#[test]
fn level_zero_degradation_matches_the_oracle() {
    let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
    let oracle = Denoiser::gmm_oracle("o", gmm.clone()).unwrap();
    let same = degrade_oracle(&oracle, 0.0, DegradeMode::BlurResponsibilities).unwrap();
    let b = noisy_batch(&gmm, 500, 0.7, 5);
    let a = oracle.denoise(&b.noisy, 0.7, None).unwrap();
    let c = same.denoise(&b.noisy, 0.7, None).unwrap();
    for (x, y) in a.iter().zip(&c) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn small_config(steps: usize) -> TrainingConfig {
    TrainingConfig {
        steps,
        batch: 128,
        width: 16,
        depth: 2,
        lr: LearningRate {
            base: 2e-3,
            warmup: 50,
            cosine: true,
            final_fraction: 0.1,
        },
        ..TrainingConfig::default()
    }
}

fn mse_over_interval(d: &Denoiser, gmm: &GmmParams, lo: f64, hi: f64) -> f64 {
    let levels = 12;
    (0..levels)
        .map(|k| {
            let sigma = (lo.ln() + (hi / lo).ln() * (k as f64 + 0.5) / levels as f64).exp();
            let b = noisy_batch(gmm, 4000, sigma, 900 + k as u64);
            // weight by 1/sigma^2 + 1 so low-noise levels are not swamped
            mse(&d.denoise(&b.noisy, sigma, None).unwrap(), &b.clean, 2) * (1.0 / (sigma * sigma) + 1.0)
        })
        .sum::<f64>()
        / levels as f64
}

#[test]
fn interval_finetuning_wins_inside_its_interval() {
    let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
    let base = train_denoiser("m", &gmm, &small_config(800), 3).unwrap().denoiser;
    let (lo, hi) = (0.002, 5.0);
    let mut everywhere = small_config(800);
    everywhere.lr.warmup = 0;
    let mut inside = everywhere.clone();
    inside.sigma_range = Some([lo, hi]);
    let all = finetune_denoiser(&base, &gmm, &everywhere, 4).unwrap().denoiser;
    let interval = finetune_denoiser(&base, &gmm, &inside, 4).unwrap().denoiser;
    let e_all = mse_over_interval(&all, &gmm, lo, hi);
    let e_interval = mse_over_interval(&interval, &gmm, lo, hi);
    assert!(e_interval <= e_all, "interval {e_interval} vs all {e_all}");
}

#[test]
fn zero_step_finetune_is_byte_identical() {
    let gmm = GmmParams::ring(4, 2.0, 0.3).unwrap();
    let base = train_denoiser("m", &gmm, &small_config(50), 0).unwrap().denoiser;
    let same = finetune_denoiser(&base, &gmm, &small_config(0), 9).unwrap().denoiser;
    assert_eq!(
        checkpoint::encode(&base, None).unwrap(),
        checkpoint::encode(&same, None).unwrap()
    );
}
