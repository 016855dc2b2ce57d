use std::path::Path;

use serde_json::json;
use tstitch_core::allocator::LookupTable;
use tstitch_core::denoiser::checkpoint;
use tstitch_core::experiment::{
    cmd_allocate, cmd_analyze, cmd_finetune_interval, cmd_sweep, cmd_train, interval_bounds, AnalyzeMode,
    AnalyzeOptions, ExperimentConfig, OutputLayout, SweepOptions,
};
use tstitch_core::{Error, NoiseSchedule, StitchSchedule};

fn toy(granularity: usize, steps: usize, chains: usize, seeds: &[u64], small_level: f64) -> ExperimentConfig {
    let v = json!({
        "schema_version": 1,
        "dataset": {"kind": "gmm", "ring": {"components": 8, "radius": 4.0, "std": 0.3}, "seed": 0},
        "roster": [
            {"source": "degraded", "id": "small", "of": "large", "level": small_level, "cost": 1.0},
            {"source": "oracle", "id": "large", "cost": 10.0}
        ],
        "sampler": {
            "kind": "ddim",
            "schedule": {"kind": "karras-power", "steps": steps, "sigma_min": 0.002, "sigma_max": 80.0, "rho": 7.0}
        },
        "sweep": {"granularity": granularity, "baselines": true},
        "metrics": ["sliced-wasserstein", "mean-error"],
        "projections": 32,
        "chains": chains,
        "seeds": seeds,
        "analysis": {"chains": 8}
    });
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn sweep_output_does_not_depend_on_workers_or_interruption() {
    let cfg = toy(4, 20, 200, &[0, 1], 0.5);
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let layouts: Vec<OutputLayout> = dirs.iter().map(|d| OutputLayout::new(d.path())).collect();

    let one = cmd_sweep(&cfg, &layouts[0], &SweepOptions { max_rows: None, workers: Some(1) }).unwrap();
    let three = cmd_sweep(&cfg, &layouts[1], &SweepOptions { max_rows: None, workers: Some(3) }).unwrap();
    assert!(one.complete && three.complete);

    let partial = cmd_sweep(&cfg, &layouts[2], &SweepOptions { max_rows: Some(2), workers: Some(1) }).unwrap();
    assert_eq!(partial.computed, 2);
    assert!(!partial.complete);
    assert!(!layouts[2].tables().join("frontier.csv").exists());
    let resumed = cmd_sweep(&cfg, &layouts[2], &SweepOptions::default()).unwrap();
    assert!(resumed.complete);
    assert_eq!(resumed.computed, one.rows.len() + one.baselines.len() - 2);

    for file in ["tables/lookup.csv", "tables/baselines.csv", "tables/frontier.csv", "reports/sweep_seeds.csv"] {
        let reference = read(&layouts[0].root.join(file));
        assert_eq!(reference, read(&layouts[1].root.join(file)), "{file} differs across workers");
        assert_eq!(reference, read(&layouts[2].root.join(file)), "{file} differs after resume");
    }
}

#[test]
fn two_member_sweep_has_eleven_rows_and_three_extra_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_sweep(&toy(10, 10, 64, &[0], 0.5), &OutputLayout::new(dir.path()), &SweepOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 11);
    assert_eq!(report.baselines.len(), 3);
    let names: Vec<&str> = report.summary.baselines.iter().map(|b| b.baseline.as_str()).collect();
    assert!(names.contains(&"small-to-large"));
    let table = LookupTable::load(&report.table_path).unwrap();
    assert_eq!(table.rows.len(), 11);
    for row in &table.rows {
        assert_eq!(row.total_cost, table.recompute_cost(row));
    }
}

#[test]
fn identical_members_give_flat_quality() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_sweep(&toy(5, 20, 300, &[0, 1, 2, 3], 0.0), &OutputLayout::new(dir.path()), &SweepOptions::default()).unwrap();
    let reference = report.rows.last().unwrap();
    for r in &report.rows {
        let gap = (r.quality.unwrap() - reference.quality.unwrap()).abs();
        let se = r.quality_se.unwrap().max(reference.quality_se.unwrap());
        assert!(gap <= 2.0 * se, "{}: gap {gap} se {se}", r.label);
    }
}

#[test]
fn interval_bounds_follow_the_partition() {
    let sched: StitchSchedule = "S:0.5,B:0.3,XL:0.2".parse().unwrap();
    let noise = NoiseSchedule::default();
    let b = interval_bounds(&sched, &noise).unwrap();
    assert_eq!((b[0].start, b[0].end), (0, 50));
    assert_eq!((b[1].start, b[1].end), (50, 80));
    assert_eq!((b[2].denoiser.as_str(), b[2].start, b[2].end), ("XL", 80, 100));
    assert_eq!(b[2].sigma_lo, noise.sigma_at(1).unwrap());
    assert_eq!(b[2].sigma_hi, noise.sigma_at(20).unwrap());
    assert_eq!(b[0].sigma_hi, noise.sigma_at(100).unwrap());
}

#[test]
fn zero_step_finetune_leaves_every_variant_unchanged() {
    let v = json!({
        "schema_version": 1,
        "dataset": {"kind": "gmm", "ring": {"components": 4, "radius": 2.0, "std": 0.3}, "seed": 0},
        "roster": [
            {"source": "oracle", "id": "small", "cost": 1.0},
            {"source": "train", "id": "large", "cost": 10.0,
             "training": {"steps": 100, "batch": 64, "width": 8, "depth": 1}}
        ],
        "sampler": {"kind": "ddim", "schedule": {"kind": "karras-power", "steps": 10, "sigma_min": 0.002, "sigma_max": 80.0}},
        "chains": 128,
        "projections": 16,
        "seeds": [0, 1],
        "finetune": {"schedule": "small:0.5,large:0.5", "steps": 0}
    });
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let layout = OutputLayout::new(dir.path());
    cmd_train(&cfg, &layout).unwrap();
    let report = cmd_finetune_interval(&cfg, &layout, None).unwrap();
    assert_eq!(report.finetuned, vec!["large".to_string()]);
    let pre = report.qualities("pretrained");
    assert_eq!(pre, report.qualities("ft-all"));
    assert_eq!(pre, report.qualities("ft-interval"));

    let base = checkpoint::encode(&checkpoint::load(&layout.checkpoint("large")).unwrap().0, None).unwrap();
    for variant in ["ft-all", "ft-interval"] {
        for seed in [0, 1] {
            let (d, _) = checkpoint::load(&layout.checkpoint(&format!("large-{variant}-s{seed}"))).unwrap();
            assert_eq!(checkpoint::encode(&d, None).unwrap(), base);
        }
    }
}

#[test]
fn self_similarity_is_one_at_every_step() {
    let mut cfg = toy(2, 15, 64, &[0], 0.5);
    cfg.analysis.pairs = Some(vec![("large".into(), "large".into())]);
    let dir = tempfile::tempdir().unwrap();
    let layout = OutputLayout::new(dir.path());
    let opts = AnalyzeOptions {
        mode: AnalyzeMode::Similarity,
        ..AnalyzeOptions::default()
    };
    let report = cmd_analyze(&cfg, &layout, &opts).unwrap();
    let run = &report.similarity[0];
    let profile = run.profile.as_ref().unwrap();
    assert_eq!(profile.per_step.len(), 15);
    assert!(profile.per_step.iter().all(|s| (s.similarity - 1.0).abs() < 1e-12));
    let text = std::fs::read_to_string(layout.root.join(&run.path)).unwrap();
    assert_eq!(text.lines().count(), 15 + 1);
}

#[test]
fn spectrum_on_point_data_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let opts = AnalyzeOptions {
        mode: AnalyzeMode::Spectrum,
        ..AnalyzeOptions::default()
    };
    let err = cmd_analyze(&toy(2, 10, 64, &[0], 0.5), &OutputLayout::new(dir.path()), &opts).unwrap_err();
    assert!(matches!(err, Error::UnsupportedData(_)), "{err}");
}

#[test]
fn allocation_on_a_measured_table_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_sweep(&toy(10, 10, 128, &[0, 1], 0.5), &OutputLayout::new(dir.path()), &SweepOptions::default()).unwrap();
    let table = LookupTable::load(&report.table_path).unwrap();
    for budget in [10.0, 15.0, 37.5, 55.0, 90.0, 100.0, 1e6] {
        let got = cmd_allocate(&report.table_path, budget).unwrap();
        let best = table
            .rows
            .iter()
            .filter(|r| r.total_cost <= budget)
            .min_by(|a, b| {
                a.quality
                    .unwrap()
                    .total_cmp(&b.quality.unwrap())
                    .then(a.total_cost.total_cmp(&b.total_cost))
            })
            .unwrap();
        assert_eq!(got.chosen.unwrap().index, best.index, "budget {budget}");
    }
    let err = cmd_allocate(&report.table_path, 5.0).unwrap_err();
    assert!(matches!(err, Error::NoFeasibleSchedule { .. }));
}
