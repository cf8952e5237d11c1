use epialign::data::{
    generate_synthetic, generate_synthetic_with_latent, load_dataset, make_splits, write_dataset, SynthSpec,
    DEFAULT_SPLIT_RATIOS,
};
use epialign::experiment::{build_report, SeedRuns, SeedSweepResult, DEFAULT_ALPHA};
use epialign::nn::{init_params, predict};
use epialign::stats::paired_t_test;
use epialign::{entropy, pearson, soft_target, AlignmentSummary, LabelDistribution, TrainConfig};

fn normalized_entropy(p: &[f64]) -> f64 {
    entropy(&LabelDistribution::new(p.to_vec()).unwrap(), true)
}

#[test]
fn latent_entropy_tracks_count_entropy() {
    let spec = SynthSpec {
        num_samples: 1000,
        num_classes: 4,
        annotations_per_sample: 50,
        ambiguity: 0.5,
        ..SynthSpec::default()
    };
    let (ds, latent) = generate_synthetic_with_latent(&spec).unwrap();
    let lat: Vec<f64> = latent.iter().map(|w| normalized_entropy(w)).collect();
    let obs: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| entropy(&soft_target(&s.counts).unwrap(), true))
        .collect();
    let r = pearson(&lat, &obs).unwrap();
    assert!(r > 0.5, "latent vs observed entropy correlation {r}");
}

#[test]
fn untrained_model_entropy_is_uncorrelated_with_annotations() {
    let spec = SynthSpec {
        num_samples: 1000,
        num_classes: 4,
        ambiguity: 0.5,
        ..SynthSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let counts: Vec<Vec<u32>> = ds.samples().iter().map(|s| s.counts.clone()).collect();
    let mut rs = Vec::new();
    for seed in 0..10 {
        let params = init_params(seed, ds.embedding_dim(), 256, ds.num_classes());
        let preds: Vec<LabelDistribution> = ds
            .samples()
            .iter()
            .map(|s| {
                let x: Vec<f64> = s.embedding.iter().map(|&v| f64::from(v)).collect();
                predict(&params, &x).unwrap()
            })
            .collect();
        let summary = AlignmentSummary::from_predictions(&preds, &counts).unwrap();
        rs.push(summary.entropy_correlation.unwrap());
    }
    // Averaged over initializations: a single net sees only a few cluster
    // directions, so one seed's r is a noisy draw around zero.
    let mean_r = rs.iter().sum::<f64>() / rs.len() as f64;
    assert!(mean_r.abs() < 0.2, "mean r over seeds {mean_r}, per seed {rs:?}");
}

#[test]
fn dataset_files_round_trip_bit_exactly() {
    let ds = generate_synthetic(&SynthSpec { num_samples: 57, ..SynthSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.name(), ds.name());
    assert_eq!(back.class_names(), ds.class_names());
    assert_eq!(back.samples(), ds.samples());
    let splits = make_splits(&back, DEFAULT_SPLIT_RATIOS, 4).unwrap();
    let file = splits.to_file(&back);
    let text = serde_json::to_string(&file).unwrap();
    let parsed: epialign::data::SplitFile = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.resolve(&back).unwrap(), splits);
}

fn runs(kl: Vec<f64>) -> SeedRuns {
    let n = kl.len();
    SeedRuns {
        config: TrainConfig::default(),
        seeds: (0..n as u64).collect(),
        accuracy: vec![0.5; n],
        mean_kl: kl,
        entropy_correlation: vec![None; n],
        best_epoch: vec![1; n],
        stopped_epoch: vec![1; n],
        val_loss_curves: vec![vec![]; n],
    }
}

/// Student t density integrated by composite Simpson on [0, |t|]; two-sided
/// tail is 1 - 2 * integral.
fn t_two_sided_oracle(t: f64, dof: u32) -> f64 {
    // Gamma((v+1)/2) / Gamma(v/2) for integer v by direct products.
    let v = f64::from(dof);
    let ratio = if dof % 2 == 0 {
        // Gamma(k + 1/2) / Gamma(k), k = v/2
        let k = dof / 2;
        let mut r = std::f64::consts::PI.sqrt();
        for j in 0..k {
            r *= f64::from(j) + 0.5;
        }
        for j in 1..k {
            r /= f64::from(j);
        }
        r
    } else {
        // Gamma(k + 1) / Gamma(k + 1/2), k = (v-1)/2
        let k = (dof - 1) / 2;
        let mut r = 1.0 / std::f64::consts::PI.sqrt();
        for j in 1..=k {
            r *= f64::from(j) / (f64::from(j) - 0.5);
        }
        r
    };
    let c = ratio / (v * std::f64::consts::PI).sqrt();
    let f = |x: f64| c * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0);
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = f(0.0) + f(t.abs());
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

#[test]
fn componentwise_lower_kl_is_flagged() {
    let hard: Vec<f64> = (0..10).map(|i| 0.60 + 0.02 * f64::from(i)).collect();
    let soft: Vec<f64> = hard
        .iter()
        .enumerate()
        .map(|(i, h)| h - 0.05 - 0.01 * (i % 4) as f64)
        .collect();
    let sweep = SeedSweepResult {
        dataset: "synthetic".into(),
        n_seeds: 10,
        soft: runs(soft.clone()),
        hard: runs(hard.clone()),
    };
    let report = build_report(&[sweep], DEFAULT_ALPHA).unwrap();
    let d = &report.datasets[0];
    assert!(d.kl_significant);
    let test = paired_t_test(&soft, &hard).unwrap();
    let oracle = t_two_sided_oracle(test.t, 9);
    assert!((d.kl_test.p - oracle).abs() < 1e-8, "{} vs {oracle}", d.kl_test.p);
    assert!(oracle < 0.05);
    assert!(d.correlation_delta_pct.is_none());
}

#[test]
fn t_oracle_agrees_on_known_value() {
    let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert!((r.p - t_two_sided_oracle(r.t, 4)).abs() < 1e-9);
    for dof in [1u32, 2, 3, 7, 12] {
        for t in [0.4, 1.3, 2.9] {
            let p = epialign::stats::student_t_two_sided_p(t, f64::from(dof)).unwrap();
            assert!((p - t_two_sided_oracle(t, dof)).abs() < 1e-9, "dof {dof} t {t}");
        }
    }
}
